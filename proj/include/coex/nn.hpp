#pragma once

// Dense rectifier network used as the Q-function approximator, with the
// squared-error gradient, an Adam optimizer and a binary checkpoint format.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "coex/rng.hpp"

namespace coex {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Fully connected network. All parameters live in one contiguous vector:
/// for each layer, the row-major (out x in) weight block then the bias block.
/// Hidden layers use the rectifier; the output layer is linear.
class Mlp {
 public:
  Mlp() = default;

  explicit Mlp(std::vector<int> dims) : dims_(std::move(dims)) {
    if (dims_.size() < 2) throw std::invalid_argument("Mlp: need at least input and output dims");
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
      if (dims_[l] <= 0 || dims_[l + 1] <= 0) throw std::invalid_argument("Mlp: dims must be positive");
      w_off_.push_back(off);
      off += static_cast<std::size_t>(dims_[l]) * dims_[l + 1];
      b_off_.push_back(off);
      off += dims_[l + 1];
    }
    params_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(off));
  }

  /// Uniform(-sqrt(6/fan_in), sqrt(6/fan_in)) weights, zero biases.
  static Mlp he_uniform(std::vector<int> dims, std::uint64_t seed) {
    Mlp m(std::move(dims));
    Rng rng(seed);
    for (int l = 0; l < m.num_layers(); ++l) {
      const double bound = std::sqrt(6.0 / m.dims_[l]);
      auto w = m.weights(l);
      for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = rng.uniform(-bound, bound);
    }
    return m;
  }

  const std::vector<int>& dims() const { return dims_; }
  int num_layers() const { return static_cast<int>(dims_.size()) - 1; }
  int input_dim() const { return dims_.front(); }
  int output_dim() const { return dims_.back(); }
  std::size_t num_params() const { return static_cast<std::size_t>(params_.size()); }

  Eigen::VectorXd& params() { return params_; }
  const Eigen::VectorXd& params() const { return params_; }

  Eigen::Map<RowMatrix> weights(int l) { return {params_.data() + w_off_[l], dims_[l + 1], dims_[l]}; }
  Eigen::Map<const RowMatrix> weights(int l) const { return {params_.data() + w_off_[l], dims_[l + 1], dims_[l]}; }
  Eigen::Map<Eigen::VectorXd> bias(int l) { return {params_.data() + b_off_[l], dims_[l + 1]}; }
  Eigen::Map<const Eigen::VectorXd> bias(int l) const { return {params_.data() + b_off_[l], dims_[l + 1]}; }

  std::size_t weight_offset(int l) const { return w_off_[l]; }
  std::size_t bias_offset(int l) const { return b_off_[l]; }

  /// Column-per-sample batch: inputs (in x B) -> outputs (out x B).
  Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& inputs) const {
    if (inputs.rows() != input_dim()) throw std::invalid_argument("Mlp::forward: input dimension mismatch");
    Eigen::MatrixXd a = inputs;
    for (int l = 0; l < num_layers(); ++l) {
      Eigen::MatrixXd z = weights(l) * a;
      z.colwise() += bias(l);
      if (l + 1 < num_layers()) z = z.cwiseMax(0.0);
      a = std::move(z);
    }
    return a;
  }

  Eigen::VectorXd forward(std::span<const double> x) const {
    const Eigen::Map<const Eigen::VectorXd> col(x.data(), static_cast<Eigen::Index>(x.size()));
    return forward_batch(col);
  }

  /// FNV-1a over the raw parameter bytes.
  std::uint64_t checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (Eigen::Index i = 0; i < params_.size(); ++i) {
      auto bits = std::bit_cast<std::uint64_t>(params_[i]);
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xffU;
        h *= 0x100000001b3ULL;
      }
    }
    return h;
  }

  bool operator==(const Mlp& o) const { return dims_ == o.dims_ && params_ == o.params_; }

 private:
  std::vector<int> dims_;
  std::vector<std::size_t> w_off_, b_off_;
  Eigen::VectorXd params_;
};

/// Deep, storage-independent copy (used for target-network syncs).
inline Mlp copy_params(const Mlp& src) { return Mlp(src); }

/// Regression batch on selected outputs: column j of `inputs` pairs with
/// actions[j] and targets[j].
struct QBatch {
  Eigen::MatrixXd inputs;
  std::vector<int> actions;
  std::vector<double> targets;

  std::size_t size() const { return actions.size(); }
};

struct LossGradient {
  double loss = 0.0;
  Eigen::VectorXd grad;  // same layout as Mlp::params()
};

/// L = mean_j (target_j - Q(x_j)[a_j])^2 and dL/dparams.
inline LossGradient grad_squared_loss(const Mlp& net, const QBatch& batch) {
  const auto n = static_cast<Eigen::Index>(batch.size());
  if (n == 0) throw std::invalid_argument("grad_squared_loss: empty batch");
  if (batch.inputs.cols() != n || static_cast<Eigen::Index>(batch.targets.size()) != n)
    throw std::invalid_argument("grad_squared_loss: batch size mismatch");

  const int L = net.num_layers();
  std::vector<Eigen::MatrixXd> acts;  // acts[0] = input, acts[l+1] = layer l output
  acts.reserve(L + 1);
  acts.push_back(batch.inputs);
  for (int l = 0; l < L; ++l) {
    Eigen::MatrixXd z = net.weights(l) * acts.back();
    z.colwise() += net.bias(l);
    if (l + 1 < L) z = z.cwiseMax(0.0);
    acts.push_back(std::move(z));
  }

  LossGradient out;
  out.grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(net.num_params()));
  Eigen::MatrixXd delta = Eigen::MatrixXd::Zero(net.output_dim(), n);
  const double scale = 2.0 / static_cast<double>(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const int a = batch.actions[j];
    if (a < 0 || a >= net.output_dim()) throw std::out_of_range("grad_squared_loss: action index out of range");
    const double err = acts.back()(a, j) - batch.targets[j];
    out.loss += err * err;
    delta(a, j) = scale * err;
  }
  out.loss /= static_cast<double>(n);

  for (int l = L - 1; l >= 0; --l) {
    Eigen::Map<RowMatrix> gw(out.grad.data() + net.weight_offset(l), net.dims()[l + 1], net.dims()[l]);
    Eigen::Map<Eigen::VectorXd> gb(out.grad.data() + net.bias_offset(l), net.dims()[l + 1]);
    gw.noalias() = delta * acts[l].transpose();
    gb = delta.rowwise().sum();
    if (l > 0) {
      Eigen::MatrixXd back = net.weights(l).transpose() * delta;
      delta = back.cwiseProduct((acts[l].array() > 0.0).cast<double>().matrix());
    }
  }
  return out;
}

struct AdamConfig {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam() = default;
  Adam(std::size_t n_params, AdamConfig cfg)
      : cfg_(cfg),
        m_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_params))),
        v_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_params))) {}

  void step(Mlp& net, const Eigen::VectorXd& grad) {
    if (grad.size() != static_cast<Eigen::Index>(net.num_params()) || grad.size() != m_.size())
      throw std::invalid_argument("Adam::step: gradient shape mismatch");
    if (!grad.allFinite()) throw NonFiniteError("Adam::step: non-finite gradient");
    ++t_;
    m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * grad;
    v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const double step = cfg_.lr / c1;
    net.params().array() -= step * m_.array() / ((v_.array() / c2).sqrt() + cfg_.eps);
  }

  std::uint64_t step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  const Eigen::VectorXd& first_moment() const { return m_; }
  const Eigen::VectorXd& second_moment() const { return v_; }

 private:
  AdamConfig cfg_{};
  Eigen::VectorXd m_, v_;
  std::uint64_t t_ = 0;
};

// Checkpoint container, all integers and reals little-endian:
//   "COEXCKPT" | u32 version | u32 n_dims | u32 dims[n_dims] | u64 optimizer_step
//   then per layer: f64 weights[out*in] (row-major), f64 bias[out]

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Mlp net;
  std::uint64_t optimizer_step = 0;
};

namespace detail {

inline void put_le(std::ostream& os, std::uint64_t v, int bytes) {
  char buf[8];
  for (int i = 0; i < bytes; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xffU);
  os.write(buf, bytes);
}

inline std::uint64_t get_le(std::istream& is, int bytes) {
  unsigned char buf[8] = {};
  if (!is.read(reinterpret_cast<char*>(buf), bytes)) throw std::runtime_error("checkpoint: truncated stream");
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline void save_checkpoint(std::ostream& os, const Mlp& net, std::uint64_t optimizer_step) {
  os.write("COEXCKPT", 8);
  detail::put_le(os, kCheckpointVersion, 4);
  detail::put_le(os, net.dims().size(), 4);
  for (int d : net.dims()) detail::put_le(os, static_cast<std::uint32_t>(d), 4);
  detail::put_le(os, optimizer_step, 8);
  // Parameter vector order already is [W0, b0, W1, b1, ...].
  for (Eigen::Index i = 0; i < net.params().size(); ++i)
    detail::put_le(os, std::bit_cast<std::uint64_t>(net.params()[i]), 8);
  if (!os) throw std::runtime_error("checkpoint: write failed");
}

inline Checkpoint load_checkpoint(std::istream& is) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, "COEXCKPT", 8) != 0)
    throw std::runtime_error("checkpoint: bad magic");
  const auto version = detail::get_le(is, 4);
  if (version != kCheckpointVersion) throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  const auto n_dims = detail::get_le(is, 4);
  if (n_dims < 2 || n_dims > 64) throw std::runtime_error("checkpoint: implausible layer count");
  std::vector<int> dims;
  for (std::uint64_t i = 0; i < n_dims; ++i) dims.push_back(static_cast<int>(detail::get_le(is, 4)));
  Checkpoint ck{Mlp(dims), detail::get_le(is, 8)};
  for (Eigen::Index i = 0; i < ck.net.params().size(); ++i)
    ck.net.params()[i] = std::bit_cast<double>(detail::get_le(is, 8));
  return ck;
}

}  // namespace coex
