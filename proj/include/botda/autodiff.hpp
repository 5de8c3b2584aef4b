#pragma once

// Reverse-mode differentiation over a closed set of layers: exactly what the
// SR network uses (convolution, batch normalization, ReLU, max pooling,
// residual addition, masked MSE). Nodes are recorded in creation order, which
// is a topological order, and backward() walks that order in reverse.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "botda/rng.hpp"
#include "botda/tensor.hpp"

namespace botda::ad {

template <typename T>
class Tape;

/// Handle to a tape node.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
};

template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&)>;

  /// `record_gradients == false` builds no backward closures (inference).
  /// `checked` makes every op verify its output is finite.
  explicit Tape(bool record_gradients = true, bool checked = false)
      : record_(record_gradients), checked_(checked) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }
  bool checked() const { return checked_; }

  /// Leaf that receives no gradient.
  Var<T> constant(Tensor<T> value);
  /// Leaf whose gradient is kept on the tape (read it with grad()).
  Var<T> input(Tensor<T> value);
  /// Leaf borrowing external storage that receives no gradient. The tensor
  /// must outlive the tape.
  Var<T> constant_ref(const Tensor<T>& value);
  /// Leaf borrowing external storage; backward() accumulates into `grad_sink`.
  Var<T> parameter(const Tensor<T>& value, Tensor<T>& grad_sink);

  /// Records an op result. `backward` may be empty when no parent needs a
  /// gradient. `op` names the layer in checked-mode diagnostics.
  Var<T> push(Tensor<T> value, bool requires_grad, Backward backward, const char* op);

  const Tensor<T>& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Gradient buffer of a node, allocated (zeroed) on first use.
  Tensor<T>& grad(std::size_t id);
  bool has_grad(std::size_t id) const;

  /// Seeds d(root)/d(root) = 1 (root must hold one element) and propagates.
  void backward(Var<T> root);

  std::size_t size() const { return nodes_.size(); }
  /// Number of nodes whose backward closure ran in the last backward().
  std::size_t visited() const { return visited_; }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* borrowed = nullptr;
    Tensor<T> grad;
    Tensor<T>* grad_sink = nullptr;
    bool requires_grad = false;
    bool grad_ready = false;
    Backward backward;
    const char* op = "leaf";
  };

  void check_finite(const Tensor<T>& t, std::size_t id, const char* what) const;

  std::vector<Node> nodes_;
  bool record_;
  bool checked_;
  std::size_t visited_ = 0;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape->value(id);
}

struct Conv2dSpec {
  std::size_t stride_h = 1;
  std::size_t stride_w = 1;
  std::size_t pad_h = 0;
  std::size_t pad_w = 0;
};

struct Pool2dSpec {
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::size_t stride_h = 1;
  std::size_t stride_w = 1;
  std::size_t pad_h = 0;
  std::size_t pad_w = 0;
};

/// floor((in + 2 pad - kernel) / stride) + 1, or 0 if the kernel does not fit.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad);

/// Cross-correlation. x: (N, Cin, H, W); weight: (Cout, Cin, KH, KW);
/// bias: (1, Cout, 1, 1) or nullptr. Reduction runs kernel-major
/// (cin, kh, kw) in fixed order.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, const std::type_identity_t<Var<T>>* bias, const Conv2dSpec& spec);

enum class Mode { kTrain, kEval };

/// Running statistics owned by the layer, updated in train mode.
template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;  // (1, C, 1, 1)
  Tensor<T> running_var;   // (1, C, 1, 1)
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean({1, channels, 1, 1}, T{0}), running_var({1, channels, 1, 1}, T{1}) {}
};

/// Per-channel normalization over (N, H, W). Train mode uses batch
/// statistics (biased variance) and updates the running estimates with the
/// unbiased variance; eval mode uses the running estimates.
template <typename T>
Var<T> batchnorm2d(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormState<T>& state, Mode mode);

template <typename T>
Var<T> relu(Var<T> x);

/// Window maximum with implicit -inf padding; the gradient goes to the first
/// maximal element of each window.
template <typename T>
Var<T> maxpool2d(Var<T> x, const Pool2dSpec& spec);

template <typename T>
Var<T> residual_add(Var<T> a, Var<T> b);

/// Mean of squared differences over width columns [mask_begin, mask_end),
/// averaged over the batch. pred and target: (N, 1, 1, W).
template <typename T>
Var<T> mse_loss(Var<T> pred, const Tensor<T>& target, std::size_t mask_begin, std::size_t mask_end);

/// sum_i x_i * w_i, used by the gradient checker to reduce arbitrary outputs.
template <typename T>
Var<T> weighted_sum(Var<T> x, const Tensor<T>& weights);

/// N(0, 2 / fan_in) entries.
template <typename T>
Tensor<T> kaiming_init(const Shape& shape, std::size_t fan_in, Rng& rng);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moments are created on the first step and must
/// keep the shapes of the parameters they track.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// params[i] -= lr * m_hat / (sqrt(v_hat) + eps), computed in double.
  void step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>* const> grads);

  const AdamConfig& config() const { return config_; }
  AdamConfig& config() { return config_; }
  std::uint64_t steps() const { return step_; }
  const std::vector<Tensor<T>>& first_moments() const { return m_; }
  const std::vector<Tensor<T>>& second_moments() const { return v_; }
  /// Restores saved state; moment shapes are checked on the next step.
  void restore(std::uint64_t step, std::vector<Tensor<T>> m, std::vector<Tensor<T>> v);

 private:
  AdamConfig config_;
  std::uint64_t step_ = 0;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
};

struct GradCheckReport {
  std::string layer;
  std::size_t seeds = 0;
  std::size_t checked = 0;  // number of compared partial derivatives
  double max_rel_error = 0.0;
  double tolerance = 1e-4;
  bool passed() const { return seeds > 0 && checked > 0 && max_rel_error < tolerance; }
};

/// Layers covered by the finite-difference harness.
const std::vector<std::string>& grad_check_layers();

/// Builds random fixtures of shape at most 4x8x16x16 for `layer`, projects the
/// output onto a random direction and compares every tape partial with a
/// central difference (h = 1e-5 * max(1, |x|)). The relative error of one
/// partial is |a - n| / max(|a|, |n|, 1e-3).
GradCheckReport grad_check(const std::string& layer, std::size_t seeds, std::uint64_t base_seed,
                           double tolerance = 1e-4);

/// fan_in of a conv weight (Cout, Cin, KH, KW) = Cin * KH * KW.
inline std::size_t conv_fan_in(const Shape& weight_shape) {
  return weight_shape[1] * weight_shape[2] * weight_shape[3];
}

}  // namespace botda::ad
