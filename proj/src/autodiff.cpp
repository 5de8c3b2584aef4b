#include "botda/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>
#include <sstream>

#include "botda/errors.hpp"
#include "botda/gemm.hpp"

namespace botda::ad {

std::string shape_string(const Shape& s) {
  std::ostringstream out;
  out << '(' << s[0] << ", " << s[1] << ", " << s[2] << ", " << s[3] << ')';
  return out.str();
}

// ---------------------------------------------------------------- tape

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node node;
  node.owned = std::move(value);
  if (checked_) check_finite(node.owned, nodes_.size(), "constant");
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::input(Tensor<T> value) {
  Node node;
  node.owned = std::move(value);
  node.requires_grad = record_;
  if (checked_) check_finite(node.owned, nodes_.size(), "input");
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::constant_ref(const Tensor<T>& value) {
  Node node;
  node.borrowed = &value;
  node.op = "constant";
  if (checked_) check_finite(value, nodes_.size(), "constant");
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::parameter(const Tensor<T>& value, Tensor<T>& grad_sink) {
  Node node;
  node.borrowed = &value;
  node.grad_sink = &grad_sink;
  node.requires_grad = record_;
  node.op = "parameter";
  if (checked_) check_finite(value, nodes_.size(), "parameter");
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::push(Tensor<T> value, bool requires_grad, Backward backward, const char* op) {
  if (checked_) check_finite(value, nodes_.size(), op);
  Node node;
  node.owned = std::move(value);
  node.op = op;
  node.requires_grad = record_ && requires_grad;
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

template <typename T>
const Tensor<T>& Tape<T>::value(std::size_t id) const {
  const Node& node = nodes_.at(id);
  return node.borrowed != nullptr ? *node.borrowed : node.owned;
}

template <typename T>
Tensor<T>& Tape<T>::grad(std::size_t id) {
  Node& node = nodes_.at(id);
  Tensor<T>& g = node.grad_sink != nullptr ? *node.grad_sink : node.grad;
  const Shape& shape = (node.borrowed != nullptr ? *node.borrowed : node.owned).shape();
  if (g.shape() != shape) g = Tensor<T>(shape);
  node.grad_ready = true;
  return g;
}

template <typename T>
bool Tape<T>::has_grad(std::size_t id) const {
  return nodes_.at(id).grad_ready;
}

template <typename T>
void Tape<T>::backward(Var<T> root) {
  if (root.tape != this) throw ConfigError("backward: variable belongs to another tape");
  if (!record_) throw ConfigError("backward: tape was built without gradient recording");
  if (value(root.id).size() != 1) {
    throw ConfigError("backward: root must be a scalar, got " + shape_string(value(root.id).shape()));
  }
  visited_ = 0;
  if (!nodes_[root.id].requires_grad) return;
  grad(root.id)[0] += T{1};
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.grad_ready || !node.backward) continue;
    if (checked_) check_finite(node.grad, i, node.op);
    node.backward(*this);
    ++visited_;
  }
  if (checked_) {
    for (std::size_t i = 0; i <= root.id; ++i) {
      const Node& node = nodes_[i];
      if (node.grad_sink != nullptr && node.grad_ready) check_finite(*node.grad_sink, i, "parameter gradient");
    }
  }
}

template <typename T>
void Tape<T>::check_finite(const Tensor<T>& t, std::size_t id, const char* what) const {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(t[i])) {
      std::ostringstream msg;
      msg << "non-finite value " << t[i] << " at element " << i << " of node " << id << " (" << what
          << ", shape " << shape_string(t.shape()) << ')';
      throw NumericalError(msg.str());
    }
  }
}

template class Tape<float>;
template class Tape<double>;

namespace {

template <typename T>
bool needs(const Tape<T>& tape, Var<T> v) {
  return tape.recording() && tape.requires_grad(v.id);
}

template <typename T>
void require_same_tape(Var<T> a, Var<T> b, const char* op) {
  if (a.tape != b.tape || a.tape == nullptr) throw ConfigError(std::string(op) + ": variables from different tapes");
}

// ---------------------------------------------------------------- conv

struct ConvGeom {
  std::size_t cin, h, w, kh, kw, ho, wo;
  Conv2dSpec spec;
  std::size_t rows() const { return cin * kh * kw; }
  std::size_t cols() const { return ho * wo; }
  bool direct() const {
    return kh == 1 && kw == 1 && spec.stride_h == 1 && spec.stride_w == 1 && spec.pad_h == 0 && spec.pad_w == 0;
  }
};

// Valid output range [lo, hi) for input index o*stride + k - pad in [0, in).
inline void valid_range(std::size_t out, std::size_t in, std::size_t k, std::size_t stride, std::size_t pad,
                        std::size_t& lo, std::size_t& hi) {
  // o*stride + k >= pad  and  o*stride + k - pad < in
  lo = k >= pad ? 0 : (pad - k + stride - 1) / stride;
  const std::size_t limit = in + pad;  // o*stride + k < limit
  hi = limit > k ? std::min(out, (limit - k + stride - 1) / stride) : 0;
  if (hi < lo) hi = lo;
}

template <typename T>
void im2col(const T* x, const ConvGeom& g, T* col) {
  const std::size_t sh = g.spec.stride_h;
  const std::size_t sw = g.spec.stride_w;
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.cin; ++c) {
    const T* xc = x + c * g.h * g.w;
    for (std::size_t i = 0; i < g.kh; ++i) {
      std::size_t oh_lo = 0;
      std::size_t oh_hi = 0;
      valid_range(g.ho, g.h, i, sh, g.spec.pad_h, oh_lo, oh_hi);
      for (std::size_t j = 0; j < g.kw; ++j, ++row) {
        std::size_t ow_lo = 0;
        std::size_t ow_hi = 0;
        valid_range(g.wo, g.w, j, sw, g.spec.pad_w, ow_lo, ow_hi);
        T* dst = col + row * g.cols();
        for (std::size_t oh = 0; oh < g.ho; ++oh) {
          T* d = dst + oh * g.wo;
          if (oh < oh_lo || oh >= oh_hi) {
            std::fill(d, d + g.wo, T{0});
            continue;
          }
          const T* src = xc + (oh * sh + i - g.spec.pad_h) * g.w;
          std::fill(d, d + ow_lo, T{0});
          if (sw == 1) {
            if (ow_hi > ow_lo) std::memcpy(d + ow_lo, src + ow_lo + j - g.spec.pad_w, (ow_hi - ow_lo) * sizeof(T));
          } else {
            for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) d[ow] = src[ow * sw + j - g.spec.pad_w];
          }
          std::fill(d + ow_hi, d + g.wo, T{0});
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeom& g, T* dx) {
  const std::size_t sh = g.spec.stride_h;
  const std::size_t sw = g.spec.stride_w;
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.cin; ++c) {
    T* xc = dx + c * g.h * g.w;
    for (std::size_t i = 0; i < g.kh; ++i) {
      std::size_t oh_lo = 0;
      std::size_t oh_hi = 0;
      valid_range(g.ho, g.h, i, sh, g.spec.pad_h, oh_lo, oh_hi);
      for (std::size_t j = 0; j < g.kw; ++j, ++row) {
        std::size_t ow_lo = 0;
        std::size_t ow_hi = 0;
        valid_range(g.wo, g.w, j, sw, g.spec.pad_w, ow_lo, ow_hi);
        const T* src_row = col + row * g.cols();
        for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
          const T* s = src_row + oh * g.wo;
          T* d = xc + (oh * sh + i - g.spec.pad_h) * g.w;
          for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) d[ow * sw + j - g.spec.pad_w] += s[ow];
        }
      }
    }
  }
}

}  // namespace

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (stride == 0) throw ConfigError("stride must be at least 1");
  if (in + 2 * pad < kernel) return 0;
  return (in + 2 * pad - kernel) / stride + 1;
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, const std::type_identity_t<Var<T>>* bias, const Conv2dSpec& spec) {
  require_same_tape(x, weight, "conv2d");
  Tape<T>& tape = *x.tape;
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (spec.stride_h == 0 || spec.stride_w == 0) throw ConfigError("conv2d: strides must be at least 1");
  if (ws[1] != xs[1]) {
    throw ConfigError("conv2d: input " + shape_string(xs) + " does not match weight " + shape_string(ws));
  }
  if (bias != nullptr) {
    require_same_tape(x, *bias, "conv2d");
    const Shape bs = bias->shape();
    if (bs != Shape{1, ws[0], 1, 1}) throw ConfigError("conv2d: bias shape " + shape_string(bs));
  }
  ConvGeom g{xs[1],
             xs[2],
             xs[3],
             ws[2],
             ws[3],
             conv_output_extent(xs[2], ws[2], spec.stride_h, spec.pad_h),
             conv_output_extent(xs[3], ws[3], spec.stride_w, spec.pad_w),
             spec};
  if (g.ho == 0 || g.wo == 0) {
    throw ConfigError("conv2d: kernel " + shape_string(ws) + " does not fit input " + shape_string(xs));
  }
  const std::size_t batch = xs[0];
  const std::size_t cout = ws[0];
  const std::size_t k = g.rows();
  const std::size_t p = g.cols();
  Tensor<T> out({batch, cout, g.ho, g.wo});
  {
    const Tensor<T>& xv = x.value();
    const Tensor<T>& wv = weight.value();
    std::vector<T> col(g.direct() ? 0 : k * p);
    for (std::size_t n = 0; n < batch; ++n) {
      const T* xn = xv.data() + n * g.cin * g.h * g.w;
      const T* b = xn;
      if (!g.direct()) {
        im2col(xn, g, col.data());
        b = col.data();
      }
      T* on = out.data() + n * cout * p;
      gemm<T>(false, false, cout, p, k, wv.data(), k, b, p, on, p, false);
      if (bias != nullptr) {
        const Tensor<T>& bv = bias->value();
        for (std::size_t c = 0; c < cout; ++c) {
          T* oc = on + c * p;
          const T bc = bv[c];
          for (std::size_t i = 0; i < p; ++i) oc[i] += bc;
        }
      }
    }
  }
  const bool need_x = needs(tape, x);
  const bool need_w = needs(tape, weight);
  const bool need_b = bias != nullptr && needs(tape, *bias);
  const std::size_t bias_id = bias != nullptr ? bias->id : 0;
  const std::size_t xid = x.id;
  const std::size_t wid = weight.id;
  const std::size_t out_id = tape.size();
  return tape.push(
      std::move(out), need_x || need_w || need_b,
      [=](Tape<T>& t) {
        const Tensor<T>& dout = t.grad(out_id);
        const Tensor<T>& xv = t.value(xid);
        const Tensor<T>& wv = t.value(wid);
        std::vector<T> col(g.direct() ? 0 : k * p);
        std::vector<T> dcol(need_x && !g.direct() ? k * p : 0);
        T* dw = need_w ? t.grad(wid).data() : nullptr;
        T* dx = need_x ? t.grad(xid).data() : nullptr;
        for (std::size_t n = 0; n < batch; ++n) {
          const T* dn = dout.data() + n * cout * p;
          const T* xn = xv.data() + n * g.cin * g.h * g.w;
          if (need_w) {
            const T* b = xn;
            if (!g.direct()) {
              im2col(xn, g, col.data());
              b = col.data();
            }
            gemm<T>(false, true, cout, k, p, dn, p, b, p, dw, k, true);
          }
          if (need_x) {
            T* dxn = dx + n * g.cin * g.h * g.w;
            if (g.direct()) {
              gemm<T>(true, false, k, p, cout, wv.data(), k, dn, p, dxn, p, true);
            } else {
              gemm<T>(true, false, k, p, cout, wv.data(), k, dn, p, dcol.data(), p, false);
              col2im_add(dcol.data(), g, dxn);
            }
          }
        }
        if (need_b) {
          Tensor<T>& db = t.grad(bias_id);
          for (std::size_t c = 0; c < cout; ++c) {
            T s{0};
            for (std::size_t n = 0; n < batch; ++n) {
              const T* dc = dout.data() + (n * cout + c) * p;
              for (std::size_t i = 0; i < p; ++i) s += dc[i];
            }
            db[c] += s;
          }
        }
      },
      "conv2d");
}

// ---------------------------------------------------------------- batchnorm

template <typename T>
Var<T> batchnorm2d(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormState<T>& state, Mode mode) {
  require_same_tape(x, gamma, "batchnorm2d");
  require_same_tape(x, beta, "batchnorm2d");
  Tape<T>& tape = *x.tape;
  const Shape xs = x.shape();
  const std::size_t batch = xs[0];
  const std::size_t channels = xs[1];
  const std::size_t hw = xs[2] * xs[3];
  const std::size_t count = batch * hw;
  const Shape ps{1, channels, 1, 1};
  if (count == 0) throw ConfigError("batchnorm2d: zero-size batch");
  if (gamma.shape() != ps || beta.shape() != ps) {
    throw ConfigError("batchnorm2d: parameter shapes must be " + shape_string(ps));
  }
  if (state.running_mean.shape() != ps || state.running_var.shape() != ps) {
    throw ConfigError("batchnorm2d: running statistics must be " + shape_string(ps));
  }
  if (mode == Mode::kTrain && count < 2) throw ConfigError("batchnorm2d: training needs more than one value per channel");

  const Tensor<T>& xv = x.value();
  const Tensor<T>& gv = gamma.value();
  const Tensor<T>& bv = beta.value();
  auto xhat = std::make_shared<Tensor<T>>(xs);
  auto inv_std = std::make_shared<std::vector<T>>(channels);
  Tensor<T> out(xs);
  for (std::size_t c = 0; c < channels; ++c) {
    double mean = 0.0;
    double var = 0.0;
    if (mode == Mode::kTrain) {
      for (std::size_t n = 0; n < batch; ++n) {
        const T* xc = xv.data() + (n * channels + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) mean += xc[i];
      }
      mean /= static_cast<double>(count);
      for (std::size_t n = 0; n < batch; ++n) {
        const T* xc = xv.data() + (n * channels + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          const double d = xc[i] - mean;
          var += d * d;
        }
      }
      const double unbiased = var / static_cast<double>(count - 1);
      var /= static_cast<double>(count);
      state.running_mean[c] = static_cast<T>((1.0 - state.momentum) * state.running_mean[c] + state.momentum * mean);
      state.running_var[c] = static_cast<T>((1.0 - state.momentum) * state.running_var[c] + state.momentum * unbiased);
    } else {
      mean = state.running_mean[c];
      var = state.running_var[c];
    }
    const double is = 1.0 / std::sqrt(var + state.eps);
    (*inv_std)[c] = static_cast<T>(is);
    const T m = static_cast<T>(mean);
    const T ist = static_cast<T>(is);
    for (std::size_t n = 0; n < batch; ++n) {
      const std::size_t off = (n * channels + c) * hw;
      const T* xc = xv.data() + off;
      T* hc = xhat->data() + off;
      T* oc = out.data() + off;
      for (std::size_t i = 0; i < hw; ++i) {
        hc[i] = (xc[i] - m) * ist;
        oc[i] = gv[c] * hc[i] + bv[c];
      }
    }
  }
  const bool need_x = needs(tape, x);
  const bool need_g = needs(tape, gamma);
  const bool need_b = needs(tape, beta);
  const std::size_t xid = x.id;
  const std::size_t gid = gamma.id;
  const std::size_t bid = beta.id;
  const std::size_t out_id = tape.size();
  const bool train = mode == Mode::kTrain;
  return tape.push(
      std::move(out), need_x || need_g || need_b,
      [=](Tape<T>& t) {
        const Tensor<T>& dy = t.grad(out_id);
        const Tensor<T>& gv2 = t.value(gid);
        T* dx = need_x ? t.grad(xid).data() : nullptr;
        T* dg = need_g ? t.grad(gid).data() : nullptr;
        T* db = need_b ? t.grad(bid).data() : nullptr;
        for (std::size_t c = 0; c < channels; ++c) {
          double sum_dy = 0.0;
          double sum_dy_xhat = 0.0;
          for (std::size_t n = 0; n < batch; ++n) {
            const std::size_t off = (n * channels + c) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              sum_dy += dy[off + i];
              sum_dy_xhat += static_cast<double>(dy[off + i]) * (*xhat)[off + i];
            }
          }
          if (dg != nullptr) dg[c] += static_cast<T>(sum_dy_xhat);
          if (db != nullptr) db[c] += static_cast<T>(sum_dy);
          if (dx == nullptr) continue;
          const double scale = static_cast<double>(gv2[c]) * (*inv_std)[c];
          const double mean_dy = sum_dy / static_cast<double>(count);
          const double mean_dy_xhat = sum_dy_xhat / static_cast<double>(count);
          for (std::size_t n = 0; n < batch; ++n) {
            const std::size_t off = (n * channels + c) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              if (train) {
                dx[off + i] += static_cast<T>(scale * (dy[off + i] - mean_dy - (*xhat)[off + i] * mean_dy_xhat));
              } else {
                dx[off + i] += static_cast<T>(scale * dy[off + i]);
              }
            }
          }
        }
      },
      "batchnorm2d");
}

// ---------------------------------------------------------------- pointwise

template <typename T>
Var<T> relu(Var<T> x) {
  Tape<T>& tape = *x.tape;
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v = v > T{0} ? v : T{0};
  const std::size_t xid = x.id;
  const std::size_t out_id = tape.size();
  return tape.push(
      std::move(out), needs(tape, x),
      [=](Tape<T>& t) {
        const Tensor<T>& dy = t.grad(out_id);
        const Tensor<T>& y = t.value(out_id);
        Tensor<T>& dx = t.grad(xid);
        for (std::size_t i = 0; i < dy.size(); ++i) {
          if (y[i] > T{0}) dx[i] += dy[i];
        }
      },
      "relu");
}

template <typename T>
Var<T> maxpool2d(Var<T> x, const Pool2dSpec& spec) {
  Tape<T>& tape = *x.tape;
  const Shape xs = x.shape();
  if (spec.kernel_h == 0 || spec.kernel_w == 0) throw ConfigError("maxpool2d: kernel must be non-empty");
  if (spec.pad_h >= spec.kernel_h || spec.pad_w >= spec.kernel_w) {
    throw ConfigError("maxpool2d: padding must be smaller than the kernel");
  }
  const std::size_t ho = conv_output_extent(xs[2], spec.kernel_h, spec.stride_h, spec.pad_h);
  const std::size_t wo = conv_output_extent(xs[3], spec.kernel_w, spec.stride_w, spec.pad_w);
  if (ho == 0 || wo == 0) throw ConfigError("maxpool2d: window does not fit input " + shape_string(xs));
  const Shape os{xs[0], xs[1], ho, wo};
  Tensor<T> out(os);
  auto argmax = std::make_shared<std::vector<std::size_t>>(shape_size(os));
  const Tensor<T>& xv = x.value();
  const std::size_t planes = xs[0] * xs[1];
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const std::size_t in_off = pl * xs[2] * xs[3];
    const std::size_t out_off = pl * ho * wo;
    for (std::size_t oh = 0; oh < ho; ++oh) {
      std::size_t h_lo = 0;
      std::size_t h_hi = 0;
      {
        const long long start = static_cast<long long>(oh * spec.stride_h) - static_cast<long long>(spec.pad_h);
        h_lo = static_cast<std::size_t>(std::max<long long>(start, 0));
        h_hi = static_cast<std::size_t>(std::min<long long>(start + static_cast<long long>(spec.kernel_h),
                                                            static_cast<long long>(xs[2])));
      }
      for (std::size_t ow = 0; ow < wo; ++ow) {
        const long long start = static_cast<long long>(ow * spec.stride_w) - static_cast<long long>(spec.pad_w);
        const std::size_t w_lo = static_cast<std::size_t>(std::max<long long>(start, 0));
        const std::size_t w_hi = static_cast<std::size_t>(
            std::min<long long>(start + static_cast<long long>(spec.kernel_w), static_cast<long long>(xs[3])));
        T best = -std::numeric_limits<T>::infinity();
        std::size_t best_idx = in_off + h_lo * xs[3] + w_lo;
        for (std::size_t h = h_lo; h < h_hi; ++h) {
          for (std::size_t w = w_lo; w < w_hi; ++w) {
            const std::size_t idx = in_off + h * xs[3] + w;
            if (xv[idx] > best) {
              best = xv[idx];
              best_idx = idx;
            }
          }
        }
        out[out_off + oh * wo + ow] = best;
        (*argmax)[out_off + oh * wo + ow] = best_idx;
      }
    }
  }
  const std::size_t xid = x.id;
  const std::size_t out_id = tape.size();
  return tape.push(
      std::move(out), needs(tape, x),
      [=](Tape<T>& t) {
        const Tensor<T>& dy = t.grad(out_id);
        Tensor<T>& dx = t.grad(xid);
        for (std::size_t i = 0; i < dy.size(); ++i) dx[(*argmax)[i]] += dy[i];
      },
      "maxpool2d");
}

template <typename T>
Var<T> residual_add(Var<T> a, Var<T> b) {
  require_same_tape(a, b, "residual_add");
  Tape<T>& tape = *a.tape;
  if (a.shape() != b.shape()) {
    throw ConfigError("residual_add: shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) +
                      " differ");
  }
  Tensor<T> out = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const bool need_a = needs(tape, a);
  const bool need_b = needs(tape, b);
  const std::size_t aid = a.id;
  const std::size_t bid = b.id;
  const std::size_t out_id = tape.size();
  return tape.push(
      std::move(out), need_a || need_b,
      [=](Tape<T>& t) {
        const Tensor<T>& dy = t.grad(out_id);
        if (need_a) {
          Tensor<T>& da = t.grad(aid);
          for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
        }
        if (need_b) {
          Tensor<T>& db = t.grad(bid);
          for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i];
        }
      },
      "residual_add");
}

template <typename T>
Var<T> mse_loss(Var<T> pred, const Tensor<T>& target, std::size_t mask_begin, std::size_t mask_end) {
  Tape<T>& tape = *pred.tape;
  const Shape ps = pred.shape();
  if (ps != target.shape()) {
    throw ConfigError("mse_loss: prediction " + shape_string(ps) + " and target " + shape_string(target.shape()) +
                      " differ");
  }
  if (ps[1] != 1 || ps[2] != 1) throw ConfigError("mse_loss: expected (N, 1, 1, W), got " + shape_string(ps));
  if (mask_begin >= mask_end) throw ConfigError("mse_loss: empty mask");
  if (mask_end > ps[3]) throw ConfigError("mse_loss: mask exceeds width");
  if (ps[0] == 0) throw ConfigError("mse_loss: empty batch");
  const std::size_t width = ps[3];
  const double denom = static_cast<double>(ps[0] * (mask_end - mask_begin));
  const Tensor<T>& pv = pred.value();
  double sum = 0.0;
  for (std::size_t n = 0; n < ps[0]; ++n) {
    for (std::size_t w = mask_begin; w < mask_end; ++w) {
      const double d = static_cast<double>(pv[n * width + w]) - target[n * width + w];
      sum += d * d;
    }
  }
  Tensor<T> out({1, 1, 1, 1}, static_cast<T>(sum / denom));
  const std::size_t pid = pred.id;
  const std::size_t out_id = tape.size();
  return tape.push(
      std::move(out), needs(tape, pred),
      [=, target = target](Tape<T>& t) {
        const double g = t.grad(out_id)[0];
        const Tensor<T>& pv2 = t.value(pid);
        Tensor<T>& dp = t.grad(pid);
        const double scale = 2.0 * g / denom;
        for (std::size_t n = 0; n < ps[0]; ++n) {
          for (std::size_t w = mask_begin; w < mask_end; ++w) {
            const std::size_t i = n * width + w;
            dp[i] += static_cast<T>(scale * (static_cast<double>(pv2[i]) - target[i]));
          }
        }
      },
      "mse_loss");
}

template <typename T>
Var<T> weighted_sum(Var<T> x, const Tensor<T>& weights) {
  Tape<T>& tape = *x.tape;
  if (x.shape() != weights.shape()) throw ConfigError("weighted_sum: shape mismatch");
  const Tensor<T>& xv = x.value();
  double sum = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) sum += static_cast<double>(xv[i]) * weights[i];
  const std::size_t xid = x.id;
  const std::size_t out_id = tape.size();
  return tape.push(
      Tensor<T>({1, 1, 1, 1}, static_cast<T>(sum)), needs(tape, x),
      [=, weights = weights](Tape<T>& t) {
        const T g = t.grad(out_id)[0];
        Tensor<T>& dx = t.grad(xid);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g * weights[i];
      },
      "weighted_sum");
}

template <typename T>
Tensor<T> kaiming_init(const Shape& shape, std::size_t fan_in, Rng& rng) {
  if (fan_in == 0) throw ConfigError("kaiming_init: fan_in must be positive");
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  Tensor<T> out(shape);
  for (auto& v : out.values()) v = static_cast<T>(rng.normal(0.0, sd));
  return out;
}

// ---------------------------------------------------------------- adam

template <typename T>
void Adam<T>::step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>* const> grads) {
  if (params.size() != grads.size()) throw ConfigError("adam: parameter and gradient counts differ");
  if (m_.empty() && step_ == 0) {
    for (const Tensor<T>* p : params) {
      m_.emplace_back(p->shape());
      v_.emplace_back(p->shape());
    }
  }
  if (m_.size() != params.size() || v_.size() != params.size()) {
    throw ConfigError("adam: optimizer state tracks a different parameter count");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i]->shape() != params[i]->shape() || m_[i].shape() != params[i]->shape() ||
        v_[i].shape() != params[i]->shape()) {
      throw ConfigError("adam: shape mismatch for parameter " + std::to_string(i) + " " +
                        shape_string(params[i]->shape()));
    }
  }
  ++step_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = *params[i];
    const Tensor<T>& g = *grads[i];
    Tensor<T>& m = m_[i];
    Tensor<T>& v = v_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g[j];
      const double mj = b1 * m[j] + (1.0 - b1) * gj;
      const double vj = b2 * v[j] + (1.0 - b2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      p[j] = static_cast<T>(p[j] - config_.lr * (mj / bc1) / (std::sqrt(vj / bc2) + config_.eps));
    }
  }
}

template <typename T>
void Adam<T>::restore(std::uint64_t step, std::vector<Tensor<T>> m, std::vector<Tensor<T>> v) {
  if (m.size() != v.size()) throw DataError("adam: moment lists differ in length");
  step_ = step;
  m_ = std::move(m);
  v_ = std::move(v);
}

template class Adam<float>;
template class Adam<double>;

#define BOTDA_AD_INSTANTIATE(T)                                                                      \
  template Var<T> conv2d<T>(Var<T>, Var<T>, const Var<T>*, const Conv2dSpec&);                     \
  template Var<T> batchnorm2d<T>(Var<T>, Var<T>, Var<T>, BatchNormState<T>&, Mode);                \
  template Var<T> relu<T>(Var<T>);                                                                 \
  template Var<T> maxpool2d<T>(Var<T>, const Pool2dSpec&);                                         \
  template Var<T> residual_add<T>(Var<T>, Var<T>);                                                 \
  template Var<T> mse_loss<T>(Var<T>, const Tensor<T>&, std::size_t, std::size_t);                 \
  template Var<T> weighted_sum<T>(Var<T>, const Tensor<T>&);                                       \
  template Tensor<T> kaiming_init<T>(const Shape&, std::size_t, Rng&);

BOTDA_AD_INSTANTIATE(float)
BOTDA_AD_INSTANTIATE(double)

#undef BOTDA_AD_INSTANTIATE

}  // namespace botda::ad
