#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "botda/autodiff.hpp"
#include "botda/errors.hpp"

namespace botda::ad {
namespace {

using TensorD = Tensor<double>;
using VarD = Var<double>;
using Build = std::function<VarD(Tape<double>&, const std::vector<VarD>&)>;

struct Fixture {
  std::vector<TensorD> inputs;
  Build build;
};

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

TensorD random_tensor(const Shape& s, Rng& rng, double scale = 1.0) {
  TensorD t(s);
  for (auto& v : t.values()) v = rng.normal(0.0, scale);
  return t;
}

// Entries at least `gap` away from zero, so relu's kink never sits inside a
// finite-difference stencil.
TensorD away_from_zero(const Shape& s, Rng& rng, double gap) {
  TensorD t(s);
  for (auto& v : t.values()) {
    const double m = gap + rng.uniform(0.0, 1.0);
    v = rng.uniform01() < 0.5 ? -m : m;
  }
  return t;
}

// Distinct entries separated by at least `gap`, so every pooling window has a
// unique maximum that a perturbation of size h cannot displace.
TensorD distinct_values(const Shape& s, Rng& rng, double gap) {
  std::vector<std::size_t> order(shape_size(s));
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  TensorD t(s);
  for (std::size_t i = 0; i < order.size(); ++i) {
    t[i] = (static_cast<double>(order[i]) - 0.5 * static_cast<double>(order.size())) * gap + rng.uniform(0.0, 0.2 * gap);
  }
  return t;
}

double project(Tape<double>& tape, const Fixture& f, const std::vector<TensorD>& inputs, const TensorD* direction,
               std::vector<VarD>* vars_out, TensorD* direction_out, Rng* rng) {
  std::vector<VarD> vars;
  vars.reserve(inputs.size());
  for (const auto& in : inputs) vars.push_back(tape.input(in));
  VarD out = f.build(tape, vars);
  TensorD w;
  if (direction != nullptr) {
    w = *direction;
  } else {
    w = random_tensor(out.shape(), *rng);
    if (direction_out != nullptr) *direction_out = w;
  }
  VarD loss = weighted_sum(out, w);
  if (vars_out != nullptr) {
    *vars_out = vars;
    tape.backward(loss);
  }
  return loss.value()[0];
}

Fixture make_fixture(const std::string& layer, Rng& rng) {
  Fixture f;
  if (layer == "conv2d") {
    const std::size_t n = pick(rng, 1, 3);
    const std::size_t cin = pick(rng, 1, 4);
    const std::size_t cout = pick(rng, 1, 4);
    const std::size_t kh = pick(rng, 1, 4);
    const std::size_t kw = pick(rng, 1, 4);
    Conv2dSpec spec{pick(rng, 1, 2), pick(rng, 1, 2), pick(rng, 0, kh - 1), pick(rng, 0, kw - 1)};
    const std::size_t h = pick(rng, kh, 9);
    const std::size_t w = pick(rng, kw, 12);
    f.inputs = {random_tensor({n, cin, h, w}, rng), random_tensor({cout, cin, kh, kw}, rng),
                random_tensor({1, cout, 1, 1}, rng)};
    f.build = [spec](Tape<double>&, const std::vector<VarD>& v) { return conv2d(v[0], v[1], &v[2], spec); };
  } else if (layer == "batchnorm2d_train" || layer == "batchnorm2d_eval") {
    const bool train = layer == "batchnorm2d_train";
    const std::size_t n = pick(rng, 2, 4);
    const std::size_t c = pick(rng, 1, 8);
    const Shape xs{n, c, pick(rng, 1, 6), pick(rng, 2, 8)};
    TensorD x = random_tensor(xs, rng, 2.0);
    for (auto& v : x.values()) v += 0.5;
    BatchNormState<double> base(c);
    for (std::size_t i = 0; i < c; ++i) {
      base.running_mean[i] = rng.normal();
      base.running_var[i] = rng.uniform(0.5, 2.0);
    }
    f.inputs = {x, random_tensor({1, c, 1, 1}, rng), random_tensor({1, c, 1, 1}, rng)};
    f.build = [train, base](Tape<double>&, const std::vector<VarD>& v) {
      BatchNormState<double> state = base;
      return batchnorm2d(v[0], v[1], v[2], state, train ? Mode::kTrain : Mode::kEval);
    };
  } else if (layer == "relu") {
    const Shape xs{pick(rng, 1, 4), pick(rng, 1, 8), pick(rng, 1, 16), pick(rng, 1, 16)};
    f.inputs = {away_from_zero(xs, rng, 0.05)};
    f.build = [](Tape<double>&, const std::vector<VarD>& v) { return relu(v[0]); };
  } else if (layer == "maxpool2d") {
    Pool2dSpec spec{3, 3, pick(rng, 1, 2), pick(rng, 1, 2), pick(rng, 0, 1), pick(rng, 0, 1)};
    const Shape xs{pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 3, 10), pick(rng, 3, 12)};
    f.inputs = {distinct_values(xs, rng, 0.01)};
    f.build = [spec](Tape<double>&, const std::vector<VarD>& v) { return maxpool2d(v[0], spec); };
  } else if (layer == "residual_add") {
    const Shape xs{pick(rng, 1, 4), pick(rng, 1, 8), pick(rng, 1, 16), pick(rng, 1, 16)};
    f.inputs = {random_tensor(xs, rng), random_tensor(xs, rng)};
    f.build = [](Tape<double>&, const std::vector<VarD>& v) { return residual_add(v[0], v[1]); };
  } else if (layer == "mse_loss") {
    const std::size_t n = pick(rng, 1, 4);
    const std::size_t w = pick(rng, 3, 16);
    const std::size_t begin = pick(rng, 0, w / 3);
    const std::size_t end = w - pick(rng, 0, w / 3);
    const TensorD target = random_tensor({n, 1, 1, w}, rng);
    f.inputs = {random_tensor({n, 1, 1, w}, rng)};
    f.build = [target, begin, end](Tape<double>&, const std::vector<VarD>& v) {
      return mse_loss(v[0], target, begin, end);
    };
  } else if (layer == "residual_block") {
    // conv -> bn -> relu -> conv -> bn, plus identity shortcut, then relu.
    const std::size_t n = pick(rng, 2, 3);
    const std::size_t c = pick(rng, 1, 3);
    const Shape xs{n, c, pick(rng, 3, 5), pick(rng, 3, 6)};
    f.inputs = {random_tensor(xs, rng),
                random_tensor({c, c, 3, 3}, rng, 0.5),
                random_tensor({1, c, 1, 1}, rng),
                random_tensor({1, c, 1, 1}, rng),
                random_tensor({c, c, 3, 3}, rng, 0.5),
                random_tensor({1, c, 1, 1}, rng),
                random_tensor({1, c, 1, 1}, rng)};
    f.build = [c](Tape<double>&, const std::vector<VarD>& v) {
      const Conv2dSpec same{1, 1, 1, 1};
      BatchNormState<double> s1(c);
      BatchNormState<double> s2(c);
      VarD y = conv2d(v[0], v[1], nullptr, same);
      y = relu(batchnorm2d(y, v[2], v[3], s1, Mode::kTrain));
      y = conv2d(y, v[4], nullptr, same);
      y = batchnorm2d(y, v[5], v[6], s2, Mode::kTrain);
      // The trailing relu is left out: after batch normalization its kinks
      // cannot be kept away from the stencil.
      return residual_add(y, v[0]);
    };
  } else {
    throw ConfigError("grad_check: unknown layer '" + layer + "'");
  }
  return f;
}

}  // namespace

const std::vector<std::string>& grad_check_layers() {
  static const std::vector<std::string> layers{"conv2d",    "batchnorm2d_train", "batchnorm2d_eval", "relu",
                                               "maxpool2d", "residual_add",      "mse_loss",         "residual_block"};
  return layers;
}

GradCheckReport grad_check(const std::string& layer, std::size_t seeds, std::uint64_t base_seed, double tolerance) {
  GradCheckReport report;
  report.layer = layer;
  report.tolerance = tolerance;
  for (std::size_t s = 0; s < seeds; ++s) {
    Rng rng(derive_seed(base_seed, s));
    const Fixture f = make_fixture(layer, rng);

    Tape<double> tape(true, true);
    std::vector<VarD> vars;
    TensorD direction;
    project(tape, f, f.inputs, nullptr, &vars, &direction, &rng);

    for (std::size_t i = 0; i < f.inputs.size(); ++i) {
      const TensorD analytic = tape.has_grad(vars[i].id) ? tape.grad(vars[i].id) : TensorD(f.inputs[i].shape());
      std::vector<TensorD> perturbed = f.inputs;
      for (std::size_t j = 0; j < f.inputs[i].size(); ++j) {
        const double x0 = f.inputs[i][j];
        const double h = 1e-5 * std::max(1.0, std::abs(x0));
        perturbed[i][j] = x0 + h;
        Tape<double> plus(false);
        const double fp = project(plus, f, perturbed, &direction, nullptr, nullptr, nullptr);
        perturbed[i][j] = x0 - h;
        Tape<double> minus(false);
        const double fm = project(minus, f, perturbed, &direction, nullptr, nullptr, nullptr);
        perturbed[i][j] = x0;
        const double numeric = (fp - fm) / (2.0 * h);
        const double a = analytic[j];
        const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-3});
        report.max_rel_error = std::max(report.max_rel_error, err);
        ++report.checked;
      }
    }
    ++report.seeds;
  }
  return report;
}

}  // namespace botda::ad
