#include "botda/srnet.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <json.hpp>
#include <numbers>
#include <numeric>
#include <sstream>

#include "botda/binio.hpp"
#include "botda/errors.hpp"

namespace botda::srnet {

using nlohmann::json;
using ad::Var;

namespace {

constexpr std::string_view kCheckpointMagic = "BSRN";
constexpr std::uint16_t kCheckpointVersion = 1;

std::size_t head_input_channels(const ModelConfig& c) { return c.stage_channels.back(); }

json hyper_json(const TrainHyper& h) {
  return {{"lr", h.lr},
          {"batch_size", h.batch_size},
          {"max_epochs", h.max_epochs},
          {"patience", h.patience},
          {"max_seconds", h.max_seconds},
          {"seed", h.seed},
          {"checked", h.checked},
          {"crops_per_sample", h.crops_per_sample},
          {"cosine", h.cosine},
          {"final_lr", h.final_lr}};
}

TrainHyper hyper_from(const json& j) {
  TrainHyper h;
  h.lr = j.value("lr", h.lr);
  h.batch_size = j.value("batch_size", h.batch_size);
  h.max_epochs = j.value("max_epochs", h.max_epochs);
  h.patience = j.value("patience", h.patience);
  h.max_seconds = j.value("max_seconds", h.max_seconds);
  h.seed = j.value("seed", h.seed);
  h.checked = j.value("checked", h.checked);
  h.crops_per_sample = j.value("crops_per_sample", h.crops_per_sample);
  h.cosine = j.value("cosine", h.cosine);
  h.final_lr = j.value("final_lr", h.final_lr);
  return h;
}

}  // namespace

// ---------------------------------------------------------------- config

ModelConfig ModelConfig::full() { return ModelConfig{}; }

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.stem_channels = 16;
  c.stage_blocks = {1, 1, 1, 1};
  c.stage_channels = {16, 32, 64, 128};
  c.window_width = 128;
  c.stem_kernel_width = 81;
  c.head_kernel_width = 1;
  return c;
}

std::vector<std::size_t> ModelConfig::frequency_extents() const {
  std::vector<std::size_t> out;
  std::size_t h = ad::conv_output_extent(input_freq, stem_kernel, 2, stem_kernel / 2);
  out.push_back(h);
  h = h == 0 ? 0 : ad::conv_output_extent(h, pool_kernel, 2, pool_kernel / 2);
  out.push_back(h);
  for (std::size_t s = 0; s < stage_blocks.size(); ++s) {
    if (s > 0 && h > 0) h = ad::conv_output_extent(h, 3, 2, 1);
    out.push_back(h);
  }
  return out;
}

void ModelConfig::validate() const {
  if (stage_blocks.empty() || stage_blocks.size() != stage_channels.size()) {
    throw ConfigError("model: stage_blocks and stage_channels must be non-empty and of equal length");
  }
  for (std::size_t s = 0; s < stage_blocks.size(); ++s) {
    if (stage_blocks[s] == 0 || stage_channels[s] == 0) throw ConfigError("model: stage counts must be at least 1");
  }
  if (stem_channels == 0) throw ConfigError("model: stem_channels must be at least 1");
  for (std::size_t k : {stem_kernel, stem_kernel_width, pool_kernel, block_kernel_width, head_kernel_width}) {
    if (k == 0 || k % 2 == 0) throw ConfigError("model: kernel sizes must be odd");
  }
  if (window_width <= 2 * margin) throw ConfigError("model: window_width must exceed twice the margin");
  const auto ext = frequency_extents();
  if (std::find(ext.begin(), ext.end(), std::size_t{0}) != ext.end()) {
    throw ConfigError("model: input_freq " + std::to_string(input_freq) +
                      " collapses to zero frequency extent before the head");
  }
}

std::size_t ModelConfig::receptive_field_width() const {
  std::size_t rf = 1 + (stem_kernel_width - 1) + (pool_kernel - 1) + (head_kernel_width - 1);
  for (std::size_t b : stage_blocks) rf += b * 2 * (block_kernel_width - 1);
  return rf;
}

std::size_t ModelConfig::inference_context() const {
  const std::size_t half = (receptive_field_width() - 1) / 2;
  return std::min(std::max(margin, half), (window_width - 1) / 2);
}

std::string ModelConfig::to_json() const {
  json j{{"input_freq", input_freq},
         {"stem_channels", stem_channels},
         {"stem_kernel", stem_kernel},
         {"stem_kernel_width", stem_kernel_width},
         {"pool_kernel", pool_kernel},
         {"stage_blocks", stage_blocks},
         {"stage_channels", stage_channels},
         {"block_kernel_width", block_kernel_width},
         {"head_kernel_width", head_kernel_width},
         {"window_width", window_width},
         {"margin", margin}};
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  ModelConfig c;
  try {
    const json j = json::parse(text);
    c.input_freq = j.value("input_freq", c.input_freq);
    c.stem_channels = j.value("stem_channels", c.stem_channels);
    c.stem_kernel = j.value("stem_kernel", c.stem_kernel);
    c.stem_kernel_width = j.value("stem_kernel_width", c.stem_kernel);
    c.pool_kernel = j.value("pool_kernel", c.pool_kernel);
    c.stage_blocks = j.value("stage_blocks", c.stage_blocks);
    c.stage_channels = j.value("stage_channels", c.stage_channels);
    c.block_kernel_width = j.value("block_kernel_width", c.block_kernel_width);
    c.head_kernel_width = j.value("head_kernel_width", c.head_kernel_width);
    c.window_width = j.value("window_width", c.window_width);
    c.margin = j.value("margin", c.margin);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string TrainHyper::to_json() const { return hyper_json(*this).dump(); }

TrainHyper TrainHyper::from_json(const std::string& text) {
  try {
    return hyper_from(json::parse(text));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
}

// ---------------------------------------------------------------- model

Model::Conv Model::add_conv(const std::string& name, std::size_t cout, std::size_t cin, std::size_t kh,
                            std::size_t kw, ad::Conv2dSpec spec, bool bias, Rng& rng) {
  Conv conv;
  conv.spec = spec;
  const ad::Shape ws{cout, cin, kh, kw};
  conv.weight = params_.size();
  params_.push_back({name + ".weight", ad::kaiming_init<float>(ws, ad::conv_fan_in(ws), rng), Tensor<float>(ws)});
  if (bias) {
    conv.bias = params_.size();
    params_.push_back({name + ".bias", Tensor<float>({1, cout, 1, 1}), Tensor<float>({1, cout, 1, 1})});
  }
  return conv;
}

Model::Norm Model::add_norm(const std::string& name, std::size_t channels) {
  Norm norm;
  const ad::Shape ps{1, channels, 1, 1};
  norm.gamma = params_.size();
  params_.push_back({name + ".gamma", Tensor<float>(ps, 1.0f), Tensor<float>(ps)});
  norm.beta = params_.size();
  params_.push_back({name + ".beta", Tensor<float>(ps), Tensor<float>(ps)});
  norm.state = bn_states_.size();
  bn_states_.emplace_back(channels);
  bn_names_.push_back(name);
  return norm;
}

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const std::size_t sk = config_.stem_kernel;
  const std::size_t skw = config_.stem_kernel_width;
  stem_ = add_conv("stem.conv", config_.stem_channels, 1, sk, skw, {2, 1, sk / 2, skw / 2}, false, rng);
  stem_bn_ = add_norm("stem.bn", config_.stem_channels);
  const std::size_t pk = config_.pool_kernel;
  pool_ = {pk, pk, 2, 1, pk / 2, pk / 2};

  const std::size_t kw = config_.block_kernel_width;
  std::size_t cin = config_.stem_channels;
  for (std::size_t s = 0; s < config_.stage_blocks.size(); ++s) {
    const std::size_t cout = config_.stage_channels[s];
    for (std::size_t b = 0; b < config_.stage_blocks[s]; ++b) {
      const std::size_t stride = (s > 0 && b == 0) ? 2 : 1;
      const std::string name = "stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
      Block block;
      block.conv1 = add_conv(name + ".conv1", cout, cin, 3, kw, {stride, 1, 1, kw / 2}, false, rng);
      block.bn1 = add_norm(name + ".bn1", cout);
      block.conv2 = add_conv(name + ".conv2", cout, cout, 3, kw, {1, 1, 1, kw / 2}, false, rng);
      block.bn2 = add_norm(name + ".bn2", cout);
      if (stride != 1 || cin != cout) {
        block.projection = true;
        block.proj = add_conv(name + ".proj", cout, cin, 1, 1, {stride, 1, 0, 0}, false, rng);
        block.proj_bn = add_norm(name + ".proj_bn", cout);
      }
      blocks_.push_back(block);
      cin = cout;
    }
  }
  const std::size_t hk = config_.head_kernel_width;
  head_ = add_conv("head", 1, head_input_channels(config_), config_.frequency_extents().back(), hk,
                   {1, 1, 0, hk / 2}, true, rng);
}

template <typename Bind>
Var<float> Model::run(ad::Tape<float>& tape, Var<float> x, ad::Mode mode, Bind bind,
                      std::vector<ad::BatchNormState<float>>& bn_states) const {
  (void)tape;
  if (x.shape()[1] != 1 || x.shape()[2] != config_.input_freq) {
    throw ConfigError("model: expected input (N, 1, " + std::to_string(config_.input_freq) + ", W), got " +
                      ad::shape_string(x.shape()));
  }
  auto conv = [&](Var<float> in, const Conv& c) {
    if (c.bias == SIZE_MAX) return ad::conv2d<float>(in, bind(c.weight), nullptr, c.spec);
    const Var<float> b = bind(c.bias);
    return ad::conv2d<float>(in, bind(c.weight), &b, c.spec);
  };
  auto norm = [&](Var<float> in, const Norm& n) {
    return ad::batchnorm2d<float>(in, bind(n.gamma), bind(n.beta), bn_states[n.state], mode);
  };
  Var<float> y = ad::relu(norm(conv(x, stem_), stem_bn_));
  y = ad::maxpool2d(y, pool_);
  for (const Block& b : blocks_) {
    Var<float> z = ad::relu(norm(conv(y, b.conv1), b.bn1));
    z = norm(conv(z, b.conv2), b.bn2);
    const Var<float> shortcut = b.projection ? norm(conv(y, b.proj), b.proj_bn) : y;
    y = ad::relu(ad::residual_add(z, shortcut));
  }
  return conv(y, head_);
}

Var<float> Model::forward(ad::Tape<float>& tape, Var<float> x, ad::Mode mode) {
  auto bind = [&](std::size_t i) { return tape.parameter(params_[i].value, params_[i].grad); };
  return run(tape, x, mode, bind, bn_states_);
}

Tensor<float> Model::predict(const Tensor<float>& x, bool checked) const {
  ad::Tape<float> tape(false, checked);
  auto bind = [&](std::size_t i) { return tape.constant_ref(params_[i].value); };
  // Eval mode only reads the running statistics; the copy keeps this const.
  std::vector<ad::BatchNormState<float>> states = bn_states_;
  const Var<float> y = run(tape, tape.constant_ref(x), ad::Mode::kEval, bind, states);
  return y.value();
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const Param& p : params_) n += p.value.size();
  return n;
}

void Model::zero_grad() {
  for (Param& p : params_) p.grad.fill(0.0f);
}

std::vector<NamedTensor> Model::state() const {
  std::vector<NamedTensor> out;
  out.reserve(params_.size() + 2 * bn_states_.size());
  for (const Param& p : params_) out.push_back({p.name, p.value});
  for (std::size_t i = 0; i < bn_states_.size(); ++i) {
    out.push_back({bn_names_[i] + ".running_mean", bn_states_[i].running_mean});
    out.push_back({bn_names_[i] + ".running_var", bn_states_[i].running_var});
  }
  return out;
}

void Model::load_state(const std::vector<NamedTensor>& tensors) {
  const std::size_t expected = params_.size() + 2 * bn_states_.size();
  if (tensors.size() != expected) {
    throw DataError("model state has " + std::to_string(tensors.size()) + " tensors, expected " +
                    std::to_string(expected));
  }
  auto take = [&](std::size_t i, const std::string& name, Tensor<float>& dst) {
    const NamedTensor& t = tensors[i];
    if (t.name != name) throw DataError("model state: expected tensor '" + name + "', found '" + t.name + "'");
    if (t.value.shape() != dst.shape()) {
      throw DataError("model state: tensor '" + name + "' has shape " + ad::shape_string(t.value.shape()) +
                      ", expected " + ad::shape_string(dst.shape()));
    }
    dst = t.value;
  };
  std::size_t i = 0;
  for (Param& p : params_) take(i++, p.name, p.value);
  for (std::size_t b = 0; b < bn_states_.size(); ++b) {
    take(i++, bn_names_[b] + ".running_mean", bn_states_[b].running_mean);
    take(i++, bn_names_[b] + ".running_var", bn_states_[b].running_var);
  }
}

// ---------------------------------------------------------------- training

Tensor<float> frame_window(const BgsFrame& frame, std::size_t begin, std::size_t width) {
  const std::size_t rows = frame.rows();
  if (begin + width > frame.width) throw ConfigError("frame window exceeds frame width");
  Tensor<float> out({1, 1, rows, width});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t w = 0; w < width; ++w) out.at(0, 0, r, w) = static_cast<float>(frame.at(r, begin + w));
  }
  return out;
}

namespace {

void check_sample(const ModelConfig& config, const DatasetSample& s, const char* which) {
  if (s.input.rows() != config.input_freq) {
    throw ConfigError(std::string(which) + " sample has " + std::to_string(s.input.rows()) +
                      " sweep rows, model expects " + std::to_string(config.input_freq));
  }
  if (s.input.width < config.window_width || s.label.size() != s.input.width) {
    throw ConfigError(std::string(which) + " sample is narrower than the training window");
  }
}

double sample_mse(const Model& model, const DatasetSample& s) {
  const std::size_t w = s.input.width;
  const std::size_t m = model.config().margin;
  if (w <= 2 * m) throw ConfigError("validation sample narrower than twice the margin");
  const Tensor<float> y = model.predict(frame_window(s.input, 0, w));
  double sum = 0.0;
  for (std::size_t i = m; i < w - m; ++i) {
    const double d = static_cast<double>(y[i]) - s.label[i];
    sum += d * d;
  }
  return sum / static_cast<double>(w - 2 * m);
}

}  // namespace

double evaluate_mse(const Model& model, const std::vector<DatasetSample>& samples) {
  if (samples.empty()) throw ConfigError("evaluate_mse: no samples");
  double sum = 0.0;
  for (const DatasetSample& s : samples) sum += sample_mse(model, s);
  return sum / static_cast<double>(samples.size());
}

Checkpoint make_checkpoint(const Model& model, const BfsRange& bfs_range) {
  Checkpoint c;
  c.config = model.config();
  c.tensors = model.state();
  c.bfs_range = bfs_range;
  return c;
}

Model model_from_checkpoint(const Checkpoint& checkpoint) {
  Model model(checkpoint.config, checkpoint.model_seed);
  model.load_state(checkpoint.tensors);
  return model;
}

TrainResult train(Model& model, const std::vector<DatasetSample>& train_set, const std::vector<DatasetSample>& val_set,
                  const TrainHyper& hyper, const BfsRange& bfs_range, std::uint64_t data_seed,
                  std::uint64_t data_digest, const EpochCallback& on_epoch) {
  using Clock = std::chrono::steady_clock;
  const ModelConfig& cfg = model.config();
  if (train_set.empty() || val_set.empty()) throw ConfigError("train: empty training or validation set");
  if (hyper.batch_size == 0 || hyper.max_epochs == 0) throw ConfigError("train: batch_size and max_epochs must be positive");
  if (!(hyper.lr > 0.0)) throw ConfigError("train: learning rate must be positive");
  bfs_range.validate();
  for (const auto& s : train_set) check_sample(cfg, s, "training");
  for (const auto& s : val_set) check_sample(cfg, s, "validation");

  const auto start = Clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(Clock::now() - start).count(); };

  ad::Adam<float> adam(ad::AdamConfig{hyper.lr});
  std::vector<Tensor<float>*> params;
  std::vector<const Tensor<float>*> grads;
  for (Param& p : model.params()) {
    params.push_back(&p.value);
    grads.push_back(&p.grad);
  }

  Rng rng(derive_seed(hyper.seed, 0x7261696e));
  const std::size_t win = cfg.window_width;
  const std::size_t rows = cfg.input_freq;
  auto crops_of = [&](const DatasetSample& s) {
    return hyper.crops_per_sample > 0 ? hyper.crops_per_sample : std::max<std::size_t>(1, s.input.width / win);
  };
  std::size_t items_per_epoch = 0;
  for (const DatasetSample& s : train_set) items_per_epoch += crops_of(s);
  const std::size_t total_steps = hyper.max_epochs * ((items_per_epoch + hyper.batch_size - 1) / hyper.batch_size);
  std::size_t step = 0;

  TrainResult result;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  double last_val_seconds = 0.0;

  for (std::size_t epoch = 1; epoch <= hyper.max_epochs; ++epoch) {
    std::vector<std::pair<std::size_t, std::size_t>> items;
    items.reserve(items_per_epoch);
    for (std::size_t i = 0; i < train_set.size(); ++i) {
      for (std::size_t k = 0, n = crops_of(train_set[i]); k < n; ++k) {
        items.emplace_back(i, rng.below(train_set[i].input.width - win + 1));
      }
    }
    for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[rng.below(i)]);

    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (std::size_t b0 = 0; b0 < items.size(); b0 += hyper.batch_size) {
      if (hyper.max_seconds > 0.0 && elapsed() + last_val_seconds >= hyper.max_seconds) {
        result.hit_time_limit = true;
        break;
      }
      const std::size_t bn = std::min(hyper.batch_size, items.size() - b0);
      Tensor<float> x({bn, 1, rows, win});
      Tensor<float> target({bn, 1, 1, win});
      for (std::size_t j = 0; j < bn; ++j) {
        const auto [si, off] = items[b0 + j];
        const DatasetSample& s = train_set[si];
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t w = 0; w < win; ++w) x.at(j, 0, r, w) = static_cast<float>(s.input.at(r, off + w));
        }
        for (std::size_t w = 0; w < win; ++w) target.at(j, 0, 0, w) = s.label[off + w];
      }
      ad::Tape<float> tape(true, hyper.checked);
      const Var<float> y = model.forward(tape, tape.constant(std::move(x)), ad::Mode::kTrain);
      const Var<float> loss = ad::mse_loss(y, target, cfg.margin, win - cfg.margin);
      const double lv = loss.value()[0];
      if (!std::isfinite(lv)) {
        std::ostringstream msg;
        msg << "training diverged: loss " << lv << " at epoch " << epoch << ", batch " << b0 / hyper.batch_size
            << " (lr " << hyper.lr << ")";
        throw NumericalError(msg.str());
      }
      model.zero_grad();
      tape.backward(loss);
      if (hyper.cosine) {
        const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
        adam.config().lr = hyper.final_lr + 0.5 * (hyper.lr - hyper.final_lr) * (1.0 + std::cos(std::numbers::pi * frac));
      }
      adam.step(params, grads);
      ++step;
      loss_sum += lv * static_cast<double>(bn);
      loss_count += bn;
    }
    if (loss_count == 0) break;

    const double val_start = elapsed();
    const double val = evaluate_mse(model, val_set);
    last_val_seconds = elapsed() - val_start;
    if (!std::isfinite(val)) throw NumericalError("validation loss is not finite at epoch " + std::to_string(epoch));

    EpochRecord rec{epoch, loss_sum / static_cast<double>(loss_count), val, elapsed()};
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (val < best_val) {
      best_val = val;
      since_best = 0;
      result.best = make_checkpoint(model, bfs_range);
      result.best.best_epoch = epoch;
      result.best.adam_step = adam.steps();
      result.best.adam_m = adam.first_moments();
      result.best.adam_v = adam.second_moments();
    } else if (++since_best >= hyper.patience) {
      result.stopped_early = true;
      break;
    }
    if (result.hit_time_limit) break;
  }
  if (result.history.empty()) throw ConfigError("train: time budget too small to finish one batch");

  result.best.data_seed = data_seed;
  result.best.data_digest = data_digest;
  result.best.hyper = hyper;
  result.best.history = result.history;
  result.seconds = elapsed();
  model.load_state(result.best.tensors);
  return result;
}

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::ostringstream out;
  out.precision(9);
  out << "epoch,train_mse,val_mse,seconds\n";
  for (const EpochRecord& r : history) {
    out << r.epoch << ',' << r.train_mse << ',' << r.val_mse << ',' << r.seconds << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------- checkpoint

namespace {

void write_tensor(binio::Writer& w, const Tensor<float>& t) {
  for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (float v : t.values()) w.f32(v);
}

Tensor<float> read_tensor(binio::Reader& r) {
  ad::Shape s{};
  for (auto& d : s) d = r.u32();
  const std::size_t n = ad::shape_size(s);
  if (n > r.remaining() / 4) throw DataError("checkpoint: tensor larger than the file");
  Tensor<float> t(s);
  for (auto& v : t.values()) v = r.f32();
  return t;
}

}  // namespace

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  json meta{{"config", json::parse(c.config.to_json())},
            {"bfs_range", {c.bfs_range.min, c.bfs_range.max}},
            {"model_seed", c.model_seed},
            {"data_seed", c.data_seed},
            {"data_digest", c.data_digest},
            {"hyper", hyper_json(c.hyper)},
            {"best_epoch", c.best_epoch},
            {"adam_step", c.adam_step},
            {"adam", {{"beta1", 0.9}, {"beta2", 0.999}, {"eps", 1e-8}}},
            {"batchnorm", {{"momentum", 0.1}, {"eps", 1e-5}}}};
  json hist = json::array();
  // Wall-clock times stay out of the checkpoint so deterministic runs give identical bytes.
  for (const EpochRecord& r : c.history) hist.push_back({r.epoch, r.train_mse, r.val_mse});
  meta["history"] = hist;
  const std::string text = meta.dump();

  binio::Writer w;
  w.bytes(kCheckpointMagic);
  w.u16(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.bytes(text);
  w.u32(static_cast<std::uint32_t>(c.tensors.size()));
  for (const NamedTensor& t : c.tensors) {
    w.u16(static_cast<std::uint16_t>(t.name.size()));
    w.bytes(t.name);
    write_tensor(w, t.value);
  }
  if (c.adam_m.size() != c.adam_v.size()) throw ConfigError("checkpoint: Adam moment lists differ in length");
  w.u32(static_cast<std::uint32_t>(c.adam_m.size()));
  for (std::size_t i = 0; i < c.adam_m.size(); ++i) {
    write_tensor(w, c.adam_m[i]);
    write_tensor(w, c.adam_v[i]);
  }
  w.u64(fnv1a64(w.data()));
  binio::write_file(path.string(), w.data());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string data = binio::read_file(path.string());
  const std::string where = path.string();
  if (data.size() < kCheckpointMagic.size() + 2 + 8 || std::string_view(data).substr(0, 4) != kCheckpointMagic) {
    throw DataError(where + ": not a checkpoint file (bad magic)");
  }
  const std::string_view body = std::string_view(data).substr(0, data.size() - 8);
  {
    binio::Reader tail(std::string_view(data).substr(data.size() - 8), where);
    if (tail.u64() != fnv1a64(std::string(body))) throw DataError(where + ": checkpoint checksum mismatch (corrupt file)");
  }
  binio::Reader r(body, where);
  r.bytes(kCheckpointMagic.size());
  const std::uint16_t version = r.u16();
  if (version != kCheckpointVersion) {
    throw DataError(where + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint c;
  const std::uint32_t text_len = r.u32();
  const std::string text(r.bytes(text_len));
  try {
    const json meta = json::parse(text);
    c.config = ModelConfig::from_json(meta.at("config").dump());
    c.bfs_range = {meta.at("bfs_range").at(0).get<double>(), meta.at("bfs_range").at(1).get<double>()};
    c.model_seed = meta.at("model_seed").get<std::uint64_t>();
    c.data_seed = meta.at("data_seed").get<std::uint64_t>();
    c.data_digest = meta.at("data_digest").get<std::uint64_t>();
    c.hyper = hyper_from(meta.at("hyper"));
    c.best_epoch = meta.at("best_epoch").get<std::size_t>();
    c.adam_step = meta.at("adam_step").get<std::uint64_t>();
    for (const json& h : meta.at("history")) {
      c.history.push_back({h.at(0).get<std::size_t>(), h.at(1).get<double>(), h.at(2).get<double>(), 0.0});
    }
  } catch (const json::exception& e) {
    throw DataError(where + ": bad checkpoint metadata: " + e.what());
  } catch (const ConfigError& e) {
    throw DataError(where + ": bad checkpoint config: " + e.what());
  }
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = std::string(r.bytes(r.u16()));
    t.value = read_tensor(r);
    c.tensors.push_back(std::move(t));
  }
  const std::uint32_t moments = r.u32();
  for (std::uint32_t i = 0; i < moments; ++i) {
    c.adam_m.push_back(read_tensor(r));
    c.adam_v.push_back(read_tensor(r));
  }
  if (r.remaining() != 0) throw DataError(where + ": trailing bytes after checkpoint");
  if (!(c.bfs_range.max > c.bfs_range.min)) throw DataError(where + ": checkpoint has no valid BFS range");
  return c;
}

// ---------------------------------------------------------------- inference

BfsTrace infer_long(const Model& model, const BgsFrame& frame, const BfsRange& bfs_range, std::size_t stride) {
  const ModelConfig& cfg = model.config();
  if (!(bfs_range.max > bfs_range.min)) throw ConfigError("infer_long: BFS range is missing");
  const std::size_t win = cfg.window_width;
  const std::size_t m = cfg.margin;
  const std::size_t ctx = cfg.inference_context();
  const std::size_t width = frame.width;
  if (width < win) {
    throw ConfigError("infer_long: frame width " + std::to_string(width) + " is below the window width " +
                      std::to_string(win));
  }
  if (frame.rows() != cfg.input_freq) throw ConfigError("infer_long: frame sweep rows do not match the model");
  if (stride == 0) stride = win - 2 * ctx;
  if (stride > win - 2 * ctx) {
    throw ConfigError("infer_long: stride above " + std::to_string(win - 2 * ctx) + " would leave gaps between windows");
  }

  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + win <= width; s += stride) starts.push_back(s);
  if (starts.back() + win != width) starts.push_back(width - win);

  std::vector<double> sum(width, 0.0);
  std::vector<std::size_t> count(width, 0);
  for (std::size_t s : starts) {
    const Tensor<float> y = model.predict(frame_window(frame, s, win));
    // Windows touching a fiber end also keep the columns between the margin
    // and the context there; nothing else covers them.
    const std::size_t lo = s == 0 ? m : ctx;
    const std::size_t hi = s + win == width ? win - m : win - ctx;
    for (std::size_t i = lo; i < hi; ++i) {
      sum[s + i] += y[i];
      ++count[s + i];
    }
  }
  BfsTrace out;
  out.pitch = frame.spatial_pitch;
  out.values.resize(width);
  for (std::size_t i = m; i < width - m; ++i) {
    out.values[i] = denormalize_bfs(sum[i] / static_cast<double>(count[i]), bfs_range);
  }
  for (std::size_t i = 0; i < m; ++i) {
    out.values[i] = out.values[m];
    out.values[width - 1 - i] = out.values[width - 1 - m];
  }
  return out;
}

}  // namespace botda::srnet
