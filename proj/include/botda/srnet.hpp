#pragma once

// ResNet-style BFS regressor. A 71 x W frame goes in, a 1 x W normalized BFS
// trace comes out. Only the frequency axis is downsampled.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "botda/autodiff.hpp"
#include "botda/dataset.hpp"
#include "botda/trace.hpp"

namespace botda::srnet {

using ad::Tensor;

struct ModelConfig {
  std::size_t input_freq = 71;
  std::size_t stem_channels = 64;
  /// Stem kernel height (frequency) and width (fiber).
  std::size_t stem_kernel = 7;
  std::size_t stem_kernel_width = 7;
  std::size_t pool_kernel = 3;
  std::vector<std::size_t> stage_blocks{3, 4, 6, 3};
  std::vector<std::size_t> stage_channels{64, 128, 256, 512};
  /// Width of the 3 x k kernels inside residual blocks.
  std::size_t block_kernel_width = 3;
  /// Width of the head kernel, which spans the remaining frequency extent.
  std::size_t head_kernel_width = 1;
  /// Network input width during training and for long-fiber tiling.
  std::size_t window_width = 540;
  /// Edge columns per side excluded from the loss and from stitched output.
  std::size_t margin = 20;

  /// Full-scale network: 64-channel 7x7 stem, blocks [3,4,6,3].
  static ModelConfig full();
  /// CPU-scale variant: blocks [1,1,1,1], channels [16,32,64,128], 128-wide
  /// windows and a 7x81 stem so the receptive field spans a 40 ns pulse.
  static ModelConfig desk();

  /// Throws ConfigError on inconsistent lists, zero counts, even kernels or a
  /// frequency extent that collapses before the head.
  void validate() const;
  /// Frequency extent after the stem conv, the pool and each stage.
  std::vector<std::size_t> frequency_extents() const;
  /// Composed receptive field along the width axis, in samples.
  std::size_t receptive_field_width() const;
  /// Columns dropped at each side of an interior inference window: the margin
  /// widened to the receptive-field half-width, so kept columns never see the
  /// window padding. Capped to leave at least one kept column.
  std::size_t inference_context() const;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
  bool operator==(const ModelConfig&) const = default;
};

/// A trainable tensor and its gradient accumulator.
struct Param {
  std::string name;
  Tensor<float> value;
  Tensor<float> grad;
};

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

class Model {
 public:
  /// Kaiming-initialized weights, BN gamma = 1 and beta = 0, head bias 0.
  Model(const ModelConfig& config, std::uint64_t seed);

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return config_; }

  /// x: (N, 1, input_freq, W) -> (N, 1, 1, W). Train mode updates BN running
  /// statistics.
  ad::Var<float> forward(ad::Tape<float>& tape, ad::Var<float> x, ad::Mode mode);

  /// Eval-mode forward without a gradient tape. Does not modify the model, so
  /// concurrent calls on one instance are safe.
  Tensor<float> predict(const Tensor<float>& x, bool checked = false) const;

  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  std::size_t parameter_count() const;
  void zero_grad();

  /// Parameters followed by BN running statistics, in a fixed order.
  std::vector<NamedTensor> state() const;
  /// Replaces every named tensor; names and shapes must match exactly.
  void load_state(const std::vector<NamedTensor>& tensors);

 private:
  struct Conv {
    std::size_t weight = 0;
    std::size_t bias = SIZE_MAX;
    ad::Conv2dSpec spec;
  };
  struct Norm {
    std::size_t gamma = 0;
    std::size_t beta = 0;
    std::size_t state = 0;
  };
  struct Block {
    Conv conv1;
    Norm bn1;
    Conv conv2;
    Norm bn2;
    bool projection = false;
    Conv proj;
    Norm proj_bn;
  };

  Conv add_conv(const std::string& name, std::size_t cout, std::size_t cin, std::size_t kh, std::size_t kw,
                ad::Conv2dSpec spec, bool bias, Rng& rng);
  Norm add_norm(const std::string& name, std::size_t channels);

  template <typename Bind>
  ad::Var<float> run(ad::Tape<float>& tape, ad::Var<float> x, ad::Mode mode, Bind bind,
                     std::vector<ad::BatchNormState<float>>& bn_states) const;

  ModelConfig config_;
  std::vector<Param> params_;
  std::vector<std::string> bn_names_;
  std::vector<ad::BatchNormState<float>> bn_states_;
  Conv stem_;
  Norm stem_bn_;
  ad::Pool2dSpec pool_;
  std::vector<Block> blocks_;
  Conv head_;
};

struct TrainHyper {
  double lr = 1e-4;
  std::size_t batch_size = 16;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  double max_seconds = 0.0;  // 0 = unlimited; checked between batches
  std::uint64_t seed = 0;
  bool checked = false;      // NaN checks on every op
  /// Random crops per training sample per epoch; 0 means one crop per
  /// window_width columns of the sample.
  std::size_t crops_per_sample = 0;
  /// Cosine decay from lr to final_lr over max_epochs, stepped per batch.
  bool cosine = false;
  double final_lr = 1e-6;

  std::string to_json() const;
  static TrainHyper from_json(const std::string& text);
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_mse = 0.0;
  double val_mse = 0.0;
  double seconds = 0.0;
};

/// Everything needed to resume or reproduce a trained model.
struct Checkpoint {
  ModelConfig config;
  std::vector<NamedTensor> tensors;
  BfsRange bfs_range;
  std::uint64_t model_seed = 0;
  std::uint64_t data_seed = 0;
  std::uint64_t data_digest = 0;
  TrainHyper hyper;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  /// Adam state, optional.
  std::uint64_t adam_step = 0;
  std::vector<Tensor<float>> adam_m;
  std::vector<Tensor<float>> adam_v;
};

struct TrainResult {
  Checkpoint best;
  std::vector<EpochRecord> history;
  bool stopped_early = false;
  bool hit_time_limit = false;
  double seconds = 0.0;
};

/// Mean masked MSE of eval-mode predictions over full-width samples.
double evaluate_mse(const Model& model, const std::vector<DatasetSample>& samples);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Adam training on random width crops with a center-masked MSE. Keeps the
/// best-validation weights and stops after `patience` epochs without
/// improvement. A non-finite loss throws NumericalError.
TrainResult train(Model& model, const std::vector<DatasetSample>& train_set,
                  const std::vector<DatasetSample>& val_set, const TrainHyper& hyper, const BfsRange& bfs_range,
                  std::uint64_t data_seed = 0, std::uint64_t data_digest = 0, const EpochCallback& on_epoch = {});

/// Snapshot of a model plus metadata.
Checkpoint make_checkpoint(const Model& model, const BfsRange& bfs_range);
Model model_from_checkpoint(const Checkpoint& checkpoint);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
/// Throws DataError on a corrupt, truncated or version-mismatched file.
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string history_csv(const std::vector<EpochRecord>& history);

/// Tiles a frame of any width >= window_width with windows advancing by
/// `stride` (default window_width - 2 * inference_context()), keeps each
/// window's center columns, averages overlaps, replicates the outermost kept
/// column into the `margin` columns at each fiber end and denormalizes into
/// Hz. Interior outputs do not depend on the stride.
BfsTrace infer_long(const Model& model, const BgsFrame& frame, const BfsRange& bfs_range, std::size_t stride = 0);

/// Normalized network input (1, 1, rows, width) from frame columns
/// [begin, begin + width).
Tensor<float> frame_window(const BgsFrame& frame, std::size_t begin, std::size_t width);

}  // namespace botda::srnet
