#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "i2i/checkpoint.hpp"
#include "i2i/dataset.hpp"
#include "i2i/kvconfig.hpp"
#include "i2i/losses.hpp"
#include "i2i/networks.hpp"
#include "i2i/optim.hpp"
#include "i2i/rng.hpp"

namespace i2i {

struct TrainConfig {
  ModelConfig model = default_model();
  LossWeights weights;
  GanForm gan_form = GanForm::NonSaturating;
  AdamConfig adam;
  Schedule schedule;
  std::uint64_t iterations = 2000;
  std::uint64_t checkpoint_every = 500;  // 0 disables periodic checkpoints
  std::uint64_t seed = 1;
  std::filesystem::path domain1_dir = "data/triangles";
  std::filesystem::path domain2_dir = "data/ellipses";
  std::filesystem::path output_dir = "runs/default";

  /// Toy-scale architecture: 16x16 images.
  static ModelConfig default_model();

  /// Reads the flat key set written by to_config; unknown keys are rejected
  /// unless `allow_unknown` (callers that add their own keys check them).
  static TrainConfig from_config(const KvConfig& config, bool allow_unknown = false);
  KvConfig to_config() const;
  void validate() const;
};

/// Keys of to_config() that fix the architecture; resuming requires them to match.
const std::vector<std::string>& architecture_keys();

using ImageSet = std::vector<Tensor<float>>;

struct TrainingData {
  std::array<ImageSet, 2> domains;

  /// Loads both directories; IoError names a missing path, ConfigError an
  /// empty domain or an image size different from `image_size`.
  static TrainingData load(const std::filesystem::path& domain1, const std::filesystem::path& domain2,
                           std::size_t image_size);
};

/// Discriminator phase: fakes are translated without a graph, then the
/// discriminators take one step on their loss. Returns that loss.
double discriminator_update(const TranslationModel<float>& model, const Tensor<float>& x1, const Tensor<float>& x2,
                            const Tensor<float>& s1, const Tensor<float>& s2, Adam<float>& discriminator_opt,
                            double lr);

/// Generator phase: encoders and decoders step on the full objective while
/// the discriminator parameters are frozen.
LossReport generator_update(const TranslationModel<float>& model, const Tensor<float>& x1, const Tensor<float>& x2,
                            const Tensor<float>& s1, const Tensor<float>& s2, const LossWeights& weights,
                            GanForm form, Adam<float>& generator_opt, double lr);

/// One alternating update: the discriminators on their loss (fakes computed
/// without a graph into the generators), then encoders and decoders on the
/// full objective with the discriminators frozen. NumericError names the
/// failing term.
LossReport train_step(const TranslationModel<float>& model, const Tensor<float>& x1, const Tensor<float>& x2,
                      const Tensor<float>& s1, const Tensor<float>& s2, const LossWeights& weights, GanForm form,
                      Adam<float>& generator_opt, Adam<float>& discriminator_opt, double lr);

/// "step=<t> lr=<lr> <term>=<value> ..." with shortest round-trip numbers.
std::string format_log_line(std::uint64_t step, double lr, const LossReport& report);

class Trainer {
 public:
  Trainer(TrainConfig config, TrainingData data);

  const TrainConfig& config() const { return config_; }
  const TranslationModel<float>& model() const { return model_; }
  std::uint64_t step_index() const { return step_; }
  double current_lr() const { return config_.schedule.lr(step_); }

  /// Draws one image per domain and two prior styles, then runs train_step.
  LossReport step();

  CheckpointData checkpoint() const;
  void save(const std::filesystem::path& path) const;
  /// Adopts parameters, optimizer moments, RNG, sampler and step index.
  /// CheckpointError if the architecture keys or tensor shapes differ.
  void restore(const CheckpointData& data);

 private:
  TrainConfig config_;
  TrainingData data_;
  TranslationModel<float> model_;
  Adam<float> generator_opt_;
  Adam<float> discriminator_opt_;
  UnpairedSampler sampler_;
  Rng style_rng_;
  std::uint64_t step_ = 0;
};

struct TrainingRun {
  std::vector<LossReport> reports;  // steps executed by this call
  std::filesystem::path final_checkpoint;
};

/// Runs until config.iterations steps have been taken, writing one log line
/// per step to `log` (if given), step_<t>.ckpt every checkpoint_every steps
/// and final.ckpt at the end, all under output_dir. With `resume_from`, the
/// run continues from that checkpoint.
TrainingRun run_training(const TrainConfig& config, std::ostream* log,
                         const std::optional<std::filesystem::path>& resume_from = std::nullopt);

/// Rebuilds the model stored in a checkpoint (parameters and buffers).
TranslationModel<float> load_model(const CheckpointData& data);
TranslationModel<float> load_model(const std::filesystem::path& path);

/// The training configuration stored in a checkpoint header.
TrainConfig checkpoint_config(const CheckpointData& data);

}  // namespace i2i
