#ifndef KWLOC_TRAINING_HPP
#define KWLOC_TRAINING_HPP

#include <ostream>
#include <string>
#include <vector>

#include "kwloc/corpus.hpp"
#include "kwloc/model.hpp"
#include "kwloc/rng.hpp"
#include "kwloc/supervision.hpp"

namespace kwloc {

struct DivergenceError : std::runtime_error {
  explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct SpecAugmentConfig {
  bool enabled = true;
  int n_freq_masks = 1;
  int max_freq_width = 2;
  int n_time_masks = 1;
  int max_time_width = 10;
};

struct TrainConfig {
  std::string architecture = "CNN-Attend";
  std::string supervision = "bow";  // bow | tagger | external
  double lr = 1e-4;
  int epochs = 100;
  int batch_size = 8;
  uint64_t seed = 0;
  AdamConfig adam;
  SpecAugmentConfig spec_augment;
  TaggerNoiseConfig tagger_noise;
  std::string data_dir;
  std::string soft_labels;  // path, supervision = external

  void validate() const;
};

TrainConfig train_config_from_json(const std::string& json_text);
std::string train_config_to_json(const TrainConfig& cfg);

// First/second moment estimates per parameter tensor (named_tensors order).
struct AdamState {
  std::vector<Tensor2D> m, v;
  long step = 0;
};

// Standard bias-corrected Adam update. Parameters are re-snapped to the
// float32 grid afterwards so checkpoints stay bit-exact. Throws
// DivergenceError on a non-finite gradient.
void adam_step(ModelParams& params, const std::vector<Tensor2D>& grads, AdamState& state,
               double lr, double beta1, double beta2, double eps);

// Zeroes n_freq_masks channel bands of exactly max_freq_width channels and
// n_time_masks frame bands of max_time_width frames at seeded positions.
// No time warping.
void spec_augment(FeatureMatrix& fm, const SpecAugmentConfig& cfg, Rng& rng);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double dev_loss = 0.0;
  long wall_ms = 0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  int best_epoch = 0;          // 1-based; 0 = only the initial fallback exists
  std::string best_path;
  bool diverged = false;
};

// Full loop: per-epoch shuffle/augment/batch, checkpoint per epoch
// (ckpt_e%03d.kwck), JSONL log, dev-loss model selection with the best
// checkpoint copied to best.kwck. On divergence the last completed epoch's
// checkpoint is kept (the initial parameters if none completed).
TrainResult train(const TrainConfig& cfg, const CorpusData& corpus,
                  const std::string& out_dir, std::ostream* progress = nullptr);

// Index of the smallest dev loss, earliest epoch on ties.
size_t select_best(const std::vector<double>& dev_losses);
ModelParams select_best_checkpoint(const std::vector<std::string>& checkpoint_paths,
                                   const std::vector<double>& dev_losses);

// Mean BCE of a forward pass without gradients (dev metric).
double eval_loss(const ModelParams& params, const Tensor2D& features,
                 const TargetVector& target);

}  // namespace kwloc

#endif  // KWLOC_TRAINING_HPP
