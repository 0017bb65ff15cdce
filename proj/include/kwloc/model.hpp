#ifndef KWLOC_MODEL_HPP
#define KWLOC_MODEL_HPP

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kwloc/tape.hpp"
#include "kwloc/tensor.hpp"

namespace kwloc {

enum class PoolKind { LogMeanExp, MaxOverTime, Attention };

std::string pool_kind_name(PoolKind k);
PoolKind pool_kind_from(const std::string& s);

struct ConvLayerSpec {
  int filters = 0;
  int width = 0;
  int padding = 0;
  int pool = 0;  // max-pool window (= stride) applied after this layer; 0 = none
};

// Declarative description of Enc -> Pool -> Clf. Every encoder conv layer is
// followed by ReLU except the last one under log-mean-exp pooling, which
// stays linear so frame scores can be negative.
struct ArchitectureSpec {
  std::string name;
  int vocab_size = 0;
  int input_dim = 13;  // feature dim D the first conv layer consumes
  std::vector<ConvLayerSpec> encoder;
  PoolKind pooling = PoolKind::MaxOverTime;
  std::vector<int> classifier;  // e.g. {4096, V}; empty = no classifier (PSC)
  double lme_r = 1.0;

  int encoder_dim() const { return encoder.back().filters; }
  bool is_attention() const { return pooling == PoolKind::Attention; }
  // Encoder sequence length for a given input length (throws if too short).
  int output_frames(int t_in) const;
  // Shortest input the encoder accepts.
  int min_input_frames() const;
  // Receptive field of encoder step t_enc in input frames, unclipped.
  std::pair<long, long> receptive_interval(int t_enc) const;
  void validate() const;
};

struct ModelParams {
  ArchitectureSpec spec;
  std::vector<Tensor2D> conv_w;  // layer l: filters x (in_dim * width), [f][c*width+k]
  std::vector<Tensor2D> conv_b;  // 1 x filters
  std::vector<Tensor2D> clf_w;   // layer j: out x in
  std::vector<Tensor2D> clf_b;   // 1 x out
  Tensor2D query;                // V x encoder_dim (attention archs), else 0x0
  std::vector<std::string> vocab;  // keyword strings by index; may be empty
  uint64_t seed = 0;
  int epoch = 0;
};

// Mutable views over all parameter tensors in checkpoint order.
struct TensorRef {
  std::string name;
  Tensor2D* t;
};
std::vector<TensorRef> named_tensors(ModelParams& p);

// The four Table-style presets by name (PSC, CNN-Pool, CNN-Attend,
// CNN-PoolAttend), initialised from the seed.
ModelParams build_architecture(const std::string& name, int vocab_size, uint64_t seed);
ArchitectureSpec preset_spec(const std::string& name, int vocab_size);
// Seeded init for an arbitrary spec (tests use small custom specs).
// Weights ~ U(+-sqrt(6/(fan_in+fan_out))), biases 0, queries N(0,1)/sqrt(K);
// everything snapped to the float32 grid.
ModelParams init_params(const ArchitectureSpec& spec, uint64_t seed);

struct EncoderOutput {
  Tensor2D h;                                      // T' x K
  std::vector<std::pair<int, int>> frame_map;      // clipped receptive intervals
};

struct DetectionResult {
  std::vector<double> probs;   // V entries, or 1 entry for attention forwards
  std::vector<double> scores;  // matching pre-sigmoid scores
  std::optional<int> keyword;  // set when a single keyword was queried

  double prob_for(int w) const { return probs.size() == 1 ? probs[0] : probs[w]; }
};

struct ForwardFull {
  DetectionResult det;
  EncoderOutput enc;
  std::vector<double> attention;  // T' weights; empty for non-attention archs
};

// Ids of the taped graph for one utterance; used directly by training and
// Grad-CAM, wrapped by forward_detect/forward_full. With all_keywords the
// attention head runs every keyword in one batch (scores V x 1); otherwise
// attention archs require `keyword`.
struct TapedModel {
  ValId x = -1;
  ValId h = -1;
  ValId scores = -1;
  ValId probs = -1;
  ValId attention = -1;  // T x (1 or V) weights; -1 for non-attention archs
  std::vector<std::pair<int, int>> frame_map;
  // Param leaf ids in named_tensors order; the query id is -1 on
  // single-keyword attention forwards (the query row enters as a copy).
  std::vector<ValId> param_ids;
};
TapedModel build_forward(GradTape& tape, const ModelParams& p, const Tensor2D& feats,
                         std::optional<int> keyword, bool all_keywords = false);

// The two halves of build_forward. Masked sweeps run one encoder per segment
// and then several keyword heads over it; composing these is bitwise
// identical to forward_detect on the same input.
struct TapedEncoder {
  ValId x = -1;
  ValId h = -1;
  std::vector<std::pair<int, int>> frame_map;
  std::vector<ValId> conv_param_ids;  // w,b per layer
};
struct TapedHead {
  ValId scores = -1;
  ValId probs = -1;
  ValId attention = -1;
  std::vector<ValId> clf_param_ids;
  ValId query_param_id = -1;
};
TapedEncoder build_encoder(GradTape& tape, const ModelParams& p, const Tensor2D& feats);
TapedHead build_head(GradTape& tape, const ModelParams& p, ValId h,
                     std::optional<int> keyword, bool all_keywords = false);

DetectionResult forward_detect(const ModelParams& p, const Tensor2D& feats,
                               std::optional<int> keyword = std::nullopt);
ForwardFull forward_full(const ModelParams& p, const Tensor2D& feats,
                         std::optional<int> keyword = std::nullopt);

// All-keyword detection probabilities (batched attention head for attention
// archs; identical to forward_detect per keyword, bitwise).
std::vector<double> detect_all(const ModelParams& p, const Tensor2D& feats);

// Centre of the receptive field of encoder step t_enc, clamped to [0, t_in).
int receptive_field_center(const ArchitectureSpec& spec, int t_enc, int t_in);
// Centres for every encoder step of an utterance of t_in frames.
std::vector<int> receptive_field_centers(const ArchitectureSpec& spec, int t_in);

// Checkpoint container: "KWCK", u16 LE version, u32 LE header length, JSON
// header {arch, seed, epoch, tensors}, then float32 LE blobs in header order.
void save_checkpoint(const std::string& path, const ModelParams& p);
ModelParams load_checkpoint(const std::string& path);

}  // namespace kwloc

#endif  // KWLOC_MODEL_HPP
