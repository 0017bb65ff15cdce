#ifndef KWLOC_SUPERVISION_HPP
#define KWLOC_SUPERVISION_HPP

#include <map>
#include <string>
#include <vector>

#include "kwloc/corpus.hpp"
#include "kwloc/model.hpp"

namespace kwloc {

enum class TargetKind { Bow, Tagger };

struct TargetVector {
  std::string utt_id;
  std::vector<double> y;  // bow: {0,1}; tagger: [0,1]
  TargetKind kind = TargetKind::Bow;
};

// y_w = 1 iff keyword w occurs at least once; counts and order are discarded,
// words outside the vocab are ignored.
TargetVector bow_targets(const UttAlignment& alignment,
                         const std::vector<std::string>& vocab);

// Stand-in for a pretrained visual tagger: corrupts exact bag-of-words labels
// into soft, possibly wrong ones.
struct TaggerNoiseConfig {
  double p_fn = 0.0;   // a positive is reported low with this probability
  double p_fp = 0.0;   // a negative is reported high with this probability
  double kappa = 8.0;  // Beta concentration; larger = scores closer to 0/1
  uint64_t seed = 0;

  void validate() const;
};

// Per (utt, keyword) streams are derived from (seed, utt_id, keyword), so the
// output is reproducible bit for bit regardless of call order. Kept positives
// draw Beta(kappa, 1) (mass near 1), negatives Beta(1, kappa); flips swap the
// two distributions.
TargetVector simulate_tagger(const TargetVector& bow, const TaggerNoiseConfig& cfg);

// Optional external soft labels, JSON lines {"utt": id, "probs": [V reals]}.
std::map<std::string, std::vector<double>> load_soft_labels(const std::string& path,
                                                            size_t vocab_size);

struct LossAndGrads {
  double loss = 0.0;
  std::vector<Tensor2D> grads;  // aligned with named_tensors(params)
};

// Mean BCE over the vocabulary plus gradients for every parameter tensor.
// Attention architectures run all V keyword heads over one shared encoder
// pass (the per-keyword mean matches looping keywords one at a time).
LossAndGrads training_loss(const ModelParams& params, const Tensor2D& features,
                           const TargetVector& target);

// Tape-level variant used by the train loop to avoid copying gradients:
// returns the loss and the param leaf ids (named_tensors order) after a
// backward sweep on `tape`.
double taped_training_loss(GradTape& tape, const ModelParams& params,
                           const Tensor2D& features, const TargetVector& target,
                           std::vector<ValId>& param_ids);

}  // namespace kwloc

#endif  // KWLOC_SUPERVISION_HPP
