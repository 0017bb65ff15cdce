#include "kwloc/supervision.hpp"

#include <fstream>

#include <json.hpp>

#include "kwloc/rng.hpp"

using nlohmann::json;

namespace kwloc {

TargetVector bow_targets(const UttAlignment& alignment,
                         const std::vector<std::string>& vocab) {
  if (vocab.empty()) throw ConfigError("bow_targets: empty vocabulary");
  TargetVector t;
  t.utt_id = alignment.utt_id;
  t.kind = TargetKind::Bow;
  t.y.assign(vocab.size(), 0.0);
  for (size_t w = 0; w < vocab.size(); ++w)
    if (alignment.contains(vocab[w])) t.y[w] = 1.0;
  return t;
}

void TaggerNoiseConfig::validate() const {
  if (p_fn < 0.0 || p_fn > 1.0 || p_fp < 0.0 || p_fp > 1.0)
    throw ConfigError("tagger noise: rates must lie in [0,1]");
  if (kappa <= 0.0) throw ConfigError("tagger noise: kappa must be > 0");
}

TargetVector simulate_tagger(const TargetVector& bow, const TaggerNoiseConfig& cfg) {
  cfg.validate();
  if (bow.kind != TargetKind::Bow)
    throw InputError("simulate_tagger: input targets must be bag-of-words");
  TargetVector t;
  t.utt_id = bow.utt_id;
  t.kind = TargetKind::Tagger;
  t.y.resize(bow.y.size());
  const uint64_t utt_h = hash_str(bow.utt_id.c_str());
  for (size_t w = 0; w < bow.y.size(); ++w) {
    Rng rng(mix_seed(cfg.seed, utt_h, (uint64_t)w));
    const bool positive = bow.y[w] >= 0.5;
    const double flip = rng.uniform();
    const bool reported_positive = positive ? (flip >= cfg.p_fn) : (flip < cfg.p_fp);
    t.y[w] = reported_positive ? rng.beta_k1(cfg.kappa) : rng.beta_1k(cfg.kappa);
  }
  return t;
}

std::map<std::string, std::vector<double>> load_soft_labels(const std::string& path,
                                                            size_t vocab_size) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open soft labels: " + path);
  std::map<std::string, std::vector<double>> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError("unparseable soft label JSON on line " + std::to_string(line_no) +
                        ": " + e.what());
    }
    std::string utt;
    std::vector<double> probs;
    try {
      utt = j.at("utt").get<std::string>();
      probs = j.at("probs").get<std::vector<double>>();
    } catch (const json::exception& e) {
      throw FormatError("soft label schema violation on line " + std::to_string(line_no) +
                        ": " + e.what());
    }
    if (probs.size() != vocab_size)
      throw FormatError("soft labels on line " + std::to_string(line_no) + " have " +
                        std::to_string(probs.size()) + " entries, expected " +
                        std::to_string(vocab_size));
    for (double p : probs)
      if (p < 0.0 || p > 1.0)
        throw FormatError("soft label outside [0,1] on line " + std::to_string(line_no));
    out[utt] = std::move(probs);
  }
  return out;
}

double taped_training_loss(GradTape& tape, const ModelParams& params,
                           const Tensor2D& features, const TargetVector& target,
                           std::vector<ValId>& param_ids) {
  if (target.y.size() != (size_t)params.spec.vocab_size)
    throw InputError("target has " + std::to_string(target.y.size()) +
                     " entries, model vocab is " + std::to_string(params.spec.vocab_size));
  TapedModel m = build_forward(tape, params, features, std::nullopt, /*all_keywords=*/true);
  const Tensor2D& probs = tape.val(m.probs);
  Tensor2D tgt(probs.rows, probs.cols);
  if (tgt.size() != target.y.size())
    throw InternalError("training_loss: prediction shape does not cover the vocab");
  for (size_t i = 0; i < target.y.size(); ++i) tgt.data[i] = target.y[i];
  ValId loss = tape.bce_loss(m.probs, std::move(tgt));
  const double loss_val = tape.val(loss).at(0, 0);
  tape.backward(loss);
  param_ids = std::move(m.param_ids);
  return loss_val;
}

LossAndGrads training_loss(const ModelParams& params, const Tensor2D& features,
                           const TargetVector& target) {
  GradTape tape;
  std::vector<ValId> ids;
  LossAndGrads out;
  out.loss = taped_training_loss(tape, params, features, target, ids);
  out.grads.reserve(ids.size());
  for (ValId id : ids) out.grads.push_back(tape.grad(id));
  return out;
}

}  // namespace kwloc
