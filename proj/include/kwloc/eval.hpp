#ifndef KWLOC_EVAL_HPP
#define KWLOC_EVAL_HPP

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kwloc/corpus.hpp"
#include "kwloc/localisation.hpp"
#include "kwloc/model.hpp"

namespace kwloc {

// Produces detection scores and keyword locations for evaluation. The
// model-backed implementation is below; fixtures implement this directly
// with tabulated values.
class Scorer {
 public:
  virtual ~Scorer() = default;
  // Detection probabilities for every vocab keyword of one utterance.
  virtual std::vector<double> detection(const std::string& utt_id) = 0;
  // Predicted locations (ms) for several keywords of one utterance.
  virtual std::vector<int> locate_ms(const std::string& utt_id,
                                     std::span<const int> keywords) = 0;
};

// Dispatch over the localisation methods with a shared encoder pass per
// utterance (or per segment); bitwise equal to the single-keyword ops.
std::vector<LocalisationResult> localise(const ModelParams& p, const FeatureMatrix& fm,
                                         LocMethod method, std::span<const int> keywords);

class ModelScorer : public Scorer {
 public:
  ModelScorer(const ModelParams& params, LocMethod method, const CorpusData& corpus);
  std::vector<double> detection(const std::string& utt_id) override;
  std::vector<int> locate_ms(const std::string& utt_id,
                             std::span<const int> keywords) override;

 private:
  const FeatureMatrix& features(const std::string& utt_id);
  const ModelParams& params_;
  LocMethod method_;
  const CorpusData& corpus_;
  std::map<std::string, std::vector<double>> det_cache_;
  std::string cur_utt_;
  FeatureMatrix cur_fm_;
};

struct MetricPRF {
  std::optional<double> precision;  // absent when nothing was detected
  double recall = 0.0;
  std::optional<double> f1;
};

struct KeywordRow {
  std::string keyword;
  int occurrences = 0;  // utterances containing the keyword (pair-once)
  // oracle
  int pairs = 0;
  int correct = 0;
  std::optional<double> accuracy;
  // actual
  int detected = 0;
  int det_correct = 0;
  int loc_correct = 0;
  MetricPRF det, loc;
  // spotting
  std::optional<double> spot_p10, spot_pn, loc_p10, loc_pn;
  std::vector<std::string> flags;
};

// Metric bundle for one (task, method, model, split) run. Localisation
// figures are checked against their detection/spotting upper bounds at
// construction time; a violation is an internal error.
struct EvalReport {
  std::string task;  // oracle | actual | spotting
  std::string method;
  std::string architecture;
  std::string split;
  double theta = 0.5;  // actual only

  // oracle overall
  int pairs = 0;
  int correct = 0;
  std::optional<double> oracle_accuracy;

  // actual overall (micro over all (utterance, keyword) decisions)
  MetricPRF det_micro, loc_micro;

  // spotting overall (macro over evaluable keywords)
  std::optional<double> spot_p10, spot_pn, loc_p10, loc_pn;

  std::vector<KeywordRow> per_keyword;
  std::vector<std::string> flags;

  std::string to_json() const;
  std::string to_text() const;
};

EvalReport eval_oracle(Scorer& scorer, const CorpusData& corpus, const std::string& split,
                       const std::string& method_name, const std::string& arch_name);
EvalReport eval_actual(Scorer& scorer, const CorpusData& corpus, const std::string& split,
                       const std::string& method_name, const std::string& arch_name,
                       double theta = 0.5);
EvalReport eval_spotting(Scorer& scorer, const CorpusData& corpus, const std::string& split,
                         const std::string& method_name, const std::string& arch_name);

// Keywords from an actual-task report that had at least one detection, with
// their F1; keywords with no detections are listed as undefined.
struct PerKeywordF1 {
  std::vector<KeywordRow> included;
  std::vector<std::string> excluded_no_detection;
};
PerKeywordF1 per_keyword_f1(const EvalReport& actual_report);

// For the top `k_utts` utterances by detection score of `keyword`, tallies
// the aligned word containing the predicted location ("--" when it falls in
// a gap); returns the `k_words` most common (word, count) pairs.
std::vector<std::pair<std::string, int>> confusion_top_words(
    Scorer& scorer, const CorpusData& corpus, const std::string& split, int keyword,
    int k_utts = 20, int k_words = 5);

// Uniform-random-location baseline: mean per-pair probability that a random
// frame lands inside the keyword's span, i.e. mean(span ms / utterance ms)
// over oracle pairs.
double duration_chance_baseline(const CorpusData& corpus, const std::string& split);
// The same quantity estimated by Monte-Carlo with `draws` uniform locations
// per pair.
double duration_chance_monte_carlo(const CorpusData& corpus, const std::string& split,
                                   int draws, uint64_t seed);

}  // namespace kwloc

#endif  // KWLOC_EVAL_HPP
