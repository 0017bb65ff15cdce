#include "kwloc/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "kwloc/numerics.hpp"
#include "kwloc/rng.hpp"

using nlohmann::ordered_json;

namespace kwloc {

// ---------------------------------------------------------------------------
// Scorers

std::vector<LocalisationResult> localise(const ModelParams& p, const FeatureMatrix& fm,
                                         LocMethod method, std::span<const int> keywords) {
  std::vector<LocalisationResult> out;
  switch (method) {
    case LocMethod::MaskedIn:
    case LocMethod::MaskedOut: {
      SegmentGrid grid = segment_grid(fm.feats.rows, fm.frame_period_ms);
      return loc_masked_sweep(p, fm, keywords, grid, method == LocMethod::MaskedIn);
    }
    case LocMethod::Attention: {
      if (!p.spec.is_attention())
        throw IncompatError("attention localisation needs an attention pooling layer "
                            "(architecture '" + p.spec.name + "' does not qualify)");
      // one encoder pass, one head per keyword; identical to loc_attention
      GradTape tape;
      TapedEncoder enc = build_encoder(tape, p, fm.feats);
      std::vector<int> centers = receptive_field_centers(p.spec, fm.feats.rows);
      for (int w : keywords) {
        TapedHead head = build_head(tape, p, enc.h, w);
        LocalisationResult r;
        r.keyword = w;
        r.method = LocMethod::Attention;
        r.resolution = LocResolution::EncoderFrame;
        r.alpha = tape.val(head.attention).data;
        r.centers = centers;
        r.tau_frame = predict_location(r.alpha, r.centers);
        out.push_back(std::move(r));
      }
      return out;
    }
    case LocMethod::ScoreAgg: {
      for (int w : keywords) out.push_back(loc_score_agg(p, fm, w));
      return out;
    }
    case LocMethod::GradCam: {
      for (int w : keywords) out.push_back(loc_gradcam(p, fm, w));
      return out;
    }
  }
  throw InternalError("unknown localisation method");
}

ModelScorer::ModelScorer(const ModelParams& params, LocMethod method,
                         const CorpusData& corpus)
    : params_(params), method_(method), corpus_(corpus) {}

const FeatureMatrix& ModelScorer::features(const std::string& utt_id) {
  if (cur_utt_ != utt_id) {
    cur_fm_ = corpus_.load(utt_id);
    cur_utt_ = utt_id;
  }
  return cur_fm_;
}

std::vector<double> ModelScorer::detection(const std::string& utt_id) {
  auto it = det_cache_.find(utt_id);
  if (it != det_cache_.end()) return it->second;
  std::vector<double> probs = detect_all(params_, features(utt_id).feats);
  det_cache_[utt_id] = probs;
  return probs;
}

std::vector<int> ModelScorer::locate_ms(const std::string& utt_id,
                                        std::span<const int> keywords) {
  const FeatureMatrix& fm = features(utt_id);
  std::vector<LocalisationResult> res = localise(params_, fm, method_, keywords);
  std::vector<int> out(res.size());
  for (size_t i = 0; i < res.size(); ++i) out[i] = res[i].tau_frame * fm.frame_period_ms;
  return out;
}

// ---------------------------------------------------------------------------
// Shared helpers

namespace {

bool tau_inside(const UttAlignment& a, const std::string& word, int tau_ms) {
  for (const auto& s : a.words)
    if (s.word == word && tau_ms >= s.start_ms && tau_ms < s.end_ms) return true;
  return false;
}

std::optional<double> ratio(int num, int den) {
  if (den == 0) return std::nullopt;
  return (double)num / (double)den;
}

MetricPRF make_prf(int correct, int detected, int occurrences) {
  MetricPRF m;
  m.precision = ratio(correct, detected);
  m.recall = occurrences > 0 ? (double)correct / (double)occurrences : 0.0;
  if (m.precision) {
    const double p = *m.precision, r = m.recall;
    m.f1 = (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
  }
  return m;
}

void check_upper_bound(const std::optional<double>& loc, const std::optional<double>& det,
                       const std::string& what) {
  if (loc && det && *loc > *det + 1e-12)
    throw InternalError("localisation " + what + " exceeds its detection upper bound");
}

void check_prf_bounds(const MetricPRF& loc, const MetricPRF& det, const std::string& ctx) {
  check_upper_bound(loc.precision, det.precision, ctx + " precision");
  if (loc.recall > det.recall + 1e-12)
    throw InternalError("localisation " + ctx + " recall exceeds its detection upper bound");
  check_upper_bound(loc.f1, det.f1, ctx + " F1");
}

}  // namespace

// ---------------------------------------------------------------------------
// Oracle

EvalReport eval_oracle(Scorer& scorer, const CorpusData& corpus, const std::string& split,
                       const std::string& method_name, const std::string& arch_name) {
  EvalReport rep;
  rep.task = "oracle";
  rep.method = method_name;
  rep.architecture = arch_name;
  rep.split = split;

  const auto& vocab = corpus.vocab;
  std::vector<KeywordRow> rows(vocab.size());
  for (size_t w = 0; w < vocab.size(); ++w) rows[w].keyword = vocab[w];

  for (const auto& utt : corpus.split(split)) {
    const UttAlignment& align = corpus.align.get(utt);
    std::vector<int> present;
    for (size_t w = 0; w < vocab.size(); ++w)
      if (align.contains(vocab[w])) present.push_back((int)w);
    if (present.empty()) continue;
    std::vector<int> taus = scorer.locate_ms(utt, present);
    for (size_t i = 0; i < present.size(); ++i) {
      const int w = present[i];
      rows[w].pairs += 1;
      rows[w].occurrences += 1;
      if (tau_inside(align, vocab[w], taus[i])) rows[w].correct += 1;
    }
  }

  for (auto& r : rows) {
    rep.pairs += r.pairs;
    rep.correct += r.correct;
    r.accuracy = ratio(r.correct, r.pairs);
  }
  rep.oracle_accuracy = ratio(rep.correct, rep.pairs);
  if (rep.pairs == 0) rep.flags.push_back("no evaluable (utterance, keyword) pairs");
  rep.per_keyword = std::move(rows);
  return rep;
}

// ---------------------------------------------------------------------------
// Actual (detection at theta, then localisation)

EvalReport eval_actual(Scorer& scorer, const CorpusData& corpus, const std::string& split,
                       const std::string& method_name, const std::string& arch_name,
                       double theta) {
  EvalReport rep;
  rep.task = "actual";
  rep.method = method_name;
  rep.architecture = arch_name;
  rep.split = split;
  rep.theta = theta;

  const auto& vocab = corpus.vocab;
  std::vector<KeywordRow> rows(vocab.size());
  for (size_t w = 0; w < vocab.size(); ++w) rows[w].keyword = vocab[w];

  for (const auto& utt : corpus.split(split)) {
    const UttAlignment& align = corpus.align.get(utt);
    const std::vector<double> probs = scorer.detection(utt);
    std::vector<int> detected;
    for (size_t w = 0; w < vocab.size(); ++w) {
      if (align.contains(vocab[w])) rows[w].occurrences += 1;
      if (probs[w] > theta) detected.push_back((int)w);
    }
    if (detected.empty()) continue;
    std::vector<int> taus = scorer.locate_ms(utt, detected);
    for (size_t i = 0; i < detected.size(); ++i) {
      const int w = detected[i];
      rows[w].detected += 1;
      const bool present = align.contains(vocab[w]);
      if (present) rows[w].det_correct += 1;
      if (present && tau_inside(align, vocab[w], taus[i])) rows[w].loc_correct += 1;
    }
  }

  int detected = 0, det_correct = 0, loc_correct = 0, occurrences = 0;
  for (auto& r : rows) {
    r.det = make_prf(r.det_correct, r.detected, r.occurrences);
    r.loc = make_prf(r.loc_correct, r.detected, r.occurrences);
    check_prf_bounds(r.loc, r.det, "per-keyword");
    detected += r.detected;
    det_correct += r.det_correct;
    loc_correct += r.loc_correct;
    occurrences += r.occurrences;
  }
  rep.det_micro = make_prf(det_correct, detected, occurrences);
  rep.loc_micro = make_prf(loc_correct, detected, occurrences);
  check_prf_bounds(rep.loc_micro, rep.det_micro, "micro");
  if (detected == 0) rep.flags.push_back("no detections at theta; precision undefined");
  rep.per_keyword = std::move(rows);
  return rep;
}

// ---------------------------------------------------------------------------
// Spotting (P@10 / P@N with localisation variants)

EvalReport eval_spotting(Scorer& scorer, const CorpusData& corpus, const std::string& split,
                         const std::string& method_name, const std::string& arch_name) {
  EvalReport rep;
  rep.task = "spotting";
  rep.method = method_name;
  rep.architecture = arch_name;
  rep.split = split;

  const auto& vocab = corpus.vocab;
  const auto& utts = corpus.split(split);

  // per-utterance detection first so the ranking is shared by all keywords
  std::vector<std::vector<double>> probs(utts.size());
  for (size_t u = 0; u < utts.size(); ++u) probs[u] = scorer.detection(utts[u]);

  std::vector<KeywordRow> rows(vocab.size());
  double sum_sp10 = 0, sum_spn = 0, sum_loc10 = 0, sum_locn = 0;
  int included = 0;
  if (utts.size() < 10)
    rep.flags.push_back("fewer than 10 utterances in split; P@10 uses all of them");

  for (size_t w = 0; w < vocab.size(); ++w) {
    KeywordRow& row = rows[w];
    row.keyword = vocab[w];
    std::vector<size_t> order(utts.size());
    for (size_t u = 0; u < order.size(); ++u) order[u] = u;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      if (probs[a][w] != probs[b][w]) return probs[a][w] > probs[b][w];
      return utts[a] < utts[b];  // deterministic tie-break
    });

    int n_true = 0;
    for (size_t u = 0; u < utts.size(); ++u)
      if (corpus.align.get(utts[u]).contains(vocab[w])) ++n_true;
    row.occurrences = n_true;
    if (n_true == 0) {
      row.flags.push_back("keyword absent from the evaluation split; excluded");
      continue;
    }

    auto precision_at = [&](size_t k, bool need_location) {
      k = std::min(k, order.size());
      int hits = 0;
      for (size_t r = 0; r < k; ++r) {
        const std::string& utt = utts[order[r]];
        const UttAlignment& align = corpus.align.get(utt);
        if (!align.contains(vocab[w])) continue;  // failed spot, failed localisation
        if (!need_location) {
          ++hits;
          continue;
        }
        const int kw[1] = {(int)w};
        const int tau = scorer.locate_ms(utt, kw)[0];
        if (tau_inside(align, vocab[w], tau)) ++hits;
      }
      return (double)hits / (double)k;
    };

    row.spot_p10 = precision_at(10, false);
    row.loc_p10 = precision_at(10, true);
    row.spot_pn = precision_at((size_t)n_true, false);
    row.loc_pn = precision_at((size_t)n_true, true);
    check_upper_bound(row.loc_p10, row.spot_p10, "P@10 (" + vocab[w] + ")");
    check_upper_bound(row.loc_pn, row.spot_pn, "P@N (" + vocab[w] + ")");
    sum_sp10 += *row.spot_p10;
    sum_spn += *row.spot_pn;
    sum_loc10 += *row.loc_p10;
    sum_locn += *row.loc_pn;
    ++included;
  }

  if (included > 0) {
    rep.spot_p10 = sum_sp10 / included;
    rep.spot_pn = sum_spn / included;
    rep.loc_p10 = sum_loc10 / included;
    rep.loc_pn = sum_locn / included;
    check_upper_bound(rep.loc_p10, rep.spot_p10, "macro P@10");
    check_upper_bound(rep.loc_pn, rep.spot_pn, "macro P@N");
  } else {
    rep.flags.push_back("no keyword occurs in the evaluation split");
  }
  rep.per_keyword = std::move(rows);
  return rep;
}

// ---------------------------------------------------------------------------

PerKeywordF1 per_keyword_f1(const EvalReport& actual_report) {
  if (actual_report.task != "actual")
    throw InputError("per_keyword_f1 needs an actual-task report");
  PerKeywordF1 out;
  for (const auto& r : actual_report.per_keyword) {
    if (r.detected > 0)
      out.included.push_back(r);
    else
      out.excluded_no_detection.push_back(r.keyword);
  }
  return out;
}

std::vector<std::pair<std::string, int>> confusion_top_words(
    Scorer& scorer, const CorpusData& corpus, const std::string& split, int keyword,
    int k_utts, int k_words) {
  const auto& vocab = corpus.vocab;
  if (keyword < 0 || keyword >= (int)vocab.size())
    throw InputError("confusion_top_words: keyword index out of range");
  const auto& utts = corpus.split(split);

  std::vector<std::pair<double, std::string>> ranked;
  for (const auto& utt : utts) ranked.push_back({scorer.detection(utt)[keyword], utt});
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });

  std::map<std::string, int> tally;
  const int n = std::min<int>(k_utts, (int)ranked.size());
  for (int i = 0; i < n; ++i) {
    const std::string& utt = ranked[i].second;
    const int kw[1] = {keyword};
    const int tau = scorer.locate_ms(utt, kw)[0];
    const UttAlignment& align = corpus.align.get(utt);
    std::string located = "--";  // gap / outside every aligned word
    for (const auto& s : align.words)
      if (tau >= s.start_ms && tau < s.end_ms) {
        located = s.word;
        break;
      }
    tally[located] += 1;
  }

  std::vector<std::pair<std::string, int>> out(tally.begin(), tally.end());
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if ((int)out.size() > k_words) out.resize(k_words);
  return out;
}

double duration_chance_baseline(const CorpusData& corpus, const std::string& split) {
  double acc = 0.0;
  int pairs = 0;
  for (const auto& utt : corpus.split(split)) {
    const UttAlignment& a = corpus.align.get(utt);
    for (const auto& word : corpus.vocab) {
      int span_ms = 0;
      bool present = false;
      for (const auto& s : a.words)
        if (s.word == word) {
          present = true;
          span_ms += s.end_ms - s.start_ms;
        }
      if (!present) continue;
      acc += (double)span_ms / (double)a.dur_ms;
      ++pairs;
    }
  }
  if (pairs == 0) throw InputError("duration_chance_baseline: no oracle pairs in split");
  return acc / (double)pairs;
}

double duration_chance_monte_carlo(const CorpusData& corpus, const std::string& split,
                                   int draws, uint64_t seed) {
  Rng rng(mix_seed(seed, hash_str("chance")));
  long hits = 0, total = 0;
  for (const auto& utt : corpus.split(split)) {
    const UttAlignment& a = corpus.align.get(utt);
    for (const auto& word : corpus.vocab) {
      if (!a.contains(word)) continue;
      for (int d = 0; d < draws; ++d) {
        const int tau = (int)rng.below((uint64_t)a.dur_ms);
        ++total;
        if (tau_inside(a, word, tau)) ++hits;
      }
    }
  }
  if (total == 0) throw InputError("duration_chance_monte_carlo: no oracle pairs in split");
  return (double)hits / (double)total;
}

// ---------------------------------------------------------------------------
// Serialisation

namespace {

ordered_json prf_json(const MetricPRF& m) {
  ordered_json j;
  j["precision"] = m.precision ? ordered_json(*m.precision) : ordered_json(nullptr);
  j["recall"] = m.recall;
  j["f1"] = m.f1 ? ordered_json(*m.f1) : ordered_json(nullptr);
  return j;
}

ordered_json opt_json(const std::optional<double>& v) {
  return v ? ordered_json(*v) : ordered_json(nullptr);
}

std::string fmt(const std::optional<double>& v) {
  if (!v) return "--";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", *v);
  return buf;
}
std::string fmt(double v) { return fmt(std::optional<double>(v)); }

}  // namespace

std::string EvalReport::to_json() const {
  ordered_json j;
  j["task"] = task;
  j["method"] = method;
  j["architecture"] = architecture;
  j["split"] = split;
  if (task == "actual") j["theta"] = theta;
  ordered_json overall;
  if (task == "oracle") {
    overall["pairs"] = pairs;
    overall["correct"] = correct;
    overall["accuracy"] = opt_json(oracle_accuracy);
  } else if (task == "actual") {
    overall["localisation"] = prf_json(loc_micro);
    overall["detection_upper_bound"] = prf_json(det_micro);
  } else {
    overall["localisation"] = {{"p@10", opt_json(loc_p10)}, {"p@n", opt_json(loc_pn)}};
    overall["spotting_upper_bound"] = {{"p@10", opt_json(spot_p10)},
                                       {"p@n", opt_json(spot_pn)}};
  }
  j["overall"] = overall;

  ordered_json rows = ordered_json::array();
  for (const auto& r : per_keyword) {
    ordered_json row;
    row["keyword"] = r.keyword;
    row["occurrences"] = r.occurrences;
    if (task == "oracle") {
      row["pairs"] = r.pairs;
      row["correct"] = r.correct;
      row["accuracy"] = opt_json(r.accuracy);
    } else if (task == "actual") {
      row["detected"] = r.detected;
      row["det_correct"] = r.det_correct;
      row["loc_correct"] = r.loc_correct;
      row["localisation"] = prf_json(r.loc);
      row["detection_upper_bound"] = prf_json(r.det);
    } else {
      row["localisation"] = {{"p@10", opt_json(r.loc_p10)}, {"p@n", opt_json(r.loc_pn)}};
      row["spotting_upper_bound"] = {{"p@10", opt_json(r.spot_p10)},
                                     {"p@n", opt_json(r.spot_pn)}};
    }
    if (!r.flags.empty()) row["flags"] = r.flags;
    rows.push_back(row);
  }
  j["per_keyword"] = rows;
  if (!flags.empty()) j["flags"] = flags;
  return j.dump(2);
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os << "task: " << task << "   method: " << method << "   architecture: " << architecture
     << "   split: " << split;
  if (task == "actual") os << "   theta: " << theta;
  os << "\n\n";
  auto line = [&](int n) {
    for (int i = 0; i < n; ++i) os << '-';
    os << "\n";
  };
  if (task == "oracle") {
    os << "overall accuracy: " << fmt(oracle_accuracy) << "   (" << correct << "/" << pairs
       << " pairs)\n\n";
    os << std::left << std::setw(14) << "keyword" << std::right << std::setw(8) << "pairs"
       << std::setw(10) << "correct" << std::setw(12) << "accuracy" << "\n";
    line(44);
    for (const auto& r : per_keyword)
      os << std::left << std::setw(14) << r.keyword << std::right << std::setw(8) << r.pairs
         << std::setw(10) << r.correct << std::setw(12) << fmt(r.accuracy) << "\n";
  } else if (task == "actual") {
    os << "localisation           P " << fmt(loc_micro.precision) << "   R "
       << fmt(loc_micro.recall) << "   F1 " << fmt(loc_micro.f1) << "\n";
    os << "detection upper bound  P " << fmt(det_micro.precision) << "   R "
       << fmt(det_micro.recall) << "   F1 " << fmt(det_micro.f1) << "\n\n";
    os << std::left << std::setw(14) << "keyword" << std::right << std::setw(9) << "occ"
       << std::setw(9) << "det" << std::setw(10) << "locP" << std::setw(10) << "locR"
       << std::setw(10) << "locF1" << std::setw(10) << "detF1" << "\n";
    line(72);
    for (const auto& r : per_keyword)
      os << std::left << std::setw(14) << r.keyword << std::right << std::setw(9)
         << r.occurrences << std::setw(9) << r.detected << std::setw(10)
         << fmt(r.loc.precision) << std::setw(10) << fmt(r.loc.recall) << std::setw(10)
         << fmt(r.loc.f1) << std::setw(10) << fmt(r.det.f1) << "\n";
  } else {
    os << "localisation           P@10 " << fmt(loc_p10) << "   P@N " << fmt(loc_pn) << "\n";
    os << "spotting upper bound   P@10 " << fmt(spot_p10) << "   P@N " << fmt(spot_pn)
       << "\n\n";
    os << std::left << std::setw(14) << "keyword" << std::right << std::setw(9) << "occ"
       << std::setw(12) << "locP@10" << std::setw(12) << "locP@N" << std::setw(12)
       << "spotP@10" << std::setw(12) << "spotP@N" << "\n";
    line(71);
    for (const auto& r : per_keyword)
      os << std::left << std::setw(14) << r.keyword << std::right << std::setw(9)
         << r.occurrences << std::setw(12) << fmt(r.loc_p10) << std::setw(12)
         << fmt(r.loc_pn) << std::setw(12) << fmt(r.spot_p10) << std::setw(12)
         << fmt(r.spot_pn) << "\n";
  }
  for (const auto& f : flags) os << "note: " << f << "\n";
  return os.str();
}

}  // namespace kwloc
