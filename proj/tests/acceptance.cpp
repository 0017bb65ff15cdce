// Acceptance suite: runs every gate criterion end to end and prints one
// PASS/FAIL line per criterion. Returns nonzero if any criterion fails.
//
// The desk-scale learnability run (criterion 5) trains the full CNN-Attend
// architecture single-threaded and takes the bulk of the runtime.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "kwloc/corpus.hpp"
#include "kwloc/eval.hpp"
#include "kwloc/kernels.hpp"
#include "kwloc/localisation.hpp"
#include "kwloc/model.hpp"
#include "kwloc/numerics.hpp"
#include "kwloc/supervision.hpp"
#include "kwloc/training.hpp"

#include "gradcheck.hpp"
#include "model_gradcheck.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace kwloc;
using kwtest::gradcheck;
using kwtest::random_tensor;
using kwtest::rel_err;

namespace {

// --- criterion 5/7 knobs -----------------------------------------------
// The spec pins V=10, D=13, 2000/200/200, seed 0, CNN-Attend, BoW, <=30
// epochs and a 15-minute single-threaded budget; everything below is
// harness-chosen and recorded here.
struct DeskScale {
  static SynthConfig corpus() {
    SynthConfig c;
    c.vocab_size = 10;
    c.feature_dim = 13;
    c.frame_period_ms = 10;
    c.words_per_utt_min = 3;
    c.words_per_utt_max = 4;
    c.word_dur_min_ms = 100;
    c.word_dur_max_ms = 200;
    c.gap_min_ms = 30;
    c.gap_max_ms = 90;
    c.template_noise = 0.2;
    c.filler_words = 5;
    c.n_train = 2000;
    c.n_dev = 200;
    c.n_test = 200;
    c.seed = 0;
    return c;
  }
  static constexpr double kLr = 1e-3;
  static constexpr int kEpochs = 2;
  static constexpr int kBatch = 4;
  static constexpr long kBudgetMs = 15 * 60 * 1000;
};

struct Harness {
  int failures = 0;
  std::string scratch;

  void report(int n, const std::string& label, bool pass, const std::string& detail) {
    std::printf("[%s] criterion %d: %s%s%s\n", pass ? "PASS" : "FAIL", n, label.c_str(),
                detail.empty() ? "" : " -- ", detail.c_str());
    std::fflush(stdout);
    if (!pass) ++failures;
  }
};

std::string fmt2(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

// ---------------------------------------------------------------------------
// criterion 1: gradient suite, every op + full model, rel err < 1e-4, < 2 min

void criterion1(Harness& h) {
  const auto t0 = std::chrono::steady_clock::now();
  constexpr double kTol = 1e-4;
  constexpr int kSeeds = 100;
  double worst = 0.0;
  std::string worst_op = "none";
  auto track = [&](const char* op, double err) {
    if (err > worst) {
      worst = err;
      worst_op = op;
    }
  };

  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(40000 + seed);

    {  // conv1d (x, w, b)
      const int t = rng.range_int(5, 10), c = rng.range_int(1, 3), f = rng.range_int(1, 3);
      const int width = rng.range_int(1, 5), pad = rng.range_int(0, 2);
      if (t + 2 * pad - width + 1 >= 1) {
        Tensor2D co = random_tensor(rng, t + 2 * pad - width + 1, f);
        track("conv1d", gradcheck({random_tensor(rng, t, c), random_tensor(rng, f, c * width),
                                   random_tensor(rng, 1, f)},
                                  [&](GradTape& tape, const std::vector<ValId>& in) {
                                    return tape.weighted_sum(
                                        tape.conv1d(in[0], in[1], in[2], width, pad), co);
                                  }));
      }
    }
    {  // maxpool
      const int t = rng.range_int(4, 12), c = rng.range_int(1, 3);
      const int width = rng.range_int(2, std::min(t, 4)), stride = rng.range_int(1, 3);
      const int t_out = (t - width) / stride + 1;
      Tensor2D co = random_tensor(rng, t_out, c);
      auto skip = [&](const std::vector<Tensor2D>& in, size_t, size_t j) {
        const int row = (int)j / c, col = (int)j % c;
        for (int w0 = 0; w0 < t_out; ++w0) {
          const int base = w0 * stride;
          if (row < base || row >= base + width) continue;
          for (int k = 0; k < width; ++k)
            if (base + k != row &&
                std::abs(in[0].at(base + k, col) - in[0].at(row, col)) < 1e-3)
              return true;
        }
        return false;
      };
      track("maxpool1d",
            gradcheck({random_tensor(rng, t, c)},
                      [&](GradTape& tape, const std::vector<ValId>& in) {
                        return tape.weighted_sum(tape.maxpool1d(in[0], width, stride), co);
                      },
                      1e-4, skip));
    }
    {  // linear
      const int t = rng.range_int(1, 4), di = rng.range_int(1, 5), dо = rng.range_int(1, 4);
      Tensor2D co = random_tensor(rng, t, dо);
      track("linear", gradcheck({random_tensor(rng, t, di), random_tensor(rng, dо, di),
                                 random_tensor(rng, 1, dо)},
                                [&](GradTape& tape, const std::vector<ValId>& in) {
                                  return tape.weighted_sum(tape.linear(in[0], in[1], in[2]), co);
                                }));
    }
    {  // relu (kinks skipped)
      const int t = rng.range_int(2, 6), c = rng.range_int(1, 4);
      Tensor2D co = random_tensor(rng, t, c);
      track("relu", gradcheck({random_tensor(rng, t, c)},
                              [&](GradTape& tape, const std::vector<ValId>& in) {
                                return tape.weighted_sum(tape.relu(in[0]), co);
                              },
                              1e-4,
                              [](const std::vector<Tensor2D>& in, size_t i, size_t j) {
                                return std::abs(in[i].data[j]) < 1e-3;
                              }));
    }
    {  // sigmoid
      const int t = rng.range_int(2, 6), c = rng.range_int(1, 4);
      Tensor2D co = random_tensor(rng, t, c);
      track("sigmoid", gradcheck({random_tensor(rng, t, c)},
                                 [&](GradTape& tape, const std::vector<ValId>& in) {
                                   return tape.weighted_sum(tape.sigmoid(in[0]), co);
                                 }));
    }
    {  // softmax (columnwise)
      const int t = rng.range_int(2, 8), c = rng.range_int(1, 3);
      Tensor2D co = random_tensor(rng, t, c);
      track("softmax", gradcheck({random_tensor(rng, t, c)},
                                 [&](GradTape& tape, const std::vector<ValId>& in) {
                                   return tape.weighted_sum(tape.col_softmax(in[0]), co);
                                 }));
    }
    {  // log_mean_exp
      const int t = rng.range_int(2, 8), c = rng.range_int(1, 3);
      const double r = std::vector<double>{0.1, 1.0, 5.0}[seed % 3];
      Tensor2D co = random_tensor(rng, 1, c);
      track("log_mean_exp", gradcheck({random_tensor(rng, t, c)},
                                      [&](GradTape& tape, const std::vector<ValId>& in) {
                                        return tape.weighted_sum(tape.lme_pool(in[0], r), co);
                                      }));
    }
    {  // dot_attention (H and q)
      const int t = rng.range_int(2, 7), k = rng.range_int(1, 4);
      Tensor2D co = random_tensor(rng, 1, k);
      track("dot_attention",
            gradcheck({random_tensor(rng, t, k), random_tensor(rng, 1, k)},
                      [&](GradTape& tape, const std::vector<ValId>& in) {
                        auto [att, ctx] = tape.dot_attention(in[0], in[1]);
                        (void)att;
                        return tape.weighted_sum(ctx, co);
                      }));
    }
    {  // bce_loss
      const int v = rng.range_int(1, 6);
      Tensor2D target(v, 1);
      for (double& y : target.data) y = rng.uniform(0.0, 1.0);
      Tensor2D yhat(v, 1);
      for (double& p : yhat.data) p = rng.uniform(0.05, 0.95);
      track("bce_loss", gradcheck({yhat}, [&](GradTape& tape, const std::vector<ValId>& in) {
              return tape.bce_loss(in[0], target);
            }));
    }
  }

  // full-model loss on all three head types, ~33 seeds each
  for (int seed = 0; seed < 33; ++seed) {
    track("full-model (attention)",
          kwtest::model_loss_gradcheck(kwtest::toy_attention_spec(), 100 + seed, 12, 2));
    track("full-model (max-pool)",
          kwtest::model_loss_gradcheck(kwtest::toy_pool_spec(), 200 + seed, 12, 2));
    track("full-model (lme)",
          kwtest::model_loss_gradcheck(kwtest::toy_psc_spec(), 300 + seed, 12, 2));
  }

  const long ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
  const bool pass = worst < kTol && ms < 120000;
  h.report(1, "gradient suite (all ops + full model vs central differences)", pass,
           "worst rel err " + fmt2(worst) + " in " + worst_op + ", " +
               std::to_string(ms) + " ms");
}

// ---------------------------------------------------------------------------
// criterion 2: pooling limits of Eq-style log-mean-exp

void criterion2(Harness& h) {
  Rng rng(2222);
  double worst_mean = 0.0, worst_max = 0.0;
  bool sandwich = true;
  // the r=1e3 tolerance of 1e-3 forces length-2 vectors: for a separated
  // maximum, max - lme = log(T)/r exactly, and log(3)/1e3 > 1e-3 already
  for (int i = 0; i < 1000; ++i) {
    double v[2] = {rng.uniform(-2, 2), rng.uniform(-2, 2)};
    const double mean = 0.5 * (v[0] + v[1]);
    const double mx = std::max(v[0], v[1]);
    worst_mean = std::max(worst_mean, std::abs(log_mean_exp(v, 2, 1e-6) - mean));
    worst_max = std::max(worst_max, std::abs(log_mean_exp(v, 2, 1e3) - mx));
  }
  // mean <= lme <= max over longer vectors and the full r grid
  for (int i = 0; i < 1000 && sandwich; ++i) {
    const int n = rng.range_int(2, 64);
    std::vector<double> hvec(n);
    double mean = 0.0, mx = -1e9;
    for (double& x : hvec) {
      x = rng.uniform(-2, 2);
      mean += x;
      mx = std::max(mx, x);
    }
    mean /= n;
    for (double r : {1e-6, 0.1, 1.0, 10.0, 1e3}) {
      const double v = log_mean_exp(hvec.data(), hvec.size(), r);
      if (v < mean - 1e-12 || v > mx + 1e-12) sandwich = false;
    }
  }
  const bool pass = worst_mean < 1e-4 && worst_max < 1e-3 && sandwich;
  h.report(2, "log-mean-exp pooling limits (mean and max)", pass,
           "|lme(1e-6)-mean| " + fmt2(worst_mean) + ", |lme(1e3)-max| " + fmt2(worst_max) +
               ", mean<=lme<=max " + (sandwich ? "holds" : "VIOLATED"));
}

// ---------------------------------------------------------------------------
// criterion 3: masked sweeps bitwise equal to naive recomputation

void criterion3(Harness& h) {
  int mismatches = 0;
  for (int pair = 0; pair < 20; ++pair) {
    Rng rng(3300 + pair);
    const bool attention = pair % 2 == 0;
    ModelParams p = attention ? init_params(kwtest::toy_attention_spec(3, 2), pair)
                              : init_params(kwtest::toy_pool_spec(3, 2), pair);
    FeatureMatrix fm;
    fm.frame_period_ms = 10;
    fm.feats = random_tensor(rng, rng.range_int(25, 70), 2);
    SegmentGrid grid = segment_grid(fm.feats.rows, fm.frame_period_ms);
    const std::vector<int> keywords = {0, 1, 2};

    for (bool masked_in : {true, false}) {
      auto batched = loc_masked_sweep(p, fm, keywords, grid, masked_in);
      for (size_t k = 0; k < keywords.size(); ++k) {
        for (size_t s = 0; s < grid.windows.size(); ++s) {
          Tensor2D masked = fm.feats;
          for (int t = 0; t < masked.rows; ++t) {
            const bool inside =
                t >= grid.windows[s].start_frame && t < grid.windows[s].end_frame;
            if (inside != masked_in)
              for (int c = 0; c < masked.cols; ++c) masked.at(t, c) = 0.0;
          }
          const double prob = attention ? forward_detect(p, masked, keywords[k]).probs[0]
                                        : forward_detect(p, masked).probs[keywords[k]];
          const double expect = masked_in ? prob : 1.0 - prob;
          if (batched[k].alpha[s] != expect) ++mismatches;
        }
      }
    }
  }
  h.report(3, "masked-in/out sweeps bitwise equal to naive per-segment recomputation",
           mismatches == 0, std::to_string(mismatches) + " mismatching scores of 20 pairs");
}

// ---------------------------------------------------------------------------
// criterion 4: Grad-CAM gamma vs finite differences on a 2-layer toy model

void criterion4(Harness& h) {
  double worst = 0.0;
  bool nonneg = true;
  for (int seed = 0; seed < 5; ++seed) {
    ModelParams p = init_params(kwtest::toy_pool_spec(3, 2), 40 + seed);
    Rng rng(4400 + seed);
    FeatureMatrix fm;
    fm.frame_period_ms = 10;
    fm.feats = random_tensor(rng, 16, 2);
    const int w = seed % 3;

    LocalisationResult r = loc_gradcam(p, fm, w);
    for (double a : r.alpha)
      if (a < 0.0) nonneg = false;

    ForwardFull full = forward_full(p, fm.feats);
    const Tensor2D& h0 = full.enc.h;
    auto head_prob = [&](const Tensor2D& hm) {
      GradTape tape;
      TapedHead head = build_head(tape, p, tape.leaf(hm), std::nullopt);
      return tape.val(head.probs).at(0, w);
    };
    GradTape tape;
    ValId hid = tape.leaf(h0);
    TapedHead head = build_head(tape, p, hid, std::nullopt);
    tape.backward(head.probs, 0, w);
    const Tensor2D& dh = tape.grad(hid);
    const double eps = 1e-4;
    for (int k = 0; k < h0.cols; ++k) {
      double g_analytic = 0.0, g_fd = 0.0;
      for (int t = 0; t < h0.rows; ++t) {
        g_analytic += dh.at(t, k);
        Tensor2D hp = h0, hm2 = h0;
        hp.at(t, k) += eps;
        hm2.at(t, k) -= eps;
        g_fd += (head_prob(hp) - head_prob(hm2)) / (2 * eps);
      }
      worst = std::max(worst, rel_err(g_analytic / h0.rows, g_fd / h0.rows));
    }
  }
  h.report(4, "Grad-CAM filter importances vs finite differences; scores non-negative",
           worst < 1e-3 && nonneg,
           "worst rel err " + fmt2(worst) + (nonneg ? "" : ", NEGATIVE alpha seen"));
}

// ---------------------------------------------------------------------------
// criterion 5: desk-scale learnability (the long run)

struct DeskRun {
  std::string corpus_dir;
  std::string model_path;
  bool trained = false;
};

double detection_f1(const ModelParams& p, const CorpusData& corpus, const std::string& split,
                    double theta) {
  int tp = 0, fp = 0, fn = 0;
  for (const auto& id : corpus.split(split)) {
    FeatureMatrix fm = corpus.load(id);
    const std::vector<double> probs = detect_all(p, fm.feats);
    const UttAlignment& a = corpus.align.get(id);
    for (size_t w = 0; w < probs.size(); ++w) {
      const bool detected = probs[w] > theta;
      const bool present = a.contains(corpus.vocab[w]);
      tp += detected && present;
      fp += detected && !present;
      fn += !detected && present;
    }
  }
  const double prec = tp + fp ? (double)tp / (tp + fp) : 0.0;
  const double rec = tp + fn ? (double)tp / (tp + fn) : 0.0;
  return prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
}

void criterion5(Harness& h, DeskRun& run) {
  run.corpus_dir = h.scratch + "/desk_corpus";
  synth_corpus(DeskScale::corpus(), run.corpus_dir);
  CorpusData corpus = load_corpus(run.corpus_dir);

  TrainConfig cfg;
  cfg.architecture = "CNN-Attend";
  cfg.supervision = "bow";
  cfg.lr = DeskScale::kLr;
  cfg.epochs = DeskScale::kEpochs;
  cfg.batch_size = DeskScale::kBatch;
  cfg.seed = 0;
  cfg.spec_augment.enabled = false;

  kern::set_num_threads(1);  // the budget is defined single-threaded
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult res = train(cfg, corpus, h.scratch + "/desk_run");
  const long train_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                            std::chrono::steady_clock::now() - t0)
                            .count();
  kern::set_num_threads(0);
  run.model_path = res.best_path;
  run.trained = true;

  ModelParams model = load_checkpoint(res.best_path);
  const double f1 = detection_f1(model, corpus, "dev", 0.5);

  const double chance = duration_chance_baseline(corpus, "test");
  const double chance_mc = duration_chance_monte_carlo(corpus, "test", 200, 7);
  const bool chance_ok = std::abs(chance - chance_mc) <= 0.02;

  ModelScorer att_scorer(model, LocMethod::Attention, corpus);
  EvalReport att = eval_oracle(att_scorer, corpus, "test", "attention", "CNN-Attend");
  ModelScorer mask_scorer(model, LocMethod::MaskedIn, corpus);
  EvalReport mask = eval_oracle(mask_scorer, corpus, "test", "masked-in", "CNN-Attend");

  const double att_acc = att.oracle_accuracy.value_or(0.0);
  const double mask_acc = mask.oracle_accuracy.value_or(0.0);
  const bool pass = train_ms <= DeskScale::kBudgetMs && f1 >= 0.80 && chance_ok &&
                    att_acc >= 3.0 * chance && mask_acc >= 3.0 * chance;
  h.report(5, "desk-scale learnability (CNN-Attend, BoW, V=10, 2000/200/200)", pass,
           "train " + std::to_string(train_ms / 1000) + " s (budget 900), dev F1 " +
               fmt2(f1) + ", oracle attention " + fmt2(att_acc) + " / masked-in " +
               fmt2(mask_acc) + " vs 3x chance " + fmt2(3.0 * chance) +
               (chance_ok ? "" : ", CHANCE MC MISMATCH"));
}

// ---------------------------------------------------------------------------
// criterion 6: upper-bound ordering relations on real evaluation runs

void criterion6(Harness& h, const DeskRun& run) {
  if (!run.trained) {
    h.report(6, "ordering relations (needs the criterion-5 model)", false, "no model");
    return;
  }
  // EvalReport construction already throws on a violated bound; this re-checks
  // the emitted numbers on a real trained model.
  CorpusData corpus = load_corpus(run.corpus_dir);
  ModelParams model = load_checkpoint(run.model_path);
  ModelScorer scorer(model, LocMethod::Attention, corpus);
  bool ok = true;
  std::string detail;
  try {
    EvalReport actual = eval_actual(scorer, corpus, "test", "attention", "CNN-Attend", 0.5);
    EvalReport spotting = eval_spotting(scorer, corpus, "test", "attention", "CNN-Attend");
    auto leq = [](const std::optional<double>& a, const std::optional<double>& b) {
      return !a || !b || *a <= *b + 1e-12;
    };
    ok = ok && leq(actual.loc_micro.precision, actual.det_micro.precision);
    ok = ok && actual.loc_micro.recall <= actual.det_micro.recall + 1e-12;
    ok = ok && leq(actual.loc_micro.f1, actual.det_micro.f1);
    for (const auto& r : actual.per_keyword) {
      ok = ok && leq(r.loc.precision, r.det.precision);
      ok = ok && leq(r.loc.f1, r.det.f1);
    }
    ok = ok && leq(spotting.loc_p10, spotting.spot_p10);
    ok = ok && leq(spotting.loc_pn, spotting.spot_pn);
    for (const auto& r : spotting.per_keyword) {
      ok = ok && leq(r.loc_p10, r.spot_p10);
      ok = ok && leq(r.loc_pn, r.spot_pn);
    }
    detail = "actual loc F1 " +
             (actual.loc_micro.f1 ? fmt2(*actual.loc_micro.f1) : std::string("--")) +
             " <= det F1 " +
             (actual.det_micro.f1 ? fmt2(*actual.det_micro.f1) : std::string("--")) +
             "; loc P@10 " + (spotting.loc_p10 ? fmt2(*spotting.loc_p10) : std::string("--")) +
             " <= spotting P@10 " +
             (spotting.spot_p10 ? fmt2(*spotting.spot_p10) : std::string("--"));
  } catch (const std::exception& e) {
    ok = false;
    detail = e.what();
  }
  h.report(6, "localisation metrics bounded by detection/spotting upper bounds", ok, detail);
}

// ---------------------------------------------------------------------------
// criterion 7: noisy tagger supervision strictly hurts every loc metric

void criterion7(Harness& h) {
  SynthConfig sc;
  sc.vocab_size = 6;
  sc.feature_dim = 13;
  sc.words_per_utt_min = 3;
  sc.words_per_utt_max = 4;
  sc.word_dur_min_ms = 100;
  sc.word_dur_max_ms = 200;
  sc.gap_min_ms = 30;
  sc.gap_max_ms = 90;
  sc.template_noise = 0.3;
  sc.filler_words = 3;
  sc.n_train = 500;
  sc.n_dev = 80;
  sc.n_test = 80;
  sc.seed = 1;
  const std::string dir = h.scratch + "/gap_corpus";
  synth_corpus(sc, dir);
  CorpusData corpus = load_corpus(dir);

  TrainConfig cfg;
  cfg.architecture = "CNN-Attend";
  cfg.lr = DeskScale::kLr;
  cfg.epochs = 4;
  cfg.batch_size = DeskScale::kBatch;
  cfg.seed = 0;
  cfg.spec_augment.enabled = false;

  cfg.supervision = "bow";
  TrainResult clean = train(cfg, corpus, h.scratch + "/gap_clean");
  cfg.supervision = "tagger";
  cfg.tagger_noise.p_fn = 0.3;
  cfg.tagger_noise.p_fp = 0.05;
  cfg.tagger_noise.kappa = 8.0;
  cfg.tagger_noise.seed = 0;
  TrainResult noisy = train(cfg, corpus, h.scratch + "/gap_noisy");

  auto metrics = [&](const std::string& path) {
    ModelParams model = load_checkpoint(path);
    ModelScorer scorer(model, LocMethod::Attention, corpus);
    EvalReport oracle = eval_oracle(scorer, corpus, "test", "attention", "CNN-Attend");
    EvalReport actual = eval_actual(scorer, corpus, "test", "attention", "CNN-Attend", 0.5);
    EvalReport spotting = eval_spotting(scorer, corpus, "test", "attention", "CNN-Attend");
    // absent precision (no detections) counts as 0: nothing was localised
    return std::vector<double>{oracle.oracle_accuracy.value_or(0.0),
                               actual.loc_micro.precision.value_or(0.0),
                               actual.loc_micro.recall,
                               actual.loc_micro.f1.value_or(0.0),
                               spotting.loc_p10.value_or(0.0),
                               spotting.loc_pn.value_or(0.0)};
  };
  const std::vector<double> m_clean = metrics(clean.best_path);
  const std::vector<double> m_noisy = metrics(noisy.best_path);
  static const char* names[] = {"oracle-acc", "actual-P", "actual-R",
                                "actual-F1", "loc-P@10", "loc-P@N"};
  bool pass = true;
  std::string detail;
  for (size_t i = 0; i < m_clean.size(); ++i) {
    if (!(m_noisy[i] < m_clean[i])) pass = false;
    detail += std::string(i ? ", " : "") + names[i] + " " + fmt2(m_noisy[i]) + "<" +
              fmt2(m_clean[i]);
  }
  h.report(7, "tagger noise (p_fn 0.3, p_fp 0.05) strictly lowers every loc metric", pass,
           detail);
}

// ---------------------------------------------------------------------------
// criterion 8: hand-enumerated metric fixtures

class TableScorer : public Scorer {
 public:
  std::map<std::string, std::vector<double>> det;
  std::map<std::pair<std::string, int>, int> tau;
  std::vector<double> detection(const std::string& utt) override { return det.at(utt); }
  std::vector<int> locate_ms(const std::string& utt, std::span<const int> kws) override {
    std::vector<int> out;
    for (int w : kws) out.push_back(tau.at({utt, w}));
    return out;
  }
};

void criterion8(Harness& h) {
  using kwtest::make_utt;
  int failed = 0;
  std::string which;
  auto expect = [&](const char* name, bool ok) {
    if (!ok) {
      ++failed;
      which += std::string(" ") + name;
    }
  };
  auto eq = [](const std::optional<double>& a, double b) {
    return a.has_value() && std::abs(*a - b) < 1e-12;
  };

  {  // fixture 1: oracle counting
    kwtest::FixtureCorpus fc;
    CorpusData c = fc.build({"dog", "ball"},
                            {make_utt("u1", 1000, {{"dog", 100, 300}, {"ball", 400, 700}}),
                             make_utt("u2", 800, {{"dog", 200, 500}})});
    TableScorer s;
    s.det["u1"] = {0.9, 0.9};
    s.det["u2"] = {0.9, 0.1};
    s.tau[{"u1", 0}] = 150;
    s.tau[{"u1", 1}] = 720;
    s.tau[{"u2", 0}] = 200;
    EvalReport r = eval_oracle(s, c, "test", "m", "a");
    expect("oracle-accuracy", r.pairs == 3 && r.correct == 2 && eq(r.oracle_accuracy, 2.0 / 3.0));
  }
  {  // fixture 2: oracle boundary rule (half-open spans)
    kwtest::FixtureCorpus fc;
    CorpusData c = fc.build({"dog"}, {make_utt("u1", 600, {{"dog", 100, 300}}),
                                      make_utt("u2", 600, {{"dog", 100, 300}})});
    TableScorer s;
    s.det["u1"] = {1.0};
    s.det["u2"] = {1.0};
    s.tau[{"u1", 0}] = 100;  // exactly at start: inside
    s.tau[{"u2", 0}] = 300;  // exactly at end: outside
    EvalReport r = eval_oracle(s, c, "test", "m", "a");
    expect("oracle-boundary", r.correct == 1 && eq(r.oracle_accuracy, 0.5));
  }
  {  // fixture 3: actual task P/R/F1 with a false detection and a miss
    kwtest::FixtureCorpus fc;
    CorpusData c = fc.build({"dog"}, {make_utt("u1", 1000, {{"dog", 100, 300}}),
                                      make_utt("u2", 800, {{"cat", 0, 300}}),
                                      make_utt("u3", 600, {{"dog", 200, 400}})});
    TableScorer s;
    s.det["u1"] = {0.9};
    s.det["u2"] = {0.8};
    s.det["u3"] = {0.3};
    s.tau[{"u1", 0}] = 150;
    s.tau[{"u2", 0}] = 100;
    EvalReport r = eval_actual(s, c, "test", "m", "a", 0.5);
    expect("actual-prf", eq(r.loc_micro.precision, 0.5) && r.loc_micro.recall == 0.5 &&
                             eq(r.loc_micro.f1, 0.5) && eq(r.det_micro.precision, 0.5));
  }
  {  // fixture 4: spotting P@10 / P@N with ranking and a tie
    kwtest::FixtureCorpus fc;
    std::vector<UttAlignment> utts;
    for (int i = 1; i <= 12; ++i) {
      char id[8];
      std::snprintf(id, sizeof(id), "u%02d", i);
      utts.push_back(i <= 7 ? make_utt(id, 1000, {{"dog", 100, 300}})
                            : make_utt(id, 1000, {{"cat", 100, 300}}));
    }
    CorpusData c = fc.build({"dog"}, utts);
    TableScorer s;
    for (int i = 1; i <= 12; ++i) {
      char id[8];
      std::snprintf(id, sizeof(id), "u%02d", i);
      s.det[id] = {1.0 - 0.05 * i};
      s.tau[{id, 0}] = (i <= 5) ? 150 : 700;
    }
    EvalReport r = eval_spotting(s, c, "test", "m", "a");
    expect("spotting", eq(r.spot_p10, 0.7) && eq(r.loc_p10, 0.5) && eq(r.spot_pn, 1.0) &&
                           eq(r.loc_pn, 5.0 / 7.0));
  }
  {  // fixture 5: two keywords, one undetected (absent precision), macro spotting
    kwtest::FixtureCorpus fc;
    CorpusData c = fc.build({"dog", "ball"},
                            {make_utt("a1", 1000, {{"dog", 0, 500}}),
                             make_utt("a2", 1000, {{"ball", 0, 500}}),
                             make_utt("a3", 1000, {{"dog", 500, 1000}})});
    TableScorer s;
    s.det["a1"] = {0.9, 0.4};
    s.det["a2"] = {0.6, 0.3};
    s.det["a3"] = {0.7, 0.2};
    s.tau[{"a1", 0}] = 250;
    s.tau[{"a2", 0}] = 900;
    s.tau[{"a3", 0}] = 750;
    s.tau[{"a1", 1}] = 250;
    s.tau[{"a2", 1}] = 250;
    s.tau[{"a3", 1}] = 250;
    EvalReport actual = eval_actual(s, c, "test", "m", "a", 0.5);
    // dog: detected 3 (a1 true+loc, a2 false, a3 true+loc), occ 2 ->
    // locP 2/3, R 1, F1 4/5; ball: 0 detections -> precision absent, R 0
    const auto& dog = actual.per_keyword[0];
    const auto& ball = actual.per_keyword[1];
    expect("fixture5-actual",
           eq(dog.loc.precision, 2.0 / 3.0) && dog.loc.recall == 1.0 &&
               eq(dog.loc.f1, 0.8) && !ball.loc.precision.has_value() &&
               ball.loc.recall == 0.0);
    EvalReport spotting = eval_spotting(s, c, "test", "m", "a");
    // dog: order a1, a3, a2; N=2 -> top-2 both dog and located -> P@N 1.0;
    // P@10 uses all 3: 2/3. ball: order a1, a2, a3; N=1 -> top-1 a1 lacks
    // ball -> 0; P@10 1/3 spotting, located a2 only -> loc P@10 1/3
    expect("fixture5-spotting",
           eq(spotting.per_keyword[0].spot_pn, 1.0) && eq(spotting.per_keyword[0].loc_pn, 1.0) &&
               eq(spotting.per_keyword[0].spot_p10, 2.0 / 3.0) &&
               eq(spotting.per_keyword[1].spot_pn, 0.0) &&
               eq(spotting.per_keyword[1].spot_p10, 1.0 / 3.0) &&
               eq(spotting.per_keyword[1].loc_p10, 1.0 / 3.0) &&
               eq(spotting.spot_p10, 0.5));
  }
  h.report(8, "metric fixtures reproduce hand-enumerated values exactly", failed == 0,
           failed ? "failing:" + which : "5 fixtures exact");
}

// ---------------------------------------------------------------------------
// criterion 9: format round-trips and corruption rejection

void criterion9(Harness& h) {
  bool ok = true;
  std::string detail;
  auto fail = [&](const std::string& msg) {
    ok = false;
    detail += (detail.empty() ? "" : "; ") + msg;
  };
  const std::string dir = h.scratch + "/formats";
  fs::create_directories(dir);

  // feature round-trip
  Rng rng(99);
  FeatureMatrix fm;
  fm.frame_period_ms = 10;
  fm.feats = random_tensor(rng, 50, 13);
  fm.feats.quantize_f32();
  write_features(dir + "/a.kwsf", fm);
  FeatureMatrix back = read_features(dir + "/a.kwsf");
  if (!bitwise_equal(back.feats, fm.feats)) fail("feature round-trip not bitwise");
  write_features(dir + "/b.kwsf", back);
  if (kwtest::slurp(dir + "/a.kwsf") != kwtest::slurp(dir + "/b.kwsf"))
    fail("feature files not byte-identical after rewrite");

  // checkpoint round-trip
  ModelParams p = init_params(kwtest::toy_attention_spec(3, 2), 3);
  p.vocab = {"a", "b", "c"};
  save_checkpoint(dir + "/m.kwck", p);
  ModelParams q = load_checkpoint(dir + "/m.kwck");
  Tensor2D x = random_tensor(rng, 10, 2);
  DetectionResult d1 = forward_detect(p, x, 1);
  DetectionResult d2 = forward_detect(q, x, 1);
  if (d1.probs[0] != d2.probs[0]) fail("checkpoint round-trip changed the forward");
  save_checkpoint(dir + "/m2.kwck", q);
  if (kwtest::slurp(dir + "/m.kwck") != kwtest::slurp(dir + "/m2.kwck"))
    fail("checkpoints not byte-identical after rewrite");

  // corrupted fixtures
  auto expect_reject = [&](const std::string& name, const std::string& bytes,
                           bool feature_file, const char* what) {
    const std::string path = dir + "/" + name;
    std::ofstream out(path, std::ios::binary);
    out << bytes;
    out.close();
    try {
      if (feature_file)
        (void)read_features(path);
      else
        (void)load_checkpoint(path);
      fail(std::string("accepted corrupted ") + what);
    } catch (const FormatError&) {
    } catch (const std::exception& e) {
      fail(std::string("wrong error type for ") + what + ": " + e.what());
    }
  };
  const std::string feat_bytes = kwtest::slurp(dir + "/a.kwsf");
  expect_reject("trunc.kwsf", feat_bytes.substr(0, feat_bytes.size() - 7), true,
                "truncated feature file");
  std::string bad_magic = feat_bytes;
  bad_magic[0] = 'Z';
  expect_reject("magic.kwsf", bad_magic, true, "feature file with bad magic");
  std::string empty_t = feat_bytes.substr(0, 16);
  empty_t[8] = empty_t[9] = empty_t[10] = empty_t[11] = 0;
  expect_reject("empty.kwsf", empty_t, true, "feature file with T=0");
  const std::string ck_bytes = kwtest::slurp(dir + "/m.kwck");
  expect_reject("trunc.kwck", ck_bytes.substr(0, ck_bytes.size() - 3), false,
                "truncated checkpoint");
  std::string ck_magic = ck_bytes;
  ck_magic[2] = 'z';
  expect_reject("magic.kwck", ck_magic, false, "checkpoint with bad magic");
  expect_reject("trail.kwck", ck_bytes + "xy", false, "checkpoint with trailing bytes");

  h.report(9, "feature/checkpoint round-trips bitwise; corrupted fixtures rejected", ok,
           ok ? "6 corruption fixtures rejected" : detail);
}

// ---------------------------------------------------------------------------
// criterion 10: end-to-end CLI determinism

int run_cli(const std::string& bin, const std::string& args, const std::string& log) {
  const std::string cmd = "KWLOC_THREADS=1 " + bin + " " + args + " > " + log + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void criterion10(Harness& h) {
  const char* bin = std::getenv("KWLOC_BIN");
  if (!bin) {
    h.report(10, "CLI determinism (KWLOC_BIN not set)", false, "set KWLOC_BIN");
    return;
  }
  const std::string dir = h.scratch + "/cli";
  fs::create_directories(dir);
  {
    std::ofstream s(dir + "/synth.json");
    s << R"({"vocab_size": 3, "feature_dim": 5, "words_per_utt_min": 1,
            "words_per_utt_max": 2, "word_dur_min_ms": 100, "word_dur_max_ms": 150,
            "gap_min_ms": 100, "gap_max_ms": 200, "template_noise": 0.1,
            "filler_words": 1, "n_train": 8, "n_dev": 3, "n_test": 4, "seed": 2})";
  }
  bool ok = run_cli(bin, "synth --config " + dir + "/synth.json --out " + dir + "/corpus",
                    dir + "/log1.txt") == 0;
  {
    std::ofstream t(dir + "/train.json");
    t << R"({"architecture": "CNN-Attend", "supervision": "bow", "lr": 0.0001,
            "epochs": 1, "batch_size": 4, "seed": 1,
            "spec_augment": {"enabled": false}, "data_dir": ")"
      << dir << "/corpus\"}";
  }
  std::string detail;
  for (const char* run : {"r1", "r2"}) {
    ok = ok && run_cli(bin,
                       "train --config " + dir + "/train.json --out " + dir + "/" + run,
                       dir + "/log_train.txt") == 0;
    ok = ok &&
         run_cli(bin,
                 "eval --task actual --method attention --model " + dir + "/" + run +
                     "/best.kwck --data " + dir + "/corpus --theta 0.5 --out " + dir + "/" +
                     run + "_eval",
                 dir + "/log_eval.txt") == 0;
  }
  if (ok) {
    const bool ckpt_same =
        kwtest::slurp(dir + "/r1/best.kwck") == kwtest::slurp(dir + "/r2/best.kwck");
    const bool report_same = kwtest::slurp(dir + "/r1_eval/report.json") ==
                             kwtest::slurp(dir + "/r2_eval/report.json");
    const bool text_same = kwtest::slurp(dir + "/r1_eval/report.txt") ==
                           kwtest::slurp(dir + "/r2_eval/report.txt");
    ok = ckpt_same && report_same && text_same;
    detail = std::string("checkpoints ") + (ckpt_same ? "identical" : "DIFFER") +
             ", reports " + (report_same && text_same ? "identical" : "DIFFER");
  } else {
    detail = "a CLI invocation failed";
  }
  h.report(10, "repeated cmd_train + cmd_eval yield byte-identical outputs", ok, detail);
}

}  // namespace

int main() {
  Harness h;
  kwtest::TempDir scratch("acceptance");
  h.scratch = scratch.str();

  criterion1(h);
  criterion2(h);
  criterion3(h);
  criterion4(h);
  DeskRun run;
  criterion5(h, run);
  criterion6(h, run);
  criterion7(h);
  criterion8(h);
  criterion9(h);
  criterion10(h);

  std::printf("%d of 10 criteria passed\n", 10 - h.failures);
  return h.failures == 0 ? 0 : 1;
}
