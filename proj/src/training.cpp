#include "kwloc/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "kwloc/numerics.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace kwloc {

void TrainConfig::validate() const {
  if (lr <= 0.0) throw ConfigError("train config: lr must be > 0");
  if (epochs < 1) throw ConfigError("train config: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
  if (supervision != "bow" && supervision != "tagger" && supervision != "external")
    throw ConfigError("train config: supervision must be bow, tagger or external");
  if (supervision == "external" && soft_labels.empty())
    throw ConfigError("train config: external supervision needs soft_labels");
  if (spec_augment.n_freq_masks < 0 || spec_augment.n_time_masks < 0 ||
      spec_augment.max_freq_width < 0 || spec_augment.max_time_width < 0)
    throw ConfigError("train config: spec_augment counts/widths must be >= 0");
  if (adam.beta1 <= 0.0 || adam.beta1 >= 1.0 || adam.beta2 <= 0.0 || adam.beta2 >= 1.0)
    throw ConfigError("train config: adam betas must lie in (0,1)");
  if (adam.eps <= 0.0) throw ConfigError("train config: adam eps must be > 0");
  tagger_noise.validate();
  (void)preset_spec(architecture, 2);  // validates the name
}

TrainConfig train_config_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError("unparseable train config: " + std::string(e.what()));
  }
  static const std::set<std::string> known = {
      "architecture", "supervision", "lr",          "epochs",      "batch_size",
      "seed",         "adam",        "spec_augment", "tagger_noise", "data_dir",
      "soft_labels"};
  static const std::set<std::string> known_adam = {"beta1", "beta2", "eps"};
  static const std::set<std::string> known_aug = {"enabled", "n_freq_masks", "max_freq_width",
                                                  "n_time_masks", "max_time_width"};
  static const std::set<std::string> known_noise = {"p_fn", "p_fp", "kappa", "seed"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ConfigError("train config: unknown key '" + key + "'");

  TrainConfig c;
  auto get = [](const json& obj, const char* k, auto& field) {
    if (obj.contains(k)) field = obj.at(k).get<std::decay_t<decltype(field)>>();
  };
  get(j, "architecture", c.architecture);
  get(j, "supervision", c.supervision);
  get(j, "lr", c.lr);
  get(j, "epochs", c.epochs);
  get(j, "batch_size", c.batch_size);
  get(j, "seed", c.seed);
  get(j, "data_dir", c.data_dir);
  get(j, "soft_labels", c.soft_labels);
  if (j.contains("adam")) {
    for (const auto& [key, _] : j.at("adam").items())
      if (!known_adam.count(key)) throw ConfigError("train config: unknown key 'adam." + key + "'");
    get(j.at("adam"), "beta1", c.adam.beta1);
    get(j.at("adam"), "beta2", c.adam.beta2);
    get(j.at("adam"), "eps", c.adam.eps);
  }
  if (j.contains("spec_augment")) {
    for (const auto& [key, _] : j.at("spec_augment").items())
      if (!known_aug.count(key))
        throw ConfigError("train config: unknown key 'spec_augment." + key + "'");
    get(j.at("spec_augment"), "enabled", c.spec_augment.enabled);
    get(j.at("spec_augment"), "n_freq_masks", c.spec_augment.n_freq_masks);
    get(j.at("spec_augment"), "max_freq_width", c.spec_augment.max_freq_width);
    get(j.at("spec_augment"), "n_time_masks", c.spec_augment.n_time_masks);
    get(j.at("spec_augment"), "max_time_width", c.spec_augment.max_time_width);
  }
  if (j.contains("tagger_noise")) {
    for (const auto& [key, _] : j.at("tagger_noise").items())
      if (!known_noise.count(key))
        throw ConfigError("train config: unknown key 'tagger_noise." + key + "'");
    get(j.at("tagger_noise"), "p_fn", c.tagger_noise.p_fn);
    get(j.at("tagger_noise"), "p_fp", c.tagger_noise.p_fp);
    get(j.at("tagger_noise"), "kappa", c.tagger_noise.kappa);
    get(j.at("tagger_noise"), "seed", c.tagger_noise.seed);
  }
  c.validate();
  return c;
}

std::string train_config_to_json(const TrainConfig& c) {
  ordered_json j{
      {"architecture", c.architecture},
      {"supervision", c.supervision},
      {"lr", c.lr},
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"seed", c.seed},
      {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}},
      {"spec_augment",
       {{"enabled", c.spec_augment.enabled},
        {"n_freq_masks", c.spec_augment.n_freq_masks},
        {"max_freq_width", c.spec_augment.max_freq_width},
        {"n_time_masks", c.spec_augment.n_time_masks},
        {"max_time_width", c.spec_augment.max_time_width}}},
      {"tagger_noise",
       {{"p_fn", c.tagger_noise.p_fn},
        {"p_fp", c.tagger_noise.p_fp},
        {"kappa", c.tagger_noise.kappa},
        {"seed", c.tagger_noise.seed}}},
      {"data_dir", c.data_dir},
      {"soft_labels", c.soft_labels}};
  return j.dump(2);
}

void adam_step(ModelParams& params, const std::vector<Tensor2D>& grads, AdamState& state,
               double lr, double beta1, double beta2, double eps) {
  auto tensors = named_tensors(params);
  if (grads.size() != tensors.size())
    throw InputError("adam_step: gradient count does not match parameter tensors");
  if (state.m.empty()) {
    for (const auto& tr : tensors) {
      state.m.push_back(Tensor2D(tr.t->rows, tr.t->cols));
      state.v.push_back(Tensor2D(tr.t->rows, tr.t->cols));
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(beta1, (double)state.step);
  const double bc2 = 1.0 - std::pow(beta2, (double)state.step);
  for (size_t i = 0; i < tensors.size(); ++i) {
    Tensor2D& p = *tensors[i].t;
    const Tensor2D& g = grads[i];
    if (!g.same_shape(p)) throw InputError("adam_step: gradient shape mismatch at " + tensors[i].name);
    Tensor2D& m = state.m[i];
    Tensor2D& v = state.v[i];
    for (size_t k = 0; k < p.size(); ++k) {
      const double gk = g.data[k];
      if (!std::isfinite(gk))
        throw DivergenceError("non-finite gradient in " + tensors[i].name + " at index " +
                              std::to_string(k) + " (step " + std::to_string(state.step) + ")");
      m.data[k] = beta1 * m.data[k] + (1.0 - beta1) * gk;
      v.data[k] = beta2 * v.data[k] + (1.0 - beta2) * gk * gk;
      const double mhat = m.data[k] / bc1;
      const double vhat = v.data[k] / bc2;
      p.data[k] = (double)(float)(p.data[k] - lr * mhat / (std::sqrt(vhat) + eps));
    }
  }
}

void spec_augment(FeatureMatrix& fm, const SpecAugmentConfig& cfg, Rng& rng) {
  if (!cfg.enabled) return;
  Tensor2D& x = fm.feats;
  if (cfg.n_freq_masks > 0 && cfg.max_freq_width > 0) {
    if (cfg.max_freq_width >= x.cols)
      throw ConfigError("spec_augment: freq mask width must be smaller than the feature dim");
    for (int i = 0; i < cfg.n_freq_masks; ++i) {
      const int start = (int)rng.below((uint64_t)(x.cols - cfg.max_freq_width + 1));
      for (int t = 0; t < x.rows; ++t)
        for (int c = start; c < start + cfg.max_freq_width; ++c) x.at(t, c) = 0.0;
    }
  }
  if (cfg.n_time_masks > 0 && cfg.max_time_width > 0) {
    if (cfg.max_time_width >= x.rows) return;  // utterance too short to mask
    for (int i = 0; i < cfg.n_time_masks; ++i) {
      const int start = (int)rng.below((uint64_t)(x.rows - cfg.max_time_width + 1));
      for (int t = start; t < start + cfg.max_time_width; ++t)
        std::memset(x.row(t), 0, sizeof(double) * x.cols);
    }
  }
}

double eval_loss(const ModelParams& params, const Tensor2D& features,
                 const TargetVector& target) {
  GradTape tape;
  TapedModel m = build_forward(tape, params, features, std::nullopt, /*all_keywords=*/true);
  const Tensor2D& probs = tape.val(m.probs);
  return bce_loss(probs.data.data(), target.y.data(), probs.size());
}

size_t select_best(const std::vector<double>& dev_losses) {
  if (dev_losses.empty()) throw InputError("select_best: empty checkpoint series");
  size_t best = 0;
  for (size_t i = 1; i < dev_losses.size(); ++i)
    if (dev_losses[i] < dev_losses[best]) best = i;
  return best;
}

ModelParams select_best_checkpoint(const std::vector<std::string>& checkpoint_paths,
                                   const std::vector<double>& dev_losses) {
  if (checkpoint_paths.size() != dev_losses.size())
    throw InputError("select_best_checkpoint: paths and losses differ in length");
  return load_checkpoint(checkpoint_paths[select_best(dev_losses)]);
}

namespace {

std::string ckpt_name(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt_e%03d.kwck", epoch);
  return buf;
}

std::vector<TargetVector> make_targets(const TrainConfig& cfg, const CorpusData& corpus,
                                       const std::vector<std::string>& ids) {
  std::vector<TargetVector> out;
  out.reserve(ids.size());
  std::map<std::string, std::vector<double>> ext;
  if (cfg.supervision == "external")
    ext = load_soft_labels(cfg.soft_labels, corpus.vocab.size());
  for (const auto& id : ids) {
    TargetVector bow = bow_targets(corpus.align.get(id), corpus.vocab);
    if (cfg.supervision == "bow") {
      out.push_back(std::move(bow));
    } else if (cfg.supervision == "tagger") {
      out.push_back(simulate_tagger(bow, cfg.tagger_noise));
    } else {
      auto it = ext.find(id);
      if (it == ext.end()) throw DataError("no external soft labels for utterance '" + id + "'");
      TargetVector t;
      t.utt_id = id;
      t.kind = TargetKind::Tagger;
      t.y = it->second;
      out.push_back(std::move(t));
    }
  }
  return out;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const CorpusData& corpus,
                  const std::string& out_dir, std::ostream* progress) {
  cfg.validate();
  fs::create_directories(out_dir);

  const auto& train_ids = corpus.train_ids;
  const auto& dev_ids = corpus.dev_ids;
  if (train_ids.empty() || dev_ids.empty())
    throw DataError("corpus needs non-empty train and dev splits");

  std::vector<FeatureMatrix> train_feats, dev_feats;
  train_feats.reserve(train_ids.size());
  for (const auto& id : train_ids) train_feats.push_back(corpus.load(id));
  dev_feats.reserve(dev_ids.size());
  for (const auto& id : dev_ids) dev_feats.push_back(corpus.load(id));

  const std::vector<TargetVector> train_targets = make_targets(cfg, corpus, train_ids);
  const std::vector<TargetVector> dev_targets = make_targets(cfg, corpus, dev_ids);

  ArchitectureSpec spec = preset_spec(cfg.architecture, (int)corpus.vocab.size());
  spec.input_dim = train_feats.front().feats.cols;
  ModelParams params = init_params(spec, cfg.seed);
  params.vocab = corpus.vocab;
  const ModelParams initial = params;  // divergence fallback
  AdamState adam;

  TrainResult res;
  std::ofstream log_file(fs::path(out_dir) / "log.jsonl", std::ios::trunc);
  if (!log_file) throw DataError("cannot open training log in " + out_dir);

  std::vector<Tensor2D> batch_grads;
  {
    auto tensors = named_tensors(params);
    for (const auto& tr : tensors) batch_grads.push_back(Tensor2D(tr.t->rows, tr.t->cols));
  }

  auto write_epoch_ckpt = [&](int epoch) {
    params.epoch = epoch;
    const std::string path = (fs::path(out_dir) / ckpt_name(epoch)).string();
    save_checkpoint(path, params);
    return path;
  };

  std::vector<std::string> ckpt_paths;
  std::vector<double> dev_losses;
  bool diverged = false;
  std::string diverge_msg;

  for (int epoch = 1; epoch <= cfg.epochs && !diverged; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();

    std::vector<size_t> order(train_ids.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(mix_seed(cfg.seed, hash_str("shuffle"), (uint64_t)epoch));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[(size_t)shuffle_rng.below(i)]);

    double epoch_loss = 0.0;
    size_t items_done = 0;
    try {
      for (size_t b = 0; b < order.size(); b += (size_t)cfg.batch_size) {
        const size_t b_end = std::min(order.size(), b + (size_t)cfg.batch_size);
        for (auto& g : batch_grads) std::fill(g.data.begin(), g.data.end(), 0.0);
        for (size_t i = b; i < b_end; ++i) {
          const size_t idx = order[i];
          FeatureMatrix fm = train_feats[idx];
          if (cfg.spec_augment.enabled) {
            Rng aug_rng(mix_seed(cfg.seed, hash_str("augment"),
                                 mix_seed((uint64_t)epoch, (uint64_t)idx)));
            spec_augment(fm, cfg.spec_augment, aug_rng);
          }
          GradTape tape;
          std::vector<ValId> ids;
          const double loss =
              taped_training_loss(tape, params, fm.feats, train_targets[idx], ids);
          if (!std::isfinite(loss))
            throw DivergenceError("non-finite training loss on '" + train_ids[idx] +
                                  "' (epoch " + std::to_string(epoch) + ")");
          epoch_loss += loss;
          ++items_done;
          for (size_t t = 0; t < ids.size(); ++t) {
            const Tensor2D& g = tape.grad(ids[t]);
            double* acc = batch_grads[t].data.data();
            for (size_t k = 0; k < g.size(); ++k) acc[k] += g.data[k];
          }
        }
        const double inv = 1.0 / (double)(b_end - b);
        for (auto& g : batch_grads)
          for (double& v : g.data) v *= inv;
        adam_step(params, batch_grads, adam, cfg.lr, cfg.adam.beta1, cfg.adam.beta2,
                  cfg.adam.eps);
      }
    } catch (const DivergenceError& e) {
      diverged = true;
      diverge_msg = e.what();
    }

    if (diverged) {
      if (ckpt_paths.empty()) {
        // nothing completed: keep the initial parameters as the last-good state
        ModelParams fallback = initial;
        fallback.epoch = 0;
        const std::string path = (fs::path(out_dir) / ckpt_name(0)).string();
        save_checkpoint(path, fallback);
        ckpt_paths.push_back(path);
        dev_losses.push_back(std::numeric_limits<double>::infinity());
      }
      break;
    }

    double dev = 0.0;
    for (size_t i = 0; i < dev_ids.size(); ++i)
      dev += eval_loss(params, dev_feats[i].feats, dev_targets[i]);
    dev /= (double)dev_ids.size();

    const auto t1 = std::chrono::steady_clock::now();
    EpochLog el;
    el.epoch = epoch;
    el.train_loss = items_done ? epoch_loss / (double)items_done : 0.0;
    el.dev_loss = dev;
    el.wall_ms = (long)std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0).count();
    res.log.push_back(el);

    ckpt_paths.push_back(write_epoch_ckpt(epoch));
    dev_losses.push_back(dev);

    ordered_json line{{"epoch", el.epoch},
                      {"train_loss", el.train_loss},
                      {"dev_loss", el.dev_loss},
                      {"wall_ms", el.wall_ms}};
    log_file << line.dump() << "\n";
    log_file.flush();
    if (progress)
      (*progress) << "epoch " << el.epoch << "  train_loss " << el.train_loss
                  << "  dev_loss " << el.dev_loss << "\n";
  }

  const size_t best = select_best(dev_losses);
  res.best_epoch = diverged && ckpt_paths.size() == 1 && dev_losses[0] ==
                       std::numeric_limits<double>::infinity()
                       ? 0
                       : (int)best + 1;
  res.diverged = diverged;
  res.best_path = (fs::path(out_dir) / "best.kwck").string();
  fs::copy_file(ckpt_paths[best], res.best_path, fs::copy_options::overwrite_existing);
  if (diverged) {
    if (progress) (*progress) << "aborted: " << diverge_msg << "\n";
    throw DivergenceError(diverge_msg + "; last good checkpoint kept at " + res.best_path);
  }
  return res;
}

}  // namespace kwloc
