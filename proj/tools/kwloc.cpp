#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "kwloc/corpus.hpp"
#include "kwloc/eval.hpp"
#include "kwloc/kernels.hpp"
#include "kwloc/localisation.hpp"
#include "kwloc/model.hpp"
#include "kwloc/supervision.hpp"
#include "kwloc/training.hpp"

namespace fs = std::filesystem;
using namespace kwloc;

namespace {

// exit codes: 0 ok, 2 config, 3 data, 4 incompatibility, 1 internal
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitIncompat = 4;
constexpr int kExitInternal = 1;

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write file: " + path);
  out << content;
}

int run_synth(const std::string& config_path, const std::string& out_dir) {
  SynthConfig cfg = synth_config_from_json(read_file(config_path));
  synth_corpus(cfg, out_dir);
  write_file((fs::path(out_dir) / "effective_config.json").string(),
             synth_config_to_json(cfg) + "\n");
  std::cout << "corpus written to " << out_dir << "\n";
  return 0;
}

int run_train(const std::string& config_path, const std::string& out_dir,
              const std::string& data_override, int epochs_override, double lr_override,
              long seed_override, int batch_override, const std::string& arch_override,
              const std::string& supervision_override) {
  TrainConfig cfg = train_config_from_json(read_file(config_path));
  if (!data_override.empty()) cfg.data_dir = data_override;
  if (epochs_override > 0) cfg.epochs = epochs_override;
  if (lr_override > 0.0) cfg.lr = lr_override;
  if (seed_override >= 0) cfg.seed = (uint64_t)seed_override;
  if (batch_override > 0) cfg.batch_size = batch_override;
  if (!arch_override.empty()) cfg.architecture = arch_override;
  if (!supervision_override.empty()) cfg.supervision = supervision_override;
  cfg.validate();
  if (cfg.data_dir.empty()) throw DataError("no data_dir in config and no --data flag");

  CorpusData corpus = load_corpus(cfg.data_dir);
  fs::create_directories(out_dir);
  write_file((fs::path(out_dir) / "effective_config.json").string(),
             train_config_to_json(cfg) + "\n");
  TrainResult res = train(cfg, corpus, out_dir, &std::cout);
  std::cout << "best epoch " << res.best_epoch << " -> " << res.best_path << "\n";
  return 0;
}

int run_eval(const std::string& task, const std::string& method_s, const std::string& model_path,
             const std::string& data_dir, double theta, const std::string& split,
             const std::string& out_dir, const std::string& confusion_keyword) {
  const LocMethod method = loc_method_from(method_s);
  ModelParams params = load_checkpoint(model_path);
  if (!method_compatible(params.spec.name, method)) {
    std::cerr << "method '" << method_s << "' is not paired with architecture '"
              << params.spec.name << "'. Supported pairings:\n"
              << compatibility_matrix();
    return kExitIncompat;
  }
  CorpusData corpus = load_corpus(data_dir);
  if (!params.vocab.empty() && params.vocab != corpus.vocab)
    throw DataError("checkpoint vocabulary differs from the corpus vocabulary");
  if ((int)corpus.vocab.size() != params.spec.vocab_size)
    throw DataError("corpus has " + std::to_string(corpus.vocab.size()) +
                    " keywords, model expects " + std::to_string(params.spec.vocab_size));

  ModelScorer scorer(params, method, corpus);
  EvalReport rep;
  if (task == "oracle")
    rep = eval_oracle(scorer, corpus, split, method_s, params.spec.name);
  else if (task == "actual")
    rep = eval_actual(scorer, corpus, split, method_s, params.spec.name, theta);
  else if (task == "spotting")
    rep = eval_spotting(scorer, corpus, split, method_s, params.spec.name);
  else
    throw ConfigError("unknown task '" + task + "' (oracle, actual or spotting)");

  fs::create_directories(out_dir);
  write_file((fs::path(out_dir) / "report.json").string(), rep.to_json() + "\n");
  write_file((fs::path(out_dir) / "report.txt").string(), rep.to_text());
  std::cout << rep.to_text();

  if (!confusion_keyword.empty()) {
    std::vector<int> kws;
    if (confusion_keyword == "all") {
      for (int w = 0; w < (int)corpus.vocab.size(); ++w) kws.push_back(w);
    } else {
      auto it = std::find(corpus.vocab.begin(), corpus.vocab.end(), confusion_keyword);
      if (it == corpus.vocab.end())
        throw ConfigError("keyword '" + confusion_keyword + "' not in the vocabulary");
      kws.push_back((int)(it - corpus.vocab.begin()));
    }
    std::ostringstream txt;
    for (int w : kws) {
      auto top = confusion_top_words(scorer, corpus, split, w);
      txt << corpus.vocab[w] << ":";
      for (const auto& [word, count] : top) txt << "  " << word << " " << count;
      txt << "\n";
    }
    write_file((fs::path(out_dir) / "confusion.txt").string(), txt.str());
    std::cout << txt.str();
  }
  return 0;
}

int run_locate(const std::string& model_path, const std::string& features_path,
               const std::string& keyword, const std::string& method_s,
               const std::string& csv_path) {
  const LocMethod method = loc_method_from(method_s);
  ModelParams params = load_checkpoint(model_path);
  if (params.vocab.empty())
    throw DataError("checkpoint carries no vocabulary; cannot map keyword strings");
  auto it = std::find(params.vocab.begin(), params.vocab.end(), keyword);
  if (it == params.vocab.end()) {
    std::string vocab_list;
    for (const auto& w : params.vocab) vocab_list += "  " + w + "\n";
    throw ConfigError("keyword '" + keyword + "' not in the vocabulary:\n" + vocab_list);
  }
  const int w = (int)(it - params.vocab.begin());

  FeatureMatrix fm = read_features(features_path);
  const int kws[1] = {w};
  LocalisationResult r = localise(params, fm, method, kws).front();
  const double prob = params.spec.is_attention() ? forward_detect(params, fm.feats, w).probs[0]
                                                 : detect_all(params, fm.feats)[w];

  std::ostringstream csv;
  const std::string utt_id = fs::path(features_path).stem().string();
  write_scores_csv(csv, utt_id, keyword, r, fm.frame_period_ms, prob);
  write_file(csv_path, csv.str());

  std::cout << "keyword: " << keyword << "\n"
            << "tau_ms: " << r.tau_frame * fm.frame_period_ms << "\n"
            << "detection_prob: " << prob << "\n"
            << "scores: " << csv_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* t = std::getenv("KWLOC_THREADS")) {
    const int n = std::atoi(t);
    if (n > 0) kern::set_num_threads(n);
  }

  CLI::App app{"weakly supervised keyword detection and localisation"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  std::string synth_cfg, synth_out;
  synth->add_option("--config", synth_cfg, "synth config JSON")->required();
  synth->add_option("--out", synth_out, "output corpus directory")->required();

  auto* train_cmd = app.add_subcommand("train", "train a model");
  std::string train_cfg, train_out, train_data, train_arch, train_sup;
  int train_epochs = 0, train_batch = 0;
  double train_lr = 0.0;
  long train_seed = -1;
  train_cmd->add_option("--config", train_cfg, "train config JSON")->required();
  train_cmd->add_option("--out", train_out, "output directory")->required();
  train_cmd->add_option("--data", train_data, "corpus directory (overrides config)");
  train_cmd->add_option("--epochs", train_epochs, "override epochs");
  train_cmd->add_option("--lr", train_lr, "override learning rate");
  train_cmd->add_option("--seed", train_seed, "override seed");
  train_cmd->add_option("--batch-size", train_batch, "override batch size");
  train_cmd->add_option("--arch", train_arch, "override architecture");
  train_cmd->add_option("--supervision", train_sup, "override supervision kind");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a trained model");
  std::string eval_task, eval_method, eval_model, eval_data, eval_split = "test",
              eval_out = ".", eval_confusion;
  double eval_theta = 0.5;
  eval_cmd->add_option("--task", eval_task, "oracle | actual | spotting")->required();
  eval_cmd->add_option("--method", eval_method,
                       "gradcam | masked-in | masked-out | score-agg | attention")
      ->required();
  eval_cmd->add_option("--model", eval_model, "checkpoint file")->required();
  eval_cmd->add_option("--data", eval_data, "corpus directory")->required();
  eval_cmd->add_option("--theta", eval_theta, "detection threshold (actual task)");
  eval_cmd->add_option("--split", eval_split, "corpus split (default test)");
  eval_cmd->add_option("--out", eval_out, "report output directory (default .)");
  eval_cmd->add_option("--confusion-keyword", eval_confusion,
                       "also tally most-located words for this keyword ('all' = every keyword)");

  auto* locate = app.add_subcommand("locate", "localise a keyword in one utterance");
  std::string loc_model, loc_feat, loc_kw, loc_method, loc_csv;
  locate->add_option("--model", loc_model, "checkpoint file")->required();
  locate->add_option("--features", loc_feat, "feature file (.kwsf)")->required();
  locate->add_option("--keyword", loc_kw, "keyword string")->required();
  locate->add_option("--method", loc_method, "localisation method")->required();
  locate->add_option("--csv", loc_csv, "output CSV path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return run_synth(synth_cfg, synth_out);
    if (train_cmd->parsed())
      return run_train(train_cfg, train_out, train_data, train_epochs, train_lr, train_seed,
                       train_batch, train_arch, train_sup);
    if (eval_cmd->parsed())
      return run_eval(eval_task, eval_method, eval_model, eval_data, eval_theta, eval_split,
                      eval_out, eval_confusion);
    if (locate->parsed())
      return run_locate(loc_model, loc_feat, loc_kw, loc_method, loc_csv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IncompatError& e) {
    std::cerr << "incompatible: " << e.what() << "\n" << compatibility_matrix();
    return kExitIncompat;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitInternal;
}
