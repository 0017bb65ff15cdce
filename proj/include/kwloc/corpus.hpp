#ifndef KWLOC_CORPUS_HPP
#define KWLOC_CORPUS_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "kwloc/tensor.hpp"

namespace kwloc {

// Acoustic features, time-major (T x D), with the frame rate attached.
struct FeatureMatrix {
  Tensor2D feats;
  int frame_period_ms = 10;
};

// "KWSF" | u16 LE version=1 | u16 LE frame_period_ms | u32 LE T | u32 LE D |
// T*D float32 LE, time-major. Values are snapped to float32 on write, so
// write -> read round-trips bitwise for float-grid data.
void write_features(const std::string& path, const FeatureMatrix& fm);
FeatureMatrix read_features(const std::string& path);

struct WordSpan {
  std::string word;
  int start_ms = 0;
  int end_ms = 0;
};

struct UttAlignment {
  std::string utt_id;
  int dur_ms = 0;
  std::vector<WordSpan> words;  // ordered, non-overlapping

  bool contains(const std::string& w) const {
    for (const auto& s : words)
      if (s.word == w) return true;
    return false;
  }
};

// JSON lines, one utterance per line:
// {"utt": str, "dur_ms": int, "words": [{"w": str, "start_ms": int, "end_ms": int}]}
struct AlignmentSet {
  std::vector<UttAlignment> utts;
  std::map<std::string, size_t> by_id;

  const UttAlignment& get(const std::string& utt_id) const;
  void add(UttAlignment a);
};

AlignmentSet read_alignments(const std::string& path);
void write_alignments(const std::string& path, const AlignmentSet& set);

// UTF-8 text, one keyword per line; line number = keyword index.
std::vector<std::string> read_vocab(const std::string& path);
void write_vocab(const std::string& path, const std::vector<std::string>& words);

struct SynthConfig {
  int vocab_size = 10;
  int feature_dim = 13;
  int frame_period_ms = 10;
  int words_per_utt_min = 3;
  int words_per_utt_max = 4;
  int word_dur_min_ms = 120;
  int word_dur_max_ms = 240;
  int gap_min_ms = 40;
  int gap_max_ms = 120;
  double template_noise = 0.2;
  int filler_words = 5;
  int n_train = 2000;
  int n_dev = 200;
  int n_test = 200;
  uint64_t seed = 0;

  void validate() const;
};

SynthConfig synth_config_from_json(const std::string& json_text);
std::string synth_config_to_json(const SynthConfig& cfg);

// Renders a full corpus directory:
//   vocab.txt, alignments.jsonl, features/<utt_id>.kwsf, manifest.json
// Each word type (vocab + fillers) gets a fixed random template; utterances
// are gap-separated template sequences plus Gaussian noise. Deterministic
// per seed, byte for byte. manifest.json is written last as the commit mark.
void synth_corpus(const SynthConfig& cfg, const std::string& out_dir);

// Loaded corpus view. Features are read on demand.
struct CorpusData {
  std::string dir;
  std::vector<std::string> vocab;
  AlignmentSet align;
  std::vector<std::string> train_ids, dev_ids, test_ids;

  FeatureMatrix load(const std::string& utt_id) const;
  const std::vector<std::string>& split(const std::string& name) const;
};

CorpusData load_corpus(const std::string& dir);

}  // namespace kwloc

#endif  // KWLOC_CORPUS_HPP
