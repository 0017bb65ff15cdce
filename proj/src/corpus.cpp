#include "kwloc/corpus.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "kwloc/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace kwloc {

// ---------------------------------------------------------------------------
// Feature files

namespace {
constexpr char kFeatMagic[4] = {'K', 'W', 'S', 'F'};
constexpr uint16_t kFeatVersion = 1;

void put_u16(std::string& s, uint16_t v) {
  s.push_back((char)(v & 0xff));
  s.push_back((char)(v >> 8));
}
void put_u32(std::string& s, uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back((char)((v >> (8 * i)) & 0xff));
}
uint16_t get_u16(const std::string& b, size_t off) {
  return (uint16_t)((uint8_t)b[off] | ((uint16_t)(uint8_t)b[off + 1] << 8));
}
uint32_t get_u32(const std::string& b, size_t off) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= (uint32_t)(uint8_t)b[off + i] << (8 * i);
  return v;
}
}  // namespace

void write_features(const std::string& path, const FeatureMatrix& fm) {
  if (fm.feats.rows < 1 || fm.feats.cols < 1)
    throw InputError("write_features: empty feature matrix");
  std::string buf;
  buf.append(kFeatMagic, 4);
  put_u16(buf, kFeatVersion);
  put_u16(buf, (uint16_t)fm.frame_period_ms);
  put_u32(buf, (uint32_t)fm.feats.rows);
  put_u32(buf, (uint32_t)fm.feats.cols);
  for (double v : fm.feats.data) {
    const float f = (float)v;
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(buf, bits);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open feature file for writing: " + path);
  out.write(buf.data(), (std::streamsize)buf.size());
  if (!out) throw DataError("short write to feature file: " + path);
}

FeatureMatrix read_features(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open feature file: " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  auto need = [&](size_t upto) {
    if (buf.size() < upto)
      throw FormatError("feature file truncated at byte offset " + std::to_string(buf.size()) +
                        " (need " + std::to_string(upto) + "): " + path);
  };
  need(16);
  if (std::memcmp(buf.data(), kFeatMagic, 4) != 0)
    throw FormatError("bad feature file magic at byte offset 0: " + path);
  if (get_u16(buf, 4) != kFeatVersion)
    throw FormatError("unsupported feature file version at byte offset 4: " + path);
  FeatureMatrix fm;
  fm.frame_period_ms = get_u16(buf, 6);
  const uint32_t t = get_u32(buf, 8);
  const uint32_t d = get_u32(buf, 12);
  if (t == 0 || d == 0)
    throw FormatError("feature file declares an empty matrix at byte offset 8: " + path);
  need(16 + (size_t)t * d * 4);
  if (buf.size() != 16 + (size_t)t * d * 4)
    throw FormatError("trailing bytes in feature file at byte offset " +
                      std::to_string(16 + (size_t)t * d * 4) + ": " + path);
  fm.feats = Tensor2D((int)t, (int)d);
  for (size_t i = 0; i < fm.feats.size(); ++i) {
    const uint32_t bits = get_u32(buf, 16 + i * 4);
    float f;
    std::memcpy(&f, &bits, 4);
    fm.feats.data[i] = (double)f;
  }
  if (!fm.feats.all_finite())
    throw FormatError("feature file contains non-finite values: " + path);
  return fm;
}

// ---------------------------------------------------------------------------
// Alignments and vocab

const UttAlignment& AlignmentSet::get(const std::string& utt_id) const {
  auto it = by_id.find(utt_id);
  if (it == by_id.end()) throw DataError("no alignment for utterance '" + utt_id + "'");
  return utts[it->second];
}

void AlignmentSet::add(UttAlignment a) {
  if (by_id.count(a.utt_id)) throw DataError("duplicate alignment for '" + a.utt_id + "'");
  by_id[a.utt_id] = utts.size();
  utts.push_back(std::move(a));
}

namespace {
void validate_alignment(const UttAlignment& a, int line_no) {
  const std::string where = " (alignments line " + std::to_string(line_no) + ")";
  if (a.dur_ms <= 0) throw FormatError("non-positive utterance duration" + where);
  int prev_end = 0;
  for (const auto& w : a.words) {
    if (w.start_ms >= w.end_ms)
      throw FormatError("word span with end <= start: '" + w.word + "'" + where);
    if (w.start_ms < prev_end)
      throw FormatError("overlapping word spans at '" + w.word + "'" + where);
    if (w.end_ms > a.dur_ms)
      throw FormatError("word span beyond utterance duration: '" + w.word + "'" + where);
    prev_end = w.end_ms;
  }
}
}  // namespace

AlignmentSet read_alignments(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open alignments: " + path);
  AlignmentSet set;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError("unparseable alignment JSON on line " + std::to_string(line_no) +
                        ": " + e.what());
    }
    UttAlignment a;
    try {
      a.utt_id = j.at("utt").get<std::string>();
      a.dur_ms = j.at("dur_ms").get<int>();
      for (const auto& w : j.at("words"))
        a.words.push_back({w.at("w").get<std::string>(), w.at("start_ms").get<int>(),
                           w.at("end_ms").get<int>()});
    } catch (const json::exception& e) {
      throw FormatError("alignment schema violation on line " + std::to_string(line_no) +
                        ": " + e.what());
    }
    validate_alignment(a, line_no);
    set.add(std::move(a));
  }
  return set;
}

void write_alignments(const std::string& path, const AlignmentSet& set) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open alignments for writing: " + path);
  for (const auto& a : set.utts) {
    ordered_json words = ordered_json::array();
    for (const auto& w : a.words)
      words.push_back({{"w", w.word}, {"start_ms", w.start_ms}, {"end_ms", w.end_ms}});
    ordered_json j{{"utt", a.utt_id}, {"dur_ms", a.dur_ms}, {"words", words}};
    out << j.dump() << "\n";
  }
}

std::vector<std::string> read_vocab(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocab: " + path);
  std::vector<std::string> vocab;
  std::set<std::string> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty())
      throw FormatError("empty vocab entry on line " + std::to_string(line_no));
    if (!seen.insert(line).second)
      throw FormatError("duplicate vocab entry '" + line + "' on line " +
                        std::to_string(line_no));
    vocab.push_back(line);
  }
  if (vocab.empty()) throw FormatError("vocab file is empty: " + path);
  return vocab;
}

void write_vocab(const std::string& path, const std::vector<std::string>& words) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open vocab for writing: " + path);
  for (const auto& w : words) out << w << "\n";
}

// ---------------------------------------------------------------------------
// Synthetic corpus

void SynthConfig::validate() const {
  auto bad = [](const std::string& field) { throw ConfigError("synth config: " + field); };
  if (vocab_size < 2) bad("vocab_size must be >= 2");
  if (feature_dim < 1) bad("feature_dim must be >= 1");
  if (frame_period_ms < 1 || frame_period_ms > 65535) bad("frame_period_ms out of range");
  if (words_per_utt_min < 1 || words_per_utt_max < words_per_utt_min)
    bad("words_per_utt range invalid");
  if (word_dur_min_ms < frame_period_ms || word_dur_max_ms < word_dur_min_ms)
    bad("word_dur range invalid");
  if (gap_min_ms < 0 || gap_max_ms < gap_min_ms) bad("gap range invalid");
  if (template_noise < 0.0) bad("template_noise must be >= 0");
  if (filler_words < 0) bad("filler_words must be >= 0");
  if (n_train < 1 || n_dev < 1 || n_test < 1) bad("split sizes must be >= 1");
}

SynthConfig synth_config_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError("unparseable synth config: " + std::string(e.what()));
  }
  SynthConfig cfg;
  static const std::set<std::string> known = {
      "vocab_size",      "feature_dim",   "frame_period_ms", "words_per_utt_min",
      "words_per_utt_max", "word_dur_min_ms", "word_dur_max_ms", "gap_min_ms",
      "gap_max_ms",      "template_noise", "filler_words",    "n_train",
      "n_dev",           "n_test",        "seed"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ConfigError("synth config: unknown key '" + key + "'");
  auto get = [&](const char* k, auto& field) {
    if (j.contains(k)) field = j.at(k).get<std::decay_t<decltype(field)>>();
  };
  get("vocab_size", cfg.vocab_size);
  get("feature_dim", cfg.feature_dim);
  get("frame_period_ms", cfg.frame_period_ms);
  get("words_per_utt_min", cfg.words_per_utt_min);
  get("words_per_utt_max", cfg.words_per_utt_max);
  get("word_dur_min_ms", cfg.word_dur_min_ms);
  get("word_dur_max_ms", cfg.word_dur_max_ms);
  get("gap_min_ms", cfg.gap_min_ms);
  get("gap_max_ms", cfg.gap_max_ms);
  get("template_noise", cfg.template_noise);
  get("filler_words", cfg.filler_words);
  get("n_train", cfg.n_train);
  get("n_dev", cfg.n_dev);
  get("n_test", cfg.n_test);
  get("seed", cfg.seed);
  cfg.validate();
  return cfg;
}

std::string synth_config_to_json(const SynthConfig& c) {
  ordered_json j{{"vocab_size", c.vocab_size},
                 {"feature_dim", c.feature_dim},
                 {"frame_period_ms", c.frame_period_ms},
                 {"words_per_utt_min", c.words_per_utt_min},
                 {"words_per_utt_max", c.words_per_utt_max},
                 {"word_dur_min_ms", c.word_dur_min_ms},
                 {"word_dur_max_ms", c.word_dur_max_ms},
                 {"gap_min_ms", c.gap_min_ms},
                 {"gap_max_ms", c.gap_max_ms},
                 {"template_noise", c.template_noise},
                 {"filler_words", c.filler_words},
                 {"n_train", c.n_train},
                 {"n_dev", c.n_dev},
                 {"n_test", c.n_test},
                 {"seed", c.seed}};
  return j.dump(2);
}

namespace {

std::string word_name(int idx, int vocab_size) {
  char buf[16];
  if (idx < vocab_size)
    std::snprintf(buf, sizeof(buf), "kw%02d", idx);
  else
    std::snprintf(buf, sizeof(buf), "fil%02d", idx - vocab_size);
  return buf;
}

struct WordTemplate {
  std::string name;
  Tensor2D pattern;  // dur_frames x D
};

}  // namespace

void synth_corpus(const SynthConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  const int period = cfg.frame_period_ms;
  const int n_types = cfg.vocab_size + cfg.filler_words;

  // Fixed per-word templates: a word-specific per-channel offset plus i.i.d.
  // cell noise. The offset gives each word a distinctive spectral envelope
  // (as real words have), the cells give it temporal detail.
  std::vector<WordTemplate> templates(n_types);
  {
    Rng trng(mix_seed(cfg.seed, hash_str("templates")));
    const int fmin = cfg.word_dur_min_ms / period;
    const int fmax = cfg.word_dur_max_ms / period;
    for (int i = 0; i < n_types; ++i) {
      templates[i].name = word_name(i, cfg.vocab_size);
      const int frames = std::max(1, trng.range_int(fmin, fmax));
      std::vector<double> envelope(cfg.feature_dim);
      for (double& v : envelope) v = trng.normal();
      templates[i].pattern = Tensor2D(frames, cfg.feature_dim);
      for (int t = 0; t < frames; ++t)
        for (int c = 0; c < cfg.feature_dim; ++c)
          templates[i].pattern.at(t, c) = envelope[c] + trng.normal();
    }
  }

  fs::create_directories(fs::path(out_dir) / "features");

  AlignmentSet align;
  std::vector<std::string> split_names = {"train", "dev", "test"};
  std::vector<int> split_sizes = {cfg.n_train, cfg.n_dev, cfg.n_test};
  std::vector<std::vector<std::string>> split_ids(3);

  const int gmin = cfg.gap_min_ms / period;
  const int gmax = std::max(gmin, cfg.gap_max_ms / period);

  for (int s = 0; s < 3; ++s) {
    for (int i = 0; i < split_sizes[s]; ++i) {
      char id[32];
      std::snprintf(id, sizeof(id), "%s_%05d", split_names[s].c_str(), i);
      Rng rng(mix_seed(cfg.seed, hash_str(split_names[s].c_str()), (uint64_t)i));

      const int n_words = rng.range_int(cfg.words_per_utt_min, cfg.words_per_utt_max);
      std::vector<int> word_idx(n_words);
      for (int& w : word_idx) w = (int)rng.below((uint64_t)n_types);
      std::vector<int> gaps(n_words + 1);
      for (int& gp : gaps) gp = rng.range_int(gmin, gmax);

      int total = gaps[0];
      UttAlignment a;
      a.utt_id = id;
      for (int w = 0; w < n_words; ++w) {
        const auto& tpl = templates[word_idx[w]];
        a.words.push_back({tpl.name, total * period, (total + tpl.pattern.rows) * period});
        total += tpl.pattern.rows + gaps[w + 1];
      }
      a.dur_ms = total * period;

      FeatureMatrix fm;
      fm.frame_period_ms = period;
      fm.feats = Tensor2D(total, cfg.feature_dim);
      for (size_t w = 0; w < a.words.size(); ++w) {
        const auto& tpl = templates[word_idx[w]];
        const int at = a.words[w].start_ms / period;
        for (int t = 0; t < tpl.pattern.rows; ++t)
          std::memcpy(fm.feats.row(at + t), tpl.pattern.row(t),
                      sizeof(double) * cfg.feature_dim);
      }
      if (cfg.template_noise > 0.0)
        for (double& v : fm.feats.data) v += cfg.template_noise * rng.normal();
      fm.feats.quantize_f32();

      write_features((fs::path(out_dir) / "features" / (std::string(id) + ".kwsf")).string(), fm);
      align.add(std::move(a));
      split_ids[s].push_back(id);
    }
  }

  std::vector<std::string> vocab;
  for (int i = 0; i < cfg.vocab_size; ++i) vocab.push_back(word_name(i, cfg.vocab_size));
  write_vocab((fs::path(out_dir) / "vocab.txt").string(), vocab);
  write_alignments((fs::path(out_dir) / "alignments.jsonl").string(), align);

  ordered_json manifest{{"seed", cfg.seed},
                        {"config", json::parse(synth_config_to_json(cfg))},
                        {"splits",
                         {{"train", split_ids[0]}, {"dev", split_ids[1]}, {"test", split_ids[2]}}}};
  std::ofstream mf(fs::path(out_dir) / "manifest.json", std::ios::trunc);
  if (!mf) throw DataError("cannot write manifest in " + out_dir);
  mf << manifest.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Loading

FeatureMatrix CorpusData::load(const std::string& utt_id) const {
  return read_features((fs::path(dir) / "features" / (utt_id + ".kwsf")).string());
}

const std::vector<std::string>& CorpusData::split(const std::string& name) const {
  if (name == "train") return train_ids;
  if (name == "dev") return dev_ids;
  if (name == "test") return test_ids;
  throw InputError("unknown split '" + name + "' (expected train, dev or test)");
}

CorpusData load_corpus(const std::string& dir) {
  CorpusData c;
  c.dir = dir;
  const fs::path root(dir);
  if (!fs::exists(root / "manifest.json"))
    throw DataError("no corpus manifest in " + dir);
  std::ifstream mf(root / "manifest.json");
  json manifest;
  try {
    mf >> manifest;
  } catch (const json::exception& e) {
    throw FormatError("unparseable manifest: " + std::string(e.what()));
  }
  try {
    c.train_ids = manifest.at("splits").at("train").get<std::vector<std::string>>();
    c.dev_ids = manifest.at("splits").at("dev").get<std::vector<std::string>>();
    c.test_ids = manifest.at("splits").at("test").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw FormatError("manifest missing splits: " + std::string(e.what()));
  }
  c.vocab = read_vocab((root / "vocab.txt").string());
  c.align = read_alignments((root / "alignments.jsonl").string());
  return c;
}

}  // namespace kwloc
