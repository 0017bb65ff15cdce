#include "kwloc/model.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "kwloc/numerics.hpp"
#include "kwloc/rng.hpp"

namespace kwloc {

using nlohmann::ordered_json;

std::string pool_kind_name(PoolKind k) {
  switch (k) {
    case PoolKind::LogMeanExp: return "log-mean-exp";
    case PoolKind::MaxOverTime: return "max";
    case PoolKind::Attention: return "attention";
  }
  throw InternalError("unknown pool kind");
}

PoolKind pool_kind_from(const std::string& s) {
  if (s == "log-mean-exp") return PoolKind::LogMeanExp;
  if (s == "max") return PoolKind::MaxOverTime;
  if (s == "attention") return PoolKind::Attention;
  throw ConfigError("unknown pooling kind '" + s + "'");
}

int ArchitectureSpec::output_frames(int t_in) const {
  int t = t_in;
  for (const auto& l : encoder) {
    t = t + 2 * l.padding - l.width + 1;
    if (t >= 1 && l.pool > 0) {
      if (t < l.pool) t = 0;
      else t = (t - l.pool) / l.pool + 1;
    }
    if (t < 1)
      throw InputError("utterance too short: '" + name + "' needs at least " +
                       std::to_string(min_input_frames()) + " frames");
  }
  return t;
}

int ArchitectureSpec::min_input_frames() const {
  for (int t = 1; t < 100000; ++t) {
    int cur = t;
    bool ok = true;
    for (const auto& l : encoder) {
      cur = cur + 2 * l.padding - l.width + 1;
      if (cur >= 1 && l.pool > 0) cur = cur < l.pool ? 0 : (cur - l.pool) / l.pool + 1;
      if (cur < 1) {
        ok = false;
        break;
      }
    }
    if (ok) return t;
  }
  throw InternalError("min_input_frames: no feasible length");
}

std::pair<long, long> ArchitectureSpec::receptive_interval(int t_enc) const {
  long a = t_enc, b = t_enc;
  for (auto it = encoder.rbegin(); it != encoder.rend(); ++it) {
    if (it->pool > 0) {  // undo the pool that follows the conv
      a = a * it->pool;
      b = b * it->pool + it->pool - 1;
    }
    a = a - it->padding;
    b = b + it->width - 1 - it->padding;
  }
  return {a, b};
}

void ArchitectureSpec::validate() const {
  if (vocab_size < 1) throw ConfigError("architecture: vocab size must be >= 1");
  if (input_dim < 1) throw ConfigError("architecture: input dim must be >= 1");
  if (encoder.empty()) throw ConfigError("architecture: empty encoder");
  for (const auto& l : encoder)
    if (l.filters < 1 || l.width < 1 || l.padding < 0 || l.pool < 0)
      throw ConfigError("architecture: invalid encoder layer");
  if (pooling == PoolKind::LogMeanExp) {
    if (lme_r <= 0.0) throw ConfigError("architecture: lme_r must be > 0");
    if (encoder.back().filters != vocab_size)
      throw ConfigError(
          "architecture: log-mean-exp pooling requires final filters == vocab size");
    if (!classifier.empty())
      throw ConfigError("architecture: log-mean-exp pooling takes no classifier");
    return;
  }
  if (classifier.empty())
    throw ConfigError("architecture: classifier required for " + pool_kind_name(pooling));
  const int out = classifier.back();
  if (pooling == PoolKind::Attention && out != 1)
    throw ConfigError("architecture: attention classifier must output a single score");
  if (pooling == PoolKind::MaxOverTime && out != vocab_size)
    throw ConfigError("architecture: classifier output must equal vocab size");
}

ArchitectureSpec preset_spec(const std::string& name, int vocab_size) {
  ArchitectureSpec s;
  s.name = name;
  s.vocab_size = vocab_size;
  if (name == "PSC") {
    s.encoder = {{96, 9, 4, 0}, {96, 11, 5, 0}, {96, 11, 5, 0},
                 {96, 11, 5, 0}, {96, 11, 5, 0}, {vocab_size, 11, 5, 0}};
    s.pooling = PoolKind::LogMeanExp;
    s.lme_r = 1.0;
  } else if (name == "CNN-Pool") {
    s.encoder = {{64, 9, 4, 3}, {256, 11, 5, 3}, {1024, 11, 5, 0}};
    s.pooling = PoolKind::MaxOverTime;
    s.classifier = {4096, vocab_size};
  } else if (name == "CNN-Attend") {
    s.encoder = {{96, 9, 4, 0}, {96, 11, 5, 0}, {96, 11, 5, 0},
                 {96, 11, 5, 0}, {96, 11, 5, 0}, {1000, 11, 5, 0}};
    s.pooling = PoolKind::Attention;
    s.classifier = {4096, 1};
  } else if (name == "CNN-PoolAttend") {
    // CNN-Pool style encoder whose last layer has 1000 filters so the
    // MLP(1000, 1) classifier and the query embedding dim line up.
    s.encoder = {{64, 9, 4, 3}, {256, 11, 5, 3}, {1000, 11, 5, 0}};
    s.pooling = PoolKind::Attention;
    s.classifier = {4096, 1};
  } else {
    throw ConfigError("unknown architecture '" + name +
                      "' (expected PSC, CNN-Pool, CNN-Attend or CNN-PoolAttend)");
  }
  s.validate();
  return s;
}

std::vector<TensorRef> named_tensors(ModelParams& p) {
  std::vector<TensorRef> out;
  for (size_t l = 0; l < p.conv_w.size(); ++l) {
    out.push_back({"enc" + std::to_string(l) + ".w", &p.conv_w[l]});
    out.push_back({"enc" + std::to_string(l) + ".b", &p.conv_b[l]});
  }
  for (size_t j = 0; j < p.clf_w.size(); ++j) {
    out.push_back({"clf" + std::to_string(j) + ".w", &p.clf_w[j]});
    out.push_back({"clf" + std::to_string(j) + ".b", &p.clf_b[j]});
  }
  if (p.spec.is_attention()) out.push_back({"query", &p.query});
  return out;
}

namespace {

Tensor2D xavier(Rng& rng, int rows, int cols, int fan_in, int fan_out) {
  Tensor2D t(rows, cols);
  const double bound = std::sqrt(6.0 / (double)(fan_in + fan_out));
  for (double& v : t.data) v = rng.uniform(-bound, bound);
  t.quantize_f32();
  return t;
}

}  // namespace

ModelParams init_params(const ArchitectureSpec& spec, uint64_t seed) {
  spec.validate();
  ModelParams p;
  p.spec = spec;
  p.seed = seed;
  p.epoch = 0;
  Rng rng(mix_seed(seed, 0x6b776c6f63ull));
  int in_dim = spec.input_dim;
  for (const auto& l : spec.encoder) {
    p.conv_w.push_back(xavier(rng, l.filters, in_dim * l.width, in_dim * l.width,
                              l.filters * l.width));
    p.conv_b.push_back(Tensor2D(1, l.filters));
    in_dim = l.filters;
  }
  if (!spec.classifier.empty()) {
    int prev = spec.encoder_dim();
    for (int dim : spec.classifier) {
      p.clf_w.push_back(xavier(rng, dim, prev, prev, dim));
      p.clf_b.push_back(Tensor2D(1, dim));
      prev = dim;
    }
  }
  if (spec.is_attention()) {
    const int k = spec.encoder_dim();
    Tensor2D q(spec.vocab_size, k);
    const double scale = 1.0 / std::sqrt((double)k);
    for (double& v : q.data) v = rng.normal() * scale;
    q.quantize_f32();
    p.query = std::move(q);
  }
  return p;
}

ModelParams build_architecture(const std::string& name, int vocab_size, uint64_t seed) {
  return init_params(preset_spec(name, vocab_size), seed);
}

// ---------------------------------------------------------------------------
// Forward passes

TapedEncoder build_encoder(GradTape& tape, const ModelParams& p, const Tensor2D& feats) {
  const ArchitectureSpec& spec = p.spec;
  if (feats.cols != spec.input_dim)
    throw InputError("features have dim " + std::to_string(feats.cols) +
                     ", model expects " + std::to_string(spec.input_dim));
  if (!feats.all_finite()) throw InputError("features contain non-finite values");
  (void)spec.output_frames(feats.rows);  // throws with the required minimum

  TapedEncoder e;
  const int t_in = feats.rows;
  e.x = tape.leaf(feats);
  ValId cur = e.x;
  const bool last_linear = spec.pooling == PoolKind::LogMeanExp;
  for (size_t l = 0; l < spec.encoder.size(); ++l) {
    const auto& ls = spec.encoder[l];
    ValId w = tape.param(&p.conv_w[l]);
    ValId b = tape.param(&p.conv_b[l]);
    e.conv_param_ids.push_back(w);
    e.conv_param_ids.push_back(b);
    cur = tape.conv1d(cur, w, b, ls.width, ls.padding);
    if (!(last_linear && l + 1 == spec.encoder.size())) cur = tape.relu(cur);
    if (ls.pool > 0) cur = tape.maxpool1d(cur, ls.pool, ls.pool);
  }
  e.h = cur;
  const int t_enc = tape.val(e.h).rows;
  e.frame_map.reserve(t_enc);
  for (int t = 0; t < t_enc; ++t) {
    auto [a, b] = spec.receptive_interval(t);
    e.frame_map.push_back({(int)std::clamp(a, 0L, (long)t_in - 1),
                           (int)std::clamp(b, 0L, (long)t_in - 1)});
  }
  return e;
}

TapedHead build_head(GradTape& tape, const ModelParams& p, ValId h,
                     std::optional<int> keyword, bool all_keywords) {
  const ArchitectureSpec& spec = p.spec;
  if (keyword && (*keyword < 0 || *keyword >= spec.vocab_size))
    throw InputError("keyword index " + std::to_string(*keyword) + " out of range (V=" +
                     std::to_string(spec.vocab_size) + ")");
  if (spec.is_attention() && !all_keywords && !keyword)
    throw InputError("architecture '" + spec.name + "' needs a keyword per forward");

  TapedHead head;
  auto run_clf = [&](ValId in) {
    ValId cur = in;
    for (size_t j = 0; j < p.clf_w.size(); ++j) {
      ValId w = tape.param(&p.clf_w[j]);
      ValId b = tape.param(&p.clf_b[j]);
      head.clf_param_ids.push_back(w);
      head.clf_param_ids.push_back(b);
      cur = tape.linear(cur, w, b);
      if (j + 1 < p.clf_w.size()) cur = tape.relu(cur);
    }
    return cur;
  };

  switch (spec.pooling) {
    case PoolKind::LogMeanExp:
      head.scores = tape.lme_pool(h, spec.lme_r);  // 1 x V
      break;
    case PoolKind::MaxOverTime:
      head.scores = run_clf(tape.col_max_pool(h));  // 1 x V
      break;
    case PoolKind::Attention: {
      if (all_keywords) {
        ValId q = tape.param(&p.query);
        head.query_param_id = q;
        ValId e = tape.matmul_nt(h, q);        // T x V
        head.attention = tape.col_softmax(e);  // T x V
        ValId ctx = tape.matmul_tn(head.attention, h);  // V x K
        head.scores = run_clf(ctx);                     // V x 1
      } else {
        Tensor2D qrow(1, p.query.cols);
        std::memcpy(qrow.data.data(), p.query.row(*keyword),
                    sizeof(double) * p.query.cols);
        auto [att, ctx] = tape.dot_attention(h, tape.leaf(std::move(qrow)));
        head.attention = att;        // T x 1
        head.scores = run_clf(ctx);  // 1 x 1
      }
      break;
    }
  }
  head.probs = tape.sigmoid(head.scores);
  return head;
}

TapedModel build_forward(GradTape& tape, const ModelParams& p, const Tensor2D& feats,
                         std::optional<int> keyword, bool all_keywords) {
  TapedEncoder enc = build_encoder(tape, p, feats);
  TapedHead head = build_head(tape, p, enc.h, keyword, all_keywords);
  TapedModel m;
  m.x = enc.x;
  m.h = enc.h;
  m.scores = head.scores;
  m.probs = head.probs;
  m.attention = head.attention;
  m.frame_map = std::move(enc.frame_map);
  // named_tensors order: conv pairs, clf pairs, query
  m.param_ids = enc.conv_param_ids;
  m.param_ids.insert(m.param_ids.end(), head.clf_param_ids.begin(),
                     head.clf_param_ids.end());
  if (p.spec.is_attention()) m.param_ids.push_back(head.query_param_id);
  return m;
}

namespace {
DetectionResult detection_from(const GradTape& tape, const TapedModel& m,
                               std::optional<int> keyword) {
  DetectionResult d;
  d.probs = tape.val(m.probs).data;
  d.scores = tape.val(m.scores).data;
  d.keyword = keyword;
  return d;
}
}  // namespace

DetectionResult forward_detect(const ModelParams& p, const Tensor2D& feats,
                               std::optional<int> keyword) {
  GradTape tape;
  TapedModel m = build_forward(tape, p, feats, keyword);
  return detection_from(tape, m, keyword);
}

ForwardFull forward_full(const ModelParams& p, const Tensor2D& feats,
                         std::optional<int> keyword) {
  GradTape tape;
  TapedModel m = build_forward(tape, p, feats, keyword);
  ForwardFull f;
  f.det = detection_from(tape, m, keyword);
  f.enc.h = tape.val(m.h);
  f.enc.frame_map = m.frame_map;
  if (m.attention >= 0) f.attention = tape.val(m.attention).data;
  return f;
}

std::vector<double> detect_all(const ModelParams& p, const Tensor2D& feats) {
  GradTape tape;
  TapedModel m = build_forward(tape, p, feats, std::nullopt, /*all_keywords=*/true);
  return tape.val(m.probs).data;
}

int receptive_field_center(const ArchitectureSpec& spec, int t_enc, int t_in) {
  const int t_out = spec.output_frames(t_in);
  if (t_enc < 0 || t_enc >= t_out)
    throw InputError("encoder index " + std::to_string(t_enc) + " out of range (T'=" +
                     std::to_string(t_out) + ")");
  auto [a, b] = spec.receptive_interval(t_enc);
  long centre = (a + b) / 2;
  return (int)std::clamp(centre, 0L, (long)t_in - 1);
}

std::vector<int> receptive_field_centers(const ArchitectureSpec& spec, int t_in) {
  const int t_out = spec.output_frames(t_in);
  std::vector<int> out(t_out);
  for (int t = 0; t < t_out; ++t) {
    auto [a, b] = spec.receptive_interval(t);
    out[t] = (int)std::clamp((a + b) / 2, 0L, (long)t_in - 1);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[4] = {'K', 'W', 'C', 'K'};
constexpr uint16_t kVersion = 1;

void put_u16(std::string& s, uint16_t v) {
  s.push_back((char)(v & 0xff));
  s.push_back((char)(v >> 8));
}
void put_u32(std::string& s, uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back((char)((v >> (8 * i)) & 0xff));
}

ordered_json arch_to_json(const ArchitectureSpec& s) {
  ordered_json enc = ordered_json::array();
  for (const auto& l : s.encoder)
    enc.push_back({{"filters", l.filters},
                   {"width", l.width},
                   {"padding", l.padding},
                   {"pool", l.pool}});
  return ordered_json{{"name", s.name},
                      {"vocab_size", s.vocab_size},
                      {"input_dim", s.input_dim},
                      {"encoder", enc},
                      {"pooling", pool_kind_name(s.pooling)},
                      {"classifier", s.classifier},
                      {"lme_r", s.lme_r}};
}

ArchitectureSpec arch_from_json(const nlohmann::json& j) {
  ArchitectureSpec s;
  s.name = j.at("name").get<std::string>();
  s.vocab_size = j.at("vocab_size").get<int>();
  s.input_dim = j.at("input_dim").get<int>();
  for (const auto& l : j.at("encoder"))
    s.encoder.push_back({l.at("filters").get<int>(), l.at("width").get<int>(),
                         l.at("padding").get<int>(), l.at("pool").get<int>()});
  s.pooling = pool_kind_from(j.at("pooling").get<std::string>());
  s.classifier = j.at("classifier").get<std::vector<int>>();
  s.lme_r = j.at("lme_r").get<double>();
  s.validate();
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params) {
  ModelParams& p = const_cast<ModelParams&>(params);  // named_tensors needs mutable refs
  auto tensors = named_tensors(p);
  ordered_json tens = ordered_json::array();
  for (const auto& tr : tensors)
    tens.push_back({{"name", tr.name}, {"rows", tr.t->rows}, {"cols", tr.t->cols}});
  ordered_json header{{"arch", arch_to_json(p.spec)},
                      {"seed", p.seed},
                      {"epoch", p.epoch},
                      {"vocab", p.vocab},
                      {"tensors", tens}};
  const std::string hj = header.dump();

  std::string buf;
  buf.append(kMagic, 4);
  put_u16(buf, kVersion);
  put_u32(buf, (uint32_t)hj.size());
  buf += hj;
  for (const auto& tr : tensors)
    for (double v : tr.t->data) {
      const float f = (float)v;
      uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_u32(buf, bits);
    }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open checkpoint for writing: " + path);
  out.write(buf.data(), (std::streamsize)buf.size());
  if (!out) throw DataError("short write to checkpoint: " + path);
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  auto need = [&](size_t off, size_t n) {
    if (off + n > buf.size())
      throw FormatError("checkpoint truncated at byte offset " + std::to_string(buf.size()) +
                        " (need " + std::to_string(off + n) + "): " + path);
  };
  need(0, 10);
  if (std::memcmp(buf.data(), kMagic, 4) != 0)
    throw FormatError("bad checkpoint magic at byte offset 0: " + path);
  const uint16_t version = (uint8_t)buf[4] | ((uint16_t)(uint8_t)buf[5] << 8);
  if (version != kVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + ": " + path);
  uint32_t hlen = 0;
  for (int i = 0; i < 4; ++i) hlen |= (uint32_t)(uint8_t)buf[6 + i] << (8 * i);
  need(10, hlen);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(buf.substr(10, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("unparseable checkpoint header: " + std::string(e.what()));
  }

  ModelParams p;
  try {
    p.spec = arch_from_json(header.at("arch"));
    p.seed = header.at("seed").get<uint64_t>();
    p.epoch = header.at("epoch").get<int>();
    p.vocab = header.at("vocab").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint header missing fields: " + std::string(e.what()));
  }
  if (!p.vocab.empty() && (int)p.vocab.size() != p.spec.vocab_size)
    throw FormatError("checkpoint vocab has " + std::to_string(p.vocab.size()) +
                      " entries, architecture declares " +
                      std::to_string(p.spec.vocab_size));

  // materialise tensors with the shapes the architecture dictates, then
  // check the header agrees
  ModelParams shaped = init_params(p.spec, 0);
  p.conv_w = std::move(shaped.conv_w);
  p.conv_b = std::move(shaped.conv_b);
  p.clf_w = std::move(shaped.clf_w);
  p.clf_b = std::move(shaped.clf_b);
  p.query = std::move(shaped.query);

  auto tensors = named_tensors(p);
  const auto& tens = header.at("tensors");
  if (tens.size() != tensors.size())
    throw FormatError("checkpoint declares " + std::to_string(tens.size()) +
                      " tensors, architecture has " + std::to_string(tensors.size()));
  size_t off = 10 + hlen;
  for (size_t i = 0; i < tensors.size(); ++i) {
    const auto& decl = tens[i];
    if (decl.at("name").get<std::string>() != tensors[i].name ||
        decl.at("rows").get<int>() != tensors[i].t->rows ||
        decl.at("cols").get<int>() != tensors[i].t->cols)
      throw FormatError("checkpoint tensor " + std::to_string(i) +
                        " does not match the declared architecture");
    const size_t n = tensors[i].t->size();
    need(off, n * 4);
    for (size_t k = 0; k < n; ++k) {
      uint32_t bits = 0;
      for (int by = 0; by < 4; ++by) bits |= (uint32_t)(uint8_t)buf[off + 4 * k + by] << (8 * by);
      float f;
      std::memcpy(&f, &bits, 4);
      tensors[i].t->data[k] = (double)f;
    }
    off += n * 4;
  }
  if (off != buf.size())
    throw FormatError("trailing bytes in checkpoint at offset " + std::to_string(off));
  return p;
}

}  // namespace kwloc
