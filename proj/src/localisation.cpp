#include "kwloc/localisation.hpp"

#include <algorithm>
#include <cstring>

#include "kwloc/numerics.hpp"

namespace kwloc {

std::string loc_method_name(LocMethod m) {
  switch (m) {
    case LocMethod::GradCam: return "gradcam";
    case LocMethod::MaskedIn: return "masked-in";
    case LocMethod::MaskedOut: return "masked-out";
    case LocMethod::ScoreAgg: return "score-agg";
    case LocMethod::Attention: return "attention";
  }
  throw InternalError("unknown localisation method");
}

LocMethod loc_method_from(const std::string& s) {
  if (s == "gradcam") return LocMethod::GradCam;
  if (s == "masked-in") return LocMethod::MaskedIn;
  if (s == "masked-out") return LocMethod::MaskedOut;
  if (s == "score-agg") return LocMethod::ScoreAgg;
  if (s == "attention") return LocMethod::Attention;
  throw ConfigError("unknown localisation method '" + s +
                    "' (gradcam, masked-in, masked-out, score-agg, attention)");
}

bool method_compatible(const std::string& arch, LocMethod m) {
  if (arch == "PSC") return m == LocMethod::ScoreAgg;
  if (arch == "CNN-Pool") return m == LocMethod::GradCam;
  if (arch == "CNN-Attend" || arch == "CNN-PoolAttend")
    return m == LocMethod::Attention || m == LocMethod::MaskedIn ||
           m == LocMethod::MaskedOut;
  return false;
}

std::string compatibility_matrix() {
  return "architecture    gradcam  masked-in  masked-out  score-agg  attention\n"
         "PSC                .         .          .           x          .\n"
         "CNN-Pool           x         .          .           .          .\n"
         "CNN-Attend         .         x          x           .          x\n"
         "CNN-PoolAttend     .         x          x           .          x\n";
}

// ---------------------------------------------------------------------------
// Segment grid

namespace {
constexpr int kMinSegMs = 200;
constexpr int kMaxSegMs = 600;
constexpr int kSegStepMs = 50;
constexpr int kOverlapMs = 30;
}  // namespace

SegmentGrid segment_grid(int t_frames, int frame_period_ms) {
  if (t_frames < 1) throw InputError("segment_grid: empty utterance");
  if (frame_period_ms < 1) throw InputError("segment_grid: invalid frame period");
  SegmentGrid grid;
  grid.frame_period_ms = frame_period_ms;
  const int utt_ms = t_frames * frame_period_ms;
  const int min_len = kMinSegMs / frame_period_ms;

  if (utt_ms < kMinSegMs) {
    grid.windows.push_back({0, t_frames});
    grid.fallback_full = true;
    return grid;
  }

  for (int d = kMinSegMs; d <= kMaxSegMs; d += kSegStepMs) {
    if (d > utt_ms) break;
    const int len = d / frame_period_ms;
    const int step = std::max(1, (d - kOverlapMs) / frame_period_ms);
    std::vector<int> starts;
    // enumerate strided starts as long as the clipped window keeps at least
    // the 200 ms minimum
    for (int start = 0; start <= t_frames - min_len; start += step) {
      grid.windows.push_back({start, std::min(start + len, t_frames)});
      starts.push_back(start);
    }
    const int flush = t_frames - len;
    if (std::find(starts.begin(), starts.end(), flush) == starts.end())
      grid.windows.push_back({flush, t_frames});
  }
  return grid;
}

// ---------------------------------------------------------------------------

int predict_location(std::span<const double> alpha, std::span<const int> location_of) {
  if (alpha.empty()) throw InputError("predict_location: empty score sequence");
  if (alpha.size() != location_of.size())
    throw InputError("predict_location: scores and locations differ in length");
  return location_of[argmax_first(alpha.data(), alpha.size())];
}

namespace {

Tensor2D apply_segment_mask(const Tensor2D& feats, const SegmentWindow& seg, bool keep_inside) {
  Tensor2D out = feats;
  for (int t = 0; t < out.rows; ++t) {
    const bool inside = t >= seg.start_frame && t < seg.end_frame;
    if (inside != keep_inside) std::memset(out.row(t), 0, sizeof(double) * out.cols);
  }
  return out;
}

LocalisationResult segment_result(int keyword, LocMethod method, const SegmentGrid& grid,
                                  std::vector<double> alpha) {
  LocalisationResult r;
  r.keyword = keyword;
  r.method = method;
  r.resolution = LocResolution::Segment;
  r.alpha = std::move(alpha);
  r.segments = grid.windows;
  r.grid_fallback = grid.fallback_full;
  std::vector<int> mids(r.segments.size());
  for (size_t i = 0; i < r.segments.size(); ++i) mids[i] = r.segments[i].midpoint();
  r.tau_frame = predict_location(r.alpha, mids);
  return r;
}

}  // namespace

std::vector<LocalisationResult> loc_masked_sweep(const ModelParams& p, const FeatureMatrix& fm,
                                                 std::span<const int> keywords,
                                                 const SegmentGrid& grid, bool masked_in) {
  if (keywords.empty()) return {};
  const size_t n_seg = grid.windows.size();
  // alpha[k][s] for keyword k, segment s
  std::vector<std::vector<double>> alpha(keywords.size(), std::vector<double>(n_seg, 0.0));
  for (size_t s = 0; s < n_seg; ++s) {
    Tensor2D masked = apply_segment_mask(fm.feats, grid.windows[s], masked_in);
    GradTape tape;
    TapedEncoder enc = build_encoder(tape, p, masked);
    if (p.spec.is_attention()) {
      for (size_t k = 0; k < keywords.size(); ++k) {
        TapedHead head = build_head(tape, p, enc.h, keywords[k]);
        const double prob = tape.val(head.probs).at(0, 0);
        alpha[k][s] = masked_in ? prob : 1.0 - prob;
      }
    } else {
      TapedHead head = build_head(tape, p, enc.h, std::nullopt);
      const Tensor2D& probs = tape.val(head.probs);
      for (size_t k = 0; k < keywords.size(); ++k) {
        const double prob = probs.data[keywords[k]];
        alpha[k][s] = masked_in ? prob : 1.0 - prob;
      }
    }
  }
  std::vector<LocalisationResult> out;
  out.reserve(keywords.size());
  const LocMethod method = masked_in ? LocMethod::MaskedIn : LocMethod::MaskedOut;
  for (size_t k = 0; k < keywords.size(); ++k)
    out.push_back(segment_result(keywords[k], method, grid, std::move(alpha[k])));
  return out;
}

LocalisationResult loc_masked_in(const ModelParams& p, const FeatureMatrix& fm, int keyword,
                                 const SegmentGrid& grid) {
  const int kw[1] = {keyword};
  return loc_masked_sweep(p, fm, kw, grid, /*masked_in=*/true).front();
}

LocalisationResult loc_masked_out(const ModelParams& p, const FeatureMatrix& fm, int keyword,
                                  const SegmentGrid& grid) {
  const int kw[1] = {keyword};
  return loc_masked_sweep(p, fm, kw, grid, /*masked_in=*/false).front();
}

LocalisationResult loc_score_agg(const ModelParams& p, const FeatureMatrix& fm, int keyword) {
  if (p.spec.pooling != PoolKind::LogMeanExp)
    throw IncompatError("score aggregation needs frame scores pooled by log-mean-exp "
                        "(architecture '" + p.spec.name + "' does not qualify)");
  if (keyword < 0 || keyword >= p.spec.vocab_size)
    throw InputError("keyword index out of range");
  ForwardFull f = forward_full(p, fm.feats);
  LocalisationResult r;
  r.keyword = keyword;
  r.method = LocMethod::ScoreAgg;
  r.resolution = LocResolution::EncoderFrame;
  const Tensor2D& h = f.enc.h;
  r.alpha.resize(h.rows);
  for (int t = 0; t < h.rows; ++t) r.alpha[t] = h.at(t, keyword);
  r.centers = receptive_field_centers(p.spec, fm.feats.rows);
  r.tau_frame = predict_location(r.alpha, r.centers);
  return r;
}

LocalisationResult loc_attention(const ModelParams& p, const FeatureMatrix& fm, int keyword) {
  if (!p.spec.is_attention())
    throw IncompatError("attention localisation needs an attention pooling layer "
                        "(architecture '" + p.spec.name + "' does not qualify)");
  ForwardFull f = forward_full(p, fm.feats, keyword);
  LocalisationResult r;
  r.keyword = keyword;
  r.method = LocMethod::Attention;
  r.resolution = LocResolution::EncoderFrame;
  r.alpha = std::move(f.attention);
  r.centers = receptive_field_centers(p.spec, fm.feats.rows);
  r.tau_frame = predict_location(r.alpha, r.centers);
  return r;
}

LocalisationResult loc_gradcam(const ModelParams& p, const FeatureMatrix& fm, int keyword) {
  if (keyword < 0 || keyword >= p.spec.vocab_size)
    throw InputError("keyword index out of range");
  GradTape tape;
  const bool attention = p.spec.is_attention();
  TapedModel m = build_forward(tape, p, fm.feats,
                               attention ? std::optional<int>(keyword) : std::nullopt);
  const Tensor2D& probs = tape.val(m.probs);
  // d p(w|a) / d H via the tape; probs is 1x1 (attention) or 1xV
  tape.backward(m.probs, 0, attention ? 0 : keyword);
  const Tensor2D& h = tape.val(m.h);
  const Tensor2D& dh = tape.grad(m.h);
  (void)probs;

  const int t_enc = h.rows, k_dim = h.cols;
  std::vector<double> gamma(k_dim, 0.0);
  for (int k = 0; k < k_dim; ++k) {
    double acc = 0.0;
    for (int t = 0; t < t_enc; ++t) acc += dh.at(t, k);
    gamma[k] = acc / (double)t_enc;
  }

  LocalisationResult r;
  r.keyword = keyword;
  r.method = LocMethod::GradCam;
  r.resolution = LocResolution::EncoderFrame;
  r.alpha.resize(t_enc);
  bool any = false;
  for (int t = 0; t < t_enc; ++t) {
    double acc = 0.0;
    for (int k = 0; k < k_dim; ++k) acc += gamma[k] * h.at(t, k);
    r.alpha[t] = acc > 0.0 ? acc : 0.0;
    any = any || r.alpha[t] > 0.0;
  }
  r.no_evidence = !any;
  r.centers = receptive_field_centers(p.spec, fm.feats.rows);
  r.tau_frame = predict_location(r.alpha, r.centers);
  return r;
}

void write_scores_csv(std::ostream& out, const std::string& utt_id,
                      const std::string& keyword, const LocalisationResult& r,
                      int frame_period_ms, double detection_prob) {
  out << "utt_id,keyword,method,start_ms,end_ms,alpha\n";
  const std::string method = loc_method_name(r.method);
  char buf[64];
  if (r.resolution == LocResolution::Segment) {
    for (size_t i = 0; i < r.segments.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.9g", r.alpha[i]);
      out << utt_id << ',' << keyword << ',' << method << ','
          << r.segments[i].start_frame * frame_period_ms << ','
          << r.segments[i].end_frame * frame_period_ms << ',' << buf << "\n";
    }
  } else {
    for (size_t i = 0; i < r.alpha.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.9g", r.alpha[i]);
      out << utt_id << ',' << keyword << ',' << method << ','
          << r.centers[i] * frame_period_ms << ','
          << (r.centers[i] + 1) * frame_period_ms << ',' << buf << "\n";
    }
  }
  std::snprintf(buf, sizeof(buf), "%.9g", detection_prob);
  out << utt_id << ',' << keyword << ',' << method << "-tau,"
      << r.tau_frame * frame_period_ms << ',' << r.tau_frame * frame_period_ms << ','
      << buf << "\n";
}

}  // namespace kwloc
