#ifndef KWLOC_LOCALISATION_HPP
#define KWLOC_LOCALISATION_HPP

#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "kwloc/corpus.hpp"
#include "kwloc/model.hpp"

namespace kwloc {

enum class LocMethod { GradCam, MaskedIn, MaskedOut, ScoreAgg, Attention };

std::string loc_method_name(LocMethod m);
LocMethod loc_method_from(const std::string& s);

// Table-style architecture/method pairings enforced by the CLI:
//   PSC -> score-agg, CNN-Pool -> gradcam,
//   CNN-Attend / CNN-PoolAttend -> attention, masked-in, masked-out.
bool method_compatible(const std::string& arch_name, LocMethod m);
std::string compatibility_matrix();

struct SegmentWindow {
  int start_frame = 0;
  int end_frame = 0;  // exclusive
  int midpoint() const { return (start_frame + end_frame) / 2; }
};

// Sliding windows of 200..600 ms (step 50 ms), consecutive starts d-30 ms
// apart, windows clipped to the utterance but never shorter than 200 ms,
// plus one flush window per duration ending at the utterance end.
struct SegmentGrid {
  std::vector<SegmentWindow> windows;
  int frame_period_ms = 10;
  bool fallback_full = false;  // utterance shorter than 200 ms
};

SegmentGrid segment_grid(int t_frames, int frame_period_ms);

enum class LocResolution { EncoderFrame, Segment };

struct LocalisationResult {
  int keyword = -1;
  LocMethod method = LocMethod::Attention;
  LocResolution resolution = LocResolution::EncoderFrame;
  std::vector<double> alpha;
  // EncoderFrame: input-frame centre per encoder step. Segment: the windows.
  std::vector<int> centers;
  std::vector<SegmentWindow> segments;
  int tau_frame = 0;
  bool no_evidence = false;   // Grad-CAM produced all-zero scores
  bool grid_fallback = false;
};

// alpha[i] -> location_of[i]; earliest argmax wins.
int predict_location(std::span<const double> alpha, std::span<const int> location_of);

// Detection probability of `keyword` on each zero-padded segment in
// isolation; tau is the best segment's midpoint.
LocalisationResult loc_masked_in(const ModelParams& p, const FeatureMatrix& fm, int keyword,
                                 const SegmentGrid& grid);
// Complement score 1 - p(w | utterance with the segment occluded).
LocalisationResult loc_masked_out(const ModelParams& p, const FeatureMatrix& fm, int keyword,
                                  const SegmentGrid& grid);
// Batched sweep: one encoder pass per segment shared by all keywords.
// Bitwise equal to calling loc_masked_in/out per keyword.
std::vector<LocalisationResult> loc_masked_sweep(const ModelParams& p, const FeatureMatrix& fm,
                                                 std::span<const int> keywords,
                                                 const SegmentGrid& grid, bool masked_in);

// alpha = row of encoder output (PSC only: frame activations are scores).
LocalisationResult loc_score_agg(const ModelParams& p, const FeatureMatrix& fm, int keyword);
// alpha = attention weights (attention architectures only).
LocalisationResult loc_attention(const ModelParams& p, const FeatureMatrix& fm, int keyword);
// alpha_t = ReLU(sum_k gamma_k h_tk), gamma_k = mean_t d p(w|a) / d h_tk.
LocalisationResult loc_gradcam(const ModelParams& p, const FeatureMatrix& fm, int keyword);

// CSV rows (utt_id, keyword, method, start_ms, end_ms, alpha) followed by a
// tau summary row.
void write_scores_csv(std::ostream& out, const std::string& utt_id,
                      const std::string& keyword, const LocalisationResult& r,
                      int frame_period_ms, double detection_prob);

}  // namespace kwloc

#endif  // KWLOC_LOCALISATION_HPP
