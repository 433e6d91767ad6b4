/*
 * tessellate - temporal semantic transfer for video clip sequences
 *
 * Licensed under the terms of the Apache 2.0 License.
 * See LICENSE file in the project root for terms.
 */
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tessellate/corpus.hpp"
#include "tessellate/tessellation.hpp"
#include "tessellate/types.hpp"

namespace tess {

// A scored, labeled time span. Times are in whatever unit the producer used
// (labels_to_intervals emits clip_stride units); start < end always.
struct Interval {
  double start = 0.0;
  double end = 0.0;
  std::string label;
  double score = 0.0;
};

// Per-frame keep mask of a summary, together with the budget it honored.
// The kept fraction never exceeds budget_fraction (floor rule).
struct SummarySelection {
  std::vector<std::uint8_t> keep;
  double budget_fraction = 0.15;

  std::size_t kept() const;
};

// Frame importance transfer: every query frame inherits the importance of its
// clip's assigned reference clip (linearly resampled to the query clip's
// frame count), then frames are kept greedily by descending importance until
// floor(budget * total_frames) are selected; ties keep the earlier frame.
SummarySelection transfer_importance(const TessellationPath& path,
                                     const ReferenceCorpus& corpus,
                                     const std::vector<std::int64_t>& query_frame_counts,
                                     double budget_fraction = 0.15);

// Mean F-measure of the mask against each annotation, F = 2PR/(P+R) and 0
// when P+R = 0. Graded annotations count a frame as positive when > 0.
double fmeasure(const SummarySelection& pred,
                const std::vector<std::vector<double>>& annotations);

// Maximal runs of identical assigned labels become intervals in clip_stride
// units, scored by the mean of exp(-data_energy) over the run. Runs shorter
// than min_len clips and runs of the background label emit nothing.
std::vector<Interval> labels_to_intervals(const TessellationPath& path,
                                          const ReferenceCorpus& corpus,
                                          double clip_stride, int min_len = 1,
                                          const std::string& background = "background");

// Overlap length over union length; 0 when disjoint.
double interval_iou(const Interval& a, const Interval& b);

enum class ApInterpolation { AllPoint, ElevenPoint };

// Detection AP for one class: detections ranked by descending score, each
// matched greedily to the best unmatched ground truth, counted as true
// positive when the IoU is strictly above the threshold. Labels are ignored
// here; group per class before calling (or use mean_ap).
double average_precision(std::vector<Interval> detections,
                         const std::vector<Interval>& gt_intervals,
                         double iou_threshold,
                         ApInterpolation interp = ApInterpolation::AllPoint);

struct ApEntry {
  std::string label;
  double ap = 0.0;
};
struct MapResult {
  double threshold = 0.0;
  double map = 0.0;
  std::vector<ApEntry> per_class;
};

// AP per ground-truth class at each threshold, plus the class mean. Classes
// are those present in the ground truth.
std::vector<MapResult> mean_ap(
    const std::vector<Interval>& detections,
    const std::vector<Interval>& gt_intervals,
    const std::vector<double>& thresholds = {0.1, 0.2, 0.3, 0.4, 0.5},
    ApInterpolation interp = ApInterpolation::AllPoint);

// 15 timesteps x 126 subband channels of sound features.
struct SoundFeatureClip {
  FeatureMatrix features;

  static SoundFeatureClip from_flat(const Eigen::Ref<const Vector>& flat);
};

// The clip's sound payload as a SoundFeatureClip; throws InvalidArgument when
// absent.
SoundFeatureClip sound_clip_of(const ClipRecord& record);

// Maximum L2 norm over the timestep rows.
double loudness(const SoundFeatureClip& clip);

// Center of mass of the channel energies of the center timestep (row 7).
// Throws UndefinedResult when that row sums to zero.
double centroid(const SoundFeatureClip& clip);

struct RegressionMetrics {
  double mse = 0.0;
  double pearson_r = 0.0;
};

// Mean squared error and Pearson correlation; lengths must match and be >= 2,
// and the correlation requires nonzero variance on both sides.
RegressionMetrics regression_metrics(const std::vector<double>& pred,
                                     const std::vector<double>& gt);

}  // namespace tess
