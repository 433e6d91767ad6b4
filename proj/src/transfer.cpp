/*
 * tessellate - temporal semantic transfer for video clip sequences
 *
 * Licensed under the terms of the Apache 2.0 License.
 * See LICENSE file in the project root for terms.
 */
#include "tessellate/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "tessellate/error.hpp"

namespace tess {

namespace {

// Linear resampling of a score sequence onto a new length, endpoints pinned.
std::vector<double> resample_linear(const std::vector<double>& src, std::int64_t n) {
  std::vector<double> out(static_cast<std::size_t>(n));
  if (src.size() == 1) {
    std::fill(out.begin(), out.end(), src[0]);
    return out;
  }
  for (std::int64_t k = 0; k < n; ++k) {
    const double pos = n == 1 ? 0.0
                              : static_cast<double>(k) *
                                    static_cast<double>(src.size() - 1) /
                                    static_cast<double>(n - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, src.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    out[static_cast<std::size_t>(k)] = (1.0 - frac) * src[lo] + frac * src[hi];
  }
  return out;
}

const ClipRecord& assigned_clip(const TessellationPath& path,
                                const ReferenceCorpus& corpus, std::size_t i) {
  const RefId a = path.assignments[i];
  if (a < 0 || static_cast<std::size_t>(a) >= corpus.clips.size())
    throw InvalidArgument("assignment " + std::to_string(a) +
                          " is outside the corpus");
  return corpus.clips[static_cast<std::size_t>(a)];
}

void check_interval(const Interval& v) {
  if (!(v.start < v.end))
    throw InvalidArgument("interval [" + std::to_string(v.start) + ", " +
                          std::to_string(v.end) + ") has start >= end");
}

}  // namespace

std::size_t SummarySelection::kept() const {
  return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), 1));
}

SummarySelection transfer_importance(const TessellationPath& path,
                                     const ReferenceCorpus& corpus,
                                     const std::vector<std::int64_t>& query_frame_counts,
                                     double budget_fraction) {
  if (path.assignments.size() != query_frame_counts.size())
    throw InvalidArgument("transfer_importance: one frame count per query clip required");
  if (path.assignments.empty())
    throw InvalidArgument("transfer_importance: empty path");
  if (!(budget_fraction > 0.0) || budget_fraction > 1.0)
    throw InvalidArgument("transfer_importance: budget_fraction must lie in (0, 1]");

  std::vector<double> importance;
  for (std::size_t i = 0; i < path.assignments.size(); ++i) {
    if (query_frame_counts[i] < 1)
      throw InvalidArgument("transfer_importance: frame counts must be >= 1");
    const ClipRecord& ref = assigned_clip(path, corpus, i);
    if (!ref.importance || ref.importance->empty())
      throw InvalidArgument("transfer_importance: reference clip " +
                            ref.video_id + "/" + std::to_string(ref.clip_index) +
                            " has no importance payload");
    const auto scores = resample_linear(*ref.importance, query_frame_counts[i]);
    importance.insert(importance.end(), scores.begin(), scores.end());
  }

  const std::size_t total = importance.size();
  const auto budget = static_cast<std::size_t>(
      std::floor(budget_fraction * static_cast<double>(total)));
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&importance](std::size_t a, std::size_t b) {
    if (importance[a] != importance[b]) return importance[a] > importance[b];
    return a < b;
  });

  SummarySelection sel;
  sel.budget_fraction = budget_fraction;
  sel.keep.assign(total, 0);
  for (std::size_t k = 0; k < budget; ++k) sel.keep[order[k]] = 1;
  return sel;
}

double fmeasure(const SummarySelection& pred,
                const std::vector<std::vector<double>>& annotations) {
  if (annotations.empty())
    throw InvalidArgument("fmeasure: at least one annotation required");
  double sum = 0.0;
  for (const auto& ann : annotations) {
    if (ann.size() != pred.keep.size())
      throw InvalidArgument("fmeasure: annotation has " +
                            std::to_string(ann.size()) + " frames, mask has " +
                            std::to_string(pred.keep.size()));
    std::size_t np = 0, ng = 0, inter = 0;
    for (std::size_t i = 0; i < ann.size(); ++i) {
      const bool p = pred.keep[i] != 0;
      const bool g = ann[i] > 0.0;
      np += p;
      ng += g;
      inter += p && g;
    }
    const double precision = np == 0 ? 0.0 : static_cast<double>(inter) / np;
    const double recall = ng == 0 ? 0.0 : static_cast<double>(inter) / ng;
    sum += precision + recall == 0.0
               ? 0.0
               : 2.0 * precision * recall / (precision + recall);
  }
  return sum / static_cast<double>(annotations.size());
}

std::vector<Interval> labels_to_intervals(const TessellationPath& path,
                                          const ReferenceCorpus& corpus,
                                          double clip_stride, int min_len,
                                          const std::string& background) {
  if (!(clip_stride > 0.0))
    throw InvalidArgument("labels_to_intervals: clip_stride must be > 0");
  if (min_len < 1) throw InvalidArgument("labels_to_intervals: min_len must be >= 1");
  if (path.assignments.empty())
    throw InvalidArgument("labels_to_intervals: empty path");
  if (path.clip_energies.size() != path.assignments.size())
    throw InvalidArgument("labels_to_intervals: path lacks per-clip energies");

  std::vector<std::string> labels(path.assignments.size());
  for (std::size_t i = 0; i < path.assignments.size(); ++i) {
    const ClipRecord& ref = assigned_clip(path, corpus, i);
    if (!ref.label)
      throw InvalidArgument("labels_to_intervals: reference clip " + ref.video_id +
                            "/" + std::to_string(ref.clip_index) + " has no label");
    labels[i] = *ref.label;
  }

  std::vector<Interval> out;
  std::size_t run = 0;
  for (std::size_t i = 1; i <= labels.size(); ++i) {
    if (i < labels.size() && labels[i] == labels[run]) continue;
    const std::size_t len = i - run;
    if (labels[run] != background && len >= static_cast<std::size_t>(min_len)) {
      Interval v;
      v.start = static_cast<double>(run) * clip_stride;
      v.end = static_cast<double>(i) * clip_stride;
      v.label = labels[run];
      double s = 0.0;
      for (std::size_t k = run; k < i; ++k) s += std::exp(-path.clip_energies[k]);
      v.score = s / static_cast<double>(len);
      out.push_back(std::move(v));
    }
    run = i;
  }
  return out;
}

double interval_iou(const Interval& a, const Interval& b) {
  check_interval(a);
  check_interval(b);
  const double inter =
      std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const double uni = (a.end - a.start) + (b.end - b.start) - inter;
  return inter / uni;
}

double average_precision(std::vector<Interval> detections,
                         const std::vector<Interval>& gt_intervals,
                         double iou_threshold, ApInterpolation interp) {
  if (!(iou_threshold > 0.0) || !(iou_threshold < 1.0))
    throw InvalidArgument("average_precision: iou_threshold must lie in (0, 1)");
  for (const Interval& v : gt_intervals) check_interval(v);
  if (detections.empty() || gt_intervals.empty()) return 0.0;

  std::sort(detections.begin(), detections.end(),
            [](const Interval& a, const Interval& b) {
              if (a.score != b.score) return a.score > b.score;
              if (a.start != b.start) return a.start < b.start;
              return a.end < b.end;
            });

  std::vector<bool> matched(gt_intervals.size(), false);
  std::vector<bool> tp(detections.size(), false);
  for (std::size_t d = 0; d < detections.size(); ++d) {
    check_interval(detections[d]);
    double best_iou = 0.0;
    std::size_t best_g = gt_intervals.size();
    for (std::size_t g = 0; g < gt_intervals.size(); ++g) {
      if (matched[g]) continue;
      const double iou = interval_iou(detections[d], gt_intervals[g]);
      if (iou > best_iou) {
        best_iou = iou;
        best_g = g;
      }
    }
    if (best_g != gt_intervals.size() && best_iou > iou_threshold) {
      matched[best_g] = true;
      tp[d] = true;
    }
  }

  const double ng = static_cast<double>(gt_intervals.size());
  std::vector<double> precision(detections.size()), recall(detections.size());
  std::size_t tps = 0;
  for (std::size_t d = 0; d < detections.size(); ++d) {
    tps += tp[d];
    precision[d] = static_cast<double>(tps) / static_cast<double>(d + 1);
    recall[d] = static_cast<double>(tps) / ng;
  }
  // Interpolated precision: the best precision at this recall or beyond.
  std::vector<double> pmax(precision);
  for (std::size_t d = detections.size() - 1; d-- > 0;)
    pmax[d] = std::max(pmax[d], pmax[d + 1]);

  if (interp == ApInterpolation::ElevenPoint) {
    double sum = 0.0;
    for (int k = 0; k <= 10; ++k) {
      const double r = k / 10.0;
      double best = 0.0;
      for (std::size_t d = 0; d < detections.size(); ++d)
        if (recall[d] >= r) {
          best = pmax[d];
          break;
        }
      sum += best;
    }
    return sum / 11.0;
  }

  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t d = 0; d < detections.size(); ++d) {
    if (!tp[d]) continue;
    ap += (recall[d] - prev_recall) * pmax[d];
    prev_recall = recall[d];
  }
  return ap;
}

std::vector<MapResult> mean_ap(const std::vector<Interval>& detections,
                               const std::vector<Interval>& gt_intervals,
                               const std::vector<double>& thresholds,
                               ApInterpolation interp) {
  if (gt_intervals.empty())
    throw InvalidArgument("mean_ap: ground truth is empty");
  if (thresholds.empty()) throw InvalidArgument("mean_ap: no thresholds");

  std::set<std::string> classes;
  for (const Interval& v : gt_intervals) classes.insert(v.label);
  std::map<std::string, std::vector<Interval>> det_by, gt_by;
  for (const Interval& v : detections) det_by[v.label].push_back(v);
  for (const Interval& v : gt_intervals) gt_by[v.label].push_back(v);

  std::vector<MapResult> out;
  for (const double t : thresholds) {
    MapResult row;
    row.threshold = t;
    double sum = 0.0;
    for (const std::string& cls : classes) {
      const auto d = det_by.find(cls);
      const double ap = average_precision(
          d == det_by.end() ? std::vector<Interval>{} : d->second, gt_by[cls],
          t, interp);
      row.per_class.push_back({cls, ap});
      sum += ap;
    }
    row.map = sum / static_cast<double>(classes.size());
    out.push_back(std::move(row));
  }
  return out;
}

SoundFeatureClip SoundFeatureClip::from_flat(const Eigen::Ref<const Vector>& flat) {
  if (flat.size() != kSoundFeatureDim)
    throw InvalidArgument("sound features must have length " +
                          std::to_string(kSoundFeatureDim) + ", got " +
                          std::to_string(flat.size()));
  SoundFeatureClip clip;
  clip.features.resize(kSoundTimesteps, kSoundChannels);
  for (Eigen::Index r = 0; r < kSoundTimesteps; ++r)
    for (Eigen::Index c = 0; c < kSoundChannels; ++c)
      clip.features(r, c) = flat(r * kSoundChannels + c);
  return clip;
}

SoundFeatureClip sound_clip_of(const ClipRecord& record) {
  if (!record.sound)
    throw InvalidArgument("clip " + record.video_id + "/" +
                          std::to_string(record.clip_index) +
                          " has no sound payload");
  return SoundFeatureClip::from_flat(*record.sound);
}

namespace {
void check_sound(const SoundFeatureClip& clip) {
  if (clip.features.rows() != kSoundTimesteps ||
      clip.features.cols() != kSoundChannels)
    throw InvalidArgument("sound clip must be 15 x 126");
}
}  // namespace

double loudness(const SoundFeatureClip& clip) {
  check_sound(clip);
  return clip.features.rowwise().norm().maxCoeff();
}

double centroid(const SoundFeatureClip& clip) {
  check_sound(clip);
  const auto row = clip.features.row(kSoundTimesteps / 2);
  const double total = row.sum();
  if (total == 0.0)
    throw UndefinedResult("centroid: center timestep has zero total energy");
  double weighted = 0.0;
  for (Eigen::Index k = 0; k < row.size(); ++k)
    weighted += static_cast<double>(k) * row(k);
  return weighted / total;
}

RegressionMetrics regression_metrics(const std::vector<double>& pred,
                                     const std::vector<double>& gt) {
  if (pred.size() != gt.size())
    throw InvalidArgument("regression_metrics: length mismatch");
  if (pred.size() < 2)
    throw InvalidArgument("regression_metrics: need at least 2 samples");
  const auto n = static_cast<double>(pred.size());
  double mse = 0.0, mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - gt[i];
    mse += d * d;
    mx += pred[i];
    my += gt[i];
  }
  mse /= n;
  mx /= n;
  my /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double a = pred[i] - mx;
    const double b = gt[i] - my;
    sxx += a * a;
    syy += b * b;
    sxy += a * b;
  }
  if (sxx == 0.0 || syy == 0.0)
    throw UndefinedResult("regression_metrics: zero variance makes the correlation undefined");
  RegressionMetrics out;
  out.mse = mse;
  out.pearson_r = sxy / std::sqrt(sxx * syy);
  return out;
}

}  // namespace tess
