/*
 * tessellate - temporal semantic transfer for video clip sequences
 *
 * Licensed under the terms of the Apache 2.0 License.
 * See LICENSE file in the project root for terms.
 */
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tessellate/embedding.hpp"
#include "tessellate/types.hpp"

namespace tess {

// The kind of semantics a corpus carries, which decides both the required
// payload fields and how reference points are placed in the joint space.
enum class TaskTag { Text, Importance, Action, Sound };

TaskTag parse_task_tag(const std::string& s);
const char* to_string(TaskTag t);

// Sound payloads are 15 timesteps of 126 subband channels, flattened.
inline constexpr Eigen::Index kSoundTimesteps = 15;
inline constexpr Eigen::Index kSoundChannels = 126;
inline constexpr Eigen::Index kSoundFeatureDim = kSoundTimesteps * kSoundChannels;

struct ClipRecord {
  std::string video_id;
  std::int64_t clip_index = 0;
  Vector appearance;

  // Task payloads; which ones must be present depends on the TaskTag.
  std::optional<Vector> semantics_vector;        // text embedding S
  std::optional<std::vector<double>> importance; // per-frame importance scores
  std::optional<std::string> label;              // action class
  std::optional<Vector> sound;                   // flattened 15 x 126 features

  std::optional<double> clip_stride_frames;
  std::optional<std::int64_t> frame_count;
};

struct VideoRange {
  std::string video_id;
  std::size_t begin = 0;  // first clip index into the flat clip list
  std::size_t end = 0;    // one past the last
};

// Immutable after build; shared read-only across query workers.
struct ReferenceCorpus {
  std::vector<ClipRecord> clips;
  FeatureMatrix svs_semantics;                  // N x svs-dim
  std::optional<FeatureMatrix> svs_appearance;  // N x svs-dim
  std::vector<VideoRange> video_boundaries;
  TaskTag task = TaskTag::Importance;

  std::size_t size() const { return clips.size(); }
  Eigen::Index svs_dim() const { return svs_semantics.cols(); }

  // Consecutive same-video clip pairs; never crosses a video boundary.
  std::size_t num_transitions() const;
};

struct QuerySequence {
  std::string video_id;
  FeatureMatrix svs_appearance;  // M x svs-dim, rows in temporal order
  std::vector<ClipRecord> clips;

  Eigen::Index size() const { return svs_appearance.rows(); }
};

// Manifest: one JSON object per line. Fields:
//   video_id (string), clip_index (int), appearance_file (string),
//   appearance_row (int); optional: semantics_file + semantics_row,
//   importance (array of numbers), label (string), sound_file + sound_row,
//   clip_stride_frames (number), frame_count (int).
// Referenced files resolve against $TESSELLATE_DATA_DIR when set, otherwise
// against the manifest's own directory. Records are canonically ordered by
// (video_id, clip_index), so ingestion is independent of line order.
std::vector<ClipRecord> load_manifest(const std::filesystem::path& path);

ReferenceCorpus build_corpus(const std::vector<ClipRecord>& records,
                             const EmbeddingModel& embedding, TaskTag task);

std::vector<QuerySequence> build_queries(const std::vector<ClipRecord>& records,
                                         const EmbeddingModel& embedding);

// Prebuilt corpus round-trip through the matrix container format. The clip
// records travel in the container metadata.
void save_corpus(const ReferenceCorpus& corpus, const std::filesystem::path& path);
ReferenceCorpus load_corpus(const std::filesystem::path& path);

}  // namespace tess
