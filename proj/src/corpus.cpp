/*
 * tessellate - temporal semantic transfer for video clip sequences
 *
 * Licensed under the terms of the Apache 2.0 License.
 * See LICENSE file in the project root for terms.
 */
#include "tessellate/corpus.hpp"

#include <algorithm>
#include <cstdlib>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "tessellate/error.hpp"
#include "tessellate/matrix_io.hpp"

namespace tess {

using nlohmann::json;

TaskTag parse_task_tag(const std::string& s) {
  if (s == "text") return TaskTag::Text;
  if (s == "importance" || s == "summary") return TaskTag::Importance;
  if (s == "action" || s == "detect") return TaskTag::Action;
  if (s == "sound") return TaskTag::Sound;
  throw InvalidArgument("unknown task tag '" + s + "' (expected text|importance|action|sound)");
}

const char* to_string(TaskTag t) {
  switch (t) {
    case TaskTag::Text: return "text";
    case TaskTag::Importance: return "importance";
    case TaskTag::Action: return "action";
    case TaskTag::Sound: return "sound";
  }
  return "unknown";
}

std::size_t ReferenceCorpus::num_transitions() const {
  std::size_t n = 0;
  for (const auto& range : video_boundaries) n += (range.end - range.begin) - 1;
  return n;
}

namespace {

const std::set<std::string> kManifestKeys = {
    "video_id",  "clip_index",     "appearance_file", "appearance_row",
    "semantics_file", "semantics_row", "importance",   "label",
    "sound_file", "sound_row",     "clip_stride_frames", "frame_count"};

std::filesystem::path data_root(const std::filesystem::path& manifest_path) {
  if (const char* env = std::getenv("TESSELLATE_DATA_DIR"); env && *env)
    return std::filesystem::path(env);
  auto parent = manifest_path.parent_path();
  return parent.empty() ? std::filesystem::path(".") : parent;
}

// Feature files are loaded once and shared across the records that index into them.
class MatrixCache {
 public:
  explicit MatrixCache(std::filesystem::path root) : root_(std::move(root)) {}

  Vector row(const std::string& file, std::int64_t row, const std::string& record_name) {
    auto it = cache_.find(file);
    if (it == cache_.end()) {
      const auto path = root_ / file;
      if (!std::filesystem::exists(path))
        throw IngestionError("record " + record_name + ": missing file " + path.string());
      it = cache_.emplace(file, load_feature_matrix(path)).first;
    }
    const FeatureMatrix& m = it->second;
    if (row < 0 || row >= m.rows())
      throw IngestionError("record " + record_name + ": row " + std::to_string(row) +
                           " out of range for " + file + " with " + std::to_string(m.rows()) +
                           " rows");
    return m.row(row).transpose();
  }

 private:
  std::filesystem::path root_;
  std::map<std::string, FeatureMatrix> cache_;
};

std::string record_name(const json& j, std::size_t line_no) {
  std::ostringstream s;
  s << "(" << j.value("video_id", std::string("?")) << ", ";
  if (j.contains("clip_index") && j["clip_index"].is_number_integer())
    s << j["clip_index"].get<std::int64_t>();
  else
    s << "?";
  s << ") at line " << line_no;
  return s.str();
}

void sort_and_validate(std::vector<ClipRecord>& records) {
  std::stable_sort(records.begin(), records.end(), [](const ClipRecord& a, const ClipRecord& b) {
    return std::tie(a.video_id, a.clip_index) < std::tie(b.video_id, b.clip_index);
  });
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const bool first_of_video = i == 0 || records[i - 1].video_id != r.video_id;
    const std::int64_t expected = first_of_video ? 0 : records[i - 1].clip_index + 1;
    if (!first_of_video && r.clip_index == records[i - 1].clip_index)
      throw IngestionError("duplicate clip (" + r.video_id + ", " +
                           std::to_string(r.clip_index) + ")");
    if (r.clip_index != expected)
      throw IngestionError("gap in clip_index for video " + r.video_id + ": expected " +
                           std::to_string(expected) + ", found " + std::to_string(r.clip_index));
  }
}

std::vector<VideoRange> boundaries_of(const std::vector<ClipRecord>& records) {
  std::vector<VideoRange> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (out.empty() || out.back().video_id != records[i].video_id)
      out.push_back({records[i].video_id, i, i + 1});
    else
      out.back().end = i + 1;
  }
  return out;
}

}  // namespace

std::vector<ClipRecord> load_manifest(const std::filesystem::path& path) {
  const std::string bytes = read_file_bytes(path);
  MatrixCache cache(data_root(path));

  std::vector<ClipRecord> records;
  std::istringstream in(bytes);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw IngestionError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.is_object())
      throw IngestionError("manifest line " + std::to_string(line_no) + ": not a JSON object");
    const std::string name = record_name(j, line_no);
    for (const auto& [key, _] : j.items()) {
      if (!kManifestKeys.count(key))
        throw IngestionError("record " + name + ": unknown manifest key '" + key + "'");
    }
    for (const char* key : {"video_id", "clip_index", "appearance_file", "appearance_row"}) {
      if (!j.contains(key))
        throw IngestionError("record " + name + ": missing required key '" + std::string(key) + "'");
    }

    ClipRecord r;
    r.video_id = j["video_id"].get<std::string>();
    r.clip_index = j["clip_index"].get<std::int64_t>();
    r.appearance = cache.row(j["appearance_file"].get<std::string>(),
                             j["appearance_row"].get<std::int64_t>(), name);
    if (j.contains("semantics_file")) {
      if (!j.contains("semantics_row"))
        throw IngestionError("record " + name + ": semantics_file without semantics_row");
      r.semantics_vector = cache.row(j["semantics_file"].get<std::string>(),
                                     j["semantics_row"].get<std::int64_t>(), name);
    }
    if (j.contains("importance")) r.importance = j["importance"].get<std::vector<double>>();
    if (j.contains("label")) r.label = j["label"].get<std::string>();
    if (j.contains("sound_file")) {
      if (!j.contains("sound_row"))
        throw IngestionError("record " + name + ": sound_file without sound_row");
      Vector s = cache.row(j["sound_file"].get<std::string>(),
                           j["sound_row"].get<std::int64_t>(), name);
      if (s.size() != kSoundFeatureDim)
        throw IngestionError("record " + name + ": sound payload has " +
                             std::to_string(s.size()) + " values, expected " +
                             std::to_string(kSoundFeatureDim));
      r.sound = std::move(s);
    }
    if (j.contains("clip_stride_frames"))
      r.clip_stride_frames = j["clip_stride_frames"].get<double>();
    if (j.contains("frame_count")) r.frame_count = j["frame_count"].get<std::int64_t>();
    records.push_back(std::move(r));
  }

  sort_and_validate(records);
  return records;
}

ReferenceCorpus build_corpus(const std::vector<ClipRecord>& records,
                             const EmbeddingModel& embedding, TaskTag task) {
  if (records.empty()) throw InvalidArgument("build_corpus: no records");

  for (const auto& r : records) {
    const std::string name = "(" + r.video_id + ", " + std::to_string(r.clip_index) + ")";
    switch (task) {
      case TaskTag::Text:
        if (!r.semantics_vector)
          throw InvalidArgument("build_corpus: record " + name +
                                " lacks semantics_vector required by the text task");
        break;
      case TaskTag::Importance:
        if (!r.importance)
          throw InvalidArgument("build_corpus: record " + name +
                                " lacks importance scores required by the importance task");
        break;
      case TaskTag::Action:
        if (!r.label)
          throw InvalidArgument("build_corpus: record " + name +
                                " lacks a label required by the action task");
        break;
      case TaskTag::Sound:
        if (!r.sound)
          throw InvalidArgument("build_corpus: record " + name +
                                " lacks sound features required by the sound task");
        if (r.sound->size() != kSoundFeatureDim)
          throw InvalidArgument("build_corpus: record " + name + " sound payload has " +
                                std::to_string(r.sound->size()) + " values, expected " +
                                std::to_string(kSoundFeatureDim));
        break;
    }
  }

  ReferenceCorpus corpus;
  corpus.clips = records;
  corpus.task = task;
  sort_and_validate(corpus.clips);
  corpus.video_boundaries = boundaries_of(corpus.clips);

  const Eigen::Index n = static_cast<Eigen::Index>(corpus.clips.size());
  const Eigen::Index svs = embedding.svs_dim();
  FeatureMatrix appearance(n, svs);
  for (Eigen::Index i = 0; i < n; ++i)
    appearance.row(i) = embedding.embed_appearance(corpus.clips[i].appearance).transpose();

  if (task == TaskTag::Text) {
    corpus.svs_semantics.resize(n, svs);
    for (Eigen::Index i = 0; i < n; ++i)
      corpus.svs_semantics.row(i) =
          embedding.embed_semantics(*corpus.clips[i].semantics_vector).transpose();
  } else {
    // Low-information labels: the semantic space is the appearance space.
    corpus.svs_semantics = appearance;
  }
  corpus.svs_appearance = std::move(appearance);
  return corpus;
}

std::vector<QuerySequence> build_queries(const std::vector<ClipRecord>& records,
                                         const EmbeddingModel& embedding) {
  if (records.empty()) throw InvalidArgument("build_queries: no records");
  std::vector<ClipRecord> sorted = records;
  sort_and_validate(sorted);
  const auto ranges = boundaries_of(sorted);

  std::vector<QuerySequence> out;
  out.reserve(ranges.size());
  for (const auto& range : ranges) {
    QuerySequence q;
    q.video_id = range.video_id;
    q.svs_appearance.resize(static_cast<Eigen::Index>(range.end - range.begin),
                            embedding.svs_dim());
    for (std::size_t i = range.begin; i < range.end; ++i) {
      q.svs_appearance.row(static_cast<Eigen::Index>(i - range.begin)) =
          embedding.embed_appearance(sorted[i].appearance).transpose();
      q.clips.push_back(sorted[i]);
    }
    out.push_back(std::move(q));
  }
  return out;
}

namespace {

json record_to_json(const ClipRecord& r) {
  json j;
  j["video_id"] = r.video_id;
  j["clip_index"] = r.clip_index;
  j["appearance"] = std::vector<double>(r.appearance.data(), r.appearance.data() + r.appearance.size());
  if (r.semantics_vector)
    j["semantics"] = std::vector<double>(r.semantics_vector->data(),
                                         r.semantics_vector->data() + r.semantics_vector->size());
  if (r.importance) j["importance"] = *r.importance;
  if (r.label) j["label"] = *r.label;
  if (r.sound) j["sound"] = std::vector<double>(r.sound->data(), r.sound->data() + r.sound->size());
  if (r.clip_stride_frames) j["clip_stride_frames"] = *r.clip_stride_frames;
  if (r.frame_count) j["frame_count"] = *r.frame_count;
  return j;
}

Vector vector_from_json(const json& j) {
  const auto values = j.get<std::vector<double>>();
  Vector v(static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) v(static_cast<Eigen::Index>(i)) = values[i];
  return v;
}

ClipRecord record_from_json(const json& j) {
  ClipRecord r;
  r.video_id = j["video_id"].get<std::string>();
  r.clip_index = j["clip_index"].get<std::int64_t>();
  r.appearance = vector_from_json(j["appearance"]);
  if (j.contains("semantics")) r.semantics_vector = vector_from_json(j["semantics"]);
  if (j.contains("importance")) r.importance = j["importance"].get<std::vector<double>>();
  if (j.contains("label")) r.label = j["label"].get<std::string>();
  if (j.contains("sound")) r.sound = vector_from_json(j["sound"]);
  if (j.contains("clip_stride_frames")) r.clip_stride_frames = j["clip_stride_frames"].get<double>();
  if (j.contains("frame_count")) r.frame_count = j["frame_count"].get<std::int64_t>();
  return r;
}

}  // namespace

void save_corpus(const ReferenceCorpus& corpus, const std::filesystem::path& path) {
  MatrixContainer c;
  c.meta["kind"] = "reference-corpus";
  c.meta["format_version"] = 1;
  c.meta["task"] = to_string(corpus.task);
  json clips = json::array();
  for (const auto& r : corpus.clips) clips.push_back(record_to_json(r));
  c.meta["clips"] = std::move(clips);
  c.set("svs_semantics", corpus.svs_semantics);
  if (corpus.svs_appearance) c.set("svs_appearance", *corpus.svs_appearance);
  c.save(path);
}

ReferenceCorpus load_corpus(const std::filesystem::path& path) {
  const MatrixContainer c = MatrixContainer::load(path);
  if (!c.meta.contains("kind") || c.meta["kind"] != "reference-corpus")
    throw FormatError("corpus: wrong container kind in " + path.string());
  ReferenceCorpus corpus;
  corpus.task = parse_task_tag(c.meta["task"].get<std::string>());
  for (const auto& j : c.meta["clips"]) corpus.clips.push_back(record_from_json(j));
  corpus.svs_semantics = c.get("svs_semantics");
  if (c.contains("svs_appearance")) corpus.svs_appearance = c.get("svs_appearance");
  if (corpus.svs_semantics.rows() != static_cast<Eigen::Index>(corpus.clips.size()))
    throw FormatError("corpus: clip count does not match svs_semantics rows in " + path.string());
  corpus.video_boundaries = boundaries_of(corpus.clips);
  return corpus;
}

}  // namespace tess
