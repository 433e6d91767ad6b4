/*
 * tessellate - temporal semantic transfer for video clip sequences
 *
 * Licensed under the terms of the Apache 2.0 License.
 * See LICENSE file in the project root for terms.
 */
#include "tessellate/cli.hpp"

#include <atomic>
#include <chrono>
#include <cstring>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <thread>
#include <utility>

#include <CLI11.hpp>
#include <json.hpp>

#include "tessellate/corpus.hpp"
#include "tessellate/embedding.hpp"
#include "tessellate/error.hpp"
#include "tessellate/matrix_io.hpp"
#include "tessellate/predictor.hpp"
#include "tessellate/synth.hpp"
#include "tessellate/tessellation.hpp"
#include "tessellate/transfer.hpp"

namespace tess {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

int exit_code_for(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::InvalidArgument:
      return 2;
    case ErrorCategory::Format:
    case ErrorCategory::Ingestion:
      return 3;
    case ErrorCategory::Numeric:
    case ErrorCategory::ResourceLimit:
    case ErrorCategory::UndefinedResult:
      return 4;
  }
  return 4;
}

void print_error(const std::string& category, const std::string& message) {
  json j;
  j["error"] = category;
  j["message"] = message;
  std::cerr << j.dump() << std::endl;
}

// --config files are flat JSON objects; command-line flags override them and
// unknown keys are usage errors. CLI11 only consults config files on the root
// app, so the layer is applied by rewriting argv before the real parse.
std::string config_scalar(const json& v) {
  return v.is_string() ? v.get<std::string>() : v.dump();
}

bool flag_given(const std::vector<std::string>& args, std::size_t from,
                const std::string& flag) {
  for (std::size_t i = from; i < args.size(); ++i)
    if (args[i] == flag || args[i].rfind(flag + "=", 0) == 0) return true;
  return false;
}

std::vector<std::string> apply_config_layer(const CLI::App& app,
                                            std::vector<std::string> args) {
  const CLI::App* sub = nullptr;
  std::size_t sub_pos = 0;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i].empty() || args[i][0] == '-') continue;
    sub = app.get_subcommand_no_throw(args[i]);
    sub_pos = i;
    break;
  }
  if (sub == nullptr) return args;

  std::string cfg_path;
  for (std::size_t i = sub_pos + 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size())
      cfg_path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0)
      cfg_path = args[i].substr(9);
  }
  if (cfg_path.empty()) return args;

  std::ifstream in(cfg_path);
  if (!in) throw CLI::ConfigError("cannot open config file: " + cfg_path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw CLI::ConfigError("config " + cfg_path + " is not valid JSON: " + e.what());
  }
  if (!j.is_object())
    throw CLI::ConfigError("config " + cfg_path + " must be a JSON object");

  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string flag = "--" + it.key();
    if (it.key() == "config" || sub->get_option_no_throw(flag) == nullptr)
      throw CLI::ConfigError("config " + cfg_path + ": unknown key \"" + it.key() +
                             "\" for subcommand " + sub->get_name());
    if (flag_given(args, sub_pos + 1, flag)) continue;  // command line wins
    args.push_back(flag);
    if (it.value().is_array()) {
      std::string joined;
      for (const json& e : it.value()) {
        if (!joined.empty()) joined += ',';
        joined += config_scalar(e);
      }
      args.push_back(joined);
    } else {
      args.push_back(config_scalar(it.value()));
    }
  }
  return args;
}

// Runs fn(0..n-1) on up to `workers` threads. Results must be written to
// disjoint slots; the first exception is rethrown after joining.
template <typename F>
void parallel_for(std::size_t n, int workers, F&& fn) {
  if (workers < 1) workers = 1;
  const std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  if (w <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  pool.reserve(w);
  for (std::size_t t = 0; t < w; ++t)
    pool.emplace_back([&] {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
          return;
        }
      }
    });
  for (std::thread& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

int default_workers() {
  const unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : static_cast<int>(n);
}

// Reproducibility sidecar written next to every output.
struct RunInfo {
  std::string command;
  json parameters = json::object();
  json extra = json::object();
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;
  Clock::time_point start = Clock::now();
};

void write_run_manifest(const RunInfo& info, const fs::path& path) {
  json j;
  j["format_version"] = kOutputFormatVersion;
  j["command"] = info.command;
  j["parameters"] = info.parameters;
  json in = json::object();
  for (const fs::path& p : info.inputs) in[p.string()] = content_hash(read_file_bytes(p));
  j["inputs"] = in;
  json out = json::object();
  for (const fs::path& p : info.outputs) out[p.string()] = content_hash(read_file_bytes(p));
  j["outputs"] = out;
  j["versions"] = {{"tool", kToolVersion},
                   {"fmat", kFmatVersion},
                   {"container", kContainerVersion}};
  j["wall_time_seconds"] =
      std::chrono::duration<double>(Clock::now() - info.start).count();
  for (auto it = info.extra.begin(); it != info.extra.end(); ++it) j[it.key()] = it.value();
  write_file_atomic(path, j.dump(2) + "\n");
}

bool is_container_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open " + path.string());
  char magic[4] = {0, 0, 0, 0};
  in.read(magic, 4);
  return in.gcount() == 4 && std::memcmp(magic, "FMTC", 4) == 0;
}

EmbeddingModel embedding_or_identity(const std::string& path,
                                     const std::vector<ClipRecord>& records) {
  if (!path.empty()) return EmbeddingModel::load(path);
  if (records.empty()) throw IngestionError("manifest has no records");
  return EmbeddingModel::identity(records.front().appearance.size());
}

// Accepts either a prebuilt corpus container or a manifest to ingest.
ReferenceCorpus load_corpus_flex(const std::string& corpus_path,
                                 const std::string& embedding_path, TaskTag task) {
  if (is_container_file(corpus_path)) return load_corpus(corpus_path);
  const auto records = load_manifest(corpus_path);
  return build_corpus(records, embedding_or_identity(embedding_path, records), task);
}

json parse_json_file(const fs::path& path, const char* what) {
  const std::string bytes = read_file_bytes(path);
  try {
    return json::parse(bytes);
  } catch (const json::exception& e) {
    throw FormatError(std::string(what) + " " + path.string() +
                      " is not valid JSON: " + e.what());
  }
}

void reject_unknown_keys(const json& j, const std::set<std::string>& allowed,
                         const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (allowed.find(it.key()) == allowed.end())
      throw FormatError(where + ": unknown key \"" + it.key() + "\"");
}

// ---------------------------------------------------------------------------
// fit-embedding

struct FitEmbeddingOpts {
  std::string manifest, task = "text", out;
  int appearance_dim = 0;  // 0 disables the per-view PCA
  int semantics_dim = 0;
  int svs_dim = 0;  // 0 means min of the (possibly reduced) view dims
  double lambda = -1.0;  // negative means the automatic default
};

FeatureMatrix apply_pca_rows(const PcaModel& pca, const FeatureMatrix& data) {
  FeatureMatrix out(data.rows(), pca.out_dim());
  for (Eigen::Index i = 0; i < data.rows(); ++i)
    out.row(i) = apply_pca(pca, data.row(i).transpose()).transpose();
  return out;
}

void run_fit_embedding(const FitEmbeddingOpts& o) {
  RunInfo info;
  info.command = "fit-embedding";
  info.parameters = {{"manifest", o.manifest}, {"task", o.task},
                     {"appearance_dim", o.appearance_dim},
                     {"semantics_dim", o.semantics_dim},
                     {"svs_dim", o.svs_dim}, {"lambda", o.lambda}, {"out", o.out}};
  info.inputs.push_back(o.manifest);

  const TaskTag task = parse_task_tag(o.task);
  const auto records = load_manifest(o.manifest);
  if (records.empty()) throw IngestionError("manifest has no records: " + o.manifest);

  const Eigen::Index app_dim = records.front().appearance.size();
  FeatureMatrix appearance(static_cast<Eigen::Index>(records.size()), app_dim);
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].appearance.size() != app_dim)
      throw IngestionError("appearance dimensions differ across records");
    appearance.row(static_cast<Eigen::Index>(i)) = records[i].appearance.transpose();
  }

  FeatureMatrix semantics;
  if (task == TaskTag::Text) {
    for (const ClipRecord& r : records)
      if (!r.semantics_vector)
        throw InvalidArgument("text task requires a semantics vector on every record");
    const Eigen::Index sem_dim = records.front().semantics_vector->size();
    semantics.resize(static_cast<Eigen::Index>(records.size()), sem_dim);
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (records[i].semantics_vector->size() != sem_dim)
        throw IngestionError("semantics dimensions differ across records");
      semantics.row(static_cast<Eigen::Index>(i)) = records[i].semantics_vector->transpose();
    }
  } else {
    semantics = appearance;  // the video is its own semantics for these tasks
  }

  EmbeddingModel model;
  FeatureMatrix app_in = appearance, sem_in = semantics;
  if (o.appearance_dim > 0) {
    model.appearance_pca = fit_pca(appearance, o.appearance_dim);
    app_in = apply_pca_rows(*model.appearance_pca, appearance);
  }
  if (task == TaskTag::Text) {
    if (o.semantics_dim > 0) {
      model.semantics_pca = fit_pca(semantics, o.semantics_dim);
      sem_in = apply_pca_rows(*model.semantics_pca, semantics);
    }
  } else {
    model.semantics_pca = model.appearance_pca;
    sem_in = app_in;
  }

  const Eigen::Index svs =
      o.svs_dim > 0 ? o.svs_dim : std::min(app_in.cols(), sem_in.cols());
  model.cca = fit_cca(app_in, sem_in, svs,
                      o.lambda < 0 ? std::nullopt : std::make_optional(o.lambda));
  model.save(o.out);
  info.outputs.push_back(o.out);
  write_run_manifest(info, o.out + ".run.json");
}

// ---------------------------------------------------------------------------
// build-corpus

struct BuildCorpusOpts {
  std::string manifest, task = "text", embedding, out;
};

void run_build_corpus(const BuildCorpusOpts& o) {
  RunInfo info;
  info.command = "build-corpus";
  info.parameters = {{"manifest", o.manifest}, {"task", o.task},
                     {"embedding", o.embedding}, {"out", o.out}};
  info.inputs.push_back(o.manifest);
  if (!o.embedding.empty()) info.inputs.push_back(o.embedding);

  const auto records = load_manifest(o.manifest);
  const ReferenceCorpus corpus = build_corpus(
      records, embedding_or_identity(o.embedding, records), parse_task_tag(o.task));
  save_corpus(corpus, o.out);
  info.outputs.push_back(o.out);
  write_run_manifest(info, o.out + ".run.json");
}

// ---------------------------------------------------------------------------
// tessellate

struct TessellateOpts {
  std::string mode = "viterbi";
  std::string corpus, query, embedding, predictor, task = "text", out;
  int topk = 5;
  double rel_threshold = 0.05;
  int workers = 0;  // 0 = all available cores
};

void run_tessellate(const TessellateOpts& o) {
  RunInfo info;
  info.command = "tessellate";
  info.parameters = {{"mode", o.mode}, {"corpus", o.corpus}, {"query", o.query},
                     {"embedding", o.embedding}, {"predictor", o.predictor},
                     {"task", o.task}, {"topk", o.topk},
                     {"rel_threshold", o.rel_threshold}, {"out", o.out}};
  info.inputs.push_back(o.corpus);
  info.inputs.push_back(o.query);
  if (!o.embedding.empty()) info.inputs.push_back(o.embedding);
  if (!o.predictor.empty()) info.inputs.push_back(o.predictor);

  const ReferenceCorpus corpus =
      load_corpus_flex(o.corpus, o.embedding, parse_task_tag(o.task));
  const auto query_records = load_manifest(o.query);
  const std::vector<QuerySequence> queries =
      build_queries(query_records, embedding_or_identity(o.embedding, query_records));

  std::optional<PredictorModel> predictor;
  if (o.mode == "supervised") {
    if (o.predictor.empty())
      throw InvalidArgument("supervised mode requires --predictor");
    predictor = PredictorModel::load(o.predictor);
  } else if (o.mode != "local" && o.mode != "viterbi") {
    throw InvalidArgument("unknown mode \"" + o.mode + "\"");
  }

  std::vector<TessellationPath> paths(queries.size());
  const int workers = o.workers > 0 ? o.workers : default_workers();
  parallel_for(queries.size(), workers, [&](std::size_t i) {
    if (o.mode == "local")
      paths[i] = tessellate_local(queries[i], corpus);
    else if (o.mode == "viterbi")
      paths[i] = tessellate_viterbi(queries[i], corpus, o.topk, o.rel_threshold);
    else
      paths[i] = tessellate_supervised(queries[i], corpus, *predictor, o.topk,
                                       o.rel_threshold);
  });

  json out;
  out["format_version"] = kOutputFormatVersion;
  out["mode"] = o.mode;
  out["topk"] = o.topk;
  out["rel_threshold"] = o.rel_threshold;
  json qs = json::array();
  for (std::size_t i = 0; i < queries.size(); ++i) {
    json q;
    q["video_id"] = queries[i].video_id;
    q["assignments"] = paths[i].assignments;
    q["clip_energies"] = paths[i].clip_energies;
    q["path_energy"] = paths[i].path_energy;
    qs.push_back(std::move(q));
  }
  out["queries"] = std::move(qs);
  write_file_atomic(o.out, out.dump(2) + "\n");
  info.outputs.push_back(o.out);
  write_run_manifest(info, o.out + ".run.json");
}

// ---------------------------------------------------------------------------
// train-predictor

struct TrainPredictorOpts {
  std::string corpus, embedding, task = "text", out;
  int hidden = 1000;
  int epochs = 100;
  double lr = 1e-3;
  double clip = 5.0;
  std::uint64_t seed = 7;
};

void run_train_predictor(const TrainPredictorOpts& o) {
  RunInfo info;
  info.command = "train-predictor";
  info.parameters = {{"corpus", o.corpus}, {"embedding", o.embedding},
                     {"task", o.task}, {"hidden", o.hidden}, {"epochs", o.epochs},
                     {"lr", o.lr}, {"clip", o.clip}, {"seed", o.seed},
                     {"out", o.out}};
  info.inputs.push_back(o.corpus);
  if (!o.embedding.empty()) info.inputs.push_back(o.embedding);

  const ReferenceCorpus corpus =
      load_corpus_flex(o.corpus, o.embedding, parse_task_tag(o.task));
  TrainingConfig config;
  config.hidden = o.hidden;
  config.epochs = o.epochs;
  config.learning_rate = o.lr;
  config.grad_clip = o.clip;
  config.seed = o.seed;
  const TrainingResult result = train_predictor(corpus, config);
  result.model.save(o.out);
  info.outputs.push_back(o.out);
  info.extra["loss_history"] = result.loss_history;
  write_run_manifest(info, o.out + ".run.json");
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateOpts {
  std::string task;  // summary | detect | sound | accuracy
  std::string pred, corpus, query, embedding, gt, truth, out;
  double budget = 0.15;
  double stride = 1.0;
  int min_len = 1;
  std::string background = "background";
  std::vector<double> thresholds = {0.1, 0.2, 0.3, 0.4, 0.5};
  std::string interp = "all";
};

struct Predictions {
  std::vector<std::string> order;
  std::map<std::string, TessellationPath> by_video;
};

Predictions load_predictions(const fs::path& path) {
  const json j = parse_json_file(path, "prediction file");
  reject_unknown_keys(j, {"format_version", "mode", "topk", "rel_threshold", "queries"},
                      "prediction file");
  if (!j.contains("queries") || !j["queries"].is_array())
    throw FormatError("prediction file " + path.string() + " lacks a queries array");
  Predictions out;
  for (const json& q : j["queries"]) {
    reject_unknown_keys(q, {"video_id", "assignments", "clip_energies", "path_energy"},
                        "prediction query");
    TessellationPath p;
    const auto vid = q.at("video_id").get<std::string>();
    p.assignments = q.at("assignments").get<std::vector<RefId>>();
    p.clip_energies = q.at("clip_energies").get<std::vector<double>>();
    p.path_energy = q.at("path_energy").get<double>();
    if (p.assignments.size() != p.clip_energies.size())
      throw FormatError("prediction for " + vid + " has mismatched array lengths");
    out.order.push_back(vid);
    out.by_video.emplace(vid, std::move(p));
  }
  return out;
}

const TessellationPath& prediction_for(const Predictions& preds,
                                       const std::string& video_id) {
  const auto it = preds.by_video.find(video_id);
  if (it == preds.by_video.end())
    throw InvalidArgument("no prediction for video " + video_id);
  return it->second;
}

// Query manifests grouped per video in canonical order.
std::vector<std::pair<std::string, std::vector<ClipRecord>>> group_by_video(
    const std::vector<ClipRecord>& records) {
  std::vector<std::pair<std::string, std::vector<ClipRecord>>> out;
  for (const ClipRecord& r : records) {
    if (out.empty() || out.back().first != r.video_id)
      out.push_back({r.video_id, {}});
    out.back().second.push_back(r);
  }
  return out;
}

json evaluate_summary(const EvaluateOpts& o, RunInfo& info) {
  if (o.corpus.empty() || o.query.empty() || o.gt.empty())
    throw InvalidArgument("summary evaluation needs --corpus, --query and --gt");
  info.inputs.insert(info.inputs.end(), {o.pred, o.corpus, o.query, o.gt});
  const Predictions preds = load_predictions(o.pred);
  const ReferenceCorpus corpus =
      load_corpus_flex(o.corpus, o.embedding, TaskTag::Importance);
  const auto videos = group_by_video(load_manifest(o.query));
  const json gt = parse_json_file(o.gt, "ground truth");
  reject_unknown_keys(gt, {"annotations"}, "ground truth");
  if (!gt.contains("annotations") || !gt["annotations"].is_object())
    throw FormatError("ground truth lacks an annotations object");

  json per_video = json::object();
  double sum = 0.0;
  for (const auto& [vid, clips] : videos) {
    const TessellationPath& path = prediction_for(preds, vid);
    std::vector<std::int64_t> frames;
    for (const ClipRecord& r : clips) {
      if (!r.frame_count)
        throw InvalidArgument("query clip " + vid + "/" +
                              std::to_string(r.clip_index) + " has no frame_count");
      frames.push_back(*r.frame_count);
    }
    const SummarySelection sel =
        transfer_importance(path, corpus, frames, o.budget);
    if (!gt["annotations"].contains(vid))
      throw InvalidArgument("ground truth has no annotations for video " + vid);
    const auto anns = gt["annotations"][vid].get<std::vector<std::vector<double>>>();
    const double f = fmeasure(sel, anns);
    per_video[vid] = f;
    sum += f;
  }
  if (videos.empty()) throw InvalidArgument("query manifest has no videos");

  json report;
  report["format_version"] = kOutputFormatVersion;
  report["task"] = "summary";
  report["budget"] = o.budget;
  report["per_video"] = per_video;
  report["mean_fmeasure"] = sum / static_cast<double>(videos.size());
  return report;
}

json evaluate_detect(const EvaluateOpts& o, RunInfo& info) {
  if (o.corpus.empty() || o.gt.empty())
    throw InvalidArgument("detection evaluation needs --corpus and --gt");
  info.inputs.insert(info.inputs.end(), {o.pred, o.corpus, o.gt});
  const Predictions preds = load_predictions(o.pred);
  const ReferenceCorpus corpus =
      load_corpus_flex(o.corpus, o.embedding, TaskTag::Action);

  // Videos are laid out one after another on a shared timeline, so intervals
  // from different videos can never overlap.
  std::map<std::string, double> offsets;
  double offset = 0.0;
  std::vector<Interval> detections;
  for (const std::string& vid : preds.order) {
    const TessellationPath& path = preds.by_video.at(vid);
    offsets[vid] = offset;
    for (Interval v : labels_to_intervals(path, corpus, o.stride, o.min_len,
                                          o.background)) {
      v.start += offset;
      v.end += offset;
      detections.push_back(std::move(v));
    }
    offset += static_cast<double>(path.assignments.size()) * o.stride;
  }

  const json gt = parse_json_file(o.gt, "ground truth");
  reject_unknown_keys(gt, {"intervals"}, "ground truth");
  if (!gt.contains("intervals") || !gt["intervals"].is_array())
    throw FormatError("ground truth lacks an intervals array");
  std::vector<Interval> gts;
  for (const json& g : gt["intervals"]) {
    reject_unknown_keys(g, {"video_id", "start", "end", "label"}, "ground truth interval");
    const auto vid = g.at("video_id").get<std::string>();
    const auto it = offsets.find(vid);
    if (it == offsets.end())
      throw InvalidArgument("ground truth references unknown video " + vid);
    Interval v;
    v.start = g.at("start").get<double>() + it->second;
    v.end = g.at("end").get<double>() + it->second;
    v.label = g.at("label").get<std::string>();
    gts.push_back(std::move(v));
  }

  const ApInterpolation interp = o.interp == "11point"
                                     ? ApInterpolation::ElevenPoint
                                     : ApInterpolation::AllPoint;
  const auto results = mean_ap(detections, gts, o.thresholds, interp);

  json rows = json::array();
  for (const MapResult& r : results) {
    json row;
    row["threshold"] = r.threshold;
    row["map"] = r.map;
    json per_class = json::object();
    for (const ApEntry& e : r.per_class) per_class[e.label] = e.ap;
    row["per_class"] = per_class;
    rows.push_back(std::move(row));
  }
  json report;
  report["format_version"] = kOutputFormatVersion;
  report["task"] = "detect";
  report["interpolation"] = o.interp == "11point" ? "11point" : "all";
  report["results"] = std::move(rows);
  return report;
}

json evaluate_sound(const EvaluateOpts& o, RunInfo& info) {
  if (o.corpus.empty() || o.query.empty())
    throw InvalidArgument("sound evaluation needs --corpus and --query");
  info.inputs.insert(info.inputs.end(), {o.pred, o.corpus, o.query});
  const Predictions preds = load_predictions(o.pred);
  const ReferenceCorpus corpus = load_corpus_flex(o.corpus, o.embedding, TaskTag::Sound);
  const auto videos = group_by_video(load_manifest(o.query));

  std::vector<double> pred_loud, gt_loud, pred_cent, gt_cent;
  for (const auto& [vid, clips] : videos) {
    const TessellationPath& path = prediction_for(preds, vid);
    if (path.assignments.size() != clips.size())
      throw InvalidArgument("prediction for " + vid +
                            " does not match the query manifest clip count");
    for (std::size_t i = 0; i < clips.size(); ++i) {
      const RefId a = path.assignments[i];
      if (a < 0 || static_cast<std::size_t>(a) >= corpus.clips.size())
        throw InvalidArgument("assignment outside the corpus for video " + vid);
      const SoundFeatureClip pred_clip = sound_clip_of(corpus.clips[a]);
      const SoundFeatureClip gt_clip = sound_clip_of(clips[i]);
      pred_loud.push_back(loudness(pred_clip));
      gt_loud.push_back(loudness(gt_clip));
      pred_cent.push_back(centroid(pred_clip));
      gt_cent.push_back(centroid(gt_clip));
    }
  }
  const RegressionMetrics loud = regression_metrics(pred_loud, gt_loud);
  const RegressionMetrics cent = regression_metrics(pred_cent, gt_cent);

  json report;
  report["format_version"] = kOutputFormatVersion;
  report["task"] = "sound";
  report["loudness"] = {{"mse", loud.mse}, {"pearson_r", loud.pearson_r}};
  report["centroid"] = {{"mse", cent.mse}, {"pearson_r", cent.pearson_r}};
  return report;
}

json evaluate_accuracy(const EvaluateOpts& o, RunInfo& info) {
  if (o.truth.empty()) throw InvalidArgument("accuracy evaluation needs --truth");
  info.inputs.insert(info.inputs.end(), {o.pred, o.truth});
  const Predictions preds = load_predictions(o.pred);
  const json truth = parse_json_file(o.truth, "truth file");
  reject_unknown_keys(truth, {"kind", "corpus_states", "query_states", "query_ids"},
                      "truth file");
  const auto corpus_states = truth.at("corpus_states").get<std::vector<std::int64_t>>();
  const auto query_states =
      truth.at("query_states").get<std::vector<std::vector<std::int64_t>>>();
  const auto query_ids = truth.at("query_ids").get<std::vector<std::string>>();
  if (query_states.size() != query_ids.size())
    throw FormatError("truth file: query_states and query_ids lengths differ");

  json per_query = json::object();
  double sum = 0.0;
  for (std::size_t i = 0; i < query_ids.size(); ++i) {
    const TessellationPath& path = prediction_for(preds, query_ids[i]);
    const double acc =
        state_accuracy(path.assignments, corpus_states, query_states[i]);
    per_query[query_ids[i]] = acc;
    sum += acc;
  }
  if (query_ids.empty()) throw InvalidArgument("truth file lists no queries");

  json report;
  report["format_version"] = kOutputFormatVersion;
  report["task"] = "accuracy";
  report["per_query"] = per_query;
  report["mean_accuracy"] = sum / static_cast<double>(query_ids.size());
  return report;
}

void run_evaluate(const EvaluateOpts& o) {
  RunInfo info;
  info.command = "evaluate";
  info.parameters = {{"task", o.task}, {"pred", o.pred}, {"corpus", o.corpus},
                     {"query", o.query}, {"gt", o.gt}, {"truth", o.truth},
                     {"budget", o.budget}, {"stride", o.stride},
                     {"min_len", o.min_len}, {"background", o.background},
                     {"thresholds", o.thresholds}, {"interp", o.interp},
                     {"out", o.out}};
  json report;
  if (o.task == "summary")
    report = evaluate_summary(o, info);
  else if (o.task == "detect")
    report = evaluate_detect(o, info);
  else if (o.task == "sound")
    report = evaluate_sound(o, info);
  else if (o.task == "accuracy")
    report = evaluate_accuracy(o, info);
  else
    throw InvalidArgument("unknown evaluation task \"" + o.task + "\"");
  write_file_atomic(o.out, report.dump(2) + "\n");
  info.outputs.push_back(o.out);
  write_run_manifest(info, o.out + ".run.json");
}

// ---------------------------------------------------------------------------
// synth

struct SynthOpts {
  std::string kind, spec, out;
};

SynthSpec parse_synth_spec(const fs::path& path) {
  const json j = parse_json_file(path, "synth spec");
  reject_unknown_keys(j,
                      {"seed", "n_states", "svs_dim", "noise_sigma", "videos",
                       "clips_per_video", "transition"},
                      "synth spec");
  SynthSpec spec;
  if (j.contains("seed")) spec.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("n_states")) spec.n_states = j["n_states"].get<int>();
  if (j.contains("svs_dim")) spec.svs_dim = j["svs_dim"].get<Eigen::Index>();
  if (j.contains("noise_sigma")) spec.noise_sigma = j["noise_sigma"].get<double>();
  if (j.contains("videos")) spec.videos = j["videos"].get<int>();
  if (j.contains("clips_per_video"))
    spec.clips_per_video = j["clips_per_video"].get<int>();
  if (j.contains("transition")) {
    const json& t = j["transition"];
    reject_unknown_keys(t, {"kind", "stay", "rows"}, "synth spec transition");
    const auto kind = t.at("kind").get<std::string>();
    if (kind == "uniform") {
      spec.transition_matrix = uniform_transitions(spec.n_states);
    } else if (kind == "sticky") {
      spec.transition_matrix =
          sticky_transitions(spec.n_states, t.at("stay").get<double>());
    } else if (kind == "matrix") {
      const auto rows = t.at("rows").get<std::vector<std::vector<double>>>();
      spec.transition_matrix.resize(static_cast<Eigen::Index>(rows.size()),
                                    rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
      for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != rows[0].size())
          throw InvalidArgument("synth spec: ragged transition matrix");
        for (std::size_t c = 0; c < rows[r].size(); ++c)
          spec.transition_matrix(static_cast<Eigen::Index>(r),
                                 static_cast<Eigen::Index>(c)) = rows[r][c];
      }
    } else {
      throw InvalidArgument("synth spec: unknown transition kind \"" + kind + "\"");
    }
  }
  return spec;
}

void run_synth(const SynthOpts& o) {
  RunInfo info;
  info.command = "synth";
  info.parameters = {{"kind", o.kind}, {"spec", o.spec}, {"out", o.out}};
  info.inputs.push_back(o.spec);

  const SynthSpec spec = parse_synth_spec(o.spec);
  SynthData data;
  if (o.kind == "markov")
    data = gen_markov_corpus(spec);
  else if (o.kind == "dynamics")
    data = gen_dynamics_corpus(spec);
  else
    throw InvalidArgument("unknown synth kind \"" + o.kind + "\"");

  write_synth_dataset(data, o.out);
  for (const char* name : {"corpus_appearance.fmat", "corpus_semantics.fmat",
                           "query_appearance.fmat", "corpus.jsonl", "queries.jsonl",
                           "truth.json"})
    info.outputs.push_back(fs::path(o.out) / name);
  write_run_manifest(info, fs::path(o.out) / "run.json");
}

// ---------------------------------------------------------------------------

int run_impl(const std::vector<std::string>& raw_args) {
  CLI::App app{"temporal semantic transfer for video clip sequences"};
  app.require_subcommand(1);
  app.add_flag_callback(
      "--version",
      [] {
        json v;
        v["tool"] = kToolVersion;
        v["fmat"] = kFmatVersion;
        v["container"] = kContainerVersion;
        v["output_format"] = kOutputFormatVersion;
        std::cout << v.dump() << std::endl;
        throw CLI::Success{};
      },
      "Print format versions as JSON and exit");

  auto fit = std::make_shared<FitEmbeddingOpts>();
  CLI::App* fit_cmd = app.add_subcommand("fit-embedding",
                                         "Fit the joint-space embedding (PCA + CCA)");
  fit_cmd->add_option("--manifest", fit->manifest, "Training clip manifest (JSONL)")->required();
  fit_cmd->add_option("--task", fit->task, "text|importance|action|sound");
  fit_cmd->add_option("--appearance-dim", fit->appearance_dim, "Appearance PCA dim, 0 = off");
  fit_cmd->add_option("--semantics-dim", fit->semantics_dim, "Semantics PCA dim, 0 = off");
  fit_cmd->add_option("--svs-dim", fit->svs_dim, "Joint space dim, 0 = min view dim");
  fit_cmd->add_option("--lambda", fit->lambda, "CCA regularizer, negative = automatic");
  fit_cmd->add_option("--out", fit->out, "Output model path")->required();
  fit_cmd->callback([fit] { run_fit_embedding(*fit); });

  auto build = std::make_shared<BuildCorpusOpts>();
  CLI::App* build_cmd = app.add_subcommand("build-corpus",
                                           "Ingest a manifest into a reference corpus");
  build_cmd->add_option("--manifest", build->manifest, "Clip manifest (JSONL)")->required();
  build_cmd->add_option("--task", build->task, "text|importance|action|sound");
  build_cmd->add_option("--embedding", build->embedding, "Embedding model; identity when omitted");
  build_cmd->add_option("--out", build->out, "Output corpus container")->required();
  build_cmd->callback([build] { run_build_corpus(*build); });

  auto tes = std::make_shared<TessellateOpts>();
  CLI::App* tes_cmd = app.add_subcommand("tessellate", "Assign reference clips to queries");
  tes_cmd->add_option("--mode", tes->mode, "local|viterbi|supervised");
  tes_cmd->add_option("--corpus", tes->corpus, "Corpus container or manifest")->required();
  tes_cmd->add_option("--query", tes->query, "Query manifest (JSONL)")->required();
  tes_cmd->add_option("--embedding", tes->embedding, "Embedding model; identity when omitted");
  tes_cmd->add_option("--predictor", tes->predictor, "Predictor checkpoint (supervised mode)");
  tes_cmd->add_option("--task", tes->task, "Task tag when building from a manifest");
  tes_cmd->add_option("--topk", tes->topk, "Candidates per clip (r')");
  tes_cmd->add_option("--rel-threshold", tes->rel_threshold,
                      "Relative probability cutoff against the nearest neighbor");
  tes_cmd->add_option("--workers", tes->workers, "Parallel query workers, 0 = all cores");
  tes_cmd->add_option("--out", tes->out, "Output path JSON")->required();
  tes_cmd->callback([tes] { run_tessellate(*tes); });

  auto train = std::make_shared<TrainPredictorOpts>();
  CLI::App* train_cmd = app.add_subcommand("train-predictor",
                                           "Train the semantics dynamics predictor");
  train_cmd->add_option("--corpus", train->corpus, "Corpus container or manifest")->required();
  train_cmd->add_option("--embedding", train->embedding, "Embedding model; identity when omitted");
  train_cmd->add_option("--task", train->task, "Task tag when building from a manifest");
  train_cmd->add_option("--hidden", train->hidden, "LSTM cells per layer");
  train_cmd->add_option("--epochs", train->epochs, "Training epochs");
  train_cmd->add_option("--lr", train->lr, "Learning rate");
  train_cmd->add_option("--clip", train->clip, "Gradient norm clip");
  train_cmd->add_option("--seed", train->seed, "Initialization seed");
  train_cmd->add_option("--out", train->out, "Output checkpoint path")->required();
  train_cmd->callback([train] { run_train_predictor(*train); });

  auto eval = std::make_shared<EvaluateOpts>();
  CLI::App* eval_cmd = app.add_subcommand("evaluate", "Score predictions for a task");
  eval_cmd->add_option("--task", eval->task, "summary|detect|sound|accuracy")->required();
  eval_cmd->add_option("--pred", eval->pred, "Tessellation output JSON")->required();
  eval_cmd->add_option("--corpus", eval->corpus, "Corpus container or manifest");
  eval_cmd->add_option("--query", eval->query, "Query manifest (JSONL)");
  eval_cmd->add_option("--embedding", eval->embedding, "Embedding model; identity when omitted");
  eval_cmd->add_option("--gt", eval->gt, "Ground truth JSON (summary/detect)");
  eval_cmd->add_option("--truth", eval->truth, "Synth truth JSON (accuracy)");
  eval_cmd->add_option("--budget", eval->budget, "Summary budget fraction");
  eval_cmd->add_option("--stride", eval->stride, "Clip stride in time units");
  eval_cmd->add_option("--min-len", eval->min_len, "Minimum run length in clips");
  eval_cmd->add_option("--background", eval->background, "Background label");
  eval_cmd->add_option("--thresholds", eval->thresholds, "IoU thresholds")->delimiter(',');
  eval_cmd->add_option("--interp", eval->interp, "AP interpolation: all|11point");
  eval_cmd->add_option("--out", eval->out, "Output report path")->required();
  eval_cmd->callback([eval] { run_evaluate(*eval); });

  auto syn = std::make_shared<SynthOpts>();
  CLI::App* syn_cmd = app.add_subcommand("synth", "Generate a synthetic dataset");
  syn_cmd->add_option("--kind", syn->kind, "markov|dynamics")->required();
  syn_cmd->add_option("--spec", syn->spec, "Generator spec JSON")->required();
  syn_cmd->add_option("--out", syn->out, "Output directory")->required();
  syn_cmd->callback([syn] { run_synth(*syn); });

  for (CLI::App* sub : {fit_cmd, build_cmd, tes_cmd, train_cmd, eval_cmd, syn_cmd})
    sub->add_option("--config", "JSON config file; command-line flags win");

  try {
    const std::vector<std::string> args = apply_config_layer(app, raw_args);
    std::vector<const char*> argv;
    argv.push_back("tessellate");
    for (const std::string& a : args) argv.push_back(a.c_str());
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::Success&) {
    return 0;
  } catch (const CLI::ParseError& e) {
    print_error("usage-error", e.what());
    return 2;
  } catch (const Error& e) {
    print_error(to_string(e.category()), e.what());
    return exit_code_for(e.category());
  } catch (const std::exception& e) {
    print_error("internal-error", e.what());
    return 4;
  }
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_impl(args);
}

int run(const std::vector<std::string>& args) { return run_impl(args); }

}  // namespace tess
