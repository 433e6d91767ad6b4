/*
 * tessellate - temporal semantic transfer for video clip sequences
 *
 * Licensed under the terms of the Apache 2.0 License.
 * See LICENSE file in the project root for terms.
 */
#include "tessellate/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <doctest.h>
#include <json.hpp>

#include "tessellate/matrix_io.hpp"
#include "tessellate/rng.hpp"
#include "tessellate/types.hpp"
#include "test_util.hpp"

using namespace tess;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Drives the CLI in process, capturing both streams.
int run_cli(const std::vector<std::string>& args, std::string* out = nullptr,
            std::string* err = nullptr) {
  std::ostringstream cout_buf, cerr_buf;
  std::streambuf* const old_out = std::cout.rdbuf(cout_buf.rdbuf());
  std::streambuf* const old_err = std::cerr.rdbuf(cerr_buf.rdbuf());
  int code = -1;
  try {
    code = tess::run(args);
  } catch (...) {
    std::cout.rdbuf(old_out);
    std::cerr.rdbuf(old_err);
    throw;
  }
  std::cout.rdbuf(old_out);
  std::cerr.rdbuf(old_err);
  if (out) *out = cout_buf.str();
  if (err) *err = cerr_buf.str();
  return code;
}

json stderr_json(const std::string& err) {
  REQUIRE_FALSE(err.empty());
  return json::parse(err);
}

json read_json(const fs::path& p) { return json::parse(read_file_bytes(p)); }

void write_text(const fs::path& p, const std::string& content) {
  std::ofstream f(p);
  REQUIRE(f.good());
  f << content;
}

json synth_spec(std::uint64_t seed, double sigma) {
  return json{{"seed", seed},
              {"n_states", 3},
              {"svs_dim", 5},
              {"noise_sigma", sigma},
              {"videos", 3},
              {"clips_per_video", 6},
              {"transition", json{{"kind", "sticky"}, {"stay", 0.6}}}};
}

// Runs synth into dir and returns the dataset directory.
fs::path make_dataset(const tesst::TempDir& tmp, const std::string& name,
                      std::uint64_t seed, double sigma,
                      const std::string& kind = "markov") {
  const fs::path spec = tmp.path() / (name + "_spec.json");
  write_text(spec, synth_spec(seed, sigma).dump());
  const fs::path dir = tmp.path() / name;
  REQUIRE(run_cli({"synth", "--kind", kind, "--spec", spec.string(), "--out",
                   dir.string()}) == 0);
  return dir;
}

// Small manifest-backed corpora for the evaluate smoke tests. Writes one
// appearance matrix and one JSONL manifest; extra fields per clip come from
// the caller.
fs::path write_manifest(const tesst::TempDir& tmp, const std::string& stem,
                        const FeatureMatrix& appearance,
                        const std::vector<json>& extras,
                        const std::string& video_prefix = "v",
                        std::size_t clips_per_video = 0) {
  const std::string fmat = stem + ".fmat";
  write_feature_matrix(tmp.path() / fmat, appearance);
  std::string lines;
  for (Eigen::Index i = 0; i < appearance.rows(); ++i) {
    const auto u = static_cast<std::size_t>(i);
    const std::size_t per = clips_per_video == 0
                                ? static_cast<std::size_t>(appearance.rows())
                                : clips_per_video;
    json j = extras[u];
    j["video_id"] = video_prefix + std::to_string(u / per);
    j["clip_index"] = u % per;
    j["appearance_file"] = fmat;
    j["appearance_row"] = i;
    lines += j.dump() + "\n";
  }
  const fs::path manifest = tmp.path() / (stem + ".jsonl");
  write_text(manifest, lines);
  return manifest;
}

json minimal_prediction(const std::string& video_id, std::vector<RefId> assignments) {
  json q;
  q["video_id"] = video_id;
  q["assignments"] = assignments;
  q["clip_energies"] = std::vector<double>(assignments.size(), 0.0);
  q["path_energy"] = 0.0;
  return json{{"format_version", 1},
              {"mode", "local"},
              {"topk", 1},
              {"rel_threshold", 0.25},
              {"queries", json::array({q})}};
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("version flag prints format versions as JSON") {
  std::string out, err;
  CHECK(run_cli({"--version"}, &out, &err) == 0);
  CHECK(err.empty());
  const json v = json::parse(out);
  CHECK(v["tool"] == kToolVersion);
  CHECK(v["fmat"] == 1);
  CHECK(v["container"] == 1);
  CHECK(v["output_format"] == kOutputFormatVersion);
}

TEST_CASE("help exits zero") {
  std::string out;
  CHECK(run_cli({"--help"}, &out) == 0);
  CHECK(out.find("tessellate") != std::string::npos);
  CHECK(run_cli({"synth", "--help"}, &out) == 0);
  CHECK(out.find("--spec") != std::string::npos);
}

TEST_CASE("usage errors exit 2 with a JSON error line") {
  std::string err;
  CHECK(run_cli({}, nullptr, &err) == 2);
  CHECK(stderr_json(err)["error"] == "usage-error");

  CHECK(run_cli({"frobnicate"}, nullptr, &err) == 2);
  CHECK(stderr_json(err)["error"] == "usage-error");

  CHECK(run_cli({"synth", "--bogus"}, nullptr, &err) == 2);
  CHECK(stderr_json(err)["error"] == "usage-error");

  // Missing required options.
  CHECK(run_cli({"synth", "--kind", "markov"}, nullptr, &err) == 2);
  CHECK(stderr_json(err)["error"] == "usage-error");

  tesst::TempDir tmp("cli");
  const fs::path spec = tmp.path() / "spec.json";
  write_text(spec, synth_spec(1, 0.1).dump());
  CHECK(run_cli({"synth", "--kind", "laplace", "--spec", spec.string(), "--out",
                 (tmp.path() / "d").string()},
                nullptr, &err) == 2);
  const json e = stderr_json(err);
  CHECK(e["error"] == "invalid-argument");
  CHECK(std::string(e["message"]).find("laplace") != std::string::npos);
}

TEST_CASE("data errors exit 3 and name the offending path") {
  tesst::TempDir tmp("cli");
  std::string err;
  const std::string missing = (tmp.path() / "nope.jsonl").string();
  CHECK(run_cli({"build-corpus", "--manifest", missing, "--out",
                 (tmp.path() / "c.bin").string()},
                nullptr, &err) == 3);
  const json e = stderr_json(err);
  CHECK(e["error"] == "ingestion-error");
  CHECK(std::string(e["message"]).find("nope.jsonl") != std::string::npos);

  // Malformed prediction JSON is a format error.
  const fs::path bad = tmp.path() / "bad.json";
  write_text(bad, "{\"queries\": [], \"surprise\": 1}");
  CHECK(run_cli({"evaluate", "--task", "accuracy", "--pred", bad.string(),
                 "--truth", bad.string(), "--out", (tmp.path() / "r.json").string()},
                nullptr, &err) == 3);
  CHECK(stderr_json(err)["error"] == "format-error");
}

TEST_CASE("config files layer under command-line flags") {
  tesst::TempDir tmp("cli");
  const fs::path spec = tmp.path() / "spec.json";
  write_text(spec, synth_spec(5, 0.05).dump());

  SUBCASE("a full config replaces the flags") {
    const fs::path cfg = tmp.path() / "cfg.json";
    write_text(cfg, json{{"kind", "markov"},
                         {"spec", spec.string()},
                         {"out", (tmp.path() / "a").string()}}
                        .dump());
    CHECK(run_cli({"synth", "--config", cfg.string()}) == 0);
    CHECK(fs::exists(tmp.path() / "a" / "truth.json"));

    // An identical run driven purely by flags produces identical files.
    CHECK(run_cli({"synth", "--kind", "markov", "--spec", spec.string(), "--out",
                   (tmp.path() / "b").string()}) == 0);
    for (const char* name : {"corpus.jsonl", "queries.jsonl", "truth.json",
                             "corpus_appearance.fmat", "corpus_semantics.fmat",
                             "query_appearance.fmat"})
      CHECK(read_file_bytes(tmp.path() / "a" / name) ==
            read_file_bytes(tmp.path() / "b" / name));
  }
  SUBCASE("command-line flags win over config values") {
    const fs::path cfg = tmp.path() / "cfg.json";
    write_text(cfg, json{{"kind", "dynamics"},
                         {"spec", spec.string()},
                         {"out", (tmp.path() / "c").string()}}
                        .dump());
    CHECK(run_cli({"synth", "--config", cfg.string(), "--kind", "markov"}) == 0);
    for (const auto& [dir, kind] : {std::pair{"d", "markov"}, {"e", "dynamics"}})
      CHECK(run_cli({"synth", "--kind", kind, "--spec", spec.string(), "--out",
                     (tmp.path() / dir).string()}) == 0);
    // The flag value (markov) must beat the config value (dynamics).
    CHECK(read_file_bytes(tmp.path() / "c" / "truth.json") ==
          read_file_bytes(tmp.path() / "d" / "truth.json"));
    CHECK(read_file_bytes(tmp.path() / "c" / "truth.json") !=
          read_file_bytes(tmp.path() / "e" / "truth.json"));
  }
  SUBCASE("unknown config keys are usage errors") {
    const fs::path cfg = tmp.path() / "cfg.json";
    write_text(cfg, json{{"kind", "markov"}, {"speling", 1}}.dump());
    std::string err;
    CHECK(run_cli({"synth", "--config", cfg.string()}, nullptr, &err) == 2);
    const json e = stderr_json(err);
    CHECK(e["error"] == "usage-error");
    CHECK(std::string(e["message"]).find("speling") != std::string::npos);
  }
  SUBCASE("a config that is not a JSON object is rejected") {
    const fs::path cfg = tmp.path() / "cfg.json";
    write_text(cfg, "[1, 2, 3]");
    std::string err;
    CHECK(run_cli({"synth", "--config", cfg.string()}, nullptr, &err) == 2);
  }
}

TEST_CASE("synth, corpus, tessellate and accuracy evaluation round trip") {
  tesst::TempDir tmp("cli");
  const fs::path dir = make_dataset(tmp, "data", 11, 0.0);
  for (const char* name : {"corpus.jsonl", "queries.jsonl", "truth.json",
                           "corpus_appearance.fmat", "run.json"})
    CHECK(fs::exists(dir / name));

  const fs::path corpus = tmp.path() / "corpus.bin";
  REQUIRE(run_cli({"build-corpus", "--manifest", (dir / "corpus.jsonl").string(),
                   "--task", "text", "--out", corpus.string()}) == 0);

  const fs::path pred = tmp.path() / "pred.json";
  REQUIRE(run_cli({"tessellate", "--mode", "local", "--corpus", corpus.string(),
                   "--query", (dir / "queries.jsonl").string(), "--out",
                   pred.string()}) == 0);
  const json p = read_json(pred);
  CHECK(p["format_version"] == kOutputFormatVersion);
  CHECK(p["mode"] == "local");
  REQUIRE(p["queries"].size() == 3);
  for (const json& q : p["queries"]) {
    CHECK(q["assignments"].size() == 6);
    CHECK(q["clip_energies"].size() == 6);
    CHECK(q["path_energy"].get<double>() >= 0.0);
  }

  const fs::path report = tmp.path() / "report.json";
  REQUIRE(run_cli({"evaluate", "--task", "accuracy", "--pred", pred.string(),
                   "--truth", (dir / "truth.json").string(), "--out",
                   report.string()}) == 0);
  const json r = read_json(report);
  CHECK(r["task"] == "accuracy");
  // Zero appearance noise makes local matching exact.
  CHECK(r["mean_accuracy"] == 1.0);
  CHECK(r["per_query"].size() == 3);

  SUBCASE("run manifests record content hashes of inputs and outputs") {
    const json run = read_json(fs::path(pred.string() + ".run.json"));
    CHECK(run["command"] == "tessellate");
    CHECK(run["versions"]["tool"] == kToolVersion);
    CHECK(run["wall_time_seconds"].get<double>() >= 0.0);
    CHECK(run["outputs"][pred.string()] == content_hash(read_file_bytes(pred)));
    CHECK(run["inputs"][corpus.string()] == content_hash(read_file_bytes(corpus)));
  }
  SUBCASE("tessellation output is independent of the worker count") {
    const fs::path one = tmp.path() / "w1.json";
    const fs::path four = tmp.path() / "w4.json";
    for (const auto& [path, workers] : {std::pair{one, "1"}, {four, "4"}})
      REQUIRE(run_cli({"tessellate", "--mode", "viterbi", "--corpus",
                       corpus.string(), "--query", (dir / "queries.jsonl").string(),
                       "--topk", "3", "--workers", workers, "--out",
                       path.string()}) == 0);
    CHECK(read_file_bytes(one) == read_file_bytes(four));
  }
  SUBCASE("repeated runs are byte-identical") {
    const fs::path again = tmp.path() / "pred2.json";
    REQUIRE(run_cli({"tessellate", "--mode", "local", "--corpus", corpus.string(),
                     "--query", (dir / "queries.jsonl").string(), "--out",
                     again.string()}) == 0);
    CHECK(read_file_bytes(pred) == read_file_bytes(again));
  }
}

TEST_CASE("embedding and predictor flow through the CLI") {
  tesst::TempDir tmp("cli");
  const fs::path dir = make_dataset(tmp, "data", 21, 0.05);

  const fs::path model = tmp.path() / "model.bin";
  REQUIRE(run_cli({"fit-embedding", "--manifest", (dir / "corpus.jsonl").string(),
                   "--task", "text", "--appearance-dim", "4", "--svs-dim", "3",
                   "--out", model.string()}) == 0);
  CHECK(fs::exists(model));

  const fs::path corpus = tmp.path() / "corpus.bin";
  REQUIRE(run_cli({"build-corpus", "--manifest", (dir / "corpus.jsonl").string(),
                   "--task", "text", "--embedding", model.string(), "--out",
                   corpus.string()}) == 0);

  const fs::path ckpt = tmp.path() / "predictor.bin";
  REQUIRE(run_cli({"train-predictor", "--corpus", corpus.string(), "--hidden", "4",
                   "--epochs", "3", "--lr", "0.01", "--seed", "7", "--out",
                   ckpt.string()}) == 0);
  const json train_run = read_json(fs::path(ckpt.string() + ".run.json"));
  REQUIRE(train_run.contains("loss_history"));
  CHECK(train_run["loss_history"].size() == 3);

  SUBCASE("supervised mode requires a predictor checkpoint") {
    std::string err;
    CHECK(run_cli({"tessellate", "--mode", "supervised", "--corpus",
                   corpus.string(), "--query", (dir / "queries.jsonl").string(),
                   "--embedding", model.string(), "--out",
                   (tmp.path() / "x.json").string()},
                  nullptr, &err) == 2);
    CHECK(stderr_json(err)["error"] == "invalid-argument");
  }
  SUBCASE("supervised tessellation runs and stays deterministic") {
    const fs::path a = tmp.path() / "sup_a.json";
    const fs::path b = tmp.path() / "sup_b.json";
    for (const fs::path& out : {a, b})
      REQUIRE(run_cli({"tessellate", "--mode", "supervised", "--corpus",
                       corpus.string(), "--query", (dir / "queries.jsonl").string(),
                       "--embedding", model.string(), "--predictor", ckpt.string(),
                       "--topk", "3", "--out", out.string()}) == 0);
    CHECK(read_file_bytes(a) == read_file_bytes(b));
    const json p = read_json(a);
    CHECK(p["mode"] == "supervised");
    for (const json& q : p["queries"])
      for (const json& ref : q["assignments"]) {
        CHECK(ref.get<std::int64_t>() >= 0);
        CHECK(ref.get<std::int64_t>() < 18);
      }
  }
}

TEST_CASE("evaluate summary scores importance transfer") {
  tesst::TempDir tmp("cli");
  Rng rng(31);
  // Two reference clips: the first is uniformly important, the second is not.
  const FeatureMatrix ref_app = tesst::random_matrix(rng, 2, 3);
  const fs::path corpus = write_manifest(
      tmp, "corpus", ref_app,
      {json{{"importance", {1.0, 1.0}}}, json{{"importance", {0.0, 0.0}}}});

  FeatureMatrix q_app = ref_app;  // queries mirror the references
  const fs::path query = write_manifest(
      tmp, "query", q_app,
      {json{{"frame_count", 2}}, json{{"frame_count", 2}}}, "q");

  const fs::path pred = tmp.path() / "pred.json";
  write_text(pred, minimal_prediction("q0", {0, 1}).dump());

  const fs::path gt = tmp.path() / "gt.json";
  write_text(gt, json{{"annotations", {{"q0", {{0.0, 1.0, 1.0, 0.0}}}}}}.dump());

  const fs::path report = tmp.path() / "report.json";
  REQUIRE(run_cli({"evaluate", "--task", "summary", "--pred", pred.string(),
                   "--corpus", corpus.string(), "--query", query.string(), "--gt",
                   gt.string(), "--budget", "0.5", "--out",
                   report.string()}) == 0);
  const json r = read_json(report);
  // Kept frames {0, 1} against annotation {1, 2}: precision = recall = 1/2.
  CHECK(r["mean_fmeasure"] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(r["per_video"]["q0"] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("evaluate detect pools videos on a shared timeline") {
  tesst::TempDir tmp("cli");
  Rng rng(32);
  const FeatureMatrix ref_app = tesst::random_matrix(rng, 2, 3);
  const fs::path corpus = write_manifest(
      tmp, "corpus", ref_app,
      {json{{"label", "A"}}, json{{"label", "background"}}});

  json q0 = minimal_prediction("q0", {0, 0, 1});
  json q1 = minimal_prediction("q1", {1, 0});
  q0["queries"].push_back(q1["queries"][0]);
  const fs::path pred = tmp.path() / "pred.json";
  write_text(pred, q0.dump());

  const fs::path gt = tmp.path() / "gt.json";
  write_text(gt, json{{"intervals",
                       {json{{"video_id", "q0"}, {"start", 0.0}, {"end", 2.0}, {"label", "A"}},
                        json{{"video_id", "q1"}, {"start", 1.0}, {"end", 2.0}, {"label", "A"}}}}}
                     .dump());

  const fs::path report = tmp.path() / "report.json";
  REQUIRE(run_cli({"evaluate", "--task", "detect", "--pred", pred.string(),
                   "--corpus", corpus.string(), "--gt", gt.string(),
                   "--thresholds", "0.5,0.75", "--out", report.string()}) == 0);
  const json r = read_json(report);
  REQUIRE(r["results"].size() == 2);
  for (const json& row : r["results"]) {
    // Both predicted runs line up exactly with their ground truth.
    CHECK(row["map"] == 1.0);
    CHECK(row["per_class"]["A"] == 1.0);
  }
  CHECK(r["results"][0]["threshold"] == 0.5);
  CHECK(r["results"][1]["threshold"] == 0.75);

  SUBCASE("ground truth naming an unknown video is rejected") {
    write_text(gt, json{{"intervals",
                         {json{{"video_id", "zz"}, {"start", 0.0}, {"end", 1.0}, {"label", "A"}}}}}
                       .dump());
    std::string err;
    CHECK(run_cli({"evaluate", "--task", "detect", "--pred", pred.string(),
                   "--corpus", corpus.string(), "--gt", gt.string(), "--out",
                   report.string()},
                  nullptr, &err) == 2);
    CHECK(std::string(stderr_json(err)["message"]).find("zz") != std::string::npos);
  }
}

TEST_CASE("evaluate sound compares acoustic statistics") {
  tesst::TempDir tmp("cli");
  Rng rng(33);
  const FeatureMatrix app = tesst::random_matrix(rng, 2, 3);
  const FeatureMatrix sounds = tesst::random_matrix(rng, 2, kSoundFeatureDim);
  write_feature_matrix(tmp.path() / "snd.fmat", sounds);

  const auto sound_extra = [](Eigen::Index row) {
    return json{{"sound_file", "snd.fmat"}, {"sound_row", row}};
  };
  const fs::path corpus = write_manifest(tmp, "corpus", app,
                                         {sound_extra(0), sound_extra(1)});
  const fs::path query =
      write_manifest(tmp, "query", app, {sound_extra(0), sound_extra(1)}, "q");

  const fs::path pred = tmp.path() / "pred.json";
  write_text(pred, minimal_prediction("q0", {0, 1}).dump());

  const fs::path report = tmp.path() / "report.json";
  REQUIRE(run_cli({"evaluate", "--task", "sound", "--pred", pred.string(),
                   "--corpus", corpus.string(), "--query", query.string(), "--out",
                   report.string()}) == 0);
  const json r = read_json(report);
  // The assignment reproduces each query clip exactly.
  CHECK(r["loudness"]["mse"] == 0.0);
  CHECK(r["loudness"]["pearson_r"] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r["centroid"]["mse"] == 0.0);
  CHECK(r["centroid"]["pearson_r"] == doctest::Approx(1.0).epsilon(1e-12));
}

}  // TEST_SUITE
