/*
 * tessellate - temporal semantic transfer for video clip sequences
 *
 * Licensed under the terms of the Apache 2.0 License.
 * See LICENSE file in the project root for terms.
 */
#include "tessellate/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <string>

#include <json.hpp>

#include "tessellate/error.hpp"
#include "tessellate/matrix_io.hpp"
#include "tessellate/rng.hpp"

namespace tess {

namespace {

using nlohmann::json;

// Zero-padded so that the canonical (video_id, clip_index) ordering of the
// corpus module matches generation order.
std::string video_name(char prefix, int v) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%c%03d", prefix, v);
  return buf;
}

void check_spec(const SynthSpec& spec) {
  if (spec.n_states < 1)
    throw InvalidArgument("synth spec: n_states must be >= 1");
  if (spec.svs_dim < 1) throw InvalidArgument("synth spec: svs_dim must be >= 1");
  if (spec.videos < 1 || spec.videos > 999)
    throw InvalidArgument("synth spec: videos must be in [1, 999]");
  if (spec.clips_per_video < 1)
    throw InvalidArgument("synth spec: clips_per_video must be >= 1");
  if (!(spec.noise_sigma >= 0.0) || !std::isfinite(spec.noise_sigma))
    throw InvalidArgument("synth spec: noise_sigma must be finite and >= 0");
  if (spec.transition_matrix.size() != 0) {
    const FeatureMatrix& t = spec.transition_matrix;
    if (t.rows() != spec.n_states || t.cols() != spec.n_states)
      throw InvalidArgument("synth spec: transition matrix must be n_states x n_states");
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
      double sum = 0.0;
      for (Eigen::Index c = 0; c < t.cols(); ++c) {
        if (!(t(r, c) >= 0.0) || !std::isfinite(t(r, c)))
          throw InvalidArgument("synth spec: transition probabilities must be finite and >= 0");
        sum += t(r, c);
      }
      if (std::abs(sum - 1.0) > 1e-9)
        throw InvalidArgument("synth spec: transition row " + std::to_string(r) +
                              " sums to " + std::to_string(sum) + ", not 1");
    }
  }
}

int sample_categorical(Rng& rng, const FeatureMatrix& t, int row) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (Eigen::Index c = 0; c < t.cols(); ++c) {
    acc += t(row, c);
    if (u < acc) return static_cast<int>(c);
  }
  return static_cast<int>(t.cols() - 1);
}

Vector noisy_copy(const Eigen::Ref<const Vector>& v, double sigma, Rng& rng) {
  Vector out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) out(i) = v(i) + sigma * rng.gaussian();
  return out;
}

ClipRecord make_record(const std::string& video_id, std::int64_t clip_index,
                       Vector appearance, std::optional<Vector> semantics) {
  ClipRecord r;
  r.video_id = video_id;
  r.clip_index = clip_index;
  r.appearance = std::move(appearance);
  r.semantics_vector = std::move(semantics);
  return r;
}

void finalize_corpus(SynthData& out, std::vector<ClipRecord> records,
                     FeatureMatrix semantics, FeatureMatrix appearance,
                     int clips_per_video) {
  out.corpus.clips = std::move(records);
  out.corpus.svs_semantics = std::move(semantics);
  out.corpus.svs_appearance = std::move(appearance);
  out.corpus.task = TaskTag::Text;
  const int videos = static_cast<int>(out.corpus.clips.size()) / clips_per_video;
  for (int v = 0; v < videos; ++v) {
    VideoRange range;
    range.video_id = out.corpus.clips[static_cast<std::size_t>(v) *
                                      clips_per_video].video_id;
    range.begin = static_cast<std::size_t>(v) * clips_per_video;
    range.end = range.begin + static_cast<std::size_t>(clips_per_video);
    out.corpus.video_boundaries.push_back(range);
  }
}

}  // namespace

FeatureMatrix uniform_transitions(int n_states) {
  if (n_states < 1) throw InvalidArgument("uniform_transitions: n_states must be >= 1");
  return FeatureMatrix::Constant(n_states, n_states, 1.0 / n_states);
}

FeatureMatrix sticky_transitions(int n_states, double stay) {
  if (n_states < 1) throw InvalidArgument("sticky_transitions: n_states must be >= 1");
  if (!(stay >= 0.0 && stay <= 1.0))
    throw InvalidArgument("sticky_transitions: stay must lie in [0, 1]");
  if (n_states == 1) return FeatureMatrix::Constant(1, 1, 1.0);
  FeatureMatrix t = FeatureMatrix::Constant(n_states, n_states,
                                            (1.0 - stay) / (n_states - 1));
  t.diagonal().setConstant(stay);
  return t;
}

SynthData gen_markov_corpus(const SynthSpec& spec) {
  check_spec(spec);
  const FeatureMatrix trans = spec.transition_matrix.size() != 0
                                  ? spec.transition_matrix
                                  : uniform_transitions(spec.n_states);
  Rng rng(spec.seed);
  const Eigen::Index d = spec.svs_dim;

  SynthData out;
  out.prototypes.resize(spec.n_states, d);
  for (Eigen::Index r = 0; r < out.prototypes.rows(); ++r)
    for (Eigen::Index c = 0; c < d; ++c) out.prototypes(r, c) = rng.gaussian();

  const auto walk_chain = [&](int length) {
    std::vector<std::int64_t> states(static_cast<std::size_t>(length));
    states[0] = rng.uniform_int(static_cast<std::uint64_t>(spec.n_states));
    for (int i = 1; i < length; ++i)
      states[static_cast<std::size_t>(i)] =
          sample_categorical(rng, trans, static_cast<int>(states[i - 1]));
    return states;
  };

  const Eigen::Index n = static_cast<Eigen::Index>(spec.videos) * spec.clips_per_video;
  FeatureMatrix semantics(n, d);
  FeatureMatrix appearance(n, d);
  std::vector<ClipRecord> records;
  records.reserve(static_cast<std::size_t>(n));
  for (int v = 0; v < spec.videos; ++v) {
    const std::string id = video_name('c', v);
    const auto states = walk_chain(spec.clips_per_video);
    for (int i = 0; i < spec.clips_per_video; ++i) {
      const Eigen::Index row = static_cast<Eigen::Index>(v) * spec.clips_per_video + i;
      const auto s = states[static_cast<std::size_t>(i)];
      semantics.row(row) = out.prototypes.row(static_cast<Eigen::Index>(s));
      appearance.row(row) =
          noisy_copy(semantics.row(row).transpose(), spec.noise_sigma, rng).transpose();
      records.push_back(make_record(id, i, appearance.row(row).transpose(),
                                    Vector(semantics.row(row).transpose())));
      out.corpus_states.push_back(s);
    }
  }
  finalize_corpus(out, std::move(records), std::move(semantics),
                  std::move(appearance), spec.clips_per_video);

  for (int v = 0; v < spec.videos; ++v) {
    QuerySequence q;
    q.video_id = video_name('q', v);
    q.svs_appearance.resize(spec.clips_per_video, d);
    const auto states = walk_chain(spec.clips_per_video);
    for (int i = 0; i < spec.clips_per_video; ++i) {
      const Vector proto =
          out.prototypes.row(static_cast<Eigen::Index>(states[i])).transpose();
      q.svs_appearance.row(i) = noisy_copy(proto, spec.noise_sigma, rng).transpose();
      q.clips.push_back(make_record(q.video_id, i,
                                    q.svs_appearance.row(i).transpose(), {}));
    }
    out.query_states.push_back(states);
    out.queries.push_back(std::move(q));
  }
  return out;
}

SynthData gen_dynamics_corpus(const SynthSpec& spec,
                              const std::optional<FeatureMatrix>& weights) {
  check_spec(spec);
  Rng rng(spec.seed);
  const Eigen::Index d = spec.svs_dim;

  SynthData out;
  if (weights) {
    if (weights->rows() != d || weights->cols() != d)
      throw InvalidArgument("gen_dynamics_corpus: weights must be svs_dim x svs_dim");
    if (!weights->allFinite())
      throw InvalidArgument("gen_dynamics_corpus: weights must be finite");
    out.dynamics = *weights;
  } else {
    // Edge-of-chaos scale keeps trajectories neither collapsing nor saturating.
    const double scale = 1.5 / std::sqrt(static_cast<double>(d));
    out.dynamics.resize(d, d);
    for (Eigen::Index r = 0; r < d; ++r)
      for (Eigen::Index c = 0; c < d; ++c) out.dynamics(r, c) = scale * rng.gaussian();
  }

  const Eigen::Index n = static_cast<Eigen::Index>(spec.videos) * spec.clips_per_video;
  FeatureMatrix semantics(n, d);
  FeatureMatrix appearance(n, d);
  std::vector<ClipRecord> records;
  records.reserve(static_cast<std::size_t>(n));
  for (int v = 0; v < spec.videos; ++v) {
    const std::string id = video_name('c', v);
    Vector s(d);
    for (Eigen::Index c = 0; c < d; ++c) s(c) = 2.0 * rng.uniform() - 1.0;
    for (int i = 0; i < spec.clips_per_video; ++i) {
      const Eigen::Index row = static_cast<Eigen::Index>(v) * spec.clips_per_video + i;
      if (i > 0) s = (out.dynamics * s).array().tanh();
      semantics.row(row) = s.transpose();
      appearance.row(row) = noisy_copy(s, spec.noise_sigma, rng).transpose();
      records.push_back(make_record(id, i, appearance.row(row).transpose(), Vector(s)));
      out.corpus_states.push_back(row);
    }
  }
  finalize_corpus(out, std::move(records), std::move(semantics),
                  std::move(appearance), spec.clips_per_video);

  // Queries revisit the corpus trajectories under fresh noise.
  for (int v = 0; v < spec.videos; ++v) {
    QuerySequence q;
    q.video_id = video_name('q', v);
    q.svs_appearance.resize(spec.clips_per_video, d);
    std::vector<std::int64_t> truth;
    for (int i = 0; i < spec.clips_per_video; ++i) {
      const Eigen::Index row = static_cast<Eigen::Index>(v) * spec.clips_per_video + i;
      q.svs_appearance.row(i) =
          noisy_copy(out.corpus.svs_semantics.row(row).transpose(),
                     spec.noise_sigma, rng).transpose();
      q.clips.push_back(make_record(q.video_id, i,
                                    q.svs_appearance.row(i).transpose(), {}));
      truth.push_back(row);
    }
    out.query_states.push_back(std::move(truth));
    out.queries.push_back(std::move(q));
  }
  return out;
}

TessellationPath brute_force_path(const std::vector<CandidateSet>& candidates,
                                  const FeatureMatrix& semantics) {
  const std::size_t m = candidates.size();
  if (m == 0) throw InvalidArgument("brute_force_path: empty lattice");
  double paths = 1.0;
  for (const CandidateSet& set : candidates) {
    if (set.empty()) throw InvalidArgument("brute_force_path: empty candidate set");
    for (const Candidate& c : set)
      if (c.ref_id < 0 || c.ref_id >= static_cast<RefId>(semantics.rows()))
        throw InvalidArgument("brute_force_path: candidate ref_id out of range");
    paths *= static_cast<double>(set.size());
    if (paths > 1e7)
      throw ResourceLimit("brute_force_path: more than 1e7 candidate paths");
  }

  // Enumerate in ref_id-lexicographic order; with a strictly-better rule the
  // first minimum found is then the lexicographically smallest optimum.
  std::vector<std::vector<std::size_t>> by_ref(m);
  for (std::size_t i = 0; i < m; ++i) {
    by_ref[i].resize(candidates[i].size());
    std::iota(by_ref[i].begin(), by_ref[i].end(), std::size_t{0});
    std::sort(by_ref[i].begin(), by_ref[i].end(),
              [&](std::size_t a, std::size_t b) {
                return candidates[i][a].ref_id < candidates[i][b].ref_id;
              });
  }
  std::vector<FeatureMatrix> trans(m);
  for (std::size_t i = 1; i < m; ++i) {
    trans[i].resize(static_cast<Eigen::Index>(candidates[i - 1].size()),
                    static_cast<Eigen::Index>(candidates[i].size()));
    for (std::size_t k = 0; k < candidates[i - 1].size(); ++k)
      for (std::size_t l = 0; l < candidates[i].size(); ++l)
        trans[i](static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(l)) =
            (semantics.row(static_cast<Eigen::Index>(candidates[i][l].ref_id)) -
             semantics.row(static_cast<Eigen::Index>(candidates[i - 1][k].ref_id)))
                .squaredNorm();
  }

  std::vector<std::size_t> cur(m, 0), best_idx;
  double best = std::numeric_limits<double>::infinity();
  const auto dfs = [&](const auto& self, std::size_t i, double partial) -> void {
    if (i == m) {
      if (partial < best) {
        best = partial;
        best_idx = cur;
      }
      return;
    }
    for (std::size_t t : by_ref[i]) {
      cur[i] = t;
      double e = partial + candidates[i][t].energy;
      if (i > 0)
        e += trans[i](static_cast<Eigen::Index>(cur[i - 1]),
                      static_cast<Eigen::Index>(t));
      self(self, i + 1, e);
    }
  };
  dfs(dfs, 0, 0.0);

  TessellationPath path;
  path.mode = TessellationMode::Viterbi;
  path.path_energy = best;
  for (std::size_t i = 0; i < m; ++i) {
    path.assignments.push_back(candidates[i][best_idx[i]].ref_id);
    path.clip_energies.push_back(candidates[i][best_idx[i]].energy);
  }
  return path;
}

double state_accuracy(const std::vector<RefId>& assignments,
                      const std::vector<std::int64_t>& corpus_states,
                      const std::vector<std::int64_t>& true_states) {
  if (assignments.empty())
    throw InvalidArgument("state_accuracy: no assignments");
  if (assignments.size() != true_states.size())
    throw InvalidArgument("state_accuracy: assignment/truth length mismatch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    const auto a = assignments[i];
    if (a < 0 || static_cast<std::size_t>(a) >= corpus_states.size())
      throw InvalidArgument("state_accuracy: assignment out of corpus range");
    if (corpus_states[static_cast<std::size_t>(a)] == true_states[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(assignments.size());
}

void write_synth_dataset(const SynthData& data, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  if (!data.corpus.svs_appearance)
    throw InvalidArgument("write_synth_dataset: corpus lacks appearance matrix");

  write_feature_matrix(dir / "corpus_appearance.fmat", *data.corpus.svs_appearance);
  write_feature_matrix(dir / "corpus_semantics.fmat", data.corpus.svs_semantics);

  Eigen::Index total_q = 0;
  for (const QuerySequence& q : data.queries) total_q += q.size();
  FeatureMatrix qapp(total_q, data.corpus.svs_dim());
  Eigen::Index at = 0;
  for (const QuerySequence& q : data.queries) {
    qapp.middleRows(at, q.size()) = q.svs_appearance;
    at += q.size();
  }
  write_feature_matrix(dir / "query_appearance.fmat", qapp);

  std::string corpus_lines;
  for (std::size_t i = 0; i < data.corpus.clips.size(); ++i) {
    const ClipRecord& r = data.corpus.clips[i];
    json j;
    j["video_id"] = r.video_id;
    j["clip_index"] = r.clip_index;
    j["appearance_file"] = "corpus_appearance.fmat";
    j["appearance_row"] = i;
    j["semantics_file"] = "corpus_semantics.fmat";
    j["semantics_row"] = i;
    corpus_lines += j.dump();
    corpus_lines += '\n';
  }
  write_file_atomic(dir / "corpus.jsonl", corpus_lines);

  std::string query_lines;
  std::size_t row = 0;
  for (const QuerySequence& q : data.queries) {
    for (const ClipRecord& r : q.clips) {
      json j;
      j["video_id"] = r.video_id;
      j["clip_index"] = r.clip_index;
      j["appearance_file"] = "query_appearance.fmat";
      j["appearance_row"] = row++;
      query_lines += j.dump();
      query_lines += '\n';
    }
  }
  write_file_atomic(dir / "queries.jsonl", query_lines);

  json truth;
  truth["kind"] = "synth-truth";
  truth["corpus_states"] = data.corpus_states;
  truth["query_states"] = data.query_states;
  json ids = json::array();
  for (const QuerySequence& q : data.queries) ids.push_back(q.video_id);
  truth["query_ids"] = ids;
  write_file_atomic(dir / "truth.json", truth.dump(2) + "\n");
}

}  // namespace tess
