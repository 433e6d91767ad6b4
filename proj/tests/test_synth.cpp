/*
 * tessellate - temporal semantic transfer for video clip sequences
 *
 * Licensed under the terms of the Apache 2.0 License.
 * See LICENSE file in the project root for terms.
 */
#include "tessellate/synth.hpp"

#include <filesystem>
#include <set>
#include <vector>

#include <doctest.h>

#include "tessellate/error.hpp"
#include "tessellate/rng.hpp"
#include "tessellate/tessellation.hpp"
#include "test_util.hpp"

using namespace tess;
using tesst::TempDir;
using tesst::bitwise_equal;

namespace {

SynthSpec small_spec(std::uint64_t seed, double sigma) {
  SynthSpec spec;
  spec.seed = seed;
  spec.n_states = 3;
  spec.svs_dim = 6;
  spec.noise_sigma = sigma;
  spec.videos = 3;
  spec.clips_per_video = 8;
  return spec;
}

double dataset_local_accuracy(const SynthData& data) {
  double sum = 0.0;
  for (std::size_t i = 0; i < data.queries.size(); ++i) {
    const TessellationPath path = tessellate_local(data.queries[i], data.corpus);
    sum += state_accuracy(path.assignments, data.corpus_states, data.query_states[i]);
  }
  return sum / static_cast<double>(data.queries.size());
}

}  // namespace

TEST_SUITE("synth") {

TEST_CASE("generation is a pure function of the spec") {
  const SynthSpec spec = small_spec(1234, 0.2);
  const SynthData a = gen_markov_corpus(spec);
  const SynthData b = gen_markov_corpus(spec);
  CHECK(bitwise_equal(a.corpus.svs_semantics, b.corpus.svs_semantics));
  CHECK(bitwise_equal(*a.corpus.svs_appearance, *b.corpus.svs_appearance));
  CHECK(a.corpus_states == b.corpus_states);
  CHECK(a.query_states == b.query_states);
  REQUIRE(a.queries.size() == b.queries.size());
  for (std::size_t i = 0; i < a.queries.size(); ++i)
    CHECK(bitwise_equal(a.queries[i].svs_appearance, b.queries[i].svs_appearance));

  SynthSpec other = spec;
  other.seed = 1235;
  CHECK_FALSE(bitwise_equal(gen_markov_corpus(other).corpus.svs_semantics,
                            a.corpus.svs_semantics));
}

TEST_CASE("markov semantics are exact prototypes, appearance adds noise") {
  const SynthData noiseless = gen_markov_corpus(small_spec(9, 0.0));
  CHECK(bitwise_equal(noiseless.corpus.svs_semantics, *noiseless.corpus.svs_appearance));
  for (std::size_t i = 0; i < noiseless.corpus_states.size(); ++i) {
    const auto s = noiseless.corpus_states[i];
    CHECK((noiseless.corpus.svs_semantics.row(static_cast<Eigen::Index>(i)) -
           noiseless.prototypes.row(s)).norm() == 0.0);
  }

  const SynthData noisy = gen_markov_corpus(small_spec(9, 0.3));
  // Same seed: states and semantics agree with the noiseless run, only the
  // appearances move (common random numbers across sigma values).
  CHECK(noisy.corpus_states == noiseless.corpus_states);
  CHECK(bitwise_equal(noisy.corpus.svs_semantics, noiseless.corpus.svs_semantics));
  CHECK_FALSE(bitwise_equal(*noisy.corpus.svs_appearance, noisy.corpus.svs_semantics));
}

TEST_CASE("sigma 0 makes local tessellation recover ground truth exactly") {
  const SynthData data = gen_markov_corpus(small_spec(21, 0.0));
  CHECK(dataset_local_accuracy(data) == 1.0);
}

TEST_CASE("identity transitions produce constant-state videos") {
  SynthSpec spec = small_spec(5, 0.1);
  spec.transition_matrix = FeatureMatrix::Identity(3, 3);
  const SynthData data = gen_markov_corpus(spec);
  std::size_t i = 0;
  for (const VideoRange& range : data.corpus.video_boundaries) {
    for (i = range.begin; i < range.end; ++i)
      CHECK(data.corpus_states[i] == data.corpus_states[range.begin]);
  }
  for (const auto& states : data.query_states)
    for (const auto s : states) CHECK(s == states.front());
}

TEST_CASE("sticky and uniform transition builders are row-stochastic") {
  const FeatureMatrix u = uniform_transitions(4);
  const FeatureMatrix s = sticky_transitions(4, 0.7);
  for (Eigen::Index i = 0; i < 4; ++i) {
    CHECK(u.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s(i, i) == doctest::Approx(0.7).epsilon(1e-12));
  }
}

TEST_CASE("non-stochastic transition matrices are rejected") {
  SynthSpec spec = small_spec(3, 0.0);
  spec.transition_matrix = FeatureMatrix::Ones(3, 3);
  CHECK_THROWS_AS(gen_markov_corpus(spec), InvalidArgument);
  spec.transition_matrix = FeatureMatrix::Identity(2, 2);  // wrong size
  CHECK_THROWS_AS(gen_markov_corpus(spec), InvalidArgument);
}

TEST_CASE("dynamics with zero weights collapse to the origin after step one") {
  SynthSpec spec = small_spec(11, 0.0);
  const SynthData data =
      gen_dynamics_corpus(spec, FeatureMatrix::Zero(spec.svs_dim, spec.svs_dim));
  for (const VideoRange& range : data.corpus.video_boundaries)
    for (std::size_t i = range.begin + 1; i < range.end; ++i)
      CHECK(data.corpus.svs_semantics.row(static_cast<Eigen::Index>(i)).norm() == 0.0);
}

TEST_CASE("dynamics queries revisit corpus trajectories clip for clip") {
  const SynthData data = gen_dynamics_corpus(small_spec(13, 0.0));
  REQUIRE(data.queries.size() == data.corpus.video_boundaries.size());
  for (std::size_t v = 0; v < data.queries.size(); ++v) {
    const VideoRange& range = data.corpus.video_boundaries[v];
    for (std::size_t i = range.begin; i < range.end; ++i) {
      CHECK(data.query_states[v][i - range.begin] == static_cast<std::int64_t>(i));
      CHECK((data.queries[v].svs_appearance.row(static_cast<Eigen::Index>(i - range.begin)) -
             data.corpus.svs_semantics.row(static_cast<Eigen::Index>(i))).norm() == 0.0);
    }
  }
  CHECK(dataset_local_accuracy(data) == 1.0);
}

TEST_CASE("brute force path handles the documented small cases") {
  FeatureMatrix sem(3, 1);
  sem << 0, 2, 5;

  SUBCASE("single clip picks the lowest-energy candidate") {
    const TessellationPath p = brute_force_path({{{1, 0.5}, {0, 0.9}}}, sem);
    CHECK(p.assignments == std::vector<RefId>{1});
    CHECK(p.path_energy == 0.5);
  }
  SUBCASE("zero transitions pick per-clip argmins") {
    FeatureMatrix same(3, 1);
    same << 7, 7, 7;
    const TessellationPath p =
        brute_force_path({{{2, 0.3}, {0, 0.7}}, {{1, 0.2}, {2, 0.4}}}, same);
    CHECK(p.assignments == std::vector<RefId>{2, 1});
    CHECK(p.path_energy == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("oversized lattices hit the resource limit") {
    std::vector<CandidateSet> candidates;
    CandidateSet wide;
    for (RefId j = 0; j < 3; ++j) wide.push_back({j, 0.1 * static_cast<double>(j)});
    for (int i = 0; i < 16; ++i) candidates.push_back(wide);  // 3^16 > 1e7
    CHECK_THROWS_AS(brute_force_path(candidates, sem), ResourceLimit);
  }
}

TEST_CASE("brute force and viterbi agree on random markov instances") {
  for (std::uint64_t seed = 100; seed < 110; ++seed) {
    const SynthData data = gen_markov_corpus(small_spec(seed, 0.4));
    for (const QuerySequence& q : data.queries) {
      const auto candidates = knn_candidates(q, data.corpus, 4, 0.01);
      const TessellationPath dp = tessellate_over_candidates(candidates, data.corpus);
      const TessellationPath bf = brute_force_path(candidates, data.corpus.svs_semantics);
      CHECK(dp.assignments == bf.assignments);
      CHECK(dp.path_energy == doctest::Approx(bf.path_energy).epsilon(1e-9));
    }
  }
}

TEST_CASE("state accuracy counts matching states") {
  const std::vector<std::int64_t> corpus_states = {0, 1, 2, 1};
  CHECK(state_accuracy({0, 1, 2, 3}, corpus_states, {0, 1, 2, 0}) == 0.75);
  CHECK(state_accuracy({3, 1}, corpus_states, {1, 1}) == 1.0);
  CHECK_THROWS_AS(state_accuracy({0, 1}, corpus_states, {0}), InvalidArgument);
}

TEST_CASE("datasets land on disk in the corpus formats") {
  TempDir dir("synthfiles");
  const SynthData data = gen_markov_corpus(small_spec(31, 0.1));
  write_synth_dataset(data, dir.path());
  for (const char* name :
       {"corpus_appearance.fmat", "corpus_semantics.fmat", "query_appearance.fmat",
        "corpus.jsonl", "queries.jsonl", "truth.json"})
    CHECK(std::filesystem::exists(dir / name));

  SUBCASE("video ids respect the 999 cap") {
    SynthSpec spec = small_spec(1, 0.0);
    spec.videos = 1000;
    CHECK_THROWS_AS(gen_markov_corpus(spec), InvalidArgument);
  }
}

}  // TEST_SUITE
