/*
 * tessellate - temporal semantic transfer for video clip sequences
 *
 * Licensed under the terms of the Apache 2.0 License.
 * See LICENSE file in the project root for terms.
 */
#include "tessellate/tessellation.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include <doctest.h>

#include "tessellate/error.hpp"
#include "tessellate/rng.hpp"
#include "tessellate/synth.hpp"
#include "test_util.hpp"

using namespace tess;
using tesst::random_matrix;
using tesst::random_vector;
using tesst::toy_corpus;
using tesst::toy_query;

namespace {

// Random candidate lattice over a random semantics matrix: per clip, r
// distinct refs with energies in [0, 2), sorted by (energy, ref_id) as the
// CandidateSet contract requires.
struct Lattice {
  std::vector<CandidateSet> candidates;
  FeatureMatrix semantics;
};

Lattice random_lattice(Rng& rng, int clips, int max_r, Eigen::Index n_refs,
                       Eigen::Index dim) {
  Lattice lat;
  lat.semantics = random_matrix(rng, n_refs, dim);
  for (int i = 0; i < clips; ++i) {
    const int r = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(max_r)));
    std::vector<RefId> ids(static_cast<std::size_t>(n_refs));
    for (Eigen::Index j = 0; j < n_refs; ++j) ids[static_cast<std::size_t>(j)] = j;
    for (int j = 0; j < r; ++j)  // partial Fisher-Yates
      std::swap(ids[j], ids[j + rng.uniform_int(ids.size() - j)]);
    CandidateSet set;
    for (int j = 0; j < r; ++j) set.push_back({ids[j], 2.0 * rng.uniform()});
    std::sort(set.begin(), set.end(), [](const Candidate& a, const Candidate& b) {
      return a.energy != b.energy ? a.energy < b.energy : a.ref_id < b.ref_id;
    });
    lat.candidates.push_back(std::move(set));
  }
  return lat;
}

double enumerate_best(const Lattice& lat, std::vector<RefId>* best_path = nullptr) {
  const std::size_t m = lat.candidates.size();
  std::vector<std::size_t> pick(m, 0);
  double best = std::numeric_limits<double>::infinity();
  while (true) {
    double e = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      e += lat.candidates[i][pick[i]].energy;
      if (i > 0)
        e += (lat.semantics.row(lat.candidates[i][pick[i]].ref_id) -
              lat.semantics.row(lat.candidates[i - 1][pick[i - 1]].ref_id))
                 .squaredNorm();
    }
    if (e < best) {
      best = e;
      if (best_path) {
        best_path->clear();
        for (std::size_t i = 0; i < m; ++i)
          best_path->push_back(lat.candidates[i][pick[i]].ref_id);
      }
    }
    std::size_t i = 0;
    for (; i < m; ++i) {
      if (++pick[i] < lat.candidates[i].size()) break;
      pick[i] = 0;
    }
    if (i == m) break;
  }
  return best;
}

ReferenceCorpus corpus_of(const FeatureMatrix& semantics) {
  return toy_corpus(semantics, {static_cast<std::size_t>(semantics.rows())});
}

}  // namespace

TEST_SUITE("tessellation") {

TEST_CASE("data energy is the squared distance") {
  Vector u(2), v(2);
  u << 3, 4;
  v << 0, 0;
  CHECK(data_energy(u, u) == 0.0);
  CHECK(data_energy(u, v) == 25.0);

  Rng rng(61);
  const Vector a = random_vector(rng, 2000);
  const Vector b = random_vector(rng, 2000);
  double manual = 0.0;
  for (Eigen::Index i = 0; i < 2000; ++i) manual += (a(i) - b(i)) * (a(i) - b(i));
  CHECK(data_energy(a, b) == doctest::Approx(manual).epsilon(1e-9));
  CHECK_THROWS_AS(data_energy(u, random_vector(rng, 3)), InvalidArgument);
}

TEST_CASE("transition energy matches data energy semantics") {
  Vector e1(3), e2(3);
  e1 << 1, 0, 0;
  e2 << 0, 1, 0;
  CHECK(transition_energy(e1, e1) == 0.0);  // repeats cost nothing
  CHECK(transition_energy(e1, e2) == 2.0);  // orthonormal pair

  Rng rng(62);
  const Vector a = random_vector(rng, 64);
  const Vector b = random_vector(rng, 64);
  CHECK(transition_energy(a, b) == doctest::Approx((a - b).squaredNorm()).epsilon(1e-12));
}

TEST_CASE("knn orders candidates and applies the relative threshold") {
  FeatureMatrix sem(3, 1);
  sem << 0, 1, 5;
  const ReferenceCorpus corpus = corpus_of(sem);
  FeatureMatrix q(1, 1);
  q << 0.9;

  SUBCASE("nearest two of {0,1,5} from 0.9") {
    const auto sets = knn_candidates(toy_query(q), corpus, 2, 1e-9);
    REQUIRE(sets.size() == 1);
    REQUIRE(sets[0].size() == 2);
    CHECK(sets[0][0].ref_id == 1);
    CHECK(sets[0][1].ref_id == 0);
    CHECK(sets[0][0].energy == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(sets[0][1].energy == doctest::Approx(0.81).epsilon(1e-12));
  }
  SUBCASE("rel_threshold 1 keeps only the nearest when distances differ") {
    const auto sets = knn_candidates(toy_query(q), corpus, 3, 1.0);
    REQUIRE(sets[0].size() == 1);
    CHECK(sets[0][0].ref_id == 1);
  }
  SUBCASE("rel_threshold 1 keeps exact ties with the nearest") {
    FeatureMatrix q2(1, 1);
    q2 << 0.5;  // equidistant from 0 and 1
    const auto sets = knn_candidates(toy_query(q2), corpus, 3, 1.0);
    REQUIRE(sets[0].size() == 2);
    CHECK(sets[0][0].ref_id == 0);  // tie -> lower ref first
    CHECK(sets[0][1].ref_id == 1);
  }
  SUBCASE("the nearest neighbor survives any threshold") {
    const auto sets = knn_candidates(toy_query(q), corpus, 5, 1.0);
    CHECK(sets[0].size() >= 1);
  }
  SUBCASE("parameter validation") {
    CHECK_THROWS_AS(knn_candidates(toy_query(q), corpus, 0, 0.05), InvalidArgument);
    CHECK_THROWS_AS(knn_candidates(toy_query(q), corpus, 2, 0.0), InvalidArgument);
    CHECK_THROWS_AS(knn_candidates(toy_query(q), corpus, 2, 1.5), InvalidArgument);
  }
}

TEST_CASE("knn threshold boundary works in the log domain") {
  // d1^2 = 1, d2^2 = 1 - ln(0.5): the ratio exp(-(d2^2-d1^2)) is exactly 0.5
  // up to rounding, so thresholds slightly above/below 0.5 flip the decision.
  const double d2 = std::sqrt(1.0 - std::log(0.5));
  FeatureMatrix sem(2, 1);
  sem << 1.0, -d2;
  const ReferenceCorpus corpus = corpus_of(sem);
  FeatureMatrix q(1, 1);
  q << 0.0;
  CHECK(knn_candidates(toy_query(q), corpus, 2, 0.499)[0].size() == 2);
  CHECK(knn_candidates(toy_query(q), corpus, 2, 0.501)[0].size() == 1);
}

TEST_CASE("knn matches an exhaustive-scan oracle") {
  Rng rng(63);
  const FeatureMatrix sem = random_matrix(rng, 40, 6);
  const ReferenceCorpus corpus = corpus_of(sem);
  const FeatureMatrix q = random_matrix(rng, 7, 6);
  const double rel = 0.35;
  const auto sets = knn_candidates(toy_query(q), corpus, 5, rel);
  REQUIRE(sets.size() == 7);

  for (Eigen::Index i = 0; i < 7; ++i) {
    std::vector<std::pair<double, RefId>> all;
    for (Eigen::Index j = 0; j < 40; ++j)
      all.push_back({(q.row(i) - sem.row(j)).squaredNorm(), j});
    std::sort(all.begin(), all.end());
    CandidateSet expect;
    for (std::size_t k = 0; k < 5 && k < all.size(); ++k) {
      if (k > 0 && all[k].first - all[0].first > -std::log(rel)) break;
      expect.push_back({all[k].second, all[k].first});
    }
    REQUIRE(sets[i].size() == expect.size());
    for (std::size_t k = 0; k < expect.size(); ++k) {
      CHECK(sets[i][k].ref_id == expect[k].ref_id);
      CHECK(sets[i][k].energy == doctest::Approx(expect[k].energy).epsilon(1e-12));
    }
  }
}

TEST_CASE("local tessellation is the per-clip argmin with the ref-id tie rule") {
  SUBCASE("query equal to a corpus row has zero energy") {
    Rng rng(64);
    const FeatureMatrix sem = random_matrix(rng, 10, 4);
    const ReferenceCorpus corpus = corpus_of(sem);
    FeatureMatrix q(1, 4);
    q = sem.row(6);
    const TessellationPath path = tessellate_local(toy_query(q), corpus);
    CHECK(path.assignments == std::vector<RefId>{6});
    CHECK(path.clip_energies[0] == 0.0);
    CHECK(path.path_energy == 0.0);
    CHECK(path.mode == TessellationMode::Local);
  }
  SUBCASE("equidistant candidates resolve to the lower ref id") {
    FeatureMatrix sem(3, 1);
    sem << 2, 0, 2;  // refs 0 and 2 identical
    FeatureMatrix q(1, 1);
    q << 2;
    const TessellationPath path = tessellate_local(toy_query(q), corpus_of(sem));
    CHECK(path.assignments == std::vector<RefId>{0});
  }
  SUBCASE("random instance equals a brute-force scan") {
    Rng rng(65);
    const FeatureMatrix sem = random_matrix(rng, 30, 5);
    const ReferenceCorpus corpus = corpus_of(sem);
    const FeatureMatrix q = random_matrix(rng, 9, 5);
    const TessellationPath path = tessellate_local(toy_query(q), corpus);
    for (Eigen::Index i = 0; i < 9; ++i) {
      RefId best = 0;
      double best_e = (q.row(i) - sem.row(0)).squaredNorm();
      for (Eigen::Index j = 1; j < 30; ++j) {
        const double e = (q.row(i) - sem.row(j)).squaredNorm();
        if (e < best_e) {
          best_e = e;
          best = j;
        }
      }
      CHECK(path.assignments[static_cast<std::size_t>(i)] == best);
      CHECK(path.clip_energies[static_cast<std::size_t>(i)] ==
            doctest::Approx(best_e).epsilon(1e-12));
    }
  }
}

TEST_CASE("path energy includes transitions in every mode") {
  Rng rng(66);
  const FeatureMatrix sem = random_matrix(rng, 12, 3);
  const ReferenceCorpus corpus = corpus_of(sem);
  const FeatureMatrix q = random_matrix(rng, 5, 3);

  const TessellationPath local = tessellate_local(toy_query(q), corpus);
  const TessellationPath viterbi = tessellate_viterbi(toy_query(q), corpus, 4, 0.01);
  for (const TessellationPath& p : {local, viterbi}) {
    CHECK(p.path_energy ==
          doctest::Approx(joint_path_energy(p.clip_energies, p.assignments, sem))
              .epsilon(1e-12));
  }
  CHECK(viterbi.path_energy <= local.path_energy + 1e-12);
}

TEST_CASE("two-clip lattice matches full enumeration") {
  // Semantics: refs 0 and 3 at a, refs 1 and 2 at b, with ||a-b||^2 = 5.
  // Candidates: clip 0 -> {0: 1, 1: 2}, clip 1 -> {2: 2, 3: 1}. The four path
  // energies are 8, 2, 4, 8, so the optimum is (0, 3) with energy 2.
  FeatureMatrix sem(4, 1);
  const double b = std::sqrt(5.0);
  sem << 0, b, b, 0;
  std::vector<CandidateSet> candidates = {{{0, 1.0}, {1, 2.0}},
                                          {{3, 1.0}, {2, 2.0}}};
  const ReferenceCorpus corpus = corpus_of(sem);
  const TessellationPath path = tessellate_over_candidates(candidates, corpus);
  CHECK(path.assignments == std::vector<RefId>{0, 3});
  CHECK(path.path_energy == doctest::Approx(2.0).epsilon(1e-12));

  const TessellationPath oracle = brute_force_path(candidates, sem);
  CHECK(oracle.assignments == path.assignments);
  CHECK(oracle.path_energy == doctest::Approx(path.path_energy).epsilon(1e-12));
}

TEST_CASE("viterbi equals path enumeration on random lattices") {
  Rng rng(67);
  for (int trial = 0; trial < 40; ++trial) {
    const int m = 2 + static_cast<int>(rng.uniform_int(5));
    const Lattice lat = random_lattice(rng, m, 4, 15, 3);
    const ReferenceCorpus corpus = corpus_of(lat.semantics);
    const TessellationPath path = tessellate_over_candidates(lat.candidates, corpus);

    std::vector<RefId> best_path;
    const double best = enumerate_best(lat, &best_path);
    CHECK(path.path_energy == doctest::Approx(best).epsilon(1e-9));
    for (std::size_t i = 0; i < path.assignments.size(); ++i) {
      const CandidateSet& set = lat.candidates[i];
      const bool member = std::any_of(set.begin(), set.end(), [&](const Candidate& c) {
        return c.ref_id == path.assignments[i];
      });
      CHECK(member);  // every assignment stays inside its candidate set
    }
  }
}

TEST_CASE("zero transitions reduce viterbi to the per-clip argmin") {
  Rng rng(68);
  for (int trial = 0; trial < 20; ++trial) {
    // All semantics rows identical -> every transition energy is exactly 0.
    Lattice lat = random_lattice(rng, 6, 4, 10, 3);
    for (Eigen::Index j = 1; j < lat.semantics.rows(); ++j)
      lat.semantics.row(j) = lat.semantics.row(0);
    const ReferenceCorpus corpus = corpus_of(lat.semantics);
    const TessellationPath path = tessellate_over_candidates(lat.candidates, corpus);
    for (std::size_t i = 0; i < 6; ++i) {
      const CandidateSet& set = lat.candidates[i];
      const Candidate& best =
          *std::min_element(set.begin(), set.end(), [](const Candidate& a, const Candidate& b) {
            return a.energy != b.energy ? a.energy < b.energy : a.ref_id < b.ref_id;
          });
      CHECK(path.assignments[i] == best.ref_id);
    }
  }
}

TEST_CASE("per-clip energy shifts never change the argmin path") {
  Rng rng(69);
  Lattice lat = random_lattice(rng, 5, 4, 12, 3);
  const ReferenceCorpus corpus = corpus_of(lat.semantics);
  const TessellationPath base = tessellate_over_candidates(lat.candidates, corpus);

  double shift_sum = 0.0;
  for (auto& set : lat.candidates) {
    const double c = rng.uniform() * 10.0 - 5.0;
    shift_sum += c;
    for (auto& cand : set) cand.energy += c;
  }
  const TessellationPath shifted = tessellate_over_candidates(lat.candidates, corpus);
  CHECK(shifted.assignments == base.assignments);
  CHECK(shifted.path_energy ==
        doctest::Approx(base.path_energy + shift_sum).epsilon(1e-9));
}

TEST_CASE("enlarging a candidate set never increases the optimal energy") {
  Rng rng(70);
  for (int trial = 0; trial < 20; ++trial) {
    Lattice big = random_lattice(rng, 5, 5, 14, 3);
    Lattice small = big;
    for (auto& set : small.candidates)
      if (set.size() > 1) set.resize(1 + rng.uniform_int(set.size()));
    const ReferenceCorpus corpus = corpus_of(big.semantics);
    const double e_big = tessellate_over_candidates(big.candidates, corpus).path_energy;
    const double e_small = tessellate_over_candidates(small.candidates, corpus).path_energy;
    CHECK(e_big <= e_small + 1e-12);
  }
}

TEST_CASE("exact ties resolve to the lexicographically smallest path") {
  // Refs 0/1 identical and refs 2/3 identical, integer energies: every path
  // through {0 or 1} x {2 or 3} has the same total, so (0, 2) must win.
  FeatureMatrix sem(4, 1);
  sem << 1, 1, 3, 3;
  std::vector<CandidateSet> candidates = {{{0, 1.0}, {1, 1.0}},
                                          {{2, 1.0}, {3, 1.0}}};
  const ReferenceCorpus corpus = corpus_of(sem);
  const TessellationPath dp = tessellate_over_candidates(candidates, corpus);
  const TessellationPath oracle = brute_force_path(candidates, sem);
  CHECK(dp.assignments == std::vector<RefId>{0, 2});
  CHECK(oracle.assignments == std::vector<RefId>{0, 2});
  CHECK(dp.path_energy == oracle.path_energy);
}

TEST_CASE("degenerate inputs are rejected") {
  Rng rng(71);
  const FeatureMatrix sem = random_matrix(rng, 4, 2);
  const ReferenceCorpus corpus = corpus_of(sem);
  ReferenceCorpus empty;
  empty.task = TaskTag::Text;
  const FeatureMatrix q = random_matrix(rng, 2, 2);

  CHECK_THROWS_AS(tessellate_local(toy_query(q), empty), InvalidArgument);
  CHECK_THROWS_AS(tessellate_viterbi(toy_query(q), empty), InvalidArgument);
  CHECK_THROWS_AS(tessellate_local(toy_query(FeatureMatrix(0, 2)), corpus),
                  InvalidArgument);
  CHECK_THROWS_AS(tessellate_viterbi(toy_query(random_matrix(rng, 2, 3)), corpus),
                  InvalidArgument);
}

}  // TEST_SUITE
