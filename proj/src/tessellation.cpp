/*
 * tessellate - temporal semantic transfer for video clip sequences
 *
 * Licensed under the terms of the Apache 2.0 License.
 * See LICENSE file in the project root for terms.
 */
#include "tessellate/tessellation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "tessellate/error.hpp"

namespace tess {

namespace {

double row_transition(const FeatureMatrix& semantics, RefId prev, RefId cur) {
  return (semantics.row(static_cast<Eigen::Index>(cur)) -
          semantics.row(static_cast<Eigen::Index>(prev)))
      .squaredNorm();
}

void check_query(const QuerySequence& query, const ReferenceCorpus& corpus) {
  if (corpus.svs_semantics.rows() == 0)
    throw InvalidArgument("reference corpus is empty");
  if (query.svs_appearance.rows() == 0)
    throw InvalidArgument("query sequence is empty");
  if (query.svs_appearance.cols() != corpus.svs_semantics.cols())
    throw InvalidArgument("query dimension " +
                          std::to_string(query.svs_appearance.cols()) +
                          " does not match corpus dimension " +
                          std::to_string(corpus.svs_semantics.cols()));
}

}  // namespace

double joint_path_energy(const std::vector<double>& clip_energies,
                         const std::vector<RefId>& assignments,
                         const FeatureMatrix& semantics) {
  double total = 0.0;
  for (double e : clip_energies) total += e;
  for (std::size_t i = 1; i < assignments.size(); ++i)
    total += row_transition(semantics, assignments[i - 1], assignments[i]);
  return total;
}

const char* to_string(TessellationMode mode) {
  switch (mode) {
    case TessellationMode::Local: return "local";
    case TessellationMode::Viterbi: return "viterbi";
    case TessellationMode::Supervised: return "supervised";
  }
  return "local";
}

double data_energy(const Eigen::Ref<const Vector>& u,
                   const Eigen::Ref<const Vector>& v) {
  if (u.size() != v.size())
    throw InvalidArgument("energy operands differ in dimension: " +
                          std::to_string(u.size()) + " vs " +
                          std::to_string(v.size()));
  return (u - v).squaredNorm();
}

double transition_energy(const Eigen::Ref<const Vector>& v_prev,
                         const Eigen::Ref<const Vector>& v_cur) {
  return data_energy(v_prev, v_cur);
}

std::vector<CandidateSet> knn_candidates(const QuerySequence& query,
                                         const ReferenceCorpus& corpus,
                                         int r_prime, double rel_threshold) {
  check_query(query, corpus);
  if (r_prime < 1)
    throw InvalidArgument("r_prime must be >= 1, got " +
                          std::to_string(r_prime));
  if (!(rel_threshold > 0.0) || rel_threshold > 1.0)
    throw InvalidArgument("rel_threshold must lie in (0, 1]");

  const FeatureMatrix& sem = corpus.svs_semantics;
  const Eigen::Index n = sem.rows();
  const Eigen::Index m = query.svs_appearance.rows();
  const double cutoff = -std::log(rel_threshold);

  std::vector<CandidateSet> result(static_cast<std::size_t>(m));
  Eigen::VectorXd d2(n);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < m; ++i) {
    d2 = (sem.rowwise() - query.svs_appearance.row(i)).rowwise().squaredNorm();
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    const auto take = std::min<Eigen::Index>(r_prime, n);
    std::partial_sort(order.begin(), order.begin() + take, order.end(),
                      [&d2](Eigen::Index a, Eigen::Index b) {
                        if (d2(a) != d2(b)) return d2(a) < d2(b);
                        return a < b;
                      });
    CandidateSet& set = result[static_cast<std::size_t>(i)];
    set.push_back({static_cast<RefId>(order[0]), d2(order[0])});
    for (Eigen::Index k = 1; k < take; ++k) {
      if (d2(order[k]) - d2(order[0]) > cutoff) break;  // sorted: rest fail too
      set.push_back({static_cast<RefId>(order[k]), d2(order[k])});
    }
  }
  return result;
}

TessellationPath tessellate_local(const QuerySequence& query,
                                  const ReferenceCorpus& corpus) {
  check_query(query, corpus);
  const FeatureMatrix& sem = corpus.svs_semantics;
  const Eigen::Index n = sem.rows();
  const Eigen::Index m = query.svs_appearance.rows();

  TessellationPath path;
  path.mode = TessellationMode::Local;
  path.assignments.reserve(static_cast<std::size_t>(m));
  path.clip_energies.reserve(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) {
    Eigen::Index best = 0;
    double best_e = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j) {
      const double e = (sem.row(j) - query.svs_appearance.row(i)).squaredNorm();
      if (e < best_e) {
        best_e = e;
        best = j;
      }
    }
    path.assignments.push_back(static_cast<RefId>(best));
    path.clip_energies.push_back(best_e);
  }
  path.path_energy = joint_path_energy(path.clip_energies, path.assignments, sem);
  return path;
}

TessellationPath tessellate_over_candidates(
    const std::vector<CandidateSet>& candidates,
    const ReferenceCorpus& corpus) {
  const std::size_t m = candidates.size();
  if (m == 0) throw InvalidArgument("candidate lattice is empty");
  const FeatureMatrix& sem = corpus.svs_semantics;
  const Eigen::Index n = sem.rows();
  for (const CandidateSet& set : candidates) {
    if (set.empty()) throw InvalidArgument("candidate set for a clip is empty");
    for (const Candidate& c : set)
      if (c.ref_id < 0 || c.ref_id >= static_cast<RefId>(n))
        throw InvalidArgument("candidate ref_id " + std::to_string(c.ref_id) +
                              " outside corpus of " + std::to_string(n) +
                              " clips");
  }

  // Backward pass. cost_to_go[i][k] is the minimal energy of clips i..M-1
  // given assignment k at clip i; best_next[i][k] is the minimal continuation
  // min_l (transition(k, l) + cost_to_go[i+1][l]), kept so the forward pass
  // can recognize every optimal successor by recomputing the same expression.
  std::vector<std::vector<double>> cost_to_go(m);
  std::vector<std::vector<double>> best_next(m);
  for (std::size_t i = 0; i < m; ++i) {
    cost_to_go[i].resize(candidates[i].size());
    best_next[i].resize(candidates[i].size(), 0.0);
  }
  const std::size_t last = m - 1;
  for (std::size_t k = 0; k < candidates[last].size(); ++k)
    cost_to_go[last][k] = candidates[last][k].energy;
  for (std::size_t i = last; i-- > 0;) {
    for (std::size_t k = 0; k < candidates[i].size(); ++k) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < candidates[i + 1].size(); ++l) {
        const double v = row_transition(sem, candidates[i][k].ref_id,
                                        candidates[i + 1][l].ref_id) +
                         cost_to_go[i + 1][l];
        if (v < best) best = v;
      }
      best_next[i][k] = best;
      cost_to_go[i][k] = candidates[i][k].energy + best;
    }
  }

  // Forward pass: among the optimal choices at each step take the smallest
  // ref_id, which yields the lexicographically smallest optimal sequence.
  TessellationPath path;
  path.mode = TessellationMode::Viterbi;
  path.assignments.resize(m);
  path.clip_energies.resize(m);

  double total = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < candidates[0].size(); ++k)
    total = std::min(total, cost_to_go[0][k]);
  std::size_t chosen = 0;
  RefId chosen_id = std::numeric_limits<RefId>::max();
  for (std::size_t k = 0; k < candidates[0].size(); ++k) {
    if (cost_to_go[0][k] == total && candidates[0][k].ref_id < chosen_id) {
      chosen = k;
      chosen_id = candidates[0][k].ref_id;
    }
  }
  path.assignments[0] = candidates[0][chosen].ref_id;
  path.clip_energies[0] = candidates[0][chosen].energy;
  path.path_energy = total;

  for (std::size_t i = 1; i < m; ++i) {
    const double target = best_next[i - 1][chosen];
    const RefId prev_id = candidates[i - 1][chosen].ref_id;
    std::size_t next = candidates[i].size();
    RefId next_id = std::numeric_limits<RefId>::max();
    for (std::size_t l = 0; l < candidates[i].size(); ++l) {
      const double v = row_transition(sem, prev_id, candidates[i][l].ref_id) +
                       cost_to_go[i][l];
      if (v == target && candidates[i][l].ref_id < next_id) {
        next = l;
        next_id = candidates[i][l].ref_id;
      }
    }
    if (next == candidates[i].size())
      throw NumericFailure("viterbi forward pass lost the optimal successor");
    chosen = next;
    path.assignments[i] = candidates[i][chosen].ref_id;
    path.clip_energies[i] = candidates[i][chosen].energy;
  }
  return path;
}

TessellationPath tessellate_viterbi(const QuerySequence& query,
                                    const ReferenceCorpus& corpus, int r_prime,
                                    double rel_threshold) {
  const std::vector<CandidateSet> candidates =
      knn_candidates(query, corpus, r_prime, rel_threshold);
  return tessellate_over_candidates(candidates, corpus);
}

}  // namespace tess
