/*
 * tessellate - temporal semantic transfer for video clip sequences
 *
 * Licensed under the terms of the Apache 2.0 License.
 * See LICENSE file in the project root for terms.
 */
#pragma once

#include <string>
#include <vector>

#include "tessellate/corpus.hpp"
#include "tessellate/types.hpp"

namespace tess {

enum class TessellationMode { Local, Viterbi, Supervised };

const char* to_string(TessellationMode mode);

// One retrieval hit: a reference clip index and its data energy
// ||query_appearance - reference_semantics||^2.
struct Candidate {
  RefId ref_id = 0;
  double energy = 0.0;
};

// Candidates for one query clip, ascending by (energy, ref_id). The first
// entry is the global nearest neighbor and is never pruned.
using CandidateSet = std::vector<Candidate>;

// An assignment of one reference clip per query clip. path_energy is the
// negative log of the unnormalized joint model -- per-clip data terms plus
// consecutive transition terms, constants dropped -- and is reported for every
// mode whether or not that mode minimized it. clip_energies holds the data
// term of each chosen assignment.
struct TessellationPath {
  std::vector<RefId> assignments;
  std::vector<double> clip_energies;
  double path_energy = 0.0;
  TessellationMode mode = TessellationMode::Local;
};

// Squared L2 distance between a query appearance and a reference semantics
// vector. Throws InvalidArgument on dimension mismatch.
double data_energy(const Eigen::Ref<const Vector>& u,
                   const Eigen::Ref<const Vector>& v);

// Joint energy of a fixed assignment sequence: sum of the per-clip data
// energies plus the transition energies between consecutive assigned rows.
double joint_path_energy(const std::vector<double>& clip_energies,
                         const std::vector<RefId>& assignments,
                         const FeatureMatrix& semantics);

// Squared L2 distance between consecutive assigned semantics vectors.
double transition_energy(const Eigen::Ref<const Vector>& v_prev,
                         const Eigen::Ref<const Vector>& v_cur);

// Exhaustive top-r' retrieval per query clip. Entries after the nearest
// neighbor are pruned when their probability ratio against the nearest falls
// below rel_threshold, tested in log domain as d^2 - d1^2 > -ln(rel_threshold).
// Requires r_prime >= 1, rel_threshold in (0, 1], non-empty query and corpus.
std::vector<CandidateSet> knn_candidates(const QuerySequence& query,
                                         const ReferenceCorpus& corpus,
                                         int r_prime = 5,
                                         double rel_threshold = 0.05);

// Per-clip argmin of the data energy over the whole corpus; ties go to the
// lowest ref_id. Transitions play no part in the choice but still enter
// path_energy.
TessellationPath tessellate_local(const QuerySequence& query,
                                  const ReferenceCorpus& corpus);

// Exact Viterbi decode over an explicit candidate lattice: minimizes the sum
// of candidate energies plus transition energies between the corpus semantics
// of consecutive assignments. Ties resolve to the lexicographically smallest
// assignment sequence. Every candidate set must be non-empty.
TessellationPath tessellate_over_candidates(
    const std::vector<CandidateSet>& candidates, const ReferenceCorpus& corpus);

// knn_candidates followed by tessellate_over_candidates.
TessellationPath tessellate_viterbi(const QuerySequence& query,
                                    const ReferenceCorpus& corpus,
                                    int r_prime = 5,
                                    double rel_threshold = 0.05);

}  // namespace tess
