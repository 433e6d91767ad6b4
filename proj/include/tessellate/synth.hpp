/*
 * tessellate - temporal semantic transfer for video clip sequences
 *
 * Licensed under the terms of the Apache 2.0 License.
 * See LICENSE file in the project root for terms.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "tessellate/corpus.hpp"
#include "tessellate/tessellation.hpp"
#include "tessellate/types.hpp"

namespace tess {

// Parameters for the synthetic corpus generators. Everything downstream of
// the seed is drawn from the portable Rng, so a spec pins the dataset bit for
// bit on every platform.
struct SynthSpec {
  std::uint64_t seed = 1;
  int n_states = 4;
  Eigen::Index svs_dim = 8;
  // n_states x n_states, rows sum to 1. Empty means uniform transitions.
  FeatureMatrix transition_matrix;
  double noise_sigma = 0.0;
  int videos = 4;
  int clips_per_video = 16;
};

FeatureMatrix uniform_transitions(int n_states);
// stay on the diagonal, remainder spread over the other states.
FeatureMatrix sticky_transitions(int n_states, double stay);

// A generated dataset with its ground truth. States are small integers for
// the Markov generator; for the dynamics generator each corpus clip is its
// own state (the query truth is the matching corpus clip index).
struct SynthData {
  ReferenceCorpus corpus;
  std::vector<QuerySequence> queries;
  std::vector<std::int64_t> corpus_states;               // per corpus clip
  std::vector<std::vector<std::int64_t>> query_states;   // per query, per clip
  FeatureMatrix prototypes;  // markov: n_states x svs_dim
  FeatureMatrix dynamics;    // dynamics: svs_dim x svs_dim recurrence weight
};

// Markov-chain corpus: per-state prototypes in the joint space, videos walk
// the chain, semantics are the exact prototypes and appearances add
// Gaussian(0, sigma^2) noise. Queries are fresh walks with held-out noise.
SynthData gen_markov_corpus(const SynthSpec& spec);

// Deterministic-dynamics corpus: per video, s_0 is random and
// s_i = tanh(W s_{i-1}); semantics are the exact s_i, appearances add noise.
// Queries revisit the same trajectories under held-out noise, so the true
// assignment for query clip (v, i) is the corpus clip (v, i). Pass weights to
// pin W, otherwise it is drawn from the seed at edge-of-chaos scale.
SynthData gen_dynamics_corpus(const SynthSpec& spec,
                              const std::optional<FeatureMatrix>& weights = {});

// Exhaustive minimum-energy path over the candidate lattice, with the same
// tie rules as tessellate_viterbi. Oracle only: refuses lattices with more
// than 10^7 paths (ResourceLimit).
TessellationPath brute_force_path(const std::vector<CandidateSet>& candidates,
                                  const FeatureMatrix& semantics);

// Fraction of assignments whose corpus state matches the ground truth.
double state_accuracy(const std::vector<RefId>& assignments,
                      const std::vector<std::int64_t>& corpus_states,
                      const std::vector<std::int64_t>& true_states);

// Writes the dataset in the corpus module's formats: FMAT feature files,
// corpus.jsonl + queries.jsonl manifests, and truth.json with the ground
// truth states.
void write_synth_dataset(const SynthData& data,
                         const std::filesystem::path& dir);

}  // namespace tess
