/*
 * tessellate - temporal semantic transfer for video clip sequences
 *
 * Licensed under the terms of the Apache 2.0 License.
 * See LICENSE file in the project root for terms.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "tessellate/corpus.hpp"
#include "tessellate/tessellation.hpp"
#include "tessellate/types.hpp"

namespace tess {

// One LSTM layer. The four gates are stacked along the rows of each tensor in
// the order input, forget, cell-candidate, output, so w_x is (4H x in),
// w_h is (4H x H) and b is 4H.
struct LstmLayer {
  FeatureMatrix w_x;
  FeatureMatrix w_h;
  Vector b;

  Eigen::Index hidden() const { return w_h.cols(); }
  Eigen::Index input_dim() const { return w_x.cols(); }
};

// Recurrent state threaded through lstm_step. Zero for the first clip.
struct LstmState {
  Vector h1, c1, h2, c2;
};

// Two stacked LSTM layers plus an affine projection back to the joint space.
// The step input is the previous clip's assigned semantics concatenated with
// the current clip's appearance, both in the joint space.
struct PredictorModel {
  LstmLayer layer1;
  LstmLayer layer2;
  FeatureMatrix output_proj;  // svs-dim x hidden2
  Vector output_bias;

  Eigen::Index svs_dim() const { return output_proj.rows(); }
  LstmState zero_state() const;

  void save(const std::filesystem::path& path) const;
  static PredictorModel load(const std::filesystem::path& path);
};

struct TrainingConfig {
  double learning_rate = 1e-3;
  int epochs = 100;
  double grad_clip = 5.0;
  std::uint64_t seed = 7;
  Eigen::Index hidden = 1000;
};

// Uniform +-1/sqrt(fan-in) weights, biases zero except the forget gates at
// +1; the draw order is fixed so a seed pins the model bit for bit.
PredictorModel init_predictor(Eigen::Index svs_dim, Eigen::Index hidden,
                              std::uint64_t seed);

// One prediction step: gates through both layers, then the output projection.
// Pure; the only state is the explicit argument. Throws NumericFailure if an
// activation goes non-finite.
std::pair<Vector, LstmState> lstm_step(
    const PredictorModel& model, const Eigen::Ref<const Vector>& prev_semantics,
    const Eigen::Ref<const Vector>& cur_appearance, const LstmState& state);

// Mean squared error over a whole corpus under teacher forcing, plus the
// gradient of every parameter tensor (returned in a model-shaped carrier).
// This is the exact quantity train_predictor descends; exposed so tests can
// check it against finite differences.
struct PredictorGradients {
  PredictorModel grads;
  double loss = 0.0;
};
PredictorGradients predictor_gradients(const PredictorModel& model,
                                       const ReferenceCorpus& corpus);

struct TrainingResult {
  PredictorModel model;
  std::vector<double> loss_history;  // one mean-squared-error value per epoch
};

// Teacher-forced BPTT over per-video sequences with Adam updates and global
// gradient-norm clipping. Deterministic given the seed. The corpus must carry
// svs_appearance and at least one within-video transition.
TrainingResult train_predictor(const ReferenceCorpus& corpus,
                               const TrainingConfig& config);

// Sequential inference: predict the next semantics from the previously
// *assigned* semantics and the current appearance, then snap to the nearest
// candidate of the restricted set. Ties go to the lowest ref_id.
TessellationPath tessellate_supervised(const QuerySequence& query,
                                       const ReferenceCorpus& corpus,
                                       const PredictorModel& model,
                                       int r_prime = 5,
                                       double rel_threshold = 0.05);

}  // namespace tess
