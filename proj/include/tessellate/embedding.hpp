/*
 * tessellate - temporal semantic transfer for video clip sequences
 *
 * Licensed under the terms of the Apache 2.0 License.
 * See LICENSE file in the project root for terms.
 */
#pragma once

#include <filesystem>
#include <optional>

#include "tessellate/types.hpp"

namespace tess {

// Principal component analysis fitted by SVD of the centered data.
//
// Sign convention: each component row is flipped so that its largest-magnitude
// entry is positive, which makes the decomposition deterministic.
struct PcaModel {
  Vector mean;                 // input-dim
  FeatureMatrix components;    // out-dim x input-dim, rows orthonormal
  Vector explained_variance;   // out-dim, non-negative, non-increasing

  Eigen::Index input_dim() const { return mean.size(); }
  Eigen::Index out_dim() const { return components.rows(); }
};

PcaModel fit_pca(const FeatureMatrix& data, Eigen::Index out_dim);
Vector apply_pca(const PcaModel& model, const Vector& x);

// Reconstruction through the model and back: mean + components^T * (components * (x - mean)).
Vector reconstruct_pca(const PcaModel& model, const Vector& x);

// Regularized canonical correlation analysis between an appearance view and a
// semantics view. Each projection direction u satisfies u^T (C_vv + lambda I) u = 1
// for its view's centered covariance C_vv.
struct CcaModel {
  FeatureMatrix proj_appearance;  // svs-dim x appearance-dim
  FeatureMatrix proj_semantics;   // svs-dim x semantics-dim
  Vector correlations;            // svs-dim, non-increasing, in [0, 1]
  double lambda = 0.0;
  Vector mean_appearance;
  Vector mean_semantics;

  Eigen::Index svs_dim() const { return proj_appearance.rows(); }

  // Trivial model that leaves dim-dimensional inputs unchanged. Used for tasks
  // whose semantic space is the appearance space itself.
  static CcaModel identity(Eigen::Index dim);
};

// When lambda is not given it defaults to a tenth of the largest singular
// value of the centered cross-covariance between the two views.
CcaModel fit_cca(const FeatureMatrix& app, const FeatureMatrix& sem, Eigen::Index out_dim,
                 std::optional<double> lambda = std::nullopt);

Vector project_appearance(const CcaModel& model, const Vector& a);
Vector project_semantics(const CcaModel& model, const Vector& s);

// Optional per-view PCA in front of the shared CCA map.
struct EmbeddingModel {
  std::optional<PcaModel> appearance_pca;
  std::optional<PcaModel> semantics_pca;
  CcaModel cca;

  Vector embed_appearance(const Vector& a) const;
  Vector embed_semantics(const Vector& s) const;
  Eigen::Index svs_dim() const { return cca.svs_dim(); }

  static EmbeddingModel identity(Eigen::Index dim);

  void save(const std::filesystem::path& path) const;
  static EmbeddingModel load(const std::filesystem::path& path);
};

}  // namespace tess
