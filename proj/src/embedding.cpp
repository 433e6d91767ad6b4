/*
 * tessellate - temporal semantic transfer for video clip sequences
 *
 * Licensed under the terms of the Apache 2.0 License.
 * See LICENSE file in the project root for terms.
 */
#include "tessellate/embedding.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>
#include <limits>

#include "tessellate/error.hpp"
#include "tessellate/matrix_io.hpp"

namespace tess {

namespace {

// Flips each row so its largest-magnitude entry is positive. `paired` rows,
// when given, are flipped together to keep cross-view pairings intact.
void fix_signs(FeatureMatrix& rows, FeatureMatrix* paired = nullptr) {
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    Eigen::Index argmax = 0;
    rows.row(r).cwiseAbs().maxCoeff(&argmax);
    if (rows(r, argmax) < 0) {
      rows.row(r) = -rows.row(r);
      if (paired) paired->row(r) = -paired->row(r);
    }
  }
}

Eigen::MatrixXd centered(const FeatureMatrix& data, Vector& mean_out) {
  mean_out = data.colwise().mean();
  Eigen::MatrixXd c = data;
  c.rowwise() -= mean_out.transpose();
  return c;
}

// Symmetric inverse square root of (cov + lambda I). Reports the condition
// number when the regularized matrix is numerically singular.
Eigen::MatrixXd inverse_sqrt(const Eigen::MatrixXd& cov, double lambda, const char* view) {
  Eigen::MatrixXd reg = cov;
  reg.diagonal().array() += lambda;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(reg);
  if (eig.info() != Eigen::Success)
    throw NumericFailure(std::string("fit_cca: eigendecomposition failed for ") + view);
  const auto& vals = eig.eigenvalues();
  const double vmax = vals(vals.size() - 1);
  const double vmin = vals(0);
  const double cond = vmin > 0 ? vmax / vmin : std::numeric_limits<double>::infinity();
  if (vmin <= 0 || cond > 1e14) {
    throw NumericFailure(std::string("fit_cca: regularized covariance of ") + view +
                         " view is numerically singular (condition number " +
                         std::to_string(cond) + ")");
  }
  return eig.eigenvectors() * vals.cwiseSqrt().cwiseInverse().asDiagonal() *
         eig.eigenvectors().transpose();
}

}  // namespace

PcaModel fit_pca(const FeatureMatrix& data, Eigen::Index out_dim) {
  const Eigen::Index n = data.rows();
  const Eigen::Index d = data.cols();
  if (n < 2) throw InvalidArgument("fit_pca: need at least 2 rows, got " + std::to_string(n));
  if (out_dim < 1 || out_dim > std::min(n - 1, d))
    throw InvalidArgument("fit_pca: out_dim " + std::to_string(out_dim) +
                          " not in [1, min(rows-1, dim)] = [1, " +
                          std::to_string(std::min(n - 1, d)) + "]");

  PcaModel model;
  Eigen::MatrixXd x = centered(data, model.mean);
  Eigen::BDCSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinV);
  const Vector& sv = svd.singularValues();

  model.components = svd.matrixV().leftCols(out_dim).transpose();
  fix_signs(model.components);

  // Singular values at roundoff scale correspond to null directions of
  // rank-deficient data; their variance is reported as exactly zero.
  const double rank_tol = sv.size() > 0 ? sv(0) * static_cast<double>(std::max(n, d)) *
                                              std::numeric_limits<double>::epsilon()
                                        : 0.0;
  model.explained_variance.resize(out_dim);
  for (Eigen::Index i = 0; i < out_dim; ++i) {
    const double s = i < sv.size() ? sv(i) : 0.0;
    model.explained_variance(i) = s <= rank_tol ? 0.0 : s * s / static_cast<double>(n - 1);
  }
  return model;
}

Vector apply_pca(const PcaModel& model, const Vector& x) {
  if (x.size() != model.input_dim())
    throw InvalidArgument("apply_pca: input has dim " + std::to_string(x.size()) + ", model expects " +
                          std::to_string(model.input_dim()));
  return model.components * (x - model.mean);
}

Vector reconstruct_pca(const PcaModel& model, const Vector& x) {
  return model.mean + model.components.transpose() * apply_pca(model, x);
}

CcaModel CcaModel::identity(Eigen::Index dim) {
  CcaModel m;
  m.proj_appearance = FeatureMatrix::Identity(dim, dim);
  m.proj_semantics = FeatureMatrix::Identity(dim, dim);
  m.correlations = Vector::Ones(dim);
  m.lambda = 0.0;
  m.mean_appearance = Vector::Zero(dim);
  m.mean_semantics = Vector::Zero(dim);
  return m;
}

CcaModel fit_cca(const FeatureMatrix& app, const FeatureMatrix& sem, Eigen::Index out_dim,
                 std::optional<double> lambda) {
  const Eigen::Index n = app.rows();
  if (sem.rows() != n)
    throw InvalidArgument("fit_cca: row count mismatch, " + std::to_string(n) + " vs " +
                          std::to_string(sem.rows()));
  if (n < 2) throw InvalidArgument("fit_cca: need at least 2 rows");
  const Eigen::Index da = app.cols();
  const Eigen::Index ds = sem.cols();
  if (out_dim < 1 || out_dim > std::min(da, ds))
    throw InvalidArgument("fit_cca: out_dim must be in [1, min(app-dim, sem-dim)]");
  if (lambda && *lambda < 0) throw InvalidArgument("fit_cca: lambda must be non-negative");

  CcaModel model;
  Eigen::MatrixXd xa = centered(app, model.mean_appearance);
  Eigen::MatrixXd xs = centered(sem, model.mean_semantics);

  const double denom = static_cast<double>(n - 1);
  Eigen::MatrixXd c_aa = xa.transpose() * xa / denom;
  Eigen::MatrixXd c_ss = xs.transpose() * xs / denom;
  Eigen::MatrixXd c_as = xa.transpose() * xs / denom;

  if (lambda) {
    model.lambda = *lambda;
  } else {
    // Default regularizer: a tenth of the largest singular value of the
    // cross-covariance, applied to both views.
    Eigen::BDCSVD<Eigen::MatrixXd> cross_svd(c_as);
    model.lambda = 0.1 * cross_svd.singularValues()(0);
  }

  const Eigen::MatrixXd wa = inverse_sqrt(c_aa, model.lambda, "appearance");
  const Eigen::MatrixXd ws = inverse_sqrt(c_ss, model.lambda, "semantics");

  Eigen::BDCSVD<Eigen::MatrixXd> svd(wa * c_as * ws, Eigen::ComputeThinU | Eigen::ComputeThinV);
  model.correlations = svd.singularValues().head(out_dim);
  model.proj_appearance = (wa * svd.matrixU().leftCols(out_dim)).transpose();
  model.proj_semantics = (ws * svd.matrixV().leftCols(out_dim)).transpose();
  fix_signs(model.proj_appearance, &model.proj_semantics);
  return model;
}

Vector project_appearance(const CcaModel& model, const Vector& a) {
  if (a.size() != model.proj_appearance.cols())
    throw InvalidArgument("project_appearance: input has dim " + std::to_string(a.size()) +
                          ", model expects " + std::to_string(model.proj_appearance.cols()));
  return model.proj_appearance * (a - model.mean_appearance);
}

Vector project_semantics(const CcaModel& model, const Vector& s) {
  if (s.size() != model.proj_semantics.cols())
    throw InvalidArgument("project_semantics: input has dim " + std::to_string(s.size()) +
                          ", model expects " + std::to_string(model.proj_semantics.cols()));
  return model.proj_semantics * (s - model.mean_semantics);
}

Vector EmbeddingModel::embed_appearance(const Vector& a) const {
  return project_appearance(cca, appearance_pca ? apply_pca(*appearance_pca, a) : a);
}

Vector EmbeddingModel::embed_semantics(const Vector& s) const {
  return project_semantics(cca, semantics_pca ? apply_pca(*semantics_pca, s) : s);
}

EmbeddingModel EmbeddingModel::identity(Eigen::Index dim) {
  EmbeddingModel m;
  m.cca = CcaModel::identity(dim);
  return m;
}

namespace {

FeatureMatrix as_row(const Vector& v) {
  FeatureMatrix m(1, v.size());
  m.row(0) = v.transpose();
  return m;
}

Vector as_vector(const FeatureMatrix& m) {
  Vector v(m.cols());
  v = m.row(0).transpose();
  return v;
}

void put_pca(MatrixContainer& c, const std::string& prefix, const PcaModel& pca) {
  c.set(prefix + ".mean", as_row(pca.mean));
  c.set(prefix + ".components", pca.components);
  c.set(prefix + ".explained_variance", as_row(pca.explained_variance));
}

PcaModel get_pca(const MatrixContainer& c, const std::string& prefix) {
  PcaModel pca;
  pca.mean = as_vector(c.get(prefix + ".mean"));
  pca.components = c.get(prefix + ".components");
  pca.explained_variance = as_vector(c.get(prefix + ".explained_variance"));
  return pca;
}

}  // namespace

void EmbeddingModel::save(const std::filesystem::path& path) const {
  MatrixContainer c;
  c.meta["kind"] = "embedding-model";
  c.meta["format_version"] = 1;
  c.meta["sign_convention"] = "largest-abs-entry-positive";
  c.meta["lambda"] = cca.lambda;
  c.meta["svs_dim"] = static_cast<std::int64_t>(svs_dim());
  c.meta["appearance_dim"] = static_cast<std::int64_t>(cca.proj_appearance.cols());
  c.meta["semantics_dim"] = static_cast<std::int64_t>(cca.proj_semantics.cols());
  c.set("cca.proj_appearance", cca.proj_appearance);
  c.set("cca.proj_semantics", cca.proj_semantics);
  c.set("cca.correlations", as_row(cca.correlations));
  c.set("cca.mean_appearance", as_row(cca.mean_appearance));
  c.set("cca.mean_semantics", as_row(cca.mean_semantics));
  c.meta["has_appearance_pca"] = appearance_pca.has_value();
  c.meta["has_semantics_pca"] = semantics_pca.has_value();
  if (appearance_pca) put_pca(c, "pca_appearance", *appearance_pca);
  if (semantics_pca) put_pca(c, "pca_semantics", *semantics_pca);
  c.save(path);
}

EmbeddingModel EmbeddingModel::load(const std::filesystem::path& path) {
  const MatrixContainer c = MatrixContainer::load(path);
  if (!c.meta.contains("kind") || c.meta["kind"] != "embedding-model")
    throw FormatError("embedding model: wrong container kind in " + path.string());
  EmbeddingModel m;
  m.cca.proj_appearance = c.get("cca.proj_appearance");
  m.cca.proj_semantics = c.get("cca.proj_semantics");
  m.cca.correlations = as_vector(c.get("cca.correlations"));
  m.cca.mean_appearance = as_vector(c.get("cca.mean_appearance"));
  m.cca.mean_semantics = as_vector(c.get("cca.mean_semantics"));
  m.cca.lambda = c.meta.value("lambda", 0.0);
  if (c.meta.value("has_appearance_pca", false)) m.appearance_pca = get_pca(c, "pca_appearance");
  if (c.meta.value("has_semantics_pca", false)) m.semantics_pca = get_pca(c, "pca_semantics");
  return m;
}

}  // namespace tess
