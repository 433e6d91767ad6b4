/*
 * tessellate - temporal semantic transfer for video clip sequences
 *
 * Licensed under the terms of the Apache 2.0 License.
 * See LICENSE file in the project root for terms.
 */
#include "tessellate/predictor.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "tessellate/error.hpp"
#include "tessellate/matrix_io.hpp"
#include "tessellate/rng.hpp"

namespace tess {

namespace {

// Stable logistic: never exponentiates a positive argument.
double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

Vector sigmoid_v(const Vector& z) { return z.unaryExpr([](double v) { return sigmoid(v); }); }
Vector tanh_v(const Vector& z) { return z.array().tanh().matrix(); }

struct LayerCache {
  Vector i, f, g, o;  // post-activation gates
  Vector c, tanh_c, h;
};

struct StepCache {
  Vector x;  // concatenated (prev semantics, current appearance)
  LayerCache l1, l2;
  Vector err;  // prediction minus target (training only)
};

// One layer forward. h_prev/c_prev are the previous step's state.
LayerCache layer_forward(const LstmLayer& L, const Vector& x,
                         const Vector& h_prev, const Vector& c_prev) {
  const Eigen::Index H = L.hidden();
  const Vector a = L.w_x * x + L.w_h * h_prev + L.b;
  LayerCache c;
  c.i = sigmoid_v(a.segment(0, H));
  c.f = sigmoid_v(a.segment(H, H));
  c.g = tanh_v(a.segment(2 * H, H));
  c.o = sigmoid_v(a.segment(3 * H, H));
  c.c = c.f.cwiseProduct(c_prev) + c.i.cwiseProduct(c.g);
  c.tanh_c = tanh_v(c.c);
  c.h = c.o.cwiseProduct(c.tanh_c);
  return c;
}

// One layer of backprop at one step. dh is the full incoming h-gradient,
// dc_rec the recurrent cell gradient from step t+1. Accumulates parameter
// gradients and returns the gradients flowing to the input and to step t-1.
void layer_backward(const LstmLayer& L, const LayerCache& cache,
                    const Vector& x, const Vector& h_prev, const Vector& c_prev,
                    const Vector& dh, const Vector& dc_rec, LstmLayer& grad,
                    Vector& dx, Vector& dh_prev, Vector& dc_prev) {
  const Eigen::Index H = L.hidden();
  const Vector dc =
      (dh.array() * cache.o.array() * (1.0 - cache.tanh_c.array().square()))
          .matrix() +
      dc_rec;
  Vector da(4 * H);
  da.segment(0, H) = (dc.array() * cache.g.array() * cache.i.array() *
                      (1.0 - cache.i.array()))
                         .matrix();
  da.segment(H, H) = (dc.array() * c_prev.array() * cache.f.array() *
                      (1.0 - cache.f.array()))
                         .matrix();
  da.segment(2 * H, H) =
      (dc.array() * cache.i.array() * (1.0 - cache.g.array().square())).matrix();
  da.segment(3 * H, H) = (dh.array() * cache.tanh_c.array() * cache.o.array() *
                          (1.0 - cache.o.array()))
                             .matrix();
  grad.w_x.noalias() += da * x.transpose();
  grad.w_h.noalias() += da * h_prev.transpose();
  grad.b += da;
  dx.noalias() = L.w_x.transpose() * da;
  dh_prev.noalias() = L.w_h.transpose() * da;
  dc_prev = dc.cwiseProduct(cache.f);
}

void check_model(const PredictorModel& m) {
  if (m.layer1.w_x.rows() != 4 * m.layer1.hidden() ||
      m.layer2.w_x.rows() != 4 * m.layer2.hidden() ||
      m.layer1.b.size() != m.layer1.w_x.rows() ||
      m.layer2.b.size() != m.layer2.w_x.rows())
    throw InvalidArgument("predictor: gate tensor shapes are inconsistent");
  if (m.layer2.input_dim() != m.layer1.hidden())
    throw InvalidArgument("predictor: layer2 input dim must equal layer1 hidden dim");
  if (m.output_proj.cols() != m.layer2.hidden() ||
      m.output_bias.size() != m.output_proj.rows())
    throw InvalidArgument("predictor: output projection shape is inconsistent");
  if (m.layer1.input_dim() != 2 * m.svs_dim())
    throw InvalidArgument("predictor: layer1 expects the concatenated 2 x svs-dim input");
}

PredictorModel zeros_like(const PredictorModel& m) {
  PredictorModel z;
  z.layer1.w_x = FeatureMatrix::Zero(m.layer1.w_x.rows(), m.layer1.w_x.cols());
  z.layer1.w_h = FeatureMatrix::Zero(m.layer1.w_h.rows(), m.layer1.w_h.cols());
  z.layer1.b = Vector::Zero(m.layer1.b.size());
  z.layer2.w_x = FeatureMatrix::Zero(m.layer2.w_x.rows(), m.layer2.w_x.cols());
  z.layer2.w_h = FeatureMatrix::Zero(m.layer2.w_h.rows(), m.layer2.w_h.cols());
  z.layer2.b = Vector::Zero(m.layer2.b.size());
  z.output_proj = FeatureMatrix::Zero(m.output_proj.rows(), m.output_proj.cols());
  z.output_bias = Vector::Zero(m.output_bias.size());
  return z;
}

// Applies fn to the corresponding tensors of up to four model-shaped carriers.
template <typename F>
void zip_tensors(PredictorModel& a, PredictorModel& b, PredictorModel& c,
                 PredictorModel& d, F&& fn) {
  fn(a.layer1.w_x, b.layer1.w_x, c.layer1.w_x, d.layer1.w_x);
  fn(a.layer1.w_h, b.layer1.w_h, c.layer1.w_h, d.layer1.w_h);
  fn(a.layer1.b, b.layer1.b, c.layer1.b, d.layer1.b);
  fn(a.layer2.w_x, b.layer2.w_x, c.layer2.w_x, d.layer2.w_x);
  fn(a.layer2.w_h, b.layer2.w_h, c.layer2.w_h, d.layer2.w_h);
  fn(a.layer2.b, b.layer2.b, c.layer2.b, d.layer2.b);
  fn(a.output_proj, b.output_proj, c.output_proj, d.output_proj);
  fn(a.output_bias, b.output_bias, c.output_bias, d.output_bias);
}

double grad_norm(PredictorModel& g) {
  double sq = 0.0;
  PredictorModel& u = g;
  zip_tensors(g, u, u, u, [&sq](auto& t, auto&, auto&, auto&) { sq += t.squaredNorm(); });
  return std::sqrt(sq);
}

// Forward (and optionally backward) over one video. Returns the sum of
// squared errors; when grads is set, accumulates d(scale * sse)/d(params).
double video_pass(const PredictorModel& model, const FeatureMatrix& sem,
                  const FeatureMatrix& app, std::size_t begin, std::size_t end,
                  double scale, PredictorModel* grads) {
  const Eigen::Index d = model.svs_dim();
  const Eigen::Index h1 = model.layer1.hidden();
  const Eigen::Index h2 = model.layer2.hidden();
  const std::size_t steps = end - begin;
  std::vector<StepCache> cache(steps);

  const Vector zero_sem = Vector::Zero(d);
  const Vector zh1 = Vector::Zero(h1), zc1 = Vector::Zero(h1);
  const Vector zh2 = Vector::Zero(h2), zc2 = Vector::Zero(h2);

  double sse = 0.0;
  for (std::size_t t = 0; t < steps; ++t) {
    const Eigen::Index row = static_cast<Eigen::Index>(begin + t);
    StepCache& s = cache[t];
    s.x.resize(2 * d);
    s.x.head(d) = t == 0 ? zero_sem : Vector(sem.row(row - 1).transpose());
    s.x.tail(d) = app.row(row).transpose();
    const Vector& h1p = t == 0 ? zh1 : cache[t - 1].l1.h;
    const Vector& c1p = t == 0 ? zc1 : cache[t - 1].l1.c;
    const Vector& h2p = t == 0 ? zh2 : cache[t - 1].l2.h;
    const Vector& c2p = t == 0 ? zc2 : cache[t - 1].l2.c;
    s.l1 = layer_forward(model.layer1, s.x, h1p, c1p);
    s.l2 = layer_forward(model.layer2, s.l1.h, h2p, c2p);
    s.err = model.output_proj * s.l2.h + model.output_bias -
            sem.row(row).transpose();
    sse += s.err.squaredNorm();
  }
  if (!std::isfinite(sse))
    throw NumericFailure("predictor: non-finite activation during forward pass");
  if (grads == nullptr) return sse;

  Vector dh1_rec = Vector::Zero(h1), dc1_rec = Vector::Zero(h1);
  Vector dh2_rec = Vector::Zero(h2), dc2_rec = Vector::Zero(h2);
  Vector dx2(h1), dx1(2 * d), dh_prev(h1), dc_prev(h1);
  for (std::size_t t = steps; t-- > 0;) {
    const StepCache& s = cache[t];
    const Vector dpred = (2.0 * scale) * s.err;
    grads->output_proj.noalias() += dpred * s.l2.h.transpose();
    grads->output_bias += dpred;
    const Vector dh2 = model.output_proj.transpose() * dpred + dh2_rec;
    const Vector h2_prev = t == 0 ? Vector(Vector::Zero(h2)) : cache[t - 1].l2.h;
    const Vector c2_prev = t == 0 ? Vector(Vector::Zero(h2)) : cache[t - 1].l2.c;
    layer_backward(model.layer2, s.l2, s.l1.h, h2_prev, c2_prev, dh2, dc2_rec,
                   grads->layer2, dx2, dh2_rec, dc2_rec);
    const Vector dh1 = dx2 + dh1_rec;
    const Vector h1_prev = t == 0 ? Vector(Vector::Zero(h1)) : cache[t - 1].l1.h;
    const Vector c1_prev = t == 0 ? Vector(Vector::Zero(h1)) : cache[t - 1].l1.c;
    layer_backward(model.layer1, s.l1, s.x, h1_prev, c1_prev, dh1, dc1_rec,
                   grads->layer1, dx1, dh1_rec, dc1_rec);
  }
  return sse;
}

void check_training_corpus(const ReferenceCorpus& corpus) {
  if (!corpus.svs_appearance)
    throw InvalidArgument("train_predictor: corpus has no appearance matrix");
  if (corpus.num_transitions() == 0)
    throw InvalidArgument("train_predictor: corpus has no within-video transitions");
}

}  // namespace

LstmState PredictorModel::zero_state() const {
  LstmState s;
  s.h1 = Vector::Zero(layer1.hidden());
  s.c1 = Vector::Zero(layer1.hidden());
  s.h2 = Vector::Zero(layer2.hidden());
  s.c2 = Vector::Zero(layer2.hidden());
  return s;
}

void PredictorModel::save(const std::filesystem::path& path) const {
  MatrixContainer c;
  c.meta["kind"] = "predictor-model";
  c.meta["format_version"] = 1;
  c.meta["svs_dim"] = svs_dim();
  c.meta["hidden"] = layer1.hidden();
  c.set("layer1.w_x", layer1.w_x);
  c.set("layer1.w_h", layer1.w_h);
  c.set("layer1.b", FeatureMatrix(layer1.b));
  c.set("layer2.w_x", layer2.w_x);
  c.set("layer2.w_h", layer2.w_h);
  c.set("layer2.b", FeatureMatrix(layer2.b));
  c.set("output_proj", output_proj);
  c.set("output_bias", FeatureMatrix(output_bias));
  c.save(path);
}

PredictorModel PredictorModel::load(const std::filesystem::path& path) {
  const MatrixContainer c = MatrixContainer::load(path);
  if (!c.meta.contains("kind") || c.meta["kind"] != "predictor-model")
    throw FormatError("predictor: wrong container kind in " + path.string());
  PredictorModel m;
  m.layer1.w_x = c.get("layer1.w_x");
  m.layer1.w_h = c.get("layer1.w_h");
  m.layer1.b = c.get("layer1.b").col(0);
  m.layer2.w_x = c.get("layer2.w_x");
  m.layer2.w_h = c.get("layer2.w_h");
  m.layer2.b = c.get("layer2.b").col(0);
  m.output_proj = c.get("output_proj");
  m.output_bias = c.get("output_bias").col(0);
  check_model(m);
  return m;
}

PredictorModel init_predictor(Eigen::Index svs_dim, Eigen::Index hidden,
                              std::uint64_t seed) {
  if (svs_dim < 1 || hidden < 1)
    throw InvalidArgument("init_predictor: svs_dim and hidden must be >= 1");
  Rng rng(seed);
  const auto fill = [&rng](FeatureMatrix& m, Eigen::Index rows, Eigen::Index cols,
                           Eigen::Index fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    m.resize(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c)
        m(r, c) = bound * (2.0 * rng.uniform() - 1.0);
  };
  PredictorModel m;
  fill(m.layer1.w_x, 4 * hidden, 2 * svs_dim, 2 * svs_dim);
  fill(m.layer1.w_h, 4 * hidden, hidden, hidden);
  m.layer1.b = Vector::Zero(4 * hidden);
  m.layer1.b.segment(hidden, hidden).setOnes();  // forget gates start open
  fill(m.layer2.w_x, 4 * hidden, hidden, hidden);
  fill(m.layer2.w_h, 4 * hidden, hidden, hidden);
  m.layer2.b = Vector::Zero(4 * hidden);
  m.layer2.b.segment(hidden, hidden).setOnes();
  fill(m.output_proj, svs_dim, hidden, hidden);
  m.output_bias = Vector::Zero(svs_dim);
  return m;
}

std::pair<Vector, LstmState> lstm_step(
    const PredictorModel& model, const Eigen::Ref<const Vector>& prev_semantics,
    const Eigen::Ref<const Vector>& cur_appearance, const LstmState& state) {
  check_model(model);
  const Eigen::Index d = model.svs_dim();
  if (prev_semantics.size() != d || cur_appearance.size() != d)
    throw InvalidArgument("lstm_step: input vectors must match svs_dim");
  if (state.h1.size() != model.layer1.hidden() ||
      state.c1.size() != model.layer1.hidden() ||
      state.h2.size() != model.layer2.hidden() ||
      state.c2.size() != model.layer2.hidden())
    throw InvalidArgument("lstm_step: state dimensions do not match the model");

  Vector x(2 * d);
  x.head(d) = prev_semantics;
  x.tail(d) = cur_appearance;
  const LayerCache l1 = layer_forward(model.layer1, x, state.h1, state.c1);
  const LayerCache l2 = layer_forward(model.layer2, l1.h, state.h2, state.c2);
  Vector pred = model.output_proj * l2.h + model.output_bias;
  if (!pred.allFinite())
    throw NumericFailure("lstm_step: prediction has non-finite entries");
  LstmState next;
  next.h1 = l1.h;
  next.c1 = l1.c;
  next.h2 = l2.h;
  next.c2 = l2.c;
  return {std::move(pred), std::move(next)};
}

PredictorGradients predictor_gradients(const PredictorModel& model,
                                       const ReferenceCorpus& corpus) {
  check_model(model);
  check_training_corpus(corpus);
  if (corpus.svs_dim() != model.svs_dim())
    throw InvalidArgument("predictor_gradients: corpus svs_dim does not match model");

  std::size_t total = 0;
  for (const VideoRange& v : corpus.video_boundaries) total += v.end - v.begin;
  const double denom =
      static_cast<double>(total) * static_cast<double>(corpus.svs_dim());

  PredictorGradients out;
  out.grads = zeros_like(model);
  double sse = 0.0;
  for (const VideoRange& v : corpus.video_boundaries)
    sse += video_pass(model, corpus.svs_semantics, *corpus.svs_appearance,
                      v.begin, v.end, 1.0 / denom, &out.grads);
  out.loss = sse / denom;
  return out;
}

TrainingResult train_predictor(const ReferenceCorpus& corpus,
                               const TrainingConfig& config) {
  if (!(config.learning_rate > 0.0))
    throw InvalidArgument("train_predictor: learning_rate must be > 0");
  if (config.epochs < 1) throw InvalidArgument("train_predictor: epochs must be >= 1");
  if (!(config.grad_clip > 0.0))
    throw InvalidArgument("train_predictor: grad_clip must be > 0");
  if (config.hidden < 1) throw InvalidArgument("train_predictor: hidden must be >= 1");
  check_training_corpus(corpus);

  TrainingResult result;
  result.model = init_predictor(corpus.svs_dim(), config.hidden, config.seed);

  PredictorModel grads = zeros_like(result.model);
  PredictorModel m1 = zeros_like(result.model);  // Adam first moment
  PredictorModel m2 = zeros_like(result.model);  // Adam second moment
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

  std::size_t total = 0;
  for (const VideoRange& v : corpus.video_boundaries) total += v.end - v.begin;
  const double denom =
      static_cast<double>(total) * static_cast<double>(corpus.svs_dim());

  long step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double epoch_sse = 0.0;
    for (const VideoRange& v : corpus.video_boundaries) {
      const double scale = 1.0 / (static_cast<double>(v.end - v.begin) *
                                  static_cast<double>(corpus.svs_dim()));
      zip_tensors(grads, m1, m2, result.model,
                  [](auto& g, auto&, auto&, auto&) { g.setZero(); });
      epoch_sse += video_pass(result.model, corpus.svs_semantics,
                              *corpus.svs_appearance, v.begin, v.end, scale,
                              &grads);
      const double norm = grad_norm(grads);
      if (norm > config.grad_clip) {
        const double shrink = config.grad_clip / norm;
        zip_tensors(grads, m1, m2, result.model,
                    [shrink](auto& g, auto&, auto&, auto&) { g *= shrink; });
      }
      ++step;
      const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
      const double lr = config.learning_rate;
      zip_tensors(grads, m1, m2, result.model,
                  [&](auto& g, auto& mom1, auto& mom2, auto& param) {
                    mom1 = kBeta1 * mom1 + (1.0 - kBeta1) * g;
                    mom2.array() =
                        kBeta2 * mom2.array() + (1.0 - kBeta2) * g.array().square();
                    param.array() -= lr * (mom1.array() / bc1) /
                                     ((mom2.array() / bc2).sqrt() + kEps);
                  });
    }
    const double loss = epoch_sse / denom;
    if (!std::isfinite(loss))
      throw NumericFailure("train_predictor: loss became non-finite");
    result.loss_history.push_back(loss);
  }
  return result;
}

TessellationPath tessellate_supervised(const QuerySequence& query,
                                       const ReferenceCorpus& corpus,
                                       const PredictorModel& model,
                                       int r_prime, double rel_threshold) {
  check_model(model);
  if (model.svs_dim() != corpus.svs_dim())
    throw InvalidArgument("tessellate_supervised: model svs_dim does not match corpus");
  const std::vector<CandidateSet> candidates =
      knn_candidates(query, corpus, r_prime, rel_threshold);
  const FeatureMatrix& sem = corpus.svs_semantics;

  TessellationPath path;
  path.mode = TessellationMode::Supervised;
  LstmState state = model.zero_state();
  Vector prev = Vector::Zero(corpus.svs_dim());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    auto [pred, next_state] = lstm_step(
        model, prev, query.svs_appearance.row(static_cast<Eigen::Index>(i)).transpose(),
        state);
    state = std::move(next_state);
    const Candidate* best = nullptr;
    double best_d = std::numeric_limits<double>::infinity();
    for (const Candidate& c : candidates[i]) {
      const double dist =
          (sem.row(static_cast<Eigen::Index>(c.ref_id)).transpose() - pred)
              .squaredNorm();
      if (dist < best_d || (dist == best_d && best != nullptr &&
                            c.ref_id < best->ref_id)) {
        best_d = dist;
        best = &c;
      }
    }
    path.assignments.push_back(best->ref_id);
    path.clip_energies.push_back(best->energy);
    prev = sem.row(static_cast<Eigen::Index>(best->ref_id)).transpose();
  }
  path.path_energy = joint_path_energy(path.clip_energies, path.assignments, sem);
  return path;
}

}  // namespace tess
