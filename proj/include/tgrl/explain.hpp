#pragma once

// LIME-style local explanations for actor checkpoints: perturb one reference
// input, weight samples by an exponential kernel on their distance, fit a
// weighted ridge surrogate and rank features by |coefficient|.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <ostream>
#include <vector>

#include <Eigen/Dense>

#include "tgrl/checkpoint.hpp"
#include "tgrl/guidance.hpp"
#include "tgrl/nn.hpp"
#include "tgrl/teacher.hpp"

namespace tgrl::explain {

enum class FeatureKind { Binary, Continuous };

/// Binary features flip with `flip_prob`; continuous ones are redrawn
/// uniformly in [0,1] with `flip_prob`. Sample 0 is the reference itself.
inline std::vector<Vector> perturb(std::span<const double> reference, int n_samples, double flip_prob,
                                   std::uint64_t seed, std::span<const FeatureKind> kinds = {}) {
  if (n_samples < 2) throw UsageError("perturb: need at least 2 samples");
  if (!kinds.empty() && kinds.size() != reference.size()) throw UsageError("perturb: kinds width mismatch");
  Rng rng(seed);
  std::vector<Vector> out;
  out.reserve(static_cast<std::size_t>(n_samples));
  out.emplace_back(reference.begin(), reference.end());
  for (int s = 1; s < n_samples; ++s) {
    Vector x(reference.begin(), reference.end());
    for (std::size_t f = 0; f < x.size(); ++f) {
      const bool binary = kinds.empty() ? (x[f] == 0.0 || x[f] == 1.0) : kinds[f] == FeatureKind::Binary;
      if (!rng.bernoulli(flip_prob)) continue;
      x[f] = binary ? 1.0 - x[f] : rng.uniform();
    }
    out.push_back(std::move(x));
  }
  return out;
}

/// L1 distance; equals the Hamming distance on binary vectors.
inline double distance(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += std::abs(a[i] - b[i]);
  return d;
}

inline double default_kernel_width(std::size_t features) { return 0.75 * std::sqrt(static_cast<double>(features)); }

inline double kernel(double distance, double width) { return std::exp(-(distance * distance) / (width * width)); }

struct LocalModel {
  Vector coefficients;
  double intercept = 0.0;
};

/// Weighted ridge regression; the intercept is not penalised.
inline LocalModel fit_local(const std::vector<Vector>& samples, std::span<const double> outputs,
                            std::span<const double> weights, double ridge = 1e-3) {
  if (samples.empty()) throw UsageError("fit_local: no samples");
  if (outputs.size() != samples.size() || weights.size() != samples.size())
    throw UsageError("fit_local: samples/outputs/weights length mismatch");
  const auto n = static_cast<Eigen::Index>(samples.size());
  const auto f = static_cast<Eigen::Index>(samples.front().size());
  Eigen::MatrixXd a(n, f + 1);
  Eigen::VectorXd y(n), w(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (static_cast<Eigen::Index>(samples[i].size()) != f) throw UsageError("fit_local: ragged samples");
    for (Eigen::Index j = 0; j < f; ++j) a(i, j) = samples[i][j];
    a(i, f) = 1.0;
    y(i) = outputs[i];
    w(i) = weights[i];
  }
  Eigen::MatrixXd normal = a.transpose() * w.asDiagonal() * a;
  normal.diagonal().head(f).array() += ridge;
  const Eigen::VectorXd rhs = a.transpose() * (w.array() * y.array()).matrix();
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(normal);
  const Eigen::VectorXd beta = ldlt.solve(rhs);
  const double residual = (normal * beta - rhs).norm();
  const auto pivots = ldlt.vectorD().cwiseAbs();
  if (ldlt.info() != Eigen::Success || !(pivots.minCoeff() > 1e-12 * pivots.maxCoeff()) || !beta.allFinite() || residual > 1e-6 * std::max(1.0, rhs.norm()))
    throw NumericError("fit_local: normal equations are singular");
  LocalModel m;
  m.coefficients.assign(beta.data(), beta.data() + f);
  m.intercept = beta(f);
  return m;
}

// ---------------------------------------------------------------------------
// Checkpoint attribution

enum class ExplainTarget {
  ArgmaxAction,   // probability of the policy's own greedy action at the reference
  TeacherAction,  // probability of the teacher's recommended action
};

struct ExplainConfig {
  int n_samples = 2000;
  double flip_prob = 0.1;
  double ridge = 1e-3;
  std::optional<double> kernel_width;  // default 0.75 * sqrt(F)
  std::uint64_t seed = 0;
  ExplainTarget target = ExplainTarget::ArgmaxAction;
};

enum class Direction { Towards, Away };

struct FeatureAttribution {
  int index = 0;
  double weight = 0.0;
  int rank = 0;  // 1 = largest |weight|
  Direction direction = Direction::Away;
  bool is_teacher_feature = false;
};

struct Attribution {
  std::vector<FeatureAttribution> features;
  int explained_action = 0;
  double explained_output = 0.0;  // at the reference
  std::optional<int> reco_action;
  bool reco_in_top4 = false;
  int reco_rank = 0;  // 1-based rank of the recommendation in the policy; 0 when unknown

  std::vector<const FeatureAttribution*> teacher_features() const {
    std::vector<const FeatureAttribution*> out;
    for (const auto& f : features)
      if (f.is_teacher_feature) out.push_back(&f);
    return out;
  }
  bool operator==(const Attribution& o) const {
    if (features.size() != o.features.size()) return false;
    for (std::size_t i = 0; i < features.size(); ++i) {
      const auto &a = features[i], &b = o.features[i];
      if (a.index != b.index || a.weight != b.weight || a.rank != b.rank || a.direction != b.direction ||
          a.is_teacher_feature != b.is_teacher_feature)
        return false;
    }
    return explained_action == o.explained_action && explained_output == o.explained_output &&
           reco_action == o.reco_action && reco_in_top4 == o.reco_in_top4 && reco_rank == o.reco_rank;
  }
};

/// Ranks by descending |weight|, ties to the lower feature index.
inline void assign_ranks(std::vector<FeatureAttribution>& features) {
  std::vector<std::size_t> order(features.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(features[a].weight) > std::abs(features[b].weight);
  });
  for (std::size_t r = 0; r < order.size(); ++r) features[order[r]].rank = static_cast<int>(r) + 1;
}

/// 1-based position of `action` when actions are sorted by descending probability (ties to lower index).
inline int action_rank(std::span<const double> probs, int action) {
  int rank = 1;
  for (int a = 0; a < static_cast<int>(probs.size()); ++a) {
    if (a == action) continue;
    if (probs[a] > probs[action] || (probs[a] == probs[action] && a < action)) ++rank;
  }
  return rank;
}

/// Recovers the recommended action from an augmented input's teacher block.
inline int decode_teacher_block(std::span<const double> block, guidance::Encoding e, int action_count) {
  switch (e) {
    case guidance::Encoding::OneHot: return nn::argmax(block);
    case guidance::Encoding::Float: return static_cast<int>(std::lround(block[0] * (action_count - 1)));
    case guidance::Encoding::Binary: {
      int a = 0;
      for (double bit : block) a = (a << 1) | (bit >= 0.5 ? 1 : 0);
      return std::min(a, action_count - 1);
    }
  }
  return 0;
}

/// Explains one actor at a fixed reference input (agent width, i.e. already
/// augmented for feature-augment checkpoints). The teacher, when given,
/// supplies the recommendation from the unaugmented prefix.
inline Attribution explain_checkpoint(const Checkpoint& ckpt, std::span<const double> reference,
                                      const teacher::Teacher* teacher, const ExplainConfig& cfg) {
  const auto& params = ckpt.params;
  const int width = params.input_size;
  if (static_cast<int>(reference.size()) != width)
    throw UsageError("explain: reference width " + std::to_string(reference.size()) + " != " + std::to_string(width));
  const int actions = params.action_count;
  const int aug = ckpt.augmented() ? guidance::augment_width(ckpt.encoding(), actions, ckpt.meta.binary_width) : 0;
  const int raw_width = width - aug;

  Attribution out;
  const Vector ref_probs = nn::softmax(nn::forward(params, reference).logits);
  if (teacher) {
    const env::Observation prefix(reference.begin(), reference.begin() + raw_width);
    out.reco_action = teacher->recommend(prefix).action;
  } else if (aug > 0) {
    out.reco_action = decode_teacher_block(reference.subspan(raw_width), ckpt.encoding(), actions);
  }
  if (out.reco_action) {
    out.reco_rank = action_rank(ref_probs, *out.reco_action);
    out.reco_in_top4 = out.reco_rank <= 4;
  }
  if (cfg.target == ExplainTarget::TeacherAction && !out.reco_action)
    throw UsageError("explain: teacher-action target needs a recommendation");
  out.explained_action = cfg.target == ExplainTarget::TeacherAction ? *out.reco_action : nn::argmax(ref_probs);
  out.explained_output = ref_probs[out.explained_action];

  std::vector<FeatureKind> kinds(static_cast<std::size_t>(width), FeatureKind::Binary);
  if (aug > 0 && ckpt.encoding() == guidance::Encoding::Float) kinds.back() = FeatureKind::Continuous;
  for (int i = 0; i < raw_width; ++i)
    if (reference[i] != 0.0 && reference[i] != 1.0) kinds[i] = FeatureKind::Continuous;

  const auto samples = perturb(reference, cfg.n_samples, cfg.flip_prob, cfg.seed, kinds);
  const double kw = cfg.kernel_width.value_or(default_kernel_width(reference.size()));
  nn::Matrix batch(width, static_cast<Eigen::Index>(samples.size()));
  Vector weights(samples.size());
  for (std::size_t s = 0; s < samples.size(); ++s) {
    for (int i = 0; i < width; ++i) batch(i, static_cast<Eigen::Index>(s)) = samples[s][i];
    weights[s] = kernel(distance(samples[s], reference), kw);
  }
  const auto cache = nn::forward_batch(params, batch);
  Vector outputs(samples.size());
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const auto col = cache.logits.col(static_cast<Eigen::Index>(s));
    const Vector z(col.data(), col.data() + actions);
    outputs[s] = nn::softmax(z)[out.explained_action];
  }

  const auto model = fit_local(samples, outputs, weights, cfg.ridge);
  for (int i = 0; i < width; ++i) {
    const double wgt = model.coefficients[i];
    out.features.push_back({i, wgt, 0, wgt > 0.0 ? Direction::Towards : Direction::Away, i >= raw_width});
  }
  assign_ranks(out.features);
  return out;
}

/// Reference input: the agent's view after `steps` greedy teacher steps from a
/// seeded reset (steps = 0 gives the reset observation).
inline Vector reference_input(const env::EnvConfig& cfg, std::uint64_t seed, int steps, const Checkpoint& ckpt,
                              const teacher::Teacher* teacher) {
  env::NetworkDefenseEnv environment(cfg);
  auto obs = environment.reset(seed);
  for (int k = 0; k < steps && !environment.done(); ++k) {
    const int a = teacher ? teacher->recommend(obs).action : 0;
    obs = environment.step(a).observation;
  }
  if (!ckpt.augmented()) return obs;
  if (!teacher) throw UsageError("explain: feature-augment checkpoint needs a teacher to build its input");
  return guidance::augment_observation(obs, teacher->recommend(obs).action, ckpt.encoding(), cfg.action_count(),
                                       ckpt.meta.binary_width);
}

inline void write_attribution_csv(std::ostream& out, const Attribution& a) {
  out << "feature_index,weight,rank,direction,is_teacher_feature,reco_in_top4,reco_rank\n";
  char buf[64];
  for (const auto& f : a.features) {
    std::snprintf(buf, sizeof buf, "%.17g", f.weight);
    out << f.index << ',' << buf << ',' << f.rank << ',' << (f.direction == Direction::Towards ? "Towards" : "Away")
        << ',' << (f.is_teacher_feature ? 1 : 0) << ',' << (a.reco_in_top4 ? 1 : 0) << ',' << a.reco_rank << '\n';
  }
}

}  // namespace tgrl::explain
