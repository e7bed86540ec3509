#pragma once

// Dense actor-critic network: tanh trunk, linear actor and critic heads,
// hand-written reverse mode and an Adam optimizer. Everything is float64.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "tgrl/common.hpp"

namespace tgrl::nn {

using Matrix = Eigen::MatrixXd;
using ColVector = Eigen::VectorXd;

struct Dense {
  Matrix weight;  // out x in
  ColVector bias;

  int in() const { return static_cast<int>(weight.cols()); }
  int out() const { return static_cast<int>(weight.rows()); }
};

/// Shared tanh trunk feeding an actor head (logits) and a critic head (value).
/// The same shape doubles as the gradient container.
struct PolicyParams {
  int input_size = 0;
  std::vector<int> hidden;
  int action_count = 0;
  std::vector<Dense> trunk;
  Dense actor;
  Dense critic;

  static PolicyParams zeros(int input_size, std::vector<int> hidden, int action_count) {
    if (input_size <= 0 || action_count <= 0) throw UsageError("PolicyParams: sizes must be positive");
    PolicyParams p;
    p.input_size = input_size;
    p.hidden = std::move(hidden);
    p.action_count = action_count;
    int fan_in = input_size;
    for (int width : p.hidden) {
      if (width <= 0) throw UsageError("PolicyParams: hidden width must be positive");
      p.trunk.push_back({Matrix::Zero(width, fan_in), ColVector::Zero(width)});
      fan_in = width;
    }
    p.actor = {Matrix::Zero(action_count, fan_in), ColVector::Zero(action_count)};
    p.critic = {Matrix::Zero(1, fan_in), ColVector::Zero(1)};
    return p;
  }

  /// Glorot-uniform weights, zero biases.
  static PolicyParams init(int input_size, std::vector<int> hidden, int action_count, std::uint64_t seed) {
    PolicyParams p = zeros(input_size, std::move(hidden), action_count);
    Rng rng(seed);
    p.for_each_layer([&](Dense& layer) {
      const double limit = std::sqrt(6.0 / static_cast<double>(layer.in() + layer.out()));
      for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = rng.uniform(-limit, limit);
    });
    return p;
  }

  PolicyParams zeros_like() const { return zeros(input_size, hidden, action_count); }

  template <typename F>
  void for_each_layer(F&& f) {
    for (auto& layer : trunk) f(layer);
    f(actor);
    f(critic);
  }
  template <typename F>
  void for_each_layer(F&& f) const {
    for (const auto& layer : trunk) f(layer);
    f(actor);
    f(critic);
  }

  /// Flat views over every parameter block, in a fixed order.
  std::vector<std::span<double>> blocks() {
    std::vector<std::span<double>> out;
    for_each_layer([&](Dense& l) {
      out.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
      out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
    });
    return out;
  }
  std::vector<std::span<const double>> blocks() const {
    std::vector<std::span<const double>> out;
    for_each_layer([&](const Dense& l) {
      out.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
      out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
    });
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto b : blocks()) n += b.size();
    return n;
  }

  bool same_shape(const PolicyParams& o) const {
    return input_size == o.input_size && hidden == o.hidden && action_count == o.action_count;
  }

  bool finite() const {
    for (auto b : blocks())
      if (!all_finite(b)) return false;
    return true;
  }

  bool operator==(const PolicyParams& o) const {
    if (!same_shape(o)) return false;
    auto a = blocks();
    auto b = o.blocks();
    for (std::size_t i = 0; i < a.size(); ++i)
      if (!std::equal(a[i].begin(), a[i].end(), b[i].begin())) return false;
    return true;
  }
};

/// Activations for a batch; column j is sample j. activations[0] is the input.
struct ForwardCache {
  std::vector<Matrix> activations;
  Matrix logits;  // A x N
  Matrix values;  // 1 x N

  Eigen::Index batch_size() const { return logits.cols(); }
};

inline ForwardCache forward_batch(const PolicyParams& p, const Matrix& inputs) {
  if (inputs.rows() != p.input_size)
    throw UsageError("forward: input width " + std::to_string(inputs.rows()) + " != " + std::to_string(p.input_size));
  ForwardCache c;
  c.activations.reserve(p.trunk.size() + 1);
  c.activations.push_back(inputs);
  for (const auto& layer : p.trunk) {
    Matrix z = layer.weight * c.activations.back();
    z.colwise() += layer.bias;
    c.activations.push_back(z.array().tanh().matrix());
  }
  const Matrix& top = c.activations.back();
  c.logits = p.actor.weight * top;
  c.logits.colwise() += p.actor.bias;
  c.values = p.critic.weight * top;
  c.values.colwise() += p.critic.bias;
  return c;
}

struct ForwardResult {
  Vector logits;
  double value = 0.0;
};

inline ForwardResult forward(const PolicyParams& p, std::span<const double> input) {
  if (static_cast<int>(input.size()) != p.input_size)
    throw UsageError("forward: input width " + std::to_string(input.size()) + " != " + std::to_string(p.input_size));
  ColVector h = Eigen::Map<const ColVector>(input.data(), static_cast<Eigen::Index>(input.size()));
  for (const auto& layer : p.trunk) h = (layer.weight * h + layer.bias).array().tanh().matrix();
  ColVector logits = p.actor.weight * h + p.actor.bias;
  ForwardResult r;
  r.logits.assign(logits.data(), logits.data() + logits.size());
  r.value = (p.critic.weight * h + p.critic.bias)(0);
  return r;
}

/// Reverse pass given dLoss/dlogits (A x N) and dLoss/dvalue (1 x N).
inline PolicyParams backward(const PolicyParams& p, const ForwardCache& cache, const Matrix& dlogits,
                             const Matrix& dvalues) {
  const auto n = cache.batch_size();
  if (dlogits.rows() != p.action_count || dlogits.cols() != n || dvalues.rows() != 1 || dvalues.cols() != n)
    throw UsageError("backward: upstream gradient shape mismatch");
  PolicyParams g = p.zeros_like();
  const Matrix& top = cache.activations.back();
  g.actor.weight = dlogits * top.transpose();
  g.actor.bias = dlogits.rowwise().sum();
  g.critic.weight = dvalues * top.transpose();
  g.critic.bias = dvalues.rowwise().sum();
  Matrix dh = p.actor.weight.transpose() * dlogits + p.critic.weight.transpose() * dvalues;
  for (std::size_t k = p.trunk.size(); k-- > 0;) {
    const Matrix& out = cache.activations[k + 1];
    const Matrix dz = (dh.array() * (1.0 - out.array().square())).matrix();
    g.trunk[k].weight = dz * cache.activations[k].transpose();
    g.trunk[k].bias = dz.rowwise().sum();
    if (k > 0) dh = p.trunk[k].weight.transpose() * dz;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Distribution helpers

inline Vector log_softmax(std::span<const double> logits) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double z : logits) mx = std::max(mx, z);
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - mx);
  const double lse = mx + std::log(sum);
  Vector out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

inline Vector softmax(std::span<const double> logits) {
  Vector out = log_softmax(logits);
  for (double& x : out) x = std::exp(x);
  return out;
}

/// Shannon entropy in nats; zero-probability entries contribute nothing.
inline double entropy(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

/// Greedy action; ties resolve to the lowest index.
inline int argmax(std::span<const double> xs) {
  return static_cast<int>(std::max_element(xs.begin(), xs.end()) - xs.begin());
}

// ---------------------------------------------------------------------------
// Gradient checking

/// Scalar loss on a single forward output, with its gradient.
struct LossSpec {
  std::function<double(const Vector& logits, double value)> loss;
  std::function<void(const Vector& logits, double value, Vector& dlogits, double& dvalue)> grad;

  static LossSpec constant(double c) {
    return {[c](const Vector&, double) { return c; },
            [](const Vector& z, double, Vector& dz, double& dv) {
              dz.assign(z.size(), 0.0);
              dv = 0.0;
            }};
  }

  static LossSpec cross_entropy(int target) {
    return {[target](const Vector& z, double) { return -log_softmax(z)[target]; },
            [target](const Vector& z, double, Vector& dz, double& dv) {
              dz = softmax(z);
              dz[target] -= 1.0;
              dv = 0.0;
            }};
  }

  /// sum_i a_i * logit_i + b * value
  static LossSpec linear(Vector logit_weights, double value_weight) {
    return {[=](const Vector& z, double v) {
              double s = value_weight * v;
              for (std::size_t i = 0; i < z.size(); ++i) s += logit_weights[i] * z[i];
              return s;
            },
            [=](const Vector&, double, Vector& dz, double& dv) {
              dz = logit_weights;
              dv = value_weight;
            }};
  }

  /// Squared critic error plus cross-entropy, touching both heads.
  static LossSpec actor_critic(int target, double value_target) {
    return {[=](const Vector& z, double v) { return -log_softmax(z)[target] + 0.5 * (v - value_target) * (v - value_target); },
            [=](const Vector& z, double v, Vector& dz, double& dv) {
              dz = softmax(z);
              dz[target] -= 1.0;
              dv = v - value_target;
            }};
  }
};

inline PolicyParams analytic_gradient(const PolicyParams& p, std::span<const double> input, const LossSpec& loss) {
  Matrix x = Eigen::Map<const ColVector>(input.data(), static_cast<Eigen::Index>(input.size()));
  const ForwardCache cache = forward_batch(p, x);
  Vector z(cache.logits.data(), cache.logits.data() + cache.logits.size());
  Vector dz;
  double dv = 0.0;
  loss.grad(z, cache.values(0, 0), dz, dv);
  Matrix dlogits = Eigen::Map<const ColVector>(dz.data(), static_cast<Eigen::Index>(dz.size()));
  Matrix dvalues(1, 1);
  dvalues(0, 0) = dv;
  return backward(p, cache, dlogits, dvalues);
}

/// Max over parameters of |analytic - central difference| / max(1, |analytic|, |numeric|).
inline double grad_check_against(const PolicyParams& params, std::span<const double> input, const LossSpec& loss,
                                 const PolicyParams& analytic, double h = 1e-5) {
  PolicyParams probe = params;
  auto eval = [&] {
    const auto r = forward(probe, input);
    return loss.loss(r.logits, r.value);
  };
  auto probe_blocks = probe.blocks();
  auto grad_blocks = analytic.blocks();
  double worst = 0.0;
  for (std::size_t b = 0; b < probe_blocks.size(); ++b) {
    for (std::size_t i = 0; i < probe_blocks[b].size(); ++i) {
      double& w = probe_blocks[b][i];
      const double saved = w;
      w = saved + h;
      const double up = eval();
      w = saved - h;
      const double down = eval();
      w = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = grad_blocks[b][i];
      const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

inline double grad_check(const PolicyParams& params, std::span<const double> input, const LossSpec& loss,
                         double h = 1e-5) {
  return grad_check_against(params, input, loss, analytic_gradient(params, input, loss), h);
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  AdamConfig config;
  PolicyParams first_moment;
  PolicyParams second_moment;
  long step = 0;

  static OptimizerState for_params(const PolicyParams& p, AdamConfig config = {}) {
    return {config, p.zeros_like(), p.zeros_like(), 0};
  }
};

/// Bias-corrected Adam update in place. A non-finite gradient rejects the
/// update and leaves params and state untouched.
inline void optimizer_step(PolicyParams& params, const PolicyParams& grads, OptimizerState& state) {
  if (!params.same_shape(grads) || !params.same_shape(state.first_moment) || !params.same_shape(state.second_moment))
    throw UsageError("optimizer_step: shape mismatch");
  if (!grads.finite()) throw NumericError("optimizer_step: non-finite gradient");
  const auto& hp = state.config;
  ++state.step;
  const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.step));
  auto w = params.blocks();
  auto g = grads.blocks();
  auto m = state.first_moment.blocks();
  auto v = state.second_moment.blocks();
  for (std::size_t b = 0; b < w.size(); ++b) {
    for (std::size_t i = 0; i < w[b].size(); ++i) {
      m[b][i] = hp.beta1 * m[b][i] + (1.0 - hp.beta1) * g[b][i];
      v[b][i] = hp.beta2 * v[b][i] + (1.0 - hp.beta2) * g[b][i] * g[b][i];
      const double mhat = m[b][i] / c1;
      const double vhat = v[b][i] / c2;
      w[b][i] -= hp.learning_rate * mhat / (std::sqrt(vhat) + hp.epsilon);
    }
  }
}

// ---------------------------------------------------------------------------
// Serialization

inline void to_json(nlohmann::json& j, const PolicyParams& p) {
  nlohmann::json layers = nlohmann::json::array();
  p.for_each_layer([&](const Dense& l) {
    layers.push_back({{"rows", l.out()},
                      {"cols", l.in()},
                      {"weight", std::vector<double>(l.weight.data(), l.weight.data() + l.weight.size())},
                      {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
  });
  j = {{"input_size", p.input_size}, {"hidden", p.hidden}, {"action_count", p.action_count}, {"layers", layers}};
}

inline void from_json(const nlohmann::json& j, PolicyParams& p) {
  p = PolicyParams::zeros(j.at("input_size").get<int>(), j.at("hidden").get<std::vector<int>>(),
                          j.at("action_count").get<int>());
  const auto& layers = j.at("layers");
  std::size_t k = 0;
  if (layers.size() != p.trunk.size() + 2) throw ConfigError("checkpoint: layer count mismatch");
  p.for_each_layer([&](Dense& l) {
    const auto& src = layers.at(k++);
    const auto w = src.at("weight").get<std::vector<double>>();
    const auto b = src.at("bias").get<std::vector<double>>();
    if (src.at("rows").get<int>() != l.out() || src.at("cols").get<int>() != l.in() ||
        w.size() != static_cast<std::size_t>(l.weight.size()) || b.size() != static_cast<std::size_t>(l.bias.size()))
      throw ConfigError("checkpoint: layer shape mismatch");
    std::copy(w.begin(), w.end(), l.weight.data());
    std::copy(b.begin(), b.end(), l.bias.data());
  });
}

}  // namespace tgrl::nn
