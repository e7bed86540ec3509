#pragma once

// Proximal policy optimisation with hook points for teacher guidance:
// observation augmentation, policy masking, reward shaping and the
// auxiliary teacher loss.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include <json.hpp>

#include "tgrl/checkpoint.hpp"
#include "tgrl/env.hpp"
#include "tgrl/guidance.hpp"
#include "tgrl/nn.hpp"
#include "tgrl/teacher.hpp"

namespace tgrl::ppo {

using guidance::GuidanceConfig;
using teacher::Teacher;
using teacher::TeacherRecommendation;

struct TrainConfig {
  double gamma = 0.99;
  double lambda = 0.95;
  double clip = 0.2;
  int epochs = 4;
  double learning_rate = 5e-3;
  int episodes_per_interval = 8;
  int total_episodes = 500;
  double entropy_coeff_base = 0.005;
  double critic_coeff = 0.5;
  std::vector<int> hidden{64, 64};

  int interval_of(int episode_index) const { return episode_index / episodes_per_interval; }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"gamma", c.gamma},
       {"lambda", c.lambda},
       {"clip", c.clip},
       {"epochs", c.epochs},
       {"lr", c.learning_rate},
       {"episodes_per_interval", c.episodes_per_interval},
       {"total_episodes", c.total_episodes},
       {"entropy_coeff_base", c.entropy_coeff_base},
       {"critic_coeff", c.critic_coeff},
       {"hidden", c.hidden}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c = TrainConfig{};
  c.gamma = j.value("gamma", c.gamma);
  c.lambda = j.value("lambda", c.lambda);
  c.clip = j.value("clip", c.clip);
  c.epochs = j.value("epochs", c.epochs);
  c.learning_rate = j.value("lr", c.learning_rate);
  c.episodes_per_interval = j.value("episodes_per_interval", c.episodes_per_interval);
  c.total_episodes = j.value("total_episodes", c.total_episodes);
  c.entropy_coeff_base = j.value("entropy_coeff_base", c.entropy_coeff_base);
  c.critic_coeff = j.value("critic_coeff", c.critic_coeff);
  c.hidden = j.value("hidden", c.hidden);
  if (c.episodes_per_interval <= 0 || c.epochs < 0 || c.total_episodes < 0)
    throw ConfigError("training config: episodes_per_interval must be positive, epochs/total_episodes non-negative");
}

struct Transition {
  Vector input;  // agent observation, augmented when feature augmentation is active
  int action = 0;
  double behavior_log_prob = 0.0;  // under the distribution actually sampled (masked if masking)
  double reward = 0.0;             // unmodified environment reward
  double shaped_reward = 0.0;
  double value = 0.0;
  bool done = false;
  std::optional<TeacherRecommendation> reco;
  double c3 = 1.0;  // mask coefficient in force when the action was sampled
};

struct EpisodeRecord {
  int episode = 0;  // 1-based
  int interval = 0;
  std::uint64_t env_seed = 0;
  double unmodified_return = 0.0;
  double shaped_return = 0.0;
  std::vector<int> actions;
};

struct Rollout {
  std::vector<Transition> transitions;
  std::vector<EpisodeRecord> episodes;
};

/// Builds the agent's input from the raw observation.
inline Vector agent_input(const GuidanceConfig& g, const env::Observation& obs, const TeacherRecommendation* reco,
                          int action_count) {
  if (!g.augments()) return obs;
  if (!reco) throw UsageError("feature augmentation needs a teacher recommendation");
  return guidance::augment_observation(obs, reco->action, g.encoding, action_count, g.binary_width);
}

/// Test hook: replaces the sampled action (behavior log-prob is left as sampled).
using ActionOverride = std::function<int(const TeacherRecommendation* reco, int sampled)>;

struct RolloutContext {
  const GuidanceConfig& guidance;
  const Teacher* teacher = nullptr;
  int interval = 0;
  int first_episode = 1;
  Rng* sampler = nullptr;
  Rng* env_seeds = nullptr;
  ActionOverride override_action;
};

inline Rollout collect_rollout(env::NetworkDefenseEnv& environment, const nn::PolicyParams& params, int episodes,
                               const RolloutContext& ctx) {
  const auto& g = ctx.guidance;
  if (g.uses_teacher() && !ctx.teacher) throw UsageError("guidance technique requires a teacher");
  if (!ctx.sampler || !ctx.env_seeds) throw UsageError("collect_rollout: missing random streams");
  const int actions = environment.action_count();
  const double c3 = g.c3_at(ctx.interval);
  Rollout out;
  for (int e = 0; e < episodes; ++e) {
    EpisodeRecord rec;
    rec.episode = ctx.first_episode + e;
    rec.interval = ctx.interval;
    rec.env_seed = ctx.env_seeds->next();
    env::Observation obs = environment.reset(rec.env_seed);
    bool done = false;
    while (!done) {
      Transition t;
      if (g.uses_teacher()) t.reco = ctx.teacher->recommend(obs);
      const TeacherRecommendation* reco = t.reco ? &*t.reco : nullptr;
      t.input = agent_input(g, obs, reco, actions);
      const auto fwd = nn::forward(params, t.input);
      t.value = fwd.value;
      Vector log_probs;
      if (g.masks() && c3 < 1.0) {
        t.c3 = c3;
        log_probs = nn::log_softmax(guidance::mask_logits(fwd.logits, *reco, c3, g.mask_mode()));
      } else {
        log_probs = nn::log_softmax(fwd.logits);
      }
      Vector probs(log_probs.size());
      std::transform(log_probs.begin(), log_probs.end(), probs.begin(), [](double lp) { return std::exp(lp); });
      t.action = static_cast<int>(ctx.sampler->categorical(probs));
      t.behavior_log_prob = log_probs[t.action];
      if (ctx.override_action) t.action = ctx.override_action(reco, t.action);

      const auto step = environment.step(t.action);
      t.reward = step.reward;
      t.shaped_reward = g.shapes_reward() ? guidance::shape_reward(step.reward, t.action, *reco, g, ctx.interval).shaped
                                          : step.reward;
      t.done = step.done;
      rec.unmodified_return += t.reward;
      rec.shaped_return += t.shaped_reward;
      rec.actions.push_back(t.action);
      done = step.done;
      obs = step.observation;
      out.transitions.push_back(std::move(t));
    }
    out.episodes.push_back(std::move(rec));
  }
  return out;
}

struct Advantages {
  Vector advantages;
  Vector returns;
};

/// Generalised advantage estimation; the value after the last transition is taken as 0.
inline Advantages compute_gae(std::span<const double> rewards, std::span<const double> values,
                              const std::vector<bool>& dones, double gamma = 0.99, double lambda = 0.95) {
  const std::size_t n = rewards.size();
  if (n == 0) throw UsageError("compute_gae: empty input");
  if (values.size() != n || dones.size() != n) throw UsageError("compute_gae: length mismatch");
  Advantages out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double next_adv = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double live = dones[i] ? 0.0 : 1.0;
    const double next_value = i + 1 < n ? values[i + 1] : 0.0;
    const double delta = rewards[i] + gamma * next_value * live - values[i];
    next_adv = delta + gamma * lambda * live * next_adv;
    out.advantages[i] = next_adv;
    out.returns[i] = next_adv + values[i];
  }
  return out;
}

/// Shift to zero mean and scale to unit (population) standard deviation.
inline void normalize_advantages(Vector& adv, double eps = 1e-8) {
  if (adv.empty()) return;
  double mean = 0.0;
  for (double a : adv) mean += a;
  mean /= static_cast<double>(adv.size());
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  const double sd = std::sqrt(var / static_cast<double>(adv.size()));
  for (double& a : adv) a = (a - mean) / (sd + eps);
}

struct LossBreakdown {
  double total = 0.0;
  double ppo_actor = 0.0;
  double teacher = 0.0;
  double critic = 0.0;
  double entropy = 0.0;
  double sigma = 1.0;
  double c4 = 0.0;
};

class UpdateError : public NumericError {
 public:
  UpdateError(const std::string& what, LossBreakdown b) : NumericError(what), breakdown(b) {}
  LossBreakdown breakdown;
};

struct UpdateBatch {
  std::vector<Transition> transitions;
  Vector advantages;  // already normalised
  Vector returns;
};

inline UpdateBatch make_batch(std::vector<Transition> transitions, const TrainConfig& cfg) {
  Vector rewards, values;
  std::vector<bool> dones;
  for (const auto& t : transitions) {
    rewards.push_back(t.shaped_reward);
    values.push_back(t.value);
    dones.push_back(t.done);
  }
  auto gae = compute_gae(rewards, values, dones, cfg.gamma, cfg.lambda);
  normalize_advantages(gae.advantages);
  return {std::move(transitions), std::move(gae.advantages), std::move(gae.returns)};
}

/// Clipped-surrogate update over the full batch for `cfg.epochs` epochs. The
/// returned breakdown describes the loss before the first gradient step.
inline LossBreakdown ppo_update(const UpdateBatch& batch, nn::PolicyParams& params, nn::OptimizerState& opt,
                                const TrainConfig& cfg, const GuidanceConfig& g, int interval) {
  const auto& ts = batch.transitions;
  const auto n = static_cast<Eigen::Index>(ts.size());
  if (n == 0) throw UsageError("ppo_update: empty batch");
  const auto coeff = g.loss_coefficients(interval);
  const double sigma = coeff.sigma;
  const double c4 = coeff.c4;
  const double inv_n = 1.0 / static_cast<double>(n);
  const int actions = params.action_count;
  const auto mode = g.mask_mode();

  nn::Matrix inputs(params.input_size, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& x = ts[j].input;
    if (static_cast<int>(x.size()) != params.input_size) throw UsageError("ppo_update: input width mismatch");
    for (int i = 0; i < params.input_size; ++i) inputs(i, j) = x[i];
  }

  LossBreakdown first;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto cache = nn::forward_batch(params, inputs);
    nn::Matrix dlogits = nn::Matrix::Zero(actions, n);
    nn::Matrix dvalues(1, n);
    LossBreakdown lb;
    lb.sigma = sigma;
    lb.c4 = c4;
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto& t = ts[j];
      const Vector z(cache.logits.col(j).data(), cache.logits.col(j).data() + actions);
      const Vector logp = nn::log_softmax(z);
      Vector p(actions);
      for (int a = 0; a < actions; ++a) p[a] = std::exp(logp[a]);

      // Surrogate on the distribution that generated the sample.
      Vector logq = logp;
      if (t.c3 < 1.0) {
        if (!t.reco) throw UsageError("ppo_update: masked transition lacks a recommendation");
        logq = nn::log_softmax(guidance::mask_logits(z, *t.reco, t.c3, mode));
      }
      const double adv = batch.advantages[j];
      const double ratio = std::exp(logq[t.action] - t.behavior_log_prob);
      const double clipped = std::clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
      const double unclipped_term = ratio * adv;
      const double clipped_term = clipped * adv;
      lb.ppo_actor -= std::min(unclipped_term, clipped_term) * inv_n;
      if (unclipped_term <= clipped_term) {
        const double s = -sigma * adv * ratio * inv_n;
        for (int a = 0; a < actions; ++a) dlogits(a, j) -= s * std::exp(logq[a]);
        dlogits(t.action, j) += s;
      }

      if (t.reco) {
        lb.teacher += guidance::teacher_loss(logp, t.reco->action) * inv_n;
        if (sigma < 1.0) {
          const double s = (1.0 - sigma) * inv_n;
          for (int a = 0; a < actions; ++a) dlogits(a, j) += s * p[a];
          dlogits(t.reco->action, j) -= s;
        }
      }

      const double h = nn::entropy(p);
      lb.entropy += h * inv_n;
      for (int a = 0; a < actions; ++a) dlogits(a, j) += c4 * inv_n * p[a] * (logp[a] + h);

      const double v = cache.values(0, j);
      const double err = v - batch.returns[j];
      lb.critic += err * err * inv_n;
      dvalues(0, j) = cfg.critic_coeff * 2.0 * err * inv_n;
    }
    lb.total = guidance::combine_loss(lb.ppo_actor, lb.teacher, lb.entropy, sigma, c4) + cfg.critic_coeff * lb.critic;
    if (!std::isfinite(lb.total)) throw UpdateError("ppo_update: non-finite loss", lb);
    if (epoch == 0) first = lb;
    const auto grads = nn::backward(params, cache, dlogits, dvalues);
    nn::optimizer_step(params, grads, opt);
  }
  if (cfg.epochs == 0) first.sigma = sigma, first.c4 = c4;
  return first;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalResult {
  double mean = 0.0;
  double se = 0.0;
  Vector returns;
};

using ObservationPolicy = std::function<int(const env::Observation& obs, Rng& rng)>;

/// Runs `episodes` unshaped episodes; episode seeds are drawn from one stream seeded by `seed`.
inline EvalResult evaluate_policy(const env::EnvConfig& cfg, const ObservationPolicy& policy, int episodes,
                                  std::uint64_t seed) {
  if (episodes < 1) throw UsageError("evaluate: need at least one episode");
  env::NetworkDefenseEnv environment(cfg);
  Rng seeds(derive_seed(seed, kEnvStream));
  Rng acting(derive_seed(seed, kSampleStream));
  EvalResult out;
  for (int e = 0; e < episodes; ++e) {
    auto obs = environment.reset(seeds.next());
    double total = 0.0;
    bool done = false;
    while (!done) {
      const auto step = environment.step(policy(obs, acting));
      total += step.reward;
      done = step.done;
      obs = step.observation;
    }
    out.returns.push_back(total);
  }
  const auto ms = mean_se(out.returns);
  out.mean = ms.mean;
  out.se = ms.se;
  return out;
}

/// Greedy evaluation of an actor. Augmented agents need the teacher that feeds their extra features.
inline EvalResult evaluate(const nn::PolicyParams& params, const env::EnvConfig& cfg, int episodes, std::uint64_t seed,
                           const GuidanceConfig& g = {}, const Teacher* teacher = nullptr) {
  if (g.augments() && !teacher) throw UsageError("evaluate: augmented agent needs its teacher");
  const int actions = cfg.action_count();
  return evaluate_policy(
      cfg,
      [&](const env::Observation& obs, Rng&) {
        std::optional<TeacherRecommendation> reco;
        if (g.augments()) reco = teacher->recommend(obs);
        return nn::argmax(nn::forward(params, agent_input(g, obs, reco ? &*reco : nullptr, actions)).logits);
      },
      episodes, seed);
}

inline EvalResult evaluate_random(const env::EnvConfig& cfg, int episodes, std::uint64_t seed) {
  const auto actions = static_cast<std::size_t>(cfg.action_count());
  return evaluate_policy(cfg, [actions](const env::Observation&, Rng& rng) { return static_cast<int>(rng.below(actions)); },
                         episodes, seed);
}

inline EvalResult evaluate_perfect_defender(const env::EnvConfig& cfg, int episodes, std::uint64_t seed) {
  return evaluate_policy(cfg, [&cfg](const env::Observation& obs, Rng&) { return env::perfect_defender_action(cfg, obs); },
                         episodes, seed);
}

// ---------------------------------------------------------------------------
// Training run

struct EpisodeLog {
  EpisodeRecord record;
  double sigma = 1.0;
  double c3 = 1.0;
  double c4 = 0.0;
  LossBreakdown loss;  // of the update that closed this episode's interval
};

struct RunOptions {
  env::EnvConfig env;
  TrainConfig train;
  GuidanceConfig guidance;
  const Teacher* teacher = nullptr;
  std::uint64_t seed = 0;
  std::vector<int> checkpoint_episodes;
  std::string checkpoint_tag = "actor";
};

struct RunResult {
  std::vector<EpisodeLog> episodes;
  std::vector<Checkpoint> checkpoints;  // in checkpoint_episodes order
  Checkpoint final_state;
};

inline Checkpoint snapshot(const RunOptions& o, const nn::PolicyParams& p, const nn::OptimizerState& s, int episode) {
  Checkpoint c{p, s, {}};
  c.meta.seed = o.seed;
  c.meta.episode = episode;
  c.meta.tag = o.checkpoint_tag;
  c.meta.technique = std::string(guidance::to_string(o.guidance.technique));
  c.meta.variant = std::string(guidance::to_string(o.guidance.variant));
  c.meta.encoding = std::string(guidance::to_string(o.guidance.encoding));
  c.meta.binary_width = o.guidance.binary_width;
  c.meta.num_hosts = o.env.num_hosts();
  return c;
}

/// One independent training run. The run seed feeds three derived streams:
/// environment episodes, parameter initialisation and action sampling.
inline RunResult train_run(const RunOptions& o) {
  o.env.validate();
  o.guidance.validate();
  if (o.guidance.uses_teacher() && !o.teacher) throw UsageError("train: technique requires a teacher");
  env::NetworkDefenseEnv environment(o.env);
  const int actions = environment.action_count();
  const int width = environment.observation_size() + o.guidance.augment_width(actions);
  nn::PolicyParams params = nn::PolicyParams::init(width, o.train.hidden, actions, derive_seed(o.seed, kInitStream));
  nn::OptimizerState opt = nn::OptimizerState::for_params(params, {o.train.learning_rate});
  Rng env_seeds(derive_seed(o.seed, kEnvStream));
  Rng sampler(derive_seed(o.seed, kSampleStream));

  RunResult result;
  auto want_checkpoint = [&](int episode) {
    return std::find(o.checkpoint_episodes.begin(), o.checkpoint_episodes.end(), episode) != o.checkpoint_episodes.end();
  };
  int episode = 0;
  while (episode < o.train.total_episodes) {
    const int interval = o.train.interval_of(episode);
    const int count = std::min(o.train.episodes_per_interval, o.train.total_episodes - episode);
    const auto coeff = o.guidance.loss_coefficients(interval);
    const double c3 = o.guidance.c3_at(interval);
    // Episodes are collected one at a time so early checkpoints (episode 1) see the pre-update actor.
    std::vector<Transition> batch;
    const std::size_t first_log = result.episodes.size();
    for (int k = 0; k < count; ++k) {
      RolloutContext ctx{o.guidance, o.teacher, interval, episode + 1, &sampler, &env_seeds, {}};
      auto rollout = collect_rollout(environment, params, 1, ctx);
      for (auto& t : rollout.transitions) batch.push_back(std::move(t));
      result.episodes.push_back({std::move(rollout.episodes.front()), coeff.sigma, c3, coeff.c4, {}});
      ++episode;
      if (k + 1 < count && want_checkpoint(episode)) result.checkpoints.push_back(snapshot(o, params, opt, episode));
    }
    const auto loss = ppo_update(make_batch(std::move(batch), o.train), params, opt, o.train, o.guidance, interval);
    if (!params.finite()) throw NumericError("train: parameters became non-finite");
    for (std::size_t i = first_log; i < result.episodes.size(); ++i) result.episodes[i].loss = loss;
    if (want_checkpoint(episode)) result.checkpoints.push_back(snapshot(o, params, opt, episode));
  }
  result.final_state = snapshot(o, params, opt, episode);
  return result;
}

}  // namespace tgrl::ppo
