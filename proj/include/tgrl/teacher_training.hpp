#pragma once

#include "tgrl/ppo.hpp"

namespace tgrl::teacher {

inline constexpr int kTeacherEpisodes = 100;
inline constexpr int kTeacherEvalEpisodes = 50;
inline constexpr std::uint64_t kTeacherEvalStream = 0x7EAC4E2ULL;

/// Baseline PPO for `episodes` episodes, then a greedy evaluation over
/// `eval_episodes` seeded episodes stored in the checkpoint metadata.
inline Checkpoint train_teacher(const env::EnvConfig& env_cfg, const ppo::TrainConfig& train_cfg, std::uint64_t seed,
                                int episodes = kTeacherEpisodes, int eval_episodes = kTeacherEvalEpisodes) {
  ppo::RunOptions o;
  o.env = env_cfg;
  o.train = train_cfg;
  o.train.total_episodes = episodes;
  o.seed = seed;
  o.checkpoint_tag = "teacher";
  auto run = ppo::train_run(o);
  Checkpoint c = std::move(run.final_state);
  const auto eval = ppo::evaluate(c.params, env_cfg, eval_episodes, derive_seed(seed, kTeacherEvalStream));
  c.meta.eval_mean = eval.mean;
  c.meta.eval_se = eval.se;
  return c;
}

inline Teacher teacher_from_checkpoint(const Checkpoint& c) {
  if (c.augmented()) throw UsageError("teacher checkpoints must consume unaugmented observations");
  return Teacher::from_policy(c.params, c.meta.num_hosts);
}

}  // namespace tgrl::teacher
