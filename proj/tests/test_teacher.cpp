#include <gtest/gtest.h>

#include "tgrl/teacher_training.hpp"

using namespace tgrl;
using namespace tgrl::teacher;
using env::encode_action;
using env::Verb;

TEST(Recommendation, HostSetLayout) {
  const int a = encode_action(Verb::Restore, 3, 12);
  const auto r = make_recommendation(a, 12);
  EXPECT_EQ(r.host_actions, (std::vector<int>{encode_action(Verb::Analyse, 3, 12), encode_action(Verb::Remove, 3, 12),
                                              encode_action(Verb::Restore, 3, 12), encode_action(Verb::Decoy, 3, 12)}));
  EXPECT_TRUE(r.contains(a));
  EXPECT_TRUE(make_recommendation(0, 12).host_actions.empty());
}

TEST(Recommendation, InvariantsForEveryAction) {
  for (int H = 2; H <= 16; ++H) {
    for (int a = 0; a < 1 + 4 * H; ++a) {
      const auto r = make_recommendation(a, H);
      if (a == 0) continue;
      EXPECT_EQ(r.host_actions.size(), 4u);
      EXPECT_TRUE(r.contains(a));
      for (int x : r.host_actions) EXPECT_EQ(env::decode_action(x, H).host, env::decode_action(a, H).host);
    }
  }
}

TEST(LearnedTeacher, UniformLogitsRecommendSleep) {
  const auto t = Teacher::from_policy(nn::PolicyParams::zeros(48, {8}, 49), 12);
  const auto r = t.recommend(env::Observation(48, 0.0));
  EXPECT_EQ(r.action, 0);
  EXPECT_TRUE(r.host_actions.empty());
}

TEST(LearnedTeacher, ArgmaxAndHostSet) {
  auto p = nn::PolicyParams::zeros(48, {}, 49);
  const int target = encode_action(Verb::Restore, 3, 12);
  p.actor.bias(target) = 1.0;
  const auto t = Teacher::from_policy(p, 12);
  const auto r = t.recommend(env::Observation(48, 1.0));
  EXPECT_EQ(r.action, target);
  EXPECT_EQ(r, make_recommendation(target, 12));
  EXPECT_EQ(t.recommend(env::Observation(48, 1.0)), r);
}

TEST(LearnedTeacher, WidthMismatch) {
  const auto t = Teacher::from_policy(nn::PolicyParams::zeros(48, {8}, 49), 12);
  EXPECT_THROW(t.recommend(env::Observation(47, 0.0)), UsageError);
  EXPECT_THROW(Teacher::from_policy(nn::PolicyParams::zeros(48, {8}, 50), 12), UsageError);
}

TEST(ScriptedTeacher, DefaultRule) {
  const auto t = scripted_teacher(12);
  env::Observation obs(48, 0.0);
  EXPECT_EQ(t.recommend(obs).action, 0);
  obs[4 * 2 + env::kKnownUser] = 1.0;
  EXPECT_EQ(t.recommend(obs).action, encode_action(Verb::Restore, 2, 12));
  obs[4 * 7 + env::kKnownPrivileged] = 1.0;
  obs[4 * 7 + env::kKnownUser] = 1.0;
  EXPECT_EQ(t.recommend(obs).action, encode_action(Verb::Restore, 2, 12));
  obs[4 * 1 + env::kKnownUser] = 1.0;
  EXPECT_EQ(t.recommend(obs).action, encode_action(Verb::Restore, 1, 12));
}

TEST(ScriptedTeacher, PureAndAlwaysValid) {
  const auto t = scripted_teacher(12);
  Rng rng(4);
  for (int k = 0; k < 2000; ++k) {
    env::Observation obs(48);
    for (auto& v : obs) v = rng.bernoulli(0.1) ? 1.0 : 0.0;
    const auto a = t.recommend(obs), b = t.recommend(obs);
    EXPECT_EQ(a, b);
    EXPECT_GE(a.action, 0);
    EXPECT_LT(a.action, 49);
  }
}

TEST(TrainTeacher, DeterministicCheckpoint) {
  const env::EnvConfig cfg;
  const ppo::TrainConfig tc;
  const auto a = train_teacher(cfg, tc, 7, 16, 10);
  const auto b = train_teacher(cfg, tc, 7, 16, 10);
  EXPECT_EQ(checkpoint_to_json(a).dump(), checkpoint_to_json(b).dump());
  EXPECT_EQ(a.meta.tag, "teacher");
  EXPECT_EQ(a.meta.episode, 16);
  EXPECT_TRUE(a.meta.eval_mean.has_value());
  EXPECT_TRUE(a.meta.eval_se.has_value());
}

TEST(TrainTeacher, ZeroEpisodesIsFreshInit) {
  const env::EnvConfig cfg;
  const ppo::TrainConfig tc;
  const auto c = train_teacher(cfg, tc, 3, 0, 5);
  EXPECT_EQ(c.params, nn::PolicyParams::init(48, tc.hidden, 49, derive_seed(3, kInitStream)));
  EXPECT_EQ(c.optimizer.step, 0);
}

TEST(TrainTeacher, BeatsRandomPolicy) {
  const env::EnvConfig cfg;
  const auto c = train_teacher(cfg, ppo::TrainConfig{}, 7);
  const auto random = ppo::evaluate_random(cfg, 50, derive_seed(7, kTeacherEvalStream));
  EXPECT_GT(*c.meta.eval_mean, random.mean);
  const auto t = teacher_from_checkpoint(c);
  EXPECT_EQ(t.input_size(), 48);
}

TEST(TrainTeacher, CheckpointLoadsAsTeacher) {
  const env::EnvConfig cfg;
  const auto c = train_teacher(cfg, ppo::TrainConfig{}, 11, 8, 4);
  const auto path = std::filesystem::temp_directory_path() / "tgrl_teacher_test.ckpt";
  save_checkpoint(c, path);
  const auto t1 = teacher_from_checkpoint(c);
  const auto t2 = teacher_from_checkpoint(load_checkpoint(path));
  env::NetworkDefenseEnv e(cfg);
  auto obs = e.reset(1);
  for (int k = 0; k < 30; ++k) {
    EXPECT_EQ(t1.recommend(obs), t2.recommend(obs));
    obs = e.step(t1.recommend(obs).action).observation;
  }
  std::filesystem::remove(path);
}
