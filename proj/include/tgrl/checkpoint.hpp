#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include <json.hpp>

#include "tgrl/guidance.hpp"
#include "tgrl/nn.hpp"

namespace tgrl {

inline constexpr int kCheckpointFormatVersion = 1;

struct CheckpointMeta {
  std::uint64_t seed = 0;
  int episode = 0;
  std::string tag;  // "teacher", "actor", ...
  std::string technique = "baseline";
  std::string variant = "decay";
  std::string encoding = "one-hot";
  int binary_width = 0;
  int num_hosts = 12;
  std::optional<double> eval_mean;  // greedy evaluation, teacher checkpoints only
  std::optional<double> eval_se;
};

struct Checkpoint {
  nn::PolicyParams params;
  nn::OptimizerState optimizer;
  CheckpointMeta meta;

  bool augmented() const { return meta.technique == "feature-augment"; }
  guidance::Encoding encoding() const { return guidance::encoding_from_string(meta.encoding); }
};

inline nlohmann::json checkpoint_to_json(const Checkpoint& c) {
  nlohmann::json meta = {{"seed", c.meta.seed},           {"episode", c.meta.episode},
                         {"tag", c.meta.tag},             {"technique", c.meta.technique},
                         {"variant", c.meta.variant},     {"encoding", c.meta.encoding},
                         {"binary_width", c.meta.binary_width}, {"num_hosts", c.meta.num_hosts}};
  if (c.meta.eval_mean) meta["eval_mean"] = *c.meta.eval_mean;
  if (c.meta.eval_se) meta["eval_se"] = *c.meta.eval_se;
  const auto& hp = c.optimizer.config;
  return {{"format_version", kCheckpointFormatVersion},
          {"params", c.params},
          {"optimizer",
           {{"learning_rate", hp.learning_rate},
            {"beta1", hp.beta1},
            {"beta2", hp.beta2},
            {"epsilon", hp.epsilon},
            {"step", c.optimizer.step},
            {"first_moment", c.optimizer.first_moment},
            {"second_moment", c.optimizer.second_moment}}},
          {"metadata", meta}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  const int version = j.at("format_version").get<int>();
  if (version != kCheckpointFormatVersion)
    throw ConfigError("unsupported checkpoint format_version " + std::to_string(version));
  Checkpoint c;
  c.params = j.at("params").get<nn::PolicyParams>();
  const auto& o = j.at("optimizer");
  c.optimizer.config = {o.at("learning_rate").get<double>(), o.at("beta1").get<double>(), o.at("beta2").get<double>(),
                        o.at("epsilon").get<double>()};
  c.optimizer.step = o.at("step").get<long>();
  c.optimizer.first_moment = o.at("first_moment").get<nn::PolicyParams>();
  c.optimizer.second_moment = o.at("second_moment").get<nn::PolicyParams>();
  if (!c.params.same_shape(c.optimizer.first_moment) || !c.params.same_shape(c.optimizer.second_moment))
    throw ConfigError("checkpoint: optimizer moments do not match parameter shapes");
  const auto& m = j.at("metadata");
  c.meta.seed = m.value("seed", std::uint64_t{0});
  c.meta.episode = m.value("episode", 0);
  c.meta.tag = m.value("tag", std::string());
  c.meta.technique = m.value("technique", std::string("baseline"));
  c.meta.variant = m.value("variant", std::string("decay"));
  c.meta.encoding = m.value("encoding", std::string("one-hot"));
  c.meta.binary_width = m.value("binary_width", 0);
  c.meta.num_hosts = m.value("num_hosts", (c.params.action_count - 1) / 4);
  if (m.contains("eval_mean")) c.meta.eval_mean = m.at("eval_mean").get<double>();
  if (m.contains("eval_se")) c.meta.eval_se = m.at("eval_se").get<double>();
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write checkpoint " + path.string());
  out << checkpoint_to_json(c).dump() << '\n';
  if (!out) throw UsageError("failed writing checkpoint " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open checkpoint " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("checkpoint " + path.string() + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace tgrl
