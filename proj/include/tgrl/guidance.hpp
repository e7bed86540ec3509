#pragma once

// Teacher-integration techniques: reward shaping, action/host masking,
// auxiliary teacher loss and feature-space augmentation, plus the
// per-interval coefficient schedules that anneal each of them.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "tgrl/nn.hpp"
#include "tgrl/teacher.hpp"

namespace tgrl::guidance {

using teacher::TeacherRecommendation;

enum class Technique { Baseline, RewardShaping, ActionMasking, HostMasking, AuxiliaryLoss, FeatureAugment };
enum class Variant { Decay, HardStop };
enum class Encoding { Binary, OneHot, Float };
enum class MaskMode { Action, Host };

inline std::string_view to_string(Technique t) {
  switch (t) {
    case Technique::Baseline: return "baseline";
    case Technique::RewardShaping: return "reward-shaping";
    case Technique::ActionMasking: return "action-masking";
    case Technique::HostMasking: return "host-masking";
    case Technique::AuxiliaryLoss: return "aux-loss";
    case Technique::FeatureAugment: return "feature-augment";
  }
  return "?";
}

inline std::string_view to_string(Variant v) { return v == Variant::Decay ? "decay" : "hard-stop"; }

inline std::string_view to_string(Encoding e) {
  switch (e) {
    case Encoding::Binary: return "binary";
    case Encoding::OneHot: return "one-hot";
    case Encoding::Float: return "float";
  }
  return "?";
}

inline Technique technique_from_string(std::string_view s) {
  for (auto t : {Technique::Baseline, Technique::RewardShaping, Technique::ActionMasking, Technique::HostMasking,
                 Technique::AuxiliaryLoss, Technique::FeatureAugment})
    if (to_string(t) == s) return t;
  throw ConfigError("unknown technique '" + std::string(s) + "'");
}

inline Variant variant_from_string(std::string_view s) {
  if (s == "decay") return Variant::Decay;
  if (s == "hard-stop") return Variant::HardStop;
  throw ConfigError("unknown variant '" + std::string(s) + "'");
}

inline Encoding encoding_from_string(std::string_view s) {
  for (auto e : {Encoding::Binary, Encoding::OneHot, Encoding::Float})
    if (to_string(e) == s) return e;
  throw ConfigError("unknown encoding '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Schedules

/// Piecewise-linear (or geometric, when `relative`) coefficient over training
/// intervals, clamped to [floor, ceiling].
struct Schedule {
  enum class Kind { Constant, LinearDecayPerInterval, HardStopAtInterval, LinearRampPerInterval };

  Kind kind = Kind::Constant;
  double start = 1.0;
  double delta = 0.0;
  bool relative = false;  // delta is a fraction of the current value
  int stop_interval = 0;
  double off_value = 0.0;
  double floor = -std::numeric_limits<double>::infinity();
  double ceiling = std::numeric_limits<double>::infinity();
  bool complement = false;  // report 1 - value (e.g. c3 as the complement of a decaying influence)

  static Schedule constant(double v) { return {Kind::Constant, v}; }
  static Schedule ramp(double start, double delta, double floor, double ceiling) {
    return {Kind::LinearRampPerInterval, start, delta, false, 0, 0.0, floor, ceiling};
  }
  static Schedule decay(double start, double delta, bool relative, double floor, double ceiling) {
    return {Kind::LinearDecayPerInterval, start, delta, relative, 0, 0.0, floor, ceiling};
  }
  static Schedule hard_stop(double start, int stop, double off) {
    return {Kind::HardStopAtInterval, start, 0.0, false, stop, off};
  }

  double value(int interval) const {
    const double i = static_cast<double>(std::max(interval, 0));
    double v = start;
    switch (kind) {
      case Kind::Constant: break;
      case Kind::LinearDecayPerInterval: v = relative ? start * std::pow(1.0 - delta, i) : start - delta * i; break;
      case Kind::LinearRampPerInterval: v = relative ? start * std::pow(1.0 + delta, i) : start + delta * i; break;
      case Kind::HardStopAtInterval: v = interval < stop_interval ? start : off_value; break;
    }
    if (complement) v = 1.0 - v;
    return std::clamp(v, floor, ceiling);
  }
};

/// Masking coefficient c3: 0 keeps only the recommendation, 1 disables the mask.
inline double masking_schedule(Variant variant, MaskMode mode, int interval) {
  if (mode == MaskMode::Action)
    return variant == Variant::Decay ? std::min(1.0, 0.25 * interval) : (interval < 4 ? 0.0 : 1.0);
  return variant == Variant::Decay ? std::min(1.0, 0.10 * interval) : (interval < 6 ? 0.0 : 1.0);
}

struct LossCoefficients {
  double sigma = 1.0;  // weight on the PPO actor loss; 1 - sigma goes to the teacher loss
  double c4 = 0.005;   // entropy bonus
};

/// Entropy coefficient: ramps while the teacher guides, then decays back to base.
struct EntropySchedule {
  double base = 0.005;
  double guided_increment = 5e-4;
  double unguided_decrement = 2e-4;

  /// `guidance_end` is the first interval with sigma = 1.
  double value(int interval, int guidance_end) const {
    if (interval < guidance_end) return base + guided_increment * interval;
    const double peak = base + guided_increment * guidance_end;
    return std::max(base, peak - unguided_decrement * (interval - guidance_end));
  }
};

inline Schedule sigma_schedule(Variant variant) {
  return variant == Variant::Decay ? Schedule::ramp(0.0, 0.25, 0.0, 1.0) : Schedule::hard_stop(0.0, 3, 1.0);
}

inline LossCoefficients aux_schedules(Variant variant, int interval) {
  const Schedule sigma = sigma_schedule(variant);
  const int end = variant == Variant::Decay ? 4 : 3;
  return {sigma.value(interval), EntropySchedule{}.value(interval, end)};
}

// ---------------------------------------------------------------------------
// Configuration

enum class ShapingMode {
  Additive,  // r_env + w * bonus
  Mixing     // beta * r_env + (1 - beta) * bonus, beta ramping toward the environment
};

struct GuidanceConfig {
  Technique technique = Technique::Baseline;
  Variant variant = Variant::Decay;
  double c1 = 2.5;  // bonus for taking the recommended action
  double c2 = 1.0;  // bonus for another action on the recommended host
  ShapingMode shaping_mode = ShapingMode::Additive;
  Schedule shaping_weight = Schedule::decay(1.0, 0.10, true, 0.0, 1.0);
  Schedule mixing_beta = Schedule::ramp(0.0, 0.10, 0.0, 1.0);
  Schedule c3 = Schedule::ramp(0.0, 0.25, 0.0, 1.0);
  Schedule sigma = Schedule::constant(1.0);
  EntropySchedule entropy;
  Encoding encoding = Encoding::OneHot;
  int binary_width = 0;  // 0 = ceil(log2 |A|)

  /// Published constants for each technique/variant pair.
  static GuidanceConfig make(Technique technique, Variant variant, Encoding encoding = Encoding::OneHot) {
    GuidanceConfig g;
    g.technique = technique;
    g.variant = variant;
    g.encoding = encoding;
    const bool decay = variant == Variant::Decay;
    g.shaping_weight = decay ? Schedule::decay(1.0, 0.10, true, 0.0, 1.0) : Schedule::hard_stop(1.0, 5, 0.0);
    if (technique == Technique::HostMasking)
      g.c3 = decay ? Schedule::ramp(0.0, 0.10, 0.0, 1.0) : Schedule::hard_stop(0.0, 6, 1.0);
    else
      g.c3 = decay ? Schedule::ramp(0.0, 0.25, 0.0, 1.0) : Schedule::hard_stop(0.0, 4, 1.0);
    g.sigma = technique == Technique::AuxiliaryLoss ? sigma_schedule(variant) : Schedule::constant(1.0);
    return g;
  }

  bool uses_teacher() const { return technique != Technique::Baseline; }
  bool shapes_reward() const { return technique == Technique::RewardShaping; }
  bool masks() const { return technique == Technique::ActionMasking || technique == Technique::HostMasking; }
  bool augments() const { return technique == Technique::FeatureAugment; }
  MaskMode mask_mode() const { return technique == Technique::HostMasking ? MaskMode::Host : MaskMode::Action; }

  void validate() const {
    if (!(c1 > c2 && c2 > 0.0)) throw ConfigError("guidance: need c1 > c2 > 0");
    for (int i : {0, 1, 5, 10, 100}) {
      const double m = c3.value(i), s = sigma.value(i);
      if (m < 0.0 || m > 1.0) throw ConfigError("guidance: c3 schedule leaves [0,1]");
      if (s < 0.0 || s > 1.0) throw ConfigError("guidance: sigma schedule leaves [0,1]");
    }
  }

  double c3_at(int interval) const { return masks() ? c3.value(interval) : 1.0; }

  /// First interval at which sigma reaches 1 (teacher loss switched off).
  int guidance_end() const {
    for (int i = 0; i <= 100000; ++i)
      if (sigma.value(i) >= 1.0) return i;
    return std::numeric_limits<int>::max();
  }

  /// Baseline and every non-auxiliary technique train with sigma = 1 and a
  /// constant entropy coefficient.
  LossCoefficients loss_coefficients(int interval) const {
    if (technique != Technique::AuxiliaryLoss) return {1.0, entropy.base};
    return {sigma.value(interval), entropy.value(interval, guidance_end())};
  }

  int augment_width(int action_count) const;
};

inline int binary_code_width(int action_count) {
  int bits = 1;
  while ((1LL << bits) < action_count) ++bits;
  return bits;
}

inline int augment_width(Encoding e, int action_count, int binary_width = 0) {
  switch (e) {
    case Encoding::Binary: return binary_width > 0 ? binary_width : binary_code_width(action_count);
    case Encoding::OneHot: return action_count;
    case Encoding::Float: return 1;
  }
  return 0;
}

inline int GuidanceConfig::augment_width(int action_count) const {
  return augments() ? guidance::augment_width(encoding, action_count, binary_width) : 0;
}

// ---------------------------------------------------------------------------
// Operations

struct ShapedReward {
  double shaped = 0.0;
  double unmodified = 0.0;
};

inline double teacher_bonus(int chosen, const TeacherRecommendation& reco, double c1, double c2) {
  if (chosen == reco.action) return c1;
  if (reco.contains(chosen)) return c2;
  return 0.0;
}

inline ShapedReward shape_reward(double r_env, int chosen, const TeacherRecommendation& reco,
                                 const GuidanceConfig& cfg, int interval) {
  const double bonus = teacher_bonus(chosen, reco, cfg.c1, cfg.c2);
  if (cfg.shaping_mode == ShapingMode::Mixing) {
    const double beta = cfg.mixing_beta.value(interval);
    return {beta * r_env + (1.0 - beta) * bonus, r_env};
  }
  return {r_env + cfg.shaping_weight.value(interval) * bonus, r_env};
}

inline std::vector<int> keep_set(const TeacherRecommendation& reco, MaskMode mode) {
  if (mode == MaskMode::Host && !reco.host_actions.empty()) return reco.host_actions;
  return {reco.action};
}

/// Multiplies every probability outside the keep-set by c3 and renormalises.
/// Falls back to uniform over the keep-set if nothing survives.
inline Vector mask_policy(std::span<const double> probs, const TeacherRecommendation& reco, double c3, MaskMode mode) {
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw UsageError("mask_policy: invalid distribution");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-6) throw UsageError("mask_policy: probabilities do not sum to 1");
  if (c3 < 0.0 || c3 > 1.0) throw UsageError("mask_policy: c3 outside [0,1]");
  const auto keep = keep_set(reco, mode);
  Vector out(probs.size());
  for (std::size_t a = 0; a < probs.size(); ++a) out[a] = probs[a] * c3;
  for (int a : keep) out[a] = probs[a];
  double z = 0.0;
  for (double p : out) z += p;
  if (z <= 0.0) {
    std::fill(out.begin(), out.end(), 0.0);
    for (int a : keep) out[a] = 1.0 / static_cast<double>(keep.size());
    return out;
  }
  for (double& p : out) p /= z;
  return out;
}

/// Logit-space form of the mask: softmax(logits + log m) equals mask_policy(softmax(logits)).
inline Vector mask_logits(std::span<const double> logits, const TeacherRecommendation& reco, double c3, MaskMode mode) {
  const double off = c3 > 0.0 ? std::log(c3) : -std::numeric_limits<double>::infinity();
  Vector out(logits.begin(), logits.end());
  for (double& z : out) z += off;
  for (int a : keep_set(reco, mode)) out[a] = logits[a];
  return out;
}

inline double teacher_loss(std::span<const double> log_probs, int recommended) { return -log_probs[recommended]; }

/// sigma * L_actor + (1 - sigma) * L_teacher - c4 * entropy
inline double combine_loss(double actor_loss, double teacher_loss_value, double entropy, double sigma, double c4) {
  return sigma * actor_loss + (1.0 - sigma) * teacher_loss_value - c4 * entropy;
}

/// Appends an encoding of the recommended action. Binary is most-significant bit first.
inline Vector augment_observation(std::span<const double> obs, int recommended, Encoding encoding, int action_count,
                                  int binary_width = 0) {
  if (recommended < 0 || recommended >= action_count) throw UsageError("augment_observation: action out of range");
  Vector out(obs.begin(), obs.end());
  switch (encoding) {
    case Encoding::Binary: {
      const int width = augment_width(encoding, action_count, binary_width);
      for (int b = width - 1; b >= 0; --b) out.push_back(((recommended >> b) & 1) ? 1.0 : 0.0);
      break;
    }
    case Encoding::OneHot:
      for (int a = 0; a < action_count; ++a) out.push_back(a == recommended ? 1.0 : 0.0);
      break;
    case Encoding::Float:
      out.push_back(action_count > 1 ? static_cast<double>(recommended) / (action_count - 1) : 0.0);
      break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON

inline void to_json(nlohmann::json& j, const Schedule& s) {
  static constexpr const char* kinds[] = {"constant", "linear-decay", "hard-stop", "linear-ramp"};
  j = {{"kind", kinds[static_cast<int>(s.kind)]}, {"start", s.start}, {"delta", s.delta}, {"relative", s.relative},
       {"stop_interval", s.stop_interval}, {"off_value", s.off_value}, {"complement", s.complement}};
  if (std::isfinite(s.floor)) j["floor"] = s.floor;
  if (std::isfinite(s.ceiling)) j["ceiling"] = s.ceiling;
}

inline void from_json(const nlohmann::json& j, Schedule& s) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "constant") s.kind = Schedule::Kind::Constant;
  else if (kind == "linear-decay") s.kind = Schedule::Kind::LinearDecayPerInterval;
  else if (kind == "hard-stop") s.kind = Schedule::Kind::HardStopAtInterval;
  else if (kind == "linear-ramp") s.kind = Schedule::Kind::LinearRampPerInterval;
  else throw ConfigError("unknown schedule kind '" + kind + "'");
  s.start = j.value("start", 1.0);
  s.delta = j.value("delta", 0.0);
  s.relative = j.value("relative", false);
  s.stop_interval = j.value("stop_interval", 0);
  s.off_value = j.value("off_value", 0.0);
  s.complement = j.value("complement", false);
  s.floor = j.value("floor", -std::numeric_limits<double>::infinity());
  s.ceiling = j.value("ceiling", std::numeric_limits<double>::infinity());
}

inline void to_json(nlohmann::json& j, const GuidanceConfig& g) {
  j = {{"technique", std::string(to_string(g.technique))},
       {"variant", std::string(to_string(g.variant))},
       {"c1", g.c1},
       {"c2", g.c2},
       {"shaping_mode", g.shaping_mode == ShapingMode::Additive ? "additive" : "mixing"},
       {"shaping_weight", g.shaping_weight},
       {"mixing_beta", g.mixing_beta},
       {"c3", g.c3},
       {"sigma", g.sigma},
       {"entropy", {{"base", g.entropy.base}, {"guided_increment", g.entropy.guided_increment},
                    {"unguided_decrement", g.entropy.unguided_decrement}}},
       {"encoding", std::string(to_string(g.encoding))},
       {"binary_width", g.binary_width}};
}

/// Starts from the published constants for (technique, variant) and applies overrides.
inline void from_json(const nlohmann::json& j, GuidanceConfig& g) {
  g = GuidanceConfig::make(technique_from_string(j.value("technique", std::string("baseline"))),
                           variant_from_string(j.value("variant", std::string("decay"))),
                           encoding_from_string(j.value("encoding", std::string("one-hot"))));
  g.c1 = j.value("c1", g.c1);
  g.c2 = j.value("c2", g.c2);
  if (j.contains("shaping_mode")) {
    const auto m = j.at("shaping_mode").get<std::string>();
    if (m == "additive") g.shaping_mode = ShapingMode::Additive;
    else if (m == "mixing") g.shaping_mode = ShapingMode::Mixing;
    else throw ConfigError("unknown shaping_mode '" + m + "'");
  }
  if (j.contains("shaping_weight")) g.shaping_weight = j.at("shaping_weight").get<Schedule>();
  if (j.contains("mixing_beta")) g.mixing_beta = j.at("mixing_beta").get<Schedule>();
  if (j.contains("c3")) g.c3 = j.at("c3").get<Schedule>();
  if (j.contains("sigma")) g.sigma = j.at("sigma").get<Schedule>();
  if (j.contains("entropy")) {
    const auto& e = j.at("entropy");
    g.entropy.base = e.value("base", g.entropy.base);
    g.entropy.guided_increment = e.value("guided_increment", g.entropy.guided_increment);
    g.entropy.unguided_decrement = e.value("unguided_decrement", g.entropy.unguided_decrement);
  }
  g.binary_width = j.value("binary_width", g.binary_width);
  g.validate();
}

}  // namespace tgrl::guidance
