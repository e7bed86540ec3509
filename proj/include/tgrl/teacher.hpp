#pragma once

// Action recommenders. A teacher is a pure function of the (unaugmented)
// observation; the learned variant wraps a frozen policy checkpoint.

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "tgrl/env.hpp"
#include "tgrl/nn.hpp"

namespace tgrl::teacher {

struct TeacherRecommendation {
  int action = 0;                 // recommended action
  std::vector<int> host_actions;  // every action targeting the recommended host; empty for Sleep

  bool contains(int a) const {
    for (int x : host_actions)
      if (x == a) return true;
    return false;
  }
  bool operator==(const TeacherRecommendation&) const = default;
};

inline TeacherRecommendation make_recommendation(int action, int num_hosts) {
  TeacherRecommendation r;
  r.action = action;
  const auto decoded = env::decode_action(action, num_hosts);
  if (decoded.verb != env::Verb::Sleep)
    for (auto verb : env::kHostVerbs) r.host_actions.push_back(env::encode_action(verb, decoded.host, num_hosts));
  return r;
}

class Teacher {
 public:
  using PolicyFn = std::function<int(const env::Observation&)>;

  Teacher(int input_size, int num_hosts, PolicyFn policy)
      : input_size_(input_size), num_hosts_(num_hosts), policy_(std::move(policy)) {}

  /// Greedy frozen policy; ties go to the lowest action index.
  static Teacher from_policy(nn::PolicyParams params, int num_hosts) {
    if (params.action_count != 1 + 4 * num_hosts) throw UsageError("teacher: action head does not match host count");
    auto frozen = std::make_shared<const nn::PolicyParams>(std::move(params));
    const int width = frozen->input_size;
    return Teacher(width, num_hosts, [frozen](const env::Observation& obs) {
      return nn::argmax(nn::forward(*frozen, obs).logits);
    });
  }

  int input_size() const { return input_size_; }
  int num_hosts() const { return num_hosts_; }
  int action_count() const { return 1 + 4 * num_hosts_; }

  TeacherRecommendation recommend(const env::Observation& obs) const {
    if (static_cast<int>(obs.size()) != input_size_)
      throw UsageError("teacher: observation width " + std::to_string(obs.size()) + " != " + std::to_string(input_size_));
    const int a = policy_(obs);
    if (a < 0 || a >= action_count()) throw UsageError("teacher: policy produced an invalid action");
    return make_recommendation(a, num_hosts_);
  }

 private:
  int input_size_;
  int num_hosts_;
  PolicyFn policy_;
};

/// One rule of a scripted teacher: first matching predicate wins.
struct Rule {
  std::function<bool(const env::Observation&)> when;
  std::function<int(const env::Observation&)> action;
};

/// Restore the lowest-index host whose known-access bits are set.
inline Rule restore_known_access_rule(int num_hosts) {
  auto flagged = [num_hosts](const env::Observation& o) {
    for (int h = 0; h < num_hosts; ++h)
      if (o[4 * h + env::kKnownUser] != 0.0 || o[4 * h + env::kKnownPrivileged] != 0.0) return h;
    return -1;
  };
  return {[flagged](const env::Observation& o) { return flagged(o) >= 0; },
          [flagged, num_hosts](const env::Observation& o) {
            return env::encode_action(env::Verb::Restore, flagged(o), num_hosts);
          }};
}

/// Rules are tried in order; no match recommends Sleep.
inline Teacher scripted_teacher(int num_hosts, std::vector<Rule> rules) {
  return Teacher(4 * num_hosts, num_hosts, [rules = std::move(rules)](const env::Observation& o) {
    for (const auto& r : rules)
      if (r.when(o)) return r.action(o);
    return 0;
  });
}

inline Teacher scripted_teacher(int num_hosts) { return scripted_teacher(num_hosts, {restore_known_access_rule(num_hosts)}); }

/// Always recommends the same action.
inline Teacher constant_teacher(int num_hosts, int action) {
  return Teacher(4 * num_hosts, num_hosts, [action](const env::Observation&) { return action; });
}

}  // namespace tgrl::teacher
