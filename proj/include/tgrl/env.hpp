#pragma once

// CAGE-2 style network-defense simulator: a scripted beeline attacker walks
// User -> Enterprise -> Operational toward the op-server while the blue agent
// observes noisy indicators and takes host-level defensive actions.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tgrl/common.hpp"

namespace tgrl::env {

enum class Subnet { User = 0, Enterprise = 1, Operational = 2, Defender = 3 };

inline std::string_view to_string(Subnet s) {
  switch (s) {
    case Subnet::User: return "user";
    case Subnet::Enterprise: return "enterprise";
    case Subnet::Operational: return "operational";
    case Subnet::Defender: return "defender";
  }
  return "?";
}

inline Subnet subnet_from_string(std::string_view s) {
  if (s == "user") return Subnet::User;
  if (s == "enterprise") return Subnet::Enterprise;
  if (s == "operational") return Subnet::Operational;
  if (s == "defender") return Subnet::Defender;
  throw ConfigError("unknown subnet '" + std::string(s) + "'");
}

struct HostSpec {
  Subnet subnet = Subnet::User;
  bool is_op_server = false;
};

/// Host ids are positions in `hosts`.
struct Topology {
  std::vector<HostSpec> hosts;

  int size() const { return static_cast<int>(hosts.size()); }

  /// Hosts laid out User, Enterprise, Operational (op-server first), Defender.
  static Topology from_counts(int users, int enterprise, int operational, int defenders) {
    Topology t;
    for (int i = 0; i < users; ++i) t.hosts.push_back({Subnet::User, false});
    for (int i = 0; i < enterprise; ++i) t.hosts.push_back({Subnet::Enterprise, false});
    for (int i = 0; i < operational; ++i) t.hosts.push_back({Subnet::Operational, i == 0});
    for (int i = 0; i < defenders; ++i) t.hosts.push_back({Subnet::Defender, false});
    return t;
  }

  static Topology cage_default() { return from_counts(5, 3, 3, 1); }

  void validate() const {
    if (hosts.empty()) throw ConfigError("topology has no hosts");
    int op_servers = 0;
    for (const auto& h : hosts) {
      if (h.is_op_server) {
        ++op_servers;
        if (h.subnet != Subnet::Operational)
          throw ConfigError("op-server must live in the operational subnet");
      }
    }
    if (op_servers != 1)
      throw ConfigError("topology needs exactly one op-server, found " + std::to_string(op_servers));
    if (!foothold()) throw ConfigError("topology needs at least one user host for the red foothold");
  }

  std::optional<int> foothold() const {
    for (int i = 0; i < size(); ++i)
      if (hosts[i].subnet == Subnet::User) return i;
    return std::nullopt;
  }

  int op_server() const {
    for (int i = 0; i < size(); ++i)
      if (hosts[i].is_op_server) return i;
    throw ConfigError("topology has no op-server");
  }
};

/// Per-step penalty magnitudes (applied as negative rewards).
struct PenaltyTable {
  double user_access = 0.1;
  double user_privileged = 0.25;
  double enterprise_access = 0.5;
  double enterprise_privileged = 1.0;
  double op_server_privileged = 1.0;
  double impact = 10.0;
  double restore_cost = 1.0;

  double max_step_penalty(const Topology& t) const {
    double total = impact + restore_cost;
    for (const auto& h : t.hosts) {
      if (h.subnet == Subnet::User) total += std::max(user_access, user_privileged);
      if (h.subnet == Subnet::Enterprise) total += std::max(enterprise_access, enterprise_privileged);
      if (h.is_op_server) total += op_server_privileged;
    }
    return total;
  }
};

struct EnvConfig {
  Topology topology = Topology::cage_default();
  int episode_length = 30;
  double p_detect = 0.95;
  double p_exploit = 0.9;
  PenaltyTable penalties;

  void validate() const {
    topology.validate();
    if (episode_length <= 0) throw ConfigError("episode_length must be positive");
    if (p_detect < 0.0 || p_detect > 1.0) throw ConfigError("p_det must lie in [0,1]");
    if (p_exploit < 0.0 || p_exploit > 1.0) throw ConfigError("p_exp must lie in [0,1]");
  }

  int num_hosts() const { return topology.size(); }
  int observation_size() const { return 4 * num_hosts(); }
  int action_count() const { return 1 + 4 * num_hosts(); }
};

// JSON keys: hosts[{subnet, op_server}], episode_length, p_det, p_exp,
// penalties{user_access, user_privileged, enterprise_access,
// enterprise_privileged, op_server_privileged, impact, restore_cost}.
inline void to_json(nlohmann::json& j, const EnvConfig& c) {
  nlohmann::json hosts = nlohmann::json::array();
  for (const auto& h : c.topology.hosts)
    hosts.push_back({{"subnet", std::string(to_string(h.subnet))}, {"op_server", h.is_op_server}});
  const auto& p = c.penalties;
  j = {{"hosts", hosts},
       {"episode_length", c.episode_length},
       {"p_det", c.p_detect},
       {"p_exp", c.p_exploit},
       {"penalties",
        {{"user_access", p.user_access},
         {"user_privileged", p.user_privileged},
         {"enterprise_access", p.enterprise_access},
         {"enterprise_privileged", p.enterprise_privileged},
         {"op_server_privileged", p.op_server_privileged},
         {"impact", p.impact},
         {"restore_cost", p.restore_cost}}}};
}

inline void from_json(const nlohmann::json& j, EnvConfig& c) {
  c = EnvConfig{};
  if (j.contains("hosts")) {
    c.topology.hosts.clear();
    for (const auto& h : j.at("hosts"))
      c.topology.hosts.push_back({subnet_from_string(h.at("subnet").get<std::string>()),
                                  h.value("op_server", false)});
  }
  c.episode_length = j.value("episode_length", c.episode_length);
  c.p_detect = j.value("p_det", c.p_detect);
  c.p_exploit = j.value("p_exp", c.p_exploit);
  if (j.contains("penalties")) {
    const auto& p = j.at("penalties");
    auto& t = c.penalties;
    t.user_access = p.value("user_access", t.user_access);
    t.user_privileged = p.value("user_privileged", t.user_privileged);
    t.enterprise_access = p.value("enterprise_access", t.enterprise_access);
    t.enterprise_privileged = p.value("enterprise_privileged", t.enterprise_privileged);
    t.op_server_privileged = p.value("op_server_privileged", t.op_server_privileged);
    t.impact = p.value("impact", t.impact);
    t.restore_cost = p.value("restore_cost", t.restore_cost);
  }
  c.validate();
}

// ---------------------------------------------------------------------------
// Actions

enum class Verb { Sleep = 0, Analyse = 1, Remove = 2, Restore = 3, Decoy = 4 };

inline std::string_view to_string(Verb v) {
  switch (v) {
    case Verb::Sleep: return "Sleep";
    case Verb::Analyse: return "Analyse";
    case Verb::Remove: return "Remove";
    case Verb::Restore: return "Restore";
    case Verb::Decoy: return "Decoy";
  }
  return "?";
}

inline constexpr Verb kHostVerbs[] = {Verb::Analyse, Verb::Remove, Verb::Restore, Verb::Decoy};

struct BlueAction {
  Verb verb = Verb::Sleep;
  int host = -1;  // -1 for Sleep

  bool operator==(const BlueAction&) const = default;
};

/// Index 0 is Sleep; then one contiguous block of `num_hosts` per verb.
inline int encode_action(Verb verb, int host, int num_hosts) {
  if (verb == Verb::Sleep) return 0;
  if (host < 0 || host >= num_hosts) throw UsageError("encode_action: host out of range");
  return 1 + (static_cast<int>(verb) - 1) * num_hosts + host;
}

inline BlueAction decode_action(int index, int num_hosts) {
  if (index < 0 || index >= 1 + 4 * num_hosts)
    throw UsageError("decode_action: index " + std::to_string(index) + " out of range");
  if (index == 0) return {};
  const int k = index - 1;
  return {static_cast<Verb>(1 + k / num_hosts), k % num_hosts};
}

// ---------------------------------------------------------------------------
// State

enum class Compromise { Clean = 0, Scanned = 1, UserAccess = 2, PrivilegedAccess = 3 };

struct HostState {
  Compromise compromise = Compromise::Clean;
  int decoys = 0;
  bool red_knows = false;  // red has scanned this host; survives Restore

  bool operator==(const HostState&) const = default;
};

// Observation layout per host h at offset 4h.
inline constexpr int kScanDetected = 0;
inline constexpr int kExploitDetected = 1;
inline constexpr int kKnownUser = 2;
inline constexpr int kKnownPrivileged = 3;

using Observation = Vector;

enum class RedVerb { Sleep, Scan, Exploit, Escalate, Impact };

struct RedAction {
  RedVerb verb = RedVerb::Sleep;
  int host = -1;

  bool operator==(const RedAction&) const = default;
};

struct StepInfo {
  std::vector<HostState> true_state;
  RedAction red_action;
  bool red_succeeded = false;
};

struct StepOutcome {
  Observation observation;
  double reward = 0.0;
  bool done = false;
  StepInfo info;
};

inline bool has_access(Compromise c) { return c >= Compromise::UserAccess; }

inline bool subnet_reachable(const Topology& topo, const std::vector<HostState>& state, Subnet s) {
  auto any_priv_in = [&](Subnet prev) {
    for (int i = 0; i < topo.size(); ++i)
      if (topo.hosts[i].subnet == prev && state[i].compromise == Compromise::PrivilegedAccess) return true;
    return false;
  };
  switch (s) {
    case Subnet::User: return true;
    case Subnet::Enterprise: return any_priv_in(Subnet::User);
    case Subnet::Operational: return any_priv_in(Subnet::Enterprise);
    case Subnet::Defender: return false;
  }
  return false;
}

/// Beeline attacker decision. Rule order: exploit a known scanned host, escalate
/// an owned host, scan the next subnet, impact the op-server.
inline RedAction choose_red_action(const Topology& topo, const std::vector<HostState>& state) {
  const int n = topo.size();
  for (int h = 0; h < n; ++h) {
    if (state[h].red_knows && !has_access(state[h].compromise) &&
        subnet_reachable(topo, state, topo.hosts[h].subnet))
      return {RedVerb::Exploit, h};
  }
  for (int h = 0; h < n; ++h)
    if (state[h].compromise == Compromise::UserAccess) return {RedVerb::Escalate, h};

  // Frontier: the subnet after the deepest one where red holds privileged access.
  int deepest = -1;
  for (int h = 0; h < n; ++h) {
    const auto s = topo.hosts[h].subnet;
    if (s != Subnet::Defender && state[h].compromise == Compromise::PrivilegedAccess)
      deepest = std::max(deepest, static_cast<int>(s));
  }
  if (deepest >= 0 && deepest < static_cast<int>(Subnet::Operational)) {
    const auto frontier = static_cast<Subnet>(deepest + 1);
    for (int h = 0; h < n; ++h)
      if (topo.hosts[h].subnet == frontier && !state[h].red_knows) return {RedVerb::Scan, h};
  }
  if (state[topo.op_server()].compromise == Compromise::PrivilegedAccess) return {RedVerb::Impact, topo.op_server()};
  return {};
}

/// Negative reward for the state reached after a step.
inline double step_reward(const EnvConfig& cfg, const std::vector<HostState>& state, BlueAction blue, bool impacted) {
  const auto& p = cfg.penalties;
  double r = 0.0;
  for (int h = 0; h < cfg.num_hosts(); ++h) {
    const auto& spec = cfg.topology.hosts[h];
    const auto c = state[h].compromise;
    if (spec.subnet == Subnet::User) {
      if (c == Compromise::PrivilegedAccess) r -= p.user_privileged;
      else if (c == Compromise::UserAccess) r -= p.user_access;
    } else if (spec.subnet == Subnet::Enterprise) {
      if (c == Compromise::PrivilegedAccess) r -= p.enterprise_privileged;
      else if (c == Compromise::UserAccess) r -= p.enterprise_access;
    }
    if (spec.is_op_server && c == Compromise::PrivilegedAccess) r -= p.op_server_privileged;
  }
  if (impacted) r -= p.impact;
  if (blue.verb == Verb::Restore) r -= p.restore_cost;
  return r;
}

class NetworkDefenseEnv {
 public:
  explicit NetworkDefenseEnv(EnvConfig config) : config_(std::move(config)) { config_.validate(); }

  const EnvConfig& config() const { return config_; }
  int observation_size() const { return config_.observation_size(); }
  int action_count() const { return config_.action_count(); }
  int steps() const { return steps_; }
  bool done() const { return steps_ >= config_.episode_length; }
  const std::vector<HostState>& true_state() const { return state_; }
  const Observation& observation() const { return obs_; }

  Observation reset(std::uint64_t seed) {
    rng_.seed(seed);
    steps_ = 0;
    const int n = config_.num_hosts();
    state_.assign(n, HostState{});
    obs_.assign(4 * n, 0.0);
    const int foothold = *config_.topology.foothold();
    state_[foothold].compromise = Compromise::UserAccess;
    state_[foothold].red_knows = true;
    obs_[4 * foothold + kKnownUser] = 1.0;
    started_ = true;
    return obs_;
  }

  /// Overwrites the true state, for tests that need hand-built scenarios.
  void set_state(std::vector<HostState> state) {
    if (static_cast<int>(state.size()) != config_.num_hosts()) throw UsageError("set_state: wrong host count");
    state_ = std::move(state);
  }

  StepOutcome step(int action) {
    if (!started_) throw UsageError("step called before reset");
    if (done()) throw UsageError("step called after episode end");
    const int n = config_.num_hosts();
    const BlueAction blue = decode_action(action, n);

    for (int h = 0; h < n; ++h) {
      obs_[4 * h + kScanDetected] = 0.0;
      obs_[4 * h + kExploitDetected] = 0.0;
    }
    apply_blue(blue);

    StepOutcome out;
    const RedAction red = choose_red_action(config_.topology, state_);
    out.info.red_succeeded = apply_red(red);
    out.info.red_action = red;
    const bool impacted = red.verb == RedVerb::Impact;

    out.reward = step_reward(config_, state_, blue, impacted);
    ++steps_;
    out.done = done();
    out.observation = obs_;
    out.info.true_state = state_;
    return out;
  }

 private:
  void reveal(int h) {
    const auto c = state_[h].compromise;
    obs_[4 * h + kKnownUser] = has_access(c) ? 1.0 : 0.0;
    obs_[4 * h + kKnownPrivileged] = c == Compromise::PrivilegedAccess ? 1.0 : 0.0;
  }

  void apply_blue(BlueAction blue) {
    if (blue.verb == Verb::Sleep) return;
    const int h = blue.host;
    if (config_.topology.hosts[h].subnet == Subnet::Defender) {
      if (blue.verb == Verb::Decoy) ++state_[h].decoys;
      return;
    }
    auto& host = state_[h];
    switch (blue.verb) {
      case Verb::Analyse: break;
      case Verb::Remove:
        if (host.compromise == Compromise::UserAccess) host.compromise = Compromise::Scanned;
        break;
      case Verb::Restore: host.compromise = Compromise::Clean; break;
      case Verb::Decoy: ++host.decoys; break;
      case Verb::Sleep: break;
    }
    reveal(h);
  }

  // Returns whether the red action took effect.
  bool apply_red(RedAction red) {
    const double p_det = config_.p_detect;
    switch (red.verb) {
      case RedVerb::Sleep: return false;
      case RedVerb::Scan: {
        auto& host = state_[red.host];
        host.red_knows = true;
        if (host.compromise == Compromise::Clean) host.compromise = Compromise::Scanned;
        if (rng_.bernoulli(p_det)) obs_[4 * red.host + kScanDetected] = 1.0;
        return true;
      }
      case RedVerb::Exploit: {
        auto& host = state_[red.host];
        if (host.decoys > 0) {
          --host.decoys;
          obs_[4 * red.host + kExploitDetected] = 1.0;
          return false;
        }
        const bool success = rng_.bernoulli(config_.p_exploit);
        const bool seen = rng_.bernoulli(p_det);
        if (success) host.compromise = Compromise::UserAccess;
        if (seen) {
          obs_[4 * red.host + kExploitDetected] = 1.0;
          if (success) obs_[4 * red.host + kKnownUser] = 1.0;
        }
        return success;
      }
      case RedVerb::Escalate: {
        state_[red.host].compromise = Compromise::PrivilegedAccess;
        if (rng_.bernoulli(p_det)) {
          obs_[4 * red.host + kKnownUser] = 1.0;
          obs_[4 * red.host + kKnownPrivileged] = 1.0;
        }
        return true;
      }
      case RedVerb::Impact: return true;
    }
    return false;
  }

  EnvConfig config_;
  Rng rng_;
  std::vector<HostState> state_;
  Observation obs_;
  int steps_ = 0;
  bool started_ = false;
};

/// Restores the most critical host whose known-access bits are set
/// (op-server, operational, enterprise, user; ties to the lowest id), else sleeps.
inline int perfect_defender_action(const EnvConfig& cfg, const Observation& obs) {
  const auto& hosts = cfg.topology.hosts;
  int best = -1;
  int best_priority = -1;
  for (int h = 0; h < cfg.num_hosts(); ++h) {
    if (obs[4 * h + kKnownUser] == 0.0 && obs[4 * h + kKnownPrivileged] == 0.0) continue;
    const int priority = hosts[h].is_op_server ? 10 : static_cast<int>(hosts[h].subnet);
    if (priority > best_priority) {
      best = h;
      best_priority = priority;
    }
  }
  return best < 0 ? 0 : encode_action(Verb::Restore, best, cfg.num_hosts());
}

}  // namespace tgrl::env
