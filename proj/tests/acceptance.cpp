// Acceptance gate: one PASS/FAIL line per criterion. Exit status is non-zero
// if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "tgrl/tgrl.hpp"

using namespace tgrl;
using guidance::Encoding;
using guidance::GuidanceConfig;
using guidance::MaskMode;
using guidance::Technique;
using guidance::Variant;
namespace fs = std::filesystem;

namespace {

constexpr int kRuns = 10;
constexpr int kEpisodes = 500;
constexpr std::uint64_t kBaseSeed = 1000;
constexpr std::uint64_t kTeacherSeed = 7;

int failures = 0;

void report(int id, bool pass, const std::string& what, const std::string& detail) {
  std::printf("%s criterion %d: %s (%s)\n", pass ? "PASS" : "FAIL", id, what.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

double mean_of(std::span<const double> xs, std::size_t first, std::size_t count) {
  double s = 0;
  for (std::size_t i = first; i < first + count; ++i) s += xs[i];
  return s / static_cast<double>(count);
}

// Per-seed mean of the last 50 episodes, then mean and SE across seeds.
MeanSe final_window(const std::vector<Vector>& runs) {
  Vector per_run;
  for (const auto& r : runs) per_run.push_back(mean_of(r, r.size() - harness::kFinalWindow, harness::kFinalWindow));
  return mean_se(per_run);
}

struct Experiment {
  fs::path root;
  const teacher::Teacher* teacher = nullptr;
  std::map<std::string, harness::RunArtifacts> cache;

  harness::ExperimentSpec spec(const GuidanceConfig& g, int episodes, const std::string& sub) const {
    harness::ExperimentSpec s;
    s.guidance = g;
    s.n_runs = kRuns;
    s.episodes = episodes;
    s.train.total_episodes = episodes;
    s.base_seed = kBaseSeed;
    s.teacher_seed = kTeacherSeed;
    s.checkpoint_episodes.clear();
    for (int e : {1, 8, 16, 50, 100, 200, 300, 500})
      if (e <= episodes) s.checkpoint_episodes.push_back(e);
    s.output_dir = (root / sub).string();
    return s;
  }

  const harness::RunArtifacts& run(const GuidanceConfig& g, int episodes = kEpisodes, const std::string& sub = "runs") {
    const auto s = spec(g, episodes, sub);
    const auto key = sub + "/" + s.label();
    auto it = cache.find(key);
    if (it == cache.end()) {
      const auto t0 = std::chrono::steady_clock::now();
      it = cache.emplace(key, harness::run_experiment(s, g.uses_teacher() ? teacher : nullptr)).first;
      std::printf("  ran %s: %d seeds x %d episodes in %.1f s\n", key.c_str(), kRuns, episodes, seconds_since(t0));
    }
    return it->second;
  }
};

// ---------------------------------------------------------------------------

void criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(20260101);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const int in = 1 + static_cast<int>(rng.below(10));
    const int out = 2 + static_cast<int>(rng.below(8));
    std::vector<int> hidden;
    for (int l = static_cast<int>(rng.below(3)); l > 0; --l) hidden.push_back(1 + static_cast<int>(rng.below(10)));
    const auto p = nn::PolicyParams::init(in, hidden, out, rng.next());
    Vector x(static_cast<std::size_t>(in));
    for (auto& v : x) v = rng.uniform(-1.5, 1.5);
    nn::LossSpec loss;
    switch (rng.below(3)) {
      case 0: loss = nn::LossSpec::cross_entropy(static_cast<int>(rng.below(out))); break;
      case 1: {
        Vector w(static_cast<std::size_t>(out));
        for (auto& v : w) v = rng.uniform(-1, 1);
        loss = nn::LossSpec::linear(w, rng.uniform(-1, 1));
        break;
      }
      default: loss = nn::LossSpec::actor_critic(static_cast<int>(rng.below(out)), rng.uniform(-2, 2));
    }
    worst = std::max(worst, nn::grad_check(p, x, loss));
  }
  const double secs = seconds_since(t0);
  report(1, worst < 1e-4 && secs < 30.0, "gradient correctness",
         fmt("max relative error %.3g over 100 nets, %.2f s", worst, secs));
}

void criterion2() {
  int checks = 0, bad = 0;
  auto expect = [&](double got, double want) {
    ++checks;
    if (!(std::abs(got - want) <= 1e-9)) ++bad;
  };
  const int H = 12, A = 49;
  const auto reco = teacher::make_recommendation(env::encode_action(env::Verb::Restore, 3, H), H);
  const int sibling = env::encode_action(env::Verb::Analyse, 3, H);

  // Reward shaping: c1 = 2.5, c2 = 1.0, weight x0.9 per interval or off from interval 5.
  const auto rs_d = GuidanceConfig::make(Technique::RewardShaping, Variant::Decay);
  const auto rs_h = GuidanceConfig::make(Technique::RewardShaping, Variant::HardStop);
  expect(guidance::shape_reward(-2.0, reco.action, reco, rs_d, 0).shaped, 0.5);
  expect(guidance::shape_reward(-1.0, sibling, reco, rs_d, 0).shaped, 0.0);
  expect(guidance::shape_reward(-3.0, reco.action, reco, rs_h, 5).shaped, -3.0);
  const double w[] = {1.0, 0.9, 0.81, 0.729, 0.6561, 0.59049, 0.531441, 0.4782969, 0.43046721, 0.387420489, 0.3486784401};
  for (int i = 0; i <= 10; ++i) {
    expect(guidance::shape_reward(0.0, reco.action, reco, rs_d, i).shaped, 2.5 * w[i]);
    expect(guidance::shape_reward(0.0, sibling, reco, rs_d, i).shaped, 1.0 * w[i]);
    expect(guidance::shape_reward(0.0, reco.action, reco, rs_h, i).shaped, i < 5 ? 2.5 : 0.0);
    expect(guidance::shape_reward(-0.7, 0, reco, rs_d, i).unmodified, -0.7);
  }

  // Masking.
  const auto m = guidance::mask_policy(Vector{0.5, 0.3, 0.2}, teacher::make_recommendation(0, 0), 0.5, MaskMode::Action);
  expect(m[0], 0.5 / 0.75);
  expect(m[1], 0.15 / 0.75);
  expect(m[2], 0.1 / 0.75);
  const double ad[] = {0, 0.25, 0.5, 0.75, 1, 1, 1, 1, 1, 1, 1};
  const double ah[] = {0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1};
  const double hd[] = {0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  const double hh[] = {0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1};
  for (int i = 0; i <= 10; ++i) {
    expect(guidance::masking_schedule(Variant::Decay, MaskMode::Action, i), ad[i]);
    expect(guidance::masking_schedule(Variant::HardStop, MaskMode::Action, i), ah[i]);
    expect(guidance::masking_schedule(Variant::Decay, MaskMode::Host, i), hd[i]);
    expect(guidance::masking_schedule(Variant::HardStop, MaskMode::Host, i), hh[i]);
    expect(GuidanceConfig::make(Technique::ActionMasking, Variant::Decay).c3_at(i), ad[i]);
    expect(GuidanceConfig::make(Technique::ActionMasking, Variant::HardStop).c3_at(i), ah[i]);
    expect(GuidanceConfig::make(Technique::HostMasking, Variant::Decay).c3_at(i), hd[i]);
    expect(GuidanceConfig::make(Technique::HostMasking, Variant::HardStop).c3_at(i), hh[i]);
  }

  // Teacher loss and the combined loss.
  expect(guidance::teacher_loss(nn::log_softmax(Vector(4, 0.0)), 1), std::log(4.0));
  expect(guidance::teacher_loss(nn::log_softmax(Vector(A, 0.0)), 7), std::log(49.0));
  expect(guidance::teacher_loss(Vector{-3.0}, 0), 3.0);
  expect(guidance::combine_loss(1.0, 3.0, 1.0, 0.5, 0.01), 1.99);
  expect(guidance::combine_loss(5.0, 2.0, 3.0, 0.0, 0.0), 2.0);
  expect(guidance::combine_loss(1.7, 9.0, 2.0, 1.0, 0.01), 1.68);

  // sigma and c4: 25%/interval or off at 3; c4 = 0.005 + 5e-4 k, then -2e-4 per interval to 0.005.
  const double sd[] = {0, 0.25, 0.5, 0.75, 1, 1, 1, 1, 1, 1, 1};
  const double cd[] = {0.005, 0.0055, 0.006, 0.0065, 0.007, 0.0068, 0.0066, 0.0064, 0.0062, 0.006, 0.0058};
  const double sh[] = {0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1};
  const double ch[] = {0.005, 0.0055, 0.006, 0.0065, 0.0063, 0.0061, 0.0059, 0.0057, 0.0055, 0.0053, 0.0051};
  for (int i = 0; i <= 10; ++i) {
    const auto d = guidance::aux_schedules(Variant::Decay, i), h = guidance::aux_schedules(Variant::HardStop, i);
    expect(d.sigma, sd[i]);
    expect(d.c4, cd[i]);
    expect(h.sigma, sh[i]);
    expect(h.c4, ch[i]);
    const auto gd = GuidanceConfig::make(Technique::AuxiliaryLoss, Variant::Decay).loss_coefficients(i);
    const auto gh = GuidanceConfig::make(Technique::AuxiliaryLoss, Variant::HardStop).loss_coefficients(i);
    expect(gd.sigma, sd[i]);
    expect(gd.c4, cd[i]);
    expect(gh.sigma, sh[i]);
    expect(gh.c4, ch[i]);
  }
  expect(guidance::aux_schedules(Variant::HardStop, 11).c4, 0.005);
  expect(guidance::aux_schedules(Variant::Decay, 400).c4, 0.005);

  // Augmentation.
  const auto bin = guidance::augment_observation(Vector{}, 5, Encoding::Binary, A, 7);
  const double bits[] = {0, 0, 0, 0, 1, 0, 1};
  for (int i = 0; i < 7; ++i) expect(bin[i], bits[i]);
  const auto oh = guidance::augment_observation(Vector{}, 2, Encoding::OneHot, 5);
  for (int i = 0; i < 5; ++i) expect(oh[i], i == 2 ? 1.0 : 0.0);
  expect(guidance::augment_observation(Vector{}, 26, Encoding::Float, 53)[0], 0.5);
  expect(guidance::augment_observation(Vector(48, 0.0), 3, Encoding::Binary, A).size(), 54);

  report(2, bad == 0, "guidance math matches hand tables", fmt("%d/%d values within 1e-9", checks - bad, checks));
}

void criterion3() {
  Rng rng(31337);
  int violations = 0;
  double worst_sum = 0.0, worst_identity = 0.0;
  for (int k = 0; k < 100000; ++k) {
    const int hosts = 1 + static_cast<int>(rng.below(16));
    const int n = 1 + 4 * hosts;
    Vector p(static_cast<std::size_t>(n));
    double s = 0;
    for (auto& v : p) s += (v = rng.bernoulli(0.1) ? 0.0 : -std::log(1.0 - rng.uniform()));
    if (s == 0.0) p[0] = s = 1.0;
    for (auto& v : p) v /= s;
    const auto reco = teacher::make_recommendation(static_cast<int>(rng.below(n)), hosts);
    const auto mode = rng.bernoulli(0.5) ? MaskMode::Action : MaskMode::Host;
    const double c3 = rng.bernoulli(0.25) ? 0.0 : rng.bernoulli(0.1) ? 1.0 : rng.uniform();
    const auto m = guidance::mask_policy(p, reco, c3, mode);
    const auto keep = guidance::keep_set(reco, mode);
    double total = 0;
    for (int a = 0; a < n; ++a) {
      total += m[a];
      if (m[a] < 0.0) ++violations;
      const bool in_k = std::find(keep.begin(), keep.end(), a) != keep.end();
      if (c3 == 0.0 && !in_k && m[a] != 0.0) ++violations;
    }
    worst_sum = std::max(worst_sum, std::abs(total - 1.0));
    if (c3 == 1.0)
      for (int a = 0; a < n; ++a) worst_identity = std::max(worst_identity, std::abs(m[a] - p[a]));
  }
  report(3, violations == 0 && worst_sum < 1e-9 && worst_identity < 1e-12, "mask distribution validity",
         fmt("1e5 triples; max |sum-1| %.2g, max identity deviation %.2g, %d support/sign violations", worst_sum,
             worst_identity, violations));
}

void criterion4(Experiment& ex) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& base = ex.run(GuidanceConfig{});
  const double secs = seconds_since(t0);
  const env::EnvConfig cfg;
  const auto random = ppo::evaluate_random(cfg, 500, 4242);
  const auto perfect = ppo::evaluate_perfect_defender(cfg, 500, 4242);
  const auto fin = final_window(base.unmodified_returns);
  const double threshold = random.mean + 0.5 * (perfect.mean - random.mean);
  report(4, fin.mean > threshold && secs < 600.0, "baseline learns",
         fmt("final-window mean %.2f vs threshold %.2f (random %.2f, perfect defender %.2f); %.1f s", fin.mean,
             threshold, random.mean, perfect.mean, secs));
}

void criterion5(Experiment& ex, double teacher_level) {
  const auto& base = ex.run(GuidanceConfig{});
  const auto& aux = ex.run(GuidanceConfig::make(Technique::AuxiliaryLoss, Variant::Decay));
  int wins = 0;
  std::string pairs;
  for (int i = 0; i < kRuns; ++i) {
    const auto b = harness::crossing_episode(harness::smooth(base.unmodified_returns[i], 10), teacher_level);
    const auto a = harness::crossing_episode(harness::smooth(aux.unmodified_returns[i], 10), teacher_level);
    const int bx = b.value_or(kEpisodes + 1);  // never crossing counts as beyond the run
    if (a && *a <= 0.5 * bx) ++wins;
    pairs += fmt("%s%s/%s", i ? " " : "", a ? std::to_string(*a).c_str() : "none", b ? std::to_string(*b).c_str() : "none");
  }
  report(5, wins >= 8, "aux-loss decay reaches the teacher level in <= 0.5x the baseline's episodes",
         fmt("%d/10 seeds; aux/baseline crossings: %s; teacher level %.3f", wins, pairs.c_str(), teacher_level));
}

void criterion6(Experiment& ex, const MeanSe& teacher_eval) {
  const auto g = GuidanceConfig::make(Technique::ActionMasking, Variant::HardStop);
  const int early = 5 * ppo::TrainConfig{}.episodes_per_interval;
  const auto& mask = ex.run(g, early, "early");
  const auto& base = ex.run(GuidanceConfig{});
  // Episodes of the first five intervals during which c3 = 0.
  std::vector<int> phase;
  for (int e = 0; e < early; ++e)
    if (g.c3_at(ppo::TrainConfig{}.interval_of(e)) == 0.0) phase.push_back(e);
  double m = 0, b = 0;
  for (int i = 0; i < kRuns; ++i)
    for (int e : phase) {
      m += mask.unmodified_returns[i][e];
      b += base.unmodified_returns[i][e];
    }
  m /= static_cast<double>(kRuns * phase.size());
  b /= static_cast<double>(kRuns * phase.size());
  const double floor = teacher_eval.mean - teacher_eval.se;
  report(6, m >= floor && m > b, "action masking early performance",
         fmt("hard-stop c3=0 episodes 1-%zu: mean %.3f vs teacher %.3f - 1 SE %.3f = %.3f; baseline same window %.3f",
             phase.size(), m, teacher_eval.mean, teacher_eval.se, floor, b));
}

void criterion7(Experiment& ex) {
  const auto base = final_window(ex.run(GuidanceConfig{}).unmodified_returns);
  const std::pair<const char*, GuidanceConfig> techniques[] = {
      {"reward-shaping decay", GuidanceConfig::make(Technique::RewardShaping, Variant::Decay)},
      {"reward-shaping hard-stop", GuidanceConfig::make(Technique::RewardShaping, Variant::HardStop)},
      {"feature-augment binary", GuidanceConfig::make(Technique::FeatureAugment, Variant::Decay, Encoding::Binary)},
      {"feature-augment one-hot", GuidanceConfig::make(Technique::FeatureAugment, Variant::Decay, Encoding::OneHot)},
      {"feature-augment float", GuidanceConfig::make(Technique::FeatureAugment, Variant::Decay, Encoding::Float)},
  };
  bool ok = true;
  std::string detail = fmt("baseline %.2f +- %.2f", base.mean, base.se);
  for (const auto& [name, g] : techniques) {
    const auto t = final_window(ex.run(g).unmodified_returns);
    // Two-sample SE of the difference in means.
    const double se = std::sqrt(base.se * base.se + t.se * t.se);
    const double z = std::abs(t.mean - base.mean) / se;
    ok = ok && z <= 2.0;
    detail += fmt("; %s %.2f +- %.2f (|diff| = %.2f SE)", name, t.mean, t.se, z);
  }
  report(7, ok, "null results preserved (final-window means within 2 SE of baseline)", detail);
}

void criterion8(Experiment& ex) {
  int episodes = 0, mismatches = 0;
  for (auto v : {Variant::Decay, Variant::HardStop}) {
    const auto& art = ex.run(GuidanceConfig::make(Technique::RewardShaping, v));
    for (std::size_t r = 0; r < art.trace_csvs.size(); ++r) {
      const auto logged = harness::read_run_csv(art.run_csvs[r]).at("unmodified_return");
      const auto traces = harness::read_trace_csv(art.trace_csvs[r]);
      for (std::size_t e = 0; e < traces.size(); ++e, ++episodes)
        if (harness::replay_return(env::EnvConfig{}, traces[e]) != logged[e]) ++mismatches;
    }
  }
  report(8, mismatches == 0 && episodes == 2 * kRuns * kEpisodes, "unmodified-reward bookkeeping",
         fmt("%d reward-shaping episodes replayed, %d bit mismatches", episodes, mismatches));
}

void criterion9() {
  // Linear ground truth over a 12-feature binary reference.
  const Vector truth{0.5, -0.25, 0.1, 0.0, -0.4, 0.3, 0.05, -0.15, 0.2, 0.0, 0.35, -0.05};
  Vector ref(truth.size());
  for (std::size_t i = 0; i < ref.size(); ++i) ref[i] = i % 3 == 0 ? 1.0 : 0.0;
  const auto samples = explain::perturb(ref, 2000, 0.1, 99);
  Vector y, w;
  for (const auto& s : samples) {
    double v = 0.2;
    for (std::size_t i = 0; i < s.size(); ++i) v += truth[i] * s[i];
    y.push_back(v);
    w.push_back(explain::kernel(explain::distance(s, ref), explain::default_kernel_width(ref.size())));
  }
  const auto model = explain::fit_local(samples, y, w);
  double worst = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double err = truth[i] == 0.0 ? std::abs(model.coefficients[i]) / 0.05 : std::abs(model.coefficients[i] - truth[i]) / std::abs(truth[i]);
    worst = std::max(worst, err);
  }

  // Teacher-copying actor: the trunk reads only the one-hot teacher block.
  Checkpoint c;
  c.params = nn::PolicyParams::zeros(48 + 49, {49}, 49);
  for (int a = 0; a < 49; ++a) {
    c.params.trunk[0].weight(a, 48 + a) = 2.0;
    c.params.actor.weight(a, a) = 6.0;
  }
  c.optimizer = nn::OptimizerState::for_params(c.params);
  c.meta.technique = "feature-augment";
  c.meta.encoding = "one-hot";
  const auto t = teacher::scripted_teacher(12);
  const auto reference = explain::reference_input(env::EnvConfig{}, 5, 0, c, &t);
  const int reco = t.recommend(Vector(reference.begin(), reference.begin() + 48)).action;
  const auto a = explain::explain_checkpoint(c, reference, &t, {});
  const auto& f = a.features[48 + reco];
  const bool copy_ok = f.rank == 1 && f.direction == explain::Direction::Towards;
  report(9, worst < 0.05 && copy_ok, "LIME fidelity",
         fmt("linear model max relative error %.2e (2000 samples); teacher feature %d rank %d, %s", worst, 48 + reco,
             f.rank, f.direction == explain::Direction::Towards ? "Towards" : "Away"));
}

void criterion10(Experiment& ex) {
  const auto g = GuidanceConfig::make(Technique::AuxiliaryLoss, Variant::Decay);
  const auto& first = ex.run(g);
  const auto& second = ex.run(g, kEpisodes, "rerun");
  std::vector<std::pair<fs::path, fs::path>> files;
  for (std::size_t i = 0; i < first.run_csvs.size(); ++i) {
    files.emplace_back(first.run_csvs[i], second.run_csvs[i]);
    files.emplace_back(first.trace_csvs[i], second.trace_csvs[i]);
  }
  for (std::size_t i = 0; i < first.checkpoints.size(); ++i) files.emplace_back(first.checkpoints[i], second.checkpoints[i]);
  files.emplace_back(first.curve_csv, second.curve_csv);
  int differ = 0;
  for (const auto& [a, b] : files)
    if (a == b || slurp(a) != slurp(b)) ++differ;
  report(10, differ == 0, "determinism", fmt("%zu files from two aux-loss runs compared, %d differ", files.size(), differ));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string workdir = (fs::temp_directory_path() / "tgrl_acceptance").string();
  app.add_option("--workdir", workdir, "Scratch directory for experiment artifacts");
  CLI11_PARSE(app, argc, argv);
  fs::remove_all(workdir);
  fs::create_directories(workdir);

  try {
    criterion1();
    criterion2();
    criterion3();

    const auto t0 = std::chrono::steady_clock::now();
    const auto teacher_ckpt = teacher::train_teacher(env::EnvConfig{}, ppo::TrainConfig{}, kTeacherSeed);
    save_checkpoint(teacher_ckpt, fs::path(workdir) / "teacher.ckpt");
    const auto teacher = teacher::teacher_from_checkpoint(teacher_ckpt);
    const MeanSe teacher_eval{*teacher_ckpt.meta.eval_mean, *teacher_ckpt.meta.eval_se};
    std::printf("  teacher (seed %llu, 100 episodes): eval %.3f +- %.3f in %.1f s\n",
                static_cast<unsigned long long>(kTeacherSeed), teacher_eval.mean, teacher_eval.se, seconds_since(t0));

    Experiment ex{workdir, &teacher, {}};
    criterion4(ex);
    criterion5(ex, teacher_eval.mean);
    criterion6(ex, teacher_eval);
    criterion7(ex);
    criterion8(ex);
    criterion9();
    criterion10(ex);
  } catch (const std::exception& e) {
    std::printf("FAIL acceptance aborted: %s\n", e.what());
    return 1;
  }
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
