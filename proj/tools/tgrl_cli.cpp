// tgrl: train teachers and guided agents, evaluate, explain and report.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "tgrl/tgrl.hpp"

namespace {

using namespace tgrl;
namespace fs = std::filesystem;

harness::ExperimentSpec spec_or_default(const std::string& config) {
  return config.empty() ? harness::ExperimentSpec{} : harness::load_spec(config);
}

std::optional<teacher::Teacher> load_teacher(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return teacher::teacher_from_checkpoint(load_checkpoint(path));
}

// Guidance settings that shape an agent's input, recovered from checkpoint metadata.
guidance::GuidanceConfig guidance_of(const Checkpoint& c) {
  auto g = guidance::GuidanceConfig::make(guidance::technique_from_string(c.meta.technique),
                                          guidance::variant_from_string(c.meta.variant), c.encoding());
  g.binary_width = c.meta.binary_width;
  return g;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Teacher-guided reinforcement learning for network defence"};
  app.require_subcommand(1);

  // train-teacher
  std::string tt_config, tt_out;
  std::optional<std::uint64_t> tt_seed;
  int tt_episodes = teacher::kTeacherEpisodes;
  auto* tt = app.add_subcommand("train-teacher", "Train a baseline PPO teacher and record its greedy evaluation");
  tt->add_option("--config", tt_config, "Experiment JSON (env and training sections are used)");
  tt->add_option("--seed", tt_seed, "Teacher seed (default: experiment.teacher_seed)");
  tt->add_option("--episodes", tt_episodes, "Training episodes")->check(CLI::NonNegativeNumber);
  tt->add_option("--out", tt_out, "Checkpoint path")->required();

  // train
  std::string tr_config, tr_technique, tr_variant, tr_encoding, tr_teacher, tr_out;
  std::optional<int> tr_runs, tr_episodes, tr_jobs;
  auto* tr = app.add_subcommand("train", "Run one technique/variant over all seeds");
  tr->add_option("--config", tr_config, "Experiment JSON")->required();
  tr->add_option("--technique", tr_technique,
                 "baseline | reward-shaping | action-masking | host-masking | aux-loss | feature-augment");
  tr->add_option("--variant", tr_variant, "decay | hard-stop");
  tr->add_option("--encoding", tr_encoding, "binary | one-hot | float (feature-augment)");
  tr->add_option("--teacher", tr_teacher, "Teacher checkpoint (required unless baseline)");
  tr->add_option("--out", tr_out, "Output directory");
  tr->add_option("--runs", tr_runs, "Override experiment.n_runs");
  tr->add_option("--episodes", tr_episodes, "Override experiment.episodes");
  tr->add_option("--jobs", tr_jobs, "Parallel runs");

  // evaluate
  std::string ev_ckpt, ev_config, ev_teacher;
  int ev_episodes = 50;
  std::uint64_t ev_seed = 0;
  auto* ev = app.add_subcommand("evaluate", "Greedy evaluation of a checkpoint");
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint")->required();
  ev->add_option("--episodes", ev_episodes, "Episodes")->check(CLI::Range(2, 1000000));
  ev->add_option("--seed", ev_seed, "Evaluation seed");
  ev->add_option("--config", ev_config, "Experiment JSON for the environment");
  ev->add_option("--teacher", ev_teacher, "Teacher checkpoint (feature-augment agents)");

  // explain
  std::string ex_ckpt, ex_out, ex_teacher, ex_config, ex_target = "argmax";
  std::optional<int> ex_tag;
  int ex_steps = 0;
  explain::ExplainConfig ex_cfg;
  auto* ex = app.add_subcommand("explain", "Local feature attribution for a checkpoint");
  ex->add_option("--ckpt", ex_ckpt, "Checkpoint")->required();
  ex->add_option("--out", ex_out, "Attribution CSV")->required();
  ex->add_option("--episode-tag", ex_tag, "Expected checkpoint episode");
  ex->add_option("--teacher", ex_teacher, "Teacher checkpoint");
  ex->add_option("--config", ex_config, "Experiment JSON for the environment");
  ex->add_option("--seed", ex_cfg.seed, "Reference episode and perturbation seed");
  ex->add_option("--steps", ex_steps, "Teacher steps taken before the reference state")->check(CLI::NonNegativeNumber);
  ex->add_option("--samples", ex_cfg.n_samples, "Perturbation samples")->check(CLI::Range(2, 10000000));
  ex->add_option("--flip", ex_cfg.flip_prob, "Flip probability")->check(CLI::Range(0.0, 1.0));
  ex->add_option("--target", ex_target, "argmax | teacher")->check(CLI::IsMember({"argmax", "teacher"}));

  // plot
  std::string pl_in, pl_out;
  auto* pl = app.add_subcommand("plot", "SVG learning curves from every *_curve.csv in a directory");
  pl->add_option("--in", pl_in, "Directory")->required()->check(CLI::ExistingDirectory);
  pl->add_option("--out", pl_out, "SVG path")->required();

  // compare
  std::string cp_in, cp_out;
  double cp_level = 0.0;
  auto* cp = app.add_subcommand("compare", "Crossing episodes, early/final means and ranking");
  cp->add_option("--in", cp_in, "Directory")->required()->check(CLI::ExistingDirectory);
  cp->add_option("--teacher-level", cp_level, "Teacher evaluation mean")->required();
  cp->add_option("--out", cp_out, "Report CSV")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*tt) {
      const auto spec = spec_or_default(tt_config);
      const std::uint64_t seed = tt_seed.value_or(spec.teacher_seed);
      const auto ckpt = teacher::train_teacher(spec.env, spec.train, seed, tt_episodes);
      save_checkpoint(ckpt, tt_out);
      std::printf("teacher seed=%llu episodes=%d eval_mean=%.6f eval_se=%.6f -> %s\n",
                  static_cast<unsigned long long>(seed), tt_episodes, *ckpt.meta.eval_mean, *ckpt.meta.eval_se,
                  tt_out.c_str());
    } else if (*tr) {
      auto spec = harness::load_spec(tr_config);
      if (!tr_technique.empty() || !tr_variant.empty() || !tr_encoding.empty()) {
        const auto t = tr_technique.empty() ? spec.guidance.technique : guidance::technique_from_string(tr_technique);
        const auto v = tr_variant.empty() ? spec.guidance.variant : guidance::variant_from_string(tr_variant);
        const auto e = tr_encoding.empty() ? spec.guidance.encoding : guidance::encoding_from_string(tr_encoding);
        const int bw = spec.guidance.binary_width;
        spec.guidance = guidance::GuidanceConfig::make(t, v, e);
        spec.guidance.binary_width = bw;
      }
      if (!tr_out.empty()) spec.output_dir = tr_out;
      if (tr_runs) spec.n_runs = *tr_runs;
      if (tr_episodes) spec.episodes = *tr_episodes, spec.train.total_episodes = *tr_episodes;
      if (tr_jobs) spec.jobs = *tr_jobs;
      const auto teacher = load_teacher(tr_teacher);
      const auto art = harness::run_experiment(spec, teacher ? &*teacher : nullptr);
      const auto n = art.curve.mean.size();
      const double final_mean = harness::window_mean(art.curve.mean, n > 50 ? n - 50 : 0, 50);
      std::printf("%s: %d runs x %d episodes, final-window mean %.4f -> %s\n", art.label.c_str(), spec.n_runs,
                  spec.episodes, final_mean, art.curve_csv.string().c_str());
    } else if (*ev) {
      const auto spec = spec_or_default(ev_config);
      const auto ckpt = load_checkpoint(ev_ckpt);
      const auto teacher = load_teacher(ev_teacher);
      const auto r = ppo::evaluate(ckpt.params, spec.env, ev_episodes, ev_seed, guidance_of(ckpt),
                                   teacher ? &*teacher : nullptr);
      std::printf("mean %.6f se %.6f episodes %d\n", r.mean, r.se, ev_episodes);
    } else if (*ex) {
      const auto spec = spec_or_default(ex_config);
      const auto ckpt = load_checkpoint(ex_ckpt);
      if (ex_tag && *ex_tag != ckpt.meta.episode)
        throw UsageError("checkpoint is from episode " + std::to_string(ckpt.meta.episode) + ", not " +
                         std::to_string(*ex_tag));
      const auto teacher = load_teacher(ex_teacher);
      ex_cfg.target = ex_target == "teacher" ? explain::ExplainTarget::TeacherAction : explain::ExplainTarget::ArgmaxAction;
      const auto ref = explain::reference_input(spec.env, ex_cfg.seed, ex_steps, ckpt, teacher ? &*teacher : nullptr);
      const auto a = explain::explain_checkpoint(ckpt, ref, teacher ? &*teacher : nullptr, ex_cfg);
      auto out = open_out(ex_out);
      explain::write_attribution_csv(out, a);
      std::printf("explained action %d (p=%.4f); reco %s, rank %d\n", a.explained_action, a.explained_output,
                  a.reco_action ? std::to_string(*a.reco_action).c_str() : "none", a.reco_rank);
    } else if (*pl) {
      const auto curves = harness::load_curves(pl_in);
      auto out = open_out(pl_out);
      out << harness::plot(curves);
      std::printf("%zu curves -> %s\n", curves.size(), pl_out.c_str());
    } else if (*cp) {
      const auto curves = harness::load_curves(cp_in);
      if (curves.empty()) throw UsageError("no *_curve.csv files in " + cp_in);
      const auto rep = harness::compare(curves, cp_level);
      auto out = open_out(cp_out);
      harness::write_report_csv(out, rep);
      harness::write_report_csv(std::cout, rep);
    }
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
