#pragma once

// Experiment orchestration: independent seeded runs, per-run CSV logs and
// checkpoints, mean +- SE learning curves over unmodified returns, the
// cross-technique comparison table and SVG plots.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tgrl/checkpoint.hpp"
#include "tgrl/env.hpp"
#include "tgrl/guidance.hpp"
#include "tgrl/ppo.hpp"
#include "tgrl/teacher_training.hpp"

namespace tgrl::harness {

namespace fs = std::filesystem;

inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

struct ExperimentSpec {
  env::EnvConfig env;
  ppo::TrainConfig train;
  guidance::GuidanceConfig guidance;
  int n_runs = 10;
  int episodes = 500;
  std::uint64_t base_seed = 1000;
  std::uint64_t teacher_seed = 7;
  std::vector<int> checkpoint_episodes{1, 8, 16, 50, 100, 200, 300, 500};
  int smoothing_window = 10;
  std::string output_dir = "runs";
  int jobs = 1;

  void validate() const {
    env.validate();
    guidance.validate();
    if (n_runs < 2) throw ConfigError("experiment: n_runs must be >= 2 for standard errors");
    if (episodes < 1) throw ConfigError("experiment: episodes must be positive");
    if (smoothing_window < 1) throw ConfigError("experiment: smoothing_window must be positive");
    for (int e : checkpoint_episodes)
      if (e < 1 || e > episodes) throw ConfigError("experiment: checkpoint episode " + std::to_string(e) + " outside [1, episodes]");
  }

  /// File-name stem: technique_variant, with the encoding standing in for the
  /// variant on feature-augment runs.
  std::string label() const {
    const auto t = std::string(guidance::to_string(guidance.technique));
    if (guidance.technique == guidance::Technique::Baseline) return t;
    if (guidance.augments()) return t + "_" + std::string(guidance::to_string(guidance.encoding));
    return t + "_" + std::string(guidance::to_string(guidance.variant));
  }
};

/// Single JSON document: {env, training, guidance, experiment}.
inline ExperimentSpec spec_from_json(const nlohmann::json& j) {
  ExperimentSpec s;
  if (j.contains("env")) s.env = j.at("env").get<env::EnvConfig>();
  if (j.contains("training")) {
    nlohmann::json t = s.train;
    t.update(j.at("training"));
    s.train = t.get<ppo::TrainConfig>();
  }
  if (j.contains("guidance")) s.guidance = j.at("guidance").get<guidance::GuidanceConfig>();
  if (j.contains("experiment")) {
    const auto& e = j.at("experiment");
    s.n_runs = e.value("n_runs", s.n_runs);
    s.episodes = e.value("episodes", s.episodes);
    s.base_seed = e.value("base_seed", s.base_seed);
    s.teacher_seed = e.value("teacher_seed", s.teacher_seed);
    s.checkpoint_episodes = e.value("checkpoint_episodes", s.checkpoint_episodes);
    s.smoothing_window = e.value("smoothing_window", s.smoothing_window);
    s.output_dir = e.value("output_dir", s.output_dir);
    s.jobs = e.value("jobs", s.jobs);
  }
  s.train.total_episodes = s.episodes;
  return s;
}

inline nlohmann::json spec_to_json(const ExperimentSpec& s) {
  return {{"env", s.env},
          {"training", s.train},
          {"guidance", s.guidance},
          {"experiment",
           {{"n_runs", s.n_runs},
            {"episodes", s.episodes},
            {"base_seed", s.base_seed},
            {"teacher_seed", s.teacher_seed},
            {"checkpoint_episodes", s.checkpoint_episodes},
            {"smoothing_window", s.smoothing_window},
            {"output_dir", s.output_dir},
            {"jobs", s.jobs}}}};
}

inline ExperimentSpec load_spec(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return spec_from_json(j);
}

// ---------------------------------------------------------------------------
// Curves

/// Trailing running average; the first episodes average over what exists.
inline Vector smooth(std::span<const double> xs, int window) {
  Vector out(xs.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    acc += xs[i];
    if (i >= static_cast<std::size_t>(window)) acc -= xs[i - window];
    const auto n = std::min<std::size_t>(i + 1, static_cast<std::size_t>(window));
    out[i] = acc / static_cast<double>(n);
  }
  return out;
}

struct Curve {
  std::string label;
  Vector mean;
  Vector se;
};

/// Smooth each run, then mean and SE (sample SD / sqrt(n_runs)) per episode.
inline Curve aggregate(const std::vector<Vector>& per_run_returns, int window = 10, std::string label = {}) {
  if (per_run_returns.size() < 2) throw UsageError("aggregate: need at least 2 runs");
  const std::size_t len = per_run_returns.front().size();
  std::vector<Vector> smoothed;
  for (const auto& r : per_run_returns) {
    if (r.size() != len) throw UsageError("aggregate: runs differ in length");
    smoothed.push_back(smooth(r, window));
  }
  Curve c{std::move(label), Vector(len), Vector(len)};
  Vector column(per_run_returns.size());
  for (std::size_t e = 0; e < len; ++e) {
    for (std::size_t r = 0; r < smoothed.size(); ++r) column[r] = smoothed[r][e];
    const auto ms = mean_se(column);
    c.mean[e] = ms.mean;
    c.se[e] = ms.se;
  }
  return c;
}

/// First 1-based episode whose value reaches `level`.
inline std::optional<int> crossing_episode(std::span<const double> series, double level) {
  for (std::size_t i = 0; i < series.size(); ++i)
    if (series[i] >= level) return static_cast<int>(i) + 1;
  return std::nullopt;
}

inline double window_mean(std::span<const double> xs, std::size_t first, std::size_t count) {
  if (first >= xs.size()) return 0.0;
  count = std::min(count, xs.size() - first);
  double s = 0.0;
  for (std::size_t i = first; i < first + count; ++i) s += xs[i];
  return s / static_cast<double>(count);
}

inline constexpr int kEarlyWindow = 40;
inline constexpr int kFinalWindow = 50;

struct ComparisonRow {
  std::string label;
  std::optional<int> crossing;
  double early_mean = 0.0;  // episodes 1..40
  double final_mean = 0.0;  // last 50 episodes
  std::optional<double> speedup;  // reference crossing / this crossing
  int rank = 0;
};

struct ComparisonReport {
  double teacher_level = 0.0;
  std::vector<ComparisonRow> rows;  // sorted by rank
};

/// Speed-ups are relative to the curve labelled "baseline" when present,
/// otherwise to the slowest crossing curve.
inline ComparisonReport compare(const std::vector<Curve>& curves, double teacher_level) {
  ComparisonReport rep;
  rep.teacher_level = teacher_level;
  if (curves.empty()) return rep;
  const std::size_t len = curves.front().mean.size();
  for (const auto& c : curves)
    if (c.mean.size() != len) throw UsageError("compare: curves differ in length");
  for (const auto& c : curves) {
    ComparisonRow row;
    row.label = c.label;
    row.crossing = crossing_episode(c.mean, teacher_level);
    row.early_mean = window_mean(c.mean, 0, kEarlyWindow);
    row.final_mean = window_mean(c.mean, len > kFinalWindow ? len - kFinalWindow : 0, kFinalWindow);
    rep.rows.push_back(row);
  }
  std::optional<int> reference;
  for (const auto& r : rep.rows)
    if (r.label.rfind("baseline", 0) == 0) reference = r.crossing;
  if (!reference)
    for (const auto& r : rep.rows)
      if (r.crossing && (!reference || *r.crossing > *reference)) reference = r.crossing;
  for (auto& r : rep.rows)
    if (reference && r.crossing) r.speedup = static_cast<double>(*reference) / *r.crossing;
  std::stable_sort(rep.rows.begin(), rep.rows.end(), [](const ComparisonRow& a, const ComparisonRow& b) {
    if (a.crossing.has_value() != b.crossing.has_value()) return a.crossing.has_value();
    if (a.crossing && *a.crossing != *b.crossing) return *a.crossing < *b.crossing;
    return a.final_mean > b.final_mean;
  });
  for (std::size_t i = 0; i < rep.rows.size(); ++i) rep.rows[i].rank = static_cast<int>(i) + 1;
  return rep;
}

inline void write_report_csv(std::ostream& out, const ComparisonReport& rep) {
  out << "rank,label,crossing_episode,early_mean,final_mean,speedup,teacher_level\n";
  for (const auto& r : rep.rows) {
    out << r.rank << ',' << r.label << ',' << (r.crossing ? std::to_string(*r.crossing) : "none") << ','
        << format_double(r.early_mean) << ',' << format_double(r.final_mean) << ','
        << (r.speedup ? format_double(*r.speedup) : "") << ',' << format_double(rep.teacher_level) << '\n';
  }
}

// ---------------------------------------------------------------------------
// CSV persistence

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline constexpr const char* kRunCsvHeader =
    "episode,unmodified_return,shaped_return,sigma,c3,c4,loss_total,loss_ppo_actor,loss_teacher,loss_critic,loss_entropy";

inline void write_run_csv(const fs::path& path, const std::vector<ppo::EpisodeLog>& logs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path.string());
  out << kRunCsvHeader << '\n';
  for (const auto& l : logs) {
    out << l.record.episode << ',' << format_double(l.record.unmodified_return) << ','
        << format_double(l.record.shaped_return) << ',' << format_double(l.sigma) << ',' << format_double(l.c3) << ','
        << format_double(l.c4) << ',' << format_double(l.loss.total) << ',' << format_double(l.loss.ppo_actor) << ','
        << format_double(l.loss.teacher) << ',' << format_double(l.loss.critic) << ','
        << format_double(l.loss.entropy) << '\n';
  }
  if (!out) throw UsageError("failed writing " + path.string());
}

/// Columns of a run CSV by header name.
inline std::map<std::string, Vector> read_run_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  const auto header = split_csv_line(line);
  std::map<std::string, Vector> cols;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) throw ConfigError("malformed row in " + path.string());
    for (std::size_t i = 0; i < cells.size(); ++i) cols[header[i]].push_back(std::stod(cells[i]));
  }
  return cols;
}

/// One line per episode: episode, env_seed, space-separated action indices.
inline void write_trace_csv(const fs::path& path, const std::vector<ppo::EpisodeLog>& logs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path.string());
  out << "episode,env_seed,actions\n";
  for (const auto& l : logs) {
    out << l.record.episode << ',' << l.record.env_seed << ',';
    for (std::size_t i = 0; i < l.record.actions.size(); ++i) out << (i ? " " : "") << l.record.actions[i];
    out << '\n';
  }
}

struct TraceEpisode {
  int episode = 0;
  std::uint64_t env_seed = 0;
  std::vector<int> actions;
};

inline std::vector<TraceEpisode> read_trace_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<TraceEpisode> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 3) throw ConfigError("malformed trace row in " + path.string());
    TraceEpisode t;
    t.episode = std::stoi(cells[0]);
    t.env_seed = std::stoull(cells[1]);
    std::istringstream acts(cells[2]);
    for (int a; acts >> a;) t.actions.push_back(a);
    out.push_back(std::move(t));
  }
  return out;
}

/// Environment return of a recorded action sequence, with no guidance applied.
inline double replay_return(const env::EnvConfig& cfg, const TraceEpisode& t) {
  env::NetworkDefenseEnv environment(cfg);
  environment.reset(t.env_seed);
  double total = 0.0;
  for (int a : t.actions) total += environment.step(a).reward;
  return total;
}

inline void write_curve_csv(const fs::path& path, const Curve& c) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path.string());
  out << "episode,mean,se,label\n";
  for (std::size_t i = 0; i < c.mean.size(); ++i)
    out << i + 1 << ',' << format_double(c.mean[i]) << ',' << format_double(c.se[i]) << ',' << c.label << '\n';
}

inline Curve read_curve_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  Curve c;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 4) throw ConfigError("malformed curve row in " + path.string());
    c.mean.push_back(std::stod(cells[1]));
    c.se.push_back(std::stod(cells[2]));
    c.label = cells[3];
  }
  return c;
}

/// All `*_curve.csv` files in a directory, sorted by file name.
inline std::vector<Curve> load_curves(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (name.size() > 10 && name.ends_with("_curve.csv")) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Curve> out;
  for (const auto& f : files) out.push_back(read_curve_csv(f));
  return out;
}

// ---------------------------------------------------------------------------
// Running experiments

struct RunArtifacts {
  std::string label;
  std::vector<Vector> unmodified_returns;  // per run
  std::vector<Vector> shaped_returns;
  std::vector<ppo::RunResult> runs;
  Curve curve;
  std::vector<fs::path> run_csvs;
  std::vector<fs::path> trace_csvs;
  std::vector<fs::path> checkpoints;
  fs::path curve_csv;
};

inline ppo::RunOptions run_options(const ExperimentSpec& spec, const teacher::Teacher* t, int run) {
  ppo::RunOptions o;
  o.env = spec.env;
  o.train = spec.train;
  o.train.total_episodes = spec.episodes;
  o.guidance = spec.guidance;
  o.teacher = t;
  o.seed = spec.base_seed + static_cast<std::uint64_t>(run);
  o.checkpoint_episodes = spec.checkpoint_episodes;
  return o;
}

/// Runs i = 0..n_runs-1 use seed base_seed + i and share nothing mutable.
inline RunArtifacts run_experiment(const ExperimentSpec& spec, const teacher::Teacher* t, bool keep_runs = false) {
  spec.validate();
  if (spec.guidance.uses_teacher() && !t)
    throw UsageError("experiment: technique '" + std::string(guidance::to_string(spec.guidance.technique)) +
                     "' needs a teacher checkpoint");
  const fs::path dir(spec.output_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw UsageError("cannot create output directory " + dir.string());

  std::vector<ppo::RunResult> results(static_cast<std::size_t>(spec.n_runs));
  const int jobs = std::max(1, spec.jobs);
  for (int start = 0; start < spec.n_runs; start += jobs) {
    std::vector<std::future<ppo::RunResult>> pending;
    for (int i = start; i < std::min(spec.n_runs, start + jobs); ++i)
      pending.push_back(std::async(jobs > 1 ? std::launch::async : std::launch::deferred,
                                   [&spec, t, i] { return ppo::train_run(run_options(spec, t, i)); }));
    for (std::size_t k = 0; k < pending.size(); ++k) results[static_cast<std::size_t>(start) + k] = pending[k].get();
  }

  RunArtifacts art;
  art.label = spec.label();
  for (int i = 0; i < spec.n_runs; ++i) {
    auto& r = results[static_cast<std::size_t>(i)];
    const std::string stem = art.label + "_run" + std::to_string(i);
    Vector unmod, shaped;
    for (const auto& l : r.episodes) {
      unmod.push_back(l.record.unmodified_return);
      shaped.push_back(l.record.shaped_return);
    }
    art.unmodified_returns.push_back(std::move(unmod));
    art.shaped_returns.push_back(std::move(shaped));
    art.run_csvs.push_back(dir / (stem + ".csv"));
    write_run_csv(art.run_csvs.back(), r.episodes);
    art.trace_csvs.push_back(dir / (stem + "_trace.csv"));
    write_trace_csv(art.trace_csvs.back(), r.episodes);
    for (const auto& c : r.checkpoints) {
      art.checkpoints.push_back(dir / (stem + "_ep" + std::to_string(c.meta.episode) + ".ckpt"));
      save_checkpoint(c, art.checkpoints.back());
    }
    if (keep_runs) art.runs.push_back(std::move(r));
  }
  art.curve = aggregate(art.unmodified_returns, spec.smoothing_window, art.label);
  art.curve_csv = dir / (art.label + "_curve.csv");
  write_curve_csv(art.curve_csv, art.curve);
  return art;
}

// ---------------------------------------------------------------------------
// SVG

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

/// Line chart of mean curves with shaded +-1 SE bands.
inline std::string plot(const std::vector<Curve>& curves) {
  if (curves.empty()) throw UsageError("plot: no curves");
  static constexpr const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
                                            "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#393b79", "#637939"};
  constexpr double width = 800, height = 500, left = 70, right = 190, top = 30, bottom = 60;
  std::size_t len = 0;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& c : curves) {
    len = std::max(len, c.mean.size());
    for (std::size_t i = 0; i < c.mean.size(); ++i) {
      const double se = i < c.se.size() ? c.se[i] : 0.0;
      lo = std::min(lo, c.mean[i] - se);
      hi = std::max(hi, c.mean[i] + se);
    }
  }
  if (len == 0) throw UsageError("plot: curves are empty");
  if (!(hi > lo)) {
    lo -= 1.0;
    hi += 1.0;
  }
  const double plot_w = width - left - right, plot_h = height - top - bottom;
  auto px = [&](std::size_t i) { return left + (len > 1 ? plot_w * static_cast<double>(i) / static_cast<double>(len - 1) : 0.0); };
  auto py = [&](double v) { return top + plot_h * (hi - v) / (hi - lo); };
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return std::string(buf);
  };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
  svg << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
  svg << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w << "\" y2=\"" << top + plot_h
      << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + plot_h
      << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 4.0;
    svg << "<text x=\"" << left - 6 << "\" y=\"" << num(py(v) + 4) << "\" font-size=\"11\" text-anchor=\"end\">"
        << num(v) << "</text>\n";
    const auto i = static_cast<std::size_t>((len - 1) * k / 4);
    svg << "<text x=\"" << num(px(i)) << "\" y=\"" << top + plot_h + 16 << "\" font-size=\"11\" text-anchor=\"middle\">"
        << i + 1 << "</text>\n";
  }
  svg << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << height - 15 << "\" font-size=\"13\" text-anchor=\"middle\">episode</text>\n";
  svg << "<text x=\"18\" y=\"" << top + plot_h / 2 << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
      << top + plot_h / 2 << ")\">return</text>\n";

  for (std::size_t k = 0; k < curves.size(); ++k) {
    const auto& c = curves[k];
    const char* colour = palette[k % std::size(palette)];
    std::ostringstream band;
    for (std::size_t i = 0; i < c.mean.size(); ++i) {
      const double se = i < c.se.size() ? c.se[i] : 0.0;
      band << (i == 0 ? "M" : " L") << num(px(i)) << ',' << num(py(c.mean[i] + se));
    }
    for (std::size_t i = c.mean.size(); i-- > 0;) {
      const double se = i < c.se.size() ? c.se[i] : 0.0;
      band << " L" << num(px(i)) << ',' << num(py(c.mean[i] - se));
    }
    band << " Z";
    svg << "<path class=\"band\" d=\"" << band.str() << "\" fill=\"" << colour << "\" fill-opacity=\"0.2\" stroke=\"none\"/>\n";
    svg << "<polyline class=\"mean\" fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < c.mean.size(); ++i) svg << (i ? " " : "") << num(px(i)) << ',' << num(py(c.mean[i]));
    svg << "\"/>\n";
    const double ly = top + 16.0 * static_cast<double>(k) + 10.0;
    svg << "<rect x=\"" << left + plot_w + 12 << "\" y=\"" << num(ly - 8) << "\" width=\"12\" height=\"8\" fill=\"" << colour
        << "\"/>\n";
    svg << "<text class=\"legend\" x=\"" << left + plot_w + 30 << "\" y=\"" << num(ly) << "\" font-size=\"12\">"
        << xml_escape(c.label) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace tgrl::harness
