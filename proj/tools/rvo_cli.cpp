#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "rvo/eval/experiment.hpp"
#include "rvo/worldmap/map.hpp"

namespace fs = std::filesystem;
using namespace rvo;

namespace {

// RVO_SEED wins over --seed, which wins over the scenario file.
std::uint64_t root_seed(std::uint64_t flag) {
  if (const char* env = std::getenv("RVO_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidArgument, std::string("RVO_SEED is not an unsigned integer: ") + env);
    }
  }
  return flag;
}

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw Error(ErrorCode::InvalidArgument, "cannot write " + p.string());
  return out;
}

struct SimulateArgs {
  std::string scenario;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out;
  bool frames = false;
};

int simulate(const SimulateArgs& a) {
  Scenario s = load_scenario(a.scenario);
  if (a.seed_given || std::getenv("RVO_SEED")) s.seed = root_seed(a.seed);
  const World w = generate_world(s);
  const fs::path dir(a.out);
  fs::create_directories(dir);

  const Trajectory gt = ground_truth_trajectory(w);
  write_trajectory(gt, (dir / "groundtruth.tum").string(), TrajectoryFormat::tum);
  write_trajectory(gt, (dir / "groundtruth.kitti").string(), TrajectoryFormat::kitti);

  auto lm = open_out(dir / "landmarks.csv");
  lm << std::setprecision(17) << "id,x,y,z\n";
  for (const auto& l : w.landmarks)
    lm << l.id << ',' << l.position.x() << ',' << l.position.y() << ',' << l.position.z() << '\n';

  nlohmann::json meta;
  meta["scenario"] = scenario_to_json(s);
  meta["frames"] = w.frame_count();
  meta["landmarks"] = w.landmarks.size();
  meta["fps"] = w.fps;
  meta["sampled_volume"] = w.sampled_volume;
  open_out(dir / "world.json") << meta.dump(2) << '\n';

  if (a.frames) {
    auto fr = open_out(dir / "frames.csv");
    fr << "frame,timestamp,landmark,u,v\n" << std::setprecision(10);
    for (int i = 0; i < w.frame_count(); ++i) {
      const Frame f = observe(w, i);
      for (const auto& o : f.observations)
        fr << f.index << ',' << f.timestamp << ',' << o.landmark_id << ',' << o.pixel.x() << ',' << o.pixel.y()
           << '\n';
    }
  }
  std::cout << "world " << s.id << " seed=" << s.seed << " frames=" << w.frame_count()
            << " landmarks=" << w.landmarks.size() << " -> " << dir.string() << '\n';
  return 0;
}

struct RunArgs {
  std::string scenario;
  std::string variant = "dual";
  int trials = 10;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out;
  std::string trajectory_dir;
  std::string format = "tum";
  std::string map_dir;
  bool concurrent = false;
  bool no_recovery = false;
  double coverage = 0.9;
  bool quiet = false;
};

int run(const RunArgs& a) {
  const Scenario s = load_scenario(a.scenario);
  const Variant v = parse_variant(a.variant);
  const std::uint64_t seed = a.seed_given || std::getenv("RVO_SEED") ? root_seed(a.seed) : s.seed;
  ExperimentOptions opt;
  opt.coverage_threshold = a.coverage;
  opt.pipeline.recovery_enabled = !a.no_recovery;
  opt.pipeline.execution = a.concurrent ? ExecutionMode::concurrent : ExecutionMode::sequential;
  const TrajectoryFormat fmt = parse_trajectory_format(a.format);

  RunReport rep;
  rep.scenario_id = s.id;
  rep.variant = v;
  rep.recovery_enabled = opt.pipeline.recovery_enabled;
  rep.seed = seed;
  rep.frames = s.frames;
  for (int t = 0; t < a.trials; ++t) {
    Scenario st = s;
    st.seed = seed + static_cast<std::uint64_t>(t);
    const World world = generate_world(st);
    PipelineConfig pc = opt.pipeline;
    pc.variant = v;
    pc.seed = st.seed;
    std::optional<WorldMap> map;
    TrialReport tr = run_trial(world, pc, opt.coverage_threshold, a.map_dir.empty() ? nullptr : &map);
    if (map) {
      auto out = open_out(fs::path(a.map_dir) / ("trial_" + std::to_string(t) + ".map"));
      write_map_snapshot(*map, out);
    }
    tr.trial = t;
    if (!a.trajectory_dir.empty() && !tr.trajectory.empty()) {
      const fs::path p = fs::path(a.trajectory_dir) / ("trial_" + std::to_string(t) + "." + a.format);
      fs::create_directories(p.parent_path());
      write_trajectory(tr.trajectory, p.string(), fmt);
    }
    if (!a.quiet) {
      std::cout << "trial=" << t << " seed=" << tr.world_seed << " failed=" << (tr.failed ? 1 : 0)
                << " coverage=" << std::fixed << std::setprecision(3) << tr.coverage
                << " rmse=" << detail::fmt(tr.rmse) << " endpoint=" << detail::fmt(tr.endpoint)
                << " keyframes=" << tr.keyframes << " elapsed=" << std::setprecision(2) << tr.elapsed << '\n'
                << std::defaultfloat;
      for (const auto& e : tr.epochs) std::cout << "  " << format_epoch(e) << '\n';
    }
    rep.trials.push_back(std::move(tr));
  }
  std::cout << s.id << ' ' << to_string(v) << ": " << rep.failures() << '/' << rep.trials.size() << " failed\n";
  if (!a.out.empty()) open_out(a.out) << report_to_json(rep).dump(2) << '\n';
  return 0;
}

struct MonteCarloArgs {
  double p0 = 0.1, pr = 0.1;
  int n = 1;
  std::uint64_t trials = 100000;
  std::uint64_t seed = 0;
  std::string sweep;
  int steps = 21;
};

int montecarlo(const MonteCarloArgs& a) {
  const std::uint64_t seed = root_seed(a.seed);
  const FailureModel m{a.p0, a.pr, a.n};
  const MonteCarloResult r = monte_carlo_failure_rate(m, a.trials, seed);
  std::cout << std::setprecision(6) << "model p0=" << a.p0 << " pr=" << a.pr << " n=" << a.n << '\n'
            << "analytic  " << dual_failure_probability(m) << '\n'
            << "empirical " << r.rate << " (" << r.failures << '/' << r.trials << ", 95% CI [" << r.ci.low << ", "
            << r.ci.high << "])\n";
  if (!a.sweep.empty()) {
    if (a.steps < 2) throw Error(ErrorCode::InvalidArgument, "--steps must be at least 2");
    auto out = open_out(a.sweep);
    out << "p0,pr,n,analytic,empirical\n" << std::setprecision(8);
    for (int i = 0; i < a.steps; ++i)
      for (int j = 0; j < a.steps; ++j) {
        const FailureModel g{i / double(a.steps - 1), j / double(a.steps - 1), a.n};
        const auto e = monte_carlo_failure_rate(g, a.trials, seed + static_cast<std::uint64_t>(i * a.steps + j));
        out << g.p0 << ',' << g.pr << ',' << g.n << ',' << dual_failure_probability(g) << ',' << e.rate << '\n';
      }
    std::cout << "sweep -> " << a.sweep << '\n';
  }
  return 0;
}

struct EvalArgs {
  std::string est, gt;
  std::string format = "tum";
  std::string gt_format;
  double fps = 10.0;
  double max_dt = -1.0;
};

int eval(const EvalArgs& a) {
  if (a.fps <= 0) throw Error(ErrorCode::InvalidArgument, "--fps must be positive");
  const TrajectoryFormat ef = parse_trajectory_format(a.format);
  const TrajectoryFormat gf = a.gt_format.empty() ? ef : parse_trajectory_format(a.gt_format);
  std::vector<std::string> warnings;
  const Trajectory est = read_trajectory(a.est, ef, 1.0 / a.fps, &warnings);
  const Trajectory gt = read_trajectory(a.gt, gf, 1.0 / a.fps, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
  const AteResult r = evaluate_ate(est, gt, a.max_dt);
  const Trajectory aligned = transformed(est, r.alignment);
  std::cout << std::setprecision(6) << "pairs          " << r.pairs << '\n'
            << "ate_rmse       " << r.rmse << '\n'
            << "ate_max        " << r.max_error << '\n'
            << "scale          " << r.alignment.scale << '\n'
            << "start_end_gap  " << endpoint_error(aligned) << '\n'
            << "endpoint_error " << endpoint_error(aligned, gt, a.max_dt) << '\n';
  return 0;
}

struct ReportArgs {
  std::vector<std::string> files;
  std::string csv_dir;
  std::string dual = "dual";
};

int report(const ReportArgs& a) {
  std::vector<RunReport> reports;
  for (const auto& f : a.files) {
    std::ifstream in(f);
    if (!in) throw Error(ErrorCode::ParseError, "cannot open " + f);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::ParseError, f + ": " + e.what());
    }
    reports.push_back(report_from_json(j));
  }
  const Variant dual = parse_variant(a.dual);
  std::cout << "Keyframe trajectory accuracy (median over successful trials)\n";
  write_rmse_table(reports, std::cout, false);
  std::cout << "\nFailures\n";
  write_failure_table(reports, dual, std::cout, false);
  std::cout << "\nRecovery stages\n";
  write_ablation_table(reports, std::cout, false);
  if (!a.csv_dir.empty()) {
    const fs::path dir(a.csv_dir);
    fs::create_directories(dir);
    auto rm = open_out(dir / "rmse.csv");
    write_rmse_table(reports, rm, true);
    auto fl = open_out(dir / "failures.csv");
    write_failure_table(reports, dual, fl, true);
    auto ab = open_out(dir / "ablation.csv");
    write_ablation_table(reports, ab, true);
    auto tr = open_out(dir / "trials.csv");
    write_trials_csv(reports, tr);
    std::cout << "\ncsv -> " << dir.string() << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Resilient monocular odometry: simulation, runs and evaluation"};
  app.require_subcommand(1);

  SimulateArgs sa;
  auto* sim = app.add_subcommand("simulate", "Generate a world from a scenario and dump it");
  sim->add_option("--scenario", sa.scenario, "Scenario JSON")->required()->check(CLI::ExistingFile);
  auto* sim_seed = sim->add_option("--seed", sa.seed, "World seed (overrides the scenario's)");
  sim->add_option("--out", sa.out, "Output directory")->required();
  sim->add_flag("--frames", sa.frames, "Also write per-frame observations");

  RunArgs ra;
  auto* runc = app.add_subcommand("run", "Run a variant over seeded trials");
  runc->add_option("--scenario", ra.scenario, "Scenario JSON")->required()->check(CLI::ExistingFile);
  runc->add_option("--variant", ra.variant, "baseline, dual or dual-plus")
      ->check(CLI::IsMember({"baseline", "dual", "dual-plus"}));
  runc->add_option("--trials", ra.trials, "Number of trials")->check(CLI::PositiveNumber);
  auto* run_seed = runc->add_option("--seed", ra.seed, "Root seed; trial t uses seed + t (default: the scenario's)");
  runc->add_option("--out", ra.out, "Write the run report as JSON");
  runc->add_option("--trajectory-dir", ra.trajectory_dir, "Write each trial's keyframe trajectory here");
  runc->add_option("--format", ra.format, "Trajectory format")->check(CLI::IsMember({"kitti", "tum"}));
  runc->add_option("--map-dir", ra.map_dir, "Write each trial's final map snapshot here");
  runc->add_option("--coverage", ra.coverage, "Coverage below which a trial fails")->check(CLI::Range(0.0, 1.0));
  runc->add_flag("--concurrent", ra.concurrent, "Run recovery on its own thread");
  runc->add_flag("--no-recovery", ra.no_recovery, "Disable backward recovery");
  runc->add_flag("-q,--quiet", ra.quiet, "Only print the summary line");

  MonteCarloArgs ma;
  auto* mc = app.add_subcommand("montecarlo", "Simulate the redundancy failure model");
  mc->add_option("--p0", ma.p0, "Probability the primary process fails")->check(CLI::Range(0.0, 1.0));
  mc->add_option("--pr", ma.pr, "Probability a recovery attempt fails")->check(CLI::Range(0.0, 1.0));
  mc->add_option("--n", ma.n, "Recovery attempts")->check(CLI::NonNegativeNumber);
  mc->add_option("--trials", ma.trials, "Simulated units")->check(CLI::PositiveNumber);
  mc->add_option("--seed", ma.seed, "Seed");
  mc->add_option("--sweep", ma.sweep, "Write a p0 x pr grid of rates to this CSV");
  mc->add_option("--steps", ma.steps, "Grid steps per axis for --sweep");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Absolute trajectory error of an estimate");
  ev->add_option("--est", ea.est, "Estimated trajectory")->required()->check(CLI::ExistingFile);
  ev->add_option("--gt", ea.gt, "Ground-truth trajectory")->required()->check(CLI::ExistingFile);
  ev->add_option("--format", ea.format, "kitti or tum")->check(CLI::IsMember({"kitti", "tum"}));
  ev->add_option("--gt-format", ea.gt_format, "Ground-truth format if different")
      ->check(CLI::IsMember({"kitti", "tum"}));
  ev->add_option("--fps", ea.fps, "Frame rate used to time-stamp KITTI poses");
  ev->add_option("--max-dt", ea.max_dt, "Association tolerance in seconds (default: half the frame period)");

  ReportArgs rpa;
  auto* rep = app.add_subcommand("report", "Aggregate run reports into tables");
  rep->add_option("files", rpa.files, "Run report JSON files")->required()->check(CLI::ExistingFile);
  rep->add_option("--csv-dir", rpa.csv_dir, "Also write the tables and per-trial rows as CSV");
  rep->add_option("--dual-variant", rpa.dual, "Variant compared against the baseline")
      ->check(CLI::IsMember({"dual", "dual-plus"}));

  CLI11_PARSE(app, argc, argv);
  sa.seed_given = sim_seed->count() > 0;
  ra.seed_given = run_seed->count() > 0;

  try {
    if (*sim) return simulate(sa);
    if (*runc) return run(ra);
    if (*mc) return montecarlo(ma);
    if (*ev) return eval(ea);
    if (*rep) return report(rpa);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
