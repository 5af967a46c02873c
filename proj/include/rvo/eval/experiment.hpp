#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "rvo/eval/trajectory.hpp"
#include "rvo/reliability/reliability.hpp"
#include "rvo/resilience/pipeline.hpp"
#include "rvo/worldgen/scenario_io.hpp"
#include "rvo/worldgen/world.hpp"

namespace rvo {

struct ExperimentOptions {
  PipelineConfig pipeline;         // variant and seed are overridden per run
  double coverage_threshold = 0.9;  // trials below this coverage fail
};

struct TrialReport {
  int trial = 0;
  std::uint64_t world_seed = 0;
  bool failed = false;
  std::optional<double> rmse;  // unset when too few keyframes to align
  std::optional<double> endpoint;
  double coverage = 0.0;
  int keyframes = 0;
  int lost_frames = 0;
  std::vector<EpochRecord> epochs;
  double elapsed = 0.0;  // seconds
  Trajectory trajectory;  // keyframes of the final map; not serialized
};

struct RunReport {
  std::string scenario_id;
  Variant variant = Variant::dual;
  bool recovery_enabled = true;
  std::uint64_t seed = 0;
  int frames = 0;
  std::vector<TrialReport> trials;

  int failures() const {
    return static_cast<int>(std::count_if(trials.begin(), trials.end(), [](const TrialReport& t) { return t.failed; }));
  }
};

/// Fraction of the ground-truth span, from the first map's origin to the
/// last frame, covered by the final map's keyframes. Clamped to [0, 1].
inline double coverage_fraction(const WorldMap* map, int first_origin, int frame_count) {
  if (!map || map->keyframes().empty() || first_origin < 0) return 0.0;
  const int last = frame_count - 1;
  if (last <= first_origin) return 1.0;
  int lo = last, hi = first_origin;
  for (const auto& [id, kf] : map->keyframes()) {
    lo = std::min(lo, kf.frame_index);
    hi = std::max(hi, kf.frame_index);
  }
  const double covered = std::min(hi, last) - std::max(lo, first_origin);
  return std::clamp(covered / static_cast<double>(last - first_origin), 0.0, 1.0);
}

/// Runs one trial on a world already generated for it. The final map is
/// copied to `final_map` when given.
inline TrialReport run_trial(const World& world, const PipelineConfig& config, double coverage_threshold = 0.9,
                             std::optional<WorldMap>* final_map = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  TrialReport t;
  t.world_seed = world.scenario.seed;
  const PipelineResult r = run_pipeline(world, config);
  t.lost_frames = r.lost_frames;
  t.epochs = r.epochs;
  if (r.final_map) {
    t.trajectory = keyframe_trajectory(*r.final_map);
    t.keyframes = static_cast<int>(r.final_map->keyframes().size());
    t.coverage = coverage_fraction(&*r.final_map, r.first_origin_frame, world.frame_count());
    const Trajectory gt = ground_truth_trajectory(world);
    try {
      const AteResult ate = evaluate_ate(t.trajectory, gt);
      t.rmse = ate.rmse;
      t.endpoint = endpoint_error(transformed(t.trajectory, ate.alignment), gt);
    } catch (const Error&) {
    }
  }
  t.failed = t.coverage < coverage_threshold;
  if (final_map) *final_map = r.final_map;
  t.elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return t;
}

/// `trials` independent runs; trial t uses world seed `seed + t`.
inline RunReport run_experiment(const Scenario& scenario, Variant variant, int trials, std::uint64_t seed,
                                const ExperimentOptions& options = {}) {
  validate(scenario);
  if (trials < 1) throw Error(ErrorCode::InvalidArgument, "trials must be at least 1");
  RunReport rep;
  rep.scenario_id = scenario.id;
  rep.variant = variant;
  rep.recovery_enabled = options.pipeline.recovery_enabled;
  rep.seed = seed;
  rep.frames = scenario.frames;
  for (int t = 0; t < trials; ++t) {
    Scenario s = scenario;
    s.seed = seed + static_cast<std::uint64_t>(t);
    const World world = generate_world(s);
    PipelineConfig pc = options.pipeline;
    pc.variant = variant;
    pc.seed = s.seed;
    TrialReport tr = run_trial(world, pc, options.coverage_threshold);
    tr.trial = t;
    rep.trials.push_back(std::move(tr));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Serialization

inline EpochOutcome parse_epoch_outcome(const std::string& s) {
  for (auto o : {EpochOutcome::fused, EpochOutcome::recovery_failure, EpochOutcome::fusion_failure,
                 EpochOutcome::abandoned, EpochOutcome::no_reinit, EpochOutcome::disabled})
    if (to_string(o) == s) return o;
  throw Error(ErrorCode::ParseError, "unknown epoch outcome '" + s + "'");
}

inline nlohmann::json epoch_to_json(const EpochRecord& e, bool with_timing) {
  nlohmann::json j = {{"epoch", e.epoch},
                      {"breakage_frame", e.breakage_frame},
                      {"init_frame", e.init_frame},
                      {"origin_frame", e.origin_frame},
                      {"buffer_length", e.buffer_length},
                      {"extension", e.extension},
                      {"fusion_frame", e.fusion_frame},
                      {"outcome", to_string(e.outcome)},
                      {"thread_used", e.thread_used},
                      {"first_stage_aborted", e.first_stage_aborted},
                      {"abort_frame", e.abort_frame},
                      {"earliest_frame", e.earliest_frame},
                      {"overlap", e.overlap},
                      {"log", e.log}};
  if (e.seam) j["seam"] = {{"inliers", e.seam->inliers}, {"hypotheses", e.seam->hypotheses},
                           {"scale", e.seam->transform.scale}, {"residual_rms", e.seam->residual_rms}};
  if (with_timing) j["elapsed"] = e.elapsed;
  return j;
}

inline EpochRecord epoch_from_json(const nlohmann::json& j) {
  EpochRecord e;
  e.epoch = j.at("epoch");
  e.breakage_frame = j.at("breakage_frame");
  e.init_frame = j.at("init_frame");
  e.origin_frame = j.at("origin_frame");
  e.buffer_length = j.at("buffer_length");
  e.extension = j.at("extension");
  e.fusion_frame = j.at("fusion_frame");
  e.outcome = parse_epoch_outcome(j.at("outcome"));
  e.thread_used = j.at("thread_used");
  e.first_stage_aborted = j.at("first_stage_aborted");
  e.abort_frame = j.at("abort_frame");
  e.earliest_frame = j.at("earliest_frame");
  e.overlap = j.at("overlap");
  e.log = j.value("log", std::vector<std::string>{});
  if (j.contains("seam")) {
    SeamReport s;
    s.inliers = j["seam"].at("inliers");
    s.hypotheses = j["seam"].at("hypotheses");
    s.transform.scale = j["seam"].at("scale");
    s.residual_rms = j["seam"].at("residual_rms");
    e.seam = s;
  }
  e.elapsed = j.value("elapsed", 0.0);
  return e;
}

inline nlohmann::json report_to_json(const RunReport& r, bool with_timing = true) {
  nlohmann::json trials = nlohmann::json::array();
  for (const auto& t : r.trials) {
    nlohmann::json jt = {{"trial", t.trial},
                         {"world_seed", t.world_seed},
                         {"failed", t.failed},
                         {"rmse", t.rmse ? nlohmann::json(*t.rmse) : nlohmann::json(nullptr)},
                         {"endpoint", t.endpoint ? nlohmann::json(*t.endpoint) : nlohmann::json(nullptr)},
                         {"coverage", t.coverage},
                         {"keyframes", t.keyframes},
                         {"lost_frames", t.lost_frames}};
    nlohmann::json ep = nlohmann::json::array();
    for (const auto& e : t.epochs) ep.push_back(epoch_to_json(e, with_timing));
    jt["epochs"] = ep;
    if (with_timing) jt["elapsed"] = t.elapsed;
    trials.push_back(jt);
  }
  return {{"scenario", r.scenario_id}, {"variant", to_string(r.variant)}, {"recovery_enabled", r.recovery_enabled},
          {"seed", r.seed},           {"frames", r.frames},               {"trials", trials}};
}

inline RunReport report_from_json(const nlohmann::json& j) {
  try {
    RunReport r;
    r.scenario_id = j.at("scenario");
    r.variant = parse_variant(j.at("variant"));
    r.recovery_enabled = j.value("recovery_enabled", true);
    r.seed = j.at("seed");
    r.frames = j.value("frames", 0);
    for (const auto& jt : j.at("trials")) {
      TrialReport t;
      t.trial = jt.at("trial");
      t.world_seed = jt.at("world_seed");
      t.failed = jt.at("failed");
      if (!jt.at("rmse").is_null()) t.rmse = jt["rmse"].get<double>();
      if (!jt.at("endpoint").is_null()) t.endpoint = jt["endpoint"].get<double>();
      t.coverage = jt.at("coverage");
      t.keyframes = jt.value("keyframes", 0);
      t.lost_frames = jt.value("lost_frames", 0);
      for (const auto& je : jt.at("epochs")) t.epochs.push_back(epoch_from_json(je));
      t.elapsed = jt.value("elapsed", 0.0);
      r.trials.push_back(std::move(t));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("run report: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Aggregate tables

/// Recovery statistics over a set of reports.
struct AblationSummary {
  int epochs = 0;
  int recoveries = 0;   // fused epochs
  int first_stage = 0;  // fused with the motion-model stage alone
  int second_stage = 0;
  int failed = 0;  // recovery, fusion or abandoned
  double mean_elapsed = 0.0;
  double first_stage_fraction() const { return recoveries ? static_cast<double>(first_stage) / recoveries : 0.0; }
};

inline AblationSummary summarize_recoveries(const std::vector<RunReport>& reports) {
  AblationSummary s;
  std::vector<double> times;
  for (const auto& r : reports)
    for (const auto& t : r.trials)
      for (const auto& e : t.epochs) {
        if (e.outcome == EpochOutcome::disabled || e.outcome == EpochOutcome::no_reinit) continue;
        ++s.epochs;
        if (e.recovered()) {
          ++s.recoveries;
          (e.thread_used == 1 ? s.first_stage : s.second_stage)++;
          times.push_back(e.elapsed);
        } else {
          ++s.failed;
        }
      }
  s.mean_elapsed = mean(times);
  return s;
}

struct FailureRow {
  std::string label;
  int base_failures = 0, base_trials = 0;
  int dual_failures = 0, dual_trials = 0;
  std::optional<double> reduction() const {
    if (base_failures == 0 || base_trials == 0 || dual_trials == 0) return std::nullopt;
    return failure_reduction(base_failures, base_trials, dual_failures, dual_trials);
  }
};

/// Baseline against `dual` failure counts, one row per scenario plus a total.
inline std::vector<FailureRow> failure_rows(const std::vector<RunReport>& reports, Variant dual) {
  std::map<std::string, FailureRow> rows;
  FailureRow total{"total"};
  for (const auto& r : reports) {
    FailureRow& row = rows[r.scenario_id];
    row.label = r.scenario_id;
    const int n = static_cast<int>(r.trials.size()), f = r.failures();
    if (r.variant == Variant::baseline) {
      row.base_failures += f, row.base_trials += n, total.base_failures += f, total.base_trials += n;
    } else if (r.variant == dual) {
      row.dual_failures += f, row.dual_trials += n, total.dual_failures += f, total.dual_trials += n;
    }
  }
  std::vector<FailureRow> out;
  for (auto& [id, row] : rows) out.push_back(row);
  out.push_back(total);
  return out;
}

struct RmseRow {
  std::string scenario;
  std::string variant;
  int trials = 0;
  int failures = 0;
  std::optional<double> median_rmse;  // over successful trials
  std::optional<double> median_endpoint;
};

inline std::vector<RmseRow> rmse_rows(const std::vector<RunReport>& reports) {
  std::vector<RmseRow> out;
  for (const auto& r : reports) {
    RmseRow row{r.scenario_id, to_string(r.variant), static_cast<int>(r.trials.size()), r.failures()};
    std::vector<double> rm, ep;
    for (const auto& t : r.trials) {
      if (t.failed) continue;
      if (t.rmse) rm.push_back(*t.rmse);
      if (t.endpoint) ep.push_back(*t.endpoint);
    }
    if (!rm.empty()) row.median_rmse = median(rm);
    if (!ep.empty()) row.median_endpoint = median(ep);
    out.push_back(row);
  }
  return out;
}

namespace detail {
inline std::string fmt(std::optional<double> v, int precision = 4) {
  if (!v) return "-";
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << *v;
  return s.str();
}
}  // namespace detail

inline void write_rmse_table(const std::vector<RunReport>& reports, std::ostream& out, bool csv) {
  const auto rows = rmse_rows(reports);
  if (csv) {
    out << "scenario,variant,trials,failures,median_rmse,median_endpoint\n";
    for (const auto& r : rows)
      out << r.scenario << ',' << r.variant << ',' << r.trials << ',' << r.failures << ','
          << (r.median_rmse ? detail::fmt(r.median_rmse, 6) : "") << ','
          << (r.median_endpoint ? detail::fmt(r.median_endpoint, 6) : "") << '\n';
    return;
  }
  out << std::left << std::setw(24) << "scenario" << std::setw(11) << "variant" << std::setw(10) << "failures"
      << std::setw(14) << "median RMSE" << "median endpoint\n";
  for (const auto& r : rows)
    out << std::left << std::setw(24) << r.scenario << std::setw(11) << r.variant << std::setw(10)
        << (std::to_string(r.failures) + "/" + std::to_string(r.trials)) << std::setw(14) << detail::fmt(r.median_rmse)
        << detail::fmt(r.median_endpoint) << '\n';
}

inline void write_failure_table(const std::vector<RunReport>& reports, Variant dual, std::ostream& out, bool csv) {
  const auto rows = failure_rows(reports, dual);
  if (csv) {
    out << "scenario,baseline_failures,baseline_trials," << to_string(dual) << "_failures," << to_string(dual)
        << "_trials,failure_reduction\n";
    for (const auto& r : rows)
      out << r.label << ',' << r.base_failures << ',' << r.base_trials << ',' << r.dual_failures << ','
          << r.dual_trials << ',' << (r.reduction() ? detail::fmt(r.reduction(), 6) : "") << '\n';
    return;
  }
  out << std::left << std::setw(24) << "scenario" << std::setw(12) << "baseline" << std::setw(12) << to_string(dual)
      << "reduction\n";
  for (const auto& r : rows) {
    std::string red = "-";
    if (auto v = r.reduction())
      red = "1-" + std::to_string(r.dual_failures) + "/" + std::to_string(r.base_failures) + " = " + detail::fmt(v, 3);
    out << std::left << std::setw(24) << r.label << std::setw(12)
        << (std::to_string(r.base_failures) + "/" + std::to_string(r.base_trials)) << std::setw(12)
        << (std::to_string(r.dual_failures) + "/" + std::to_string(r.dual_trials)) << red << '\n';
  }
}

inline void write_ablation_table(const std::vector<RunReport>& reports, std::ostream& out, bool csv) {
  std::map<std::string, std::vector<RunReport>> by_variant;
  for (const auto& r : reports)
    if (r.variant != Variant::baseline) by_variant[to_string(r.variant)].push_back(r);
  if (csv) out << "variant,epochs,recoveries,stage1,stage2,failed,stage1_fraction,mean_recovery_s\n";
  else
    out << std::left << std::setw(11) << "variant" << std::setw(8) << "epochs" << std::setw(12) << "recovered"
        << std::setw(9) << "stage 1" << std::setw(9) << "stage 2" << std::setw(8) << "failed" << std::setw(15)
        << "stage-1 share" << "mean time (s)\n";
  for (const auto& [variant, rs] : by_variant) {
    const AblationSummary s = summarize_recoveries(rs);
    if (csv) {
      out << variant << ',' << s.epochs << ',' << s.recoveries << ',' << s.first_stage << ',' << s.second_stage << ','
          << s.failed << ',' << detail::fmt(s.first_stage_fraction(), 6) << ',' << detail::fmt(s.mean_elapsed, 6)
          << '\n';
    } else {
      out << std::left << std::setw(11) << variant << std::setw(8) << s.epochs << std::setw(12) << s.recoveries
          << std::setw(9) << s.first_stage << std::setw(9) << s.second_stage << std::setw(8) << s.failed
          << std::setw(15) << detail::fmt(s.first_stage_fraction(), 3) << detail::fmt(s.mean_elapsed, 3) << '\n';
    }
  }
}

/// One row per trial; input for the bundled plotting script.
inline void write_trials_csv(const std::vector<RunReport>& reports, std::ostream& out) {
  out << "scenario,variant,trial,world_seed,failed,coverage,rmse,endpoint,keyframes,lost_frames,epochs,fused,"
         "stage2,elapsed\n";
  for (const auto& r : reports)
    for (const auto& t : r.trials) {
      int fused = 0, stage2 = 0;
      for (const auto& e : t.epochs) {
        fused += e.recovered();
        stage2 += e.recovered() && e.thread_used == 2;
      }
      out << r.scenario_id << ',' << to_string(r.variant) << ',' << t.trial << ',' << t.world_seed << ','
          << (t.failed ? 1 : 0) << ',' << detail::fmt(t.coverage, 6) << ','
          << (t.rmse ? detail::fmt(t.rmse, 6) : "") << ',' << (t.endpoint ? detail::fmt(t.endpoint, 6) : "") << ','
          << t.keyframes << ',' << t.lost_frames << ',' << t.epochs.size() << ',' << fused << ',' << stage2 << ','
          << detail::fmt(t.elapsed, 4) << '\n';
    }
}

}  // namespace rvo
