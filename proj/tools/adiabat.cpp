// Command-line front end: optimize, simulate, sweep and export.
#include "adiabat/config.hpp"
#include "adiabat/io.hpp"
#include "adiabat/optimizer.hpp"
#include "adiabat/parallel.hpp"
#include "adiabat/simulator.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>

namespace fs = std::filesystem;
using namespace adiabat;

namespace {

struct RunContext {
  RunConfig cfg;
  OutputHeader header;
  fs::path out;
  json summary = json::object();
};

RunContext prepare(const std::string& config_path, const std::string& output_dir, std::optional<std::uint64_t> seed,
                   RunMode mode) {
  RunContext ctx;
  ctx.cfg = parse_config(config_path);
  ctx.cfg.mode = mode;
  if (seed) ctx.cfg.optimizer.seed = *seed;
  if (!output_dir.empty()) ctx.cfg.output_dir = output_dir;
  ctx.header = {config_hash(ctx.cfg), ctx.cfg.optimizer.seed};
  ctx.out = ctx.cfg.output_dir;
  fs::create_directories(ctx.out);
  json resolved = resolved_config(ctx.cfg);
  resolved["header"] = header_json(ctx.header);
  write_json(ctx.out / "resolved_config.json", resolved);
  return ctx;
}

Pulse load_pulse(const RunConfig& cfg, const std::string& path) {
  if (fs::path(path).extension() == ".json") return read_pulse_json(path).pulse();
  return load_waveform_pulse(path, cfg.ansatz.omega1_max);
}

void run_trajectory(RunContext& ctx, const Pulse& pulse) {
  const auto& t = *ctx.cfg.trajectory;
  const auto tmpl = member_template(ctx.cfg, t.member, pulse.ansatz);
  const auto samples = bloch_trajectory(pulse, t.rabi, t.offset, tmpl.initial, t.samples, tmpl.sign.value_or(+1),
                                        ctx.cfg.optimizer.report_tolerance);
  std::vector<std::vector<double>> rows;
  double alpha = 0;
  for (const auto& s : samples) {
    rows.push_back({s.t, s.m.x(), s.m.y(), s.m.z(), s.b.x(), s.b.y(), s.b.z(), s.alpha});
    alpha = std::max(alpha, s.alpha);
  }
  write_table_csv(ctx.out / "trajectory.csv", ctx.header,
                  {"t_s", "mx", "my", "mz", "bx_rad_s", "by_rad_s", "bz_rad_s", "alpha_rad"}, rows);
  ctx.summary["trajectory"] = {{"alpha_max_rad", alpha}, {"final_m", {samples.back().m.x(), samples.back().m.y(), samples.back().m.z()}}};
}

void run_rabi_sweep(RunContext& ctx, const Pulse& pulse) {
  const auto& r = *ctx.cfg.rabi_sweep;
  const auto tmpl = member_template(ctx.cfg, r.member, pulse.ansatz);
  const auto pts = rabi_sweep(pulse, tmpl, r.grid, ctx.cfg.optimizer.report_tolerance, r.tip_samples);
  std::vector<std::vector<double>> rows;
  std::vector<std::string> notes;
  ResponseCurve fidelity;
  double worst = 0, alpha = 0;
  int failed = 0;
  for (const auto& p : pts) {
    rows.push_back({p.omega1, p.infidelity, p.has_ad ? p.ad_infidelity : NAN, p.has_per ? p.per_infidelity : NAN,
                    p.alpha_max});
    notes.push_back(p.error);
    if (!p.error.empty()) {
      ++failed;
      continue;
    }
    worst = std::max(worst, p.infidelity);
    alpha = std::max(alpha, p.alpha_max);
    fidelity.abscissa.push_back(p.omega1);
    fidelity.ordinate.push_back(1.0 - p.infidelity);
  }
  write_table_csv(ctx.out / "rabi_sweep.csv", ctx.header,
                  {"omega1_rad_s", "infidelity", "ad_infidelity", "per_infidelity", "alpha_max_rad", "error"}, rows,
                  notes);
  json s = {{"max_infidelity", worst}, {"alpha_max_rad", alpha}, {"failed_points", failed}};
  if (!r.weight_abscissa.empty()) {
    ResponseCurve weights{r.weight_abscissa, r.weight_values, {}};
    s["weighted_fidelity"] = weighted_signal(fidelity, weights);
  }
  ctx.summary["rabi_sweep"] = s;
}

void run_train(RunContext& ctx, const Pulse& pulse) {
  const auto res = pulse_train_decay(pulse, build_train(*ctx.cfg.train));
  write_curve_csv(ctx.out / "train.csv", ctx.header, res.curve, "n", "mz");
  ctx.summary["train"] = {{"per_pulse_accuracy", res.accuracy}, {"fit_intercept", res.fit_intercept}};
}

void run_offset_sweep(RunContext& ctx, const Pulse& pulse) {
  const auto& s = *ctx.cfg.offset_sweep;
  const auto curve = offset_sweep(pulse, s.n_pulses, s.grid, build_train(*ctx.cfg.train));
  write_curve_csv(ctx.out / "offset_sweep.csv", ctx.header, curve, "detuning_rad_s", "mz");
  ctx.summary["offset_sweep"] = {{"n_pulses", s.n_pulses}, {"half_width_rad_s", half_max_half_width(curve)}};
}

void run_multispin(RunContext& ctx, const Pulse& pulse) {
  const auto& m = *ctx.cfg.multispin;
  const auto geometry = build_geometry(m);
  const auto curve = multispin_dipolar_sim(pulse, geometry, m.rabi, ctx.cfg.optimizer.report_tolerance);
  write_curve_csv(ctx.out / "multispin.csv", ctx.header, curve, "omega1_rad_s", "mean_fidelity");
  double mean = 0;
  for (double f : curve.ordinate) mean += (1.0 - f) / static_cast<double>(curve.size());
  json pos = json::array();
  for (const auto& p : geometry.positions) pos.push_back({p.x(), p.y(), p.z()});
  ctx.summary["multispin"] = {{"mean_infidelity", mean},
                              {"max_coupling_rad_s", geometry.couplings().cwiseAbs().maxCoeff()},
                              {"positions_m", pos}};
}

void run_selectivity(RunContext& ctx, const Pulse& pulse) {
  const auto& s = *ctx.cfg.selectivity;
  auto tmpl = member_template(ctx.cfg, s.member, pulse.ansatz);
  tmpl.field.offset = 0.0;
  const auto prof = selectivity_profile(pulse, tmpl, s.grid, s.repetitions, ctx.cfg.optimizer.report_tolerance);
  write_curve_csv(ctx.out / "selectivity.csv", ctx.header, prof.curve, "offset_rad_s", "phi0_pow_m");
  ctx.summary["selectivity"] = {{"repetitions", s.repetitions},
                                {"band_width_rad_s", prof.band_width},
                                {"edge_width_rad_s", prof.edge_width},
                                {"left_edge_rad_s", prof.left_edge},
                                {"right_edge_rad_s", prof.right_edge}};
}

using Runner = void (*)(RunContext&, const Pulse&);

struct Block {
  std::string name;
  bool present;
  Runner run;
};

std::vector<Block> blocks(const RunConfig& cfg) {
  return {{"trajectory", cfg.trajectory.has_value(), run_trajectory},
          {"rabi_sweep", cfg.rabi_sweep.has_value(), run_rabi_sweep},
          {"train", cfg.train.has_value(), run_train},
          {"offset_sweep", cfg.offset_sweep.has_value(), run_offset_sweep},
          {"multispin", cfg.multispin.has_value(), run_multispin},
          {"selectivity", cfg.selectivity.has_value(), run_selectivity}};
}

/// Runs the requested blocks, or every configured block of `family` when none is requested.
void run_blocks(RunContext& ctx, const Pulse& pulse, const std::set<std::string>& requested,
                const std::set<std::string>& family) {
  for (const auto& name : requested) {
    const auto all = blocks(ctx.cfg);
    const auto it = std::find_if(all.begin(), all.end(), [&](const Block& b) { return b.name == name; });
    if (!it->present) throw ConfigError(name, "requested on the command line but not configured");
  }
  for (const auto& b : blocks(ctx.cfg)) {
    const bool wanted = requested.empty() ? (b.present && family.count(b.name)) : requested.count(b.name) > 0;
    if (wanted) b.run(ctx, pulse);
  }
}

void finish(RunContext& ctx) {
  json s = ctx.summary;
  s["header"] = header_json(ctx.header);
  write_json(ctx.out / "summary.json", s);
  std::cout << s.dump(2) << '\n';
}

int fail(const std::string& type, const std::string& message, const std::string& path = "") {
  json e = {{"type", type}, {"message", message}};
  if (!path.empty()) e["path"] = path;
  std::cerr << json{{"error", e}}.dump() << '\n';
  return type == "ConfigError" ? 2 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adiabatic and robust pulse design"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolName) + " " + kToolVersion);
  int threads = 0;
  app.add_option("--threads", threads, "Worker thread limit (default: ADIABAT_THREADS or hardware concurrency)")
      ->check(CLI::NonNegativeNumber);

  std::string config, pulse_path, output_dir;
  std::optional<std::uint64_t> seed;
  int samples = 1001;

  auto* opt = app.add_subcommand("optimize", "Optimize a pulse and run the configured simulations on it");
  opt->add_option("config", config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  opt->add_option("-o,--output-dir", output_dir, "Overrides output_dir");
  opt->add_option("--seed", seed, "Overrides optimizer.seed");
  opt->add_option("--samples", samples, "Waveform samples in waveform.csv")->check(CLI::Range(2, 100000000));

  bool want_traj = false, want_train = false, want_multi = false, want_sel = false;
  auto* sim = app.add_subcommand("simulate", "Run trajectory, train, multispin and selectivity blocks on a pulse");
  sim->add_option("config", config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  sim->add_option("--pulse", pulse_path, "Waveform CSV (or optimized pulse JSON)")->required()->check(CLI::ExistingFile);
  sim->add_option("-o,--output-dir", output_dir, "Overrides output_dir");
  sim->add_flag("--trajectory", want_traj, "Only the trajectory block");
  sim->add_flag("--train", want_train, "Only the pulse-train block");
  sim->add_flag("--multispin", want_multi, "Only the multispin block");
  sim->add_flag("--selectivity", want_sel, "Only the selectivity block");

  bool want_rabi = false, want_offset = false;
  auto* sweep = app.add_subcommand("sweep", "Run Rabi and offset sweeps on a pulse");
  sweep->add_option("config", config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  sweep->add_option("--pulse", pulse_path, "Waveform CSV (or optimized pulse JSON)")->required()->check(CLI::ExistingFile);
  sweep->add_option("-o,--output-dir", output_dir, "Overrides output_dir");
  sweep->add_flag("--rabi", want_rabi, "Only the Rabi sweep");
  sweep->add_flag("--offset", want_offset, "Only the offset sweep");

  std::string export_output;
  auto* exp = app.add_subcommand("export", "Sample an optimized pulse into a waveform CSV");
  exp->add_option("pulse", pulse_path, "Optimized pulse JSON")->required()->check(CLI::ExistingFile);
  exp->add_option("--samples", samples, "Sample count K")->required()->check(CLI::Range(2, 100000000));
  exp->add_option("-o,--output", export_output, "Output CSV (default: <pulse>_waveform.csv)");

  CLI11_PARSE(app, argc, argv);
  if (threads > 0) set_default_threads(threads);

  try {
    if (*opt) {
      auto ctx = prepare(config, output_dir, seed, RunMode::optimize);
      auto problem = build_problem(ctx.cfg);
      const auto result = optimize(problem);
      write_json(ctx.out / "pulse.json", pulse_json(result, ctx.cfg.ansatz, ctx.header));
      write_trace_csv(ctx.out / "trace.csv", ctx.header, result.trace);
      write_waveform_csv(ctx.out / "waveform.csv", ctx.header, sample_waveform(*problem.ansatz, result.x, samples));
      ctx.summary["optimize"] = {{"value", result.value},
                                 {"report_value", result.report_value},
                                 {"status", to_string(result.status)},
                                 {"restarts", result.restarts},
                                 {"iterations", result.iterations}};
      const Pulse pulse{problem.ansatz, result.x};
      std::set<std::string> all;
      for (const auto& b : blocks(ctx.cfg)) all.insert(b.name);
      run_blocks(ctx, pulse, {}, all);
      finish(ctx);
    } else if (*sim) {
      auto ctx = prepare(config, output_dir, std::nullopt, RunMode::simulate);
      std::set<std::string> req;
      if (want_traj) req.insert("trajectory");
      if (want_train) req.insert("train");
      if (want_multi) req.insert("multispin");
      if (want_sel) req.insert("selectivity");
      run_blocks(ctx, load_pulse(ctx.cfg, pulse_path), req, {"trajectory", "train", "multispin", "selectivity"});
      finish(ctx);
    } else if (*sweep) {
      auto ctx = prepare(config, output_dir, std::nullopt, RunMode::sweep);
      std::set<std::string> req;
      if (want_rabi) req.insert("rabi_sweep");
      if (want_offset) req.insert("offset_sweep");
      run_blocks(ctx, load_pulse(ctx.cfg, pulse_path), req, {"rabi_sweep", "offset_sweep"});
      finish(ctx);
    } else if (*exp) {
      const auto stored = read_pulse_json(pulse_path);
      fs::path target = export_output;
      if (target.empty()) {
        const fs::path src = pulse_path;
        target = src.parent_path() / (src.stem().string() + "_waveform.csv");
      }
      const auto ansatz = make_ansatz(stored.ansatz);
      write_waveform_csv(target, stored.header, sample_waveform(*ansatz, stored.x, samples));
      std::cout << json{{"waveform", target.string()}, {"samples", samples}}.dump() << '\n';
    }
  } catch (const ConfigError& e) {
    return fail("ConfigError", e.reason, e.path);
  } catch (const MemberError& e) {
    return fail("MemberError", e.what(), e.label);
  } catch (const std::exception& e) {
    return fail("RuntimeError", e.what());
  }
  return 0;
}
