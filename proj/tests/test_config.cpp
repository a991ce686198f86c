#include "adiabat/config.hpp"
#include "adiabat/io.hpp"

#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

using namespace adiabat;
namespace fs = std::filesystem;

namespace {

const double kPi = std::numbers::pi;

fs::path preset(const std::string& name) { return fs::path(ADIABAT_PRESET_DIR) / (name + ".json"); }

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "adiabat_test_config";
  fs::create_directories(dir);
  return dir / name;
}

json small_config() {
  return json::parse(R"({
    "units": "rad_s",
    "ansatz": {"family": "constant", "duration": 1.0, "omega1_max": 4.0},
    "members": [{"label": "a", "weight": 0.5}, {"label": "b", "rabi": 5.0, "weight": 0.5}],
    "optimizer": {"seed": 7, "max_iterations": 20, "initial_guess": [2.0, 0.5, 0.3]}
  })");
}

std::string config_error_path(const json& j, const fs::path& base = ".") {
  try {
    parse_config_json(j, base);
  } catch (const ConfigError& e) {
    return e.path;
  }
  return "<no error>";
}

}  // namespace

TEST_CASE("weights that do not sum to one are rejected") {
  auto j = small_config();
  j["members"][0]["weight"] = 0.4;
  CHECK(config_error_path(j) == "members");
  j["members"][0].erase("weight");
  CHECK(config_error_path(j) == "members");
}

TEST_CASE("omitted member weights default to a uniform split") {
  auto j = small_config();
  for (auto& m : j["members"]) m.erase("weight");
  const auto cfg = parse_config_json(j);
  CHECK(cfg.members[0].weight == 0.5);
  CHECK(cfg.members[1].weight == 0.5);
}

TEST_CASE("errors carry the field path") {
  auto j = small_config();
  j["ansatz"]["famly"] = "x";
  CHECK(config_error_path(j) == "ansatz.famly");

  j = small_config();
  j.erase("units");
  CHECK(config_error_path(j) == "units");

  j = small_config();
  j["members"][1]["metrics"] = {{"p0", 0.5}, {"p_ad", 0.2}};
  CHECK(config_error_path(j) == "members[1].metrics");

  j = small_config();
  j["members"][0]["perturbation"] = "custom";
  j["members"][0]["perturbation_matrix"] = {{0, {0, 1}}, {{0, 1}, 0}};
  CHECK(config_error_path(j) == "members[0].perturbation_matrix");

  j = small_config();
  j["rabi_sweep"] = {{"grid", {1.0, 2.0}}, {"weights_csv", "does_not_exist.csv"}};
  CHECK(config_error_path(j) == "rabi_sweep.weights_csv");

  j = small_config();
  j["offset_sweep"] = {{"n_pulses", 3}, {"grid", {0.0}}};
  CHECK(config_error_path(j) == "offset_sweep");

  j = small_config();
  j["optimizer"]["seed_range"] = {1.0, 1.0};
  CHECK(config_error_path(j) == "optimizer");
}

TEST_CASE("unit systems convert to rad/s and seconds") {
  auto hz = small_config();
  hz["units"] = "hz";
  const auto a = parse_config_json(hz);
  CHECK(a.ansatz.omega1_max == doctest::Approx(2 * kPi * 4.0));
  CHECK(a.members[1].rabi == doctest::Approx(2 * kPi * 5.0));
  CHECK(a.ansatz.duration == 1.0);

  auto dimless = small_config();
  dimless["units"] = "omega1_units";
  dimless["omega1_reference_hz"] = 1000.0;
  const auto b = parse_config_json(dimless);
  const double w = 2 * kPi * 1000.0;
  CHECK(b.ansatz.omega1_max == doctest::Approx(4.0 * w));
  CHECK(b.ansatz.duration == doctest::Approx(2 * kPi / w));

  auto block = small_config();
  block["ansatz"]["units"] = "hz";
  const auto c = parse_config_json(block);
  CHECK(c.ansatz.omega1_max == doctest::Approx(2 * kPi * 4.0));
  CHECK(c.members[1].rabi == 5.0);
}

TEST_CASE("inversion preset resolves to its recipe") {
  const auto cfg = parse_config(preset("afp_2p3_cycles"));
  CHECK(cfg.ansatz.family == "poly_afp");
  CHECK(cfg.ansatz.parameters == 50);
  CHECK(cfg.ansatz.duration == doctest::Approx(2.3 * 2 * kPi));
  CHECK(cfg.ansatz.offset_max == doctest::Approx(5.0 * cfg.ansatz.omega1_max));
  REQUIRE(cfg.members.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    const auto& m = cfg.members[i];
    CHECK(m.rabi == doctest::Approx(1.0 + 0.25 * static_cast<double>(i)));
    CHECK(m.weight == doctest::Approx(0.2));
    CHECK(m.metrics == MetricWeights{0.2, 0.6, 0.2});
    CHECK(m.perturbation == PerturbationKind::sigma_z);
    CHECK(m.target.theta == doctest::Approx(kPi));
  }
  const auto problem = build_problem(cfg);
  CHECK(problem.members[4].field.rabi_scale == doctest::Approx(2.0));

  const auto scaled = parse_config(preset("afp_train_479khz"));
  const double w = 2 * kPi * 479e3;
  CHECK(scaled.ansatz.omega1_max == doctest::Approx(w));
  CHECK(scaled.ansatz.duration == doctest::Approx(4.8e-6).epsilon(1e-3));
  REQUIRE(scaled.train);
  CHECK(scaled.train->t_w == 52e-6);
  CHECK(scaled.train->T2 == 364e-6);
  CHECK(scaled.train->T2_star == 70e-6);
  CHECK(scaled.train->rabi.front() == doctest::Approx(w));
  CHECK(scaled.train->rabi.back() == doctest::Approx(2 * w));
  CHECK(scaled.train->rabi_weights.front() == 0.5);
}

TEST_CASE("dipolar presets resolve to their recipes") {
  const auto cfg = parse_config(preset("dipolar_electron"));
  CHECK(cfg.ansatz.parameters == 40);
  CHECK(cfg.ansatz.duration == 1e-6);
  CHECK(cfg.ansatz.offset_max == doctest::Approx(2 * kPi * 50e6));
  REQUIRE(cfg.members.size() == 7);
  CHECK(cfg.members.front().rabi == doctest::Approx(2 * kPi * 7.57e6));
  CHECK(cfg.members.back().rabi == doctest::Approx(2 * kPi * 12.05e6));
  for (const auto& m : cfg.members) {
    CHECK(m.weight == doctest::Approx(1.0 / 7));
    CHECK(m.metrics == MetricWeights{0.2, 0.5, 0.3});
    CHECK(m.perturbation == PerturbationKind::dipolar_pair);
  }
  REQUIRE(cfg.multispin);
  CHECK(cfg.multispin->rabi.size() == 9);
  CHECK(cfg.multispin->gamma == doctest::Approx(kGammaElectron));

  const auto ref = parse_config(preset("dipolar_reference"));
  CHECK(ref.members[3].metrics == MetricWeights{0.2, 0.8, 0.0});
  CHECK(ref.multispin == cfg.multispin);
}

TEST_CASE("selective and state-to-state presets resolve to their recipes") {
  const auto sel = parse_config(preset("selective_larmor"));
  CHECK(sel.ansatz.parameters == 10);
  CHECK(sel.ansatz.duration == 300e-6);
  REQUIRE(sel.members.size() == 13);
  int in_band = 0;
  for (const auto& m : sel.members) {
    const double khz = m.offset / (2 * kPi * 1e3);
    if (std::abs(khz) <= 47.0 + 1e-9) {
      ++in_band;
      CHECK(m.metrics == MetricWeights{0.2, 0.8, 0.0});
      CHECK(m.target.theta == doctest::Approx(kPi));
      const bool edge = std::abs(std::abs(khz) - 47.0) < 1e-9;
      CHECK(m.weight == doctest::Approx(edge ? 2.0 / 17 : 1.0 / 17));
    } else {
      CHECK(std::abs(khz) == doctest::Approx(72.5));
      CHECK(m.metrics == MetricWeights{1.0, 0.0, 0.0});
      CHECK(m.target == m.initial);
      CHECK(m.weight == doctest::Approx(2.0 / 17));
    }
  }
  CHECK(in_band == 11);
  REQUIRE(sel.selectivity);
  CHECK(sel.selectivity->repetitions == 140);

  const auto arb = parse_config(preset("arbitrary_state"));
  CHECK(arb.ansatz.family == "arbitrary_state");
  CHECK(arb.ansatz.parameters == 30);
  CHECK(arb.ansatz.omega1_max == doctest::Approx(2 * kPi * 448e3));
  CHECK(arb.ansatz.offset_max == doctest::Approx(2 * kPi * 7.4e6));
  CHECK((arb.ansatz.initial_axis - Vec3d(std::sin(kPi / 3), 0, std::cos(kPi / 3))).norm() < 1e-12);
  CHECK((arb.ansatz.final_axis - Vec3d(0, std::sin(2 * kPi / 3), std::cos(2 * kPi / 3))).norm() < 1e-12);
  CHECK(arb.members[0].metrics == MetricWeights{0.2, 0.8, 0.0});
}

TEST_CASE("resolved dumps round-trip for every preset") {
  for (const auto& entry : fs::directory_iterator(ADIABAT_PRESET_DIR)) {
    CAPTURE(entry.path().string());
    const auto cfg = parse_config(entry.path());
    const auto dumped = resolved_config(cfg);
    const auto again = parse_config_json(json::parse(dumped.dump()));
    CHECK(again == cfg);
    CHECK(config_hash(again) == config_hash(cfg));
    CHECK(resolved_config(again) == dumped);
  }
  auto j = small_config();
  j["members"][0]["perturbation"] = "custom";
  j["members"][0]["perturbation_matrix"] = {{1, {0, -1}}, {{0, 1}, -1}};
  j["members"][0]["sign"] = -1;
  const auto cfg = parse_config_json(j);
  CHECK(parse_config_json(resolved_config(cfg)) == cfg);
}

TEST_CASE("config hash tracks content") {
  const auto a = parse_config_json(small_config());
  auto j = small_config();
  j["optimizer"]["seed"] = 8;
  const auto b = parse_config_json(j);
  CHECK(config_hash(a).size() == 16);
  CHECK(config_hash(a) != config_hash(b));
  CHECK(config_hash(a) == config_hash(parse_config_json(small_config())));
}

TEST_CASE("weight tables and waveforms round-trip through CSV") {
  const auto table = scratch("weights.csv");
  {
    std::ofstream out(table);
    out << "# measured nutation profile\nomega1_hz,p\n100,0.5\n150,1\n200,0.25\n";
  }
  auto j = small_config();
  j["rabi_sweep"] = {{"units", "hz"}, {"grid", {{"start", 100.0}, {"stop", 200.0}, {"points", 3}}}, {"weights_csv", table.filename().string()}};
  const auto cfg = parse_config_json(j, table.parent_path());
  REQUIRE(cfg.rabi_sweep);
  CHECK(cfg.rabi_sweep->weight_abscissa == std::vector<double>{2 * kPi * 100, 2 * kPi * 150, 2 * kPi * 200});
  CHECK(cfg.rabi_sweep->weight_values == std::vector<double>{0.5, 1.0, 0.25});
  CHECK(parse_config_json(resolved_config(cfg)) == cfg);

  const auto ansatz = make_ansatz(parse_config(preset("afp_2p3_cycles")).ansatz);
  ParamVector x = ParamVector::LinSpaced(50, -1.0, 1.0);
  const auto samples = sample_waveform(*ansatz, x, 257);
  const auto wf = scratch("waveform.csv");
  write_waveform_csv(wf, {"0123456789abcdef", 3}, samples);
  const auto back = read_waveform_csv(wf);
  REQUIRE(back.size() == samples.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].t == samples[i].t);
    CHECK(back[i].b == samples[i].b);
  }
  std::ifstream in(wf);
  std::string first;
  std::getline(in, first);
  CHECK(first == std::string("# tool: ") + kToolName + " " + kToolVersion);
}

TEST_CASE("optimized pulse documents reproduce and reload") {
  const auto cfg = parse_config_json(small_config());
  const OutputHeader header{config_hash(cfg), cfg.optimizer.seed};
  const auto a = optimize(build_problem(cfg));
  const auto b = optimize(build_problem(cfg));
  const auto ja = pulse_json(a, cfg.ansatz, header);
  CHECK(ja.dump() == pulse_json(b, cfg.ansatz, header).dump());
  CHECK(ja["header"]["config_hash"] == header.config_hash);

  const auto path = scratch("pulse.json");
  write_json(path, ja);
  const auto stored = read_pulse_json(path);
  CHECK(stored.ansatz == cfg.ansatz);
  CHECK(stored.x == a.x);
  CHECK(stored.header.rng_seed == 7);
  CHECK(stored.pulse()(0.3) == Pulse{make_ansatz(cfg.ansatz), a.x}(0.3));
}
