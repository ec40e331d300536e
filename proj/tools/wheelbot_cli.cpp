#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "wheelbot/control.hpp"
#include "wheelbot/report.hpp"
#include "wheelbot/simloop.hpp"
#include "wheelbot/standup.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace wheelbot;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitFailure = 2;

json matrix_json(const MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(r);
  }
  return rows;
}

json vector_json(const Vec4& v) { return {v(0), v(1), v(2), v(3)}; }

Vec4 read_vec4(const json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_array() || j.at(key).size() != 4)
    throw ConfigError(std::string("weights: '") + key + "' must be an array of 4 numbers");
  Vec4 v;
  for (int i = 0; i < 4; ++i) v(i) = j.at(key).at(i).get<double>();
  return v;
}

LqrWeights load_weights(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open weights file '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("weights file '" + path + "' is not valid JSON: " + e.what());
  }
  detail::reject_unknown(j, {"Q1", "R1", "Q2", "R2"}, "weights");
  LqrWeights w;
  w.Q1 = read_vec4(j, "Q1");
  w.Q2 = read_vec4(j, "Q2");
  w.R1 = detail::get_number(j, "R1", 1.0, "weights");
  w.R2 = detail::get_number(j, "R2", 1.0, "weights");
  return w;
}

struct RunResult {
  int exit_code = kExitOk;
  std::string message;
};

RunResult simulate_one(const fs::path& config, const fs::path& out, std::optional<std::uint64_t> seed) {
  ScenarioConfig cfg;
  try {
    cfg = load_scenario(config.string());
  } catch (const std::exception& e) {
    return {kExitUsage, config.string() + ": " + e.what()};
  }
  if (seed) cfg.seed = *seed;
  const SimLog log = run_scenario(cfg);
  const RunSummary summary = summarize(log);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_csv(out.string(), log.rows);
  json j = to_json(summary);
  j["diagnostics"] = {{"seed", cfg.seed},
                      {"slipped", log.slipped},
                      {"peak_friction_ratio", log.peak_friction_ratio},
                      {"failure", log.failure}};
  fs::path summary_path = out;
  summary_path.replace_extension(".summary.json");
  std::ofstream(summary_path) << j.dump(2) << "\n";
  std::string msg = log.name + ": " + (summary.success ? "success" : "failure") + ", final phase " +
                    to_string(summary.final_phase);
  if (!log.failure.empty()) msg += " (" + log.failure + ")";
  return {summary.success ? kExitOk : kExitFailure, msg};
}

int cmd_simulate(const std::string& config, const std::string& out, std::optional<std::uint64_t> seed, int jobs) {
  if (!fs::is_directory(config)) {
    const RunResult r = simulate_one(config, out, seed);
    (r.exit_code == kExitUsage ? std::cerr : std::cout) << r.message << "\n";
    return r.exit_code;
  }
  std::vector<fs::path> configs;
  for (const auto& e : fs::directory_iterator(config))
    if (e.path().extension() == ".json") configs.push_back(e.path());
  std::sort(configs.begin(), configs.end());
  std::vector<RunResult> results(configs.size());
  std::atomic<size_t> next{0};
  auto worker = [&] {
    for (size_t i = next++; i < configs.size(); i = next++)
      results[i] = simulate_one(configs[i], fs::path(out) / (configs[i].stem().string() + ".csv"), seed);
  };
  std::vector<std::thread> pool;
  for (int i = 0; i < std::max(1, jobs); ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  int code = kExitOk;
  for (const auto& r : results) {
    (r.exit_code == kExitUsage ? std::cerr : std::cout) << r.message << "\n";
    if (r.exit_code == kExitUsage) code = kExitUsage;
    else if (r.exit_code == kExitFailure && code == kExitOk) code = kExitFailure;
  }
  return code;
}

int cmd_lqr(const std::string& params_path, const std::string& preset, const std::string& weights_path,
            const std::string& system, double Ts, double scalar_a) {
  if (system == "scalar") {
    const MatrixXd A = MatrixXd::Constant(1, 1, scalar_a), I = MatrixXd::Ones(1, 1);
    const MatrixXd &B = I, &Q = I, &R = I;
    const DareSolution s = solve_dare(A, B, Q, R);
    const json j = {{"system", "scalar"},
                    {"Ad", matrix_json(A)},
                    {"Bd", matrix_json(B)},
                    {"P", matrix_json(s.P)},
                    {"K", matrix_json(s.K)},
                    {"residual", dare_residual(A, B, Q, R, s.P).norm()}};
    std::cout << j.dump(2) << "\n";
    return kExitOk;
  }
  const RobotParams p = params_path.empty() ? default_params() : load_params(params_path);
  if (Ts <= 0.0) Ts = p.Ts_control;
  LqrWeights w;
  if (!weights_path.empty()) w = load_weights(weights_path);
  else if (preset == "paper") w = default_weights();
  else if (preset == "identity") w.Q1 = w.Q2 = Vec4::Ones();
  else throw ConfigError("unknown weight preset '" + preset + "' (expected paper or identity)");
  const LinearModel lm = linearize_upright(p);
  const BlockSynthesis roll = synthesize_block(lm.A1, lm.B1, w.Q1, w.R1, roll_measurement_map(), Ts);
  const BlockSynthesis pitch = synthesize_block(lm.A2, lm.B2, w.Q2, w.R2, pitch_measurement_map(), Ts);
  LqrGains g;
  g.K1 = roll.K_law;
  g.K2 = pitch.K_law;
  auto block = [&](const BlockSynthesis& b, const Vec4& Q, double R, const Vec4& K) {
    return json{{"Ad", matrix_json(b.d.Ad)},
                {"Bd", matrix_json(b.d.Bd)},
                {"P", matrix_json(b.dare.P)},
                {"K", vector_json(K)},
                {"dare_residual",
                 dare_residual(b.d.Ad, b.d.Bd, MatrixXd(Q.asDiagonal()), MatrixXd::Constant(1, 1, R), b.dare.P).norm()}};
  };
  json radii = json::object();
  for (int d : {0, 1}) {
    const ClosedLoopRadii r = closed_loop_radii(lm, g, Ts, d);
    radii["delay_" + std::to_string(d)] = {{"roll", r.roll}, {"pitch", r.pitch}, {"stable", r.stable()}};
  }
  const json j = {{"system", "wheelbot"},
                  {"Ts", Ts},
                  {"weights", {{"Q1", vector_json(w.Q1)}, {"R1", w.R1}, {"Q2", vector_json(w.Q2)}, {"R2", w.R2}}},
                  {"roll", block(roll, w.Q1, w.R1, g.K1)},
                  {"pitch", block(pitch, w.Q2, w.R2, g.K2)},
                  {"K1", vector_json(g.K1)},
                  {"K2", vector_json(g.K2)},
                  {"sign", g.sign},
                  {"closed_loop_spectral_radius", radii},
                  {"reference", {{"K1", vector_json(reference_gains().K1)}, {"K2", vector_json(reference_gains().K2)}}}};
  std::cout << j.dump(2) << "\n";
  return kExitOk;
}

int cmd_standup_check(const std::string& params_path, double torque, double omega0, const std::string& brake) {
  const RobotParams p = params_path.empty() ? default_params() : load_params(params_path);
  StandupOptions opt;
  if (brake == "reset") opt.brake = BrakeModel::Reset;
  else if (brake == "explicit") opt.brake = BrakeModel::ExplicitT3;
  else throw ConfigError("unknown brake model '" + brake + "' (expected reset or explicit)");
  const StandupTrace tr = simulate_standup(p, constant_torque(torque), omega0, opt);
  const json j = {{"feasible", tr.success},
                  {"status", to_string(tr.status)},
                  {"torque", torque},
                  {"omega0", omega0},
                  {"static_torque_bound", static_torque_bound(p)},
                  {"max_brake_torque", max_brake_torque(p)},
                  {"sweeps_deg", {rad2deg(tr.sweeps[0]), rad2deg(tr.sweeps[1])}},
                  {"step_durations", {tr.step_durations[0], tr.step_durations[1]}},
                  {"brake_duration", tr.brake_duration},
                  {"peak_omega", tr.peak_omega},
                  {"duration", tr.duration},
                  {"failed_step", tr.failed_step},
                  {"violation_time", tr.violation_time < 0.0 ? json(nullptr) : json(tr.violation_time)}};
  std::cout << j.dump(2) << "\n";
  return tr.success ? kExitOk : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reaction-wheel unicycle simulator"};
  app.require_subcommand(1);

  auto* sim = app.add_subcommand("simulate", "Run a scenario (or a directory of scenarios) and write CSV + summary");
  std::string config, out;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  sim->add_option("--config", config, "Scenario JSON file or directory")->required();
  sim->add_option("--out", out, "Output CSV path (directory when --config is a directory)")->required();
  sim->add_option("--seed", seed, "Override the scenario seed");
  sim->add_option("--jobs", jobs, "Parallel runs for a directory of scenarios")->check(CLI::PositiveNumber);

  auto* lqr = app.add_subcommand("lqr", "Synthesize balancing gains and print them as JSON");
  std::string lqr_params, preset = "paper", weights, system = "wheelbot";
  double Ts = 0.0, scalar_a = 1.0;
  lqr->add_option("--params", lqr_params, "Parameter JSON file (defaults when omitted)");
  lqr->add_option("--preset", preset, "Weight preset: paper or identity");
  lqr->add_option("--weights", weights, "JSON file with Q1, R1, Q2, R2");
  lqr->add_option("--system", system, "wheelbot or scalar")->check(CLI::IsMember({"wheelbot", "scalar"}));
  lqr->add_option("--Ts", Ts, "Control period (defaults to the parameter file)");
  lqr->add_option("--a", scalar_a, "State coefficient of the scalar system");

  auto* sc = app.add_subcommand("standup-check", "Check whether a constant torque can stand the robot up");
  std::string sc_params, brake = "reset";
  double torque = 0.0, omega0 = 0.0;
  sc->add_option("--params", sc_params, "Parameter JSON file (defaults when omitted)");
  sc->add_option("--torque", torque, "Constant wheel torque, Nm")->required();
  sc->add_option("--omega0", omega0, "Initial reaction-wheel rate, rad/s")->required();
  sc->add_option("--brake", brake, "Wheel reset model between steps: reset or explicit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*sim) return cmd_simulate(config, out, seed, jobs);
    if (*lqr) return cmd_lqr(lqr_params, preset, weights, system, Ts, scalar_a);
    if (*sc) return cmd_standup_check(sc_params, torque, omega0, brake);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ParameterError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}
