// dnrl: train, evaluate, ablate, encode point logs and replay episodes.
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dnrl/episode_log.hpp"
#include "dnrl/eval_bench.hpp"
#include "dnrl/lidar_encoding.hpp"
#include "dnrl/run_config.hpp"

namespace fs = std::filesystem;
using namespace dnrl;

namespace {

constexpr int kOk = 0;
constexpr int kRuntime = 1;
constexpr int kUsage = 2;

// Input problems (bad files, configs, checkpoints) map to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

RunConfig config_or_default(const std::string& path) {
  if (path.empty()) return RunConfig{};
  if (!fs::exists(path)) throw UsageError(path + ": config file not found");
  return load_run_config(path);
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError(path.string() + ": cannot open");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path resolve_out(const std::string& flag, const RunConfig& cfg) {
  const std::string dir = flag.empty() ? cfg.out_dir : flag;
  if (dir.empty()) throw UsageError("--out is required (or set out_dir in the config)");
  return dir;
}

// ----------------------------------------------------------------- train

struct TrainArgs {
  std::string config, out, ablation = "none";
  std::int64_t seed = -1;
};

int cmd_train(const TrainArgs& a) {
  RunConfig cfg = config_or_default(a.config);
  if (a.seed >= 0) cfg.seed = static_cast<std::uint64_t>(a.seed);
  if (a.ablation == "raw_lidar") {
    cfg.input = InputMode::RawLidar;
  } else if (a.ablation == "no_dyn_reward") {
    cfg.reward_mode = DynamicRewardMode::StaticFormula;
  }
  const fs::path out = resolve_out(a.out, cfg);
  cfg.out_dir = out.string();
  cfg.validate();
  fs::create_directories(out);
  write_file(out / "resolved_config.json", run_config_to_json(cfg).dump(2) + "\n");

  TrainIo io;
  io.out_dir = out;
  io.on_eval = [](const CurvePoint& p) {
    std::printf("steps %lld  mean_reward %.3f  success %.2f  clip %.3f  kl %.5f\n", static_cast<long long>(p.steps),
                p.mean_reward, p.success_rate, p.clip_frac, p.approx_kl);
    std::fflush(stdout);
  };
  const TrainResult r = train(cfg.env(), cfg.net(), cfg.trainer(), io);
  std::printf("trained %lld steps in %d iterations; wrote %s\n", static_cast<long long>(r.steps), r.iterations,
              (out / "final.ckpt").string().c_str());
  return kOk;
}

// ------------------------------------------------------------------ eval

struct EvalArgs {
  std::string config, policy, out;
  std::vector<std::string> suite{"standard"};
  int trials = -1;
  std::int64_t seed = -1;
  bool no_timing = false;
  bool no_trajectories = false;
};

int cmd_eval(const EvalArgs& a) {
  RunConfig cfg = config_or_default(a.config);
  if (a.seed >= 0) cfg.seed = static_cast<std::uint64_t>(a.seed);
  std::vector<ScenarioSpec> suite;
  if (a.suite.size() == 1 && a.suite[0] == "standard") {
    suite = standard_suite(10, cfg.seed);
  } else if (a.suite.size() == 2 && a.suite[0] == "custom") {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_file(a.suite[1]));
    } catch (const nlohmann::json::parse_error& e) {
      throw UsageError(a.suite[1] + ": " + e.what());
    }
    suite = suite_from_json(j, a.suite[1]);
  } else {
    throw UsageError("--suite expects 'standard' or 'custom PATH'");
  }
  if (a.trials > 0) {
    for (auto& s : suite) s.trials = a.trials;
  } else if (a.trials == 0) {
    throw UsageError("--trials must be >= 1");
  }
  const fs::path out = resolve_out(a.out, cfg);
  cfg.validate();

  std::unique_ptr<PolicyController> policy;
  BaselineController baseline;
  std::vector<Controller*> controllers;
  if (a.policy != "baseline") {
    PolicyParams<float> params;
    try {
      params = load_checkpoint(a.policy, cfg.net());
    } catch (const CheckpointError& e) {
      throw UsageError(a.policy + ": " + e.what());
    }
    policy = std::make_unique<PolicyController>(std::move(params));
    controllers.push_back(policy.get());
  }
  controllers.push_back(&baseline);

  BenchOptions opts;
  opts.measure_timing = !a.no_timing;
  opts.write_trajectories = !a.no_trajectories;
  const BenchReport report = run_benchmark(controllers, suite, cfg.env(), out, opts);
  std::cout << report_table(report.rows);
  return kOk;
}

// ---------------------------------------------------------------- ablate

struct AblateArgs {
  std::string config, out, kind = "encoding";
  std::vector<std::uint64_t> seeds{1, 2, 3};
  int trials = 20;
};

int cmd_ablate(const AblateArgs& a) {
  RunConfig cfg = config_or_default(a.config);
  const fs::path out = resolve_out(a.out, cfg);
  cfg.validate();
  AblationConfig ab;
  try {
    ab.kind = ablation_kind_from_string(a.kind);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  ab.env = cfg.env();
  ab.net = cfg.net();
  ab.train = cfg.trainer();
  ab.seeds = a.seeds;
  // 10+10: denser suites leave both variants at zero success at desk-scale training
  ab.eval_scenario = standard_suite(a.trials, cfg.seed)[0];
  const AblationResult r = run_ablation(ab, out);
  if (ab.kind == AblationKind::DynamicReward) {
    std::cout << ablation_speed_csv(r.speed_rows);
  } else {
    for (const auto& run : r.runs) {
      const double last = run.result.curve.empty() ? 0.0 : run.result.curve.back().mean_reward;
      std::printf("seed %llu  %-12s final mean reward %.3f\n", static_cast<unsigned long long>(run.seed),
                  run.variant.c_str(), last);
    }
  }
  return kOk;
}

// ---------------------------------------------------------------- encode

struct EncodeArgs {
  std::string points, config, out;
  double altitude = 0.0;
};

int cmd_encode(const EncodeArgs& a) {
  RunConfig cfg = config_or_default(a.config);
  cfg.validate();
  std::ifstream in(a.points);
  if (!in) throw UsageError(a.points + ": cannot open point log");
  std::vector<PointFrame> frames;
  try {
    frames = read_point_log(in);
  } catch (const EncodingError& e) {
    throw UsageError(a.points + ": " + e.what());
  }
  const fs::path out = a.out;
  fs::create_directories(out);
  if (frames.empty()) std::cerr << "warning: " << a.points << " contains no frames; no maps written\n";

  // points are taken relative to a sensor at the origin, at --altitude
  const Point3 quad{0.0, 0.0, a.altitude};
  ScanWindow window(cfg.encoder.window_frames);
  ObstacleMap map(cfg.encoder.sectors, cfg.encoder.history);
  std::ostringstream csv;
  csv << "frame_id";
  for (int s = 1; s <= cfg.encoder.sectors; ++s) csv << ",d" << s;
  csv << '\n';
  char name[64];
  for (auto& f : frames) {
    const std::int64_t id = f.frame_id;
    try {
      window.push(std::move(f));
    } catch (const EncodingError& e) {
      throw UsageError(a.points + ": frame " + std::to_string(id) + ": " + e.what());
    }
    const DistanceVector column = encode_window(window, quad, cfg.encoder);
    map.push_column(column);
    csv << id;
    for (double d : column) {
      std::snprintf(name, sizeof name, ",%.9g", d);
      csv << name;
    }
    csv << '\n';
    std::snprintf(name, sizeof name, "map_%06lld.pgm", static_cast<long long>(id));
    write_file(out / name, export_map_image(map));
  }
  write_file(out / "distance_vectors.csv", csv.str());
  std::printf("encoded %zu frames into %s\n", frames.size(), out.string().c_str());
  return kOk;
}

// ---------------------------------------------------------------- replay

struct ReplayArgs {
  std::string log, arena, out, config;
};

int cmd_replay(const ReplayArgs& a) {
  RunConfig cfg = config_or_default(a.config);
  std::ifstream in(a.log);
  if (!in) throw UsageError(a.log + ": cannot open episode log");
  std::vector<EpisodeLogRow> rows;
  try {
    rows = read_episode_log(in);
  } catch (const LogFormatError& e) {
    throw UsageError(a.log + ": " + e.what());
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(a.arena));
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError(a.arena + ": " + e.what());
  }
  Arena arena;
  try {
    // either a trial snapshot {"tick", "arena"} or a bare arena
    if (j.contains("arena")) {
      arena = arena_from_json(j.at("arena"));
      const auto tick = j.at("tick").get<std::int64_t>();
      if (rows.empty() || rows.back().tick != tick) {
        throw UsageError("tick mismatch: arena snapshot is at tick " + std::to_string(tick) + " but the log ends at " +
                         (rows.empty() ? std::string("no rows") : "tick " + std::to_string(rows.back().tick)));
      }
    } else {
      arena = arena_from_json(j);
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(a.arena + ": " + e.what());
  }
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].tick != rows[i - 1].tick + 1) {
      throw UsageError(a.log + ": ticks not consecutive at tick " + std::to_string(rows[i].tick));
    }
  }
  write_file(a.out, render_trajectory_svg(arena, rows, cfg.reward.v_max, cfg.reward.hover_radius));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dnrl: lidar-map navigation policy training and benchmarking"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a policy with PPO");
  train_cmd->add_option("--config", ta.config, "Run config JSON");
  train_cmd->add_option("--out", ta.out, "Output directory");
  train_cmd->add_option("--seed", ta.seed, "Seed (overrides the config)")->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--ablation", ta.ablation, "none | raw_lidar | no_dyn_reward")
      ->check(CLI::IsMember({"none", "raw_lidar", "no_dyn_reward"}));

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Run the benchmark suite");
  eval_cmd->add_option("--policy", ea.policy, "Checkpoint path, or 'baseline'")->required();
  eval_cmd->add_option("--suite", ea.suite, "'standard' or 'custom PATH'")->expected(1, 2);
  eval_cmd->add_option("--trials", ea.trials, "Trials per scenario");
  eval_cmd->add_option("--out", ea.out, "Output directory");
  eval_cmd->add_option("--config", ea.config, "Run config JSON");
  eval_cmd->add_option("--seed", ea.seed, "Suite seed (overrides the config)")->check(CLI::NonNegativeNumber);
  eval_cmd->add_flag("--no-timing", ea.no_timing, "Skip t_p measurement (report shows '/')");
  eval_cmd->add_flag("--no-trajectories", ea.no_trajectories, "Skip per-trial logs and SVGs");

  AblateArgs aa;
  auto* ablate_cmd = app.add_subcommand("ablate", "Paired ablation training runs");
  ablate_cmd->add_option("--kind", aa.kind, "encoding | dynamic_reward")
      ->check(CLI::IsMember({"encoding", "dynamic_reward"}));
  ablate_cmd->add_option("--config", aa.config, "Run config JSON");
  ablate_cmd->add_option("--out", aa.out, "Output directory");
  ablate_cmd->add_option("--seeds", aa.seeds, "Training seeds")->delimiter(',');
  ablate_cmd->add_option("--trials", aa.trials, "Evaluation trials per speed (dynamic_reward)")
      ->check(CLI::PositiveNumber);

  EncodeArgs na;
  auto* encode_cmd = app.add_subcommand("encode", "Encode a recorded point log into obstacle maps");
  encode_cmd->add_option("--points", na.points, "CSV with frame_id,x,y,z")->required();
  encode_cmd->add_option("--config", na.config, "Run config JSON");
  encode_cmd->add_option("--out", na.out, "Output directory")->required();
  encode_cmd->add_option("--altitude", na.altitude, "Sensor altitude for the band filter");

  ReplayArgs ra;
  auto* replay_cmd = app.add_subcommand("replay", "Render an episode log as SVG");
  replay_cmd->add_option("--log", ra.log, "Episode log CSV")->required();
  replay_cmd->add_option("--arena", ra.arena, "Arena JSON or trial snapshot")->required();
  replay_cmd->add_option("--out", ra.out, "Output SVG")->required();
  replay_cmd->add_option("--config", ra.config, "Run config JSON (speed scale, hover radius)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*train_cmd) return cmd_train(ta);
    if (*eval_cmd) return cmd_eval(ea);
    if (*ablate_cmd) return cmd_ablate(aa);
    if (*encode_cmd) return cmd_encode(na);
    if (*replay_cmd) return cmd_replay(ra);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}
