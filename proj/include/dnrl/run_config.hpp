#pragma once

// One JSON file configures a run: simulator, encoder, reward, network,
// trainer, benchmark suite, output directory and seed. Missing keys take
// defaults; unknown keys and wrongly typed values are errors.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dnrl/eval_bench.hpp"
#include "dnrl/nav_env.hpp"
#include "dnrl/policy_net.hpp"
#include "dnrl/ppo_trainer.hpp"

namespace dnrl {

/// Carries every problem found, one "path: message" per entry.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

struct RunConfig {
  SimConfig sim;
  EncoderConfig encoder;
  RewardWeights reward;
  DynamicRewardMode reward_mode = DynamicRewardMode::Dilated;
  InputMode input = InputMode::EncodedMap;
  NetConfig network;
  TrainConfig train;
  std::vector<ScenarioSpec> suite = standard_suite();
  std::string out_dir;
  std::uint64_t seed = 0;

  EnvConfig env() const;
  /// Network config with max_accel taken from the simulator.
  NetConfig net() const;
  /// Training config carrying the run seed.
  TrainConfig trainer() const;

  /// Per-section checks plus cross-field consistency; throws ConfigError.
  void validate() const;
};

RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& cfg);

/// Parse and validate. Errors name the file.
RunConfig load_run_config(const std::filesystem::path& path);

/// Scenario list in the `suite` format (array of scenario objects).
std::vector<ScenarioSpec> suite_from_json(const nlohmann::json& j, const std::string& path = "suite");
nlohmann::json suite_to_json(const std::vector<ScenarioSpec>& suite);

}  // namespace dnrl
