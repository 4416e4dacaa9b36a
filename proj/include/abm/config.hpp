#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "abm/adversarial.hpp"
#include "abm/render.hpp"
#include "abm/trainer.hpp"

namespace abm {

enum class Command : std::uint8_t { train, verify, backmap, adversarial, synth };

const char* to_string(Command command);
Command parse_command(const std::string& name);

enum class Experiment : std::uint8_t { a, b1, b2 };

const char* to_string(Experiment experiment);
Experiment parse_experiment(const std::string& name);

/// Every setting of one command-line run.
struct RunConfig {
  Command command = Command::train;

  Architecture arch = Architecture::vgg7;
  std::filesystem::path model;  // empty: build a freshly initialised network
  std::filesystem::path data;   // CIFAR-10 binary directory
  std::filesystem::path output = "abm_out";
  double z_scale = 0.125;
  DType dtype = DType::binary32;
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  std::size_t val_count = 5000;
  std::size_t subset = 0;  // 0 keeps every training example

  std::size_t epochs = 20;
  std::size_t batch = 100;
  double lr = 0.01;
  std::vector<LrStep> lr_drops;
  double l1 = 1e-4;
  bool augment = true;
  std::size_t validate_every = 2;

  std::size_t inputs = 100;
  double floor = 0.9999;

  Mode rm = Mode::rm0;
  int layer = -1;
  std::vector<long> s, j, i, k;
  std::size_t start = 0;
  bool render = false;
  std::size_t grid_width = 0;
  ImageFormat format = ImageFormat::png;
  bool csv = false;
  long image = -1;  // test-set index; -1 draws a random input from the seed

  Experiment experiment = Experiment::a;
  AttackMode mode = AttackMode::untargeted_iterative;
  long target = -1;
  double epsilon = 0.04;
  std::size_t steps = 10;
  double threshold = 0.5;
  double beta_step = 0.05;
  std::size_t scaled_count = 50;
  std::size_t gaussian_count = 50;

  std::size_t per_file = 10000;
  std::size_t test_count = 10000;

  bool operator==(const RunConfig&) const = default;
};

/// One configurable setting: the flag is "--" + name and the config-file key is name.
struct ConfigKey {
  std::string name;
  std::string help;
  std::vector<Command> commands;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;  // throws Error on a bad value

  [[nodiscard]] bool applies_to(Command command) const;
};

const std::vector<ConfigKey>& config_keys();

/// Throws Error for an unknown key.
const ConfigKey& config_key(const std::string& name);

/// "command=<name>" followed by one "key=value" line per key, in table order.
std::string serialize(const RunConfig& config);

/// Applies "key=value" lines to `config`. Blank lines and lines starting with '#'
/// are skipped; whitespace around keys and values is trimmed. A "command" line sets
/// the command. Throws Error naming the line for a malformed line or unknown key.
void apply_config_text(RunConfig& config, const std::string& text);

RunConfig parse_config(const std::string& text);

/// Environment variable that overrides the dataset directory of the config file.
inline constexpr const char* kDataDirEnv = "ABM_DATA_DIR";

/// "200:1e-4,250:5e-5" -> {{200, 1e-4}, {250, 5e-5}}; empty text gives no steps.
std::vector<LrStep> parse_lr_drops(const std::string& text);
std::string format_lr_drops(const std::vector<LrStep>& drops);

/// Learning-rate schedule: `lr` from epoch 0, then each drop.
std::vector<LrStep> lr_schedule(const RunConfig& config);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

}  // namespace abm
