#include "abm/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "abm/error.hpp"

namespace abm {

namespace {

std::string trim(const std::string& text) {
  const auto first = text.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = text.find_last_not_of(" \t\r");
  return text.substr(first, last - first + 1);
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> parts;
  std::string part;
  std::istringstream in(text);
  while (std::getline(in, part, sep)) parts.push_back(trim(part));
  return parts;
}

template <typename N>
N parse_number(const std::string& text, const std::string& what) {
  N value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw Error("invalid value '" + text + "' for " + what);
  }
  if constexpr (std::is_floating_point_v<N>) {
    if (!std::isfinite(value) && text.find_first_of("iI") == std::string::npos) {
      throw Error("invalid value '" + text + "' for " + what);
    }
  }
  return value;
}

bool parse_bool(const std::string& text, const std::string& what) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw Error("invalid value '" + text + "' for " + what + " (expected true or false)");
}

std::vector<long> parse_list(const std::string& text, const std::string& what) {
  std::vector<long> out;
  if (trim(text).empty()) return out;
  for (const auto& part : split(text, ',')) out.push_back(parse_number<long>(part, what));
  return out;
}

std::string format_list(const std::vector<long>& values) {
  std::string out;
  for (std::size_t n = 0; n < values.size(); ++n) {
    if (n) out += ',';
    out += std::to_string(values[n]);
  }
  return out;
}

DType parse_dtype(const std::string& text) {
  if (text == "binary32" || text == "float32" || text == "float") return DType::binary32;
  if (text == "binary64" || text == "float64" || text == "double") return DType::binary64;
  throw Error("unknown dtype '" + text + "' (expected binary32 or binary64)");
}

ImageFormat parse_format(const std::string& text) {
  if (text == "png") return ImageFormat::png;
  if (text == "ppm") return ImageFormat::ppm;
  throw Error("unknown image format '" + text + "' (expected png or ppm)");
}

Mode parse_rm(const std::string& text) {
  if (text.size() == 1 && text[0] >= '0' && text[0] <= '4') return parse_mode("rm" + text);
  return parse_mode(text);
}

constexpr Command kAll[] = {Command::train, Command::verify, Command::backmap, Command::adversarial, Command::synth};

std::vector<Command> all_commands() { return {std::begin(kAll), std::end(kAll)}; }

const std::vector<Command> kModelUsers = {Command::train, Command::verify, Command::backmap, Command::adversarial};
const std::vector<Command> kDataUsers = {Command::train, Command::verify, Command::backmap, Command::adversarial};
const std::vector<Command> kTraced = {Command::verify, Command::backmap, Command::adversarial};
const std::vector<Command> kImageUsers = {Command::backmap, Command::adversarial};

#define ABM_SIZE_KEY(flag, member, help, commands)                                                          \
  ConfigKey{flag, help, commands, [](const RunConfig& c) { return std::to_string(c.member); },            \
            [](RunConfig& c, const std::string& v) { c.member = parse_number<std::size_t>(v, "--" flag); }}

#define ABM_DOUBLE_KEY(flag, member, help, commands)                                                  \
  ConfigKey{flag, help, commands, [](const RunConfig& c) { return format_double(c.member); },       \
            [](RunConfig& c, const std::string& v) { c.member = parse_number<double>(v, "--" flag); }}

#define ABM_LIST_KEY(flag, member, help)                                                         \
  ConfigKey{flag, help, {Command::backmap}, [](const RunConfig& c) { return format_list(c.member); }, \
            [](RunConfig& c, const std::string& v) { c.member = parse_list(v, "--" flag); }}

std::vector<ConfigKey> make_keys() {
  std::vector<ConfigKey> keys = {
      ConfigKey{"arch", "Architecture of a freshly built network: vgg7, fixup_resnet20 or tiny", kModelUsers,
                [](const RunConfig& c) { return std::string(to_string(c.arch)); },
                [](RunConfig& c, const std::string& v) { c.arch = parse_architecture(v); }},
      ConfigKey{"model", "Model file to load instead of building a fresh network", kModelUsers,
                [](const RunConfig& c) { return c.model.string(); },
                [](RunConfig& c, const std::string& v) { c.model = v; }},
      ConfigKey{"data", "CIFAR-10 binary directory (data_batch_1..5.bin, test_batch.bin); ABM_DATA_DIR overrides the config file",
                kDataUsers, [](const RunConfig& c) { return c.data.string(); },
                [](RunConfig& c, const std::string& v) { c.data = v; }},
      ConfigKey{"output", "Directory for every artifact of the run", all_commands(),
                [](const RunConfig& c) { return c.output.string(); },
                [](RunConfig& c, const std::string& v) { c.output = v; }},
      ABM_DOUBLE_KEY("z-scale", z_scale, "Gates are frozen at z(x) = k x for this k > 0", kTraced),
      ConfigKey{"dtype", "Arithmetic: binary32 or binary64", kModelUsers,
                [](const RunConfig& c) { return std::string(to_string(c.dtype)); },
                [](RunConfig& c, const std::string& v) { c.dtype = parse_dtype(v); }},
      ConfigKey{"seed", "Seed for initialisation, shuffling, augmentation, random inputs and sampling", all_commands(),
                [](const RunConfig& c) { return std::to_string(c.seed); },
                [](RunConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>(v, "--seed"); }},
      ABM_SIZE_KEY("workers", workers, "Maximum worker threads", kTraced),
      ABM_SIZE_KEY("val-count", val_count, "Training records held out for validation", kDataUsers),
      ABM_SIZE_KEY("subset", subset, "Training examples kept after the validation split (0 keeps all)",
                   std::vector<Command>{Command::train}),
      ABM_SIZE_KEY("epochs", epochs, "Training epochs", std::vector<Command>{Command::train}),
      ABM_SIZE_KEY("batch", batch, "Mini-batch size", std::vector<Command>{Command::train}),
      ABM_DOUBLE_KEY("lr", lr, "Learning rate from the first epoch (0 leaves the weights unchanged)",
                     std::vector<Command>{Command::train}),
      ConfigKey{"lr-drops", "Later learning rates as epoch:rate pairs, e.g. 200:1e-4,250:5e-5",
                {Command::train}, [](const RunConfig& c) { return format_lr_drops(c.lr_drops); },
                [](RunConfig& c, const std::string& v) { c.lr_drops = parse_lr_drops(v); }},
      ABM_DOUBLE_KEY("l1", l1, "L1 penalty factor on conv kernels and dense weights",
                     std::vector<Command>{Command::train}),
      ConfigKey{"augment", "Random flip, colour jitter and resized crop of training images (true or false)",
                {Command::train}, [](const RunConfig& c) { return std::string(c.augment ? "true" : "false"); },
                [](RunConfig& c, const std::string& v) { c.augment = parse_bool(v, "--augment"); }},
      ABM_SIZE_KEY("validate-every", validate_every, "Epochs between validation passes",
                   std::vector<Command>{Command::train}),
      ABM_SIZE_KEY("inputs", inputs, "Inputs to verify: the first test images with --data, random inputs otherwise",
                   std::vector<Command>{Command::verify}),
      ABM_DOUBLE_KEY("floor", floor, "Required fraction of relative errors at or below 1e-2 in every layer",
                     std::vector<Command>{Command::verify}),
      ConfigKey{"rm", "Reconstruction mode 0..4", {Command::backmap},
                [](const RunConfig& c) { return std::to_string(static_cast<int>(c.rm)); },
                [](RunConfig& c, const std::string& v) { c.rm = parse_rm(v); }},
      ConfigKey{"layer", "Conv layer index counted from 0 (-1 for the classifier)", {Command::backmap},
                [](const RunConfig& c) { return std::to_string(c.layer); },
                [](RunConfig& c, const std::string& v) { c.layer = parse_number<int>(v, "--layer"); }},
      ABM_LIST_KEY("s", s, "Stride offsets to keep, comma separated (empty keeps all)"),
      ABM_LIST_KEY("j", j, "In-channels to keep, comma separated (empty keeps all)"),
      ABM_LIST_KEY("i", i, "Out-channels to keep, comma separated (empty keeps all)"),
      ABM_LIST_KEY("k", k, "Classes to keep, comma separated (empty keeps all)"),
      ABM_SIZE_KEY("start", start, "Ordinal of the first surface to emit within the filtered sequence",
                   std::vector<Command>{Command::backmap}),
      ConfigKey{"render", "Also write images of the surfaces (true or false)", {Command::backmap},
                [](const RunConfig& c) { return std::string(c.render ? "true" : "false"); },
                [](RunConfig& c, const std::string& v) { c.render = parse_bool(v, "--render"); }},
      ABM_SIZE_KEY("grid-width", grid_width, "Cells per row of a stride sheet (0: square root of the count)",
                   std::vector<Command>{Command::backmap}),
      ConfigKey{"format", "Image format: png or ppm", {Command::backmap, Command::adversarial},
                [](const RunConfig& c) { return std::string(c.format == ImageFormat::png ? "png" : "ppm"); },
                [](RunConfig& c, const std::string& v) { c.format = parse_format(v); }},
      ConfigKey{"csv", "Also write the flattened surfaces as CSV, one surface per row (true or false)",
                {Command::backmap}, [](const RunConfig& c) { return std::string(c.csv ? "true" : "false"); },
                [](RunConfig& c, const std::string& v) { c.csv = parse_bool(v, "--csv"); }},
      ConfigKey{"image", "Test-set index of the input (-1 draws a random input from the seed)", kImageUsers,
                [](const RunConfig& c) { return std::to_string(c.image); },
                [](RunConfig& c, const std::string& v) { c.image = parse_number<long>(v, "--image"); }},
      ConfigKey{"experiment", "a: one attack with the logit/hyperplane table; b1: one targeted attack per class; "
                              "b2: scaled and Gaussian contrast set",
                {Command::adversarial}, [](const RunConfig& c) { return std::string(to_string(c.experiment)); },
                [](RunConfig& c, const std::string& v) { c.experiment = parse_experiment(v); }},
      ConfigKey{"mode", "Attack of experiment a: untargeted or targeted", {Command::adversarial},
                [](const RunConfig& c) { return std::string(to_string(c.mode)); },
                [](RunConfig& c, const std::string& v) { c.mode = parse_attack_mode(v); }},
      ConfigKey{"target", "Target class of a targeted attack (-1: least likely class)", {Command::adversarial},
                [](const RunConfig& c) { return std::to_string(c.target); },
                [](RunConfig& c, const std::string& v) { c.target = parse_number<long>(v, "--target"); }},
      ABM_DOUBLE_KEY("epsilon", epsilon, "Per-step change of every input element",
                     std::vector<Command>{Command::adversarial}),
      ABM_SIZE_KEY("steps", steps, "Maximum attack steps", std::vector<Command>{Command::adversarial}),
      ABM_DOUBLE_KEY("threshold", threshold, "Logit margin a scaled perturbation must exceed over the label",
                     std::vector<Command>{Command::adversarial}),
      ABM_DOUBLE_KEY("beta-step", beta_step, "Decrement of the perturbation scale during the scan",
                     std::vector<Command>{Command::adversarial}),
      ABM_SIZE_KEY("scaled-count", scaled_count, "Scaled perturbations kept after shuffling",
                   std::vector<Command>{Command::adversarial}),
      ABM_SIZE_KEY("gaussian-count", gaussian_count, "Gaussian contrast perturbations",
                   std::vector<Command>{Command::adversarial}),
      ABM_SIZE_KEY("per-file", per_file, "Records per synthetic training file (five files)",
                   std::vector<Command>{Command::synth}),
      ABM_SIZE_KEY("test-count", test_count, "Records in the synthetic test file", std::vector<Command>{Command::synth}),
  };
  return keys;
}

}  // namespace

const char* to_string(Command command) {
  switch (command) {
    case Command::train:
      return "train";
    case Command::verify:
      return "verify";
    case Command::backmap:
      return "backmap";
    case Command::adversarial:
      return "adversarial";
    case Command::synth:
      return "synth";
  }
  return "?";
}

Command parse_command(const std::string& name) {
  for (Command c : kAll) {
    if (name == to_string(c)) return c;
  }
  throw Error("unknown command '" + name + "'");
}

const char* to_string(Experiment experiment) {
  switch (experiment) {
    case Experiment::a:
      return "a";
    case Experiment::b1:
      return "b1";
    case Experiment::b2:
      return "b2";
  }
  return "?";
}

Experiment parse_experiment(const std::string& name) {
  if (name == "a") return Experiment::a;
  if (name == "b1") return Experiment::b1;
  if (name == "b2") return Experiment::b2;
  throw Error("unknown experiment '" + name + "' (expected a, b1 or b2)");
}

bool ConfigKey::applies_to(Command command) const {
  return std::find(commands.begin(), commands.end(), command) != commands.end();
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = make_keys();
  return keys;
}

const ConfigKey& config_key(const std::string& name) {
  for (const auto& k : config_keys()) {
    if (k.name == name) return k;
  }
  throw Error("unknown setting '" + name + "'");
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

std::vector<LrStep> parse_lr_drops(const std::string& text) {
  std::vector<LrStep> out;
  if (trim(text).empty()) return out;
  for (const auto& part : split(text, ',')) {
    const auto colon = part.find(':');
    if (colon == std::string::npos) throw Error("learning-rate drop '" + part + "' is not epoch:rate");
    out.push_back({parse_number<std::size_t>(trim(part.substr(0, colon)), "--lr-drops"),
                   parse_number<double>(trim(part.substr(colon + 1)), "--lr-drops")});
  }
  return out;
}

std::string format_lr_drops(const std::vector<LrStep>& drops) {
  std::string out;
  for (std::size_t n = 0; n < drops.size(); ++n) {
    if (n) out += ',';
    out += std::to_string(drops[n].epoch) + ":" + format_double(drops[n].rate);
  }
  return out;
}

std::vector<LrStep> lr_schedule(const RunConfig& config) {
  std::vector<LrStep> schedule = {{0, config.lr}};
  schedule.insert(schedule.end(), config.lr_drops.begin(), config.lr_drops.end());
  return schedule;
}

std::string serialize(const RunConfig& config) {
  std::string out = std::string("command=") + to_string(config.command) + "\n";
  for (const auto& k : config_keys()) out += k.name + "=" + k.get(config) + "\n";
  return out;
}

void apply_config_text(RunConfig& config, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw Error("config line " + std::to_string(number) + ": expected key=value");
    const std::string name = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    try {
      if (name == "command") {
        config.command = parse_command(value);
      } else {
        config_key(name).set(config, value);
      }
    } catch (const Error& e) {
      throw Error("config line " + std::to_string(number) + ": " + e.what());
    }
  }
}

RunConfig parse_config(const std::string& text) {
  RunConfig config;
  apply_config_text(config, text);
  return config;
}

}  // namespace abm
