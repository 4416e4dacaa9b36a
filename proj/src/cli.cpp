#include "abm/cli.hpp"

#include <charconv>
#include <cstdlib>
#include <map>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "abm/adjoint.hpp"
#include "abm/error.hpp"
#include "abm/model_io.hpp"
#include "abm/verify.hpp"
#include "binary_io.hpp"

namespace abm {

namespace {

constexpr Command kCommands[] = {Command::train, Command::verify, Command::backmap, Command::adversarial,
                                 Command::synth};

const char* describe(Command command) {
  switch (command) {
    case Command::train:
      return "Train a network on CIFAR-10 binaries; writes model.abm (best validation checkpoint) and train_log.csv";
    case Command::verify:
      return "Compare every unit's hypersurface inner product with its forward pre-activation; "
             "writes verify_summary.csv and verify_histogram.csv and exits 1 below --floor";
    case Command::backmap:
      return "Reconstruct hypersurfaces for one mode and layer into a .abmh archive, optionally rendered and as CSV";
    case Command::adversarial:
      return "Adversarial perturbations with their hypersurface analysis: perturbation archives, manifests, "
             "logit tables, difference images and a 2-D principal-axis projection";
    case Command::synth:
      return "Write a synthetic dataset in the CIFAR-10 binary layout";
  }
  return "";
}

bool is_bool_key(const std::string& name) { return name == "augment" || name == "render" || name == "csv"; }

/// One parser per subcommand; option values land in `values` as text.
struct Parser {
  CLI::App app{"Exact input-space hypersurfaces of bias-free piecewise-linear networks", "abm"};
  std::map<Command, CLI::App*> subs;
  std::map<Command, std::map<std::string, std::string>> values;
  std::map<Command, std::map<std::string, CLI::Option*>> options;
  std::map<Command, std::string> config_file;

  Parser() {
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Help for every subcommand");
    for (Command c : kCommands) {
      CLI::App* sub = app.add_subcommand(to_string(c), describe(c));
      subs[c] = sub;
      auto& vals = values[c];
      sub->add_option("--config", config_file[c], "File of key=value lines using the flag names; flags override it")
          ->type_name("FILE");
      for (const auto& key : config_keys()) {
        if (!key.applies_to(c)) continue;
        std::string& slot = vals[key.name];
        const std::string fallback = key.get(RunConfig{});
        const std::string help = fallback.empty() ? key.help : key.help + " [default: " + fallback + "]";
        CLI::Option* opt = sub->add_option("--" + key.name, slot, help);
        if (is_bool_key(key.name)) {
          opt->expected(0, 1)->type_name("[BOOL]");
        } else {
          opt->type_name("VALUE");
        }
        options[c][key.name] = opt;
      }
    }
  }

  void parse(const std::vector<std::string>& args) {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  }

  [[nodiscard]] Command chosen() const {
    for (const auto& [c, sub] : subs) {
      if (sub->parsed()) return c;
    }
    throw Error("no subcommand given");
  }

  [[nodiscard]] RunConfig resolve() const {
    const Command c = chosen();
    RunConfig config;
    config.command = c;
    const std::string& file = config_file.at(c);
    if (!file.empty()) {
      const auto bytes = detail::read_file(file);
      apply_config_text(config, std::string(bytes.begin(), bytes.end()));
      config.command = c;
    }
    if (const char* env = std::getenv(kDataDirEnv); env && *env) config.data = env;
    for (const auto& key : config_keys()) {
      if (!key.applies_to(c)) continue;
      if (options.at(c).at(key.name)->count() == 0) continue;
      const std::string& text = values.at(c).at(key.name);
      key.set(config, text.empty() && is_bool_key(key.name) ? "true" : text);
    }
    return config;
  }
};

// ---------------------------------------------------------------------------
// Shared plumbing

class UsageError : public Error {
 public:
  using Error::Error;
};

DatasetConfig dataset_config(const RunConfig& c) {
  DatasetConfig d;
  d.data_dir = c.data;
  d.val_count = c.val_count;
  d.train_limit = c.subset;
  d.seed = c.seed;
  return d;
}

void require_data(const RunConfig& c) {
  if (c.data.empty()) {
    throw UsageError(std::string("no dataset: pass --data or set ") + kDataDirEnv);
  }
}

Dataset test_set(const RunConfig& c) {
  require_data(c);
  return read_cifar_file(c.data / "test_batch.bin");
}

template <typename T>
Network<T> obtain_network(const RunConfig& c, bool for_training) {
  if (!c.model.empty()) {
    if (!std::filesystem::exists(c.model)) throw UsageError("model file not found: " + c.model.string());
    return load_model<T>(c.model);
  }
  const WeightInit init =
      for_training && c.arch == Architecture::fixup_resnet20 ? WeightInit::fixup : WeightInit::he_normal;
  return build<T>(c.arch, c.seed, init);
}

template <typename T>
Tensor<T> random_input(const Shape& shape, Rng& rng) {
  Tensor<T> x(shape);
  for (T& v : x.data()) v = static_cast<T>(rng.normal());
  return x;
}

template <typename T>
struct Input {
  Tensor<T> x;
  std::size_t label = 0;
  bool from_dataset = false;
};

/// Test image `--image`, or a random input labelled with its own prediction.
template <typename T>
Input<T> select_input(const Network<T>& net, const RunConfig& c) {
  Input<T> in;
  if (c.image >= 0) {
    const Dataset test = test_set(c);
    if (static_cast<std::size_t>(c.image) >= test.size()) {
      throw UsageError("--image " + std::to_string(c.image) + " out of range (test set has " +
                       std::to_string(test.size()) + " images)");
    }
    const auto n = static_cast<std::size_t>(c.image);
    in.x = normalize_image<T>(test.unit_image(n), dataset_config(c));
    in.label = test.labels[n];
    in.from_dataset = true;
  } else {
    Rng rng(c.seed);
    in.x = random_input<T>(net.input_shape(), rng);
    in.label = predict(net, in.x);
  }
  return in;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) { detail::write_text(path, text); }

template <typename T>
std::string format_value(T v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

template <typename T>
std::string flattened_row(const std::string& prefix, const Tensor<T>& values) {
  std::string row = prefix;
  for (T v : values.data()) {
    row += ',';
    row += format_value(v);
  }
  row += '\n';
  return row;
}

std::string archive_stem(const std::string& arch, Mode mode, int layer) {
  auto name = surface_filename(arch, mode, SurfaceIndex{layer, -1, -1, -1, -1});
  return name.substr(0, name.size() - 4);
}

// ---------------------------------------------------------------------------
// train

template <typename T>
int train_command(const RunConfig& c, std::ostream& out) {
  require_data(c);
  const DatasetConfig dcfg = dataset_config(c);
  const CifarSplits splits = load_cifar10(dcfg);
  TrainConfig tc;
  tc.epochs = c.epochs;
  tc.batch_size = c.batch;
  tc.lr_schedule = lr_schedule(c);
  tc.l1_factor = c.l1;
  tc.seed = c.seed;
  tc.augment = c.augment;
  tc.validate_every = c.validate_every;
  tc.checkpoint = c.output / "model.abm";
  tc.log_csv = c.output / "train_log.csv";
  validate(tc);
  const auto result = train(obtain_network<T>(c, true), splits, dcfg, tc);
  for (const auto& e : result.log) {
    out << "epoch " << e.epoch << " lr " << format_double(e.lr) << " loss " << format_double(e.train_loss);
    if (e.val_acc) out << " val_acc " << format_double(*e.val_acc);
    out << (e.checkpointed ? " checkpoint" : "") << "\n";
  }
  out << "best epoch " << result.best_epoch << " val_acc " << format_double(result.best_val_acc);
  if (result.test_acc) out << " test_acc " << format_double(*result.test_acc);
  out << "\nmodel " << tc.checkpoint.string() << "\n";
  return kExitSuccess;
}

// ---------------------------------------------------------------------------
// verify

template <typename T>
int verify_command(const RunConfig& c, std::ostream& out) {
  const Network<T> net = obtain_network<T>(c, false);
  std::vector<Tensor<T>> inputs;
  if (!c.data.empty()) {
    const Dataset test = test_set(c);
    const std::size_t n = std::min(c.inputs, test.size());
    for (std::size_t e = 0; e < n; ++e) inputs.push_back(normalize_image<T>(test.unit_image(e), dataset_config(c)));
  } else {
    Rng rng(c.seed);
    for (std::size_t e = 0; e < c.inputs; ++e) inputs.push_back(random_input<T>(net.input_shape(), rng));
  }
  if (inputs.empty()) throw UsageError("no inputs to verify");
  VerifyOptions options;
  options.z.k = c.z_scale;
  options.sweep.workers = c.workers;
  const VerificationReport report = verify_layers(net, inputs, options);
  write_text_file(c.output / "verify_summary.csv", report.summary_csv());
  write_text_file(c.output / "verify_histogram.csv", report.histogram_csv());
  out << report.summary_csv();
  const bool pass = report.passes(c.floor);
  out << (pass ? "PASS" : "FAIL") << " every layer at or above " << format_double(c.floor) << " of errors <= 1e-2 over "
      << report.inputs << " inputs\n";
  return pass ? kExitSuccess : kExitCriteria;
}

// ---------------------------------------------------------------------------
// backmap

template <typename T>
void render_request(const Network<T>& net, const ActivationTrace<T>& trace, const ReconstructionRequest& request,
                    const std::vector<SurfaceIndex>& emitted, const RunConfig& c, const std::string& arch,
                    std::vector<std::filesystem::path>& written) {
  auto render = [&](const ReconstructionRequest& r) {
    SurfaceArchive<T> archive;
    archive.mode = r.mode;
    archive.layer = r.layer;
    archive.k_scale = c.z_scale;
    archive.input_shape = net.input_shape();
    batch_reconstruct<T>(net, trace, r, [&](std::size_t, const Hypersurface<T>& h) {
      archive.surfaces.push_back(h);
      return true;
    });
    const auto paths = render_archive(archive, arch, c.grid_width, c.output, c.format);
    written.insert(written.end(), paths.begin(), paths.end());
  };
  if (request.mode == Mode::rm4 || request.mode == Mode::rm2) {
    // One sheet per (j, i) or per i, computed group by group to bound memory.
    std::map<std::pair<long, long>, std::vector<long>> groups;
    for (const auto& idx : emitted) groups[{idx.j, idx.i}].push_back(idx.s);
    for (const auto& [key, strides] : groups) {
      ReconstructionRequest r = request;
      r.start = 0;
      r.s = strides;
      r.j = key.first >= 0 ? std::vector<long>{key.first} : std::vector<long>{};
      r.i = {key.second};
      render(r);
    }
  } else {
    ReconstructionRequest r = request;
    r.s.clear();
    r.j.clear();
    r.i.clear();
    r.k.clear();
    r.start = 0;
    for (const auto& idx : emitted) {
      if (idx.s >= 0) r.s.push_back(idx.s);
      if (idx.j >= 0) r.j.push_back(idx.j);
      if (idx.i >= 0) r.i.push_back(idx.i);
      if (idx.k >= 0) r.k.push_back(idx.k);
    }
    for (auto* axis : {&r.s, &r.j, &r.i, &r.k}) {
      std::sort(axis->begin(), axis->end());
      axis->erase(std::unique(axis->begin(), axis->end()), axis->end());
    }
    render(r);
  }
}

template <typename T>
int backmap_command(const RunConfig& c, std::ostream& out) {
  const Network<T> net = obtain_network<T>(c, false);
  const std::string arch = to_string(net.architecture());
  const Input<T> in = select_input(net, c);
  const ActivationTrace<T> trace = abm::trace(net, in.x, EvaluationPoint{c.z_scale});

  ReconstructionRequest request;
  request.mode = c.rm;
  request.layer = c.layer;
  request.s = c.s;
  request.j = c.j;
  request.i = c.i;
  request.k = c.k;
  request.start = c.start;
  request.workers = c.workers;
  const auto all = enumerate(net, request);
  const std::size_t count = all.size() > c.start ? all.size() - c.start : 0;

  const std::string stem = archive_stem(arch, c.rm, c.layer);
  const auto archive_path = c.output / (stem + ".abmh");
  SurfaceArchiveWriter<T> writer(archive_path, c.rm, c.layer, c.z_scale, net.input_shape(), count);
  std::unique_ptr<std::ofstream> csv;
  if (c.csv) {
    csv = std::make_unique<std::ofstream>(c.output / (stem + "_surfaces.csv"), std::ios::binary);
    if (!*csv) throw UsageError("cannot write " + (c.output / (stem + "_surfaces.csv")).string());
    *csv << "s,j,i,k,values...\n";
  }
  std::vector<SurfaceIndex> emitted;
  batch_reconstruct<T>(net, trace, request, [&](std::size_t, const Hypersurface<T>& h) {
    writer.append(h);
    emitted.push_back(h.index);
    if (csv) {
      const auto& x = h.index;
      *csv << flattened_row(std::to_string(x.s) + "," + std::to_string(x.j) + "," + std::to_string(x.i) + "," +
                                std::to_string(x.k),
                            h.values);
    }
    return true;
  });
  writer.finish();
  if (csv && !*csv) throw UsageError("failed writing the surface CSV");

  out << "input " << (in.from_dataset ? "test image " + std::to_string(c.image) : std::string("random")) << " label "
      << in.label << " prediction " << predict(net, in.x) << "\n";
  out << "surfaces " << emitted.size() << " archive " << archive_path.string() << "\n";
  if (c.render) {
    std::vector<std::filesystem::path> written;
    render_request(net, trace, request, emitted, c, arch, written);
    out << "images " << written.size() << "\n";
  }
  return kExitSuccess;
}

// ---------------------------------------------------------------------------
// adversarial

template <typename T>
Tensor<T> perturbed(const Tensor<T>& x, const Tensor<T>& delta) {
  Tensor<T> y = x;
  y += delta;
  return y;
}

/// |H(clean) - H(perturbed)| for the Conv1 channel sheet (when the network has a
/// second conv) and the class grid.
template <typename T>
std::vector<std::filesystem::path> difference_renders(const Network<T>& net, const Tensor<T>& x,
                                                      const Tensor<T>& x_adv, const RunConfig& c,
                                                      const std::string& arch) {
  const EvaluationPoint z{c.z_scale};
  const auto clean = abm::trace(net, x, z);
  const auto adv = abm::trace(net, x_adv, z);
  std::vector<std::filesystem::path> written;
  auto surfaces = [&](const ActivationTrace<T>& tr, Mode mode, int layer) {
    ReconstructionRequest r;
    r.mode = mode;
    r.layer = layer;
    r.workers = c.workers;
    std::vector<Hypersurface<T>> hs;
    batch_reconstruct<T>(net, tr, r, [&](std::size_t, const Hypersurface<T>& h) {
      hs.push_back(h);
      return true;
    });
    return hs;
  };
  auto emit = [&](const Image& im, Mode mode, int layer) {
    auto name = surface_filename(arch, mode, SurfaceIndex{layer, -1, -1, -1, -1}, c.format);
    const auto dot = name.rfind('.');
    name = name.substr(0, dot) + "_difference" + name.substr(dot);
    write_image(im, c.output / name, c.format);
    written.push_back(c.output / name);
  };
  auto tiles = [&](Mode mode, int layer) {
    const auto a = surfaces(clean, mode, layer);
    const auto b = surfaces(adv, mode, layer);
    std::vector<Image> out;
    for (std::size_t n = 0; n < a.size(); ++n) out.push_back(difference_image(a[n], b[n]));
    return std::make_pair(out, a);
  };
  if (net.conv_count() >= 2) {
    const auto [images, ref] = tiles(Mode::rm3, 1);
    const std::size_t cols = static_cast<std::size_t>(ref.back().index.i + 1);
    emit(compose_grid(images, images.size() / cols, cols), Mode::rm3, 1);
  }
  {
    const auto [images, ref] = tiles(Mode::rm0, -1);
    const auto [rows, cols] = grid_shape(images.size());
    emit(compose_grid(images, rows, cols, GridStyle{1, 255}), Mode::rm0, -1);
  }
  return written;
}

/// RM0 surface of `label` traced at x + delta, one row per perturbation, plus its projection.
template <typename T>
void surface_projection(const Network<T>& net, const Tensor<T>& x, std::size_t label,
                        const PerturbationSet<T>& set, const RunConfig& c, const std::string& prefix) {
  std::string flat = "index,provenance,values...\n";
  std::vector<std::vector<double>> rows;
  for (std::size_t n = 0; n < set.items.size(); ++n) {
    const auto tr = abm::trace(net, perturbed(x, set.items[n].delta), EvaluationPoint{c.z_scale});
    const auto h = rm0(net, tr, static_cast<long>(label));
    flat += flattened_row(std::to_string(n) + "," + to_string(set.items[n].provenance), h.values);
    rows.emplace_back(h.values.data().begin(), h.values.data().end());
  }
  write_text_file(c.output / (prefix + "_surfaces.csv"), flat);
  const Projection p = project_top2(rows);
  std::string csv = "index,provenance,pc1,pc2\n";
  for (std::size_t n = 0; n < rows.size(); ++n) {
    csv += std::to_string(n) + "," + to_string(set.items[n].provenance) + "," + format_double(p.coords[n][0]) + "," +
           format_double(p.coords[n][1]) + "\n";
  }
  write_text_file(c.output / (prefix + "_pca.csv"), csv);
}

template <typename T>
int adversarial_command(const RunConfig& c, std::ostream& out) {
  const Network<T> net = obtain_network<T>(c, false);
  const std::string arch = to_string(net.architecture());
  const Input<T> in = select_input(net, c);
  AdversarialConfig ac;
  ac.mode = c.mode;
  ac.epsilon = c.epsilon;
  ac.steps = c.steps;
  ac.target = c.target;
  ac.seed = c.seed;
  ac.threshold = c.threshold;
  ac.beta_step = c.beta_step;
  ac.scaled_count = c.scaled_count;
  ac.gaussian_count = c.gaussian_count;
  validate(ac);
  const std::size_t predicted = predict(net, in.x);
  out << "input " << (in.from_dataset ? "test image " + std::to_string(c.image) : std::string("random")) << " label "
      << in.label << " prediction " << predicted << "\n";

  if (c.experiment == Experiment::a) {
    Perturbation<T> p;
    if (c.mode == AttackMode::untargeted_iterative) {
      p = untargeted_attack(net, in.x, in.label, ac);
    } else {
      const std::size_t target = c.target >= 0 ? static_cast<std::size_t>(c.target) : least_likely_class(net, in.x);
      p = targeted_least_likely(net, in.x, target, ac);
    }
    const Tensor<T> x_adv = perturbed(in.x, p.delta);
    const HyperplaneComparison cmp = compare_hyperplanes(net, in.x, x_adv, EvaluationPoint{c.z_scale});
    PerturbationSet<T> set{in.x.shape(), {p}};
    write_perturbation_set(set, c.output / "perturbation.abma");
    write_text_file(c.output / "perturbation_manifest.csv", manifest_csv(set));
    write_text_file(c.output / "comparison.csv", cmp.csv());
    const auto images = difference_renders(net, in.x, x_adv, c, arch);
    out << to_string(c.mode) << " attack " << (p.degenerate ? "degenerate" : (p.success ? "succeeded" : "failed"))
        << " after " << p.steps << " steps; prediction " << p.achieved << " l2 " << format_double(p.l2) << "\n";
    const double err = cmp.max_fresh_error();
    out << "max |fresh - forward| / |forward| " << format_double(err) << "; argmax forward " << cmp.argmax_forward()
        << " fresh " << cmp.argmax_fresh() << " stale " << cmp.argmax_stale() << "\n";
    out << "images " << images.size() << "\n";
    const bool holds = err <= 1e-2 && cmp.argmax_fresh() == cmp.argmax_forward();
    return holds ? kExitSuccess : kExitCriteria;
  }

  const PerturbationSet<T> sb1 = build_sb1(net, in.x, in.label, ac);
  std::size_t reached = 0;
  for (const auto& p : sb1.items) reached += p.success && !p.degenerate ? 1 : 0;
  if (c.experiment == Experiment::b1) {
    write_perturbation_set(sb1, c.output / "sb1.abma");
    write_text_file(c.output / "sb1_manifest.csv", manifest_csv(sb1));
    surface_projection(net, in.x, in.label, sb1, c, "sb1");
    out << "targeted attacks reaching their class " << reached << " of " << sb1.items.size() - 1 << "\n";
    return kExitSuccess;
  }

  const Sb2Result<T> sb2 = build_sb2(net, in.x, in.label, sb1, ac);
  write_perturbation_set(sb2.set, c.output / "sb2.abma");
  write_text_file(c.output / "sb2_manifest.csv", manifest_csv(sb2.set));
  surface_projection(net, in.x, in.label, sb2.set, c, "sb2");
  std::string summary = "qualified,kept_scaled,gaussian,gaussian_mean,gaussian_variance,gaussian_rejections,gaussian_exhausted\n";
  std::size_t scaled = 0;
  for (const auto& p : sb2.set.items) scaled += p.provenance == Provenance::scaled ? 1 : 0;
  summary += std::to_string(sb2.qualified) + "," + std::to_string(scaled) + "," +
             std::to_string(sb2.set.items.size() - scaled) + "," + format_double(sb2.gaussian_mean) + "," +
             format_double(sb2.gaussian_variance) + "," + std::to_string(sb2.gaussian_rejections) + "," +
             (sb2.gaussian_exhausted ? "1" : "0") + "\n";
  write_text_file(c.output / "sb2_summary.csv", summary);
  out << "qualified scaled perturbations " << sb2.qualified << ", kept " << scaled << "; gaussian "
      << sb2.set.items.size() - scaled << " (mean " << format_double(sb2.gaussian_mean) << ", variance "
      << format_double(sb2.gaussian_variance) << ")" << (sb2.gaussian_exhausted ? "; gaussian sampler exhausted" : "")
      << "\n";
  return kExitSuccess;
}

// ---------------------------------------------------------------------------

int synth_command(const RunConfig& c, std::ostream& out) {
  write_synthetic_cifar(c.output, c.seed, c.per_file, c.test_count);
  out << "wrote " << 5 * c.per_file << " training and " << c.test_count << " test records to " << c.output.string()
      << "\n";
  return kExitSuccess;
}

template <typename T>
int dispatch(const RunConfig& c, std::ostream& out) {
  switch (c.command) {
    case Command::train:
      return train_command<T>(c, out);
    case Command::verify:
      return verify_command<T>(c, out);
    case Command::backmap:
      return backmap_command<T>(c, out);
    case Command::adversarial:
      return adversarial_command<T>(c, out);
    case Command::synth:
      return synth_command(c, out);
  }
  return kExitUsage;
}

}  // namespace

RunConfig resolve_config(const std::vector<std::string>& args) {
  Parser parser;
  try {
    parser.parse(args);
  } catch (const CLI::ParseError& e) {
    throw Error(e.what());
  }
  return parser.resolve();
}

std::string command_help(Command command) {
  Parser parser;
  return parser.subs.at(command)->help();
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Parser parser;
  try {
    parser.parse(args);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      parser.app.exit(e, out, err);
      return kExitSuccess;
    }
    err << "error: " << e.what() << "\nrun 'abm --help' for usage\n";
    return kExitUsage;
  }
  try {
    const RunConfig config = parser.resolve();
    std::filesystem::create_directories(config.output);
    detail::write_text(config.output / (std::string(to_string(config.command)) + ".cfg"), serialize(config));
    return config.dtype == DType::binary64 ? dispatch<double>(config, out) : dispatch<float>(config, out);
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kExitCriteria;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}

}  // namespace abm
