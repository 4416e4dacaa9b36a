#include "abm/adversarial.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <sstream>

#include "abm/random.hpp"
#include "abm/trainer.hpp"
#include "binary_io.hpp"

namespace abm {

namespace {

constexpr std::array<char, 4> kPerturbationMagic{'A', 'B', 'M', 'A'};
constexpr std::uint16_t kPerturbationFormatVersion = 1;

template <typename T>
Tensor<T> plus(const Tensor<T>& x, const Tensor<T>& delta, double scale = 1.0) {
  Tensor<T> out = x;
  for (std::size_t e = 0; e < out.size(); ++e) out[e] += static_cast<T>(scale * static_cast<double>(delta[e]));
  return out;
}

template <typename T>
Tensor<T> gradient_at(const Network<T>& net, const Tensor<T>& x, std::size_t label) {
  auto g = input_gradient(net, x, label).gradient;
  for (T v : g.data()) {
    if (!std::isfinite(static_cast<double>(v))) {
      throw NumericError("attack gradient is not finite (class " + std::to_string(label) + ")");
    }
  }
  return g;
}

template <typename T>
T sign(T v) {
  return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
}

// Sign-gradient iteration shared by both attacks: direction +1 ascends the loss of
// `cls`, -1 descends it; `done` decides success from the current prediction.
template <typename T, typename Done>
Perturbation<T> iterate(const Network<T>& net, const Tensor<T>& x, std::size_t cls, double direction,
                        const AdversarialConfig& config, Perturbation<T> p, Done done) {
  p.delta = Tensor<T>(x.shape());
  const T step = static_cast<T>(direction * config.epsilon);
  std::size_t pred = predict(net, x);
  while (!done(pred) && p.steps < config.steps) {
    const auto g = gradient_at(net, plus(x, p.delta), cls);
    for (std::size_t e = 0; e < g.size(); ++e) p.delta[e] += step * sign(g[e]);
    ++p.steps;
    pred = predict(net, plus(x, p.delta));
  }
  p.achieved = static_cast<long>(pred);
  p.success = done(pred);
  p.l2 = static_cast<double>(l2_norm(p.delta));
  return p;
}

void check_class(std::size_t cls, std::size_t classes) {
  if (cls >= classes) throw IndexError("class " + std::to_string(cls) + " out of range (" + std::to_string(classes) + ")");
}

}  // namespace

const char* to_string(AttackMode mode) {
  return mode == AttackMode::untargeted_iterative ? "untargeted" : "targeted";
}

AttackMode parse_attack_mode(const std::string& name) {
  if (name == "untargeted") return AttackMode::untargeted_iterative;
  if (name == "targeted") return AttackMode::targeted_least_likely;
  throw Error("unknown attack mode '" + name + "' (expected untargeted or targeted)");
}

const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::untargeted:
      return "untargeted";
    case Provenance::s_b1:
      return "S_B1";
    case Provenance::scaled:
      return "scaled";
    case Provenance::gaussian:
      return "gaussian";
  }
  return "?";
}

void validate(const AdversarialConfig& config) {
  if (!(config.epsilon >= 0.0) || !std::isfinite(config.epsilon)) throw Error("epsilon must be finite and non-negative");
  if (!(config.beta_step > 0.0) || config.beta_step > 1.0) throw Error("beta step must lie in (0, 1]");
  if (std::isnan(config.threshold)) throw Error("threshold must be a number");
}

template <typename T>
Perturbation<T> untargeted_attack(const Network<T>& net, const Tensor<T>& x, std::size_t label,
                                  const AdversarialConfig& config) {
  validate(config);
  check_class(label, net.classes());
  Perturbation<T> p;
  p.provenance = Provenance::untargeted;
  const std::size_t start = predict(net, x);
  if (start != label) {
    p.delta = Tensor<T>(x.shape());
    p.achieved = static_cast<long>(start);
    p.degenerate = true;
    return p;
  }
  return iterate(net, x, label, +1.0, config, std::move(p), [label](std::size_t pred) { return pred != label; });
}

template <typename T>
Perturbation<T> targeted_least_likely(const Network<T>& net, const Tensor<T>& x, std::size_t target,
                                      const AdversarialConfig& config) {
  validate(config);
  check_class(target, net.classes());
  Perturbation<T> p;
  p.provenance = Provenance::s_b1;
  p.target = static_cast<long>(target);
  p.degenerate = predict(net, x) == target;
  return iterate(net, x, target, -1.0, config, std::move(p), [target](std::size_t pred) { return pred == target; });
}

template <typename T>
std::size_t least_likely_class(const Network<T>& net, const Tensor<T>& x) {
  const auto z = logits(net, x);
  std::size_t best = 0;
  for (std::size_t k = 1; k < z.size(); ++k) {
    if (z[k] < z[best]) best = k;
  }
  return best;
}

template <typename T>
PerturbationSet<T> build_sb1(const Network<T>& net, const Tensor<T>& x, std::size_t label,
                             const AdversarialConfig& config) {
  check_class(label, net.classes());
  PerturbationSet<T> set;
  set.input_shape = x.shape();
  for (std::size_t c = 0; c < net.classes(); ++c) {
    auto p = targeted_least_likely(net, x, c, config);
    p.source = static_cast<long>(c);
    if (c == label) {
      p.delta = Tensor<T>(x.shape());
      p.l2 = 0.0;
      p.degenerate = true;
    }
    set.items.push_back(std::move(p));
  }
  return set;
}

template <typename T>
Sb2Result<T> build_sb2(const Network<T>& net, const Tensor<T>& x, std::size_t label, const PerturbationSet<T>& sb1,
                       const AdversarialConfig& config) {
  validate(config);
  check_class(label, net.classes());
  Sb2Result<T> out;
  out.set.input_shape = x.shape();

  struct Candidate {
    std::size_t source;
    double beta;
    long achieved;
  };
  std::vector<Candidate> found;
  const auto scan_length = static_cast<std::size_t>(std::floor(1.0 / config.beta_step + 1e-9));
  for (std::size_t i = 0; i < sb1.items.size(); ++i) {
    const auto& item = sb1.items[i];
    require_same_shape(item.delta.shape(), x.shape(), "sb1 perturbation");
    if (item.degenerate || static_cast<double>(l2_norm(item.delta)) == 0.0) continue;
    for (std::size_t j = 0; j < scan_length; ++j) {
      const double beta = 1.0 - static_cast<double>(j) * config.beta_step;
      const auto z = logits(net, plus(x, item.delta, beta));
      const std::size_t pred = argmax(z);
      const bool misclassified = pred != label;
      const bool over = static_cast<double>(z[pred]) > config.threshold + static_cast<double>(z[label]);
      if (!misclassified || !over) break;
      found.push_back({i, beta, static_cast<long>(pred)});
    }
  }
  out.qualified = found.size();
  Rng rng(config.seed);
  rng.shuffle(found.begin(), found.end());
  if (found.size() > config.scaled_count) found.resize(config.scaled_count);
  for (const Candidate& c : found) {
    const auto& item = sb1.items[c.source];
    Perturbation<T> p;
    p.provenance = Provenance::scaled;
    p.delta = Tensor<T>(x.shape());
    for (std::size_t e = 0; e < p.delta.size(); ++e) p.delta[e] = static_cast<T>(c.beta * static_cast<double>(item.delta[e]));
    p.target = item.target;
    p.achieved = c.achieved;
    p.beta = c.beta;
    p.source = static_cast<long>(c.source);
    p.success = true;
    p.l2 = static_cast<double>(l2_norm(p.delta));
    out.set.items.push_back(std::move(p));
  }

  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const auto& item : sb1.items) {
    for (T v : item.delta.data()) {
      sum += static_cast<double>(v);
      sq += static_cast<double>(v) * static_cast<double>(v);
    }
    n += item.delta.size();
  }
  if (n > 0) {
    out.gaussian_mean = sum / static_cast<double>(n);
    out.gaussian_variance = std::max(0.0, sq / static_cast<double>(n) - out.gaussian_mean * out.gaussian_mean);
  }
  const double sd = std::sqrt(out.gaussian_variance);
  for (std::size_t m = 0; m < config.gaussian_count && !out.gaussian_exhausted; ++m) {
    bool accepted = false;
    for (std::size_t attempt = 0; attempt <= config.gaussian_retries && !accepted; ++attempt) {
      Tensor<T> g(x.shape());
      for (T& v : g.data()) v = static_cast<T>(rng.normal(out.gaussian_mean, sd));
      const std::size_t pred = predict(net, plus(x, g));
      if (pred != label) {
        ++out.gaussian_rejections;
        continue;
      }
      Perturbation<T> p;
      p.provenance = Provenance::gaussian;
      p.achieved = static_cast<long>(pred);
      p.beta = 1.0;
      p.l2 = static_cast<double>(l2_norm(g));
      p.delta = std::move(g);
      out.set.items.push_back(std::move(p));
      accepted = true;
    }
    if (!accepted) out.gaussian_exhausted = true;
  }
  return out;
}

template <typename T>
void write_perturbation_set(const PerturbationSet<T>& set, const std::filesystem::path& path) {
  if (set.input_shape.size() != 3) throw ShapeError("perturbation sets hold H x W x C tensors");
  detail::ByteWriter w;
  w.raw(kPerturbationMagic.data(), 4);
  w.u16(kPerturbationFormatVersion);
  w.u8(static_cast<std::uint8_t>(dtype_of<T>()));
  for (std::size_t d : set.input_shape) w.u32(static_cast<std::uint32_t>(d));
  w.u64(set.items.size());
  for (const auto& p : set.items) {
    require_same_shape(p.delta.shape(), set.input_shape, "archived perturbation");
    w.u8(static_cast<std::uint8_t>(p.provenance));
    w.u64(static_cast<std::uint64_t>(static_cast<std::int64_t>(p.target)));
    w.u64(static_cast<std::uint64_t>(static_cast<std::int64_t>(p.achieved)));
    w.f64(p.l2);
    w.f64(p.beta);
    w.u64(static_cast<std::uint64_t>(static_cast<std::int64_t>(p.source)));
    w.u64(p.steps);
    w.u8(static_cast<std::uint8_t>((p.success ? 1 : 0) | (p.degenerate ? 2 : 0)));
    for (T v : p.delta.data()) w.value<T>(v);
  }
  w.seal();
  detail::write_file(path, w.bytes());
}

template <typename T>
PerturbationSet<T> read_perturbation_set(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  const std::string what = "perturbation set " + path.string();
  auto r = detail::open_archive(bytes, kPerturbationMagic, kPerturbationFormatVersion, what);
  const auto stored = static_cast<DType>(r.u8());
  if (stored != DType::binary32 && stored != DType::binary64) {
    throw FormatError(FormatError::Kind::invalid, what + ": unknown dtype");
  }
  PerturbationSet<T> set;
  set.input_shape = {r.u32(), r.u32(), r.u32()};
  const std::uint64_t count = r.u64();
  const std::size_t n = element_count(set.input_shape);
  r.need(count * (50 + n * (stored == DType::binary32 ? 4 : 8)));
  for (std::uint64_t c = 0; c < count; ++c) {
    Perturbation<T> p;
    const std::uint8_t prov = r.u8();
    if (prov > static_cast<std::uint8_t>(Provenance::gaussian)) {
      throw FormatError(FormatError::Kind::invalid, what + ": unknown provenance " + std::to_string(prov));
    }
    p.provenance = static_cast<Provenance>(prov);
    p.target = static_cast<long>(static_cast<std::int64_t>(r.u64()));
    p.achieved = static_cast<long>(static_cast<std::int64_t>(r.u64()));
    p.l2 = r.f64();
    p.beta = r.f64();
    p.source = static_cast<long>(static_cast<std::int64_t>(r.u64()));
    p.steps = r.u64();
    const std::uint8_t flags = r.u8();
    p.success = (flags & 1) != 0;
    p.degenerate = (flags & 2) != 0;
    p.delta = Tensor<T>(set.input_shape);
    for (std::size_t e = 0; e < n; ++e) {
      p.delta[e] = stored == DType::binary32 ? static_cast<T>(r.f32()) : static_cast<T>(r.f64());
    }
    set.items.push_back(std::move(p));
  }
  detail::verify_crc(bytes, r, what);
  return set;
}

template <typename T>
std::string manifest_csv(const PerturbationSet<T>& set) {
  std::ostringstream out;
  out << "index,provenance,target,achieved,l2,beta,source,steps,success,degenerate\n";
  char buf[256];
  for (std::size_t i = 0; i < set.items.size(); ++i) {
    const auto& p = set.items[i];
    std::snprintf(buf, sizeof buf, "%zu,%s,%ld,%ld,%.9g,%.9g,%ld,%zu,%d,%d\n", i, to_string(p.provenance), p.target,
                  p.achieved, p.l2, p.beta, p.source, p.steps, p.success ? 1 : 0, p.degenerate ? 1 : 0);
    out << buf;
  }
  return out.str();
}

Projection project_top2(const std::vector<std::vector<double>>& rows) {
  Projection proj;
  const std::size_t n = rows.size();
  proj.coords.assign(n, {0.0, 0.0});
  if (n < 2) return proj;
  const std::size_t d = rows.front().size();
  Eigen::MatrixXd X(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i) {
    if (rows[i].size() != d) throw ShapeError("projection rows differ in length");
    for (std::size_t j = 0; j < d; ++j) X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  X.rowwise() -= X.colwise().mean();
  const Eigen::MatrixXd gram = X * X.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  for (int axis = 0; axis < 2; ++axis) {
    const Eigen::Index col = static_cast<Eigen::Index>(n) - 1 - axis;
    const double lambda = std::max(0.0, eig.eigenvalues()(col));
    if (lambda <= 0.0) continue;
    Eigen::VectorXd u = eig.eigenvectors().col(col);
    const Eigen::VectorXd loading = X.transpose() * u;
    Eigen::Index top = 0;
    loading.cwiseAbs().maxCoeff(&top);
    if (loading(top) < 0) u = -u;
    const double root = std::sqrt(lambda);
    for (std::size_t i = 0; i < n; ++i) proj.coords[i][static_cast<std::size_t>(axis)] = u(static_cast<Eigen::Index>(i)) * root;
    proj.variance[static_cast<std::size_t>(axis)] = lambda / static_cast<double>(n - 1);
  }
  return proj;
}

template <typename T>
ExperimentA<T> run_experiment_a(const Network<T>& net, const Tensor<T>& x, std::size_t label,
                                const AdversarialConfig& config, EvaluationPoint z) {
  ExperimentA<T> a;
  a.attack = untargeted_attack(net, x, label, config);
  a.comparison = compare_hyperplanes(net, x, plus(x, a.attack.delta), z);
  return a;
}

#define ABM_INSTANTIATE_ADVERSARIAL(T)                                                                            \
  template Perturbation<T> untargeted_attack(const Network<T>&, const Tensor<T>&, std::size_t,                    \
                                             const AdversarialConfig&);                                           \
  template Perturbation<T> targeted_least_likely(const Network<T>&, const Tensor<T>&, std::size_t,                \
                                                 const AdversarialConfig&);                                       \
  template std::size_t least_likely_class(const Network<T>&, const Tensor<T>&);                                   \
  template PerturbationSet<T> build_sb1(const Network<T>&, const Tensor<T>&, std::size_t, const AdversarialConfig&); \
  template Sb2Result<T> build_sb2(const Network<T>&, const Tensor<T>&, std::size_t, const PerturbationSet<T>&,     \
                                  const AdversarialConfig&);                                                      \
  template void write_perturbation_set(const PerturbationSet<T>&, const std::filesystem::path&);                  \
  template PerturbationSet<T> read_perturbation_set(const std::filesystem::path&);                                \
  template std::string manifest_csv(const PerturbationSet<T>&);                                                   \
  template ExperimentA<T> run_experiment_a(const Network<T>&, const Tensor<T>&, std::size_t,                      \
                                           const AdversarialConfig&, EvaluationPoint);

ABM_INSTANTIATE_ADVERSARIAL(float)
ABM_INSTANTIATE_ADVERSARIAL(double)

}  // namespace abm
