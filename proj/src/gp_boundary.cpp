#include "mosaic/gp_boundary.hpp"

#include "mosaic/elliptic_fd.hpp"
#include "mosaic/errors.hpp"

#include <boost/random/sobol.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

namespace mosaic {

namespace {

const char* family_name(KernelFamily f) {
  return f == KernelFamily::squared_exponential ? "squared_exponential" : "power_exponential";
}

KernelFamily parse_family(const std::string& name) {
  if (name == "squared_exponential") return KernelFamily::squared_exponential;
  if (name == "power_exponential") return KernelFamily::power_exponential;
  throw FormatError("unknown kernel family '" + name + "'");
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Standard normal via Box-Muller on the raw engine output, so that the
// samples do not depend on the standard library's distribution code.
class NormalStream {
 public:
  explicit NormalStream(std::uint64_t seed) : rng_(seed) {}

  double next() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = (static_cast<double>(rng_() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 rng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

void put_f64(std::ostream& out, double v) {
  static_assert(std::endian::native == std::endian::little);
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

}  // namespace

void KernelSpec::validate() const {
  if (!(variance > 0.0) || !(lengthscale > 0.0) || !(jitter > 0.0)) {
    throw ContractError("kernel variance, lengthscale and jitter must be positive");
  }
  if (family == KernelFamily::power_exponential && !(power >= 1.0 && power <= 2.0)) {
    throw ContractError("power-exponential kernel power must lie in [1, 2]");
  }
}

double periodic_arc_distance(double s, double t, double perimeter) {
  const double d = std::fmod(std::abs(s - t), perimeter);
  return std::min(d, perimeter - d);
}

double kernel_eval(const KernelSpec& spec, double s, double t, double perimeter) {
  const double d = periodic_arc_distance(s, t, perimeter);
  const double chord = perimeter / std::numbers::pi * std::sin(std::numbers::pi * d / perimeter);
  const double r = chord / spec.lengthscale;
  if (spec.family == KernelFamily::squared_exponential) return spec.variance * std::exp(-0.5 * r * r);
  return spec.variance * std::exp(-std::pow(r, spec.power));
}

Eigen::MatrixXd covariance_matrix(const KernelSpec& spec, int n_per_edge, double l) {
  spec.validate();
  const int n = 4 * n_per_edge;
  const double perimeter = 4.0 * l;
  Eigen::MatrixXd k(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      k(i, j) = k(j, i) = kernel_eval(spec, i * perimeter / n, j * perimeter / n, perimeter);
    }
  }
  return k;
}

BoundaryTrace sample_trace(const KernelSpec& spec, int n_per_edge, std::uint64_t seed, double l) {
  const Eigen::MatrixXd k = covariance_matrix(spec, n_per_edge, l);
  const Eigen::Index n = k.rows();
  double jitter = spec.jitter * spec.variance;
  for (int attempt = 0; attempt <= 3; ++attempt, jitter *= 10.0) {
    Eigen::MatrixXd kj = k;
    kj.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(kj);
    if (llt.info() != Eigen::Success) continue;
    NormalStream normal(seed);
    Eigen::VectorXd z(n);
    for (Eigen::Index i = 0; i < n; ++i) z[i] = normal.next();
    return BoundaryTrace(llt.matrixL() * z, l);
  }
  throw NumericalError("covariance Cholesky failed after jitter escalation to " + std::to_string(jitter / 10.0));
}

void HyperparameterRanges::validate() const {
  if (!(lengthscale_min > 0.0) || !(lengthscale_max >= lengthscale_min)) {
    throw ConfigError("ranges.lengthscale: need 0 < min <= max");
  }
  if (!(variance_min > 0.0) || !(variance_max >= variance_min)) {
    throw ConfigError("ranges.variance: need 0 < min <= max");
  }
  if (!(power_min >= 1.0) || !(power_max <= 2.0) || !(power_max >= power_min)) {
    throw ConfigError("ranges.power: need 1 <= min <= max <= 2");
  }
  if (!(jitter > 0.0)) throw ConfigError("ranges.jitter: must be positive");
}

std::vector<KernelSpec> sobol_kernel_specs(const HyperparameterRanges& ranges, int count) {
  ranges.validate();
  const bool with_power = ranges.family == KernelFamily::power_exponential;
  boost::random::sobol_engine<std::uint32_t, 32> sobol(with_power ? 3 : 2);
  auto unit = [&] { return static_cast<double>(sobol()) * 0x1.0p-32; };
  std::vector<KernelSpec> specs;
  specs.reserve(count);
  for (int k = 0; k < count; ++k) {
    KernelSpec spec;
    spec.family = ranges.family;
    spec.jitter = ranges.jitter;
    spec.lengthscale = ranges.lengthscale_min + unit() * (ranges.lengthscale_max - ranges.lengthscale_min);
    spec.variance = ranges.variance_min + unit() * (ranges.variance_max - ranges.variance_min);
    if (with_power) spec.power = ranges.power_min + unit() * (ranges.power_max - ranges.power_min);
    specs.push_back(spec);
  }
  return specs;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t id) { return splitmix64(seed ^ id); }

Dataset generate_dataset(const DatasetConfig& config) {
  if (config.n_samples <= 0) throw ConfigError("n_samples: must be positive");
  const int n = config.n_per_edge;
  const int interior = (n - 1) * (n - 1);
  if (config.n_data_points < 0 || config.n_data_points > interior) {
    throw ConfigError("n_data_points: must lie in [0, " + std::to_string(interior) + "]");
  }
  const auto specs = sobol_kernel_specs(config.ranges, config.n_samples);
  const NumericGenomeSolver solver(n, config.edge_length);

  Dataset dataset{config, std::vector<TrainingSample>(config.n_samples)};
#pragma omp parallel for schedule(dynamic) num_threads(std::max(1, config.threads))
  for (int k = 0; k < config.n_samples; ++k) {
    const std::uint64_t seed = derive_seed(config.seed, static_cast<std::uint64_t>(k));
    TrainingSample& sample = dataset.samples[k];
    sample.sample_id = k;
    sample.trace = sample_trace(specs[k], n, seed, config.edge_length);
    const FieldGrid field = solver.solve_field(sample.trace);

    // Partial Fisher-Yates over interior vertex ids, driven by a second stream.
    std::mt19937_64 rng(splitmix64(seed));
    std::vector<int> ids(interior);
    for (int i = 0; i < interior; ++i) ids[i] = i;
    sample.data_points.reserve(config.n_data_points);
    for (int i = 0; i < config.n_data_points; ++i) {
      const auto span = static_cast<std::uint64_t>(interior - i);
      const int pick = i + static_cast<int>(rng() % span);
      std::swap(ids[i], ids[pick]);
      const int vi = 1 + ids[i] % (n - 1);
      const int vj = 1 + ids[i] / (n - 1);
      const Point p = field.position(vi, vj);
      sample.data_points.push_back({p.x, p.y, field(vi, vj)});
    }
  }
  return dataset;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& dataset) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());

  const auto& c = dataset.config;
  const nlohmann::ordered_json manifest = {
      {"format_version", kDatasetFormatVersion},
      {"n_samples", dataset.samples.size()},
      {"n_boundary_points", 4 * c.n_per_edge},
      {"n_data_points", c.n_data_points},
      {"n_per_edge", c.n_per_edge},
      {"genome_edge_length", c.edge_length},
      {"resolution", c.n_per_edge + 1},
      {"seed", c.seed},
      {"kernel_family", family_name(c.ranges.family)},
      {"ranges",
       {{"lengthscale", {c.ranges.lengthscale_min, c.ranges.lengthscale_max}},
        {"variance", {c.ranges.variance_min, c.ranges.variance_max}},
        {"power", {c.ranges.power_min, c.ranges.power_max}},
        {"jitter", c.ranges.jitter}}},
      {"record_layout", "f64le: trace[n_boundary_points], then (x, y, u) per data point"},
  };
  {
    std::ofstream out(dir / "manifest.json");
    if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
    out << manifest.dump(2) << '\n';
  }
  std::ofstream out(dir / "samples.bin", std::ios::binary);
  if (!out) throw IoError("cannot write " + (dir / "samples.bin").string());
  for (const auto& s : dataset.samples) {
    if (s.trace.size() != 4 * c.n_per_edge || static_cast<int>(s.data_points.size()) != c.n_data_points) {
      throw ContractError("dataset sample " + std::to_string(s.sample_id) + " does not match the config");
    }
    for (int i = 0; i < s.trace.size(); ++i) put_f64(out, s.trace[i]);
    for (const auto& p : s.data_points) {
      put_f64(out, p.x);
      put_f64(out, p.y);
      put_f64(out, p.u);
    }
  }
  if (!out) throw IoError("write failed for " + (dir / "samples.bin").string());
}

Dataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("cannot open " + (dir / "manifest.json").string());
  nlohmann::json m;
  Dataset dataset;
  auto& c = dataset.config;
  std::size_t n_samples = 0;
  try {
    m = nlohmann::json::parse(in);
    if (m.at("format_version").get<int>() != kDatasetFormatVersion) {
      throw FormatError("unsupported dataset format version in " + dir.string());
    }
    n_samples = m.at("n_samples").get<std::size_t>();
    c.n_samples = static_cast<int>(n_samples);
    c.n_data_points = m.at("n_data_points").get<int>();
    c.n_per_edge = m.at("n_per_edge").get<int>();
    c.edge_length = m.at("genome_edge_length").get<double>();
    c.seed = m.at("seed").get<std::uint64_t>();
    c.ranges.family = parse_family(m.at("kernel_family").get<std::string>());
    const auto& r = m.at("ranges");
    c.ranges.lengthscale_min = r.at("lengthscale").at(0);
    c.ranges.lengthscale_max = r.at("lengthscale").at(1);
    c.ranges.variance_min = r.at("variance").at(0);
    c.ranges.variance_max = r.at("variance").at(1);
    c.ranges.power_min = r.at("power").at(0);
    c.ranges.power_max = r.at("power").at(1);
    c.ranges.jitter = r.at("jitter");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad dataset manifest in " + dir.string() + ": " + e.what());
  }
  if (c.n_per_edge <= 0 || c.n_data_points < 0 || !(c.edge_length > 0.0)) {
    throw FormatError("bad dataset manifest values in " + dir.string());
  }

  const auto path = dir / "samples.bin";
  std::ifstream bin(path, std::ios::binary | std::ios::ate);
  if (!bin) throw IoError("cannot open " + path.string());
  const std::size_t record = 4 * c.n_per_edge + 3 * c.n_data_points;
  const auto bytes = static_cast<std::size_t>(bin.tellg());
  if (bytes != n_samples * record * sizeof(double)) {
    throw FormatError(path.string() + " has " + std::to_string(bytes) + " bytes, expected " +
                      std::to_string(n_samples * record * sizeof(double)));
  }
  bin.seekg(0);
  std::vector<double> buf(record);
  dataset.samples.resize(n_samples);
  for (std::size_t k = 0; k < n_samples; ++k) {
    bin.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(record * sizeof(double)));
    if (!bin) throw IoError("read failed for " + path.string());
    auto& s = dataset.samples[k];
    s.sample_id = static_cast<std::int64_t>(k);
    s.trace = BoundaryTrace(Eigen::Map<const Eigen::VectorXd>(buf.data(), 4 * c.n_per_edge), c.edge_length);
    s.data_points.resize(c.n_data_points);
    for (int i = 0; i < c.n_data_points; ++i) {
      const double* p = buf.data() + 4 * c.n_per_edge + 3 * i;
      s.data_points[i] = {p[0], p[1], p[2]};
    }
  }
  return dataset;
}

}  // namespace mosaic
