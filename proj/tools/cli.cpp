#include "cli.hpp"

#include "mosaic/analysis.hpp"
#include "mosaic/domain_spec.hpp"
#include "mosaic/errors.hpp"
#include "mosaic/gfnet_solver.hpp"
#include "mosaic/gp_boundary.hpp"
#include "mosaic/mosaic.hpp"
#include "mosaic/train.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

namespace mosaic::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// One JSON object of the run configuration. Reads record the value actually
/// used (given or default) so the resolved configuration can be written out.
class Section {
 public:
  Section(json input, std::string path) : input_(std::move(input)), path_(std::move(path)) {
    if (input_.is_null()) input_ = json::object();
    if (!input_.is_object()) throw ConfigError(describe_root() + ": expected an object");
  }

  bool has(const std::string& key) const { return input_.contains(key); }

  template <class T>
  T get(const std::string& key, T fallback) {
    used_.insert(key);
    T value = has(key) ? convert<T>(input_.at(key), key) : fallback;
    resolved_[key] = value;
    return value;
  }

  template <class T>
  std::optional<T> maybe(const std::string& key) {
    used_.insert(key);
    if (!has(key) || input_.at(key).is_null()) return std::nullopt;
    T value = convert<T>(input_.at(key), key);
    resolved_[key] = value;
    return value;
  }

  template <class T>
  T require(const std::string& key) {
    auto value = maybe<T>(key);
    if (!value) throw ConfigError(full(key) + ": required");
    return *value;
  }

  Section& child(const std::string& key) {
    used_.insert(key);
    auto it = children_.find(key);
    if (it == children_.end()) {
      it = children_.emplace(key, std::make_unique<Section>(has(key) ? input_.at(key) : json::object(), full(key)))
               .first;
    }
    return *it->second;
  }

  /// The raw JSON of `key`, recorded verbatim.
  json raw(const std::string& key, json fallback) {
    used_.insert(key);
    json value = has(key) ? input_.at(key) : std::move(fallback);
    resolved_[key] = value;
    return value;
  }

  /// Records a value derived from other keys in place of the given one.
  void record(const std::string& key, json value) { resolved_[key] = std::move(value); }

  json resolved() const {
    json out = resolved_;
    for (const auto& [key, section] : children_) out[key] = section->resolved();
    return out;
  }

  void check_unused() const {
    for (const auto& [key, value] : input_.items()) {
      if (!used_.count(key)) throw ConfigError(full(key) + ": unknown key");
    }
    for (const auto& [key, section] : children_) section->check_unused();
  }

  std::string full(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  std::string describe_root() const { return path_.empty() ? "config" : path_; }

  template <class T>
  T convert(const json& value, const std::string& key) const {
    if constexpr (std::is_same_v<T, bool>) {
      if (value.is_boolean()) return value.get<bool>();
      throw ConfigError(full(key) + ": expected true or false");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (value.is_string()) return value.get<std::string>();
      throw ConfigError(full(key) + ": expected a string");
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (value.is_number_unsigned()) return value.get<std::uint64_t>();
      throw ConfigError(full(key) + ": expected a nonnegative integer");
    } else if constexpr (std::is_integral_v<T>) {
      if (value.is_number_integer()) {
        const auto v = value.get<std::int64_t>();
        if (v >= std::numeric_limits<T>::min() && v <= std::numeric_limits<T>::max()) return static_cast<T>(v);
      }
      throw ConfigError(full(key) + ": expected an integer");
    } else {
      if (value.is_number()) return value.get<T>();
      throw ConfigError(full(key) + ": expected a number");
    }
  }

  json input_;
  std::string path_;
  json resolved_ = json::object();
  std::set<std::string> used_;
  std::map<std::string, std::unique_ptr<Section>> children_;
};

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> precision;
  std::optional<std::string> output;
};

struct Context {
  Section& config;
  std::uint64_t seed = 0;
  int threads = 1;
  std::optional<std::string> precision;
  fs::path output;
  std::ostream& out;
};

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& value) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << value.dump(1) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::string timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm utc{};
  gmtime_r(&now, &utc);
  std::ostringstream s;
  s << std::put_time(&utc, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

json metadata(const std::string& command) { return {{"command", command}, {"timestamp", timestamp()}}; }

std::string resolve_precision(const Context& ctx, const std::string& fallback) {
  const std::string p = ctx.precision.value_or(fallback);
  if (p != "f32" && p != "f64") throw ConfigError("precision: expected f32 or f64");
  return p;
}

KernelFamily parse_kernel_family(const std::string& name) {
  if (name == "squared_exponential") return KernelFamily::squared_exponential;
  if (name == "power_exponential") return KernelFamily::power_exponential;
  throw ConfigError("ranges.family: unknown kernel family '" + name + "'");
}

AuxLayers read_layers(Section& c) {
  Section& s = c.child("layers");
  return {s.get<int>("vertical", 1), s.get<int>("horizontal", 1), s.get<int>("corner", 1)};
}

MosaicOptions read_mosaic_options(Section& c, int threads) {
  MosaicOptions o;
  o.tolerance = c.maybe<double>("tolerance");
  o.max_iterations = c.get<int>("max_iterations", 500);
  o.init_from_extrapolation = c.get<bool>("init_from_extrapolation", false);
  o.threads = threads;
  if (o.tolerance && !(*o.tolerance > 0.0)) throw ConfigError(c.full("tolerance") + ": must be positive");
  if (o.max_iterations <= 0) throw ConfigError(c.full("max_iterations") + ": must be positive");
  return o;
}

DomainSpec read_domain(Section& c) {
  const std::string path = c.require<std::string>("domain");
  return load_domain_spec(path);
}

/// The oracle or a GFNet checkpoint, as chosen by `solver`.
std::unique_ptr<GenomeSolver> make_solver(const Context& ctx, Section& c, double edge_length) {
  const std::string kind = c.get<std::string>("solver", "oracle");
  if (kind == "oracle") {
    return std::make_unique<NumericGenomeSolver>(kDefaultPointsPerEdge, edge_length);
  }
  if (kind != "gfnet") throw ConfigError("solver: expected oracle or gfnet");
  const fs::path dir = c.require<std::string>("checkpoint");
  const std::string precision = resolve_precision(ctx, checkpoint_precision(dir));
  if (precision == "f32") {
    auto model = checkpoint_load<float>(dir);
    const int n = model.n_bc() / 4;
    return std::make_unique<GfnetGenomeSolver<float>>(std::move(model), n);
  }
  auto model = checkpoint_load<double>(dir);
  const int n = model.n_bc() / 4;
  return std::make_unique<GfnetGenomeSolver<double>>(std::move(model), n);
}

json arrangement_json(const GenomeArrangement& a) {
  return {{"n_genomes", a.placements.size()},
          {"n_basic", a.n_basic()},
          {"n_auxiliary", a.n_auxiliary()},
          {"n_stages", a.n_stages}};
}

/// Plain PGM with rows from the top of the domain. Active vertices map
/// linearly onto 1..255, vertices outside the domain are 0.
json write_heatmap(const fs::path& path, const FieldGrid& field) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (int j = 0; j < field.ny(); ++j) {
    for (int i = 0; i < field.nx(); ++i) {
      if (!field.active(i, j)) continue;
      lo = std::min(lo, field(i, j));
      hi = std::max(hi, field(i, j));
    }
  }
  const double span = hi > lo ? hi - lo : 1.0;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P2\n" << field.nx() << ' ' << field.ny() << "\n255\n";
  for (int j = field.ny() - 1; j >= 0; --j) {
    for (int i = 0; i < field.nx(); ++i) {
      const int pixel = field.active(i, j) ? 1 + static_cast<int>(std::lround(254.0 * (field(i, j) - lo) / span)) : 0;
      out << pixel << ((i + 1) % 16 == 0 || i + 1 == field.nx() ? '\n' : ' ');
    }
  }
  if (!out) throw IoError("write failed for " + path.string());
  return {{"min", lo}, {"max", hi}, {"mapping", "1 + round(254 (u - min) / (max - min)); 0 outside the domain"}};
}

json report_json(const ConvergenceReport& r) {
  return {{"iterations", r.iterations},
          {"converged", r.converged},
          {"tolerance", r.tolerance},
          {"max_change", r.max_change},
          {"mean_change", r.mean_change}};
}

int cmd_gen_data(Context& ctx) {
  Section& c = ctx.config;
  DatasetConfig dc;
  dc.n_samples = c.get<int>("n_samples", dc.n_samples);
  dc.n_data_points = c.get<int>("n_data_points", dc.n_data_points);
  dc.n_per_edge = c.get<int>("n_per_edge", dc.n_per_edge);
  dc.edge_length = c.get<double>("edge_length", dc.edge_length);
  if (dc.n_per_edge < 2) throw ConfigError("n_per_edge: must be at least 2");
  if (!(dc.edge_length > 0.0)) throw ConfigError("edge_length: must be positive");
  Section& r = c.child("ranges");
  auto& h = dc.ranges;
  h.family = parse_kernel_family(r.get<std::string>("family", "squared_exponential"));
  h.lengthscale_min = r.get<double>("lengthscale_min", h.lengthscale_min);
  h.lengthscale_max = r.get<double>("lengthscale_max", h.lengthscale_max);
  h.variance_min = r.get<double>("variance_min", h.variance_min);
  h.variance_max = r.get<double>("variance_max", h.variance_max);
  h.power_min = r.get<double>("power_min", h.power_min);
  h.power_max = r.get<double>("power_max", h.power_max);
  h.jitter = r.get<double>("jitter", h.jitter);
  c.check_unused();
  h.validate();
  dc.seed = ctx.seed;
  dc.threads = ctx.threads;

  const Dataset ds = generate_dataset(dc);
  write_dataset(ctx.output, ds);
  ctx.out << "samples: " << ds.samples.size() << "\n";
  ctx.out << "manifest: " << (ctx.output / "manifest.json").string() << "\n";
  return kExitOk;
}

std::string preset_for_arch(const std::string& preset, const std::string& arch) {
  parse_architecture(arch);
  const auto dash = preset.find('-');
  const std::string suffix = dash == std::string::npos ? "" : preset.substr(dash);
  return arch + suffix;
}

template <class S>
int train_impl(Context& ctx, const Dataset& dataset, const ModelSpec& spec, const LossConfig& loss,
               const TrainConfig& tc, bool resume, int stop_after, int state_every,
               const std::optional<Dataset>& test, const std::string& fingerprint) {
  Trainer<S> trainer(dataset, spec, loss, tc);
  const fs::path state_dir = ctx.output / "state";
  if (resume && fs::exists(state_dir / "state.json")) {
    trainer.load_state(state_dir);
    ctx.out << "resumed at epoch " << trainer.epoch() << "\n";
  }
  while (!trainer.finished() && (stop_after <= 0 || trainer.epoch() < stop_after)) {
    trainer.step();
    const auto& r = trainer.history().back();
    ctx.out << "epoch " << r.epoch << " train " << r.train_loss << " val " << r.val_loss << " lr " << r.lr << "\n";
    if (state_every > 0 && trainer.epoch() % state_every == 0) trainer.save_state(state_dir);
  }
  trainer.save_state(state_dir);
  checkpoint_save(trainer.best_model(), ctx.output / "checkpoint", fingerprint);
  write_history_csv(ctx.output / "history.csv", trainer.history());

  json report = {{"epochs", trainer.epoch()},
                 {"finished", trainer.finished()},
                 {"best_epoch", trainer.best_epoch()},
                 {"best_val_loss", trainer.best_val_loss()},
                 {"train_mae", trainer.train_mae()}};
  if (!trainer.history().empty()) {
    report["initial_val_loss"] = trainer.history().front().val_loss;
    report["final_val_loss"] = trainer.history().back().val_loss;
  }
  if (test) {
    const GenomeMetrics m = evaluate_model(trainer.best_model(), *test);
    report["test_mae"] = m.mae;
    report["test_mar"] = m.mar;
    ctx.out << "test MAE " << m.mae << " MAR " << m.mar << "\n";
  }
  report["metadata"] = metadata("train");
  write_json(ctx.output / "report.json", report);
  ctx.out << "checkpoint: " << (ctx.output / "checkpoint").string() << "\n";
  return kExitOk;
}

int cmd_train(Context& ctx, const std::optional<std::string>& arch) {
  Section& c = ctx.config;
  const std::string dataset_dir = c.require<std::string>("dataset");
  std::string preset = c.get<std::string>("preset", "lpfc-desk");
  if (arch) preset = preset_for_arch(preset, *arch);
  ModelSpec spec = model_preset(preset);
  c.record("preset", preset);
  spec.exact_bc = c.get<bool>("exact_bc", false);

  Section& l = c.child("loss");
  LossConfig loss;
  loss.alpha = l.get<double>("alpha", loss.alpha);
  loss.beta = l.get<double>("beta", loss.beta);
  loss.n_collocation = l.get<int>("n_collocation", loss.n_collocation);
  loss.adaptive_collocation = l.get<bool>("adaptive_collocation", loss.adaptive_collocation);

  Section& t = c.child("train");
  TrainConfig tc;
  tc.lr0 = t.get<double>("lr0", tc.lr0);
  tc.decay = t.get<double>("decay", tc.decay);
  tc.patience = t.get<int>("patience", tc.patience);
  tc.threshold = t.get<double>("threshold", tc.threshold);
  tc.lr_min = t.get<double>("lr_min", tc.lr_min);
  tc.batch_size = t.get<int>("batch_size", tc.batch_size);
  tc.val_fraction = t.get<double>("val_fraction", tc.val_fraction);
  tc.max_epochs = t.get<int>("max_epochs", tc.max_epochs);
  tc.max_residual_pairs = t.get<int>("max_residual_pairs", tc.max_residual_pairs);
  tc.seed = ctx.seed;

  const bool resume = c.get<bool>("resume", false);
  const int stop_after = c.get<int>("stop_after", 0);
  const int state_every = c.get<int>("state_every", 50);
  const auto test_dir = c.maybe<std::string>("test_dataset");
  const std::string precision = resolve_precision(ctx, "f64");
  c.check_unused();
  spec.validate();
  loss.validate();
  tc.validate();

  const Dataset dataset = read_dataset(dataset_dir);
  std::optional<Dataset> test;
  if (test_dir) test = read_dataset(*test_dir);
  const std::string fingerprint =
      "dataset=" + dataset_dir + " preset=" + preset + " seed=" + std::to_string(ctx.seed) + " precision=" + precision;
  make_dir(ctx.output);
  if (precision == "f32") {
    return train_impl<float>(ctx, dataset, spec, loss, tc, resume, stop_after, state_every, test, fingerprint);
  }
  return train_impl<double>(ctx, dataset, spec, loss, tc, resume, stop_after, state_every, test, fingerprint);
}

int cmd_solve(Context& ctx) {
  Section& c = ctx.config;
  const DomainSpec domain = read_domain(c);
  const AuxLayers layers = read_layers(c);
  const bool execute = c.get<bool>("execute", true);
  const std::string reference = c.get<std::string>("reference", "direct");
  auto solver = make_solver(ctx, c, domain.edge_length);
  MosaicOptions options = read_mosaic_options(c, ctx.threads);
  c.check_unused();

  const GenomeArrangement arrangement = build_arrangement(domain.mask, layers, domain.edge_length);
  json report = {{"solver", solver->name()}, {"boundary", domain.bc_name}, {"arrangement", arrangement_json(arrangement)},
                 {"executed", execute}};
  make_dir(ctx.output);
  ctx.out << "genomes: " << arrangement.placements.size() << " (" << arrangement.n_basic() << " basic, "
          << arrangement.n_auxiliary() << " auxiliary)\n";
  if (execute) {
    const MosaicResult result = mf_predict(arrangement, domain.bc, *solver, options);
    report["convergence"] = report_json(result.report);
    report["mar_fd"] = compute_mar_fd(result.field);
    if (reference != "none") {
      const FieldGrid ref = reference == "direct"
                                ? solve_dirichlet(domain.mask, domain.bc, domain.edge_length, solver->n_per_edge())
                                : read_field_csv(reference);
      report["reference"] = {{"source", reference},
                             {"mae", compute_mae(result.field, ref)},
                             {"reference_mar_fd", compute_mar_fd(ref)}};
      ctx.out << "MAE vs reference: " << report["reference"]["mae"].get<double>() << "\n";
    }
    write_field_csv(ctx.output / "field.csv", result.field);
    report["heatmap"] = write_heatmap(ctx.output / "heatmap.pgm", result.field);
    ctx.out << "iterations: " << result.report.iterations << (result.report.converged ? " (converged)" : " (not converged)")
            << "\n";
  }
  report["metadata"] = metadata("solve");
  write_json(ctx.output / "report.json", report);
  return kExitOk;
}

int cmd_schwarz_demo(Context& ctx) {
  Section& c = ctx.config;
  json domain = {{"rectangle", {{"width", 2}, {"height", 1}}}};
  domain["bc"] = c.raw("bc", json{{"family", "harmonic_quadratic"}});
  SchwarzOptions options;
  options.mae_target = c.get<double>("mae_target", options.mae_target);
  options.max_iterations = c.get<int>("max_iterations", options.max_iterations);
  options.init_from_extrapolation = c.get<bool>("init_from_extrapolation", options.init_from_extrapolation);
  c.check_unused();
  if (options.max_iterations <= 0) throw ConfigError("max_iterations: must be positive");
  const DomainSpec spec = [&] {
    try {
      return parse_domain_spec(domain.dump());
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("bc: ") + e.what());
    }
  }();

  const SchwarzResult simple = schwarz_two_genome_demo(SchwarzMode::simple_exchange, spec.bc, options);
  const SchwarzResult aux = schwarz_two_genome_demo(SchwarzMode::auxiliary, spec.bc, options);
  make_dir(ctx.output);
  const fs::path csv = ctx.output / "schwarz.csv";
  std::ofstream out(csv);
  if (!out) throw IoError("cannot write " + csv.string());
  out << "iteration,mae_simple,mae_auxiliary\n";
  out.precision(17);
  const std::size_t rows = std::max(simple.mae.size(), aux.mae.size());
  for (std::size_t k = 0; k < rows; ++k) {
    out << k + 1 << ',';
    if (k < simple.mae.size()) out << simple.mae[k];
    out << ',';
    if (k < aux.mae.size()) out << aux.mae[k];
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + csv.string());

  auto mode_json = [](const SchwarzResult& r) {
    return json{{"iterations", r.report.iterations},
                {"iterations_to_target", r.iterations_to_target},
                {"final_mae", r.mae.empty() ? 0.0 : r.mae.back()}};
  };
  json report = {{"simple_exchange", mode_json(simple)}, {"auxiliary", mode_json(aux)}, {"mae_target", options.mae_target}};
  if (simple.iterations_to_target > 0 && aux.iterations_to_target > 0) {
    report["speedup"] = double(simple.iterations_to_target) / aux.iterations_to_target;
  }
  report["metadata"] = metadata("schwarz-demo");
  write_json(ctx.output / "report.json", report);
  ctx.out << "simple exchange: " << simple.iterations_to_target << " iterations to " << options.mae_target << "\n";
  ctx.out << "auxiliary genome: " << aux.iterations_to_target << " iterations to " << options.mae_target << "\n";
  return kExitOk;
}

int cmd_analyze(Context& ctx) {
  Section& c = ctx.config;
  const DomainSpec domain = read_domain(c);
  const AuxLayers layers = read_layers(c);
  const std::string mode = c.get<std::string>("mode", "both");
  if (mode != "both" && mode != "breakdown" && mode != "sweep") {
    throw ConfigError("mode: expected both, breakdown or sweep");
  }
  const double training_mae = c.get<double>("training_mae", 0.0);
  auto solver = make_solver(ctx, c, domain.edge_length);
  const MosaicOptions options = read_mosaic_options(c, 1);

  std::vector<AuxLayers> configurations = default_sweep_configurations();
  const json given = c.raw("configurations", json::array());
  if (!given.is_array()) throw ConfigError("configurations: expected a list of [vertical, horizontal, corner]");
  if (!given.empty()) {
    configurations.clear();
    for (const auto& e : given) {
      if (!e.is_array() || e.size() != 3 || !e[0].is_number_integer() || !e[1].is_number_integer() ||
          !e[2].is_number_integer()) {
        throw ConfigError("configurations: expected a list of [vertical, horizontal, corner]");
      }
      configurations.push_back({e[0].get<int>(), e[1].get<int>(), e[2].get<int>()});
    }
  } else {
    json defaults = json::array();
    for (const auto& a : configurations) defaults.push_back({a.vertical, a.horizontal, a.corner});
    c.record("configurations", defaults);
  }
  c.check_unused();

  make_dir(ctx.output);
  json report = {{"solver", solver->name()}, {"boundary", domain.bc_name}};
  if (mode != "sweep") {
    const auto arrangement = build_arrangement(domain.mask, layers, domain.edge_length);
    const ErrorBreakdown b = decompose_errors(*solver, training_mae, arrangement, domain.bc, options);
    write_breakdown_csv(ctx.output / "breakdown.csv", {b});
    report["breakdown"] = {{"optimization_error", b.optimization_error},
                           {"generalization_error", b.generalization_error},
                           {"assembly_error", b.assembly_error},
                           {"final_mae", b.final_mae},
                           {"final_mar", b.final_mar},
                           {"test_mae", b.test_mae},
                           {"iterations", b.iterations},
                           {"converged", b.converged}};
    ctx.out << "final MAE " << b.final_mae << " = " << b.optimization_error << " + " << b.generalization_error
            << " + " << b.assembly_error << "\n";
  }
  if (mode != "breakdown") {
    const auto rows =
        density_sweep(*solver, domain.mask, domain.bc, configurations, domain.edge_length, options, ctx.threads);
    write_sweep_csv(ctx.output / "sweep.csv", rows);
    json sweep = json::array();
    for (const auto& r : rows) {
      sweep.push_back({{"label", r.label}, {"n_genomes", r.n_genomes}, {"final_mae", r.final_mae}});
      ctx.out << r.label << ": " << r.n_genomes << " genomes, MAE " << r.final_mae << "\n";
    }
    report["sweep"] = sweep;
  }
  report["metadata"] = metadata("analyze");
  write_json(ctx.output / "report.json", report);
  return kExitOk;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ContractError*>(&e) ||
      dynamic_cast<const DomainError*>(&e) || dynamic_cast<const ArrangementError*>(&e)) {
    return kExitConfig;
  }
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const FormatError*>(&e)) return kExitIo;
  if (dynamic_cast<const NumericalError*>(&e) || dynamic_cast<const DataError*>(&e)) return kExitNumerical;
  return 1;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Mosaic-flow Laplace solver"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions global;
  app.add_option("--config", global.config_path, "JSON run configuration");
  app.add_option("--seed", global.seed, "Seed for every random draw");
  app.add_option("--threads", global.threads, "Worker threads (default: hardware count)")->check(CLI::PositiveNumber);
  app.add_option("--precision", global.precision, "Network precision")->check(CLI::IsMember({"f32", "f64"}));
  app.add_option("-o,--output", global.output, "Output directory");

  auto* gen = app.add_subcommand("gen-data", "Generate a GP boundary dataset");
  auto* train = app.add_subcommand("train", "Train a GFNet on a dataset");
  std::optional<std::string> arch;
  std::optional<std::string> dataset;
  bool resume = false;
  train->add_option("--arch", arch, "Architecture override")->check(CLI::IsMember({"fc", "lpfc"}));
  train->add_option("--dataset", dataset, "Dataset directory");
  train->add_flag("--resume", resume, "Continue from the saved optimizer state");
  auto* solve = app.add_subcommand("solve", "Run the mosaic predictor on a domain");
  std::optional<std::string> solver, checkpoint, domain;
  bool execute_flag = false, arrangement_only = false;
  for (auto* sub : {solve}) {
    sub->add_option("--solver", solver, "oracle or gfnet")->check(CLI::IsMember({"oracle", "gfnet"}));
    sub->add_option("--checkpoint", checkpoint, "GFNet checkpoint directory");
    sub->add_option("--domain", domain, "Domain description file");
  }
  solve->add_flag("--execute", execute_flag, "Run the predictor even if the config disables it");
  solve->add_flag("--arrangement-only", arrangement_only, "Only build the genome arrangement");
  auto* schwarz = app.add_subcommand("schwarz-demo", "Compare the two-genome exchange schemes");
  auto* analyze = app.add_subcommand("analyze", "Error breakdown and genome-density sweep");
  analyze->add_option("--solver", solver, "oracle or gfnet")->check(CLI::IsMember({"oracle", "gfnet"}));
  analyze->add_option("--checkpoint", checkpoint, "GFNet checkpoint directory");
  analyze->add_option("--domain", domain, "Domain description file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  const std::map<CLI::App*, std::string> default_output = {
      {gen, "dataset"}, {train, "model"}, {solve, "solve"}, {schwarz, "schwarz"}, {analyze, "analysis"}};
  CLI::App* sub = app.get_subcommands().front();

  try {
    json input = load_config(global.config_path);
    if (!input.is_object()) throw ConfigError("config: expected an object");
    if (global.seed) input["seed"] = *global.seed;
    if (global.threads) input["threads"] = *global.threads;
    if (global.precision) input["precision"] = *global.precision;
    if (global.output) input["output"] = *global.output;
    if (dataset) input["dataset"] = *dataset;
    if (resume) input["resume"] = true;
    if (solver) input["solver"] = *solver;
    if (checkpoint) input["checkpoint"] = *checkpoint;
    if (domain) input["domain"] = *domain;
    if (execute_flag) input["execute"] = true;
    if (arrangement_only) input["execute"] = false;

    Section config(input, "");
    const int hardware = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    Context ctx{config, config.get<std::uint64_t>("seed", 0), 1, std::nullopt, {}, out};
    ctx.threads = config.get<int>("threads", hardware);
    if (ctx.threads <= 0) throw ConfigError("threads: must be positive");
    ctx.precision = config.maybe<std::string>("precision");
    ctx.output = config.get<std::string>("output", default_output.at(sub));
#ifdef _OPENMP
    omp_set_num_threads(ctx.threads);
#endif

    int code = kExitOk;
    const std::string name = sub->get_name();
    if (name == "gen-data") {
      code = cmd_gen_data(ctx);
    } else if (name == "train") {
      code = cmd_train(ctx, arch);
    } else if (name == "solve") {
      code = cmd_solve(ctx);
    } else if (name == "schwarz-demo") {
      code = cmd_schwarz_demo(ctx);
    } else {
      code = cmd_analyze(ctx);
    }
    json resolved = config.resolved();
    resolved["command"] = name;
    write_json(ctx.output / "resolved_config.json", resolved);
    return code;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
}

}  // namespace mosaic::cli
