// End-to-end acceptance run: one pass/fail line per criterion.

#include "mosaic/analysis.hpp"
#include "mosaic/domain_spec.hpp"
#include "mosaic/elliptic_fd.hpp"
#include "mosaic/errors.hpp"
#include "mosaic/gfnet.hpp"
#include "mosaic/gfnet_solver.hpp"
#include "mosaic/gp_boundary.hpp"
#include "mosaic/mosaic.hpp"
#include "mosaic/robin.hpp"
#include "mosaic/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace mosaic;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, double runtime, double budget, const Outcome& o) {
  const bool pass = o.pass && runtime <= budget;
  if (!pass) ++failures;
  std::printf("criterion %2d [%s]: %s  %s; %.1f s (budget %.0f s)\n", id, name.c_str(), pass ? "PASS" : "FAIL",
              o.detail.c_str(), runtime, budget);
  std::fflush(stdout);
}

void run_criterion(int id, const std::string& name, double budget, const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  report(id, name, seconds_since(t0), budget, o);
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(3);
  s << v;
  return s.str();
}

MlpModel<double> random_model(const ModelSpec& spec, std::mt19937_64& rng) {
  auto m = MlpModel<double>::glorot(spec, rng());
  std::normal_distribution<double> n01;
  for (int k = 0; k < m.n_layers(); ++k) {
    for (Eigen::Index i = 0; i < m.bias(k).size(); ++i) m.bias(k)[i] = 0.3 * n01(rng);
  }
  return m;
}

BoundaryTrace random_trace(int n_per_edge, std::mt19937_64& rng) {
  KernelSpec k;
  k.lengthscale = 1.0;
  return sample_trace(k, n_per_edge, rng());
}

ModelSpec small_spec(Architecture arch, bool exact_bc) {
  ModelSpec spec;
  spec.arch = arch;
  spec.exact_bc = exact_bc;
  spec.n_bc = 8;
  spec.hidden = arch == Architecture::fc ? std::vector<int>{7, 5} : std::vector<int>{5, 6, spec.n_bc};
  return spec;
}

// 1. Stencil exactness on the harmonic polynomials the 5-point scheme
// reproduces.
Outcome oracle_exactness() {
  const std::vector<std::function<double(Point)>> basis = {
      [](Point) { return 1.0; }, [](Point p) { return p.x; }, [](Point p) { return p.y; },
      [](Point p) { return p.x * p.y; }, [](Point p) { return p.x * p.x - p.y * p.y; }};
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n01;
  const auto mask = DomainMask::rectangle(1, 1);
  double worst = 0.0;
  for (int trial = 0; trial < 25; ++trial) {
    std::vector<double> c(basis.size());
    for (std::size_t k = 0; k < c.size(); ++k) c[k] = trial < 5 ? (int(k) == trial ? 1.0 : 0.0) : n01(rng);
    const ScalarFunction f = [&](Point p) {
      double v = 0.0;
      for (std::size_t k = 0; k < c.size(); ++k) v += c[k] * basis[k](p);
      return v;
    };
    const FieldGrid u = solve_dirichlet(mask, f);
    const FieldGrid exact = FieldGrid::sample(u.nx(), u.ny(), u.origin(), u.dx(), u.dy(), f);
    worst = std::max(worst, compute_mae(u, exact));
  }
  return {worst <= 1e-9, "worst MAE " + fmt(worst) + " over 25 polynomials"};
}

// 2. Two-genome alternating scheme with and without the auxiliary genome.
Outcome schwarz_reproduction() {
  const ScalarFunction g = [](Point p) { return p.x * p.x - p.y * p.y + p.x * p.y; };
  const auto simple = schwarz_two_genome_demo(SchwarzMode::simple_exchange, g);
  const auto aux = schwarz_two_genome_demo(SchwarzMode::auxiliary, g);
  const int s = simple.iterations_to_target, a = aux.iterations_to_target;
  const bool pass = s > 0 && s <= 600 && a > 0 && 5 * a <= s;
  return {pass, "simple " + std::to_string(s) + " iterations, auxiliary " + std::to_string(a) + " to MAE 1e-12"};
}

// 3. The predictor with the numeric genome solver reproduces the direct solve.
Outcome schwarz_oracle_equivalence() {
  const NumericGenomeSolver solver;
  bool pass = true;
  std::string detail;
  for (int size : {2, 4}) {
    const auto mask = DomainMask::rectangle(size, size);
    const auto arrangement = build_arrangement(mask, AuxLayers::uniform(1));
    for (const char* family : {"paper_g1", "paper_g2"}) {
      const auto bc = boundary_family(family, mask, 1.0);
      MosaicOptions options;
      options.tolerance = 1e-13;
      options.max_iterations = 2000;
      const auto result = mf_predict(arrangement, bc, solver, options);
      const FieldGrid direct = solve_dirichlet(mask, bc);
      const double mae = compute_mae(result.field, direct);
      const double mar = compute_mar_fd(result.field), mar_direct = compute_mar_fd(direct);
      const bool ok = result.report.converged && mae <= 1e-8 && mar <= 10 * mar_direct;
      pass = pass && ok;
      if (!detail.empty()) detail += "; ";
      detail += std::to_string(size) + "x" + std::to_string(size) + " " + family + ": MAE " + fmt(mae) + ", MAR " +
                fmt(mar) + " vs " + fmt(mar_direct) + ", " + std::to_string(result.report.iterations) + " it";
    }
  }
  return {pass, detail};
}

Batch random_batch(const MlpModel<double>& m, int n_traces, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 0.95);
  std::normal_distribution<double> n01;
  Batch b;
  b.traces.resize(m.n_bc(), n_traces);
  for (int t = 0; t < n_traces; ++t) b.traces.col(t) = random_trace(m.n_bc() / 4, rng).values();
  for (int i = 0; i < 6; ++i) b.points.push_back({u(rng), u(rng)});
  for (int i = 0; i < 9; ++i) b.targets.push_back({i % n_traces, i % 6, n01(rng)});
  for (int i = 0; i < 5; ++i) b.collocation.push_back({u(rng), u(rng)});
  for (int t = 0; t < n_traces; ++t) {
    for (int p = 0; p < 5; ++p) b.residual_pairs.push_back({t, p});
  }
  return b;
}

// 4. Reverse-mode weight gradients and forward-jet spatial derivatives
// against finite differences.
Outcome derivative_oracles() {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.1, 0.9);
  double worst_weight = 0.0, worst_spatial = 0.0;
  const std::vector<std::pair<Architecture, bool>> kinds = {
      {Architecture::fc, false}, {Architecture::lpfc, false}, {Architecture::fc, true}};
  for (int model = 0; model < 20; ++model) {
    const auto [arch, wrap] = kinds[model % kinds.size()];
    auto m = random_model(small_spec(arch, wrap), rng);
    const Batch batch = random_batch(m, 3, rng);
    LossConfig cfg;
    cfg.alpha = 1e-3;
    cfg.beta = 1e-3;
    const auto r = loss_and_gradients(m, batch, cfg);
    const double h = 1e-4;
    auto loss_at = [&](Eigen::Index i, double delta) {
      const double saved = m.params()[i];
      m.params()[i] = saved + delta;
      const double v = loss_and_gradients(m, batch, cfg, false).total;
      m.params()[i] = saved;
      return v;
    };
    Eigen::VectorXd fd(m.n_params());
    for (Eigen::Index i = 0; i < m.n_params(); ++i) {
      fd[i] = (8 * (loss_at(i, h) - loss_at(i, -h)) - (loss_at(i, 2 * h) - loss_at(i, -2 * h))) / (12 * h);
    }
    worst_weight = std::max(worst_weight, (r.gradient - fd).cwiseAbs().maxCoeff() / fd.cwiseAbs().maxCoeff());

    const auto g = random_trace(2, rng);
    const Point p{u(rng), u(rng)};
    const auto d = spatial_derivatives(m, g, p);
    const double s = 1e-4;
    auto f = [&](double dx, double dy) { return forward(m, g, {p.x + dx, p.y + dy}); };
    const std::vector<std::pair<double, double>> pairs = {
        {d.ux, (f(s, 0) - f(-s, 0)) / (2 * s)},
        {d.uy, (f(0, s) - f(0, -s)) / (2 * s)},
        {d.uxx, (f(s, 0) - 2 * f(0, 0) + f(-s, 0)) / (s * s)},
        {d.uyy, (f(0, s) - 2 * f(0, 0) + f(0, -s)) / (s * s)},
        {d.uxy, (f(s, s) - f(s, -s) - f(-s, s) + f(-s, -s)) / (4 * s * s)}};
    double scale = 1.0;
    for (const auto& [a, b] : pairs) scale = std::max(scale, std::abs(b));
    for (const auto& [a, b] : pairs) worst_spatial = std::max(worst_spatial, std::abs(a - b) / scale);
  }
  return {worst_weight <= 1e-5 && worst_spatial <= 1e-6,
          "weight gradient rel. error " + fmt(worst_weight) + ", spatial rel. error " + fmt(worst_spatial)};
}

// 5. LPFC output is linear in the boundary trace.
Outcome lpfc_linearity() {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto m = random_model(model_preset("lpfc-desk"), rng);
    const auto g1 = random_trace(32, rng), g2 = random_trace(32, rng);
    const double a = n01(rng), b = n01(rng);
    const Point x{u(rng), u(rng)};
    const double lhs = forward(m, BoundaryTrace(a * g1.values() + b * g2.values()), x);
    const double rhs = a * forward(m, g1, x) + b * forward(m, g2, x);
    worst = std::max(worst, std::abs(lhs - rhs) / std::max(std::abs(rhs), 1e-300));
  }
  return {worst <= 1e-9, "worst relative superposition error " + fmt(worst) + " over 100 tuples"};
}

struct TrainedModel {
  MlpModel<float> model;
  GenomeMetrics test;
  double train_mae = 0.0;
  int best_epoch = 0;
  double seconds = 0.0;
};

struct DeskTraining {
  std::optional<TrainedModel> lpfc, fc, lpfc_no_residual;
};

TrainedModel train_desk(const Dataset& data, const Dataset& test, const std::string& preset, double alpha,
                        int epochs) {
  const auto t0 = Clock::now();
  LossConfig loss;
  loss.alpha = alpha;
  TrainConfig config;
  config.lr0 = 1e-3;
  config.batch_size = 16;
  config.max_epochs = epochs;
  config.max_residual_pairs = 2048;
  config.seed = 1;
  Trainer<float> trainer(data, model_preset(preset), loss, config);
  trainer.run();
  TrainedModel out{trainer.best_model(), evaluate_model(trainer.best_model(), test), trainer.train_mae(),
                   trainer.best_epoch(), 0.0};
  out.seconds = seconds_since(t0);
  std::printf("  trained %s alpha=%g: %d epochs in %.0f s, best epoch %d, test MAE %.4g, test MAR %.4g\n",
              preset.c_str(), alpha, epochs, out.seconds, out.best_epoch, out.test.mae, out.test.mar);
  std::fflush(stdout);
  return out;
}

constexpr int kLpfcEpochs = 300;
constexpr int kFcEpochs = 400;

// 6. Directional training claims at desk scale.
Outcome desk_training(DeskTraining& trained) {
  DatasetConfig dc;
  dc.n_samples = 500;
  dc.seed = 3;
  const Dataset data = generate_dataset(dc);
  DatasetConfig tc;
  tc.n_samples = 50;
  tc.seed = 99;
  const Dataset test = generate_dataset(tc);

  trained.lpfc = train_desk(data, test, "lpfc-desk", 1e-3, kLpfcEpochs);
  trained.lpfc_no_residual = train_desk(data, test, "lpfc-desk", 0.0, kLpfcEpochs);
  trained.fc = train_desk(data, test, "fc-desk", 1e-3, kFcEpochs);

  const double lp = trained.lpfc->test.mae, fc = trained.fc->test.mae;
  const bool a = lp < fc;
  const bool b = lp < 5e-2 && fc < 5e-2;
  const bool c = trained.lpfc->test.mar < trained.lpfc_no_residual->test.mar;
  std::string detail = std::string("(a) ") + (a ? "ok" : "fails") + ": LPFC MAE " + fmt(lp) + " vs FC " + fmt(fc) +
                       "; (b) " + (b ? "ok" : "fails") + ": both below 5e-2; (c) " + (c ? "ok" : "fails") +
                       ": MAR " + fmt(trained.lpfc->test.mar) + " (alpha 1e-3) vs " +
                       fmt(trained.lpfc_no_residual->test.mar) + " (alpha 0)";
  return {a && b && c, detail};
}

/// GP boundary data for the 2x2 domain, a trace around the square of edge 2.
ScalarFunction unseen_gp_boundary(const DomainMask& mask) {
  KernelSpec k;
  k.lengthscale = 2.0;
  k.variance = 1.0;
  const BoundaryTrace trace = sample_trace(k, 64, 20261019, 2.0);
  std::vector<std::pair<double, double>> samples;
  for (int i = 0; i < trace.size(); ++i) samples.push_back({trace.arclength(i), trace[i]});
  return boundary_from_samples(samples, mask, 1.0);
}

// 7. Predictor with the trained network on an unseen GP boundary.
Outcome mf_with_gfnet(const DeskTraining& trained) {
  if (!trained.lpfc) return {false, "no trained model"};
  const GfnetGenomeSolver<float> solver(trained.lpfc->model);
  const auto mask = DomainMask::rectangle(2, 2);
  const auto bc = unseen_gp_boundary(mask);
  const FieldGrid truth = solve_dirichlet(mask, bc);
  MosaicOptions options;
  options.tolerance = 1e-4;
  options.max_iterations = 500;
  const auto result = mf_predict(build_arrangement(mask, AuxLayers::uniform(1)), bc, solver, options);
  const double mae = compute_mae(result.field, truth);
  const double genomic = genomic_test_mae(solver, mask, truth);
  const bool pass = result.report.converged && result.report.iterations <= 50 && mae <= 5 * genomic;
  return {pass, std::string(result.report.converged ? "converged" : "did not converge") + " in " +
                    std::to_string(result.report.iterations) + " iterations, MAE " + fmt(mae) +
                    ", genomic test MAE " + fmt(genomic) + " (ratio " + fmt(mae / genomic) + ")"};
}

// 8. The exact-BC wrapper reproduces the trace whatever the weights.
Outcome exact_bc_wrapper() {
  std::mt19937_64 rng(8);
  auto spec = model_preset("fc-desk");
  spec.exact_bc = true;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto m = random_model(spec, rng);
    const auto g = random_trace(32, rng);
    std::vector<Point> pts;
    for (int i = 0; i < g.size(); ++i) pts.push_back(g.point(i));
    worst = std::max(worst, (forward_batch(m, g, pts) - g.values()).cwiseAbs().maxCoeff());
  }
  return {worst <= 1e-5, "worst boundary deviation " + fmt(worst) + " over 100 models x 128 points"};
}

// 9. Robin identity on the genome boundary.
Outcome robin_identity() {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> t(1e-3, 1.0 - 1e-3);
  std::uniform_int_distribution<int> side(0, 3);
  std::vector<Point> samples;
  for (int i = 0; i < 1000; ++i) {
    const double s = t(rng);
    const int k = side(rng);
    samples.push_back(k == 0 ? Point{s, 0.0} : k == 1 ? Point{1.0, s} : k == 2 ? Point{s, 1.0} : Point{0.0, s});
  }
  const ScalarFunction g = [](Point p) { return std::sin(2.0 * p.x) + 0.5 * std::cos(3.0 * p.y) + p.x * p.y; };
  double worst = 0.0;
  for (int net = 0; net < 10; ++net) {
    const auto m = random_model(model_preset("fc-desk"), rng);
    const auto trace = random_trace(32, rng);
    for (double c : {0.0, 0.5, 2.0}) worst = std::max(worst, verify_robin_identity(m, trace, RobinSpec{c, g}, samples));
  }
  return {worst <= 1e-6, "max residual " + fmt(worst) + " over 1000 points x 10 networks x 3 coefficients"};
}

// 10. Arrangement counts, the logo domain and the density sweep.
Outcome arrangements_and_sweep(const DeskTraining& trained) {
  const auto square = DomainMask::rectangle(2, 2);
  const std::size_t one = build_arrangement(square, AuxLayers::uniform(1)).placements.size();
  const std::size_t two = build_arrangement(square, AuxLayers::uniform(2)).placements.size();
  const DomainSpec logo = load_domain_spec(std::string(MOSAIC_DATA_DIR) + "/logo.json");
  const std::size_t logo_count = build_arrangement(logo.mask, AuxLayers::uniform(1), logo.edge_length).placements.size();
  std::string detail = "2x2: " + std::to_string(one) + " and " + std::to_string(two) + " genomes, logo " +
                       std::to_string(logo_count) + " genomes; ";
  bool pass = one == 9 && two == 19;
  if (!trained.lpfc) return {false, detail + "no trained model"};

  const GfnetGenomeSolver<float> solver(trained.lpfc->model);
  MosaicOptions options;
  options.tolerance = 1e-4;
  options.max_iterations = 500;
  const auto rows = density_sweep(solver, square, unseen_gp_boundary(square), default_sweep_configurations(), 1.0,
                                  options);
  std::size_t best = 0;
  bool monotone_down = true, monotone_up = true;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k].final_mae < rows[best].final_mae) best = k;
    if (k > 0) {
      monotone_down = monotone_down && rows[k].final_mae <= rows[k - 1].final_mae;
      monotone_up = monotone_up && rows[k].final_mae >= rows[k - 1].final_mae;
    }
  }
  const bool interior = best > 0 && best + 1 < rows.size() && !monotone_down && !monotone_up;
  pass = pass && interior;
  detail += "sweep MAE:";
  for (const auto& r : rows) detail += " " + r.label + "=" + fmt(r.final_mae);
  detail += "; minimum at " + rows[best].label + (interior ? " (interior)" : " (endpoint)");
  return {pass, detail};
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  DeskTraining trained;
  run_criterion(1, "oracle exactness", 1, oracle_exactness);
  run_criterion(2, "two-genome exchange", 60, schwarz_reproduction);
  run_criterion(3, "predictor matches direct solve", 4 * 120, schwarz_oracle_equivalence);
  run_criterion(4, "derivative oracles", 60, derivative_oracles);
  run_criterion(5, "LPFC linearity", 5, lpfc_linearity);
  run_criterion(6, "desk-scale training", 30 * 60, [&] { return desk_training(trained); });
  run_criterion(7, "predictor with trained GFNet", 5 * 60, [&] { return mf_with_gfnet(trained); });
  run_criterion(8, "exact-BC wrapper", 10, exact_bc_wrapper);
  run_criterion(9, "Robin identity", 60, robin_identity);
  run_criterion(10, "arrangements and density sweep", 10 * 60, [&] { return arrangements_and_sweep(trained); });
  std::printf("%d of 10 criteria failed; total %.0f s\n", failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
