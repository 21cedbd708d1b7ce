#include "mosaic/mosaic.hpp"

#include "mosaic/errors.hpp"

#include <cmath>
#include <map>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mosaic {

const char* to_string(GenomeKind kind) {
  switch (kind) {
    case GenomeKind::basic: return "basic";
    case GenomeKind::aux_vertical: return "aux_vertical";
    case GenomeKind::aux_horizontal: return "aux_horizontal";
    case GenomeKind::aux_corner: return "aux_corner";
  }
  return "?";
}

std::size_t GenomeArrangement::count(GenomeKind kind) const {
  return static_cast<std::size_t>(
      std::count_if(placements.begin(), placements.end(), [&](const GenomePlacement& p) { return p.kind == kind; }));
}

namespace {

std::string genome_label(std::size_t index, const GenomePlacement& p) {
  return "genome " + std::to_string(index + 1) + " (" + to_string(p.kind) + " at " + std::to_string(p.origin.x) +
         "," + std::to_string(p.origin.y) + ")";
}

}  // namespace

GenomeArrangement build_arrangement(const DomainMask& domain, const AuxLayers& layers, double l) {
  if (!(l > 0.0)) throw ContractError("build_arrangement: edge length must be positive");
  if (layers.vertical < 0 || layers.horizontal < 0 || layers.corner < 0) {
    throw ContractError("build_arrangement: layer counts must be nonnegative");
  }
  GenomeArrangement arr{domain, l, {}, 0};

  std::vector<Cell> cells = domain.cells();
  std::sort(cells.begin(), cells.end(), [](Cell a, Cell b) { return a.y != b.y ? a.y < b.y : a.x < b.x; });
  for (Cell c : cells) arr.placements.push_back({{c.x * l, c.y * l}, GenomeKind::basic, 0, 0});

  // Centres of the layer-0 items in cell units: vertical borders are keyed by
  // their lower end, horizontal borders by their left end, corners by the
  // shared vertex.
  std::vector<Point> vertical, horizontal, corner;
  for (Cell c : cells) {
    if (domain.contains(c.x - 1, c.y)) vertical.push_back({c.x - 0.5, static_cast<double>(c.y)});
    if (domain.contains(c.x, c.y - 1)) horizontal.push_back({static_cast<double>(c.x), c.y - 0.5});
    if (domain.contains(c.x - 1, c.y) && domain.contains(c.x, c.y - 1) && domain.contains(c.x - 1, c.y - 1)) {
      corner.push_back({c.x - 0.5, c.y - 0.5});
    }
  }

  auto add = [&](Point o, GenomeKind kind, int layer, int stage) {
    if (!domain.covers_square(o.x, o.y, 1.0)) {
      throw ArrangementError("build_arrangement: " + std::string(to_string(kind)) + " genome at (" +
                             std::to_string(o.x) + ", " + std::to_string(o.y) + ") leaves the domain");
    }
    arr.placements.push_back({{o.x * l, o.y * l}, kind, stage, layer});
  };

  const int depth = layers.max();
  for (int k = 0; k < depth; ++k) {
    const double delta = k == 0 ? 0.0 : std::ldexp(1.0, -(k + 1));
    auto offsets = [&](double dx, double dy) {
      std::vector<Point> out;
      if (k == 0) {
        out.push_back({0.0, 0.0});
      } else {
        out.push_back({-dx, -dy});
        out.push_back({dx, dy});
      }
      return out;
    };
    if (k < layers.vertical) {
      for (Point c : vertical)
        for (Point d : offsets(delta, 0.0)) add({c.x + d.x, c.y + d.y}, GenomeKind::aux_vertical, k, 3 * k + 1);
    }
    if (k < layers.horizontal) {
      for (Point c : horizontal)
        for (Point d : offsets(0.0, delta)) add({c.x + d.x, c.y + d.y}, GenomeKind::aux_horizontal, k, 3 * k + 2);
    }
    if (k < layers.corner) {
      for (Point c : corner)
        for (Point d : offsets(delta, delta)) add({c.x + d.x, c.y + d.y}, GenomeKind::aux_corner, k, 3 * k + 3);
    }
  }

  // Renumber stages densely, keeping their order.
  std::map<int, int> dense;
  for (const auto& p : arr.placements) dense.emplace(p.stage, 0);
  int next = 0;
  for (auto& [stage, id] : dense) id = next++;
  for (auto& p : arr.placements) p.stage = dense[p.stage];
  arr.n_stages = next;
  return arr;
}

// ---------------------------------------------------------------------------

BorderStore::BorderStore(const DomainGrid& grid, int cells_per_edge, const ScalarFunction& bc)
    : n_(cells_per_edge), values_(grid.layout) {
  const auto size = static_cast<std::size_t>(values_.size());
  border_.assign(size, 0);
  fixed_.assign(size, 0);
  values_.data().setZero();
  for (int j = 0; j < values_.ny(); ++j) {
    for (int i = 0; i < values_.nx(); ++i) {
      if (!values_.active(i, j)) continue;
      const auto idx = static_cast<std::size_t>(values_.index(i, j));
      if (grid.is_boundary(i, j)) {
        border_[idx] = fixed_[idx] = 1;
        const double v = bc(values_.position(i, j));
        if (!std::isfinite(v)) {
          throw DataError("domain boundary data is not finite at (" + std::to_string(values_.position(i, j).x) +
                          ", " + std::to_string(values_.position(i, j).y) + ")");
        }
        values_(i, j) = v;
      } else if (i % n_ == 0 || j % n_ == 0) {
        border_[idx] = 1;
        free_.push_back(static_cast<Eigen::Index>(idx));
      }
    }
  }
}

Eigen::VectorXd BorderStore::segment(Cell cell, int side) const {
  const Point o = values_.origin();
  const int i0 = static_cast<int>(std::lround(cell.x * n_ - o.x / values_.dx()));
  const int j0 = static_cast<int>(std::lround(cell.y * n_ - o.y / values_.dy()));
  if (i0 < 0 || j0 < 0 || i0 + n_ >= values_.nx() || j0 + n_ >= values_.ny()) {
    throw ContractError("BorderStore::segment: cell outside the store");
  }
  Eigen::VectorXd out(n_ + 1);
  for (int k = 0; k <= n_; ++k) {
    switch (side) {
      case 0: out[k] = values_(i0 + k, j0); break;
      case 1: out[k] = values_(i0 + n_, j0 + k); break;
      case 2: out[k] = values_(i0 + k, j0 + n_); break;
      case 3: out[k] = values_(i0, j0 + k); break;
      default: throw ContractError("BorderStore::segment: side must be 0..3");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

struct SourceGroup {
  std::size_t genome = 0;
  std::vector<Point> local;
  std::vector<int> slot;
  std::vector<double> weight;
};

struct Gather {
  /// Slots filled directly from the store.
  std::vector<std::pair<int, Eigen::Index>> from_store;
  std::vector<SourceGroup> groups;
  int n_slots = 0;

  Eigen::VectorXd evaluate(const BorderStore& store,
                           const std::vector<std::shared_ptr<const GenomeSolution>>& solutions,
                           const std::vector<GenomePlacement>& placements) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(n_slots);
    for (auto [slot, idx] : from_store) out[slot] = store.values()[idx];
    for (const auto& g : groups) {
      const auto& sol = solutions[g.genome];
      if (!sol) throw ArrangementError("trace needs " + genome_label(g.genome, placements[g.genome]) +
                                       " before it has been solved");
      const Eigen::VectorXd v = sol->values(g.local);
      for (std::size_t k = 0; k < g.slot.size(); ++k) out[g.slot[k]] += g.weight[k] * v[static_cast<Eigen::Index>(k)];
    }
    return out;
  }
};

}  // namespace

struct MosaicPredictor::Plan {
  std::vector<Gather> traces;  // per genome, N_bc slots
  /// Per genome: store vertices written back and their local positions.
  std::vector<std::vector<Eigen::Index>> write_index;
  std::vector<std::vector<Point>> write_local;
  std::vector<std::vector<std::size_t>> stages;
  /// Free store vertices relaxed by the 5-point stencil, and the gather of
  /// their four neighbours (4 slots each).
  std::vector<Eigen::Index> exchange_index;
  Gather exchange;
};

namespace {

bool inside_open(Point p, Point origin, double l) {
  const double tol = 1e-9 * l;
  return p.x > origin.x + tol && p.x < origin.x + l - tol && p.y > origin.y + tol && p.y < origin.y + l - tol;
}

}  // namespace

MosaicPredictor::MosaicPredictor(GenomeArrangement arrangement, const ScalarFunction& domain_bc,
                                 const GenomeSolver& solver, MosaicOptions options)
    : arrangement_(std::move(arrangement)), solver_(solver), options_(options), n_(solver.n_per_edge()) {
  const double l = arrangement_.edge_length;
  if (std::abs(solver.edge_length() - l) > 1e-12 * l) {
    throw ContractError("mf_predict: solver edge length " + std::to_string(solver.edge_length()) +
                        " differs from the arrangement's " + std::to_string(l));
  }
  if (options_.max_iterations < 1) throw ConfigError("mf_predict: max_iterations must be at least 1");
  tolerance_ = options_.tolerance.value_or(solver.name() == "oracle" ? 1e-10 : 1e-4);
  if (!(tolerance_ >= 0.0)) throw ConfigError("mf_predict: tolerance must be nonnegative");
  report_.tolerance = tolerance_;

  grid_ = make_domain_grid(arrangement_.domain, l, n_);
  store_ = BorderStore(grid_, n_, domain_bc);
  const FieldGrid& layout = store_.layout();
  const double h = layout.dx();
  const auto& placements = arrangement_.placements;
  const std::size_t n_genomes = placements.size();
  solutions_.assign(n_genomes, nullptr);

  if (options_.init_from_extrapolation) {
    std::vector<Eigen::Index> fixed;
    for (Eigen::Index k = 0; k < layout.size(); ++k) {
      const int i = static_cast<int>(k % layout.nx()), j = static_cast<int>(k / layout.nx());
      if (store_.fixed(i, j)) fixed.push_back(k);
    }
    for (Eigen::Index k : store_.free_vertices()) {
      const Point p = layout.position(static_cast<int>(k % layout.nx()), static_cast<int>(k / layout.nx()));
      double num = 0.0, den = 0.0;
      for (Eigen::Index f : fixed) {
        const Point b = layout.position(static_cast<int>(f % layout.nx()), static_cast<int>(f / layout.nx()));
        const double r2 = (p.x - b.x) * (p.x - b.x) + (p.y - b.y) * (p.y - b.y);
        num += store_.values()[f] / r2;
        den += 1.0 / r2;
      }
      store_.values()[k] = num / den;
    }
  }

  // Grid index of a domain point, or -1 when it is not a store vertex.
  auto store_index = [&](Point p) -> Eigen::Index {
    const double fi = (p.x - layout.origin().x) / h, fj = (p.y - layout.origin().y) / h;
    const long i = std::lround(fi), j = std::lround(fj);
    if (std::abs(fi - i) > 1e-7 || std::abs(fj - j) > 1e-7) return -1;
    if (i < 0 || j < 0 || i >= layout.nx() || j >= layout.ny()) return -1;
    if (!store_.on_border(static_cast<int>(i), static_cast<int>(j))) return -1;
    return layout.index(static_cast<int>(i), static_cast<int>(j));
  };

  // Genomes whose open interior holds p, chosen by stage: the most recent
  // earlier stage, else (for the next iteration's data) the latest later one.
  auto sources_for = [&](Point p, int stage) {
    std::vector<std::size_t> before, after;
    int best_before = -1, best_after = -1;
    for (std::size_t g = 0; g < n_genomes; ++g) {
      if (!inside_open(p, placements[g].origin, l)) continue;
      const int s = placements[g].stage;
      if (s < stage) {
        if (s > best_before) {
          best_before = s;
          before.clear();
        }
        if (s == best_before) before.push_back(g);
      } else if (s > stage) {
        if (s > best_after) {
          best_after = s;
          after.clear();
        }
        if (s == best_after) after.push_back(g);
      }
    }
    return before.empty() ? after : before;
  };

  auto add_query = [&](Gather& gather, std::map<std::size_t, std::size_t>& group_of, int slot, Point p, int stage,
                       const std::string& who) {
    const Eigen::Index idx = store_index(p);
    if (idx >= 0) {
      gather.from_store.emplace_back(slot, idx);
      return;
    }
    const auto src = sources_for(p, stage);
    if (src.empty()) {
      throw ArrangementError(who + ": point (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                             ") is neither a stored border nor inside another genome");
    }
    for (std::size_t g : src) {
      auto [it, inserted] = group_of.emplace(g, gather.groups.size());
      if (inserted) gather.groups.push_back({g, {}, {}, {}});
      auto& grp = gather.groups[it->second];
      grp.local.push_back({p.x - placements[g].origin.x, p.y - placements[g].origin.y});
      grp.slot.push_back(slot);
      grp.weight.push_back(1.0 / static_cast<double>(src.size()));
    }
  };

  plan_ = std::make_unique<Plan>();
  plan_->traces.resize(n_genomes);
  plan_->write_index.resize(n_genomes);
  plan_->write_local.resize(n_genomes);
  plan_->stages.resize(static_cast<std::size_t>(arrangement_.n_stages));

  const BoundaryTrace ring(Eigen::VectorXd::Zero(4 * n_), l);
  std::vector<std::uint8_t> covered(static_cast<std::size_t>(layout.size()), 0);
  for (std::size_t g = 0; g < n_genomes; ++g) {
    const auto& pl = placements[g];
    plan_->stages[static_cast<std::size_t>(pl.stage)].push_back(g);
    Gather& gather = plan_->traces[g];
    gather.n_slots = ring.size();
    std::map<std::size_t, std::size_t> group_of;
    const std::string who = genome_label(g, pl);
    for (int t = 0; t < ring.size(); ++t) {
      const Point q = ring.point(t);
      add_query(gather, group_of, t, {pl.origin.x + q.x, pl.origin.y + q.y}, pl.stage, who);
    }
    if (pl.kind == GenomeKind::basic) continue;
    for (Eigen::Index k : store_.free_vertices()) {
      const Point p = layout.position(static_cast<int>(k % layout.nx()), static_cast<int>(k / layout.nx()));
      if (!inside_open(p, pl.origin, l)) continue;
      plan_->write_index[g].push_back(k);
      plan_->write_local[g].push_back({p.x - pl.origin.x, p.y - pl.origin.y});
      covered[static_cast<std::size_t>(k)] = 1;
    }
  }

  // Free vertices no auxiliary genome reaches are relaxed from their
  // neighbours, which lie on the store or inside basic genomes.
  std::map<std::size_t, std::size_t> group_of;
  for (Eigen::Index k : store_.free_vertices()) {
    if (covered[static_cast<std::size_t>(k)]) continue;
    const Point p = layout.position(static_cast<int>(k % layout.nx()), static_cast<int>(k / layout.nx()));
    const int base = static_cast<int>(plan_->exchange_index.size()) * 4;
    plan_->exchange_index.push_back(k);
    const Point nb[4] = {{p.x - h, p.y}, {p.x + h, p.y}, {p.x, p.y - h}, {p.x, p.y + h}};
    for (int m = 0; m < 4; ++m) {
      add_query(plan_->exchange, group_of, base + m, nb[m], arrangement_.n_stages, "border exchange");
    }
  }
  plan_->exchange.n_slots = static_cast<int>(plan_->exchange_index.size()) * 4;
}

MosaicPredictor::~MosaicPredictor() = default;

BoundaryTrace MosaicPredictor::trace_for_genome(std::size_t index) const {
  if (index >= arrangement_.placements.size()) throw ContractError("trace_for_genome: index out of range");
  return BoundaryTrace(plan_->traces[index].evaluate(store_, solutions_, arrangement_.placements),
                       arrangement_.edge_length);
}

double MosaicPredictor::iterate() {
  const auto& placements = arrangement_.placements;
  const Eigen::VectorXd before = store_.values();
  const int threads = std::max(1, options_.threads);

  for (const auto& stage : plan_->stages) {
    const auto count = static_cast<long>(stage.size());
    std::vector<std::shared_ptr<const GenomeSolution>> solved(stage.size());
    std::vector<Eigen::VectorXd> written(stage.size());
    std::vector<std::string> failure(stage.size());
#pragma omp parallel for num_threads(threads) schedule(dynamic)
    for (long s = 0; s < count; ++s) {
      const std::size_t g = stage[static_cast<std::size_t>(s)];
      try {
        const BoundaryTrace trace = trace_for_genome(g);
        auto sol = solver_.solve(trace);
        const Eigen::VectorXd w = sol->values(plan_->write_local[g]);
        bool finite = w.allFinite();
        if (finite && placements[g].kind == GenomeKind::basic) {
          const Point probe{0.5 * arrangement_.edge_length, 0.5 * arrangement_.edge_length};
          finite = std::isfinite(sol->value(probe));
        }
        if (!finite) {
          failure[static_cast<std::size_t>(s)] = "mf_predict: " + genome_label(g, placements[g]) +
                                                 " produced a non-finite solution";
        }
        solved[static_cast<std::size_t>(s)] = std::move(sol);
        written[static_cast<std::size_t>(s)] = w;
      } catch (const std::exception& e) {
        failure[static_cast<std::size_t>(s)] = e.what();
      }
    }
    for (std::size_t s = 0; s < stage.size(); ++s) {
      if (!failure[s].empty()) {
        if (failure[s].rfind("mf_predict:", 0) == 0) throw NumericalError(failure[s]);
        throw NumericalError("mf_predict: " + genome_label(stage[s], placements[stage[s]]) + ": " + failure[s]);
      }
    }

    // Commit: writes of one stage are averaged per vertex.
    std::map<Eigen::Index, std::pair<double, int>> acc;
    for (std::size_t s = 0; s < stage.size(); ++s) {
      const std::size_t g = stage[s];
      solutions_[g] = std::move(solved[s]);
      const auto& idx = plan_->write_index[g];
      for (std::size_t k = 0; k < idx.size(); ++k) {
        auto& [sum, n] = acc[idx[k]];
        sum += written[s][static_cast<Eigen::Index>(k)];
        ++n;
      }
    }
    for (const auto& [k, sn] : acc) store_.values()[k] = sn.first / sn.second;
  }

  if (!plan_->exchange_index.empty()) {
    const Eigen::VectorXd nb = plan_->exchange.evaluate(store_, solutions_, placements);
    for (std::size_t e = 0; e < plan_->exchange_index.size(); ++e) {
      const auto b = static_cast<Eigen::Index>(e) * 4;
      store_.values()[plan_->exchange_index[e]] = 0.25 * (nb[b] + nb[b + 1] + nb[b + 2] + nb[b + 3]);
    }
  }

  double max_change = 0.0, sum_change = 0.0;
  for (Eigen::Index k : store_.free_vertices()) {
    const double d = std::abs(store_.values()[k] - before[k]);
    if (!std::isfinite(d)) throw NumericalError("mf_predict: inferred border became non-finite");
    max_change = std::max(max_change, d);
    sum_change += d;
  }
  const auto n_free = store_.free_vertices().size();
  report_.iterations += 1;
  report_.max_change.push_back(max_change);
  report_.mean_change.push_back(n_free ? sum_change / static_cast<double>(n_free) : 0.0);
  return max_change;
}

ConvergenceReport MosaicPredictor::run(const std::function<void(int, double)>& on_iteration) {
  while (report_.iterations < options_.max_iterations) {
    const double change = iterate();
    if (on_iteration) on_iteration(report_.iterations, change);
    if (change < tolerance_) {
      report_.converged = true;
      break;
    }
  }
  return report_;
}

FieldGrid MosaicPredictor::assemble() const {
  FieldGrid field = grid_.layout;
  field.data().setZero();
  Eigen::VectorXd count = Eigen::VectorXd::Zero(field.size());
  const double h = field.dx();
  const auto& placements = arrangement_.placements;
  std::vector<Point> local;
  local.reserve(static_cast<std::size_t>((n_ + 1) * (n_ + 1)));
  for (int j = 0; j <= n_; ++j)
    for (int i = 0; i <= n_; ++i) local.push_back({i * h, j * h});
  for (std::size_t g = 0; g < placements.size(); ++g) {
    if (placements[g].kind != GenomeKind::basic) continue;
    if (!solutions_[g]) throw ContractError("assemble: run at least one iteration first");
    const Eigen::VectorXd v = solutions_[g]->values(local);
    const int i0 = static_cast<int>(std::lround((placements[g].origin.x - field.origin().x) / h));
    const int j0 = static_cast<int>(std::lround((placements[g].origin.y - field.origin().y) / h));
    for (int j = 0; j <= n_; ++j) {
      for (int i = 0; i <= n_; ++i) {
        const auto idx = field.index(i0 + i, j0 + j);
        field.data()[idx] += v[j * (n_ + 1) + i];
        count[idx] += 1.0;
      }
    }
  }
  for (Eigen::Index k = 0; k < field.size(); ++k) {
    if (count[k] > 0.0) field.data()[k] /= count[k];
  }
  return field;
}

MosaicResult mf_predict(const GenomeArrangement& arrangement, const ScalarFunction& domain_bc,
                        const GenomeSolver& solver, const MosaicOptions& options) {
  MosaicPredictor predictor(arrangement, domain_bc, solver, options);
  ConvergenceReport report = predictor.run();
  return {predictor.assemble(), predictor.store(), std::move(report)};
}

SchwarzResult schwarz_two_genome_demo(SchwarzMode mode, const ScalarFunction& bc, const SchwarzOptions& options) {
  const DomainMask domain = DomainMask::rectangle(2, 1);
  const GenomeArrangement arrangement =
      build_arrangement(domain, mode == SchwarzMode::auxiliary ? AuxLayers::uniform(1) : AuxLayers::none());
  const NumericGenomeSolver solver;
  const FieldGrid truth = solve_dirichlet(domain, bc);

  MosaicOptions mo;
  mo.tolerance = options.tolerance;
  mo.max_iterations = options.max_iterations;
  mo.init_from_extrapolation = options.init_from_extrapolation;
  MosaicPredictor predictor(arrangement, bc, solver, mo);

  SchwarzResult result;
  for (int it = 0; it < options.max_iterations; ++it) {
    const double change = predictor.iterate();
    const double mae = compute_mae(predictor.assemble(), truth);
    result.mae.push_back(mae);
    if (mae <= options.mae_target) {
      result.iterations_to_target = it + 1;
      break;
    }
    if (change < options.tolerance) break;
  }
  result.report = predictor.report();
  result.report.converged = result.iterations_to_target > 0;
  result.report.tolerance = options.tolerance;
  return result;
}

}  // namespace mosaic
