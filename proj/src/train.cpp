#include "mosaic/train.hpp"

#include "mosaic/elliptic_fd.hpp"
#include "mosaic/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace mosaic {

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEpsilon = 1e-8;

double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// Fisher-Yates with explicit index draws, so the order does not depend on the
// standard library's shuffle.
template <class T>
void shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng() % i]);
}

Point open_genome_point(std::mt19937_64& rng, double l) {
  // Keep candidates off the boundary, where the residual is not imposed.
  auto coord = [&] { return l * (1e-6 + (1.0 - 2e-6) * unit_uniform(rng)); };
  const double x = coord();
  return {x, coord()};
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr0 > 0.0) || !(lr_min > 0.0) || !(lr_min < lr0)) throw ConfigError("train.lr: need 0 < lr_min < lr0");
  if (!(decay > 0.0 && decay < 1.0)) throw ConfigError("train.decay: must lie in (0, 1)");
  if (patience <= 0) throw ConfigError("train.patience: must be positive");
  if (!(threshold >= 0.0)) throw ConfigError("train.threshold: must be nonnegative");
  if (batch_size <= 0) throw ConfigError("train.batch_size: must be positive");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("train.val_fraction: must lie in (0, 1)");
  if (max_epochs < 0) throw ConfigError("train.max_epochs: must be nonnegative");
  if (max_residual_pairs < 0) throw ConfigError("train.max_residual_pairs: must be nonnegative");
}

PlateauSchedule::PlateauSchedule(double lr0, double decay, int patience, double threshold, double lr_min)
    : lr_(lr0), decay_(decay), patience_(patience), threshold_(threshold), lr_min_(lr_min) {}

bool PlateauSchedule::observe(double loss) {
  if (!seen_ || loss < best_ * (1.0 - threshold_)) {
    best_ = loss;
    stale_ = 0;
    seen_ = true;
    return false;
  }
  best_ = std::min(best_, loss);
  if (++stale_ < patience_) return false;
  lr_ = std::max(lr_ * decay_, lr_min_);
  stale_ = 0;
  return true;
}

std::vector<Point> uniform_collocation(int n, double l, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Point> pts(n);
  for (auto& p : pts) p = open_genome_point(rng, l);
  return pts;
}

template <class S>
std::vector<Point> resample_collocation(const MlpModel<S>& model, const Eigen::MatrixXd& traces,
                                        int n_collocation, std::uint64_t seed) {
  if (n_collocation <= 0) return {};
  std::mt19937_64 rng(seed);
  const int n_candidates = 4 * n_collocation;
  std::vector<Point> candidates(n_candidates);
  for (auto& p : candidates) p = open_genome_point(rng, model.edge_length());

  const Eigen::Index n_traces = std::min<Eigen::Index>(traces.cols(), 8);
  const Eigen::MatrixXd grad = gradient_magnitude(model, traces.leftCols(n_traces), candidates);
  const Eigen::VectorXd score = grad.colwise().mean().transpose();
  const double floor = 0.1 * score.mean();

  // Efraimidis-Spirakis: keep the n largest keys log(u) / w.
  std::vector<std::pair<double, int>> keys(n_candidates);
  for (int i = 0; i < n_candidates; ++i) {
    const double w = score[i] + floor;
    const double u = std::max(unit_uniform(rng), 1e-300);
    keys[i] = {w > 0.0 ? std::log(u) / w : std::log(u), i};
  }
  std::partial_sort(keys.begin(), keys.begin() + n_collocation, keys.end(),
                    [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
  std::vector<Point> chosen(n_collocation);
  for (int i = 0; i < n_collocation; ++i) chosen[i] = candidates[keys[i].second];
  return chosen;
}

template <class S>
Trainer<S>::Trainer(const Dataset& dataset, const ModelSpec& spec, const LossConfig& loss, const TrainConfig& config)
    : dataset_(dataset), loss_(loss), config_(config) {
  loss_.validate();
  config_.validate();
  if (dataset_.samples.empty()) throw ContractError("training needs a non-empty dataset");
  if (4 * dataset_.config.n_per_edge != spec.n_bc) {
    throw ContractError("dataset traces have " + std::to_string(4 * dataset_.config.n_per_edge) +
                        " values but the model expects " + std::to_string(spec.n_bc));
  }
  model_ = MlpModel<S>::glorot(spec, derive_seed(config_.seed, 0x6d6f64656cULL));
  best_ = model_;
  adam_m_ = MlpModel<S>::Vector::Zero(model_.n_params());
  adam_v_ = adam_m_;
  schedule_ = PlateauSchedule(config_.lr0, config_.decay, config_.patience, config_.threshold, config_.lr_min);
  rng_.seed(derive_seed(config_.seed, 0x747261696eULL));
  best_val_ = std::numeric_limits<double>::max();

  const int n = static_cast<int>(dataset_.samples.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 split_rng(derive_seed(config_.seed, 0x73706c6974ULL));
  shuffle(order, split_rng);
  if (n == 1) {
    train_ = val_ = order;
  } else {
    const int n_val = std::clamp(static_cast<int>(std::lround(n * config_.val_fraction)), 1, n - 1);
    val_.assign(order.end() - n_val, order.end());
    train_.assign(order.begin(), order.end() - n_val);
  }
  std::sort(val_.begin(), val_.end());

  std::vector<Point> val_colloc;
  if (loss_.alpha > 0.0) {
    val_colloc = uniform_collocation(loss_.n_collocation, spec.edge_length, derive_seed(config_.seed, 0x76616cULL));
  }
  std::mt19937_64 val_pairs(derive_seed(config_.seed, 0x7061697273ULL));
  val_batch_ = make_batch(val_, val_colloc, &val_pairs);
}

template <class S>
Batch Trainer<S>::make_batch(std::span<const int> samples, const std::vector<Point>& collocation,
                             std::mt19937_64* pair_rng) const {
  const auto& ds = dataset_;
  const int n_bc = 4 * ds.config.n_per_edge;
  const auto b = static_cast<int>(samples.size());
  Batch batch;
  batch.traces.resize(n_bc, b);
  const BoundaryTrace& first = ds.samples[samples[0]].trace;
  for (int i = 0; i < n_bc; ++i) batch.points.push_back(first.point(i));
  for (int t = 0; t < b; ++t) {
    const TrainingSample& s = ds.samples[samples[t]];
    batch.traces.col(t) = s.trace.values();
    for (int i = 0; i < n_bc; ++i) batch.targets.push_back({t, i, s.trace[i]});
    for (const auto& dp : s.data_points) {
      batch.targets.push_back({t, static_cast<int>(batch.points.size()), dp.u});
      batch.points.push_back({dp.x, dp.y});
    }
  }
  if (loss_.alpha > 0.0 && !collocation.empty()) {
    batch.collocation = collocation;
    const auto pc = static_cast<int>(collocation.size());
    const std::int64_t total = std::int64_t(b) * pc;
    const bool capped = model_.arch() == Architecture::fc && config_.max_residual_pairs > 0 &&
                        total > config_.max_residual_pairs;
    if (!capped) {
      for (int t = 0; t < b; ++t) {
        for (int p = 0; p < pc; ++p) batch.residual_pairs.push_back({t, p});
      }
    } else {
      std::vector<std::int64_t> ids(total);
      std::iota(ids.begin(), ids.end(), 0);
      for (int k = 0; k < config_.max_residual_pairs; ++k) {
        const auto pick = k + static_cast<std::int64_t>((*pair_rng)() % static_cast<std::uint64_t>(total - k));
        std::swap(ids[k], ids[pick]);
        batch.residual_pairs.push_back({static_cast<int>(ids[k] / pc), static_cast<int>(ids[k] % pc)});
      }
    }
  }
  return batch;
}

template <class S>
bool Trainer<S>::finished() const {
  return schedule_.finished() || (config_.max_epochs > 0 && epoch_ >= config_.max_epochs);
}

template <class S>
bool Trainer<S>::step() {
  if (finished()) return false;
  std::vector<int> order = train_;
  shuffle(order, rng_);

  std::vector<Point> collocation;
  if (loss_.alpha > 0.0 && loss_.n_collocation > 0) {
    const std::uint64_t seed = rng_();
    if (loss_.adaptive_collocation) {
      const int n_score = std::min<int>(8, static_cast<int>(order.size()));
      Eigen::MatrixXd traces(model_.n_bc(), n_score);
      for (int t = 0; t < n_score; ++t) traces.col(t) = dataset_.samples[order[t]].trace.values();
      collocation = resample_collocation(model_, traces, loss_.n_collocation, seed);
    } else {
      collocation = uniform_collocation(loss_.n_collocation, model_.edge_length(), seed);
    }
  }

  const double lr = schedule_.lr();
  double loss_sum = 0.0;
  int n_batches = 0;
  for (std::size_t start = 0; start < order.size(); start += config_.batch_size) {
    const std::size_t stop = std::min(order.size(), start + config_.batch_size);
    const Batch batch = make_batch(std::span<const int>(order).subspan(start, stop - start), collocation, &rng_);
    const auto r = loss_and_gradients(model_, batch, loss_);
    if (!std::isfinite(r.total) || !r.gradient.allFinite()) {
      throw NumericalError("non-finite loss at epoch " + std::to_string(epoch_) + ", batch " +
                           std::to_string(n_batches) + ", learning rate " + std::to_string(lr));
    }
    ++adam_t_;
    const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(adam_t_));
    const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(adam_t_));
    adam_m_ = S(kAdamBeta1) * adam_m_ + S(1.0 - kAdamBeta1) * r.gradient;
    adam_v_ = S(kAdamBeta2) * adam_v_ + S(1.0 - kAdamBeta2) * r.gradient.cwiseAbs2();
    model_.params().array() -= S(lr / c1) * adam_m_.array() / ((adam_v_.array() / S(c2)).sqrt() + S(kAdamEpsilon));
    loss_sum += r.total;
    ++n_batches;
  }

  const double val = loss_and_gradients(model_, val_batch_, loss_, false).total;
  if (!std::isfinite(val)) {
    throw NumericalError("non-finite validation loss at epoch " + std::to_string(epoch_) + ", learning rate " +
                         std::to_string(lr));
  }
  if (val < best_val_) {
    best_val_ = val;
    best_ = model_;
    best_epoch_ = epoch_;
  }
  schedule_.observe(val);
  history_.push_back({epoch_, loss_sum / n_batches, val, lr});
  ++epoch_;
  return !finished();
}

template <class S>
void Trainer<S>::run(const std::function<void(const EpochRecord&)>& on_epoch) {
  while (!finished()) {
    step();
    if (on_epoch) on_epoch(history_.back());
  }
}

template <class S>
double Trainer<S>::train_mae() const {
  return dataset_mae(best_, dataset_, train_);
}

template <class S>
void Trainer<S>::save_state(const std::filesystem::path& dir) const {
  checkpoint_save(model_, dir / "current");
  checkpoint_save(best_, dir / "best");
  std::ostringstream rng_text;
  rng_text << rng_;
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& r : history_) hist.push_back({r.epoch, r.train_loss, r.val_loss, r.lr});
  const nlohmann::json state = {
      {"epoch", epoch_},         {"best_epoch", best_epoch_},     {"best_val", best_val_},
      {"adam_t", adam_t_},       {"lr", schedule_.lr()},          {"schedule_best", schedule_.best()},
      {"schedule_stale", schedule_.stale_epochs()},               {"rng", rng_text.str()},
      {"history", hist},
  };
  std::ofstream(dir / "state.json") << state.dump() << '\n';
  std::ofstream out(dir / "adam.bin", std::ios::binary);
  out.write(reinterpret_cast<const char*>(adam_m_.data()), static_cast<std::streamsize>(adam_m_.size() * sizeof(S)));
  out.write(reinterpret_cast<const char*>(adam_v_.data()), static_cast<std::streamsize>(adam_v_.size() * sizeof(S)));
  if (!out) throw IoError("cannot write optimizer state in " + dir.string());
}

template <class S>
void Trainer<S>::load_state(const std::filesystem::path& dir) {
  auto current = checkpoint_load<S>(dir / "current");
  auto best = checkpoint_load<S>(dir / "best");
  if (current.n_params() != model_.n_params()) throw FormatError("resume state does not match the model");
  std::ifstream in(dir / "state.json");
  if (!in) throw IoError("cannot open " + (dir / "state.json").string());
  try {
    const auto s = nlohmann::json::parse(in);
    epoch_ = s.at("epoch");
    best_epoch_ = s.at("best_epoch");
    best_val_ = s.at("best_val");
    adam_t_ = s.at("adam_t");
    schedule_.restore(s.at("lr"), s.at("schedule_best"), s.at("schedule_stale"));
    std::istringstream rng_text(s.at("rng").get<std::string>());
    rng_text >> rng_;
    history_.clear();
    for (const auto& r : s.at("history")) history_.push_back({r.at(0), r.at(1), r.at(2), r.at(3)});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad training state in " + dir.string() + ": " + e.what());
  }
  std::ifstream bin(dir / "adam.bin", std::ios::binary);
  if (!bin) throw IoError("cannot open " + (dir / "adam.bin").string());
  bin.read(reinterpret_cast<char*>(adam_m_.data()), static_cast<std::streamsize>(adam_m_.size() * sizeof(S)));
  bin.read(reinterpret_cast<char*>(adam_v_.data()), static_cast<std::streamsize>(adam_v_.size() * sizeof(S)));
  if (!bin) throw FormatError("truncated optimizer state in " + dir.string());
  model_ = std::move(current);
  best_ = std::move(best);
}

template <class S>
double dataset_mae(const MlpModel<S>& model, const Dataset& dataset, std::span<const int> samples) {
  double sum = 0.0;
  std::int64_t count = 0;
  for (int idx : samples) {
    const TrainingSample& s = dataset.samples[idx];
    std::vector<Point> pts;
    std::vector<double> truth;
    for (int i = 0; i < s.trace.size(); ++i) {
      pts.push_back(s.trace.point(i));
      truth.push_back(s.trace[i]);
    }
    for (const auto& dp : s.data_points) {
      pts.push_back({dp.x, dp.y});
      truth.push_back(dp.u);
    }
    const Eigen::VectorXd pred = forward_batch(model, s.trace, pts);
    for (std::size_t k = 0; k < pts.size(); ++k) sum += std::abs(pred[k] - truth[k]);
    count += static_cast<std::int64_t>(pts.size());
  }
  return count > 0 ? sum / static_cast<double>(count) : 0.0;
}

template <class S>
GenomeMetrics evaluate_model(const MlpModel<S>& model, const Dataset& dataset) {
  const int n = dataset.config.n_per_edge;
  const double l = dataset.config.edge_length;
  const NumericGenomeSolver solver(n, l);
  std::vector<Point> vertices, interior;
  for (int j = 0; j <= n; ++j) {
    for (int i = 0; i <= n; ++i) {
      const Point p{i * l / n, j * l / n};
      vertices.push_back(p);
      if (i > 0 && i < n && j > 0 && j < n) interior.push_back(p);
    }
  }
  double abs_sum = 0.0, lap_sum = 0.0;
  for (const auto& s : dataset.samples) {
    const FieldGrid truth = solver.solve_field(s.trace);
    abs_sum += (forward_batch(model, s.trace, vertices) - truth.data()).cwiseAbs().sum();
    for (const auto& d : spatial_derivatives_batch(model, s.trace, interior, 2)) lap_sum += std::abs(d.laplacian());
  }
  const double n_samples = static_cast<double>(std::max<std::size_t>(dataset.samples.size(), 1));
  return {abs_sum / (n_samples * static_cast<double>(vertices.size())),
          lap_sum / (n_samples * static_cast<double>(interior.size()))};
}

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,train_loss,val_loss,lr\n";
  out.precision(17);
  for (const auto& r : history) out << r.epoch << ',' << r.train_loss << ',' << r.val_loss << ',' << r.lr << '\n';
}

template class Trainer<float>;
template class Trainer<double>;
template std::vector<Point> resample_collocation(const MlpModel<float>&, const Eigen::MatrixXd&, int, std::uint64_t);
template std::vector<Point> resample_collocation(const MlpModel<double>&, const Eigen::MatrixXd&, int, std::uint64_t);
template double dataset_mae(const MlpModel<float>&, const Dataset&, std::span<const int>);
template double dataset_mae(const MlpModel<double>&, const Dataset&, std::span<const int>);
template GenomeMetrics evaluate_model(const MlpModel<float>&, const Dataset&);
template GenomeMetrics evaluate_model(const MlpModel<double>&, const Dataset&);

}  // namespace mosaic
