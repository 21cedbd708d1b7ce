#include "mosaic/field.hpp"

#include "mosaic/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <queue>
#include <sstream>
#include <string>
#include <tuple>

namespace mosaic {

Point perimeter_to_point(double s, double l) {
  if (!(l > 0.0)) throw DomainError("perimeter_to_point: edge length must be positive");
  if (!(s >= 0.0 && s < 4.0 * l)) {
    throw DomainError("perimeter_to_point: arclength " + std::to_string(s) + " outside [0, " +
                      std::to_string(4.0 * l) + ")");
  }
  if (s < l) return {s, 0.0};
  if (s < 2.0 * l) return {l, s - l};
  if (s < 3.0 * l) return {3.0 * l - s, l};
  return {0.0, 4.0 * l - s};
}

double point_to_perimeter(Point p, double l, double tol) {
  const bool in_x = p.x >= -tol && p.x <= l + tol;
  const bool in_y = p.y >= -tol && p.y <= l + tol;
  if (in_x && in_y) {
    // Corners resolve to the edge that starts at them.
    if (std::abs(p.y) <= tol && p.x < l - tol) return std::max(p.x, 0.0);
    if (std::abs(p.x - l) <= tol && p.y < l - tol) return l + std::max(p.y, 0.0);
    if (std::abs(p.y - l) <= tol && p.x > tol) return 3.0 * l - std::min(p.x, l);
    if (std::abs(p.x) <= tol && p.y > tol) return 4.0 * l - std::min(p.y, l);
  }
  throw DomainError("point_to_perimeter: point is not on the genome perimeter");
}

BoundaryTrace::BoundaryTrace(Eigen::VectorXd values, double edge_length)
    : values_(std::move(values)), edge_length_(edge_length) {
  if (values_.size() == 0 || values_.size() % 4 != 0) {
    throw ContractError("BoundaryTrace: length must be a positive multiple of 4, got " +
                        std::to_string(values_.size()));
  }
  if (!(edge_length_ > 0.0)) throw ContractError("BoundaryTrace: edge length must be positive");
  for (Eigen::Index i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i])) {
      throw DataError("BoundaryTrace: non-finite value at index " + std::to_string(i));
    }
  }
}

double BoundaryTrace::arclength(int i) const { return i * (4.0 * edge_length_ / size()); }

Point BoundaryTrace::point(int i) const {
  // Exact arithmetic on the integer index keeps sample points on grid vertices.
  const int n = n_per_edge();
  const double h = edge_length_ / n;
  const int edge = i / n;
  const int k = i % n;
  switch (edge) {
    case 0: return {k * h, 0.0};
    case 1: return {edge_length_, k * h};
    case 2: return {edge_length_ - k * h, edge_length_};
    default: return {0.0, edge_length_ - k * h};
  }
}

BoundaryTrace trace_from_function(const ScalarFunction& g, double l, int n_per_edge) {
  if (n_per_edge <= 0) throw ContractError("trace_from_function: n_per_edge must be positive");
  Eigen::VectorXd values(4 * n_per_edge);
  BoundaryTrace layout(Eigen::VectorXd::Zero(4 * n_per_edge), l);
  for (int i = 0; i < values.size(); ++i) {
    values[i] = g(layout.point(i));
    if (!std::isfinite(values[i])) {
      throw DataError("trace_from_function: non-finite boundary value at index " +
                      std::to_string(i));
    }
  }
  return BoundaryTrace(std::move(values), l);
}

// ---------------------------------------------------------------------------

FieldGrid::FieldGrid(int nx, int ny, Point origin, double dx, double dy)
    : FieldGrid(nx, ny, origin, dx, dy, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(nx) * ny)) {}

FieldGrid::FieldGrid(int nx, int ny, Point origin, double dx, double dy, Eigen::VectorXd data,
                     std::vector<std::uint8_t> mask)
    : nx_(nx), ny_(ny), origin_(origin), dx_(dx), dy_(dy), data_(std::move(data)),
      mask_(std::move(mask)) {
  if (nx_ <= 0 || ny_ <= 0) throw ContractError("FieldGrid: vertex counts must be positive");
  if (!(dx_ > 0.0) || !(dy_ > 0.0)) throw ContractError("FieldGrid: spacing must be positive");
  const auto n = static_cast<Eigen::Index>(nx_) * ny_;
  if (data_.size() != n) throw ContractError("FieldGrid: data length must equal nx*ny");
  if (!mask_.empty() && static_cast<Eigen::Index>(mask_.size()) != n) {
    throw ContractError("FieldGrid: mask length must equal nx*ny");
  }
}

FieldGrid FieldGrid::sample(int nx, int ny, Point origin, double dx, double dy,
                            const ScalarFunction& f) {
  FieldGrid grid(nx, ny, origin, dx, dy);
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) grid(i, j) = f(grid.position(i, j));
  }
  return grid;
}

Eigen::Index FieldGrid::active_count() const {
  if (mask_.empty()) return data_.size();
  return std::count_if(mask_.begin(), mask_.end(), [](std::uint8_t m) { return m != 0; });
}

bool FieldGrid::same_layout(const FieldGrid& other) const {
  constexpr double tol = 1e-12;
  auto close = [](double a, double b) { return std::abs(a - b) <= tol * (1.0 + std::abs(a)); };
  return nx_ == other.nx_ && ny_ == other.ny_ && close(origin_.x, other.origin_.x) &&
         close(origin_.y, other.origin_.y) && close(dx_, other.dx_) && close(dy_, other.dy_);
}

bool FieldGrid::all_finite() const { return data_.allFinite(); }

// ---------------------------------------------------------------------------

DomainMask::DomainMask(std::vector<Cell> cells) : cells_(std::move(cells)) {
  if (cells_.empty()) throw ContractError("DomainMask: at least one cell is required");
  std::sort(cells_.begin(), cells_.end(), [](Cell a, Cell b) {
    return std::tie(a.y, a.x) < std::tie(b.y, b.x);
  });
  if (std::adjacent_find(cells_.begin(), cells_.end()) != cells_.end()) {
    throw ContractError("DomainMask: duplicate cell");
  }
  int max_x = cells_.front().x, max_y = cells_.front().y;
  min_x_ = max_x;
  min_y_ = max_y;
  for (const Cell& c : cells_) {
    min_x_ = std::min(min_x_, c.x);
    min_y_ = std::min(min_y_, c.y);
    max_x = std::max(max_x, c.x);
    max_y = std::max(max_y, c.y);
  }
  width_ = max_x - min_x_ + 1;
  height_ = max_y - min_y_ + 1;
  occupancy_.assign(static_cast<std::size_t>(width_) * height_, 0);
  for (const Cell& c : cells_) {
    occupancy_[static_cast<std::size_t>(c.y - min_y_) * width_ + (c.x - min_x_)] = 1;
  }

  // Edge connectivity by flood fill.
  std::vector<std::uint8_t> seen(occupancy_.size(), 0);
  std::queue<Cell> frontier;
  frontier.push(cells_.front());
  seen[static_cast<std::size_t>(cells_.front().y - min_y_) * width_ + (cells_.front().x - min_x_)] = 1;
  std::size_t reached = 0;
  while (!frontier.empty()) {
    const Cell c = frontier.front();
    frontier.pop();
    ++reached;
    const Cell nbrs[] = {{c.x - 1, c.y}, {c.x + 1, c.y}, {c.x, c.y - 1}, {c.x, c.y + 1}};
    for (const Cell& n : nbrs) {
      if (!contains(n)) continue;
      auto& s = seen[static_cast<std::size_t>(n.y - min_y_) * width_ + (n.x - min_x_)];
      if (s) continue;
      s = 1;
      frontier.push(n);
    }
  }
  if (reached != cells_.size()) throw ContractError("DomainMask: cells are not edge-connected");
}

DomainMask DomainMask::rectangle(int width, int height) {
  if (width <= 0 || height <= 0) throw ContractError("DomainMask::rectangle: empty rectangle");
  std::vector<Cell> cells;
  cells.reserve(static_cast<std::size_t>(width) * height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) cells.push_back({x, y});
  }
  return DomainMask(std::move(cells));
}

bool DomainMask::contains(int gx, int gy) const {
  const int i = gx - min_x_;
  const int j = gy - min_y_;
  if (i < 0 || j < 0 || i >= width_ || j >= height_) return false;
  return occupancy_[static_cast<std::size_t>(j) * width_ + i] != 0;
}

bool DomainMask::covers_square(double x0, double y0, double side) const {
  constexpr double eps = 1e-9;
  const int cx0 = static_cast<int>(std::floor(x0 + eps));
  const int cy0 = static_cast<int>(std::floor(y0 + eps));
  const int cx1 = static_cast<int>(std::ceil(x0 + side - eps)) - 1;
  const int cy1 = static_cast<int>(std::ceil(y0 + side - eps)) - 1;
  for (int cy = cy0; cy <= cy1; ++cy) {
    for (int cx = cx0; cx <= cx1; ++cx) {
      if (!contains(cx, cy)) return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------

double compute_mae(const FieldGrid& pred, const FieldGrid& truth) {
  if (!pred.same_layout(truth)) throw ContractError("compute_mae: field layouts differ");
  double sum = 0.0;
  Eigen::Index n = 0;
  for (int j = 0; j < truth.ny(); ++j) {
    for (int i = 0; i < truth.nx(); ++i) {
      if (!truth.active(i, j) || !pred.active(i, j)) continue;
      sum += std::abs(pred(i, j) - truth(i, j));
      ++n;
    }
  }
  if (n == 0) throw ContractError("compute_mae: no common active vertices");
  return sum / static_cast<double>(n);
}

double compute_mar_fd(const FieldGrid& field) {
  if (field.nx() < 3 || field.ny() < 3) {
    throw ContractError("compute_mar_fd: grid must have at least 3x3 vertices");
  }
  const double ix2 = 1.0 / (field.dx() * field.dx());
  const double iy2 = 1.0 / (field.dy() * field.dy());
  double sum = 0.0;
  Eigen::Index n = 0;
  for (int j = 1; j + 1 < field.ny(); ++j) {
    for (int i = 1; i + 1 < field.nx(); ++i) {
      if (!field.active(i, j) || !field.active(i - 1, j) || !field.active(i + 1, j) ||
          !field.active(i, j - 1) || !field.active(i, j + 1)) {
        continue;
      }
      const double c = field(i, j);
      const double lap = (field(i - 1, j) - 2.0 * c + field(i + 1, j)) * ix2 +
                         (field(i, j - 1) - 2.0 * c + field(i, j + 1)) * iy2;
      sum += std::abs(lap);
      ++n;
    }
  }
  if (n == 0) throw ContractError("compute_mar_fd: field has no interior vertices");
  return sum / static_cast<double>(n);
}

void write_field_csv(const std::filesystem::path& path, const FieldGrid& field) {
  if (!field.all_finite()) throw DataError("write_field_csv: field contains non-finite values");
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << std::setprecision(17);
  out << field.nx() << ',' << field.ny() << ',' << field.origin().x << ',' << field.origin().y
      << ',' << field.dx() << ',' << field.dy() << '\n';
  for (int j = 0; j < field.ny(); ++j) {
    for (int i = 0; i < field.nx(); ++i) {
      if (i) out << ',';
      out << field(i, j);
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

namespace {

std::vector<double> split_numbers(const std::string& line, const std::string& where) {
  std::vector<double> values;
  std::stringstream ss(line);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      values.push_back(std::stod(item, &used));
    } catch (const std::exception&) {
      throw FormatError(where + ": cannot parse '" + item + "'");
    }
  }
  return values;
}

}  // namespace

FieldGrid read_field_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": missing header");
  const auto header = split_numbers(line, path.string());
  if (header.size() != 6) throw FormatError(path.string() + ": header must have 6 fields");
  const int nx = static_cast<int>(header[0]);
  const int ny = static_cast<int>(header[1]);
  if (nx <= 0 || ny <= 0) throw FormatError(path.string() + ": bad grid size");
  Eigen::VectorXd data(static_cast<Eigen::Index>(nx) * ny);
  for (int j = 0; j < ny; ++j) {
    if (!std::getline(in, line)) throw FormatError(path.string() + ": too few rows");
    const auto row = split_numbers(line, path.string());
    if (static_cast<int>(row.size()) != nx) throw FormatError(path.string() + ": ragged row");
    for (int i = 0; i < nx; ++i) data[static_cast<Eigen::Index>(j) * nx + i] = row[i];
  }
  return FieldGrid(nx, ny, {header[2], header[3]}, header[4], header[5], std::move(data));
}

}  // namespace mosaic
