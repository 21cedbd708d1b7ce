#include "mosaic/domain_spec.hpp"

#include "mosaic/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>

namespace mosaic {

namespace {

struct DirectedEdge {
  Cell from, to;
};

int turn_rank(Cell d_in, Cell d_out) {
  // Left turn first, then straight, then right.
  const int cross = d_in.x * d_out.y - d_in.y * d_out.x;
  const int dot = d_in.x * d_out.x + d_in.y * d_out.y;
  if (cross > 0) return 0;
  if (dot > 0) return 1;
  return 2;
}

}  // namespace

DomainBoundary::DomainBoundary(const DomainMask& mask, double l) : l_(l) {
  if (!(l > 0.0)) throw ContractError("DomainBoundary: edge length must be positive");
  area_ = static_cast<double>(mask.size()) * l * l;

  std::multimap<Cell, DirectedEdge> out;
  for (Cell c : mask.cells()) {
    const Cell a{c.x, c.y}, b{c.x + 1, c.y}, d{c.x + 1, c.y + 1}, e{c.x, c.y + 1};
    if (!mask.contains(c.x, c.y - 1)) out.emplace(a, DirectedEdge{a, b});
    if (!mask.contains(c.x + 1, c.y)) out.emplace(b, DirectedEdge{b, d});
    if (!mask.contains(c.x, c.y + 1)) out.emplace(d, DirectedEdge{d, e});
    if (!mask.contains(c.x - 1, c.y)) out.emplace(e, DirectedEdge{e, a});
  }

  double s = 0.0;
  while (!out.empty()) {
    // Lowest, then leftmost, remaining vertex (multimap order is (x, y), so
    // search explicitly).
    auto start_it = std::min_element(out.begin(), out.end(), [](const auto& p, const auto& q) {
      return std::tie(p.first.y, p.first.x) < std::tie(q.first.y, q.first.x);
    });
    std::vector<Cell> loop;
    DirectedEdge cur = start_it->second;
    out.erase(start_it);
    const Cell origin = cur.from;
    for (;;) {
      loop.push_back(cur.from);
      vertex_s_.emplace(cur.from, s * l);
      const int dx = cur.to.x - cur.from.x, dy = cur.to.y - cur.from.y;
      const bool vertical = dx == 0;
      const Cell low = vertical ? Cell{cur.from.x, std::min(cur.from.y, cur.to.y)}
                                : Cell{std::min(cur.from.x, cur.to.x), cur.from.y};
      edges_[{low.x, low.y, vertical ? 1 : 0}] = {s * l, vertical ? dy : dx};
      s += 1.0;
      if (cur.to == origin) break;
      auto [lo, hi] = out.equal_range(cur.to);
      if (lo == hi) throw ContractError("DomainBoundary: open boundary loop");
      const Cell din{dx, dy};
      auto best = lo;
      for (auto it = lo; it != hi; ++it) {
        const Cell dout{it->second.to.x - it->second.from.x, it->second.to.y - it->second.from.y};
        const Cell dbest{best->second.to.x - best->second.from.x, best->second.to.y - best->second.from.y};
        if (turn_rank(din, dout) < turn_rank(din, dbest)) best = it;
      }
      cur = best->second;
      out.erase(best);
    }
    loops_.push_back(std::move(loop));
  }
  perimeter_ = s * l;
}

double DomainBoundary::arclength(Point p) const {
  const double gx = p.x / l_, gy = p.y / l_;
  const double rx = std::round(gx), ry = std::round(gy);
  const double tol = 1e-9;
  const bool on_x = std::abs(gx - rx) < tol, on_y = std::abs(gy - ry) < tol;
  if (on_x && on_y) {
    auto it = vertex_s_.find(Cell{static_cast<int>(rx), static_cast<int>(ry)});
    if (it != vertex_s_.end()) return it->second;
  } else if (on_x || on_y) {
    const bool vertical = on_x;
    const int x = vertical ? static_cast<int>(rx) : static_cast<int>(std::floor(gx));
    const int y = vertical ? static_cast<int>(std::floor(gy)) : static_cast<int>(ry);
    auto it = edges_.find({x, y, vertical ? 1 : 0});
    if (it != edges_.end()) {
      const double t = vertical ? gy - y : gx - x;
      const double along = it->second.dir > 0 ? t : 1.0 - t;
      return it->second.s_start + along * l_;
    }
  }
  throw DomainError("point (" + std::to_string(p.x) + ", " + std::to_string(p.y) + ") is not on the domain boundary");
}

// ---------------------------------------------------------------------------

ScalarFunction boundary_family(const std::string& family, const DomainMask& mask, double l,
                               const std::vector<std::pair<std::string, double>>& params) {
  auto param = [&](const std::string& key, double fallback) {
    for (const auto& [k, v] : params)
      if (k == key) return v;
    return fallback;
  };
  constexpr double two_pi = 2.0 * std::numbers::pi;
  if (family == "harmonic_quadratic") {
    const double a = param("a", 0.0), b = param("b", 0.0), c = param("c", 0.0), d = param("d", 1.0),
                 e = param("e", 1.0);
    return [=](Point p) { return a + b * p.x + c * p.y + d * (p.x * p.x - p.y * p.y) + e * p.x * p.y; };
  }
  if (family == "logo_bc") {
    return [=](Point p) { return std::sin(two_pi * (p.x / 6.0 + p.y / 5.0)); };
  }
  auto boundary = std::make_shared<const DomainBoundary>(mask, l);
  if (family == "sin_perimeter") {
    const double freq = param("frequency", 1.0);
    const double per = boundary->perimeter();
    return [=](Point p) { return std::sin(two_pi * freq * boundary->arclength(p) / per); };
  }
  if (family == "paper_g1") {
    const double root_area = std::sqrt(boundary->area());
    return [=](Point p) { return std::sin(two_pi * boundary->arclength(p) / root_area); };
  }
  if (family == "paper_g2") {
    return [=](Point p) { return std::sin(two_pi * boundary->arclength(p)); };
  }
  throw ConfigError("bc.family: unknown boundary family '" + family + "'");
}

ScalarFunction boundary_from_samples(std::vector<std::pair<double, double>> samples, const DomainMask& mask,
                                     double l) {
  if (samples.empty()) throw ConfigError("bc.file: no samples");
  auto boundary = std::make_shared<const DomainBoundary>(mask, l);
  const double per = boundary->perimeter();
  for (auto& [s, v] : samples) {
    if (!std::isfinite(s) || !std::isfinite(v)) throw DataError("boundary samples must be finite");
    s = std::fmod(std::fmod(s, per) + per, per);
  }
  std::sort(samples.begin(), samples.end());
  auto table = std::make_shared<const std::vector<std::pair<double, double>>>(std::move(samples));
  return [boundary, table, per](Point p) {
    const double s = boundary->arclength(p);
    const auto& t = *table;
    auto hi = std::lower_bound(t.begin(), t.end(), std::pair<double, double>{s, -INFINITY});
    const auto& b = hi == t.end() ? t.front() : *hi;
    const auto& a = hi == t.begin() ? t.back() : *(hi - 1);
    double sa = a.first, sb = b.first;
    if (sa > s) sa -= per;
    if (sb < s) sb += per;
    if (sb - sa <= 0.0) return a.second;
    return a.second + (s - sa) / (sb - sa) * (b.second - a.second);
  };
}

std::vector<std::pair<double, double>> read_boundary_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open boundary samples " + path.string());
  std::vector<std::pair<double, double>> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    double s = 0.0, v = 0.0;
    if (!(ss >> s >> v)) {
      if (rows.empty() && line_no == 1) continue;  // header
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected 'arclength,value'");
    }
    rows.emplace_back(s, v);
  }
  return rows;
}

// ---------------------------------------------------------------------------

DomainSpec parse_domain_spec(const std::string& json_text, const std::filesystem::path& base_dir) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("domain spec: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("domain spec: expected an object");

  std::vector<Cell> cells;
  try {
    if (j.contains("cells")) {
      for (const auto& c : j.at("cells")) cells.push_back({c.at(0).get<int>(), c.at(1).get<int>()});
    } else if (j.contains("rectangle")) {
      const auto& r = j.at("rectangle");
      const int w = r.at("width").get<int>(), h = r.at("height").get<int>();
      if (w < 1 || h < 1) throw ConfigError("rectangle: width and height must be positive");
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) cells.push_back({x, y});
    } else if (j.contains("mask_rows")) {
      const auto rows = j.at("mask_rows").get<std::vector<std::string>>();
      const int n = static_cast<int>(rows.size());
      for (int r = 0; r < n; ++r) {
        for (int x = 0; x < static_cast<int>(rows[r].size()); ++x) {
          const char ch = rows[r][x];
          if (ch == '#' || ch == 'X' || ch == '1') {
            cells.push_back({x, n - 1 - r});
          } else if (ch != '.' && ch != ' ' && ch != '0') {
            throw ConfigError("mask_rows: unexpected character '" + std::string(1, ch) + "'");
          }
        }
      }
    } else {
      throw ConfigError("domain spec: one of 'cells', 'rectangle' or 'mask_rows' is required");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("domain spec mask: ") + e.what());
  }
  std::optional<DomainMask> mask;
  try {
    mask.emplace(std::move(cells));
  } catch (const ContractError& e) {
    throw ConfigError(std::string("domain spec mask: ") + e.what());
  }

  double l = 1.0;
  if (j.contains("edge_length")) {
    if (!j["edge_length"].is_number()) throw ConfigError("edge_length: expected a number");
    l = j["edge_length"].get<double>();
    if (!(l > 0.0)) throw ConfigError("edge_length: must be positive");
  }

  if (!j.contains("bc") || !j["bc"].is_object()) throw ConfigError("bc: object required");
  const auto& bc = j["bc"];
  ScalarFunction fn;
  std::string name;
  if (bc.contains("file")) {
    std::filesystem::path p = bc["file"].get<std::string>();
    if (p.is_relative()) p = base_dir / p;
    fn = boundary_from_samples(read_boundary_csv(p), *mask, l);
    name = p.string();
  } else if (bc.contains("family")) {
    name = bc["family"].get<std::string>();
    std::vector<std::pair<std::string, double>> params;
    for (const auto& [k, v] : bc.items()) {
      if (k == "family") continue;
      if (!v.is_number()) throw ConfigError("bc." + k + ": expected a number");
      params.emplace_back(k, v.get<double>());
    }
    fn = boundary_family(name, *mask, l, params);
  } else {
    throw ConfigError("bc: either 'family' or 'file' is required");
  }
  return {std::move(*mask), l, std::move(fn), std::move(name)};
}

DomainSpec load_domain_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open domain spec " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_domain_spec(ss.str(), path.parent_path());
}

}  // namespace mosaic
