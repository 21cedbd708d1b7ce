#include "doctest.h"

#include "mosaic/errors.hpp"
#include "mosaic/gp_boundary.hpp"
#include "mosaic/robin.hpp"

#include <cmath>
#include <random>

using namespace mosaic;

namespace {

MlpModel<double> random_network(std::mt19937_64& rng) {
  auto m = MlpModel<double>::glorot(model_preset("fc-desk"), rng());
  std::normal_distribution<double> n01;
  for (int k = 0; k < m.n_layers(); ++k) {
    for (Eigen::Index i = 0; i < m.bias(k).size(); ++i) m.bias(k)[i] = 0.3 * n01(rng);
  }
  return m;
}

MlpModel<double> constant_network(double k) {
  MlpModel<double> m(model_preset("fc-desk"));
  m.bias(m.n_layers() - 1)[0] = k;
  return m;
}

BoundaryTrace random_trace(std::mt19937_64& rng) {
  KernelSpec k;
  k.lengthscale = 1.0;
  return sample_trace(k, 32, rng());
}

// Uniform points on the perimeter, kept 1e-3 away from the corners.
std::vector<Point> edge_samples(int count, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> t(1e-3, 1.0 - 1e-3);
  std::uniform_int_distribution<int> side(0, 3);
  std::vector<Point> pts;
  for (int i = 0; i < count; ++i) {
    const double s = t(rng);
    switch (side(rng)) {
      case 0: pts.push_back({s, 0.0}); break;
      case 1: pts.push_back({1.0, s}); break;
      case 2: pts.push_back({s, 1.0}); break;
      default: pts.push_back({0.0, s}); break;
    }
  }
  return pts;
}

double smooth_g(Point p) { return std::sin(2.0 * p.x) + 0.5 * std::cos(3.0 * p.y) + p.x * p.y; }

}  // namespace

TEST_CASE("distance to the square boundary") {
  auto d = phi_sd({0.2, 0.5}, 1.0);
  CHECK(d.value == doctest::Approx(0.2));
  CHECK(d.gradient == Point{1, 0});
  d = phi_sd({0.5, 0.9}, 1.0);
  CHECK(d.value == doctest::Approx(0.1));
  CHECK(d.gradient == Point{0, -1});
  d = phi_sd({2.0, 0.5}, 2.0);
  CHECK(d.value == 0.0);
  CHECK(d.gradient == Point{-1, 0});
  CHECK_THROWS_AS(phi_sd({0.3, 0.3}, 1.0), DomainError);
  CHECK_THROWS_AS(phi_sd({0.3, 0.7 + 1e-7}, 1.0), DomainError);
  CHECK_THROWS_AS(phi_sd({0.0, 0.0}, 1.0), DomainError);
  CHECK_THROWS_AS(phi_sd({1.5, 0.5}, 1.0), DomainError);
  CHECK_NOTHROW(phi_sd({0.3, 0.3 + 1e-5}, 1.0));
}

TEST_CASE("wrapper leaves the network unchanged on the boundary") {
  std::mt19937_64 rng(4);
  const auto m = random_network(rng);
  const auto g = random_trace(rng);
  const RobinSpec spec{0.7, smooth_g};
  for (const Point p : edge_samples(20, rng)) {
    CHECK(robin_wrap(m, g, spec, p) == doctest::Approx(forward(m, g, p)).epsilon(1e-14));
  }
}

TEST_CASE("constant network with Neumann zero data") {
  std::mt19937_64 rng(5);
  const auto m = constant_network(1.75);
  const auto g = random_trace(rng);
  const RobinSpec spec{0.0, [](Point) { return 0.0; }};
  for (const Point p : {Point{0.2, 0.5}, Point{0.5, 0.5 + 1e-3}, Point{0.9, 0.1 + 1e-3}}) {
    CHECK(robin_wrap(m, g, spec, p) == doctest::Approx(1.75).epsilon(1e-15));
  }
  CHECK(verify_robin_identity(m, g, spec, edge_samples(50, rng)) == 0.0);
}

TEST_CASE("wrapper matches a hand assembly from separately evaluated factors") {
  std::mt19937_64 rng(6);
  const double h = 1e-5;
  for (int trial = 0; trial < 5; ++trial) {
    const auto m = random_network(rng);
    const auto g = random_trace(rng);
    const double c = 0.5 * trial;
    const RobinSpec spec{c, smooth_g};
    // Near the bottom edge midpoint: phi = y, n = (0, -1).
    const Point p{0.5, 0.05};
    const double n0 = forward(m, g, p);
    const double dn_dy = (forward(m, g, {p.x, p.y + h}) - forward(m, g, {p.x, p.y - h})) / (2 * h);
    const double expected = n0 + p.y * (c * n0 - dn_dy) - p.y * smooth_g(p);
    CHECK(robin_wrap(m, g, spec, p) == doctest::Approx(expected).epsilon(1e-8));
  }
}

TEST_CASE("analytic gradient of the wrapper agrees with central differences") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  const double h = 1e-5;
  int checked = 0;
  while (checked < 20) {
    const Point p{u(rng), u(rng)};
    if (std::abs(p.x - p.y) < 0.02 || std::abs(p.x + p.y - 1.0) < 0.02) continue;
    const auto m = random_network(rng);
    const auto g = random_trace(rng);
    const RobinSpec spec{1.3, smooth_g};
    const RobinValue d = robin_wrap_derivatives(m, g, spec, p);
    auto f = [&](double dx, double dy) { return robin_wrap(m, g, spec, {p.x + dx, p.y + dy}); };
    CHECK(d.u == doctest::Approx(f(0, 0)).epsilon(1e-14));
    CHECK(d.ux == doctest::Approx((f(h, 0) - f(-h, 0)) / (2 * h)).epsilon(1e-5).scale(1.0));
    CHECK(d.uy == doctest::Approx((f(0, h) - f(0, -h)) / (2 * h)).epsilon(1e-5).scale(1.0));
    ++checked;
  }
}

TEST_CASE("Robin identity holds on the boundary") {
  std::mt19937_64 rng(8);
  const auto samples = edge_samples(1000, rng);
  double worst = 0.0;
  for (int net = 0; net < 10; ++net) {
    const auto m = random_network(rng);
    const auto g = random_trace(rng);
    for (double c : {0.0, 0.5, 2.0}) {
      worst = std::max(worst, verify_robin_identity(m, g, RobinSpec{c, smooth_g}, samples));
    }
  }
  CHECK(worst <= 1e-6);
}

TEST_CASE("a flipped normal is detected") {
  std::mt19937_64 rng(9);
  const auto samples = edge_samples(200, rng);
  const auto m = random_network(rng);
  const auto g = random_trace(rng);
  const RobinSpec spec{1.0, smooth_g};
  double largest_normal_derivative = 0.0;
  for (const Point p : samples) {
    const auto d = spatial_derivatives(m, g, p);
    const auto phi = phi_sd(p, 1.0);
    largest_normal_derivative =
        std::max(largest_normal_derivative, std::abs(phi.gradient.x * d.ux + phi.gradient.y * d.uy));
  }
  const double residual = verify_robin_identity(m, g, spec, samples, true);
  CHECK(residual == doctest::Approx(2 * largest_normal_derivative).epsilon(1e-9));
  CHECK(residual > 1e-3);
}

TEST_CASE("Robin contract checks") {
  std::mt19937_64 rng(10);
  const auto m = random_network(rng);
  const auto g = random_trace(rng);
  const RobinSpec spec{1.0, smooth_g};
  const std::vector<Point> interior{{0.5, 0.2}};
  CHECK_THROWS_AS(verify_robin_identity(m, g, spec, interior), DomainError);
  const std::vector<Point> corner{{0.0, 0.0}};
  CHECK_THROWS_AS(verify_robin_identity(m, g, spec, corner), DomainError);
  CHECK_THROWS_AS(robin_wrap(m, g, RobinSpec{-1.0, smooth_g}, {0.5, 0.2}), ContractError);
  CHECK_THROWS_AS(robin_wrap(m, g, RobinSpec{1.0, {}}, {0.5, 0.2}), ContractError);
}
