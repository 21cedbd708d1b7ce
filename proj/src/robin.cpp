#include "mosaic/robin.hpp"

#include "mosaic/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

namespace mosaic {

namespace {

std::string describe(Point x) { return "(" + std::to_string(x.x) + ", " + std::to_string(x.y) + ")"; }

constexpr double kGradientStep = 1e-6;

}  // namespace

DistanceValue phi_sd(Point x, double l) {
  const double tol = 1e-12 * l;
  if (!(x.x >= -tol && x.x <= l + tol && x.y >= -tol && x.y <= l + tol)) {
    throw DomainError("phi_sd: point " + describe(x) + " is outside the genome");
  }
  const std::array<double, 4> d{x.x, l - x.x, x.y, l - x.y};
  const std::array<Point, 4> grad{Point{1, 0}, Point{-1, 0}, Point{0, 1}, Point{0, -1}};
  std::array<int, 4> order{0, 1, 2, 3};
  std::sort(order.begin(), order.end(), [&](int a, int b) { return d[a] < d[b]; });
  if ((d[order[1]] - d[order[0]]) / std::sqrt(2.0) < kRobinDiagonalMargin) {
    throw DomainError("phi_sd: point " + describe(x) + " is on a diagonal of the genome");
  }
  return {std::max(d[order[0]], 0.0), grad[order[0]]};
}

template <class Scalar>
RobinValue robin_wrap_derivatives(const MlpModel<Scalar>& network, const BoundaryTrace& trace,
                                  const RobinSpec& spec, Point x, bool flip_normal) {
  if (!(spec.c >= 0.0)) throw ContractError("robin: coefficient c must be nonnegative");
  if (!spec.g) throw ContractError("robin: boundary data function is empty");
  const DistanceValue phi = phi_sd(x, spec.edge_length);
  const Point p = phi.gradient;
  const Point n = flip_normal ? p : Point{-p.x, -p.y};

  const SpatialDerivatives nd = spatial_derivatives(network, trace, x);
  const double g = spec.g(x);
  const double h = kGradientStep * spec.edge_length;
  const double gx = (spec.g({x.x + h, x.y}) - spec.g({x.x - h, x.y})) / (2 * h);
  const double gy = (spec.g({x.x, x.y + h}) - spec.g({x.x, x.y - h})) / (2 * h);

  const double f = spec.c * nd.u + n.x * nd.ux + n.y * nd.uy - g;
  const double fx = spec.c * nd.ux + n.x * nd.uxx + n.y * nd.uxy - gx;
  const double fy = spec.c * nd.uy + n.x * nd.uxy + n.y * nd.uyy - gy;

  RobinValue out;
  out.u = nd.u + phi.value * f;
  out.ux = nd.ux + f * p.x + phi.value * fx;
  out.uy = nd.uy + f * p.y + phi.value * fy;
  return out;
}

template <class Scalar>
double robin_wrap(const MlpModel<Scalar>& network, const BoundaryTrace& trace, const RobinSpec& spec, Point x,
                  bool flip_normal) {
  if (!(spec.c >= 0.0)) throw ContractError("robin: coefficient c must be nonnegative");
  if (!spec.g) throw ContractError("robin: boundary data function is empty");
  const DistanceValue phi = phi_sd(x, spec.edge_length);
  const Point n = flip_normal ? phi.gradient : Point{-phi.gradient.x, -phi.gradient.y};
  const SpatialDerivatives nd = spatial_derivatives(network, trace, x);
  return nd.u + phi.value * (spec.c * nd.u + n.x * nd.ux + n.y * nd.uy) - phi.value * spec.g(x);
}

template <class Scalar>
double verify_robin_identity(const MlpModel<Scalar>& network, const BoundaryTrace& trace, const RobinSpec& spec,
                             std::span<const Point> samples, bool flip_normal) {
  const double tol = 1e-9 * spec.edge_length;
  double worst = 0.0;
  for (const Point& x : samples) {
    const DistanceValue phi = phi_sd(x, spec.edge_length);
    if (phi.value > tol) {
      throw DomainError("verify_robin_identity: sample " + describe(x) + " is not on the boundary");
    }
    const RobinValue u = robin_wrap_derivatives(network, trace, spec, x, flip_normal);
    const Point n{-phi.gradient.x, -phi.gradient.y};
    const double residual = n.x * u.ux + n.y * u.uy + spec.c * u.u - spec.g(x);
    if (!std::isfinite(residual)) {
      throw NumericalError("verify_robin_identity: non-finite residual at " + describe(x));
    }
    worst = std::max(worst, std::abs(residual));
  }
  return worst;
}

#define MOSAIC_INSTANTIATE(S)                                                                              \
  template double robin_wrap(const MlpModel<S>&, const BoundaryTrace&, const RobinSpec&, Point, bool);    \
  template RobinValue robin_wrap_derivatives(const MlpModel<S>&, const BoundaryTrace&, const RobinSpec&, \
                                             Point, bool);                                                \
  template double verify_robin_identity(const MlpModel<S>&, const BoundaryTrace&, const RobinSpec&,       \
                                        std::span<const Point>, bool);
MOSAIC_INSTANTIATE(float)
MOSAIC_INSTANTIATE(double)
#undef MOSAIC_INSTANTIATE

}  // namespace mosaic
