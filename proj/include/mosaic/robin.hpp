#pragma once

// Exact enforcement of Robin (and Neumann) data on a square genome:
// u = N + phi (c N + n . grad N - g) with phi the distance to the boundary
// and n = -grad phi.

#include "mosaic/field.hpp"
#include "mosaic/gfnet.hpp"

namespace mosaic {

struct RobinSpec {
  /// Robin coefficient; 0 gives the Neumann condition.
  double c = 0.0;
  /// Target value of n . grad u + c u on the boundary.
  ScalarFunction g;
  double edge_length = 1.0;
};

/// Queries closer than this to a diagonal of the square are rejected.
inline constexpr double kRobinDiagonalMargin = 1e-6;

struct DistanceValue {
  double value = 0.0;
  /// grad of the distance; minus the outward normal of the nearest side.
  Point gradient;
};

/// min(x, l - x, y, l - y) and its gradient. Throws DomainError outside the
/// closed square or within the margin of a diagonal.
DistanceValue phi_sd(Point x, double l);

struct RobinValue {
  double u = 0.0;
  double ux = 0.0;
  double uy = 0.0;
};

/// The wrapped value at x, with the network conditioned on `trace`.
/// `flip_normal` builds the wrapper with n = +grad phi instead.
template <class Scalar>
double robin_wrap(const MlpModel<Scalar>& network, const BoundaryTrace& trace, const RobinSpec& spec, Point x,
                  bool flip_normal = false);

/// Value and gradient of the wrapped construction from the network's
/// analytic first and second derivatives; grad g uses central differences.
template <class Scalar>
RobinValue robin_wrap_derivatives(const MlpModel<Scalar>& network, const BoundaryTrace& trace,
                                  const RobinSpec& spec, Point x, bool flip_normal = false);

/// Max over samples of |n . grad u + c u - g| with n the outward normal.
template <class Scalar>
double verify_robin_identity(const MlpModel<Scalar>& network, const BoundaryTrace& trace, const RobinSpec& spec,
                             std::span<const Point> samples, bool flip_normal = false);

}  // namespace mosaic
