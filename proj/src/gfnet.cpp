#include "mosaic/gfnet.hpp"

#include "mosaic/errors.hpp"

#include <array>
#include <cmath>
#include <random>

namespace mosaic {

namespace {

constexpr double kBcEpsilon = 1e-10;

// Jet channels: value, first and second derivatives in x and y, mixed.
enum Channel { V, X, Y, XX, YY, XY, kChannels };

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

template <class S>
using Jets = std::array<Mat<S>, kChannels>;

std::vector<int> active_channels(int order, bool mixed) {
  if (order == 0) return {V};
  if (order == 1) return {V, X, Y};
  if (mixed) return {V, X, Y, XX, YY, XY};
  return {V, X, Y, XX, YY};
}

// Forward state of the tanh layers for one set of input columns.
template <class S>
struct Pass {
  int order = 0;
  bool mixed = false;
  std::vector<int> channels;
  std::vector<Jets<S>> h;  // h[0] is the normalized input, h[k+1] the output of layer k
  std::vector<Jets<S>> a;
  std::vector<Mat<S>> t1, t2;
  std::vector<int> col_trace;  // FC: trace column feeding each input column
  Mat<S> traces;               // FC: n_bc x B
};

template <class S>
int tanh_layers(const MlpModel<S>& m) {
  return m.arch() == Architecture::fc ? m.n_layers() - 1 : m.n_layers();
}

template <class S>
Pass<S> run_trunk(const MlpModel<S>& m, std::span<const Point> points, int order, bool mixed,
                  const Mat<S>& traces, std::vector<int> col_trace) {
  Pass<S> pass;
  pass.order = order;
  pass.mixed = mixed;
  pass.channels = active_channels(order, mixed);
  pass.col_trace = std::move(col_trace);
  pass.traces = traces;
  const auto p = static_cast<Eigen::Index>(points.size());
  const S scale = S(2.0 / m.edge_length());
  const int layers = tanh_layers(m);
  const bool fc = m.arch() == Architecture::fc;

  pass.h.resize(layers + 1);
  pass.a.resize(layers);
  pass.t1.resize(layers);
  pass.t2.resize(layers);

  Jets<S>& in = pass.h[0];
  for (int c : pass.channels) in[c] = Mat<S>::Zero(2, p);
  for (Eigen::Index j = 0; j < p; ++j) {
    in[V](0, j) = scale * S(points[j].x) - S(1);
    in[V](1, j) = scale * S(points[j].y) - S(1);
  }
  if (order >= 1) {
    in[X].row(0).setConstant(scale);
    in[Y].row(1).setConstant(scale);
  }

  for (int k = 0; k < layers; ++k) {
    const auto w_full = m.weight(k);
    const auto w = (k == 0 && fc) ? w_full.rightCols(2) : w_full.middleCols(0, w_full.cols());
    Jets<S>& a = pass.a[k];
    const Jets<S>& hp = pass.h[k];
    for (int c : pass.channels) a[c].noalias() = w * hp[c];
    a[V].colwise() += m.bias(k);
    if (k == 0 && fc) {
      const Mat<S> cg = w_full.leftCols(m.n_bc()) * traces;
      for (Eigen::Index j = 0; j < p; ++j) a[V].col(j) += cg.col(pass.col_trace[j]);
    }

    Jets<S>& h = pass.h[k + 1];
    h[V] = a[V].array().tanh().matrix();
    if (order >= 1) {
      pass.t1[k] = (S(1) - h[V].array().square()).matrix();
      const auto t1 = pass.t1[k].array();
      h[X] = (t1 * a[X].array()).matrix();
      h[Y] = (t1 * a[Y].array()).matrix();
      if (order >= 2) {
        pass.t2[k] = (S(-2) * h[V].array() * t1).matrix();
        const auto t2 = pass.t2[k].array();
        h[XX] = (t1 * a[XX].array() + t2 * a[X].array().square()).matrix();
        h[YY] = (t1 * a[YY].array() + t2 * a[Y].array().square()).matrix();
        if (mixed) h[XY] = (t1 * a[XY].array() + t2 * a[X].array() * a[Y].array()).matrix();
      }
    } else {
      pass.t1[k] = (S(1) - h[V].array().square()).matrix();
    }
  }
  return pass;
}

// Accumulates parameter gradients given adjoints of the last tanh layer's
// output channels. The mixed channel is never differentiated.
template <class S>
void backprop_trunk(const MlpModel<S>& m, const Pass<S>& pass, Jets<S> hbar,
                    typename MlpModel<S>::Vector& grad) {
  const int layers = tanh_layers(m);
  const bool fc = m.arch() == Architecture::fc;
  const int order = pass.order;
  for (int k = layers - 1; k >= 0; --k) {
    const auto& a = pass.a[k];
    const auto t = pass.h[k + 1][V].array();
    const auto t1 = pass.t1[k].array();
    Jets<S> abar;
    if (order == 0) {
      abar[V] = (hbar[V].array() * t1).matrix();
    } else if (order == 1) {
      const Mat<S> t2 = (S(-2) * t * t1).matrix();
      abar[V] = (hbar[V].array() * t1 + t2.array() * (hbar[X].array() * a[X].array() +
                                                       hbar[Y].array() * a[Y].array()))
                    .matrix();
      abar[X] = (hbar[X].array() * t1).matrix();
      abar[Y] = (hbar[Y].array() * t1).matrix();
    } else {
      const auto t2 = pass.t2[k].array();
      const Mat<S> t3 = (S(-2) * (t1.square() + t * t2)).matrix();
      const auto ax = a[X].array(), ay = a[Y].array();
      abar[V] = (hbar[V].array() * t1 + t2 * (hbar[X].array() * ax + hbar[Y].array() * ay) +
                 hbar[XX].array() * (t3.array() * ax.square() + t2 * a[XX].array()) +
                 hbar[YY].array() * (t3.array() * ay.square() + t2 * a[YY].array()))
                    .matrix();
      abar[X] = (hbar[X].array() * t1 + S(2) * hbar[XX].array() * t2 * ax).matrix();
      abar[Y] = (hbar[Y].array() * t1 + S(2) * hbar[YY].array() * t2 * ay).matrix();
      abar[XX] = (hbar[XX].array() * t1).matrix();
      abar[YY] = (hbar[YY].array() * t1).matrix();
    }

    const int in = m.in_size(k), out = m.out_size(k);
    typename MlpModel<S>::WeightMap wbar(grad.data() + m.weight_offset(k), out, in);
    typename MlpModel<S>::BiasMap bbar(grad.data() + m.bias_offset(k), out);
    bbar += abar[V].rowwise().sum();
    const auto& hp = pass.h[k];
    const int n_grad_channels = order == 0 ? 1 : (order == 1 ? 3 : 5);
    if (k == 0 && fc) {
      // Input channels beyond the first derivatives are identically zero.
      for (int c = 0; c < std::min(n_grad_channels, 3); ++c) wbar.rightCols(2).noalias() += abar[c] * hp[c].transpose();
      Mat<S> per_trace = Mat<S>::Zero(out, pass.traces.cols());
      for (Eigen::Index j = 0; j < abar[V].cols(); ++j) per_trace.col(pass.col_trace[j]) += abar[V].col(j);
      wbar.leftCols(m.n_bc()).noalias() += per_trace * pass.traces.transpose();
    } else {
      const int used = k == 0 ? std::min(n_grad_channels, 3) : n_grad_channels;
      for (int c = 0; c < used; ++c) wbar.noalias() += abar[c] * hp[c].transpose();
    }
    if (k > 0) {
      const auto w = m.weight(k);
      for (int c = 0; c < n_grad_channels; ++c) hbar[c].noalias() = w.transpose() * abar[c];
    }
  }
}

template <class S>
Mat<S> trace_matrix(const MlpModel<S>& m, const Eigen::MatrixXd& traces) {
  if (traces.rows() != m.n_bc()) {
    throw ContractError("trace length " + std::to_string(traces.rows()) + " does not match model input " +
                        std::to_string(m.n_bc()));
  }
  return traces.cast<S>();
}

void check_genome_point(Point p, double l) {
  const double tol = 1e-9 * l;
  if (p.x < -tol || p.x > l + tol || p.y < -tol || p.y > l + tol) {
    throw DomainError("point (" + std::to_string(p.x) + ", " + std::to_string(p.y) + ") lies outside the genome");
  }
}

// Jets of the network output N (FC: linear read-out; LPFC: g . h) for a single
// trace, one row per point, before the exact-BC wrapper.
template <class S>
std::vector<SpatialDerivatives> raw_derivatives(const MlpModel<S>& m, const BoundaryTrace& g,
                                                std::span<const Point> points, int order) {
  const Mat<S> traces = trace_matrix(m, g.values());
  const Pass<S> pass = run_trunk(m, points, order, order >= 2, traces,
                                 std::vector<int>(points.size(), 0));
  const auto& h = pass.h.back();
  std::vector<SpatialDerivatives> out(points.size());
  auto read = [&](int c, auto setter) {
    if (h[c].size() == 0) return;
    Eigen::Matrix<S, 1, Eigen::Dynamic> row;
    if (m.arch() == Architecture::fc) {
      const int last = m.n_layers() - 1;
      row = m.weight(last) * h[c];
      if (c == V) row.array() += m.bias(last)(0);
    } else {
      row = traces.col(0).transpose() * h[c];
    }
    for (std::size_t j = 0; j < points.size(); ++j) setter(out[j], static_cast<double>(row(j)));
  };
  read(V, [](SpatialDerivatives& d, double v) { d.u = v; });
  if (order >= 1) {
    read(X, [](SpatialDerivatives& d, double v) { d.ux = v; });
    read(Y, [](SpatialDerivatives& d, double v) { d.uy = v; });
  }
  if (order >= 2) {
    read(XX, [](SpatialDerivatives& d, double v) { d.uxx = v; });
    read(YY, [](SpatialDerivatives& d, double v) { d.uyy = v; });
    read(XY, [](SpatialDerivatives& d, double v) { d.uxy = v; });
  }
  return out;
}

SpatialDerivatives wrap_exact_bc(const SpatialDerivatives& n, const SpatialDerivatives& gx,
                                 const SpatialDerivatives& f) {
  SpatialDerivatives u;
  u.u = gx.u + f.u * n.u;
  u.ux = gx.ux + f.ux * n.u + f.u * n.ux;
  u.uy = gx.uy + f.uy * n.u + f.u * n.uy;
  u.uxx = gx.uxx + f.uxx * n.u + 2.0 * f.ux * n.ux + f.u * n.uxx;
  u.uyy = gx.uyy + f.uyy * n.u + 2.0 * f.uy * n.uy + f.u * n.uyy;
  u.uxy = gx.uxy + f.uxy * n.u + f.ux * n.uy + f.uy * n.ux + f.u * n.uxy;
  return u;
}

std::uint64_t next_bits(std::mt19937_64& rng) { return rng() >> 11; }

}  // namespace

const char* to_string(Architecture arch) { return arch == Architecture::fc ? "fc" : "lpfc"; }

Architecture parse_architecture(const std::string& name) {
  if (name == "fc") return Architecture::fc;
  if (name == "lpfc") return Architecture::lpfc;
  throw ConfigError("arch: unknown architecture '" + name + "' (expected fc or lpfc)");
}

void ModelSpec::validate() const {
  if (n_bc <= 0 || n_bc % 4 != 0) throw ContractError("n_bc must be a positive multiple of 4");
  if (!(edge_length > 0.0)) throw ContractError("edge_length must be positive");
  if (hidden.empty()) throw ContractError("model needs at least one hidden layer");
  for (int w : hidden) {
    if (w <= 0) throw ContractError("hidden widths must be positive");
  }
  if (arch == Architecture::lpfc && hidden.back() != n_bc) {
    throw ContractError("LPFC last hidden width must equal n_bc (" + std::to_string(n_bc) + ")");
  }
  if (exact_bc && arch != Architecture::fc) throw ContractError("exact_bc requires the FC architecture");
}

std::vector<int> ModelSpec::layer_sizes() const {
  std::vector<int> sizes;
  sizes.push_back(arch == Architecture::fc ? n_bc + 2 : 2);
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  if (arch == Architecture::fc) sizes.push_back(1);
  return sizes;
}

ModelSpec model_preset(const std::string& name) {
  ModelSpec spec;
  if (name == "fc") {
    spec.arch = Architecture::fc;
    spec.hidden = {128, 128, 96, 96, 64, 64, 32, 32};
  } else if (name == "fc-bc") {
    spec.arch = Architecture::fc;
    spec.exact_bc = true;
    spec.hidden = {128, 128, 96, 96, 64, 64, 32, 32};
  } else if (name == "lpfc") {
    spec.hidden = {32, 32, 64, 64, 96, 96, 128, 128};
  } else if (name == "lpfc-deep") {
    spec.hidden = {32, 32, 64, 64, 96, 96, 96, 96, 96, 128, 128, 128, 128, 128};
  } else if (name == "fc-desk") {
    spec.arch = Architecture::fc;
    spec.hidden = {64, 64, 48, 48, 32, 32, 16, 16};
  } else if (name == "lpfc-desk") {
    spec.hidden = {16, 16, 32, 32, 48, 48, 64, 128};
  } else {
    throw ConfigError("preset: unknown model preset '" + name + "'");
  }
  return spec;
}

template <class S>
MlpModel<S>::MlpModel(ModelSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  sizes_ = spec_.layer_sizes();
  Eigen::Index offset = 0;
  for (std::size_t k = 0; k + 1 < sizes_.size(); ++k) {
    offsets_.push_back(offset);
    offset += Eigen::Index(sizes_[k]) * sizes_[k + 1] + sizes_[k + 1];
  }
  params_ = Vector::Zero(offset);
}

template <class S>
MlpModel<S> MlpModel<S>::glorot(ModelSpec spec, std::uint64_t seed) {
  MlpModel model(std::move(spec));
  std::mt19937_64 rng(seed);
  for (int k = 0; k < model.n_layers(); ++k) {
    const double limit = std::sqrt(6.0 / (model.in_size(k) + model.out_size(k)));
    auto w = model.weight(k);
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) {
        const double u = static_cast<double>(next_bits(rng)) * 0x1.0p-53;
        w(i, j) = S((2.0 * u - 1.0) * limit);
      }
    }
  }
  return model;
}

double extrapolate_bc(const BoundaryTrace& g, Point x) {
  double num = 0.0, den = 0.0;
  for (int i = 0; i < g.size(); ++i) {
    const Point b = g.point(i);
    const double r = std::hypot(x.x - b.x, x.y - b.y) + kBcEpsilon;
    const double w = 1.0 / (r * r);
    num += w * g[i];
    den += w;
  }
  return num / den;
}

SpatialDerivatives extrapolate_bc_derivatives(const BoundaryTrace& g, Point x) {
  // G = N / D with N = sum w_i g_i, D = sum w_i and w_i = (d_i + eps)^-2.
  SpatialDerivatives n, d;
  for (int i = 0; i < g.size(); ++i) {
    const Point b = g.point(i);
    const double dx = x.x - b.x, dy = x.y - b.y;
    const double dist = std::hypot(dx, dy);
    const double r = dist + kBcEpsilon;
    SpatialDerivatives w;
    w.u = 1.0 / (r * r);
    if (dist > 0.0) {
      const double r3 = w.u / r, r4 = r3 / r;
      const double d_x = dx / dist, d_y = dy / dist;
      const double d3 = dist * dist * dist;
      const double d_xx = dy * dy / d3, d_yy = dx * dx / d3, d_xy = -dx * dy / d3;
      w.ux = -2.0 * r3 * d_x;
      w.uy = -2.0 * r3 * d_y;
      w.uxx = 6.0 * r4 * d_x * d_x - 2.0 * r3 * d_xx;
      w.uyy = 6.0 * r4 * d_y * d_y - 2.0 * r3 * d_yy;
      w.uxy = 6.0 * r4 * d_x * d_y - 2.0 * r3 * d_xy;
    }
    n.u += w.u * g[i];
    n.ux += w.ux * g[i];
    n.uy += w.uy * g[i];
    n.uxx += w.uxx * g[i];
    n.uyy += w.uyy * g[i];
    n.uxy += w.uxy * g[i];
    d.u += w.u;
    d.ux += w.ux;
    d.uy += w.uy;
    d.uxx += w.uxx;
    d.uyy += w.uyy;
    d.uxy += w.uxy;
  }
  SpatialDerivatives out;
  out.u = n.u / d.u;
  out.ux = (n.ux - out.u * d.ux) / d.u;
  out.uy = (n.uy - out.u * d.uy) / d.u;
  out.uxx = (n.uxx - 2.0 * out.ux * d.ux - out.u * d.uxx) / d.u;
  out.uyy = (n.uyy - 2.0 * out.uy * d.uy - out.u * d.uyy) / d.u;
  out.uxy = (n.uxy - out.ux * d.uy - out.uy * d.ux - out.u * d.uxy) / d.u;
  return out;
}

double phi(Point x, double l) { return x.x * (l - x.x) * x.y * (l - x.y); }

SpatialDerivatives phi_derivatives(Point x, double l) {
  const double px = x.x * (l - x.x), py = x.y * (l - x.y);
  const double dpx = l - 2.0 * x.x, dpy = l - 2.0 * x.y;
  return {px * py, dpx * py, px * dpy, -2.0 * py, -2.0 * px, dpx * dpy};
}

template <class S>
std::vector<SpatialDerivatives> spatial_derivatives_batch(const MlpModel<S>& model, const BoundaryTrace& g,
                                                          std::span<const Point> points, int order) {
  if (order < 1 || order > 2) throw ContractError("derivative order must be 1 or 2");
  for (Point p : points) check_genome_point(p, model.edge_length());
  auto out = raw_derivatives(model, g, points, order);
  if (model.spec().exact_bc) {
    for (std::size_t j = 0; j < points.size(); ++j) {
      out[j] = wrap_exact_bc(out[j], extrapolate_bc_derivatives(g, points[j]),
                             phi_derivatives(points[j], model.edge_length()));
    }
  }
  return out;
}

template <class S>
SpatialDerivatives spatial_derivatives(const MlpModel<S>& model, const BoundaryTrace& g, Point x) {
  return spatial_derivatives_batch(model, g, std::span<const Point>(&x, 1), 2)[0];
}

template <class S>
Eigen::VectorXd forward_batch(const MlpModel<S>& model, const BoundaryTrace& g, std::span<const Point> points) {
  for (Point p : points) check_genome_point(p, model.edge_length());
  const auto raw = raw_derivatives(model, g, points, 0);
  Eigen::VectorXd out(points.size());
  for (std::size_t j = 0; j < points.size(); ++j) {
    out[j] = raw[j].u;
    if (model.spec().exact_bc) {
      out[j] = extrapolate_bc(g, points[j]) + phi(points[j], model.edge_length()) * raw[j].u;
    }
  }
  return out;
}

template <class S>
double forward(const MlpModel<S>& model, const BoundaryTrace& g, Point x) {
  return forward_batch(model, g, std::span<const Point>(&x, 1))[0];
}

template <class S>
Eigen::MatrixXd gradient_magnitude(const MlpModel<S>& model, const Eigen::MatrixXd& traces,
                                   std::span<const Point> points) {
  for (Point p : points) check_genome_point(p, model.edge_length());
  const auto n = static_cast<Eigen::Index>(points.size());
  Eigen::MatrixXd out(traces.cols(), n);
  if (model.arch() == Architecture::lpfc) {
    const Mat<S> t = trace_matrix(model, traces);
    const Pass<S> pass = run_trunk(model, points, 1, false, t, {});
    const Mat<S> gx = t.transpose() * pass.h.back()[X];
    const Mat<S> gy = t.transpose() * pass.h.back()[Y];
    out = (gx.array().square() + gy.array().square()).sqrt().matrix().template cast<double>();
    return out;
  }
  for (Eigen::Index c = 0; c < traces.cols(); ++c) {
    const auto d = spatial_derivatives_batch(model, BoundaryTrace(traces.col(c), model.edge_length()), points, 1);
    for (Eigen::Index j = 0; j < n; ++j) out(c, j) = std::hypot(d[j].ux, d[j].uy);
  }
  return out;
}

template <class S>
Eigen::MatrixXd lpfc_basis(const MlpModel<S>& model, std::span<const Point> points) {
  if (model.arch() != Architecture::lpfc) throw ContractError("lpfc_basis needs an LPFC model");
  for (Point p : points) check_genome_point(p, model.edge_length());
  const Pass<S> pass = run_trunk(model, points, 0, false, Mat<S>(), {});
  return pass.h.back()[V].template cast<double>();
}

void LossConfig::validate() const {
  if (!(alpha >= 0.0)) throw ConfigError("loss.alpha: must be nonnegative");
  if (!(beta >= 0.0)) throw ConfigError("loss.beta: must be nonnegative");
  if (n_collocation < 0) throw ConfigError("loss.n_collocation: must be nonnegative");
}

template <class S>
LossResult<S> loss_and_gradients(const MlpModel<S>& m, const Batch& batch, const LossConfig& config,
                                 bool with_gradient) {
  const bool use_residual = config.alpha > 0.0 && !batch.residual_pairs.empty();
  if (batch.targets.empty() && !use_residual) throw ContractError("loss evaluated on an empty batch");
  const bool fc = m.arch() == Architecture::fc;
  const bool wrap = m.spec().exact_bc;
  const double l = m.edge_length();
  const Mat<S> traces = trace_matrix(m, batch.traces);
  const auto n_traces = static_cast<int>(traces.cols());
  const int last = m.n_layers() - 1;

  LossResult<S> result;
  if (with_gradient) result.gradient = MlpModel<S>::Vector::Zero(m.n_params());

  // Exact-BC terms depend only on the batch, so they are computed in double.
  std::vector<BoundaryTrace> trace_objects;
  if (wrap) {
    for (int t = 0; t < n_traces; ++t) trace_objects.emplace_back(batch.traces.col(t), l);
  }

  // Adds the FC read-out gradient and returns the adjoint of the last hidden layer.
  auto readout_backward = [&](const Pass<S>& pass, const std::array<Eigen::Matrix<S, 1, Eigen::Dynamic>, kChannels>& nbar,
                              int n_channels) {
    Jets<S> hbar;
    typename MlpModel<S>::WeightMap wbar(result.gradient.data() + m.weight_offset(last), 1, m.in_size(last));
    const auto w = m.weight(last);
    result.gradient[m.bias_offset(last)] += nbar[V].sum();
    for (int c = 0; c < n_channels; ++c) {
      wbar.noalias() += nbar[c] * pass.h.back()[c].transpose();
      hbar[c] = w.transpose() * nbar[c];
    }
    return hbar;
  };

  if (!batch.targets.empty()) {
    const auto nt = static_cast<Eigen::Index>(batch.targets.size());
    Eigen::VectorXd pred(nt);  // FC: predictions; LPFC: errors
    if (fc) {
      std::vector<Point> pts(nt);
      std::vector<int> col_trace(nt);
      for (Eigen::Index k = 0; k < nt; ++k) {
        pts[k] = batch.points[batch.targets[k].point];
        col_trace[k] = batch.targets[k].trace;
      }
      const Pass<S> pass = run_trunk(m, pts, 0, false, traces, col_trace);
      Eigen::Matrix<S, 1, Eigen::Dynamic> nv = m.weight(last) * pass.h.back()[V];
      nv.array() += m.bias(last)(0);
      Eigen::VectorXd gval, fval;
      if (wrap) {
        gval.resize(nt);
        fval.resize(nt);
        for (Eigen::Index k = 0; k < nt; ++k) {
          gval[k] = extrapolate_bc(trace_objects[batch.targets[k].trace], pts[k]);
          fval[k] = phi(pts[k], l);
        }
      }
      for (Eigen::Index k = 0; k < nt; ++k) {
        pred[k] = wrap ? gval[k] + fval[k] * static_cast<double>(nv(k)) : static_cast<double>(nv(k));
      }
      const Eigen::VectorXd err = pred - Eigen::VectorXd::NullaryExpr(nt, [&](Eigen::Index k) {
                                    return batch.targets[k].value;
                                  });
      result.data = err.squaredNorm() / static_cast<double>(nt);
      if (with_gradient) {
        std::array<Eigen::Matrix<S, 1, Eigen::Dynamic>, kChannels> nbar;
        nbar[V].resize(nt);
        for (Eigen::Index k = 0; k < nt; ++k) {
          nbar[V](k) = S(2.0 * err[k] / static_cast<double>(nt) * (wrap ? fval[k] : 1.0));
        }
        backprop_trunk(m, pass, readout_backward(pass, nbar, 1), result.gradient);
      }
    } else {
      const Pass<S> pass = run_trunk(m, batch.points, 0, false, traces, {});
      const Mat<S>& h = pass.h.back()[V];
      for (Eigen::Index k = 0; k < nt; ++k) {
        const auto& tg = batch.targets[k];
        pred[k] = static_cast<double>(traces.col(tg.trace).dot(h.col(tg.point))) - tg.value;
      }
      result.data = pred.squaredNorm() / static_cast<double>(nt);
      if (with_gradient) {
        Jets<S> hbar;
        hbar[V] = Mat<S>::Zero(h.rows(), h.cols());
        for (Eigen::Index k = 0; k < nt; ++k) {
          const auto& tg = batch.targets[k];
          hbar[V].col(tg.point) += S(2.0 * pred[k] / static_cast<double>(nt)) * traces.col(tg.trace);
        }
        backprop_trunk(m, pass, std::move(hbar), result.gradient);
      }
    }
  }

  if (use_residual) {
    const auto np = static_cast<Eigen::Index>(batch.residual_pairs.size());
    Eigen::VectorXd lap(np);
    const double scale = config.alpha * 2.0 / static_cast<double>(np);
    if (fc) {
      std::vector<Point> pts(np);
      std::vector<int> col_trace(np);
      for (Eigen::Index k = 0; k < np; ++k) {
        pts[k] = batch.collocation[batch.residual_pairs[k].point];
        col_trace[k] = batch.residual_pairs[k].trace;
      }
      const Pass<S> pass = run_trunk(m, pts, 2, false, traces, col_trace);
      std::array<Eigen::Matrix<S, 1, Eigen::Dynamic>, kChannels> n;
      for (int c = 0; c < 5; ++c) n[c] = m.weight(last) * pass.h.back()[c];
      n[V].array() += m.bias(last)(0);
      std::vector<SpatialDerivatives> fx;
      for (Eigen::Index k = 0; k < np; ++k) {
        if (wrap) {
          const SpatialDerivatives g = extrapolate_bc_derivatives(trace_objects[col_trace[k]], pts[k]);
          const SpatialDerivatives f = phi_derivatives(pts[k], l);
          lap[k] = g.laplacian() + f.laplacian() * double(n[V](k)) +
                   2.0 * (f.ux * double(n[X](k)) + f.uy * double(n[Y](k))) +
                   f.u * double(n[XX](k) + n[YY](k));
          fx.push_back(f);
        } else {
          lap[k] = static_cast<double>(n[XX](k) + n[YY](k));
        }
      }
      result.residual = lap.squaredNorm() / static_cast<double>(np);
      if (with_gradient) {
        std::array<Eigen::Matrix<S, 1, Eigen::Dynamic>, kChannels> nbar;
        for (int c = 0; c < 5; ++c) nbar[c] = Eigen::Matrix<S, 1, Eigen::Dynamic>::Zero(np);
        for (Eigen::Index k = 0; k < np; ++k) {
          const double r = scale * lap[k];
          if (wrap) {
            const auto& f = fx[k];
            nbar[V](k) = S(r * f.laplacian());
            nbar[X](k) = S(2.0 * r * f.ux);
            nbar[Y](k) = S(2.0 * r * f.uy);
            nbar[XX](k) = nbar[YY](k) = S(r * f.u);
          } else {
            nbar[XX](k) = nbar[YY](k) = S(r);
          }
        }
        backprop_trunk(m, pass, readout_backward(pass, nbar, 5), result.gradient);
      }
    } else {
      const Pass<S> pass = run_trunk(m, batch.collocation, 2, false, traces, {});
      const Mat<S> lh = pass.h.back()[XX] + pass.h.back()[YY];
      for (Eigen::Index k = 0; k < np; ++k) {
        const auto& pr = batch.residual_pairs[k];
        lap[k] = static_cast<double>(traces.col(pr.trace).dot(lh.col(pr.point)));
      }
      result.residual = lap.squaredNorm() / static_cast<double>(np);
      if (with_gradient) {
        Jets<S> hbar;
        for (int c = 0; c < 5; ++c) hbar[c] = Mat<S>::Zero(lh.rows(), lh.cols());
        for (Eigen::Index k = 0; k < np; ++k) {
          const auto& pr = batch.residual_pairs[k];
          hbar[XX].col(pr.point) += S(scale * lap[k]) * traces.col(pr.trace);
        }
        hbar[YY] = hbar[XX];
        backprop_trunk(m, pass, std::move(hbar), result.gradient);
      }
    }
  }

  result.tikhonov = static_cast<double>(m.params().template cast<double>().squaredNorm());
  if (with_gradient && config.beta > 0.0) result.gradient += S(2.0 * config.beta) * m.params();
  result.total = result.data + config.alpha * result.residual + config.beta * result.tikhonov;
  return result;
}

#define MOSAIC_INSTANTIATE(S)                                                                            \
  template class MlpModel<S>;                                                                             \
  template double forward(const MlpModel<S>&, const BoundaryTrace&, Point);                             \
  template Eigen::VectorXd forward_batch(const MlpModel<S>&, const BoundaryTrace&, std::span<const Point>); \
  template std::vector<SpatialDerivatives> spatial_derivatives_batch(const MlpModel<S>&, const BoundaryTrace&, \
                                                                     std::span<const Point>, int);        \
  template SpatialDerivatives spatial_derivatives(const MlpModel<S>&, const BoundaryTrace&, Point);       \
  template LossResult<S> loss_and_gradients(const MlpModel<S>&, const Batch&, const LossConfig&, bool); \
  template Eigen::MatrixXd gradient_magnitude(const MlpModel<S>&, const Eigen::MatrixXd&, std::span<const Point>); \
  template Eigen::MatrixXd lpfc_basis(const MlpModel<S>&, std::span<const Point>);

MOSAIC_INSTANTIATE(float)
MOSAIC_INSTANTIATE(double)

}  // namespace mosaic
