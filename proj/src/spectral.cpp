#include "cutiga/spectral.hpp"

#include "cutiga/rng.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace cutiga {

namespace {

void check_pencil_shapes(const Eigen::Index kr, const Eigen::Index kc,
                         const Eigen::Index mr, const Eigen::Index mc) {
  if (kr != kc || mr != mc || kr != mr)
    throw std::invalid_argument("spectral: pencil matrices must be square and "
                                "of equal size");
  if (kr == 0)
    throw std::invalid_argument("spectral: empty pencil");
}

/// diag(M)^{-1/2}, rejecting non-positive diagonals up front. Scaling both
/// matrices by it is a congruence, so eigenvalues are untouched while the
/// Cholesky pivots of small-cut mass matrices come back to O(1).
Eigen::VectorXd jacobi_scaling(const Eigen::VectorXd& mass_diag) {
  Eigen::VectorXd s(mass_diag.size());
  for (Eigen::Index i = 0; i < mass_diag.size(); ++i) {
    const double d = mass_diag[i];
    if (!(d > 0) || !std::isfinite(d))
      throw std::runtime_error("spectral: mass matrix diagonal is not "
                               "positive; the pencil is not SPD");
    s[i] = 1.0 / std::sqrt(d);
  }
  return s;
}

/// In-place cyclic Jacobi on a symmetric matrix; stops when the off-diagonal
/// Frobenius norm drops below `rtol` times the matrix norm. Quadratic
/// convergence makes the sweep cap generous.
void jacobi_diagonalize(Eigen::MatrixXd& C, double rtol) {
  const Eigen::Index n = C.rows();
  if (n < 2)
    return;
  const double scale = std::max(C.norm(), 1e-300);
  const int max_sweeps = 64;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off2 = 0;
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q)
        off2 += 2 * C(p, q) * C(p, q);
    if (std::sqrt(off2) <= rtol * scale)
      return;
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = C(p, q);
        if (apq == 0)
          continue;
        const double theta = (C(q, q) - C(p, p)) / (2 * apq);
        const double t =
            (theta >= 0 ? 1.0 : -1.0) /
            (std::abs(theta) + std::sqrt(1 + theta * theta));
        const double c = 1 / std::sqrt(1 + t * t);
        const double s = t * c;
        const double app = C(p, p), aqq = C(q, q);
        C(p, p) = c * c * app - 2 * s * c * apq + s * s * aqq;
        C(q, q) = s * s * app + 2 * s * c * apq + c * c * aqq;
        C(p, q) = C(q, p) = 0;
        for (Eigen::Index k = 0; k < n; ++k) {
          if (k == p || k == q)
            continue;
          const double akp = C(k, p), akq = C(k, q);
          C(k, p) = C(p, k) = c * akp - s * akq;
          C(k, q) = C(q, k) = s * akp + c * akq;
        }
      }
    }
  }
  throw std::runtime_error("spectral: Jacobi sweeps failed to reduce the "
                           "off-diagonal norm; matrix may contain NaN/Inf");
}

/// Jacobi-scaled copy of the pencil with the mass factored once. Shared by
/// the iterative max and min paths.
struct ScaledPencil {
  SparseMat K, M;
  Eigen::SimplicialLLT<SparseMat> mass;

  ScaledPencil(const SparseMat& K_in, const SparseMat& M_in) {
    const Eigen::VectorXd s = jacobi_scaling(M_in.diagonal());
    const auto D = s.asDiagonal();
    K = D * K_in * D;
    M = D * M_in * D;
    K.makeCompressed();
    M.makeCompressed();
    mass.compute(M);
    if (mass.info() != Eigen::Success)
      throw std::runtime_error(
          "spectral: mass matrix is not positive definite");
  }
};

Eigen::VectorXd seeded_start(Eigen::Index n) {
  // fixed internal seed: the solver itself is deterministic by design and
  // geometry randomness lives upstream in the experiment seeds
  SplitMix64 rng(0x5eedc0ffee1234abull);
  Eigen::VectorXd x(n);
  for (Eigen::Index i = 0; i < n; ++i)
    x[i] = rng.uniform(-1.0, 1.0);
  return x;
}

[[noreturn]] void throw_stalled(const char* what, double residual) {
  std::ostringstream os;
  os << "spectral: " << what
     << " did not converge within the iteration cap; relative residual "
     << residual;
  throw std::runtime_error(os.str());
}

/// Stationarity detector for power-type iterations. The quotient converges
/// geometrically, so consecutive increments shrink by a roughly constant
/// ratio q and the remaining error is about |step| * q / (1 - q). Testing
/// that extrapolation instead of the raw step keeps slowly converging
/// pencils (near-degenerate dominant pair) from stopping early, and three
/// consecutive passes guard against a single accidentally small step.
class StationarityCheck {
public:
  explicit StationarityCheck(double rtol) : rtol_(rtol) {}

  bool update(double value, int iter) {
    const double step = std::abs(value - prev_value_);
    bool ok = false;
    if (iter >= 2) {
      if (step == 0) {
        ok = true;
      } else if (prev_step_ > 0) {
        const double q = std::min(step / prev_step_, 0.999);
        ok = step * q / (1 - q) <= rtol_ * std::max(std::abs(value), 1e-300);
      }
      // prev_step_ == 0 with step > 0 is motion resuming after a stall
    }
    streak_ = ok ? streak_ + 1 : 0;
    prev_step_ = step;
    prev_value_ = value;
    return streak_ >= 3;
  }

private:
  double rtol_;
  double prev_value_ = 0;
  double prev_step_ = -1;
  int streak_ = 0;
};

/// Power iteration on M^{-1}K in the M-inner product, for a caller-supplied
/// stiffness (the negative-dominant rerun passes a shifted copy).
double power_core(const SparseMat& K, const ScaledPencil& pencil, double rtol,
                  int max_iters) {
  Eigen::VectorXd x = seeded_start(K.rows());
  x /= std::sqrt(x.dot(pencil.M * x));
  double lambda = 0;
  StationarityCheck stop(rtol);
  for (int iter = 0; iter < max_iters; ++iter) {
    const Eigen::VectorXd y = K * x;
    lambda = x.dot(y);
    if (stop.update(lambda, iter))
      return lambda;
    Eigen::VectorXd z = pencil.mass.solve(y);
    const double zm = std::sqrt(z.dot(pencil.M * z));
    if (zm == 0)
      return 0; // K x vanished identically: the zero pencil
    x = z / zm;
  }
  const Eigen::VectorXd r = K * x - lambda * (pencil.M * x);
  throw_stalled("power iteration",
                r.norm() / std::max(std::abs(lambda), 1e-300));
}

double power_max(const ScaledPencil& pencil, double rtol, int max_iters) {
  const double lambda = power_core(pencil.K, pencil, rtol, max_iters);
  if (lambda >= 0)
    return lambda;
  // the dominant-magnitude eigenvalue is negative; shift the pencil up so
  // the top of the spectrum dominates, then undo the shift
  const double sigma = 2 * std::abs(lambda);
  SparseMat shifted = pencil.K + sigma * pencil.M;
  shifted.makeCompressed();
  return power_core(shifted, pencil, rtol, max_iters) - sigma;
}

/// Shift-invert power iteration for the smallest eigenvalue: the dominant
/// eigenvalue of (K + delta M)^{-1} M is 1/(lambda_min + delta), so a
/// relative tolerance on it resolves lambda_min to O(rtol * delta) near
/// zero, far inside the -1e-10 * lambda_max definiteness gates.
double shift_invert_min(const ScaledPencil& pencil, double lambda_max,
                        double rtol, int max_iters) {
  const double delta = 1e-8 * std::max(std::abs(lambda_max), 1e-300);
  SparseMat A = pencil.K + delta * pencil.M;
  A.makeCompressed();
  Eigen::SimplicialLDLT<SparseMat> ldlt(A);
  if (ldlt.info() != Eigen::Success)
    throw std::runtime_error(
        "spectral: shifted stiffness failed to factor in the min-eigenvalue "
        "solve");
  Eigen::VectorXd x = seeded_start(pencil.K.rows());
  x /= std::sqrt(x.dot(pencil.M * x));
  double mu = 0;
  StationarityCheck stop(rtol);
  for (int iter = 0; iter < max_iters; ++iter) {
    const Eigen::VectorXd y = pencil.M * x;
    const Eigen::VectorXd z = ldlt.solve(y);
    mu = y.dot(z); // <x, (K+dM)^{-1} M x>_M with x M-normalized
    if (stop.update(mu, iter)) {
      if (mu == 0)
        break;
      return 1.0 / mu - delta;
    }
    const double zm = std::sqrt(z.dot(pencil.M * z));
    if (zm == 0)
      break;
    x = z / zm;
  }
  throw std::runtime_error(
      "spectral: shift-invert iteration did not converge; the shifted pencil "
      "may be singular");
}

bool use_dense(Eigen::Index n, const EigenOptions& opts) {
  switch (opts.path) {
  case EigenOptions::Path::dense:
    return true;
  case EigenOptions::Path::iterative:
    return false;
  case EigenOptions::Path::automatic:
  default:
    return n <= opts.dense_threshold;
  }
}

} // namespace

Eigen::VectorXd dense_generalized_eigenvalues(Eigen::MatrixXd K,
                                              Eigen::MatrixXd M) {
  check_pencil_shapes(K.rows(), K.cols(), M.rows(), M.cols());
  const Eigen::VectorXd s = jacobi_scaling(M.diagonal());
  K = s.asDiagonal() * K * s.asDiagonal();
  M = s.asDiagonal() * M * s.asDiagonal();
  Eigen::LLT<Eigen::MatrixXd> llt(M);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("spectral: mass matrix is not positive definite");
  const Eigen::MatrixXd L = llt.matrixL();
  Eigen::MatrixXd C = L.triangularView<Eigen::Lower>().solve(K);
  C = L.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd(C.transpose()));
  C = 0.5 * (C + C.transpose()).eval(); // kill the roundoff skew
  jacobi_diagonalize(C, 1e-10);
  Eigen::VectorXd ev = C.diagonal();
  std::sort(ev.data(), ev.data() + ev.size());
  return ev;
}

double max_generalized_eigenvalue(const SparseMat& K, const SparseMat& M,
                                  const EigenOptions& opts) {
  check_pencil_shapes(K.rows(), K.cols(), M.rows(), M.cols());
  if (use_dense(K.rows(), opts)) {
    const Eigen::VectorXd ev =
        dense_generalized_eigenvalues(Eigen::MatrixXd(K), Eigen::MatrixXd(M));
    return ev[ev.size() - 1];
  }
  const ScaledPencil pencil(K, M);
  return power_max(pencil, opts.power_rtol, opts.power_max_iters);
}

double min_generalized_eigenvalue(const SparseMat& K, const SparseMat& M,
                                  const EigenOptions& opts) {
  check_pencil_shapes(K.rows(), K.cols(), M.rows(), M.cols());
  if (use_dense(K.rows(), opts)) {
    const Eigen::VectorXd ev =
        dense_generalized_eigenvalues(Eigen::MatrixXd(K), Eigen::MatrixXd(M));
    return ev[0];
  }
  const ScaledPencil pencil(K, M);
  const double lmax = power_max(pencil, opts.power_rtol, opts.power_max_iters);
  if (lmax == 0)
    return 0; // zero stiffness: the whole spectrum sits at zero
  return shift_invert_min(pencil, lmax, opts.power_rtol,
                          opts.power_max_iters);
}

double critical_timestep(double lambda_max) {
  if (!(lambda_max > 0))
    throw std::invalid_argument(
        "spectral: critical time step needs lambda_max > 0");
  return 2.0 / std::sqrt(lambda_max);
}

SpectralResult analyze_pencil(const SparseMat& K, const SparseMat& M,
                              const std::string& formulation,
                              std::uint64_t seed, double chi_min,
                              const EigenOptions& opts) {
  SpectralResult r;
  r.lambda_max = max_generalized_eigenvalue(K, M, opts);
  r.lambda_min = min_generalized_eigenvalue(K, M, opts);
  r.dt_crit = critical_timestep(r.lambda_max);
  r.chi_min = chi_min;
  r.formulation = formulation;
  r.seed = seed;
  return r;
}

double rayleigh_quotient(const SparseMat& K, const SparseMat& M,
                         const Eigen::VectorXd& xi) {
  check_pencil_shapes(K.rows(), K.cols(), M.rows(), M.cols());
  if (xi.size() != K.rows())
    throw std::invalid_argument("spectral: probe vector size mismatch");
  const double den = xi.dot(M * xi);
  if (den == 0)
    throw std::invalid_argument(
        "spectral: Rayleigh quotient denominator vanished");
  return xi.dot(K * xi) / den;
}

// ---------------------------------------------------------------------------
// Cut probes
// ---------------------------------------------------------------------------

const char* to_string(ProbeKind k) {
  switch (k) {
  case ProbeKind::corner1:
    return "corner1";
  case ProbeKind::corner2:
    return "corner2";
  case ProbeKind::sliver1:
    return "sliver1";
  case ProbeKind::sliver2:
    return "sliver2";
  }
  return "?";
}

namespace {

bool is_first_kind(ProbeKind k) {
  return k == ProbeKind::corner1 || k == ProbeKind::sliver1;
}

bool is_corner_kind(ProbeKind k) {
  return k == ProbeKind::corner1 || k == ProbeKind::corner2;
}

/// Half-plane x + y < s at 45 degrees: the corner-cut geometry. A single
/// affine primitive, so the cut quadrature clips it exactly at any chi; the
/// scaling exponents only depend on the corner-piece diameter, not on
/// whether the piece is the figure's square or this chamfer triangle.
ImplicitDomain diagonal_chamfer(double s, BoundaryTag tag) {
  ImplicitDomain::Primitive prim;
  prim.kind = ImplicitDomain::Primitive::Kind::half_plane;
  prim.a = Point(s / 2, s / 2);
  prim.b = Point(1, 1).normalized();
  prim.tag = tag;
  ImplicitDomain::Node leaf;
  leaf.op = ImplicitDomain::Node::Op::leaf;
  leaf.prim = 0;
  return ImplicitDomain(2, {prim}, leaf);
}

} // namespace

ProbeBench make_cut_probe(ProbeKind kind, int degree, int dim, double chi,
                          int n_elements) {
  if (dim != 1 && dim != 2)
    throw std::invalid_argument("probe: dim must be 1 or 2");
  if (degree < 1)
    throw std::invalid_argument("probe: degree must be >= 1");
  const bool corner2d = dim == 2 && is_corner_kind(kind);
  // keep the cut inside one element and above the quadrature's demotion
  // threshold (corner pieces have volume ~ chi^2 h^2)
  const double chi_max = corner2d ? 0.3 : 0.45;
  const double chi_min_ok = corner2d ? 1e-7 : 1e-12;
  if (!(chi >= chi_min_ok && chi <= chi_max))
    throw std::invalid_argument(
        "probe: chi outside the constructible range for this kind");
  const int p = degree;
  const int n = n_elements > 0 ? n_elements : 2 * p + 2;
  if (n < p + 2)
    throw std::invalid_argument("probe: mesh too small for the probe layout");
  const int k = p; // cut element index along each cut axis
  const double h = 1.0 / n;

  const ImplicitDomain domain =
      corner2d ? diagonal_chamfer(2 * k * h + 2 * std::sqrt(2.0) * chi * h,
                                  BoundaryTag::dirichlet)
               : ImplicitDomain::half_space(dim, 0, k * h + chi * h,
                                            BoundaryTag::dirichlet);

  BackgroundMesh mesh =
      classify_elements(domain, {n, dim == 2 ? n : 1}, Point(0, 0),
                        dim == 2 ? Point(1, 1) : Point(1, 0));
  CutQuadrature quad = build_cut_quadrature(domain, mesh, p);
  std::vector<GhostFace> faces = extract_ghost_faces(mesh);
  TensorBsplineBasis basis =
      dim == 1 ? TensorBsplineBasis(p, n, 0.0, 1.0)
               : TensorBsplineBasis(p, {n, n}, Point(0, 0), Point(1, 1));
  DofMap dofs(basis, mesh);

  const std::array<int, 2> cut_el{k, corner2d ? k : 0};
  if (mesh.cls(cut_el) != ElementClass::cut)
    throw std::invalid_argument(
        "probe: requested chi did not produce a cut target element");

  CutProbe probe;
  probe.kind = kind;
  probe.element = cut_el;
  probe.chi = chi;
  probe.xi = Eigen::VectorXd::Zero(dofs.n_active());
  const int fx = is_first_kind(kind) ? k + p : k;
  auto set_one = [&](std::array<int, 2> f) {
    const int a = dofs.active_of(basis.func_index(f));
    if (a < 0)
      throw std::invalid_argument(
          "probe: anchored function is inactive; chi is unreachable at this "
          "resolution");
    probe.xi[a] = 1.0;
  };
  if (dim == 1) {
    set_one({fx, 0});
  } else if (corner2d) {
    set_one({fx, fx});
  } else {
    for (int j = 0; j < basis.n_funcs(1); ++j)
      set_one({fx, j});
  }
  return {std::move(basis), std::move(mesh),  std::move(quad),
          std::move(faces), std::move(dofs), std::move(probe)};
}

// ---------------------------------------------------------------------------
// Scaling fits and expected exponents
// ---------------------------------------------------------------------------

ScalingFit
fit_scaling_exponent(const std::vector<std::pair<double, double>>& samples) {
  if (samples.size() < 5)
    throw std::invalid_argument("fit: need at least 5 samples");
  double lo = samples.front().first, hi = lo;
  for (const auto& [chi, value] : samples) {
    if (!(chi > 0) || !(value > 0))
      throw std::invalid_argument("fit: samples must be strictly positive");
    lo = std::min(lo, chi);
    hi = std::max(hi, chi);
  }
  if (std::log10(hi / lo) < 4 - 1e-9)
    throw std::invalid_argument("fit: chi must span at least 4 decades");
  const double nn = static_cast<double>(samples.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& [chi, value] : samples) {
    const double x = std::log10(chi), y = std::log10(value);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  ScalingFit fit;
  const double det = nn * sxx - sx * sx;
  fit.exponent = (nn * sxy - sx * sy) / det;
  fit.intercept = (sy - fit.exponent * sx) / nn;
  double ss_res = 0, ss_tot = 0;
  const double ymean = sy / nn;
  for (const auto& [chi, value] : samples) {
    const double y = std::log10(value);
    const double yhat = fit.intercept + fit.exponent * std::log10(chi);
    ss_res += (y - yhat) * (y - yhat);
    ss_tot += (y - ymean) * (y - ymean);
  }
  fit.r_squared = ss_tot == 0 ? 1.0 : 1.0 - ss_res / ss_tot;
  fit.chi_lo = lo;
  fit.chi_hi = hi;
  return fit;
}

const char* to_string(TableRow r) {
  switch (r) {
  case TableRow::neumann:
    return "neumann";
  case TableRow::penalty_value:
    return "penalty_value";
  case TableRow::nitsche_value:
    return "nitsche_value";
  case TableRow::penalty_rotation:
    return "penalty_rotation";
  case TableRow::nitsche_rotation:
    return "nitsche_rotation";
  case TableRow::nitsche_ghost:
    return "nitsche_ghost";
  }
  return "?";
}

const char* to_string(MassColumn m) {
  switch (m) {
  case MassColumn::consistent:
    return "consistent";
  case MassColumn::lumped:
    return "lumped";
  case MassColumn::ghost_consistent:
    return "ghost_consistent";
  case MassColumn::ghost_lumped:
    return "ghost_lumped";
  }
  return "?";
}

int expected_rayleigh_exponent(int order, TableRow row, MassColumn mass,
                               ProbeKind kind, int p, int d) {
  if (order != 2 && order != 4)
    throw std::invalid_argument("exponent: order must be 2 or 4");
  if (d != 1 && d != 2)
    throw std::invalid_argument("exponent: d must be 1 or 2");
  if (p < 1 || (order == 4 && p < 2))
    throw std::invalid_argument("exponent: degree too low for the order");
  if (order == 2 && (row == TableRow::penalty_rotation ||
                     row == TableRow::nitsche_rotation))
    throw std::invalid_argument(
        "exponent: rotation rows exist only at order 4");

  // sliver probes see the cut through one axis only; the tangential strip
  // is a partition of unity and drops out of every ratio
  const int de = is_corner_kind(kind) ? d : 1;
  const bool first = is_first_kind(kind);

  int mass_exp = 0;
  if (first) {
    if (mass == MassColumn::consistent)
      mass_exp = 2 * p * de + de;
    else if (mass == MassColumn::lumped)
      mass_exp = p * de + de;
    // ghost columns: the face term carries no chi dependence at all
  }

  int stiff_exp = 0;
  if (row == TableRow::nitsche_ghost) {
    stiff_exp = 0; // ghost jumps of either probe are O(1) in chi
  } else if (first) {
    stiff_exp = 2 * p * de + de - order; // the differential core dominates
  } else {
    switch (row) {
    case TableRow::neumann:
    case TableRow::penalty_value:
    case TableRow::penalty_rotation:
      stiff_exp = 0; // O(1) energies, uniformly scaled penalties
      break;
    case TableRow::nitsche_value:
      stiff_exp = de - order; // beta ~ (chi h)^{-(order-1)} times trace
      break;
    case TableRow::nitsche_rotation:
      stiff_exp = de - 2; // beta_g ~ (chi h)^{-1} times O(1) rotation trace
      break;
    default:
      break;
    }
  }
  return stiff_exp - mass_exp;
}

FormulationSpec table_formulation(int order, TableRow row, MassColumn mass) {
  // reuse the exponent validation for the row/order compatibility rules
  static_cast<void>(expected_rayleigh_exponent(order, row, mass,
                                               ProbeKind::sliver1,
                                               order == 4 ? 2 : 1, 1));
  FormulationSpec spec;
  spec.order = order;
  switch (row) {
  case TableRow::neumann:
    spec.method = BoundaryMethod::neumann;
    break;
  case TableRow::penalty_value:
  case TableRow::penalty_rotation:
    spec.method = BoundaryMethod::penalty;
    break;
  case TableRow::nitsche_value:
  case TableRow::nitsche_rotation:
    spec.method = BoundaryMethod::nitsche_local;
    break;
  case TableRow::nitsche_ghost:
    spec.method = BoundaryMethod::nitsche_ghost;
    spec.gamma_K = 1.0;
    break;
  }
  if (order == 4) {
    const bool value_row =
        row == TableRow::penalty_value || row == TableRow::nitsche_value;
    const bool rotation_row =
        row == TableRow::penalty_rotation || row == TableRow::nitsche_rotation;
    spec.value_condition = value_row || row == TableRow::nitsche_ghost ||
                           row == TableRow::neumann;
    spec.rotation_condition = rotation_row || row == TableRow::nitsche_ghost;
  }
  spec.mass = (mass == MassColumn::lumped || mass == MassColumn::ghost_lumped)
                  ? MassTreatment::lumped
                  : MassTreatment::consistent;
  spec.ghost_mass = mass == MassColumn::ghost_consistent ||
                    mass == MassColumn::ghost_lumped;
  spec.validate();
  return spec;
}

} // namespace cutiga
