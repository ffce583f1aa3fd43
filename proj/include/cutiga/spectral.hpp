#pragma once

#include "cutiga/forms.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace cutiga {

// ---------------------------------------------------------------------------
// Generalized eigenvalue machinery for the pencil K x = lambda M x.
// ---------------------------------------------------------------------------

/// Solver knobs. The automatic path goes dense up to `dense_threshold` dofs
/// (Cholesky congruence + cyclic Jacobi, machine-accurate extremes) and
/// iterative above it (power iteration for lambda_max, shift-invert power
/// iteration for lambda_min). Experiments that assemble hundreds of pencils
/// force the iterative path explicitly; its agreement with the dense path is
/// a standing test property.
struct EigenOptions {
  enum class Path { automatic, dense, iterative };
  Path path = Path::automatic;
  int dense_threshold = 3000;
  double power_rtol = 1e-8;
  int power_max_iters = 10000;
};

/// Every eigenvalue of the symmetric pencil, ascending. Both matrices are
/// Jacobi-scaled by diag(M)^{-1/2} first (a congruence, spectrum unchanged)
/// so that small-cut mass matrices with wild diagonal range factor cleanly;
/// then M = L L^T and the congruent C = L^{-1} K L^{-T} is diagonalized by
/// cyclic Jacobi sweeps until the off-diagonal Frobenius norm falls below
/// 1e-10 of the matrix norm. Throws std::runtime_error when M is not
/// positive definite.
[[nodiscard]] Eigen::VectorXd
dense_generalized_eigenvalues(Eigen::MatrixXd K, Eigen::MatrixXd M);

/// Largest eigenvalue of the pencil. Iterative path: power iteration on
/// M^{-1}K with M-inner-product normalization, stopping when the Rayleigh
/// quotient is stationary to `power_rtol`; throws std::runtime_error with
/// the final residual if `power_max_iters` sweeps do not converge, or when
/// M fails to factor.
[[nodiscard]] double max_generalized_eigenvalue(const SparseMat& K,
                                                const SparseMat& M,
                                                const EigenOptions& opts = {});

/// Smallest eigenvalue. Iterative path: shift-invert power iteration on
/// (K + delta M)^{-1} M with delta = 1e-8 * lambda_max, which resolves
/// lambda_min to O(1e-16 * lambda_max); accurate enough to certify the
/// positive-definiteness gates. Same error behavior as the max variant.
[[nodiscard]] double min_generalized_eigenvalue(const SparseMat& K,
                                                const SparseMat& M,
                                                const EigenOptions& opts = {});

/// Central-difference stability limit 2 / sqrt(lambda_max). Throws
/// std::invalid_argument for lambda_max <= 0.
[[nodiscard]] double critical_timestep(double lambda_max);

/// Spectral extremes of one assembled pencil plus the provenance the
/// experiment reports carry per row.
struct SpectralResult {
  double lambda_max = 0;
  double lambda_min = 0;
  double dt_crit = 0;
  double chi_min = 1;         ///< smallest cut fraction of the geometry
  std::string formulation;    ///< tag, e.g. "nitsche_ghost+ghost_mass"
  std::uint64_t seed = 0;     ///< perturbation seed of the geometry
};

/// Runs both extreme-eigenvalue solves and fills in the time step.
[[nodiscard]] SpectralResult
analyze_pencil(const SparseMat& K, const SparseMat& M,
               const std::string& formulation, std::uint64_t seed,
               double chi_min, const EigenOptions& opts = {});

/// Generalized Rayleigh quotient xi^T K xi / xi^T M xi, the lower bound on
/// lambda_max that the cut probes exploit. Throws std::invalid_argument when
/// the denominator vanishes.
[[nodiscard]] double rayleigh_quotient(const SparseMat& K, const SparseMat& M,
                                       const Eigen::VectorXd& xi);

// ---------------------------------------------------------------------------
// Cut probes: the four {0,1}-coefficient functions whose Rayleigh quotients
// expose the worst-case cut-size scaling.
// ---------------------------------------------------------------------------

/// corner1/sliver1 are the vanishing-mass functions (support enters the
/// domain only through the cut piece); corner2/sliver2 the O(1)-mass
/// functions anchored one index lower, whose support ends just past the cut.
/// In 1D the corner and sliver kinds coincide.
enum class ProbeKind { corner1, corner2, sliver1, sliver2 };

[[nodiscard]] const char* to_string(ProbeKind k);

/// A probe coefficient vector on the active dofs of its bench, all entries
/// 0 or 1, together with the targeted cut element and its prescribed cut
/// fraction.
struct CutProbe {
  ProbeKind kind = ProbeKind::sliver1;
  Eigen::VectorXd xi;
  std::array<int, 2> element{0, 0};
  double chi = 1;
};

/// The probe plus the purpose-built discretization it lives on, everything
/// assembly needs. Geometries are arranged so the cut quadrature is exact:
/// slivers cut a single column by an axis-aligned half-space at distance
/// chi*h into the target element; corners chamfer the target element's
/// low corner with a 45-degree half-plane (triangle legs 2*sqrt(2)*chi*h,
/// so that h_c/h equals chi under the metric convention). The immersed
/// boundary is Dirichlet-tagged; formulations that do not enforce anything
/// simply ignore it.
struct ProbeBench {
  TensorBsplineBasis basis;
  BackgroundMesh mesh;
  CutQuadrature quad;
  std::vector<GhostFace> faces;
  DofMap dofs;
  CutProbe probe;
};

/// Builds the bench for one probe kind at the prescribed cut fraction.
/// `n_elements` is the per-axis mesh size (default 2p+2, enough to keep the
/// second probe's support clear of the far mesh boundary). Throws
/// std::invalid_argument when chi is outside the constructible range or the
/// anchored functions do not come out active (the cut collapsed below the
/// quadrature's demotion threshold).
[[nodiscard]] ProbeBench make_cut_probe(ProbeKind kind, int degree, int dim,
                                        double chi, int n_elements = 0);

// ---------------------------------------------------------------------------
// Scaling fits and the expected exponents.
// ---------------------------------------------------------------------------

/// Least-squares power-law fit through log-log samples.
struct ScalingFit {
  double exponent = 0;  ///< slope q of log10(value) vs log10(chi)
  double intercept = 0; ///< log10 value extrapolated to chi = 1
  double r_squared = 1;
  double chi_lo = 0, chi_hi = 0;
};

/// Fits value ~ C * chi^q. Requires at least 5 samples spanning at least 4
/// decades in chi, all values strictly positive; throws
/// std::invalid_argument otherwise.
[[nodiscard]] ScalingFit
fit_scaling_exponent(const std::vector<std::pair<double, double>>& samples);

/// One row of the scaling tables: which boundary terms enter the stiffness.
/// The rotation rows exist only for order 4; order 2 uses penalty_value /
/// nitsche_value for its single essential condition.
enum class TableRow {
  neumann,
  penalty_value,
  nitsche_value,
  penalty_rotation,
  nitsche_rotation,
  nitsche_ghost
};

/// One column: how the mass matrix is formed. The two ghost columns share
/// their expected exponents (the ghost term dominates either base mass).
enum class MassColumn { consistent, lumped, ghost_consistent, ghost_lumped };

[[nodiscard]] const char* to_string(TableRow r);
[[nodiscard]] const char* to_string(MassColumn m);

/// Expected Rayleigh-quotient exponent q with R ~ chi^q for the given cell,
/// order s in {2, 4}, degree p, dimension d in {1, 2}. Corner probes carry
/// the d-dependent exponents; sliver probes reduce to d = 1 through the
/// tangential partition of unity. Throws std::invalid_argument for rows
/// that do not exist at the given order.
[[nodiscard]] int expected_rayleigh_exponent(int order, TableRow row,
                                             MassColumn mass, ProbeKind kind,
                                             int p, int d);

/// The FormulationSpec that realizes one table cell (method, enforced
/// conditions, mass treatment, ghost flags). Penalty prefactors are left at
/// their defaults; the caller may override them before assembly.
[[nodiscard]] FormulationSpec table_formulation(int order, TableRow row,
                                                MassColumn mass);

} // namespace cutiga
