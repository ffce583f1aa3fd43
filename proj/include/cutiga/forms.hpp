#pragma once

#include "cutiga/cutquad.hpp"
#include "cutiga/geometry.hpp"
#include "cutiga/splines.hpp"

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <array>
#include <functional>
#include <string>
#include <vector>

namespace cutiga {

using SparseMat = Eigen::SparseMatrix<double>;

/// Maps global basis-function indices to the active subset: functions whose
/// support touches at least one non-exterior background element. Everything
/// assembled downstream is indexed by active dof.
class DofMap {
public:
  DofMap(const TensorBsplineBasis& basis, const BackgroundMesh& mesh);

  /// As above, but the functions listed in `strong_zero` are withheld from
  /// the active set regardless of support. With open knots this imposes a
  /// homogeneous strong constraint on a fitted boundary; pass the result of
  /// outer_boundary_funcs to pin the whole ambient-box boundary.
  DofMap(const TensorBsplineBasis& basis, const BackgroundMesh& mesh,
         const std::vector<int>& strong_zero);

  [[nodiscard]] int n_active() const noexcept {
    return static_cast<int>(to_global_.size());
  }
  [[nodiscard]] int n_total() const noexcept {
    return static_cast<int>(to_active_.size());
  }
  /// Active index of a global function; -1 when unsupported, -2 when removed
  /// by a strong constraint. Assembly treats the two differently: touching an
  /// unsupported function is a bug, a constrained one is skipped.
  [[nodiscard]] int active_of(int global) const { return to_active_.at(global); }
  [[nodiscard]] int global_of(int active) const { return to_global_.at(active); }
  [[nodiscard]] const std::vector<int>& actives() const noexcept {
    return to_global_;
  }

private:
  std::vector<int> to_active_;
  std::vector<int> to_global_;
};

enum class BoundaryMethod { neumann, penalty, nitsche_local, nitsche_ghost };
enum class MassTreatment { consistent, lumped };

/// Everything that fixes one formulation variant: the equation order, the
/// Dirichlet enforcement strategy, the mass treatment, material constants,
/// and the dimensionless penalty prefactors. The per-element parameters
/// derive from these by the mesh-size scalings documented at the assembly
/// routines; for nitsche_local the penalties come from element-local inverse
/// estimates instead of prefactors.
struct FormulationSpec {
  int order = 2; ///< spatial operator order, 2 or 4
  BoundaryMethod method = BoundaryMethod::neumann;
  MassTreatment mass = MassTreatment::consistent;
  bool ghost_mass = false;

  double rho = 1.0;   ///< density
  double kappa = 1.0; ///< stiffness modulus

  double beta_bar = 10.0;     ///< value penalty prefactor, order 2
  double beta_bar_phi = 10.0; ///< value penalty prefactor, order 4
  double beta_bar_g = 10.0;   ///< rotation penalty prefactor, order 4
  double gamma_K = 0.0; ///< ghost stiffness prefactor; required > 0 only for
                        ///< nitsche_ghost, must stay 0 for nitsche_local
  double gamma_M = 0.1; ///< ghost mass prefactor (used when ghost_mass)

  /// Which essential conditions the order-4 formulation enforces on the
  /// Dirichlet-tagged boundary. Ignored for order 2.
  bool value_condition = true;
  bool rotation_condition = true;

  /// Cap prefactor for the inverse-estimate fallback on nearly empty
  /// elements: beta = beta_cap * h_c^{-q} with q the scaling order.
  double beta_cap = 1e8;

  double T = 1.0; ///< time horizon carried along for the dynamics layer

  /// Throws std::invalid_argument on inconsistent settings (wrong order,
  /// non-positive constants where active, ghost stiffness requested without
  /// or against the method).
  void validate() const;
};

/// Scalar field in product form a(x) * b(t). A default-constructed Field is
/// identically zero and assembly loops skip it; a missing temporal factor
/// means constant-in-time.
struct Field {
  std::function<double(const Point&)> spatial;
  std::function<double(double)> temporal;

  [[nodiscard]] bool active() const noexcept { return bool(spatial); }
  [[nodiscard]] double at(double t, const Point& x) const {
    return spatial(x) * (temporal ? temporal(t) : 1.0);
  }
};

/// Vector-valued natural datum: a flux whose normal trace F.n supplies the
/// scalar datum at each surface quadrature point. Manufactured solutions on
/// curved immersed boundaries need this form, since a plain scalar data
/// function has no way to know the local normal.
struct FluxField {
  std::function<Point(const Point&)> spatial;
  std::function<double(double)> temporal;

  [[nodiscard]] bool active() const noexcept { return bool(spatial); }
};

/// Problem data for either equation order. Conventions follow the strong
/// forms used throughout: order 2 prescribes g = -kappa grad(phi).n on the
/// Neumann-tagged boundary (load contribution -int g v); order 4 prescribes
/// q = grad(kappa lap phi).n and m = -kappa lap phi there (loads -int q v and
/// -int m grad(v).n). phi_D is the essential value datum on the
/// Dirichlet-tagged boundary and g_rot the essential rotation datum
/// grad(phi).n for order 4. g_outer plays the role of g on the fitted
/// ambient-box boundary when the quadrature emits it.
struct ProblemData {
  Field f;        ///< body force
  Field g;        ///< order-2 natural datum, Neumann tag
  FluxField flux; ///< order-2 natural flux; its normal trace adds to g
  Field g_outer;  ///< order-2 natural datum, outer tag
  Field phi_D;   ///< essential value datum, Dirichlet tag
  Field g_rot;   ///< order-4 essential rotation datum, Dirichlet tag
  Field q4;      ///< order-4 natural datum (shear type), Neumann tag
  Field m4;      ///< order-4 natural datum (moment type), Neumann tag

  std::function<double(const Point&)> phi0;   ///< initial value
  std::function<double(const Point&)> phi0_t; ///< initial rate
};

/// Load vector assembled once in space and scaled per part by a temporal
/// factor, so time stepping costs a few axpys per step instead of a
/// re-assembly.
struct TimeSeparableLoad {
  struct Part {
    Eigen::VectorXd vec;
    std::function<double(double)> temporal; ///< missing = constant 1
  };
  std::vector<Part> parts;
  int size = 0;

  [[nodiscard]] Eigen::VectorXd at(double t) const;
  [[nodiscard]] bool empty() const noexcept { return parts.empty(); }
};

/// Stiffness matrix with its variationally paired load and the per-element
/// penalty values actually used (indexed like mesh.classes; zero where no
/// constrained surface exists). For order 4, beta_value holds the value
/// penalty and beta_rotation the rotation penalty; order 2 fills only
/// beta_value.
struct StiffnessResult {
  SparseMat K;
  TimeSeparableLoad load;
  std::vector<double> beta_value;
  std::vector<double> beta_rotation;
  std::vector<std::string> warnings;
};

/// Mass, stiffness, and load of one formulation, all on active dofs.
struct AssembledSystem {
  SparseMat M;
  SparseMat K;
  TimeSeparableLoad load;
  int n_dofs = 0;
  /// True when M is diagonal (lumped without ghost mass), enabling the cheap
  /// explicit update.
  bool mass_is_diagonal = false;
  std::vector<double> beta_value;
  std::vector<double> beta_rotation;
  /// Record of the term blocks included, e.g. "mass:lumped",
  /// "stiffness:ghost-penalty".
  std::vector<std::string> terms;
  std::vector<std::string> warnings;
};

/// Consistent mass on the cut domain: entries int_Omega rho N_i N_j with the
/// cut-element rules of `quad`.
[[nodiscard]] SparseMat assemble_mass_consistent(const TensorBsplineBasis& basis,
                                                 const BackgroundMesh& mesh,
                                                 const CutQuadrature& quad,
                                                 const DofMap& dofs, double rho);

/// Row-sum lumping. For the partition-of-unity B-spline basis the row sum
/// equals int_Omega rho N_i, which is positive however elements are cut; a
/// non-positive diagonal therefore signals quadrature corruption and throws
/// std::runtime_error.
[[nodiscard]] SparseMat lump_rowsum(const SparseMat& M);

/// Ghost mass: jump penalty rho gamma_M [d^p_n N_i][d^p_n N_j] over the ghost
/// faces, gamma_M = gamma_M_bar * h^(2p+1). Positive semi-definite, vanishes
/// on coefficients of any global polynomial of degree <= p, and is not
/// amenable to row-sum lumping (its rows sum to zero).
[[nodiscard]] SparseMat assemble_ghost_mass(const TensorBsplineBasis& basis,
                                            const BackgroundMesh& mesh,
                                            const std::vector<GhostFace>& faces,
                                            const DofMap& dofs, double rho,
                                            double gamma_M_bar);

/// Second-order stiffness and load for the method selected in `spec`:
/// the grad-grad core, plus for penalty a value penalty with
/// beta = beta_bar / h_K, for nitsche_local additionally the
/// consistency/symmetry terms with beta from the element-local inverse
/// estimate, and for nitsche_ghost the ghost penalty
/// gamma_K = gamma_K_bar * h^(2p-1) with the uniform beta = beta_bar / h_K.
/// Elements without Dirichlet surface contribute no boundary terms.
[[nodiscard]] StiffnessResult
assemble_stiffness_2nd(const TensorBsplineBasis& basis,
                       const BackgroundMesh& mesh, const CutQuadrature& quad,
                       const std::vector<GhostFace>& faces, const DofMap& dofs,
                       const FormulationSpec& spec, const ProblemData& data);

/// Fourth-order stiffness and load: the lap-lap core plus, per `spec`, value
/// and rotation penalties (beta_phi = beta_bar_phi * h^-3,
/// beta_g = beta_bar_g / h), the corresponding Nitsche consistency/symmetry
/// pairs with one-sided third derivatives, and the ghost penalty with
/// gamma_K = gamma_K_bar * h^(2p-3). Requires degree >= 2.
[[nodiscard]] StiffnessResult
assemble_stiffness_4th(const TensorBsplineBasis& basis,
                       const BackgroundMesh& mesh, const CutQuadrature& quad,
                       const std::vector<GhostFace>& faces, const DofMap& dofs,
                       const FormulationSpec& spec, const ProblemData& data);

/// Numerator/denominator pairs for the element-local inverse estimates:
///   grad     sup |grad(v).n|^2_bdy / |grad v|^2_vol      (order 2, factor 2)
///   third    sup |grad(lap v).n|^2_bdy / |lap v|^2_vol   (order 4, factor 3)
///   laplace  sup |lap v|^2_bdy / |lap v|^2_vol           (order 4, factor 3)
enum class InverseEstimateKind { grad, third, laplace };

struct InverseEstimate {
  double beta = 0;       ///< the full penalty value including the factor
  bool fallback = false; ///< true when the cap bound replaced the eigenproblem
};

/// Solves the element-local generalized eigenproblem behind the inverse
/// estimate, restricted to the functions supported on `element`, with the
/// boundary measure taken over the `tag`-tagged surface points of that
/// element. Null directions of the volume form (below 1e-10 of its trace) are
/// projected out. When the volume form is numerically zero the fallback bound
/// beta_cap * h_c^{-q} is returned instead (q = 3 for `third`, else 1) and
/// `fallback` is set.
[[nodiscard]] InverseEstimate local_inverse_estimate(
    const TensorBsplineBasis& basis, const BackgroundMesh& mesh,
    const CutQuadrature& quad, std::array<int, 2> element,
    InverseEstimateKind kind, BoundaryTag tag, double beta_cap, double h_c);

/// Load vector of the chosen formulation at time t. Convenience wrapper that
/// assembles the time-separable load and evaluates it; time loops should keep
/// the StiffnessResult's load instead.
[[nodiscard]] Eigen::VectorXd
assemble_load(const TensorBsplineBasis& basis, const BackgroundMesh& mesh,
              const CutQuadrature& quad, const std::vector<GhostFace>& faces,
              const DofMap& dofs, const FormulationSpec& spec,
              const ProblemData& data, double t);

/// One-stop assembly of the full semi-discrete system
/// M d2/dt2 phi + K phi = F for the formulation in `spec`. Verifies that M is
/// positive definite (throws std::runtime_error otherwise) and that K came
/// out symmetric.
[[nodiscard]] AssembledSystem
assemble_system(const TensorBsplineBasis& basis, const BackgroundMesh& mesh,
                const CutQuadrature& quad, const std::vector<GhostFace>& faces,
                const DofMap& dofs, const FormulationSpec& spec,
                const ProblemData& data);

} // namespace cutiga
