#pragma once

#include "cutiga/forms.hpp"

#include <Eigen/Dense>

#include <functional>
#include <vector>

namespace cutiga {

/// Step selection for the explicit solver. Either an explicit `dt` is given
/// or one is derived as `safety * dt_crit`. When `dt_crit` is known it also
/// acts as a guard rail: an explicit step above `safety * dt_crit` is
/// rejected. Leaving `dt_crit` at zero disables the guard, which is how
/// deliberate beyond-critical runs probe the blow-up detector.
struct TimeIntegrationConfig {
  double dt = 0;        ///< explicit step; 0 derives safety * dt_crit
  double T = 1;         ///< final time
  double safety = 0.85; ///< fraction of dt_crit used for derived steps
  int stride = 1;       ///< keep every stride-th step in the history
  double dt_crit = 0;   ///< critical step of the pencil, when known

  /// Validates the configuration and returns the step to use.
  [[nodiscard]] double resolve_dt() const;
};

/// Sampled trajectory. `history[i]` holds the active coefficients at
/// `times[i]`; entry 0 is the initial state and afterwards every stride-th
/// step is kept, so the length is floor(T/dt)/stride + 1.
struct TransientSolution {
  std::vector<Eigen::VectorXd> history;
  std::vector<double> times;
  double dt = 0;
  int n_steps = 0; ///< total steps taken, sampled or not
};

/// Initial coefficients for the solver. Empty vectors mean zero.
struct InitialState {
  Eigen::VectorXd u0;
  Eigen::VectorXd v0;
};

/// Consistent-mass projection of the initial value and rate from `data`
/// onto the active basis, with the ghost mass included when the formulation
/// carries one. The projection stays consistent even when stepping later
/// uses the lumped mass: lumping the projection too would cap the observed
/// convergence near order 1.5 through the shifted boundary-band centroids.
/// Missing data fields project to zero.
[[nodiscard]] InitialState
project_initial_state(const TensorBsplineBasis& basis,
                      const BackgroundMesh& mesh, const CutQuadrature& quad,
                      const std::vector<GhostFace>& faces, const DofMap& dofs,
                      const FormulationSpec& spec, const ProblemData& data);

/// Central-difference time integration of M u'' + K u = F(t):
///   a_n = M^{-1}(F_n - K u_n),  u_{n+1} = 2 u_n - u_{n-1} + dt^2 a_n,
/// started with u_{-1} = u_0 - dt v_0 + dt^2/2 a_0. A diagonal mass is
/// inverted entrywise; otherwise a symmetric factorization is computed once
/// and reused every step. Throws std::runtime_error when the mass is not
/// positive definite or when the solution norm exceeds 1e6 times its
/// initial scale (the expected signature of stepping past the critical
/// step).
[[nodiscard]] TransientSolution
central_difference_solve(const AssembledSystem& system,
                         const TimeIntegrationConfig& cfg,
                         const InitialState& init = {});

/// Reference solution with gradient, both time dependent.
struct ExactField {
  std::function<double(double, const Point&)> value;
  std::function<Point(double, const Point&)> gradient;
};

struct ErrorNorms {
  double l2 = 0;        ///< relative L2 error
  double h10 = 0;       ///< relative H1 seminorm error
  double l2_abs = 0;    ///< absolute L2 error
  double h10_abs = 0;   ///< absolute H1 seminorm error
  double exact_l2 = 0;  ///< L2 norm of the exact field
  double exact_h10 = 0; ///< H1 seminorm of the exact field
};

/// L2 and H1_0 errors of the coefficient vector against the exact field at
/// time `t`, integrated with the cut quadrature over the physical domain.
/// Throws std::invalid_argument when an exact norm vanishes identically (the
/// relative errors would be undefined); a merely small exact norm, as near a
/// standing wave's zero crossing, gives a large relative error and leaves the
/// absolute fields usable.
[[nodiscard]] ErrorNorms compute_error_norms(const Eigen::VectorXd& coeffs,
                                             double t, const ExactField& exact,
                                             const TensorBsplineBasis& basis,
                                             const BackgroundMesh& mesh,
                                             const CutQuadrature& quad,
                                             const DofMap& dofs);

/// Time-RMS error over every sampled state of a transient solution:
/// sqrt(sum_s |e(t_s)|^2) / sqrt(sum_s |phi(t_s)|^2) per norm. A final-time
/// snapshot carries the quasi-random phases of the high modes excited by the
/// initial projection, so snapshot errors wobble with the step size; the RMS
/// over the period is the step-insensitive comparator.
[[nodiscard]] ErrorNorms compute_time_rms_error(const TransientSolution& sol,
                                                const ExactField& exact,
                                                const TensorBsplineBasis& basis,
                                                const BackgroundMesh& mesh,
                                                const CutQuadrature& quad,
                                                const DofMap& dofs);

} // namespace cutiga
