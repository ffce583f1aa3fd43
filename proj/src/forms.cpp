#include "cutiga/forms.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

namespace cutiga {

namespace {

void check_compat(const TensorBsplineBasis& basis, const BackgroundMesh& mesh,
                  const CutQuadrature* quad, const DofMap* dofs) {
  if (basis.dim() != mesh.dim)
    throw std::invalid_argument("forms: basis and mesh dimension disagree");
  const double tol = 1e-12 * (mesh.hi - mesh.lo).norm();
  for (int a = 0; a < mesh.dim; ++a) {
    if (basis.n_elements(a) != mesh.n[a])
      throw std::invalid_argument("forms: basis and mesh element counts disagree");
    const auto& kv = basis.axis(a);
    const double mlo = a == 0 ? mesh.lo.x() : mesh.lo.y();
    const double mhi = a == 0 ? mesh.hi.x() : mesh.hi.y();
    if (std::abs(kv.lo() - mlo) > tol || std::abs(kv.hi() - mhi) > tol)
      throw std::invalid_argument("forms: basis and mesh boxes disagree");
  }
  if (quad && static_cast<int>(quad->elements.size()) != mesh.n_elements())
    throw std::invalid_argument("forms: quadrature size does not match the mesh");
  if (dofs && dofs->n_total() != basis.n_funcs())
    throw std::invalid_argument("forms: dof map does not match the basis");
}

/// Values and derivatives of the functions supported on one element at one
/// point, flattened to the local order of element_funcs. `upto` selects how
/// much is filled: 0 values, 1 gradients, 2 Laplacians, 3 gradients of the
/// Laplacian.
struct LocalTables {
  Eigen::VectorXd val;
  Eigen::MatrixXd grad;
  Eigen::VectorXd lap;
  Eigen::MatrixXd glap;
};

LocalTables local_tables(const TensorBsplineBasis& basis, std::array<int, 2> e,
                         const Point& x, int upto) {
  const int p = basis.degree();
  const auto ev = basis.eval_on_element(e, x, upto);
  const auto& dx = ev.ders[0];
  LocalTables t;
  if (basis.dim() == 1) {
    const int m = p + 1;
    t.val = dx.row(0).transpose();
    if (upto >= 1) {
      t.grad.setZero(m, 2);
      t.grad.col(0) = dx.row(1).transpose();
    }
    if (upto >= 2)
      t.lap = dx.row(2).transpose();
    if (upto >= 3) {
      t.glap.setZero(m, 2);
      t.glap.col(0) = dx.row(3).transpose();
    }
    return t;
  }
  const auto& dy = ev.ders[1];
  const int m = (p + 1) * (p + 1);
  t.val.resize(m);
  if (upto >= 1)
    t.grad.resize(m, 2);
  if (upto >= 2)
    t.lap.resize(m);
  if (upto >= 3)
    t.glap.resize(m, 2);
  int j = 0;
  for (int jx = 0; jx <= p; ++jx)
    for (int jy = 0; jy <= p; ++jy, ++j) {
      t.val(j) = dx(0, jx) * dy(0, jy);
      if (upto >= 1) {
        t.grad(j, 0) = dx(1, jx) * dy(0, jy);
        t.grad(j, 1) = dx(0, jx) * dy(1, jy);
      }
      if (upto >= 2)
        t.lap(j) = dx(2, jx) * dy(0, jy) + dx(0, jx) * dy(2, jy);
      if (upto >= 3) {
        t.glap(j, 0) = dx(3, jx) * dy(0, jy) + dx(1, jx) * dy(2, jy);
        t.glap(j, 1) = dx(2, jx) * dy(1, jy) + dx(0, jx) * dy(3, jy);
      }
    }
  return t;
}

// Negative means skip: rows and columns of strongly constrained functions
// are simply dropped, which is what imposes the homogeneous value. A function
// that is inactive for lack of support is still a bug when touched.
int active_index(const DofMap& dofs, int global) {
  const int i = dofs.active_of(global);
  if (i == -1)
    throw std::logic_error("forms: assembly touched an inactive function");
  return i;
}

void scatter_block(const Eigen::MatrixXd& loc, const std::vector<int>& funcs,
                   const DofMap& dofs,
                   std::vector<Eigen::Triplet<double>>& out) {
  const int m = static_cast<int>(funcs.size());
  for (int a = 0; a < m; ++a) {
    const int ia = active_index(dofs, funcs[a]);
    if (ia < 0)
      continue;
    for (int b = 0; b < m; ++b) {
      const double v = loc(a, b);
      if (v == 0.0)
        continue;
      const int ib = active_index(dofs, funcs[b]);
      if (ib >= 0)
        out.emplace_back(ia, ib, v);
    }
  }
}

void scatter_vec(const Eigen::VectorXd& loc, const std::vector<int>& funcs,
                 const DofMap& dofs, Eigen::VectorXd& out) {
  for (int a = 0; a < static_cast<int>(funcs.size()); ++a) {
    const int ia = active_index(dofs, funcs[a]);
    if (ia >= 0)
      out(ia) += loc(a);
  }
}

/// Adds the jump quadratic form sum_faces coeff * h_axis^h_exp *
/// int_face [d^order_n N_i][d^order_n N_j] to the triplet list. Faces are
/// integrated with a (p+1)-point Gauss rule along their tangent; in one
/// dimension a face is a point carrying unit weight.
void append_face_jumps(const TensorBsplineBasis& basis,
                       const BackgroundMesh& mesh,
                       const std::vector<GhostFace>& faces, const DofMap& dofs,
                       int order, double coeff, int h_exp,
                       std::vector<Eigen::Triplet<double>>& out) {
  if (faces.empty() || coeff == 0.0)
    return;
  std::vector<double> gn, gw;
  gauss_rule(basis.degree() + 1, gn, gw);

  auto add_point = [&](const GhostFace& f, const Point& x, double w) {
    const auto pairs = basis.face_normal_jump(f.axis, f.k, order, x);
    const int m = static_cast<int>(pairs.size());
    Eigen::VectorXd jump(m);
    std::vector<int> idx(m);
    for (int a = 0; a < m; ++a) {
      idx[a] = pairs[a].first;
      jump(a) = pairs[a].second;
    }
    const Eigen::MatrixXd loc = w * (jump * jump.transpose());
    scatter_block(loc, idx, dofs, out);
  };

  for (const auto& f : faces) {
    const double scale = coeff * std::pow(mesh.h(f.axis), h_exp);
    const double bp =
        (f.axis == 0 ? mesh.lo.x() : mesh.lo.y()) + f.k * mesh.h(f.axis);
    if (mesh.dim == 1) {
      add_point(f, Point(bp, 0), scale);
      continue;
    }
    const int tax = 1 - f.axis;
    const double ht = mesh.h(tax);
    const double t0 =
        (tax == 0 ? mesh.lo.x() : mesh.lo.y()) + f.cell[tax] * ht;
    for (std::size_t q = 0; q < gn.size(); ++q) {
      const double tq = t0 + 0.5 * ht * (1.0 + gn[q]);
      const Point x = f.axis == 0 ? Point(bp, tq) : Point(tq, bp);
      add_point(f, x, scale * 0.5 * ht * gw[q]);
    }
  }
}

double element_h(const BackgroundMesh& mesh) {
  return mesh.dim == 1 ? mesh.h(0) : std::max(mesh.h(0), mesh.h(1));
}

bool has_surface_tag(const ElementQuadrature& eq, BoundaryTag tag) {
  for (const auto& sp : eq.surface)
    if (sp.tag == tag)
      return true;
  return false;
}

void push_part(TimeSeparableLoad& load, Eigen::VectorXd v,
               const std::function<double(double)>& temporal) {
  if (v.size() == 0 || v.cwiseAbs().maxCoeff() == 0.0)
    return;
  load.parts.push_back({std::move(v), temporal});
}

void check_symmetric(const SparseMat& A, const char* what) {
  SparseMat D = SparseMat(A.transpose()) - A;
  double dmax = 0, amax = 0;
  for (int k = 0; k < D.outerSize(); ++k)
    for (SparseMat::InnerIterator it(D, k); it; ++it)
      dmax = std::max(dmax, std::abs(it.value()));
  for (int k = 0; k < A.outerSize(); ++k)
    for (SparseMat::InnerIterator it(A, k); it; ++it)
      amax = std::max(amax, std::abs(it.value()));
  if (dmax > 1e-12 * amax)
    throw std::runtime_error(std::string("forms: ") + what +
                             " lost symmetry during assembly");
}

/// Positive-definiteness check robust to the wild diagonal scaling of
/// small-cut mass matrices: Cholesky of the Jacobi-scaled matrix, whose
/// conditioning reflects shape rather than cut size.
void check_mass_spd(const SparseMat& M) {
  const Eigen::VectorXd d = M.diagonal();
  for (int i = 0; i < d.size(); ++i)
    if (!(d(i) > 0.0))
      throw std::runtime_error("forms: mass diagonal is not positive");
  const Eigen::VectorXd s = d.cwiseSqrt().cwiseInverse();
  SparseMat S = s.asDiagonal() * M * s.asDiagonal();
  Eigen::SimplicialLLT<SparseMat> llt(S);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("forms: mass matrix is not positive definite");
}

} // namespace

DofMap::DofMap(const TensorBsplineBasis& basis, const BackgroundMesh& mesh)
    : DofMap(basis, mesh, {}) {}

DofMap::DofMap(const TensorBsplineBasis& basis, const BackgroundMesh& mesh,
               const std::vector<int>& strong_zero) {
  check_compat(basis, mesh, nullptr, nullptr);
  to_active_.assign(basis.n_funcs(), -1);
  for (int el = 0; el < mesh.n_elements(); ++el) {
    if (mesh.classes[el] == ElementClass::exterior)
      continue;
    for (int g : basis.element_funcs(mesh.multi(el)))
      to_active_[g] = 0;
  }
  for (int g : strong_zero) {
    if (g < 0 || g >= basis.n_funcs())
      throw std::invalid_argument("DofMap: strong-zero index out of range");
    to_active_[g] = -2;
  }
  for (int g = 0; g < static_cast<int>(to_active_.size()); ++g)
    if (to_active_[g] == 0) {
      to_active_[g] = static_cast<int>(to_global_.size());
      to_global_.push_back(g);
    }
  if (to_global_.empty())
    throw std::invalid_argument("DofMap: no active functions remain");
}

void FormulationSpec::validate() const {
  if (order != 2 && order != 4)
    throw std::invalid_argument("FormulationSpec: order must be 2 or 4");
  if (!(rho > 0) || !(kappa > 0))
    throw std::invalid_argument("FormulationSpec: material constants must be positive");
  if (!(T > 0))
    throw std::invalid_argument("FormulationSpec: time horizon must be positive");
  if (!(beta_cap > 0))
    throw std::invalid_argument("FormulationSpec: beta_cap must be positive");
  const bool prefactor_beta =
      method == BoundaryMethod::penalty || method == BoundaryMethod::nitsche_ghost;
  if (order == 2 && prefactor_beta && !(beta_bar > 0))
    throw std::invalid_argument("FormulationSpec: beta_bar must be positive");
  if (order == 4 && prefactor_beta) {
    if (value_condition && !(beta_bar_phi > 0))
      throw std::invalid_argument("FormulationSpec: beta_bar_phi must be positive");
    if (rotation_condition && !(beta_bar_g > 0))
      throw std::invalid_argument("FormulationSpec: beta_bar_g must be positive");
  }
  if (order == 4 && method != BoundaryMethod::neumann && !value_condition &&
      !rotation_condition)
    throw std::invalid_argument(
        "FormulationSpec: essential enforcement selected with both conditions off");
  if (method == BoundaryMethod::nitsche_ghost && !(gamma_K > 0))
    throw std::invalid_argument("FormulationSpec: nitsche_ghost requires gamma_K > 0");
  if (method != BoundaryMethod::nitsche_ghost && gamma_K != 0.0)
    throw std::invalid_argument(
        "FormulationSpec: ghost stiffness is exclusive to nitsche_ghost");
  if (ghost_mass && !(gamma_M > 0))
    throw std::invalid_argument("FormulationSpec: ghost mass requires gamma_M > 0");
}

Eigen::VectorXd TimeSeparableLoad::at(double t) const {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(size);
  for (const auto& part : parts)
    v += (part.temporal ? part.temporal(t) : 1.0) * part.vec;
  return v;
}

SparseMat assemble_mass_consistent(const TensorBsplineBasis& basis,
                                   const BackgroundMesh& mesh,
                                   const CutQuadrature& quad,
                                   const DofMap& dofs, double rho) {
  check_compat(basis, mesh, &quad, &dofs);
  if (!(rho > 0))
    throw std::invalid_argument("assemble_mass_consistent: rho must be positive");
  const int n = dofs.n_active();
  const int m = basis.funcs_per_element();
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(m) * m * mesh.n_elements());
  for (int el = 0; el < mesh.n_elements(); ++el) {
    const auto& rule = quad.elements[el].volume;
    if (rule.empty())
      continue;
    const auto em = mesh.multi(el);
    const auto funcs = basis.element_funcs(em);
    Eigen::MatrixXd loc = Eigen::MatrixXd::Zero(m, m);
    for (const auto& vp : rule) {
      const LocalTables t = local_tables(basis, em, vp.x, 0);
      loc.noalias() += (rho * vp.w) * (t.val * t.val.transpose());
    }
    scatter_block(loc, funcs, dofs, trips);
  }
  SparseMat M(n, n);
  M.setFromTriplets(trips.begin(), trips.end());
  return M;
}

SparseMat lump_rowsum(const SparseMat& M) {
  const int n = static_cast<int>(M.rows());
  const Eigen::VectorXd d = M * Eigen::VectorXd::Ones(n);
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(n);
  for (int i = 0; i < n; ++i) {
    if (!(d(i) > 0.0))
      throw std::runtime_error("lump_rowsum: non-positive row sum at dof " +
                               std::to_string(i) +
                               " (quadrature or basis corruption)");
    trips.emplace_back(i, i, d(i));
  }
  SparseMat D(n, n);
  D.setFromTriplets(trips.begin(), trips.end());
  return D;
}

SparseMat assemble_ghost_mass(const TensorBsplineBasis& basis,
                              const BackgroundMesh& mesh,
                              const std::vector<GhostFace>& faces,
                              const DofMap& dofs, double rho,
                              double gamma_M_bar) {
  check_compat(basis, mesh, nullptr, &dofs);
  if (!(rho > 0) || !(gamma_M_bar > 0))
    throw std::invalid_argument("assemble_ghost_mass: coefficients must be positive");
  const int p = basis.degree();
  std::vector<Eigen::Triplet<double>> trips;
  append_face_jumps(basis, mesh, faces, dofs, p, rho * gamma_M_bar, 2 * p + 1,
                    trips);
  SparseMat Mg(dofs.n_active(), dofs.n_active());
  Mg.setFromTriplets(trips.begin(), trips.end());
  return Mg;
}

InverseEstimate local_inverse_estimate(const TensorBsplineBasis& basis,
                                       const BackgroundMesh& mesh,
                                       const CutQuadrature& quad,
                                       std::array<int, 2> element,
                                       InverseEstimateKind kind,
                                       BoundaryTag tag, double beta_cap,
                                       double h_c) {
  check_compat(basis, mesh, &quad, nullptr);
  const auto& eq = quad.elements.at(mesh.index(element));
  const double factor = kind == InverseEstimateKind::grad ? 2.0 : 3.0;
  const int h_exp = kind == InverseEstimateKind::third ? 3 : 1;
  const int m = basis.funcs_per_element();
  const int vol_upto = kind == InverseEstimateKind::grad ? 1 : 2;
  const int sur_upto = kind == InverseEstimateKind::grad
                           ? 1
                           : (kind == InverseEstimateKind::third ? 3 : 2);

  auto fallback = [&] {
    const double hc = std::max(h_c, 1e-30);
    return InverseEstimate{beta_cap * std::pow(hc, -h_exp), true};
  };

  Eigen::MatrixXd V = Eigen::MatrixXd::Zero(m, m);
  for (const auto& vp : eq.volume) {
    const LocalTables t = local_tables(basis, element, vp.x, vol_upto);
    if (kind == InverseEstimateKind::grad)
      V.noalias() += vp.w * (t.grad * t.grad.transpose());
    else
      V.noalias() += vp.w * (t.lap * t.lap.transpose());
  }
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(m, m);
  for (const auto& sp : eq.surface) {
    if (sp.tag != tag)
      continue;
    const LocalTables t = local_tables(basis, element, sp.x, sur_upto);
    Eigen::VectorXd b;
    switch (kind) {
    case InverseEstimateKind::grad:
      b = t.grad * sp.n;
      break;
    case InverseEstimateKind::third:
      b = t.glap * sp.n;
      break;
    case InverseEstimateKind::laplace:
      b = t.lap;
      break;
    }
    B.noalias() += sp.w * (b * b.transpose());
  }

  const double tr = V.trace();
  if (!(tr > 0.0))
    return fallback();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> esV(V);
  // Deep slivers put genuine volume modes at ~chi^2 relative to the trace,
  // so the null-space cutoff must sit well below the smallest chi the
  // studies sweep (1e-6) yet above the dense solver's roundoff floor.
  const double tol = 1e-13 * tr;
  int kept = 0;
  for (int i = 0; i < m; ++i)
    if (esV.eigenvalues()(i) > tol)
      ++kept;
  if (kept == 0)
    return fallback();
  Eigen::MatrixXd W(m, kept);
  int c = 0;
  for (int i = 0; i < m; ++i)
    if (esV.eigenvalues()(i) > tol)
      W.col(c++) = esV.eigenvectors().col(i) / std::sqrt(esV.eigenvalues()(i));
  Eigen::MatrixXd Bred = W.transpose() * B * W;
  Bred = 0.5 * (Bred + Bred.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> esB(Bred);
  const double lmax = esB.eigenvalues().maxCoeff();
  return InverseEstimate{factor * std::max(lmax, 0.0), false};
}

StiffnessResult assemble_stiffness_2nd(const TensorBsplineBasis& basis,
                                       const BackgroundMesh& mesh,
                                       const CutQuadrature& quad,
                                       const std::vector<GhostFace>& faces,
                                       const DofMap& dofs,
                                       const FormulationSpec& spec,
                                       const ProblemData& data) {
  spec.validate();
  if (spec.order != 2)
    throw std::invalid_argument("assemble_stiffness_2nd: spec.order must be 2");
  if (data.q4.active() || data.m4.active() || data.g_rot.active())
    throw std::invalid_argument(
        "assemble_stiffness_2nd: fourth-order data supplied");
  check_compat(basis, mesh, &quad, &dofs);

  const int p = basis.degree();
  const int n = dofs.n_active();
  const int m = basis.funcs_per_element();
  const double kap = spec.kappa;
  const bool constrained = spec.method != BoundaryMethod::neumann;
  const bool nitsche = spec.method == BoundaryMethod::nitsche_local ||
                       spec.method == BoundaryMethod::nitsche_ghost;
  const double hK = element_h(mesh);

  StiffnessResult out;
  out.beta_value.assign(mesh.n_elements(), 0.0);

  if (constrained) {
    std::vector<CutMetrics> metrics;
    if (spec.method == BoundaryMethod::nitsche_local)
      metrics = compute_cut_metrics(quad, mesh, {BoundaryTag::dirichlet});
    for (int el = 0; el < mesh.n_elements(); ++el) {
      if (!has_surface_tag(quad.elements[el], BoundaryTag::dirichlet))
        continue;
      if (spec.method == BoundaryMethod::nitsche_local) {
        const auto est = local_inverse_estimate(
            basis, mesh, quad, mesh.multi(el), InverseEstimateKind::grad,
            BoundaryTag::dirichlet, spec.beta_cap, metrics[el].h_c);
        out.beta_value[el] = est.beta;
        if (est.fallback)
          out.warnings.push_back("inverse estimate fell back to the cap bound "
                                 "on element " +
                                 std::to_string(el));
      } else {
        out.beta_value[el] = spec.beta_bar / hK;
      }
    }
  }

  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(m) * m * mesh.n_elements());
  for (int el = 0; el < mesh.n_elements(); ++el) {
    const auto& eq = quad.elements[el];
    const auto em = mesh.multi(el);
    if (!eq.volume.empty()) {
      const auto funcs = basis.element_funcs(em);
      Eigen::MatrixXd loc = Eigen::MatrixXd::Zero(m, m);
      for (const auto& vp : eq.volume) {
        const LocalTables t = local_tables(basis, em, vp.x, 1);
        loc.noalias() += (kap * vp.w) * (t.grad * t.grad.transpose());
      }
      scatter_block(loc, funcs, dofs, trips);
    }
    if (constrained && has_surface_tag(eq, BoundaryTag::dirichlet)) {
      const double beta = out.beta_value[el];
      const auto funcs = basis.element_funcs(em);
      Eigen::MatrixXd loc = Eigen::MatrixXd::Zero(m, m);
      for (const auto& sp : eq.surface) {
        if (sp.tag != BoundaryTag::dirichlet)
          continue;
        const LocalTables t = local_tables(basis, em, sp.x, 1);
        loc.noalias() += (kap * beta * sp.w) * (t.val * t.val.transpose());
        if (nitsche) {
          const Eigen::VectorXd gn = t.grad * sp.n;
          loc.noalias() -= (kap * sp.w) * (gn * t.val.transpose());
          loc.noalias() -= (kap * sp.w) * (t.val * gn.transpose());
        }
      }
      scatter_block(loc, funcs, dofs, trips);
    }
  }
  if (spec.method == BoundaryMethod::nitsche_ghost)
    append_face_jumps(basis, mesh, faces, dofs, p, kap * spec.gamma_K,
                      2 * p - 1, trips);

  out.K.resize(n, n);
  out.K.setFromTriplets(trips.begin(), trips.end());

  // Loads, paired with the matrix terms above.
  out.load.size = n;
  if (data.f.active()) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
    for (int el = 0; el < mesh.n_elements(); ++el) {
      const auto& rule = quad.elements[el].volume;
      if (rule.empty())
        continue;
      const auto em = mesh.multi(el);
      const auto funcs = basis.element_funcs(em);
      Eigen::VectorXd loc = Eigen::VectorXd::Zero(m);
      for (const auto& vp : rule) {
        const LocalTables t = local_tables(basis, em, vp.x, 0);
        loc.noalias() += (vp.w * data.f.spatial(vp.x)) * t.val;
      }
      scatter_vec(loc, funcs, dofs, v);
    }
    push_part(out.load, std::move(v), data.f.temporal);
  }
  // Natural data enters as -int g v per the sign convention g = -kappa
  // grad(phi).n of the strong form.
  auto natural_part = [&](const Field& field, BoundaryTag tag) {
    if (!field.active())
      return;
    Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
    for (int el = 0; el < mesh.n_elements(); ++el) {
      const auto& eq = quad.elements[el];
      if (!has_surface_tag(eq, tag))
        continue;
      const auto em = mesh.multi(el);
      const auto funcs = basis.element_funcs(em);
      Eigen::VectorXd loc = Eigen::VectorXd::Zero(m);
      for (const auto& sp : eq.surface) {
        if (sp.tag != tag)
          continue;
        const LocalTables t = local_tables(basis, em, sp.x, 0);
        loc.noalias() -= (sp.w * field.spatial(sp.x)) * t.val;
      }
      scatter_vec(loc, funcs, dofs, v);
    }
    push_part(out.load, std::move(v), field.temporal);
  };
  natural_part(data.g, BoundaryTag::neumann);
  natural_part(data.g_outer, BoundaryTag::outer);
  if (data.flux.active()) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
    for (int el = 0; el < mesh.n_elements(); ++el) {
      const auto& eq = quad.elements[el];
      if (!has_surface_tag(eq, BoundaryTag::neumann))
        continue;
      const auto em = mesh.multi(el);
      const auto funcs = basis.element_funcs(em);
      Eigen::VectorXd loc = Eigen::VectorXd::Zero(m);
      for (const auto& sp : eq.surface) {
        if (sp.tag != BoundaryTag::neumann)
          continue;
        const LocalTables t = local_tables(basis, em, sp.x, 0);
        loc.noalias() -= (sp.w * data.flux.spatial(sp.x).dot(sp.n)) * t.val;
      }
      scatter_vec(loc, funcs, dofs, v);
    }
    push_part(out.load, std::move(v), data.flux.temporal);
  }

  if (constrained && data.phi_D.active()) {
    Eigen::VectorXd vpen = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd vsym = Eigen::VectorXd::Zero(n);
    for (int el = 0; el < mesh.n_elements(); ++el) {
      const auto& eq = quad.elements[el];
      if (!has_surface_tag(eq, BoundaryTag::dirichlet))
        continue;
      const double beta = out.beta_value[el];
      const auto em = mesh.multi(el);
      const auto funcs = basis.element_funcs(em);
      Eigen::VectorXd lpen = Eigen::VectorXd::Zero(m);
      Eigen::VectorXd lsym = Eigen::VectorXd::Zero(m);
      for (const auto& sp : eq.surface) {
        if (sp.tag != BoundaryTag::dirichlet)
          continue;
        const LocalTables t = local_tables(basis, em, sp.x, nitsche ? 1 : 0);
        const double phiD = data.phi_D.spatial(sp.x);
        lpen.noalias() += (kap * beta * sp.w * phiD) * t.val;
        if (nitsche)
          lsym.noalias() -= (kap * sp.w * phiD) * (t.grad * sp.n);
      }
      scatter_vec(lpen, funcs, dofs, vpen);
      if (nitsche)
        scatter_vec(lsym, funcs, dofs, vsym);
    }
    push_part(out.load, std::move(vpen), data.phi_D.temporal);
    if (nitsche)
      push_part(out.load, std::move(vsym), data.phi_D.temporal);
  }
  return out;
}

StiffnessResult assemble_stiffness_4th(const TensorBsplineBasis& basis,
                                       const BackgroundMesh& mesh,
                                       const CutQuadrature& quad,
                                       const std::vector<GhostFace>& faces,
                                       const DofMap& dofs,
                                       const FormulationSpec& spec,
                                       const ProblemData& data) {
  spec.validate();
  if (spec.order != 4)
    throw std::invalid_argument("assemble_stiffness_4th: spec.order must be 4");
  if (basis.degree() < 2)
    throw std::invalid_argument(
        "assemble_stiffness_4th: the bilaplacian needs degree >= 2");
  if (data.g.active() || data.flux.active() || data.g_outer.active())
    throw std::invalid_argument(
        "assemble_stiffness_4th: second-order data supplied");
  check_compat(basis, mesh, &quad, &dofs);

  const int p = basis.degree();
  const int n = dofs.n_active();
  const int m = basis.funcs_per_element();
  const double kap = spec.kappa;
  const bool constrained = spec.method != BoundaryMethod::neumann;
  const bool nitsche = spec.method == BoundaryMethod::nitsche_local ||
                       spec.method == BoundaryMethod::nitsche_ghost;
  const bool vc = constrained && spec.value_condition;
  const bool rc = constrained && spec.rotation_condition;
  const double hK = element_h(mesh);

  StiffnessResult out;
  out.beta_value.assign(mesh.n_elements(), 0.0);
  out.beta_rotation.assign(mesh.n_elements(), 0.0);

  if (constrained) {
    std::vector<CutMetrics> metrics;
    if (spec.method == BoundaryMethod::nitsche_local)
      metrics = compute_cut_metrics(quad, mesh, {BoundaryTag::dirichlet});
    for (int el = 0; el < mesh.n_elements(); ++el) {
      if (!has_surface_tag(quad.elements[el], BoundaryTag::dirichlet))
        continue;
      if (spec.method == BoundaryMethod::nitsche_local) {
        if (vc) {
          const auto est = local_inverse_estimate(
              basis, mesh, quad, mesh.multi(el), InverseEstimateKind::third,
              BoundaryTag::dirichlet, spec.beta_cap, metrics[el].h_c);
          out.beta_value[el] = est.beta;
          if (est.fallback)
            out.warnings.push_back("value inverse estimate fell back to the "
                                   "cap bound on element " +
                                   std::to_string(el));
        }
        if (rc) {
          const auto est = local_inverse_estimate(
              basis, mesh, quad, mesh.multi(el), InverseEstimateKind::laplace,
              BoundaryTag::dirichlet, spec.beta_cap, metrics[el].h_c);
          out.beta_rotation[el] = est.beta;
          if (est.fallback)
            out.warnings.push_back("rotation inverse estimate fell back to "
                                   "the cap bound on element " +
                                   std::to_string(el));
        }
      } else {
        if (vc)
          out.beta_value[el] = spec.beta_bar_phi / (hK * hK * hK);
        if (rc)
          out.beta_rotation[el] = spec.beta_bar_g / hK;
      }
    }
  }

  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(m) * m * mesh.n_elements());
  for (int el = 0; el < mesh.n_elements(); ++el) {
    const auto& eq = quad.elements[el];
    const auto em = mesh.multi(el);
    if (!eq.volume.empty()) {
      const auto funcs = basis.element_funcs(em);
      Eigen::MatrixXd loc = Eigen::MatrixXd::Zero(m, m);
      for (const auto& vp : eq.volume) {
        const LocalTables t = local_tables(basis, em, vp.x, 2);
        loc.noalias() += (kap * vp.w) * (t.lap * t.lap.transpose());
      }
      scatter_block(loc, funcs, dofs, trips);
    }
    if (constrained && has_surface_tag(eq, BoundaryTag::dirichlet)) {
      const double bphi = out.beta_value[el];
      const double bg = out.beta_rotation[el];
      const auto funcs = basis.element_funcs(em);
      Eigen::MatrixXd loc = Eigen::MatrixXd::Zero(m, m);
      for (const auto& sp : eq.surface) {
        if (sp.tag != BoundaryTag::dirichlet)
          continue;
        const LocalTables t = local_tables(basis, em, sp.x, nitsche ? 3 : 1);
        if (vc) {
          loc.noalias() += (kap * bphi * sp.w) * (t.val * t.val.transpose());
          if (nitsche) {
            const Eigen::VectorXd gl = t.glap * sp.n;
            loc.noalias() += (kap * sp.w) * (gl * t.val.transpose());
            loc.noalias() += (kap * sp.w) * (t.val * gl.transpose());
          }
        }
        if (rc) {
          const Eigen::VectorXd gn = t.grad * sp.n;
          loc.noalias() += (kap * bg * sp.w) * (gn * gn.transpose());
          if (nitsche) {
            loc.noalias() -= (kap * sp.w) * (gn * t.lap.transpose());
            loc.noalias() -= (kap * sp.w) * (t.lap * gn.transpose());
          }
        }
      }
      scatter_block(loc, funcs, dofs, trips);
    }
  }
  if (spec.method == BoundaryMethod::nitsche_ghost)
    append_face_jumps(basis, mesh, faces, dofs, p, kap * spec.gamma_K,
                      2 * p - 3, trips);

  out.K.resize(n, n);
  out.K.setFromTriplets(trips.begin(), trips.end());

  out.load.size = n;
  if (data.f.active()) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
    for (int el = 0; el < mesh.n_elements(); ++el) {
      const auto& rule = quad.elements[el].volume;
      if (rule.empty())
        continue;
      const auto em = mesh.multi(el);
      const auto funcs = basis.element_funcs(em);
      Eigen::VectorXd loc = Eigen::VectorXd::Zero(m);
      for (const auto& vp : rule) {
        const LocalTables t = local_tables(basis, em, vp.x, 0);
        loc.noalias() += (vp.w * data.f.spatial(vp.x)) * t.val;
      }
      scatter_vec(loc, funcs, dofs, v);
    }
    push_part(out.load, std::move(v), data.f.temporal);
  }
  // Natural data: -int q v - int m grad(v).n on the Neumann-tagged boundary.
  auto natural_part = [&](const Field& field, bool moment) {
    if (!field.active())
      return;
    Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
    for (int el = 0; el < mesh.n_elements(); ++el) {
      const auto& eq = quad.elements[el];
      if (!has_surface_tag(eq, BoundaryTag::neumann))
        continue;
      const auto em = mesh.multi(el);
      const auto funcs = basis.element_funcs(em);
      Eigen::VectorXd loc = Eigen::VectorXd::Zero(m);
      for (const auto& sp : eq.surface) {
        if (sp.tag != BoundaryTag::neumann)
          continue;
        const LocalTables t = local_tables(basis, em, sp.x, moment ? 1 : 0);
        const double val = field.spatial(sp.x);
        if (moment)
          loc.noalias() -= (sp.w * val) * (t.grad * sp.n);
        else
          loc.noalias() -= (sp.w * val) * t.val;
      }
      scatter_vec(loc, funcs, dofs, v);
    }
    push_part(out.load, std::move(v), field.temporal);
  };
  natural_part(data.q4, false);
  natural_part(data.m4, true);

  auto essential_part = [&](const Field& field, bool rotation) {
    if (!field.active())
      return;
    Eigen::VectorXd vpen = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd vsym = Eigen::VectorXd::Zero(n);
    for (int el = 0; el < mesh.n_elements(); ++el) {
      const auto& eq = quad.elements[el];
      if (!has_surface_tag(eq, BoundaryTag::dirichlet))
        continue;
      const double beta =
          rotation ? out.beta_rotation[el] : out.beta_value[el];
      const auto em = mesh.multi(el);
      const auto funcs = basis.element_funcs(em);
      Eigen::VectorXd lpen = Eigen::VectorXd::Zero(m);
      Eigen::VectorXd lsym = Eigen::VectorXd::Zero(m);
      for (const auto& sp : eq.surface) {
        if (sp.tag != BoundaryTag::dirichlet)
          continue;
        const LocalTables t = local_tables(basis, em, sp.x, nitsche ? 3 : 1);
        const double val = field.spatial(sp.x);
        if (rotation) {
          lpen.noalias() += (kap * beta * sp.w * val) * (t.grad * sp.n);
          if (nitsche)
            lsym.noalias() -= (kap * sp.w * val) * t.lap;
        } else {
          lpen.noalias() += (kap * beta * sp.w * val) * t.val;
          if (nitsche)
            lsym.noalias() += (kap * sp.w * val) * (t.glap * sp.n);
        }
      }
      scatter_vec(lpen, funcs, dofs, vpen);
      if (nitsche)
        scatter_vec(lsym, funcs, dofs, vsym);
    }
    push_part(out.load, std::move(vpen), field.temporal);
    if (nitsche)
      push_part(out.load, std::move(vsym), field.temporal);
  };
  if (vc)
    essential_part(data.phi_D, false);
  if (rc)
    essential_part(data.g_rot, true);
  return out;
}

Eigen::VectorXd assemble_load(const TensorBsplineBasis& basis,
                              const BackgroundMesh& mesh,
                              const CutQuadrature& quad,
                              const std::vector<GhostFace>& faces,
                              const DofMap& dofs, const FormulationSpec& spec,
                              const ProblemData& data, double t) {
  const StiffnessResult st =
      spec.order == 2
          ? assemble_stiffness_2nd(basis, mesh, quad, faces, dofs, spec, data)
          : assemble_stiffness_4th(basis, mesh, quad, faces, dofs, spec, data);
  return st.load.at(t);
}

AssembledSystem assemble_system(const TensorBsplineBasis& basis,
                                const BackgroundMesh& mesh,
                                const CutQuadrature& quad,
                                const std::vector<GhostFace>& faces,
                                const DofMap& dofs, const FormulationSpec& spec,
                                const ProblemData& data) {
  spec.validate();
  AssembledSystem sys;
  sys.n_dofs = dofs.n_active();

  SparseMat M = assemble_mass_consistent(basis, mesh, quad, dofs, spec.rho);
  if (spec.mass == MassTreatment::lumped) {
    M = lump_rowsum(M);
    sys.terms.push_back("mass:lumped");
  } else {
    sys.terms.push_back("mass:consistent");
  }
  if (spec.ghost_mass) {
    M = M + assemble_ghost_mass(basis, mesh, faces, dofs, spec.rho,
                                spec.gamma_M);
    sys.terms.push_back("mass:ghost");
  }
  sys.mass_is_diagonal =
      spec.mass == MassTreatment::lumped && !spec.ghost_mass;
  sys.M = std::move(M);

  StiffnessResult st =
      spec.order == 2
          ? assemble_stiffness_2nd(basis, mesh, quad, faces, dofs, spec, data)
          : assemble_stiffness_4th(basis, mesh, quad, faces, dofs, spec, data);
  sys.terms.push_back(spec.order == 2 ? "stiffness:grad-core"
                                      : "stiffness:bilaplace-core");
  switch (spec.method) {
  case BoundaryMethod::neumann:
    break;
  case BoundaryMethod::penalty:
    sys.terms.push_back("stiffness:penalty");
    break;
  case BoundaryMethod::nitsche_local:
    sys.terms.push_back("stiffness:penalty(local-estimate)");
    sys.terms.push_back("stiffness:nitsche-consistency");
    break;
  case BoundaryMethod::nitsche_ghost:
    sys.terms.push_back("stiffness:penalty");
    sys.terms.push_back("stiffness:nitsche-consistency");
    sys.terms.push_back("stiffness:ghost-penalty");
    break;
  }
  sys.K = std::move(st.K);
  sys.load = std::move(st.load);
  sys.beta_value = std::move(st.beta_value);
  sys.beta_rotation = std::move(st.beta_rotation);
  sys.warnings = std::move(st.warnings);

  check_symmetric(sys.M, "mass");
  check_symmetric(sys.K, "stiffness");
  if (sys.mass_is_diagonal) {
    for (int i = 0; i < sys.n_dofs; ++i)
      if (!(sys.M.coeff(i, i) > 0.0))
        throw std::runtime_error("forms: lumped mass lost positivity");
  } else {
    check_mass_spd(sys.M);
  }
  return sys;
}

} // namespace cutiga
