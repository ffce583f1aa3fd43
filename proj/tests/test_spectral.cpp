#include "doctest.h"

#include "cutiga/forms.hpp"
#include "cutiga/rng.hpp"
#include "cutiga/spectral.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <string>
#include <cmath>
#include <utility>
#include <vector>

using namespace cutiga;

namespace {

/// Pencil with an exactly known spectrum: congruence-transform a diagonal
/// eigenvalue matrix, K = L Q^T D Q L^T against M = L L^T, so the
/// generalized eigenvalues are the diagonal entries by construction.
struct KnownPencil {
  SparseMat K, M;
  double lambda_min, lambda_max;
};

KnownPencil random_known_pencil(int n, SplitMix64& rng) {
  Eigen::MatrixXd G(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      G(i, j) = rng.uniform(-1.0, 1.0);
  const Eigen::MatrixXd Q =
      Eigen::HouseholderQR<Eigen::MatrixXd>(G).householderQ();
  Eigen::VectorXd lam(n);
  for (int i = 0; i < n; ++i)
    lam[i] = rng.uniform(0.5, 50.0);
  std::sort(lam.data(), lam.data() + n);
  lam[0] *= 0.8; // keep relative gaps at both spectrum ends so the
  lam[n - 1] *= 1.25; // iterative paths have room to converge
  Eigen::MatrixXd L = Eigen::MatrixXd::Identity(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = std::max(0, i - 3); j < i; ++j)
      L(i, j) = rng.uniform(-0.3, 0.3);
  Eigen::MatrixXd K = L * Q.transpose() * lam.asDiagonal() * Q * L.transpose();
  Eigen::MatrixXd M = L * L.transpose();
  K = 0.5 * (K + K.transpose()).eval();
  M = 0.5 * (M + M.transpose()).eval();
  return {K.sparseView(), M.sparseView(), lam[0], lam[n - 1]};
}

struct ProbeSystem {
  ProbeBench bench;
  AssembledSystem sys;
};

ProbeSystem assemble_probe(ProbeKind kind, int order, TableRow row,
                           MassColumn mass, int p, int d, double chi,
                           int n_override = 0) {
  ProbeBench bench = make_cut_probe(kind, p, d, chi, n_override);
  const FormulationSpec spec = table_formulation(order, row, mass);
  const ProblemData data;
  AssembledSystem sys = assemble_system(bench.basis, bench.mesh, bench.quad,
                                        bench.faces, bench.dofs, spec, data);
  return {std::move(bench), std::move(sys)};
}

/// Probe Rayleigh quotient swept over chi = 10^{-1} .. 10^{-5}, fitted in
/// log-log. This is the measured counterpart of the tabulated exponents.
double measured_cell_exponent(ProbeKind kind, int order, TableRow row,
                              MassColumn mass, int p, int d) {
  std::vector<std::pair<double, double>> samples;
  for (int k = 2; k <= 10; k += 2) {
    const double chi = std::pow(10.0, -k / 2.0);
    const ProbeSystem ps = assemble_probe(kind, order, row, mass, p, d, chi);
    samples.emplace_back(chi,
                         rayleigh_quotient(ps.sys.K, ps.sys.M, ps.bench.probe.xi));
  }
  return fit_scaling_exponent(samples).exponent;
}

SparseMat sparse1x1(double v) {
  SparseMat A(1, 1);
  A.insert(0, 0) = v;
  A.makeCompressed();
  return A;
}

} // namespace

TEST_CASE("scalar and identity pencils") {
  const SparseMat K = sparse1x1(4.0), M = sparse1x1(1.0);
  CHECK(max_generalized_eigenvalue(K, M) == doctest::Approx(4.0));
  CHECK(min_generalized_eigenvalue(K, M) == doctest::Approx(4.0));
  CHECK(critical_timestep(4.0) == doctest::Approx(1.0));

  EigenOptions iter;
  iter.path = EigenOptions::Path::iterative;
  CHECK(max_generalized_eigenvalue(K, M, iter) == doctest::Approx(4.0));
  CHECK(min_generalized_eigenvalue(K, M, iter) == doctest::Approx(4.0));

  Eigen::MatrixXd I3 = Eigen::MatrixXd::Identity(3, 3);
  const Eigen::VectorXd ev = dense_generalized_eigenvalues(I3, I3);
  REQUIRE(ev.size() == 3);
  for (int i = 0; i < 3; ++i)
    CHECK(ev[i] == doctest::Approx(1.0));
}

TEST_CASE("diagonal pencil on both paths") {
  SparseMat K(2, 2), M(2, 2);
  K.insert(0, 0) = 1.0;
  K.insert(1, 1) = 4.0;
  M.setIdentity();
  for (auto path :
       {EigenOptions::Path::dense, EigenOptions::Path::iterative}) {
    EigenOptions opts;
    opts.path = path;
    CHECK(max_generalized_eigenvalue(K, M, opts) == doctest::Approx(4.0));
    CHECK(min_generalized_eigenvalue(K, M, opts) == doctest::Approx(1.0));
  }
  const SpectralResult r = analyze_pencil(K, M, "diag", 0, 1.0);
  CHECK(r.dt_crit == doctest::Approx(1.0));
}

TEST_CASE("known-spectrum pencils: both paths hit the constructed extremes") {
  SplitMix64 rng(2026);
  EigenOptions iter;
  iter.path = EigenOptions::Path::iterative;
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 20 + static_cast<int>(rng.uniform(0.0, 100.0));
    const KnownPencil pencil = random_known_pencil(n, rng);

    const Eigen::VectorXd ev = dense_generalized_eigenvalues(
        Eigen::MatrixXd(pencil.K), Eigen::MatrixXd(pencil.M));
    CHECK(ev[0] ==
          doctest::Approx(pencil.lambda_min).epsilon(1e-9));
    CHECK(ev[n - 1] ==
          doctest::Approx(pencil.lambda_max).epsilon(1e-9));

    const double lmax = max_generalized_eigenvalue(pencil.K, pencil.M, iter);
    const double lmin = min_generalized_eigenvalue(pencil.K, pencil.M, iter);
    CHECK(lmax == doctest::Approx(pencil.lambda_max).epsilon(1e-6));
    CHECK(lmin == doctest::Approx(pencil.lambda_min).epsilon(1e-6));

    Eigen::VectorXd x(n);
    for (int i = 0; i < n; ++i)
      x[i] = rng.uniform(-1.0, 1.0);
    const double rq = rayleigh_quotient(pencil.K, pencil.M, x);
    CHECK(rq <= pencil.lambda_max * (1 + 1e-10));
    CHECK(rq >= pencil.lambda_min * (1 - 1e-10));
  }
}

TEST_CASE("uncut lumped rod: critical step equals the element size") {
  const int n = 8, p = 1;
  const auto dom = ImplicitDomain::everything(1);
  BackgroundMesh mesh = classify_elements(dom, {n, 1}, Point(0, 0), Point(1, 0));
  CutQuadrature quad = build_cut_quadrature(dom, mesh, p);
  const std::vector<GhostFace> faces = extract_ghost_faces(mesh);
  const TensorBsplineBasis basis(p, n, 0.0, 1.0);
  const DofMap dofs(basis, mesh);
  const FormulationSpec spec = table_formulation(2, TableRow::neumann,
                                                 MassColumn::lumped);
  const ProblemData data;
  const AssembledSystem sys =
      assemble_system(basis, mesh, quad, faces, dofs, spec, data);
  const double h = 1.0 / n;

  // the alternating mode is an exact eigenvector of the lumped pencil at
  // 4/h^2, including the half-mass end rows, so dt_crit is exactly h
  const double lmax = max_generalized_eigenvalue(sys.K, sys.M);
  CHECK(lmax == doctest::Approx(4.0 / (h * h)).epsilon(1e-12));
  CHECK(critical_timestep(lmax) == doctest::Approx(h).epsilon(1e-12));

  EigenOptions iter;
  iter.path = EigenOptions::Path::iterative;
  CHECK(max_generalized_eigenvalue(sys.K, sys.M, iter) ==
        doctest::Approx(4.0 / (h * h)).epsilon(1e-6));
  CHECK(min_generalized_eigenvalue(sys.K, sys.M, iter) ==
        doctest::Approx(0.0).scale(lmax).epsilon(1e-6));
}

TEST_CASE("cut rod spectrum: consistent mass diverges at minus two, lumped "
          "stays bounded") {
  const int p = 2, n = 4;
  std::vector<std::pair<double, double>> consistent_lmax;
  double lumped_worst = 0;
  for (int k = 2; k <= 10; k += 2) {
    const double chi = std::pow(10.0, -k / 2.0);
    const ProbeSystem cons =
        assemble_probe(ProbeKind::sliver1, 2, TableRow::neumann,
                       MassColumn::consistent, p, 1, chi, n);
    consistent_lmax.emplace_back(
        chi, max_generalized_eigenvalue(cons.sys.K, cons.sys.M));
    const ProbeSystem lump =
        assemble_probe(ProbeKind::sliver1, 2, TableRow::neumann,
                       MassColumn::lumped, p, 1, chi, n);
    lumped_worst = std::max(
        lumped_worst, max_generalized_eigenvalue(lump.sys.K, lump.sys.M));
  }
  const ScalingFit fit = fit_scaling_exponent(consistent_lmax);
  CHECK(std::abs(fit.exponent - (-2.0)) <= 0.1);

  // uncut reference on the same mesh and degree
  const auto dom = ImplicitDomain::everything(1);
  BackgroundMesh mesh = classify_elements(dom, {n, 1}, Point(0, 0), Point(1, 0));
  CutQuadrature quad = build_cut_quadrature(dom, mesh, p);
  const TensorBsplineBasis basis(p, n, 0.0, 1.0);
  const DofMap dofs(basis, mesh);
  const FormulationSpec spec = table_formulation(2, TableRow::neumann,
                                                 MassColumn::lumped);
  const ProblemData data;
  const AssembledSystem uncut =
      assemble_system(basis, mesh, quad, {}, dofs, spec, data);
  const double uncut_lmax = max_generalized_eigenvalue(uncut.K, uncut.M);
  CHECK(lumped_worst <= 2.0 * uncut_lmax);
}

TEST_CASE("power-law fits recover exponent, intercept, and range") {
  std::vector<std::pair<double, double>> samples;
  for (int k = 0; k <= 8; ++k) {
    const double chi = std::pow(10.0, -0.5 * k - 1);
    samples.emplace_back(chi, 7.0 * chi * chi * chi);
  }
  const ScalingFit fit = fit_scaling_exponent(samples);
  CHECK(fit.exponent == doctest::Approx(3.0).epsilon(1e-10));
  CHECK(fit.intercept == doctest::Approx(std::log10(7.0)).epsilon(1e-10));
  CHECK(fit.r_squared == doctest::Approx(1.0));
  CHECK(fit.chi_lo == doctest::Approx(1e-5));
  CHECK(fit.chi_hi == doctest::Approx(1e-1));

  using Samples = std::vector<std::pair<double, double>>;
  CHECK_THROWS_AS(static_cast<void>(fit_scaling_exponent(
                      Samples{{1, 1}, {0.1, 1}, {0.01, 1}, {0.001, 1}})),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      static_cast<void>(fit_scaling_exponent(Samples{
          {1, 1}, {0.5, 1}, {0.25, 1}, {0.125, 1}, {0.0625, 1}})),
      std::invalid_argument);
  CHECK_THROWS_AS(
      static_cast<void>(fit_scaling_exponent(Samples{
          {1, 1}, {0.1, 1}, {0.01, -2}, {0.001, 1}, {0.0001, 1}})),
      std::invalid_argument);
}

TEST_CASE("probe anchoring matches the cut layout") {
  SUBCASE("corner probes pin a single coefficient") {
    const ProbeBench b = make_cut_probe(ProbeKind::corner1, 2, 2, 1e-3);
    CHECK(b.mesh.cls(b.probe.element) == ElementClass::cut);
    int nonzeros = 0, where = -1;
    for (int i = 0; i < b.probe.xi.size(); ++i)
      if (b.probe.xi[i] != 0) {
        ++nonzeros;
        where = i;
      }
    CHECK(nonzeros == 1);
    const int k = 2, p = 2;
    CHECK(where == b.dofs.active_of(b.basis.func_index({k + p, k + p})));
  }
  SUBCASE("sliver probes span the full tangential strip") {
    const ProbeBench b = make_cut_probe(ProbeKind::sliver2, 1, 2, 1e-2);
    int nonzeros = 0;
    for (int i = 0; i < b.probe.xi.size(); ++i)
      if (b.probe.xi[i] != 0)
        ++nonzeros;
    CHECK(nonzeros == b.basis.n_funcs(1));
  }
  SUBCASE("one dimension uses single coefficients for both kinds") {
    const ProbeBench b1 = make_cut_probe(ProbeKind::sliver1, 2, 1, 1e-4);
    const ProbeBench b2 = make_cut_probe(ProbeKind::sliver2, 2, 1, 1e-4);
    CHECK((b1.probe.xi.array() != 0).count() == 1);
    CHECK((b2.probe.xi.array() != 0).count() == 1);
  }
  SUBCASE("measured chi agrees with the prescription") {
    for (const double chi : {1e-2, 1e-4}) {
      const ProbeBench bs = make_cut_probe(ProbeKind::sliver1, 1, 2, chi);
      const auto ms = compute_cut_metrics(bs.quad, bs.mesh,
                                          {BoundaryTag::dirichlet});
      CHECK(ms[bs.mesh.index(bs.probe.element)].chi ==
            doctest::Approx(chi).epsilon(1e-9));
      const ProbeBench bc = make_cut_probe(ProbeKind::corner2, 1, 2, chi);
      const auto mc = compute_cut_metrics(bc.quad, bc.mesh,
                                          {BoundaryTag::dirichlet});
      CHECK(mc[bc.mesh.index(bc.probe.element)].chi ==
            doctest::Approx(chi).epsilon(1e-9));
    }
  }
  SUBCASE("unreachable chi is rejected") {
    CHECK_THROWS_AS(static_cast<void>(make_cut_probe(ProbeKind::sliver1, 1, 1,
                                                     0.6)),
                    std::invalid_argument);
    CHECK_THROWS_AS(static_cast<void>(make_cut_probe(ProbeKind::sliver1, 1, 1,
                                                     1e-13)),
                    std::invalid_argument);
    CHECK_THROWS_AS(static_cast<void>(make_cut_probe(ProbeKind::corner1, 1, 2,
                                                     1e-8)),
                    std::invalid_argument);
    CHECK_THROWS_AS(static_cast<void>(make_cut_probe(ProbeKind::corner1, 1, 3,
                                                     1e-3)),
                    std::invalid_argument);
  }
}

TEST_CASE("rayleigh quotient basics") {
  SparseMat I(3, 3);
  I.setIdentity();
  Eigen::VectorXd x(3);
  x << 1, -2, 3;
  CHECK(rayleigh_quotient(I, I, x) == doctest::Approx(1.0));

  SparseMat M(2, 2);
  M.insert(0, 0) = 1.0; // second diagonal entry left structurally zero
  M.makeCompressed();
  SparseMat K(2, 2);
  K.setIdentity();
  Eigen::VectorXd e2(2);
  e2 << 0, 1;
  CHECK_THROWS_AS(static_cast<void>(rayleigh_quotient(K, M, e2)),
                  std::invalid_argument);
  Eigen::VectorXd wrong(3);
  wrong.setOnes();
  CHECK_THROWS_AS(static_cast<void>(rayleigh_quotient(K, M, wrong)),
                  std::invalid_argument);
}

TEST_CASE("second order table cells reproduce the frozen exponents") {
  struct Cell {
    ProbeKind kind;
    TableRow row;
    MassColumn mass;
    int p, d, expected;
  };
  const Cell cells[] = {
      {ProbeKind::sliver1, TableRow::neumann, MassColumn::lumped, 1, 1, -1},
      {ProbeKind::sliver1, TableRow::neumann, MassColumn::ghost_lumped, 1, 1,
       1},
      {ProbeKind::corner1, TableRow::neumann, MassColumn::consistent, 1, 2,
       -2},
      {ProbeKind::sliver2, TableRow::nitsche_value, MassColumn::consistent, 1,
       1, -1},
      {ProbeKind::sliver1, TableRow::nitsche_ghost, MassColumn::lumped, 2, 2,
       -3},
  };
  for (const Cell& c : cells) {
    CHECK(expected_rayleigh_exponent(2, c.row, c.mass, c.kind, c.p, c.d) ==
          c.expected);
    const double slope =
        measured_cell_exponent(c.kind, 2, c.row, c.mass, c.p, c.d);
    INFO("row ", std::string(to_string(c.row)), " mass ",
         std::string(to_string(c.mass)), " kind ",
         std::string(to_string(c.kind)), " p ", c.p, " d ", c.d);
    CHECK(std::abs(slope - c.expected) <= 0.15);
  }
}

TEST_CASE("fourth order table cells reproduce the frozen exponents") {
  struct Cell {
    ProbeKind kind;
    TableRow row;
    MassColumn mass;
    int p, d, expected;
  };
  const Cell cells[] = {
      {ProbeKind::sliver2, TableRow::nitsche_value, MassColumn::consistent, 2,
       2, -3},
      {ProbeKind::sliver1, TableRow::neumann, MassColumn::consistent, 2, 1,
       -4},
      {ProbeKind::sliver2, TableRow::nitsche_rotation, MassColumn::lumped, 2,
       1, -1},
  };
  for (const Cell& c : cells) {
    CHECK(expected_rayleigh_exponent(4, c.row, c.mass, c.kind, c.p, c.d) ==
          c.expected);
    const double slope =
        measured_cell_exponent(c.kind, 4, c.row, c.mass, c.p, c.d);
    INFO("row ", std::string(to_string(c.row)), " mass ",
         std::string(to_string(c.mass)), " kind ",
         std::string(to_string(c.kind)), " p ", c.p, " d ", c.d);
    CHECK(std::abs(slope - c.expected) <= 0.15);
  }
}

TEST_CASE("critical timestep guards") {
  CHECK(critical_timestep(4.0) == doctest::Approx(1.0));
  CHECK_THROWS_AS(static_cast<void>(critical_timestep(0.0)),
                  std::invalid_argument);
  CHECK_THROWS_AS(static_cast<void>(critical_timestep(-1.0)),
                  std::invalid_argument);
  CHECK_THROWS_AS(static_cast<void>(critical_timestep(
                      std::numeric_limits<double>::quiet_NaN())),
                  std::invalid_argument);
}

TEST_CASE("analyze_pencil fills the record coherently") {
  SparseMat K(2, 2), M(2, 2);
  K.insert(0, 0) = 9.0;
  K.insert(1, 1) = 1.0;
  M.setIdentity();
  const SpectralResult r = analyze_pencil(K, M, "penalty", 7, 0.25);
  CHECK(r.lambda_max == doctest::Approx(9.0));
  CHECK(r.lambda_min == doctest::Approx(1.0));
  CHECK(r.dt_crit == doctest::Approx(2.0 / 3.0));
  CHECK(r.chi_min == doctest::Approx(0.25));
  CHECK(r.formulation == "penalty");
  CHECK(r.seed == 7);
}

TEST_CASE("non positive definite mass is rejected on both paths") {
  SparseMat K(2, 2), M(2, 2);
  K.setIdentity();
  M.insert(0, 0) = 1.0;
  M.insert(1, 1) = -1.0;
  M.makeCompressed();
  for (auto path :
       {EigenOptions::Path::dense, EigenOptions::Path::iterative}) {
    EigenOptions opts;
    opts.path = path;
    CHECK_THROWS_AS(
        static_cast<void>(max_generalized_eigenvalue(K, M, opts)),
        std::runtime_error);
    CHECK_THROWS_AS(
        static_cast<void>(min_generalized_eigenvalue(K, M, opts)),
        std::runtime_error);
  }
  SparseMat bad(3, 2);
  CHECK_THROWS_AS(static_cast<void>(max_generalized_eigenvalue(bad, M)),
                  std::invalid_argument);
}

TEST_CASE("expected exponent table validates its inputs") {
  CHECK(expected_rayleigh_exponent(2, TableRow::neumann,
                                   MassColumn::consistent, ProbeKind::sliver1,
                                   1, 1) == -2);
  CHECK(expected_rayleigh_exponent(2, TableRow::nitsche_ghost,
                                   MassColumn::ghost_lumped,
                                   ProbeKind::sliver1, 2, 1) == 0);
  CHECK(expected_rayleigh_exponent(2, TableRow::penalty_value,
                                   MassColumn::lumped, ProbeKind::sliver2, 2,
                                   2) == 0);
  CHECK(expected_rayleigh_exponent(4, TableRow::neumann, MassColumn::lumped,
                                   ProbeKind::corner1, 2, 2) == -4 + 2 * 2);
  CHECK(expected_rayleigh_exponent(4, TableRow::penalty_rotation,
                                   MassColumn::lumped, ProbeKind::sliver1, 2,
                                   1) == 2 - 4);
  CHECK_THROWS_AS(static_cast<void>(expected_rayleigh_exponent(
                      2, TableRow::penalty_rotation, MassColumn::lumped,
                      ProbeKind::sliver1, 1, 1)),
                  std::invalid_argument);
  CHECK_THROWS_AS(static_cast<void>(expected_rayleigh_exponent(
                      4, TableRow::neumann, MassColumn::lumped,
                      ProbeKind::sliver1, 1, 1)),
                  std::invalid_argument);
  CHECK_THROWS_AS(static_cast<void>(expected_rayleigh_exponent(
                      3, TableRow::neumann, MassColumn::lumped,
                      ProbeKind::sliver1, 2, 1)),
                  std::invalid_argument);
  CHECK_THROWS_AS(static_cast<void>(expected_rayleigh_exponent(
                      2, TableRow::neumann, MassColumn::lumped,
                      ProbeKind::sliver1, 2, 3)),
                  std::invalid_argument);
}

TEST_CASE("table formulations carry the advertised methods") {
  const FormulationSpec ghost =
      table_formulation(2, TableRow::nitsche_ghost, MassColumn::ghost_lumped);
  CHECK(ghost.method == BoundaryMethod::nitsche_ghost);
  CHECK(ghost.gamma_K == doctest::Approx(1.0));
  CHECK(ghost.ghost_mass);
  CHECK(ghost.mass == MassTreatment::lumped);

  const FormulationSpec rot =
      table_formulation(4, TableRow::penalty_rotation, MassColumn::consistent);
  CHECK(rot.method == BoundaryMethod::penalty);
  CHECK(rot.order == 4);
  CHECK(!rot.value_condition);
  CHECK(rot.rotation_condition);
  CHECK(!rot.ghost_mass);

  const FormulationSpec neu =
      table_formulation(2, TableRow::neumann, MassColumn::consistent);
  CHECK(neu.method == BoundaryMethod::neumann);
  CHECK(neu.mass == MassTreatment::consistent);
}
