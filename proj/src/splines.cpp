#include "cutiga/splines.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cutiga {

KnotVector::KnotVector(int degree, int n_elements, double lo, double hi)
    : degree_(degree), n_elements_(n_elements), lo_(lo), hi_(hi),
      h_((hi - lo) / n_elements) {
  if (degree < 1)
    throw std::invalid_argument("KnotVector: degree must be >= 1");
  if (n_elements < 1)
    throw std::invalid_argument("KnotVector: need at least one element");
  if (!(hi > lo))
    throw std::invalid_argument("KnotVector: empty interval");

  // Ends repeated degree + 1 times, single interior knots: C^{p-1} space.
  knots_.reserve(n_elements + 2 * degree + 1);
  for (int i = 0; i <= degree; ++i)
    knots_.push_back(lo);
  for (int k = 1; k < n_elements; ++k)
    knots_.push_back(lo + h_ * k);
  for (int i = 0; i <= degree; ++i)
    knots_.push_back(hi);
}

int KnotVector::element_of(double x) const {
  const int e = static_cast<int>(std::floor((x - lo_) / h_));
  return std::clamp(e, 0, n_elements_ - 1);
}

Eigen::MatrixXd KnotVector::eval_element(int e, double x, int nder) const {
  if (e < 0 || e >= n_elements_)
    throw std::invalid_argument("KnotVector::eval_element: bad element");
  const double pad = 1e-12 * (hi_ - lo_);
  if (x < breakpoint(e) - pad || x > breakpoint(e + 1) + pad)
    throw std::invalid_argument(
        "KnotVector::eval_element: point not in element");
  if (nder < 0)
    throw std::invalid_argument("KnotVector::eval_element: nder < 0");

  const int p = degree_;
  const int span = e + p; // knots_[span] <= x <= knots_[span + 1]
  const double* t = knots_.data();

  // Standard knot-insertion triangle: ndu(j, r) holds basis values of degree
  // j on the diagonal and knot differences below it.
  Eigen::MatrixXd ndu(p + 1, p + 1);
  Eigen::VectorXd left(p + 1), right(p + 1);
  ndu(0, 0) = 1.0;
  for (int j = 1; j <= p; ++j) {
    left(j) = x - t[span + 1 - j];
    right(j) = t[span + j] - x;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      ndu(j, r) = right(r + 1) + left(j - r);
      const double temp = ndu(r, j - 1) / ndu(j, r);
      ndu(r, j) = saved + right(r + 1) * temp;
      saved = left(j - r) * temp;
    }
    ndu(j, j) = saved;
  }

  Eigen::MatrixXd ders = Eigen::MatrixXd::Zero(nder + 1, p + 1);
  for (int j = 0; j <= p; ++j)
    ders(0, j) = ndu(j, p);

  // Derivatives from differences of lower-degree values; orders beyond p
  // stay zero.
  const int nd = std::min(nder, p);
  Eigen::MatrixXd a(2, p + 1);
  for (int r = 0; r <= p; ++r) {
    int s1 = 0, s2 = 1;
    a(0, 0) = 1.0;
    for (int k = 1; k <= nd; ++k) {
      double d = 0.0;
      const int rk = r - k;
      const int pk = p - k;
      if (r >= k) {
        a(s2, 0) = a(s1, 0) / ndu(pk + 1, rk);
        d = a(s2, 0) * ndu(rk, pk);
      }
      const int j1 = (rk >= -1) ? 1 : -rk;
      const int j2 = (r - 1 <= pk) ? k - 1 : p - r;
      for (int j = j1; j <= j2; ++j) {
        a(s2, j) = (a(s1, j) - a(s1, j - 1)) / ndu(pk + 1, rk + j);
        d += a(s2, j) * ndu(rk + j, pk);
      }
      if (r <= pk) {
        a(s2, k) = -a(s1, k - 1) / ndu(pk + 1, r);
        d += a(s2, k) * ndu(r, pk);
      }
      ders(k, r) = d;
      std::swap(s1, s2);
    }
  }
  double factor = p;
  for (int k = 1; k <= nd; ++k) {
    for (int j = 0; j <= p; ++j)
      ders(k, j) *= factor;
    factor *= (p - k);
  }
  return ders;
}

Eigen::VectorXd KnotVector::jump_at_breakpoint(int k, int order) const {
  if (k < 1 || k > n_elements_ - 1)
    throw std::invalid_argument(
        "KnotVector::jump_at_breakpoint: not an interior breakpoint");
  if (order < 0)
    throw std::invalid_argument("KnotVector::jump_at_breakpoint: order < 0");

  const int p = degree_;
  const double x = breakpoint(k);
  const Eigen::MatrixXd right = eval_element(k, x, order);     // funcs k..k+p
  const Eigen::MatrixXd left = eval_element(k - 1, x, order);  // k-1..k-1+p

  // Union of supported functions: k-1 .. k+p  (p + 2 of them).
  Eigen::VectorXd jump = Eigen::VectorXd::Zero(p + 2);
  for (int j = 0; j <= p; ++j) {
    jump(j + 1) += right(order, j); // function k + j
    jump(j) -= left(order, j);      // function k - 1 + j
  }
  return jump;
}

namespace {

std::array<int, 2> to_multi(int flat, int minor) {
  return {flat / minor, flat % minor};
}

} // namespace

TensorBsplineBasis::TensorBsplineBasis(int degree, int n_elements, double lo,
                                       double hi)
    : dim_(1), axes_{KnotVector(degree, n_elements, lo, hi),
                     KnotVector(degree, 1, 0.0, 1.0)} {}

TensorBsplineBasis::TensorBsplineBasis(int degree, std::array<int, 2> n_el,
                                       Point lo, Point hi)
    : dim_(2), axes_{KnotVector(degree, n_el[0], lo.x(), hi.x()),
                     KnotVector(degree, n_el[1], lo.y(), hi.y())} {}

int TensorBsplineBasis::n_funcs() const noexcept {
  return dim_ == 1 ? axes_[0].n_funcs()
                   : axes_[0].n_funcs() * axes_[1].n_funcs();
}

int TensorBsplineBasis::n_elements() const noexcept {
  return dim_ == 1 ? axes_[0].n_elements()
                   : axes_[0].n_elements() * axes_[1].n_elements();
}

int TensorBsplineBasis::func_index(std::array<int, 2> i) const noexcept {
  return dim_ == 1 ? i[0] : i[0] * axes_[1].n_funcs() + i[1];
}

int TensorBsplineBasis::element_index(std::array<int, 2> e) const noexcept {
  return dim_ == 1 ? e[0] : e[0] * axes_[1].n_elements() + e[1];
}

std::array<int, 2> TensorBsplineBasis::element_multi(int e) const noexcept {
  return dim_ == 1 ? std::array<int, 2>{e, 0}
                   : to_multi(e, axes_[1].n_elements());
}

std::array<int, 2> TensorBsplineBasis::func_multi(int g) const noexcept {
  return dim_ == 1 ? std::array<int, 2>{g, 0} : to_multi(g, axes_[1].n_funcs());
}

std::array<int, 2> TensorBsplineBasis::element_of(const Point& x) const {
  std::array<int, 2> e{axes_[0].element_of(x.x()), 0};
  if (dim_ == 2)
    e[1] = axes_[1].element_of(x.y());
  return e;
}

void TensorBsplineBasis::element_box(std::array<int, 2> e, Point& lo,
                                     Point& hi) const {
  lo = Point(axes_[0].breakpoint(e[0]), 0.0);
  hi = Point(axes_[0].breakpoint(e[0] + 1), 0.0);
  if (dim_ == 2) {
    lo.y() = axes_[1].breakpoint(e[1]);
    hi.y() = axes_[1].breakpoint(e[1] + 1);
  }
}

int TensorBsplineBasis::funcs_per_element() const noexcept {
  const int n = degree() + 1;
  return dim_ == 1 ? n : n * n;
}

std::vector<int>
TensorBsplineBasis::element_funcs(std::array<int, 2> e) const {
  const int p = degree();
  std::vector<int> out;
  out.reserve(funcs_per_element());
  if (dim_ == 1) {
    for (int j = 0; j <= p; ++j)
      out.push_back(e[0] + j);
    return out;
  }
  for (int jx = 0; jx <= p; ++jx)
    for (int jy = 0; jy <= p; ++jy)
      out.push_back(func_index({e[0] + jx, e[1] + jy}));
  return out;
}

TensorBsplineBasis::ElementEval
TensorBsplineBasis::eval_on_element(std::array<int, 2> e, const Point& x,
                                    int nder) const {
  ElementEval ev;
  ev.ders[0] = axes_[0].eval_element(e[0], x.x(), nder);
  ev.first[0] = e[0];
  if (dim_ == 2) {
    ev.ders[1] = axes_[1].eval_element(e[1], x.y(), nder);
    ev.first[1] = e[1];
  } else {
    ev.ders[1] = Eigen::MatrixXd::Ones(1, 1);
    ev.first[1] = 0;
  }
  return ev;
}

std::vector<std::pair<int, double>>
TensorBsplineBasis::eval_basis(const Point& x,
                               std::array<int, 2> deriv) const {
  const int p = degree();
  const int max_order = std::max(p, 3);
  for (int a = 0; a < dim_; ++a) {
    if (deriv[a] < 0 || deriv[a] > max_order)
      throw std::invalid_argument(
          "eval_basis: derivative order outside [0, max(p, 3)]");
    const auto& kv = axes_[a];
    const double c = (a == 0) ? x.x() : x.y();
    const double pad = 1e-12 * (kv.hi() - kv.lo());
    if (c < kv.lo() - pad || c > kv.hi() + pad)
      throw std::domain_error("eval_basis: point outside the ambient box");
  }
  if (dim_ == 1 && deriv[1] != 0)
    throw std::invalid_argument("eval_basis: y-derivative in one dimension");

  const auto e = element_of(x);
  const int nder = std::max(deriv[0], deriv[1]);
  const auto ev = eval_on_element(e, x, nder);

  std::vector<std::pair<int, double>> out;
  out.reserve(funcs_per_element());
  if (dim_ == 1) {
    for (int j = 0; j <= p; ++j)
      out.emplace_back(e[0] + j, ev.ders[0](deriv[0], j));
    return out;
  }
  for (int jx = 0; jx <= p; ++jx)
    for (int jy = 0; jy <= p; ++jy)
      out.emplace_back(func_index({e[0] + jx, e[1] + jy}),
                       ev.ders[0](deriv[0], jx) * ev.ders[1](deriv[1], jy));
  return out;
}

std::vector<std::pair<int, double>>
TensorBsplineBasis::face_normal_jump(int axis, int k, int order,
                                     const Point& x_on_face) const {
  if (axis < 0 || axis >= dim_)
    throw std::invalid_argument("face_normal_jump: bad axis");
  const Eigen::VectorXd jn = axes_[axis].jump_at_breakpoint(k, order);
  const int p = degree();

  std::vector<std::pair<int, double>> out;
  if (dim_ == 1) {
    out.reserve(p + 2);
    for (int j = 0; j < p + 2; ++j)
      out.emplace_back(k - 1 + j, jn(j));
    return out;
  }

  const int t = 1 - axis;
  const auto& kt = axes_[t];
  const double c = (t == 0) ? x_on_face.x() : x_on_face.y();
  const int et = kt.element_of(c);
  const Eigen::MatrixXd vt = kt.eval_element(et, c, 0);

  out.reserve((p + 2) * (p + 1));
  for (int jn_i = 0; jn_i < p + 2; ++jn_i) {
    for (int jt = 0; jt <= p; ++jt) {
      std::array<int, 2> mi{};
      mi[axis] = k - 1 + jn_i;
      mi[t] = et + jt;
      out.emplace_back(func_index(mi), jn(jn_i) * vt(0, jt));
    }
  }
  return out;
}

TensorBsplineBasis build_open_uniform_basis(int dim, int degree,
                                            std::array<int, 2> n_el,
                                            const Point& lo, const Point& hi) {
  if (dim == 1)
    return TensorBsplineBasis(degree, n_el[0], lo.x(), hi.x());
  if (dim == 2)
    return TensorBsplineBasis(degree, n_el, lo, hi);
  throw std::invalid_argument("build_open_uniform_basis: dim must be 1 or 2");
}

std::vector<int> outer_boundary_funcs(const TensorBsplineBasis& basis) {
  std::vector<int> out;
  if (basis.dim() == 1) {
    out.push_back(0);
    out.push_back(basis.n_funcs(0) - 1);
    return out;
  }
  const int nx = basis.n_funcs(0);
  const int ny = basis.n_funcs(1);
  for (int ix = 0; ix < nx; ++ix)
    for (int iy = 0; iy < ny; ++iy)
      if (ix == 0 || iy == 0 || ix == nx - 1 || iy == ny - 1)
        out.push_back(basis.func_index({ix, iy}));
  return out;
}

} // namespace cutiga
