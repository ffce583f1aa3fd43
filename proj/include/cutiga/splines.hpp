#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <vector>

namespace cutiga {

/// Spatial point. One- and two-dimensional code paths share this type; in one
/// dimension the y component is carried along as zero.
using Point = Eigen::Vector2d;

/// Open uniform knot vector of maximum regularity on an interval [lo, hi].
///
/// The knot sequence repeats the interval ends (degree + 1) times and places
/// single knots at the n_elements - 1 uniform interior breakpoints, so the
/// spanned spline space is C^{degree-1} everywhere inside the interval and
/// contains n_elements + degree basis functions.
class KnotVector {
public:
  /// Builds the open uniform knot vector for `n_elements` equal spans of
  /// degree `degree` on [lo, hi]. Throws std::invalid_argument for degree < 1,
  /// n_elements < 1, or a degenerate interval.
  KnotVector(int degree, int n_elements, double lo, double hi);

  [[nodiscard]] int degree() const noexcept { return degree_; }
  [[nodiscard]] int n_elements() const noexcept { return n_elements_; }
  [[nodiscard]] int n_funcs() const noexcept { return n_elements_ + degree_; }
  [[nodiscard]] double lo() const noexcept { return lo_; }
  [[nodiscard]] double hi() const noexcept { return hi_; }
  [[nodiscard]] double h() const noexcept { return h_; }

  /// Breakpoint k for k in [0, n_elements], i.e. the mesh line between
  /// elements k-1 and k.
  [[nodiscard]] double breakpoint(int k) const { return lo_ + h_ * k; }

  [[nodiscard]] const std::vector<double>& knots() const noexcept {
    return knots_;
  }

  /// Index of the element containing x, clamped to [0, n_elements - 1]; a
  /// point on an interior breakpoint is attributed to the element on its
  /// right, except at hi which belongs to the last element.
  [[nodiscard]] int element_of(double x) const;

  /// First basis function with support on element e. Functions
  /// first_func(e) .. first_func(e) + degree are the ones active there.
  [[nodiscard]] int first_func(int e) const noexcept { return e; }

  /// Values and derivatives of the degree + 1 functions supported on element
  /// e, evaluated at x (which must lie in the closed element). Row k of the
  /// result holds the k-th derivative, k = 0..nder, of functions
  /// first_func(e) .. first_func(e) + degree; rows beyond the polynomial
  /// degree are zero. Evaluation is one-sided from the interior of element e,
  /// so calling this at a shared breakpoint from the two adjacent elements
  /// yields the two one-sided limits.
  [[nodiscard]] Eigen::MatrixXd eval_element(int e, double x, int nder) const;

  /// Jump [d^order N / dx^order] across interior breakpoint k (plus side
  /// minus minus side) for the degree + 2 functions k-1 .. k + degree whose
  /// support touches the breakpoint. For maximum-regularity splines the jump
  /// vanishes identically for order < degree. Throws for k outside
  /// [1, n_elements - 1].
  [[nodiscard]] Eigen::VectorXd jump_at_breakpoint(int k, int order) const;

private:
  int degree_;
  int n_elements_;
  double lo_, hi_, h_;
  std::vector<double> knots_;
};

/// Tensor-product B-spline basis on a 1D interval or a 2D axis-aligned box,
/// built from per-axis open uniform maximum-regularity knot vectors of a
/// common degree. Global function and element numbering is lexicographic
/// with the first axis as the major index.
class TensorBsplineBasis {
public:
  /// One-dimensional basis on [lo.x, hi.x].
  TensorBsplineBasis(int degree, int n_elements, double lo, double hi);

  /// Two-dimensional basis on the box [lo, hi] with n_el[a] elements along
  /// axis a.
  TensorBsplineBasis(int degree, std::array<int, 2> n_el, Point lo, Point hi);

  [[nodiscard]] int dim() const noexcept { return dim_; }
  [[nodiscard]] int degree() const noexcept { return axes_[0].degree(); }
  [[nodiscard]] const KnotVector& axis(int a) const { return axes_.at(a); }
  [[nodiscard]] double h(int a) const { return axes_.at(a).h(); }

  [[nodiscard]] int n_funcs() const noexcept;
  [[nodiscard]] int n_funcs(int a) const { return axes_.at(a).n_funcs(); }
  [[nodiscard]] int n_elements() const noexcept;
  [[nodiscard]] int n_elements(int a) const {
    return axes_.at(a).n_elements();
  }

  /// Lexicographic global index of the function with per-axis indices i.
  [[nodiscard]] int func_index(std::array<int, 2> i) const noexcept;
  /// Lexicographic global index of the element with per-axis indices e.
  [[nodiscard]] int element_index(std::array<int, 2> e) const noexcept;
  [[nodiscard]] std::array<int, 2> element_multi(int e) const noexcept;
  [[nodiscard]] std::array<int, 2> func_multi(int g) const noexcept;

  /// Element containing x (per-axis clamped attribution, see
  /// KnotVector::element_of).
  [[nodiscard]] std::array<int, 2> element_of(const Point& x) const;

  /// Axis-aligned bounds of an element.
  void element_box(std::array<int, 2> e, Point& lo, Point& hi) const;

  /// Number of functions supported on one element: (degree + 1)^dim.
  [[nodiscard]] int funcs_per_element() const noexcept;

  /// Global indices of the functions supported on element e, in the local
  /// lexicographic order used by eval tables.
  [[nodiscard]] std::vector<int> element_funcs(std::array<int, 2> e) const;

  /// Per-axis derivative tables at one point of one element. ders[a] has
  /// nder + 1 rows and degree + 1 columns; entry (k, j) is the k-th
  /// derivative of the j-th function supported on the element along axis a.
  struct ElementEval {
    std::array<Eigen::MatrixXd, 2> ders;
    std::array<int, 2> first; ///< first per-axis function index
  };
  [[nodiscard]] ElementEval eval_on_element(std::array<int, 2> e,
                                            const Point& x, int nder) const;

  /// Mixed partial derivative d^{k.x + k.y} / dx^{k.x} dy^{k.y} of every
  /// function supported at x, returned as (global index, value) pairs.
  /// Exactly (degree + 1)^dim entries. Derivative orders above
  /// max(degree, 3) are rejected; points outside the box are rejected.
  [[nodiscard]] std::vector<std::pair<int, double>>
  eval_basis(const Point& x, std::array<int, 2> deriv = {0, 0}) const;

  /// Jump of the order-th normal derivative across an interior mesh face,
  /// for every function whose support touches the face, evaluated at a point
  /// on the face. `axis` is the face normal direction and `k` the breakpoint
  /// index along it. Returns (global index, jump) pairs. Faces on the box
  /// boundary are rejected.
  [[nodiscard]] std::vector<std::pair<int, double>>
  face_normal_jump(int axis, int k, int order, const Point& x_on_face) const;

private:
  int dim_;
  std::array<KnotVector, 2> axes_;
};

/// Convenience factory matching the way meshes are described elsewhere:
/// per-axis element counts on a box, maximum-regularity open uniform knots.
[[nodiscard]] TensorBsplineBasis
build_open_uniform_basis(int dim, int degree, std::array<int, 2> n_el,
                         const Point& lo, const Point& hi);

/// Global indices of the functions that are nonzero somewhere on the ambient
/// box boundary: per-axis index 0 or last along any direction. Open knots
/// make these interpolatory at the box faces, so withholding them from a
/// DofMap imposes a homogeneous value constraint on a fitted boundary.
[[nodiscard]] std::vector<int>
outer_boundary_funcs(const TensorBsplineBasis& basis);

} // namespace cutiga
