#pragma once

#include "cutiga/geometry.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace cutiga {

struct QuadOptions {
  /// Recursion depth of the quadtree (bisection tree in 1D) on cut elements.
  int octree_depth = 3;
  /// Gauss points per axis on fully inside (sub-)cells; 0 means degree + 1.
  int gauss_points = 0;
  /// Also emit surface rules on the fitted ambient-box boundary, tagged
  /// BoundaryTag::outer (needed when boundary data lives there).
  bool emit_outer = false;
  /// Depth ceiling for the degenerate-reconstruction escalation.
  int escalation_cap = 12;
};

struct VolumePoint {
  Point x;
  double w; ///< weight in length^d
};

struct SurfacePoint {
  Point x;
  double w; ///< weight in length^(d-1); counting measure in 1D
  /// Unit outward normal (phi increases along n). Evaluated from the field
  /// gradient at x, so it tracks curved interfaces pointwise; the weight
  /// still measures the reconstructed chord.
  Point n;
  BoundaryTag tag;
};

/// Cut-size metrics of one element. h_c follows the convention that a small
/// Dirichlet-loaded cut is measured by volume/surface while a shape-regular
/// cut is measured by volume^{1/d}, whichever is smaller.
struct CutMetrics {
  double volume = 0;  ///< measure of element ∩ Ω
  double surface = 0; ///< tagged boundary measure inside the element
  double h_c = 0;
  double chi = 1; ///< h_c / h_K, clamped to 1
  double eta = 0; ///< volume / h_K^d
};

struct ElementQuadrature {
  std::vector<VolumePoint> volume;
  std::vector<SurfacePoint> surface;
};

/// Per-element quadrature for a classified background mesh. Exterior elements
/// carry empty rules; interior elements a tensor Gauss rule; cut elements the
/// quadtree + tessellation rule.
struct CutQuadrature {
  std::vector<ElementQuadrature> elements; ///< indexed like mesh.classes
  std::vector<std::string> warnings;

  [[nodiscard]] double total_volume() const;
  [[nodiscard]] double total_surface(BoundaryTag tag) const;
};

/// Builds volumetric and surface rules on every non-exterior element. Cut
/// elements are recursively bisected; sub-cells whose sign is certain (the
/// 1-Lipschitz bound on the domain field guarantees no crossing) become full
/// tensor-Gauss cells or are dropped, and at the finest level the interface
/// is reconstructed linearly from corner values (marching-squares style),
/// yielding interior triangles and boundary segments. Sub-cells on which the
/// field is verifiably (bi)linear skip straight to reconstruction, which
/// makes planar interfaces exact at any depth. Geometry error on curved
/// interfaces is O(h^2 / 4^depth).
///
/// If classification marked an element cut but reconstruction finds no
/// interface, the element is retried one level deeper up to the escalation
/// cap, then recorded as a warning. Elements whose reconstructed inside
/// volume is below 1e-14 h^d are demoted to exterior in `mesh` and dropped.
[[nodiscard]] CutQuadrature build_cut_quadrature(const ImplicitDomain& domain,
                                                 BackgroundMesh& mesh,
                                                 int degree,
                                                 const QuadOptions& opts = {});

/// Evaluates the cut metrics of every element. `tags` selects which boundary
/// tags enter the surface measure of h_c (the constrained part of the
/// boundary); pass the cut-out's tag for pure-Neumann studies so chi still
/// tracks the sliver geometry.
[[nodiscard]] std::vector<CutMetrics>
compute_cut_metrics(const CutQuadrature& quad, const BackgroundMesh& mesh,
                    const std::vector<BoundaryTag>& tags);

/// Smallest chi over cut elements (1 when nothing is cut).
[[nodiscard]] double min_chi(const std::vector<CutMetrics>& metrics,
                             const BackgroundMesh& mesh);

/// Debug dump (x, y, weight, kind, tag) of every quadrature point.
void dump_quadrature_csv(const CutQuadrature& quad, std::ostream& os);

/// Gauss-Legendre nodes and weights on [-1, 1], n in [1, 6].
void gauss_rule(int n, std::vector<double>& nodes, std::vector<double>& weights);

} // namespace cutiga
