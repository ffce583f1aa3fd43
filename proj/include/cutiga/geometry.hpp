#pragma once

#include "cutiga/splines.hpp"

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace cutiga {

/// Role of a piece of the immersed boundary. `outer` marks the fitted ambient
/// box boundary, which is emitted by the quadrature layer, never by domain
/// primitives.
enum class BoundaryTag { dirichlet, neumann, outer };

/// Signed-distance-like scalar field describing the analysis domain: phi < 0
/// inside, phi > 0 outside, zero on the immersed boundary. Domains are built
/// from half-plane / box / disk primitives combined by min (union) and max
/// (intersection) of the fields; every primitive field is 1-Lipschitz, and
/// min/max/negation preserve that, which the quadrature layer relies on when
/// pruning its octree.
class ImplicitDomain {
public:
  struct Primitive {
    enum class Kind { half_plane, box, disk } kind;
    // half_plane: point `a`, unit outward normal `b` (phi = b . (x - a))
    // box:        corners a (lo), b (hi); negative inside
    // disk:       center a, radius b.x(); negative inside
    Point a, b;
    BoundaryTag tag = BoundaryTag::neumann;
    [[nodiscard]] double phi(const Point& x) const;
  };

  /// CSG expression node. Leaves reference the primitive list; interior nodes
  /// combine children. `complement` flips the sign of its single child.
  struct Node {
    enum class Op { leaf, unite, intersect, complement } op = Op::leaf;
    int prim = -1;
    std::vector<Node> kids;
  };

  ImplicitDomain(int dim, std::vector<Primitive> prims, Node root);

  [[nodiscard]] int dim() const noexcept { return dim_; }

  /// Field value; negative inside the domain.
  [[nodiscard]] double phi(const Point& x) const;

  /// Boundary tag at a point near the zero level: the tag of the primitive
  /// whose own zero level is nearest. When a Dirichlet window is set, the tag
  /// is dirichlet inside the window and neumann outside it instead.
  [[nodiscard]] BoundaryTag tag_at(const Point& x) const;

  /// Restricts the Dirichlet tag to an axis box (used by probe geometries
  /// that constrain only one cut element's boundary).
  void set_dirichlet_window(const Point& lo, const Point& hi);

  /// Same solid rigidly shifted by t (the field is evaluated at x - t).
  [[nodiscard]] ImplicitDomain translated(const Point& t) const;

  [[nodiscard]] const Point& translation() const noexcept { return shift_; }

  // Named constructors for the shapes the experiments use.

  /// Everything is inside (uncut ambient box).
  static ImplicitDomain everything(int dim);

  /// Half-space x_axis < c (inside), boundary tagged `tag`; `flip` selects
  /// x_axis > c instead.
  static ImplicitDomain half_space(int dim, int axis, double c, BoundaryTag tag,
                                   bool flip = false);

  /// 2D quarter-plane {x < cx and y < cy}: a convex corner cut.
  static ImplicitDomain corner(Point c, BoundaryTag tag);

  /// Complement of a disk (disk-shaped cut-out).
  static ImplicitDomain disk_cutout(Point center, double r, BoundaryTag tag);

private:
  int dim_;
  std::vector<Primitive> prims_;
  Node root_;
  Point shift_{0, 0};
  std::optional<std::array<Point, 2>> dirichlet_window_;

  [[nodiscard]] double eval(const Node& n, const Point& x) const;
};

/// Reference immersed geometry: the unit square with a cut-out removed. The
/// cut-out is a 0.45 x 0.3 rectangle centered in the square whose right short
/// edge is replaced by a semicircular cap (radius 0.15) and whose top long
/// edge carries a 0.12 x 0.12 square notch biting back into the cut-out, so
/// the domain boundary shows convex corners, concave corners, and a curved
/// arc. `translation` shifts the whole cut-out; it is rejected when it would
/// push the cut-out within 0.1 of the ambient boundary. The entire cut-out
/// boundary carries `tag`.
[[nodiscard]] ImplicitDomain
make_reference_cutout_domain(const Point& translation, BoundaryTag tag);

enum class ElementClass : unsigned char { exterior, interior, cut };

/// Structured ambient mesh with per-element classification against a domain.
/// Elements intersecting the domain (interior or cut) form the background
/// mesh; fully exterior elements take no part in anything downstream.
struct BackgroundMesh {
  int dim = 2;
  std::array<int, 2> n{1, 1}; ///< elements per axis (n[1] = 1 in 1D)
  Point lo{0, 0}, hi{1, 1};
  std::vector<ElementClass> classes; ///< lexicographic, axis 0 major

  [[nodiscard]] double h(int a) const {
    return (a == 0 ? hi.x() - lo.x() : hi.y() - lo.y()) / n[a];
  }
  [[nodiscard]] int n_elements() const { return dim == 1 ? n[0] : n[0] * n[1]; }
  [[nodiscard]] int index(std::array<int, 2> e) const {
    return dim == 1 ? e[0] : e[0] * n[1] + e[1];
  }
  [[nodiscard]] std::array<int, 2> multi(int e) const {
    return dim == 1 ? std::array<int, 2>{e, 0}
                    : std::array<int, 2>{e / n[1], e % n[1]};
  }
  void element_box(std::array<int, 2> e, Point& blo, Point& bhi) const;
  [[nodiscard]] ElementClass cls(std::array<int, 2> e) const {
    return classes[index(e)];
  }
  [[nodiscard]] int count(ElementClass c) const;
};

/// Classifies every element of a structured mesh over [lo, hi] against the
/// domain by sampling phi on a samples x samples grid including the element
/// corners: all negative -> interior, all positive -> exterior, mixed -> cut.
/// When all samples agree but min |phi| < 0.1 h the sign is distrusted and an
/// octree probe searches for a sign change down to `probe_depth` levels.
[[nodiscard]] BackgroundMesh
classify_elements(const ImplicitDomain& domain, std::array<int, 2> n_el,
                  const Point& lo, const Point& hi, int samples = 5,
                  int probe_depth = 6);

/// Interior mesh face between a cut element and a background (interior or
/// cut) neighbor. `axis` is the face normal direction; `k` the breakpoint
/// index along it; `cell` the face's element multi-index on the minus side
/// shifted so cell[axis] + 1 == k.
struct GhostFace {
  int axis;
  int k;
  std::array<int, 2> cell;
};

/// All ghost faces of the mesh, deduplicated, in deterministic order.
[[nodiscard]] std::vector<GhostFace>
extract_ghost_faces(const BackgroundMesh& mesh);

} // namespace cutiga
