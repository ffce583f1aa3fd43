#include "cutiga/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <tuple>

namespace cutiga {

double ImplicitDomain::Primitive::phi(const Point& x) const {
  switch (kind) {
  case Kind::half_plane:
    return b.dot(x - a);
  case Kind::box:
    return std::max(std::max(a.x() - x.x(), x.x() - b.x()),
                    std::max(a.y() - x.y(), x.y() - b.y()));
  case Kind::disk:
    return (x - a).norm() - b.x();
  }
  return 0;
}

ImplicitDomain::ImplicitDomain(int dim, std::vector<Primitive> prims,
                               Node root)
    : dim_(dim), prims_(std::move(prims)), root_(std::move(root)) {
  if (dim != 1 && dim != 2)
    throw std::invalid_argument("ImplicitDomain: dim must be 1 or 2");
}

double ImplicitDomain::eval(const Node& n, const Point& x) const {
  switch (n.op) {
  case Node::Op::leaf:
    return prims_.at(n.prim).phi(x);
  case Node::Op::unite: {
    double v = eval(n.kids.front(), x);
    for (size_t i = 1; i < n.kids.size(); ++i)
      v = std::min(v, eval(n.kids[i], x));
    return v;
  }
  case Node::Op::intersect: {
    double v = eval(n.kids.front(), x);
    for (size_t i = 1; i < n.kids.size(); ++i)
      v = std::max(v, eval(n.kids[i], x));
    return v;
  }
  case Node::Op::complement:
    return -eval(n.kids.front(), x);
  }
  return 0;
}

double ImplicitDomain::phi(const Point& x) const {
  return eval(root_, x - shift_);
}

BoundaryTag ImplicitDomain::tag_at(const Point& x) const {
  if (dirichlet_window_) {
    const auto& w = *dirichlet_window_;
    const double pad = 1e-12;
    const bool in = x.x() >= w[0].x() - pad && x.x() <= w[1].x() + pad &&
                    (dim_ == 1 ||
                     (x.y() >= w[0].y() - pad && x.y() <= w[1].y() + pad));
    return in ? BoundaryTag::dirichlet : BoundaryTag::neumann;
  }
  const Point xl = x - shift_;
  double best = std::numeric_limits<double>::max();
  BoundaryTag tag = BoundaryTag::neumann;
  for (const auto& p : prims_) {
    const double d = std::abs(p.phi(xl));
    if (d < best) {
      best = d;
      tag = p.tag;
    }
  }
  return tag;
}

void ImplicitDomain::set_dirichlet_window(const Point& lo, const Point& hi) {
  dirichlet_window_ = {lo, hi};
}

ImplicitDomain ImplicitDomain::translated(const Point& t) const {
  ImplicitDomain d = *this;
  d.shift_ += t;
  if (d.dirichlet_window_) {
    (*d.dirichlet_window_)[0] += t;
    (*d.dirichlet_window_)[1] += t;
  }
  return d;
}

ImplicitDomain ImplicitDomain::everything(int dim) {
  // A half-space whose boundary is far outside any box used in practice.
  return half_space(dim, 0, 1e9, BoundaryTag::neumann);
}

ImplicitDomain ImplicitDomain::half_space(int dim, int axis, double c,
                                          BoundaryTag tag, bool flip) {
  Primitive p;
  p.kind = Primitive::Kind::half_plane;
  p.a = Point(0, 0);
  p.a[axis] = c;
  p.b = Point(0, 0);
  p.b[axis] = flip ? -1.0 : 1.0;
  p.tag = tag;
  Node leaf;
  leaf.prim = 0;
  return ImplicitDomain(dim, {p}, leaf);
}

ImplicitDomain ImplicitDomain::corner(Point c, BoundaryTag tag) {
  Primitive px;
  px.kind = Primitive::Kind::half_plane;
  px.a = Point(c.x(), 0);
  px.b = Point(1, 0);
  px.tag = tag;
  Primitive py = px;
  py.a = Point(0, c.y());
  py.b = Point(0, 1);
  Node root;
  root.op = Node::Op::intersect;
  root.kids.resize(2);
  root.kids[0].prim = 0;
  root.kids[1].prim = 1;
  return ImplicitDomain(2, {px, py}, root);
}

ImplicitDomain ImplicitDomain::disk_cutout(Point center, double r,
                                           BoundaryTag tag) {
  Primitive d;
  d.kind = Primitive::Kind::disk;
  d.a = center;
  d.b = Point(r, 0);
  d.tag = tag;
  Node leaf;
  leaf.prim = 0;
  Node root;
  root.op = Node::Op::complement;
  root.kids.push_back(leaf);
  return ImplicitDomain(2, {d}, root);
}

ImplicitDomain make_reference_cutout_domain(const Point& translation,
                                            BoundaryTag tag) {
  using P = ImplicitDomain::Primitive;
  using N = ImplicitDomain::Node;

  P rect;
  rect.kind = P::Kind::box;
  rect.a = Point(0.275, 0.35);
  rect.b = Point(0.725, 0.65);
  rect.tag = tag;

  P cap;
  cap.kind = P::Kind::disk;
  cap.a = Point(0.725, 0.5);
  cap.b = Point(0.15, 0);
  cap.tag = tag;

  P cap_side; // keeps only the right half of the cap disk
  cap_side.kind = P::Kind::half_plane;
  cap_side.a = Point(0.725, 0);
  cap_side.b = Point(-1, 0);
  cap_side.tag = tag;

  P bite;
  bite.kind = P::Kind::box;
  bite.a = Point(0.34, 0.53);
  bite.b = Point(0.46, 0.71);
  bite.tag = tag;

  // cutout = (rect  U  (cap disk ∩ right half))  \  bite
  N n_rect{N::Op::leaf, 0, {}};
  N n_cap{N::Op::leaf, 1, {}};
  N n_side{N::Op::leaf, 2, {}};
  N n_bite{N::Op::leaf, 3, {}};
  N halfcap{N::Op::intersect, -1, {n_cap, n_side}};
  N base{N::Op::unite, -1, {n_rect, halfcap}};
  N cut_bite{N::Op::complement, -1, {n_bite}};
  N cutout{N::Op::intersect, -1, {base, cut_bite}};
  N domain{N::Op::complement, -1, {cutout}};

  ImplicitDomain d(2, {rect, cap, cap_side, bite}, domain);

  // Keep the cut-out strictly inside the ambient square; its untranslated
  // bounding box is [0.275, 0.875] x [0.35, 0.65].
  const double margin = 0.02;
  const double xlo = 0.275 + translation.x(), xhi = 0.875 + translation.x();
  const double ylo = 0.35 + translation.y(), yhi = 0.65 + translation.y();
  if (xlo < margin || xhi > 1 - margin || ylo < margin || yhi > 1 - margin)
    throw std::invalid_argument(
        "make_reference_cutout_domain: translation leaves the safe margin");
  return d.translated(translation);
}

void BackgroundMesh::element_box(std::array<int, 2> e, Point& blo,
                                 Point& bhi) const {
  blo = Point(lo.x() + h(0) * e[0], 0);
  bhi = Point(lo.x() + h(0) * (e[0] + 1), 0);
  if (dim == 2) {
    blo.y() = lo.y() + h(1) * e[1];
    bhi.y() = lo.y() + h(1) * (e[1] + 1);
  }
}

int BackgroundMesh::count(ElementClass c) const {
  return static_cast<int>(std::count(classes.begin(), classes.end(), c));
}

namespace {

// Looks for a point of opposite sign inside the cell, descending at most
// `depth` levels. Relies on every domain field being 1-Lipschitz: a cell
// whose center value exceeds half its diagonal cannot contain a zero.
bool sign_change_probe(const ImplicitDomain& domain, int dim, const Point& lo,
                       const Point& hi, double ref_sign, int depth) {
  const Point c = 0.5 * (lo + hi);
  const double phic = domain.phi(c);
  if (phic * ref_sign < 0)
    return true;
  const double half_diag =
      0.5 * (dim == 1 ? (hi.x() - lo.x()) : (hi - lo).norm());
  if (std::abs(phic) > half_diag || depth == 0)
    return false;
  const int nx = 2, ny = dim == 2 ? 2 : 1;
  for (int i = 0; i < nx; ++i) {
    for (int j = 0; j < ny; ++j) {
      Point slo(lo.x() + 0.5 * (hi.x() - lo.x()) * i,
                lo.y() + 0.5 * (hi.y() - lo.y()) * j);
      Point shi(slo.x() + 0.5 * (hi.x() - lo.x()),
                dim == 2 ? slo.y() + 0.5 * (hi.y() - lo.y()) : hi.y());
      if (sign_change_probe(domain, dim, slo, shi, ref_sign, depth - 1))
        return true;
    }
  }
  return false;
}

} // namespace

BackgroundMesh classify_elements(const ImplicitDomain& domain,
                                 std::array<int, 2> n_el, const Point& lo,
                                 const Point& hi, int samples,
                                 int probe_depth) {
  if (samples < 2)
    throw std::invalid_argument("classify_elements: need >= 2 samples/axis");
  BackgroundMesh mesh;
  mesh.dim = domain.dim();
  mesh.n = n_el;
  if (mesh.dim == 1)
    mesh.n[1] = 1;
  mesh.lo = lo;
  mesh.hi = hi;
  mesh.classes.resize(mesh.n_elements());

  const double h_ref = std::max(mesh.h(0), mesh.dim == 2 ? mesh.h(1) : 0.0);
  const int sy = mesh.dim == 2 ? samples : 1;

  for (int e = 0; e < mesh.n_elements(); ++e) {
    Point blo, bhi;
    mesh.element_box(mesh.multi(e), blo, bhi);
    int neg = 0, pos = 0;
    double min_abs = std::numeric_limits<double>::max();
    for (int i = 0; i < samples; ++i) {
      for (int j = 0; j < sy; ++j) {
        const Point x(
            blo.x() + (bhi.x() - blo.x()) * i / (samples - 1),
            mesh.dim == 2 ? blo.y() + (bhi.y() - blo.y()) * j / (sy - 1) : 0);
        const double v = domain.phi(x);
        (v < 0 ? neg : pos)++;
        min_abs = std::min(min_abs, std::abs(v));
      }
    }
    if (neg > 0 && pos > 0) {
      mesh.classes[e] = ElementClass::cut;
      continue;
    }
    const double ref = neg > 0 ? -1.0 : 1.0;
    if (min_abs < 0.1 * h_ref &&
        sign_change_probe(domain, mesh.dim, blo, bhi, ref, probe_depth)) {
      mesh.classes[e] = ElementClass::cut;
      continue;
    }
    mesh.classes[e] =
        neg > 0 ? ElementClass::interior : ElementClass::exterior;
  }
  return mesh;
}

std::vector<GhostFace> extract_ghost_faces(const BackgroundMesh& mesh) {
  std::vector<GhostFace> faces;
  for (int e = 0; e < mesh.n_elements(); ++e) {
    if (mesh.classes[e] != ElementClass::cut)
      continue;
    const auto me = mesh.multi(e);
    for (int axis = 0; axis < mesh.dim; ++axis) {
      for (int dir : {-1, +1}) {
        auto mn = me;
        mn[axis] += dir;
        if (mn[axis] < 0 || mn[axis] >= mesh.n[axis])
          continue;
        if (mesh.cls(mn) == ElementClass::exterior)
          continue;
        GhostFace f;
        f.axis = axis;
        f.cell = dir > 0 ? me : mn;
        f.k = f.cell[axis] + 1;
        faces.push_back(f);
      }
    }
  }
  auto key = [](const GhostFace& f) {
    return std::tuple(f.axis, f.cell[0], f.cell[1]);
  };
  std::sort(faces.begin(), faces.end(),
            [&](const GhostFace& a, const GhostFace& b) {
              return key(a) < key(b);
            });
  faces.erase(std::unique(faces.begin(), faces.end(),
                          [&](const GhostFace& a, const GhostFace& b) {
                            return key(a) == key(b);
                          }),
              faces.end());
  return faces;
}

} // namespace cutiga
