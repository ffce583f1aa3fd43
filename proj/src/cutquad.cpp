#include "cutiga/cutquad.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <ostream>
#include <stdexcept>

namespace cutiga {

void gauss_rule(int n, std::vector<double>& nodes,
                std::vector<double>& weights) {
  // Positive half of the rule; mirrored below. A node at 0 carries half its
  // tabulated weight here so the mirroring logic stays uniform.
  static const std::vector<std::pair<double, double>> half[6] = {
      {{0, 2.0}},
      {{0.57735026918962576451, 1.0}},
      {{0, 8.0 / 9.0}, {0.77459666924148337704, 5.0 / 9.0}},
      {{0.33998104358485626480, 0.65214515486254614263},
       {0.86113631159405257522, 0.34785484513745385737}},
      {{0, 0.56888888888888888889},
       {0.53846931010568309104, 0.47862867049936646804},
       {0.90617984593866399280, 0.23692688505618908751}},
      {{0.23861918608319690863, 0.46791393457269104739},
       {0.66120938646626451366, 0.36076157304813860757},
       {0.93246951420315202781, 0.17132449237917034504}}};
  if (n < 1 || n > 6)
    throw std::invalid_argument("gauss_rule: n out of [1, 6]");
  nodes.clear();
  weights.clear();
  for (auto it = half[n - 1].rbegin(); it != half[n - 1].rend(); ++it) {
    if (it->first == 0)
      continue;
    nodes.push_back(-it->first);
    weights.push_back(it->second);
  }
  for (const auto& [x, w] : half[n - 1]) {
    nodes.push_back(x);
    weights.push_back(w);
  }
}

namespace {

struct TrianglePoint {
  double l1, l2, w; // barycentric coordinates of v0, v1; weights sum to 1
};

// Symmetric positive-weight rules on the reference triangle. Degrees with
// negative-weight classics (3, 7) promote to the next clean degree.
std::vector<TrianglePoint> triangle_rule(int degree) {
  std::vector<TrianglePoint> pts;
  auto orbit3 = [&](double alpha, double beta, double w) {
    pts.push_back({alpha, beta, w});
    pts.push_back({beta, alpha, w});
    pts.push_back({beta, beta, w});
  };
  auto orbit6 = [&](double a, double b, double w) {
    const double c = 1 - a - b;
    pts.push_back({a, b, w});
    pts.push_back({b, a, w});
    pts.push_back({a, c, w});
    pts.push_back({c, a, w});
    pts.push_back({b, c, w});
    pts.push_back({c, b, w});
  };
  if (degree <= 1) {
    pts.push_back({1.0 / 3.0, 1.0 / 3.0, 1.0});
  } else if (degree == 2) {
    orbit3(2.0 / 3.0, 1.0 / 6.0, 1.0 / 3.0);
  } else if (degree <= 4) {
    orbit3(0.108103018168070, 0.445948490915965, 0.223381589678011);
    orbit3(0.816847572980459, 0.091576213509771, 0.109951743655322);
  } else if (degree == 5) {
    pts.push_back({1.0 / 3.0, 1.0 / 3.0, 0.225});
    orbit3(0.059715871789770, 0.470142064105115, 0.132394152788506);
    orbit3(0.797426985353087, 0.101286507323456, 0.125939180544827);
  } else if (degree == 6) {
    orbit3(0.501426509658179, 0.249286745170910, 0.116786275726379);
    orbit3(0.873821971016996, 0.063089014491502, 0.050844906370207);
    orbit6(0.053145049844816, 0.310352451033785, 0.082851075618374);
  } else {
    throw std::invalid_argument(
        "triangle_rule: degree > 6 not provided (basis degree <= 3 in 2D)");
  }
  return pts;
}

class RuleBuilder {
public:
  RuleBuilder(const ImplicitDomain& domain, int degree, const QuadOptions& o)
      : dom_(domain), dim_(domain.dim()),
        gp_(o.gauss_points > 0 ? o.gauss_points : degree + 1),
        seg_pts_(degree + 1) {
    gauss_rule(gp_, gx_, gw_);
    gauss_rule(seg_pts_, sx_, sw_);
    if (dim_ == 2)
      tri_ = triangle_rule(2 * degree);
  }

  void full_cell(const Point& lo, const Point& hi, ElementQuadrature& out) const {
    if (dim_ == 1) {
      const double c = 0.5 * (lo.x() + hi.x()), r = 0.5 * (hi.x() - lo.x());
      for (size_t i = 0; i < gx_.size(); ++i)
        out.volume.push_back({Point(c + r * gx_[i], 0), r * gw_[i]});
      return;
    }
    const Point c = 0.5 * (lo + hi), r = 0.5 * (hi - lo);
    for (size_t i = 0; i < gx_.size(); ++i)
      for (size_t j = 0; j < gx_.size(); ++j)
        out.volume.push_back({Point(c.x() + r.x() * gx_[i], c.y() + r.y() * gx_[j]),
                              r.x() * r.y() * gw_[i] * gw_[j]});
  }

  void build_cut(const Point& lo, const Point& hi, int depth,
                 ElementQuadrature& out) const {
    if (dim_ == 1)
      cut_1d(lo.x(), hi.x(), depth, out);
    else
      cut_2d(lo, hi, depth, out);
  }

  /// Gauss rules (into out.volume, weights in length units) over the inside
  /// part of the segment base + t*dir, t in [0, len], with `dir` a unit
  /// vector. With emit_crossings the sign-change points become 1D surface
  /// points (weight 1, normal along the line, tag from the domain).
  void line_inside(const Point& base, const Point& dir, double len, int depth,
                   ElementQuadrature& out, bool emit_crossings) const {
    std::function<void(double, double, double, double, int)> rec =
        [&](double a, double b, double pa, double pb, int d) {
          const double m = 0.5 * (a + b), half = 0.5 * (b - a);
          const double pm = dom_.phi(base + m * dir);
          if (std::abs(pm) > half) { // 1-Lipschitz: sign certain on [a, b]
            if (pm < 0)
              interval_gauss(base, dir, a, b, out);
            return;
          }
          const double scale = std::abs(pa) + std::abs(pb) + half + 1e-30;
          const bool linear = std::abs(pm - 0.5 * (pa + pb)) <= 1e-12 * scale;
          if (d == 0 || linear) {
            secant_piece(base, dir, a, b, pa, pb, out, emit_crossings);
            return;
          }
          rec(a, m, pa, pm, d - 1);
          rec(m, b, pm, pb, d - 1);
        };
    rec(0, len, dom_.phi(base), dom_.phi(base + len * dir), depth);
  }

private:
  void interval_gauss(const Point& base, const Point& dir, double a, double b,
                      ElementQuadrature& out) const {
    const double c = 0.5 * (a + b), r = 0.5 * (b - a);
    if (r <= 0)
      return;
    for (size_t i = 0; i < sx_.size(); ++i)
      out.volume.push_back({base + (c + r * sx_[i]) * dir, r * sw_[i]});
  }

  void secant_piece(const Point& base, const Point& dir, double a, double b,
                    double pa, double pb, ElementQuadrature& out,
                    bool emit_crossings) const {
    const bool ia = pa < 0, ib = pb < 0;
    if (ia && ib) {
      interval_gauss(base, dir, a, b, out);
      return;
    }
    if (!ia && !ib)
      return;
    const double t = a + (b - a) * pa / (pa - pb);
    if (ia)
      interval_gauss(base, dir, a, t, out);
    else
      interval_gauss(base, dir, t, b, out);
    if (emit_crossings) {
      const Point x = base + t * dir;
      const Point n = ia ? dir : Point(-dir);
      out.surface.push_back({x, 1.0, n, dom_.tag_at(x)});
    }
  }

  void cut_1d(double a, double b, int depth, ElementQuadrature& out) const {
    // The line machinery uses seg_pts_ = p + 1 Gauss points per full piece,
    // exact to the mass integrand degree.
    line_inside(Point(a, 0), Point(1, 0), b - a, depth, out, true);
  }

  void cut_2d(const Point& lo, const Point& hi, int depth,
              ElementQuadrature& out) const {
    const Point c = 0.5 * (lo + hi);
    const double pm = dom_.phi(c);
    const double halfdiag = 0.5 * (hi - lo).norm();
    if (std::abs(pm) > halfdiag) { // sign certain on the whole box
      if (pm < 0)
        full_cell(lo, hi, out);
      return;
    }
    const double p00 = dom_.phi(lo), p10 = dom_.phi(Point(hi.x(), lo.y()));
    const double p01 = dom_.phi(Point(lo.x(), hi.y())), p11 = dom_.phi(hi);

    if (depth > 0 && !is_affine(lo, hi, p00, p10, p01, p11, pm)) {
      const int half = depth - 1;
      cut_2d(lo, c, half, out);
      cut_2d(Point(c.x(), lo.y()), Point(hi.x(), c.y()), half, out);
      cut_2d(Point(lo.x(), c.y()), Point(c.x(), hi.y()), half, out);
      cut_2d(c, hi, half, out);
      return;
    }
    tessellate(lo, hi, p00, p10, p01, p11, pm, out);
  }

  // True when phi matches the affine interpolant of the corner values at the
  // center and edge midpoints; then the chord reconstruction is exact and
  // recursion can stop early (planar interfaces at any depth).
  bool is_affine(const Point& lo, const Point& hi, double p00, double p10,
                 double p01, double p11, double pm) const {
    const double scale =
        std::abs(p00) + std::abs(p10) + std::abs(p01) + std::abs(p11) +
        0.5 * (hi - lo).norm() + 1e-30;
    const double tol = 1e-12 * scale;
    if (std::abs(p11 - p10 - p01 + p00) > tol) // twist term
      return false;
    if (std::abs(pm - 0.25 * (p00 + p10 + p01 + p11)) > tol)
      return false;
    const Point c = 0.5 * (lo + hi);
    const double eb = dom_.phi(Point(c.x(), lo.y())) - 0.5 * (p00 + p10);
    const double et = dom_.phi(Point(c.x(), hi.y())) - 0.5 * (p01 + p11);
    const double el = dom_.phi(Point(lo.x(), c.y())) - 0.5 * (p00 + p01);
    const double er = dom_.phi(Point(hi.x(), c.y())) - 0.5 * (p10 + p11);
    return std::abs(eb) <= tol && std::abs(et) <= tol && std::abs(el) <= tol &&
           std::abs(er) <= tol;
  }

  void tessellate(const Point& lo, const Point& hi, double p00, double p10,
                  double p01, double p11, double pm,
                  ElementQuadrature& out) const {
    const Point v[4] = {lo, Point(hi.x(), lo.y()), hi, Point(lo.x(), hi.y())};
    const double f[4] = {p00, p10, p11, p01}; // counter-clockwise
    const bool in[4] = {f[0] < 0, f[1] < 0, f[2] < 0, f[3] < 0};
    const int n_in = in[0] + in[1] + in[2] + in[3];

    if (n_in == 0)
      return;
    if (n_in == 4) {
      full_cell(lo, hi, out);
      return;
    }
    // Diagonal saddle with exterior center: two detached corner triangles.
    const bool saddle = n_in == 2 && in[0] == in[2];
    if (saddle && pm >= 0) {
      for (int k = 0; k < 4; ++k) {
        if (!in[k])
          continue;
        const int prev = (k + 3) % 4, next = (k + 1) % 4;
        const Point a = crossing(v[prev], v[k], f[prev], f[k]);
        const Point b = crossing(v[k], v[next], f[k], f[next]);
        emit_polygon({a, v[k], b}, lo, hi, out);
      }
      return;
    }
    std::vector<Point> poly;
    for (int k = 0; k < 4; ++k) {
      if (in[k])
        poly.push_back(v[k]);
      const int next = (k + 1) % 4;
      if (in[k] != in[next])
        poly.push_back(crossing(v[k], v[next], f[k], f[next]));
    }
    emit_polygon(poly, lo, hi, out);
  }

  static Point crossing(const Point& a, const Point& b, double fa, double fb) {
    const double t = fa / (fa - fb);
    return a + t * (b - a);
  }

  // Centered-difference field normal at a surface point. Falls back to the
  // chord normal when the gradient degenerates or swings more than 60 degrees
  // away from it, which happens when the stencil straddles a corner kink of a
  // min/max composite field.
  Point field_normal(const Point& x, const Point& chord, double scale) const {
    const double d = 1e-6 * scale;
    const Point grad(dom_.phi(Point(x.x() + d, x.y())) -
                         dom_.phi(Point(x.x() - d, x.y())),
                     dom_.phi(Point(x.x(), x.y() + d)) -
                         dom_.phi(Point(x.x(), x.y() - d)));
    const double m = grad.norm();
    if (!(m > 0) || grad.dot(chord) < 0.5 * m)
      return chord;
    return grad / m;
  }

  void emit_polygon(const std::vector<Point>& poly, const Point& lo,
                    const Point& hi, ElementQuadrature& out) const {
    if (poly.size() < 3)
      return;
    const double tiny = 1e-14 * (hi - lo).norm();
    // Interior area: triangle fan (the reconstructed regions are convex).
    for (size_t k = 1; k + 1 < poly.size(); ++k) {
      const Point &a = poly[0], &b = poly[k], &c = poly[k + 1];
      const double area = 0.5 * ((b.x() - a.x()) * (c.y() - a.y()) -
                                 (b.y() - a.y()) * (c.x() - a.x()));
      if (area <= tiny * tiny)
        continue;
      for (const auto& q : tri_)
        out.volume.push_back(
            {q.l1 * a + q.l2 * b + (1 - q.l1 - q.l2) * c, q.w * area});
    }
    // Boundary chords: polygon edges not lying on the box frame.
    for (size_t k = 0; k < poly.size(); ++k) {
      const Point &a = poly[k], &b = poly[(k + 1) % poly.size()];
      const double len = (b - a).norm();
      if (len <= tiny)
        continue;
      const Point m = 0.5 * (a + b);
      const double pad = 1e-12 * (hi - lo).norm();
      const bool on_frame =
          m.x() < lo.x() + pad || m.x() > hi.x() - pad || m.y() < lo.y() + pad ||
          m.y() > hi.y() - pad;
      if (on_frame)
        continue;
      // Interior lies left of a->b, so the outward normal is the right-hand
      // perpendicular of the chord. The chord normal is only first-order
      // accurate on curved interfaces, which would leak into any boundary
      // datum that contracts with n, so each point refines it from the field
      // gradient with the chord fixing the orientation.
      const Point t = (b - a) / len;
      const Point nf(t.y(), -t.x());
      for (size_t i = 0; i < sx_.size(); ++i) {
        const Point x = m + 0.5 * len * sx_[i] * t;
        out.surface.push_back({x, 0.5 * len * sw_[i],
                               field_normal(x, nf, (hi - lo).norm()),
                               dom_.tag_at(x)});
      }
    }
  }

  const ImplicitDomain& dom_;
  int dim_, gp_, seg_pts_;
  std::vector<double> gx_, gw_, sx_, sw_;
  std::vector<TrianglePoint> tri_;
};

double volume_of(const ElementQuadrature& q) {
  double v = 0;
  for (const auto& p : q.volume)
    v += p.w;
  return v;
}

} // namespace

double CutQuadrature::total_volume() const {
  double v = 0;
  for (const auto& e : elements)
    v += volume_of(e);
  return v;
}

double CutQuadrature::total_surface(BoundaryTag tag) const {
  double s = 0;
  for (const auto& e : elements)
    for (const auto& p : e.surface)
      if (p.tag == tag)
        s += p.w;
  return s;
}

CutQuadrature build_cut_quadrature(const ImplicitDomain& domain,
                                   BackgroundMesh& mesh, int degree,
                                   const QuadOptions& opts) {
  if (opts.octree_depth < 1)
    throw std::invalid_argument("build_cut_quadrature: octree_depth >= 1");
  if (degree < 1)
    throw std::invalid_argument("build_cut_quadrature: degree >= 1");
  const RuleBuilder rb(domain, degree, opts);
  const int cap = std::max(opts.escalation_cap, opts.octree_depth);

  CutQuadrature quad;
  quad.elements.resize(mesh.n_elements());
  const double hd = mesh.dim == 1 ? mesh.h(0) : mesh.h(0) * mesh.h(1);

  for (int e = 0; e < mesh.n_elements(); ++e) {
    if (mesh.classes[e] == ElementClass::exterior)
      continue;
    Point blo, bhi;
    mesh.element_box(mesh.multi(e), blo, bhi);
    auto& rule = quad.elements[e];
    if (mesh.classes[e] == ElementClass::interior) {
      rb.full_cell(blo, bhi, rule);
      continue;
    }
    int depth = opts.octree_depth;
    for (;;) {
      rule = ElementQuadrature{};
      rb.build_cut(blo, bhi, depth, rule);
      if (!rule.surface.empty() || depth >= cap)
        break;
      ++depth; // classification saw a cut this depth cannot reproduce
    }
    const double vol = volume_of(rule);
    if (vol < 1e-14 * hd) {
      // Zero-measure cut: nothing to integrate, drop from every later stage.
      mesh.classes[e] = ElementClass::exterior;
      rule = ElementQuadrature{};
      continue;
    }
    if (rule.surface.empty()) {
      const auto m = mesh.multi(e);
      quad.warnings.push_back("element (" + std::to_string(m[0]) + "," +
                              std::to_string(m[1]) +
                              "): cut classification but no interface "
                              "reconstructed at depth " +
                              std::to_string(depth));
    }
  }

  if (opts.emit_outer) {
    // Fitted ambient-boundary faces of surviving elements, trimmed to the
    // inside part, with the ambient outward normal.
    for (int e = 0; e < mesh.n_elements(); ++e) {
      if (mesh.classes[e] == ElementClass::exterior)
        continue;
      const auto m = mesh.multi(e);
      Point blo, bhi;
      mesh.element_box(m, blo, bhi);
      auto& rule = quad.elements[e];
      if (mesh.dim == 1) {
        for (int side = 0; side < 2; ++side) {
          if ((side == 0 && m[0] != 0) || (side == 1 && m[0] != mesh.n[0] - 1))
            continue;
          const Point x = side == 0 ? blo : Point(bhi.x(), 0);
          if (domain.phi(x) < 0)
            rule.surface.push_back(
                {x, 1.0, Point(side == 0 ? -1 : 1, 0), BoundaryTag::outer});
        }
        continue;
      }
      struct Side {
        bool active;
        Point base, dir, normal;
        double len;
      };
      const Side sides[4] = {
          {m[0] == 0, blo, Point(0, 1), Point(-1, 0), bhi.y() - blo.y()},
          {m[0] == mesh.n[0] - 1, Point(bhi.x(), blo.y()), Point(0, 1),
           Point(1, 0), bhi.y() - blo.y()},
          {m[1] == 0, blo, Point(1, 0), Point(0, -1), bhi.x() - blo.x()},
          {m[1] == mesh.n[1] - 1, Point(blo.x(), bhi.y()), Point(1, 0),
           Point(0, 1), bhi.x() - blo.x()},
      };
      for (const auto& s : sides) {
        if (!s.active)
          continue;
        ElementQuadrature line;
        rb.line_inside(s.base, s.dir, s.len, opts.octree_depth, line, false);
        for (const auto& p : line.volume)
          rule.surface.push_back({p.x, p.w, s.normal, BoundaryTag::outer});
      }
    }
  }
  return quad;
}

std::vector<CutMetrics> compute_cut_metrics(const CutQuadrature& quad,
                                            const BackgroundMesh& mesh,
                                            const std::vector<BoundaryTag>& tags) {
  std::vector<CutMetrics> out(mesh.n_elements());
  const double h_K = std::max(mesh.h(0), mesh.dim == 2 ? mesh.h(1) : 0.0);
  const double hd = mesh.dim == 1 ? mesh.h(0) : mesh.h(0) * mesh.h(1);
  for (int e = 0; e < mesh.n_elements(); ++e) {
    auto& m = out[e];
    if (mesh.classes[e] == ElementClass::exterior) {
      m = CutMetrics{0, 0, 0, 1, 0};
      continue;
    }
    m.volume = volume_of(quad.elements[e]);
    m.surface = 0;
    for (const auto& p : quad.elements[e].surface)
      if (std::find(tags.begin(), tags.end(), p.tag) != tags.end())
        m.surface += p.w;
    const double vol_d = std::pow(m.volume, 1.0 / mesh.dim);
    m.h_c = m.surface > 0 ? std::min(m.volume / m.surface, vol_d) : vol_d;
    m.chi = std::min(1.0, m.h_c / h_K);
    m.eta = m.volume / hd;
  }
  return out;
}

double min_chi(const std::vector<CutMetrics>& metrics,
               const BackgroundMesh& mesh) {
  double c = 1;
  for (int e = 0; e < mesh.n_elements(); ++e)
    if (mesh.classes[e] == ElementClass::cut)
      c = std::min(c, metrics[e].chi);
  return c;
}

void dump_quadrature_csv(const CutQuadrature& quad, std::ostream& os) {
  auto tag_name = [](BoundaryTag t) {
    switch (t) {
    case BoundaryTag::dirichlet:
      return "dirichlet";
    case BoundaryTag::neumann:
      return "neumann";
    case BoundaryTag::outer:
      return "outer";
    }
    return "";
  };
  os << "x,y,weight,kind,tag\n";
  for (const auto& e : quad.elements) {
    for (const auto& p : e.volume)
      os << p.x.x() << ',' << p.x.y() << ',' << p.w << ",volume,-\n";
    for (const auto& p : e.surface)
      os << p.x.x() << ',' << p.x.y() << ',' << p.w << ",surface,"
         << tag_name(p.tag) << '\n';
  }
}

} // namespace cutiga
