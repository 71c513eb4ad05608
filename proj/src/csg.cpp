#include "hybridgen/csg.hpp"

#include <cmath>
#include <functional>
#include <numbers>

namespace hg {

Transform Transform::make(Vec3 translation, Vec3 axis, double angle, double scale) {
  Transform t;
  t.translation = translation;
  t.axis = normalize(axis);
  t.angle = angle;
  t.scale = scale;
  t.inverse_rotation = axis_angle_matrix(t.axis, angle).transposed();
  return t;
}

std::size_t CsgTree::leaf_count() const {
  std::size_t n = 0;
  for (const auto& node : nodes) n += node.kind == NodeKind::Primitive;
  return n;
}

std::size_t CsgTree::depth() const {
  std::function<std::size_t(std::int32_t)> rec = [&](std::int32_t i) -> std::size_t {
    const auto& n = nodes[static_cast<std::size_t>(i)];
    if (n.kind == NodeKind::Primitive) return 0;
    return 1 + std::max(rec(n.left), rec(n.right));
  };
  return nodes.empty() ? 0 : rec(0);
}

bool CsgTree::valid() const {
  if (nodes.empty()) return false;
  for (const auto& n : nodes) {
    if (!(n.transform.scale > 0.0)) return false;
    if (n.kind == NodeKind::Primitive) {
      if (n.left != -1 || n.right != -1) return false;
      for (double s : n.size)
        if (!(s > 0.0)) return false;
    } else {
      const auto count = static_cast<std::int32_t>(nodes.size());
      if (n.left <= 0 || n.right <= 0 || n.left >= count || n.right >= count) return false;
    }
  }
  return true;
}

double sdf_sphere(const Vec3& p, double radius) { return length(p) - radius; }

double sdf_cube(const Vec3& p, double side) {
  const double h = 0.5 * side;
  const Vec3 q = abs(p) - Vec3{h, h, h};
  return length(max(q, 0.0)) + std::min(std::max(q.x, std::max(q.y, q.z)), 0.0);
}

// Exact capped cone along y, centered at the origin.
double sdf_truncated_cone(const Vec3& p, double r_bottom, double r_top, double height) {
  const double h = 0.5 * height;
  const double qx = std::sqrt(p.x * p.x + p.z * p.z), qy = p.y;
  const double k1x = r_top, k1y = h;
  const double k2x = r_top - r_bottom, k2y = 2.0 * h;
  const double cax = qx - std::min(qx, qy < 0.0 ? r_bottom : r_top);
  const double cay = std::abs(qy) - h;
  const double k2len2 = k2x * k2x + k2y * k2y;
  const double t = std::clamp(((k1x - qx) * k2x + (k1y - qy) * k2y) / k2len2, 0.0, 1.0);
  const double cbx = qx - k1x + k2x * t;
  const double cby = qy - k1y + k2y * t;
  const double s = (cbx < 0.0 && cay < 0.0) ? -1.0 : 1.0;
  return s * std::sqrt(std::min(cax * cax + cay * cay, cbx * cbx + cby * cby));
}

std::array<Vec3, 4> tetrahedron_vertices(double edge) {
  const double s = edge / (2.0 * std::numbers::sqrt2);
  return {Vec3{s, s, s}, Vec3{s, -s, -s}, Vec3{-s, s, -s}, Vec3{-s, -s, s}};
}

namespace {

// Unsigned distance from p to triangle abc.
double triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ba = b - a, pa = p - a;
  const Vec3 cb = c - b, pb = p - b;
  const Vec3 ac = a - c, pc = p - c;
  const Vec3 nor = cross(ba, ac);
  auto sgn = [](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); };
  const double inside = sgn(dot(cross(ba, nor), pa)) + sgn(dot(cross(cb, nor), pb)) + sgn(dot(cross(ac, nor), pc));
  if (inside < 2.0) {
    auto edge = [](const Vec3& e, const Vec3& q) {
      const double t = std::clamp(dot(e, q) / dot(e, e), 0.0, 1.0);
      const Vec3 d = e * t - q;
      return dot(d, d);
    };
    return std::sqrt(std::min({edge(ba, pa), edge(cb, pb), edge(ac, pc)}));
  }
  const double d = dot(nor, pa);
  return std::sqrt(d * d / dot(nor, nor));
}

}  // namespace

double sdf_tetrahedron(const Vec3& p, double edge) {
  const auto v = tetrahedron_vertices(edge);
  constexpr int faces[4][3] = {{1, 2, 3}, {0, 2, 3}, {0, 1, 3}, {0, 1, 2}};
  double dist = std::numeric_limits<double>::infinity();
  bool inside = true;
  for (int f = 0; f < 4; ++f) {
    const Vec3& a = v[faces[f][0]];
    const Vec3& b = v[faces[f][1]];
    const Vec3& c = v[faces[f][2]];
    dist = std::min(dist, triangle_distance(p, a, b, c));
    // The face opposite vertex f has outward normal -v[f].
    if (dot(p - a, -v[f]) > 0.0) inside = false;
  }
  return inside ? -dist : dist;
}

namespace {

double eval_node(const CsgTree& tree, std::int32_t index, const Vec3& world) {
  const CsgNode& n = tree.nodes[static_cast<std::size_t>(index)];
  const Vec3 p = n.transform.to_local(world);
  double d = 0.0;
  switch (n.kind) {
    case NodeKind::Union:
      d = std::min(eval_node(tree, n.left, p), eval_node(tree, n.right, p));
      break;
    case NodeKind::Subtract:
      d = std::max(eval_node(tree, n.left, p), -eval_node(tree, n.right, p));
      break;
    case NodeKind::Primitive:
      switch (n.primitive) {
        case PrimitiveKind::Sphere: d = sdf_sphere(p, n.size[0]); break;
        case PrimitiveKind::Cube: d = sdf_cube(p, n.size[0]); break;
        case PrimitiveKind::TruncatedCone: d = sdf_truncated_cone(p, n.size[0], n.size[1], n.size[2]); break;
        case PrimitiveKind::Tetrahedron: d = sdf_tetrahedron(p, n.size[0]); break;
      }
      break;
  }
  return d * n.transform.scale;
}

struct Sampler {
  const DecisionVector& beta;
  std::uint64_t shape_key;
  std::size_t max_depth;
  CsgTree tree;

  // Fixed draw order per node, independent of the outcome.
  struct Draws {
    double u_expand, u_op, u_prim;
    double z_size[2];
    double z_translation[3], z_scale[3];
    double u_rotation[3];
  };

  Draws draw(std::uint64_t path) const {
    CounterRng rng(hash_combine(shape_key, path));
    Draws d{};
    d.u_expand = rng.uniform();
    d.u_op = rng.uniform();
    d.u_prim = rng.uniform();
    for (double& z : d.z_size) z = rng.normal();
    for (double& z : d.z_translation) z = rng.normal();
    for (double& z : d.z_scale) z = rng.normal();
    for (double& u : d.u_rotation) u = rng.uniform();
    return d;
  }

  static double lognormal(std::span<const double> moments, std::size_t i, std::size_t n, double z) {
    return std::exp(moments[i] + std::sqrt(moments[n + i]) * z);
  }

  Transform attach_transform(const Draws& d) const {
    const auto t = beta.block("translation");
    const auto s = beta.block("scale");
    Vec3 translation{t[0] + std::sqrt(t[3]) * d.z_translation[0], t[1] + std::sqrt(t[4]) * d.z_translation[1],
                     t[2] + std::sqrt(t[5]) * d.z_translation[2]};
    // Per-axis log-scales collapse to one uniform scale (geometric mean).
    double log_scale = 0.0;
    for (std::size_t a = 0; a < 3; ++a) log_scale += s[a] + std::sqrt(s[3 + a]) * d.z_scale[a];
    const double scale = std::exp(log_scale / 3.0);
    // Uniform random rotation from a uniform unit quaternion.
    const double u1 = d.u_rotation[0], u2 = d.u_rotation[1], u3 = d.u_rotation[2];
    const double qw = std::sqrt(1.0 - u1) * std::sin(2.0 * std::numbers::pi * u2);
    const double qx = std::sqrt(1.0 - u1) * std::cos(2.0 * std::numbers::pi * u2);
    const double qy = std::sqrt(u1) * std::sin(2.0 * std::numbers::pi * u3);
    const double qz = std::sqrt(u1) * std::cos(2.0 * std::numbers::pi * u3);
    const double w = std::clamp(std::abs(qw), 0.0, 1.0);
    const double angle = 2.0 * std::acos(w);
    const double sgn = qw < 0 ? -1.0 : 1.0;
    Vec3 axis{sgn * qx, sgn * qy, sgn * qz};
    if (length(axis) < 1e-12) axis = Vec3{0, 0, 1};
    return Transform::make(translation, axis, angle, scale);
  }

  std::int32_t grow(std::uint64_t path, std::size_t depth, bool attached) {
    const Draws d = draw(path);
    const auto index = static_cast<std::int32_t>(tree.nodes.size());
    tree.nodes.emplace_back();
    if (attached) tree.nodes.back().transform = attach_transform(d);

    const double p_expand = depth < max_depth ? beta.block("expand_prob")[0] : 0.0;
    if (d.u_expand < p_expand) {
      const auto op = categorical_from_uniform(beta.block("op_weights"), d.u_op);
      const std::int32_t left = grow(hash_combine(path, 1), depth + 1, false);
      const std::int32_t right = grow(hash_combine(path, 2), depth + 1, true);
      CsgNode& n = tree.nodes[static_cast<std::size_t>(index)];
      n.kind = op == 0 ? NodeKind::Union : NodeKind::Subtract;
      n.left = left;
      n.right = right;
      return index;
    }

    CsgNode& n = tree.nodes[static_cast<std::size_t>(index)];
    n.kind = NodeKind::Primitive;
    n.primitive = static_cast<PrimitiveKind>(categorical_from_uniform(beta.block("prim_weights"), d.u_prim));
    switch (n.primitive) {
      case PrimitiveKind::Sphere: {
        const double r = lognormal(beta.block("sphere_radius"), 0, 1, d.z_size[0]);
        n.size = {r, r, r};
        break;
      }
      case PrimitiveKind::Cube: {
        const double l = lognormal(beta.block("box_length"), 0, 1, d.z_size[0]);
        n.size = {l, l, l};
        break;
      }
      case PrimitiveKind::TruncatedCone: {
        const auto c = beta.block("cone_size");  // radius mean, radius var, height mean, height var
        const double r = std::exp(c[0] + std::sqrt(c[1]) * d.z_size[0]);
        const double h = std::exp(c[2] + std::sqrt(c[3]) * d.z_size[1]);
        n.size = {r, r, h};
        break;
      }
      case PrimitiveKind::Tetrahedron: {
        const double a = lognormal(beta.block("tetra_length"), 0, 1, d.z_size[0]);
        n.size = {a, a, a};
        break;
      }
    }
    return index;
  }
};

}  // namespace

double sdf_eval(const CsgTree& tree, const Vec3& p) { return eval_node(tree, 0, p); }

CsgTree sample_shape(const DecisionVector& beta, std::uint64_t shape_key, const GrammarSettings& settings) {
  Sampler s{beta, shape_key, settings.max_depth, {}};
  s.grow(1, 0, false);
  return std::move(s.tree);
}

}  // namespace hg
