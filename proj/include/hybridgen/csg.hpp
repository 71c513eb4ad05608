#pragma once

// Shape programs from the CSG grammar
//
//   S => E
//   E => C(E, T(E)) | P
//   C => union | subtract
//   P => sphere | cube | truncated_cone | tetrahedron
//   T => translate * rotate * scale
//
// and their signed distance functions.

#include <array>
#include <cstdint>
#include <limits>
#include <vector>

#include "hybridgen/decision_vector.hpp"
#include "hybridgen/rng.hpp"
#include "hybridgen/vec3.hpp"

namespace hg {

enum class NodeKind : std::uint8_t { Union, Subtract, Primitive };
enum class PrimitiveKind : std::uint8_t { Sphere, Cube, TruncatedCone, Tetrahedron };
inline constexpr std::size_t kPrimitiveKinds = 4;

struct Transform {
  Vec3 translation;
  Vec3 axis{0, 0, 1};
  double angle = 0.0;
  double scale = 1.0;
  Mat3 inverse_rotation;  // cached transpose of the rotation

  static Transform make(Vec3 translation, Vec3 axis, double angle, double scale);
  bool is_identity() const { return translation == Vec3{} && angle == 0.0 && scale == 1.0; }
  Vec3 to_local(const Vec3& p) const { return (inverse_rotation * (p - translation)) / scale; }
};

struct CsgNode {
  NodeKind kind = NodeKind::Primitive;
  std::int32_t left = -1;
  std::int32_t right = -1;
  PrimitiveKind primitive = PrimitiveKind::Sphere;
  // sphere: radius | cube: side | truncated cone: bottom radius, top radius,
  // height | tetrahedron: edge length
  std::array<double, 3> size{1.0, 1.0, 1.0};
  Transform transform;
};

// Node 0 is the root.
struct CsgTree {
  std::vector<CsgNode> nodes;

  std::size_t leaf_count() const;
  std::size_t depth() const;
  bool valid() const;
};

struct GrammarSettings {
  std::size_t max_depth = 6;
};

double sdf_sphere(const Vec3& p, double radius);
double sdf_cube(const Vec3& p, double side);
double sdf_truncated_cone(const Vec3& p, double r_bottom, double r_top, double height);
double sdf_tetrahedron(const Vec3& p, double edge);
// Vertices of the regular tetrahedron used by sdf_tetrahedron.
std::array<Vec3, 4> tetrahedron_vertices(double edge);

double sdf_eval(const CsgTree& tree, const Vec3& p);

// f_S(beta_S, r_S). Every node draws from its own stream keyed by its path in
// the tree, so perturbing beta changes each node's draws smoothly rather than
// shifting draws between nodes.
CsgTree sample_shape(const DecisionVector& beta, std::uint64_t shape_key, const GrammarSettings& settings = {});

}  // namespace hg
