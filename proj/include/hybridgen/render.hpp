#pragma once

#include <optional>

#include "hybridgen/csg.hpp"
#include "hybridgen/decision_vector.hpp"
#include "hybridgen/rng.hpp"
#include "hybridgen/sample.hpp"
#include "hybridgen/vec3.hpp"

namespace hg {

struct RenderConfig {
  double yaw = 0.0;
  double pitch = 0.0;
  Vec3 camera_dir{0, 0, 1};  // unit, from the origin towards the camera
  double frame_scale = 1.5;  // half-extent of the orthographic view
  Vec3 light_dir{0, 0, 1};   // unit, from the surface towards the light
};

struct VonMisesMixture {
  std::array<double, 3> weights{1.0, 0.0, 0.0};
  std::array<double, 3> means{0.0, 0.0, 0.0};
  std::array<double, 3> variances{0.05, 0.05, 0.05};  // concentration = 1 / variance

  double sample(CounterRng& rng) const;
  static VonMisesMixture from_block(std::span<const double> block);
};

// Render-distribution parameters used when beta carries no render block.
struct RenderDistribution {
  VonMisesMixture yaw{{1, 0, 0}, {0.6, 0, 0}, {0.05, 0.05, 0.05}};
  VonMisesMixture pitch{{1, 0, 0}, {0.4, 0, 0}, {0.05, 0.05, 0.05}};
  double frame_scale = 1.5;
  // Light directions are uniform over the cap of the camera-facing
  // hemisphere with cos(angle to the view direction) >= this.
  double light_min_cos = 0.5;
};

struct RenderSettings {
  std::size_t width = 16;
  std::size_t height = 16;
  Task task = Task::Normal;
  std::size_t max_steps = 128;
  double hit_threshold = 1e-4;
  double normal_step = 1e-4;
  double ambient = 0.1;
  double start_distance = 20.0;
};

// Camera basis for a unit camera direction: right, up, camera_dir.
void camera_basis(const Vec3& camera_dir, Vec3& right, Vec3& up);
Vec3 direction_from_angles(double yaw, double pitch);

// f_R(beta_R, r_R): yaw and pitch from von Mises mixtures (from beta's "yaw"
// and "pitch" blocks when present), light from a hemisphere cap.
RenderConfig sample_render(const DecisionVector& beta, std::uint64_t render_key, const RenderDistribution& dist = {});

// R(S, P): orthographic sphere tracing of the tree's SDF.
Sample render(const CsgTree& tree, const RenderConfig& config, const RenderSettings& settings);

}  // namespace hg
