#include "hybridgen/render.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace hg {

double VonMisesMixture::sample(CounterRng& rng) const {
  // Component choice and the angle use separate child streams so the number
  // of rejection rounds cannot shift the component draw.
  CounterRng pick = rng.child(1);
  CounterRng angle = rng.child(2);
  const std::size_t k = pick.categorical(weights);
  return angle.von_mises(means[k], 1.0 / variances[k]);
}

VonMisesMixture VonMisesMixture::from_block(std::span<const double> block) {
  VonMisesMixture m;
  for (std::size_t i = 0; i < 3; ++i) {
    m.weights[i] = block[i];
    m.means[i] = block[3 + i];
    m.variances[i] = block[6 + i];
  }
  return m;
}

Vec3 direction_from_angles(double yaw, double pitch) {
  return {std::cos(pitch) * std::sin(yaw), std::sin(pitch), std::cos(pitch) * std::cos(yaw)};
}

void camera_basis(const Vec3& camera_dir, Vec3& right, Vec3& up) {
  Vec3 world_up{0, 1, 0};
  if (std::abs(camera_dir.y) > 0.999) world_up = Vec3{0, 0, -1};
  right = normalize(cross(world_up, camera_dir));
  up = cross(camera_dir, right);
}

RenderConfig sample_render(const DecisionVector& beta, std::uint64_t render_key, const RenderDistribution& dist) {
  VonMisesMixture yaw = dist.yaw, pitch = dist.pitch;
  if (beta.layout().find("yaw")) yaw = VonMisesMixture::from_block(beta.block("yaw"));
  if (beta.layout().find("pitch")) pitch = VonMisesMixture::from_block(beta.block("pitch"));

  CounterRng root(render_key);
  CounterRng yaw_rng = root.child(1), pitch_rng = root.child(2), light_rng = root.child(3);

  RenderConfig c;
  c.yaw = yaw.sample(yaw_rng);
  c.pitch = pitch.sample(pitch_rng);
  c.camera_dir = direction_from_angles(c.yaw, c.pitch);
  c.frame_scale = dist.frame_scale;

  Vec3 right, up;
  camera_basis(c.camera_dir, right, up);
  const double cos_t = light_rng.uniform(dist.light_min_cos, 1.0);
  const double sin_t = std::sqrt(std::max(0.0, 1.0 - cos_t * cos_t));
  const double phi = light_rng.uniform(0.0, 2.0 * std::numbers::pi);
  c.light_dir = normalize(c.camera_dir * cos_t + right * (sin_t * std::cos(phi)) + up * (sin_t * std::sin(phi)));
  return c;
}

Sample render(const CsgTree& tree, const RenderConfig& config, const RenderSettings& settings) {
  const std::size_t H = settings.height, W = settings.width;
  const std::size_t C = truth_channels(settings.task);
  Sample s{Tensor(Shape{H, W, 1}), Tensor(Shape{H, W, C}), std::vector<std::uint8_t>(H * W, 0)};

  Vec3 right, up;
  const Vec3 cam = config.camera_dir;
  camera_basis(cam, right, up);
  const Vec3 forward = -cam;
  const double max_t = 2.0 * settings.start_distance;
  const double h = settings.normal_step;

  for (std::size_t i = 0; i < H; ++i) {
    for (std::size_t j = 0; j < W; ++j) {
      const double u = ((static_cast<double>(j) + 0.5) / static_cast<double>(W) * 2.0 - 1.0) * config.frame_scale;
      const double v = (1.0 - (static_cast<double>(i) + 0.5) / static_cast<double>(H) * 2.0) * config.frame_scale;
      const Vec3 origin = cam * settings.start_distance + right * u + up * v;

      double t = 0.0;
      bool hit = false;
      for (std::size_t step = 0; step < settings.max_steps && t < max_t; ++step) {
        const double d = sdf_eval(tree, origin + forward * t);
        if (d < settings.hit_threshold) {
          hit = true;
          break;
        }
        t += d;
      }
      if (!hit) continue;

      auto gradient = [&](const Vec3& p) {
        return Vec3{sdf_eval(tree, p + Vec3{h, 0, 0}) - sdf_eval(tree, p - Vec3{h, 0, 0}),
                    sdf_eval(tree, p + Vec3{0, h, 0}) - sdf_eval(tree, p - Vec3{0, h, 0}),
                    sdf_eval(tree, p + Vec3{0, 0, h}) - sdf_eval(tree, p - Vec3{0, 0, h})} /
               (2.0 * h);
      };
      // The march stops up to hit_threshold short of the surface, which near
      // the silhouette is a large error along the ray. One Newton step on
      // sdf(origin + t * forward) = 0 removes most of it.
      Vec3 grad = gradient(origin + forward * t);
      const double slope = -dot(grad, forward);
      if (slope > 0.02) {
        const double d = sdf_eval(tree, origin + forward * t);
        t += d / slope;
        grad = gradient(origin + forward * t);
      }
      const Vec3 n = length(grad) > 0.0 ? normalize(grad) : cam;

      const std::size_t px = i * W + j;
      s.mask[px] = 1;
      s.image[px] = std::clamp(std::max(0.0, dot(n, config.light_dir)) + settings.ambient, 0.0, 1.0);
      if (settings.task == Task::Normal) {
        s.truth[px * 3 + 0] = dot(n, right);
        s.truth[px * 3 + 1] = dot(n, up);
        s.truth[px * 3 + 2] = dot(n, cam);
      } else {
        s.truth[px] = t;
      }
    }
  }
  return s;
}

}  // namespace hg
