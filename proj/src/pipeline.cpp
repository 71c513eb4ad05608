#include "hybridgen/pipeline.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

#include "hybridgen/parallel.hpp"

namespace hg {

namespace {

constexpr std::uint64_t kShapeStream = 'S';
constexpr std::uint64_t kRenderStream = 'R';
constexpr std::uint64_t kToyStream = 'T';
constexpr std::size_t kToyDim = 6;

// Forward-mode value with derivatives along the toy decision vector.
struct Dual {
  double v = 0.0;
  std::array<double, kToyDim> d{};

  Dual() = default;
  Dual(double value) : v(value) {}  // NOLINT: constants promote implicitly
  static Dual variable(double value, std::size_t i) {
    Dual x(value);
    x.d[i] = 1.0;
    return x;
  }
};

Dual operator+(const Dual& a, const Dual& b) {
  Dual r(a.v + b.v);
  for (std::size_t i = 0; i < kToyDim; ++i) r.d[i] = a.d[i] + b.d[i];
  return r;
}
Dual operator-(const Dual& a, const Dual& b) {
  Dual r(a.v - b.v);
  for (std::size_t i = 0; i < kToyDim; ++i) r.d[i] = a.d[i] - b.d[i];
  return r;
}
Dual operator-(const Dual& a) { return Dual(0.0) - a; }
Dual operator*(const Dual& a, const Dual& b) {
  Dual r(a.v * b.v);
  for (std::size_t i = 0; i < kToyDim; ++i) r.d[i] = a.d[i] * b.v + a.v * b.d[i];
  return r;
}
Dual operator/(const Dual& a, const Dual& b) {
  Dual r(a.v / b.v);
  for (std::size_t i = 0; i < kToyDim; ++i) r.d[i] = (a.d[i] * b.v - a.v * b.d[i]) / (b.v * b.v);
  return r;
}
Dual exp(const Dual& a) {
  Dual r(std::exp(a.v));
  for (std::size_t i = 0; i < kToyDim; ++i) r.d[i] = r.v * a.d[i];
  return r;
}
Dual sqrt(const Dual& a) {
  Dual r(std::sqrt(a.v));
  for (std::size_t i = 0; i < kToyDim; ++i) r.d[i] = a.d[i] / (2.0 * r.v);
  return r;
}

// Evaluates the toy generator for scalar type T and hands every output entry
// to emit(flat_index, value) in flatten() order.
template <class T, class Emit>
void toy_eval(const std::array<T, kToyDim>& b, const ToyPipeline& p, double ju, double jv, Emit&& emit) {
  using std::exp;
  using std::sqrt;
  const T& cx = b[0];
  const T& cy = b[1];
  const T& w = b[2];
  const T& tx = b[3];
  const T& ty = b[4];
  const T& amp = b[5];
  const std::size_t H = p.height(), W = p.width(), C = truth_channels(p.task());
  const std::size_t image_size = H * W;
  const T inv_two_w2 = T(1.0) / (T(2.0) * w * w);
  for (std::size_t i = 0; i < H; ++i) {
    for (std::size_t j = 0; j < W; ++j) {
      const std::size_t px = i * W + j;
      const T du = T(p.pixel_u(j)) - cx - T(ju);
      const T dv = T(p.pixel_v(i)) - cy - T(jv);
      const T h = amp * exp(-(du * du + dv * dv) * inv_two_w2);
      emit(px, h);
      if (C == 3) {
        // dh/du = -h du / w^2
        const T w2 = w * w;
        const T nx = h * du / w2 + tx;
        const T ny = h * dv / w2 + ty;
        const T norm = sqrt(nx * nx + ny * ny + T(1.0));
        emit(image_size + px * 3 + 0, nx / norm);
        emit(image_size + px * 3 + 1, ny / norm);
        emit(image_size + px * 3 + 2, T(1.0) / norm);
      } else {
        emit(image_size + px, T(2.0) - h);
      }
    }
  }
}

}  // namespace

Tensor Pipeline::analytic_jacobian(const DecisionVector&, const Seed&) const {
  throw std::logic_error("pipeline '" + name() + "' has no analytic Jacobian");
}

CsgPipeline::CsgPipeline(std::shared_ptr<const Layout> layout, RenderSettings render, GrammarSettings grammar,
                         RenderDistribution render_dist)
    : layout_(std::move(layout)), render_(render), grammar_(grammar), render_dist_(render_dist) {
  if (!layout_ || !layout_->find("prim_weights")) throw std::invalid_argument("CSG pipeline needs a CSG layout");
}

CsgTree CsgPipeline::shape(const DecisionVector& beta, const Seed& seed) const {
  return sample_shape(beta, hash_combine(seed_key(seed), kShapeStream), grammar_);
}

RenderConfig CsgPipeline::render_config(const DecisionVector& beta, const Seed& seed) const {
  return sample_render(beta, hash_combine(seed_key(seed), kRenderStream), render_dist_);
}

Sample CsgPipeline::generate(const DecisionVector& beta, const Seed& seed) const {
  return render(shape(beta, seed), render_config(beta, seed), render_);
}

ToyPipeline::ToyPipeline(ToySettings settings) : settings_(settings) {
  if (settings_.width == 0 || settings_.height == 0) throw std::invalid_argument("toy image must be nonempty");
}

double ToyPipeline::pixel_u(std::size_t col) const {
  return (static_cast<double>(col) + 0.5) / static_cast<double>(settings_.width) * 2.0 - 1.0;
}

double ToyPipeline::pixel_v(std::size_t row) const {
  return 1.0 - (static_cast<double>(row) + 0.5) / static_cast<double>(settings_.height) * 2.0;
}

std::pair<double, double> ToyPipeline::jitter(const Seed& seed) const {
  CounterRng rng(seed, kToyStream);
  const double ju = rng.uniform(-settings_.jitter, settings_.jitter);
  const double jv = rng.uniform(-settings_.jitter, settings_.jitter);
  return {ju, jv};
}

Sample ToyPipeline::generate(const DecisionVector& beta, const Seed& seed) const {
  if (beta.size() != kToyDim) throw std::invalid_argument("toy pipeline needs a 6-entry decision vector");
  const std::size_t H = settings_.height, W = settings_.width, C = truth_channels(settings_.task);
  Sample s{Tensor(Shape{H, W, 1}), Tensor(Shape{H, W, C}), std::vector<std::uint8_t>(H * W, 1)};
  std::array<double, kToyDim> b{};
  for (std::size_t i = 0; i < kToyDim; ++i) b[i] = beta[i];
  const auto [ju, jv] = jitter(seed);
  const std::size_t image_size = H * W;
  toy_eval(b, *this, ju, jv, [&](std::size_t k, double v) {
    if (k < image_size) {
      s.image[k] = v;
    } else {
      s.truth[k - image_size] = v;
    }
  });
  return s;
}

Tensor ToyPipeline::analytic_jacobian(const DecisionVector& beta, const Seed& seed) const {
  if (beta.size() != kToyDim) throw std::invalid_argument("toy pipeline needs a 6-entry decision vector");
  std::array<Dual, kToyDim> b;
  for (std::size_t i = 0; i < kToyDim; ++i) b[i] = Dual::variable(beta[i], i);
  const auto [ju, jv] = jitter(seed);
  Tensor jac(Shape{flat_size(), kToyDim});
  toy_eval(b, *this, ju, jv, [&](std::size_t k, const Dual& v) {
    for (std::size_t c = 0; c < kToyDim; ++c) jac.at(k, c) = v.d[c];
  });
  return jac;
}

DecisionVector default_csg_beta(bool with_render) {
  std::vector<double> v{
      0.25, 0.25, 0.25, 0.25,            // prim_weights
      0.5, 0.5,                          // op_weights
      0.3,                               // expand_prob
      0.0, 0.0, 0.0, 0.04, 0.04, 0.04,   // translation
      0.0, 0.0, 0.0, 0.01, 0.01, 0.01,   // scale
      std::log(0.7), 0.01,               // sphere_radius
      std::log(1.0), 0.01,               // box_length
      std::log(0.5), 0.01, std::log(1.0), 0.01,  // cone_size
      std::log(1.2), 0.01,               // tetra_length
  };
  if (!with_render) return DecisionVector(Layout::csg(), std::move(v));
  const std::vector<double> yaw{1, 0, 0, 0.6, 0, 0, 0.05, 0.05, 0.05};
  const std::vector<double> pitch{1, 0, 0, 0.4, 0, 0, 0.05, 0.05, 0.05};
  v.insert(v.end(), yaw.begin(), yaw.end());
  v.insert(v.end(), pitch.begin(), pitch.end());
  return DecisionVector(Layout::csg_with_render(), std::move(v));
}

DecisionVector default_toy_beta() { return DecisionVector(Layout::toy(), {0.0, 0.0, 0.4, 0.0, 0.0, 0.8}); }

std::vector<Sample> generate_dataset(const Pipeline& pipeline, const DecisionVector& beta,
                                     const std::vector<Seed>& seeds) {
  std::vector<Sample> out(seeds.size());
  parallel_for(seeds.size(), [&](std::size_t i) { out[i] = pipeline.generate(beta, seeds[i]); });
  return out;
}

std::vector<Seed> seed_range(std::uint64_t stream, std::uint64_t first, std::size_t n) {
  std::vector<Seed> seeds(n);
  for (std::size_t i = 0; i < n; ++i) seeds[i] = Seed{stream, first + i};
  return seeds;
}

}  // namespace hg
