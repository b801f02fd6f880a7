#include "core/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "core/errors.hpp"

namespace exammon {

namespace {

double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double standard_normal(std::mt19937_64& rng) {
  // Box-Muller; 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - unit_uniform(rng);
  const double u2 = unit_uniform(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

struct Anchor {
  int index;
  Vec3 pos;
};

// Hand-placed landmarks at the face-mesh indices the default keypoint
// selection uses, plus the ten iris points.
constexpr Anchor kAnchors[] = {
    {1, {0.0, 0.05, 0.32}},      // nose tip
    {152, {0.0, 0.62, 0.08}},    // chin
    {10, {0.0, -0.55, 0.12}},    // forehead
    {33, {-0.36, -0.12, 0.05}},  // eye corners
    {133, {-0.12, -0.11, 0.08}},
    {362, {0.12, -0.11, 0.08}},
    {263, {0.36, -0.12, 0.05}},
    {61, {-0.17, 0.33, 0.14}},  // mouth corners
    {291, {0.17, 0.33, 0.14}},
    {13, {0.0, 0.30, 0.20}},  // inner lips
    {14, {0.0, 0.34, 0.19}},
    {234, {-0.50, 0.02, -0.18}},  // cheeks
    {454, {0.50, 0.02, -0.18}},
    {172, {-0.38, 0.42, -0.08}},  // jaw
    {397, {0.38, 0.42, -0.08}},
    {70, {-0.32, -0.26, 0.10}},  // brows
    {300, {0.32, -0.26, 0.10}},
};

constexpr Vec3 kIrisCentres[2] = {{-0.24, -0.115, 0.07}, {0.24, -0.115, 0.07}};
constexpr double kIrisRadius = 0.045;

std::array<Vec3, kMeshPoints> build_mesh() {
  std::array<Vec3, kMeshPoints> mesh{};
  // Golden-angle spiral over the front of an ellipsoid for the face points.
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (std::size_t i = 0; i < 468; ++i) {
    const double t = (static_cast<double>(i) + 0.5) / 468.0;
    const double r = 0.95 * std::sqrt(t);
    const double a = golden * static_cast<double>(i);
    const double u = r * std::cos(a);
    const double v = r * std::sin(a);
    mesh[i] = {0.5 * u, 0.62 * v, 0.35 * std::sqrt(std::max(0.0, 1.0 - u * u - v * v)) - 0.15};
  }
  for (const Anchor& a : kAnchors) mesh[static_cast<std::size_t>(a.index)] = a.pos;
  for (std::size_t eye = 0; eye < 2; ++eye) {
    const Vec3 c = kIrisCentres[eye];
    const std::size_t base = 468 + 5 * eye;
    mesh[base] = c;
    mesh[base + 1] = {c.x + kIrisRadius, c.y, c.z};
    mesh[base + 2] = {c.x, c.y - kIrisRadius, c.z};
    mesh[base + 3] = {c.x - kIrisRadius, c.y, c.z};
    mesh[base + 4] = {c.x, c.y + kIrisRadius, c.z};
  }
  return mesh;
}

}  // namespace

void SynthSpec::validate() const {
  if (n < 1) throw Error(ErrorCode::kBadSpec, "n must be >= 1");
  if (!(abnormal_ratio >= 0.0 && abnormal_ratio <= 1.0)) {
    throw Error(ErrorCode::kBadSpec, "abnormal_ratio must be in [0, 1]");
  }
  if (!(theta_deg > 0.0 && theta_deg <= 60.0)) {
    throw Error(ErrorCode::kBadSpec, "theta_deg must be in (0, 60]");
  }
  if (!(jitter >= 0.0 && jitter <= 0.1)) throw Error(ErrorCode::kBadSpec, "jitter must be in [0, 0.1]");
  if (width <= 0 || height <= 0) throw Error(ErrorCode::kBadSpec, "frame size must be positive");
}

const std::array<Vec3, kMeshPoints>& canonical_face_mesh() {
  static const std::array<Vec3, kMeshPoints> mesh = build_mesh();
  return mesh;
}

PoseParams sample_pose(Label label, double theta_deg, int width, int height, std::mt19937_64& rng) {
  PoseParams p;
  p.label = label;
  if (label == Label::kNormal) {
    p.angle_deg = 0.5 * theta_deg * unit_uniform(rng);
  } else {
    const double lo = 1.25 * theta_deg;
    const double hi = std::min(2.5 * theta_deg, 80.0);
    p.angle_deg = lo + (hi - lo) * unit_uniform(rng);
  }
  p.axis_phi = 2.0 * std::numbers::pi * unit_uniform(rng);
  p.scale_px = width * (0.234 + 0.0625 * unit_uniform(rng));
  p.center_x = width * (0.5 + 0.1 * (unit_uniform(rng) - 0.5));
  p.center_y = height * (0.5 + 0.1 * (unit_uniform(rng) - 0.5));
  p.noise_seed = rng();
  return p;
}

std::vector<PoseParams> sample_poses(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const auto n_abnormal = static_cast<std::size_t>(
      std::llround(spec.abnormal_ratio * static_cast<double>(spec.n)));
  std::vector<Label> labels(spec.n, Label::kNormal);
  std::fill_n(labels.begin(), std::min(n_abnormal, spec.n), Label::kAbnormal);
  // Fisher-Yates with our own uniform draw so the order is library-independent.
  for (std::size_t i = spec.n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(unit_uniform(rng) * static_cast<double>(i));
    std::swap(labels[i - 1], labels[std::min(j, i - 1)]);
  }
  std::vector<PoseParams> poses;
  poses.reserve(spec.n);
  for (Label label : labels) {
    poses.push_back(sample_pose(label, spec.theta_deg, spec.width, spec.height, rng));
  }
  return poses;
}

RawFrame render_pose(const PoseParams& pose, double jitter, int width, int height,
                     std::string frame_id, std::int64_t ts_ms) {
  const double angle = pose.angle_deg * std::numbers::pi / 180.0;
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  const double kx = std::sin(pose.axis_phi);
  const double ky = std::cos(pose.axis_phi);
  std::mt19937_64 noise(pose.noise_seed);
  const double sigma = jitter * pose.scale_px;

  RawFrame frame;
  frame.frame_id = std::move(frame_id);
  frame.ts_ms = ts_ms;
  frame.width = width;
  frame.height = height;
  frame.points.reserve(kMeshPoints);
  for (const Vec3& v : canonical_face_mesh()) {
    // Rodrigues rotation about k = (kx, ky, 0); only x and y survive projection.
    const double k_dot_v = kx * v.x + ky * v.y;
    const Vec3 k_cross_v{ky * v.z, -kx * v.z, kx * v.y - ky * v.x};
    const double rx = v.x * c + k_cross_v.x * s + kx * k_dot_v * (1.0 - c);
    const double ry = v.y * c + k_cross_v.y * s + ky * k_dot_v * (1.0 - c);
    const double px = pose.center_x + pose.scale_px * rx + sigma * standard_normal(noise);
    const double py = pose.center_y + pose.scale_px * ry + sigma * standard_normal(noise);
    frame.points.push_back({std::clamp(px / width, 0.0, 1.0), std::clamp(py / height, 0.0, 1.0)});
  }
  return frame;
}

Dataset synthesize(const SynthSpec& spec) {
  const std::vector<PoseParams> poses = sample_poses(spec);
  Dataset ds;
  ds.provenance = "synth n=" + std::to_string(spec.n) +
                  " abnormal_ratio=" + std::to_string(spec.abnormal_ratio) +
                  " theta_deg=" + std::to_string(spec.theta_deg) +
                  " jitter=" + std::to_string(spec.jitter) + " seed=" + std::to_string(spec.seed);
  ds.samples.reserve(poses.size());
  for (std::size_t i = 0; i < poses.size(); ++i) {
    RawFrame raw = render_pose(poses[i], spec.jitter, spec.width, spec.height,
                               "synth-" + std::to_string(spec.seed) + "-" + std::to_string(i),
                               static_cast<std::int64_t>(i) * 37);
    ds.samples.push_back({validate_frame(std::move(raw)), poses[i].label});
  }
  return ds;
}

}  // namespace exammon
