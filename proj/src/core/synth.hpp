#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "core/dataset.hpp"
#include "core/geometry.hpp"
#include "core/label.hpp"

namespace exammon {

// Generator settings for the pose-based synthetic dataset.
//   n               number of samples (>= 1)
//   abnormal_ratio  fraction labelled Abnormal, in [0, 1]
//   theta_deg       head-rotation threshold separating the classes, (0, 60]
//   jitter          per-landmark noise, in face-width units, [0, 0.1]
struct SynthSpec {
  std::size_t n = 1200;
  double abnormal_ratio = 0.5;
  double theta_deg = 20.0;
  double jitter = 0.01;
  std::uint64_t seed = 7;
  int width = 640;
  int height = 480;

  void validate() const;
};

// One sample's generating parameters. The head turns by `angle_deg` about
// the in-plane axis (sin phi, cos phi, 0): phi = 0 is pure yaw, phi = pi/2
// pure pitch.
struct PoseParams {
  Label label = Label::kNormal;
  double angle_deg = 0.0;
  double axis_phi = 0.0;
  double scale_px = 170.0;
  double center_x = 320.0;
  double center_y = 240.0;
  std::uint64_t noise_seed = 0;
};

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

// Frontal 478-point face in head coordinates: x right, y down, z toward the
// camera, unit face width.
const std::array<Vec3, kMeshPoints>& canonical_face_mesh();

// Normal poses turn at most theta/2; Abnormal poses turn between 1.25 theta
// and min(2.5 theta, 80) degrees.
PoseParams sample_pose(Label label, double theta_deg, int width, int height, std::mt19937_64& rng);

// Label assignment and per-sample poses exactly as synthesize draws them.
std::vector<PoseParams> sample_poses(const SynthSpec& spec);

RawFrame render_pose(const PoseParams& pose, double jitter, int width, int height,
                     std::string frame_id, std::int64_t ts_ms);

Dataset synthesize(const SynthSpec& spec);

}  // namespace exammon
