#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace exammon {

inline constexpr std::size_t kMeshPoints = 478;
inline constexpr std::size_t kSelectedPoints = 19;
inline constexpr std::size_t kPairCount = kSelectedPoints * (kSelectedPoints - 1) / 2;

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

// Unvalidated frame as it arrives from a file or the wire.
struct RawFrame {
  std::string frame_id;
  std::int64_t ts_ms = 0;
  int width = 0;
  int height = 0;
  std::vector<Point2> points;
};

// A frame that passed validate_frame: 478 finite points in [0, 1] and a
// positive resolution. Only validate_frame constructs one.
class LandmarkFrame {
 public:
  const std::string& frame_id() const { return frame_id_; }
  std::int64_t ts_ms() const { return ts_ms_; }
  int width() const { return width_; }
  int height() const { return height_; }
  std::span<const Point2> points() const { return points_; }
  double diagonal() const;

  RawFrame to_raw() const;

  friend bool operator==(const LandmarkFrame&, const LandmarkFrame&) = default;

 private:
  friend LandmarkFrame validate_frame(RawFrame raw);
  LandmarkFrame() = default;

  std::string frame_id_;
  std::int64_t ts_ms_ = 0;
  int width_ = 0;
  int height_ = 0;
  std::vector<Point2> points_;
};

// Throws Error with kWrongPointCount, kAllZeroLandmarks, kBadMetadata or
// kOutOfRange (checked in that order).
LandmarkFrame validate_frame(RawFrame raw);

// True when the frame carries the extractor's no-face marker: exactly 478
// points, all (0, 0).
bool is_no_face_sentinel(const RawFrame& raw);

// Ordered, duplicate-free choice of 19 mesh indices.
class KeypointSelection {
 public:
  static KeypointSelection make(std::span<const int> indices);

  // 17 face-mesh landmarks followed by the two iris centres (468, 473).
  static const KeypointSelection& default_selection();

  std::span<const int> indices() const { return indices_; }

  friend bool operator==(const KeypointSelection&, const KeypointSelection&) = default;

 private:
  std::array<int, kSelectedPoints> indices_{};
};

enum class FeatureMode : std::uint8_t { kRaw478 = 0, kRaw19 = 1, kDist171 = 2 };

std::size_t feature_dims(FeatureMode mode);
std::string_view feature_mode_name(FeatureMode mode);
// Accepts "raw478", "raw19", "dist171" (case-insensitive).
FeatureMode parse_feature_mode(std::string_view name);

struct FeatureVector {
  FeatureMode mode = FeatureMode::kDist171;
  std::vector<double> values;
};

// points[sel[k]] scaled to pixel space, in selection order.
std::vector<Point2> select_keypoints(const LandmarkFrame& frame, const KeypointSelection& sel);

// Euclidean distance of every pair (i, j), i < j, in lexicographic order,
// divided by `diagonal`. Defined for any n >= 2; n = 19 gives 171 values.
std::vector<double> pairwise_distances(std::span<const Point2> pts, double diagonal);

FeatureVector featurize(const LandmarkFrame& frame, FeatureMode mode,
                        const KeypointSelection& sel = KeypointSelection::default_selection());

}  // namespace exammon
