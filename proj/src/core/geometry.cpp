#include "core/geometry.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "core/errors.hpp"

namespace exammon {

namespace {

// Face-mesh indices: nose tip, chin, forehead, the four eye corners, both
// mouth corners, upper and lower inner lip, cheek extremes, jaw angles and
// the inner brows. Iris centres close the list.
constexpr std::array<int, kSelectedPoints> kDefaultIndices = {
    1, 152, 10, 33, 133, 362, 263, 61, 291, 13, 14, 234, 454, 172, 397, 70, 300, 468, 473};

bool in_unit_interval(double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; }

}  // namespace

double LandmarkFrame::diagonal() const {
  return std::hypot(static_cast<double>(width_), static_cast<double>(height_));
}

RawFrame LandmarkFrame::to_raw() const {
  return RawFrame{frame_id_, ts_ms_, width_, height_, points_};
}

bool is_no_face_sentinel(const RawFrame& raw) {
  return raw.points.size() == kMeshPoints &&
         std::all_of(raw.points.begin(), raw.points.end(),
                     [](const Point2& p) { return p.x == 0.0 && p.y == 0.0; });
}

LandmarkFrame validate_frame(RawFrame raw) {
  if (raw.points.size() != kMeshPoints) {
    throw Error(ErrorCode::kWrongPointCount, "frame '" + raw.frame_id + "' has " +
                                                 std::to_string(raw.points.size()) +
                                                 " points, expected 478");
  }
  if (is_no_face_sentinel(raw)) {
    throw Error(ErrorCode::kAllZeroLandmarks, "frame '" + raw.frame_id + "' has no face");
  }
  if (raw.width <= 0 || raw.height <= 0) {
    throw Error(ErrorCode::kBadMetadata, "frame '" + raw.frame_id + "' has non-positive size");
  }
  for (std::size_t i = 0; i < raw.points.size(); ++i) {
    const Point2& p = raw.points[i];
    if (!in_unit_interval(p.x) || !in_unit_interval(p.y)) {
      throw Error(ErrorCode::kOutOfRange,
                  "frame '" + raw.frame_id + "' point " + std::to_string(i) + " outside [0, 1]");
    }
  }
  LandmarkFrame frame;
  frame.frame_id_ = std::move(raw.frame_id);
  frame.ts_ms_ = raw.ts_ms;
  frame.width_ = raw.width;
  frame.height_ = raw.height;
  frame.points_ = std::move(raw.points);
  return frame;
}

KeypointSelection KeypointSelection::make(std::span<const int> indices) {
  if (indices.size() != kSelectedPoints) {
    throw Error(ErrorCode::kInvalidArgument,
                "keypoint selection needs 19 indices, got " + std::to_string(indices.size()));
  }
  KeypointSelection sel;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const int idx = indices[k];
    if (idx < 0 || idx >= static_cast<int>(kMeshPoints)) {
      throw Error(ErrorCode::kInvalidArgument,
                  "keypoint index " + std::to_string(idx) + " outside [0, 478)");
    }
    if (std::find(indices.begin(), indices.begin() + k, idx) != indices.begin() + k) {
      throw Error(ErrorCode::kInvalidArgument,
                  "duplicate keypoint index " + std::to_string(idx));
    }
    sel.indices_[k] = idx;
  }
  return sel;
}

const KeypointSelection& KeypointSelection::default_selection() {
  static const KeypointSelection sel = make(kDefaultIndices);
  return sel;
}

std::size_t feature_dims(FeatureMode mode) {
  switch (mode) {
    case FeatureMode::kRaw478: return 2 * kMeshPoints;
    case FeatureMode::kRaw19: return 2 * kSelectedPoints;
    case FeatureMode::kDist171: return kPairCount;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown feature mode");
}

std::string_view feature_mode_name(FeatureMode mode) {
  switch (mode) {
    case FeatureMode::kRaw478: return "raw478";
    case FeatureMode::kRaw19: return "raw19";
    case FeatureMode::kDist171: return "dist171";
  }
  return "unknown";
}

FeatureMode parse_feature_mode(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "raw478") return FeatureMode::kRaw478;
  if (lower == "raw19") return FeatureMode::kRaw19;
  if (lower == "dist171") return FeatureMode::kDist171;
  throw Error(ErrorCode::kInvalidArgument, "unknown feature mode '" + std::string(name) + "'");
}

std::vector<Point2> select_keypoints(const LandmarkFrame& frame, const KeypointSelection& sel) {
  const auto pts = frame.points();
  const double w = frame.width();
  const double h = frame.height();
  std::vector<Point2> out;
  out.reserve(kSelectedPoints);
  for (int idx : sel.indices()) {
    const Point2& p = pts[static_cast<std::size_t>(idx)];
    out.push_back({p.x * w, p.y * h});
  }
  return out;
}

std::vector<double> pairwise_distances(std::span<const Point2> pts, double diagonal) {
  if (!(diagonal > 0.0) || !std::isfinite(diagonal)) {
    throw Error(ErrorCode::kDegenerateDiagonal, "frame diagonal must be positive");
  }
  if (pts.size() < 2) {
    throw Error(ErrorCode::kInvalidArgument, "pairwise distances need at least two points");
  }
  const std::size_t n = pts.size();
  std::vector<double> out;
  out.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      out.push_back(std::hypot(pts[i].x - pts[j].x, pts[i].y - pts[j].y) / diagonal);
    }
  }
  return out;
}

FeatureVector featurize(const LandmarkFrame& frame, FeatureMode mode,
                        const KeypointSelection& sel) {
  FeatureVector fv{mode, {}};
  switch (mode) {
    case FeatureMode::kRaw478: {
      fv.values.reserve(2 * kMeshPoints);
      for (const Point2& p : frame.points()) {
        fv.values.push_back(p.x);
        fv.values.push_back(p.y);
      }
      break;
    }
    case FeatureMode::kRaw19: {
      fv.values.reserve(2 * kSelectedPoints);
      const auto pts = frame.points();
      for (int idx : sel.indices()) {
        fv.values.push_back(pts[static_cast<std::size_t>(idx)].x);
        fv.values.push_back(pts[static_cast<std::size_t>(idx)].y);
      }
      break;
    }
    case FeatureMode::kDist171:
      fv.values = pairwise_distances(select_keypoints(frame, sel), frame.diagonal());
      break;
  }
  return fv;
}

}  // namespace exammon
