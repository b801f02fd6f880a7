#pragma once

#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "core/geometry.hpp"
#include "core/label.hpp"

namespace exammon {

// One line of the shared newline-delimited frame format:
//   {"id": str, "ts_ms": int, "width": int, "height": int,
//    "landmarks": [[x, y] x 478], "label": "normal"|"abnormal" (optional)}
struct FrameRecord {
  RawFrame frame;
  std::optional<Label> label;
};

// Throws Error(kMalformedRecord) on syntax errors, missing fields or
// wrongly-typed values. Point count and ranges are left to validate_frame.
FrameRecord parse_frame_record(std::string_view line);
FrameRecord frame_record_from_json(const nlohmann::json& j);

std::vector<Point2> parse_landmarks(const nlohmann::json& arr);

nlohmann::json frame_record_to_json(const RawFrame& frame, std::optional<Label> label);
std::string format_frame_record(const RawFrame& frame, std::optional<Label> label);

}  // namespace exammon
