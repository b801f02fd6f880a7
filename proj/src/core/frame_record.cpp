#include "core/frame_record.hpp"

#include "core/errors.hpp"

namespace exammon {

using nlohmann::json;

std::string_view label_name(Label label) {
  return label == Label::kAbnormal ? "abnormal" : "normal";
}

Label parse_label(std::string_view name) {
  if (name == "normal") return Label::kNormal;
  if (name == "abnormal") return Label::kAbnormal;
  throw Error(ErrorCode::kInvalidArgument, "unknown label '" + std::string(name) + "'");
}

std::vector<Point2> parse_landmarks(const json& arr) {
  if (!arr.is_array()) {
    throw Error(ErrorCode::kMalformedRecord, "landmarks must be an array");
  }
  std::vector<Point2> pts;
  pts.reserve(arr.size());
  for (const json& p : arr) {
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
      throw Error(ErrorCode::kMalformedRecord, "landmark entries must be [x, y] number pairs");
    }
    pts.push_back({p[0].get<double>(), p[1].get<double>()});
  }
  return pts;
}

FrameRecord frame_record_from_json(const json& j) {
  if (!j.is_object()) {
    throw Error(ErrorCode::kMalformedRecord, "frame record must be a JSON object");
  }
  auto require = [&](const char* key) -> const json& {
    auto it = j.find(key);
    if (it == j.end()) {
      throw Error(ErrorCode::kMalformedRecord, std::string("missing field '") + key + "'");
    }
    return *it;
  };
  const json& id = require("id");
  const json& ts = require("ts_ms");
  const json& width = require("width");
  const json& height = require("height");
  if (!id.is_string() || !ts.is_number_integer() || !width.is_number_integer() ||
      !height.is_number_integer()) {
    throw Error(ErrorCode::kMalformedRecord, "id/ts_ms/width/height have wrong types");
  }
  FrameRecord rec;
  rec.frame.frame_id = id.get<std::string>();
  rec.frame.ts_ms = ts.get<std::int64_t>();
  rec.frame.width = width.get<int>();
  rec.frame.height = height.get<int>();
  rec.frame.points = parse_landmarks(require("landmarks"));
  if (auto it = j.find("label"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) throw Error(ErrorCode::kMalformedRecord, "label must be a string");
    try {
      rec.label = parse_label(it->get<std::string>());
    } catch (const Error& e) {
      throw Error(ErrorCode::kMalformedRecord, e.what());
    }
  }
  return rec;
}

FrameRecord parse_frame_record(std::string_view line) {
  json j = json::parse(line.begin(), line.end(), nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) {
    throw Error(ErrorCode::kMalformedRecord, "not valid JSON");
  }
  return frame_record_from_json(j);
}

json frame_record_to_json(const RawFrame& frame, std::optional<Label> label) {
  json pts = json::array();
  for (const Point2& p : frame.points) pts.push_back(json::array({p.x, p.y}));
  json j = {{"id", frame.frame_id},
            {"ts_ms", frame.ts_ms},
            {"width", frame.width},
            {"height", frame.height},
            {"landmarks", std::move(pts)}};
  if (label) j["label"] = label_name(*label);
  return j;
}

std::string format_frame_record(const RawFrame& frame, std::optional<Label> label) {
  return frame_record_to_json(frame, label).dump();
}

}  // namespace exammon
