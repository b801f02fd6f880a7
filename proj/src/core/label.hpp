#pragma once

#include <cstdint>
#include <string_view>

namespace exammon {

// Class index 0 is Normal, 1 is Abnormal (the positive class).
enum class Label : std::uint8_t { kNormal = 0, kAbnormal = 1 };

std::string_view label_name(Label label);
// Accepts "normal" / "abnormal"; throws Error(kInvalidArgument) otherwise.
Label parse_label(std::string_view name);

}  // namespace exammon
