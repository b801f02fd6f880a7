#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "core/classifier.hpp"
#include "core/geometry.hpp"
#include "core/label.hpp"

namespace exammon {

struct LabeledSample {
  LandmarkFrame frame;
  Label label;

  friend bool operator==(const LabeledSample&, const LabeledSample&) = default;
};

struct Dataset {
  std::vector<LabeledSample> samples;
  std::string provenance;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
};

struct LoadResult {
  Dataset dataset;
  std::size_t rejected = 0;
};

// Reads the newline-delimited frame format; every record must carry a label.
// Frames failing validate_frame are dropped and counted. A syntactically bad
// line aborts with kMalformedRecord naming the line; an empty file is
// kEmptyInput.
LoadResult load_dataset(const std::filesystem::path& path);
void save_dataset(const Dataset& ds, const std::filesystem::path& path);

// Seeded shuffle then cut: |train| = floor(ratio * n).
std::pair<Dataset, Dataset> split(const Dataset& ds, double ratio, std::uint64_t seed);

std::vector<Example> to_examples(const Dataset& ds, FeatureMode mode,
                                 const KeypointSelection& sel = KeypointSelection::default_selection());

}  // namespace exammon
