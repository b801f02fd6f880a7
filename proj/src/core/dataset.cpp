#include "core/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "core/errors.hpp"
#include "core/frame_record.hpp"

namespace exammon {

LoadResult load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string());

  LoadResult result;
  result.dataset.provenance = path.string();
  std::string line;
  std::size_t line_no = 0;
  std::size_t records = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) {
      continue;
    }
    ++records;
    FrameRecord rec;
    try {
      rec = parse_frame_record(line);
    } catch (const Error& e) {
      throw Error(ErrorCode::kMalformedRecord,
                  path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!rec.label) {
      throw Error(ErrorCode::kMalformedRecord,
                  path.string() + ":" + std::to_string(line_no) + ": missing label");
    }
    try {
      result.dataset.samples.push_back({validate_frame(std::move(rec.frame)), *rec.label});
    } catch (const Error&) {
      ++result.rejected;
    }
  }
  if (in.bad()) throw Error(ErrorCode::kIoFailure, "read failed: " + path.string());
  if (records == 0) throw Error(ErrorCode::kEmptyInput, path.string() + " contains no records");
  return result;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string() + " for writing");
  for (const LabeledSample& s : ds.samples) {
    out << format_frame_record(s.frame.to_raw(), s.label) << '\n';
  }
  if (!out) throw Error(ErrorCode::kIoFailure, "write failed: " + path.string());
}

std::pair<Dataset, Dataset> split(const Dataset& ds, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw Error(ErrorCode::kInvalidRatio, "split ratio must be in (0, 1)");
  }
  if (ds.empty()) throw Error(ErrorCode::kEmptyDataset, "cannot split an empty dataset");

  const std::size_t n = ds.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  // The epsilon keeps products like 0.29 * 100 from flooring to 28.
  const auto n_train = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));

  const std::string tag = " [split ratio=" + std::to_string(ratio) + " seed=" + std::to_string(seed);
  Dataset train{{}, ds.provenance + tag + " part=train]"};
  Dataset val{{}, ds.provenance + tag + " part=val]"};
  train.samples.reserve(n_train);
  val.samples.reserve(n - n_train);
  for (std::size_t k = 0; k < n; ++k) {
    (k < n_train ? train : val).samples.push_back(ds.samples[order[k]]);
  }
  return {std::move(train), std::move(val)};
}

std::vector<Example> to_examples(const Dataset& ds, FeatureMode mode, const KeypointSelection& sel) {
  std::vector<Example> out;
  out.reserve(ds.size());
  for (const LabeledSample& s : ds.samples) {
    out.push_back({featurize(s.frame, mode, sel).values, s.label});
  }
  return out;
}

}  // namespace exammon
