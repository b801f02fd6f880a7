#include <array>
#include <cmath>
#include <numbers>
#include <cstring>
#include <random>

#include "core/geometry.hpp"
#include "support/helpers.hpp"

using namespace exammon;
using testing::oracle_pairwise;
using testing::random_frame;

TEST_CASE("validate_frame accepts an in-range 640x480 frame") {
  std::mt19937_64 rng(1);
  const LandmarkFrame f = validate_frame(random_frame(rng));
  CHECK(f.points().size() == 478);
  CHECK(f.width() == 640);
  CHECK(f.height() == 480);
  CHECK(f.diagonal() == doctest::Approx(800.0));
}

TEST_CASE("validate_frame rejections") {
  std::mt19937_64 rng(2);
  SUBCASE("all-zero sentinel") {
    CHECK_ERROR_CODE(validate_frame(testing::zero_frame()), ErrorCode::kAllZeroLandmarks);
    CHECK(is_no_face_sentinel(testing::zero_frame()));
  }
  SUBCASE("477 points") {
    RawFrame f = random_frame(rng);
    f.points.pop_back();
    CHECK_ERROR_CODE(validate_frame(f), ErrorCode::kWrongPointCount);
    CHECK_FALSE(is_no_face_sentinel(f));
  }
  SUBCASE("479 points") {
    RawFrame f = random_frame(rng);
    f.points.push_back({0.5, 0.5});
    CHECK_ERROR_CODE(validate_frame(f), ErrorCode::kWrongPointCount);
  }
  SUBCASE("coordinate above 1") {
    RawFrame f = random_frame(rng);
    f.points[10].x = 1.0000001;
    CHECK_ERROR_CODE(validate_frame(f), ErrorCode::kOutOfRange);
  }
  SUBCASE("negative coordinate") {
    RawFrame f = random_frame(rng);
    f.points[477].y = -0.1;
    CHECK_ERROR_CODE(validate_frame(f), ErrorCode::kOutOfRange);
  }
  SUBCASE("non-finite coordinate") {
    RawFrame f = random_frame(rng);
    f.points[3].y = std::nan("");
    CHECK_ERROR_CODE(validate_frame(f), ErrorCode::kOutOfRange);
    f.points[3].y = INFINITY;
    CHECK_ERROR_CODE(validate_frame(f), ErrorCode::kOutOfRange);
  }
  SUBCASE("bad metadata") {
    RawFrame f = random_frame(rng);
    f.width = 0;
    CHECK_ERROR_CODE(validate_frame(f), ErrorCode::kBadMetadata);
    f.width = 640;
    f.height = -1;
    CHECK_ERROR_CODE(validate_frame(f), ErrorCode::kBadMetadata);
  }
  SUBCASE("boundary values 0 and 1 are valid") {
    RawFrame f = random_frame(rng);
    f.points[0] = {0.0, 1.0};
    f.points[1] = {1.0, 0.0};
    CHECK_NOTHROW(validate_frame(f));
  }
  SUBCASE("a single nonzero point is not the sentinel") {
    RawFrame f = testing::zero_frame();
    f.points[100] = {0.25, 0.5};
    CHECK_FALSE(is_no_face_sentinel(f));
    CHECK_NOTHROW(validate_frame(f));
  }
}

TEST_CASE("keypoint selection construction") {
  const auto& def = KeypointSelection::default_selection();
  CHECK(def.indices().size() == 19);
  CHECK(def.indices()[17] == 468);
  CHECK(def.indices()[18] == 473);

  std::array<int, 19> ok{};
  for (int i = 0; i < 19; ++i) ok[i] = i;
  CHECK_NOTHROW(KeypointSelection::make(ok));

  auto dup = ok;
  dup[5] = 4;
  CHECK_ERROR_CODE(KeypointSelection::make(dup), ErrorCode::kInvalidArgument);

  auto out_of_range = ok;
  out_of_range[0] = 478;
  CHECK_ERROR_CODE(KeypointSelection::make(out_of_range), ErrorCode::kInvalidArgument);
  out_of_range[0] = -1;
  CHECK_ERROR_CODE(KeypointSelection::make(out_of_range), ErrorCode::kInvalidArgument);

  std::array<int, 18> short_sel{};
  for (int i = 0; i < 18; ++i) short_sel[i] = i;
  CHECK_ERROR_CODE(KeypointSelection::make(short_sel), ErrorCode::kInvalidArgument);
}

TEST_CASE("select_keypoints scales to pixels in selection order") {
  std::mt19937_64 rng(3);
  RawFrame raw = random_frame(rng);
  raw.points[0] = {0.5, 0.5};
  const LandmarkFrame f = validate_frame(raw);

  std::array<int, 19> identity{};
  for (int i = 0; i < 19; ++i) identity[i] = i;
  const auto pts = select_keypoints(f, KeypointSelection::make(identity));
  REQUIRE(pts.size() == 19);
  CHECK(pts[0].x == 320.0);
  CHECK(pts[0].y == 240.0);
  for (int i = 0; i < 19; ++i) {
    CHECK(pts[i].x == raw.points[i].x * 640.0);
    CHECK(pts[i].y == raw.points[i].y * 480.0);
  }

  std::array<int, 19> reversed{};
  for (int i = 0; i < 19; ++i) reversed[i] = 18 - i;
  const auto rev = select_keypoints(f, KeypointSelection::make(reversed));
  for (int i = 0; i < 19; ++i) CHECK(rev[i] == pts[18 - i]);
}

TEST_CASE("pairwise_distances small cases") {
  SUBCASE("3-4-5 triangle") {
    const std::vector<Point2> pts{{0, 0}, {3, 4}, {0, 4}};
    const auto d = pairwise_distances(pts, 1.0);
    REQUIRE(d.size() == 3);
    CHECK(d[0] == 5.0);
    CHECK(d[1] == 4.0);
    CHECK(d[2] == 3.0);
  }
  SUBCASE("coincident points give zeros") {
    const std::vector<Point2> pts(19, Point2{123.0, 45.0});
    const auto d = pairwise_distances(pts, 800.0);
    REQUIRE(d.size() == 171);
    for (double v : d) CHECK(v == 0.0);
  }
  SUBCASE("degenerate diagonal") {
    const std::vector<Point2> pts{{0, 0}, {1, 1}};
    CHECK_ERROR_CODE(pairwise_distances(pts, 0.0), ErrorCode::kDegenerateDiagonal);
    CHECK_ERROR_CODE(pairwise_distances(pts, -5.0), ErrorCode::kDegenerateDiagonal);
    CHECK_ERROR_CODE(pairwise_distances(pts, std::nan("")), ErrorCode::kDegenerateDiagonal);
  }
  SUBCASE("length is n(n-1)/2") {
    for (std::size_t n = 2; n <= 30; ++n) {
      const std::vector<Point2> pts(n, Point2{1.0, 2.0});
      CHECK(pairwise_distances(pts, 1.0).size() == n * (n - 1) / 2);
    }
  }
}

TEST_CASE("pairwise_distances matches the double-loop oracle") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    const double w = 100 + 1900 * u(rng);
    const double h = 100 + 1900 * u(rng);
    std::vector<Point2> pts;
    for (int i = 0; i < 19; ++i) pts.push_back({u(rng) * w, u(rng) * h});
    const double diag = std::hypot(w, h);
    const auto got = pairwise_distances(pts, diag);
    const auto want = oracle_pairwise(pts, diag);
    REQUIRE(got.size() == want.size());
    for (std::size_t k = 0; k < got.size(); ++k) CHECK(std::abs(got[k] - want[k]) <= 1e-12);
  }
}

TEST_CASE("distance properties: zero iff coincident, triangle inequality, bounded") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const LandmarkFrame f = validate_frame(random_frame(rng, 640, 480, 0.0, 1.0));
    const auto pts = select_keypoints(f, KeypointSelection::default_selection());
    const auto d = featurize(f, FeatureMode::kDist171).values;
    auto idx = [](std::size_t i, std::size_t j) {
      // Position of pair (i, j), i < j, in lexicographic order over 19 points.
      return i * 19 - i * (i + 1) / 2 + (j - i - 1);
    };
    for (std::size_t i = 0; i < 19; ++i) {
      for (std::size_t j = i + 1; j < 19; ++j) {
        const double v = d[idx(i, j)];
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        CHECK((v == 0.0) == (pts[i] == pts[j]));
        for (std::size_t k = j + 1; k < 19; ++k) {
          const double a = v, b = d[idx(j, k)], c = d[idx(i, k)];
          CHECK(a <= b + c + 1e-12);
          CHECK(b <= a + c + 1e-12);
          CHECK(c <= a + b + 1e-12);
        }
      }
    }
  }
}

TEST_CASE("distance invariances") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Point2> pts;
    for (int i = 0; i < 19; ++i) pts.push_back({u(rng) * 640, u(rng) * 480});
    const double diag = 800.0;
    const auto base = pairwise_distances(pts, diag);

    const double tx = (u(rng) - 0.5) * 2000, ty = (u(rng) - 0.5) * 2000;
    std::vector<Point2> shifted = pts;
    for (auto& p : shifted) p = {p.x + tx, p.y + ty};

    const double a = u(rng) * 2 * std::numbers::pi;
    std::vector<Point2> rotated = pts;
    for (auto& p : rotated) p = {std::cos(a) * p.x - std::sin(a) * p.y, std::sin(a) * p.x + std::cos(a) * p.y};

    const double k = 0.1 + 10 * u(rng);
    std::vector<Point2> scaled = pts;
    for (auto& p : scaled) p = {p.x * k, p.y * k};

    const auto t = pairwise_distances(shifted, diag);
    const auto r = pairwise_distances(rotated, diag);
    const auto s = pairwise_distances(scaled, diag * k);
    for (std::size_t i = 0; i < base.size(); ++i) {
      CHECK(std::abs(t[i] - base[i]) <= 1e-9);
      CHECK(std::abs(r[i] - base[i]) <= 1e-9);
      CHECK(std::abs(s[i] - base[i]) <= 1e-9);
    }
  }
}

TEST_CASE("resolution invariance through featurize") {
  std::mt19937_64 rng(14);
  RawFrame raw = random_frame(rng, 640, 480);
  RawFrame big = raw;
  big.width = 1280;
  big.height = 960;
  const auto a = featurize(validate_frame(raw), FeatureMode::kDist171).values;
  const auto b = featurize(validate_frame(big), FeatureMode::kDist171).values;
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-9);
}

TEST_CASE("featurize dimensions and layout") {
  std::mt19937_64 rng(15);
  const RawFrame raw = random_frame(rng);
  const LandmarkFrame f = validate_frame(raw);
  const auto& sel = KeypointSelection::default_selection();

  const auto r478 = featurize(f, FeatureMode::kRaw478, sel);
  const auto r19 = featurize(f, FeatureMode::kRaw19, sel);
  const auto d171 = featurize(f, FeatureMode::kDist171, sel);
  CHECK(r478.values.size() == 956);
  CHECK(r19.values.size() == 38);
  CHECK(d171.values.size() == 171);
  CHECK(feature_dims(FeatureMode::kRaw478) == 956);
  CHECK(feature_dims(FeatureMode::kRaw19) == 38);
  CHECK(feature_dims(FeatureMode::kDist171) == 171);

  CHECK(r478.values[0] == raw.points[0].x);
  CHECK(r478.values[955] == raw.points[477].y);
  for (int k = 0; k < 19; ++k) {
    const int idx = sel.indices()[k];
    CHECK(r19.values[2 * k] == raw.points[idx].x);
    CHECK(r19.values[2 * k + 1] == raw.points[idx].y);
  }
  const auto oracle = oracle_pairwise(select_keypoints(f, sel), 800.0);
  for (std::size_t i = 0; i < 171; ++i) CHECK(std::abs(d171.values[i] - oracle[i]) <= 1e-12);
}

TEST_CASE("featurize is bitwise deterministic") {
  std::mt19937_64 rng(16);
  const LandmarkFrame f = validate_frame(random_frame(rng));
  for (FeatureMode m : {FeatureMode::kRaw478, FeatureMode::kRaw19, FeatureMode::kDist171}) {
    const auto a = featurize(f, m).values;
    const auto b = featurize(f, m).values;
    REQUIRE(a.size() == b.size());
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
  }
}

TEST_CASE("feature mode names") {
  CHECK(parse_feature_mode("DIST171") == FeatureMode::kDist171);
  CHECK(parse_feature_mode("raw19") == FeatureMode::kRaw19);
  CHECK(parse_feature_mode("Raw478") == FeatureMode::kRaw478);
  CHECK(feature_mode_name(FeatureMode::kDist171) == "dist171");
  CHECK_ERROR_CODE(parse_feature_mode("dist170"), ErrorCode::kInvalidArgument);
}
