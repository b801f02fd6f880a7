#pragma once

#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <doctest.h>
#include <json.hpp>

#include "core/classifier.hpp"
#include "core/dataset.hpp"
#include "core/errors.hpp"
#include "core/geometry.hpp"
#include "core/synth.hpp"
#include "service/net.hpp"

namespace testing {

namespace fs = std::filesystem;
using nlohmann::json;

#define CHECK_ERROR_CODE(expr, expected_code)                      \
  do {                                                             \
    bool thrown_ = false;                                          \
    try {                                                          \
      (void)(expr);                                                \
    } catch (const exammon::Error& e_) {                           \
      thrown_ = true;                                              \
      CHECK_MESSAGE(e_.code() == (expected_code), e_.what());      \
    }                                                              \
    CHECK_MESSAGE(thrown_, "expected an exammon::Error from " #expr); \
  } while (0)

// Fresh directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("exammon-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
}

// 478 uniform points in [lo, hi].
inline exammon::RawFrame random_frame(std::mt19937_64& rng, int width = 640, int height = 480,
                                      double lo = 0.05, double hi = 0.95) {
  std::uniform_real_distribution<double> u(lo, hi);
  exammon::RawFrame f;
  f.frame_id = "f";
  f.ts_ms = 0;
  f.width = width;
  f.height = height;
  for (std::size_t i = 0; i < exammon::kMeshPoints; ++i) f.points.push_back({u(rng), u(rng)});
  return f;
}

inline exammon::RawFrame zero_frame(int width = 640, int height = 480) {
  exammon::RawFrame f;
  f.frame_id = "zero";
  f.width = width;
  f.height = height;
  f.points.assign(exammon::kMeshPoints, {0.0, 0.0});
  return f;
}

// Pairwise distances by plain double loop over (i, j), i < j.
inline std::vector<double> oracle_pairwise(const std::vector<exammon::Point2>& pts, double diag) {
  std::vector<double> out;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t j = i + 1; j < pts.size(); ++j) {
      const double dx = pts[i].x - pts[j].x;
      const double dy = pts[i].y - pts[j].y;
      out.push_back(std::sqrt(dx * dx + dy * dy) / diag);
    }
  }
  return out;
}

// A small DIST171 model trained on synthetic data, saved once per process.
inline const fs::path& trained_model_path() {
  static TempDir dir("model");
  static const fs::path path = [] {
    exammon::SynthSpec spec;
    spec.n = 400;
    const exammon::Dataset ds = exammon::synthesize(spec);
    const auto ex = exammon::to_examples(ds, exammon::FeatureMode::kDist171);
    exammon::TrainConfig cfg;
    cfg.epochs = 30;
    const auto r = exammon::train(
        exammon::init_model(exammon::default_layer_dims(exammon::FeatureMode::kDist171),
                            exammon::FeatureMode::kDist171, 3),
        ex, {}, cfg);
    const fs::path p = dir.path() / "dist171.exm";
    exammon::save_model(r.model, p);
    return p;
  }();
  return path;
}

// Blocking newline-delimited JSON client for protocol tests.
class LineClient {
 public:
  LineClient(const std::string& host, std::uint16_t port) : fd_(exammon::net::connect_tcp(host, port)) {}

  void send(const json& j) { send_raw(j.dump() + "\n"); }
  void send_raw(const std::string& s) { REQUIRE(exammon::net::send_all(fd_.get(), s)); }

  // Next message, or nullopt on timeout / close.
  std::optional<json> recv(int timeout_ms = 5000) {
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
    for (;;) {
      const std::size_t nl = buf_.find('\n');
      if (nl != std::string::npos) {
        json j = json::parse(buf_.substr(0, nl));
        buf_.erase(0, nl + 1);
        return j;
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
                            deadline - std::chrono::steady_clock::now())
                            .count();
      if (left <= 0) return std::nullopt;
      timeval tv{static_cast<time_t>(left / 1000), static_cast<suseconds_t>((left % 1000) * 1000)};
      ::setsockopt(fd_.get(), SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
      char tmp[65536];
      const ssize_t n = ::recv(fd_.get(), tmp, sizeof(tmp), 0);
      if (n == 0) return std::nullopt;
      if (n < 0) {
        if (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR) continue;
        return std::nullopt;
      }
      buf_.append(tmp, static_cast<std::size_t>(n));
    }
  }

  // Skips messages until one of the given type arrives.
  std::optional<json> recv_type(const std::string& type, int timeout_ms = 5000) {
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
    for (;;) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
                            deadline - std::chrono::steady_clock::now())
                            .count();
      if (left <= 0) return std::nullopt;
      auto m = recv(static_cast<int>(left));
      if (!m) return std::nullopt;
      if (m->value("type", "") == type) return m;
    }
  }

  bool closed_by_peer(int timeout_ms = 3000) {
    for (;;) {
      auto m = recv(timeout_ms);
      if (!m) return true;
    }
  }

  void close() { fd_.reset(); }
  int fd() const { return fd_.get(); }

 private:
  exammon::net::UniqueFd fd_;
  std::string buf_;
};

inline json frame_message(std::uint64_t seq, std::int64_t ts_ms, const exammon::RawFrame& f) {
  json pts = json::array();
  for (const auto& p : f.points) pts.push_back({p.x, p.y});
  return {{"type", "frame"}, {"seq", seq}, {"ts_ms", ts_ms}, {"width", f.width},
          {"height", f.height}, {"landmarks", pts}};
}

// Deterministic synthetic pose frame of the given class.
inline exammon::RawFrame pose_frame(exammon::Label label, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto pose = exammon::sample_pose(label, 20.0, 640, 480, rng);
  return exammon::render_pose(pose, 0.01, 640, 480, "p" + std::to_string(seed), 0);
}

}  // namespace testing
