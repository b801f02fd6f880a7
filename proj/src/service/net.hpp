#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

namespace exammon::net {

// Owning file descriptor.
class UniqueFd {
 public:
  UniqueFd() = default;
  explicit UniqueFd(int fd) : fd_(fd) {}
  ~UniqueFd() { reset(); }
  UniqueFd(UniqueFd&& o) noexcept : fd_(o.release()) {}
  UniqueFd& operator=(UniqueFd&& o) noexcept {
    if (this != &o) reset(o.release());
    return *this;
  }
  UniqueFd(const UniqueFd&) = delete;
  UniqueFd& operator=(const UniqueFd&) = delete;

  int get() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  int release() {
    const int fd = fd_;
    fd_ = -1;
    return fd;
  }
  void reset(int fd = -1);

 private:
  int fd_ = -1;
};

// Throws Error(kConnectFailure).
UniqueFd connect_tcp(const std::string& host, std::uint16_t port);
// Binds and listens; port 0 picks an ephemeral port, reported in bound_port.
UniqueFd listen_tcp(const std::string& host, std::uint16_t port, std::uint16_t& bound_port);

// Loops until every byte is written. False on a broken connection.
bool send_all(int fd, std::string_view data);

// Splits a byte stream into '\n'-terminated lines (the terminator and a
// trailing '\r' are stripped).
class LineReader {
 public:
  LineReader(int fd, std::size_t max_line) : fd_(fd), max_line_(max_line) {}

  enum class Status { kLine, kClosed, kTooLong };
  Status next(std::string& line);

 private:
  int fd_;
  std::size_t max_line_;
  std::string buf_;
  std::size_t scan_from_ = 0;
};

}  // namespace exammon::net
