#pragma once

// ULID-style identifiers: 48-bit millisecond timestamp + 80 random bits,
// Crockford base32, 26 characters, lexicographically sortable.

#include <array>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <functional>
#include <mutex>
#include <random>
#include <string>
#include <string_view>

namespace polyglot {

inline constexpr char kCrockford[] = "0123456789ABCDEFGHJKMNPQRSTVWXYZ";

inline std::uint64_t unix_millis() {
  using namespace std::chrono;
  return static_cast<std::uint64_t>(duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count());
}

// "2026-10-16T09:30:00.123Z"
inline std::string iso8601_utc(std::uint64_t millis) {
  const std::time_t secs = static_cast<std::time_t>(millis / 1000);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[40];
  std::snprintf(out, sizeof out, "%s.%03uZ", buf, static_cast<unsigned>(millis % 1000));
  return out;
}

class UlidGenerator {
 public:
  using Clock = std::function<std::uint64_t()>;

  explicit UlidGenerator(Clock clock = unix_millis, std::uint64_t seed = std::random_device{}())
      : clock_(std::move(clock)), rng_(seed) {}

  // Monotonic within one generator: equal timestamps increment the random part.
  std::string next() {
    std::lock_guard lock(mu_);
    std::uint64_t ms = clock_();
    if (ms <= last_ms_ && started_) {
      ms = last_ms_;
      increment();
    } else {
      hi_ = rng_() & 0xFFFF;  // 16 bits
      lo_ = rng_();           // 64 bits
    }
    started_ = true;
    last_ms_ = ms;
    return encode(ms, hi_, lo_);
  }

  static std::string encode(std::uint64_t ms, std::uint64_t hi16, std::uint64_t lo64) {
    // 128-bit value: [48 ms][16 hi][64 lo]; 26 chars * 5 bits = 130 bits, top 2 zero.
    const unsigned __int128 value = (static_cast<unsigned __int128>(ms & 0xFFFFFFFFFFFFULL) << 80) |
                                    (static_cast<unsigned __int128>(hi16 & 0xFFFF) << 64) | lo64;
    std::string out(26, '0');
    for (int i = 25; i >= 0; --i) {
      out[static_cast<std::size_t>(i)] = kCrockford[static_cast<unsigned>((value >> (5 * (25 - i))) & 31)];
    }
    return out;
  }

 private:
  void increment() {
    if (++lo_ == 0) hi_ = (hi_ + 1) & 0xFFFF;
  }

  Clock clock_;
  std::mt19937_64 rng_;
  std::mutex mu_;
  std::uint64_t last_ms_ = 0;
  std::uint64_t hi_ = 0;
  std::uint64_t lo_ = 0;
  bool started_ = false;
};

inline bool is_ulid(std::string_view s) {
  if (s.size() != 26 || s[0] > '7') return false;
  for (char c : s) {
    if (std::string_view(kCrockford).find(c) == std::string_view::npos) return false;
  }
  return true;
}

}  // namespace polyglot
