#pragma once

#include <cstddef>
#include <string>
#include <string_view>

namespace msnmt {

/// Fixed read/write schedule: wait-k (read k source tokens, then alternate one
/// read per write) or full-sentence (read everything before the first write).
class Policy {
 public:
  static Policy wait_k(std::size_t k);
  static Policy full() { return Policy(0); }
  // Accepts "full" or a positive integer.
  static Policy parse(std::string_view text);

  bool is_full() const { return k_ == 0; }
  std::size_t k() const { return k_; }
  std::string to_string() const;

  friend bool operator==(const Policy&, const Policy&) = default;

 private:
  explicit Policy(std::size_t k) : k_(k) {}
  std::size_t k_;  // 0 encodes Full
};

/// Number of source tokens read before emitting target token t (1-based):
/// min(k + t - 1, n) for wait-k, n for Full.
std::size_t prefix_length(const Policy& policy, std::size_t t, std::size_t n);

/// First target step at which the whole source has been read: min{t | g(t) = n}.
std::size_t finish_step(const Policy& policy, std::size_t n);

}  // namespace msnmt
