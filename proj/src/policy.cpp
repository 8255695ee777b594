#include "msnmt/policy.hpp"

#include <algorithm>
#include <charconv>

#include "msnmt/errors.hpp"

namespace msnmt {

Policy Policy::wait_k(std::size_t k) {
  if (k < 1) throw ContractError("wait-k policy requires k >= 1");
  return Policy(k);
}

Policy Policy::parse(std::string_view text) {
  if (text == "full" || text == "Full" || text == "FULL") return full();
  std::size_t k = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), k);
  if (ec != std::errc{} || ptr != text.data() + text.size() || k < 1) {
    throw ContractError("policy must be 'full' or a positive integer, got '" + std::string(text) + "'");
  }
  return wait_k(k);
}

std::string Policy::to_string() const { return is_full() ? "full" : std::to_string(k_); }

std::size_t prefix_length(const Policy& policy, std::size_t t, std::size_t n) {
  if (t < 1) throw ContractError("prefix_length: target step must be >= 1");
  if (n < 1) throw ContractError("prefix_length: source length must be >= 1");
  if (policy.is_full()) return n;
  return std::min(policy.k() + t - 1, n);
}

std::size_t finish_step(const Policy& policy, std::size_t n) {
  if (n < 1) throw ContractError("finish_step: source length must be >= 1");
  if (policy.is_full() || policy.k() >= n) return 1;
  return n - policy.k() + 1;
}

}  // namespace msnmt
