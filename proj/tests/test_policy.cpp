#include <random>

#include "doctest.h"
#include "msnmt/errors.hpp"
#include "msnmt/policy.hpp"

using namespace msnmt;

TEST_CASE("wait-k prefix lengths") {
  const auto p = Policy::wait_k(3);
  CHECK(prefix_length(p, 1, 11) == 3);
  CHECK(prefix_length(p, 2, 11) == 4);
  CHECK(prefix_length(p, 20, 11) == 11);
  CHECK(prefix_length(Policy::full(), 1, 11) == 11);
  CHECK_THROWS_AS(prefix_length(p, 0, 11), ContractError);
  CHECK_THROWS_AS(prefix_length(p, 1, 0), ContractError);
  CHECK_THROWS_AS(Policy::wait_k(0), ContractError);
}

TEST_CASE("finish step") {
  CHECK(finish_step(Policy::full(), 7) == 1);
  CHECK(finish_step(Policy::wait_k(11), 11) == 1);

  // direct search over t
  std::size_t searched = 1;
  while (prefix_length(Policy::wait_k(3), searched, 11) != 11) ++searched;
  CHECK(searched == 9);
  CHECK(finish_step(Policy::wait_k(3), 11) == 9);
}

TEST_CASE("parse") {
  CHECK(Policy::parse("full").is_full());
  CHECK(Policy::parse("5") == Policy::wait_k(5));
  CHECK_THROWS_AS(Policy::parse("0"), ContractError);
  CHECK_THROWS_AS(Policy::parse("3x"), ContractError);
  CHECK(Policy::wait_k(4).to_string() == "4");
}

TEST_CASE("schedule properties over random k and n") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> dist(1, 30);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t k = dist(rng), n = dist(rng);
    const auto p = Policy::wait_k(k);
    for (std::size_t t = 1; t <= 2 * n + k; ++t) {
      const std::size_t g = prefix_length(p, t, n);
      CHECK(g >= 1);
      CHECK(g <= n);
      if (t > 1) {
        const std::size_t prev = prefix_length(p, t - 1, n);
        CHECK(g >= prev);
        CHECK(g - prev <= 1);
      }
      if (k >= n) CHECK(g == prefix_length(Policy::full(), t, n));
    }
    const std::size_t tau = finish_step(p, n);
    CHECK(prefix_length(p, tau, n) == n);
    if (tau > 1) CHECK(prefix_length(p, tau - 1, n) < n);
  }
}
