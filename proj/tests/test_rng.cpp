#include <catch2/catch_amalgamated.hpp>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "fedlab/rng.hpp"

using namespace fedlab;

TEST_CASE("rng determinism and stream independence") {
  SECTION("same stream key gives the same sequence") {
    Rng a = Rng::from(42, stream::kBatch, 3, 1, 0);
    Rng b = Rng::from(42, stream::kBatch, 3, 1, 0);
    for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());
  }
  SECTION("different keys give different sequences") {
    Rng a = Rng::from(42, stream::kBatch, 3, 1, 0);
    Rng b = Rng::from(42, stream::kBatch, 3, 1, 1);
    Rng c = Rng::from(42, stream::kBatch, 4, 1, 0);
    Rng d = Rng::from(43, stream::kBatch, 3, 1, 0);
    bool all_equal = true;
    for (int i = 0; i < 8; ++i) {
      const auto va = a.next_u64();
      all_equal = all_equal && va == b.next_u64() && va == c.next_u64() && va == d.next_u64();
    }
    CHECK_FALSE(all_equal);
  }
}

TEST_CASE("rng distributions") {
  Rng rng(123);
  SECTION("uniform01 stays in [0, 1)") {
    for (int i = 0; i < 10000; ++i) {
      const double u = rng.uniform01();
      REQUIRE(u >= 0.0);
      REQUIRE(u < 1.0);
    }
  }
  SECTION("uniform_int covers [0, n) and nothing else") {
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 3000; ++i) seen.insert(rng.uniform_int(7));
    CHECK(seen.size() == 7);
    CHECK(*seen.rbegin() == 6);
  }
  SECTION("normal moments are sane") {
    double sum = 0.0, sq = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
      const double x = rng.normal();
      sum += x;
      sq += x * x;
    }
    CHECK(std::fabs(sum / n) < 0.05);
    CHECK(std::fabs(sq / n - 1.0) < 0.05);
  }
  SECTION("gamma is positive and has mean ~ shape") {
    for (double shape : {0.1, 0.5, 1.0, 2.5}) {
      double sum = 0.0;
      const int n = 20000;
      for (int i = 0; i < n; ++i) {
        const double g = rng.gamma(shape);
        REQUIRE(g > 0.0);
        sum += g;
      }
      CHECK(sum / n == Catch::Approx(shape).margin(0.1 * std::sqrt(shape) + 0.02));
    }
  }
  SECTION("dirichlet sums to one") {
    for (double alpha : {0.1, 1.0, 100.0}) {
      const auto p = rng.dirichlet(alpha, 10);
      CHECK(std::accumulate(p.begin(), p.end(), 0.0) == Catch::Approx(1.0).epsilon(1e-12));
      CHECK(*std::min_element(p.begin(), p.end()) >= 0.0);
    }
  }
}

TEST_CASE("rng shuffle and sampling") {
  SECTION("shuffle is a permutation") {
    Rng rng(7);
    std::vector<int> v(50);
    std::iota(v.begin(), v.end(), 0);
    auto w = v;
    rng.shuffle(w);
    CHECK(w != v);
    std::sort(w.begin(), w.end());
    CHECK(w == v);
  }
  SECTION("sample_without_replacement returns k distinct ascending values") {
    Rng rng(9);
    const auto s = rng.sample_without_replacement(100, 10);
    REQUIRE(s.size() == 10);
    CHECK(std::is_sorted(s.begin(), s.end()));
    CHECK(std::adjacent_find(s.begin(), s.end()) == s.end());
    CHECK(s.back() < 100);
  }
  SECTION("k >= n returns everything") {
    Rng rng(9);
    const auto s = rng.sample_without_replacement(5, 9);
    CHECK(s == std::vector<std::size_t>{0, 1, 2, 3, 4});
  }
}
