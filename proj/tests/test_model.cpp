#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <numeric>

#include "fedlab/model.hpp"
#include "helpers.hpp"

using namespace fedlab;
using testutil::random_batch;
using testutil::random_params;

TEST_CASE("init_params: shapes, determinism, zero biases") {
  SECTION("logistic parameter counting") {
    const auto spec = ModelSpec::logistic(4, 2);
    const auto p = init_params(spec, 7);
    REQUIRE(p.size() == 10);  // 4*2 weights + 2 biases
    REQUIRE(p.layout.size() == 1);
    CHECK(p.layout[0].name == "fc1");
    CHECK(p.layout[0].start == 0);
    CHECK(p.layout[0].len == 10);
  }
  SECTION("same call twice is bit-identical") {
    const auto spec = ModelSpec::mlp(6, {5}, 3);
    const auto a = init_params(spec, 42);
    const auto b = init_params(spec, 42);
    REQUIRE(a.values == b.values);
    const auto c = init_params(spec, 43);
    REQUIRE(a.values != c.values);
  }
  SECTION("paper_cnn bias segments are all zero") {
    const auto spec = ModelSpec::paper_cnn(3, 8, 8, 10);
    const auto p = init_params(spec, 11);
    const auto plan_layout = layer_slices(spec);
    REQUIRE(plan_layout.size() == 4);
    // conv1: 32 x 3*25 weights then 32 biases
    const std::size_t conv1_w = 32 * 3 * 25;
    for (std::size_t i = conv1_w; i < conv1_w + 32; ++i) CHECK(p.values[i] == 0.0);
    // fc2 biases are the last C entries
    for (std::size_t i = p.size() - 10; i < p.size(); ++i) CHECK(p.values[i] == 0.0);
    REQUIRE(p.all_finite());
  }
  SECTION("invalid specs are rejected") {
    CHECK_THROWS_AS(init_params(ModelSpec::logistic(4, 1), 0), ConfigError);
    CHECK_THROWS_AS(init_params(ModelSpec::paper_cnn(3, 6, 6, 10), 0), ConfigError);
    CHECK_THROWS_AS(init_params(ModelSpec::mlp(4, {}, 3), 0), ConfigError);
  }
}

TEST_CASE("layer_slices") {
  SECTION("paper_cnn has exactly conv1, conv2, fc1, fc2") {
    const auto layout = layer_slices(ModelSpec::paper_cnn(3, 32, 32, 10));
    REQUIRE(layout.size() == 4);
    CHECK(layout[0].name == "conv1");
    CHECK(layout[1].name == "conv2");
    CHECK(layout[2].name == "fc1");
    CHECK(layout[3].name == "fc2");
    // Shapes from the documented architecture.
    CHECK(layout[0].len == 32 * 3 * 25 + 32);
    CHECK(layout[1].len == 64 * 32 * 25 + 64);
    CHECK(layout[2].len == 4096 * 512 + 512);
    CHECK(layout[3].len == 512 * 10 + 10);
  }
  SECTION("logistic has one entry") {
    CHECK(layer_slices(ModelSpec::logistic(10, 3)).size() == 1);
  }
  SECTION("ranges tile [0, d) with no gaps") {
    for (const auto& spec :
         {ModelSpec::logistic(5, 4), ModelSpec::mlp(7, {6, 5}, 3), ModelSpec::paper_cnn(1, 8, 8, 4)}) {
      const auto layout = layer_slices(spec);
      std::size_t pos = 0;
      for (const auto& s : layout) {
        REQUIRE(s.start == pos);
        pos += s.len;
      }
      CHECK(pos == param_count(spec));
      CHECK(layout == init_params(spec, 1).layout);
    }
  }
}

TEST_CASE("loss: analytic and oracle values") {
  SECTION("uniform logits give ln C") {
    // Zero params on zero input force equal logits over 10 classes.
    const auto spec = ModelSpec::logistic(4, 10);
    ParamVector zero;
    zero.values.assign(param_count(spec), 0.0);
    zero.layout = layer_slices(spec);
    Batch b;
    b.n = 3;
    b.feature_dim = 4;
    b.features.assign(12, 0.0);
    b.labels = {0, 5, 9};
    CHECK(loss(spec, zero, b) == Catch::Approx(std::log(10.0)).epsilon(1e-12));
  }
  SECTION("a perfect predictor has near-zero loss") {
    const auto spec = ModelSpec::logistic(2, 2);
    auto p = init_params(spec, 0);
    // Weights: logit_0 = 40*x0, logit_1 = 40*x1.
    p.values = {40.0, 0.0, 0.0, 40.0, 0.0, 0.0};
    Batch b;
    b.n = 2;
    b.feature_dim = 2;
    b.features = {1.0, -1.0, -1.0, 1.0};
    b.labels = {0, 1};
    CHECK(loss(spec, p, b) < 1e-6);
    CHECK(accuracy(spec, p, b) == 1.0);
  }
  SECTION("matches an independently coded per-sample -log p_y average (logistic)") {
    const auto spec = ModelSpec::logistic(5, 4);
    const auto params = random_params(spec, 21);
    const auto batch = random_batch(9, 5, 4, 22);
    // Naive oracle: plain loops, no shared code with the library forward.
    double total = 0.0;
    for (std::size_t i = 0; i < batch.n; ++i) {
      std::vector<double> z(4, 0.0);
      for (int c = 0; c < 4; ++c) {
        for (std::size_t j = 0; j < 5; ++j)
          z[c] += params.values[c * 5 + j] * batch.features[i * 5 + j];
        z[c] += params.values[20 + c];
      }
      double denom = 0.0;
      for (int c = 0; c < 4; ++c) denom += std::exp(z[c]);
      total += -std::log(std::exp(z[batch.labels[i]]) / denom);
    }
    CHECK(loss(spec, params, batch) == Catch::Approx(total / 9.0).epsilon(1e-10));
  }
  SECTION("loss is nonnegative and finite for random inputs") {
    for (std::uint64_t s = 0; s < 5; ++s) {
      const auto spec = ModelSpec::mlp(6, {8}, 3);
      const auto params = random_params(spec, s);
      const auto batch = random_batch(4, 6, 3, 100 + s);
      const double l = loss(spec, params, batch);
      CHECK(l >= 0.0);
      CHECK(std::isfinite(l));
    }
  }
}

TEST_CASE("grad: linearity and duplication invariance") {
  const auto spec = ModelSpec::mlp(4, {6}, 3);
  const auto params = random_params(spec, 5);
  const auto b1 = random_batch(6, 4, 3, 50);
  const auto b2 = random_batch(6, 4, 3, 51);

  SECTION("batch duplicated twice gives the identical gradient") {
    Batch doubled = b1;
    doubled.n = 12;
    doubled.features.insert(doubled.features.end(), b1.features.begin(), b1.features.end());
    doubled.labels.insert(doubled.labels.end(), b1.labels.begin(), b1.labels.end());
    const auto g1 = grad(spec, params, b1);
    const auto g2 = grad(spec, params, doubled);
    CHECK(max_rel_diff(g1, g2) < 1e-12);
  }
  SECTION("grad over a union equals the mean of batch gradients") {
    Batch u = b1;
    u.n = 12;
    u.features.insert(u.features.end(), b2.features.begin(), b2.features.end());
    u.labels.insert(u.labels.end(), b2.labels.begin(), b2.labels.end());
    auto mean = grad(spec, params, b1);
    const auto g2 = grad(spec, params, b2);
    for (std::size_t i = 0; i < mean.size(); ++i)
      mean.values[i] = 0.5 * (mean.values[i] + g2.values[i]);
    CHECK(max_rel_diff(mean, grad(spec, params, u)) < 1e-12);
  }
  SECTION("shape mismatch is a contract error") {
    const auto bad = random_batch(3, 5, 3, 1);
    CHECK_THROWS_AS(grad(spec, params, bad), ContractError);
    auto wrong = params;
    wrong.values.push_back(0.0);
    CHECK_THROWS_AS(loss(spec, wrong, b1), ContractError);
  }
}

TEST_CASE("grad matches test-side central finite differences") {
  SECTION("logistic, full sweep, < 1e-6") {
    const auto spec = ModelSpec::logistic(4, 2);
    const auto params = random_params(spec, 3);
    const auto batch = random_batch(8, 4, 2, 30);
    const auto g = grad(spec, params, batch);
    const auto fd = testutil::fd_gradient(spec, params, batch, 1e-5);
    double worst = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double rel =
          std::fabs(fd[i] - g.values[i]) / std::max({std::fabs(fd[i]), std::fabs(g.values[i]), 1.0});
      worst = std::max(worst, rel);
    }
    CHECK(worst < 1e-6);
    CHECK(grad_check(spec, params, batch, 1e-5) < 1e-6);
  }
  SECTION("mlp grad_check < 1e-4") {
    const auto spec = ModelSpec::mlp(6, {10, 7}, 4);
    const auto params = random_params(spec, 9);
    const auto batch = random_batch(5, 6, 4, 90);
    CHECK(grad_check(spec, params, batch, 1e-5) < 1e-4);
  }
  SECTION("paper_cnn grad_check < 1e-4 with kink exclusion") {
    const auto spec = ModelSpec::paper_cnn(2, 8, 8, 3);
    const auto params = init_params(spec, 17);
    const auto batch = random_batch(2, 2 * 8 * 8, 3, 170);
    FdCheckStats stats;
    CHECK(grad_check(spec, params, batch, 1e-5, &stats) < 1e-4);
    CHECK(stats.checked >= 200);
  }
  SECTION("a corrupted gradient is detected") {
    const auto spec = ModelSpec::logistic(4, 3);
    const auto params = random_params(spec, 13);
    const auto batch = random_batch(6, 4, 3, 130);
    auto g = grad(spec, params, batch);
    g.values[2] += 0.1;
    CHECK(fd_max_rel_error(spec, params, batch, 1e-5, g) > 1e-2);
  }
}

TEST_CASE("accuracy") {
  SECTION("constant-output model on a balanced batch scores 1/C") {
    const auto spec = ModelSpec::logistic(3, 10);
    ParamVector zero;
    zero.values.assign(param_count(spec), 0.0);
    zero.layout = layer_slices(spec);
    Batch b;
    b.n = 10;
    b.feature_dim = 3;
    b.features.assign(30, 0.7);
    b.labels.resize(10);
    std::iota(b.labels.begin(), b.labels.end(), 0);
    // All logits tie; argmax resolves to class 0, which matches exactly one label.
    CHECK(accuracy(spec, zero, b) == Catch::Approx(0.1));
  }
  SECTION("matches a hand-enumerated argmax count") {
    const auto spec = ModelSpec::logistic(4, 3);
    const auto params = random_params(spec, 77);
    const auto batch = random_batch(11, 4, 3, 770);
    const auto z = logits(spec, params, batch);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < batch.n; ++i) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < 3; ++c)
        if (z[i * 3 + c] > z[i * 3 + best]) best = c;
      if (static_cast<int>(best) == batch.labels[i]) ++correct;
    }
    CHECK(accuracy(spec, params, batch) == Catch::Approx(correct / 11.0));
  }
}
