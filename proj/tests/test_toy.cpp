#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "fedlab/optim.hpp"
#include "fedlab/rng.hpp"
#include "fedlab/toy.hpp"

using namespace fedlab;
using toy::QuadClient;

namespace {

QuadClient diag_quad(double a00, double a11, double mx, double my) {
  QuadClient c;
  c.hessian << a00, 0.0, 0.0, a11;
  c.minimizer << mx, my;
  return c;
}

// Random SPD matrix with eigenvalues in [0.2, 4]: R D R^T for a rotation R.
QuadClient random_quad(Rng& rng) {
  const double angle = rng.uniform(0.0, 6.283185307179586);
  const double c = std::cos(angle), s = std::sin(angle);
  Eigen::Matrix2d rot;
  rot << c, -s, s, c;
  Eigen::Matrix2d diag = Eigen::Matrix2d::Zero();
  diag(0, 0) = rng.uniform(0.2, 4.0);
  diag(1, 1) = rng.uniform(0.2, 4.0);
  QuadClient q;
  q.hessian = rot * diag * rot.transpose();
  // Force exact symmetry (floating product can drift in the last ulp).
  q.hessian(1, 0) = q.hessian(0, 1);
  q.minimizer << rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0);
  return q;
}

}  // namespace

TEST_CASE("trace_descent on a single identity quadratic follows 0.5^t") {
  const std::vector<QuadClient> clients{diag_quad(1, 1, 0, 0)};
  const auto traj =
      toy::trace_descent(clients, toy::DescentMode::kGd, {1.0, 0.0}, 0.5, 8, 0);
  REQUIRE(traj.points.size() == 9);
  for (std::size_t t = 0; t < traj.points.size(); ++t) {
    CHECK(traj.points[t].x == Catch::Approx(std::pow(0.5, static_cast<double>(t))).margin(1e-15));
    CHECK(traj.points[t].y == 0.0);
  }
}

TEST_CASE("gd loss is monotone non-increasing below the stability threshold") {
  Rng rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<QuadClient> clients{random_quad(rng), random_quad(rng), random_quad(rng)};
    // eta < 2 / lambda_max(mean A); lambda_max <= trace of the mean.
    Eigen::Matrix2d mean = Eigen::Matrix2d::Zero();
    for (const auto& c : clients) mean += c.hessian / 3.0;
    const double eta = 1.9 / mean.trace();
    const auto traj = toy::trace_descent(clients, toy::DescentMode::kGd,
                                         {rng.uniform(-2, 2), rng.uniform(-2, 2)}, eta, 40, 1);
    for (std::size_t t = 1; t < traj.points.size(); ++t)
      REQUIRE(traj.points[t].loss <= traj.points[t - 1].loss + 1e-12);
  }
}

TEST_CASE("sgd ends farther from the optimum than gd on average") {
  const std::vector<QuadClient> clients{diag_quad(1, 3, -1, 0), diag_quad(3, 1, 1, 1)};
  const auto opt = toy::global_optimum(clients);
  const double eta = 0.15;
  double sgd_dist = 0.0, gd_dist = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto sgd =
        toy::trace_descent(clients, toy::DescentMode::kSgd, {2.0, 2.0}, eta, 60, seed);
    const auto gd =
        toy::trace_descent(clients, toy::DescentMode::kGd, {2.0, 2.0}, eta, 60, seed);
    const auto& ps = sgd.points.back();
    const auto& pg = gd.points.back();
    sgd_dist += std::hypot(ps.x - opt(0), ps.y - opt(1));
    gd_dist += std::hypot(pg.x - opt(0), pg.y - opt(1));
  }
  CHECK(sgd_dist / 100.0 > gd_dist / 100.0);
}

TEST_CASE("minibatch mode averages a subset and stays finite") {
  const std::vector<QuadClient> clients{diag_quad(1, 1, 0, 0), diag_quad(2, 1, 1, 0),
                                        diag_quad(1, 2, 0, 1)};
  const auto traj = toy::trace_descent(clients, toy::DescentMode::kMinibatch, {1.0, 1.0},
                                       0.2, 50, 3, 2);
  REQUIRE(traj.points.size() == 51);
  CHECK(traj.points.back().loss < traj.points.front().loss);
  // minibatch of all clients == gd
  const auto full = toy::trace_descent(clients, toy::DescentMode::kMinibatch, {1.0, 1.0},
                                       0.2, 10, 3, 3);
  const auto gd = toy::trace_descent(clients, toy::DescentMode::kGd, {1.0, 1.0}, 0.2, 10, 9);
  for (std::size_t t = 0; t < full.points.size(); ++t) {
    CHECK(full.points[t].x == Catch::Approx(gd.points[t].x).margin(1e-12));
    CHECK(full.points[t].y == Catch::Approx(gd.points[t].y).margin(1e-12));
  }
}

TEST_CASE("global_optimum") {
  SECTION("symmetric pair: midpoint") {
    const std::vector<QuadClient> clients{diag_quad(1, 1, 0, 0), diag_quad(1, 1, 2, 0)};
    const auto opt = toy::global_optimum(clients);
    CHECK(opt(0) == Catch::Approx(1.0).margin(1e-14));
    CHECK(opt(1) == Catch::Approx(0.0).margin(1e-14));
  }
  SECTION("asymmetric pair matches the normal-equation oracle") {
    const std::vector<QuadClient> clients{diag_quad(1, 4, 0, 0), diag_quad(4, 1, 2, 2)};
    const auto opt = toy::global_optimum(clients);
    // (A1+A2) = diag(5,5); A2 m2 = (8, 2); solution (1.6, 0.4).
    CHECK(opt(0) == Catch::Approx(1.6).epsilon(1e-14));
    CHECK(opt(1) == Catch::Approx(0.4).epsilon(1e-14));
  }
  SECTION("single client: its own minimizer") {
    const std::vector<QuadClient> clients{diag_quad(2, 3, -1.5, 0.25)};
    const auto opt = toy::global_optimum(clients);
    CHECK(opt(0) == Catch::Approx(-1.5).margin(1e-14));
    CHECK(opt(1) == Catch::Approx(0.25).margin(1e-14));
  }
  SECTION("mean gradient at the optimum is ~0") {
    Rng rng(77);
    for (int rep = 0; rep < 50; ++rep) {
      std::vector<QuadClient> clients;
      for (int k = 0; k < 4; ++k) clients.push_back(random_quad(rng));
      const auto opt = toy::global_optimum(clients);
      CHECK(toy::mean_grad(clients, opt).norm() < 1e-10);
    }
  }
}

TEST_CASE("naive_parameter_average and drift_gap") {
  SECTION("symmetric landscapes show no drift") {
    const std::vector<QuadClient> clients{diag_quad(1, 1, 0, 0), diag_quad(1, 1, 2, 0)};
    const auto avg = toy::naive_parameter_average(clients);
    CHECK(avg(0) == 1.0);
    CHECK(avg(1) == 0.0);
    CHECK(toy::drift_gap(clients) < 1e-14);
  }
  SECTION("the asymmetric pair drifts by ~0.8485") {
    const std::vector<QuadClient> clients{diag_quad(1, 4, 0, 0), diag_quad(4, 1, 2, 2)};
    const auto avg = toy::naive_parameter_average(clients);
    CHECK(avg(0) == 1.0);
    CHECK(avg(1) == 1.0);
    CHECK(toy::drift_gap(clients) == Catch::Approx(std::hypot(0.6, 0.6)).epsilon(1e-12));
  }
  SECTION("equal Hessians: zero drift for any minimizers (property)") {
    Rng rng(123);
    for (int rep = 0; rep < 1000; ++rep) {
      const auto shared = random_quad(rng);
      std::vector<QuadClient> clients;
      for (int k = 0; k < 3; ++k) {
        QuadClient c = shared;
        c.minimizer << rng.uniform(-5, 5), rng.uniform(-5, 5);
        clients.push_back(c);
      }
      REQUIRE(toy::drift_gap(clients) < 1e-10);
    }
  }
  SECTION("scaling minimizers scales the gap linearly") {
    std::vector<QuadClient> clients{diag_quad(1, 4, 0, 0), diag_quad(4, 1, 2, 2)};
    const double g1 = toy::drift_gap(clients);
    for (auto& c : clients) c.minimizer *= 3.0;
    CHECK(toy::drift_gap(clients) == Catch::Approx(3.0 * g1).epsilon(1e-12));
  }
}

TEST_CASE("local SGD on quadratics reproduces the drift mechanism") {
  // Two clients with mismatched curvature: long local training drifts to the
  // naive minimizer average, tight synchronization tracks the true optimum.
  const std::vector<QuadClient> clients{diag_quad(1, 4, 0, 0), diag_quad(4, 1, 2, 2)};
  toy::QuadProblem problem{clients};
  const auto shards = toy::one_shard_per_client(2);
  const auto theta0 = toy::QuadProblem::pack({0.0, 0.0});

  const auto optimum = toy::global_optimum(clients);
  const auto averaged = toy::naive_parameter_average(clients);

  SECTION("I large approaches the average of local minimizers") {
    const auto got = local_sgd_run(problem, shards, theta0, 0.2, 1, 30, 200, 0);
    CHECK(std::hypot(got.values[0] - averaged(0), got.values[1] - averaged(1)) < 1e-2);
  }
  SECTION("I=1 with small eta approaches the global optimum") {
    const auto got = local_sgd_run(problem, shards, theta0, 0.01, 1, 2000, 1, 0);
    CHECK(std::hypot(got.values[0] - optimum(0), got.values[1] - optimum(1)) < 1e-2);
  }
}

TEST_CASE("toy validation errors") {
  QuadClient bad;
  bad.hessian << 1.0, 0.5, 0.4, 1.0;  // asymmetric
  bad.minimizer << 0, 0;
  CHECK_THROWS_AS(toy::validate(bad), ConfigError);
  bad.hessian << -1.0, 0.0, 0.0, 1.0;  // not PD
  CHECK_THROWS_AS(toy::validate(bad), ConfigError);
  CHECK_THROWS_AS(toy::global_optimum({}), ContractError);
}
