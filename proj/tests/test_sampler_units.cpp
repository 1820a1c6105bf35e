#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "bbps/ar_model.hpp"
#include "bbps/data_sim.hpp"
#include "bbps/factors.hpp"
#include "bbps/rng.hpp"
#include "bbps/sampler.hpp"
#include "bbps/sv_model.hpp"
#include "bbps/target.hpp"

using namespace bbps;

namespace {

StateMatrix random_state(int d, int n, std::uint64_t seed) {
  Rng rng(seed);
  StateMatrix x(d, n);
  rng.fill_normal(x);
  return x;
}

/// U(x) = sum log cosh(x_kn): log-concave but not quadratic, with one factor
/// per column.  Exercises the endpoint bounds of the local sampler on a
/// potential where they are exact for a non-quadratic reason.
class LogCoshField : public TargetModel {
 public:
  using TargetModel::block_gradient;
  using TargetModel::gradient;

  LogCoshField(int d, int N) : d_(d), N_(N) {}

  int d() const override { return d_; }
  int N() const override { return N_; }
  std::string name() const override { return "log_cosh_field"; }
  TargetTraits traits() const override {
    return TargetTraits{.quadratic = false, .log_concave = true,
                        .has_factors = true};
  }

  double potential(const StateMatrix& x) const override {
    check_state_shape(x);
    return x.array().cosh().log().sum();
  }

  void gradient(const StateMatrix& x, Matrix& out) const override {
    check_state_shape(x);
    out = x.array().tanh();
  }

  int factor_count() const override { return N_; }
  Block factor_support(int n) const override { return Block{n, 1, d_, n, n}; }
  double factor_potential(int n, const StateMatrix& x) const override {
    return x.col(n - 1).array().cosh().log().sum();
  }
  void factor_gradient(int n, const StateMatrix& x, Matrix& out) const override {
    out = x.col(n - 1).array().tanh();
  }

 private:
  int d_, N_;
};

}  // namespace

TEST_CASE("block rate is the positive part of the rate inner product") {
  const IsotropicGaussian target(2, 3);
  const Block full{1, 1, 2, 1, 3};
  const StateMatrix x = random_state(2, 3, 11);
  CHECK(block_rate(target, full, x, x) ==
        Catch::Approx(x.squaredNorm()).epsilon(1e-12));
  CHECK(block_rate(target, full, x, -x) == 0.0);

  // Against the directional derivative of the potential.
  const ArGaussianModel model =
      make_ar_model(5.0, 0.1, random_state(2, 5, 12));
  const StateMatrix xa = random_state(2, 5, 13);
  const VelocityMatrix v = random_state(2, 5, 14);
  const double eps = 1e-6;
  const double fd =
      (model.potential(xa + eps * v) - model.potential(xa - eps * v)) /
      (2.0 * eps);
  const Block b{1, 1, 2, 1, 5};
  CHECK(block_rate(model, b, xa, v) ==
        Catch::Approx(positive_part(fd)).margin(1e-4));
}

TEST_CASE("reflection identities") {
  SECTION("scalar blocks flip the sign") {
    const IsotropicGaussian target(2, 2);
    StateMatrix x(2, 2);
    x << 1.0, 2.0, 3.0, 4.0;
    VelocityMatrix v(2, 2);
    v << 5.0, 6.0, 7.0, 8.0;
    const Block b{1, 2, 2, 1, 1};  // the (2, 1) entry
    const VelocityMatrix w = reflect_block(target, b, x, v);
    CHECK(w(1, 0) == -7.0);
    // Entries outside the block are untouched.
    CHECK(w(0, 0) == 5.0);
    CHECK(w(0, 1) == 6.0);
    CHECK(w(1, 1) == 8.0);
  }
  SECTION("velocities orthogonal to the gradient are fixed points") {
    const IsotropicGaussian target(1, 2);
    StateMatrix x(1, 2);
    x << 1.0, 0.0;  // gradient = x vanishes on column 2
    VelocityMatrix v(1, 2);
    v << 0.0, 3.0;  // orthogonal to the gradient on the full block
    const Block full{1, 1, 1, 1, 2};
    const VelocityMatrix w = reflect_block(target, full, x, v);
    CHECK((w - v).cwiseAbs().maxCoeff() < 1e-15);
  }
  SECTION("randomized involution, isometry and sign flip") {
    const ArGaussianModel model =
        make_ar_model(5.0, 0.1, random_state(3, 8, 21));
    const BlockingStrategy strategy = make_grid_strategy(3, 8, 3, 2, 0, 1);
    Rng rng(22);
    for (int trial = 0; trial < 200; ++trial) {
      const StateMatrix x = random_state(3, 8, 500 + trial);
      const VelocityMatrix v = random_state(3, 8, 900 + trial);
      const Block& b = strategy.blocks()[static_cast<int>(
          rng.uniform() * strategy.num_blocks())];
      const Matrix g = model.block_gradient(x, b);
      const VelocityMatrix w = reflect_block(model, b, x, v);
      const VelocityMatrix ww = reflect_block(model, b, x, w);
      CHECK((ww - v).cwiseAbs().maxCoeff() < 1e-12);
      CHECK(std::abs(block_view(w, b).norm() - block_view(v, b).norm()) <
            1e-12);
      const double before = (g.array() * block_view(v, b).array()).sum();
      const double after = (g.array() * block_view(w, b).array()).sum();
      CHECK(std::abs(after + before) < 1e-12 * std::max(1.0, std::abs(before)));
    }
  }
  SECTION("a vanishing gradient admits no reflection") {
    const IsotropicGaussian target(2, 2);
    const Block full{1, 1, 2, 1, 2};
    CHECK_THROWS_AS(reflect_block(target, full, StateMatrix::Zero(2, 2),
                                  VelocityMatrix::Ones(2, 2)),
                    ConfigError);
  }
}

TEST_CASE("reflections balance the total rate") {
  // sum_B [lambda_B(x, R_B v) - lambda_B(x, v)] = -<grad U, phi .* v>,
  // the identity behind invariance of the blocked dynamics.
  const ArGaussianModel model =
      make_ar_model(5.0, 0.1, random_state(2, 6, 31));
  const BlockingStrategy strategy = make_grid_strategy(2, 6, 2, 2, 0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    const StateMatrix x = random_state(2, 6, 3000 + trial);
    const VelocityMatrix v = random_state(2, 6, 4000 + trial);
    double lhs = 0.0;
    for (const Block& b : strategy.blocks()) {
      const VelocityMatrix w = reflect_block(model, b, x, v);
      lhs += block_rate(model, b, x, w) - block_rate(model, b, x, v);
    }
    const Matrix grad = model.gradient(x);
    const double rhs =
        -(grad.array() * (strategy.phi().array() * v.array())).sum();
    CHECK(lhs == Catch::Approx(rhs).margin(1e-10));
  }
}

TEST_CASE("thinning bounds") {
  SECTION("zero velocity needs no events") {
    const ArGaussianModel model =
        make_ar_model(5.0, 0.1, random_state(2, 6, 41));
    const BlockingStrategy strategy = make_grid_strategy(2, 6, 2, 2, 0, 1);
    const BoundSet bounds = local_bounds(
        model, strategy, random_state(2, 6, 42), VelocityMatrix::Zero(2, 6),
        1.0);
    for (double b : bounds.bounds) CHECK(b == 0.0);
  }
  SECTION("isotropic growth from the origin is linear in time") {
    const IsotropicGaussian target(2, 3);
    const BlockingStrategy strategy = make_grid_strategy(2, 3, 2, 3, 0, 0);
    const BoundSet bounds =
        local_bounds(target, strategy, StateMatrix::Zero(2, 3),
                     VelocityMatrix::Ones(2, 3), 1.0);
    REQUIRE(bounds.bounds.size() == 1);
    // rate(s) = s * ||v||^2 with phi = 1, so the window endpoint gives
    // theta * d * N.
    CHECK(bounds.bounds[0] == Catch::Approx(6.0).epsilon(1e-12));
    CHECK(bounds.rates_now[0] == Catch::Approx(0.0).margin(1e-15));
  }
  SECTION("quadratic targets: the bound dominates the whole window") {
    const ArGaussianModel model =
        make_ar_model(5.0, 0.1, random_state(3, 10, 43));
    const BlockingStrategy strategy = make_grid_strategy(3, 10, 3, 4, 0, 2);
    const UnitSystem units = UnitSystem::blocked(model, strategy);
    REQUIRE(units.exact_endpoint_bounds());
    Rng rng(44);
    for (int trial = 0; trial < 10; ++trial) {
      const StateMatrix x = random_state(3, 10, 600 + trial);
      const VelocityMatrix v = random_state(3, 10, 700 + trial);
      const double window = 0.3 + rng.uniform();
      const BoundSet bounds = local_bounds(units, x, v, window);
      const Matrix flow = units.phi().cwiseProduct(v);
      for (int k = 0; k < 25; ++k) {
        const double s = window * rng.uniform();
        const StateMatrix xs = x + s * flow;
        for (int u = 1; u <= units.count(); ++u) {
          const double rate =
              block_rate(model, units.rect(u), xs, v);
          CHECK(rate <= bounds.bounds[u - 1] + 1e-9);
        }
      }
    }
  }
  SECTION("log-concave factors: endpoint bounds stay exact") {
    const LogCoshField target(2, 6);
    const FactorSet factors = FactorSet::elementary(target);
    const UnitSystem units = UnitSystem::factored(target, factors);
    REQUIRE(units.exact_endpoint_bounds());
    Rng rng(45);
    for (int trial = 0; trial < 10; ++trial) {
      const StateMatrix x = random_state(2, 6, 800 + trial);
      const VelocityMatrix v = random_state(2, 6, 850 + trial);
      const BoundSet bounds = local_bounds(units, x, v, 0.9);
      for (int k = 0; k < 25; ++k) {
        const double s = 0.9 * rng.uniform();
        const StateMatrix xs = x + s * v;  // phi = 1 for factors
        for (int u = 1; u <= units.count(); ++u) {
          Matrix g;
          units.gradient(xs, u, g);
          const Block& sup = units.rect(u);
          const double rate =
              positive_part((g.array() * block_view(v, sup).array()).sum());
          CHECK(rate <= bounds.bounds[u - 1] + 1e-9);
        }
      }
    }
  }
  SECTION("guarded bounds carry the safety factor over the grid maximum") {
    Rng rng(46);
    Matrix y(2, 6);
    rng.fill_normal(y);
    y *= 3.0;
    SvConfig cfg;
    cfg.alpha = Vector::Constant(2, 0.95);
    cfg.sigma_eta = sv_default_sigma_eta(2);
    cfg.sigma_eps = 25.0 * Matrix::Identity(2, 2);
    cfg.sigma_rho = sv_default_sigma_rho(2);
    const StochVolModel model(cfg, y, Vector::Ones(6));
    const BlockingStrategy strategy = make_grid_strategy(2, 6, 2, 2, 0, 1);
    const UnitSystem units = UnitSystem::blocked(model, strategy);
    REQUIRE_FALSE(units.exact_endpoint_bounds());

    const StateMatrix x = 0.5 * random_state(2, 6, 47);
    const VelocityMatrix v = random_state(2, 6, 48);
    const double window = 0.5;
    const BoundSet bounds = local_bounds(units, x, v, window);
    const Matrix flow = units.phi().cwiseProduct(v);
    for (int u = 1; u <= units.count(); ++u) {
      double grid_max = 0.0;
      for (int k = 0; k < bound_config::kGridPoints; ++k) {
        const double s =
            window * k / static_cast<double>(bound_config::kGridPoints - 1);
        const StateMatrix xs = x + s * flow;
        grid_max =
            std::max(grid_max, block_rate(model, units.rect(u), xs, v));
      }
      CHECK(bounds.bounds[u - 1] ==
            Catch::Approx(bound_config::kSafety * grid_max).epsilon(1e-9));
    }
  }
}

TEST_CASE("per sub-strategy maxima") {
  const ArGaussianModel model =
      make_ar_model(5.0, 0.1, random_state(2, 8, 51));
  const BlockingStrategy strategy = make_grid_strategy(2, 8, 2, 2, 0, 1);
  const Partition partition = even_odd_partition(strategy);

  SECTION("zero velocity gives zero maxima") {
    const std::vector<double> m =
        max_rates(model, strategy, partition, random_state(2, 8, 52),
                  VelocityMatrix::Zero(2, 8));
    for (double v : m) CHECK(v == 0.0);
  }
  SECTION("a single sub-strategy reduces to the block rate") {
    const BlockingStrategy single = make_grid_strategy(2, 8, 2, 8, 0, 0);
    Partition all;
    all.groups.push_back({1});
    const StateMatrix x = random_state(2, 8, 53);
    const VelocityMatrix v = random_state(2, 8, 54);
    const std::vector<double> m = max_rates(model, single, all, x, v);
    REQUIRE(m.size() == 1);
    CHECK(m[0] ==
          Catch::Approx(block_rate(model, single.blocks()[0], x, v))
              .margin(1e-14));
  }
  SECTION("matches the brute-force scan") {
    for (int trial = 0; trial < 10; ++trial) {
      const StateMatrix x = random_state(2, 8, 1000 + trial);
      const VelocityMatrix v = random_state(2, 8, 1100 + trial);
      const std::vector<double> m = max_rates(model, strategy, partition, x, v);
      REQUIRE(m.size() == partition.groups.size());
      for (std::size_t g = 0; g < partition.groups.size(); ++g) {
        double expect = 0.0;
        for (int id : partition.groups[g])
          expect = std::max(expect,
                            block_rate(model, strategy.block(id), x, v));
        CHECK(m[g] == Catch::Approx(expect).margin(1e-14));
      }
    }
  }
}

TEST_CASE("window tuning arithmetic") {
  SECTION("iterating on a homogeneous rate lands at its inverse") {
    const double rate = 5.0;  // bounding events per unit time
    double theta = 1.0;
    for (int k = 0; k < 8; ++k) theta = theta_update(theta, rate * theta);
    CHECK(theta == Catch::Approx(1.0 / rate).epsilon(1e-6));
    CHECK(theta_on_target(rate * theta));
  }
  SECTION("per-round corrections are clamped to a factor of eight") {
    CHECK(theta_update(1.0, 100.0) == Catch::Approx(0.125));
    CHECK(theta_update(1.0, 1e-4) == Catch::Approx(8.0));
    CHECK(theta_update(1e-6, 7.0) >= 1e-6 / 8.0);
  }
  SECTION("the acceptance band") {
    CHECK(theta_on_target(1.0));
    CHECK(theta_on_target(0.8));
    CHECK(theta_on_target(1.25));
    CHECK_FALSE(theta_on_target(0.79));
    CHECK_FALSE(theta_on_target(1.26));
  }
}

TEST_CASE("unit systems expose the right bound dispatch") {
  const ArGaussianModel ar = make_ar_model(5.0, 0.1, random_state(2, 6, 61));
  const BlockingStrategy strategy = make_grid_strategy(2, 6, 2, 2, 0, 1);
  CHECK(UnitSystem::blocked(ar, strategy).exact_endpoint_bounds());

  const FactorSet ar_factors = FactorSet::elementary(ar);
  CHECK(UnitSystem::factored(ar, ar_factors).exact_endpoint_bounds());

  Rng rng(62);
  Matrix y(2, 6);
  rng.fill_normal(y);
  SvConfig cfg;
  cfg.alpha = Vector::Constant(2, 0.95);
  cfg.sigma_eta = sv_default_sigma_eta(2);
  cfg.sigma_eps = 25.0 * Matrix::Identity(2, 2);
  cfg.sigma_rho = sv_default_sigma_rho(2);
  const StochVolModel sv(cfg, y, Vector::Ones(6));
  CHECK_FALSE(UnitSystem::blocked(sv, strategy).exact_endpoint_bounds());
  const FactorSet sv_factors = FactorSet::elementary(sv);
  CHECK_FALSE(UnitSystem::factored(sv, sv_factors).exact_endpoint_bounds());

  const LogCoshField lc(2, 6);
  const FactorSet lc_factors = FactorSet::elementary(lc);
  CHECK(UnitSystem::factored(lc, lc_factors).exact_endpoint_bounds());
  // Blocked units of a merely log-concave potential fall back to the guard.
  CHECK_FALSE(UnitSystem::blocked(lc, strategy).exact_endpoint_bounds());
}

TEST_CASE("factored units use the factor gradient, not the restriction") {
  // The distinction that makes local BPS a different algorithm: the unit
  // gradient of factor n reads only the factor potential, while the blocked
  // restriction reads the whole-model gradient on the same rectangle.
  const ArGaussianModel model =
      make_ar_model(5.0, 0.1, random_state(2, 6, 71));
  const FactorSet factors = FactorSet::elementary(model);
  const UnitSystem units = UnitSystem::factored(model, factors);
  const StateMatrix x = random_state(2, 6, 72);
  Matrix unit_grad;
  units.gradient(x, 3, unit_grad);
  Matrix factor_grad;
  model.factor_gradient(3, x, factor_grad);
  CHECK((unit_grad - factor_grad).cwiseAbs().maxCoeff() < 1e-15);
  const Matrix restricted = model.block_gradient(x, factors.support(3));
  CHECK((unit_grad - restricted).cwiseAbs().maxCoeff() > 1e-3);
}
