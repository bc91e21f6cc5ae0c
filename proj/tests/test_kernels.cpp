#include <cmath>
#include <span>
#include <vector>

#include <doctest.h>

#include "pd/kernels.hpp"
#include "pd/rng.hpp"

using pd::EvalOptions;
using pd::KernelSpec;

namespace {

std::vector<double> random_point(pd::Rng& rng, int dim, double scale = 2.0) {
  std::vector<double> p(dim);
  for (double& v : p) v = scale * rng.normal();
  return p;
}

// Central finite difference of eval with respect to x, component by component.
std::vector<double> fd_grad(const KernelSpec& k, std::span<const double> x,
                            std::span<const double> y, double h = 1e-6) {
  std::vector<double> g(x.size()), xp(x.begin(), x.end());
  for (size_t i = 0; i < x.size(); ++i) {
    const double save = xp[i];
    xp[i] = save + h;
    const double fp = pd::eval(k, xp, y);
    xp[i] = save - h;
    const double fm = pd::eval(k, xp, y);
    xp[i] = save;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("gaussian values match closed form") {
  const auto k = KernelSpec::gaussian(1.0);
  const std::vector<double> x{0.0, 0.0}, y{1.0, 0.0};
  CHECK(pd::eval(k, x, y) == doctest::Approx(std::exp(-0.5)).epsilon(1e-15));
  CHECK(pd::eval(k, x, x) == doctest::Approx(1.0).epsilon(1e-15));

  const auto k2 = KernelSpec::gaussian(2.0);
  const std::vector<double> y2{3.0, 4.0};  // r = 5
  CHECK(pd::eval(k2, x, y2) == doctest::Approx(std::exp(-25.0 / 8.0)).epsilon(1e-15));
}

TEST_CASE("rational quadratic values and gaussian limit") {
  const auto k = KernelSpec::rational_quadratic(1.0);
  const std::vector<double> x{0.0}, y{2.0};  // r^2 = 4
  CHECK(pd::eval(k, x, y) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  // alpha -> infinity converges pointwise to the unit-sigma Gaussian.
  const auto big = KernelSpec::rational_quadratic(1e8);
  const auto g = KernelSpec::gaussian(1.0);
  const std::vector<double> y2{1.3};
  CHECK(pd::eval(big, x, y2) == doctest::Approx(pd::eval(g, x, y2)).epsilon(1e-6));
}

TEST_CASE("cramer distance form and center dependence") {
  const auto k = KernelSpec::cramer();
  const std::vector<double> x{3.0, 0.0}, y{0.0, 4.0};
  // ||x|| + ||y|| - ||x - y|| = 3 + 4 - 5
  CHECK(pd::eval(k, x, y) == doctest::Approx(2.0).epsilon(1e-15));

  const auto shifted = KernelSpec::cramer({1.0, 0.0});
  CHECK(pd::eval(shifted, x, y) ==
        doctest::Approx(2.0 + std::sqrt(17.0) - 5.0).epsilon(1e-14));

  // Radial part is -r.
  CHECK(pd::radial_profile(k, 2.5) == doctest::Approx(-2.5).epsilon(1e-15));
}

TEST_CASE("elastic power law and default exponent") {
  const auto k = KernelSpec::elastic(2.0);
  const std::vector<double> x{0.0, 0.0, 0.0}, y{2.0, 0.0, 0.0};
  CHECK(pd::eval(k, x, y) == doctest::Approx(0.25).epsilon(1e-15));

  // Default exponent is ambient dim - 1: in 3-D, r^-2.
  const auto kd = KernelSpec::elastic();
  CHECK(pd::eval(kd, x, y) == doctest::Approx(0.25).epsilon(1e-15));
  const std::vector<double> x2{0.0, 0.0}, y2{2.0, 0.0};
  CHECK(pd::eval(kd, x2, y2) == doctest::Approx(0.5).epsilon(1e-15));

  CHECK(pd::singular_at_zero(kd));
  CHECK_FALSE(pd::singular_at_zero(KernelSpec::gaussian(1.0)));
}

TEST_CASE("elastic singularity clamps by default and throws in strict mode") {
  const auto k = KernelSpec::elastic(1.0);
  const std::vector<double> x{1.0, 1.0};
  EvalOptions opt;
  CHECK(pd::eval(k, x, x, opt) == doctest::Approx(1.0 / opt.r_min).epsilon(1e-12));
  opt.strict = true;
  CHECK_THROWS_AS(pd::eval(k, x, x, opt), pd::SingularPair);

  // Inside the clamp radius the potential is flat: zero gradient.
  std::vector<double> g(2, 99.0);
  pd::grad(k, x, x, g);
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 0.0);
}

TEST_CASE("rescaled variants scale their parents") {
  const std::vector<double> x{0.2, -0.1}, y{1.4, 0.7};
  const auto g = KernelSpec::gaussian(3.0);
  const auto rg = KernelSpec::rescaled_gaussian(3.0);
  CHECK(pd::eval(rg, x, y) == doctest::Approx(pd::eval(g, x, y) / 3.0).epsilon(1e-15));

  const auto rq = KernelSpec::rational_quadratic(0.5);
  const auto rrq = KernelSpec::rescaled_rq(0.5);
  CHECK(pd::eval(rrq, x, y) == doctest::Approx(0.5 * pd::eval(rq, x, y)).epsilon(1e-15));
}

TEST_CASE("sum and stabilized combine linearly") {
  const std::vector<double> x{0.3, 0.4}, y{-1.0, 0.2};
  const auto a = KernelSpec::gaussian(1.0);
  const auto b = KernelSpec::rational_quadratic(2.0);

  const auto s = KernelSpec::sum({{2.0, a}, {0.5, b}});
  CHECK(pd::eval(s, x, y) ==
        doctest::Approx(2.0 * pd::eval(a, x, y) + 0.5 * pd::eval(b, x, y)).epsilon(1e-15));

  const auto st = KernelSpec::stabilized(a, b, 0.25);
  CHECK(pd::eval(st, x, y) ==
        doctest::Approx(pd::eval(a, x, y) - 0.25 * pd::eval(b, x, y)).epsilon(1e-15));

  std::vector<double> gs(2), ga(2), gb(2);
  pd::grad(s, x, y, gs);
  pd::grad(a, x, y, ga);
  pd::grad(b, x, y, gb);
  for (int i = 0; i < 2; ++i)
    CHECK(gs[i] == doctest::Approx(2.0 * ga[i] + 0.5 * gb[i]).epsilon(1e-14));
}

TEST_CASE("sum rejects nonpositive weights") {
  const auto a = KernelSpec::gaussian(1.0);
  CHECK_THROWS_AS(KernelSpec::sum({{0.0, a}}), std::invalid_argument);
  CHECK_THROWS_AS(KernelSpec::sum({{-1.0, a}}), std::invalid_argument);
  CHECK_THROWS_AS(KernelSpec::sum({}), std::invalid_argument);
}

TEST_CASE("parameter validation") {
  CHECK_THROWS_AS(KernelSpec::gaussian(0.0), std::invalid_argument);
  CHECK_THROWS_AS(KernelSpec::gaussian(-1.0), std::invalid_argument);
  CHECK_THROWS_AS(KernelSpec::rational_quadratic(0.0), std::invalid_argument);
  CHECK_THROWS_AS(KernelSpec::rescaled_gaussian(-2.0), std::invalid_argument);
  CHECK_THROWS_AS(KernelSpec::elastic(0.0), std::invalid_argument);
}

TEST_CASE("symmetry and radiality") {
  pd::Rng rng(42);
  const std::vector<KernelSpec> kernels{
      KernelSpec::gaussian(1.5), KernelSpec::rational_quadratic(0.7),
      KernelSpec::cramer(), KernelSpec::elastic(1.0),
      KernelSpec::sum({{1.0, KernelSpec::rescaled_gaussian(2.0)},
                       {3.0, KernelSpec::rescaled_rq(2.0)}})};
  for (const auto& k : kernels) {
    for (int trial = 0; trial < 20; ++trial) {
      const auto x = random_point(rng, 3), y = random_point(rng, 3);
      CHECK(pd::eval(k, x, y) == doctest::Approx(pd::eval(k, y, x)).epsilon(1e-14));
    }
  }

  // Radial kernels are invariant under joint translation.
  const auto k = KernelSpec::gaussian(1.0);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_point(rng, 2), y = random_point(rng, 2);
    const double before = pd::eval(k, x, y);
    const auto t = random_point(rng, 2);
    for (int i = 0; i < 2; ++i) {
      x[i] += t[i];
      y[i] += t[i];
    }
    CHECK(pd::eval(k, x, y) == doctest::Approx(before).epsilon(1e-12));
  }
}

TEST_CASE("closed-form gradients agree with finite differences") {
  pd::Rng rng(7);
  const std::vector<KernelSpec> kernels{
      KernelSpec::gaussian(1.0),
      KernelSpec::gaussian(4.0),
      KernelSpec::rational_quadratic(0.5),
      KernelSpec::rational_quadratic(3.0),
      KernelSpec::cramer(),
      KernelSpec::cramer({0.5, -0.5}),
      KernelSpec::elastic(1.0),
      KernelSpec::rescaled_gaussian(2.0),
      KernelSpec::rescaled_rq(1.0),
      KernelSpec::sum({{1.0, KernelSpec::rescaled_gaussian(4.0)},
                       {1.0, KernelSpec::rescaled_gaussian(8.0)},
                       {1.0, KernelSpec::rescaled_gaussian(16.0)}}),
      KernelSpec::stabilized(KernelSpec::gaussian(2.0), KernelSpec::gaussian(1.0), 0.8)};

  int probes = 0;
  for (const auto& k : kernels) {
    for (int trial = 0; trial < 100; ++trial) {
      const auto x = random_point(rng, 2), y = random_point(rng, 2);
      // Keep FD probes away from kinks and singular points.
      std::vector<double> d(2);
      for (int i = 0; i < 2; ++i) d[i] = x[i] - y[i];
      if (norm(d) < 1e-2) continue;
      if (k.kind == pd::KernelKind::Cramer && norm(x) < 1e-2) continue;

      std::vector<double> g(2);
      pd::grad(k, x, y, g);
      const auto ref = fd_grad(k, x, y);
      const double scale = std::max(norm(ref), 1e-10);
      for (int i = 0; i < 2; ++i) CHECK(std::abs(g[i] - ref[i]) / scale < 1e-5);
      ++probes;
    }
  }
  CHECK(probes >= 1000);
}

TEST_CASE("gradient antisymmetry for radial kernels") {
  pd::Rng rng(99);
  const auto k = KernelSpec::rational_quadratic(1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = random_point(rng, 2), y = random_point(rng, 2);
    std::vector<double> gx(2), gy(2);
    pd::grad(k, x, y, gx);
    pd::grad(k, y, x, gy);
    for (int i = 0; i < 2; ++i) CHECK(gx[i] == doctest::Approx(-gy[i]).epsilon(1e-14));
  }
}

TEST_CASE("describe round-trips through the parser") {
  const std::vector<KernelSpec> kernels{
      KernelSpec::gaussian(2.0),
      KernelSpec::rational_quadratic(0.5),
      KernelSpec::cramer(),
      KernelSpec::elastic(1.0),
      KernelSpec::rescaled_gaussian(16.0),
      KernelSpec::rescaled_rq(3.0),
      KernelSpec::sum({{1.0, KernelSpec::rescaled_gaussian(4.0)},
                       {2.5, KernelSpec::rescaled_gaussian(8.0)}}),
      KernelSpec::stabilized(
          KernelSpec::sum({{1.0, KernelSpec::gaussian(4.0)}}),
          KernelSpec::gaussian(1.0), 1.0)};
  pd::Rng rng(3);
  for (const auto& k : kernels) {
    const auto parsed = pd::parse_kernel(k.describe());
    CHECK(parsed.describe() == k.describe());
    const auto x = random_point(rng, 2), y = random_point(rng, 2);
    CHECK(pd::eval(parsed, x, y) == doctest::Approx(pd::eval(k, x, y)).epsilon(1e-15));
  }
}

TEST_CASE("parser accepts grammar forms") {
  CHECK(pd::parse_kernel("gaussian:sigma=2").sigma == 2.0);
  CHECK(pd::parse_kernel("rq:alpha=0.5").alpha == 0.5);
  CHECK(pd::parse_kernel("cramer").kind == pd::KernelKind::Cramer);
  CHECK(pd::parse_kernel("elastic").kind == pd::KernelKind::Elastic);
  CHECK(pd::parse_kernel("elastic:m=3").exponent == 3.0);
  CHECK(pd::parse_kernel("rgaussian:sigma=4").kind == pd::KernelKind::RescaledGaussian);
  CHECK(pd::parse_kernel("rrq:alpha=2").kind == pd::KernelKind::RescaledRq);

  const auto s = pd::parse_kernel("sum[rgaussian:sigma=4;2*rgaussian:sigma=8]");
  REQUIRE(s.members.size() == 2);
  CHECK(s.members[0].weight == 1.0);
  CHECK(s.members[1].weight == 2.0);

  const auto st = pd::parse_kernel("stab[gaussian:sigma=2;gaussian:sigma=1;0.75]");
  CHECK(st.kind == pd::KernelKind::Stabilized);
  CHECK(st.eps == 0.75);
  CHECK(st.base().sigma == 2.0);
  CHECK(st.stabilizer().sigma == 1.0);

  // Nesting.
  const auto nested =
      pd::parse_kernel("stab[sum[gaussian:sigma=4;gaussian:sigma=8];rq:alpha=1;1]");
  CHECK(nested.base().members.size() == 2);
}

TEST_CASE("parser rejects malformed specs with position diagnostics") {
  using std::invalid_argument;
  CHECK_THROWS_AS(pd::parse_kernel(""), invalid_argument);
  CHECK_THROWS_AS(pd::parse_kernel("gauss:sigma=1"), invalid_argument);
  CHECK_THROWS_AS(pd::parse_kernel("gaussian:sigma="), invalid_argument);
  CHECK_THROWS_AS(pd::parse_kernel("gaussian:sigma=abc"), invalid_argument);
  CHECK_THROWS_AS(pd::parse_kernel("gaussian:alpha=1"), invalid_argument);
  CHECK_THROWS_AS(pd::parse_kernel("gaussian:sigma=-1"), invalid_argument);
  CHECK_THROWS_AS(pd::parse_kernel("sum[]"), invalid_argument);
  CHECK_THROWS_AS(pd::parse_kernel("sum[gaussian:sigma=1"), invalid_argument);
  CHECK_THROWS_AS(pd::parse_kernel("stab[gaussian:sigma=1;gaussian:sigma=2]"),
                  invalid_argument);
  CHECK_THROWS_AS(pd::parse_kernel("gaussian:sigma=1 extra"), invalid_argument);
  CHECK_THROWS_AS(pd::parse_kernel("sum[0*gaussian:sigma=1]"), invalid_argument);

  try {
    pd::parse_kernel("gaussian:sigma=oops");
    FAIL("expected throw");
  } catch (const invalid_argument& e) {
    CHECK(std::string(e.what()).find("position") != std::string::npos);
  }
}

TEST_CASE("length scale reflects the smallest member") {
  CHECK(pd::length_scale(KernelSpec::gaussian(3.0)) == doctest::Approx(3.0));
  CHECK(pd::length_scale(KernelSpec::rational_quadratic(2.0)) ==
        doctest::Approx(2.0));  // sqrt(2 alpha)
  CHECK(pd::length_scale(KernelSpec::cramer()) == 0.0);
  const auto s = KernelSpec::sum({{1.0, KernelSpec::gaussian(4.0)},
                                  {1.0, KernelSpec::gaussian(0.5)}});
  CHECK(pd::length_scale(s) == doctest::Approx(0.5));
}

TEST_CASE("non-finite inputs are rejected") {
  const auto k = KernelSpec::gaussian(1.0);
  const std::vector<double> x{std::nan(""), 0.0}, y{0.0, 0.0};
  CHECK_THROWS_AS(pd::eval(k, x, y), pd::NonFiniteValue);
}
