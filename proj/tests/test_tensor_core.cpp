#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <sstream>

#include "srt/field.hpp"
#include "srt/io.hpp"
#include "srt/lk.hpp"
#include "srt/rng.hpp"
#include "test_util.hpp"

using namespace srt;
using testutil::random_field;

TEST_CASE("bilinear sampling basics") {
  SUBCASE("constant field") {
    ScalarField f(8, 8);
    for (int r = 0; r < 8; ++r)
      for (int c = 0; c < 8; ++c) f.at(r, c) = 7.0;
    CHECK(*bilinear_sample(f, {3.25, 4.75}) == doctest::Approx(7.0).epsilon(1e-15));
  }
  SUBCASE("linear ramp is exact") {
    ScalarField f(4, 6);
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 6; ++c) f.at(r, c) = c;
    CHECK(*bilinear_sample(f, {2.5, 0.0}) == doctest::Approx(2.5).epsilon(1e-15));
  }
  SUBCASE("4-term formula") {
    Rng rng(11);
    ScalarField f = random_field(rng, 5, 5);
    const double fx = 0.3, fy = 0.7;
    const double want = fx * fy * f.at(3, 2) + (1 - fx) * fy * f.at(3, 1) +
                        fx * (1 - fy) * f.at(2, 2) + (1 - fx) * (1 - fy) * f.at(2, 1);
    CHECK(*bilinear_sample(f, {1.3, 2.7}) == doctest::Approx(want).epsilon(1e-13));
  }
  SUBCASE("integer coordinates reproduce samples exactly") {
    Rng rng(12);
    ScalarField f = random_field(rng, 6, 7);
    for (int r = 0; r < 6; ++r) {
      for (int c = 0; c < 7; ++c) {
        CHECK(*bilinear_sample(f, {double(c), double(r)}) == f.at(r, c));
      }
    }
  }
  SUBCASE("exact on affine fields") {
    ScalarField f(9, 9);
    for (int r = 0; r < 9; ++r)
      for (int c = 0; c < 9; ++c) f.at(r, c) = 1.5 * c - 0.25 * r + 3.0;
    Rng rng(13);
    for (int i = 0; i < 50; ++i) {
      const double x = rng.uniform(0.0, 8.0), y = rng.uniform(0.0, 8.0);
      CHECK(*bilinear_sample(f, {x, y}) ==
            doctest::Approx(1.5 * x - 0.25 * y + 3.0).epsilon(1e-12));
    }
  }
  SUBCASE("out of bounds signals") {
    ScalarField f(4, 4);
    CHECK(!bilinear_sample(f, {-0.01, 1.0}));
    CHECK(!bilinear_sample(f, {3.01, 1.0}));
    CHECK(!bilinear_sample(f, {1.0, -0.5}));
    CHECK(!bilinear_sample(f, {1.0, 3.5}));
    CHECK(bilinear_sample(f, {0.0, 3.0}));
    CHECK(bilinear_sample(f, {3.0, 0.0}));
  }
}

TEST_CASE("bilinear sample jacobian") {
  SUBCASE("ramp") {
    ScalarField f(5, 5);
    for (int r = 0; r < 5; ++r)
      for (int c = 0; c < 5; ++c) f.at(r, c) = c;
    const Grad2 g = bilinear_sample_jacobian(f, {2.2, 1.7});
    CHECK(g.ddx == doctest::Approx(1.0).epsilon(1e-13));
    CHECK(g.ddy == doctest::Approx(0.0).epsilon(1e-13));
  }
  SUBCASE("constant") {
    ScalarField f(5, 5);
    for (int r = 0; r < 5; ++r)
      for (int c = 0; c < 5; ++c) f.at(r, c) = 4.0;
    const Grad2 g = bilinear_sample_jacobian(f, {1.4, 2.9});
    CHECK(g.ddx == doctest::Approx(0.0));
    CHECK(g.ddy == doctest::Approx(0.0));
  }
  SUBCASE("matches finite differences at a fixed point") {
    Rng rng(21);
    ScalarField f = random_field(rng, 5, 5);
    const Point2 p{1.3, 2.7};
    const Grad2 g = bilinear_sample_jacobian(f, p);
    const double h = 1e-5;
    const double fdx =
        (*bilinear_sample(f, {p.x + h, p.y}) - *bilinear_sample(f, {p.x - h, p.y})) /
        (2 * h);
    const double fdy =
        (*bilinear_sample(f, {p.x, p.y + h}) - *bilinear_sample(f, {p.x, p.y - h})) /
        (2 * h);
    CHECK(testutil::rel_err(g.ddx, fdx) < 1e-4);
    CHECK(testutil::rel_err(g.ddy, fdy) < 1e-4);
  }
  SUBCASE("matches finite differences on 1000 random pairs") {
    Rng rng(22);
    int checked = 0;
    while (checked < 1000) {
      ScalarField f = random_field(rng, 6, 6);
      const double x = rng.uniform(0.5, 4.5), y = rng.uniform(0.5, 4.5);
      const double h = 1e-5;
      // Stay away from cell boundaries where the derivative jumps.
      if (std::abs(x - std::round(x)) < 2 * h || std::abs(y - std::round(y)) < 2 * h)
        continue;
      const Grad2 g = bilinear_sample_jacobian(f, {x, y});
      const double fdx =
          (*bilinear_sample(f, {x + h, y}) - *bilinear_sample(f, {x - h, y})) / (2 * h);
      const double fdy =
          (*bilinear_sample(f, {x, y + h}) - *bilinear_sample(f, {x, y - h})) / (2 * h);
      CHECK(std::abs(g.ddx - fdx) <= 1e-4 * std::max(1.0, std::abs(fdx)));
      CHECK(std::abs(g.ddy - fdy) <= 1e-4 * std::max(1.0, std::abs(fdy)));
      ++checked;
    }
  }
  SUBCASE("out of interior throws") {
    ScalarField f(4, 4);
    CHECK_THROWS_AS(bilinear_sample_jacobian(f, {-1.0, 1.0}), std::domain_error);
    CHECK_THROWS_AS(bilinear_sample_jacobian(f, {3.0, 1.0}), std::domain_error);
  }
}

TEST_CASE("spatial gradient") {
  SUBCASE("linear field slopes") {
    ScalarField f(6, 8);
    for (int r = 0; r < 6; ++r)
      for (int c = 0; c < 8; ++c) f.at(r, c) = 2.0 * c + 3.0 * r;
    const auto [gx, gy] = spatial_gradient(f);
    for (int r = 0; r < 6; ++r) {
      for (int c = 1; c < 7; ++c) CHECK(gx.at(r, c) == doctest::Approx(2.0));
    }
    for (int r = 1; r < 5; ++r) {
      for (int c = 0; c < 8; ++c) CHECK(gy.at(r, c) == doctest::Approx(3.0));
    }
  }
  SUBCASE("constant field") {
    ScalarField f(5, 5);
    for (int r = 0; r < 5; ++r)
      for (int c = 0; c < 5; ++c) f.at(r, c) = 1.25;
    const auto [gx, gy] = spatial_gradient(f);
    for (int r = 0; r < 5; ++r) {
      for (int c = 0; c < 5; ++c) {
        CHECK(gx.at(r, c) == 0.0);
        CHECK(gy.at(r, c) == 0.0);
      }
    }
  }
  SUBCASE("interior equals central difference") {
    Rng rng(31);
    ScalarField f = random_field(rng, 7, 7);
    const auto [gx, gy] = spatial_gradient(f);
    for (int r = 1; r < 6; ++r) {
      for (int c = 1; c < 6; ++c) {
        CHECK(gx.at(r, c) ==
              doctest::Approx((f.at(r, c + 1) - f.at(r, c - 1)) / 2).epsilon(1e-14));
        CHECK(gy.at(r, c) ==
              doctest::Approx((f.at(r + 1, c) - f.at(r - 1, c)) / 2).epsilon(1e-14));
      }
    }
  }
  SUBCASE("too small throws") {
    ScalarField f(2, 5);
    CHECK_THROWS(spatial_gradient(f));
  }
}

TEST_CASE("field validation") {
  CHECK_THROWS(ScalarField(0, 3));
  CHECK_THROWS(ScalarField(3, 0));
  std::vector<double> bad = {1.0, std::nan(""), 2.0, 3.0};
  CHECK_THROWS(ScalarField(2, 2, std::move(bad)));
  std::vector<double> wrong_len = {1.0, 2.0, 3.0};
  CHECK_THROWS(ScalarField(2, 2, std::move(wrong_len)));
}

TEST_CASE("deterministic rng") {
  SUBCASE("same seed, same stream") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  }
  SUBCASE("fork by name is position independent") {
    Rng a(7);
    Rng fork_early = a.fork("scene");
    a.uniform();
    a.uniform();
    Rng fork_late = a.fork("scene");
    CHECK(fork_early.next_u64() == fork_late.next_u64());
  }
  SUBCASE("named forks differ") {
    Rng a(7);
    CHECK(a.fork("scene").next_u64() != a.fork("batch").next_u64());
  }
  SUBCASE("uniform in range") {
    Rng a(9);
    for (int i = 0; i < 1000; ++i) {
      const double u = a.uniform();
      CHECK(u >= 0.0);
      CHECK(u < 1.0);
    }
  }
  SUBCASE("normal moments") {
    Rng a(10);
    double sum = 0.0, sq = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
      const double v = a.normal();
      sum += v;
      sq += v * v;
    }
    CHECK(std::abs(sum / n) < 0.03);
    CHECK(std::abs(sq / n - 1.0) < 0.05);
  }
  SUBCASE("below is unbiased enough and in range") {
    Rng a(11);
    int counts[5] = {0, 0, 0, 0, 0};
    for (int i = 0; i < 5000; ++i) counts[a.below(5)]++;
    for (int c : counts) CHECK(c > 800);
  }
  SUBCASE("shuffle is a permutation") {
    Rng a(12);
    std::vector<int> v = {0, 1, 2, 3, 4, 5, 6, 7};
    a.shuffle(v);
    std::vector<int> s = v;
    std::sort(s.begin(), s.end());
    for (int i = 0; i < 8; ++i) CHECK(s[i] == i);
  }
}

TEST_CASE("raster round trip") {
  SUBCASE("bit-exact doubles") {
    Rng rng(51);
    ScalarField f = random_field(rng, 9, 4, -3.0, 11.0);
    f.at(0, 0) = 1.0 / 3.0;
    f.at(1, 1) = 1e-300;
    f.at(2, 2) = -0.0;
    std::stringstream ss;
    write_pf2(ss, f);
    const ScalarField g = read_pf2(ss);
    REQUIRE(g.same_shape(f));
    for (int r = 0; r < 9; ++r) {
      for (int c = 0; c < 4; ++c) CHECK(g.at(r, c) == f.at(r, c));
    }
  }
  SUBCASE("header") {
    ScalarField f(2, 3);
    std::stringstream ss;
    write_pf2(ss, f);
    std::string magic;
    int w, h;
    ss >> magic >> w >> h;
    CHECK(magic == "PF2");
    CHECK(w == 3);
    CHECK(h == 2);
  }
  SUBCASE("bad stream throws") {
    std::stringstream ss("NOPE 2 2\n0 0\n0 0\n");
    CHECK_THROWS(read_pf2(ss));
    std::stringstream truncated("PF2 2 2\n0 0\n0\n");
    CHECK_THROWS(read_pf2(truncated));
  }
  SUBCASE("flow round trip") {
    Rng rng(52);
    FlowField flow(random_field(rng, 5, 6, -2.0, 2.0),
                   random_field(rng, 5, 6, -2.0, 2.0));
    std::stringstream ss;
    write_flow(ss, flow);
    const FlowField back = read_flow(ss);
    for (int r = 0; r < 5; ++r) {
      for (int c = 0; c < 6; ++c) {
        CHECK(back.u.at(r, c) == flow.u.at(r, c));
        CHECK(back.v.at(r, c) == flow.v.at(r, c));
      }
    }
  }
}
