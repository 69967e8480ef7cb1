#include <doctest.h>

#include <cmath>
#include <vector>

#include "bioflux/rng.hpp"

using bioflux::Rng;

TEST_CASE("identical seeds give identical streams") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("different seeds diverge") {
  Rng a(1), b(2);
  int same = 0;
  for (int i = 0; i < 64; ++i) same += (a.next_u64() == b.next_u64());
  CHECK(same == 0);
}

TEST_CASE("child streams are deterministic and independent of parent state") {
  Rng parent(7);
  Rng c1 = parent.child(3);
  parent.next_u64();  // advancing the parent must not affect child derivation
  Rng c2 = parent.child(3);
  for (int i = 0; i < 100; ++i) CHECK(c1.next_u64() == c2.next_u64());

  Rng c3 = parent.child(4);
  Rng c4 = parent.child(3);
  CHECK(c3.next_u64() != c4.next_u64());
}

TEST_CASE("uniform01 stays in [0,1) and has sane moments") {
  Rng r(11);
  double sum = 0.0, sum2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform01();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    sum += u;
    sum2 += u * u;
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  CHECK(mean == doctest::Approx(0.5).epsilon(0.01));
  CHECK(var == doctest::Approx(1.0 / 12.0).epsilon(0.02));
}

TEST_CASE("normal has standard moments") {
  Rng r(13);
  double sum = 0.0, sum2 = 0.0;
  const int n = 400000;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    sum += z;
    sum2 += z * z;
  }
  CHECK(sum / n == doctest::Approx(0.0).epsilon(0.01));
  CHECK(sum2 / n == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("log_uniform respects bounds") {
  Rng r(17);
  for (int i = 0; i < 10000; ++i) {
    const double v = r.log_uniform(5.0, 100.0);
    CHECK(v >= 5.0);
    CHECK(v <= 100.0);
  }
}
