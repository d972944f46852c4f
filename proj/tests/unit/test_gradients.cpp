#include <doctest.h>

#include "oracles.hpp"

using namespace apseg;

TEST_CASE("central differences agree with reverse mode for every op and layer") {
  const auto results = testing::run_gradient_suite(20240611);
  CHECK(results.size() >= 40);
  for (const auto& r : results) {
    INFO(r.name << ": max relative error " << r.max_rel << " over " << r.probes << " probes");
    CHECK(r.probes >= 20);
    CHECK(r.max_rel <= testing::kFdTolerance);
  }
}

TEST_CASE("the relative error uses an absolute scale for tiny gradients") {
  CHECK(testing::fd_relative_error(1.0, 1.0 + 1e-6) == doctest::Approx(1e-6).epsilon(1e-3));
  CHECK(testing::fd_relative_error(0.0, 1e-8) == doctest::Approx(1e-5));
}
