#include <catch2/catch_amalgamated.hpp>

#include "rcsim/runner.hpp"
#include "rcsim/verdicts.hpp"

using namespace rcsim;

TEST_CASE("baseline scenario runs and commits") {
    Scenario sc;
    sc.seed = 42;
    sc.duration = 12000;
    sc.measured_cycles = 5;
    sc.liveness_threshold = 4;
    Runner runner(sc);
    runner.run();
    auto res = runner.result();
    CHECK(res.commits > 0);
}
