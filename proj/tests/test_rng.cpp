#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <vector>

#include "maskdiff/rng.hpp"

using namespace maskdiff;

TEST_CASE("equal seeds give equal streams") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
    Rng c = Rng::stream(7, 3), d = Rng::stream(7, 3);
    for (int i = 0; i < 100; ++i) CHECK(c.uniform() == d.uniform());
}

TEST_CASE("derived streams differ across indices") {
    Rng a = Rng::stream(7, 0), b = Rng::stream(7, 1);
    int same = 0;
    for (int i = 0; i < 64; ++i) same += a.next() == b.next();
    CHECK(same == 0);
}

TEST_CASE("uniform stays in [0,1) and uniform_open in (0,1)") {
    Rng rng(3);
    for (int i = 0; i < 10000; ++i) {
        double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        double v = rng.uniform_open();
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
}

TEST_CASE("uniform_int covers its range") {
    Rng rng(5);
    std::set<uint64_t> seen;
    for (int i = 0; i < 1000; ++i) {
        uint64_t x = rng.uniform_int(7);
        CHECK(x < 7);
        seen.insert(x);
    }
    CHECK(seen.size() == 7);
    CHECK_THROWS_AS(rng.uniform_int(0), std::invalid_argument);
}

TEST_CASE("categorical respects weights") {
    Rng rng(11);
    std::vector<double> w{0.0, 2.0, 0.0, 1.0};
    long long count1 = 0, count3 = 0;
    const int n = 30000;
    for (int i = 0; i < n; ++i) {
        int k = rng.categorical(w);
        REQUIRE((k == 1 || k == 3));  // zero-weight entries never drawn
        if (k == 1) ++count1;
        else ++count3;
    }
    // binomial 3-sigma band around 2/3
    double p = double(count1) / n;
    CHECK(std::abs(p - 2.0 / 3.0) < 3.0 * std::sqrt((2.0 / 3.0) * (1.0 / 3.0) / n));
    CHECK(count1 + count3 == n);

    std::vector<double> zero{0.0, 0.0};
    CHECK_THROWS_AS(rng.categorical(zero), std::invalid_argument);
    std::vector<double> neg{0.5, -0.1};
    CHECK_THROWS_AS(rng.categorical(neg), std::invalid_argument);
}

TEST_CASE("gumbel draws are finite with the right location") {
    Rng rng(13);
    double sum = 0.0;
    const int n = 50000;
    for (int i = 0; i < n; ++i) {
        double g = rng.gumbel();
        REQUIRE(std::isfinite(g));
        sum += g;
    }
    // mean of a standard Gumbel is the Euler-Mascheroni constant
    CHECK(std::abs(sum / n - 0.5772156649) < 0.02);
}
