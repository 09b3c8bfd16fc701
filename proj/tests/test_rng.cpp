#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "dipir/parallel.hpp"
#include "dipir/rng.hpp"

using namespace dipir;

TEST_CASE("philox4x32-10 known-answer vectors") {
    const auto zero = philox4x32({0, 0, 0, 0}, {0, 0});
    CHECK(zero[0] == 0x6627e8d5u);
    CHECK(zero[1] == 0xe169c58du);
    CHECK(zero[2] == 0xbc57ac4cu);
    CHECK(zero[3] == 0x9b00dbd8u);
    const auto ones = philox4x32({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu});
    CHECK(ones[0] == 0x408f276du);
    CHECK(ones[1] == 0x41c83b0eu);
    CHECK(ones[2] == 0xa20bc7c6u);
    CHECK(ones[3] == 0x6d5451fdu);
    const auto pi = philox4x32({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u});
    CHECK(pi[0] == 0xd16cfe09u);
    CHECK(pi[1] == 0x94fdccebu);
    CHECK(pi[2] == 0x5001e420u);
    CHECK(pi[3] == 0x24126ea1u);
}

TEST_CASE("same key replays the same sequence") {
    auto a = rng_stream(42, 7, 3, 1, Purpose::Emitter);
    auto b = rng_stream(42, 7, 3, 1, Purpose::Emitter);
    for (int k = 0; k < 1000; ++k) CHECK(a.next() == b.next());
}

TEST_CASE("outputs lie in [0, 1)") {
    auto s = rng_stream(1, 2, 3, 4, Purpose::Bsdf);
    for (int k = 0; k < 100000; ++k) {
        const double v = s.next();
        REQUIRE(v >= 0.0);
        REQUIRE(v < 1.0);
    }
}

TEST_CASE("streams differing in one key field are uncorrelated") {
    const int n = 100000;
    auto corr = [&](RngStream a, RngStream b) {
        double sa = 0, sb = 0, sab = 0, saa = 0, sbb = 0;
        for (int k = 0; k < n; ++k) {
            const double x = a.next(), y = b.next();
            sa += x, sb += y, sab += x * y, saa += x * x, sbb += y * y;
        }
        const double cov = sab / n - sa / n * sb / n;
        return cov / std::sqrt((saa / n - sa * sa / n / n) * (sbb / n - sb * sb / n / n));
    };
    const RngStream base = rng_stream(9, 10, 11, 0, Purpose::Camera);
    CHECK(std::abs(corr(base, rng_stream(10, 10, 11, 0, Purpose::Camera))) < 0.01);
    CHECK(std::abs(corr(base, rng_stream(9, 11, 11, 0, Purpose::Camera))) < 0.01);
    CHECK(std::abs(corr(base, rng_stream(9, 10, 12, 0, Purpose::Camera))) < 0.01);
    CHECK(std::abs(corr(base, rng_stream(9, 10, 11, 1, Purpose::Camera))) < 0.01);
    CHECK(std::abs(corr(base, rng_stream(9, 10, 11, 0, Purpose::Emitter))) < 0.01);
}

TEST_CASE("uniform mean and variance") {
    auto s = rng_stream(123, 0, 0, 0, Purpose::Init);
    double sum = 0, sq = 0;
    const int n = 1000000;
    for (int k = 0; k < n; ++k) {
        const double v = s.next();
        sum += v;
        sq += v * v;
    }
    CHECK(sum / n == doctest::Approx(0.5).epsilon(0.005));
    CHECK(sq / n - (sum / n) * (sum / n) == doctest::Approx(1.0 / 12).epsilon(0.01));
}

TEST_CASE("derive_seed separates tags") {
    CHECK(derive_seed(1, 0) != derive_seed(1, 1));
    CHECK(derive_seed(1, 0) != derive_seed(2, 0));
    CHECK(derive_seed(5, 6) == derive_seed(5, 6));
}

TEST_CASE("parallel_for visits every index once and rethrows") {
    for (int threads : {1, 3, 8}) {
        set_thread_count(threads);
        std::vector<int> seen(1000, 0);
        parallel_for(seen.size(), [&](std::size_t i) { seen[i] += 1; });
        for (int v : seen) CHECK(v == 1);
        CHECK_THROWS_AS(parallel_for(10, [](std::size_t i) {
                            if (i == 5) throw std::runtime_error("boom");
                        }),
                        std::runtime_error);
    }
    set_thread_count(0);
}
