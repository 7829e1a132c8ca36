#include <doctest.h>

#include <cmath>

#include "heatbc/expfit.hpp"
#include "heatbc/inverse.hpp"
#include "heatbc/phd.hpp"

using namespace heatbc;

namespace {

Eigen::VectorXd sample_sum(const std::vector<double>& rates, const std::vector<double>& amps,
                           double t0, double dt, int m) {
    Eigen::VectorXd g(m);
    for (int k = 0; k < m; ++k) {
        double acc = 0.0;
        for (size_t j = 0; j < rates.size(); ++j)
            acc += amps[j] * std::exp(-rates[j] * (t0 + k * dt));
        g(k) = acc;
    }
    return g;
}

} // namespace

TEST_CASE("esprit recovers 1 + 0.5 exp(-2t) exactly") {
    const double t0 = 0.1, dt = 0.05;
    const int m = 80;
    auto g = sample_sum({0.0, 2.0}, {1.0, 0.5}, t0, dt, m);
    auto rates = esprit(g, dt, 10);
    REQUIRE(rates.size() == 2);
    CHECK(rates[0] == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(rates[1] == doctest::Approx(2.0).epsilon(1e-9));

    Eigen::VectorXd times(m);
    for (int k = 0; k < m; ++k) times(k) = t0 + k * dt;
    auto a = exp_amplitudes(rates, times, g);
    CHECK(a(0) == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(a(1) == doctest::Approx(0.5).epsilon(1e-8));
    CHECK_THROWS_AS(esprit(g.head(3), dt, 10), std::invalid_argument);
}

TEST_CASE("esprit resolves a five-term decaying sum") {
    const std::vector<double> lam{0.0, 1.0, 3.9, 4.1, 9.0};
    const std::vector<double> amp{1.0, 0.8, 0.3, 0.4, 0.2};
    const double t0 = 0.05, dt = 0.05;
    const int m = 120;
    auto g = sample_sum(lam, amp, t0, dt, m);
    auto rates = esprit(g, dt, 12);
    REQUIRE(rates.size() == 5);
    for (int j = 0; j < 5; ++j)
        CHECK(rates[j] == doctest::Approx(lam[j]).epsilon(1e-6));
}

TEST_CASE("varpro improves perturbed rates on a family of signals") {
    const std::vector<double> lam{0.0, 1.0, 4.0};
    const int L = 60;
    Eigen::VectorXd times(L);
    for (int l = 0; l < L; ++l) times(l) = 0.1 + 0.08 * l;
    // three independent amplitude patterns sharing the rates
    Eigen::MatrixXd Y(L, 3);
    const double A[3][3] = {{1.0, 0.5, 0.2}, {1.0, -0.3, 0.4}, {1.0, 0.7, -0.1}};
    for (int c = 0; c < 3; ++c)
        for (int l = 0; l < L; ++l) {
            double acc = 0.0;
            for (int j = 0; j < 3; ++j) acc += A[c][j] * std::exp(-lam[j] * times(l));
            Y(l, c) = acc;
        }
    std::vector<double> start{0.0, 1.08, 3.7};
    auto refined = varpro_refine(start, times, Y);
    REQUIRE(refined.size() == 3);
    for (int j = 0; j < 3; ++j) {
        CHECK(std::abs(refined[j] - lam[j]) <= std::max(std::abs(start[j] - lam[j]), 1e-6));
        CHECK(refined[j] == doctest::Approx(lam[j]).epsilon(1e-5));
    }
}

TEST_CASE("fit_spectral_data on a one-point net: eigenvalues from the trace") {
    // a single net point on a uniform circle: H(z,z,t) is the diagonal heat
    // kernel, a clean decaying-exponential sum with known rates
    auto s = build_circle(128, 2.0 * M_PI);
    auto spec = eigendecompose(s, 128);
    auto d = sample_phd(spec, M_PI, 0.15);
    auto lsd = fit_spectral_data(d, 9);
    REQUIRE(lsd.eigenvalues.size() >= 7);
    const double expect[7] = {0, 1, 1, 4, 4, 9, 9};
    for (int k = 0; k < 7; ++k)
        CHECK(lsd.eigenvalues(k) == doctest::Approx(expect[k]).epsilon(0.02));
    // multiplicities reflect the degenerate pairs
    REQUIRE(lsd.multiplicities.size() >= 3);
    CHECK(lsd.multiplicities[0] == 1);
    CHECK(lsd.multiplicities[1] == 2);
    CHECK(lsd.multiplicities[2] == 2);
}
