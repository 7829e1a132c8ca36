#include <doctest.h>

#include <cmath>
#include <random>

#include "heatbc/mgh.hpp"

using namespace heatbc;

namespace {

DiscreteSpace perturbed_circle(int n, std::mt19937& rng) {
    std::uniform_real_distribution<double> amp(0.0, 0.5), phase(0.0, 2.0 * M_PI);
    const double a = amp(rng), b = phase(rng);
    return build_circle(n, 2.0 * M_PI, [a, b](double y) { return 1.0 + a * std::cos(y + b); });
}

} // namespace

TEST_CASE("self distance is exactly zero in exhaustive mode") {
    auto s = build_circle(8, 2.0 * M_PI, [](double y) { return 2.0 + std::cos(y); });
    auto e = d_mgh_estimate(s, s);
    CHECK(e.epsilon == 0.0);
    CHECK(e.distortion == 0.0);
    CHECK(e.measure_defect == 0.0);
    CHECK(e.base_defect == 0.0);
    // zero epsilon witnesses a weight-preserving bijective isometry
    auto A = net_from_space(s);
    const int n = int(A.dist.rows());
    std::vector<char> hit(n, 0);
    for (int i = 0; i < n; ++i) {
        hit[e.map_fwd[i]] = 1;
        CHECK(A.weights(i) == doctest::Approx(A.weights(e.map_fwd[i])).epsilon(1e-12));
        for (int j = 0; j < n; ++j)
            CHECK(A.dist(i, j) == doctest::Approx(A.dist(e.map_fwd[i], e.map_fwd[j])).epsilon(1e-12));
    }
    for (int i = 0; i < n; ++i) CHECK(hit[i] == 1);
}

TEST_CASE("epsilon dominates every defect and rejects missing weights") {
    auto a = build_circle(8, 2.0 * M_PI);
    auto b = build_circle(8, 2.0 * M_PI, [](double y) { return 1.0 + 0.3 * std::sin(y); });
    auto e = d_mgh_estimate(a, b);
    CHECK(e.epsilon >= e.distortion);
    CHECK(e.epsilon >= e.measure_defect);
    CHECK(e.epsilon >= e.base_defect);
    MetricMeasureNet empty;
    CHECK_THROWS_AS(d_mgh_estimate(empty, net_from_space(a)), std::invalid_argument);
}

TEST_CASE("nearby circles: exhaustive estimate bounded by scale gap plus fineness") {
    const double eta = 0.05;
    auto a = build_circle(8, 2.0 * M_PI);
    auto b = build_circle(8, 2.0 * M_PI * (1.0 + eta));
    auto e = d_mgh_estimate(a, b);
    const double fineness = 2.0 * M_PI * (1.0 + eta) / 8.0;
    CHECK(e.epsilon <= eta * M_PI + fineness);
    CHECK(e.epsilon > 0.0);
    // the optimality gap lower bound never exceeds the estimate
    CHECK(e.optimality_gap_lb <= e.epsilon + 1e-12);
}

TEST_CASE("estimator symmetry in exhaustive mode") {
    auto a = build_circle(7, 2.0 * M_PI, [](double y) { return 1.0 + 0.4 * std::cos(y); });
    auto b = build_circle(7, 2.0 * M_PI * 1.1);
    auto ab = d_mgh_estimate(a, b);
    auto ba = d_mgh_estimate(b, a);
    CHECK(std::abs(ab.epsilon - ba.epsilon) < 1e-12);
}

TEST_CASE("factor-2 almost triangle inequality on random perturbed circles") {
    std::mt19937 rng(2024);
    for (int trial = 0; trial < 20; ++trial) {
        auto A = perturbed_circle(7, rng);
        auto B = perturbed_circle(7, rng);
        auto C = perturbed_circle(7, rng);
        auto ab = d_mgh_estimate(A, B);
        auto ac = d_mgh_estimate(A, C);
        auto cb = d_mgh_estimate(C, B);
        auto rep = almost_triangle_check(ab, ac, cb);
        CHECK(rep.holds);
        CHECK(rep.lhs == ab.epsilon);
        CHECK(rep.rhs == doctest::Approx(2.0 * (ac.epsilon + cb.epsilon)).epsilon(1e-12));
    }
    // degenerate triple: 0 <= 0
    auto A = perturbed_circle(7, rng);
    auto aa = d_mgh_estimate(A, A);
    CHECK(almost_triangle_check(aa, aa, aa).holds);
    // C = A: d(A,B) <= 2 d(A,B) always
    auto B = perturbed_circle(7, rng);
    auto ab = d_mgh_estimate(A, B);
    CHECK(almost_triangle_check(ab, aa, ab).holds);
}

TEST_CASE("refinement: doubling matched nets does not blow up the estimate") {
    const double L2 = 2.0 * M_PI * 1.08;
    auto c6 = d_mgh_estimate(build_circle(6, 2.0 * M_PI), build_circle(6, L2));
    auto c12 = d_mgh_estimate(build_circle(12, 2.0 * M_PI), build_circle(12, L2));
    const double fineness = L2 / 12.0;
    CHECK(c12.epsilon <= c6.epsilon + fineness + 1e-12);
}

TEST_CASE("greedy mode with warm start recovers the identity on equal nets") {
    auto s = build_circle(24, 2.0 * M_PI, [](double y) { return 2.0 + std::cos(y); });
    auto A = net_from_space(s);
    std::vector<int> ident(24);
    std::iota(ident.begin(), ident.end(), 0);
    auto e = d_mgh_estimate(A, A, 8, &ident, &ident);
    CHECK(e.epsilon == 0.0);
}

TEST_CASE("subnet restriction renormalizes weights and keeps the metric") {
    auto s = build_circle(16, 2.0 * M_PI, [](double y) { return 1.0 + 0.5 * std::sin(y); });
    auto A = net_from_space(s);
    std::vector<int> idx{0, 2, 4, 6, 8, 10, 12, 14};
    auto S = subnet(A, idx);
    CHECK(S.weights.sum() == doctest::Approx(1.0).epsilon(1e-12));
    for (size_t i = 0; i < idx.size(); ++i)
        for (size_t j = 0; j < idx.size(); ++j)
            CHECK(S.dist(int(i), int(j)) == A.dist(idx[i], idx[j]));
    CHECK(idx[S.base] == A.base);
    // a subnet of itself at full index set is the same net
    std::vector<int> all(16);
    std::iota(all.begin(), all.end(), 0);
    auto F = subnet(A, all);
    CHECK((F.dist - A.dist).cwiseAbs().maxCoeff() == 0.0);
    CHECK(F.base == A.base);
}
