#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "heatbc/space.hpp"

namespace heatbc {

/// A finite pointed metric-measure net: all the mgh estimator needs.
struct MetricMeasureNet {
    Eigen::MatrixXd dist;    // symmetric, zero diagonal
    Eigen::VectorXd weights; // probability masses
    int base = 0;
};

inline MetricMeasureNet net_from_space(const DiscreteSpace& s) {
    MetricMeasureNet n;
    n.dist = distance_matrix(s);
    n.weights = s.weights;
    n.base = s.base_point;
    return n;
}

/// Subsampled net: rows/cols restricted to `idx`, weights renormalized,
/// base moved to the nearest retained point.
inline MetricMeasureNet subnet(const MetricMeasureNet& n, const std::vector<int>& idx) {
    MetricMeasureNet out;
    const int m = int(idx.size());
    out.dist.resize(m, m);
    out.weights.resize(m);
    for (int i = 0; i < m; ++i) {
        out.weights(i) = n.weights(idx[i]);
        for (int j = 0; j < m; ++j) out.dist(i, j) = n.dist(idx[i], idx[j]);
    }
    out.weights /= out.weights.sum();
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < m; ++i)
        if (n.dist(n.base, idx[i]) < best) {
            best = n.dist(n.base, idx[i]);
            out.base = i;
        }
    return out;
}

/// Upper estimate of the pointed measured Gromov-Hausdorff distance with the
/// witnessing correspondence maps.
struct MghEstimate {
    double epsilon = 0.0;
    std::vector<int> map_fwd; // psi : A -> B
    std::vector<int> map_bwd; // psi': B -> A
    double distortion = 0.0;
    double measure_defect = 0.0;
    double base_defect = 0.0;
    double optimality_gap_lb = 0.0; // trivial lower bound on the true distance
};

namespace detail {

/// Smallest eps so that mu_B(N_eps(img)) >= mass_A - eps, for one Borel ball.
inline double ball_eps(const Eigen::MatrixXd& dB, const Eigen::VectorXd& wB,
                       const std::vector<int>& img, double mass_A) {
    const int n = int(dB.rows());
    std::vector<std::pair<double, double>> byd(n); // (distance to img, weight)
    for (int v = 0; v < n; ++v) {
        double dv = std::numeric_limits<double>::infinity();
        for (int u : img) dv = std::min(dv, dB(v, u));
        byd[v] = {dv, wB(v)};
    }
    std::sort(byd.begin(), byd.end());
    double cum = 0.0;
    double best = std::numeric_limits<double>::infinity();
    for (int k = 0; k < n; ++k) {
        cum += byd[k].second;
        // weights are probability masses: deficits at round-off scale are
        // summation-order noise, not a measure defect
        double deficit = mass_A - cum;
        if (deficit < 1e-12) deficit = 0.0;
        const double eps_here = std::max(byd[k].first, deficit);
        best = std::min(best, eps_here);
        if (cum >= mass_A) break;
    }
    return std::max(best, 0.0);
}

/// Measure component of epsilon for a one-directional map psi : A -> B,
/// Borel family = all metric balls of A.
inline double measure_eps(const MetricMeasureNet& A, const MetricMeasureNet& B,
                          const std::vector<int>& psi) {
    const int n = int(A.dist.rows());
    double worst = 0.0;
    for (int c = 0; c < n; ++c) {
        std::vector<std::pair<double, int>> byd(n);
        for (int v = 0; v < n; ++v) byd[v] = {A.dist(c, v), v};
        std::sort(byd.begin(), byd.end());
        double mass = 0.0;
        std::vector<int> img;
        for (int k = 0; k < n; ++k) {
            mass += A.weights(byd[k].second);
            img.push_back(psi[byd[k].second]);
            // skip duplicate radii: same ball
            if (k + 1 < n && byd[k + 1].first - byd[k].first < 1e-12) continue;
            worst = std::max(worst, ball_eps(B.dist, B.weights, img, mass));
        }
    }
    return worst;
}

struct MapEval {
    double epsilon, distortion, measure, base;
};

inline MapEval evaluate_maps(const MetricMeasureNet& A, const MetricMeasureNet& B,
                             const std::vector<int>& psi, const std::vector<int>& psi_b) {
    const int nA = int(A.dist.rows()), nB = int(B.dist.rows());
    MapEval e{0, 0, 0, 0};
    for (int i = 0; i < nA; ++i)
        for (int j = i + 1; j < nA; ++j)
            e.distortion = std::max(e.distortion,
                                    std::abs(A.dist(i, j) - B.dist(psi[i], psi[j])));
    for (int i = 0; i < nB; ++i)
        for (int j = i + 1; j < nB; ++j)
            e.distortion = std::max(e.distortion,
                                    std::abs(B.dist(i, j) - A.dist(psi_b[i], psi_b[j])));
    for (int i = 0; i < nA; ++i)
        e.distortion = std::max(e.distortion, A.dist(i, psi_b[psi[i]]));
    for (int j = 0; j < nB; ++j)
        e.distortion = std::max(e.distortion, B.dist(j, psi[psi_b[j]]));
    e.base = std::max(B.dist(psi[A.base], B.base), A.dist(psi_b[B.base], A.base));
    e.measure = std::max(measure_eps(A, B, psi), measure_eps(B, A, psi_b));
    e.epsilon = std::max({e.distortion, e.base, e.measure});
    return e;
}

inline std::vector<int> inverse_perm(const std::vector<int>& p) {
    std::vector<int> inv(p.size());
    for (size_t i = 0; i < p.size(); ++i) inv[p[i]] = int(i);
    return inv;
}

/// Structure signature for greedy matching: sorted distance profile,
/// weight, distance to base.
inline std::vector<int> greedy_map(const MetricMeasureNet& A, const MetricMeasureNet& B) {
    const int nA = int(A.dist.rows()), nB = int(B.dist.rows());
    auto profile = [](const MetricMeasureNet& X, int i) {
        std::vector<double> p(X.dist.rows());
        for (int j = 0; j < X.dist.rows(); ++j) p[j] = X.dist(i, j);
        std::sort(p.begin(), p.end());
        return p;
    };
    std::vector<std::vector<double>> pB(nB);
    for (int j = 0; j < nB; ++j) pB[j] = profile(B, j);
    std::vector<int> psi(nA);
    std::vector<char> used(nB, 0);
    const bool bijective = nA == nB;
    // assign points in order of distance from the base
    std::vector<int> order(nA);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return A.dist(A.base, a) < A.dist(A.base, b); });
    for (int i : order) {
        auto pa = profile(A, i);
        double best = std::numeric_limits<double>::infinity();
        int arg = 0;
        for (int j = 0; j < nB; ++j) {
            if (bijective && used[j]) continue;
            double cost = std::abs(A.dist(A.base, i) - B.dist(B.base, j)) +
                          2.0 * std::abs(A.weights(i) - B.weights(j)) * nA;
            const size_t m = std::min(pa.size(), pB[j].size());
            double acc = 0.0;
            for (size_t k = 0; k < m; ++k) acc += std::abs(pa[k] - pB[j][k]);
            cost += acc / double(m);
            if (cost < best) {
                best = cost;
                arg = j;
            }
        }
        psi[i] = arg;
        used[arg] = 1;
    }
    return psi;
}

} // namespace detail

inline MghEstimate d_mgh_estimate(const MetricMeasureNet& A, const MetricMeasureNet& B,
                                  int exhaustive_limit = 8,
                                  const std::vector<int>* warm_fwd = nullptr,
                                  const std::vector<int>* warm_bwd = nullptr) {
    if (A.weights.size() == 0 || B.weights.size() == 0)
        throw std::invalid_argument("d_mgh_estimate: missing weights");
    const int nA = int(A.dist.rows()), nB = int(B.dist.rows());
    const double diamA = A.dist.maxCoeff(), diamB = B.dist.maxCoeff();

    MghEstimate best;
    best.epsilon = std::numeric_limits<double>::infinity();
    best.optimality_gap_lb = 0.5 * std::abs(diamA - diamB);
    auto consider = [&](const std::vector<int>& psi, const std::vector<int>& psi_b) {
        const auto e = detail::evaluate_maps(A, B, psi, psi_b);
        if (e.epsilon < best.epsilon) {
            best.epsilon = e.epsilon;
            best.map_fwd = psi;
            best.map_bwd = psi_b;
            best.distortion = e.distortion;
            best.measure_defect = e.measure;
            best.base_defect = e.base;
        }
    };

    if (nA == nB && nA <= exhaustive_limit) {
        // exhaustive over bijections with distortion pruning
        std::vector<int> psi(nA, -1);
        std::vector<char> used(nB, 0);
        std::function<void(int, double)> rec = [&](int i, double dis) {
            if (dis >= best.epsilon) return;
            if (i == nA) {
                consider(psi, detail::inverse_perm(psi));
                return;
            }
            for (int j = 0; j < nB; ++j) {
                if (used[j]) continue;
                double d2 = dis;
                for (int k = 0; k < i && d2 < best.epsilon; ++k)
                    d2 = std::max(d2, std::abs(A.dist(i, k) - B.dist(j, psi[k])));
                if (d2 >= best.epsilon) continue;
                psi[i] = j;
                used[j] = 1;
                rec(i + 1, d2);
                used[j] = 0;
            }
            psi[i] = -1;
        };
        // seed with the greedy map so pruning has a finite bound
        auto seed = detail::greedy_map(A, B);
        consider(seed, detail::inverse_perm(seed));
        if (warm_fwd && warm_bwd) consider(*warm_fwd, *warm_bwd);
        rec(0, 0.0);
        return best;
    }

    // greedy + local 2-swap refinement
    auto psi = detail::greedy_map(A, B);
    auto psi_b = detail::greedy_map(B, A);
    if (nA == nB) psi_b = detail::inverse_perm(psi);
    consider(psi, psi_b);
    if (warm_fwd && warm_bwd && int(warm_fwd->size()) == nA && int(warm_bwd->size()) == nB)
        consider(*warm_fwd, *warm_bwd);
    if (nA == nB) {
        auto cur = best.map_fwd;
        for (int pass = 0; pass < 2; ++pass) {
            bool improved = false;
            for (int i = 0; i < nA; ++i)
                for (int j = i + 1; j < nA; ++j) {
                    std::swap(cur[i], cur[j]);
                    const double before = best.epsilon;
                    consider(cur, detail::inverse_perm(cur));
                    if (best.epsilon < before) improved = true;
                    else std::swap(cur[i], cur[j]);
                }
            cur = best.map_fwd;
            if (!improved) break;
        }
        best.optimality_gap_lb = 0.5 * std::abs(diamA - diamB);
    }
    return best;
}

inline MghEstimate d_mgh_estimate(const DiscreteSpace& A, const DiscreteSpace& B,
                                  int exhaustive_limit = 8) {
    return d_mgh_estimate(net_from_space(A), net_from_space(B), exhaustive_limit);
}

/// Factor-2 almost-triangle inequality with declared search slack.
struct TriangleReport {
    double lhs = 0.0;
    double rhs = 0.0;
    bool holds = false;
};

inline TriangleReport almost_triangle_check(const MghEstimate& ab, const MghEstimate& ac,
                                            const MghEstimate& cb, double slack = 0.0) {
    TriangleReport r;
    r.lhs = ab.epsilon;
    r.rhs = 2.0 * (ac.epsilon + cb.epsilon) + slack;
    r.holds = r.lhs <= r.rhs + 1e-12;
    return r;
}

} // namespace heatbc
