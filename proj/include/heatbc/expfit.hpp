#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <vector>

namespace heatbc {

/// Decaying-exponential sum fitting: g(t) = sum_j c_j exp(-lambda_j t).

/// ESPRIT / matrix-pencil estimate of the rates from uniformly spaced
/// samples g(t0 + k*dt), k = 0..m-1. Returns nonnegative rates sorted
/// ascending; the model order is chosen by the Hankel singular-value gap.
inline std::vector<double> esprit(const Eigen::VectorXd& samples, double dt, int max_order,
                                  double rank_tol = 1e-10) {
    const int m = int(samples.size());
    if (m < 4) throw std::invalid_argument("esprit: need at least 4 samples");
    const int L = m / 2;
    const int rows = m - L;
    Eigen::MatrixXd Hk(rows, L);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < L; ++j) Hk(i, j) = samples(i + j);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(Hk, Eigen::ComputeThinU);
    const auto& sv = svd.singularValues();
    int r = 0;
    while (r < sv.size() && r < max_order && sv(r) > rank_tol * sv(0)) ++r;
    if (r == 0) return {};
    Eigen::MatrixXd U = svd.matrixU().leftCols(r);
    Eigen::MatrixXd U0 = U.topRows(rows - 1);
    Eigen::MatrixXd U1 = U.bottomRows(rows - 1);
    Eigen::MatrixXd F = (U0.transpose() * U0).ldlt().solve(U0.transpose() * U1);
    Eigen::EigenSolver<Eigen::MatrixXd> es(F);
    std::vector<double> rates;
    for (int k = 0; k < r; ++k) {
        const std::complex<double> z = es.eigenvalues()(k);
        // decaying real exponentials: z real in (0, 1]
        if (std::abs(z.imag()) > 1e-6 * (1.0 + std::abs(z.real()))) continue;
        const double zr = z.real();
        if (zr <= 0 || zr > 1.0 + 1e-9) continue;
        rates.push_back(std::max(0.0, -std::log(std::min(zr, 1.0)) / dt));
    }
    std::sort(rates.begin(), rates.end());
    return rates;
}

/// Least-squares amplitudes for fixed rates on an arbitrary time grid.
inline Eigen::VectorXd exp_amplitudes(const std::vector<double>& rates,
                                      const Eigen::VectorXd& times,
                                      const Eigen::VectorXd& samples) {
    const int L = int(times.size()), r = int(rates.size());
    Eigen::MatrixXd E(L, r);
    for (int l = 0; l < L; ++l)
        for (int j = 0; j < r; ++j) E(l, j) = std::exp(-rates[j] * times(l));
    return E.colPivHouseholderQr().solve(samples);
}

/// Variable-projection refinement of shared rates against a whole family of
/// signals Y (rows = time points, cols = signals): minimizes
/// sum_c || y_c - E(lambda) a_c ||^2 = tr(S) - tr(Q^T S Q), S = Y Y^T,
/// Q = orth(E). Gauss-Newton on lambda with numerical Jacobian of the
/// residual energy gradient; backtracking line search.
inline std::vector<double> varpro_refine(std::vector<double> rates, const Eigen::VectorXd& times,
                                         const Eigen::MatrixXd& Y, int max_iter = 200) {
    const int L = int(times.size());
    const int r = int(rates.size());
    if (r == 0) return rates;
    Eigen::MatrixXd S = Y * Y.transpose();
    const double trS = S.trace();
    auto objective = [&](const std::vector<double>& lam) {
        Eigen::MatrixXd E(L, r);
        for (int l = 0; l < L; ++l)
            for (int j = 0; j < r; ++j) E(l, j) = std::exp(-lam[j] * times(l));
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(E);
        Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(L, r);
        return trS - (Q.transpose() * S * Q).trace();
    };
    double f0 = objective(rates);
    for (int it = 0; it < max_iter; ++it) {
        // numerical gradient and diagonal curvature
        std::vector<double> g(r), hdiag(r);
        bool tiny = true;
        for (int j = 0; j < r; ++j) {
            const double step = std::max(1e-7 * std::max(rates[j], 1.0), 1e-9);
            auto lp = rates, lm = rates;
            lp[j] += step;
            lm[j] -= step;
            const double fp = objective(lp), fm = objective(lm);
            g[j] = (fp - fm) / (2 * step);
            hdiag[j] = std::max((fp - 2 * f0 + fm) / (step * step), 1e-18);
            if (std::abs(g[j]) > 1e-14 * (1.0 + std::abs(f0))) tiny = false;
        }
        if (tiny) break;
        // Newton-like step, capped so a near-flat curvature cannot blow it up
        std::vector<double> step(r);
        for (int j = 0; j < r; ++j) {
            step[j] = g[j] / hdiag[j];
            const double cap = 0.25 * std::max(rates[j], 1.0);
            if (std::abs(step[j]) > cap) step[j] = (step[j] > 0 ? cap : -cap);
        }
        double alpha = 1.0;
        bool moved = false;
        for (int ls = 0; ls < 30; ++ls) {
            auto trial = rates;
            for (int j = 0; j < r; ++j) {
                trial[j] -= alpha * step[j];
                if (trial[j] < 0) trial[j] = 0;
            }
            const double ft = objective(trial);
            if (ft < f0) {
                rates = trial;
                f0 = ft;
                moved = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!moved) break;
    }
    std::sort(rates.begin(), rates.end());
    return rates;
}

} // namespace heatbc
