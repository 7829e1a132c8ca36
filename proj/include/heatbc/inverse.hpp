#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "heatbc/expfit.hpp"
#include "heatbc/phd.hpp"
#include "heatbc/spectral.hpp"

namespace heatbc {

/// Recovered eigenvalues and eigenfunction restrictions to a net Omega,
/// known only up to a per-eigenspace orthogonal gauge. The absolute
/// measure-normalization constant c0 is never recovered.
struct LocalSpectralData {
    std::vector<int> omega;          // net vertex indices z_alpha
    Eigen::VectorXd eigenvalues;     // per mode, nondecreasing, length J
    std::vector<int> cluster_start;  // first mode index of each eigenvalue cluster
    std::vector<int> multiplicities; // cluster sizes
    Eigen::MatrixXd phi_values;      // N x J, phi_j(z_alpha)
    Eigen::VectorXd quadrature;      // fitted net masses q_alpha (empty until fitted)
    std::string gauge;               // description of the gauge fixing applied
    std::string truncation_report;   // nonempty if only a spectrum prefix was resolvable
    int dim_estimate = 0;
    bool c0_known = false;

    int mode_count() const { return int(eigenvalues.size()); }
    int net_size() const { return int(omega.size()); }
};

// ---------------------------------------------------------------------------
// gauge canonicalization
// ---------------------------------------------------------------------------

namespace detail {

/// Fix the sign of each column by a generic weighted sum (stable even when
/// two entries tie in magnitude); falls back to the largest-magnitude entry.
inline void fix_signs(Eigen::MatrixXd& M) {
    const int N = int(M.rows());
    Eigen::VectorXd w(N);
    for (int a = 0; a < N; ++a) w(a) = 1.0 + 0.618033988749895 * (a + 1) / N;
    for (int j = 0; j < M.cols(); ++j) {
        const double s = w.dot(M.col(j));
        if (std::abs(s) > 1e-6 * M.col(j).norm()) {
            if (s < 0) M.col(j) = -M.col(j);
        } else {
            int imax = 0;
            M.col(j).cwiseAbs().maxCoeff(&imax);
            if (M(imax, j) < 0) M.col(j) = -M.col(j);
        }
    }
}

} // namespace detail

/// Replace the eigenfunction basis inside each eigenvalue cluster by a
/// canonical one computed from gauge-invariant residue matrices
/// R = Phi Phi^T. Near-degenerate residue eigenvalues are disambiguated by a
/// second invariant (the residue weighted by a fixed increasing net profile).
/// Any block-orthogonal rotation of the input yields the same output.
inline LocalSpectralData canonical_gauge(const LocalSpectralData& in) {
    LocalSpectralData out = in;
    const int N = in.net_size();
    for (size_t c = 0; c < in.cluster_start.size(); ++c) {
        const int j0 = in.cluster_start[c];
        const int m = in.multiplicities[c];
        Eigen::MatrixXd Phi = in.phi_values.middleCols(j0, m);
        if (m == 1) {
            Eigen::MatrixXd col = Phi;
            detail::fix_signs(col);
            out.phi_values.col(j0) = col;
            continue;
        }
        Eigen::MatrixXd R = Phi * Phi.transpose();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(R);
        // top-m eigenpairs, descending
        Eigen::VectorXd theta(m);
        Eigen::MatrixXd U(N, m);
        for (int k = 0; k < m; ++k) {
            theta(k) = es.eigenvalues()(N - 1 - k);
            U.col(k) = es.eigenvectors().col(N - 1 - k);
        }
        // disambiguate near-equal theta groups with a second gauge invariant:
        // the residue weighted by a fixed strictly increasing net profile,
        // Phi diag(w) Phi^T, which stays separated even on symmetric nets
        const double tmax = std::max(theta(0), 1e-300);
        Eigen::VectorXd wprof(N);
        for (int a = 0; a < N; ++a) wprof(a) = 1.0 + 0.618033988749895 * (a + 1) / N;
        int g0 = 0;
        while (g0 < m) {
            int g1 = g0 + 1;
            while (g1 < m && std::abs(theta(g1) - theta(g1 - 1)) < 1e-6 * tmax) ++g1;
            if (g1 - g0 > 1) {
                Eigen::MatrixXd Ug = U.middleCols(g0, g1 - g0);
                Eigen::MatrixXd B = Ug.transpose() * wprof.asDiagonal() * Ug;
                Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> esb(0.5 * (B + B.transpose()));
                U.middleCols(g0, g1 - g0) = Ug * esb.eigenvectors();
            }
            g0 = g1;
        }
        Eigen::MatrixXd Canon(N, m);
        for (int k = 0; k < m; ++k) Canon.col(k) = std::sqrt(std::max(theta(k), 0.0)) * U.col(k);
        detail::fix_signs(Canon);
        out.phi_values.middleCols(j0, m) = Canon;
    }
    out.gauge = "canonical: residue-matrix eigenbasis, weighted-residue tie break, positive max entry";
    return out;
}

// ---------------------------------------------------------------------------
// quadrature from mass-orthonormality
// ---------------------------------------------------------------------------

/// Net masses q_alpha from least squares on
/// sum_alpha q_alpha phi(z_alpha) phi(z_alpha)^T = Identity.
inline Eigen::VectorXd quadrature_from_orthonormality(const LocalSpectralData& lsd) {
    const int N = lsd.net_size();
    const int J = lsd.mode_count();
    const int rows = J * (J + 1) / 2;
    Eigen::MatrixXd A(rows, N);
    Eigen::VectorXd b(rows);
    int r = 0;
    const double s2 = std::sqrt(2.0);
    for (int j = 0; j < J; ++j)
        for (int k = j; k < J; ++k) {
            const double w = (j == k) ? 1.0 : s2;
            for (int a = 0; a < N; ++a)
                A(r, a) = w * lsd.phi_values(a, j) * lsd.phi_values(a, k);
            b(r) = (j == k) ? 1.0 : 0.0;
            ++r;
        }
    return A.colPivHouseholderQr().solve(b);
}

// ---------------------------------------------------------------------------
// PHD -> LSD: exponential-sum fitting
// ---------------------------------------------------------------------------

namespace detail {

/// Locate the longest uniformly spaced prefix of the time net.
inline int uniform_head_length(const std::vector<double>& t) {
    if (t.size() < 3) return int(t.size());
    const double dt = t[1] - t[0];
    size_t k = 1;
    while (k + 1 < t.size() && std::abs((t[k + 1] - t[k]) - dt) < 1e-9 * (1.0 + dt)) ++k;
    return int(k + 1);
}

} // namespace detail

inline LocalSpectralData fit_spectral_data(const PointHeatData& data, int K_max) {
    const int N = int(data.net_points.size());
    const int L = int(data.times.size());
    if (N < 1 || L < 8) throw std::invalid_argument("fit_spectral_data: too little data");

    // trace signal on the uniform head -> matrix-pencil pole estimates
    const int Lh = detail::uniform_head_length(data.times);
    const double dt = data.times[1] - data.times[0];
    Eigen::VectorXd trace(Lh);
    for (int l = 0; l < Lh; ++l) trace(l) = data.values[l].trace();
    std::vector<double> rates = esprit(trace, dt, K_max, 1e-11);
    if (rates.empty()) throw std::runtime_error("fit_spectral_data: no poles resolvable");
    if (rates.front() > 1e-6) rates.insert(rates.begin(), 0.0);

    // variable-projection refinement of shared poles on the full time net
    const int P = N * (N + 1) / 2;
    Eigen::VectorXd times(L);
    for (int l = 0; l < L; ++l) times(l) = data.times[l];
    Eigen::MatrixXd Y(L, P);
    {
        int p = 0;
        for (int a = 0; a < N; ++a)
            for (int b = a; b < N; ++b, ++p)
                for (int l = 0; l < L; ++l) Y(l, p) = data.values[l](a, b);
    }
    rates = varpro_refine(rates, times, Y);

    // drop rates past the conditioning limit of the design matrix
    std::string report;
    while (rates.size() > 1) {
        const int r = int(rates.size());
        Eigen::MatrixXd E(L, r);
        for (int l = 0; l < L; ++l)
            for (int j = 0; j < r; ++j) E(l, j) = std::exp(-rates[j] * times(l));
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(E);
        if (svd.singularValues()(r - 1) > 1e-13 * svd.singularValues()(0)) break;
        report = "dropped pole " + std::to_string(rates.back()) +
                 " (design matrix numerically rank deficient); resolvable prefix returned";
        rates.pop_back();
    }
    const int r = int(rates.size());

    // residue matrices by linear least squares, shared design matrix,
    // alternated with a separable Gauss-Newton polish of each rate: data
    // that are an exact exponential sum converge to machine precision
    Eigen::MatrixXd E(L, r);
    Eigen::MatrixXd Amp(r, P), Res(L, P);
    double fit_resid = 0.0; // worst per-signal relative misfit (diagnostic)
    double sq_resid = 0.0;  // Frobenius objective driving the polish
    auto refit_amplitudes = [&]() {
        for (int l = 0; l < L; ++l)
            for (int j = 0; j < r; ++j) E(l, j) = std::exp(-rates[j] * times(l));
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(E);
        Amp = qr.solve(Y);
        Res = E * Amp - Y;
        sq_resid = Res.squaredNorm();
        fit_resid = 0.0;
        for (int p = 0; p < P; ++p)
            fit_resid = std::max(fit_resid,
                                 Res.col(p).norm() / std::max(Y.col(p).norm(), 1e-12));
    };
    refit_amplitudes();
    for (int round = 0; round < 60 && fit_resid > 1e-13; ++round) {
        // joint Gauss-Newton step on all rates, Levenberg damping implicit
        // in the backtracking: H = 2 (W^T W) o (Amp Amp^T), o = Hadamard
        Eigen::MatrixXd W(L, r);
        for (int l = 0; l < L; ++l)
            for (int j = 0; j < r; ++j) W(l, j) = times(l) * std::exp(-rates[j] * times(l));
        const Eigen::MatrixXd S = Res * Amp.transpose(); // L x r
        Eigen::VectorXd g(r);
        for (int j = 0; j < r; ++j) g(j) = -2.0 * W.col(j).dot(S.col(j));
        Eigen::MatrixXd H =
            2.0 * (W.transpose() * W).cwiseProduct(Amp * Amp.transpose());
        for (int j = 0; j < r; ++j) H(j, j) += 1e-12 * std::max(H(j, j), 1.0);
        Eigen::VectorXd step = H.ldlt().solve(g);
        for (int j = 0; j < r; ++j) {
            const double cap = 0.25 * std::max(rates[j], 1.0);
            if (std::abs(step(j)) > cap) step(j) = (step(j) > 0 ? cap : -cap);
        }
        const std::vector<double> saved = rates;
        const double resid0 = sq_resid;
        double alpha = 1.0;
        bool moved = false;
        for (int ls = 0; ls < 12; ++ls) {
            for (int j = 0; j < r; ++j)
                rates[j] = std::max(saved[j] - alpha * step(j), 0.0);
            std::sort(rates.begin(), rates.end());
            refit_amplitudes();
            if (sq_resid < resid0) {
                moved = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!moved) {
            rates = saved;
            refit_amplitudes();
            break;
        }
    }
    std::vector<Eigen::MatrixXd> R(r, Eigen::MatrixXd::Zero(N, N));
    {
        int p = 0;
        for (int a = 0; a < N; ++a)
            for (int b = a; b < N; ++b, ++p)
                for (int j = 0; j < r; ++j) {
                    R[j](a, b) = Amp(j, p);
                    R[j](b, a) = Amp(j, p);
                }
    }

    // cluster poles with relative gap < 1e-4 and sum their residues
    std::vector<double> clam;
    std::vector<Eigen::MatrixXd> cres;
    for (int j = 0; j < r; ++j) {
        if (!clam.empty() && rates[j] - clam.back() < 1e-4 * std::max(1.0, clam.back())) {
            cres.back() += R[j];
        } else {
            clam.push_back(rates[j]);
            cres.push_back(R[j]);
        }
    }
    // when the data are not an exact exponential sum, the largest pole
    // absorbs the unresolved spectral tail; return the resolvable prefix
    if (fit_resid > 1e-8 && clam.size() > 1) {
        if (!report.empty()) report += "; ";
        report += "pole " + std::to_string(clam.back()) +
                  " absorbed the unresolved spectral tail and was dropped";
        clam.pop_back();
        cres.pop_back();
    }

    // rank of each residue matrix by eigenvalue gap; factor phi = sqrt(theta) u
    LocalSpectralData lsd;
    lsd.omega = data.net_points;
    std::vector<double> lams;
    std::vector<Eigen::VectorXd> cols;
    for (size_t c = 0; c < clam.size(); ++c) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (cres[c] + cres[c].transpose()));
        std::vector<double> theta;
        for (int k = N - 1; k >= 0; --k) theta.push_back(es.eigenvalues()(k));
        int m = 1;
        while (m < N && theta[m] > theta[0] / 30.0 && theta[m] > 0) ++m;
        lsd.cluster_start.push_back(int(lams.size()));
        lsd.multiplicities.push_back(m);
        for (int k = 0; k < m; ++k) {
            lams.push_back(clam[c] < 1e-8 ? 0.0 : clam[c]);
            cols.push_back(std::sqrt(std::max(theta[k], 0.0)) *
                           es.eigenvectors().col(N - 1 - k));
        }
    }
    const int J = int(lams.size());
    lsd.eigenvalues.resize(J);
    lsd.phi_values.resize(N, J);
    for (int j = 0; j < J; ++j) {
        lsd.eigenvalues(j) = lams[j];
        lsd.phi_values.col(j) = cols[j];
    }
    lsd.truncation_report = report;
    LocalSpectralData out = canonical_gauge(lsd);
    out.quadrature = quadrature_from_orthonormality(out);
    return out;
}

/// Ground-truth LSD from a forward eigensolve, for oracle comparisons: the
/// same data a perfect fit would deliver, in the same canonical gauge.
inline LocalSpectralData lsd_from_spectral(const SpectralData& spec, const std::vector<int>& net,
                                           int J) {
    if (J > spec.mode_count) throw std::invalid_argument("lsd_from_spectral: J too large");
    LocalSpectralData lsd;
    lsd.omega = net;
    lsd.eigenvalues = spec.eigenvalues.head(J);
    lsd.phi_values.resize(int(net.size()), J);
    for (size_t a = 0; a < net.size(); ++a)
        lsd.phi_values.row(int(a)) = spec.eigenvectors.row(net[a]).head(J);
    int j = 0;
    while (j < J) {
        int k = j + 1;
        while (k < J && std::abs(lsd.eigenvalues(k) - lsd.eigenvalues(j)) <
                            1e-6 * std::max(1.0, lsd.eigenvalues(j)))
            ++k;
        lsd.cluster_start.push_back(j);
        lsd.multiplicities.push_back(k - j);
        j = k;
    }
    LocalSpectralData out = canonical_gauge(lsd);
    out.quadrature = quadrature_from_orthonormality(out);
    return out;
}

// ---------------------------------------------------------------------------
// dimension detection and charts
// ---------------------------------------------------------------------------

namespace detail {

/// Multivariate monomial exponents up to total degree `deg` in `d` variables.
inline std::vector<std::vector<int>> monomials(int d, int deg) {
    std::vector<std::vector<int>> out;
    std::vector<int> cur(d, 0);
    std::function<void(int, int)> rec = [&](int pos, int left) {
        if (pos == d) {
            out.push_back(cur);
            return;
        }
        for (int e = 0; e <= left; ++e) {
            cur[pos] = e;
            rec(pos + 1, left - e);
        }
        cur[pos] = 0;
    };
    rec(0, deg);
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        const int sa = std::accumulate(a.begin(), a.end(), 0);
        const int sb = std::accumulate(b.begin(), b.end(), 0);
        return sa != sb ? sa < sb : a < b;
    });
    return out;
}

} // namespace detail

/// Smallest d such that, at a majority of net points, some d-tuple of
/// recovered eigenfunctions has a numerically full-rank local differential
/// and the remaining eigenfunctions factor through the tuple (low-degree
/// polynomial regression on neighbor differences). Modes oscillating faster
/// than the local net spacing are excluded point by point.
inline int detect_dimension(const LocalSpectralData& lsd, int knn = 8, double tol = 0.2) {
    const int N = lsd.net_size();
    const int m = std::min(lsd.mode_count() - 1, 12);
    if (N < 6 || m < 1) throw std::invalid_argument("detect_dimension: net too small");
    Eigen::MatrixXd emb = lsd.phi_values.middleCols(1, m);
    Eigen::VectorXd amp(m);
    for (int j = 0; j < m; ++j) amp(j) = 0.5 * (emb.col(j).maxCoeff() - emb.col(j).minCoeff());
    const auto mono1 = detail::monomials(1, 3), mono2 = detail::monomials(2, 2),
               mono3 = detail::monomials(3, 2);
    std::vector<int> votes;
    for (int a = 0; a < N; ++a) {
        std::vector<std::pair<double, int>> dd;
        for (int b = 0; b < N; ++b)
            if (b != a) dd.push_back({(emb.row(b) - emb.row(a)).norm(), b});
        std::sort(dd.begin(), dd.end());
        // shrink the neighborhood until at least one mode varies by less
        // than its global amplitude across it
        int k = 0;
        std::vector<int> pool;
        for (int ktry : {knn, 6, 5}) {
            k = std::min(ktry, int(dd.size()));
            pool.clear();
            for (int j = 0; j < m; ++j) {
                double worst = 0.0;
                for (int i = 0; i < k; ++i)
                    worst = std::max(worst, std::abs(emb(dd[i].second, j) - emb(a, j)));
                if (worst <= amp(j)) pool.push_back(j);
            }
            if (!pool.empty()) break;
        }
        if (pool.empty()) continue;
        const int mp = int(pool.size());
        Eigen::MatrixXd Y(k, mp);
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < mp; ++j) Y(i, j) = emb(dd[i].second, pool[j]) - emb(a, pool[j]);
        int vote = mp;
        for (int d = 1; d <= std::min(3, mp); ++d) {
            const auto& mono = (d == 1) ? mono1 : (d == 2) ? mono2 : mono3;
            std::vector<int> idx(d);
            bool found = false;
            std::function<void(int, int)> rec = [&](int pos, int start) {
                if (found) return;
                if (pos == d) {
                    Eigen::MatrixXd P(k, int(mono.size()) - 1);
                    int c = 0;
                    for (const auto& e : mono) {
                        if (std::accumulate(e.begin(), e.end(), 0) == 0) continue;
                        for (int i = 0; i < k; ++i) {
                            double v = 1.0;
                            for (int q = 0; q < d; ++q) v *= std::pow(Y(i, idx[q]), e[q]);
                            P(i, c) = v;
                        }
                        ++c;
                    }
                    if (k < c + 2) return;
                    Eigen::MatrixXd coef = P.leftCols(c).colPivHouseholderQr().solve(Y);
                    if ((P.leftCols(c) * coef - Y).norm() / Y.norm() < tol) found = true;
                    return;
                }
                for (int j = start; j < mp; ++j) {
                    idx[pos] = j;
                    rec(pos + 1, j + 1);
                }
            };
            rec(0, 0);
            if (found) {
                vote = d;
                break;
            }
        }
        votes.push_back(vote);
    }
    if (votes.empty())
        throw std::runtime_error("detect_dimension: no full-rank direction at any point");
    std::sort(votes.begin(), votes.end());
    return votes[votes.size() / 2];
}

/// An eigenfunction coordinate chart around a net point.
struct Chart {
    int center = 0;                 // net-local index
    std::vector<int> modes;         // eigenfunction indices j_1..j_d
    Eigen::MatrixXd coords;         // N x d chart coordinates for every net point
    double validity_radius = 0.0;   // injectivity radius of the chart map
    std::vector<int> interior;      // net-local indices inside the validity region
    std::vector<int> region;        // net-local indices within the validity radius
};

namespace detail {

/// Minimum singular value of the local Jacobian of the candidate tuple with
/// respect to PCA tangent coordinates at each ball point; returns the worst.
inline double chart_score(const Eigen::MatrixXd& emb, const Eigen::MatrixXd& cand, int d,
                          const std::vector<int>& pts) {
    double worst = std::numeric_limits<double>::infinity();
    const int N = int(emb.rows());
    for (int a : pts) {
        std::vector<std::pair<double, int>> nb;
        for (int b = 0; b < N; ++b)
            if (b != a) nb.push_back({(emb.row(b) - emb.row(a)).norm(), b});
        std::sort(nb.begin(), nb.end());
        const int k = std::min(2 * d + 4, int(nb.size()));
        Eigen::MatrixXd D(k, emb.cols()), C(k, d);
        for (int i = 0; i < k; ++i) {
            D.row(i) = emb.row(nb[i].second) - emb.row(a);
            C.row(i) = cand.row(nb[i].second) - cand.row(a);
        }
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(D, Eigen::ComputeThinU | Eigen::ComputeThinV);
        Eigen::MatrixXd T = D * svd.matrixV().leftCols(d); // tangent coordinates
        Eigen::MatrixXd Jl = T.colPivHouseholderQr().solve(C);
        Eigen::JacobiSVD<Eigen::MatrixXd> sj(Jl);
        worst = std::min(worst, sj.singularValues()(d - 1));
    }
    return worst;
}

} // namespace detail

/// Choose a d-tuple of recovered eigenfunctions forming a coordinate chart
/// around `center`, with the largest radius on which the tuple map stays
/// injective on net points. `dist` (net-local distance matrix) controls the
/// radius bookkeeping; the eigenfunction-embedding metric is used if absent.
inline Chart select_chart(const LocalSpectralData& lsd_in, int center,
                          const Eigen::MatrixXd* dist = nullptr, int mode_budget = 9) {
    LocalSpectralData lsd = canonical_gauge(lsd_in);
    const int d = lsd.dim_estimate > 0 ? lsd.dim_estimate : detect_dimension(lsd);
    const int N = lsd.net_size();
    const int J = std::min(lsd.mode_count() - 1, mode_budget);
    if (J < d) throw std::runtime_error("select_chart: mode budget " + std::to_string(J) +
                                        " below dimension " + std::to_string(d));
    const int m = std::min(lsd.mode_count() - 1, 12);
    Eigen::MatrixXd emb = lsd.phi_values.middleCols(1, m);

    Eigen::MatrixXd D;
    if (dist) D = *dist;
    else {
        D.resize(N, N);
        for (int a = 0; a < N; ++a)
            for (int b = 0; b < N; ++b) D(a, b) = (emb.row(a) - emb.row(b)).norm();
    }
    // local-candidate pool around the center
    std::vector<int> pool;
    {
        std::vector<std::pair<double, int>> byd;
        for (int a = 0; a < N; ++a) byd.push_back({D(center, a), a});
        std::sort(byd.begin(), byd.end());
        for (int i = 0; i < std::min<int>(N, 2 * d + 8); ++i) pool.push_back(byd[i].second);
    }
    // separation scale: typical nearest-neighbor spacing
    std::vector<double> nn;
    for (int a = 0; a < N; ++a) {
        double best = std::numeric_limits<double>::infinity();
        for (int b = 0; b < N; ++b)
            if (b != a) best = std::min(best, D(a, b));
        nn.push_back(best);
    }
    std::sort(nn.begin(), nn.end());
    const double spacing = nn[nn.size() / 2];

    // validity radius of a candidate tuple: largest tested radius around the
    // center on which the tuple map stays injective on net points
    std::vector<double> radii;
    for (int a = 0; a < N; ++a) radii.push_back(D(center, a));
    // extend to the net diameter so a globally injective chart reports a
    // radius beyond the farthest point, not merely up to it
    double diam = 0.0;
    for (int a = 0; a < N; ++a)
        for (int b = 0; b < N; ++b) diam = std::max(diam, D(a, b));
    radii.push_back(diam);
    std::sort(radii.begin(), radii.end());
    auto validity = [&](const Eigen::MatrixXd& cand) {
        // per-point minimum directional chart gradient in the D metric; a
        // fold-over shows up as a pair far apart in D whose chart images sit
        // much closer than the local gradients allow
        Eigen::VectorXd jacD(N);
        for (int a = 0; a < N; ++a) {
            std::vector<std::pair<double, int>> nb;
            for (int b = 0; b < N; ++b)
                if (b != a && D(a, b) > 0) nb.push_back({D(a, b), b});
            std::sort(nb.begin(), nb.end());
            double jmin = std::numeric_limits<double>::infinity();
            for (int i = 0; i < std::min<int>(2 * d + 2, int(nb.size())); ++i)
                jmin = std::min(jmin,
                                (cand.row(nb[i].second) - cand.row(a)).norm() / nb[i].first);
            jacD(a) = jmin;
        }
        double valid = radii.front();
        for (double r : radii) {
            std::vector<int> ball;
            for (int a = 0; a < N; ++a)
                if (D(center, a) <= r + 1e-12) ball.push_back(a);
            bool ok = true;
            for (size_t i = 0; i < ball.size() && ok; ++i)
                for (size_t k = i + 1; k < ball.size() && ok; ++k) {
                    const int u = ball[i], v = ball[k];
                    if (D(u, v) > spacing &&
                        (cand.row(u) - cand.row(v)).norm() <
                            0.6 * std::min(jacD(u), jacD(v)) * D(u, v))
                        ok = false;
                }
            if (!ok) break;
            valid = r;
        }
        return valid;
    };

    // among full-rank d-tuples from modes 1..J, pick the one whose chart map
    // stays injective on the largest ball (score breaks ties)
    std::vector<int> best_tuple;
    double best_score = -1.0, best_valid = -1.0;
    std::vector<int> idx(d);
    std::function<void(int, int)> rec = [&](int pos, int start) {
        if (pos == d) {
            Eigen::MatrixXd cand(N, d);
            for (int j = 0; j < d; ++j) cand.col(j) = lsd.phi_values.col(idx[j]);
            const double sc = detail::chart_score(emb, cand, d, pool);
            if (sc <= 1e-8) return;
            const double v = validity(cand);
            if (v > best_valid + 1e-12 ||
                (v > best_valid - 1e-12 && sc > best_score)) {
                best_valid = v;
                best_score = sc;
                best_tuple.assign(idx.begin(), idx.end());
            }
            return;
        }
        for (int j = start; j <= J; ++j) {
            idx[pos] = j;
            rec(pos + 1, j + 1);
        }
    };
    rec(0, 1);
    if (best_tuple.empty())
        throw std::runtime_error("select_chart: no full-rank tuple within mode budget " +
                                 std::to_string(J));

    Chart ch;
    ch.center = center;
    ch.modes = best_tuple;
    ch.coords.resize(N, d);
    for (int j = 0; j < d; ++j) ch.coords.col(j) = lsd.phi_values.col(best_tuple[j]);
    ch.validity_radius = best_valid;
    for (int a = 0; a < N; ++a) {
        if (D(center, a) <= best_valid + 1e-12) ch.region.push_back(a);
        if (D(center, a) <= 0.85 * best_valid) ch.interior.push_back(a);
    }
    return ch;
}

// ---------------------------------------------------------------------------
// metric / drift / density recovery
// ---------------------------------------------------------------------------

struct MetricDensityResult {
    std::vector<int> points;                 // net-local indices (chart interior)
    std::vector<Eigen::MatrixXd> metric_inv; // recovered h^{jk} per point
    std::vector<Eigen::VectorXd> drift;      // recovered a^j per point
    std::vector<Eigen::VectorXd> dlnrho;     // d(ln rho)/dx^j in chart coordinates
    Eigen::VectorXd rho;                     // normalized density over the chart region
    std::vector<char> flagged;               // singular normal equations, interpolated
    std::map<std::string, double> diagnostics;
};

/// Pointwise least-squares recovery of the inverse metric h^{jk}, drift a^j,
/// and the density gradient, from the eigenfunction equation
/// -h^{jk} d2phi - a^j dphi = lambda phi in chart coordinates, followed by
/// path integration and unit-mass normalization of the density over the
/// chart region.
inline MetricDensityResult recover_metric_density(const LocalSpectralData& lsd_in,
                                                  const Chart& chart, double lambda_cut = 15.0) {
    LocalSpectralData lsd = canonical_gauge(lsd_in);
    const int d = int(chart.coords.cols());
    const int deg = (d == 1) ? 6 : 2;
    std::vector<int> use_modes;
    for (int j = 1; j < lsd.mode_count(); ++j)
        if (lsd.eigenvalues(j) <= lambda_cut) use_modes.push_back(j);
    const int nunk = d * (d + 1) / 2 + d;
    if (int(use_modes.size()) < nunk)
        throw std::invalid_argument("recover_metric_density: not enough modes below cutoff");

    const auto mono = detail::monomials(d, deg);
    const int nb = int(mono.size());
    const int kneib = std::max(nb + 3, (d == 1) ? 14 : nb + 5);

    MetricDensityResult R;
    R.points = chart.interior;
    const int M = int(R.points.size());
    R.metric_inv.assign(M, Eigen::MatrixXd::Zero(d, d));
    R.drift.assign(M, Eigen::VectorXd::Zero(d));
    R.dlnrho.assign(M, Eigen::VectorXd::Zero(d));
    R.flagged.assign(M, 0);

    // Derivatives of every used mode in chart coordinates. Regressing
    // directly against the chart coordinate breaks down near its critical
    // points (the composed functions develop branch-point singularities), so
    // fit everything in local PCA coordinates of the eigenfunction embedding
    // -- well conditioned everywhere -- and chain-rule back to the chart.
    const int P = int(use_modes.size());
    Eigen::MatrixXd emb(chart.coords.rows(), P);
    for (int p = 0; p < P; ++p) emb.col(p) = lsd.phi_values.col(use_modes[p]);
    const int NN = int(emb.rows());
    struct Stencil {
        std::vector<int> rows;
        Eigen::MatrixXd uu;    // local coordinates per stencil row
        Eigen::MatrixXd Xcoef; // polynomial fit of the chart coordinates
        Eigen::MatrixXd A;     // dX/du at the center
        std::vector<Eigen::MatrixXd> HX;
    };
    std::vector<Stencil> sten(NN);
    std::vector<Eigen::MatrixXd> h_all(NN, Eigen::MatrixXd::Zero(d, d));
    std::vector<Eigen::VectorXd> a_all(NN, Eigen::VectorXd::Zero(d));
    std::vector<char> bad(NN, 0);
    double max_fit_resid = 0.0, max_eq_resid = 0.0;
    for (int a = 0; a < NN; ++a) {
        std::vector<std::pair<double, int>> nb_list;
        for (int b = 0; b < int(emb.rows()); ++b)
            if (b != a) nb_list.push_back({(emb.row(b) - emb.row(a)).norm(), b});
        std::sort(nb_list.begin(), nb_list.end());
        const int k = std::min<int>(kneib, int(nb_list.size()));
        std::vector<int> rowspt{a};
        for (int i = 0; i < k; ++i) rowspt.push_back(nb_list[i].second);
        Eigen::MatrixXd diffs(k + 1, P);
        for (int i = 0; i <= k; ++i) diffs.row(i) = emb.row(rowspt[i]) - emb.row(a);
        Eigen::MatrixXd uu; // local coordinates per stencil row
        if (d == 1) {
            // signed chordal arc length along the embedding curve: a tangent
            // projection folds over once the stencil arc starts to bend, the
            // chained polyline parametrization never does
            std::vector<int> chain{0};
            std::vector<char> used(k + 1, 0);
            used[0] = 1;
            auto extend = [&](bool front) {
                const int end = front ? chain.front() : chain.back();
                double best = std::numeric_limits<double>::infinity();
                int arg = -1;
                for (int i = 0; i <= k; ++i)
                    if (!used[i]) {
                        const double dd = (diffs.row(i) - diffs.row(end)).norm();
                        if (dd < best) {
                            best = dd;
                            arg = i;
                        }
                    }
                if (arg < 0) return false;
                used[arg] = 1;
                if (front)
                    chain.insert(chain.begin(), arg);
                else
                    chain.push_back(arg);
                return true;
            };
            // grow alternately from both ends, always taking the closer extension
            while (int(chain.size()) <= k) {
                double df = std::numeric_limits<double>::infinity(),
                       db = std::numeric_limits<double>::infinity();
                for (int i = 0; i <= k; ++i)
                    if (!used[i]) {
                        df = std::min(df, (diffs.row(i) - diffs.row(chain.front())).norm());
                        db = std::min(db, (diffs.row(i) - diffs.row(chain.back())).norm());
                    }
                extend(df <= db);
            }
            uu.setZero(k + 1, 1);
            Eigen::VectorXd s(k + 1);
            s(0) = 0.0;
            for (size_t i = 1; i < chain.size(); ++i)
                s(int(i)) = s(int(i) - 1) + (diffs.row(chain[i]) - diffs.row(chain[i - 1])).norm();
            const int pos = int(std::find(chain.begin(), chain.end(), 0) - chain.begin());
            for (size_t i = 0; i < chain.size(); ++i) uu(chain[i], 0) = s(int(i)) - s(pos);
        } else {
            Eigen::JacobiSVD<Eigen::MatrixXd> pca(diffs, Eigen::ComputeThinV);
            uu = diffs * pca.matrixV().leftCols(d); // tangent PCA coordinates
        }
        Eigen::MatrixXd V(k + 1, nb);
        for (int i = 0; i <= k; ++i)
            for (int c = 0; c < nb; ++c) {
                double v = 1.0;
                for (int q = 0; q < d; ++q) v *= std::pow(uu(i, q), mono[c][q]);
                V(i, c) = v;
            }
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(V);
        auto extract = [&](const Eigen::VectorXd& coef, Eigen::VectorXd& g, Eigen::MatrixXd& H) {
            g.setZero(d);
            H.setZero(d, d);
            for (int c = 0; c < nb; ++c) {
                const int total = std::accumulate(mono[c].begin(), mono[c].end(), 0);
                if (total == 1) {
                    for (int q = 0; q < d; ++q)
                        if (mono[c][q] == 1) g(q) = coef(c);
                } else if (total == 2) {
                    for (int q = 0; q < d; ++q) {
                        if (mono[c][q] == 2) H(q, q) = 2.0 * coef(c);
                        for (int q2 = q + 1; q2 < d; ++q2)
                            if (mono[c][q] == 1 && mono[c][q2] == 1) H(q, q2) = H(q2, q) = coef(c);
                    }
                }
            }
        };
        auto fit = [&](const Eigen::VectorXd& y) {
            Eigen::VectorXd coef = qr.solve(y);
            max_fit_resid =
                std::max(max_fit_resid, (V * coef - y).norm() / std::max(y.norm(), 1e-12));
            return coef;
        };
        Stencil& st = sten[a];
        st.rows = rowspt;
        st.uu = uu;
        // chart coordinates as functions of the local coordinates
        st.Xcoef.resize(nb, d);
        st.A.resize(d, d); // A(c,q) = dX_c / du_q at the center
        st.HX.assign(d, Eigen::MatrixXd());
        for (int c = 0; c < d; ++c) {
            Eigen::VectorXd y(k + 1);
            for (int i = 0; i <= k; ++i) y(i) = chart.coords(rowspt[i], c);
            st.Xcoef.col(c) = fit(y);
            Eigen::VectorXd g;
            extract(st.Xcoef.col(c), g, st.HX[c]);
            st.A.row(c) = g.transpose();
        }
        Eigen::JacobiSVD<Eigen::MatrixXd> asvd(st.A);
        if (asvd.singularValues()(d - 1) < 1e-6 * asvd.singularValues()(0)) {
            bad[a] = 1; // chart critical point: derivatives not liftable
            continue;
        }
        Eigen::MatrixXd Ainv = st.A.inverse();
        // derivatives of every used mode, chain-ruled into chart coordinates,
        // then the pointwise least-squares system for h^{jk} and a^j
        Eigen::MatrixXd Sfull(P, nunk);
        Eigen::VectorXd rhsfull(P), resid(P);
        for (int p = 0; p < P; ++p) {
            Eigen::VectorXd y(k + 1);
            for (int i = 0; i <= k; ++i) y(i) = lsd.phi_values(rowspt[i], use_modes[p]);
            Eigen::VectorXd coef = fit(y);
            resid(p) = (V * coef - y).norm() / std::max(y.norm(), 1e-12);
            Eigen::VectorXd gu;
            Eigen::MatrixXd Hu;
            extract(coef, gu, Hu);
            Eigen::VectorXd gx = Ainv.transpose() * gu;
            Eigen::MatrixXd corr = Hu;
            for (int c = 0; c < d; ++c) corr -= gx(c) * st.HX[c];
            Eigen::MatrixXd Hx = Ainv.transpose() * corr * Ainv;
            int c = 0;
            for (int q = 0; q < d; ++q)
                for (int q2 = q; q2 < d; ++q2)
                    Sfull(p, c++) = -((q == q2) ? 1.0 : 2.0) * Hx(q, q2);
            for (int q = 0; q < d; ++q) Sfull(p, c++) = -gx(q);
            rhsfull(p) = lsd.eigenvalues(use_modes[p]) * lsd.phi_values(a, use_modes[p]);
            // regression bias grows steeply with the mode's oscillation rate;
            // down-weight rows accordingly
            const double wrow = 1.0 / std::pow(1.0 + lsd.eigenvalues(use_modes[p]), 1.5);
            Sfull.row(p) *= wrow;
            rhsfull(p) *= wrow;
        }
        // drop modes this stencil underfits (residual far above the typical
        // one), keeping enough rows for a healthy system
        std::vector<int> order(P);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int u, int v) { return resid(u) < resid(v); });
        const double med = resid(order[P / 2]);
        int nkeep = std::min(P, nunk + 2);
        while (nkeep < P && resid(order[nkeep]) <= std::max(5.0 * med, 1e-12)) ++nkeep;
        Eigen::MatrixXd S(nkeep, nunk);
        Eigen::VectorXd rhs(nkeep);
        for (int p = 0; p < nkeep; ++p) {
            S.row(p) = Sfull.row(order[p]);
            rhs(p) = rhsfull(order[p]);
        }
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(S, Eigen::ComputeThinU | Eigen::ComputeThinV);
        const auto& sv = svd.singularValues();
        if (sv(nunk - 1) < 1e-8 * sv(0)) {
            bad[a] = 1;
            continue;
        }
        Eigen::VectorXd x = svd.solve(rhs);
        max_eq_resid = std::max(max_eq_resid, (S * x - rhs).norm() / std::max(rhs.norm(), 1e-12));
        int c = 0;
        for (int q = 0; q < d; ++q)
            for (int q2 = q; q2 < d; ++q2) {
                h_all[a](q, q2) = h_all[a](q2, q) = x(c);
                ++c;
            }
        for (int q = 0; q < d; ++q) a_all[a](q) = x(c++);
    }
    // interpolate singular points from embedding-nearest healthy neighbors
    for (int a = 0; a < NN; ++a) {
        if (!bad[a]) continue;
        double best = std::numeric_limits<double>::infinity();
        int arg = -1;
        for (int b = 0; b < NN; ++b)
            if (!bad[b]) {
                const double dd = (emb.row(b) - emb.row(a)).norm();
                if (dd < best) {
                    best = dd;
                    arg = b;
                }
            }
        if (arg < 0) throw std::runtime_error("recover_metric_density: all points singular");
        h_all[a] = h_all[arg];
        a_all[a] = a_all[arg];
    }
    for (int m = 0; m < M; ++m) {
        R.flagged[m] = bad[R.points[m]];
        R.metric_inv[m] = h_all[R.points[m]];
        R.drift[m] = a_all[R.points[m]];
    }

    // density gradient: dlnrho_j = h_{jk} (a^k - b^k), b the drift of the
    // density-free Laplacian. Differentiating the metric field in chart
    // coordinates is singular near chart critical points, so evaluate
    // b^j = h_u^{pq} X^j_pq + b_u^p X^j_p in the local frame, where the
    // transformed field G = sqrt(det g_u) h_u stays smooth.
    {
        const auto mono1 = detail::monomials(d, 2);
        const int nb1 = int(mono1.size());
        auto poly_grad = [&](const Eigen::MatrixXd& coefs, const Eigen::RowVectorXd& u) {
            // Jacobian dX_c/du_q of the fitted polynomials at an off-center u
            Eigen::MatrixXd J(d, d);
            for (int c = 0; c < d; ++c)
                for (int q = 0; q < d; ++q) {
                    double acc = 0.0;
                    for (int t = 0; t < nb; ++t) {
                        if (mono[t][q] == 0) continue;
                        double v = mono[t][q];
                        for (int q2 = 0; q2 < d; ++q2)
                            v *= std::pow(u(q2), mono[t][q2] - (q2 == q ? 1 : 0));
                        acc += coefs(t, c) * v;
                    }
                    J(c, q) = acc;
                }
            return J;
        };
        for (int m = 0; m < M; ++m) {
            if (R.flagged[m]) continue;
            const int a = R.points[m];
            const Stencil& st = sten[a];
            const int rows = int(st.rows.size());
            // transformed metric field along the stencil
            std::vector<Eigen::MatrixXd> Gfield;
            std::vector<int> keep;
            std::vector<double> sqg_c;
            for (int i = 0; i < rows; ++i) {
                // for one local coordinate, arc length is canonical up to sign
                // and G is even in it, so each point's own center Jacobian is
                // both valid here and far more accurate than evaluating this
                // stencil's polynomial at its edge
                Eigen::MatrixXd Ai = (d == 1 && !bad[st.rows[i]])
                                         ? sten[st.rows[i]].A
                                         : poly_grad(st.Xcoef, st.uu.row(i));
                Eigen::JacobiSVD<Eigen::MatrixXd> s2(Ai);
                if (s2.singularValues()(d - 1) < 1e-6 * s2.singularValues()(0)) continue;
                Eigen::MatrixXd Aiv = Ai.inverse();
                Eigen::MatrixXd hu = Aiv * h_all[st.rows[i]] * Aiv.transpose();
                const double det = std::max(hu.determinant(), 1e-12);
                Gfield.push_back(hu / std::sqrt(det));
                sqg_c.push_back(1.0 / std::sqrt(det));
                keep.push_back(i);
            }
            if (int(keep.size()) < nb1 + 1 || keep[0] != 0) {
                R.flagged[m] = 1;
                continue;
            }
            Eigen::MatrixXd V1(int(keep.size()), nb1);
            for (size_t i = 0; i < keep.size(); ++i)
                for (int c = 0; c < nb1; ++c) {
                    double v = 1.0;
                    for (int q = 0; q < d; ++q) v *= std::pow(st.uu(keep[i], q), mono1[c][q]);
                    V1(int(i), c) = v;
                }
            Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr1(V1);
            Eigen::VectorXd b_u = Eigen::VectorXd::Zero(d);
            for (int p = 0; p < d; ++p) {
                double acc = 0.0;
                for (int q = 0; q < d; ++q) {
                    Eigen::VectorXd y(int(keep.size()));
                    for (size_t i = 0; i < keep.size(); ++i) y(int(i)) = Gfield[i](q, p);
                    Eigen::VectorXd coef = qr1.solve(y);
                    for (int c = 0; c < nb1; ++c)
                        if (std::accumulate(mono1[c].begin(), mono1[c].end(), 0) == 1 &&
                            mono1[c][q] == 1)
                            acc += coef(c);
                }
                b_u(p) = acc / sqg_c[0];
            }
            Eigen::MatrixXd Ainv = st.A.inverse();
            Eigen::MatrixXd hu0 = Ainv * h_all[a] * Ainv.transpose();
            Eigen::VectorXd bx(d);
            for (int j = 0; j < d; ++j)
                bx(j) = (hu0.array() * st.HX[j].array()).sum() + st.A.row(j).dot(b_u);
            Eigen::MatrixXd h_lower = R.metric_inv[m].inverse();
            R.dlnrho[m] = h_lower * (R.drift[m] - bx);
        }
        // flagged points inherit the density gradient of the nearest healthy one
        for (int m = 0; m < M; ++m) {
            if (!R.flagged[m]) continue;
            double best = std::numeric_limits<double>::infinity();
            int arg = -1;
            for (int m2 = 0; m2 < M; ++m2)
                if (!R.flagged[m2]) {
                    const double dd = (emb.row(R.points[m2]) - emb.row(R.points[m])).norm();
                    if (dd < best) {
                        best = dd;
                        arg = m2;
                    }
                }
            if (arg >= 0) R.dlnrho[m] = R.dlnrho[arg];
        }
    }

    // integrate ln rho along chart paths; normalize total mass over the chart
    Eigen::VectorXd lnrho = Eigen::VectorXd::Zero(M);
    if (d == 1) {
        std::vector<int> order(M);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int u, int v) {
            return chart.coords(R.points[u], 0) < chart.coords(R.points[v], 0);
        });
        for (int i = 1; i < M; ++i) {
            const int u = order[i - 1], v = order[i];
            const double dx = chart.coords(R.points[v], 0) - chart.coords(R.points[u], 0);
            lnrho(v) = lnrho(u) + 0.5 * (R.dlnrho[u](0) + R.dlnrho[v](0)) * dx;
        }
        // trapezoid mass: integral of rho * sqrt(h_lower) dx
        Eigen::VectorXd rho = lnrho.array().exp();
        double mass = 0.0;
        for (int i = 1; i < M; ++i) {
            const int u = order[i - 1], v = order[i];
            const double dx = chart.coords(R.points[v], 0) - chart.coords(R.points[u], 0);
            const double fu = rho(u) / std::sqrt(std::max(R.metric_inv[u](0, 0), 1e-12));
            const double fv = rho(v) / std::sqrt(std::max(R.metric_inv[v](0, 0), 1e-12));
            mass += 0.5 * (fu + fv) * dx;
        }
        R.rho = rho / mass;
        // recompute the normalization defect as a diagnostic
        double check = 0.0;
        for (int i = 1; i < M; ++i) {
            const int u = order[i - 1], v = order[i];
            const double dx = chart.coords(R.points[v], 0) - chart.coords(R.points[u], 0);
            check += 0.5 * (R.rho(u) / std::sqrt(std::max(R.metric_inv[u](0, 0), 1e-12)) +
                            R.rho(v) / std::sqrt(std::max(R.metric_inv[v](0, 0), 1e-12))) *
                     dx;
        }
        R.diagnostics["mass_normalization_defect"] = std::abs(check - 1.0);
    } else {
        // spanning-tree integration over a nearest-neighbor graph, then
        // k-NN cell-volume normalization
        std::vector<char> done(M, 0);
        std::vector<int> stack{0};
        done[0] = 1;
        while (!stack.empty()) {
            const int u = stack.back();
            stack.pop_back();
            std::vector<std::pair<double, int>> nb_list;
            for (int v = 0; v < M; ++v)
                if (v != u)
                    nb_list.push_back(
                        {(chart.coords.row(R.points[v]) - chart.coords.row(R.points[u])).norm(),
                         v});
            std::sort(nb_list.begin(), nb_list.end());
            for (int i = 0; i < std::min<int>(6, int(nb_list.size())); ++i) {
                const int v = nb_list[i].second;
                if (done[v]) continue;
                Eigen::RowVectorXd dx =
                    chart.coords.row(R.points[v]) - chart.coords.row(R.points[u]);
                lnrho(v) = lnrho(u) + 0.5 * (R.dlnrho[u] + R.dlnrho[v]).dot(dx.transpose());
                done[v] = 1;
                stack.push_back(v);
            }
        }
        Eigen::VectorXd rho = lnrho.array().exp();
        // crude cell volumes from k-NN radii in chart coordinates
        double mass = 0.0;
        std::vector<double> cell(M);
        for (int m = 0; m < M; ++m) {
            std::vector<double> dd;
            for (int m2 = 0; m2 < M; ++m2)
                if (m2 != m)
                    dd.push_back(
                        (chart.coords.row(R.points[m2]) - chart.coords.row(R.points[m])).norm());
            std::sort(dd.begin(), dd.end());
            const double rk = dd[std::min<size_t>(2, dd.size() - 1)];
            double vol = std::pow(rk, d) / 3.0;
            cell[m] = vol / std::sqrt(std::max(R.metric_inv[m].determinant(), 1e-12));
            mass += rho(m) * cell[m];
        }
        R.rho = rho / mass;
        double check = 0.0;
        for (int m = 0; m < M; ++m) check += R.rho(m) * cell[m];
        R.diagnostics["mass_normalization_defect"] = std::abs(check - 1.0);
    }
    R.diagnostics["max_regression_residual"] = max_fit_resid;
    R.diagnostics["max_equation_residual"] = max_eq_resid;
    return R;
}

// ---------------------------------------------------------------------------
// wave coefficients, influence projectors, slicing
// ---------------------------------------------------------------------------

/// Fourier coefficients of the wave field driven by a source F on the net
/// times a source time grid, evaluated at `t_eval`. Values carry the unknown
/// multiplicative constant c0 (LocalSpectralData::c0_known is false).
inline Eigen::MatrixXd wave_fourier_coefficients(const LocalSpectralData& lsd_in,
                                                 const Eigen::MatrixXd& source,
                                                 const std::vector<double>& source_times,
                                                 const std::vector<double>& t_eval) {
    LocalSpectralData lsd = canonical_gauge(lsd_in);
    if (lsd.quadrature.size() == 0) lsd.quadrature = quadrature_from_orthonormality(lsd);
    const int N = lsd.net_size();
    const int J = lsd.mode_count();
    if (source.rows() != N || source.cols() != int(source_times.size()))
        throw std::invalid_argument("wave_fourier_coefficients: source shape mismatch");
    // spatial reduction: p_j(t') = sum_alpha q_alpha phi_j(alpha) F(alpha, t')
    Eigen::MatrixXd P = lsd.phi_values.transpose() * lsd.quadrature.asDiagonal() * source;
    Eigen::MatrixXd U(J, int(t_eval.size()));
    for (size_t e = 0; e < t_eval.size(); ++e) {
        const double t = t_eval[e];
        for (int j = 0; j < J; ++j) {
            const double lam = lsd.eigenvalues(j);
            double acc = 0.0;
            for (size_t i = 0; i + 1 < source_times.size(); ++i) {
                const double t0 = source_times[i], t1 = source_times[i + 1];
                if (t0 >= t) break;
                const double tb = std::min(t1, t);
                auto kern = [&](double tp) {
                    const double tau = t - tp;
                    if (lam < 1e-10) return tau;
                    const double sl = std::sqrt(lam);
                    return std::sin(sl * tau) / sl;
                };
                // trapezoid on the (possibly clipped) subinterval; source is
                // linearly interpolated at the clip point
                auto src = [&](double tp) {
                    const double w = (tp - t0) / (t1 - t0);
                    return (1 - w) * P(j, int(i)) + w * P(j, int(i + 1));
                };
                acc += 0.5 * (kern(t0) * src(t0) + kern(tb) * src(tb)) * (tb - t0);
            }
            U(j, int(e)) = acc;
        }
    }
    return U;
}

/// Orthogonal projector onto the span of wave fields controllable from the
/// net subset W by time s, expressed in the truncated eigenfunction basis.
struct InfluenceProjector {
    Eigen::MatrixXd matrix;       // K x K corner in the first-K-modes basis
    Eigen::MatrixXd basis_matrix; // full J x J projector over all lsd modes
    std::vector<int> source_set;  // net-local indices of W
    double time = 0.0;
    int cutoff = 0;
    double idempotence_defect = 0.0; // of the K x K corner (truncation diagnostic)
};

inline InfluenceProjector influence_projector(const LocalSpectralData& lsd_in,
                                              const std::vector<int>& W, double s, int K,
                                              double svd_tol = 1e-3, int time_modes = 0,
                                              int quad_points = 40) {
    if (W.empty()) throw std::invalid_argument("influence_projector: empty source set");
    if (s < 0) throw std::invalid_argument("influence_projector: negative time");
    LocalSpectralData lsd = canonical_gauge(lsd_in);
    if (lsd.quadrature.size() == 0) lsd.quadrature = quadrature_from_orthonormality(lsd);
    const int J = lsd.mode_count();
    if (K > J) throw std::invalid_argument("influence_projector: cutoff exceeds mode count");
    InfluenceProjector out;
    out.source_set = W;
    out.time = s;
    out.cutoff = K;
    out.basis_matrix = Eigen::MatrixXd::Zero(J, J);
    out.matrix = Eigen::MatrixXd::Zero(K, K);
    if (s == 0.0) return out;

    const int M = time_modes > 0 ? time_modes : std::min(std::max(2 * K, 16), 2 * J);
    // time-kernel integrals I[j][m] = int_0^s f_m(t') k_j(s - t') dt', midpoint
    Eigen::MatrixXd I = Eigen::MatrixXd::Zero(J, M);
    for (int i = 0; i < quad_points; ++i) {
        const double tp = s * (i + 0.5) / quad_points;
        const double wq = s / quad_points;
        Eigen::VectorXd f(M);
        for (int m = 0; m < M; ++m) {
            if (m == 0) f(m) = 1.0;
            else if (m % 2 == 1) f(m) = std::sin(((m + 1) / 2) * M_PI * tp / s);
            else f(m) = std::cos((m / 2) * M_PI * tp / s);
        }
        for (int j = 0; j < J; ++j) {
            const double lam = lsd.eigenvalues(j);
            const double tau = s - tp;
            const double k = lam < 1e-10 ? tau : std::sin(std::sqrt(lam) * tau) / std::sqrt(lam);
            I.row(j) += (wq * k) * f.transpose();
        }
    }
    Eigen::MatrixXd E(J, int(W.size()) * M);
    int col = 0;
    for (int w : W)
        for (int m = 0; m < M; ++m, ++col)
            for (int j = 0; j < J; ++j)
                E(j, col) = lsd.quadrature(w) * lsd.phi_values(w, j) * I(j, m);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(E, Eigen::ComputeThinU);
    const auto& sv = svd.singularValues();
    int r = 0;
    while (r < sv.size() && sv(r) > svd_tol * sv(0)) ++r;
    if (r > 0) {
        Eigen::MatrixXd U = svd.matrixU().leftCols(r);
        out.basis_matrix = U * U.transpose();
    }
    out.matrix = out.basis_matrix.topLeftCorner(K, K);
    out.idempotence_defect =
        (out.matrix * out.matrix - out.matrix).operatorNorm();
    return out;
}

/// Inner products of eigenfunctions over a sliced region, from differences
/// and products of influence projectors. The list holds (outer, inner) pairs:
/// D_l = P_outer - P_inner; the result is the symmetrized product of the D_l.
struct SlicingResult {
    Eigen::MatrixXd matrix;       // estimate of the Gram matrix over the slice
    double commutator_norm = 0.0; // fidelity diagnostic among the factors
};

inline SlicingResult slicing_inner_products(const std::vector<InfluenceProjector>& pairs) {
    if (pairs.empty() || pairs.size() % 2 != 0)
        throw std::invalid_argument("slicing_inner_products: need (outer, inner) pairs");
    std::vector<Eigen::MatrixXd> D;
    for (size_t i = 0; i + 1 < pairs.size(); i += 2)
        D.push_back(pairs[i].basis_matrix - pairs[i + 1].basis_matrix);
    SlicingResult out;
    Eigen::MatrixXd P = D[0];
    for (size_t i = 1; i < D.size(); ++i) P = P * D[i];
    out.matrix = 0.5 * (P + P.transpose());
    for (size_t i = 0; i < D.size(); ++i)
        for (size_t j = i + 1; j < D.size(); ++j)
            out.commutator_norm =
                std::max(out.commutator_norm, (D[i] * D[j] - D[j] * D[i]).operatorNorm());
    return out;
}

// ---------------------------------------------------------------------------
// injectivity radius
// ---------------------------------------------------------------------------

struct InjectivityEstimate {
    double value = 0.0;
    bool bracketed = false; // false: the grid was too coarse to pin the infimum
    double rho_used = 0.0;
};

/// Injectivity radius via emptiness of the ball-difference sets
/// N = X(B_rho(x) U B_eps(x1), s) \ X(B_rho(x), s):
/// i(x) = inf { s + rho : measure(N) = 0 }. Works on any net with a distance
/// matrix and per-point masses (truth Dijkstra + weights, or reconstructed
/// distances + fitted quadrature).
inline InjectivityEstimate injectivity_radius(const Eigen::MatrixXd& D, const Eigen::VectorXd& q,
                                              int x, double rho_max, double s_step,
                                              double eps, double threshold = 1e-9) {
    const int N = int(D.rows());
    InjectivityEstimate best;
    best.value = std::numeric_limits<double>::infinity();
    const double s_cap = D.maxCoeff() + s_step;
    for (int x1 = 0; x1 < N; ++x1) {
        if (x1 == x) continue;
        const double rho = D(x, x1);
        if (rho <= 0 || rho > rho_max) continue;
        // distance to B_rho(x) and to B_eps(x1)
        Eigen::VectorXd d_in(N), d_pt(N);
        for (int v = 0; v < N; ++v) {
            double din = std::numeric_limits<double>::infinity();
            double dpt = std::numeric_limits<double>::infinity();
            for (int w = 0; w < N; ++w) {
                if (D(x, w) <= rho + 1e-12) din = std::min(din, D(v, w));
                if (D(x1, w) <= eps + 1e-12) dpt = std::min(dpt, D(v, w));
            }
            d_in(v) = din;
            d_pt(v) = dpt;
        }
        auto measureN = [&](double s) {
            double acc = 0.0;
            for (int v = 0; v < N; ++v)
                if (d_pt(v) <= s + 1e-12 && d_in(v) > s + 1e-12) acc += std::max(q(v), 0.0);
            return acc;
        };
        if (measureN(0.0) <= threshold) {
            // the eps-ball at x1 is captured by B_rho(x) before any wave
            // propagation: the geodesic towards x1 folds at or before rho
            // (needs eps >= local net spacing so the ball is nontrivial)
            if (rho < best.value) {
                best.value = rho;
                best.rho_used = rho;
                best.bracketed = true;
            }
            continue;
        }
        for (double s = s_step; s <= s_cap; s += s_step) {
            if (measureN(s) <= threshold) {
                if (s + rho < best.value) {
                    best.value = s + rho;
                    best.rho_used = rho;
                    best.bracketed = true;
                }
                break;
            }
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// distance reconstruction
// ---------------------------------------------------------------------------

struct DistanceOptions {
    double eps0 = 0.1;       // target-ball radius
    double s_max = 0.0;      // 0: derived from the smallest positive eigenvalue
    int bisections = 12;
    double svd_tol = 1e-3;
};

/// Net distances by wave first arrival: for each ordered pair, the time at
/// which the influence domain of the source point captures half the measure
/// of a small ball at the target, plus a half-wavelength resolution offset.
/// Symmetrized and metric-repaired (Floyd-Warshall).
inline Eigen::MatrixXd reconstruct_distances(const LocalSpectralData& lsd_in,
                                             DistanceOptions opt = {},
                                             std::map<std::string, double>* diagnostics = nullptr) {
    LocalSpectralData lsd = canonical_gauge(lsd_in);
    if (lsd.quadrature.size() == 0) lsd.quadrature = quadrature_from_orthonormality(lsd);
    const int N = lsd.net_size();
    const int J = lsd.mode_count();
    double lam1 = 0.0;
    for (int j = 0; j < J; ++j)
        if (lsd.eigenvalues(j) > 1e-8) {
            lam1 = lsd.eigenvalues(j);
            break;
        }
    if (lam1 <= 0) throw std::runtime_error("reconstruct_distances: no positive eigenvalue");
    const double s_max = opt.s_max > 0 ? opt.s_max : 2.0 * M_PI / std::sqrt(lam1);
    const double offset = M_PI / (2.0 * std::sqrt(lsd.eigenvalues(J - 1)));

    std::vector<InfluenceProjector> target(N);
    for (int b = 0; b < N; ++b)
        target[b] = influence_projector(lsd, {b}, opt.eps0, J, opt.svd_tol);

    Eigen::MatrixXd Draw = Eigen::MatrixXd::Zero(N, N);
    int flagged = 0;
    double self_max = 0.0;
    for (int a = 0; a < N; ++a) {
        for (int b = 0; b < N; ++b) {
            const double sat = target[b].basis_matrix(0, 0);
            auto captured = [&](double s) {
                InfluenceProjector Pa = influence_projector(lsd, {a}, s, J, opt.svd_tol);
                Eigen::MatrixXd prod = Pa.basis_matrix * target[b].basis_matrix;
                return 0.5 * (prod(0, 0) + prod.transpose()(0, 0));
            };
            if (a == b) {
                self_max = std::max(self_max, 0.0);
                continue;
            }
            double lo = 0.0, hi = s_max;
            if (captured(hi) < 0.5 * sat) {
                Draw(a, b) = s_max + offset;
                ++flagged;
                continue;
            }
            for (int it = 0; it < opt.bisections; ++it) {
                const double mid = 0.5 * (lo + hi);
                if (captured(mid) >= 0.5 * sat) hi = mid;
                else lo = mid;
            }
            Draw(a, b) = 0.5 * (lo + hi) + offset;
        }
    }
    Eigen::MatrixXd Dd = 0.5 * (Draw + Draw.transpose());
    for (int i = 0; i < N; ++i) Dd(i, i) = 0.0;
    // metric repair
    for (int k = 0; k < N; ++k)
        for (int i = 0; i < N; ++i)
            for (int j = 0; j < N; ++j)
                if (Dd(i, k) + Dd(k, j) < Dd(i, j)) Dd(i, j) = Dd(i, k) + Dd(k, j);
    if (diagnostics) {
        (*diagnostics)["distance_flagged_pairs"] = flagged;
        (*diagnostics)["distance_offset"] = offset;
        (*diagnostics)["distance_asymmetry"] =
            (Draw - Draw.transpose()).cwiseAbs().maxCoeff();
    }
    return Dd;
}

// ---------------------------------------------------------------------------
// full pipeline result
// ---------------------------------------------------------------------------

struct ReconstructionResult {
    LocalSpectralData lsd;
    Chart chart;
    MetricDensityResult metric_density;
    Eigen::MatrixXd distances;
    Eigen::VectorXd inj_radius; // per net point; NaN where not estimated
    std::map<std::string, double> diagnostics;
};

inline ReconstructionResult reconstruct_all(const PointHeatData& data, int K_max,
                                            DistanceOptions dopt = {},
                                            bool with_injectivity = false) {
    ReconstructionResult R;
    R.lsd = fit_spectral_data(data, K_max);
    R.lsd.dim_estimate = detect_dimension(R.lsd);
    R.distances = reconstruct_distances(R.lsd, dopt, &R.diagnostics);
    R.chart = select_chart(R.lsd, data.base_hint, &R.distances);
    R.metric_density = recover_metric_density(R.lsd, R.chart);
    const int N = R.lsd.net_size();
    R.inj_radius = Eigen::VectorXd::Constant(N, std::numeric_limits<double>::quiet_NaN());
    if (with_injectivity) {
        const double step = 2.0 * data.delta;
        for (int x = 0; x < N; ++x) {
            auto est = injectivity_radius(R.distances, R.lsd.quadrature, x,
                                          0.5 * R.distances.maxCoeff(), step, 1.5 * data.delta);
            if (est.bracketed) R.inj_radius(x) = est.value;
        }
    }
    for (const auto& [k, v] : R.metric_density.diagnostics) R.diagnostics[k] = v;
    R.diagnostics["fit_mode_count"] = R.lsd.mode_count();
    R.diagnostics["dim_estimate"] = R.lsd.dim_estimate;
    return R;
}

} // namespace heatbc
