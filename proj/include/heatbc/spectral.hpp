#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <cmath>
#include <memory>
#include <random>
#include <stdexcept>
#include <vector>

#include "heatbc/space.hpp"

namespace heatbc {

/// Generalized eigenproblem pair: stiffness K u = lambda diag(mass) u.
/// K is symmetric PSD with constants in its kernel; mass equals the
/// probability weights, so eigenvectors are mass-orthonormal.
struct LaplacianOperator {
    Eigen::SparseMatrix<double> stiffness;
    Eigen::VectorXd mass;
};

inline LaplacianOperator assemble_weighted_laplacian(const DiscreteSpace& s) {
    for (int i = 0; i < s.vertex_count; ++i) {
        if (!s.singular_flags[i]) {
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s.metric_samples[i]);
            if (es.eigenvalues().minCoeff() <= 0)
                throw std::runtime_error(
                    "assemble_weighted_laplacian: degenerate metric at regular vertex");
        }
    }
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(4 * s.edges.size());
    const double vol = s.total_volume;
    for (const auto& e : s.edges) {
        const double k = e.conductance / vol;
        trips.push_back({e.u, e.u, k});
        trips.push_back({e.v, e.v, k});
        trips.push_back({e.u, e.v, -k});
        trips.push_back({e.v, e.u, -k});
    }
    LaplacianOperator op;
    op.stiffness.resize(s.vertex_count, s.vertex_count);
    op.stiffness.setFromTriplets(trips.begin(), trips.end());
    op.mass = s.weights;
    return op;
}

/// Eigenvalues and mass-orthonormal eigenfunction samples.
struct SpectralData {
    Eigen::VectorXd eigenvalues;  // nondecreasing
    Eigen::MatrixXd eigenvectors; // column j = phi_j at vertices
    int mode_count = 0;
    std::shared_ptr<const DiscreteSpace> source_space;
};

namespace detail {

inline SpectralData eigendecompose_dense(const LaplacianOperator& op, int K) {
    const int n = int(op.mass.size());
    Eigen::VectorXd dinv = op.mass.cwiseSqrt().cwiseInverse();
    Eigen::MatrixXd B = dinv.asDiagonal() * Eigen::MatrixXd(op.stiffness) * dinv.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(B);
    if (es.info() != Eigen::Success)
        throw std::runtime_error("eigendecompose: dense solver failed");
    SpectralData sd;
    sd.mode_count = K;
    sd.eigenvalues = es.eigenvalues().head(K);
    sd.eigenvectors = dinv.asDiagonal() * es.eigenvectors().leftCols(K);
    (void)n;
    return sd;
}

/// Shift-invert Lanczos with full reorthogonalization for the K smallest modes.
inline SpectralData eigendecompose_lanczos(const LaplacianOperator& op, int K) {
    const int n = int(op.mass.size());
    Eigen::VectorXd dsq = op.mass.cwiseSqrt();
    Eigen::VectorXd dinv = dsq.cwiseInverse();

    // B = D^{-1/2} K D^{-1/2}, shifted so the factorization is SPD.
    const double shift = -1e-3;
    Eigen::SparseMatrix<double> B = op.stiffness;
    for (int k = 0; k < B.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator it(B, k); it; ++it)
            it.valueRef() *= dinv(it.row()) * dinv(it.col());
    Eigen::SparseMatrix<double> I(n, n);
    I.setIdentity();
    Eigen::SparseMatrix<double> A = B - shift * I;
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(A);
    if (ldlt.info() != Eigen::Success)
        throw std::runtime_error("eigendecompose: shift-invert factorization failed");

    const int m = std::min(n, 2 * K + 40);
    Eigen::MatrixXd V(n, m);
    Eigen::VectorXd alpha(m), beta(m);
    std::mt19937_64 rng(12345);
    std::normal_distribution<double> nd;
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = nd(rng);
    v.normalize();
    Eigen::VectorXd w;
    double b_prev = 0.0;
    for (int j = 0; j < m; ++j) {
        V.col(j) = v;
        w = ldlt.solve(v);
        if (j > 0) w -= b_prev * V.col(j - 1);
        alpha(j) = w.dot(v);
        w -= alpha(j) * v;
        // full reorthogonalization, twice
        for (int pass = 0; pass < 2; ++pass)
            w -= V.leftCols(j + 1) * (V.leftCols(j + 1).transpose() * w);
        b_prev = w.norm();
        beta(j) = b_prev;
        if (b_prev < 1e-14) {
            for (int i = 0; i < n; ++i) w(i) = nd(rng);
            w -= V.leftCols(j + 1) * (V.leftCols(j + 1).transpose() * w);
            b_prev = w.norm();
        }
        v = w / b_prev;
    }
    Eigen::MatrixXd T = Eigen::MatrixXd::Zero(m, m);
    for (int j = 0; j < m; ++j) {
        T(j, j) = alpha(j);
        if (j + 1 < m) T(j, j + 1) = T(j + 1, j) = beta(j);
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(T);
    // largest theta of (B - shift I)^{-1} correspond to smallest lambda
    SpectralData sd;
    sd.mode_count = K;
    sd.eigenvalues.resize(K);
    sd.eigenvectors.resize(n, K);
    double max_resid = 0.0;
    for (int k = 0; k < K; ++k) {
        const int idx = m - 1 - k;
        const double theta = es.eigenvalues()(idx);
        const double lam = 1.0 / theta + shift;
        Eigen::VectorXd y = V * es.eigenvectors().col(idx);
        Eigen::VectorXd r = B * y - lam * y;
        max_resid = std::max(max_resid, r.norm() / std::max(1.0, std::abs(lam)));
        sd.eigenvalues(k) = lam;
        sd.eigenvectors.col(k) = dinv.asDiagonal() * y;
    }
    if (max_resid > 1e-7)
        throw std::runtime_error("eigendecompose: Lanczos did not converge, max residual " +
                                 std::to_string(max_resid));
    // sort ascending
    std::vector<int> order(K);
    for (int k = 0; k < K; ++k) order[k] = k;
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return sd.eigenvalues(a) < sd.eigenvalues(b); });
    Eigen::VectorXd ev(K);
    Eigen::MatrixXd vec(n, K);
    for (int k = 0; k < K; ++k) {
        ev(k) = sd.eigenvalues(order[k]);
        vec.col(k) = sd.eigenvectors.col(order[k]);
    }
    sd.eigenvalues = ev;
    sd.eigenvectors = vec;
    return sd;
}

} // namespace detail

inline SpectralData eigendecompose(const LaplacianOperator& op, int K,
                                   std::shared_ptr<const DiscreteSpace> space = nullptr) {
    const int n = int(op.mass.size());
    if (K > n) throw std::invalid_argument("eigendecompose: K exceeds vertex count");
    SpectralData sd = (n <= 2500) ? detail::eigendecompose_dense(op, K)
                                  : detail::eigendecompose_lanczos(op, K);
    // fix sign convention: largest-magnitude entry positive
    for (int j = 0; j < K; ++j) {
        int imax = 0;
        sd.eigenvectors.col(j).cwiseAbs().maxCoeff(&imax);
        if (sd.eigenvectors(imax, j) < 0) sd.eigenvectors.col(j) = -sd.eigenvectors.col(j);
    }
    sd.source_space = std::move(space);
    return sd;
}

inline SpectralData eigendecompose(const DiscreteSpace& s, int K) {
    auto sp = std::make_shared<DiscreteSpace>(s);
    return eigendecompose(assemble_weighted_laplacian(s), K, sp);
}

/// Spectral-expansion heat kernel, summed over modes with lambda < cutoff.
inline double heat_kernel(const SpectralData& sd, int i, int j, double t,
                          double cutoff = std::numeric_limits<double>::infinity()) {
    if (t <= 0) throw std::invalid_argument("heat_kernel: need t > 0");
    double h = 0.0;
    for (int p = 0; p < sd.mode_count; ++p) {
        if (sd.eigenvalues(p) >= cutoff) break;
        // multiply the eigenfunction samples first: IEEE multiplication is
        // commutative, so H(i,j,t) == H(j,i,t) bitwise
        h += std::exp(-sd.eigenvalues(p) * t) * (sd.eigenvectors(i, p) * sd.eigenvectors(j, p));
    }
    return h;
}

/// Heat kernel restricted to a vertex subset, all pairs at once.
inline Eigen::MatrixXd heat_kernel_matrix(const SpectralData& sd, const std::vector<int>& idx,
                                          double t,
                                          double cutoff = std::numeric_limits<double>::infinity()) {
    if (t <= 0) throw std::invalid_argument("heat_kernel_matrix: need t > 0");
    const int N = int(idx.size());
    int P = 0;
    while (P < sd.mode_count && sd.eigenvalues(P) < cutoff) ++P;
    Eigen::MatrixXd Phi(N, P);
    for (int a = 0; a < N; ++a) Phi.row(a) = sd.eigenvectors.row(idx[a]).head(P);
    Eigen::VectorXd decay(P);
    for (int p = 0; p < P; ++p) decay(p) = std::exp(-sd.eigenvalues(p) * t);
    Eigen::MatrixXd H = Phi * decay.asDiagonal() * Phi.transpose();
    return 0.5 * (H + H.transpose());
}

/// Exact discrete truncation tail and the value of a fitted envelope
/// A (1 + t^-beta) exp(-(1-sigma) E t) at (E, t).
struct TailEstimate {
    double tail = 0.0;
    double envelope = 0.0;
};

struct TailEnvelope {
    double A = 0.0;
    double beta = 0.0;
    double sigma = 0.5;
    bool dominates = false; // envelope >= tail on the fitted grid
};

inline double truncation_tail_exact(const SpectralData& sd, double E, double t,
                                    const std::vector<int>& sample_idx) {
    double worst = 0.0;
    for (int a : sample_idx) {
        for (int b : sample_idx) {
            double tail = 0.0;
            for (int p = 0; p < sd.mode_count; ++p)
                if (sd.eigenvalues(p) >= E)
                    tail += std::exp(-sd.eigenvalues(p) * t) *
                            std::abs(sd.eigenvectors(a, p) * sd.eigenvectors(b, p));
            worst = std::max(worst, tail);
        }
    }
    return worst;
}

/// Fit the envelope constants over an (E, t) grid so that it dominates the
/// exact tail everywhere on the grid.
inline TailEnvelope fit_tail_envelope(const SpectralData& sd, const std::vector<double>& E_grid,
                                      const std::vector<double>& t_grid, double sigma = 0.5) {
    std::vector<int> sample_idx;
    const int n = int(sd.eigenvectors.rows());
    for (int i = 0; i < n; i += std::max(1, n / 16)) sample_idx.push_back(i);

    TailEnvelope best;
    best.sigma = sigma;
    double bestA = std::numeric_limits<double>::infinity();
    for (double beta : {0.5, 1.0, 1.5, 2.0, 3.0, 4.0}) {
        double A = 0.0;
        for (double E : E_grid) {
            for (double t : t_grid) {
                const double tail = truncation_tail_exact(sd, E, t, sample_idx);
                const double shape = (1.0 + std::pow(t, -beta)) * std::exp(-(1.0 - sigma) * E * t);
                if (shape > 0 && tail > 0) A = std::max(A, tail / shape);
            }
        }
        if (A < bestA) {
            bestA = A;
            best.A = std::max(A, 1e-300);
            best.beta = beta;
        }
    }
    best.dominates = true;
    for (double E : E_grid)
        for (double t : t_grid) {
            const double tail = truncation_tail_exact(sd, E, t, sample_idx);
            const double env =
                best.A * (1.0 + std::pow(t, -best.beta)) * std::exp(-(1.0 - sigma) * E * t);
            if (tail > env * (1.0 + 1e-9)) best.dominates = false;
        }
    return best;
}

inline TailEstimate truncation_tail(const SpectralData& sd, double E, double t,
                                    const TailEnvelope& env) {
    if (t <= 0) throw std::invalid_argument("truncation_tail: need t > 0");
    std::vector<int> sample_idx;
    const int n = int(sd.eigenvectors.rows());
    for (int i = 0; i < n; i += std::max(1, n / 16)) sample_idx.push_back(i);
    TailEstimate r;
    r.tail = truncation_tail_exact(sd, E, t, sample_idx);
    r.envelope = env.A * (1.0 + std::pow(t, -env.beta)) * std::exp(-(1.0 - env.sigma) * E * t);
    return r;
}

/// Weyl-type growth diagnostic: fitted c in lambda_p >= c p^{2/d} and C in
/// N(E) <= 1 + C E^{d/2}.
struct WeylReport {
    double c_fit = 0.0;
    double count_C = 0.0;
    bool positive = false;
};

inline WeylReport weyl_check(const SpectralData& sd, int dim) {
    if (sd.mode_count < 10) throw std::invalid_argument("weyl_check: need >= 10 modes");
    WeylReport r;
    r.c_fit = std::numeric_limits<double>::infinity();
    for (int p = 1; p < sd.mode_count; ++p)
        r.c_fit = std::min(r.c_fit, sd.eigenvalues(p) / std::pow(double(p), 2.0 / dim));
    r.positive = r.c_fit > 0;
    r.count_C = 0.0;
    for (int p = 1; p < sd.mode_count; ++p) {
        const double E = sd.eigenvalues(p) * (1.0 + 1e-12) + 1e-12;
        const double NE = p + 1; // modes strictly below E
        r.count_C = std::max(r.count_C, (NE - 1.0) / std::pow(E, dim / 2.0));
    }
    return r;
}

/// Fit sup-norm growth max|phi_p| <= C_F (1+lambda_p^2)^{sF/2}; returns the
/// smallest C_F for a small grid of sF values, keeping the envelope monotone.
struct SupNormFit {
    double C_F = 0.0;
    double s_F = 0.0;
};

inline SupNormFit eigenfunction_supnorm_fit(const SpectralData& sd) {
    SupNormFit best;
    double bestC = std::numeric_limits<double>::infinity();
    for (double sF : {0.0, 0.125, 0.25, 0.5, 1.0}) {
        double C = 0.0;
        for (int p = 0; p < sd.mode_count; ++p) {
            const double sup = sd.eigenvectors.col(p).cwiseAbs().maxCoeff();
            const double lam = sd.eigenvalues(p);
            C = std::max(C, sup / std::pow(1.0 + lam * lam, sF / 2.0));
        }
        if (C < bestC) {
            bestC = C;
            best.C_F = C;
            best.s_F = sF;
        }
    }
    return best;
}

} // namespace heatbc
