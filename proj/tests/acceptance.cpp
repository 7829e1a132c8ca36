// Acceptance harness: one PASS/FAIL line per criterion, exit code = number
// of failures. Each criterion is self-contained and pins its own tolerances.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "heatbc/inverse.hpp"
#include "heatbc/mgh.hpp"
#include "heatbc/phd.hpp"
#include "heatbc/space.hpp"
#include "heatbc/spectral.hpp"

using namespace heatbc;

namespace {

int failures = 0;

template <class F>
void criterion(int id, const std::string& desc, F&& body) {
    bool ok = false;
    try {
        ok = body();
    } catch (const std::exception& e) {
        std::printf("  C%d exception: %s\n", id, e.what());
    }
    std::printf("%s C%d: %s\n", ok ? "PASS" : "FAIL", id, desc.c_str());
    if (!ok) ++failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct TruthSetup {
    DiscreteSpace space;
    SpectralData spec;
    std::vector<int> net;
    LocalSpectralData lsd;
    Eigen::MatrixXd dist; // net-local Dijkstra distances
};

TruthSetup make_truth(DiscreteSpace s, int modes, double delta, int J) {
    TruthSetup T{std::move(s), {}, {}, {}, {}};
    T.spec = eigendecompose(T.space, modes);
    T.net = detail::greedy_net(T.space, 1e9, delta);
    T.lsd = lsd_from_spectral(T.spec, T.net, J);
    const int N = int(T.net.size());
    T.dist.resize(N, N);
    for (int a = 0; a < N; ++a) {
        Eigen::VectorXd da = shortest_distances(T.space, T.net[a]);
        for (int b = 0; b < N; ++b) T.dist(a, b) = da(T.net[b]);
    }
    return T;
}

// Voronoi-mass net over a vertex subset of a space.
MetricMeasureNet sampled_net(const DiscreteSpace& s, const std::vector<int>& idx) {
    const int m = int(idx.size());
    MetricMeasureNet net;
    net.dist.resize(m, m);
    Eigen::MatrixXd dists(m, s.vertex_count);
    for (int i = 0; i < m; ++i) dists.row(i) = shortest_distances(s, idx[i]).transpose();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) net.dist(i, j) = dists(i, idx[j]);
    net.weights = Eigen::VectorXd::Zero(m);
    for (int v = 0; v < s.vertex_count; ++v) {
        int arg = 0;
        dists.col(v).minCoeff(&arg);
        net.weights(arg) += s.weights(v);
    }
    int argb = 0;
    dists.col(s.base_point).minCoeff(&argb);
    net.base = argb;
    return net;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    const int n = int(x.size());
    auto ranks = [&](const std::vector<double>& v) {
        std::vector<int> ord(n);
        std::iota(ord.begin(), ord.end(), 0);
        std::sort(ord.begin(), ord.end(), [&](int a, int b) { return v[a] < v[b]; });
        std::vector<double> r(n);
        int i = 0;
        while (i < n) {
            int j = i;
            while (j + 1 < n && v[ord[j + 1]] == v[ord[i]]) ++j;
            const double avg = 0.5 * (i + j) + 1.0;
            for (int k = i; k <= j; ++k) r[ord[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    auto rx = ranks(x), ry = ranks(y);
    double mx = 0, my = 0;
    for (int i = 0; i < n; ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (int i = 0; i < n; ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

// ---------------------------------------------------------------------------
// criteria
// ---------------------------------------------------------------------------

bool c1_forward_spectrum() {
    const auto t0 = std::chrono::steady_clock::now();
    auto s = build_circle(512, 2.0 * M_PI);
    auto spec = eigendecompose(s, 21);
    const double expect[10] = {1, 1, 4, 4, 9, 9, 16, 16, 25, 25};
    for (int k = 0; k < 10; ++k)
        if (std::abs(spec.eigenvalues(k + 1) - expect[k]) > 0.01 * expect[k]) return false;
    return seconds_since(t0) < 10.0;
}

bool c2_heat_invariants() {
    auto check = [](const DiscreteSpace& s, int K) {
        auto spec = eigendecompose(s, K);
        std::vector<int> all(s.vertex_count);
        std::iota(all.begin(), all.end(), 0);
        for (double t : {0.1, 1.0, 10.0}) {
            Eigen::MatrixXd H = heat_kernel_matrix(spec, all, t);
            const double sc = ((H * s.weights).array() - 1.0).abs().maxCoeff();
            Eigen::MatrixXd H2 = heat_kernel_matrix(spec, all, 2.0 * t);
            const double sg =
                (H * s.weights.asDiagonal() * H - H2).cwiseAbs().maxCoeff();
            if (sc >= 1e-9 || sg >= 1e-8) return false;
        }
        return true;
    };
    return check(build_circle(256, 2.0 * M_PI), 128) &&
           check(build_warped_torus(24, 12, 0.25), 200) &&
           check(build_interval_orbifold(256, M_PI), 128);
}

bool c3_truncation_envelope() {
    const std::vector<double> E_grid{1, 2, 4, 8, 16};
    const std::vector<double> t_grid{0.2, 0.5, 1.0, 2.0, 5.0};
    auto check = [&](const DiscreteSpace& s, int K) {
        auto spec = eigendecompose(s, K);
        auto env = fit_tail_envelope(spec, E_grid, t_grid);
        if (!env.dominates) return false;
        for (double E : E_grid)
            for (double t : t_grid) {
                auto r = truncation_tail(spec, E, t, env);
                if (r.tail > r.envelope * (1.0 + 1e-9)) return false;
            }
        return true;
    };
    return check(build_circle(128, 2.0 * M_PI), 64) &&
           check(build_warped_torus(16, 12, 0.25), 96) &&
           check(build_interval_orbifold(128, M_PI), 64);
}

bool c4_collapse_monotone() {
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<double> sigmas{1.0, 0.5, 0.25, 0.125};
    const int ny = 48, nz = 24, npts = 8;
    auto cprof = [](double y) { return 2.0 + std::cos(M_PI * y); };
    auto climit = [](double y) { return 2.0 + std::cos(M_PI * (y - 1.0)); };

    auto circle = build_circle(ny, 2.0, climit);
    circle.base_point = ny / 2; // aligned with the torus chart origin y = 0
    auto cspec = eigendecompose(circle, circle.vertex_count);
    const double delta = 0.25;
    auto times = detail::time_net(delta);

    std::vector<int> yidx;
    for (int k = 0; k < npts; ++k) yidx.push_back(k * ny / npts);
    std::vector<int> cnet = yidx;
    std::vector<Eigen::MatrixXd> cvals;
    for (double t : times) cvals.push_back(heat_kernel_matrix(cspec, cnet, t));

    std::vector<double> disc_col, mgh_col;
    std::vector<int> warm_f, warm_b;
    for (double sigma : sigmas) {
        auto torus = build_warped_torus(ny, nz, sigma, cprof);
        auto tspec = eigendecompose(torus, std::min(torus.vertex_count, 700));
        std::vector<int> tnet;
        for (int iy : yidx) tnet.push_back(iy * nz + 0);
        double disc = 0.0;
        for (size_t l = 0; l < times.size(); ++l) {
            Eigen::MatrixXd Ht = heat_kernel_matrix(tspec, tnet, times[l]);
            disc = std::max(disc, (Ht - cvals[l]).cwiseAbs().maxCoeff());
        }
        auto tn = sampled_net(torus, tnet);
        auto cn = sampled_net(circle, cnet);
        MghEstimate est = warm_f.empty() ? d_mgh_estimate(tn, cn)
                                         : d_mgh_estimate(tn, cn, 8, &warm_f, &warm_b);
        warm_f = est.map_fwd;
        warm_b = est.map_bwd;
        disc_col.push_back(disc);
        mgh_col.push_back(est.epsilon);
    }
    for (size_t i = 1; i < sigmas.size(); ++i) {
        if (disc_col[i] > disc_col[i - 1] + 1e-12) return false;
        if (mgh_col[i] > mgh_col[i - 1] + 1e-12) return false;
    }
    return seconds_since(t0) < 120.0;
}

bool c5_spectral_round_trip() {
    // forward model truncated so every pole is resolvable from times >= delta
    auto s = build_circle(128, 2.0 * M_PI);
    auto spec = eigendecompose(s, 15);
    auto data = sample_phd(spec, M_PI, 0.1); // full circle, fine net
    auto lsd = fit_spectral_data(data, 12);
    if (lsd.mode_count() < 7) return false;
    for (int k = 0; k < 7; ++k)
        if (std::abs(lsd.eigenvalues(k) - spec.eigenvalues(k)) >
            1e-4 * std::max(spec.eigenvalues(k), 1.0))
            return false;
    auto truth = lsd_from_spectral(spec, data.net_points, 7);
    for (size_t c = 0; c < truth.cluster_start.size(); ++c) {
        const int j0 = truth.cluster_start[c], m = truth.multiplicities[c];
        if (j0 + m > lsd.mode_count()) return false;
        Eigen::MatrixXd Rf =
            lsd.phi_values.middleCols(j0, m) * lsd.phi_values.middleCols(j0, m).transpose();
        Eigen::MatrixXd Rt = truth.phi_values.middleCols(j0, m) *
                             truth.phi_values.middleCols(j0, m).transpose();
        if ((Rf - Rt).operatorNorm() > 1e-3) return false;
    }
    return true;
}

bool c6_metric_density() {
    auto T = make_truth(build_circle(256, 2.0 * M_PI, [](double y) { return 2.0 + std::cos(y); }),
                        12, 0.05, 10);
    T.lsd.dim_estimate = 1;
    int center = 0;
    for (size_t a = 0; a < T.net.size(); ++a)
        if (T.net[a] == T.space.base_point) center = int(a);
    auto ch = select_chart(T.lsd, center, &T.dist);
    auto R = recover_metric_density(T.lsd, ch);
    if (R.diagnostics["mass_normalization_defect"] >= 1e-6) return false;

    // convert back to the angular frame with a local fit of dx/dy; the truth
    // there is h = 1 and d(ln rho)/dy = -sin y / (2 + cos y)
    const int M = int(R.points.size());
    std::vector<double> yc(M), xc(M);
    for (int m = 0; m < M; ++m) {
        double y = T.space.coords(T.net[R.points[m]], 0);
        if (y > M_PI) y -= 2.0 * M_PI;
        yc[m] = y;
        xc[m] = ch.coords(R.points[m], 0);
    }
    std::vector<int> ord(M);
    std::iota(ord.begin(), ord.end(), 0);
    std::sort(ord.begin(), ord.end(), [&](int u, int v) { return yc[u] < yc[v]; });
    const double sup_dlnrho = 1.0 / std::sqrt(3.0); // sup |sin y / (2 + cos y)|
    int checked = 0;
    for (int i = 1; i + 1 < M; ++i) {
        const int u = ord[i - 1], m = ord[i], v = ord[i + 1];
        const double dxdy = (xc[v] - xc[u]) / (yc[v] - yc[u]);
        const double expect = dxdy * dxdy;
        if (expect < 0.2) continue; // near-critical points of the chart map
        if (std::abs(R.metric_inv[m](0, 0) / expect - 1.0) > 0.02) return false;
        const double truth = -std::sin(yc[m]) / (2.0 + std::cos(yc[m]));
        if (std::abs(R.dlnrho[m](0) * dxdy - truth) > 0.05 * sup_dlnrho) return false;
        ++checked;
    }
    return checked >= 5;
}

bool c7_bc_oracles() {
    // one mode per net point: the sampled eigenvectors then form a frame in
    // which point supports are resolved, so projectors compare pointwise
    auto s = build_circle(128, 2.0 * M_PI);
    auto spec = eigendecompose(s, 90);
    auto net = detail::greedy_net(s, 1e9, 0.05);
    auto lsd = lsd_from_spectral(spec, net, int(net.size()));
    const int N = lsd.net_size();
    Eigen::MatrixXd D(N, N);
    int base = 0;
    for (int a = 0; a < N; ++a) {
        if (net[a] == s.base_point) base = a;
        Eigen::VectorXd da = shortest_distances(s, net[a]);
        for (int b = 0; b < N; ++b) D(a, b) = da(net[b]);
    }

    // projector vs characteristic-function oracle at K = 15
    const int K = 15;
    const double src_r = 0.6, src_s = 0.5;
    std::vector<int> W;
    for (int a = 0; a < N; ++a)
        if (D(base, a) <= src_r + 1e-12) W.push_back(a);
    auto P = influence_projector(lsd, W, src_s, K);
    Eigen::MatrixXd O = Eigen::MatrixXd::Zero(K, K);
    for (int v = 0; v < N; ++v) {
        double dW = 1e18;
        for (int w : W) dW = std::min(dW, D(v, w));
        if (dW > src_s + 1e-12) continue;
        O += lsd.quadrature(v) * lsd.phi_values.row(v).head(K).transpose() *
             lsd.phi_values.row(v).head(K);
    }
    if ((P.matrix - O).operatorNorm() > 5e-2) return false;

    // wave Fourier coefficients vs a leapfrog oracle on the full vertex set
    {
        std::vector<int> all(s.vertex_count);
        std::iota(all.begin(), all.end(), 0);
        auto flsd = lsd_from_spectral(spec, all, 40);
        auto src = [&](int i, double t) {
            const double y = s.coords(i, 0);
            return (2.0 + std::cos(y)) * std::sin(2.0 * t);
        };
        const int S = 201;
        std::vector<double> st(S);
        Eigen::MatrixXd F(s.vertex_count, S);
        for (int l = 0; l < S; ++l) {
            st[l] = l * (1.0 / (S - 1));
            for (int i = 0; i < s.vertex_count; ++i) F(i, l) = src(i, st[l]);
        }
        auto U = wave_fourier_coefficients(flsd, F, st, {1.0});

        auto op = assemble_weighted_laplacian(s);
        Eigen::VectorXd minv = op.mass.cwiseInverse();
        const int steps = 334;
        const double dt = 1.0 / steps;
        Eigen::VectorXd up = Eigen::VectorXd::Zero(s.vertex_count);
        Eigen::VectorXd f0(s.vertex_count);
        for (int i = 0; i < s.vertex_count; ++i) f0(i) = src(i, 0.0);
        Eigen::VectorXd u = 0.5 * dt * dt * f0;
        for (int k = 1; k < steps; ++k) {
            const double t = k * dt;
            Eigen::VectorXd f(s.vertex_count);
            for (int i = 0; i < s.vertex_count; ++i) f(i) = src(i, t);
            Eigen::VectorXd un =
                2.0 * u - up +
                dt * dt * (f - minv.cwiseProduct(op.stiffness * u));
            up = u;
            u = un;
        }
        double num = 0.0, den = 0.0;
        for (int j = 0; j < 10; ++j) {
            const double w = 1.0 + flsd.eigenvalues(j);
            const double truth = flsd.phi_values.col(j).dot(s.weights.cwiseProduct(u));
            num += w * (U(j, 0) - truth) * (U(j, 0) - truth);
            den += w * truth * truth;
        }
        if (std::sqrt(num / den) > 0.01) return false;
    }

    // annulus slice measure vs the Dijkstra weight-sum oracle
    const double r_in = 0.5, r_out = 1.2;
    auto Pout = influence_projector(lsd, {base}, r_out, K);
    auto Pin = influence_projector(lsd, {base}, r_in, K);
    auto slice = slicing_inner_products({Pout, Pin});
    double mass = 0.0;
    for (int v = 0; v < N; ++v)
        if (D(base, v) > r_in + 1e-12 && D(base, v) <= r_out + 1e-12)
            mass += lsd.quadrature(v);
    return std::abs(slice.matrix(0, 0) - mass) <= 5e-2;
}

bool c8_geometry_recovery() {
    // reconstructed distances vs Dijkstra on the circle, within 2 * delta
    auto T = make_truth(build_circle(128, 2.0 * M_PI), 30, 0.25, 30);
    auto Dd = reconstruct_distances(T.lsd);
    const int N = int(T.net.size());
    double worst = 0.0;
    for (int a = 0; a < N; ++a)
        for (int b = 0; b < N; ++b) worst = std::max(worst, std::abs(Dd(a, b) - T.dist(a, b)));
    if (worst > 0.5) return false;

    // circle injectivity radius: L/2 within one grid step
    auto circ = build_circle(64, 2.0 * M_PI);
    const double h = circ.mesh_h;
    Eigen::MatrixXd Dc = distance_matrix(circ);
    auto est = injectivity_radius(Dc, circ.weights, 0, 1.5, h, 1.5 * h);
    if (!est.bracketed || std::abs(est.value - M_PI) > h + 1e-9) return false;

    // orbifold: i(x) bounded by the distance to the singular endpoints
    auto orb = build_interval_orbifold(64, M_PI);
    const double ho = orb.mesh_h;
    Eigen::MatrixXd Do = distance_matrix(orb);
    for (int x = 1; x + 1 < orb.vertex_count; ++x) {
        auto eo = injectivity_radius(Do, orb.weights, x, 1.5, ho, 1.5 * ho);
        const double dend = std::min(Do(x, 0), Do(x, orb.vertex_count - 1));
        if (!eo.bracketed) return false;
        if (eo.value > dend + ho + 1e-9) return false;
    }
    return true;
}

bool c9_mgh_axioms() {
    // identity: exact zero in exhaustive mode
    auto s = build_circle(8, 2.0 * M_PI, [](double y) { return 2.0 + std::cos(y); });
    if (d_mgh_estimate(s, s).epsilon != 0.0) return false;

    // factor-2 almost-triangle inequality on 20 random exhaustive triples
    std::mt19937 rng(2024);
    std::uniform_real_distribution<double> amp(0.0, 0.5), phase(0.0, 2.0 * M_PI);
    auto random_circle = [&]() {
        const double a = amp(rng), b = phase(rng);
        return build_circle(7, 2.0 * M_PI,
                            [a, b](double y) { return 1.0 + a * std::cos(y + b); });
    };
    for (int trial = 0; trial < 20; ++trial) {
        auto A = random_circle();
        auto B = random_circle();
        auto C = random_circle();
        auto rep = almost_triangle_check(d_mgh_estimate(A, B), d_mgh_estimate(A, C),
                                         d_mgh_estimate(C, B));
        if (!rep.holds) return false;
    }

    // gauge invariance: per-eigenspace orthogonal rotations leave every
    // inverse output unchanged to 1e-8
    auto T = make_truth(build_circle(96, 2.0 * M_PI), 16, 0.3, 9);
    T.lsd.dim_estimate = 1;
    std::mt19937 grng(5);
    std::normal_distribution<double> G(0.0, 1.0);
    LocalSpectralData rotated = T.lsd;
    for (size_t c = 0; c < T.lsd.cluster_start.size(); ++c) {
        const int j0 = T.lsd.cluster_start[c], m = T.lsd.multiplicities[c];
        Eigen::MatrixXd A(m, m);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < m; ++j) A(i, j) = G(grng);
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(A);
        Eigen::MatrixXd Q = qr.householderQ();
        rotated.phi_values.middleCols(j0, m) = T.lsd.phi_values.middleCols(j0, m) * Q;
    }
    rotated.dim_estimate = 1;
    auto D1 = reconstruct_distances(T.lsd);
    auto D2 = reconstruct_distances(rotated);
    if ((D1 - D2).cwiseAbs().maxCoeff() > 1e-8) return false;
    auto S1 = slicing_inner_products({influence_projector(T.lsd, {0}, 1.2, 6),
                                      influence_projector(T.lsd, {0}, 0.5, 6)});
    auto S2 = slicing_inner_products({influence_projector(rotated, {0}, 1.2, 6),
                                      influence_projector(rotated, {0}, 0.5, 6)});
    if ((S1.matrix - S2.matrix).cwiseAbs().maxCoeff() > 1e-8) return false;
    int center = 0;
    for (size_t a = 0; a < T.net.size(); ++a)
        if (T.net[a] == T.space.base_point) center = int(a);
    auto ch1 = select_chart(T.lsd, center, &T.dist);
    auto ch2 = select_chart(rotated, center, &T.dist);
    auto R1 = recover_metric_density(T.lsd, ch1);
    auto R2 = recover_metric_density(rotated, ch2);
    if (R1.points != R2.points) return false;
    for (size_t m = 0; m < R1.points.size(); ++m) {
        if ((R1.metric_inv[m] - R2.metric_inv[m]).cwiseAbs().maxCoeff() > 1e-8) return false;
        if ((R1.dlnrho[m] - R2.dlnrho[m]).cwiseAbs().maxCoeff() > 1e-8) return false;
    }
    return (R1.rho - R2.rho).cwiseAbs().maxCoeff() <= 1e-8;
}

bool c10_stability_trend() {
    auto space = build_circle(256, 2.0 * M_PI);
    auto spec = eigendecompose(space, 256);
    auto clean = sample_phd(spec, diameter(space), 0.2);
    auto truth_net = sampled_net(space, clean.net_points);

    std::vector<double> xs, ys;
    for (double noise : {0.0, 1e-4, 1e-3, 1e-2}) {
        for (unsigned long long seed : {1ULL, 2ULL, 3ULL}) {
            auto data = perturb(clean, noise, seed);
            auto lsd = fit_spectral_data(data, 40);
            auto D = reconstruct_distances(lsd);
            MetricMeasureNet rec;
            rec.dist = D;
            rec.weights = lsd.quadrature.cwiseMax(0.0);
            rec.weights /= rec.weights.sum();
            rec.base = data.base_hint;
            xs.push_back(noise);
            ys.push_back(d_mgh_estimate(rec, truth_net).epsilon);
        }
    }
    return spearman(xs, ys) > 0.0;
}

} // namespace

int main() {
    Eigen::setNbThreads(1);
    criterion(1, "uniform circle spectrum within 1% in under 10 s", c1_forward_spectrum);
    criterion(2, "stochastic completeness and semigroup identity on all models",
              c2_heat_invariants);
    criterion(3, "truncation tail dominated by the fitted envelope on a 5x5 grid",
              c3_truncation_envelope);
    criterion(4, "collapse sweep discrepancy and mgh columns non-increasing in under 2 min",
              c4_collapse_monotone);
    criterion(5, "noiseless round trip: eigenvalues to 1e-4, residues to 1e-3",
              c5_spectral_round_trip);
    criterion(6, "weighted circle: metric within 2%, density gradient within 5% sup-norm",
              c6_metric_density);
    criterion(7, "projector, wave-coefficient, and slicing oracles agree", c7_bc_oracles);
    criterion(8, "distances within twice the net fineness; injectivity radii bracketed",
              c8_geometry_recovery);
    criterion(9, "mgh identity, factor-2 triangle, gauge invariance of inverse outputs",
              c9_mgh_axioms);
    criterion(10, "reconstruction error grows with noise (positive Spearman)",
              c10_stability_trend);
    std::printf("%d criteria failed\n", failures);
    return failures;
}
