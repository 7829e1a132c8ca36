#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "heatbc/space.hpp"
#include "heatbc/spectral.hpp"

namespace heatbc {

/// Heat-kernel samples H(z_a, z_b, t_l) on a point net and a time net.
struct PointHeatData {
    std::vector<int> net_points;        // vertex indices z_a
    std::vector<double> times;          // strictly increasing, in (delta, 1/delta)
    std::vector<Eigen::MatrixXd> values; // values[l](a,b) = H(z_a, z_b, t_l)
    double delta = 0.0;                 // net fineness
    double radius = 0.0;
    bool averaged = false;
    int base_hint = 0;                  // net index nearest the base point
    unsigned long long seed = 0;        // last perturbation seed (0 = clean)
};

namespace detail {

/// Greedy farthest-point sampling delta-net of the ball B(p, r).
inline std::vector<int> greedy_net(const DiscreteSpace& s, double r, double delta) {
    Eigen::VectorXd dp = shortest_distances(s, s.base_point);
    std::vector<int> ball;
    for (int i = 0; i < s.vertex_count; ++i)
        if (dp(i) <= r + 1e-12) ball.push_back(i);
    std::vector<int> net{s.base_point};
    Eigen::VectorXd dnet = shortest_distances(s, s.base_point);
    while (true) {
        double worst = -1.0;
        int arg = -1;
        for (int i : ball)
            if (dnet(i) > worst) {
                worst = dnet(i);
                arg = i;
            }
        if (worst <= delta + 1e-12) break;
        net.push_back(arg);
        Eigen::VectorXd d2 = shortest_distances(s, arg);
        dnet = dnet.cwiseMin(d2);
    }
    std::sort(net.begin(), net.end());
    return net;
}

/// Time net on (delta, 1/delta): a uniform head of spacing delta/2 up to T1,
/// then a geometric tail, refined so consecutive gaps never exceed delta.
inline std::vector<double> time_net(double delta) {
    const double t_lo = delta;
    const double t_hi = 1.0 / delta;
    const double head_dt = delta / 2.0;
    const double T1 = std::min(t_hi, std::max(4.0 * delta, 2.0));
    std::vector<double> ts;
    for (double t = t_lo; t <= T1 + 1e-12; t += head_dt) ts.push_back(t);
    double t = ts.back();
    const double ratio = 1.3;
    while (t < t_hi) {
        double step = std::min(t * (ratio - 1.0), delta * 40.0);
        t += std::max(step, head_dt);
        ts.push_back(std::min(t, t_hi));
    }
    // refine to delta-density and deduplicate
    std::vector<double> out;
    for (size_t i = 0; i + 1 < ts.size(); ++i) {
        out.push_back(ts[i]);
        const double gap = ts[i + 1] - ts[i];
        if (gap > delta) {
            const int k = int(std::ceil(gap / delta));
            for (int j = 1; j < k; ++j) out.push_back(ts[i] + gap * j / k);
        }
    }
    out.push_back(ts.back());
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end(),
                          [](double a, double b) { return std::abs(a - b) < 1e-12; }),
              out.end());
    return out;
}

} // namespace detail

inline PointHeatData sample_phd(const SpectralData& spec, double r, double delta) {
    if (!spec.source_space)
        throw std::invalid_argument("sample_phd: SpectralData carries no source space");
    const DiscreteSpace& s = *spec.source_space;
    if (delta < s.mesh_h)
        throw std::invalid_argument("sample_phd: delta " + std::to_string(delta) +
                                    " below mesh spacing " + std::to_string(s.mesh_h) +
                                    "; refine the mesh or coarsen the net");
    PointHeatData d;
    d.delta = delta;
    d.radius = r;
    d.net_points = detail::greedy_net(s, r, delta);
    d.times = detail::time_net(delta);
    d.base_hint = 0;
    for (size_t a = 0; a < d.net_points.size(); ++a)
        if (d.net_points[a] == s.base_point) d.base_hint = int(a);
    d.values.reserve(d.times.size());
    for (double t : d.times) d.values.push_back(heat_kernel_matrix(spec, d.net_points, t));
    return d;
}

inline PointHeatData averaged_phd(const SpectralData& spec, double r, double delta, double eps) {
    if (!spec.source_space)
        throw std::invalid_argument("averaged_phd: SpectralData carries no source space");
    const DiscreteSpace& s = *spec.source_space;
    if (eps < s.mesh_h * (1.0 - 1e-12))
        throw std::invalid_argument("averaged_phd: ball radius below mesh spacing");
    PointHeatData d = sample_phd(spec, r, delta);
    d.averaged = true;
    const int N = int(d.net_points.size());
    // ball membership and masses
    std::vector<std::vector<int>> balls(N);
    std::vector<double> mu(N, 0.0);
    for (int a = 0; a < N; ++a) {
        Eigen::VectorXd dz = shortest_distances(s, d.net_points[a]);
        for (int i = 0; i < s.vertex_count; ++i)
            if (dz(i) <= eps + 1e-12) {
                balls[a].push_back(i);
                mu[a] += s.weights(i);
            }
    }
    for (size_t l = 0; l < d.times.size(); ++l) {
        Eigen::MatrixXd H(N, N);
        for (int a = 0; a < N; ++a)
            for (int b = a; b < N; ++b) {
                double acc = 0.0;
                for (int i : balls[a])
                    for (int j : balls[b])
                        acc += s.weights(i) * s.weights(j) *
                               heat_kernel(spec, i, j, d.times[l]);
                H(a, b) = H(b, a) = acc / (mu[a] * mu[b]);
            }
        d.values[l] = H;
    }
    return d;
}

inline PointHeatData perturb(const PointHeatData& data, double delta_noise,
                             unsigned long long seed) {
    PointHeatData out = data;
    out.seed = seed;
    if (delta_noise <= 0) return out;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> U(-delta_noise, delta_noise);
    const int N = int(data.net_points.size());
    for (size_t l = 0; l < data.times.size(); ++l)
        for (int a = 0; a < N; ++a)
            for (int b = a; b < N; ++b) {
                const double dv = U(rng);
                out.values[l](a, b) = data.values[l](a, b) + dv;
                out.values[l](b, a) = out.values[l](a, b);
            }
    return out;
}

/// Max over matched (alpha, beta, ell) of |H - H'|. `matching` maps net
/// indices of `a` onto net indices of `b`; time nets must agree in length.
inline double phd_discrepancy(const PointHeatData& a, const PointHeatData& b,
                              const std::vector<int>& matching) {
    if (matching.size() != a.net_points.size() ||
        a.net_points.size() != b.net_points.size())
        throw std::invalid_argument("phd_discrepancy: net cardinality mismatch");
    if (a.times.size() != b.times.size())
        throw std::invalid_argument("phd_discrepancy: time net mismatch");
    const int N = int(a.net_points.size());
    double worst = 0.0;
    for (size_t l = 0; l < a.times.size(); ++l)
        for (int p = 0; p < N; ++p)
            for (int q = 0; q < N; ++q)
                worst = std::max(worst,
                                 std::abs(a.values[l](p, q) -
                                          b.values[l](matching[p], matching[q])));
    return worst;
}

inline void phd_save(const PointHeatData& d, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("phd_save: cannot open " + path);
    char buf[64];
    auto g17 = [&](double x) {
        std::snprintf(buf, sizeof buf, "%.17g", x);
        return std::string(buf);
    };
    f << "# phd v1\n";
    f << "delta " << g17(d.delta) << "\n";
    f << "radius " << g17(d.radius) << "\n";
    f << "net_size " << d.net_points.size() << "\n";
    f << "time_size " << d.times.size() << "\n";
    f << "averaged " << (d.averaged ? 1 : 0) << "\n";
    f << "base_hint " << d.base_hint << "\n";
    f << "seed " << d.seed << "\n";
    f << "net";
    for (int z : d.net_points) f << " " << z;
    f << "\n";
    f << "alpha,beta,ell,t,H\n";
    const int N = int(d.net_points.size());
    for (size_t l = 0; l < d.times.size(); ++l)
        for (int a = 0; a < N; ++a)
            for (int b = a; b < N; ++b)
                f << a << "," << b << "," << l << "," << g17(d.times[l]) << ","
                  << g17(d.values[l](a, b)) << "\n";
}

inline PointHeatData phd_load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("phd_load: cannot open " + path);
    std::string line;
    if (!std::getline(f, line) || line.rfind("# phd", 0) != 0)
        throw std::runtime_error("phd_load: bad header in " + path);
    PointHeatData d;
    size_t net_size = 0, time_size = 0;
    auto expect = [&](const char* key) {
        if (!std::getline(f, line)) throw std::runtime_error("phd_load: truncated file");
        std::istringstream is(line);
        std::string k;
        is >> k;
        if (k != key) throw std::runtime_error("phd_load: expected key " + std::string(key));
        return is;
    };
    { auto is = expect("delta"); is >> d.delta; }
    { auto is = expect("radius"); is >> d.radius; }
    { auto is = expect("net_size"); is >> net_size; }
    { auto is = expect("time_size"); is >> time_size; }
    { int av; auto is = expect("averaged"); is >> av; d.averaged = av != 0; }
    { auto is = expect("base_hint"); is >> d.base_hint; }
    { auto is = expect("seed"); is >> d.seed; }
    {
        auto is = expect("net");
        int z;
        while (is >> z) d.net_points.push_back(z);
        if (d.net_points.size() != net_size)
            throw std::runtime_error("phd_load: net size mismatch");
    }
    if (!std::getline(f, line) || line != "alpha,beta,ell,t,H")
        throw std::runtime_error("phd_load: missing CSV header");
    d.times.assign(time_size, 0.0);
    d.values.assign(time_size, Eigen::MatrixXd::Zero(net_size, net_size));
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream is(line);
        int a, b;
        size_t l;
        double t, H;
        char c;
        if (!(is >> a >> c >> b >> c >> l >> c >> t >> c >> H))
            throw std::runtime_error("phd_load: malformed row: " + line);
        if (l >= time_size || a < 0 || b < 0 || size_t(a) >= net_size || size_t(b) >= net_size)
            throw std::runtime_error("phd_load: index out of range: " + line);
        d.times[l] = t;
        d.values[l](a, b) = H;
        d.values[l](b, a) = H;
    }
    return d;
}

} // namespace heatbc
