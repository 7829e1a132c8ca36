#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <queue>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace heatbc {

/// Graph edge with chart length and unnormalized conductance
/// (average of rho*sqrt(det h)*h^{dd} across endpoints times the dual
/// cross-section, divided by the edge length).
struct Edge {
    int u = 0;
    int v = 0;
    double length = 0.0;
    double conductance = 0.0;
};

/// Weighted-graph approximation of a pointed metric-measure space.
/// Immutable after construction; builders are pure functions.
struct DiscreteSpace {
    int vertex_count = 0;
    int dim = 1;
    Eigen::MatrixXd coords;                       // n x chart_dim
    std::vector<Edge> edges;
    Eigen::VectorXd weights;                      // probability masses, sum 1
    Eigen::VectorXd density;                      // rho samples
    std::vector<Eigen::MatrixXd> metric_samples;  // dim x dim per vertex
    int base_point = 0;
    std::vector<char> singular_flags;
    double mesh_h = 0.0;       // chart grid spacing (max over directions)
    double total_volume = 0.0; // sum of rho*sqrt(det h)*cell before normalization
};

namespace detail {

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

} // namespace detail

/// Uniform circle grid of circumference `length` with measure density c(y).
inline DiscreteSpace build_circle(int n, double length,
                                  const std::function<double(double)>& c) {
    detail::require(n >= 3, "build_circle: need n >= 3");
    detail::require(length > 0, "build_circle: need length > 0");
    const double h = length / n;

    DiscreteSpace s;
    s.vertex_count = n;
    s.dim = 1;
    s.mesh_h = h;
    s.coords.resize(n, 1);
    s.density.resize(n);
    s.weights.resize(n);
    s.singular_flags.assign(n, 0);
    s.metric_samples.assign(n, Eigen::MatrixXd::Identity(1, 1));

    for (int i = 0; i < n; ++i) {
        const double y = i * h;
        const double ci = c(y);
        detail::require(ci > 0, "build_circle: non-positive density sample");
        s.coords(i, 0) = y;
        s.density(i) = ci;
    }
    // cell mass = rho * h (sqrt(det h) = 1); normalize to a probability measure
    s.total_volume = s.density.sum() * h;
    s.weights = s.density * h / s.total_volume;

    s.edges.reserve(n);
    for (int i = 0; i < n; ++i) {
        const int j = (i + 1) % n;
        Edge e;
        e.u = i;
        e.v = j;
        e.length = h;
        e.conductance = 0.5 * (s.density(i) + s.density(j)) / h;
        s.edges.push_back(e);
    }
    s.base_point = 0;
    return s;
}

inline DiscreteSpace build_circle(int n, double length) {
    return build_circle(n, length, [](double) { return 1.0; });
}

/// Product grid on [-1,1]^2 with periodic identification and warped metric
/// diag(1, sigma^2 c(y)^2).
inline DiscreteSpace build_warped_torus(int ny, int nz, double sigma,
                                        const std::function<double(double)>& c) {
    detail::require(ny >= 3 && nz >= 3, "build_warped_torus: need ny,nz >= 3");
    detail::require(sigma > 0, "build_warped_torus: need sigma > 0");
    const double hy = 2.0 / ny;
    const double hz = 2.0 / nz;
    const int n = ny * nz;

    DiscreteSpace s;
    s.vertex_count = n;
    s.dim = 2;
    s.mesh_h = std::max(hy, hz);
    s.coords.resize(n, 2);
    s.density.resize(n);
    s.weights.resize(n);
    s.singular_flags.assign(n, 0);
    s.metric_samples.resize(n);

    auto id = [&](int iy, int iz) { return ((iy % ny + ny) % ny) * nz + (iz % nz + nz) % nz; };

    Eigen::VectorXd cy(ny);
    for (int iy = 0; iy < ny; ++iy) {
        const double y = -1.0 + iy * hy;
        cy(iy) = c(y);
        detail::require(cy(iy) > 0, "build_warped_torus: non-positive profile sample");
    }

    for (int iy = 0; iy < ny; ++iy) {
        for (int iz = 0; iz < nz; ++iz) {
            const int i = id(iy, iz);
            s.coords(i, 0) = -1.0 + iy * hy;
            s.coords(i, 1) = -1.0 + iz * hz;
            s.density(i) = 1.0;
            Eigen::MatrixXd g(2, 2);
            g << 1.0, 0.0, 0.0, sigma * sigma * cy(iy) * cy(iy);
            s.metric_samples[i] = g;
        }
    }
    // area element sqrt(det h) = sigma*c(y)
    double vol = 0.0;
    for (int iy = 0; iy < ny; ++iy)
        for (int iz = 0; iz < nz; ++iz) vol += sigma * cy(iy) * hy * hz;
    s.total_volume = vol;
    for (int iy = 0; iy < ny; ++iy)
        for (int iz = 0; iz < nz; ++iz)
            s.weights(id(iy, iz)) = sigma * cy(iy) * hy * hz / vol;

    s.edges.reserve(2 * n);
    for (int iy = 0; iy < ny; ++iy) {
        for (int iz = 0; iz < nz; ++iz) {
            // y-direction edge: coefficient rho*sqrt(h)*h^{yy} = sigma*c
            {
                Edge e;
                e.u = id(iy, iz);
                e.v = id(iy + 1, iz);
                e.length = hy;
                const double coef = 0.5 * sigma * (cy(iy) + cy((iy + 1) % ny));
                e.conductance = coef * hz / hy;
                s.edges.push_back(e);
            }
            // z-direction edge: coefficient sigma*c * 1/(sigma^2 c^2) = 1/(sigma*c)
            {
                Edge e;
                e.u = id(iy, iz);
                e.v = id(iy, iz + 1);
                e.length = sigma * cy(iy) * hz; // Riemannian length of the fiber step
                const double coef = 1.0 / (sigma * cy(iy));
                e.conductance = coef * hy / hz;
                s.edges.push_back(e);
            }
        }
    }
    s.base_point = id(ny / 2, nz / 2); // chart origin (y,z) ~ (0,0)
    return s;
}

inline DiscreteSpace build_warped_torus(int ny, int nz, double sigma) {
    return build_warped_torus(ny, nz, sigma, [](double) { return 1.0; });
}

/// Path graph of length L; endpoints are singular (reflection quotient of a
/// circle), carry half-cells and Neumann-type stencils.
inline DiscreteSpace build_interval_orbifold(int n, double length) {
    detail::require(n >= 3, "build_interval_orbifold: need n >= 3");
    detail::require(length > 0, "build_interval_orbifold: need length > 0");
    const double h = length / (n - 1);

    DiscreteSpace s;
    s.vertex_count = n;
    s.dim = 1;
    s.mesh_h = h;
    s.coords.resize(n, 1);
    s.density = Eigen::VectorXd::Ones(n);
    s.weights.resize(n);
    s.singular_flags.assign(n, 0);
    s.singular_flags[0] = 1;
    s.singular_flags[n - 1] = 1;
    s.metric_samples.assign(n, Eigen::MatrixXd::Identity(1, 1));

    for (int i = 0; i < n; ++i) s.coords(i, 0) = i * h;
    Eigen::VectorXd cell = Eigen::VectorXd::Constant(n, h);
    cell(0) = cell(n - 1) = 0.5 * h;
    s.total_volume = cell.sum();
    s.weights = cell / s.total_volume;

    for (int i = 0; i + 1 < n; ++i) {
        Edge e;
        e.u = i;
        e.v = i + 1;
        e.length = h;
        e.conductance = 1.0 / h;
        s.edges.push_back(e);
    }
    s.base_point = n / 2;
    return s;
}

/// Single-source Dijkstra over edge lengths.
inline Eigen::VectorXd shortest_distances(const DiscreteSpace& s, int src) {
    detail::require(src >= 0 && src < s.vertex_count, "shortest_distances: bad vertex");
    std::vector<std::vector<std::pair<int, double>>> adj(s.vertex_count);
    for (const auto& e : s.edges) {
        adj[e.u].push_back({e.v, e.length});
        adj[e.v].push_back({e.u, e.length});
    }
    const double inf = std::numeric_limits<double>::infinity();
    Eigen::VectorXd dist = Eigen::VectorXd::Constant(s.vertex_count, inf);
    dist(src) = 0.0;
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<Item>> pq;
    pq.push({0.0, src});
    while (!pq.empty()) {
        auto [d, u] = pq.top();
        pq.pop();
        if (d > dist(u)) continue;
        for (auto [v, len] : adj[u]) {
            if (dist(u) + len < dist(v)) {
                dist(v) = dist(u) + len;
                pq.push({dist(v), v});
            }
        }
    }
    for (int i = 0; i < s.vertex_count; ++i)
        if (!std::isfinite(dist(i)))
            throw std::runtime_error("shortest_distances: graph is disconnected");
    return dist;
}

inline double shortest_distance(const DiscreteSpace& s, int i, int j) {
    return shortest_distances(s, i)(j);
}

inline Eigen::MatrixXd distance_matrix(const DiscreteSpace& s) {
    Eigen::MatrixXd d(s.vertex_count, s.vertex_count);
    for (int i = 0; i < s.vertex_count; ++i) d.row(i) = shortest_distances(s, i).transpose();
    return d;
}

inline double diameter(const DiscreteSpace& s) {
    double d = 0.0;
    for (int i = 0; i < s.vertex_count; ++i) d = std::max(d, shortest_distances(s, i).maxCoeff());
    return d;
}

/// Check the structural invariants shared by every built space.
inline void validate(const DiscreteSpace& s) {
    detail::require(s.vertex_count > 0, "space: empty");
    detail::require(std::abs(s.weights.sum() - 1.0) < 1e-12, "space: weights must sum to 1");
    for (const auto& e : s.edges) detail::require(e.length > 0, "space: non-positive edge length");
    for (int i = 0; i < s.vertex_count; ++i) {
        if (!s.singular_flags[i])
            detail::require(s.density(i) > 0, "space: non-positive density at regular vertex");
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s.metric_samples[i]);
        if (!s.singular_flags[i])
            detail::require(es.eigenvalues().minCoeff() > 0,
                            "space: metric sample not positive definite");
    }
    shortest_distances(s, 0); // throws if disconnected
}

inline nlohmann::json to_json(const DiscreteSpace& s) {
    nlohmann::json j;
    j["vertex_count"] = s.vertex_count;
    j["dim"] = s.dim;
    j["base_point"] = s.base_point;
    j["mesh_h"] = s.mesh_h;
    j["total_volume"] = s.total_volume;
    j["coords"] = std::vector<std::vector<double>>();
    for (int i = 0; i < s.vertex_count; ++i) {
        std::vector<double> row(s.coords.cols());
        for (int k = 0; k < s.coords.cols(); ++k) row[k] = s.coords(i, k);
        j["coords"].push_back(row);
    }
    j["weights"] = std::vector<double>(s.weights.data(), s.weights.data() + s.vertex_count);
    j["density"] = std::vector<double>(s.density.data(), s.density.data() + s.vertex_count);
    j["singular_flags"] = std::vector<int>(s.singular_flags.begin(), s.singular_flags.end());
    j["metric_samples"] = std::vector<std::vector<double>>();
    for (const auto& m : s.metric_samples) {
        std::vector<double> flat(m.data(), m.data() + m.size());
        j["metric_samples"].push_back(flat);
    }
    j["edges"] = std::vector<std::vector<double>>();
    for (const auto& e : s.edges)
        j["edges"].push_back({double(e.u), double(e.v), e.length, e.conductance});
    return j;
}

inline DiscreteSpace space_from_json(const nlohmann::json& j) {
    DiscreteSpace s;
    s.vertex_count = j.at("vertex_count").get<int>();
    s.dim = j.at("dim").get<int>();
    s.base_point = j.at("base_point").get<int>();
    s.mesh_h = j.at("mesh_h").get<double>();
    s.total_volume = j.at("total_volume").get<double>();
    const auto& coords = j.at("coords");
    const int cdim = coords.empty() ? 1 : int(coords[0].size());
    s.coords.resize(s.vertex_count, cdim);
    for (int i = 0; i < s.vertex_count; ++i)
        for (int k = 0; k < cdim; ++k) s.coords(i, k) = coords[i][k].get<double>();
    auto w = j.at("weights").get<std::vector<double>>();
    auto rho = j.at("density").get<std::vector<double>>();
    s.weights = Eigen::Map<Eigen::VectorXd>(w.data(), int(w.size()));
    s.density = Eigen::Map<Eigen::VectorXd>(rho.data(), int(rho.size()));
    for (int f : j.at("singular_flags").get<std::vector<int>>())
        s.singular_flags.push_back(char(f));
    for (const auto& m : j.at("metric_samples")) {
        auto flat = m.get<std::vector<double>>();
        const int d = int(std::lround(std::sqrt(double(flat.size()))));
        Eigen::MatrixXd g = Eigen::Map<Eigen::MatrixXd>(flat.data(), d, d);
        s.metric_samples.push_back(g);
    }
    for (const auto& e : j.at("edges")) {
        Edge ed;
        ed.u = int(e[0].get<double>());
        ed.v = int(e[1].get<double>());
        ed.length = e[2].get<double>();
        ed.conductance = e[3].get<double>();
        s.edges.push_back(ed);
    }
    return s;
}

} // namespace heatbc
