// Command-line harness: forward solves, PHD generation, inversion,
// mGH scoring, collapse and stability sweeps. Every command is a pure
// function of (config, input files, seed); reruns are byte-identical.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "heatbc/inverse.hpp"
#include "heatbc/mgh.hpp"
#include "heatbc/phd.hpp"
#include "heatbc/space.hpp"
#include "heatbc/spectral.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// exit codes per failing stage
constexpr int EXIT_PARSE = 2;
constexpr int EXIT_SOLVE = 3;
constexpr int EXIT_FIT = 4;
constexpr int EXIT_RECONSTRUCT = 5;
constexpr int EXIT_SCORE = 6;

struct StageError : std::runtime_error {
    int code;
    StageError(int c, const std::string& m) : std::runtime_error(m), code(c) {}
};

std::string g17(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

void write_text(const fs::path& path, const std::string& content) {
    fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp);
        if (!f) throw StageError(EXIT_PARSE, "cannot write " + path.string());
        f << content;
    }
    fs::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// config
// ---------------------------------------------------------------------------

void check_keys(const json& j, const std::string& where,
                const std::vector<std::string>& allowed) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
            throw StageError(EXIT_PARSE, "config: unknown key '" + it.key() + "' in " + where);
    }
}

void validate_config(const json& cfg) {
    check_keys(cfg, "top level",
               {"model", "model_b", "solver", "phd", "inverse", "mgh", "sweep", "output"});
    for (const char* mk : {"model", "model_b"})
        if (cfg.contains(mk))
            check_keys(cfg.at(mk), mk, {"name", "n", "length", "profile", "ny", "nz", "sigma"});
    if (cfg.contains("solver")) check_keys(cfg.at("solver"), "solver", {"modes"});
    if (cfg.contains("phd"))
        check_keys(cfg.at("phd"), "phd", {"r", "delta", "average_eps", "noise", "seed"});
    if (cfg.contains("inverse"))
        check_keys(cfg.at("inverse"), "inverse",
                   {"k_max", "eps0", "lambda_cut", "with_injectivity", "s_max"});
    if (cfg.contains("mgh")) check_keys(cfg.at("mgh"), "mgh", {"subsample", "exhaustive_limit"});
    if (cfg.contains("sweep"))
        check_keys(cfg.at("sweep"), "sweep", {"sigma", "noise", "seeds", "net_points"});
    if (cfg.contains("output")) check_keys(cfg.at("output"), "output", {"dir"});
    if (cfg.contains("phd")) {
        const auto& p = cfg.at("phd");
        if (p.value("delta", 0.1) <= 0) throw StageError(EXIT_PARSE, "config: phd.delta <= 0");
        if (p.value("noise", 0.0) > 0 && !p.contains("seed"))
            throw StageError(EXIT_PARSE, "config: phd.seed is mandatory when noise > 0");
    }
    if (cfg.contains("sweep")) {
        const auto& s = cfg.at("sweep");
        for (const char* g : {"sigma", "noise", "seeds"})
            if (s.contains(g) && s.at(g).empty())
                throw StageError(EXIT_PARSE, std::string("config: empty sweep grid ") + g);
    }
}

json load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw StageError(EXIT_PARSE, "cannot open config " + path);
    json cfg;
    try {
        f >> cfg;
    } catch (const std::exception& e) {
        throw StageError(EXIT_PARSE, std::string("config parse error: ") + e.what());
    }
    validate_config(cfg);
    return cfg;
}

std::function<double(double)> profile_by_name(const std::string& name) {
    if (name == "one") return [](double) { return 1.0; };
    if (name == "two_plus_cos") return [](double y) { return 2.0 + std::cos(y); };
    if (name == "two_plus_cos_pi") return [](double y) { return 2.0 + std::cos(M_PI * y); };
    if (name == "two_plus_cos_pi_shifted")
        return [](double y) { return 2.0 + std::cos(M_PI * (y - 1.0)); };
    throw StageError(EXIT_PARSE, "config: unknown profile '" + name + "'");
}

heatbc::DiscreteSpace build_model(const json& m) {
    const std::string name = m.value("name", "");
    try {
        if (name == "circle")
            return heatbc::build_circle(m.value("n", 512), m.value("length", 2.0 * M_PI),
                                        profile_by_name(m.value("profile", "one")));
        if (name == "warped_torus")
            return heatbc::build_warped_torus(m.value("ny", 48), m.value("nz", 24),
                                              m.value("sigma", 1.0),
                                              profile_by_name(m.value("profile", "one")));
        if (name == "interval_orbifold")
            return heatbc::build_interval_orbifold(m.value("n", 256), m.value("length", M_PI));
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(EXIT_PARSE, std::string("config: model: ") + e.what());
    }
    throw StageError(EXIT_PARSE, "config: unknown model '" + name + "'");
}

heatbc::SpectralData solve_model(const heatbc::DiscreteSpace& s, int modes) {
    try {
        return heatbc::eigendecompose(s, std::min(modes, s.vertex_count));
    } catch (const std::exception& e) {
        throw StageError(EXIT_SOLVE, std::string("eigensolve: ") + e.what());
    }
}

// Voronoi-mass net over a vertex subset of a space.
heatbc::MetricMeasureNet sampled_net(const heatbc::DiscreteSpace& s,
                                     const std::vector<int>& idx) {
    const int m = int(idx.size());
    heatbc::MetricMeasureNet net;
    net.dist.resize(m, m);
    Eigen::MatrixXd dists(m, s.vertex_count);
    for (int i = 0; i < m; ++i) dists.row(i) = heatbc::shortest_distances(s, idx[i]).transpose();
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
// commands
// ---------------------------------------------------------------------------

int cmd_forward(const json& cfg, const fs::path& out, int modes_override) {
    auto space = build_model(cfg.at("model"));
    const int K = modes_override > 0 ? modes_override
                                     : cfg.value("solver", json::object()).value("modes", 64);
    auto spec = solve_model(space, K);

    std::string ev = "index,eigenvalue\n";
    for (int j = 0; j < spec.mode_count; ++j)
        ev += std::to_string(j) + "," + g17(spec.eigenvalues(j)) + "\n";
    write_text(out / "eigenvalues.csv", ev);

    std::string hk = "i,j,t,H\n";
    const std::vector<double> ts{0.1, 1.0, 10.0};
    std::vector<int> pts{space.base_point};
    for (int k = 1; k <= 4; ++k) pts.push_back((space.base_point + k * space.vertex_count / 5) %
                                               space.vertex_count);
    for (double t : ts)
        for (int p : pts)
            hk += std::to_string(space.base_point) + "," + std::to_string(p) + "," + g17(t) +
                  "," + g17(heatbc::heat_kernel(spec, space.base_point, p, t)) + "\n";
    write_text(out / "heat_samples.csv", hk);

    auto weyl = heatbc::weyl_check(spec, space.dim);
    double sc_defect = 0.0, sg_defect = 0.0;
    for (double t : ts) {
        std::vector<int> all(space.vertex_count);
        std::iota(all.begin(), all.end(), 0);
        Eigen::MatrixXd H = heatbc::heat_kernel_matrix(spec, all, t);
        sc_defect = std::max(sc_defect,
                             ((H * space.weights).array() - 1.0).abs().maxCoeff());
        Eigen::MatrixXd H2 = heatbc::heat_kernel_matrix(spec, all, 2.0 * t);
        sg_defect = std::max(sg_defect, (H * space.weights.asDiagonal() * H - H2)
                                            .cwiseAbs()
                                            .maxCoeff());
    }
    json diag;
    diag["weyl_c"] = weyl.c_fit;
    diag["counting_C"] = weyl.count_C;
    diag["weyl_positive"] = weyl.positive;
    diag["stochastic_completeness_defect"] = sc_defect;
    diag["semigroup_defect"] = sg_defect;
    write_text(out / "forward_diagnostics.json", diag.dump(2) + "\n");
    return 0;
}

int cmd_phd(const json& cfg, const fs::path& out, int modes_override,
            long long seed_override) {
    auto space = build_model(cfg.at("model"));
    const int K = modes_override > 0 ? modes_override
                                     : cfg.value("solver", json::object()).value("modes",
                                                                                 space.vertex_count);
    auto spec = solve_model(space, K);
    const json p = cfg.value("phd", json::object());
    const double r = p.value("r", heatbc::diameter(space));
    const double delta = p.value("delta", 0.1);
    heatbc::PointHeatData data;
    try {
        const double avg = p.value("average_eps", 0.0);
        data = avg > 0 ? heatbc::averaged_phd(spec, r, delta, avg)
                       : heatbc::sample_phd(spec, r, delta);
    } catch (const std::exception& e) {
        throw StageError(EXIT_SOLVE, std::string("phd: ") + e.what());
    }
    const double noise = p.value("noise", 0.0);
    if (noise > 0) {
        const unsigned long long seed =
            seed_override >= 0 ? (unsigned long long)(seed_override)
                               : p.value("seed", 1ULL);
        data = heatbc::perturb(data, noise, seed);
    }
    fs::create_directories(out);
    heatbc::phd_save(data, (out / "phd.txt").string());
    return 0;
}

int cmd_invert(const json& cfg, const fs::path& out, const std::string& phd_path) {
    heatbc::PointHeatData data;
    try {
        data = heatbc::phd_load(phd_path);
    } catch (const std::exception& e) {
        throw StageError(EXIT_PARSE, std::string("phd parse: ") + e.what());
    }
    const json inv = cfg.value("inverse", json::object());
    heatbc::ReconstructionResult R;
    try {
        heatbc::DistanceOptions dopt;
        dopt.eps0 = inv.value("eps0", 0.1);
        dopt.s_max = inv.value("s_max", 0.0);
        R = heatbc::reconstruct_all(data, inv.value("k_max", 40), dopt,
                                    inv.value("with_injectivity", false));
    } catch (const std::exception& e) {
        // fitting and geometric stages share one pipeline; map fit-stage
        // errors by message prefix
        const std::string msg = e.what();
        if (msg.rfind("fit_spectral_data", 0) == 0 || msg.rfind("esprit", 0) == 0)
            throw StageError(EXIT_FIT, "fit: " + msg);
        throw StageError(EXIT_RECONSTRUCT, "reconstruct: " + msg);
    }

    json doc;
    doc["eigenvalues"] = std::vector<double>(
        R.lsd.eigenvalues.data(), R.lsd.eigenvalues.data() + R.lsd.mode_count());
    doc["multiplicities"] = R.lsd.multiplicities;
    doc["dim_estimate"] = R.lsd.dim_estimate;
    doc["gauge"] = R.lsd.gauge;
    doc["c0_known"] = R.lsd.c0_known;
    doc["truncation_report"] = R.lsd.truncation_report;
    doc["chart"] = {{"center", R.chart.center},
                    {"modes", R.chart.modes},
                    {"validity_radius", R.chart.validity_radius}};
    json pts = json::array();
    for (size_t m = 0; m < R.metric_density.points.size(); ++m) {
        json rec;
        rec["net_index"] = R.metric_density.points[m];
        const auto& H = R.metric_density.metric_inv[m];
        rec["h_inv"] = std::vector<double>(H.data(), H.data() + H.size());
        const auto& a = R.metric_density.drift[m];
        rec["drift"] = std::vector<double>(a.data(), a.data() + a.size());
        const auto& g = R.metric_density.dlnrho[m];
        rec["dlnrho"] = std::vector<double>(g.data(), g.data() + g.size());
        rec["rho"] = R.metric_density.rho(int(m));
        rec["flagged"] = bool(R.metric_density.flagged[m]);
        pts.push_back(rec);
    }
    doc["points"] = pts;
    doc["diagnostics"] = R.diagnostics;

    // truth comparison when the generating model is in the config
    if (cfg.contains("model")) {
        auto space = build_model(cfg.at("model"));
        double rho_err = 0.0;
        // compare density shape up to a constant over the chart region
        std::vector<double> truth, rec;
        for (size_t m = 0; m < R.metric_density.points.size(); ++m) {
            const int v = data.net_points[R.metric_density.points[m]];
            truth.push_back(space.density(v));
            rec.push_back(R.metric_density.rho(int(m)));
        }
        double st = 0, sr = 0;
        for (size_t i = 0; i < truth.size(); ++i) {
            st += truth[i];
            sr += rec[i];
        }
        for (size_t i = 0; i < truth.size(); ++i)
            rho_err = std::max(rho_err,
                               std::abs(rec[i] / sr - truth[i] / st) / (truth[i] / st));
        doc["truth_comparison"]["rho_sup_rel_error"] = rho_err;
        double dist_err = 0.0;
        const int N = int(data.net_points.size());
        for (int a = 0; a < N; ++a) {
            Eigen::VectorXd dv = heatbc::shortest_distances(space, data.net_points[a]);
            for (int b = 0; b < N; ++b)
                dist_err = std::max(dist_err,
                                    std::abs(R.distances(a, b) - dv(data.net_points[b])));
        }
        doc["truth_comparison"]["distance_sup_error"] = dist_err;
    }
    write_text(out / "reconstruction.json", doc.dump(2) + "\n");

    std::string dc;
    const int N = int(data.net_points.size());
    for (int a = 0; a < N; ++a) {
        for (int b = 0; b < N; ++b) dc += (b ? "," : "") + g17(R.distances(a, b));
        dc += "\n";
    }
    write_text(out / "distances.csv", dc);
    return 0;
}

int cmd_mgh(const json& cfg, const fs::path& out) {
    if (!cfg.contains("model") || !cfg.contains("model_b"))
        throw StageError(EXIT_PARSE, "mgh: config needs model and model_b");
    auto A = build_model(cfg.at("model"));
    auto B = build_model(cfg.at("model_b"));
    const json m = cfg.value("mgh", json::object());
    const int sub = m.value("subsample", 0);
    heatbc::MghEstimate est;
    try {
        auto pick = [&](const heatbc::DiscreteSpace& s) {
            if (sub <= 0 || sub >= s.vertex_count) {
                std::vector<int> all(s.vertex_count);
                std::iota(all.begin(), all.end(), 0);
                return sampled_net(s, all);
            }
            // farthest-point subsample
            std::vector<int> idx{s.base_point};
            Eigen::VectorXd dmin = heatbc::shortest_distances(s, s.base_point);
            while (int(idx.size()) < sub) {
                int arg = 0;
                dmin.maxCoeff(&arg);
                idx.push_back(arg);
                dmin = dmin.cwiseMin(heatbc::shortest_distances(s, arg));
            }
            std::sort(idx.begin(), idx.end());
            return sampled_net(s, idx);
        };
        est = heatbc::d_mgh_estimate(pick(A), pick(B), m.value("exhaustive_limit", 8));
    } catch (const std::exception& e) {
        throw StageError(EXIT_SCORE, std::string("mgh: ") + e.what());
    }
    json doc;
    doc["epsilon"] = est.epsilon;
    doc["distortion"] = est.distortion;
    doc["measure_defect"] = est.measure_defect;
    doc["base_defect"] = est.base_defect;
    doc["optimality_gap_lb"] = est.optimality_gap_lb;
    doc["map_fwd"] = est.map_fwd;
    doc["map_bwd"] = est.map_bwd;
    write_text(out / "mgh.json", doc.dump(2) + "\n");
    return 0;
}

int cmd_collapse_sweep(const json& cfg, const fs::path& out) {
    const json sw = cfg.value("sweep", json::object());
    std::vector<double> sigmas = sw.value("sigma", std::vector<double>{1.0, 0.5, 0.25, 0.125});
    for (size_t i = 1; i < sigmas.size(); ++i)
        if (sigmas[i] > sigmas[i - 1])
            throw StageError(EXIT_PARSE, "collapse-sweep: sigma grid must descend");
    const json m = cfg.value("model", json::object());
    const int ny = m.value("ny", 48), nz = m.value("nz", 24);
    const int npts = sw.value("net_points", 8);
    auto cprof = profile_by_name(m.value("profile", "two_plus_cos_pi"));
    auto climit = profile_by_name("two_plus_cos_pi_shifted");

    // limit circle: y in [0,2), same y-grid as the torus; base aligned with
    // the torus chart origin y = 0
    auto circle = heatbc::build_circle(ny, 2.0, climit);
    circle.base_point = ny / 2;
    auto cspec = heatbc::eigendecompose(circle, circle.vertex_count);
    const double delta = 0.25;
    auto times = heatbc::detail::time_net(delta);

    // matched nets: every (ny/npts)-th y row at z = 0 on the torus,
    // the same y indices on the circle
    std::vector<int> yidx;
    for (int k = 0; k < npts; ++k) yidx.push_back(k * ny / npts);
    std::vector<int> cnet = yidx;

    std::vector<Eigen::MatrixXd> cvals;
    for (double t : times) cvals.push_back(heatbc::heat_kernel_matrix(cspec, cnet, t));

    std::string csv = "sigma,phd_discrepancy,d_mgh\n";
    std::vector<double> disc_col, mgh_col;
    std::vector<int> warm_f, warm_b;
    for (double sigma : sigmas) {
        auto torus = heatbc::build_warped_torus(ny, nz, sigma, cprof);
        auto tspec = heatbc::eigendecompose(torus, std::min(torus.vertex_count, 700));
        std::vector<int> tnet;
        for (int iy : yidx) tnet.push_back(iy * nz + 0);
        double disc = 0.0;
        for (size_t l = 0; l < times.size(); ++l) {
            Eigen::MatrixXd Ht = heatbc::heat_kernel_matrix(tspec, tnet, times[l]);
            disc = std::max(disc, (Ht - cvals[l]).cwiseAbs().maxCoeff());
        }
        auto tn = sampled_net(torus, tnet);
        auto cn = sampled_net(circle, cnet);
        heatbc::MghEstimate est =
            warm_f.empty() ? heatbc::d_mgh_estimate(tn, cn)
                           : heatbc::d_mgh_estimate(tn, cn, 8, &warm_f, &warm_b);
        warm_f = est.map_fwd;
        warm_b = est.map_bwd;
        disc_col.push_back(disc);
        mgh_col.push_back(est.epsilon);
        csv += g17(sigma) + "," + g17(disc) + "," + g17(est.epsilon) + "\n";
    }
    bool mono_disc = true, mono_mgh = true;
    for (size_t i = 1; i < sigmas.size(); ++i) {
        if (disc_col[i] > disc_col[i - 1] + 1e-12) mono_disc = false;
        if (mgh_col[i] > mgh_col[i - 1] + 1e-12) mono_mgh = false;
    }
    write_text(out / "collapse_sweep.csv", csv);
    json flags;
    flags["discrepancy_nonincreasing"] = mono_disc;
    flags["mgh_nonincreasing"] = mono_mgh;
    flags["monotonicity_claimed"] = sigmas.size() > 1;
    write_text(out / "collapse_flags.json", flags.dump(2) + "\n");
    return 0;
}

int cmd_stability_sweep(const json& cfg, const fs::path& out, int modes_override) {
    const json sw = cfg.value("sweep", json::object());
    std::vector<double> noises = sw.value("noise", std::vector<double>{0, 1e-4, 1e-3, 1e-2});
    std::vector<long long> seeds = sw.value("seeds", std::vector<long long>{1, 2, 3});
    for (size_t i = 1; i < noises.size(); ++i)
        if (noises[i] < noises[i - 1])
            throw StageError(EXIT_PARSE, "stability-sweep: noise grid must ascend");
    if (noises.size() < 4)
        throw StageError(EXIT_PARSE, "stability-sweep: need >= 4 noise levels");

    json mj = cfg.value("model", json{{"name", "circle"}, {"n", 256}});
    auto space = build_model(mj);
    const int K = modes_override > 0 ? modes_override : 256;
    auto spec = solve_model(space, std::min(K, space.vertex_count));
    const json p = cfg.value("phd", json::object());
    const double delta = p.value("delta", 0.2);
    auto clean = heatbc::sample_phd(spec, heatbc::diameter(space), delta);
    auto truth_net = sampled_net(space, clean.net_points);

    std::string csv = "delta_noise,seed,d_mgh\n";
    std::vector<double> xs, ys;
    for (double noise : noises) {
        for (long long seed : seeds) {
            auto data = heatbc::perturb(clean, noise, (unsigned long long)(seed));
            double eps;
            try {
                auto lsd = heatbc::fit_spectral_data(data, cfg.value("inverse", json::object())
                                                               .value("k_max", 40));
                auto D = heatbc::reconstruct_distances(lsd);
                heatbc::MetricMeasureNet rec;
                rec.dist = D;
                rec.weights = lsd.quadrature.cwiseMax(0.0);
                rec.weights /= rec.weights.sum();
                rec.base = data.base_hint;
                eps = heatbc::d_mgh_estimate(rec, truth_net).epsilon;
            } catch (const std::exception& e) {
                throw StageError(EXIT_FIT, std::string("stability-sweep: ") + e.what());
            }
            csv += g17(noise) + "," + std::to_string(seed) + "," + g17(eps) + "\n";
            xs.push_back(noise);
            ys.push_back(eps);
        }
    }
    const double rho = spearman(xs, ys);
    write_text(out / "stability_sweep.csv", csv);
    json rep;
    rep["spearman"] = rho;
    write_text(out / "stability_report.json", rep.dump(2) + "\n");
    return 0;
}

int cmd_selftest() {
    int failures = 0;
    auto check = [&](bool ok, const std::string& name) {
        std::cout << (ok ? "PASS " : "FAIL ") << name << "\n";
        if (!ok) ++failures;
    };
    auto circle = heatbc::build_circle(128, 2.0 * M_PI);
    heatbc::validate(circle);
    check(true, "circle invariants");
    auto spec = heatbc::eigendecompose(circle, 16);
    check(std::abs(spec.eigenvalues(0)) < 1e-9, "lambda_0 = 0");
    check(std::abs(spec.eigenvalues(1) - 1.0) < 1e-2, "lambda_1 = 1 within 1%");
    std::vector<int> all(circle.vertex_count);
    std::iota(all.begin(), all.end(), 0);
    Eigen::MatrixXd H = heatbc::heat_kernel_matrix(spec, all, 1.0);
    check(((H * circle.weights).array() - 1.0).abs().maxCoeff() < 1e-9,
          "stochastic completeness");
    Eigen::VectorXd sig(40);
    for (int i = 0; i < 40; ++i) sig(i) = 1.0 + 0.5 * std::exp(-2.0 * (0.1 + 0.05 * i));
    auto rates = heatbc::esprit(sig, 0.05, 6);
    check(rates.size() == 2 && std::abs(rates[1] - 2.0) < 1e-6, "esprit two poles");
    auto net = heatbc::net_from_space(heatbc::build_circle(8, 2.0 * M_PI));
    check(heatbc::d_mgh_estimate(net, net).epsilon == 0.0, "mgh self-distance 0");
    std::cout << (failures ? "SELFTEST FAILED\n" : "SELFTEST OK\n");
    return failures ? 1 : 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"heat-kernel boundary-control reconstruction toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out", phd_file;
    long long seed = -1;
    int modes = 0, threads = 0;
    app.add_option("--config", config_path, "JSON experiment config");
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--seed", seed, "seed override");
    app.add_option("--modes", modes, "mode count override");
    app.add_option("--threads", threads, "thread count");

    auto* c_forward = app.add_subcommand("forward", "eigensolve + heat kernel tables");
    auto* c_phd = app.add_subcommand("phd", "generate point heat data");
    auto* c_invert = app.add_subcommand("invert", "reconstruct from point heat data");
    c_invert->add_option("phd_file", phd_file, "PHD input file");
    auto* c_mgh = app.add_subcommand("mgh", "measured GH estimate between two models");
    auto* c_collapse = app.add_subcommand("collapse-sweep", "torus-to-circle collapse table");
    auto* c_stab = app.add_subcommand("stability-sweep", "noise stability curve");
    auto* c_self = app.add_subcommand("selftest", "quick internal checks");

    CLI11_PARSE(app, argc, argv);
    if (threads > 0) Eigen::setNbThreads(threads);

    try {
        const fs::path out(out_dir);
        if (c_self->parsed()) return cmd_selftest();
        json cfg = load_config(config_path);
        if (c_forward->parsed()) return cmd_forward(cfg, out, modes);
        if (c_phd->parsed()) return cmd_phd(cfg, out, modes, seed);
        if (c_invert->parsed()) {
            if (phd_file.empty()) phd_file = (out / "phd.txt").string();
            return cmd_invert(cfg, out, phd_file);
        }
        if (c_mgh->parsed()) return cmd_mgh(cfg, out);
        if (c_collapse->parsed()) return cmd_collapse_sweep(cfg, out);
        if (c_stab->parsed()) return cmd_stability_sweep(cfg, out, modes);
    } catch (const StageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.code;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
