// Command-line front end: validate systems, synthesize functional
// unknown-input observers, run simulation scenarios, and compare the
// derivative-free realization against its derivative-fed oracle.
//
// Exit codes: 0 success, 1 usage/parse, 2 infeasible design, 3 numerical
// failure or divergence. Set FUIO_LOG=debug for matrix dumps on stderr.

#include <cmath>
#include <cstdlib>
#include <limits>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "fuio/fuio.hpp"
#include "fuio/reference_systems.hpp"

namespace {

using namespace fuio;

bool log_debug_enabled() {
    const char* v = std::getenv("FUIO_LOG");
    return v && (std::string(v) == "debug" || std::string(v) == "2");
}

void dump(const std::string& name, const Matrix& M) {
    if (!log_debug_enabled()) return;
    std::cerr << name << " =\n" << M << "\n";
}

std::vector<Complex> parse_pole_list(const std::string& text) {
    std::vector<Complex> poles;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t comma = text.find(',', start);
        std::string token = text.substr(start, comma == std::string::npos ? comma : comma - start);
        start = comma == std::string::npos ? text.size() + 1 : comma + 1;
        while (!token.empty() && std::isspace(static_cast<unsigned char>(token.front())))
            token.erase(token.begin());
        while (!token.empty() && std::isspace(static_cast<unsigned char>(token.back())))
            token.pop_back();
        if (token.empty()) continue;

        bool imaginary = false;
        if (token.back() == 'i' || token.back() == 'j') {
            imaginary = true;
            token.pop_back();
        }
        if (!imaginary) {
            char* end = nullptr;
            const double re = std::strtod(token.c_str(), &end);
            if (end != token.c_str() + token.size())
                throw Error("cannot parse pole '" + token + "'");
            poles.emplace_back(re, 0.0);
            continue;
        }
        // forms: "bi" or "a+bi" / "a-bi"
        std::size_t split = std::string::npos;
        for (std::size_t i = token.size(); i-- > 1;) {
            if ((token[i] == '+' || token[i] == '-') && token[i - 1] != 'e' && token[i - 1] != 'E') {
                split = i;
                break;
            }
        }
        double re = 0.0;
        std::string im_part = token;
        if (split != std::string::npos) {
            char* end = nullptr;
            const std::string re_part = token.substr(0, split);
            re = std::strtod(re_part.c_str(), &end);
            if (end != re_part.c_str() + re_part.size())
                throw Error("cannot parse pole real part '" + re_part + "'");
            im_part = token.substr(split);
        }
        if (im_part == "+" || im_part == "-") im_part += "1";
        if (im_part.empty()) im_part = "1";
        char* end = nullptr;
        const double im = std::strtod(im_part.c_str(), &end);
        if (end != im_part.c_str() + im_part.size())
            throw Error("cannot parse pole imaginary part '" + im_part + "'");
        poles.emplace_back(re, im);
    }
    if (poles.empty()) throw Error("empty pole list");
    return poles;
}

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> values;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t comma = text.find(',', start);
        const std::string token =
            text.substr(start, comma == std::string::npos ? comma : comma - start);
        start = comma == std::string::npos ? text.size() : comma + 1;
        if (token.empty()) continue;
        values.push_back(std::stoi(token));
    }
    return values;
}

std::string spectrum_string(const Matrix& F) {
    Eigen::EigenSolver<Matrix> es(F);
    return detail::format_spectrum(es.eigenvalues());
}

struct ToleranceFlags {
    double zero_tol = kDefaultZeroTol;
    double pole_tol = kDefaultPoleTol;
    double rank_tol = 0.0;
};

void add_tolerance_flags(CLI::App* cmd, ToleranceFlags& tol) {
    cmd->add_option("--zero-tol", tol.zero_tol, "relative-degree zero tolerance");
    cmd->add_option("--pole-tol", tol.pole_tol, "pole placement verification tolerance");
    cmd->add_option("--rank-tol", tol.rank_tol, "numerical rank tolerance (0: machine epsilon)");
}

// ---------------------------------------------------------------------- check

int cmd_check(const std::string& system_path, const std::string& r_override_text,
              const ToleranceFlags& tol, double scan_horizon, bool as_json) {
    const SystemFile file = load_system_file(system_path);
    Json report;
    bool feasible = true;
    std::vector<std::string> reasons;
    auto gate = [&](bool ok, const std::string& what) {
        if (as_json) return;  // collected in the JSON object instead
        std::cout << (ok ? "ok:   " : "FAIL: ") << what << "\n";
    };

    if (file.is_lti()) {
        const LtiSystem& sys = file.lti();
        report["type"] = "lti";
        report["n"] = sys.n();
        report["m"] = sys.m();
        report["l"] = sys.l();
        const ValidationReport v = validate_lti(sys);
        report["valid"] = v.ok;
        report["rank_B"] = v.rank_B;
        gate(v.ok, "matrix dimensions and finiteness");
        if (!v.ok) {
            feasible = false;
            for (const auto& issue : v.issues) reasons.push_back(issue);
        }

        std::vector<int> r_values =
            !r_override_text.empty() ? parse_int_list(r_override_text) : file.r_override;
        RelativeDegreeProfile prof;
        try {
            prof = r_values.empty() ? compute_relative_degrees(sys, tol.zero_tol)
                                    : override_relative_degrees(sys, r_values, tol.zero_tol);
            report["r"] = prof.r;
            report["r_structurally_exact"] = prof.structural;
            gate(true, "relative degrees r = " + [&] {
                std::string s;
                for (std::size_t i = 0; i < prof.r.size(); ++i)
                    s += (i ? "," : "") + std::to_string(prof.r[i]);
                return s;
            }());
        } catch (const InfeasibleError& e) {
            feasible = false;
            reasons.push_back(e.what());
            gate(false, e.what());
            report["r"] = nullptr;
        }

        if (feasible) {
            const Matrix N = build_N(sys, prof);
            const Matrix P = build_P(sys, prof);
            const auto rank_N = detail::numerical_rank(N, tol.rank_tol);
            const auto rank_B = detail::numerical_rank(sys.B, tol.rank_tol);
            report["rank_N"] = rank_N;
            const bool decouple = rank_N == sys.m() && rank_N == rank_B;
            report["decoupling"] = decouple;
            gate(decouple, "decoupling: rank(N) = " + std::to_string(rank_N) +
                               ", rank(B) = " + std::to_string(rank_B));
            if (!decouple) {
                feasible = false;
                reasons.push_back("decoupling condition fails: rank(N) = " +
                                  std::to_string(rank_N) + ", rank(B) = " +
                                  std::to_string(rank_B) + " (need both equal to full column rank)");
            } else {
                const Matrix G = compute_G(sys.B, N, tol.rank_tol);
                const Matrix M = compute_M(sys.A, G, P);
                const bool det_ac = check_detectability(sys.A, sys.C);
                const bool det_mc = check_detectability(M, sys.C);
                report["detectable_AC"] = det_ac;
                report["detectable_MC"] = det_mc;
                gate(det_ac, "(A, C) detectable");
                gate(det_mc, "(M, C) detectable");
                if (!det_mc) {
                    feasible = false;
                    reasons.push_back("(M, C) is not detectable");
                }
                const Matrix T = build_T(sys.A, sys.B, prof.r_max);
                const auto rank_T = detail::numerical_rank(T, tol.rank_tol);
                report["rank_T"] = rank_T;
                report["q_full"] = sys.n() - rank_T;
                gate(rank_T < sys.n(), "functional rows available: q = " +
                                           std::to_string(sys.n() - rank_T));
                if (rank_T >= sys.n()) {
                    feasible = false;
                    reasons.push_back("no functional rows: col(T) spans the state space");
                }
                dump("G", G);
                dump("M", M);
            }
        }
    } else {
        const LtvCanonicalSystem& sys = file.ltv();
        report["type"] = "ltv_chain";
        report["n"] = sys.n;
        try {
            const int beta = beta_index(sys);
            report["beta"] = beta;
            gate(true, "beta = " + std::to_string(beta));
            const ReducedLtvSystem red = reduce_to_w(sys);
            std::vector<double> grid;
            const int samples = 2000;
            for (int k = 0; k <= samples; ++k)
                grid.push_back(scan_horizon * static_cast<double>(k) / samples);
            const StabilityScan scan = frozen_stability_scan(red, grid);
            report["frozen_margin"] = scan.margin;
            report["frozen_margin_argmin_time"] = scan.argmin_time;
            report["caveat"] = scan.caveat;
            gate(scan.margin > 0.0,
                 "frozen margin " + std::to_string(scan.margin) + " at t = " +
                     std::to_string(scan.argmin_time) + " (" + scan.caveat + ")");
            if (!(scan.margin > 0.0)) {
                feasible = false;
                reasons.push_back("frozen-eigenvalue margin is not positive");
            }
        } catch (const InfeasibleError& e) {
            feasible = false;
            reasons.push_back(e.what());
            gate(false, e.what());
        }
    }

    report["feasible"] = feasible;
    report["reasons"] = reasons;
    if (as_json) {
        std::cout << report.dump(2) << "\n";
    } else if (!feasible) {
        for (const auto& r : reasons) std::cout << "infeasible: " << r << "\n";
    }
    return feasible ? 0 : 2;
}

// ---------------------------------------------------------------------- synth

int cmd_synth(const std::string& system_path, const std::string& poles_text,
              const std::string& mode_text, const std::string& r_override_text,
              const ToleranceFlags& tol, const std::string& out_path) {
    const SystemFile file = load_system_file(system_path);
    if (!file.is_lti()) {
        const LtvCanonicalSystem& sys = file.ltv();
        const Json j = observer_to_json(sys);
        detail::write_json_file(out_path, j);
        std::cout << "ltv copy observer written to " << out_path << " (beta = "
                  << j.at("beta").get<int>() << ")\n";
        return 0;
    }

    const LtiSystem& sys = file.lti();
    SynthesisOptions opts;
    opts.mode = mode_text == "reduced" ? QMode::reduced : QMode::full;
    opts.zero_tol = tol.zero_tol;
    opts.pole_tol = tol.pole_tol;
    opts.rank_tol = tol.rank_tol;
    if (!r_override_text.empty())
        opts.r_override = parse_int_list(r_override_text);
    else
        opts.r_override = file.r_override;
    if (poles_text.empty()) throw Error("synth needs --poles for lti systems");
    const std::vector<Complex> poles = parse_pole_list(poles_text);

    const UioDesign design = design_functional_uio(sys, poles, opts);
    detail::write_json_file(out_path, observer_to_json(design, sys));

    std::cout << "observer written to " << out_path << "\n";
    std::cout << "achieved spectrum: {" << spectrum_string(design.gains.F) << "}\n";
    for (std::size_t i = 0; i < design.condition.residuals.size(); ++i)
        std::cout << "||Q A^" << i << " B|| = " << design.condition.residuals[i] << "\n";
    std::cout << "Q rows: " << design.Q.rows() << " (mode " << mode_text << ")\n";
    dump("G", design.gains.G);
    dump("M", design.gains.M);
    dump("L", design.gains.L);
    dump("Q", design.Q);
    return 0;
}

// ------------------------------------------------------------------------ sim

void print_summary(const ScenarioResult& res) {
    std::cout << "final error per channel:";
    for (Eigen::Index i = 0; i < res.error.dim(); ++i)
        std::cout << " " << std::abs(res.error.samples(res.error.size() - 1, i));
    std::cout << "\n";
    std::cout << "final error (inf-norm): " << res.metrics.final_error << "\n";
    if (res.metrics.exact)
        std::cout << "decay rate: exact (error at the numerical floor)\n";
    else if (res.metrics.decay_rate)
        std::cout << "decay rate (tail fit): " << *res.metrics.decay_rate << "\n";
    if (res.metrics.time_to_threshold)
        std::cout << "time to |e| <= " << res.metrics.threshold << ": "
                  << *res.metrics.time_to_threshold << "\n";
    if (res.gpebo_identity_residual)
        std::cout << "fundamental-matrix identity residual: " << *res.gpebo_identity_residual
                  << "\n";
    if (res.phi_final_norm) std::cout << "||Phi(T)|| = " << *res.phi_final_norm << "\n";
}

Vector resolve_z0(const ScenarioFile& sc, const ObserverFile& obs) {
    const Eigen::Index nz = obs.realization.state_dim();
    switch (sc.z0_policy) {
        case ScenarioFile::Z0Policy::zero: return Vector::Zero(nz);
        case ScenarioFile::Z0Policy::explicit_vector:
            if (sc.z0.size() != nz) throw Error("z0 has wrong dimension");
            return sc.z0;
        case ScenarioFile::Z0Policy::match_xhat0: {
            UioGains gains;
            gains.F = obs.realization.F;
            gains.L = obs.realization.L;
            gains.G = obs.realization.G;
            if (sc.xhat0.size() != nz) throw Error("match_xhat0 has wrong dimension");
            return matched_initial_z(obs.system, gains, obs.realization.r, sc.xhat0, sc.x0);
        }
    }
    throw Error("unreachable z0 policy");
}

std::vector<TimeExpr> parse_inputs(const std::vector<std::string>& exprs, Eigen::Index m) {
    std::vector<TimeExpr> f;
    for (const std::string& s : exprs) f.push_back(parse_time_expr(s));
    while (static_cast<Eigen::Index>(f.size()) < m) f.push_back(TimeExpr::constant(0.0));
    if (static_cast<Eigen::Index>(f.size()) != m)
        throw Error("scenario lists more input expressions than the plant has inputs");
    return f;
}

int cmd_sim(const std::string& observer_path, const std::string& scenario_path,
            const std::string& csv_path, std::optional<double> t_final_flag,
            std::optional<double> dt_flag) {
    const ObserverFile obs = load_observer_file(observer_path);
    ScenarioFile sc = load_scenario_file(scenario_path);
    if (t_final_flag) sc.t_final = *t_final_flag;
    if (dt_flag) sc.dt = *dt_flag;

    ScenarioResult res;
    if (obs.kind == ObserverFile::Kind::functional_uio) {
        if (obs.system.A.size() == 0)
            throw Error("observer file lacks the embedded system needed for simulation");
        const std::vector<TimeExpr> f = parse_inputs(sc.f, obs.system.m());
        res = run_mimo_scenario(obs.system, obs.realization, f, sc.x0, resolve_z0(sc, obs),
                                sc.t_final, sc.dt, sc.metrics_threshold);
    } else {
        const Matrix plant_A = sc.plant_A ? *sc.plant_A : obs.ltv.chain_A();
        const Vector plant_B = sc.plant_B ? *sc.plant_B : obs.ltv.chain_B();
        const TimeExpr u = parse_time_expr(sc.u);
        Vector xi0 = sc.xi0;
        if (xi0.size() == 0) xi0 = Vector::Zero(obs.beta - 1);
        res = run_ltv_scenario(plant_A, plant_B, obs.ltv, u, sc.x0, xi0, sc.t_final, sc.dt,
                               sc.metrics_threshold);
    }
    write_scenario_csv(csv_path, res, sc.decimation);
    std::cout << "csv written to " << csv_path << "\n";
    print_summary(res);
    return 0;
}

// ----------------------------------------------------------------------- demo

int cmd_demo(const std::string& name, const std::string& csv_path,
             std::optional<double> t_final_flag, std::optional<double> dt_flag) {
    ScenarioResult res;
    if (name == "paper-mimo") {
        const LtiSystem sys = reference_mimo_plant();
        SynthesisOptions opts;
        opts.r_override = reference_mimo_r_override();
        const UioDesign design = design_functional_uio(sys, reference_mimo_poles(), opts);
        std::cout << "achieved spectrum: {" << spectrum_string(design.gains.F) << "}\n";
        Vector x0(5);
        x0 << 1, -1, 0.3, -0.5, 0;
        res = run_mimo_scenario(sys, design.realization, {parse_time_expr("sin(t)")}, x0,
                                Vector::Zero(5), t_final_flag.value_or(3.0),
                                dt_flag.value_or(1e-3));
    } else if (name == "paper-ltv") {
        const LtvCanonicalSystem sys = reference_ltv_chain();
        Vector x0(4);
        x0 << 1, 0.5, -0.5, 0;
        res = run_ltv_scenario(reference_ltv_plant_A(), reference_ltv_plant_B(), sys,
                               TimeExpr::constant(0.0), x0, Vector::Zero(2),
                               t_final_flag.value_or(20.0), dt_flag.value_or(1e-3), 1e-2);
        const StabilityScan scan = [&] {
            std::vector<double> grid;
            for (int k = 0; k <= 2000; ++k) grid.push_back(20.0 * k / 2000.0);
            return frozen_stability_scan(reduce_to_w(sys), grid);
        }();
        std::cout << "frozen margin: " << scan.margin << " (" << scan.caveat << ")\n";
    } else if (name == "bilinear") {
        const LtiSystem sys = reference_chain4_plant();
        const Matrix K = place_observer_gain(
            sys.A, sys.C, {Complex(-2, 0), Complex(-3, 0), Complex(-4, 0), Complex(-5, 0)});
        Vector x0(4);
        x0 << 0.1, -0.05, 0.05, -0.02;
        res = run_bilinear_demo(K, x0, t_final_flag.value_or(15.0), dt_flag.value_or(1e-3));
    } else {
        throw Error("unknown demo '" + name + "' (expected bilinear|paper-ltv|paper-mimo)");
    }
    write_scenario_csv(csv_path, res, 1);
    std::cout << "csv written to " << csv_path << "\n";
    print_summary(res);
    return 0;
}

// ------------------------------------------------------------- oracle-compare

int cmd_oracle_compare(const std::string& system_path, const std::string& observer_path,
                       const std::string& scenario_path, double tolerance,
                       std::optional<double> t_final_flag, std::optional<double> dt_flag) {
    const SystemFile sf = load_system_file(system_path);
    if (!sf.is_lti()) throw Error("oracle-compare applies to lti systems");
    const LtiSystem& sys = sf.lti();
    const ObserverFile obs = load_observer_file(observer_path);
    if (obs.kind != ObserverFile::Kind::functional_uio)
        throw Error("oracle-compare needs a functional_uio observer file");
    ScenarioFile sc = load_scenario_file(scenario_path);
    if (t_final_flag) sc.t_final = *t_final_flag;
    if (dt_flag) sc.dt = *dt_flag;

    UioGains gains;
    gains.F = obs.realization.F;
    gains.L = obs.realization.L;
    gains.G = obs.realization.G;
    gains.M = obs.M;

    const std::vector<TimeExpr> f = parse_inputs(sc.f, sys.m());
    ObserverFile obs_with_sys = obs;
    obs_with_sys.system = sys;
    const Vector z0 = resolve_z0(sc, obs_with_sys);
    // matched ideal-observer start: the chain offset inverts the z map at t=0
    const Vector xhat0 = z0 + derivative_chain_offset(sys, gains, obs.realization.r) * sc.x0;

    const ScenarioResult real_run = run_mimo_scenario(sys, obs.realization, f, sc.x0, z0,
                                                      sc.t_final, sc.dt, sc.metrics_threshold);
    const Trajectory oracle =
        derivative_feed_oracle(sys, gains, obs.realization.r, f, sc.x0, xhat0, sc.t_final, sc.dt);

    double deviation = 0.0;
    for (Eigen::Index k = 0; k < oracle.size(); ++k) {
        const Vector xh = oracle.samples.row(k).transpose();
        const Vector via_oracle = obs.realization.Q * xh;
        const Vector via_realization = real_run.estimate.samples.row(k).transpose();
        deviation = std::max(deviation, (via_oracle - via_realization).cwiseAbs().maxCoeff());
    }
    std::cout << "max functional-estimate deviation: " << deviation << " (tolerance " << tolerance
              << ")\n";
    return deviation <= tolerance ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"functional unknown-input observer toolkit"};
    app.require_subcommand(1);

    std::string system_path, observer_path, scenario_path, demo_name;
    std::string poles_text, mode_text = "full", r_override_text;
    std::string out_path = "observer.json", csv_path = "fuio_out.csv";
    bool as_json = false;
    double compare_tol = 1e-6, scan_horizon = 20.0;
    double t_final_opt = std::numeric_limits<double>::quiet_NaN();
    double dt_opt = std::numeric_limits<double>::quiet_NaN();
    ToleranceFlags tol;

    auto* check = app.add_subcommand("check", "run the design feasibility gates");
    check->add_option("system", system_path, "system JSON file")->required();
    check->add_flag("--json", as_json, "machine-readable report");
    check->add_option("--r-override", r_override_text, "comma-separated relative degrees");
    check->add_option("--scan-horizon", scan_horizon, "frozen-eigenvalue scan horizon (ltv)");
    add_tolerance_flags(check, tol);

    auto* synth = app.add_subcommand("synth", "synthesize an observer and write it to JSON");
    synth->add_option("system", system_path, "system JSON file")->required();
    synth->add_option("--poles", poles_text, "comma-separated observer poles (use --poles=-4,-5,...)");
    synth->add_option("--mode", mode_text, "functional matrix mode")
        ->check(CLI::IsMember({"full", "reduced"}));
    synth->add_option("--r-override", r_override_text, "comma-separated relative degrees");
    synth->add_option("-o,--out", out_path, "output observer JSON path");
    add_tolerance_flags(synth, tol);

    auto* sim = app.add_subcommand("sim", "simulate an observer against a scenario");
    sim->add_option("observer", observer_path, "observer JSON file")->required();
    sim->add_option("scenario", scenario_path, "scenario JSON file")->required();
    sim->add_option("--csv", csv_path, "output CSV path");
    sim->add_option("--t-final", t_final_opt, "override scenario horizon");
    sim->add_option("--dt", dt_opt, "override scenario step");

    auto* demo = app.add_subcommand("demo", "run a packaged demo end to end");
    demo->add_option("name", demo_name, "bilinear|paper-ltv|paper-mimo")->required();
    demo->add_option("--csv", csv_path, "output CSV path");
    demo->add_option("--t-final", t_final_opt, "override demo horizon");
    demo->add_option("--dt", dt_opt, "override demo step");

    auto* cmp = app.add_subcommand("oracle-compare",
                                   "deviation between realization and derivative-fed oracle");
    cmp->add_option("system", system_path, "system JSON file")->required();
    cmp->add_option("observer", observer_path, "observer JSON file")->required();
    cmp->add_option("scenario", scenario_path, "scenario JSON file")->required();
    cmp->add_option("--tol", compare_tol, "pass/fail deviation tolerance");
    cmp->add_option("--t-final", t_final_opt, "override scenario horizon");
    cmp->add_option("--dt", dt_opt, "override scenario step");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (check->parsed())
            return cmd_check(system_path, r_override_text, tol, scan_horizon, as_json);
        if (synth->parsed())
            return cmd_synth(system_path, poles_text, mode_text, r_override_text, tol, out_path);
        const std::optional<double> t_final_flag =
            std::isnan(t_final_opt) ? std::nullopt : std::optional<double>(t_final_opt);
        const std::optional<double> dt_flag =
            std::isnan(dt_opt) ? std::nullopt : std::optional<double>(dt_opt);
        if (sim->parsed()) return cmd_sim(observer_path, scenario_path, csv_path, t_final_flag, dt_flag);
        if (demo->parsed()) return cmd_demo(demo_name, csv_path, t_final_flag, dt_flag);
        if (cmp->parsed())
            return cmd_oracle_compare(system_path, observer_path, scenario_path, compare_tol,
                                      t_final_flag, dt_flag);
    } catch (const InfeasibleError& e) {
        std::cerr << "infeasible: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const EvalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
