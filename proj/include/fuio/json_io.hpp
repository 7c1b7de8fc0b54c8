#pragma once

#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "fuio/errors.hpp"
#include "fuio/sim_engine.hpp"
#include "fuio/system_model.hpp"
#include "fuio/uio_synth.hpp"

namespace fuio {

using Json = nlohmann::json;

namespace detail {

inline Json matrix_to_json(const Matrix& M) {
    Json rows = Json::array();
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
        Json row = Json::array();
        for (Eigen::Index j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Matrix matrix_from_json(const Json& j, const std::string& name) {
    if (!j.is_array() || j.empty() || !j.front().is_array())
        throw Error("'" + name + "' must be a non-empty array of rows");
    const auto rows = static_cast<Eigen::Index>(j.size());
    const auto cols = static_cast<Eigen::Index>(j.front().size());
    Matrix M(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const Json& row = j[static_cast<std::size_t>(i)];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
            throw Error("'" + name + "' has ragged rows");
        for (Eigen::Index k = 0; k < cols; ++k) {
            const Json& v = row[static_cast<std::size_t>(k)];
            if (!v.is_number()) throw Error("'" + name + "' has a non-numeric entry");
            M(i, k) = v.get<double>();
        }
    }
    return M;
}

inline Json vector_to_json(const Vector& v) {
    Json arr = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
    return arr;
}

inline Vector vector_from_json(const Json& j, const std::string& name) {
    if (!j.is_array()) throw Error("'" + name + "' must be an array");
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) throw Error("'" + name + "' has a non-numeric entry");
        v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
    }
    return v;
}

inline Json poles_to_json(const std::vector<Complex>& poles) {
    Json arr = Json::array();
    for (const Complex& p : poles) arr.push_back(Json::array({p.real(), p.imag()}));
    return arr;
}

inline std::vector<Complex> poles_from_json(const Json& j) {
    std::vector<Complex> poles;
    for (const Json& e : j) {
        if (e.is_number())
            poles.emplace_back(e.get<double>(), 0.0);
        else if (e.is_array() && e.size() == 2)
            poles.emplace_back(e[0].get<double>(), e[1].get<double>());
        else
            throw Error("'poles' entries must be numbers or [re, im] pairs");
    }
    return poles;
}

inline Json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open '" + path + "'");
    try {
        return Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw ParseError(std::string("JSON parse failure in '") + path + "': " + e.what(),
                         e.byte);
    }
}

inline void write_json_file(const std::string& path, const Json& j) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write '" + path + "'");
    out << j.dump(2) << "\n";
}

}  // namespace detail

// ---------------------------------------------------------------------------
// System files
//   {"type": "lti", "A": [[...]], "B": [[...]], "C": [[...]], "r_override": [...]}
//   {"type": "ltv_chain", "n": 4, "c": ["1", "2+sin(0.3*t)", "1", "0"]}
// ---------------------------------------------------------------------------

struct SystemFile {
    std::variant<LtiSystem, LtvCanonicalSystem> system;
    std::vector<int> r_override;  // empty when absent

    bool is_lti() const { return std::holds_alternative<LtiSystem>(system); }
    const LtiSystem& lti() const { return std::get<LtiSystem>(system); }
    const LtvCanonicalSystem& ltv() const { return std::get<LtvCanonicalSystem>(system); }
};

inline SystemFile parse_system_json(const Json& j) {
    if (!j.contains("type")) throw Error("system file needs a 'type' field");
    const std::string type = j.at("type").get<std::string>();
    SystemFile file;
    if (type == "lti") {
        LtiSystem sys;
        sys.A = detail::matrix_from_json(j.at("A"), "A");
        sys.B = detail::matrix_from_json(j.at("B"), "B");
        sys.C = detail::matrix_from_json(j.at("C"), "C");
        const ValidationReport rep = validate_lti(sys);
        if (!rep.ok) throw Error("invalid lti system: " + rep.issues.front());
        file.system = std::move(sys);
    } else if (type == "ltv_chain") {
        LtvCanonicalSystem sys;
        sys.n = j.at("n").get<int>();
        if (sys.n < 1) throw Error("'n' must be positive");
        const Json& c = j.at("c");
        if (!c.is_array() || static_cast<int>(c.size()) != sys.n)
            throw Error("'c' must list exactly n coefficient expressions");
        for (const Json& e : c) sys.c.push_back(parse_time_expr(e.get<std::string>()));
        file.system = std::move(sys);
    } else {
        throw Error("unknown system type '" + type + "'");
    }
    if (j.contains("r_override")) {
        for (const Json& e : j.at("r_override")) file.r_override.push_back(e.get<int>());
    }
    return file;
}

inline SystemFile load_system_file(const std::string& path) {
    return parse_system_json(detail::load_json_file(path));
}

inline Json system_to_json(const LtiSystem& sys) {
    Json j;
    j["type"] = "lti";
    j["A"] = detail::matrix_to_json(sys.A);
    j["B"] = detail::matrix_to_json(sys.B);
    j["C"] = detail::matrix_to_json(sys.C);
    return j;
}

inline Json system_to_json(const LtvCanonicalSystem& sys) {
    Json j;
    j["type"] = "ltv_chain";
    j["n"] = sys.n;
    Json c = Json::array();
    for (const TimeExpr& e : sys.c) c.push_back(e.to_string());
    j["c"] = std::move(c);
    return j;
}

// ---------------------------------------------------------------------------
// Observer files. The MIMO design ships every matrix needed to run the
// derivative-free realization verbatim, plus the plant it was built for.
// ---------------------------------------------------------------------------

struct ObserverFile {
    enum class Kind { functional_uio, ltv_gpebo };
    Kind kind = Kind::functional_uio;

    // functional_uio
    FunctionalObserverRealization realization;
    Matrix M;
    std::vector<Complex> poles;
    LtiSystem system;

    // ltv_gpebo
    LtvCanonicalSystem ltv;
    int beta = 0;
};

inline Json observer_to_json(const UioDesign& design, const LtiSystem& sys) {
    Json j;
    j["type"] = "functional_uio";
    j["F"] = detail::matrix_to_json(design.realization.F);
    j["L"] = detail::matrix_to_json(design.realization.L);
    j["G"] = detail::matrix_to_json(design.realization.G);
    j["M"] = detail::matrix_to_json(design.gains.M);
    j["Q"] = detail::matrix_to_json(design.realization.Q);
    Json gamma = Json::array();
    Json theta = Json::array();
    for (Eigen::Index i = 0; i < design.realization.Gamma.cols(); ++i) {
        gamma.push_back(detail::vector_to_json(design.realization.Gamma.col(i)));
        theta.push_back(detail::vector_to_json(design.realization.Theta.col(i)));
    }
    j["Gamma"] = std::move(gamma);
    j["Theta"] = std::move(theta);
    j["r"] = design.r.r;
    j["poles"] = detail::poles_to_json(design.gains.poles);
    j["system"] = system_to_json(sys);
    return j;
}

inline Json observer_to_json(const LtvCanonicalSystem& sys) {
    Json j;
    j["type"] = "ltv_gpebo";
    j["n"] = sys.n;
    j["beta"] = beta_index(sys);
    Json c = Json::array();
    for (const TimeExpr& e : sys.c) c.push_back(e.to_string());
    j["c"] = std::move(c);
    return j;
}

// Loads the matrices exactly as stored; nothing is re-derived or re-verified,
// so deliberately inconsistent files run as-is (useful as negative controls).
inline ObserverFile parse_observer_json(const Json& j) {
    ObserverFile file;
    const std::string type = j.at("type").get<std::string>();
    if (type == "ltv_gpebo") {
        file.kind = ObserverFile::Kind::ltv_gpebo;
        file.ltv.n = j.at("n").get<int>();
        for (const Json& e : j.at("c")) file.ltv.c.push_back(parse_time_expr(e.get<std::string>()));
        file.beta = j.contains("beta") ? j.at("beta").get<int>() : beta_index(file.ltv);
        return file;
    }
    if (type != "functional_uio") throw Error("unknown observer type '" + type + "'");

    file.kind = ObserverFile::Kind::functional_uio;
    auto& real = file.realization;
    real.F = detail::matrix_from_json(j.at("F"), "F");
    real.L = detail::matrix_from_json(j.at("L"), "L");
    real.G = detail::matrix_from_json(j.at("G"), "G");
    real.Q = detail::matrix_from_json(j.at("Q"), "Q");
    file.M = j.contains("M") ? detail::matrix_from_json(j.at("M"), "M") : Matrix();
    const auto& jr = j.at("r");
    for (const Json& e : jr) real.r.r.push_back(e.get<int>());
    real.r.r_max = *std::max_element(real.r.r.begin(), real.r.r.end());
    real.r.structural.assign(real.r.r.size(), true);
    const Json& gamma = j.at("Gamma");
    const Json& theta = j.at("Theta");
    real.Gamma.resize(real.F.rows(), static_cast<Eigen::Index>(gamma.size()));
    real.Theta.resize(real.Q.rows(), static_cast<Eigen::Index>(theta.size()));
    for (std::size_t i = 0; i < gamma.size(); ++i)
        real.Gamma.col(static_cast<Eigen::Index>(i)) =
            detail::vector_from_json(gamma[i], "Gamma");
    for (std::size_t i = 0; i < theta.size(); ++i)
        real.Theta.col(static_cast<Eigen::Index>(i)) =
            detail::vector_from_json(theta[i], "Theta");
    real.finalize();
    file.poles = detail::poles_from_json(j.at("poles"));
    if (j.contains("system")) {
        const SystemFile sf = parse_system_json(j.at("system"));
        if (!sf.is_lti()) throw Error("embedded observer system must be lti");
        file.system = sf.lti();
    }
    return file;
}

inline ObserverFile load_observer_file(const std::string& path) {
    return parse_observer_json(detail::load_json_file(path));
}

// ---------------------------------------------------------------------------
// Scenario files: experiment definition, separate from the plant.
// ---------------------------------------------------------------------------

struct ScenarioFile {
    Vector x0;
    enum class Z0Policy { zero, explicit_vector, match_xhat0 };
    Z0Policy z0_policy = Z0Policy::zero;
    Vector z0;     // explicit_vector
    Vector xhat0;  // match_xhat0

    std::vector<std::string> f;  // unknown-input expressions, one per input column
    std::string u = "0";         // LTV chain input
    Vector xi0;                  // LTV copy-observer init (defaults to zero)
    std::optional<Matrix> plant_A;  // LTV true plant (defaults to the bare chain)
    std::optional<Vector> plant_B;

    double t_final = 10.0;
    double dt = 1e-3;
    int decimation = 1;
    double metrics_threshold = 1e-3;
};

inline ScenarioFile parse_scenario_json(const Json& j) {
    ScenarioFile sc;
    sc.x0 = detail::vector_from_json(j.at("x0"), "x0");
    if (j.contains("z0")) {
        const Json& z = j.at("z0");
        if (z.is_string() && z.get<std::string>() == "zero") {
            sc.z0_policy = ScenarioFile::Z0Policy::zero;
        } else if (z.is_array()) {
            sc.z0_policy = ScenarioFile::Z0Policy::explicit_vector;
            sc.z0 = detail::vector_from_json(z, "z0");
        } else if (z.is_object() && z.contains("match_xhat0")) {
            sc.z0_policy = ScenarioFile::Z0Policy::match_xhat0;
            sc.xhat0 = detail::vector_from_json(z.at("match_xhat0"), "match_xhat0");
        } else {
            throw Error("'z0' must be \"zero\", an array, or {\"match_xhat0\": [...]}");
        }
    }
    if (j.contains("f")) {
        for (const Json& e : j.at("f")) sc.f.push_back(e.get<std::string>());
    }
    if (j.contains("u")) sc.u = j.at("u").get<std::string>();
    if (j.contains("xi0")) sc.xi0 = detail::vector_from_json(j.at("xi0"), "xi0");
    if (j.contains("plant_A")) sc.plant_A = detail::matrix_from_json(j.at("plant_A"), "plant_A");
    if (j.contains("plant_B")) sc.plant_B = detail::vector_from_json(j.at("plant_B"), "plant_B");
    if (j.contains("t_final")) sc.t_final = j.at("t_final").get<double>();
    if (j.contains("dt")) sc.dt = j.at("dt").get<double>();
    if (j.contains("decimation")) sc.decimation = j.at("decimation").get<int>();
    if (j.contains("metrics_threshold"))
        sc.metrics_threshold = j.at("metrics_threshold").get<double>();
    if (!(sc.dt > 0.0)) throw Error("'dt' must be positive");
    if (sc.decimation < 1) throw Error("'decimation' must be >= 1");
    return sc;
}

inline ScenarioFile load_scenario_file(const std::string& path) {
    return parse_scenario_json(detail::load_json_file(path));
}

// ---------------------------------------------------------------------------
// CSV output: t, x1..xn, xbar1..xbarq, err1..errq with 15 significant digits.
// ---------------------------------------------------------------------------

inline void write_scenario_csv(std::ostream& out, const ScenarioResult& res, int decimation = 1) {
    if (decimation < 1) throw Error("decimation must be >= 1");
    const Eigen::Index n = res.state.dim();
    const Eigen::Index q = res.estimate.dim();
    out << "t";
    for (Eigen::Index i = 1; i <= n; ++i) out << ",x" << i;
    for (Eigen::Index i = 1; i <= q; ++i) out << ",xbar" << i;
    for (Eigen::Index i = 1; i <= q; ++i) out << ",err" << i;
    out << "\n";

    char buf[40];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.15g", v);
        out << ',' << buf;
    };
    for (Eigen::Index k = 0; k < res.state.size(); k += decimation) {
        std::snprintf(buf, sizeof(buf), "%.15g", res.state.times[static_cast<std::size_t>(k)]);
        out << buf;
        for (Eigen::Index i = 0; i < n; ++i) put(res.state.samples(k, i));
        for (Eigen::Index i = 0; i < q; ++i) put(res.estimate.samples(k, i));
        for (Eigen::Index i = 0; i < q; ++i) put(res.error.samples(k, i));
        out << "\n";
    }
}

inline void write_scenario_csv(const std::string& path, const ScenarioResult& res,
                               int decimation = 1) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write '" + path + "'");
    write_scenario_csv(out, res, decimation);
}

}  // namespace fuio
