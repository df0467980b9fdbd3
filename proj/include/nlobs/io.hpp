#pragma once

#include <json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "nlobs/asymptotic.hpp"
#include "nlobs/global.hpp"

namespace nlobs {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Polynomials and matrices.

inline json to_json(const SymMatrix& m) { return m.upper(); }

inline SymMatrix sym_from_json(int dim, const json& j) {
    const auto v = j.get<std::vector<double>>();
    return SymMatrix::from_upper(dim, v);
}

inline json vec_to_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Vec vec_from_json(const json& j) {
    const auto v = j.get<std::vector<double>>();
    if (v.size() > static_cast<std::size_t>(kMaxDim)) throw DimensionError("vector longer than supported dimension");
    Vec out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Eigen::Index>(i)) = v[i];
    return out;
}

inline json to_json(const QuadraticPoly& q) {
    return {{"dim", q.dim()},
            {"A", to_json(q.hessian())},
            {"center", vec_to_json(q.center())},
            {"linear", vec_to_json(q.linear())},
            {"constant", q.constant()}};
}

inline QuadraticPoly poly_from_json(const json& j) {
    const int d = j.at("dim").get<int>();
    const Vec c = j.contains("center") ? vec_from_json(j["center"]) : Vec(Vec::Zero(d));
    const Vec b = j.contains("linear") ? vec_from_json(j["linear"]) : Vec(Vec::Zero(d));
    return {sym_from_json(d, j.at("A")), c, b, j.value("constant", 0.0)};
}

// ---------------------------------------------------------------------------
// Operators.

inline json to_json(const EllipticOperator& f);

inline json branches_to_json(const std::vector<LinearBranch>& bs) {
    json arr = json::array();
    for (const auto& b : bs) arr.push_back({{"B", to_json(b.B)}, {"c", b.c}});
    return arr;
}

inline std::vector<LinearBranch> branches_from_json(const json& j) {
    std::vector<LinearBranch> out;
    const auto& arr = j.is_object() ? j.at("branches") : j;
    const int d = j.is_object() && j.contains("dim") ? j["dim"].get<int>() : -1;
    for (const auto& b : arr) {
        const auto up = b.at("B").get<std::vector<double>>();
        int dim = d;
        if (dim < 0) {
            dim = 1;
            while (static_cast<std::size_t>(dim * (dim + 1) / 2) < up.size()) ++dim;
        }
        out.push_back({SymMatrix::from_upper(dim, up), b.value("c", 0.0)});
    }
    return out;
}

inline json to_json(const EllipticOperator& f) {
    return std::visit(
        [&](const auto& k) -> json {
            using K = std::decay_t<decltype(k)>;
            json j{{"kind", f.name()}, {"dim", f.dim()}, {"ellipticity", f.ellipticity()}};
            if constexpr (std::is_same_v<K, op::Pucci>) {
                j["lambda"] = k.lambda;
                j["Lambda"] = k.Lambda;
            } else if constexpr (std::is_same_v<K, op::SmoothPucci>) {
                j["lambda"] = k.lambda;
                j["Lambda"] = k.Lambda;
                j["sharpness"] = k.sharpness;
            } else if constexpr (std::is_same_v<K, op::MaxLinear>) {
                j["branches"] = branches_to_json(k.branches);
            } else if constexpr (std::is_same_v<K, op::SmoothMax>) {
                j["sharpness"] = k.sharpness;
                j["branches"] = branches_to_json(k.branches);
            } else if constexpr (std::is_same_v<K, op::Shifted>) {
                j["base"] = to_json(*k.base);
                j["A0"] = to_json(k.A0);
            } else if constexpr (std::is_same_v<K, op::Congruence>) {
                j["base"] = to_json(*k.base);
                j["S"] = to_json(k.S);
            }
            return j;
        },
        f.kind());
}

inline EllipticOperator operator_from_json(const json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    const int d = j.value("dim", 3);
    std::optional<double> declared;
    if (j.contains("ellipticity")) declared = j["ellipticity"].get<double>();
    if (kind == "trace") return EllipticOperator::trace(d);
    if (kind == "pucci" || kind == "pucci_min")
        return EllipticOperator::pucci(d, j.at("lambda").get<double>(), j.at("Lambda").get<double>(), kind == "pucci");
    if (kind == "smooth_pucci")
        return EllipticOperator::smooth_pucci(d, j.at("lambda").get<double>(), j.at("Lambda").get<double>(),
                                              j.at("sharpness").get<double>());
    if (kind == "max_linear") return EllipticOperator::max_linear(branches_from_json(j), declared);
    if (kind == "smooth_max")
        return EllipticOperator::smooth_max(j.at("sharpness").get<double>(), branches_from_json(j), declared);
    if (kind == "shifted") {
        const EllipticOperator base = operator_from_json(j.at("base"));
        return EllipticOperator::shifted(base, sym_from_json(base.dim(), j.at("A0")));
    }
    if (kind == "congruence") {
        const EllipticOperator base = operator_from_json(j.at("base"));
        return EllipticOperator::congruence(base, sym_from_json(base.dim(), j.at("S")));
    }
    throw std::invalid_argument("unknown operator kind '" + kind + "'");
}

inline json read_json_file(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    return json::parse(in);
}

inline void write_json_file(const std::filesystem::path& p, const json& j) {
    std::ofstream out(p);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << j.dump(2) << '\n';
}

namespace detail {

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) parts.push_back(item);
    return parts;
}

inline double parse_double(const std::string& s) {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("not a number: '" + s + "'");
    return v;
}

}  // namespace detail

/// Operator from a command-line flag:
///   trace | pucci:l,L | pucci_min:l,L | smoothpucci:l,L,s | maxlin:<file> |
///   smoothmax:<file>:<s> | <file>.json
inline EllipticOperator parse_operator(const std::string& spec, int dim) {
    const auto colon = spec.find(':');
    const std::string head = spec.substr(0, colon);
    const std::string rest = colon == std::string::npos ? "" : spec.substr(colon + 1);
    auto numbers = [&](std::size_t n) {
        const auto parts = detail::split(rest, ',');
        if (parts.size() != n) throw std::invalid_argument("operator '" + spec + "': expected " + std::to_string(n) + " numbers");
        std::vector<double> v;
        for (const auto& p : parts) v.push_back(detail::parse_double(p));
        return v;
    };
    if (head == "trace" && rest.empty()) return EllipticOperator::trace(dim);
    if (head == "pucci" || head == "pucci_min") {
        const auto v = numbers(2);
        return EllipticOperator::pucci(dim, v[0], v[1], head == "pucci");
    }
    if (head == "smoothpucci" || head == "smooth_pucci") {
        const auto v = numbers(3);
        return EllipticOperator::smooth_pucci(dim, v[0], v[1], v[2]);
    }
    if (head == "maxlin" || head == "max_linear") {
        const json j = read_json_file(rest);
        std::optional<double> declared;
        if (j.is_object() && j.contains("ellipticity")) declared = j["ellipticity"].get<double>();
        return EllipticOperator::max_linear(branches_from_json(j), declared);
    }
    if (head == "smoothmax" || head == "smooth_max") {
        const auto last = rest.rfind(':');
        if (last == std::string::npos) throw std::invalid_argument("operator '" + spec + "': expected smoothmax:<file>:<s>");
        const json j = read_json_file(rest.substr(0, last));
        std::optional<double> declared;
        if (j.is_object() && j.contains("ellipticity")) declared = j["ellipticity"].get<double>();
        return EllipticOperator::smooth_max(detail::parse_double(rest.substr(last + 1)), branches_from_json(j), declared);
    }
    if (colon == std::string::npos && spec.size() > 5 && spec.ends_with(".json"))
        return operator_from_json(read_json_file(spec));
    throw std::invalid_argument("unknown operator '" + spec + "'");
}

// ---------------------------------------------------------------------------
// Field snapshots: JSON header plus a float64 little-endian sidecar.

struct Snapshot {
    ScalarField field;
    std::optional<EllipticOperator> op;
    std::optional<QuadraticPoly> Q;
    std::vector<std::uint8_t> contact_mask;
    json meta;
};

inline void write_f64_le(std::ostream& out, const std::vector<double>& v) {
    for (double x : v) {
        std::uint64_t bits;
        std::memcpy(&bits, &x, sizeof bits);
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
        out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
}

inline std::vector<double> read_f64_le(std::istream& in, std::size_t n) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t bits = 0;
        if (!in.read(reinterpret_cast<char*>(&bits), sizeof bits)) throw std::runtime_error("snapshot: truncated value file");
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
        std::memcpy(&v[i], &bits, sizeof bits);
    }
    return v;
}

/// Writes <path> (JSON header) and <path>.bin (values, node order with axis 0
/// fastest). Contact nodes are recorded by index in the header.
inline void save_snapshot(const std::filesystem::path& path, const ScalarField& field,
                          const std::optional<EllipticOperator>& op, const std::optional<QuadraticPoly>& Q,
                          const std::vector<std::uint8_t>& contact_mask = {}, const json& extra = json::object()) {
    const Grid& g = *field.grid;
    std::filesystem::path bin = path;
    bin += ".bin";
    json h{{"format", "nlobs-snapshot-1"},
           {"dim", g.dim()},
           {"h", g.h()},
           {"R", g.radius()},
           {"extent", std::vector<int>(static_cast<std::size_t>(g.dim()), g.side())},
           {"values", bin.filename().string()},
           {"dtype", "float64-le"}};
    if (op) h["operator"] = to_json(*op);
    if (Q) h["Q"] = to_json(*Q);
    std::vector<std::size_t> contact;
    for (std::size_t i = 0; i < contact_mask.size(); ++i)
        if (contact_mask[i]) contact.push_back(i);
    if (!contact_mask.empty()) h["contact_nodes"] = contact;
    if (!extra.empty()) h["meta"] = extra;
    write_json_file(path, h);
    std::ofstream out(bin, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + bin.string());
    write_f64_le(out, field.values);
}

inline Snapshot load_snapshot(const std::filesystem::path& path) {
    const json h = read_json_file(path);
    if (h.value("format", "") != "nlobs-snapshot-1") throw std::runtime_error("snapshot: unknown format in " + path.string());
    Snapshot s;
    auto grid = build_grid(h.at("dim").get<int>(), h.at("R").get<double>(), h.at("h").get<double>());
    const auto extent = h.at("extent").get<std::vector<int>>();
    for (int e : extent)
        if (e != grid->side()) throw std::runtime_error("snapshot: extent does not match the rebuilt grid");
    const std::filesystem::path bin = path.parent_path() / h.at("values").get<std::string>();
    std::ifstream in(bin, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + bin.string());
    s.field = ScalarField(grid, read_f64_le(in, grid->size()));
    if (h.contains("operator")) s.op = operator_from_json(h["operator"]);
    if (h.contains("Q")) s.Q = poly_from_json(h["Q"]);
    if (h.contains("contact_nodes")) {
        s.contact_mask.assign(grid->size(), 0);
        for (std::size_t i : h["contact_nodes"].get<std::vector<std::size_t>>()) {
            if (i >= grid->size()) throw std::runtime_error("snapshot: contact node out of range");
            s.contact_mask[i] = 1;
        }
    }
    s.meta = h.value("meta", json::object());
    return s;
}

// ---------------------------------------------------------------------------
// CSV.

inline std::string shells_csv(const std::vector<Shell>& shells) {
    std::ostringstream out;
    out.precision(17);
    out << "radius,mean,min,max,count\n";
    for (const auto& s : shells) out << s.r_mean << ',' << s.mean << ',' << s.min << ',' << s.max << ',' << s.count << '\n';
    return out.str();
}

inline std::string residual_csv(const std::vector<ResidualShell>& profile) {
    std::ostringstream out;
    out.precision(17);
    out << "radius,max,mean\n";
    for (const auto& s : profile) out << s.r << ',' << s.max << ',' << s.mean << '\n';
    return out.str();
}

// ---------------------------------------------------------------------------
// Reports.

inline json to_json(const MembershipVerdict& v) {
    json viol = json::array();
    for (const auto& x : v.violations)
        viol.push_back({{"condition", x.condition}, {"measured", x.measured}, {"threshold", x.threshold}});
    return {{"in_class", v.in_class},
            {"violations", viol},
            {"min_eigenvalue", v.min_eigenvalue},
            {"operator_value", std::isfinite(v.operator_value) ? json(v.operator_value) : json(nullptr)}};
}

inline json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json to_json(const SolveResult& r) {
    return {{"residual", r.residual},
            {"iterations", r.iterations},
            {"phase_flips", r.phase_flips},
            {"contact_count", r.contact_count},
            {"contact_tol", r.contact_tol},
            {"unknowns", r.unknowns},
            {"residual_history", r.residual_history},
            {"warnings", r.warnings}};
}

inline json to_json(const AsymptoticFit& f) {
    json j{{"Q_hat", to_json(f.Q_hat)},
           {"b_hat", vec_to_json(f.b_hat)},
           {"c_hat", f.c_hat},
           {"tail_coefficient", f.tail_coefficient},
           {"window", {f.r_min, f.r_max}},
           {"contact_circumradius", f.contact_circumradius},
           {"exact", f.exact},
           {"verdict", to_json(f.verdict)},
           {"warnings", f.warnings}};
    if (f.decay) j["decay"] = {{"slope", f.decay->slope}, {"r_squared", f.decay->r_squared}, {"shells_used", f.decay->used},
                               {"below_floor", f.decay->below_floor}};
    json prof = json::array();
    for (const auto& s : f.residual_profile) prof.push_back({s.r, s.max, s.mean});
    j["residual_profile"] = prof;
    json bd = json::array();
    for (const auto& b : f.blow_downs) {
        json e{{"scale", b.scale}, {"accepted", b.accepted}};
        if (b.accepted) e["A"] = to_json(b.p.hessian());
        else e["reason"] = b.reason;
        bd.push_back(e);
    }
    j["blow_downs"] = bd;
    return j;
}

inline json certificates_json(const GlobalSolution& gs) {
    json rungs = json::array();
    for (const auto& r : gs.ladder) {
        const auto& c = r.certificates;
        rungs.push_back({{"R", r.R},
                         {"solve", to_json(r.result)},
                         {"continuation_diff", num(r.continuation_diff)},
                         {"trapping_lower", c.trapping_lower},
                         {"trapping_upper", c.trapping_upper},
                         {"monotonicity", num(c.monotonicity)},
                         {"contact_violations", c.contact_violations},
                         {"worst_contact_q", num(c.worst_contact_q)},
                         {"growth", c.growth},
                         {"required_C", required_constant(std::min({c.trapping_lower, c.trapping_upper,
                                                                     std::isfinite(c.monotonicity) ? c.monotonicity : 0.0}),
                                                          gs.h)}});
    }
    return {{"Q", to_json(gs.Q)},
            {"operator", to_json(gs.op)},
            {"h", gs.h},
            {"continuation_tol", gs.continuation_tol},
            {"certificate_tol", gs.certificate_tol},
            {"converged", gs.converged},
            {"growth_bound", growth_bound(gs)},
            {"rungs", rungs},
            {"warnings", gs.warnings}};
}

/// FNV-1a 64-bit hash of a canonical JSON dump.
inline std::string config_hash(const json& config) {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (unsigned char c : config.dump()) {
        hash ^= c;
        hash *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
    return buf;
}

}  // namespace nlobs
