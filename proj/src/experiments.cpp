#include "trackmpc/experiments.hpp"

#include "trackmpc/models.hpp"
#include "trackmpc/parallel.hpp"

#include <algorithm>
#include <charconv>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace trackmpc {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) {
        return "";
    }
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

std::vector<std::string> split_ws(const std::string& s) {
    std::istringstream in(s);
    std::vector<std::string> out;
    std::string tok;
    while (in >> tok) {
        out.push_back(tok);
    }
    return out;
}

double to_double(const std::string& tok, const std::string& field) {
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (tok.empty() || end != tok.c_str() + tok.size() || errno == ERANGE) {
        throw ConfigError("field '" + field + "': '" + tok + "' is not a number");
    }
    return v;
}

long to_long(const std::string& tok, const std::string& field) {
    errno = 0;
    char* end = nullptr;
    const long v = std::strtol(tok.c_str(), &end, 10);
    if (tok.empty() || end != tok.c_str() + tok.size() || errno == ERANGE) {
        throw ConfigError("field '" + field + "': '" + tok + "' is not an integer");
    }
    return v;
}

/// Shortest text that parses back to the same double.
std::string fmt(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string fmt_vector(const Vector& v) {
    std::string s;
    for (Index i = 0; i < v.size(); ++i) {
        s += (i == 0 ? "" : " ") + fmt(v[i]);
    }
    return s;
}

std::string fmt_matrix(const Matrix& M) {
    std::string s;
    for (Index i = 0; i < M.rows(); ++i) {
        if (i > 0) {
            s += "; ";
        }
        s += fmt_vector(M.row(i).transpose());
    }
    return s;
}

/// Access to one config document with field names in error messages.
class Reader {
public:
    explicit Reader(const IniDocument& doc) : doc_(doc) {}

    [[nodiscard]] bool has(const std::string& sec, const std::string& key) const { return doc_.has(sec, key); }
    [[nodiscard]] std::string str(const std::string& sec, const std::string& key) const {
        return trim(doc_.get(sec, key));
    }
    [[nodiscard]] double num(const std::string& sec, const std::string& key) const {
        return to_double(str(sec, key), sec + "." + key);
    }
    [[nodiscard]] double num_or(const std::string& sec, const std::string& key, double fallback) const {
        return has(sec, key) ? num(sec, key) : fallback;
    }
    [[nodiscard]] long integer(const std::string& sec, const std::string& key) const {
        return to_long(str(sec, key), sec + "." + key);
    }
    [[nodiscard]] long integer_or(const std::string& sec, const std::string& key, long fallback) const {
        return has(sec, key) ? integer(sec, key) : fallback;
    }
    [[nodiscard]] bool flag_or(const std::string& sec, const std::string& key, bool fallback) const {
        if (!has(sec, key)) {
            return fallback;
        }
        const std::string v = str(sec, key);
        if (v == "true" || v == "1" || v == "yes") {
            return true;
        }
        if (v == "false" || v == "0" || v == "no") {
            return false;
        }
        throw ConfigError("field '" + sec + "." + key + "': expected true or false");
    }
    [[nodiscard]] Vector vec(const std::string& sec, const std::string& key) const {
        const auto toks = split_ws(str(sec, key));
        Vector v(static_cast<Index>(toks.size()));
        for (std::size_t i = 0; i < toks.size(); ++i) {
            v[static_cast<Index>(i)] = to_double(toks[i], sec + "." + key);
        }
        return v;
    }
    [[nodiscard]] std::vector<double> list(const std::string& sec, const std::string& key) const {
        const Vector v = vec(sec, key);
        return {v.data(), v.data() + v.size()};
    }
    [[nodiscard]] std::vector<int> int_list(const std::string& sec, const std::string& key) const {
        std::vector<int> out;
        for (const auto& tok : split_ws(str(sec, key))) {
            out.push_back(static_cast<int>(to_long(tok, sec + "." + key)));
        }
        return out;
    }
    [[nodiscard]] Matrix mat(const std::string& sec, const std::string& key) const {
        std::vector<Vector> rows;
        std::string text = str(sec, key);
        std::size_t start = 0;
        while (start <= text.size()) {
            const auto stop = text.find(';', start);
            const std::string part = text.substr(start, stop == std::string::npos ? std::string::npos : stop - start);
            const auto toks = split_ws(part);
            Vector row(static_cast<Index>(toks.size()));
            for (std::size_t i = 0; i < toks.size(); ++i) {
                row[static_cast<Index>(i)] = to_double(toks[i], sec + "." + key);
            }
            rows.push_back(row);
            if (stop == std::string::npos) {
                break;
            }
            start = stop + 1;
        }
        const Index cols = rows.empty() ? 0 : rows.front().size();
        Matrix M(static_cast<Index>(rows.size()), cols);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != cols) {
                throw ConfigError("field '" + sec + "." + key + "': matrix rows have different lengths");
            }
            M.row(static_cast<Index>(i)) = rows[i].transpose();
        }
        return M;
    }
    [[nodiscard]] ScalingFn scaling(const std::string& sec, const std::string& key) const {
        const auto toks = split_ws(str(sec, key));
        const std::string field = sec + "." + key;
        if (toks.size() == 3 && toks[0] == "affine") {
            return ScalingFn::affine(to_double(toks[1], field), to_double(toks[2], field));
        }
        if (toks.size() == 2 && toks[0] == "constant") {
            return ScalingFn::constant(to_double(toks[1], field));
        }
        throw ConfigError("field '" + field + "': expected 'affine a b' or 'constant c'");
    }

private:
    const IniDocument& doc_;
};

std::string fmt_scaling(const ScalingFn& f) {
    return f.kind == ScalingFn::Kind::affine ? "affine " + fmt(f.a) + " " + fmt(f.b) : "constant " + fmt(f.b);
}

std::string eta_key(double eta) {
    std::ostringstream out;
    out << eta;
    return out.str();
}

std::string sanitize(std::string s) {
    std::replace(s.begin(), s.end(), ',', ';');
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
}

}  // namespace

IniDocument IniDocument::parse(const std::string& text) {
    IniDocument doc;
    std::istringstream in(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') {
            continue;
        }
        if (t.front() == '[') {
            if (t.back() != ']' || t.size() < 3) {
                throw ConfigError("line " + std::to_string(lineno) + ": malformed section header");
            }
            section = trim(t.substr(1, t.size() - 2));
            if (!doc.has(section, "")) {
                doc.sections_.emplace_back(section, std::vector<std::pair<std::string, std::string>>{});
            }
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
        }
        if (section.empty()) {
            throw ConfigError("line " + std::to_string(lineno) + ": key outside of a section");
        }
        const std::string key = trim(t.substr(0, eq));
        if (key.empty()) {
            throw ConfigError("line " + std::to_string(lineno) + ": empty key");
        }
        doc.set(section, key, trim(t.substr(eq + 1)));
    }
    return doc;
}

void IniDocument::set(const std::string& section, const std::string& key, const std::string& value) {
    auto it = std::find_if(sections_.begin(), sections_.end(), [&](const auto& s) { return s.first == section; });
    if (it == sections_.end()) {
        sections_.emplace_back(section, std::vector<std::pair<std::string, std::string>>{});
        it = std::prev(sections_.end());
    }
    for (auto& kv : it->second) {
        if (kv.first == key) {
            kv.second = value;
            return;
        }
    }
    it->second.emplace_back(key, value);
}

bool IniDocument::has(const std::string& section, const std::string& key) const {
    for (const auto& s : sections_) {
        if (s.first != section) {
            continue;
        }
        if (key.empty()) {
            return true;
        }
        for (const auto& kv : s.second) {
            if (kv.first == key) {
                return true;
            }
        }
    }
    return false;
}

const std::string& IniDocument::get(const std::string& section, const std::string& key) const {
    for (const auto& s : sections_) {
        if (s.first != section) {
            continue;
        }
        for (const auto& kv : s.second) {
            if (kv.first == key) {
                return kv.second;
            }
        }
    }
    throw ConfigError("missing field '" + section + "." + key + "'");
}

std::string IniDocument::get_or(const std::string& section, const std::string& key,
                                const std::string& fallback) const {
    return has(section, key) ? get(section, key) : fallback;
}

std::vector<std::string> IniDocument::sections() const {
    std::vector<std::string> out;
    for (const auto& s : sections_) {
        out.push_back(s.first);
    }
    return out;
}

std::string IniDocument::serialize() const {
    std::string out;
    for (const auto& s : sections_) {
        if (!out.empty()) {
            out += "\n";
        }
        out += "[" + s.first + "]\n";
        for (const auto& kv : s.second) {
            out += kv.first + " = " + kv.second + "\n";
        }
    }
    return out;
}

void ExperimentConfig::validate() const {
    if (model.empty()) {
        throw ConfigError("missing field 'experiment.model'");
    }
    const ModelPtr m = make_model(model);
    const Index n = m->state_dim();
    const Index nu = m->input_dim();
    spec.validate(n, nu);
    if (Q.rows() != n || Q.cols() != n) {
        throw ConfigError("field 'stage_cost.Q' must be " + std::to_string(n) + "x" + std::to_string(n));
    }
    if (R.rows() != nu || R.cols() != nu) {
        throw ConfigError("field 'stage_cost.R' must be " + std::to_string(nu) + "x" + std::to_string(nu));
    }
    if (offset_weights.size() != n + nu) {
        throw ConfigError("field 'offset_cost.weights' must have " + std::to_string(n + nu) + " entries");
    }
    if (x_e.size() != n) {
        throw ConfigError("field 'offset_cost.x_e' must have " + std::to_string(n) + " entries");
    }
    if (u_e.size() != nu) {
        throw ConfigError("field 'offset_cost.u_e' must have " + std::to_string(nu) + " entries");
    }
    if (x0.size() != n) {
        throw ConfigError("field 'closed_loop.x0' must have " + std::to_string(n) + " entries");
    }
    if (!spec.state.contains(x0)) {
        throw ConfigError("field 'closed_loop.x0' lies outside the state constraints");
    }
    for (int N : N_list) {
        if (N < 1) {
            throw ConfigError("field 'closed_loop.N': horizons must be positive");
        }
    }
    for (double eta : eta_list) {
        if (!(eta > 0.0)) {
            throw ConfigError("field 'closed_loop.eta': cost bounds must be positive");
        }
    }
    if (K < 0) {
        throw ConfigError("field 'closed_loop.K' must be nonnegative");
    }
    for (const AblationSpec& a : ablations) {
        if (a.N < 1 || !(a.eta > 0.0) || a.lambda(0) < 1.0) {
            throw ConfigError("section 'ablation." + a.name + "': need N >= 1, eta > 0 and lambda >= 1");
        }
    }
    if (oracle.N < 1 || oracle.K_max < 1 || !(oracle.tail_tol > 0.0)) {
        throw ConfigError("section 'oracle': need N >= 1, K_max >= 1 and tail_tol > 0");
    }
    (void)StageCost(Q, R);
    ControllerConfig probe;
    probe.lambda = lambda;
    probe.validate(true);
}

ExperimentConfig parse_config(const std::string& text) {
    const IniDocument doc = IniDocument::parse(text);
    const Reader rd(doc);
    ExperimentConfig c;
    c.name = rd.has("experiment", "name") ? rd.str("experiment", "name") : "experiment";
    c.model = rd.str("experiment", "model");
    if (c.model.empty()) {
        throw ConfigError("missing field 'experiment.model'");
    }
    c.seed = static_cast<std::uint64_t>(rd.integer_or("experiment", "seed", 0));
    if (rd.has("experiment", "output_dir")) {
        c.output_dir = rd.str("experiment", "output_dir");
    }

    c.spec.state = Box(rd.vec("constraints", "state_lower"), rd.vec("constraints", "state_upper"));
    c.spec.input = Box(rd.vec("constraints", "input_lower"), rd.vec("constraints", "input_upper"));
    c.spec.ref_state = Box(rd.vec("constraints", "ref_state_lower"), rd.vec("constraints", "ref_state_upper"));
    c.spec.ref_input = Box(rd.vec("constraints", "ref_input_lower"), rd.vec("constraints", "ref_input_upper"));

    c.Q = rd.mat("stage_cost", "Q");
    c.R = rd.mat("stage_cost", "R");
    c.offset_weights = rd.vec("offset_cost", "weights");
    c.x_e = rd.vec("offset_cost", "x_e");
    c.u_e = rd.vec("offset_cost", "u_e");
    if (rd.has("scaling", "lambda")) {
        c.lambda = rd.scaling("scaling", "lambda");
    }

    c.x0 = rd.vec("closed_loop", "x0");
    c.N_list = doc.has("closed_loop", "N") ? rd.int_list("closed_loop", "N") : std::vector<int>{};
    c.eta_list = doc.has("closed_loop", "eta") ? rd.list("closed_loop", "eta") : std::vector<double>{};
    c.K = static_cast<int>(rd.integer_or("closed_loop", "K", 300));
    c.standard_runs = rd.flag_or("closed_loop", "standard", true);
    if (rd.has("closed_loop", "warm_start")) {
        const std::string w = rd.str("closed_loop", "warm_start");
        if (w == "shift") {
            c.warm_start = WarmStartMode::shift;
        } else if (w == "cold") {
            c.warm_start = WarmStartMode::cold;
        } else {
            throw ConfigError("field 'closed_loop.warm_start': expected shift or cold");
        }
    }

    c.oracle_enabled = rd.flag_or("oracle", "enabled", true);
    c.oracle.N = static_cast<int>(rd.integer_or("oracle", "N", c.oracle.N));
    c.oracle.tail_tol = rd.num_or("oracle", "tail_tol", c.oracle.tail_tol);
    c.oracle.K_max = static_cast<int>(rd.integer_or("oracle", "K_max", c.oracle.K_max));

    c.constants_enabled = rd.flag_or("constants", "enabled", true);
    c.constants.references = static_cast<int>(rd.integer_or("constants", "references", c.constants.references));
    c.constants.states_per_reference =
        static_cast<int>(rd.integer_or("constants", "states_per_reference", c.constants.states_per_reference));
    c.constants.horizon = static_cast<int>(rd.integer_or("constants", "horizon", c.constants.horizon));
    c.constants.horizon_step = static_cast<int>(rd.integer_or("constants", "horizon_step", c.constants.horizon_step));
    if (rd.has("constants", "sigma_levels")) {
        c.constants.sigma_levels = rd.list("constants", "sigma_levels");
    }
    c.constants.manifold_samples =
        static_cast<int>(rd.integer_or("constants", "manifold_samples", c.constants.manifold_samples));
    c.constants.seed = c.seed;

    for (const std::string& sec : doc.sections()) {
        const std::string prefix = "ablation.";
        if (sec.rfind(prefix, 0) != 0) {
            continue;
        }
        AblationSpec a;
        a.name = sec.substr(prefix.size());
        a.N = static_cast<int>(rd.integer(sec, "N"));
        a.eta = rd.num(sec, "eta");
        a.lambda = rd.scaling(sec, "lambda");
        c.ablations.push_back(a);
    }
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read config file '" + path + "'");
    }
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config(text.str());
}

std::string serialize_config(const ExperimentConfig& c) {
    IniDocument doc;
    doc.set("experiment", "name", c.name);
    doc.set("experiment", "model", c.model);
    doc.set("experiment", "seed", std::to_string(c.seed));
    doc.set("experiment", "output_dir", c.output_dir);
    doc.set("constraints", "state_lower", fmt_vector(c.spec.state.lower));
    doc.set("constraints", "state_upper", fmt_vector(c.spec.state.upper));
    doc.set("constraints", "input_lower", fmt_vector(c.spec.input.lower));
    doc.set("constraints", "input_upper", fmt_vector(c.spec.input.upper));
    doc.set("constraints", "ref_state_lower", fmt_vector(c.spec.ref_state.lower));
    doc.set("constraints", "ref_state_upper", fmt_vector(c.spec.ref_state.upper));
    doc.set("constraints", "ref_input_lower", fmt_vector(c.spec.ref_input.lower));
    doc.set("constraints", "ref_input_upper", fmt_vector(c.spec.ref_input.upper));
    doc.set("stage_cost", "Q", fmt_matrix(c.Q));
    doc.set("stage_cost", "R", fmt_matrix(c.R));
    doc.set("offset_cost", "weights", fmt_vector(c.offset_weights));
    doc.set("offset_cost", "x_e", fmt_vector(c.x_e));
    doc.set("offset_cost", "u_e", fmt_vector(c.u_e));
    doc.set("scaling", "lambda", fmt_scaling(c.lambda));
    doc.set("closed_loop", "x0", fmt_vector(c.x0));
    std::string Ns;
    for (int N : c.N_list) {
        Ns += (Ns.empty() ? "" : " ") + std::to_string(N);
    }
    doc.set("closed_loop", "N", Ns);
    std::string etas;
    for (double e : c.eta_list) {
        etas += (etas.empty() ? "" : " ") + fmt(e);
    }
    doc.set("closed_loop", "eta", etas);
    doc.set("closed_loop", "K", std::to_string(c.K));
    doc.set("closed_loop", "standard", c.standard_runs ? "true" : "false");
    doc.set("closed_loop", "warm_start", c.warm_start == WarmStartMode::shift ? "shift" : "cold");
    doc.set("oracle", "enabled", c.oracle_enabled ? "true" : "false");
    doc.set("oracle", "N", std::to_string(c.oracle.N));
    doc.set("oracle", "tail_tol", fmt(c.oracle.tail_tol));
    doc.set("oracle", "K_max", std::to_string(c.oracle.K_max));
    doc.set("constants", "enabled", c.constants_enabled ? "true" : "false");
    doc.set("constants", "references", std::to_string(c.constants.references));
    doc.set("constants", "states_per_reference", std::to_string(c.constants.states_per_reference));
    doc.set("constants", "horizon", std::to_string(c.constants.horizon));
    doc.set("constants", "horizon_step", std::to_string(c.constants.horizon_step));
    std::string levels;
    for (double l : c.constants.sigma_levels) {
        levels += (levels.empty() ? "" : " ") + fmt(l);
    }
    doc.set("constants", "sigma_levels", levels);
    doc.set("constants", "manifold_samples", std::to_string(c.constants.manifold_samples));
    for (const AblationSpec& a : c.ablations) {
        const std::string sec = "ablation." + a.name;
        doc.set(sec, "N", std::to_string(a.N));
        doc.set(sec, "eta", fmt(a.eta));
        doc.set(sec, "lambda", fmt_scaling(a.lambda));
    }
    return doc.serialize();
}

std::vector<std::string> preset_names() { return {"cstr-paper", "scalar-lq"}; }

ExperimentConfig preset(const std::string& name) {
    ExperimentConfig c;
    c.name = name;
    c.output_dir = "out/" + name;
    if (name == "cstr-paper") {
        c.model = "cstr";
        c.spec.state = Box(Vector::Zero(2), Vector::Ones(2));
        c.spec.input = Box(Vector::Zero(1), Vector::Constant(1, 2.0));
        c.spec.ref_state = Box((Vector(2) << 0.0529, 0.43).finished(), (Vector(2) << 0.9492, 0.86).finished());
        c.spec.ref_input = Box(Vector::Constant(1, 0.1366), Vector::Constant(1, 0.7687));
        c.Q = Matrix::Identity(2, 2);
        c.R = Matrix::Zero(1, 1);
        c.offset_weights = (Vector(3) << 0.01, 1000.0, 1.0).finished();
        c.x_e = (Vector(2) << 0.2632, 0.6519).finished();
        c.u_e = Vector::Constant(1, 0.7585);
        c.lambda = ScalingFn::affine(1.0, 1.0);
        c.x0 = (Vector(2) << 0.9492, 0.43).finished();
        c.N_list = {10, 20, 30, 50, 100};
        c.eta_list = {0.5, 10.0};
        c.K = 300;
        c.ablations.push_back({"lambda_one", 1000, 10.0, ScalingFn::constant(1.0)});
        c.oracle.N = 1000;
        c.constants.references = 20;
        c.constants.states_per_reference = 50;
        c.constants.horizon = 200;
        return c;
    }
    if (name == "scalar-lq") {
        c.model = "scalar_lq";
        c.spec.state = Box(Vector::Constant(1, -20.0), Vector::Constant(1, 20.0));
        c.spec.input = Box(Vector::Constant(1, -20.0), Vector::Constant(1, 20.0));
        c.spec.ref_state = Box(Vector::Constant(1, -5.0), Vector::Constant(1, 5.0));
        c.spec.ref_input = Box(Vector::Constant(1, -1.0), Vector::Constant(1, 1.0));
        c.Q = Matrix::Identity(1, 1);
        c.R = Matrix::Identity(1, 1);
        c.offset_weights = (Vector(2) << 1.0, 1.0).finished();
        c.x_e = Vector::Zero(1);
        c.u_e = Vector::Zero(1);
        c.lambda = ScalingFn::affine(1.0, 1.0);
        c.x0 = Vector::Constant(1, 2.0);
        c.N_list = {1, 2, 5, 10, 30};
        c.eta_list = {20.0, 100.0};
        c.K = 60;
        c.oracle.N = 30;
        c.oracle.tail_tol = 1e-12;
        c.constants.references = 20;
        c.constants.states_per_reference = 50;
        c.constants.horizon = 30;
        c.constants.sigma_levels = {0.01, 0.1, 1.0, 10.0};
        return c;
    }
    throw ConfigError("unknown preset '" + name + "'");
}

ExperimentSetup make_setup(const ExperimentConfig& config) {
    config.validate();
    ModelPtr model = make_model(config.model);
    const Reference r_e = make_reference(*model, config.x_e, config.u_e);
    const OffsetCost raw = OffsetCost::weighted(config.offset_weights, r_e);
    Reference r_d = best_reachable_reference(*model, config.spec, raw);
    OffsetCost T = raw.shifted_to_zero_at(r_d);
    return ExperimentSetup{std::move(model), config.spec, StageCost(config.Q, config.R), std::move(T),
                           std::move(r_d)};
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot write '" + path + "'");
    }
    out << std::setprecision(17);
    out << "scheme,N,eta,lambda,J_K_d,sup_r,gamma_fit,bound_rhs,status\n";
    for (const SweepRow& r : rows) {
        out << r.scheme << "," << r.N << "," << r.eta << "," << r.lambda << "," << r.J << "," << r.sup_r << ","
            << r.gamma_fit << "," << r.bound_rhs << "," << sanitize(r.status) << "\n";
    }
}

void write_manifold_csv(const ExperimentSetup& setup, const std::string& path, int points) {
    const auto chart = setup.model->manifold_chart();
    if (!chart) {
        throw Error("write_manifold_csv: model has no manifold chart");
    }
    const ChartInterval interval = admissible_chart_interval(*setup.model, setup.spec);
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot write '" + path + "'");
    }
    const Index n = setup.model->state_dim();
    const Index m = setup.model->input_dim();
    out << std::setprecision(17) << chart->parameter_name;
    for (Index i = 0; i < n; ++i) {
        out << ",xr_" << i + 1;
    }
    for (Index i = 0; i < m; ++i) {
        out << ",ur_" << i + 1;
    }
    out << ",T\n";
    for (int k = 0; k < points; ++k) {
        const double s = interval.lo + (interval.hi - interval.lo) * k / std::max(1, points - 1);
        const Reference r = chart->at(s);
        out << s;
        for (Index i = 0; i < n; ++i) {
            out << "," << r.x[i];
        }
        for (Index i = 0; i < m; ++i) {
            out << "," << r.u[i];
        }
        out << "," << setup.T.value(r) << "\n";
    }
}

void write_oracle_csv(const OracleResult& oracle, const StageCost& cost, const Reference& r_d,
                      const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot write '" + path + "'");
    }
    const Matrix& X = oracle.trajectory.states;
    const Matrix& U = oracle.trajectory.inputs;
    out << std::setprecision(17) << "t";
    for (Index i = 0; i < X.rows(); ++i) {
        out << ",x_" << i + 1;
    }
    for (Index i = 0; i < U.rows(); ++i) {
        out << ",u_" << i + 1;
    }
    out << ",ell\n";
    for (Index k = 0; k < X.cols(); ++k) {
        out << k;
        for (Index i = 0; i < X.rows(); ++i) {
            out << "," << X(i, k);
        }
        if (k < U.cols()) {
            for (Index i = 0; i < U.rows(); ++i) {
                out << "," << U(i, k);
            }
            out << "," << cost.value(X.col(k), U.col(k), r_d);
        } else {
            for (Index i = 0; i <= U.rows(); ++i) {
                out << ",";
            }
        }
        out << "\n";
    }
}

namespace {

/// One closed-loop job of the experiment grid.
struct Cell {
    std::string scheme;
    int N = 0;
    double eta = kNaN;
    ScalingFn lambda;
    std::string file;
    // results
    std::optional<ClosedLoopRun> run;
    std::string status;
};

std::string run_status(const ClosedLoopRun& run) {
    if (run.completed()) {
        return "completed";
    }
    return "recursive_infeasibility_at_" + std::to_string(*run.failed_at);
}

}  // namespace

ExperimentSummary run_experiment(const ExperimentConfig& config, const RunOptions& options) {
    const ExperimentSetup setup = make_setup(config);
    namespace fs = std::filesystem;
    const fs::path outdir(config.output_dir);
    fs::create_directories(outdir);

    ExperimentSummary summary;
    summary.r_d = setup.r_d;

    std::vector<Cell> cells;
    for (double eta : config.eta_list) {
        for (int N : config.N_list) {
            Cell c;
            c.scheme = "tracking";
            c.N = N;
            c.eta = eta;
            c.lambda = config.lambda;
            c.file = "tracking_N" + std::to_string(N) + "_eta" + eta_key(eta) + ".csv";
            cells.push_back(c);
        }
    }
    if (config.standard_runs) {
        for (int N : config.N_list) {
            Cell c;
            c.scheme = "standard";
            c.N = N;
            c.file = "standard_N" + std::to_string(N) + ".csv";
            cells.push_back(c);
        }
    }
    for (const AblationSpec& a : config.ablations) {
        Cell c;
        c.scheme = "ablation:" + a.name;
        c.N = a.N;
        c.eta = a.eta;
        c.lambda = a.lambda;
        c.file = "ablation_" + a.name + ".csv";
        cells.push_back(c);
    }
    const bool any_runs = !cells.empty();

    // The oracle and the constants estimate are independent of the cells, so they join the same pool.
    std::optional<OracleResult> oracle;
    std::string oracle_status = "disabled";
    std::optional<ConstantsEstimate> constants;
    std::string constants_status = "disabled";
    const std::size_t extra = any_runs ? 2 : 0;
    parallel_for(cells.size() + extra, options.jobs, [&](std::size_t i) {
        if (i == cells.size()) {
            if (!config.oracle_enabled) {
                return;
            }
            try {
                oracle = infinite_horizon_oracle(setup.model, setup.spec, setup.cost, setup.r_d, config.x0,
                                                 config.oracle);
                oracle_status = "converged";
            } catch (const Error& e) {
                oracle_status = sanitize(e.what());
            }
            return;
        }
        if (i == cells.size() + 1) {
            if (!config.constants_enabled) {
                return;
            }
            try {
                ConstantsOptions co = config.constants;
                co.seed = config.seed;
                co.jobs = 1;
                constants = estimate_constants(setup.model, setup.spec, setup.cost, setup.T, co);
                constants_status = "estimated";
            } catch (const Error& e) {
                constants_status = sanitize(e.what());
            }
            return;
        }
        Cell& c = cells[i];
        ControllerConfig cc;
        cc.N = c.N;
        cc.warm_start = config.warm_start;
        try {
            ClosedLoopRun run;
            if (c.scheme == "standard") {
                StandardMpc ctrl(setup.model, setup.spec, setup.cost, setup.r_d, cc);
                run = closed_loop(ctrl, config.x0, config.K);
            } else {
                cc.eta = c.eta;
                cc.lambda = c.lambda;
                TrackingMpc ctrl(setup.model, setup.spec, setup.cost, setup.T, cc);
                run = closed_loop(ctrl, config.x0, config.K);
            }
            c.status = run_status(run);
            write_run_csv(run, (outdir / c.file).string());
            c.run = std::move(run);
        } catch (const InfeasibleError& e) {
            c.status = "initial_infeasible";
            c.file.clear();
        } catch (const Error& e) {
            c.status = "error: " + std::string(e.what());
            c.file.clear();
        }
    });
    summary.oracle = oracle;
    summary.oracle_status = oracle_status;
    summary.constants = constants;

    if (!any_runs) {
        std::ofstream out(outdir / "summary.txt");
        out << std::setprecision(17) << "name = " << config.name << "\n"
            << "model = " << config.model << "\n"
            << "r_d.x = " << fmt_vector(setup.r_d.x) << "\n"
            << "r_d.u = " << fmt_vector(setup.r_d.u) << "\n"
            << "cells = 0\n";
        summary.files.push_back((outdir / "summary.txt").string());
        return summary;
    }

    // Decay constants of the standard scheme, taken over the tested horizons.
    double c_s = 0.0;
    double gamma_s = 0.0;
    for (const Cell& c : cells) {
        if (c.scheme == "standard" && c.run && c.run->completed()) {
            try {
                const ExponentialFit fit = exponential_fit(*c.run, setup.r_d.x);
                c_s = std::max(c_s, fit.c);
                gamma_s = std::max(gamma_s, fit.gamma);
            } catch (const Error&) {
            }
        }
    }
    if (gamma_s == 0.0 && oracle) {
        try {
            const ExponentialFit fit = exponential_fit(oracle->trajectory.states, setup.r_d.x);
            c_s = fit.c;
            gamma_s = fit.gamma;
        } catch (const Error&) {
        }
    }
    if (gamma_s == 0.0) {
        c_s = 1.0;
        gamma_s = 0.999;
    }
    gamma_s = std::clamp(gamma_s, 1e-6, 0.999);

    // eta-hat: the largest standard value J^s_N(x0, r_d) over the tested horizons.
    std::vector<double> js(config.N_list.size(), kNaN);
    parallel_for(config.N_list.size(), options.jobs, [&](std::size_t i) {
        const MpcSolution s =
            solve_standard_mpc(setup.model, setup.spec, setup.cost, config.x0, setup.r_d, config.N_list[i]);
        if (s.feasible) {
            js[i] = s.value;
        }
    });
    for (double v : js) {
        if (std::isfinite(v)) {
            summary.eta_hat = std::max(summary.eta_hat, v);
        }
    }

    for (Cell& c : cells) {
        SweepRow row;
        row.scheme = c.scheme;
        row.N = c.N;
        row.eta = c.eta;
        row.lambda = c.scheme == "standard" ? "none" : fmt_scaling(c.lambda);
        row.status = c.status;
        row.run_file = c.file;
        row.J = kNaN;
        row.sup_r = kNaN;
        row.gamma_fit = kNaN;
        row.bound_rhs = kNaN;
        if (c.run) {
            const ClosedLoopRun& run = *c.run;
            row.J = performance_measure(run, setup.cost, setup.r_d, config.K);
            row.sup_r = sup_reference_distance(run, setup.r_d, run.length());
            try {
                row.gamma_fit = exponential_fit(run, setup.r_d.x).gamma;
            } catch (const Error&) {
            }
            if (c.scheme != "standard" && constants && oracle) {
                BoundInputs bi{setup.cost, setup.r_d, c.N, c.eta, config.K, c_s, gamma_s, summary.eta_hat};
                PerformanceReport rep = transient_bound(run, *constants, *oracle, bi);
                row.bound_rhs = rep.bound_rhs;
                summary.reports.push_back(std::move(rep));
            }
        }
        summary.rows.push_back(row);
        if (!c.file.empty()) {
            summary.files.push_back((outdir / c.file).string());
        }
    }

    write_sweep_csv(summary.rows, (outdir / "sweep.csv").string());
    summary.files.push_back((outdir / "sweep.csv").string());
    write_manifold_csv(setup, (outdir / "manifold.csv").string());
    summary.files.push_back((outdir / "manifold.csv").string());
    if (oracle) {
        write_oracle_csv(*oracle, setup.cost, setup.r_d, (outdir / "oracle.csv").string());
        summary.files.push_back((outdir / "oracle.csv").string());
    }
    if (constants) {
        std::ofstream out(outdir / "constants.txt");
        write_report(*constants, out);
        summary.files.push_back((outdir / "constants.txt").string());
    }

    std::ofstream out(outdir / "summary.txt");
    out << std::setprecision(17) << "name = " << config.name << "\n"
        << "model = " << config.model << "\n"
        << "seed = " << config.seed << "\n"
        << "r_d.x = " << fmt_vector(setup.r_d.x) << "\n"
        << "r_d.u = " << fmt_vector(setup.r_d.u) << "\n"
        << "r_d.residual = " << setup.r_d.residual << "\n"
        << "oracle.status = " << oracle_status << "\n";
    if (oracle) {
        out << "oracle.J_inf = " << oracle->J_inf << "\n"
            << "oracle.K_used = " << oracle->K_used << "\n"
            << "oracle.J_K = " << oracle->cost_over(config.K) << "\n";
    }
    out << "constants.status = " << constants_status << "\n"
        << "eta_hat = " << summary.eta_hat << "\n"
        << "c_s = " << c_s << "\n"
        << "gamma_s_prime = " << gamma_s << "\n"
        << "cells = " << cells.size() << "\n";
    for (std::size_t i = 0; i < summary.rows.size(); ++i) {
        const SweepRow& r = summary.rows[i];
        out << "cell[" << i << "] = " << r.scheme << " N=" << r.N << " eta=" << r.eta << " J=" << r.J
            << " status=" << r.status << "\n";
    }
    for (std::size_t i = 0; i < summary.reports.size(); ++i) {
        std::ostringstream block;
        write_report(summary.reports[i], block);
        std::istringstream lines(block.str());
        std::string line;
        while (std::getline(lines, line)) {
            out << "report[" << i << "]." << line << "\n";
        }
    }
    summary.files.push_back((outdir / "summary.txt").string());
    return summary;
}

}  // namespace trackmpc
