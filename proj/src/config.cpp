#include "fdis/config.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <type_traits>

namespace fdis {
namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

[[noreturn]] void fail(const std::string& where, const std::string& what) {
    throw std::runtime_error(where + ": " + what);
}

std::uint64_t parse_u64(const std::string& v, const std::string& where) {
    if (v.empty() || !std::isdigit(static_cast<unsigned char>(v[0])))
        fail(where, "expected unsigned integer, got '" + v + "'");
    errno = 0;
    char* end = nullptr;
    const std::uint64_t n = std::strtoull(v.c_str(), &end, 10);
    if (errno != 0 || end != v.c_str() + v.size())
        fail(where, "expected unsigned integer, got '" + v + "'");
    return n;
}

double parse_double(const std::string& v, const std::string& where) {
    errno = 0;
    char* end = nullptr;
    const double x = v.empty() ? 0.0 : std::strtod(v.c_str(), &end);
    if (v.empty() || errno != 0 || end != v.c_str() + v.size() || !std::isfinite(x))
        fail(where, "expected finite number, got '" + v + "'");
    return x;
}

bool parse_bool(const std::string& v, const std::string& where) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    fail(where, "expected true/false, got '" + v + "'");
}

std::string render_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

template <auto Member>
void set_field(RunConfig& cfg, const std::string& v, const std::string& where) {
    using T = std::remove_cvref_t<decltype(cfg.*Member)>;
    if constexpr (std::is_same_v<T, double>) {
        cfg.*Member = parse_double(v, where);
    } else if constexpr (std::is_same_v<T, bool>) {
        cfg.*Member = parse_bool(v, where);
    } else if constexpr (std::is_same_v<T, std::string>) {
        cfg.*Member = v;
    } else {
        cfg.*Member = static_cast<T>(parse_u64(v, where));
    }
}

template <auto Member>
std::string get_field(const RunConfig& cfg) {
    using T = std::remove_cvref_t<decltype(cfg.*Member)>;
    if constexpr (std::is_same_v<T, double>) {
        return render_double(cfg.*Member);
    } else if constexpr (std::is_same_v<T, bool>) {
        return cfg.*Member ? "true" : "false";
    } else if constexpr (std::is_same_v<T, std::string>) {
        return cfg.*Member;
    } else {
        return std::to_string(cfg.*Member);
    }
}

struct Entry {
    const char* key;  // dotted
    void (*set)(RunConfig&, const std::string&, const std::string&);
    std::string (*get)(const RunConfig&);
};

// Single source of truth for the key space. Order here is the snapshot
// order; section grouping falls out of the dotted prefixes.
#define FDIS_FIELD(key, member) \
    { key, set_field<&RunConfig::member>, get_field<&RunConfig::member> }
const Entry kEntries[] = {
    FDIS_FIELD("seed", seed),
    FDIS_FIELD("paths.out", out),
    FDIS_FIELD("paths.cache", cache),
    FDIS_FIELD("paths.codec", codec),
    FDIS_FIELD("data.latent_tokens", latent_tokens),
    FDIS_FIELD("data.latent_channels", latent_channels),
    FDIS_FIELD("model.factor_tokens", factor_tokens),
    FDIS_FIELD("model.factor_dim", factor_dim),
    FDIS_FIELD("model.hidden_dim", hidden_dim),
    FDIS_FIELD("model.blocks", blocks),
    FDIS_FIELD("model.key_dim", key_dim),
    FDIS_FIELD("model.time_dim", time_dim),
    FDIS_FIELD("model.pos_dim", pos_dim),
    FDIS_FIELD("model.enc_hidden", enc_hidden),
    FDIS_FIELD("train.steps", steps),
    FDIS_FIELD("train.batch", batch),
    FDIS_FIELD("train.lr", lr),
    FDIS_FIELD("train.beta1", beta1),
    FDIS_FIELD("train.beta2", beta2),
    FDIS_FIELD("train.adam_eps", adam_eps),
    FDIS_FIELD("train.lambda_orth", lambda_orth),
    FDIS_FIELD("train.orth_eps", orth_eps),
    FDIS_FIELD("train.checkpoint_every", checkpoint_every),
    FDIS_FIELD("solver.kind", solver),
    FDIS_FIELD("solver.steps", solver_steps),
    FDIS_FIELD("solver.rtol", rtol),
    FDIS_FIELD("solver.atol", atol),
    FDIS_FIELD("solver.max_steps", max_steps),
    FDIS_FIELD("solver.initial_step", initial_step),
    FDIS_FIELD("metrics.votes_train", votes_train),
    FDIS_FIELD("metrics.votes_eval", votes_eval),
    FDIS_FIELD("metrics.vote_batch", vote_batch),
    FDIS_FIELD("metrics.prune_std", prune_std),
    FDIS_FIELD("metrics.mig_bins", mig_bins),
    FDIS_FIELD("metrics.l1_strength", l1_strength),
    FDIS_FIELD("metrics.reduce", reduce),
    FDIS_FIELD("ablate.seeds", ablate_seeds),
};
#undef FDIS_FIELD

const Entry* find_entry(const std::string& key) {
    for (const Entry& e : kEntries) {
        if (key == e.key) return &e;
    }
    return nullptr;
}

}  // namespace

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const Entry& e : kEntries) k.emplace_back(e.key);
        return k;
    }();
    return keys;
}

RunConfig parse_config(const std::string& text, const std::string& origin) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::string section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string where = origin + ":" + std::to_string(line_no);
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']') fail(where, "unterminated section header '" + t + "'");
            section = trim(t.substr(1, t.size() - 2));
            if (section.empty()) fail(where, "empty section name");
            continue;
        }
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos) fail(where, "expected 'key = value', got '" + t + "'");
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (key.empty()) fail(where, "empty key");
        const std::string dotted = section.empty() ? key : section + "." + key;
        const Entry* e = find_entry(dotted);
        if (e == nullptr) fail(where, "unknown key '" + dotted + "'");
        e->set(cfg, value, where + " (" + dotted + ")");
    }
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str(), path);
}

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
    const Entry* e = find_entry(key);
    if (e == nullptr) throw std::runtime_error("unknown config key '" + key + "'");
    e->set(cfg, value, "override (" + key + ")");
}

std::string config_snapshot(const RunConfig& cfg) {
    std::string out;
    std::string section;
    for (const Entry& e : kEntries) {
        const std::string key = e.key;
        const std::size_t dot = key.find('.');
        const std::string sec = dot == std::string::npos ? "" : key.substr(0, dot);
        const std::string name = dot == std::string::npos ? key : key.substr(dot + 1);
        if (sec != section) {
            section = sec;
            if (!out.empty()) out += "\n";
            out += "[" + section + "]\n";
        }
        out += name + " = " + e.get(cfg) + "\n";
    }
    return out;
}

ModelHyper config_hyper(const RunConfig& cfg) {
    ModelHyper h;
    h.latent_tokens = cfg.latent_tokens;
    h.latent_channels = cfg.latent_channels;
    h.factor_tokens = cfg.factor_tokens;
    h.factor_dim = cfg.factor_dim;
    h.hidden_dim = cfg.hidden_dim;
    h.blocks = cfg.blocks;
    h.key_dim = cfg.key_dim;
    h.time_dim = cfg.time_dim;
    h.pos_dim = cfg.pos_dim;
    h.enc_hidden = cfg.enc_hidden;
    return h;
}

TrainConfig config_train(const RunConfig& cfg) {
    TrainConfig t;
    t.steps = cfg.steps;
    t.batch = cfg.batch;
    t.lr = cfg.lr;
    t.beta1 = cfg.beta1;
    t.beta2 = cfg.beta2;
    t.adam_eps = cfg.adam_eps;
    t.lambda_orth = cfg.lambda_orth;
    t.orth_eps = cfg.orth_eps;
    t.seed = cfg.seed;
    t.checkpoint_every = cfg.checkpoint_every;
    t.run_dir = cfg.out;
    return t;
}

SolverSpec config_solver(const RunConfig& cfg) {
    SolverSpec s;
    if (cfg.solver == "euler") {
        s.kind = SolverKind::kEuler;
    } else if (cfg.solver == "rk4") {
        s.kind = SolverKind::kRk4;
    } else if (cfg.solver == "dopri5") {
        s.kind = SolverKind::kDopri5;
    } else {
        throw std::runtime_error("unknown solver '" + cfg.solver + "' (euler, rk4, dopri5)");
    }
    s.steps = cfg.solver_steps;
    s.rtol = cfg.rtol;
    s.atol = cfg.atol;
    s.max_steps = cfg.max_steps;
    s.initial_step = cfg.initial_step;
    return s;
}

}  // namespace fdis
