#pragma once

#include "fdis/model.hpp"
#include "fdis/odeint.hpp"
#include "fdis/training.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace fdis {

// One flat config for every command. The file format is INI-style: `key =
// value` lines grouped under `[section]` headers, `#` or `;` comment lines,
// blank lines ignored. Values are taken verbatim after trimming, so paths
// may contain spaces but not leading/trailing ones. Unknown sections or keys
// are errors, not warnings: a typo must never silently fall back to a
// default.

struct RunConfig {
    std::uint64_t seed = 0;

    // [paths]
    std::string out = "runs/run";
    std::string cache = "data/scenes.bin";
    std::string codec = "data/codec.bin";

    // [data] codec grid
    std::size_t latent_tokens = 16;
    std::size_t latent_channels = 8;

    // [model]
    std::size_t factor_tokens = 10;
    std::size_t factor_dim = 16;
    std::size_t hidden_dim = 64;
    std::size_t blocks = 3;
    std::size_t key_dim = 16;
    std::size_t time_dim = 16;
    std::size_t pos_dim = 8;
    std::size_t enc_hidden = 256;

    // [train]
    std::size_t steps = 20000;
    std::size_t batch = 128;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double lambda_orth = 1e-2;
    double orth_eps = 1e-8;
    std::size_t checkpoint_every = 1000;

    // [solver]
    std::string solver = "dopri5";  // euler | rk4 | dopri5
    std::size_t solver_steps = 50;
    double rtol = 1e-5;
    double atol = 1e-5;
    std::size_t max_steps = 10000;
    double initial_step = 0.05;

    // [metrics]
    std::size_t votes_train = 800;
    std::size_t votes_eval = 200;
    std::size_t vote_batch = 64;
    double prune_std = 0.05;
    std::size_t mig_bins = 20;
    double l1_strength = 0.01;
    bool reduce = true;

    // [ablate]
    std::size_t ablate_seeds = 5;

    bool operator==(const RunConfig&) const = default;
};

// Dotted key names ("train.lr", "paths.out", bare "seed") in canonical
// order. CLI flags and overrides address fields through these.
const std::vector<std::string>& config_keys();

// origin is used in error messages ("cfg.ini:7: unknown key ...").
RunConfig parse_config(const std::string& text, const std::string& origin = "config");
RunConfig load_config(const std::string& path);

// Sets one field from its text form. Throws on an unknown key or a value
// that does not parse cleanly as the field's type.
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);

// Canonical text form: every key in config_keys() order, doubles rendered
// round-trip exact. parse_config(config_snapshot(c)) == c.
std::string config_snapshot(const RunConfig& cfg);

// Views into the module-level configs. config_solver throws on an unknown
// solver name.
ModelHyper config_hyper(const RunConfig& cfg);
TrainConfig config_train(const RunConfig& cfg);
SolverSpec config_solver(const RunConfig& cfg);

}  // namespace fdis
