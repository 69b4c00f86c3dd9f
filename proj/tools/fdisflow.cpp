#include "fdis/commands.hpp"
#include "fdis/config.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <utility>
#include <vector>

namespace {

// Every config key is reachable as a flag on every verb; precedence is
// defaults, then --config file, then flags.
struct FlagSpec {
    const char* flag;
    const char* key;
    const char* help;
};

const FlagSpec kFlags[] = {
    {"--seed", "seed", "RNG seed for the command"},
    {"--out", "paths.out", "run directory"},
    {"--cache", "paths.cache", "dataset cache path"},
    {"--codec", "paths.codec", "latent codec path"},
    {"--latent-tokens", "data.latent_tokens", "latent tokens M"},
    {"--latent-channels", "data.latent_channels", "channels per latent token d"},
    {"--factor-tokens", "model.factor_tokens", "factor tokens N"},
    {"--factor-dim", "model.factor_dim", "width of each factor token d_s"},
    {"--hidden-dim", "model.hidden_dim", "velocity net hidden width"},
    {"--blocks", "model.blocks", "velocity net block count"},
    {"--key-dim", "model.key_dim", "cross-attention key width"},
    {"--time-dim", "model.time_dim", "sinusoidal time feature width"},
    {"--pos-dim", "model.pos_dim", "token position feature width"},
    {"--enc-hidden", "model.enc_hidden", "factor encoder hidden width"},
    {"--steps", "train.steps", "training steps"},
    {"--batch", "train.batch", "batch size"},
    {"--lr", "train.lr", "Adam learning rate"},
    {"--beta1", "train.beta1", "Adam beta1"},
    {"--beta2", "train.beta2", "Adam beta2"},
    {"--adam-eps", "train.adam_eps", "Adam epsilon"},
    {"--lambda-orth", "train.lambda_orth", "orthogonality penalty weight"},
    {"--orth-eps", "train.orth_eps", "orthogonality norm epsilon"},
    {"--checkpoint-every", "train.checkpoint_every", "checkpoint cadence in steps"},
    {"--solver", "solver.kind", "euler, rk4 or dopri5"},
    {"--solver-steps", "solver.steps", "step count for the fixed-step solvers"},
    {"--rtol", "solver.rtol", "dopri5 relative tolerance"},
    {"--atol", "solver.atol", "dopri5 absolute tolerance"},
    {"--max-steps", "solver.max_steps", "dopri5 attempt budget"},
    {"--initial-step", "solver.initial_step", "dopri5 first step size"},
    {"--votes-train", "metrics.votes_train", "FactorVAE training votes"},
    {"--votes-eval", "metrics.votes_eval", "FactorVAE evaluation votes"},
    {"--vote-batch", "metrics.vote_batch", "rows per FactorVAE vote"},
    {"--prune-std", "metrics.prune_std", "FactorVAE dead-dimension threshold"},
    {"--mig-bins", "metrics.mig_bins", "MIG quantile bins"},
    {"--l1-strength", "metrics.l1_strength", "DCI lasso strength"},
    {"--reduce", "metrics.reduce", "project the representation to N dims (true/false)"},
    {"--ablate-seeds", "ablate.seeds", "paired seeds per ablation arm"},
};

struct Cli {
    std::string config_path;
    std::vector<std::pair<std::string, std::string>> overrides;
};

void add_config_flags(CLI::App* cmd, Cli* cli) {
    cmd->add_option("--config", cli->config_path, "config file");
    for (const FlagSpec& f : kFlags) {
        const std::string key = f.key;
        cmd->add_option_function<std::string>(
            f.flag, [cli, key](const std::string& v) { cli->overrides.emplace_back(key, v); },
            f.help);
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"factor-conditioned flow matching, end to end and deterministic"};
    app.require_subcommand(1);

    Cli cli;
    fdis::SampleArgs sample_args;
    fdis::SwapArgs swap_args;

    CLI::App* gen = app.add_subcommand("generate-data", "render all scenes and fit the codec");
    CLI::App* train = app.add_subcommand("train", "train the velocity model from scratch");
    CLI::App* eval = app.add_subcommand("evaluate", "score a checkpoint (FactorVAE, DCI, MIG)");
    CLI::App* sample = app.add_subcommand("sample", "integrate noise into images");
    CLI::App* swap = app.add_subcommand("swap", "transplant one factor between two scenes");
    CLI::App* ablate = app.add_subcommand("ablate", "paired ablation of the orthogonality penalty");

    add_config_flags(&app, &cli);
    for (CLI::App* c : {gen, train, eval, sample, swap, ablate}) add_config_flags(c, &cli);

    sample->add_option("--count", sample_args.count, "number of images");
    swap->add_option("--source", swap_args.source, "source scene index");
    swap->add_option("--target", swap_args.target, "target scene index");
    swap->add_option("--factor", swap_args.factor, "ground-truth factor index to transplant");
    swap->add_option("--trials", swap_args.trials, "random-pair sweep size (0 = single swap)");

    CLI11_PARSE(app, argc, argv);

    try {
        fdis::RunConfig cfg;
        if (!cli.config_path.empty()) cfg = fdis::load_config(cli.config_path);
        for (const auto& [key, value] : cli.overrides) fdis::apply_override(cfg, key, value);

        if (gen->parsed()) return fdis::cmd_generate_data(cfg, std::cout);
        if (train->parsed()) return fdis::cmd_train(cfg, std::cout);
        if (eval->parsed()) return fdis::cmd_evaluate(cfg, std::cout);
        if (sample->parsed()) return fdis::cmd_sample(cfg, sample_args, std::cout);
        if (swap->parsed()) return fdis::cmd_swap(cfg, swap_args, std::cout);
        if (ablate->parsed()) return fdis::cmd_ablate(cfg, std::cout);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
