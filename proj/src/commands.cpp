#include "fdis/commands.hpp"

#include "fdis/codec.hpp"
#include "fdis/dataset.hpp"
#include "fdis/extractor.hpp"
#include "fdis/io.hpp"
#include "fdis/metrics.hpp"
#include "fdis/model.hpp"
#include "fdis/odeint.hpp"
#include "fdis/rng.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fdis {
namespace {

namespace fs = std::filesystem;

const char* const kFactorLabels[kNumFactors] = {"shape", "scale", "x", "y", "hue", "bg"};

void ensure_parent(const std::string& path) {
    const fs::path parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
}

void require_file(const std::string& path, const char* hint) {
    if (!fs::exists(path)) throw std::runtime_error(path + " not found" + hint);
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << text;
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::string fmt(const char* spec, double x) {
    char buf[48];
    std::snprintf(buf, sizeof buf, spec, x);
    return buf;
}

// Codec and model must agree on the latent grid before any pipeline runs.
void check_grid(const LatentCodec& codec, const ModelHyper& hyper) {
    if (codec.tokens != hyper.latent_tokens || codec.channels != hyper.latent_channels) {
        throw std::runtime_error(
            "codec grid " + std::to_string(codec.tokens) + "x" + std::to_string(codec.channels) +
            " does not match model grid " + std::to_string(hyper.latent_tokens) + "x" +
            std::to_string(hyper.latent_channels));
    }
}

struct LoadedModel {
    LatentCodec codec;
    ModelParams params;
    BoundModel bound;
};

LoadedModel load_run_model(const RunConfig& cfg) {
    require_file(cfg.codec, " (run generate-data first)");
    const std::string ckpt = cfg.out + "/checkpoint.bin";
    require_file(ckpt, " (run train first)");
    LatentCodec codec = load_codec(cfg.codec);
    ModelParams params = load_checkpoint(ckpt);
    check_grid(codec, params.hyper());
    BoundModel bound = bind_constants(params);
    return {std::move(codec), std::move(params), std::move(bound)};
}

// MI alignment between the learned factor tokens and one ground-truth
// factor: the swap verbs must know which token to transplant.
std::size_t aligned_token(const BoundModel& m, const RunConfig& cfg, std::size_t factor,
                          std::ostream& log) {
    const RepMatrix rep = compute_representation(m, false);
    const MigResult mi = mig(rep, all_scene_factors(), cfg.mig_bins);
    const std::vector<double> align = token_alignment(mi, m.hyper.factor_dim);
    const std::size_t token = best_token_for_factor(align, m.hyper.factor_tokens, factor);
    log << "factor " << factor << " (" << kFactorLabels[factor] << ") aligns with token " << token
        << "\n";
    return token;
}

MetricsReport run_metrics(const RepMatrix& rep, const std::vector<SceneFactors>& factors,
                          const RunConfig& cfg) {
    Rng rng(cfg.seed);
    MetricsReport report;
    report.factorvae = factorvae_score(rep, factors, rng, cfg.votes_train, cfg.votes_eval,
                                       cfg.vote_batch, cfg.prune_std);
    report.dci = dci_disentanglement(rep, factors, cfg.l1_strength);
    report.mig_result = mig(rep, factors, cfg.mig_bins);
    return report;
}

}  // namespace

int cmd_generate_data(const RunConfig& cfg, std::ostream& log) {
    ensure_parent(cfg.cache);
    ensure_parent(cfg.codec);

    if (fs::exists(cfg.cache)) {
        const VerifyResult r = verify_dataset_cache(cfg.cache);
        if (!r.ok) {
            log << "cache " << cfg.cache << ": verification failure at byte " << r.byte_offset
                << ": " << r.message << "\n";
            return 1;
        }
        log << "cache " << cfg.cache << ": verified identical (" << kSceneCount << " scenes)\n";
    } else {
        write_dataset_cache(cfg.cache);
        log << "cache " << cfg.cache << ": wrote " << kSceneCount << " scenes\n";
    }

    const LatentCodec fresh = fit_codec(cfg.latent_tokens, cfg.latent_channels);
    if (fs::exists(cfg.codec)) {
        const LatentCodec stored = load_codec(cfg.codec);
        const bool same = stored.input_dim == fresh.input_dim && stored.tokens == fresh.tokens &&
                          stored.channels == fresh.channels && stored.mean == fresh.mean &&
                          stored.basis == fresh.basis && stored.scale == fresh.scale;
        if (!same) {
            log << "codec " << cfg.codec << ": verification failure, stored file does not match "
                << "a fresh fit at tokens=" << cfg.latent_tokens
                << " channels=" << cfg.latent_channels << "\n";
            return 1;
        }
        log << "codec " << cfg.codec << ": verified identical (tokens=" << fresh.tokens
            << ", channels=" << fresh.channels << ")\n";
    } else {
        save_codec(cfg.codec, fresh);
        log << "codec " << cfg.codec << ": wrote tokens=" << fresh.tokens
            << " channels=" << fresh.channels << "\n";
    }
    return 0;
}

int cmd_train(const RunConfig& cfg, std::ostream& log) {
    require_file(cfg.cache, " (run generate-data first)");
    require_file(cfg.codec, " (run generate-data first)");
    const LatentCodec codec = load_codec(cfg.codec);
    const ModelHyper hyper = config_hyper(cfg);
    check_grid(codec, hyper);

    fs::create_directories(cfg.out);
    write_text(cfg.out + "/config.snapshot", config_snapshot(cfg));

    const TrainConfig tc = config_train(cfg);
    log << "training " << tc.steps << " steps, batch " << tc.batch << ", lambda_orth "
        << tc.lambda_orth << ", seed " << tc.seed << "\n";
    const std::size_t report_every = tc.checkpoint_every == 0 ? 1000 : tc.checkpoint_every;
    const TrainResult result = train(hyper, codec, tc, [&](const StepStats& s) {
        if ((s.step + 1) % report_every == 0 || s.step + 1 == tc.steps) {
            log << "step " << s.step + 1 << "/" << tc.steps << " fm " << s.fm << " orth " << s.orth
                << " total " << s.total << "\n";
            log.flush();
        }
    });
    if (!result.trace.empty()) {
        const StepStats& last = result.trace.back();
        log << "done: fm " << last.fm << " orth " << last.orth << " total " << last.total << "\n";
    }
    return 0;
}

int cmd_evaluate(const RunConfig& cfg, std::ostream& log) {
    const LoadedModel lm = load_run_model(cfg);
    log << "encoding " << kSceneCount << " scenes (reduce=" << (cfg.reduce ? "true" : "false")
        << ")\n";
    const RepMatrix rep = compute_representation(lm.bound, cfg.reduce);
    const MetricsReport report = run_metrics(rep, all_scene_factors(), cfg);
    write_metrics_report(cfg.out + "/metrics.txt", report);
    log << "factorvae " << report.factorvae.score << ", dci " << report.dci.score << ", mig "
        << report.mig_result.score << "\n";
    log << "wrote " << cfg.out << "/metrics.txt\n";
    return 0;
}

int cmd_sample(const RunConfig& cfg, const SampleArgs& args, std::ostream& log) {
    if (args.count == 0) throw std::invalid_argument("sample: count must be positive");
    const LoadedModel lm = load_run_model(cfg);
    const SolverSpec solver = config_solver(cfg);
    fs::create_directories(cfg.out + "/samples");

    const std::size_t cols = std::min<std::size_t>(args.count, 8);
    const std::size_t rows = (args.count + cols - 1) / cols;
    const std::size_t grid_w = cols * kImageSize;
    const std::size_t grid_h = rows * kImageSize;
    std::vector<double> grid(grid_w * grid_h * 3, 0.0);

    Rng rng(cfg.seed);
    std::size_t failed = 0;
    for (std::size_t i = 0; i < args.count; ++i) {
        const std::size_t scene = rng.next() % kSceneCount;
        const std::vector<double> image = render_scene(scene_factors(scene));
        const std::vector<double> cond = factor_tokens(lm.bound, image);
        std::vector<double> pixels;
        try {
            pixels = sample(lm.bound, lm.codec, cond, solver, rng).image;
        } catch (const std::exception& e) {
            log << "sample " << i << " (scene " << scene << ") failed: " << e.what() << "\n";
            ++failed;
            continue;
        }
        char name[32];
        std::snprintf(name, sizeof name, "sample_%03zu.ppm", i);
        write_ppm(cfg.out + "/samples/" + name, kImageSize, kImageSize, pixels);
        const std::size_t r0 = (i / cols) * kImageSize;
        const std::size_t c0 = (i % cols) * kImageSize;
        for (std::size_t y = 0; y < kImageSize; ++y)
            for (std::size_t x = 0; x < kImageSize; ++x)
                for (std::size_t c = 0; c < 3; ++c)
                    grid[((r0 + y) * grid_w + c0 + x) * 3 + c] = pixels[(y * kImageSize + x) * 3 + c];
    }
    write_ppm(cfg.out + "/samples/grid.ppm", grid_w, grid_h, grid);
    log << "wrote " << args.count - failed << "/" << args.count << " samples to " << cfg.out
        << "/samples\n";
    return failed == 0 ? 0 : 1;
}

int cmd_swap(const RunConfig& cfg, const SwapArgs& args, std::ostream& log) {
    if (args.factor >= kNumFactors) throw std::invalid_argument("swap: factor index out of range");
    if (args.trials == 0 && (args.source >= kSceneCount || args.target >= kSceneCount))
        throw std::invalid_argument("swap: scene index out of range");
    const LoadedModel lm = load_run_model(cfg);
    const SolverSpec solver = config_solver(cfg);
    const std::size_t token = aligned_token(lm.bound, cfg, args.factor, log);
    Rng rng(cfg.seed);

    if (args.trials == 0) {
        const std::vector<double> src = render_scene(scene_factors(args.source));
        const std::vector<double> tgt = render_scene(scene_factors(args.target));
        const SampleResult res = swap_factors(lm.bound, lm.codec, src, tgt, token, solver, rng);
        const SwapReport rep = swap_fidelity(src, tgt, res.image, args.factor);

        fs::create_directories(cfg.out + "/samples");
        std::vector<double> sheet;
        sheet.reserve(3 * kImageDim);
        sheet.insert(sheet.end(), src.begin(), src.end());
        sheet.insert(sheet.end(), tgt.begin(), tgt.end());
        sheet.insert(sheet.end(), res.image.begin(), res.image.end());
        write_ppm(cfg.out + "/samples/swap.ppm", kImageSize, 3 * kImageSize, sheet);

        std::ostringstream txt;
        txt << "source = " << args.source << "\ntarget = " << args.target << "\nfactor = "
            << args.factor << " (" << kFactorLabels[args.factor] << ")\ntoken = " << token << "\n";
        txt << "extraction_ok = " << (rep.extraction_ok ? "true" : "false") << "\n";
        txt << "success = " << (rep.success ? "true" : "false") << "\n";
        for (std::size_t j = 0; j < kNumFactors; ++j)
            txt << kFactorLabels[j] << "_ok = " << (rep.factor_ok[j] ? "true" : "false") << "\n";
        write_text(cfg.out + "/swap_report.txt", txt.str());
        log << "swap " << (rep.success ? "succeeded" : "failed") << ", report at " << cfg.out
            << "/swap_report.txt\n";
        return 0;
    }

    std::size_t successes = 0;
    std::size_t extract_fail = 0;
    std::size_t integrator_fail = 0;
    std::array<std::size_t, kNumFactors> leaked{};
    for (std::size_t t = 0; t < args.trials; ++t) {
        const std::size_t si = rng.next() % kSceneCount;
        const std::size_t ti = rng.next() % kSceneCount;
        const std::vector<double> src = render_scene(scene_factors(si));
        const std::vector<double> tgt = render_scene(scene_factors(ti));
        SampleResult res;
        try {
            res = swap_factors(lm.bound, lm.codec, src, tgt, token, solver, rng);
        } catch (const std::exception& e) {
            log << "trial " << t << " (scenes " << si << " -> " << ti << ") failed: " << e.what()
                << "\n";
            ++integrator_fail;
            continue;
        }
        const SwapReport rep = swap_fidelity(src, tgt, res.image, args.factor);
        if (!rep.extraction_ok) {
            ++extract_fail;
            continue;
        }
        if (rep.success) ++successes;
        for (std::size_t j = 0; j < kNumFactors; ++j)
            if (!rep.factor_ok[j]) ++leaked[j];
    }

    fs::create_directories(cfg.out);
    std::ostringstream txt;
    txt << "trials = " << args.trials << "\n";
    txt << "factor = " << args.factor << " (" << kFactorLabels[args.factor] << ")\n";
    txt << "token = " << token << "\n";
    txt << "integrator_failures = " << integrator_fail << "\n";
    txt << "extraction_failures = " << extract_fail << "\n";
    txt << "successes = " << successes << " / " << args.trials << "\n";
    txt << "success_rate = "
        << fmt("%.17g", static_cast<double>(successes) / static_cast<double>(args.trials)) << "\n";
    txt << "leakage counts over " << args.trials - integrator_fail - extract_fail
        << " scored trials:\n";
    for (std::size_t j = 0; j < kNumFactors; ++j)
        txt << "  " << kFactorLabels[j] << " = " << leaked[j] << "\n";
    write_text(cfg.out + "/swap_report.txt", txt.str());
    log << "success rate "
        << fmt("%.4g", static_cast<double>(successes) / static_cast<double>(args.trials))
        << ", report at " << cfg.out << "/swap_report.txt\n";
    return integrator_fail == 0 ? 0 : 1;
}

int cmd_ablate(const RunConfig& cfg, std::ostream& log) {
    require_file(cfg.cache, " (run generate-data first)");
    require_file(cfg.codec, " (run generate-data first)");
    const LatentCodec codec = load_codec(cfg.codec);
    const ModelHyper hyper = config_hyper(cfg);
    check_grid(codec, hyper);
    if (cfg.ablate_seeds == 0) throw std::invalid_argument("ablate: seeds must be positive");

    const std::vector<SceneFactors> factors = all_scene_factors();
    const double lambdas[2] = {0.0, cfg.lambda_orth};
    const char* const arm_names[2] = {"base", "orth"};
    std::vector<double> arm_scores[2][3];  // [arm][fv, dci, mig]

    std::ostringstream csv;
    csv << "arm,seed,factorvae,dci,mig\n";
    bool any_failed = false;
    for (std::size_t s = 0; s < cfg.ablate_seeds; ++s) {
        const std::uint64_t seed = cfg.seed + s;
        for (int arm = 0; arm < 2; ++arm) {
            TrainConfig tc = config_train(cfg);
            tc.run_dir.clear();
            tc.seed = seed;
            tc.lambda_orth = lambdas[arm];
            try {
                const TrainResult r = train(hyper, codec, tc);
                const BoundModel m = bind_constants(r.params);
                const RepMatrix rep = compute_representation(m, cfg.reduce);
                const MetricsReport mr = run_metrics(rep, factors, cfg);
                csv << arm_names[arm] << "," << seed << "," << fmt("%.17g", mr.factorvae.score)
                    << "," << fmt("%.17g", mr.dci.score) << "," << fmt("%.17g", mr.mig_result.score)
                    << "\n";
                arm_scores[arm][0].push_back(mr.factorvae.score);
                arm_scores[arm][1].push_back(mr.dci.score);
                arm_scores[arm][2].push_back(mr.mig_result.score);
                log << arm_names[arm] << " seed " << seed << ": factorvae " << mr.factorvae.score
                    << ", dci " << mr.dci.score << ", mig " << mr.mig_result.score << "\n";
                log.flush();
            } catch (const std::exception& e) {
                csv << arm_names[arm] << "," << seed << ",nan,nan,nan\n";
                log << arm_names[arm] << " seed " << seed << " failed: " << e.what() << "\n";
                any_failed = true;
            }
        }
    }

    for (int arm = 0; arm < 2; ++arm) {
        csv << arm_names[arm] << ",summary";
        for (int k = 0; k < 3; ++k) {
            const std::vector<double>& xs = arm_scores[arm][k];
            if (xs.empty()) {
                csv << ",nan";
                continue;
            }
            double mean = 0.0;
            for (double x : xs) mean += x;
            mean /= static_cast<double>(xs.size());
            double var = 0.0;
            for (double x : xs) var += (x - mean) * (x - mean);
            const double sd = xs.size() > 1 ? std::sqrt(var / static_cast<double>(xs.size() - 1)) : 0.0;
            csv << "," << fmt("%.6g", mean) << " ± " << fmt("%.6g", sd);
        }
        csv << "\n";
    }

    fs::create_directories(cfg.out);
    write_text(cfg.out + "/ablation.csv", csv.str());
    log << "wrote " << cfg.out << "/ablation.csv\n";
    return any_failed ? 1 : 0;
}

}  // namespace fdis
