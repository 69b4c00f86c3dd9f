#pragma once

#include "fdis/config.hpp"

#include <cstddef>
#include <iosfwd>

namespace fdis {

// One function per CLI verb. Each returns a process exit code: 0 exactly
// when every requested artifact was written. Hard failures (missing inputs,
// bad indices, IO errors) throw; per-item failures inside a sweep are
// reported on `log` and turn the exit code nonzero without aborting the
// sweep. All artifacts land under cfg.out except the dataset cache and
// codec, which live at cfg.cache / cfg.codec.

// Renders the full scene grid into cfg.cache and fits the codec into
// cfg.codec. Re-running with both files present re-derives everything and
// verifies bit-equality instead of rewriting; a mismatch reports the first
// differing byte offset and fails.
int cmd_generate_data(const RunConfig& cfg, std::ostream& log);

// Trains from scratch. Writes config.snapshot, loss.csv and checkpoint.bin
// into cfg.out.
int cmd_train(const RunConfig& cfg, std::ostream& log);

// Loads cfg.out/checkpoint.bin, computes the representation over all scenes
// and writes the three-metric report to cfg.out/metrics.txt.
int cmd_evaluate(const RunConfig& cfg, std::ostream& log);

struct SampleArgs {
    std::size_t count = 4;
};

// Draws `count` scenes, samples the model conditioned on each, and writes
// samples/sample_NNN.ppm plus a tiled samples/grid.ppm (failed cells stay
// black, the run continues).
int cmd_sample(const RunConfig& cfg, const SampleArgs& args, std::ostream& log);

struct SwapArgs {
    std::size_t source = 0;
    std::size_t target = 0;
    std::size_t factor = 0;  // ground-truth factor index to transplant
    std::size_t trials = 0;  // 0: single swap with images; >0: random sweep
};

// Transplants one factor's conditioning token from target to source. The
// token is chosen by mutual-information alignment between factor tokens and
// the requested ground-truth factor. Single mode writes samples/swap.ppm
// (source, target, swapped rows) and swap_report.txt; sweep mode draws
// `trials` random scene pairs and writes the aggregate success rate and
// per-factor leakage table to swap_report.txt.
int cmd_swap(const RunConfig& cfg, const SwapArgs& args, std::ostream& log);

// Trains lambda_orth = 0 and lambda_orth = cfg.lambda_orth arms over
// cfg.ablate_seeds paired seeds (cfg.seed + s), evaluates each, and writes
// per-seed rows plus two "mean +/- std" summary rows to cfg.out/ablation.csv.
// A failed arm is recorded as nan metrics and the sweep continues.
int cmd_ablate(const RunConfig& cfg, std::ostream& log);

}  // namespace fdis
