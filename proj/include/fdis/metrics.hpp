#pragma once

#include "fdis/dataset.hpp"
#include "fdis/model.hpp"
#include "fdis/rng.hpp"

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace fdis {

// Disentanglement metrics over the learned representation against the
// ground-truth scene factors.

// Row r is the representation of scene r (or of sample r for synthetic
// inputs), row-major.
struct RepMatrix {
    std::size_t rows = 0;
    std::size_t dim = 0;
    std::vector<double> data;

    double at(std::size_t r, std::size_t c) const { return data[r * dim + c]; }
    double& at(std::size_t r, std::size_t c) { return data[r * dim + c]; }
};

std::vector<SceneFactors> all_scene_factors();

// Every scene pushed through the factor encoder; row = concatenated factor
// tokens (N*d_s). With reduce set, rows are centered and projected onto the
// top-N principal directions (component signs follow the codec's rule:
// largest-magnitude coordinate positive, first occurrence wins ties).
RepMatrix compute_representation(const BoundModel& m, bool reduce);

// FactorVAE score. Per vote: fix a uniformly drawn factor and value, draw
// vote_batch rows agreeing on it, and vote for the dimension with the
// smallest variance after dividing by the full-matrix per-dim std. Dims with
// std below prune_std are excluded (all pruned -> error). A majority
// classifier fit on the training votes is scored on the eval votes. Draw
// order per vote: factor, value, then the batch rows.
struct FactorVaeResult {
    double score = 0.0;
    std::vector<std::size_t> votes;  // dim x kNumFactors training-vote counts
    std::size_t dim = 0;
};

FactorVaeResult factorvae_score(const RepMatrix& rep, const std::vector<SceneFactors>& factors,
                                Rng& rng, std::size_t votes_train = 800,
                                std::size_t votes_eval = 200, std::size_t vote_batch = 64,
                                double prune_std = 0.05);

// DCI disentanglement from an explicit importance matrix R (dim x n_factors):
// row weights rho_d proportional to row sums, per-dim score 1 - H(row)/log
// n_factors, rows of zero importance skipped. All-zero R -> error.
double dci_from_importance(const std::vector<double>& importance, std::size_t dim,
                           std::size_t n_factors);

// Importance fitted with an L1-regularized linear regression (coordinate
// descent) from standardized representations to each factor index treated as
// numeric; the unordered shape factor instead gets three one-hot regressions
// with importances summed.
struct DciResult {
    double score = 0.0;
    std::vector<double> importance;  // dim x kNumFactors
    std::size_t dim = 0;
};

DciResult dci_disentanglement(const RepMatrix& rep, const std::vector<SceneFactors>& factors,
                              double l1_strength = 0.01);

// Mutual information gap. Each dim is discretized into equal-frequency bins;
// MIG = mean over factors of (top1 MI - top2 MI) / log(cardinality).
struct MigResult {
    double score = 0.0;
    std::vector<double> mi;  // dim x kNumFactors, nats
    std::size_t dim = 0;
};

MigResult mig(const RepMatrix& rep, const std::vector<SceneFactors>& factors,
              std::size_t bins = 20);

// Per-token MI mass: sums mi over each token's factor_dim consecutive dims.
// Result is tokens x kNumFactors; used to pick which token to swap for a
// given ground-truth factor.
std::vector<double> token_alignment(const MigResult& m, std::size_t factor_dim);
std::size_t best_token_for_factor(const std::vector<double>& alignment, std::size_t tokens,
                                  std::size_t factor);

struct MetricsReport {
    FactorVaeResult factorvae;
    DciResult dci;
    MigResult mig_result;
};

// Full evaluation loop: representation, then all three metrics.
MetricsReport evaluate_model(const BoundModel& m, bool reduce, std::uint64_t seed);

// key: value lines plus CSV blocks for the vote, importance, and MI matrices.
void write_metrics_report(const std::string& path, const MetricsReport& report);

}  // namespace fdis
