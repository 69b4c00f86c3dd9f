#pragma once

#include "fdis/codec.hpp"
#include "fdis/model.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

namespace fdis {

// Conditional flow matching on the PCA latents. Each step draws a batch of
// scenes, interpolates z_t between a standard normal draw and the scene
// latent, and regresses the velocity net onto u = z1 - z0, plus an
// orthogonality penalty on the factor-routed velocities. Everything is
// deterministic in the seed: the per-sample RNG stream for sample g is
// seeded with seed ^ g, so batch assembly never depends on step order.

struct TrainConfig {
    std::size_t steps = 20000;
    std::size_t batch = 128;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double lambda_orth = 1e-2;
    double orth_eps = 1e-8;
    std::uint64_t seed = 0;
    std::size_t checkpoint_every = 1000;
    std::string run_dir;  // when set: checkpoint.bin + loss.csv land here
};

struct Bridge {
    std::vector<double> z_t;
    std::vector<double> u;
};

// z_t = (1 - t) z0 + t z1 and u = z1 - z0. t must lie in [0, 1].
Bridge make_bridge(const std::vector<double>& z0, const std::vector<double>& z1, double t);

// Batch mean over samples of the squared error summed across each sample's
// latent coordinates. v and u are (batch*M) x d.
Tensor fm_loss(Tape& tape, const Tensor& v, const Tensor& u, std::size_t batch);

// Mean squared cosine similarity over ordered factor pairs i != j, with eps
// added to each norm product before dividing.
Tensor orth_loss(Tape& tape, const std::vector<Tensor>& factor_velocities, double eps);

// Same scalar for one sample, computed from the routing attention (M x N)
// and aggregate velocity (M x d) without materializing the N factor
// velocities: G = Attn^T diag(rowsum(v_agg^2)) Attn holds every pairwise
// dot(v_i, v_j), so the whole penalty is 19 tape ops.
Tensor orth_loss_routed(Tape& tape, const Tensor& attn, const Tensor& v_agg, double eps);

struct AdamState {
    explicit AdamState(const ModelParams& params);
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::size_t t = 0;
};

// One bias-corrected Adam update over every parameter. grads is the map
// returned by Tape::backward for a model bound with bind_leaves. Throws on a
// non-finite gradient, naming the parameter.
void adam_step(ModelParams& params, AdamState& state, const TrainConfig& cfg,
               const BoundModel& bound, const std::unordered_map<std::int32_t, Tensor>& grads);

struct StepStats {
    std::size_t step = 0;  // 0-based
    double fm = 0.0;
    double orth = 0.0;
    double total = 0.0;
};

struct TrainResult {
    ModelParams params;
    std::vector<StepStats> trace;
};

// Full training loop. hyper must agree with the codec's token grid. When
// cfg.run_dir is set, loss.csv streams one row per step and checkpoint.bin
// is rewritten every checkpoint_every steps and at the end.
TrainResult train(const ModelHyper& hyper, const LatentCodec& codec, const TrainConfig& cfg,
                  const std::function<void(const StepStats&)>& on_step = nullptr);

}  // namespace fdis
