#pragma once

#include "fdis/tensor.hpp"

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace fdis {

// Factor encoder + factor-conditioned velocity network + routing head.
//
// Latent state is M tokens of d channels. Conditioning is N factor tokens of
// d_s dims produced by the encoder MLP. The velocity net projects each latent
// token (with sinusoidal time and token-position features) to hidden_dim,
// runs `blocks` rounds of {per-token MLP, cross-attention over the factor
// tokens}, both residual, and maps to d channels through a zero-initialized
// output projection. The routing head turns the last hidden state into a
// per-token softmax over the N factors.

struct ModelHyper {
    std::size_t latent_tokens = 16;   // M
    std::size_t latent_channels = 8;  // d
    std::size_t factor_tokens = 10;   // N
    std::size_t factor_dim = 16;      // d_s
    std::size_t hidden_dim = 64;
    std::size_t blocks = 3;
    std::size_t key_dim = 16;
    std::size_t time_dim = 16;
    std::size_t pos_dim = 8;
    std::size_t enc_hidden = 256;
    std::size_t image_dim = 3072;

    std::size_t token_input_dim() const { return latent_channels + time_dim + pos_dim; }
    bool operator==(const ModelHyper&) const = default;
};

// Named parameters in a stable definition order. The order fixes the seeded
// initialization draws, the optimizer sweep, and the checkpoint layout.
class ModelParams {
public:
    explicit ModelParams(const ModelHyper& hyper);
    static ModelParams init(const ModelHyper& hyper, std::uint64_t seed);

    const ModelHyper& hyper() const { return hyper_; }
    std::size_t count() const { return names_.size(); }
    const std::string& name(std::size_t i) const { return names_[i]; }
    const Tensor& value(std::size_t i) const { return values_[i]; }
    const Tensor& at(const std::string& name) const;
    void set(std::size_t i, Tensor v);  // shape must match
    std::size_t scalar_count() const;

private:
    void define(const std::string& name, Shape shape);

    ModelHyper hyper_;
    std::vector<std::string> names_;
    std::vector<Tensor> values_;
    std::unordered_map<std::string, std::size_t> index_;
};

void save_checkpoint(const std::string& path, const ModelParams& params);
ModelParams load_checkpoint(const std::string& path);

// A parameter view for one forward pass. bind_leaves registers every tensor
// as a requires-grad leaf on the tape (training); bind_constants leaves them
// untracked, so the same forward code runs record-free (inference).
struct BoundModel {
    ModelHyper hyper;
    std::unordered_map<std::string, Tensor> tensors;
    const Tensor& at(const std::string& name) const;
};

BoundModel bind_leaves(Tape& tape, const ModelParams& params);
BoundModel bind_constants(const ModelParams& params);

// Sinusoidal features: pairs [sin(2pi f_j t), cos(2pi f_j t)], f_j = 2^j.
std::vector<double> time_embed_values(double t, std::size_t time_dim);
// Same construction over the normalized token position m/M.
std::vector<double> position_embed_values(std::size_t token, std::size_t tokens, std::size_t pos_dim);

// Factor encoder. images is (batch x image_dim); the result is the
// sample-major factor token matrix ((batch*N) x d_s).
Tensor encode_factors(Tape& tape, const BoundModel& m, const Tensor& images);

struct VelocityOut {
    Tensor v_agg;  // (batch*M) x d
    Tensor h;      // (batch*M) x hidden_dim, input to the routing head
};

// Velocity net over a batch. z_t is ((batch*M) x d), factors ((batch*N) x
// d_s), ts one time value per sample.
VelocityOut predict_velocity(Tape& tape, const BoundModel& m, const Tensor& z_t,
                             const Tensor& factors, const std::vector<double>& ts);

// Routing softmax over factors, rows aligned with h ((batch*M) x N).
Tensor route_attention(Tape& tape, const BoundModel& m, const Tensor& h, const Tensor& factors,
                       std::size_t batch);

// Factor-specific velocities for a single sample: v^(i) = attn column i
// broadcast over channels, times v_agg. attn is M x N, v_agg is M x d.
std::vector<Tensor> route_velocity(Tape& tape, const Tensor& attn, const Tensor& v_agg);

// Forward-only single-sample field evaluation for the ODE integrator. Bind
// constants once per integration; every call runs record-free on a scratch
// tape. factors is the N x d_s conditioning; z and the result are flat M*d.
std::vector<double> velocity_field(const BoundModel& m, const std::vector<double>& z,
                                   const std::vector<double>& factors, double t);

// Record-free conditioning for one image: the flat N x d_s factor tokens.
std::vector<double> factor_tokens(const BoundModel& m, const std::vector<double>& image);

}  // namespace fdis
