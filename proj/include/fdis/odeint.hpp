#pragma once

#include "fdis/codec.hpp"
#include "fdis/model.hpp"
#include "fdis/rng.hpp"

#include <cstddef>
#include <functional>
#include <vector>

namespace fdis {

// ODE integration of the learned velocity field over t in [0, 1], plus the
// sampling and factor-swapping pipelines built on it.

using Field = std::function<std::vector<double>(const std::vector<double>&, double)>;

enum class SolverKind : int { kEuler = 0, kRk4 = 1, kDopri5 = 2 };

struct SolverSpec {
    SolverKind kind = SolverKind::kDopri5;
    std::size_t steps = 50;  // fixed-step kinds only
    double rtol = 1e-5;
    double atol = 1e-5;
    std::size_t max_steps = 10000;
    double safety = 0.9;
    double shrink_limit = 0.2;  // clamp on the per-step size update factor
    double grow_limit = 5.0;
    double initial_step = 0.05;
};

struct Trajectory {
    std::vector<double> ts;  // strictly increasing, first 0, last 1
    std::vector<std::vector<double>> states;
    std::size_t field_evals = 0;
    std::size_t accepted = 0;  // steps taken; dopri5 also counts rejections
    std::size_t rejected = 0;

    const std::vector<double>& final_state() const { return states.back(); }
};

// One explicit step. h = 0 returns z unchanged; non-finite field output
// throws (fixed-step integration has no rejection path to fall back on).
std::vector<double> step_fixed(const Field& field, const std::vector<double>& z, double t,
                               double h, SolverKind kind);

struct Dopri5Step {
    std::vector<double> z5;      // 5th-order solution
    std::vector<double> z4;      // embedded 4th-order solution
    double error = 0.0;          // RMS of |z5-z4| / (atol + rtol*max(|z|,|z5|))
    std::vector<double> k_last;  // last stage slope; equals f(t+h, z5), the
                                 // next step's first stage (FSAL)
};

// Dormand-Prince 5(4) step. k1, when given, must equal field(z, t); the
// integrator passes the previous step's k_last here so each attempt costs six
// field evaluations. A non-finite stage comes back as error = infinity, which
// the caller treats as a rejection.
Dopri5Step step_dopri5(const Field& field, const std::vector<double>& z, double t, double h,
                       double rtol, double atol, const std::vector<double>* k1 = nullptr);

// Fixed kinds take `steps` uniform steps; dopri5 starts at initial_step,
// accepts when the RMS error estimate is <= 1, rescales h by
// clamp(safety * error^(-1/5)), and clips the last step to land exactly on
// t = 1. Exceeding max_steps attempts throws with the last accepted t.
Trajectory integrate(const Field& field, const std::vector<double>& z0, const SolverSpec& solver);

struct SampleResult {
    std::vector<double> z1;     // flat M*d latent at t = 1
    std::vector<double> image;  // decoded pixels, [0, 1]
    Trajectory trajectory;
};

// Draws z0 ~ N(0, I) over the flat M*d latent (row-major token order),
// integrates the conditioned velocity field, and decodes the endpoint.
// factors is the flat N x d_s conditioning.
SampleResult sample(const BoundModel& m, const LatentCodec& codec,
                    const std::vector<double>& factors, const SolverSpec& solver, Rng& rng);

// Conditioning intervention: encode both images, replace factor token `token`
// of the source's conditioning with the target's, sample from the result.
SampleResult swap_factors(const BoundModel& m, const LatentCodec& codec,
                          const std::vector<double>& source_image,
                          const std::vector<double>& target_image, std::size_t token,
                          const SolverSpec& solver, Rng& rng);

}  // namespace fdis
