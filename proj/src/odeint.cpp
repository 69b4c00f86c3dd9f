#include "fdis/odeint.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>

namespace fdis {

namespace {

// Dormand-Prince 5(4) tableau. b5 is the stage-7 row of a (FSAL), b4 the
// embedded 4th-order weights.
constexpr double kC[7] = {0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
constexpr double kA[7][6] = {
    {},
    {1.0 / 5},
    {3.0 / 40, 9.0 / 40},
    {44.0 / 45, -56.0 / 15, 32.0 / 9},
    {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
    {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
    {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84},
};
constexpr double kB4[7] = {5179.0 / 57600, 0.0,           7571.0 / 16695, 393.0 / 640,
                           -92097.0 / 339200, 187.0 / 2100, 1.0 / 40};

bool all_finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

std::vector<double> eval_field(const Field& field, const std::vector<double>& z, double t,
                               std::size_t dim) {
    std::vector<double> k = field(z, t);
    if (k.size() != dim) throw std::invalid_argument("odeint: field output size mismatch");
    return k;
}

}  // namespace

std::vector<double> step_fixed(const Field& field, const std::vector<double>& z, double t,
                               double h, SolverKind kind) {
    if (h < 0.0) throw std::invalid_argument("step_fixed: negative step");
    if (h == 0.0) return z;
    const std::size_t n = z.size();
    std::vector<double> out(n);
    if (kind == SolverKind::kEuler) {
        const std::vector<double> k = eval_field(field, z, t, n);
        if (!all_finite(k)) throw std::runtime_error("step_fixed: non-finite field output");
        for (std::size_t i = 0; i < n; ++i) out[i] = z[i] + h * k[i];
        return out;
    }
    if (kind != SolverKind::kRk4) throw std::invalid_argument("step_fixed: kind must be euler or rk4");
    std::vector<double> tmp(n);
    const std::vector<double> k1 = eval_field(field, z, t, n);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = z[i] + 0.5 * h * k1[i];
    const std::vector<double> k2 = eval_field(field, tmp, t + 0.5 * h, n);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = z[i] + 0.5 * h * k2[i];
    const std::vector<double> k3 = eval_field(field, tmp, t + 0.5 * h, n);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = z[i] + h * k3[i];
    const std::vector<double> k4 = eval_field(field, tmp, t + h, n);
    for (std::size_t i = 0; i < n; ++i)
        out[i] = z[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    if (!all_finite(k1) || !all_finite(k2) || !all_finite(k3) || !all_finite(k4))
        throw std::runtime_error("step_fixed: non-finite field output");
    return out;
}

Dopri5Step step_dopri5(const Field& field, const std::vector<double>& z, double t, double h,
                       double rtol, double atol, const std::vector<double>* k1) {
    if (h <= 0.0) throw std::invalid_argument("step_dopri5: step must be positive");
    const std::size_t n = z.size();
    std::vector<std::vector<double>> k(7);
    k[0] = k1 != nullptr ? *k1 : eval_field(field, z, t, n);
    std::vector<double> stage(n);
    for (int s = 1; s < 7; ++s) {
        for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (int j = 0; j < s; ++j) acc += kA[s][j] * k[j][i];
            stage[i] = z[i] + h * acc;
        }
        // stage 7 sits at t + h; round-off must not push the field past 1
        // when the caller clipped h to land there.
        k[s] = eval_field(field, stage, t + kC[s] * h, n);
    }
    Dopri5Step out;
    out.z5 = stage;  // stage 7 state is the 5th-order solution (a7 = b5)
    out.z4.resize(n);
    double sq_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int j = 0; j < 7; ++j) acc += kB4[j] * k[j][i];
        out.z4[i] = z[i] + h * acc;
        const double tol = atol + rtol * std::max(std::abs(z[i]), std::abs(out.z5[i]));
        const double e = (out.z5[i] - out.z4[i]) / tol;
        sq_sum += e * e;
    }
    out.error = std::sqrt(sq_sum / static_cast<double>(n));
    out.k_last = std::move(k[6]);
    if (!all_finite(out.z5) || !all_finite(out.z4) || !std::isfinite(out.error))
        out.error = std::numeric_limits<double>::infinity();
    return out;
}

Trajectory integrate(const Field& field, const std::vector<double>& z0, const SolverSpec& solver) {
    if (z0.empty()) throw std::invalid_argument("integrate: empty state");
    Trajectory traj;
    traj.ts.push_back(0.0);
    traj.states.push_back(z0);

    if (solver.kind != SolverKind::kDopri5) {
        if (solver.steps == 0) throw std::invalid_argument("integrate: steps must be positive");
        const std::size_t per = solver.kind == SolverKind::kEuler ? 1 : 4;
        std::vector<double> z = z0;
        for (std::size_t s = 0; s < solver.steps; ++s) {
            const double t = static_cast<double>(s) / static_cast<double>(solver.steps);
            const double t_next =
                s + 1 == solver.steps ? 1.0 : static_cast<double>(s + 1) / static_cast<double>(solver.steps);
            z = step_fixed(field, z, t, t_next - t, solver.kind);
            traj.ts.push_back(t_next);
            traj.states.push_back(z);
            traj.field_evals += per;
            ++traj.accepted;
        }
        return traj;
    }

    if (!(solver.rtol > 0.0) || !(solver.atol > 0.0))
        throw std::invalid_argument("integrate: tolerances must be positive");
    if (!(solver.initial_step > 0.0)) throw std::invalid_argument("integrate: initial_step must be positive");

    double t = 0.0;
    std::vector<double> z = z0;
    double h = std::min(solver.initial_step, 1.0);
    std::vector<double> k1 = eval_field(field, z, t, z.size());
    traj.field_evals = 1;
    while (t < 1.0) {
        if (traj.accepted + traj.rejected >= solver.max_steps)
            throw std::runtime_error("integrate: max_steps exceeded, last accepted t = " +
                                     std::to_string(t));
        const bool last = h >= 1.0 - t;
        if (last) h = 1.0 - t;
        const Dopri5Step step = step_dopri5(field, z, t, h, solver.rtol, solver.atol, &k1);
        traj.field_evals += 6;
        if (step.error <= 1.0) {
            ++traj.accepted;
            t = last ? 1.0 : t + h;
            z = step.z5;
            k1 = step.k_last;
            traj.ts.push_back(t);
            traj.states.push_back(z);
        } else {
            ++traj.rejected;
        }
        const double factor =
            step.error == 0.0 ? solver.grow_limit
                              : std::clamp(solver.safety * std::pow(step.error, -0.2),
                                           solver.shrink_limit, solver.grow_limit);
        h *= factor;
    }
    return traj;
}

SampleResult sample(const BoundModel& m, const LatentCodec& codec,
                    const std::vector<double>& factors, const SolverSpec& solver, Rng& rng) {
    const ModelHyper& hy = m.hyper;
    if (factors.size() != hy.factor_tokens * hy.factor_dim)
        throw std::invalid_argument("sample: conditioning size mismatch");
    if (codec.tokens != hy.latent_tokens || codec.channels != hy.latent_channels)
        throw std::invalid_argument("sample: codec grid does not match the model");
    std::vector<double> z0(hy.latent_tokens * hy.latent_channels);
    for (double& v : z0) v = rng.gaussian();
    const Field field = [&](const std::vector<double>& z, double t) {
        return velocity_field(m, z, factors, t);
    };
    SampleResult out;
    out.trajectory = integrate(field, z0, solver);
    out.z1 = out.trajectory.final_state();
    out.image = decode_latent(codec, out.z1);
    return out;
}

SampleResult swap_factors(const BoundModel& m, const LatentCodec& codec,
                          const std::vector<double>& source_image,
                          const std::vector<double>& target_image, std::size_t token,
                          const SolverSpec& solver, Rng& rng) {
    const ModelHyper& hy = m.hyper;
    if (token >= hy.factor_tokens) throw std::out_of_range("swap_factors: token index out of range");
    std::vector<double> cond = factor_tokens(m, source_image);
    const std::vector<double> donor = factor_tokens(m, target_image);
    std::copy(donor.begin() + static_cast<std::ptrdiff_t>(token * hy.factor_dim),
              donor.begin() + static_cast<std::ptrdiff_t>((token + 1) * hy.factor_dim),
              cond.begin() + static_cast<std::ptrdiff_t>(token * hy.factor_dim));
    return sample(m, codec, cond, solver, rng);
}

}  // namespace fdis
