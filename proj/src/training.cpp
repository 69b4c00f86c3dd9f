#include "fdis/training.hpp"

#include "fdis/dataset.hpp"
#include "fdis/rng.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

namespace fdis {

namespace {

[[noreturn]] void fail(const std::string& what) { throw std::invalid_argument(what); }

}  // namespace

Bridge make_bridge(const std::vector<double>& z0, const std::vector<double>& z1, double t) {
    if (z0.size() != z1.size()) fail("make_bridge: endpoint sizes differ");
    if (!(t >= 0.0 && t <= 1.0)) fail("make_bridge: t must lie in [0, 1]");
    Bridge b;
    b.z_t.resize(z0.size());
    b.u.resize(z0.size());
    for (std::size_t i = 0; i < z0.size(); ++i) {
        b.z_t[i] = (1.0 - t) * z0[i] + t * z1[i];
        b.u[i] = z1[i] - z0[i];
    }
    return b;
}

Tensor fm_loss(Tape& tape, const Tensor& v, const Tensor& u, std::size_t batch) {
    if (v.shape() != u.shape()) fail("fm_loss: prediction and target shapes differ");
    if (batch == 0) fail("fm_loss: batch must be positive");
    if (v.rank() != 2 || v.shape()[0] % batch != 0) fail("fm_loss: rows are not batch-divisible");
    return scale(tape, sum(tape, square(tape, sub(tape, v, u))), 1.0 / static_cast<double>(batch));
}

Tensor orth_loss(Tape& tape, const std::vector<Tensor>& factor_velocities, double eps) {
    const std::size_t n = factor_velocities.size();
    if (n < 2) fail("orth_loss: need at least two factor velocities");
    if (eps <= 0.0) fail("orth_loss: eps must be positive");
    for (const Tensor& f : factor_velocities)
        if (f.shape() != factor_velocities[0].shape()) fail("orth_loss: velocity shapes differ");

    const Tensor eps_c = Tensor::scalar(eps);
    std::vector<Tensor> norms;
    norms.reserve(n);
    for (const Tensor& f : factor_velocities) norms.push_back(sqrt(tape, dot(tape, f, f)));

    Tensor total;
    bool first = true;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const Tensor num = dot(tape, factor_velocities[i], factor_velocities[j]);
            const Tensor den = add(tape, mul(tape, norms[i], norms[j]), eps_c);
            const Tensor cos = mul(tape, num, exp(tape, scale(tape, log(tape, den), -1.0)));
            const Tensor term = square(tape, cos);
            total = first ? term : add(tape, total, term);
            first = false;
        }
    return scale(tape, total, 2.0 / static_cast<double>(n * (n - 1)));
}

Tensor orth_loss_routed(Tape& tape, const Tensor& attn, const Tensor& v_agg, double eps) {
    if (attn.rank() != 2 || v_agg.rank() != 2 || attn.shape()[0] != v_agg.shape()[0])
        fail("orth_loss_routed: attn and v_agg row counts differ");
    if (eps <= 0.0) fail("orth_loss_routed: eps must be positive");
    const std::size_t n = attn.shape()[1];
    const std::size_t d = v_agg.shape()[1];
    if (n < 2) fail("orth_loss_routed: need at least two factors");

    const Tensor ones_d1 = Tensor::full({d, 1}, 1.0);
    const Tensor ones_1n = Tensor::full({1, n}, 1.0);
    std::vector<double> eye(n * n, 0.0), off(n * n, 1.0), epsm(n * n, eps);
    for (std::size_t i = 0; i < n; ++i) {
        eye[i * n + i] = 1.0;
        off[i * n + i] = 0.0;
    }
    const Tensor identity(Shape{n, n}, std::move(eye));
    const Tensor off_mask(Shape{n, n}, std::move(off));
    const Tensor eps_mat(Shape{n, n}, std::move(epsm));

    const Tensor r = matmul(tape, square(tape, v_agg), ones_d1);            // M x 1 row norms^2
    const Tensor gram = matmul(tape, transpose(tape, attn),
                               mul(tape, matmul(tape, r, ones_1n), attn));  // dot(v_i, v_j)
    const Tensor diag_col = matmul(tape, mul(tape, gram, identity), transpose(tape, ones_1n));
    const Tensor norms = sqrt(tape, diag_col);
    const Tensor den = add(tape, matmul(tape, norms, transpose(tape, norms)), eps_mat);
    const Tensor cos2 = mul(tape, square(tape, gram), exp(tape, scale(tape, log(tape, den), -2.0)));
    const Tensor off_sum = dot(tape, cos2, off_mask);
    return scale(tape, off_sum, 1.0 / static_cast<double>(n * (n - 1)));
}

AdamState::AdamState(const ModelParams& params) {
    m.reserve(params.count());
    v.reserve(params.count());
    for (std::size_t i = 0; i < params.count(); ++i) {
        m.emplace_back(params.value(i).size(), 0.0);
        v.emplace_back(params.value(i).size(), 0.0);
    }
}

void adam_step(ModelParams& params, AdamState& state, const TrainConfig& cfg,
               const BoundModel& bound, const std::unordered_map<std::int32_t, Tensor>& grads) {
    if (state.m.size() != params.count()) fail("adam_step: state does not match parameters");
    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.count(); ++i) {
        const std::string& name = params.name(i);
        const Tensor& leaf = bound.at(name);
        if (!leaf.tracked()) fail("adam_step: " + name + " is not bound as a leaf");
        const auto& gv = grads.at(leaf.node()).values();
        const auto& pv = params.value(i).values();
        auto& mi = state.m[i];
        auto& vi = state.v[i];
        std::vector<double> next(pv.size());
        for (std::size_t j = 0; j < pv.size(); ++j) {
            if (!std::isfinite(gv[j]))
                throw std::runtime_error("adam_step: non-finite gradient in " + name);
            mi[j] = cfg.beta1 * mi[j] + (1.0 - cfg.beta1) * gv[j];
            vi[j] = cfg.beta2 * vi[j] + (1.0 - cfg.beta2) * gv[j] * gv[j];
            const double mhat = mi[j] / bc1;
            const double vhat = vi[j] / bc2;
            next[j] = pv[j] - cfg.lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        }
        params.set(i, Tensor(params.value(i).shape(), std::move(next)));
    }
}

TrainResult train(const ModelHyper& hyper, const LatentCodec& codec, const TrainConfig& cfg,
                  const std::function<void(const StepStats&)>& on_step) {
    if (hyper.latent_tokens != codec.tokens || hyper.latent_channels != codec.channels)
        fail("train: model and codec disagree on the latent grid");
    if (hyper.image_dim != codec.input_dim) fail("train: model and codec disagree on image size");
    if (cfg.batch == 0) fail("train: batch must be positive");

    ModelParams params = ModelParams::init(hyper, cfg.seed);
    AdamState state(params);
    const std::vector<double> latents = encode_all_scenes(codec);
    const std::size_t dim = codec.latent_dim();
    const std::size_t bm = cfg.batch * hyper.latent_tokens;

    std::ofstream csv;
    if (!cfg.run_dir.empty()) {
        std::filesystem::create_directories(cfg.run_dir);
        csv.open(cfg.run_dir + "/loss.csv", std::ios::trunc);
        if (!csv) throw std::runtime_error("train: cannot write " + cfg.run_dir + "/loss.csv");
        csv << "step,fm_loss,orth_loss,total\n";
    }

    TrainResult result{std::move(params), {}};
    result.trace.reserve(cfg.steps);
    std::vector<double> z0(dim), z1(dim);

    for (std::size_t step = 0; step < cfg.steps; ++step) {
        std::vector<double> images(cfg.batch * hyper.image_dim);
        std::vector<double> zt(cfg.batch * dim);
        std::vector<double> u(cfg.batch * dim);
        std::vector<double> ts(cfg.batch);
        for (std::size_t idx = 0; idx < cfg.batch; ++idx) {
            Rng rng(cfg.seed ^ (static_cast<std::uint64_t>(step) * cfg.batch + idx));
            const std::size_t scene = rng.next() % kSceneCount;
            ts[idx] = rng.uniform_co();
            for (std::size_t j = 0; j < dim; ++j) z0[j] = rng.gaussian();
            std::copy(latents.begin() + static_cast<std::ptrdiff_t>(scene * dim),
                      latents.begin() + static_cast<std::ptrdiff_t>((scene + 1) * dim), z1.begin());
            const Bridge b = make_bridge(z0, z1, ts[idx]);
            std::copy(b.z_t.begin(), b.z_t.end(), zt.begin() + static_cast<std::ptrdiff_t>(idx * dim));
            std::copy(b.u.begin(), b.u.end(), u.begin() + static_cast<std::ptrdiff_t>(idx * dim));
            render_scene(scene_factors(scene), images.data() + idx * hyper.image_dim);
        }

        Tape tape;
        const BoundModel bound = bind_leaves(tape, result.params);
        const Tensor images_t(Shape{cfg.batch, hyper.image_dim}, std::move(images));
        const Tensor zt_t(Shape{bm, hyper.latent_channels}, std::move(zt));
        const Tensor u_t(Shape{bm, hyper.latent_channels}, std::move(u));

        const Tensor factors = encode_factors(tape, bound, images_t);
        const VelocityOut vel = predict_velocity(tape, bound, zt_t, factors, ts);
        const Tensor attn = route_attention(tape, bound, vel.h, factors, cfg.batch);

        const Tensor fm = fm_loss(tape, vel.v_agg, u_t, cfg.batch);
        std::vector<Tensor> per_sample;
        per_sample.reserve(cfg.batch);
        const std::size_t m = hyper.latent_tokens;
        for (std::size_t idx = 0; idx < cfg.batch; ++idx) {
            const Tensor a = slice(tape, attn, 0, idx * m, (idx + 1) * m);
            const Tensor v = slice(tape, vel.v_agg, 0, idx * m, (idx + 1) * m);
            per_sample.push_back(orth_loss_routed(tape, a, v, cfg.orth_eps));
        }
        const Tensor orth = mean(tape, concat(tape, per_sample, 0));
        const Tensor total = add(tape, fm, scale(tape, orth, cfg.lambda_orth));

        StepStats st{step, fm.scalar_value(), orth.scalar_value(), total.scalar_value()};
        if (!std::isfinite(st.total))
            throw std::runtime_error("train: non-finite loss at step " + std::to_string(step));

        const auto grads = tape.backward(total);
        adam_step(result.params, state, cfg, bound, grads);

        if (csv.is_open()) {
            char row[160];
            std::snprintf(row, sizeof row, "%zu,%.17g,%.17g,%.17g\n", st.step, st.fm, st.orth, st.total);
            csv << row;
        }
        result.trace.push_back(st);
        if (on_step) on_step(st);

        if (!cfg.run_dir.empty() && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0)
            save_checkpoint(cfg.run_dir + "/checkpoint.bin", result.params);
    }

    if (!cfg.run_dir.empty()) save_checkpoint(cfg.run_dir + "/checkpoint.bin", result.params);
    return result;
}

}  // namespace fdis
