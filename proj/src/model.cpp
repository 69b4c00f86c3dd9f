#include "fdis/model.hpp"

#include "fdis/io.hpp"
#include "fdis/rng.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace fdis {

namespace {

constexpr double kTwoPi = 2.0 * 3.14159265358979323846;

[[noreturn]] void fail(const std::string& what) {
    throw std::invalid_argument(what);
}

}  // namespace

// ==================== parameters ====================

void ModelParams::define(const std::string& name, Shape shape) {
    index_.emplace(name, names_.size());
    names_.push_back(name);
    values_.push_back(Tensor::zeros(std::move(shape)));
}

ModelParams::ModelParams(const ModelHyper& hyper) : hyper_(hyper) {
    const std::size_t ds = hyper.factor_dim, n = hyper.factor_tokens, hd = hyper.hidden_dim;
    define("enc.w1", {hyper.image_dim, hyper.enc_hidden});
    define("enc.b1", {hyper.enc_hidden});
    define("enc.w2", {hyper.enc_hidden, hyper.enc_hidden});
    define("enc.b2", {hyper.enc_hidden});
    define("enc.w3", {hyper.enc_hidden, n * ds});
    define("enc.b3", {n * ds});
    define("vel.in.w", {hyper.token_input_dim(), hd});
    define("vel.in.b", {hd});
    for (std::size_t k = 0; k < hyper.blocks; ++k) {
        const std::string p = "blk" + std::to_string(k);
        define(p + ".mlp.w1", {hd, hd});
        define(p + ".mlp.b1", {hd});
        define(p + ".mlp.w2", {hd, hd});
        define(p + ".mlp.b2", {hd});
        define(p + ".att.wq", {hd, hyper.key_dim});
        define(p + ".att.wk", {ds, hyper.key_dim});
        define(p + ".att.wv", {ds, hd});
    }
    define("vel.out.w", {hd, hyper.latent_channels});
    define("vel.out.b", {hyper.latent_channels});
    define("route.wq", {hd, hyper.key_dim});
    define("route.wk", {ds, hyper.key_dim});
}

ModelParams ModelParams::init(const ModelHyper& hyper, std::uint64_t seed) {
    ModelParams p(hyper);
    Rng rng(seed);
    for (std::size_t i = 0; i < p.count(); ++i) {
        const Tensor& t = p.value(i);
        // Biases and the output projection start at zero; every other weight
        // is uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)), drawn in
        // definition order, row-major.
        if (t.rank() != 2 || p.name(i) == "vel.out.w") continue;
        const double a = 1.0 / std::sqrt(static_cast<double>(t.shape()[0]));
        std::vector<double> vals(t.size());
        for (double& v : vals) v = a * (2.0 * rng.uniform_co() - 1.0);
        p.set(i, Tensor(t.shape(), std::move(vals)));
    }
    return p;
}

const Tensor& ModelParams::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) fail("params: unknown tensor " + name);
    return values_[it->second];
}

void ModelParams::set(std::size_t i, Tensor v) {
    if (v.shape() != values_[i].shape())
        fail("params: shape mismatch for " + names_[i] + ": " + shape_str(v.shape()) + " vs " +
             shape_str(values_[i].shape()));
    values_[i] = std::move(v);
}

std::size_t ModelParams::scalar_count() const {
    std::size_t n = 0;
    for (const Tensor& t : values_) n += t.size();
    return n;
}

// ==================== checkpoints ====================

namespace {

void write_hyper(std::ostream& os, const ModelHyper& h) {
    for (std::size_t v : {h.latent_tokens, h.latent_channels, h.factor_tokens, h.factor_dim,
                          h.hidden_dim, h.blocks, h.key_dim, h.time_dim, h.pos_dim, h.enc_hidden,
                          h.image_dim})
        write_u32(os, static_cast<std::uint32_t>(v));
}

ModelHyper read_hyper(std::istream& is) {
    ModelHyper h;
    for (std::size_t* v : {&h.latent_tokens, &h.latent_channels, &h.factor_tokens, &h.factor_dim,
                           &h.hidden_dim, &h.blocks, &h.key_dim, &h.time_dim, &h.pos_dim,
                           &h.enc_hidden, &h.image_dim})
        *v = read_u32(is);
    return h;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    write_magic(os);
    write_hyper(os, params.hyper());
    write_u32(os, static_cast<std::uint32_t>(params.count()));
    for (std::size_t i = 0; i < params.count(); ++i) {
        write_string(os, params.name(i));
        const Tensor& t = params.value(i);
        write_u32(os, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) write_u32(os, static_cast<std::uint32_t>(d));
        for (double v : t.values()) write_f64(os, v);
    }
    os.flush();
    if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

ModelParams load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    read_magic(is, "checkpoint");
    ModelParams params(read_hyper(is));
    const std::uint32_t count = read_u32(is);
    if (count != params.count())
        throw std::runtime_error("checkpoint: tensor count " + std::to_string(count) + " does not match " +
                                 std::to_string(params.count()));
    for (std::size_t i = 0; i < params.count(); ++i) {
        const std::string name = read_string(is);
        if (name != params.name(i))
            throw std::runtime_error("checkpoint: tensor " + std::to_string(i) + " is " + name +
                                     ", expected " + params.name(i));
        Shape shape(read_u32(is));
        for (std::size_t& d : shape) d = read_u32(is);
        if (shape != params.value(i).shape())
            throw std::runtime_error("checkpoint: shape mismatch for " + name);
        std::vector<double> vals(numel(shape));
        for (double& v : vals) v = read_f64(is);
        params.set(i, Tensor(std::move(shape), std::move(vals)));
    }
    if (!is) throw std::runtime_error("checkpoint: truncated file " + path);
    return params;
}

// ==================== binding ====================

const Tensor& BoundModel::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) fail("model: unbound tensor " + name);
    return it->second;
}

BoundModel bind_leaves(Tape& tape, const ModelParams& params) {
    BoundModel m;
    m.hyper = params.hyper();
    for (std::size_t i = 0; i < params.count(); ++i) m.tensors.emplace(params.name(i), tape.leaf(params.value(i)));
    return m;
}

BoundModel bind_constants(const ModelParams& params) {
    BoundModel m;
    m.hyper = params.hyper();
    for (std::size_t i = 0; i < params.count(); ++i) m.tensors.emplace(params.name(i), params.value(i));
    return m;
}

// ==================== embeddings ====================

std::vector<double> time_embed_values(double t, std::size_t time_dim) {
    if (!(t >= 0.0 && t <= 1.0)) fail("time_embed: t = " + std::to_string(t) + " outside [0,1]");
    std::vector<double> out;
    out.reserve(time_dim);
    double freq = 1.0;
    for (std::size_t j = 0; j < time_dim / 2; ++j) {
        out.push_back(std::sin(kTwoPi * freq * t));
        out.push_back(std::cos(kTwoPi * freq * t));
        freq *= 2.0;
    }
    return out;
}

std::vector<double> position_embed_values(std::size_t token, std::size_t tokens, std::size_t pos_dim) {
    const double frac = static_cast<double>(token) / static_cast<double>(tokens);
    std::vector<double> out;
    out.reserve(pos_dim);
    double freq = 1.0;
    for (std::size_t j = 0; j < pos_dim / 2; ++j) {
        out.push_back(std::sin(kTwoPi * freq * frac));
        out.push_back(std::cos(kTwoPi * freq * frac));
        freq *= 2.0;
    }
    return out;
}

// ==================== forward ====================

Tensor encode_factors(Tape& tape, const BoundModel& m, const Tensor& images) {
    const ModelHyper& hy = m.hyper;
    if (images.rank() != 2 || images.shape()[1] != hy.image_dim)
        fail("encode_factors: expected (batch x " + std::to_string(hy.image_dim) + "), got " +
             shape_str(images.shape()));
    const std::size_t batch = images.shape()[0];
    Tensor h1 = relu(tape, bias_add(tape, matmul(tape, images, m.at("enc.w1")), m.at("enc.b1")));
    Tensor h2 = relu(tape, bias_add(tape, matmul(tape, h1, m.at("enc.w2")), m.at("enc.b2")));
    Tensor flat = bias_add(tape, matmul(tape, h2, m.at("enc.w3")), m.at("enc.b3"));

    // Regroup (batch x N*d_s) into the sample-major token matrix
    // ((batch*N) x d_s) with slices; there is no reshape primitive.
    std::vector<Tensor> token_cols;
    token_cols.reserve(hy.factor_tokens);
    for (std::size_t i = 0; i < hy.factor_tokens; ++i)
        token_cols.push_back(slice(tape, flat, 1, i * hy.factor_dim, (i + 1) * hy.factor_dim));
    if (batch == 1) return concat(tape, token_cols, 0);
    std::vector<Tensor> rows;
    rows.reserve(batch * hy.factor_tokens);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < hy.factor_tokens; ++i)
            rows.push_back(slice(tape, token_cols[i], 0, b, b + 1));
    return concat(tape, rows, 0);
}

VelocityOut predict_velocity(Tape& tape, const BoundModel& m, const Tensor& z_t,
                             const Tensor& factors, const std::vector<double>& ts) {
    const ModelHyper& hy = m.hyper;
    const std::size_t batch = ts.size();
    const std::size_t mt = hy.latent_tokens, n = hy.factor_tokens;
    if (batch == 0) fail("predict_velocity: empty batch");
    if (z_t.shape() != Shape{batch * mt, hy.latent_channels})
        fail("predict_velocity: z_t shape " + shape_str(z_t.shape()));
    if (factors.shape() != Shape{batch * n, hy.factor_dim})
        fail("predict_velocity: factors shape " + shape_str(factors.shape()));

    // Fixed per-row conditioning features (constants, recorded by nothing).
    const std::size_t feat = hy.time_dim + hy.pos_dim;
    std::vector<double> tp;
    tp.reserve(batch * mt * feat);
    for (std::size_t b = 0; b < batch; ++b) {
        const std::vector<double> te = time_embed_values(ts[b], hy.time_dim);
        for (std::size_t tok = 0; tok < mt; ++tok) {
            const std::vector<double> pe = position_embed_values(tok, mt, hy.pos_dim);
            tp.insert(tp.end(), te.begin(), te.end());
            tp.insert(tp.end(), pe.begin(), pe.end());
        }
    }
    Tensor features(Shape{batch * mt, feat}, std::move(tp));

    Tensor x = concat(tape, {z_t, features}, 1);
    Tensor h = bias_add(tape, matmul(tape, x, m.at("vel.in.w")), m.at("vel.in.b"));
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(hy.key_dim));

    for (std::size_t k = 0; k < hy.blocks; ++k) {
        const std::string p = "blk" + std::to_string(k);
        Tensor u = relu(tape, bias_add(tape, matmul(tape, h, m.at(p + ".mlp.w1")), m.at(p + ".mlp.b1")));
        u = bias_add(tape, matmul(tape, u, m.at(p + ".mlp.w2")), m.at(p + ".mlp.b2"));
        h = add(tape, h, u);

        Tensor q = matmul(tape, h, m.at(p + ".att.wq"));
        Tensor key = matmul(tape, factors, m.at(p + ".att.wk"));
        Tensor val = matmul(tape, factors, m.at(p + ".att.wv"));
        std::vector<Tensor> per;
        per.reserve(batch);
        for (std::size_t b = 0; b < batch; ++b) {
            Tensor qb = batch == 1 ? q : slice(tape, q, 0, b * mt, (b + 1) * mt);
            Tensor kb = batch == 1 ? key : slice(tape, key, 0, b * n, (b + 1) * n);
            Tensor vb = batch == 1 ? val : slice(tape, val, 0, b * n, (b + 1) * n);
            Tensor logits = scale(tape, matmul(tape, qb, transpose(tape, kb)), inv_sqrt_dk);
            per.push_back(matmul(tape, row_softmax(tape, logits), vb));
        }
        h = add(tape, h, batch == 1 ? per[0] : concat(tape, per, 0));
    }

    Tensor v = bias_add(tape, matmul(tape, h, m.at("vel.out.w")), m.at("vel.out.b"));
    return {v, h};
}

Tensor route_attention(Tape& tape, const BoundModel& m, const Tensor& h, const Tensor& factors,
                       std::size_t batch) {
    const ModelHyper& hy = m.hyper;
    const std::size_t mt = hy.latent_tokens, n = hy.factor_tokens;
    if (batch == 0 || h.shape() != Shape{batch * mt, hy.hidden_dim} ||
        factors.shape() != Shape{batch * n, hy.factor_dim})
        fail("route_attention: shapes " + shape_str(h.shape()) + " / " + shape_str(factors.shape()));
    Tensor q = matmul(tape, h, m.at("route.wq"));
    Tensor key = matmul(tape, factors, m.at("route.wk"));
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(hy.key_dim));
    std::vector<Tensor> per;
    per.reserve(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        Tensor qb = batch == 1 ? q : slice(tape, q, 0, b * mt, (b + 1) * mt);
        Tensor kb = batch == 1 ? key : slice(tape, key, 0, b * n, (b + 1) * n);
        Tensor logits = scale(tape, matmul(tape, qb, transpose(tape, kb)), inv_sqrt_dk);
        per.push_back(row_softmax(tape, logits));
    }
    return batch == 1 ? per[0] : concat(tape, per, 0);
}

std::vector<Tensor> route_velocity(Tape& tape, const Tensor& attn, const Tensor& v_agg) {
    if (attn.rank() != 2 || v_agg.rank() != 2 || attn.shape()[0] != v_agg.shape()[0])
        fail("route_velocity: shapes " + shape_str(attn.shape()) + " / " + shape_str(v_agg.shape()));
    const std::size_t n = attn.shape()[1];
    const std::size_t d = v_agg.shape()[1];
    const Tensor ones(Shape{1, d}, std::vector<double>(d, 1.0));
    std::vector<Tensor> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Tensor col = slice(tape, attn, 1, i, i + 1);
        out.push_back(mul(tape, matmul(tape, col, ones), v_agg));
    }
    return out;
}

std::vector<double> velocity_field(const BoundModel& m, const std::vector<double>& z,
                                   const std::vector<double>& factors, double t) {
    const ModelHyper& hy = m.hyper;
    Tape scratch;
    const Tensor zt(Shape{hy.latent_tokens, hy.latent_channels}, z);
    const Tensor cond(Shape{hy.factor_tokens, hy.factor_dim}, factors);
    return predict_velocity(scratch, m, zt, cond, {t}).v_agg.values();
}

std::vector<double> factor_tokens(const BoundModel& m, const std::vector<double>& image) {
    Tape scratch;
    const Tensor img(Shape{1, m.hyper.image_dim}, image);
    return encode_factors(scratch, m, img).values();
}

}  // namespace fdis
