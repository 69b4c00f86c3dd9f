#include "fdis/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace fdis {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const EMat>;
using Map = Eigen::Map<EMat>;

[[noreturn]] void fail(const std::string& what) {
    throw std::invalid_argument(what);
}

void check_nonempty(const char* op, const Tensor& t) {
    if (t.size() == 0) fail(std::string(op) + ": empty tensor");
    for (std::size_t d : t.shape())
        if (d == 0) fail(std::string(op) + ": zero-length axis in " + shape_str(t.shape()));
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        fail(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ")";
    return os.str();
}

const char* op_name(Op op) {
    switch (op) {
        case Op::kMatmul: return "matmul";
        case Op::kAdd: return "add";
        case Op::kSub: return "sub";
        case Op::kMul: return "mul";
        case Op::kScale: return "scale";
        case Op::kRelu: return "relu";
        case Op::kTanh: return "tanh";
        case Op::kExp: return "exp";
        case Op::kLog: return "log";
        case Op::kRowSoftmax: return "row_softmax";
        case Op::kSum: return "sum";
        case Op::kMean: return "mean";
        case Op::kSquare: return "square";
        case Op::kSqrt: return "sqrt";
        case Op::kConcat: return "concat";
        case Op::kSlice: return "slice";
        case Op::kTranspose: return "transpose";
        case Op::kBiasAdd: return "bias_add";
        case Op::kDot: return "dot";
    }
    return "?";
}

// ==================== Tensor ====================

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
    if (values.size() != numel(shape_))
        fail("tensor: value count " + std::to_string(values.size()) + " does not match shape " + shape_str(shape_));
    data_ = std::make_shared<const std::vector<double>>(std::move(values));
}

Tensor Tensor::zeros(Shape shape) {
    std::vector<double> v(numel(shape), 0.0);
    return Tensor(std::move(shape), std::move(v));
}

Tensor Tensor::full(Shape shape, double value) {
    std::vector<double> v(numel(shape), value);
    return Tensor(std::move(shape), std::move(v));
}

Tensor Tensor::scalar(double value) {
    return Tensor(Shape{1}, std::vector<double>{value});
}

const std::vector<double>& Tensor::values() const {
    if (!data_) fail("tensor: reading values of a default-constructed tensor");
    return *data_;
}

double Tensor::value_at(std::size_t flat_index) const {
    return values().at(flat_index);
}

double Tensor::scalar_value() const {
    if (size() != 1) fail("tensor: scalar_value on shape " + shape_str(shape_));
    return values()[0];
}

// ==================== Tape plumbing ====================

struct TapeOps {
    // Ensures a value has a node slot on `tape`. Tracked inputs must already
    // live there; constants get an untracked slot so VJPs can read them.
    static std::int32_t intern(Tape& tape, const Tensor& t, const char* op) {
        if (t.tracked()) {
            if (t.tape() != &tape) fail(std::string(op) + ": input recorded on a different tape");
            return t.node();
        }
        Tensor slot = t;
        slot.tape_ = &tape;
        slot.node_ = static_cast<std::int32_t>(tape.nodes_.size());
        tape.nodes_.push_back(slot);
        return slot.node_;
    }

    static Tensor emit(Tape& tape, Record rec, Shape shape, std::vector<double> values) {
        if (tape.consumed_) fail(std::string(op_name(rec.op)) + ": tape already consumed by backward");
        Tensor out(std::move(shape), std::move(values));
        out.tape_ = &tape;
        out.node_ = static_cast<std::int32_t>(tape.nodes_.size());
        tape.nodes_.push_back(out);
        rec.out = out.node_;
        tape.records_.push_back(std::move(rec));
        return out;
    }
};

namespace {

bool any_tracked(std::initializer_list<const Tensor*> ins) {
    for (const Tensor* t : ins)
        if (t->tracked()) return true;
    return false;
}

// Shared tail of every primitive: compute already done, decide whether to
// record. Constant inputs produce a constant output.
Tensor finish(Tape& tape, Op op, std::initializer_list<const Tensor*> ins, Record rec,
              Shape shape, std::vector<double> values) {
    if (!any_tracked(ins)) return Tensor(std::move(shape), std::move(values));
    rec.op = op;
    const Tensor* a = ins.size() > 0 ? *ins.begin() : nullptr;
    const Tensor* b = ins.size() > 1 ? *(ins.begin() + 1) : nullptr;
    if (a) rec.a = TapeOps::intern(tape, *a, op_name(op));
    if (b) rec.b = TapeOps::intern(tape, *b, op_name(op));
    return TapeOps::emit(tape, std::move(rec), std::move(shape), std::move(values));
}

}  // namespace

Tensor Tape::leaf(const Tensor& value) {
    if (consumed_) fail("leaf: tape already consumed by backward");
    check_nonempty("leaf", value);
    Tensor t = value;
    t.tape_ = this;
    t.node_ = static_cast<std::int32_t>(nodes_.size());
    t.requires_grad_ = true;
    nodes_.push_back(t);
    leaves_.push_back(t.node_);
    return t;
}

// ==================== primitives: forward ====================

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
    check_nonempty("matmul", a);
    check_nonempty("matmul", b);
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0])
        fail("matmul: shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    std::vector<double> out(m * n);
    MapC ma(a.values().data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
    MapC mb(b.values().data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
    Map mo(out.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    mo.noalias() = ma * mb;
    return finish(tape, Op::kMatmul, {&a, &b}, Record{}, Shape{m, n}, std::move(out));
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
    check_nonempty("add", a);
    check_same_shape("add", a, b);
    std::vector<double> out(a.size());
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return finish(tape, Op::kAdd, {&a, &b}, Record{}, a.shape(), std::move(out));
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
    check_nonempty("sub", a);
    check_same_shape("sub", a, b);
    std::vector<double> out(a.size());
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    return finish(tape, Op::kSub, {&a, &b}, Record{}, a.shape(), std::move(out));
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
    check_nonempty("mul", a);
    check_same_shape("mul", a, b);
    std::vector<double> out(a.size());
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return finish(tape, Op::kMul, {&a, &b}, Record{}, a.shape(), std::move(out));
}

Tensor scale(Tape& tape, const Tensor& a, double c) {
    check_nonempty("scale", a);
    std::vector<double> out(a.size());
    const auto& av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
    Record rec;
    rec.c = c;
    return finish(tape, Op::kScale, {&a}, std::move(rec), a.shape(), std::move(out));
}

Tensor relu(Tape& tape, const Tensor& a) {
    check_nonempty("relu", a);
    std::vector<double> out(a.size());
    const auto& av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
    return finish(tape, Op::kRelu, {&a}, Record{}, a.shape(), std::move(out));
}

Tensor tanh(Tape& tape, const Tensor& a) {
    check_nonempty("tanh", a);
    std::vector<double> out(a.size());
    const auto& av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(av[i]);
    return finish(tape, Op::kTanh, {&a}, Record{}, a.shape(), std::move(out));
}

Tensor exp(Tape& tape, const Tensor& a) {
    check_nonempty("exp", a);
    std::vector<double> out(a.size());
    const auto& av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(av[i]);
    return finish(tape, Op::kExp, {&a}, Record{}, a.shape(), std::move(out));
}

Tensor log(Tape& tape, const Tensor& a) {
    check_nonempty("log", a);
    std::vector<double> out(a.size());
    const auto& av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!(av[i] > 0.0)) fail("log: requires positive input, got " + std::to_string(av[i]));
        out[i] = std::log(av[i]);
    }
    return finish(tape, Op::kLog, {&a}, Record{}, a.shape(), std::move(out));
}

Tensor row_softmax(Tape& tape, const Tensor& a) {
    check_nonempty("row_softmax", a);
    const std::size_t cols = a.shape().back();
    const std::size_t rows = a.size() / cols;
    std::vector<double> out(a.size());
    const auto& av = a.values();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = av.data() + r * cols;
        double* y = out.data() + r * cols;
        double mx = x[0];
        for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
        double s = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            y[j] = std::exp(x[j] - mx);
            s += y[j];
        }
        for (std::size_t j = 0; j < cols; ++j) y[j] /= s;
    }
    return finish(tape, Op::kRowSoftmax, {&a}, Record{}, a.shape(), std::move(out));
}

Tensor sum(Tape& tape, const Tensor& a) {
    check_nonempty("sum", a);
    double s = 0.0;
    for (double v : a.values()) s += v;
    return finish(tape, Op::kSum, {&a}, Record{}, Shape{1}, std::vector<double>{s});
}

Tensor mean(Tape& tape, const Tensor& a) {
    check_nonempty("mean", a);
    double s = 0.0;
    for (double v : a.values()) s += v;
    return finish(tape, Op::kMean, {&a}, Record{}, Shape{1},
                  std::vector<double>{s / static_cast<double>(a.size())});
}

Tensor square(Tape& tape, const Tensor& a) {
    check_nonempty("square", a);
    std::vector<double> out(a.size());
    const auto& av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * av[i];
    return finish(tape, Op::kSquare, {&a}, Record{}, a.shape(), std::move(out));
}

Tensor sqrt(Tape& tape, const Tensor& a) {
    check_nonempty("sqrt", a);
    std::vector<double> out(a.size());
    const auto& av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (av[i] < 0.0) fail("sqrt: requires non-negative input, got " + std::to_string(av[i]));
        out[i] = std::sqrt(av[i]);
    }
    return finish(tape, Op::kSqrt, {&a}, Record{}, a.shape(), std::move(out));
}

namespace {

struct AxisSplit {
    std::size_t outer = 1;   // product of dims before axis
    std::size_t inner = 1;   // product of dims after axis
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

}  // namespace

Tensor concat(Tape& tape, const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) fail("concat: no inputs");
    const Shape& first = parts[0].shape();
    if (axis >= first.size()) fail("concat: axis " + std::to_string(axis) + " out of range for " + shape_str(first));
    std::size_t axis_total = 0;
    for (const Tensor& p : parts) {
        check_nonempty("concat", p);
        if (p.rank() != first.size()) fail("concat: rank mismatch " + shape_str(p.shape()) + " vs " + shape_str(first));
        for (std::size_t i = 0; i < first.size(); ++i)
            if (i != axis && p.shape()[i] != first[i])
                fail("concat: shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(first));
        axis_total += p.shape()[axis];
    }
    Shape out_shape = first;
    out_shape[axis] = axis_total;
    const AxisSplit sp = split_at(out_shape, axis);
    std::vector<double> out(numel(out_shape));
    std::size_t offset = 0;  // in axis units
    for (const Tensor& p : parts) {
        const std::size_t len = p.shape()[axis] * sp.inner;
        const auto& pv = p.values();
        for (std::size_t o = 0; o < sp.outer; ++o)
            std::copy_n(pv.data() + o * len, len, out.data() + o * axis_total * sp.inner + offset * sp.inner);
        offset += p.shape()[axis];
    }

    bool tracked = false;
    for (const Tensor& p : parts) tracked = tracked || p.tracked();
    if (!tracked) return Tensor(std::move(out_shape), std::move(out));
    Record rec;
    rec.op = Op::kConcat;
    rec.axis = axis;
    rec.ins.reserve(parts.size());
    for (const Tensor& p : parts) rec.ins.push_back(TapeOps::intern(tape, p, "concat"));
    return TapeOps::emit(tape, std::move(rec), std::move(out_shape), std::move(out));
}

Tensor slice(Tape& tape, const Tensor& a, std::size_t axis, std::size_t lo, std::size_t hi) {
    check_nonempty("slice", a);
    if (axis >= a.rank()) fail("slice: axis " + std::to_string(axis) + " out of range for " + shape_str(a.shape()));
    if (lo >= hi || hi > a.shape()[axis])
        fail("slice: range [" + std::to_string(lo) + "," + std::to_string(hi) + ") invalid for axis of length " +
             std::to_string(a.shape()[axis]));
    Shape out_shape = a.shape();
    out_shape[axis] = hi - lo;
    const AxisSplit sp = split_at(a.shape(), axis);
    const std::size_t src_axis = a.shape()[axis];
    std::vector<double> out(numel(out_shape));
    const auto& av = a.values();
    const std::size_t len = (hi - lo) * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o)
        std::copy_n(av.data() + (o * src_axis + lo) * sp.inner, len, out.data() + o * len);
    Record rec;
    rec.axis = axis;
    rec.lo = lo;
    rec.hi = hi;
    return finish(tape, Op::kSlice, {&a}, std::move(rec), std::move(out_shape), std::move(out));
}

Tensor transpose(Tape& tape, const Tensor& a) {
    check_nonempty("transpose", a);
    if (a.rank() != 2) fail("transpose: rank-2 only, got " + shape_str(a.shape()));
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    std::vector<double> out(a.size());
    const auto& av = a.values();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
    return finish(tape, Op::kTranspose, {&a}, Record{}, Shape{n, m}, std::move(out));
}

Tensor bias_add(Tape& tape, const Tensor& a, const Tensor& bias) {
    check_nonempty("bias_add", a);
    check_nonempty("bias_add", bias);
    if (bias.rank() != 1 || bias.shape()[0] != a.shape().back())
        fail("bias_add: bias " + shape_str(bias.shape()) + " does not match last axis of " + shape_str(a.shape()));
    const std::size_t cols = bias.shape()[0];
    const std::size_t rows = a.size() / cols;
    std::vector<double> out(a.size());
    const auto& av = a.values();
    const auto& bv = bias.values();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] = av[r * cols + j] + bv[j];
    return finish(tape, Op::kBiasAdd, {&a, &bias}, Record{}, a.shape(), std::move(out));
}

Tensor dot(Tape& tape, const Tensor& a, const Tensor& b) {
    check_nonempty("dot", a);
    check_same_shape("dot", a, b);
    double s = 0.0;
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
    return finish(tape, Op::kDot, {&a, &b}, Record{}, Shape{1}, std::vector<double>{s});
}

// ==================== backward ====================

std::unordered_map<std::int32_t, Tensor> Tape::backward(const Tensor& loss) {
    if (consumed_) fail("backward: tape already consumed");
    if (!loss.tracked() || loss.tape() != this) fail("backward: loss is not recorded on this tape");
    if (loss.size() != 1) fail("backward: loss must be scalar, got " + shape_str(loss.shape()));
    consumed_ = true;

    std::vector<std::vector<double>> grad(nodes_.size());
    auto ensure = [&](std::int32_t id) -> std::vector<double>& {
        auto& g = grad[static_cast<std::size_t>(id)];
        if (g.empty()) g.assign(nodes_[static_cast<std::size_t>(id)].size(), 0.0);
        return g;
    };
    ensure(loss.node())[0] = 1.0;

    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
        const Record& r = *it;
        const auto& g = grad[static_cast<std::size_t>(r.out)];
        if (g.empty()) continue;
        const Tensor& out = nodes_[static_cast<std::size_t>(r.out)];
        const Tensor* ta = r.a >= 0 ? &nodes_[static_cast<std::size_t>(r.a)] : nullptr;
        const Tensor* tb = r.b >= 0 ? &nodes_[static_cast<std::size_t>(r.b)] : nullptr;

        switch (r.op) {
            case Op::kMatmul: {
                const std::size_t m = ta->shape()[0], k = ta->shape()[1], n = tb->shape()[1];
                MapC mg(g.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
                MapC ma(ta->values().data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
                MapC mb(tb->values().data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
                Map(ensure(r.a).data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k)).noalias() +=
                    mg * mb.transpose();
                Map(ensure(r.b).data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n)).noalias() +=
                    ma.transpose() * mg;
                break;
            }
            case Op::kAdd: {
                auto& ga = ensure(r.a);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                auto& gb = ensure(r.b);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                break;
            }
            case Op::kSub: {
                auto& ga = ensure(r.a);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                auto& gb = ensure(r.b);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                break;
            }
            case Op::kMul: {
                const auto& av = ta->values();
                const auto& bv = tb->values();
                auto& ga = ensure(r.a);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
                auto& gb = ensure(r.b);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                break;
            }
            case Op::kScale: {
                auto& ga = ensure(r.a);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * r.c;
                break;
            }
            case Op::kRelu: {
                const auto& av = ta->values();
                auto& ga = ensure(r.a);
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (av[i] > 0.0) ga[i] += g[i];
                break;
            }
            case Op::kTanh: {
                const auto& yv = out.values();
                auto& ga = ensure(r.a);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - yv[i] * yv[i]);
                break;
            }
            case Op::kExp: {
                const auto& yv = out.values();
                auto& ga = ensure(r.a);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * yv[i];
                break;
            }
            case Op::kLog: {
                const auto& av = ta->values();
                auto& ga = ensure(r.a);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / av[i];
                break;
            }
            case Op::kRowSoftmax: {
                const auto& yv = out.values();
                auto& ga = ensure(r.a);
                const std::size_t cols = out.shape().back();
                const std::size_t rows = out.size() / cols;
                for (std::size_t row = 0; row < rows; ++row) {
                    const double* y = yv.data() + row * cols;
                    const double* gr = g.data() + row * cols;
                    double dy = 0.0;
                    for (std::size_t j = 0; j < cols; ++j) dy += gr[j] * y[j];
                    double* gout = ga.data() + row * cols;
                    for (std::size_t j = 0; j < cols; ++j) gout[j] += y[j] * (gr[j] - dy);
                }
                break;
            }
            case Op::kSum: {
                auto& ga = ensure(r.a);
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
                break;
            }
            case Op::kMean: {
                auto& ga = ensure(r.a);
                const double s = g[0] / static_cast<double>(ga.size());
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s;
                break;
            }
            case Op::kSquare: {
                const auto& av = ta->values();
                auto& ga = ensure(r.a);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * 2.0 * av[i];
                break;
            }
            case Op::kSqrt: {
                // Subgradient 0 at exactly 0 keeps zero-velocity norms finite.
                const auto& yv = out.values();
                auto& ga = ensure(r.a);
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (yv[i] != 0.0) ga[i] += g[i] * 0.5 / yv[i];
                break;
            }
            case Op::kConcat: {
                const AxisSplit sp = split_at(out.shape(), r.axis);
                const std::size_t axis_total = out.shape()[r.axis];
                std::size_t offset = 0;
                for (std::int32_t in_id : r.ins) {
                    const Tensor& part = nodes_[static_cast<std::size_t>(in_id)];
                    const std::size_t len = part.shape()[r.axis] * sp.inner;
                    auto& gp = ensure(in_id);
                    for (std::size_t o = 0; o < sp.outer; ++o) {
                        const double* src = g.data() + o * axis_total * sp.inner + offset * sp.inner;
                        double* dst = gp.data() + o * len;
                        for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
                    }
                    offset += part.shape()[r.axis];
                }
                break;
            }
            case Op::kSlice: {
                const AxisSplit sp = split_at(ta->shape(), r.axis);
                const std::size_t src_axis = ta->shape()[r.axis];
                const std::size_t len = (r.hi - r.lo) * sp.inner;
                auto& ga = ensure(r.a);
                for (std::size_t o = 0; o < sp.outer; ++o) {
                    const double* src = g.data() + o * len;
                    double* dst = ga.data() + (o * src_axis + r.lo) * sp.inner;
                    for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
                }
                break;
            }
            case Op::kTranspose: {
                const std::size_t m = ta->shape()[0], n = ta->shape()[1];
                auto& ga = ensure(r.a);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
                break;
            }
            case Op::kBiasAdd: {
                auto& ga = ensure(r.a);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                auto& gb = ensure(r.b);
                const std::size_t cols = gb.size();
                const std::size_t rows = g.size() / cols;
                for (std::size_t row = 0; row < rows; ++row)
                    for (std::size_t j = 0; j < cols; ++j) gb[j] += g[row * cols + j];
                break;
            }
            case Op::kDot: {
                const auto& av = ta->values();
                const auto& bv = tb->values();
                auto& ga = ensure(r.a);
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0] * bv[i];
                auto& gb = ensure(r.b);
                for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[0] * av[i];
                break;
            }
        }
    }

    std::unordered_map<std::int32_t, Tensor> result;
    result.reserve(leaves_.size());
    for (std::int32_t id : leaves_) {
        auto& g = grad[static_cast<std::size_t>(id)];
        const Tensor& node = nodes_[static_cast<std::size_t>(id)];
        if (g.empty()) g.assign(node.size(), 0.0);
        result.emplace(id, Tensor(node.shape(), std::move(g)));
    }
    return result;
}

// ==================== gradient checking ====================

double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f, const Tensor& x, double h) {
    Tape tape;
    Tensor xl = tape.leaf(x);
    Tensor y = f(tape, xl);
    if (y.size() != 1) fail("grad_check: f must return a scalar");
    if (!y.tracked()) fail("grad_check: f does not depend on x");
    auto grads = tape.backward(y);
    const std::vector<double> analytic = grads.at(xl.node()).values();

    auto eval = [&](const std::vector<double>& vals) {
        Tape scratch;
        Tensor out = f(scratch, Tensor(x.shape(), vals));
        return out.scalar_value();
    };

    std::vector<double> bumped = x.values();
    double max_rel = 0.0;
    for (std::size_t i = 0; i < bumped.size(); ++i) {
        const double orig = bumped[i];
        bumped[i] = orig + h;
        const double up = eval(bumped);
        bumped[i] = orig - h;
        const double down = eval(bumped);
        bumped[i] = orig;
        const double numeric = (up - down) / (2.0 * h);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
        max_rel = std::max(max_rel, std::abs(analytic[i] - numeric) / denom);
    }
    return max_rel;
}

}  // namespace fdis
