#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace fdis {

// Dense row-major float64 tensors with a reverse-mode tape. Every value that
// participates in a gradient computation lives on exactly one Tape; constants
// (node id -1) flow through the same primitives without being recorded.

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> values);

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_ ? data_->size() : 0; }
    const std::vector<double>& values() const;
    double value_at(std::size_t flat_index) const;
    double scalar_value() const;

    bool tracked() const { return node_ >= 0; }
    bool requires_grad() const { return requires_grad_; }
    std::int32_t node() const { return node_; }
    const Tape* tape() const { return tape_; }

private:
    friend class Tape;
    friend struct TapeOps;

    Shape shape_;
    std::shared_ptr<const std::vector<double>> data_;
    const Tape* tape_ = nullptr;
    std::int32_t node_ = -1;
    bool requires_grad_ = false;
};

enum class Op : std::uint8_t {
    kMatmul,
    kAdd,
    kSub,
    kMul,
    kScale,
    kRelu,
    kTanh,
    kExp,
    kLog,
    kRowSoftmax,
    kSum,
    kMean,
    kSquare,
    kSqrt,
    kConcat,
    kSlice,
    kTranspose,
    kBiasAdd,
    kDot,
};

const char* op_name(Op op);

// One recorded primitive application. `a`/`b` are input node ids (-1 unused);
// concat keeps its full input list in `ins`.
struct Record {
    Op op;
    std::int32_t a = -1;
    std::int32_t b = -1;
    std::int32_t out = -1;
    std::vector<std::int32_t> ins;
    double c = 0.0;
    std::size_t axis = 0;
    std::size_t lo = 0;
    std::size_t hi = 0;
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Registers a requires-grad leaf. Gradients are reported for leaves only.
    Tensor leaf(const Tensor& value);

    std::size_t num_applications() const { return records_.size(); }
    std::size_t num_nodes() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

    // Reverse sweep from a scalar loss recorded on this tape. Accumulation
    // runs in reverse record order, so results are bit-reproducible. The tape
    // is consumed afterwards: recording or a second backward throws.
    std::unordered_map<std::int32_t, Tensor> backward(const Tensor& loss);

    const Tensor& node_value(std::int32_t id) const { return nodes_[static_cast<std::size_t>(id)]; }

private:
    friend struct TapeOps;

    std::vector<Tensor> nodes_;
    std::vector<Record> records_;
    std::vector<std::int32_t> leaves_;
    bool consumed_ = false;
};

// ==================== primitives ====================

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& a, double c);
Tensor relu(Tape& tape, const Tensor& a);
Tensor tanh(Tape& tape, const Tensor& a);
Tensor exp(Tape& tape, const Tensor& a);
Tensor log(Tape& tape, const Tensor& a);
Tensor row_softmax(Tape& tape, const Tensor& a);
Tensor sum(Tape& tape, const Tensor& a);
Tensor mean(Tape& tape, const Tensor& a);
Tensor square(Tape& tape, const Tensor& a);
Tensor sqrt(Tape& tape, const Tensor& a);
Tensor concat(Tape& tape, const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(Tape& tape, const Tensor& a, std::size_t axis, std::size_t lo, std::size_t hi);
Tensor transpose(Tape& tape, const Tensor& a);
Tensor bias_add(Tape& tape, const Tensor& a, const Tensor& bias);
Tensor dot(Tape& tape, const Tensor& a, const Tensor& b);

// ==================== gradient checking ====================

// f must map (tape, x) to a scalar. When grad_check drives the numeric side
// it passes x as a constant, so f sees an untracked tensor and records
// nothing. Relative error uses max(|analytic|, |numeric|, 1e-8) as the
// denominator; the returned value is the max over coordinates.
double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f,
                  const Tensor& x,
                  double h = 1e-5);

}  // namespace fdis
