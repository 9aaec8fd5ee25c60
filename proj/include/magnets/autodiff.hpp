#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "magnets/tensor.hpp"

namespace magnets::ad {

// A named trainable array. Gradients live on the Tape that used it.
struct Parameter {
    Parameter() = default;
    Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {}

    std::string name;
    Tensor value;
};

enum class ParamMode {
    Trainable,  // parameter() leaves receive gradients
    Frozen,     // parameter() leaves are constants
};

class Tape;

// Handle to a node recorded on a Tape.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape& tape() const;
    std::size_t id() const noexcept { return id_; }
    bool valid() const noexcept { return tape_ != nullptr; }

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

struct BackwardContext {
    const Tensor& out_grad;
    const Tensor& out_value;
    std::span<const Tensor* const> in_values;
    // Null for inputs that do not need a gradient.
    std::span<Tensor* const> in_grads;
};

using BackwardFn = std::function<void(const BackwardContext&)>;

struct BackwardStats {
    std::size_t visited = 0;
    // Nodes that need a gradient but were not reachable from the loss.
    std::size_t unreached = 0;
};

// Define-by-run record of one forward pass. Not thread-safe; one tape per thread.
class Tape {
public:
    explicit Tape(ParamMode mode = ParamMode::Trainable) : mode_(mode) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    // Leaf whose gradient can be read back with grad() after backward().
    Var variable(Tensor value);
    // Leaf bound to a model parameter. Binding the same parameter twice returns
    // the same node. The parameter must outlive the tape.
    Var parameter(const Parameter& param);

    // Records an operation. If no input needs a gradient the backward rule is dropped.
    Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);

    const Tensor& value(Var v) const;
    const Tensor& grad(Var v) const;
    // Gradient of the last backward() w.r.t. a bound parameter; zeros if the
    // parameter was not bound or not reached.
    Tensor param_grad(const Parameter& param) const;
    bool requires_grad(Var v) const;

    BackwardStats backward(Var loss);

    std::size_t size() const noexcept { return nodes_.size(); }
    void clear() {
        nodes_.clear();
        bound_.clear();
    }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        const Parameter* param = nullptr;
        bool requires_grad = false;
        bool has_grad = false;
    };

    Node& node(Var v);
    const Node& node(Var v) const;

    ParamMode mode_;
    // deque: growing the tape never invalidates references to recorded values.
    std::deque<Node> nodes_;
    std::vector<std::pair<const Parameter*, std::size_t>> bound_;
};

// ---- differentiable operations -------------------------------------------
// All shapes are checked; the only implicit broadcast is the bias add in
// conv1d() and linear().

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var relu(Var a);
Var sigmoid(Var a);

// a [n,k] x b [k,m] -> [n,m]
Var matmul(Var a, Var b);
Var transpose(Var a);
// x [n,in] x w [in,out] + b [out] -> [n,out]
Var linear(Var x, Var w, Var b);

Var sum(Var a);
Var sum_over_axis(Var a, std::size_t axis);
Var reshape(Var a, Shape shape);

// Sum of |a|; subgradient 0 at 0.
Var abs_sum(Var a);
Var sum_squares(Var a);
// Mean of squared residuals over all elements.
Var mse(Var pred, Var target);

// input [B,Cin,T], kernel [Cout,Cin,k] (k odd), bias [Cout] -> [B,Cout,T]; zero "same" padding.
Var conv1d(Var input, Var kernel, Var bias);
// input [B,Cin,T], kernel [Cin,Cout,2] -> [B,Cout,2T]; stride 2.
Var conv1d_transposed(Var input, Var kernel);

struct MaxPoolResult {
    Var output;
    // Flat input offset of the element selected for each output element.
    std::vector<std::size_t> argmax;
};
// input [B,C,T] with even T -> [B,C,T/2]; ties go to the earlier index.
MaxPoolResult maxpool1d(Var input);

// [B,C1,T] ++ [B,C2,T] -> [B,C1+C2,T]
Var concat_channels(Var a, Var b);

// sigmoid((logits + noise) / tau); an empty noise tensor means no noise.
Var relaxed_bernoulli(Var logits, const Tensor& noise, double tau);

// Forward: 1 where relaxed > 0.5, else 0. Backward: identity.
Var ste_binarize(Var relaxed);

// z[b,c,m] = sum_{t < valid_len} x[b,c,t] * masks[b,c,m,t]
Var masked_sum(Var x, Var masks, std::size_t valid_len);

// Plain (non-recording) helpers.
double sigmoid_scalar(double x);

}  // namespace magnets::ad
