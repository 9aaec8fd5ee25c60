#include "magnets/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <memory>

namespace magnets::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using MapVec = Eigen::Map<Eigen::VectorXd>;
using ConstMapVec = Eigen::Map<const Eigen::VectorXd>;

// Message built only on failure.
#define REQUIRE(cond, what)                    \
    do {                                       \
        if (!(cond)) throw ShapeError(what);   \
    } while (0)

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    REQUIRE(a.shape() == b.shape(),
            std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

Tape& common_tape(Var a, Var b) {
    REQUIRE(&a.tape() == &b.tape(), "operands recorded on different tapes");
    return a.tape();
}

}  // namespace

// ---- Var / Tape -----------------------------------------------------------

Tape& Var::tape() const {
    if (!tape_) throw std::logic_error("use of an unbound Var");
    return *tape_;
}

const Tensor& Var::value() const { return tape().value(*this); }

Tape::Node& Tape::node(Var v) {
    if (&v.tape() != this || v.id() >= nodes_.size()) throw std::logic_error("Var does not belong to this tape");
    return nodes_[v.id()];
}

const Tape::Node& Tape::node(Var v) const {
    if (&v.tape() != this || v.id() >= nodes_.size()) throw std::logic_error("Var does not belong to this tape");
    return nodes_[v.id()];
}

Var Tape::constant(Tensor value) {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(const Parameter& param) {
    for (const auto& [p, id] : bound_)
        if (p == &param) return Var(this, id);
    Node n;
    n.value = param.value;
    n.requires_grad = mode_ == ParamMode::Trainable;
    n.param = &param;
    nodes_.push_back(std::move(n));
    bound_.emplace_back(&param, nodes_.size() - 1);
    return Var(this, nodes_.size() - 1);
}

Tensor Tape::param_grad(const Parameter& param) const {
    for (const auto& [p, id] : bound_)
        if (p == &param) {
            const Node& n = nodes_[id];
            return n.has_grad ? n.grad : Tensor(param.value.shape());
        }
    return Tensor(param.value.shape());
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    n.inputs.reserve(inputs.size());
    for (Var in : inputs) {
        const Node& src = node(in);
        n.inputs.push_back(in.id());
        n.requires_grad = n.requires_grad || src.requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

const Tensor& Tape::grad(Var v) const {
    const Node& n = node(v);
    if (!n.has_grad) throw std::logic_error("no gradient recorded for node " + std::to_string(v.id()));
    return n.grad;
}

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

BackwardStats Tape::backward(Var loss) {
    Node& root = node(loss);
    REQUIRE(root.value.size() == 1, "backward() needs a scalar loss, got shape " + shape_str(root.value.shape()));
    for (Node& n : nodes_) {
        n.has_grad = false;
        n.grad = Tensor();
    }
    root.grad = Tensor(root.value.shape(), 1.0);
    root.has_grad = true;

    BackwardStats stats;
    std::vector<const Tensor*> in_values;
    std::vector<Tensor*> in_grads;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requires_grad) continue;
        if (!n.has_grad) {
            ++stats.unreached;
            continue;
        }
        ++stats.visited;
        if (!n.backward) continue;
        in_values.clear();
        in_grads.clear();
        for (std::size_t id : n.inputs) {
            Node& in = nodes_[id];
            in_values.push_back(&in.value);
            if (in.requires_grad) {
                if (!in.has_grad) {
                    in.grad = Tensor(in.value.shape());
                    in.has_grad = true;
                }
                in_grads.push_back(&in.grad);
            } else {
                in_grads.push_back(nullptr);
            }
        }
        n.backward(BackwardContext{n.grad, n.value, in_values, in_grads});
    }
    return stats;
}

double sigmoid_scalar(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

namespace {

// Same branch form as sigmoid_scalar, evaluated a packet at a time.
void sigmoid_into(const double* x, double* out, std::size_t n) {
    const auto len = static_cast<Eigen::Index>(n);
    Eigen::Map<const Eigen::ArrayXd> xa(x, len);
    const Eigen::ArrayXd e = (-xa.abs()).exp();
    Eigen::Map<Eigen::ArrayXd>(out, len) = (xa >= 0.0).select(1.0 / (1.0 + e), e / (1.0 + e));
}

}  // namespace

// ---- elementwise ----------------------------------------------------------

Var add(Var a, Var b) {
    Tape& tape = common_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_same_shape(av, bv, "add");
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return tape.record(std::move(out), {a, b}, [](const BackwardContext& ctx) {
        for (Tensor* g : ctx.in_grads) {
            if (!g) continue;
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += ctx.out_grad[i];
        }
    });
}

Var sub(Var a, Var b) {
    Tape& tape = common_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_same_shape(av, bv, "sub");
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    return tape.record(std::move(out), {a, b}, [](const BackwardContext& ctx) {
        if (Tensor* g = ctx.in_grads[0])
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += ctx.out_grad[i];
        if (Tensor* g = ctx.in_grads[1])
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= ctx.out_grad[i];
    });
}

Var mul(Var a, Var b) {
    Tape& tape = common_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_same_shape(av, bv, "mul");
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return tape.record(std::move(out), {a, b}, [](const BackwardContext& ctx) {
        const Tensor& x = *ctx.in_values[0];
        const Tensor& y = *ctx.in_values[1];
        if (Tensor* g = ctx.in_grads[0])
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += ctx.out_grad[i] * y[i];
        if (Tensor* g = ctx.in_grads[1])
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += ctx.out_grad[i] * x[i];
    });
}

Var scale(Var a, double s) {
    const Tensor& av = a.value();
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
    return a.tape().record(std::move(out), {a}, [s](const BackwardContext& ctx) {
        Tensor& g = *ctx.in_grads[0];
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += ctx.out_grad[i] * s;
    });
}

Var relu(Var a) {
    const Tensor& av = a.value();
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
    return a.tape().record(std::move(out), {a}, [](const BackwardContext& ctx) {
        const Tensor& x = *ctx.in_values[0];
        Tensor& g = *ctx.in_grads[0];
        // relu'(0) = 0
        for (std::size_t i = 0; i < g.size(); ++i)
            if (x[i] > 0.0) g[i] += ctx.out_grad[i];
    });
}

Var sigmoid(Var a) {
    const Tensor& av = a.value();
    Tensor out(av.shape());
    sigmoid_into(av.raw(), out.raw(), out.size());
    return a.tape().record(std::move(out), {a}, [](const BackwardContext& ctx) {
        const Tensor& s = ctx.out_value;
        Tensor& g = *ctx.in_grads[0];
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += ctx.out_grad[i] * s[i] * (1.0 - s[i]);
    });
}

// ---- contractions ---------------------------------------------------------

Var matmul(Var a, Var b) {
    Tape& tape = common_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    REQUIRE(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(0),
            "matmul: incompatible shapes " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
    const auto n = static_cast<Eigen::Index>(av.dim(0));
    const auto k = static_cast<Eigen::Index>(av.dim(1));
    const auto m = static_cast<Eigen::Index>(bv.dim(1));
    Tensor out(Shape{av.dim(0), bv.dim(1)});
    MapMat(out.raw(), n, m).noalias() = ConstMapMat(av.raw(), n, k) * ConstMapMat(bv.raw(), k, m);
    return tape.record(std::move(out), {a, b}, [n, k, m](const BackwardContext& ctx) {
        ConstMapMat dc(ctx.out_grad.raw(), n, m);
        if (Tensor* g = ctx.in_grads[0])
            MapMat(g->raw(), n, k).noalias() += dc * ConstMapMat(ctx.in_values[1]->raw(), k, m).transpose();
        if (Tensor* g = ctx.in_grads[1])
            MapMat(g->raw(), k, m).noalias() += ConstMapMat(ctx.in_values[0]->raw(), n, k).transpose() * dc;
    });
}

Var transpose(Var a) {
    const Tensor& av = a.value();
    REQUIRE(av.rank() == 2, "transpose: expected a matrix, got " + shape_str(av.shape()));
    const auto r = static_cast<Eigen::Index>(av.dim(0));
    const auto c = static_cast<Eigen::Index>(av.dim(1));
    Tensor out(Shape{av.dim(1), av.dim(0)});
    MapMat(out.raw(), c, r) = ConstMapMat(av.raw(), r, c).transpose();
    return a.tape().record(std::move(out), {a}, [r, c](const BackwardContext& ctx) {
        MapMat(ctx.in_grads[0]->raw(), r, c) += ConstMapMat(ctx.out_grad.raw(), c, r).transpose();
    });
}

Var linear(Var x, Var w, Var b) {
    Tape& tape = common_tape(x, w);
    common_tape(x, b);
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    const Tensor& bv = b.value();
    REQUIRE(xv.rank() == 2 && wv.rank() == 2 && xv.dim(1) == wv.dim(0) && bv.rank() == 1 && bv.dim(0) == wv.dim(1),
            "linear: incompatible shapes x" + shape_str(xv.shape()) + " w" + shape_str(wv.shape()) + " b" +
                shape_str(bv.shape()));
    const auto n = static_cast<Eigen::Index>(xv.dim(0));
    const auto in = static_cast<Eigen::Index>(xv.dim(1));
    const auto outd = static_cast<Eigen::Index>(wv.dim(1));
    Tensor out(Shape{xv.dim(0), wv.dim(1)});
    MapMat y(out.raw(), n, outd);
    y.noalias() = ConstMapMat(xv.raw(), n, in) * ConstMapMat(wv.raw(), in, outd);
    y.rowwise() += ConstMapVec(bv.raw(), outd).transpose();
    return tape.record(std::move(out), {x, w, b}, [n, in, outd](const BackwardContext& ctx) {
        ConstMapMat dy(ctx.out_grad.raw(), n, outd);
        if (Tensor* g = ctx.in_grads[0])
            MapMat(g->raw(), n, in).noalias() += dy * ConstMapMat(ctx.in_values[1]->raw(), in, outd).transpose();
        if (Tensor* g = ctx.in_grads[1])
            MapMat(g->raw(), in, outd).noalias() += ConstMapMat(ctx.in_values[0]->raw(), n, in).transpose() * dy;
        if (Tensor* g = ctx.in_grads[2]) MapVec(g->raw(), outd) += dy.colwise().sum().transpose();
    });
}

// ---- reductions and views -------------------------------------------------

Var sum(Var a) {
    const Tensor& av = a.value();
    double s = 0.0;
    for (double v : av.data()) s += v;
    return a.tape().record(Tensor::scalar(s), {a}, [](const BackwardContext& ctx) {
        const double g0 = ctx.out_grad[0];
        for (double& g : ctx.in_grads[0]->data()) g += g0;
    });
}

Var sum_over_axis(Var a, std::size_t axis) {
    const Tensor& av = a.value();
    REQUIRE(axis < av.rank(), "sum_over_axis: axis out of range for " + shape_str(av.shape()));
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= av.dim(i);
    for (std::size_t i = axis + 1; i < av.rank(); ++i) inner *= av.dim(i);
    const std::size_t len = av.dim(axis);
    Shape out_shape;
    for (std::size_t i = 0; i < av.rank(); ++i)
        if (i != axis) out_shape.push_back(av.dim(i));
    if (out_shape.empty()) out_shape.push_back(1);
    Tensor out(out_shape);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t l = 0; l < len; ++l)
            for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += av[(o * len + l) * inner + i];
    return a.tape().record(std::move(out), {a}, [outer, len, inner](const BackwardContext& ctx) {
        Tensor& g = *ctx.in_grads[0];
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t l = 0; l < len; ++l)
                for (std::size_t i = 0; i < inner; ++i) g[(o * len + l) * inner + i] += ctx.out_grad[o * inner + i];
    });
}

Var reshape(Var a, Shape shape) {
    Tensor out = a.value().reshaped(std::move(shape));
    return a.tape().record(std::move(out), {a}, [](const BackwardContext& ctx) {
        Tensor& g = *ctx.in_grads[0];
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += ctx.out_grad[i];
    });
}

Var abs_sum(Var a) {
    const Tensor& av = a.value();
    double s = 0.0;
    for (double v : av.data()) s += std::abs(v);
    return a.tape().record(Tensor::scalar(s), {a}, [](const BackwardContext& ctx) {
        const Tensor& x = *ctx.in_values[0];
        Tensor& g = *ctx.in_grads[0];
        const double g0 = ctx.out_grad[0];
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (x[i] > 0.0)
                g[i] += g0;
            else if (x[i] < 0.0)
                g[i] -= g0;
        }
    });
}

Var sum_squares(Var a) {
    const Tensor& av = a.value();
    double s = 0.0;
    for (double v : av.data()) s += v * v;
    return a.tape().record(Tensor::scalar(s), {a}, [](const BackwardContext& ctx) {
        const Tensor& x = *ctx.in_values[0];
        Tensor& g = *ctx.in_grads[0];
        const double g0 = 2.0 * ctx.out_grad[0];
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += g0 * x[i];
    });
}

Var mse(Var pred, Var target) {
    Tape& tape = common_tape(pred, target);
    const Tensor& p = pred.value();
    const Tensor& t = target.value();
    require_same_shape(p, t, "mse");
    REQUIRE(!p.empty(), "mse: empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double r = p[i] - t[i];
        s += r * r;
    }
    const double n = static_cast<double>(p.size());
    return tape.record(Tensor::scalar(s / n), {pred, target}, [n](const BackwardContext& ctx) {
        const Tensor& p = *ctx.in_values[0];
        const Tensor& t = *ctx.in_values[1];
        const double g0 = 2.0 * ctx.out_grad[0] / n;
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double d = g0 * (p[i] - t[i]);
            if (ctx.in_grads[0]) (*ctx.in_grads[0])[i] += d;
            if (ctx.in_grads[1]) (*ctx.in_grads[1])[i] -= d;
        }
    });
}

// ---- temporal layers ------------------------------------------------------

Var conv1d(Var input, Var kernel, Var bias) {
    Tape& tape = common_tape(input, kernel);
    common_tape(input, bias);
    const Tensor& x = input.value();
    const Tensor& w = kernel.value();
    const Tensor& b = bias.value();
    REQUIRE(x.rank() == 3 && w.rank() == 3 && b.rank() == 1,
            "conv1d: expected input [B,Cin,T], kernel [Cout,Cin,k], bias [Cout]");
    REQUIRE(w.dim(1) == x.dim(1), "conv1d: kernel expects " + std::to_string(w.dim(1)) + " input channels, got " +
                                      std::to_string(x.dim(1)));
    REQUIRE(w.dim(2) % 2 == 1, "conv1d: kernel size must be odd, got " + std::to_string(w.dim(2)));
    REQUIRE(b.dim(0) == w.dim(0), "conv1d: bias length does not match output channels");

    const std::size_t B = x.dim(0), Cin = x.dim(1), T = x.dim(2), Cout = w.dim(0), K = w.dim(2);
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(K - 1) / 2;
    const auto R = static_cast<Eigen::Index>(Cin * K);
    const auto N = static_cast<Eigen::Index>(B * T);

    // im2col: row (ci, j) holds x[b, ci, t + j - pad] for every (b, t).
    auto cols = std::make_shared<RowMat>(R, N);
    cols->setZero();
    for (std::size_t ci = 0; ci < Cin; ++ci) {
        for (std::size_t j = 0; j < K; ++j) {
            const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j) - pad;
            const std::size_t lo = shift < 0 ? static_cast<std::size_t>(-shift) : 0;
            const std::size_t hi = shift > 0 ? T - static_cast<std::size_t>(shift) : T;
            if (lo >= hi) continue;
            double* row = cols->row(static_cast<Eigen::Index>(ci * K + j)).data();
            for (std::size_t bb = 0; bb < B; ++bb) {
                const double* src = x.raw() + (bb * Cin + ci) * T;
                std::copy(src + lo + shift, src + hi + shift, row + bb * T + lo);
            }
        }
    }
    RowMat y(static_cast<Eigen::Index>(Cout), N);
    y.noalias() = ConstMapMat(w.raw(), static_cast<Eigen::Index>(Cout), R) * (*cols);

    Tensor out(Shape{B, Cout, T});
    for (std::size_t bb = 0; bb < B; ++bb)
        for (std::size_t co = 0; co < Cout; ++co) {
            const double* src = y.row(static_cast<Eigen::Index>(co)).data() + bb * T;
            double* dst = out.raw() + (bb * Cout + co) * T;
            for (std::size_t t = 0; t < T; ++t) dst[t] = src[t] + b[co];
        }

    return tape.record(std::move(out), {input, kernel, bias},
                       [cols, B, Cin, T, Cout, K, pad, R, N](const BackwardContext& ctx) {
                           RowMat dy(static_cast<Eigen::Index>(Cout), N);
                           for (std::size_t bb = 0; bb < B; ++bb)
                               for (std::size_t co = 0; co < Cout; ++co) {
                                   const double* src = ctx.out_grad.raw() + (bb * Cout + co) * T;
                                   std::copy(src, src + T, dy.row(static_cast<Eigen::Index>(co)).data() + bb * T);
                               }
                           if (Tensor* g = ctx.in_grads[1])
                               MapMat(g->raw(), static_cast<Eigen::Index>(Cout), R).noalias() +=
                                   dy * cols->transpose();
                           if (Tensor* g = ctx.in_grads[2])
                               MapVec(g->raw(), static_cast<Eigen::Index>(Cout)) += dy.rowwise().sum();
                           if (Tensor* g = ctx.in_grads[0]) {
                               RowMat dcols(R, N);
                               dcols.noalias() =
                                   ConstMapMat(ctx.in_values[1]->raw(), static_cast<Eigen::Index>(Cout), R)
                                       .transpose() *
                                   dy;
                               for (std::size_t ci = 0; ci < Cin; ++ci)
                                   for (std::size_t j = 0; j < K; ++j) {
                                       const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j) - pad;
                                       const std::size_t lo = shift < 0 ? static_cast<std::size_t>(-shift) : 0;
                                       const std::size_t hi = shift > 0 ? T - static_cast<std::size_t>(shift) : T;
                                       if (lo >= hi) continue;
                                       const double* row = dcols.row(static_cast<Eigen::Index>(ci * K + j)).data();
                                       for (std::size_t bb = 0; bb < B; ++bb) {
                                           double* dst = g->raw() + (bb * Cin + ci) * T;
                                           for (std::size_t t = lo; t < hi; ++t) dst[t + shift] += row[bb * T + t];
                                       }
                                   }
                           }
                       });
}

Var conv1d_transposed(Var input, Var kernel) {
    Tape& tape = common_tape(input, kernel);
    const Tensor& x = input.value();
    const Tensor& w = kernel.value();
    REQUIRE(x.rank() == 3 && w.rank() == 3, "conv1d_transposed: expected input [B,Cin,T] and kernel [Cin,Cout,2]");
    REQUIRE(w.dim(0) == x.dim(1), "conv1d_transposed: kernel expects " + std::to_string(w.dim(0)) +
                                      " input channels, got " + std::to_string(x.dim(1)));
    REQUIRE(w.dim(2) == 2, "conv1d_transposed: only kernel size 2 with stride 2 is supported");

    const std::size_t B = x.dim(0), Cin = x.dim(1), T = x.dim(2), Cout = w.dim(1);
    const auto N = static_cast<Eigen::Index>(B * T);
    const auto ci_n = static_cast<Eigen::Index>(Cin);
    const auto co_n = static_cast<Eigen::Index>(Cout);

    auto xs = std::make_shared<RowMat>(ci_n, N);
    for (std::size_t bb = 0; bb < B; ++bb)
        for (std::size_t ci = 0; ci < Cin; ++ci) {
            const double* src = x.raw() + (bb * Cin + ci) * T;
            std::copy(src, src + T, xs->row(static_cast<Eigen::Index>(ci)).data() + bb * T);
        }

    // Per-tap kernel slices: taps[j](ci, co) = w[ci, co, j].
    auto taps = [&w, ci_n, co_n](std::size_t j) {
        RowMat m(ci_n, co_n);
        for (Eigen::Index ci = 0; ci < ci_n; ++ci)
            for (Eigen::Index co = 0; co < co_n; ++co) m(ci, co) = w[(ci * co_n + co) * 2 + j];
        return m;
    };

    Tensor out(Shape{B, Cout, 2 * T});
    for (std::size_t j = 0; j < 2; ++j) {
        RowMat y(co_n, N);
        y.noalias() = taps(j).transpose() * (*xs);
        for (std::size_t bb = 0; bb < B; ++bb)
            for (std::size_t co = 0; co < Cout; ++co) {
                const double* src = y.row(static_cast<Eigen::Index>(co)).data() + bb * T;
                double* dst = out.raw() + (bb * Cout + co) * 2 * T;
                for (std::size_t t = 0; t < T; ++t) dst[2 * t + j] = src[t];
            }
    }

    return tape.record(std::move(out), {input, kernel}, [xs, B, Cin, T, Cout, N, ci_n, co_n](const BackwardContext& ctx) {
        const Tensor& wv = *ctx.in_values[1];
        RowMat dx;
        if (ctx.in_grads[0]) dx = RowMat::Zero(ci_n, N);
        for (std::size_t j = 0; j < 2; ++j) {
            RowMat dy(co_n, N);
            for (std::size_t bb = 0; bb < B; ++bb)
                for (std::size_t co = 0; co < Cout; ++co) {
                    const double* src = ctx.out_grad.raw() + (bb * Cout + co) * 2 * T;
                    double* dst = dy.row(static_cast<Eigen::Index>(co)).data() + bb * T;
                    for (std::size_t t = 0; t < T; ++t) dst[t] = src[2 * t + j];
                }
            if (Tensor* g = ctx.in_grads[1]) {
                RowMat dw(ci_n, co_n);
                dw.noalias() = (*xs) * dy.transpose();
                for (Eigen::Index ci = 0; ci < ci_n; ++ci)
                    for (Eigen::Index co = 0; co < co_n; ++co) (*g)[(ci * co_n + co) * 2 + j] += dw(ci, co);
            }
            if (ctx.in_grads[0]) {
                RowMat tap(ci_n, co_n);
                for (Eigen::Index ci = 0; ci < ci_n; ++ci)
                    for (Eigen::Index co = 0; co < co_n; ++co) tap(ci, co) = wv[(ci * co_n + co) * 2 + j];
                dx.noalias() += tap * dy;
            }
        }
        if (Tensor* g = ctx.in_grads[0]) {
            for (std::size_t bb = 0; bb < B; ++bb)
                for (std::size_t ci = 0; ci < Cin; ++ci) {
                    const double* src = dx.row(static_cast<Eigen::Index>(ci)).data() + bb * T;
                    double* dst = g->raw() + (bb * Cin + ci) * T;
                    for (std::size_t t = 0; t < T; ++t) dst[t] += src[t];
                }
        }
    });
}

MaxPoolResult maxpool1d(Var input) {
    const Tensor& x = input.value();
    REQUIRE(x.rank() == 3, "maxpool1d: expected [B,C,T], got " + shape_str(x.shape()));
    REQUIRE(x.dim(2) % 2 == 0, "maxpool1d: time length must be even, got " + std::to_string(x.dim(2)));
    const std::size_t rows = x.dim(0) * x.dim(1);
    const std::size_t half = x.dim(2) / 2;
    Tensor out(Shape{x.dim(0), x.dim(1), half});
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t t = 0; t < half; ++t) {
            const std::size_t i0 = r * 2 * half + 2 * t;
            const std::size_t pick = x[i0] >= x[i0 + 1] ? i0 : i0 + 1;
            out[r * half + t] = x[pick];
            (*argmax)[r * half + t] = pick;
        }
    MaxPoolResult res;
    res.argmax = *argmax;
    res.output = input.tape().record(std::move(out), {input}, [argmax](const BackwardContext& ctx) {
        Tensor& g = *ctx.in_grads[0];
        for (std::size_t i = 0; i < argmax->size(); ++i) g[(*argmax)[i]] += ctx.out_grad[i];
    });
    return res;
}

Var concat_channels(Var a, Var b) {
    Tape& tape = common_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    REQUIRE(av.rank() == 3 && bv.rank() == 3 && av.dim(0) == bv.dim(0) && av.dim(2) == bv.dim(2),
            "concat_channels: incompatible shapes " + shape_str(av.shape()) + " and " + shape_str(bv.shape()));
    const std::size_t B = av.dim(0), Ca = av.dim(1), Cb = bv.dim(1), T = av.dim(2);
    Tensor out(Shape{B, Ca + Cb, T});
    for (std::size_t bb = 0; bb < B; ++bb) {
        std::copy_n(av.raw() + bb * Ca * T, Ca * T, out.raw() + bb * (Ca + Cb) * T);
        std::copy_n(bv.raw() + bb * Cb * T, Cb * T, out.raw() + (bb * (Ca + Cb) + Ca) * T);
    }
    return tape.record(std::move(out), {a, b}, [B, Ca, Cb, T](const BackwardContext& ctx) {
        for (std::size_t bb = 0; bb < B; ++bb) {
            const double* src = ctx.out_grad.raw() + bb * (Ca + Cb) * T;
            if (Tensor* g = ctx.in_grads[0]) {
                double* dst = g->raw() + bb * Ca * T;
                for (std::size_t i = 0; i < Ca * T; ++i) dst[i] += src[i];
            }
            if (Tensor* g = ctx.in_grads[1]) {
                double* dst = g->raw() + bb * Cb * T;
                for (std::size_t i = 0; i < Cb * T; ++i) dst[i] += src[Ca * T + i];
            }
        }
    });
}

// ---- masking --------------------------------------------------------------

Var relaxed_bernoulli(Var logits, const Tensor& noise, double tau) {
    const Tensor& lv = logits.value();
    REQUIRE(tau > 0.0, "relaxed_bernoulli: temperature must be positive");
    REQUIRE(noise.empty() || noise.shape() == lv.shape(),
            "relaxed_bernoulli: noise shape " + shape_str(noise.shape()) + " vs logits " + shape_str(lv.shape()));
    const auto n = static_cast<Eigen::Index>(lv.size());
    Tensor out(lv.shape());
    Eigen::Map<Eigen::ArrayXd> o(out.raw(), n);
    if (noise.empty())
        o = ConstMapVec(lv.raw(), n).array() / tau;
    else
        o = (ConstMapVec(lv.raw(), n).array() + ConstMapVec(noise.raw(), n).array()) / tau;
    sigmoid_into(out.raw(), out.raw(), out.size());
    return logits.tape().record(std::move(out), {logits}, [tau, n](const BackwardContext& ctx) {
        Eigen::Map<const Eigen::ArrayXd> s(ctx.out_value.raw(), n);
        MapVec(ctx.in_grads[0]->raw(), n).array() += ConstMapVec(ctx.out_grad.raw(), n).array() * s * (1.0 - s) / tau;
    });
}

Var ste_binarize(Var relaxed) {
    const Tensor& r = relaxed.value();
    Tensor out(r.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = r[i] > 0.5 ? 1.0 : 0.0;
    return relaxed.tape().record(std::move(out), {relaxed}, [](const BackwardContext& ctx) {
        Tensor& g = *ctx.in_grads[0];
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += ctx.out_grad[i];
    });
}

Var masked_sum(Var x, Var masks, std::size_t valid_len) {
    Tape& tape = common_tape(x, masks);
    const Tensor& xv = x.value();
    const Tensor& mv = masks.value();
    REQUIRE(xv.rank() == 3 && mv.rank() == 4 && mv.dim(0) == xv.dim(0) && mv.dim(1) == xv.dim(1) &&
                mv.dim(3) == xv.dim(2),
            "masked_sum: incompatible shapes x" + shape_str(xv.shape()) + " masks" + shape_str(mv.shape()));
    REQUIRE(valid_len <= xv.dim(2), "masked_sum: valid length exceeds series length");
    const std::size_t B = xv.dim(0), C = xv.dim(1), M = mv.dim(2), T = xv.dim(2);
    Tensor out(Shape{B, C, M});
    for (std::size_t bc = 0; bc < B * C; ++bc) {
        const double* xs = xv.raw() + bc * T;
        for (std::size_t m = 0; m < M; ++m) {
            const double* ms = mv.raw() + (bc * M + m) * T;
            double s = 0.0;
            for (std::size_t t = 0; t < valid_len; ++t) s += xs[t] * ms[t];
            out[bc * M + m] = s;
        }
    }
    return tape.record(std::move(out), {x, masks}, [B, C, M, T, valid_len](const BackwardContext& ctx) {
        const Tensor& xv = *ctx.in_values[0];
        const Tensor& mv = *ctx.in_values[1];
        for (std::size_t bc = 0; bc < B * C; ++bc)
            for (std::size_t m = 0; m < M; ++m) {
                const double g = ctx.out_grad[bc * M + m];
                if (Tensor* gx = ctx.in_grads[0]) {
                    const double* ms = mv.raw() + (bc * M + m) * T;
                    double* dst = gx->raw() + bc * T;
                    for (std::size_t t = 0; t < valid_len; ++t) dst[t] += g * ms[t];
                }
                if (Tensor* gm = ctx.in_grads[1]) {
                    const double* xs = xv.raw() + bc * T;
                    double* dst = gm->raw() + (bc * M + m) * T;
                    for (std::size_t t = 0; t < valid_len; ++t) dst[t] += g * xs[t];
                }
            }
    });
}

}  // namespace magnets::ad
