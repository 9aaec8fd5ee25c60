#include "magnets/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>

namespace magnets {

using ad::Tape;
using ad::Var;

Matrix flatten(const Tensor& x) {
    if (x.rank() < 2) throw ShapeError("flatten: expected [N,...], got " + shape_str(x.shape()));
    const std::size_t n = x.dim(0);
    const std::size_t p = n ? x.size() / n : 0;
    Matrix out(n, p);
    std::copy_n(x.raw(), x.size(), out.data());
    return out;
}

MeanModel MeanModel::fit(const std::vector<double>& y) {
    if (y.empty()) throw std::invalid_argument("mean baseline: empty training set");
    return MeanModel{std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size())};
}

std::string to_string(Regularization r) {
    switch (r) {
        case Regularization::None: return "none";
        case Regularization::Ridge: return "ridge";
        case Regularization::Lasso: return "lasso";
    }
    return "unknown";
}

std::vector<double> LinearModel::predict(const Matrix& x) const {
    if (x.cols() != weights.size())
        throw ShapeError("linear model: expected " + std::to_string(weights.size()) + " features, got " +
                         std::to_string(x.cols()));
    const Vector p = (x * weights).array() + intercept;
    return std::vector<double>(p.data(), p.data() + p.size());
}

namespace {

void check_design(const Matrix& x, const Vector& y) {
    if (x.rows() == 0) throw std::invalid_argument("linear baseline: empty training set");
    if (x.rows() != y.size()) throw std::invalid_argument("linear baseline: X and y row counts differ");
}

}  // namespace

LinearModel fit_ols(const Matrix& x, const Vector& y) {
    check_design(x, y);
    const Eigen::Index n = x.rows(), p = x.cols();
    Eigen::MatrixXd a(n, p + 1);
    a.col(0).setOnes();
    a.rightCols(p) = x;
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
    if (qr.rank() < p + 1)
        throw RankDeficient("ols: design matrix has rank " + std::to_string(qr.rank()) + " < " +
                            std::to_string(p + 1) + " columns; use ridge regularization instead");
    const Vector coef = qr.solve(y);
    LinearModel m;
    m.intercept = coef(0);
    m.weights = coef.tail(p);
    return m;
}

LinearModel fit_ridge(const Matrix& x, const Vector& y, double lambda) {
    check_design(x, y);
    if (!(lambda >= 0.0)) throw std::invalid_argument("ridge: lambda must be non-negative");
    const Eigen::RowVectorXd mu = x.colwise().mean();
    const double y_mu = y.mean();
    const Eigen::MatrixXd xc = x.rowwise() - mu;
    Eigen::MatrixXd gram = xc.transpose() * xc;
    gram.diagonal().array() += lambda;
    const Vector rhs = xc.transpose() * (y.array() - y_mu).matrix();
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
        throw RankDeficient("ridge: normal equations are singular; increase lambda");
    LinearModel m;
    m.weights = ldlt.solve(rhs);
    m.intercept = y_mu - mu.dot(m.weights);
    m.regularization = Regularization::Ridge;
    m.lambda = lambda;
    return m;
}

double lasso_objective(const Matrix& x, const Vector& y, const LinearModel& m, double lambda) {
    const Vector r = (y - x * m.weights).array() - m.intercept;
    return r.squaredNorm() / (2.0 * static_cast<double>(x.rows())) + lambda * m.weights.lpNorm<1>();
}

LassoFit fit_lasso(const Matrix& x, const Vector& y, const LassoOptions& opts) {
    check_design(x, y);
    if (!(opts.lambda >= 0.0)) throw std::invalid_argument("lasso: lambda must be non-negative");
    const double n = static_cast<double>(x.rows());
    const Eigen::RowVectorXd mu = x.colwise().mean();
    const double y_mu = y.mean();
    // Column-major so each coordinate update streams one column.
    const Eigen::MatrixXd xc = x.rowwise() - mu;
    const Vector col_sq = xc.colwise().squaredNorm().transpose() / n;
    const Eigen::Index p = xc.cols();

    Vector w = Vector::Zero(p);
    Vector r = y.array() - y_mu;
    LassoFit fit;
    auto soft = [](double v, double t) { return v > t ? v - t : (v < -t ? v + t : 0.0); };
    for (fit.sweeps = 0; fit.sweeps < opts.max_sweeps;) {
        double max_change = 0.0;
        for (Eigen::Index j = 0; j < p; ++j) {
            if (col_sq(j) == 0.0) continue;
            const double rho = xc.col(j).dot(r) / n + col_sq(j) * w(j);
            const double next = soft(rho, opts.lambda) / col_sq(j);
            const double delta = next - w(j);
            if (delta != 0.0) {
                r -= delta * xc.col(j);
                w(j) = next;
                max_change = std::max(max_change, std::abs(delta));
            }
        }
        ++fit.sweeps;
        if (opts.record_objective) fit.objective.push_back(r.squaredNorm() / (2.0 * n) + opts.lambda * w.lpNorm<1>());
        if (max_change < opts.tol) {
            fit.converged = true;
            break;
        }
    }

    const Vector g = xc.transpose() * r / n;
    double kkt = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
        if (w(j) != 0.0) kkt = std::max(kkt, std::abs(g(j) - opts.lambda * (w(j) > 0 ? 1.0 : -1.0)));
        else kkt = std::max(kkt, std::abs(g(j)) - opts.lambda);
    }
    fit.kkt_residual = std::max(kkt, 0.0);
    fit.model.weights = w;
    fit.model.intercept = y_mu - mu.dot(w);
    fit.model.regularization = Regularization::Lasso;
    fit.model.lambda = opts.lambda;
    return fit;
}

// ---- CNN ----------------------------------------------------------------------

namespace {

constexpr std::uint64_t kCnnInitStream = 0xc22;

}  // namespace

void CnnConfig::validate() const {
    if (channels < 1) throw std::invalid_argument("cnn: channels must be >= 1");
    if (widths.empty()) throw std::invalid_argument("cnn: at least one encoder width is required");
    const std::size_t factor = std::size_t{1} << widths.size();
    if (length == 0 || length % factor != 0)
        throw std::invalid_argument("cnn: length " + std::to_string(length) + " is not divisible by " +
                                    std::to_string(factor));
}

CnnModel::CnnModel(CnnConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    Rng rng = make_stream(seed, kCnnInitStream);
    encoder_ = ConvEncoder("cnn", config_.channels, config_.widths, rng);
    const std::size_t w = config_.widths.back();
    Tensor head({w, 1});
    const double bound = std::sqrt(1.0 / static_cast<double>(w));
    for (double& v : head.data()) v = uniform(rng, -bound, bound);
    head_weight_ = ad::Parameter("cnn.head.weight", std::move(head));
    head_bias_ = ad::Parameter("cnn.head.bias", Tensor({1}));
}

Var CnnModel::forward(Tape& tape, Var x) const {
    const Shape& s = x.shape();
    if (s.size() != 3 || s[1] != config_.channels || s[2] != config_.length)
        throw ShapeError("cnn: expected input [B," + std::to_string(config_.channels) + "," +
                         std::to_string(config_.length) + "], got " + shape_str(s));
    Var h = encoder_(tape, x).pooled;
    const std::size_t steps = h.shape()[2];
    Var pooled = ad::scale(ad::sum_over_axis(h, 2), 1.0 / static_cast<double>(steps));
    Var y = ad::linear(pooled, tape.parameter(head_weight_), tape.parameter(head_bias_));
    return ad::reshape(y, {s[0]});
}

std::vector<ad::Parameter*> CnnModel::parameters() {
    std::vector<ad::Parameter*> out;
    encoder_.collect(out);
    out.push_back(&head_weight_);
    out.push_back(&head_bias_);
    return out;
}

std::vector<const ad::Parameter*> CnnModel::parameters() const {
    std::vector<const ad::Parameter*> out;
    encoder_.collect(out);
    out.push_back(&head_weight_);
    out.push_back(&head_bias_);
    return out;
}

LossBreakdown CnnModel::training_loss(Tape& tape, const Tensor& x, const Tensor& y, Rng&) const {
    Var pred = forward(tape, tape.constant(x));
    Var l = ad::mse(pred, tape.constant(y));
    return {l, l.value()[0], 0.0, 0.0};
}

Tensor CnnModel::predict(const Tensor& x) const {
    Tape tape(ad::ParamMode::Frozen);
    return forward(tape, tape.constant(x)).value();
}

std::size_t CnnModel::encoder_parameter_count() const {
    std::vector<const ad::Parameter*> ps;
    encoder_.collect(ps);
    return parameter_count(ps);
}

// ---- Integrated Gradients -------------------------------------------------------

Tensor integrated_gradients(const BatchFunction& f, const Tensor& x, const Tensor& baseline, std::size_t steps,
                            std::size_t batch) {
    if (steps < 2) throw std::invalid_argument("integrated gradients: steps must be >= 2");
    if (batch == 0) throw std::invalid_argument("integrated gradients: batch must be positive");
    if (x.rank() != 2 || baseline.shape() != x.shape())
        throw ShapeError("integrated gradients: expected matching [C,T] input and baseline, got " +
                         shape_str(x.shape()) + " and " + shape_str(baseline.shape()));
    const std::size_t cells = x.size();
    std::vector<double> grad_sum(cells, 0.0);
    for (std::size_t first = 1; first <= steps; first += batch) {
        const std::size_t count = std::min(batch, steps + 1 - first);
        Tensor path({count, x.dim(0), x.dim(1)});
        for (std::size_t k = 0; k < count; ++k) {
            const double alpha = static_cast<double>(first + k) / static_cast<double>(steps);
            for (std::size_t i = 0; i < cells; ++i)
                path[k * cells + i] = baseline[i] + alpha * (x[i] - baseline[i]);
        }
        Tape tape(ad::ParamMode::Frozen);
        Var in = tape.variable(std::move(path));
        tape.backward(ad::sum(f(tape, in)));
        const Tensor& g = tape.grad(in);
        for (std::size_t k = 0; k < count; ++k)
            for (std::size_t i = 0; i < cells; ++i) grad_sum[i] += g[k * cells + i];
    }
    Tensor out(x.shape());
    for (std::size_t i = 0; i < cells; ++i)
        out[i] = (x[i] - baseline[i]) * grad_sum[i] / static_cast<double>(steps);
    return out;
}

double output_gap(const BatchFunction& f, const Tensor& x, const Tensor& baseline) {
    Tensor both({2, x.dim(0), x.dim(1)});
    std::copy_n(x.raw(), x.size(), both.raw());
    std::copy_n(baseline.raw(), x.size(), both.raw() + x.size());
    Tape tape(ad::ParamMode::Frozen);
    const Tensor out = f(tape, tape.constant(std::move(both))).value();
    return out[0] - out[1];
}

std::string attribution_csv(const std::vector<AttributionRow>& rows) {
    std::ostringstream os;
    os.precision(17);
    os << "sample_id,channel,time,attribution,attribution_normalized\n";
    for (const AttributionRow& r : rows)
        os << r.sample << ',' << r.channel << ',' << r.time << ',' << r.attribution << ',' << r.normalized << '\n';
    return os.str();
}

}  // namespace magnets
