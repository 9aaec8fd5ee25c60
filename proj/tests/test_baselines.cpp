#include <gtest/gtest.h>

#include <Eigen/QR>
#include <cmath>

#include "magnets/baselines.hpp"
#include "magnets/data.hpp"
#include "magnets/model.hpp"
#include "magnets/pipeline.hpp"

using namespace magnets;
using ad::Tape;
using ad::Var;

namespace {

Matrix gaussian_matrix(Eigen::Index n, Eigen::Index p, Rng& rng) {
    Matrix m(n, p);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < p; ++j) m(i, j) = normal(rng, 0.0, 1.0);
    return m;
}

Vector gaussian_vector(Eigen::Index n, Rng& rng, double sd = 1.0) {
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = normal(rng, 0.0, sd);
    return v;
}

// Columns centered and scaled to unit variance, as the standardized inputs are.
Matrix standardized(Matrix m) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
        const double mu = m.col(j).mean();
        m.col(j).array() -= mu;
        m.col(j) /= std::sqrt(m.col(j).squaredNorm() / static_cast<double>(m.rows()));
    }
    return m;
}

double soft(double v, double t) { return v > t ? v - t : (v < -t ? v + t : 0.0); }

// Linear test function f(x) = <a, x> over a batch [B,C,T].
BatchFunction linear_function(const Tensor& a) {
    return [a](Tape& tape, Var x) {
        const std::size_t B = x.shape()[0];
        Tensor tiled({B, a.dim(0), a.dim(1)});
        for (std::size_t b = 0; b < B; ++b) std::copy_n(a.raw(), a.size(), tiled.raw() + b * a.size());
        return ad::sum_over_axis(ad::sum_over_axis(ad::mul(x, tape.constant(tiled)), 2), 1);
    };
}

BatchFunction cnn_function(const CnnModel& cnn) {
    return [&cnn](Tape& tape, Var x) { return cnn.forward(tape, x); };
}

// A CNN trained briefly on a small univariate split.
struct TrainedCnn {
    FittedModel model;
    PreparedData test;
};

const TrainedCnn& trained_cnn() {
    static const TrainedCnn fixture = [] {
        GeneratorConfig g;
        g.seed = 3;
        g.n_train = 400;
        g.n_test = 20;
        const TimeSeriesDataset train = make_univariate(g, Split::Train);
        const TimeSeriesDataset test = make_univariate(g, Split::Test);
        RunSpec spec = desk_scale_spec(ModelKind::Cnn, 3);
        spec.widths = {8, 16, 32};
        spec.train.epochs = 5;
        spec.train.timing = false;
        TrainedCnn t{fit_model(spec, train, nullptr), {}};
        t.test = prepare(test, t.model.standardizer);
        return t;
    }();
    return fixture;
}

}  // namespace

TEST(Mean, PredictsTrainingMean) {
    const MeanModel m = MeanModel::fit({1.0, 2.0, 3.0});
    EXPECT_EQ(m.predict(4), std::vector<double>(4, 2.0));
    const std::vector<double> y{1.0, 5.0, 2.0, 8.0};
    EXPECT_NEAR(r2(y, MeanModel::fit(y).predict(4)), 0.0, 1e-15);
    EXPECT_THROW(MeanModel::fit({}), std::invalid_argument);
}

TEST(Ols, RecoversExactLinearTarget) {
    Rng rng = make_stream(1, 0);
    const Matrix x = gaussian_matrix(60, 12, rng);
    const Vector y = x.rowwise().sum();
    const LinearModel m = fit_ols(x, y);
    for (Eigen::Index j = 0; j < 12; ++j) EXPECT_NEAR(m.weights(j), 1.0, 1e-10);
    EXPECT_NEAR(m.intercept, 0.0, 1e-10);
    const std::vector<double> pred = m.predict(x);
    for (Eigen::Index i = 0; i < 60; ++i) EXPECT_LE(std::abs(pred[static_cast<std::size_t>(i)] - y(i)), 1e-8);
}

TEST(Ols, SingularDesignAdvisesRidge) {
    Rng rng = make_stream(1, 1);
    Matrix x = gaussian_matrix(30, 5, rng);
    x.col(4) = x.col(1) * 2.0;
    const Vector y = gaussian_vector(30, rng);
    try {
        fit_ols(x, y);
        FAIL();
    } catch (const RankDeficient& e) {
        EXPECT_NE(std::string(e.what()).find("ridge"), std::string::npos);
    }
    EXPECT_THROW(fit_ols(gaussian_matrix(5, 10, rng), gaussian_vector(5, rng)), RankDeficient);
    EXPECT_NO_THROW(fit_ridge(x, y, 1.0));
}

TEST(Ridge, MatchesAugmentedDenseSolve) {
    Rng rng = make_stream(2, 0);
    const Matrix x = gaussian_matrix(50, 20, rng);
    const Vector y = gaussian_vector(50, rng) + x.col(3) * 2.0;
    for (double lambda : {0.1, 1.0, 25.0}) {
        // [1 X; 0 sqrt(lambda) I] [b; w] ~ [y; 0], intercept unpenalized.
        Eigen::MatrixXd a = Eigen::MatrixXd::Zero(50 + 20, 21);
        a.block(0, 0, 50, 1).setOnes();
        a.block(0, 1, 50, 20) = x;
        a.block(50, 1, 20, 20) = std::sqrt(lambda) * Eigen::MatrixXd::Identity(20, 20);
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(70);
        rhs.head(50) = y;
        const Eigen::VectorXd coef = a.householderQr().solve(rhs);
        const LinearModel m = fit_ridge(x, y, lambda);
        EXPECT_NEAR(m.intercept, coef(0), 1e-10);
        for (Eigen::Index j = 0; j < 20; ++j) EXPECT_NEAR(m.weights(j), coef(j + 1), 1e-10) << lambda;
    }
}

TEST(Ridge, LimitsInLambda) {
    Rng rng = make_stream(2, 1);
    const Matrix x = gaussian_matrix(40, 8, rng);
    const Vector y = gaussian_vector(40, rng).array() + 3.0;
    const LinearModel huge = fit_ridge(x, y, 1e14);
    EXPECT_LE(huge.weights.cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_NEAR(huge.intercept, y.mean(), 1e-9);
    const LinearModel zero = fit_ridge(x, y, 0.0);
    const LinearModel ols = fit_ols(x, y);
    EXPECT_LE((zero.weights - ols.weights).norm(), 1e-8);
    EXPECT_NEAR(zero.intercept, ols.intercept, 1e-8);
    EXPECT_THROW(fit_ridge(x, y, -1.0), std::invalid_argument);
}

TEST(Lasso, ZeroPenaltyIsOls) {
    Rng rng = make_stream(3, 0);
    const Matrix x = standardized(gaussian_matrix(200, 10, rng));
    const Vector y = x * gaussian_vector(10, rng) + gaussian_vector(200, rng, 0.5);
    LassoOptions o;
    o.lambda = 0.0;
    const LassoFit fit = fit_lasso(x, y, o);
    EXPECT_TRUE(fit.converged);
    const LinearModel ols = fit_ols(x, y);
    EXPECT_LE((fit.model.weights - ols.weights).cwiseAbs().maxCoeff(), 1e-5);
    EXPECT_NEAR(fit.model.intercept, ols.intercept, 1e-5);
}

TEST(Lasso, KillThresholdZeroesEverything) {
    Rng rng = make_stream(3, 1);
    const Matrix x = standardized(gaussian_matrix(100, 15, rng));
    const Vector y = x * gaussian_vector(15, rng) + gaussian_vector(100, rng);
    const Vector yc = y.array() - y.mean();
    const double lambda_max = (x.transpose() * yc).cwiseAbs().maxCoeff() / 100.0;
    LassoOptions o;
    // One part in 1e12 above the threshold absorbs rounding in the correlations.
    o.lambda = lambda_max * (1.0 + 1e-12);
    EXPECT_EQ(fit_lasso(x, y, o).model.weights.cwiseAbs().maxCoeff(), 0.0);
    o.lambda = 0.99 * lambda_max;
    EXPECT_GT(fit_lasso(x, y, o).model.weights.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Lasso, SparseTruthFixedPoint) {
    Rng rng = make_stream(3, 2);
    const Eigen::Index n = 200, p = 50;
    const Matrix x = standardized(gaussian_matrix(n, p, rng));
    Vector truth = Vector::Zero(p);
    const Eigen::Index support[] = {3, 11, 20, 34, 47};
    for (Eigen::Index j : support) truth(j) = (j % 2 ? 1.0 : -1.0) * uniform(rng, 1.0, 2.0);
    const Vector y = (x * truth).array() + 0.7 + gaussian_vector(n, rng, 0.1).array();
    LassoOptions o;
    o.lambda = 0.1;
    o.tol = 1e-10;
    o.max_sweeps = 10000;
    const LassoFit fit = fit_lasso(x, y, o);
    ASSERT_TRUE(fit.converged);
    EXPECT_LE(fit.kkt_residual, 1e-8);
    const Vector r = (y.array() - fit.model.intercept).matrix() - x * fit.model.weights;
    EXPECT_NEAR(r.mean(), 0.0, 1e-10);
    for (Eigen::Index j = 0; j < p; ++j) {
        // w_j is a fixed point of its own soft-threshold update.
        const double a = x.col(j).squaredNorm() / static_cast<double>(n);
        const double rho = x.col(j).dot(r) / static_cast<double>(n) + a * fit.model.weights(j);
        EXPECT_NEAR(fit.model.weights(j), soft(rho, o.lambda) / a, 1e-8) << j;
        const bool in_truth = truth(j) != 0.0;
        EXPECT_EQ(fit.model.weights(j) != 0.0, in_truth) << j;
    }
}

TEST(Lasso, ObjectiveNeverIncreases) {
    Rng rng = make_stream(3, 3);
    const Matrix x = standardized(gaussian_matrix(120, 30, rng));
    Matrix xc = x;
    xc.col(1) = 0.9 * x.col(0) + 0.1 * x.col(1);  // correlated columns slow convergence
    const Matrix xs = standardized(xc);
    const Vector y = xs * gaussian_vector(30, rng) + gaussian_vector(120, rng);
    LassoOptions o;
    o.lambda = 0.05;
    o.record_objective = true;
    const LassoFit fit = fit_lasso(xs, y, o);
    ASSERT_GE(fit.objective.size(), 2u);
    for (std::size_t i = 1; i < fit.objective.size(); ++i)
        EXPECT_LE(fit.objective[i], fit.objective[i - 1] + 1e-12) << i;
    EXPECT_NEAR(fit.objective.back(), lasso_objective(xs, y, fit.model, 0.05), 1e-12);
}

TEST(Cnn, OutputShapeAndCapacityMatch) {
    CnnConfig c;
    c.channels = 3;
    c.length = 128;
    CnnModel cnn(c, 1);
    Rng rng = make_stream(4, 0);
    Tensor x({5, 3, 128});
    for (double& v : x.data()) v = normal(rng, 0.0, 1.0);
    EXPECT_EQ(cnn.predict(x).shape(), (Shape{5}));

    MagnetsConfig mc;
    mc.channels = 3;
    MagnetsModel magnets(mc, 1);
    std::vector<const ad::Parameter*> enc;
    magnets.mask_generator().encoder().collect(enc);
    EXPECT_EQ(cnn.encoder_parameter_count(), parameter_count(enc));
    EXPECT_EQ(parameter_count(std::as_const(cnn).parameters()), parameter_count(enc) + 128 + 1);
}

TEST(Cnn, RejectsIndivisibleLength) {
    CnnConfig c;
    c.length = 100;
    EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(IntegratedGradients, ZeroAtBaseline) {
    Rng rng = make_stream(5, 0);
    Tensor x({2, 16});
    for (double& v : x.data()) v = normal(rng, 0.0, 1.0);
    const Tensor attr = integrated_gradients(cnn_function(CnnModel(CnnConfig{2, 16, {4, 8, 16}}, 2)), x, x, 20);
    for (double v : attr.data()) EXPECT_EQ(v, 0.0);
}

TEST(IntegratedGradients, ExactOnLinearModel) {
    Rng rng = make_stream(5, 1);
    Tensor a({3, 16}), x({3, 16}), base({3, 16});
    for (double& v : a.data()) v = normal(rng, 0.0, 1.0);
    for (double& v : x.data()) v = normal(rng, 0.0, 1.0);
    for (double& v : base.data()) v = normal(rng, 0.0, 0.3);
    const BatchFunction f = linear_function(a);
    for (std::size_t steps : {2u, 7u, 50u}) {
        const Tensor attr = integrated_gradients(f, x, base, steps, 4);
        double total = 0.0, expect = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            total += attr[i];
            expect += a[i] * (x[i] - base[i]);
            EXPECT_NEAR(attr[i], a[i] * (x[i] - base[i]), 1e-12);
        }
        EXPECT_NEAR(total, expect, 1e-10);
        EXPECT_NEAR(output_gap(f, x, base), expect, 1e-12);
    }
    EXPECT_THROW(integrated_gradients(f, x, base, 1), std::invalid_argument);
}

TEST(IntegratedGradients, TrainedCnnCompleteness) {
    const TrainedCnn& t = trained_cnn();
    const BatchFunction f = cnn_function(*t.model.cnn);
    std::size_t checked = 0;
    for (std::size_t i = 0; i < 20; ++i) {
        const Tensor x = Tensor(Shape{1, 128}, std::vector<double>(t.test.x.data().begin() + i * 128,
                                                                   t.test.x.data().begin() + (i + 1) * 128));
        const Tensor base(x.shape());
        const double gap = output_gap(f, x, base);
        auto total = [&](std::size_t steps) {
            const Tensor a = integrated_gradients(f, x, base, steps);
            double s = 0.0;
            for (double v : a.data()) s += v;
            return s;
        };
        // Relative to the gap, floored at a quarter of the unit-mean target
        // scale: the 50-step error is roughly constant in absolute terms.
        const double scale = std::max(std::abs(gap), 0.25);
        EXPECT_LE(std::abs(total(500) - gap), 0.01 * scale) << i;
        EXPECT_LE(std::abs(total(50) - gap), 0.05 * scale) << i;
        ++checked;
    }
    EXPECT_EQ(checked, 20u);
}

TEST(IntegratedGradients, GapShrinksWithSteps) {
    const TrainedCnn& t = trained_cnn();
    const BatchFunction f = cnn_function(*t.model.cnn);
    const Tensor x = Tensor(Shape{1, 128}, std::vector<double>(t.test.x.data().begin(), t.test.x.data().begin() + 128));
    const Tensor base(x.shape());
    const double gap = output_gap(f, x, base);
    double previous = INFINITY;
    for (std::size_t steps = 10; steps <= 320; steps *= 2) {
        const Tensor a = integrated_gradients(f, x, base, steps);
        double s = 0.0;
        for (double v : a.data()) s += v;
        const double err = std::abs(s - gap);
        // Right-endpoint sums converge as O(1/steps); allow a little slack.
        EXPECT_LE(err, previous * 1.05 + 1e-9) << steps;
        previous = err;
    }
}

TEST(IntegratedGradients, CsvExport) {
    const std::string csv = attribution_csv({{4, 0, 7, -0.5, 1.0}, {4, 1, 2, 0.25, 0.5}});
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "sample_id,channel,time,attribution,attribution_normalized");
    EXPECT_NE(csv.find("\n4,0,7,"), std::string::npos);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}
