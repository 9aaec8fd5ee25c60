#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "magnets/autodiff.hpp"
#include "magnets/random.hpp"
#include "magnets/regressor.hpp"
#include "magnets/unet.hpp"

namespace magnets {

// ---- linear baselines -------------------------------------------------------
// Inputs are flattened standardized series [n, C*T]; targets use the same
// scaling as every other model.

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// [N,C,T] tensor viewed as an [N, C*T] matrix (copy).
Matrix flatten(const Tensor& x);

struct MeanModel {
    double mean = 0.0;
    static MeanModel fit(const std::vector<double>& y);
    std::vector<double> predict(std::size_t n) const { return std::vector<double>(n, mean); }
};

enum class Regularization { None, Ridge, Lasso };
std::string to_string(Regularization r);

struct LinearModel {
    Vector weights;
    double intercept = 0.0;
    Regularization regularization = Regularization::None;
    double lambda = 0.0;

    std::vector<double> predict(const Matrix& x) const;
};

class RankDeficient : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Least squares with an intercept via column-pivoting QR. Throws RankDeficient
// when the design is singular.
LinearModel fit_ols(const Matrix& x, const Vector& y);

// Minimizes ||y - b - Xw||^2 + lambda ||w||^2, intercept unpenalized.
LinearModel fit_ridge(const Matrix& x, const Vector& y, double lambda = 1.0);

struct LassoOptions {
    double lambda = 1.0;
    double tol = 1e-6;            // max absolute coefficient change per sweep
    std::size_t max_sweeps = 1000;
    bool record_objective = false;
};

struct LassoFit {
    LinearModel model;
    bool converged = false;
    std::size_t sweeps = 0;
    // max_j |x_j'r/n - lambda*sign(w_j)| over the support, and excess of
    // |x_j'r/n| over lambda off it; 0 at an exact optimum.
    double kkt_residual = 0.0;
    std::vector<double> objective;  // after each sweep, when recorded
};

// (1/2n)||y - b - Xw||^2 + lambda ||w||_1 by cyclic coordinate descent with
// soft-thresholding; intercept unpenalized.
LassoFit fit_lasso(const Matrix& x, const Vector& y, const LassoOptions& opts = {});
double lasso_objective(const Matrix& x, const Vector& y, const LinearModel& m, double lambda);

// ---- CNN baseline -------------------------------------------------------------

struct CnnConfig {
    std::size_t channels = 1;
    std::size_t length = 128;
    std::vector<std::size_t> widths{32, 64, 128};

    // length must be divisible by 2^depth.
    void validate() const;
};

// Encoder shaped like the mask generator's, global average pooling over time
// and a linear head.
class CnnModel : public GradientModel {
public:
    CnnModel(CnnConfig config, std::uint64_t seed);

    const CnnConfig& config() const noexcept { return config_; }

    // Differentiable forward on a (possibly input-gradient) variable [B,C,T].
    ad::Var forward(ad::Tape& tape, ad::Var x) const;

    std::vector<ad::Parameter*> parameters() override;
    std::vector<const ad::Parameter*> parameters() const override;
    LossBreakdown training_loss(ad::Tape& tape, const Tensor& x, const Tensor& y, Rng& rng) const override;
    Tensor predict(const Tensor& x) const override;

    std::size_t encoder_parameter_count() const;

private:
    CnnConfig config_;
    ConvEncoder encoder_;
    ad::Parameter head_weight_;  // [W,1]
    ad::Parameter head_bias_;    // [1]
};

// ---- Integrated Gradients -----------------------------------------------------

// Maps a batch [B,C,T] to outputs [B]; samples must not interact.
using BatchFunction = std::function<ad::Var(ad::Tape&, ad::Var)>;

// (x - baseline) * (1/steps) * sum_{i=1..steps} grad f(baseline + (i/steps)(x - baseline))
// for one sample [C,T]. Path points are evaluated in batches of at most
// `batch` samples.
Tensor integrated_gradients(const BatchFunction& f, const Tensor& x, const Tensor& baseline, std::size_t steps = 50,
                            std::size_t batch = 64);

// f(x) - f(baseline) for one sample, for completeness checks.
double output_gap(const BatchFunction& f, const Tensor& x, const Tensor& baseline);

struct AttributionRow {
    std::size_t sample = 0;
    std::size_t channel = 0;
    std::size_t time = 0;
    double attribution = 0.0;
    double normalized = 0.0;
};
// CSV with header sample_id,channel,time,attribution,attribution_normalized.
std::string attribution_csv(const std::vector<AttributionRow>& rows);

}  // namespace magnets
