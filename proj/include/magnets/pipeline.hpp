#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "magnets/baselines.hpp"
#include "magnets/checkpoint.hpp"
#include "magnets/data.hpp"
#include "magnets/metrics.hpp"
#include "magnets/model.hpp"
#include "magnets/trainer.hpp"

namespace magnets {

enum class ModelKind { Magnets, Cnn, Mean, Ols, Ridge, Lasso };
std::string to_string(ModelKind k);
ModelKind parse_model_kind(const std::string& s);

// Scale on which MAGNETS sums masked inputs.
enum class AggregationScale { Raw, Standardized };
std::string to_string(AggregationScale a);
AggregationScale parse_aggregation_scale(const std::string& s);

struct RunSpec {
    ModelKind model = ModelKind::Magnets;
    std::size_t masks = 10;
    std::size_t concepts = 3;
    double tau = 1.0;
    double lambda_spars = 1.0;
    double lambda_ortho = 1.0;
    NoiseKind noise = NoiseKind::Logistic;
    std::vector<std::size_t> widths{32, 64, 128};
    AggregationScale aggregate = AggregationScale::Raw;
    TrainConfig train;
    double ridge_lambda = 1.0;
    double lasso_lambda = 1.0;
    MaskPool mask_pool = MaskPool::Weighted;
    std::size_t ig_steps = 50;
};

// Hyperparameters used for the 5 000 / 1 000 sample reproduction runs.
RunSpec desk_scale_spec(ModelKind model, std::uint64_t seed);

struct FittedModel {
    ModelKind kind = ModelKind::Mean;
    Standardizer standardizer;
    std::unique_ptr<MagnetsModel> magnets;
    std::unique_ptr<CnnModel> cnn;
    std::optional<MeanModel> mean;
    std::optional<LinearModel> linear;
    std::optional<LassoFit> lasso;  // convergence diagnostics of a lasso fit
    std::vector<EpochRecord> log;   // gradient models only
};

// Fits on train; test (optional) is only used for per-epoch logging.
FittedModel fit_model(const RunSpec& spec, const TimeSeriesDataset& train, const TimeSeriesDataset* test,
                      const EpochCallback& on_epoch = {});

// Raw-scale predictions for a whole split.
std::vector<double> predict_raw(const FittedModel& m, const TimeSeriesDataset& ds);

// Signed IG attribution [C,T] of the CNN for one standardized sample.
Tensor cnn_attribution(const CnnModel& cnn, const Tensor& x, std::size_t steps);

// Pooled per-step relevance for sample i of a prepared split; empty for models
// that offer no explanation.
std::vector<double> relevance(const FittedModel& m, const Tensor& x_std, std::size_t i, const RunSpec& spec);

// Regression metrics always; explanation metrics when the split has gt masks
// and the model explains (MAGNETS masks, CNN via Integrated Gradients).
MetricsReport evaluate(const FittedModel& m, const TimeSeriesDataset& test, const RunSpec& spec);

Checkpoint to_checkpoint(const FittedModel& m, const RunSpec& spec);
FittedModel from_checkpoint(const Checkpoint& ck);
// The evaluation-relevant RunSpec fields stored in a checkpoint.
RunSpec spec_from_checkpoint(const Checkpoint& ck);

}  // namespace magnets
