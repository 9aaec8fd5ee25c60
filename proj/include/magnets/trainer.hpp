#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "magnets/data.hpp"
#include "magnets/regressor.hpp"

namespace magnets {

// Per-channel input standardization and unit-mean target scaling, fitted on
// the training split.
struct Standardizer {
    std::vector<double> mean;
    std::vector<double> sd;
    double y_mean = 1.0;

    static Standardizer fit(const TimeSeriesDataset& train);

    std::size_t channels() const noexcept { return mean.size(); }
    Tensor transform(const Tensor& x) const;  // [N,C,T] or [C,T]
    Tensor inverse(const Tensor& x) const;
    double scale_target(double y) const { return y / y_mean; }
    double unscale_target(double y) const { return y * y_mean; }
};

// Standardized copy of a split.
struct PreparedData {
    Tensor x;                   // [n,C,T], standardized
    std::vector<double> y;      // scaled
    std::vector<double> y_raw;
    std::size_t size() const noexcept { return y.size(); }
};
PreparedData prepare(const TimeSeriesDataset& ds, const Standardizer& st);

struct TrainConfig {
    std::size_t epochs = 100;
    std::size_t batch = 8;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t seed = 0;
    bool shuffle = true;
    // When false wall_ms is logged as 0 so RunLogs compare byte for byte.
    bool timing = true;

    void validate() const;
};

// 0.5 * lr0 * (1 + cos(pi * t / t_max)), never negative.
double cosine_lr(std::size_t t, std::size_t t_max, double lr0);

class Adam {
public:
    Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    // Throws TrainingDiverged on a non-finite gradient entry.
    void step(const std::vector<ad::Parameter*>& params, const std::vector<Tensor>& grads, double lr);
    std::uint64_t steps() const noexcept { return t_; }

private:
    double beta1_, beta2_, eps_;
    std::uint64_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double train_mse = 0.0;
    double spars = 0.0;
    double ortho = 0.0;
    double test_rmse_raw = 0.0;
    double test_r2 = 0.0;
    double wall_ms = 0.0;
};

std::string to_jsonl(const std::vector<EpochRecord>& log);

struct TrainResult {
    std::vector<EpochRecord> log;
};

// Deterministic inference over a whole split in chunks; returns scaled predictions.
std::vector<double> predict_all(const GradientModel& model, const Tensor& x, std::size_t chunk = 64);

using EpochCallback = std::function<void(const EpochRecord&)>;

// Mini-batch Adam with a per-epoch cosine schedule. test may be null. On a
// non-finite loss the parameters of the last finished epoch are restored
// before TrainingDiverged is thrown.
TrainResult train(GradientModel& model, const PreparedData& train_set, const PreparedData* test_set,
                  const Standardizer& st, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

}  // namespace magnets
