#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "magnets/model.hpp"
#include "magnets/tensor.hpp"

namespace magnets {

double rmse(std::span<const double> y, std::span<const double> y_hat);
// 1 - SS_res / SS_tot; throws on fewer than 2 values or zero variance.
double r2(std::span<const double> y, std::span<const double> y_hat);

// [C,T] -> [T], per-step maximum over channels.
std::vector<double> pool_channels(const Tensor& scores);
// |attr| / max|attr| per sample; all-zero stays zero.
Tensor normalize_attribution(const Tensor& attr);

enum class MaskPool { Weighted, Union };
std::string to_string(MaskPool pool);
MaskPool parse_mask_pool(const std::string& s);

// [C,T] relevance from an eval-mode explanation. Weighted: each mask scored by
// its end-to-end weight relative to the largest one. Union: any mask whose
// weight is not negligible counts fully.
Tensor magnets_mask_to_score(const Explanation& e, MaskPool pool = MaskPool::Weighted);

// Mann-Whitney AUC, ties count 1/2. Empty when gt is all 0 or all 1.
std::optional<double> explanation_auc(std::span<const double> score, std::span<const std::uint8_t> gt);
double explanation_f1(std::span<const double> score, std::span<const std::uint8_t> gt, double threshold = 0.5);

struct ExplanationScore {
    double auc_mean = 0.0;
    double f1_mean = 0.0;
    std::size_t n_evaluated = 0;  // samples with non-empty pooled gt
    std::size_t n_skipped = 0;
    std::size_t n_auc = 0;        // evaluated samples whose gt admits an AUC
};

// Accumulates per-sample scores; samples with empty pooled gt are skipped.
class ExplanationAccumulator {
public:
    void add(const std::vector<double>& pooled_score, const std::vector<std::uint8_t>& pooled_gt);
    ExplanationScore result() const;

private:
    double auc_sum_ = 0.0;
    double f1_sum_ = 0.0;
    std::size_t evaluated_ = 0;
    std::size_t skipped_ = 0;
    std::size_t auc_count_ = 0;
};

// Per-step maximum of a [C,T] binary mask.
std::vector<std::uint8_t> pool_gt(const std::uint8_t* gt, std::size_t c, std::size_t t);

struct MetricsReport {
    std::string dataset;
    std::string model;
    double lambda_spars = 0.0;
    double lambda_ortho = 0.0;
    double rmse_raw = 0.0;
    double r2 = 0.0;
    std::optional<ExplanationScore> explanation;
    std::uint64_t seed = 0;
    double wall_ms = 0.0;

    std::string to_json() const;
};

}  // namespace magnets
