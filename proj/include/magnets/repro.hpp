#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "magnets/data.hpp"
#include "magnets/metrics.hpp"
#include "magnets/pipeline.hpp"

namespace magnets {

// Reference numbers printed next to the desk-scale results.
struct ReferenceRow {
    std::string model;  // magnets | cnn | mean | ols | cnn+ig
    DatasetKind dataset;
    std::optional<double> r2;
    std::optional<double> auc;
    std::optional<double> f1;
};
const std::vector<ReferenceRow>& published_reference();

struct ReproConfig {
    std::vector<DatasetKind> datasets{DatasetKind::Univariate, DatasetKind::Bivariate, DatasetKind::Trivariate1,
                                      DatasetKind::Trivariate2};
    std::vector<std::uint64_t> seeds{1, 2, 3};
    double scale = 0.1;
    std::size_t epochs = 50;
    // Unregularized MAGNETS runs for the regularizer comparison (first seed only).
    std::vector<DatasetKind> lambda0_datasets{DatasetKind::Univariate};
    bool timing = true;
};

struct ReproRun {
    DatasetKind dataset;
    std::string model;  // magnets | magnets-l0 | cnn | mean | ols
    std::uint64_t seed = 0;
    MetricsReport report;
    // MAGNETS only: share of |beta| entries below 1e-3 and the final
    // orthogonality loss.
    double beta_small_fraction = 0.0;
    double ortho_loss = 0.0;
    double concept_dominance = 0.0;  // best top/second |beta| ratio over concepts
};

struct ReproResult {
    std::vector<ReproRun> runs;
    double wall_seconds = 0.0;

    std::vector<const ReproRun*> select(DatasetKind d, const std::string& model) const;
    // Mean of a field over seeds; empty if no run matches.
    std::optional<double> mean_r2(DatasetKind d, const std::string& model) const;
    std::optional<double> mean_auc(DatasetKind d, const std::string& model) const;
    std::optional<double> mean_f1(DatasetKind d, const std::string& model) const;

    std::string table() const;  // human-readable comparison against published_reference()
    std::string to_json() const;
};

using ReproProgress = std::function<void(const std::string&)>;

ReproResult run_repro(const ReproConfig& cfg, const ReproProgress& progress = {});

// Fraction of |beta| entries below tol, orthogonality loss and the best
// per-concept ratio of largest to second-largest |beta|.
double beta_small_fraction(const MagnetsModel& m, double tol = 1e-3);
double orthogonality_value(const MagnetsModel& m);
double concept_dominance(const MagnetsModel& m);

}  // namespace magnets
