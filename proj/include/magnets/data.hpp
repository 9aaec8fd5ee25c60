#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "magnets/random.hpp"
#include "magnets/tensor.hpp"

namespace magnets {

enum class DatasetKind { Univariate, Bivariate, Trivariate1, Trivariate2 };
enum class Split : std::uint32_t { Train = 0, Test = 1 };

std::string to_string(DatasetKind kind);
DatasetKind parse_dataset_kind(const std::string& s);
std::size_t channel_count(DatasetKind kind);
std::string to_string(Split split);

struct TimeSeriesDataset {
    std::string name;
    Split split = Split::Train;
    std::size_t n = 0;
    std::size_t c = 0;
    std::size_t t = 0;
    Tensor x;                                 // [n,c,t]
    std::vector<double> y;                    // [n]
    std::optional<std::vector<std::uint8_t>> gt_mask;  // [n,c,t]

    bool has_gt() const noexcept { return gt_mask.has_value(); }
    // Sample i as [1,c,t] or a contiguous range as [count,c,t].
    Tensor slice(std::size_t first, std::size_t count) const;
    Tensor sample(std::size_t i) const;  // [c,t]
    Tensor gather(const std::vector<std::size_t>& idx) const;
};

struct GeneratorConfig {
    std::uint64_t seed = 0;
    std::size_t n_train = 50000;
    std::size_t n_test = 10000;
    std::size_t t = 128;
    std::size_t bumps = 4;
    double amplitude_lo = 0.3;
    double amplitude_hi = 1.0;
    // Bump widths as fractions of t.
    double width_lo = 1.0 / 32.0;
    double width_hi = 1.0 / 8.0;
    std::array<double, 3> trivariate2_coeffs{1.0, 5.0, -2.0};

    void validate() const;
};

struct Bump {
    double center;
    double width;
    double amplitude;
};

// Sum of Gaussian bumps evaluated at t = 0..len-1, clipped below at 0.
std::vector<double> render_bumps(const std::vector<Bump>& bumps, std::size_t len);
std::vector<double> generate_signal(Rng& rng, const GeneratorConfig& cfg);

// Target and ground-truth rule for one sample x [c,t]; gt is [c,t].
double target_rule(DatasetKind kind, const double* x, std::size_t t, const std::array<double, 3>& coeffs,
                   std::uint8_t* gt = nullptr);

TimeSeriesDataset make_dataset(DatasetKind kind, const GeneratorConfig& cfg, Split split);
TimeSeriesDataset make_univariate(const GeneratorConfig& cfg, Split split = Split::Train);
TimeSeriesDataset make_bivariate(const GeneratorConfig& cfg, Split split = Split::Train);
TimeSeriesDataset make_trivariate1(const GeneratorConfig& cfg, Split split = Split::Train);
TimeSeriesDataset make_trivariate2(const GeneratorConfig& cfg, Split split = Split::Train);

enum class DatasetError { Io, BadMagic, VersionMismatch, Truncated, Checksum, Malformed };

class DatasetFormatError : public std::runtime_error {
public:
    DatasetFormatError(DatasetError code, const std::string& what) : std::runtime_error(what), code_(code) {}
    DatasetError code() const noexcept { return code_; }

private:
    DatasetError code_;
};

std::vector<std::uint8_t> serialize_dataset(const TimeSeriesDataset& ds);
TimeSeriesDataset deserialize_dataset(const std::vector<std::uint8_t>& bytes);
void save_dataset(const TimeSeriesDataset& ds, const std::string& path);
TimeSeriesDataset load_dataset(const std::string& path);

}  // namespace magnets
