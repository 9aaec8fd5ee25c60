#include "magnets/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace magnets {

double rmse(std::span<const double> y, std::span<const double> y_hat) {
    if (y.size() != y_hat.size()) throw std::invalid_argument("rmse: length mismatch");
    if (y.empty()) throw std::invalid_argument("rmse: empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - y_hat[i]) * (y[i] - y_hat[i]);
    return std::sqrt(s / static_cast<double>(y.size()));
}

double r2(std::span<const double> y, std::span<const double> y_hat) {
    if (y.size() != y_hat.size()) throw std::invalid_argument("r2: length mismatch");
    if (y.size() < 2) throw std::invalid_argument("r2: needs at least two values");
    const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        ss_res += (y[i] - y_hat[i]) * (y[i] - y_hat[i]);
        ss_tot += (y[i] - mean) * (y[i] - mean);
    }
    if (ss_tot == 0.0) throw std::invalid_argument("r2: targets have zero variance");
    return 1.0 - ss_res / ss_tot;
}

std::vector<double> pool_channels(const Tensor& scores) {
    if (scores.rank() != 2) throw ShapeError("pool_channels: expected [C,T], got " + shape_str(scores.shape()));
    const std::size_t C = scores.dim(0), T = scores.dim(1);
    std::vector<double> out(scores.raw(), scores.raw() + T);
    for (std::size_t c = 1; c < C; ++c)
        for (std::size_t t = 0; t < T; ++t) out[t] = std::max(out[t], scores[c * T + t]);
    return out;
}

Tensor normalize_attribution(const Tensor& attr) {
    double peak = 0.0;
    for (double v : attr.data()) {
        if (!std::isfinite(v)) throw std::invalid_argument("normalize_attribution: non-finite attribution");
        peak = std::max(peak, std::abs(v));
    }
    Tensor out(attr.shape());
    if (peak == 0.0) return out;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(attr[i] / peak);
    return out;
}

std::string to_string(MaskPool pool) { return pool == MaskPool::Weighted ? "weighted" : "union"; }

MaskPool parse_mask_pool(const std::string& s) {
    if (s == "weighted") return MaskPool::Weighted;
    if (s == "union") return MaskPool::Union;
    throw std::invalid_argument("unknown mask pool '" + s + "' (expected weighted or union)");
}

Tensor magnets_mask_to_score(const Explanation& e, MaskPool pool) {
    const std::size_t C = e.masks.dim(0), M = e.masks.dim(1), T = e.masks.dim(2);
    std::vector<double> w(C * M);
    double peak = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] = std::abs(e.feature_weights[i]);
        peak = std::max(peak, w[i]);
    }
    Tensor score(Shape{C, T});
    if (peak == 0.0) return score;
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t m = 0; m < M; ++m) {
            const double wm = w[c * M + m];
            if (wm < 1e-6 * peak) continue;
            const double s = pool == MaskPool::Weighted ? wm / peak : 1.0;
            const double* mask = e.masks.raw() + (c * M + m) * T;
            for (std::size_t t = 0; t < T; ++t)
                if (mask[t] > 0.0) score[c * T + t] = std::max(score[c * T + t], s);
        }
    return score;
}

std::optional<double> explanation_auc(std::span<const double> score, std::span<const std::uint8_t> gt) {
    if (score.size() != gt.size()) throw std::invalid_argument("explanation_auc: length mismatch");
    std::vector<std::size_t> order(score.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] < score[b]; });
    double pos = 0.0, neg = 0.0, wins = 0.0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        double p = 0.0, q = 0.0;
        while (j < order.size() && score[order[j]] == score[order[i]]) {
            (gt[order[j]] ? p : q) += 1.0;
            ++j;
        }
        wins += p * neg + 0.5 * p * q;
        pos += p;
        neg += q;
        i = j;
    }
    if (pos == 0.0 || neg == 0.0) return std::nullopt;
    return wins / (pos * neg);
}

double explanation_f1(std::span<const double> score, std::span<const std::uint8_t> gt, double threshold) {
    if (score.size() != gt.size()) throw std::invalid_argument("explanation_f1: length mismatch");
    double tp = 0.0, fp = 0.0, fn = 0.0;
    for (std::size_t i = 0; i < score.size(); ++i) {
        const bool pred = score[i] > threshold;
        if (pred && gt[i]) tp += 1.0;
        else if (pred) fp += 1.0;
        else if (gt[i]) fn += 1.0;
    }
    const double predicted = tp + fp, actual = tp + fn;
    if (predicted == 0.0) return actual == 0.0 ? 1.0 : 0.0;
    return 2.0 * tp / (2.0 * tp + fp + fn);
}

std::vector<std::uint8_t> pool_gt(const std::uint8_t* gt, std::size_t c, std::size_t t) {
    std::vector<std::uint8_t> out(gt, gt + t);
    for (std::size_t ch = 1; ch < c; ++ch)
        for (std::size_t s = 0; s < t; ++s) out[s] = out[s] | gt[ch * t + s];
    return out;
}

void ExplanationAccumulator::add(const std::vector<double>& pooled_score, const std::vector<std::uint8_t>& pooled_gt) {
    if (std::none_of(pooled_gt.begin(), pooled_gt.end(), [](std::uint8_t g) { return g != 0; })) {
        ++skipped_;
        return;
    }
    ++evaluated_;
    f1_sum_ += explanation_f1(pooled_score, pooled_gt);
    if (auto auc = explanation_auc(pooled_score, pooled_gt)) {
        auc_sum_ += *auc;
        ++auc_count_;
    }
}

ExplanationScore ExplanationAccumulator::result() const {
    ExplanationScore s;
    s.n_evaluated = evaluated_;
    s.n_skipped = skipped_;
    s.n_auc = auc_count_;
    s.f1_mean = evaluated_ ? f1_sum_ / static_cast<double>(evaluated_) : 0.0;
    s.auc_mean = auc_count_ ? auc_sum_ / static_cast<double>(auc_count_) : 0.0;
    return s;
}

std::string MetricsReport::to_json() const {
    nlohmann::ordered_json j;
    j["dataset"] = dataset;
    j["model"] = model;
    j["lambda_spars"] = lambda_spars;
    j["lambda_ortho"] = lambda_ortho;
    j["rmse_raw"] = rmse_raw;
    j["r2"] = r2;
    if (explanation) {
        j["expl_auc_mean"] = explanation->n_auc ? nlohmann::ordered_json(explanation->auc_mean) : nullptr;
        j["expl_f1_mean"] = explanation->f1_mean;
        j["n_evaluated"] = explanation->n_evaluated;
        j["n_skipped"] = explanation->n_skipped;
    }
    j["seed"] = seed;
    j["wall_ms"] = wall_ms;
    return j.dump(2);
}

}  // namespace magnets
