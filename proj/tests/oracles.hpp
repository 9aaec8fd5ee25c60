#pragma once

// Reference computations written independently of the library, shared by the
// unit tests and the acceptance binary.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <vector>

#include "magnets/data.hpp"

namespace oracle {

struct RuleResult {
    double y = 0.0;
    std::vector<std::uint8_t> gt;  // [c,t]
};

inline double indicator_dot(const std::vector<double>& v, const std::vector<bool>& on) {
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) s += on[i] ? v[i] : 0.0;
    return s;
}

// Target and relevance of one sample from the dataset definitions, channel by
// channel: row k of `ch` is channel k+1.
inline RuleResult rule(magnets::DatasetKind kind, const std::vector<std::vector<double>>& ch,
                       double a = 1.0, double b = 5.0, double c = -2.0) {
    const std::size_t t = ch[0].size();
    RuleResult r;
    auto greater = [t](const std::vector<double>& p, const std::vector<double>& q) {
        std::vector<bool> out(t);
        for (std::size_t i = 0; i < t; ++i) out[i] = p[i] > q[i];
        return out;
    };
    auto above = [t](const std::vector<double>& p, double level) {
        std::vector<bool> out(t);
        for (std::size_t i = 0; i < t; ++i) out[i] = p[i] > level;
        return out;
    };
    std::vector<bool> relevant;
    switch (kind) {
        case magnets::DatasetKind::Univariate:
            relevant = above(ch[0], 0.5);
            r.y = indicator_dot(ch[0], relevant);
            break;
        case magnets::DatasetKind::Bivariate:
            relevant = above(ch[1], 0.5);
            r.y = indicator_dot(ch[0], relevant);
            break;
        case magnets::DatasetKind::Trivariate1:
            relevant = greater(ch[1], ch[2]);
            r.y = indicator_dot(ch[0], relevant);
            break;
        case magnets::DatasetKind::Trivariate2: {
            const auto c1 = greater(ch[1], ch[2]), c2 = greater(ch[2], ch[0]), c3 = greater(ch[0], ch[1]);
            r.y = a * indicator_dot(ch[0], c1) + b * indicator_dot(ch[1], c2) + c * indicator_dot(ch[2], c3);
            relevant.resize(t);
            for (std::size_t i = 0; i < t; ++i) relevant[i] = c1[i] || c2[i] || c3[i];
            break;
        }
    }
    for (std::size_t k = 0; k < ch.size(); ++k)
        for (std::size_t i = 0; i < t; ++i) r.gt.push_back(relevant[i] ? 1 : 0);
    return r;
}

inline std::vector<std::vector<double>> channels_of(const magnets::TimeSeriesDataset& ds, std::size_t i) {
    std::vector<std::vector<double>> ch(ds.c, std::vector<double>(ds.t));
    for (std::size_t k = 0; k < ds.c; ++k)
        for (std::size_t s = 0; s < ds.t; ++s) ch[k][s] = ds.x[(i * ds.c + k) * ds.t + s];
    return ch;
}

// Bitwise reflected CRC-32 (polynomial 0xEDB88320).
inline std::uint32_t crc32(const std::uint8_t* p, std::size_t n) {
    std::uint32_t crc = 0xFFFFFFFFu;
    for (std::size_t i = 0; i < n; ++i) {
        crc ^= p[i];
        for (int k = 0; k < 8; ++k) crc = (crc >> 1) ^ (0xEDB88320u & (0u - (crc & 1u)));
    }
    return ~crc;
}

inline std::uint32_t le_u32(const std::vector<std::uint8_t>& b, std::size_t at) {
    return static_cast<std::uint32_t>(b[at]) | static_cast<std::uint32_t>(b[at + 1]) << 8 |
           static_cast<std::uint32_t>(b[at + 2]) << 16 | static_cast<std::uint32_t>(b[at + 3]) << 24;
}

// Mann-Whitney AUC by explicit comparison of every positive/negative pair.
inline double pairwise_auc(const std::vector<double>& score, const std::vector<std::uint8_t>& gt) {
    double credit = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < score.size(); ++i) {
        if (!gt[i]) continue;
        for (std::size_t j = 0; j < score.size(); ++j) {
            if (gt[j]) continue;
            pairs += 1.0;
            credit += score[i] > score[j] ? 1.0 : (score[i] == score[j] ? 0.5 : 0.0);
        }
    }
    return credit / pairs;
}

}  // namespace oracle
