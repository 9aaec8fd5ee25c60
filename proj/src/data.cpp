#include "magnets/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "magnets/binio.hpp"

namespace magnets {

namespace {

constexpr char kMagic[4] = {'M', 'G', 'T', 'S'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kFlagGt = 1u;
constexpr std::uint64_t kSampleStream = 0x5e21e5;

}  // namespace

std::string to_string(DatasetKind kind) {
    switch (kind) {
        case DatasetKind::Univariate: return "univariate";
        case DatasetKind::Bivariate: return "bivariate";
        case DatasetKind::Trivariate1: return "trivariate1";
        case DatasetKind::Trivariate2: return "trivariate2";
    }
    return "?";
}

DatasetKind parse_dataset_kind(const std::string& s) {
    for (DatasetKind k : {DatasetKind::Univariate, DatasetKind::Bivariate, DatasetKind::Trivariate1,
                          DatasetKind::Trivariate2})
        if (s == to_string(k)) return k;
    throw std::invalid_argument("unknown dataset '" + s +
                                "' (expected univariate, bivariate, trivariate1 or trivariate2)");
}

std::size_t channel_count(DatasetKind kind) {
    switch (kind) {
        case DatasetKind::Univariate: return 1;
        case DatasetKind::Bivariate: return 2;
        default: return 3;
    }
}

std::string to_string(Split split) { return split == Split::Train ? "train" : "test"; }

Tensor TimeSeriesDataset::slice(std::size_t first, std::size_t count) const {
    if (first + count > n) throw std::out_of_range("dataset slice out of range");
    const std::size_t stride = c * t;
    std::vector<double> out(x.raw() + first * stride, x.raw() + (first + count) * stride);
    return Tensor(Shape{count, c, t}, std::move(out));
}

Tensor TimeSeriesDataset::sample(std::size_t i) const { return slice(i, 1).reshaped({c, t}); }

Tensor TimeSeriesDataset::gather(const std::vector<std::size_t>& idx) const {
    const std::size_t stride = c * t;
    Tensor out(Shape{idx.size(), c, t});
    for (std::size_t k = 0; k < idx.size(); ++k) {
        if (idx[k] >= n) throw std::out_of_range("dataset index out of range");
        std::copy_n(x.raw() + idx[k] * stride, stride, out.raw() + k * stride);
    }
    return out;
}

void GeneratorConfig::validate() const {
    if (t < 16) throw std::invalid_argument("series length must be at least 16");
    if (!(amplitude_lo > 0.0 && amplitude_lo <= amplitude_hi && amplitude_hi <= 1.2))
        throw std::invalid_argument("amplitude range must lie within (0, 1.2]");
    if (!(width_lo > 0.0 && width_lo <= width_hi)) throw std::invalid_argument("width range must be positive");
}

std::vector<double> render_bumps(const std::vector<Bump>& bumps, std::size_t len) {
    std::vector<double> s(len, 0.0);
    for (const Bump& b : bumps) {
        const double inv = 1.0 / (2.0 * b.width * b.width);
        for (std::size_t i = 0; i < len; ++i) {
            const double d = static_cast<double>(i) - b.center;
            s[i] += b.amplitude * std::exp(-d * d * inv);
        }
    }
    for (double& v : s) v = std::max(v, 0.0);
    return s;
}

std::vector<double> generate_signal(Rng& rng, const GeneratorConfig& cfg) {
    const double len = static_cast<double>(cfg.t);
    std::vector<Bump> bumps(cfg.bumps);
    for (Bump& b : bumps) {
        b.center = uniform(rng, 0.0, len);
        b.width = uniform(rng, cfg.width_lo * len, cfg.width_hi * len);
        b.amplitude = uniform(rng, cfg.amplitude_lo, cfg.amplitude_hi);
    }
    return render_bumps(bumps, cfg.t);
}

double target_rule(DatasetKind kind, const double* x, std::size_t t, const std::array<double, 3>& coeffs,
                   std::uint8_t* gt) {
    double y = 0.0;
    switch (kind) {
        case DatasetKind::Univariate:
            for (std::size_t s = 0; s < t; ++s) {
                const bool on = x[s] > 0.5;
                if (on) y += x[s];
                if (gt) gt[s] = on;
            }
            break;
        case DatasetKind::Bivariate: {
            const double* x1 = x;
            const double* x2 = x + t;
            for (std::size_t s = 0; s < t; ++s) {
                const bool on = x2[s] > 0.5;
                if (on) y += x1[s];
                if (gt) gt[s] = gt[t + s] = on;
            }
            break;
        }
        case DatasetKind::Trivariate1: {
            const double* x1 = x;
            const double* x2 = x + t;
            const double* x3 = x + 2 * t;
            for (std::size_t s = 0; s < t; ++s) {
                const bool on = x2[s] > x3[s];
                if (on) y += x1[s];
                if (gt) gt[s] = gt[t + s] = gt[2 * t + s] = on;
            }
            break;
        }
        case DatasetKind::Trivariate2: {
            const double* x1 = x;
            const double* x2 = x + t;
            const double* x3 = x + 2 * t;
            double a = 0.0, b = 0.0, c = 0.0;
            for (std::size_t s = 0; s < t; ++s) {
                const bool c1 = x2[s] > x3[s];
                const bool c2 = x3[s] > x1[s];
                const bool c3 = x1[s] > x2[s];
                if (c1) a += x1[s];
                if (c2) b += x2[s];
                if (c3) c += x3[s];
                // Every channel takes part in all three terms, as value or as condition.
                if (gt) gt[s] = gt[t + s] = gt[2 * t + s] = c1 || c2 || c3;
            }
            y = coeffs[0] * a + coeffs[1] * b + coeffs[2] * c;
            break;
        }
    }
    return y;
}

TimeSeriesDataset make_dataset(DatasetKind kind, const GeneratorConfig& cfg, Split split) {
    cfg.validate();
    TimeSeriesDataset ds;
    ds.name = to_string(kind);
    ds.split = split;
    ds.n = split == Split::Train ? cfg.n_train : cfg.n_test;
    ds.c = channel_count(kind);
    ds.t = cfg.t;
    ds.x = Tensor(Shape{ds.n, ds.c, ds.t});
    ds.y.assign(ds.n, 0.0);
    ds.gt_mask.emplace(ds.n * ds.c * ds.t, 0);
    const std::size_t stride = ds.c * ds.t;
    for (std::size_t i = 0; i < ds.n; ++i) {
        Rng rng = make_stream(cfg.seed, kSampleStream + static_cast<std::uint64_t>(split), i);
        double* xi = ds.x.raw() + i * stride;
        for (std::size_t ch = 0; ch < ds.c; ++ch) {
            const std::vector<double> s = generate_signal(rng, cfg);
            // Held at f32 precision so the stored file reproduces x exactly.
            for (std::size_t k = 0; k < ds.t; ++k) xi[ch * ds.t + k] = static_cast<double>(static_cast<float>(s[k]));
        }
        ds.y[i] = target_rule(kind, xi, ds.t, cfg.trivariate2_coeffs, ds.gt_mask->data() + i * stride);
    }
    return ds;
}

TimeSeriesDataset make_univariate(const GeneratorConfig& cfg, Split split) {
    return make_dataset(DatasetKind::Univariate, cfg, split);
}
TimeSeriesDataset make_bivariate(const GeneratorConfig& cfg, Split split) {
    return make_dataset(DatasetKind::Bivariate, cfg, split);
}
TimeSeriesDataset make_trivariate1(const GeneratorConfig& cfg, Split split) {
    return make_dataset(DatasetKind::Trivariate1, cfg, split);
}
TimeSeriesDataset make_trivariate2(const GeneratorConfig& cfg, Split split) {
    return make_dataset(DatasetKind::Trivariate2, cfg, split);
}

// ---- MGTS file format -----------------------------------------------------

std::vector<std::uint8_t> serialize_dataset(const TimeSeriesDataset& ds) {
    if (ds.x.size() != ds.n * ds.c * ds.t || ds.y.size() != ds.n)
        throw std::invalid_argument("dataset arrays do not match its n/c/t");
    if (ds.gt_mask && ds.gt_mask->size() != ds.x.size()) throw std::invalid_argument("gt_mask size mismatch");
    binio::Writer w;
    w.bytes(kMagic, 4);
    w.u32(kVersion);
    w.u32(ds.gt_mask ? kFlagGt : 0u);
    w.u32(static_cast<std::uint32_t>(ds.n));
    w.u32(static_cast<std::uint32_t>(ds.c));
    w.u32(static_cast<std::uint32_t>(ds.t));
    const std::string name = ds.name + "/" + to_string(ds.split);
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.str(name);
    for (double v : ds.x.data()) w.f32(static_cast<float>(v));
    for (double v : ds.y) w.f32(static_cast<float>(v));
    if (ds.gt_mask) w.bytes(ds.gt_mask->data(), ds.gt_mask->size());
    auto& buf = w.buffer();
    const std::uint32_t crc = binio::crc32(buf.data(), buf.size());
    w.u32(crc);
    return std::move(buf);
}

TimeSeriesDataset deserialize_dataset(const std::vector<std::uint8_t>& bytes) {
    binio::Reader r(bytes.data(), bytes.size());
    const std::uint8_t* magic;
    if (!r.take(4, &magic)) throw DatasetFormatError(DatasetError::Truncated, "dataset file truncated in header");
    if (std::memcmp(magic, kMagic, 4) != 0) throw DatasetFormatError(DatasetError::BadMagic, "not an MGTS file");
    const std::uint32_t version = r.u32();
    if (!r.ok()) throw DatasetFormatError(DatasetError::Truncated, "dataset file truncated in header");
    if (version != kVersion)
        throw DatasetFormatError(DatasetError::VersionMismatch,
                                 "unsupported MGTS version " + std::to_string(version));
    const std::uint32_t flags = r.u32();
    TimeSeriesDataset ds;
    ds.n = r.u32();
    ds.c = r.u32();
    ds.t = r.u32();
    const std::uint32_t name_len = r.u32();
    std::string name = r.str(name_len);
    if (!r.ok()) throw DatasetFormatError(DatasetError::Truncated, "dataset file truncated in header");
    if (flags & ~kFlagGt) throw DatasetFormatError(DatasetError::Malformed, "unknown MGTS flags");

    const std::uint64_t cells = static_cast<std::uint64_t>(ds.n) * ds.c * ds.t;
    const std::uint64_t need = cells * 4 + static_cast<std::uint64_t>(ds.n) * 4 + ((flags & kFlagGt) ? cells : 0) + 4;
    if (need > r.remaining())
        throw DatasetFormatError(DatasetError::Truncated, "dataset file truncated: expected " +
                                                              std::to_string(need) + " payload bytes, found " +
                                                              std::to_string(r.remaining()));
    if (need < r.remaining()) throw DatasetFormatError(DatasetError::Malformed, "trailing bytes after dataset");
    const std::size_t body = bytes.size() - 4;
    binio::Reader tail(bytes.data() + body, 4);
    if (binio::crc32(bytes.data(), body) != tail.u32())
        throw DatasetFormatError(DatasetError::Checksum, "dataset checksum mismatch");

    ds.x = Tensor(Shape{ds.n, ds.c, ds.t});
    for (double& v : ds.x.data()) v = r.f32();
    ds.y.resize(ds.n);
    for (double& v : ds.y) v = r.f32();
    if (flags & kFlagGt) {
        const std::uint8_t* p;
        r.take(cells, &p);
        ds.gt_mask.emplace(p, p + cells);
    }
    const auto slash = name.rfind('/');
    ds.split = Split::Train;
    if (slash != std::string::npos) {
        if (name.substr(slash + 1) == "test") ds.split = Split::Test;
        name.resize(slash);
    }
    ds.name = name;
    return ds;
}

void save_dataset(const TimeSeriesDataset& ds, const std::string& path) {
    binio::write_file(path, serialize_dataset(ds));
}

TimeSeriesDataset load_dataset(const std::string& path) {
    std::vector<std::uint8_t> bytes;
    try {
        bytes = binio::read_file(path);
    } catch (const std::exception& e) {
        throw DatasetFormatError(DatasetError::Io, e.what());
    }
    return deserialize_dataset(bytes);
}

}  // namespace magnets
