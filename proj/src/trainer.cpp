#include "magnets/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif
#if defined(__SSE__)
#include <xmmintrin.h>
#endif

#include "json.hpp"
#include "magnets/metrics.hpp"

namespace magnets {

namespace {

constexpr std::uint64_t kShuffleStream = 0x5f1e;
constexpr std::uint64_t kNoiseStream = 0x9015e;

std::vector<Tensor> snapshot(const std::vector<ad::Parameter*>& params) {
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (const ad::Parameter* p : params) out.push_back(p->value);
    return out;
}

void restore(const std::vector<ad::Parameter*>& params, const std::vector<Tensor>& saved) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = saved[i];
}

// Every step frees and reallocates the same tape buffers; keep them on the heap
// rather than paying for fresh pages each time.
void tune_allocator() {
#if defined(__GLIBC__)
    static const bool once = [] {
        mallopt(M_MMAP_THRESHOLD, 64 << 20);
        mallopt(M_TRIM_THRESHOLD, 512 << 20);
        return true;
    }();
    (void)once;
#endif
}

// Saturated sigmoids push gradients into the subnormal range, which is very
// slow on x86; flush them to zero for the duration of training.
class FlushDenormals {
public:
#if defined(__SSE__)
    FlushDenormals() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040); }
    ~FlushDenormals() { _mm_setcsr(saved_); }

private:
    unsigned int saved_;
#endif
};

}  // namespace

Standardizer Standardizer::fit(const TimeSeriesDataset& train) {
    if (train.n == 0) throw std::invalid_argument("cannot fit a standardizer on an empty training split");
    Standardizer st;
    st.mean.assign(train.c, 0.0);
    st.sd.assign(train.c, 1.0);
    const double count = static_cast<double>(train.n * train.t);
    for (std::size_t ch = 0; ch < train.c; ++ch) {
        double s = 0.0;
        for (std::size_t i = 0; i < train.n; ++i) {
            const double* row = train.x.raw() + (i * train.c + ch) * train.t;
            for (std::size_t k = 0; k < train.t; ++k) s += row[k];
        }
        const double mu = s / count;
        double ss = 0.0;
        for (std::size_t i = 0; i < train.n; ++i) {
            const double* row = train.x.raw() + (i * train.c + ch) * train.t;
            for (std::size_t k = 0; k < train.t; ++k) ss += (row[k] - mu) * (row[k] - mu);
        }
        const double sd = std::sqrt(ss / count);
        st.mean[ch] = mu;
        st.sd[ch] = sd > 0.0 ? sd : 1.0;
    }
    st.y_mean = std::accumulate(train.y.begin(), train.y.end(), 0.0) / static_cast<double>(train.n);
    if (std::abs(st.y_mean) < 1e-9)
        throw std::invalid_argument("training targets have (near) zero mean; unit-mean scaling is undefined");
    return st;
}

namespace {

Tensor channelwise(const Tensor& x, std::size_t channels, auto&& fn) {
    if (x.rank() < 2 || x.dim(x.rank() - 2) != channels)
        throw ShapeError("standardizer: expected [...,C,T] with C=" + std::to_string(channels) + ", got " +
                         shape_str(x.shape()));
    const std::size_t T = x.dim(x.rank() - 1);
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = fn(x[i], (i / T) % channels);
    return out;
}

}  // namespace

Tensor Standardizer::transform(const Tensor& x) const {
    return channelwise(x, channels(), [this](double v, std::size_t c) { return (v - mean[c]) / sd[c]; });
}

Tensor Standardizer::inverse(const Tensor& x) const {
    return channelwise(x, channels(), [this](double v, std::size_t c) { return v * sd[c] + mean[c]; });
}

PreparedData prepare(const TimeSeriesDataset& ds, const Standardizer& st) {
    PreparedData p;
    p.x = st.transform(ds.x);
    p.y_raw = ds.y;
    p.y.resize(ds.n);
    for (std::size_t i = 0; i < ds.n; ++i) p.y[i] = st.scale_target(ds.y[i]);
    return p;
}

void TrainConfig::validate() const {
    if (batch == 0) throw std::invalid_argument("batch size must be positive");
    if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
}

double cosine_lr(std::size_t t, std::size_t t_max, double lr0) {
    if (t_max == 0) return lr0;
    const double frac = static_cast<double>(std::min(t, t_max)) / static_cast<double>(t_max);
    return std::max(0.0, 0.5 * lr0 * (1.0 + std::cos(std::numbers::pi * frac)));
}

void Adam::step(const std::vector<ad::Parameter*>& params, const std::vector<Tensor>& grads, double lr) {
    if (grads.size() != params.size()) throw std::invalid_argument("adam: gradient count mismatch");
    if (m_.empty()) {
        for (const ad::Parameter* p : params) {
            m_.emplace_back(p->value.shape());
            v_.emplace_back(p->value.shape());
        }
    }
    for (std::size_t k = 0; k < params.size(); ++k)
        for (double g : grads[k].data())
            if (!std::isfinite(g))
                throw TrainingDiverged("non-finite gradient in " + params[k]->name + " at step " +
                                       std::to_string(t_ + 1));
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& w = params[k]->value;
        Tensor& m = m_[k];
        Tensor& v = v_[k];
        const Tensor& g = grads[k];
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
            w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
        }
    }
}

std::string to_jsonl(const std::vector<EpochRecord>& log) {
    std::ostringstream os;
    for (const EpochRecord& r : log) {
        nlohmann::ordered_json j;
        j["epoch"] = r.epoch;
        j["lr"] = r.lr;
        j["train_loss"] = r.train_loss;
        j["train_mse"] = r.train_mse;
        j["spars"] = r.spars;
        j["ortho"] = r.ortho;
        j["test_rmse_raw"] = r.test_rmse_raw;
        j["test_r2"] = r.test_r2;
        j["wall_ms"] = r.wall_ms;
        os << j.dump() << '\n';
    }
    return os.str();
}

std::vector<double> predict_all(const GradientModel& model, const Tensor& x, std::size_t chunk) {
    const std::size_t n = x.dim(0);
    const std::size_t stride = x.size() / std::max<std::size_t>(n, 1);
    std::vector<double> out;
    out.reserve(n);
    for (std::size_t first = 0; first < n; first += chunk) {
        const std::size_t count = std::min(chunk, n - first);
        Shape s = x.shape();
        s[0] = count;
        Tensor xb(s, std::vector<double>(x.raw() + first * stride, x.raw() + (first + count) * stride));
        const Tensor p = model.predict(xb);
        out.insert(out.end(), p.raw(), p.raw() + p.size());
    }
    return out;
}

TrainResult train(GradientModel& model, const PreparedData& train_set, const PreparedData* test_set,
                  const Standardizer& st, const TrainConfig& cfg, const EpochCallback& on_epoch) {
    cfg.validate();
    tune_allocator();
    const FlushDenormals ftz;
    using clock = std::chrono::steady_clock;
    const std::vector<ad::Parameter*> params = model.parameters();
    Adam adam(cfg.beta1, cfg.beta2, cfg.eps);
    Rng shuffle_rng = make_stream(cfg.seed, kShuffleStream);
    Rng noise_rng = make_stream(cfg.seed, kNoiseStream);

    const std::size_t n = train_set.size();
    const std::size_t stride = n ? train_set.x.size() / n : 0;
    Shape batch_shape = train_set.x.shape();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::vector<Tensor> last_good = snapshot(params);
    std::vector<Tensor> grads(params.size());

    TrainResult result;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = clock::now();
        const double lr = cosine_lr(epoch, cfg.epochs, cfg.lr);
        if (cfg.shuffle)
            for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle_rng() % i]);

        double loss_sum = 0.0, mse_sum = 0.0, spars = 0.0, ortho = 0.0;
        std::size_t batches = 0;
        for (std::size_t first = 0; first < n; first += cfg.batch) {
            const std::size_t count = std::min(cfg.batch, n - first);
            batch_shape[0] = count;
            Tensor xb(batch_shape);
            Tensor yb(Shape{count});
            for (std::size_t k = 0; k < count; ++k) {
                const std::size_t idx = order[first + k];
                std::copy_n(train_set.x.raw() + idx * stride, stride, xb.raw() + k * stride);
                yb[k] = train_set.y[idx];
            }
            ad::Tape tape;
            const LossBreakdown loss = model.training_loss(tape, xb, yb, noise_rng);
            const double total = loss.total.value().item();
            if (!std::isfinite(total)) {
                restore(params, last_good);
                throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch + 1) + ", step " +
                                       std::to_string(adam.steps() + 1));
            }
            tape.backward(loss.total);
            for (std::size_t k = 0; k < params.size(); ++k) grads[k] = tape.param_grad(*params[k]);
            try {
                adam.step(params, grads, lr);
            } catch (const TrainingDiverged&) {
                restore(params, last_good);
                throw;
            }
            loss_sum += total;
            mse_sum += loss.mse;
            spars = loss.spars;
            ortho = loss.ortho;
            ++batches;
        }

        EpochRecord rec;
        rec.epoch = epoch + 1;
        rec.lr = lr;
        rec.train_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
        rec.train_mse = batches ? mse_sum / static_cast<double>(batches) : 0.0;
        rec.spars = spars;
        rec.ortho = ortho;
        if (test_set && test_set->size() > 0) {
            std::vector<double> pred = predict_all(model, test_set->x);
            for (double& p : pred) p = st.unscale_target(p);
            rec.test_rmse_raw = rmse(test_set->y_raw, pred);
            rec.test_r2 = test_set->size() >= 2 ? r2(test_set->y_raw, pred) : 0.0;
        }
        if (cfg.timing) rec.wall_ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
        last_good = snapshot(params);
        result.log.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    return result;
}

}  // namespace magnets
