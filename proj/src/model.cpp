#include "magnets/model.hpp"

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>

namespace magnets {

using ad::Tape;
using ad::Var;

namespace {

constexpr std::uint64_t kInitStream = 0x1a17;

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = normal(rng, 0.0, stddev);
    return t;
}

}  // namespace

Tensor sample_noise(NoiseKind kind, const Shape& shape, Rng& rng) {
    Tensor g(shape);
    for (double& u : g.data()) u = uniform_open(rng);
    Eigen::Map<Eigen::ArrayXd> a(g.raw(), static_cast<Eigen::Index>(g.size()));
    if (kind == NoiseKind::Gumbel)
        a = -(-a.log()).log();
    else
        a = (a / (1.0 - a)).log();
    return g;
}

std::string to_string(NoiseKind kind) { return kind == NoiseKind::Gumbel ? "gumbel" : "logistic"; }

NoiseKind parse_noise_kind(const std::string& s) {
    if (s == "gumbel") return NoiseKind::Gumbel;
    if (s == "logistic") return NoiseKind::Logistic;
    throw std::invalid_argument("unknown noise kind '" + s + "' (expected gumbel or logistic)");
}

std::size_t MagnetsConfig::padded_length() const {
    const std::size_t factor = std::size_t{1} << unet_widths.size();
    return (length + factor - 1) / factor * factor;
}

void MagnetsConfig::validate() const {
    if (channels < 1) throw std::invalid_argument("config: channels must be >= 1");
    if (length < 1) throw std::invalid_argument("config: length must be >= 1");
    if (masks < 1) throw std::invalid_argument("config: masks per channel must be >= 1");
    if (concepts < 1) throw std::invalid_argument("config: concepts must be >= 1");
    if (!(tau > 0.0)) throw std::invalid_argument("config: temperature must be positive");
    if (lambda_spars < 0.0 || lambda_ortho < 0.0) throw std::invalid_argument("config: lambdas must be >= 0");
    if (unet_widths.empty()) throw std::invalid_argument("config: unet widths must not be empty");
    if (aggregation_scale.size() != aggregation_offset.size() ||
        (!aggregation_scale.empty() && aggregation_scale.size() != channels))
        throw std::invalid_argument("config: aggregation scale/offset need one entry per channel");
}

MagnetsModel::MagnetsModel(MagnetsConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    Rng rng = make_stream(seed, kInitStream);
    const std::size_t C = config_.channels, M = config_.masks, K = config_.concepts;
    unet_ = UNet(C, C * M, config_.unet_widths, rng);
    beta_ = ad::Parameter("bottleneck.beta", normal_tensor({C, M, K}, 0.01, rng));
    concept_bias_ = ad::Parameter("bottleneck.bias", Tensor({K}));
    head_weight_ = ad::Parameter("head.weight", normal_tensor({K}, 0.01, rng));
    head_bias_ = ad::Parameter("head.bias", Tensor({1}));
}

Tensor MagnetsModel::pad(const Tensor& x) const {
    if (x.rank() != 3 || x.dim(1) != config_.channels || x.dim(2) != config_.length) {
        throw ShapeError("magnets: expected input [B," + std::to_string(config_.channels) + "," +
                         std::to_string(config_.length) + "], got " + shape_str(x.shape()));
    }
    const std::size_t B = x.dim(0), C = x.dim(1), T = x.dim(2), Tp = config_.padded_length();
    if (Tp == T) return x;
    Tensor out({B, C, Tp});
    for (std::size_t r = 0; r < B * C; ++r)
        for (std::size_t t = 0; t < T; ++t) out[r * Tp + t] = x[r * T + t];
    return out;
}

Var MagnetsModel::mask_logits(Tape& tape, Var x_padded) const {
    const Shape& s = x_padded.shape();
    if (s.size() != 3 || s[1] != config_.channels) {
        throw ShapeError("mask_logits: expected [B," + std::to_string(config_.channels) + ",T], got " + shape_str(s));
    }
    Var raw = unet_(tape, x_padded);
    return ad::reshape(raw, {s[0], config_.channels, config_.masks, s[2]});
}

MagnetsModel::MaskPair MagnetsModel::binarize_masks(Tape& tape, Var logits, const ForwardOptions& opts,
                                                    Rng* rng) const {
    const Tensor& lv = logits.value();
    if (!opts.training) {
        // Noise off: m = 1[logit > 0].
        Tensor m(lv.shape());
        for (std::size_t i = 0; i < m.size(); ++i) m[i] = lv[i] > 0.0 ? 1.0 : 0.0;
        Var relaxed = ad::relaxed_bernoulli(logits, Tensor(), config_.tau);
        return {relaxed, tape.constant(std::move(m))};
    }
    Tensor noise;
    if (opts.noise) {
        if (opts.noise->shape() != lv.shape()) throw ShapeError("binarize_masks: noise shape mismatch");
        noise = *opts.noise;
    } else {
        if (!rng) throw std::invalid_argument("binarize_masks: training mode needs noise or an rng");
        noise = sample_noise(config_.noise, lv.shape(), *rng);
    }
    Var relaxed = ad::relaxed_bernoulli(logits, noise, config_.tau);
    Var masks = opts.relaxed_path ? relaxed : ad::ste_binarize(relaxed);
    return {relaxed, masks};
}

Tensor MagnetsModel::aggregation_input(const Tensor& x) const {
    if (config_.aggregation_scale.empty()) return pad(x);
    Tensor raw = x;
    const std::size_t C = config_.channels, T = x.dim(2);
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const std::size_t c = (i / T) % C;
        raw[i] = raw[i] * config_.aggregation_scale[c] + config_.aggregation_offset[c];
    }
    return pad(raw);
}

Var MagnetsModel::aggregate(Var x_padded, Var masks) const {
    return ad::masked_sum(x_padded, masks, config_.length);
}

Var MagnetsModel::bottleneck(Tape& tape, Var z) const {
    const Shape& s = z.shape();
    const std::size_t features = config_.channels * config_.masks;
    Var flat = ad::reshape(z, {s.at(0), features});
    Var weights = ad::reshape(tape.parameter(beta_), {features, config_.concepts});
    return ad::linear(flat, weights, tape.parameter(concept_bias_));
}

Var MagnetsModel::predict_from_concepts(Tape& tape, Var concepts) const {
    Var w = ad::reshape(tape.parameter(head_weight_), {config_.concepts, 1});
    Var y = ad::linear(concepts, w, tape.parameter(head_bias_));
    return ad::reshape(y, {concepts.shape().at(0)});
}

Var MagnetsModel::sparsity_loss(Tape& tape) const { return ad::abs_sum(tape.parameter(beta_)); }

Var MagnetsModel::orthogonality_loss(Tape& tape) const {
    const std::size_t K = config_.concepts;
    Var b = ad::reshape(tape.parameter(beta_), {config_.channels * config_.masks, K});
    Var gram = ad::matmul(ad::transpose(b), b);
    Tensor eye({K, K});
    for (std::size_t k = 0; k < K; ++k) eye[k * K + k] = 1.0;
    return ad::sum_squares(ad::sub(gram, tape.constant(std::move(eye))));
}

MagnetsForward MagnetsModel::forward(Tape& tape, const Tensor& x, const ForwardOptions& opts, Rng* rng) const {
    MagnetsForward out;
    Var xp = tape.constant(pad(x));
    out.logits = mask_logits(tape, xp);
    MaskPair pair = binarize_masks(tape, out.logits, opts, rng);
    out.relaxed = pair.relaxed;
    out.masks = pair.masks;
    Var xa = config_.aggregation_scale.empty() ? xp : tape.constant(aggregation_input(x));
    out.z = aggregate(xa, out.masks);
    out.concepts = bottleneck(tape, out.z);
    out.prediction = predict_from_concepts(tape, out.concepts);
    return out;
}

MagnetsForward MagnetsModel::forward_with_masks(Tape& tape, const Tensor& x, const Tensor& masks) const {
    if (x.rank() != 3 || x.dim(1) != config_.channels) throw ShapeError("forward_with_masks: bad input shape");
    MagnetsForward out;
    Var xv = tape.constant(x);
    out.masks = tape.constant(masks);
    out.relaxed = out.masks;
    out.z = ad::masked_sum(xv, out.masks, x.dim(2));
    out.concepts = bottleneck(tape, out.z);
    out.prediction = predict_from_concepts(tape, out.concepts);
    return out;
}

MagnetsLoss MagnetsModel::loss(Tape& tape, const MagnetsForward& fwd, const Tensor& y) const {
    MagnetsLoss l;
    l.mse = ad::mse(fwd.prediction, tape.constant(y));
    l.spars = sparsity_loss(tape);
    l.ortho = orthogonality_loss(tape);
    l.total = l.mse;
    if (config_.lambda_spars != 0.0) l.total = ad::add(l.total, ad::scale(l.spars, config_.lambda_spars));
    if (config_.lambda_ortho != 0.0) l.total = ad::add(l.total, ad::scale(l.ortho, config_.lambda_ortho));
    return l;
}

LossBreakdown MagnetsModel::training_loss(Tape& tape, const Tensor& x, const Tensor& y, Rng& rng) const {
    ForwardOptions opts;
    opts.training = true;
    MagnetsForward fwd = forward(tape, x, opts, &rng);
    MagnetsLoss l = loss(tape, fwd, y);
    return {l.total, l.mse.value()[0], l.spars.value()[0], l.ortho.value()[0]};
}

Tensor MagnetsModel::predict(const Tensor& x) const {
    Tape tape(ad::ParamMode::Frozen);
    MagnetsForward fwd = forward(tape, x, ForwardOptions{}, nullptr);
    return fwd.prediction.value();
}

Tensor MagnetsModel::end_to_end_weights() const {
    const std::size_t F = config_.channels * config_.masks, K = config_.concepts;
    Tensor out({config_.channels, config_.masks});
    for (std::size_t f = 0; f < F; ++f) {
        double s = 0.0;
        for (std::size_t k = 0; k < K; ++k) s += head_weight_.value[k] * beta_.value[f * K + k];
        out[f] = s;
    }
    return out;
}

Explanation MagnetsModel::explain(const Tensor& x) const {
    const std::size_t C = config_.channels, M = config_.masks, T = config_.length, K = config_.concepts;
    if (x.rank() != 2 || x.dim(0) != C || x.dim(1) != T) {
        throw ShapeError("explain: expected one sample [" + std::to_string(C) + "," + std::to_string(T) + "], got " +
                         shape_str(x.shape()));
    }
    Tape tape(ad::ParamMode::Frozen);
    MagnetsForward fwd = forward(tape, x.reshaped({1, C, T}), ForwardOptions{}, nullptr);

    const std::size_t Tp = config_.padded_length();
    Explanation e;
    {
        const Tensor xa = aggregation_input(x.reshaped({1, C, T}));
        e.signal = Tensor({C, T});
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t t = 0; t < T; ++t) e.signal[c * T + t] = xa[c * Tp + t];
    }
    e.masks = Tensor({C, M, T});
    e.relaxed = Tensor({C, M, T});
    const Tensor& mv = fwd.masks.value();
    const Tensor& rv = fwd.relaxed.value();
    for (std::size_t cm = 0; cm < C * M; ++cm)
        for (std::size_t t = 0; t < T; ++t) {
            e.masks[cm * T + t] = mv[cm * Tp + t];
            e.relaxed[cm * T + t] = rv[cm * Tp + t];
        }
    e.z = fwd.z.value().reshaped({C, M});
    e.concepts = fwd.concepts.value().reshaped({K});
    e.contributions = Tensor({K});
    for (std::size_t k = 0; k < K; ++k) e.contributions[k] = head_weight_.value[k] * e.concepts[k];
    e.feature_weights = end_to_end_weights();
    e.bias = head_bias_.value[0];
    e.prediction = fwd.prediction.value()[0];
    return e;
}

std::vector<ad::Parameter*> MagnetsModel::parameters() {
    std::vector<ad::Parameter*> out;
    unet_.collect(out);
    out.push_back(&beta_);
    out.push_back(&concept_bias_);
    out.push_back(&head_weight_);
    out.push_back(&head_bias_);
    return out;
}

std::vector<const ad::Parameter*> MagnetsModel::parameters() const {
    std::vector<const ad::Parameter*> out;
    unet_.collect(out);
    out.push_back(&beta_);
    out.push_back(&concept_bias_);
    out.push_back(&head_weight_);
    out.push_back(&head_bias_);
    return out;
}

}  // namespace magnets
