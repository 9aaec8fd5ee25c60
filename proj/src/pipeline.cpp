#include "magnets/pipeline.hpp"

#include <algorithm>
#include <stdexcept>
#include <utility>

namespace magnets {

using json = nlohmann::ordered_json;

std::string to_string(ModelKind k) {
    switch (k) {
        case ModelKind::Magnets: return "magnets";
        case ModelKind::Cnn: return "cnn";
        case ModelKind::Mean: return "mean";
        case ModelKind::Ols: return "ols";
        case ModelKind::Ridge: return "ridge";
        case ModelKind::Lasso: return "lasso";
    }
    return "unknown";
}

ModelKind parse_model_kind(const std::string& s) {
    for (ModelKind k : {ModelKind::Magnets, ModelKind::Cnn, ModelKind::Mean, ModelKind::Ols, ModelKind::Ridge,
                        ModelKind::Lasso})
        if (to_string(k) == s) return k;
    throw std::invalid_argument("unknown model '" + s + "' (expected magnets, cnn, mean, ols, ridge or lasso)");
}

std::string to_string(AggregationScale a) { return a == AggregationScale::Raw ? "raw" : "standardized"; }

AggregationScale parse_aggregation_scale(const std::string& s) {
    if (s == "raw") return AggregationScale::Raw;
    if (s == "standardized") return AggregationScale::Standardized;
    throw std::invalid_argument("unknown aggregation scale '" + s + "' (expected raw or standardized)");
}

RunSpec desk_scale_spec(ModelKind model, std::uint64_t seed) {
    RunSpec s;
    s.model = model;
    s.widths = {4, 8, 16};
    s.train.epochs = 50;
    s.train.lr = 3e-3;
    s.train.seed = seed;
    return s;
}

namespace {

MagnetsConfig magnets_config(const RunSpec& spec, const TimeSeriesDataset& ds, const Standardizer& st) {
    MagnetsConfig c;
    c.channels = ds.c;
    c.length = ds.t;
    c.masks = spec.masks;
    c.concepts = spec.concepts;
    c.tau = spec.tau;
    c.lambda_spars = spec.lambda_spars;
    c.lambda_ortho = spec.lambda_ortho;
    c.noise = spec.noise;
    c.unet_widths = spec.widths;
    if (spec.aggregate == AggregationScale::Raw) {
        c.aggregation_scale = st.sd;
        c.aggregation_offset = st.mean;
    }
    return c;
}

Vector as_vector(const std::vector<double>& v) { return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())); }

}  // namespace

FittedModel fit_model(const RunSpec& spec, const TimeSeriesDataset& train_split, const TimeSeriesDataset* test,
                      const EpochCallback& on_epoch) {
    if (test && (test->c != train_split.c || test->t != train_split.t))
        throw std::invalid_argument("train and test splits have different shapes");
    FittedModel m;
    m.kind = spec.model;
    m.standardizer = Standardizer::fit(train_split);
    const PreparedData tr = prepare(train_split, m.standardizer);
    std::optional<PreparedData> te;
    if (test) te = prepare(*test, m.standardizer);

    switch (spec.model) {
        case ModelKind::Magnets: {
            m.magnets = std::make_unique<MagnetsModel>(magnets_config(spec, train_split, m.standardizer), spec.train.seed);
            m.log = train(*m.magnets, tr, te ? &*te : nullptr, m.standardizer, spec.train, on_epoch).log;
            break;
        }
        case ModelKind::Cnn: {
            CnnConfig c;
            c.channels = train_split.c;
            c.length = train_split.t;
            c.widths = spec.widths;
            m.cnn = std::make_unique<CnnModel>(c, spec.train.seed);
            m.log = train(*m.cnn, tr, te ? &*te : nullptr, m.standardizer, spec.train, on_epoch).log;
            break;
        }
        case ModelKind::Mean: m.mean = MeanModel::fit(tr.y); break;
        case ModelKind::Ols: m.linear = fit_ols(flatten(tr.x), as_vector(tr.y)); break;
        case ModelKind::Ridge: m.linear = fit_ridge(flatten(tr.x), as_vector(tr.y), spec.ridge_lambda); break;
        case ModelKind::Lasso: {
            LassoOptions o;
            o.lambda = spec.lasso_lambda;
            m.lasso = fit_lasso(flatten(tr.x), as_vector(tr.y), o);
            m.linear = m.lasso->model;
            break;
        }
    }
    return m;
}

std::vector<double> predict_raw(const FittedModel& m, const TimeSeriesDataset& ds) {
    if (ds.c != m.standardizer.channels())
        throw std::invalid_argument("dataset has " + std::to_string(ds.c) + " channels, model expects " +
                                    std::to_string(m.standardizer.channels()));
    const PreparedData p = prepare(ds, m.standardizer);
    std::vector<double> pred;
    if (m.magnets) pred = predict_all(*m.magnets, p.x);
    else if (m.cnn) pred = predict_all(*m.cnn, p.x);
    else if (m.mean) pred = m.mean->predict(ds.n);
    else if (m.linear) pred = m.linear->predict(flatten(p.x));
    else throw std::logic_error("fitted model holds no predictor");
    for (double& v : pred) v = m.standardizer.unscale_target(v);
    return pred;
}

Tensor cnn_attribution(const CnnModel& cnn, const Tensor& x, std::size_t steps) {
    const BatchFunction f = [&cnn](ad::Tape& tape, ad::Var in) { return cnn.forward(tape, in); };
    return integrated_gradients(f, x, Tensor(x.shape()), steps);
}

namespace {

Tensor sample(const Tensor& x, std::size_t i) {
    const std::size_t C = x.dim(1), T = x.dim(2);
    return Tensor(Shape{C, T}, std::vector<double>(x.raw() + i * C * T, x.raw() + (i + 1) * C * T));
}

}  // namespace

std::vector<double> relevance(const FittedModel& m, const Tensor& x_std, std::size_t i, const RunSpec& spec) {
    const Tensor xi = sample(x_std, i);
    if (m.magnets) return pool_channels(magnets_mask_to_score(m.magnets->explain(xi), spec.mask_pool));
    if (m.cnn) return pool_channels(normalize_attribution(cnn_attribution(*m.cnn, xi, spec.ig_steps)));
    return {};
}

MetricsReport evaluate(const FittedModel& m, const TimeSeriesDataset& test, const RunSpec& spec) {
    MetricsReport r;
    r.dataset = test.name;
    r.model = to_string(m.kind);
    if (m.kind == ModelKind::Magnets) {
        r.lambda_spars = m.magnets->config().lambda_spars;
        r.lambda_ortho = m.magnets->config().lambda_ortho;
    }
    r.seed = spec.train.seed;
    const std::vector<double> pred = predict_raw(m, test);
    r.rmse_raw = rmse(test.y, pred);
    r.r2 = r2(test.y, pred);
    if (test.gt_mask && (m.magnets || m.cnn)) {
        const PreparedData p = prepare(test, m.standardizer);
        ExplanationAccumulator acc;
        const std::size_t cells = test.c * test.t;
        for (std::size_t i = 0; i < test.n; ++i) {
            const std::vector<std::uint8_t> gt = pool_gt(test.gt_mask->data() + i * cells, test.c, test.t);
            if (std::none_of(gt.begin(), gt.end(), [](std::uint8_t g) { return g != 0; })) {
                acc.add({}, gt);
                continue;
            }
            acc.add(relevance(m, p.x, i, spec), gt);
        }
        r.explanation = acc.result();
    }
    return r;
}

// ---- checkpoints ------------------------------------------------------------------

namespace {

json train_config_to_json(const TrainConfig& t) {
    json j;
    j["epochs"] = t.epochs;
    j["batch"] = t.batch;
    j["lr"] = t.lr;
    j["beta1"] = t.beta1;
    j["beta2"] = t.beta2;
    j["eps"] = t.eps;
    j["seed"] = t.seed;
    j["shuffle"] = t.shuffle;
    return j;
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig t;
    t.epochs = j.at("epochs").get<std::size_t>();
    t.batch = j.at("batch").get<std::size_t>();
    t.lr = j.at("lr").get<double>();
    t.beta1 = j.at("beta1").get<double>();
    t.beta2 = j.at("beta2").get<double>();
    t.eps = j.at("eps").get<double>();
    t.seed = j.at("seed").get<std::uint64_t>();
    t.shuffle = j.at("shuffle").get<bool>();
    return t;
}

}  // namespace

Checkpoint to_checkpoint(const FittedModel& m, const RunSpec& spec) {
    Checkpoint ck;
    ck.kind = to_string(m.kind);
    ck.standardizer = m.standardizer;
    json c;
    c["train"] = train_config_to_json(spec.train);
    c["mask_pool"] = to_string(spec.mask_pool);
    c["ig_steps"] = spec.ig_steps;
    if (m.magnets) {
        c["magnets"] = magnets_config_to_json(m.magnets->config());
        store_parameters(ck, std::as_const(*m.magnets).parameters());
    } else if (m.cnn) {
        json e;
        e["channels"] = m.cnn->config().channels;
        e["length"] = m.cnn->config().length;
        e["widths"] = m.cnn->config().widths;
        c["cnn"] = e;
        store_parameters(ck, std::as_const(*m.cnn).parameters());
    } else if (m.mean) {
        ck.tensors.emplace_back("mean.value", Tensor(Shape{1}, {m.mean->mean}));
    } else if (m.linear) {
        json e;
        e["regularization"] = to_string(m.linear->regularization);
        e["lambda"] = m.linear->lambda;
        c["linear"] = e;
        const Vector& w = m.linear->weights;
        ck.tensors.emplace_back("linear.weights",
                                Tensor(Shape{static_cast<std::size_t>(w.size())}, std::vector<double>(w.data(), w.data() + w.size())));
        ck.tensors.emplace_back("linear.intercept", Tensor(Shape{1}, {m.linear->intercept}));
    }
    ck.config = std::move(c);
    return ck;
}

RunSpec spec_from_checkpoint(const Checkpoint& ck) {
    RunSpec s;
    try {
        s.model = parse_model_kind(ck.kind);
        s.train = train_config_from_json(ck.config.at("train"));
        s.mask_pool = parse_mask_pool(ck.config.at("mask_pool").get<std::string>());
        s.ig_steps = ck.config.at("ig_steps").get<std::size_t>();
        if (ck.config.contains("magnets")) {
            const MagnetsConfig mc = magnets_config_from_json(ck.config.at("magnets"));
            s.masks = mc.masks;
            s.concepts = mc.concepts;
            s.tau = mc.tau;
            s.lambda_spars = mc.lambda_spars;
            s.lambda_ortho = mc.lambda_ortho;
            s.noise = mc.noise;
            s.widths = mc.unet_widths;
            s.aggregate = mc.aggregation_scale.empty() ? AggregationScale::Standardized : AggregationScale::Raw;
        }
    } catch (const json::exception& e) {
        throw CheckpointFormatError(CheckpointError::Malformed, std::string("checkpoint config: ") + e.what());
    }
    return s;
}

FittedModel from_checkpoint(const Checkpoint& ck) {
    FittedModel m;
    m.kind = parse_model_kind(ck.kind);
    m.standardizer = ck.standardizer;
    try {
        switch (m.kind) {
            case ModelKind::Magnets: {
                m.magnets = std::make_unique<MagnetsModel>(magnets_config_from_json(ck.config.at("magnets")), 0);
                restore_parameters(ck, m.magnets->parameters());
                break;
            }
            case ModelKind::Cnn: {
                const json& e = ck.config.at("cnn");
                CnnConfig c;
                c.channels = e.at("channels").get<std::size_t>();
                c.length = e.at("length").get<std::size_t>();
                c.widths = e.at("widths").get<std::vector<std::size_t>>();
                m.cnn = std::make_unique<CnnModel>(c, 0);
                restore_parameters(ck, m.cnn->parameters());
                break;
            }
            case ModelKind::Mean: m.mean = MeanModel{ck.tensor("mean.value")[0]}; break;
            case ModelKind::Ols:
            case ModelKind::Ridge:
            case ModelKind::Lasso: {
                const json& e = ck.config.at("linear");
                LinearModel lm;
                const Tensor& w = ck.tensor("linear.weights");
                lm.weights = Eigen::Map<const Vector>(w.raw(), static_cast<Eigen::Index>(w.size()));
                lm.intercept = ck.tensor("linear.intercept")[0];
                lm.lambda = e.at("lambda").get<double>();
                lm.regularization = m.kind == ModelKind::Ols     ? Regularization::None
                                    : m.kind == ModelKind::Ridge ? Regularization::Ridge
                                                                 : Regularization::Lasso;
                m.linear = std::move(lm);
                break;
            }
        }
    } catch (const json::exception& e) {
        throw CheckpointFormatError(CheckpointError::Malformed, std::string("checkpoint config: ") + e.what());
    }
    if (m.standardizer.channels() == 0) throw CheckpointFormatError(CheckpointError::Malformed, "checkpoint has no standardizer");
    return m;
}

}  // namespace magnets
