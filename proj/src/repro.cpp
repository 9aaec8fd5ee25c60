#include "magnets/repro.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "json.hpp"

namespace magnets {

const std::vector<ReferenceRow>& published_reference() {
    using D = DatasetKind;
    static const std::vector<ReferenceRow> rows = {
        {"magnets", D::Univariate, .9989, .99, .93},   {"magnets", D::Bivariate, .9990, 1.00, 1.00},
        {"magnets", D::Trivariate1, .9993, 1.00, 1.00}, {"magnets", D::Trivariate2, .9979, .99, .95},
        {"magnets-l0", D::Univariate, .9993, 1.00, 1.00}, {"magnets-l0", D::Bivariate, .9991, 1.00, 1.00},
        {"magnets-l0", D::Trivariate1, .9993, 1.00, 1.00}, {"magnets-l0", D::Trivariate2, .9984, .98, .94},
        {"cnn", D::Univariate, .9999, .99, .69},       {"cnn", D::Bivariate, .9986, .98, .49},
        {"cnn", D::Trivariate1, .9994, .83, .36},      {"cnn", D::Trivariate2, .9968, .66, .34},
        {"mean", D::Univariate, .0000, {}, {}},         {"mean", D::Bivariate, -.0003, {}, {}},
        {"mean", D::Trivariate1, .0000, {}, {}},        {"mean", D::Trivariate2, .0000, {}, {}},
        {"ols", D::Univariate, .5229, {}, {}},          {"ols", D::Bivariate, .1645, {}, {}},
        {"ols", D::Trivariate1, .6434, {}, {}},         {"ols", D::Trivariate2, .5983, {}, {}},
    };
    return rows;
}

double beta_small_fraction(const MagnetsModel& m, double tol) {
    const Tensor& b = m.beta().value;
    const auto small = std::count_if(b.data().begin(), b.data().end(), [tol](double v) { return std::abs(v) < tol; });
    return static_cast<double>(small) / static_cast<double>(b.size());
}

double orthogonality_value(const MagnetsModel& m) {
    ad::Tape tape(ad::ParamMode::Frozen);
    return m.orthogonality_loss(tape).value()[0];
}

double concept_dominance(const MagnetsModel& m) {
    const Tensor& b = m.beta().value;
    const std::size_t K = m.config().concepts, F = b.size() / K;
    double best = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
        double first = 0.0, second = 0.0;
        for (std::size_t f = 0; f < F; ++f) {
            const double v = std::abs(b[f * K + k]);
            if (v > first) {
                second = first;
                first = v;
            } else if (v > second) {
                second = v;
            }
        }
        if (first > 0.0) best = std::max(best, second > 0.0 ? first / second : INFINITY);
    }
    return best;
}

std::vector<const ReproRun*> ReproResult::select(DatasetKind d, const std::string& model) const {
    std::vector<const ReproRun*> out;
    for (const ReproRun& r : runs)
        if (r.dataset == d && r.model == model) out.push_back(&r);
    return out;
}

namespace {

template <class F>
std::optional<double> mean_of(const std::vector<const ReproRun*>& runs, F&& field) {
    double s = 0.0;
    std::size_t n = 0;
    for (const ReproRun* r : runs)
        if (auto v = field(*r)) {
            s += *v;
            ++n;
        }
    if (n == 0) return std::nullopt;
    return s / static_cast<double>(n);
}

}  // namespace

std::optional<double> ReproResult::mean_r2(DatasetKind d, const std::string& model) const {
    return mean_of(select(d, model), [](const ReproRun& r) -> std::optional<double> { return r.report.r2; });
}

std::optional<double> ReproResult::mean_auc(DatasetKind d, const std::string& model) const {
    return mean_of(select(d, model), [](const ReproRun& r) -> std::optional<double> {
        if (!r.report.explanation || r.report.explanation->n_auc == 0) return std::nullopt;
        return r.report.explanation->auc_mean;
    });
}

std::optional<double> ReproResult::mean_f1(DatasetKind d, const std::string& model) const {
    return mean_of(select(d, model), [](const ReproRun& r) -> std::optional<double> {
        if (!r.report.explanation) return std::nullopt;
        return r.report.explanation->f1_mean;
    });
}

std::string ReproResult::table() const {
    auto cell = [](std::optional<double> ours, std::optional<double> ref) {
        char buf[64];
        auto fmt = [](std::optional<double> v) {
            char b[16];
            if (v) std::snprintf(b, sizeof b, "%.4f", *v);
            else std::snprintf(b, sizeof b, "%s", "-");
            return std::string(b);
        };
        std::snprintf(buf, sizeof buf, "%8s (%s)", fmt(ours).c_str(), fmt(ref).c_str());
        return std::string(buf);
    };
    std::string out = "model        dataset        R2 ours (ref)       AUC ours (ref)      F1 ours (ref)\n";
    std::vector<std::string> models;
    for (const ReproRun& r : runs)
        if (std::find(models.begin(), models.end(), r.model) == models.end()) models.push_back(r.model);
    for (const std::string& model : models)
        for (const ReferenceRow& p : published_reference()) {
            if (p.model != model || select(p.dataset, model).empty()) continue;
            char line[256];
            std::snprintf(line, sizeof line, "%-12s %-12s %s %s %s\n", model.c_str(), to_string(p.dataset).c_str(),
                          cell(mean_r2(p.dataset, model), p.r2).c_str(), cell(mean_auc(p.dataset, model), p.auc).c_str(),
                          cell(mean_f1(p.dataset, model), p.f1).c_str());
            out += line;
        }
    return out;
}

std::string ReproResult::to_json() const {
    nlohmann::ordered_json j;
    j["runs"] = nlohmann::ordered_json::array();
    for (const ReproRun& r : runs) {
        nlohmann::ordered_json e = nlohmann::ordered_json::parse(r.report.to_json());
        e["run"] = r.model;
        if (r.model.rfind("magnets", 0) == 0) {
            e["beta_small_fraction"] = r.beta_small_fraction;
            e["ortho_loss"] = r.ortho_loss;
            e["concept_dominance"] = std::isfinite(r.concept_dominance) ? nlohmann::ordered_json(r.concept_dominance)
                                                                        : nlohmann::ordered_json("inf");
        }
        j["runs"].push_back(std::move(e));
    }
    j["wall_seconds"] = wall_seconds;
    return j.dump(2);
}

ReproResult run_repro(const ReproConfig& cfg, const ReproProgress& progress) {
    using clock = std::chrono::steady_clock;
    const auto start = clock::now();
    auto say = [&](const std::string& s) {
        if (progress) progress(s);
    };
    ReproResult result;
    for (DatasetKind kind : cfg.datasets) {
        for (std::size_t si = 0; si < cfg.seeds.size(); ++si) {
            const std::uint64_t seed = cfg.seeds[si];
            GeneratorConfig g;
            g.seed = seed;
            g.n_train = static_cast<std::size_t>(std::llround(50000 * cfg.scale));
            g.n_test = static_cast<std::size_t>(std::llround(10000 * cfg.scale));
            const TimeSeriesDataset train = make_dataset(kind, g, Split::Train);
            const TimeSeriesDataset test = make_dataset(kind, g, Split::Test);

            std::vector<std::pair<std::string, RunSpec>> plan;
            for (ModelKind mk : {ModelKind::Mean, ModelKind::Ols, ModelKind::Cnn, ModelKind::Magnets}) {
                RunSpec s = desk_scale_spec(mk, seed);
                s.train.epochs = cfg.epochs;
                s.train.timing = cfg.timing;
                plan.emplace_back(to_string(mk), s);
            }
            if (si == 0 && std::find(cfg.lambda0_datasets.begin(), cfg.lambda0_datasets.end(), kind) !=
                               cfg.lambda0_datasets.end()) {
                RunSpec s = desk_scale_spec(ModelKind::Magnets, seed);
                s.train.epochs = cfg.epochs;
                s.train.timing = cfg.timing;
                s.lambda_spars = s.lambda_ortho = 0.0;
                plan.emplace_back("magnets-l0", s);
            }

            for (const auto& [name, spec] : plan) {
                const auto t0 = clock::now();
                const FittedModel m = fit_model(spec, train, nullptr);
                ReproRun run;
                run.dataset = kind;
                run.model = name;
                run.seed = seed;
                run.report = evaluate(m, test, spec);
                if (m.magnets) {
                    run.beta_small_fraction = beta_small_fraction(*m.magnets);
                    run.ortho_loss = orthogonality_value(*m.magnets);
                    run.concept_dominance = concept_dominance(*m.magnets);
                }
                if (cfg.timing) run.report.wall_ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
                char line[160];
                std::snprintf(line, sizeof line, "%-12s %-12s seed %llu  R2 %.4f", name.c_str(),
                              to_string(kind).c_str(), static_cast<unsigned long long>(seed), run.report.r2);
                std::string msg = line;
                if (run.report.explanation) {
                    std::snprintf(line, sizeof line, "  AUC %.4f (n=%zu)  F1 %.4f", run.report.explanation->auc_mean,
                                  run.report.explanation->n_auc, run.report.explanation->f1_mean);
                    msg += line;
                }
                if (cfg.timing) {
                    std::snprintf(line, sizeof line, "  %.1fs", run.report.wall_ms / 1000.0);
                    msg += line;
                }
                say(msg);
                result.runs.push_back(std::move(run));
            }
        }
    }
    result.wall_seconds = std::chrono::duration<double>(clock::now() - start).count();
    return result;
}

}  // namespace magnets
