// magnets: dataset generation, training, evaluation, explanation export and
// the desk-scale reproduction pipeline.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "magnets/baselines.hpp"
#include "magnets/binio.hpp"
#include "magnets/checkpoint.hpp"
#include "magnets/data.hpp"
#include "magnets/pipeline.hpp"
#include "magnets/repro.hpp"

namespace fs = std::filesystem;
using namespace magnets;
using json = nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitBadInput = 2;
constexpr int kExitDiverged = 3;

// Raised for user errors the library does not classify itself.
struct BadInput : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string default_out() {
    const char* env = std::getenv("MAGNETS_OUT");
    return env && *env ? env : "out";
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

// "path/univariate" -> "path/univariate.train.mgts" etc. A path naming an
// existing file is used as is.
std::string split_path(const std::string& prefix, Split split) {
    if (fs::is_regular_file(prefix)) return prefix;
    return prefix + "." + to_string(split) + ".mgts";
}

TimeSeriesDataset load_split(const std::string& prefix, Split split) {
    const std::string path = split_path(prefix, split);
    if (!fs::exists(path)) throw BadInput("dataset file not found: " + path);
    return load_dataset(path);
}

struct Options {
    std::uint64_t seed = 0;
    double scale = 1.0;
    std::size_t epochs = 100;
    std::size_t batch = 8;
    double lr = 1e-3;
    double lspars = 1.0;
    double lortho = 1.0;
    std::size_t masks = 10;
    std::size_t concepts = 3;
    double tau = 1.0;
    std::string noise = "logistic";
    std::string mask_pool = "weighted";
    std::string aggregate = "raw";
    std::vector<std::size_t> widths{32, 64, 128};
    double ridge_lambda = 1.0;
    double lasso_lambda = 1.0;
    std::size_t ig_steps = 50;
    bool desk = false;
    bool json_out = false;
    bool no_timing = false;
    bool quiet = false;
    std::string out;
};

void add_model_flags(CLI::App* cmd, Options& o) {
    cmd->add_option("--seed", o.seed, "Random seed");
    cmd->add_option("--epochs", o.epochs, "Training epochs");
    cmd->add_option("--batch", o.batch, "Mini-batch size");
    cmd->add_option("--lr", o.lr, "Initial learning rate (cosine-annealed per epoch)");
    cmd->add_option("--lspars", o.lspars, "Sparsity weight on the bottleneck");
    cmd->add_option("--lortho", o.lortho, "Orthogonality weight on the bottleneck");
    cmd->add_option("--masks", o.masks, "Masks per channel (M)");
    cmd->add_option("--concepts", o.concepts, "Concepts (K)");
    cmd->add_option("--tau", o.tau, "Relaxation temperature");
    cmd->add_option("--noise", o.noise, "Mask noise")->check(CLI::IsMember({"gumbel", "logistic"}));
    cmd->add_option("--mask-pool", o.mask_pool, "Mask scoring for explanation metrics")
        ->check(CLI::IsMember({"weighted", "union"}));
    cmd->add_option("--aggregate", o.aggregate, "Scale of the masked sums")
        ->check(CLI::IsMember({"raw", "standardized"}));
    cmd->add_option("--widths", o.widths, "U-Net / CNN encoder widths")->delimiter(',');
    cmd->add_option("--ridge-lambda", o.ridge_lambda, "Ridge penalty");
    cmd->add_option("--lasso-lambda", o.lasso_lambda, "Lasso penalty");
    cmd->add_option("--ig-steps", o.ig_steps, "Integrated Gradients steps");
    cmd->add_flag("--desk", o.desk, "Desk-scale preset: widths 4,8,16, 50 epochs, lr 3e-3");
    cmd->add_flag("--no-timing", o.no_timing, "Log wall_ms as 0 so reruns compare byte for byte");
}

RunSpec make_spec(ModelKind model, const Options& o, const CLI::App* cmd) {
    RunSpec s;
    if (o.desk) s = desk_scale_spec(model, o.seed);
    s.model = model;
    s.train.seed = o.seed;
    // Explicit flags override the preset.
    auto given = [cmd](const char* flag) { return cmd->count(flag) > 0; };
    if (!o.desk || given("--epochs")) s.train.epochs = o.epochs;
    if (!o.desk || given("--lr")) s.train.lr = o.lr;
    if (!o.desk || given("--widths")) s.widths = o.widths;
    s.train.batch = o.batch;
    s.train.timing = !o.no_timing;
    s.lambda_spars = o.lspars;
    s.lambda_ortho = o.lortho;
    s.masks = o.masks;
    s.concepts = o.concepts;
    s.tau = o.tau;
    s.noise = parse_noise_kind(o.noise);
    s.mask_pool = parse_mask_pool(o.mask_pool);
    s.aggregate = parse_aggregation_scale(o.aggregate);
    s.ridge_lambda = o.ridge_lambda;
    s.lasso_lambda = o.lasso_lambda;
    s.ig_steps = o.ig_steps;
    return s;
}

void emit(const Options& o, const std::string& json_text, const std::string& human) {
    if (o.json_out) std::cout << json_text << '\n';
    else if (!o.quiet) std::cout << human;
}

// ---- gen ----------------------------------------------------------------------

int cmd_gen(const std::string& name, const Options& o) {
    const DatasetKind kind = parse_dataset_kind(name);
    if (!(o.scale > 0.0)) throw BadInput("--scale must be positive");
    GeneratorConfig g;
    g.seed = o.seed;
    g.n_train = static_cast<std::size_t>(std::llround(50000 * o.scale));
    g.n_test = static_cast<std::size_t>(std::llround(10000 * o.scale));
    const std::string dir = o.out.empty() ? default_out() : o.out;
    json report;
    report["dataset"] = name;
    report["seed"] = o.seed;
    std::ostringstream human;
    for (Split split : {Split::Train, Split::Test}) {
        const TimeSeriesDataset ds = make_dataset(kind, g, split);
        const std::string path = (fs::path(dir) / (name + "." + to_string(split) + ".mgts")).string();
        save_dataset(ds, path);
        const double mean = std::accumulate(ds.y.begin(), ds.y.end(), 0.0) / std::max<double>(1.0, ds.n);
        double var = 0.0;
        for (double y : ds.y) var += (y - mean) * (y - mean);
        const double sd = std::sqrt(var / std::max<double>(1.0, ds.n));
        const auto [lo, hi] = std::minmax_element(ds.y.begin(), ds.y.end());
        json s;
        s["path"] = path;
        s["n"] = ds.n;
        s["y_mean"] = mean;
        s["y_sd"] = sd;
        s["y_min"] = ds.n ? *lo : 0.0;
        s["y_max"] = ds.n ? *hi : 0.0;
        report[to_string(split)] = s;
        human << to_string(split) << ": " << ds.n << " samples -> " << path << "  y mean " << fmt("%.4f", mean)
              << " sd " << fmt("%.4f", sd) << '\n';
    }
    emit(o, report.dump(2), human.str());
    return kExitOk;
}

// ---- train ----------------------------------------------------------------------

int cmd_train(const std::string& model_name, const std::string& data, const Options& o, const CLI::App* cmd) {
    const ModelKind kind = parse_model_kind(model_name);
    const RunSpec spec = make_spec(kind, o, cmd);
    spec.train.validate();
    const TimeSeriesDataset train = load_split(data, Split::Train);
    const TimeSeriesDataset test = load_split(data, Split::Test);
    const std::string dir =
        o.out.empty() ? (fs::path(default_out()) / (model_name + "_" + train.name)).string() : o.out;

    const auto t0 = std::chrono::steady_clock::now();
    const EpochCallback on_epoch = [&](const EpochRecord& r) {
        if (!o.quiet && !o.json_out)
            std::cerr << "epoch " << r.epoch << "  loss " << fmt("%.6f", r.train_loss) << "  test R2 "
                      << fmt("%.4f", r.test_r2) << '\n';
    };
    const FittedModel m = fit_model(spec, train, &test, on_epoch);
    MetricsReport report = evaluate(m, test, spec);
    if (spec.train.timing)
        report.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

    save_checkpoint(to_checkpoint(m, spec), (fs::path(dir) / "checkpoint.mgck").string());
    binio::write_text((fs::path(dir) / "runlog.jsonl").string(), to_jsonl(m.log));
    binio::write_text((fs::path(dir) / "metrics.json").string(), report.to_json() + "\n");
    if (m.lasso && !m.lasso->converged)
        std::cerr << "warning: lasso stopped after " << m.lasso->sweeps << " sweeps without converging (KKT residual "
                  << m.lasso->kkt_residual << ")\n";
    emit(o, report.to_json(),
         model_name + " on " + train.name + ": RMSE " + fmt("%.4f", report.rmse_raw) + "  R2 " + fmt("%.4f", report.r2) +
             "\nwrote " + dir + "\n");
    return kExitOk;
}

// ---- eval -----------------------------------------------------------------------

int cmd_eval(const std::string& ckpt, const std::string& data, const Options& o, const CLI::App* cmd) {
    const Checkpoint ck = load_checkpoint(ckpt);
    RunSpec spec = spec_from_checkpoint(ck);
    if (cmd->count("--mask-pool")) spec.mask_pool = parse_mask_pool(o.mask_pool);
    if (cmd->count("--ig-steps")) spec.ig_steps = o.ig_steps;
    const FittedModel m = from_checkpoint(ck);
    const TimeSeriesDataset test = load_split(data, Split::Test);
    if (test.c != m.standardizer.channels())
        throw BadInput("checkpoint expects " + std::to_string(m.standardizer.channels()) + " channels, dataset has " +
                       std::to_string(test.c));
    const auto t0 = std::chrono::steady_clock::now();
    MetricsReport report = evaluate(m, test, spec);
    if (!o.no_timing)
        report.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    std::string human = ck.kind + " on " + test.name + ": RMSE " + fmt("%.4f", report.rmse_raw) + "  R2 " +
                        fmt("%.4f", report.r2) + "\n";
    if (report.explanation)
        human += "explanation: AUC " + fmt("%.4f", report.explanation->auc_mean) + "  F1 " +
                 fmt("%.4f", report.explanation->f1_mean) + "  (" + std::to_string(report.explanation->n_evaluated) +
                 " evaluated, " + std::to_string(report.explanation->n_skipped) + " skipped)\n";
    emit(o, report.to_json(), human);
    return kExitOk;
}

// ---- explain --------------------------------------------------------------------

std::string num(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

int cmd_explain(const std::string& ckpt, const std::string& data, std::size_t sample_id, const Options& o) {
    const Checkpoint ck = load_checkpoint(ckpt);
    const FittedModel m = from_checkpoint(ck);
    const TimeSeriesDataset ds = load_split(data, Split::Test);
    if (sample_id >= ds.n)
        throw BadInput("sample " + std::to_string(sample_id) + " out of range (dataset has " + std::to_string(ds.n) +
                       " samples)");
    if (ds.c != m.standardizer.channels()) throw BadInput("checkpoint and dataset channel counts differ");
    const std::string dir =
        o.out.empty() ? (fs::path(default_out()) / ("explain_" + ds.name + "_" + std::to_string(sample_id))).string()
                      : o.out;
    const Tensor x = m.standardizer.transform(ds.sample(sample_id));
    json summary;
    summary["sample_id"] = sample_id;

    if (m.cnn) {
        const RunSpec spec = spec_from_checkpoint(ck);
        const Tensor attr = cnn_attribution(*m.cnn, x, spec.ig_steps);
        const Tensor norm = normalize_attribution(attr);
        std::vector<AttributionRow> rows;
        for (std::size_t c = 0; c < ds.c; ++c)
            for (std::size_t t = 0; t < ds.t; ++t)
                rows.push_back({sample_id, c, t, attr[c * ds.t + t], norm[c * ds.t + t]});
        const std::string path = (fs::path(dir) / "attributions.csv").string();
        binio::write_text(path, attribution_csv(rows));
        summary["attributions"] = path;
        emit(o, summary.dump(2), "wrote " + path + "\n");
        return kExitOk;
    }
    if (!m.magnets) throw BadInput("explain needs a magnets or cnn checkpoint, got " + ck.kind);

    const MagnetsModel& model = *m.magnets;
    const MagnetsConfig& cfg = model.config();
    const Explanation e = model.explain(x);
    const std::size_t C = cfg.channels, M = cfg.masks, K = cfg.concepts, T = cfg.length;
    const Tensor& beta = model.beta().value;

    std::string csv = "channel,mask,concept,beta\n";
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t mm = 0; mm < M; ++mm)
            for (std::size_t k = 0; k < K; ++k)
                csv += std::to_string(c) + "," + std::to_string(mm) + "," + std::to_string(k) + "," +
                       num(beta[(c * M + mm) * K + k]) + "\n";
    binio::write_text((fs::path(dir) / "bottleneck_weights.csv").string(), csv);

    csv = "channel,mask,time,mask_value,relaxed\n";
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t mm = 0; mm < M; ++mm)
            for (std::size_t t = 0; t < T; ++t) {
                const std::size_t i = (c * M + mm) * T + t;
                csv += std::to_string(c) + "," + std::to_string(mm) + "," + std::to_string(t) + "," +
                       num(e.masks[i]) + "," + num(e.relaxed[i]) + "\n";
            }
    binio::write_text((fs::path(dir) / "masks.csv").string(), csv);

    csv = "channel,mask,end_to_end_weight,z\n";
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t mm = 0; mm < M; ++mm)
            csv += std::to_string(c) + "," + std::to_string(mm) + "," + num(e.feature_weights[c * M + mm]) + "," +
                   num(e.z[c * M + mm]) + "\n";
    binio::write_text((fs::path(dir) / "feature_weights.csv").string(), csv);

    json concepts;
    concepts["sample_id"] = sample_id;
    concepts["concepts"] = e.concepts.data();
    concepts["concept_bias"] = model.concept_bias().value.data();
    concepts["head_weights"] = model.head_weight().value.data();
    concepts["contributions"] = e.contributions.data();
    concepts["w0"] = e.bias;
    concepts["prediction_scaled"] = e.prediction;
    concepts["prediction_raw"] = m.standardizer.unscale_target(e.prediction);
    concepts["y_mean"] = m.standardizer.y_mean;
    concepts["target_raw"] = ds.y[sample_id];
    binio::write_text((fs::path(dir) / "concepts.json").string(), concepts.dump(2) + "\n");

    summary["dir"] = dir;
    summary["prediction_raw"] = m.standardizer.unscale_target(e.prediction);
    summary["target_raw"] = ds.y[sample_id];
    emit(o, summary.dump(2),
         "prediction " + fmt("%.4f", m.standardizer.unscale_target(e.prediction)) + " (target " +
             fmt("%.4f", ds.y[sample_id]) + ")\nwrote " + dir + "\n");
    return kExitOk;
}

// ---- repro ----------------------------------------------------------------------

int cmd_repro(const Options& o, std::size_t seeds, const std::vector<std::string>& datasets) {
    ReproConfig cfg;
    cfg.scale = o.scale;
    cfg.epochs = o.epochs;
    cfg.timing = !o.no_timing;
    cfg.seeds.clear();
    for (std::size_t i = 0; i < seeds; ++i) cfg.seeds.push_back(o.seed + i);
    if (!datasets.empty()) {
        cfg.datasets.clear();
        for (const std::string& d : datasets) cfg.datasets.push_back(parse_dataset_kind(d));
    }
    const ReproResult r = run_repro(cfg, [&](const std::string& line) {
        if (!o.quiet) std::cerr << line << '\n';
    });
    const std::string dir = o.out.empty() ? (fs::path(default_out()) / "repro").string() : o.out;
    binio::write_text((fs::path(dir) / "repro.json").string(), r.to_json() + "\n");
    binio::write_text((fs::path(dir) / "table.txt").string(), r.table());
    emit(o, r.to_json(), r.table() + "wrote " + dir + "\n");
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MAGNETS: masked concept-bottleneck regression for time series"};
    app.require_subcommand(1);
    app.fallthrough();
    Options o;
    app.add_flag("--json", o.json_out, "Machine-readable JSON on stdout");
    app.add_flag("--quiet", o.quiet, "No progress output");

    std::string name, data, model, ckpt;
    std::size_t sample_id = 0, seeds = 3;
    std::vector<std::string> repro_sets;

    CLI::App* gen = app.add_subcommand("gen", "Generate a synthetic dataset (train and test MGTS files)");
    gen->add_option("dataset", name, "univariate | bivariate | trivariate1 | trivariate2")->required();
    gen->add_option("--seed", o.seed, "Random seed");
    gen->add_option("--scale", o.scale, "Fraction of the 50 000 / 10 000 sample counts");
    gen->add_option("--out", o.out, "Output directory (default $MAGNETS_OUT or ./out)");

    CLI::App* train = app.add_subcommand("train", "Train a model and write checkpoint, run log and metrics");
    train->add_option("model", model, "magnets | cnn | mean | ols | ridge | lasso")->required();
    train->add_option("data", data, "Dataset prefix (e.g. out/univariate) or a train file")->required();
    train->add_option("--out", o.out, "Run directory");
    add_model_flags(train, o);

    CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
    eval->add_option("checkpoint", ckpt, "Checkpoint file")->required();
    eval->add_option("data", data, "Dataset prefix or test file")->required();
    eval->add_option("--mask-pool", o.mask_pool, "Mask scoring")->check(CLI::IsMember({"weighted", "union"}));
    eval->add_option("--ig-steps", o.ig_steps, "Integrated Gradients steps");
    eval->add_flag("--no-timing", o.no_timing, "Report wall_ms as 0");

    CLI::App* explain = app.add_subcommand("explain", "Export the explanation of one test sample");
    explain->add_option("checkpoint", ckpt, "Checkpoint file")->required();
    explain->add_option("data", data, "Dataset prefix or test file")->required();
    explain->add_option("--sample", sample_id, "Sample index");
    explain->add_option("--out", o.out, "Output directory");

    CLI::App* repro = app.add_subcommand("repro", "Desk-scale reproduction of the regression and explanation tables");
    repro->add_option("--seed", o.seed, "First seed")->default_val(1);
    repro->add_option("--seeds", seeds, "Number of seeds");
    repro->add_option("--scale", o.scale, "Fraction of the full sample counts")->default_val(0.1);
    repro->add_option("--epochs", o.epochs, "Epochs per run")->default_val(50);
    repro->add_option("--datasets", repro_sets, "Subset of datasets")->delimiter(',');
    repro->add_option("--out", o.out, "Output directory");
    repro->add_flag("--no-timing", o.no_timing, "Omit timings");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitBadInput;
    }

    try {
        if (*gen) return cmd_gen(name, o);
        if (*train) return cmd_train(model, data, o, train);
        if (*eval) return cmd_eval(ckpt, data, o, eval);
        if (*explain) return cmd_explain(ckpt, data, sample_id, o);
        if (*repro) return cmd_repro(o, seeds, repro_sets);
    } catch (const TrainingDiverged& e) {
        std::cerr << "error: training diverged: " << e.what() << '\n';
        return kExitDiverged;
    } catch (const DatasetFormatError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitBadInput;
    } catch (const CheckpointFormatError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitBadInput;
    } catch (const BadInput& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitBadInput;
    } catch (const std::invalid_argument& e) {  // includes ShapeError
        std::cerr << "error: " << e.what() << '\n';
        return kExitBadInput;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitFailure;
}
