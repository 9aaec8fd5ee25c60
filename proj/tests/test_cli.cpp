#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

#include "json.hpp"
#include "magnets/binio.hpp"
#include "magnets/pipeline.hpp"

using namespace magnets;
namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
    static const fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / ("magnets_cli_" + std::to_string(::getpid()));
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

int run(const std::string& args) {
    const std::string cmd = std::string(MAGNETS_CLI) + " --quiet " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string path(const std::string& rel) { return (workdir() / rel).string(); }

std::string slurp(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

std::vector<std::vector<std::string>> read_csv(const std::string& p) {
    std::ifstream in(p);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(cell);
        rows.push_back(row);
    }
    return rows;
}

// Small univariate dataset shared by the tests below.
const std::string& data_prefix() {
    static const std::string prefix = [] {
        EXPECT_EQ(run("gen univariate --seed 5 --scale 0.01 --out " + path("data")), 0);
        return path("data/univariate");
    }();
    return prefix;
}

}  // namespace

TEST(Cli, GenIsDeterministicAndScaled) {
    ASSERT_EQ(run("gen bivariate --seed 9 --scale 0.01 --out " + path("g1")), 0);
    ASSERT_EQ(run("gen bivariate --seed 9 --scale 0.01 --out " + path("g2")), 0);
    ASSERT_EQ(run("gen bivariate --seed 10 --scale 0.01 --out " + path("g3")), 0);
    for (const char* split : {"train", "test"}) {
        const std::string f = std::string("bivariate.") + split + ".mgts";
        EXPECT_EQ(slurp(path("g1/" + f)), slurp(path("g2/" + f))) << split;
        EXPECT_NE(slurp(path("g1/" + f)), slurp(path("g3/" + f))) << split;
    }
    EXPECT_EQ(load_dataset(path("g1/bivariate.train.mgts")).n, 500u);
    EXPECT_EQ(load_dataset(path("g1/bivariate.test.mgts")).n, 100u);
}

TEST(Cli, BadInputsExitWithTwo) {
    EXPECT_EQ(run("gen quadvariate --out " + path("bad")), 2);
    EXPECT_EQ(run("train magnets " + path("missing/univariate") + " --out " + path("bad")), 2);
    EXPECT_EQ(run("train forest " + data_prefix() + " --out " + path("bad")), 2);
    {
        std::ofstream junk(path("junk.mgts"));
        junk << "not a dataset";
    }
    EXPECT_EQ(run("train mean " + path("junk.mgts") + " --out " + path("bad")), 2);
    EXPECT_EQ(run("eval " + path("junk.mgts") + " " + data_prefix()), 2);
}

TEST(Cli, TrainMeanWritesMetricsAndEvalReproducesThem) {
    ASSERT_EQ(run("train mean " + data_prefix() + " --no-timing --out " + path("mean")), 0);
    const auto metrics = nlohmann::json::parse(slurp(path("mean/metrics.json")));
    EXPECT_EQ(metrics["model"], "mean");
    EXPECT_EQ(metrics["dataset"], "univariate");
    const TimeSeriesDataset train = load_dataset(data_prefix() + ".train.mgts");
    const TimeSeriesDataset test = load_dataset(data_prefix() + ".test.mgts");
    double mean = 0.0;
    for (double y : train.y) mean += y;
    mean /= static_cast<double>(train.n);
    EXPECT_NEAR(metrics["rmse_raw"].get<double>(), rmse(test.y, std::vector<double>(test.n, mean)), 1e-9);

    const std::string cmd = std::string(MAGNETS_CLI) + " --json eval " + path("mean/checkpoint.mgck") + " " +
                            data_prefix() + " --no-timing > " + path("mean/eval.json");
    ASSERT_EQ(std::system(cmd.c_str()), 0);
    EXPECT_EQ(nlohmann::json::parse(slurp(path("mean/eval.json"))), metrics);
}

TEST(Cli, TrainMagnetsIsReproducibleAndExplains) {
    const std::string flags = " --desk --epochs 2 --no-timing --seed 4 ";
    ASSERT_EQ(run("train magnets " + data_prefix() + flags + "--out " + path("m1")), 0);
    ASSERT_EQ(run("train magnets " + data_prefix() + flags + "--out " + path("m2")), 0);
    for (const char* f : {"checkpoint.mgck", "runlog.jsonl", "metrics.json"})
        EXPECT_EQ(slurp(path(std::string("m1/") + f)), slurp(path(std::string("m2/") + f))) << f;

    std::istringstream log(slurp(path("m1/runlog.jsonl")));
    std::string line;
    std::size_t epochs = 0;
    while (std::getline(log, line)) {
        EXPECT_EQ(nlohmann::json::parse(line)["epoch"], ++epochs);
    }
    EXPECT_EQ(epochs, 2u);

    const auto metrics = nlohmann::json::parse(slurp(path("m1/metrics.json")));
    EXPECT_TRUE(metrics.contains("expl_auc_mean"));
    const std::string cmd = std::string(MAGNETS_CLI) + " --json eval " + path("m1/checkpoint.mgck") + " " +
                            data_prefix() + " --no-timing > " + path("m1/eval.json");
    ASSERT_EQ(std::system(cmd.c_str()), 0);
    EXPECT_EQ(nlohmann::json::parse(slurp(path("m1/eval.json"))), metrics);

    ASSERT_EQ(run("explain " + path("m1/checkpoint.mgck") + " " + data_prefix() + " --sample 3 --out " +
                  path("m1/explain")),
              0);
    const auto concepts = nlohmann::json::parse(slurp(path("m1/explain/concepts.json")));
    EXPECT_EQ(concepts["sample_id"], 3);
    double from_concepts = concepts["w0"].get<double>();
    for (const auto& c : concepts["contributions"]) from_concepts += c.get<double>();
    const double scaled = concepts["prediction_scaled"].get<double>();
    EXPECT_NEAR(from_concepts, scaled, 1e-12);

    // End-to-end weights times masked sums plus the concept-bias path reconstruct the prediction.
    double from_features = concepts["w0"].get<double>();
    for (std::size_t k = 0; k < concepts["head_weights"].size(); ++k)
        from_features += concepts["head_weights"][k].get<double>() * concepts["concept_bias"][k].get<double>();
    const auto rows = read_csv(path("m1/explain/feature_weights.csv"));
    ASSERT_EQ(rows.size(), 1u + 10u);
    EXPECT_EQ(rows[0], (std::vector<std::string>{"channel", "mask", "end_to_end_weight", "z"}));
    for (std::size_t r = 1; r < rows.size(); ++r) from_features += std::stod(rows[r][2]) * std::stod(rows[r][3]);
    EXPECT_NEAR(from_features, scaled, 1e-9);

    const FittedModel m = from_checkpoint(load_checkpoint(path("m1/checkpoint.mgck")));
    const std::vector<double> pred = predict_raw(m, load_dataset(data_prefix() + ".test.mgts"));
    EXPECT_NEAR(concepts["prediction_raw"].get<double>(), pred[3], 1e-9 * std::abs(pred[3]));

    const auto masks = read_csv(path("m1/explain/masks.csv"));
    EXPECT_EQ(masks.size(), 1u + 10u * 128u);
    for (std::size_t r = 1; r < masks.size(); ++r) EXPECT_TRUE(masks[r][3] == "0" || masks[r][3] == "1");

    ASSERT_EQ(run("train mean " + data_prefix() + " --out " + path("m1/mean")), 0);
    EXPECT_EQ(run("explain " + path("m1/mean/checkpoint.mgck") + " " + data_prefix() + " --out " + path("bad")), 2);
    EXPECT_EQ(run("explain " + path("m1/checkpoint.mgck") + " " + data_prefix() + " --sample 100000 --out " +
                  path("bad")),
              2);
}

namespace {

class CleanWorkdir : public ::testing::Environment {
public:
    void TearDown() override { fs::remove_all(workdir()); }
};

const auto* const clean_workdir = ::testing::AddGlobalTestEnvironment(new CleanWorkdir);

}  // namespace
