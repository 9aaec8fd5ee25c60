#include <gtest/gtest.h>

#include <cstdio>
#include <cstring>
#include <filesystem>

#include "json.hpp"
#include "magnets/pipeline.hpp"
#include "oracles.hpp"

using namespace magnets;

namespace {

struct Fixture {
    TimeSeriesDataset train, test;
};

const Fixture& fixture() {
    static const Fixture f = [] {
        GeneratorConfig gc;
        gc.seed = 21;
        gc.n_train = 300;
        gc.n_test = 40;
        return Fixture{make_dataset(DatasetKind::Bivariate, gc, Split::Train),
                       make_dataset(DatasetKind::Bivariate, gc, Split::Test)};
    }();
    return f;
}

RunSpec spec_for(ModelKind kind) {
    RunSpec spec = desk_scale_spec(kind, 7);
    spec.train.epochs = 2;
    spec.train.timing = false;
    spec.ridge_lambda = 0.5;
    spec.lasso_lambda = 0.01;
    return spec;
}

Checkpoint sample_checkpoint() {
    Checkpoint ck;
    ck.kind = "magnets";
    ck.config["note"] = "x";
    ck.standardizer.mean = {0.5, -1.0};
    ck.standardizer.sd = {2.0, 0.25};
    ck.standardizer.y_mean = 3.5;
    ck.tensors.emplace_back("a", Tensor(Shape{2, 3}, std::vector<double>{1, -2, 3.25, 0, 1e-300, -0.0}));
    ck.tensors.emplace_back("b", Tensor(Shape{1}, std::vector<double>{42.0}));
    return ck;
}

CheckpointError code_of(const std::vector<std::uint8_t>& bytes) {
    try {
        deserialize_checkpoint(bytes);
    } catch (const CheckpointFormatError& e) {
        return e.code();
    }
    ADD_FAILURE() << "corruption was not detected";
    return CheckpointError::Io;
}

std::uint64_t le_u64(const std::vector<std::uint8_t>& b, std::size_t at) {
    return static_cast<std::uint64_t>(oracle::le_u32(b, at)) | static_cast<std::uint64_t>(oracle::le_u32(b, at + 4))
                                                                   << 32;
}

}  // namespace

TEST(CheckpointFormat, Layout) {
    const Checkpoint ck = sample_checkpoint();
    const std::vector<std::uint8_t> b = serialize_checkpoint(ck);
    ASSERT_EQ(std::memcmp(b.data(), "MGCK", 4), 0);
    EXPECT_EQ(oracle::le_u32(b, 4), 1u);
    const std::uint64_t hlen = le_u64(b, 8);
    const auto header = nlohmann::json::parse(std::string(b.begin() + 16, b.begin() + 16 + static_cast<long>(hlen)));
    EXPECT_EQ(header["kind"], "magnets");
    EXPECT_EQ(header["version"], 1);
    ASSERT_EQ(header["manifest"].size(), 2u);
    EXPECT_EQ(header["manifest"][0]["name"], "a");
    EXPECT_EQ(header["manifest"][0]["shape"], nlohmann::json::array({2, 3}));
    EXPECT_EQ(header["manifest"][1]["offset"], 48);
    EXPECT_EQ(header["payload_bytes"], 56);
    ASSERT_EQ(b.size(), 16 + hlen + 56 + 4);
    const std::size_t payload = 16 + hlen;
    const std::vector<double> expected{1, -2, 3.25, 0, 1e-300, -0.0, 42.0};
    for (std::size_t i = 0; i < expected.size(); ++i) {
        const std::uint64_t bits = le_u64(b, payload + 8 * i);
        double v;
        std::memcpy(&v, &bits, 8);
        EXPECT_EQ(std::memcmp(&v, &expected[i], 8), 0) << i;
    }
    EXPECT_EQ(oracle::le_u32(b, b.size() - 4), oracle::crc32(b.data(), b.size() - 4));
}

TEST(CheckpointFormat, RoundTripIsByteExact) {
    const Checkpoint ck = sample_checkpoint();
    const std::vector<std::uint8_t> b = serialize_checkpoint(ck);
    const Checkpoint back = deserialize_checkpoint(b);
    EXPECT_EQ(back.kind, ck.kind);
    EXPECT_EQ(back.config, ck.config);
    EXPECT_EQ(back.standardizer.mean, ck.standardizer.mean);
    EXPECT_EQ(back.standardizer.sd, ck.standardizer.sd);
    EXPECT_EQ(back.standardizer.y_mean, ck.standardizer.y_mean);
    ASSERT_EQ(back.tensors.size(), 2u);
    EXPECT_EQ(back.tensor("a").shape(), (Shape{2, 3}));
    EXPECT_TRUE(std::signbit(back.tensor("a")[5]));
    EXPECT_EQ(serialize_checkpoint(back), b);

    const std::string path = (std::filesystem::temp_directory_path() / "magnets_ck_roundtrip.mgck").string();
    save_checkpoint(ck, path);
    EXPECT_EQ(serialize_checkpoint(load_checkpoint(path)), b);
    std::remove(path.c_str());
}

TEST(CheckpointFormat, CorruptionIsDetected) {
    const std::vector<std::uint8_t> good = serialize_checkpoint(sample_checkpoint());
    for (std::size_t pos = 0; pos < good.size(); ++pos) {
        std::vector<std::uint8_t> bad = good;
        bad[pos] ^= 0x10;
        const CheckpointError code = code_of(bad);
        if (pos < 4)
            EXPECT_EQ(code, CheckpointError::BadMagic) << pos;
        else if (pos < 8)
            EXPECT_EQ(code, CheckpointError::VersionMismatch) << pos;
        else if (pos >= 16)
            EXPECT_EQ(code, CheckpointError::Checksum) << pos;
    }
    for (std::size_t keep : {std::size_t{0}, std::size_t{3}, std::size_t{10}, std::size_t{40}, good.size() - 1}) {
        const CheckpointError code = code_of(std::vector<std::uint8_t>(good.begin(), good.begin() + keep));
        EXPECT_TRUE(code == CheckpointError::Truncated || code == CheckpointError::Checksum) << keep;
    }
    std::vector<std::uint8_t> longer = good;
    longer.push_back(0);
    code_of(longer);
}

TEST(CheckpointFormat, MissingFileIsIo) {
    try {
        load_checkpoint("/nonexistent/dir/model.mgck");
        FAIL();
    } catch (const CheckpointFormatError& e) {
        EXPECT_EQ(e.code(), CheckpointError::Io);
    }
}

TEST(CheckpointParameters, RestoreChecksNamesAndShapes) {
    MagnetsConfig c;
    c.length = 16;
    c.unet_widths = {4, 8, 16};
    MagnetsModel a(c, 1), b(c, 2);
    Checkpoint ck;
    store_parameters(ck, std::as_const(a).parameters());
    restore_parameters(ck, b.parameters());
    const auto pa = std::as_const(a).parameters(), pb = std::as_const(b).parameters();
    for (std::size_t k = 0; k < pa.size(); ++k) EXPECT_EQ(pa[k]->value.vec(), pb[k]->value.vec()) << pa[k]->name;

    MagnetsConfig wider = c;
    wider.unet_widths = {4, 8, 32};
    MagnetsModel w(wider, 1);
    try {
        restore_parameters(ck, w.parameters());
        FAIL();
    } catch (const CheckpointFormatError& e) {
        EXPECT_EQ(e.code(), CheckpointError::Malformed);
    }
    Checkpoint partial = ck;
    partial.tensors.pop_back();
    EXPECT_THROW(restore_parameters(partial, b.parameters()), CheckpointFormatError);
}

class PipelineCheckpoint : public ::testing::TestWithParam<ModelKind> {};

TEST_P(PipelineCheckpoint, ReloadReproducesPredictions) {
    const Fixture& f = fixture();
    const RunSpec spec = spec_for(GetParam());
    const FittedModel m = fit_model(spec, f.train, &f.test);
    const std::vector<std::uint8_t> bytes = serialize_checkpoint(to_checkpoint(m, spec));
    const Checkpoint ck = deserialize_checkpoint(bytes);
    const FittedModel back = from_checkpoint(ck);
    EXPECT_EQ(back.kind, m.kind);
    EXPECT_EQ(predict_raw(back, f.test), predict_raw(m, f.test));
    EXPECT_EQ(serialize_checkpoint(to_checkpoint(back, spec_from_checkpoint(ck))), bytes);
    const RunSpec restored = spec_from_checkpoint(ck);
    EXPECT_EQ(restored.model, spec.model);
    EXPECT_EQ(restored.ig_steps, spec.ig_steps);
    if (GetParam() == ModelKind::Magnets) {
        EXPECT_EQ(restored.widths, spec.widths);
        EXPECT_EQ(restored.aggregate, spec.aggregate);
        EXPECT_EQ(evaluate(back, f.test, restored).to_json(), evaluate(m, f.test, spec).to_json());
    }
}

TEST_P(PipelineCheckpoint, SameSeedSameBytes) {
    const Fixture& f = fixture();
    const RunSpec spec = spec_for(GetParam());
    const FittedModel a = fit_model(spec, f.train, &f.test);
    const FittedModel b = fit_model(spec, f.train, &f.test);
    EXPECT_EQ(serialize_checkpoint(to_checkpoint(a, spec)), serialize_checkpoint(to_checkpoint(b, spec)));
}

INSTANTIATE_TEST_SUITE_P(AllModels, PipelineCheckpoint,
                         ::testing::Values(ModelKind::Magnets, ModelKind::Cnn, ModelKind::Mean, ModelKind::Ols,
                                           ModelKind::Ridge, ModelKind::Lasso),
                         [](const auto& info) { return to_string(info.param); });
