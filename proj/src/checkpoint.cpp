#include "magnets/checkpoint.hpp"

#include <cstring>

#include "magnets/binio.hpp"

namespace magnets {

namespace {

constexpr char kMagic[4] = {'M', 'G', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

using json = nlohmann::ordered_json;

[[noreturn]] void malformed(const std::string& what) {
    throw CheckpointFormatError(CheckpointError::Malformed, "checkpoint: " + what);
}

}  // namespace

const Tensor& Checkpoint::tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return t;
    malformed("missing tensor '" + name + "'");
}

std::string to_string(CheckpointError e) {
    switch (e) {
        case CheckpointError::Io: return "io";
        case CheckpointError::BadMagic: return "bad-magic";
        case CheckpointError::VersionMismatch: return "version-mismatch";
        case CheckpointError::Truncated: return "truncated";
        case CheckpointError::Checksum: return "checksum";
        case CheckpointError::Malformed: return "malformed";
    }
    return "unknown";
}

json standardizer_to_json(const Standardizer& st) {
    json j;
    j["mean"] = st.mean;
    j["sd"] = st.sd;
    j["y_mean"] = st.y_mean;
    return j;
}

Standardizer standardizer_from_json(const json& j) {
    Standardizer st;
    st.mean = j.at("mean").get<std::vector<double>>();
    st.sd = j.at("sd").get<std::vector<double>>();
    st.y_mean = j.at("y_mean").get<double>();
    if (st.mean.size() != st.sd.size()) malformed("standardizer mean/sd length mismatch");
    return st;
}

json magnets_config_to_json(const MagnetsConfig& c) {
    json j;
    j["channels"] = c.channels;
    j["length"] = c.length;
    j["masks"] = c.masks;
    j["concepts"] = c.concepts;
    j["tau"] = c.tau;
    j["lambda_spars"] = c.lambda_spars;
    j["lambda_ortho"] = c.lambda_ortho;
    j["noise"] = to_string(c.noise);
    j["unet_widths"] = c.unet_widths;
    j["aggregation_scale"] = c.aggregation_scale;
    j["aggregation_offset"] = c.aggregation_offset;
    return j;
}

MagnetsConfig magnets_config_from_json(const json& j) {
    MagnetsConfig c;
    c.channels = j.at("channels").get<std::size_t>();
    c.length = j.at("length").get<std::size_t>();
    c.masks = j.at("masks").get<std::size_t>();
    c.concepts = j.at("concepts").get<std::size_t>();
    c.tau = j.at("tau").get<double>();
    c.lambda_spars = j.at("lambda_spars").get<double>();
    c.lambda_ortho = j.at("lambda_ortho").get<double>();
    c.noise = parse_noise_kind(j.at("noise").get<std::string>());
    c.unet_widths = j.at("unet_widths").get<std::vector<std::size_t>>();
    c.aggregation_scale = j.at("aggregation_scale").get<std::vector<double>>();
    c.aggregation_offset = j.at("aggregation_offset").get<std::vector<double>>();
    return c;
}

void store_parameters(Checkpoint& ck, const std::vector<const ad::Parameter*>& params) {
    for (const ad::Parameter* p : params) ck.tensors.emplace_back(p->name, p->value);
}

void restore_parameters(const Checkpoint& ck, const std::vector<ad::Parameter*>& params) {
    for (ad::Parameter* p : params) {
        const Tensor& t = ck.tensor(p->name);
        if (t.shape() != p->value.shape())
            malformed("parameter '" + p->name + "' has shape " + shape_str(t.shape()) + ", model expects " +
                      shape_str(p->value.shape()));
        p->value = t;
    }
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck) {
    json header;
    header["format"] = "MGCK";
    header["version"] = kVersion;
    header["kind"] = ck.kind;
    header["config"] = ck.config;
    header["standardizer"] = standardizer_to_json(ck.standardizer);
    json manifest = json::array();
    std::size_t offset = 0;
    for (const auto& [name, t] : ck.tensors) {
        json e;
        e["name"] = name;
        e["shape"] = t.shape();
        e["offset"] = offset;
        manifest.push_back(std::move(e));
        offset += t.size() * sizeof(double);
    }
    header["manifest"] = std::move(manifest);
    header["payload_bytes"] = offset;
    const std::string text = header.dump();

    binio::Writer w;
    w.bytes(kMagic, 4);
    w.u32(kVersion);
    w.u64(text.size());
    w.str(text);
    for (const auto& entry : ck.tensors)
        for (double v : entry.second.data()) w.f64(v);
    auto& buf = w.buffer();
    const std::uint32_t crc = binio::crc32(buf.data(), buf.size());
    w.u32(crc);
    return std::move(buf);
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
    binio::Reader r(bytes.data(), bytes.size());
    const std::uint8_t* magic;
    if (!r.take(4, &magic)) throw CheckpointFormatError(CheckpointError::Truncated, "checkpoint truncated in header");
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw CheckpointFormatError(CheckpointError::BadMagic, "not an MGCK checkpoint");
    const std::uint32_t version = r.u32();
    const std::uint64_t header_len = r.u64();
    if (!r.ok()) throw CheckpointFormatError(CheckpointError::Truncated, "checkpoint truncated in header");
    if (version != kVersion)
        throw CheckpointFormatError(CheckpointError::VersionMismatch,
                                    "unsupported checkpoint version " + std::to_string(version));
    if (header_len + 4 > r.remaining())
        throw CheckpointFormatError(CheckpointError::Truncated, "checkpoint truncated in header");
    // Verify before parsing so a flipped byte anywhere reports as a checksum failure.
    const std::size_t body = bytes.size() - 4;
    binio::Reader tail(bytes.data() + body, 4);
    if (binio::crc32(bytes.data(), body) != tail.u32())
        throw CheckpointFormatError(CheckpointError::Checksum, "checkpoint checksum mismatch");

    const std::string text = r.str(header_len);
    json header;
    try {
        header = json::parse(text);
    } catch (const json::exception& e) {
        malformed(std::string("header is not valid JSON: ") + e.what());
    }

    Checkpoint ck;
    try {
        ck.kind = header.at("kind").get<std::string>();
        ck.config = header.at("config");
        ck.standardizer = standardizer_from_json(header.at("standardizer"));
        const std::uint64_t payload = header.at("payload_bytes").get<std::uint64_t>();
        if (payload + 4 != r.remaining())
            throw CheckpointFormatError(CheckpointError::Truncated,
                                        "checkpoint payload is " + std::to_string(r.remaining() - 4) +
                                            " bytes, header declares " + std::to_string(payload));
        std::size_t expected = 0;
        for (const json& e : header.at("manifest")) {
            const Shape shape = e.at("shape").get<Shape>();
            if (e.at("offset").get<std::size_t>() != expected) malformed("manifest offsets are not contiguous");
            Tensor t(shape);
            for (double& v : t.data()) v = r.f64();
            expected += t.size() * sizeof(double);
            ck.tensors.emplace_back(e.at("name").get<std::string>(), std::move(t));
        }
        if (expected != payload) malformed("manifest does not cover the payload");
    } catch (const json::exception& e) {
        malformed(std::string("bad header field: ") + e.what());
    }
    if (!r.ok()) throw CheckpointFormatError(CheckpointError::Truncated, "checkpoint payload truncated");
    return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) { binio::write_file(path, serialize_checkpoint(ck)); }

Checkpoint load_checkpoint(const std::string& path) {
    std::vector<std::uint8_t> bytes;
    try {
        bytes = binio::read_file(path);
    } catch (const std::exception& e) {
        throw CheckpointFormatError(CheckpointError::Io, e.what());
    }
    return deserialize_checkpoint(bytes);
}

}  // namespace magnets
