#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "magnets/autodiff.hpp"
#include "magnets/model.hpp"
#include "magnets/tensor.hpp"
#include "magnets/trainer.hpp"

namespace magnets {

// Checkpoint file: "MGCK", u32 version, u64 header length, JSON header, f64
// little-endian tensor payloads in manifest order, then a CRC32 of every
// preceding byte.
struct Checkpoint {
    std::string kind;              // magnets | cnn | mean | ols | ridge | lasso
    nlohmann::ordered_json config;
    Standardizer standardizer;
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor& tensor(const std::string& name) const;
};

enum class CheckpointError { Io, BadMagic, VersionMismatch, Truncated, Checksum, Malformed };
std::string to_string(CheckpointError e);

class CheckpointFormatError : public std::runtime_error {
public:
    CheckpointFormatError(CheckpointError code, const std::string& what) : std::runtime_error(what), code_(code) {}
    CheckpointError code() const noexcept { return code_; }

private:
    CheckpointError code_;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

nlohmann::ordered_json standardizer_to_json(const Standardizer& st);
Standardizer standardizer_from_json(const nlohmann::ordered_json& j);

nlohmann::ordered_json magnets_config_to_json(const MagnetsConfig& c);
MagnetsConfig magnets_config_from_json(const nlohmann::ordered_json& j);

// Appends parameter values under their names.
void store_parameters(Checkpoint& ck, const std::vector<const ad::Parameter*>& params);
// Copies stored values into params; names and shapes must match exactly.
void restore_parameters(const Checkpoint& ck, const std::vector<ad::Parameter*>& params);

}  // namespace magnets
