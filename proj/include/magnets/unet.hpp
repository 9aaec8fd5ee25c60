#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "magnets/autodiff.hpp"
#include "magnets/random.hpp"

namespace magnets {

// k-tap "same" convolution with bias.
struct Conv1dLayer {
    Conv1dLayer() = default;
    Conv1dLayer(const std::string& name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                Rng& rng);

    ad::Var operator()(ad::Tape& tape, ad::Var x) const;
    void collect(std::vector<ad::Parameter*>& out);
    void collect(std::vector<const ad::Parameter*>& out) const;

    ad::Parameter weight;  // [out, in, k]
    ad::Parameter bias;    // [out]
};

// Stride-2 transposed convolution, kernel 2, no bias.
struct UpsampleLayer {
    UpsampleLayer() = default;
    UpsampleLayer(const std::string& name, std::size_t in_channels, std::size_t out_channels, Rng& rng);

    ad::Var operator()(ad::Tape& tape, ad::Var x) const;
    void collect(std::vector<ad::Parameter*>& out);
    void collect(std::vector<const ad::Parameter*>& out) const;

    ad::Parameter weight;  // [in, out, 2]
};

// conv-k3 -> ReLU -> conv-k3 -> ReLU
struct ConvBlock {
    ConvBlock() = default;
    ConvBlock(const std::string& name, std::size_t in_channels, std::size_t out_channels, Rng& rng);

    ad::Var operator()(ad::Tape& tape, ad::Var x) const;
    void collect(std::vector<ad::Parameter*>& out);
    void collect(std::vector<const ad::Parameter*>& out) const;

    Conv1dLayer first;
    Conv1dLayer second;
};

// Stack of ConvBlocks, each followed by 2x max-pooling.
class ConvEncoder {
public:
    ConvEncoder() = default;
    ConvEncoder(const std::string& name, std::size_t in_channels, const std::vector<std::size_t>& widths, Rng& rng);

    struct Output {
        std::vector<ad::Var> skips;  // pre-pooling activations, shallow to deep
        ad::Var pooled;
    };
    Output operator()(ad::Tape& tape, ad::Var x) const;

    std::size_t depth() const noexcept { return blocks_.size(); }
    std::size_t out_channels() const { return widths_.back(); }
    void collect(std::vector<ad::Parameter*>& out);
    void collect(std::vector<const ad::Parameter*>& out) const;

private:
    std::vector<std::size_t> widths_;
    std::vector<ConvBlock> blocks_;
};

// 1D U-Net: encoder, a bottleneck block at the deepest width, a mirrored
// decoder (upsample, concatenate skip, ConvBlock) and a final 1x1 convolution.
class UNet {
public:
    UNet() = default;
    UNet(std::size_t in_channels, std::size_t out_channels, const std::vector<std::size_t>& widths, Rng& rng);

    // [B, in, T] -> [B, out, T]; T must be divisible by 2^depth.
    ad::Var operator()(ad::Tape& tape, ad::Var x) const;

    std::size_t depth() const noexcept { return encoder_.depth(); }
    const ConvEncoder& encoder() const noexcept { return encoder_; }
    void collect(std::vector<ad::Parameter*>& out);
    void collect(std::vector<const ad::Parameter*>& out) const;

private:
    ConvEncoder encoder_;
    ConvBlock bottleneck_;
    std::vector<UpsampleLayer> ups_;     // deep to shallow
    std::vector<ConvBlock> decoders_;    // deep to shallow
    Conv1dLayer head_;
};

std::size_t parameter_count(const std::vector<const ad::Parameter*>& params);

}  // namespace magnets
