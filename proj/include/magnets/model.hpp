#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "magnets/autodiff.hpp"
#include "magnets/random.hpp"
#include "magnets/regressor.hpp"
#include "magnets/unet.hpp"

namespace magnets {

enum class NoiseKind { Gumbel, Logistic };

std::string to_string(NoiseKind kind);
NoiseKind parse_noise_kind(const std::string& s);

// i.i.d. standard Gumbel, -log(-log u), or logistic, log(u / (1 - u)), noise.
Tensor sample_noise(NoiseKind kind, const Shape& shape, Rng& rng);

struct MagnetsConfig {
    std::size_t channels = 1;
    std::size_t length = 128;
    std::size_t masks = 10;    // M, masks per channel
    std::size_t concepts = 3;  // K
    double tau = 1.0;
    double lambda_spars = 0.0;
    double lambda_ortho = 0.0;
    NoiseKind noise = NoiseKind::Logistic;
    std::vector<std::size_t> unet_widths{32, 64, 128};
    // Per-channel affine x * scale + offset applied to the (standardized) input
    // before aggregation; empty means aggregate the input as given. Set to the
    // standardizer's sd and mean to sum raw-scale values.
    std::vector<double> aggregation_scale;
    std::vector<double> aggregation_offset;

    // Length after right-padding to a multiple of 2^depth.
    std::size_t padded_length() const;
    void validate() const;
};

// Per-forward switches for the mask sampler.
struct ForwardOptions {
    bool training = false;
    // Fixed noise with the logits' shape; sampled from the rng when null.
    const Tensor* noise = nullptr;
    // Aggregate the relaxed masks instead of the straight-through binary ones.
    bool relaxed_path = false;
};

struct MagnetsForward {
    ad::Var logits;      // [B,C,M,Tp]
    ad::Var relaxed;     // [B,C,M,Tp]
    ad::Var masks;       // [B,C,M,Tp], binary unless relaxed_path
    ad::Var z;           // [B,C,M]
    ad::Var concepts;    // [B,K]
    ad::Var prediction;  // [B]
};

struct MagnetsLoss {
    ad::Var total;
    ad::Var mse;
    ad::Var spars;
    ad::Var ortho;
};

// Everything needed to read one prediction back to its inputs.
struct Explanation {
    Tensor signal;           // [C,T], the input on the aggregation scale
    Tensor masks;            // [C,M,T] in {0,1}
    Tensor relaxed;          // [C,M,T]
    Tensor z;                // [C,M]
    Tensor concepts;         // [K]
    Tensor contributions;    // [K], w_k * c_k
    Tensor feature_weights;  // [C,M], sum_k w_k * beta[c,m,k]
    double bias = 0.0;       // w0
    double prediction = 0.0;
};

class MagnetsModel : public GradientModel {
public:
    MagnetsModel(MagnetsConfig config, std::uint64_t seed);

    const MagnetsConfig& config() const noexcept { return config_; }

    // Right-pads [B,C,T] with zeros to [B,C,Tp].
    Tensor pad(const Tensor& x) const;

    ad::Var mask_logits(ad::Tape& tape, ad::Var x_padded) const;
    struct MaskPair {
        ad::Var relaxed;
        ad::Var masks;
    };
    MaskPair binarize_masks(ad::Tape& tape, ad::Var logits, const ForwardOptions& opts, Rng* rng) const;
    // Padded input on the aggregation scale.
    Tensor aggregation_input(const Tensor& x) const;
    ad::Var aggregate(ad::Var x_padded, ad::Var masks) const;
    ad::Var bottleneck(ad::Tape& tape, ad::Var z) const;
    ad::Var predict_from_concepts(ad::Tape& tape, ad::Var concepts) const;
    ad::Var sparsity_loss(ad::Tape& tape) const;
    ad::Var orthogonality_loss(ad::Tape& tape) const;

    MagnetsForward forward(ad::Tape& tape, const Tensor& x, const ForwardOptions& opts, Rng* rng) const;
    // Head only: aggregation, bottleneck and prediction on caller-provided masks
    // [B,C,M,T] over the unpadded input.
    MagnetsForward forward_with_masks(ad::Tape& tape, const Tensor& x, const Tensor& masks) const;
    MagnetsLoss loss(ad::Tape& tape, const MagnetsForward& fwd, const Tensor& y) const;

    // Eval-mode explanation of one standardized sample [C,T].
    Explanation explain(const Tensor& x) const;

    std::vector<ad::Parameter*> parameters() override;
    std::vector<const ad::Parameter*> parameters() const override;
    LossBreakdown training_loss(ad::Tape& tape, const Tensor& x, const Tensor& y, Rng& rng) const override;
    Tensor predict(const Tensor& x) const override;

    const UNet& mask_generator() const noexcept { return unet_; }
    ad::Parameter& beta() noexcept { return beta_; }
    ad::Parameter& concept_bias() noexcept { return concept_bias_; }
    ad::Parameter& head_weight() noexcept { return head_weight_; }
    ad::Parameter& head_bias() noexcept { return head_bias_; }
    const ad::Parameter& beta() const noexcept { return beta_; }
    const ad::Parameter& concept_bias() const noexcept { return concept_bias_; }
    const ad::Parameter& head_weight() const noexcept { return head_weight_; }
    const ad::Parameter& head_bias() const noexcept { return head_bias_; }

    // Signed sum_k w_k beta[c,m,k] for every feature, [C,M].
    Tensor end_to_end_weights() const;

private:
    MagnetsConfig config_;
    UNet unet_;
    ad::Parameter beta_;          // [C,M,K]
    ad::Parameter concept_bias_;  // [K]
    ad::Parameter head_weight_;   // [K]
    ad::Parameter head_bias_;     // [1]
};

}  // namespace magnets
