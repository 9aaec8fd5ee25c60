#include "magnets/unet.hpp"

#include <cmath>

namespace magnets {

using ad::Parameter;
using ad::Tape;
using ad::Var;

namespace {

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = uniform(rng, -bound, bound);
    return t;
}

}  // namespace

Conv1dLayer::Conv1dLayer(const std::string& name, std::size_t in_channels, std::size_t out_channels,
                         std::size_t kernel, Rng& rng)
    : weight(name + ".weight",
             uniform_tensor({out_channels, in_channels, kernel}, std::sqrt(1.0 / double(in_channels * kernel)), rng)),
      bias(name + ".bias", Tensor({out_channels})) {}

Var Conv1dLayer::operator()(Tape& tape, Var x) const {
    return ad::conv1d(x, tape.parameter(weight), tape.parameter(bias));
}

void Conv1dLayer::collect(std::vector<Parameter*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
}

void Conv1dLayer::collect(std::vector<const Parameter*>& out) const {
    out.push_back(&weight);
    out.push_back(&bias);
}

UpsampleLayer::UpsampleLayer(const std::string& name, std::size_t in_channels, std::size_t out_channels, Rng& rng)
    : weight(name + ".weight",
             uniform_tensor({in_channels, out_channels, 2}, std::sqrt(1.0 / double(out_channels * 2)), rng)) {}

Var UpsampleLayer::operator()(Tape& tape, Var x) const { return ad::conv1d_transposed(x, tape.parameter(weight)); }

void UpsampleLayer::collect(std::vector<Parameter*>& out) { out.push_back(&weight); }
void UpsampleLayer::collect(std::vector<const Parameter*>& out) const { out.push_back(&weight); }

ConvBlock::ConvBlock(const std::string& name, std::size_t in_channels, std::size_t out_channels, Rng& rng)
    : first(name + ".conv0", in_channels, out_channels, 3, rng),
      second(name + ".conv1", out_channels, out_channels, 3, rng) {}

Var ConvBlock::operator()(Tape& tape, Var x) const { return ad::relu(second(tape, ad::relu(first(tape, x)))); }

void ConvBlock::collect(std::vector<Parameter*>& out) {
    first.collect(out);
    second.collect(out);
}

void ConvBlock::collect(std::vector<const Parameter*>& out) const {
    first.collect(out);
    second.collect(out);
}

ConvEncoder::ConvEncoder(const std::string& name, std::size_t in_channels, const std::vector<std::size_t>& widths,
                         Rng& rng)
    : widths_(widths) {
    if (widths.empty()) throw std::invalid_argument("encoder needs at least one block");
    std::size_t in = in_channels;
    for (std::size_t i = 0; i < widths.size(); ++i) {
        blocks_.emplace_back(name + ".enc" + std::to_string(i), in, widths[i], rng);
        in = widths[i];
    }
}

ConvEncoder::Output ConvEncoder::operator()(Tape& tape, Var x) const {
    Output out;
    Var h = x;
    for (const ConvBlock& block : blocks_) {
        h = block(tape, h);
        out.skips.push_back(h);
        h = ad::maxpool1d(h).output;
    }
    out.pooled = h;
    return out;
}

void ConvEncoder::collect(std::vector<Parameter*>& out) {
    for (ConvBlock& b : blocks_) b.collect(out);
}

void ConvEncoder::collect(std::vector<const Parameter*>& out) const {
    for (const ConvBlock& b : blocks_) b.collect(out);
}

UNet::UNet(std::size_t in_channels, std::size_t out_channels, const std::vector<std::size_t>& widths, Rng& rng)
    : encoder_("unet", in_channels, widths, rng) {
    const std::size_t deepest = widths.back();
    bottleneck_ = ConvBlock("unet.mid", deepest, deepest, rng);
    std::size_t in = deepest;
    for (std::size_t i = widths.size(); i-- > 0;) {
        const std::string tag = "unet.dec" + std::to_string(i);
        ups_.emplace_back(tag + ".up", in, widths[i], rng);
        decoders_.emplace_back(tag, 2 * widths[i], widths[i], rng);
        in = widths[i];
    }
    head_ = Conv1dLayer("unet.head", widths.front(), out_channels, 1, rng);
}

Var UNet::operator()(Tape& tape, Var x) const {
    const std::size_t factor = std::size_t{1} << depth();
    if (x.value().rank() != 3 || x.value().dim(2) % factor != 0) {
        throw ShapeError("unet: input " + shape_str(x.shape()) + " needs a time length divisible by " +
                         std::to_string(factor));
    }
    ConvEncoder::Output enc = encoder_(tape, x);
    Var h = bottleneck_(tape, enc.pooled);
    for (std::size_t i = 0; i < ups_.size(); ++i) {
        Var skip = enc.skips[enc.skips.size() - 1 - i];
        h = ups_[i](tape, h);
        h = decoders_[i](tape, ad::concat_channels(h, skip));
    }
    return head_(tape, h);
}

void UNet::collect(std::vector<Parameter*>& out) {
    encoder_.collect(out);
    bottleneck_.collect(out);
    for (std::size_t i = 0; i < ups_.size(); ++i) {
        ups_[i].collect(out);
        decoders_[i].collect(out);
    }
    head_.collect(out);
}

void UNet::collect(std::vector<const Parameter*>& out) const {
    encoder_.collect(out);
    bottleneck_.collect(out);
    for (std::size_t i = 0; i < ups_.size(); ++i) {
        ups_[i].collect(out);
        decoders_[i].collect(out);
    }
    head_.collect(out);
}

std::size_t parameter_count(const std::vector<const Parameter*>& params) {
    std::size_t n = 0;
    for (const Parameter* p : params) n += p->value.size();
    return n;
}

}  // namespace magnets
