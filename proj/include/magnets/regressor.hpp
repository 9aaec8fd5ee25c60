#pragma once

#include <vector>

#include "magnets/autodiff.hpp"
#include "magnets/random.hpp"

namespace magnets {

struct LossBreakdown {
    ad::Var total;
    double mse = 0.0;
    double spars = 0.0;
    double ortho = 0.0;
};

// A model trained by gradient descent on standardized inputs [B,C,T] and
// scaled targets [B].
class GradientModel {
public:
    virtual ~GradientModel() = default;

    virtual std::vector<ad::Parameter*> parameters() = 0;
    virtual std::vector<const ad::Parameter*> parameters() const = 0;

    // Training-mode loss; stochastic components draw from rng.
    virtual LossBreakdown training_loss(ad::Tape& tape, const Tensor& x, const Tensor& y, Rng& rng) const = 0;

    // Deterministic inference; returns [B].
    virtual Tensor predict(const Tensor& x) const = 0;
};

}  // namespace magnets
