#include "magnets/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace magnets::ad {

namespace {

double evaluate(const LossBuilder& f) {
    Tape tape;
    Var loss = f(tape);
    if (loss.value().size() != 1) throw ShapeError("grad_check: loss must be scalar, got " + shape_str(loss.shape()));
    return loss.value()[0];
}

}  // namespace

GradCheckReport grad_check(const LossBuilder& f, const std::vector<Parameter*>& params, double h) {
    std::vector<Tensor> analytic_grads;
    {
        Tape tape;
        Var loss = f(tape);
        tape.backward(loss);
        for (Parameter* p : params) analytic_grads.push_back(tape.param_grad(*p));
    }

    GradCheckReport report;
    for (std::size_t k = 0; k < params.size(); ++k) {
        Parameter* p = params[k];
        const Tensor& analytic = analytic_grads[k];
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double saved = p->value[i];
            p->value[i] = saved + h;
            const double up = evaluate(f);
            p->value[i] = saved - h;
            const double down = evaluate(f);
            p->value[i] = saved;
            const double fd = (up - down) / (2.0 * h);
            const double err = std::abs(analytic[i] - fd) / std::max(1.0, std::abs(fd));
            ++report.entries_checked;
            if (err >= report.max_rel_error) {
                report.max_rel_error = err;
                report.worst_param = p->name;
                report.worst_index = i;
            }
        }
    }
    return report;
}

}  // namespace magnets::ad
