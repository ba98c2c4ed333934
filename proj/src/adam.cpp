#include "hqnn/adam.hpp"

#include <cmath>
#include <string>

#include "hqnn/errors.hpp"

namespace hqnn::autodiff {

void adam_step(AdamState& state, const std::vector<Tensor>& params) {
    if (state.m.empty() && state.v.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].size(), 0.0);
            state.v[i].assign(params[i].size(), 0.0);
        }
    }
    if (state.m.size() != params.size() || state.v.size() != params.size())
        throw ContractError("adam_step: state tracks " +
                            std::to_string(state.m.size()) +
                            " parameters, got " + std::to_string(params.size()));

    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Tensor& p = params[i];
        if (!p.has_grad())
            throw ContractError("adam_step: parameter " + std::to_string(i) +
                                " has no gradient");
        if (state.m[i].size() != p.size())
            throw ContractError("adam_step: parameter " + std::to_string(i) +
                                " changed size since the state was created");
        const std::vector<double>& grad = p.grad();
        std::vector<double>& data = p.storage()->data;
        std::vector<double>& m = state.m[i];
        std::vector<double>& v = state.v[i];
        for (std::size_t j = 0; j < data.size(); ++j) {
            const double gj = grad[j];
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * gj;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            data[j] -= state.lr * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

} // namespace hqnn::autodiff
