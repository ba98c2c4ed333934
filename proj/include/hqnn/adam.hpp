#pragma once

#include <cstdint>
#include <vector>

#include "hqnn/tensor.hpp"

namespace hqnn::autodiff {

/// Per-parameter first/second moment buffers plus the shared step counter.
/// Buffers are sized lazily on the first step and keyed by parameter order.
struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double lr = 1e-4;
    std::uint64_t t = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
};

/// One bias-corrected Adam update over all parameters, reading each tensor's
/// accumulated gradient. Every parameter must carry a gradient.
void adam_step(AdamState& state, const std::vector<Tensor>& params);

} // namespace hqnn::autodiff
