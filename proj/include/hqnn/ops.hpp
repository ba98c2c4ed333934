#pragma once

#include "hqnn/tensor.hpp"

namespace hqnn::autodiff {

enum class Padding { valid, same };

/// Channel-first 2D convolution, stride 1, odd kernels.
/// input (C_in,H,W), kernel (C_out,C_in,kH,kW), bias (C_out).
Tensor conv2d(Graph& g, const Tensor& input, const Tensor& kernel,
              const Tensor& bias, Padding padding);

/// 2x2 non-overlapping max pooling; even spatial dims required. Gradient
/// goes to the first maximal cell of each window in row-major scan order.
Tensor maxpool2d(Graph& g, const Tensor& input);

Tensor relu(Graph& g, const Tensor& x);
Tensor sigmoid(Graph& g, const Tensor& x);

/// weight (m,n) applied to a length-n vector plus bias (m).
Tensor linear(Graph& g, const Tensor& x, const Tensor& weight,
              const Tensor& bias);

/// Binary cross entropy of a scalar probability against a 0/1 label. The
/// probability entering the logs is clamped to [kBceClamp, 1-kBceClamp].
inline constexpr double kBceClamp = 1e-7;
Tensor bce_loss(Graph& g, const Tensor& p, double label);

Tensor matmul(Graph& g, const Tensor& a, const Tensor& b);    // (n,k)x(k,m)
Tensor matmul_nt(Graph& g, const Tensor& a, const Tensor& b); // (n,k)x(m,k)^T

Tensor softmax_rows(Graph& g, const Tensor& x);

/// Normalization over the last axis of a (n,d) tensor with learnable
/// per-dimension scale and shift.
inline constexpr double kLayerNormEps = 1e-5;
Tensor layer_norm(Graph& g, const Tensor& x, const Tensor& gamma,
                  const Tensor& beta);

Tensor add(Graph& g, const Tensor& a, const Tensor& b);
Tensor mul(Graph& g, const Tensor& a, const Tensor& b);
Tensor add_row_bias(Graph& g, const Tensor& x, const Tensor& bias);
Tensor scale(Graph& g, const Tensor& x, double c);
Tensor mean_rows(Graph& g, const Tensor& x);
Tensor flatten(Graph& g, const Tensor& x);
Tensor slice_cols(Graph& g, const Tensor& x, std::size_t first,
                  std::size_t count);
Tensor concat_cols(Graph& g, const std::vector<Tensor>& parts);
Tensor sum(Graph& g, const Tensor& x);

/// (C,H,W) image cut into non-overlapping patch x patch tiles, each
/// flattened channel-major into a row of the output (n_tiles, C*patch^2).
Tensor extract_patches(Graph& g, const Tensor& image, std::size_t patch);

} // namespace hqnn::autodiff
