#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "hqnn/ops.hpp"
#include "hqnn/qsim.hpp"
#include "hqnn/rng.hpp"
#include "hqnn/tensor.hpp"

namespace hqnn::models {

enum class Family { nn4eo_v1, nn4eo_v2, nn4eo_v3, vit };

const char* family_name(Family f);
Family family_from_name(const std::string& name);

struct ModelSpec {
    Family family = Family::nn4eo_v1;
    bool quantum_head = false;
    std::vector<std::size_t> conv_channels{6};
    autodiff::Padding padding = autodiff::Padding::same;
    std::size_t vit_patch = 8;
    std::size_t vit_embed_dim = 48;
    std::size_t vit_heads = 2;
    std::array<std::size_t, 3> input_shape{3, 64, 64};

    /// Default channel plan per family: v1 [6], v2 [6,12], v3 [6,12,24],
    /// vit none.
    static ModelSpec preset(Family family, bool quantum_head);

    /// Throws ValidationError when the invariants don't hold (wrong channel
    /// count, indivisible patch size, pooling reaching odd dims, ...).
    void validate() const;
};

struct AttentionLayer {
    autodiff::Tensor wq, wk, wv, wo;
    std::size_t d_k = 0;
};

struct MsaBlockWeights {
    AttentionLayer attn;
    std::size_t heads = 0;
    autodiff::Tensor norm0_gamma, norm0_beta;
    autodiff::Tensor ffn_weight, ffn_bias;
    autodiff::Tensor norm1_gamma, norm1_beta;
};

/// One step of a model's forward recipe. `params` holds indices into
/// Model::params in the order each step consumes them.
enum class LayerKind {
    conv,
    maxpool,
    relu,
    flatten,
    fc,
    patch_embed,
    msa,
    mean_pool,
    head
};

struct LayerDesc {
    LayerKind kind;
    std::vector<std::size_t> params;
    std::size_t aux = 0; // patch size, head count, or 1 for a quantum head
};

struct Model {
    ModelSpec spec;
    std::vector<std::string> param_names;
    std::vector<autodiff::Tensor> params;
    std::vector<LayerDesc> plan;

    const autodiff::Tensor& param(const std::string& name) const;
    bool has_param(const std::string& name) const;
};

/// Materializes the layer plan and draws every weight uniformly from
/// +-1/sqrt(fan_in) in a fixed layer order. Norm scales start at 1, norm
/// shifts and nothing else at 0.
Model build_model(const ModelSpec& spec, std::uint64_t seed);
Model build_model(const ModelSpec& spec, Rng& rng);

/// Cuts the image into patch x patch tiles and maps each flattened tile
/// through a shared linear layer; weight is (d, c*patch^2).
autodiff::Tensor patch_embed(autodiff::Graph& g, const autodiff::Tensor& image,
                             std::size_t patch, const autodiff::Tensor& weight,
                             const autodiff::Tensor& bias);

/// Multi-head scaled dot-product attention over token rows; heads slice the
/// embedding, are concatenated, and pass through wo.
autodiff::Tensor self_attention(autodiff::Graph& g, const autodiff::Tensor& x,
                                const AttentionLayer& layer,
                                std::size_t heads);

/// norm(attention(x)) + x, then norm(relu-FNN(.)) + . with the second
/// residual read from the first sum.
autodiff::Tensor msa_block(autodiff::Graph& g, const autodiff::Tensor& x,
                           const MsaBlockWeights& w);

/// P(1) of the qubit circuit driven by a scalar logit, recorded on the graph
/// with a parameter-shift backward rule.
autodiff::Tensor quantum_probability(autodiff::Graph& g,
                                     const autodiff::Tensor& logit);

autodiff::Tensor forward(autodiff::Graph& g, const Model& model,
                         const autodiff::Tensor& image);

/// Same, but a sampled backend estimates the hybrid head's probability.
/// Classical models ignore the backend.
autodiff::Tensor forward(autodiff::Graph& g, const Model& model,
                         const autodiff::Tensor& image,
                         const qsim::QuantumBackend& backend);

std::size_t param_count(const Model& model);

} // namespace hqnn::models
