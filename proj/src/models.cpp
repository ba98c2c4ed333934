#include "hqnn/models.hpp"

#include <cmath>
#include <stdexcept>

#include "hqnn/errors.hpp"

namespace hqnn::models {

using autodiff::Graph;
using autodiff::Padding;
using autodiff::Tensor;
using autodiff::shape_str;

namespace {

constexpr std::size_t kKernel = 5;
constexpr std::size_t kPool = 2;
constexpr std::size_t kFcHidden = 64;

std::size_t expected_blocks(Family f) {
    switch (f) {
        case Family::nn4eo_v1: return 1;
        case Family::nn4eo_v2: return 2;
        case Family::nn4eo_v3: return 3;
        case Family::vit: return 0;
    }
    throw ContractError("unknown model family");
}

Tensor draw_uniform(Rng& rng, autodiff::Shape shape, std::size_t fan_in) {
    Tensor t = Tensor::zeros(std::move(shape), true);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    double* p = t.data();
    for (std::size_t i = 0; i < t.size(); ++i)
        p[i] = rng.uniform(-bound, bound);
    return t;
}

} // namespace

const char* family_name(Family f) {
    switch (f) {
        case Family::nn4eo_v1: return "nn4eo_v1";
        case Family::nn4eo_v2: return "nn4eo_v2";
        case Family::nn4eo_v3: return "nn4eo_v3";
        case Family::vit: return "vit";
    }
    throw ContractError("unknown model family");
}

Family family_from_name(const std::string& name) {
    if (name == "nn4eo_v1" || name == "v1") return Family::nn4eo_v1;
    if (name == "nn4eo_v2" || name == "v2") return Family::nn4eo_v2;
    if (name == "nn4eo_v3" || name == "v3") return Family::nn4eo_v3;
    if (name == "vit") return Family::vit;
    throw ValidationError("unknown model family '" + name +
                          "' (expected nn4eo_v1|nn4eo_v2|nn4eo_v3|vit)");
}

ModelSpec ModelSpec::preset(Family family, bool quantum_head) {
    ModelSpec s;
    s.family = family;
    s.quantum_head = quantum_head;
    switch (family) {
        case Family::nn4eo_v1: s.conv_channels = {6}; break;
        case Family::nn4eo_v2: s.conv_channels = {6, 12}; break;
        case Family::nn4eo_v3: s.conv_channels = {6, 12, 24}; break;
        case Family::vit: s.conv_channels = {}; break;
    }
    return s;
}

void ModelSpec::validate() const {
    for (std::size_t d : input_shape)
        if (d == 0)
            throw ValidationError("model input shape has a zero dimension");
    if (family == Family::vit) {
        if (!conv_channels.empty())
            throw ValidationError("vit takes no conv channel plan");
        if (vit_patch == 0 || input_shape[1] % vit_patch != 0 ||
            input_shape[2] % vit_patch != 0)
            throw ValidationError("patch size " + std::to_string(vit_patch) +
                                  " does not divide the input dims");
        if (vit_embed_dim == 0 || vit_heads == 0 ||
            vit_embed_dim % vit_heads != 0)
            throw ValidationError("embed dim " + std::to_string(vit_embed_dim) +
                                  " not divisible into " +
                                  std::to_string(vit_heads) + " heads");
        return;
    }
    if (conv_channels.size() != expected_blocks(family))
        throw ValidationError(std::string(family_name(family)) + " needs " +
                              std::to_string(expected_blocks(family)) +
                              " conv blocks, got " +
                              std::to_string(conv_channels.size()));
    std::size_t h = input_shape[1], w = input_shape[2];
    for (std::size_t i = 0; i < conv_channels.size(); ++i) {
        if (conv_channels[i] == 0)
            throw ValidationError("conv block " + std::to_string(i) +
                                  " has zero channels");
        if (padding == Padding::valid) {
            if (h < kKernel || w < kKernel)
                throw ValidationError("image too small for 5x5 conv at block " +
                                      std::to_string(i));
            h -= kKernel - 1;
            w -= kKernel - 1;
        }
        if (h % kPool != 0 || w % kPool != 0)
            throw ValidationError("block " + std::to_string(i) +
                                  " would pool odd dims " + std::to_string(h) +
                                  "x" + std::to_string(w));
        h /= kPool;
        w /= kPool;
    }
    if (h == 0 || w == 0)
        throw ValidationError("conv stack collapses the image to nothing");
}

const Tensor& Model::param(const std::string& name) const {
    for (std::size_t i = 0; i < param_names.size(); ++i)
        if (param_names[i] == name) return params[i];
    throw ContractError("model has no parameter named '" + name + "'");
}

bool Model::has_param(const std::string& name) const {
    for (const std::string& n : param_names)
        if (n == name) return true;
    return false;
}

Model build_model(const ModelSpec& spec, std::uint64_t seed) {
    Rng rng(seed);
    return build_model(spec, rng);
}

Model build_model(const ModelSpec& spec, Rng& rng) {
    spec.validate();
    Model m;
    m.spec = spec;

    auto push = [&m](const std::string& name, Tensor t) {
        m.param_names.push_back(name);
        m.params.push_back(std::move(t));
        return m.params.size() - 1;
    };

    if (spec.family == Family::vit) {
        const std::size_t p = spec.vit_patch;
        const std::size_t d = spec.vit_embed_dim;
        const std::size_t tok_dim = spec.input_shape[0] * p * p;
        const std::size_t pe_w =
            push("patch_embed.weight", draw_uniform(rng, {d, tok_dim}, tok_dim));
        const std::size_t pe_b =
            push("patch_embed.bias", draw_uniform(rng, {d}, tok_dim));
        const std::size_t wq = push("attn.wq", draw_uniform(rng, {d, d}, d));
        const std::size_t wk = push("attn.wk", draw_uniform(rng, {d, d}, d));
        const std::size_t wv = push("attn.wv", draw_uniform(rng, {d, d}, d));
        const std::size_t wo = push("attn.wo", draw_uniform(rng, {d, d}, d));
        const std::size_t g0 = push("norm0.gamma", Tensor::full({d}, 1.0, true));
        const std::size_t b0 = push("norm0.beta", Tensor::zeros({d}, true));
        const std::size_t fw =
            push("ffn.weight", draw_uniform(rng, {d, d}, d));
        const std::size_t fb = push("ffn.bias", draw_uniform(rng, {d}, d));
        const std::size_t g1 = push("norm1.gamma", Tensor::full({d}, 1.0, true));
        const std::size_t b1 = push("norm1.beta", Tensor::zeros({d}, true));
        const std::size_t hw =
            push("head.weight", draw_uniform(rng, {1, d}, d));
        const std::size_t hb = push("head.bias", draw_uniform(rng, {1}, d));

        m.plan.push_back({LayerKind::patch_embed, {pe_w, pe_b}, p});
        m.plan.push_back(
            {LayerKind::msa, {wq, wk, wv, wo, g0, b0, fw, fb, g1, b1},
             spec.vit_heads});
        m.plan.push_back({LayerKind::mean_pool, {}, 0});
        m.plan.push_back({LayerKind::fc, {hw, hb}, 0});
    } else {
        std::size_t cin = spec.input_shape[0];
        std::size_t h = spec.input_shape[1], w = spec.input_shape[2];
        for (std::size_t i = 0; i < spec.conv_channels.size(); ++i) {
            const std::size_t cout = spec.conv_channels[i];
            const std::size_t fan_in = cin * kKernel * kKernel;
            const std::string tag = "conv" + std::to_string(i);
            const std::size_t kw = push(
                tag + ".weight",
                draw_uniform(rng, {cout, cin, kKernel, kKernel}, fan_in));
            const std::size_t kb =
                push(tag + ".bias", draw_uniform(rng, {cout}, fan_in));
            m.plan.push_back({LayerKind::conv, {kw, kb}, 0});
            m.plan.push_back({LayerKind::maxpool, {}, 0});
            m.plan.push_back({LayerKind::relu, {}, 0});
            if (spec.padding == Padding::valid) {
                h -= kKernel - 1;
                w -= kKernel - 1;
            }
            h /= kPool;
            w /= kPool;
            cin = cout;
        }
        m.plan.push_back({LayerKind::flatten, {}, 0});
        const std::size_t flat = cin * h * w;
        if (spec.family == Family::nn4eo_v1) {
            const std::size_t fw =
                push("fc0.weight", draw_uniform(rng, {1, flat}, flat));
            const std::size_t fb =
                push("fc0.bias", draw_uniform(rng, {1}, flat));
            m.plan.push_back({LayerKind::fc, {fw, fb}, 0});
        } else {
            const std::size_t f0w = push(
                "fc0.weight", draw_uniform(rng, {kFcHidden, flat}, flat));
            const std::size_t f0b =
                push("fc0.bias", draw_uniform(rng, {kFcHidden}, flat));
            const std::size_t f1w = push(
                "fc1.weight", draw_uniform(rng, {1, kFcHidden}, kFcHidden));
            const std::size_t f1b =
                push("fc1.bias", draw_uniform(rng, {1}, kFcHidden));
            m.plan.push_back({LayerKind::fc, {f0w, f0b}, 0});
            m.plan.push_back({LayerKind::fc, {f1w, f1b}, 0});
        }
    }
    m.plan.push_back({LayerKind::head, {}, spec.quantum_head ? 1u : 0u});
    return m;
}

Tensor patch_embed(Graph& g, const Tensor& image, std::size_t patch,
                   const Tensor& weight, const Tensor& bias) {
    Tensor patches = autodiff::extract_patches(g, image, patch);
    Tensor projected = autodiff::matmul_nt(g, patches, weight);
    return autodiff::add_row_bias(g, projected, bias);
}

Tensor self_attention(Graph& g, const Tensor& x, const AttentionLayer& layer,
                      std::size_t heads) {
    const std::size_t d = x.shape().size() == 2 ? x.shape()[1] : 0;
    if (d == 0 || layer.wq.shape() != autodiff::Shape{d, d})
        throw ShapeError("self_attention: tokens " + shape_str(x.shape()) +
                         " do not match wq " + shape_str(layer.wq.shape()));
    if (heads == 0 || layer.d_k == 0 || layer.d_k * heads != d)
        throw ShapeError("self_attention: d_k " + std::to_string(layer.d_k) +
                         " x heads " + std::to_string(heads) +
                         " must equal dim " + std::to_string(d));
    Tensor q = autodiff::matmul(g, x, layer.wq);
    Tensor k = autodiff::matmul(g, x, layer.wk);
    Tensor v = autodiff::matmul(g, x, layer.wv);
    const double inv_sqrt_dk =
        1.0 / std::sqrt(static_cast<double>(layer.d_k));
    std::vector<Tensor> head_outs;
    head_outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t first = h * layer.d_k;
        Tensor qh = autodiff::slice_cols(g, q, first, layer.d_k);
        Tensor kh = autodiff::slice_cols(g, k, first, layer.d_k);
        Tensor vh = autodiff::slice_cols(g, v, first, layer.d_k);
        Tensor scores =
            autodiff::scale(g, autodiff::matmul_nt(g, qh, kh), inv_sqrt_dk);
        Tensor attn = autodiff::softmax_rows(g, scores);
        head_outs.push_back(autodiff::matmul(g, attn, vh));
    }
    Tensor merged = autodiff::concat_cols(g, head_outs);
    return autodiff::matmul(g, merged, layer.wo);
}

Tensor msa_block(Graph& g, const Tensor& x, const MsaBlockWeights& w) {
    Tensor attn_out = self_attention(g, x, w.attn, w.heads);
    Tensor x_msa = autodiff::add(
        g, autodiff::layer_norm(g, attn_out, w.norm0_gamma, w.norm0_beta), x);
    Tensor fnn = autodiff::relu(
        g, autodiff::add_row_bias(
               g, autodiff::matmul_nt(g, x_msa, w.ffn_weight), w.ffn_bias));
    return autodiff::add(
        g, autodiff::layer_norm(g, fnn, w.norm1_gamma, w.norm1_beta), x_msa);
}

namespace {

Tensor quantum_node(Graph& g, const Tensor& logit,
                    const qsim::QuantumBackend& backend) {
    if (logit.size() != 1)
        throw ShapeError("quantum head expects a scalar logit, got " +
                         shape_str(logit.shape()));
    const double theta = logit.data()[0];
    Tensor out = Tensor::scalar(qsim::circuit_forward(theta, backend));
    auto sl = logit.storage();
    auto so = out.storage();
    std::vector<int> ins;
    if (logit.on_graph()) ins.push_back(logit.node());
    // Gradient always comes from the exact parameter-shift rule, even when
    // the forward value was shot-sampled.
    g.add_node("quantum_head", std::move(ins), out, [sl, so, theta]() {
        if (!sl->requires_grad && sl->node < 0) return;
        autodiff::grad_ref(*sl)[0] +=
            so->grad[0] * qsim::param_shift_grad(theta);
    });
    return out;
}

MsaBlockWeights msa_weights_from(const Model& m, const LayerDesc& d) {
    MsaBlockWeights w;
    w.attn.wq = m.params[d.params[0]];
    w.attn.wk = m.params[d.params[1]];
    w.attn.wv = m.params[d.params[2]];
    w.attn.wo = m.params[d.params[3]];
    w.heads = d.aux;
    w.attn.d_k = m.spec.vit_embed_dim / d.aux;
    w.norm0_gamma = m.params[d.params[4]];
    w.norm0_beta = m.params[d.params[5]];
    w.ffn_weight = m.params[d.params[6]];
    w.ffn_bias = m.params[d.params[7]];
    w.norm1_gamma = m.params[d.params[8]];
    w.norm1_beta = m.params[d.params[9]];
    return w;
}

} // namespace

Tensor quantum_probability(Graph& g, const Tensor& logit) {
    return quantum_node(g, logit, qsim::analytic_backend());
}

Tensor forward(Graph& g, const Model& model, const Tensor& image) {
    return forward(g, model, image, qsim::analytic_backend());
}

Tensor forward(Graph& g, const Model& model, const Tensor& image,
               const qsim::QuantumBackend& backend) {
    const auto& in = model.spec.input_shape;
    if (image.shape() != autodiff::Shape{in[0], in[1], in[2]})
        throw ShapeError("forward: image " + shape_str(image.shape()) +
                         " does not match model input (" +
                         std::to_string(in[0]) + ", " + std::to_string(in[1]) +
                         ", " + std::to_string(in[2]) + ")");
    Tensor x = image;
    for (const LayerDesc& d : model.plan) {
        switch (d.kind) {
            case LayerKind::conv:
                x = autodiff::conv2d(g, x, model.params[d.params[0]],
                                     model.params[d.params[1]],
                                     model.spec.padding);
                break;
            case LayerKind::maxpool:
                x = autodiff::maxpool2d(g, x);
                break;
            case LayerKind::relu:
                x = autodiff::relu(g, x);
                break;
            case LayerKind::flatten:
                x = autodiff::flatten(g, x);
                break;
            case LayerKind::fc:
                x = autodiff::linear(g, x, model.params[d.params[0]],
                                     model.params[d.params[1]]);
                break;
            case LayerKind::patch_embed:
                x = patch_embed(g, x, d.aux, model.params[d.params[0]],
                                model.params[d.params[1]]);
                break;
            case LayerKind::msa:
                x = msa_block(g, x, msa_weights_from(model, d));
                break;
            case LayerKind::mean_pool:
                x = autodiff::mean_rows(g, x);
                break;
            case LayerKind::head:
                x = d.aux != 0 ? quantum_node(g, x, backend)
                               : autodiff::sigmoid(g, x);
                break;
        }
    }
    return x;
}

std::size_t param_count(const Model& model) {
    std::size_t n = 0;
    for (const Tensor& t : model.params) n += t.size();
    return n;
}

} // namespace hqnn::models
