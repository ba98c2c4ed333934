#include "fd_model.hpp"

#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>
#include <string>

#include "oracles.hpp"

namespace fdcheck {
namespace {

using hqnn::models::Family;
using hqnn::models::Model;
using oracle::Vec;

constexpr double kClamp = 1e-7;
constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

double head_prob(double logit, bool quantum) {
    return quantum ? oracle::qubit_p1(logit) : oracle::sigmoid(logit);
}

int clamp_zone(double p) {
    return p < kClamp ? -1 : (p > 1.0 - kClamp ? 1 : 0);
}

// ---------------------------------------------------------------- conv nets

struct ConvCache {
    std::size_t blocks = 0;
    bool same = true;
    std::size_t K = 5;
    bool quantum = false;
    double label = 0.0;

    std::vector<std::size_t> cin, hin, win; // per-block input dims
    std::vector<std::size_t> cn, hc, wc;    // conv output dims
    std::vector<std::size_t> hp, wp;        // pooled dims
    std::vector<Vec> w, b;                  // owned conv parameter copies
    std::vector<Vec> fw, fb;                // owned fc parameter copies
    std::vector<std::pair<std::size_t, std::size_t>> fdim; // fc (m, n)

    Vec img;
    std::vector<Vec> conv_, pool_, relu_;
    std::vector<std::vector<std::size_t>> arg_;
    std::vector<Vec> fcin_, fcout_;
    double logit = 0, p = 0, loss = 0;

    // scratch
    Vec chan;                  // perturbed conv channel
    Vec dr;                    // relu delta of the perturbed channel
    std::vector<Vec> dconv, drelu; // dense downstream deltas
    Vec dfc;
};

ConvCache build_conv(const Model& m, const Vec& img, double label) {
    ConvCache C;
    C.blocks = m.spec.conv_channels.size();
    C.same = m.spec.padding == hqnn::autodiff::Padding::same;
    C.quantum = m.spec.quantum_head;
    C.label = label;
    C.img = img;

    std::size_t ci = m.spec.input_shape[0];
    std::size_t h = m.spec.input_shape[1], w = m.spec.input_shape[2];
    for (std::size_t b = 0; b < C.blocks; ++b) {
        C.cin.push_back(ci);
        C.hin.push_back(h);
        C.win.push_back(w);
        const std::size_t co = m.spec.conv_channels[b];
        C.cn.push_back(co);
        const std::size_t hc = C.same ? h : h - C.K + 1;
        const std::size_t wc = C.same ? w : w - C.K + 1;
        C.hc.push_back(hc);
        C.wc.push_back(wc);
        C.hp.push_back(hc / 2);
        C.wp.push_back(wc / 2);
        const std::string tag = "conv" + std::to_string(b);
        C.w.push_back(m.param(tag + ".weight").data_vec());
        C.b.push_back(m.param(tag + ".bias").data_vec());
        ci = co;
        h = hc / 2;
        w = wc / 2;
    }
    for (std::size_t l = 0;; ++l) {
        const std::string tag = "fc" + std::to_string(l);
        if (!m.has_param(tag + ".weight")) break;
        const auto& wt = m.param(tag + ".weight");
        C.fw.push_back(wt.data_vec());
        C.fb.push_back(m.param(tag + ".bias").data_vec());
        C.fdim.emplace_back(wt.shape()[0], wt.shape()[1]);
    }

    // forward
    const Vec* x = &C.img;
    for (std::size_t b = 0; b < C.blocks; ++b) {
        C.conv_.push_back(oracle::conv2d(*x, C.cin[b], C.hin[b], C.win[b],
                                         C.w[b], C.cn[b], C.K, C.K, C.b[b],
                                         C.same));
        C.arg_.emplace_back();
        C.pool_.push_back(oracle::maxpool2d(C.conv_[b], C.cn[b], C.hc[b],
                                            C.wc[b], &C.arg_.back()));
        C.relu_.push_back(oracle::relu(C.pool_[b]));
        x = &C.relu_[b];
    }
    C.fcin_.push_back(*x);
    for (std::size_t l = 0; l < C.fw.size(); ++l) {
        C.fcout_.push_back(oracle::linear(C.fcin_[l], C.fw[l], C.fb[l],
                                          C.fdim[l].first, C.fdim[l].second));
        if (l + 1 < C.fw.size()) C.fcin_.push_back(C.fcout_[l]);
    }
    C.logit = C.fcout_.back()[0];
    C.p = head_prob(C.logit, C.quantum);
    C.loss = oracle::bce(C.p, C.label, kClamp);

    // scratch
    std::size_t mx_conv = 0, mx_pool = 0, mx_fc = 1;
    for (std::size_t b = 0; b < C.blocks; ++b) {
        mx_conv = std::max(mx_conv, C.hc[b] * C.wc[b]);
        mx_pool = std::max(mx_pool, C.hp[b] * C.wp[b]);
    }
    for (const auto& [fm, fn] : C.fdim) mx_fc = std::max(mx_fc, fm);
    C.chan.assign(mx_conv, 0.0);
    C.dr.assign(mx_pool, 0.0);
    C.dconv.resize(C.blocks);
    C.drelu.resize(C.blocks);
    for (std::size_t b = 0; b < C.blocks; ++b) {
        C.dconv[b].assign(C.cn[b] * C.hc[b] * C.wc[b], 0.0);
        C.drelu[b].assign(C.cn[b] * C.hp[b] * C.wp[b], 0.0);
    }
    C.dfc.assign(mx_fc, 0.0);
    return C;
}

// Pool + relu one channel of block b from perturbed conv values in C.chan;
// writes new_relu - cached_relu into C.dr and reports kinks.
void pool_relu_channel(ConvCache& C, std::size_t b, std::size_t co,
                       bool& kink) {
    const std::size_t hcb = C.hc[b], wcb = C.wc[b];
    const std::size_t hpb = C.hp[b], wpb = C.wp[b];
    const double* chan = C.chan.data();
    for (std::size_t pi = 0; pi < hpb; ++pi)
        for (std::size_t pj = 0; pj < wpb; ++pj) {
            std::size_t best_local = (2 * pi) * wcb + 2 * pj;
            double bv = chan[best_local];
            for (std::size_t di = 0; di < 2; ++di)
                for (std::size_t dj = 0; dj < 2; ++dj) {
                    const std::size_t idx = (2 * pi + di) * wcb + 2 * pj + dj;
                    if (chan[idx] > bv) {
                        bv = chan[idx];
                        best_local = idx;
                    }
                }
            const std::size_t pidx = (co * hpb + pi) * wpb + pj;
            if (co * hcb * wcb + best_local != C.arg_[b][pidx]) kink = true;
            const double pooled_base = C.pool_[b][pidx];
            if ((bv > 0.0) != (pooled_base > 0.0)) kink = true;
            C.dr[pi * wpb + pj] = (bv > 0.0 ? bv : 0.0) - C.relu_[b][pidx];
        }
}

// Propagate a dense relu-delta of block t (single channel co when t == b and
// from == &C.dr, all channels otherwise) through block t+1. Fills
// C.drelu[t+1].
void hop_block(ConvCache& C, std::size_t t, const double* din,
               std::size_t nch_in, std::size_t ch0, bool& kink) {
    const std::size_t tb = t + 1;
    const std::size_t hi = C.hin[tb], wi = C.win[tb];
    const std::size_t hcb = C.hc[tb], wcb = C.wc[tb];
    const long pd = C.same ? static_cast<long>(C.K / 2) : 0;
    Vec& dc = C.dconv[tb];
    std::fill(dc.begin(), dc.end(), 0.0);
    const Vec& kern = C.w[tb];
    const std::size_t cin = C.cin[tb];
    for (std::size_t co2 = 0; co2 < C.cn[tb]; ++co2)
        for (std::size_t i = 0; i < hcb; ++i)
            for (std::size_t j = 0; j < wcb; ++j) {
                double acc = 0.0;
                for (std::size_t mm = 0; mm < C.K; ++mm) {
                    const long ii = static_cast<long>(i + mm) - pd;
                    if (ii < 0 || ii >= static_cast<long>(hi)) continue;
                    for (std::size_t nn = 0; nn < C.K; ++nn) {
                        const long jj = static_cast<long>(j + nn) - pd;
                        if (jj < 0 || jj >= static_cast<long>(wi)) continue;
                        for (std::size_t cc = 0; cc < nch_in; ++cc) {
                            const double dv =
                                din[(cc * hi + ii) * wi + jj];
                            if (dv == 0.0) continue;
                            acc += dv * kern[((co2 * cin + ch0 + cc) * C.K +
                                              mm) * C.K + nn];
                        }
                    }
                }
                dc[(co2 * hcb + i) * wcb + j] = acc;
            }

    // pool + relu over all channels of block t+1
    const std::size_t hpb = C.hp[tb], wpb = C.wp[tb];
    Vec& drl = C.drelu[tb];
    for (std::size_t c = 0; c < C.cn[tb]; ++c)
        for (std::size_t pi = 0; pi < hpb; ++pi)
            for (std::size_t pj = 0; pj < wpb; ++pj) {
                std::size_t best = (c * hcb + 2 * pi) * wcb + 2 * pj;
                double bv = C.conv_[tb][best] + dc[best];
                for (std::size_t di = 0; di < 2; ++di)
                    for (std::size_t dj = 0; dj < 2; ++dj) {
                        const std::size_t idx =
                            (c * hcb + 2 * pi + di) * wcb + 2 * pj + dj;
                        const double v = C.conv_[tb][idx] + dc[idx];
                        if (v > bv) {
                            bv = v;
                            best = idx;
                        }
                    }
                const std::size_t pidx = (c * hpb + pi) * wpb + pj;
                if (best != C.arg_[tb][pidx]) kink = true;
                if ((bv > 0.0) != (C.pool_[tb][pidx] > 0.0)) kink = true;
                drl[pidx] = (bv > 0.0 ? bv : 0.0) - C.relu_[tb][pidx];
            }
}

// Finish from a flat-input delta: either a contiguous channel range
// [j0, j0+len) with values `dflat`, or dense when j0 == 0 && len == full.
double fc_tail(ConvCache& C, const double* dflat, std::size_t j0,
               std::size_t len, bool& kink) {
    const auto [m0, n0] = C.fdim[0];
    double* dfc = C.dfc.data();
    for (std::size_t i = 0; i < m0; ++i) {
        double acc = 0.0;
        const double* row = C.fw[0].data() + i * n0 + j0;
        for (std::size_t j = 0; j < len; ++j) acc += row[j] * dflat[j];
        dfc[i] = acc;
    }
    double dlogit;
    if (C.fdim.size() == 1) {
        dlogit = dfc[0];
    } else {
        // exactly one more layer, (1, m0)
        double acc = 0.0;
        const double* row = C.fw[1].data();
        for (std::size_t i = 0; i < m0; ++i) acc += row[i] * dfc[i];
        dlogit = acc;
    }
    const double logit2 = C.logit + dlogit;
    const double p2 = head_prob(logit2, C.quantum);
    if (clamp_zone(p2) != clamp_zone(C.p)) kink = true;
    return oracle::bce(p2, C.label, kClamp);
}

double conv_eval(ConvCache& C, std::size_t b, bool is_bias, std::size_t elem,
                 double s, bool& kink) {
    const std::size_t hcb = C.hc[b], wcb = C.wc[b];
    std::size_t co, ci = 0, mm = 0, nn = 0;
    if (is_bias) {
        co = elem;
    } else {
        const std::size_t per_co = C.cin[b] * C.K * C.K;
        co = elem / per_co;
        const std::size_t r = elem % per_co;
        ci = r / (C.K * C.K);
        mm = (r % (C.K * C.K)) / C.K;
        nn = r % C.K;
    }

    const double* base = C.conv_[b].data() + co * hcb * wcb;
    double* chan = C.chan.data();
    if (is_bias) {
        for (std::size_t i = 0; i < hcb * wcb; ++i) chan[i] = base[i] + s;
    } else {
        const Vec& in = b == 0 ? C.img : C.relu_[b - 1];
        const std::size_t hi = C.hin[b], wi = C.win[b];
        const long pd = C.same ? static_cast<long>(C.K / 2) : 0;
        for (std::size_t i = 0; i < hcb; ++i) {
            const long ii = static_cast<long>(i + mm) - pd;
            for (std::size_t j = 0; j < wcb; ++j) {
                const long jj = static_cast<long>(j + nn) - pd;
                double add = 0.0;
                if (ii >= 0 && jj >= 0 && ii < static_cast<long>(hi) &&
                    jj < static_cast<long>(wi))
                    add = s * in[(ci * hi + ii) * wi + jj];
                chan[i * wcb + j] = base[i * wcb + j] + add;
            }
        }
    }

    pool_relu_channel(C, b, co, kink);

    if (b + 1 == C.blocks) {
        const std::size_t len = C.hp[b] * C.wp[b];
        return fc_tail(C, C.dr.data(), co * len, len, kink);
    }
    hop_block(C, b, C.dr.data(), 1, co, kink);
    for (std::size_t t = b + 1; t + 1 < C.blocks; ++t)
        hop_block(C, t, C.drelu[t].data(), C.cn[t], 0, kink);
    const Vec& last = C.drelu[C.blocks - 1];
    return fc_tail(C, last.data(), 0, last.size(), kink);
}

double fc_eval(ConvCache& C, std::size_t l, bool is_bias, std::size_t elem,
               double s, bool& kink) {
    const auto [fm, fn] = C.fdim[l];
    (void)fm;
    const std::size_t i = is_bias ? elem : elem / fn;
    const double dl = is_bias ? s : s * C.fcin_[l][elem % fn];
    double dlogit;
    if (l + 1 == C.fdim.size())
        dlogit = dl; // i == 0, single output
    else
        dlogit = C.fw[l + 1][i] * dl; // next layer is (1, m)
    const double p2 = head_prob(C.logit + dlogit, C.quantum);
    if (clamp_zone(p2) != clamp_zone(C.p)) kink = true;
    return oracle::bce(p2, C.label, kClamp);
}

// ---------------------------------------------------------------------- vit

struct VitCache {
    std::size_t n = 0, d = 0, heads = 0, dk = 0, pdim = 0;
    bool quantum = false;
    double label = 0.0;
    Vec pw, pb, wq, wk, wv, wo, g0, b0, fw, fb, g1, b1, hw, hb;

    Vec patches, tokens;
    Vec q, k, v;
    std::vector<Vec> attn; // per head, post softmax
    Vec merged, wo_out;
    Vec hat0, ln0, xmsa;
    Vec ffn_pre, ffn_relu;
    Vec hat1, ln1v, xout;
    Vec pooled;
    double logit = 0, p = 0, loss = 0;

    // scratch
    Vec q2, k2, v2, sc2, at2, mg2, wo2, ln_a, xm2, fp2, fr2, ln_b, xo2, pl2;
    Vec tok2;
};

// Row stats pass producing both the normalized values and gamma/beta output.
void ln_rows(const Vec& x, const Vec& g, const Vec& bb, std::size_t n,
             std::size_t d, Vec* hat, Vec& out) {
    for (std::size_t i = 0; i < n; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += x[i * d + j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = x[i * d + j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + 1e-5);
        for (std::size_t j = 0; j < d; ++j) {
            const double hv = (x[i * d + j] - mean) * is;
            if (hat) (*hat)[i * d + j] = hv;
            out[i * d + j] = g[j] * hv + bb[j];
        }
    }
}

VitCache build_vit(const Model& m, const Vec& img, double label) {
    VitCache V;
    V.n = (m.spec.input_shape[1] / m.spec.vit_patch) *
          (m.spec.input_shape[2] / m.spec.vit_patch);
    V.d = m.spec.vit_embed_dim;
    V.heads = m.spec.vit_heads;
    V.dk = V.d / V.heads;
    V.pdim = m.spec.input_shape[0] * m.spec.vit_patch * m.spec.vit_patch;
    V.quantum = m.spec.quantum_head;
    V.label = label;
    V.pw = m.param("patch_embed.weight").data_vec();
    V.pb = m.param("patch_embed.bias").data_vec();
    V.wq = m.param("attn.wq").data_vec();
    V.wk = m.param("attn.wk").data_vec();
    V.wv = m.param("attn.wv").data_vec();
    V.wo = m.param("attn.wo").data_vec();
    V.g0 = m.param("norm0.gamma").data_vec();
    V.b0 = m.param("norm0.beta").data_vec();
    V.fw = m.param("ffn.weight").data_vec();
    V.fb = m.param("ffn.bias").data_vec();
    V.g1 = m.param("norm1.gamma").data_vec();
    V.b1 = m.param("norm1.beta").data_vec();
    V.hw = m.param("head.weight").data_vec();
    V.hb = m.param("head.bias").data_vec();

    const std::size_t n = V.n, d = V.d;
    V.patches = oracle::extract_patches(img, m.spec.input_shape[0],
                                        m.spec.input_shape[1],
                                        m.spec.input_shape[2],
                                        m.spec.vit_patch);
    V.tokens = oracle::matmul_nt(V.patches, V.pw, n, V.pdim, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) V.tokens[i * d + j] += V.pb[j];

    V.q = oracle::matmul(V.tokens, V.wq, n, d, d);
    V.k = oracle::matmul(V.tokens, V.wk, n, d, d);
    V.v = oracle::matmul(V.tokens, V.wv, n, d, d);

    V.merged.assign(n * d, 0.0);
    const double inv = 1.0 / std::sqrt(static_cast<double>(V.dk));
    for (std::size_t h = 0; h < V.heads; ++h) {
        const std::size_t off = h * V.dk;
        Vec scores(n * n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (std::size_t t = 0; t < V.dk; ++t)
                    acc += V.q[i * d + off + t] * V.k[j * d + off + t];
                scores[i * n + j] = acc * inv;
            }
        V.attn.push_back(oracle::softmax_rows(scores, n, n));
        const Vec& a = V.attn.back();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t t = 0; t < V.dk; ++t) {
                double acc = 0.0;
                for (std::size_t j = 0; j < n; ++j)
                    acc += a[i * n + j] * V.v[j * d + off + t];
                V.merged[i * d + off + t] = acc;
            }
    }
    V.wo_out = oracle::matmul(V.merged, V.wo, n, d, d);

    V.hat0.assign(n * d, 0.0);
    V.ln0.assign(n * d, 0.0);
    ln_rows(V.wo_out, V.g0, V.b0, n, d, &V.hat0, V.ln0);
    V.xmsa.assign(n * d, 0.0);
    for (std::size_t i = 0; i < n * d; ++i) V.xmsa[i] = V.ln0[i] + V.tokens[i];

    V.ffn_pre = oracle::matmul_nt(V.xmsa, V.fw, n, d, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) V.ffn_pre[i * d + j] += V.fb[j];
    V.ffn_relu = oracle::relu(V.ffn_pre);

    V.hat1.assign(n * d, 0.0);
    V.ln1v.assign(n * d, 0.0);
    ln_rows(V.ffn_relu, V.g1, V.b1, n, d, &V.hat1, V.ln1v);
    V.xout.assign(n * d, 0.0);
    for (std::size_t i = 0; i < n * d; ++i) V.xout[i] = V.ln1v[i] + V.xmsa[i];

    V.pooled.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) V.pooled[j] += V.xout[i * d + j];
    for (std::size_t j = 0; j < d; ++j)
        V.pooled[j] /= static_cast<double>(n);
    double acc = V.hb[0];
    for (std::size_t j = 0; j < d; ++j) acc += V.hw[j] * V.pooled[j];
    V.logit = acc;
    V.p = head_prob(V.logit, V.quantum);
    V.loss = oracle::bce(V.p, V.label, kClamp);

    for (Vec* s : {&V.q2, &V.k2, &V.v2, &V.mg2, &V.wo2, &V.ln_a, &V.xm2,
                   &V.fp2, &V.fr2, &V.ln_b, &V.xo2, &V.tok2})
        s->assign(n * d, 0.0);
    V.sc2.assign(n * n, 0.0);
    V.at2.assign(n * n, 0.0);
    V.pl2.assign(d, 0.0);
    return V;
}

double vit_head_tail(VitCache& V, const Vec& xout2, bool& kink) {
    const std::size_t n = V.n, d = V.d;
    double acc = V.hb[0];
    for (std::size_t j = 0; j < d; ++j) {
        double col = 0.0;
        for (std::size_t i = 0; i < n; ++i) col += xout2[i * d + j];
        acc += V.hw[j] * (col / static_cast<double>(n));
    }
    const double p2 = head_prob(acc, V.quantum);
    if (clamp_zone(p2) != clamp_zone(V.p)) kink = true;
    return oracle::bce(p2, V.label, kClamp);
}

// From a perturbed ffn preactivation onward.
double vit_tail_from_ffn(VitCache& V, const Vec& fp2, const Vec& xmsa2,
                         bool& kink) {
    const std::size_t nd = V.n * V.d;
    for (std::size_t i = 0; i < nd; ++i) {
        if ((fp2[i] > 0.0) != (V.ffn_pre[i] > 0.0)) kink = true;
        V.fr2[i] = fp2[i] > 0.0 ? fp2[i] : 0.0;
    }
    ln_rows(V.fr2, V.g1, V.b1, V.n, V.d, nullptr, V.ln_b);
    for (std::size_t i = 0; i < nd; ++i) V.xo2[i] = V.ln_b[i] + xmsa2[i];
    return vit_head_tail(V, V.xo2, kink);
}

// From a perturbed attention output (and possibly perturbed tokens) onward.
double vit_tail_from_wo_out(VitCache& V, const Vec& wo_out2,
                            const Vec& tokens2, bool& kink) {
    const std::size_t n = V.n, d = V.d, nd = n * d;
    ln_rows(wo_out2, V.g0, V.b0, n, d, nullptr, V.ln_a);
    for (std::size_t i = 0; i < nd; ++i) V.xm2[i] = V.ln_a[i] + tokens2[i];
    // full ffn matmul
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            double acc = V.fb[j];
            const double* xr = V.xm2.data() + i * d;
            const double* wr = V.fw.data() + j * d;
            for (std::size_t t = 0; t < d; ++t) acc += xr[t] * wr[t];
            V.fp2[i * d + j] = acc;
        }
    return vit_tail_from_ffn(V, V.fp2, V.xm2, kink);
}

// Recompute attention from (possibly perturbed) q2/k2/v2 for dirty heads,
// reuse cached pieces elsewhere, then project and run the tail.
double vit_attention_eval(VitCache& V, const Vec& q2, const Vec& k2,
                          const Vec& v2, unsigned dirty_mask, bool qk_dirty,
                          const Vec& tokens2, bool& kink) {
    const std::size_t n = V.n, d = V.d, dk = V.dk;
    const double inv = 1.0 / std::sqrt(static_cast<double>(dk));
    for (std::size_t h = 0; h < V.heads; ++h) {
        const std::size_t off = h * dk;
        if (!(dirty_mask & (1u << h))) {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t t = 0; t < dk; ++t)
                    V.mg2[i * d + off + t] = V.merged[i * d + off + t];
            continue;
        }
        const Vec* a = &V.attn[h];
        if (qk_dirty) {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    double acc = 0.0;
                    for (std::size_t t = 0; t < dk; ++t)
                        acc += q2[i * d + off + t] * k2[j * d + off + t];
                    V.sc2[i * n + j] = acc * inv;
                }
            // row softmax into at2
            for (std::size_t i = 0; i < n; ++i) {
                double mx = V.sc2[i * n];
                for (std::size_t j = 1; j < n; ++j)
                    mx = std::max(mx, V.sc2[i * n + j]);
                double z = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    V.at2[i * n + j] = std::exp(V.sc2[i * n + j] - mx);
                    z += V.at2[i * n + j];
                }
                for (std::size_t j = 0; j < n; ++j) V.at2[i * n + j] /= z;
            }
            a = &V.at2;
        }
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t t = 0; t < dk; ++t) {
                double acc = 0.0;
                for (std::size_t j = 0; j < n; ++j)
                    acc += (*a)[i * n + j] * v2[j * d + off + t];
                V.mg2[i * d + off + t] = acc;
            }
    }
    // wo projection
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            double acc = 0.0;
            const double* mr = V.mg2.data() + i * d;
            for (std::size_t t = 0; t < d; ++t) acc += mr[t] * V.wo[t * d + j];
            V.wo2[i * d + j] = acc;
        }
    return vit_tail_from_wo_out(V, V.wo2, tokens2, kink);
}

enum class VitSite {
    pe_w, pe_b, wq, wk, wv, wo, n0g, n0b, f_w, f_b, n1g, n1b, h_w, h_b
};

double vit_eval(VitCache& V, VitSite site, std::size_t elem, double s,
                bool& kink) {
    const std::size_t n = V.n, d = V.d, nd = n * d;
    const unsigned all = (1u << V.heads) - 1u;
    switch (site) {
        case VitSite::pe_w:
        case VitSite::pe_b: {
            const std::size_t r =
                site == VitSite::pe_w ? elem / V.pdim : elem;
            const std::size_t c = site == VitSite::pe_w ? elem % V.pdim : 0;
            V.tok2 = V.tokens;
            V.q2 = V.q;
            V.k2 = V.k;
            V.v2 = V.v;
            for (std::size_t i = 0; i < n; ++i) {
                const double dv = site == VitSite::pe_w
                                      ? s * V.patches[i * V.pdim + c]
                                      : s;
                V.tok2[i * d + r] += dv;
                const double* qr = V.wq.data() + r * d;
                const double* kr = V.wk.data() + r * d;
                const double* vr = V.wv.data() + r * d;
                for (std::size_t j = 0; j < d; ++j) {
                    V.q2[i * d + j] += dv * qr[j];
                    V.k2[i * d + j] += dv * kr[j];
                    V.v2[i * d + j] += dv * vr[j];
                }
            }
            return vit_attention_eval(V, V.q2, V.k2, V.v2, all, true, V.tok2,
                                      kink);
        }
        case VitSite::wq:
        case VitSite::wk:
        case VitSite::wv: {
            const std::size_t r = elem / d, c = elem % d;
            const unsigned mask = 1u << (c / V.dk);
            Vec& dst = site == VitSite::wq ? V.q2
                       : site == VitSite::wk ? V.k2
                                             : V.v2;
            dst = site == VitSite::wq ? V.q
                  : site == VitSite::wk ? V.k
                                        : V.v;
            for (std::size_t i = 0; i < n; ++i)
                dst[i * d + c] += s * V.tokens[i * d + r];
            const Vec& q2 = site == VitSite::wq ? V.q2 : V.q;
            const Vec& k2 = site == VitSite::wk ? V.k2 : V.k;
            const Vec& v2 = site == VitSite::wv ? V.v2 : V.v;
            return vit_attention_eval(V, q2, k2, v2, mask,
                                      site != VitSite::wv, V.tokens, kink);
        }
        case VitSite::wo: {
            const std::size_t r = elem / d, c = elem % d;
            V.wo2 = V.wo_out;
            for (std::size_t i = 0; i < n; ++i)
                V.wo2[i * d + c] += s * V.merged[i * d + r];
            return vit_tail_from_wo_out(V, V.wo2, V.tokens, kink);
        }
        case VitSite::n0g:
        case VitSite::n0b: {
            const std::size_t j = elem;
            V.xm2 = V.xmsa;
            for (std::size_t i = 0; i < n; ++i)
                V.xm2[i * d + j] += site == VitSite::n0g
                                        ? s * V.hat0[i * d + j]
                                        : s;
            // ffn changes only through column j of its input
            V.fp2 = V.ffn_pre;
            for (std::size_t i = 0; i < n; ++i) {
                const double dx = V.xm2[i * d + j] - V.xmsa[i * d + j];
                for (std::size_t jj = 0; jj < d; ++jj)
                    V.fp2[i * d + jj] += dx * V.fw[jj * d + j];
            }
            return vit_tail_from_ffn(V, V.fp2, V.xm2, kink);
        }
        case VitSite::f_w:
        case VitSite::f_b: {
            const std::size_t r = site == VitSite::f_w ? elem / d : elem;
            const std::size_t c = site == VitSite::f_w ? elem % d : 0;
            V.fp2 = V.ffn_pre;
            for (std::size_t i = 0; i < n; ++i)
                V.fp2[i * d + r] += site == VitSite::f_w
                                        ? s * V.xmsa[i * d + c]
                                        : s;
            return vit_tail_from_ffn(V, V.fp2, V.xmsa, kink);
        }
        case VitSite::n1g:
        case VitSite::n1b: {
            const std::size_t j = elem;
            V.xo2 = V.xout;
            for (std::size_t i = 0; i < n; ++i)
                V.xo2[i * d + j] += site == VitSite::n1g
                                        ? s * V.hat1[i * d + j]
                                        : s;
            return vit_head_tail(V, V.xo2, kink);
        }
        case VitSite::h_w: {
            const double p2 =
                head_prob(V.logit + s * V.pooled[elem], V.quantum);
            if (clamp_zone(p2) != clamp_zone(V.p)) kink = true;
            return oracle::bce(p2, V.label, kClamp);
        }
        case VitSite::h_b: {
            const double p2 = head_prob(V.logit + s, V.quantum);
            if (clamp_zone(p2) != clamp_zone(V.p)) kink = true;
            return oracle::bce(p2, V.label, kClamp);
        }
    }
    (void)nd;
    return V.loss;
}

VitSite vit_site_of(const std::string& name) {
    if (name == "patch_embed.weight") return VitSite::pe_w;
    if (name == "patch_embed.bias") return VitSite::pe_b;
    if (name == "attn.wq") return VitSite::wq;
    if (name == "attn.wk") return VitSite::wk;
    if (name == "attn.wv") return VitSite::wv;
    if (name == "attn.wo") return VitSite::wo;
    if (name == "norm0.gamma") return VitSite::n0g;
    if (name == "norm0.beta") return VitSite::n0b;
    if (name == "ffn.weight") return VitSite::f_w;
    if (name == "ffn.bias") return VitSite::f_b;
    if (name == "norm1.gamma") return VitSite::n1g;
    if (name == "norm1.beta") return VitSite::n1b;
    if (name == "head.weight") return VitSite::h_w;
    if (name == "head.bias") return VitSite::h_b;
    throw std::logic_error("unmapped vit parameter: " + name);
}

struct ConvSite {
    bool fc = false;
    std::size_t ordinal = 0;
    bool bias = false;
};

ConvSite conv_site_of(const std::string& name) {
    ConvSite s;
    s.fc = name.rfind("fc", 0) == 0;
    s.ordinal = static_cast<std::size_t>(name[s.fc ? 2 : 4] - '0');
    s.bias = name.find(".bias") != std::string::npos;
    return s;
}

} // namespace

double oracle_loss(const Model& m, const std::vector<double>& img,
                   double label, long override_param, std::size_t override_elem,
                   double override_value) {
    // Build the cache on a throwaway copy so an override is just a data edit.
    Model tmp = m;
    tmp.params.clear();
    for (std::size_t i = 0; i < m.params.size(); ++i) {
        hqnn::autodiff::Tensor t = m.params[i].clone();
        if (static_cast<long>(i) == override_param)
            t.data()[override_elem] = override_value;
        tmp.params.push_back(std::move(t));
    }
    if (m.spec.family == Family::vit)
        return build_vit(tmp, img, label).loss;
    return build_conv(tmp, img, label).loss;
}

FdResult fd_gradients(const Model& m, const std::vector<double>& img,
                      double label, double h) {
    FdResult out;
    out.grads.resize(m.params.size());

    if (m.spec.family == Family::vit) {
        VitCache V = build_vit(m, img, label);
        for (std::size_t pi = 0; pi < m.params.size(); ++pi) {
            const VitSite site = vit_site_of(m.param_names[pi]);
            const std::size_t sz = m.params[pi].size();
            out.grads[pi].assign(sz, 0.0);
            for (std::size_t e = 0; e < sz; ++e) {
                bool kink = false;
                const double lp = vit_eval(V, site, e, +h, kink);
                const double lm = vit_eval(V, site, e, -h, kink);
                ++out.total;
                if (kink) {
                    out.grads[pi][e] = kNan;
                    ++out.skipped;
                } else {
                    out.grads[pi][e] = (lp - lm) / (2.0 * h);
                }
            }
        }
        return out;
    }

    ConvCache C = build_conv(m, img, label);
    for (std::size_t pi = 0; pi < m.params.size(); ++pi) {
        const ConvSite site = conv_site_of(m.param_names[pi]);
        const std::size_t sz = m.params[pi].size();
        out.grads[pi].assign(sz, 0.0);
        for (std::size_t e = 0; e < sz; ++e) {
            bool kink = false;
            double lp, lm;
            if (site.fc) {
                lp = fc_eval(C, site.ordinal, site.bias, e, +h, kink);
                lm = fc_eval(C, site.ordinal, site.bias, e, -h, kink);
            } else {
                lp = conv_eval(C, site.ordinal, site.bias, e, +h, kink);
                lm = conv_eval(C, site.ordinal, site.bias, e, -h, kink);
            }
            ++out.total;
            if (kink) {
                out.grads[pi][e] = kNan;
                ++out.skipped;
            } else {
                out.grads[pi][e] = (lp - lm) / (2.0 * h);
            }
        }
    }
    return out;
}

CompareStats compare_gradients(const Model& m, const FdResult& fd, double tol,
                               double floor_) {
    CompareStats st;
    for (std::size_t pi = 0; pi < m.params.size(); ++pi) {
        const auto& g = m.params[pi].storage()->grad;
        const auto& f = fd.grads[pi];
        for (std::size_t e = 0; e < f.size(); ++e) {
            if (std::isnan(f[e])) {
                ++st.skipped;
                continue;
            }
            const double bp = e < g.size() ? g[e] : 0.0;
            const double denom =
                std::max({std::abs(bp), std::abs(f[e]), floor_});
            const double rel = std::abs(bp - f[e]) / denom;
            ++st.compared;
            if (rel > tol) ++st.mismatches;
            if (rel > st.worst) {
                st.worst = rel;
                st.worst_param = pi;
                st.worst_elem = e;
            }
        }
    }
    return st;
}

} // namespace fdcheck
