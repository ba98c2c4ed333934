#include "hqnn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <utility>

#include "hqnn/errors.hpp"

namespace hqnn::autodiff {

namespace {

using StoragePtr = std::shared_ptr<TensorStorage>;

bool wants_grad(const TensorStorage& s) {
    return s.requires_grad || s.node >= 0;
}

std::vector<int> on_graph_inputs(std::initializer_list<const Tensor*> ts) {
    std::vector<int> ids;
    for (const Tensor* t : ts)
        if (t->on_graph()) ids.push_back(t->node());
    return ids;
}

void check_rank(const Tensor& t, std::size_t rank, const char* what) {
    if (t.rank() != rank)
        throw ShapeError(std::string(what) + ": expected rank " +
                         std::to_string(rank) + ", got shape " +
                         shape_str(t.shape()));
}

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

} // namespace

Tensor conv2d(Graph& g, const Tensor& input, const Tensor& kernel,
              const Tensor& bias, Padding padding) {
    check_rank(input, 3, "conv2d input");
    check_rank(kernel, 4, "conv2d kernel");
    check_rank(bias, 1, "conv2d bias");
    const std::size_t ci_n = input.shape()[0];
    const std::size_t h = input.shape()[1];
    const std::size_t w = input.shape()[2];
    const std::size_t co_n = kernel.shape()[0];
    const std::size_t kh = kernel.shape()[2];
    const std::size_t kw = kernel.shape()[3];
    if (kernel.shape()[1] != ci_n)
        throw ShapeError("conv2d: kernel expects " +
                         std::to_string(kernel.shape()[1]) +
                         " input channels, image has " + std::to_string(ci_n));
    if (bias.shape()[0] != co_n)
        throw ShapeError("conv2d: bias size " + std::to_string(bias.shape()[0]) +
                         " does not match " + std::to_string(co_n) +
                         " output channels");
    std::size_t oh = 0, ow = 0, ph = 0, pw = 0;
    if (padding == Padding::same) {
        if (kh % 2 == 0 || kw % 2 == 0)
            throw ShapeError("conv2d: same padding needs odd kernel dims, got " +
                             shape_str(kernel.shape()));
        oh = h;
        ow = w;
        ph = kh / 2;
        pw = kw / 2;
    } else {
        if (h < kh || w < kw)
            throw ShapeError("conv2d: kernel " + shape_str(kernel.shape()) +
                             " larger than image " + shape_str(input.shape()));
        oh = h - kh + 1;
        ow = w - kw + 1;
    }

    Tensor out = Tensor::zeros({co_n, oh, ow});
    const double* in = input.data();
    const double* kn = kernel.data();
    const double* bs = bias.data();
    double* o = out.data();
    // Taps accumulate in (row, col, channel) order; reordering the loops
    // changes the low bits of the sums.
    for (std::size_t co = 0; co < co_n; ++co)
        for (std::size_t oi = 0; oi < oh; ++oi)
            for (std::size_t oj = 0; oj < ow; ++oj) {
                double acc = 0.0;
                for (std::size_t m = 0; m < kh; ++m)
                    for (std::size_t n = 0; n < kw; ++n)
                        for (std::size_t ci = 0; ci < ci_n; ++ci) {
                            const std::ptrdiff_t ii =
                                static_cast<std::ptrdiff_t>(oi + m) -
                                static_cast<std::ptrdiff_t>(ph);
                            const std::ptrdiff_t jj =
                                static_cast<std::ptrdiff_t>(oj + n) -
                                static_cast<std::ptrdiff_t>(pw);
                            if (ii < 0 || jj < 0 ||
                                ii >= static_cast<std::ptrdiff_t>(h) ||
                                jj >= static_cast<std::ptrdiff_t>(w))
                                continue;
                            acc += in[(ci * h + static_cast<std::size_t>(ii)) * w +
                                      static_cast<std::size_t>(jj)] *
                                   kn[((co * ci_n + ci) * kh + m) * kw + n];
                        }
                o[(co * oh + oi) * ow + oj] = acc + bs[co];
            }

    StoragePtr si = input.storage(), sk = kernel.storage(), sb = bias.storage(),
               so = out.storage();
    g.add_node("conv2d", on_graph_inputs({&input, &kernel, &bias}), out,
               [si, sk, sb, so, ci_n, h, w, co_n, kh, kw, oh, ow, ph, pw]() {
                   const double* go = so->grad.data();
                   const double* in = si->data.data();
                   const double* kn = sk->data.data();
                   const bool gi = wants_grad(*si);
                   const bool gk = wants_grad(*sk);
                   const bool gb = wants_grad(*sb);
                   double* din = gi ? grad_ref(*si).data() : nullptr;
                   double* dkn = gk ? grad_ref(*sk).data() : nullptr;
                   double* dbs = gb ? grad_ref(*sb).data() : nullptr;
                   for (std::size_t co = 0; co < co_n; ++co)
                       for (std::size_t oi = 0; oi < oh; ++oi)
                           for (std::size_t oj = 0; oj < ow; ++oj) {
                               const double gout = go[(co * oh + oi) * ow + oj];
                               if (gout == 0.0) continue;
                               if (gb) dbs[co] += gout;
                               if (!gi && !gk) continue;
                               for (std::size_t m = 0; m < kh; ++m)
                                   for (std::size_t n = 0; n < kw; ++n)
                                       for (std::size_t ci = 0; ci < ci_n; ++ci) {
                                           const std::ptrdiff_t ii =
                                               static_cast<std::ptrdiff_t>(oi + m) -
                                               static_cast<std::ptrdiff_t>(ph);
                                           const std::ptrdiff_t jj =
                                               static_cast<std::ptrdiff_t>(oj + n) -
                                               static_cast<std::ptrdiff_t>(pw);
                                           if (ii < 0 || jj < 0 ||
                                               ii >= static_cast<std::ptrdiff_t>(h) ||
                                               jj >= static_cast<std::ptrdiff_t>(w))
                                               continue;
                                           const std::size_t iidx =
                                               (ci * h + static_cast<std::size_t>(ii)) * w +
                                               static_cast<std::size_t>(jj);
                                           const std::size_t kidx =
                                               ((co * ci_n + ci) * kh + m) * kw + n;
                                           if (dkn) dkn[kidx] += gout * in[iidx];
                                           if (din) din[iidx] += gout * kn[kidx];
                                       }
                           }
               });
    return out;
}

Tensor maxpool2d(Graph& g, const Tensor& input) {
    check_rank(input, 3, "maxpool2d input");
    const std::size_t c_n = input.shape()[0];
    const std::size_t h = input.shape()[1];
    const std::size_t w = input.shape()[2];
    if (h % 2 != 0 || w % 2 != 0)
        throw ShapeError("maxpool2d: spatial dims must be even, got " +
                         shape_str(input.shape()));
    const std::size_t oh = h / 2, ow = w / 2;
    Tensor out = Tensor::zeros({c_n, oh, ow});
    auto argmax = std::make_shared<std::vector<std::size_t>>(c_n * oh * ow);
    const double* in = input.data();
    double* o = out.data();
    for (std::size_t c = 0; c < c_n; ++c)
        for (std::size_t oi = 0; oi < oh; ++oi)
            for (std::size_t oj = 0; oj < ow; ++oj) {
                std::size_t best = (c * h + 2 * oi) * w + 2 * oj;
                double best_v = in[best];
                // Strict > keeps the first maximal cell in scan order on ties.
                for (std::size_t di = 0; di < 2; ++di)
                    for (std::size_t dj = 0; dj < 2; ++dj) {
                        const std::size_t idx =
                            (c * h + 2 * oi + di) * w + 2 * oj + dj;
                        if (in[idx] > best_v) {
                            best_v = in[idx];
                            best = idx;
                        }
                    }
                const std::size_t oidx = (c * oh + oi) * ow + oj;
                o[oidx] = best_v;
                (*argmax)[oidx] = best;
            }

    StoragePtr si = input.storage(), so = out.storage();
    g.add_node("maxpool2d", on_graph_inputs({&input}), out,
               [si, so, argmax]() {
                   if (!wants_grad(*si)) return;
                   double* din = grad_ref(*si).data();
                   const double* go = so->grad.data();
                   for (std::size_t i = 0; i < argmax->size(); ++i)
                       din[(*argmax)[i]] += go[i];
               });
    return out;
}

Tensor relu(Graph& g, const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    const double* in = x.data();
    double* o = out.data();
    for (std::size_t i = 0; i < x.size(); ++i) o[i] = in[i] > 0.0 ? in[i] : 0.0;
    StoragePtr si = x.storage(), so = out.storage();
    g.add_node("relu", on_graph_inputs({&x}), out, [si, so]() {
        if (!wants_grad(*si)) return;
        double* din = grad_ref(*si).data();
        const double* go = so->grad.data();
        for (std::size_t i = 0; i < si->data.size(); ++i)
            if (si->data[i] > 0.0) din[i] += go[i];
    });
    return out;
}

Tensor sigmoid(Graph& g, const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    const double* in = x.data();
    double* o = out.data();
    for (std::size_t i = 0; i < x.size(); ++i) o[i] = stable_sigmoid(in[i]);
    StoragePtr si = x.storage(), so = out.storage();
    g.add_node("sigmoid", on_graph_inputs({&x}), out, [si, so]() {
        if (!wants_grad(*si)) return;
        double* din = grad_ref(*si).data();
        const double* go = so->grad.data();
        for (std::size_t i = 0; i < so->data.size(); ++i) {
            const double s = so->data[i];
            din[i] += go[i] * s * (1.0 - s);
        }
    });
    return out;
}

Tensor linear(Graph& g, const Tensor& x, const Tensor& weight,
              const Tensor& bias) {
    check_rank(x, 1, "linear input");
    check_rank(weight, 2, "linear weight");
    check_rank(bias, 1, "linear bias");
    const std::size_t m = weight.shape()[0];
    const std::size_t n = weight.shape()[1];
    if (x.shape()[0] != n)
        throw ShapeError("linear: weight " + shape_str(weight.shape()) +
                         " cannot act on input " + shape_str(x.shape()));
    if (bias.shape()[0] != m)
        throw ShapeError("linear: bias size " + std::to_string(bias.shape()[0]) +
                         " does not match " + std::to_string(m) + " outputs");
    Tensor out = Tensor::zeros({m});
    const double* xv = x.data();
    const double* wv = weight.data();
    const double* bv = bias.data();
    double* o = out.data();
    for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += wv[i * n + j] * xv[j];
        o[i] = acc + bv[i];
    }
    StoragePtr sx = x.storage(), sw = weight.storage(), sb = bias.storage(),
               so = out.storage();
    g.add_node("linear", on_graph_inputs({&x, &weight, &bias}), out,
               [sx, sw, sb, so, m, n]() {
                   const double* go = so->grad.data();
                   if (wants_grad(*sb)) {
                       double* db = grad_ref(*sb).data();
                       for (std::size_t i = 0; i < m; ++i) db[i] += go[i];
                   }
                   if (wants_grad(*sw)) {
                       double* dw = grad_ref(*sw).data();
                       const double* xv = sx->data.data();
                       for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < n; ++j)
                               dw[i * n + j] += go[i] * xv[j];
                   }
                   if (wants_grad(*sx)) {
                       double* dx = grad_ref(*sx).data();
                       const double* wv = sw->data.data();
                       for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < n; ++j)
                               dx[j] += go[i] * wv[i * n + j];
                   }
               });
    return out;
}

Tensor bce_loss(Graph& g, const Tensor& p, double label) {
    if (p.size() != 1)
        throw ShapeError("bce_loss: probability must be a scalar, got " +
                         shape_str(p.shape()));
    if (label != 0.0 && label != 1.0)
        throw ValidationError("bce_loss: label must be 0 or 1, got " +
                              std::to_string(label));
    const double q =
        std::min(std::max(p.data()[0], kBceClamp), 1.0 - kBceClamp);
    const double loss = label == 1.0 ? -std::log(q) : -std::log(1.0 - q);
    Tensor out = Tensor::scalar(loss);
    StoragePtr sp = p.storage(), so = out.storage();
    g.add_node("bce_loss", on_graph_inputs({&p}), out, [sp, so, label, q]() {
        if (!wants_grad(*sp)) return;
        // Straight-through at the clamp: the saturated slope still uses the
        // clamped probability, so gradients stay finite.
        const double d = label == 1.0 ? -1.0 / q : 1.0 / (1.0 - q);
        grad_ref(*sp)[0] += so->grad[0] * d;
    });
    return out;
}

Tensor matmul(Graph& g, const Tensor& a, const Tensor& b) {
    check_rank(a, 2, "matmul lhs");
    check_rank(b, 2, "matmul rhs");
    const std::size_t n = a.shape()[0], k = a.shape()[1];
    if (b.shape()[0] != k)
        throw ShapeError("matmul: inner dims differ, " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
    const std::size_t m = b.shape()[1];
    Tensor out = Tensor::zeros({n, m});
    const double* av = a.data();
    const double* bv = b.data();
    double* o = out.data();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            double acc = 0.0;
            for (std::size_t t = 0; t < k; ++t)
                acc += av[i * k + t] * bv[t * m + j];
            o[i * m + j] = acc;
        }
    StoragePtr sa = a.storage(), sb = b.storage(), so = out.storage();
    g.add_node("matmul", on_graph_inputs({&a, &b}), out, [sa, sb, so, n, k, m]() {
        const double* go = so->grad.data();
        if (wants_grad(*sa)) {
            double* da = grad_ref(*sa).data();
            const double* bv = sb->data.data();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t t = 0; t < k; ++t) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < m; ++j)
                        acc += go[i * m + j] * bv[t * m + j];
                    da[i * k + t] += acc;
                }
        }
        if (wants_grad(*sb)) {
            double* db = grad_ref(*sb).data();
            const double* av = sa->data.data();
            for (std::size_t t = 0; t < k; ++t)
                for (std::size_t j = 0; j < m; ++j) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < n; ++i)
                        acc += av[i * k + t] * go[i * m + j];
                    db[t * m + j] += acc;
                }
        }
    });
    return out;
}

Tensor matmul_nt(Graph& g, const Tensor& a, const Tensor& b) {
    check_rank(a, 2, "matmul_nt lhs");
    check_rank(b, 2, "matmul_nt rhs");
    const std::size_t n = a.shape()[0], k = a.shape()[1];
    if (b.shape()[1] != k)
        throw ShapeError("matmul_nt: inner dims differ, " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()) + "^T");
    const std::size_t m = b.shape()[0];
    Tensor out = Tensor::zeros({n, m});
    const double* av = a.data();
    const double* bv = b.data();
    double* o = out.data();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            double acc = 0.0;
            for (std::size_t t = 0; t < k; ++t)
                acc += av[i * k + t] * bv[j * k + t];
            o[i * m + j] = acc;
        }
    StoragePtr sa = a.storage(), sb = b.storage(), so = out.storage();
    g.add_node("matmul_nt", on_graph_inputs({&a, &b}), out,
               [sa, sb, so, n, k, m]() {
                   const double* go = so->grad.data();
                   if (wants_grad(*sa)) {
                       double* da = grad_ref(*sa).data();
                       const double* bv = sb->data.data();
                       for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t t = 0; t < k; ++t) {
                               double acc = 0.0;
                               for (std::size_t j = 0; j < m; ++j)
                                   acc += go[i * m + j] * bv[j * k + t];
                               da[i * k + t] += acc;
                           }
                   }
                   if (wants_grad(*sb)) {
                       double* db = grad_ref(*sb).data();
                       const double* av = sa->data.data();
                       for (std::size_t j = 0; j < m; ++j)
                           for (std::size_t t = 0; t < k; ++t) {
                               double acc = 0.0;
                               for (std::size_t i = 0; i < n; ++i)
                                   acc += go[i * m + j] * av[i * k + t];
                               db[j * k + t] += acc;
                           }
                   }
               });
    return out;
}

Tensor softmax_rows(Graph& g, const Tensor& x) {
    check_rank(x, 2, "softmax_rows input");
    const std::size_t n = x.shape()[0], d = x.shape()[1];
    Tensor out = Tensor::zeros({n, d});
    const double* in = x.data();
    double* o = out.data();
    for (std::size_t i = 0; i < n; ++i) {
        double mx = in[i * d];
        for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, in[i * d + j]);
        double z = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            o[i * d + j] = std::exp(in[i * d + j] - mx);
            z += o[i * d + j];
        }
        for (std::size_t j = 0; j < d; ++j) o[i * d + j] /= z;
    }
    StoragePtr si = x.storage(), so = out.storage();
    g.add_node("softmax_rows", on_graph_inputs({&x}), out, [si, so, n, d]() {
        if (!wants_grad(*si)) return;
        double* din = grad_ref(*si).data();
        const double* go = so->grad.data();
        const double* s = so->data.data();
        for (std::size_t i = 0; i < n; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j)
                dot += go[i * d + j] * s[i * d + j];
            for (std::size_t j = 0; j < d; ++j)
                din[i * d + j] += s[i * d + j] * (go[i * d + j] - dot);
        }
    });
    return out;
}

Tensor layer_norm(Graph& g, const Tensor& x, const Tensor& gamma,
                  const Tensor& beta) {
    check_rank(x, 2, "layer_norm input");
    check_rank(gamma, 1, "layer_norm gamma");
    check_rank(beta, 1, "layer_norm beta");
    const std::size_t n = x.shape()[0], d = x.shape()[1];
    if (gamma.shape()[0] != d || beta.shape()[0] != d)
        throw ShapeError("layer_norm: scale/shift must have size " +
                         std::to_string(d));
    Tensor out = Tensor::zeros({n, d});
    auto xhat = std::make_shared<std::vector<double>>(n * d);
    auto inv_std = std::make_shared<std::vector<double>>(n);
    const double* in = x.data();
    const double* gv = gamma.data();
    const double* bv = beta.data();
    double* o = out.data();
    for (std::size_t i = 0; i < n; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += in[i * d + j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = in[i * d + j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + kLayerNormEps);
        (*inv_std)[i] = is;
        for (std::size_t j = 0; j < d; ++j) {
            const double xh = (in[i * d + j] - mean) * is;
            (*xhat)[i * d + j] = xh;
            o[i * d + j] = gv[j] * xh + bv[j];
        }
    }
    StoragePtr sx = x.storage(), sg = gamma.storage(), sb = beta.storage(),
               so = out.storage();
    g.add_node("layer_norm", on_graph_inputs({&x, &gamma, &beta}), out,
               [sx, sg, sb, so, xhat, inv_std, n, d]() {
                   const double* go = so->grad.data();
                   const double* gv = sg->data.data();
                   if (wants_grad(*sg)) {
                       double* dg = grad_ref(*sg).data();
                       for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t j = 0; j < d; ++j)
                               dg[j] += go[i * d + j] * (*xhat)[i * d + j];
                   }
                   if (wants_grad(*sb)) {
                       double* db = grad_ref(*sb).data();
                       for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t j = 0; j < d; ++j)
                               db[j] += go[i * d + j];
                   }
                   if (!wants_grad(*sx)) return;
                   double* dx = grad_ref(*sx).data();
                   const double dn = static_cast<double>(d);
                   for (std::size_t i = 0; i < n; ++i) {
                       double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                       for (std::size_t j = 0; j < d; ++j) {
                           const double dxh = go[i * d + j] * gv[j];
                           sum_dxh += dxh;
                           sum_dxh_xh += dxh * (*xhat)[i * d + j];
                       }
                       const double is = (*inv_std)[i];
                       for (std::size_t j = 0; j < d; ++j) {
                           const double dxh = go[i * d + j] * gv[j];
                           dx[i * d + j] +=
                               is * (dxh - sum_dxh / dn -
                                     (*xhat)[i * d + j] * sum_dxh_xh / dn);
                       }
                   }
               });
    return out;
}

namespace {

Tensor elementwise_pair(Graph& g, const Tensor& a, const Tensor& b,
                        const char* op, bool product) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out = Tensor::zeros(a.shape());
    const double* av = a.data();
    const double* bv = b.data();
    double* o = out.data();
    for (std::size_t i = 0; i < a.size(); ++i)
        o[i] = product ? av[i] * bv[i] : av[i] + bv[i];
    StoragePtr sa = a.storage(), sb = b.storage(), so = out.storage();
    g.add_node(op, on_graph_inputs({&a, &b}), out, [sa, sb, so, product]() {
        const double* go = so->grad.data();
        if (wants_grad(*sa)) {
            double* da = grad_ref(*sa).data();
            for (std::size_t i = 0; i < so->data.size(); ++i)
                da[i] += product ? go[i] * sb->data[i] : go[i];
        }
        if (wants_grad(*sb)) {
            double* db = grad_ref(*sb).data();
            for (std::size_t i = 0; i < so->data.size(); ++i)
                db[i] += product ? go[i] * sa->data[i] : go[i];
        }
    });
    return out;
}

} // namespace

Tensor add(Graph& g, const Tensor& a, const Tensor& b) {
    return elementwise_pair(g, a, b, "add", false);
}

Tensor mul(Graph& g, const Tensor& a, const Tensor& b) {
    return elementwise_pair(g, a, b, "mul", true);
}

Tensor add_row_bias(Graph& g, const Tensor& x, const Tensor& bias) {
    check_rank(x, 2, "add_row_bias input");
    check_rank(bias, 1, "add_row_bias bias");
    const std::size_t n = x.shape()[0], d = x.shape()[1];
    if (bias.shape()[0] != d)
        throw ShapeError("add_row_bias: bias size " +
                         std::to_string(bias.shape()[0]) +
                         " does not match row width " + std::to_string(d));
    Tensor out = Tensor::zeros({n, d});
    const double* xv = x.data();
    const double* bv = bias.data();
    double* o = out.data();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) o[i * d + j] = xv[i * d + j] + bv[j];
    StoragePtr sx = x.storage(), sb = bias.storage(), so = out.storage();
    g.add_node("add_row_bias", on_graph_inputs({&x, &bias}), out,
               [sx, sb, so, n, d]() {
                   const double* go = so->grad.data();
                   if (wants_grad(*sx)) {
                       double* dx = grad_ref(*sx).data();
                       for (std::size_t i = 0; i < n * d; ++i) dx[i] += go[i];
                   }
                   if (wants_grad(*sb)) {
                       double* db = grad_ref(*sb).data();
                       for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t j = 0; j < d; ++j)
                               db[j] += go[i * d + j];
                   }
               });
    return out;
}

Tensor scale(Graph& g, const Tensor& x, double c) {
    Tensor out = Tensor::zeros(x.shape());
    const double* in = x.data();
    double* o = out.data();
    for (std::size_t i = 0; i < x.size(); ++i) o[i] = in[i] * c;
    StoragePtr si = x.storage(), so = out.storage();
    g.add_node("scale", on_graph_inputs({&x}), out, [si, so, c]() {
        if (!wants_grad(*si)) return;
        double* din = grad_ref(*si).data();
        for (std::size_t i = 0; i < so->data.size(); ++i)
            din[i] += so->grad[i] * c;
    });
    return out;
}

Tensor mean_rows(Graph& g, const Tensor& x) {
    check_rank(x, 2, "mean_rows input");
    const std::size_t n = x.shape()[0], d = x.shape()[1];
    Tensor out = Tensor::zeros({d});
    const double* in = x.data();
    double* o = out.data();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) o[j] += in[i * d + j];
    for (std::size_t j = 0; j < d; ++j) o[j] /= static_cast<double>(n);
    StoragePtr si = x.storage(), so = out.storage();
    g.add_node("mean_rows", on_graph_inputs({&x}), out, [si, so, n, d]() {
        if (!wants_grad(*si)) return;
        double* din = grad_ref(*si).data();
        const double* go = so->grad.data();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j)
                din[i * d + j] += go[j] / static_cast<double>(n);
    });
    return out;
}

Tensor flatten(Graph& g, const Tensor& x) {
    Tensor out = Tensor::from_data({x.size()}, x.data_vec());
    StoragePtr si = x.storage(), so = out.storage();
    g.add_node("flatten", on_graph_inputs({&x}), out, [si, so]() {
        if (!wants_grad(*si)) return;
        double* din = grad_ref(*si).data();
        for (std::size_t i = 0; i < so->data.size(); ++i)
            din[i] += so->grad[i];
    });
    return out;
}

Tensor slice_cols(Graph& g, const Tensor& x, std::size_t first,
                  std::size_t count) {
    check_rank(x, 2, "slice_cols input");
    const std::size_t n = x.shape()[0], d = x.shape()[1];
    if (first + count > d)
        throw ShapeError("slice_cols: columns [" + std::to_string(first) + ", " +
                         std::to_string(first + count) + ") out of range for " +
                         shape_str(x.shape()));
    Tensor out = Tensor::zeros({n, count});
    const double* in = x.data();
    double* o = out.data();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < count; ++j)
            o[i * count + j] = in[i * d + first + j];
    StoragePtr si = x.storage(), so = out.storage();
    g.add_node("slice_cols", on_graph_inputs({&x}), out,
               [si, so, n, d, first, count]() {
                   if (!wants_grad(*si)) return;
                   double* din = grad_ref(*si).data();
                   const double* go = so->grad.data();
                   for (std::size_t i = 0; i < n; ++i)
                       for (std::size_t j = 0; j < count; ++j)
                           din[i * d + first + j] += go[i * count + j];
               });
    return out;
}

Tensor concat_cols(Graph& g, const std::vector<Tensor>& parts) {
    if (parts.empty())
        throw ContractError("concat_cols: no tensors given");
    const std::size_t n = parts[0].shape()[0];
    std::size_t total = 0;
    for (const Tensor& p : parts) {
        check_rank(p, 2, "concat_cols input");
        if (p.shape()[0] != n)
            throw ShapeError("concat_cols: row counts differ, " +
                             std::to_string(n) + " vs " +
                             std::to_string(p.shape()[0]));
        total += p.shape()[1];
    }
    Tensor out = Tensor::zeros({n, total});
    double* o = out.data();
    std::size_t off = 0;
    for (const Tensor& p : parts) {
        const std::size_t d = p.shape()[1];
        const double* in = p.data();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j)
                o[i * total + off + j] = in[i * d + j];
        off += d;
    }
    std::vector<StoragePtr> srcs;
    std::vector<int> input_ids;
    for (const Tensor& p : parts) {
        srcs.push_back(p.storage());
        if (p.on_graph()) input_ids.push_back(p.node());
    }
    StoragePtr so = out.storage();
    g.add_node("concat_cols", std::move(input_ids), out, [srcs, so, n, total]() {
        const double* go = so->grad.data();
        std::size_t off = 0;
        for (const StoragePtr& s : srcs) {
            const std::size_t d = s->shape[1];
            if (wants_grad(*s)) {
                double* d_in = grad_ref(*s).data();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < d; ++j)
                        d_in[i * d + j] += go[i * total + off + j];
            }
            off += d;
        }
    });
    return out;
}

Tensor sum(Graph& g, const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data_vec()) acc += v;
    Tensor out = Tensor::scalar(acc);
    StoragePtr si = x.storage(), so = out.storage();
    g.add_node("sum", on_graph_inputs({&x}), out, [si, so]() {
        if (!wants_grad(*si)) return;
        double* din = grad_ref(*si).data();
        for (std::size_t i = 0; i < si->data.size(); ++i)
            din[i] += so->grad[0];
    });
    return out;
}

Tensor extract_patches(Graph& g, const Tensor& image, std::size_t patch) {
    check_rank(image, 3, "extract_patches input");
    if (patch == 0)
        throw ShapeError("extract_patches: patch size must be positive");
    const std::size_t c_n = image.shape()[0];
    const std::size_t h = image.shape()[1];
    const std::size_t w = image.shape()[2];
    if (h % patch != 0 || w % patch != 0)
        throw ShapeError("extract_patches: image " + shape_str(image.shape()) +
                         " not divisible into " + std::to_string(patch) + "x" +
                         std::to_string(patch) + " tiles");
    const std::size_t th = h / patch, tw = w / patch;
    const std::size_t n = th * tw;
    const std::size_t d = c_n * patch * patch;
    Tensor out = Tensor::zeros({n, d});
    const double* in = image.data();
    double* o = out.data();
    for (std::size_t ti = 0; ti < th; ++ti)
        for (std::size_t tj = 0; tj < tw; ++tj) {
            const std::size_t row = ti * tw + tj;
            std::size_t k = 0;
            for (std::size_t c = 0; c < c_n; ++c)
                for (std::size_t pi = 0; pi < patch; ++pi)
                    for (std::size_t pj = 0; pj < patch; ++pj)
                        o[row * d + k++] =
                            in[(c * h + ti * patch + pi) * w + tj * patch + pj];
        }
    StoragePtr si = image.storage(), so = out.storage();
    g.add_node("extract_patches", on_graph_inputs({&image}), out,
               [si, so, c_n, h, w, patch, th, tw, d]() {
                   if (!wants_grad(*si)) return;
                   double* din = grad_ref(*si).data();
                   const double* go = so->grad.data();
                   for (std::size_t ti = 0; ti < th; ++ti)
                       for (std::size_t tj = 0; tj < tw; ++tj) {
                           const std::size_t row = ti * tw + tj;
                           std::size_t k = 0;
                           for (std::size_t c = 0; c < c_n; ++c)
                               for (std::size_t pi = 0; pi < patch; ++pi)
                                   for (std::size_t pj = 0; pj < patch; ++pj)
                                       din[(c * h + ti * patch + pi) * w +
                                           tj * patch + pj] += go[row * d + k++];
                       }
               });
    return out;
}

} // namespace hqnn::autodiff
