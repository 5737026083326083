#include "dfb/ops.hpp"

#include "dfb/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace dfb::ops {

namespace {

void require_same_shape(const char* op, const Var& a, const Var& b)
{
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs "
                         + shape_str(b.shape()));
    }
}

template <typename F, typename D>
Var unary(const char* name, const Var& a, F f, D dfdx)
{
    Graph& g = a.graph();
    const Tensor& x = a.value();
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = f(x[i]);
    Var res;
    res = g.record(name, std::move(out), {a}, [&g, a, dfdx](const std::vector<double>& go) {
        auto ga = g.grad_of(a);
        const Tensor& xv = a.value();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * dfdx(xv[i]);
    });
    return res;
}

}  // namespace

Var add(const Var& a, const Var& b)
{
    require_same_shape("add", a, b);
    Graph& g = a.graph();
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + b.value()[i];
    return g.record("add", std::move(out), {a, b}, [&g, a, b](const std::vector<double>& go) {
        for (const Var& v : {a, b}) {
            auto gv = g.grad_of(v);
            for (std::size_t i = 0; i < gv.size(); ++i) gv[i] += go[i];
        }
    });
}

Var sub(const Var& a, const Var& b)
{
    require_same_shape("sub", a, b);
    Graph& g = a.graph();
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] - b.value()[i];
    return g.record("sub", std::move(out), {a, b}, [&g, a, b](const std::vector<double>& go) {
        auto ga = g.grad_of(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i];
        auto gb = g.grad_of(b);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= go[i];
    });
}

Var mul(const Var& a, const Var& b)
{
    require_same_shape("mul", a, b);
    Graph& g = a.graph();
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
    return g.record("mul", std::move(out), {a, b}, [&g, a, b](const std::vector<double>& go) {
        auto ga = g.grad_of(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * b.value()[i];
        auto gb = g.grad_of(b);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[i] * a.value()[i];
    });
}

Var scale(const Var& a, double factor)
{
    return unary("scale", a, [factor](double x) { return factor * x; },
                 [factor](double) { return factor; });
}

Var relu(const Var& a)
{
    return unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
                 [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& a, double slope)
{
    return unary("leaky_relu", a, [slope](double x) { return x > 0.0 ? x : slope * x; },
                 [slope](double x) { return x > 0.0 ? 1.0 : slope; });
}

Var sigmoid(const Var& a)
{
    auto f = [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
    };
    return unary("sigmoid", a, f, [f](double x) {
        const double s = f(x);
        return s * (1.0 - s);
    });
}

Var tanh(const Var& a)
{
    return unary("tanh", a, [](double x) { return std::tanh(x); },
                 [](double x) {
                     const double t = std::tanh(x);
                     return 1.0 - t * t;
                 });
}

Var square(const Var& a)
{
    return unary("square", a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var sum(const Var& a)
{
    Graph& g = a.graph();
    double s = 0.0;
    for (double v : a.value().data()) s += v;
    return g.record("sum", Tensor::scalar(s), {a}, [&g, a](const std::vector<double>& go) {
        auto ga = g.grad_of(a);
        for (double& v : ga) v += go[0];
    });
}

Var mean(const Var& a)
{
    Graph& g = a.graph();
    const double n = static_cast<double>(a.numel());
    double s = 0.0;
    for (double v : a.value().data()) s += v;
    return g.record("mean", Tensor::scalar(s / n), {a}, [&g, a, n](const std::vector<double>& go) {
        auto ga = g.grad_of(a);
        for (double& v : ga) v += go[0] / n;
    });
}

Var mse(const Var& a, const Var& b)
{
    require_same_shape("mse", a, b);
    Graph& g = a.graph();
    const double n = static_cast<double>(a.numel());
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = a.value()[i] - b.value()[i];
        s += d * d;
    }
    return g.record("mse", Tensor::scalar(s / n), {a, b}, [&g, a, b, n](const std::vector<double>& go) {
        auto ga = g.grad_of(a);
        auto gb = g.grad_of(b);
        const double c = 2.0 * go[0] / n;
        for (std::size_t i = 0; i < a.numel(); ++i) {
            const double d = c * (a.value()[i] - b.value()[i]);
            if (!ga.empty()) ga[i] += d;
            if (!gb.empty()) gb[i] -= d;
        }
    });
}

Var reshape(const Var& a, Shape shape)
{
    Graph& g = a.graph();
    return g.record("reshape", a.value().reshaped(std::move(shape)), {a},
                    [&g, a](const std::vector<double>& go) {
                        auto ga = g.grad_of(a);
                        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i];
                    });
}

Var matmul(const Var& a, const Var& b)
{
    if (a.value().rank() != 2 || b.value().rank() != 2 || a.shape()[1] != b.shape()[0]) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and "
                         + shape_str(b.shape()));
    }
    Graph& g = a.graph();
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    Tensor out({m, n});
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double x = av[i * k + p];
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] += x * bv[p * n + j];
        }
    return g.record("matmul", std::move(out), {a, b}, [&g, a, b, m, k, n](const std::vector<double>& go) {
        auto ga = g.grad_of(a);
        auto gb = g.grad_of(b);
        const Tensor& av = a.value();
        const Tensor& bv = b.value();
        if (!ga.empty())
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) acc += go[i * n + j] * bv[p * n + j];
                    ga[i * k + p] += acc;
                }
        if (!gb.empty())
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double x = av[i * k + p];
                    for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += x * go[i * n + j];
                }
    });
}

Var linear(const Var& x, const Var& w, const Var& b)
{
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1] || b.numel() != ws[0]) {
        throw ShapeError("linear: incompatible shapes x" + shape_str(xs) + " w" + shape_str(ws) + " b"
                         + shape_str(b.shape()));
    }
    Graph& g = x.graph();
    const std::size_t n = xs[0], f = xs[1], o = ws[0];
    Tensor out({n, o});
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    const Tensor& bv = b.value();
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < o; ++j) {
            double acc = bv[j];
            for (std::size_t c = 0; c < f; ++c) acc += xv[r * f + c] * wv[j * f + c];
            out[r * o + j] = acc;
        }
    return g.record("linear", std::move(out), {x, w, b}, [&g, x, w, b, n, f, o](const std::vector<double>& go) {
        auto gx = g.grad_of(x);
        auto gw = g.grad_of(w);
        auto gb = g.grad_of(b);
        const Tensor& xv = x.value();
        const Tensor& wv = w.value();
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < o; ++j) {
                const double d = go[r * o + j];
                if (!gb.empty()) gb[j] += d;
                if (!gx.empty())
                    for (std::size_t c = 0; c < f; ++c) gx[r * f + c] += d * wv[j * f + c];
                if (!gw.empty())
                    for (std::size_t c = 0; c < f; ++c) gw[j * f + c] += d * xv[r * f + c];
            }
    });
}

Var concat_features(const std::vector<Var>& parts)
{
    if (parts.empty()) throw ShapeError("concat_features: no inputs");
    Graph& g = parts.front().graph();
    const std::size_t n = parts.front().shape().at(0);
    std::size_t total = 0;
    for (const Var& p : parts) {
        if (p.value().rank() != 2 || p.shape()[0] != n) {
            throw ShapeError("concat_features: expected [" + std::to_string(n) + ",F] got "
                             + shape_str(p.shape()));
        }
        total += p.shape()[1];
    }
    Tensor out({n, total});
    std::size_t offset = 0;
    for (const Var& p : parts) {
        const std::size_t f = p.shape()[1];
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < f; ++c) out[r * total + offset + c] = p.value()[r * f + c];
        offset += f;
    }
    return g.record("concat_features", std::move(out), parts, [&g, parts, n, total](const std::vector<double>& go) {
        std::size_t offset = 0;
        for (const Var& p : parts) {
            const std::size_t f = p.shape()[1];
            auto gp = g.grad_of(p);
            if (!gp.empty())
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t c = 0; c < f; ++c) gp[r * f + c] += go[r * total + offset + c];
            offset += f;
        }
    });
}

namespace {

kernels::ConvGeometry conv_geometry(const char* op, const Shape& in, const Shape& w,
                                    std::size_t stride, std::size_t pad)
{
    if (in.size() != 4 || w.size() != 4 || w[2] != w[3] || stride == 0) {
        throw ShapeError(std::string(op) + ": expected NCHW input and OIKK kernel, got input "
                         + shape_str(in) + " kernel " + shape_str(w));
    }
    kernels::ConvGeometry geo;
    geo.batch = in[0];
    geo.in_channels = w[1];
    geo.out_channels = w[0];
    geo.kernel = w[2];
    geo.stride = stride;
    geo.pad = pad;
    return geo;
}

}  // namespace

Var conv2d(const Var& input, const Var& kernel, std::size_t stride, std::size_t pad)
{
    const Shape& in = input.shape();
    const Shape& w = kernel.shape();
    kernels::ConvGeometry geo = conv_geometry("conv2d", in, w, stride, pad);
    if (in[1] != w[1] || in[2] + 2 * pad < w[2] || in[3] + 2 * pad < w[3]) {
        throw ShapeError("conv2d: input " + shape_str(in) + " incompatible with kernel " + shape_str(w)
                         + " (stride " + std::to_string(stride) + ", pad " + std::to_string(pad) + ")");
    }
    geo.in_h = in[2];
    geo.in_w = in[3];
    Tensor out({geo.batch, geo.out_channels, geo.out_h(), geo.out_w()});
    kernels::parallel::conv2d_forward(geo, input.value().data(), kernel.value().data(), out.data());
    Graph& g = input.graph();
    return g.record("conv2d", std::move(out), {input, kernel}, [&g, input, kernel, geo](const std::vector<double>& go) {
        auto gi = g.grad_of(input);
        if (!gi.empty()) {
            std::vector<double> tmp(gi.size());
            kernels::parallel::conv2d_backward_input(geo, go, kernel.value().data(), tmp);
            for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += tmp[i];
        }
        auto gw = g.grad_of(kernel);
        if (!gw.empty()) kernels::parallel::conv2d_backward_weight(geo, input.value().data(), go, gw);
    });
}

Var conv2d_transpose(const Var& input, const Var& kernel, std::size_t stride, std::size_t pad)
{
    const Shape& in = input.shape();
    const Shape& w = kernel.shape();
    kernels::ConvGeometry geo = conv_geometry("conv2d_transpose", in, w, stride, pad);
    // `input` plays the role of the conv output: channels must match O.
    if (in[1] != w[0] || in[2] == 0 || in[3] == 0) {
        throw ShapeError("conv2d_transpose: input " + shape_str(in) + " incompatible with kernel "
                         + shape_str(w));
    }
    const long long oh = static_cast<long long>((in[2] - 1) * stride + w[2]) - 2 * static_cast<long long>(pad);
    const long long ow = static_cast<long long>((in[3] - 1) * stride + w[3]) - 2 * static_cast<long long>(pad);
    if (oh <= 0 || ow <= 0) {
        throw ShapeError("conv2d_transpose: input " + shape_str(in) + " with kernel " + shape_str(w)
                         + " yields empty output");
    }
    geo.in_h = static_cast<std::size_t>(oh);
    geo.in_w = static_cast<std::size_t>(ow);
    if (geo.out_h() != in[2] || geo.out_w() != in[3]) {
        throw ShapeError("conv2d_transpose: geometry not invertible for input " + shape_str(in));
    }
    Tensor out({geo.batch, geo.in_channels, geo.in_h, geo.in_w});
    kernels::parallel::conv2d_backward_input(geo, input.value().data(), kernel.value().data(), out.data());
    Graph& g = input.graph();
    return g.record("conv2d_transpose", std::move(out), {input, kernel},
                    [&g, input, kernel, geo](const std::vector<double>& go) {
                        auto gi = g.grad_of(input);
                        if (!gi.empty()) {
                            std::vector<double> tmp(gi.size());
                            kernels::parallel::conv2d_forward(geo, go, kernel.value().data(), tmp);
                            for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += tmp[i];
                        }
                        auto gw = g.grad_of(kernel);
                        // Roles swap: the transposed output is the conv input.
                        if (!gw.empty()) kernels::parallel::conv2d_backward_weight(geo, go, input.value().data(), gw);
                    });
}

Var add_channel_bias(const Var& x, const Var& bias)
{
    const Shape& s = x.shape();
    if (s.size() != 4 || bias.numel() != s[1]) {
        throw ShapeError("add_channel_bias: x " + shape_str(s) + " bias " + shape_str(bias.shape()));
    }
    Graph& g = x.graph();
    const std::size_t n = s[0], c = s[1], hw = s[2] * s[3];
    Tensor out = x.value().detached();
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double v = bias.value()[ch];
            double* p = out.data().data() + (b * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) p[i] += v;
        }
    return g.record("add_channel_bias", std::move(out), {x, bias}, [&g, x, bias, n, c, hw](const std::vector<double>& go) {
        auto gx = g.grad_of(x);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
        auto gb = g.grad_of(bias);
        if (!gb.empty())
            for (std::size_t b = 0; b < n; ++b)
                for (std::size_t ch = 0; ch < c; ++ch) {
                    double acc = 0.0;
                    const double* p = go.data() + (b * c + ch) * hw;
                    for (std::size_t i = 0; i < hw; ++i) acc += p[i];
                    gb[ch] += acc;
                }
    });
}

Var global_avg_pool(const Var& x)
{
    const Shape& s = x.shape();
    if (s.size() != 4) throw ShapeError("global_avg_pool: expected NCHW, got " + shape_str(s));
    Graph& g = x.graph();
    const std::size_t n = s[0], c = s[1], hw = s[2] * s[3];
    Tensor out({n, c});
    for (std::size_t i = 0; i < n * c; ++i) {
        double acc = 0.0;
        const double* p = x.value().data().data() + i * hw;
        for (std::size_t j = 0; j < hw; ++j) acc += p[j];
        out[i] = acc / static_cast<double>(hw);
    }
    return g.record("global_avg_pool", std::move(out), {x}, [&g, x, n, c, hw](const std::vector<double>& go) {
        auto gx = g.grad_of(x);
        for (std::size_t i = 0; i < n * c; ++i) {
            const double d = go[i] / static_cast<double>(hw);
            for (std::size_t j = 0; j < hw; ++j) gx[i * hw + j] += d;
        }
    });
}

Var channel_unit_normalize(const Var& x, double eps)
{
    const Shape& s = x.shape();
    if (s.size() != 4) throw ShapeError("channel_unit_normalize: expected NCHW, got " + shape_str(s));
    Graph& g = x.graph();
    const std::size_t n = s[0], c = s[1], hw = s[2] * s[3];
    const Tensor& xv = x.value();
    Tensor out(s);
    std::vector<double> norms(n * hw);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t p = 0; p < hw; ++p) {
            double ss = 0.0;
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double v = xv[(b * c + ch) * hw + p];
                ss += v * v;
            }
            const double norm = std::sqrt(ss + eps);
            norms[b * hw + p] = norm;
            for (std::size_t ch = 0; ch < c; ++ch) out[(b * c + ch) * hw + p] = xv[(b * c + ch) * hw + p] / norm;
        }
    return g.record("channel_unit_normalize", std::move(out), {x},
                    [&g, x, n, c, hw, norms = std::move(norms)](const std::vector<double>& go) {
                        auto gx = g.grad_of(x);
                        const Tensor& xv = x.value();
                        for (std::size_t b = 0; b < n; ++b)
                            for (std::size_t p = 0; p < hw; ++p) {
                                const double norm = norms[b * hw + p];
                                double dot = 0.0;
                                for (std::size_t ch = 0; ch < c; ++ch) {
                                    const std::size_t i = (b * c + ch) * hw + p;
                                    dot += go[i] * xv[i];
                                }
                                const double n3 = norm * norm * norm;
                                for (std::size_t ch = 0; ch < c; ++ch) {
                                    const std::size_t i = (b * c + ch) * hw + p;
                                    gx[i] += go[i] / norm - xv[i] * dot / n3;
                                }
                            }
                    });
}

Var standardize(const Var& x, const Tensor& mean, const Tensor& stddev)
{
    const Shape& s = x.shape();
    if (s.size() != 2 || mean.numel() != s[1] || stddev.numel() != s[1]) {
        throw ShapeError("standardize: x " + shape_str(s) + " stats " + shape_str(mean.shape()));
    }
    Graph& g = x.graph();
    const std::size_t n = s[0], f = s[1];
    Tensor out(s);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < f; ++c) out[r * f + c] = (x.value()[r * f + c] - mean[c]) / stddev[c];
    return g.record("standardize", std::move(out), {x}, [&g, x, n, f, stddev](const std::vector<double>& go) {
        auto gx = g.grad_of(x);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < f; ++c) gx[r * f + c] += go[r * f + c] / stddev[c];
    });
}

Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels)
{
    const Shape& s = logits.shape();
    if (s.size() != 2 || s[0] != labels.size()) {
        throw ShapeError("softmax_cross_entropy: logits " + shape_str(s) + " for "
                         + std::to_string(labels.size()) + " labels");
    }
    Graph& g = logits.graph();
    const std::size_t n = s[0], k = s[1];
    std::vector<double> probs(n * k);
    double loss = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= k) {
            throw std::invalid_argument("softmax_cross_entropy: label out of range");
        }
        const double* z = logits.value().data().data() + r * k;
        const double m = *std::max_element(z, z + k);
        double se = 0.0;
        for (std::size_t j = 0; j < k; ++j) se += std::exp(z[j] - m);
        const double lse = m + std::log(se);
        for (std::size_t j = 0; j < k; ++j) probs[r * k + j] = std::exp(z[j] - lse);
        loss += lse - z[labels[r]];
    }
    loss /= static_cast<double>(n);
    return g.record("softmax_cross_entropy", Tensor::scalar(loss), {logits},
                    [&g, logits, labels, n, k, probs = std::move(probs)](const std::vector<double>& go) {
                        auto gl = g.grad_of(logits);
                        const double c = go[0] / static_cast<double>(n);
                        for (std::size_t r = 0; r < n; ++r)
                            for (std::size_t j = 0; j < k; ++j) {
                                const double target = static_cast<int>(j) == labels[r] ? 1.0 : 0.0;
                                gl[r * k + j] += c * (probs[r * k + j] - target);
                            }
                    });
}

Var bce_with_logits(const Var& logits, const std::vector<double>& targets)
{
    if (logits.numel() != targets.size()) {
        throw ShapeError("bce_with_logits: logits " + shape_str(logits.shape()) + " for "
                         + std::to_string(targets.size()) + " targets");
    }
    Graph& g = logits.graph();
    const std::size_t n = targets.size();
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double z = logits.value()[i];
        loss += std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))) - targets[i] * z;
    }
    loss /= static_cast<double>(n);
    return g.record("bce_with_logits", Tensor::scalar(loss), {logits},
                    [&g, logits, targets, n](const std::vector<double>& go) {
                        auto gl = g.grad_of(logits);
                        const double c = go[0] / static_cast<double>(n);
                        for (std::size_t i = 0; i < n; ++i) {
                            const double z = logits.value()[i];
                            const double s = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
                            gl[i] += c * (s - targets[i]);
                        }
                    });
}

}  // namespace dfb::ops

namespace dfb::ops {

Var film(const Var& x, const Var& gamma, const Var& beta)
{
    const Shape& s = x.shape();
    if (s.size() != 4 || gamma.shape() != Shape{s[0], s[1]} || beta.shape() != Shape{s[0], s[1]}) {
        throw ShapeError("film: x " + shape_str(s) + " gamma " + shape_str(gamma.shape()) + " beta "
                         + shape_str(beta.shape()));
    }
    Graph& g = x.graph();
    const std::size_t nc = s[0] * s[1], hw = s[2] * s[3];
    Tensor out(s);
    for (std::size_t i = 0; i < nc; ++i) {
        const double a = 1.0 + gamma.value()[i], b = beta.value()[i];
        for (std::size_t j = 0; j < hw; ++j) out[i * hw + j] = x.value()[i * hw + j] * a + b;
    }
    return g.record("film", std::move(out), {x, gamma, beta}, [&g, x, gamma, beta, nc, hw](const std::vector<double>& go) {
        auto gx = g.grad_of(x);
        auto gg = g.grad_of(gamma);
        auto gb = g.grad_of(beta);
        for (std::size_t i = 0; i < nc; ++i) {
            const double a = 1.0 + gamma.value()[i];
            double dg = 0.0, db = 0.0;
            for (std::size_t j = 0; j < hw; ++j) {
                const double d = go[i * hw + j];
                if (!gx.empty()) gx[i * hw + j] += d * a;
                dg += d * x.value()[i * hw + j];
                db += d;
            }
            if (!gg.empty()) gg[i] += dg;
            if (!gb.empty()) gb[i] += db;
        }
    });
}

}  // namespace dfb::ops
