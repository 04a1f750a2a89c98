#include "tsg/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tsg/common/error.hpp"
#include "tsg/simd/kernels.hpp"

namespace tsg::nn {
namespace {

using simd::Trans;

void require(bool cond, const char* op, const std::string& msg) {
    if (!cond) throw ModelError(std::string(op) + ": " + msg);
}

void require_rank(const Var& x, int rank, const char* op) {
    require(x.value().rank() == rank, op, "expected rank " + std::to_string(rank) + ", got " + to_string(x.shape()));
}

bool wants_grad(const Node& self, std::size_t i) {
    return i < self.parents.size() && self.parents[i] && self.parents[i]->requires_grad;
}

// Output pixels processed per im2col chunk, bounding the column buffer.
int im2col_chunk(int rows, int pixels) {
    constexpr int kBudget = 1 << 22;
    return std::clamp(kBudget / std::max(rows, 1), 1, std::max(pixels, 1));
}

struct ConvGeom {
    int c, h, w, kh, kw, stride, pad, ho, wo;
    int rows() const { return c * kh * kw; }
    int pixels() const { return ho * wo; }
};

// Visits the output-pixel range [q0, q0 + len) row by row for one kernel tap,
// calling f(dst_offset, iy, ox0, ox1) for each output row segment.
template <class F>
void for_each_row_segment(const ConvGeom& g, int q0, int len, F&& f) {
    int q = q0;
    const int end = q0 + len;
    while (q < end) {
        const int oy = q / g.wo;
        const int ox0 = q % g.wo;
        const int ox1 = std::min(g.wo, ox0 + (end - q));
        f(q - q0, oy, ox0, ox1);
        q += ox1 - ox0;
    }
}

// Output columns [lo, hi) of a row whose input column ox * stride - pad + kj is in bounds.
inline void valid_columns(const ConvGeom& g, int kj, int ox0, int ox1, int& lo, int& hi) {
    const int off = kj - g.pad;
    lo = off >= 0 ? 0 : (-off + g.stride - 1) / g.stride;
    hi = g.w - 1 - off < 0 ? 0 : (g.w - 1 - off) / g.stride + 1;
    lo = std::clamp(lo, ox0, ox1);
    hi = std::clamp(hi, lo, ox1);
}

void im2col(const float* x, const ConvGeom& g, int q0, int len, float* col) {
    for (int ci = 0; ci < g.c; ++ci) {
        const float* xc = x + static_cast<std::ptrdiff_t>(ci) * g.h * g.w;
        for (int ki = 0; ki < g.kh; ++ki) {
            for (int kj = 0; kj < g.kw; ++kj) {
                float* dst = col + (static_cast<std::ptrdiff_t>(ci * g.kh + ki) * g.kw + kj) * len;
                for_each_row_segment(g, q0, len, [&](int d, int oy, int ox0, int ox1) {
                    float* out = dst + d - ox0;
                    const int iy = oy * g.stride - g.pad + ki;
                    if (iy < 0 || iy >= g.h) {
                        std::fill(out + ox0, out + ox1, 0.0f);
                        return;
                    }
                    int lo, hi;
                    valid_columns(g, kj, ox0, ox1, lo, hi);
                    std::fill(out + ox0, out + lo, 0.0f);
                    const float* src = xc + static_cast<std::ptrdiff_t>(iy) * g.w + kj - g.pad;
                    if (g.stride == 1) {
                        std::copy(src + lo, src + hi, out + lo);
                    } else {
                        for (int ox = lo; ox < hi; ++ox) out[ox] = src[ox * g.stride];
                    }
                    std::fill(out + hi, out + ox1, 0.0f);
                });
            }
        }
    }
}

void col2im_add(const float* col, const ConvGeom& g, int q0, int len, float* dx) {
    for (int ci = 0; ci < g.c; ++ci) {
        float* dxc = dx + static_cast<std::ptrdiff_t>(ci) * g.h * g.w;
        for (int ki = 0; ki < g.kh; ++ki) {
            for (int kj = 0; kj < g.kw; ++kj) {
                const float* src = col + (static_cast<std::ptrdiff_t>(ci * g.kh + ki) * g.kw + kj) * len;
                for_each_row_segment(g, q0, len, [&](int d, int oy, int ox0, int ox1) {
                    const int iy = oy * g.stride - g.pad + ki;
                    if (iy < 0 || iy >= g.h) return;
                    int lo, hi;
                    valid_columns(g, kj, ox0, ox1, lo, hi);
                    const float* in = src + d - ox0;
                    float* out = dxc + static_cast<std::ptrdiff_t>(iy) * g.w + kj - g.pad;
                    for (int ox = lo; ox < hi; ++ox) out[ox * g.stride] += in[ox];
                });
            }
        }
    }
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding) {
    require_rank(x, 4, "conv2d");
    require_rank(weight, 4, "conv2d");
    const Tensor& X = x.value();
    const Tensor& W = weight.value();
    const int n = X.dim(0);
    const int o = W.dim(0);
    require(W.dim(1) == X.dim(1), "conv2d", "input has " + std::to_string(X.dim(1)) + " channels, weight expects " +
                                                std::to_string(W.dim(1)));
    require(stride >= 1 && padding >= 0, "conv2d", "invalid stride/padding");
    ConvGeom g{X.dim(1), X.dim(2), X.dim(3), W.dim(2), W.dim(3), stride, padding, 0, 0};
    g.ho = (g.h + 2 * padding - g.kh) / stride + 1;
    g.wo = (g.w + 2 * padding - g.kw) / stride + 1;
    require(g.ho > 0 && g.wo > 0, "conv2d", "kernel larger than padded input");
    const bool has_bias = static_cast<bool>(bias);
    if (has_bias) require(bias.value().size() == static_cast<std::size_t>(o), "conv2d", "bias size mismatch");

    const bool pointwise = g.kh == 1 && g.kw == 1 && stride == 1 && padding == 0;
    const int K = g.rows();
    const int P = g.pixels();
    const std::size_t in_stride = static_cast<std::size_t>(g.c) * g.h * g.w;
    const std::size_t out_stride = static_cast<std::size_t>(o) * P;

    Tensor Y({n, o, g.ho, g.wo});
    std::vector<float> col;
    const int chunk = im2col_chunk(K, P);
    if (!pointwise) col.resize(static_cast<std::size_t>(K) * chunk);
    for (int b = 0; b < n; ++b) {
        const float* xb = X.data() + b * in_stride;
        float* yb = Y.data() + b * out_stride;
        if (pointwise) {
            simd::sgemm(Trans::no, Trans::no, o, P, K, 1.0f, W.data(), K, xb, P, 0.0f, yb, P);
        } else {
            for (int q0 = 0; q0 < P; q0 += chunk) {
                const int len = std::min(chunk, P - q0);
                im2col(xb, g, q0, len, col.data());
                simd::sgemm(Trans::no, Trans::no, o, len, K, 1.0f, W.data(), K, col.data(), len, 0.0f, yb + q0, P);
            }
        }
        if (has_bias) {
            const float* bv = bias.value().data();
            for (int oc = 0; oc < o; ++oc) {
                float* row = yb + static_cast<std::ptrdiff_t>(oc) * P;
                for (int q = 0; q < P; ++q) row[q] += bv[oc];
            }
        }
    }

    return make_result(std::move(Y), {x, weight, bias}, [g, n, o, K, P, pointwise, in_stride, out_stride,
                                                         has_bias](Node& self) {
        const Tensor& dY = self.grad;
        const Tensor& Xv = self.parents[0]->value;
        const Tensor& Wv = self.parents[1]->value;
        const bool gx = wants_grad(self, 0);
        const bool gw = wants_grad(self, 1);
        const bool gb = has_bias && wants_grad(self, 2);
        float* dX = gx ? self.parents[0]->grad_buffer().data() : nullptr;
        float* dW = gw ? self.parents[1]->grad_buffer().data() : nullptr;
        float* dB = gb ? self.parents[2]->grad_buffer().data() : nullptr;
        const int chunk = im2col_chunk(K, P);
        std::vector<float> col, dcol;
        if (!pointwise) {
            col.resize(static_cast<std::size_t>(K) * chunk);
            dcol.resize(static_cast<std::size_t>(K) * chunk);
        }
        for (int b = 0; b < n; ++b) {
            const float* xb = Xv.data() + b * in_stride;
            const float* dyb = dY.data() + b * out_stride;
            if (dB) {
                for (int oc = 0; oc < o; ++oc) {
                    const float* row = dyb + static_cast<std::ptrdiff_t>(oc) * P;
                    double s = 0.0;
                    for (int q = 0; q < P; ++q) s += row[q];
                    dB[oc] += static_cast<float>(s);
                }
            }
            if (pointwise) {
                if (dW) simd::sgemm(Trans::no, Trans::yes, o, K, P, 1.0f, dyb, P, xb, P, 1.0f, dW, K);
                if (dX) simd::sgemm(Trans::yes, Trans::no, K, P, o, 1.0f, Wv.data(), K, dyb, P, 1.0f,
                                    dX + b * in_stride, P);
                continue;
            }
            for (int q0 = 0; q0 < P; q0 += chunk) {
                const int len = std::min(chunk, P - q0);
                if (dW) {
                    im2col(xb, g, q0, len, col.data());
                    simd::sgemm(Trans::no, Trans::yes, o, K, len, 1.0f, dyb + q0, P, col.data(), len, 1.0f, dW, K);
                }
                if (dX) {
                    simd::sgemm(Trans::yes, Trans::no, K, len, o, 1.0f, Wv.data(), K, dyb + q0, P, 0.0f,
                                dcol.data(), len);
                    col2im_add(dcol.data(), g, q0, len, dX + b * in_stride);
                }
            }
        }
    });
}

Var pointwise_conv(const Var& x, const Var& weight, const Var& bias) {
    const Tensor& X = x.value();
    const Tensor& W = weight.value();
    require(X.rank() >= 3 && W.rank() >= 2, "pointwise_conv", "expected [N, C, ...] input and [O, C, 1...] weight");
    for (int d = 2; d < W.rank(); ++d) require(W.dim(d) == 1, "pointwise_conv", "kernel must be 1x1");
    const int n = X.dim(0), c = X.dim(1), o = W.dim(0);
    require(W.dim(1) == c, "pointwise_conv", "channel mismatch " + to_string(x.shape()) + " vs " + to_string(weight.shape()));
    const int P = static_cast<int>(X.size() / (static_cast<std::size_t>(n) * c));
    const bool has_bias = static_cast<bool>(bias);
    Shape shape = X.shape();
    shape[1] = o;
    Tensor Y(shape);
    for (int b = 0; b < n; ++b) {
        float* yb = Y.data() + static_cast<std::size_t>(b) * o * P;
        simd::sgemm(Trans::no, Trans::no, o, P, c, 1.0f, W.data(), c, X.data() + static_cast<std::size_t>(b) * c * P, P,
                    0.0f, yb, P);
        if (has_bias)
            for (int oc = 0; oc < o; ++oc)
                for (int q = 0; q < P; ++q) yb[static_cast<std::size_t>(oc) * P + q] += bias.value()[oc];
    }
    return make_result(std::move(Y), {x, weight, bias}, [n, c, o, P, has_bias](Node& self) {
        const float* X0 = self.parents[0]->value.data();
        const float* W0 = self.parents[1]->value.data();
        float* dX = wants_grad(self, 0) ? self.parents[0]->grad_buffer().data() : nullptr;
        float* dW = wants_grad(self, 1) ? self.parents[1]->grad_buffer().data() : nullptr;
        float* dB = has_bias && wants_grad(self, 2) ? self.parents[2]->grad_buffer().data() : nullptr;
        for (int b = 0; b < n; ++b) {
            const float* dy = self.grad.data() + static_cast<std::size_t>(b) * o * P;
            if (dW) simd::sgemm(Trans::no, Trans::yes, o, c, P, 1.0f, dy, P, X0 + static_cast<std::size_t>(b) * c * P, P, 1.0f, dW, c);
            if (dX) simd::sgemm(Trans::yes, Trans::no, c, P, o, 1.0f, W0, c, dy, P, 1.0f, dX + static_cast<std::size_t>(b) * c * P, P);
            if (dB)
                for (int oc = 0; oc < o; ++oc) {
                    double s = 0.0;
                    for (int q = 0; q < P; ++q) s += dy[static_cast<std::size_t>(oc) * P + q];
                    dB[oc] += static_cast<float>(s);
                }
        }
    });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
    require_rank(x, 2, "linear");
    require_rank(weight, 2, "linear");
    const int n = x.value().dim(0);
    const int in = x.value().dim(1);
    const int out = weight.value().dim(0);
    require(weight.value().dim(1) == in, "linear", "input width " + std::to_string(in) + " vs weight " +
                                                       to_string(weight.shape()));
    const bool has_bias = static_cast<bool>(bias);
    Tensor Y({n, out});
    simd::sgemm(Trans::no, Trans::yes, n, out, in, 1.0f, x.value().data(), in, weight.value().data(), in, 0.0f,
                Y.data(), out);
    if (has_bias) {
        require(bias.value().size() == static_cast<std::size_t>(out), "linear", "bias size mismatch");
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < out; ++j) Y[static_cast<std::size_t>(i) * out + j] += bias.value()[j];
    }
    return make_result(std::move(Y), {x, weight, bias}, [n, in, out, has_bias](Node& self) {
        const float* dy = self.grad.data();
        if (wants_grad(self, 0))
            simd::sgemm(Trans::no, Trans::no, n, in, out, 1.0f, dy, out, self.parents[1]->value.data(), in, 1.0f,
                        self.parents[0]->grad_buffer().data(), in);
        if (wants_grad(self, 1))
            simd::sgemm(Trans::yes, Trans::no, out, in, n, 1.0f, dy, out, self.parents[0]->value.data(), in, 1.0f,
                        self.parents[1]->grad_buffer().data(), in);
        if (has_bias && wants_grad(self, 2)) {
            float* db = self.parents[2]->grad_buffer().data();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < out; ++j) db[j] += dy[static_cast<std::size_t>(i) * out + j];
        }
    });
}

Var group_norm(const Var& x, int groups, const Var& gamma, const Var& beta, float eps) {
    const Tensor& X = x.value();
    require(X.rank() >= 2, "group_norm", "expected [N, C, ...]");
    const int n = X.dim(0);
    const int c = X.dim(1);
    require(groups > 0 && c % groups == 0, "group_norm",
            std::to_string(c) + " channels not divisible into " + std::to_string(groups) + " groups");
    require(gamma.value().size() == static_cast<std::size_t>(c) && beta.value().size() == static_cast<std::size_t>(c),
            "group_norm", "affine parameter size mismatch");
    const std::size_t spatial = X.size() / (static_cast<std::size_t>(n) * c);
    const int cpg = c / groups;
    const std::size_t group_len = static_cast<std::size_t>(cpg) * spatial;

    Tensor Y(X.shape());
    std::vector<float> mean(static_cast<std::size_t>(n) * groups), rstd(mean.size());
    for (int b = 0; b < n; ++b) {
        for (int gi = 0; gi < groups; ++gi) {
            const std::size_t base = (static_cast<std::size_t>(b) * c + static_cast<std::size_t>(gi) * cpg) * spatial;
            double s = 0.0, ss = 0.0;
            simd::moments(X.data() + base, group_len, &s, &ss);
            const double mu = s / static_cast<double>(group_len);
            const double var = std::max(ss / static_cast<double>(group_len) - mu * mu, 0.0);
            const double r = 1.0 / std::sqrt(var + eps);
            mean[b * groups + gi] = static_cast<float>(mu);
            rstd[b * groups + gi] = static_cast<float>(r);
            for (int ci = 0; ci < cpg; ++ci) {
                const int ch = gi * cpg + ci;
                const float ga = gamma.value()[ch] * static_cast<float>(r);
                const float be = beta.value()[ch] - static_cast<float>(mu) * ga;
                const std::size_t off = base + static_cast<std::size_t>(ci) * spatial;
                for (std::size_t j = 0; j < spatial; ++j) Y[off + j] = X[off + j] * ga + be;
            }
        }
    }
    return make_result(std::move(Y), {x, gamma, beta},
                       [n, c, groups, cpg, spatial, group_len, mean = std::move(mean),
                        rstd = std::move(rstd)](Node& self) {
        const Tensor& Xv = self.parents[0]->value;
        const Tensor& G = self.parents[1]->value;
        const float* dy = self.grad.data();
        float* dx = wants_grad(self, 0) ? self.parents[0]->grad_buffer().data() : nullptr;
        float* dg = wants_grad(self, 1) ? self.parents[1]->grad_buffer().data() : nullptr;
        float* db = wants_grad(self, 2) ? self.parents[2]->grad_buffer().data() : nullptr;
        for (int b = 0; b < n; ++b) {
            for (int gi = 0; gi < groups; ++gi) {
                const float mu = mean[b * groups + gi];
                const float r = rstd[b * groups + gi];
                const std::size_t base = (static_cast<std::size_t>(b) * c + static_cast<std::size_t>(gi) * cpg) * spatial;
                double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                for (int ci = 0; ci < cpg; ++ci) {
                    const int ch = gi * cpg + ci;
                    const std::size_t off = base + static_cast<std::size_t>(ci) * spatial;
                    double sdy = 0.0, sdyx = 0.0;
                    for (std::size_t j = 0; j < spatial; ++j) {
                        const double xhat = (Xv[off + j] - mu) * r;
                        sdy += dy[off + j];
                        sdyx += dy[off + j] * xhat;
                    }
                    if (dg) dg[ch] += static_cast<float>(sdyx);
                    if (db) db[ch] += static_cast<float>(sdy);
                    sum_dxhat += sdy * G[ch];
                    sum_dxhat_xhat += sdyx * G[ch];
                }
                if (!dx) continue;
                const double m1 = sum_dxhat / static_cast<double>(group_len);
                const double m2 = sum_dxhat_xhat / static_cast<double>(group_len);
                for (int ci = 0; ci < cpg; ++ci) {
                    const int ch = gi * cpg + ci;
                    const std::size_t off = base + static_cast<std::size_t>(ci) * spatial;
                    for (std::size_t j = 0; j < spatial; ++j) {
                        const double xhat = (Xv[off + j] - mu) * r;
                        dx[off + j] += static_cast<float>(r * (dy[off + j] * G[ch] - m1 - xhat * m2));
                    }
                }
            }
        }
    });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean, Tensor& running_var,
               bool training, float momentum, float eps) {
    const Tensor& X = x.value();
    require(X.rank() >= 2, "batch_norm", "expected [N, C, ...]");
    const int n = X.dim(0);
    const int c = X.dim(1);
    const std::size_t spatial = X.size() / (static_cast<std::size_t>(n) * c);
    const std::size_t count = spatial * static_cast<std::size_t>(n);
    require(running_mean.size() == static_cast<std::size_t>(c) && running_var.size() == static_cast<std::size_t>(c),
            "batch_norm", "running statistics size mismatch");
    require(!training || count > 1, "batch_norm", "training needs more than one value per channel");

    std::vector<float> mean(c), rstd(c);
    for (int ch = 0; ch < c; ++ch) {
        if (training) {
            double s = 0.0, ss = 0.0;
            for (int b = 0; b < n; ++b) {
                double bs = 0.0, bss = 0.0;
                simd::moments(X.data() + (static_cast<std::size_t>(b) * c + ch) * spatial, spatial, &bs, &bss);
                s += bs;
                ss += bss;
            }
            const double mu = s / static_cast<double>(count);
            const double var = std::max(ss / static_cast<double>(count) - mu * mu, 0.0);
            mean[ch] = static_cast<float>(mu);
            rstd[ch] = static_cast<float>(1.0 / std::sqrt(var + eps));
            const double unbiased = var * static_cast<double>(count) / static_cast<double>(count - 1);
            running_mean[ch] = static_cast<float>((1.0 - momentum) * running_mean[ch] + momentum * mu);
            running_var[ch] = static_cast<float>((1.0 - momentum) * running_var[ch] + momentum * unbiased);
        } else {
            mean[ch] = running_mean[ch];
            rstd[ch] = static_cast<float>(1.0 / std::sqrt(static_cast<double>(running_var[ch]) + eps));
        }
    }
    Tensor Y(X.shape());
    for (int b = 0; b < n; ++b) {
        for (int ch = 0; ch < c; ++ch) {
            const float ga = gamma.value()[ch] * rstd[ch];
            const float be = beta.value()[ch] - mean[ch] * ga;
            const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * spatial;
            for (std::size_t j = 0; j < spatial; ++j) Y[off + j] = X[off + j] * ga + be;
        }
    }
    return make_result(std::move(Y), {x, gamma, beta},
                       [n, c, spatial, count, training, mean = std::move(mean), rstd = std::move(rstd)](Node& self) {
        const Tensor& Xv = self.parents[0]->value;
        const Tensor& G = self.parents[1]->value;
        const float* dy = self.grad.data();
        float* dx = wants_grad(self, 0) ? self.parents[0]->grad_buffer().data() : nullptr;
        float* dg = wants_grad(self, 1) ? self.parents[1]->grad_buffer().data() : nullptr;
        float* db = wants_grad(self, 2) ? self.parents[2]->grad_buffer().data() : nullptr;
        for (int ch = 0; ch < c; ++ch) {
            double sdy = 0.0, sdyx = 0.0;
            for (int b = 0; b < n; ++b) {
                const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * spatial;
                for (std::size_t j = 0; j < spatial; ++j) {
                    const double xhat = (Xv[off + j] - mean[ch]) * rstd[ch];
                    sdy += dy[off + j];
                    sdyx += dy[off + j] * xhat;
                }
            }
            if (dg) dg[ch] += static_cast<float>(sdyx);
            if (db) db[ch] += static_cast<float>(sdy);
            if (!dx) continue;
            const double gr = static_cast<double>(G[ch]) * rstd[ch];
            const double m1 = training ? sdy / static_cast<double>(count) : 0.0;
            const double m2 = training ? sdyx / static_cast<double>(count) : 0.0;
            for (int b = 0; b < n; ++b) {
                const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * spatial;
                for (std::size_t j = 0; j < spatial; ++j) {
                    const double xhat = (Xv[off + j] - mean[ch]) * rstd[ch];
                    dx[off + j] += static_cast<float>(gr * (dy[off + j] - m1 - xhat * m2));
                }
            }
        }
    });
}

Var relu(const Var& x) {
    Tensor Y(x.shape());
    const Tensor& X = x.value();
    for (std::size_t i = 0; i < X.size(); ++i) Y[i] = X[i] > 0.0f ? X[i] : 0.0f;
    return make_result(std::move(Y), {x}, [](Node& self) {
        const Tensor& Xv = self.parents[0]->value;
        float* dx = self.parents[0]->grad_buffer().data();
        for (std::size_t i = 0; i < Xv.size(); ++i)
            if (Xv[i] > 0.0f) dx[i] += self.grad[i];
    });
}

Var silu(const Var& x) {
    Tensor Y(x.shape());
    const Tensor& X = x.value();
    for (std::size_t i = 0; i < X.size(); ++i) Y[i] = X[i] / (1.0f + std::exp(-X[i]));
    return make_result(std::move(Y), {x}, [](Node& self) {
        const Tensor& Xv = self.parents[0]->value;
        float* dx = self.parents[0]->grad_buffer().data();
        for (std::size_t i = 0; i < Xv.size(); ++i) {
            const float s = 1.0f / (1.0f + std::exp(-Xv[i]));
            dx[i] += self.grad[i] * s * (1.0f + Xv[i] * (1.0f - s));
        }
    });
}

Var add(const Var& a, const Var& b) {
    require(a.shape() == b.shape(), "add", to_string(a.shape()) + " vs " + to_string(b.shape()));
    Tensor Y = a.value();
    simd::axpy(1.0f, b.value().data(), Y.data(), Y.size());
    return make_result(std::move(Y), {a, b}, [](Node& self) {
        for (std::size_t k = 0; k < 2; ++k)
            if (wants_grad(self, k))
                simd::axpy(1.0f, self.grad.data(), self.parents[k]->grad_buffer().data(), self.grad.size());
    });
}

Var add_channelwise(const Var& x, const Var& b) {
    const Tensor& X = x.value();
    require(X.rank() >= 2 && b.value().rank() == 2 && b.value().dim(0) == X.dim(0) && b.value().dim(1) == X.dim(1),
            "add_channelwise", to_string(x.shape()) + " vs " + to_string(b.shape()));
    const std::size_t nc = static_cast<std::size_t>(X.dim(0)) * X.dim(1);
    const std::size_t spatial = X.size() / nc;
    Tensor Y = X;
    for (std::size_t i = 0; i < nc; ++i)
        for (std::size_t j = 0; j < spatial; ++j) Y[i * spatial + j] += b.value()[i];
    return make_result(std::move(Y), {x, b}, [nc, spatial](Node& self) {
        if (wants_grad(self, 0)) simd::axpy(1.0f, self.grad.data(), self.parents[0]->grad_buffer().data(), self.grad.size());
        if (wants_grad(self, 1)) {
            float* db = self.parents[1]->grad_buffer().data();
            for (std::size_t i = 0; i < nc; ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < spatial; ++j) s += self.grad[i * spatial + j];
                db[i] += static_cast<float>(s);
            }
        }
    });
}

Var scale_shift(const Var& x, const Var& scale, const Var& shift) {
    const Tensor& X = x.value();
    require(X.rank() >= 2 && scale.shape() == Shape({X.dim(0), X.dim(1)}) && shift.shape() == scale.shape(),
            "scale_shift", "expected [N, C] modulation for " + to_string(x.shape()));
    const std::size_t nc = static_cast<std::size_t>(X.dim(0)) * X.dim(1);
    const std::size_t spatial = X.size() / nc;
    Tensor Y(X.shape());
    for (std::size_t i = 0; i < nc; ++i) {
        const float s = 1.0f + scale.value()[i];
        const float t = shift.value()[i];
        for (std::size_t j = 0; j < spatial; ++j) Y[i * spatial + j] = X[i * spatial + j] * s + t;
    }
    return make_result(std::move(Y), {x, scale, shift}, [nc, spatial](Node& self) {
        const Tensor& Xv = self.parents[0]->value;
        const Tensor& S = self.parents[1]->value;
        float* dx = wants_grad(self, 0) ? self.parents[0]->grad_buffer().data() : nullptr;
        float* ds = wants_grad(self, 1) ? self.parents[1]->grad_buffer().data() : nullptr;
        float* dt = wants_grad(self, 2) ? self.parents[2]->grad_buffer().data() : nullptr;
        for (std::size_t i = 0; i < nc; ++i) {
            double sx = 0.0, sg = 0.0;
            const float s = 1.0f + S[i];
            for (std::size_t j = 0; j < spatial; ++j) {
                const float g = self.grad[i * spatial + j];
                if (dx) dx[i * spatial + j] += g * s;
                sx += static_cast<double>(g) * Xv[i * spatial + j];
                sg += g;
            }
            if (ds) ds[i] += static_cast<float>(sx);
            if (dt) dt[i] += static_cast<float>(sg);
        }
    });
}

Var slice_channels(const Var& x, int start, int count) {
    const Tensor& X = x.value();
    require(X.rank() >= 2, "slice_channels", "expected [N, C, ...]");
    const int n = X.dim(0);
    const int c = X.dim(1);
    require(start >= 0 && count > 0 && start + count <= c, "slice_channels", "range out of bounds");
    const std::size_t spatial = X.size() / (static_cast<std::size_t>(n) * c);
    Shape shape = X.shape();
    shape[1] = count;
    Tensor Y(shape);
    for (int b = 0; b < n; ++b)
        std::copy_n(X.data() + (static_cast<std::size_t>(b) * c + start) * spatial, count * spatial,
                    Y.data() + static_cast<std::size_t>(b) * count * spatial);
    return make_result(std::move(Y), {x}, [n, c, start, count, spatial](Node& self) {
        float* dx = self.parents[0]->grad_buffer().data();
        for (int b = 0; b < n; ++b)
            simd::axpy(1.0f, self.grad.data() + static_cast<std::size_t>(b) * count * spatial,
                       dx + (static_cast<std::size_t>(b) * c + start) * spatial, count * spatial);
    });
}

Var concat_channels(const Var& a, const Var& b) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    require(A.rank() == B.rank() && A.rank() >= 2 && A.dim(0) == B.dim(0), "concat_channels",
            to_string(a.shape()) + " vs " + to_string(b.shape()));
    for (int d = 2; d < A.rank(); ++d) require(A.dim(d) == B.dim(d), "concat_channels", "spatial mismatch");
    const int n = A.dim(0), ca = A.dim(1), cb = B.dim(1);
    const std::size_t spatial = A.size() / (static_cast<std::size_t>(n) * ca);
    Shape shape = A.shape();
    shape[1] = ca + cb;
    Tensor Y(shape);
    for (int i = 0; i < n; ++i) {
        float* dst = Y.data() + static_cast<std::size_t>(i) * (ca + cb) * spatial;
        std::copy_n(A.data() + static_cast<std::size_t>(i) * ca * spatial, ca * spatial, dst);
        std::copy_n(B.data() + static_cast<std::size_t>(i) * cb * spatial, cb * spatial, dst + ca * spatial);
    }
    return make_result(std::move(Y), {a, b}, [n, ca, cb, spatial](Node& self) {
        for (int i = 0; i < n; ++i) {
            const float* src = self.grad.data() + static_cast<std::size_t>(i) * (ca + cb) * spatial;
            if (wants_grad(self, 0))
                simd::axpy(1.0f, src, self.parents[0]->grad_buffer().data() + static_cast<std::size_t>(i) * ca * spatial,
                           ca * spatial);
            if (wants_grad(self, 1))
                simd::axpy(1.0f, src + ca * spatial,
                           self.parents[1]->grad_buffer().data() + static_cast<std::size_t>(i) * cb * spatial,
                           cb * spatial);
        }
    });
}

Var avg_pool2x2(const Var& x) {
    require_rank(x, 4, "avg_pool2x2");
    const Tensor& X = x.value();
    const int n = X.dim(0), c = X.dim(1), h = X.dim(2), w = X.dim(3);
    const int ho = h / 2, wo = w / 2;
    require(ho > 0 && wo > 0, "avg_pool2x2", "input too small");
    Tensor Y({n, c, ho, wo});
    const std::size_t planes = static_cast<std::size_t>(n) * c;
    for (std::size_t p = 0; p < planes; ++p) {
        const float* xp = X.data() + p * h * w;
        float* yp = Y.data() + p * ho * wo;
        for (int i = 0; i < ho; ++i)
            for (int j = 0; j < wo; ++j)
                yp[i * wo + j] = 0.25f * (xp[2 * i * w + 2 * j] + xp[2 * i * w + 2 * j + 1] +
                                          xp[(2 * i + 1) * w + 2 * j] + xp[(2 * i + 1) * w + 2 * j + 1]);
    }
    return make_result(std::move(Y), {x}, [planes, h, w, ho, wo](Node& self) {
        float* dx = self.parents[0]->grad_buffer().data();
        for (std::size_t p = 0; p < planes; ++p) {
            const float* g = self.grad.data() + p * ho * wo;
            float* d = dx + p * h * w;
            for (int i = 0; i < ho; ++i)
                for (int j = 0; j < wo; ++j) {
                    const float v = 0.25f * g[i * wo + j];
                    d[2 * i * w + 2 * j] += v;
                    d[2 * i * w + 2 * j + 1] += v;
                    d[(2 * i + 1) * w + 2 * j] += v;
                    d[(2 * i + 1) * w + 2 * j + 1] += v;
                }
        }
    });
}

Var upsample_nearest2x(const Var& x) {
    require_rank(x, 4, "upsample_nearest2x");
    const Tensor& X = x.value();
    const int n = X.dim(0), c = X.dim(1), h = X.dim(2), w = X.dim(3);
    const int ho = 2 * h, wo = 2 * w;
    Tensor Y({n, c, ho, wo});
    const std::size_t planes = static_cast<std::size_t>(n) * c;
    for (std::size_t p = 0; p < planes; ++p) {
        const float* xp = X.data() + p * h * w;
        float* yp = Y.data() + p * ho * wo;
        for (int i = 0; i < ho; ++i)
            for (int j = 0; j < wo; ++j) yp[i * wo + j] = xp[(i / 2) * w + j / 2];
    }
    return make_result(std::move(Y), {x}, [planes, h, w, ho, wo](Node& self) {
        float* dx = self.parents[0]->grad_buffer().data();
        for (std::size_t p = 0; p < planes; ++p) {
            const float* g = self.grad.data() + p * ho * wo;
            float* d = dx + p * h * w;
            for (int i = 0; i < ho; ++i)
                for (int j = 0; j < wo; ++j) d[(i / 2) * w + j / 2] += g[i * wo + j];
        }
    });
}

Var max_pool2d(const Var& x, int kernel, int stride, int padding) {
    require_rank(x, 4, "max_pool2d");
    const Tensor& X = x.value();
    const int n = X.dim(0), c = X.dim(1), h = X.dim(2), w = X.dim(3);
    const int ho = (h + 2 * padding - kernel) / stride + 1;
    const int wo = (w + 2 * padding - kernel) / stride + 1;
    require(ho > 0 && wo > 0, "max_pool2d", "input too small");
    Tensor Y({n, c, ho, wo});
    std::vector<int> argmax(Y.size());
    const std::size_t planes = static_cast<std::size_t>(n) * c;
    for (std::size_t p = 0; p < planes; ++p) {
        const float* xp = X.data() + p * h * w;
        for (int i = 0; i < ho; ++i)
            for (int j = 0; j < wo; ++j) {
                float best = -std::numeric_limits<float>::infinity();
                int best_idx = -1;
                for (int ki = 0; ki < kernel; ++ki)
                    for (int kj = 0; kj < kernel; ++kj) {
                        const int iy = i * stride - padding + ki, ix = j * stride - padding + kj;
                        if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                        const float v = xp[iy * w + ix];
                        if (v > best || best_idx < 0) {
                            best = v;
                            best_idx = iy * w + ix;
                        }
                    }
                const std::size_t o = p * ho * wo + static_cast<std::size_t>(i) * wo + j;
                Y[o] = best;
                argmax[o] = best_idx;
            }
    }
    return make_result(std::move(Y), {x}, [planes, h, w, ho, wo, argmax = std::move(argmax)](Node& self) {
        float* dx = self.parents[0]->grad_buffer().data();
        for (std::size_t p = 0; p < planes; ++p)
            for (int q = 0; q < ho * wo; ++q) {
                const std::size_t o = p * ho * wo + q;
                dx[p * h * w + argmax[o]] += self.grad[o];
            }
    });
}

Var global_avg_pool(const Var& x) {
    require_rank(x, 4, "global_avg_pool");
    const Tensor& X = x.value();
    const int n = X.dim(0), c = X.dim(1);
    const std::size_t spatial = static_cast<std::size_t>(X.dim(2)) * X.dim(3);
    Tensor Y({n, c});
    for (std::size_t p = 0; p < static_cast<std::size_t>(n) * c; ++p) {
        double s = 0.0;
        for (std::size_t j = 0; j < spatial; ++j) s += X[p * spatial + j];
        Y[p] = static_cast<float>(s / static_cast<double>(spatial));
    }
    return make_result(std::move(Y), {x}, [spatial](Node& self) {
        float* dx = self.parents[0]->grad_buffer().data();
        const float inv = 1.0f / static_cast<float>(spatial);
        for (std::size_t p = 0; p < self.grad.size(); ++p)
            for (std::size_t j = 0; j < spatial; ++j) dx[p * spatial + j] += self.grad[p] * inv;
    });
}

Var reshape(const Var& x, Shape shape) {
    Tensor Y = x.value();
    Y.reshape(std::move(shape));
    return make_result(std::move(Y), {x}, [](Node& self) {
        simd::axpy(1.0f, self.grad.data(), self.parents[0]->grad_buffer().data(), self.grad.size());
    });
}

Var qkv_attention(const Var& qkv, int heads) {
    require_rank(qkv, 3, "qkv_attention");
    const Tensor& Q = qkv.value();
    const int n = Q.dim(0), width = Q.dim(1), len = Q.dim(2);
    require(heads > 0 && width % (3 * heads) == 0, "qkv_attention", "width not divisible by 3 * heads");
    const int ch = width / (3 * heads);
    const float scale2 = 1.0f / std::sqrt(static_cast<float>(ch));
    const bool keep = grad_enabled() && qkv.requires_grad();
    const std::size_t wsize = static_cast<std::size_t>(len) * len;
    std::vector<float> probs(keep ? static_cast<std::size_t>(n) * heads * wsize : wsize);
    Tensor Y({n, heads * ch, len});
    for (int b = 0; b < n; ++b) {
        for (int hd = 0; hd < heads; ++hd) {
            const std::size_t bh = static_cast<std::size_t>(b) * heads + hd;
            const float* q = Q.data() + bh * 3 * ch * len;
            const float* k = q + static_cast<std::size_t>(ch) * len;
            const float* v = k + static_cast<std::size_t>(ch) * len;
            float* wt = probs.data() + (keep ? bh * wsize : 0);
            // weight[t, s] = sum_c q[c, t] k[c, s] / sqrt(ch)
            simd::sgemm(Trans::yes, Trans::no, len, len, ch, scale2, q, len, k, len, 0.0f, wt, len);
            for (int t = 0; t < len; ++t) {
                float* row = wt + static_cast<std::size_t>(t) * len;
                const float mx = *std::max_element(row, row + len);
                double s = 0.0;
                for (int j = 0; j < len; ++j) {
                    row[j] = std::exp(row[j] - mx);
                    s += row[j];
                }
                const float inv = static_cast<float>(1.0 / s);
                for (int j = 0; j < len; ++j) row[j] *= inv;
            }
            float* out = Y.data() + bh * ch * len;
            simd::sgemm(Trans::no, Trans::yes, ch, len, len, 1.0f, v, len, wt, len, 0.0f, out, len);
        }
    }
    return make_result(std::move(Y), {qkv}, [n, heads, ch, len, scale2, wsize, probs = std::move(probs)](Node& self) {
        const Tensor& Qv = self.parents[0]->value;
        float* dqkv = self.parents[0]->grad_buffer().data();
        std::vector<float> dw(wsize);
        for (int b = 0; b < n; ++b) {
            for (int hd = 0; hd < heads; ++hd) {
                const std::size_t bh = static_cast<std::size_t>(b) * heads + hd;
                const std::size_t off = bh * 3 * ch * len;
                const float* q = Qv.data() + off;
                const float* k = q + static_cast<std::size_t>(ch) * len;
                const float* v = k + static_cast<std::size_t>(ch) * len;
                float* dq = dqkv + off;
                float* dk = dq + static_cast<std::size_t>(ch) * len;
                float* dv = dk + static_cast<std::size_t>(ch) * len;
                const float* wt = probs.data() + bh * wsize;
                const float* da = self.grad.data() + bh * ch * len;
                simd::sgemm(Trans::no, Trans::no, ch, len, len, 1.0f, da, len, wt, len, 1.0f, dv, len);
                simd::sgemm(Trans::yes, Trans::no, len, len, ch, 1.0f, da, len, v, len, 0.0f, dw.data(), len);
                for (int t = 0; t < len; ++t) {
                    const float* prow = wt + static_cast<std::size_t>(t) * len;
                    float* grow = dw.data() + static_cast<std::size_t>(t) * len;
                    double dotp = 0.0;
                    for (int j = 0; j < len; ++j) dotp += static_cast<double>(prow[j]) * grow[j];
                    for (int j = 0; j < len; ++j) grow[j] = prow[j] * (grow[j] - static_cast<float>(dotp));
                }
                simd::sgemm(Trans::no, Trans::yes, ch, len, len, scale2, k, len, dw.data(), len, 1.0f, dq, len);
                simd::sgemm(Trans::no, Trans::no, ch, len, len, scale2, q, len, dw.data(), len, 1.0f, dk, len);
            }
        }
    });
}

Var mse_loss(const Var& prediction, const Tensor& target) {
    require(prediction.shape() == target.shape(), "mse_loss",
            to_string(prediction.shape()) + " vs " + to_string(target.shape()));
    const Tensor& P = prediction.value();
    double s = 0.0;
    for (std::size_t i = 0; i < P.size(); ++i) {
        const double d = static_cast<double>(P[i]) - target[i];
        s += d * d;
    }
    const std::size_t count = P.size();
    Tensor L({1}, static_cast<float>(s / static_cast<double>(count)));
    return make_result(std::move(L), {prediction}, [target, count](Node& self) {
        const Tensor& Pv = self.parents[0]->value;
        float* dp = self.parents[0]->grad_buffer().data();
        const float k = 2.0f * self.grad[0] / static_cast<float>(count);
        for (std::size_t i = 0; i < Pv.size(); ++i) dp[i] += k * (Pv[i] - target[i]);
    });
}

Var softmax_cross_entropy(const Var& logits, std::span<const int> labels) {
    require_rank(logits, 2, "softmax_cross_entropy");
    const int n = logits.value().dim(0), k = logits.value().dim(1);
    require(static_cast<int>(labels.size()) == n, "softmax_cross_entropy", "label count mismatch");
    std::vector<float> probs(static_cast<std::size_t>(n) * k);
    std::vector<int> lab(labels.begin(), labels.end());
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        require(lab[i] >= 0 && lab[i] < k, "softmax_cross_entropy", "label out of range");
        const float* z = logits.value().data() + static_cast<std::size_t>(i) * k;
        const float mx = *std::max_element(z, z + k);
        double s = 0.0;
        for (int j = 0; j < k; ++j) s += std::exp(static_cast<double>(z[j]) - mx);
        const double lse = mx + std::log(s);
        total += lse - z[lab[i]];
        for (int j = 0; j < k; ++j) probs[static_cast<std::size_t>(i) * k + j] = static_cast<float>(std::exp(z[j] - lse));
    }
    Tensor L({1}, static_cast<float>(total / n));
    return make_result(std::move(L), {logits}, [n, k, probs = std::move(probs), lab = std::move(lab)](Node& self) {
        float* dz = self.parents[0]->grad_buffer().data();
        const float g = self.grad[0] / static_cast<float>(n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < k; ++j) {
                const std::size_t idx = static_cast<std::size_t>(i) * k + j;
                dz[idx] += g * (probs[idx] - (j == lab[i] ? 1.0f : 0.0f));
            }
    });
}

Tensor timestep_embedding(std::span<const float> timesteps, int dim, float max_period) {
    const int n = static_cast<int>(timesteps.size());
    const int half = dim / 2;
    Tensor E({n, dim}, 0.0f);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < half; ++j) {
            const float freq = std::exp(-std::log(max_period) * static_cast<float>(j) / static_cast<float>(half));
            const float arg = timesteps[static_cast<std::size_t>(i)] * freq;
            E[static_cast<std::size_t>(i) * dim + j] = std::cos(arg);
            E[static_cast<std::size_t>(i) * dim + half + j] = std::sin(arg);
        }
    }
    return E;
}

}  // namespace tsg::nn
