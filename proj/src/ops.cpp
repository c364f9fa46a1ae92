#include "bagau/ops.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "blas.hpp"

namespace bagau::nn {

namespace {

void require(bool cond, const char* what) {
    if (!cond) {
        throw std::invalid_argument(what);
    }
}

// Unfolds rows [y0, y1) of one sample (C,H,W) into a (C*k*k, (y1-y0)*W)
// matrix for a same-padded stride-1 convolution.
template <typename T>
void im2col(const T* x, int c, int h, int w, int k, int y0, int y1, T* col) {
    const int pad = k / 2;
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    const std::size_t tile = static_cast<std::size_t>(y1 - y0) * w;
    for (int ci = 0; ci < c; ++ci) {
        const T* xp = x + ci * hw;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                T* row = col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * tile;
                const int dx = kx - pad;
                const int x0 = std::max(0, -dx);
                const int x1 = std::min(w, w - dx);
                for (int y = y0; y < y1; ++y) {
                    T* out = row + static_cast<std::size_t>(y - y0) * w;
                    const int sy = y + ky - pad;
                    if (sy < 0 || sy >= h || x0 >= x1) {
                        std::fill(out, out + w, T(0));
                        continue;
                    }
                    std::fill(out, out + x0, T(0));
                    std::memcpy(out + x0, xp + static_cast<std::size_t>(sy) * w + x0 + dx,
                                sizeof(T) * static_cast<std::size_t>(x1 - x0));
                    std::fill(out + x1, out + w, T(0));
                }
            }
        }
    }
}

// Rows per im2col tile; keeps the unfolded buffer cache resident.
int tile_rows(int kdim, int h, int w, std::size_t elem) {
    constexpr std::size_t budget = 192 * 1024;
    const std::size_t per_row = static_cast<std::size_t>(kdim) * w * elem;
    return std::clamp(static_cast<int>(budget / std::max<std::size_t>(per_row, 1)), 1, h);
}

struct Interp {
    int i0;
    int i1;
    double w0;
    double w1;
};

std::vector<Interp> bilinear_taps(int n_in) {
    const int n_out = 2 * n_in;
    std::vector<Interp> taps(n_out);
    for (int o = 0; o < n_out; ++o) {
        double src = (o + 0.5) / 2.0 - 0.5;
        if (src < 0) {
            src = 0;
        }
        int i0 = static_cast<int>(std::floor(src));
        i0 = std::min(i0, n_in - 1);
        const int i1 = std::min(i0 + 1, n_in - 1);
        const double l1 = src - i0;
        taps[o] = Interp{i0, i1, 1.0 - l1, l1};
    }
    return taps;
}

}  // namespace

template <typename T>
Var conv2d(Graph<T>& g, Var x, Var w, Var b) {
    const Shape4 xs = g.shape(x);
    const Shape4 ws = g.shape(w);
    require(ws.c == xs.c, "conv2d: weight input channels do not match input");
    require(ws.h == ws.w && ws.h % 2 == 1, "conv2d: kernel must be square and odd");
    if (b.valid()) {
        require(g.shape(b).numel() == static_cast<std::size_t>(ws.n), "conv2d: bias size");
    }
    const int k = ws.h;
    const int cout = ws.n;
    const int kdim = xs.c * k * k;
    const int hw = xs.h * xs.w;
    const bool pointwise = k == 1;

    const int rows = pointwise ? xs.h : tile_rows(kdim, xs.h, xs.w, sizeof(T));

    Tensor<T> out(Shape4{xs.n, cout, xs.h, xs.w});
    {
        const Tensor<T>& xv = g.value(x);
        const Tensor<T>& wv = g.value(w);
        std::vector<T> col(pointwise ? 0 : static_cast<std::size_t>(kdim) * rows * xs.w);
        for (int n = 0; n < xs.n; ++n) {
            T* dst = out.plane(n, 0);
            if (b.valid()) {
                const Tensor<T>& bv = g.value(b);
                for (int co = 0; co < cout; ++co) {
                    std::fill(dst + static_cast<std::size_t>(co) * hw,
                              dst + static_cast<std::size_t>(co + 1) * hw, bv[co]);
                }
            }
            const T beta = b.valid() ? T(1) : T(0);
            if (pointwise) {
                detail::gemm(false, false, cout, hw, kdim, T(1), wv.data(), kdim, xv.plane(n, 0),
                             hw, beta, dst, hw);
                continue;
            }
            for (int y0 = 0; y0 < xs.h; y0 += rows) {
                const int y1 = std::min(xs.h, y0 + rows);
                const int tile = (y1 - y0) * xs.w;
                im2col(xv.plane(n, 0), xs.c, xs.h, xs.w, k, y0, y1, col.data());
                detail::gemm(false, false, cout, tile, kdim, T(1), wv.data(), kdim, col.data(),
                             tile, beta, dst + static_cast<std::size_t>(y0) * xs.w, hw);
            }
        }
    }

    return g.record(std::move(out), {x, w, b}, [=](Graph<T>& gr, int self) {
        const Tensor<T>& dy = gr.grad(self);
        const Tensor<T>& xv = gr.value(x);
        const Tensor<T>& wv = gr.value(w);
        const bool need_x = gr.requires_grad(x);
        const bool need_w = gr.requires_grad(w);
        const int rows_w = pointwise ? xs.h : tile_rows(kdim, xs.h, xs.w, sizeof(T));
        std::vector<T> col(pointwise ? 0 : static_cast<std::size_t>(kdim) * rows_w * xs.w);
        // The input gradient of a same-padded convolution is a same-padded
        // convolution of dy with the spatially flipped, channel-transposed kernel.
        const int kdim_t = cout * k * k;
        const int rows_t = pointwise ? xs.h : tile_rows(kdim_t, xs.h, xs.w, sizeof(T));
        std::vector<T> col_t(pointwise || !need_x ? 0
                                                  : static_cast<std::size_t>(kdim_t) * rows_t * xs.w);
        std::vector<T> w_t;
        if (need_x && !pointwise) {
            w_t.resize(wv.numel());
            for (int co = 0; co < cout; ++co) {
                for (int ci = 0; ci < xs.c; ++ci) {
                    for (int ky = 0; ky < k; ++ky) {
                        for (int kx = 0; kx < k; ++kx) {
                            w_t[((static_cast<std::size_t>(ci) * cout + co) * k + (k - 1 - ky)) * k +
                                (k - 1 - kx)] = wv.at(co, ci, ky, kx);
                        }
                    }
                }
            }
        }
        for (int n = 0; n < xs.n; ++n) {
            const T* dyn = dy.plane(n, 0);
            if (pointwise) {
                if (need_w) {
                    detail::gemm(false, true, cout, kdim, hw, T(1), dyn, hw, xv.plane(n, 0), hw,
                                 T(1), gr.grad(w).data(), kdim);
                }
                if (need_x) {
                    detail::gemm(true, false, kdim, hw, cout, T(1), wv.data(), kdim, dyn, hw,
                                 T(1), gr.grad(x).plane(n, 0), hw);
                }
                continue;
            }
            if (need_w) {
                for (int y0 = 0; y0 < xs.h; y0 += rows_w) {
                    const int y1 = std::min(xs.h, y0 + rows_w);
                    const int tile = (y1 - y0) * xs.w;
                    im2col(xv.plane(n, 0), xs.c, xs.h, xs.w, k, y0, y1, col.data());
                    detail::gemm(false, true, cout, kdim, tile, T(1),
                                 dyn + static_cast<std::size_t>(y0) * xs.w, hw, col.data(), tile,
                                 T(1), gr.grad(w).data(), kdim);
                }
            }
            if (need_x) {
                T* dxn = gr.grad(x).plane(n, 0);
                for (int y0 = 0; y0 < xs.h; y0 += rows_t) {
                    const int y1 = std::min(xs.h, y0 + rows_t);
                    const int tile = (y1 - y0) * xs.w;
                    im2col(dyn, cout, xs.h, xs.w, k, y0, y1, col_t.data());
                    detail::gemm(false, false, xs.c, tile, kdim_t, T(1), w_t.data(), kdim_t,
                                 col_t.data(), tile, T(1),
                                 dxn + static_cast<std::size_t>(y0) * xs.w, hw);
                }
            }
        }
        if (b.valid() && gr.requires_grad(b)) {
            Tensor<T>& db = gr.grad(b);
            for (int n = 0; n < xs.n; ++n) {
                for (int co = 0; co < cout; ++co) {
                    const T* p = dy.plane(n, co);
                    T s = 0;
                    for (int i = 0; i < hw; ++i) {
                        s += p[i];
                    }
                    db[co] += s;
                }
            }
        }
    });
}

template <typename T>
Var batch_norm(Graph<T>& g, Var x, Var gamma, Var beta, const Tensor<T>& running_mean,
               const Tensor<T>& running_var, const BatchNormOptions& opt,
               std::pair<Tensor<T>*, Tensor<T>*> stats_update) {
    const Shape4 xs = g.shape(x);
    const int c = xs.c;
    const std::size_t hw = xs.plane();
    require(g.shape(gamma).numel() == static_cast<std::size_t>(c) &&
                g.shape(beta).numel() == static_cast<std::size_t>(c),
            "batch_norm: affine parameter size");
    require(running_mean.numel() == static_cast<std::size_t>(c) &&
                running_var.numel() == static_cast<std::size_t>(c),
            "batch_norm: running statistics size");
    const Tensor<T>& xv = g.value(x);
    const Tensor<T>& gv = g.value(gamma);
    const Tensor<T>& bv = g.value(beta);
    Tensor<T> out(xs);

    if (!opt.training) {
        std::vector<T> scale(c);
        std::vector<T> shift(c);
        for (int ci = 0; ci < c; ++ci) {
            const T inv = T(1) / std::sqrt(running_var[ci] + T(opt.eps));
            scale[ci] = gv[ci] * inv;
            shift[ci] = bv[ci] - running_mean[ci] * scale[ci];
        }
        for (int n = 0; n < xs.n; ++n) {
            for (int ci = 0; ci < c; ++ci) {
                const T* src = xv.plane(n, ci);
                T* dst = out.plane(n, ci);
                for (std::size_t i = 0; i < hw; ++i) {
                    dst[i] = src[i] * scale[ci] + shift[ci];
                }
            }
        }
        return g.record(std::move(out), {x, gamma, beta}, [=](Graph<T>& gr, int self) {
            const Tensor<T>& dy = gr.grad(self);
            const Tensor<T>& xin = gr.value(x);
            const Tensor<T>& gam = gr.value(gamma);
            for (int ci = 0; ci < c; ++ci) {
                const T inv = T(1) / std::sqrt(running_var[ci] + T(opt.eps));
                T sdy = 0;
                T sdyx = 0;
                for (int n = 0; n < xs.n; ++n) {
                    const T* d = dy.plane(n, ci);
                    const T* xp = xin.plane(n, ci);
                    for (std::size_t i = 0; i < hw; ++i) {
                        sdy += d[i];
                        sdyx += d[i] * (xp[i] - running_mean[ci]) * inv;
                    }
                    if (gr.requires_grad(x)) {
                        T* dx = gr.grad(x).plane(n, ci);
                        for (std::size_t i = 0; i < hw; ++i) {
                            dx[i] += d[i] * gam[ci] * inv;
                        }
                    }
                }
                if (gr.requires_grad(gamma)) {
                    gr.grad(gamma)[ci] += sdyx;
                }
                if (gr.requires_grad(beta)) {
                    gr.grad(beta)[ci] += sdy;
                }
            }
        });
    }

    const int group = opt.group > 0 ? std::min(opt.group, xs.n) : xs.n;
    const int n_groups = (xs.n + group - 1) / group;
    // Per (group, channel) mean and inverse standard deviation.
    std::vector<T> mean(static_cast<std::size_t>(n_groups) * c);
    std::vector<T> inv_std(static_cast<std::size_t>(n_groups) * c);
    for (int gi = 0; gi < n_groups; ++gi) {
        const int n0 = gi * group;
        const int n1 = std::min(xs.n, n0 + group);
        const double count = static_cast<double>(n1 - n0) * hw;
        for (int ci = 0; ci < c; ++ci) {
            double s = 0;
            for (int n = n0; n < n1; ++n) {
                const T* p = xv.plane(n, ci);
                for (std::size_t i = 0; i < hw; ++i) {
                    s += p[i];
                }
            }
            const double m = s / count;
            double ss = 0;
            for (int n = n0; n < n1; ++n) {
                const T* p = xv.plane(n, ci);
                for (std::size_t i = 0; i < hw; ++i) {
                    const double d = p[i] - m;
                    ss += d * d;
                }
            }
            const double var = ss / count;
            const double inv = 1.0 / std::sqrt(var + opt.eps);
            mean[gi * c + ci] = T(m);
            inv_std[gi * c + ci] = T(inv);
            for (int n = n0; n < n1; ++n) {
                const T* src = xv.plane(n, ci);
                T* dst = out.plane(n, ci);
                for (std::size_t i = 0; i < hw; ++i) {
                    dst[i] = (src[i] - T(m)) * T(inv) * gv[ci] + bv[ci];
                }
            }
            if (stats_update.first != nullptr && stats_update.second != nullptr) {
                const double unbiased = count > 1 ? ss / (count - 1) : var;
                T& rm = (*stats_update.first)[ci];
                T& rv = (*stats_update.second)[ci];
                rm = T((1 - opt.momentum) * rm + opt.momentum * m);
                rv = T((1 - opt.momentum) * rv + opt.momentum * unbiased);
            }
        }
    }

    return g.record(std::move(out), {x, gamma, beta}, [=](Graph<T>& gr, int self) {
        const Tensor<T>& dy = gr.grad(self);
        const Tensor<T>& xin = gr.value(x);
        const Tensor<T>& gam = gr.value(gamma);
        for (int gi = 0; gi < n_groups; ++gi) {
            const int n0 = gi * group;
            const int n1 = std::min(xs.n, n0 + group);
            const T count = T(static_cast<double>(n1 - n0) * hw);
            for (int ci = 0; ci < c; ++ci) {
                const T m = mean[gi * c + ci];
                const T inv = inv_std[gi * c + ci];
                T sdy = 0;
                T sdyx = 0;
                for (int n = n0; n < n1; ++n) {
                    const T* d = dy.plane(n, ci);
                    const T* xp = xin.plane(n, ci);
                    for (std::size_t i = 0; i < hw; ++i) {
                        sdy += d[i];
                        sdyx += d[i] * (xp[i] - m) * inv;
                    }
                }
                if (gr.requires_grad(gamma)) {
                    gr.grad(gamma)[ci] += sdyx;
                }
                if (gr.requires_grad(beta)) {
                    gr.grad(beta)[ci] += sdy;
                }
                if (gr.requires_grad(x)) {
                    const T k = gam[ci] * inv / count;
                    for (int n = n0; n < n1; ++n) {
                        const T* d = dy.plane(n, ci);
                        const T* xp = xin.plane(n, ci);
                        T* dx = gr.grad(x).plane(n, ci);
                        for (std::size_t i = 0; i < hw; ++i) {
                            const T xhat = (xp[i] - m) * inv;
                            dx[i] += k * (count * d[i] - sdy - xhat * sdyx);
                        }
                    }
                }
            }
        }
    });
}

template <typename T>
Var relu(Graph<T>& g, Var x) {
    const Tensor<T>& xv = g.value(x);
    Tensor<T> out(xv.shape());
    for (std::size_t i = 0; i < xv.numel(); ++i) {
        out[i] = xv[i] > T(0) ? xv[i] : T(0);
    }
    return g.record(std::move(out), {x}, [=](Graph<T>& gr, int self) {
        const Tensor<T>& dy = gr.grad(self);
        const Tensor<T>& y = gr.value(self);
        Tensor<T>& dx = gr.grad(x);
        for (std::size_t i = 0; i < dy.numel(); ++i) {
            if (y[i] > T(0)) {
                dx[i] += dy[i];
            }
        }
    });
}

template <typename T>
Var sigmoid(Graph<T>& g, Var x) {
    const Tensor<T>& xv = g.value(x);
    Tensor<T> out(xv.shape());
    for (std::size_t i = 0; i < xv.numel(); ++i) {
        out[i] = T(1) / (T(1) + std::exp(-xv[i]));
    }
    return g.record(std::move(out), {x}, [=](Graph<T>& gr, int self) {
        const Tensor<T>& dy = gr.grad(self);
        const Tensor<T>& y = gr.value(self);
        Tensor<T>& dx = gr.grad(x);
        for (std::size_t i = 0; i < dy.numel(); ++i) {
            dx[i] += dy[i] * y[i] * (T(1) - y[i]);
        }
    });
}

template <typename T>
Var max_pool2(Graph<T>& g, Var x) {
    const Shape4 xs = g.shape(x);
    require(xs.h % 2 == 0 && xs.w % 2 == 0, "max_pool2: spatial size must be even");
    const Tensor<T>& xv = g.value(x);
    const Shape4 os{xs.n, xs.c, xs.h / 2, xs.w / 2};
    Tensor<T> out(os);
    std::vector<unsigned char> arg(os.numel());
    std::size_t o = 0;
    for (int n = 0; n < xs.n; ++n) {
        for (int ci = 0; ci < xs.c; ++ci) {
            const T* p = xv.plane(n, ci);
            for (int y = 0; y < os.h; ++y) {
                for (int xx = 0; xx < os.w; ++xx, ++o) {
                    const T* base = p + static_cast<std::size_t>(2 * y) * xs.w + 2 * xx;
                    const T cand[4] = {base[0], base[1], base[xs.w], base[xs.w + 1]};
                    unsigned char best = 0;
                    for (unsigned char j = 1; j < 4; ++j) {
                        if (cand[j] > cand[best]) {
                            best = j;
                        }
                    }
                    out[o] = cand[best];
                    arg[o] = best;
                }
            }
        }
    }
    return g.record(std::move(out), {x}, [=, arg = std::move(arg)](Graph<T>& gr, int self) {
        const Tensor<T>& dy = gr.grad(self);
        Tensor<T>& dx = gr.grad(x);
        std::size_t o = 0;
        for (int n = 0; n < xs.n; ++n) {
            for (int ci = 0; ci < xs.c; ++ci) {
                T* p = dx.plane(n, ci);
                for (int y = 0; y < os.h; ++y) {
                    for (int xx = 0; xx < os.w; ++xx, ++o) {
                        const int a = arg[o];
                        p[static_cast<std::size_t>(2 * y + a / 2) * xs.w + 2 * xx + a % 2] +=
                            dy[o];
                    }
                }
            }
        }
    });
}

template <typename T>
Var upsample_bilinear2(Graph<T>& g, Var x) {
    const Shape4 xs = g.shape(x);
    const Shape4 os{xs.n, xs.c, xs.h * 2, xs.w * 2};
    const auto ty = bilinear_taps(xs.h);
    const auto tx = bilinear_taps(xs.w);
    const Tensor<T>& xv = g.value(x);
    Tensor<T> out(os);
    for (int n = 0; n < xs.n; ++n) {
        for (int ci = 0; ci < xs.c; ++ci) {
            const T* p = xv.plane(n, ci);
            T* q = out.plane(n, ci);
            for (int y = 0; y < os.h; ++y) {
                const Interp& a = ty[y];
                const T* r0 = p + static_cast<std::size_t>(a.i0) * xs.w;
                const T* r1 = p + static_cast<std::size_t>(a.i1) * xs.w;
                for (int xx = 0; xx < os.w; ++xx) {
                    const Interp& b = tx[xx];
                    q[static_cast<std::size_t>(y) * os.w + xx] =
                        T(a.w0) * (T(b.w0) * r0[b.i0] + T(b.w1) * r0[b.i1]) +
                        T(a.w1) * (T(b.w0) * r1[b.i0] + T(b.w1) * r1[b.i1]);
                }
            }
        }
    }
    return g.record(std::move(out), {x}, [=](Graph<T>& gr, int self) {
        const Tensor<T>& dy = gr.grad(self);
        Tensor<T>& dx = gr.grad(x);
        for (int n = 0; n < xs.n; ++n) {
            for (int ci = 0; ci < xs.c; ++ci) {
                const T* q = dy.plane(n, ci);
                T* p = dx.plane(n, ci);
                for (int y = 0; y < os.h; ++y) {
                    const Interp& a = ty[y];
                    T* r0 = p + static_cast<std::size_t>(a.i0) * xs.w;
                    T* r1 = p + static_cast<std::size_t>(a.i1) * xs.w;
                    for (int xx = 0; xx < os.w; ++xx) {
                        const Interp& b = tx[xx];
                        const T d = q[static_cast<std::size_t>(y) * os.w + xx];
                        r0[b.i0] += T(a.w0 * b.w0) * d;
                        r0[b.i1] += T(a.w0 * b.w1) * d;
                        r1[b.i0] += T(a.w1 * b.w0) * d;
                        r1[b.i1] += T(a.w1 * b.w1) * d;
                    }
                }
            }
        }
    });
}

template <typename T>
Var concat_channels(Graph<T>& g, const std::vector<Var>& parts) {
    require(!parts.empty(), "concat_channels: no inputs");
    Shape4 s = g.shape(parts.front());
    int total = 0;
    std::vector<int> chans;
    for (const Var& v : parts) {
        const Shape4& ps = g.shape(v);
        require(ps.n == s.n && ps.h == s.h && ps.w == s.w, "concat_channels: shape mismatch");
        chans.push_back(ps.c);
        total += ps.c;
    }
    s.c = total;
    const std::size_t hw = s.plane();
    Tensor<T> out(s);
    for (int n = 0; n < s.n; ++n) {
        int off = 0;
        for (std::size_t j = 0; j < parts.size(); ++j) {
            const Tensor<T>& pv = g.value(parts[j]);
            std::copy(pv.plane(n, 0), pv.plane(n, 0) + chans[j] * hw, out.plane(n, off));
            off += chans[j];
        }
    }
    return g.record(std::move(out), parts, [=](Graph<T>& gr, int self) {
        const Tensor<T>& dy = gr.grad(self);
        for (int n = 0; n < s.n; ++n) {
            int off = 0;
            for (std::size_t j = 0; j < parts.size(); ++j) {
                if (gr.requires_grad(parts[j])) {
                    T* dst = gr.grad(parts[j]).plane(n, 0);
                    const T* src = dy.plane(n, off);
                    for (std::size_t i = 0; i < chans[j] * hw; ++i) {
                        dst[i] += src[i];
                    }
                }
                off += chans[j];
            }
        }
    });
}

template <typename T>
Var add(Graph<T>& g, Var a, Var b) {
    require(g.shape(a) == g.shape(b), "add: shape mismatch");
    const Tensor<T>& av = g.value(a);
    const Tensor<T>& bv = g.value(b);
    Tensor<T> out(av.shape());
    for (std::size_t i = 0; i < av.numel(); ++i) {
        out[i] = av[i] + bv[i];
    }
    return g.record(std::move(out), {a, b}, [=](Graph<T>& gr, int self) {
        const Tensor<T>& dy = gr.grad(self);
        for (Var v : {a, b}) {
            if (gr.requires_grad(v)) {
                Tensor<T>& d = gr.grad(v);
                for (std::size_t i = 0; i < dy.numel(); ++i) {
                    d[i] += dy[i];
                }
            }
        }
    });
}

template <typename T>
Var mul_spatial(Graph<T>& g, Var x, Var alpha) {
    const Shape4 xs = g.shape(x);
    const Shape4 as = g.shape(alpha);
    require(as.n == xs.n && as.c == 1 && as.h == xs.h && as.w == xs.w,
            "mul_spatial: gate map must be (N,1,h,w) aligned with x");
    const std::size_t hw = xs.plane();
    const Tensor<T>& xv = g.value(x);
    const Tensor<T>& av = g.value(alpha);
    Tensor<T> out(xs);
    for (int n = 0; n < xs.n; ++n) {
        const T* a = av.plane(n, 0);
        for (int ci = 0; ci < xs.c; ++ci) {
            const T* p = xv.plane(n, ci);
            T* q = out.plane(n, ci);
            for (std::size_t i = 0; i < hw; ++i) {
                q[i] = p[i] * a[i];
            }
        }
    }
    return g.record(std::move(out), {x, alpha}, [=](Graph<T>& gr, int self) {
        const Tensor<T>& dy = gr.grad(self);
        const Tensor<T>& xin = gr.value(x);
        const Tensor<T>& ain = gr.value(alpha);
        for (int n = 0; n < xs.n; ++n) {
            const T* a = ain.plane(n, 0);
            for (int ci = 0; ci < xs.c; ++ci) {
                const T* d = dy.plane(n, ci);
                if (gr.requires_grad(x)) {
                    T* dx = gr.grad(x).plane(n, ci);
                    for (std::size_t i = 0; i < hw; ++i) {
                        dx[i] += d[i] * a[i];
                    }
                }
                if (gr.requires_grad(alpha)) {
                    const T* p = xin.plane(n, ci);
                    T* da = gr.grad(alpha).plane(n, 0);
                    for (std::size_t i = 0; i < hw; ++i) {
                        da[i] += d[i] * p[i];
                    }
                }
            }
        }
    });
}

template <typename T>
Var mul_channel(Graph<T>& g, Var x, Var weights) {
    const Shape4 xs = g.shape(x);
    const Shape4 ws = g.shape(weights);
    require(ws.n == xs.n && ws.c == xs.c && ws.h == 1 && ws.w == 1,
            "mul_channel: weights must be (N,C,1,1)");
    const std::size_t hw = xs.plane();
    const Tensor<T>& xv = g.value(x);
    const Tensor<T>& wv = g.value(weights);
    Tensor<T> out(xs);
    for (int n = 0; n < xs.n; ++n) {
        for (int ci = 0; ci < xs.c; ++ci) {
            const T s = wv.at(n, ci, 0, 0);
            const T* p = xv.plane(n, ci);
            T* q = out.plane(n, ci);
            for (std::size_t i = 0; i < hw; ++i) {
                q[i] = p[i] * s;
            }
        }
    }
    return g.record(std::move(out), {x, weights}, [=](Graph<T>& gr, int self) {
        const Tensor<T>& dy = gr.grad(self);
        const Tensor<T>& xin = gr.value(x);
        const Tensor<T>& win = gr.value(weights);
        for (int n = 0; n < xs.n; ++n) {
            for (int ci = 0; ci < xs.c; ++ci) {
                const T* d = dy.plane(n, ci);
                if (gr.requires_grad(x)) {
                    const T s = win.at(n, ci, 0, 0);
                    T* dx = gr.grad(x).plane(n, ci);
                    for (std::size_t i = 0; i < hw; ++i) {
                        dx[i] += d[i] * s;
                    }
                }
                if (gr.requires_grad(weights)) {
                    const T* p = xin.plane(n, ci);
                    T acc = 0;
                    for (std::size_t i = 0; i < hw; ++i) {
                        acc += d[i] * p[i];
                    }
                    gr.grad(weights).at(n, ci, 0, 0) += acc;
                }
            }
        }
    });
}

template <typename T>
Var global_avg_pool(Graph<T>& g, Var x) {
    const Shape4 xs = g.shape(x);
    const std::size_t hw = xs.plane();
    const Tensor<T>& xv = g.value(x);
    Tensor<T> out(Shape4{xs.n, xs.c, 1, 1});
    for (int n = 0; n < xs.n; ++n) {
        for (int ci = 0; ci < xs.c; ++ci) {
            const T* p = xv.plane(n, ci);
            T s = 0;
            for (std::size_t i = 0; i < hw; ++i) {
                s += p[i];
            }
            out.at(n, ci, 0, 0) = s / T(hw);
        }
    }
    return g.record(std::move(out), {x}, [=](Graph<T>& gr, int self) {
        const Tensor<T>& dy = gr.grad(self);
        Tensor<T>& dx = gr.grad(x);
        for (int n = 0; n < xs.n; ++n) {
            for (int ci = 0; ci < xs.c; ++ci) {
                const T d = dy.at(n, ci, 0, 0) / T(hw);
                T* p = dx.plane(n, ci);
                for (std::size_t i = 0; i < hw; ++i) {
                    p[i] += d;
                }
            }
        }
    });
}

template <typename T>
Var weighted_sum(Graph<T>& g, Var x, const Tensor<T>& weights) {
    const Tensor<T>& xv = g.value(x);
    require(weights.shape() == xv.shape(), "weighted_sum: shape mismatch");
    T s = 0;
    for (std::size_t i = 0; i < xv.numel(); ++i) {
        s += xv[i] * weights[i];
    }
    Tensor<T> out(Shape4{1, 1, 1, 1}, s);
    return g.record(std::move(out), {x}, [x, weights](Graph<T>& gr, int self) {
        const T d = gr.grad(self)[0];
        Tensor<T>& dx = gr.grad(x);
        for (std::size_t i = 0; i < dx.numel(); ++i) {
            dx[i] += d * weights[i];
        }
    });
}

#define BAGAU_INSTANTIATE_OPS(T)                                                          \
    template Var conv2d<T>(Graph<T>&, Var, Var, Var);                                     \
    template Var batch_norm<T>(Graph<T>&, Var, Var, Var, const Tensor<T>&,                \
                               const Tensor<T>&, const BatchNormOptions&,                 \
                               std::pair<Tensor<T>*, Tensor<T>*>);                        \
    template Var relu<T>(Graph<T>&, Var);                                                 \
    template Var sigmoid<T>(Graph<T>&, Var);                                              \
    template Var max_pool2<T>(Graph<T>&, Var);                                            \
    template Var upsample_bilinear2<T>(Graph<T>&, Var);                                   \
    template Var concat_channels<T>(Graph<T>&, const std::vector<Var>&);                  \
    template Var add<T>(Graph<T>&, Var, Var);                                             \
    template Var mul_spatial<T>(Graph<T>&, Var, Var);                                     \
    template Var mul_channel<T>(Graph<T>&, Var, Var);                                     \
    template Var global_avg_pool<T>(Graph<T>&, Var);                                      \
    template Var weighted_sum<T>(Graph<T>&, Var, const Tensor<T>&);

BAGAU_INSTANTIATE_OPS(float)
BAGAU_INSTANTIATE_OPS(double)

}  // namespace bagau::nn
