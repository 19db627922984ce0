#pragma once

#include <Eigen/Dense>

#include "d3sr/autodiff.hpp"
#include "d3sr/thread_pool.hpp"

namespace d3sr {

template <typename T>
using EigenRowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<EigenRowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const EigenRowMat<T>>;

namespace detail {

// Zero-padded patch gather: cols is (C*kh*kw, Ho*Wo).
template <typename T>
void im2col(const T* x, int C, int H, int W, int kh, int kw, int stride, int pad, int Ho, int Wo,
            T* cols) {
    const int64_t owo = static_cast<int64_t>(Ho) * Wo;
    for (int c = 0; c < C; ++c) {
        const T* xc = x + static_cast<int64_t>(c) * H * W;
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                T* row = cols + ((static_cast<int64_t>(c) * kh + ki) * kw + kj) * owo;
                for (int oy = 0; oy < Ho; ++oy) {
                    const int iy = oy * stride - pad + ki;
                    T* dst = row + static_cast<int64_t>(oy) * Wo;
                    if (iy < 0 || iy >= H) {
                        std::fill(dst, dst + Wo, T(0));
                        continue;
                    }
                    const T* src = xc + static_cast<int64_t>(iy) * W;
                    for (int ox = 0; ox < Wo; ++ox) {
                        const int ix = ox * stride - pad + kj;
                        dst[ox] = (ix >= 0 && ix < W) ? src[ix] : T(0);
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatter-add columns back into the image.
template <typename T>
void col2im(const T* cols, int C, int H, int W, int kh, int kw, int stride, int pad, int Ho,
            int Wo, T* x_accum) {
    const int64_t owo = static_cast<int64_t>(Ho) * Wo;
    for (int c = 0; c < C; ++c) {
        T* xc = x_accum + static_cast<int64_t>(c) * H * W;
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                const T* row = cols + ((static_cast<int64_t>(c) * kh + ki) * kw + kj) * owo;
                for (int oy = 0; oy < Ho; ++oy) {
                    const int iy = oy * stride - pad + ki;
                    if (iy < 0 || iy >= H) continue;
                    const T* src = row + static_cast<int64_t>(oy) * Wo;
                    T* dst = xc + static_cast<int64_t>(iy) * W;
                    for (int ox = 0; ox < Wo; ++ox) {
                        const int ix = ox * stride - pad + kj;
                        if (ix >= 0 && ix < W) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// conv2d, NCHW. weight (Cout,Cin,kh,kw), optional bias (Cout). Batch items are
// processed independently (and in parallel); the weight-gradient reduction over
// items runs on the calling thread in item order, so results are identical for
// any worker count.
template <typename T>
Var conv2d(Graph<T>& g, Var x, Var w, Var b, int stride, int pad) {
    const auto& xv = g.val(x);
    const auto& wv = g.val(w);
    if (xv.rank() != 4 || wv.rank() != 4)
        throw std::invalid_argument("conv2d: expects rank-4 input and weight");
    const int N = xv.dim(0), Cin = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const int Cout = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
    if (wv.dim(1) != Cin)
        throw std::invalid_argument("conv2d: weight expects " + std::to_string(wv.dim(1)) +
                                    " input channels, got " + std::to_string(Cin));
    const int Ho = (H + 2 * pad - kh) / stride + 1;
    const int Wo = (W + 2 * pad - kw) / stride + 1;
    if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("conv2d: output would be empty");
    if (b.valid() && g.val(b).numel() != Cout)
        throw std::invalid_argument("conv2d: bias size mismatch");

    const int64_t krows = static_cast<int64_t>(Cin) * kh * kw;
    const int64_t owo = static_cast<int64_t>(Ho) * Wo;

    Tensor<T> out({N, Cout, Ho, Wo});
    {
        const T* bias = b.valid() ? g.val(b).ptr() : nullptr;
        const T* wp = wv.ptr();
        const T* xp = xv.ptr();
        T* yp = out.ptr();
        ThreadPool::global().parallel_for(N, [&](int n) {
            std::vector<T> cols(static_cast<size_t>(krows * owo));
            detail::im2col(xp + static_cast<int64_t>(n) * Cin * H * W, Cin, H, W, kh, kw, stride,
                           pad, Ho, Wo, cols.data());
            ConstMatMap<T> Wm(wp, Cout, krows);
            ConstMatMap<T> Cm(cols.data(), krows, owo);
            MatMap<T> Ym(yp + static_cast<int64_t>(n) * Cout * owo, Cout, owo);
            Ym.noalias() = Wm * Cm;
            if (bias)
                for (int c = 0; c < Cout; ++c) Ym.row(c).array() += bias[c];
        });
    }

    std::vector<int> parents = {x.id, w.id};
    if (b.valid()) parents.push_back(b.id);
    return g.make(std::move(out), std::move(parents),
                  [x, w, b, N, Cin, H, W, Cout, kh, kw, stride, pad, Ho, Wo, krows,
                   owo](Graph<T>& gr, int self) {
                      const auto& go = gr.grad_buf(self);
                      const auto& xv2 = gr.val(x);
                      const auto& wv2 = gr.val(w);
                      const bool need_dx = gr.needs_grad(x);
                      const bool need_dw = gr.needs_grad(w);
                      const bool need_db = b.valid() && gr.needs_grad(b);

                      std::vector<Tensor<T>> dw_parts;
                      if (need_dw) dw_parts.assign(static_cast<size_t>(N), Tensor<T>());

                      Tensor<T>* dx = need_dx ? &gr.grad_buf(x.id) : nullptr;

                      const T* gop = go.ptr();
                      const T* wp = wv2.ptr();
                      const T* xp = xv2.ptr();
                      ThreadPool::global().parallel_for(N, [&](int n) {
                          ConstMatMap<T> Gm(gop + static_cast<int64_t>(n) * Cout * owo, Cout, owo);
                          if (need_dx) {
                              ConstMatMap<T> Wm(wp, Cout, krows);
                              std::vector<T> dcols(static_cast<size_t>(krows * owo));
                              MatMap<T> Dm(dcols.data(), krows, owo);
                              Dm.noalias() = Wm.transpose() * Gm;
                              detail::col2im(dcols.data(), Cin, H, W, kh, kw, stride, pad, Ho, Wo,
                                             dx->ptr() + static_cast<int64_t>(n) * Cin * H * W);
                          }
                          if (need_dw) {
                              std::vector<T> cols(static_cast<size_t>(krows * owo));
                              detail::im2col(xp + static_cast<int64_t>(n) * Cin * H * W, Cin, H, W,
                                             kh, kw, stride, pad, Ho, Wo, cols.data());
                              ConstMatMap<T> Cm(cols.data(), krows, owo);
                              Tensor<T>& part = dw_parts[static_cast<size_t>(n)];
                              part = Tensor<T>({Cout, static_cast<int>(krows)});
                              MatMap<T> Pm(part.ptr(), Cout, krows);
                              Pm.noalias() = Gm * Cm.transpose();
                          }
                      });

                      if (need_dw) {
                          auto& dw = gr.grad_buf(w.id);
                          for (int n = 0; n < N; ++n) {
                              const auto& part = dw_parts[static_cast<size_t>(n)];
                              for (int64_t i = 0; i < dw.numel(); ++i) dw[i] += part[i];
                          }
                      }
                      if (need_db) {
                          auto& db = gr.grad_buf(b.id);
                          for (int n = 0; n < N; ++n)
                              for (int c = 0; c < Cout; ++c) {
                                  const T* p = gop + (static_cast<int64_t>(n) * Cout + c) * owo;
                                  double acc = 0.0;
                                  for (int64_t i = 0; i < owo; ++i)
                                      acc += static_cast<double>(p[i]);
                                  db[c] += static_cast<T>(acc);
                              }
                      }
                  });
}

// y = x * w^T + bias, x (N,K), w (M,K), bias (M) -> (N,M)
template <typename T>
Var linear(Graph<T>& g, Var x, Var w, Var b) {
    const auto& xv = g.val(x);
    const auto& wv = g.val(w);
    if (xv.rank() != 2 || wv.rank() != 2)
        throw std::invalid_argument("linear: expects rank-2 input and weight");
    const int N = xv.dim(0), K = xv.dim(1), M = wv.dim(0);
    if (wv.dim(1) != K) throw std::invalid_argument("linear: weight/input dim mismatch");
    Tensor<T> out({N, M});
    {
        ConstMatMap<T> Xm(xv.ptr(), N, K);
        ConstMatMap<T> Wm(wv.ptr(), M, K);
        MatMap<T> Ym(out.ptr(), N, M);
        Ym.noalias() = Xm * Wm.transpose();
        if (b.valid()) {
            const auto& bv = g.val(b);
            for (int n = 0; n < N; ++n)
                for (int m = 0; m < M; ++m) out[static_cast<int64_t>(n) * M + m] += bv[m];
        }
    }
    std::vector<int> parents = {x.id, w.id};
    if (b.valid()) parents.push_back(b.id);
    return g.make(std::move(out), std::move(parents),
                  [x, w, b, N, K, M](Graph<T>& gr, int self) {
                      const auto& go = gr.grad_buf(self);
                      ConstMatMap<T> Gm(go.ptr(), N, M);
                      if (gr.needs_grad(x)) {
                          ConstMatMap<T> Wm(gr.val(w).ptr(), M, K);
                          MatMap<T> Dx(gr.grad_buf(x.id).ptr(), N, K);
                          Dx.noalias() += Gm * Wm;
                      }
                      if (gr.needs_grad(w)) {
                          ConstMatMap<T> Xm(gr.val(x).ptr(), N, K);
                          MatMap<T> Dw(gr.grad_buf(w.id).ptr(), M, K);
                          Dw.noalias() += Gm.transpose() * Xm;
                      }
                      if (b.valid() && gr.needs_grad(b)) {
                          auto& db = gr.grad_buf(b.id);
                          for (int n = 0; n < N; ++n)
                              for (int m = 0; m < M; ++m)
                                  db[m] += go[static_cast<int64_t>(n) * M + m];
                      }
                  });
}

// c (m,n) = a (m,k) * b (k,n)
template <typename T>
Var matmul(Graph<T>& g, Var a, Var b) {
    const auto& av = g.val(a);
    const auto& bv = g.val(b);
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0))
        throw std::invalid_argument("matmul: incompatible shapes");
    const int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    Tensor<T> out({m, n});
    {
        ConstMatMap<T> Am(av.ptr(), m, k);
        ConstMatMap<T> Bm(bv.ptr(), k, n);
        MatMap<T> Cm(out.ptr(), m, n);
        Cm.noalias() = Am * Bm;
    }
    return g.make(std::move(out), {a.id, b.id}, [a, b, m, k, n](Graph<T>& gr, int self) {
        const auto& go = gr.grad_buf(self);
        ConstMatMap<T> Gm(go.ptr(), m, n);
        if (gr.needs_grad(a)) {
            ConstMatMap<T> Bm(gr.val(b).ptr(), k, n);
            MatMap<T> Da(gr.grad_buf(a.id).ptr(), m, k);
            Da.noalias() += Gm * Bm.transpose();
        }
        if (gr.needs_grad(b)) {
            ConstMatMap<T> Am(gr.val(a).ptr(), m, k);
            MatMap<T> Db(gr.grad_buf(b.id).ptr(), k, n);
            Db.noalias() += Am.transpose() * Gm;
        }
    });
}

// GroupNorm over (N,C,H,W) with per-channel affine.
template <typename T>
Var group_norm(Graph<T>& g, Var x, Var gamma, Var beta, int groups, double eps = 1e-5) {
    const auto& xv = g.val(x);
    if (xv.rank() != 4) throw std::invalid_argument("group_norm: expects rank-4 input");
    const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    if (C % groups != 0) throw std::invalid_argument("group_norm: channels not divisible by groups");
    const int cpg = C / groups;
    const int64_t gsz = static_cast<int64_t>(cpg) * H * W;
    const int64_t hw = static_cast<int64_t>(H) * W;

    const auto& gav = g.val(gamma);
    const auto& bev = g.val(beta);
    if (gav.numel() != C || bev.numel() != C)
        throw std::invalid_argument("group_norm: affine size mismatch");

    std::vector<double> mean(static_cast<size_t>(N) * groups);
    std::vector<double> inv_std(static_cast<size_t>(N) * groups);
    Tensor<T> out(xv.shape);
    for (int n = 0; n < N; ++n) {
        for (int gi = 0; gi < groups; ++gi) {
            const T* p = xv.ptr() + (static_cast<int64_t>(n) * C + static_cast<int64_t>(gi) * cpg) * hw;
            double s = 0.0, s2 = 0.0;
            for (int64_t i = 0; i < gsz; ++i) {
                const double v = static_cast<double>(p[i]);
                s += v;
                s2 += v * v;
            }
            const double mu = s / static_cast<double>(gsz);
            const double var = std::max(0.0, s2 / static_cast<double>(gsz) - mu * mu);
            const double is = 1.0 / std::sqrt(var + eps);
            mean[static_cast<size_t>(n) * groups + gi] = mu;
            inv_std[static_cast<size_t>(n) * groups + gi] = is;
            T* q = out.ptr() + (static_cast<int64_t>(n) * C + static_cast<int64_t>(gi) * cpg) * hw;
            for (int cc = 0; cc < cpg; ++cc) {
                const int c = gi * cpg + cc;
                const double ga = static_cast<double>(gav[c]);
                const double be = static_cast<double>(bev[c]);
                const T* pc = p + static_cast<int64_t>(cc) * hw;
                T* qc = q + static_cast<int64_t>(cc) * hw;
                for (int64_t i = 0; i < hw; ++i)
                    qc[i] = static_cast<T>((static_cast<double>(pc[i]) - mu) * is * ga + be);
            }
        }
    }

    return g.make(
        std::move(out), {x.id, gamma.id, beta.id},
        [x, gamma, beta, N, C, H, W, groups, cpg, gsz, hw, mean, inv_std](Graph<T>& gr, int self) {
            const auto& go = gr.grad_buf(self);
            const auto& xv2 = gr.val(x);
            const auto& gav2 = gr.val(gamma);
            const bool need_dx = gr.needs_grad(x);
            const bool need_dg = gr.needs_grad(gamma);
            const bool need_db = gr.needs_grad(beta);
            for (int n = 0; n < N; ++n) {
                for (int gi = 0; gi < groups; ++gi) {
                    const double mu = mean[static_cast<size_t>(n) * groups + gi];
                    const double is = inv_std[static_cast<size_t>(n) * groups + gi];
                    const int64_t base =
                        (static_cast<int64_t>(n) * C + static_cast<int64_t>(gi) * cpg) * hw;
                    const T* xp = xv2.ptr() + base;
                    const T* gp = go.ptr() + base;
                    if (need_dg || need_db) {
                        auto* dgam = need_dg ? &gr.grad_buf(gamma.id) : nullptr;
                        auto* dbet = need_db ? &gr.grad_buf(beta.id) : nullptr;
                        for (int cc = 0; cc < cpg; ++cc) {
                            const int c = gi * cpg + cc;
                            double sg = 0.0, sgx = 0.0;
                            for (int64_t i = 0; i < hw; ++i) {
                                const double gv = static_cast<double>(gp[cc * hw + i]);
                                sg += gv;
                                sgx += gv * (static_cast<double>(xp[cc * hw + i]) - mu) * is;
                            }
                            if (dbet) (*dbet)[c] += static_cast<T>(sg);
                            if (dgam) (*dgam)[c] += static_cast<T>(sgx);
                        }
                    }
                    if (need_dx) {
                        // dx = is * (h - mean(h) - xhat * mean(h*xhat)), h = dy*gamma
                        double mh = 0.0, mhx = 0.0;
                        for (int cc = 0; cc < cpg; ++cc) {
                            const double ga = static_cast<double>(gav2[gi * cpg + cc]);
                            for (int64_t i = 0; i < hw; ++i) {
                                const double h = static_cast<double>(gp[cc * hw + i]) * ga;
                                const double xh = (static_cast<double>(xp[cc * hw + i]) - mu) * is;
                                mh += h;
                                mhx += h * xh;
                            }
                        }
                        mh /= static_cast<double>(gsz);
                        mhx /= static_cast<double>(gsz);
                        auto& dx = gr.grad_buf(x.id);
                        T* dxp = dx.ptr() + base;
                        for (int cc = 0; cc < cpg; ++cc) {
                            const double ga = static_cast<double>(gav2[gi * cpg + cc]);
                            for (int64_t i = 0; i < hw; ++i) {
                                const double h = static_cast<double>(gp[cc * hw + i]) * ga;
                                const double xh = (static_cast<double>(xp[cc * hw + i]) - mu) * is;
                                dxp[cc * hw + i] += static_cast<T>(is * (h - mh - xh * mhx));
                            }
                        }
                    }
                }
            }
        });
}

// Adds a per-(sample,channel) bias (N,C) across the spatial dims of (N,C,H,W).
template <typename T>
Var add_channel_bias(Graph<T>& g, Var x, Var bias) {
    const auto& xv = g.val(x);
    const auto& bv = g.val(bias);
    if (xv.rank() != 4 || bv.rank() != 2 || bv.dim(0) != xv.dim(0) || bv.dim(1) != xv.dim(1))
        throw std::invalid_argument("add_channel_bias: expects (N,C,H,W) + (N,C)");
    const int N = xv.dim(0), C = xv.dim(1);
    const int64_t hw = static_cast<int64_t>(xv.dim(2)) * xv.dim(3);
    Tensor<T> out = xv;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T b = bv[static_cast<int64_t>(n) * C + c];
            T* p = out.ptr() + (static_cast<int64_t>(n) * C + c) * hw;
            for (int64_t i = 0; i < hw; ++i) p[i] += b;
        }
    return g.make(std::move(out), {x.id, bias.id}, [x, bias, N, C, hw](Graph<T>& gr, int self) {
        const auto& go = gr.grad_buf(self);
        if (gr.needs_grad(x)) {
            auto& dx = gr.grad_buf(x.id);
            for (int64_t i = 0; i < go.numel(); ++i) dx[i] += go[i];
        }
        if (gr.needs_grad(bias)) {
            auto& db = gr.grad_buf(bias.id);
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    const T* p = go.ptr() + (static_cast<int64_t>(n) * C + c) * hw;
                    double acc = 0.0;
                    for (int64_t i = 0; i < hw; ++i) acc += static_cast<double>(p[i]);
                    db[static_cast<int64_t>(n) * C + c] += static_cast<T>(acc);
                }
        }
    });
}

template <typename T>
Var upsample_nearest2(Graph<T>& g, Var x) {
    const auto& xv = g.val(x);
    if (xv.rank() != 4) throw std::invalid_argument("upsample_nearest2: expects rank-4 input");
    const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    Tensor<T> out({N, C, 2 * H, 2 * W});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
                for (int xx = 0; xx < W; ++xx) {
                    const T v = xv.at4(n, c, y, xx);
                    out.at4(n, c, 2 * y, 2 * xx) = v;
                    out.at4(n, c, 2 * y, 2 * xx + 1) = v;
                    out.at4(n, c, 2 * y + 1, 2 * xx) = v;
                    out.at4(n, c, 2 * y + 1, 2 * xx + 1) = v;
                }
    return g.make(std::move(out), {x.id}, [x, N, C, H, W](Graph<T>& gr, int self) {
        const auto& go = gr.grad_buf(self);
        auto& dx = gr.grad_buf(x.id);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < H; ++y)
                    for (int xx = 0; xx < W; ++xx)
                        dx.at4(n, c, y, xx) +=
                            go.at4(n, c, 2 * y, 2 * xx) + go.at4(n, c, 2 * y, 2 * xx + 1) +
                            go.at4(n, c, 2 * y + 1, 2 * xx) + go.at4(n, c, 2 * y + 1, 2 * xx + 1);
    });
}

template <typename T>
Var avg_pool2(Graph<T>& g, Var x) {
    const auto& xv = g.val(x);
    if (xv.rank() != 4) throw std::invalid_argument("avg_pool2: expects rank-4 input");
    const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    if (H % 2 != 0 || W % 2 != 0) throw std::invalid_argument("avg_pool2: dims must be even");
    const int Ho = H / 2, Wo = W / 2;
    Tensor<T> out({N, C, Ho, Wo});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < Ho; ++y)
                for (int xx = 0; xx < Wo; ++xx)
                    out.at4(n, c, y, xx) =
                        static_cast<T>(0.25 * (static_cast<double>(xv.at4(n, c, 2 * y, 2 * xx)) +
                                               xv.at4(n, c, 2 * y, 2 * xx + 1) +
                                               xv.at4(n, c, 2 * y + 1, 2 * xx) +
                                               xv.at4(n, c, 2 * y + 1, 2 * xx + 1)));
    return g.make(std::move(out), {x.id}, [x, N, C, Ho, Wo](Graph<T>& gr, int self) {
        const auto& go = gr.grad_buf(self);
        auto& dx = gr.grad_buf(x.id);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < Ho; ++y)
                    for (int xx = 0; xx < Wo; ++xx) {
                        const T q = static_cast<T>(static_cast<double>(go.at4(n, c, y, xx)) * 0.25);
                        dx.at4(n, c, 2 * y, 2 * xx) += q;
                        dx.at4(n, c, 2 * y, 2 * xx + 1) += q;
                        dx.at4(n, c, 2 * y + 1, 2 * xx) += q;
                        dx.at4(n, c, 2 * y + 1, 2 * xx + 1) += q;
                    }
    });
}

template <typename T>
Var replicate_pad(Graph<T>& g, Var x, int p) {
    const auto& xv = g.val(x);
    if (xv.rank() != 4) throw std::invalid_argument("replicate_pad: expects rank-4 input");
    const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const int Hp = H + 2 * p, Wp = W + 2 * p;
    Tensor<T> out({N, C, Hp, Wp});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < Hp; ++y) {
                const int sy = std::min(H - 1, std::max(0, y - p));
                for (int xx = 0; xx < Wp; ++xx) {
                    const int sx = std::min(W - 1, std::max(0, xx - p));
                    out.at4(n, c, y, xx) = xv.at4(n, c, sy, sx);
                }
            }
    return g.make(std::move(out), {x.id}, [x, N, C, H, W, p](Graph<T>& gr, int self) {
        const auto& go = gr.grad_buf(self);
        auto& dx = gr.grad_buf(x.id);
        const int Hp = H + 2 * p, Wp = W + 2 * p;
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < Hp; ++y) {
                    const int sy = std::min(H - 1, std::max(0, y - p));
                    for (int xx = 0; xx < Wp; ++xx) {
                        const int sx = std::min(W - 1, std::max(0, xx - p));
                        dx.at4(n, c, sy, sx) += go.at4(n, c, y, xx);
                    }
                }
    });
}

template <typename T>
Var concat_ch(Graph<T>& g, Var a, Var b) {
    const auto& av = g.val(a);
    const auto& bv = g.val(b);
    if (av.rank() != 4 || bv.rank() != 4 || av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2) ||
        av.dim(3) != bv.dim(3))
        throw std::invalid_argument("concat_ch: incompatible shapes");
    const int N = av.dim(0), Ca = av.dim(1), Cb = bv.dim(1);
    const int64_t hw = static_cast<int64_t>(av.dim(2)) * av.dim(3);
    Tensor<T> out({N, Ca + Cb, av.dim(2), av.dim(3)});
    for (int n = 0; n < N; ++n) {
        std::copy(av.ptr() + static_cast<int64_t>(n) * Ca * hw,
                  av.ptr() + static_cast<int64_t>(n + 1) * Ca * hw,
                  out.ptr() + static_cast<int64_t>(n) * (Ca + Cb) * hw);
        std::copy(bv.ptr() + static_cast<int64_t>(n) * Cb * hw,
                  bv.ptr() + static_cast<int64_t>(n + 1) * Cb * hw,
                  out.ptr() + static_cast<int64_t>(n) * (Ca + Cb) * hw + Ca * hw);
    }
    return g.make(std::move(out), {a.id, b.id}, [a, b, N, Ca, Cb, hw](Graph<T>& gr, int self) {
        const auto& go = gr.grad_buf(self);
        if (gr.needs_grad(a)) {
            auto& da = gr.grad_buf(a.id);
            for (int n = 0; n < N; ++n) {
                const T* src = go.ptr() + static_cast<int64_t>(n) * (Ca + Cb) * hw;
                T* dst = da.ptr() + static_cast<int64_t>(n) * Ca * hw;
                for (int64_t i = 0; i < Ca * hw; ++i) dst[i] += src[i];
            }
        }
        if (gr.needs_grad(b)) {
            auto& db = gr.grad_buf(b.id);
            for (int n = 0; n < N; ++n) {
                const T* src = go.ptr() + static_cast<int64_t>(n) * (Ca + Cb) * hw + Ca * hw;
                T* dst = db.ptr() + static_cast<int64_t>(n) * Cb * hw;
                for (int64_t i = 0; i < Cb * hw; ++i) dst[i] += src[i];
            }
        }
    });
}

// Channels [c0,c1) of a rank-4 tensor.
template <typename T>
Var slice_ch(Graph<T>& g, Var x, int c0, int c1) {
    const auto& xv = g.val(x);
    if (xv.rank() != 4 || c0 < 0 || c1 > xv.dim(1) || c0 >= c1)
        throw std::invalid_argument("slice_ch: bad channel range");
    const int N = xv.dim(0), C = xv.dim(1), Cs = c1 - c0;
    const int64_t hw = static_cast<int64_t>(xv.dim(2)) * xv.dim(3);
    Tensor<T> out({N, Cs, xv.dim(2), xv.dim(3)});
    for (int n = 0; n < N; ++n)
        std::copy(xv.ptr() + (static_cast<int64_t>(n) * C + c0) * hw,
                  xv.ptr() + (static_cast<int64_t>(n) * C + c1) * hw,
                  out.ptr() + static_cast<int64_t>(n) * Cs * hw);
    return g.make(std::move(out), {x.id}, [x, N, C, c0, Cs, hw](Graph<T>& gr, int self) {
        const auto& go = gr.grad_buf(self);
        auto& dx = gr.grad_buf(x.id);
        for (int n = 0; n < N; ++n) {
            const T* src = go.ptr() + static_cast<int64_t>(n) * Cs * hw;
            T* dst = dx.ptr() + (static_cast<int64_t>(n) * C + c0) * hw;
            for (int64_t i = 0; i < Cs * hw; ++i) dst[i] += src[i];
        }
    });
}

// Sinusoidal timestep embedding, DDPM convention: [sin(t*f_i), cos(t*f_i)]
// with log-spaced frequencies. Not a graph op; the embedding of an integer
// timestep carries no gradient.
template <typename T>
Tensor<T> timestep_embedding(int t, int dim) {
    if (dim % 2 != 0) throw std::invalid_argument("timestep_embedding: dim must be even");
    const int half = dim / 2;
    Tensor<T> out({dim});
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
        const double ang = static_cast<double>(t) * freq;
        out[i] = static_cast<T>(std::sin(ang));
        out[half + i] = static_cast<T>(std::cos(ang));
    }
    return out;
}

// Batched embedding for per-item timesteps -> (N, dim).
template <typename T>
Tensor<T> timestep_embedding_batch(const std::vector<int>& ts, int dim) {
    Tensor<T> out({static_cast<int>(ts.size()), dim});
    for (size_t n = 0; n < ts.size(); ++n) {
        Tensor<T> e = timestep_embedding<T>(ts[n], dim);
        std::copy(e.data.begin(), e.data.end(), out.data.begin() + n * static_cast<size_t>(dim));
    }
    return out;
}

}  // namespace d3sr
