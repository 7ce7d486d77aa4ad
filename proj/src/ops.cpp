#include "edgereg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "edgereg/gemm.hpp"

namespace edgereg {

namespace {

// Builds the patch matrix for output slices [z0, z1): rows (Cin*K^3) by
// columns ((z1-z0)*Y*X), zero padding outside the volume.
template <class T>
void im2col_slab(const T* x, int Cin, int Z, int Y, int X, int K, int dil, int z0, int z1, T* col) {
    const int pad = dil * (K - 1) / 2;
    const size_t plane = size_t(Y) * X;
    const size_t slab_cols = size_t(z1 - z0) * plane;
    size_t row = 0;
    for (int c = 0; c < Cin; ++c) {
        const T* xc = x + size_t(c) * Z * plane;
        for (int kz = 0; kz < K; ++kz)
            for (int ky = 0; ky < K; ++ky)
                for (int kx = 0; kx < K; ++kx, ++row) {
                    T* dst = col + row * slab_cols;
                    const int offz = kz * dil - pad, offy = ky * dil - pad, offx = kx * dil - pad;
                    for (int oz = z0; oz < z1; ++oz) {
                        const int iz = oz + offz;
                        T* drow = dst + size_t(oz - z0) * plane;
                        if (iz < 0 || iz >= Z) {
                            std::memset(drow, 0, plane * sizeof(T));
                            continue;
                        }
                        const T* xz = xc + size_t(iz) * plane;
                        for (int oy = 0; oy < Y; ++oy, drow += X) {
                            const int iy = oy + offy;
                            if (iy < 0 || iy >= Y) {
                                std::memset(drow, 0, size_t(X) * sizeof(T));
                                continue;
                            }
                            const T* xrow = xz + size_t(iy) * X;
                            const int lo = std::min(X, std::max(0, -offx));
                            const int hi = std::max(lo, std::min(X, X - offx));
                            if (lo > 0) std::memset(drow, 0, size_t(lo) * sizeof(T));
                            if (hi > lo) std::memcpy(drow + lo, xrow + lo + offx, size_t(hi - lo) * sizeof(T));
                            if (hi < X) std::memset(drow + hi, 0, size_t(X - hi) * sizeof(T));
                        }
                    }
                }
    }
}

// Scatter-add transpose of im2col_slab.
template <class T>
void col2im_slab_add(const T* col, int Cin, int Z, int Y, int X, int K, int dil, int z0, int z1, T* x) {
    const int pad = dil * (K - 1) / 2;
    const size_t plane = size_t(Y) * X;
    const size_t slab_cols = size_t(z1 - z0) * plane;
    size_t row = 0;
    for (int c = 0; c < Cin; ++c) {
        T* xc = x + size_t(c) * Z * plane;
        for (int kz = 0; kz < K; ++kz)
            for (int ky = 0; ky < K; ++ky)
                for (int kx = 0; kx < K; ++kx, ++row) {
                    const T* src = col + row * slab_cols;
                    const int offz = kz * dil - pad, offy = ky * dil - pad, offx = kx * dil - pad;
                    for (int oz = z0; oz < z1; ++oz) {
                        const int iz = oz + offz;
                        if (iz < 0 || iz >= Z) continue;
                        const T* srow = src + size_t(oz - z0) * plane;
                        T* xz = xc + size_t(iz) * plane;
                        for (int oy = 0; oy < Y; ++oy, srow += X) {
                            const int iy = oy + offy;
                            if (iy < 0 || iy >= Y) continue;
                            T* xrow = xz + size_t(iy) * X;
                            const int lo = std::max(0, -offx);
                            const int hi = std::min(X, X - offx);
                            for (int ox = lo; ox < hi; ++ox) xrow[ox + offx] += srow[ox];
                        }
                    }
                }
    }
}

inline int slab_height(int Z, int Y, int X, int rows) {
    // bound the patch matrix to ~32M elements
    const size_t budget = 32u << 20;
    size_t plane = size_t(Y) * X;
    size_t zmax = budget / (size_t(rows) * plane);
    if (zmax < 1) zmax = 1;
    if (zmax > size_t(Z)) zmax = size_t(Z);
    return int(zmax);
}

// Direct same-padding convolution, accumulating into `out`. Processes one
// output plane at a time so it stays cache-resident across the Cin*K^3
// accumulation passes; the inner loop runs along contiguous x.
template <class T>
void conv_direct_acc(const T* x, const T* w, int Cin, int Z, int Y, int X, int K, int dil,
                     int Cout, T* out) {
    const int pad = dil * (K - 1) / 2;
    const size_t plane = size_t(Y) * X;
    for (int co = 0; co < Cout; ++co) {
        T* oc = out + size_t(co) * Z * plane;
        for (int z = 0; z < Z; ++z) {
            T* oplane = oc + size_t(z) * plane;
            for (int ci = 0; ci < Cin; ++ci) {
                const T* xc = x + size_t(ci) * Z * plane;
                const T* wk = w + (size_t(co) * Cin + ci) * K * K * K;
                for (int kz = 0; kz < K; ++kz) {
                    const int iz = z + kz * dil - pad;
                    if (iz < 0 || iz >= Z) continue;
                    const T* xz = xc + size_t(iz) * plane;
                    for (int ky = 0; ky < K; ++ky) {
                        const int offy = ky * dil - pad;
                        const int ylo = std::max(0, -offy), yhi = std::min(Y, Y - offy);
                        for (int kx = 0; kx < K; ++kx) {
                            const T wv = wk[(kz * K + ky) * K + kx];
                            const int offx = kx * dil - pad;
                            const int xlo = std::max(0, -offx);
                            const int xhi = std::max(xlo, std::min(X, X - offx));
                            for (int y = ylo; y < yhi; ++y) {
                                T* orow = oplane + size_t(y) * X;
                                const T* xrow = xz + size_t(y + offy) * X + offx;
                                for (int xi = xlo; xi < xhi; ++xi) orow[xi] += wv * xrow[xi];
                            }
                        }
                    }
                }
            }
        }
    }
}

// Direct weight gradient: wg[co,ci,off] += <g[co], shift(x[ci], off)>.
template <class T>
void conv_direct_wgrad(const T* x, const T* g, int Cin, int Z, int Y, int X, int K, int dil,
                       int Cout, T* wg) {
    // Every tap gradient is a full-volume dot product; reducing to a scalar
    // per row serializes on the FP add chain and pays a horizontal sum per
    // row and tap. Instead each tap carries VW independent partial sums that
    // a row's elements feed round-robin (a plain vector FMA), and the lanes
    // collapse only once per channel pair. Streaming the output-grad rows in
    // the outer loops keeps the K^2 input rows each row touches in cache.
    constexpr int VW = 8;
    const int pad = dil * (K - 1) / 2;
    const size_t plane = size_t(Y) * X;
    const int KK = K * K * K;
    std::vector<T> acc(size_t(KK) * VW);
    for (int co = 0; co < Cout; ++co) {
        const T* gc = g + size_t(co) * Z * plane;
        for (int ci = 0; ci < Cin; ++ci) {
            const T* xc = x + size_t(ci) * Z * plane;
            std::fill(acc.begin(), acc.end(), T(0));
            for (int z = 0; z < Z; ++z) {
                const T* gz = gc + size_t(z) * plane;
                for (int y = 0; y < Y; ++y) {
                    const T* grow = gz + size_t(y) * X;
                    for (int kz = 0; kz < K; ++kz) {
                        const int iz = z + kz * dil - pad;
                        if (iz < 0 || iz >= Z) continue;
                        const T* xz = xc + size_t(iz) * plane;
                        for (int ky = 0; ky < K; ++ky) {
                            const int iy = y + ky * dil - pad;
                            if (iy < 0 || iy >= Y) continue;
                            const T* xrow = xz + size_t(iy) * X;
                            for (int kx = 0; kx < K; ++kx) {
                                const int offx = kx * dil - pad;
                                const int xlo = std::max(0, -offx);
                                const int xhi = std::max(xlo, std::min(X, X - offx));
                                T* av = acc.data() + size_t((kz * K + ky) * K + kx) * VW;
                                int xi = xlo;
                                for (; xi + VW <= xhi; xi += VW)
#pragma omp simd
                                    for (int l = 0; l < VW; ++l)
                                        av[l] += grow[xi + l] * xrow[xi + l + offx];
                                for (int l = 0; xi < xhi; ++xi, ++l)
                                    av[l] += grow[xi] * xrow[xi + offx];
                            }
                        }
                    }
                }
            }
            T* wk = wg + (size_t(co) * Cin + ci) * KK;
            for (int k = 0; k < KK; ++k) {
                T s = 0;
                for (int l = 0; l < VW; ++l) s += acc[size_t(k) * VW + l];
                wk[k] += s;
            }
        }
    }
}

// The direct path beats im2col+GEMM when the patch matrix is small (tiny
// channel counts make the GEMM degenerate and im2col inflates traffic K^3x).
inline bool conv_use_direct(int Cin, int Cout, int K) {
    return size_t(Cin) * size_t(Cout) * K * K * K <= 4096;
}

} // namespace

template <class T>
Var<T> conv3d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int dilation) {
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    require_shape(xs.size() == 4, "conv3d: input must be (C,Z,Y,X)");
    require_shape(ws.size() == 5, "conv3d: weight must be (Cout,Cin,K,K,K)");
    const int Cin = xs[0], Z = xs[1], Y = xs[2], X = xs[3];
    const int Cout = ws[0], K = ws[2];
    require_shape(ws[1] == Cin, "conv3d: channel mismatch");
    require_shape(ws[3] == K && ws[4] == K, "conv3d: kernel must be cubic");
    require_shape(K % 2 == 1, "conv3d: kernel size must be odd");
    require(dilation >= 1, "conv3d: dilation must be >= 1");
    require_shape(b.shape().size() == 1 && b.shape()[0] == Cout, "conv3d: bias shape");

    const int rows = Cin * K * K * K;
    const size_t S = size_t(Z) * Y * X;
    const int zslab = slab_height(Z, Y, X, rows);
    const bool pointwise = K == 1;
    const bool direct = !pointwise && conv_use_direct(Cin, Cout, K);

    Tensor<T> out({Cout, Z, Y, X});
    if (pointwise) {
        gemm(false, false, Cout, int(S), Cin, T(1), w.val().data(), Cin, x.val().data(), int(S),
             T(0), out.data(), int(S));
    } else if (direct) {
        out.fill(T(0));
        conv_direct_acc(x.val().data(), w.val().data(), Cin, Z, Y, X, K, dilation, Cout,
                        out.data());
    } else {
        std::vector<T> col(size_t(rows) * size_t(zslab) * Y * X);
        for (int z0 = 0; z0 < Z; z0 += zslab) {
            const int z1 = std::min(Z, z0 + zslab);
            const size_t cols = size_t(z1 - z0) * Y * X;
            im2col_slab(x.val().data(), Cin, Z, Y, X, K, dilation, z0, z1, col.data());
            gemm(false, false, Cout, int(cols), rows, T(1), w.val().data(), rows, col.data(),
                 int(cols), T(0), out.data() + size_t(z0) * Y * X, int(S));
        }
    }
    {
        const T* bv = b.val().data();
        T* ov = out.data();
        for (int c = 0; c < Cout; ++c) {
            const T bc = bv[c];
            T* p = ov + size_t(c) * S;
            for (size_t i = 0; i < S; ++i) p[i] += bc;
        }
    }

    return make_op<T>(std::move(out), {x.ptr(), w.ptr(), b.ptr()},
                      [xp = x.node(), wp = w.node(), bp = b.node(), Cin, Z, Y, X, K, dilation, Cout,
                       rows, S, zslab, pointwise, direct](Node<T>* self) {
                          const T* g = self->grad.data();
                          if (bp->requires_grad) {
                              T* bg = bp->ensure_grad().data();
                              for (int c = 0; c < Cout; ++c) {
                                  T acc = 0;
                                  const T* p = g + size_t(c) * S;
#pragma omp simd reduction(+ : acc)
                                  for (size_t i = 0; i < S; ++i) acc += p[i];
                                  bg[c] += acc;
                              }
                          }
                          const bool need_w = wp->requires_grad;
                          const bool need_x = xp->requires_grad;
                          if (!need_w && !need_x) return;
                          T* wg = need_w ? wp->ensure_grad().data() : nullptr;
                          T* xg = need_x ? xp->ensure_grad().data() : nullptr;
                          if (pointwise) {
                              if (need_w)
                                  gemm(false, true, Cout, Cin, int(S), T(1), g, int(S),
                                       xp->val.data(), int(S), T(1), wg, Cin);
                              if (need_x)
                                  gemm(true, false, Cin, int(S), Cout, T(1), wp->val.data(), Cin, g,
                                       int(S), T(1), xg, int(S));
                              return;
                          }
                          if (direct) {
                              if (need_w)
                                  conv_direct_wgrad(xp->val.data(), g, Cin, Z, Y, X, K, dilation,
                                                    Cout, wg);
                              if (need_x) {
                                  // dX is the same-padded correlation of the output gradient
                                  // with the channel-transposed, spatially flipped weights.
                                  const T* wv = wp->val.data();
                                  std::vector<T> wt(size_t(rows) * Cout);
                                  const int KK = K * K * K;
                                  for (int co = 0; co < Cout; ++co)
                                      for (int ci = 0; ci < Cin; ++ci)
                                          for (int k = 0; k < KK; ++k)
                                              wt[(size_t(ci) * Cout + co) * KK + (KK - 1 - k)] =
                                                  wv[(size_t(co) * Cin + ci) * KK + k];
                                  conv_direct_acc(g, wt.data(), Cout, Z, Y, X, K, dilation, Cin,
                                                  xg);
                              }
                              return;
                          }
                          std::vector<T> col(need_w ? size_t(rows) * size_t(zslab) * Y * X : 0);
                          std::vector<T> dcol(need_x ? size_t(rows) * size_t(zslab) * Y * X : 0);
                          for (int z0 = 0; z0 < Z; z0 += zslab) {
                              const int z1 = std::min(Z, z0 + zslab);
                              const size_t cols = size_t(z1 - z0) * Y * X;
                              if (need_w) {
                                  im2col_slab(xp->val.data(), Cin, Z, Y, X, K, dilation, z0, z1,
                                              col.data());
                                  gemm(false, true, Cout, rows, int(cols), T(1),
                                       g + size_t(z0) * Y * X, int(S), col.data(), int(cols), T(1),
                                       wg, rows);
                              }
                              if (need_x) {
                                  gemm(true, false, rows, int(cols), Cout, T(1), wp->val.data(),
                                       rows, g + size_t(z0) * Y * X, int(S), T(0), dcol.data(),
                                       int(cols));
                                  col2im_slab_add(dcol.data(), Cin, Z, Y, X, K, dilation, z0, z1, xg);
                              }
                          }
                      });
}

template <class T>
Var<T> avg_pool2(const Var<T>& x) {
    const auto& s = x.shape();
    require_shape(s.size() == 4, "avg_pool2: input must be (C,Z,Y,X)");
    const int C = s[0], Z = s[1], Y = s[2], X = s[3];
    require_shape(Z % 2 == 0 && Y % 2 == 0 && X % 2 == 0, "avg_pool2: dims must be even");
    const int Zo = Z / 2, Yo = Y / 2, Xo = X / 2;
    Tensor<T> out({C, Zo, Yo, Xo});
    const T* xv = x.val().data();
    T* ov = out.data();
    for (int c = 0; c < C; ++c)
        for (int z = 0; z < Zo; ++z)
            for (int y = 0; y < Yo; ++y)
                for (int xo = 0; xo < Xo; ++xo) {
                    T acc = 0;
                    for (int dz = 0; dz < 2; ++dz)
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx)
                                acc += xv[((size_t(c) * Z + 2 * z + dz) * Y + 2 * y + dy) * X + 2 * xo + dx];
                    ov[((size_t(c) * Zo + z) * Yo + y) * Xo + xo] = acc / T(8);
                }
    return make_op<T>(std::move(out), {x.ptr()}, [xp = x.node(), C, Z, Y, X, Zo, Yo, Xo](Node<T>* self) {
        if (!xp->requires_grad) return;
        T* xg = xp->ensure_grad().data();
        const T* g = self->grad.data();
        for (int c = 0; c < C; ++c)
            for (int z = 0; z < Zo; ++z)
                for (int y = 0; y < Yo; ++y)
                    for (int xo = 0; xo < Xo; ++xo) {
                        const T gv = g[((size_t(c) * Zo + z) * Yo + y) * Xo + xo] / T(8);
                        for (int dz = 0; dz < 2; ++dz)
                            for (int dy = 0; dy < 2; ++dy)
                                for (int dx = 0; dx < 2; ++dx)
                                    xg[((size_t(c) * Z + 2 * z + dz) * Y + 2 * y + dy) * X + 2 * xo + dx] += gv;
                    }
    });
}

template <class T>
Var<T> max_pool3_same(const Var<T>& x) {
    const auto& s = x.shape();
    require_shape(s.size() == 4, "max_pool3: input must be (C,Z,Y,X)");
    const int C = s[0], Z = s[1], Y = s[2], X = s[3];
    Tensor<T> out(s);
    std::vector<int32_t> arg(out.numel());
    const T* xv = x.val().data();
    T* ov = out.data();
    size_t o = 0;
    for (int c = 0; c < C; ++c) {
        const T* xc = xv + size_t(c) * Z * Y * X;
        for (int z = 0; z < Z; ++z)
            for (int y = 0; y < Y; ++y)
                for (int xx = 0; xx < X; ++xx, ++o) {
                    T best = -std::numeric_limits<T>::infinity();
                    int32_t bi = 0;
                    for (int dz = -1; dz <= 1; ++dz) {
                        const int iz = z + dz;
                        if (iz < 0 || iz >= Z) continue;
                        for (int dy = -1; dy <= 1; ++dy) {
                            const int iy = y + dy;
                            if (iy < 0 || iy >= Y) continue;
                            for (int dx = -1; dx <= 1; ++dx) {
                                const int ix = xx + dx;
                                if (ix < 0 || ix >= X) continue;
                                const int32_t ii = int32_t((size_t(iz) * Y + iy) * X + ix);
                                if (xc[ii] > best) {
                                    best = xc[ii];
                                    bi = ii;
                                }
                            }
                        }
                    }
                    ov[o] = best;
                    arg[o] = bi;
                }
    }
    return make_op<T>(std::move(out), {x.ptr()},
                      [xp = x.node(), arg = std::move(arg), C, Z, Y, X](Node<T>* self) {
                          if (!xp->requires_grad) return;
                          T* xg = xp->ensure_grad().data();
                          const T* g = self->grad.data();
                          const size_t plane = size_t(Z) * Y * X;
                          for (int c = 0; c < C; ++c) {
                              const T* gc = g + size_t(c) * plane;
                              T* xc = xg + size_t(c) * plane;
                              for (size_t i = 0; i < plane; ++i) xc[arg[size_t(c) * plane + i]] += gc[i];
                          }
                      });
}

namespace {
struct LinTab {
    std::vector<int> i0, i1;
    std::vector<double> w1; // weight of i1; w0 = 1 - w1
};
inline LinTab upsample_table(int n_in) {
    LinTab t;
    const int n_out = 2 * n_in;
    t.i0.resize(n_out);
    t.i1.resize(n_out);
    t.w1.resize(n_out);
    for (int o = 0; o < n_out; ++o) {
        double src = 0.5 * o - 0.25;
        double fl = std::floor(src);
        double frac = src - fl;
        int i0 = int(fl), i1 = i0 + 1;
        if (i0 < 0) i0 = 0;
        if (i1 < 0) i1 = 0;
        if (i0 > n_in - 1) i0 = n_in - 1;
        if (i1 > n_in - 1) i1 = n_in - 1;
        t.i0[o] = i0;
        t.i1[o] = i1;
        t.w1[o] = frac;
    }
    return t;
}
} // namespace

template <class T>
Var<T> upsample2_trilinear(const Var<T>& x) {
    const auto& s = x.shape();
    require_shape(s.size() == 4, "upsample2: input must be (C,Z,Y,X)");
    const int C = s[0], Z = s[1], Y = s[2], X = s[3];
    const int Zo = 2 * Z, Yo = 2 * Y, Xo = 2 * X;
    const LinTab tz = upsample_table(Z), ty = upsample_table(Y), tx = upsample_table(X);
    Tensor<T> out({C, Zo, Yo, Xo});
    const T* xv = x.val().data();
    T* ov = out.data();
    for (int c = 0; c < C; ++c) {
        const T* xc = xv + size_t(c) * Z * Y * X;
        for (int z = 0; z < Zo; ++z)
            for (int y = 0; y < Yo; ++y)
                for (int xo = 0; xo < Xo; ++xo) {
                    const double wz = tz.w1[z], wy = ty.w1[y], wx = tx.w1[xo];
                    T acc = 0;
                    for (int az = 0; az < 2; ++az)
                        for (int ay = 0; ay < 2; ++ay)
                            for (int ax = 0; ax < 2; ++ax) {
                                const int iz = az ? tz.i1[z] : tz.i0[z];
                                const int iy = ay ? ty.i1[y] : ty.i0[y];
                                const int ix = ax ? tx.i1[xo] : tx.i0[xo];
                                const double w = (az ? wz : 1 - wz) * (ay ? wy : 1 - wy) * (ax ? wx : 1 - wx);
                                acc += T(w) * xc[(size_t(iz) * Y + iy) * X + ix];
                            }
                    ov[((size_t(c) * Zo + z) * Yo + y) * Xo + xo] = acc;
                }
    }
    return make_op<T>(std::move(out), {x.ptr()},
                      [xp = x.node(), C, Z, Y, X, Zo, Yo, Xo, tz, ty, tx](Node<T>* self) {
                          if (!xp->requires_grad) return;
                          T* xg = xp->ensure_grad().data();
                          const T* g = self->grad.data();
                          for (int c = 0; c < C; ++c) {
                              T* xc = xg + size_t(c) * Z * Y * X;
                              for (int z = 0; z < Zo; ++z)
                                  for (int y = 0; y < Yo; ++y)
                                      for (int xo = 0; xo < Xo; ++xo) {
                                          const T gv = g[((size_t(c) * Zo + z) * Yo + y) * Xo + xo];
                                          const double wz = tz.w1[z], wy = ty.w1[y], wx = tx.w1[xo];
                                          for (int az = 0; az < 2; ++az)
                                              for (int ay = 0; ay < 2; ++ay)
                                                  for (int ax = 0; ax < 2; ++ax) {
                                                      const int iz = az ? tz.i1[z] : tz.i0[z];
                                                      const int iy = ay ? ty.i1[y] : ty.i0[y];
                                                      const int ix = ax ? tx.i1[xo] : tx.i0[xo];
                                                      const double w = (az ? wz : 1 - wz) * (ay ? wy : 1 - wy) *
                                                                       (ax ? wx : 1 - wx);
                                                      xc[(size_t(iz) * Y + iy) * X + ix] += T(w) * gv;
                                                  }
                                      }
                          }
                      });
}

template <class T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Tensor<T>& running_mean,
                  Tensor<T>& running_var, bool train, T momentum, T eps) {
    const auto& s = x.shape();
    require_shape(s.size() == 4, "batch_norm: input must be (C,Z,Y,X)");
    const int C = s[0];
    const size_t N = size_t(s[1]) * s[2] * s[3];
    require_shape(gamma.shape() == std::vector<int>{C} && beta.shape() == std::vector<int>{C},
                  "batch_norm: affine parameter shape");
    require_shape(running_mean.shape() == std::vector<int>{C} &&
                      running_var.shape() == std::vector<int>{C},
                  "batch_norm: running stat shape");

    Tensor<T> out(s);
    Tensor<T> mean({C}), invstd({C});
    const T* xv = x.val().data();
    T* ov = out.data();
    const T* gv = gamma.val().data();
    const T* bv = beta.val().data();
    for (int c = 0; c < C; ++c) {
        const T* xc = xv + size_t(c) * N;
        T mu, var;
        if (train) {
            T acc = 0;
#pragma omp simd reduction(+ : acc)
            for (size_t i = 0; i < N; ++i) acc += xc[i];
            mu = acc / T(N);
            T v = 0;
#pragma omp simd reduction(+ : v)
            for (size_t i = 0; i < N; ++i) {
                const T d = xc[i] - mu;
                v += d * d;
            }
            var = v / T(N);
            running_mean[c] = (T(1) - momentum) * running_mean[c] + momentum * mu;
            const T unbiased = N > 1 ? v / T(N - 1) : var;
            running_var[c] = (T(1) - momentum) * running_var[c] + momentum * unbiased;
        } else {
            mu = running_mean[c];
            var = running_var[c];
        }
        mean[c] = mu;
        const T is = T(1) / std::sqrt(var + eps);
        invstd[c] = is;
        T* oc = ov + size_t(c) * N;
        const T a = gv[c] * is;
        const T b2 = bv[c] - a * mu;
        for (size_t i = 0; i < N; ++i) oc[i] = a * xc[i] + b2;
    }

    return make_op<T>(std::move(out), {x.ptr(), gamma.ptr(), beta.ptr()},
                      [xp = x.node(), gp = gamma.node(), bp = beta.node(), mean, invstd, C, N,
                       train](Node<T>* self) {
                          const T* g = self->grad.data();
                          const T* xv2 = xp->val.data();
                          const T* gam = gp->val.data();
                          for (int c = 0; c < C; ++c) {
                              const T* gc = g + size_t(c) * N;
                              const T* xc = xv2 + size_t(c) * N;
                              const T mu = mean[c], is = invstd[c];
                              T sg = 0, sgx = 0;
#pragma omp simd reduction(+ : sg, sgx)
                              for (size_t i = 0; i < N; ++i) {
                                  sg += gc[i];
                                  sgx += gc[i] * (xc[i] - mu) * is;
                              }
                              if (bp->requires_grad) bp->ensure_grad()[c] += sg;
                              if (gp->requires_grad) gp->ensure_grad()[c] += sgx;
                              if (xp->requires_grad) {
                                  T* xg = xp->ensure_grad().data() + size_t(c) * N;
                                  const T a = gam[c] * is;
                                  if (train) {
                                      const T m1 = sg / T(N), m2 = sgx / T(N);
                                      for (size_t i = 0; i < N; ++i) {
                                          const T xh = (xc[i] - mu) * is;
                                          xg[i] += a * (gc[i] - m1 - xh * m2);
                                      }
                                  } else {
                                      for (size_t i = 0; i < N; ++i) xg[i] += a * gc[i];
                                  }
                              }
                          }
                      });
}

template <class T>
Var<T> dropout(const Var<T>& x, T p, bool active, RNG& rng) {
    require(p >= T(0) && p < T(1), "dropout: p must lie in [0,1)");
    if (!active || p == T(0)) {
        // pass-through, still a node so module structure is uniform
        Tensor<T> out = x.val();
        return make_op<T>(std::move(out), {x.ptr()}, [xp = x.node()](Node<T>* self) {
            if (xp->requires_grad) axpy(T(1), self->grad, xp->ensure_grad());
        });
    }
    Tensor<T> mask(x.shape());
    const T keep_scale = T(1) / (T(1) - p);
    for (auto& m : mask) m = (rng.uniform() < double(p)) ? T(0) : keep_scale;
    Tensor<T> out(x.shape());
    const T* xv = x.val().data();
    T* ov = out.data();
    const T* mv = mask.data();
    for (size_t i = 0; i < out.numel(); ++i) ov[i] = xv[i] * mv[i];
    return make_op<T>(std::move(out), {x.ptr()}, [xp = x.node(), mask](Node<T>* self) {
        if (!xp->requires_grad) return;
        T* xg = xp->ensure_grad().data();
        const T* g = self->grad.data();
        const T* mv2 = mask.data();
        for (size_t i = 0; i < self->grad.numel(); ++i) xg[i] += g[i] * mv2[i];
    });
}

#define EDGEREG_INSTANTIATE(T)                                                                     \
    template Var<T> conv3d<T>(const Var<T>&, const Var<T>&, const Var<T>&, int);                   \
    template Var<T> avg_pool2<T>(const Var<T>&);                                                   \
    template Var<T> max_pool3_same<T>(const Var<T>&);                                              \
    template Var<T> upsample2_trilinear<T>(const Var<T>&);                                         \
    template Var<T> batch_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, Tensor<T>&,         \
                                  Tensor<T>&, bool, T, T);                                         \
    template Var<T> dropout<T>(const Var<T>&, T, bool, RNG&);

EDGEREG_INSTANTIATE(float)
EDGEREG_INSTANTIATE(double)
#undef EDGEREG_INSTANTIATE

} // namespace edgereg
