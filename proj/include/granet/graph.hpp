#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "granet/core.hpp"
#include "granet/tensor.hpp"

namespace granet {

namespace detail {

// Unfold one (C,H,W) sample into a (C*kh*kw) x (H*W) matrix, zero padding
// (k-1)/2 so a GEMM against it yields a same-size convolution.
template <typename T>
void im2col(const T* x, int C, int H, int W, int kh, int kw, T* col) {
    const int pad_h = (kh - 1) / 2;
    const int pad_w = (kw - 1) / 2;
    const std::int64_t HW = static_cast<std::int64_t>(H) * W;
    std::int64_t row = 0;
    for (int ci = 0; ci < C; ++ci) {
        for (int r = 0; r < kh; ++r) {
            for (int s = 0; s < kw; ++s, ++row) {
                T* dst = col + row * HW;
                const int off = s - pad_w; // source col for destination col 0
                const int w0 = std::max(0, -off);
                const int w1 = std::min(W, W - off);
                for (int hh = 0; hh < H; ++hh) {
                    T* d = dst + static_cast<std::int64_t>(hh) * W;
                    const int sh = hh + r - pad_h;
                    if (sh < 0 || sh >= H) {
                        std::fill(d, d + W, T(0));
                        continue;
                    }
                    const T* src = x + (static_cast<std::int64_t>(ci) * H + sh) * W;
                    if (w0 > 0) std::fill(d, d + w0, T(0));
                    if (w1 > w0) std::copy(src + w0 + off, src + w1 + off, d + w0);
                    if (w1 < W) std::fill(d + std::max(w0, w1), d + W, T(0));
                }
            }
        }
    }
}

// Scatter-add transpose of im2col: x += fold(col).
template <typename T>
void col2im_add(const T* col, int C, int H, int W, int kh, int kw, T* x) {
    const int pad_h = (kh - 1) / 2;
    const int pad_w = (kw - 1) / 2;
    const std::int64_t HW = static_cast<std::int64_t>(H) * W;
    std::int64_t row = 0;
    for (int ci = 0; ci < C; ++ci) {
        for (int r = 0; r < kh; ++r) {
            for (int s = 0; s < kw; ++s, ++row) {
                const T* srcrow = col + row * HW;
                const int off = s - pad_w;
                const int w0 = std::max(0, -off);
                const int w1 = std::min(W, W - off);
                for (int hh = 0; hh < H; ++hh) {
                    const int sh = hh + r - pad_h;
                    if (sh < 0 || sh >= H) continue;
                    T* dst = x + (static_cast<std::int64_t>(ci) * H + sh) * W + off;
                    const T* src = srcrow + static_cast<std::int64_t>(hh) * W;
                    for (int ww = w0; ww < w1; ++ww) dst[ww] += src[ww];
                }
            }
        }
    }
}

// Mirror-fold an index into [0, n); the boundary sample is not repeated.
inline int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * n - 2;
    int m = i % period;
    if (m < 0) m += period;
    return m < n ? m : period - m;
}

} // namespace detail

/// Placement of one assembled part: sample index and top-left corner.
struct RegionPlacement {
    int n = 0;
    int y = 0;
    int x = 0;
};

/// Recorded-graph reverse-mode differentiation over Tensor<T>.
///
/// One Graph instance represents one forward pass: operations append records
/// in execution order (so topological order holds by construction), and
/// backward() replays them once, in reverse. Leaf gradients accumulate across
/// backward() calls; gradients of operation outputs are transient per call.
template <typename T>
class Graph {
public:
    explicit Graph(bool recording = true) : recording_(recording) {}

    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    bool recording() const { return recording_; }

    /// When enabled, relu/maxpool/abs forward passes fold their branch
    /// decisions into a hash, letting gradient checks detect that a finite
    /// difference stepped across a kink.
    void set_track_branches(bool on) { track_branches_ = on; }
    std::uint64_t branch_signature() const { return branch_sig_; }
    void reset_branch_signature() { branch_sig_ = 0xcbf29ce484222325ULL; }

    Tensor<T> leaf(Shape s, bool requires_grad = false, T fill = T(0)) {
        return make_leaf<T>(s, requires_grad, fill);
    }
    Tensor<T> leaf(Shape s, const std::vector<T>& values, bool requires_grad = false) {
        return make_leaf<T>(s, values, requires_grad);
    }

    // ---- primitive operations -------------------------------------------

    Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
        const int co = weight.shape.n, ci = weight.shape.c;
        const int kh = weight.shape.h, kw = weight.shape.w;
        if ((kh != 1 && kh != 3) || (kw != 1 && kw != 3))
            throw ShapeError("conv2d: kernel must be 1x1 or 3x3, got " +
                             std::to_string(kh) + "x" + std::to_string(kw));
        if (x.shape.c != ci)
            throw ShapeError("conv2d: input channels " + std::to_string(x.shape.c) +
                             " != weight in-channels " + std::to_string(ci));
        if (!(bias.shape == Shape{1, co, 1, 1}))
            throw ShapeError("conv2d: bias shape " + bias.shape.str() + " != (1," +
                             std::to_string(co) + ",1,1)");
        const int N = x.shape.n, H = x.shape.h, W = x.shape.w;
        const std::int64_t HW = static_cast<std::int64_t>(H) * W;
        const int CKK = ci * kh * kw;

        Tensor<T> out = output({N, co, H, W}, {&x, &weight, &bias});
        std::vector<T> col(static_cast<std::size_t>(CKK) * HW);
        using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
        Eigen::Map<const Mat> wmat(weight.ptr(), co, CKK);
        for (int ni = 0; ni < N; ++ni) {
            detail::im2col(x.ptr() + ni * ci * HW, ci, H, W, kh, kw, col.data());
            Eigen::Map<const Mat> cmat(col.data(), CKK, HW);
            Eigen::Map<Mat> omat(out.ptr() + ni * co * HW, co, HW);
            omat.noalias() = wmat * cmat;
            for (int oc = 0; oc < co; ++oc)
                omat.row(oc).array() += (*bias.data)[oc];
        }

        record("conv2d", {&x, &weight, &bias}, out, [x, weight, bias, out, N, co, ci, kh, kw, H, W, HW, CKK]() {
            using M = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
            std::vector<T> col(static_cast<std::size_t>(CKK) * HW);
            std::vector<T> colg;
            if (x.grad) colg.resize(static_cast<std::size_t>(CKK) * HW);
            Eigen::Map<const M> wmat(weight.ptr(), co, CKK);
            for (int ni = 0; ni < N; ++ni) {
                Eigen::Map<const M> gout(out.gptr() + ni * co * HW, co, HW);
                if (weight.grad) {
                    detail::im2col(x.ptr() + ni * ci * HW, ci, H, W, kh, kw, col.data());
                    Eigen::Map<const M> cmat(col.data(), CKK, HW);
                    Eigen::Map<M> gw(weight.grad->data(), co, CKK);
                    gw.noalias() += gout * cmat.transpose();
                }
                if (bias.grad) {
                    // plain left-to-right sum: Eigen's vectorized redux peels
                    // by pointer alignment, which varies with heap layout
                    const T* gp = out.grad->data() + ni * co * HW;
                    for (int oc = 0; oc < co; ++oc) {
                        T acc = T(0);
                        for (std::int64_t k = 0; k < HW; ++k) acc += gp[oc * HW + k];
                        (*bias.grad)[oc] += acc;
                    }
                }
                if (x.grad) {
                    Eigen::Map<M> gcol(colg.data(), CKK, HW);
                    gcol.noalias() = wmat.transpose() * gout;
                    detail::col2im_add(colg.data(), ci, H, W, kh, kw, x.grad->data() + ni * ci * HW);
                }
            }
        });
        return out;
    }

    Tensor<T> relu(const Tensor<T>& x) {
        Tensor<T> out = output(x.shape, {&x});
        const T* px = x.ptr();
        T* po = out.ptr();
        const std::int64_t n = x.numel();
        for (std::int64_t i = 0; i < n; ++i) po[i] = px[i] > T(0) ? px[i] : T(0);
        if (track_branches_)
            for (std::int64_t i = 0; i < n; ++i) mix_branch(px[i] > T(0) ? 0x9e3779b9u ^ i : i);
        record("relu", {&x}, out, [x, out, n]() {
            if (!x.grad) return;
            const T* px = x.ptr();
            const T* g = out.gptr();
            T* gx = x.grad->data();
            for (std::int64_t i = 0; i < n; ++i)
                if (px[i] > T(0)) gx[i] += g[i];
        });
        return out;
    }

    std::pair<Tensor<T>, PoolIndices> maxpool2d(const Tensor<T>& x) {
        const int N = x.shape.n, C = x.shape.c, H = x.shape.h, W = x.shape.w;
        if (H % 2 != 0 || W % 2 != 0)
            throw ShapeError("maxpool2d: spatial dims " + std::to_string(H) + "x" +
                             std::to_string(W) + " must be even; pad the input first");
        const int Ho = H / 2, Wo = W / 2;
        Tensor<T> out = output({N, C, Ho, Wo}, {&x});
        PoolIndices indices;
        indices.shape = out.shape;
        indices.idx.resize(static_cast<std::size_t>(out.numel()));
        const T* px = x.ptr();
        T* po = out.ptr();
        std::int64_t o = 0;
        for (int ni = 0; ni < N; ++ni) {
            for (int ci = 0; ci < C; ++ci) {
                const T* plane = px + (static_cast<std::int64_t>(ni) * C + ci) * H * W;
                for (int ph = 0; ph < Ho; ++ph) {
                    for (int pw = 0; pw < Wo; ++pw, ++o) {
                        // first maximum in row-major window scan wins ties
                        T best = plane[(2 * ph) * W + 2 * pw];
                        int best_off = (2 * ph) * W + 2 * pw;
                        for (int dy = 0; dy < 2; ++dy) {
                            for (int dx = 0; dx < 2; ++dx) {
                                const int off = (2 * ph + dy) * W + (2 * pw + dx);
                                if (plane[off] > best) {
                                    best = plane[off];
                                    best_off = off;
                                }
                            }
                        }
                        po[o] = best;
                        indices.idx[static_cast<std::size_t>(o)] = best_off;
                        if (track_branches_) mix_branch(static_cast<std::uint64_t>(best_off) * 0x9e3779b97f4a7c15ULL + o);
                    }
                }
            }
        }
        record("maxpool2d", {&x}, out, [x, out, indices, N, C, H, W, Ho, Wo]() {
            if (!x.grad) return;
            const T* g = out.gptr();
            T* gx = x.grad->data();
            std::int64_t o = 0;
            for (int ni = 0; ni < N; ++ni)
                for (int ci = 0; ci < C; ++ci) {
                    T* gplane = gx + (static_cast<std::int64_t>(ni) * C + ci) * H * W;
                    for (std::int64_t k = 0; k < static_cast<std::int64_t>(Ho) * Wo; ++k, ++o)
                        gplane[indices.idx[static_cast<std::size_t>(o)]] += g[o];
                }
        });
        return {out, indices};
    }

    Tensor<T> maxunpool2d(const Tensor<T>& x, const PoolIndices& indices, int out_h, int out_w) {
        if (!(x.shape == indices.shape))
            throw ShapeError("maxunpool2d: input shape " + x.shape.str() +
                             " != indices shape " + indices.shape.str());
        const int N = x.shape.n, C = x.shape.c, Hi = x.shape.h, Wi = x.shape.w;
        if (out_h != 2 * Hi || out_w != 2 * Wi)
            throw ShapeError("maxunpool2d: output size " + std::to_string(out_h) + "x" +
                             std::to_string(out_w) + " must be exactly 2x the input " +
                             std::to_string(Hi) + "x" + std::to_string(Wi));
        // validate offsets against their source window before touching memory
        std::int64_t o = 0;
        for (int ni = 0; ni < N; ++ni)
            for (int ci = 0; ci < C; ++ci)
                for (int ph = 0; ph < Hi; ++ph)
                    for (int pw = 0; pw < Wi; ++pw, ++o) {
                        const std::int32_t off = indices.idx[static_cast<std::size_t>(o)];
                        const int sh = off / out_w, sw = off % out_w;
                        if (off < 0 || sh < 2 * ph || sh > 2 * ph + 1 || sw < 2 * pw || sw > 2 * pw + 1)
                            throw Error("maxunpool2d: corrupt pool index " + std::to_string(off) +
                                        " outside its 2x2 window at pooled position (" +
                                        std::to_string(ph) + "," + std::to_string(pw) + ")");
                    }

        Tensor<T> out = output({N, C, out_h, out_w}, {&x});
        std::fill(out.data->begin(), out.data->end(), T(0));
        const T* px = x.ptr();
        T* po = out.ptr();
        o = 0;
        const std::int64_t HWo = static_cast<std::int64_t>(out_h) * out_w;
        for (int ni = 0; ni < N; ++ni)
            for (int ci = 0; ci < C; ++ci) {
                T* plane = po + (static_cast<std::int64_t>(ni) * C + ci) * HWo;
                for (std::int64_t k = 0; k < static_cast<std::int64_t>(Hi) * Wi; ++k, ++o)
                    plane[indices.idx[static_cast<std::size_t>(o)]] = px[o];
            }
        record("maxunpool2d", {&x}, out, [x, out, indices, N, C, Hi, Wi, HWo]() {
            if (!x.grad) return;
            const T* g = out.gptr();
            T* gx = x.grad->data();
            std::int64_t o = 0;
            for (int ni = 0; ni < N; ++ni)
                for (int ci = 0; ci < C; ++ci) {
                    const T* gplane = g + (static_cast<std::int64_t>(ni) * C + ci) * HWo;
                    for (std::int64_t k = 0; k < static_cast<std::int64_t>(Hi) * Wi; ++k, ++o)
                        gx[o] += gplane[indices.idx[static_cast<std::size_t>(o)]];
                }
        });
        return out;
    }

    /// Row-wise softmax of a (1,1,rows,cols) matrix, max-subtracted per row.
    Tensor<T> softmax_rows(const Tensor<T>& x) {
        require_matrix(x, "softmax_rows");
        const int R = x.shape.h, C = x.shape.w;
        Tensor<T> out = output(x.shape, {&x});
        const T* px = x.ptr();
        T* po = out.ptr();
        for (int r = 0; r < R; ++r) {
            const T* row = px + static_cast<std::int64_t>(r) * C;
            T* orow = po + static_cast<std::int64_t>(r) * C;
            T m = row[0];
            for (int j = 1; j < C; ++j) m = std::max(m, row[j]);
            T sum = T(0);
            for (int j = 0; j < C; ++j) {
                orow[j] = std::exp(row[j] - m);
                sum += orow[j];
            }
            const T inv = T(1) / sum;
            for (int j = 0; j < C; ++j) orow[j] *= inv;
        }
        if (track_branches_) {
            // a saturated row behaves like a hard max: selecting a different
            // winner under a perturbation is a branch change
            for (int r = 0; r < R; ++r) {
                const T* row = px + static_cast<std::int64_t>(r) * C;
                int arg = 0;
                T m1 = row[0], m2 = -std::numeric_limits<T>::infinity();
                for (int j = 1; j < C; ++j) {
                    if (row[j] > m1) {
                        m2 = m1;
                        m1 = row[j];
                        arg = j;
                    } else if (row[j] > m2) {
                        m2 = row[j];
                    }
                }
                if (C > 1 && m1 - m2 > T(25))
                    mix_branch(0x5bd1e995u + static_cast<std::uint64_t>(r) * 131u + arg);
            }
        }
        record("softmax_rows", {&x}, out, [x, out, R, C]() {
            if (!x.grad) return;
            const T* y = out.ptr();
            const T* g = out.gptr();
            T* gx = x.grad->data();
            for (int r = 0; r < R; ++r) {
                const std::int64_t base = static_cast<std::int64_t>(r) * C;
                T dot = T(0);
                for (int j = 0; j < C; ++j) dot += g[base + j] * y[base + j];
                for (int j = 0; j < C; ++j) gx[base + j] += y[base + j] * (g[base + j] - dot);
            }
        });
        return out;
    }

    /// (1,1,m,k) x (1,1,k,n) -> (1,1,m,n)
    Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
        require_matrix(a, "matmul lhs");
        require_matrix(b, "matmul rhs");
        if (a.shape.w != b.shape.h)
            throw ShapeError("matmul: inner dims differ, lhs cols " + std::to_string(a.shape.w) +
                             " vs rhs rows " + std::to_string(b.shape.h));
        const int M = a.shape.h, K = a.shape.w, N = b.shape.w;
        Tensor<T> out = output({1, 1, M, N}, {&a, &b});
        using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
        Eigen::Map<const Mat> ma(a.ptr(), M, K), mb(b.ptr(), K, N);
        Eigen::Map<Mat> mo(out.ptr(), M, N);
        mo.noalias() = ma * mb;
        record("matmul", {&a, &b}, out, [a, b, out, M, K, N]() {
            using M2 = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
            Eigen::Map<const M2> ma(a.ptr(), M, K), mb(b.ptr(), K, N), g(out.gptr(), M, N);
            if (a.grad) {
                Eigen::Map<M2> ga(a.grad->data(), M, K);
                ga.noalias() += g * mb.transpose();
            }
            if (b.grad) {
                Eigen::Map<M2> gb(b.grad->data(), K, N);
                gb.noalias() += ma.transpose() * g;
            }
        });
        return out;
    }

    Tensor<T> transpose2d(const Tensor<T>& x) {
        require_matrix(x, "transpose2d");
        const int R = x.shape.h, C = x.shape.w;
        Tensor<T> out = output({1, 1, C, R}, {&x});
        const T* px = x.ptr();
        T* po = out.ptr();
        for (int r = 0; r < R; ++r)
            for (int c = 0; c < C; ++c)
                po[static_cast<std::int64_t>(c) * R + r] = px[static_cast<std::int64_t>(r) * C + c];
        record("transpose2d", {&x}, out, [x, out, R, C]() {
            if (!x.grad) return;
            const T* g = out.gptr();
            T* gx = x.grad->data();
            for (int r = 0; r < R; ++r)
                for (int c = 0; c < C; ++c)
                    gx[static_cast<std::int64_t>(r) * C + c] += g[static_cast<std::int64_t>(c) * R + r];
        });
        return out;
    }

    Tensor<T> reshape(const Tensor<T>& x, Shape s) {
        if (s.numel() != x.numel())
            throw ShapeError("reshape: element count " + std::to_string(x.numel()) +
                             " cannot fill " + s.str());
        Tensor<T> out = output(s, {&x});
        std::copy(x.data->begin(), x.data->end(), out.data->begin());
        record("reshape", {&x}, out, [x, out]() {
            if (!x.grad) return;
            const T* g = out.gptr();
            T* gx = x.grad->data();
            const std::int64_t n = x.numel();
            for (std::int64_t i = 0; i < n; ++i) gx[i] += g[i];
        });
        return out;
    }

    Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return binary_ew("add", a, b, false); }
    Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return binary_ew("sub", a, b, true); }

    Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
        require_same_shape(a, b, "mul");
        Tensor<T> out = output(a.shape, {&a, &b});
        const std::int64_t n = a.numel();
        for (std::int64_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] * (*b.data)[i];
        record("mul", {&a, &b}, out, [a, b, out, n]() {
            const T* g = out.gptr();
            if (a.grad)
                for (std::int64_t i = 0; i < n; ++i) (*a.grad)[i] += g[i] * (*b.data)[i];
            if (b.grad)
                for (std::int64_t i = 0; i < n; ++i) (*b.grad)[i] += g[i] * (*a.data)[i];
        });
        return out;
    }

    Tensor<T> scalar_scale(const Tensor<T>& x, T s) {
        Tensor<T> out = output(x.shape, {&x});
        const std::int64_t n = x.numel();
        for (std::int64_t i = 0; i < n; ++i) (*out.data)[i] = (*x.data)[i] * s;
        record("scalar_scale", {&x}, out, [x, out, s, n]() {
            if (!x.grad) return;
            const T* g = out.gptr();
            for (std::int64_t i = 0; i < n; ++i) (*x.grad)[i] += g[i] * s;
        });
        return out;
    }

    /// Elementwise |x|; the subgradient at 0 is 0.
    Tensor<T> abs_val(const Tensor<T>& x) {
        Tensor<T> out = output(x.shape, {&x});
        const std::int64_t n = x.numel();
        for (std::int64_t i = 0; i < n; ++i) (*out.data)[i] = std::abs((*x.data)[i]);
        if (track_branches_)
            for (std::int64_t i = 0; i < n; ++i)
                mix_branch(((*x.data)[i] > T(0) ? 2u : ((*x.data)[i] < T(0) ? 1u : 0u)) + 3u * i);
        record("abs", {&x}, out, [x, out, n]() {
            if (!x.grad) return;
            const T* g = out.gptr();
            for (std::int64_t i = 0; i < n; ++i) {
                const T v = (*x.data)[i];
                if (v > T(0))
                    (*x.grad)[i] += g[i];
                else if (v < T(0))
                    (*x.grad)[i] -= g[i];
            }
        });
        return out;
    }

    /// Mean over every element -> (1,1,1,1).
    Tensor<T> mean_all(const Tensor<T>& x) {
        Tensor<T> out = output({1, 1, 1, 1}, {&x});
        const std::int64_t n = x.numel();
        T acc = T(0);
        for (std::int64_t i = 0; i < n; ++i) acc += (*x.data)[i];
        (*out.data)[0] = acc / static_cast<T>(n);
        record("mean_all", {&x}, out, [x, out, n]() {
            if (!x.grad) return;
            const T g = (*out.grad)[0] / static_cast<T>(n);
            for (std::int64_t i = 0; i < n; ++i) (*x.grad)[i] += g;
        });
        return out;
    }

    Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
        if (parts.empty()) throw ShapeError("concat_channels: no inputs");
        const Shape s0 = parts[0].shape;
        int ctot = 0;
        for (const auto& p : parts) {
            if (p.shape.n != s0.n || p.shape.h != s0.h || p.shape.w != s0.w)
                throw ShapeError("concat_channels: part shape " + p.shape.str() +
                                 " does not match leading part " + s0.str() +
                                 " on (n,h,w)");
            ctot += p.shape.c;
        }
        std::vector<const Tensor<T>*> ins;
        for (const auto& p : parts) ins.push_back(&p);
        Tensor<T> out = output({s0.n, ctot, s0.h, s0.w}, ins);
        const std::int64_t HW = static_cast<std::int64_t>(s0.h) * s0.w;
        for (int ni = 0; ni < s0.n; ++ni) {
            std::int64_t coff = 0;
            for (const auto& p : parts) {
                const std::int64_t len = static_cast<std::int64_t>(p.shape.c) * HW;
                std::copy(p.ptr() + ni * len, p.ptr() + (ni + 1) * len,
                          out.ptr() + (static_cast<std::int64_t>(ni) * ctot + coff) * HW);
                coff += p.shape.c;
            }
        }
        std::vector<Tensor<T>> held = parts;
        record("concat_channels", ins, out, [held, out, s0, ctot, HW]() {
            const T* g = out.gptr();
            for (int ni = 0; ni < s0.n; ++ni) {
                std::int64_t coff = 0;
                for (const auto& p : held) {
                    const std::int64_t len = static_cast<std::int64_t>(p.shape.c) * HW;
                    if (p.grad) {
                        const T* gsrc = g + (static_cast<std::int64_t>(ni) * ctot + coff) * HW;
                        T* gdst = p.grad->data() + ni * len;
                        for (std::int64_t i = 0; i < len; ++i) gdst[i] += gsrc[i];
                    }
                    coff += p.shape.c;
                }
            }
        });
        return out;
    }

    Tensor<T> slice_channels(const Tensor<T>& x, int c0, int count) {
        if (c0 < 0 || count < 1 || c0 + count > x.shape.c)
            throw ShapeError("slice_channels: range [" + std::to_string(c0) + "," +
                             std::to_string(c0 + count) + ") outside " +
                             std::to_string(x.shape.c) + " channels");
        const int N = x.shape.n, C = x.shape.c;
        const std::int64_t HW = static_cast<std::int64_t>(x.shape.h) * x.shape.w;
        Tensor<T> out = output({N, count, x.shape.h, x.shape.w}, {&x});
        for (int ni = 0; ni < N; ++ni)
            std::copy(x.ptr() + (static_cast<std::int64_t>(ni) * C + c0) * HW,
                      x.ptr() + (static_cast<std::int64_t>(ni) * C + c0 + count) * HW,
                      out.ptr() + static_cast<std::int64_t>(ni) * count * HW);
        record("slice_channels", {&x}, out, [x, out, c0, count, N, C, HW]() {
            if (!x.grad) return;
            const T* g = out.gptr();
            for (int ni = 0; ni < N; ++ni) {
                T* gdst = x.grad->data() + (static_cast<std::int64_t>(ni) * C + c0) * HW;
                const T* gsrc = g + static_cast<std::int64_t>(ni) * count * HW;
                for (std::int64_t i = 0; i < count * HW; ++i) gdst[i] += gsrc[i];
            }
        });
        return out;
    }

    /// Extract the (h,w) rectangle at (y0,x0) of sample ni -> (1,C,h,w).
    Tensor<T> crop_region(const Tensor<T>& x, int ni, int y0, int x0, int h, int w) {
        if (ni < 0 || ni >= x.shape.n)
            throw ShapeError("crop_region: sample " + std::to_string(ni) + " outside batch " +
                             std::to_string(x.shape.n));
        if (y0 < 0 || x0 < 0 || h < 1 || w < 1 || y0 + h > x.shape.h || x0 + w > x.shape.w)
            throw ShapeError("crop_region: rect (" + std::to_string(y0) + "," + std::to_string(x0) +
                             ")+" + std::to_string(h) + "x" + std::to_string(w) +
                             " outside plane " + std::to_string(x.shape.h) + "x" +
                             std::to_string(x.shape.w));
        const int C = x.shape.c, H = x.shape.h, W = x.shape.w;
        Tensor<T> out = output({1, C, h, w}, {&x});
        for (int ci = 0; ci < C; ++ci) {
            const T* src = x.ptr() + ((static_cast<std::int64_t>(ni) * C + ci) * H + y0) * W + x0;
            T* dst = out.ptr() + static_cast<std::int64_t>(ci) * h * w;
            for (int r = 0; r < h; ++r)
                std::copy(src + static_cast<std::int64_t>(r) * W, src + static_cast<std::int64_t>(r) * W + w,
                          dst + static_cast<std::int64_t>(r) * w);
        }
        record("crop_region", {&x}, out, [x, out, ni, y0, x0, h, w, C, H, W]() {
            if (!x.grad) return;
            const T* g = out.gptr();
            for (int ci = 0; ci < C; ++ci) {
                T* dst = x.grad->data() + ((static_cast<std::int64_t>(ni) * C + ci) * H + y0) * W + x0;
                const T* src = g + static_cast<std::int64_t>(ci) * h * w;
                for (int r = 0; r < h; ++r)
                    for (int cc = 0; cc < w; ++cc)
                        dst[static_cast<std::int64_t>(r) * W + cc] += src[static_cast<std::int64_t>(r) * w + cc];
            }
        });
        return out;
    }

    /// Inverse of per-region cropping: write each (1,C,h,w) part at its
    /// placement. The parts must tile the output exactly once.
    Tensor<T> assemble_regions(const std::vector<Tensor<T>>& parts,
                               const std::vector<RegionPlacement>& places, Shape out_shape) {
        if (parts.size() != places.size())
            throw ShapeError("assemble_regions: " + std::to_string(parts.size()) + " parts vs " +
                             std::to_string(places.size()) + " placements");
        const int C = out_shape.c, H = out_shape.h, W = out_shape.w;
        std::vector<std::uint8_t> covered(static_cast<std::size_t>(out_shape.n) * H * W, 0);
        for (std::size_t k = 0; k < parts.size(); ++k) {
            const auto& p = parts[k];
            const auto& at = places[k];
            if (p.shape.n != 1 || p.shape.c != C)
                throw ShapeError("assemble_regions: part " + std::to_string(k) + " shape " +
                                 p.shape.str() + " must be (1," + std::to_string(C) + ",h,w)");
            if (at.n < 0 || at.n >= out_shape.n || at.y < 0 || at.x < 0 ||
                at.y + p.shape.h > H || at.x + p.shape.w > W)
                throw ShapeError("assemble_regions: part " + std::to_string(k) + " placement outside output");
            for (int r = 0; r < p.shape.h; ++r)
                for (int cc = 0; cc < p.shape.w; ++cc) {
                    auto& flag = covered[(static_cast<std::size_t>(at.n) * H + at.y + r) * W + at.x + cc];
                    if (flag) throw ShapeError("assemble_regions: overlapping parts at sample " +
                                               std::to_string(at.n));
                    flag = 1;
                }
        }
        for (auto f : covered)
            if (!f) throw ShapeError("assemble_regions: parts leave uncovered output positions");

        std::vector<const Tensor<T>*> ins;
        for (const auto& p : parts) ins.push_back(&p);
        Tensor<T> out = output(out_shape, ins);
        for (std::size_t k = 0; k < parts.size(); ++k) {
            const auto& p = parts[k];
            const auto& at = places[k];
            for (int ci = 0; ci < C; ++ci) {
                const T* src = p.ptr() + static_cast<std::int64_t>(ci) * p.shape.h * p.shape.w;
                T* dst = out.ptr() + ((static_cast<std::int64_t>(at.n) * C + ci) * H + at.y) * W + at.x;
                for (int r = 0; r < p.shape.h; ++r)
                    std::copy(src + static_cast<std::int64_t>(r) * p.shape.w,
                              src + static_cast<std::int64_t>(r + 1) * p.shape.w,
                              dst + static_cast<std::int64_t>(r) * W);
            }
        }
        std::vector<Tensor<T>> held = parts;
        record("assemble_regions", ins, out, [held, places, out, C, H, W]() {
            const T* g = out.gptr();
            for (std::size_t k = 0; k < held.size(); ++k) {
                const auto& p = held[k];
                if (!p.grad) continue;
                const auto& at = places[k];
                for (int ci = 0; ci < C; ++ci) {
                    T* dst = p.grad->data() + static_cast<std::int64_t>(ci) * p.shape.h * p.shape.w;
                    const T* src = g + ((static_cast<std::int64_t>(at.n) * C + ci) * H + at.y) * W + at.x;
                    for (int r = 0; r < p.shape.h; ++r)
                        for (int cc = 0; cc < p.shape.w; ++cc)
                            dst[static_cast<std::int64_t>(r) * p.shape.w + cc] +=
                                src[static_cast<std::int64_t>(r) * W + cc];
                }
            }
        });
        return out;
    }

    /// Mirror-pad on the right/bottom only, up to (out_h, out_w).
    Tensor<T> reflect_pad_rb(const Tensor<T>& x, int out_h, int out_w) {
        if (out_h < x.shape.h || out_w < x.shape.w)
            throw ShapeError("reflect_pad_rb: target " + std::to_string(out_h) + "x" +
                             std::to_string(out_w) + " smaller than input " +
                             std::to_string(x.shape.h) + "x" + std::to_string(x.shape.w));
        const int N = x.shape.n, C = x.shape.c, H = x.shape.h, W = x.shape.w;
        Tensor<T> out = output({N, C, out_h, out_w}, {&x});
        for (int ni = 0; ni < N; ++ni)
            for (int ci = 0; ci < C; ++ci) {
                const T* src = x.ptr() + (static_cast<std::int64_t>(ni) * C + ci) * H * W;
                T* dst = out.ptr() + (static_cast<std::int64_t>(ni) * C + ci) * out_h * out_w;
                for (int r = 0; r < out_h; ++r) {
                    const int sr = detail::reflect_index(r, H);
                    for (int cc = 0; cc < out_w; ++cc)
                        dst[static_cast<std::int64_t>(r) * out_w + cc] =
                            src[static_cast<std::int64_t>(sr) * W + detail::reflect_index(cc, W)];
                }
            }
        record("reflect_pad_rb", {&x}, out, [x, out, N, C, H, W, out_h, out_w]() {
            if (!x.grad) return;
            const T* g = out.gptr();
            for (int ni = 0; ni < N; ++ni)
                for (int ci = 0; ci < C; ++ci) {
                    T* dst = x.grad->data() + (static_cast<std::int64_t>(ni) * C + ci) * H * W;
                    const T* src = g + (static_cast<std::int64_t>(ni) * C + ci) * out_h * out_w;
                    for (int r = 0; r < out_h; ++r) {
                        const int sr = detail::reflect_index(r, H);
                        for (int cc = 0; cc < out_w; ++cc)
                            dst[static_cast<std::int64_t>(sr) * W + detail::reflect_index(cc, W)] +=
                                src[static_cast<std::int64_t>(r) * out_w + cc];
                    }
                }
        });
        return out;
    }

    /// Keep the top-left (h, w) window of every (n, c) plane.
    Tensor<T> crop_tl(const Tensor<T>& x, int h, int w) {
        if (h < 1 || w < 1 || h > x.shape.h || w > x.shape.w)
            throw ShapeError("crop_tl: size " + std::to_string(h) + "x" + std::to_string(w) +
                             " outside input " + std::to_string(x.shape.h) + "x" +
                             std::to_string(x.shape.w));
        const int N = x.shape.n, C = x.shape.c, H = x.shape.h, W = x.shape.w;
        Tensor<T> out = output({N, C, h, w}, {&x});
        for (int ni = 0; ni < N; ++ni)
            for (int ci = 0; ci < C; ++ci) {
                const T* src = x.ptr() + (static_cast<std::int64_t>(ni) * C + ci) * H * W;
                T* dst = out.ptr() + (static_cast<std::int64_t>(ni) * C + ci) * h * w;
                for (int r = 0; r < h; ++r)
                    std::copy(src + static_cast<std::int64_t>(r) * W,
                              src + static_cast<std::int64_t>(r) * W + w,
                              dst + static_cast<std::int64_t>(r) * w);
            }
        record("crop_tl", {&x}, out, [x, out, N, C, H, W, h, w]() {
            if (!x.grad) return;
            const T* g = out.gptr();
            for (int ni = 0; ni < N; ++ni)
                for (int ci = 0; ci < C; ++ci) {
                    T* dst = x.grad->data() + (static_cast<std::int64_t>(ni) * C + ci) * H * W;
                    const T* src = g + (static_cast<std::int64_t>(ni) * C + ci) * h * w;
                    for (int r = 0; r < h; ++r)
                        for (int cc = 0; cc < w; ++cc)
                            dst[static_cast<std::int64_t>(r) * W + cc] += src[static_cast<std::int64_t>(r) * w + cc];
                }
        });
        return out;
    }

    // ---- backward --------------------------------------------------------

    /// Reverse sweep from a scalar loss. Gradients of tensors produced by
    /// this graph are recomputed from scratch; leaf gradients accumulate.
    void backward(const Tensor<T>& loss) {
        if (loss.numel() != 1)
            throw ShapeError("backward: loss must be scalar, got shape " + loss.shape.str());
        if (!loss.grad) return; // nothing upstream requires gradients
        for (auto& r : records_)
            if (r.out_grad) std::fill(r.out_grad->begin(), r.out_grad->end(), T(0));
        (*loss.grad)[0] += T(1);
        for (auto it = records_.rbegin(); it != records_.rend(); ++it)
            it->fn();
    }

    // ---- introspection (tests, diagnostics) ------------------------------

    struct RecordInfo {
        const char* op;
        const void* out;
        std::vector<const void*> inputs;
    };

    const std::vector<RecordInfo>& record_info() const { return info_; }
    std::size_t num_records() const { return records_.size(); }

private:
    struct Record {
        std::function<void()> fn;
        std::shared_ptr<std::vector<T>> out_grad;
    };

    static void require_matrix(const Tensor<T>& x, const char* who) {
        if (x.shape.n != 1 || x.shape.c != 1)
            throw ShapeError(std::string(who) + ": expected a (1,1,rows,cols) matrix, got " +
                             x.shape.str());
    }

    static void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* who) {
        if (!(a.shape == b.shape))
            throw ShapeError(std::string(who) + ": shapes differ, " + a.shape.str() + " vs " +
                             b.shape.str());
    }

    Tensor<T> binary_ew(const char* op, const Tensor<T>& a, const Tensor<T>& b, bool negate_b) {
        require_same_shape(a, b, op);
        Tensor<T> out = output(a.shape, {&a, &b});
        const std::int64_t n = a.numel();
        if (negate_b)
            for (std::int64_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] - (*b.data)[i];
        else
            for (std::int64_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] + (*b.data)[i];
        record(op, {&a, &b}, out, [a, b, out, n, negate_b]() {
            const T* g = out.gptr();
            if (a.grad)
                for (std::int64_t i = 0; i < n; ++i) (*a.grad)[i] += g[i];
            if (b.grad) {
                if (negate_b)
                    for (std::int64_t i = 0; i < n; ++i) (*b.grad)[i] -= g[i];
                else
                    for (std::int64_t i = 0; i < n; ++i) (*b.grad)[i] += g[i];
            }
        });
        return out;
    }

    bool wants_grad(const std::vector<const Tensor<T>*>& ins) const {
        if (!recording_) return false;
        for (const auto* t : ins)
            if (t->requires_grad) return true;
        return false;
    }

    Tensor<T> output(Shape s, const std::vector<const Tensor<T>*>& ins) {
        return make_leaf<T>(s, wants_grad(ins));
    }

    template <typename Fn>
    void record(const char* op, const std::vector<const Tensor<T>*>& ins, const Tensor<T>& out, Fn&& fn) {
        if (!out.requires_grad) return;
        RecordInfo ri{op, out.data.get(), {}};
        for (const auto* t : ins) ri.inputs.push_back(t->data.get());
        info_.push_back(std::move(ri));
        records_.push_back(Record{std::forward<Fn>(fn), out.grad});
    }

    void mix_branch(std::uint64_t item) {
        branch_sig_ ^= item;
        branch_sig_ *= 0x100000001b3ULL;
    }

    bool recording_;
    bool track_branches_ = false;
    std::uint64_t branch_sig_ = 0xcbf29ce484222325ULL;
    std::vector<Record> records_;
    std::vector<RecordInfo> info_;
};

/// dLoss/dLeaf convenience wrapper used by spec-level call sites.
template <typename T>
void backward(Graph<T>& g, const Tensor<T>& loss) {
    g.backward(loss);
}

} // namespace granet
