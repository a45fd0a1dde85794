#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "dsprune/autograd.hpp"
#include "dsprune/errors.hpp"
#include "dsprune/gemm.hpp"
#include "dsprune/tensor.hpp"

namespace dsprune {

namespace detail {

// Fixed sample-chunk size for weight-gradient accumulation. Partial sums are
// kept per chunk and reduced in ascending chunk order, so results do not
// depend on the number of threads.
inline constexpr int kGradChunk = 8;

template <class T>
void im2col(const T* img, int in_c, int h, int w, int kh, int kw, int stride, int pad, int oh,
            int ow, T* col) {
    const int spatial = oh * ow;
    for (int ic = 0; ic < in_c; ++ic) {
        const T* plane = img + static_cast<std::size_t>(ic) * h * w;
        for (int p = 0; p < kh; ++p) {
            for (int q = 0; q < kw; ++q) {
                T* row = col + static_cast<std::size_t>((ic * kh + p) * kw + q) * spatial;
                for (int y = 0; y < oh; ++y) {
                    const int iy = y * stride - pad + p;
                    T* out = row + static_cast<std::size_t>(y) * ow;
                    if (iy < 0 || iy >= h) {
                        std::fill(out, out + ow, T(0));
                        continue;
                    }
                    const T* src = plane + static_cast<std::size_t>(iy) * w;
                    for (int x = 0; x < ow; ++x) {
                        const int ix = x * stride - pad + q;
                        out[x] = (ix >= 0 && ix < w) ? src[ix] : T(0);
                    }
                }
            }
        }
    }
}

template <class T>
void col2im_add(const T* col, int in_c, int h, int w, int kh, int kw, int stride, int pad, int oh,
                int ow, T* img) {
    const int spatial = oh * ow;
    for (int ic = 0; ic < in_c; ++ic) {
        T* plane = img + static_cast<std::size_t>(ic) * h * w;
        for (int p = 0; p < kh; ++p) {
            for (int q = 0; q < kw; ++q) {
                const T* row = col + static_cast<std::size_t>((ic * kh + p) * kw + q) * spatial;
                for (int y = 0; y < oh; ++y) {
                    const int iy = y * stride - pad + p;
                    if (iy < 0 || iy >= h) continue;
                    T* dst = plane + static_cast<std::size_t>(iy) * w;
                    for (int x = 0; x < ow; ++x) {
                        const int ix = x * stride - pad + q;
                        if (ix >= 0 && ix < w) dst[ix] += row[static_cast<std::size_t>(y) * ow + x];
                    }
                }
            }
        }
    }
}

template <class T>
bool wants_grad(const TensorT<T>& t, const TapeT<T>* tape) {
    return t.requires_grad() || (tape != nullptr && tape->recorded_here(t));
}

}  // namespace detail

/// 2-D cross-correlation with per-output-channel bias.
/// input [n,in_c,h,w], weight [out_c,in_c,kh,kw], bias [out_c] -> [n,out_c,oh,ow].
template <class T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& weight, const TensorT<T>& bias,
                  int stride, int padding, TapeT<T>* tape = nullptr) {
    if (input.rank() != 4 || weight.rank() != 4 || bias.rank() != 1) {
        throw ShapeError("conv2d expects input [n,c,h,w], weight [out_c,in_c,kh,kw], bias [out_c]");
    }
    const int n = input.dim(0), in_c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int out_c = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
    if (weight.dim(1) != in_c) {
        throw ShapeError("conv2d: input has " + std::to_string(in_c) + " channels but weight expects " +
                         std::to_string(weight.dim(1)));
    }
    if (bias.dim(0) != out_c) {
        throw ShapeError("conv2d: bias size " + std::to_string(bias.dim(0)) + " != out channels " +
                         std::to_string(out_c));
    }
    if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
    if (padding < 0) throw ConfigError("conv2d: padding must be >= 0");
    const int num_h = h + 2 * padding - kh;
    const int num_w = w + 2 * padding - kw;
    if (num_h < 0 || num_w < 0 || num_h % stride != 0 || num_w % stride != 0) {
        throw ConfigError("conv2d: output size for input " + std::to_string(h) + "x" +
                          std::to_string(w) + ", kernel " + std::to_string(kh) + "x" +
                          std::to_string(kw) + ", stride " + std::to_string(stride) + ", padding " +
                          std::to_string(padding) + " is not a positive integer");
    }
    const int oh = num_h / stride + 1;
    const int ow = num_w / stride + 1;
    const int spatial = oh * ow;
    const int kcol = in_c * kh * kw;

    TensorT<T> out({n, out_c, oh, ow});
    auto col = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n) * kcol * spatial);

#pragma omp parallel for schedule(static)
    for (int s = 0; s < n; ++s) {
        T* col_s = col->data() + static_cast<std::size_t>(s) * kcol * spatial;
        detail::im2col(input.data() + static_cast<std::size_t>(s) * in_c * h * w, in_c, h, w, kh, kw,
                       stride, padding, oh, ow, col_s);
        T* out_s = out.data() + static_cast<std::size_t>(s) * out_c * spatial;
        detail::gemm_nn(out_c, spatial, kcol, weight.data(), kcol, col_s, spatial, out_s, spatial);
        for (int oc = 0; oc < out_c; ++oc) {
            const T b = bias.data()[oc];
            T* plane = out_s + static_cast<std::size_t>(oc) * spatial;
            for (int i = 0; i < spatial; ++i) plane[i] += b;
        }
    }

    if (tape) {
        const bool need_dx = detail::wants_grad(input, tape);
        const bool need_dw = detail::wants_grad(weight, tape);
        const bool need_db = detail::wants_grad(bias, tape);
        TensorT<T> in_h = input, w_h = weight, b_h = bias, out_h = out;
        tape->record(out, [=]() mutable {
            if (!out_h.has_grad()) return;
            const T* dy = out_h.grad().data();
            if (need_db) {
                T* db = b_h.ensure_grad().data();
                for (int s = 0; s < n; ++s) {
                    const T* dy_s = dy + static_cast<std::size_t>(s) * out_c * spatial;
                    for (int oc = 0; oc < out_c; ++oc) {
                        T acc = T(0);
                        const T* plane = dy_s + static_cast<std::size_t>(oc) * spatial;
                        for (int i = 0; i < spatial; ++i) acc += plane[i];
                        db[oc] += acc;
                    }
                }
            }
            if (need_dw) {
                const int chunks = (n + detail::kGradChunk - 1) / detail::kGradChunk;
                const std::size_t wsize = w_h.size();
                std::vector<T> partial(static_cast<std::size_t>(chunks) * wsize, T(0));
#pragma omp parallel for schedule(static)
                for (int c = 0; c < chunks; ++c) {
                    T* dw_c = partial.data() + static_cast<std::size_t>(c) * wsize;
                    const int lo = c * detail::kGradChunk;
                    const int hi = std::min(n, lo + detail::kGradChunk);
                    for (int s = lo; s < hi; ++s) {
                        const T* dy_s = dy + static_cast<std::size_t>(s) * out_c * spatial;
                        const T* col_s = col->data() + static_cast<std::size_t>(s) * kcol * spatial;
                        detail::gemm_nt(out_c, kcol, spatial, dy_s, spatial, col_s, spatial, dw_c,
                                        kcol, true);
                    }
                }
                T* dw = w_h.ensure_grad().data();
                for (int c = 0; c < chunks; ++c) {
                    const T* dw_c = partial.data() + static_cast<std::size_t>(c) * wsize;
                    for (std::size_t i = 0; i < wsize; ++i) dw[i] += dw_c[i];
                }
            }
            if (need_dx) {
                T* dx = in_h.ensure_grad().data();
#pragma omp parallel for schedule(static)
                for (int s = 0; s < n; ++s) {
                    std::vector<T> dcol(static_cast<std::size_t>(kcol) * spatial);
                    const T* dy_s = dy + static_cast<std::size_t>(s) * out_c * spatial;
                    detail::gemm_tn(kcol, spatial, out_c, w_h.data(), kcol, dy_s, spatial,
                                    dcol.data(), spatial);
                    detail::col2im_add(dcol.data(), in_c, h, w, kh, kw, stride, padding, oh, ow,
                                       dx + static_cast<std::size_t>(s) * in_c * h * w);
                }
            }
        });
    }
    return out;
}

/// Non-overlapping k x k max pooling. Requires h and w divisible by k.
template <class T>
TensorT<T> maxpool2d(const TensorT<T>& input, int k, TapeT<T>* tape = nullptr) {
    if (input.rank() != 4) throw ShapeError("maxpool2d expects input [n,c,h,w]");
    if (k < 1) throw ConfigError("maxpool2d: window must be >= 1");
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (h % k != 0 || w % k != 0) {
        throw ConfigError("maxpool2d: spatial dims " + std::to_string(h) + "x" + std::to_string(w) +
                          " not divisible by window " + std::to_string(k));
    }
    const int oh = h / k, ow = w / k;
    TensorT<T> out({n, c, oh, ow});
    auto argmax = std::make_shared<std::vector<std::int64_t>>(out.size());

    const T* x = input.data();
    T* y = out.data();
#pragma omp parallel for schedule(static)
    for (int s = 0; s < n; ++s) {
        for (int ch = 0; ch < c; ++ch) {
            const std::size_t in_base = (static_cast<std::size_t>(s) * c + ch) * h * w;
            const std::size_t out_base = (static_cast<std::size_t>(s) * c + ch) * oh * ow;
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    std::size_t best = in_base + static_cast<std::size_t>(oy * k) * w + ox * k;
                    T best_v = x[best];
                    for (int py = 0; py < k; ++py) {
                        for (int px = 0; px < k; ++px) {
                            const std::size_t idx =
                                in_base + static_cast<std::size_t>(oy * k + py) * w + (ox * k + px);
                            if (x[idx] > best_v) {  // first max wins ties
                                best_v = x[idx];
                                best = idx;
                            }
                        }
                    }
                    const std::size_t o = out_base + static_cast<std::size_t>(oy) * ow + ox;
                    y[o] = best_v;
                    (*argmax)[o] = static_cast<std::int64_t>(best);
                }
            }
        }
    }

    if (tape && detail::wants_grad(input, tape)) {
        TensorT<T> in_h = input, out_h = out;
        tape->record(out, [=]() mutable {
            if (!out_h.has_grad()) return;
            const T* dy = out_h.grad().data();
            T* dx = in_h.ensure_grad().data();
            for (std::size_t i = 0; i < out_h.size(); ++i) dx[(*argmax)[i]] += dy[i];
        });
    } else if (tape) {
        tape->record(out, [] {});
    }
    return out;
}

/// Elementwise max(0, x). Gradient at exactly 0 is 0.
template <class T>
TensorT<T> relu(const TensorT<T>& input, TapeT<T>* tape = nullptr) {
    TensorT<T> out(input.shape());
    const T* x = input.data();
    T* y = out.data();
    const std::size_t sz = input.size();
    for (std::size_t i = 0; i < sz; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);

    if (tape && detail::wants_grad(input, tape)) {
        TensorT<T> in_h = input, out_h = out;
        tape->record(out, [=]() mutable {
            if (!out_h.has_grad()) return;
            const T* dy = out_h.grad().data();
            const T* xv = in_h.data();
            T* dx = in_h.ensure_grad().data();
            for (std::size_t i = 0; i < in_h.size(); ++i)
                if (xv[i] > T(0)) dx[i] += dy[i];
        });
    } else if (tape) {
        tape->record(out, [] {});
    }
    return out;
}

/// Affine map x W^T + b. input [n,d_in], weight [d_out,d_in], bias [d_out].
template <class T>
TensorT<T> dense(const TensorT<T>& input, const TensorT<T>& weight, const TensorT<T>& bias,
                 TapeT<T>* tape = nullptr) {
    if (input.rank() != 2 || weight.rank() != 2 || bias.rank() != 1) {
        throw ShapeError("dense expects input [n,d_in], weight [d_out,d_in], bias [d_out]");
    }
    const int n = input.dim(0), d_in = input.dim(1), d_out = weight.dim(0);
    if (weight.dim(1) != d_in) {
        throw ShapeError("dense: input width " + std::to_string(d_in) + " != weight fan-in " +
                         std::to_string(weight.dim(1)));
    }
    if (bias.dim(0) != d_out) {
        throw ShapeError("dense: bias size " + std::to_string(bias.dim(0)) + " != fan-out " +
                         std::to_string(d_out));
    }
    TensorT<T> out({n, d_out});
    detail::gemm_nt(n, d_out, d_in, input.data(), d_in, weight.data(), d_in, out.data(), d_out);
    T* y = out.data();
    for (int i = 0; i < n; ++i) {
        T* row = y + static_cast<std::size_t>(i) * d_out;
        for (int j = 0; j < d_out; ++j) row[j] += bias.data()[j];
    }

    if (tape) {
        const bool need_dx = detail::wants_grad(input, tape);
        const bool need_dw = detail::wants_grad(weight, tape);
        const bool need_db = detail::wants_grad(bias, tape);
        TensorT<T> in_h = input, w_h = weight, b_h = bias, out_h = out;
        tape->record(out, [=]() mutable {
            if (!out_h.has_grad()) return;
            const T* dy = out_h.grad().data();
            if (need_db) {
                T* db = b_h.ensure_grad().data();
                for (int i = 0; i < n; ++i) {
                    const T* row = dy + static_cast<std::size_t>(i) * d_out;
                    for (int j = 0; j < d_out; ++j) db[j] += row[j];
                }
            }
            if (need_dw) {
                detail::gemm_tn(d_out, d_in, n, dy, d_out, in_h.data(), d_in,
                                w_h.ensure_grad().data(), d_in, true);
            }
            if (need_dx) {
                detail::gemm_nn(n, d_in, d_out, dy, d_out, w_h.data(), d_in,
                                in_h.ensure_grad().data(), d_in, true);
            }
        });
    }
    return out;
}

/// [n, d...] -> [n, prod(d...)]
template <class T>
TensorT<T> flatten(const TensorT<T>& input, TapeT<T>* tape = nullptr) {
    if (input.rank() < 2) throw ShapeError("flatten expects rank >= 2");
    int inner = 1;
    for (int i = 1; i < input.rank(); ++i) inner *= input.dim(i);
    TensorT<T> out({input.dim(0), inner});
    std::copy(input.data(), input.data() + input.size(), out.data());

    if (tape && detail::wants_grad(input, tape)) {
        TensorT<T> in_h = input, out_h = out;
        tape->record(out, [=]() mutable {
            if (!out_h.has_grad()) return;
            const T* dy = out_h.grad().data();
            T* dx = in_h.ensure_grad().data();
            for (std::size_t i = 0; i < in_h.size(); ++i) dx[i] += dy[i];
        });
    } else if (tape) {
        tape->record(out, [] {});
    }
    return out;
}

/// Mean over the batch of -log softmax(logits)[label], stabilized by
/// max-subtraction. logits [n,k], labels in [0,k).
template <class T>
TensorT<T> softmax_cross_entropy(const TensorT<T>& logits, const std::vector<int>& labels,
                                 TapeT<T>* tape = nullptr) {
    if (logits.rank() != 2) throw ShapeError("softmax_cross_entropy expects logits [n,k]");
    const int n = logits.dim(0), k = logits.dim(1);
    if (n < 1) throw InputError("softmax_cross_entropy: empty batch");
    if (static_cast<int>(labels.size()) != n) {
        throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for batch of " + std::to_string(n));
    }
    for (int i = 0; i < n; ++i) {
        if (labels[i] < 0 || labels[i] >= k) {
            throw InputError("softmax_cross_entropy: label " + std::to_string(labels[i]) +
                             " outside [0," + std::to_string(k) + ") at row " + std::to_string(i));
        }
    }

    auto probs = std::make_shared<std::vector<T>>(logits.size());
    T total = T(0);
    const T* z = logits.data();
    for (int i = 0; i < n; ++i) {
        const T* row = z + static_cast<std::size_t>(i) * k;
        T m = row[0];
        for (int j = 1; j < k; ++j) m = std::max(m, row[j]);
        T denom = T(0);
        T* prow = probs->data() + static_cast<std::size_t>(i) * k;
        for (int j = 0; j < k; ++j) {
            prow[j] = std::exp(row[j] - m);
            denom += prow[j];
        }
        for (int j = 0; j < k; ++j) prow[j] /= denom;
        total += std::log(denom) - (row[labels[i]] - m);
    }
    TensorT<T> out({1}, {total / static_cast<T>(n)});

    if (tape && detail::wants_grad(logits, tape)) {
        TensorT<T> in_h = logits, out_h = out;
        auto labels_copy = std::make_shared<std::vector<int>>(labels);
        tape->record(out, [=]() mutable {
            if (!out_h.has_grad()) return;
            const T g = out_h.grad()[0] / static_cast<T>(n);
            T* dz = in_h.ensure_grad().data();
            const T* p = probs->data();
            for (int i = 0; i < n; ++i) {
                const int y = (*labels_copy)[i];
                T* drow = dz + static_cast<std::size_t>(i) * k;
                const T* prow = p + static_cast<std::size_t>(i) * k;
                for (int j = 0; j < k; ++j) drow[j] += g * (prow[j] - (j == y ? T(1) : T(0)));
            }
        });
    } else if (tape) {
        tape->record(out, [] {});
    }
    return out;
}

/// Sum of all elements, as a scalar tensor.
template <class T>
TensorT<T> sum(const TensorT<T>& input, TapeT<T>* tape = nullptr) {
    T total = T(0);
    for (std::size_t i = 0; i < input.size(); ++i) total += input.data()[i];
    TensorT<T> out({1}, {total});
    if (tape && detail::wants_grad(input, tape)) {
        TensorT<T> in_h = input, out_h = out;
        tape->record(out, [=]() mutable {
            if (!out_h.has_grad()) return;
            const T g = out_h.grad()[0];
            T* dx = in_h.ensure_grad().data();
            for (std::size_t i = 0; i < in_h.size(); ++i) dx[i] += g;
        });
    } else if (tape) {
        tape->record(out, [] {});
    }
    return out;
}

/// Elementwise product of same-shape tensors.
template <class T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b, TapeT<T>* tape = nullptr) {
    if (a.shape() != b.shape()) throw ShapeError("mul: shape mismatch");
    TensorT<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
    if (tape) {
        const bool need_da = detail::wants_grad(a, tape);
        const bool need_db = detail::wants_grad(b, tape);
        TensorT<T> a_h = a, b_h = b, out_h = out;
        tape->record(out, [=]() mutable {
            if (!out_h.has_grad()) return;
            const T* dy = out_h.grad().data();
            if (need_da) {
                T* da = a_h.ensure_grad().data();
                for (std::size_t i = 0; i < a_h.size(); ++i) da[i] += dy[i] * b_h.data()[i];
            }
            if (need_db) {
                T* db = b_h.ensure_grad().data();
                for (std::size_t i = 0; i < b_h.size(); ++i) db[i] += dy[i] * a_h.data()[i];
            }
        });
    }
    return out;
}

/// Multiplication by a scalar constant.
template <class T>
TensorT<T> scale(const TensorT<T>& a, T s, TapeT<T>* tape = nullptr) {
    TensorT<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * s;
    if (tape && detail::wants_grad(a, tape)) {
        TensorT<T> a_h = a, out_h = out;
        tape->record(out, [=]() mutable {
            if (!out_h.has_grad()) return;
            const T* dy = out_h.grad().data();
            T* da = a_h.ensure_grad().data();
            for (std::size_t i = 0; i < a_h.size(); ++i) da[i] += dy[i] * s;
        });
    } else if (tape) {
        tape->record(out, [] {});
    }
    return out;
}

}  // namespace dsprune
