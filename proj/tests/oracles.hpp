#pragma once

// Reference implementations used only by tests. Everything here is written
// as plainly as possible (nested loops, store-everything averaging) and kept
// independent of the library's kernels so the two sides can check each other.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "dsprune/rng.hpp"
#include "dsprune/saliency.hpp"
#include "dsprune/tensor.hpp"

namespace oracle {

using dsprune::Rng;
using dsprune::TensorT;

template <class T>
TensorT<T> random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    TensorT<T> t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

// Direct six-nested-loop cross-correlation.
template <class T>
TensorT<T> conv2d_ref(const TensorT<T>& input, const TensorT<T>& weight, const TensorT<T>& bias,
                      int stride, int padding) {
    const int n = input.dim(0), in_c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int out_c = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
    const int oh = (h + 2 * padding - kh) / stride + 1;
    const int ow = (w + 2 * padding - kw) / stride + 1;
    TensorT<T> out({n, out_c, oh, ow});
    for (int s = 0; s < n; ++s) {
        for (int oc = 0; oc < out_c; ++oc) {
            for (int y = 0; y < oh; ++y) {
                for (int x = 0; x < ow; ++x) {
                    T acc = bias.data()[oc];
                    for (int ic = 0; ic < in_c; ++ic) {
                        for (int p = 0; p < kh; ++p) {
                            for (int q = 0; q < kw; ++q) {
                                const int iy = y * stride - padding + p;
                                const int ix = x * stride - padding + q;
                                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                                acc += input.data()[((static_cast<std::size_t>(s) * in_c + ic) * h +
                                                     iy) *
                                                        w +
                                                    ix] *
                                       weight.data()[((static_cast<std::size_t>(oc) * in_c + ic) *
                                                          kh +
                                                      p) *
                                                         kw +
                                                     q];
                            }
                        }
                    }
                    out.data()[((static_cast<std::size_t>(s) * out_c + oc) * oh + y) * ow + x] = acc;
                }
            }
        }
    }
    return out;
}

// Brute-force windowed max.
template <class T>
TensorT<T> maxpool2d_ref(const TensorT<T>& input, int k) {
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int oh = h / k, ow = w / k;
    TensorT<T> out({n, c, oh, ow});
    for (int s = 0; s < n; ++s) {
        for (int ch = 0; ch < c; ++ch) {
            for (int y = 0; y < oh; ++y) {
                for (int x = 0; x < ow; ++x) {
                    T best = input.data()[((static_cast<std::size_t>(s) * c + ch) * h + y * k) * w +
                                          x * k];
                    for (int py = 0; py < k; ++py) {
                        for (int px = 0; px < k; ++px) {
                            best = std::max(
                                best, input.data()[((static_cast<std::size_t>(s) * c + ch) * h +
                                                    y * k + py) *
                                                       w +
                                                   x * k + px]);
                        }
                    }
                    out.data()[((static_cast<std::size_t>(s) * c + ch) * oh + y) * ow + x] = best;
                }
            }
        }
    }
    return out;
}

// Triple-loop affine map.
template <class T>
TensorT<T> dense_ref(const TensorT<T>& input, const TensorT<T>& weight, const TensorT<T>& bias) {
    const int n = input.dim(0), d_in = input.dim(1), d_out = weight.dim(0);
    TensorT<T> out({n, d_out});
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d_out; ++j) {
            T acc = bias.data()[j];
            for (int k = 0; k < d_in; ++k) {
                acc += input.data()[static_cast<std::size_t>(i) * d_in + k] *
                       weight.data()[static_cast<std::size_t>(j) * d_in + k];
            }
            out.data()[static_cast<std::size_t>(i) * d_out + j] = acc;
        }
    }
    return out;
}

// Straightforward stabilized cross-entropy in double.
inline double softmax_xent_ref(const TensorT<double>& logits, const std::vector<int>& labels) {
    const int n = logits.dim(0), k = logits.dim(1);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const double* row = logits.data() + static_cast<std::size_t>(i) * k;
        double m = row[0];
        for (int j = 1; j < k; ++j) m = std::max(m, row[j]);
        double denom = 0.0;
        for (int j = 0; j < k; ++j) denom += std::exp(row[j] - m);
        total += std::log(denom) - (row[labels[static_cast<std::size_t>(i)]] - m);
    }
    return total / n;
}

// Central finite differences of a scalar function with respect to x.
inline std::vector<double> fd_grad(TensorT<double>& x,
                                   const std::function<double()>& loss_fn, double eps = 1e-4) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x.data()[i];
        x.data()[i] = saved + eps;
        const double up = loss_fn();
        x.data()[i] = saved - eps;
        const double down = loss_fn();
        x.data()[i] = saved;
        g[i] = (up - down) / (2.0 * eps);
    }
    return g;
}

/// |a - b| / max(1, |a|, |b|), maximized over elements.
inline double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double denom = std::max({1.0, std::fabs(a[i]), std::fabs(b[i])});
        worst = std::max(worst, std::fabs(a[i] - b[i]) / denom);
    }
    return worst;
}

// Two-pass stats oracle: store gamma of every sample's map, then average.
template <class T>
dsprune::ActivationStats two_pass_stats(const dsprune::ModelT<T>& model,
                                        const dsprune::DatasetT<T>& ds,
                                        const std::string& layer_id) {
    std::size_t li = 0;
    while (model.layers[li].id != layer_id) ++li;
    const auto shapes = dsprune::infer_shapes(model);
    dsprune::ActivationStats stats;
    stats.layer_id = layer_id;
    stats.domain_tag = ds.domain_tag;
    stats.channels = shapes[li][0];
    stats.map_size = shapes[li][1] * shapes[li][2];

    std::vector<std::vector<double>> all;  // one gamma'd [channels*map] per sample
    const std::size_t stride = static_cast<std::size_t>(ds.channels()) * ds.height() * ds.width();
    for (int i = 0; i < ds.size(); ++i) {
        TensorT<T> one({1, ds.channels(), ds.height(), ds.width()});
        std::copy(ds.images.data() + i * stride, ds.images.data() + (i + 1) * stride, one.data());
        dsprune::ActivationCaptureT<T> caps;
        dsprune::forward(model, one, {layer_id}, &caps);
        const TensorT<T>& map = caps.maps.at(layer_id);
        std::vector<double> g(static_cast<std::size_t>(stats.channels) * stats.map_size);
        for (int c = 0; c < stats.channels; ++c) {
            dsprune::gamma(map.data() + static_cast<std::size_t>(c) * stats.map_size,
                           stats.map_size, g.data() + static_cast<std::size_t>(c) * stats.map_size);
        }
        all.push_back(std::move(g));
    }
    stats.sample_count = static_cast<long>(all.size());
    stats.mean.assign(static_cast<std::size_t>(stats.channels) * stats.map_size, 0.0);
    for (const auto& g : all) {
        for (std::size_t i = 0; i < g.size(); ++i) stats.mean[i] += g[i];
    }
    for (double& v : stats.mean) v /= static_cast<double>(stats.sample_count);
    return stats;
}

}  // namespace oracle
