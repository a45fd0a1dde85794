#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "dsprune/ops.hpp"
#include "dsprune/rng.hpp"

namespace dsprune {

enum class LayerKind { Conv, ReLU, MaxPool, Flatten, Dense };

inline const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv: return "conv";
        case LayerKind::ReLU: return "relu";
        case LayerKind::MaxPool: return "maxpool";
        case LayerKind::Flatten: return "flatten";
        case LayerKind::Dense: return "dense";
    }
    return "?";
}

template <class T>
struct LayerSpecT {
    LayerKind kind;
    std::string id;
    TensorT<T> weight;  // conv/dense only
    TensorT<T> bias;    // conv/dense only
    int stride = 1;     // conv
    int padding = 0;    // conv
    int pool = 2;       // maxpool

    bool has_params() const { return kind == LayerKind::Conv || kind == LayerKind::Dense; }
};

using LayerSpec = LayerSpecT<float>;

/// Post-activation feature maps captured during a forward pass, keyed by the
/// conv layer id they belong to.
template <class T>
struct ActivationCaptureT {
    std::map<std::string, TensorT<T>> maps;
};

using ActivationCapture = ActivationCaptureT<float>;

template <class T>
struct ModelT {
    std::vector<LayerSpecT<T>> layers;
    std::array<int, 3> input_shape{};  // [c, h, w]
    int class_count = 0;
    std::vector<std::string> prunable_layers;  // conv ids eligible for pruning

    const LayerSpecT<T>& layer(std::string_view id) const {
        for (const auto& l : layers)
            if (l.id == id) return l;
        throw InputError("unknown layer id '" + std::string(id) + "'");
    }

    LayerSpecT<T>& layer(std::string_view id) {
        for (auto& l : layers)
            if (l.id == id) return l;
        throw InputError("unknown layer id '" + std::string(id) + "'");
    }

    bool has_layer(std::string_view id) const {
        for (const auto& l : layers)
            if (l.id == id) return true;
        return false;
    }

    bool is_prunable(std::string_view id) const {
        for (const auto& p : prunable_layers)
            if (p == id) return true;
        return false;
    }

    std::vector<TensorT<T>> parameters() {
        std::vector<TensorT<T>> out;
        for (auto& l : layers) {
            if (!l.has_params()) continue;
            out.push_back(l.weight);
            out.push_back(l.bias);
        }
        return out;
    }

    std::int64_t parameter_count() const {
        std::int64_t n = 0;
        for (const auto& l : layers) {
            if (!l.has_params()) continue;
            n += static_cast<std::int64_t>(l.weight.size()) + static_cast<std::int64_t>(l.bias.size());
        }
        return n;
    }

    /// Deep copy; parameter tensors do not share storage with the original.
    ModelT clone() const {
        ModelT m;
        m.input_shape = input_shape;
        m.class_count = class_count;
        m.prunable_layers = prunable_layers;
        m.layers.reserve(layers.size());
        for (const auto& l : layers) {
            LayerSpecT<T> c = l;
            if (l.has_params()) {
                c.weight = l.weight.clone();
                c.bias = l.bias.clone();
            }
            m.layers.push_back(std::move(c));
        }
        return m;
    }
};

using Model = ModelT<float>;

/// Output shape [c,h,w] of every layer for the model's declared input shape.
/// Throws ConfigError/ShapeError if any layer geometry is inconsistent.
template <class T>
std::vector<std::array<int, 3>> infer_shapes(const ModelT<T>& m) {
    std::vector<std::array<int, 3>> out;
    out.reserve(m.layers.size());
    int c = m.input_shape[0], h = m.input_shape[1], w = m.input_shape[2];
    bool flat = false;
    int width = 0;
    for (const auto& l : m.layers) {
        switch (l.kind) {
            case LayerKind::Conv: {
                if (flat) throw ConfigError("layer '" + l.id + "': conv after flatten");
                const int out_c = l.weight.dim(0), kh = l.weight.dim(2), kw = l.weight.dim(3);
                if (l.weight.dim(1) != c) {
                    throw ShapeError("layer '" + l.id + "': expects " +
                                     std::to_string(l.weight.dim(1)) + " input channels, got " +
                                     std::to_string(c));
                }
                const int nh = h + 2 * l.padding - kh;
                const int nw = w + 2 * l.padding - kw;
                if (nh < 0 || nw < 0 || nh % l.stride != 0 || nw % l.stride != 0) {
                    throw ConfigError("layer '" + l.id + "': non-integral output for input " +
                                      std::to_string(h) + "x" + std::to_string(w));
                }
                c = out_c;
                h = nh / l.stride + 1;
                w = nw / l.stride + 1;
                break;
            }
            case LayerKind::MaxPool:
                if (flat) throw ConfigError("layer '" + l.id + "': pool after flatten");
                if (h % l.pool != 0 || w % l.pool != 0) {
                    throw ConfigError("layer '" + l.id + "': " + std::to_string(h) + "x" +
                                      std::to_string(w) + " not divisible by pool " +
                                      std::to_string(l.pool));
                }
                h /= l.pool;
                w /= l.pool;
                break;
            case LayerKind::ReLU:
                break;
            case LayerKind::Flatten:
                if (flat) throw ConfigError("layer '" + l.id + "': flatten twice");
                flat = true;
                width = c * h * w;
                break;
            case LayerKind::Dense: {
                if (!flat) throw ConfigError("layer '" + l.id + "': dense before flatten");
                if (l.weight.dim(1) != width) {
                    throw ShapeError("layer '" + l.id + "': expects fan-in " +
                                     std::to_string(l.weight.dim(1)) + ", got " +
                                     std::to_string(width));
                }
                width = l.weight.dim(0);
                break;
            }
        }
        if (flat) {
            out.push_back({1, 1, width});
        } else {
            out.push_back({c, h, w});
        }
    }
    return out;
}

template <class T>
void shape_check(const ModelT<T>& m) {
    std::set<std::string> ids;
    for (const auto& l : m.layers) {
        if (!ids.insert(l.id).second) throw ConfigError("duplicate layer id '" + l.id + "'");
    }
    const auto shapes = infer_shapes(m);
    if (m.layers.empty() || m.layers.back().kind != LayerKind::Dense ||
        shapes.back()[2] != m.class_count) {
        throw ConfigError("model must end in a dense classifier with class_count outputs");
    }
    for (const auto& p : m.prunable_layers) {
        const auto& l = m.layer(p);  // throws InputError if missing
        if (l.kind != LayerKind::Conv) throw ConfigError("prunable layer '" + p + "' is not conv");
    }
}

namespace detail {

template <class T>
TensorT<T> init_uniform(std::vector<int> shape, int fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    TensorT<T> t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i)
        t.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
    return t;
}

}  // namespace detail

/// Builds the default architecture:
///   Conv(5x5, 32) - ReLU - MaxPool(2) - Conv(5x5, 48) - ReLU - MaxPool(2) -
///   Flatten - Dense(100) - ReLU - Dense(100) - ReLU - Dense(class_count)
/// Parameters come from a seeded uniform fan-in initialization; the same seed
/// always produces bit-identical parameters.
template <class T>
ModelT<T> build_convnet(std::array<int, 3> input_shape, int class_count, std::uint64_t seed,
                        int conv1_channels = 32, int conv2_channels = 48, int dense_width = 100) {
    const int c = input_shape[0], h = input_shape[1], w = input_shape[2];
    if (c != 1 && c != 3) throw ConfigError("build_convnet: input channels must be 1 or 3");
    if (h < 16 || w < 16) {
        throw ConfigError("build_convnet: input " + std::to_string(h) + "x" + std::to_string(w) +
                          " too small for two 5x5 convs with 2x2 pools");
    }
    if (class_count < 2) throw ConfigError("build_convnet: need at least 2 classes");
    if (conv1_channels < 1 || conv2_channels < 1 || dense_width < 1) {
        throw ConfigError("build_convnet: layer sizes must be positive");
    }

    Rng rng(mix_seed(seed, 0x6d6f64656cULL));
    ModelT<T> m;
    m.input_shape = input_shape;
    m.class_count = class_count;

    auto add_conv = [&](const std::string& id, int in_c, int out_c, int k) {
        LayerSpecT<T> l;
        l.kind = LayerKind::Conv;
        l.id = id;
        const int fan_in = in_c * k * k;
        l.weight = detail::init_uniform<T>({out_c, in_c, k, k}, fan_in, rng);
        l.bias = detail::init_uniform<T>({out_c}, fan_in, rng);
        l.weight.set_requires_grad(true);
        l.bias.set_requires_grad(true);
        m.layers.push_back(std::move(l));
    };
    auto add_dense = [&](const std::string& id, int d_in, int d_out) {
        LayerSpecT<T> l;
        l.kind = LayerKind::Dense;
        l.id = id;
        l.weight = detail::init_uniform<T>({d_out, d_in}, d_in, rng);
        l.bias = detail::init_uniform<T>({d_out}, d_in, rng);
        l.weight.set_requires_grad(true);
        l.bias.set_requires_grad(true);
        m.layers.push_back(std::move(l));
    };
    auto add_plain = [&](LayerKind kind, const std::string& id) {
        LayerSpecT<T> l;
        l.kind = kind;
        l.id = id;
        m.layers.push_back(std::move(l));
    };

    add_conv("conv1", c, conv1_channels, 5);
    add_plain(LayerKind::ReLU, "relu1");
    add_plain(LayerKind::MaxPool, "pool1");
    add_conv("conv2", conv1_channels, conv2_channels, 5);
    add_plain(LayerKind::ReLU, "relu2");
    add_plain(LayerKind::MaxPool, "pool2");
    add_plain(LayerKind::Flatten, "flatten");

    const int h2 = ((h - 4) / 2 - 4) / 2;
    const int w2 = ((w - 4) / 2 - 4) / 2;
    add_dense("fc1", conv2_channels * h2 * w2, dense_width);
    add_plain(LayerKind::ReLU, "relu3");
    add_dense("fc2", dense_width, dense_width);
    add_plain(LayerKind::ReLU, "relu4");
    add_dense("fc3", dense_width, class_count);

    m.prunable_layers = {"conv1", "conv2"};
    shape_check(m);
    return m;
}

/// Output channel count of a conv layer.
template <class T>
int channel_count(const ModelT<T>& m, std::string_view layer_id) {
    const auto& l = m.layer(layer_id);
    if (l.kind != LayerKind::Conv) {
        throw InputError("layer '" + std::string(layer_id) + "' is not a conv layer");
    }
    return l.weight.dim(0);
}

namespace detail {

// Shared layer walk behind forward() and the masked-forward pruning oracle.
// `capture` names conv layers whose post-ReLU maps are wanted; `masks` zeroes
// the listed channels right after the ReLU that follows the masked conv.
template <class T>
TensorT<T> run_layers(const ModelT<T>& m, const TensorT<T>& batch,
                      const std::set<std::string>* capture, ActivationCaptureT<T>* captures,
                      const std::map<std::string, std::vector<std::uint8_t>>* masks,
                      TapeT<T>* tape) {
    if (batch.rank() != 4 || batch.dim(1) != m.input_shape[0] || batch.dim(2) != m.input_shape[1] ||
        batch.dim(3) != m.input_shape[2]) {
        throw ShapeError("forward: batch shape does not match model input shape");
    }
    if (capture) {
        for (const auto& id : *capture) {
            if (!m.has_layer(id)) throw InputError("capture: unknown layer id '" + id + "'");
        }
    }
    if (masks && tape) throw StateError("masked forward is an inference-only oracle");

    // Zeroes the channels masked out for conv layer `conv_id` in map `x`.
    auto apply_mask = [&](const std::string& conv_id, TensorT<T>& x) {
        auto it = masks->find(conv_id);
        if (it == masks->end()) return;
        const auto& keep = it->second;
        if (static_cast<int>(keep.size()) != x.dim(1)) {
            throw StateError("mask for '" + conv_id + "' has " + std::to_string(keep.size()) +
                             " channels, layer has " + std::to_string(x.dim(1)));
        }
        const int n = x.dim(0), ch = x.dim(1);
        const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
        for (int s = 0; s < n; ++s) {
            for (int cc = 0; cc < ch; ++cc) {
                if (keep[cc]) continue;
                T* p = x.data() + (static_cast<std::size_t>(s) * ch + cc) * plane;
                std::fill(p, p + plane, T(0));
            }
        }
    };

    TensorT<T> x = batch;
    for (std::size_t li = 0; li < m.layers.size(); ++li) {
        const auto& l = m.layers[li];
        switch (l.kind) {
            case LayerKind::Conv: {
                x = conv2d(x, l.weight, l.bias, l.stride, l.padding, tape);
                const bool next_is_relu =
                    li + 1 < m.layers.size() && m.layers[li + 1].kind == LayerKind::ReLU;
                if (next_is_relu) {
                    x = relu(x, tape);
                    ++li;
                }
                // Capture/mask point: post-ReLU map when a ReLU follows, raw
                // conv output otherwise.
                if (masks) apply_mask(l.id, x);
                if (capture && capture->count(l.id) && captures) captures->maps.emplace(l.id, x);
                break;
            }
            case LayerKind::ReLU:
                x = relu(x, tape);
                break;
            case LayerKind::MaxPool:
                x = maxpool2d(x, l.pool, tape);
                break;
            case LayerKind::Flatten:
                x = flatten(x, tape);
                break;
            case LayerKind::Dense:
                x = dense(x, l.weight, l.bias, tape);
                break;
        }
    }
    return x;
}

}  // namespace detail

/// Runs the model on a batch, optionally grabbing post-ReLU feature maps of
/// the named conv layers. Capturing never perturbs the logits.
template <class T>
TensorT<T> forward(const ModelT<T>& m, const TensorT<T>& batch,
                   const std::set<std::string>& capture = {},
                   ActivationCaptureT<T>* captures = nullptr, TapeT<T>* tape = nullptr) {
    return detail::run_layers(m, batch, capture.empty() ? nullptr : &capture, captures, nullptr,
                              tape);
}

template <class T>
TensorT<T> forward(const ModelT<T>& m, const TensorT<T>& batch, TapeT<T>* tape) {
    return detail::run_layers<T>(m, batch, nullptr, nullptr, nullptr, tape);
}

}  // namespace dsprune
