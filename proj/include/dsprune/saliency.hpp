#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dsprune/data.hpp"
#include "dsprune/model.hpp"
#include "dsprune/rng.hpp"

namespace dsprune {

namespace detail {
// Keeps glibc from bouncing large training buffers between heap and OS.
void tune_malloc_for_churn();
}  // namespace detail

/// Per-channel mean of normalized flattened feature maps for one layer and
/// one domain: the Monte Carlo estimate of the expected unit-direction of
/// each channel's activation map. Accumulation is always in double.
struct ActivationStats {
    std::string layer_id;
    std::string domain_tag;
    int channels = 0;
    int map_size = 0;  // spatial elements per map
    long sample_count = 0;
    std::vector<double> mean;  // [channels * map_size], row per channel

    const double* row(int channel) const {
        return mean.data() + static_cast<std::size_t>(channel) * map_size;
    }
};

enum class ScoreMethod { DSS, L2, ReverseDSS, Random };

const char* score_method_name(ScoreMethod m);
ScoreMethod parse_score_method(const std::string& name);

/// Per-channel saliency vector for one layer.
struct SaliencyScore {
    std::string layer_id;
    ScoreMethod method = ScoreMethod::DSS;
    std::vector<double> values;
};

// ---------------------------------------------------------------------------
// gamma: normalize-and-flatten
// ---------------------------------------------------------------------------

/// Flattens row-major and scales to unit Euclidean norm. The all-zero map
/// maps to the all-zero vector.
template <class T>
void gamma(const T* map, int size, double* out) {
    double norm_sq = 0.0;
    for (int i = 0; i < size; ++i) {
        const double v = static_cast<double>(map[i]);
        norm_sq += v * v;
    }
    if (norm_sq == 0.0) {
        for (int i = 0; i < size; ++i) out[i] = 0.0;
        return;
    }
    const double inv = 1.0 / std::sqrt(norm_sq);
    for (int i = 0; i < size; ++i) out[i] = static_cast<double>(map[i]) * inv;
}

template <class T>
std::vector<double> gamma(const TensorT<T>& feature_map) {
    std::vector<double> out(feature_map.size());
    gamma(feature_map.data(), static_cast<int>(feature_map.size()), out.data());
    return out;
}

namespace detail {

/// Adds gamma(map) of one sample into the running sums of `stats`.
template <class T>
void accumulate_gamma(ActivationStats& stats, const T* maps, std::vector<double>& scratch) {
    scratch.resize(static_cast<std::size_t>(stats.map_size));
    for (int c = 0; c < stats.channels; ++c) {
        gamma(maps + static_cast<std::size_t>(c) * stats.map_size, stats.map_size, scratch.data());
        double* row = stats.mean.data() + static_cast<std::size_t>(c) * stats.map_size;
        for (int i = 0; i < stats.map_size; ++i) row[i] += scratch[i];
    }
    ++stats.sample_count;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Stats collection
// ---------------------------------------------------------------------------

/// Streams the first min(N, sample_cap) samples through the model in
/// evaluation mode and averages gamma of each requested layer's per-channel
/// maps. Deterministic sample order (dataset order).
template <class T>
std::map<std::string, ActivationStats> collect_stats(const ModelT<T>& model,
                                                     const DatasetT<T>& ds,
                                                     const std::set<std::string>& layers,
                                                     std::optional<int> sample_cap = {}) {
    if (ds.size() == 0) throw InputError("collect_stats: empty dataset");
    if (sample_cap && *sample_cap < 1) throw InputError("collect_stats: sample cap must be >= 1");
    detail::tune_malloc_for_churn();

    const auto shapes = infer_shapes(model);
    std::map<std::string, ActivationStats> stats;
    for (const auto& id : layers) {
        const auto& l = model.layer(id);
        if (l.kind != LayerKind::Conv) {
            throw InputError("collect_stats: layer '" + id + "' is not a conv layer");
        }
        std::size_t li = 0;
        while (model.layers[li].id != id) ++li;
        ActivationStats s;
        s.layer_id = id;
        s.domain_tag = ds.domain_tag;
        s.channels = shapes[li][0];
        s.map_size = shapes[li][1] * shapes[li][2];
        s.mean.assign(static_cast<std::size_t>(s.channels) * s.map_size, 0.0);
        stats.emplace(id, std::move(s));
    }

    const int total = sample_cap ? std::min(ds.size(), *sample_cap) : ds.size();
    const int batch = 128;
    const std::size_t stride = static_cast<std::size_t>(ds.channels()) * ds.height() * ds.width();
    std::vector<double> scratch;
    for (int lo = 0; lo < total; lo += batch) {
        const int n = std::min(batch, total - lo);
        TensorT<T> images({n, ds.channels(), ds.height(), ds.width()});
        std::copy(ds.images.data() + lo * stride, ds.images.data() + (lo + n) * stride,
                  images.data());
        ActivationCaptureT<T> caps;
        forward(model, images, layers, &caps);
        for (auto& [id, s] : stats) {
            const TensorT<T>& maps = caps.maps.at(id);
            for (int i = 0; i < n; ++i) {
                detail::accumulate_gamma(
                    s, maps.data() + static_cast<std::size_t>(i) * s.channels * s.map_size, scratch);
            }
        }
    }
    for (auto& [id, s] : stats) {
        for (double& v : s.mean) v /= static_cast<double>(s.sample_count);
    }
    return stats;
}

// ---------------------------------------------------------------------------
// Scores
// ---------------------------------------------------------------------------

/// S_i = < E[gamma(T(x_src)_i)], E[gamma(T(x_tgt)_i)] > per channel.
SaliencyScore dss_scores(const ActivationStats& src, const ActivationStats& tgt);

/// Mean of dss_scores over all unordered pairs of k >= 2 domains.
SaliencyScore multi_domain_dss(const std::vector<const ActivationStats*>& stats);

/// Negated scores; bottom-k of the result selects the original top-k.
SaliencyScore reverse_scores(const SaliencyScore& s);

/// Frobenius norm of each output-channel kernel slice (bias excluded).
template <class T>
SaliencyScore l2_scores(const ModelT<T>& model, const std::string& layer_id) {
    const auto& l = model.layer(layer_id);
    if (l.kind != LayerKind::Conv) {
        throw InputError("l2_scores: layer '" + layer_id + "' is not a conv layer");
    }
    const int out_c = l.weight.dim(0);
    const std::size_t slice = l.weight.size() / static_cast<std::size_t>(out_c);
    SaliencyScore s;
    s.layer_id = layer_id;
    s.method = ScoreMethod::L2;
    s.values.resize(static_cast<std::size_t>(out_c));
    for (int c = 0; c < out_c; ++c) {
        const T* w = l.weight.data() + static_cast<std::size_t>(c) * slice;
        double acc = 0.0;
        for (std::size_t i = 0; i < slice; ++i) acc += static_cast<double>(w[i]) * w[i];
        s.values[static_cast<std::size_t>(c)] = std::sqrt(acc);
    }
    return s;
}

/// Seed-deterministic pseudo-random scores (control baseline).
template <class T>
SaliencyScore random_scores(const ModelT<T>& model, const std::string& layer_id,
                            std::uint64_t seed) {
    const int out_c = channel_count(model, layer_id);
    Rng rng(mix_seed(seed, fnv1a(layer_id)));
    SaliencyScore s;
    s.layer_id = layer_id;
    s.method = ScoreMethod::Random;
    s.values.resize(static_cast<std::size_t>(out_c));
    for (auto& v : s.values) v = rng.next_double();
    return s;
}

// ---------------------------------------------------------------------------
// Stats container I/O
// Layout: "DSAS" | u32 version | u32 record count | records of
//   (str layer_id | str domain_tag | u32 channels | u32 map_size |
//    u64 sample_count | f32-LE rows)
// Rows are stored as float32; import restores them as doubles.
// ---------------------------------------------------------------------------

void save_stats(const std::vector<ActivationStats>& stats, const std::string& path);
std::vector<ActivationStats> load_stats(const std::string& path);

}  // namespace dsprune
