#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "dsprune/model.hpp"
#include "dsprune/saliency.hpp"

namespace dsprune {

/// Kept channels of one conv layer after ArgBotK selection.
struct PrunePlanEntry {
    std::string layer_id;
    int original_channels = 0;
    double ratio = 0.0;
    std::vector<int> kept;  // ascending, unique, non-empty
};

struct PrunePlan {
    std::vector<PrunePlanEntry> entries;

    const PrunePlanEntry* find(const std::string& layer_id) const {
        for (const auto& e : entries)
            if (e.layer_id == layer_id) return &e;
        return nullptr;
    }
};

/// Per-layer and aggregate effect of a surgery.
struct SurgeryReport {
    struct Layer {
        std::string layer_id;
        int channels_before = 0;
        int channels_after = 0;
        double requested_ratio = 0.0;
    };
    std::vector<Layer> layers;
    std::int64_t params_before = 0;
    std::int64_t params_after = 0;
    double achieved_sparsity = 0.0;  // over prunable layers' channels
};

/// Selects the floor(ratio * channels) channels with the lowest scores for
/// removal; ties are broken by pruning the lower index first. At least one
/// channel is always kept.
PrunePlanEntry select_bottom_k(const SaliencyScore& s, double ratio);

// ---------------------------------------------------------------------------
// Surgery
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
TensorT<T> take_rows(const TensorT<T>& t, const std::vector<int>& rows) {
    std::vector<int> shape = t.shape();
    const std::size_t slice = t.size() / static_cast<std::size_t>(shape[0]);
    shape[0] = static_cast<int>(rows.size());
    TensorT<T> out(shape);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const T* src = t.data() + static_cast<std::size_t>(rows[r]) * slice;
        std::copy(src, src + slice, out.data() + r * slice);
    }
    return out;
}

/// Keeps, per dim-1 index in `keep`, that input slice of a conv weight
/// [out_c, in_c, kh, kw].
template <class T>
TensorT<T> take_input_channels(const TensorT<T>& w, const std::vector<int>& keep) {
    const int out_c = w.dim(0), in_c = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    const std::size_t k = static_cast<std::size_t>(kh) * kw;
    TensorT<T> out({out_c, static_cast<int>(keep.size()), kh, kw});
    for (int o = 0; o < out_c; ++o) {
        for (std::size_t ci = 0; ci < keep.size(); ++ci) {
            const T* src = w.data() + (static_cast<std::size_t>(o) * in_c + keep[ci]) * k;
            std::copy(src, src + k, out.data() + (static_cast<std::size_t>(o) * keep.size() + ci) * k);
        }
    }
    return out;
}

/// Keeps the dense weight columns [i*block, (i+1)*block) for every kept
/// channel i (channel-major flatten).
template <class T>
TensorT<T> take_column_blocks(const TensorT<T>& w, const std::vector<int>& keep, int block) {
    const int d_out = w.dim(0), d_in = w.dim(1);
    const int new_in = static_cast<int>(keep.size()) * block;
    TensorT<T> out({d_out, new_in});
    for (int r = 0; r < d_out; ++r) {
        const T* src = w.data() + static_cast<std::size_t>(r) * d_in;
        T* dst = out.data() + static_cast<std::size_t>(r) * new_in;
        for (std::size_t ci = 0; ci < keep.size(); ++ci) {
            std::copy(src + static_cast<std::size_t>(keep[ci]) * block,
                      src + static_cast<std::size_t>(keep[ci] + 1) * block,
                      dst + ci * static_cast<std::size_t>(block));
        }
    }
    return out;
}

inline void validate_plan_entry(const PrunePlanEntry& e, int current_channels) {
    if (e.kept.empty()) throw StateError("prune plan keeps no channels of '" + e.layer_id + "'");
    int prev = -1;
    for (int k : e.kept) {
        if (k <= prev) {
            throw StateError("prune plan for '" + e.layer_id +
                             "' has unsorted or duplicate channel indices");
        }
        prev = k;
    }
    if (e.kept.back() >= current_channels) {
        throw StateError("prune plan for '" + e.layer_id + "' references channel " +
                         std::to_string(e.kept.back()) + " but the layer has " +
                         std::to_string(current_channels) + " channels (already pruned?)");
    }
}

}  // namespace detail

/// Physically removes the pruned channels: the conv loses output-channel
/// slices and bias entries, and the next parameterized layer loses the
/// matching input slices (conv input channels, or contiguous dense column
/// blocks across a Flatten). Returns a new model; the input is not mutated.
template <class T>
ModelT<T> apply_prune(const ModelT<T>& model, const PrunePlan& plan) {
    for (const auto& e : plan.entries) {
        if (!model.is_prunable(e.layer_id)) {
            throw InputError("apply_prune: layer '" + e.layer_id + "' is not prunable");
        }
    }
    const auto shapes = infer_shapes(model);
    ModelT<T> out = model.clone();
    for (std::size_t li = 0; li < out.layers.size(); ++li) {
        auto& l = out.layers[li];
        if (l.kind != LayerKind::Conv) continue;
        const PrunePlanEntry* e = plan.find(l.id);
        if (!e) continue;
        detail::validate_plan_entry(*e, l.weight.dim(0));
        if (static_cast<int>(e->kept.size()) == l.weight.dim(0)) continue;  // nothing pruned

        l.weight = detail::take_rows(l.weight, e->kept);
        l.weight.set_requires_grad(true);
        l.bias = detail::take_rows(l.bias, e->kept);
        l.bias.set_requires_grad(true);

        // The next conv/dense layer consumes fewer input channels; ReLU and
        // MaxPool pass the channel mapping through unchanged.
        for (std::size_t nj = li + 1; nj < out.layers.size(); ++nj) {
            auto& nl = out.layers[nj];
            if (nl.kind == LayerKind::ReLU || nl.kind == LayerKind::MaxPool ||
                nl.kind == LayerKind::Flatten) {
                continue;
            }
            if (nl.kind == LayerKind::Conv) {
                nl.weight = detail::take_input_channels(nl.weight, e->kept);
            } else {
                // Dense across Flatten: column block per channel is the
                // spatial size right before the Flatten.
                const std::array<int, 3> pre_flat = shapes[nj - 1];
                const int block = pre_flat[2] / shapes[li][0];
                nl.weight = detail::take_column_blocks(nl.weight, e->kept, block);
            }
            nl.weight.set_requires_grad(true);
            break;
        }
    }
    return out;
}

/// Test oracle: runs the ORIGINAL model but zeroes the pruned channels'
/// activation maps after each pruned layer's ReLU. Output-equivalent to
/// apply_prune because no bias re-injection follows the zeroed maps.
template <class T>
TensorT<T> masked_forward(const ModelT<T>& model, const PrunePlan& plan, const TensorT<T>& batch) {
    std::map<std::string, std::vector<std::uint8_t>> masks;
    for (const auto& e : plan.entries) {
        if (!model.is_prunable(e.layer_id)) {
            throw InputError("masked_forward: layer '" + e.layer_id + "' is not prunable");
        }
        const int channels = channel_count(model, e.layer_id);
        detail::validate_plan_entry(e, channels);
        std::vector<std::uint8_t> keep(static_cast<std::size_t>(channels), 0);
        for (int k : e.kept) keep[static_cast<std::size_t>(k)] = 1;
        masks.emplace(e.layer_id, std::move(keep));
    }
    return detail::run_layers(model, batch, nullptr, nullptr, masks.empty() ? nullptr : &masks,
                              nullptr);
}

/// Channel and parameter bookkeeping for a before/after model pair.
template <class T>
SurgeryReport sparsity_report(const ModelT<T>& before, const ModelT<T>& after,
                              const PrunePlan& plan) {
    SurgeryReport r;
    r.params_before = before.parameter_count();
    r.params_after = after.parameter_count();
    long total_before = 0, total_after = 0;
    for (const auto& id : before.prunable_layers) {
        SurgeryReport::Layer lr;
        lr.layer_id = id;
        lr.channels_before = channel_count(before, id);
        lr.channels_after = channel_count(after, id);
        if (const PrunePlanEntry* e = plan.find(id)) lr.requested_ratio = e->ratio;
        total_before += lr.channels_before;
        total_after += lr.channels_after;
        r.layers.push_back(std::move(lr));
    }
    r.achieved_sparsity =
        total_before > 0 ? 1.0 - static_cast<double>(total_after) / total_before : 0.0;
    return r;
}

// ---------------------------------------------------------------------------
// Plan text form: one line per layer, `layer_id: kept=[i,j,...] of C`.
// ---------------------------------------------------------------------------

std::string plan_to_text(const PrunePlan& plan);
PrunePlan plan_from_text(const std::string& text);
void save_plan(const PrunePlan& plan, const std::string& path);
PrunePlan load_plan(const std::string& path);

}  // namespace dsprune
