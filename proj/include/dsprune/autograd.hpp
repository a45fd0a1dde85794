#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "dsprune/errors.hpp"
#include "dsprune/tensor.hpp"

namespace dsprune {

// Reverse-mode tape. Operations executed with an active tape push one node
// each; backward() replays the nodes in reverse, which is a valid topological
// order because an output can only feed operations recorded after it.
// Gradients accumulate, so fan-out is handled naturally. A tape belongs to a
// single training context and is not thread-safe.
template <class T>
class TapeT {
public:
    using BackwardFn = std::function<void()>;

    void record(const TensorT<T>& output, BackwardFn fn) {
        auto s = output.storage();
        s->tape = this;
        s->tape_gen = gen_;
        nodes_.push_back(Node{std::move(fn), std::move(s)});
    }

    bool recorded_here(const TensorT<T>& t) const {
        const auto& s = *t.storage();
        return s.tape == this && s.tape_gen == gen_;
    }

    /// Seeds d(loss)/d(loss) = 1 and propagates gradients to every tensor
    /// reachable from the loss. The loss must be a scalar produced under this
    /// tape.
    void backward(TensorT<T>& loss) {
        if (nodes_.empty() || !recorded_here(loss)) {
            throw StateError("backward requires a scalar loss recorded on an active tape");
        }
        if (loss.size() != 1) throw InputError("backward expects a scalar loss");
        loss.ensure_grad()[0] += T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->fn();
    }

    std::size_t size() const { return nodes_.size(); }

    /// Drops all recorded nodes (and the activations they keep alive).
    /// Tensors recorded before clear() are no longer considered on-tape.
    void clear() {
        nodes_.clear();
        ++gen_;
    }

private:
    struct Node {
        BackwardFn fn;
        std::shared_ptr<typename TensorT<T>::Storage> out;
    };

    std::vector<Node> nodes_;
    std::uint64_t gen_ = 0;
};

using Tape = TapeT<float>;
using TapeD = TapeT<double>;

}  // namespace dsprune
