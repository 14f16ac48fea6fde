#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <vector>

#include "nlsd/block_sparse.hpp"
#include "nlsd/dense.hpp"

namespace nlsd::ad {

/// Handle to a value recorded on a Tape.
struct Var {
    std::uint32_t id = UINT32_MAX;
    bool valid() const noexcept { return id != UINT32_MAX; }
};

/// Linear record of primitive operations for reverse-mode differentiation.
///
/// Values are immutable once recorded. backward() walks the record in reverse
/// creation order, so gradients are bitwise reproducible for a fixed forward
/// sequence. A Tape belongs to one thread.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::uint32_t self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) = default;
    Tape& operator=(Tape&&) = default;

    /// Non-trainable leaf. Throws ShapeError if any entry is not finite.
    Var constant(Dense value);
    /// Trainable leaf; receives a gradient in backward().
    Var parameter(Dense value);

    /// Records an op output. The node requires a gradient iff any parent does;
    /// `fn` is dropped otherwise.
    Var record(Dense value, std::initializer_list<Var> parents, BackwardFn fn);
    Var record(Dense value, std::span<const Var> parents, BackwardFn fn);

    const Dense& value(Var v) const { return nodes_.at(v.id).value; }
    bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

    /// Gradient after backward(); zeros when nothing flowed into v.
    Dense grad(Var v) const;
    /// Accumulation target used by backward functions (lazily zero-initialised).
    Dense& grad_ref(std::uint32_t id);
    Dense& grad_ref(Var v) { return grad_ref(v.id); }
    const Dense& out_grad(std::uint32_t self) const { return nodes_[self].grad; }

    /// Seeds d(loss)/d(loss) = 1 and propagates. Throws NotScalar unless loss is 1x1.
    void backward(Var loss);

    std::size_t size() const noexcept { return nodes_.size(); }

    // Non-smoothness diagnostics: ops with a kink (relu, abs, step gates,
    // eigenvalue floors) report the signed distance of each argument to its
    // kink. With a positive margin, distances inside it are counted; with
    // branch tracking on, the side of every kink is folded into a hash so two
    // evaluations can be compared for a branch change.
    void set_kink_margin(double margin) noexcept { kink_margin_ = margin; }
    double kink_margin() const noexcept { return kink_margin_; }
    void set_branch_tracking(bool on) noexcept { track_branches_ = on; }
    std::uint64_t branch_hash() const noexcept { return branch_hash_; }
    bool watching_kinks() const noexcept { return kink_margin_ > 0.0 || track_branches_; }
    void check_kink(double distance) noexcept {
        if (kink_margin_ > 0.0 && distance < kink_margin_ && distance > -kink_margin_) ++kink_hits_;
        if (track_branches_) {
            const std::uint64_t side = distance > 0.0 ? 2 : (distance < 0.0 ? 0 : 1);
            branch_hash_ = (branch_hash_ ^ side) * 0x100000001b3ULL;
        }
    }
    std::size_t kink_hits() const noexcept { return kink_hits_; }

private:
    struct Node {
        Dense value;
        Dense grad;
        BackwardFn backward;
        bool requires_grad = false;
        bool has_grad = false;
    };
    std::vector<Node> nodes_;
    double kink_margin_ = 0.0;
    std::size_t kink_hits_ = 0;
    bool track_branches_ = false;
    std::uint64_t branch_hash_ = 0xcbf29ce484222325ULL;
};

using Index = std::shared_ptr<const std::vector<int>>;
inline Index make_index(std::vector<int> idx) { return std::make_shared<const std::vector<int>>(std::move(idx)); }

// ---- elementwise / linear algebra -----------------------------------------

Var matmul(Tape& t, Var a, Var b);
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var hadamard(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double s);
Var add_scalar(Tape& t, Var a, double s);
/// a + 1 * bias, bias is 1 x cols(a).
Var add_row(Tape& t, Var a, Var bias);

Var relu(Tape& t, Var a);
/// ELU with unit scale: x for x > 0, exp(x) - 1 otherwise.
Var elu(Tape& t, Var a);
Var tanh(Tape& t, Var a);
Var sigmoid(Tape& t, Var a);
/// log(1 + exp(x)), evaluated stably.
Var softplus(Tape& t, Var a);
Var abs(Tape& t, Var a);

// ---- structural -------------------------------------------------------------

Var concat_cols(Tape& t, std::initializer_list<Var> parts);
Var gather_rows(Tape& t, Var a, Index rows);
/// Row-major reinterpretation; element count must match.
Var reshape(Tape& t, Var a, Eigen::Index rows, Eigen::Index cols);
Var row_mean(Tape& t, Var a);
/// Per-row squared Euclidean norm, rows x 1.
Var row_squared_norm(Tape& t, Var a);
Var sum(Tape& t, Var a);

/// Row r of x multiplied by v[r mod d]; v is 1 x d. The only broadcast besides add_row.
Var stalk_scale(Tape& t, Var x, Var v);

// ---- block-sparse -----------------------------------------------------------

/// out = A x (or A^T x) where A has `pattern` and stacked blocks `blocks`.
/// Differentiable in both the blocks and x.
Var block_apply(Tape& t, std::shared_ptr<const BlockPattern> pattern, Var blocks, Var x, bool transpose = false);

/// (I_n (x) W) x: every d x f node block of x left-multiplied by the d x d matrix W.
Var block_left_mul(Tape& t, Var w, Var x);

/// out_k = A_k B_{idx[k]} for stacked d x d blocks.
Var block_gather_matmul(Tape& t, Var a, Var b, Index idx);

/// out_m = sum_{k : idx[k] = m} A_k^T A_k, with `count` output blocks.
Var block_gram_scatter(Tape& t, Var a, Index idx, int count);

// ---- loss -------------------------------------------------------------------

/// Mean softmax cross-entropy over rows with mask[row] != 0. Throws EmptyMask.
Var softmax_cross_entropy(Tape& t, Var logits, std::span<const int> labels, std::span<const std::uint8_t> mask);

}  // namespace nlsd::ad
