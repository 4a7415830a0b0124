#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hsr/common.hpp"

// Dense reverse-mode automatic differentiation over 64-bit tensors.
//
// A Tape records every operation applied to tensors that take part in one
// forward pass. Tape::backward() walks the record in reverse and accumulates
// gradients (+=) into every reachable input that requires them. Parameters are
// leaf tensors that outlive tapes; their gradients accumulate across passes
// until zero_grad() is called.
//
// A tape created in shape-only mode propagates shapes and counts
// multiply-accumulates without touching values, so networks can be costed at
// sizes too large to evaluate.

namespace hsr::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class Tape;

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    const Tape* tape = nullptr;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    std::vector<double>& ensure_grad() {
        if (grad.empty()) grad.assign(numel(shape), 0.0);
        return grad;
    }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    /// Leaf without gradient (inputs, targets).
    static Tensor constant(Shape shape, std::vector<double> values);
    static Tensor zeros(Shape shape);
    /// Leaf that accumulates gradient.
    static Tensor parameter(Shape shape, std::vector<double> values);
    /// Shape without values, for shape-only tapes.
    static Tensor placeholder(Shape shape);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return ad::numel(node_->shape); }
    bool requires_grad() const { return node_->requires_grad; }

    const std::vector<double>& values() const { return node_->value; }
    std::vector<double>& values() { return node_->value; }
    /// Empty until a backward pass reaches this tensor.
    const std::vector<double>& grad() const { return node_->grad; }
    double item() const;
    void zero_grad() { node_->grad.clear(); }

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& shared() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

class Tape {
public:
    explicit Tape(bool shape_only = false) : shape_only_(shape_only) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool shape_only() const { return shape_only_; }

    /// Appends an op output. `backward` runs only when some input requires grad.
    Tensor record(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                  std::function<void(Node&)> backward);

    /// Seeds d(loss)/d(loss) = 1 and propagates. Throws if called twice without reset().
    void backward(const Tensor& loss);
    void reset();

    std::uint64_t macs() const { return macs_; }
    void add_macs(std::uint64_t n) { macs_ += n; }
    std::size_t size() const { return nodes_.size(); }

private:
    std::vector<std::shared_ptr<Node>> nodes_;
    bool shape_only_ = false;
    bool backward_done_ = false;
    std::uint64_t macs_ = 0;
};

enum class Padding { Same, Valid };

// Elementwise (identical shapes).
Tensor add(Tape& t, const Tensor& a, const Tensor& b);
Tensor sub(Tape& t, const Tensor& a, const Tensor& b);
Tensor mul(Tape& t, const Tensor& a, const Tensor& b);
Tensor scale(Tape& t, const Tensor& x, double c);
/// x multiplied by the single value held in `s` (shape [1]); gradient flows to both.
Tensor scale_by(Tape& t, const Tensor& x, const Tensor& s);
Tensor relu(Tape& t, const Tensor& x);
Tensor sigmoid(Tape& t, const Tensor& x);
/// Exact GELU, x * Phi(x).
Tensor gelu(Tape& t, const Tensor& x);

// Reductions and reshaping.
Tensor sum(Tape& t, const Tensor& x);
Tensor mean(Tape& t, const Tensor& x);
Tensor reshape(Tape& t, const Tensor& x, Shape shape);

/// Cross-correlation of x[Cin,H,W] with w[Cout,Cin,k,k] plus b[Cout] (b may be undefined). k odd.
Tensor conv2d(Tape& t, const Tensor& x, const Tensor& w, const Tensor& b, Padding padding = Padding::Same);
/// Per-channel k x k filter w[C,1,k,k] with zero "same" padding, plus b[C] (may be undefined).
Tensor depthwise_conv2d(Tape& t, const Tensor& x, const Tensor& w, const Tensor& b);

/// Stacks along the leading axis in argument order; trailing dims must agree.
Tensor concat_channels(Tape& t, std::span<const Tensor> parts);
Tensor concat_channels(Tape& t, std::initializer_list<Tensor> parts);
/// Leading-axis slice [begin, begin+count).
Tensor slice_channels(Tape& t, const Tensor& x, std::size_t begin, std::size_t count);

/// [C,H,W] -> [C*r*r, H/r, W/r]; out[c*r*r + dy*r + dx, i, j] = x[c, i*r+dy, j*r+dx].
Tensor pixel_unshuffle(Tape& t, const Tensor& x, std::size_t r);
/// Exact inverse of pixel_unshuffle.
Tensor pixel_shuffle(Tape& t, const Tensor& x, std::size_t r);

Tensor matmul(Tape& t, const Tensor& a, const Tensor& b);
Tensor transpose(Tape& t, const Tensor& a);
/// Softmax over the last axis with max subtraction.
Tensor softmax_last_axis(Tape& t, const Tensor& x);
/// Each last-axis row divided by max(||row||_2, eps).
Tensor l2_normalize_last_axis(Tape& t, const Tensor& x, double eps = 1e-12);

/// Global average pool [C,H,W] -> [C].
Tensor channel_mean(Tape& t, const Tensor& x);
/// x[C,H,W] scaled by a[C] per channel.
Tensor channel_scale(Tape& t, const Tensor& x, const Tensor& a);

/// sum_i weights[i] * |x[i] - target[i]| / normalizer. Gradient flows to x only.
Tensor weighted_abs_error(Tape& t, const Tensor& x, std::span<const double> target, std::span<const double> weights,
                          double normalizer);

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t coordinates = 0;
};

/// Central-difference check of d(fn)/d(params). Relative error per coordinate is
/// |analytic - numeric| / max(|analytic|, |numeric|, floor). When `max_coords` > 0
/// and smaller than the parameter count, a seeded random subset is checked.
GradCheckResult grad_check(const std::function<Tensor(Tape&)>& fn, std::span<const Tensor> params, double eps = 1e-5,
                           std::size_t max_coords = 0, std::uint64_t seed = 0, double floor = 1e-6);

/// Named parameter tensors in insertion order.
class ParamSet {
public:
    /// Glorot-uniform weights, i.e. uniform in +-sqrt(6/(fan_in+fan_out)).
    Tensor& add_glorot(const std::string& name, Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);
    Tensor& add_constant(const std::string& name, Shape shape, double value);

    const Tensor& get(const std::string& name) const;
    Tensor& get(const std::string& name);
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
    std::vector<Tensor> tensors() const;
    std::size_t scalar_count() const;
    void zero_grad();

    /// Text format: "<name> <rank> <dims...>" line followed by one line of values, per tensor.
    void save(const std::filesystem::path& path) const;
    /// Overwrites values of existing tensors; names and shapes must match.
    void load(const std::filesystem::path& path);

private:
    Tensor& insert(const std::string& name, Tensor tensor);
    std::vector<std::pair<std::string, Tensor>> items_;
    std::map<std::string, std::size_t> index_;
};

}  // namespace hsr::ad
