#include "hsr/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cassert>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "hsr/csv.hpp"

namespace hsr::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

MapMat as_mat(std::vector<double>& v, std::size_t rows, std::size_t cols) {
    return MapMat(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
ConstMapMat as_mat(const std::vector<double>& v, std::size_t rows, std::size_t cols) {
    return ConstMapMat(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

bool wants_grad(const Node* n) { return n->requires_grad; }

void require(bool cond, const std::string& what) {
    if (!cond) throw Error(what);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw Error(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    }
}

#ifndef NDEBUG
void assert_finite(const std::vector<double>& v) {
    for (double x : v) assert(std::isfinite(x) && "non-finite tensor value");
}
#else
void assert_finite(const std::vector<double>&) {}
#endif

}  // namespace

std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
    return s + "]";
}

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
    if (values.size() != ad::numel(shape)) throw Error("constant: value count does not match shape " + to_string(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    return Tensor(std::move(n));
}

Tensor Tensor::zeros(Shape shape) {
    const std::size_t count = ad::numel(shape);
    return constant(std::move(shape), std::vector<double>(count, 0.0));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
    Tensor t = constant(std::move(shape), std::move(values));
    t.node()->requires_grad = true;
    return t;
}

Tensor Tensor::placeholder(Shape shape) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    return Tensor(std::move(n));
}

double Tensor::item() const {
    if (numel() != 1) throw Error("item() on a tensor of shape " + to_string(shape()));
    return node_->value.at(0);
}

Tensor Tape::record(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                    std::function<void(Node&)> backward) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->tape = this;
    if (!shape_only_) assert_finite(n->value);
    for (const auto& in : inputs) {
        if (!in.defined()) continue;
        n->requires_grad = n->requires_grad || in.requires_grad();
    }
    if (n->requires_grad && !shape_only_) {
        for (auto& in : inputs) n->inputs.push_back(in.shared());
        n->backward = std::move(backward);
    }
    nodes_.push_back(n);
    return Tensor(std::move(n));
}

void Tape::backward(const Tensor& loss) {
    if (shape_only_) throw Error("backward on a shape-only tape");
    if (backward_done_) throw Error("backward called twice on the same tape without reset()");
    if (!loss.defined() || loss.numel() != 1) throw Error("backward needs a scalar loss");
    if (loss.node()->tape != this) throw Error("backward: loss was not recorded on this tape");
    backward_done_ = true;
    if (!loss.requires_grad()) return;
    loss.node()->ensure_grad()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        Node& n = **it;
        if (n.backward && !n.grad.empty()) n.backward(n);
    }
}

void Tape::reset() {
    nodes_.clear();
    backward_done_ = false;
    macs_ = 0;
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(Tape& t, const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> v;
    if (!t.shape_only()) {
        v = a.values();
        for (std::size_t i = 0; i < v.size(); ++i) v[i] += b.values()[i];
    }
    return t.record(a.shape(), std::move(v), {a, b}, [](Node& o) {
        for (int k = 0; k < 2; ++k) {
            Node* in = o.inputs[static_cast<std::size_t>(k)].get();
            if (!wants_grad(in)) continue;
            auto& g = in->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
        }
    });
}

Tensor sub(Tape& t, const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> v;
    if (!t.shape_only()) {
        v = a.values();
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= b.values()[i];
    }
    return t.record(a.shape(), std::move(v), {a, b}, [](Node& o) {
        if (Node* in = o.inputs[0].get(); wants_grad(in)) {
            auto& g = in->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
        }
        if (Node* in = o.inputs[1].get(); wants_grad(in)) {
            auto& g = in->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
        }
    });
}

Tensor mul(Tape& t, const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> v;
    if (!t.shape_only()) {
        v = a.values();
        for (std::size_t i = 0; i < v.size(); ++i) v[i] *= b.values()[i];
    }
    t.add_macs(a.numel());
    return t.record(a.shape(), std::move(v), {a, b}, [](Node& o) {
        Node* x = o.inputs[0].get();
        Node* y = o.inputs[1].get();
        if (wants_grad(x)) {
            auto& g = x->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * y->value[i];
        }
        if (wants_grad(y)) {
            auto& g = y->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * x->value[i];
        }
    });
}

Tensor scale(Tape& t, const Tensor& x, double c) {
    std::vector<double> v;
    if (!t.shape_only()) {
        v = x.values();
        for (double& e : v) e *= c;
    }
    return t.record(x.shape(), std::move(v), {x}, [c](Node& o) {
        auto& g = o.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * o.grad[i];
    });
}

Tensor scale_by(Tape& t, const Tensor& x, const Tensor& s) {
    require(s.numel() == 1, "scale_by: scale tensor must hold exactly one value");
    std::vector<double> v;
    if (!t.shape_only()) {
        v = x.values();
        const double c = s.values()[0];
        for (double& e : v) e *= c;
    }
    t.add_macs(x.numel());
    return t.record(x.shape(), std::move(v), {x, s}, [](Node& o) {
        Node* xin = o.inputs[0].get();
        Node* sin = o.inputs[1].get();
        if (wants_grad(xin)) {
            auto& g = xin->ensure_grad();
            const double c = sin->value[0];
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * o.grad[i];
        }
        if (wants_grad(sin)) {
            double acc = 0.0;
            for (std::size_t i = 0; i < o.grad.size(); ++i) acc += o.grad[i] * xin->value[i];
            sin->ensure_grad()[0] += acc;
        }
    });
}

Tensor relu(Tape& t, const Tensor& x) {
    std::vector<double> v;
    if (!t.shape_only()) {
        v = x.values();
        for (double& e : v) e = e > 0.0 ? e : 0.0;
    }
    return t.record(x.shape(), std::move(v), {x}, [](Node& o) {
        Node* in = o.inputs[0].get();
        auto& g = in->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (in->value[i] > 0.0) g[i] += o.grad[i];
    });
}

Tensor sigmoid(Tape& t, const Tensor& x) {
    std::vector<double> v;
    if (!t.shape_only()) {
        v = x.values();
        for (double& e : v) e = 1.0 / (1.0 + std::exp(-e));
    }
    return t.record(x.shape(), std::move(v), {x}, [](Node& o) {
        auto& g = o.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * o.value[i] * (1.0 - o.value[i]);
    });
}

Tensor gelu(Tape& t, const Tensor& x) {
    std::vector<double> v;
    if (!t.shape_only()) {
        v = x.values();
        for (double& e : v) e = 0.5 * e * std::erfc(-e / std::numbers::sqrt2);
    }
    return t.record(x.shape(), std::move(v), {x}, [](Node& o) {
        const auto& in = o.inputs[0]->value;
        auto& g = o.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double z = in[i];
            const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
            const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
            g[i] += o.grad[i] * (cdf + z * pdf);
        }
    });
}

// ---------------------------------------------------------------------------
// Reductions and reshaping

Tensor sum(Tape& t, const Tensor& x) {
    std::vector<double> v;
    if (!t.shape_only()) v = {std::accumulate(x.values().begin(), x.values().end(), 0.0)};
    return t.record({1}, std::move(v), {x}, [](Node& o) {
        auto& g = o.inputs[0]->ensure_grad();
        for (double& e : g) e += o.grad[0];
    });
}

Tensor mean(Tape& t, const Tensor& x) {
    const double inv = 1.0 / static_cast<double>(x.numel());
    std::vector<double> v;
    if (!t.shape_only()) v = {std::accumulate(x.values().begin(), x.values().end(), 0.0) * inv};
    return t.record({1}, std::move(v), {x}, [inv](Node& o) {
        auto& g = o.inputs[0]->ensure_grad();
        for (double& e : g) e += o.grad[0] * inv;
    });
}

Tensor reshape(Tape& t, const Tensor& x, Shape shape) {
    if (numel(shape) != x.numel()) {
        throw Error("reshape: " + to_string(x.shape()) + " cannot become " + to_string(shape));
    }
    std::vector<double> v;
    if (!t.shape_only()) v = x.values();
    return t.record(std::move(shape), std::move(v), {x}, [](Node& o) {
        auto& g = o.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    });
}

// ---------------------------------------------------------------------------
// Convolution

namespace {

// Rows (ci, ky, kx), columns (oy, ox) of the zero-padded receptive fields.
std::vector<double> im2col(const double* x, std::size_t cin, std::size_t h, std::size_t w, std::size_t k,
                           std::size_t pad, std::size_t ho, std::size_t wo) {
    std::vector<double> col(cin * k * k * ho * wo, 0.0);
    std::size_t row = 0;
    for (std::size_t c = 0; c < cin; ++c) {
        const double* plane = x + c * h * w;
        for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx, ++row) {
                double* dst = col.data() + row * ho * wo;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                    const double* src = plane + static_cast<std::size_t>(iy) * w;
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                        dst[oy * wo + ox] = src[ix];
                    }
                }
            }
        }
    }
    return col;
}

void col2im_add(const double* col, double* x, std::size_t cin, std::size_t h, std::size_t w, std::size_t k,
                std::size_t pad, std::size_t ho, std::size_t wo) {
    std::size_t row = 0;
    for (std::size_t c = 0; c < cin; ++c) {
        double* plane = x + c * h * w;
        for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx, ++row) {
                const double* src = col + row * ho * wo;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                    double* dst = plane + static_cast<std::size_t>(iy) * w;
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                        dst[ix] += src[oy * wo + ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(Tape& t, const Tensor& x, const Tensor& w, const Tensor& b, Padding padding) {
    require(x.rank() == 3, "conv2d: input must be [C,H,W], got " + to_string(x.shape()));
    require(w.rank() == 4 && w.dim(2) == w.dim(3), "conv2d: weight must be [Cout,Cin,k,k], got " + to_string(w.shape()));
    const std::size_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const std::size_t cout = w.dim(0), k = w.dim(2);
    require(k % 2 == 1, "conv2d: kernel size must be odd");
    if (w.dim(1) != cin) {
        throw Error("conv2d: channel mismatch, input has " + std::to_string(cin) + " channels, weight expects " +
                    std::to_string(w.dim(1)));
    }
    if (b.defined()) require(b.numel() == cout, "conv2d: bias must have Cout entries");
    const std::size_t pad = padding == Padding::Same ? (k - 1) / 2 : 0;
    require(h + 2 * pad >= k && wd + 2 * pad >= k, "conv2d: input smaller than kernel");
    const std::size_t ho = h + 2 * pad - k + 1, wo = wd + 2 * pad - k + 1;
    const std::size_t rows = cin * k * k, cols = ho * wo;
    t.add_macs(static_cast<std::uint64_t>(cout) * rows * cols);
    if (t.shape_only()) return t.record({cout, ho, wo}, {}, {x, w, b}, {});

    const bool direct = (k == 1 && pad == 0);
    auto col = std::make_shared<std::vector<double>>();
    if (!direct) *col = im2col(x.values().data(), cin, h, wd, k, pad, ho, wo);
    const std::vector<double>& colv = direct ? x.values() : *col;

    std::vector<double> out(cout * cols);
    auto Y = as_mat(out, cout, cols);
    Y.noalias() = as_mat(w.values(), cout, rows) * as_mat(colv, rows, cols);
    if (b.defined())
        for (std::size_t o = 0; o < cout; ++o) Y.row(static_cast<Eigen::Index>(o)).array() += b.values()[o];

    return t.record({cout, ho, wo}, std::move(out), {x, w, b},
                    [=](Node& o) {
                        Node* xin = o.inputs[0].get();
                        Node* win = o.inputs[1].get();
                        Node* bin = o.inputs.size() > 2 ? o.inputs[2].get() : nullptr;
                        const auto G = as_mat(std::as_const(o.grad), cout, cols);
                        const std::vector<double>& cv = direct ? xin->value : *col;
                        if (wants_grad(win)) {
                            as_mat(win->ensure_grad(), cout, rows).noalias() += G * as_mat(cv, rows, cols).transpose();
                        }
                        if (bin && wants_grad(bin)) {
                            auto& gb = bin->ensure_grad();
                            for (std::size_t c = 0; c < cout; ++c) gb[c] += G.row(static_cast<Eigen::Index>(c)).sum();
                        }
                        if (wants_grad(xin)) {
                            if (direct) {
                                as_mat(xin->ensure_grad(), rows, cols).noalias() +=
                                    as_mat(win->value, cout, rows).transpose() * G;
                            } else {
                                std::vector<double> gcol(rows * cols);
                                as_mat(gcol, rows, cols).noalias() = as_mat(win->value, cout, rows).transpose() * G;
                                col2im_add(gcol.data(), xin->ensure_grad().data(), cin, h, wd, k, pad, ho, wo);
                            }
                        }
                    });
}

Tensor depthwise_conv2d(Tape& t, const Tensor& x, const Tensor& w, const Tensor& b) {
    require(x.rank() == 3, "depthwise_conv2d: input must be [C,H,W]");
    const std::size_t c = x.dim(0), h = x.dim(1), wd = x.dim(2);
    require(w.rank() == 4 && w.dim(0) == c && w.dim(1) == 1 && w.dim(2) == w.dim(3) && w.dim(2) % 2 == 1,
            "depthwise_conv2d: weight must be [C,1,k,k] with odd k, got " + to_string(w.shape()));
    if (b.defined()) require(b.numel() == c, "depthwise_conv2d: bias must have C entries");
    const std::size_t k = w.dim(2);
    const auto pad = static_cast<std::ptrdiff_t>((k - 1) / 2);
    t.add_macs(static_cast<std::uint64_t>(c) * k * k * h * wd);
    if (t.shape_only()) return t.record({c, h, wd}, {}, {x, w, b}, {});

    // visits every (channel, output, tap) with an in-bounds input index
    auto for_each_tap = [=](auto&& fn) {
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t oy = 0; oy < h; ++oy)
                for (std::size_t ox = 0; ox < wd; ++ox)
                    for (std::size_t ky = 0; ky < k; ++ky) {
                        const auto iy = static_cast<std::ptrdiff_t>(oy + ky) - pad;
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                        for (std::size_t kx = 0; kx < k; ++kx) {
                            const auto ix = static_cast<std::ptrdiff_t>(ox + kx) - pad;
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
                            fn((ch * h + oy) * wd + ox, (ch * h + static_cast<std::size_t>(iy)) * wd + static_cast<std::size_t>(ix),
                               (ch * k + ky) * k + kx);
                        }
                    }
    };

    std::vector<double> out(c * h * wd, 0.0);
    const auto& xv = x.values();
    const auto& wv = w.values();
    for_each_tap([&](std::size_t o, std::size_t i, std::size_t wi) { out[o] += wv[wi] * xv[i]; });
    if (b.defined())
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t p = 0; p < h * wd; ++p) out[ch * h * wd + p] += b.values()[ch];

    return t.record({c, h, wd}, std::move(out), {x, w, b}, [=](Node& o) {
        Node* xin = o.inputs[0].get();
        Node* win = o.inputs[1].get();
        Node* bin = o.inputs.size() > 2 ? o.inputs[2].get() : nullptr;
        if (wants_grad(win)) {
            auto& gw = win->ensure_grad();
            for_each_tap([&](std::size_t oi, std::size_t i, std::size_t wi) { gw[wi] += o.grad[oi] * xin->value[i]; });
        }
        if (wants_grad(xin)) {
            auto& gx = xin->ensure_grad();
            for_each_tap([&](std::size_t oi, std::size_t i, std::size_t wi) { gx[i] += o.grad[oi] * win->value[wi]; });
        }
        if (bin && wants_grad(bin)) {
            auto& gb = bin->ensure_grad();
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t p = 0; p < h * wd; ++p) gb[ch] += o.grad[ch * h * wd + p];
        }
    });
}

// ---------------------------------------------------------------------------
// Channel layout

Tensor concat_channels(Tape& t, std::span<const Tensor> parts) {
    require(!parts.empty(), "concat_channels: no inputs");
    Shape trailing(parts[0].shape().begin() + 1, parts[0].shape().end());
    std::size_t channels = 0;
    for (const auto& p : parts) {
        Shape tr(p.shape().begin() + 1, p.shape().end());
        if (tr != trailing) {
            throw Error("concat_channels: spatial mismatch " + to_string(parts[0].shape()) + " vs " + to_string(p.shape()));
        }
        channels += p.dim(0);
    }
    Shape shape{channels};
    shape.insert(shape.end(), trailing.begin(), trailing.end());
    std::vector<double> v;
    if (!t.shape_only()) {
        v.reserve(numel(shape));
        for (const auto& p : parts) v.insert(v.end(), p.values().begin(), p.values().end());
    }
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    return t.record(std::move(shape), std::move(v), std::move(inputs), [](Node& o) {
        std::size_t offset = 0;
        for (auto& in : o.inputs) {
            const std::size_t n = numel(in->shape);
            if (wants_grad(in.get())) {
                auto& g = in->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[offset + i];
            }
            offset += n;
        }
    });
}

Tensor concat_channels(Tape& t, std::initializer_list<Tensor> parts) {
    return concat_channels(t, std::span<const Tensor>(parts.begin(), parts.size()));
}

Tensor slice_channels(Tape& t, const Tensor& x, std::size_t begin, std::size_t count) {
    require(x.rank() >= 1 && begin + count <= x.dim(0) && count > 0, "slice_channels: range out of bounds");
    Shape shape = x.shape();
    shape[0] = count;
    const std::size_t inner = x.numel() / x.dim(0);
    std::vector<double> v;
    if (!t.shape_only()) {
        v.assign(x.values().begin() + static_cast<std::ptrdiff_t>(begin * inner),
                 x.values().begin() + static_cast<std::ptrdiff_t>((begin + count) * inner));
    }
    return t.record(std::move(shape), std::move(v), {x}, [begin, inner](Node& o) {
        auto& g = o.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[begin * inner + i] += o.grad[i];
    });
}

Tensor pixel_unshuffle(Tape& t, const Tensor& x, std::size_t r) {
    require(x.rank() == 3 && r >= 1, "pixel_unshuffle: input must be [C,H,W] and r >= 1");
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (h % r != 0 || w % r != 0) {
        throw Error("pixel_unshuffle: H and W must be divisible by " + std::to_string(r) + ", got " + to_string(x.shape()));
    }
    const std::size_t ho = h / r, wo = w / r;
    // index map out -> in
    auto src = std::make_shared<std::vector<std::size_t>>(c * h * w);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t dy = 0; dy < r; ++dy)
            for (std::size_t dx = 0; dx < r; ++dx)
                for (std::size_t i = 0; i < ho; ++i)
                    for (std::size_t j = 0; j < wo; ++j)
                        (*src)[((ch * r * r + dy * r + dx) * ho + i) * wo + j] = (ch * h + i * r + dy) * w + j * r + dx;
    std::vector<double> v;
    if (!t.shape_only()) {
        v.resize(src->size());
        for (std::size_t o = 0; o < v.size(); ++o) v[o] = x.values()[(*src)[o]];
    }
    return t.record({c * r * r, ho, wo}, std::move(v), {x}, [src](Node& o) {
        auto& g = o.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[(*src)[i]] += o.grad[i];
    });
}

Tensor pixel_shuffle(Tape& t, const Tensor& x, std::size_t r) {
    require(x.rank() == 3 && r >= 1, "pixel_shuffle: input must be [C,H,W] and r >= 1");
    const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (cin % (r * r) != 0) {
        throw Error("pixel_shuffle: channels must be divisible by " + std::to_string(r * r) + ", got " + to_string(x.shape()));
    }
    const std::size_t c = cin / (r * r), ho = h * r, wo = w * r;
    // index map out -> in
    auto src = std::make_shared<std::vector<std::size_t>>(cin * h * w);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t dy = 0; dy < r; ++dy)
            for (std::size_t dx = 0; dx < r; ++dx)
                for (std::size_t i = 0; i < h; ++i)
                    for (std::size_t j = 0; j < w; ++j)
                        (*src)[(ch * ho + i * r + dy) * wo + j * r + dx] = ((ch * r * r + dy * r + dx) * h + i) * w + j;
    std::vector<double> v;
    if (!t.shape_only()) {
        v.resize(src->size());
        for (std::size_t o = 0; o < v.size(); ++o) v[o] = x.values()[(*src)[o]];
    }
    return t.record({c, ho, wo}, std::move(v), {x}, [src](Node& o) {
        auto& g = o.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[(*src)[i]] += o.grad[i];
    });
}

// ---------------------------------------------------------------------------
// Matrix ops

Tensor matmul(Tape& t, const Tensor& a, const Tensor& b) {
    require(a.rank() == 2 && b.rank() == 2, "matmul: operands must be 2-D");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) throw Error("matmul: shape mismatch " + to_string(a.shape()) + " x " + to_string(b.shape()));
    t.add_macs(static_cast<std::uint64_t>(m) * k * n);
    std::vector<double> v;
    if (!t.shape_only()) {
        v.resize(m * n);
        as_mat(v, m, n).noalias() = as_mat(a.values(), m, k) * as_mat(b.values(), k, n);
    }
    return t.record({m, n}, std::move(v), {a, b}, [m, k, n](Node& o) {
        Node* an = o.inputs[0].get();
        Node* bn = o.inputs[1].get();
        const auto G = as_mat(std::as_const(o.grad), m, n);
        if (wants_grad(an)) as_mat(an->ensure_grad(), m, k).noalias() += G * as_mat(bn->value, k, n).transpose();
        if (wants_grad(bn)) as_mat(bn->ensure_grad(), k, n).noalias() += as_mat(an->value, m, k).transpose() * G;
    });
}

Tensor transpose(Tape& t, const Tensor& a) {
    require(a.rank() == 2, "transpose: operand must be 2-D");
    const std::size_t m = a.dim(0), n = a.dim(1);
    std::vector<double> v;
    if (!t.shape_only()) {
        v.resize(m * n);
        as_mat(v, n, m) = as_mat(a.values(), m, n).transpose();
    }
    return t.record({n, m}, std::move(v), {a}, [m, n](Node& o) {
        as_mat(o.inputs[0]->ensure_grad(), m, n) += as_mat(std::as_const(o.grad), n, m).transpose();
    });
}

Tensor softmax_last_axis(Tape& t, const Tensor& x) {
    require(x.rank() >= 1, "softmax: scalar input");
    const std::size_t cols = x.shape().back();
    const std::size_t rows = x.numel() / cols;
    std::vector<double> v;
    if (!t.shape_only()) {
        v = x.values();
        for (std::size_t r = 0; r < rows; ++r) {
            double* row = v.data() + r * cols;
            const double mx = *std::max_element(row, row + cols);
            double total = 0.0;
            for (std::size_t j = 0; j < cols; ++j) total += (row[j] = std::exp(row[j] - mx));
            for (std::size_t j = 0; j < cols; ++j) row[j] /= total;
        }
    }
    return t.record(x.shape(), std::move(v), {x}, [rows, cols](Node& o) {
        auto& g = o.inputs[0]->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = o.value.data() + r * cols;
            const double* gy = o.grad.data() + r * cols;
            double dot = 0.0;
            for (std::size_t j = 0; j < cols; ++j) dot += gy[j] * y[j];
            for (std::size_t j = 0; j < cols; ++j) g[r * cols + j] += y[j] * (gy[j] - dot);
        }
    });
}

Tensor l2_normalize_last_axis(Tape& t, const Tensor& x, double eps) {
    require(x.rank() >= 1, "l2_normalize: scalar input");
    const std::size_t cols = x.shape().back();
    const std::size_t rows = x.numel() / cols;
    auto norms = std::make_shared<std::vector<double>>(rows);
    std::vector<double> v;
    if (!t.shape_only()) {
        v = x.values();
        for (std::size_t r = 0; r < rows; ++r) {
            double* row = v.data() + r * cols;
            double n2 = 0.0;
            for (std::size_t j = 0; j < cols; ++j) n2 += row[j] * row[j];
            const double n = std::max(std::sqrt(n2), eps);
            (*norms)[r] = n;
            for (std::size_t j = 0; j < cols; ++j) row[j] /= n;
        }
    }
    return t.record(x.shape(), std::move(v), {x}, [rows, cols, norms, eps](Node& o) {
        Node* in = o.inputs[0].get();
        auto& g = in->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const double n = (*norms)[r];
            const double* y = o.value.data() + r * cols;
            const double* gy = o.grad.data() + r * cols;
            if (n <= eps) {
                // clamped norm is constant
                for (std::size_t j = 0; j < cols; ++j) g[r * cols + j] += gy[j] / n;
                continue;
            }
            double dot = 0.0;
            for (std::size_t j = 0; j < cols; ++j) dot += gy[j] * y[j];
            for (std::size_t j = 0; j < cols; ++j) g[r * cols + j] += (gy[j] - y[j] * dot) / n;
        }
    });
}

Tensor channel_mean(Tape& t, const Tensor& x) {
    require(x.rank() == 3, "channel_mean: input must be [C,H,W]");
    const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
    std::vector<double> v;
    if (!t.shape_only()) {
        v.assign(c, 0.0);
        for (std::size_t ch = 0; ch < c; ++ch) {
            double s = 0.0;
            for (std::size_t p = 0; p < hw; ++p) s += x.values()[ch * hw + p];
            v[ch] = s / static_cast<double>(hw);
        }
    }
    return t.record({c}, std::move(v), {x}, [c, hw](Node& o) {
        auto& g = o.inputs[0]->ensure_grad();
        const double inv = 1.0 / static_cast<double>(hw);
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t p = 0; p < hw; ++p) g[ch * hw + p] += o.grad[ch] * inv;
    });
}

Tensor channel_scale(Tape& t, const Tensor& x, const Tensor& a) {
    require(x.rank() == 3 && a.numel() == x.dim(0), "channel_scale: need x[C,H,W] and a[C]");
    const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
    t.add_macs(x.numel());
    std::vector<double> v;
    if (!t.shape_only()) {
        v = x.values();
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t p = 0; p < hw; ++p) v[ch * hw + p] *= a.values()[ch];
    }
    return t.record(x.shape(), std::move(v), {x, a}, [c, hw](Node& o) {
        Node* xin = o.inputs[0].get();
        Node* ain = o.inputs[1].get();
        if (wants_grad(xin)) {
            auto& g = xin->ensure_grad();
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t p = 0; p < hw; ++p) g[ch * hw + p] += o.grad[ch * hw + p] * ain->value[ch];
        }
        if (wants_grad(ain)) {
            auto& g = ain->ensure_grad();
            for (std::size_t ch = 0; ch < c; ++ch) {
                double s = 0.0;
                for (std::size_t p = 0; p < hw; ++p) s += o.grad[ch * hw + p] * xin->value[ch * hw + p];
                g[ch] += s;
            }
        }
    });
}

Tensor weighted_abs_error(Tape& t, const Tensor& x, std::span<const double> target, std::span<const double> weights,
                          double normalizer) {
    require(target.size() == x.numel() && weights.size() == x.numel(), "weighted_abs_error: size mismatch");
    require(normalizer > 0.0, "weighted_abs_error: normalizer must be positive");
    auto tgt = std::make_shared<std::vector<double>>(target.begin(), target.end());
    auto wts = std::make_shared<std::vector<double>>(weights.begin(), weights.end());
    std::vector<double> v;
    if (!t.shape_only()) {
        double s = 0.0;
        for (std::size_t i = 0; i < x.numel(); ++i) s += (*wts)[i] * std::abs(x.values()[i] - (*tgt)[i]);
        v = {s / normalizer};
    }
    return t.record({1}, std::move(v), {x}, [tgt, wts, normalizer](Node& o) {
        Node* in = o.inputs[0].get();
        auto& g = in->ensure_grad();
        const double scale = o.grad[0] / normalizer;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double d = in->value[i] - (*tgt)[i];
            const double sign = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
            g[i] += scale * (*wts)[i] * sign;
        }
    });
}

// ---------------------------------------------------------------------------
// Gradient check

GradCheckResult grad_check(const std::function<Tensor(Tape&)>& fn, std::span<const Tensor> params, double eps,
                           std::size_t max_coords, std::uint64_t seed, double floor) {
    std::vector<std::pair<std::size_t, std::size_t>> coords;
    for (std::size_t p = 0; p < params.size(); ++p) {
        params[p].node()->grad.clear();
        for (std::size_t i = 0; i < params[p].numel(); ++i) coords.emplace_back(p, i);
    }
    {
        Tape tape;
        Tensor out = fn(tape);
        if (out.numel() != 1) throw Error("grad_check: function output must be scalar, got " + to_string(out.shape()));
        tape.backward(out);
    }
    if (max_coords > 0 && coords.size() > max_coords) {
        Rng rng(seed);
        std::shuffle(coords.begin(), coords.end(), rng);
        coords.resize(max_coords);
        std::sort(coords.begin(), coords.end());
    }
    auto evaluate = [&]() {
        Tape tape;
        return fn(tape).item();
    };
    GradCheckResult res;
    for (auto [p, i] : coords) {
        Node* n = params[p].node();
        const double analytic = n->grad.empty() ? 0.0 : n->grad[i];
        const double saved = n->value[i];
        n->value[i] = saved + eps;
        const double plus = evaluate();
        n->value[i] = saved - eps;
        const double minus = evaluate();
        n->value[i] = saved;
        const double numeric = (plus - minus) / (2.0 * eps);
        const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
        res.max_rel_error = std::max(res.max_rel_error, std::abs(analytic - numeric) / denom);
        ++res.coordinates;
    }
    for (const auto& p : params) p.node()->grad.clear();
    return res;
}

// ---------------------------------------------------------------------------
// Parameter sets

Tensor& ParamSet::insert(const std::string& name, Tensor tensor) {
    if (index_.count(name)) throw Error("duplicate parameter name '" + name + "'");
    index_[name] = items_.size();
    items_.emplace_back(name, std::move(tensor));
    return items_.back().second;
}

Tensor& ParamSet::add_glorot(const std::string& name, Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    std::vector<double> v(numel(shape));
    for (double& e : v) e = u(rng);
    return insert(name, Tensor::parameter(std::move(shape), std::move(v)));
}

Tensor& ParamSet::add_constant(const std::string& name, Shape shape, double value) {
    std::vector<double> v(numel(shape), value);
    return insert(name, Tensor::parameter(std::move(shape), std::move(v)));
}

const Tensor& ParamSet::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter '" + name + "'");
    return items_[it->second].second;
}

Tensor& ParamSet::get(const std::string& name) {
    return const_cast<Tensor&>(std::as_const(*this).get(name));
}

std::vector<Tensor> ParamSet::tensors() const {
    std::vector<Tensor> out;
    for (const auto& [name, t] : items_) out.push_back(t);
    return out;
}

std::size_t ParamSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : items_) n += t.numel();
    return n;
}

void ParamSet::zero_grad() {
    for (auto& [name, t] : items_) t.zero_grad();
}

void ParamSet::save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write parameters " + path.string());
    for (const auto& [name, t] : items_) {
        out << name << " " << t.rank();
        for (auto d : t.shape()) out << " " << d;
        out << "\n";
        for (std::size_t i = 0; i < t.numel(); ++i) out << (i ? " " : "") << format_number(t.values()[i]);
        out << "\n";
    }
    if (!out) throw Error("failed writing parameters " + path.string());
}

void ParamSet::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open parameters " + path.string());
    std::string header, values;
    std::size_t loaded = 0;
    while (std::getline(in, header)) {
        if (header.empty()) continue;
        if (!std::getline(in, values)) throw Error("parameters " + path.string() + ": missing values line");
        std::istringstream hs(header);
        std::string name;
        std::size_t rank = 0;
        hs >> name >> rank;
        Shape shape(rank);
        for (auto& d : shape) hs >> d;
        Tensor& t = get(name);
        if (t.shape() != shape) throw Error("parameter '" + name + "' shape " + to_string(shape) + " != " + to_string(t.shape()));
        std::istringstream vs(values);
        std::string tok;
        for (std::size_t i = 0; i < t.numel(); ++i) {
            if (!(vs >> tok)) throw Error("parameter '" + name + "' has too few values");
            t.values()[i] = parse_number(tok);
        }
        ++loaded;
    }
    if (loaded != items_.size()) throw Error("parameters " + path.string() + ": expected " + std::to_string(items_.size()) + " tensors, got " + std::to_string(loaded));
}

}  // namespace hsr::ad
