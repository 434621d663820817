#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace sgstereo::ad {

struct Shape {
    std::vector<std::size_t> dims;

    Shape() = default;
    Shape(std::initializer_list<std::size_t> d) : dims(d) {}

    std::size_t total() const {
        std::size_t t = 1;
        for (auto d : dims) t *= d;
        return dims.empty() ? 0 : t;
    }
    std::size_t rank() const { return dims.size(); }
    std::size_t operator[](std::size_t i) const { return dims[i]; }
    bool operator==(const Shape&) const = default;
};

/// Trainable buffer. Gradients accumulate across backward calls until
/// zero_grad(); value and grad always have identical extents.
struct Parameter {
    std::string name;
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;

    Parameter() = default;
    Parameter(std::string name_, Shape shape_)
        : name(std::move(name_)), shape(std::move(shape_)),
          value(shape.total(), 0.0), grad(shape.total(), 0.0) {}

    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

/// Handle to a tape node.
struct Value {
    int id = -1;
};

/// Append-only reverse-mode differentiation record. Build the expression
/// once, then call forward()/backward() per step; node values are
/// recomputed from the current Parameter contents on every forward pass.
/// All reductions use a fixed left-to-right summation order, so repeated
/// runs are bit-identical. One tape per training context; not thread-safe
/// for concurrent mutation.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) noexcept;
    Tape& operator=(Tape&&) noexcept;

    Value param(Parameter& p);
    Value constant(Shape shape, std::vector<double> data);

    // elementwise (operands must share a shape)
    Value add(Value a, Value b);
    Value sub(Value a, Value b);
    Value mul(Value a, Value b);
    Value div(Value a, Value b);
    Value scale(Value a, double c);
    /// Multiply every entry of a by the scalar node s (shape {1}).
    Value scale_by(Value a, Value s);
    Value abs(Value a);
    Value relu(Value a);
    Value log_floored(Value a, double eps = 1e-12);

    /// 3x3 convolution, stride 1, zero padding. x: [Cin,H,W],
    /// w: [Cout,Cin,3,3], b: [Cout] -> [Cout,H,W].
    Value conv2d_3x3(Value x, Value w, Value b);

    /// Softmax along axis 0 of [D, ...], independently per trailing column.
    Value softmax_bins(Value x);

    /// Weighted index sum: out[col] = Σ_d p[d,col] * bin_values[d].
    /// [D, rest...] -> [rest...]; a plain [D] vector yields a scalar.
    Value bin_expect(Value p, std::vector<double> bin_values);

    /// Per-column dot product / Euclidean norm along axis 0.
    Value bin_dot(Value a, Value b);
    Value bin_norm(Value a);

    // full reductions -> scalar
    Value sum(Value a);
    Value dot(Value a, Value b);
    Value norm(Value a);

    /// Corner-aligned spatial upsampling of [D,H,W] -> [D,H*f,W*f].
    Value upsample_spatial(Value x, int factor);
    /// Knot-preserving disparity upsampling of [D,H,W] -> [(D-1)*f+1,H,W].
    Value upsample_bins(Value x, int factor);

    // fused masked losses over per-pixel distributions [D, N] / [D, H, W]
    // (mask has one entry per trailing column; q matches p's shape)
    Value masked_vec_l1_mean(Value p, std::vector<double> q, std::vector<std::uint8_t> mask);
    Value masked_ce_mean(Value p, std::vector<double> q, std::vector<std::uint8_t> mask);
    Value masked_negcos_mean(Value p, std::vector<double> q, std::vector<std::uint8_t> mask);
    /// Smooth-L1 between per-pixel predictions [N] and targets, masked mean.
    Value masked_smooth_l1_mean(Value pred, std::vector<double> target,
                                std::vector<std::uint8_t> mask);

    /// Recomputes every node in insertion order; returns the node's value
    /// (node must be scalar for losses, any shape otherwise).
    double forward(Value v);

    /// Reverse sweep from a scalar root; accumulates into Parameter::grad.
    void backward(Value root);

    /// forward() + backward() of a scalar root.
    double forward_backward(Value root);

    const std::vector<double>& value_of(Value v) const;
    const std::vector<double>& grad_of(Value v) const;
    const Shape& shape_of(Value v) const;

    std::size_t size() const;

private:
    struct Node;
    std::vector<Node> nodes_;

    int push(Node n);
    void compute(Node& n);
    void propagate(Node& n);
};

/// Max relative deviation between an analytic gradient and the central
/// finite difference of f at x:
///   max_i |analytic_i - (f(x+h e_i) - f(x-h e_i)) / 2h| / (|analytic_i| + 1e-8)
double finite_diff_check(const std::function<double(std::span<const double>)>& f,
                         std::span<const double> x, std::span<const double> analytic, double h);

}  // namespace sgstereo::ad
