#include "sgstereo/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "sgstereo/costvolume.hpp"

namespace sgstereo::ad {

namespace {

enum class Op {
    Param, Const,
    Add, Sub, Mul, Div, Scale, ScaleBy, Abs, Relu, LogFloored,
    Conv2d, SoftmaxBins, BinExpect, BinDot, BinNorm,
    Sum, Dot, Norm,
    UpsampleSpatial, UpsampleBins,
    MaskedVecL1Mean, MaskedCeMean, MaskedNegCosMean, MaskedSmoothL1Mean,
};

constexpr double kNormGuard = 1e-300;

}  // namespace

struct Tape::Node {
    Op op;
    int a = -1, b = -1, c = -1;
    Shape shape;
    std::vector<double> val;
    std::vector<double> grad;
    Parameter* parameter = nullptr;
    double scalar = 0.0;                ///< Scale factor or log floor
    int factor = 0;                     ///< upsample factor
    std::vector<double> aux;            ///< bin values / q / targets
    std::vector<std::uint8_t> mask;
    double nv = 0.0;                    ///< valid-pixel count for masked means
};

Tape::Tape() = default;
Tape::~Tape() = default;
Tape::Tape(Tape&&) noexcept = default;
Tape& Tape::operator=(Tape&&) noexcept = default;

int Tape::push(Node n) {
    n.val.assign(n.shape.total(), 0.0);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

namespace {

std::size_t columns_of(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t i = 1; i < s.rank(); ++i) n *= s[i];
    return n;
}

Shape trailing_shape(const Shape& s) {
    if (s.rank() <= 1) return Shape{1};
    Shape out;
    out.dims.assign(s.dims.begin() + 1, s.dims.end());
    return out;
}

}  // namespace

Value Tape::param(Parameter& p) {
    if (p.shape.total() == 0) throw std::invalid_argument("Tape::param: empty parameter");
    Node n;
    n.op = Op::Param;
    n.shape = p.shape;
    n.parameter = &p;
    return {push(std::move(n))};
}

Value Tape::constant(Shape shape, std::vector<double> data) {
    if (shape.total() != data.size())
        throw std::invalid_argument("Tape::constant: shape/data mismatch");
    Node n;
    n.op = Op::Const;
    n.shape = std::move(shape);
    n.aux = std::move(data);
    return {push(std::move(n))};
}

namespace {
void require(bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(msg);
}
}  // namespace

Value Tape::add(Value a, Value b) {
    require(nodes_[a.id].shape == nodes_[b.id].shape, "add: shape mismatch");
    Node n; n.op = Op::Add; n.a = a.id; n.b = b.id; n.shape = nodes_[a.id].shape;
    return {push(std::move(n))};
}
Value Tape::sub(Value a, Value b) {
    require(nodes_[a.id].shape == nodes_[b.id].shape, "sub: shape mismatch");
    Node n; n.op = Op::Sub; n.a = a.id; n.b = b.id; n.shape = nodes_[a.id].shape;
    return {push(std::move(n))};
}
Value Tape::mul(Value a, Value b) {
    require(nodes_[a.id].shape == nodes_[b.id].shape, "mul: shape mismatch");
    Node n; n.op = Op::Mul; n.a = a.id; n.b = b.id; n.shape = nodes_[a.id].shape;
    return {push(std::move(n))};
}
Value Tape::div(Value a, Value b) {
    require(nodes_[a.id].shape == nodes_[b.id].shape, "div: shape mismatch");
    Node n; n.op = Op::Div; n.a = a.id; n.b = b.id; n.shape = nodes_[a.id].shape;
    return {push(std::move(n))};
}
Value Tape::scale(Value a, double c) {
    Node n; n.op = Op::Scale; n.a = a.id; n.scalar = c; n.shape = nodes_[a.id].shape;
    return {push(std::move(n))};
}
Value Tape::scale_by(Value a, Value s) {
    require(nodes_[s.id].shape.total() == 1, "scale_by: scale operand must be scalar");
    Node n; n.op = Op::ScaleBy; n.a = a.id; n.b = s.id; n.shape = nodes_[a.id].shape;
    return {push(std::move(n))};
}
Value Tape::abs(Value a) {
    Node n; n.op = Op::Abs; n.a = a.id; n.shape = nodes_[a.id].shape;
    return {push(std::move(n))};
}
Value Tape::relu(Value a) {
    Node n; n.op = Op::Relu; n.a = a.id; n.shape = nodes_[a.id].shape;
    return {push(std::move(n))};
}
Value Tape::log_floored(Value a, double eps) {
    require(eps > 0.0, "log_floored: eps must be > 0");
    Node n; n.op = Op::LogFloored; n.a = a.id; n.scalar = eps; n.shape = nodes_[a.id].shape;
    return {push(std::move(n))};
}

Value Tape::conv2d_3x3(Value x, Value w, Value b) {
    const Shape& xs = nodes_[x.id].shape;
    const Shape& ws = nodes_[w.id].shape;
    const Shape& bs = nodes_[b.id].shape;
    require(xs.rank() == 3, "conv2d: input must be [C,H,W]");
    require(ws.rank() == 4 && ws[2] == 3 && ws[3] == 3, "conv2d: weights must be [Co,Ci,3,3]");
    require(ws[1] == xs[0], "conv2d: channel mismatch");
    require(bs.rank() == 1 && bs[0] == ws[0], "conv2d: bias mismatch");
    Node n; n.op = Op::Conv2d; n.a = x.id; n.b = w.id; n.c = b.id;
    n.shape = Shape{ws[0], xs[1], xs[2]};
    return {push(std::move(n))};
}

Value Tape::softmax_bins(Value x) {
    require(nodes_[x.id].shape.rank() >= 1, "softmax_bins: needs rank >= 1");
    Node n; n.op = Op::SoftmaxBins; n.a = x.id; n.shape = nodes_[x.id].shape;
    return {push(std::move(n))};
}

Value Tape::bin_expect(Value p, std::vector<double> bin_values) {
    const Shape& s = nodes_[p.id].shape;
    require(s.rank() >= 1 && s[0] == bin_values.size(), "bin_expect: values/axis mismatch");
    Node n; n.op = Op::BinExpect; n.a = p.id; n.aux = std::move(bin_values);
    n.shape = trailing_shape(s);
    return {push(std::move(n))};
}

Value Tape::bin_dot(Value a, Value b) {
    require(nodes_[a.id].shape == nodes_[b.id].shape, "bin_dot: shape mismatch");
    Node n; n.op = Op::BinDot; n.a = a.id; n.b = b.id;
    n.shape = trailing_shape(nodes_[a.id].shape);
    return {push(std::move(n))};
}
Value Tape::bin_norm(Value a) {
    Node n; n.op = Op::BinNorm; n.a = a.id; n.shape = trailing_shape(nodes_[a.id].shape);
    return {push(std::move(n))};
}

Value Tape::sum(Value a) {
    Node n; n.op = Op::Sum; n.a = a.id; n.shape = Shape{1};
    return {push(std::move(n))};
}
Value Tape::dot(Value a, Value b) {
    require(nodes_[a.id].shape.total() == nodes_[b.id].shape.total(), "dot: size mismatch");
    Node n; n.op = Op::Dot; n.a = a.id; n.b = b.id; n.shape = Shape{1};
    return {push(std::move(n))};
}
Value Tape::norm(Value a) {
    Node n; n.op = Op::Norm; n.a = a.id; n.shape = Shape{1};
    return {push(std::move(n))};
}

Value Tape::upsample_spatial(Value x, int factor) {
    const Shape& s = nodes_[x.id].shape;
    require(s.rank() == 3, "upsample_spatial: input must be [D,H,W]");
    require(factor >= 1, "upsample_spatial: factor must be >= 1");
    Node n; n.op = Op::UpsampleSpatial; n.a = x.id; n.factor = factor;
    n.shape = Shape{s[0], s[1] * factor, s[2] * factor};
    return {push(std::move(n))};
}

Value Tape::upsample_bins(Value x, int factor) {
    const Shape& s = nodes_[x.id].shape;
    require(s.rank() == 3, "upsample_bins: input must be [D,H,W]");
    require(factor >= 1 && s[0] >= 2, "upsample_bins: bad factor or axis");
    Node n; n.op = Op::UpsampleBins; n.a = x.id; n.factor = factor;
    n.shape = Shape{(s[0] - 1) * factor + 1, s[1], s[2]};
    return {push(std::move(n))};
}

namespace {

double count_valid(const std::vector<std::uint8_t>& mask) {
    double nv = 0.0;
    for (auto m : mask) nv += m ? 1.0 : 0.0;
    require(nv > 0.0, "masked loss: empty valid set");
    return nv;
}

}  // namespace

Value Tape::masked_vec_l1_mean(Value p, std::vector<double> q, std::vector<std::uint8_t> mask) {
    const Shape& s = nodes_[p.id].shape;
    require(q.size() == s.total() && mask.size() == columns_of(s),
            "masked_vec_l1_mean: q/mask size mismatch");
    Node n; n.op = Op::MaskedVecL1Mean; n.a = p.id; n.aux = std::move(q);
    n.mask = std::move(mask); n.nv = count_valid(n.mask); n.shape = Shape{1};
    return {push(std::move(n))};
}
Value Tape::masked_ce_mean(Value p, std::vector<double> q, std::vector<std::uint8_t> mask) {
    const Shape& s = nodes_[p.id].shape;
    require(q.size() == s.total() && mask.size() == columns_of(s),
            "masked_ce_mean: q/mask size mismatch");
    Node n; n.op = Op::MaskedCeMean; n.a = p.id; n.aux = std::move(q);
    n.mask = std::move(mask); n.nv = count_valid(n.mask); n.shape = Shape{1};
    return {push(std::move(n))};
}
Value Tape::masked_negcos_mean(Value p, std::vector<double> q, std::vector<std::uint8_t> mask) {
    const Shape& s = nodes_[p.id].shape;
    require(q.size() == s.total() && mask.size() == columns_of(s),
            "masked_negcos_mean: q/mask size mismatch");
    Node n; n.op = Op::MaskedNegCosMean; n.a = p.id; n.aux = std::move(q);
    n.mask = std::move(mask); n.nv = count_valid(n.mask); n.shape = Shape{1};
    return {push(std::move(n))};
}
Value Tape::masked_smooth_l1_mean(Value pred, std::vector<double> target,
                                  std::vector<std::uint8_t> mask) {
    const Shape& s = nodes_[pred.id].shape;
    require(target.size() == s.total() && mask.size() == s.total(),
            "masked_smooth_l1_mean: target/mask size mismatch");
    Node n; n.op = Op::MaskedSmoothL1Mean; n.a = pred.id; n.aux = std::move(target);
    n.mask = std::move(mask); n.nv = count_valid(n.mask); n.shape = Shape{1};
    return {push(std::move(n))};
}

void Tape::compute(Node& n) {
    const auto A = [&]() -> const std::vector<double>& { return nodes_[n.a].val; };
    const auto B = [&]() -> const std::vector<double>& { return nodes_[n.b].val; };
    switch (n.op) {
        case Op::Param:
            std::copy(n.parameter->value.begin(), n.parameter->value.end(), n.val.begin());
            break;
        case Op::Const:
            std::copy(n.aux.begin(), n.aux.end(), n.val.begin());
            break;
        case Op::Add:
            for (size_t i = 0; i < n.val.size(); ++i) n.val[i] = A()[i] + B()[i];
            break;
        case Op::Sub:
            for (size_t i = 0; i < n.val.size(); ++i) n.val[i] = A()[i] - B()[i];
            break;
        case Op::Mul:
            for (size_t i = 0; i < n.val.size(); ++i) n.val[i] = A()[i] * B()[i];
            break;
        case Op::Div:
            for (size_t i = 0; i < n.val.size(); ++i) n.val[i] = A()[i] / B()[i];
            break;
        case Op::Scale:
            for (size_t i = 0; i < n.val.size(); ++i) n.val[i] = A()[i] * n.scalar;
            break;
        case Op::ScaleBy: {
            const double s = B()[0];
            for (size_t i = 0; i < n.val.size(); ++i) n.val[i] = A()[i] * s;
            break;
        }
        case Op::Abs:
            for (size_t i = 0; i < n.val.size(); ++i) n.val[i] = std::abs(A()[i]);
            break;
        case Op::Relu:
            for (size_t i = 0; i < n.val.size(); ++i) n.val[i] = A()[i] > 0.0 ? A()[i] : 0.0;
            break;
        case Op::LogFloored:
            for (size_t i = 0; i < n.val.size(); ++i)
                n.val[i] = std::log(std::max(A()[i], n.scalar));
            break;
        case Op::Conv2d: {
            const Shape& xs = nodes_[n.a].shape;
            const int Ci = static_cast<int>(xs[0]), H = static_cast<int>(xs[1]),
                      W = static_cast<int>(xs[2]);
            const int Co = static_cast<int>(n.shape[0]);
            const std::vector<double>& x = A();
            const std::vector<double>& w = B();
            const std::vector<double>& bias = nodes_[n.c].val;
            for (int co = 0; co < Co; ++co)
                for (int y = 0; y < H; ++y)
                    for (int xx = 0; xx < W; ++xx) {
                        double s = bias[static_cast<size_t>(co)];
                        for (int ci = 0; ci < Ci; ++ci)
                            for (int dy = 0; dy < 3; ++dy) {
                                const int sy = y + dy - 1;
                                if (sy < 0 || sy >= H) continue;
                                for (int dx = 0; dx < 3; ++dx) {
                                    const int sx = xx + dx - 1;
                                    if (sx < 0 || sx >= W) continue;
                                    s += w[((static_cast<size_t>(co) * Ci + ci) * 3 + dy) * 3 + dx] *
                                         x[(static_cast<size_t>(ci) * H + sy) * W + sx];
                                }
                            }
                        n.val[(static_cast<size_t>(co) * H + y) * W + xx] = s;
                    }
            break;
        }
        case Op::SoftmaxBins: {
            const size_t D = nodes_[n.a].shape[0];
            const size_t N = columns_of(nodes_[n.a].shape);
            const std::vector<double>& x = A();
            for (size_t col = 0; col < N; ++col) {
                double m = x[col];
                for (size_t d = 1; d < D; ++d) m = std::max(m, x[d * N + col]);
                double s = 0.0;
                for (size_t d = 0; d < D; ++d) {
                    const double e = std::exp(x[d * N + col] - m);
                    n.val[d * N + col] = e;
                    s += e;
                }
                for (size_t d = 0; d < D; ++d) n.val[d * N + col] /= s;
            }
            break;
        }
        case Op::BinExpect: {
            const size_t D = nodes_[n.a].shape[0];
            const size_t N = columns_of(nodes_[n.a].shape);
            const std::vector<double>& p = A();
            for (size_t col = 0; col < N; ++col) {
                double e = 0.0;
                for (size_t d = 0; d < D; ++d) e += p[d * N + col] * n.aux[d];
                n.val[col] = e;
            }
            break;
        }
        case Op::BinDot: {
            const size_t D = nodes_[n.a].shape[0];
            const size_t N = columns_of(nodes_[n.a].shape);
            for (size_t col = 0; col < N; ++col) {
                double s = 0.0;
                for (size_t d = 0; d < D; ++d) s += A()[d * N + col] * B()[d * N + col];
                n.val[col] = s;
            }
            break;
        }
        case Op::BinNorm: {
            const size_t D = nodes_[n.a].shape[0];
            const size_t N = columns_of(nodes_[n.a].shape);
            for (size_t col = 0; col < N; ++col) {
                double s = 0.0;
                for (size_t d = 0; d < D; ++d) s += A()[d * N + col] * A()[d * N + col];
                n.val[col] = std::sqrt(s);
            }
            break;
        }
        case Op::Sum: {
            double s = 0.0;
            for (double v : A()) s += v;
            n.val[0] = s;
            break;
        }
        case Op::Dot: {
            double s = 0.0;
            for (size_t i = 0; i < A().size(); ++i) s += A()[i] * B()[i];
            n.val[0] = s;
            break;
        }
        case Op::Norm: {
            double s = 0.0;
            for (double v : A()) s += v * v;
            n.val[0] = std::sqrt(s);
            break;
        }
        case Op::UpsampleSpatial: {
            const Shape& s = nodes_[n.a].shape;
            const int D = static_cast<int>(s[0]), H = static_cast<int>(s[1]),
                      W = static_cast<int>(s[2]);
            const int Ho = H * n.factor, Wo = W * n.factor;
            const auto ty = corner_aligned_taps(H, n.factor);
            const auto tx = corner_aligned_taps(W, n.factor);
            const std::vector<double>& x = A();
            for (int d = 0; d < D; ++d)
                for (int y = 0; y < Ho; ++y) {
                    const LinearTap& wy = ty[static_cast<size_t>(y)];
                    for (int xx = 0; xx < Wo; ++xx) {
                        const LinearTap& wx = tx[static_cast<size_t>(xx)];
                        double acc = 0.0;
                        const size_t base = static_cast<size_t>(d) * H * W;
                        const double y1 = wy.w_lo, y2 = 1.0 - wy.w_lo;
                        const double x1 = wx.w_lo, x2 = 1.0 - wx.w_lo;
                        acc += y1 * x1 * x[base + static_cast<size_t>(wy.lo) * W + wx.lo];
                        if (x2 != 0.0)
                            acc += y1 * x2 * x[base + static_cast<size_t>(wy.lo) * W + wx.lo + 1];
                        if (y2 != 0.0) {
                            acc += y2 * x1 * x[base + static_cast<size_t>(wy.lo + 1) * W + wx.lo];
                            if (x2 != 0.0)
                                acc += y2 * x2 *
                                       x[base + static_cast<size_t>(wy.lo + 1) * W + wx.lo + 1];
                        }
                        n.val[(static_cast<size_t>(d) * Ho + y) * Wo + xx] = acc;
                    }
                }
            break;
        }
        case Op::UpsampleBins: {
            const Shape& s = nodes_[n.a].shape;
            const int D = static_cast<int>(s[0]), H = static_cast<int>(s[1]),
                      W = static_cast<int>(s[2]);
            const int Do = (D - 1) * n.factor + 1;
            const auto td = knot_taps(D, n.factor);
            const std::vector<double>& x = A();
            const size_t plane = static_cast<size_t>(H) * W;
            for (int d = 0; d < Do; ++d) {
                const LinearTap& t = td[static_cast<size_t>(d)];
                for (size_t px = 0; px < plane; ++px) {
                    double acc = t.w_lo * x[static_cast<size_t>(t.lo) * plane + px];
                    if (t.w_lo != 1.0)
                        acc += (1.0 - t.w_lo) * x[static_cast<size_t>(t.lo + 1) * plane + px];
                    n.val[static_cast<size_t>(d) * plane + px] = acc;
                }
            }
            break;
        }
        case Op::MaskedVecL1Mean: {
            const size_t D = nodes_[n.a].shape[0];
            const size_t N = columns_of(nodes_[n.a].shape);
            double s = 0.0;
            for (size_t d = 0; d < D; ++d)
                for (size_t col = 0; col < N; ++col)
                    if (n.mask[col]) s += std::abs(A()[d * N + col] - n.aux[d * N + col]);
            n.val[0] = s / (static_cast<double>(D) * n.nv);
            break;
        }
        case Op::MaskedCeMean: {
            const size_t D = nodes_[n.a].shape[0];
            const size_t N = columns_of(nodes_[n.a].shape);
            double s = 0.0;
            for (size_t d = 0; d < D; ++d)
                for (size_t col = 0; col < N; ++col)
                    if (n.mask[col])
                        s -= n.aux[d * N + col] * std::log(std::max(A()[d * N + col], 1e-12));
            n.val[0] = s / n.nv;
            break;
        }
        case Op::MaskedNegCosMean: {
            const size_t D = nodes_[n.a].shape[0];
            const size_t N = columns_of(nodes_[n.a].shape);
            double s = 0.0;
            for (size_t col = 0; col < N; ++col) {
                if (!n.mask[col]) continue;
                double dp = 0.0, np = 0.0, nq = 0.0;
                for (size_t d = 0; d < D; ++d) {
                    const double pv = A()[d * N + col], qv = n.aux[d * N + col];
                    dp += pv * qv;
                    np += pv * pv;
                    nq += qv * qv;
                }
                s -= dp / std::max(std::sqrt(np) * std::sqrt(nq), kNormGuard);
            }
            n.val[0] = s / n.nv;
            break;
        }
        case Op::MaskedSmoothL1Mean: {
            double s = 0.0;
            for (size_t i = 0; i < A().size(); ++i) {
                if (!n.mask[i]) continue;
                const double e = std::abs(A()[i] - n.aux[i]);
                s += e < 1.0 ? 0.5 * e * e : e - 0.5;
            }
            n.val[0] = s / n.nv;
            break;
        }
    }
}

void Tape::propagate(Node& n) {
    const auto GA = [&]() -> std::vector<double>& { return nodes_[n.a].grad; };
    const auto GB = [&]() -> std::vector<double>& { return nodes_[n.b].grad; };
    const auto A = [&]() -> const std::vector<double>& { return nodes_[n.a].val; };
    const auto B = [&]() -> const std::vector<double>& { return nodes_[n.b].val; };
    const std::vector<double>& g = n.grad;

    switch (n.op) {
        case Op::Param:
            for (size_t i = 0; i < g.size(); ++i) n.parameter->grad[i] += g[i];
            break;
        case Op::Const:
            break;
        case Op::Add:
            for (size_t i = 0; i < g.size(); ++i) { GA()[i] += g[i]; GB()[i] += g[i]; }
            break;
        case Op::Sub:
            for (size_t i = 0; i < g.size(); ++i) { GA()[i] += g[i]; GB()[i] -= g[i]; }
            break;
        case Op::Mul:
            for (size_t i = 0; i < g.size(); ++i) {
                GA()[i] += g[i] * B()[i];
                GB()[i] += g[i] * A()[i];
            }
            break;
        case Op::Div:
            for (size_t i = 0; i < g.size(); ++i) {
                GA()[i] += g[i] / B()[i];
                GB()[i] -= g[i] * A()[i] / (B()[i] * B()[i]);
            }
            break;
        case Op::Scale:
            for (size_t i = 0; i < g.size(); ++i) GA()[i] += g[i] * n.scalar;
            break;
        case Op::ScaleBy: {
            const double s = B()[0];
            double gs = 0.0;
            for (size_t i = 0; i < g.size(); ++i) {
                GA()[i] += g[i] * s;
                gs += g[i] * A()[i];
            }
            GB()[0] += gs;
            break;
        }
        case Op::Abs:
            for (size_t i = 0; i < g.size(); ++i)
                GA()[i] += g[i] * (A()[i] > 0.0 ? 1.0 : A()[i] < 0.0 ? -1.0 : 0.0);
            break;
        case Op::Relu:
            for (size_t i = 0; i < g.size(); ++i) GA()[i] += A()[i] > 0.0 ? g[i] : 0.0;
            break;
        case Op::LogFloored:
            for (size_t i = 0; i < g.size(); ++i)
                GA()[i] += A()[i] >= n.scalar ? g[i] / A()[i] : 0.0;
            break;
        case Op::Conv2d: {
            const Shape& xs = nodes_[n.a].shape;
            const int Ci = static_cast<int>(xs[0]), H = static_cast<int>(xs[1]),
                      W = static_cast<int>(xs[2]);
            const int Co = static_cast<int>(n.shape[0]);
            const std::vector<double>& x = A();
            const std::vector<double>& w = B();
            std::vector<double>& gx = GA();
            std::vector<double>& gw = GB();
            std::vector<double>& gb = nodes_[n.c].grad;
            for (int co = 0; co < Co; ++co)
                for (int y = 0; y < H; ++y)
                    for (int xx = 0; xx < W; ++xx) {
                        const double go = g[(static_cast<size_t>(co) * H + y) * W + xx];
                        gb[static_cast<size_t>(co)] += go;
                        for (int ci = 0; ci < Ci; ++ci)
                            for (int dy = 0; dy < 3; ++dy) {
                                const int sy = y + dy - 1;
                                if (sy < 0 || sy >= H) continue;
                                for (int dx = 0; dx < 3; ++dx) {
                                    const int sx = xx + dx - 1;
                                    if (sx < 0 || sx >= W) continue;
                                    const size_t wi =
                                        ((static_cast<size_t>(co) * Ci + ci) * 3 + dy) * 3 + dx;
                                    const size_t xi = (static_cast<size_t>(ci) * H + sy) * W + sx;
                                    gw[wi] += go * x[xi];
                                    gx[xi] += go * w[wi];
                                }
                            }
                    }
            break;
        }
        case Op::SoftmaxBins: {
            const size_t D = n.shape[0];
            const size_t N = columns_of(n.shape);
            for (size_t col = 0; col < N; ++col) {
                double gp = 0.0;
                for (size_t d = 0; d < D; ++d) gp += g[d * N + col] * n.val[d * N + col];
                for (size_t d = 0; d < D; ++d)
                    GA()[d * N + col] += n.val[d * N + col] * (g[d * N + col] - gp);
            }
            break;
        }
        case Op::BinExpect: {
            const size_t D = nodes_[n.a].shape[0];
            const size_t N = columns_of(nodes_[n.a].shape);
            for (size_t d = 0; d < D; ++d)
                for (size_t col = 0; col < N; ++col) GA()[d * N + col] += g[col] * n.aux[d];
            break;
        }
        case Op::BinDot: {
            const size_t D = nodes_[n.a].shape[0];
            const size_t N = columns_of(nodes_[n.a].shape);
            for (size_t d = 0; d < D; ++d)
                for (size_t col = 0; col < N; ++col) {
                    GA()[d * N + col] += g[col] * B()[d * N + col];
                    GB()[d * N + col] += g[col] * A()[d * N + col];
                }
            break;
        }
        case Op::BinNorm: {
            const size_t D = nodes_[n.a].shape[0];
            const size_t N = columns_of(nodes_[n.a].shape);
            for (size_t col = 0; col < N; ++col) {
                const double nm = std::max(n.val[col], kNormGuard);
                for (size_t d = 0; d < D; ++d)
                    GA()[d * N + col] += g[col] * A()[d * N + col] / nm;
            }
            break;
        }
        case Op::Sum:
            for (size_t i = 0; i < GA().size(); ++i) GA()[i] += g[0];
            break;
        case Op::Dot:
            for (size_t i = 0; i < GA().size(); ++i) {
                GA()[i] += g[0] * B()[i];
                GB()[i] += g[0] * A()[i];
            }
            break;
        case Op::Norm: {
            const double nm = std::max(n.val[0], kNormGuard);
            for (size_t i = 0; i < GA().size(); ++i) GA()[i] += g[0] * A()[i] / nm;
            break;
        }
        case Op::UpsampleSpatial: {
            const Shape& s = nodes_[n.a].shape;
            const int D = static_cast<int>(s[0]), H = static_cast<int>(s[1]),
                      W = static_cast<int>(s[2]);
            const int Ho = H * n.factor, Wo = W * n.factor;
            const auto ty = corner_aligned_taps(H, n.factor);
            const auto tx = corner_aligned_taps(W, n.factor);
            std::vector<double>& gx = GA();
            for (int d = 0; d < D; ++d)
                for (int y = 0; y < Ho; ++y) {
                    const LinearTap& wy = ty[static_cast<size_t>(y)];
                    for (int xx = 0; xx < Wo; ++xx) {
                        const LinearTap& wx = tx[static_cast<size_t>(xx)];
                        const double go = g[(static_cast<size_t>(d) * Ho + y) * Wo + xx];
                        const size_t base = static_cast<size_t>(d) * H * W;
                        const double y1 = wy.w_lo, y2 = 1.0 - wy.w_lo;
                        const double x1 = wx.w_lo, x2 = 1.0 - wx.w_lo;
                        gx[base + static_cast<size_t>(wy.lo) * W + wx.lo] += go * y1 * x1;
                        if (x2 != 0.0)
                            gx[base + static_cast<size_t>(wy.lo) * W + wx.lo + 1] += go * y1 * x2;
                        if (y2 != 0.0) {
                            gx[base + static_cast<size_t>(wy.lo + 1) * W + wx.lo] += go * y2 * x1;
                            if (x2 != 0.0)
                                gx[base + static_cast<size_t>(wy.lo + 1) * W + wx.lo + 1] +=
                                    go * y2 * x2;
                        }
                    }
                }
            break;
        }
        case Op::UpsampleBins: {
            const Shape& s = nodes_[n.a].shape;
            const int D = static_cast<int>(s[0]);
            const int Do = (D - 1) * n.factor + 1;
            const size_t plane = s[1] * s[2];
            const auto td = knot_taps(D, n.factor);
            std::vector<double>& gx = GA();
            for (int d = 0; d < Do; ++d) {
                const LinearTap& t = td[static_cast<size_t>(d)];
                for (size_t px = 0; px < plane; ++px) {
                    const double go = g[static_cast<size_t>(d) * plane + px];
                    gx[static_cast<size_t>(t.lo) * plane + px] += go * t.w_lo;
                    if (t.w_lo != 1.0)
                        gx[static_cast<size_t>(t.lo + 1) * plane + px] += go * (1.0 - t.w_lo);
                }
            }
            break;
        }
        case Op::MaskedVecL1Mean: {
            const size_t D = nodes_[n.a].shape[0];
            const size_t N = columns_of(nodes_[n.a].shape);
            const double c = g[0] / (static_cast<double>(D) * n.nv);
            for (size_t d = 0; d < D; ++d)
                for (size_t col = 0; col < N; ++col) {
                    if (!n.mask[col]) continue;
                    const double e = A()[d * N + col] - n.aux[d * N + col];
                    GA()[d * N + col] += c * (e > 0.0 ? 1.0 : e < 0.0 ? -1.0 : 0.0);
                }
            break;
        }
        case Op::MaskedCeMean: {
            const size_t D = nodes_[n.a].shape[0];
            const size_t N = columns_of(nodes_[n.a].shape);
            const double c = g[0] / n.nv;
            for (size_t d = 0; d < D; ++d)
                for (size_t col = 0; col < N; ++col) {
                    if (!n.mask[col]) continue;
                    const double pv = A()[d * N + col];
                    if (pv >= 1e-12) GA()[d * N + col] -= c * n.aux[d * N + col] / pv;
                }
            break;
        }
        case Op::MaskedNegCosMean: {
            const size_t D = nodes_[n.a].shape[0];
            const size_t N = columns_of(nodes_[n.a].shape);
            const double c = g[0] / n.nv;
            for (size_t col = 0; col < N; ++col) {
                if (!n.mask[col]) continue;
                double dp = 0.0, np2 = 0.0, nq2 = 0.0;
                for (size_t d = 0; d < D; ++d) {
                    const double pv = A()[d * N + col], qv = n.aux[d * N + col];
                    dp += pv * qv;
                    np2 += pv * pv;
                    nq2 += qv * qv;
                }
                const double np = std::max(std::sqrt(np2), kNormGuard);
                const double nq = std::max(std::sqrt(nq2), kNormGuard);
                for (size_t d = 0; d < D; ++d) {
                    const double pv = A()[d * N + col], qv = n.aux[d * N + col];
                    GA()[d * N + col] -= c * (qv / (np * nq) - dp * pv / (np * np * np * nq));
                }
            }
            break;
        }
        case Op::MaskedSmoothL1Mean: {
            const double c = g[0] / n.nv;
            for (size_t i = 0; i < GA().size(); ++i) {
                if (!n.mask[i]) continue;
                const double e = A()[i] - n.aux[i];
                GA()[i] += c * (e > 1.0 ? 1.0 : e < -1.0 ? -1.0 : e);
            }
            break;
        }
    }
}

double Tape::forward(Value v) {
    if (v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
        throw std::invalid_argument("Tape::forward: bad handle");
    for (int i = 0; i <= v.id; ++i) compute(nodes_[static_cast<size_t>(i)]);
    return nodes_[static_cast<size_t>(v.id)].val[0];
}

void Tape::backward(Value root) {
    if (root.id < 0 || root.id >= static_cast<int>(nodes_.size()))
        throw std::invalid_argument("Tape::backward: bad handle");
    Node& r = nodes_[static_cast<size_t>(root.id)];
    if (r.shape.total() != 1)
        throw std::invalid_argument("Tape::backward: root must be scalar");
    for (int i = 0; i <= root.id; ++i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        n.grad.assign(n.shape.total(), 0.0);
    }
    r.grad[0] = 1.0;
    for (int i = root.id; i >= 0; --i) propagate(nodes_[static_cast<size_t>(i)]);
}

double Tape::forward_backward(Value root) {
    const double v = forward(root);
    backward(root);
    return v;
}

const std::vector<double>& Tape::value_of(Value v) const {
    return nodes_[static_cast<size_t>(v.id)].val;
}
const std::vector<double>& Tape::grad_of(Value v) const {
    return nodes_[static_cast<size_t>(v.id)].grad;
}
const Shape& Tape::shape_of(Value v) const { return nodes_[static_cast<size_t>(v.id)].shape; }

std::size_t Tape::size() const { return nodes_.size(); }

double finite_diff_check(const std::function<double(std::span<const double>)>& f,
                         std::span<const double> x, std::span<const double> analytic, double h) {
    if (x.size() != analytic.size())
        throw std::invalid_argument("finite_diff_check: size mismatch");
    std::vector<double> xp(x.begin(), x.end());
    double worst = 0.0;
    for (size_t i = 0; i < xp.size(); ++i) {
        const double keep = xp[i];
        xp[i] = keep + h;
        const double fp = f(xp);
        xp[i] = keep - h;
        const double fm = f(xp);
        xp[i] = keep;
        const double numeric = (fp - fm) / (2.0 * h);
        const double rel = std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + 1e-8);
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace sgstereo::ad
