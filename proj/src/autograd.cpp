#include "dfpt/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "dfpt/kernels.hpp"

namespace dfpt {

namespace {

thread_local Tape* g_tape = nullptr;
thread_local std::uint64_t g_next_tape_id = 1;

void check_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
    if (a.dtype() != b.dtype())
        throw Error(std::string(op) + ": dtype mismatch (" + dtype_name(a.dtype()) + " vs " +
                    dtype_name(b.dtype()) + "); convert explicitly with astype");
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    const std::size_t ra = a.size(), rb = b.size(), r = std::max(ra, rb);
    Shape out(r);
    for (std::size_t i = 0; i < r; ++i) {
        const std::int64_t da = i < r - ra ? 1 : a[i - (r - ra)];
        const std::int64_t db = i < r - rb ? 1 : b[i - (r - rb)];
        if (da != db && da != 1 && db != 1)
            throw Error(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                        " do not broadcast");
        out[i] = std::max(da, db);
    }
    return out;
}

// Strides of `s` aligned to the trailing dims of `out`, 0 where broadcast.
std::vector<std::int64_t> bcast_strides(const Shape& s, const Shape& out) {
    std::vector<std::int64_t> st(out.size(), 0);
    std::int64_t acc = 1;
    for (std::size_t k = 0; k < s.size(); ++k) {
        const std::size_t i = s.size() - 1 - k;
        const std::size_t oi = out.size() - 1 - k;
        st[oi] = (s[i] == 1 && out[oi] != 1) ? 0 : acc;
        acc *= s[i];
    }
    return st;
}

// Odometer walk over `out`, applying f(offset_a, offset_b, offset_out).
template <typename F>
void bcast_walk(const Shape& out, const std::vector<std::int64_t>& sa,
                const std::vector<std::int64_t>& sb, F&& f) {
    const std::size_t r = out.size();
    std::vector<std::int64_t> idx(r, 0);
    std::int64_t oa = 0, ob = 0;
    const std::int64_t n = shape_numel(out);
    for (std::int64_t lin = 0; lin < n; ++lin) {
        f(oa, ob, lin);
        for (std::size_t k = r; k-- > 0;) {
            ++idx[k];
            oa += sa[k];
            ob += sb[k];
            if (idx[k] < out[k]) break;
            oa -= sa[k] * out[k];
            ob -= sb[k] * out[k];
            idx[k] = 0;
        }
    }
}

// Sums g down to `target` (trailing-aligned broadcast inverse).
Tensor reduce_to_shape(const Tensor& g, const Shape& target) {
    if (g.shape() == target) return g;
    Tensor out = Tensor::zeros(target, g.dtype());
    const auto st = bcast_strides(target, g.shape());
    const std::vector<std::int64_t> sg = bcast_strides(g.shape(), g.shape());
    if (g.dtype() == DType::f32) {
        const float* gp = g.data<float>();
        float* op = out.data<float>();
        bcast_walk(g.shape(), st, sg, [&](std::int64_t ot, std::int64_t, std::int64_t lin) { op[ot] += gp[lin]; });
    } else {
        const double* gp = g.data<double>();
        double* op = out.data<double>();
        bcast_walk(g.shape(), st, sg, [&](std::int64_t ot, std::int64_t, std::int64_t lin) { op[ot] += gp[lin]; });
    }
    return out;
}

enum class BinOp { add, sub, mul, div };

template <typename T>
void apply_bin(BinOp op, const T* a, const T* b, T* out, std::int64_t n) {
    const auto& k = kern::table<T>();
    switch (op) {
        case BinOp::add: k.add(a, b, out, n); break;
        case BinOp::sub: k.sub(a, b, out, n); break;
        case BinOp::mul: k.mul(a, b, out, n); break;
        case BinOp::div: k.div(a, b, out, n); break;
    }
}

template <typename T>
T scalar_bin(BinOp op, T a, T b) {
    switch (op) {
        case BinOp::add: return a + b;
        case BinOp::sub: return a - b;
        case BinOp::mul: return a * b;
        default: return a / b;
    }
}

const char* bin_name(BinOp op) {
    switch (op) {
        case BinOp::add: return "add";
        case BinOp::sub: return "sub";
        case BinOp::mul: return "mul";
        default: return "div";
    }
}

template <typename T>
Tensor binary_fwd(BinOp op, const Tensor& a, const Tensor& b, const Shape& os) {
    Tensor out = Tensor::zeros(os, a.dtype());
    if (a.shape() == b.shape()) {
        apply_bin<T>(op, a.data<T>(), b.data<T>(), out.data<T>(), out.numel());
        return out;
    }
    const auto sa = bcast_strides(a.shape(), os);
    const auto sb = bcast_strides(b.shape(), os);
    const T* ap = a.data<T>();
    const T* bp = b.data<T>();
    T* outp = out.data<T>();
    bcast_walk(os, sa, sb, [&](std::int64_t oa, std::int64_t ob, std::int64_t lin) {
        outp[lin] = scalar_bin<T>(op, ap[oa], bp[ob]);
    });
    return out;
}

}  // namespace

// ---- tape ----

Tape::Tape() : id_(g_next_tape_id++), prev_(g_tape) { g_tape = this; }

Tape::~Tape() { g_tape = prev_; }

Tape* Tape::current() { return g_tape; }

std::uint64_t Tape::current_id() { return g_tape ? g_tape->id_ : 0; }

NoGradGuard::NoGradGuard() : saved_(g_tape) { g_tape = nullptr; }
NoGradGuard::~NoGradGuard() { g_tape = saved_; }

bool grad_recording() { return g_tape != nullptr; }

bool needs_grad(const Tensor& t) {
    if (!t.defined()) return false;
    if (t.requires_grad()) return true;
    return g_tape && t.impl()->tape_id == g_tape->current_id();
}

void record_node(const char* name, std::initializer_list<Tensor> inputs, const Tensor& output,
                 std::function<void()> fn) {
    Tape* t = Tape::current();
    if (!t) return;
    bool any = false;
    for (const auto& in : inputs) any = any || needs_grad(in);
    if (!any) return;
    output.impl()->tape_id = t->current_id();
    auto node = std::make_unique<Node>();
    node->name = name;
    node->backward = std::move(fn);
    node->output = output.impl();
    t->nodes_.push_back(std::move(node));
}

void accumulate_grad(const Tensor& t, const Tensor& g) {
    auto impl = t.impl();
    if (g.shape() != impl->shape) throw Error("autograd: gradient shape mismatch");
    if (!impl->grad) {
        impl->grad = Tensor::zeros(impl->shape, impl->dtype).impl();
    }
    const std::int64_t n = g.numel();
    if (impl->dtype == DType::f32)
        kern::table<float>().add(impl->grad->ptr<float>(), g.data<float>(), impl->grad->ptr<float>(), n);
    else
        kern::table<double>().add(impl->grad->ptr<double>(), g.data<double>(), impl->grad->ptr<double>(), n);
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined()) throw Error("backward: undefined loss");
    if (loss.numel() != 1)
        throw Error("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    // Intermediate grads are scratch state of a single sweep; only leaf grads
    // accumulate across backward calls.
    for (auto& n : nodes_) n->output->grad.reset();
    loss.impl()->grad = Tensor::full(loss.shape(), 1.0, loss.dtype()).impl();
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        Node* n = it->get();
        if (!n->output->grad) continue;
        n->backward();
    }
}

// ---- elementwise ----

namespace {

Tensor binary_op(BinOp op, const Tensor& a, const Tensor& b) {
    check_same_dtype(a, b, bin_name(op));
    const Shape os = broadcast_shape(a.shape(), b.shape(), bin_name(op));
    Tensor out;
    if (a.dtype() == DType::f32)
        out = binary_fwd<float>(op, a, b, os);
    else
        out = binary_fwd<double>(op, a, b, os);

    const bool wa = needs_grad(a), wb = needs_grad(b);
    record_node(bin_name(op), {a, b}, out, [op, a, b, out, wa, wb]() {
        Tensor g(out.impl()->grad);
        switch (op) {
            case BinOp::add:
                if (wa) accumulate_grad(a, reduce_to_shape(g, a.shape()));
                if (wb) accumulate_grad(b, reduce_to_shape(g, b.shape()));
                break;
            case BinOp::sub:
                if (wa) accumulate_grad(a, reduce_to_shape(g, a.shape()));
                if (wb) accumulate_grad(b, reduce_to_shape(mul_scalar(g, -1.0), b.shape()));
                break;
            case BinOp::mul:
                if (wa) accumulate_grad(a, reduce_to_shape(mul(g, b.detach()), a.shape()));
                if (wb) accumulate_grad(b, reduce_to_shape(mul(g, a.detach()), b.shape()));
                break;
            case BinOp::div: {
                Tensor bd = b.detach();
                if (wa) accumulate_grad(a, reduce_to_shape(divide(g, bd), a.shape()));
                if (wb) {
                    Tensor num = mul(g, divide(a.detach(), mul(bd, bd)));
                    accumulate_grad(b, reduce_to_shape(mul_scalar(num, -1.0), b.shape()));
                }
                break;
            }
        }
    });
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(BinOp::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(BinOp::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(BinOp::mul, a, b); }
Tensor divide(const Tensor& a, const Tensor& b) { return binary_op(BinOp::div, a, b); }

namespace {

template <typename T, typename F>
Tensor unary_map(const Tensor& a, F&& f) {
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    const T* ap = a.data<T>();
    T* op = out.data<T>();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) op[i] = f(ap[i]);
    return out;
}

}  // namespace

Tensor add_scalar(const Tensor& a, double s) {
    Tensor out = a.dtype() == DType::f32
                     ? unary_map<float>(a, [s](float x) { return x + static_cast<float>(s); })
                     : unary_map<double>(a, [s](double x) { return x + s; });
    const bool wa = needs_grad(a);
    record_node("add_scalar", {a}, out, [a, out, wa]() {
        if (wa) accumulate_grad(a, Tensor(out.impl()->grad));
    });
    return out;
}

Tensor mul_scalar(const Tensor& a, double s) {
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    if (a.dtype() == DType::f32)
        kern::table<float>().scale(static_cast<float>(s), a.data<float>(), out.data<float>(), a.numel());
    else
        kern::table<double>().scale(s, a.data<double>(), out.data<double>(), a.numel());
    const bool wa = needs_grad(a);
    record_node("mul_scalar", {a}, out, [a, out, s, wa]() {
        if (wa) accumulate_grad(a, mul_scalar(Tensor(out.impl()->grad), s));
    });
    return out;
}

Tensor exp(const Tensor& a) {
    Tensor out = a.dtype() == DType::f32 ? unary_map<float>(a, [](float x) { return std::exp(x); })
                                         : unary_map<double>(a, [](double x) { return std::exp(x); });
    const bool wa = needs_grad(a);
    record_node("exp", {a}, out, [a, out, wa]() {
        if (wa) accumulate_grad(a, mul(Tensor(out.impl()->grad), out.detach()));
    });
    return out;
}

Tensor log(const Tensor& a) {
    Tensor out = a.dtype() == DType::f32 ? unary_map<float>(a, [](float x) { return std::log(x); })
                                         : unary_map<double>(a, [](double x) { return std::log(x); });
    const bool wa = needs_grad(a);
    record_node("log", {a}, out, [a, out, wa]() {
        if (wa) accumulate_grad(a, divide(Tensor(out.impl()->grad), a.detach()));
    });
    return out;
}

Tensor relu(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    if (a.dtype() == DType::f32)
        kern::table<float>().relu(a.data<float>(), out.data<float>(), a.numel());
    else
        kern::table<double>().relu(a.data<double>(), out.data<double>(), a.numel());
    const bool wa = needs_grad(a);
    record_node("relu", {a}, out, [a, out, wa]() {
        if (!wa) return;
        auto impl = a.impl();
        if (!impl->grad) impl->grad = Tensor::zeros(impl->shape, impl->dtype).impl();
        const std::int64_t n = a.numel();
        if (impl->dtype == DType::f32)
            kern::table<float>().relu_bwd(impl->ptr<float>(), out.impl()->grad->ptr<float>(),
                                          impl->grad->ptr<float>(), n);
        else
            kern::table<double>().relu_bwd(impl->ptr<double>(), out.impl()->grad->ptr<double>(),
                                           impl->grad->ptr<double>(), n);
    });
    return out;
}

// ---- matmul / linear ----

namespace {

template <typename T>
void gemm_dispatch(const Tensor& A, const Tensor& B, Tensor& C, std::int64_t M, std::int64_t K,
                   std::int64_t N) {
    kern::table<T>().gemm(A.data<T>(), B.data<T>(), C.data<T>(), M, K, N);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_same_dtype(a, b, "matmul");
    if (a.ndim() != 2 || b.ndim() != 2)
        throw Error("matmul: expects rank-2 operands, got " + shape_str(a.shape()) + " x " +
                    shape_str(b.shape()));
    if (a.dim(1) != b.dim(0))
        throw Error("matmul: inner dims disagree: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const std::int64_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
    Tensor out = Tensor::zeros({M, N}, a.dtype());
    if (a.dtype() == DType::f32)
        gemm_dispatch<float>(a, b, out, M, K, N);
    else
        gemm_dispatch<double>(a, b, out, M, K, N);
    const bool wa = needs_grad(a), wb = needs_grad(b);
    record_node("matmul", {a, b}, out, [a, b, out, M, K, N, wa, wb]() {
        Tensor g(out.impl()->grad);
        if (wa) {
            Tensor da = Tensor::zeros({M, K}, a.dtype());
            if (a.dtype() == DType::f32)
                kern::table<float>().gemm_nt(g.data<float>(), b.data<float>(), da.data<float>(), M, N, K);
            else
                kern::table<double>().gemm_nt(g.data<double>(), b.data<double>(), da.data<double>(), M, N, K);
            accumulate_grad(a, da);
        }
        if (wb) {
            Tensor db = Tensor::zeros({K, N}, b.dtype());
            if (b.dtype() == DType::f32)
                kern::table<float>().gemm_tn(a.data<float>(), g.data<float>(), db.data<float>(), M, K, N);
            else
                kern::table<double>().gemm_tn(a.data<double>(), g.data<double>(), db.data<double>(), M, K, N);
            accumulate_grad(b, db);
        }
    });
    return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    check_same_dtype(x, w, "linear");
    if (x.ndim() != 2 || w.ndim() != 2)
        throw Error("linear: x and w must be rank-2, got " + shape_str(x.shape()) + ", " +
                    shape_str(w.shape()));
    if (x.dim(1) != w.dim(1))
        throw Error("linear: in-features disagree: x " + shape_str(x.shape()) + " vs w " +
                    shape_str(w.shape()));
    const std::int64_t N = x.dim(0), I = x.dim(1), O = w.dim(0);
    if (b.defined()) {
        check_same_dtype(x, b, "linear");
        if (b.ndim() != 1 || b.dim(0) != O) throw Error("linear: bias shape mismatch");
    }
    Tensor out = Tensor::zeros({N, O}, x.dtype());

    auto run = [&]<typename T>() {
        T* op = out.data<T>();
        if (b.defined()) {
            const T* bp = b.data<T>();
            for (std::int64_t n = 0; n < N; ++n) std::memcpy(op + n * O, bp, O * sizeof(T));
        }
        kern::table<T>().gemm_nt(x.data<T>(), w.data<T>(), op, N, I, O);
    };
    if (x.dtype() == DType::f32)
        run.template operator()<float>();
    else
        run.template operator()<double>();

    const bool wx = needs_grad(x), ww = needs_grad(w), wb2 = b.defined() && needs_grad(b);
    record_node("linear", {x, w, b.defined() ? b : x}, out, [x, w, b, out, N, I, O, wx, ww, wb2]() {
        Tensor g(out.impl()->grad);
        auto run_bwd = [&]<typename T>() {
            if (wx) {
                Tensor dx = Tensor::zeros({N, I}, x.dtype());
                kern::table<T>().gemm(g.data<T>(), w.data<T>(), dx.data<T>(), N, O, I);
                accumulate_grad(x, dx);
            }
            if (ww) {
                Tensor dw = Tensor::zeros({O, I}, w.dtype());
                kern::table<T>().gemm_tn(g.data<T>(), x.data<T>(), dw.data<T>(), N, O, I);
                accumulate_grad(w, dw);
            }
            if (wb2) {
                Tensor db = Tensor::zeros({O}, b.dtype());
                T* dbp = db.data<T>();
                const T* gp = g.data<T>();
                for (std::int64_t n = 0; n < N; ++n) kern::table<T>().add(dbp, gp + n * O, dbp, O);
                accumulate_grad(b, db);
            }
        };
        if (x.dtype() == DType::f32)
            run_bwd.template operator()<float>();
        else
            run_bwd.template operator()<double>();
    });
    return out;
}

// ---- conv2d ----

namespace {

struct ConvDims {
    std::int64_t N, Ci, H, W, Co, kh, kw, oh, ow, s, p;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, std::int64_t stride, std::int64_t padding) {
    if (x.ndim() != 4 || w.ndim() != 4)
        throw Error("conv2d: x and w must be rank-4 NCHW/OIHW, got " + shape_str(x.shape()) + ", " +
                    shape_str(w.shape()));
    if (stride < 1) throw Error("conv2d: stride must be >= 1");
    if (padding < 0) throw Error("conv2d: padding must be >= 0");
    ConvDims d;
    d.N = x.dim(0);
    d.Ci = x.dim(1);
    d.H = x.dim(2);
    d.W = x.dim(3);
    d.Co = w.dim(0);
    d.kh = w.dim(2);
    d.kw = w.dim(3);
    d.s = stride;
    d.p = padding;
    if (w.dim(1) != d.Ci)
        throw Error("conv2d: weight expects " + std::to_string(w.dim(1)) + " input channels, got " +
                    std::to_string(d.Ci));
    d.oh = (d.H + 2 * d.p - d.kh) / d.s + 1;
    d.ow = (d.W + 2 * d.p - d.kw) / d.s + 1;
    if (d.oh <= 0 || d.ow <= 0) throw Error("conv2d: kernel larger than padded input");
    return d;
}

// col layout: [Ci*kh*kw, oh*ow] for one image, zero padding.
template <typename T>
void im2col(const T* x, const ConvDims& d, T* col) {
    const std::int64_t opix = d.oh * d.ow;
    for (std::int64_t c = 0; c < d.Ci; ++c) {
        const T* xc = x + c * d.H * d.W;
        for (std::int64_t ki = 0; ki < d.kh; ++ki) {
            for (std::int64_t kj = 0; kj < d.kw; ++kj) {
                T* crow = col + ((c * d.kh + ki) * d.kw + kj) * opix;
                for (std::int64_t oy = 0; oy < d.oh; ++oy) {
                    const std::int64_t iy = oy * d.s - d.p + ki;
                    T* dst = crow + oy * d.ow;
                    if (iy < 0 || iy >= d.H) {
                        std::memset(dst, 0, d.ow * sizeof(T));
                        continue;
                    }
                    const T* src = xc + iy * d.W;
                    if (d.s == 1) {
                        // valid ox range: 0 <= ox - p + kj < W
                        const std::int64_t lo = std::max<std::int64_t>(0, d.p - kj);
                        const std::int64_t hi = std::min<std::int64_t>(d.ow, d.W + d.p - kj);
                        if (lo > 0) std::memset(dst, 0, lo * sizeof(T));
                        if (hi > lo) std::memcpy(dst + lo, src + lo - d.p + kj, (hi - lo) * sizeof(T));
                        if (hi < d.ow) std::memset(dst + hi, 0, (d.ow - hi) * sizeof(T));
                    } else {
                        for (std::int64_t ox = 0; ox < d.ow; ++ox) {
                            const std::int64_t ix = ox * d.s - d.p + kj;
                            dst[ox] = (ix >= 0 && ix < d.W) ? src[ix] : T(0);
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_accum(const T* col, const ConvDims& d, T* dx) {
    const std::int64_t opix = d.oh * d.ow;
    for (std::int64_t c = 0; c < d.Ci; ++c) {
        T* xc = dx + c * d.H * d.W;
        for (std::int64_t ki = 0; ki < d.kh; ++ki) {
            for (std::int64_t kj = 0; kj < d.kw; ++kj) {
                const T* crow = col + ((c * d.kh + ki) * d.kw + kj) * opix;
                for (std::int64_t oy = 0; oy < d.oh; ++oy) {
                    const std::int64_t iy = oy * d.s - d.p + ki;
                    if (iy < 0 || iy >= d.H) continue;
                    const T* src = crow + oy * d.ow;
                    T* dst = xc + iy * d.W;
                    if (d.s == 1) {
                        const std::int64_t lo = std::max<std::int64_t>(0, d.p - kj);
                        const std::int64_t hi = std::min<std::int64_t>(d.ow, d.W + d.p - kj);
                        if (hi > lo) kern::table<T>().add(dst + lo - d.p + kj, src + lo,
                                                          dst + lo - d.p + kj, hi - lo);
                    } else {
                        for (std::int64_t ox = 0; ox < d.ow; ++ox) {
                            const std::int64_t ix = ox * d.s - d.p + kj;
                            if (ix >= 0 && ix < d.W) dst[ix] += src[ox];
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
Tensor conv2d_impl(const Tensor& x, const Tensor& w, const Tensor& b, const ConvDims& d,
                   Tensor& saved_col) {
    const std::int64_t opix = d.oh * d.ow;
    const std::int64_t crows = d.Ci * d.kh * d.kw;
    const bool is_1x1 = d.kh == 1 && d.kw == 1 && d.s == 1 && d.p == 0;
    Tensor out = Tensor::zeros({d.N, d.Co, d.oh, d.ow}, x.dtype());
    if (!is_1x1) saved_col = Tensor::zeros({d.N, crows, opix}, x.dtype());

    const T* xp = x.data<T>();
    const T* wp = w.data<T>();
    const T* bp = b.defined() ? b.data<T>() : nullptr;
    T* op = out.data<T>();
    for (std::int64_t n = 0; n < d.N; ++n) {
        const T* xn = xp + n * d.Ci * d.H * d.W;
        T* on = op + n * d.Co * opix;
        if (bp) {
            for (std::int64_t c = 0; c < d.Co; ++c)
                for (std::int64_t i = 0; i < opix; ++i) on[c * opix + i] = bp[c];
        }
        const T* colp;
        if (is_1x1) {
            colp = xn;  // [Ci, H*W] already matches the col layout
        } else {
            T* cn = saved_col.data<T>() + n * crows * opix;
            im2col<T>(xn, d, cn);
            colp = cn;
        }
        kern::table<T>().gemm(wp, colp, on, d.Co, crows, opix);
    }
    return out;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::int64_t stride,
              std::int64_t padding) {
    check_same_dtype(x, w, "conv2d");
    if (b.defined()) check_same_dtype(x, b, "conv2d");
    const ConvDims d = conv_dims(x, w, stride, padding);
    if (b.defined() && (b.ndim() != 1 || b.dim(0) != d.Co)) throw Error("conv2d: bias shape mismatch");

    Tensor col;  // saved for backward; undefined for the 1x1 fast path
    Tensor out = x.dtype() == DType::f32 ? conv2d_impl<float>(x, w, b, d, col)
                                         : conv2d_impl<double>(x, w, b, d, col);

    const bool wx = needs_grad(x), ww = needs_grad(w), wb = b.defined() && needs_grad(b);
    record_node("conv2d", {x, w, b.defined() ? b : x}, out, [x, w, b, out, col, d, wx, ww, wb]() {
        Tensor g(out.impl()->grad);
        const std::int64_t opix = d.oh * d.ow;
        const std::int64_t crows = d.Ci * d.kh * d.kw;
        const bool is_1x1 = !col.defined();

        auto run = [&]<typename T>() {
            const T* gp = g.data<T>();
            Tensor dw, dcol;
            if (ww) dw = Tensor::zeros(w.shape(), w.dtype());
            Tensor dx;
            if (wx) {
                auto impl = x.impl();
                if (!impl->grad) impl->grad = Tensor::zeros(impl->shape, impl->dtype).impl();
                dx = Tensor(impl->grad);
                if (!is_1x1) dcol = Tensor::zeros({crows, opix}, x.dtype());
            }
            for (std::int64_t n = 0; n < d.N; ++n) {
                const T* gn = gp + n * d.Co * opix;
                const T* coln = is_1x1 ? x.data<T>() + n * d.Ci * d.H * d.W
                                       : col.data<T>() + n * crows * opix;
                if (ww)
                    kern::table<T>().gemm_nt(gn, coln, dw.data<T>(), d.Co, opix, crows);
                if (wx) {
                    if (is_1x1) {
                        // dcol is dx directly
                        kern::table<T>().gemm_tn(w.data<T>(), gn,
                                                 dx.data<T>() + n * d.Ci * d.H * d.W, d.Co, crows, opix);
                    } else {
                        std::memset(dcol.data<T>(), 0, sizeof(T) * crows * opix);
                        kern::table<T>().gemm_tn(w.data<T>(), gn, dcol.data<T>(), d.Co, crows, opix);
                        col2im_accum<T>(dcol.data<T>(), d, dx.data<T>() + n * d.Ci * d.H * d.W);
                    }
                }
            }
            if (ww) accumulate_grad(w, dw);
            if (wb) {
                Tensor db = Tensor::zeros({d.Co}, b.dtype());
                T* dbp = db.data<T>();
                for (std::int64_t n = 0; n < d.N; ++n)
                    for (std::int64_t c = 0; c < d.Co; ++c)
                        dbp[c] += kern::table<T>().sum(gp + (n * d.Co + c) * opix, opix);
                accumulate_grad(b, db);
            }
        };
        if (x.dtype() == DType::f32)
            run.template operator()<float>();
        else
            run.template operator()<double>();
    });
    return out;
}

// ---- pooling / reductions ----

Tensor global_avg_pool(const Tensor& x) {
    if (x.ndim() != 4) throw Error("global_avg_pool: expects NCHW, got " + shape_str(x.shape()));
    const std::int64_t N = x.dim(0), C = x.dim(1), pix = x.dim(2) * x.dim(3);
    Tensor out = Tensor::zeros({N, C}, x.dtype());
    auto run = [&]<typename T>() {
        const T* xp = x.data<T>();
        T* op = out.data<T>();
        for (std::int64_t i = 0; i < N * C; ++i)
            op[i] = kern::table<T>().sum(xp + i * pix, pix) / static_cast<T>(pix);
    };
    if (x.dtype() == DType::f32)
        run.template operator()<float>();
    else
        run.template operator()<double>();
    const bool wx = needs_grad(x);
    record_node("global_avg_pool", {x}, out, [x, out, N, C, pix, wx]() {
        if (!wx) return;
        Tensor g(out.impl()->grad);
        Tensor dx = Tensor::zeros(x.shape(), x.dtype());
        auto run_bwd = [&]<typename T>() {
            const T* gp = g.data<T>();
            T* dp = dx.data<T>();
            for (std::int64_t i = 0; i < N * C; ++i) {
                const T v = gp[i] / static_cast<T>(pix);
                for (std::int64_t j = 0; j < pix; ++j) dp[i * pix + j] = v;
            }
        };
        if (x.dtype() == DType::f32)
            run_bwd.template operator()<float>();
        else
            run_bwd.template operator()<double>();
        accumulate_grad(x, dx);
    });
    return out;
}

namespace {

enum class Red { sum, mean, max };

struct RedPlan {
    Shape out_shape;            // with keepdims applied
    Shape full_shape;           // out shape with reduced dims kept as 1
    std::vector<std::int64_t> out_stride_for_in;  // per input dim
    std::int64_t count;         // elements folded into each output cell
};

RedPlan reduce_plan(const Shape& in, std::vector<std::int64_t> axes, bool keepdims) {
    const std::int64_t r = static_cast<std::int64_t>(in.size());
    std::vector<bool> reduced(in.size(), false);
    if (axes.empty()) {
        std::fill(reduced.begin(), reduced.end(), true);
    } else {
        for (auto a : axes) {
            if (a < 0 || a >= r) throw Error("reduce: axis out of range");
            if (reduced[a]) throw Error("reduce: duplicate axis");
            reduced[a] = true;
        }
    }
    RedPlan p;
    p.count = 1;
    p.full_shape.assign(in.size(), 1);
    for (std::size_t i = 0; i < in.size(); ++i) {
        if (reduced[i]) {
            p.count *= in[i];
            if (keepdims) p.out_shape.push_back(1);
        } else {
            p.full_shape[i] = in[i];
            p.out_shape.push_back(in[i]);
        }
    }
    if (p.out_shape.empty()) p.out_shape.push_back(1);
    // strides of the "full" (1-padded) output, per input dim
    p.out_stride_for_in.assign(in.size(), 0);
    std::int64_t acc = 1;
    for (std::size_t k = in.size(); k-- > 0;) {
        p.out_stride_for_in[k] = p.full_shape[k] == 1 ? 0 : acc;
        acc *= p.full_shape[k];
    }
    return p;
}

template <typename T, typename F>
void reduce_walk(const Shape& in, const RedPlan& p, F&& f) {
    std::vector<std::int64_t> idx(in.size(), 0);
    std::int64_t oi = 0;
    const std::int64_t n = shape_numel(in);
    for (std::int64_t lin = 0; lin < n; ++lin) {
        f(lin, oi);
        for (std::size_t k = in.size(); k-- > 0;) {
            ++idx[k];
            oi += p.out_stride_for_in[k];
            if (idx[k] < in[k]) break;
            oi -= p.out_stride_for_in[k] * in[k];
            idx[k] = 0;
        }
    }
}

Tensor reduce_op(Red kind, const Tensor& a, std::vector<std::int64_t> axes, bool keepdims) {
    const RedPlan p = reduce_plan(a.shape(), axes, keepdims);
    Tensor out = Tensor::zeros(p.out_shape, a.dtype());
    std::shared_ptr<std::vector<std::int64_t>> argmax;
    if (kind == Red::max) argmax = std::make_shared<std::vector<std::int64_t>>(out.numel(), -1);

    auto run = [&]<typename T>() {
        const T* ap = a.data<T>();
        T* op = out.data<T>();
        if (kind == Red::max)
            for (std::int64_t i = 0; i < out.numel(); ++i) op[i] = -std::numeric_limits<T>::infinity();
        reduce_walk<T>(a.shape(), p, [&](std::int64_t lin, std::int64_t oi) {
            if (kind == Red::max) {
                if (ap[lin] > op[oi]) {
                    op[oi] = ap[lin];
                    (*argmax)[oi] = lin;
                }
            } else {
                op[oi] += ap[lin];
            }
        });
        if (kind == Red::mean)
            for (std::int64_t i = 0; i < out.numel(); ++i) op[i] /= static_cast<T>(p.count);
    };
    if (a.dtype() == DType::f32)
        run.template operator()<float>();
    else
        run.template operator()<double>();

    const bool wa = needs_grad(a);
    const char* name = kind == Red::sum ? "reduce_sum" : kind == Red::mean ? "reduce_mean" : "reduce_max";
    record_node(name, {a}, out, [a, out, p, kind, argmax, wa]() {
        if (!wa) return;
        Tensor g(out.impl()->grad);
        Tensor dx = Tensor::zeros(a.shape(), a.dtype());
        auto run_bwd = [&]<typename T>() {
            const T* gp = g.data<T>();
            T* dp = dx.data<T>();
            if (kind == Red::max) {
                for (std::int64_t i = 0; i < g.numel(); ++i)
                    if ((*argmax)[i] >= 0) dp[(*argmax)[i]] += gp[i];
            } else {
                const T scale = kind == Red::mean ? T(1) / static_cast<T>(p.count) : T(1);
                reduce_walk<T>(a.shape(), p, [&](std::int64_t lin, std::int64_t oi) { dp[lin] = gp[oi] * scale; });
            }
        };
        if (a.dtype() == DType::f32)
            run_bwd.template operator()<float>();
        else
            run_bwd.template operator()<double>();
        accumulate_grad(a, dx);
    });
    return out;
}

}  // namespace

Tensor reduce_sum(const Tensor& a, std::vector<std::int64_t> axes, bool keepdims) {
    return reduce_op(Red::sum, a, std::move(axes), keepdims);
}
Tensor reduce_mean(const Tensor& a, std::vector<std::int64_t> axes, bool keepdims) {
    return reduce_op(Red::mean, a, std::move(axes), keepdims);
}
Tensor reduce_max(const Tensor& a, std::vector<std::int64_t> axes, bool keepdims) {
    return reduce_op(Red::max, a, std::move(axes), keepdims);
}

// ---- softmax / indexing ----

Tensor log_softmax(const Tensor& z) {
    if (z.ndim() != 2) throw Error("log_softmax: expects [N,C], got " + shape_str(z.shape()));
    const std::int64_t N = z.dim(0), C = z.dim(1);
    Tensor out = Tensor::zeros(z.shape(), z.dtype());
    auto run = [&]<typename T>() {
        const T* zp = z.data<T>();
        T* op = out.data<T>();
        for (std::int64_t n = 0; n < N; ++n) {
            const T* row = zp + n * C;
            T m = row[0];
            for (std::int64_t c = 1; c < C; ++c) m = std::max(m, row[c]);
            T s = 0;
            for (std::int64_t c = 0; c < C; ++c) s += std::exp(row[c] - m);
            const T lse = m + std::log(s);
            for (std::int64_t c = 0; c < C; ++c) op[n * C + c] = row[c] - lse;
        }
    };
    if (z.dtype() == DType::f32)
        run.template operator()<float>();
    else
        run.template operator()<double>();
    const bool wz = needs_grad(z);
    record_node("log_softmax", {z}, out, [z, out, N, C, wz]() {
        if (!wz) return;
        Tensor g(out.impl()->grad);
        Tensor dz = Tensor::zeros(z.shape(), z.dtype());
        auto run_bwd = [&]<typename T>() {
            const T* gp = g.data<T>();
            const T* yp = out.data<T>();
            T* dp = dz.data<T>();
            for (std::int64_t n = 0; n < N; ++n) {
                const T gs = kern::table<T>().sum(gp + n * C, C);
                for (std::int64_t c = 0; c < C; ++c)
                    dp[n * C + c] = gp[n * C + c] - std::exp(yp[n * C + c]) * gs;
            }
        };
        if (z.dtype() == DType::f32)
            run_bwd.template operator()<float>();
        else
            run_bwd.template operator()<double>();
        accumulate_grad(z, dz);
    });
    return out;
}

Tensor take_per_row(const Tensor& a, const std::vector<std::int64_t>& idx) {
    if (a.ndim() != 2) throw Error("take_per_row: expects [N,C], got " + shape_str(a.shape()));
    const std::int64_t N = a.dim(0), C = a.dim(1);
    if (static_cast<std::int64_t>(idx.size()) != N)
        throw Error("take_per_row: index count " + std::to_string(idx.size()) + " != rows " +
                    std::to_string(N));
    for (auto i : idx)
        if (i < 0 || i >= C)
            throw Error("take_per_row: index " + std::to_string(i) + " outside [0," + std::to_string(C) + ")");
    Tensor out = Tensor::zeros({N}, a.dtype());
    auto ids = std::make_shared<std::vector<std::int64_t>>(idx);
    auto run = [&]<typename T>() {
        const T* ap = a.data<T>();
        T* op = out.data<T>();
        for (std::int64_t n = 0; n < N; ++n) op[n] = ap[n * C + idx[n]];
    };
    if (a.dtype() == DType::f32)
        run.template operator()<float>();
    else
        run.template operator()<double>();
    const bool wa = needs_grad(a);
    record_node("take_per_row", {a}, out, [a, out, ids, N, C, wa]() {
        if (!wa) return;
        Tensor g(out.impl()->grad);
        Tensor dx = Tensor::zeros(a.shape(), a.dtype());
        auto run_bwd = [&]<typename T>() {
            const T* gp = g.data<T>();
            T* dp = dx.data<T>();
            for (std::int64_t n = 0; n < N; ++n) dp[n * C + (*ids)[n]] += gp[n];
        };
        if (a.dtype() == DType::f32)
            run_bwd.template operator()<float>();
        else
            run_bwd.template operator()<double>();
        accumulate_grad(a, dx);
    });
    return out;
}

Tensor channel_slice(const Tensor& x, std::int64_t c0, std::int64_t c1) {
    if (x.ndim() != 4) throw Error("channel_slice: expects NCHW");
    const std::int64_t N = x.dim(0), C = x.dim(1), pix = x.dim(2) * x.dim(3);
    if (c0 < 0 || c1 > C || c0 >= c1) throw Error("channel_slice: bad range");
    const std::int64_t Cs = c1 - c0;
    Tensor out = Tensor::zeros({N, Cs, x.dim(2), x.dim(3)}, x.dtype());
    const std::size_t esz = dtype_size(x.dtype());
    auto copy_block = [&](std::byte* dst, const std::byte* src) {
        for (std::int64_t n = 0; n < N; ++n)
            std::memcpy(dst + n * Cs * pix * esz, src + (n * C + c0) * pix * esz, Cs * pix * esz);
    };
    copy_block(out.impl()->storage->data(), x.impl()->storage->data());
    const bool wx = needs_grad(x);
    record_node("channel_slice", {x}, out, [x, out, N, C, Cs, pix, c0, wx]() {
        if (!wx) return;
        Tensor g(out.impl()->grad);
        Tensor dx = Tensor::zeros(x.shape(), x.dtype());
        auto run_bwd = [&]<typename T>() {
            const T* gp = g.data<T>();
            T* dp = dx.data<T>();
            for (std::int64_t n = 0; n < N; ++n)
                std::memcpy(dp + (n * C + c0) * pix, gp + n * Cs * pix, Cs * pix * sizeof(T));
        };
        if (x.dtype() == DType::f32)
            run_bwd.template operator()<float>();
        else
            run_bwd.template operator()<double>();
        accumulate_grad(x, dx);
    });
    return out;
}

Tensor channel_concat(const Tensor& a, const Tensor& b) {
    check_same_dtype(a, b, "channel_concat");
    if (a.ndim() != 4 || b.ndim() != 4) throw Error("channel_concat: expects NCHW");
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
        throw Error("channel_concat: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                    " disagree outside the channel dim");
    const std::int64_t N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), pix = a.dim(2) * a.dim(3);
    Tensor out = Tensor::zeros({N, Ca + Cb, a.dim(2), a.dim(3)}, a.dtype());
    const std::size_t esz = dtype_size(a.dtype());
    std::byte* op = out.impl()->storage->data();
    const std::byte* ap = a.impl()->storage->data();
    const std::byte* bp = b.impl()->storage->data();
    for (std::int64_t n = 0; n < N; ++n) {
        std::memcpy(op + n * (Ca + Cb) * pix * esz, ap + n * Ca * pix * esz, Ca * pix * esz);
        std::memcpy(op + (n * (Ca + Cb) + Ca) * pix * esz, bp + n * Cb * pix * esz, Cb * pix * esz);
    }
    const bool wa = needs_grad(a), wb = needs_grad(b);
    record_node("channel_concat", {a, b}, out, [a, b, out, N, Ca, Cb, pix, wa, wb]() {
        Tensor g(out.impl()->grad);
        auto run_bwd = [&]<typename T>() {
            const T* gp = g.data<T>();
            if (wa) {
                Tensor da = Tensor::zeros(a.shape(), a.dtype());
                T* dp = da.data<T>();
                for (std::int64_t n = 0; n < N; ++n)
                    std::memcpy(dp + n * Ca * pix, gp + n * (Ca + Cb) * pix, Ca * pix * sizeof(T));
                accumulate_grad(a, da);
            }
            if (wb) {
                Tensor db = Tensor::zeros(b.shape(), b.dtype());
                T* dp = db.data<T>();
                for (std::int64_t n = 0; n < N; ++n)
                    std::memcpy(dp + n * Cb * pix, gp + (n * (Ca + Cb) + Ca) * pix, Cb * pix * sizeof(T));
                accumulate_grad(b, db);
            }
        };
        if (a.dtype() == DType::f32)
            run_bwd.template operator()<float>();
        else
            run_bwd.template operator()<double>();
    });
    return out;
}

// ---- batchnorm ----

Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor running_mean,
                   Tensor running_var, bool training, double momentum, double eps) {
    if (x.ndim() != 4) throw Error("batchnorm2d: expects NCHW, got " + shape_str(x.shape()));
    check_same_dtype(x, gamma, "batchnorm2d");
    check_same_dtype(x, beta, "batchnorm2d");
    const std::int64_t N = x.dim(0), C = x.dim(1), pix = x.dim(2) * x.dim(3);
    if (gamma.numel() != C || beta.numel() != C || running_mean.numel() != C || running_var.numel() != C)
        throw Error("batchnorm2d: per-channel parameter size mismatch");
    if (training && N < 2) throw Error("batchnorm2d: training mode needs batch size >= 2");

    const std::int64_t M = N * pix;  // elements per channel
    Tensor mean = Tensor::zeros({C}, x.dtype());
    Tensor invstd = Tensor::zeros({C}, x.dtype());
    Tensor out = Tensor::zeros(x.shape(), x.dtype());

    auto run = [&]<typename T>() {
        const T* xp = x.data<T>();
        T* mp = mean.data<T>();
        T* ip = invstd.data<T>();
        if (training) {
            for (std::int64_t c = 0; c < C; ++c) {
                double s = 0;
                for (std::int64_t n = 0; n < N; ++n)
                    s += static_cast<double>(kern::table<T>().sum(xp + (n * C + c) * pix, pix));
                const double mu = s / static_cast<double>(M);
                double v = 0;
                for (std::int64_t n = 0; n < N; ++n) {
                    const T* row = xp + (n * C + c) * pix;
                    for (std::int64_t i = 0; i < pix; ++i) {
                        const double dlt = static_cast<double>(row[i]) - mu;
                        v += dlt * dlt;
                    }
                }
                const double var = v / static_cast<double>(M);
                mp[c] = static_cast<T>(mu);
                ip[c] = static_cast<T>(1.0 / std::sqrt(var + eps));
                // running stats: EMA with the unbiased variance
                const double unbiased = v / static_cast<double>(M - 1);
                if (running_mean.dtype() == DType::f32) {
                    float* rm = running_mean.data<float>();
                    float* rv = running_var.data<float>();
                    rm[c] = static_cast<float>((1.0 - momentum) * rm[c] + momentum * mu);
                    rv[c] = static_cast<float>((1.0 - momentum) * rv[c] + momentum * unbiased);
                } else {
                    double* rm = running_mean.data<double>();
                    double* rv = running_var.data<double>();
                    rm[c] = (1.0 - momentum) * rm[c] + momentum * mu;
                    rv[c] = (1.0 - momentum) * rv[c] + momentum * unbiased;
                }
            }
        } else {
            for (std::int64_t c = 0; c < C; ++c) {
                const double mu = running_mean.at({c});
                const double var = running_var.at({c});
                mp[c] = static_cast<T>(mu);
                ip[c] = static_cast<T>(1.0 / std::sqrt(var + eps));
            }
        }
        const T* gp = gamma.data<T>();
        const T* bp = beta.data<T>();
        T* op = out.data<T>();
        for (std::int64_t n = 0; n < N; ++n) {
            for (std::int64_t c = 0; c < C; ++c) {
                const T* row = xp + (n * C + c) * pix;
                T* orow = op + (n * C + c) * pix;
                const T a = gp[c] * ip[c];
                const T sh = bp[c] - mp[c] * a;
                for (std::int64_t i = 0; i < pix; ++i) orow[i] = a * row[i] + sh;
            }
        }
    };
    if (x.dtype() == DType::f32)
        run.template operator()<float>();
    else
        run.template operator()<double>();

    const bool wx = needs_grad(x), wg = needs_grad(gamma), wb = needs_grad(beta);
    record_node("batchnorm2d", {x, gamma, beta}, out,
                [x, gamma, beta, out, mean, invstd, N, C, pix, M, training, wx, wg, wb]() {
        Tensor g(out.impl()->grad);
        auto run_bwd = [&]<typename T>() {
            const T* gp = g.data<T>();
            const T* xp = x.data<T>();
            const T* mp = mean.data<T>();
            const T* ip = invstd.data<T>();
            const T* gam = gamma.data<T>();
            Tensor dgam = Tensor::zeros({C}, x.dtype());
            Tensor dbet = Tensor::zeros({C}, x.dtype());
            T* dgp = dgam.data<T>();
            T* dbp = dbet.data<T>();
            Tensor dx;
            T* dxp = nullptr;
            if (wx) {
                dx = Tensor::zeros(x.shape(), x.dtype());
                dxp = dx.data<T>();
            }
            for (std::int64_t c = 0; c < C; ++c) {
                double sg = 0, sgx = 0;
                for (std::int64_t n = 0; n < N; ++n) {
                    const T* grow = gp + (n * C + c) * pix;
                    const T* xrow = xp + (n * C + c) * pix;
                    for (std::int64_t i = 0; i < pix; ++i) {
                        const double xh = (static_cast<double>(xrow[i]) - mp[c]) * ip[c];
                        sg += grow[i];
                        sgx += grow[i] * xh;
                    }
                }
                dbp[c] = static_cast<T>(sg);
                dgp[c] = static_cast<T>(sgx);
                if (!wx) continue;
                const double a = gam[c] * ip[c];
                for (std::int64_t n = 0; n < N; ++n) {
                    const T* grow = gp + (n * C + c) * pix;
                    const T* xrow = xp + (n * C + c) * pix;
                    T* drow = dxp + (n * C + c) * pix;
                    if (training) {
                        for (std::int64_t i = 0; i < pix; ++i) {
                            const double xh = (static_cast<double>(xrow[i]) - mp[c]) * ip[c];
                            drow[i] = static_cast<T>(
                                a * (grow[i] - sg / static_cast<double>(M) - xh * sgx / static_cast<double>(M)));
                        }
                    } else {
                        for (std::int64_t i = 0; i < pix; ++i) drow[i] = static_cast<T>(a * grow[i]);
                    }
                }
            }
            if (wg) accumulate_grad(gamma, dgam);
            if (wb) accumulate_grad(beta, dbet);
            if (wx) accumulate_grad(x, dx);
        };
        if (x.dtype() == DType::f32)
            run_bwd.template operator()<float>();
        else
            run_bwd.template operator()<double>();
    });
    return out;
}

std::vector<std::int64_t> argmax_rows(const Tensor& z) {
    if (z.ndim() != 2) throw Error("argmax_rows: expects [N,C]");
    const std::int64_t N = z.dim(0), C = z.dim(1);
    std::vector<std::int64_t> out(N, 0);
    auto run = [&]<typename T>() {
        const T* zp = z.data<T>();
        for (std::int64_t n = 0; n < N; ++n) {
            const T* row = zp + n * C;
            std::int64_t best = 0;
            for (std::int64_t c = 1; c < C; ++c)
                if (row[c] > row[best]) best = c;
            out[n] = best;
        }
    };
    if (z.dtype() == DType::f32)
        run.template operator()<float>();
    else
        run.template operator()<double>();
    return out;
}

// ---- gradient check ----

double check_gradients(const std::function<Tensor(const Tensor&)>& f, Tensor x, double eps) {
    if (x.dtype() != DType::f64)
        throw Error("check_gradients: requires an f64 input (f32 cannot reach the tolerance)");
    Tensor xg = x.clone().set_requires_grad(true);
    Tensor analytic;
    {
        Tape tape;
        Tensor y = f(xg);
        if (y.numel() != 1) throw Error("check_gradients: f must return a scalar");
        tape.backward(y);
        analytic = xg.grad().clone();
    }
    double max_rel = 0.0;
    {
        NoGradGuard ng;
        Tensor xp = x.clone();
        double* p = xp.data<double>();
        const double* ga = analytic.data<double>();
        const std::int64_t n = x.numel();
        for (std::int64_t i = 0; i < n; ++i) {
            const double orig = p[i];
            p[i] = orig + eps;
            const double fp = f(xp).item();
            p[i] = orig - eps;
            const double fm = f(xp).item();
            p[i] = orig;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double denom = std::max({std::abs(ga[i]), std::abs(numeric), 1e-8});
            max_rel = std::max(max_rel, std::abs(ga[i] - numeric) / denom);
        }
    }
    return max_rel;
}

}  // namespace dfpt
