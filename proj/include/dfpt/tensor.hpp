#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace dfpt {

// Single error type; tests and the CLI match on message content.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

inline std::size_t dtype_size(DType d) { return d == DType::f32 ? 4 : 8; }
inline const char* dtype_name(DType d) { return d == DType::f32 ? "f32" : "f64"; }

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

class Rng;

struct TensorImpl {
    Shape shape;
    DType dtype = DType::f32;
    std::shared_ptr<std::vector<std::byte>> storage;  // shared by detached views
    bool requires_grad = false;
    std::shared_ptr<TensorImpl> grad;  // lazily allocated, same shape/dtype
    // Id of the tape whose op produced this tensor; 0 for leaves/detached.
    std::uint64_t tape_id = 0;

    std::int64_t numel() const { return shape_numel(shape); }
    template <typename T>
    T* ptr() {
        return reinterpret_cast<T*>(storage->data());
    }
    template <typename T>
    const T* ptr() const {
        return reinterpret_cast<const T*>(storage->data());
    }
};

// Dense row-major tensor. Handles share the underlying buffer; clone() makes a
// deep copy. Mixed-dtype arithmetic is rejected, conversions are explicit.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

    static Tensor zeros(Shape shape, DType dtype = DType::f32);
    static Tensor full(Shape shape, double value, DType dtype = DType::f32);
    static Tensor from_f32(Shape shape, std::vector<float> values);
    static Tensor from_f64(Shape shape, std::vector<double> values);
    static Tensor randn(Shape shape, Rng& rng, DType dtype = DType::f32, double stddev = 1.0);
    static Tensor uniform(Shape shape, Rng& rng, DType dtype, double lo, double hi);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    std::int64_t dim(std::size_t i) const;
    std::size_t ndim() const;
    std::int64_t numel() const;
    DType dtype() const;

    template <typename T>
    T* data();
    template <typename T>
    const T* data() const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool v);
    // Gradient accumulated by the last backward passes; zeros if none reached
    // this tensor.
    Tensor grad() const;
    bool has_grad() const;
    void zero_grad();

    // Same buffer, no tape lineage: gradients stop here.
    Tensor detach() const;
    Tensor clone() const;
    Tensor astype(DType target) const;

    double item() const;
    double at(std::initializer_list<std::int64_t> idx) const;
    void set_at(std::initializer_list<std::int64_t> idx, double v);

    std::shared_ptr<TensorImpl> impl() const { return impl_; }

private:
    std::shared_ptr<TensorImpl> impl_;
};

// Deterministic RNG: mt19937_64 plus a hand-rolled Box-Muller so draws do not
// depend on the standard library's distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed);
    double uniform();                    // [0, 1)
    double uniform(double lo, double hi);
    double normal();                     // mean 0, std 1
    std::uint64_t next_u64();
    std::int64_t uniform_int(std::int64_t n);  // [0, n)
    // Derives an independent stream, for (seed, epoch)-style splits.
    static std::uint64_t fold(std::uint64_t seed, std::uint64_t salt);

private:
    std::unique_ptr<class RngState> state_;

public:
    ~Rng();
    Rng(const Rng&) = delete;
    Rng& operator=(const Rng&) = delete;
};

// ---- differentiable ops (recorded on the active tape) ----

Tensor add(const Tensor& a, const Tensor& b);   // broadcast over trailing dims
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor matmul(const Tensor& a, const Tensor& b);            // [M,K]x[K,N]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);  // x[N,I], w[O,I], b[O]
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::int64_t stride,
              std::int64_t padding);                        // x NCHW, w [O,I,kh,kw]
Tensor global_avg_pool(const Tensor& x);                    // [N,C,H,W] -> [N,C]
Tensor reduce_sum(const Tensor& a, std::vector<std::int64_t> axes, bool keepdims);
Tensor reduce_mean(const Tensor& a, std::vector<std::int64_t> axes, bool keepdims);
// Ties resolve to the first maximal index (used by backward and argmax).
Tensor reduce_max(const Tensor& a, std::vector<std::int64_t> axes, bool keepdims);
Tensor log_softmax(const Tensor& z);                        // rows of [N,C]
Tensor take_per_row(const Tensor& a, const std::vector<std::int64_t>& idx);  // out[i]=a[i,idx[i]]
Tensor channel_slice(const Tensor& x, std::int64_t c0, std::int64_t c1);     // NCHW channels [c0,c1)
Tensor channel_concat(const Tensor& a, const Tensor& b);

// Batch-norm over NCHW channels. In training mode batch statistics are used
// and running stats are updated in place (EMA, unbiased variance); in eval
// mode running stats are used. Training mode requires batch size >= 2.
Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor running_mean,
                   Tensor running_var, bool training, double momentum = 0.1, double eps = 1e-5);

// Non-differentiable helpers.
std::vector<std::int64_t> argmax_rows(const Tensor& z);  // [N,C] -> per-row argmax, first-max ties

}  // namespace dfpt
