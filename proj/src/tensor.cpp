#include "dfpt/tensor.hpp"

#include <cmath>
#include <cstring>
#include <random>
#include <sstream>

namespace dfpt {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

namespace {

std::shared_ptr<TensorImpl> make_impl(Shape shape, DType dtype) {
    for (auto d : shape)
        if (d <= 0) throw Error("tensor: non-positive extent in shape " + shape_str(shape));
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->dtype = dtype;
    impl->storage = std::make_shared<std::vector<std::byte>>(
        static_cast<std::size_t>(impl->numel()) * dtype_size(dtype));
    return impl;
}

template <typename T>
void fill_value(TensorImpl& impl, double v) {
    T* p = impl.ptr<T>();
    const std::int64_t n = impl.numel();
    for (std::int64_t i = 0; i < n; ++i) p[i] = static_cast<T>(v);
}

}  // namespace

Tensor Tensor::zeros(Shape shape, DType dtype) { return Tensor(make_impl(std::move(shape), dtype)); }

Tensor Tensor::full(Shape shape, double value, DType dtype) {
    auto impl = make_impl(std::move(shape), dtype);
    if (dtype == DType::f32)
        fill_value<float>(*impl, value);
    else
        fill_value<double>(*impl, value);
    return Tensor(impl);
}

Tensor Tensor::from_f32(Shape shape, std::vector<float> values) {
    auto impl = make_impl(std::move(shape), DType::f32);
    if (static_cast<std::int64_t>(values.size()) != impl->numel())
        throw Error("tensor: value count " + std::to_string(values.size()) + " does not match shape " +
                    shape_str(impl->shape));
    std::memcpy(impl->storage->data(), values.data(), values.size() * sizeof(float));
    return Tensor(impl);
}

Tensor Tensor::from_f64(Shape shape, std::vector<double> values) {
    auto impl = make_impl(std::move(shape), DType::f64);
    if (static_cast<std::int64_t>(values.size()) != impl->numel())
        throw Error("tensor: value count " + std::to_string(values.size()) + " does not match shape " +
                    shape_str(impl->shape));
    std::memcpy(impl->storage->data(), values.data(), values.size() * sizeof(double));
    return Tensor(impl);
}

Tensor Tensor::randn(Shape shape, Rng& rng, DType dtype, double stddev) {
    auto impl = make_impl(std::move(shape), dtype);
    const std::int64_t n = impl->numel();
    if (dtype == DType::f32) {
        float* p = impl->ptr<float>();
        for (std::int64_t i = 0; i < n; ++i) p[i] = static_cast<float>(rng.normal() * stddev);
    } else {
        double* p = impl->ptr<double>();
        for (std::int64_t i = 0; i < n; ++i) p[i] = rng.normal() * stddev;
    }
    return Tensor(impl);
}

Tensor Tensor::uniform(Shape shape, Rng& rng, DType dtype, double lo, double hi) {
    auto impl = make_impl(std::move(shape), dtype);
    const std::int64_t n = impl->numel();
    if (dtype == DType::f32) {
        float* p = impl->ptr<float>();
        for (std::int64_t i = 0; i < n; ++i) p[i] = static_cast<float>(rng.uniform(lo, hi));
    } else {
        double* p = impl->ptr<double>();
        for (std::int64_t i = 0; i < n; ++i) p[i] = rng.uniform(lo, hi);
    }
    return Tensor(impl);
}

const Shape& Tensor::shape() const {
    if (!impl_) throw Error("tensor: undefined");
    return impl_->shape;
}

std::int64_t Tensor::dim(std::size_t i) const { return shape().at(i); }
std::size_t Tensor::ndim() const { return shape().size(); }
std::int64_t Tensor::numel() const {
    if (!impl_) throw Error("tensor: undefined");
    return impl_->numel();
}
DType Tensor::dtype() const {
    if (!impl_) throw Error("tensor: undefined");
    return impl_->dtype;
}

template <typename T>
T* Tensor::data() {
    if (!impl_) throw Error("tensor: undefined");
    if constexpr (std::is_same_v<T, float>) {
        if (impl_->dtype != DType::f32) throw Error("tensor: f32 access on f64 tensor");
    } else {
        if (impl_->dtype != DType::f64) throw Error("tensor: f64 access on f32 tensor");
    }
    return impl_->ptr<T>();
}
template <typename T>
const T* Tensor::data() const {
    return const_cast<Tensor*>(this)->data<T>();
}
template float* Tensor::data<float>();
template double* Tensor::data<double>();
template const float* Tensor::data<float>() const;
template const double* Tensor::data<double>() const;

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool v) {
    if (!impl_) throw Error("tensor: undefined");
    impl_->requires_grad = v;
    return *this;
}

Tensor Tensor::grad() const {
    if (!impl_) throw Error("tensor: undefined");
    if (impl_->grad) return Tensor(impl_->grad);
    return Tensor::zeros(impl_->shape, impl_->dtype);
}

bool Tensor::has_grad() const { return impl_ && impl_->grad != nullptr; }

void Tensor::zero_grad() {
    if (impl_) impl_->grad.reset();
}

Tensor Tensor::detach() const {
    if (!impl_) throw Error("tensor: undefined");
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = impl_->shape;
    impl->dtype = impl_->dtype;
    impl->storage = impl_->storage;
    return Tensor(impl);
}

Tensor Tensor::clone() const {
    if (!impl_) throw Error("tensor: undefined");
    auto impl = make_impl(impl_->shape, impl_->dtype);
    *impl->storage = *impl_->storage;
    return Tensor(impl);
}

Tensor Tensor::astype(DType target) const {
    if (!impl_) throw Error("tensor: undefined");
    if (target == impl_->dtype) return clone();
    auto impl = make_impl(impl_->shape, target);
    const std::int64_t n = impl->numel();
    if (target == DType::f64) {
        const float* s = impl_->ptr<float>();
        double* d = impl->ptr<double>();
        for (std::int64_t i = 0; i < n; ++i) d[i] = static_cast<double>(s[i]);
    } else {
        const double* s = impl_->ptr<double>();
        float* d = impl->ptr<float>();
        for (std::int64_t i = 0; i < n; ++i) d[i] = static_cast<float>(s[i]);
    }
    return Tensor(impl);
}

double Tensor::item() const {
    if (numel() != 1) throw Error("tensor: item() on non-scalar of shape " + shape_str(shape()));
    return dtype() == DType::f32 ? static_cast<double>(impl_->ptr<float>()[0]) : impl_->ptr<double>()[0];
}

double Tensor::at(std::initializer_list<std::int64_t> idx) const {
    const Shape& s = shape();
    if (idx.size() != s.size()) throw Error("tensor: at() rank mismatch");
    std::int64_t off = 0;
    std::size_t k = 0;
    for (auto i : idx) {
        if (i < 0 || i >= s[k]) throw Error("tensor: at() index out of range");
        off = off * s[k] + i;
        ++k;
    }
    return dtype() == DType::f32 ? static_cast<double>(impl_->ptr<float>()[off]) : impl_->ptr<double>()[off];
}

void Tensor::set_at(std::initializer_list<std::int64_t> idx, double v) {
    const Shape& s = shape();
    if (idx.size() != s.size()) throw Error("tensor: set_at() rank mismatch");
    std::int64_t off = 0;
    std::size_t k = 0;
    for (auto i : idx) {
        off = off * s[k] + i;
        ++k;
    }
    if (dtype() == DType::f32)
        impl_->ptr<float>()[off] = static_cast<float>(v);
    else
        impl_->ptr<double>()[off] = v;
}

// ---- Rng ----

class RngState {
public:
    explicit RngState(std::uint64_t seed) : mt(seed) {}
    std::mt19937_64 mt;
};

Rng::Rng(std::uint64_t seed) : state_(std::make_unique<RngState>(seed)) {}
Rng::~Rng() = default;

std::uint64_t Rng::next_u64() { return state_->mt(); }

double Rng::uniform() {
    // 53-bit mantissa, [0,1)
    return static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0);
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
    // Box-Muller without caching the second draw: two uniforms per sample.
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

std::int64_t Rng::uniform_int(std::int64_t n) {
    if (n <= 0) throw Error("rng: uniform_int needs positive bound");
    // Rejection-free modulo is fine here: n is tiny relative to 2^64.
    return static_cast<std::int64_t>(next_u64() % static_cast<std::uint64_t>(n));
}

std::uint64_t Rng::fold(std::uint64_t seed, std::uint64_t salt) {
    // splitmix64 over seed xor rotated salt
    std::uint64_t z = seed ^ (salt * 0x9E3779B97F4A7C15ull + 0xBF58476D1CE4E5B9ull);
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

}  // namespace dfpt
