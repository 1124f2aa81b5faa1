#include "dfpt/nn.hpp"

#include <cmath>
#include <cstring>

namespace dfpt::nn {

const char* group_name(Group g) {
    switch (g) {
        case Group::theta: return "theta";
        case Group::phi: return "phi";
        case Group::psi: return "psi";
    }
    throw Error("group_name: bad group");
}

void Module::buffers(const std::string&, std::vector<NamedTensor>&) const {}

std::vector<NamedTensor> Module::named_params() const {
    std::vector<NamedTensor> out;
    params("", out);
    return out;
}

std::vector<NamedTensor> Module::named_state() const {
    std::vector<NamedTensor> out;
    params("", out);
    buffers("", out);
    return out;
}

std::int64_t Module::param_count() const {
    std::int64_t n = 0;
    for (const auto& p : named_params()) n += p.tensor.numel();
    return n;
}

// ---- Conv2d ----

Conv2d::Conv2d(std::int64_t in_ch_, std::int64_t out_ch_, std::int64_t kernel_,
               std::int64_t stride_, std::int64_t padding_, bool with_bias, Rng& rng, DType dtype)
    : in_ch(in_ch_), out_ch(out_ch_), kernel(kernel_), stride(stride_), padding(padding_) {
    if (in_ch < 1 || out_ch < 1 || kernel < 1 || stride < 1 || padding < 0)
        throw Error("Conv2d: bad geometry");
    const double fan_in = static_cast<double>(in_ch * kernel * kernel);
    weight = Tensor::randn({out_ch, in_ch, kernel, kernel}, rng, dtype, std::sqrt(2.0 / fan_in));
    weight.set_requires_grad(true);
    if (with_bias) {
        bias = Tensor::zeros({out_ch}, dtype);
        bias.set_requires_grad(true);
    }
}

Tensor Conv2d::forward(const Tensor& x, bool) { return conv2d(x, weight, bias, stride, padding); }

void Conv2d::params(const std::string& prefix, std::vector<NamedTensor>& out) const {
    out.push_back({prefix + "weight", weight});
    if (bias.defined()) out.push_back({prefix + "bias", bias});
}

// ---- BatchNorm2d ----

BatchNorm2d::BatchNorm2d(std::int64_t channels, DType dtype) {
    if (channels < 1) throw Error("BatchNorm2d: bad channel count");
    gamma = Tensor::full({channels}, 1.0, dtype);
    beta = Tensor::zeros({channels}, dtype);
    gamma.set_requires_grad(true);
    beta.set_requires_grad(true);
    running_mean = Tensor::zeros({channels}, dtype);
    running_var = Tensor::full({channels}, 1.0, dtype);
}

Tensor BatchNorm2d::forward(const Tensor& x, bool training) {
    return batchnorm2d(x, gamma, beta, running_mean, running_var, training, momentum, eps);
}

void BatchNorm2d::params(const std::string& prefix, std::vector<NamedTensor>& out) const {
    out.push_back({prefix + "gamma", gamma});
    out.push_back({prefix + "beta", beta});
}

void BatchNorm2d::buffers(const std::string& prefix, std::vector<NamedTensor>& out) const {
    out.push_back({prefix + "running_mean", running_mean});
    out.push_back({prefix + "running_var", running_var});
}

// ---- ReLU ----

Tensor ReLU::forward(const Tensor& x, bool) { return relu(x); }
void ReLU::params(const std::string&, std::vector<NamedTensor>&) const {}

// ---- Linear ----

Linear::Linear(std::int64_t in_features, std::int64_t out_features, Rng& rng, DType dtype) {
    if (in_features < 1 || out_features < 1) throw Error("Linear: bad feature count");
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_features));
    weight = Tensor::uniform({out_features, in_features}, rng, dtype, -bound, bound);
    bias = Tensor::uniform({out_features}, rng, dtype, -bound, bound);
    weight.set_requires_grad(true);
    bias.set_requires_grad(true);
}

Tensor Linear::forward(const Tensor& x, bool) { return linear(x, weight, bias); }

void Linear::params(const std::string& prefix, std::vector<NamedTensor>& out) const {
    out.push_back({prefix + "weight", weight});
    out.push_back({prefix + "bias", bias});
}

// ---- GlobalAvgPool ----

Tensor GlobalAvgPool::forward(const Tensor& x, bool) { return global_avg_pool(x); }
void GlobalAvgPool::params(const std::string&, std::vector<NamedTensor>&) const {}

// ---- Sequential ----

Sequential& Sequential::add(std::shared_ptr<Module> m) {
    if (!m) throw Error("Sequential: null child");
    children_.push_back(std::move(m));
    return *this;
}

Tensor Sequential::forward(const Tensor& x, bool training) {
    Tensor h = x;
    for (auto& c : children_) h = c->forward(h, training);
    return h;
}

void Sequential::params(const std::string& prefix, std::vector<NamedTensor>& out) const {
    for (std::size_t i = 0; i < children_.size(); ++i)
        children_[i]->params(prefix + std::to_string(i) + ".", out);
}

void Sequential::buffers(const std::string& prefix, std::vector<NamedTensor>& out) const {
    for (std::size_t i = 0; i < children_.size(); ++i)
        children_[i]->buffers(prefix + std::to_string(i) + ".", out);
}

// ---- BasicBlock ----

BasicBlock::BasicBlock(std::int64_t in_ch, std::int64_t out_ch, std::int64_t stride, Rng& rng,
                       DType dtype)
    : conv1(in_ch, out_ch, 3, stride, 1, false, rng, dtype),
      bn1(out_ch, dtype),
      conv2(out_ch, out_ch, 3, 1, 1, false, rng, dtype),
      bn2(out_ch, dtype) {
    if (stride != 1 || in_ch != out_ch) {
        down_conv = std::make_shared<Conv2d>(in_ch, out_ch, 1, stride, 0, false, rng, dtype);
        down_bn = std::make_shared<BatchNorm2d>(out_ch, dtype);
    }
}

Tensor BasicBlock::forward(const Tensor& x, bool training) {
    Tensor h = relu(bn1.forward(conv1.forward(x, training), training));
    h = bn2.forward(conv2.forward(h, training), training);
    Tensor skip = down_conv ? down_bn->forward(down_conv->forward(x, training), training) : x;
    return relu(add(h, skip));
}

void BasicBlock::params(const std::string& prefix, std::vector<NamedTensor>& out) const {
    conv1.params(prefix + "conv1.", out);
    bn1.params(prefix + "bn1.", out);
    conv2.params(prefix + "conv2.", out);
    bn2.params(prefix + "bn2.", out);
    if (down_conv) {
        down_conv->params(prefix + "down_conv.", out);
        down_bn->params(prefix + "down_bn.", out);
    }
}

void BasicBlock::buffers(const std::string& prefix, std::vector<NamedTensor>& out) const {
    bn1.buffers(prefix + "bn1.", out);
    bn2.buffers(prefix + "bn2.", out);
    if (down_bn) down_bn->buffers(prefix + "down_bn.", out);
}

// ---- initialisation helpers ----

void zero_fill(Tensor& t) {
    if (!t.defined()) throw Error("zero_fill: undefined tensor");
    std::memset(t.impl()->storage->data(), 0, t.impl()->storage->size());
}

void identity_init_1x1(Conv2d& conv) {
    if (conv.kernel != 1 || conv.in_ch != conv.out_ch)
        throw Error("identity_init_1x1: needs a square 1x1 conv");
    zero_fill(conv.weight);
    for (std::int64_t c = 0; c < conv.in_ch; ++c) conv.weight.set_at({c, c, 0, 0}, 1.0);
    if (conv.bias.defined()) zero_fill(conv.bias);
}

void copy_state(const Module& src, Module& dst) {
    const auto a = src.named_state();
    auto b = dst.named_state();
    if (a.size() != b.size()) throw Error("copy_state: module structures differ");
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].name != b[i].name || a[i].tensor.shape() != b[i].tensor.shape() ||
            a[i].tensor.dtype() != b[i].tensor.dtype())
            throw Error("copy_state: mismatch at entry '" + a[i].name + "'");
        std::memcpy(b[i].tensor.impl()->storage->data(), a[i].tensor.impl()->storage->data(),
                    a[i].tensor.impl()->storage->size());
    }
}

// ---- ParamRegistry ----

void ParamRegistry::add(std::string name, Tensor t, Group g) {
    if (name.empty()) throw Error("ParamRegistry: empty name");
    if (!t.defined()) throw Error("ParamRegistry: undefined tensor for '" + name + "'");
    for (const auto& e : entries_)
        if (e.name == name) throw Error("ParamRegistry: duplicate name '" + name + "'");
    entries_.push_back({std::move(name), std::move(t), g});
}

void ParamRegistry::add_module(const std::string& prefix, const Module& m, Group g) {
    std::vector<NamedTensor> tmp;
    m.params(prefix, tmp);
    for (auto& nt : tmp) add(std::move(nt.name), std::move(nt.tensor), g);
}

std::vector<RegEntry> ParamRegistry::group(Group g) const {
    std::vector<RegEntry> out;
    for (const auto& e : entries_)
        if (e.group == g) out.push_back(e);
    return out;
}

std::int64_t ParamRegistry::count(Group g) const {
    std::int64_t n = 0;
    for (const auto& e : entries_)
        if (e.group == g) n += e.tensor.numel();
    return n;
}

void ParamRegistry::set_requires_grad(Group g, bool v) {
    for (auto& e : entries_)
        if (e.group == g) e.tensor.set_requires_grad(v);
}

void ParamRegistry::zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
}

const RegEntry& ParamRegistry::find(const std::string& name) const {
    for (const auto& e : entries_)
        if (e.name == name) return e;
    throw Error("ParamRegistry: no entry named '" + name + "'");
}

}  // namespace dfpt::nn
