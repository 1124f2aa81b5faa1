#pragma once

#include <memory>
#include <string>
#include <vector>

#include "dfpt/tensor.hpp"

namespace dfpt::nn {

// Optimizer grouping. theta: base network (backbone + head), phi: prompt-path
// additions trained on top of a frozen base, psi: the distilled network.
enum class Group : std::uint8_t { theta = 0, phi = 1, psi = 2 };
const char* group_name(Group g);

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

class Module {
public:
    virtual ~Module() = default;
    virtual Tensor forward(const Tensor& x, bool training) = 0;
    // Trainable tensors in declaration order, names prefixed.
    virtual void params(const std::string& prefix, std::vector<NamedTensor>& out) const = 0;
    // Non-trainable state (running statistics); empty for most modules.
    virtual void buffers(const std::string& prefix, std::vector<NamedTensor>& out) const;

    std::vector<NamedTensor> named_params() const;
    std::vector<NamedTensor> named_state() const;  // params then buffers
    std::int64_t param_count() const;
};

class Conv2d : public Module {
public:
    Conv2d(std::int64_t in_ch, std::int64_t out_ch, std::int64_t kernel, std::int64_t stride,
           std::int64_t padding, bool with_bias, Rng& rng, DType dtype = DType::f32);
    Tensor forward(const Tensor& x, bool training) override;
    void params(const std::string& prefix, std::vector<NamedTensor>& out) const override;

    Tensor weight;  // [out_ch, in_ch, k, k]
    Tensor bias;    // undefined when constructed without bias
    std::int64_t in_ch, out_ch, kernel, stride, padding;
};

class BatchNorm2d : public Module {
public:
    explicit BatchNorm2d(std::int64_t channels, DType dtype = DType::f32);
    Tensor forward(const Tensor& x, bool training) override;
    void params(const std::string& prefix, std::vector<NamedTensor>& out) const override;
    void buffers(const std::string& prefix, std::vector<NamedTensor>& out) const override;

    Tensor gamma, beta;
    Tensor running_mean, running_var;
    double momentum = 0.1;
    double eps = 1e-5;
};

class ReLU : public Module {
public:
    Tensor forward(const Tensor& x, bool training) override;
    void params(const std::string& prefix, std::vector<NamedTensor>& out) const override;
};

class Linear : public Module {
public:
    Linear(std::int64_t in_features, std::int64_t out_features, Rng& rng,
           DType dtype = DType::f32);
    Tensor forward(const Tensor& x, bool training) override;
    void params(const std::string& prefix, std::vector<NamedTensor>& out) const override;

    Tensor weight;  // [out_features, in_features]
    Tensor bias;    // [out_features]
};

class GlobalAvgPool : public Module {
public:
    Tensor forward(const Tensor& x, bool training) override;
    void params(const std::string& prefix, std::vector<NamedTensor>& out) const override;
};

class Sequential : public Module {
public:
    Sequential() = default;
    Sequential& add(std::shared_ptr<Module> m);
    Tensor forward(const Tensor& x, bool training) override;
    void params(const std::string& prefix, std::vector<NamedTensor>& out) const override;
    void buffers(const std::string& prefix, std::vector<NamedTensor>& out) const override;

    std::size_t size() const { return children_.size(); }
    Module& child(std::size_t i) { return *children_.at(i); }
    const std::vector<std::shared_ptr<Module>>& children() const { return children_; }

private:
    std::vector<std::shared_ptr<Module>> children_;
};

// Residual unit: conv3x3-bn-relu-conv3x3-bn plus a skip, relu after the sum.
// When the shape changes (stride > 1 or channel growth) the skip goes through
// a strided 1x1 conv + bn.
class BasicBlock : public Module {
public:
    BasicBlock(std::int64_t in_ch, std::int64_t out_ch, std::int64_t stride, Rng& rng,
               DType dtype = DType::f32);
    Tensor forward(const Tensor& x, bool training) override;
    void params(const std::string& prefix, std::vector<NamedTensor>& out) const override;
    void buffers(const std::string& prefix, std::vector<NamedTensor>& out) const override;

    Conv2d conv1;
    BatchNorm2d bn1;
    Conv2d conv2;
    BatchNorm2d bn2;
    std::shared_ptr<Conv2d> down_conv;  // null when the skip is the identity
    std::shared_ptr<BatchNorm2d> down_bn;
};

// ---- initialisation helpers ----

void zero_fill(Tensor& t);
// weight[o][i] = (o == i), zero bias: the layer starts as an exact identity.
void identity_init_1x1(Conv2d& conv);
// Deep-copies every parameter and buffer of src into dst (names, shapes and
// dtypes must match pairwise).
void copy_state(const Module& src, Module& dst);

// ---- parameter registry ----

struct RegEntry {
    std::string name;
    Tensor tensor;
    Group group;
};

// Ordered name -> (tensor, group) map shared by the optimizer, the checkpoint
// writer and the cost accounting. Names are unique.
class ParamRegistry {
public:
    void add(std::string name, Tensor t, Group g);
    void add_module(const std::string& prefix, const Module& m, Group g);
    const std::vector<RegEntry>& entries() const { return entries_; }
    std::vector<RegEntry> group(Group g) const;
    std::int64_t count(Group g) const;  // total scalar elements in the group
    void set_requires_grad(Group g, bool v);
    void zero_grad();
    const RegEntry& find(const std::string& name) const;

private:
    std::vector<RegEntry> entries_;
};

}  // namespace dfpt::nn
