#include "dfpt/prompt_path.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

#include "dfpt/autograd.hpp"
#include "dfpt/checkpoint.hpp"

namespace dfpt {

namespace {

std::int64_t partial_width(double r2, std::int64_t bottleneck) {
    const auto m = static_cast<std::int64_t>(std::floor(r2 * static_cast<double>(bottleneck)));
    return m < bottleneck ? m : bottleneck;
}

std::int64_t checked_bottleneck(std::int64_t channels, std::int64_t r1, double r2,
                                const std::vector<std::int64_t>& kernels) {
    if (channels < 1) throw Error("prompt block: channels must be >= 1");
    if (r1 < 1) throw Error("prompt block: r1 must be >= 1");
    if (!(r2 > 0.0) || r2 > 1.0) throw Error("prompt block: r2 must be in (0, 1]");
    if (kernels.empty()) throw Error("prompt block: kernel list must not be empty");
    for (const auto k : kernels)
        if (k < 1 || k % 2 == 0) throw Error("prompt block: kernel sizes must be odd and positive");
    const std::int64_t d = (channels + r1 - 1) / r1;
    if (partial_width(r2, d) < 1) throw Error("prompt block: too few channels for partial convolution");
    return d;
}

std::vector<PromptBlock::ScaleUnit> make_scales(std::int64_t d, std::int64_t m,
                                                const std::vector<std::int64_t>& kernels, Rng& rng,
                                                DType dtype) {
    std::vector<PromptBlock::ScaleUnit> out;
    out.reserve(kernels.size());
    for (const auto k : kernels)
        out.push_back({nn::Conv2d(m, m, k, 1, (k - 1) / 2, true, rng, dtype),
                       nn::Conv2d(d, d, 1, 1, 0, true, rng, dtype)});
    return out;
}

}  // namespace

PromptBlock::PromptBlock(std::int64_t channels, std::int64_t r1, double r2,
                         std::vector<std::int64_t> kernels, Rng& rng, DType dtype)
    : down(channels, checked_bottleneck(channels, r1, r2, kernels), 1, 1, 0, true, rng, dtype),
      scales(make_scales(down.out_ch, partial_width(r2, down.out_ch), kernels, rng, dtype)),
      up(down.out_ch, channels, 1, 1, 0, true, rng, dtype),
      channels_(channels),
      bottleneck_(down.out_ch),
      partial_(scales.front().partial.in_ch) {
    // A fresh block must not perturb the path it is grafted onto.
    nn::zero_fill(up.weight);
    nn::zero_fill(up.bias);
}

Tensor PromptBlock::forward(const Tensor& x, bool training) {
    if (x.ndim() != 4 || x.shape()[1] != channels_)
        throw Error("prompt block: expected NCHW input with " + std::to_string(channels_) +
                    " channels");
    Tensor h = down.forward(x, training);
    for (auto& unit : scales) {
        if (partial_ == bottleneck_) {
            h = unit.partial.forward(h, training);
        } else {
            Tensor conv = unit.partial.forward(channel_slice(h, 0, partial_), training);
            h = channel_concat(conv, channel_slice(h, partial_, bottleneck_));
        }
        h = unit.pointwise.forward(h, training);
    }
    return up.forward(h, training);
}

void PromptBlock::params(const std::string& prefix, std::vector<nn::NamedTensor>& out) const {
    down.params(prefix + "down.", out);
    for (std::size_t i = 0; i < scales.size(); ++i) {
        const std::string unit = prefix + "scale" + std::to_string(i + 1) + ".";
        scales[i].partial.params(unit + "partial.", out);
        scales[i].pointwise.params(unit + "pointwise.", out);
    }
    up.params(prefix + "up.", out);
}

std::int64_t PromptBlock::expected_params(std::int64_t channels, std::int64_t r1, double r2,
                                          const std::vector<std::int64_t>& kernels) {
    const std::int64_t d = checked_bottleneck(channels, r1, r2, kernels);
    const std::int64_t m = partial_width(r2, d);
    std::int64_t total = d * channels + d;  // down conv + bias
    for (const auto k : kernels) total += m * m * k * k + m + d * d + d;
    return total + channels * d + channels;  // up conv + bias
}

FusionBlock::FusionBlock(std::int64_t channels, std::int64_t conv_count, Rng& rng, DType dtype)
    : channels_(channels) {
    if (channels < 1) throw Error("fusion block: channels must be >= 1");
    if (conv_count < 1) throw Error("fusion block: needs at least one conv");
    convs.reserve(static_cast<std::size_t>(conv_count));
    for (std::int64_t i = 0; i < conv_count; ++i) {
        convs.emplace_back(channels, channels, 1, 1, 0, true, rng, dtype);
        nn::identity_init_1x1(convs.back());
    }
}

Tensor FusionBlock::forward(const Tensor& x, bool training) {
    if (x.ndim() != 4 || x.shape()[1] != channels_)
        throw Error("fusion block: expected NCHW input with " + std::to_string(channels_) +
                    " channels");
    Tensor h = x;
    for (auto& c : convs) h = c.forward(h, training);
    return h;
}

void FusionBlock::params(const std::string& prefix, std::vector<nn::NamedTensor>& out) const {
    for (std::size_t i = 0; i < convs.size(); ++i)
        convs[i].params(prefix + std::to_string(i) + ".", out);
}

Tensor FusionBlock::fuse(const Tensor& feature, const Tensor& prompt, bool training) {
    if (feature.shape() != prompt.shape())
        throw Error("fusion block: feature and prompt shapes differ");
    return forward(add(feature, prompt), training);
}

DualForwardTeacher::DualForwardTeacher(models::StagedModel teacher, PromptConfig cfg,
                                       std::uint64_t seed)
    : teacher_(std::move(teacher)), cfg_(std::move(cfg)), seed_(seed) {
    const std::int64_t n = teacher_.spec.num_stages();
    if (n < 1 || !teacher_.head_seq) throw Error("dual-forward teacher: model has no stages");

    std::vector<std::int64_t> r1 = cfg_.r1;
    if (r1.size() == 1) r1.assign(static_cast<std::size_t>(n), r1.front());
    if (static_cast<std::int64_t>(r1.size()) != n)
        throw Error("prompt config: r1 needs 1 or " + std::to_string(n) + " entries");
    std::vector<char> selected(static_cast<std::size_t>(n), 1);
    if (!cfg_.insert_stages.empty()) {
        selected.assign(static_cast<std::size_t>(n), 0);
        for (const auto s : cfg_.insert_stages) {
            if (s < 1 || s > n)
                throw Error("prompt config: insert stage " + std::to_string(s) +
                            " out of range 1.." + std::to_string(n));
            if (selected[static_cast<std::size_t>(s - 1)])
                throw Error("prompt config: duplicate insert stage " + std::to_string(s));
            selected[static_cast<std::size_t>(s - 1)] = 1;
        }
    }
    if (cfg_.blocks_per_stage < 1) throw Error("prompt config: blocks_per_stage must be >= 1");
    if (cfg_.fusion_convs < 1) throw Error("prompt config: fusion_convs must be >= 1");

    Rng rng(seed);
    prompts.resize(static_cast<std::size_t>(n));
    fusions.resize(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        if (!selected[static_cast<std::size_t>(i)]) continue;
        const std::int64_t c = teacher_.spec.widths[static_cast<std::size_t>(i)];
        for (std::int64_t b = 0; b < cfg_.blocks_per_stage; ++b)
            prompts[static_cast<std::size_t>(i)].push_back(
                std::make_shared<PromptBlock>(c, r1[static_cast<std::size_t>(i)], cfg_.r2,
                                              cfg_.kernels, rng));
        if (cfg_.use_fusion)
            fusions[static_cast<std::size_t>(i)] =
                std::make_shared<FusionBlock>(c, cfg_.fusion_convs, rng);
    }

    head_phi = std::make_shared<nn::Sequential>();
    head_phi->add(std::make_shared<nn::GlobalAvgPool>());
    head_phi->add(
        std::make_shared<nn::Linear>(teacher_.spec.widths.back(), teacher_.spec.classes, rng));
    if (cfg_.copy_head) nn::copy_state(*teacher_.head_seq, *head_phi);

    set_theta_trainable(false);
}

DualOutput DualForwardTeacher::dual_forward(const Tensor& x, GradFlow flow) {
    DualOutput out;
    {
        NoGradGuard guard;
        out.feats_t = teacher_.run_stages(x, false);
        out.logits_t = teacher_.head(out.feats_t.back(), false);
    }
    Tensor h = x;
    for (std::size_t i = 0; i < teacher_.stages.size(); ++i) {
        const Tensor in = (flow == GradFlow::detached_base && i > 0) ? h.detach() : h;
        const Tensor xi = teacher_.stages[i]->forward(in, false);
        Tensor fused = xi;
        if (!prompts[i].empty()) {
            Tensor prompt = prompts[i].front()->forward(xi, false);
            for (std::size_t b = 1; b < prompts[i].size(); ++b)
                prompt = add(prompt, prompts[i][b]->forward(xi, false));
            fused = fusions[i] ? fusions[i]->fuse(xi, prompt, false) : add(xi, prompt);
        }
        out.feats_p.push_back(fused);
        h = fused;
    }
    out.logits_p = head_phi->forward(h, false);
    return out;
}

void DualForwardTeacher::register_phi(nn::ParamRegistry& reg) const {
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        const std::string stage = std::to_string(i + 1);
        for (std::size_t b = 0; b < prompts[i].size(); ++b)
            reg.add_module("prompt" + stage + "." + std::to_string(b) + ".", *prompts[i][b],
                           nn::Group::phi);
        if (fusions[i]) reg.add_module("fusion" + stage + ".", *fusions[i], nn::Group::phi);
    }
    reg.add_module("head_phi.", *head_phi, nn::Group::phi);
}

void DualForwardTeacher::register_params(nn::ParamRegistry& reg) const {
    reg.add_module("teacher.", teacher_, nn::Group::theta);
    register_phi(reg);
}

std::vector<nn::NamedTensor> DualForwardTeacher::phi_params() const {
    nn::ParamRegistry reg;
    register_phi(reg);
    std::vector<nn::NamedTensor> out;
    out.reserve(reg.entries().size());
    for (const auto& e : reg.entries()) out.push_back({e.name, e.tensor});
    return out;
}

void DualForwardTeacher::set_theta_trainable(bool v) {
    for (auto& p : teacher_.named_params()) p.tensor.set_requires_grad(v);
}

bool DualForwardTeacher::stage_selected(std::int64_t stage_index_1based) const {
    if (stage_index_1based < 1 || stage_index_1based > static_cast<std::int64_t>(prompts.size()))
        return false;
    return !prompts[static_cast<std::size_t>(stage_index_1based - 1)].empty();
}

void save_prompt_path(const DualForwardTeacher& t, const std::string& path,
                      const std::vector<std::pair<std::string, double>>& metrics,
                      const std::vector<std::pair<std::string, std::string>>& extra) {
    CheckpointData data;
    data.arch = t.teacher().spec.name;
    data.seed = t.seed();
    data.extra.emplace_back("kind", "prompt-path");
    for (const auto& kv : extra) data.extra.push_back(kv);
    data.metrics = metrics;
    data.tensors = t.phi_params();
    save_checkpoint(data, path);
}

void load_prompt_path_into(DualForwardTeacher& t, const std::string& path) {
    const CheckpointData data = load_checkpoint(path);
    const std::string* kind = data.find_extra("kind");
    if (!kind || *kind != "prompt-path")
        throw Error("checkpoint: '" + path + "' is not a prompt-path file");
    if (data.arch != t.teacher().spec.name)
        throw Error("checkpoint: arch mismatch: file has '" + data.arch + "', teacher is '" +
                    t.teacher().spec.name + "'");
    copy_stored_tensors(data, t.phi_params(), path);
}

}  // namespace dfpt
