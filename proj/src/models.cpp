#include "dfpt/models.hpp"

#include <algorithm>

namespace dfpt::models {

namespace {

ArchSpec make_spec(std::string name, std::string family, std::vector<std::int64_t> widths,
                   std::vector<std::int64_t> blocks, std::vector<std::int64_t> strides,
                   std::int64_t classes, std::int64_t in_channels) {
    ArchSpec s;
    s.name = std::move(name);
    s.family = std::move(family);
    s.widths = std::move(widths);
    s.blocks = std::move(blocks);
    s.strides = std::move(strides);
    s.classes = classes;
    s.in_channels = in_channels;
    return s;
}

}  // namespace

std::vector<std::string> known_archs() {
    return {"tiny-resnet-T", "tiny-resnet-S", "tiny-vgg-T",
            "tiny-vgg-S",    "resnet32x4",    "resnet8x4"};
}

ArchSpec arch_spec(const std::string& name, std::int64_t classes, std::int64_t in_channels) {
    if (classes < 2) throw Error("arch_spec: need at least two classes");
    if (name == "tiny-resnet-T")
        return make_spec(name, "resnet", {32, 64, 128}, {0, 1, 1}, {1, 2, 2}, classes, in_channels);
    if (name == "tiny-resnet-S")
        return make_spec(name, "resnet", {16, 32, 64}, {0, 1, 1}, {1, 2, 2}, classes, in_channels);
    if (name == "tiny-vgg-T")
        return make_spec(name, "vgg", {32, 64, 128}, {0, 2, 2}, {1, 2, 2}, classes, in_channels);
    if (name == "tiny-vgg-S")
        return make_spec(name, "vgg", {16, 32, 64}, {0, 1, 1}, {1, 2, 2}, classes, in_channels);
    if (name == "resnet32x4")
        return make_spec(name, "resnet", {64, 64, 128, 256}, {0, 5, 5, 5}, {1, 1, 2, 2}, classes,
                         in_channels);
    if (name == "resnet8x4")
        return make_spec(name, "resnet", {64, 64, 128, 256}, {0, 1, 1, 1}, {1, 1, 2, 2}, classes,
                         in_channels);
    std::string known;
    for (const auto& k : known_archs()) known += (known.empty() ? "" : ", ") + k;
    throw Error("unknown architecture '" + name + "'; known: " + known);
}

Tensor StagedModel::forward(const Tensor& x, bool training) {
    return forward_staged(*this, x, training).logits;
}

std::vector<Tensor> StagedModel::run_stages(const Tensor& x, bool training) {
    std::vector<Tensor> feats;
    feats.reserve(stages.size());
    Tensor h = x;
    for (auto& s : stages) {
        h = s->forward(h, training);
        feats.push_back(h);
    }
    return feats;
}

Tensor StagedModel::head(const Tensor& feat, bool training) {
    return head_seq->forward(feat, training);
}

void StagedModel::params(const std::string& prefix, std::vector<nn::NamedTensor>& out) const {
    for (std::size_t i = 0; i < stages.size(); ++i)
        stages[i]->params(prefix + "stage" + std::to_string(i + 1) + ".", out);
    head_seq->params(prefix + "head.", out);
}

void StagedModel::buffers(const std::string& prefix, std::vector<nn::NamedTensor>& out) const {
    for (std::size_t i = 0; i < stages.size(); ++i)
        stages[i]->buffers(prefix + "stage" + std::to_string(i + 1) + ".", out);
    head_seq->buffers(prefix + "head.", out);
}

StagedForward forward_staged(StagedModel& m, const Tensor& x, bool training) {
    if (x.ndim() != 4 || x.dim(1) != m.spec.in_channels)
        throw Error("forward_staged: expected NCHW input with " +
                    std::to_string(m.spec.in_channels) + " channels, got " + shape_str(x.shape()));
    StagedForward out;
    out.feats = m.run_stages(x, training);
    out.logits = m.head(out.feats.back(), training);
    return out;
}

namespace {

std::shared_ptr<nn::Sequential> conv_bn_relu(std::int64_t in, std::int64_t out,
                                             std::int64_t stride, Rng& rng) {
    auto s = std::make_shared<nn::Sequential>();
    s->add(std::make_shared<nn::Conv2d>(in, out, 3, stride, 1, false, rng))
        .add(std::make_shared<nn::BatchNorm2d>(out))
        .add(std::make_shared<nn::ReLU>());
    return s;
}

}  // namespace

StagedModel build(const ArchSpec& spec, std::uint64_t seed) {
    const std::size_t N = spec.widths.size();
    if (N < 2) throw Error("build: a staged model needs at least two stages");
    if (spec.blocks.size() != N || spec.strides.size() != N)
        throw Error("build: widths/blocks/strides arity mismatch");
    if (spec.blocks[0] != 0) throw Error("build: stage 1 is the stem and has no blocks");
    if (spec.family != "resnet" && spec.family != "vgg")
        throw Error("build: unknown family '" + spec.family + "'");

    Rng rng(seed);
    StagedModel m;
    m.spec = spec;
    m.seed = seed;

    m.stages.push_back(conv_bn_relu(spec.in_channels, spec.widths[0], spec.strides[0], rng));
    for (std::size_t i = 1; i < N; ++i) {
        if (spec.blocks[i] < 1) throw Error("build: every non-stem stage needs blocks");
        auto stage = std::make_shared<nn::Sequential>();
        std::int64_t in = spec.widths[i - 1];
        for (std::int64_t b = 0; b < spec.blocks[i]; ++b) {
            const std::int64_t stride = (b == 0) ? spec.strides[i] : 1;
            if (spec.family == "resnet") {
                stage->add(std::make_shared<nn::BasicBlock>(in, spec.widths[i], stride, rng));
            } else {
                stage->add(std::make_shared<nn::Conv2d>(in, spec.widths[i], 3, stride, 1, false,
                                                        rng))
                    .add(std::make_shared<nn::BatchNorm2d>(spec.widths[i]))
                    .add(std::make_shared<nn::ReLU>());
            }
            in = spec.widths[i];
        }
        m.stages.push_back(stage);
    }

    m.head_seq = std::make_shared<nn::Sequential>();
    m.head_seq->add(std::make_shared<nn::GlobalAvgPool>())
        .add(std::make_shared<nn::Linear>(spec.widths.back(), spec.classes, rng));
    return m;
}

StagedModel build(const std::string& name, std::int64_t classes, std::uint64_t seed) {
    return build(arch_spec(name, classes), seed);
}

}  // namespace dfpt::models
