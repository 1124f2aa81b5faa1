#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "dfpt/nn.hpp"
#include "dfpt/tensor.hpp"

namespace dfpt::models {

// Resolvable description of a staged CNN. The stem plays stage 1, so widths,
// blocks and strides all have one entry per declared stage.
struct ArchSpec {
    std::string name;
    std::string family;                 // "resnet" or "vgg"
    std::vector<std::int64_t> widths;   // output channels per stage C_1..C_N
    std::vector<std::int64_t> blocks;   // units per stage; 0 for the stem
    std::vector<std::int64_t> strides;  // spatial stride applied by each stage
    std::int64_t classes = 10;
    std::int64_t in_channels = 3;

    std::int64_t num_stages() const { return static_cast<std::int64_t>(widths.size()); }
};

// Known zoo entries by name; throws on unknown names.
ArchSpec arch_spec(const std::string& name, std::int64_t classes = 10,
                   std::int64_t in_channels = 3);
std::vector<std::string> known_archs();

// Backbone split into N stages feeding a pool+linear head. Stage outputs are
// what the prompt path taps between stages.
class StagedModel : public nn::Module {
public:
    StagedModel() = default;

    Tensor forward(const Tensor& x, bool training) override;
    void params(const std::string& prefix, std::vector<nn::NamedTensor>& out) const override;
    void buffers(const std::string& prefix, std::vector<nn::NamedTensor>& out) const override;

    // Outputs x_1..x_N of every stage, in order.
    std::vector<Tensor> run_stages(const Tensor& x, bool training);
    Tensor head(const Tensor& feat, bool training);

    ArchSpec spec;
    std::uint64_t seed = 0;
    nn::Group group = nn::Group::theta;
    std::vector<std::shared_ptr<nn::Sequential>> stages;
    std::shared_ptr<nn::Sequential> head_seq;  // global pool + linear
};

struct StagedForward {
    std::vector<Tensor> feats;  // per-stage outputs
    Tensor logits;
};

// Runs the stages then the head; forward() is defined as the logits of this.
StagedForward forward_staged(StagedModel& m, const Tensor& x, bool training);

StagedModel build(const ArchSpec& spec, std::uint64_t seed);
StagedModel build(const std::string& name, std::int64_t classes, std::uint64_t seed);

}  // namespace dfpt::models
