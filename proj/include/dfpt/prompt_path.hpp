#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "dfpt/models.hpp"
#include "dfpt/nn.hpp"
#include "dfpt/tensor.hpp"

namespace dfpt {

// Configuration of the prompt-based forward path grafted onto a frozen
// staged model.
struct PromptConfig {
    // Channel down-sampling rate per stage; a single entry broadcasts to all
    // stages. The bottleneck width at a stage of C channels is ceil(C / r1).
    std::vector<std::int64_t> r1{4};
    // Fraction of bottleneck channels covered by each partial convolution;
    // the remaining channels pass through untouched. r2 = 1 convolves all.
    double r2 = 0.5;
    // Kernel sizes of the sequential scale units (odd, run in given order).
    std::vector<std::int64_t> kernels{3, 5, 7};
    // 1-based stage indices that receive prompt/fusion blocks; empty = all.
    std::vector<std::int64_t> insert_stages;
    // Prompt blocks per selected stage; their outputs are summed.
    std::int64_t blocks_per_stage = 1;
    // Chained 1x1 convs inside each fusion block.
    std::int64_t fusion_convs = 1;
    // When false the fused feature is plain (x + prompt) with no conv.
    bool use_fusion = true;
    // Start the auxiliary head as a copy of the frozen head (exact identity
    // start for the whole path); false leaves it randomly initialised.
    bool copy_head = true;
};

// Whether gradients may flow through the frozen stages that sit between a
// prompt/fusion pair and the training loss, or are cut at every frozen stage
// input (only the last pair and the auxiliary head then receive gradient).
enum class GradFlow { through_frozen, detached_base };

// Bottleneck adapter producing an additive feature prompt:
//   1x1 down (C -> D), then per kernel k: partial conv (k x k over the first
//   m = floor(r2 * D) channels, rest passed through) + 1x1 pointwise (D -> D),
//   then 1x1 up (D -> C). The up conv starts at zero, so a fresh block emits
//   the zero tensor for any input.
class PromptBlock final : public nn::Module {
public:
    PromptBlock(std::int64_t channels, std::int64_t r1, double r2,
                std::vector<std::int64_t> kernels, Rng& rng, DType dtype = DType::f32);

    Tensor forward(const Tensor& x, bool training) override;
    void params(const std::string& prefix, std::vector<nn::NamedTensor>& out) const override;

    // Closed-form parameter count of a block with this geometry.
    static std::int64_t expected_params(std::int64_t channels, std::int64_t r1, double r2,
                                        const std::vector<std::int64_t>& kernels);

    std::int64_t channels() const { return channels_; }
    std::int64_t bottleneck() const { return bottleneck_; }
    std::int64_t partial_channels() const { return partial_; }

    struct ScaleUnit {
        nn::Conv2d partial;
        nn::Conv2d pointwise;
    };

    nn::Conv2d down;
    std::vector<ScaleUnit> scales;
    nn::Conv2d up;

private:
    std::int64_t channels_, bottleneck_, partial_;
};

// Learned mixer applied to (feature + prompt): one or more identity-initialised
// 1x1 convs, so a fresh block is an exact identity map.
class FusionBlock final : public nn::Module {
public:
    FusionBlock(std::int64_t channels, std::int64_t convs, Rng& rng, DType dtype = DType::f32);

    Tensor forward(const Tensor& x, bool training) override;
    void params(const std::string& prefix, std::vector<nn::NamedTensor>& out) const override;

    Tensor fuse(const Tensor& feature, const Tensor& prompt, bool training);

    std::int64_t channels() const { return channels_; }

    std::vector<nn::Conv2d> convs;

private:
    std::int64_t channels_;
};

struct DualOutput {
    Tensor logits_t;             // frozen path; recorded off-tape, constant
    Tensor logits_p;             // prompt path; differentiable w.r.t. phi
    std::vector<Tensor> feats_t; // per-stage outputs x_i of the frozen path
    std::vector<Tensor> feats_p; // per-stage fused outputs of the prompt path
};

// A frozen staged model plus a second, trainable forward path: after each
// selected stage the feature is augmented with a learned prompt and remixed,
// and an auxiliary head reads out the final fused feature. The frozen path is
// evaluated untouched so its predictions never move during training.
class DualForwardTeacher {
public:
    DualForwardTeacher(models::StagedModel teacher, PromptConfig cfg, std::uint64_t seed);

    // Runs both paths on one batch. Batch-norm uses running statistics on
    // both paths; the frozen path records no gradient state.
    DualOutput dual_forward(const Tensor& x, GradFlow flow = GradFlow::through_frozen);

    // Registers the frozen model under "teacher." (group theta) and the
    // prompt-path additions under "prompt<i>."/"fusion<i>."/"head_phi."
    // (group phi).
    void register_params(nn::ParamRegistry& reg) const;
    std::vector<nn::NamedTensor> phi_params() const;

    // Frozen-path parameters do not require grad by default; the variant that
    // also fine-tunes the base flips this on.
    void set_theta_trainable(bool v);

    const models::StagedModel& teacher() const { return teacher_; }
    models::StagedModel& teacher() { return teacher_; }
    const PromptConfig& config() const { return cfg_; }
    std::uint64_t seed() const { return seed_; }
    bool stage_selected(std::int64_t stage_index_1based) const;

    // Per-stage prompt blocks (inner vector empty when the stage is skipped)
    // and fusion blocks (null when skipped or fusion is disabled).
    std::vector<std::vector<std::shared_ptr<PromptBlock>>> prompts;
    std::vector<std::shared_ptr<FusionBlock>> fusions;
    std::shared_ptr<nn::Sequential> head_phi;

private:
    void register_phi(nn::ParamRegistry& reg) const;

    models::StagedModel teacher_;
    PromptConfig cfg_;
    std::uint64_t seed_ = 0;
};

// Persists only the prompt-path additions (the frozen model keeps its own
// checkpoint). Stored with kind = "prompt-path" plus the teacher arch name so
// a load into a mismatched teacher fails loudly.
void save_prompt_path(const DualForwardTeacher& t, const std::string& path,
                      const std::vector<std::pair<std::string, double>>& metrics = {},
                      const std::vector<std::pair<std::string, std::string>>& extra = {});
void load_prompt_path_into(DualForwardTeacher& t, const std::string& path);

}  // namespace dfpt
