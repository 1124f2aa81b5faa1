#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dfpt/kd_losses.hpp"
#include "dfpt/models.hpp"
#include "dfpt/nn.hpp"
#include "dfpt/prompt_path.hpp"

// Cost accounting (parameters and multiply-accumulates), distribution
// diagnostics and teacher/student gap tables.
namespace dfpt::analysis {

// One accounted layer. The FLOPs convention throughout: one multiply-
// accumulate counts once; BatchNorm, activations, bias adds and pooling are
// excluded as negligible.
struct CostRow {
    std::string name;
    nn::Group group = nn::Group::theta;
    std::int64_t params = 0;
    std::int64_t macs = 0;
};

struct CostReport {
    std::vector<CostRow> rows;

    std::int64_t params(nn::Group g) const;
    std::int64_t macs(nn::Group g) const;
    std::int64_t params_total() const;
    std::int64_t macs_total() const;
    std::string to_text() const;  // aligned table with group totals
    std::string to_csv() const;   // name,group,params,macs
};

// Walks any supported module tree at the given input dims (batch-free).
CostReport count_costs(const nn::Module& m, std::int64_t in_channels, std::int64_t height,
                       std::int64_t width, nn::Group group = nn::Group::theta);
// Stage-by-stage accounting of a staged backbone plus its head.
CostReport count_costs(const models::StagedModel& m, std::int64_t height, std::int64_t width);
// Dual wrapper: backbone rows under theta, prompt/fusion/auxiliary-head rows
// under phi, interleaved in forward order.
CostReport count_costs(const DualForwardTeacher& t, std::int64_t height, std::int64_t width);

// Closed form for one prompt block at a fixed spatial size; matches the
// walker exactly.
std::int64_t prompt_block_macs(std::int64_t channels, std::int64_t r1, double r2,
                               const std::vector<std::int64_t>& kernels, std::int64_t height,
                               std::int64_t width);

// Prompt-path totals over a staged architecture, split by component so the
// blocks-only and blocks-plus-fusion readings can both be reported.
struct PromptCost {
    std::int64_t prompt_params = 0;
    std::int64_t prompt_macs = 0;
    std::int64_t fusion_params = 0;
    std::int64_t fusion_macs = 0;
    std::int64_t head_params = 0;
    std::int64_t head_macs = 0;

    std::int64_t params_total() const { return prompt_params + fusion_params + head_params; }
    std::int64_t macs_total() const { return prompt_macs + fusion_macs + head_macs; }
};

PromptCost prompt_path_cost(const models::ArchSpec& spec, const PromptConfig& cfg,
                            std::int64_t height, std::int64_t width);

// KL(a || b) without temperature compensation; lower means more similar.
double kl_similarity(const kd::SoftPrediction& a, const kd::SoftPrediction& b);
// 1 - p[t]: the probability mass off the target class.
double nontarget_mass(const kd::SoftPrediction& p, std::int64_t t);

struct GapRow {
    std::string method;
    double teacher_top1 = 0;
    double student_top1 = 0;
    double gap = 0;  // teacher - student; negative when the student wins
};

struct GapReport {
    std::vector<GapRow> rows;
    double avg_teacher = 0;
    double avg_student = 0;
    double avg_gap = 0;

    std::string to_text() const;
    std::string to_csv() const;
};

struct GapInput {
    std::string method;
    double teacher_top1 = 0;
    double student_top1 = 0;
};

GapReport gap_report(const std::vector<GapInput>& rows);

}  // namespace dfpt::analysis
