#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "dfpt/data.hpp"
#include "dfpt/models.hpp"
#include "dfpt/nn.hpp"
#include "dfpt/prompt_path.hpp"
#include "dfpt/tensor.hpp"

// Training loops: teacher pre-training, prompt-path optimization with
// bidirectional supervision, student distillation, and the plain-KD and
// CE-only baselines. One SGD step owns all mutable state; everything is
// seed-deterministic.
namespace dfpt::train {

enum class Method : std::uint8_t { ce_only = 0, vanilla_kd, dfpt_kd, dfpt_kd_dagger };

// Accepts canonical names (ce-only, vanilla-kd, dfpt-kd, dfpt-kd-dagger) and
// the CLI short forms (ce, kd, dfpt, dfpt-t).
Method parse_method(const std::string& name);
std::string method_name(Method m);

struct TrainConfig {
    Method method = Method::dfpt_kd;
    double lambda = 0.5;  // prompt-path CE weight; KL terms get 1 - lambda
    double alpha = 0.5;   // student CE weight
    double beta = 0.5;    // student KL weight
    double tau = 4.0;
    std::int64_t epochs = 240;
    std::int64_t batch = 64;
    double lr = 0.05;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::vector<std::int64_t> milestones = {150, 180, 210};
    double lr_decay = 0.1;
    double teacher_lr_scale = 0.01;  // scaled-down backbone rate, dagger only
    std::uint64_t seed = 0;
    bool tau_compensate = true;  // multiply KL losses by tau^2
    GradFlow grad_flow = GradFlow::through_frozen;
    bool augment = true;  // train-split shift + horizontal flip
};

// Throws on out-of-range fields.
void validate(const TrainConfig& c);

// base lr scaled by lr_decay once per milestone already reached.
double lr_at(const TrainConfig& c, std::int64_t epoch);

// Classic-momentum SGD with weight decay folded into the gradient:
//   v <- momentum * v + g + weight_decay * p;  p <- p - lr * v.
struct SGDState {
    double momentum = 0.9;
    double weight_decay = 0.0;
    double lr = 0.0;
    std::int64_t step_count = 0;
    std::vector<Tensor> velocity;  // created on first step, mirrors params
};

void sgd_step(SGDState& state, const std::vector<Tensor>& params,
              const std::vector<Tensor>& grads);

// Per-batch measurements. Loss components are batch means; fields that a
// method does not produce stay NaN.
struct StepStats {
    static constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    std::int64_t count = 0;
    std::int64_t correct_s = 0;
    std::int64_t correct_p = -1;  // -1 when no prompt path exists
    double student_loss = nan;    // alpha*ce + beta*(kd_t + kd_p)
    double ce = nan;
    double kd_t = nan;  // KL(student || teacher) at tau, compensated per config
    double kd_p = nan;  // KL(student || prompt path)
    double prompt_loss = nan;  // lambda*ce + (1-lambda)*(kl_t + kl_s)
    double prompt_ce = nan;
    double prompt_kl_t = nan;       // KL(prompt || teacher)
    double prompt_kl_s = nan;       // KL(prompt || student)
    double kl_s_t = nan;            // similarity metric: KL at tau=1, uncompensated
    double kl_s_p = nan;
    double one_minus_pt_t = nan;    // mean non-target mass, original path
    double one_minus_pt_p = nan;    // mean non-target mass, prompt path
};

// One CSV row; column order matches kCsvHeader.
struct MetricsRow {
    static constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    std::int64_t epoch = 0;
    std::string split;
    double top1 = nan;
    double ce = nan;
    double kd_t = nan;
    double kd_p = nan;
    double prompt_top1 = nan;
    double kl_s_t = nan;
    double kl_s_p = nan;
    double one_minus_pt_t = nan;
    double one_minus_pt_p = nan;
    double lr = nan;
};

extern const char* const kCsvHeader;

// Append-only per-(epoch, split) records, persisted as CSV with 6
// significant digits.
struct MetricsLog {
    std::vector<MetricsRow> rows;

    void append(const MetricsRow& r);  // rejects duplicate (epoch, split)
    const MetricsRow* find(std::int64_t epoch, const std::string& split) const;
    std::string to_csv() const;
    void save_csv(const std::string& path) const;
    static MetricsLog from_csv_file(const std::string& path);
};

// Owns one student update loop: the student, the (optionally dual-forward)
// teacher, optimizer states and the parameter registry. Construction wires
// the method/teacher pairing strictly:
//   ce-only      -> no teacher of either kind
//   vanilla-kd   -> plain frozen teacher
//   dfpt methods -> dual-forward teacher (dagger unfreezes its backbone)
class Distiller {
public:
    Distiller(const TrainConfig& cfg, models::StagedModel student,
              std::shared_ptr<DualForwardTeacher> dual,
              std::shared_ptr<models::StagedModel> teacher);

    // One optimization step: forward both teacher paths and the student,
    // update the prompt path (skipped for ce/kd), then update the student
    // against the pre-update prompt logits. Throws on non-finite losses.
    StepStats distill_step(const data::Batch& batch);

    // Measurement only: eval-mode forwards, no tape, no updates.
    StepStats measure(const data::Batch& batch);

    void set_lr(double lr);
    double lr() const { return lr_; }
    std::int64_t steps() const { return step_count_; }

    models::StagedModel& student_model() { return student_; }
    DualForwardTeacher* dual_teacher() { return dual_.get(); }
    nn::ParamRegistry& registry() { return registry_; }
    const TrainConfig& config() const { return cfg_; }

private:
    StepStats forward_stats(const data::Batch& batch, bool training);
    std::vector<Tensor> group_tensors(nn::Group g) const;

    TrainConfig cfg_;
    models::StagedModel student_;
    std::shared_ptr<DualForwardTeacher> dual_;
    std::shared_ptr<models::StagedModel> teacher_;
    nn::ParamRegistry registry_;
    std::vector<Tensor> psi_params_, phi_params_, theta_params_;
    SGDState psi_state_, phi_state_, theta_state_;
    double lr_ = 0.0;
    std::int64_t step_count_ = 0;
};

// Aggregates weighted batch stats into one MetricsRow-shaped mean.
struct EpochAccum {
    void add(const StepStats& st);
    MetricsRow row(std::int64_t epoch, const std::string& split, double lr) const;

private:
    double sum_[9] = {0, 0, 0, 0, 0, 0, 0, 0, 0};
    std::int64_t n_[9] = {0, 0, 0, 0, 0, 0, 0, 0, 0};
    std::int64_t correct_s_ = 0, correct_p_ = 0, count_ = 0;
    bool any_prompt_ = false;
};

struct RunArtifacts {
    models::StagedModel student;
    std::shared_ptr<DualForwardTeacher> dual;  // carries the trained prompt path
    MetricsLog log;
};

// Full loop: per epoch, milestone lr, one pass of distill_step over shuffled
// train batches, then an eval pass; train and test rows appended per epoch.
// teacher must be null for ce-only and non-null otherwise; prompt describes
// the dual path for the dfpt methods.
RunArtifacts run(const TrainConfig& cfg, const models::ArchSpec& student_spec,
                 const models::StagedModel* teacher, const data::LabeledDataset& train_set,
                 const data::LabeledDataset& test_set, const PromptConfig& prompt = {});
RunArtifacts run(const TrainConfig& cfg, const std::string& student_arch,
                 const models::StagedModel* teacher, const data::LabeledDataset& train_set,
                 const data::LabeledDataset& test_set, const PromptConfig& prompt = {});

// Cross-entropy-only training of an architecture (method must be ce-only);
// returns the trained network, optionally exposing the metrics.
models::StagedModel pretrain_teacher(const models::ArchSpec& arch,
                                     const data::LabeledDataset& train_set,
                                     const data::LabeledDataset& test_set, const TrainConfig& cfg,
                                     MetricsLog* log = nullptr);
models::StagedModel pretrain_teacher(const std::string& arch, const data::LabeledDataset& train_set,
                                     const data::LabeledDataset& test_set, const TrainConfig& cfg,
                                     MetricsLog* log = nullptr);

}  // namespace dfpt::train
