#pragma once

#include <cstdint>
#include <vector>

#include "dfpt/tensor.hpp"

// Probability and loss mathematics for distillation: temperature softening,
// target/non-target decomposition, KL losses, cross-entropy. The kd namespace
// holds the exact 64-bit scalar layer (values only); the Tensor functions
// below it are the differentiable counterparts used in training.
namespace dfpt::kd {

// Softened class distribution together with what produced it.
struct SoftPrediction {
    std::vector<double> p;  // simplex vector, length C
    std::vector<double> z;  // source logits
    double tau = 1.0;
};

// Binary split of a distribution into target mass and everything else.
struct TargetSplit {
    double p_t = 0;
    double p_not_t = 0;
    std::int64_t t = 0;
};

// Distribution over the C-1 non-target classes, renormalized.
struct NonTargetDist {
    std::vector<double> q;
    std::int64_t t = 0;
};

struct Decomposition {
    double binary_term = 0;     // KL between the two binary target splits
    double nontarget_term = 0;  // KL between the two non-target distributions
    double weight = 0;          // 1 - p_t of the first distribution
};

// softmax(z / tau) with max-subtraction.
SoftPrediction soften(const std::vector<double>& z, double tau);
TargetSplit split_target(const SoftPrediction& p, std::int64_t t);
NonTargetDist nontarget_distribution(const SoftPrediction& p, std::int64_t t);
// Sum_i pT[i] * log(pT[i]/pS[i]), computed in log-space from the stored
// logits; multiplied by tau^2 when compensate is set.
double kl_distillation(const SoftPrediction& p_teacher, const SoftPrediction& p_student,
                       bool compensate = true);
// Splits the (uncompensated) KL into binary_term + weight * nontarget_term.
Decomposition decompose_kd(const SoftPrediction& p_teacher, const SoftPrediction& p_student,
                           std::int64_t t);
// -log softmax(z)[y] at tau = 1.
double cross_entropy(const std::vector<double>& z, std::int64_t y);
double entropy(const SoftPrediction& p);

}  // namespace dfpt::kd

namespace dfpt {

// Batch-mean -log softmax(z)[y]; rows of z are per-sample logits.
Tensor cross_entropy(const Tensor& logits, const std::vector<std::int64_t>& labels);
// Batch-mean KL(soften(a) || soften(b)) at the given temperature, times tau^2
// when compensate is set. Differentiable through both arguments; callers
// detach whichever side plays the constant reference.
Tensor kl_distill(const Tensor& a_logits, const Tensor& b_logits, double tau,
                  bool compensate = true);

}  // namespace dfpt
