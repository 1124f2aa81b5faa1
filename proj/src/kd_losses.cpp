#include "dfpt/kd_losses.hpp"

#include <algorithm>
#include <cmath>

namespace dfpt::kd {

namespace {

// log softmax(z / tau), max-subtracted so extreme logits stay finite.
std::vector<double> log_soften(const std::vector<double>& z, double tau) {
    const double zmax = *std::max_element(z.begin(), z.end());
    double lse = 0;
    for (double v : z) lse += std::exp((v - zmax) / tau);
    lse = std::log(lse);
    std::vector<double> out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = (z[i] - zmax) / tau - lse;
    return out;
}

void check_index(std::size_t C, std::int64_t t, const char* who) {
    if (t < 0 || static_cast<std::size_t>(t) >= C)
        throw Error(std::string(who) + ": class index " + std::to_string(t) +
                    " out of range for C=" + std::to_string(C));
}

}  // namespace

SoftPrediction soften(const std::vector<double>& z, double tau) {
    if (!(tau > 0)) throw Error("soften: temperature must be positive");
    if (z.empty()) throw Error("soften: empty logits");
    for (double v : z)
        if (!std::isfinite(v)) throw Error("soften: logits must be finite");
    SoftPrediction sp;
    sp.z = z;
    sp.tau = tau;
    sp.p.resize(z.size());
    const auto lp = log_soften(z, tau);
    for (std::size_t i = 0; i < z.size(); ++i) sp.p[i] = std::exp(lp[i]);
    return sp;
}

TargetSplit split_target(const SoftPrediction& p, std::int64_t t) {
    check_index(p.p.size(), t, "split_target");
    TargetSplit s;
    s.t = t;
    s.p_t = p.p[static_cast<std::size_t>(t)];
    double rest = 0;
    for (std::size_t i = 0; i < p.p.size(); ++i)
        if (i != static_cast<std::size_t>(t)) rest += p.p[i];
    s.p_not_t = rest;
    return s;
}

NonTargetDist nontarget_distribution(const SoftPrediction& p, std::int64_t t) {
    check_index(p.p.size(), t, "nontarget_distribution");
    const TargetSplit s = split_target(p, t);
    if (s.p_not_t <= 0)
        throw Error("nontarget_distribution: no non-target mass (p_t = 1)");
    NonTargetDist d;
    d.t = t;
    d.q.reserve(p.p.size() - 1);
    for (std::size_t i = 0; i < p.p.size(); ++i)
        if (i != static_cast<std::size_t>(t)) d.q.push_back(p.p[i] / s.p_not_t);
    return d;
}

double kl_distillation(const SoftPrediction& p_teacher, const SoftPrediction& p_student,
                       bool compensate) {
    if (p_teacher.p.size() != p_student.p.size())
        throw Error("kl_distillation: class counts differ");
    if (p_teacher.tau != p_student.tau)
        throw Error("kl_distillation: temperatures differ");
    const auto la = log_soften(p_teacher.z, p_teacher.tau);
    const auto lb = log_soften(p_student.z, p_student.tau);
    double kl = 0;
    for (std::size_t i = 0; i < la.size(); ++i) {
        const double pa = std::exp(la[i]);
        if (pa > 0) kl += pa * (la[i] - lb[i]);
    }
    return compensate ? kl * p_teacher.tau * p_teacher.tau : kl;
}

Decomposition decompose_kd(const SoftPrediction& p_teacher, const SoftPrediction& p_student,
                           std::int64_t t) {
    if (p_teacher.p.size() != p_student.p.size())
        throw Error("decompose_kd: class counts differ");
    check_index(p_teacher.p.size(), t, "decompose_kd");
    const TargetSplit bt = split_target(p_teacher, t);
    const TargetSplit bs = split_target(p_student, t);
    const NonTargetDist qt = nontarget_distribution(p_teacher, t);
    const NonTargetDist qs = nontarget_distribution(p_student, t);

    Decomposition d;
    d.weight = 1.0 - bt.p_t;
    d.binary_term = 0;
    if (bt.p_t > 0) d.binary_term += bt.p_t * std::log(bt.p_t / bs.p_t);
    if (bt.p_not_t > 0) d.binary_term += bt.p_not_t * std::log(bt.p_not_t / bs.p_not_t);
    d.nontarget_term = 0;
    for (std::size_t i = 0; i < qt.q.size(); ++i)
        if (qt.q[i] > 0) d.nontarget_term += qt.q[i] * std::log(qt.q[i] / qs.q[i]);
    return d;
}

double cross_entropy(const std::vector<double>& z, std::int64_t y) {
    check_index(z.size(), y, "cross_entropy");
    return -log_soften(z, 1.0)[static_cast<std::size_t>(y)];
}

double entropy(const SoftPrediction& p) {
    double h = 0;
    for (double v : p.p)
        if (v > 0) h -= v * std::log(v);
    return h;
}

}  // namespace dfpt::kd

namespace dfpt {

Tensor cross_entropy(const Tensor& logits, const std::vector<std::int64_t>& labels) {
    if (logits.ndim() != 2) throw Error("cross_entropy: expects [N,C] logits");
    if (static_cast<std::int64_t>(labels.size()) != logits.dim(0))
        throw Error("cross_entropy: label count does not match batch");
    Tensor picked = take_per_row(log_softmax(logits), labels);
    return mul_scalar(reduce_mean(picked, {}, false), -1.0);
}

Tensor kl_distill(const Tensor& a_logits, const Tensor& b_logits, double tau, bool compensate) {
    if (a_logits.ndim() != 2 || b_logits.ndim() != 2)
        throw Error("kl_distill: expects [N,C] logits");
    if (a_logits.shape() != b_logits.shape()) throw Error("kl_distill: shapes differ");
    if (!(tau > 0)) throw Error("kl_distill: temperature must be positive");
    Tensor la = log_softmax(mul_scalar(a_logits, 1.0 / tau));
    Tensor lb = log_softmax(mul_scalar(b_logits, 1.0 / tau));
    Tensor rows = reduce_sum(mul(exp(la), sub(la, lb)), {1}, false);
    Tensor loss = reduce_mean(rows, {}, false);
    return compensate ? mul_scalar(loss, tau * tau) : loss;
}

}  // namespace dfpt
