#include "dfpt/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dfpt/autograd.hpp"
#include "dfpt/kd_losses.hpp"

namespace dfpt::train {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::int64_t count_correct(const Tensor& logits, const std::vector<std::int64_t>& y) {
    const auto am = argmax_rows(logits);
    std::int64_t c = 0;
    for (std::size_t i = 0; i < y.size(); ++i)
        if (am[i] == y[i]) ++c;
    return c;
}

// Batch-mean KL at tau = 1 without compensation: the similarity metric, as
// opposed to the temperature-scaled training loss.
double similarity_kl(const Tensor& a, const Tensor& b) {
    NoGradGuard ng;
    return kl_distill(a, b, 1.0, false).item();
}

// Mean over the batch of 1 - p_target under the tau-softened distribution.
double mean_nontarget_mass(const Tensor& logits, const std::vector<std::int64_t>& y, double tau) {
    NoGradGuard ng;
    Tensor lp = log_softmax(mul_scalar(logits, 1.0 / tau));
    Tensor pt = exp(take_per_row(lp, y));
    return 1.0 - reduce_mean(pt, {0}, false).item();
}

std::vector<Tensor> collect_grads(const std::vector<Tensor>& params) {
    std::vector<Tensor> gs;
    gs.reserve(params.size());
    for (const auto& p : params) gs.push_back(p.grad());
    return gs;
}

std::string fmt_g6(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

}  // namespace

Method parse_method(const std::string& name) {
    if (name == "ce-only" || name == "ce") return Method::ce_only;
    if (name == "vanilla-kd" || name == "kd") return Method::vanilla_kd;
    if (name == "dfpt-kd" || name == "dfpt") return Method::dfpt_kd;
    if (name == "dfpt-kd-dagger" || name == "dfpt-t") return Method::dfpt_kd_dagger;
    throw Error("train config: unknown method '" + name +
                "' (want ce-only, vanilla-kd, dfpt-kd or dfpt-kd-dagger)");
}

std::string method_name(Method m) {
    switch (m) {
        case Method::ce_only: return "ce-only";
        case Method::vanilla_kd: return "vanilla-kd";
        case Method::dfpt_kd: return "dfpt-kd";
        case Method::dfpt_kd_dagger: return "dfpt-kd-dagger";
    }
    throw Error("train config: bad method value");
}

void validate(const TrainConfig& c) {
    if (!(c.lambda >= 0.0 && c.lambda <= 1.0)) throw Error("train config: lambda must be in [0, 1]");
    if (!(c.alpha >= 0.0) || !(c.beta >= 0.0))
        throw Error("train config: alpha and beta must be >= 0");
    if (!(c.tau > 0.0)) throw Error("train config: tau must be > 0");
    if (c.epochs < 1) throw Error("train config: epochs must be >= 1");
    if (c.batch < 1) throw Error("train config: batch size must be >= 1");
    if (!(c.lr > 0.0)) throw Error("train config: learning rate must be > 0");
    if (!(c.momentum >= 0.0 && c.momentum < 1.0))
        throw Error("train config: momentum must be in [0, 1)");
    if (!(c.weight_decay >= 0.0)) throw Error("train config: weight decay must be >= 0");
    if (!(c.lr_decay > 0.0 && c.lr_decay <= 1.0))
        throw Error("train config: lr decay factor must be in (0, 1]");
    if (!(c.teacher_lr_scale > 0.0 && c.teacher_lr_scale <= 1.0))
        throw Error("train config: teacher lr scale must be in (0, 1]");
    for (std::size_t i = 0; i < c.milestones.size(); ++i) {
        if (c.milestones[i] < 0) throw Error("train config: milestones must be >= 0");
        if (i > 0 && c.milestones[i] <= c.milestones[i - 1])
            throw Error("train config: milestones must be strictly increasing");
    }
}

double lr_at(const TrainConfig& c, std::int64_t epoch) {
    if (epoch < 0) throw Error("train config: epoch must be >= 0");
    double lr = c.lr;
    for (std::int64_t m : c.milestones)
        if (epoch >= m) lr *= c.lr_decay;
    return lr;
}

void sgd_step(SGDState& state, const std::vector<Tensor>& params,
              const std::vector<Tensor>& grads) {
    if (params.size() != grads.size())
        throw Error("sgd: got " + std::to_string(grads.size()) + " grads for " +
                    std::to_string(params.size()) + " params");
    if (state.velocity.empty()) {
        state.velocity.reserve(params.size());
        for (const auto& p : params) state.velocity.push_back(Tensor::zeros(p.shape(), p.dtype()));
    }
    if (state.velocity.size() != params.size())
        throw Error("sgd: state tracks " + std::to_string(state.velocity.size()) +
                    " params, got " + std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor p = params[i];
        const Tensor& g = grads[i];
        Tensor& v = state.velocity[i];
        if (!g.defined() || g.shape() != p.shape() || v.shape() != p.shape() ||
            g.dtype() != p.dtype() || v.dtype() != p.dtype())
            throw Error("sgd: shape mismatch at param " + std::to_string(i));
        const std::int64_t n = p.numel();
        const double mu = state.momentum, wd = state.weight_decay, lr = state.lr;
        if (p.dtype() == DType::f32) {
            float* pd = p.data<float>();
            const float* gd = g.data<float>();
            float* vd = v.data<float>();
            for (std::int64_t j = 0; j < n; ++j) {
                vd[j] = static_cast<float>(mu * vd[j] + gd[j] + wd * pd[j]);
                pd[j] = static_cast<float>(pd[j] - lr * vd[j]);
            }
        } else {
            double* pd = p.data<double>();
            const double* gd = g.data<double>();
            double* vd = v.data<double>();
            for (std::int64_t j = 0; j < n; ++j) {
                vd[j] = mu * vd[j] + gd[j] + wd * pd[j];
                pd[j] -= lr * vd[j];
            }
        }
    }
    ++state.step_count;
}

const char* const kCsvHeader =
    "epoch,split,top1,ce,kd_t,kd_p,prompt_top1,kl_s_t,kl_s_p,one_minus_pt_t,one_minus_pt_p,lr";

void MetricsLog::append(const MetricsRow& r) {
    if (r.split != "train" && r.split != "test")
        throw Error("metrics: split must be 'train' or 'test'");
    if (find(r.epoch, r.split))
        throw Error("metrics: duplicate record for epoch " + std::to_string(r.epoch) + " split " +
                    r.split);
    rows.push_back(r);
}

const MetricsRow* MetricsLog::find(std::int64_t epoch, const std::string& split) const {
    for (const auto& r : rows)
        if (r.epoch == epoch && r.split == split) return &r;
    return nullptr;
}

std::string MetricsLog::to_csv() const {
    std::string out = kCsvHeader;
    out += '\n';
    for (const auto& r : rows) {
        out += std::to_string(r.epoch);
        out += ',';
        out += r.split;
        for (double v : {r.top1, r.ce, r.kd_t, r.kd_p, r.prompt_top1, r.kl_s_t, r.kl_s_p,
                         r.one_minus_pt_t, r.one_minus_pt_p, r.lr}) {
            out += ',';
            out += fmt_g6(v);
        }
        out += '\n';
    }
    return out;
}

void MetricsLog::save_csv(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("metrics: cannot open '" + path + "' for writing");
    f << to_csv();
    if (!f) throw Error("metrics: failed to write '" + path + "'");
}

MetricsLog MetricsLog::from_csv_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("metrics: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(f, line)) throw Error("metrics: '" + path + "' is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kCsvHeader) throw Error("metrics: '" + path + "' has an unexpected header");
    MetricsLog log;
    std::int64_t lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::size_t start = 0;
        for (;;) {
            std::size_t pos = line.find(',', start);
            cells.push_back(line.substr(start, pos - start));
            if (pos == std::string::npos) break;
            start = pos + 1;
        }
        if (cells.size() != 12)
            throw Error("metrics: bad row at line " + std::to_string(lineno) + " in '" + path +
                        "'");
        MetricsRow r;
        r.epoch = std::stoll(cells[0]);
        r.split = cells[1];
        double* vals[] = {&r.top1,   &r.ce,     &r.kd_t,           &r.kd_p,
                          &r.prompt_top1, &r.kl_s_t, &r.kl_s_p,    &r.one_minus_pt_t,
                          &r.one_minus_pt_p, &r.lr};
        for (int i = 0; i < 10; ++i) *vals[i] = std::strtod(cells[i + 2].c_str(), nullptr);
        log.append(r);
    }
    return log;
}

void EpochAccum::add(const StepStats& st) {
    count_ += st.count;
    correct_s_ += st.correct_s;
    if (st.correct_p >= 0) {
        correct_p_ += st.correct_p;
        any_prompt_ = true;
    }
    const double vals[9] = {st.ce,     st.kd_t,   st.kd_p,           st.kl_s_t, st.kl_s_p,
                            st.one_minus_pt_t, st.one_minus_pt_p, st.prompt_loss, st.student_loss};
    for (int i = 0; i < 9; ++i)
        if (!std::isnan(vals[i])) {
            sum_[i] += vals[i] * static_cast<double>(st.count);
            n_[i] += st.count;
        }
}

MetricsRow EpochAccum::row(std::int64_t epoch, const std::string& split, double lr) const {
    auto mean = [&](int i) { return n_[i] ? sum_[i] / static_cast<double>(n_[i]) : kNaN; };
    MetricsRow r;
    r.epoch = epoch;
    r.split = split;
    r.top1 = count_ ? static_cast<double>(correct_s_) / static_cast<double>(count_) : kNaN;
    r.ce = mean(0);
    r.kd_t = mean(1);
    r.kd_p = mean(2);
    r.prompt_top1 =
        any_prompt_ ? static_cast<double>(correct_p_) / static_cast<double>(count_) : kNaN;
    r.kl_s_t = mean(3);
    r.kl_s_p = mean(4);
    r.one_minus_pt_t = mean(5);
    r.one_minus_pt_p = mean(6);
    r.lr = lr;
    return r;
}

Distiller::Distiller(const TrainConfig& cfg, models::StagedModel student,
                     std::shared_ptr<DualForwardTeacher> dual,
                     std::shared_ptr<models::StagedModel> teacher)
    : cfg_(cfg), student_(std::move(student)), dual_(std::move(dual)),
      teacher_(std::move(teacher)) {
    validate(cfg_);
    const bool wants_dual =
        cfg_.method == Method::dfpt_kd || cfg_.method == Method::dfpt_kd_dagger;
    if (wants_dual && !dual_)
        throw Error("trainer: method " + method_name(cfg_.method) +
                    " requires a dual-forward teacher");
    if (!wants_dual && dual_)
        throw Error("trainer: method " + method_name(cfg_.method) +
                    " does not take a dual-forward teacher");
    if (cfg_.method == Method::vanilla_kd && !teacher_)
        throw Error("trainer: method vanilla-kd requires a teacher model");
    if (cfg_.method == Method::ce_only && teacher_)
        throw Error("trainer: method ce-only takes no teacher");
    if (wants_dual && teacher_)
        throw Error("trainer: dfpt methods take the teacher inside the dual wrapper");

    registry_.add_module("student.", student_, nn::Group::psi);
    if (dual_) {
        dual_->register_params(registry_);
        dual_->set_theta_trainable(cfg_.method == Method::dfpt_kd_dagger);
    } else if (teacher_) {
        registry_.add_module("teacher.", *teacher_, nn::Group::theta);
        registry_.set_requires_grad(nn::Group::theta, false);
    }
    psi_params_ = group_tensors(nn::Group::psi);
    phi_params_ = group_tensors(nn::Group::phi);
    theta_params_ = group_tensors(nn::Group::theta);

    psi_state_ = {cfg_.momentum, cfg_.weight_decay, 0.0, 0, {}};
    phi_state_ = psi_state_;
    theta_state_ = psi_state_;
    set_lr(cfg_.lr);
}

std::vector<Tensor> Distiller::group_tensors(nn::Group g) const {
    std::vector<Tensor> out;
    for (const auto& e : registry_.group(g)) out.push_back(e.tensor);
    return out;
}

void Distiller::set_lr(double lr) {
    lr_ = lr;
    psi_state_.lr = lr;
    phi_state_.lr = lr;
    theta_state_.lr = lr * cfg_.teacher_lr_scale;
}

StepStats Distiller::distill_step(const data::Batch& batch) {
    const auto& y = batch.labels;
    if (!batch.images.defined() || batch.images.ndim() != 4)
        throw Error("trainer: batch images must be [N,C,H,W]");
    if (static_cast<std::int64_t>(y.size()) != batch.images.shape()[0])
        throw Error("trainer: batch has " + std::to_string(batch.images.shape()[0]) +
                    " images but " + std::to_string(y.size()) + " labels");
    const bool dfpt = dual_ != nullptr;

    StepStats st;
    st.count = batch.images.shape()[0];

    auto check_finite = [&](const char* which, double v) {
        if (std::isfinite(v)) return;
        std::ostringstream os;
        os << "trainer: non-finite " << which << " at step " << step_count_
           << " (method=" << method_name(cfg_.method) << ", lr=" << lr_
           << "); components: ce=" << st.ce << " kd_t=" << st.kd_t << " kd_p=" << st.kd_p
           << " prompt_ce=" << st.prompt_ce << " prompt_kl_t=" << st.prompt_kl_t
           << " prompt_kl_s=" << st.prompt_kl_s;
        throw Error(os.str());
    };

    Tape tape;
    Tensor logits_t, logits_p;
    if (dfpt) {
        DualOutput duo = dual_->dual_forward(batch.images, cfg_.grad_flow);
        logits_t = duo.logits_t;
        logits_p = duo.logits_p;
    } else if (teacher_) {
        NoGradGuard ng;
        logits_t = teacher_->forward(batch.images, false);
    }
    Tensor logits_s = student_.forward(batch.images, true);

    // Prompt-path update first: the student sees pre-update prompt logits.
    if (dfpt) {
        Tensor pce = cross_entropy(logits_p, y);
        Tensor pkt = kl_distill(logits_p, logits_t.detach(), cfg_.tau, cfg_.tau_compensate);
        Tensor pks = kl_distill(logits_p, logits_s.detach(), cfg_.tau, cfg_.tau_compensate);
        Tensor ploss =
            add(mul_scalar(pce, cfg_.lambda), mul_scalar(add(pkt, pks), 1.0 - cfg_.lambda));
        st.prompt_ce = pce.item();
        st.prompt_kl_t = pkt.item();
        st.prompt_kl_s = pks.item();
        st.prompt_loss = ploss.item();
        check_finite("prompt loss", st.prompt_loss);
        tape.backward(ploss);
        sgd_step(phi_state_, phi_params_, collect_grads(phi_params_));
        if (cfg_.method == Method::dfpt_kd_dagger)
            sgd_step(theta_state_, theta_params_, collect_grads(theta_params_));
        registry_.zero_grad();
    }

    Tensor ce = cross_entropy(logits_s, y);
    st.ce = ce.item();
    Tensor sloss;
    if (cfg_.method == Method::ce_only) {
        sloss = ce;
    } else {
        Tensor kdt = kl_distill(logits_s, logits_t.detach(), cfg_.tau, cfg_.tau_compensate);
        st.kd_t = kdt.item();
        Tensor kl_sum = kdt;
        if (dfpt) {
            Tensor kdp = kl_distill(logits_s, logits_p.detach(), cfg_.tau, cfg_.tau_compensate);
            st.kd_p = kdp.item();
            kl_sum = add(kdt, kdp);
        }
        sloss = add(mul_scalar(ce, cfg_.alpha), mul_scalar(kl_sum, cfg_.beta));
    }
    st.student_loss = sloss.item();
    check_finite("student loss", st.student_loss);
    tape.backward(sloss);
    sgd_step(psi_state_, psi_params_, collect_grads(psi_params_));
    registry_.zero_grad();

    st.correct_s = count_correct(logits_s, y);
    if (logits_t.defined()) {
        st.kl_s_t = similarity_kl(logits_s, logits_t);
        st.one_minus_pt_t = mean_nontarget_mass(logits_t, y, cfg_.tau);
    }
    if (dfpt) {
        st.correct_p = count_correct(logits_p, y);
        st.kl_s_p = similarity_kl(logits_s, logits_p);
        st.one_minus_pt_p = mean_nontarget_mass(logits_p, y, cfg_.tau);
    }
    ++step_count_;
    return st;
}

StepStats Distiller::measure(const data::Batch& batch) { return forward_stats(batch, false); }

StepStats Distiller::forward_stats(const data::Batch& batch, bool training) {
    NoGradGuard ng;
    const auto& y = batch.labels;
    const bool dfpt = dual_ != nullptr;

    StepStats st;
    st.count = batch.images.shape()[0];

    Tensor logits_t, logits_p;
    if (dfpt) {
        DualOutput duo = dual_->dual_forward(batch.images, cfg_.grad_flow);
        logits_t = duo.logits_t;
        logits_p = duo.logits_p;
    } else if (teacher_) {
        logits_t = teacher_->forward(batch.images, false);
    }
    Tensor logits_s = student_.forward(batch.images, training);

    Tensor ce = cross_entropy(logits_s, y);
    st.ce = ce.item();
    if (dfpt) {
        Tensor pce = cross_entropy(logits_p, y);
        Tensor pkt = kl_distill(logits_p, logits_t, cfg_.tau, cfg_.tau_compensate);
        Tensor pks = kl_distill(logits_p, logits_s, cfg_.tau, cfg_.tau_compensate);
        st.prompt_ce = pce.item();
        st.prompt_kl_t = pkt.item();
        st.prompt_kl_s = pks.item();
        st.prompt_loss = cfg_.lambda * st.prompt_ce +
                         (1.0 - cfg_.lambda) * (st.prompt_kl_t + st.prompt_kl_s);
    }
    if (cfg_.method == Method::ce_only) {
        st.student_loss = st.ce;
    } else {
        st.kd_t = kl_distill(logits_s, logits_t, cfg_.tau, cfg_.tau_compensate).item();
        double kl_sum = st.kd_t;
        if (dfpt) {
            st.kd_p = kl_distill(logits_s, logits_p, cfg_.tau, cfg_.tau_compensate).item();
            kl_sum += st.kd_p;
        }
        st.student_loss = cfg_.alpha * st.ce + cfg_.beta * kl_sum;
    }

    st.correct_s = count_correct(logits_s, y);
    if (logits_t.defined()) {
        st.kl_s_t = similarity_kl(logits_s, logits_t);
        st.one_minus_pt_t = mean_nontarget_mass(logits_t, y, cfg_.tau);
    }
    if (dfpt) {
        st.correct_p = count_correct(logits_p, y);
        st.kl_s_p = similarity_kl(logits_s, logits_p);
        st.one_minus_pt_p = mean_nontarget_mass(logits_p, y, cfg_.tau);
    }
    return st;
}

RunArtifacts run(const TrainConfig& cfg, const models::ArchSpec& student_spec,
                 const models::StagedModel* teacher, const data::LabeledDataset& train_set,
                 const data::LabeledDataset& test_set, const PromptConfig& prompt) {
    validate(cfg);
    if (train_set.classes != test_set.classes)
        throw Error("trainer: train and test sets disagree on class count");
    if (student_spec.classes != train_set.classes)
        throw Error("trainer: student spec expects " + std::to_string(student_spec.classes) +
                    " classes, dataset has " + std::to_string(train_set.classes));
    const bool wants_teacher = cfg.method != Method::ce_only;
    if (wants_teacher && !teacher)
        throw Error("trainer: method " + method_name(cfg.method) +
                    " requires a pre-trained teacher");
    if (!wants_teacher && teacher) throw Error("trainer: method ce-only takes no teacher");
    if (teacher && teacher->spec.classes != train_set.classes)
        throw Error("trainer: teacher expects " + std::to_string(teacher->spec.classes) +
                    " classes, dataset has " + std::to_string(train_set.classes));

    models::StagedModel student = models::build(student_spec, cfg.seed);

    // Private deep copy so runs never mutate the caller's teacher (dagger
    // updates weights; all methods toggle requires-grad flags).
    std::shared_ptr<DualForwardTeacher> dual;
    std::shared_ptr<models::StagedModel> plain;
    if (teacher) {
        models::StagedModel tcopy = models::build(teacher->spec, teacher->seed);
        nn::copy_state(*teacher, tcopy);
        if (cfg.method == Method::vanilla_kd)
            plain = std::make_shared<models::StagedModel>(std::move(tcopy));
        else
            dual = std::make_shared<DualForwardTeacher>(std::move(tcopy), prompt,
                                                        Rng::fold(cfg.seed, 1));
    }

    Distiller d(cfg, std::move(student), dual, plain);
    MetricsLog log;
    // Tiny desk datasets may hold fewer samples than the configured batch.
    const std::int64_t train_batch = std::min(cfg.batch, train_set.count());
    const std::int64_t test_batch = std::min(cfg.batch, test_set.count());
    for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at(cfg, epoch);
        d.set_lr(lr);

        EpochAccum train_acc;
        data::BatchStream bs(train_set, train_batch, cfg.seed, epoch, cfg.augment);
        data::Batch b;
        while (bs.next(b)) train_acc.add(d.distill_step(b));
        log.append(train_acc.row(epoch, "train", lr));

        EpochAccum test_acc;
        data::BatchStream es(test_set, test_batch, cfg.seed, epoch, false);
        while (es.next(b)) test_acc.add(d.measure(b));
        log.append(test_acc.row(epoch, "test", lr));
    }
    return {std::move(d.student_model()), dual, std::move(log)};
}

RunArtifacts run(const TrainConfig& cfg, const std::string& student_arch,
                 const models::StagedModel* teacher, const data::LabeledDataset& train_set,
                 const data::LabeledDataset& test_set, const PromptConfig& prompt) {
    return run(cfg, models::arch_spec(student_arch, train_set.classes), teacher, train_set,
               test_set, prompt);
}

models::StagedModel pretrain_teacher(const models::ArchSpec& arch,
                                     const data::LabeledDataset& train_set,
                                     const data::LabeledDataset& test_set, const TrainConfig& cfg,
                                     MetricsLog* log) {
    if (cfg.method != Method::ce_only)
        throw Error("trainer: pretrain_teacher requires method ce-only");
    RunArtifacts art = run(cfg, arch, nullptr, train_set, test_set);
    if (log) *log = std::move(art.log);
    return std::move(art.student);
}

models::StagedModel pretrain_teacher(const std::string& arch, const data::LabeledDataset& train_set,
                                     const data::LabeledDataset& test_set, const TrainConfig& cfg,
                                     MetricsLog* log) {
    return pretrain_teacher(models::arch_spec(arch, train_set.classes), train_set, test_set, cfg,
                            log);
}

}  // namespace dfpt::train
