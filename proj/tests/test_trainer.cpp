#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "dfpt/data.hpp"
#include "dfpt/models.hpp"
#include "dfpt/nn.hpp"
#include "dfpt/prompt_path.hpp"
#include "dfpt/tensor.hpp"
#include "dfpt/trainer.hpp"
#include "test_util.hpp"

using namespace dfpt;
using namespace dfpt::train;
using testutil::bit_equal;

namespace {

data::Batch make_batch(std::uint64_t seed, std::int64_t n, std::int64_t classes,
                       std::int64_t size = 12) {
    Rng rng(seed);
    data::Batch b;
    b.images = Tensor::uniform({n, 3, size, size}, rng, DType::f32, 0.0, 1.0);
    for (std::int64_t i = 0; i < n; ++i) b.labels.push_back(rng.uniform_int(classes));
    return b;
}

std::vector<Tensor> snapshot(const std::vector<nn::NamedTensor>& named) {
    std::vector<Tensor> out;
    for (const auto& nt : named) out.push_back(nt.tensor.clone());
    return out;
}

bool all_bit_equal(const std::vector<nn::NamedTensor>& named, const std::vector<Tensor>& snap) {
    if (named.size() != snap.size()) return false;
    for (std::size_t i = 0; i < named.size(); ++i)
        if (!bit_equal(named[i].tensor, snap[i])) return false;
    return true;
}

// Fresh dual-forward wrapper over a deterministic tiny teacher.
std::shared_ptr<DualForwardTeacher> make_dual(std::int64_t classes, std::uint64_t seed) {
    models::StagedModel t = models::build("tiny-resnet-T", classes, seed);
    PromptConfig pc;
    pc.r1 = {4};
    pc.kernels = {3};
    return std::make_shared<DualForwardTeacher>(std::move(t), pc, seed + 1);
}

TrainConfig small_cfg(Method m, std::uint64_t seed) {
    TrainConfig c;
    c.method = m;
    c.epochs = 2;
    c.batch = 8;
    c.lr = 0.05;
    c.seed = seed;
    return c;
}

data::SynthData tiny_data(std::int64_t classes, std::int64_t per_class, std::uint64_t seed,
                          double difficulty = 1.0) {
    data::SynthSpec spec;
    spec.classes = classes;
    spec.per_class = per_class;
    spec.size = 12;
    spec.difficulty = difficulty;
    spec.seed = seed;
    return data::gen_synth(spec);
}

}  // namespace

TEST_CASE("lr schedule follows the milestone decay") {
    TrainConfig c;
    c.lr = 0.05;
    c.milestones = {150, 180, 210};
    c.lr_decay = 0.1;
    CHECK(lr_at(c, 0) == 0.05);
    CHECK(lr_at(c, 149) == 0.05);
    CHECK(lr_at(c, 150) == 0.05 * 0.1);
    CHECK(lr_at(c, 180) == 0.05 * 0.1 * 0.1);
    CHECK(lr_at(c, 210) == 0.05 * 0.1 * 0.1 * 0.1);
    CHECK(lr_at(c, 240) == 0.05 * 0.1 * 0.1 * 0.1);
    CHECK_THROWS_WITH_AS(lr_at(c, -1), "train config: epoch must be >= 0", Error);
}

TEST_CASE("sgd without momentum or decay is plain gradient descent") {
    SGDState s;
    s.momentum = 0.0;
    s.weight_decay = 0.0;
    s.lr = 0.25;
    Tensor p = Tensor::from_f64({3}, {1.0, -2.0, 0.5});
    Tensor g = Tensor::from_f64({3}, {0.4, 0.8, -1.2});
    sgd_step(s, {p}, {g});
    const double* pd = p.data<double>();
    CHECK(pd[0] == 1.0 - 0.25 * 0.4);
    CHECK(pd[1] == -2.0 - 0.25 * 0.8);
    CHECK(pd[2] == 0.5 - 0.25 * -1.2);
    CHECK(s.step_count == 1);
    CHECK(s.velocity.size() == 1);
}

TEST_CASE("two momentum steps on a constant gradient displace by lr*g*(1 + 1.9)") {
    SGDState s;
    s.momentum = 0.9;
    s.weight_decay = 0.0;
    s.lr = 0.1;
    Tensor p = Tensor::from_f64({2}, {0.0, 3.0});
    Tensor g = Tensor::from_f64({2}, {1.0, -0.5});
    sgd_step(s, {p}, {g});
    sgd_step(s, {p}, {g});
    // v1 = g, v2 = 0.9 g + g, total = lr * g * 2.9
    const double* pd = p.data<double>();
    CHECK(pd[0] == doctest::Approx(0.0 - 0.1 * 1.0 * 2.9).epsilon(1e-12));
    CHECK(pd[1] == doctest::Approx(3.0 + 0.1 * 0.5 * 2.9).epsilon(1e-12));
}

TEST_CASE("weight decay with zero gradient shrinks parameters toward zero") {
    SGDState s;
    s.momentum = 0.0;
    s.weight_decay = 0.1;
    s.lr = 0.5;
    Tensor p = Tensor::from_f64({2}, {2.0, -4.0});
    Tensor g = Tensor::zeros({2}, DType::f64);
    sgd_step(s, {p}, {g});
    const double* pd = p.data<double>();
    CHECK(pd[0] == doctest::Approx(2.0 * (1.0 - 0.05)));
    CHECK(pd[1] == doctest::Approx(-4.0 * (1.0 - 0.05)));
    CHECK(std::abs(pd[0]) < 2.0);
    CHECK(std::abs(pd[1]) < 4.0);
}

TEST_CASE("sgd rejects misaligned params, grads and buffers") {
    SGDState s;
    Tensor a = Tensor::zeros({2});
    Tensor b = Tensor::zeros({3});
    CHECK_THROWS_WITH_AS(sgd_step(s, {a, b}, {a}), "sgd: got 1 grads for 2 params", Error);
    CHECK_THROWS_WITH_AS(sgd_step(s, {a}, {b}), "sgd: shape mismatch at param 0", Error);
    SGDState s2;
    sgd_step(s2, {a}, {Tensor::zeros({2})});
    CHECK_THROWS_WITH_AS(sgd_step(s2, {a, b}, {Tensor::zeros({2}), Tensor::zeros({3})}),
                         "sgd: state tracks 1 params, got 2", Error);
}

TEST_CASE("config validation rejects out-of-range fields") {
    TrainConfig c;
    c.lambda = 1.5;
    CHECK_THROWS_WITH_AS(validate(c), "train config: lambda must be in [0, 1]", Error);
    c = {};
    c.beta = -0.1;
    CHECK_THROWS_WITH_AS(validate(c), "train config: alpha and beta must be >= 0", Error);
    c = {};
    c.tau = 0.0;
    CHECK_THROWS_WITH_AS(validate(c), "train config: tau must be > 0", Error);
    c = {};
    c.epochs = 0;
    CHECK_THROWS_WITH_AS(validate(c), "train config: epochs must be >= 1", Error);
    c = {};
    c.momentum = 1.0;
    CHECK_THROWS_WITH_AS(validate(c), "train config: momentum must be in [0, 1)", Error);
    c = {};
    c.teacher_lr_scale = 0.0;
    CHECK_THROWS_WITH_AS(validate(c), "train config: teacher lr scale must be in (0, 1]", Error);
    c = {};
    c.milestones = {150, 150};
    CHECK_THROWS_WITH_AS(validate(c), "train config: milestones must be strictly increasing",
                         Error);
    c = {};
    validate(c);  // defaults are legal
}

TEST_CASE("method names parse both canonical and short forms") {
    CHECK(parse_method("ce-only") == Method::ce_only);
    CHECK(parse_method("ce") == Method::ce_only);
    CHECK(parse_method("vanilla-kd") == Method::vanilla_kd);
    CHECK(parse_method("kd") == Method::vanilla_kd);
    CHECK(parse_method("dfpt-kd") == Method::dfpt_kd);
    CHECK(parse_method("dfpt") == Method::dfpt_kd);
    CHECK(parse_method("dfpt-kd-dagger") == Method::dfpt_kd_dagger);
    CHECK(parse_method("dfpt-t") == Method::dfpt_kd_dagger);
    CHECK(method_name(parse_method("dfpt")) == "dfpt-kd");
    CHECK_THROWS_AS(parse_method("distill"), Error);
}

TEST_CASE("metrics log enforces one record per epoch and split") {
    MetricsLog log;
    MetricsRow r;
    r.epoch = 0;
    r.split = "train";
    r.top1 = 0.5;
    log.append(r);
    r.split = "test";
    log.append(r);
    CHECK_THROWS_WITH_AS(log.append(r), "metrics: duplicate record for epoch 0 split test", Error);
    r.split = "val";
    CHECK_THROWS_WITH_AS(log.append(r), "metrics: split must be 'train' or 'test'", Error);
    CHECK(log.find(0, "train") != nullptr);
    CHECK(log.find(1, "train") == nullptr);
}

TEST_CASE("metrics CSV has the fixed header, 6 significant digits and nan markers") {
    MetricsLog log;
    MetricsRow r;
    r.epoch = 3;
    r.split = "train";
    r.top1 = 0.123456789;
    r.ce = 2.0 / 3.0;
    r.lr = 0.05;
    log.append(r);
    const std::string csv = log.to_csv();
    const std::string header = csv.substr(0, csv.find('\n'));
    CHECK(header ==
          "epoch,split,top1,ce,kd_t,kd_p,prompt_top1,kl_s_t,kl_s_p,one_minus_pt_t,"
          "one_minus_pt_p,lr");
    CHECK(csv.find("3,train,0.123457,0.666667,nan,nan,nan,nan,nan,nan,nan,0.05\n") !=
          std::string::npos);
}

TEST_CASE("metrics CSV round trips through a file") {
    MetricsLog log;
    for (std::int64_t e = 0; e < 3; ++e) {
        MetricsRow r;
        r.epoch = e;
        r.split = "train";
        r.top1 = 0.25 * static_cast<double>(e);
        r.ce = 1.5 - 0.1 * static_cast<double>(e);
        r.lr = 0.05;
        log.append(r);
        r.split = "test";
        log.append(r);
    }
    const std::string path = (std::filesystem::temp_directory_path() / "dfpt_metrics.csv").string();
    log.save_csv(path);
    const MetricsLog back = MetricsLog::from_csv_file(path);
    REQUIRE(back.rows.size() == log.rows.size());
    for (std::size_t i = 0; i < back.rows.size(); ++i) {
        CHECK(back.rows[i].epoch == log.rows[i].epoch);
        CHECK(back.rows[i].split == log.rows[i].split);
        CHECK(back.rows[i].top1 == doctest::Approx(log.rows[i].top1).epsilon(1e-5));
        CHECK(std::isnan(back.rows[i].kd_t));
        CHECK(back.rows[i].lr == doctest::Approx(0.05));
    }
    std::filesystem::remove(path);

    const std::string bad = (std::filesystem::temp_directory_path() / "dfpt_bad.csv").string();
    {
        std::ofstream f(bad);
        f << "epoch,split\n";
    }
    CHECK_THROWS_AS(MetricsLog::from_csv_file(bad), Error);
    std::filesystem::remove(bad);
}

TEST_CASE("distiller construction enforces the method/teacher pairing") {
    const std::int64_t classes = 4;
    auto student = [&] { return models::build("tiny-resnet-S", classes, 7); };
    auto teacher = std::make_shared<models::StagedModel>(models::build("tiny-resnet-T", classes, 9));
    auto dual = make_dual(classes, 11);

    CHECK_THROWS_WITH_AS(Distiller(small_cfg(Method::dfpt_kd, 1), student(), nullptr, nullptr),
                         "trainer: method dfpt-kd requires a dual-forward teacher", Error);
    CHECK_THROWS_WITH_AS(Distiller(small_cfg(Method::ce_only, 1), student(), dual, nullptr),
                         "trainer: method ce-only does not take a dual-forward teacher", Error);
    CHECK_THROWS_WITH_AS(Distiller(small_cfg(Method::vanilla_kd, 1), student(), nullptr, nullptr),
                         "trainer: method vanilla-kd requires a teacher model", Error);
    CHECK_THROWS_WITH_AS(Distiller(small_cfg(Method::ce_only, 1), student(), nullptr, teacher),
                         "trainer: method ce-only takes no teacher", Error);
    CHECK_THROWS_WITH_AS(Distiller(small_cfg(Method::dfpt_kd, 1), student(), dual, teacher),
                         "trainer: dfpt methods take the teacher inside the dual wrapper", Error);
}

TEST_CASE("one distillation step moves phi and psi but leaves theta bit-identical") {
    const std::int64_t classes = 4;
    auto dual = make_dual(classes, 21);
    Distiller d(small_cfg(Method::dfpt_kd, 5), models::build("tiny-resnet-S", classes, 3), dual,
                nullptr);

    const auto theta_entries = d.registry().group(nn::Group::theta);
    const auto phi_entries = d.registry().group(nn::Group::phi);
    const auto psi_entries = d.registry().group(nn::Group::psi);
    REQUIRE(!theta_entries.empty());
    REQUIRE(!phi_entries.empty());
    REQUIRE(!psi_entries.empty());

    std::vector<Tensor> theta0, phi0, psi0;
    for (const auto& e : theta_entries) theta0.push_back(e.tensor.clone());
    for (const auto& e : phi_entries) phi0.push_back(e.tensor.clone());
    for (const auto& e : psi_entries) psi0.push_back(e.tensor.clone());
    // Teacher state includes BatchNorm running stats; they must not move either.
    const auto teacher_state = dual->teacher().named_state();
    const auto teacher0 = snapshot(teacher_state);

    for (int step = 0; step < 3; ++step) {
        const StepStats st = d.distill_step(make_batch(100 + step, 8, classes));
        CHECK(std::isfinite(st.prompt_loss));
        CHECK(std::isfinite(st.student_loss));
        CHECK(st.count == 8);
    }

    for (std::size_t i = 0; i < theta_entries.size(); ++i)
        CHECK(bit_equal(theta_entries[i].tensor, theta0[i]));
    CHECK(all_bit_equal(teacher_state, teacher0));

    bool phi_moved = false, psi_moved = false;
    for (std::size_t i = 0; i < phi_entries.size(); ++i)
        if (!bit_equal(phi_entries[i].tensor, phi0[i])) phi_moved = true;
    for (std::size_t i = 0; i < psi_entries.size(); ++i)
        if (!bit_equal(psi_entries[i].tensor, psi0[i])) psi_moved = true;
    CHECK(phi_moved);
    CHECK(psi_moved);

    // Student BatchNorm runs in training mode, so its running stats do move.
    bool student_buffers_moved = false;
    std::vector<nn::NamedTensor> bufs;
    d.student_model().buffers("", bufs);
    for (const auto& nt : bufs) {
        Tensor z = Tensor::zeros(nt.tensor.shape(), nt.tensor.dtype());
        if (nt.name.find("running_mean") != std::string::npos && !bit_equal(nt.tensor, z))
            student_buffers_moved = true;
    }
    CHECK(student_buffers_moved);
}

TEST_CASE("dagger updates theta at the scaled rate") {
    const std::int64_t classes = 4;
    const data::Batch batch = make_batch(77, 8, classes);

    auto run_once = [&](double scale) {
        auto dual = make_dual(classes, 31);
        TrainConfig c = small_cfg(Method::dfpt_kd_dagger, 13);
        c.teacher_lr_scale = scale;
        Distiller d(c, models::build("tiny-resnet-S", classes, 17), dual, nullptr);
        const auto theta_entries = d.registry().group(nn::Group::theta);
        std::vector<Tensor> before;
        for (const auto& e : theta_entries) before.push_back(e.tensor.clone());
        d.distill_step(batch);
        double max_delta = 0;
        for (std::size_t i = 0; i < theta_entries.size(); ++i) {
            const Tensor& after = theta_entries[i].tensor;
            const float* a = after.data<float>();
            const float* b = before[i].data<float>();
            for (std::int64_t j = 0; j < after.numel(); ++j)
                max_delta = std::max(max_delta,
                                     std::abs(static_cast<double>(a[j]) - static_cast<double>(b[j])));
        }
        return max_delta;
    };

    const double full = run_once(1.0);
    const double scaled = run_once(0.01);
    REQUIRE(full > 0);
    REQUIRE(scaled > 0);
    CHECK(scaled / full == doctest::Approx(0.01).epsilon(0.02));
}

TEST_CASE("each update strictly decreases its own loss on a fixed batch") {
    const std::int64_t classes = 4;
    const data::Batch batch = make_batch(55, 16, classes);
    auto dual = make_dual(classes, 41);
    TrainConfig c = small_cfg(Method::dfpt_kd, 19);
    c.lr = 1e-4;
    c.momentum = 0.0;
    c.weight_decay = 0.0;
    Distiller d(c, models::build("tiny-resnet-S", classes, 23), dual, nullptr);

    double prev_prompt = 1e300, prev_student = 1e300;
    for (int step = 0; step < 11; ++step) {
        const StepStats st = d.distill_step(batch);
        CHECK(st.prompt_loss < prev_prompt);
        CHECK(st.student_loss < prev_student);
        prev_prompt = st.prompt_loss;
        prev_student = st.student_loss;
    }
}

TEST_CASE("vanilla kd with beta zero matches ce-only bit for bit") {
    const std::int64_t classes = 3;
    const data::SynthData ds = tiny_data(classes, 10, 61);

    TrainConfig ce = small_cfg(Method::ce_only, 29);
    RunArtifacts a = run(ce, "tiny-resnet-S", nullptr, ds.train, ds.test);

    TrainConfig kd = small_cfg(Method::vanilla_kd, 29);
    kd.alpha = 1.0;
    kd.beta = 0.0;
    const models::StagedModel teacher = models::build("tiny-resnet-T", classes, 97);
    RunArtifacts b = run(kd, "tiny-resnet-S", &teacher, ds.train, ds.test);

    CHECK(all_bit_equal(a.student.named_state(), snapshot(b.student.named_state())));
    REQUIRE(a.log.rows.size() == b.log.rows.size());
    for (std::size_t i = 0; i < a.log.rows.size(); ++i) {
        CHECK(a.log.rows[i].top1 == b.log.rows[i].top1);
        CHECK(a.log.rows[i].ce == b.log.rows[i].ce);
        CHECK(std::isnan(a.log.rows[i].kd_t));
        CHECK(std::isfinite(b.log.rows[i].kd_t));  // logged even though weighted by zero
    }
    CHECK(a.dual == nullptr);
    CHECK(b.dual == nullptr);
}

TEST_CASE("identical config and data reproduce the metrics log bit for bit") {
    const std::int64_t classes = 3;
    const data::SynthData ds = tiny_data(classes, 8, 71);
    const models::StagedModel teacher = models::build("tiny-resnet-T", classes, 83);

    TrainConfig c = small_cfg(Method::dfpt_kd, 37);
    PromptConfig pc;
    pc.r1 = {4};
    pc.kernels = {3};
    RunArtifacts a = run(c, "tiny-resnet-S", &teacher, ds.train, ds.test, pc);
    RunArtifacts b = run(c, "tiny-resnet-S", &teacher, ds.train, ds.test, pc);
    CHECK(a.log.to_csv() == b.log.to_csv());
    CHECK(all_bit_equal(a.student.named_state(), snapshot(b.student.named_state())));

    TrainConfig c2 = c;
    c2.seed = 38;
    RunArtifacts d2 = run(c2, "tiny-resnet-S", &teacher, ds.train, ds.test, pc);
    CHECK(a.log.to_csv() != d2.log.to_csv());
}

TEST_CASE("run wires methods, rows and columns as promised") {
    const std::int64_t classes = 3;
    const data::SynthData ds = tiny_data(classes, 8, 91);
    const models::StagedModel teacher = models::build("tiny-resnet-T", classes, 13);

    SUBCASE("ce-only leaves every teacher column nan") {
        RunArtifacts a = run(small_cfg(Method::ce_only, 3), "tiny-resnet-S", nullptr, ds.train,
                             ds.test);
        CHECK(a.log.rows.size() == 4);  // 2 epochs x {train, test}
        const MetricsRow* r = a.log.find(1, "test");
        REQUIRE(r != nullptr);
        CHECK(std::isfinite(r->top1));
        CHECK(std::isfinite(r->ce));
        CHECK(std::isnan(r->kd_t));
        CHECK(std::isnan(r->kd_p));
        CHECK(std::isnan(r->prompt_top1));
        CHECK(std::isnan(r->kl_s_t));
        CHECK(std::isnan(r->one_minus_pt_t));
        CHECK(r->lr == 0.05);
        CHECK(a.dual == nullptr);
    }
    SUBCASE("vanilla-kd fills teacher columns, leaves prompt columns nan") {
        RunArtifacts a =
            run(small_cfg(Method::vanilla_kd, 3), "tiny-resnet-S", &teacher, ds.train, ds.test);
        const MetricsRow* r = a.log.find(1, "train");
        REQUIRE(r != nullptr);
        CHECK(std::isfinite(r->kd_t));
        CHECK(std::isfinite(r->kl_s_t));
        CHECK(std::isfinite(r->one_minus_pt_t));
        CHECK(std::isnan(r->kd_p));
        CHECK(std::isnan(r->prompt_top1));
        CHECK(std::isnan(r->kl_s_p));
    }
    SUBCASE("dfpt-kd fills every column and returns the trained dual path") {
        PromptConfig pc;
        pc.r1 = {4};
        pc.kernels = {3};
        RunArtifacts a =
            run(small_cfg(Method::dfpt_kd, 3), "tiny-resnet-S", &teacher, ds.train, ds.test, pc);
        const MetricsRow* r = a.log.find(1, "train");
        REQUIRE(r != nullptr);
        CHECK(std::isfinite(r->kd_p));
        CHECK(std::isfinite(r->prompt_top1));
        CHECK(std::isfinite(r->kl_s_p));
        CHECK(std::isfinite(r->one_minus_pt_p));
        REQUIRE(a.dual != nullptr);
        // Training must have moved the prompt path off its identity start.
        auto fresh = make_dual(classes, 0);
        bool moved = false;
        for (const auto& nt : a.dual->phi_params())
            if (nt.name.find("up.weight") != std::string::npos) {
                Tensor z = Tensor::zeros(nt.tensor.shape(), nt.tensor.dtype());
                if (!bit_equal(nt.tensor, z)) moved = true;
            }
        CHECK(moved);
    }
    SUBCASE("teacher wiring errors") {
        CHECK_THROWS_WITH_AS(
            run(small_cfg(Method::vanilla_kd, 3), "tiny-resnet-S", nullptr, ds.train, ds.test),
            "trainer: method vanilla-kd requires a pre-trained teacher", Error);
        CHECK_THROWS_WITH_AS(
            run(small_cfg(Method::ce_only, 3), "tiny-resnet-S", &teacher, ds.train, ds.test),
            "trainer: method ce-only takes no teacher", Error);
        const models::StagedModel wide = models::build("tiny-resnet-T", 7, 13);
        CHECK_THROWS_WITH_AS(
            run(small_cfg(Method::vanilla_kd, 3), "tiny-resnet-S", &wide, ds.train, ds.test),
            "trainer: teacher expects 7 classes, dataset has 3", Error);
    }
}

TEST_CASE("measure reports without touching any parameter") {
    const std::int64_t classes = 4;
    auto dual = make_dual(classes, 51);
    Distiller d(small_cfg(Method::dfpt_kd, 53), models::build("tiny-resnet-S", classes, 57), dual,
                nullptr);
    std::vector<Tensor> before;
    for (const auto& e : d.registry().entries()) before.push_back(e.tensor.clone());
    const StepStats st = d.measure(make_batch(59, 8, classes));
    CHECK(std::isfinite(st.ce));
    CHECK(std::isfinite(st.prompt_loss));
    CHECK(st.correct_s >= 0);
    std::size_t i = 0;
    for (const auto& e : d.registry().entries()) CHECK(bit_equal(e.tensor, before[i++]));
}

TEST_CASE("non-finite loss aborts with a diagnostic dump") {
    const std::int64_t classes = 4;
    Distiller d(small_cfg(Method::ce_only, 3), models::build("tiny-resnet-S", classes, 5), nullptr,
                nullptr);
    // Poison the head weight (post-ReLU, so the NaN survives to the logits).
    Tensor w;
    for (const auto& e : d.registry().entries())
        if (e.name.find("head") != std::string::npos && e.name.find("weight") != std::string::npos)
            w = e.tensor;
    REQUIRE(w.defined());
    float* wd = w.data<float>();
    for (std::int64_t i = 0; i < w.numel(); ++i)
        wd[i] = std::numeric_limits<float>::quiet_NaN();
    try {
        d.distill_step(make_batch(1, 4, classes));
        FAIL("expected a non-finite loss abort");
    } catch (const Error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("trainer: non-finite student loss") != std::string::npos);
        CHECK(msg.find("method=ce-only") != std::string::npos);
        CHECK(msg.find("ce=") != std::string::npos);
    }
}

TEST_CASE("teacher pretraining masters an easy synthetic set") {
    const std::int64_t classes = 4;
    const data::SynthData ds = tiny_data(classes, 12, 101, 0.25);
    TrainConfig c;
    c.method = Method::ce_only;
    c.epochs = 12;
    c.batch = 16;
    c.lr = 0.05;
    c.momentum = 0.9;
    c.weight_decay = 5e-4;
    c.milestones = {8, 10};
    c.seed = 11;
    c.augment = false;

    CHECK_THROWS_WITH_AS(
        pretrain_teacher("tiny-resnet-T", ds.train, ds.test,
                         small_cfg(Method::vanilla_kd, 1)),
        "trainer: pretrain_teacher requires method ce-only", Error);

    MetricsLog log;
    models::StagedModel t = pretrain_teacher("tiny-resnet-T", ds.train, ds.test, c, &log);
    const MetricsRow* last = log.find(c.epochs - 1, "train");
    REQUIRE(last != nullptr);
    CHECK(last->top1 >= 0.95);
    CHECK(t.spec.classes == classes);

    // Determinism: the same pretraining twice lands on the same weights.
    models::StagedModel t2 = pretrain_teacher("tiny-resnet-T", ds.train, ds.test, c);
    CHECK(all_bit_equal(t.named_state(), snapshot(t2.named_state())));
}
