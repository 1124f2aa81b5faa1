#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "dfpt/autograd.hpp"
#include "dfpt/checkpoint.hpp"
#include "dfpt/kd_losses.hpp"
#include "dfpt/models.hpp"
#include "dfpt/nn.hpp"
#include "dfpt/prompt_path.hpp"
#include "dfpt/tensor.hpp"
#include "test_util.hpp"

using namespace dfpt;
using testutil::bit_equal;
using testutil::conv_ref;
using testutil::max_abs_diff;
using testutil::to_vector;

namespace {

void fill_randn(Tensor& t, Rng& rng, double stddev = 1.0) {
    const Tensor r = Tensor::randn(t.shape(), rng, t.dtype(), stddev);
    std::memcpy(t.impl()->storage->data(), r.impl()->storage->data(),
                t.impl()->storage->size());
}

bool all_exact_zero(const Tensor& t) {
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        const double v = t.dtype() == DType::f32 ? t.data<float>()[i] : t.data<double>()[i];
        if (v != 0.0 || std::signbit(v)) return false;
    }
    return true;
}

template <typename T>
std::vector<T> chan_slice(const std::vector<T>& x, std::int64_t n, std::int64_t c,
                          std::int64_t hw, std::int64_t c0, std::int64_t c1) {
    std::vector<T> out;
    out.reserve(static_cast<std::size_t>(n * (c1 - c0) * hw));
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = c0; j < c1; ++j)
            for (std::int64_t p = 0; p < hw; ++p)
                out.push_back(x[static_cast<std::size_t>((i * c + j) * hw + p)]);
    return out;
}

template <typename T>
std::vector<T> chan_concat(const std::vector<T>& a, std::int64_t ca, const std::vector<T>& b,
                           std::int64_t cb, std::int64_t n, std::int64_t hw) {
    std::vector<T> out;
    out.reserve(static_cast<std::size_t>(n * (ca + cb) * hw));
    for (std::int64_t i = 0; i < n; ++i) {
        out.insert(out.end(), a.begin() + i * ca * hw, a.begin() + (i + 1) * ca * hw);
        out.insert(out.end(), b.begin() + i * cb * hw, b.begin() + (i + 1) * cb * hw);
    }
    return out;
}

// Straight-line double-precision re-computation of a prompt block from its
// live weights, built on the six-loop convolution reference.
std::vector<double> block_oracle(const PromptBlock& blk, const std::vector<double>& x,
                                 std::int64_t n, std::int64_t h, std::int64_t w) {
    const std::int64_t c = blk.channels(), d = blk.bottleneck(), m = blk.partial_channels();
    const std::int64_t hw = h * w;
    auto cur = conv_ref<double>(x, n, c, h, w, to_vector<double>(blk.down.weight), d, 1,
                                to_vector<double>(blk.down.bias), 1, 0);
    for (const auto& unit : blk.scales) {
        const std::int64_t k = unit.partial.kernel;
        const auto head = conv_ref<double>(chan_slice(cur, n, d, hw, 0, m), n, m, h, w,
                                           to_vector<double>(unit.partial.weight), m, k,
                                           to_vector<double>(unit.partial.bias), 1, (k - 1) / 2);
        const auto merged =
            m == d ? head : chan_concat(head, m, chan_slice(cur, n, d, hw, m, d), d - m, n, hw);
        cur = conv_ref<double>(merged, n, d, h, w, to_vector<double>(unit.pointwise.weight), d, 1,
                               to_vector<double>(unit.pointwise.bias), 1, 0);
    }
    return conv_ref<double>(cur, n, d, h, w, to_vector<double>(blk.up.weight), c, 1,
                            to_vector<double>(blk.up.bias), 1, 0);
}

void sgd_apply(std::vector<nn::NamedTensor> params, double lr) {
    for (auto& p : params) {
        if (!p.tensor.has_grad()) continue;
        const Tensor g = p.tensor.grad();
        float* pd = p.tensor.data<float>();
        const float* gd = g.data<float>();
        for (std::int64_t i = 0; i < p.tensor.numel(); ++i)
            pd[i] -= static_cast<float>(lr * gd[i]);
    }
}

std::vector<nn::NamedTensor> snapshot(const std::vector<nn::NamedTensor>& src) {
    std::vector<nn::NamedTensor> out;
    for (const auto& s : src) out.push_back({s.name, s.tensor.clone()});
    return out;
}

bool states_bit_equal(const std::vector<nn::NamedTensor>& a,
                      const std::vector<nn::NamedTensor>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].name != b[i].name || !bit_equal(a[i].tensor, b[i].tensor)) return false;
    return true;
}

std::string temp_file(const std::string& stem) {
    return (std::filesystem::temp_directory_path() / stem).string();
}

}  // namespace

TEST_CASE("prompt block closed-form parameter count matches enumeration") {
    Rng rng(3);
    const std::vector<std::int64_t> multi{3, 5, 7};
    for (const std::int64_t c : {8, 64, 256})
        for (const std::int64_t r1 : {1, 2, 4})
            for (const double r2 : {0.25, 0.5, 1.0}) {
                const std::int64_t d = (c + r1 - 1) / r1;
                if (static_cast<std::int64_t>(std::floor(r2 * static_cast<double>(d))) < 1)
                    continue;
                PromptBlock blk(c, r1, r2, multi, rng);
                CHECK(blk.param_count() == PromptBlock::expected_params(c, r1, r2, multi));
                PromptBlock single(c, r1, r2, {3}, rng);
                CHECK(single.param_count() == PromptBlock::expected_params(c, r1, r2, {3}));
            }
    // Hand-computed anchors pin the formula itself, not just the agreement.
    // c=8, r1=4 -> d=2; r2=0.5 -> m=1; k=3: (2*8+2) + (9+1 + 4+2) + (8*2+8).
    CHECK(PromptBlock::expected_params(8, 4, 0.5, {3}) == 58);
    CHECK(PromptBlock::expected_params(256, 4, 0.5, {3, 5, 7}) == 130656);
}

TEST_CASE("fresh prompt block emits the exact zero tensor") {
    Rng rng(5);
    PromptBlock blk(16, 4, 0.5, {3, 5, 7}, rng);
    for (int trial = 0; trial < 3; ++trial) {
        const Tensor x = Tensor::randn({2, 16, 8, 8}, rng);
        const Tensor y = blk.forward(x, false);
        CHECK(y.shape() == x.shape());
        CHECK(all_exact_zero(y));
    }
    PromptBlock blk64(16, 4, 0.5, {3, 5, 7}, rng, DType::f64);
    CHECK(all_exact_zero(blk64.forward(Tensor::randn({1, 16, 4, 4}, rng, DType::f64), false)));
}

TEST_CASE("partial convolution passes the trailing channels through untouched") {
    // Down, point-wise and up convs are hand-set to the identity, so the block
    // reduces to its partial stage: channels >= m must come out bit-identical.
    Rng rng(7);
    PromptBlock blk(8, 1, 0.5, {3}, rng);
    REQUIRE(blk.bottleneck() == 8);
    REQUIRE(blk.partial_channels() == 4);
    nn::identity_init_1x1(blk.down);
    nn::identity_init_1x1(blk.scales[0].pointwise);
    nn::identity_init_1x1(blk.up);

    Tensor probe = Tensor::zeros({1, 8, 5, 5});
    Rng rng2(8);
    const Tensor vals = Tensor::randn({1, 1, 5, 5}, rng2);
    std::memcpy(probe.data<float>() + 6 * 25, vals.data<float>(), 25 * sizeof(float));
    const Tensor out = blk.forward(probe, false);
    CHECK(bit_equal(out, probe));  // pass-through channel survives, rest stays zero

    Tensor probe2 = Tensor::zeros({1, 8, 5, 5});
    std::memcpy(probe2.data<float>() + 1 * 25, vals.data<float>(), 25 * sizeof(float));
    const Tensor out2 = blk.forward(probe2, false);
    const auto o = to_vector<float>(out2);
    double convolved = 0.0, passed = 0.0;
    for (std::int64_t ch = 0; ch < 8; ++ch)
        for (std::int64_t p = 0; p < 25; ++p) {
            const double v = std::abs(o[static_cast<std::size_t>(ch * 25 + p)]);
            if (ch < 4)
                convolved = std::max(convolved, v);
            else
                passed = std::max(passed, v);
        }
    CHECK(convolved > 0.0);   // the convolved zone reacts to a channel-1 probe
    CHECK(passed == 0.0);     // the pass-through zone cannot
}

TEST_CASE("prompt block matches a straight-line layer-by-layer oracle") {
    Rng rng(11);
    PromptBlock blk(2, 1, 0.5, {3, 5}, rng, DType::f64);
    REQUIRE(blk.bottleneck() == 2);
    REQUIRE(blk.partial_channels() == 1);
    fill_randn(blk.up.weight, rng);
    fill_randn(blk.up.bias, rng);
    fill_randn(blk.down.bias, rng);
    for (auto& unit : blk.scales) {
        fill_randn(unit.partial.bias, rng);
        fill_randn(unit.pointwise.bias, rng);
    }
    const Tensor x = Tensor::randn({1, 2, 4, 4}, rng, DType::f64);
    const Tensor y = blk.forward(x, false);
    const auto ref = block_oracle(blk, to_vector<double>(x), 1, 4, 4);
    const auto got = to_vector<double>(y);
    REQUIRE(got.size() == ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(got[i] - ref[i]) < 1e-12);
}

TEST_CASE("r2 = 1 degenerates the partial convolution to a full one") {
    Rng rng(13);
    PromptBlock blk(3, 1, 1.0, {3}, rng, DType::f64);
    CHECK(blk.partial_channels() == blk.bottleneck());
    CHECK(blk.param_count() == PromptBlock::expected_params(3, 1, 1.0, {3}));
    fill_randn(blk.up.weight, rng);
    const Tensor x = Tensor::randn({2, 3, 4, 4}, rng, DType::f64);
    const auto ref = block_oracle(blk, to_vector<double>(x), 2, 4, 4);
    const auto got = to_vector<double>(blk.forward(x, false));
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(got[i] - ref[i]) < 1e-12);
}

TEST_CASE("prompt block parameter names are stable") {
    Rng rng(17);
    PromptBlock blk(8, 2, 0.5, {3, 5, 7}, rng);
    std::vector<nn::NamedTensor> ps;
    blk.params("p.", ps);
    const std::vector<std::string> expect{
        "p.down.weight",           "p.down.bias",
        "p.scale1.partial.weight", "p.scale1.partial.bias",
        "p.scale1.pointwise.weight", "p.scale1.pointwise.bias",
        "p.scale2.partial.weight", "p.scale2.partial.bias",
        "p.scale2.pointwise.weight", "p.scale2.pointwise.bias",
        "p.scale3.partial.weight", "p.scale3.partial.bias",
        "p.scale3.pointwise.weight", "p.scale3.pointwise.bias",
        "p.up.weight",             "p.up.bias"};
    REQUIRE(ps.size() == expect.size());
    for (std::size_t i = 0; i < expect.size(); ++i) CHECK(ps[i].name == expect[i]);
}

TEST_CASE("prompt block rejects bad geometry") {
    Rng rng(19);
    CHECK_THROWS_WITH_AS(PromptBlock(8, 0, 0.5, {3}, rng), "prompt block: r1 must be >= 1",
                         Error);
    CHECK_THROWS_WITH_AS(PromptBlock(8, 1, 0.0, {3}, rng),
                         "prompt block: r2 must be in (0, 1]", Error);
    CHECK_THROWS_WITH_AS(PromptBlock(8, 1, 1.5, {3}, rng),
                         "prompt block: r2 must be in (0, 1]", Error);
    CHECK_THROWS_WITH_AS(PromptBlock(8, 1, 0.5, {}, rng),
                         "prompt block: kernel list must not be empty", Error);
    CHECK_THROWS_WITH_AS(PromptBlock(8, 1, 0.5, {4}, rng),
                         "prompt block: kernel sizes must be odd and positive", Error);
    CHECK_THROWS_WITH_AS(PromptBlock(2, 4, 0.49, {3}, rng),
                         "prompt block: too few channels for partial convolution", Error);
    PromptBlock blk(8, 2, 0.5, {3}, rng);
    CHECK_THROWS_AS(blk.forward(Tensor::randn({1, 4, 5, 5}, rng), false), Error);
    CHECK_THROWS_AS(blk.forward(Tensor::randn({8, 5, 5}, rng), false), Error);
}

TEST_CASE("fusion block starts as the identity and matches a conv oracle") {
    Rng rng(23);
    FusionBlock fb(4, 1, rng);
    const Tensor zero = Tensor::zeros({2, 4, 3, 3});
    Rng rngx(24);
    const Tensor xr = Tensor::randn({2, 4, 3, 3}, rngx);
    CHECK(bit_equal(fb.fuse(xr, zero, false), xr));
    const Tensor p = Tensor::randn({2, 4, 3, 3}, rngx);
    CHECK(bit_equal(fb.fuse(xr, p, false), add(xr, p)));

    FusionBlock chained(4, 2, rng);
    CHECK(chained.param_count() == 2 * (4 * 4 + 4));
    CHECK(bit_equal(chained.fuse(xr, zero, false), xr));

    FusionBlock trained(3, 1, rng, DType::f64);
    fill_randn(trained.convs[0].weight, rng);
    fill_randn(trained.convs[0].bias, rng);
    const Tensor a = Tensor::randn({1, 3, 4, 4}, rng, DType::f64);
    const Tensor b = Tensor::randn({1, 3, 4, 4}, rng, DType::f64);
    const auto mixed = to_vector<double>(add(a, b));
    const auto ref = conv_ref<double>(mixed, 1, 3, 4, 4, to_vector<double>(trained.convs[0].weight),
                                      3, 1, to_vector<double>(trained.convs[0].bias), 1, 0);
    const auto got = to_vector<double>(trained.fuse(a, b, false));
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(got[i] - ref[i]) < 1e-12);

    CHECK_THROWS_WITH_AS(trained.fuse(a, Tensor::randn({1, 3, 2, 2}, rng, DType::f64), false),
                         "fusion block: feature and prompt shapes differ", Error);
    CHECK_THROWS_AS(trained.forward(Tensor::randn({1, 4, 2, 2}, rng, DType::f64), false), Error);
    CHECK_THROWS_WITH_AS(FusionBlock(4, 0, rng), "fusion block: needs at least one conv", Error);
}

TEST_CASE("dual-forward teacher reproduces the frozen path bit-exactly at start") {
    models::StagedModel teacher = models::build("tiny-resnet-T", 10, 41);
    Rng rng(42);
    // Move the running statistics off their defaults first.
    for (int i = 0; i < 2; ++i) (void)teacher.forward(Tensor::randn({4, 3, 16, 16}, rng), true);

    DualForwardTeacher dual(std::move(teacher), PromptConfig{}, 43);
    for (int trial = 0; trial < 10; ++trial) {
        const Tensor x = Tensor::randn({2, 3, 16, 16}, rng);
        DualOutput out = dual.dual_forward(x);
        CHECK(bit_equal(out.logits_p, out.logits_t));
        REQUIRE(out.feats_t.size() == 3);
        REQUIRE(out.feats_p.size() == 3);
        for (std::size_t s = 0; s < 3; ++s) CHECK(bit_equal(out.feats_p[s], out.feats_t[s]));
    }
    // Recording on a tape must not change the arithmetic.
    Tape tape;
    const Tensor x = Tensor::randn({2, 3, 16, 16}, rng);
    DualOutput out = dual.dual_forward(x);
    CHECK(bit_equal(out.logits_p, out.logits_t));
    CHECK(tape.size() > 0);
}

TEST_CASE("fresh head start is available behind the copy flag") {
    models::StagedModel teacher = models::build("tiny-resnet-T", 10, 41);
    PromptConfig cfg;
    cfg.copy_head = false;
    DualForwardTeacher dual(std::move(teacher), cfg, 44);
    Rng rng(45);
    const Tensor x = Tensor::randn({2, 3, 16, 16}, rng);
    DualOutput out = dual.dual_forward(x);
    REQUIRE(out.feats_p.size() == 3);
    for (std::size_t s = 0; s < 3; ++s) CHECK(bit_equal(out.feats_p[s], out.feats_t[s]));
    CHECK_FALSE(bit_equal(out.logits_p, out.logits_t));
}

TEST_CASE("frozen path is invariant under prompt-side updates") {
    models::StagedModel teacher = models::build("tiny-resnet-T", 10, 47);
    DualForwardTeacher dual(std::move(teacher), PromptConfig{}, 48);
    const auto theta_before = snapshot(dual.teacher().named_state());

    Rng rng(49);
    const Tensor probe = Tensor::randn({2, 3, 16, 16}, rng);
    const Tensor logits_before = dual.dual_forward(probe).logits_t.clone();

    for (int step = 0; step < 3; ++step) {
        Tape tape;
        const Tensor x = Tensor::randn({4, 3, 16, 16}, rng);
        DualOutput out = dual.dual_forward(x);
        const Tensor loss = cross_entropy(out.logits_p, {0, 1, 2, 3});
        tape.backward(loss);
        sgd_apply(dual.phi_params(), 0.05);
    }

    DualOutput after = dual.dual_forward(probe);
    CHECK(bit_equal(after.logits_t, logits_before));
    CHECK(states_bit_equal(snapshot(dual.teacher().named_state()), theta_before));
    CHECK_FALSE(bit_equal(after.logits_p, logits_before));  // the trained path moved
}

TEST_CASE("nonzero prompts change the downstream stage inputs") {
    models::StagedModel teacher = models::build("tiny-resnet-T", 10, 51);
    DualForwardTeacher dual(std::move(teacher), PromptConfig{}, 52);
    Rng rng(53);
    fill_randn(dual.prompts[0][0]->up.weight, rng, 0.1);

    const Tensor x = Tensor::randn({2, 3, 16, 16}, rng);
    DualOutput out = dual.dual_forward(x);
    CHECK_FALSE(bit_equal(out.feats_p[0], out.feats_t[0]));  // stage-2 input now differs
    CHECK_FALSE(bit_equal(out.feats_p[1], out.feats_t[1]));
    CHECK_FALSE(bit_equal(out.logits_p, out.logits_t));
    CHECK(max_abs_diff(out.feats_p[0], out.feats_t[0]) > 0.0);
}

TEST_CASE("parameter groups form a disjoint, exhaustive partition") {
    models::StagedModel teacher = models::build("tiny-resnet-T", 10, 57);
    const std::int64_t theta_elems = teacher.param_count();
    const std::size_t theta_tensors = teacher.named_params().size();
    DualForwardTeacher dual(std::move(teacher), PromptConfig{}, 58);

    nn::ParamRegistry reg;
    dual.register_params(reg);

    std::size_t theta_seen = 0, phi_seen = 0;
    for (const auto& e : reg.entries()) {
        if (e.group == nn::Group::theta) ++theta_seen;
        if (e.group == nn::Group::phi) ++phi_seen;
    }
    CHECK(theta_seen == theta_tensors);
    CHECK(theta_seen + phi_seen == reg.entries().size());
    CHECK(phi_seen == dual.phi_params().size());
    CHECK(reg.count(nn::Group::theta) == theta_elems);

    // Element totals from the closed forms: widths 32/64/128, r1 = 4,
    // r2 = 0.5, kernels 3/5/7, one fusion conv per stage, 10-way head.
    std::int64_t phi_expect = 0;
    for (const std::int64_t c : {32, 64, 128})
        phi_expect += PromptBlock::expected_params(c, 4, 0.5, {3, 5, 7}) + c * c + c;
    phi_expect += 128 * 10 + 10;
    CHECK(reg.count(nn::Group::phi) == phi_expect);

    CHECK(reg.find("prompt1.0.down.weight").group == nn::Group::phi);
    CHECK(reg.find("prompt3.0.up.bias").group == nn::Group::phi);
    CHECK(reg.find("fusion2.0.weight").group == nn::Group::phi);
    CHECK(reg.find("head_phi.1.weight").group == nn::Group::phi);
    CHECK(reg.find("teacher.stage1.0.weight").group == nn::Group::theta);
    CHECK(reg.find("teacher.head.1.bias").group == nn::Group::theta);
}

TEST_CASE("every prompt-side tensor is reached by gradients through the frozen stages") {
    models::StagedModel teacher = models::build("tiny-resnet-T", 10, 61);
    DualForwardTeacher dual(std::move(teacher), PromptConfig{}, 62);
    Rng rng(63);
    // At the zero-initialised start the up conv blocks gradient flow into the
    // inner convs (their gradient is exactly zero); move to a generic point.
    for (auto& stage : dual.prompts)
        for (auto& blk : stage) {
            fill_randn(blk->up.weight, rng, 0.05);
            fill_randn(blk->up.bias, rng, 0.05);
        }

    Tape tape;
    const Tensor x = Tensor::randn({4, 3, 16, 16}, rng);
    DualOutput out = dual.dual_forward(x, GradFlow::through_frozen);
    const Tensor loss = cross_entropy(out.logits_p, {0, 1, 2, 3});
    tape.backward(loss);

    for (const auto& p : dual.phi_params()) {
        INFO(p.name);
        REQUIRE(p.tensor.has_grad());
        double mx = 0.0;
        const Tensor g = p.tensor.grad();
        for (std::int64_t i = 0; i < g.numel(); ++i)
            mx = std::max(mx, std::abs(static_cast<double>(g.data<float>()[i])));
        CHECK(mx > 0.0);
    }
    // The frozen side stores no gradients at all.
    for (const auto& p : dual.teacher().named_params()) {
        INFO(p.name);
        CHECK_FALSE(p.tensor.has_grad());
    }
}

TEST_CASE("detached-base flow trains only the last insertion and the auxiliary head") {
    models::StagedModel teacher = models::build("tiny-resnet-T", 10, 67);
    DualForwardTeacher dual(std::move(teacher), PromptConfig{}, 68);
    Rng rng(69);
    for (auto& stage : dual.prompts)
        for (auto& blk : stage) {
            fill_randn(blk->up.weight, rng, 0.05);
            fill_randn(blk->up.bias, rng, 0.05);
        }

    Tape tape;
    const Tensor x = Tensor::randn({4, 3, 16, 16}, rng);
    DualOutput out = dual.dual_forward(x, GradFlow::detached_base);
    tape.backward(cross_entropy(out.logits_p, {0, 1, 2, 3}));

    for (const auto& p : dual.phi_params()) {
        INFO(p.name);
        const bool last = p.name.rfind("prompt3.", 0) == 0 || p.name.rfind("fusion3.", 0) == 0 ||
                          p.name.rfind("head_phi.", 0) == 0;
        if (last) {
            REQUIRE(p.tensor.has_grad());
            double mx = 0.0;
            const Tensor g = p.tensor.grad();
            for (std::int64_t i = 0; i < g.numel(); ++i)
                mx = std::max(mx, std::abs(static_cast<double>(g.data<float>()[i])));
            CHECK(mx > 0.0);
        } else {
            CHECK_FALSE(p.tensor.has_grad());  // the cut boundary blocks earlier insertions
        }
    }
}

TEST_CASE("insertion-position and capacity knobs reshape the path") {
    models::StagedModel teacher = models::build("tiny-resnet-T", 10, 71);
    PromptConfig cfg;
    cfg.insert_stages = {2};
    cfg.blocks_per_stage = 2;
    DualForwardTeacher dual(std::move(teacher), cfg, 72);

    CHECK_FALSE(dual.stage_selected(1));
    CHECK(dual.stage_selected(2));
    CHECK_FALSE(dual.stage_selected(3));
    CHECK(dual.prompts[0].empty());
    CHECK(dual.prompts[1].size() == 2);
    CHECK(dual.fusions[0] == nullptr);
    CHECK(dual.fusions[1] != nullptr);

    Rng rng(73);
    const Tensor x = Tensor::randn({2, 3, 16, 16}, rng);
    DualOutput out = dual.dual_forward(x);
    CHECK(bit_equal(out.logits_p, out.logits_t));  // identity start independent of placement

    nn::ParamRegistry reg;
    dual.register_params(reg);
    CHECK(reg.find("prompt2.0.down.weight").group == nn::Group::phi);
    CHECK(reg.find("prompt2.1.down.weight").group == nn::Group::phi);
    CHECK_THROWS_AS(reg.find("prompt1.0.down.weight"), Error);

    // Both sibling blocks feed the summed prompt.
    fill_randn(dual.prompts[1][1]->up.weight, rng, 0.1);
    DualOutput moved = dual.dual_forward(x);
    CHECK_FALSE(bit_equal(moved.logits_p, moved.logits_t));
}

TEST_CASE("fusion can be disabled so the prompt adds straight onto the feature") {
    models::StagedModel teacher = models::build("tiny-resnet-T", 10, 77);
    PromptConfig cfg;
    cfg.use_fusion = false;
    DualForwardTeacher dual(std::move(teacher), cfg, 78);
    for (const auto& f : dual.fusions) CHECK(f == nullptr);

    Rng rng(79);
    const Tensor x = Tensor::randn({2, 3, 16, 16}, rng);
    DualOutput out = dual.dual_forward(x);
    CHECK(bit_equal(out.logits_p, out.logits_t));  // zero prompts + plain addition

    fill_randn(dual.prompts[0][0]->up.weight, rng, 0.1);
    DualOutput moved = dual.dual_forward(x);
    const Tensor prompt = dual.prompts[0][0]->forward(moved.feats_t[0], false);
    CHECK(bit_equal(moved.feats_p[0], add(moved.feats_t[0], prompt)));
}

TEST_CASE("prompt-path configuration errors are rejected") {
    PromptConfig bad;
    bad.r1 = {4, 4};
    CHECK_THROWS_WITH_AS(
        DualForwardTeacher(models::build("tiny-resnet-T", 10, 81), bad, 82),
        "prompt config: r1 needs 1 or 3 entries", Error);

    PromptConfig range;
    range.insert_stages = {4};
    CHECK_THROWS_WITH_AS(
        DualForwardTeacher(models::build("tiny-resnet-T", 10, 81), range, 82),
        "prompt config: insert stage 4 out of range 1..3", Error);

    PromptConfig dup;
    dup.insert_stages = {2, 2};
    CHECK_THROWS_WITH_AS(
        DualForwardTeacher(models::build("tiny-resnet-T", 10, 81), dup, 82),
        "prompt config: duplicate insert stage 2", Error);

    PromptConfig zero_blocks;
    zero_blocks.blocks_per_stage = 0;
    CHECK_THROWS_WITH_AS(
        DualForwardTeacher(models::build("tiny-resnet-T", 10, 81), zero_blocks, 82),
        "prompt config: blocks_per_stage must be >= 1", Error);

    PromptConfig zero_fusion;
    zero_fusion.fusion_convs = 0;
    CHECK_THROWS_WITH_AS(
        DualForwardTeacher(models::build("tiny-resnet-T", 10, 81), zero_fusion, 82),
        "prompt config: fusion_convs must be >= 1", Error);
}

TEST_CASE("prompt-path checkpoints round-trip and refuse mismatched targets") {
    const std::string path = temp_file("dfpt_prompt_path_test.ckpt");
    const std::string model_path = temp_file("dfpt_prompt_model_test.ckpt");

    DualForwardTeacher a(models::build("tiny-resnet-T", 10, 83), PromptConfig{}, 84);
    Rng rng(85);
    for (auto& stage : a.prompts)
        for (auto& blk : stage) {
            fill_randn(blk->up.weight, rng, 0.1);
            fill_randn(blk->up.bias, rng, 0.1);
        }
    fill_randn(a.fusions[1]->convs[0].weight, rng, 0.1);
    save_prompt_path(a, path, {{"prompt_top1", 0.5}}, {{"note", "unit-test"}});

    // Same frozen model, different prompt-side initialisation.
    DualForwardTeacher b(models::build("tiny-resnet-T", 10, 83), PromptConfig{}, 99);
    Rng rngx(86);
    const Tensor x = Tensor::randn({2, 3, 16, 16}, rngx);
    CHECK_FALSE(bit_equal(b.dual_forward(x).logits_p, a.dual_forward(x).logits_p));
    load_prompt_path_into(b, path);
    CHECK(states_bit_equal(b.phi_params(), a.phi_params()));
    CHECK(bit_equal(b.dual_forward(x).logits_p, a.dual_forward(x).logits_p));

    const CheckpointData raw = load_checkpoint(path);
    CHECK(raw.arch == "tiny-resnet-T");
    CHECK(raw.seed == 84);
    REQUIRE(raw.find_extra("kind") != nullptr);
    CHECK(*raw.find_extra("kind") == "prompt-path");
    CHECK(*raw.find_extra("note") == "unit-test");

    // A plain model checkpoint is not a prompt path.
    const models::StagedModel plain = models::build("tiny-resnet-T", 10, 83);
    save_model(plain, model_path);
    CHECK_THROWS_AS(load_prompt_path_into(b, model_path), Error);

    // Wrong frozen arch.
    DualForwardTeacher other(models::build("tiny-vgg-S", 10, 87), PromptConfig{}, 88);
    CHECK_THROWS_AS(load_prompt_path_into(other, path), Error);

    // Same arch, different prompt geometry: shapes cannot line up.
    PromptConfig narrow;
    narrow.r1 = {2};
    DualForwardTeacher c(models::build("tiny-resnet-T", 10, 83), narrow, 89);
    CHECK_THROWS_AS(load_prompt_path_into(c, path), Error);

    std::filesystem::remove(path);
    std::filesystem::remove(model_path);
}
