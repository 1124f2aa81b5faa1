#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <memory>
#include <vector>

#include "dfpt/autograd.hpp"
#include "dfpt/nn.hpp"
#include "dfpt/tensor.hpp"
#include "test_util.hpp"

using namespace dfpt;
using namespace dfpt::nn;
using testutil::bit_equal;
using testutil::max_abs_diff;
using testutil::to_vector;

using testutil::conv_ref;

namespace {

Tensor rand_t(Shape s, Rng& rng, DType dt) { return Tensor::randn(std::move(s), rng, dt); }

}  // namespace

TEST_CASE("conv2d matches the direct six-loop reference") {
    struct Cfg {
        std::int64_t N, Ci, H, W, Co, k, s, p;
        bool bias;
    };
    const Cfg cfgs[] = {
        {2, 3, 5, 5, 4, 3, 1, 1, true},  {1, 1, 4, 4, 1, 1, 1, 0, false},
        {2, 3, 6, 6, 5, 1, 1, 0, true},  {2, 4, 7, 7, 3, 3, 2, 1, true},
        {1, 2, 9, 9, 4, 5, 1, 2, false}, {1, 3, 8, 8, 2, 7, 2, 3, true},
        {2, 2, 5, 7, 3, 3, 1, 0, true},
    };
    Rng rng(11);
    for (const auto& c : cfgs) {
        CAPTURE(c.k);
        CAPTURE(c.s);
        for (DType dt : {DType::f32, DType::f64}) {
            Tensor x = rand_t({c.N, c.Ci, c.H, c.W}, rng, dt);
            Tensor w = rand_t({c.Co, c.Ci, c.k, c.k}, rng, dt);
            Tensor b = c.bias ? rand_t({c.Co}, rng, dt) : Tensor();
            Tensor y = conv2d(x, w, b, c.s, c.p);
            const std::int64_t oh = (c.H + 2 * c.p - c.k) / c.s + 1;
            const std::int64_t ow = (c.W + 2 * c.p - c.k) / c.s + 1;
            REQUIRE(y.shape() == Shape{c.N, c.Co, oh, ow});
            if (dt == DType::f32) {
                auto ref = conv_ref<float>(to_vector<float>(x), c.N, c.Ci, c.H, c.W,
                                           to_vector<float>(w), c.Co, c.k,
                                           c.bias ? to_vector<float>(b) : std::vector<float>{},
                                           c.s, c.p);
                Tensor rt = Tensor::from_f32(y.shape(), ref);
                CHECK(max_abs_diff(y, rt) < 2e-5);
            } else {
                auto ref = conv_ref<double>(to_vector<double>(x), c.N, c.Ci, c.H, c.W,
                                            to_vector<double>(w), c.Co, c.k,
                                            c.bias ? to_vector<double>(b) : std::vector<double>{},
                                            c.s, c.p);
                Tensor rt = Tensor::from_f64(y.shape(), ref);
                CHECK(max_abs_diff(y, rt) < 1e-12);
            }
        }
    }
}

TEST_CASE("conv2d rejects inconsistent geometry") {
    Rng rng(1);
    Tensor x = rand_t({1, 3, 4, 4}, rng, DType::f32);
    Tensor w = rand_t({2, 4, 3, 3}, rng, DType::f32);  // channel mismatch
    CHECK_THROWS_AS(conv2d(x, w, Tensor(), 1, 1), Error);
    Tensor w2 = rand_t({2, 3, 9, 9}, rng, DType::f32);  // kernel larger than padded input
    CHECK_THROWS_AS(conv2d(x, w2, Tensor(), 1, 1), Error);
    Tensor w3 = rand_t({2, 3, 3, 3}, rng, DType::f32);
    Tensor bad_b = rand_t({3}, rng, DType::f32);
    CHECK_THROWS_AS(conv2d(x, w3, bad_b, 1, 1), Error);
}

TEST_CASE("conv2d gradients match central differences") {
    Rng rng(5);
    struct Cfg {
        std::int64_t N, Ci, H, W, Co, k, s, p;
    };
    const Cfg cfgs[] = {
        {2, 3, 4, 4, 4, 3, 1, 1},
        {2, 3, 5, 5, 2, 3, 2, 1},
        {2, 3, 4, 4, 5, 1, 1, 0},  // 1x1 fast path
    };
    for (const auto& c : cfgs) {
        CAPTURE(c.k);
        Tensor x = rand_t({c.N, c.Ci, c.H, c.W}, rng, DType::f64);
        Tensor w = rand_t({c.Co, c.Ci, c.k, c.k}, rng, DType::f64);
        Tensor b = rand_t({c.Co}, rng, DType::f64);
        auto loss_of = [](const Tensor& y) { return reduce_sum(mul(y, y), {}, false); };
        CHECK(check_gradients(
                  [&](const Tensor& t) { return loss_of(conv2d(t, w, b, c.s, c.p)); }, x) < 1e-6);
        CHECK(check_gradients(
                  [&](const Tensor& t) { return loss_of(conv2d(x, t, b, c.s, c.p)); }, w) < 1e-6);
        CHECK(check_gradients(
                  [&](const Tensor& t) { return loss_of(conv2d(x, w, t, c.s, c.p)); }, b) < 1e-6);
    }
}

TEST_CASE("frozen conv weights pass gradient through without storing one") {
    Rng rng(9);
    Tensor x = rand_t({2, 3, 4, 4}, rng, DType::f64);
    Tensor w = rand_t({4, 3, 3, 3}, rng, DType::f64);

    Tensor xa = x.clone().set_requires_grad(true);
    Tensor wa = w.clone().set_requires_grad(true);
    {
        Tape tape;
        tape.backward(reduce_sum(mul(conv2d(xa, wa, Tensor(), 1, 1),
                                     conv2d(xa, wa, Tensor(), 1, 1)),
                                 {}, false));
    }
    REQUIRE(xa.has_grad());
    REQUIRE(wa.has_grad());

    Tensor xb = x.clone().set_requires_grad(true);
    Tensor wb = w.clone();  // frozen leaf
    {
        Tape tape;
        tape.backward(reduce_sum(mul(conv2d(xb, wb, Tensor(), 1, 1),
                                     conv2d(xb, wb, Tensor(), 1, 1)),
                                 {}, false));
    }
    CHECK_FALSE(wb.has_grad());
    CHECK(bit_equal(xa.grad(), xb.grad()));
}

TEST_CASE("linear matches a hand computation and differentiates") {
    Tensor x = Tensor::from_f64({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor w = Tensor::from_f64({2, 3}, {1, 0, -1, 2, 1, 0});
    Tensor b = Tensor::from_f64({2}, {0.5, -0.5});
    Tensor y = linear(x, w, b);
    CHECK(to_vector<double>(y) == std::vector<double>{-1.5, 3.5, -1.5, 12.5});

    Rng rng(3);
    Tensor xr = rand_t({3, 4}, rng, DType::f64);
    Tensor wr = rand_t({5, 4}, rng, DType::f64);
    Tensor br = rand_t({5}, rng, DType::f64);
    auto loss_of = [](const Tensor& t) { return reduce_sum(mul(t, t), {}, false); };
    CHECK(check_gradients([&](const Tensor& t) { return loss_of(linear(t, wr, br)); }, xr) < 1e-7);
    CHECK(check_gradients([&](const Tensor& t) { return loss_of(linear(xr, t, br)); }, wr) < 1e-7);
    CHECK(check_gradients([&](const Tensor& t) { return loss_of(linear(xr, wr, t)); }, br) < 1e-7);
}

TEST_CASE("global average pooling averages each channel map") {
    Tensor x = Tensor::from_f64({1, 2, 2, 2}, {1, 2, 3, 4, 10, 20, 30, 40});
    Tensor y = global_avg_pool(x);
    REQUIRE(y.shape() == Shape{1, 2});
    CHECK(to_vector<double>(y) == std::vector<double>{2.5, 25.0});

    Rng rng(4);
    Tensor xr = rand_t({2, 3, 3, 3}, rng, DType::f64);
    CHECK(check_gradients(
              [](const Tensor& t) { return reduce_sum(mul(global_avg_pool(t), global_avg_pool(t)), {}, false); },
              xr) < 1e-7);
}

TEST_CASE("batch-norm training normalizes and tracks running statistics") {
    Rng rng(21);
    const std::int64_t N = 4, C = 3, H = 2, W = 2;
    Tensor x = rand_t({N, C, H, W}, rng, DType::f64);
    Tensor gamma = Tensor::from_f64({C}, {1.5, 0.5, 2.0});
    Tensor beta = Tensor::from_f64({C}, {0.1, -0.2, 0.0});
    Tensor rm = Tensor::zeros({C}, DType::f64);
    Tensor rv = Tensor::full({C}, 1.0, DType::f64);

    Tensor y = batchnorm2d(x, gamma, beta, rm, rv, true);

    const auto xs = to_vector<double>(x);
    const std::int64_t M = N * H * W;
    for (std::int64_t c = 0; c < C; ++c) {
        double mean = 0, var = 0;
        for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t i = 0; i < H * W; ++i) mean += xs[(n * C + c) * H * W + i];
        mean /= static_cast<double>(M);
        for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t i = 0; i < H * W; ++i) {
                const double d = xs[(n * C + c) * H * W + i] - mean;
                var += d * d;
            }
        const double biased = var / static_cast<double>(M);
        const double unbiased = var / static_cast<double>(M - 1);
        CHECK(rm.at({c}) == doctest::Approx(0.1 * mean).epsilon(1e-12));
        CHECK(rv.at({c}) == doctest::Approx(0.9 + 0.1 * unbiased).epsilon(1e-12));

        const double g = gamma.at({c}), be = beta.at({c});
        for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t i = 0; i < H * W; ++i) {
                const double xn =
                    (xs[(n * C + c) * H * W + i] - mean) / std::sqrt(biased + 1e-5);
                std::int64_t hh = i / W, ww = i % W;
                CHECK(y.at({n, c, hh, ww}) == doctest::Approx(g * xn + be).epsilon(1e-10));
            }
    }

    // Eval mode reads the (now updated) running stats and leaves them alone.
    Tensor rm_before = rm.clone(), rv_before = rv.clone();
    Tensor ye = batchnorm2d(x, gamma, beta, rm, rv, false);
    CHECK(bit_equal(rm, rm_before));
    CHECK(bit_equal(rv, rv_before));
    const double xn0 = (x.at({0, 0, 0, 0}) - rm.at({0})) / std::sqrt(rv.at({0}) + 1e-5);
    CHECK(ye.at({0, 0, 0, 0}) == doctest::Approx(1.5 * xn0 + 0.1).epsilon(1e-10));

    // Normalization needs at least two samples per channel.
    Tensor tiny = rand_t({1, C, 1, 1}, rng, DType::f64);
    CHECK_THROWS_AS(batchnorm2d(tiny, gamma, beta, rm, rv, true), Error);
}

TEST_CASE("batch-norm gradients match central differences") {
    Rng rng(22);
    Tensor x = rand_t({3, 2, 2, 2}, rng, DType::f64);
    Tensor gamma = Tensor::from_f64({2}, {1.2, 0.7});
    Tensor beta = Tensor::from_f64({2}, {0.3, -0.1});
    // Per-element weights break the normalization symmetry: an unweighted
    // sum of squares is nearly invariant to x in training mode (the output
    // mean and variance are pinned), which would leave nothing to check.
    Tensor r = rand_t({3, 2, 2, 2}, rng, DType::f64);
    auto loss_of = [&](const Tensor& y) { return reduce_sum(mul(mul(y, y), r), {}, false); };

    for (bool training : {true, false}) {
        CAPTURE(training);
        auto run = [&](const Tensor& xx, const Tensor& gg, const Tensor& bb) {
            Tensor rm = Tensor::from_f64({2}, {0.05, -0.02});
            Tensor rv = Tensor::from_f64({2}, {1.1, 0.9});
            return loss_of(batchnorm2d(xx, gg, bb, rm, rv, training));
        };
        CHECK(check_gradients([&](const Tensor& t) { return run(t, gamma, beta); }, x) < 1e-6);
        CHECK(check_gradients([&](const Tensor& t) { return run(x, t, beta); }, gamma) < 1e-6);
        CHECK(check_gradients([&](const Tensor& t) { return run(x, gamma, t); }, beta) < 1e-6);
    }
}

TEST_CASE("modules expose named parameters in declaration order") {
    Rng rng(31);
    BasicBlock blk(8, 16, 2, rng, DType::f32);
    std::vector<NamedTensor> ps;
    blk.params("blk.", ps);
    std::vector<std::string> names;
    for (auto& p : ps) names.push_back(p.name);
    CHECK(names == std::vector<std::string>{
                       "blk.conv1.weight", "blk.bn1.gamma", "blk.bn1.beta", "blk.conv2.weight",
                       "blk.bn2.gamma", "blk.bn2.beta", "blk.down_conv.weight",
                       "blk.down_bn.gamma", "blk.down_bn.beta"});

    std::vector<NamedTensor> bufs;
    blk.buffers("blk.", bufs);
    CHECK(bufs.size() == 6);
    CHECK(bufs[0].name == "blk.bn1.running_mean");

    // 3x3 convs without bias plus the strided 1x1 skip and three bn pairs.
    const std::int64_t expect = 16 * 8 * 9 + 16 * 16 * 9 + 16 * 8 * 1 + 3 * (16 + 16);
    CHECK(blk.param_count() == expect);

    // Identity-skip block has no downsample branch.
    BasicBlock same(16, 16, 1, rng, DType::f32);
    CHECK(same.down_conv == nullptr);
    CHECK(same.param_count() == 16 * 16 * 9 * 2 + 2 * (16 + 16));
}

TEST_CASE("kaiming initialisation has the declared spread") {
    Rng rng(41);
    Conv2d conv(32, 64, 3, 1, 1, false, rng, DType::f32);
    const auto w = to_vector<float>(conv.weight);
    double mean = 0;
    for (float v : w) mean += v;
    mean /= static_cast<double>(w.size());
    double var = 0;
    for (float v : w) var += (v - mean) * (v - mean);
    var /= static_cast<double>(w.size() - 1);
    const double want = std::sqrt(2.0 / (32.0 * 9.0));  // 0.08333
    CHECK(std::abs(mean) < 0.002);
    CHECK(std::sqrt(var) == doctest::Approx(want).epsilon(0.03));
}

TEST_CASE("identity 1x1 convolution reproduces its input bit for bit") {
    Rng rng(51);
    for (DType dt : {DType::f32, DType::f64}) {
        Conv2d conv(6, 6, 1, 1, 0, true, rng, dt);
        identity_init_1x1(conv);
        Tensor x = rand_t({2, 6, 5, 5}, rng, dt);
        Tensor y = conv.forward(x, false);
        CHECK(bit_equal(x, y));
    }
    Conv2d bad(4, 6, 1, 1, 0, false, rng, DType::f32);
    CHECK_THROWS_AS(identity_init_1x1(bad), Error);
}

TEST_CASE("sequential composes children in order") {
    Rng rng(61);
    auto conv = std::make_shared<Conv2d>(3, 4, 3, 1, 1, false, rng, DType::f32);
    auto bn = std::make_shared<BatchNorm2d>(4, DType::f32);
    auto act = std::make_shared<ReLU>();
    Sequential seq;
    seq.add(conv).add(bn).add(act);

    Tensor x = rand_t({2, 3, 6, 6}, rng, DType::f32);
    Tensor want = relu(bn->forward(conv->forward(x, false), false));
    // Rerunning bn in eval mode is idempotent on the running stats.
    Tensor got = seq.forward(x, false);
    CHECK(bit_equal(want, got));

    std::vector<NamedTensor> ps;
    seq.params("", ps);
    REQUIRE(ps.size() == 3);
    CHECK(ps[0].name == "0.weight");
    CHECK(ps[1].name == "1.gamma");
    CHECK(ps[2].name == "1.beta");
}

TEST_CASE("copying state detaches storage from the source") {
    Rng rng(71);
    Linear a(8, 4, rng, DType::f32);
    Rng rng2(72);
    Linear b(8, 4, rng2, DType::f32);
    copy_state(a, b);
    CHECK(bit_equal(a.weight, b.weight));
    CHECK(bit_equal(a.bias, b.bias));
    b.weight.set_at({0, 0}, 99.0);
    CHECK(a.weight.at({0, 0}) != 99.0);

    Rng rng3(73);
    Linear c(8, 5, rng3, DType::f32);
    CHECK_THROWS_WITH_AS(copy_state(a, c), doctest::Contains("mismatch"), Error);
}

TEST_CASE("registry rejects duplicates and filters by group") {
    Rng rng(81);
    Conv2d conv(3, 4, 3, 1, 1, true, rng, DType::f32);
    Linear head(4, 10, rng, DType::f32);

    ParamRegistry reg;
    reg.add_module("backbone.", conv, Group::theta);
    reg.add_module("head.", head, Group::theta);
    reg.add_module("prompt.", head, Group::phi);  // distinct prefix, same tensors is fine
    CHECK_THROWS_WITH_AS(reg.add_module("backbone.", conv, Group::psi),
                         doctest::Contains("duplicate"), Error);

    CHECK(reg.entries().size() == 6);
    CHECK(reg.count(Group::theta) == 4 * 3 * 9 + 4 + 10 * 4 + 10);
    CHECK(reg.count(Group::phi) == 10 * 4 + 10);
    CHECK(reg.count(Group::psi) == 0);
    CHECK(reg.group(Group::phi).size() == 2);
    CHECK(reg.find("head.bias").tensor.numel() == 10);
    CHECK_THROWS_AS(reg.find("nope"), Error);

    reg.set_requires_grad(Group::theta, false);
    CHECK_FALSE(conv.weight.requires_grad());
    CHECK_FALSE(head.weight.requires_grad());  // the phi alias shares the tensor
    reg.set_requires_grad(Group::phi, true);
    CHECK(head.weight.requires_grad());
    CHECK_FALSE(conv.weight.requires_grad());
}

TEST_CASE("basic block output matches its unrolled composition") {
    Rng rng(91);
    BasicBlock blk(4, 8, 2, rng, DType::f32);
    Tensor x = rand_t({2, 4, 6, 6}, rng, DType::f32);
    Tensor got = blk.forward(x, false);

    Tensor h = relu(blk.bn1.forward(blk.conv1.forward(x, false), false));
    h = blk.bn2.forward(blk.conv2.forward(h, false), false);
    Tensor skip = blk.down_bn->forward(blk.down_conv->forward(x, false), false);
    Tensor want = relu(add(h, skip));
    CHECK(bit_equal(got, want));
    REQUIRE(got.shape() == Shape{2, 8, 3, 3});

    // Gradients reach every parameter of the block.
    Tensor xr = rand_t({2, 4, 6, 6}, rng, DType::f32);
    Tape tape;
    Tensor y = blk.forward(xr, true);
    tape.backward(reduce_sum(mul(y, y), {}, false));
    for (const auto& p : blk.named_params()) {
        CAPTURE(p.name);
        CHECK(p.tensor.has_grad());
    }
}
