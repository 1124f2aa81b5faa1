#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "dfpt/tensor.hpp"

namespace dfpt {

struct Node {
    const char* name;
    // Runs with the output gradient already populated; accumulates into the
    // inputs' gradients. Inputs and saved values live in the closure.
    std::function<void()> backward;
    std::shared_ptr<TensorImpl> output;
};

// Reverse-mode tape. Construction activates it for the current thread; ops
// append nodes while any of their inputs needs a gradient. Recording order is
// a topological order, so one reverse sweep visits every node once.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Seeds d(loss)/d(loss) = 1 and sweeps the tape backwards. The loss must
    // be a scalar (numel == 1). Gradients accumulate across calls.
    void backward(const Tensor& loss);

    std::size_t size() const { return nodes_.size(); }

    static Tape* current();
    static std::uint64_t current_id();

private:
    friend void record_node(const char* name, std::initializer_list<Tensor> inputs,
                            const Tensor& output, std::function<void()> fn);
    std::vector<std::unique_ptr<Node>> nodes_;
    std::uint64_t id_;
    Tape* prev_;
};

// Suspends recording for its scope (teacher-side forwards, evaluation).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    Tape* saved_;
};

bool grad_recording();
// True when a backward sweep starting from a loss would propagate into t:
// trainable leaf, or produced by a node of the active tape.
bool needs_grad(const Tensor& t);
void record_node(const char* name, std::initializer_list<Tensor> inputs, const Tensor& output,
                 std::function<void()> fn);
// Accumulates g into t's gradient buffer. Frozen leaves (requires_grad false,
// no producer) are skipped: gradient flows through them but is not stored.
void accumulate_grad(const Tensor& t, const Tensor& g);

// Central-difference gradient check for a scalar-valued function of x.
// Returns the max relative error max(|analytic-numeric| / max(|a|,|n|,1e-8)).
// x must be f64; f32 inputs are rejected.
double check_gradients(const std::function<Tensor(const Tensor&)>& f, Tensor x, double eps = 1e-5);

}  // namespace dfpt
