#pragma once
// Adam optimizer, seeded initializers, and the finite-difference gradient
// checker used throughout the test suites.

#include "tkgr/tensor.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace tkgr::num {

// Named trainable parameters. Ordered so that checkpoints and optimizer
// traversal are deterministic.
using ParamStore = std::map<std::string, Tensor>;

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

class AdamState {
public:
    explicit AdamState(AdamConfig cfg = {}) : cfg_(cfg) {}

    const AdamConfig& config() const { return cfg_; }
    std::int64_t step_count() const { return step_; }

    // One bias-corrected update over every parameter that has a gradient
    // buffer. Gradients are left untouched; call zero_grads() afterwards.
    void step(ParamStore& params);

    void zero_grads(ParamStore& params);

private:
    struct Moments {
        std::vector<double> m, v;
    };
    AdamConfig cfg_;
    std::int64_t step_ = 0;
    std::map<std::string, Moments> moments_;
};

// Seeded initializers.
Tensor uniform_init(Shape shape, double lo, double hi, std::mt19937_64& rng);
Tensor xavier_init(Shape shape, std::mt19937_64& rng);

struct GradCheckOptions {
    double step = 1e-3;
    // Coordinates whose analytic gradient is exactly zero are skipped; a
    // finite difference straddling a relu kink reports junk there.
    bool skip_zero_grad = true;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    std::size_t checked = 0;
};

// Compares reverse-mode gradients of `loss_fn` against central differences
// over every coordinate of `params`. `loss_fn` must be pure given the
// current parameter values.
GradCheckResult grad_check(const std::function<Tensor()>& loss_fn, ParamStore& params,
                           GradCheckOptions opts = {});

}  // namespace tkgr::num
