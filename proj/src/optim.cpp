#include "tkgr/optim.hpp"

#include <cmath>

namespace tkgr::num {

void AdamState::step(ParamStore& params) {
    ++step_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (auto& [name, p] : params) {
        if (!p.requires_grad()) continue;
        auto g = p.grad();
        auto& mom = moments_[name];
        if (mom.m.size() != p.size()) {
            mom.m.assign(p.size(), 0.0);
            mom.v.assign(p.size(), 0.0);
        }
        auto& vals = p.mutable_values();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            mom.m[i] = cfg_.beta1 * mom.m[i] + (1.0 - cfg_.beta1) * g[i];
            mom.v[i] = cfg_.beta2 * mom.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            double m_hat = mom.m[i] / bc1;
            double v_hat = mom.v[i] / bc2;
            vals[i] -= cfg_.learning_rate * m_hat / (std::sqrt(v_hat) + cfg_.epsilon);
        }
    }
}

void AdamState::zero_grads(ParamStore& params) {
    for (auto& [name, p] : params) {
        (void)name;
        if (p.requires_grad()) p.zero_grad();
    }
}

Tensor uniform_init(Shape shape, double lo, double hi, std::mt19937_64& rng) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> data(n);
    for (auto& v : data) v = dist(rng);
    return Tensor::parameter(std::move(shape), std::move(data));
}

Tensor xavier_init(Shape shape, std::mt19937_64& rng) {
    double fan_in = shape.size() == 2 ? static_cast<double>(shape[1])
                                      : static_cast<double>(shape.back());
    double fan_out = static_cast<double>(shape[0]);
    double s = std::sqrt(6.0 / (fan_in + fan_out));
    return uniform_init(std::move(shape), -s, s, rng);
}

GradCheckResult grad_check(const std::function<Tensor()>& loss_fn, ParamStore& params,
                           GradCheckOptions opts) {
    // Analytic pass.
    for (auto& [name, p] : params) {
        (void)name;
        if (p.requires_grad()) p.zero_grad();
    }
    Tensor loss = loss_fn();
    backward(loss);

    std::map<std::string, std::vector<double>> analytic;
    for (auto& [name, p] : params) {
        if (!p.requires_grad()) continue;
        auto g = p.grad();
        analytic.emplace(name, std::vector<double>(g.begin(), g.end()));
    }

    GradCheckResult result;
    NoGrad guard;
    for (auto& [name, p] : params) {
        if (!p.requires_grad()) continue;
        auto& vals = p.mutable_values();
        const auto& a = analytic.at(name);
        for (std::size_t i = 0; i < vals.size(); ++i) {
            if (opts.skip_zero_grad && a[i] == 0.0) continue;
            double saved = vals[i];
            vals[i] = saved + opts.step;
            double plus = loss_fn().value();
            vals[i] = saved - opts.step;
            double minus = loss_fn().value();
            vals[i] = saved;
            if (!std::isfinite(plus) || !std::isfinite(minus))
                throw NumericError("grad_check: non-finite loss at " + name);
            double numeric = (plus - minus) / (2.0 * opts.step);
            double denom = std::max({std::fabs(a[i]), std::fabs(numeric), 1e-2});
            double rel = std::fabs(a[i] - numeric) / denom;
            ++result.checked;
            if (rel > result.max_rel_error) {
                result.max_rel_error = rel;
                result.worst_param = name;
                result.worst_index = i;
            }
        }
    }
    return result;
}

}  // namespace tkgr::num
