#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "nct/tensor.hpp"

namespace nct {

struct AdamConfig {
    double base_lr = 1.0;
    std::uint64_t warmup_steps = 4000;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-9;
    std::size_t model_dim = 512;
};

// Effective rate at step t (1-based):
//   base_lr * d^-0.5 * min(t^-0.5, t * warmup^-1.5)
// Rises linearly for warmup steps, then decays as 1/sqrt(t).
inline double warmup_inv_sqrt_lr(const AdamConfig& cfg, std::uint64_t t) {
    if (t == 0) throw std::invalid_argument("warmup_inv_sqrt_lr: step is 1-based");
    if (cfg.warmup_steps == 0)
        throw std::invalid_argument("warmup_inv_sqrt_lr: warmup_steps must be >= 1");
    const double td = static_cast<double>(t);
    const double wu = static_cast<double>(cfg.warmup_steps);
    const double ramp = td * std::pow(wu, -1.5);
    const double decay = 1.0 / std::sqrt(td);
    return cfg.base_lr / std::sqrt(static_cast<double>(cfg.model_dim)) *
           (ramp < decay ? ramp : decay);
}

// First and second moment estimates, one slot per parameter tensor, in the
// caller's canonical parameter order.
struct AdamState {
    AdamConfig cfg;
    std::uint64_t t = 0;  // completed steps
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;

    static AdamState init(AdamConfig cfg, const std::vector<Tensor>& params) {
        AdamState st;
        st.cfg = cfg;
        st.m.reserve(params.size());
        st.v.reserve(params.size());
        for (const Tensor& p : params) {
            st.m.emplace_back(p.numel(), 0.0);
            st.v.emplace_back(p.numel(), 0.0);
        }
        return st;
    }
};

struct StepOutcome {
    bool applied = false;
    double lr = 0.0;
    std::string note;
};

// One Adam update over all parameters, reading gradients accumulated in the
// tensors. If any gradient is non-finite the step is rejected: no parameter,
// moment, or step-counter mutation happens and the note names the offender.
inline StepOutcome adam_step(std::vector<Tensor>& params,
                             const std::vector<std::string>& names,
                             AdamState& st) {
    if (params.size() != st.m.size())
        throw std::invalid_argument("adam_step: state holds " +
                                    std::to_string(st.m.size()) +
                                    " slots for " + std::to_string(params.size()) +
                                    " params");
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const std::vector<double>& g = params[pi].grad_vec();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (!std::isfinite(g[i])) {
                StepOutcome out;
                out.lr = 0.0;
                out.note = "non-finite gradient in " +
                           (pi < names.size() ? names[pi] : std::to_string(pi)) +
                           " at element " + std::to_string(i);
                return out;
            }
    }
    const std::uint64_t t = st.t + 1;
    const double lr = warmup_inv_sqrt_lr(st.cfg, t);
    const double b1 = st.cfg.beta1, b2 = st.cfg.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        double* w = params[pi].data();
        const std::vector<double>& g = params[pi].grad_vec();
        std::vector<double>& m = st.m[pi];
        std::vector<double>& v = st.v[pi];
        if (m.size() != g.size())
            throw std::invalid_argument("adam_step: slot size mismatch for " +
                                        (pi < names.size() ? names[pi]
                                                           : std::to_string(pi)));
        for (std::size_t i = 0; i < g.size(); ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= lr * mhat / (std::sqrt(vhat) + st.cfg.eps);
        }
    }
    st.t = t;
    StepOutcome out;
    out.applied = true;
    out.lr = lr;
    return out;
}

}  // namespace nct
