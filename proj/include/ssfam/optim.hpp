#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ssfam/error.hpp"
#include "ssfam/parameters.hpp"

namespace ssfam {

struct AdamConfig {
    double lr = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with a constant learning rate. State exists only for the parameters
/// handed to the constructor, which must all be trainable.
class Adam {
public:
    struct State {
        Matrix m;
        Matrix v;
    };

    Adam() = default;

    Adam(std::vector<Parameter*> params, AdamConfig cfg) : cfg_(cfg), params_(std::move(params)) {
        if (!(cfg.lr > 0.0)) throw ConfigError("learning rate must be positive");
        for (Parameter* p : params_) {
            if (!p->trainable()) throw PreconditionError("optimizer was given frozen parameter '" + p->name + "'");
            state_.emplace(p->name, State{Matrix(p->value.rows(), p->value.cols()), Matrix(p->value.rows(), p->value.cols())});
        }
    }

    const AdamConfig& config() const { return cfg_; }
    std::int64_t steps() const { return step_; }
    const std::map<std::string, State>& state() const { return state_; }
    bool has_state(const std::string& name) const { return state_.contains(name); }
    const std::vector<Parameter*>& parameters() const { return params_; }

    /// One update from the accumulated gradients. Parameters without a
    /// gradient this step still advance their moment decay.
    void step() {
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (Parameter* p : params_) {
            State& s = state_.at(p->name);
            const bool has = p->has_grad;
            for (std::size_t i = 0; i < p->value.size(); ++i) {
                const double g = has ? p->grad[i] : 0.0;
                const double m = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g;
                const double v = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g * g;
                s.m[i] = static_cast<float>(m);
                s.v[i] = static_cast<float>(v);
                p->value[i] -= static_cast<float>(cfg_.lr * (m / bc1) / (std::sqrt(v / bc2) + cfg_.eps));
            }
        }
    }

    /// Restores moments and step count (checkpoint resume).
    void load_state(std::map<std::string, State> state, std::int64_t step) {
        for (const auto& [name, s] : state_) {
            auto it = state.find(name);
            if (it == state.end()) throw IoError("optimizer state for '" + name + "' missing from checkpoint");
            if (!it->second.m.same_shape(s.m) || !it->second.v.same_shape(s.v)) {
                throw ShapeError("optimizer state for '" + name + "' has the wrong shape");
            }
        }
        for (auto& [name, s] : state_) s = std::move(state.at(name));
        step_ = step;
    }

private:
    AdamConfig cfg_;
    std::vector<Parameter*> params_;
    std::map<std::string, State> state_;
    std::int64_t step_ = 0;
};

}  // namespace ssfam
