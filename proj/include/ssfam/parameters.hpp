#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ssfam/error.hpp"
#include "ssfam/matrix.hpp"
#include "ssfam/modality.hpp"
#include "ssfam/rng.hpp"

namespace ssfam {

/// Ownership class of a parameter. Maps one-to-one onto the parameter
/// partition used by training.
enum class ParamGroup {
    encoder_frozen,            // image encoder base weights
    prompt_encoder_frozen,     // positional-encoding basis of the prompt encoder
    modulator,                 // per-modality low-rank factors / adapters
    decoder_prompt,            // decoder branch conditioned on point prompts
    decoder_noprompt,          // decoder branch used at test time
    prompt_encoder_trainable,  // point label embeddings
    unassigned,
};

inline const char* group_name(ParamGroup g) {
    switch (g) {
        case ParamGroup::encoder_frozen: return "encoder_frozen";
        case ParamGroup::prompt_encoder_frozen: return "prompt_encoder_frozen";
        case ParamGroup::modulator: return "modulator";
        case ParamGroup::decoder_prompt: return "decoder_prompt";
        case ParamGroup::decoder_noprompt: return "decoder_noprompt";
        case ParamGroup::prompt_encoder_trainable: return "prompt_encoder_trainable";
        case ParamGroup::unassigned: return "unassigned";
    }
    return "?";
}

inline ParamGroup parse_group(const std::string& s) {
    for (ParamGroup g : {ParamGroup::encoder_frozen, ParamGroup::prompt_encoder_frozen, ParamGroup::modulator,
                         ParamGroup::decoder_prompt, ParamGroup::decoder_noprompt,
                         ParamGroup::prompt_encoder_trainable, ParamGroup::unassigned}) {
        if (s == group_name(g)) return g;
    }
    throw ConfigError("unknown parameter group '" + s + "'");
}

inline bool is_frozen(ParamGroup g) {
    return g == ParamGroup::encoder_frozen || g == ParamGroup::prompt_encoder_frozen;
}

struct Parameter {
    std::string name;
    ParamGroup group = ParamGroup::unassigned;
    std::optional<Modality> modality;
    Matrix value;
    Matrix grad;
    bool has_grad = false;

    bool trainable() const { return !is_frozen(group) && group != ParamGroup::unassigned; }
    std::size_t numel() const { return value.size(); }

    void zero_grad() {
        grad = Matrix();
        has_grad = false;
    }

    void accumulate_grad(const Matrix& g) {
        if (!has_grad) {
            grad = g;
            has_grad = true;
        } else {
            grad += g;
        }
    }
};

/// Owns every parameter of a model. Addresses are stable for the store's
/// lifetime; iteration is in registration order.
class ParameterStore {
public:
    ParameterStore() = default;
    ParameterStore(const ParameterStore&) = delete;
    ParameterStore& operator=(const ParameterStore&) = delete;
    ParameterStore(ParameterStore&&) = default;
    ParameterStore& operator=(ParameterStore&&) = default;

    Parameter& add(std::string name, ParamGroup group, Matrix value, std::optional<Modality> modality = {}) {
        if (index_.contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
        auto p = std::make_unique<Parameter>();
        p->name = std::move(name);
        p->group = group;
        p->modality = modality;
        p->value = std::move(value);
        index_.emplace(p->name, params_.size());
        params_.push_back(std::move(p));
        return *params_.back();
    }

    Parameter& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("no parameter named '" + name + "'");
        return *params_[it->second];
    }
    const Parameter& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("no parameter named '" + name + "'");
        return *params_[it->second];
    }
    bool contains(const std::string& name) const { return index_.contains(name); }

    std::size_t size() const { return params_.size(); }
    Parameter& operator[](std::size_t i) { return *params_[i]; }
    const Parameter& operator[](std::size_t i) const { return *params_[i]; }

    std::vector<Parameter*> all() {
        std::vector<Parameter*> out;
        for (auto& p : params_) out.push_back(p.get());
        return out;
    }
    std::vector<const Parameter*> all() const {
        std::vector<const Parameter*> out;
        for (const auto& p : params_) out.push_back(p.get());
        return out;
    }

    std::size_t numel(ParamGroup g) const {
        std::size_t n = 0;
        for (const auto& p : params_)
            if (p->group == g) n += p->numel();
        return n;
    }
    std::size_t numel() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p->numel();
        return n;
    }

    void zero_grad() {
        for (auto& p : params_) p->zero_grad();
    }

private:
    std::vector<std::unique_ptr<Parameter>> params_;
    std::map<std::string, std::size_t> index_;
};

namespace init {

inline Matrix normal(int rows, int cols, double stddev, Rng& rng) {
    Matrix m(rows, cols);
    for (auto& v : m.storage()) v = static_cast<float>(stddev * rng.normal());
    return m;
}

/// Fan-in scaled Gaussian for a (out x in) weight.
inline Matrix fan_in(int out, int in, Rng& rng) { return normal(out, in, 1.0 / std::sqrt(static_cast<double>(in)), rng); }

inline Matrix ones(int rows, int cols) { return Matrix(rows, cols, 1.0f); }
inline Matrix zeros(int rows, int cols) { return Matrix(rows, cols, 0.0f); }

}  // namespace init

}  // namespace ssfam
