#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "ssfam/autograd.hpp"
#include "ssfam/parameters.hpp"

namespace ssfam::nn {

struct Linear {
    Parameter* weight = nullptr;  // out x in
    Parameter* bias = nullptr;    // 1 x out, optional

    int in_features() const { return weight->value.cols(); }
    int out_features() const { return weight->value.rows(); }
};

struct LayerNorm {
    Parameter* gamma = nullptr;
    Parameter* beta = nullptr;
};

struct Attention {
    Linear q, k, v, o;
    int heads = 1;
};

struct Mlp {
    Linear fc1, fc2;
};

inline Linear make_linear(ParameterStore& store, const std::string& name, ParamGroup group, int in, int out, Rng& rng,
                          bool with_bias = true, std::optional<Modality> modality = {}) {
    Linear l;
    l.weight = &store.add(name + ".weight", group, init::fan_in(out, in, rng), modality);
    if (with_bias) l.bias = &store.add(name + ".bias", group, init::zeros(1, out), modality);
    return l;
}

inline LayerNorm make_norm(ParameterStore& store, const std::string& name, ParamGroup group, int dim) {
    return {&store.add(name + ".gamma", group, init::ones(1, dim)), &store.add(name + ".beta", group, init::zeros(1, dim))};
}

inline Attention make_attention(ParameterStore& store, const std::string& name, ParamGroup group, int dim, int heads,
                                Rng& rng) {
    return {make_linear(store, name + ".q", group, dim, dim, rng), make_linear(store, name + ".k", group, dim, dim, rng),
            make_linear(store, name + ".v", group, dim, dim, rng), make_linear(store, name + ".o", group, dim, dim, rng),
            heads};
}

inline Mlp make_mlp(ParameterStore& store, const std::string& name, ParamGroup group, int dim, int hidden, Rng& rng) {
    return {make_linear(store, name + ".fc1", group, dim, hidden, rng), make_linear(store, name + ".fc2", group, hidden, dim, rng)};
}

inline Var linear(Tape& t, Var x, const Linear& l) {
    Var y = ag::matmul_nt(x, t.param(*l.weight));
    if (l.bias) y = ag::add_row(y, t.param(*l.bias));
    return y;
}

inline Var norm(Tape& t, Var x, const LayerNorm& n) { return ag::layer_norm(x, t.param(*n.gamma), t.param(*n.beta)); }

inline Var mlp(Tape& t, Var x, const Mlp& m) { return linear(t, ag::gelu(linear(t, x, m.fc1)), m.fc2); }

/// Scaled dot-product attention over already-projected q, k, v, split into
/// `heads` column blocks.
inline Var multi_head(Var q, Var k, Var v, int heads) {
    const int dim = q.cols();
    if (k.cols() != dim || v.cols() != dim || k.rows() != v.rows()) {
        throw ShapeError("attention: q " + q.value().shape_string() + ", k " + k.value().shape_string() + ", v " +
                         v.value().shape_string());
    }
    if (heads < 1 || dim % heads != 0) throw ShapeError("attention: dim " + std::to_string(dim) + " not divisible by heads");
    const int hd = dim / heads;
    const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(hd));
    std::vector<Var> outs;
    outs.reserve(heads);
    for (int h = 0; h < heads; ++h) {
        Var qh = heads == 1 ? q : ag::slice_cols(q, h * hd, hd);
        Var kh = heads == 1 ? k : ag::slice_cols(k, h * hd, hd);
        Var vh = heads == 1 ? v : ag::slice_cols(v, h * hd, hd);
        Var p = ag::softmax_rows(ag::scale(ag::matmul_nt(qh, kh), inv_sqrt));
        outs.push_back(ag::matmul(p, vh));
    }
    return heads == 1 ? outs[0] : ag::concat_cols(outs);
}

/// Full attention block: project queries/keys/values, attend, project out.
inline Var attention(Tape& t, Var queries, Var keys, Var values, const Attention& a) {
    return linear(t, multi_head(linear(t, queries, a.q), linear(t, keys, a.k), linear(t, values, a.v), a.heads), a.o);
}

}  // namespace ssfam::nn
