#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "ssfam/error.hpp"
#include "ssfam/matrix.hpp"
#include "ssfam/parameters.hpp"

namespace ssfam {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    const Matrix& value() const;
    int rows() const { return value().rows(); }
    int cols() const { return value().cols(); }
    bool valid() const { return tape != nullptr && id >= 0; }
};

/// Linear map acting on matrix rows: out.row(o) = sum_k w_k * in.row(i_k).
struct RowMap {
    struct Entry {
        int out;
        int in;
        float weight;
    };
    int out_rows = 0;
    int in_rows = 0;
    std::vector<Entry> entries;
};

/// Records a computation for reverse-mode differentiation. One tape per
/// forward pass; values are immutable once recorded.
class Tape {
public:
    using Backward = std::function<void(Tape&, const Matrix&)>;

    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    bool grad_enabled() const { return grad_enabled_; }

    Var constant(Matrix value) {
        nodes_.push_back(Node{std::move(value), Matrix(), nullptr, false, nullptr});
        return {this, static_cast<int>(nodes_.size()) - 1};
    }

    /// Leaf for a parameter. Frozen parameters never require gradients.
    Var param(Parameter& p) {
        used_.insert(&p);
        const bool needs = grad_enabled_ && p.trainable();
        nodes_.push_back(Node{p.value, Matrix(), nullptr, needs, &p});
        return {this, static_cast<int>(nodes_.size()) - 1};
    }

    Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
        bool needs = false;
        for (const Var& v : inputs) needs = needs || nodes_.at(v.id).needs_grad;
        return push(std::move(value), needs, std::move(backward));
    }

    Var record(Matrix value, const std::vector<Var>& inputs, Backward backward) {
        bool needs = false;
        for (const Var& v : inputs) needs = needs || nodes_.at(v.id).needs_grad;
        return push(std::move(value), needs, std::move(backward));
    }

    const Matrix& value(int id) const { return nodes_.at(id).value; }
    bool needs_grad(int id) const { return nodes_.at(id).needs_grad; }

    /// Gradient accumulator of an input, or nullptr if it needs none.
    Matrix* grad_sink(int id) {
        Node& n = nodes_.at(id);
        if (!n.needs_grad) return nullptr;
        if (n.grad.empty() && !n.value.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
        return &n.grad;
    }

    /// Backpropagates from a 1x1 root, accumulating into Parameter::grad of
    /// every trainable parameter reached.
    void backward(Var root) {
        if (root.tape != this) throw PreconditionError("backward root belongs to another tape");
        if (value(root.id).size() != 1) throw ShapeError("backward root must be a scalar, got " + value(root.id).shape_string());
        for (Node& n : nodes_) n.grad = Matrix();
        if (!nodes_[root.id].needs_grad) return;
        nodes_[root.id].grad = Matrix(1, 1, 1.0f);
        for (int i = root.id; i >= 0; --i) {
            Node& n = nodes_[i];
            if (!n.needs_grad || n.grad.empty()) continue;
            if (n.param != nullptr) {
                n.param->accumulate_grad(n.grad);
            } else if (n.backward) {
                const Matrix g = n.grad;
                n.backward(*this, g);
            }
        }
    }

    /// Every parameter read by this tape, trainable or not.
    const std::set<const Parameter*>& parameters_used() const { return used_; }
    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        Backward backward;
        bool needs_grad = false;
        Parameter* param = nullptr;
    };

    Var push(Matrix value, bool needs, Backward backward) {
        nodes_.push_back(Node{std::move(value), Matrix(), needs ? std::move(backward) : Backward{}, needs, nullptr});
        return {this, static_cast<int>(nodes_.size()) - 1};
    }

    bool grad_enabled_;
    std::vector<Node> nodes_;
    std::set<const Parameter*> used_;
};

inline const Matrix& Var::value() const { return tape->value(id); }

namespace ag {

inline void same_tape(const Var& a, const Var& b) {
    if (a.tape != b.tape) throw PreconditionError("operands recorded on different tapes");
}

inline Var matmul(Var a, Var b) {
    same_tape(a, b);
    Matrix out = ssfam::matmul(a.value(), b.value());
    return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
        if (Matrix* da = t.grad_sink(a.id)) kernels::gemm_nt(g, t.value(b.id), *da);
        if (Matrix* db = t.grad_sink(b.id)) kernels::gemm_tn(t.value(a.id), g, *db);
    });
}

/// a * b^T; the layout of a linear layer with an (out x in) weight.
inline Var matmul_nt(Var a, Var b) {
    same_tape(a, b);
    Matrix out = ssfam::matmul_nt(a.value(), b.value());
    return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
        if (Matrix* da = t.grad_sink(a.id)) kernels::gemm_nn(g, t.value(b.id), *da);
        if (Matrix* db = t.grad_sink(b.id)) kernels::gemm_tn(g, t.value(a.id), *db);
    });
}

inline Var add(Var a, Var b) {
    same_tape(a, b);
    a.value().require_same(b.value(), "add");
    Matrix out = a.value();
    out += b.value();
    return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
        if (Matrix* da = t.grad_sink(a.id)) *da += g;
        if (Matrix* db = t.grad_sink(b.id)) *db += g;
    });
}

/// a + broadcast(row) over rows; row is 1 x cols.
inline Var add_row(Var a, Var row) {
    same_tape(a, row);
    const Matrix& av = a.value();
    const Matrix& rv = row.value();
    if (rv.rows() != 1 || rv.cols() != av.cols()) throw ShapeError("add_row: " + av.shape_string() + " + " + rv.shape_string());
    Matrix out = av;
    for (int r = 0; r < out.rows(); ++r)
        for (int c = 0; c < out.cols(); ++c) out(r, c) += rv(0, c);
    return a.tape->record(std::move(out), {a, row}, [a, row](Tape& t, const Matrix& g) {
        if (Matrix* da = t.grad_sink(a.id)) *da += g;
        if (Matrix* dr = t.grad_sink(row.id)) {
            for (int r = 0; r < g.rows(); ++r)
                for (int c = 0; c < g.cols(); ++c) (*dr)(0, c) += g(r, c);
        }
    });
}

inline Var scale(Var a, float s) {
    Matrix out = a.value();
    for (auto& v : out.storage()) v *= s;
    return a.tape->record(std::move(out), {a}, [a, s](Tape& t, const Matrix& g) {
        if (Matrix* da = t.grad_sink(a.id))
            for (std::size_t i = 0; i < g.size(); ++i) (*da)[i] += s * g[i];
    });
}

inline Var layer_norm(Var x, Var gamma, Var beta, float eps = 1e-6f) {
    same_tape(x, gamma);
    const Matrix& xv = x.value();
    const int n = xv.rows(), d = xv.cols();
    if (gamma.value().rows() != 1 || gamma.value().cols() != d || !beta.value().same_shape(gamma.value())) {
        throw ShapeError("layer_norm: affine parameters must be 1x" + std::to_string(d));
    }
    Matrix xhat(n, d), out(n, d);
    std::vector<float> inv_std(n);
    for (int r = 0; r < n; ++r) {
        double mean = 0.0;
        for (int c = 0; c < d; ++c) mean += xv(r, c);
        mean /= d;
        double var = 0.0;
        for (int c = 0; c < d; ++c) var += (xv(r, c) - mean) * (xv(r, c) - mean);
        var /= d;
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = static_cast<float>(is);
        for (int c = 0; c < d; ++c) {
            xhat(r, c) = static_cast<float>((xv(r, c) - mean) * is);
            out(r, c) = xhat(r, c) * gamma.value()(0, c) + beta.value()(0, c);
        }
    }
    return x.tape->record(std::move(out), {x, gamma, beta},
                          [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, const Matrix& g) {
                              const int n = g.rows(), d = g.cols();
                              const Matrix& gm = t.value(gamma.id);
                              if (Matrix* dg = t.grad_sink(gamma.id))
                                  for (int r = 0; r < n; ++r)
                                      for (int c = 0; c < d; ++c) (*dg)(0, c) += g(r, c) * xhat(r, c);
                              if (Matrix* db = t.grad_sink(beta.id))
                                  for (int r = 0; r < n; ++r)
                                      for (int c = 0; c < d; ++c) (*db)(0, c) += g(r, c);
                              if (Matrix* dx = t.grad_sink(x.id)) {
                                  for (int r = 0; r < n; ++r) {
                                      double mean_g = 0.0, mean_gx = 0.0;
                                      for (int c = 0; c < d; ++c) {
                                          const double gh = g(r, c) * gm(0, c);
                                          mean_g += gh;
                                          mean_gx += gh * xhat(r, c);
                                      }
                                      mean_g /= d;
                                      mean_gx /= d;
                                      for (int c = 0; c < d; ++c) {
                                          const double gh = g(r, c) * gm(0, c);
                                          (*dx)(r, c) += static_cast<float>(inv_std[r] * (gh - mean_g - xhat(r, c) * mean_gx));
                                      }
                                  }
                              }
                          });
}

inline Var gelu(Var x) {
    Matrix out = x.value();
    for (auto& v : out.storage()) v = static_cast<float>(0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2)));
    return x.tape->record(std::move(out), {x}, [x](Tape& t, const Matrix& g) {
        if (Matrix* dx = t.grad_sink(x.id)) {
            const Matrix& xv = t.value(x.id);
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double v = xv[i];
                const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
                const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
                (*dx)[i] += static_cast<float>(g[i] * (cdf + v * pdf));
            }
        }
    });
}

inline Var softmax_rows(Var x) {
    const Matrix& xv = x.value();
    Matrix out(xv.rows(), xv.cols());
    for (int r = 0; r < xv.rows(); ++r) {
        float mx = -INFINITY;
        for (float v : xv.row(r)) mx = std::max(mx, v);
        double sum = 0.0;
        for (int c = 0; c < xv.cols(); ++c) {
            out(r, c) = std::exp(xv(r, c) - mx);
            sum += out(r, c);
        }
        for (int c = 0; c < xv.cols(); ++c) out(r, c) = static_cast<float>(out(r, c) / sum);
    }
    Matrix y = out;
    return x.tape->record(std::move(out), {x}, [x, y = std::move(y)](Tape& t, const Matrix& g) {
        if (Matrix* dx = t.grad_sink(x.id)) {
            for (int r = 0; r < g.rows(); ++r) {
                double dot = 0.0;
                for (int c = 0; c < g.cols(); ++c) dot += g(r, c) * y(r, c);
                for (int c = 0; c < g.cols(); ++c) (*dx)(r, c) += static_cast<float>(y(r, c) * (g(r, c) - dot));
            }
        }
    });
}

inline Var sigmoid(Var x) {
    Matrix out = x.value();
    for (auto& v : out.storage()) v = static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(v))));
    Matrix y = out;
    return x.tape->record(std::move(out), {x}, [x, y = std::move(y)](Tape& t, const Matrix& g) {
        if (Matrix* dx = t.grad_sink(x.id))
            for (std::size_t i = 0; i < g.size(); ++i) (*dx)[i] += g[i] * y[i] * (1.0f - y[i]);
    });
}

inline Var slice_cols(Var x, int begin, int count) {
    const Matrix& xv = x.value();
    if (begin < 0 || count < 0 || begin + count > xv.cols()) throw ShapeError("slice_cols out of range");
    Matrix out(xv.rows(), count);
    for (int r = 0; r < xv.rows(); ++r)
        for (int c = 0; c < count; ++c) out(r, c) = xv(r, begin + c);
    return x.tape->record(std::move(out), {x}, [x, begin](Tape& t, const Matrix& g) {
        if (Matrix* dx = t.grad_sink(x.id))
            for (int r = 0; r < g.rows(); ++r)
                for (int c = 0; c < g.cols(); ++c) (*dx)(r, begin + c) += g(r, c);
    });
}

inline Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw PreconditionError("concat_cols of nothing");
    const int rows = parts[0].rows();
    int cols = 0;
    for (const Var& p : parts) {
        same_tape(parts[0], p);
        if (p.rows() != rows) throw ShapeError("concat_cols: row count mismatch");
        cols += p.cols();
    }
    Matrix out(rows, cols);
    int off = 0;
    for (const Var& p : parts) {
        const Matrix& pv = p.value();
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < pv.cols(); ++c) out(r, off + c) = pv(r, c);
        off += pv.cols();
    }
    return parts[0].tape->record(std::move(out), parts, [parts](Tape& t, const Matrix& g) {
        int off = 0;
        for (const Var& p : parts) {
            const int pc = t.value(p.id).cols();
            if (Matrix* dp = t.grad_sink(p.id))
                for (int r = 0; r < g.rows(); ++r)
                    for (int c = 0; c < pc; ++c) (*dp)(r, c) += g(r, off + c);
            off += pc;
        }
    });
}

inline Var slice_rows(Var x, int begin, int count) {
    const Matrix& xv = x.value();
    if (begin < 0 || count < 0 || begin + count > xv.rows()) throw ShapeError("slice_rows out of range");
    Matrix out(count, xv.cols());
    for (int r = 0; r < count; ++r)
        for (int c = 0; c < xv.cols(); ++c) out(r, c) = xv(begin + r, c);
    return x.tape->record(std::move(out), {x}, [x, begin](Tape& t, const Matrix& g) {
        if (Matrix* dx = t.grad_sink(x.id))
            for (int r = 0; r < g.rows(); ++r)
                for (int c = 0; c < g.cols(); ++c) (*dx)(begin + r, c) += g(r, c);
    });
}

inline Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw PreconditionError("concat_rows of nothing");
    const int cols = parts[0].cols();
    int rows = 0;
    for (const Var& p : parts) {
        same_tape(parts[0], p);
        if (p.cols() != cols) throw ShapeError("concat_rows: column count mismatch");
        rows += p.rows();
    }
    Matrix out(rows, cols);
    int off = 0;
    for (const Var& p : parts) {
        const Matrix& pv = p.value();
        std::copy(pv.storage().begin(), pv.storage().end(), out.storage().begin() + static_cast<std::ptrdiff_t>(off) * cols);
        off += pv.rows();
    }
    return parts[0].tape->record(std::move(out), parts, [parts](Tape& t, const Matrix& g) {
        int off = 0;
        for (const Var& p : parts) {
            const int pr = t.value(p.id).rows();
            if (Matrix* dp = t.grad_sink(p.id))
                for (int r = 0; r < pr; ++r)
                    for (int c = 0; c < g.cols(); ++c) (*dp)(r, c) += g(off + r, c);
            off += pr;
        }
    });
}

/// Applies a fixed linear map to the rows of x (spatial resampling of a
/// flattened feature grid).
inline Var map_rows(Var x, std::shared_ptr<const RowMap> map) {
    const Matrix& xv = x.value();
    if (map->in_rows != xv.rows()) throw ShapeError("map_rows: expected " + std::to_string(map->in_rows) + " rows");
    Matrix out(map->out_rows, xv.cols());
    for (const auto& e : map->entries) {
        const float* src = xv.row(e.in).data();
        float* dst = out.row(e.out).data();
        for (int c = 0; c < xv.cols(); ++c) dst[c] += e.weight * src[c];
    }
    return x.tape->record(std::move(out), {x}, [x, map](Tape& t, const Matrix& g) {
        if (Matrix* dx = t.grad_sink(x.id))
            for (const auto& e : map->entries) {
                const float* src = g.row(e.out).data();
                float* dst = dx->row(e.in).data();
                for (int c = 0; c < g.cols(); ++c) dst[c] += e.weight * src[c];
            }
    });
}

/// out[i] = x[source[i]] over flat indices; a permutation/gather.
inline Var gather(Var x, int rows, int cols, std::shared_ptr<const std::vector<int>> source) {
    const Matrix& xv = x.value();
    if (source->size() != static_cast<std::size_t>(rows) * cols) throw ShapeError("gather: index size mismatch");
    Matrix out(rows, cols);
    for (std::size_t i = 0; i < source->size(); ++i) out[i] = xv[static_cast<std::size_t>((*source)[i])];
    return x.tape->record(std::move(out), {x}, [x, source](Tape& t, const Matrix& g) {
        if (Matrix* dx = t.grad_sink(x.id))
            for (std::size_t i = 0; i < source->size(); ++i) (*dx)[static_cast<std::size_t>((*source)[i])] += g[i];
    });
}

/// Scalar node whose value and local gradient were computed outside the tape
/// (loss kernels with analytic derivatives).
inline Var scalar_from(Var x, double value, Matrix local_grad) {
    x.value().require_same(local_grad, "scalar_from");
    Matrix out(1, 1, static_cast<float>(value));
    return x.tape->record(std::move(out), {x}, [x, lg = std::move(local_grad)](Tape& t, const Matrix& g) {
        if (Matrix* dx = t.grad_sink(x.id))
            for (std::size_t i = 0; i < lg.size(); ++i) (*dx)[i] += g[0] * lg[i];
    });
}

/// Value copy that blocks gradient flow.
inline Var detach(Var x) { return x.tape->constant(x.value()); }

}  // namespace ag
}  // namespace ssfam
