#include "featret/autodiff.hpp"

#include "featret/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace featret::ad {

namespace {

Tape& tape_of(Var a) {
    if (a.tape == nullptr) throw Error("autodiff: variable is not bound to a tape");
    return *a.tape;
}

Tape& tape_of(Var a, Var b) {
    if (a.tape != b.tape) throw Error("autodiff: operands live on different tapes");
    return tape_of(a);
}

bool needs(const Tape& t, std::initializer_list<Var> vars) {
    for (Var v : vars)
        if (t.requires_grad(v.id)) return true;
    return false;
}

void require_same_shape(const char* op, const Tensor2& a, const Tensor2& b) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
}

template <typename F>
Var unary_elementwise(Var a, F&& f, auto&& dfdx_from_out) {
    Tape& t = tape_of(a);
    const Tensor2& x = a.value();
    Tensor2 out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
    const std::size_t ia = a.id;
    Tensor2 saved = out;
    return t.push(std::move(out), needs(t, {a}),
                  [ia, saved = std::move(saved), dfdx_from_out](Tape& tp, const Tensor2& g) {
                      const Tensor2& x = tp.value(ia);
                      Tensor2 dx(x.rows(), x.cols());
                      for (std::size_t i = 0; i < x.size(); ++i) dx[i] = g[i] * dfdx_from_out(x[i], saved[i]);
                      tp.accumulate(ia, dx);
                  });
}

} // namespace

const Tensor2& Var::value() const { return tape->value(id); }
Tensor2 Var::grad() const { return tape->grad(id); }

Var Tape::constant(Tensor2 value) { return push(std::move(value), false, nullptr); }
Var Tape::variable(Tensor2 value) { return push(std::move(value), true, nullptr); }

Var Tape::push(Tensor2 value, bool requires_grad, Backward backward) {
    Node node;
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    if (requires_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var{this, nodes_.size() - 1};
}

Tensor2 Tape::grad(std::size_t id) const {
    const Node& n = nodes_[id];
    if (n.grad.empty()) return Tensor2(n.value.rows(), n.value.cols());
    return n.grad;
}

Tensor2& Tape::grad_slot(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor2(n.value.rows(), n.value.cols());
    return n.grad;
}

void Tape::accumulate(std::size_t id, const Tensor2& g) {
    if (!nodes_[id].requires_grad) return;
    Tensor2& slot = grad_slot(id);
    require_same_shape("accumulate", slot, g);
    for (std::size_t i = 0; i < g.size(); ++i) slot[i] += g[i];
}

void Tape::backward(Var root) {
    if (root.tape != this) throw Error("backward: root belongs to another tape");
    if (nodes_[root.id].value.size() != 1) {
        throw ShapeError("backward: root must be 1x1, got " + nodes_[root.id].value.shape_str());
    }
    for (auto& n : nodes_) n.grad = Tensor2();
    if (!nodes_[root.id].requires_grad) return;
    grad_slot(root.id)[0] = 1.0;
    for (std::size_t i = root.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
        n.backward(*this, n.grad);
    }
}

Var matmul(Var a, Var b) {
    Tape& t = tape_of(a, b);
    Tensor2 out = featret::matmul(a.value(), b.value());
    const std::size_t ia = a.id, ib = b.id;
    return t.push(std::move(out), needs(t, {a, b}), [ia, ib](Tape& tp, const Tensor2& g) {
        if (tp.requires_grad(ia)) tp.accumulate(ia, featret::matmul(g, featret::transpose(tp.value(ib))));
        if (tp.requires_grad(ib)) tp.accumulate(ib, featret::matmul(featret::transpose(tp.value(ia)), g));
    });
}

Var add(Var a, Var b) {
    Tape& t = tape_of(a, b);
    require_same_shape("add", a.value(), b.value());
    Tensor2 out = a.value();
    const Tensor2& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    const std::size_t ia = a.id, ib = b.id;
    return t.push(std::move(out), needs(t, {a, b}), [ia, ib](Tape& tp, const Tensor2& g) {
        tp.accumulate(ia, g);
        tp.accumulate(ib, g);
    });
}

Var sub(Var a, Var b) {
    Tape& t = tape_of(a, b);
    require_same_shape("sub", a.value(), b.value());
    Tensor2 out = a.value();
    const Tensor2& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    const std::size_t ia = a.id, ib = b.id;
    return t.push(std::move(out), needs(t, {a, b}), [ia, ib](Tape& tp, const Tensor2& g) {
        tp.accumulate(ia, g);
        if (tp.requires_grad(ib)) {
            Tensor2 neg = g;
            for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -neg[i];
            tp.accumulate(ib, neg);
        }
    });
}

Var hadamard(Var a, Var b) {
    Tape& t = tape_of(a, b);
    require_same_shape("hadamard", a.value(), b.value());
    Tensor2 out = a.value();
    const Tensor2& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    const std::size_t ia = a.id, ib = b.id;
    return t.push(std::move(out), needs(t, {a, b}), [ia, ib](Tape& tp, const Tensor2& g) {
        const Tensor2& av = tp.value(ia);
        const Tensor2& bv = tp.value(ib);
        if (tp.requires_grad(ia)) {
            Tensor2 d(g.rows(), g.cols());
            for (std::size_t i = 0; i < g.size(); ++i) d[i] = g[i] * bv[i];
            tp.accumulate(ia, d);
        }
        if (tp.requires_grad(ib)) {
            Tensor2 d(g.rows(), g.cols());
            for (std::size_t i = 0; i < g.size(); ++i) d[i] = g[i] * av[i];
            tp.accumulate(ib, d);
        }
    });
}

Var scale(Var a, double s) {
    Tape& t = tape_of(a);
    Tensor2 out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= s;
    const std::size_t ia = a.id;
    return t.push(std::move(out), needs(t, {a}), [ia, s](Tape& tp, const Tensor2& g) {
        Tensor2 d = g;
        for (std::size_t i = 0; i < d.size(); ++i) d[i] *= s;
        tp.accumulate(ia, d);
    });
}

Var add_row_broadcast(Var a, Var b) {
    Tape& t = tape_of(a, b);
    const Tensor2& av = a.value();
    const Tensor2& bv = b.value();
    if (bv.rows() != 1 || bv.cols() != av.cols()) {
        throw ShapeError("add_row_broadcast: cannot add " + bv.shape_str() + " to rows of " + av.shape_str());
    }
    Tensor2 out = av;
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bv[c];
    const std::size_t ia = a.id, ib = b.id;
    return t.push(std::move(out), needs(t, {a, b}), [ia, ib](Tape& tp, const Tensor2& g) {
        tp.accumulate(ia, g);
        if (tp.requires_grad(ib)) {
            Tensor2 d(1, g.cols());
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t c = 0; c < g.cols(); ++c) d[c] += g(r, c);
            tp.accumulate(ib, d);
        }
    });
}

Var transpose(Var a) {
    Tape& t = tape_of(a);
    const std::size_t ia = a.id;
    return t.push(featret::transpose(a.value()), needs(t, {a}),
                  [ia](Tape& tp, const Tensor2& g) { tp.accumulate(ia, featret::transpose(g)); });
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no operands");
    Tape& t = tape_of(parts.front());
    const std::size_t cols = parts.front().cols();
    std::size_t rows = 0;
    bool any_grad = false;
    for (Var p : parts) {
        if (p.tape != &t) throw Error("concat_rows: operands live on different tapes");
        if (p.cols() != cols) {
            throw ShapeError("concat_rows: column mismatch " + p.value().shape_str() + " vs " +
                             parts.front().value().shape_str());
        }
        rows += p.rows();
        any_grad = any_grad || t.requires_grad(p.id);
    }
    Tensor2 out(rows, cols);
    std::vector<std::size_t> ids;
    std::size_t r0 = 0;
    for (Var p : parts) {
        const Tensor2& v = p.value();
        std::copy(v.data().begin(), v.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(r0 * cols));
        r0 += v.rows();
        ids.push_back(p.id);
    }
    return t.push(std::move(out), any_grad, [ids = std::move(ids)](Tape& tp, const Tensor2& g) {
        std::size_t r = 0;
        for (std::size_t id : ids) {
            const Tensor2& v = tp.value(id);
            if (tp.requires_grad(id)) {
                Tensor2 d(v.rows(), v.cols());
                auto src = g.data().subspan(r * g.cols(), v.size());
                std::copy(src.begin(), src.end(), d.data().begin());
                tp.accumulate(id, d);
            }
            r += v.rows();
        }
    });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
    Tape& t = tape_of(a);
    const Tensor2& av = a.value();
    if (begin > end || end > av.cols()) {
        throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") outside " + av.shape_str());
    }
    Tensor2 out(av.rows(), end - begin);
    for (std::size_t r = 0; r < av.rows(); ++r)
        for (std::size_t c = begin; c < end; ++c) out(r, c - begin) = av(r, c);
    const std::size_t ia = a.id;
    return t.push(std::move(out), needs(t, {a}), [ia, begin](Tape& tp, const Tensor2& g) {
        const Tensor2& av = tp.value(ia);
        Tensor2 d(av.rows(), av.cols());
        for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t c = 0; c < g.cols(); ++c) d(r, c + begin) = g(r, c);
        tp.accumulate(ia, d);
    });
}

Var gather_rows(Var table, std::span<const std::size_t> indices) {
    Tape& t = tape_of(table);
    const Tensor2& tv = table.value();
    Tensor2 out(indices.size(), tv.cols());
    for (std::size_t r = 0; r < indices.size(); ++r) {
        if (indices[r] >= tv.rows()) {
            throw ShapeError("gather_rows: index " + std::to_string(indices[r]) + " outside " + tv.shape_str());
        }
        for (std::size_t c = 0; c < tv.cols(); ++c) out(r, c) = tv(indices[r], c);
    }
    const std::size_t it = table.id;
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    return t.push(std::move(out), needs(t, {table}), [it, idx = std::move(idx)](Tape& tp, const Tensor2& g) {
        Tensor2& slot = tp.grad_slot(it);
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (std::size_t c = 0; c < g.cols(); ++c) slot(idx[r], c) += g(r, c);
    });
}

Var sigmoid(Var a) {
    return unary_elementwise(
        a,
        [](double x) {
            if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Var leaky_relu(Var a, double slope) {
    return unary_elementwise(
        a, [slope](double x) { return x > 0 ? x : slope * x; },
        [slope](double x, double) { return x > 0 ? 1.0 : slope; });
}

Var tanh(Var a) {
    return unary_elementwise(
        a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var mean_rows(Var a) {
    Tape& t = tape_of(a);
    const Tensor2& av = a.value();
    if (av.rows() == 0) throw ShapeError("mean_rows: empty operand");
    Tensor2 out(1, av.cols());
    for (std::size_t r = 0; r < av.rows(); ++r)
        for (std::size_t c = 0; c < av.cols(); ++c) out[c] += av(r, c);
    const double inv = 1.0 / static_cast<double>(av.rows());
    for (std::size_t c = 0; c < av.cols(); ++c) out[c] *= inv;
    const std::size_t ia = a.id;
    return t.push(std::move(out), needs(t, {a}), [ia](Tape& tp, const Tensor2& g) {
        const Tensor2& av = tp.value(ia);
        const double inv = 1.0 / static_cast<double>(av.rows());
        Tensor2 d(av.rows(), av.cols());
        for (std::size_t r = 0; r < av.rows(); ++r)
            for (std::size_t c = 0; c < av.cols(); ++c) d(r, c) = g[c] * inv;
        tp.accumulate(ia, d);
    });
}

Var l2_normalize_rows(Var a) {
    Tape& t = tape_of(a);
    const Tensor2& av = a.value();
    Tensor2 out(av.rows(), av.cols());
    std::vector<double> norms(av.rows());
    for (std::size_t r = 0; r < av.rows(); ++r) {
        double ss = 0;
        for (double v : av.row_span(r)) ss += v * v;
        norms[r] = std::sqrt(ss);
        if (norms[r] > 0)
            for (std::size_t c = 0; c < av.cols(); ++c) out(r, c) = av(r, c) / norms[r];
    }
    const std::size_t ia = a.id;
    Tensor2 y = out;
    return t.push(std::move(out), needs(t, {a}),
                  [ia, y = std::move(y), norms = std::move(norms)](Tape& tp, const Tensor2& g) {
                      Tensor2 d(y.rows(), y.cols());
                      for (std::size_t r = 0; r < y.rows(); ++r) {
                          if (norms[r] == 0) continue;
                          double yg = 0;
                          for (std::size_t c = 0; c < y.cols(); ++c) yg += y(r, c) * g(r, c);
                          for (std::size_t c = 0; c < y.cols(); ++c) d(r, c) = (g(r, c) - y(r, c) * yg) / norms[r];
                      }
                      tp.accumulate(ia, d);
                  });
}

Var dot(Var a, Var b) {
    Tape& t = tape_of(a, b);
    require_same_shape("dot", a.value(), b.value());
    double s = 0;
    const Tensor2& av = a.value();
    const Tensor2& bv = b.value();
    for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
    const std::size_t ia = a.id, ib = b.id;
    return t.push(Tensor2(1, 1, s), needs(t, {a, b}), [ia, ib](Tape& tp, const Tensor2& g) {
        const double g0 = g[0];
        if (tp.requires_grad(ia)) {
            Tensor2 d = tp.value(ib);
            for (std::size_t i = 0; i < d.size(); ++i) d[i] *= g0;
            tp.accumulate(ia, d);
        }
        if (tp.requires_grad(ib)) {
            Tensor2 d = tp.value(ia);
            for (std::size_t i = 0; i < d.size(); ++i) d[i] *= g0;
            tp.accumulate(ib, d);
        }
    });
}

Var sum_all(Var a) {
    Tape& t = tape_of(a);
    double s = 0;
    for (double v : a.value().data()) s += v;
    const std::size_t ia = a.id;
    return t.push(Tensor2(1, 1, s), needs(t, {a}), [ia](Tape& tp, const Tensor2& g) {
        const Tensor2& av = tp.value(ia);
        tp.accumulate(ia, Tensor2(av.rows(), av.cols(), g[0]));
    });
}

Var average(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("average: no operands");
    Tape& t = tape_of(parts.front());
    Tensor2 out = parts.front().value();
    bool any_grad = t.requires_grad(parts.front().id);
    std::vector<std::size_t> ids{parts.front().id};
    for (std::size_t p = 1; p < parts.size(); ++p) {
        if (parts[p].tape != &t) throw Error("average: operands live on different tapes");
        require_same_shape("average", out, parts[p].value());
        const Tensor2& v = parts[p].value();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += v[i];
        any_grad = any_grad || t.requires_grad(parts[p].id);
        ids.push_back(parts[p].id);
    }
    const double n = static_cast<double>(parts.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] /= n;
    return t.push(std::move(out), any_grad, [ids = std::move(ids)](Tape& tp, const Tensor2& g) {
        Tensor2 d = g;
        const double n = static_cast<double>(ids.size());
        for (std::size_t i = 0; i < d.size(); ++i) d[i] /= n;
        for (std::size_t id : ids) tp.accumulate(id, d);
    });
}

Var layer_norm_rows(Var x, Var gamma, Var beta, double eps) {
    Tape& t = tape_of(x, gamma);
    tape_of(x, beta);
    const Tensor2& xv = x.value();
    const Tensor2& gv = gamma.value();
    const Tensor2& bv = beta.value();
    const std::size_t d = xv.cols();
    if (gv.rows() != 1 || gv.cols() != d || !gv.same_shape(bv)) {
        throw ShapeError("layer_norm_rows: gamma " + gv.shape_str() + " / beta " + bv.shape_str() +
                         " incompatible with " + xv.shape_str());
    }
    if (!(eps > 0)) throw Error("layer_norm_rows: eps must be positive");
    Tensor2 xhat(xv.rows(), d);
    std::vector<double> inv_std(xv.rows());
    Tensor2 out(xv.rows(), d);
    for (std::size_t r = 0; r < xv.rows(); ++r) {
        double mean = 0;
        for (double v : xv.row_span(r)) mean += v;
        mean /= static_cast<double>(d);
        double var = 0;
        for (double v : xv.row_span(r)) var += (v - mean) * (v - mean);
        var /= static_cast<double>(d);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < d; ++c) {
            xhat(r, c) = (xv(r, c) - mean) * inv_std[r];
            out(r, c) = xhat(r, c) * gv[c] + bv[c];
        }
    }
    const std::size_t ix = x.id, ig = gamma.id, ib = beta.id;
    return t.push(std::move(out), needs(t, {x, gamma, beta}),
                  [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& tp, const Tensor2& g) {
                      const Tensor2& gv = tp.value(ig);
                      const std::size_t n = xhat.rows();
                      const std::size_t d = xhat.cols();
                      if (tp.requires_grad(ig) || tp.requires_grad(ib)) {
                          Tensor2 dg(1, d), db(1, d);
                          for (std::size_t r = 0; r < n; ++r)
                              for (std::size_t c = 0; c < d; ++c) {
                                  dg[c] += g(r, c) * xhat(r, c);
                                  db[c] += g(r, c);
                              }
                          tp.accumulate(ig, dg);
                          tp.accumulate(ib, db);
                      }
                      if (tp.requires_grad(ix)) {
                          Tensor2 dx(n, d);
                          const double dd = static_cast<double>(d);
                          for (std::size_t r = 0; r < n; ++r) {
                              double sum_dxhat = 0, sum_dxhat_xhat = 0;
                              for (std::size_t c = 0; c < d; ++c) {
                                  const double dxh = g(r, c) * gv[c];
                                  sum_dxhat += dxh;
                                  sum_dxhat_xhat += dxh * xhat(r, c);
                              }
                              for (std::size_t c = 0; c < d; ++c) {
                                  const double dxh = g(r, c) * gv[c];
                                  dx(r, c) = inv_std[r] / dd * (dd * dxh - sum_dxhat - xhat(r, c) * sum_dxhat_xhat);
                              }
                          }
                          tp.accumulate(ix, dx);
                      }
                  });
}

Var masked_softmax_rows(Var x, const Mask& mask) {
    Tape& t = tape_of(x);
    const Tensor2& xv = x.value();
    if (mask.size() != xv.size()) {
        throw ShapeError("masked_softmax_rows: mask length " + std::to_string(mask.size()) + " vs operand " +
                         xv.shape_str());
    }
    Tensor2 out(xv.rows(), xv.cols());
    for (std::size_t r = 0; r < xv.rows(); ++r) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < xv.cols(); ++c)
            if (mask[r * xv.cols() + c]) m = std::max(m, xv(r, c));
        if (m == -std::numeric_limits<double>::infinity()) {
            throw Error("masked_softmax_rows: row " + std::to_string(r) + " has an empty mask");
        }
        double z = 0;
        for (std::size_t c = 0; c < xv.cols(); ++c)
            if (mask[r * xv.cols() + c]) z += (out(r, c) = std::exp(xv(r, c) - m));
        for (std::size_t c = 0; c < xv.cols(); ++c) out(r, c) /= z;
    }
    const std::size_t ix = x.id;
    Tensor2 y = out;
    return t.push(std::move(out), needs(t, {x}), [ix, y = std::move(y)](Tape& tp, const Tensor2& g) {
        Tensor2 d(y.rows(), y.cols());
        for (std::size_t r = 0; r < y.rows(); ++r) {
            double yg = 0;
            for (std::size_t c = 0; c < y.cols(); ++c) yg += y(r, c) * g(r, c);
            for (std::size_t c = 0; c < y.cols(); ++c) d(r, c) = y(r, c) * (g(r, c) - yg);
        }
        tp.accumulate(ix, d);
    });
}

Var masked_logsumexp_rows(Var x, const Mask& mask) {
    Tape& t = tape_of(x);
    const Tensor2& xv = x.value();
    if (mask.size() != xv.size()) {
        throw ShapeError("masked_logsumexp_rows: mask length " + std::to_string(mask.size()) + " vs operand " +
                         xv.shape_str());
    }
    Tensor2 out(xv.rows(), 1);
    Tensor2 weights(xv.rows(), xv.cols());
    for (std::size_t r = 0; r < xv.rows(); ++r) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < xv.cols(); ++c)
            if (mask[r * xv.cols() + c]) m = std::max(m, xv(r, c));
        if (m == -std::numeric_limits<double>::infinity()) continue;
        double z = 0;
        for (std::size_t c = 0; c < xv.cols(); ++c)
            if (mask[r * xv.cols() + c]) z += (weights(r, c) = std::exp(xv(r, c) - m));
        for (std::size_t c = 0; c < xv.cols(); ++c) weights(r, c) /= z;
        out[r] = m + std::log(z);
    }
    const std::size_t ix = x.id;
    return t.push(std::move(out), needs(t, {x}), [ix, weights = std::move(weights)](Tape& tp, const Tensor2& g) {
        Tensor2 d(weights.rows(), weights.cols());
        for (std::size_t r = 0; r < d.rows(); ++r)
            for (std::size_t c = 0; c < d.cols(); ++c) d(r, c) = g[r] * weights(r, c);
        tp.accumulate(ix, d);
    });
}

} // namespace featret::ad
