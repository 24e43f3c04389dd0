#include "tkgr/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>

namespace tkgr::num {

namespace detail {

std::uint64_t next_node_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
}

}  // namespace detail

namespace {

thread_local bool g_recording = true;

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

std::shared_ptr<detail::Node> make_node(Shape shape, std::vector<double> value) {
    auto n = std::make_shared<detail::Node>();
    if (shape_numel(shape) != value.size())
        throw DimensionError("tensor: value count does not match shape");
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->id = detail::next_node_id();
    return n;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch");
}

void check_rank1(const char* op, const Tensor& t) {
    if (t.rank() != 1) throw DimensionError(std::string(op) + ": expects rank-1 input");
}

}  // namespace

NoGrad::NoGrad() : previous_(g_recording) { g_recording = false; }
NoGrad::~NoGrad() { g_recording = previous_; }
bool NoGrad::recording() { return g_recording; }

Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
               std::function<void(detail::Node&)> backward_fn) {
    auto n = make_node(std::move(shape), std::move(value));
    bool track = g_recording &&
                 std::any_of(parents.begin(), parents.end(),
                             [](const Tensor& p) { return p.requires_grad(); });
    if (track) {
        n->requires_grad = true;
        n->parents.reserve(parents.size());
        for (const auto& p : parents) n->parents.push_back(p.node());
        n->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(n));
}

Tensor Tensor::zeros(Shape shape) {
    std::size_t n = shape_numel(shape);
    return Tensor(make_node(std::move(shape), std::vector<double>(n, 0.0)));
}

Tensor Tensor::constant(Shape shape, double fill) {
    std::size_t n = shape_numel(shape);
    return Tensor(make_node(std::move(shape), std::vector<double>(n, fill)));
}

Tensor Tensor::from(Shape shape, std::vector<double> data) {
    return Tensor(make_node(std::move(shape), std::move(data)));
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> data) {
    Tensor t = from(std::move(shape), std::move(data));
    t.node_->requires_grad = true;
    return t;
}

double Tensor::value() const {
    if (size() != 1) throw DimensionError("value(): tensor is not a scalar");
    return node_->value[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
    if (rank() != 2) throw DimensionError("at(): tensor is not a matrix");
    return node_->value[row * shape()[1] + col];
}

std::span<const double> Tensor::grad() const {
    node_->ensure_grad();
    return node_->grad;
}

void Tensor::zero_grad() {
    node_->grad.assign(node_->value.size(), 0.0);
    node_->backward_ran = false;
}

void Tensor::accumulate_grad(std::span<const double> g) {
    node_->ensure_grad();
    if (g.size() != node_->grad.size())
        throw DimensionError("accumulate_grad: size mismatch");
    for (std::size_t i = 0; i < g.size(); ++i) node_->grad[i] += g[i];
}

// ---------------------------------------------------------------------------
// ops

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    auto pa = a.node(), pb = b.node();
    return make_op(a.shape(), std::move(out), {a, b}, [pa, pb](detail::Node& n) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] += n.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape("sub", a, b);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    auto pa = a.node(), pb = b.node();
    return make_op(a.shape(), std::move(out), {a, b}, [pa, pb](detail::Node& n) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] -= n.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape("mul", a, b);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    auto pa = a.node(), pb = b.node();
    return make_op(a.shape(), std::move(out), {a, b}, [pa, pb](detail::Node& n) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i)
                pa->grad[i] += n.grad[i] * pb->value[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i)
                pb->grad[i] += n.grad[i] * pa->value[i];
        }
    });
}

Tensor scale(const Tensor& a, double factor) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
    auto pa = a.node();
    return make_op(a.shape(), std::move(out), {a}, [pa, factor](detail::Node& n) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] * factor;
    });
}

Tensor scalar_mul(const Tensor& scalar, const Tensor& t) {
    if (scalar.size() != 1) throw DimensionError("scalar_mul: first argument must be scalar");
    double s = scalar[0];
    std::vector<double> out(t.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * t[i];
    auto ps = scalar.node(), pt = t.node();
    return make_op(t.shape(), std::move(out), {scalar, t}, [ps, pt](detail::Node& n) {
        if (ps->requires_grad) {
            ps->ensure_grad();
            double acc = 0.0;
            for (std::size_t i = 0; i < n.grad.size(); ++i) acc += n.grad[i] * pt->value[i];
            ps->grad[0] += acc;
        }
        if (pt->requires_grad) {
            pt->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i)
                pt->grad[i] += n.grad[i] * ps->value[0];
        }
    });
}

Tensor scalar_div(const Tensor& t, const Tensor& scalar) {
    if (scalar.size() != 1) throw DimensionError("scalar_div: divisor must be scalar");
    double s = scalar[0];
    if (s == 0.0) throw NumericError("scalar_div: division by zero");
    std::vector<double> out(t.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = t[i] / s;
    auto pt = t.node(), ps = scalar.node();
    return make_op(t.shape(), std::move(out), {t, scalar}, [pt, ps](detail::Node& n) {
        double s_val = ps->value[0];
        if (pt->requires_grad) {
            pt->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pt->grad[i] += n.grad[i] / s_val;
        }
        if (ps->requires_grad) {
            ps->ensure_grad();
            double acc = 0.0;
            for (std::size_t i = 0; i < n.grad.size(); ++i)
                acc -= n.grad[i] * pt->value[i] / (s_val * s_val);
            ps->grad[0] += acc;
        }
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2) throw DimensionError("matmul: left operand must be a matrix");
    std::size_t m = a.shape()[0], k = a.shape()[1];
    if (b.rank() == 1) {
        if (b.shape()[0] != k) throw DimensionError("matmul: inner dimensions differ");
        std::vector<double> out(m, 0.0);
        for (std::size_t i = 0; i < m; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < k; ++j) acc += a.at(i, j) * b[j];
            out[i] = acc;
        }
        auto pa = a.node(), pb = b.node();
        return make_op({m}, std::move(out), {a, b}, [pa, pb, m, k](detail::Node& n) {
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < k; ++j)
                        pa->grad[i * k + j] += n.grad[i] * pb->value[j];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < k; ++j)
                        pb->grad[j] += n.grad[i] * pa->value[i * k + j];
            }
        });
    }
    if (b.rank() != 2 || b.shape()[0] != k)
        throw DimensionError("matmul: inner dimensions differ");
    std::size_t n_cols = b.shape()[1];
    std::vector<double> out(m * n_cols, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            double av = a.at(i, j);
            if (av == 0.0) continue;
            for (std::size_t c = 0; c < n_cols; ++c)
                out[i * n_cols + c] += av * b.at(j, c);
        }
    auto pa = a.node(), pb = b.node();
    return make_op({m, n_cols}, std::move(out), {a, b},
                   [pa, pb, m, k, n_cols](detail::Node& n) {
                       if (pa->requires_grad) {
                           pa->ensure_grad();
                           for (std::size_t i = 0; i < m; ++i)
                               for (std::size_t j = 0; j < k; ++j) {
                                   double acc = 0.0;
                                   for (std::size_t c = 0; c < n_cols; ++c)
                                       acc += n.grad[i * n_cols + c] * pb->value[j * n_cols + c];
                                   pa->grad[i * k + j] += acc;
                               }
                       }
                       if (pb->requires_grad) {
                           pb->ensure_grad();
                           for (std::size_t j = 0; j < k; ++j)
                               for (std::size_t c = 0; c < n_cols; ++c) {
                                   double acc = 0.0;
                                   for (std::size_t i = 0; i < m; ++i)
                                       acc += pa->value[i * k + j] * n.grad[i * n_cols + c];
                                   pb->grad[j * n_cols + c] += acc;
                               }
                       }
                   });
}

Tensor matvec_t(const Tensor& a, const Tensor& x) {
    if (a.rank() != 2 || x.rank() != 1 || a.shape()[0] != x.shape()[0])
        throw DimensionError("matvec_t: expects (m,n) matrix and (m) vector");
    std::size_t m = a.shape()[0], n_cols = a.shape()[1];
    std::vector<double> out(n_cols, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double xv = x[i];
        for (std::size_t j = 0; j < n_cols; ++j) out[j] += a.at(i, j) * xv;
    }
    auto pa = a.node(), px = x.node();
    return make_op({n_cols}, std::move(out), {a, x}, [pa, px, m, n_cols](detail::Node& n) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n_cols; ++j)
                    pa->grad[i * n_cols + j] += px->value[i] * n.grad[j];
        }
        if (px->requires_grad) {
            px->ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                double acc = 0.0;
                for (std::size_t j = 0; j < n_cols; ++j)
                    acc += pa->value[i * n_cols + j] * n.grad[j];
                px->grad[i] += acc;
            }
        }
    });
}

Tensor concat(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat: no inputs");
    std::size_t total = 0;
    for (const auto& p : parts) {
        check_rank1("concat", p);
        total += p.size();
    }
    std::vector<double> out;
    out.reserve(total);
    for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
    std::vector<std::shared_ptr<detail::Node>> nodes;
    nodes.reserve(parts.size());
    for (const auto& p : parts) nodes.push_back(p.node());
    return make_op({total}, std::move(out), parts, [nodes](detail::Node& n) {
        std::size_t offset = 0;
        for (auto& p : nodes) {
            if (p->requires_grad) {
                p->ensure_grad();
                for (std::size_t i = 0; i < p->value.size(); ++i)
                    p->grad[i] += n.grad[offset + i];
            }
            offset += p->value.size();
        }
    });
}

Tensor slice(const Tensor& v, std::size_t offset, std::size_t len) {
    check_rank1("slice", v);
    if (offset + len > v.size()) throw DimensionError("slice: range out of bounds");
    std::vector<double> out(v.values().begin() + offset, v.values().begin() + offset + len);
    auto pv = v.node();
    return make_op({len}, std::move(out), {v}, [pv, offset, len](detail::Node& n) {
        pv->ensure_grad();
        for (std::size_t i = 0; i < len; ++i) pv->grad[offset + i] += n.grad[i];
    });
}

Tensor select_row(const Tensor& m, std::size_t row) {
    if (m.rank() != 2) throw DimensionError("select_row: expects a matrix");
    std::size_t cols = m.shape()[1];
    if (row >= m.shape()[0]) throw DimensionError("select_row: row out of range");
    std::vector<double> out(m.values().begin() + row * cols,
                            m.values().begin() + (row + 1) * cols);
    auto pm = m.node();
    return make_op({cols}, std::move(out), {m}, [pm, row, cols](detail::Node& n) {
        pm->ensure_grad();
        for (std::size_t i = 0; i < cols; ++i) pm->grad[row * cols + i] += n.grad[i];
    });
}

Tensor pick(const Tensor& v, std::size_t index) {
    check_rank1("pick", v);
    if (index >= v.size()) throw DimensionError("pick: index out of range");
    auto pv = v.node();
    return make_op({1}, {v[index]}, {v}, [pv, index](detail::Node& n) {
        pv->ensure_grad();
        pv->grad[index] += n.grad[0];
    });
}

Tensor relu(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
    auto pa = a.node();
    return make_op(a.shape(), std::move(out), {a}, [pa](detail::Node& n) {
        pa->ensure_grad();
        // subgradient at 0 is 0
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            if (pa->value[i] > 0.0) pa->grad[i] += n.grad[i];
    });
}

Tensor sigmoid(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-a[i]));
    auto pa = a.node();
    return make_op(a.shape(), std::move(out), {a}, [pa](detail::Node& n) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            double s = n.value[i];
            pa->grad[i] += n.grad[i] * s * (1.0 - s);
        }
    });
}

Tensor cosine(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::cos(a[i]);
    auto pa = a.node();
    return make_op(a.shape(), std::move(out), {a}, [pa](detail::Node& n) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            pa->grad[i] -= n.grad[i] * std::sin(pa->value[i]);
    });
}

Tensor softmax(const Tensor& v) {
    check_rank1("softmax", v);
    double mx = *std::max_element(v.values().begin(), v.values().end());
    std::vector<double> out(v.size());
    double denom = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::exp(v[i] - mx);
        denom += out[i];
    }
    for (auto& o : out) o /= denom;
    auto pv = v.node();
    return make_op(v.shape(), std::move(out), {v}, [pv](detail::Node& n) {
        pv->ensure_grad();
        double inner = 0.0;
        for (std::size_t i = 0; i < n.grad.size(); ++i) inner += n.grad[i] * n.value[i];
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            pv->grad[i] += n.value[i] * (n.grad[i] - inner);
    });
}

Tensor log_softmax(const Tensor& v) {
    check_rank1("log_softmax", v);
    double mx = *std::max_element(v.values().begin(), v.values().end());
    double denom = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) denom += std::exp(v[i] - mx);
    double lse = mx + std::log(denom);
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] - lse;
    auto pv = v.node();
    return make_op(v.shape(), std::move(out), {v}, [pv](detail::Node& n) {
        pv->ensure_grad();
        double gsum = 0.0;
        for (double g : n.grad) gsum += g;
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            pv->grad[i] += n.grad[i] - std::exp(n.value[i]) * gsum;
    });
}

Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (double v : a.values()) acc += v;
    auto pa = a.node();
    return make_op({1}, {acc}, {a}, [pa](detail::Node& n) {
        pa->ensure_grad();
        for (auto& g : pa->grad) g += n.grad[0];
    });
}

Tensor mean(const Tensor& a) {
    if (a.size() == 0) throw DimensionError("mean: empty tensor");
    double acc = 0.0;
    for (double v : a.values()) acc += v;
    double inv = 1.0 / static_cast<double>(a.size());
    auto pa = a.node();
    return make_op({1}, {acc * inv}, {a}, [pa, inv](detail::Node& n) {
        pa->ensure_grad();
        for (auto& g : pa->grad) g += n.grad[0] * inv;
    });
}

Tensor dot(const Tensor& a, const Tensor& b) {
    check_rank1("dot", a);
    check_same_shape("dot", a, b);
    return sum(mul(a, b));
}

Tensor layer_norm(const Tensor& v, double eps) {
    check_rank1("layer_norm", v);
    std::size_t n_el = v.size();
    double mu = 0.0;
    for (double x : v.values()) mu += x;
    mu /= static_cast<double>(n_el);
    double var = 0.0;
    for (double x : v.values()) var += (x - mu) * (x - mu);
    var /= static_cast<double>(n_el);
    double inv_sigma = 1.0 / std::sqrt(var + eps);
    std::vector<double> out(n_el);
    for (std::size_t i = 0; i < n_el; ++i) out[i] = (v[i] - mu) * inv_sigma;
    auto pv = v.node();
    return make_op(v.shape(), std::move(out), {v}, [pv, inv_sigma](detail::Node& n) {
        pv->ensure_grad();
        std::size_t m = n.grad.size();
        double g_mean = 0.0, gy_mean = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            g_mean += n.grad[i];
            gy_mean += n.grad[i] * n.value[i];
        }
        g_mean /= static_cast<double>(m);
        gy_mean /= static_cast<double>(m);
        for (std::size_t i = 0; i < m; ++i)
            pv->grad[i] += inv_sigma * (n.grad[i] - g_mean - n.value[i] * gy_mean);
    });
}

Tensor nll_loss(const Tensor& scores, std::size_t target, std::size_t zero_count) {
    check_rank1("nll_loss", scores);
    if (target >= scores.size()) throw DimensionError("nll_loss: target out of range");
    double mx = *std::max_element(scores.values().begin(), scores.values().end());
    if (zero_count > 0) mx = std::max(mx, 0.0);
    double denom = static_cast<double>(zero_count) * std::exp(-mx);
    for (double s : scores.values()) denom += std::exp(s - mx);
    double lse = mx + std::log(denom);
    double loss = lse - scores[target];
    auto pv = scores.node();
    return make_op({1}, {loss}, {scores}, [pv, target, lse](detail::Node& n) {
        pv->ensure_grad();
        double g = n.grad[0];
        for (std::size_t i = 0; i < pv->value.size(); ++i) {
            double p = std::exp(pv->value[i] - lse);
            pv->grad[i] += g * (p - (i == target ? 1.0 : 0.0));
        }
    });
}

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1)
        throw DimensionError("backward: loss must be a defined scalar");
    auto root = loss.node();
    if (root->backward_ran)
        throw StateError("backward: loss already consumed; reset gradients first");
    if (!std::isfinite(root->value[0])) throw NumericError("backward: non-finite loss");
    root->backward_ran = true;
    if (!root->requires_grad) return;  // nothing reachable requires a gradient

    // Reachable tape, executed in reverse creation order.
    std::vector<detail::Node*> order;
    std::vector<std::shared_ptr<detail::Node>> stack{root};
    std::vector<std::uint64_t> seen;
    auto mark = [&seen](std::uint64_t id) {
        auto it = std::lower_bound(seen.begin(), seen.end(), id);
        if (it != seen.end() && *it == id) return false;
        seen.insert(it, id);
        return true;
    };
    mark(root->id);
    while (!stack.empty()) {
        auto n = stack.back();
        stack.pop_back();
        order.push_back(n.get());
        for (auto& p : n->parents)
            if (p->requires_grad && mark(p->id)) stack.push_back(p);
    }
    std::sort(order.begin(), order.end(),
              [](const detail::Node* a, const detail::Node* b) { return a->id > b->id; });

    root->ensure_grad();
    root->grad[0] += 1.0;
    for (detail::Node* n : order) {
        if (n->backward_fn) {
            n->ensure_grad();
            n->backward_fn(*n);
        }
    }
}

}  // namespace tkgr::num
