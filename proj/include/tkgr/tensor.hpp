#pragma once
// Dense f64 tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap shared handle onto a tape node. Ops record their
// parents and a backward closure; backward() visits the reachable tape in
// reverse creation order and accumulates into grad buffers. The tape for a
// training step is freed when the last handle goes out of scope.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tkgr::num {

using Shape = std::vector<std::size_t>;

struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct StateError : std::logic_error {
    using std::logic_error::logic_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;   // allocated on first use, same length as value
    bool requires_grad = false;
    bool backward_ran = false;  // set on a loss node once backward() consumed it
    std::uint64_t id = 0;       // creation order; parents always have smaller ids
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

std::uint64_t next_node_id();

}  // namespace detail

// Turns off tape recording in a scope (evaluation paths).
class NoGrad {
public:
    NoGrad();
    ~NoGrad();
    NoGrad(const NoGrad&) = delete;
    NoGrad& operator=(const NoGrad&) = delete;

    static bool recording();

private:
    bool previous_;
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor constant(Shape shape, double fill);
    static Tensor from(Shape shape, std::vector<double> data);
    static Tensor scalar(double v);
    // A leaf that participates in optimization.
    static Tensor parameter(Shape shape, std::vector<double> data);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t size() const { return node_->value.size(); }
    std::size_t rank() const { return node_->shape.size(); }

    std::span<const double> values() const { return node_->value; }
    std::vector<double>& mutable_values() { return node_->value; }

    double value() const;              // scalar read
    double operator[](std::size_t i) const { return node_->value[i]; }
    double at(std::size_t row, std::size_t col) const;

    bool requires_grad() const { return node_->requires_grad; }
    std::span<const double> grad() const;
    void zero_grad();
    void accumulate_grad(std::span<const double> g);

    std::shared_ptr<detail::Node> node() const { return node_; }

private:
    friend Tensor make_op(Shape shape, std::vector<double> value,
                          std::vector<Tensor> parents,
                          std::function<void(detail::Node&)> backward_fn);
    explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
    std::shared_ptr<detail::Node> node_;
};

// Elementwise and structural ops. All run on f64 and record the tape unless
// NoGrad is active or no parent requires a gradient.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor scalar_mul(const Tensor& scalar, const Tensor& t);
Tensor scalar_div(const Tensor& t, const Tensor& scalar);
Tensor matmul(const Tensor& a, const Tensor& b);     // (m,k)x(k,n) or (m,k)x(k)
Tensor matvec_t(const Tensor& a, const Tensor& x);   // a^T x for a (m,n), x (m)
Tensor concat(const std::vector<Tensor>& parts);     // rank-1 concatenation
Tensor slice(const Tensor& v, std::size_t offset, std::size_t len);
Tensor select_row(const Tensor& m, std::size_t row);
Tensor pick(const Tensor& v, std::size_t index);     // rank-1 gather -> scalar
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor cosine(const Tensor& a);
Tensor softmax(const Tensor& v);      // rank-1
Tensor log_softmax(const Tensor& v);  // rank-1
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor dot(const Tensor& a, const Tensor& b);
Tensor layer_norm(const Tensor& v, double eps = 1e-5);

// -log softmax(scores)[target], with `zero_count` extra logits pinned at 0 in
// the denominator (entities the subgraph never reached).
Tensor nll_loss(const Tensor& scores, std::size_t target, std::size_t zero_count = 0);

// Reverse pass from a scalar loss. Errors if the loss was already consumed.
void backward(const Tensor& loss);

}  // namespace tkgr::num
