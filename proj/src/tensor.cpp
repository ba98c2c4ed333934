#include "hqnn/tensor.hpp"

#include <cmath>
#include <sstream>

namespace hqnn::autodiff {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape)
        n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i)
        os << (i ? "," : "") << shape[i];
    os << ")";
    return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    auto s = std::make_shared<TensorStorage>();
    s->data.assign(shape_numel(shape), value);
    s->shape = std::move(shape);
    s->requires_grad = requires_grad;
    return Tensor(std::move(s));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data,
                         bool requires_grad) {
    if (shape_numel(shape) != data.size())
        throw ShapeError("tensor: shape " + shape_str(shape) + " implies " +
                         std::to_string(shape_numel(shape)) +
                         " elements, got " + std::to_string(data.size()));
    auto s = std::make_shared<TensorStorage>();
    s->shape = std::move(shape);
    s->data = std::move(data);
    s->requires_grad = requires_grad;
    return Tensor(std::move(s));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

double Tensor::item() const {
    if (size() != 1)
        throw ContractError("item(): tensor has " + std::to_string(size()) +
                            " elements, expected 1");
    return s_->data[0];
}

Tensor& Tensor::set_requires_grad(bool rg) {
    s_->requires_grad = rg;
    return *this;
}

std::vector<double>& Tensor::grad() {
    ensure_grad();
    return s_->grad;
}

const std::vector<double>& Tensor::grad() const {
    if (s_->grad.empty())
        throw ContractError("grad(): no gradient present on this tensor");
    return s_->grad;
}

void Tensor::ensure_grad() {
    if (s_->grad.empty())
        s_->grad.assign(s_->data.size(), 0.0);
}

void Tensor::zero_grad() {
    s_->grad.assign(s_->data.size(), 0.0);
}

Tensor Tensor::clone() const {
    auto s = std::make_shared<TensorStorage>();
    s->shape = s_->shape;
    s->data = s_->data;
    s->requires_grad = s_->requires_grad;
    return Tensor(std::move(s));
}

bool Tensor::all_finite() const {
    for (double v : s_->data)
        if (!std::isfinite(v))
            return false;
    return true;
}

int Graph::add_node(const char* op, std::vector<int> inputs,
                    const Tensor& output, BackwardFn fn) {
    int id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{op, std::move(inputs), output.storage(),
                          std::move(fn)});
    output.storage()->node = id;
    return id;
}

void Graph::backward(const Tensor& loss) {
    if (loss.size() != 1)
        throw ContractError("backward: loss must be scalar, got shape " +
                            shape_str(loss.shape()));
    // Reset node-output gradients so a repeated call re-derives the flow
    // from scratch while leaf gradients keep accumulating.
    for (auto& n : nodes_)
        n.out->grad.assign(n.out->data.size(), 0.0);
    loss.storage()->grad.assign(1, 1.0);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
        it->fn();
}

} // namespace hqnn::autodiff
