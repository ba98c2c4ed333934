#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "hqnn/errors.hpp"

namespace hqnn::autodiff {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorStorage {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad; // empty while no gradient has been requested
    bool requires_grad = false;
    int node = -1; // id into the active computation graph, -1 = leaf
};

/// Dense row-major f64 tensor. Copying a Tensor copies the handle; the
/// underlying storage (and its gradient) is shared.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return s_ != nullptr; }
    const Shape& shape() const { return s_->shape; }
    std::size_t rank() const { return s_->shape.size(); }
    std::size_t size() const { return s_->data.size(); }

    double* data() { return s_->data.data(); }
    const double* data() const { return s_->data.data(); }
    std::vector<double>& data_vec() { return s_->data; }
    const std::vector<double>& data_vec() const { return s_->data; }

    /// Value of a rank-anything single-element tensor.
    double item() const;

    bool requires_grad() const { return s_->requires_grad; }
    Tensor& set_requires_grad(bool rg);

    bool has_grad() const { return !s_->grad.empty(); }
    std::vector<double>& grad();
    const std::vector<double>& grad() const;
    void ensure_grad();
    void zero_grad();

    int node() const { return s_->node; }
    bool on_graph() const { return s_->node >= 0; }

    /// Deep copy, detached from any graph.
    Tensor clone() const;

    bool all_finite() const;

    const std::shared_ptr<TensorStorage>& storage() const { return s_; }

  private:
    explicit Tensor(std::shared_ptr<TensorStorage> s) : s_(std::move(s)) {}
    std::shared_ptr<TensorStorage> s_;
};

/// Append-only reverse-mode tape. Node order is topological by construction;
/// backward() replays the closures in strict reverse append order.
class Graph {
  public:
    using BackwardFn = std::function<void()>;

    int add_node(const char* op, std::vector<int> inputs, const Tensor& output,
                 BackwardFn fn);

    /// Seeds d(loss)/d(loss) = 1 and accumulates into every reachable
    /// gradient. Intermediate (node-output) gradients are reset per call;
    /// leaf gradients accumulate across calls.
    void backward(const Tensor& loss);

    std::size_t node_count() const { return nodes_.size(); }
    const char* op_tag(int node) const { return nodes_.at(node).op; }
    const std::vector<int>& node_inputs(int node) const {
        return nodes_.at(node).inputs;
    }

    void clear() { nodes_.clear(); }

  private:
    struct Node {
        const char* op;
        std::vector<int> inputs;
        std::shared_ptr<TensorStorage> out;
        BackwardFn fn;
    };
    std::vector<Node> nodes_;
};

/// Accumulation target for backward closures; allocates zeros on first use.
inline std::vector<double>& grad_ref(TensorStorage& s) {
    if (s.grad.empty())
        s.grad.assign(s.data.size(), 0.0);
    return s.grad;
}

} // namespace hqnn::autodiff
