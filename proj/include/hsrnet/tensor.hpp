#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace hsrnet {

/// Dense 4-D extent (batch, channels, height, width). Row-major storage,
/// width fastest.
struct Shape4 {
    int64_t n = 0;
    int64_t c = 0;
    int64_t h = 0;
    int64_t w = 0;

    int64_t numel() const { return n * c * h * w; }
    bool operator==(const Shape4&) const = default;
    std::string str() const;
};

/// Thrown when training produces a NaN/Inf value.
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Thrown by file readers/writers on bad magic, truncation, malformed rows.
struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

struct TensorNode {
    Shape4 shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty until backward touches this node
    bool requires_grad = false;
    uint64_t seq = 0;         // creation order; doubles as a topological key
    std::string label;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;

    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0f);
    }
};

uint64_t next_seq();

}  // namespace detail

/// True when ops should record the backward graph (default). Inference and
/// finite-difference probes run with it off via NoGradGuard.
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

/// Value-semantic handle to an immutable dense f32 tensor. Ops produce new
/// tensors; reductions accumulate in f64 before the f32 store.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape4 s);
    static Tensor full(Shape4 s, float value);
    static Tensor from_data(Shape4 s, std::vector<float> values, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape4& shape() const;
    int64_t numel() const;

    const std::vector<float>& data() const;
    /// In-place access; reserved for parameter updates and test probes.
    std::vector<float>& mutable_data();

    /// Accumulated gradient, or nullptr when backward never reached this node.
    const std::vector<float>* grad() const;
    void zero_grad();

    bool requires_grad() const;
    void set_requires_grad(bool v);

    const std::string& label() const;
    void set_label(std::string label);

    float at(int64_t n, int64_t c, int64_t h, int64_t w) const;
    double sum() const;  // f64 accumulation
    Tensor clone() const;  // deep copy, detached from the graph

    const std::shared_ptr<detail::TensorNode>& node() const { return node_; }
    static Tensor wrap(std::shared_ptr<detail::TensorNode> n);

private:
    std::shared_ptr<detail::TensorNode> node_;
};

/// Reverse-mode sweep from `root`, seeded with ones.
void backward(const Tensor& root);

/// Named, trainable tensor. Names are unique within a model and drive the
/// checkpoint layout.
class Parameter {
public:
    Parameter() = default;
    Parameter(std::string name, Tensor value, bool trainable = true);

    const std::string& name() const { return name_; }
    Tensor& value() { return value_; }
    const Tensor& value() const { return value_; }
    bool trainable() const { return trainable_; }

private:
    std::string name_;
    Tensor value_;
    bool trainable_ = true;
};

/// Scans the graph below `root` in creation order and reports the label of
/// the first tensor holding a NaN/Inf, if any.
std::optional<std::string> first_non_finite(const Tensor& root);

}  // namespace hsrnet
