#include "hsrnet/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace hsrnet {

std::string Shape4::str() const {
    std::ostringstream os;
    os << "(" << n << "," << c << "," << h << "," << w << ")";
    return os.str();
}

namespace detail {

uint64_t next_seq() {
    static std::atomic<uint64_t> counter{0};
    return ++counter;
}

}  // namespace detail

namespace {

thread_local bool g_grad_enabled = true;

std::shared_ptr<detail::TensorNode> make_node(Shape4 s, std::vector<float> values) {
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = s;
    node->data = std::move(values);
    node->seq = detail::next_seq();
    return node;
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Tensor Tensor::zeros(Shape4 s) {
    return wrap(make_node(s, std::vector<float>(static_cast<size_t>(s.numel()), 0.0f)));
}

Tensor Tensor::full(Shape4 s, float value) {
    return wrap(make_node(s, std::vector<float>(static_cast<size_t>(s.numel()), value)));
}

Tensor Tensor::from_data(Shape4 s, std::vector<float> values, bool requires_grad) {
    if (static_cast<int64_t>(values.size()) != s.numel()) {
        throw std::invalid_argument("tensor: data length " + std::to_string(values.size()) +
                                    " does not match shape " + s.str());
    }
    auto node = make_node(s, std::move(values));
    node->requires_grad = requires_grad;
    return wrap(node);
}

Tensor Tensor::wrap(std::shared_ptr<detail::TensorNode> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
}

const Shape4& Tensor::shape() const { return node_->shape; }
int64_t Tensor::numel() const { return node_->shape.numel(); }
const std::vector<float>& Tensor::data() const { return node_->data; }
std::vector<float>& Tensor::mutable_data() { return node_->data; }

const std::vector<float>* Tensor::grad() const {
    if (!node_ || node_->grad.empty()) return nullptr;
    return &node_->grad;
}

void Tensor::zero_grad() {
    if (node_) node_->grad.clear();
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool v) { node_->requires_grad = v; }

const std::string& Tensor::label() const { return node_->label; }
void Tensor::set_label(std::string label) { node_->label = std::move(label); }

float Tensor::at(int64_t n, int64_t c, int64_t h, int64_t w) const {
    const auto& s = node_->shape;
    return node_->data[static_cast<size_t>(((n * s.c + c) * s.h + h) * s.w + w)];
}

double Tensor::sum() const {
    double acc = 0.0;
    for (float v : node_->data) acc += v;
    return acc;
}

Tensor Tensor::clone() const {
    return from_data(node_->shape, node_->data, false);
}

void backward(const Tensor& root) {
    if (!root.defined() || !root.requires_grad()) return;

    // Creation order is a topological order for this immutable DAG.
    std::vector<detail::TensorNode*> nodes;
    std::unordered_set<detail::TensorNode*> seen;
    std::vector<detail::TensorNode*> stack{root.node().get()};
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto* n = stack.back();
        stack.pop_back();
        nodes.push_back(n);
        for (const auto& p : n->parents) {
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    std::sort(nodes.begin(), nodes.end(),
              [](const detail::TensorNode* a, const detail::TensorNode* b) { return a->seq > b->seq; });

    auto* root_node = root.node().get();
    root_node->ensure_grad();
    std::fill(root_node->grad.begin(), root_node->grad.end(), 1.0f);

    for (auto* n : nodes) {
        if (n->grad.empty() || !n->backward_fn) continue;
        n->backward_fn(*n);
    }
}

Parameter::Parameter(std::string name, Tensor value, bool trainable)
    : name_(std::move(name)), value_(std::move(value)), trainable_(trainable) {
    value_.set_requires_grad(true);
    value_.set_label(name_);
}

std::optional<std::string> first_non_finite(const Tensor& root) {
    if (!root.defined()) return std::nullopt;
    std::vector<detail::TensorNode*> nodes;
    std::unordered_set<detail::TensorNode*> seen;
    std::vector<detail::TensorNode*> stack{root.node().get()};
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto* n = stack.back();
        stack.pop_back();
        nodes.push_back(n);
        for (const auto& p : n->parents) {
            if (seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    std::sort(nodes.begin(), nodes.end(),
              [](const detail::TensorNode* a, const detail::TensorNode* b) { return a->seq < b->seq; });
    for (auto* n : nodes) {
        for (float v : n->data) {
            if (!std::isfinite(v)) {
                return n->label.empty() ? ("tensor#" + std::to_string(n->seq)) : n->label;
            }
        }
    }
    return std::nullopt;
}

}  // namespace hsrnet
