#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "edgereg/tensor.hpp"

namespace edgereg {

// Reverse-mode tape. Nodes are created in forward order and replayed in
// reverse sequence order on backward(). Single-threaded by design.
template <class T>
struct Node {
    Tensor<T> val;
    Tensor<T> grad; // lazily allocated
    bool requires_grad = false;
    int64_t seq = 0;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node*)> backfn;

    Tensor<T>& ensure_grad() {
        if (grad.empty()) grad = Tensor<T>::zeros(val.shape());
        return grad;
    }
};

int64_t next_seq();

template <class T>
class Var {
  public:
    Var() = default;
    explicit Var(std::shared_ptr<Node<T>> n) : n_(std::move(n)) {}

    static Var leaf(Tensor<T> v, bool requires_grad) {
        auto n = std::make_shared<Node<T>>();
        n->val = std::move(v);
        n->requires_grad = requires_grad;
        n->seq = next_seq();
        return Var(std::move(n));
    }

    static Var constant(Tensor<T> v) { return leaf(std::move(v), false); }

    bool defined() const { return bool(n_); }
    Node<T>* node() const { return n_.get(); }
    const std::shared_ptr<Node<T>>& ptr() const { return n_; }
    Tensor<T>& val() const { return n_->val; }
    Tensor<T>& grad() const { return n_->ensure_grad(); }
    bool requires_grad() const { return n_ && n_->requires_grad; }
    const std::vector<int>& shape() const { return n_->val.shape(); }

    // scalar access for rank-0/1-element vars
    T item() const {
        require_shape(n_->val.numel() == 1, "item(): tensor is not scalar");
        return n_->val[0];
    }

  private:
    std::shared_ptr<Node<T>> n_;
};

template <class T>
Var<T> make_op(Tensor<T> val, std::vector<std::shared_ptr<Node<T>>> parents,
               std::function<void(Node<T>*)> backfn) {
    auto n = std::make_shared<Node<T>>();
    n->val = std::move(val);
    for (auto& p : parents)
        if (p && p->requires_grad) n->requires_grad = true;
    n->parents = std::move(parents);
    n->seq = next_seq();
    if (n->requires_grad) n->backfn = std::move(backfn);
    return Var<T>(std::move(n));
}

// Runs reverse accumulation from a scalar root.
template <class T>
void backward(const Var<T>& root);

// ---- elementwise / structural ops ----
template <class T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> scale(const Var<T>& a, T s);
template <class T> Var<T> add_scalar(const Var<T>& a, T s);
template <class T> Var<T> relu(const Var<T>& a);
template <class T> Var<T> leaky_relu(const Var<T>& a, T slope);
template <class T> Var<T> vsum(const Var<T>& a);
template <class T> Var<T> vmean(const Var<T>& a);

// concatenate along axis 0 (the channel axis for (C,Z,Y,X) maps)
template <class T> Var<T> concat_ch(const std::vector<Var<T>>& xs);
// gather channels along axis 0
template <class T> Var<T> select_ch(const Var<T>& a, const std::vector<int>& idx);
// (C,Z,Y,X) -> (C): mean over spatial axes
template <class T> Var<T> global_avg_pool(const Var<T>& a);
// y = W x + b with x (n), W (m,n), b (m)
template <class T> Var<T> linear(const Var<T>& x, const Var<T>& W, const Var<T>& b);

} // namespace edgereg
