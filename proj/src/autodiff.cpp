#include "edgereg/autodiff.hpp"

#include <algorithm>
#include <unordered_set>

namespace edgereg {

int64_t next_seq() {
    static int64_t counter = 0;
    return ++counter;
}

template <class T>
void backward(const Var<T>& root) {
    require(root.defined(), "backward: undefined var");
    require_shape(root.val().numel() == 1, "backward: root must be scalar");
    if (!root.requires_grad()) return;

    root.node()->ensure_grad()[0] = T(1);

    // collect reachable nodes (iterative DFS), then replay in reverse creation order
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<Node<T>*> stack{root.node()};
    seen.insert(root.node());
    while (!stack.empty()) {
        Node<T>* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (auto& p : n->parents)
            if (p && p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
    std::sort(order.begin(), order.end(),
              [](const Node<T>* a, const Node<T>* b) { return a->seq > b->seq; });
    for (Node<T>* n : order)
        if (n->backfn && !n->grad.empty()) n->backfn(n);
}

template <class T>
static void check_same(const Var<T>& a, const Var<T>& b, const char* who) {
    require_shape(a.val().same_shape(b.val()), std::string(who) + ": shape mismatch " +
                                                   a.val().shape_str() + " vs " + b.val().shape_str());
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    check_same(a, b, "add");
    Tensor<T> out = a.val().clone();
    axpy(T(1), b.val(), out);
    return make_op<T>(std::move(out), {a.ptr(), b.ptr()}, [ap = a.node(), bp = b.node()](Node<T>* self) {
        if (ap->requires_grad) axpy(T(1), self->grad, ap->ensure_grad());
        if (bp->requires_grad) axpy(T(1), self->grad, bp->ensure_grad());
    });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    check_same(a, b, "sub");
    Tensor<T> out = a.val().clone();
    axpy(T(-1), b.val(), out);
    return make_op<T>(std::move(out), {a.ptr(), b.ptr()}, [ap = a.node(), bp = b.node()](Node<T>* self) {
        if (ap->requires_grad) axpy(T(1), self->grad, ap->ensure_grad());
        if (bp->requires_grad) axpy(T(-1), self->grad, bp->ensure_grad());
    });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    check_same(a, b, "mul");
    Tensor<T> out(a.val().shape());
    const T* av = a.val().data();
    const T* bv = b.val().data();
    T* ov = out.data();
    for (size_t i = 0; i < out.numel(); ++i) ov[i] = av[i] * bv[i];
    return make_op<T>(std::move(out), {a.ptr(), b.ptr()}, [ap = a.node(), bp = b.node()](Node<T>* self) {
        const T* g = self->grad.data();
        const size_t n = self->grad.numel();
        if (ap->requires_grad) {
            T* ag = ap->ensure_grad().data();
            const T* bv2 = bp->val.data();
            for (size_t i = 0; i < n; ++i) ag[i] += g[i] * bv2[i];
        }
        if (bp->requires_grad) {
            T* bg = bp->ensure_grad().data();
            const T* av2 = ap->val.data();
            for (size_t i = 0; i < n; ++i) bg[i] += g[i] * av2[i];
        }
    });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
    Tensor<T> out(a.val().shape());
    const T* av = a.val().data();
    T* ov = out.data();
    for (size_t i = 0; i < out.numel(); ++i) ov[i] = av[i] * s;
    return make_op<T>(std::move(out), {a.ptr()}, [ap = a.node(), s](Node<T>* self) {
        if (ap->requires_grad) axpy(s, self->grad, ap->ensure_grad());
    });
}

template <class T>
Var<T> add_scalar(const Var<T>& a, T s) {
    Tensor<T> out = a.val().clone();
    for (auto& v : out) v += s;
    return make_op<T>(std::move(out), {a.ptr()}, [ap = a.node()](Node<T>* self) {
        if (ap->requires_grad) axpy(T(1), self->grad, ap->ensure_grad());
    });
}

template <class T>
Var<T> relu(const Var<T>& a) {
    Tensor<T> out(a.val().shape());
    const T* av = a.val().data();
    T* ov = out.data();
    for (size_t i = 0; i < out.numel(); ++i) ov[i] = av[i] > T(0) ? av[i] : T(0);
    return make_op<T>(std::move(out), {a.ptr()}, [ap = a.node()](Node<T>* self) {
        if (!ap->requires_grad) return;
        T* ag = ap->ensure_grad().data();
        const T* g = self->grad.data();
        const T* av2 = ap->val.data();
        // unconditional store (blend) so the loop vectorizes
        for (size_t i = 0; i < self->grad.numel(); ++i) ag[i] += av2[i] > T(0) ? g[i] : T(0);
    });
}

template <class T>
Var<T> leaky_relu(const Var<T>& a, T slope) {
    Tensor<T> out(a.val().shape());
    const T* av = a.val().data();
    T* ov = out.data();
    for (size_t i = 0; i < out.numel(); ++i) ov[i] = av[i] > T(0) ? av[i] : slope * av[i];
    return make_op<T>(std::move(out), {a.ptr()}, [ap = a.node(), slope](Node<T>* self) {
        if (!ap->requires_grad) return;
        T* ag = ap->ensure_grad().data();
        const T* g = self->grad.data();
        const T* av2 = ap->val.data();
        // select on the multiplier (g*1 is exact) so the loop vectorizes
        for (size_t i = 0; i < self->grad.numel(); ++i)
            ag[i] += g[i] * (av2[i] > T(0) ? T(1) : slope);
    });
}

template <class T>
Var<T> vsum(const Var<T>& a) {
    T s = 0;
    for (const T& v : a.val()) s += v;
    Tensor<T> out({1});
    out[0] = s;
    return make_op<T>(std::move(out), {a.ptr()}, [ap = a.node()](Node<T>* self) {
        if (!ap->requires_grad) return;
        T* ag = ap->ensure_grad().data();
        const T g = self->grad[0];
        for (size_t i = 0; i < ap->val.numel(); ++i) ag[i] += g;
    });
}

template <class T>
Var<T> vmean(const Var<T>& a) {
    require_shape(a.val().numel() > 0, "mean of empty tensor");
    return scale(vsum(a), T(1) / T(a.val().numel()));
}

template <class T>
Var<T> concat_ch(const std::vector<Var<T>>& xs) {
    require(!xs.empty(), "concat: no inputs");
    const auto& s0 = xs[0].shape();
    int ctot = 0;
    size_t inner = xs[0].val().numel() / size_t(s0[0]);
    for (const auto& x : xs) {
        const auto& s = x.shape();
        require_shape(s.size() == s0.size(), "concat: rank mismatch");
        for (size_t i = 1; i < s.size(); ++i)
            require_shape(s[i] == s0[i], "concat: trailing shape mismatch");
        ctot += s[0];
    }
    std::vector<int> oshape = s0;
    oshape[0] = ctot;
    Tensor<T> out(oshape);
    size_t off = 0;
    for (const auto& x : xs) {
        std::copy(x.val().begin(), x.val().end(), out.begin() + off);
        off += x.val().numel();
    }
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::vector<Node<T>*> raw;
    for (const auto& x : xs) {
        parents.push_back(x.ptr());
        raw.push_back(x.node());
    }
    (void)inner;
    return make_op<T>(std::move(out), std::move(parents), [raw](Node<T>* self) {
        size_t off2 = 0;
        const T* g = self->grad.data();
        for (Node<T>* p : raw) {
            const size_t n = p->val.numel();
            if (p->requires_grad) {
                T* pg = p->ensure_grad().data();
                for (size_t i = 0; i < n; ++i) pg[i] += g[off2 + i];
            }
            off2 += n;
        }
    });
}

template <class T>
Var<T> select_ch(const Var<T>& a, const std::vector<int>& idx) {
    const auto& s = a.shape();
    require_shape(!s.empty(), "select: rank 0");
    const size_t inner = a.val().numel() / size_t(s[0]);
    for (int c : idx) require(c >= 0 && c < s[0], "select: channel index out of range");
    std::vector<int> oshape = s;
    oshape[0] = int(idx.size());
    Tensor<T> out(oshape);
    for (size_t k = 0; k < idx.size(); ++k)
        std::copy(a.val().begin() + size_t(idx[k]) * inner, a.val().begin() + (size_t(idx[k]) + 1) * inner,
                  out.begin() + k * inner);
    return make_op<T>(std::move(out), {a.ptr()}, [ap = a.node(), idx, inner](Node<T>* self) {
        if (!ap->requires_grad) return;
        T* ag = ap->ensure_grad().data();
        const T* g = self->grad.data();
        for (size_t k = 0; k < idx.size(); ++k) {
            T* dst = ag + size_t(idx[k]) * inner;
            const T* src = g + k * inner;
            for (size_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
    });
}

template <class T>
Var<T> global_avg_pool(const Var<T>& a) {
    const auto& s = a.shape();
    require_shape(s.size() == 4, "gap: expected (C,Z,Y,X)");
    const int C = s[0];
    const size_t inner = a.val().numel() / size_t(C);
    Tensor<T> out({C});
    const T* av = a.val().data();
    for (int c = 0; c < C; ++c) {
        T acc = 0;
        const T* p = av + size_t(c) * inner;
#pragma omp simd reduction(+ : acc)
        for (size_t i = 0; i < inner; ++i) acc += p[i];
        out[c] = acc / T(inner);
    }
    return make_op<T>(std::move(out), {a.ptr()}, [ap = a.node(), C, inner](Node<T>* self) {
        if (!ap->requires_grad) return;
        T* ag = ap->ensure_grad().data();
        const T* g = self->grad.data();
        for (int c = 0; c < C; ++c) {
            const T gc = g[c] / T(inner);
            T* p = ag + size_t(c) * inner;
            for (size_t i = 0; i < inner; ++i) p[i] += gc;
        }
    });
}

template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& W, const Var<T>& b) {
    const auto& xs = x.shape();
    const auto& ws = W.shape();
    require_shape(xs.size() == 1 && ws.size() == 2 && b.shape().size() == 1,
                  "linear: expected x(n), W(m,n), b(m)");
    const int n = xs[0], m = ws[0];
    require_shape(ws[1] == n && b.shape()[0] == m, "linear: dimension mismatch");
    Tensor<T> out({m});
    const T* xv = x.val().data();
    const T* wv = W.val().data();
    const T* bv = b.val().data();
    for (int i = 0; i < m; ++i) {
        T acc = bv[i];
        const T* row = wv + size_t(i) * n;
        for (int j = 0; j < n; ++j) acc += row[j] * xv[j];
        out[i] = acc;
    }
    return make_op<T>(std::move(out), {x.ptr(), W.ptr(), b.ptr()},
                      [xp = x.node(), wp = W.node(), bp = b.node(), m, n](Node<T>* self) {
                          const T* g = self->grad.data();
                          if (bp->requires_grad) {
                              T* bg = bp->ensure_grad().data();
                              for (int i = 0; i < m; ++i) bg[i] += g[i];
                          }
                          if (wp->requires_grad) {
                              T* wg = wp->ensure_grad().data();
                              const T* xv2 = xp->val.data();
                              for (int i = 0; i < m; ++i)
                                  for (int j = 0; j < n; ++j) wg[size_t(i) * n + j] += g[i] * xv2[j];
                          }
                          if (xp->requires_grad) {
                              T* xg = xp->ensure_grad().data();
                              const T* wv2 = wp->val.data();
                              for (int i = 0; i < m; ++i)
                                  for (int j = 0; j < n; ++j) xg[j] += g[i] * wv2[size_t(i) * n + j];
                          }
                      });
}

#define EDGEREG_INSTANTIATE(T)                                                                     \
    template void backward<T>(const Var<T>&);                                                      \
    template Var<T> add<T>(const Var<T>&, const Var<T>&);                                          \
    template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                          \
    template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                          \
    template Var<T> scale<T>(const Var<T>&, T);                                                    \
    template Var<T> add_scalar<T>(const Var<T>&, T);                                               \
    template Var<T> relu<T>(const Var<T>&);                                                        \
    template Var<T> leaky_relu<T>(const Var<T>&, T);                                               \
    template Var<T> vsum<T>(const Var<T>&);                                                        \
    template Var<T> vmean<T>(const Var<T>&);                                                       \
    template Var<T> concat_ch<T>(const std::vector<Var<T>>&);                                      \
    template Var<T> select_ch<T>(const Var<T>&, const std::vector<int>&);                          \
    template Var<T> global_avg_pool<T>(const Var<T>&);                                             \
    template Var<T> linear<T>(const Var<T>&, const Var<T>&, const Var<T>&);

EDGEREG_INSTANTIATE(float)
EDGEREG_INSTANTIATE(double)
#undef EDGEREG_INSTANTIATE

} // namespace edgereg
