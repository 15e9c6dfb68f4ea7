#include "sota/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "sota/common.hpp"

namespace sota {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MMap = Eigen::Map<RowMat>;
using CMap = Eigen::Map<const RowMat>;

thread_local bool g_grad_enabled = true;

MMap map(std::vector<double>& v, int r, int c) { return MMap(v.data(), r, c); }
CMap cmap(const std::vector<double>& v, int r, int c) { return CMap(v.data(), r, c); }

bool any_wants_grad(const std::vector<Tensor>& ts) {
    for (const auto& t : ts)
        if (t->wants_grad()) return true;
    return false;
}

Tensor make_node(int rows, int cols) {
    auto t = std::make_shared<TensorNode>();
    t->rows = rows;
    t->cols = cols;
    t->value.assign(size_t(rows) * cols, 0.0);
    return t;
}

// attach the tape record unless recording is off or no input needs it
void record(Tensor& out, std::vector<Tensor> parents,
            std::function<void(TensorNode&, const GradResolver&)> fn) {
    if (!g_grad_enabled || !any_wants_grad(parents)) return;
    out->parents = std::move(parents);
    out->backprop = std::move(fn);
}

void check(bool ok, const char* msg) {
    if (!ok) throw ValidationError(msg);
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Tensor tensor(int rows, int cols) { return make_node(rows, cols); }

Tensor tensor(int rows, int cols, std::vector<double> v) {
    check(v.size() == size_t(rows) * cols, "tensor: data length != rows*cols");
    auto t = std::make_shared<TensorNode>();
    t->rows = rows;
    t->cols = cols;
    t->value = std::move(v);
    return t;
}

Tensor param(int rows, int cols, std::vector<double> v) {
    auto t = tensor(rows, cols, std::move(v));
    t->requires_grad = true;
    return t;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    check(a->cols == b->rows, "matmul: inner dimensions differ");
    auto out = make_node(a->rows, b->cols);
    map(out->value, out->rows, out->cols).noalias() =
        cmap(a->value, a->rows, a->cols) * cmap(b->value, b->rows, b->cols);
    record(out, {a, b}, [](TensorNode& self, const GradResolver& g) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        CMap gy(self.grad.data(), self.rows, self.cols);
        if (pa.wants_grad())
            map(g(&pa), pa.rows, pa.cols).noalias() +=
                gy * cmap(pb.value, pb.rows, pb.cols).transpose();
        if (pb.wants_grad())
            map(g(&pb), pb.rows, pb.cols).noalias() +=
                cmap(pa.value, pa.rows, pa.cols).transpose() * gy;
    });
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    check(a->cols == b->cols, "matmul_nt: trailing dimensions differ");
    auto out = make_node(a->rows, b->rows);
    map(out->value, out->rows, out->cols).noalias() =
        cmap(a->value, a->rows, a->cols) * cmap(b->value, b->rows, b->cols).transpose();
    record(out, {a, b}, [](TensorNode& self, const GradResolver& g) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        CMap gy(self.grad.data(), self.rows, self.cols);
        if (pa.wants_grad())
            map(g(&pa), pa.rows, pa.cols).noalias() +=
                gy * cmap(pb.value, pb.rows, pb.cols);
        if (pb.wants_grad())
            map(g(&pb), pb.rows, pb.cols).noalias() +=
                gy.transpose() * cmap(pa.value, pa.rows, pa.cols);
    });
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    bool broadcast = (b->rows == 1 && a->rows != 1);
    check(a->cols == b->cols && (broadcast || a->rows == b->rows),
          "add: incompatible shapes");
    auto out = make_node(a->rows, a->cols);
    if (broadcast)
        map(out->value, out->rows, out->cols) =
            cmap(a->value, a->rows, a->cols).rowwise() +
            Eigen::Map<const Eigen::RowVectorXd>(b->value.data(), b->cols);
    else
        map(out->value, out->rows, out->cols) =
            cmap(a->value, a->rows, a->cols) + cmap(b->value, b->rows, b->cols);
    record(out, {a, b}, [broadcast](TensorNode& self, const GradResolver& g) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        CMap gy(self.grad.data(), self.rows, self.cols);
        if (pa.wants_grad()) map(g(&pa), pa.rows, pa.cols) += gy;
        if (pb.wants_grad()) {
            if (broadcast)
                Eigen::Map<Eigen::RowVectorXd>(g(&pb).data(), pb.cols) +=
                    gy.colwise().sum();
            else
                map(g(&pb), pb.rows, pb.cols) += gy;
        }
    });
    return out;
}

Tensor scale(const Tensor& a, double s) {
    auto out = make_node(a->rows, a->cols);
    for (size_t i = 0; i < a->size(); ++i) out->value[i] = a->value[i] * s;
    record(out, {a}, [s](TensorNode& self, const GradResolver& g) {
        auto& pa = *self.parents[0];
        if (!pa.wants_grad()) return;
        auto& ga = g(&pa);
        for (size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * s;
    });
    return out;
}

Tensor relu(const Tensor& a) {
    auto out = make_node(a->rows, a->cols);
    for (size_t i = 0; i < a->size(); ++i)
        out->value[i] = a->value[i] > 0.0 ? a->value[i] : 0.0;
    record(out, {a}, [](TensorNode& self, const GradResolver& g) {
        auto& pa = *self.parents[0];
        if (!pa.wants_grad()) return;
        auto& ga = g(&pa);
        for (size_t i = 0; i < self.grad.size(); ++i)
            if (pa.value[i] > 0.0) ga[i] += self.grad[i];
    });
    return out;
}

Tensor log_elem(const Tensor& a) {
    auto out = make_node(a->rows, a->cols);
    for (size_t i = 0; i < a->size(); ++i) out->value[i] = std::log(a->value[i]);
    record(out, {a}, [](TensorNode& self, const GradResolver& g) {
        auto& pa = *self.parents[0];
        if (!pa.wants_grad()) return;
        auto& ga = g(&pa);
        for (size_t i = 0; i < self.grad.size(); ++i)
            ga[i] += self.grad[i] / pa.value[i];
    });
    return out;
}

Tensor masked_softmax(const Tensor& logits, const std::vector<uint8_t>& mask) {
    check(mask.size() == logits->size(), "masked_softmax: mask extent mismatch");
    const int m = logits->rows, n = logits->cols;
    auto out = make_node(m, n);
    for (int r = 0; r < m; ++r) {
        const double* x = &logits->value[size_t(r) * n];
        const uint8_t* mk = &mask[size_t(r) * n];
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < n; ++j)
            if (mk[j] && x[j] > mx) mx = x[j];
        check(mx > -std::numeric_limits<double>::infinity(),
              "masked_softmax: fully masked row");
        double sum = 0.0;
        double* y = &out->value[size_t(r) * n];
        for (int j = 0; j < n; ++j) {
            y[j] = mk[j] ? std::exp(x[j] - mx) : 0.0;
            sum += y[j];
        }
        for (int j = 0; j < n; ++j) y[j] /= sum;
    }
    record(out, {logits}, [](TensorNode& self, const GradResolver& g) {
        auto& pa = *self.parents[0];
        if (!pa.wants_grad()) return;
        auto& ga = g(&pa);
        const int n = self.cols;
        for (int r = 0; r < self.rows; ++r) {
            const double* y = &self.value[size_t(r) * n];
            const double* gy = &self.grad[size_t(r) * n];
            double dot = 0.0;
            for (int j = 0; j < n; ++j) dot += y[j] * gy[j];
            double* gx = &ga[size_t(r) * n];
            for (int j = 0; j < n; ++j) gx[j] += y[j] * (gy[j] - dot);
        }
    });
    return out;
}

Tensor softmax_rows(const Tensor& logits) {
    return masked_softmax(logits, std::vector<uint8_t>(logits->size(), 1));
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift) {
    const int m = x->rows, n = x->cols;
    check(gain->rows == 1 && gain->cols == n && shift->rows == 1 && shift->cols == n,
          "layer_norm: gain/shift must be 1 x cols");
    constexpr double kEps = 1e-10;
    auto out = make_node(m, n);
    std::vector<double> xhat(size_t(m) * n), inv_std(m);
    for (int r = 0; r < m; ++r) {
        const double* xr = &x->value[size_t(r) * n];
        double mu = 0.0;
        for (int j = 0; j < n; ++j) mu += xr[j];
        mu /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= n;
        const double inv = 1.0 / std::sqrt(var + kEps);
        inv_std[r] = inv;
        double* h = &xhat[size_t(r) * n];
        double* y = &out->value[size_t(r) * n];
        for (int j = 0; j < n; ++j) {
            h[j] = (xr[j] - mu) * inv;
            y[j] = h[j] * gain->value[j] + shift->value[j];
        }
    }
    record(out, {x, gain, shift},
           [xhat = std::move(xhat), inv_std = std::move(inv_std)](
               TensorNode& self, const GradResolver& g) {
               auto& px = *self.parents[0];
               auto& pg = *self.parents[1];
               auto& pb = *self.parents[2];
               const int m = self.rows, n = self.cols;
               for (int r = 0; r < m; ++r) {
                   const double* gy = &self.grad[size_t(r) * n];
                   const double* h = &xhat[size_t(r) * n];
                   if (pg.wants_grad()) {
                       auto& gg = g(&pg);
                       for (int j = 0; j < n; ++j) gg[j] += gy[j] * h[j];
                   }
                   if (pb.wants_grad()) {
                       auto& gb = g(&pb);
                       for (int j = 0; j < n; ++j) gb[j] += gy[j];
                   }
                   if (px.wants_grad()) {
                       double mean_d = 0.0, mean_dh = 0.0;
                       for (int j = 0; j < n; ++j) {
                           const double d = gy[j] * pg.value[j];
                           mean_d += d;
                           mean_dh += d * h[j];
                       }
                       mean_d /= n;
                       mean_dh /= n;
                       auto& gx = g(&px);
                       double* gxr = &gx[size_t(r) * n];
                       for (int j = 0; j < n; ++j) {
                           const double d = gy[j] * pg.value[j];
                           gxr[j] += inv_std[r] * (d - mean_d - h[j] * mean_dh);
                       }
                   }
               }
           });
    return out;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
    const int n = table->cols;
    for (int id : ids)
        check(id >= 0 && id < table->rows, "embedding_lookup: id out of range");
    auto out = make_node(int(ids.size()), n);
    for (size_t i = 0; i < ids.size(); ++i)
        std::copy_n(&table->value[size_t(ids[i]) * n], n, &out->value[i * n]);
    record(out, {table}, [ids](TensorNode& self, const GradResolver& g) {
        auto& pt = *self.parents[0];
        if (!pt.wants_grad()) return;
        auto& gt = g(&pt);
        const int n = self.cols;
        for (size_t i = 0; i < ids.size(); ++i) {
            const double* gy = &self.grad[i * n];
            double* row = &gt[size_t(ids[i]) * n];
            for (int j = 0; j < n; ++j) row[j] += gy[j];
        }
    });
    return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    check(!parts.empty(), "concat_rows: empty input");
    const int n = parts[0]->cols;
    int m = 0;
    for (const auto& p : parts) {
        check(p->cols == n, "concat_rows: column mismatch");
        m += p->rows;
    }
    auto out = make_node(m, n);
    size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p->value.begin(), p->value.end(), out->value.begin() + off);
        off += p->size();
    }
    record(out, parts, [](TensorNode& self, const GradResolver& g) {
        size_t off = 0;
        for (auto& p : self.parents) {
            if (p->wants_grad()) {
                auto& gp = g(p.get());
                for (size_t i = 0; i < p->size(); ++i) gp[i] += self.grad[off + i];
            }
            off += p->size();
        }
    });
    return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    check(!parts.empty(), "concat_cols: empty input");
    const int m = parts[0]->rows;
    int n = 0;
    for (const auto& p : parts) {
        check(p->rows == m, "concat_cols: row mismatch");
        n += p->cols;
    }
    auto out = make_node(m, n);
    int coff = 0;
    for (const auto& p : parts) {
        for (int r = 0; r < m; ++r)
            std::copy_n(&p->value[size_t(r) * p->cols], p->cols,
                        &out->value[size_t(r) * n + coff]);
        coff += p->cols;
    }
    record(out, parts, [](TensorNode& self, const GradResolver& g) {
        int coff = 0;
        const int n = self.cols;
        for (auto& p : self.parents) {
            if (p->wants_grad()) {
                auto& gp = g(p.get());
                for (int r = 0; r < p->rows; ++r)
                    for (int j = 0; j < p->cols; ++j)
                        gp[size_t(r) * p->cols + j] +=
                            self.grad[size_t(r) * n + coff + j];
            }
            coff += p->cols;
        }
    });
    return out;
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
    check(0 <= c0 && c0 < c1 && c1 <= a->cols, "slice_cols: bad range");
    const int n = c1 - c0;
    auto out = make_node(a->rows, n);
    for (int r = 0; r < a->rows; ++r)
        std::copy_n(&a->value[size_t(r) * a->cols + c0], n, &out->value[size_t(r) * n]);
    record(out, {a}, [c0](TensorNode& self, const GradResolver& g) {
        auto& pa = *self.parents[0];
        if (!pa.wants_grad()) return;
        auto& ga = g(&pa);
        for (int r = 0; r < self.rows; ++r)
            for (int j = 0; j < self.cols; ++j)
                ga[size_t(r) * pa.cols + c0 + j] += self.grad[size_t(r) * self.cols + j];
    });
    return out;
}

Tensor sum_rows(const Tensor& a) {
    auto out = make_node(1, a->cols);
    for (int r = 0; r < a->rows; ++r)
        for (int j = 0; j < a->cols; ++j)
            out->value[j] += a->value[size_t(r) * a->cols + j];
    record(out, {a}, [](TensorNode& self, const GradResolver& g) {
        auto& pa = *self.parents[0];
        if (!pa.wants_grad()) return;
        auto& ga = g(&pa);
        for (int r = 0; r < pa.rows; ++r)
            for (int j = 0; j < pa.cols; ++j)
                ga[size_t(r) * pa.cols + j] += self.grad[j];
    });
    return out;
}

Tensor mean_rows(const Tensor& a) { return scale(sum_rows(a), 1.0 / a->rows); }

Tensor sum_all(const Tensor& a) {
    auto out = make_node(1, 1);
    double s = 0.0;
    for (double v : a->value) s += v;
    out->value[0] = s;
    record(out, {a}, [](TensorNode& self, const GradResolver& g) {
        auto& pa = *self.parents[0];
        if (!pa.wants_grad()) return;
        auto& ga = g(&pa);
        for (size_t i = 0; i < pa.size(); ++i) ga[i] += self.grad[0];
    });
    return out;
}

Tensor gather_cols(const Tensor& a, const std::vector<int>& idx) {
    check(idx.size() == size_t(a->rows), "gather_cols: one index per row required");
    for (int j : idx) check(j >= 0 && j < a->cols, "gather_cols: index out of range");
    auto out = make_node(a->rows, 1);
    for (int r = 0; r < a->rows; ++r) out->value[r] = a->at(r, idx[r]);
    record(out, {a}, [idx](TensorNode& self, const GradResolver& g) {
        auto& pa = *self.parents[0];
        if (!pa.wants_grad()) return;
        auto& ga = g(&pa);
        for (int r = 0; r < self.rows; ++r)
            ga[size_t(r) * pa.cols + idx[r]] += self.grad[r];
    });
    return out;
}

namespace {

std::vector<TensorNode*> topo_order(const Tensor& loss) {
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    // iterative post-order DFS; trajectory tapes can be deep
    std::vector<std::pair<TensorNode*, size_t>> stack{{loss.get(), 0}};
    seen.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode* p = node->parents[next++].get();
            if (p->backprop && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;  // parents before children; walk in reverse for backprop
}

void run_backward(const Tensor& loss, const GradResolver& resolve) {
    if (loss->rows != 1 || loss->cols != 1)
        throw ValidationError("backward: loss must be a 1x1 scalar");
    if (!loss->backprop && !loss->requires_grad) return;
    auto order = topo_order(loss);
    for (TensorNode* n : order)
        if (n->backprop) n->zero_grad();  // interior scratch
    loss->ensure_grad();
    if (!loss->backprop) {
        // loss is itself a trainable leaf
        resolve(loss.get())[0] += 1.0;
        return;
    }
    loss->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backprop) (*it)->backprop(**it, resolve);
}

}  // namespace

void backward(const Tensor& loss) {
    GradResolver resolve = [](TensorNode* n) -> std::vector<double>& {
        n->ensure_grad();
        return n->grad;
    };
    run_backward(loss, resolve);
}

void backward(const Tensor& loss, GradSink& sink) {
    GradResolver resolve = [&sink](TensorNode* n) -> std::vector<double>& {
        if (n->requires_grad && !n->backprop) {
            auto& buf = sink[n];
            if (buf.size() != n->value.size()) buf.assign(n->value.size(), 0.0);
            return buf;
        }
        n->ensure_grad();
        return n->grad;
    };
    run_backward(loss, resolve);
}

}  // namespace sota
