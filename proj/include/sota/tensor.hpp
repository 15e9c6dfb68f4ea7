#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

namespace sota {

struct TensorNode;
using Tensor = std::shared_ptr<TensorNode>;

// During a backward sweep this resolves the gradient buffer of a node.
// The default sweep hands out the node's own grad buffer; the sink-based
// sweep redirects trainable leaves into a private map so that many sweeps
// can run concurrently against shared parameters.
using GradResolver = std::function<std::vector<double>&(TensorNode*)>;

// Dense row-major 2-D tensor of doubles with an optional tape record.
// Sequences are rows x embed_dim; scalars are 1x1. The graph formed by
// `parents` is acyclic by construction (ops only consume existing nodes).
struct TensorNode {
    int rows = 0;
    int cols = 0;
    std::vector<double> value;
    std::vector<double> grad;      // allocated on demand, same extent as value
    bool requires_grad = false;    // trainable leaf
    std::vector<Tensor> parents;
    std::function<void(TensorNode&, const GradResolver&)> backprop;

    double& at(int r, int c) { return value[size_t(r) * cols + c]; }
    double at(int r, int c) const { return value[size_t(r) * cols + c]; }
    size_t size() const { return value.size(); }
    bool wants_grad() const { return requires_grad || backprop != nullptr; }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
    void zero_grad() { grad.assign(value.size(), 0.0); }
};

// Tape recording is on by default. Inside a NoGradGuard ops compute values
// only, which keeps evaluation rollouts cheap.
bool grad_enabled();
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();

  private:
    bool prev_;
};

Tensor tensor(int rows, int cols);
Tensor tensor(int rows, int cols, std::vector<double> v);
Tensor param(int rows, int cols, std::vector<double> v);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a * b^T
// elementwise add; b may be 1 x cols and is then broadcast over rows of a
Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor relu(const Tensor& a);
Tensor log_elem(const Tensor& a);
// row-wise softmax over entries with mask != 0; masked entries are exactly 0.
// mask is row-major, same extent as logits. Throws on a fully masked row.
Tensor masked_softmax(const Tensor& logits, const std::vector<uint8_t>& mask);
Tensor softmax_rows(const Tensor& logits);
// per-row standardization (biased variance) followed by gain/shift (1 x cols)
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift);
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, int c0, int c1);
Tensor sum_rows(const Tensor& a);   // 1 x cols
Tensor mean_rows(const Tensor& a);  // 1 x cols
Tensor sum_all(const Tensor& a);    // 1 x 1
// picks a[i, idx[i]] per row -> rows x 1
Tensor gather_cols(const Tensor& a, const std::vector<int>& idx);

// Reverse-mode sweep from a 1x1 loss. Gradients of reachable trainable
// leaves accumulate across calls; interior buffers are scratch per sweep.
void backward(const Tensor& loss);

// Same sweep, but trainable-leaf gradients go into `sink` keyed by node
// pointer. Safe to run from several threads over a shared parameter set as
// long as each sweep owns its interior graph.
using GradSink = std::unordered_map<const TensorNode*, std::vector<double>>;
void backward(const Tensor& loss, GradSink& sink);

}  // namespace sota
