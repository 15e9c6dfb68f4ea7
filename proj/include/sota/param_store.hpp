#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sota/tensor.hpp"

namespace sota {

enum class ParamKind : uint8_t { weight = 0, bias = 1, ln_gain = 2, ln_shift = 3 };

// Named trainable tensors plus Adam state. Iteration order is the sorted
// name order everywhere (init, update, serialization, gradient reduction),
// which keeps results independent of construction order.
class ParameterStore {
  public:
    Tensor add(const std::string& name, int rows, int cols, ParamKind kind);
    Tensor get(const std::string& name) const;
    bool has(const std::string& name) const { return params_.count(name) != 0; }

    // weights and embedding tables ~ U(-1/sqrt(d), 1/sqrt(d)) with d the
    // embedding dimension; biases and norm shifts zero; norm gains one
    void init_uniform(uint64_t seed, int embed_dim);

    void zero_grads();
    // standard Adam (beta1 .9, beta2 .999, eps 1e-8, bias correction),
    // then zeroes gradients
    void adam_step(double lr);

    // ordered reduction of per-trajectory gradient sinks into the shared
    // grad buffers; `sinks` must be indexed in trajectory order
    void reduce_sinks(const std::vector<GradSink>& sinks);

    int64_t step_count() const { return step_; }
    size_t num_parameters() const;

    struct Entry {
        Tensor tensor;
        ParamKind kind;
        std::vector<double> m, v;
    };
    const std::map<std::string, Entry>& entries() const { return params_; }

    // binary round trip (values + Adam state + step counter), bit-exact
    std::string serialize() const;
    void deserialize_from(const std::string& blob);

  private:
    std::map<std::string, Entry> params_;
    int64_t step_ = 0;
};

// Runs f() (a pure scalar-valued forward over the store's parameters),
// backpropagates, then compares every parameter gradient against central
// finite differences with h = 1e-5. Returns the max relative error with
// denominator max(|ad|, |fd|, 1e-3). Leaves gradients zeroed.
double finite_difference_check(const std::function<Tensor()>& f, ParameterStore& store);

}  // namespace sota
