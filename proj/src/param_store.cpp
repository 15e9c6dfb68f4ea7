#include "sota/param_store.hpp"

#include <cmath>
#include <cstring>
#include <functional>

#include "sota/common.hpp"
#include "sota/rng.hpp"

namespace sota {

Tensor ParameterStore::add(const std::string& name, int rows, int cols, ParamKind kind) {
    if (params_.count(name)) throw ValidationError("duplicate parameter: " + name);
    Entry e;
    e.tensor = param(rows, cols, std::vector<double>(size_t(rows) * cols, 0.0));
    e.kind = kind;
    e.m.assign(e.tensor->size(), 0.0);
    e.v.assign(e.tensor->size(), 0.0);
    auto t = e.tensor;
    params_.emplace(name, std::move(e));
    return t;
}

Tensor ParameterStore::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ValidationError("unknown parameter: " + name);
    return it->second.tensor;
}

void ParameterStore::init_uniform(uint64_t seed, int embed_dim) {
    const double bound = 1.0 / std::sqrt(double(embed_dim));
    RngStream rng(derive_seed(seed, 0x1A17u));
    for (auto& [name, e] : params_) {
        switch (e.kind) {
            case ParamKind::weight:
                for (auto& x : e.tensor->value) x = rng.uniform(-bound, bound);
                break;
            case ParamKind::bias:
            case ParamKind::ln_shift:
                std::fill(e.tensor->value.begin(), e.tensor->value.end(), 0.0);
                break;
            case ParamKind::ln_gain:
                std::fill(e.tensor->value.begin(), e.tensor->value.end(), 1.0);
                break;
        }
    }
}

void ParameterStore::zero_grads() {
    for (auto& [name, e] : params_) e.tensor->zero_grad();
}

void ParameterStore::adam_step(double lr) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    ++step_;
    const double c1 = 1.0 - std::pow(b1, double(step_));
    const double c2 = 1.0 - std::pow(b2, double(step_));
    for (auto& [name, e] : params_) {
        e.tensor->ensure_grad();
        auto& p = e.tensor->value;
        auto& g = e.tensor->grad;
        for (size_t i = 0; i < p.size(); ++i) {
            e.m[i] = b1 * e.m[i] + (1.0 - b1) * g[i];
            e.v[i] = b2 * e.v[i] + (1.0 - b2) * g[i] * g[i];
            const double mhat = e.m[i] / c1;
            const double vhat = e.v[i] / c2;
            p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
        e.tensor->zero_grad();
    }
}

void ParameterStore::reduce_sinks(const std::vector<GradSink>& sinks) {
    for (auto& [name, e] : params_) {
        e.tensor->ensure_grad();
        auto& g = e.tensor->grad;
        for (const auto& sink : sinks) {
            auto it = sink.find(e.tensor.get());
            if (it == sink.end()) continue;
            for (size_t i = 0; i < g.size(); ++i) g[i] += it->second[i];
        }
    }
}

size_t ParameterStore::num_parameters() const {
    size_t n = 0;
    for (const auto& [name, e] : params_) n += e.tensor->size();
    return n;
}

namespace {

void put_u32(std::string& out, uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }
void put_i64(std::string& out, int64_t v) { out.append(reinterpret_cast<const char*>(&v), 8); }
void put_doubles(std::string& out, const std::vector<double>& v) {
    put_i64(out, int64_t(v.size()));
    out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
}

struct Reader {
    const std::string& s;
    size_t pos = 0;
    void need(size_t n) const {
        if (pos + n > s.size()) throw ParseError("parameter blob truncated");
    }
    uint32_t u32() {
        need(4);
        uint32_t v;
        std::memcpy(&v, s.data() + pos, 4);
        pos += 4;
        return v;
    }
    int64_t i64() {
        need(8);
        int64_t v;
        std::memcpy(&v, s.data() + pos, 8);
        pos += 8;
        return v;
    }
    std::vector<double> doubles() {
        const size_t n = size_t(i64());
        need(n * sizeof(double));
        std::vector<double> v;
        v.resize(n);
        std::memcpy(v.data(), s.data() + pos, n * sizeof(double));
        pos += n * sizeof(double);
        return v;
    }
    std::string str() {
        uint32_t n = u32();
        need(n);
        std::string v = s.substr(pos, n);
        pos += n;
        return v;
    }
};

}  // namespace

std::string ParameterStore::serialize() const {
    std::string out;
    put_u32(out, uint32_t(params_.size()));
    for (const auto& [name, e] : params_) {
        put_u32(out, uint32_t(name.size()));
        out += name;
        put_u32(out, uint32_t(e.tensor->rows));
        put_u32(out, uint32_t(e.tensor->cols));
        put_u32(out, uint32_t(e.kind));
        put_doubles(out, e.tensor->value);
        put_doubles(out, e.m);
        put_doubles(out, e.v);
    }
    put_i64(out, step_);
    return out;
}

void ParameterStore::deserialize_from(const std::string& blob) {
    Reader rd{blob};
    uint32_t n = rd.u32();
    if (n != params_.size())
        throw ValidationError("checkpoint parameter count mismatch");
    for (auto& [name, e] : params_) {
        std::string got = rd.str();
        if (got != name) throw ValidationError("checkpoint parameter name mismatch: " + got);
        uint32_t rows = rd.u32(), cols = rd.u32();
        uint32_t kind = rd.u32();
        if (int(rows) != e.tensor->rows || int(cols) != e.tensor->cols)
            throw ValidationError("checkpoint shape mismatch for " + name);
        if (kind != uint32_t(e.kind))
            throw ValidationError("checkpoint kind mismatch for " + name);
        auto vals = rd.doubles();
        auto m = rd.doubles();
        auto v = rd.doubles();
        if (vals.size() != e.tensor->size() || m.size() != vals.size() || v.size() != vals.size())
            throw ValidationError("checkpoint payload size mismatch for " + name);
        e.tensor->value = std::move(vals);
        e.m = std::move(m);
        e.v = std::move(v);
        e.tensor->zero_grad();
    }
    step_ = rd.i64();
}

double finite_difference_check(const std::function<Tensor()>& f, ParameterStore& store) {
    constexpr double h = 1e-5;
    store.zero_grads();
    Tensor loss = f();
    backward(loss);

    auto eval = [&]() {
        NoGradGuard ng;
        return f()->value[0];
    };

    double max_rel = 0.0;
    for (auto& [name, e] : store.entries()) {
        auto& p = e.tensor->value;
        e.tensor->ensure_grad();
        for (size_t i = 0; i < p.size(); ++i) {
            const double saved = p[i];
            p[i] = saved + h;
            const double fp = eval();
            p[i] = saved - h;
            const double fm = eval();
            p[i] = saved;
            const double fd = (fp - fm) / (2.0 * h);
            const double ad = e.tensor->grad[i];
            const double denom = std::max({std::abs(ad), std::abs(fd), 1e-3});
            max_rel = std::max(max_rel, std::abs(ad - fd) / denom);
        }
    }
    store.zero_grads();
    return max_rel;
}

}  // namespace sota
