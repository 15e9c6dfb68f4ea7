#include "sota/rng.hpp"

#include <sstream>

namespace sota {

uint64_t mix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

uint64_t derive_seed(uint64_t master, uint64_t stream_tag, uint64_t index) {
    return mix64(mix64(master ^ mix64(stream_tag)) + index);
}

std::string RngStream::serialize() const {
    std::ostringstream os;
    os << eng_;
    return os.str();
}

RngStream RngStream::deserialize(const std::string& s) {
    RngStream r(0);
    std::istringstream is(s);
    is >> r.eng_;
    return r;
}

}  // namespace sota
