#include "tte/engine/param_store.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "binary_io.hpp"
#include "tte/seed.hpp"

namespace tte::engine {

template <class T>
Tensor<T> ParamStore<T>::add(const std::string& name, Shape shape, bool trainable) {
    if (contains(name)) {
        throw ConfigError("duplicate parameter name '" + name + "'");
    }
    Entry e{name, Tensor<T>::zeros(std::move(shape), trainable), trainable, {}, {}};
    if (trainable) {
        e.m.assign(e.tensor.size(), T(0));
        e.v.assign(e.tensor.size(), T(0));
    }
    index_.emplace(name, entries_.size());
    entries_.push_back(std::move(e));
    return entries_.back().tensor;
}

template <class T>
Tensor<T> ParamStore<T>::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
        throw ConfigError("unknown parameter '" + name + "'");
    }
    return entries_[it->second].tensor;
}

template <class T>
std::size_t ParamStore<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) {
        n += e.trainable ? e.tensor.size() : 0;
    }
    return n;
}

template <class T>
void ParamStore<T>::zero_grad() {
    for (auto& e : entries_) {
        if (e.trainable) {
            e.tensor.zero_grad();
        }
    }
}

template <class T>
std::vector<std::vector<T>> ParamStore<T>::snapshot() const {
    std::vector<std::vector<T>> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) {
        out.emplace_back(e.tensor.data().begin(), e.tensor.data().end());
    }
    return out;
}

template <class T>
void ParamStore<T>::restore(const std::vector<std::vector<T>>& values) {
    if (values.size() != entries_.size()) {
        throw ConfigError("restore: snapshot has a different number of entries");
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
        auto dst = entries_[i].tensor.data();
        if (values[i].size() != dst.size()) {
            throw ConfigError("restore: size mismatch for '" + entries_[i].name + "'");
        }
        std::copy(values[i].begin(), values[i].end(), dst.begin());
    }
}

template <class T>
std::uint64_t ParamStore<T>::checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& e : entries_) {
        h = fnv1a64(e.name, h);
        auto values = e.tensor.data();
        h = fnv1a64(std::string_view(reinterpret_cast<const char*>(values.data()), values.size_bytes()), h);
    }
    return h;
}

template <class T>
void ParamStore<T>::save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot write checkpoint " + path.string());
    }
    out.write("TTP1", 4);
    io::put_u32(out, static_cast<std::uint32_t>(entries_.size()));
    for (const auto& e : entries_) {
        io::put_string(out, e.name);
        char trainable = e.trainable ? 1 : 0;
        out.write(&trainable, 1);
        io::put_u32(out, static_cast<std::uint32_t>(e.tensor.rank()));
        for (auto d : e.tensor.shape()) {
            io::put_u64(out, d);
        }
        std::vector<float> values(e.tensor.data().begin(), e.tensor.data().end());
        io::put_floats(out, values);
    }
}

template <class T>
void ParamStore<T>::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    char magic[4] = {};
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "TTP1", 4) != 0) {
        throw StructuralError(path.string() + " is not a parameter checkpoint");
    }
    auto count = io::get_u32(in);
    if (count != entries_.size()) {
        throw ConfigError("checkpoint has " + std::to_string(count) + " tensors, model has " +
                          std::to_string(entries_.size()));
    }
    for (std::uint32_t i = 0; i < count; ++i) {
        auto name = io::get_string(in);
        char trainable = 0;
        in.read(&trainable, 1);
        auto rank = io::get_u32(in);
        Shape shape(rank);
        for (auto& d : shape) {
            d = io::get_u64(in);
        }
        auto dst = get(name);
        if (dst.shape() != shape) {
            throw ConfigError("checkpoint shape mismatch for '" + name + "': " + shape_str(shape) + " vs " +
                              shape_str(dst.shape()));
        }
        std::vector<float> values(numel(shape));
        io::get_floats(in, values);
        std::copy(values.begin(), values.end(), dst.data().begin());
    }
}

template <class T>
void adam_step(ParamStore<T>& params, const AdamConfig& config) {
    params.advance_step();
    const double t = static_cast<double>(params.step());
    const T b1 = static_cast<T>(config.beta1);
    const T b2 = static_cast<T>(config.beta2);
    const T correction1 = static_cast<T>(1.0 - std::pow(config.beta1, t));
    const T correction2 = static_cast<T>(1.0 - std::pow(config.beta2, t));
    const T lr = static_cast<T>(config.lr);
    const T eps = static_cast<T>(config.eps);
    for (auto& e : params.entries()) {
        if (!e.trainable) {
            continue;
        }
        auto w = e.tensor.data();
        auto g = e.tensor.grad();
        for (std::size_t i = 0; i < w.size(); ++i) {
            e.m[i] = b1 * e.m[i] + (T(1) - b1) * g[i];
            e.v[i] = b2 * e.v[i] + (T(1) - b2) * g[i] * g[i];
            const T m_hat = e.m[i] / correction1;
            const T v_hat = e.v[i] / correction2;
            w[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
            g[i] = T(0);
        }
    }
}

template class ParamStore<float>;
template class ParamStore<double>;
template void adam_step(ParamStore<float>&, const AdamConfig&);
template void adam_step(ParamStore<double>&, const AdamConfig&);

}  // namespace tte::engine
