#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "tte/engine/tensor.hpp"

namespace tte::engine {

// Named model state. Trainable entries carry gradients and Adam moments;
// buffers (batch-norm running statistics) are saved and restored with the
// weights but never optimized.
template <class T>
class ParamStore {
public:
    struct Entry {
        std::string name;
        Tensor<T> tensor;
        bool trainable = true;
        std::vector<T> m;  // Adam first moment
        std::vector<T> v;  // Adam second moment
    };

    Tensor<T> add(const std::string& name, Shape shape, bool trainable = true);

    Tensor<T> get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) > 0; }

    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<Entry>& entries() { return entries_; }

    // Number of trainable scalars.
    std::size_t parameter_count() const;

    void zero_grad();

    std::vector<std::vector<T>> snapshot() const;
    void restore(const std::vector<std::vector<T>>& values);

    // FNV-1a over every entry's name and value bytes, in insertion order.
    std::uint64_t checksum() const;

    std::uint64_t step() const { return step_; }
    void advance_step() { ++step_; }

    // Copies values from a store with identical names and shapes (any scalar type).
    template <class U>
    void copy_values_from(const ParamStore<U>& other) {
        for (auto& e : entries_) {
            auto src = other.get(e.name);
            if (src.shape() != e.tensor.shape()) {
                throw ConfigError("copy_values_from: shape mismatch for '" + e.name + "'");
            }
            for (std::size_t i = 0; i < src.size(); ++i) {
                e.tensor.data()[i] = static_cast<T>(src.data()[i]);
            }
        }
    }

    // Checkpoint: "TTP1" | u32 count | per entry: name, u8 trainable, u32 rank,
    // u64 dims..., float32 values (little-endian).
    void save(const std::filesystem::path& path) const;
    void load(const std::filesystem::path& path);

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
    std::uint64_t step_ = 0;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Bias-corrected Adam over every trainable entry, then zeroes the gradients.
template <class T>
void adam_step(ParamStore<T>& params, const AdamConfig& config);

}  // namespace tte::engine
