#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tte/dataset.hpp"
#include "tte/serializer.hpp"

namespace tte {

using Embedding = std::vector<float>;
using SentenceHash = std::array<std::uint8_t, 32>;

// SHA-256 of the UTF-8 sentence bytes.
SentenceHash sentence_hash(std::string_view sentence);

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;

    virtual const std::string& model_id() const = 0;
    virtual std::size_t dimension() const = 0;
    virtual std::string_view kind() const = 0;

    // One provider round trip. May throw TransportError (retryable) or
    // ConfigError (permanent). Implementations must be thread-safe.
    virtual std::vector<Embedding> embed(std::span<const std::string> sentences) = 0;
};

// Deterministic stand-in for a real model: a 64-bit hash of
// (model_id, sentence) seeds a counter-based generator of d standard normal
// variates, normalized to unit length.
class OfflineHashProvider final : public EmbeddingProvider {
public:
    OfflineHashProvider(std::string model_id, std::size_t dimension);

    const std::string& model_id() const override { return model_id_; }
    std::size_t dimension() const override { return dimension_; }
    std::string_view kind() const override { return "offline-hash"; }

    std::vector<Embedding> embed(std::span<const std::string> sentences) override;

    Embedding embed_one(std::string_view sentence) const;

private:
    std::string model_id_;
    std::size_t dimension_;
};

struct HttpProviderConfig {
    std::string endpoint;  // e.g. http://localhost:8080/v1/embeddings
    std::string model_id;
    std::size_t dimension = 0;
    std::string api_key;  // sent as a bearer token when non-empty
    std::chrono::seconds timeout{30};
};

// Speaks the common embeddings wire shape:
//   request  {"model": id, "input": [sentences...]}
//   response {"data": [{"embedding": [...], "index": i}, ...]}
class HttpProvider final : public EmbeddingProvider {
public:
    explicit HttpProvider(HttpProviderConfig config);

    const std::string& model_id() const override { return config_.model_id; }
    std::size_t dimension() const override { return config_.dimension; }
    std::string_view kind() const override { return "http-endpoint"; }

    std::vector<Embedding> embed(std::span<const std::string> sentences) override;

private:
    HttpProviderConfig config_;
    std::string origin_;
    std::string path_;
};

struct EmbedOptions {
    std::size_t batch_size = 64;
    std::size_t max_in_flight = 4;
    int max_attempts = 4;
    std::chrono::milliseconds initial_backoff{250};
};

// Splits `sentences` into batches, calls the provider (up to max_in_flight
// batches concurrently), retries transport failures with exponential backoff
// and validates every returned vector (length d, finite components).
std::vector<Embedding> embed_batch(EmbeddingProvider& provider, std::span<const std::string> sentences,
                                   const EmbedOptions& options = {});

// Append-only on-disk store of sentence vectors for one model_id.
//
// Layout: "TTE1" | u32 len | model_id bytes | u32 d | records...
// Each record is the 32-byte sentence hash followed by d little-endian float32.
class EmbeddingCache {
public:
    EmbeddingCache(std::filesystem::path file, std::string model_id, std::size_t dimension);
    ~EmbeddingCache();

    EmbeddingCache(const EmbeddingCache&) = delete;
    EmbeddingCache& operator=(const EmbeddingCache&) = delete;

    // Cache file for a model inside `dir`.
    static std::filesystem::path file_for(const std::filesystem::path& dir, std::string_view model_id);

    std::optional<Embedding> get(std::string_view sentence) const;
    void put(std::string_view sentence, std::span<const float> vector);

    std::size_t size() const;
    std::size_t skipped_records() const { return skipped_; }
    const std::filesystem::path& path() const { return file_; }
    const std::string& model_id() const { return model_id_; }
    std::size_t dimension() const { return dimension_; }

private:
    struct HashKey {
        std::size_t operator()(const SentenceHash& h) const noexcept;
    };

    void create_fresh();
    void scan();

    std::filesystem::path file_;
    std::string model_id_;
    std::size_t dimension_;
    std::size_t header_bytes_ = 0;
    std::size_t skipped_ = 0;
    int read_fd_ = -1;
    int write_fd_ = -1;
    mutable std::shared_mutex index_mutex_;
    std::mutex append_mutex_;
    std::unordered_map<SentenceHash, std::uint64_t, HashKey> index_;
};

// E(X): one d-vector per table cell, row-major (row, feature, component).
struct EmbeddedTensor {
    std::size_t n = 0;
    std::size_t m = 0;
    std::size_t d = 0;
    std::vector<float> data;
    std::string dataset;
    std::string model_id;
    std::string sentence_template;

    std::span<const float> at(std::size_t row, std::size_t col) const {
        return {data.data() + (row * m + col) * d, d};
    }

    // FNV-1a over the raw component bytes.
    std::uint64_t checksum() const;

    // "TTET" | u64 N | u64 M | u64 d | (u32 len + bytes) x {model_id, dataset,
    // template} | N*M*d little-endian float32
    void save(const std::filesystem::path& path) const;
    static EmbeddedTensor load(const std::filesystem::path& path);
};

struct EmbedStats {
    std::size_t unique_sentences = 0;
    std::size_t cache_hits = 0;
    std::size_t provider_sentences = 0;
};

EmbeddedTensor build_embedded_tensor(const DatasetTable& table, EmbeddingProvider& provider,
                                     EmbeddingCache* cache, const Serializer& serializer = Serializer(),
                                     const EmbedOptions& options = {}, EmbedStats* stats = nullptr);

}  // namespace tte
