#include "tte/embed.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <future>
#include <numbers>
#include <thread>

#include <openssl/evp.h>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "tte/error.hpp"
#include "tte/log.hpp"
#include "tte/seed.hpp"

namespace tte {

namespace {

constexpr char kCacheMagic[4] = {'T', 'T', 'E', '1'};
constexpr char kTensorMagic[4] = {'T', 'T', 'E', 'T'};

void check_vectors(const std::vector<Embedding>& vectors, std::size_t expected_count, std::size_t d,
                   std::string_view model_id) {
    if (vectors.size() != expected_count) {
        throw ConfigError("provider '" + std::string(model_id) + "' returned " +
                          std::to_string(vectors.size()) + " vectors for " +
                          std::to_string(expected_count) + " sentences");
    }
    for (const auto& v : vectors) {
        if (v.size() != d) {
            throw ConfigError("dimension mismatch: provider '" + std::string(model_id) + "' declares d = " +
                              std::to_string(d) + " but returned " + std::to_string(v.size()) +
                              " components");
        }
        if (!std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); })) {
            throw ConfigError("provider '" + std::string(model_id) + "' returned a non-finite component");
        }
    }
}

std::vector<Embedding> embed_with_retry(EmbeddingProvider& provider, std::span<const std::string> batch,
                                        std::size_t first, const EmbedOptions& options) {
    auto backoff = options.initial_backoff;
    for (int attempt = 1;; ++attempt) {
        try {
            auto out = provider.embed(batch);
            check_vectors(out, batch.size(), provider.dimension(), provider.model_id());
            return out;
        } catch (const TransportError& e) {
            if (attempt >= options.max_attempts) {
                throw TransportError("embedding batch of sentences [" + std::to_string(first) + ", " +
                                     std::to_string(first + batch.size()) + ") failed after " +
                                     std::to_string(attempt) + " attempts: " + e.what());
            }
            logger()->warn("embed attempt {} failed ({}); retrying in {} ms", attempt, e.what(),
                           backoff.count());
            std::this_thread::sleep_for(backoff);
            backoff *= 2;
        }
    }
}

}  // namespace

SentenceHash sentence_hash(std::string_view sentence) {
    SentenceHash out{};
    unsigned int len = 0;
    if (EVP_Digest(sentence.data(), sentence.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 ||
        len != out.size()) {
        throw Error("SHA-256 digest failed");
    }
    return out;
}

OfflineHashProvider::OfflineHashProvider(std::string model_id, std::size_t dimension)
    : model_id_(std::move(model_id)), dimension_(dimension) {
    if (dimension_ == 0) {
        throw ConfigError("embedding dimension must be positive");
    }
}

Embedding OfflineHashProvider::embed_one(std::string_view sentence) const {
    std::uint64_t key = fnv1a64(sentence, fnv1a64(std::string_view("\0", 1), fnv1a64(model_id_)));
    auto uniform = [key](std::uint64_t counter) {
        // (0, 1]: never zero so the logarithm below stays finite
        return (static_cast<double>(mix64(key + counter * 0x9e3779b97f4a7c15ULL) >> 11) + 1.0) * 0x1.0p-53;
    };
    std::vector<double> g(dimension_);
    for (std::size_t k = 0; k < dimension_; k += 2) {
        double r = std::sqrt(-2.0 * std::log(uniform(k)));
        double theta = 2.0 * std::numbers::pi * uniform(k + 1);
        g[k] = r * std::cos(theta);
        if (k + 1 < dimension_) {
            g[k + 1] = r * std::sin(theta);
        }
    }
    double norm = 0.0;
    for (double x : g) {
        norm += x * x;
    }
    norm = std::sqrt(norm);
    Embedding out(dimension_);
    for (std::size_t k = 0; k < dimension_; ++k) {
        out[k] = static_cast<float>(g[k] / norm);
    }
    return out;
}

std::vector<Embedding> OfflineHashProvider::embed(std::span<const std::string> sentences) {
    std::vector<Embedding> out;
    out.reserve(sentences.size());
    for (const auto& s : sentences) {
        out.push_back(embed_one(s));
    }
    return out;
}

HttpProvider::HttpProvider(HttpProviderConfig config) : config_(std::move(config)) {
    if (config_.dimension == 0) {
        throw ConfigError("http provider needs a positive --dimension");
    }
    auto scheme = config_.endpoint.find("://");
    if (scheme == std::string::npos) {
        throw ConfigError("endpoint must be an absolute http(s) URL: " + config_.endpoint);
    }
    auto slash = config_.endpoint.find('/', scheme + 3);
    origin_ = config_.endpoint.substr(0, slash);
    path_ = slash == std::string::npos ? "/" : config_.endpoint.substr(slash);
}

std::vector<Embedding> HttpProvider::embed(std::span<const std::string> sentences) {
    httplib::Client client(origin_);
    client.set_connection_timeout(config_.timeout);
    client.set_read_timeout(config_.timeout);
    client.set_write_timeout(config_.timeout);
    if (!config_.api_key.empty()) {
        client.set_bearer_token_auth(config_.api_key);
    }

    nlohmann::json request{{"model", config_.model_id},
                           {"input", std::vector<std::string>(sentences.begin(), sentences.end())}};
    auto result = client.Post(path_, request.dump(), "application/json");
    if (!result) {
        throw TransportError("POST " + config_.endpoint + ": " + httplib::to_string(result.error()));
    }
    if (result->status == 429 || result->status >= 500) {
        throw TransportError("POST " + config_.endpoint + ": HTTP " + std::to_string(result->status));
    }
    if (result->status != 200) {
        throw ConfigError("POST " + config_.endpoint + ": HTTP " + std::to_string(result->status) + ": " +
                          result->body.substr(0, 200));
    }

    nlohmann::json body;
    try {
        body = nlohmann::json::parse(result->body);
    } catch (const nlohmann::json::exception& e) {
        throw TransportError("malformed embeddings response: " + std::string(e.what()));
    }
    if (!body.contains("data") || !body["data"].is_array()) {
        throw ConfigError("embeddings response has no 'data' array");
    }
    std::vector<Embedding> out(body["data"].size());
    for (std::size_t i = 0; i < body["data"].size(); ++i) {
        const auto& item = body["data"][i];
        std::size_t slot = item.contains("index") ? item["index"].get<std::size_t>() : i;
        if (slot >= out.size()) {
            throw ConfigError("embeddings response index out of range");
        }
        out[slot] = item.at("embedding").get<std::vector<float>>();
    }
    return out;
}

std::vector<Embedding> embed_batch(EmbeddingProvider& provider, std::span<const std::string> sentences,
                                   const EmbedOptions& options) {
    if (sentences.empty()) {
        throw ConfigError("embed_batch: no sentences");
    }
    const std::size_t batch = std::max<std::size_t>(1, options.batch_size);
    const std::size_t in_flight = std::max<std::size_t>(1, options.max_in_flight);
    std::vector<Embedding> out(sentences.size());

    std::vector<std::size_t> starts;
    for (std::size_t s = 0; s < sentences.size(); s += batch) {
        starts.push_back(s);
    }
    for (std::size_t wave = 0; wave < starts.size(); wave += in_flight) {
        std::vector<std::future<std::vector<Embedding>>> pending;
        std::size_t wave_end = std::min(starts.size(), wave + in_flight);
        for (std::size_t b = wave; b < wave_end; ++b) {
            auto first = starts[b];
            auto part = sentences.subspan(first, std::min(batch, sentences.size() - first));
            auto policy = wave_end - wave == 1 ? std::launch::deferred : std::launch::async;
            pending.push_back(std::async(policy, [&provider, part, first, &options] {
                return embed_with_retry(provider, part, first, options);
            }));
        }
        for (std::size_t b = wave; b < wave_end; ++b) {
            auto vectors = pending[b - wave].get();
            std::move(vectors.begin(), vectors.end(), out.begin() + static_cast<std::ptrdiff_t>(starts[b]));
        }
    }
    return out;
}

std::size_t EmbeddingCache::HashKey::operator()(const SentenceHash& h) const noexcept {
    std::size_t v = 0;
    std::memcpy(&v, h.data(), sizeof v);
    return v;
}

EmbeddingCache::EmbeddingCache(std::filesystem::path file, std::string model_id, std::size_t dimension)
    : file_(std::move(file)), model_id_(std::move(model_id)), dimension_(dimension) {
    if (dimension_ == 0) {
        throw ConfigError("cache dimension must be positive");
    }
    if (file_.has_parent_path()) {
        std::filesystem::create_directories(file_.parent_path());
    }
    if (!std::filesystem::exists(file_) || std::filesystem::file_size(file_) == 0) {
        create_fresh();
    } else {
        scan();
    }
    read_fd_ = ::open(file_.c_str(), O_RDONLY | O_CLOEXEC);
    write_fd_ = ::open(file_.c_str(), O_WRONLY | O_APPEND | O_CLOEXEC);
    if (read_fd_ < 0 || write_fd_ < 0) {
        throw Error("cannot open cache file " + file_.string());
    }
}

EmbeddingCache::~EmbeddingCache() {
    if (read_fd_ >= 0) {
        ::close(read_fd_);
    }
    if (write_fd_ >= 0) {
        ::close(write_fd_);
    }
}

std::filesystem::path EmbeddingCache::file_for(const std::filesystem::path& dir, std::string_view model_id) {
    std::string safe;
    for (char c : model_id) {
        bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_';
        safe.push_back(ok ? c : '_');
    }
    char suffix[17];
    std::snprintf(suffix, sizeof suffix, "%016llx", static_cast<unsigned long long>(fnv1a64(model_id)));
    return dir / (safe + "-" + std::string(suffix, 8) + ".tte");
}

void EmbeddingCache::create_fresh() {
    std::ofstream out(file_, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot create cache file " + file_.string());
    }
    out.write(kCacheMagic, 4);
    io::put_string(out, model_id_);
    io::put_u32(out, static_cast<std::uint32_t>(dimension_));
    header_bytes_ = static_cast<std::size_t>(out.tellp());
}

void EmbeddingCache::scan() {
    std::ifstream in(file_, std::ios::binary);
    char magic[4] = {};
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCacheMagic, 4) != 0) {
        auto aside = file_;
        aside += ".corrupt";
        logger()->warn("cache {} has a bad header; moved to {} and starting empty", file_.string(),
                       aside.string());
        std::filesystem::rename(file_, aside);
        create_fresh();
        return;
    }
    std::string stored_id;
    std::uint32_t stored_d = 0;
    try {
        stored_id = io::get_string(in);
        stored_d = io::get_u32(in);
    } catch (const StructuralError&) {
        logger()->warn("cache {} has a truncated header; starting empty", file_.string());
        create_fresh();
        return;
    }
    if (stored_id != model_id_ || stored_d != dimension_) {
        throw ConfigError("cache " + file_.string() + " belongs to model '" + stored_id + "' (d = " +
                          std::to_string(stored_d) + "), not '" + model_id_ + "' (d = " +
                          std::to_string(dimension_) + ")");
    }
    header_bytes_ = static_cast<std::size_t>(in.tellg());

    const std::size_t record = 32 + 4 * dimension_;
    const std::size_t total = std::filesystem::file_size(file_);
    std::vector<unsigned char> buf(record);
    std::vector<float> values(dimension_);
    std::uint64_t offset = header_bytes_;
    while (offset + record <= total) {
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(record));
        if (!in) {
            break;
        }
        io::decode_floats(buf.data() + 32, values);
        if (std::all_of(values.begin(), values.end(), [](float x) { return std::isfinite(x); })) {
            SentenceHash h;
            std::memcpy(h.data(), buf.data(), 32);
            index_.emplace(h, offset);
        } else {
            ++skipped_;
            logger()->warn("cache {}: skipping corrupted record at offset {}", file_.string(), offset);
        }
        offset += record;
    }
    if (offset < total) {
        ++skipped_;
        logger()->warn("cache {}: truncated trailing record ({} bytes) dropped", file_.string(),
                       total - offset);
        std::filesystem::resize_file(file_, offset);
    }
}

std::optional<Embedding> EmbeddingCache::get(std::string_view sentence) const {
    auto h = sentence_hash(sentence);
    std::uint64_t offset = 0;
    {
        std::shared_lock lock(index_mutex_);
        auto it = index_.find(h);
        if (it == index_.end()) {
            return std::nullopt;
        }
        offset = it->second;
    }
    std::vector<unsigned char> buf(4 * dimension_);
    auto want = static_cast<ssize_t>(buf.size());
    if (::pread(read_fd_, buf.data(), buf.size(), static_cast<off_t>(offset + 32)) != want) {
        throw Error("short read from cache " + file_.string());
    }
    Embedding out(dimension_);
    io::decode_floats(buf.data(), out);
    return out;
}

void EmbeddingCache::put(std::string_view sentence, std::span<const float> vector) {
    if (vector.size() != dimension_) {
        throw ConfigError("cache_put: vector has " + std::to_string(vector.size()) + " components, cache d = " +
                          std::to_string(dimension_));
    }
    auto h = sentence_hash(sentence);
    std::lock_guard append(append_mutex_);
    {
        std::shared_lock lock(index_mutex_);
        if (index_.count(h)) {
            return;
        }
    }
    std::vector<unsigned char> buf(32 + 4 * dimension_);
    std::memcpy(buf.data(), h.data(), 32);
    for (std::size_t k = 0; k < dimension_; ++k) {
        auto bits = io::to_le(std::bit_cast<std::uint32_t>(vector[k]));
        std::memcpy(buf.data() + 32 + 4 * k, &bits, 4);
    }
    auto offset = static_cast<std::uint64_t>(::lseek(write_fd_, 0, SEEK_END));
    if (::write(write_fd_, buf.data(), buf.size()) != static_cast<ssize_t>(buf.size())) {
        throw Error("cannot append to cache " + file_.string());
    }
    std::unique_lock lock(index_mutex_);
    index_.emplace(h, offset);
}

std::size_t EmbeddingCache::size() const {
    std::shared_lock lock(index_mutex_);
    return index_.size();
}

std::uint64_t EmbeddedTensor::checksum() const {
    return fnv1a64(std::string_view(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(float)));
}

void EmbeddedTensor::save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    out.write(kTensorMagic, 4);
    io::put_u64(out, n);
    io::put_u64(out, m);
    io::put_u64(out, d);
    io::put_string(out, model_id);
    io::put_string(out, dataset);
    io::put_string(out, sentence_template);
    io::put_floats(out, data);
    if (!out) {
        throw Error("write failed: " + path.string());
    }
}

EmbeddedTensor EmbeddedTensor::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open embeddings file " + path.string());
    }
    char magic[4] = {};
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kTensorMagic, 4) != 0) {
        throw StructuralError(path.string() + " is not an embedded tensor file");
    }
    EmbeddedTensor t;
    t.n = io::get_u64(in);
    t.m = io::get_u64(in);
    t.d = io::get_u64(in);
    t.model_id = io::get_string(in);
    t.dataset = io::get_string(in);
    t.sentence_template = io::get_string(in);
    t.data.resize(t.n * t.m * t.d);
    io::get_floats(in, t.data);
    return t;
}

EmbeddedTensor build_embedded_tensor(const DatasetTable& table, EmbeddingProvider& provider,
                                     EmbeddingCache* cache, const Serializer& serializer,
                                     const EmbedOptions& options, EmbedStats* stats) {
    if (cache && (cache->model_id() != provider.model_id() || cache->dimension() != provider.dimension())) {
        throw ConfigError("cache belongs to a different model than the provider");
    }
    auto serialized = serialize_dataset(table, serializer);
    const std::size_t d = provider.dimension();
    std::vector<Embedding> unique(serialized.unique.size());

    std::vector<std::size_t> misses;
    for (std::size_t u = 0; u < unique.size(); ++u) {
        if (cache) {
            if (auto hit = cache->get(serialized.unique[u])) {
                unique[u] = std::move(*hit);
                continue;
            }
        }
        misses.push_back(u);
    }

    if (!misses.empty()) {
        std::vector<std::string> pending;
        pending.reserve(misses.size());
        for (auto u : misses) {
            pending.push_back(serialized.unique[u]);
        }
        std::vector<Embedding> fresh;
        try {
            fresh = embed_batch(provider, pending, options);
        } catch (const Error& e) {
            // Name a cell that needed the first missing sentence.
            auto cell = std::find(serialized.grid.begin(), serialized.grid.end(), misses.front()) -
                        serialized.grid.begin();
            auto row = static_cast<std::size_t>(cell) / serialized.cols;
            auto col = static_cast<std::size_t>(cell) % serialized.cols;
            std::string context = " (while embedding " + table.name + " from row " + std::to_string(row) +
                                  ", col " + std::to_string(col) + ")";
            if (dynamic_cast<const TransportError*>(&e)) {
                throw TransportError(e.what() + context);
            }
            throw ConfigError(e.what() + context);
        }
        for (std::size_t k = 0; k < misses.size(); ++k) {
            if (cache) {
                cache->put(pending[k], fresh[k]);
            }
            unique[misses[k]] = std::move(fresh[k]);
        }
    }

    if (stats) {
        stats->unique_sentences = unique.size();
        stats->cache_hits = unique.size() - misses.size();
        stats->provider_sentences = misses.size();
    }

    EmbeddedTensor tensor;
    tensor.n = table.rows();
    tensor.m = table.cols();
    tensor.d = d;
    tensor.dataset = table.name;
    tensor.model_id = provider.model_id();
    tensor.sentence_template = serializer.sentence_template();
    tensor.data.resize(tensor.n * tensor.m * d);
    for (std::size_t cell = 0; cell < serialized.grid.size(); ++cell) {
        const auto& v = unique[serialized.grid[cell]];
        std::copy(v.begin(), v.end(), tensor.data.begin() + static_cast<std::ptrdiff_t>(cell * d));
    }
    return tensor;
}

}  // namespace tte
