#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tte/embed.hpp"

namespace tte {

struct ProviderSettings {
    std::string kind = "hash";  // hash | http
    std::string model_id = "offline-hash";
    std::size_t dimension = 768;
    std::string endpoint;
    std::string api_key;
    std::size_t batch_size = 64;
};

struct GlobalConfig {
    std::filesystem::path cache_dir = ".tte-cache";
    ProviderSettings provider;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    std::string log_level = "warn";
    std::filesystem::path out_dir = "out";
};

using EnvLookup = std::function<std::optional<std::string>(const char*)>;

// Process environment.
std::optional<std::string> process_env(const char* name);

// defaults < config file < environment (TTE_CACHE_DIR, TTE_LOG,
// EMBED_API_KEY). Command-line flags are applied on top by dispatch().
GlobalConfig resolve_config(const nlohmann::json* file, const EnvLookup& env);

std::unique_ptr<EmbeddingProvider> make_provider(const ProviderSettings& settings);

// Exit codes: 0 success, 1 usage error (help text on `err`), 2 runtime error.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
             const EnvLookup& env = process_env);

}  // namespace tte
