#include "tte/log.hpp"

#include <cstdlib>
#include <mutex>

#include <spdlog/sinks/stdout_color_sinks.h>

namespace tte {

std::shared_ptr<spdlog::logger> logger() {
    static std::once_flag once;
    static std::shared_ptr<spdlog::logger> instance;
    std::call_once(once, [] {
        instance = spdlog::stderr_color_mt("tte");
        instance->set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
        const char* env = std::getenv("TTE_LOG");
        instance->set_level(spdlog::level::from_str(env ? env : "warn"));
    });
    return instance;
}

void set_log_level(const std::string& level) {
    logger()->set_level(spdlog::level::from_str(level));
}

}  // namespace tte
