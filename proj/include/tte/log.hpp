#pragma once

#include <memory>

#include <spdlog/spdlog.h>

namespace tte {

// Shared stderr logger. Level comes from TTE_LOG (trace|debug|info|warn|error|off),
// default "warn".
std::shared_ptr<spdlog::logger> logger();

void set_log_level(const std::string& level);

}  // namespace tte
