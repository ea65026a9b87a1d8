#pragma once

// Frozen reference files. BABYIT_UPDATE_GOLDEN=1 rewrites them.

#include <cstdlib>
#include <filesystem>
#include <string>

#include "babyit/common.hpp"

namespace golden {

inline std::filesystem::path path(const std::string& name) { return std::filesystem::path(BABYIT_GOLDEN_DIR) / name; }

inline std::string expect(const std::string& name, const std::string& actual) {
    if (const char* u = std::getenv("BABYIT_UPDATE_GOLDEN"); u && std::string(u) == "1") {
        babyit::write_file(path(name), actual);
    }
    return babyit::read_file(path(name));
}

}  // namespace golden
