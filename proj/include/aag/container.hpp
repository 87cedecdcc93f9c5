#pragma once

#include "aag/common.hpp"

#include <string>
#include <utility>
#include <vector>

namespace aag {

// Binary checkpoint container: magic, format version, a JSON metadata
// string, then a named parameter table of row-major little-endian f64
// matrices. Round-trips are value-exact.
struct Container {
    static constexpr uint32_t kVersion = 1;

    std::string meta_json = "{}";
    std::vector<std::pair<std::string, Mat>> params;

    const Mat& at(const std::string& name) const;
    bool has(const std::string& name) const;
    void put(const std::string& name, Mat value);
};

void save_container(const std::string& path, const Container& c);
// Throws IoError on missing/corrupted files and names both versions when
// the format version is unsupported. Never returns partial state.
Container load_container(const std::string& path);

}  // namespace aag
