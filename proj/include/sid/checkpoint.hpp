#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sid/tensor.hpp"

namespace sid {

// Single-file container: JSON metadata header plus named float64 arrays.
// Byte layout is documented in docs/formats.md and stable across versions.
struct Archive {
    nlohmann::json meta;
    std::vector<std::pair<std::string, Tensor>> arrays;

    const Tensor* find(const std::string& name) const;
    const Tensor& require(const std::string& name) const;
    void put(const std::string& name, Tensor t) { arrays.emplace_back(name, std::move(t)); }
};

inline constexpr uint32_t kArchiveVersion = 1;

// Write-temp-then-rename; the target is never observable half-written.
void save_archive(const std::string& path, const Archive& archive);
Archive load_archive(const std::string& path);

}  // namespace sid
