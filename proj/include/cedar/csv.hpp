#pragma once

#include <filesystem>
#include <string>

#include "cedar/types.hpp"

namespace cedar {

// Shortest decimal form that round-trips the exact double value.
std::string format_double(double v);

// Headerless site dataset: one row per observation, columns are the p
// feature values followed by the response. Strict parse — every defect is
// reported with file, row, and column.
SiteData read_site_csv(const std::filesystem::path& path, int site_id = 1);
void write_site_csv(const std::filesystem::path& path, const SiteData& data);

void write_text_file(const std::filesystem::path& path,
                     const std::string& text);

}  // namespace cedar
