#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace gritcap::detail {

// Whole-file read; throws IoError.
std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temporary file, then renames over `path`, so readers
// never observe a partial file. Throws IoError.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace gritcap::detail
