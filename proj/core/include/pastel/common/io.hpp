#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace pastel {

/// Writes to `<path>.tmp` and renames over `path`, so readers never see a partial file.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

std::string read_file(const std::filesystem::path& path);

} // namespace pastel
