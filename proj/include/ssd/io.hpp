#pragma once

#include <string>

namespace ssd {

/// Writes `content` to a temporary sibling of `path`, then renames it over
/// `path`, so readers see either the old file or the complete new one.
void write_file_atomic(const std::string& path, const std::string& content);

/// Whole file as bytes; throws std::runtime_error when unreadable.
std::string read_file(const std::string& path);

}  // namespace ssd
