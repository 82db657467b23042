#pragma once

#include <filesystem>
#include <map>
#include <string>

namespace pstyle {

/// Flat `key = value` lines; `#` starts a comment, blank lines are skipped.
/// A repeated key keeps its last value.
std::map<std::string, std::string> parse_config(const std::string& text);

std::map<std::string, std::string> load_config(const std::filesystem::path& path);

}  // namespace pstyle
