#pragma once

#include <filesystem>
#include <string>

#include "pd/common.hpp"

namespace pd {

/// Full-precision round-trippable decimal form (%.17g), used for every CSV
/// number so reruns are byte-identical.
std::string fmt17(double v);

/// Write content to path via a temp file + rename (atomic on POSIX).
/// Throws IoError on failure; creates parent directories.
void write_text_atomic(const std::filesystem::path& path, const std::string& content);

/// Read a whole file; throws IoError if missing/unreadable.
std::string read_text(const std::filesystem::path& path);

}  // namespace pd
