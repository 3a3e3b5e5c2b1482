#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lapsim/math.hpp"

namespace lapsim {

/// Line-oriented config dialect shared by scenario files and instrument
/// libraries: `[kind optional-name]` section headers, `key = value` entries,
/// `#` comments, repeated keys allowed. Order is preserved.
struct TextEntry {
  std::string key;
  std::string value;  // trimmed, comment stripped
  int line = 0;
};

struct TextSection {
  std::string kind;
  std::string name;  // empty for anonymous sections
  int line = 0;
  std::vector<TextEntry> entries;

  const TextEntry* find(const std::string& key) const;
  /// Single required key; throws ConfigError if absent or repeated.
  const TextEntry& require(const std::string& key, const std::filesystem::path& file) const;
};

struct StructuredFile {
  std::filesystem::path path;
  std::vector<TextSection> sections;
};

StructuredFile parse_structured_text(const std::filesystem::path& path);
StructuredFile parse_structured_text_string(const std::string& text,
                                            const std::filesystem::path& label);

/// Value parsers. All throw ConfigError citing file:line on malformed input.
double entry_double(const StructuredFile& f, const TextEntry& e);
long long entry_int(const StructuredFile& f, const TextEntry& e);
bool entry_bool(const StructuredFile& f, const TextEntry& e);
Vec3 entry_vec3(const StructuredFile& f, const TextEntry& e);
std::vector<double> entry_doubles(const StructuredFile& f, const TextEntry& e, int expected = -1);
std::vector<std::string> entry_tokens(const TextEntry& e);

[[noreturn]] void fail_at(const std::filesystem::path& file, int line, const std::string& message);

}  // namespace lapsim
