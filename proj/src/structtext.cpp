#include "lapsim/structtext.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace lapsim {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

void fail_at(const std::filesystem::path& file, int line, const std::string& message) {
  throw ConfigError(file.string() + ":" + std::to_string(line) + ": " + message);
}

const TextEntry* TextSection::find(const std::string& key) const {
  for (const auto& e : entries)
    if (e.key == key) return &e;
  return nullptr;
}

const TextEntry& TextSection::require(const std::string& key,
                                      const std::filesystem::path& file) const {
  const TextEntry* found = nullptr;
  for (const auto& e : entries) {
    if (e.key != key) continue;
    if (found) fail_at(file, e.line, "duplicate key " + key + " in [" + kind + "]");
    found = &e;
  }
  if (!found)
    fail_at(file, line, "missing required key " + key + " in [" + kind +
                            (name.empty() ? "" : " " + name) + "]");
  return *found;
}

StructuredFile parse_structured_text_string(const std::string& text,
                                            const std::filesystem::path& label) {
  StructuredFile out;
  out.path = label;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    size_t hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    std::string line = trim(raw);
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']') fail_at(label, line_no, "unterminated section header");
      std::istringstream header(line.substr(1, line.size() - 2));
      TextSection section;
      section.line = line_no;
      header >> section.kind;
      header >> section.name;
      std::string extra;
      if (header >> extra) fail_at(label, line_no, "malformed section header");
      if (section.kind.empty()) fail_at(label, line_no, "empty section header");
      out.sections.push_back(std::move(section));
      continue;
    }

    size_t eq = line.find('=');
    if (eq == std::string::npos) fail_at(label, line_no, "expected key = value");
    if (out.sections.empty()) fail_at(label, line_no, "entry before any section header");
    TextEntry entry;
    entry.key = trim(line.substr(0, eq));
    entry.value = trim(line.substr(eq + 1));
    entry.line = line_no;
    if (entry.key.empty()) fail_at(label, line_no, "empty key");
    out.sections.back().entries.push_back(std::move(entry));
  }
  return out;
}

StructuredFile parse_structured_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_structured_text_string(buffer.str(), path);
}

std::vector<std::string> entry_tokens(const TextEntry& e) {
  std::istringstream in(e.value);
  std::vector<std::string> out;
  std::string tok;
  while (in >> tok) out.push_back(std::move(tok));
  return out;
}

std::vector<double> entry_doubles(const StructuredFile& f, const TextEntry& e, int expected) {
  auto toks = entry_tokens(e);
  if (expected >= 0 && static_cast<int>(toks.size()) != expected)
    fail_at(f.path, e.line,
            e.key + " expects " + std::to_string(expected) + " numbers, got " +
                std::to_string(toks.size()));
  std::vector<double> out;
  out.reserve(toks.size());
  for (const auto& t : toks) {
    char* end = nullptr;
    double v = std::strtod(t.c_str(), &end);
    if (end == t.c_str() || *end != '\0')
      fail_at(f.path, e.line, "malformed number '" + t + "' in " + e.key);
    out.push_back(v);
  }
  return out;
}

double entry_double(const StructuredFile& f, const TextEntry& e) {
  return entry_doubles(f, e, 1)[0];
}

long long entry_int(const StructuredFile& f, const TextEntry& e) {
  char* end = nullptr;
  long long v = std::strtoll(e.value.c_str(), &end, 10);
  if (end == e.value.c_str() || *end != '\0')
    fail_at(f.path, e.line, "malformed integer '" + e.value + "' in " + e.key);
  return v;
}

bool entry_bool(const StructuredFile& f, const TextEntry& e) {
  if (e.value == "true" || e.value == "1") return true;
  if (e.value == "false" || e.value == "0") return false;
  fail_at(f.path, e.line, "malformed boolean '" + e.value + "' in " + e.key);
}

Vec3 entry_vec3(const StructuredFile& f, const TextEntry& e) {
  auto v = entry_doubles(f, e, 3);
  return Vec3(v[0], v[1], v[2]);
}

}  // namespace lapsim
