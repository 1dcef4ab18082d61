#include "taigan/text_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace taigan {
namespace fs = std::filesystem;

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string format_fixed(double v, int decimals) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed, decimals);
  std::string s(buf, ptr);
  if (s.find_first_not_of("-0.") == std::string::npos && s.front() == '-') s.erase(0, 1);
  return s;
}

std::string trim(std::string_view text) {
  const auto b = text.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = text.find_last_not_of(" \t\r\n");
  return std::string(text.substr(b, e - b + 1));
}

std::vector<std::string> split_ws(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && (text[i] == ' ' || text[i] == '\t' || text[i] == ',')) ++i;
    std::size_t j = i;
    while (j < text.size() && text[j] != ' ' && text[j] != '\t' && text[j] != ',') ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

double parse_double(std::string_view text, const std::string& field) {
  const std::string t = trim(text);
  if (t == "nan") return std::nan("");
  if (t == "inf") return INFINITY;
  if (t == "-inf") return -INFINITY;
  double v = 0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size()) throw ParseError(field, "'" + t + "' is not a number");
  return v;
}

long long parse_int(std::string_view text, const std::string& field) {
  const std::string t = trim(text);
  long long v = 0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size()) throw ParseError(field, "'" + t + "' is not an integer");
  return v;
}

void KeyValueWriter::put(const std::string& key, const std::string& value) { lines_.push_back(key + " = " + value); }
void KeyValueWriter::put(const std::string& key, int value) { put(key, std::to_string(value)); }
void KeyValueWriter::put(const std::string& key, long long value) { put(key, std::to_string(value)); }
void KeyValueWriter::put(const std::string& key, double value) { put(key, format_double(value)); }
void KeyValueWriter::put(const std::string& key, bool value) { put(key, std::string(value ? "true" : "false")); }

void KeyValueWriter::put(const std::string& key, const std::vector<int>& values) {
  std::string s;
  for (std::size_t i = 0; i < values.size(); ++i) s += (i ? " " : "") + std::to_string(values[i]);
  put(key, s);
}

void KeyValueWriter::put(const std::string& key, const std::vector<double>& values) {
  std::string s;
  for (std::size_t i = 0; i < values.size(); ++i) s += (i ? " " : "") + format_double(values[i]);
  put(key, s);
}

void KeyValueWriter::comment(const std::string& text) { lines_.push_back("# " + text); }
void KeyValueWriter::section(const std::string& name) {
  if (!lines_.empty()) lines_.emplace_back();
  lines_.push_back("[" + name + "]");
}

std::string KeyValueWriter::str() const {
  std::string s;
  for (const auto& l : lines_) s += l + "\n";
  return s;
}

void KeyValueWriter::save(const fs::path& path) const { write_text_atomic(path, str()); }

KeyValueReader KeyValueReader::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw PersistenceError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

KeyValueReader KeyValueReader::parse(std::string_view text, const std::string& source) {
  KeyValueReader r;
  std::string section;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string line = trim(text.substr(pos, eol - pos));
    pos = eol + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line = trim(line.substr(0, hash));
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError(where, "unterminated section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(where, "expected 'key = value'");
    std::string key = trim(std::string_view(line).substr(0, eq));
    if (key.empty()) throw ParseError(where, "empty key");
    if (!section.empty()) key = section + "." + key;
    if (r.values_.count(key)) throw ParseError(key, "duplicate key at " + where);
    r.values_[key] = trim(std::string_view(line).substr(eq + 1));
    r.order_.push_back(key);
  }
  return r;
}

const std::string& KeyValueReader::get_string(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ParseError(key, "missing");
  return it->second;
}

long long KeyValueReader::get_int(const std::string& key) const { return parse_int(get_string(key), key); }
double KeyValueReader::get_double(const std::string& key) const { return parse_double(get_string(key), key); }

bool KeyValueReader::get_bool(const std::string& key) const {
  const auto& v = get_string(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ParseError(key, "'" + v + "' is not a boolean");
}

std::vector<int> KeyValueReader::get_ints(const std::string& key) const {
  std::vector<int> out;
  for (const auto& tok : split_ws(get_string(key))) out.push_back(static_cast<int>(parse_int(tok, key)));
  return out;
}

std::vector<double> KeyValueReader::get_doubles(const std::string& key) const {
  std::vector<double> out;
  for (const auto& tok : split_ws(get_string(key))) out.push_back(parse_double(tok, key));
  return out;
}

void write_text_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw PersistenceError("cannot open for writing: " + tmp.string());
    out << content;
    if (!out) throw PersistenceError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw PersistenceError("rename failed for " + path.string() + ": " + ec.message());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PersistenceError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace taigan
