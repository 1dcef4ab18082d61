#include "csv.hpp"

#include <sstream>

#include "taigan/errors.hpp"
#include "taigan/text_io.hpp"

namespace taigan::pipeline {

namespace {

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

void CsvTable::add(std::vector<std::string> row) {
  if (row.size() != header_.size())
    throw ValidationError("csv row has " + std::to_string(row.size()) + " fields, header has " +
                          std::to_string(header_.size()));
  for (const auto& f : row)
    if (f.find_first_of(",\n\"") != std::string::npos) throw ValidationError("csv field contains a separator: " + f);
  rows_.push_back(std::move(row));
}

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header_.size(); ++i)
    if (header_[i] == name) return i;
  throw ValidationError("csv has no column '" + name + "'");
}

double CsvTable::number(std::size_t row, const std::string& name) const {
  return parse_double(at(row, name), name);
}

std::string CsvTable::str() const {
  std::ostringstream out;
  auto line = [&](const std::vector<std::string>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) out << (i ? "," : "") << v[i];
    out << '\n';
  };
  line(header_);
  for (const auto& r : rows_) line(r);
  return out.str();
}

void CsvTable::save(const std::filesystem::path& path) const {
  std::filesystem::create_directories(path.parent_path());
  write_text_atomic(path, str());
}

CsvTable CsvTable::parse(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(source, "empty csv");
  CsvTable t(split_commas(line));
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    auto row = split_commas(line);
    if (row.size() != t.header_.size())
      throw ParseError(source + ":" + std::to_string(n), "expected " + std::to_string(t.header_.size()) + " fields");
    t.rows_.push_back(std::move(row));
  }
  return t;
}

CsvTable CsvTable::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw PersistenceError("missing record file " + path.string());
  return parse(read_text(path), path.string());
}

}  // namespace taigan::pipeline
