#pragma once

// Minimal comma-separated tables for the records/ and tables/ trees. Fields
// never contain commas or quotes (ids are [A-Za-z0-9_-], lists use spaces).

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace taigan::pipeline {

class CsvTable {
 public:
  CsvTable() = default;
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  const std::vector<std::string>& header() const { return header_; }
  const std::vector<std::vector<std::string>>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }

  void add(std::vector<std::string> row);
  std::size_t column(const std::string& name) const;
  const std::string& at(std::size_t row, const std::string& name) const { return rows_[row][column(name)]; }
  double number(std::size_t row, const std::string& name) const;

  std::string str() const;
  void save(const std::filesystem::path& path) const;
  static CsvTable load(const std::filesystem::path& path);
  static CsvTable parse(const std::string& text, const std::string& source);

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

}  // namespace taigan::pipeline
