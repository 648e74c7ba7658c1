#pragma once

#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "licq/core/error.hpp"

namespace licq {

using CsvCell = std::variant<std::string, double, std::int64_t, std::uint64_t>;

/// Doubles print with 17 significant digits so reruns compare byte for byte.
inline std::string csv_format(const CsvCell& c) {
  if (const auto* s = std::get_if<std::string>(&c)) {
    if (s->find_first_of(",\"\n") == std::string::npos) return *s;
    std::string q = "\"";
    for (char ch : *s) {
      if (ch == '"') q += '"';
      q += ch;
    }
    return q + '"';
  }
  if (const auto* d = std::get_if<double>(&c)) {
    if (std::isnan(*d)) return "nan";
    if (std::isinf(*d)) return *d > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", *d);
    return buf;
  }
  if (const auto* i = std::get_if<std::int64_t>(&c)) return std::to_string(*i);
  return std::to_string(std::get<std::uint64_t>(c));
}

/// Report table whose every row carries the run's config hash and seed as
/// its first two columns.
class CsvReport {
 public:
  CsvReport(std::vector<std::string> columns, std::string config_hash, std::uint64_t seed)
      : columns_(std::move(columns)), hash_(std::move(config_hash)), seed_(seed) {}

  void add(std::vector<CsvCell> row) {
    if (row.size() != columns_.size()) {
      throw ModelError("csv row has " + std::to_string(row.size()) + " cells, header has " +
                       std::to_string(columns_.size()));
    }
    rows_.push_back(std::move(row));
  }

  std::size_t size() const { return rows_.size(); }

  std::string str() const {
    std::ostringstream out;
    out << "config_hash,seed";
    for (const auto& c : columns_) out << ',' << c;
    out << '\n';
    for (const auto& r : rows_) {
      out << hash_ << ',' << seed_;
      for (const auto& c : r) out << ',' << csv_format(c);
      out << '\n';
    }
    return out.str();
  }

  void write(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << str();
  }

 private:
  std::vector<std::string> columns_;
  std::string hash_;
  std::uint64_t seed_;
  std::vector<std::vector<CsvCell>> rows_;
};

}  // namespace licq
