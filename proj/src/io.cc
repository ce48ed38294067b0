//
// Copyright 2026 The Consistent Counts Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

#include "consistent_counts/io.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <system_error>
#include <utility>

#include <openssl/evp.h>

#include "consistent_counts/error.h"

namespace consistent_counts {

namespace {

[[noreturn]] void ParseFail(std::size_t line, const std::string& what) {
  throw Error(ErrorCode::kParse, "line " + std::to_string(line) + ": " + what);
}

// Splits one CSV record. Double quotes group fields; "" is a literal quote.
std::vector<std::string> SplitCsv(std::string_view line, std::size_t lineno) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          out.back() += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else {
      out.back() += c;
    }
  }
  if (quoted) ParseFail(lineno, "unterminated quote");
  return out;
}

std::string QuoteCsv(std::string_view field) {
  if (field.find_first_of(",\"\n") == std::string_view::npos) {
    return std::string(field);
  }
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

double ParseNumber(std::string_view s, std::size_t lineno, const char* what) {
  double v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    ParseFail(lineno, std::string("bad ") + what + " '" + std::string(s) + "'");
  }
  if (!std::isfinite(v)) ParseFail(lineno, std::string(what) + " must be finite");
  return v;
}

std::vector<int> ParseCoords(std::string_view s, const Schema& schema,
                             MarginId margin, std::size_t lineno) {
  const std::vector<int> members = margin.members();
  std::vector<int> coords;
  if (!s.empty()) {
    std::size_t start = 0;
    while (true) {
      const std::size_t colon = s.find(':', start);
      const std::string_view part =
          s.substr(start, colon == std::string_view::npos ? colon : colon - start);
      int v = 0;
      const auto [ptr, ec] =
          std::from_chars(part.data(), part.data() + part.size(), v);
      if (ec != std::errc() || ptr != part.data() + part.size() || part.empty()) {
        ParseFail(lineno, "bad cell coordinate '" + std::string(part) + "'");
      }
      coords.push_back(v - 1);
      if (colon == std::string_view::npos) break;
      start = colon + 1;
    }
  }
  if (coords.size() != members.size()) {
    ParseFail(lineno, "table '" + schema.MarginName(margin) + "' needs " +
                          std::to_string(members.size()) + " coordinates, got " +
                          std::to_string(coords.size()));
  }
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const int levels = schema.variable(members[i]).levels;
    if (coords[i] < 0 || coords[i] >= levels) {
      ParseFail(lineno, "coordinate " + std::to_string(coords[i] + 1) +
                            " out of range 1.." + std::to_string(levels) +
                            " for variable '" +
                            schema.variable(members[i]).name + "'");
    }
  }
  return coords;
}

struct PendingTable {
  std::vector<double> values;
  std::vector<double> variances;
  std::vector<std::size_t> lines;  // 0 = not yet seen
};

template <typename Fn>
void ForEachLine(std::string_view text, Fn&& fn) {
  std::size_t lineno = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    fn(++lineno, line);
    start = end + 1;
  }
}

std::string MarginLabel(const Schema& schema, MarginId m) {
  return QuoteCsv(schema.MarginName(m));
}

}  // namespace

std::string FormatDouble(double x) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  if (ec != std::errc()) return "nan";
  return std::string(buf, ptr);
}

std::string FormatCoords(std::span<const int> zero_based) {
  std::string out;
  for (std::size_t i = 0; i < zero_based.size(); ++i) {
    if (i > 0) out += ':';
    out += std::to_string(zero_based[i] + 1);
  }
  return out;
}

Schema ParseSchemaJson(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kParse, std::string("schema: ") + e.what());
  }
  if (!j.is_object() || !j.contains("variables") || !j["variables"].is_array()) {
    throw Error(ErrorCode::kParse, "schema: expected {\"variables\": [...]}");
  }
  std::vector<Variable> vars;
  std::size_t index = 0;
  for (const auto& v : j["variables"]) {
    ++index;
    if (!v.is_object() || !v.contains("name") || !v["name"].is_string() ||
        !v.contains("levels") || !v["levels"].is_number_integer()) {
      throw Error(ErrorCode::kParse,
                  "schema: variable " + std::to_string(index) +
                      " needs a string name and an integer levels");
    }
    const std::string name = v["name"].get<std::string>();
    if (name.empty() || name.find_first_of("+:,\"") != std::string::npos) {
      throw Error(ErrorCode::kParse, "schema: variable name '" + name +
                                         "' is empty or contains + : , or \"");
    }
    vars.push_back({name, v["levels"].get<int>()});
  }
  try {
    return Schema(std::move(vars));
  } catch (const Error& e) {
    throw Error(ErrorCode::kParse, std::string("schema: ") + e.what());
  }
}

std::string SchemaToJson(const Schema& schema) {
  nlohmann::json vars = nlohmann::json::array();
  for (const Variable& v : schema.variables()) {
    vars.push_back({{"name", v.name}, {"levels", v.levels}});
  }
  return nlohmann::json{{"variables", vars}}.dump(2) + "\n";
}

NoisyTableSet ParseCountsCsv(const Schema& schema, std::string_view text,
                             const CountsReadOptions& options) {
  std::map<MarginId, PendingTable> pending;
  bool header = false;
  ForEachLine(text, [&](std::size_t lineno, std::string_view line) {
    if (!header) {
      if (line != "table,cell_coords,value,variance") {
        ParseFail(lineno, "expected header 'table,cell_coords,value,variance'");
      }
      header = true;
      return;
    }
    if (line.empty()) return;
    const auto fields = SplitCsv(line, lineno);
    if (fields.size() != 4) {
      ParseFail(lineno, "expected 4 fields, got " + std::to_string(fields.size()));
    }
    MarginId margin;
    try {
      margin = schema.ParseMargin(fields[0]);
    } catch (const Error& e) {
      ParseFail(lineno, e.what());
    }
    const auto coords = ParseCoords(fields[1], schema, margin, lineno);
    const double value = ParseNumber(fields[2], lineno, "value");
    const double variance = ParseNumber(fields[3], lineno, "variance");
    if (variance < 0) ParseFail(lineno, "variance must be >= 0");

    auto [it, fresh] = pending.try_emplace(margin);
    PendingTable& t = it->second;
    if (fresh) {
      const auto cells = static_cast<std::size_t>(schema.CellCount(margin));
      t.values.assign(cells, 0.0);
      t.variances.assign(cells, 0.0);
      t.lines.assign(cells, 0);
    }
    const std::size_t offset =
        DenseTable::Zeros(margin, schema.Dims(margin)).Offset(coords);
    if (t.lines[offset] != 0) {
      ParseFail(lineno, "duplicate cell, first seen on line " +
                            std::to_string(t.lines[offset]));
    }
    t.lines[offset] = lineno;
    t.values[offset] = value;
    t.variances[offset] = variance;
  });
  if (!header) throw Error(ErrorCode::kParse, "line 1: empty counts file");

  double floor = 0;
  if (options.epsilon_invariant) {
    floor = *options.epsilon_invariant;
    if (!(floor > 0) || !std::isfinite(floor)) {
      throw Error(ErrorCode::kParameter, "epsilon_invariant must be > 0");
    }
  } else {
    std::vector<double> positive;
    for (const auto& [m, t] : pending) {
      for (double v : t.variances) {
        if (v > 0) positive.push_back(v);
      }
    }
    if (!positive.empty()) {
      std::nth_element(positive.begin(),
                       positive.begin() + positive.size() / 2, positive.end());
      floor = kInvariantFloorFactor * positive[positive.size() / 2];
    } else {
      floor = kInvariantFloorFactor;
    }
  }

  std::vector<Table> tables;
  for (auto& [m, t] : pending) {
    for (std::size_t i = 0; i < t.lines.size(); ++i) {
      if (t.lines[i] == 0) {
        const CellIndex c = DenseTable::Zeros(m, schema.Dims(m)).Coords(i);
        throw Error(ErrorCode::kParse,
                    "table '" + schema.MarginName(m) + "' is missing cell " +
                        FormatCoords(c));
      }
    }
    for (double& v : t.variances) {
      if (v == 0) v = floor;
    }
    const bool uniform =
        std::all_of(t.variances.begin(), t.variances.end(),
                    [&](double v) { return v == t.variances.front(); });
    Variance variance = uniform ? Variance::Scalar(t.variances.front())
                                : Variance::PerCell(std::move(t.variances));
    tables.emplace_back(DenseTable(m, schema.Dims(m), std::move(t.values)),
                        std::move(variance));
  }
  return NoisyTableSet(schema, std::move(tables));
}

std::string CountsToCsv(const NoisyTableSet& noisy) {
  std::ostringstream out;
  out << "table,cell_coords,value,variance\n";
  const Schema& schema = noisy.schema();
  for (const auto& [m, t] : noisy.tables()) {
    const std::string label = MarginLabel(schema, m);
    for (std::size_t i = 0; i < t.size(); ++i) {
      out << label << ',' << FormatCoords(t.counts().Coords(i)) << ','
          << FormatDouble(t.values()[i]) << ','
          << FormatDouble(t.variance().at(i)) << '\n';
    }
  }
  return out.str();
}

std::string EstimatesToCsv(
    const FinalEstimates& estimates,
    const std::map<MarginId, std::vector<double>>* variances) {
  std::ostringstream out;
  out << "table,cell_coords,estimate,variance\n";
  const Schema& schema = estimates.schema();
  for (const auto& [m, t] : estimates.tables()) {
    const std::string label = MarginLabel(schema, m);
    const std::vector<double>* v = nullptr;
    if (variances != nullptr) {
      auto it = variances->find(m);
      if (it != variances->end()) v = &it->second;
    }
    for (std::size_t i = 0; i < t.size(); ++i) {
      out << label << ',' << FormatCoords(t.Coords(i)) << ','
          << FormatDouble(t[i]) << ',';
      if (v != nullptr) out << FormatDouble((*v)[i]);
      out << '\n';
    }
  }
  return out.str();
}

std::string IntervalsToCsv(const Schema& schema, const IntervalTable& table) {
  std::ostringstream out;
  out << "table,cell_coords,estimate,lower,upper,alpha,method,clipped,empty\n";
  const std::string method(IntervalMethodName(table.method));
  for (const auto& [m, cells] : table.cells) {
    const std::string label = MarginLabel(schema, m);
    const DenseTable shape = DenseTable::Zeros(schema, m);
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const Interval& iv = cells[i];
      out << label << ',' << FormatCoords(shape.Coords(i)) << ','
          << FormatDouble(iv.estimate) << ',' << FormatDouble(iv.lower) << ','
          << FormatDouble(iv.upper) << ',' << FormatDouble(table.alpha) << ','
          << method << ',' << (iv.clipped ? 1 : 0) << ',' << (iv.empty ? 1 : 0)
          << '\n';
    }
  }
  return out.str();
}

std::string CovarianceToCsv(const Schema& schema,
                            const std::map<MarginId, Eigen::Index>& offsets,
                            const Eigen::MatrixXd& covariance) {
  // Label every stacked column once.
  std::vector<std::string> labels(covariance.rows());
  for (const auto& [m, offset] : offsets) {
    const DenseTable shape = DenseTable::Zeros(schema, m);
    const std::string name = MarginLabel(schema, m);
    for (std::size_t i = 0; i < shape.size(); ++i) {
      const Eigen::Index col = offset + static_cast<Eigen::Index>(i);
      if (col < covariance.rows()) {
        labels[col] = name + ',' + FormatCoords(shape.Coords(i));
      }
    }
  }
  std::ostringstream out;
  out << "row_table,row_coords,col_table,col_coords,covariance\n";
  for (Eigen::Index r = 0; r < covariance.rows(); ++r) {
    for (Eigen::Index c = 0; c < covariance.cols(); ++c) {
      out << labels[r] << ',' << labels[c] << ','
          << FormatDouble(covariance(r, c)) << '\n';
    }
  }
  return out.str();
}

std::string ReadFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw Error(ErrorCode::kIo, "error reading '" + path + "'");
  return buf.str();
}

void WriteFile(const std::string& path, std::string_view contents) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot write '" + path + "'");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw Error(ErrorCode::kIo, "error writing '" + path + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(ErrorCode::kIo, "cannot move output into '" + path + "'");
  }
}

std::string Sha256Hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(),
                 nullptr) != 1) {
    throw Error(ErrorCode::kIo, "sha256 failed");
  }
  std::ostringstream out;
  out << std::hex << std::setfill('0');
  for (unsigned int i = 0; i < len; ++i) out << std::setw(2) << int{digest[i]};
  return out.str();
}

std::string RunManifest::ConfigHash() const { return Sha256Hex(config.dump()); }

nlohmann::json RunManifest::ToJson() const {
  nlohmann::json j = {
      {"command", command},
      {"config", config},
      {"config_hash", ConfigHash()},
      {"seed", seed},
      {"inputs", input_digests},
      {"outputs", output_digests},
      {"tool_version", tool_version},
      {"wall_seconds", wall_seconds},
      {"peak_rss_bytes", peak_rss_bytes},
      {"status", status},
      {"exit_code", exit_code},
  };
  if (!error.empty()) j["error"] = error;
  return j;
}

}  // namespace consistent_counts
