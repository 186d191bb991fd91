#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "knitsim/tree.hpp"

namespace knitsim::cli {

using json = nlohmann::json;

inline constexpr std::string_view kSchema = "knitsim-csv/1";

// Bad command line or config; maps to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string sha1_hex(std::string_view data);

// SHA-1 of "blob <size>\0<data>", as git hashes file contents.
std::string git_blob_hash(std::string_view data);

// Shortest text that parses back to the same double.
std::string format_double(double v);

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

// Header and rows, one line each, newline terminated.
std::string render_body(const Table& t);

struct CsvFile {
  std::string generated;  // timestamp line, excluded from every hash
  std::string config;     // canonical config JSON
  std::string config_hash;
  std::string content_hash;
  std::string body;
};

std::string render_csv(const json& config, const Table& t, double wall_seconds);

// Throws UsageError when the text is not a knitsim CSV.
CsvFile parse_csv(const std::string& text);

// Everything except the timestamp line; two runs of the same config match here.
std::string replay_bytes(const CsvFile& f);

std::string read_file(const std::filesystem::path& p);
void write_file(const std::filesystem::path& p, const std::string& data);

// Tree description (see README): root_state, nodes, leaves, optional L/R/d checks.
TreeCircuit tree_from_json(const json& j);

Mat matrix_from_json(const json& j);

}  // namespace knitsim::cli
