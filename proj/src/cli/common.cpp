#include "cli/common.hpp"

#include <openssl/evp.h>

#include <array>
#include <charconv>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace knitsim::cli {

std::string sha1_hex(std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md.data(), &len, EVP_sha1(), nullptr) != 1)
    throw std::runtime_error("SHA-1 digest failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

std::string git_blob_hash(std::string_view data) {
  std::string s = "blob " + std::to_string(data.size());
  s.push_back('\0');
  s.append(data);
  return sha1_hex(s);
}

std::string format_double(double v) {
  std::array<char, 32> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + '"';
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::array<char, 32> buf{};
  std::strftime(buf.data(), buf.size(), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf.data();
}

bool starts_with(const std::string& s, std::string_view prefix) { return s.compare(0, prefix.size(), prefix) == 0; }

}  // namespace

std::string render_body(const Table& t) {
  std::string out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += csv_field(cells[i]);
    }
    out += '\n';
  };
  line(t.header);
  for (const auto& r : t.rows) {
    if (r.size() != t.header.size()) throw std::logic_error("CSV row width does not match the header");
    line(r);
  }
  return out;
}

std::string render_csv(const json& config, const Table& t, double wall_seconds) {
  const std::string cfg = config.dump();
  const std::string body = render_body(t);
  std::ostringstream os;
  os << kSchema << '\n';
  os << "# generated: " << utc_now() << " wall_seconds=" << std::fixed << std::setprecision(3) << wall_seconds << '\n';
  os << "# config: " << cfg << '\n';
  os << "# config_hash: " << git_blob_hash(cfg) << '\n';
  os << "# content_hash: " << git_blob_hash(body) << '\n';
  os << body;
  return os.str();
}

CsvFile parse_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  auto next = [&](std::string_view prefix) {
    if (!std::getline(is, line) || !starts_with(line, prefix))
      throw UsageError("not a knitsim CSV: expected a line starting with '" + std::string(prefix) + "'");
    return line.substr(prefix.size());
  };
  if (!std::getline(is, line) || line != kSchema) throw UsageError("not a knitsim CSV: bad schema line");
  CsvFile f;
  f.generated = next("# generated: ");
  f.config = next("# config: ");
  f.config_hash = next("# config_hash: ");
  f.content_hash = next("# content_hash: ");
  std::ostringstream rest;
  rest << is.rdbuf();
  f.body = rest.str();
  return f;
}

std::string replay_bytes(const CsvFile& f) {
  return std::string(kSchema) + "\n# config: " + f.config + "\n# config_hash: " + f.config_hash +
         "\n# content_hash: " + f.content_hash + "\n" + f.body;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::filesystem::path& p, const std::string& data) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << data;
  if (!out) throw std::runtime_error("write failed for " + p.string());
}

// ---- tree descriptions ----

Mat matrix_from_json(const json& j) {
  if (!j.is_object() || !j.contains("real")) throw UsageError("matrix must be an object with 'real' (and optional 'imag')");
  const json& re = j.at("real");
  if (!re.is_array() || re.empty() || !re[0].is_array()) throw UsageError("matrix 'real' must be a nested array");
  const auto rows = static_cast<Eigen::Index>(re.size());
  const auto cols = static_cast<Eigen::Index>(re[0].size());
  Mat m = Mat::Zero(rows, cols);
  auto fill = [&](const json& part, bool imag) {
    if (!part.is_array() || static_cast<Eigen::Index>(part.size()) != rows) throw UsageError("matrix rows disagree in count");
    for (Eigen::Index i = 0; i < rows; ++i) {
      const json& row = part[static_cast<std::size_t>(i)];
      if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) throw UsageError("matrix rows disagree in length");
      for (Eigen::Index k = 0; k < cols; ++k) {
        const double v = row[static_cast<std::size_t>(k)].get<double>();
        m(i, k) += imag ? cplx(0.0, v) : cplx(v, 0.0);
      }
    }
  };
  fill(re, false);
  if (j.contains("imag")) fill(j.at("imag"), true);
  return m;
}

namespace {

DensityOperator root_state_from_json(const json& j, Eigen::Index dim) {
  if (j.is_object()) {
    const Mat m = matrix_from_json(j);
    if (m.rows() != dim || m.cols() != dim)
      throw UsageError("root_state must be " + std::to_string(dim) + "x" + std::to_string(dim));
    return DensityOperator(m);
  }
  if (!j.is_string()) throw UsageError("root_state must be a preset name or a matrix");
  const std::string s = j.get<std::string>();
  if (s == "zero") return DensityOperator::pure(basis_vector(dim, 0));
  if (s == "plus") return DensityOperator::pure(Vec::Constant(dim, 1.0 / std::sqrt(static_cast<double>(dim))));
  if (s == "maximally_mixed") return DensityOperator(Mat::Identity(dim, dim) / static_cast<double>(dim));
  if (starts_with(s, "random:")) {
    std::uint64_t seed = 0;
    const std::string num = s.substr(7);
    const auto res = std::from_chars(num.data(), num.data() + num.size(), seed);
    if (res.ec != std::errc() || res.ptr != num.data() + num.size()) throw UsageError("bad seed in root_state '" + s + "'");
    Stream rng(seed, stream_tag("tree-file-root"));
    return DensityOperator::pure(random_pure_state(dim, rng));
  }
  throw UsageError("unknown root_state preset '" + s + "'");
}

Eigen::Index int_field(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key) || !j.at(key).is_number_integer()) throw UsageError(where + ": missing integer field '" + key + "'");
  return j.at(key).get<Eigen::Index>();
}

}  // namespace

TreeCircuit tree_from_json(const json& j) {
  if (!j.is_object()) throw UsageError("tree description must be a JSON object");
  for (const char* key : {"nodes", "leaves"})
    if (j.contains(key) && !j.at(key).is_object()) throw UsageError(std::string("tree '") + key + "' must be an object");
  if (!j.contains("leaves") || j.at("leaves").empty()) throw UsageError("tree needs at least one leaf");

  // Collect every path: explicit nodes, leaves and their ancestors.
  std::set<Path> paths;
  std::map<Path, std::string> leaf_paulis;
  for (const auto& [key, val] : j.at("leaves").items()) {
    const Path p = parse_path(key);
    if (!val.is_string()) throw UsageError("leaf " + key + ": observable must be a Pauli string");
    leaf_paulis[p] = val.get<std::string>();
    for (Path q = p; !q.empty(); q.pop_back()) paths.insert(q);
  }
  const json nodes_json = j.value("nodes", json::object());
  for (const auto& [key, val] : nodes_json.items()) {
    const Path p = parse_path(key);
    for (Path q = p; !q.empty(); q.pop_back()) paths.insert(q);
  }

  // Resolve channels deepest first so children's input dims are known.
  std::vector<Path> order(paths.begin(), paths.end());
  std::stable_sort(order.begin(), order.end(), [](const Path& a, const Path& b) { return a.size() > b.size(); });
  std::map<Path, QuantumChannel> channels;
  std::map<Path, HermitianOperator> leaves;
  auto out_dim_of = [&](const Path& p) -> Eigen::Index {
    if (leaf_paulis.count(p)) return Eigen::Index{1} << leaf_paulis.at(p).size();
    Eigen::Index prod = 1;
    bool any = false;
    for (int k = 0;; ++k) {
      auto it = channels.find(child_of(p, k));
      if (it == channels.end()) break;
      prod *= it->second.in_dim();
      any = true;
    }
    if (!any) throw UsageError("node " + path_to_string(p) + " has no children and no leaf observable");
    return prod;
  };
  for (const Path& p : order) {
    const std::string where = "node " + path_to_string(p);
    const Eigen::Index out = out_dim_of(p);
    if (leaf_paulis.count(p)) {
      const std::string& s = leaf_paulis.at(p);
      if (s.empty()) throw UsageError("leaf " + path_to_string(p) + ": empty Pauli string");
      leaves.emplace(p, HermitianOperator(pauli_string(std::string_view(s))));
    }
    const std::string key = path_to_string(p);
    if (!nodes_json.contains(key)) {
      if (!is_power_of_two(static_cast<std::size_t>(out)))
        throw UsageError(where + ": an implicit identity needs a power-of-two output dimension");
      channels.emplace(p, QuantumChannel::identity(out));
      continue;
    }
    const json& spec = nodes_json.at(key);
    if (!spec.is_object()) throw UsageError(where + ": must be an object");
    const std::string kind = spec.value("kind", "");
    if (kind == "identity") {
      channels.emplace(p, QuantumChannel::identity(out));
    } else if (kind == "unitary") {
      if (spec.contains("data")) {
        const Mat u = matrix_from_json(spec.at("data"));
        if (!is_unitary(u)) throw UsageError(where + ": data is not unitary");
        channels.emplace(p, QuantumChannel::unitary(u));
      } else {
        const auto seed = spec.contains("seed") ? spec.at("seed").get<std::uint64_t>() : 0;
        if (!spec.contains("seed")) throw UsageError(where + ": unitary needs 'data' or 'seed'");
        Stream rng(seed, stream_tag("tree-file-node", p));
        channels.emplace(p, QuantumChannel::unitary(haar_unitary(out, rng)));
      }
    } else if (kind == "kraus") {
      if (spec.contains("data")) {
        if (!spec.at("data").is_array()) throw UsageError(where + ": kraus data must be a list of matrices");
        std::vector<Mat> ks;
        for (const json& m : spec.at("data")) ks.push_back(matrix_from_json(m));
        channels.emplace(p, QuantumChannel(std::move(ks)));
      } else {
        if (!spec.contains("seed")) throw UsageError(where + ": kraus needs 'data' or 'seed'");
        const Eigen::Index in = int_field(spec, "in_dim", where);
        const int anc = spec.value("ancilla", 1);
        Stream rng(spec.at("seed").get<std::uint64_t>(), stream_tag("tree-file-node", p));
        channels.emplace(p, QuantumChannel::random(in, out, anc, rng));
      }
    } else {
      throw UsageError(where + ": kind must be identity, unitary or kraus");
    }
    if (spec.contains("in_dim") && int_field(spec, "in_dim", where) != channels.at(p).in_dim())
      throw UsageError(where + ": in_dim does not match the channel");
  }
  Eigen::Index root_dim = 1;
  for (int k = 0; channels.count(Path{k}); ++k) root_dim *= channels.at(Path{k}).in_dim();
  check_dim(static_cast<std::size_t>(root_dim), "tree root state");
  const DensityOperator rho = root_state_from_json(j.value("root_state", json("zero")), root_dim);
  TreeCircuit tree(rho, std::move(channels), std::move(leaves));
  if (j.contains("L") && j.at("L").get<int>() != tree.L()) throw UsageError("tree: L does not match the structure");
  if (j.contains("R") && j.at("R").get<int>() != tree.R()) throw UsageError("tree: R does not match the structure");
  if (j.contains("d") && j.at("d").get<Eigen::Index>() != tree.d()) throw UsageError("tree: d does not match the structure");
  return tree;
}

}  // namespace knitsim::cli
