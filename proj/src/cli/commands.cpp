#include "cli/commands.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <iostream>
#include <numbers>

#include "knitsim/oracle.hpp"
#include "knitsim/separation.hpp"

namespace knitsim::cli {

namespace {

namespace fs = std::filesystem;

// ---- config schema ----

enum class Kind { integer, number, text, int_list, object };

struct Field {
  const char* name;
  Kind kind;
  json fallback;  // null: required (or optional when `optional` is set)
  bool optional = false;
};

const std::vector<Field>& schema(const std::string& command) {
  static const std::map<std::string, std::vector<Field>> all{
      {"tomography",
       {{"ensemble", Kind::text, "two_design"}, {"d", Kind::integer, 2}, {"eps", Kind::number, nullptr},
        {"delta", Kind::number, 0.1}, {"trials", Kind::integer, 20}, {"channel", Kind::text, "random"},
        {"observable", Kind::text, "random"}, {"ancilla", Kind::integer, 1}, {"threshold", Kind::number, 0.85}}},
      {"twolayer",
       {{"R", Kind::integer, 2}, {"d", Kind::integer, 2}, {"eps", Kind::number, nullptr}, {"delta", Kind::number, 0.1},
        {"protocol", Kind::text, "b"}, {"ensemble", Kind::text, "two_design"}, {"trials", Kind::integer, 20},
        {"ancilla", Kind::integer, 1}, {"threshold", Kind::number, 0.85}, {"tree", Kind::object, nullptr, true}}},
      {"tree",
       {{"L", Kind::integer, 2}, {"R", Kind::integer, 2}, {"d", Kind::integer, 2}, {"eps", Kind::number, nullptr},
        {"delta", Kind::number, 0.1}, {"ensemble", Kind::text, "two_design"}, {"trials", Kind::integer, 10},
        {"ancilla", Kind::integer, 1}, {"threshold", Kind::number, 0.85}, {"tree", Kind::object, nullptr, true}}},
      {"scaling",
       {{"d", Kind::integer, 2}, {"L", Kind::integer, 1}, {"R_min", Kind::integer, 1}, {"R_max", Kind::integer, 6},
        {"eps", Kind::number, nullptr}, {"delta", Kind::number, 0.1}, {"ensemble", Kind::text, "two_design"}}},
      {"separation",
       {{"R", Kind::int_list, json::array({1, 2, 3})}, {"n", Kind::integer, 1}, {"eps", Kind::number, nullptr},
        {"delta", Kind::number, 0.1}, {"instances", Kind::integer, 20}, {"shots", Kind::int_list, json::array()},
        {"ensemble", Kind::text, "two_design"}}},
      {"plan",
       {{"L", Kind::integer, 1}, {"R", Kind::integer, 2}, {"d", Kind::integer, 2}, {"eps", Kind::number, nullptr},
        {"delta", Kind::number, 0.1}, {"ensemble", Kind::text, "two_design"}, {"protocol", Kind::text, "b"},
        {"tree", Kind::object, nullptr, true}}},
  };
  auto it = all.find(command);
  if (it == all.end()) throw UsageError("unknown command '" + command + "'");
  return it->second;
}

bool kind_matches(const json& v, Kind k) {
  switch (k) {
    case Kind::integer: return v.is_number_integer();
    case Kind::number: return v.is_number();
    case Kind::text: return v.is_string();
    case Kind::object: return v.is_object();
    case Kind::int_list:
      if (!v.is_array()) return false;
      for (const json& x : v)
        if (!x.is_number_integer()) return false;
      return true;
  }
  return false;
}

void need(bool cond, const std::string& msg) {
  if (!cond) throw UsageError(msg);
}

TwoLayerProtocol parse_protocol(const std::string& s) {
  if (s == "a") return TwoLayerProtocol::a;
  if (s == "b") return TwoLayerProtocol::b;
  throw UsageError("protocol must be 'a' or 'b'");
}

bool power_of_two_dim(long long d) { return d >= 2 && is_power_of_two(static_cast<std::size_t>(d)); }

std::string num(double v) { return format_double(v); }
std::string num(std::uint64_t v) { return std::to_string(v); }
std::string num(int v) { return std::to_string(v); }

double fraction(int ok, int total) { return total ? static_cast<double>(ok) / total : 0.0; }

// ---- commands ----

CommandResult run_tomography(const json& c, int threads) {
  const EnsembleKind kind = parse_ensemble(c["ensemble"].get<std::string>());
  const auto d = c["d"].get<Eigen::Index>();
  const double eps = c["eps"], delta = c["delta"];
  const int trials = c["trials"];
  const std::uint64_t seed = c["seed"];
  const std::uint64_t shots = plan_shots(kind, static_cast<std::size_t>(d), 1.0, eps, delta);
  const std::string obs_name = c["observable"];
  CommandResult r;
  r.table.header = {"trial", "seed", "ensemble", "d", "shots", "error", "eps", "success"};
  int ok = 0;
  for (int t = 0; t < trials; ++t) {
    const std::uint64_t s = derive_seed(seed, "tomography", static_cast<std::uint64_t>(t));
    Stream rng(s, stream_tag("cli-tomography-instance"));
    const QuantumChannel ch =
        c["channel"] == "identity" ? QuantumChannel::identity(d) : QuantumChannel::random(d, d, c["ancilla"], rng);
    Mat o;
    if (obs_name == "random") {
      o = random_hermitian(d, rng);
      o /= op_norm(o);
    } else {
      o = pauli_string(std::string_view(obs_name));
    }
    const HermitianOperator obs(o);
    const Mat target = adjoint_apply(ch, obs.matrix());
    const LearnedObservable learned = learn({ch, obs, kind, shots, s}, {threads, std::nullopt});
    const double err = op_norm(learned.estimate.matrix() - target);
    ok += err <= eps;
    r.table.rows.push_back({num(t), num(s), to_string(kind), num(static_cast<std::uint64_t>(d)), num(shots), num(err),
                            num(eps), num(err <= eps ? 1 : 0)});
  }
  const double frac = fraction(ok, trials);
  r.status = frac >= c["threshold"].get<double>() ? kExitOk : kExitThreshold;
  r.summary = "tomography: " + std::to_string(ok) + "/" + std::to_string(trials) + " trials within eps, N=" +
              std::to_string(shots);
  return r;
}

TreeCircuit trial_tree(const json& c, int L, std::uint64_t seed, const char* label, int t) {
  if (c.contains("tree")) return tree_from_json(c["tree"]);
  return random_tree(L, c["R"], c["d"].get<Eigen::Index>(), derive_seed(seed, label, static_cast<std::uint64_t>(t)),
                     c["ancilla"]);
}

json node_diagnostics(const TreeCircuit& tree, const ShotPlan& plan, const TreeRun& run) {
  const auto dev = node_deviations(tree, run);
  const auto local = local_errors(tree, run);
  json nodes = json::object();
  for (const auto& [p, np] : plan.nodes) {
    nodes[path_to_string(p)] = {{"shots", np.shots},
                                {"accuracy", np.accuracy},
                                {"budget", np.budget},
                                {"input_norm", np.input_norm},
                                {"local_error", local.at(p)},
                                {"deviation", dev.at(p)}};
  }
  return nodes;
}

CommandResult run_twolayer(const json& c, int threads) {
  const EnsembleKind kind = parse_ensemble(c["ensemble"].get<std::string>());
  const TwoLayerProtocol protocol = parse_protocol(c["protocol"]);
  const double eps = c["eps"], delta = c["delta"];
  const int trials = c["trials"];
  const std::uint64_t seed = c["seed"];
  CommandResult r;
  r.diagnostics = {{"command", "twolayer"}, {"trials", json::array()}};
  int ok = 0;
  for (int t = 0; t < trials; ++t) {
    const TreeCircuit tree = trial_tree(c, 1, seed, "twolayer-tree", t);
    const ShotPlan plan = allocate(tree, eps, delta, kind, protocol);
    const std::uint64_t s = derive_seed(seed, "twolayer-run", static_cast<std::uint64_t>(t));
    const TreeRun run = estimate_two_layer(tree, plan, protocol, s, {threads});
    const double exact = exact_expectation(tree);
    const double err = std::abs(run.estimate - exact);
    const bool good = good_tomography(plan, local_errors(tree, run));
    ok += err <= eps;
    if (t == 0) {
      r.table.header = {"trial", "seed", "protocol", "exact", "estimate", "abs_error", "success", "good_tomography",
                        "max_abs_output"};
      for (const auto& [p, np] : plan.nodes) r.table.header.push_back("shots_" + path_to_string(p));
      r.table.header.push_back("shots_root");
      r.table.header.push_back("shots_total");
    }
    std::vector<std::string> row{num(t),   num(s),           to_string(protocol),        num(exact),
                                 num(run.estimate), num(err), num(err <= eps ? 1 : 0), num(good ? 1 : 0),
                                 num(run.max_abs_output)};
    for (const auto& [p, np] : plan.nodes) row.push_back(num(np.shots));
    row.push_back(num(run.root_shots));
    row.push_back(num(run.total_shots));
    r.table.rows.push_back(std::move(row));
    r.diagnostics["trials"].push_back({{"trial", t}, {"seed", s}, {"nodes", node_diagnostics(tree, plan, run)}});
  }
  r.status = fraction(ok, trials) >= c["threshold"].get<double>() ? kExitOk : kExitThreshold;
  r.summary = "twolayer: " + std::to_string(ok) + "/" + std::to_string(trials) + " trials within eps";
  return r;
}

CommandResult run_tree(const json& c, int threads) {
  const EnsembleKind kind = parse_ensemble(c["ensemble"].get<std::string>());
  const double eps = c["eps"], delta = c["delta"];
  const int trials = c["trials"];
  const std::uint64_t seed = c["seed"];
  CommandResult r;
  r.diagnostics = {{"command", "tree"}, {"trials", json::array()}};
  int ok = 0;
  for (int t = 0; t < trials; ++t) {
    const TreeCircuit tree = trial_tree(c, c["L"], seed, "tree-tree", t);
    const ShotPlan plan = allocate(tree, eps, delta, kind);
    const std::uint64_t s = derive_seed(seed, "tree-run", static_cast<std::uint64_t>(t));
    const TreeRun run = estimate_tree(tree, plan, s, {threads});
    const double exact = exact_expectation(tree);
    const double err = std::abs(run.estimate - exact);
    const bool good = good_tomography(plan, local_errors(tree, run));
    const std::vector<double> x = depth_deviations(tree.shape(), node_deviations(tree, run));
    const int L = tree.L();
    std::vector<std::uint64_t> depth_shots(static_cast<std::size_t>(L), 0);
    for (const auto& [p, np] : plan.nodes) depth_shots[p.size() - 1] += np.shots;
    ok += err <= eps;
    if (t == 0) {
      r.table.header = {"trial", "seed", "scheme", "exact", "estimate", "abs_error", "success", "good_tomography",
                        "recursion_ok", "max_abs_output"};
      for (int l = 1; l <= L; ++l) r.table.header.push_back("x_" + std::to_string(l));
      for (int l = 1; l <= L; ++l) r.table.header.push_back("shots_depth_" + std::to_string(l));
      r.table.header.push_back("shots_root");
      r.table.header.push_back("shots_total");
    }
    std::vector<std::string> row{num(t),
                                 num(s),
                                 to_string(plan.scheme),
                                 num(exact),
                                 num(run.estimate),
                                 num(err),
                                 num(err <= eps ? 1 : 0),
                                 num(good ? 1 : 0),
                                 num(error_recursion_holds(plan, x) ? 1 : 0),
                                 num(run.max_abs_output)};
    for (double v : x) row.push_back(num(v));
    for (std::uint64_t v : depth_shots) row.push_back(num(v));
    row.push_back(num(run.root_shots));
    row.push_back(num(run.total_shots));
    r.table.rows.push_back(std::move(row));
    r.diagnostics["trials"].push_back({{"trial", t}, {"seed", s}, {"nodes", node_diagnostics(tree, plan, run)}});
  }
  r.status = fraction(ok, trials) >= c["threshold"].get<double>() ? kExitOk : kExitThreshold;
  r.summary = "tree: " + std::to_string(ok) + "/" + std::to_string(trials) + " trials within eps";
  return r;
}

CommandResult run_scaling(const json& c) {
  const EnsembleKind kind = parse_ensemble(c["ensemble"].get<std::string>());
  const auto d = c["d"].get<Eigen::Index>();
  const int L = c["L"];
  const double eps = c["eps"], delta = c["delta"];
  CommandResult r;
  r.table.header = {"L", "R", "cuts", "learning_nodes", "learning_root", "learning_total", "pauli_qpd", "optimal_qpd"};
  for (int R = c["R_min"]; R <= c["R_max"].get<int>(); ++R) {
    const ShotPlan plan = allocate(TreeShape::complete(L, R, d), eps, delta, kind);
    int cuts = 0;
    for (int t = 1, p = R; t <= L; ++t, p *= R) cuts += p;
    const double dd = static_cast<double>(d);
    r.table.rows.push_back({num(L), num(R), num(cuts), num(plan.node_shots_total()), num(plan.root_shots),
                            num(plan.total_shots()), num(qpd_hoeffding_count(dd * dd, cuts, eps, delta)),
                            num(qpd_hoeffding_count(2 * dd - 1, cuts, eps, delta))});
  }
  r.summary = "scaling: " + std::to_string(r.table.rows.size()) + " rows";
  return r;
}

CommandResult run_separation_cmd(const json& c, int threads) {
  SeparationConfig cfg;
  cfg.n = c["n"];
  cfg.eps = c["eps"];
  cfg.delta = c["delta"];
  cfg.instances = c["instances"];
  cfg.ensemble = parse_ensemble(c["ensemble"].get<std::string>());
  cfg.threads = threads;
  const std::uint64_t seed = c["seed"];
  CommandResult r;
  r.table.header = {"R", "method", "shots", "total_shots", "plan_root_shots", "instances", "successes", "success_rate"};
  for (const json& rv : c["R"]) {
    const int R = rv;
    const std::uint64_t n0 = separation_plan(R, cfg).root_shots;
    std::vector<std::uint64_t> grid;
    for (const json& s : c["shots"]) grid.push_back(s.get<std::uint64_t>());
    if (grid.empty())
      for (std::uint64_t div : {16, 8, 4, 2, 1}) grid.push_back(std::max<std::uint64_t>(1, (n0 + div - 1) / div));
    const auto pts = run_separation(R, cfg, grid, derive_seed(seed, "separation", static_cast<std::uint64_t>(R)));
    for (const SeparationPoint& p : pts) {
      r.table.rows.push_back({num(R), to_string(p.method), num(p.shots), num(p.total_shots), num(n0),
                              num(p.instances), num(p.successes), num(p.success_rate())});
    }
  }
  r.summary = "separation: " + std::to_string(r.table.rows.size()) + " curve points";
  return r;
}

CommandResult run_plan(const json& c) {
  const EnsembleKind kind = parse_ensemble(c["ensemble"].get<std::string>());
  const TwoLayerProtocol protocol = parse_protocol(c["protocol"]);
  const TreeShape shape = c.contains("tree") ? tree_from_json(c["tree"]).shape()
                                             : TreeShape::complete(c["L"], c["R"], c["d"].get<Eigen::Index>());
  const ShotPlan plan = allocate(shape, c["eps"], c["delta"], kind, protocol);
  CommandResult r;
  r.table.header = {"node", "depth", "dim", "norm_bound", "accuracy", "budget", "shots"};
  for (const auto& [p, np] : plan.nodes) {
    r.table.rows.push_back({path_to_string(p), num(static_cast<int>(p.size())),
                            num(static_cast<std::uint64_t>(shape.in_dim(p))), num(np.input_norm), num(np.accuracy),
                            num(np.budget), num(np.shots)});
  }
  r.table.rows.push_back({"root", "0", num(static_cast<std::uint64_t>(shape.root_dim())), num(plan.root_range),
                          num(plan.root_accuracy), num(plan.root_budget), num(plan.root_shots)});
  r.table.rows.push_back({"slack", "", "", "", "", num(plan.slack_budget), "0"});
  r.table.rows.push_back({"total", "", "", "", "", num(plan.allocated_budget()), num(plan.total_shots())});
  r.summary = "plan (" + to_string(plan.scheme) + "): total shots " + std::to_string(plan.total_shots());
  return r;
}

}  // namespace

json normalize_config(const json& raw) {
  need(raw.is_object(), "config must be a JSON object");
  need(raw.contains("command") && raw["command"].is_string(), "config has no command");
  const std::string command = raw["command"];
  const auto& fields = schema(command);
  json c = json::object();
  c["command"] = command;
  if (raw.contains("seed")) {
    need(raw["seed"].is_number_unsigned() || (raw["seed"].is_number_integer() && raw["seed"].get<long long>() >= 0),
         "seed must be a non-negative integer");
    c["seed"] = raw["seed"].get<std::uint64_t>();
  } else {
    c["seed"] = std::uint64_t{0};
  }
  for (const auto& [key, val] : raw.items()) {
    if (key == "command" || key == "seed") continue;
    const bool known = std::any_of(fields.begin(), fields.end(), [&](const Field& f) { return key == f.name; });
    need(known, command + ": unknown parameter '" + key + "'");
  }
  for (const Field& f : fields) {
    if (raw.contains(f.name)) {
      need(kind_matches(raw[f.name], f.kind), command + ": parameter '" + f.name + "' has the wrong type");
      c[f.name] = raw[f.name];
    } else if (!f.fallback.is_null()) {
      c[f.name] = f.fallback;
    } else if (!f.optional) {
      throw UsageError(command + ": missing required parameter --" + std::string(f.name));
    }
  }

  // Range checks before anything runs.
  const double eps = c["eps"], delta = c["delta"];
  need(eps > 0.0 && eps <= 1.0, "eps must lie in (0, 1]");
  need(delta > 0.0 && delta <= 1.0, "delta must lie in (0, 1]");
  if (c.contains("ensemble")) {
    try {
      c["ensemble"] = to_string(parse_ensemble(c["ensemble"].get<std::string>()));
    } catch (const InvalidInput& e) {
      throw UsageError(e.what());
    }
  }
  if (c.contains("protocol")) parse_protocol(c["protocol"]);
  for (const char* k : {"trials", "instances"})
    if (c.contains(k)) need(c[k].get<long long>() >= 1 && c[k].get<long long>() <= 100000, std::string(k) + " must lie in [1, 100000]");
  if (c.contains("threshold")) need(c["threshold"] >= 0.0 && c["threshold"] <= 1.0, "threshold must lie in [0, 1]");
  if (c.contains("ancilla")) need(c["ancilla"] >= 0 && c["ancilla"] <= 8, "ancilla must lie in [0, 8]");
  if (c.contains("d")) need(power_of_two_dim(c["d"]), "d must be a power of two >= 2");
  if (c.contains("L") && c["L"].is_number()) need(c["L"] >= 1 && c["L"] <= 16, "L must lie in [1, 16]");
  if (c.contains("R") && c["R"].is_number()) need(c["R"] >= 1 && c["R"] <= 64, "R must lie in [1, 64]");
  if (c.contains("tree")) {
    TreeCircuit t;
    try {
      t = tree_from_json(c["tree"]);
    } catch (const InvalidInput& e) {
      throw UsageError(std::string("tree: ") + e.what());
    }
    c["L"] = t.L();
    c["R"] = t.R();
    c["d"] = t.d();
    if (command == "twolayer") need(t.L() == 1, "twolayer needs a tree with L = 1");
  }
  if (command == "tomography") {
    need(c["channel"] == "random" || c["channel"] == "identity", "channel must be 'random' or 'identity'");
    const std::string obs = c["observable"];
    if (obs != "random") {
      need(obs.find_first_not_of("IXYZ") == std::string::npos, "observable must be 'random' or a Pauli string");
      need((Eigen::Index{1} << obs.size()) == c["d"].get<Eigen::Index>(), "observable length does not match d");
    }
  }
  if (command == "scaling") {
    need(c["R_min"] >= 1 && c["R_min"] <= c["R_max"] && c["R_max"] <= 64, "need 1 <= R_min <= R_max <= 64");
  }
  if (command == "separation") {
    need(!c["R"].empty(), "separation needs at least one R");
    for (const json& r : c["R"]) need(r >= 1 && r <= 5, "separation R values must lie in [1, 5]");
    for (const json& s : c["shots"]) need(s >= 1, "shot counts must be positive");
    need(c["n"] >= 1 && c["n"] <= 3, "n must lie in [1, 3]");
  }
  return c;
}

CommandResult execute(const json& config, int threads) {
  const std::string command = config.at("command");
  if (command == "tomography") return run_tomography(config, threads);
  if (command == "twolayer") return run_twolayer(config, threads);
  if (command == "tree") return run_tree(config, threads);
  if (command == "scaling") return run_scaling(config);
  if (command == "separation") return run_separation_cmd(config, threads);
  if (command == "plan") return run_plan(config);
  throw UsageError("unknown command '" + command + "'");
}

namespace {

json load_json_file(const fs::path& p) {
  try {
    return json::parse(read_file(p));
  } catch (const json::parse_error& e) {
    throw UsageError(p.string() + ": " + e.what());
  }
}

struct Common {
  std::string out_dir = ".";
  std::string config_path;
  std::string tree_path;
  int threads = 1;
};

int run_experiment(const std::string& command, json flags, const Common& common, std::ostream& out) {
  json raw = json::object();
  if (!common.config_path.empty()) {
    raw = load_json_file(common.config_path);
    need(raw.is_object(), "--config must hold a JSON object");
    if (raw.contains("command")) need(raw["command"] == command, "--config is for command " + raw["command"].dump());
    if (raw.contains("tree") && raw["tree"].is_string()) {
      const fs::path base = fs::path(common.config_path).parent_path();
      raw["tree"] = load_json_file(base / raw["tree"].get<std::string>());
    }
  }
  for (const auto& [k, v] : flags.items()) raw[k] = v;
  if (!common.tree_path.empty()) raw["tree"] = load_json_file(common.tree_path);
  raw["command"] = command;
  const json config = normalize_config(raw);
  need(common.threads >= 1 && common.threads <= 256, "--threads must lie in [1, 256]");

  const auto start = std::chrono::steady_clock::now();
  const CommandResult res = execute(config, common.threads);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  const std::string hash = git_blob_hash(config.dump());
  const fs::path dir(common.out_dir);
  fs::create_directories(dir);
  const fs::path csv = dir / (command + "-" + hash.substr(0, 12) + ".csv");
  write_file(csv, render_csv(config, res.table, wall));
  out << "wrote " << csv.string() << '\n';
  if (!res.diagnostics.is_null()) {
    json diag = res.diagnostics;
    diag["config_hash"] = hash;
    const fs::path jpath = dir / (command + "-" + hash.substr(0, 12) + ".json");
    write_file(jpath, diag.dump(1) + "\n");
    out << "wrote " << jpath.string() << '\n';
  }
  out << res.summary << '\n';
  return res.status;
}

int run_verify(const std::string& file, bool rerun, int threads, std::ostream& out, std::ostream& err) {
  const CsvFile f = parse_csv(read_file(file));
  bool ok = true;
  const bool cfg_ok = git_blob_hash(f.config) == f.config_hash;
  const bool body_ok = git_blob_hash(f.body) == f.content_hash;
  out << "config_hash " << (cfg_ok ? "ok" : "MISMATCH") << '\n';
  out << "content_hash " << (body_ok ? "ok" : "MISMATCH") << '\n';
  ok = cfg_ok && body_ok;
  if (rerun) {
    json cfg;
    try {
      cfg = json::parse(f.config);
    } catch (const json::parse_error& e) {
      err << "config line is not JSON: " << e.what() << '\n';
      return kExitThreshold;
    }
    const json norm = normalize_config(cfg);
    const bool canonical = norm.dump() == f.config;
    const CommandResult res = execute(norm, threads);
    const bool same = render_body(res.table) == f.body;
    out << "config_canonical " << (canonical ? "ok" : "MISMATCH") << '\n';
    out << "rerun " << (same ? "identical" : "DIFFERENT") << '\n';
    ok = ok && canonical && same;
  }
  return ok ? kExitOk : kExitThreshold;
}

}  // namespace

int run_main(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"knitsim: circuit knitting with learned observables"};
  app.require_subcommand(1);
  app.fallthrough(false);

  json flags = json::object();
  Common common;
  std::string verify_file;
  bool verify_rerun = false;

  auto add_int = [&](CLI::App* sub, const std::string& names, const char* key, const std::string& help) {
    sub->add_option_function<long long>(names, [&flags, key](const long long& v) { flags[key] = v; }, help);
  };
  auto add_num = [&](CLI::App* sub, const std::string& names, const char* key, const std::string& help) {
    sub->add_option_function<double>(names, [&flags, key](const double& v) { flags[key] = v; }, help);
  };
  auto add_str = [&](CLI::App* sub, const std::string& names, const char* key, const std::string& help) {
    sub->add_option_function<std::string>(names, [&flags, key](const std::string& v) { flags[key] = v; }, help);
  };
  auto add_list = [&](CLI::App* sub, const std::string& names, const char* key, const std::string& help) {
    sub->add_option_function<std::vector<long long>>(
           names, [&flags, key](const std::vector<long long>& v) { flags[key] = v; }, help)
        ->delimiter(',');
  };
  auto add_common = [&](CLI::App* sub, bool trials) {
    sub->add_option_function<std::uint64_t>("--seed", [&flags](const std::uint64_t& v) { flags["seed"] = v; },
                                            "64-bit master seed (default 0)");
    sub->add_option("--out", common.out_dir, "output directory (default .)");
    sub->add_option("--config", common.config_path, "JSON config file; flags override its values");
    sub->add_option("--threads", common.threads, "worker threads for tomography (results do not depend on it)");
    if (trials) add_int(sub, "--trials", "trials", "number of trials");
    add_num(sub, "--eps", "eps", "target accuracy in (0, 1] (required)");
    add_num(sub, "--delta", "delta", "failure probability in (0, 1] (default 0.1)");
    add_str(sub, "--ensemble,--kind", "ensemble", "probe ensemble: two_design | stab | pauli");
  };

  CLI::App* tomo = app.add_subcommand("tomography", "learn O_Phi = Phi^dag(O) and report operator-norm errors");
  add_common(tomo, true);
  add_int(tomo, "--d", "d", "wire dimension (power of two)");
  add_str(tomo, "--channel", "channel", "random | identity");
  add_str(tomo, "--observable", "observable", "random | Pauli string such as ZX");
  add_int(tomo, "--ancilla", "ancilla", "ancilla qubits of random channels");
  add_num(tomo, "--threshold", "threshold", "required success fraction for exit 0");

  CLI::App* two = app.add_subcommand("twolayer", "two-layer tree with protocol a or b");
  add_common(two, true);
  add_int(two, "--R", "R", "number of leaves");
  add_int(two, "--d", "d", "wire dimension");
  add_str(two, "--protocol", "protocol", "a | b");
  add_int(two, "--ancilla", "ancilla", "ancilla qubits of random channels");
  add_num(two, "--threshold", "threshold", "required success fraction for exit 0");
  two->add_option("--tree", common.tree_path, "tree description (JSON); replaces the random trees");

  CLI::App* tree = app.add_subcommand("tree", "multi-layer tree or chain estimation");
  add_common(tree, true);
  add_int(tree, "--L", "L", "depth");
  add_int(tree, "--R", "R", "branching");
  add_int(tree, "--d", "d", "wire dimension");
  add_int(tree, "--ancilla", "ancilla", "ancilla qubits of random channels");
  add_num(tree, "--threshold", "threshold", "required success fraction for exit 0");
  tree->add_option("--tree", common.tree_path, "tree description (JSON); replaces the random trees");

  CLI::App* scaling = app.add_subcommand("scaling", "planned shot totals against quasiprobability counts");
  add_common(scaling, false);
  add_int(scaling, "--d", "d", "wire dimension");
  add_int(scaling, "--L", "L", "depth");
  add_int(scaling, "--R-min", "R_min", "smallest R");
  add_int(scaling, "--R-max", "R_max", "largest R");

  CLI::App* sep = app.add_subcommand("separation", "x-recovery success rates, learning against Pauli QPD");
  add_common(sep, false);
  add_list(sep, "--R", "R", "comma-separated R values");
  add_int(sep, "--n", "n", "qubits per wire");
  add_int(sep, "--instances", "instances", "instances per grid point");
  add_list(sep, "--shots", "shots", "comma-separated shot grid (default: fractions of the plan's N0)");

  CLI::App* plan = app.add_subcommand("plan", "print a shot allocation");
  add_common(plan, false);
  add_int(plan, "--L", "L", "depth");
  add_int(plan, "--R", "R", "branching");
  add_int(plan, "--d", "d", "wire dimension");
  add_str(plan, "--protocol", "protocol", "a | b (two-layer only)");
  plan->add_option("--tree", common.tree_path, "tree description (JSON)");

  CLI::App* verify = app.add_subcommand("verify", "re-check the hashes of a result file");
  verify->add_option("file", verify_file, "CSV written by another command")->required();
  verify->add_flag("--rerun", verify_rerun, "replay the run and compare rows byte for byte");
  verify->add_option("--threads", common.threads, "worker threads for --rerun");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << "run with --help for usage\n";
    return kExitUsage;
  }

  try {
    for (CLI::App* sub : app.get_subcommands()) {
      if (sub == verify) return run_verify(verify_file, verify_rerun, common.threads, out, err);
      return run_experiment(sub->get_name(), flags, common, out);
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const InvalidInput& e) {
    err << "invalid input: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitUsage;
}

}  // namespace knitsim::cli
