// postsel: selective inference for coefficients of a group selected by an aggregate test.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "postsel/postsel.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace postsel;

namespace {

enum Exit { kOk = 0, kBadInput = 1, kNotSelected = 2, kNumerical = 3 };

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t default_seed() {
  if (const char* env = std::getenv("POSTSEL_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw InvalidInput(std::string("POSTSEL_SEED is not an unsigned integer: ") + env);
    }
  }
  return 20240601;
}

json to_json(const Vector& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Vector vector_from_json(const json& j, const std::string& what) {
  if (!j.is_array()) throw InvalidInput(what + " must be an array of numbers");
  Vector v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw InvalidInput(what + " must be an array of numbers");
    v(static_cast<Index>(i)) = j[i].get<double>();
  }
  return v;
}

Matrix matrix_from_json(const json& j, const std::string& what) {
  if (!j.is_array() || j.empty()) throw InvalidInput(what + " must be a non-empty array of rows");
  Matrix m(static_cast<Index>(j.size()), static_cast<Index>(j[0].size()));
  for (std::size_t r = 0; r < j.size(); ++r) {
    Vector row = vector_from_json(j[r], what);
    if (row.size() != m.cols()) throw InvalidInput(what + " rows differ in length");
    m.row(static_cast<Index>(r)) = row.transpose();
  }
  return m;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InvalidInput(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Test specifications: "wald" or a JSON file.
// ---------------------------------------------------------------------------

struct TestRequest {
  json spec;           // normalized description recorded in the sidecar
  std::string source;  // "wald" or the file path
};

TestRequest read_test_request(const std::string& arg) {
  if (arg == "wald") return {json{{"type", "wald"}}, "wald"};
  json j = read_json_file(arg);
  if (!j.is_object() || !j.contains("type")) throw InvalidInput(arg + ": test spec needs a \"type\" field");
  if (j.contains("K_file")) {
    fs::path p = j["K_file"].get<std::string>();
    if (p.is_relative()) p = fs::path(arg).parent_path() / p;
    const Matrix k = read_matrix_csv(p.string());
    json rows = json::array();
    for (Index r = 0; r < k.rows(); ++r) rows.push_back(to_json(k.row(r).transpose()));
    j["K"] = rows;
    j.erase("K_file");
  }
  return {j, arg};
}

/// Builds the aggregate test. t1_flag is NaN when --t1 was not given.
AggregateTest build_test(const TestRequest& req, const SummaryStats& stats, double t1_flag) {
  const json& j = req.spec;
  const std::string type = j.at("type").get<std::string>();
  double t1 = t1_flag;
  if (std::isnan(t1) && j.contains("t1")) t1 = j["t1"].get<double>();
  if (std::isnan(t1)) t1 = 0.001;
  if (type == "wald") return make_wald_test(stats, t1);
  if (type == "quadratic") {
    if (!j.contains("K")) throw InvalidInput(req.source + ": quadratic test needs K or K_file");
    return make_quadratic_test(matrix_from_json(j["K"], "K"), stats, t1);
  }
  if (type == "linear") {
    if (!j.contains("a")) throw InvalidInput(req.source + ": linear test needs a");
    const Vector a = vector_from_json(j["a"], "a");
    if (j.contains("l") || j.contains("u")) {
      auto bound = [&](const char* key, double dflt) {
        if (!j.contains(key) || j[key].is_null()) return dflt;
        if (j[key].is_string()) return parse_double(j[key].get<std::string>(), key);
        return j[key].get<double>();
      };
      return make_linear_test(a, stats, LinearSpec::bounds(bound("l", -kInf), bound("u", kInf)));
    }
    const std::string kind = j.value("kind", "symmetric");
    if (kind == "symmetric") return make_linear_test(a, stats, LinearSpec::symmetric(t1));
    if (kind == "one_sided") return make_linear_test(a, stats, LinearSpec::one_sided(t1));
    throw InvalidInput(req.source + ": linear kind must be symmetric or one_sided");
  }
  throw InvalidInput(req.source + ": unknown test type '" + type + "' (expected wald, quadratic or linear)");
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

struct AnalyzeArgs {
  std::string stats_path, sigma_path, test = "wald", out, methods = "naive,poly,gn,hybrid,regime,mle", adjust = "bh";
  double t1 = kNaN, alpha = 0.05, t2 = kNaN;
  long mc_draws = 100000, rm_steps = 50000, sgd_steps = 50000;
  std::uint64_t seed = 0;
  bool monte_carlo = false, no_intervals = false;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

int cmd_analyze(const AnalyzeArgs& args) {
  const StatsFile sf = read_stats_csv(args.stats_path);
  const Matrix sigma = read_matrix_csv(args.sigma_path);
  const SummaryStats stats = SummaryStats::make(sf.beta_hat, sigma);
  const TestRequest req = read_test_request(args.test);
  const AggregateTest test = build_test(req, stats, args.t1);

  AnalysisOptions opt;
  opt.alpha = args.alpha;
  opt.t2 = args.t2;
  opt.methods.clear();
  for (const auto& m : split_list(args.methods)) opt.methods.push_back(parse_method(m));
  opt.adjustments.clear();
  for (const auto& a : split_list(args.adjust)) opt.adjustments.push_back(parse_adjustment(a));
  opt.intervals = !args.no_intervals;
  opt.gn.draws = args.mc_draws;
  opt.gn.rm_steps = args.rm_steps;
  opt.gn.seed = args.seed;
  opt.gn.analytic = !args.monte_carlo;
  opt.sgd.steps = args.sgd_steps;
  opt.sgd.seed = derive_seed(args.seed, {0x6d6c65});

  const InferenceReport rep = analyze(stats, test, opt);

  std::vector<std::string> header{"name", "j", "beta_hat", "se", "p_naive"};
  const bool poly = opt.wants(Method::Poly) || opt.wants(Method::Hybrid) || opt.wants(Method::Regime);
  const bool gn = opt.wants(Method::Gn) || opt.wants(Method::Hybrid) || opt.wants(Method::Regime);
  if (poly) header.push_back("p_poly");
  if (gn) {
    header.push_back("p_gn");
    header.push_back("p_gn_mc_se");
  }
  if (poly && gn) header.push_back("p_hybrid");
  std::vector<std::pair<std::string, std::string>> adj_cols;
  for (const auto& [col, by] : rep.adjusted)
    for (const auto& [name, _] : by) adj_cols.push_back({col, name});
  for (const auto& [col, name] : adj_cols) header.push_back(col + "_" + name);
  if (opt.wants(Method::Mle)) header.push_back("mle");
  std::vector<std::pair<std::string, Interval CoordinateInference::*>> cis;
  if (opt.intervals) {
    cis.push_back({"naive", &CoordinateInference::ci_naive});
    if (opt.wants(Method::Poly)) cis.push_back({"poly", &CoordinateInference::ci_poly});
    if (opt.wants(Method::Gn)) cis.push_back({"gn", &CoordinateInference::ci_gn});
    if (opt.wants(Method::Hybrid)) cis.push_back({"hybrid", &CoordinateInference::ci_hybrid});
    if (opt.wants(Method::Regime)) cis.push_back({"regime", &CoordinateInference::ci_regime});
  }
  for (const auto& [name, _] : cis) {
    header.push_back("ci_" + name + "_lo");
    header.push_back("ci_" + name + "_hi");
  }
  if (opt.wants(Method::Regime)) header.push_back("regime");
  header.insert(header.end(), {"gn_analytic", "gn_converged", "hybrid_crossed", "regime_crossed", "truncation_region"});

  std::ofstream out(args.out, std::ios::binary);
  if (!out) throw InvalidInput("cannot write '" + args.out + "'");
  CsvWriter w(out);
  w.row(header);
  for (const auto& c : rep.coords) {
    const std::size_t j = static_cast<std::size_t>(c.j);
    std::vector<std::string> row{sf.names[j], std::to_string(c.j + 1), format_double(c.beta_hat), format_double(c.se),
                                 format_double(c.p_naive)};
    if (poly) row.push_back(format_double(c.p_poly));
    if (gn) {
      row.push_back(format_double(c.p_gn));
      row.push_back(format_double(c.p_gn_se));
    }
    if (poly && gn) row.push_back(format_double(c.p_hybrid));
    for (const auto& [col, name] : adj_cols) row.push_back(format_double(rep.adjusted.at(col).at(name)[j]));
    if (opt.wants(Method::Mle)) row.push_back(format_double(c.mle));
    for (const auto& [name, field] : cis) {
      row.push_back(format_double((c.*field).lo));
      row.push_back(format_double((c.*field).hi));
    }
    if (opt.wants(Method::Regime)) row.push_back(rep.regime.regime == Regime::Unconditional ? "unconditional" : "conditional");
    row.push_back(c.gn_analytic ? "1" : "0");
    row.push_back(c.gn_converged ? "1" : "0");
    row.push_back(c.hybrid_crossed ? "1" : "0");
    row.push_back(c.regime_crossed ? "1" : "0");
    row.push_back(poly ? c.region.describe() : "");
    w.row(row);
  }

  json config{{"command", "analyze"},
              {"stats", args.stats_path},
              {"sigma", args.sigma_path},
              {"test", req.spec},
              {"t1", test.t1()},
              {"alpha", args.alpha},
              {"t2", std::isnan(rep.regime.t2) ? json(nullptr) : json(rep.regime.t2)},
              {"methods", split_list(args.methods)},
              {"adjust", split_list(args.adjust)},
              {"mc_draws", args.mc_draws},
              {"rm_steps", args.rm_steps},
              {"sgd_steps", args.sgd_steps},
              {"monte_carlo", args.monte_carlo},
              {"intervals", !args.no_intervals},
              {"seed", args.seed}};
  json side{{"version", kVersion}, {"config", config}, {"config_hash", hex(fnv1a(config.dump()))}};
  side["selection"] = {{"statistic", rep.selection.statistic},
                       {"threshold", test.is_quadratic() ? json(test.quadratic().threshold) : json(nullptr)},
                       {"selected", rep.selection.selected}};
  if (test.is_linear()) {
    side["selection"]["l"] = format_double(test.linear().l);
    side["selection"]["u"] = format_double(test.linear().u);
  }
  if (opt.wants(Method::Regime))
    side["regime"] = {{"regime", rep.regime.regime == Regime::Unconditional ? "unconditional" : "conditional"},
                      {"alpha_star", rep.regime.alpha_star},
                      {"t2", rep.regime.t2}};
  if (opt.wants(Method::Mle))
    side["mle"] = {{"method", rep.mle.method},
                   {"shrinkage", std::isnan(rep.mle.shrinkage) ? json(nullptr) : json(rep.mle.shrinkage)},
                   {"converged", rep.mle.converged},
                   {"penalty", rep.mle.penalty}};
  std::ofstream js(args.out + ".json", std::ios::binary);
  js << side.dump(2) << '\n';
  if (!out || !js) throw InvalidInput("failed writing results to '" + args.out + "'");
  return kOk;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

json config_to_json(const StudyConfig& c) {
  json methods = json::array(), noise = json::array();
  for (Method m : c.methods) methods.push_back(to_string(m));
  for (Noise n : c.noise) noise.push_back(to_string(n));
  return json{{"name", c.name},
              {"study", to_string(c.study)},
              {"n", c.n},
              {"m", c.m},
              {"s", c.s},
              {"snr", c.snr},
              {"noise", noise},
              {"test", to_string(c.test)},
              {"snr_scale", to_string(c.snr_scale)},
              {"t1", c.t1},
              {"alpha", c.alpha},
              {"fdr_levels", c.fdr_levels},
              {"methods", methods},
              {"replicates", c.replicates},
              {"max_dataset_factor", c.max_dataset_factor},
              {"max_block", c.max_block},
              {"selected_per_design", c.selected_per_design},
              {"sgd_check", c.sgd_check},
              {"sgd_steps", c.sgd_steps},
              {"independent_latent", c.independent_latent},
              {"seed", c.seed}};
}

StudyConfig config_from_json(const json& j) {
  if (!j.is_object()) throw InvalidInput("scenario must be a JSON object");
  StudyConfig c = j.contains("preset") ? preset(j["preset"].get<std::string>()) : StudyConfig{};
  const std::vector<std::string> known{"preset", "name", "study", "n", "m", "s", "snr", "noise", "test", "snr_scale", "t1", "alpha",
                                       "fdr_levels", "methods", "replicates", "max_dataset_factor", "max_block",
                                       "selected_per_design", "sgd_check", "sgd_steps", "independent_latent", "seed", "threads"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw InvalidInput("scenario: unknown key '" + it.key() + "'");
  try {
    if (j.contains("name")) c.name = j["name"];
    if (j.contains("study")) c.study = parse_study(j["study"]);
    if (j.contains("n")) c.n = j["n"].get<std::vector<long>>();
    if (j.contains("m")) c.m = j["m"].get<std::vector<long>>();
    if (j.contains("s")) c.s = j["s"].get<std::vector<long>>();
    if (j.contains("snr")) c.snr = j["snr"].get<std::vector<double>>();
    if (j.contains("noise")) {
      c.noise.clear();
      for (const auto& n : j["noise"]) c.noise.push_back(parse_noise(n));
    }
    if (j.contains("test")) c.test = parse_test_kind(j["test"]);
    if (j.contains("snr_scale")) c.snr_scale = parse_snr_scale(j["snr_scale"]);
    if (j.contains("t1")) c.t1 = j["t1"];
    if (j.contains("alpha")) c.alpha = j["alpha"];
    if (j.contains("fdr_levels")) c.fdr_levels = j["fdr_levels"].get<std::vector<double>>();
    if (j.contains("methods")) {
      c.methods.clear();
      for (const auto& m : j["methods"]) c.methods.push_back(parse_method(m));
    }
    if (j.contains("replicates")) c.replicates = j["replicates"];
    if (j.contains("max_dataset_factor")) c.max_dataset_factor = j["max_dataset_factor"];
    if (j.contains("max_block")) c.max_block = j["max_block"];
    if (j.contains("selected_per_design")) c.selected_per_design = j["selected_per_design"];
    if (j.contains("sgd_check")) c.sgd_check = j["sgd_check"];
    if (j.contains("sgd_steps")) c.sgd_steps = j["sgd_steps"];
    if (j.contains("independent_latent")) c.independent_latent = j["independent_latent"];
    if (j.contains("seed")) c.seed = j["seed"];
    if (j.contains("threads")) c.threads = j["threads"];
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("scenario: ") + e.what());
  }
  require(!c.n.empty() && !c.m.empty() && !c.s.empty() && !c.snr.empty() && !c.noise.empty(), "scenario: empty grid");
  require(c.t1 > 0.0 && c.t1 < 1.0, "scenario: t1 must lie in (0, 1)");
  require(c.alpha > 0.0 && c.alpha < 1.0, "scenario: alpha must lie in (0, 1)");
  require(c.max_block >= 1 && c.selected_per_design > 0.0, "scenario: bad design block settings");
  for (double s : c.snr) require(s >= 0.0, "scenario: snr must be nonnegative");
  return c;
}

struct SimulateArgs {
  std::string preset_name, scenario, out = "study";
  int threads = 0;
  long replicates = 0;
  std::uint64_t seed = 0;
  bool seed_given = false, quiet = false;
};

int cmd_simulate(const SimulateArgs& args) {
  if (args.preset_name.empty() == args.scenario.empty()) throw InvalidInput("simulate: give exactly one of --preset or --scenario");
  StudyConfig cfg = args.scenario.empty() ? preset(args.preset_name) : config_from_json(read_json_file(args.scenario));
  if (args.replicates > 0) cfg.replicates = args.replicates;
  if (args.seed_given) cfg.seed = args.seed;
  cfg.threads = args.threads > 0 ? args.threads : std::max(1u, std::thread::hardware_concurrency());
  fs::create_directories(args.out);

  auto last = std::chrono::steady_clock::now() - std::chrono::hours(1);
  ProgressFn progress;
  if (!args.quiet)
    progress = [&](const std::string& msg) {
      const auto now = std::chrono::steady_clock::now();
      if (now - last < std::chrono::seconds(10) && msg.find(':') != std::string::npos) return;
      last = now;
      std::cerr << msg << '\n';
    };
  const StudyResult res = run_study(cfg, progress);

  const fs::path csv = fs::path(args.out) / "results.csv";
  std::ofstream out(csv, std::ios::binary);
  CsvWriter w(out);
  w.row({"study", "test", "n", "m", "s", "snr", "noise", "method", "metric", "level", "value", "se", "n_selected", "n_datasets",
         "insufficient"});
  for (const auto& r : res.records)
    w.row({r.study, r.test, std::to_string(r.cell.n), std::to_string(r.cell.m), std::to_string(r.cell.s), format_double(r.cell.snr),
           to_string(r.cell.noise), r.method, r.metric, std::isnan(r.level) ? "" : format_double(r.level), format_double(r.value),
           format_double(r.se), std::to_string(r.n_selected), std::to_string(r.n_datasets), r.insufficient ? "1" : "0"});

  const json config = config_to_json(cfg);
  json cells = json::array();
  for (const Cell& c : cells_of(cfg))
    cells.push_back({{"n", c.n}, {"m", c.m}, {"s", c.s}, {"snr", c.snr}, {"noise", to_string(c.noise)}, {"seed", cell_seed(cfg, c)}});
  json manifest{{"version", kVersion},    {"config", config},         {"config_hash", hex(fnv1a(config.dump()))},
                {"seed", cfg.seed},        {"cells", cells},           {"threads", cfg.threads},
                {"wall_clock_seconds", res.seconds}, {"results", csv.filename().string()}};
  std::ofstream mf(fs::path(args.out) / "manifest.json", std::ios::binary);
  mf << manifest.dump(2) << '\n';
  if (!out || !mf) throw InvalidInput("failed writing results to '" + args.out + "'");
  if (!args.quiet) std::cerr << "wrote " << csv.string() << " (" << res.records.size() << " rows, " << res.seconds << " s)\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// generate: one simulated dataset as summary-statistic files
// ---------------------------------------------------------------------------

struct GenerateArgs {
  long n = 2000, m = 5, s = 1;
  double snr = 0.0;
  std::string noise = "normal", snr_scale = "per_observation", prefix = "dataset";
  std::uint64_t seed = 0;
};

int cmd_generate(const GenerateArgs& args) {
  const Matrix x = gen_observed_design(args.n, args.m, derive_seed(args.seed, {1}));
  const double target = parse_snr_scale(args.snr_scale) == SnrScale::PerObservation ? args.snr * std::sqrt(double(args.n)) : args.snr;
  const Vector beta = gen_coefficients(args.m, args.s, target, x, derive_seed(args.seed, {2}));
  const SimulatedData d = gen_response_and_stats(x, beta, parse_noise(args.noise), derive_seed(args.seed, {3}));
  {
    std::ofstream out(args.prefix + "_stats.csv", std::ios::binary);
    CsvWriter w(out);
    w.row({"name", "beta", "true_beta"});
    for (Index j = 0; j < args.m; ++j)
      w.row({"b" + std::to_string(j + 1), format_double(d.stats.beta_hat(j)), format_double(beta(j))});
  }
  {
    std::ofstream out(args.prefix + "_sigma.csv", std::ios::binary);
    CsvWriter w(out);
    for (Index r = 0; r < args.m; ++r) {
      std::vector<std::string> row;
      for (Index c = 0; c < args.m; ++c) row.push_back(format_double(d.stats.Sigma(r, c)));
      w.row(row);
    }
  }
  const double wald = d.stats.beta_hat.dot(Eigen::LDLT<Matrix>(d.stats.Sigma).solve(d.stats.beta_hat));
  std::cout << "wald_statistic " << format_double(wald) << (d.ridged ? " (design ridged)" : "") << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------
// quantile
// ---------------------------------------------------------------------------

struct QuantileArgs {
  std::string test = "wald", sigma;
  long m = 0;
  double t1 = 0.001;
};

int cmd_quantile(const QuantileArgs& args) {
  require(args.t1 > 0.0 && args.t1 <= 1.0, "t1 must lie in (0, 1]");
  if (args.test == "wald" && args.sigma.empty()) {
    require(args.m >= 1, "quantile: give --m (or --sigma) for the Wald test");
    std::cout << format_double(chisq_quantile(args.t1, double(args.m))) << '\n';
    return kOk;
  }
  require(!args.sigma.empty(), "quantile: --sigma is required for this test");
  const Matrix sigma = read_matrix_csv(args.sigma);
  const SummaryStats stats = SummaryStats::make(Vector::Zero(sigma.rows()), sigma);
  const TestRequest req = read_test_request(args.test);
  const AggregateTest test = build_test(req, stats, args.t1);
  if (test.is_quadratic()) std::cout << format_double(test.quadratic().threshold) << '\n';
  else std::cout << format_double(test.linear().l) << ' ' << format_double(test.linear().u) << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Selective inference after an aggregate test"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  AnalyzeArgs an;
  an.seed = 0;
  auto* analyze_cmd = app.add_subcommand("analyze", "Inference for each coefficient of a selected group");
  analyze_cmd->add_option("--stats", an.stats_path, "CSV with a beta (or beta_hat) column; optional name column")->required()->check(CLI::ExistingFile);
  analyze_cmd->add_option("--sigma", an.sigma_path, "CSV covariance matrix of the estimates")->required()->check(CLI::ExistingFile);
  analyze_cmd->add_option("--test", an.test, "'wald' or a JSON test specification")->capture_default_str();
  analyze_cmd->add_option("--t1", an.t1, "Selection level of the aggregate test (default 0.001)");
  analyze_cmd->add_option("--alpha", an.alpha, "Confidence level complement")->capture_default_str();
  analyze_cmd->add_option("--t2", an.t2, "Switching level for regime intervals (default alpha^2 t1)");
  analyze_cmd->add_option("--methods", an.methods, "Comma-separated: naive,poly,gn,hybrid,regime,mle")->capture_default_str();
  analyze_cmd->add_option("--adjust", an.adjust, "Comma-separated multiplicity adjustments: bh,by,holm,bonferroni")->capture_default_str();
  analyze_cmd->add_option("--mc-draws", an.mc_draws, "Monte-Carlo draws for global-null p-values")->capture_default_str();
  analyze_cmd->add_option("--rm-steps", an.rm_steps, "Robbins-Monro steps per confidence bound")->capture_default_str();
  analyze_cmd->add_option("--sgd-steps", an.sgd_steps, "Stochastic-gradient steps for the general MLE")->capture_default_str();
  auto* an_seed = analyze_cmd->add_option("--seed", an.seed, "Random seed (default $POSTSEL_SEED or 20240601)");
  analyze_cmd->add_flag("--monte-carlo", an.monte_carlo, "Sample global-null quantities even when a closed form exists");
  analyze_cmd->add_flag("--no-intervals", an.no_intervals, "Skip confidence intervals");
  analyze_cmd->add_option("--out", an.out, "Output CSV (a .json sidecar is written next to it)")->required();

  SimulateArgs sim;
  auto* simulate_cmd = app.add_subcommand("simulate", "Run a simulation study");
  simulate_cmd->add_option("--preset", sim.preset_name, "Preset name (fig2-desk, paper-scale, fig3-desk, fig4-desk, fig5-desk, fig8-desk, smoke)");
  simulate_cmd->add_option("--scenario", sim.scenario, "JSON scenario file (may name a preset to start from)")->check(CLI::ExistingFile);
  simulate_cmd->add_option("--out", sim.out, "Output directory")->capture_default_str();
  simulate_cmd->add_option("--threads", sim.threads, "Worker threads (default: all cores)");
  simulate_cmd->add_option("--replicates", sim.replicates, "Selected replicates per cell (overrides the config)");
  auto* sim_seed = simulate_cmd->add_option("--seed", sim.seed, "Base seed (overrides the config)");
  simulate_cmd->add_flag("--quiet", sim.quiet, "No progress output");

  GenerateArgs gen;
  auto* generate_cmd = app.add_subcommand("generate", "Write summary statistics of one simulated dataset");
  generate_cmd->add_option("--n", gen.n, "Observations")->capture_default_str();
  generate_cmd->add_option("--m", gen.m, "Coefficients")->capture_default_str();
  generate_cmd->add_option("--s", gen.s, "Nonzero coefficients")->capture_default_str();
  generate_cmd->add_option("--snr", gen.snr, "Signal-to-noise ratio")->capture_default_str();
  generate_cmd->add_option("--snr-scale", gen.snr_scale, "per_observation or total")->capture_default_str();
  generate_cmd->add_option("--noise", gen.noise, "normal, laplace or uniform")->capture_default_str();
  auto* gen_seed = generate_cmd->add_option("--seed", gen.seed, "Random seed");
  generate_cmd->add_option("--prefix", gen.prefix, "Writes PREFIX_stats.csv and PREFIX_sigma.csv")->capture_default_str();

  QuantileArgs qa;
  auto* quantile_cmd = app.add_subcommand("quantile", "Print the selection threshold of an aggregate test");
  quantile_cmd->add_option("--test", qa.test, "'wald' or a JSON test specification")->capture_default_str();
  quantile_cmd->add_option("--m", qa.m, "Dimension (Wald test without --sigma)");
  quantile_cmd->add_option("--sigma", qa.sigma, "CSV covariance matrix")->check(CLI::ExistingFile);
  quantile_cmd->add_option("--t1", qa.t1, "Selection level")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kBadInput;
  }

  try {
    if (*analyze_cmd) {
      if (!*an_seed) an.seed = default_seed();
      return cmd_analyze(an);
    }
    if (*simulate_cmd) {
      sim.seed_given = static_cast<bool>(*sim_seed) || std::getenv("POSTSEL_SEED");
      if (!*sim_seed && sim.seed_given) sim.seed = default_seed();
      return cmd_simulate(sim);
    }
    if (*generate_cmd) {
      if (!*gen_seed) gen.seed = default_seed();
      return cmd_generate(gen);
    }
    if (*quantile_cmd) return cmd_quantile(qa);
  } catch (const NotSelected& e) {
    std::cerr << "not selected: " << e.what() << '\n';
    return kNotSelected;
  } catch (const NumericalFailure& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const InvalidInput& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kBadInput;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kBadInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kBadInput;
  }
  return kOk;
}
