#include "specshare/io.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <ostream>

#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "specshare/error.hpp"

namespace specshare {

namespace {

std::vector<double> scalar_or_list(const json& doc, const char* key, std::size_t n) {
  const auto& v = doc.at(key);
  if (v.is_number()) return std::vector<double>(n, v.get<double>());
  auto out = v.get<std::vector<double>>();
  if (out.size() != n)
    throw ConfigError(fmt::format("'{}' has {} entries, expected {}", key, out.size(), n));
  return out;
}

// JSON has no infinities; they travel as null.
json num(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

json nums(std::span<const double> xs) {
  json a = json::array();
  for (double x : xs) a.push_back(num(x));
  return a;
}

json matrix_json(const SquareMatrix& m) {
  json rows = json::array();
  for (std::size_t i = 0; i < m.size(); ++i) rows.push_back(nums(m.row(i)));
  return rows;
}

}  // namespace

CriterionKind parse_criterion_kind(const std::string& s) {
  if (s == "weighted_sum" || s == "sum") return CriterionKind::weighted_sum;
  if (s == "proportional_fairness" || s == "pf") return CriterionKind::proportional_fairness;
  throw ConfigError("unknown criterion '" + s + "'");
}

DesignMode parse_design_mode(const std::string& s) {
  if (s == "obedient") return DesignMode::obedient;
  if (s == "deviation_proof" || s == "deviation-proof") return DesignMode::deviation_proof;
  throw ConfigError("unknown mode '" + s + "'");
}

std::string to_string(DesignMode m) {
  return m == DesignMode::obedient ? "obedient" : "deviation_proof";
}

std::string to_string(CriterionKind k) {
  return k == CriterionKind::weighted_sum ? "weighted_sum" : "proportional_fairness";
}

ModelConfig parse_model(const json& doc) try {
  SquareMatrix gains;
  if (doc.contains("gains")) {
    const auto& g = doc.at("gains");
    if (!g.is_array() || g.empty()) throw ConfigError("'gains' must be a non-empty array");
    if (g.front().is_array()) {
      gains = SquareMatrix::from_rows(g.get<std::vector<std::vector<double>>>());
    } else {
      auto flat = g.get<std::vector<double>>();
      auto n = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(flat.size()))));
      if (n * n != flat.size()) throw ConfigError("flat 'gains' is not square");
      gains = SquareMatrix(n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) gains(i, j) = flat[i * n + j];
    }
  } else if (doc.contains("alpha")) {
    const auto n = doc.at("users").get<std::size_t>();
    gains = SquareMatrix(n, doc.at("alpha").get<double>());
    for (std::size_t i = 0; i < n; ++i) gains(i, i) = 1.0;
  } else {
    throw ConfigError("model needs 'gains' or 'alpha'");
  }
  const std::size_t n = gains.size();

  NetworkParams p;
  p.gains = gains;
  p.num_primary = doc.value("num_primary", n);
  if (p.num_primary > n) throw ConfigError("'num_primary' exceeds the number of users");
  p.num_secondary = n - p.num_primary;
  p.noise = scalar_or_list(doc, "noise", n);
  p.min_rates = scalar_or_list(doc, "min_rates", n);
  p.discount = doc.at("discount").get<double>();
  double pmax = 1e12;
  std::size_t points = 512;
  if (doc.contains("power_grid")) {
    pmax = doc["power_grid"].value("max", pmax);
    points = doc["power_grid"].value("points", points);
  }
  p.power_sets.assign(n, PowerSet::uniform_grid(pmax, points));

  ModelConfig cfg;
  cfg.net = NetworkInstance(std::move(p));

  const json s = doc.value("sensing", json::object());
  const std::string dist = s.value("dist", "gaussian");
  const double param = s.value("param", 0.1);
  const double theta = s.value("theta", 1.0);
  ErrorDistribution err = dist == "gaussian" ? ErrorDistribution::gaussian(param)
                          : dist == "uniform"
                              ? ErrorDistribution::uniform(param)
                              : throw ConfigError("unknown sensing distribution '" + dist + "'");
  cfg.sensing = SensingModel::uniform(cfg.net, err, theta);

  if (doc.contains("criterion")) {
    const auto& c = doc["criterion"];
    cfg.criterion.kind = parse_criterion_kind(c.value("kind", "weighted_sum"));
    if (c.contains("weights")) cfg.criterion.weights = c["weights"].get<std::vector<double>>();
  }
  cfg.mode = parse_design_mode(doc.value("mode", "obedient"));
  return cfg;
} catch (const json::exception& e) {
  throw ConfigError(std::string("bad model document: ") + e.what());
} catch (const std::invalid_argument& e) {
  throw ConfigError(std::string("bad model document: ") + e.what());
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  try {
    return json::parse(in, nullptr, true, true);  // comments allowed
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

ModelConfig load_model(const std::string& path) { return parse_model(read_json_file(path)); }

json model_to_json(const ModelConfig& cfg) {
  const auto& net = cfg.net;
  const auto& u0 = cfg.sensing.user(0);
  json doc;
  doc["gains"] = matrix_json(net.gains());
  doc["num_primary"] = net.num_primary();
  doc["noise"] = nums(net.noise());
  doc["min_rates"] = nums(net.min_rates());
  doc["discount"] = net.discount();
  const auto& ps = net.power_set(0);
  doc["power_grid"] = {{"max", ps.max()},
                       {"points", ps.grid_step() > 0.0
                                      ? static_cast<std::size_t>(std::llround(ps.max() / ps.grid_step())) + 1
                                      : ps.size()}};
  doc["sensing"] = {{"dist", u0.error.kind() == ErrorDistribution::Kind::gaussian ? "gaussian" : "uniform"},
                    {"param", u0.error.param()},
                    {"theta", u0.threshold}};
  doc["criterion"] = {{"kind", to_string(cfg.criterion.kind)}};
  if (!cfg.criterion.weights.empty()) doc["criterion"]["weights"] = cfg.criterion.weights;
  doc["mode"] = to_string(cfg.mode);
  return doc;
}

json its_report(const Design& d) {
  const auto& s = d.its;
  const auto& k = d.constants;
  return {
      {"r_star", nums(s.r_star)},
      {"p_star", nums(s.p_star)},
      {"targets", nums(s.targets)},
      {"capped", s.capped},
      {"kkt_mu", nums(s.kkt_mu)},
      {"lambda", s.lambda},
      {"iterations", s.iterations},
      {"doubling_steps", s.doubling_steps},
      {"bisection_steps", s.bisection_steps},
      {"residual_before_normalization", s.residual_before_normalization},
      {"residual", s.residual},
      {"messages_broadcast", s.messages_broadcast},
      {"delta_min", num(k.delta_min)},
      {"mu_lower", nums(k.mu_lower)},
      {"rate_cap", nums(k.rate_cap)},
      {"b_matrix", matrix_json(k.b)},
      {"obedient", k.obedient},
  };
}

json stationary_report(const StationarySolution& s) {
  json j{{"feasible", s.feasible},
         {"spectral_radius", s.spectral_radius},
         {"iterations", s.iterations}};
  if (s.feasible) j["power"] = nums(s.power);
  if (!s.diagnostic.empty()) j["diagnostic"] = s.diagnostic;
  return j;
}

json metrics_json(const DiscountedMetrics& m) {
  return {{"throughput", nums(m.throughput)},
          {"power", nums(m.power)},
          {"tail_residual", m.tail_residual}};
}

json oracle_report(const OracleResult& r) {
  return {{"prefix", r.prefix},
          {"energy", r.energy},
          {"lower_bound", r.lower_bound},
          {"tail_realizable", r.tail_realizable},
          {"optimal_count", r.optimal_count},
          {"explored", r.explored}};
}

json bound_report(const BoundReport& b) {
  json j{{"checks", b.checks}, {"violations", b.violations}, {"worst_ratio", b.worst_ratio}};
  if (b.first_slot != kNobody) j["first_violation"] = {{"t", b.first_slot}, {"user", b.first_user}};
  return j;
}

json epoch_log(const DynamicSession& s) {
  json a = json::array();
  for (const auto& e : s.epochs())
    a.push_back({{"t_k", e.start},
                 {"event", e.events},
                 {"users", e.users},
                 {"r_k", nums(e.rates)},
                 {"gamma", nums(e.targets)},
                 {"delta_min", num(e.delta_min)}});
  return a;
}

json epoch_bound_report(const EpochBoundReport& r) {
  json entries = json::array();
  for (const auto& e : r.entries)
    entries.push_back({{"epoch", e.epoch},
                       {"user", e.user},
                       {"holds", e.holds},
                       {"normalized_holds", e.normalized_holds},
                       {"worst_ratio", e.worst_ratio}});
  return {{"violations", r.violations},
          {"normalized_violations", r.normalized_violations},
          {"max_telescoping_error", r.max_telescoping_error},
          {"entries", entries}};
}

void write_trace_jsonl(std::ostream& os, const PolicyTrace& trace) {
  for (std::size_t t = 0; t < trace.horizon(); ++t)
    os << json{{"t", t}, {"p", nums(trace.powers[t])}, {"y", trace.signals[t]},
               {"r", nums(trace.rates[t])}}.dump()
       << '\n';
}

void write_decisions_jsonl(std::ostream& os, const std::vector<ScheduleDecision>& log) {
  for (const auto& d : log) {
    json rec{{"t", d.t}, {"d", nums(d.distances)}, {"r_prime", nums(d.r_prime)}, {"y", d.y}};
    rec["i_star"] = d.i_star == kNobody ? json(nullptr) : json(d.i_star);
    os << rec.dump() << '\n';
  }
}

void init_logging() {
  static bool done = false;
  if (done) return;
  done = true;
  auto logger = spdlog::stderr_color_mt("specshare");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  auto level = spdlog::level::warn;
  if (const char* env = std::getenv("SPECSHARE_LOG")) {
    const std::string v = env;
    if (v == "error") level = spdlog::level::err;
    else if (v == "info") level = spdlog::level::info;
    else if (v == "debug") level = spdlog::level::debug;
    else if (v == "warn") level = spdlog::level::warn;
  }
  spdlog::set_level(level);
}

}  // namespace specshare
