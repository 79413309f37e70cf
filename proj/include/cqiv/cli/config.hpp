#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cqiv/cli/table.hpp"
#include "cqiv/cqiv.hpp"
#include "cqiv/inference.hpp"
#include "cqiv/sim.hpp"

namespace cqiv::cli {

using json = nlohmann::ordered_json;

/// Every option of the command-line tool. Field names match the flag names
/// with '-' written as '_'.
struct RunConfig {
  std::string command;

  // Data source and column roles.
  std::string data;  ///< CSV path; a design sample is generated when empty
  std::string y = "y";
  std::string d = "d";
  std::vector<std::string> w;
  std::vector<std::string> z;
  std::string c;                 ///< per-row censoring column
  std::optional<double> c_value; ///< constant censoring point (0 when no column is given)

  // Estimator.
  std::vector<double> quantiles;
  std::string control = "ols";
  std::string transform = "normal";
  std::string spec = "standard";
  bool no_correction = false;
  double q0 = 10.0;
  double q1 = 3.0;
  std::string link = "probit";
  int max_extra = 5;
  bool retain_last = false;
  long qr_grid = 99;
  long dr_thresholds = 200;
  bool first_stage_squares = false;

  // Bootstrap.
  long B = 200;
  std::string scheme = "exponential";
  std::string refit = "refit";
  double level = 0.95;
  bool dump_draws = false;

  std::uint64_t seed = 1;

  // Simulation design.
  std::string variant = "homoskedastic";
  long n = 1000;
  double rho0 = 0.9;
  double censor_quantile = 0.38;
  long reps = 100;
  std::vector<std::string> estimators;

  // Prediction.
  std::string fit;
  std::vector<double> d_grid;
  std::vector<double> d_range;  ///< lo, hi, count
  std::vector<double> w_values;
  std::vector<double> v_values;

  std::string out = "cqiv_out";
  int threads = 0;
};

inline std::vector<double> default_quantiles(const std::string& command) {
  if (command == "simulate") {
    std::vector<double> q;
    for (int k = 1; k <= 19; ++k) q.push_back(static_cast<double>(k) / 20.0);
    return q;
  }
  return {0.25, 0.5, 0.75};
}

/// Reads a flat JSON object of option values. Keys are flag names without the
/// leading dashes; '_' and '-' are interchangeable.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    json j = json::object();
    for (const CLI::Option* opt : app->get_options()) {
      if (!opt->get_configurable() || opt->get_lnames().empty()) continue;
      if (opt->count() == 0 && !default_also) continue;
      const auto values = opt->count() > 0 ? opt->results() : std::vector<std::string>{opt->get_default_str()};
      if (values.size() == 1) {
        j[opt->get_lnames().front()] = values.front();
      } else {
        j[opt->get_lnames().front()] = values;
      }
    }
    return j.dump(2);
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw CLI::ConversionError(std::string("configuration file is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("configuration file must hold a JSON object");
    std::vector<CLI::ConfigItem> items;
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (it.value().is_null()) continue;
      CLI::ConfigItem item;
      item.name = it.key();
      std::replace(item.name.begin(), item.name.end(), '_', '-');
      if (it.value().is_array()) {
        for (const auto& v : it.value()) item.inputs.push_back(scalar(v, it.key()));
      } else {
        item.inputs.push_back(scalar(it.value(), it.key()));
      }
      items.push_back(std::move(item));
    }
    return items;
  }

 private:
  static std::string scalar(const json& v, const std::string& key) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number_integer() || v.is_number_unsigned()) return v.dump();
    if (v.is_number_float()) return format_number(v.get<double>());
    throw CLI::ConversionError("configuration key '" + key + "' must be a string, number, boolean or list");
  }
};

inline void validate(const RunConfig& rc) {
  for (double u : rc.quantiles) {
    if (!(u > 0.0 && u < 1.0)) {
      throw ConfigError("quantile " + format_number(u) + " is outside (0, 1); quantiles must lie strictly between 0 and 1");
    }
  }
  std::vector<double> sorted = rc.quantiles;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw ConfigError("quantile list contains a duplicate value");
  }

  // Column roles must be disjoint.
  std::vector<std::pair<std::string, std::string>> roles = {{rc.y, "y"}, {rc.d, "d"}};
  for (const auto& n : rc.w) roles.emplace_back(n, "w");
  for (const auto& n : rc.z) roles.emplace_back(n, "z");
  if (!rc.c.empty()) roles.emplace_back(rc.c, "c");
  for (std::size_t a = 0; a < roles.size(); ++a) {
    if (roles[a].first.empty()) throw ConfigError("empty column name for role " + roles[a].second);
    for (std::size_t b = a + 1; b < roles.size(); ++b) {
      if (roles[a].first == roles[b].first) {
        throw ConfigError("column '" + roles[a].first + "' is assigned to both --" + roles[a].second + " and --" +
                          roles[b].second + "; each column may play one role");
      }
    }
  }
  if (!rc.c.empty() && rc.c_value) throw ConfigError("give either --c (a column) or --c-value (a constant), not both");
  if (rc.control != "none" && rc.z.empty() && !rc.data.empty()) {
    throw ConfigError("a control method needs at least one instrument column (--z), or use --control none");
  }
  if (rc.B < 0) throw ConfigError("--B must be nonnegative");
  if (!(rc.level > 0.0 && rc.level < 1.0)) throw ConfigError("--level must lie in (0, 1)");
  if (!(rc.q1 >= 0.0 && rc.q1 < rc.q0 && rc.q0 < 100.0)) {
    throw ConfigError("--q0 and --q1 must satisfy 0 <= q1 < q0 < 100");
  }
  if (rc.max_extra < 0) throw ConfigError("--max-extra must be nonnegative");
  if (rc.qr_grid < 1) throw ConfigError("--qr-grid must be positive");
  if (rc.dr_thresholds < 0) throw ConfigError("--dr-thresholds must be nonnegative");
  if (rc.n < 2) throw ConfigError("--n must be at least 2");
  if (rc.reps < 0) throw ConfigError("--reps must be nonnegative");
  if (!(rc.rho0 > -1.0 && rc.rho0 < 1.0)) throw ConfigError("--rho0 must lie in (-1, 1)");
  if (!(rc.censor_quantile >= 0.0 && rc.censor_quantile < 1.0)) {
    throw ConfigError("--censor-quantile must lie in [0, 1)");
  }
  if (rc.threads < 0) throw ConfigError("--threads must be nonnegative");
  for (const auto& e : rc.estimators) {
    try {
      (void)sim::estimator_from_string(e);
    } catch (const DomainError& err) {
      throw ConfigError(err.what());
    }
  }
  if (!rc.d_range.empty()) {
    if (rc.d_range.size() != 3 || rc.d_range[2] < 1 || rc.d_range[2] != std::floor(rc.d_range[2])) {
      throw ConfigError("--d-range takes three values: lo hi count");
    }
  }
  for (double v : rc.v_values) {
    if (!(v > 0.0 && v < 1.0)) throw ConfigError("--v-values must lie strictly between 0 and 1");
  }
}

inline sim::McDesign design_of(const RunConfig& rc) {
  sim::McDesign design;
  design.variant = rc.variant == "heteroskedastic" ? sim::Variant::heteroskedastic : sim::Variant::homoskedastic;
  design.n = rc.n;
  design.rho0 = rc.rho0;
  design.censor_quantile = rc.censor_quantile;
  design.seed = rc.seed;
  return design;
}

inline CqivConfig estimator_config_of(const RunConfig& rc, const Dataset& data) {
  CqivConfig cfg;
  if (rc.control == "none") {
    cfg.control_method.reset();
  } else if (rc.control == "qr") {
    cfg.control_method = ControlMethod::qr_grid;
  } else if (rc.control == "dr") {
    cfg.control_method = ControlMethod::dist_reg;
  } else {
    cfg.control_method = ControlMethod::ols_ecdf;
  }
  cfg.transform = rc.transform == "identity" ? ControlTransform::identity : ControlTransform::normal_quantile;
  const bool with_control = cfg.control_method.has_value();
  cfg.second_stage = rc.spec == "quadratic" ? RegressorSpec::quadratic(data.w.cols(), with_control)
                                            : RegressorSpec::standard(data.w.cols(), with_control);
  cfg.censoring_correction = !rc.no_correction;
  cfg.selector_link = rc.link == "logit" ? num::Link::logit : num::Link::probit;
  cfg.q0 = rc.q0;
  cfg.q1 = rc.q1;
  cfg.max_extra_iterations = rc.max_extra;
  cfg.retain_best_by_powell = !rc.retain_last;
  cfg.first_stage.qr_grid_size = rc.qr_grid;
  cfg.first_stage.dr_max_thresholds = rc.dr_thresholds;
  cfg.first_stage.squares = rc.first_stage_squares;
  cfg.first_stage.link = cfg.selector_link;
  return cfg;
}

/// Loads the CSV named by the configuration, or draws a design sample when no
/// file is given.
inline Dataset load_dataset(const RunConfig& rc) {
  if (rc.data.empty()) return sim::generate_design(design_of(rc)).data;
  const DataFrame df = read_csv(rc.data);
  std::vector<std::string> missing;
  auto need = [&](const std::string& name) {
    if (!df.has(name)) missing.push_back(name);
  };
  need(rc.y);
  need(rc.d);
  for (const auto& n : rc.w) need(n);
  for (const auto& n : rc.z) need(n);
  if (!rc.c.empty()) need(rc.c);
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "'" : ", '") + m + "'";
    std::string have;
    for (const auto& m : df.names) have += (have.empty() ? "" : ", ") + m;
    throw DataError(rc.data + ": missing column(s) " + list + " (available: " + have + ")");
  }
  const auto n = static_cast<Index>(df.rows());
  auto vec = [&](const std::string& name) {
    const auto& col = df.column(name);
    return Vector(Eigen::Map<const Vector>(col.data(), n));
  };
  Dataset data;
  data.y = vec(rc.y);
  data.d = vec(rc.d);
  data.y_name = rc.y;
  data.d_name = rc.d;
  data.w.resize(n, static_cast<Index>(rc.w.size()));
  for (std::size_t k = 0; k < rc.w.size(); ++k) data.w.col(static_cast<Index>(k)) = vec(rc.w[k]);
  data.z.resize(n, static_cast<Index>(rc.z.size()));
  for (std::size_t k = 0; k < rc.z.size(); ++k) data.z.col(static_cast<Index>(k)) = vec(rc.z[k]);
  data.w_names = rc.w;
  data.z_names = rc.z;
  data.c = rc.c.empty() ? Vector::Constant(n, rc.c_value.value_or(0.0)) : vec(rc.c);
  return data;
}

inline json to_json(const RunConfig& rc) {
  json j;
  j["command"] = rc.command;
  j["data"] = rc.data;
  j["y"] = rc.y;
  j["d"] = rc.d;
  j["w"] = rc.w;
  j["z"] = rc.z;
  if (!rc.c.empty()) j["c"] = rc.c;
  if (rc.c.empty()) j["c_value"] = rc.c_value.value_or(0.0);
  j["quantiles"] = rc.quantiles;
  j["control"] = rc.control;
  j["transform"] = rc.transform;
  j["spec"] = rc.spec;
  j["no_correction"] = rc.no_correction;
  j["q0"] = rc.q0;
  j["q1"] = rc.q1;
  j["link"] = rc.link;
  j["max_extra"] = rc.max_extra;
  j["retain_last"] = rc.retain_last;
  j["qr_grid"] = rc.qr_grid;
  j["dr_thresholds"] = rc.dr_thresholds;
  j["first_stage_squares"] = rc.first_stage_squares;
  j["B"] = rc.B;
  j["scheme"] = rc.scheme;
  j["refit"] = rc.refit;
  j["level"] = rc.level;
  j["dump_draws"] = rc.dump_draws;
  j["seed"] = rc.seed;
  j["variant"] = rc.variant;
  j["n"] = rc.n;
  j["rho0"] = rc.rho0;
  j["censor_quantile"] = rc.censor_quantile;
  j["reps"] = rc.reps;
  j["estimators"] = rc.estimators;
  j["fit"] = rc.fit;
  j["d_grid"] = rc.d_grid;
  j["d_range"] = rc.d_range;
  j["w_values"] = rc.w_values;
  j["v_values"] = rc.v_values;
  j["out"] = rc.out;
  return j;
}

}  // namespace cqiv::cli
