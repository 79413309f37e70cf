#pragma once

// Subcommands of the `cqiv` tool. Each command reads a RunConfig, writes its
// tables into the output directory and returns the list of files written.
//
// Exit codes: 0 success, 2 configuration error, 3 data error,
// 4 empty selection, 5 numerical failure.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "cqiv/cli/config.hpp"
#include "cqiv/cli/table.hpp"
#include "cqiv/cqiv.hpp"
#include "cqiv/inference.hpp"
#include "cqiv/parallel.hpp"
#include "cqiv/rng.hpp"
#include "cqiv/sim.hpp"

namespace cqiv::cli {

inline constexpr const char* kVersion = "1.0.0";

enum ExitCode : int { ok = 0, config_error = 2, data_error = 3, empty_selection = 4, numerical_failure = 5 };

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const DomainError*>(&e) ||
      dynamic_cast<const SpecMismatch*>(&e) || dynamic_cast<const NotFitted*>(&e)) {
    return config_error;
  }
  if (dynamic_cast<const DataError*>(&e)) return data_error;
  if (dynamic_cast<const EmptySelection*>(&e)) return empty_selection;
  if (dynamic_cast<const std::filesystem::filesystem_error*>(&e)) return config_error;
  return numerical_failure;
}

struct CommandResult {
  std::vector<std::string> files;
  std::vector<std::string> warnings;
};

namespace detail {

inline std::string path_in(const RunConfig& rc, const std::string& name) {
  return (std::filesystem::path(rc.out) / name).string();
}

inline void prepare_output(const RunConfig& rc) {
  std::error_code ec;
  std::filesystem::create_directories(rc.out, ec);
  if (ec || !std::filesystem::is_directory(rc.out)) {
    throw ConfigError("cannot create output directory '" + rc.out + "'");
  }
}

inline std::vector<std::pair<std::string, std::string>> meta(const RunConfig& rc) {
  return {{"command", rc.command}, {"seed", std::to_string(rc.seed)}};
}

inline void save_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << text;
}

inline void save_table(CommandResult& res, const RunConfig& rc, const std::string& name, const CsvWriter& w) {
  const std::string path = path_in(rc, name);
  w.save(path);
  res.files.push_back(name);
}

inline json data_summary(const Dataset& data) {
  json j;
  j["rows"] = data.rows();
  j["censored_fraction"] = data.censored_fraction();
  j["constant_censoring"] = data.constant_censoring();
  return j;
}

inline void write_run_json(CommandResult& res, const RunConfig& rc, json extra = json::object()) {
  json j;
  j["schema"] = "cqiv-run";
  j["schema_version"] = kSchemaVersion;
  j["command"] = rc.command;
  j["seed"] = rc.seed;
  j["versions"] = {{"cqiv", kVersion},
                   {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                 std::to_string(EIGEN_MINOR_VERSION)}};
  j["config"] = to_json(rc);
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  j["warnings"] = res.warnings;
  res.files.push_back("run.json");
  j["outputs"] = res.files;
  save_text(path_in(rc, "run.json"), j.dump(2) + "\n");
}

inline std::vector<double> quantiles_or_default(const RunConfig& rc) {
  return rc.quantiles.empty() ? default_quantiles(rc.command) : rc.quantiles;
}

inline void fill_diagnostics(ResultRow& r, const CqivFit& fit, const sim::FitSummary& s) {
  r.quantile = fit.u;
  r.selected_step = fit.selected_step();
  r.k0 = s.k0;
  r.varsigma1 = s.varsigma1;
  r.pct_J0 = s.pct_J0;
  r.pct_pred_above_C = s.pct_pred_above_C;
  r.pct_J1 = s.pct_J1;
  r.pct_J0_in_J1 = s.pct_J0_in_J1;
  r.count_J1_not_in_J0 = s.count_J1_not_in_J0;
}

inline std::string coefficient_item(const CqivFit& fit, std::size_t k, const Dataset& data) {
  return "coef:" + fit.regressors.label(k, &data);
}

inline ResultTable point_table(const RunConfig& rc, const std::vector<CqivFit>& fits, const Dataset& data) {
  ResultTable t;
  t.command = rc.command;
  t.seed = rc.seed;
  for (const auto& fit : fits) {
    const auto s = sim::summarize(fit);
    for (std::size_t k = 0; k < fit.regressors.terms.size(); ++k) {
      ResultRow r;
      fill_diagnostics(r, fit, s);
      r.item = coefficient_item(fit, k, data);
      r.estimate = fit.beta(static_cast<Index>(k));
      t.rows.push_back(std::move(r));
    }
  }
  return t;
}

inline int first_step(const RunConfig& rc) { return rc.no_correction ? 1 : 2; }
inline int last_step(const RunConfig& rc) { return rc.no_correction ? 1 : 3 + rc.max_extra; }

inline std::vector<std::string> diagnostics_columns(const RunConfig& rc) {
  std::vector<std::string> cols = {"replication", "quantile", "selected_step", "k0", "varsigma1", "pct_J0",
                                   "pct_candidates_J0", "pct_pred_above_C", "pct_J1", "pct_J0_in_J1",
                                   "count_J1_not_in_J0"};
  for (int s = first_step(rc); s <= last_step(rc); ++s) cols.push_back("powell_step" + std::to_string(s));
  return cols;
}

inline std::vector<std::string> diagnostics_row(const RunConfig& rc, Index replication, const CqivFit& fit) {
  const auto s = sim::summarize(fit);
  std::vector<std::string> row = {std::to_string(replication),
                                  format_number(fit.u),
                                  std::to_string(fit.selected_step()),
                                  format_number(s.k0),
                                  format_number(s.varsigma1),
                                  format_number(s.pct_J0),
                                  format_number(s.pct_candidates_J0),
                                  format_number(s.pct_pred_above_C),
                                  format_number(s.pct_J1),
                                  format_number(s.pct_J0_in_J1),
                                  format_number(s.count_J1_not_in_J0)};
  for (int st = first_step(rc); st <= last_step(rc); ++st) {
    double obj = kNaN;
    for (const auto& d : fit.steps) {
      if (d.step == st) obj = d.powell_objective;
    }
    row.push_back(format_number(obj));
  }
  return row;
}

inline void add_steps(CsvWriter& w, const CqivFit& fit, const Dataset& data) {
  for (std::size_t k = 0; k < fit.steps.size(); ++k) {
    const auto& d = fit.steps[k];
    std::vector<std::string> row = {format_number(fit.u),
                                    std::to_string(d.step),
                                    format_number(d.k0),
                                    format_number(d.varsigma),
                                    format_number(d.threshold),
                                    format_number(d.pct_candidates),
                                    format_number(d.pct_selected),
                                    format_number(d.pct_prev_in_current),
                                    std::to_string(d.count_current_not_in_prev),
                                    std::to_string(d.selected_count),
                                    format_number(d.powell_objective),
                                    k == fit.retained ? "1" : "0"};
    (void)data;
    for (Index j = 0; j < d.beta.size(); ++j) row.push_back(format_number(d.beta(j)));
    w.add(std::move(row));
  }
}

inline CsvWriter steps_writer(const RunConfig& rc, const CqivFit& any, const Dataset& data) {
  std::vector<std::string> cols = {"quantile",       "step",          "k0",
                                   "varsigma",       "threshold",     "pct_candidates",
                                   "pct_selected",   "pct_prev_in_current", "count_current_not_in_prev",
                                   "selected_count", "powell_objective",    "retained"};
  for (std::size_t k = 0; k < any.regressors.terms.size(); ++k) cols.push_back(coefficient_item(any, k, data));
  return CsvWriter("cqiv-steps", meta(rc), cols);
}

inline std::string term_kind_name(TermKind k) {
  switch (k) {
    case TermKind::intercept: return "intercept";
    case TermKind::d: return "d";
    case TermKind::d_squared: return "d_squared";
    case TermKind::w: return "w";
    case TermKind::control: return "control";
  }
  return "?";
}

inline TermKind term_kind_from(const std::string& s) {
  for (TermKind k : {TermKind::intercept, TermKind::d, TermKind::d_squared, TermKind::w, TermKind::control}) {
    if (term_kind_name(k) == s) return k;
  }
  throw DataError("fit file: unknown term kind '" + s + "'");
}

inline json fit_json(const RunConfig& rc, const CqivConfig& cfg, const std::vector<CqivFit>& fits,
                     const Dataset& data) {
  json j;
  j["schema"] = "cqiv-fit";
  j["schema_version"] = kSchemaVersion;
  j["seed"] = rc.seed;
  j["control"] = rc.control;
  j["transform"] = to_string(cfg.transform);
  j["d_name"] = data.d_name;
  j["w_names"] = data.w_names;
  if (data.constant_censoring()) j["c_value"] = data.c(0);
  json arr = json::array();
  for (const auto& fit : fits) {
    json f;
    f["u"] = fit.u;
    f["selected_step"] = fit.selected_step();
    json terms = json::array();
    for (std::size_t k = 0; k < fit.regressors.terms.size(); ++k) {
      const Term& t = fit.regressors.terms[k];
      terms.push_back({{"kind", term_kind_name(t.kind)}, {"index", t.index}, {"label", fit.regressors.label(k, &data)}});
    }
    f["terms"] = terms;
    f["beta"] = std::vector<double>(fit.beta.data(), fit.beta.data() + fit.beta.size());
    json steps = json::array();
    for (const auto& d : fit.steps) {
      steps.push_back({{"step", d.step},
                       {"powell_objective", d.powell_objective},
                       {"selected_count", d.selected_count},
                       {"beta", std::vector<double>(d.beta.data(), d.beta.data() + d.beta.size())}});
    }
    f["steps"] = steps;
    arr.push_back(std::move(f));
  }
  j["fits"] = arr;
  return j;
}

struct FitRun {
  Dataset data;
  CqivConfig cfg;
  std::vector<CqivFit> fits;
};

inline FitRun run_fits(const RunConfig& rc) {
  FitRun fr;
  fr.data = load_dataset(rc);
  fr.data.validate();
  fr.cfg = estimator_config_of(rc, fr.data);
  fr.fits = fit_cqiv_quantiles(fr.data, fr.cfg, quantiles_or_default(rc), Vector::Ones(fr.data.rows()));
  return fr;
}

inline void write_diagnostics(CommandResult& res, const RunConfig& rc, const FitRun& fr) {
  CsvWriter diag("cqiv-diagnostics", meta(rc), diagnostics_columns(rc));
  for (const auto& fit : fr.fits) diag.add(diagnostics_row(rc, 0, fit));
  save_table(res, rc, "diagnostics.csv", diag);
  CsvWriter steps = steps_writer(rc, fr.fits.front(), fr.data);
  for (const auto& fit : fr.fits) add_steps(steps, fit, fr.data);
  save_table(res, rc, "steps.csv", steps);
}

}  // namespace detail

// ---------------------------------------------------------------------------

inline CommandResult cmd_fit(const RunConfig& rc) {
  CommandResult res;
  detail::prepare_output(rc);
  const detail::FitRun fr = detail::run_fits(rc);
  write_result_table(detail::point_table(rc, fr.fits, fr.data), detail::path_in(rc, "results.csv"));
  res.files.push_back("results.csv");
  detail::write_diagnostics(res, rc, fr);
  detail::save_text(detail::path_in(rc, "fit.json"), detail::fit_json(rc, fr.cfg, fr.fits, fr.data).dump(2) + "\n");
  res.files.push_back("fit.json");
  detail::write_run_json(res, rc, {{"data_summary", detail::data_summary(fr.data)}});
  return res;
}

inline CommandResult cmd_diagnose(const RunConfig& rc) {
  CommandResult res;
  detail::prepare_output(rc);
  if (!rc.data.empty()) {
    const detail::FitRun fr = detail::run_fits(rc);
    detail::write_diagnostics(res, rc, fr);
    detail::write_run_json(res, rc, {{"data_summary", detail::data_summary(fr.data)}});
    return res;
  }

  // Replications of the simulation design, each from its own child stream.
  const sim::McDesign design = design_of(rc);
  const auto quantiles = detail::quantiles_or_default(rc);
  const auto reps = static_cast<std::size_t>(rc.reps);
  std::vector<std::vector<CqivFit>> fits(reps);
  std::vector<std::string> errors(reps);
  parallel_for(reps, [&](std::size_t r) {
    Rng rng = child_rng(rc.seed, r);
    const sim::Sample s = sim::generate_design(design, rng);
    try {
      fits[r] = fit_cqiv_quantiles(s.data, estimator_config_of(rc, s.data), quantiles, Vector::Ones(design.n));
    } catch (const Error& e) {
      errors[r] = e.what();
    }
  });

  CsvWriter diag("cqiv-diagnostics", detail::meta(rc), detail::diagnostics_columns(rc));
  CsvWriter failures("cqiv-failures", detail::meta(rc), {"replication", "error"});
  for (std::size_t r = 0; r < reps; ++r) {
    if (!errors[r].empty()) {
      failures.add({std::to_string(r), errors[r]});
      continue;
    }
    for (const auto& fit : fits[r]) diag.add(detail::diagnostics_row(rc, static_cast<Index>(r), fit));
  }
  detail::save_table(res, rc, "diagnostics.csv", diag);
  detail::save_table(res, rc, "failures.csv", failures);

  // Medians across replications, one row per quantile.
  CsvWriter med("cqiv-diagnostics-median", detail::meta(rc),
                {"quantile", "replications", "k0", "varsigma1", "pct_J0", "pct_pred_above_C", "pct_J1", "pct_J0_in_J1",
                 "count_J1_not_in_J0", "pct_step3_improves"});
  for (std::size_t q = 0; q < quantiles.size(); ++q) {
    std::vector<std::vector<double>> cols(7);
    Index improved = 0, with_step3 = 0, ok = 0;
    for (std::size_t r = 0; r < reps; ++r) {
      if (!errors[r].empty()) continue;
      ++ok;
      const auto s = sim::summarize(fits[r][q]);
      const double vals[] = {s.k0,     s.varsigma1,    s.pct_J0,           s.pct_pred_above_C,
                             s.pct_J1, s.pct_J0_in_J1, s.count_J1_not_in_J0};
      for (std::size_t k = 0; k < 7; ++k) {
        if (std::isfinite(vals[k])) cols[k].push_back(vals[k]);
      }
      if (s.objectives.size() >= 2) {
        ++with_step3;
        improved += s.objectives[1] < s.objectives[0] ? 1 : 0;
      }
    }
    std::vector<std::string> row = {format_number(quantiles[q]), std::to_string(ok)};
    for (const auto& c : cols) row.push_back(c.empty() ? "" : format_number(sample_quantile(c, 0.5)));
    row.push_back(with_step3 > 0 ? format_number(100.0 * static_cast<double>(improved) / static_cast<double>(with_step3))
                                 : "");
    med.add(std::move(row));
  }
  detail::save_table(res, rc, "diagnostics_median.csv", med);
  Index failed = 0;
  for (const auto& e : errors) failed += e.empty() ? 0 : 1;
  if (failed > 0) res.warnings.push_back(std::to_string(failed) + " replication(s) failed; see failures.csv");
  detail::write_run_json(res, rc, {{"replications", rc.reps}, {"failed_replications", failed}});
  return res;
}

inline CommandResult cmd_bootstrap(const RunConfig& rc) {
  CommandResult res;
  detail::prepare_output(rc);
  const detail::FitRun fr = detail::run_fits(rc);
  ResultTable table = detail::point_table(rc, fr.fits, fr.data);
  const bool has_elasticity =
      fr.fits.front().regressors.find(TermKind::d) && fr.fits.front().regressors.find(TermKind::d_squared);

  // Elasticity rows follow the coefficient rows of each quantile.
  std::vector<ResultRow> rows;
  std::size_t at = 0;
  for (const auto& fit : fr.fits) {
    for (std::size_t k = 0; k < fit.regressors.terms.size(); ++k) rows.push_back(table.rows[at++]);
    if (has_elasticity) {
      ResultRow r;
      detail::fill_diagnostics(r, fit, sim::summarize(fit));
      r.item = "elasticity";
      r.estimate = quantile_elasticity(fit, fr.data).average;
      rows.push_back(std::move(r));
    }
  }
  table.rows = std::move(rows);

  json boot = json::object();
  if (rc.B == 0) {
    res.warnings.push_back("B = 0: no bootstrap draws; confidence-interval columns are left empty");
    std::cerr << "warning: " << res.warnings.back() << '\n';
  } else {
    BootstrapOptions opt;
    opt.B = rc.B;
    opt.seed = rc.seed;
    opt.scheme = rc.scheme == "unit" ? WeightScheme::unit() : WeightScheme::exponential();
    opt.refit_selection = rc.refit == "fixed" ? RefitSelection::fixed_J1 : RefitSelection::refit_J1b;
    const BootstrapDraws draws = bootstrap_cqiv(fr.data, fr.cfg, fr.fits, opt);

    CsvWriter dump("cqiv-draws", detail::meta(rc), {"quantile", "draw", "item", "value"});
    std::size_t row = 0;
    json failed = json::array();
    for (std::size_t q = 0; q < fr.fits.size(); ++q) {
      const CqivFit& fit = fr.fits[q];
      const QuantileDraws& qd = draws.quantiles[q];
      for (std::size_t k = 0; k < fit.regressors.terms.size(); ++k, ++row) {
        const auto ci = coefficient_ci(qd, static_cast<Index>(k), rc.level);
        table.rows[row].ci_lower = ci.lower;
        table.rows[row].ci_upper = ci.upper;
      }
      std::vector<double> el;
      if (has_elasticity) {
        el = elasticity_draws(qd, fit, fr.data);
        const auto ci = percentile_ci(el, rc.level, "elasticity");
        table.rows[row].ci_lower = ci.lower;
        table.rows[row].ci_upper = ci.upper;
        ++row;
      }
      if (rc.dump_draws) {
        for (Index b = 0; b < qd.betas.rows(); ++b) {
          const std::string draw = std::to_string(qd.draw_index[static_cast<std::size_t>(b)]);
          for (std::size_t k = 0; k < fit.regressors.terms.size(); ++k) {
            dump.add({format_number(fit.u), draw, detail::coefficient_item(fit, k, fr.data),
                      format_number(qd.betas(b, static_cast<Index>(k)))});
          }
          if (has_elasticity) dump.add({format_number(fit.u), draw, "elasticity", format_number(el[static_cast<std::size_t>(b)])});
        }
      }
      failed.push_back({{"quantile", fit.u}, {"failed_draws", qd.failed_draws.size()}});
    }
    if (rc.dump_draws) detail::save_table(res, rc, "draws.csv", dump);
    boot = {{"B", rc.B},
            {"scheme", rc.scheme},
            {"refit", rc.refit},
            {"level", rc.level},
            {"failures", failed}};
  }
  write_result_table(table, detail::path_in(rc, "results.csv"));
  res.files.push_back("results.csv");
  detail::write_run_json(res, rc, {{"data_summary", detail::data_summary(fr.data)}, {"bootstrap", boot}});
  return res;
}

inline CommandResult cmd_simulate(const RunConfig& rc) {
  CommandResult res;
  detail::prepare_output(rc);
  sim::McOptions opt;
  opt.replications = rc.reps;
  opt.seed = rc.seed;
  opt.quantiles = detail::quantiles_or_default(rc);
  opt.estimators.clear();
  if (rc.estimators.empty()) {
    opt.estimators = sim::all_estimators();
  } else {
    for (const auto& e : rc.estimators) opt.estimators.push_back(sim::estimator_from_string(e));
  }
  Dataset shape;
  shape.w = Matrix(0, 1);
  opt.base = estimator_config_of(rc, shape);
  const sim::McDesign design = design_of(rc);
  const sim::McResult mc = sim::run_monte_carlo(design, opt);

  CsvWriter table("cqiv-mc-table", detail::meta(rc),
                  {"estimator", "quantile", "mean_bias", "rmse", "mean_control", "median_control", "replications",
                   "failures"});
  CsvWriter failures("cqiv-failures", detail::meta(rc), {"replication", "estimator", "quantile", "error"});
  std::vector<std::string> plot_cols = {"quantile"};
  for (auto e : opt.estimators) plot_cols.push_back(sim::to_string(e));
  CsvWriter bias("cqiv-plot-bias", detail::meta(rc), plot_cols);
  CsvWriter rmse("cqiv-plot-rmse", detail::meta(rc), plot_cols);

  Index failed = 0;
  for (std::size_t e = 0; e < opt.estimators.size(); ++e) {
    for (std::size_t q = 0; q < opt.quantiles.size(); ++q) {
      const auto& c = mc.cells[e][q];
      const bool any = c.replication_count > 0;
      table.add({sim::to_string(opt.estimators[e]), format_number(opt.quantiles[q]),
                 any ? format_number(c.mean_bias) : "", any ? format_number(c.rmse) : "",
                 format_number(c.mean_control), format_number(c.median_control), std::to_string(c.replication_count),
                 std::to_string(c.failure_count)});
      for (std::size_t r = 0; r < mc.records.size(); ++r) {
        const auto& rec = mc.records[r][e][q];
        if (rec.ok) continue;
        ++failed;
        failures.add({std::to_string(r), sim::to_string(opt.estimators[e]), format_number(opt.quantiles[q]), rec.error});
      }
    }
  }
  for (std::size_t q = 0; q < opt.quantiles.size(); ++q) {
    std::vector<std::string> b = {format_number(opt.quantiles[q])}, r = b;
    for (std::size_t e = 0; e < opt.estimators.size(); ++e) {
      const auto& c = mc.cells[e][q];
      const bool any = c.replication_count > 0;
      b.push_back(any ? format_number(c.mean_bias) : "");
      r.push_back(any ? format_number(c.rmse) : "");
    }
    bias.add(std::move(b));
    rmse.add(std::move(r));
  }
  detail::save_table(res, rc, "mc_table.csv", table);
  detail::save_table(res, rc, "plot_bias.csv", bias);
  detail::save_table(res, rc, "plot_rmse.csv", rmse);
  detail::save_table(res, rc, "failures.csv", failures);
  if (failed > 0) res.warnings.push_back(std::to_string(failed) + " estimator cell(s) failed; see failures.csv");
  detail::write_run_json(res, rc, {{"design", {{"variant", sim::to_string(design.variant)}, {"n", design.n},
                                               {"rho0", design.rho0}, {"censor_quantile", design.censor_quantile}}},
                                   {"failed_cells", failed}});
  return res;
}

/// Evaluates max(x(d, w, v)'beta, c) for one stored fit; v is on the probability scale.
inline double predict_from_terms(const RegressorSpec& spec, const Vector& beta, const std::string& transform, double d,
                                 const Eigen::RowVectorXd& w, double v, double c) {
  double control = 0.0;
  if (spec.has_control()) control = transform == "identity" ? v : num::normal_quantile(v);
  return std::max(spec.row(d, w, control).dot(beta), c);
}

inline CommandResult cmd_predict(const RunConfig& rc) {
  CommandResult res;
  detail::prepare_output(rc);
  const std::string fit_path = rc.fit.empty() ? detail::path_in(rc, "fit.json") : rc.fit;
  std::ifstream in(fit_path, std::ios::binary);
  if (!in) throw ConfigError("cannot open fit file '" + fit_path + "'; run `cqiv fit` first or pass --fit");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(fit_path + ": " + e.what());
  }
  if (j.value("schema", "") != "cqiv-fit") throw DataError(fit_path + ": not a fit file");

  std::vector<double> grid = rc.d_grid;
  if (!rc.d_range.empty()) {
    const auto count = static_cast<long>(rc.d_range[2]);
    for (long k = 0; k < count; ++k) {
      grid.push_back(count == 1 ? rc.d_range[0]
                                : rc.d_range[0] + (rc.d_range[1] - rc.d_range[0]) * static_cast<double>(k) /
                                                      static_cast<double>(count - 1));
    }
  }
  if (grid.empty()) throw ConfigError("predict needs an evaluation grid: --d-grid or --d-range");

  double c = 0.0;
  if (rc.c_value) {
    c = *rc.c_value;
  } else if (j.contains("c_value")) {
    c = j["c_value"].get<double>();
  } else {
    throw ConfigError("the fit used a per-row censoring column; give --c-value for prediction");
  }
  const std::string transform = j.value("transform", "normal_quantile");
  const std::vector<double> vs = rc.v_values.empty() ? std::vector<double>{0.25, 0.5, 0.75} : rc.v_values;

  CsvWriter curves("cqiv-curves", detail::meta(rc), {"quantile", "v", "d", "prediction"});
  Index used = 0;
  for (const auto& f : j["fits"]) {
    const double u = f["u"].get<double>();
    if (!rc.quantiles.empty() &&
        std::none_of(rc.quantiles.begin(), rc.quantiles.end(), [&](double q) { return std::abs(q - u) < 1e-12; })) {
      continue;
    }
    ++used;
    RegressorSpec spec;
    Index w_needed = 0;
    for (const auto& t : f["terms"]) {
      Term term{detail::term_kind_from(t["kind"].get<std::string>()), t["index"].get<Index>()};
      if (term.kind == TermKind::w) w_needed = std::max(w_needed, term.index + 1);
      spec.terms.push_back(term);
    }
    if (static_cast<Index>(rc.w_values.size()) != w_needed) {
      throw SpecMismatch("the fitted specification has " + std::to_string(w_needed) + " W column(s) but " +
                         std::to_string(rc.w_values.size()) + " value(s) were given with --w-values");
    }
    const auto b = f["beta"].get<std::vector<double>>();
    if (static_cast<Index>(b.size()) != spec.size()) throw DataError(fit_path + ": coefficient count mismatch");
    const Vector beta = Eigen::Map<const Vector>(b.data(), spec.size());
    const Eigen::RowVectorXd w = Eigen::Map<const Eigen::RowVectorXd>(rc.w_values.data(), w_needed);
    const std::vector<double> v_list = spec.has_control() ? vs : std::vector<double>{kNaN};
    for (double v : v_list) {
      for (double d : grid) {
        curves.add({format_number(u), format_number(v), format_number(d),
                    format_number(predict_from_terms(spec, beta, transform, d, w, v, c))});
      }
    }
  }
  if (used == 0) throw ConfigError("none of the requested quantiles is present in the fit file");
  detail::save_table(res, rc, "curves.csv", curves);
  detail::write_run_json(res, rc, {{"fit_file", fit_path}, {"c_value", c}});
  return res;
}

/// Writes a sample of the simulation design as CSV (columns y, d, w, z, c).
inline CommandResult cmd_generate(const RunConfig& rc) {
  CommandResult res;
  detail::prepare_output(rc);
  const sim::Sample s = sim::generate_design(design_of(rc));
  CsvWriter w("cqiv-data", detail::meta(rc), {"y", "d", "w", "z", "c"});
  for (Index i = 0; i < s.data.rows(); ++i) {
    w.add({format_number(s.data.y(i)), format_number(s.data.d(i)), format_number(s.data.w(i, 0)),
           format_number(s.data.z(i, 0)), format_number(s.data.c(i))});
  }
  detail::save_table(res, rc, "data.csv", w);
  detail::write_run_json(res, rc, {{"data_summary", detail::data_summary(s.data)}});
  return res;
}

inline CommandResult run_command(const RunConfig& rc) {
  validate(rc);
  set_thread_count(static_cast<std::size_t>(rc.threads));
  if (rc.command == "fit") return cmd_fit(rc);
  if (rc.command == "bootstrap") return cmd_bootstrap(rc);
  if (rc.command == "simulate") return cmd_simulate(rc);
  if (rc.command == "diagnose") return cmd_diagnose(rc);
  if (rc.command == "predict") return cmd_predict(rc);
  if (rc.command == "generate") return cmd_generate(rc);
  throw ConfigError("unknown command '" + rc.command + "'");
}

// ---------------------------------------------------------------------------
// Argument parsing.

inline void add_options(CLI::App& app, RunConfig& rc, double& c_value, CLI::Option*& c_value_opt) {
  auto one_of = [](std::vector<std::string> v) { return CLI::IsMember(std::move(v)); };
  app.add_option("--data", rc.data, "input CSV (header row, numeric cells); a design sample is used when omitted");
  app.add_option("--y", rc.y, "response column")->capture_default_str();
  app.add_option("--d", rc.d, "endogenous regressor column")->capture_default_str();
  app.add_option("--w", rc.w, "exogenous covariate columns");
  app.add_option("--z", rc.z, "instrument columns");
  app.add_option("--c", rc.c, "censoring-point column");
  c_value_opt = app.add_option("--c-value", c_value, "constant censoring point (default 0)");
  app.add_option("--quantiles", rc.quantiles, "quantile indices in (0, 1)");
  app.add_option("--control", rc.control, "control method")->check(one_of({"ols", "qr", "dr", "none"}))->capture_default_str();
  app.add_option("--transform", rc.transform, "control transform")->check(one_of({"normal", "identity"}))->capture_default_str();
  app.add_option("--spec", rc.spec, "second stage: (1,D,W,V) or (1,D,D^2,W,V)")
      ->check(one_of({"standard", "quadratic"}))
      ->capture_default_str();
  app.add_flag("--no-correction", rc.no_correction, "skip the censoring correction (plain quantile regression)");
  app.add_option("--q0", rc.q0, "first-step trimming percentile")->capture_default_str();
  app.add_option("--q1", rc.q1, "later-step trimming percentile")->capture_default_str();
  app.add_option("--link", rc.link, "binary link")->check(one_of({"probit", "logit"}))->capture_default_str();
  app.add_option("--max-extra", rc.max_extra, "extra selection steps after the third")->capture_default_str();
  app.add_flag("--retain-last", rc.retain_last, "keep the last step instead of the best Powell objective");
  app.add_option("--qr-grid", rc.qr_grid, "quantile grid size of the qr control")->capture_default_str();
  app.add_option("--dr-thresholds", rc.dr_thresholds, "threshold cap of the dr control (0: all)")->capture_default_str();
  app.add_flag("--first-stage-squares", rc.first_stage_squares, "add squared terms to the first stage");
  app.add_option("-B,--draws", rc.B, "bootstrap draws")->capture_default_str();
  app.add_option("--scheme", rc.scheme, "bootstrap weights")->check(one_of({"exponential", "unit"}))->capture_default_str();
  app.add_option("--refit", rc.refit, "bootstrap selection")->check(one_of({"refit", "fixed"}))->capture_default_str();
  app.add_option("--level", rc.level, "confidence level")->capture_default_str();
  app.add_flag("--dump-draws", rc.dump_draws, "write raw bootstrap draws");
  app.add_option("--seed", rc.seed, "master random seed")->capture_default_str();
  app.add_option("--variant", rc.variant, "simulation design")
      ->check(one_of({"homoskedastic", "heteroskedastic"}))
      ->capture_default_str();
  app.add_option("--n", rc.n, "design sample size")->capture_default_str();
  app.add_option("--rho0", rc.rho0, "design endogeneity")->capture_default_str();
  app.add_option("--censor-quantile", rc.censor_quantile, "design censoring quantile")->capture_default_str();
  app.add_option("--reps", rc.reps, "Monte Carlo replications")->capture_default_str();
  app.add_option("--estimators", rc.estimators, "simulation estimators");
  app.add_option("--fit", rc.fit, "fit file for predict (default <out>/fit.json)");
  app.add_option("--d-grid", rc.d_grid, "prediction points for D");
  app.add_option("--d-range", rc.d_range, "prediction grid: lo hi count")->expected(3);
  app.add_option("--w-values", rc.w_values, "W values for prediction");
  app.add_option("--v-values", rc.v_values, "control-variable values in (0, 1) for prediction");
  app.add_option("--out", rc.out, "output directory")->capture_default_str();
  app.add_option("--threads", rc.threads, "worker threads (0: all cores)")->capture_default_str();
}

inline int main(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Censored quantile instrumental-variable estimation"};
  app.set_version_flag("--version", kVersion);
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON file of option values; command-line flags take precedence");
  app.fallthrough();
  app.require_subcommand(1, 1);

  RunConfig rc;
  double c_value = 0.0;
  CLI::Option* c_value_opt = nullptr;
  add_options(app, rc, c_value, c_value_opt);
  const std::pair<const char*, const char*> commands[] = {
      {"fit", "point estimates, step diagnostics and fit.json"},
      {"bootstrap", "point estimates with weighted-bootstrap percentile intervals"},
      {"simulate", "Monte Carlo bias and RMSE tables and plot data"},
      {"diagnose", "selection diagnostics per quantile"},
      {"predict", "quantile curves from a fit file"},
      {"generate", "write a simulated dataset"}};
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return config_error;
  }
  rc.command = app.get_subcommands().front()->get_name();
  if (c_value_opt->count() > 0) rc.c_value = c_value;

  try {
    const CommandResult res = run_command(rc);
    for (const auto& w : res.warnings) {
      if (rc.command != "bootstrap" || w.rfind("B = 0", 0) != 0) err << "warning: " << w << '\n';
    }
    out << rc.command << ": wrote";
    for (const auto& f : res.files) out << ' ' << f;
    out << " to " << rc.out << '\n';
    return ok;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
}

}  // namespace cqiv::cli
