// Command-line entry point: simulate, fit, select, posteriors, profile,
// predict and evaluate.

#include <CLI11.hpp>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "cmm/error.hpp"
#include "cmm/estimate.hpp"
#include "cmm/format.hpp"
#include "cmm/inference.hpp"
#include "cmm/io.hpp"
#include "cmm/predict.hpp"
#include "cmm/sim.hpp"
#include "cmm/version.hpp"

namespace fs = std::filesystem;
using namespace cmm;

namespace {

struct Options {
  std::string command;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  int threads = 1;
  std::string segments;
  bool appendix_c_literal = false;
};

struct Run {
  Options opt;
  Json config = Json::object();
  fs::path base = ".";
  fs::path out = "out";
  std::uint64_t seed = 1;
  std::string config_hash;
  std::vector<std::string> artifacts;

  fs::path resolve(const std::string& p) const {
    const fs::path path(p);
    return path.is_absolute() ? path : base / path;
  }

  const Json& section(const std::string& name) const {
    static const Json empty = Json::object();
    if (config.contains(name)) {
      if (!config.at(name).is_object()) fail(ErrorKind::config, "config section '" + name + "' must be an object");
      return config.at(name);
    }
    return empty;
  }

  template <class T>
  T get(const Json& sec, const std::string& key, const T& fallback, const std::string& where) const {
    if (!sec.contains(key)) return fallback;
    try {
      return sec.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      fail(ErrorKind::config, "config field '" + where + "." + key + "' has the wrong type");
    }
  }

  fs::path data_path(const std::string& key, const std::string& fallback) const {
    const Json& d = section("data");
    if (d.contains(key)) return resolve(get<std::string>(d, key, "", "data"));
    return out / fallback;
  }

  fs::path fit_path(const Json& sec) const {
    if (sec.contains("fit")) return resolve(get<std::string>(sec, "fit", "", "fit"));
    return out / "fit.json";
  }

  Json meta() const {
    return Json{{"tool", "cmm"}, {"version", kVersion}, {"command", opt.command}, {"config_hash", config_hash},
                {"seed", seed}};
  }

  void write_json_artifact(const std::string& name, Json j) {
    j["meta"] = meta();
    write_json((out / name).string(), j);
    artifacts.push_back(name);
  }

  void write_csv_artifact(const std::string& name, const CsvTable& t) {
    write_csv((out / name).string(), t);
    artifacts.push_back(name);
  }
};

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

std::pair<int, int> parse_segments(const std::string& s) {
  auto to_int = [&](const std::string& t) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(t, &used);
      if (used != t.size()) throw std::invalid_argument(t);
      return v;
    } catch (const std::exception&) {
      fail(ErrorKind::config, "--segments expects n or a..b, got '" + s + "'");
    }
  };
  const auto dots = s.find("..");
  if (dots == std::string::npos) {
    const int v = to_int(s);
    return {v, v};
  }
  const int a = to_int(s.substr(0, dots)), b = to_int(s.substr(dots + 2));
  if (a < 1 || b < a) fail(ErrorKind::config, "segment range must satisfy 1 <= a <= b");
  return {a, b};
}

CovariateSchema load_schema(const Run& run) {
  if (!run.config.contains("schema")) return cct_schema();
  const Json& s = run.config.at("schema");
  if (s.is_string()) {
    if (s.get<std::string>() == "cct") return cct_schema();
    if (s.get<std::string>() == "settings") return settings_schema();
    return schema_from_json(read_json(run.resolve(s.get<std::string>()).string()));
  }
  return schema_from_json(s);
}

FitConfig load_fit_config(const Run& run, int segments) {
  const Json& f = run.section("fit");
  FitConfig cfg;
  cfg.segments = segments;
  cfg.reltol = run.get<double>(f, "reltol", cfg.reltol, "fit");
  cfg.max_iters = run.get<int>(f, "max_iters", cfg.max_iters, "fit");
  cfg.warm_start_n = run.get<int>(f, "warm_start_n", cfg.warm_start_n, "fit");
  cfg.grad_tol = run.get<double>(f, "grad_tol", cfg.grad_tol, "fit");
  cfg.hessian_rel_step = run.get<double>(f, "hessian_rel_step", cfg.hessian_rel_step, "fit");
  cfg.hessian_abs_step = run.get<double>(f, "hessian_abs_step", cfg.hessian_abs_step, "fit");
  cfg.phi_floor = run.get<double>(f, "phi_floor", cfg.phi_floor, "fit");
  cfg.compute_se = run.get<bool>(f, "compute_se", cfg.compute_se, "fit");
  cfg.seed = run.seed;
  cfg.threads = run.opt.threads;
  cfg.validate();
  return cfg;
}

int fit_segments(const Run& run) {
  if (!run.opt.segments.empty()) {
    const auto [a, b] = parse_segments(run.opt.segments);
    if (a != b) fail(ErrorKind::config, "fit takes a single segment count");
    return a;
  }
  return run.get<int>(run.section("fit"), "segments", 1, "fit");
}

Dataset load_data(const Run& run) {
  return load_dataset(run.data_path("children", "children.csv").string(),
                      run.data_path("trials", "trials.csv").string());
}

CsvTable posterior_table(const Eigen::MatrixXd& p, const Dataset& data) {
  CsvTable t;
  t.header = {"child_id"};
  for (Eigen::Index s = 0; s < p.cols(); ++s) t.header.push_back("p" + std::to_string(s + 1));
  t.header.push_back("map_segment");
  t.header.push_back("max_posterior");
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    std::vector<std::string> r{data.children[i].child_id};
    Eigen::Index best = 0;
    for (Eigen::Index s = 0; s < p.cols(); ++s) {
      r.push_back(format_number(p(i, s)));
      if (p(i, s) > p(i, best)) best = s;
    }
    r.push_back(std::to_string(best + 1));
    r.push_back(format_number(p(i, best)));
    t.rows.push_back(std::move(r));
  }
  return t;
}

// ---- commands ----

void cmd_simulate(Run& run) {
  const Json& s = run.section("simulate");
  SimConfig sc;
  sc.n_children = run.get<int>(s, "n_children", sc.n_children, "simulate");
  sc.n_blocks = run.get<int>(s, "n_blocks", sc.n_blocks, "simulate");
  sc.seed = run.seed;
  sc.schema = load_schema(run);
  const BlockMap bm = make_block_map(sc.schema);
  if (s.contains("truth")) {
    sc.truth = params_from_json(read_json(run.resolve(run.get<std::string>(s, "truth", "", "simulate")).string()), bm);
  } else {
    const double delta = run.get<double>(s, "delta", kSimDelta, "simulate");
    const auto phi = run.get<std::array<double, 4>>(s, "phi", kSimPhi, "simulate");
    if (s.contains("alpha") || s.contains("pi")) {
      const auto alpha = run.get<std::vector<double>>(s, "alpha", {}, "simulate");
      const auto pi = run.get<std::vector<double>>(s, "pi", {}, "simulate");
      sc.truth = reference_truth_with_segments(Eigen::Map<const Eigen::VectorXd>(alpha.data(), alpha.size()),
                                           Eigen::Map<const Eigen::VectorXd>(pi.data(), pi.size()), delta, phi,
                                           sc.schema);
    } else {
      Eigen::VectorXd alpha(4), pi(4);
      alpha << 5.85, 11.04, 18.68, 37.52;
      pi << 0.097, 0.275, 0.357, 0.271;
      sc.truth = reference_truth_with_segments(alpha, pi, delta, phi, sc.schema);
    }
  }
  if (s.contains("covariates")) {
    const Json& c = s.at("covariates");
    CovariateGenerator g;
    try {
      for (const auto& m : c.at("numeric")) {
        g.numeric.push_back({m.at("name").get<std::string>(), m.at("mean").get<double>(), m.at("sd").get<double>(),
                             m.value("decimals", 2)});
      }
      for (const auto& f : c.at("categorical")) {
        g.categorical.push_back({f.at("name").get<std::string>(), f.at("weights").get<std::vector<double>>()});
      }
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::config, std::string("simulate.covariates: ") + e.what());
    }
    sc.covariates = g;
  }
  const Dataset d = generate_dataset(sc);
  run.write_csv_artifact("children.csv", children_to_csv(d));
  run.write_csv_artifact("trials.csv", trials_to_csv(d));
  Json truth = params_to_json(sc.truth, bm);
  truth["censoring_prevalence"] = censoring_prevalence(d);
  run.write_json_artifact("truth.json", truth);
}

int cmd_fit(Run& run) {
  const FitConfig cfg = load_fit_config(run, fit_segments(run));
  const CovariateSchema schema = load_schema(run);
  const Dataset data = load_data(run);
  const DesignMatrix design = build_design(data, schema);
  const FitData fd = make_fit_data(data, design);
  const FitResult res = fit(fd, design.blocks, cfg);
  run.write_json_artifact("fit.json", fit_to_json(res, schema, design.stats));
  const Json& f = run.section("fit");
  if (run.get<bool>(f, "write_posteriors", true, "fit")) {
    run.write_csv_artifact("posteriors.csv", posterior_table(posteriors(res, fd), data));
  }
  if (run.get<bool>(f, "dump_hessian", false, "fit") && res.hessian.size() > 0) {
    CsvTable h;
    for (Eigen::Index k = 0; k < res.hessian.cols(); ++k) h.header.push_back("h" + std::to_string(k + 1));
    for (Eigen::Index r = 0; r < res.hessian.rows(); ++r) {
      std::vector<std::string> row;
      for (Eigen::Index k = 0; k < res.hessian.cols(); ++k) row.push_back(format_number(res.hessian(r, k)));
      h.rows.push_back(std::move(row));
    }
    run.write_csv_artifact("hessian.csv", h);
  }
  if (!res.converged) {
    std::cerr << "cmm: fit did not converge (stop: " << res.optimizer_stop
              << ", max |gradient| " << res.gradient_norm << ")\n";
    return 4;
  }
  return 0;
}

void cmd_select(Run& run) {
  const Json& s = run.section("select");
  std::string range = run.opt.segments;
  if (range.empty()) range = run.get<std::string>(s, "segments", "1..4", "select");
  const auto [a, b] = parse_segments(range);
  const double min_share = run.get<double>(s, "min_share", 0.05, "select");
  const double min_gap = run.get<double>(s, "min_alpha_gap_se", 2.0, "select");
  std::vector<FitConfig> configs;
  for (int k = a; k <= b; ++k) configs.push_back(load_fit_config(run, k));
  const CovariateSchema schema = load_schema(run);
  const Dataset data = load_data(run);
  const DesignMatrix design = build_design(data, schema);
  const FitData fd = make_fit_data(data, design);
  std::vector<FitResult> fits;
  for (const FitConfig& cfg : configs) {
    const int k = cfg.segments;
    fits.push_back(fit(fd, design.blocks, cfg));
    run.write_json_artifact("fit_S" + std::to_string(k) + ".json", fit_to_json(fits.back(), schema, design.stats));
  }
  run.write_json_artifact("selection_report.json", selection_to_json(select_segments(fits, min_share, min_gap)));
}

struct Applied {
  FitArtifact art;
  Dataset data;
  DesignMatrix design;
  FitData fd;
};

Applied apply_fit(const Run& run, const Json& sec) {
  Applied a;
  a.art = fit_artifact_from_json(read_json(run.fit_path(sec).string()));
  a.data = load_data(run);
  a.design = build_design(a.data, a.art.schema, &a.art.stats);
  a.fd = make_fit_data(a.data, a.design);
  return a;
}

void cmd_posteriors(Run& run) {
  const Applied a = apply_fit(run, run.section("posteriors"));
  run.write_csv_artifact("posteriors.csv", posterior_table(posteriors(a.fd, a.art.params), a.data));
}

void cmd_profile(Run& run) {
  const Json& s = run.section("profile");
  const Applied a = apply_fit(run, s);
  const Eigen::MatrixXd p = posteriors(a.fd, a.art.params);
  if (!s.contains("scores")) fail(ErrorKind::config, "profile needs 'profile.scores' (a CSV with child_id and score columns)");
  const CsvTable scores = read_csv(run.resolve(run.get<std::string>(s, "scores", "", "profile")).string());
  const bool robust = run.get<bool>(s, "robust", false, "profile");
  const int id_col = scores.column("child_id");
  if (id_col < 0) fail(ErrorKind::data, "scores table lacks the 'child_id' column");
  std::map<std::string, std::size_t> row_of;
  for (std::size_t r = 0; r < scores.rows.size(); ++r) {
    if (!row_of.emplace(scores.rows[r][id_col], r).second) {
      fail(ErrorKind::data, "duplicate child " + scores.rows[r][id_col] + " in scores");
    }
  }
  const int segs = a.art.layout.segments;
  CsvTable out;
  out.header = {"score"};
  for (int k = 0; k < segs; ++k) out.header.push_back("mean_s" + std::to_string(k + 1));
  for (const char* h : {"statistic", "df", "p_value", "stars", "dropped_segments"}) out.header.push_back(h);
  for (std::size_t c = 0; c < scores.header.size(); ++c) {
    if (static_cast<int>(c) == id_col) continue;
    Eigen::VectorXd y(static_cast<Eigen::Index>(a.data.children.size()));
    for (std::size_t i = 0; i < a.data.children.size(); ++i) {
      const auto it = row_of.find(a.data.children[i].child_id);
      if (it == row_of.end()) fail(ErrorKind::data, "no score for child " + a.data.children[i].child_id);
      const std::string& v = scores.rows[it->second][c];
      const auto parsed = parse_double(v);
      if (!parsed) fail(ErrorKind::data, "non-numeric score '" + v + "' in column " + scores.header[c]);
      y(static_cast<Eigen::Index>(i)) = *parsed;
    }
    const WaldProfile w = weighted_profile(p, y, robust);
    std::vector<std::string> row{scores.header[c]};
    std::vector<std::string> means(segs, "NA");
    for (std::size_t k = 0; k < w.kept_segments.size(); ++k) {
      means[w.kept_segments[k]] = format_number(w.psi_star(static_cast<Eigen::Index>(k)));
    }
    row.insert(row.end(), means.begin(), means.end());
    std::string dropped;
    for (int d : w.dropped_segments) dropped += (dropped.empty() ? "" : ";") + std::to_string(d + 1);
    row.push_back(format_number(w.statistic));
    row.push_back(std::to_string(w.df));
    row.push_back(format_number(w.p_value));
    row.push_back(significance_stars(w.p_value));
    row.push_back(dropped);
    out.rows.push_back(std::move(row));
  }
  run.write_csv_artifact("profile.csv", out);
}

void cmd_predict(Run& run) {
  const Json& s = run.section("predict");
  const Applied a = apply_fit(run, s);
  const bool literal = run.opt.appendix_c_literal || run.get<bool>(s, "appendix_c_literal", false, "predict");
  const PredictMode mode = literal ? PredictMode::appendix_c : PredictMode::support32;
  const std::string corr = run.get<std::string>(s, "censor_correction", "marginal", "predict");
  if (corr != "marginal" && corr != "survival") fail(ErrorKind::config, "predict.censor_correction must be marginal or survival");
  const CensorCorrection how = corr == "marginal" ? CensorCorrection::marginal : CensorCorrection::survival;

  const std::vector<double> y_hat = predict_trials(a.art.params, a.fd, mode);
  CsvTable pred;
  pred.header = {"child_id", "trial_index", "y", "censored", "y_hat"};
  for (std::size_t r = 0; r < a.fd.n_rows(); ++r) {
    const TrialRecord& t = a.data.trials[a.design.trial_row[r]];
    pred.rows.push_back({t.child_id, std::to_string(t.trial_index), std::to_string(t.y), t.censored ? "1" : "0",
                         format_number(y_hat[r])});
  }
  run.write_csv_artifact("predictions.csv", pred);

  const Distribution33 predicted = aggregate_distribution(a.art.params, a.fd.x_full, mode);
  Distribution33 emp_unc{}, emp_cen{}, pred_cen{}, pred_cen_surv{};
  std::size_t n_unc = 0;
  const double n_rows = static_cast<double>(a.fd.n_rows());
  for (std::size_t r = 0; r < a.fd.n_rows(); ++r) {
    if (a.fd.censored[r]) {
      emp_cen[a.fd.y[r]] += 1.0 / n_rows;
    } else {
      emp_unc[a.fd.y[r]] += 1.0;
      ++n_unc;
    }
  }
  if (n_unc > 0) {
    for (double& v : emp_unc) v /= static_cast<double>(n_unc);
  }
  for (const GameSetting& g : all_settings()) {
    std::vector<Eigen::Index> rows;
    for (std::size_t r = 0; r < a.fd.n_rows(); ++r) {
      if (a.fd.setting[r] == g) rows.push_back(static_cast<Eigen::Index>(r));
    }
    if (rows.empty()) continue;
    const Eigen::MatrixXd x = a.fd.x_full(rows, Eigen::all);
    const Distribution33 agg = aggregate_distribution(a.art.params, x, mode);
    const Distribution33 c = censor_correct(agg, g, how);
    const Distribution33 cs = censor_correct(agg, g, CensorCorrection::survival);
    const double share = static_cast<double>(rows.size()) / n_rows;
    for (int k = 0; k < kSupport; ++k) {
      pred_cen[k] += c[k] * share;
      pred_cen_surv[k] += cs[k] * share;
    }
  }
  CsvTable dist;
  dist.header = {"card", "empirical_uncensored", "predicted", "empirical_censored", "predicted_censored",
                 "predicted_censored_survival"};
  for (int k = 0; k < kSupport; ++k) {
    dist.rows.push_back({std::to_string(k), format_number(emp_unc[k]), format_number(predicted[k]),
                         format_number(emp_cen[k]), format_number(pred_cen[k]), format_number(pred_cen_surv[k])});
  }
  run.write_csv_artifact("distribution.csv", dist);
}

void cmd_evaluate(Run& run) {
  const Json& s = run.section("evaluate");
  std::vector<double> y_hat;
  std::vector<int> y;
  std::vector<unsigned char> censored;
  if (s.contains("predictions")) {
    const CsvTable t = read_csv(run.resolve(run.get<std::string>(s, "predictions", "", "evaluate")).string());
    const int cy = t.column("y"), cc = t.column("censored"), ch = t.column("y_hat");
    if (cy < 0 || cc < 0 || ch < 0) fail(ErrorKind::data, "predictions table needs y, censored and y_hat columns");
    for (const auto& r : t.rows) {
      const auto yv = parse_double(r[cy]);
      const auto hv = parse_double(r[ch]);
      if (!yv || !hv || (r[cc] != "0" && r[cc] != "1")) fail(ErrorKind::data, "malformed row in predictions table");
      y.push_back(static_cast<int>(*yv));
      censored.push_back(r[cc] == "1" ? 1 : 0);
      y_hat.push_back(*hv);
    }
  } else {
    const Applied a = apply_fit(run, s);
    y_hat = predict_trials(a.art.params, a.fd, run.opt.appendix_c_literal ? PredictMode::appendix_c
                                                                           : PredictMode::support32);
    y = a.fd.y;
    censored = a.fd.censored;
  }
  const Evaluation ev = evaluate(y_hat, y, censored);
  CsvTable t;
  t.header = {"n_uncensored", "rmse", "mad"};
  t.rows.push_back({std::to_string(ev.n), format_number(ev.rmse), format_number(ev.mad)});
  run.write_csv_artifact("evaluation.csv", t);
}

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::config:
    case ErrorKind::invalid_parameter: return 2;
    case ErrorKind::data:
    case ErrorKind::out_of_support: return 3;
    case ErrorKind::convergence:
    case ErrorKind::numerical: return 4;
    case ErrorKind::internal: return 5;
  }
  return 5;
}

int dispatch(Options opt) {
  const auto started = std::chrono::steady_clock::now();
  Run run;
  if (!opt.config_path.empty()) {
    run.config = read_json(opt.config_path);
    if (!run.config.is_object()) fail(ErrorKind::config, "config must be a JSON object");
    run.base = fs::absolute(opt.config_path).parent_path();
  }
  if (opt.seed) run.config["seed"] = *opt.seed;
  if (!opt.segments.empty()) run.config["segments_override"] = opt.segments;
  if (opt.appendix_c_literal) run.config["appendix_c_literal"] = true;
  run.seed = run.get<std::uint64_t>(run.config, "seed", 1, "config");
  if (!opt.out.empty()) run.out = fs::path(opt.out);
  else run.out = run.resolve(run.get<std::string>(run.config, "out", "out", "config"));
  if (opt.threads < 1) fail(ErrorKind::config, "--threads must be positive");
  run.opt = opt;
  // Threads and output location do not change results, so they stay out of the hash.
  Json hashed = run.config;
  hashed.erase("out");
  hashed["command"] = opt.command;
  run.config_hash = hex(fnv1a(hashed.dump()));
  std::error_code ec;
  fs::create_directories(run.out, ec);
  if (ec) fail(ErrorKind::config, "cannot create output directory " + run.out.string());

  int code = 0;
  if (opt.command == "simulate") cmd_simulate(run);
  else if (opt.command == "fit") code = cmd_fit(run);
  else if (opt.command == "select") cmd_select(run);
  else if (opt.command == "posteriors") cmd_posteriors(run);
  else if (opt.command == "profile") cmd_profile(run);
  else if (opt.command == "predict") cmd_predict(run);
  else if (opt.command == "evaluate") cmd_evaluate(run);
  else fail(ErrorKind::config, "unknown command " + opt.command);

  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  // One entry per command, merged into any manifest already in the directory.
  const fs::path manifest_path = run.out / "run_manifest.json";
  Json manifest = Json::object();
  if (fs::exists(manifest_path)) {
    try {
      manifest = read_json(manifest_path.string());
    } catch (const Error&) {
      manifest = Json::object();
    }
    if (!manifest.is_object() || !manifest.contains("runs") || !manifest["runs"].is_object()) manifest = Json::object();
  }
  manifest["tool"] = "cmm";
  manifest["version"] = kVersion;
  Json entry = run.meta();
  entry["threads"] = opt.threads;
  entry["wall_time_seconds"] = wall;
  entry["exit_code"] = code;
  entry["artifacts"] = run.artifacts;
  manifest["runs"][opt.command] = entry;
  write_json(manifest_path.string(), manifest);
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Censored mixture model for the Columbia Card Task"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  Options opt;
  for (const char* name : {"simulate", "fit", "select", "posteriors", "profile", "predict", "evaluate"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", opt.config_path, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--seed", opt.seed, "Master seed");
    sub->add_option("--out", opt.out, "Output directory");
    sub->add_option("--threads", opt.threads, "Worker threads for likelihood evaluation");
    sub->add_option("--segments", opt.segments, "Segment count n or range a..b");
    sub->add_flag("--appendix-c-literal", opt.appendix_c_literal, "Extended-support prediction mode");
    sub->callback([&opt, name]() { opt.command = name; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  try {
    return dispatch(opt);
  } catch (const Error& e) {
    std::cerr << "cmm: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "cmm: internal error: " << e.what() << '\n';
    return 5;
  }
}
