#include "cmm/io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "cmm/error.hpp"
#include "cmm/format.hpp"

namespace cmm {

namespace {

const std::vector<std::string> kTrialColumns{"child_id", "trial_index", "gain_amount", "loss_amount",
                                             "n_loss_cards", "prev_loss", "prev2_loss", "y",
                                             "censored", "score", "z_true"};

bool needs_quotes(const std::string& s) {
  return s.find_first_of(",\"\n\r") != std::string::npos;
}

std::string quote(const std::string& s) {
  if (!needs_quotes(s)) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

long long parse_int(const std::string& s, const std::string& what) {
  long long v = 0;
  const char* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, v);
  if (s.empty() || res.ec != std::errc() || res.ptr != end) {
    fail(ErrorKind::data, "expected an integer for " + what + ", got '" + s + "'");
  }
  return v;
}

bool parse_flag(const std::string& s, const std::string& what) {
  if (s == "0") return false;
  if (s == "1") return true;
  fail(ErrorKind::data, "expected 0 or 1 for " + what + ", got '" + s + "'");
}

Json vec_json(const Eigen::VectorXd& v) {
  Json a = Json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) a.push_back(v(k));
  return a;
}

Eigen::VectorXd vec_from_json(const Json& j, const std::string& what) {
  if (!j.is_array()) fail(ErrorKind::config, "'" + what + "' must be an array of numbers");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) {
    if (!j[k].is_number()) fail(ErrorKind::config, "'" + what + "' must be an array of numbers");
    v(static_cast<Eigen::Index>(k)) = j[k].get<double>();
  }
  return v;
}

const Json& require(const Json& j, const std::string& key) {
  if (!j.is_object() || !j.contains(key)) fail(ErrorKind::config, "missing field '" + key + "'");
  return j.at(key);
}

template <class T>
T get_as(const Json& j, const std::string& key) {
  try {
    return require(j, key).get<T>();
  } catch (const nlohmann::json::exception&) {
    fail(ErrorKind::config, "field '" + key + "' has the wrong type");
  }
}

}  // namespace

int CsvTable::column(const std::string& name) const {
  for (std::size_t k = 0; k < header.size(); ++k) {
    if (header[k] == name) return static_cast<int>(k);
  }
  return -1;
}

CsvTable parse_csv(std::istream& in, const std::string& source) {
  CsvTable t;
  std::vector<std::string> record;
  std::string field;
  bool in_quotes = false, field_started = false;
  std::size_t line = 1;
  auto end_record = [&]() {
    record.push_back(std::move(field));
    field.clear();
    field_started = false;
    const bool blank = record.size() == 1 && record[0].empty();
    if (!blank) {
      if (t.header.empty()) {
        t.header = std::move(record);
      } else {
        if (record.size() != t.header.size()) {
          fail(ErrorKind::data, source + ": line " + std::to_string(line) + " has " + std::to_string(record.size()) +
                                    " fields, expected " + std::to_string(t.header.size()));
        }
        t.rows.push_back(std::move(record));
      }
    }
    record.clear();
  };
  char c;
  while (in.get(c)) {
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field += '"';
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
      continue;
    }
    if (c == '"' && !field_started) {
      in_quotes = true;
      field_started = true;
    } else if (c == ',') {
      record.push_back(std::move(field));
      field.clear();
      field_started = false;
    } else if (c == '\n') {
      end_record();
      ++line;
    } else if (c != '\r') {
      field += c;
      field_started = true;
    }
  }
  if (in_quotes) fail(ErrorKind::data, source + ": unterminated quoted field");
  if (!field.empty() || !record.empty()) end_record();
  if (t.header.empty()) fail(ErrorKind::data, source + ": missing header row");
  if (!t.header.empty() && t.header[0].rfind("\xEF\xBB\xBF", 0) == 0) t.header[0].erase(0, 3);
  return t;
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::data, "cannot open " + path);
  return parse_csv(in, path);
}

void write_csv(std::ostream& out, const CsvTable& table) {
  auto line = [&](const std::vector<std::string>& r) {
    for (std::size_t k = 0; k < r.size(); ++k) {
      if (k) out << ',';
      out << quote(r[k]);
    }
    out << '\n';
  };
  line(table.header);
  for (const auto& r : table.rows) line(r);
}

void write_csv(const std::string& path, const CsvTable& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::config, "cannot write " + path);
  write_csv(out, table);
  if (!out) fail(ErrorKind::config, "failed writing " + path);
}

std::vector<ChildRecord> children_from_csv(const CsvTable& t, std::vector<std::string>& covariate_names) {
  const int id_col = t.column("child_id");
  if (id_col < 0) fail(ErrorKind::data, "children table lacks the 'child_id' column");
  const int seg_col = t.column("segment_true");
  std::vector<int> cov_cols;
  covariate_names.clear();
  for (std::size_t k = 0; k < t.header.size(); ++k) {
    if (static_cast<int>(k) == id_col || static_cast<int>(k) == seg_col) continue;
    cov_cols.push_back(static_cast<int>(k));
    covariate_names.push_back(t.header[k]);
  }
  std::vector<ChildRecord> out;
  for (const auto& r : t.rows) {
    ChildRecord c;
    c.child_id = r[id_col];
    if (c.child_id.empty()) fail(ErrorKind::data, "empty child_id in children table");
    if (seg_col >= 0 && !r[seg_col].empty() && r[seg_col] != "NA") {
      c.segment_true = static_cast<int>(parse_int(r[seg_col], "segment_true of child " + c.child_id));
    }
    for (int k : cov_cols) c.values.push_back(r[k]);
    out.push_back(std::move(c));
  }
  return out;
}

CsvTable children_to_csv(const Dataset& data) {
  CsvTable t;
  t.header = {"child_id", "segment_true"};
  t.header.insert(t.header.end(), data.covariate_names.begin(), data.covariate_names.end());
  for (const auto& c : data.children) {
    std::vector<std::string> r{c.child_id, std::to_string(c.segment_true)};
    r.insert(r.end(), c.values.begin(), c.values.end());
    t.rows.push_back(std::move(r));
  }
  return t;
}

std::vector<TrialRecord> trials_from_csv(const CsvTable& t) {
  std::vector<int> col;
  for (const auto& name : kTrialColumns) {
    const int k = t.column(name);
    if (k < 0 && name != "z_true" && name != "score") {
      fail(ErrorKind::data, "trials table lacks the '" + name + "' column");
    }
    col.push_back(k);
  }
  std::vector<TrialRecord> out;
  for (const auto& r : t.rows) {
    TrialRecord tr;
    tr.child_id = r[col[0]];
    const std::string where = " (child " + tr.child_id + ", trial " + r[col[1]] + ")";
    tr.trial_index = static_cast<int>(parse_int(r[col[1]], "trial_index" + where));
    tr.setting.gain_amount = static_cast<int>(parse_int(r[col[2]], "gain_amount" + where));
    tr.setting.loss_amount = static_cast<int>(parse_int(r[col[3]], "loss_amount" + where));
    tr.setting.n_loss_cards = static_cast<int>(parse_int(r[col[4]], "n_loss_cards" + where));
    try {
      tr.setting.validate();
    } catch (const Error& e) {
      fail(ErrorKind::data, std::string(e.what()) + where);
    }
    tr.prev_loss = parse_flag(r[col[5]], "prev_loss" + where);
    tr.prev2_loss = parse_flag(r[col[6]], "prev2_loss" + where);
    tr.y = static_cast<int>(parse_int(r[col[7]], "y" + where));
    tr.censored = parse_flag(r[col[8]], "censored" + where);
    if (col[9] >= 0 && !r[col[9]].empty() && r[col[9]] != "NA") {
      tr.score = static_cast<int>(parse_int(r[col[9]], "score" + where));
    }
    if (col[10] >= 0 && !r[col[10]].empty() && r[col[10]] != "NA") {
      tr.z_true = static_cast<int>(parse_int(r[col[10]], "z_true" + where));
    }
    if (tr.y < 0 || tr.y > kCards) fail(ErrorKind::data, "y outside 0..32" + where);
    if (tr.censored && (tr.y < 1 || tr.y > kSupport - tr.setting.n_loss_cards)) {
      fail(ErrorKind::data, "censored trial at an impossible card" + where);
    }
    out.push_back(tr);
  }
  return out;
}

CsvTable trials_to_csv(const Dataset& data) {
  CsvTable t;
  t.header = kTrialColumns;
  for (const auto& tr : data.trials) {
    t.rows.push_back({tr.child_id, std::to_string(tr.trial_index), std::to_string(tr.setting.gain_amount),
                      std::to_string(tr.setting.loss_amount), std::to_string(tr.setting.n_loss_cards),
                      tr.prev_loss ? "1" : "0", tr.prev2_loss ? "1" : "0", std::to_string(tr.y),
                      tr.censored ? "1" : "0", std::to_string(tr.score),
                      tr.z_true >= 0 ? std::to_string(tr.z_true) : "NA"});
  }
  return t;
}

Dataset load_dataset(const std::string& children_path, const std::string& trials_path) {
  Dataset d;
  d.children = children_from_csv(read_csv(children_path), d.covariate_names);
  d.trials = trials_from_csv(read_csv(trials_path));
  return d;
}

void save_dataset(const Dataset& data, const std::string& children_path, const std::string& trials_path) {
  write_csv(children_path, children_to_csv(data));
  write_csv(trials_path, trials_to_csv(data));
}

Json schema_to_json(const CovariateSchema& schema) {
  Json j;
  j["numeric"] = schema.numeric;
  Json cats = Json::array();
  for (const auto& c : schema.categorical) cats.push_back({{"name", c.name}, {"levels", c.levels}});
  j["categorical"] = cats;
  Json inter = Json::array();
  for (const auto& [a, b] : schema.interactions) inter.push_back(Json::array({a, b}));
  j["interactions"] = inter;
  return j;
}

CovariateSchema schema_from_json(const Json& j) {
  CovariateSchema s;
  try {
    if (j.contains("numeric")) s.numeric = j.at("numeric").get<std::vector<std::string>>();
    if (j.contains("categorical")) {
      for (const auto& c : j.at("categorical")) {
        s.categorical.push_back({get_as<std::string>(c, "name"), get_as<std::vector<std::string>>(c, "levels")});
      }
    }
    if (j.contains("interactions")) {
      for (const auto& p : j.at("interactions")) {
        const auto pair = p.get<std::vector<std::string>>();
        if (pair.size() != 2) fail(ErrorKind::config, "schema.interactions entries must name two blocks");
        s.interactions.emplace_back(pair[0], pair[1]);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, std::string("schema: ") + e.what());
  }
  s.validate();
  return s;
}

Json standardization_to_json(const Standardization& s, const CovariateSchema& schema) {
  Json j;
  j["columns"] = schema.numeric;
  j["mean"] = s.mean;
  j["sd"] = s.sd;
  return j;
}

Standardization standardization_from_json(const Json& j) {
  Standardization s;
  s.mean = get_as<std::vector<double>>(j, "mean");
  s.sd = get_as<std::vector<double>>(j, "sd");
  if (s.mean.size() != s.sd.size()) fail(ErrorKind::config, "standardization mean and sd lengths differ");
  return s;
}

Json block_map_to_json(const BlockMap& bm) {
  Json blocks = Json::array();
  for (const auto& b : bm.blocks) {
    Json e{{"name", b.name},
           {"kind", b.kind == BlockKind::categorical ? "categorical" : "interaction"},
           {"offset", b.offset},
           {"length", b.length},
           {"reference", b.reference}};
    blocks.push_back(e);
  }
  return Json{{"n_numeric", bm.n_numeric}, {"n_columns", bm.n_columns}, {"n_free", bm.n_free}, {"blocks", blocks}};
}

Json params_to_json(const ModelParams& p, const BlockMap& bm) {
  Json j;
  j["alpha"] = vec_json(p.alpha);
  j["beta"] = vec_json(p.beta);
  j["delta"] = p.delta;
  j["phi"] = p.phi.phi;
  j["pi"] = vec_json(p.pi);
  j["block_map"] = block_map_to_json(bm);
  j["covariate_names"] = bm.column_names;
  return j;
}

ModelParams params_from_json(const Json& j, const BlockMap& bm) {
  ModelParams p;
  p.alpha = vec_from_json(require(j, "alpha"), "alpha");
  p.beta = vec_from_json(require(j, "beta"), "beta");
  p.delta = get_as<double>(j, "delta");
  const Eigen::VectorXd phi = vec_from_json(require(j, "phi"), "phi");
  if (phi.size() != 4) fail(ErrorKind::config, "'phi' must have four entries");
  for (int m = 0; m < 4; ++m) p.phi.phi[m] = phi(m);
  p.pi = vec_from_json(require(j, "pi"), "pi");
  if (j.contains("covariate_names")) {
    const auto names = get_as<std::vector<std::string>>(j, "covariate_names");
    if (names != bm.column_names) fail(ErrorKind::config, "parameter columns do not match the schema");
  }
  try {
    p.validate(bm);
  } catch (const Error& e) {
    fail(ErrorKind::config, std::string("parameters: ") + e.what());
  }
  return p;
}

Json fit_to_json(const FitResult& fit, const CovariateSchema& schema, const Standardization& stats) {
  const ParamLayout& L = fit.layout;
  Json j;
  j["segments"] = L.segments;
  j["converged"] = fit.converged;
  j["optimizer_stop"] = fit.optimizer_stop;
  j["iterations"] = fit.iterations;
  j["evaluations"] = fit.evaluations;
  j["loglik"] = fit.loglik;
  j["bic"] = fit.bic;
  j["n_params"] = fit.n_params;
  j["n_children"] = fit.n_children;
  j["n_rows"] = fit.n_rows;
  j["gradient_norm"] = fit.gradient_norm;
  j["hessian_condition"] = fit.hessian_condition;
  j["hessian_singular"] = fit.hessian_singular;
  j["polish_accepted"] = fit.polish_accepted;
  j["warm_started"] = fit.warm_started;
  j["se_input_symmetrized"] = fit.se_input_symmetrized;
  j["degenerate_segments"] = fit.degenerate_segments;
  j["floored_terms"] = fit.floored_terms;
  j["trustworthy"] = fit.floored_terms == 0;
  j["params"] = params_to_json(fit.params, L.blocks);
  if (fit.se.size() == L.n_theta()) {
    const Eigen::VectorXd& se = fit.se;
    Json s;
    s["alpha"] = vec_json(se.segment(L.theta_alpha(), L.segments));
    s["beta"] = vec_json(se.segment(L.theta_beta(), L.blocks.n_columns));
    s["delta"] = se(L.theta_delta());
    s["phi"] = vec_json(se.segment(L.theta_phi(), 4));
    s["pi"] = vec_json(se.segment(L.theta_pi(), L.segments));
    j["se"] = s;
  } else {
    j["se"] = nullptr;
  }
  j["free"] = {{"gamma_u", vec_json(fit.free.gamma_u)},
               {"log_delta", fit.free.log_delta},
               {"tau", fit.free.tau},
               {"sigma", vec_json(fit.free.sigma)}};
  j["schema"] = schema_to_json(schema);
  j["standardization"] = standardization_to_json(stats, schema);
  const FitConfig& c = fit.config;
  j["config"] = {{"segments", c.segments},
                 {"reltol", c.reltol},
                 {"max_iters", c.max_iters},
                 {"warm_start_n", c.warm_start_n},
                 {"seed", c.seed},
                 {"grad_tol", c.grad_tol},
                 {"hessian_rel_step", c.hessian_rel_step},
                 {"hessian_abs_step", c.hessian_abs_step},
                 {"phi_floor", c.phi_floor},
                 {"compute_se", c.compute_se}};
  return j;
}

FitArtifact fit_artifact_from_json(const Json& j) {
  FitArtifact a;
  a.schema = schema_from_json(require(j, "schema"));
  a.stats = standardization_from_json(require(j, "standardization"));
  if (a.stats.mean.size() != a.schema.numeric.size()) {
    fail(ErrorKind::config, "standardization does not match the schema");
  }
  a.layout.blocks = make_block_map(a.schema);
  a.params = params_from_json(require(j, "params"), a.layout.blocks);
  a.layout.segments = a.params.segments();
  return a;
}

Json selection_to_json(const SelectionReport& rep) {
  Json entries = Json::array();
  for (const auto& e : rep.entries) {
    Json gap = std::isnan(e.min_alpha_gap_se) ? Json(nullptr)
               : std::isinf(e.min_alpha_gap_se) ? Json("inf")
                                                : Json(e.min_alpha_gap_se);
    entries.push_back({{"segments", e.segments},
                       {"loglik", e.loglik},
                       {"bic", e.bic},
                       {"n_params", e.n_params},
                       {"converged", e.converged},
                       {"min_share", e.min_share},
                       {"min_alpha_gap_se", gap},
                       {"bic_improves", e.bic_improves},
                       {"passes_share", e.passes_share},
                       {"passes_gap", e.passes_gap},
                       {"degenerate", e.degenerate}});
  }
  return Json{{"min_share", rep.min_share},
              {"min_alpha_gap_se", rep.min_alpha_gap_se},
              {"entries", entries},
              {"recommended", rep.recommended},
              {"override_used", rep.override_used}};
}

Json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::config, "cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, path + ": " + e.what());
  }
}

void write_json(const std::string& path, const Json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::config, "cannot write " + path);
  out << j.dump(2) << '\n';
  if (!out) fail(ErrorKind::config, "failed writing " + path);
}

}  // namespace cmm
