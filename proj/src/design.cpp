#include "cmm/design.hpp"

#include <charconv>
#include <cmath>
#include <numeric>
#include <set>
#include <unordered_map>

#include "cmm/error.hpp"

namespace cmm {

int Dataset::covariate_index(const std::string& name) const {
  for (std::size_t i = 0; i < covariate_names.size(); ++i) {
    if (covariate_names[i] == name) return static_cast<int>(i);
  }
  return -1;
}

Dataset subset_children(const Dataset& data, const std::vector<std::size_t>& child_positions) {
  Dataset out;
  out.covariate_names = data.covariate_names;
  std::set<std::string> keep;
  for (std::size_t pos : child_positions) {
    out.children.push_back(data.children.at(pos));
    keep.insert(data.children[pos].child_id);
  }
  for (const auto& t : data.trials) {
    if (keep.count(t.child_id)) out.trials.push_back(t);
  }
  return out;
}

bool is_trial_column(const std::string& name) {
  return name == "gain_amount" || name == "loss_amount" || name == "n_loss_cards" ||
         name == "prev_loss" || name == "prev2_loss";
}

void CovariateSchema::validate() const {
  std::set<std::string> names;
  for (const auto& n : numeric) {
    if (n.empty()) fail(ErrorKind::config, "schema: empty numeric covariate name");
    if (!names.insert(n).second) fail(ErrorKind::config, "schema: duplicate covariate '" + n + "'");
  }
  for (const auto& c : categorical) {
    if (c.name.empty()) fail(ErrorKind::config, "schema: empty categorical covariate name");
    if (!names.insert(c.name).second) fail(ErrorKind::config, "schema: duplicate covariate '" + c.name + "'");
    if (c.levels.size() < 2) {
      fail(ErrorKind::config, "schema: categorical '" + c.name + "' needs at least two levels");
    }
    std::set<std::string> levels(c.levels.begin(), c.levels.end());
    if (levels.size() != c.levels.size()) {
      fail(ErrorKind::config, "schema: categorical '" + c.name + "' has duplicate levels");
    }
  }
  std::set<std::string> categorical_names;
  for (const auto& c : categorical) categorical_names.insert(c.name);
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& [a, b] : interactions) {
    if (!categorical_names.count(a) || !categorical_names.count(b)) {
      fail(ErrorKind::config, "schema: interaction '" + a + ":" + b + "' references an undeclared categorical");
    }
    if (a == b) fail(ErrorKind::config, "schema: interaction of '" + a + "' with itself");
    if (!seen.insert({a, b}).second) fail(ErrorKind::config, "schema: duplicate interaction '" + a + ":" + b + "'");
  }
}

CovariateSchema cct_schema() {
  CovariateSchema s;
  s.numeric = {"age", "iq"};
  s.categorical = {
      {"sex", {"boy", "girl"}},
      {"ethnicity",
       {"dutch", "asian", "african", "moroccan", "dutch_antilles", "surinamese", "turkish", "other_western"}},
      {"education", {"low", "middle", "high"}},
      {"income", {"lt2000", "2000_4000", "gt4000"}},
      {"gain_amount", {"10", "30"}},
      {"loss_amount", {"250", "750"}},
      {"n_loss_cards", {"1", "3"}},
      {"prev_loss", {"0", "1"}},
      {"prev2_loss", {"0", "1"}},
  };
  s.interactions = {{"gain_amount", "sex"}, {"loss_amount", "sex"}, {"n_loss_cards", "sex"}};
  return s;
}

int BlockMap::block_index(const std::string& name) const {
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (blocks[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

BlockMap make_block_map(const CovariateSchema& schema) {
  schema.validate();
  BlockMap bm;
  bm.n_numeric = static_cast<int>(schema.numeric.size());
  for (const auto& n : schema.numeric) {
    bm.column_names.push_back(n);
    bm.free_index.push_back(0);
  }
  int offset = bm.n_numeric;
  for (const auto& c : schema.categorical) {
    Block b;
    b.name = c.name;
    b.kind = BlockKind::categorical;
    b.offset = offset;
    b.length = static_cast<int>(c.levels.size());
    b.reference = 0;
    for (int k = 0; k < b.length; ++k) {
      bm.column_names.push_back(c.name + "=" + c.levels[k]);
      bm.free_index.push_back(k == b.reference ? -1 : 0);
    }
    offset += b.length;
    bm.blocks.push_back(b);
  }
  for (const auto& [a, b_name] : schema.interactions) {
    const int ia = bm.block_index(a);
    const int ib = bm.block_index(b_name);
    const Block& pa = bm.blocks[ia];
    const Block& pb = bm.blocks[ib];
    Block b;
    b.name = a + ":" + b_name;
    b.kind = BlockKind::interaction;
    b.offset = offset;
    b.length = pa.length * pb.length;
    b.parent_a = ia;
    b.parent_b = ib;
    const auto& la = schema.categorical[ia].levels;
    const auto& lb = schema.categorical[ib].levels;
    for (int i = 0; i < pa.length; ++i) {
      for (int j = 0; j < pb.length; ++j) {
        bm.column_names.push_back(a + "=" + la[i] + ":" + b_name + "=" + lb[j]);
        const bool structural_zero = (i == pa.reference) || (j == pb.reference);
        bm.free_index.push_back(structural_zero ? -1 : 0);
      }
    }
    offset += b.length;
    bm.blocks.push_back(b);
  }
  bm.n_columns = offset;
  int next = 0;
  for (int& fi : bm.free_index) {
    if (fi >= 0) fi = next++;
  }
  bm.n_free = next;
  return bm;
}

ZScore standardize(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n < 2) fail(ErrorKind::data, "standardize needs at least two values");
  ZScore out;
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double v : values) ss += (v - out.mean) * (v - out.mean);
  out.sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (!(out.sd > 0.0) || !std::isfinite(out.sd)) {
    fail(ErrorKind::data, "degenerate column: standard deviation is zero");
  }
  out.z.reserve(n);
  for (double v : values) out.z.push_back((v - out.mean) / out.sd);
  return out;
}

namespace {

double parse_number(const std::string& s, const std::string& column, const std::string& child) {
  if (s.empty() || s == "NA") {
    fail(ErrorKind::data, "missing value in column '" + column + "' for child " + child);
  }
  double v = 0.0;
  const char* end = s.data() + s.size();
  const char* begin = s.data() + (s.front() == '+' ? 1 : 0);
  const auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc() || res.ptr != end || !std::isfinite(v)) {
    fail(ErrorKind::data, "non-numeric value '" + s + "' in column '" + column + "' for child " + child);
  }
  return v;
}

std::string trial_value(const TrialRecord& t, const std::string& name) {
  if (name == "gain_amount") return std::to_string(t.setting.gain_amount);
  if (name == "loss_amount") return std::to_string(t.setting.loss_amount);
  if (name == "n_loss_cards") return std::to_string(t.setting.n_loss_cards);
  if (name == "prev_loss") return t.prev_loss ? "1" : "0";
  return t.prev2_loss ? "1" : "0";
}

int level_of(const Dataset& data, const ChildRecord& child, const TrialRecord& trial,
             const CategoricalSpec& spec) {
  std::string value;
  if (is_trial_column(spec.name)) {
    value = trial_value(trial, spec.name);
  } else {
    const int col = data.covariate_index(spec.name);
    if (col < 0) fail(ErrorKind::data, "missing column '" + spec.name + "'");
    value = child.values.at(col);
  }
  if (value.empty() || value == "NA") {
    fail(ErrorKind::data, "missing value in column '" + spec.name + "' for child " + child.child_id);
  }
  for (std::size_t k = 0; k < spec.levels.size(); ++k) {
    if (spec.levels[k] == value) return static_cast<int>(k);
  }
  fail(ErrorKind::data, "unknown category '" + value + "' in column '" + spec.name + "' for child " +
                            child.child_id);
}

}  // namespace

Standardization compute_standardization(const Dataset& data, const CovariateSchema& schema) {
  Standardization st;
  for (const auto& name : schema.numeric) {
    const int col = data.covariate_index(name);
    if (col < 0) fail(ErrorKind::data, "missing column '" + name + "'");
    std::vector<double> values;
    values.reserve(data.children.size());
    for (const auto& c : data.children) values.push_back(parse_number(c.values.at(col), name, c.child_id));
    const ZScore z = standardize(values);
    st.mean.push_back(z.mean);
    st.sd.push_back(z.sd);
  }
  return st;
}

void fill_design_row(const Dataset& data, const ChildRecord& child, const TrialRecord& trial,
                     const CovariateSchema& schema, const BlockMap& bm, const Standardization& stats,
                     std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  for (int j = 0; j < bm.n_numeric; ++j) {
    const std::string& name = schema.numeric[j];
    const int col = data.covariate_index(name);
    if (col < 0) fail(ErrorKind::data, "missing column '" + name + "'");
    const double v = parse_number(child.values.at(col), name, child.child_id);
    out[j] = (v - stats.mean[j]) / stats.sd[j];
  }
  std::vector<int> level(schema.categorical.size());
  for (std::size_t b = 0; b < schema.categorical.size(); ++b) {
    level[b] = level_of(data, child, trial, schema.categorical[b]);
    out[bm.blocks[b].offset + level[b]] = 1.0;
  }
  for (std::size_t b = schema.categorical.size(); b < bm.blocks.size(); ++b) {
    const Block& blk = bm.blocks[b];
    const int kb = bm.blocks[blk.parent_b].length;
    out[blk.offset + level[blk.parent_a] * kb + level[blk.parent_b]] = 1.0;
  }
}

DesignMatrix build_design(const Dataset& data, const CovariateSchema& schema, const Standardization* frozen) {
  DesignMatrix dm;
  dm.blocks = make_block_map(schema);
  dm.stats = frozen ? *frozen : compute_standardization(data, schema);
  if (dm.stats.mean.size() != schema.numeric.size()) {
    fail(ErrorKind::config, "standardization does not match the numeric covariates");
  }

  std::unordered_map<std::string, std::size_t> child_pos;
  for (std::size_t i = 0; i < data.children.size(); ++i) {
    if (!child_pos.emplace(data.children[i].child_id, i).second) {
      fail(ErrorKind::data, "duplicate child id " + data.children[i].child_id);
    }
  }
  std::vector<std::vector<std::size_t>> by_child(data.children.size());
  for (std::size_t t = 0; t < data.trials.size(); ++t) {
    auto it = child_pos.find(data.trials[t].child_id);
    if (it == child_pos.end()) fail(ErrorKind::data, "trial for unknown child " + data.trials[t].child_id);
    by_child[it->second].push_back(t);
  }
  for (auto& rows : by_child) {
    std::stable_sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
      return data.trials[a].trial_index < data.trials[b].trial_index;
    });
  }

  dm.x.resize(static_cast<Eigen::Index>(data.trials.size()), dm.blocks.n_columns);
  dm.child_begin.push_back(0);
  std::vector<double> row(dm.blocks.n_columns);
  std::size_t r = 0;
  for (std::size_t i = 0; i < data.children.size(); ++i) {
    if (by_child[i].empty()) fail(ErrorKind::data, "child " + data.children[i].child_id + " has no trials");
    for (std::size_t t : by_child[i]) {
      fill_design_row(data, data.children[i], data.trials[t], schema, dm.blocks, dm.stats, row);
      for (int c = 0; c < dm.blocks.n_columns; ++c) dm.x(static_cast<Eigen::Index>(r), c) = row[c];
      dm.trial_row.push_back(t);
      ++r;
    }
    dm.child_begin.push_back(r);
  }
  return dm;
}

Eigen::MatrixXd DesignMatrix::free_columns() const {
  Eigen::MatrixXd out(x.rows(), blocks.n_free);
  for (int c = 0; c < blocks.n_columns; ++c) {
    if (blocks.free_index[c] >= 0) out.col(blocks.free_index[c]) = x.col(c);
  }
  return out;
}

void center_blocks(Eigen::VectorXd& alpha, Eigen::VectorXd& beta, const BlockMap& bm) {
  if (beta.size() != bm.n_columns) fail(ErrorKind::invalid_parameter, "beta length does not match the design");
  // Interactions first: their margins feed the parent blocks.
  for (const Block& blk : bm.blocks) {
    if (blk.kind != BlockKind::interaction) continue;
    const Block& pa = bm.blocks[blk.parent_a];
    const Block& pb = bm.blocks[blk.parent_b];
    const int ka = pa.length, kb = pb.length;
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> cell(
        beta.data() + blk.offset, ka, kb);
    const double grand = cell.mean();
    const Eigen::VectorXd row_mean = cell.rowwise().mean();
    const Eigen::VectorXd col_mean = cell.colwise().mean().transpose();
    for (int i = 0; i < ka; ++i) {
      for (int j = 0; j < kb; ++j) cell(i, j) += grand - row_mean(i) - col_mean(j);
    }
    for (int i = 0; i < ka; ++i) beta(pa.offset + i) += row_mean(i) - grand;
    for (int j = 0; j < kb; ++j) beta(pb.offset + j) += col_mean(j) - grand;
    alpha.array() += grand;
  }
  for (const Block& blk : bm.blocks) {
    if (blk.kind != BlockKind::categorical) continue;
    const double m = beta.segment(blk.offset, blk.length).mean();
    beta.segment(blk.offset, blk.length).array() -= m;
    alpha.array() += m;
  }
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> sum_zero_expand(const Eigen::VectorXd& gamma_u,
                                                            const BlockMap& bm, int segments) {
  if (gamma_u.size() != segments + bm.n_free) {
    fail(ErrorKind::invalid_parameter, "free coefficient vector has the wrong length");
  }
  Eigen::VectorXd alpha = gamma_u.head(segments);
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(bm.n_columns);
  for (int c = 0; c < bm.n_columns; ++c) {
    if (bm.free_index[c] >= 0) beta(c) = gamma_u(segments + bm.free_index[c]);
  }
  center_blocks(alpha, beta, bm);
  return {alpha, beta};
}

Eigen::MatrixXd expansion_matrix(const BlockMap& bm, int segments) {
  const int n_in = segments + bm.n_free;
  Eigen::MatrixXd a(segments + bm.n_columns, n_in);
  Eigen::VectorXd unit = Eigen::VectorXd::Zero(n_in);
  for (int j = 0; j < n_in; ++j) {
    unit.setZero();
    unit(j) = 1.0;
    auto [alpha, beta] = sum_zero_expand(unit, bm, segments);
    a.col(j).head(segments) = alpha;
    a.col(j).tail(bm.n_columns) = beta;
  }
  return a;
}

}  // namespace cmm
