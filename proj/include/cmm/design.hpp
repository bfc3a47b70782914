#pragma once

// Design-matrix construction: z-scored numeric covariates, full dummy coding
// of categorical blocks, double-centred interaction blocks, and the map from
// reference-coded free coefficients to sum-zero coefficients.

#include <Eigen/Dense>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cmm/data.hpp"

namespace cmm {

struct CategoricalSpec {
  std::string name;
  std::vector<std::string> levels;  // first level is the reference
};

/// Covariates entering the linear predictor. Categorical names refer either
/// to a child-level column or to one of the trial columns gain_amount,
/// loss_amount, n_loss_cards, prev_loss, prev2_loss.
struct CovariateSchema {
  std::vector<std::string> numeric;
  std::vector<CategoricalSpec> categorical;
  std::vector<std::pair<std::string, std::string>> interactions;

  void validate() const;
};

/// Schema used for the CCT study: age and IQ, sex, maternal ethnicity,
/// education, household income, the game settings, previous-loss indicators
/// and the sex-by-setting interactions.
CovariateSchema cct_schema();

bool is_trial_column(const std::string& name);

enum class BlockKind { categorical, interaction };

struct Block {
  std::string name;
  BlockKind kind = BlockKind::categorical;
  int offset = 0;
  int length = 0;
  int reference = 0;  // level index; interactions use (parent refs)
  int parent_a = -1;  // interaction parents, indices into BlockMap::blocks
  int parent_b = -1;
};

struct BlockMap {
  int n_numeric = 0;
  int n_columns = 0;
  int n_free = 0;
  std::vector<Block> blocks;
  std::vector<int> free_index;  // per column; -1 for structurally zero entries
  std::vector<std::string> column_names;

  int block_index(const std::string& name) const;
};

BlockMap make_block_map(const CovariateSchema& schema);

struct ZScore {
  std::vector<double> z;
  double mean = 0.0;
  double sd = 1.0;
};

/// z-scores with the sample (n - 1) standard deviation.
ZScore standardize(std::span<const double> values);

/// Frozen per-numeric-covariate statistics, reused for test data.
struct Standardization {
  std::vector<double> mean;
  std::vector<double> sd;
};

struct DesignMatrix {
  BlockMap blocks;
  Standardization stats;
  Eigen::MatrixXd x;                    // rows x n_columns, full dummy coding
  std::vector<std::size_t> child_begin; // row range of child i: [child_begin[i], child_begin[i+1])
  std::vector<std::size_t> trial_row;   // index into Dataset::trials for each row

  std::size_t n_rows() const { return static_cast<std::size_t>(x.rows()); }
  std::size_t n_children() const { return child_begin.empty() ? 0 : child_begin.size() - 1; }

  /// Columns that carry free coefficients (reference entries dropped).
  Eigen::MatrixXd free_columns() const;
};

/// Computes the statistics from the children when `frozen` is null.
DesignMatrix build_design(const Dataset& data, const CovariateSchema& schema,
                          const Standardization* frozen = nullptr);

Standardization compute_standardization(const Dataset& data, const CovariateSchema& schema);

/// Fills one design row for a child and a trial.
void fill_design_row(const Dataset& data, const ChildRecord& child, const TrialRecord& trial,
                     const CovariateSchema& schema, const BlockMap& bm, const Standardization& stats,
                     std::span<double> out);

/// Re-centres every categorical block to sum zero, moving the block means into
/// all intercepts. Interaction blocks are double-centred first, their row and
/// column means passed on to the parent blocks.
void center_blocks(Eigen::VectorXd& alpha, Eigen::VectorXd& beta, const BlockMap& bm);

/// gamma_u = (alpha_u [S], beta_u [n_free]) -> (alpha [S], beta [n_columns]).
std::pair<Eigen::VectorXd, Eigen::VectorXd> sum_zero_expand(const Eigen::VectorXd& gamma_u,
                                                            const BlockMap& bm, int segments);

/// The linear map of sum_zero_expand as a matrix, (S + n_columns) x (S + n_free).
Eigen::MatrixXd expansion_matrix(const BlockMap& bm, int segments);

}  // namespace cmm
