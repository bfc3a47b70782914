#pragma once

// CSV tables and JSON documents.

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmm/data.hpp"
#include "cmm/design.hpp"
#include "cmm/estimate.hpp"
#include "cmm/inference.hpp"
#include "cmm/params.hpp"

namespace cmm {

using Json = nlohmann::ordered_json;

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;  // -1 if absent
};

/// Comma-separated with a header row; double quotes may enclose fields.
CsvTable parse_csv(std::istream& in, const std::string& source);
CsvTable read_csv(const std::string& path);
void write_csv(std::ostream& out, const CsvTable& table);
void write_csv(const std::string& path, const CsvTable& table);

/// children.csv: child_id, segment_true, one column per covariate.
std::vector<ChildRecord> children_from_csv(const CsvTable& t, std::vector<std::string>& covariate_names);
CsvTable children_to_csv(const Dataset& data);

/// trials.csv: child_id, trial_index, gain_amount, loss_amount, n_loss_cards,
/// prev_loss, prev2_loss, y, censored, score, z_true.
std::vector<TrialRecord> trials_from_csv(const CsvTable& t);
CsvTable trials_to_csv(const Dataset& data);

Dataset load_dataset(const std::string& children_path, const std::string& trials_path);
void save_dataset(const Dataset& data, const std::string& children_path, const std::string& trials_path);

Json schema_to_json(const CovariateSchema& schema);
CovariateSchema schema_from_json(const Json& j);

Json standardization_to_json(const Standardization& s, const CovariateSchema& schema);
Standardization standardization_from_json(const Json& j);

Json block_map_to_json(const BlockMap& bm);

/// alpha, beta, delta, phi, pi, block_map, covariate_names.
Json params_to_json(const ModelParams& p, const BlockMap& bm);
/// Checks the column names against `bm` when the document carries them.
ModelParams params_from_json(const Json& j, const BlockMap& bm);

/// Fit document: estimates, standard errors, diagnostics and what is needed
/// to apply the fit to new data.
Json fit_to_json(const FitResult& fit, const CovariateSchema& schema, const Standardization& stats);

struct FitArtifact {
  CovariateSchema schema;
  Standardization stats;
  ParamLayout layout;
  ModelParams params;
};
FitArtifact fit_artifact_from_json(const Json& j);

Json selection_to_json(const SelectionReport& rep);

Json read_json(const std::string& path);
void write_json(const std::string& path, const Json& j);

}  // namespace cmm
