#pragma once

#include <string>
#include <vector>

#include "cmm/cct.hpp"

namespace cmm {

struct ChildRecord {
  std::string child_id;
  int segment_true = 0;             // 1-based; 0 when unknown
  std::vector<std::string> values;  // aligned with Dataset::covariate_names
};

struct TrialRecord {
  std::string child_id;
  int trial_index = 1;  // 1-based within child
  GameSetting setting;
  bool prev_loss = false;
  bool prev2_loss = false;
  int y = 0;
  bool censored = false;
  int score = 0;
  int z_true = -1;  // -1 when unknown
};

struct Dataset {
  std::vector<std::string> covariate_names;
  std::vector<ChildRecord> children;
  std::vector<TrialRecord> trials;

  int covariate_index(const std::string& name) const;  // -1 if absent
};

/// Children at the given positions together with their trials.
Dataset subset_children(const Dataset& data, const std::vector<std::size_t>& child_positions);

}  // namespace cmm
