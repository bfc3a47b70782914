#pragma once

// Columbia Card Task mechanics: censoring probabilities, the game-mechanics
// probability table, round simulation and risk-neutral play.

#include <array>
#include <cstdint>
#include <random>
#include <span>

#include "cmm/dist.hpp"

namespace cmm {

using Rng = std::mt19937_64;

/// One of the eight experimental conditions shown to the participant.
struct GameSetting {
  int gain_amount = 10;   // 10 or 30
  int loss_amount = 250;  // 250 or 750
  int n_loss_cards = 1;   // 1 or 3

  void validate() const;
  friend bool operator==(const GameSetting&, const GameSetting&) = default;
};

/// The eight settings in a fixed order (gain, then loss amount, then loss cards).
const std::array<GameSetting, 8>& all_settings();

struct TrialOutcome {
  int y = 0;          // cards turned over, including the loss card when censored
  bool censored = false;
  int score = 0;
  int z_true = 0;     // intended cards (simulation ground truth)
};

/// Pr(card k is a loss card | cards 1..k-1 were not).
double conditional_censor_prob(int k, const GameSetting& s);

/// Pr(the first loss card sits at position k), unconditionally.
double marginal_censor_prob(int k, const GameSetting& s);

/// Pr(Y = y, C = censored | Z = z) from the game mechanics alone.
double omega(int y, bool censored, int z, const GameSetting& s);

/// Plays a round with known loss-card positions (1-based).
TrialOutcome play_round(int z_intended, const GameSetting& s, std::span<const int> loss_positions);

/// Places the loss cards uniformly without replacement and plays the round.
TrialOutcome simulate_trial(int z_intended, const GameSetting& s, Rng& rng);

/// Expected round score when the participant intends to turn `z` cards.
double expected_round_score(int z, const GameSetting& s);

/// argmax_z expected_round_score, ties to the smaller z.
int risk_neutral_optimum(const GameSetting& s);

/// Inverse-cdf draw from a table on {0..32}.
int sample_outcome(const OutcomeTable& pmf, Rng& rng);

/// Gamma-Poisson draw from an untruncated negative binomial.
int sample_negbin(const NegBinParams& p, Rng& rng);

/// Independent stream for unit `index` derived from a master seed.
Rng derive_stream(std::uint64_t master_seed, std::uint64_t index);

}  // namespace cmm
