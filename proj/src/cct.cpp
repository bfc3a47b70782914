#include "cmm/cct.hpp"

#include <algorithm>
#include <string>

#include "cmm/error.hpp"

namespace cmm {

void GameSetting::validate() const {
  if (gain_amount != 10 && gain_amount != 30) {
    fail(ErrorKind::invalid_parameter, "gain amount must be 10 or 30, got " + std::to_string(gain_amount));
  }
  if (loss_amount != 250 && loss_amount != 750) {
    fail(ErrorKind::invalid_parameter, "loss amount must be 250 or 750, got " + std::to_string(loss_amount));
  }
  if (n_loss_cards != 1 && n_loss_cards != 3) {
    fail(ErrorKind::invalid_parameter, "number of loss cards must be 1 or 3, got " + std::to_string(n_loss_cards));
  }
}

const std::array<GameSetting, 8>& all_settings() {
  static const std::array<GameSetting, 8> settings = [] {
    std::array<GameSetting, 8> out{};
    int i = 0;
    for (int gain : {10, 30}) {
      for (int loss : {250, 750}) {
        for (int cards : {1, 3}) out[i++] = GameSetting{gain, loss, cards};
      }
    }
    return out;
  }();
  return settings;
}

double conditional_censor_prob(int k, const GameSetting& s) {
  s.validate();
  if (k < 1 || k > kCards + 1 - s.n_loss_cards) {
    fail(ErrorKind::out_of_support, "card index " + std::to_string(k) + " out of range for " +
                                        std::to_string(s.n_loss_cards) + " loss card(s)");
  }
  return static_cast<double>(s.n_loss_cards) / static_cast<double>(kCards + 1 - k);
}

double marginal_censor_prob(int k, const GameSetting& s) {
  s.validate();
  if (k < 1 || k > kCards) {
    fail(ErrorKind::out_of_support, "card index " + std::to_string(k) + " outside 1..32");
  }
  if (s.n_loss_cards == 1) return 1.0 / kCards;
  // C(32-k, 2) / C(32, 3): the other two loss cards lie behind position k.
  const double num = 3.0 * (kCards - k) * (kCards - 1 - k);
  return std::max(0.0, num / (32.0 * 31.0 * 30.0));
}

double omega(int y, bool censored, int z, const GameSetting& s) {
  s.validate();
  if (y < 0 || y > kCards || z < 0 || z > kCards) {
    fail(ErrorKind::out_of_support, "omega arguments outside {0..32}");
  }
  const int last_card = kCards + 1 - s.n_loss_cards;
  if (censored) {
    if (y < 1 || z < y || y > last_card) return 0.0;
    double prob = conditional_censor_prob(y, s);
    for (int j = 1; j < y; ++j) prob *= 1.0 - conditional_censor_prob(j, s);
    return prob;
  }
  if (z != y) return 0.0;
  double prob = 1.0;
  for (int j = 1; j <= y; ++j) {
    if (j > last_card) return 0.0;
    prob *= 1.0 - conditional_censor_prob(j, s);
  }
  return prob;
}

TrialOutcome play_round(int z_intended, const GameSetting& s, std::span<const int> loss_positions) {
  s.validate();
  if (z_intended < 0 || z_intended > kCards) {
    fail(ErrorKind::out_of_support, "intended cards outside {0..32}");
  }
  int first_loss = kCards + 1;
  for (int pos : loss_positions) first_loss = std::min(first_loss, pos);

  TrialOutcome out;
  out.z_true = z_intended;
  if (first_loss <= z_intended) {
    out.y = first_loss;
    out.censored = true;
    out.score = s.gain_amount * (first_loss - 1) - s.loss_amount;
  } else {
    out.y = z_intended;
    out.censored = false;
    out.score = s.gain_amount * z_intended;
  }
  return out;
}

TrialOutcome simulate_trial(int z_intended, const GameSetting& s, Rng& rng) {
  s.validate();
  // Partial Fisher-Yates over positions 1..32.
  std::array<int, kCards> deck{};
  for (int i = 0; i < kCards; ++i) deck[i] = i + 1;
  for (int i = 0; i < s.n_loss_cards; ++i) {
    std::uniform_int_distribution<int> pick(i, kCards - 1);
    std::swap(deck[i], deck[pick(rng)]);
  }
  return play_round(z_intended, s, std::span<const int>(deck.data(), s.n_loss_cards));
}

double expected_round_score(int z, const GameSetting& s) {
  s.validate();
  if (z < 0 || z > kCards) fail(ErrorKind::out_of_support, "intended cards outside {0..32}");
  double expected = 0.0;
  double survive = 1.0;
  for (int k = 1; k <= z; ++k) {
    const double hit = marginal_censor_prob(k, s);
    expected += hit * (s.gain_amount * (k - 1) - s.loss_amount);
    survive -= hit;
  }
  return expected + survive * s.gain_amount * z;
}

int risk_neutral_optimum(const GameSetting& s) {
  int best = 0;
  double best_value = expected_round_score(0, s);
  for (int z = 1; z <= kCards; ++z) {
    const double v = expected_round_score(z, s);
    if (v > best_value + 1e-12) {
      best = z;
      best_value = v;
    }
  }
  return best;
}

int sample_outcome(const OutcomeTable& pmf, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u = unif(rng);
  double acc = 0.0;
  for (int ell = 0; ell < kCards; ++ell) {
    acc += pmf[ell];
    if (u < acc) return ell;
  }
  return kCards;
}

int sample_negbin(const NegBinParams& p, Rng& rng) {
  p.validate();
  std::gamma_distribution<double> gamma(p.delta, p.mu / p.delta);
  const double rate = gamma(rng);
  if (rate <= 0.0) return 0;
  std::poisson_distribution<int> poisson(rate);
  return poisson(rng);
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

Rng derive_stream(std::uint64_t master_seed, std::uint64_t index) {
  return Rng(splitmix64(splitmix64(master_seed) ^ splitmix64(index + 0x5851f42d4c957f2dULL)));
}

}  // namespace cmm
