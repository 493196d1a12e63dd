#pragma once

// Note-level train/val/test split stratified on per-class entity counts.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "numlesa/corpus.hpp"
#include "numlesa/errors.hpp"
#include "numlesa/label_space.hpp"

namespace numlesa {

using ClassCounts = std::array<std::size_t, kNumClasses>;

struct SplitWarning {
  std::string kind;  // ClassTooSmall
  ClassLabel label = ClassLabel::O;
  std::size_t occurrences = 0;
};

struct SplitResult {
  std::array<std::vector<std::size_t>, 3> parts;  // train, val, test (sorted indices)
  std::vector<SplitWarning> warnings;

  const std::vector<std::size_t>& train() const { return parts[0]; }
  const std::vector<std::size_t>& val() const { return parts[1]; }
  const std::vector<std::size_t>& test() const { return parts[2]; }
};

inline ClassCounts entity_counts(const AnnotatedNote& note) {
  ClassCounts c{};
  for (const auto& e : note.entities) ++c[index_of(e.label)];
  return c;
}

namespace detail {

class SplitObjective {
 public:
  SplitObjective(const std::vector<ClassCounts>& units, const std::array<double, 3>& fractions)
      : units_(units), fractions_(fractions) {
    for (const auto& u : units)
      for (std::size_t c = 0; c < kNumClasses; ++c) totals_[c] += static_cast<double>(u[c]);
  }

  double cell(std::size_t part, std::size_t c, double count) const {
    const double dev = count - fractions_[part] * totals_[c];
    const double excess = std::max(0.0, std::abs(dev) - 1.0);
    return dev * dev + 1000.0 * excess * excess;
  }

  double notes_term(std::size_t part, double notes) const {
    const double dev = notes - fractions_[part] * static_cast<double>(units_.size());
    return 1e-3 * dev * dev;
  }

  // Change in objective if `u` is removed from `from` and added to `to`.
  double move_delta(const std::array<ClassCounts, 3>& counts, const std::array<double, 3>& notes,
                    std::size_t u, int from, int to) const {
    double delta = 0.0;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      const double k = static_cast<double>(units_[u][c]);
      if (k == 0) continue;
      if (from >= 0) {
        const auto f = static_cast<std::size_t>(from);
        const double cur = static_cast<double>(counts[f][c]);
        delta += cell(f, c, cur - k) - cell(f, c, cur);
      }
      const auto t = static_cast<std::size_t>(to);
      const double cur = static_cast<double>(counts[t][c]);
      delta += cell(t, c, cur + k) - cell(t, c, cur);
    }
    if (from >= 0) {
      const auto f = static_cast<std::size_t>(from);
      delta += notes_term(f, notes[f] - 1) - notes_term(f, notes[f]);
    }
    const auto t = static_cast<std::size_t>(to);
    delta += notes_term(t, notes[t] + 1) - notes_term(t, notes[t]);
    return delta;
  }

 private:
  const std::vector<ClassCounts>& units_;
  std::array<double, 3> fractions_;
  std::array<double, kNumClasses> totals_{};
};

}  // namespace detail

// Greedy assignment followed by local search over single-note moves and
// pairwise swaps. Notes holding a class with fewer than 3 occurrences go to
// train and the class is reported as ClassTooSmall.
inline SplitResult stratified_split(const std::vector<ClassCounts>& units,
                                    const std::array<double, 3>& fractions, std::uint64_t seed) {
  const double fsum = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(fsum - 1.0) > 1e-9 || fractions[0] < 0 || fractions[1] < 0 || fractions[2] < 0)
    throw ConfigError("split fractions must be non-negative and sum to 1");

  SplitResult result;
  const std::size_t n = units.size();
  ClassCounts totals{};
  for (const auto& u : units)
    for (std::size_t c = 0; c < kNumClasses; ++c) totals[c] += u[c];
  std::array<bool, kNumClasses> too_small{};
  for (std::size_t c = 0; c < kNumClasses; ++c)
    if (totals[c] > 0 && totals[c] < 3) {
      too_small[c] = true;
      result.warnings.push_back({"ClassTooSmall", label_from_index(c), totals[c]});
    }

  std::vector<int> assign(n, -1);
  std::vector<bool> pinned(n, false);
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t c = 0; c < kNumClasses; ++c)
      if (too_small[c] && units[u][c] > 0) pinned[u] = true;

  // Pinned units are taken out of the objective entirely.
  std::vector<ClassCounts> free_units;
  std::vector<std::size_t> free_index;
  for (std::size_t u = 0; u < n; ++u) {
    if (pinned[u]) {
      assign[u] = 0;
    } else {
      free_units.push_back(units[u]);
      free_index.push_back(u);
    }
  }
  detail::SplitObjective obj(free_units, fractions);
  std::array<ClassCounts, 3> counts{};
  std::array<double, 3> notes{};
  std::vector<int> fa(free_units.size(), -1);

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(free_units.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  // Units carrying rare classes are placed first.
  ClassCounts free_totals{};
  for (const auto& u : free_units)
    for (std::size_t c = 0; c < kNumClasses; ++c) free_totals[c] += u[c];
  auto rarity = [&](std::size_t u) {
    double r = 0.0;
    for (std::size_t c = 0; c < kNumClasses; ++c)
      if (free_units[u][c]) r = std::max(r, 1.0 / static_cast<double>(free_totals[c]));
    return r;
  };
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return rarity(a) > rarity(b); });

  auto apply = [&](std::size_t u, int from, int to) {
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      if (from >= 0) counts[static_cast<std::size_t>(from)][c] -= free_units[u][c];
      counts[static_cast<std::size_t>(to)][c] += free_units[u][c];
    }
    if (from >= 0) notes[static_cast<std::size_t>(from)] -= 1;
    notes[static_cast<std::size_t>(to)] += 1;
    fa[u] = to;
  };

  for (std::size_t u : order) {
    int best = 0;
    double best_delta = 0.0;
    for (int p = 0; p < 3; ++p) {
      if (fractions[static_cast<std::size_t>(p)] == 0) continue;
      const double d = obj.move_delta(counts, notes, u, -1, p);
      if (p == 0 || d < best_delta) {
        best = p;
        best_delta = d;
      }
    }
    apply(u, -1, best);
  }

  constexpr double kEps = 1e-12;
  for (int round = 0; round < 50; ++round) {
    bool improved = false;
    for (std::size_t u : order) {
      for (int p = 0; p < 3; ++p) {
        if (p == fa[u] || fractions[static_cast<std::size_t>(p)] == 0) continue;
        if (obj.move_delta(counts, notes, u, fa[u], p) < -kEps) {
          apply(u, fa[u], p);
          improved = true;
        }
      }
    }
    bool within_one = true;
    for (std::size_t p = 0; p < 3; ++p)
      for (std::size_t c = 0; c < kNumClasses; ++c)
        if (std::abs(static_cast<double>(counts[p][c]) -
                     fractions[p] * static_cast<double>(free_totals[c])) > 1.0)
          within_one = false;
    if (within_one && !improved) break;
    if (within_one) continue;
    // Swaps between units of different parts, restricted to entity-bearing
    // units so the pass stays quadratic in the number of such units.
    std::vector<std::size_t> bearing;
    for (std::size_t u : order) {
      std::size_t total = 0;
      for (auto k : free_units[u]) total += k;
      if (total > 0) bearing.push_back(u);
    }
    for (std::size_t i = 0; i < bearing.size(); ++i)
      for (std::size_t j = i + 1; j < bearing.size(); ++j) {
        const std::size_t a = bearing[i], b = bearing[j];
        const int pa = fa[a], pb = fa[b];
        if (pa == pb) continue;
        auto before = counts;
        auto notes_before = notes;
        const double d1 = obj.move_delta(counts, notes, a, pa, pb);
        apply(a, pa, pb);
        const double d2 = obj.move_delta(counts, notes, b, pb, pa);
        if (d1 + d2 < -kEps) {
          apply(b, pb, pa);
          improved = true;
        } else {
          counts = before;
          notes = notes_before;
          fa[a] = pa;
        }
      }
    if (!improved) break;
  }

  for (std::size_t k = 0; k < free_units.size(); ++k) assign[free_index[k]] = fa[k];
  for (std::size_t u = 0; u < n; ++u)
    result.parts[static_cast<std::size_t>(assign[u])].push_back(u);
  return result;
}

inline SplitResult stratified_split(const std::vector<AnnotatedNote>& notes,
                                    const std::array<double, 3>& fractions, std::uint64_t seed) {
  std::vector<ClassCounts> units;
  units.reserve(notes.size());
  for (const auto& n : notes) units.push_back(entity_counts(n));
  return stratified_split(units, fractions, seed);
}

}  // namespace numlesa
