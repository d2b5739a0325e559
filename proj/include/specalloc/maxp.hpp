#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "allocator.hpp"
#include "markov.hpp"
#include "rng.hpp"

namespace specalloc {

/// Number of completed-but-unspliced (or pending) segments per state.
class SegmentInventory {
 public:
  std::size_t count(std::size_t state) const {
    auto it = counts_.find(state);
    return it == counts_.end() ? 0 : it->second;
  }
  void add(std::size_t state, std::size_t n = 1) {
    if (n) counts_[state] += n;
  }
  void set(std::size_t state, std::size_t n) {
    if (n)
      counts_[state] = n;
    else
      counts_.erase(state);
  }
  void clear() { counts_.clear(); }
  bool empty() const { return counts_.empty(); }
  const std::unordered_map<std::size_t, std::size_t>& counts() const { return counts_; }

 private:
  std::unordered_map<std::size_t, std::size_t> counts_;
};

/// One candidate segment: the `ordinal`-th fresh segment that would be needed
/// in `state`, with the probability that the trajectory consumes it.
struct TaskEntry {
  std::size_t state;
  std::size_t ordinal;  // 1-based
  double p;
};

struct TaskProbabilityTable {
  std::vector<TaskEntry> entries;  // sorted by p descending
  std::size_t horizon = 0;

  bool empty() const { return entries.empty(); }
  std::size_t size() const { return entries.size(); }

  TaskProbabilityDistribution distribution() const {
    std::vector<double> p;
    p.reserve(entries.size());
    for (const auto& e : entries) p.push_back(e.p);
    return TaskProbabilityDistribution(std::move(p));
  }

  /// p for (state, ordinal); 0 when the entry fell below the cutoff.
  double probability(std::size_t state, std::size_t ordinal) const {
    for (const auto& e : entries)
      if (e.state == state && e.ordinal == ordinal) return e.p;
    return 0.0;
  }

  /// p(state, 1), p(state, 2), ... in ordinal order.
  std::vector<double> state_profile(std::size_t state) const {
    std::vector<std::pair<std::size_t, double>> v;
    for (const auto& e : entries)
      if (e.state == state) v.emplace_back(e.ordinal, e.p);
    std::sort(v.begin(), v.end());
    std::vector<double> out;
    out.reserve(v.size());
    for (auto& [j, p] : v) out.push_back(p);
    return out;
  }
};

struct MaxPOptions {
  double cutoff = 1e-6;
  std::size_t j_max = std::numeric_limits<std::size_t>::max();
  // Keep only the most probable entries. An allocator never funds more than
  // budget / w_lo tasks, so a table cut there allocates identically.
  std::size_t max_entries = std::numeric_limits<std::size_t>::max();
  std::size_t state_cap = 200;  // analytic only
  std::size_t n_samples = 1000;  // Monte Carlo only
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

/// Mean number of consecutive segments spent in `state` before escaping.
inline double expected_escape_segments(const MarkovChain& chain, std::size_t state) {
  const double stay = chain.self_loop(state);
  if (stay >= 1.0) return std::numeric_limits<double>::infinity();
  return 1.0 / (1.0 - stay);
}

namespace detail {

// p descending, ties by (state, ordinal) so that a truncated table still holds
// a prefix of ordinals for every state.
inline bool entry_before(const TaskEntry& a, const TaskEntry& b) {
  if (a.p != b.p) return a.p > b.p;
  if (a.state != b.state) return a.state < b.state;
  return a.ordinal < b.ordinal;
}

inline void sort_table(std::vector<TaskEntry>& e, std::size_t keep) {
  if (e.size() > keep) {
    std::nth_element(e.begin(), e.begin() + static_cast<std::ptrdiff_t>(keep), e.end(), entry_before);
    e.resize(keep);
  }
  std::sort(e.begin(), e.end(), entry_before);
}

}  // namespace detail

/// Exact table from the visit-count recursions.
///
/// A horizon-H trajectory uses the segments starting at X_0..X_{H-1}, so the
/// demand on state k is [k == current] + v_k(H-1). The entry for (k, j) is the
/// probability that this demand reaches S_k + j.
inline TaskProbabilityTable maxp_analytic(const MarkovChain& chain, std::size_t current,
                                          const SegmentInventory& inventory, std::size_t horizon,
                                          const MaxPOptions& opt = {}) {
  if (chain.size() > opt.state_cap)
    throw std::invalid_argument("maxp_analytic: " + std::to_string(chain.size()) +
                                " states exceeds the analytic cap of " +
                                std::to_string(opt.state_cap) + "; use maxp_monte_carlo");
  if (current >= chain.size()) throw std::out_of_range("maxp_analytic: current state out of range");
  if (horizon < 1) throw std::invalid_argument("maxp_analytic: horizon must be >= 1");

  TaskProbabilityTable table;
  table.horizon = horizon;
  const std::size_t steps = horizon - 1;
  for (std::size_t k = 0; k < chain.size(); ++k) {
    VisitCounter visits(chain, current, k, steps);
    const std::size_t held = inventory.count(k);
    const std::size_t own = k == current ? 1 : 0;
    for (std::size_t j = 1; j <= opt.j_max; ++j) {
      // need v_k >= held + j - own
      const std::size_t need = held + j;
      double p;
      if (need <= own)
        p = 1.0;
      else if (need - own > steps)
        break;
      else
        p = visits.exceeds(need - own - 1);
      if (p < opt.cutoff || p <= 0.0) break;
      table.entries.push_back({k, j, p});
    }
  }
  detail::sort_table(table.entries, opt.max_entries);
  return table;
}

/// Completed segments waiting in the database: for each start state, the end
/// states in the order they will be spliced.
using StoredSegments = std::unordered_map<std::size_t, std::vector<std::size_t>>;

namespace detail {

using FreshCounts = std::unordered_map<std::size_t, std::vector<std::uint32_t>>;

// Trajectories [first, last) with their own streams; per-state fresh demand.
// A trajectory follows stored segments to their recorded end states, then uses
// the pending segments (virtual end states drawn from the chain), and only then
// needs fresh ones.
inline void sample_fresh_demand(const MarkovChain& chain, std::size_t current,
                                const StoredSegments& stored, const SegmentInventory& pending,
                                std::size_t horizon, std::uint64_t seed, std::size_t first,
                                std::size_t last, FreshCounts& out) {
  std::vector<std::uint32_t> demand(chain.size(), 0);
  std::vector<std::uint32_t> used(chain.size(), 0);
  std::vector<std::size_t> touched;
  std::vector<std::size_t> visited;
  for (std::size_t t = first; t < last; ++t) {
    Rng rng(stream_seed(seed, t));
    std::size_t s = current;
    std::size_t steps = 0;
    while (steps < horizon) {
      if (used[s] == 0) visited.push_back(s);
      std::size_t n_stored = 0;
      if (!stored.empty()) {
        auto it = stored.find(s);
        if (it != stored.end()) n_stored = it->second.size();
        if (used[s] < n_stored) {
          s = it->second[used[s]++];
          ++steps;
          continue;
        }
      }
      // sojourn length is geometric, so whole stays are drawn at once
      const double stay = chain.self_loop(s);
      std::size_t run = horizon - steps;
      if (stay < 1.0) {
        std::geometric_distribution<std::size_t> extra(1.0 - stay);
        run = std::min(run, 1 + extra(rng));
      }
      const std::size_t held = n_stored + pending.count(s);
      const std::size_t avail = held - std::min<std::size_t>(used[s], held);
      const std::size_t fresh = run - std::min(run, avail);
      used[s] += static_cast<std::uint32_t>(run);
      if (fresh) {
        if (demand[s] == 0) touched.push_back(s);
        demand[s] += static_cast<std::uint32_t>(fresh);
      }
      steps += run;
      if (steps < horizon) s = chain.jump(s, rng);
    }
    for (std::size_t k : touched) {
      out[k].push_back(demand[k]);
      demand[k] = 0;
    }
    for (std::size_t k : visited) used[k] = 0;
    touched.clear();
    visited.clear();
  }
}

}  // namespace detail

/// Monte Carlo table: the fraction of sampled horizon-length trajectories that
/// need at least j fresh segments in state k once the stored and pending
/// segments there are used up.
/// Trajectory t draws from its own stream, so any thread count gives the same table.
inline TaskProbabilityTable maxp_monte_carlo(const MarkovChain& chain, std::size_t current,
                                             const StoredSegments& stored,
                                             const SegmentInventory& pending, std::size_t horizon,
                                             const MaxPOptions& opt = {}) {
  if (current >= chain.size())
    throw std::out_of_range("maxp_monte_carlo: current state out of range");
  if (opt.n_samples < 1) throw std::invalid_argument("maxp_monte_carlo: n_samples must be >= 1");
  if (horizon < 1) throw std::invalid_argument("maxp_monte_carlo: horizon must be >= 1");

  const unsigned threads =
      static_cast<unsigned>(std::clamp<std::size_t>(opt.threads, 1, opt.n_samples));
  std::vector<detail::FreshCounts> parts(threads);
  if (threads == 1) {
    detail::sample_fresh_demand(chain, current, stored, pending, horizon, opt.seed, 0,
                                opt.n_samples, parts[0]);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (opt.n_samples + threads - 1) / threads;
    for (unsigned w = 0; w < threads; ++w) {
      const std::size_t a = std::min(opt.n_samples, w * chunk);
      const std::size_t b = std::min(opt.n_samples, a + chunk);
      pool.emplace_back([&, a, b, w] {
        detail::sample_fresh_demand(chain, current, stored, pending, horizon, opt.seed, a, b,
                                    parts[w]);
      });
    }
    for (auto& t : pool) t.join();
  }

  detail::FreshCounts merged = std::move(parts[0]);
  for (unsigned w = 1; w < threads; ++w)
    for (auto& [k, v] : parts[w]) {
      auto& dst = merged[k];
      dst.insert(dst.end(), v.begin(), v.end());
    }
  std::vector<std::size_t> states;
  states.reserve(merged.size());
  for (auto& [k, v] : merged) states.push_back(k);
  std::sort(states.begin(), states.end());

  TaskProbabilityTable table;
  table.horizon = horizon;
  const double inv_n = 1.0 / static_cast<double>(opt.n_samples);
  std::size_t longest = 0;
  for (std::size_t k : states) {
    auto& v = merged[k];
    std::sort(v.begin(), v.end(), std::greater<>());
    longest = std::max(longest, v.size());
  }

  // Entry (k, j) has count c = #{trajectories with fresh demand >= j}; state k
  // contributes v_k[c-1] entries with count >= c. Find the smallest count that
  // still matters under the cutoff and the size limit, and skip the rest.
  std::size_t c_min = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(opt.cutoff * static_cast<double>(opt.n_samples))));
  while (c_min > 1 && static_cast<double>(c_min - 1) * inv_n >= opt.cutoff) --c_min;
  if (opt.max_entries < std::numeric_limits<std::size_t>::max()) {
    std::vector<std::size_t> at_least(longest + 2, 0);
    for (std::size_t k : states) {
      const auto& v = merged[k];
      for (std::size_t c = 1; c <= v.size(); ++c)
        at_least[c] += std::min<std::size_t>(v[c - 1], opt.j_max);
    }
    std::size_t c = longest;
    while (c > c_min && at_least[c] < opt.max_entries) --c;
    c_min = std::max(c_min, c);
  }

  for (std::size_t k : states) {
    const auto& v = merged[k];
    if (v.size() < c_min) continue;
    // v[c] >= j for c < count(j); walk j upwards
    std::size_t c = v.size();
    const std::size_t top = std::min<std::size_t>(v[c_min - 1], opt.j_max);
    for (std::size_t j = 1; j <= top; ++j) {
      while (c > 0 && v[c - 1] < j) --c;
      table.entries.push_back({k, j, static_cast<double>(c) * inv_n});
    }
  }
  detail::sort_table(table.entries, opt.max_entries);
  return table;
}

/// Count-only inventory: every held segment is treated as pending, with an end
/// state drawn from the chain when the trajectory uses it.
inline TaskProbabilityTable maxp_monte_carlo(const MarkovChain& chain, std::size_t current,
                                             const SegmentInventory& inventory,
                                             std::size_t horizon, const MaxPOptions& opt = {}) {
  return maxp_monte_carlo(chain, current, StoredSegments{}, inventory, horizon, opt);
}

/// One sampled end state per pending segment start.
template <typename R>
std::vector<std::size_t> sample_virtual_endpoints(const MarkovChain& chain,
                                                  const std::vector<std::size_t>& starts,
                                                  R& rng) {
  std::vector<std::size_t> ends;
  ends.reserve(starts.size());
  for (std::size_t s : starts) ends.push_back(chain.step(s, rng));
  return ends;
}

}  // namespace specalloc
