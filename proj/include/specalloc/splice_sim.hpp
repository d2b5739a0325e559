#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "allocator.hpp"
#include "cost_model.hpp"
#include "markov.hpp"
#include "maxp.hpp"
#include "rng.hpp"

namespace specalloc {

enum class PolicyKind { ve, maxp, maxp_const, maxp_wmax, maxp_opt };

inline const char* to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::ve: return "ve";
    case PolicyKind::maxp: return "maxp";
    case PolicyKind::maxp_const: return "maxp-const";
    case PolicyKind::maxp_wmax: return "maxp-wmax";
    case PolicyKind::maxp_opt: return "maxp-opt";
  }
  return "?";
}

inline PolicyKind parse_policy(const std::string& s) {
  for (auto k : {PolicyKind::ve, PolicyKind::maxp, PolicyKind::maxp_const, PolicyKind::maxp_wmax,
                 PolicyKind::maxp_opt})
    if (s == to_string(k)) return k;
  throw std::invalid_argument("unknown policy: " + s);
}

inline bool is_preemptive(PolicyKind k) {
  return k == PolicyKind::maxp_const || k == PolicyKind::maxp_wmax || k == PolicyKind::maxp_opt;
}

/// When a preemptive policy pauses everything and recomputes the allocation.
enum class Trigger {
  transition,        // a completed segment ends in a different state than it began
  every_completion,  // any completed segment
  interval,          // fixed wall-clock period
};

inline const char* to_string(Trigger t) {
  switch (t) {
    case Trigger::transition: return "transition";
    case Trigger::every_completion: return "every-completion";
    case Trigger::interval: return "interval";
  }
  return "?";
}

inline Trigger parse_trigger(const std::string& s) {
  for (auto t : {Trigger::transition, Trigger::every_completion, Trigger::interval})
    if (s == to_string(t)) return t;
  throw std::invalid_argument("unknown trigger: " + s);
}

struct Policy {
  PolicyKind kind = PolicyKind::ve;
  double budget = 5000.0;
  Trigger trigger = Trigger::transition;
  double interval = 0.0;             // seconds, for Trigger::interval
  double preemption_penalty = 0.0;   // seconds of stall whenever a started task changes w
  std::size_t horizon = 0;           // segments; 0 picks default_horizon()
  std::size_t n_samples = 1000;      // trajectories per probability table
  double cutoff = 1e-6;
  unsigned mc_threads = 1;

  void validate() const {
    if (!(budget > 0.0) || !std::isfinite(budget))
      throw std::invalid_argument("Policy: budget must be positive");
    if (trigger == Trigger::interval && !(interval > 0.0))
      throw std::invalid_argument("Policy: interval trigger needs a positive interval");
    if (!(preemption_penalty >= 0.0)) throw std::invalid_argument("Policy: negative penalty");
    if (n_samples < 1) throw std::invalid_argument("Policy: n_samples must be >= 1");
  }
};

/// Probability-table horizon: five mean escape times from `state`, or two
/// segments per unit of budget when that is longer, so that the table can
/// describe enough future demand to keep every slot busy.
inline std::size_t default_horizon(const MarkovChain& chain, std::size_t state, double budget) {
  const double esc = expected_escape_segments(chain, state);
  const double a = std::isfinite(esc) ? 5.0 * esc : 0.0;
  return static_cast<std::size_t>(std::ceil(std::max({a, 2.0 * budget, 1.0})));
}

struct PendingTask {
  std::uint64_t id = 0;
  std::size_t start_state = 0;
  double w = 0.0;
  double progress = 0.0;
  std::size_t endpoint = 0;  // drawn at creation, revealed on completion

  bool done() const { return progress >= 1.0; }
};

/// Linear-progress model: a task at w finishes a fraction dt / T(w) of its work in dt.
inline PendingTask advance_task(PendingTask task, double dt, const CostModel& model) {
  if (!(task.w > 0.0)) throw std::invalid_argument("advance_task: task is paused");
  if (dt < 0.0) throw std::invalid_argument("advance_task: negative dt");
  task.progress = std::min(1.0, task.progress + dt / model.time(task.w));
  return task;
}

/// Completed, not yet spliced segments, FIFO per start state.
class SegmentDatabase {
 public:
  void deposit(std::size_t start, std::size_t end) {
    q_[start].push_back(end);
    ++size_;
  }
  std::size_t count(std::size_t state) const {
    auto it = q_.find(state);
    return it == q_.end() ? 0 : it->second.size();
  }
  /// End state of the i-th stored segment starting in `state`.
  std::size_t peek(std::size_t state, std::size_t i) const { return q_.at(state).at(i); }
  std::size_t pop(std::size_t state) {
    auto it = q_.find(state);
    if (it == q_.end() || it->second.empty())
      throw std::logic_error("SegmentDatabase: no segment starts in this state");
    const std::size_t end = it->second.front();
    it->second.pop_front();
    if (it->second.empty()) q_.erase(it);
    --size_;
    return end;
  }
  std::size_t size() const { return size_; }
  const std::unordered_map<std::size_t, std::deque<std::size_t>>& queues() const { return q_; }

 private:
  std::unordered_map<std::size_t, std::deque<std::size_t>> q_;
  std::size_t size_ = 0;
};

struct MetricPoint {
  double clock;
  std::size_t spliced;
};

struct SimState {
  double clock = 0.0;
  std::size_t head = 0;
  SegmentDatabase database;
  std::size_t spliced_count = 0;
  std::size_t completed_count = 0;
  std::size_t escapes = 0;  // head changes
  std::vector<MetricPoint> metrics;
};

struct SimResult {
  std::vector<MetricPoint> series;  // (clock, spliced) after every change, starting at (0, 0)
  double clock = 0.0;
  std::size_t spliced = 0;
  std::size_t completed = 0;
  std::size_t escapes = 0;
  std::size_t reallocations = 0;
  std::size_t tasks_created = 0;
  double peak_allocated = 0.0;  // largest total w held by running tasks
};

/// Spliced count at time t from a step series.
inline double spliced_at(const std::vector<MetricPoint>& series, double t) {
  auto it = std::upper_bound(series.begin(), series.end(), t,
                             [](double x, const MetricPoint& p) { return x < p.clock; });
  return it == series.begin() ? 0.0 : static_cast<double>(std::prev(it)->spliced);
}

/// Discrete-event splicing simulator. Segments are single Markov steps whose end
/// state is drawn when the task is created; tasks progress linearly in time at
/// rate 1/T(w).
class Simulation {
 public:
  Simulation(const MarkovChain& chain, const CostModel& model, Policy policy, std::uint64_t seed,
             std::size_t start_state = 0)
      : chain_(chain),
        model_(model),
        policy_(std::move(policy)),
        seed_(seed),
        truth_(stream_seed(seed, 1)),
        sched_(stream_seed(seed, 2)) {
    policy_.validate();
    if (start_state >= chain.size()) throw std::out_of_range("Simulation: start state");
    state_.head = start_state;
    slots_ = static_cast<std::size_t>(std::floor(policy_.budget + 1e-9));
    if (!is_preemptive(policy_.kind) && slots_ == 0)
      throw std::invalid_argument("Simulation: unit-slot policies need a budget of at least 1");
  }

  SimResult run(double wct_limit) {
    if (!(wct_limit >= 0.0)) throw std::invalid_argument("Simulation: negative wct limit");
    state_.metrics.push_back({state_.clock, state_.spliced_count});
    schedule({}, true);
    double next_tick = policy_.trigger == Trigger::interval && is_preemptive(policy_.kind)
                           ? state_.clock + policy_.interval
                           : kInf;
    for (;;) {
      const double t_next = active_.empty() ? kInf : active_.begin()->first;
      const double t_event = std::min(t_next, next_tick);
      if (t_event > wct_limit || t_event == kInf) {
        state_.clock = std::max(state_.clock, std::min(wct_limit, t_event));
        break;
      }
      state_.clock = t_event;
      if (next_tick < t_next) {
        next_tick += policy_.interval;
        reallocate();
        continue;
      }
      // every task finishing at this instant (up to rounding) completes together
      const double cut = t_next + 1e-9 * std::max(1.0, t_next);
      std::vector<Task> finished;
      while (!active_.empty() && active_.begin()->first <= cut) {
        const std::uint64_t id = active_.begin()->second;
        active_.erase(active_.begin());
        auto node = tasks_.extract(id);
        allocated_ -= node.mapped().w;
        finished.push_back(std::move(node.mapped()));
      }
      bool transition = false;
      for (const auto& t : finished) {
        state_.database.deposit(t.start, t.endpoint);
        ++state_.completed_count;
        transition |= t.endpoint != t.start;
        pending_count_[t.start] -= 1;
        if (pending_count_[t.start] == 0) pending_count_.erase(t.start);
      }
      if (splice_available() > 0) state_.metrics.push_back({state_.clock, state_.spliced_count});
      const bool full = is_preemptive(policy_.kind) &&
                        ((policy_.trigger == Trigger::transition && transition) ||
                         policy_.trigger == Trigger::every_completion);
      schedule(finished, full);
    }
    return result();
  }

  /// Splices stored segments onto the trajectory while one starts at the head.
  std::size_t splice_available() {
    std::size_t n = 0;
    while (state_.database.count(state_.head) > 0) {
      const std::size_t next = state_.database.pop(state_.head);
      if (next != state_.head) ++state_.escapes;
      state_.head = next;
      ++n;
    }
    state_.spliced_count += n;
    return n;
  }

  /// Virtual-end scheduling: for each idle slot, draw virtual end states for the
  /// pending segments, splice virtually from the head through stored and pending
  /// segments, and start the next segment where the virtual trajectory stops.
  /// Returns the start states chosen (they are not turned into tasks here).
  std::vector<std::size_t> ve_schedule(std::size_t idle_slots) {
    std::unordered_map<std::size_t, std::size_t> pending = pending_count_;
    std::vector<std::size_t> out;
    out.reserve(idle_slots);
    std::unordered_map<std::size_t, std::size_t> used;
    for (std::size_t slot = 0; slot < idle_slots; ++slot) {
      used.clear();
      std::size_t s = state_.head;
      for (;;) {
        const std::size_t stored = state_.database.count(s);
        std::size_t& u = used[s];
        std::size_t end;
        if (u < stored) {
          end = state_.database.peek(s, u);
        } else {
          auto it = pending.find(s);
          if (it == pending.end() || u - stored >= it->second) break;
          // a fresh virtual end for every pass
          end = chain_.step(s, sched_);
        }
        ++u;
        s = end;
      }
      out.push_back(s);
      ++pending[s];
    }
    return out;
  }

  /// Probability table for the current head. Sampled trajectories follow stored
  /// segments to their recorded ends. Non-preemptive MaxP also counts running
  /// tasks as pending; the preemptive policies re-plan them, so they do not.
  TaskProbabilityTable build_table(bool include_pending) {
    StoredSegments stored;
    for (const auto& [s, q] : state_.database.queues()) stored[s].assign(q.begin(), q.end());
    SegmentInventory pend;
    if (include_pending)
      for (const auto& [s, c] : pending_count_) pend.add(s, c);
    MaxPOptions opt;
    opt.cutoff = policy_.cutoff;
    opt.n_samples = policy_.n_samples;
    opt.threads = policy_.mc_threads;
    opt.seed = stream_seed(seed_, 1000 + tables_built_++);
    opt.max_entries = static_cast<std::size_t>(std::floor(policy_.budget / model_.w_lo())) + 1;
    const std::size_t h = policy_.horizon ? policy_.horizon
                                          : default_horizon(chain_, state_.head, policy_.budget);
    return maxp_monte_carlo(chain_, state_.head, stored, pend, h, opt);
  }

  /// Shares over a table for the three preemptive policies (same order as the
  /// table entries; zero means unfunded).
  std::vector<double> plan_shares(const TaskProbabilityTable& table) const {
    std::vector<double> w(table.size(), 0.0);
    if (table.empty()) return w;
    const auto dist = table.distribution();
    switch (policy_.kind) {
      case PolicyKind::maxp_const: {
        const auto a = naive_allocation(dist, policy_.budget, model_);
        return a.w;
      }
      case PolicyKind::maxp_wmax: {
        const auto k = std::min(table.size(), detail::saturated_count(table.size(), policy_.budget,
                                                                      model_.w_max()));
        if (k == 0 && !w.empty() && policy_.budget >= model_.w_lo()) {
          // a budget below w_max still runs the top task with everything
          w[0] = policy_.budget;
          return w;
        }
        std::fill_n(w.begin(), k, model_.w_max());
        return w;
      }
      case PolicyKind::maxp_opt: {
        AllocatorOptions opt;
        opt.scan = ScanStrategy::bounded;
        return optimal_allocation(dist, policy_.budget, model_, opt).w;
      }
      default: throw std::logic_error("plan_shares: not a preemptive policy");
    }
  }

  const SimState& state() const { return state_; }
  SimState& state() { return state_; }
  const Policy& policy() const { return policy_; }
  double allocated() const { return allocated_; }

  /// Snapshot of the live and paused tasks (progress evaluated at the current clock).
  std::vector<PendingTask> pending() const {
    std::vector<PendingTask> out;
    for (const auto& [id, t] : tasks_)
      out.push_back({id, t.start, t.w, progress_at(t, state_.clock), t.endpoint});
    return out;
  }

 private:
  static constexpr double kInf = std::numeric_limits<double>::infinity();

  struct Task {
    std::uint64_t id;
    std::size_t start;
    std::size_t endpoint;
    double w = 0.0;
    double progress = 0.0;  // at time `since`
    double since = 0.0;
    double stall_until = 0.0;
    double finish = kInf;
  };

  double progress_at(const Task& t, double now) const {
    if (t.w == 0.0) return t.progress;
    const double from = std::max(t.since, t.stall_until);
    if (now <= from) return t.progress;
    return std::min(1.0, t.progress + (now - from) / model_.time(t.w));
  }

  std::uint64_t create_task(std::size_t start, double w) {
    Task t;
    t.id = next_id_++;
    t.start = start;
    // The j-th segment ever generated in a state always has the same end state
    // for a given seed, whichever policy asked for it.
    SplitMix64 g(stream_seed(stream_seed(truth_, start), generated_[start]++));
    t.endpoint = chain_.step(start, g);
    t.since = state_.clock;
    t.stall_until = state_.clock;
    pending_count_[start] += 1;
    auto [it, ok] = tasks_.emplace(t.id, t);
    set_share(it->second, w, true);
    ++created_;
    return t.id;
  }

  // Stall penalty applies when a task that already holds resources gets a new share.
  void set_share(Task& t, double w, bool fresh = false) {
    const double now = state_.clock;
    const bool restarted = !fresh && t.w != w;
    t.progress = progress_at(t, now);
    if (t.finish < kInf) active_.erase({t.finish, t.id});
    allocated_ += w - t.w;
    peak_allocated_ = std::max(peak_allocated_, allocated_);
    t.w = w;
    t.since = now;
    t.stall_until = now + (restarted && w > 0.0 ? policy_.preemption_penalty : 0.0);
    if (w > 0.0) {
      t.finish = t.stall_until + (1.0 - t.progress) * model_.time(w);
      active_.insert({t.finish, t.id});
      paused_[t.start].erase(t.id);
    } else {
      t.finish = kInf;
      paused_[t.start].insert(t.id);
    }
  }

  std::size_t running() const { return active_.size(); }

  void schedule(const std::vector<Task>& finished, bool full) {
    switch (policy_.kind) {
      case PolicyKind::ve: {
        for (std::size_t s : ve_schedule(slots_ - running())) create_task(s, 1.0);
        return;
      }
      case PolicyKind::maxp: {
        const std::size_t idle = slots_ - running();
        if (idle == 0) return;
        const auto table = build_table(true);
        for (std::size_t i = 0; i < std::min(idle, table.size()); ++i)
          create_task(table.entries[i].state, 1.0);
        return;
      }
      default: break;
    }
    if (full) {
      reallocate();
      return;
    }
    for (const auto& t : finished) {
      if (next_entry_ >= table_.size()) {
        // the plan has nothing left to offer; make a new one
        reallocate();
        return;
      }
      fill_next(t.w);
    }
  }

  // Pause everything, rebuild the table, and hand out the new shares. Existing
  // tasks keep their progress: in each state the most advanced task takes the
  // lowest funded ordinal.
  void reallocate() {
    ++reallocations_;
    table_ = build_table(false);
    plan_ = plan_shares(table_);
    next_entry_ = 0;
    std::map<std::size_t, std::vector<double>> funded;
    for (std::size_t i = 0; i < table_.size(); ++i) {
      if (plan_[i] > 0.0) {
        funded[table_.entries[i].state].push_back(plan_[i]);
        next_entry_ = i + 1;
      }
    }
    std::map<std::size_t, std::vector<std::uint64_t>> by_state;
    for (const auto& [id, t] : tasks_) by_state[t.start].push_back(id);
    const double now = state_.clock;
    for (auto& [s, ids] : by_state) {
      std::stable_sort(ids.begin(), ids.end(), [&](std::uint64_t a, std::uint64_t b) {
        return progress_at(tasks_.at(a), now) > progress_at(tasks_.at(b), now);
      });
      auto it = funded.find(s);
      const std::size_t have = it == funded.end() ? 0 : it->second.size();
      for (std::size_t i = 0; i < ids.size(); ++i)
        if (i >= have) set_share(tasks_.at(ids[i]), 0.0);
    }
    // shrink before growing so the running total never exceeds the budget
    for (auto& [s, ids] : by_state) {
      auto it = funded.find(s);
      if (it == funded.end()) continue;
      for (std::size_t i = 0; i < std::min(ids.size(), it->second.size()); ++i) {
        Task& t = tasks_.at(ids[i]);
        if (it->second[i] < t.w) set_share(t, it->second[i]);
      }
    }
    for (auto& [s, shares] : funded) {
      auto bs = by_state.find(s);
      const std::size_t have = bs == by_state.end() ? 0 : bs->second.size();
      for (std::size_t i = 0; i < shares.size(); ++i) {
        if (i < have) {
          Task& t = tasks_.at(bs->second[i]);
          if (shares[i] != t.w) set_share(t, shares[i]);
        } else {
          create_task(s, shares[i]);
        }
      }
    }
  }

  // A finished task's share moves to the best entry the current plan left
  // unfunded, resuming a paused task in that state when there is one.
  void fill_next(double w) {
    if (!(w > 0.0)) return;
    const std::size_t s = table_.entries[next_entry_++].state;
    auto& paused = paused_[s];
    if (!paused.empty()) {
      const double now = state_.clock;
      std::uint64_t best = *paused.begin();
      for (std::uint64_t id : paused)
        if (progress_at(tasks_.at(id), now) > progress_at(tasks_.at(best), now)) best = id;
      set_share(tasks_.at(best), w);
      return;
    }
    create_task(s, w);
  }

  SimResult result() const {
    SimResult r;
    r.series = state_.metrics;
    r.clock = state_.clock;
    r.spliced = state_.spliced_count;
    r.completed = state_.completed_count;
    r.escapes = state_.escapes;
    r.reallocations = reallocations_;
    r.tasks_created = created_;
    r.peak_allocated = peak_allocated_;
    return r;
  }

  const MarkovChain& chain_;
  const CostModel& model_;
  Policy policy_;
  std::uint64_t seed_;
  std::uint64_t truth_;  // seeds segment end states
  Rng sched_;            // scheduler-side sampling
  SimState state_;
  std::size_t slots_ = 0;

  std::map<std::uint64_t, Task> tasks_;
  std::set<std::pair<double, std::uint64_t>> active_;
  std::unordered_map<std::size_t, std::set<std::uint64_t>> paused_;
  std::unordered_map<std::size_t, std::size_t> pending_count_;
  std::unordered_map<std::size_t, std::uint64_t> generated_;
  double allocated_ = 0.0;
  double peak_allocated_ = 0.0;
  std::uint64_t next_id_ = 0;
  std::size_t created_ = 0;
  std::size_t reallocations_ = 0;
  std::size_t tables_built_ = 0;

  TaskProbabilityTable table_;
  std::vector<double> plan_;
  std::size_t next_entry_ = 0;
};

/// One simulation run.
inline SimResult run_simulation(const MarkovChain& chain, const CostModel& model,
                                const Policy& policy, double wct_limit, std::uint64_t seed,
                                std::size_t start_state = 0) {
  Simulation sim(chain, model, policy, seed, start_state);
  return sim.run(wct_limit);
}

/// Mean spliced count over runs on a shared time grid.
inline std::vector<double> ensemble_mean(const std::vector<SimResult>& runs,
                                         const std::vector<double>& times) {
  std::vector<double> out(times.size(), 0.0);
  if (runs.empty()) return out;
  for (const auto& r : runs)
    for (std::size_t i = 0; i < times.size(); ++i) out[i] += spliced_at(r.series, times[i]);
  for (auto& x : out) x /= static_cast<double>(runs.size());
  return out;
}

}  // namespace specalloc
