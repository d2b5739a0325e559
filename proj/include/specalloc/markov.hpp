#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace specalloc {

enum class Topology { ring1d, lattice3d, complete };

inline const char* to_string(Topology t) {
  switch (t) {
    case Topology::ring1d: return "ring1d";
    case Topology::lattice3d: return "lattice3d";
    case Topology::complete: return "complete";
  }
  return "?";
}

inline Topology parse_topology(const std::string& s) {
  if (s == "ring1d") return Topology::ring1d;
  if (s == "lattice3d") return Topology::lattice3d;
  if (s == "complete") return Topology::complete;
  throw std::invalid_argument("unknown topology: " + s);
}

/// Discrete-time Markov chain over states 0..n-1.
///
/// Either an explicit row-stochastic matrix, or one of the periodic toy
/// topologies described by (topology, n, rho_ii): every state keeps itself
/// with probability rho_ii and otherwise moves to one of its K neighbours
/// uniformly. Toy chains never materialize the n x n matrix.
class MarkovChain {
 public:
  static constexpr double kRowTolerance = 1e-12;

  static MarkovChain dense(std::size_t n, std::vector<double> row_major) {
    if (n == 0) throw std::invalid_argument("MarkovChain: empty chain");
    if (row_major.size() != n * n)
      throw std::invalid_argument("MarkovChain: matrix is not n x n");
    MarkovChain c;
    c.n_ = n;
    c.dense_ = true;
    c.p_ = std::move(row_major);
    c.cum_.resize(n * n);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double x = c.p_[i * n + j];
        if (!(x >= 0.0) || !std::isfinite(x))
          throw std::invalid_argument("MarkovChain: negative or non-finite entry in row " +
                                      std::to_string(i));
        s += x;
        c.cum_[i * n + j] = s;
      }
      if (std::fabs(s - 1.0) > kRowTolerance)
        throw std::invalid_argument("MarkovChain: row " + std::to_string(i) +
                                    " does not sum to 1");
    }
    return c;
  }

  static MarkovChain toy(Topology topo, std::size_t n, double rho_ii) {
    if (n < 3) throw std::invalid_argument("MarkovChain: toy chains need at least 3 states");
    if (!(rho_ii >= 0.0 && rho_ii <= 1.0))
      throw std::invalid_argument("MarkovChain: rho_ii must lie in [0, 1]");
    MarkovChain c;
    c.n_ = n;
    c.topo_ = topo;
    c.rho_ = rho_ii;
    switch (topo) {
      case Topology::ring1d: c.k_ = 2; break;
      case Topology::complete: c.k_ = n - 1; break;
      case Topology::lattice3d: {
        auto side = static_cast<std::size_t>(std::llround(std::cbrt(static_cast<double>(n))));
        if (side * side * side != n)
          throw std::invalid_argument("MarkovChain: lattice3d needs a perfect cube, got " +
                                      std::to_string(n));
        c.side_ = side;
        c.k_ = 6;
        break;
      }
    }
    return c;
  }

  std::size_t size() const { return n_; }
  bool is_dense() const { return dense_; }
  Topology topology() const { return topo_; }
  double rho_ii() const { return rho_; }
  std::size_t degree() const { return k_; }

  /// Neighbour slots of a toy state (may repeat on tiny periodic lattices).
  std::vector<std::size_t> neighbors(std::size_t i) const {
    std::vector<std::size_t> out;
    out.reserve(k_);
    for (std::size_t s = 0; s < k_; ++s) out.push_back(neighbor(i, s));
    return out;
  }

  double transition(std::size_t i, std::size_t j) const {
    check(i);
    check(j);
    if (dense_) return p_[i * n_ + j];
    if (i == j) return rho_;
    double mult = 0.0;
    for (std::size_t s = 0; s < k_; ++s)
      if (neighbor(i, s) == j) mult += 1.0;
    return mult * (1.0 - rho_) / static_cast<double>(k_);
  }

  double self_loop(std::size_t i) const { return dense_ ? p_[i * n_ + i] : rho_; }

  /// Non-zero entries of row i as (column, probability).
  std::vector<std::pair<std::size_t, double>> row(std::size_t i) const {
    check(i);
    std::vector<std::pair<std::size_t, double>> out;
    if (dense_) {
      for (std::size_t j = 0; j < n_; ++j)
        if (p_[i * n_ + j] > 0.0) out.emplace_back(j, p_[i * n_ + j]);
      return out;
    }
    if (rho_ > 0.0) out.emplace_back(i, rho_);
    if (rho_ < 1.0) {
      const double q = (1.0 - rho_) / static_cast<double>(k_);
      for (std::size_t s = 0; s < k_; ++s) {
        const std::size_t j = neighbor(i, s);
        auto it = std::find_if(out.begin(), out.end(), [&](const auto& e) { return e.first == j; });
        if (it == out.end())
          out.emplace_back(j, q);
        else
          it->second += q;
      }
    }
    return out;
  }

  std::vector<double> dense_matrix() const {
    std::vector<double> m(n_ * n_, 0.0);
    for (std::size_t i = 0; i < n_; ++i)
      for (auto [j, p] : row(i)) m[i * n_ + j] = p;
    return m;
  }

  /// One Markov step from i.
  template <typename Rng>
  std::size_t step(std::size_t i, Rng& rng) const {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    if (!dense_) {
      if (u(rng) < rho_) return i;
      return jump(i, rng);
    }
    return sample_row(i, u(rng), rng);
  }

  /// One step from i conditioned on leaving i. Requires self_loop(i) < 1.
  template <typename Rng>
  std::size_t jump(std::size_t i, Rng& rng) const {
    if (!dense_) {
      std::uniform_int_distribution<std::size_t> pick(0, k_ - 1);
      return neighbor(i, pick(rng));
    }
    const double stay = p_[i * n_ + i];
    std::uniform_real_distribution<double> u(0.0, 1.0 - stay);
    double x = u(rng);
    const double before = i == 0 ? 0.0 : cum_[i * n_ + i - 1];
    if (x >= before) x += stay;
    const std::size_t j = sample_row(i, x, rng);
    if (j != i) return j;
    // Rounding landed on the diagonal; take the nearest off-diagonal mass.
    for (std::size_t d = 1; d < n_; ++d) {
      if (i + d < n_ && p_[i * n_ + i + d] > 0.0) return i + d;
      if (d <= i && p_[i * n_ + i - d] > 0.0) return i - d;
    }
    return i;
  }

 private:
  MarkovChain() = default;

  void check(std::size_t i) const {
    if (i >= n_) throw std::out_of_range("MarkovChain: state index " + std::to_string(i));
  }

  template <typename Rng>
  std::size_t sample_row(std::size_t i, double x, Rng&) const {
    auto first = cum_.begin() + static_cast<std::ptrdiff_t>(i * n_);
    auto last = first + static_cast<std::ptrdiff_t>(n_);
    auto it = std::upper_bound(first, last, x);
    if (it == last) --it;
    // skip zero-probability columns that share the cumulative value
    auto j = static_cast<std::size_t>(it - first);
    while (j + 1 < n_ && p_[i * n_ + j] == 0.0) ++j;
    return j;
  }

  std::size_t neighbor(std::size_t i, std::size_t slot) const {
    switch (topo_) {
      case Topology::ring1d: return slot == 0 ? (i + n_ - 1) % n_ : (i + 1) % n_;
      case Topology::complete: return slot < i ? slot : slot + 1;
      case Topology::lattice3d: {
        const std::size_t L = side_;
        std::size_t x = i % L, y = (i / L) % L, z = i / (L * L);
        const bool up = slot % 2 == 1;
        auto wrap = [&](std::size_t v) { return up ? (v + 1) % L : (v + L - 1) % L; };
        if (slot < 2)
          x = wrap(x);
        else if (slot < 4)
          y = wrap(y);
        else
          z = wrap(z);
        return x + L * (y + L * z);
      }
    }
    return i;
  }

  std::size_t n_ = 0;
  bool dense_ = false;
  std::vector<double> p_, cum_;
  Topology topo_ = Topology::complete;
  double rho_ = 0.0;
  std::size_t k_ = 0;
  std::size_t side_ = 0;
};

inline MarkovChain build_toy_chain(Topology topo, std::size_t n_states, double rho_ii) {
  return MarkovChain::toy(topo, n_states, rho_ii);
}

/// f_ij^(n), n = 1..n_max: probability that the first passage i -> j takes n steps.
inline std::vector<double> first_passage(const MarkovChain& chain, std::size_t i, std::size_t j,
                                         std::size_t n_max) {
  const std::size_t n = chain.size();
  if (i >= n || j >= n) throw std::out_of_range("first_passage: state index out of range");
  if (i == j) throw std::invalid_argument("first_passage: i == j, use first_return");
  if (n_max < 1) throw std::invalid_argument("first_passage: n_max must be >= 1");
  std::vector<std::vector<std::pair<std::size_t, double>>> rows(n);
  for (std::size_t k = 0; k < n; ++k) rows[k] = chain.row(k);

  // cur[k] = f_kj^(step) for every k
  std::vector<double> cur(n, 0.0), next(n);
  for (std::size_t k = 0; k < n; ++k) cur[k] = chain.transition(k, j);
  std::vector<double> f(n_max);
  f[0] = cur[i];
  for (std::size_t step = 2; step <= n_max; ++step) {
    for (std::size_t k = 0; k < n; ++k) {
      double s = 0.0;
      for (auto [l, p] : rows[k])
        if (l != j) s += p * cur[l];
      next[k] = s;
    }
    std::swap(cur, next);
    f[step - 1] = cur[i];
  }
  return f;
}

/// First-return probabilities f_ii^(n) and their running sums F_ii^(n).
struct ReturnProbabilities {
  std::vector<double> f;           // f[n-1] = f_ii^(n)
  std::vector<double> cumulative;  // cumulative[n-1] = F_ii^(n)

  /// F_ii^(n) with F_ii^(0) = 0.
  double up_to(std::size_t n) const { return n == 0 ? 0.0 : cumulative[n - 1]; }
};

/// f_ii^(n) = [M^n]_ii - sum_{k<n} f_ii^(k) [M^(n-k)]_ii.
inline ReturnProbabilities first_return(const MarkovChain& chain, std::size_t i,
                                        std::size_t n_max) {
  const std::size_t n = chain.size();
  if (i >= n) throw std::out_of_range("first_return: state index out of range");
  if (n_max < 1) throw std::invalid_argument("first_return: n_max must be >= 1");
  std::vector<std::vector<std::pair<std::size_t, double>>> rows(n);
  for (std::size_t k = 0; k < n; ++k) rows[k] = chain.row(k);

  // diag[m] = [M^m]_ii, propagated as the row vector e_i^T M^m
  std::vector<double> diag(n_max + 1, 0.0);
  std::vector<double> r(n, 0.0), next(n);
  r[i] = 1.0;
  diag[0] = 1.0;
  for (std::size_t m = 1; m <= n_max; ++m) {
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t k = 0; k < n; ++k) {
      if (r[k] == 0.0) continue;
      for (auto [l, p] : rows[k]) next[l] += r[k] * p;
    }
    std::swap(r, next);
    diag[m] = r[i];
  }

  ReturnProbabilities out;
  out.f.resize(n_max);
  out.cumulative.resize(n_max);
  double acc = 0.0;
  for (std::size_t m = 1; m <= n_max; ++m) {
    double v = diag[m];
    for (std::size_t k = 1; k < m; ++k) v -= out.f[k - 1] * diag[m - k];
    out.f[m - 1] = v;
    acc += v;
    out.cumulative[m - 1] = acc;
  }
  return out;
}

/// Distribution of v_j, the number of visits to j among steps 1..horizon of a
/// chain started in i. Built from first passage into j composed with first
/// returns to j; rows of the (visits, remaining horizon) table are memoized and
/// extended on demand.
class VisitCounter {
 public:
  VisitCounter(const MarkovChain& chain, std::size_t i, std::size_t j, std::size_t horizon)
      : horizon_(horizon) {
    if (i >= chain.size() || j >= chain.size())
      throw std::out_of_range("VisitCounter: state index out of range");
    if (horizon == 0) return;
    ret_ = first_return(chain, j, horizon);
    into_ = (i == j) ? ret_.f : first_passage(chain, i, j, horizon);
    double reach = 0.0;
    for (double x : into_) reach += x;
    reach_ = reach;
  }

  std::size_t horizon() const { return horizon_; }

  /// P_i(v_j = m | horizon)
  double exactly(std::size_t m) {
    if (horizon_ == 0) return m == 0 ? 1.0 : 0.0;
    if (m == 0) return clamp01(1.0 - reach_);
    if (m > horizon_) return 0.0;
    const auto& q = row(m - 1);
    double s = 0.0;
    for (std::size_t k = 1; k <= horizon_; ++k) s += into_[k - 1] * q[horizon_ - k];
    return clamp01(s);
  }

  /// P_i(v_j > s | horizon)
  double exceeds(std::size_t s) {
    if (horizon_ == 0) return 0.0;
    if (s == 0) return clamp01(reach_);
    if (s >= horizon_) return 0.0;
    double acc = exactly(0);
    for (std::size_t m = 1; m <= s; ++m) acc += exactly(m);
    return clamp01(1.0 - acc);
  }

 private:
  static double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

  // q[L] = P_j(exactly r visits to j in the next L steps), L = 0..horizon
  const std::vector<double>& row(std::size_t r) {
    while (table_.size() <= r) {
      std::vector<double> q(horizon_ + 1, 0.0);
      if (table_.empty()) {
        for (std::size_t L = 0; L <= horizon_; ++L) q[L] = 1.0 - ret_.up_to(L);
      } else {
        const auto& prev = table_.back();
        for (std::size_t L = 1; L <= horizon_; ++L) {
          double s = 0.0;
          for (std::size_t k = 1; k <= L; ++k) s += ret_.f[k - 1] * prev[L - k];
          q[L] = s;
        }
      }
      table_.push_back(std::move(q));
    }
    return table_[r];
  }

  std::size_t horizon_;
  ReturnProbabilities ret_;
  std::vector<double> into_;
  double reach_ = 0.0;
  std::vector<std::vector<double>> table_;
};

/// P_i(v_j = m | horizon): exactly m visits to j in steps 1..horizon.
inline double visit_count_prob(const MarkovChain& chain, std::size_t i, std::size_t j,
                               std::size_t m, std::size_t horizon) {
  if (horizon < 1) throw std::invalid_argument("visit_count_prob: horizon must be >= 1");
  return VisitCounter(chain, i, j, horizon).exactly(m);
}

/// P_i(v_j > s | horizon).
inline double exceed_prob(const MarkovChain& chain, std::size_t i, std::size_t j, std::size_t s,
                          std::size_t horizon) {
  if (horizon < 1) throw std::invalid_argument("exceed_prob: horizon must be >= 1");
  return VisitCounter(chain, i, j, horizon).exceeds(s);
}

}  // namespace specalloc
