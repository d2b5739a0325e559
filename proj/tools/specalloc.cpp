// Command-line front end: fits cost models, generates task distributions,
// allocates, sweeps budgets, runs the splicing simulator and prints MaxP tables.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "specalloc/allocator.hpp"
#include "specalloc/cost_model.hpp"
#include "specalloc/io.hpp"
#include "specalloc/markov.hpp"
#include "specalloc/maxp.hpp"
#include "specalloc/splice_sim.hpp"
#include "specalloc/taskdist.hpp"

namespace fs = std::filesystem;
using namespace specalloc;
using io::json;

namespace {

constexpr const char* kVersion = "0.1.0";
constexpr const char* kOutDirEnv = "SPECALLOC_OUT_DIR";

struct Common {
  std::uint64_t seed = 0;
  std::string out_dir;
  std::string model_path;
};

std::string default_out_dir() {
  const char* env = std::getenv(kOutDirEnv);
  return env && *env ? env : ".";
}

void add_common(CLI::App* app, Common& c, bool with_model) {
  app->add_option("--seed", c.seed, "RNG seed")->capture_default_str();
  app->add_option("--out-dir", c.out_dir,
                  std::string("Output directory (default: $") + kOutDirEnv + " or .)");
  if (with_model)
    app->add_option("--model", c.model_path, "Cost model JSON (default: built-in benchmark fit)")
        ->check(CLI::ExistingFile);
}

fs::path out_dir(const Common& c) {
  fs::path p = c.out_dir.empty() ? fs::path(default_out_dir()) : fs::path(c.out_dir);
  fs::create_directories(p);
  return p;
}

CostModel load_model(const Common& c) {
  return c.model_path.empty() ? default_cost_model() : io::read_model(c.model_path);
}

std::string fmt(double x) {
  std::ostringstream s;
  s.precision(17);
  s << x;
  return s.str();
}

// Everything needed to regenerate a command's outputs.
void write_manifest(const fs::path& dir, const std::string& command, const Common& c,
                    json config, const std::vector<std::string>& outputs) {
  json m = {{"tool", "specalloc"},
            {"version", kVersion},
            {"command", command},
            {"seed", c.seed},
            {"model", c.model_path.empty() ? json("builtin") : json(c.model_path)},
            {"config", std::move(config)},
            {"outputs", outputs}};
  io::write_text((dir / (command + ".manifest.json")).string(), m.dump(2) + "\n");
}

// "delta:<p_b>", "beta:<alpha>,<beta>" or "ones"
DistributionSpec parse_dist(const std::string& s, std::uint64_t seed, double target_sum) {
  DistributionSpec spec;
  const auto colon = s.find(':');
  const std::string kind = s.substr(0, colon);
  const std::string args = colon == std::string::npos ? "" : s.substr(colon + 1);
  auto num = [&](const std::string& x) {
    std::size_t used = 0;
    const double v = std::stod(x, &used);
    if (used != x.size()) throw CLI::ValidationError("--dist", "bad number '" + x + "'");
    return v;
  };
  try {
    if (kind == "ones") {
      spec = DistributionSpec::delta(1.0, seed);
    } else if (kind == "delta") {
      spec = DistributionSpec::delta(num(args), seed);
    } else if (kind == "beta") {
      const auto comma = args.find(',');
      if (comma == std::string::npos) throw CLI::ValidationError("--dist", "beta needs alpha,beta");
      spec = DistributionSpec::beta_shape(num(args.substr(0, comma)), num(args.substr(comma + 1)),
                                          seed);
    } else {
      throw CLI::ValidationError("--dist", "unknown distribution '" + s + "'");
    }
  } catch (const std::logic_error&) {
    throw CLI::ValidationError("--dist", "cannot parse '" + s + "'");
  }
  spec.target_sum = target_sum;
  return spec;
}

// "10,100,1000" or "log:<lo>:<hi>:<count>"
std::vector<double> parse_budgets(const std::string& s) {
  std::vector<double> out;
  try {
    if (s.rfind("log:", 0) == 0) {
      std::vector<std::string> f;
      std::stringstream in(s.substr(4));
      std::string x;
      while (std::getline(in, x, ':')) f.push_back(x);
      if (f.size() != 3) throw CLI::ValidationError("--budgets", "expected log:<lo>:<hi>:<count>");
      const double lo = std::stod(f[0]), hi = std::stod(f[1]);
      const int n = std::stoi(f[2]);
      if (!(lo > 0 && hi >= lo && n >= 1)) throw CLI::ValidationError("--budgets", "bad range");
      for (int i = 0; i < n; ++i)
        out.push_back(n == 1 ? lo : lo * std::pow(hi / lo, static_cast<double>(i) / (n - 1)));
    } else {
      std::stringstream in(s);
      std::string x;
      while (std::getline(in, x, ',')) out.push_back(std::stod(x));
    }
  } catch (const std::logic_error&) {
    throw CLI::ValidationError("--budgets", "cannot parse '" + s + "'");
  }
  if (out.empty()) throw CLI::ValidationError("--budgets", "no budgets");
  for (double b : out)
    if (!(b > 0)) throw CLI::ValidationError("--budgets", "budgets must be positive");
  return out;
}

struct ChainArgs {
  std::string topology = "ring1d";
  std::size_t states = 8000;
  double rho = 0.99;
  std::string chain_csv;

  void add(CLI::App* app) {
    app->add_option("--topology", topology, "ring1d, lattice3d or complete")
        ->check(CLI::IsMember({"ring1d", "lattice3d", "complete"}))
        ->capture_default_str();
    app->add_option("--states", states, "Number of states")->capture_default_str();
    app->add_option("--rho-ii", rho, "Self-transition probability")->capture_default_str();
    app->add_option("--chain", chain_csv, "Dense transition matrix CSV instead of a toy model")
        ->check(CLI::ExistingFile);
  }
  MarkovChain build() const {
    if (!chain_csv.empty()) return io::read_chain_csv(chain_csv);
    return build_toy_chain(parse_topology(topology), states, rho);
  }
  json to_json() const {
    if (!chain_csv.empty()) return {{"chain", chain_csv}};
    return {{"topology", topology}, {"states", states}, {"rho_ii", rho}};
  }
};

unsigned default_jobs() { return std::max(1u, std::thread::hardware_concurrency()); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Probability-aware resource allocation for speculative tasks"};
  app.set_version_flag("--version", std::string("specalloc ") + kVersion);
  app.require_subcommand(1);

  // fit
  Common fit_c;
  std::string bench;
  std::string weighting = "relative";
  double w_floor = CostModel::kDefaultFloor, g_ref = kBenchmarkCoefficients.g;
  auto* fit = app.add_subcommand("fit", "Fit T(w) to benchmark timings");
  add_common(fit, fit_c, false);
  fit->add_option("--bench", bench, "CSV with header w,t_seconds")->required()->check(CLI::ExistingFile);
  fit->add_option("--weighting", weighting, "relative or absolute least squares")
      ->check(CLI::IsMember({"relative", "absolute"}))
      ->capture_default_str();
  fit->add_option("--w-floor", w_floor, "Lowest admissible w")->capture_default_str();
  fit->add_option("--g-ref", g_ref, "Reference g (g is not separately identifiable)")
      ->capture_default_str();

  // gen-dist
  Common gen_c;
  std::string dist_spec = "delta:0.01";
  double target_sum = 1000.0;
  auto* gen = app.add_subcommand("gen-dist", "Sample a task-probability distribution");
  add_common(gen, gen_c, false);
  gen->add_option("--dist", dist_spec, "delta:<p_b>, beta:<alpha>,<beta> or ones")
      ->capture_default_str();
  gen->add_option("--target-sum", target_sum, "Stop once the probabilities sum to this")
      ->capture_default_str();

  // allocate
  Common alloc_c;
  std::string probs;
  double budget = 0.0;
  auto* alloc = app.add_subcommand("allocate", "Optimal allocation for a probability file");
  add_common(alloc, alloc_c, true);
  alloc->add_option("--probs", probs, "Probabilities, one per line or a JSON array")
      ->required()
      ->check(CLI::ExistingFile);
  alloc->add_option("--budget", budget, "Resource budget N")->required()->check(CLI::PositiveNumber);

  // sweep
  Common sweep_c;
  std::string sweep_dist = "delta:0.01", budgets_arg = "log:10:100000:20";
  double sweep_sum = 1000.0;
  int sweep_seeds = 1;
  auto* sweep = app.add_subcommand("sweep", "Boost and throughputs over a range of budgets");
  add_common(sweep, sweep_c, true);
  sweep->add_option("--dist", sweep_dist, "delta:<p_b>, beta:<alpha>,<beta> or ones")
      ->capture_default_str();
  sweep->add_option("--budgets", budgets_arg, "Comma list or log:<lo>:<hi>:<count>")
      ->capture_default_str();
  sweep->add_option("--target-sum", sweep_sum, "Distribution total")->capture_default_str();
  sweep->add_option("--seeds", sweep_seeds, "Average over this many distributions")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  // simulate
  Common sim_c;
  ChainArgs sim_chain;
  std::string policy_name = "ve", trigger_name = "transition";
  Policy pol;
  double wct_limit = 10000.0, grid_step = 0.0;
  int sim_seeds = 1;
  std::size_t start_state = 0;
  unsigned jobs = default_jobs();
  auto* sim = app.add_subcommand("simulate", "Run the trajectory-splicing simulator");
  add_common(sim, sim_c, true);
  sim_chain.add(sim);
  sim->add_option("--policy", policy_name, "ve, maxp, maxp-const, maxp-wmax or maxp-opt")
      ->check(CLI::IsMember({"ve", "maxp", "maxp-const", "maxp-wmax", "maxp-opt"}))
      ->capture_default_str();
  sim->add_option("--budget", pol.budget, "Resource budget N")->check(CLI::PositiveNumber)
      ->capture_default_str();
  sim->add_option("--wct-limit", wct_limit, "Simulated wall-clock seconds")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sim->add_option("--seeds", sim_seeds, "Number of runs (seeds seed .. seed+k-1)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sim->add_option("--trigger", trigger_name, "transition, every-completion or interval")
      ->check(CLI::IsMember({"transition", "every-completion", "interval"}))
      ->capture_default_str();
  sim->add_option("--interval", pol.interval, "Seconds between reallocations (interval trigger)");
  sim->add_option("--preemption-penalty", pol.preemption_penalty,
                  "Stall in seconds whenever a running task changes share")
      ->capture_default_str();
  sim->add_option("--horizon", pol.horizon, "Probability-table horizon in segments (0 = auto)")
      ->capture_default_str();
  sim->add_option("--samples", pol.n_samples, "Monte Carlo trajectories per table")
      ->capture_default_str();
  sim->add_option("--start-state", start_state, "Initial trajectory state")->capture_default_str();
  sim->add_option("--grid-step", grid_step, "Ensemble-mean time step (default wct/200)");
  sim->add_option("--jobs", jobs, "Simulations run concurrently");

  // maxp-table
  Common tab_c;
  ChainArgs tab_chain;
  std::size_t current = 0, horizon = 0, samples = 1000, max_entries = 0;
  double tab_budget = 5000.0, cutoff = 1e-6;
  bool analytic = false;
  auto* tab = app.add_subcommand("maxp-table", "Task probability table for an empty database");
  add_common(tab, tab_c, false);
  tab_chain.add(tab);
  tab->add_option("--current", current, "Current trajectory state")->capture_default_str();
  tab->add_option("--horizon", horizon, "Horizon in segments (0 = auto from --budget)")
      ->capture_default_str();
  tab->add_option("--budget", tab_budget, "Budget used for the automatic horizon")
      ->capture_default_str();
  tab->add_option("--samples", samples, "Monte Carlo trajectories")->capture_default_str();
  tab->add_option("--cutoff", cutoff, "Drop entries below this probability")->capture_default_str();
  tab->add_option("--max-entries", max_entries, "Keep only the top entries (0 = all)");
  tab->add_flag("--analytic", analytic, "Exact recursion instead of Monte Carlo (small chains)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*fit) {
      FitOptions opt;
      opt.weighting = weighting == "absolute" ? FitWeighting::absolute : FitWeighting::relative;
      opt.w_floor = w_floor;
      opt.g_ref = g_ref;
      const auto samples_in = io::read_benchmark_csv(bench);
      const auto m = fit_cost_model(samples_in, opt);
      const auto dir = out_dir(fit_c);
      io::write_text((dir / "model.json").string(), io::model_to_json(m).dump(2) + "\n");
      write_manifest(dir, "fit", fit_c,
                     {{"bench", bench}, {"weighting", weighting}, {"w_floor", w_floor},
                      {"g_ref", g_ref}},
                     {"model.json"});
      std::cout << "w_max " << fmt(m.w_max()) << "  t_min " << fmt(m.t_min()) << "  w_lo "
                << fmt(m.w_lo()) << "\n";
    } else if (*gen) {
      const auto d = sample_distribution(parse_dist(dist_spec, gen_c.seed, target_sum));
      const auto dir = out_dir(gen_c);
      std::ostringstream s;
      s.precision(17);
      for (double p : d.values()) s << p << "\n";
      io::write_text((dir / "dist.txt").string(), s.str());
      write_manifest(dir, "gen-dist", gen_c, {{"dist", dist_spec}, {"target_sum", target_sum}},
                     {"dist.txt"});
      std::cout << d.size() << " tasks, sum " << fmt(d.sum()) << "\n";
    } else if (*alloc) {
      const auto m = load_model(alloc_c);
      const auto d = io::read_probabilities(probs);
      const auto opt = optimal_allocation(d, budget, m);
      const auto naive = naive_allocation(d, budget, m);
      const auto cst = best_constant_allocation(d, budget, m);
      auto j = io::allocation_to_json(d, opt, budget);
      j["naive_throughput"] = naive.expected_throughput;
      j["best_constant"] = {{"w", cst.w_best}, {"tasks", cst.tasks}, {"throughput", cst.throughput}};
      j["boost"] = opt.expected_throughput / naive.expected_throughput;
      const auto dir = out_dir(alloc_c);
      io::write_text((dir / "allocation.json").string(), j.dump(2) + "\n");
      write_manifest(dir, "allocate", alloc_c, {{"probs", probs}, {"budget", budget}},
                     {"allocation.json"});
      std::cout << "m_star " << opt.m_star << "  throughput " << fmt(opt.expected_throughput)
                << "  boost " << fmt(j["boost"].get<double>()) << "\n";
    } else if (*sweep) {
      const auto m = load_model(sweep_c);
      const auto budgets = parse_budgets(budgets_arg);
      std::vector<std::array<double, 5>> acc(budgets.size(), {0, 0, 0, 0, 0});
      for (int s = 0; s < sweep_seeds; ++s) {
        const auto d = sample_distribution(
            parse_dist(sweep_dist, sweep_c.seed + static_cast<std::uint64_t>(s), sweep_sum));
        for (std::size_t i = 0; i < budgets.size(); ++i) {
          const double r_opt = optimal_allocation(d, budgets[i], m).expected_throughput;
          const double r_naive = naive_allocation(d, budgets[i], m).expected_throughput;
          const auto cst = best_constant_allocation(d, budgets[i], m);
          const double row[5] = {r_opt / r_naive, r_opt, r_naive, cst.throughput, cst.w_best};
          for (int k = 0; k < 5; ++k) acc[i][k] += row[k] / sweep_seeds;
        }
      }
      std::ostringstream s;
      s.precision(17);
      s << "N,boost,throughput_opt,throughput_naive,throughput_const,w_best\n";
      for (std::size_t i = 0; i < budgets.size(); ++i)
        s << budgets[i] << ',' << acc[i][0] << ',' << acc[i][1] << ',' << acc[i][2] << ','
          << acc[i][3] << ',' << acc[i][4] << '\n';
      const auto dir = out_dir(sweep_c);
      io::write_text((dir / "sweep.csv").string(), s.str());
      write_manifest(dir, "sweep", sweep_c,
                     {{"dist", sweep_dist}, {"budgets", budgets}, {"target_sum", sweep_sum},
                      {"seeds", sweep_seeds}},
                     {"sweep.csv"});
      std::cout << s.str();
    } else if (*sim) {
      const auto m = load_model(sim_c);
      const auto chain = sim_chain.build();
      pol.kind = parse_policy(policy_name);
      pol.trigger = parse_trigger(trigger_name);
      pol.validate();
      std::vector<SimResult> runs(static_cast<std::size_t>(sim_seeds));
      std::vector<std::string> errors(runs.size());
      const unsigned workers = std::clamp<unsigned>(jobs, 1, static_cast<unsigned>(sim_seeds));
      std::vector<std::thread> pool;
      for (unsigned w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
          for (std::size_t k = w; k < runs.size(); k += workers) {
            try {
              runs[k] = run_simulation(chain, m, pol, wct_limit, sim_c.seed + k, start_state);
            } catch (const std::exception& e) {
              errors[k] = e.what();
            }
          }
        });
      for (auto& t : pool) t.join();
      for (const auto& e : errors)
        if (!e.empty()) throw std::runtime_error(e);

      const auto dir = out_dir(sim_c);
      std::vector<std::string> outputs;
      for (std::size_t k = 0; k < runs.size(); ++k) {
        const std::string name =
            "sim_" + policy_name + "_seed" + std::to_string(sim_c.seed + k) + ".csv";
        std::ostringstream s;
        io::write_series_csv(s, runs[k].series);
        io::write_text((dir / name).string(), s.str());
        outputs.push_back(name);
      }
      const double step = grid_step > 0 ? grid_step : wct_limit / 200.0;
      std::vector<double> grid;
      for (int i = 0;; ++i) {
        const double t = std::min(wct_limit, i * step);
        grid.push_back(t);
        if (t >= wct_limit) break;
      }
      std::ostringstream s;
      io::write_mean_csv(s, grid, ensemble_mean(runs, grid));
      const std::string mean_name = "sim_" + policy_name + "_mean.csv";
      io::write_text((dir / mean_name).string(), s.str());
      outputs.push_back(mean_name);
      json cfg = sim_chain.to_json();
      cfg.update({{"policy", policy_name},
                  {"budget", pol.budget},
                  {"wct_limit", wct_limit},
                  {"seeds", sim_seeds},
                  {"trigger", trigger_name},
                  {"interval", pol.interval},
                  {"preemption_penalty", pol.preemption_penalty},
                  {"horizon", pol.horizon},
                  {"samples", pol.n_samples},
                  {"start_state", start_state},
                  {"grid_step", step}});
      write_manifest(dir, "simulate", sim_c, cfg, outputs);
      double mean = 0.0;
      for (const auto& r : runs) mean += static_cast<double>(r.spliced) / runs.size();
      std::cout << policy_name << ": mean spliced " << fmt(mean) << " at " << fmt(wct_limit)
                << " s over " << runs.size() << " run(s)\n";
    } else if (*tab) {
      const auto chain = tab_chain.build();
      const std::size_t h = horizon ? horizon : default_horizon(chain, current, tab_budget);
      MaxPOptions opt;
      opt.cutoff = cutoff;
      opt.n_samples = samples;
      opt.seed = tab_c.seed;
      if (max_entries) opt.max_entries = max_entries;
      const auto t = analytic ? maxp_analytic(chain, current, {}, h, opt)
                              : maxp_monte_carlo(chain, current, {}, h, opt);
      std::ostringstream s;
      s.precision(17);
      s << "rank,state,ordinal,p\n";
      for (std::size_t i = 0; i < t.size(); ++i)
        s << i + 1 << ',' << t.entries[i].state << ',' << t.entries[i].ordinal << ','
          << t.entries[i].p << '\n';
      const auto dir = out_dir(tab_c);
      io::write_text((dir / "maxp_table.csv").string(), s.str());
      json cfg = tab_chain.to_json();
      cfg.update({{"current", current},
                  {"horizon", h},
                  {"samples", samples},
                  {"cutoff", cutoff},
                  {"max_entries", max_entries},
                  {"analytic", analytic}});
      write_manifest(dir, "maxp-table", tab_c, cfg, {"maxp_table.csv"});
      std::cout << t.size() << " entries, horizon " << h << "\n";
    }
  } catch (const CLI::ValidationError& e) {
    std::cerr << "specalloc: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "specalloc: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
