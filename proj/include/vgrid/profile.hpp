#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "vgrid/errors.hpp"
#include "vgrid/feeder.hpp"
#include "vgrid/rng.hpp"

namespace vgrid {

/// Fixed injections of one time slot, indexed bus-1 (substation excluded).
struct SlotInjections {
  Eigen::VectorXd p_c;  // active consumption
  Eigen::VectorXd q_c;  // reactive consumption
  Eigen::VectorXd p_g;  // PV active generation
};

/// Exogenous consumption/generation trajectories over n_intervals x
/// slots_per_interval slots. Values are constant within a slot. Immutable
/// after construction.
class ScenarioProfile {
 public:
  ScenarioProfile(const FeederModel& model, int n_intervals,
                  int slots_per_interval, std::vector<double> p_c,
                  std::vector<double> q_c, std::vector<double> p_g)
      : n_intervals_(n_intervals),
        slots_(slots_per_interval),
        n_buses_(model.n_buses()),
        p_c_(std::move(p_c)),
        q_c_(std::move(q_c)),
        p_g_(std::move(p_g)) {
    validate(model);
  }

  static ScenarioProfile zeros(const FeederModel& model, int n_intervals,
                               int slots_per_interval) {
    const size_t sz = static_cast<size_t>(n_intervals) * slots_per_interval *
                      model.n_buses();
    return ScenarioProfile(model, n_intervals, slots_per_interval,
                           std::vector<double>(sz, 0.0),
                           std::vector<double>(sz, 0.0),
                           std::vector<double>(sz, 0.0));
  }

  int n_intervals() const { return n_intervals_; }
  int slots_per_interval() const { return slots_; }
  int n_buses() const { return n_buses_; }

  // tau and t are 1-based, bus in 1..N.
  double p_c(int tau, int t, int bus) const { return p_c_[at(tau, t, bus)]; }
  double q_c(int tau, int t, int bus) const { return q_c_[at(tau, t, bus)]; }
  double p_g(int tau, int t, int bus) const { return p_g_[at(tau, t, bus)]; }

  SlotInjections slot(int tau, int t) const {
    SlotInjections s;
    s.p_c.resize(n_buses_);
    s.q_c.resize(n_buses_);
    s.p_g.resize(n_buses_);
    const size_t base = at(tau, t, 1);
    for (int b = 0; b < n_buses_; ++b) {
      s.p_c[b] = p_c_[base + b];
      s.q_c[b] = q_c_[base + b];
      s.p_g[b] = p_g_[base + b];
    }
    return s;
  }

  /// Per-bus mean net active injection p_g - p_c over interval tau's slots.
  Eigen::VectorXd mean_net_p(int tau) const {
    Eigen::VectorXd m = Eigen::VectorXd::Zero(n_buses_);
    for (int t = 1; t <= slots_; ++t) {
      const size_t base = at(tau, t, 1);
      for (int b = 0; b < n_buses_; ++b)
        m[b] += p_g_[base + b] - p_c_[base + b];
    }
    return m / static_cast<double>(slots_);
  }

 private:
  size_t at(int tau, int t, int bus) const {
    return (static_cast<size_t>(tau - 1) * slots_ + (t - 1)) * n_buses_ +
           (bus - 1);
  }

  void validate(const FeederModel& model) const {
    if (n_intervals_ < 1 || slots_ < 1)
      throw ValidationError("profile: shape must be at least 1x1");
    const size_t sz =
        static_cast<size_t>(n_intervals_) * slots_ * n_buses_;
    if (p_c_.size() != sz || q_c_.size() != sz || p_g_.size() != sz)
      throw ValidationError("profile: array size mismatch");
    for (int tau = 1; tau <= n_intervals_; ++tau)
      for (int t = 1; t <= slots_; ++t)
        for (int bus = 1; bus <= n_buses_; ++bus) {
          const size_t k = at(tau, t, bus);
          if (p_c_[k] < 0.0 || q_c_[k] < 0.0 || p_g_[k] < 0.0)
            throw ValidationError("profile: negative entry at tau=" +
                                  std::to_string(tau) + ",t=" +
                                  std::to_string(t) + ",bus=" +
                                  std::to_string(bus));
          if (model.is_capacitor_bus(bus) &&
              (p_c_[k] != 0.0 || q_c_[k] != 0.0 || p_g_[k] != 0.0))
            throw ValidationError(
                "profile: load/generation declared at capacitor bus " +
                std::to_string(bus));
          const int j = model.inverter_index(bus);
          const double p_cap = j < 0 ? 0.0 : model.inverters()[j].p_cap_pu;
          if (p_g_[k] > p_cap + 1e-12)
            throw ValidationError(
                "profile: p_g exceeds inverter capacity at tau=" +
                std::to_string(tau) + ",t=" + std::to_string(t) + ",bus=" +
                std::to_string(bus));
        }
  }

  int n_intervals_, slots_, n_buses_;
  std::vector<double> p_c_, q_c_, p_g_;
};

/// Loads the `tau,t,bus,p_c,q_c,p_g` CSV. Rows may appear in any order;
/// missing (tau,t,bus) entries are zero. When n_intervals/slots are zero the
/// shape is inferred from the largest indices present (the file must then be
/// non-empty).
inline ScenarioProfile load_profiles(const std::string& path,
                                     const FeederModel& model,
                                     int n_intervals = 0,
                                     int slots_per_interval = 0) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open profile file: " + path);
  std::string header;
  if (!std::getline(in, header))
    throw ParseError("profile csv: missing header");
  auto strip = [](std::string s) {
    s.erase(s.find_last_not_of(" \r\n") + 1);
    return s;
  };
  if (strip(header) != "tau,t,bus,p_c,q_c,p_g")
    throw ParseError("profile csv: unexpected header '" + strip(header) + "'");

  struct Row {
    int tau, t, bus;
    double p_c, q_c, p_g;
  };
  std::vector<Row> rows;
  std::string line;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip(line);
    if (line.empty()) continue;
    Row r;
    char c1, c2, c3, c4, c5;
    std::istringstream ls(line);
    if (!(ls >> r.tau >> c1 >> r.t >> c2 >> r.bus >> c3 >> r.p_c >> c4 >>
          r.q_c >> c5 >> r.p_g) ||
        c1 != ',' || c2 != ',' || c3 != ',' || c4 != ',' || c5 != ',')
      throw ParseError("profile csv: malformed line " +
                       std::to_string(line_no));
    if (r.tau < 1 || r.t < 1)
      throw ParseError("profile csv: tau and t are 1-based (line " +
                       std::to_string(line_no) + ")");
    if (r.bus < 1 || r.bus > model.n_buses())
      throw ValidationError("profile csv: bus " + std::to_string(r.bus) +
                            " out of range (line " + std::to_string(line_no) +
                            ")");
    rows.push_back(r);
  }

  int max_tau = 0, max_t = 0;
  for (const Row& r : rows) {
    max_tau = std::max(max_tau, r.tau);
    max_t = std::max(max_t, r.t);
  }
  if (n_intervals == 0) n_intervals = max_tau;
  if (slots_per_interval == 0) slots_per_interval = max_t;
  if (n_intervals < 1 || slots_per_interval < 1)
    throw ParseError("profile csv: empty file and no declared shape");
  if (max_tau > n_intervals || max_t > slots_per_interval)
    throw ValidationError("profile csv: row outside declared shape");

  const int n = model.n_buses();
  const size_t sz =
      static_cast<size_t>(n_intervals) * slots_per_interval * n;
  std::vector<double> p_c(sz, 0.0), q_c(sz, 0.0), p_g(sz, 0.0);
  for (const Row& r : rows) {
    const size_t k =
        (static_cast<size_t>(r.tau - 1) * slots_per_interval + (r.t - 1)) * n +
        (r.bus - 1);
    p_c[k] = r.p_c;
    q_c[k] = r.q_c;
    p_g[k] = r.p_g;
  }
  return ScenarioProfile(model, n_intervals, slots_per_interval, std::move(p_c),
                         std::move(q_c), std::move(p_g));
}

/// Finite-state Markov chain driving per-bus consumption and generation.
/// One shared transition matrix; per-bus base magnitudes scale the common
/// level grid. Each (bus, quantity) pair evolves as an independent
/// realization of the chain, stepped once per slot.
struct ChainSpec {
  int n_intervals = 0;
  int slots_per_interval = 0;
  std::vector<double> levels;                   // state -> multiplier
  std::vector<std::vector<double>> transition;  // row-stochastic
  std::vector<double> load_base;  // per bus 1..N, active consumption at level 1
  std::vector<double> gen_base;   // per bus 1..N, PV output at level 1
  double power_factor = 0.8;      // q_c = p_c * tan(acos(pf))
};

inline void validate_chain(const ChainSpec& spec) {
  const size_t s = spec.levels.size();
  if (s == 0) throw ValidationError("chain: needs at least one state");
  if (spec.transition.size() != s)
    throw ValidationError("chain: transition matrix must be SxS");
  for (const auto& row : spec.transition) {
    if (row.size() != s)
      throw ValidationError("chain: transition matrix must be SxS");
    double sum = 0.0;
    for (double p : row) {
      if (p < 0.0) throw ValidationError("chain: negative transition prob");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw ValidationError("chain: transition rows must sum to 1");
  }
  if (!(spec.power_factor > 0.0 && spec.power_factor <= 1.0))
    throw ValidationError("chain: power factor must be in (0,1]");
}

/// Deterministic function of (model, seed, spec). Chains start in state 0.
inline ScenarioProfile synth_markov_profile(const FeederModel& model,
                                            std::uint64_t seed,
                                            const ChainSpec& spec) {
  validate_chain(spec);
  if (spec.n_intervals < 1 || spec.slots_per_interval < 1)
    throw ValidationError("chain: shape must be at least 1x1");
  const int n = model.n_buses();
  if (!spec.load_base.empty() &&
      static_cast<int>(spec.load_base.size()) != n)
    throw ValidationError("chain: load_base must have one entry per bus");
  if (!spec.gen_base.empty() && static_cast<int>(spec.gen_base.size()) != n)
    throw ValidationError("chain: gen_base must have one entry per bus");

  const int total_slots = spec.n_intervals * spec.slots_per_interval;
  const double qc_ratio =
      std::tan(std::acos(spec.power_factor));  // reactive share of load

  const size_t sz = static_cast<size_t>(total_slots) * n;
  std::vector<double> p_c(sz, 0.0), q_c(sz, 0.0), p_g(sz, 0.0);

  auto run_chain = [&](std::mt19937_64& gen, std::vector<int>& states) {
    int state = 0;
    for (int k = 0; k < total_slots; ++k) {
      states[k] = state;
      const double u = uniform01(gen);
      double acc = 0.0;
      int next = static_cast<int>(spec.levels.size()) - 1;
      for (size_t j = 0; j < spec.transition[state].size(); ++j) {
        acc += spec.transition[state][j];
        if (u < acc) {
          next = static_cast<int>(j);
          break;
        }
      }
      state = next;
    }
  };

  std::vector<int> states(total_slots);
  for (int bus = 1; bus <= n; ++bus) {
    if (model.is_capacitor_bus(bus)) continue;  // no load or DG there
    const double lbase =
        spec.load_base.empty() ? 0.0 : spec.load_base[bus - 1];
    if (lbase > 0.0) {
      std::mt19937_64 gen(derive_seed(seed, 2 * bus));
      run_chain(gen, states);
      for (int k = 0; k < total_slots; ++k) {
        const double v = lbase * spec.levels[states[k]];
        p_c[static_cast<size_t>(k) * n + (bus - 1)] = v;
        q_c[static_cast<size_t>(k) * n + (bus - 1)] = v * qc_ratio;
      }
    }
    const int j = model.inverter_index(bus);
    const double p_cap = j < 0 ? 0.0 : model.inverters()[j].p_cap_pu;
    const double gbase = spec.gen_base.empty() ? 0.0 : spec.gen_base[bus - 1];
    if (gbase > 0.0 && p_cap > 0.0) {
      std::mt19937_64 gen(derive_seed(seed, 2 * bus + 1));
      run_chain(gen, states);
      for (int k = 0; k < total_slots; ++k) {
        const double v = std::min(gbase * spec.levels[states[k]], p_cap);
        p_g[static_cast<size_t>(k) * n + (bus - 1)] = v;
      }
    }
  }
  return ScenarioProfile(model, spec.n_intervals, spec.slots_per_interval,
                         std::move(p_c), std::move(q_c), std::move(p_g));
}

inline ChainSpec chain_spec_from_json(const nlohmann::json& j) {
  ChainSpec spec;
  try {
    if (j.contains("n_intervals")) spec.n_intervals = j.at("n_intervals");
    if (j.contains("slots_per_interval"))
      spec.slots_per_interval = j.at("slots_per_interval");
    spec.levels = j.at("levels").get<std::vector<double>>();
    spec.transition =
        j.at("transition").get<std::vector<std::vector<double>>>();
    if (j.contains("load_base"))
      spec.load_base = j.at("load_base").get<std::vector<double>>();
    if (j.contains("gen_base"))
      spec.gen_base = j.at("gen_base").get<std::vector<double>>();
    if (j.contains("power_factor")) spec.power_factor = j.at("power_factor");
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("chain json: ") + e.what());
  }
  return spec;
}

inline ChainSpec load_chain_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open chain spec: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("chain json: " + std::string(e.what()));
  }
  return chain_spec_from_json(j);
}

}  // namespace vgrid
