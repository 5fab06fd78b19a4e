#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <future>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vgrid/action.hpp"
#include "vgrid/convexopt.hpp"
#include "vgrid/drl.hpp"
#include "vgrid/errors.hpp"
#include "vgrid/feeder.hpp"
#include "vgrid/log.hpp"
#include "vgrid/powerflow.hpp"
#include "vgrid/profile.hpp"
#include "vgrid/socp.hpp"

namespace vgrid {

enum class Policy { drlcap, fixcap, randcap, realtime };
enum class Physics { linear, socp };

inline const char* to_string(Policy p) {
  switch (p) {
    case Policy::drlcap: return "drlcap";
    case Policy::fixcap: return "fixcap";
    case Policy::randcap: return "randcap";
    case Policy::realtime: return "realtime";
  }
  return "?";
}

inline const char* to_string(Physics p) {
  return p == Physics::linear ? "linear" : "socp";
}

inline Policy policy_from_string(const std::string& s) {
  if (s == "drlcap") return Policy::drlcap;
  if (s == "fixcap") return Policy::fixcap;
  if (s == "randcap") return Policy::randcap;
  if (s == "realtime") return Policy::realtime;
  throw ValidationError("unknown policy: " + s);
}

inline Physics physics_from_string(const std::string& s) {
  if (s == "linear") return Physics::linear;
  if (s == "socp") return Physics::socp;
  throw ValidationError("unknown physics: " + s);
}

struct RunConfig {
  Policy policy = Policy::drlcap;
  Physics physics = Physics::linear;
  double gamma = 0.99;
  int replay = 10;       // buffer capacity R
  int batch = 10;        // mini-batch M
  int target_sync = 5;   // sync period B
  int hyper_k = 1;       // output partition K
  double lr = 1e-3;      // SGD learning rate
  std::uint64_t seed = 1;
  int n_intervals = 0;
  int slots_per_interval = 0;
  std::vector<std::uint8_t> fixcap_pattern;  // empty = all off
  // Instantaneous costs are divided by cost_scale before entering the
  // replay buffer so TD targets stay inside the sigmoid output range;
  // logged costs are never scaled. Zero means the default budget
  // N_T * N * 0.05^2.
  double cost_scale = 0.0;
  // Zero means 1/(1-gamma): the reachable Q-range for unit-scaled costs.
  double output_scale = 0.0;
  std::vector<int> hidden = {44, 12};
  double qp_tol = 1e-8;
  int qp_max_iter = 100000;
  double socp_tol = 1e-6;
  int socp_max_iter = 200000;
};

inline nlohmann::json config_to_json(const RunConfig& cfg) {
  return nlohmann::json{{"policy", to_string(cfg.policy)},
                        {"physics", to_string(cfg.physics)},
                        {"gamma", cfg.gamma},
                        {"replay", cfg.replay},
                        {"batch", cfg.batch},
                        {"target_sync", cfg.target_sync},
                        {"hyper_k", cfg.hyper_k},
                        {"lr", cfg.lr},
                        {"seed", cfg.seed},
                        {"intervals", cfg.n_intervals},
                        {"slots_per_interval", cfg.slots_per_interval},
                        {"fixcap_pattern", cfg.fixcap_pattern},
                        {"cost_scale", cfg.cost_scale},
                        {"output_scale", cfg.output_scale},
                        {"hidden", cfg.hidden},
                        {"qp_tol", cfg.qp_tol},
                        {"socp_tol", cfg.socp_tol}};
}

inline RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig cfg;
  try {
    cfg.policy = policy_from_string(j.at("policy").get<std::string>());
    cfg.physics = physics_from_string(j.at("physics").get<std::string>());
    cfg.gamma = j.at("gamma").get<double>();
    cfg.replay = j.at("replay").get<int>();
    cfg.batch = j.at("batch").get<int>();
    cfg.target_sync = j.at("target_sync").get<int>();
    cfg.hyper_k = j.at("hyper_k").get<int>();
    cfg.lr = j.at("lr").get<double>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.n_intervals = j.at("intervals").get<int>();
    cfg.slots_per_interval = j.at("slots_per_interval").get<int>();
    cfg.fixcap_pattern =
        j.at("fixcap_pattern").get<std::vector<std::uint8_t>>();
    cfg.cost_scale = j.at("cost_scale").get<double>();
    cfg.output_scale = j.at("output_scale").get<double>();
    cfg.hidden = j.at("hidden").get<std::vector<int>>();
    cfg.qp_tol = j.at("qp_tol").get<double>();
    cfg.socp_tol = j.at("socp_tol").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("run config json: ") + e.what());
  }
  return cfg;
}

inline double resolved_cost_scale(const RunConfig& cfg,
                                  const FeederModel& model) {
  if (cfg.cost_scale > 0.0) return cfg.cost_scale;
  return cfg.slots_per_interval * model.n_buses() * 0.05 * 0.05;
}

inline double resolved_output_scale(const RunConfig& cfg) {
  if (cfg.output_scale > 0.0) return cfg.output_scale;
  return 1.0 / (1.0 - cfg.gamma);
}

inline void validate_config(const RunConfig& cfg, const FeederModel& model) {
  if (!(cfg.gamma >= 0.0 && cfg.gamma < 1.0))
    throw ValidationError("config: gamma must be in [0,1)");
  if (cfg.batch < 1 || cfg.replay < cfg.batch)
    throw ValidationError("config: requires R >= M >= 1");
  if (cfg.target_sync < 1) throw ValidationError("config: B must be >= 1");
  if (!(cfg.lr > 0.0)) throw ValidationError("config: lr must be positive");
  if (cfg.n_intervals < 1 || cfg.slots_per_interval < 1)
    throw ValidationError("config: horizon must be at least one interval/slot");
  const int n_actions = action_space_size(model.n_capacitors());
  if (cfg.hyper_k < 1 || n_actions % cfg.hyper_k != 0)
    throw ValidationError("config: K must divide 2^{N_a}");
  if (!cfg.fixcap_pattern.empty() &&
      static_cast<int>(cfg.fixcap_pattern.size()) != model.n_capacitors())
    throw ValidationError("config: fixcap pattern length must equal N_a");
  if (cfg.policy == Policy::realtime && cfg.physics != Physics::linear)
    throw ValidationError("config: the realtime policy runs on the linear "
                          "model only");
}

struct IntervalRecord {
  int tau = 0;
  int action_index = 0;
  double cost = 0.0;      // raw, unscaled
  double time_avg = 0.0;  // (1/tau) * sum of costs so far
  double epsilon = 0.0;
  double wall_ms = 0.0;
};

struct SlotRecord {
  int tau = 0;
  int t = 0;
  Eigen::VectorXd v_sq;  // squared voltage per bus 1..N
  Eigen::VectorXd q_r;   // per active inverter
};

struct RunTrace {
  std::string policy;
  int n_buses = 0;
  std::vector<int> inverter_buses;  // column order of SlotRecord::q_r
  std::vector<IntervalRecord> intervals;
  std::vector<SlotRecord> slots;
  std::vector<int> target_syncs;    // intervals at which the target reset
  size_t max_buffer_size = 0;       // high-water mark of the replay ring
};

/// Squared voltages on the linear model for one slot given the commitment
/// and the inverter setpoints (bus 0 excluded).
inline Eigen::VectorXd linear_slot_voltages(const FeederModel& model,
                                            const Sensitivity& sens,
                                            const SlotInjections& slot,
                                            const Action& y_hat,
                                            const Eigen::VectorXd& q_r) {
  Eigen::VectorXd p_fixed, q_fixed;
  detail::fixed_injections(model, slot, y_hat, p_fixed, q_fixed);
  const std::vector<int>& act = model.active_inverter_buses();
  for (int j = 0; j < static_cast<int>(act.size()); ++j)
    q_fixed[act[j] - 1] += q_r[j];
  return sens.voltages(p_fixed, q_fixed);
}

struct IntervalOutcome {
  double cost = 0.0;
  std::vector<SlotRecord> slots;
};

/// Cost of one slow-timescale interval under a fixed commitment: per slot
/// the fast-timescale problem is solved on the configured physics and the
/// squared voltage deviations are accumulated.
inline IntervalOutcome interval_cost(const FeederModel& model,
                                     const Sensitivity& sens,
                                     const ScenarioProfile& profile, int tau,
                                     const Action& y_hat,
                                     const RunConfig& cfg) {
  IntervalOutcome out;
  const int nt = profile.slots_per_interval();
  out.slots.reserve(nt);
  for (int t = 1; t <= nt; ++t) {
    const SlotInjections slot = profile.slot(tau, t);
    SlotRecord rec;
    rec.tau = tau;
    rec.t = t;
    try {
      if (cfg.physics == Physics::linear) {
        const QpProblem qp = assemble_qp(model, sens, slot, y_hat);
        auto [q_r, rep] = solve_box_qp(qp, cfg.qp_tol, cfg.qp_max_iter);
        rec.q_r = q_r;
        rec.v_sq =
            linear_slot_voltages(model, sens, slot, y_hat, q_r);
      } else {
        SocpResult res =
            solve_socp(model, slot, y_hat, cfg.socp_tol, cfg.socp_max_iter);
        if (res.report.status == SolveStatus::infeasible)
          throw SolverError("socp reported infeasible");
        rec.q_r = res.q_r;
        rec.v_sq = res.state.v.tail(model.n_buses());
      }
    } catch (const SolverError& e) {
      throw SolverError("interval " + std::to_string(tau) + " slot " +
                        std::to_string(t) + ": " + e.what());
    }
    double c = 0.0;
    for (int b = 0; b < model.n_buses(); ++b) {
      const double d = rec.v_sq[b] - model.v0();
      c += d * d;
    }
    out.cost += c;
    out.slots.push_back(std::move(rec));
  }
  return out;
}

/// State observed after interval tau: per-bus mean net active injection
/// over the interval's slots plus the commitment that was in effect.
inline MdpState mdp_transition(const ScenarioProfile& profile, int tau,
                               const Action& y) {
  MdpState s;
  s.p_bar = profile.mean_net_p(tau);
  s.y_hat = y.y;
  return s;
}

struct EpisodeResult {
  RunTrace trace;
  std::optional<TrainingSnapshot> snapshot;  // drlcap only
};

namespace detail {
// Substream tags of the master seed.
constexpr std::uint64_t kStreamInit = 101;
constexpr std::uint64_t kStreamAction = 102;
constexpr std::uint64_t kStreamSample = 103;

inline TrainingSnapshot make_snapshot(const HyperQNetwork& hnet,
                                      const ReplayBuffer& buffer,
                                      std::uint64_t tau, double cost_sum,
                                      const MdpState& state,
                                      const std::mt19937_64& rng_action,
                                      const std::mt19937_64& rng_sample) {
  TrainingSnapshot snap;
  snap.layer_sizes = hnet.sub(0).layer_sizes();
  snap.output_scale = hnet.sub(0).output_scale();
  snap.k = hnet.k();
  snap.n_actions = hnet.n_actions();
  for (int g = 0; g < hnet.k(); ++g) {
    snap.sub_params.push_back(hnet.sub(g).parameters());
    snap.sub_target_params.push_back(hnet.sub(g).target_parameters());
  }
  snap.buffer_capacity = buffer.capacity();
  for (size_t i = 0; i < buffer.size(); ++i)
    snap.buffer_items.push_back(buffer.oldest_first(i));
  snap.tau = tau;
  snap.cost_sum = cost_sum;
  snap.state = state;
  snap.rng_action = rng_to_string(rng_action);
  snap.rng_sample = rng_to_string(rng_sample);
  return snap;
}
}  // namespace detail

/// Executes the two-timescale loop: one capacitor action per interval, one
/// fast-timescale solve per slot, replay-buffer training for the learned
/// policy. Baselines replace only the action choice; everything downstream
/// is shared. Pass a snapshot to resume a drlcap run exactly where a
/// previous one stopped.
inline EpisodeResult run_episode(const FeederModel& model,
                                 const ScenarioProfile& profile,
                                 const RunConfig& cfg,
                                 const TrainingSnapshot* resume = nullptr) {
  validate_config(cfg, model);
  if (profile.n_intervals() < cfg.n_intervals ||
      profile.slots_per_interval() != cfg.slots_per_interval)
    throw ValidationError("profile does not cover the configured horizon");

  const int n_caps = model.n_capacitors();
  const int n_actions = action_space_size(n_caps);
  const Sensitivity sens = build_sensitivity(model);
  const double cost_scale = resolved_cost_scale(cfg, model);
  const double output_scale = resolved_output_scale(cfg);

  std::mt19937_64 rng_action(derive_seed(cfg.seed, detail::kStreamAction));
  std::mt19937_64 rng_sample(derive_seed(cfg.seed, detail::kStreamSample));

  HyperQNetwork hnet(model.n_buses() + n_caps, cfg.hidden, n_actions,
                     cfg.hyper_k, output_scale,
                     derive_seed(cfg.seed, detail::kStreamInit));
  ReplayBuffer buffer(static_cast<size_t>(cfg.replay));
  int tau_start = 1;

  if (resume != nullptr) {
    if (cfg.policy != Policy::drlcap)
      throw ValidationError("resume: only drlcap runs carry a checkpoint");
    if (resume->k != cfg.hyper_k || resume->n_actions != n_actions ||
        resume->layer_sizes != hnet.sub(0).layer_sizes())
      throw ValidationError("resume: checkpoint architecture mismatch");
    for (int g = 0; g < hnet.k(); ++g) {
      hnet.sub(g).set_parameters(resume->sub_params[g]);
      hnet.sub(g).set_target_parameters(resume->sub_target_params[g]);
    }
    buffer = ReplayBuffer(resume->buffer_capacity);
    for (const Experience& e : resume->buffer_items) buffer.push(e);
    rng_action = rng_from_string(resume->rng_action);
    rng_sample = rng_from_string(resume->rng_sample);
    tau_start = static_cast<int>(resume->tau) + 1;
    if (tau_start > cfg.n_intervals + 1)
      throw ValidationError("resume: checkpoint beyond configured horizon");
  }

  RunTrace trace;
  trace.policy = to_string(cfg.policy);
  trace.n_buses = model.n_buses();
  trace.inverter_buses = model.active_inverter_buses();

  Action fix = cfg.fixcap_pattern.empty()
                   ? Action::all_off(n_caps)
                   : Action(cfg.fixcap_pattern);

  // Bootstrap state: interval-1 injection means under an all-off
  // commitment (net active power does not depend on the commitment).
  MdpState s_prev = resume != nullptr
                        ? resume->state
                        : mdp_transition(profile, 1, Action::all_off(n_caps));

  double cost_sum = resume != nullptr ? resume->cost_sum : 0.0;
  for (int tau = tau_start; tau <= cfg.n_intervals; ++tau) {
    const auto t0 = std::chrono::steady_clock::now();
    double epsilon = 0.0;
    Action a;
    IntervalOutcome outcome;

    if (cfg.policy == Policy::realtime) {
      // Single-timescale joint relaxation, re-solved every slot.
      outcome.slots.reserve(cfg.slots_per_interval);
      for (int t = 1; t <= cfg.slots_per_interval; ++t) {
        const SlotInjections slot = profile.slot(tau, t);
        RealtimeResult rt =
            solve_realtime_relaxed(model, sens, slot, cfg.qp_tol,
                                   cfg.qp_max_iter);
        if (std::isfinite(rt.rounding_gap))
          log_debug("realtime rounding gap tau=" + std::to_string(tau) +
                    " t=" + std::to_string(t) + ": " +
                    std::to_string(rt.rounding_gap));
        SlotRecord rec;
        rec.tau = tau;
        rec.t = t;
        rec.q_r = rt.q_r;
        rec.v_sq = linear_slot_voltages(model, sens, slot, rt.y, rt.q_r);
        double c = 0.0;
        for (int b = 0; b < model.n_buses(); ++b) {
          const double d = rec.v_sq[b] - model.v0();
          c += d * d;
        }
        outcome.cost += c;
        outcome.slots.push_back(std::move(rec));
        a = rt.y;
      }
    } else {
      switch (cfg.policy) {
        case Policy::drlcap:
          epsilon = epsilon_schedule(tau);
          a = select_action(hnet, s_prev, epsilon, rng_action);
          break;
        case Policy::fixcap:
          a = fix;
          break;
        case Policy::randcap:
          epsilon = 1.0;
          a = Action::from_index(
              static_cast<int>(uniform_below(rng_action, n_actions)), n_caps);
          break;
        default:
          break;
      }
      outcome = interval_cost(model, sens, profile, tau, a, cfg);
    }

    cost_sum += outcome.cost;
    const MdpState s_next = mdp_transition(profile, tau, a);

    if (cfg.policy == Policy::drlcap) {
      buffer.push({s_prev, a, outcome.cost / cost_scale, s_next});
      trace.max_buffer_size = std::max(trace.max_buffer_size, buffer.size());
      if (static_cast<int>(buffer.size()) >= cfg.batch) {
        const auto batch =
            buffer.sample(static_cast<size_t>(cfg.batch), rng_sample);
        hyper_train_step(hnet, batch, cfg.gamma, cfg.lr);
      }
      if (tau % cfg.target_sync == 0) {
        hnet.sync_target();
        trace.target_syncs.push_back(tau);
      }
    }
    s_prev = s_next;

    const auto t1 = std::chrono::steady_clock::now();
    IntervalRecord rec;
    rec.tau = tau;
    rec.action_index = a.index();
    rec.cost = outcome.cost;
    rec.time_avg = cost_sum / static_cast<double>(tau);
    rec.epsilon = epsilon;
    rec.wall_ms =
        std::chrono::duration<double, std::milli>(t1 - t0).count();
    trace.intervals.push_back(rec);
    for (SlotRecord& s : outcome.slots) trace.slots.push_back(std::move(s));
  }

  EpisodeResult res;
  res.trace = std::move(trace);
  if (cfg.policy == Policy::drlcap)
    res.snapshot = detail::make_snapshot(hnet, buffer, cfg.n_intervals,
                                         cost_sum, s_prev, rng_action,
                                         rng_sample);
  return res;
}

/// Runs every config against the identical scenario, concurrently. Configs
/// must share the horizon so the per-interval curves align.
inline std::vector<EpisodeResult> compare_policies(
    const FeederModel& model, const ScenarioProfile& profile,
    const std::vector<RunConfig>& configs) {
  for (const RunConfig& cfg : configs) {
    if (cfg.n_intervals != configs.front().n_intervals ||
        cfg.slots_per_interval != configs.front().slots_per_interval)
      throw ValidationError("compare: configs must share the horizon");
    validate_config(cfg, model);
  }
  std::vector<std::future<EpisodeResult>> futures;
  futures.reserve(configs.size());
  for (const RunConfig& cfg : configs)
    futures.push_back(std::async(std::launch::async, [&model, &profile, cfg] {
      return run_episode(model, profile, cfg);
    }));
  std::vector<EpisodeResult> out;
  out.reserve(configs.size());
  for (auto& f : futures) out.push_back(f.get());
  return out;
}

// ---------------------------------------------------------------------------
// Trace files

namespace detail {
inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
}  // namespace detail

inline void write_cost_csv(const std::string& path, const RunTrace& trace,
                           bool append = false) {
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw ParseError("cannot open for writing: " + path);
  if (!append) out << "tau,policy,cost,time_avg_cost,epsilon,action_index\n";
  for (const IntervalRecord& r : trace.intervals)
    out << r.tau << ',' << trace.policy << ',' << detail::fmt_double(r.cost)
        << ',' << detail::fmt_double(r.time_avg) << ','
        << detail::fmt_double(r.epsilon) << ',' << r.action_index << '\n';
}

/// Voltage magnitudes (square roots of the model state) per slot and bus.
inline void write_voltage_csv(const std::string& path, const RunTrace& trace,
                              bool append = false) {
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw ParseError("cannot open for writing: " + path);
  if (!append) out << "tau,t,bus,v_pu,policy\n";
  for (const SlotRecord& s : trace.slots)
    for (int b = 1; b <= trace.n_buses; ++b)
      out << s.tau << ',' << s.t << ',' << b << ','
          << detail::fmt_double(std::sqrt(s.v_sq[b - 1])) << ','
          << trace.policy << '\n';
}

inline void write_setpoint_csv(const std::string& path, const RunTrace& trace,
                               bool append = false) {
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw ParseError("cannot open for writing: " + path);
  if (!append) out << "tau,t,bus,q_r_pu,policy\n";
  for (const SlotRecord& s : trace.slots)
    for (size_t j = 0; j < trace.inverter_buses.size(); ++j)
      out << s.tau << ',' << s.t << ',' << trace.inverter_buses[j] << ','
          << detail::fmt_double(s.q_r[static_cast<Eigen::Index>(j)]) << ','
          << trace.policy << '\n';
}

}  // namespace vgrid
