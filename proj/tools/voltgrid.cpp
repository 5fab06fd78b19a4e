// voltgrid: two-timescale voltage regulation runner. Subcommands drive the
// simulator (run, compare), validate feeder files, audit intervals against
// exhaustive capacitor enumeration (oracle), and digest trace directories
// (summarize).

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vgrid/vgrid.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kArtifactVersion = "0.3.0";
constexpr std::uint64_t kStreamSynth = 104;

struct IoOptions {
  std::string feeder;
  std::string profiles;
  std::string synth;
  std::string out;
  std::string checkpoint;
  std::string from_manifest;
  bool force = false;
};

struct CliOptions {
  IoOptions io;
  vgrid::RunConfig cfg;
  std::vector<std::string> policies;  // compare only
  std::string policy = "drlcap";
  std::string physics = "linear";
};

void add_run_flags(CLI::App* cmd, CliOptions& opt, bool compare) {
  cmd->add_option("--feeder", opt.io.feeder, "feeder JSON file");
  auto* prof = cmd->add_option("--profiles", opt.io.profiles,
                               "profile CSV (tau,t,bus,p_c,q_c,p_g)");
  cmd->add_option("--synth", opt.io.synth,
                  "Markov chain spec JSON for synthetic profiles")
      ->excludes(prof);
  if (compare) {
    cmd->add_option("--policy", opt.policies,
                    "policy to include (repeatable; default all four)");
  } else {
    cmd->add_option("--policy", opt.policy,
                    "drlcap|fixcap|randcap|realtime");
  }
  cmd->add_option("--physics", opt.physics, "linear|socp");
  cmd->add_option("--intervals", opt.cfg.n_intervals, "slow-timescale horizon");
  cmd->add_option("--slots-per-interval", opt.cfg.slots_per_interval,
                  "fast-timescale slots per interval");
  cmd->add_option("--gamma", opt.cfg.gamma, "discount factor");
  cmd->add_option("--replay", opt.cfg.replay, "replay buffer capacity R");
  cmd->add_option("--batch", opt.cfg.batch, "mini-batch size M");
  cmd->add_option("--target-sync", opt.cfg.target_sync,
                  "target network sync period B");
  cmd->add_option("--hyper-k", opt.cfg.hyper_k,
                  "number of parallel Q-networks K");
  cmd->add_option("--lr", opt.cfg.lr, "SGD learning rate");
  cmd->add_option("--seed", opt.cfg.seed, "master seed");
  cmd->add_option("--cost-scale", opt.cfg.cost_scale,
                  "cost normalization for TD targets (0 = auto)");
  cmd->add_option("--hidden", opt.cfg.hidden, "hidden layer sizes");
  cmd->add_option("--fixcap-pattern", opt.cfg.fixcap_pattern,
                  "fixed commitment bits for fixcap");
  cmd->add_option("--out", opt.io.out, "output directory");
  cmd->add_flag("--force", opt.io.force, "allow writing into an existing --out");
  if (!compare) {
    cmd->add_option("--checkpoint", opt.io.checkpoint,
                    "resume a drlcap run from this checkpoint");
    cmd->add_option("--from-manifest", opt.io.from_manifest,
                    "re-run the exact configuration of a previous manifest");
  }
}

void prepare_out_dir(const std::string& out, bool force) {
  if (out.empty()) throw vgrid::ValidationError("--out is required");
  if (fs::exists(out)) {
    if (!force && !fs::is_empty(out))
      throw vgrid::ValidationError("--out exists and is not empty (use "
                                   "--force): " + out);
  } else {
    fs::create_directories(out);
  }
}

vgrid::ScenarioProfile make_profile(const vgrid::FeederModel& model,
                                    const IoOptions& io,
                                    vgrid::RunConfig& cfg) {
  if (!io.profiles.empty()) {
    vgrid::ScenarioProfile p = vgrid::load_profiles(
        io.profiles, model, cfg.n_intervals, cfg.slots_per_interval);
    if (cfg.n_intervals == 0) cfg.n_intervals = p.n_intervals();
    if (cfg.slots_per_interval == 0)
      cfg.slots_per_interval = p.slots_per_interval();
    return p;
  }
  if (io.synth.empty())
    throw vgrid::ValidationError("need --profiles or --synth");
  vgrid::ChainSpec spec = vgrid::load_chain_spec(io.synth);
  if (cfg.n_intervals > 0) spec.n_intervals = cfg.n_intervals;
  if (cfg.slots_per_interval > 0)
    spec.slots_per_interval = cfg.slots_per_interval;
  cfg.n_intervals = spec.n_intervals;
  cfg.slots_per_interval = spec.slots_per_interval;
  return vgrid::synth_markov_profile(
      model, vgrid::derive_seed(cfg.seed, kStreamSynth), spec);
}

json make_manifest(const std::string& command, const CliOptions& opt,
                   const vgrid::RunConfig& cfg,
                   const std::vector<std::string>& policies) {
  json m{{"artifact", "voltgrid"},
         {"version", kArtifactVersion},
         {"command", command},
         {"feeder", opt.io.feeder},
         {"profiles", opt.io.profiles},
         {"synth", opt.io.synth},
         {"checkpoint_in", opt.io.checkpoint},
         {"config", vgrid::config_to_json(cfg)}};
  if (!policies.empty()) m["policies"] = policies;
  return m;
}

void write_trace_files(const std::string& dir, const vgrid::RunTrace& trace) {
  vgrid::write_cost_csv(dir + "/cost.csv", trace);
  vgrid::write_voltage_csv(dir + "/voltage.csv", trace);
  vgrid::write_setpoint_csv(dir + "/setpoints.csv", trace);
}

void write_checkpoint(const std::string& path,
                      const vgrid::TrainingSnapshot& snap) {
  vgrid::save_snapshot(snap, path);
}

int cmd_run(CliOptions& opt) {
  if (!opt.io.from_manifest.empty()) {
    std::ifstream in(opt.io.from_manifest);
    if (!in)
      throw vgrid::ParseError("cannot open manifest: " + opt.io.from_manifest);
    json m;
    in >> m;
    opt.cfg = vgrid::config_from_json(m.at("config"));
    opt.policy = m.at("config").at("policy").get<std::string>();
    opt.physics = m.at("config").at("physics").get<std::string>();
    if (opt.io.feeder.empty()) opt.io.feeder = m.at("feeder");
    if (opt.io.profiles.empty()) opt.io.profiles = m.at("profiles");
    if (opt.io.synth.empty()) opt.io.synth = m.at("synth");
  } else {
    opt.cfg.policy = vgrid::policy_from_string(opt.policy);
    opt.cfg.physics = vgrid::physics_from_string(opt.physics);
  }
  if (opt.io.feeder.empty())
    throw vgrid::ValidationError("--feeder is required");
  prepare_out_dir(opt.io.out, opt.io.force);

  const vgrid::FeederModel model = vgrid::load_feeder(opt.io.feeder);
  const vgrid::ScenarioProfile profile = make_profile(model, opt.io, opt.cfg);

  std::optional<vgrid::TrainingSnapshot> resume;
  if (!opt.io.checkpoint.empty())
    resume = vgrid::load_snapshot(opt.io.checkpoint);

  vgrid::log_info("running policy " + opt.policy + " for " +
                  std::to_string(opt.cfg.n_intervals) + " intervals");
  vgrid::EpisodeResult res =
      vgrid::run_episode(model, profile, opt.cfg,
                         resume ? &*resume : nullptr);

  write_trace_files(opt.io.out, res.trace);
  if (res.snapshot)
    write_checkpoint(opt.io.out + "/checkpoint.json", *res.snapshot);
  std::ofstream mout(opt.io.out + "/manifest.json");
  mout << make_manifest("run", opt, opt.cfg, {}).dump(2) << "\n";

  std::cout << "policy=" << opt.policy << " intervals="
            << opt.cfg.n_intervals << " final_time_avg_cost="
            << res.trace.intervals.back().time_avg << "\n";
  return 0;
}

int cmd_compare(CliOptions& opt) {
  if (opt.io.feeder.empty())
    throw vgrid::ValidationError("--feeder is required");
  prepare_out_dir(opt.io.out, opt.io.force);
  if (opt.policies.empty())
    opt.policies = {"drlcap", "fixcap", "randcap", "realtime"};

  const vgrid::FeederModel model = vgrid::load_feeder(opt.io.feeder);
  vgrid::RunConfig base = opt.cfg;
  base.physics = vgrid::physics_from_string(opt.physics);
  const vgrid::ScenarioProfile profile = make_profile(model, opt.io, base);

  std::vector<vgrid::RunConfig> configs;
  for (const std::string& p : opt.policies) {
    vgrid::RunConfig cfg = base;
    cfg.policy = vgrid::policy_from_string(p);
    // The joint relaxation baseline is defined on the linear model.
    if (cfg.policy == vgrid::Policy::realtime)
      cfg.physics = vgrid::Physics::linear;
    configs.push_back(cfg);
  }

  vgrid::log_info("comparing " + std::to_string(configs.size()) +
                  " policies over " + std::to_string(base.n_intervals) +
                  " intervals");
  std::vector<vgrid::EpisodeResult> results =
      vgrid::compare_policies(model, profile, configs);

  for (size_t i = 0; i < results.size(); ++i) {
    const std::string dir = opt.io.out + "/" + opt.policies[i];
    fs::create_directories(dir);
    write_trace_files(dir, results[i].trace);
    if (results[i].snapshot)
      write_checkpoint(dir + "/checkpoint.json", *results[i].snapshot);
  }
  std::ofstream mout(opt.io.out + "/manifest.json");
  mout << make_manifest("compare", opt, base, opt.policies).dump(2) << "\n";

  const json summary = vgrid::summarize(opt.io.out);
  std::ofstream sout(opt.io.out + "/summary.json");
  sout << summary.dump(2) << "\n";
  for (const auto& p : summary.at("ordering"))
    std::cout << p.get<std::string>() << " final_time_avg_cost="
              << summary.at("policies").at(p.get<std::string>())
                     .at("final_time_avg_cost").get<double>()
              << "\n";
  return 0;
}

int cmd_validate(const std::string& feeder_path) {
  const vgrid::FeederModel model = vgrid::load_feeder(feeder_path);
  std::cout << "ok buses=" << model.n_buses() + 1
            << " capacitors=" << model.n_capacitors()
            << " inverters=" << model.active_inverter_buses().size() << "\n";
  return 0;
}

int cmd_oracle(CliOptions& opt) {
  if (opt.io.feeder.empty())
    throw vgrid::ValidationError("--feeder is required");
  prepare_out_dir(opt.io.out, opt.io.force);
  const vgrid::FeederModel model = vgrid::load_feeder(opt.io.feeder);
  if (model.n_capacitors() > 12)
    throw vgrid::ValidationError(
        "oracle: enumeration over 2^{N_a} is limited to N_a <= 12");
  opt.cfg.policy = vgrid::Policy::fixcap;
  opt.cfg.physics = vgrid::physics_from_string(opt.physics);
  const vgrid::ScenarioProfile profile = make_profile(model, opt.io, opt.cfg);
  const vgrid::Sensitivity sens = vgrid::build_sensitivity(model);

  const int n_actions = vgrid::action_space_size(model.n_capacitors());
  std::ofstream out(opt.io.out + "/oracle.csv");
  out << "tau,best_action_index,best_cost\n";
  for (int tau = 1; tau <= opt.cfg.n_intervals; ++tau) {
    double best = std::numeric_limits<double>::infinity();
    int best_idx = 0;
    for (int idx = 0; idx < n_actions; ++idx) {
      const vgrid::IntervalOutcome oc = vgrid::interval_cost(
          model, sens, profile, tau,
          vgrid::Action::from_index(idx, model.n_capacitors()), opt.cfg);
      if (oc.cost < best) {
        best = oc.cost;
        best_idx = idx;
      }
    }
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", best);
    out << tau << ',' << best_idx << ',' << buf << '\n';
  }
  std::ofstream mout(opt.io.out + "/manifest.json");
  mout << make_manifest("oracle", opt, opt.cfg, {}).dump(2) << "\n";
  std::cout << "oracle intervals=" << opt.cfg.n_intervals << "\n";
  return 0;
}

int cmd_summarize(const std::string& dir) {
  const json summary = vgrid::summarize(dir);
  std::ofstream out(dir + "/summary.json");
  if (!out) throw vgrid::ParseError("cannot write summary under " + dir);
  out << summary.dump(2) << "\n";
  std::cout << summary.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-timescale voltage regulation on radial feeders"};
  app.require_subcommand(1);

  CliOptions run_opt, cmp_opt, orc_opt;
  std::string validate_feeder, summarize_dir;

  CLI::App* run = app.add_subcommand("run", "simulate one policy");
  add_run_flags(run, run_opt, false);

  CLI::App* cmp = app.add_subcommand(
      "compare", "run several policies on the identical scenario");
  add_run_flags(cmp, cmp_opt, true);

  CLI::App* val = app.add_subcommand("validate", "check a feeder file");
  val->add_option("--feeder", validate_feeder, "feeder JSON file")->required();

  CLI::App* orc = app.add_subcommand(
      "oracle", "exhaustive per-interval capacitor enumeration");
  add_run_flags(orc, orc_opt, false);
  bool enumerate_actions = false;
  orc->add_flag("--enumerate-actions", enumerate_actions,
                "enumerate all 2^{N_a} commitments per interval");

  CLI::App* summ = app.add_subcommand("summarize", "digest a trace directory");
  summ->add_option("dir", summarize_dir, "trace directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (run->parsed()) return cmd_run(run_opt);
    if (cmp->parsed()) return cmd_compare(cmp_opt);
    if (val->parsed()) return cmd_validate(validate_feeder);
    if (orc->parsed()) return cmd_oracle(orc_opt);
    if (summ->parsed()) return cmd_summarize(summarize_dir);
  } catch (const vgrid::SolverError& e) {
    std::cerr << "error: solver: " << e.what() << "\n";
    return 4;
  } catch (const vgrid::ParseError& e) {
    std::cerr << "error: parse: " << e.what() << "\n";
    return 3;
  } catch (const vgrid::ValidationError& e) {
    std::cerr << "error: validation: " << e.what() << "\n";
    return 3;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: io: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 4;
  }
  return 2;
}
