#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vgrid/errors.hpp"

namespace vgrid {

struct CostRow {
  int tau = 0;
  std::string policy;
  double cost = 0.0;
  double time_avg = 0.0;
  double epsilon = 0.0;
  int action_index = 0;
};

struct VoltageRow {
  int tau = 0;
  int t = 0;
  int bus = 0;
  double v_pu = 0.0;
  std::string policy;
};

inline std::vector<CostRow> read_cost_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open trace: " + path);
  std::string line;
  if (!std::getline(in, line) ||
      line != "tau,policy,cost,time_avg_cost,epsilon,action_index")
    throw ParseError("bad cost trace header in " + path);
  std::vector<CostRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    CostRow r;
    std::string field;
    try {
      std::getline(ls, field, ',');
      r.tau = std::stoi(field);
      std::getline(ls, r.policy, ',');
      std::getline(ls, field, ',');
      r.cost = std::stod(field);
      std::getline(ls, field, ',');
      r.time_avg = std::stod(field);
      std::getline(ls, field, ',');
      r.epsilon = std::stod(field);
      std::getline(ls, field, ',');
      r.action_index = std::stoi(field);
    } catch (const std::exception&) {
      throw ParseError("malformed cost trace row in " + path + ": " + line);
    }
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw ParseError("empty cost trace: " + path);
  return rows;
}

inline std::vector<VoltageRow> read_voltage_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open trace: " + path);
  std::string line;
  if (!std::getline(in, line) || line != "tau,t,bus,v_pu,policy")
    throw ParseError("bad voltage trace header in " + path);
  std::vector<VoltageRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    VoltageRow r;
    std::string field;
    try {
      std::getline(ls, field, ',');
      r.tau = std::stoi(field);
      std::getline(ls, field, ',');
      r.t = std::stoi(field);
      std::getline(ls, field, ',');
      r.bus = std::stoi(field);
      std::getline(ls, field, ',');
      r.v_pu = std::stod(field);
      std::getline(ls, r.policy, ',');
    } catch (const std::exception&) {
      throw ParseError("malformed voltage trace row in " + path + ": " + line);
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

/// Digest of a run (or compare) output directory: per policy the final
/// time-averaged cost, the full time-average curve, and per-bus voltage
/// statistics over the last 100 slots; policies ordered best-first.
inline nlohmann::json summarize(const std::string& trace_dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(trace_dir))
    throw ParseError("not a directory: " + trace_dir);

  std::vector<fs::path> cost_files;
  for (const auto& entry : fs::recursive_directory_iterator(trace_dir))
    if (entry.is_regular_file() && entry.path().filename() == "cost.csv")
      cost_files.push_back(entry.path());
  std::sort(cost_files.begin(), cost_files.end());
  if (cost_files.empty())
    throw ParseError("no cost.csv traces under " + trace_dir);

  nlohmann::json policies = nlohmann::json::object();
  std::vector<std::pair<double, std::string>> ranking;

  for (const fs::path& cost_path : cost_files) {
    std::map<std::string, std::vector<CostRow>> by_policy;
    for (CostRow& r : read_cost_csv(cost_path.string()))
      by_policy[r.policy].push_back(std::move(r));

    std::map<std::string, std::vector<VoltageRow>> volt_by_policy;
    const fs::path volt_path = cost_path.parent_path() / "voltage.csv";
    if (fs::exists(volt_path))
      for (VoltageRow& r : read_voltage_csv(volt_path.string()))
        volt_by_policy[r.policy].push_back(std::move(r));

    for (auto& [policy, rows] : by_policy) {
      std::sort(rows.begin(), rows.end(),
                [](const CostRow& a, const CostRow& b) { return a.tau < b.tau; });
      nlohmann::json block;
      std::vector<double> curve;
      curve.reserve(rows.size());
      for (const CostRow& r : rows) curve.push_back(r.time_avg);
      block["n_intervals"] = rows.size();
      block["final_time_avg_cost"] = rows.back().time_avg;
      block["time_avg_curve"] = curve;

      auto vit = volt_by_policy.find(policy);
      if (vit != volt_by_policy.end() && !vit->second.empty()) {
        std::vector<VoltageRow>& vr = vit->second;
        std::stable_sort(vr.begin(), vr.end(),
                         [](const VoltageRow& a, const VoltageRow& b) {
                           return std::pair(a.tau, a.t) < std::pair(b.tau, b.t);
                         });
        // Last 100 distinct slots.
        std::vector<std::pair<int, int>> slots;
        for (const VoltageRow& r : vr)
          if (slots.empty() || slots.back() != std::pair(r.tau, r.t))
            slots.push_back({r.tau, r.t});
        const size_t keep = std::min<size_t>(100, slots.size());
        const std::pair<int, int> cutoff = slots[slots.size() - keep];
        std::map<int, std::array<double, 3>> stats;  // bus -> min,max,sum
        std::map<int, int> counts;
        for (const VoltageRow& r : vr) {
          if (std::pair(r.tau, r.t) < cutoff) continue;
          auto [it, fresh] = stats.try_emplace(
              r.bus, std::array<double, 3>{r.v_pu, r.v_pu, 0.0});
          if (!fresh) {
            it->second[0] = std::min(it->second[0], r.v_pu);
            it->second[1] = std::max(it->second[1], r.v_pu);
          }
          it->second[2] += r.v_pu;
          counts[r.bus] += 1;
        }
        nlohmann::json volt = nlohmann::json::object();
        std::vector<int> buses;
        std::vector<double> vmin, vmax, vmean;
        for (const auto& [bus, s] : stats) {
          buses.push_back(bus);
          vmin.push_back(s[0]);
          vmax.push_back(s[1]);
          vmean.push_back(s[2] / counts[bus]);
        }
        volt["bus"] = buses;
        volt["min"] = vmin;
        volt["max"] = vmax;
        volt["mean"] = vmean;
        volt["n_slots"] = keep;
        block["voltage_last_slots"] = volt;
      }

      policies[policy] = std::move(block);
      ranking.push_back({rows.back().time_avg, policy});
    }
  }

  std::sort(ranking.begin(), ranking.end());
  std::vector<std::string> order;
  for (const auto& [cost, policy] : ranking) order.push_back(policy);

  return nlohmann::json{{"policies", policies}, {"ordering", order}};
}

}  // namespace vgrid
