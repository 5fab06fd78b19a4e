#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "vgrid/errors.hpp"

namespace vgrid {

/// Reactive limit of an oversized inverter: q_max = sqrt(s_cap^2 - p_cap^2),
/// constant across slots regardless of the instantaneous PV output.
inline double inverter_bound(double s_cap, double p_cap) {
  if (p_cap < 0.0)
    throw std::domain_error("inverter_bound: negative active capacity");
  if (s_cap < p_cap)
    throw std::domain_error(
        "inverter_bound: apparent capacity below active capacity");
  return std::sqrt(s_cap * s_cap - p_cap * p_cap);
}

inline double kvar_to_pu(double kvar, double base_mva) {
  return kvar / (1000.0 * base_mva);
}
inline double pu_to_kvar(double pu, double base_mva) {
  return pu * 1000.0 * base_mva;
}
inline double kw_to_pu(double kw, double base_mva) {
  return kw / (1000.0 * base_mva);
}

struct LineSpec {
  int from = 0;
  int to = 0;
  double r_pu = 0.0;
  double x_pu = 0.0;
};

struct CapacitorSpec {
  int bus = 0;
  double q_pu = 0.0;  // nameplate reactive injection when switched on
};

struct InverterSpec {
  int bus = 0;
  double p_cap_pu = 0.0;  // active capacity of the DG unit
  double s_cap_pu = 0.0;  // apparent (nameplate) capacity
};

/// Raw feeder description as read from file, before validation.
struct FeederSpec {
  double base_mva = 1.0;
  double base_kv = 1.0;
  double v0 = 1.0;  // squared substation voltage, held fixed
  std::vector<int> buses;
  std::vector<LineSpec> lines;
  std::vector<CapacitorSpec> capacitors;
  std::vector<InverterSpec> inverters;
};

struct CapacitorBank {
  int bus;
  double q_pu;
};

struct InverterSite {
  int bus;
  double p_cap_pu;
  double s_cap_pu;
  double q_max_pu;
};

/// Validated radial grid. Buses are 0..N with 0 the substation; line i feeds
/// bus i from its parent. Every non-substation bus carries either a
/// capacitor bank or an inverter site; buses with no physical device are
/// inverter sites with zero capability. Immutable after construction.
class FeederModel {
 public:
  explicit FeederModel(const FeederSpec& spec) : spec_(spec) { build(); }

  int n_buses() const { return n_; }  // N, substation excluded
  double v0() const { return spec_.v0; }
  double base_mva() const { return spec_.base_mva; }
  double base_kv() const { return spec_.base_kv; }

  int parent(int bus) const { return parent_[bus]; }
  const std::vector<int>& children(int bus) const { return children_[bus]; }
  double line_r(int bus) const { return r_[bus]; }
  double line_x(int bus) const { return x_[bus]; }
  int depth(int bus) const { return depth_[bus]; }

  /// Non-substation buses in breadth-first (root-first) order.
  const std::vector<int>& topo_order() const { return topo_; }

  const std::vector<CapacitorBank>& capacitors() const { return capacitors_; }
  const std::vector<InverterSite>& inverters() const { return inverters_; }

  int n_capacitors() const { return static_cast<int>(capacitors_.size()); }

  bool is_capacitor_bus(int bus) const { return cap_index_[bus] >= 0; }
  /// Index into capacitors() for a capacitor bus, -1 otherwise.
  int capacitor_index(int bus) const { return cap_index_[bus]; }
  /// Index into inverters() for an inverter bus, -1 otherwise.
  int inverter_index(int bus) const { return inv_index_[bus]; }

  /// Inverter buses with a strictly positive reactive limit, ascending.
  /// These are the fast-timescale decision variables.
  const std::vector<int>& active_inverter_buses() const {
    return active_inverters_;
  }

  double inverter_q_max(int bus) const {
    const int j = inv_index_[bus];
    return j < 0 ? 0.0 : inverters_[j].q_max_pu;
  }

 private:
  void build() {
    const int total = static_cast<int>(spec_.buses.size());
    if (total < 2)
      throw ValidationError("feeder: needs a substation and at least one bus");
    std::set<int> ids(spec_.buses.begin(), spec_.buses.end());
    if (static_cast<int>(ids.size()) != total)
      throw ValidationError("feeder: duplicate bus ids");
    if (*ids.begin() != 0 || *ids.rbegin() != total - 1)
      throw ValidationError(
          "feeder: bus ids must be contiguous 0..N with substation 0");
    n_ = total - 1;

    if (static_cast<int>(spec_.lines.size()) != n_)
      throw ValidationError("not a tree: " + std::to_string(n_) +
                            " non-substation buses require exactly " +
                            std::to_string(n_) + " lines, got " +
                            std::to_string(spec_.lines.size()));

    std::vector<std::vector<std::pair<int, int>>> adj(total);  // (nbr, line)
    for (int e = 0; e < n_; ++e) {
      const LineSpec& ln = spec_.lines[e];
      if (ln.from < 0 || ln.from > n_ || ln.to < 0 || ln.to > n_)
        throw ValidationError("feeder: line references unknown bus");
      if (ln.from == ln.to)
        throw ValidationError("not a tree: self-loop at bus " +
                              std::to_string(ln.from));
      if (!(ln.r_pu > 0.0) || !(ln.x_pu > 0.0))
        throw ValidationError("feeder: line impedances must be positive");
      adj[ln.from].push_back({ln.to, e});
      adj[ln.to].push_back({ln.from, e});
    }

    parent_.assign(total, -1);
    depth_.assign(total, 0);
    r_.assign(total, 0.0);
    x_.assign(total, 0.0);
    children_.assign(total, {});
    topo_.clear();
    std::vector<char> seen(total, 0);
    std::vector<int> entry_edge(total, -1);
    std::vector<int> queue{0};
    seen[0] = 1;
    for (size_t head = 0; head < queue.size(); ++head) {
      const int u = queue[head];
      for (auto [w, e] : adj[u]) {
        if (e == entry_edge[u]) continue;  // the line we arrived through
        if (seen[w])
          throw ValidationError("not a tree: cycle through line between "
                                "buses " + std::to_string(u) + " and " +
                                std::to_string(w));
        seen[w] = 1;
        entry_edge[w] = e;
        parent_[w] = u;
        depth_[w] = depth_[u] + 1;
        r_[w] = spec_.lines[e].r_pu;
        x_[w] = spec_.lines[e].x_pu;
        children_[u].push_back(w);
        queue.push_back(w);
        topo_.push_back(w);
      }
    }
    if (static_cast<int>(queue.size()) != total) {
      // With exactly N lines, an unreachable component always carries a
      // cycle; name it rather than just the stranded bus.
      for (int start = 0; start < total; ++start) {
        if (seen[start]) continue;
        std::vector<int> stack{start};
        std::vector<int> via(total, -1);
        std::vector<char> vis(total, 0);
        vis[start] = 1;
        while (!stack.empty()) {
          const int u = stack.back();
          stack.pop_back();
          for (auto [w, e] : adj[u]) {
            if (e == via[u]) continue;
            if (vis[w])
              throw ValidationError("not a tree: cycle through line between "
                                    "buses " + std::to_string(u) + " and " +
                                    std::to_string(w));
            vis[w] = 1;
            via[w] = e;
            stack.push_back(w);
          }
        }
      }
      int missing = 0;
      for (int b = 0; b < total; ++b)
        if (!seen[b]) { missing = b; break; }
      throw ValidationError("not a tree: bus " + std::to_string(missing) +
                            " unreachable from the substation");
    }

    if (!(spec_.v0 > 0.0))
      throw ValidationError("feeder: v0 must be positive");
    if (!(spec_.base_mva > 0.0) || !(spec_.base_kv > 0.0))
      throw ValidationError("feeder: per-unit bases must be positive");

    std::vector<int> device(total, 0);  // 1 = capacitor, 2 = inverter
    cap_index_.assign(total, -1);
    inv_index_.assign(total, -1);
    capacitors_.clear();
    for (const CapacitorSpec& c : spec_.capacitors) {
      if (c.bus <= 0 || c.bus > n_)
        throw ValidationError("feeder: capacitor on invalid bus " +
                              std::to_string(c.bus));
      if (device[c.bus] != 0)
        throw ValidationError("feeder: overlapping device sets at bus " +
                              std::to_string(c.bus));
      if (!(c.q_pu > 0.0))
        throw ValidationError("feeder: capacitor rating must be positive");
      device[c.bus] = 1;
      capacitors_.push_back({c.bus, c.q_pu});
    }
    std::sort(capacitors_.begin(), capacitors_.end(),
              [](const auto& a, const auto& b) { return a.bus < b.bus; });
    for (int k = 0; k < static_cast<int>(capacitors_.size()); ++k)
      cap_index_[capacitors_[k].bus] = k;

    inverters_.clear();
    for (const InverterSpec& iv : spec_.inverters) {
      if (iv.bus <= 0 || iv.bus > n_)
        throw ValidationError("feeder: inverter on invalid bus " +
                              std::to_string(iv.bus));
      if (device[iv.bus] != 0)
        throw ValidationError("feeder: overlapping device sets at bus " +
                              std::to_string(iv.bus));
      device[iv.bus] = 2;
      double q_max;
      try {
        q_max = inverter_bound(iv.s_cap_pu, iv.p_cap_pu);
      } catch (const std::domain_error& e) {
        throw ValidationError("feeder: bus " + std::to_string(iv.bus) + ": " +
                              e.what());
      }
      inverters_.push_back({iv.bus, iv.p_cap_pu, iv.s_cap_pu, q_max});
    }
    // Buses with no physical device count as inverter sites with zero
    // reactive capability, so capacitor and inverter buses partition 1..N.
    for (int b = 1; b <= n_; ++b)
      if (device[b] == 0) inverters_.push_back({b, 0.0, 0.0, 0.0});
    std::sort(inverters_.begin(), inverters_.end(),
              [](const auto& a, const auto& b) { return a.bus < b.bus; });
    for (int j = 0; j < static_cast<int>(inverters_.size()); ++j)
      inv_index_[inverters_[j].bus] = j;

    active_inverters_.clear();
    for (const InverterSite& iv : inverters_)
      if (iv.q_max_pu > 0.0) active_inverters_.push_back(iv.bus);
  }

  FeederSpec spec_;
  int n_ = 0;
  std::vector<int> parent_, depth_, topo_;
  std::vector<double> r_, x_;
  std::vector<std::vector<int>> children_;
  std::vector<CapacitorBank> capacitors_;
  std::vector<InverterSite> inverters_;
  std::vector<int> cap_index_, inv_index_, active_inverters_;
};

inline FeederSpec feeder_spec_from_json(const nlohmann::json& j) {
  FeederSpec spec;
  try {
    spec.base_mva = j.at("base_mva").get<double>();
    spec.base_kv = j.at("base_kv").get<double>();
    spec.v0 = j.at("v0").get<double>();
    spec.buses = j.at("buses").get<std::vector<int>>();
    for (const auto& ln : j.at("lines"))
      spec.lines.push_back({ln.at("from").get<int>(), ln.at("to").get<int>(),
                            ln.at("r_pu").get<double>(),
                            ln.at("x_pu").get<double>()});
    if (j.contains("capacitors"))
      for (const auto& c : j.at("capacitors"))
        spec.capacitors.push_back(
            {c.at("bus").get<int>(), c.at("q_pu").get<double>()});
    if (j.contains("inverters"))
      for (const auto& iv : j.at("inverters"))
        spec.inverters.push_back({iv.at("bus").get<int>(),
                                  iv.at("p_cap_pu").get<double>(),
                                  iv.at("s_cap_pu").get<double>()});
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("feeder json: ") + e.what());
  }
  return spec;
}

inline FeederModel load_feeder(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open feeder file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("feeder json: " + std::string(e.what()));
  }
  return FeederModel(feeder_spec_from_json(j));
}

}  // namespace vgrid
