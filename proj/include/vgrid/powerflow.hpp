#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vgrid/errors.hpp"
#include "vgrid/feeder.hpp"

namespace vgrid {

/// Power-flow solution on the tree. v is indexed by bus (0..N, v[0] the
/// substation); P, Q, ell are indexed by the line's downstream bus (entry 0
/// unused). ell is identically zero under the linearized model.
struct FlowState {
  Eigen::VectorXd v;    // squared voltage magnitudes
  Eigen::VectorXd P;    // active flow at the line's front (parent) end
  Eigen::VectorXd Q;    // reactive flow at the front end
  Eigen::VectorXd ell;  // squared current magnitudes

  /// Sum of squared voltage deviations from the substation reference over
  /// the non-substation buses.
  double deviation_cost(double v0) const {
    double c = 0.0;
    for (int i = 1; i < v.size(); ++i) {
      const double d = v[i] - v0;
      c += d * d;
    }
    return c;
  }
};

namespace detail {
inline void check_injection_dims(const FeederModel& model,
                                 const Eigen::VectorXd& p,
                                 const Eigen::VectorXd& q) {
  if (p.size() != model.n_buses() || q.size() != model.n_buses())
    throw ValidationError("powerflow: injection vectors must have length N");
}
}  // namespace detail

/// Linearized distribution flow: loss terms dropped, so flows accumulate
/// leaf to root and voltages propagate root to leaf. Exact to machine
/// precision for the linear model. Injections are net (generation minus
/// consumption), indexed bus-1.
inline FlowState solve_lindistflow(const FeederModel& model,
                                   const Eigen::VectorXd& p,
                                   const Eigen::VectorXd& q) {
  detail::check_injection_dims(model, p, q);
  const int n = model.n_buses();
  FlowState st;
  st.v = Eigen::VectorXd::Constant(n + 1, model.v0());
  st.P = Eigen::VectorXd::Zero(n + 1);
  st.Q = Eigen::VectorXd::Zero(n + 1);
  st.ell = Eigen::VectorXd::Zero(n + 1);

  const std::vector<int>& topo = model.topo_order();
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    const int i = *it;
    double sp = -p[i - 1], sq = -q[i - 1];
    for (int j : model.children(i)) {
      sp += st.P[j];
      sq += st.Q[j];
    }
    st.P[i] = sp;
    st.Q[i] = sq;
  }
  for (int i : topo)
    st.v[i] = st.v[model.parent(i)] -
              2.0 * (model.line_r(i) * st.P[i] + model.line_x(i) * st.Q[i]);
  return st;
}

/// Affine map from injections to squared voltages under the linear model:
/// v = v_base + R_mat p + X_mat q. Entry (i,j) is twice the resistance
/// (reactance) summed over the lines shared by the root paths of buses i+1
/// and j+1. Built once per feeder and reused across slots.
struct Sensitivity {
  Eigen::MatrixXd R_mat;
  Eigen::MatrixXd X_mat;
  Eigen::VectorXd v_base;

  Eigen::VectorXd voltages(const Eigen::VectorXd& p,
                           const Eigen::VectorXd& q) const {
    return v_base + R_mat * p + X_mat * q;
  }
};

inline Sensitivity build_sensitivity(const FeederModel& model) {
  const int n = model.n_buses();
  Sensitivity s;
  s.R_mat.resize(n, n);
  s.X_mat.resize(n, n);
  s.v_base = Eigen::VectorXd::Constant(n, model.v0());

  // Cumulative impedance of the root path per bus.
  std::vector<double> cum_r(n + 1, 0.0), cum_x(n + 1, 0.0);
  for (int i : model.topo_order()) {
    cum_r[i] = cum_r[model.parent(i)] + model.line_r(i);
    cum_x[i] = cum_x[model.parent(i)] + model.line_x(i);
  }

  auto lca = [&](int a, int b) {
    while (a != b) {
      if (model.depth(a) >= model.depth(b))
        a = model.parent(a);
      else
        b = model.parent(b);
    }
    return a;
  };

  for (int i = 1; i <= n; ++i)
    for (int j = i; j <= n; ++j) {
      const int k = lca(i, j);
      s.R_mat(i - 1, j - 1) = s.R_mat(j - 1, i - 1) = 2.0 * cum_r[k];
      s.X_mat(i - 1, j - 1) = s.X_mat(j - 1, i - 1) = 2.0 * cum_x[k];
    }
  return s;
}

/// Backward/forward sweep for the exact branch flow model. Backward pass
/// accumulates flows with the r*ell, x*ell loss corrections, forward pass
/// updates voltages, then squared currents are refreshed from the flow
/// definition; repeats until voltages settle within tol (inf-norm).
inline FlowState solve_branch_flow_exact(const FeederModel& model,
                                         const Eigen::VectorXd& p,
                                         const Eigen::VectorXd& q,
                                         double tol = 1e-10,
                                         int max_iter = 1000) {
  detail::check_injection_dims(model, p, q);
  const int n = model.n_buses();
  FlowState st;
  st.v = Eigen::VectorXd::Constant(n + 1, model.v0());
  st.P = Eigen::VectorXd::Zero(n + 1);
  st.Q = Eigen::VectorXd::Zero(n + 1);
  st.ell = Eigen::VectorXd::Zero(n + 1);

  const std::vector<int>& topo = model.topo_order();
  Eigen::VectorXd v_prev(n + 1);
  for (int iter = 0; iter < max_iter; ++iter) {
    v_prev = st.v;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
      const int i = *it;
      double sp = -p[i - 1] + model.line_r(i) * st.ell[i];
      double sq = -q[i - 1] + model.line_x(i) * st.ell[i];
      for (int j : model.children(i)) {
        sp += st.P[j];
        sq += st.Q[j];
      }
      st.P[i] = sp;
      st.Q[i] = sq;
    }
    for (int i : topo) {
      const double r = model.line_r(i), x = model.line_x(i);
      st.v[i] = st.v[model.parent(i)] - 2.0 * (r * st.P[i] + x * st.Q[i]) +
                (r * r + x * x) * st.ell[i];
      if (st.v[i] <= 0.0)
        throw SolverError(
            "branch flow sweep: non-positive voltage at bus " +
            std::to_string(i) + " (infeasible operating point)");
    }
    for (int i : topo) {
      const double vp = st.v[model.parent(i)];
      st.ell[i] = (st.P[i] * st.P[i] + st.Q[i] * st.Q[i]) / vp;
    }
    if ((st.v - v_prev).cwiseAbs().maxCoeff() <= tol) return st;
  }
  throw SolverError("branch flow sweep: no convergence after " +
                    std::to_string(max_iter) + " iterations");
}

/// Per-line slack of the hyperbolic relaxation: gap_i = v_parent*ell_i -
/// (P_i^2 + Q_i^2). The relaxation is exact when every gap is nonnegative
/// within tol and none exceeds tol.
struct ConeGapReport {
  Eigen::VectorXd gaps;  // indexed by downstream bus, entry 0 unused
  double max_gap = 0.0;  // largest relaxation slack
  double min_gap = 0.0;  // most negative slack (cone violation if < -tol)
  bool exact = false;
};

inline ConeGapReport certify_soc_exactness(const FeederModel& model,
                                           const FlowState& state,
                                           double tol = 1e-5) {
  const int n = model.n_buses();
  ConeGapReport rep;
  rep.gaps = Eigen::VectorXd::Zero(n + 1);
  for (int i = 1; i <= n; ++i) {
    const double vp = state.v[model.parent(i)];
    const double g = vp * state.ell[i] -
                     (state.P[i] * state.P[i] + state.Q[i] * state.Q[i]);
    rep.gaps[i] = g;
    rep.max_gap = std::max(rep.max_gap, g);
    rep.min_gap = std::min(rep.min_gap, g);
  }
  rep.exact = rep.max_gap <= tol && rep.min_gap >= -tol;
  return rep;
}

}  // namespace vgrid
