#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include "vgrid/action.hpp"
#include "vgrid/convexopt.hpp"
#include "vgrid/errors.hpp"
#include "vgrid/feeder.hpp"
#include "vgrid/powerflow.hpp"
#include "vgrid/profile.hpp"

namespace vgrid {

/// Conic form of the fast-timescale problem on the exact (relaxed) branch
/// flow model. Stacked variable x = [v; P; Q; ell; q_r; t] where each line
/// carries one four-dimensional cone slack t = (v_parent + ell, 2P, 2Q,
/// ell - v_parent); the hyperbolic relaxation P^2 + Q^2 <= v_parent * ell
/// is exactly membership of t in the second-order cone. Equality rows hold
/// the two balance equations, the voltage-drop equation, and the slack
/// definitions, with fixed capacitor injections substituted into the
/// right-hand side.
struct ConeProgram {
  int n_buses = 0;
  int n_inverters = 0;  // active (nonzero-bound) inverters
  int dim = 0;          // stacked variable size: 8N + m
  int n_rows = 0;       // equality rows: 7N

  Eigen::SparseMatrix<double> A;
  Eigen::VectorXd b;
  Eigen::VectorXd box_lo, box_hi;  // per active inverter
  std::vector<int> var_bus;        // active inverter buses
  double v0 = 1.0;

  int idx_v(int bus) const { return bus - 1; }
  int idx_P(int bus) const { return n_buses + bus - 1; }
  int idx_Q(int bus) const { return 2 * n_buses + bus - 1; }
  int idx_ell(int bus) const { return 3 * n_buses + bus - 1; }
  int idx_qr(int j) const { return 4 * n_buses + j; }
  int idx_t(int bus, int c) const {
    return 4 * n_buses + n_inverters + 4 * (bus - 1) + c;
  }
  /// Consensus coordinates: the box block then one cone block per line.
  int consensus_dim() const { return n_inverters + 4 * n_buses; }
};

inline ConeProgram assemble_cone_program(const FeederModel& model,
                                         const SlotInjections& slot,
                                         const Action& y_hat) {
  Eigen::VectorXd p_fixed, q_fixed;
  detail::fixed_injections(model, slot, y_hat, p_fixed, q_fixed);

  ConeProgram cp;
  const int n = model.n_buses();
  cp.n_buses = n;
  const std::vector<int>& act = model.active_inverter_buses();
  cp.n_inverters = static_cast<int>(act.size());
  cp.var_bus = act;
  cp.dim = 8 * n + cp.n_inverters;
  cp.n_rows = 7 * n;
  cp.v0 = model.v0();

  cp.box_lo.resize(cp.n_inverters);
  cp.box_hi.resize(cp.n_inverters);
  for (int j = 0; j < cp.n_inverters; ++j) {
    const double bnd = model.inverter_q_max(act[j]);
    cp.box_lo[j] = -bnd;
    cp.box_hi[j] = bnd;
  }
  std::vector<int> qr_of_bus(n + 1, -1);
  for (int j = 0; j < cp.n_inverters; ++j) qr_of_bus[act[j]] = j;

  std::vector<Eigen::Triplet<double>> trips;
  cp.b = Eigen::VectorXd::Zero(cp.n_rows);

  for (int i = 1; i <= n; ++i) {
    const double r = model.line_r(i), xx = model.line_x(i);
    const int pi = model.parent(i);
    const bool root = pi == 0;

    // Active balance at bus i.
    int row = i - 1;
    trips.emplace_back(row, cp.idx_P(i), -1.0);
    for (int j : model.children(i)) trips.emplace_back(row, cp.idx_P(j), 1.0);
    trips.emplace_back(row, cp.idx_ell(i), r);
    cp.b[row] = p_fixed[i - 1];

    // Reactive balance at bus i.
    row = n + i - 1;
    trips.emplace_back(row, cp.idx_Q(i), -1.0);
    for (int j : model.children(i)) trips.emplace_back(row, cp.idx_Q(j), 1.0);
    trips.emplace_back(row, cp.idx_ell(i), xx);
    if (qr_of_bus[i] >= 0)
      trips.emplace_back(row, cp.idx_qr(qr_of_bus[i]), -1.0);
    cp.b[row] = q_fixed[i - 1];

    // Voltage drop along line i.
    row = 2 * n + i - 1;
    trips.emplace_back(row, cp.idx_v(i), 1.0);
    if (!root) trips.emplace_back(row, cp.idx_v(pi), -1.0);
    trips.emplace_back(row, cp.idx_P(i), 2.0 * r);
    trips.emplace_back(row, cp.idx_Q(i), 2.0 * xx);
    trips.emplace_back(row, cp.idx_ell(i), -(r * r + xx * xx));
    cp.b[row] = root ? model.v0() : 0.0;

    // Cone slack definitions.
    row = 3 * n + 4 * (i - 1);
    trips.emplace_back(row, cp.idx_t(i, 0), 1.0);
    trips.emplace_back(row, cp.idx_ell(i), -1.0);
    if (!root) trips.emplace_back(row, cp.idx_v(pi), -1.0);
    cp.b[row] = root ? model.v0() : 0.0;

    trips.emplace_back(row + 1, cp.idx_t(i, 1), 1.0);
    trips.emplace_back(row + 1, cp.idx_P(i), -2.0);

    trips.emplace_back(row + 2, cp.idx_t(i, 2), 1.0);
    trips.emplace_back(row + 2, cp.idx_Q(i), -2.0);

    trips.emplace_back(row + 3, cp.idx_t(i, 3), 1.0);
    trips.emplace_back(row + 3, cp.idx_ell(i), -1.0);
    if (!root) trips.emplace_back(row + 3, cp.idx_v(pi), 1.0);
    cp.b[row + 3] = root ? -model.v0() : 0.0;
  }

  cp.A.resize(cp.n_rows, cp.dim);
  cp.A.setFromTriplets(trips.begin(), trips.end());
  return cp;
}

namespace detail {

/// Euclidean projection onto the second-order cone {(s, w): ||w|| <= s}.
/// head points at s, the next three entries are w.
inline void project_soc4(double* t) {
  const double s = t[0];
  const double nw = std::sqrt(t[1] * t[1] + t[2] * t[2] + t[3] * t[3]);
  if (nw <= s) return;
  if (nw <= -s) {
    t[0] = t[1] = t[2] = t[3] = 0.0;
    return;
  }
  const double alpha = 0.5 * (s + nw);
  const double scale = alpha / nw;
  t[0] = alpha;
  t[1] *= scale;
  t[2] *= scale;
  t[3] *= scale;
}

}  // namespace detail

struct SocpResult {
  FlowState state;
  Eigen::VectorXd q_r;  // aligned with program.var_bus
  SolveReport report;
};

/// Operator-splitting solve of the cone program: the smooth block keeps the
/// quadratic objective and all equalities (one sparse KKT factorization,
/// reused), the proximal block projects the box and cone coordinates, and
/// scaled duals tie the two. Penalty is rebalanced x2 whenever one residual
/// lags the other by 10x. Deterministic: no randomized pivoting, fixed
/// iteration order.
inline SocpResult admm_solve_cone(const ConeProgram& cp, double tol = 1e-6,
                                  int max_iter = 200000) {
  const int n = cp.n_buses;
  const int m = cp.n_inverters;
  const int nd = cp.dim;
  const int nc = cp.consensus_dim();
  const int kdim = nd + cp.n_rows;

  // Consensus selector: coordinate j of y mirrors x[sel[j]].
  std::vector<int> sel(nc);
  for (int j = 0; j < m; ++j) sel[j] = cp.idx_qr(j);
  for (int i = 1; i <= n; ++i)
    for (int c = 0; c < 4; ++c) sel[m + 4 * (i - 1) + c] = cp.idx_t(i, c);

  Eigen::VectorXd linear = Eigen::VectorXd::Zero(nd);
  for (int i = 1; i <= n; ++i) linear[cp.idx_v(i)] = -2.0 * cp.v0;

  double rho = 1.0;
  Eigen::SparseMatrix<double> kkt(kdim, kdim);
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  auto factor = [&]() {
    std::vector<Eigen::Triplet<double>> trips;
    for (int i = 1; i <= n; ++i)
      trips.emplace_back(cp.idx_v(i), cp.idx_v(i), 2.0);
    for (int j = 0; j < nc; ++j) trips.emplace_back(sel[j], sel[j], rho);
    for (int k = 0; k < cp.A.outerSize(); ++k)
      for (Eigen::SparseMatrix<double>::InnerIterator it(cp.A, k); it; ++it) {
        trips.emplace_back(nd + it.row(), it.col(), it.value());
        trips.emplace_back(it.col(), nd + it.row(), it.value());
      }
    kkt.setFromTriplets(trips.begin(), trips.end());
    lu.compute(kkt);
    if (lu.info() != Eigen::Success)
      throw SolverError("socp: singular KKT system");
  };
  factor();

  Eigen::VectorXd x = Eigen::VectorXd::Zero(nd);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(nc);
  Eigen::VectorXd u = Eigen::VectorXd::Zero(nc);
  Eigen::VectorXd y_prev(nc), rhs(kdim), ex(nc);

  SolveReport rep;
  rep.status = SolveStatus::max_iter;

  const double eps_abs = tol, eps_rel = tol;
  int iter = 0;
  for (; iter < max_iter; ++iter) {
    // Smooth block.
    rhs.setZero();
    rhs.head(nd) = -linear;
    for (int j = 0; j < nc; ++j) rhs[sel[j]] += rho * (y[j] - u[j]);
    rhs.segment(nd, cp.n_rows) = cp.b;
    Eigen::VectorXd sol = lu.solve(rhs);
    x = sol.head(nd);

    for (int j = 0; j < nc; ++j) ex[j] = x[sel[j]];

    // Proximal block: clip the box, project the cones.
    y_prev = y;
    y = ex + u;
    for (int j = 0; j < m; ++j)
      y[j] = std::min(std::max(y[j], cp.box_lo[j]), cp.box_hi[j]);
    for (int i = 0; i < n; ++i) detail::project_soc4(y.data() + m + 4 * i);

    u += ex - y;

    const double r_pri = (ex - y).norm();
    const double r_dua = rho * (y - y_prev).norm();
    const double eps_pri =
        std::sqrt(static_cast<double>(nc)) * eps_abs +
        eps_rel * std::max(ex.norm(), y.norm());
    const double eps_dua = std::sqrt(static_cast<double>(nd)) * eps_abs +
                           eps_rel * rho * u.norm();
    if (r_pri <= eps_pri && r_dua <= eps_dua) {
      rep.status = SolveStatus::optimal;
      rep.primal_residual = r_pri;
      rep.dual_residual = r_dua;
      ++iter;
      break;
    }
    if (!x.allFinite() || x.cwiseAbs().maxCoeff() > 1e12) {
      rep.status = SolveStatus::infeasible;
      rep.primal_residual = r_pri;
      rep.dual_residual = r_dua;
      break;
    }
    if ((iter + 1) % 25 == 0) {
      if (r_pri > 10.0 * r_dua && rho < 1e6) {
        rho *= 2.0;
        u *= 0.5;
        factor();
      } else if (r_dua > 10.0 * r_pri && rho > 1e-6) {
        rho *= 0.5;
        u *= 2.0;
        factor();
      }
    }
    rep.primal_residual = r_pri;
    rep.dual_residual = r_dua;
  }
  rep.iterations = iter;

  SocpResult res;
  res.state.v = Eigen::VectorXd::Constant(n + 1, cp.v0);
  res.state.P = Eigen::VectorXd::Zero(n + 1);
  res.state.Q = Eigen::VectorXd::Zero(n + 1);
  res.state.ell = Eigen::VectorXd::Zero(n + 1);
  for (int i = 1; i <= n; ++i) {
    res.state.v[i] = x[cp.idx_v(i)];
    res.state.P[i] = x[cp.idx_P(i)];
    res.state.Q[i] = x[cp.idx_Q(i)];
    res.state.ell[i] = x[cp.idx_ell(i)];
  }
  // Setpoints come from the projected block so the box holds regardless of
  // how early the iteration stopped.
  res.q_r = y.head(m);
  rep.objective = res.state.deviation_cost(cp.v0);
  res.report = rep;
  return res;
}

/// Fast-timescale setpoints on the exact (SOCP-relaxed) model for one slot.
inline SocpResult solve_socp(const FeederModel& model,
                             const SlotInjections& slot, const Action& y_hat,
                             double tol = 1e-6, int max_iter = 200000) {
  return admm_solve_cone(assemble_cone_program(model, slot, y_hat), tol,
                         max_iter);
}

}  // namespace vgrid
