#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "vgrid/action.hpp"
#include "vgrid/errors.hpp"
#include "vgrid/feeder.hpp"
#include "vgrid/powerflow.hpp"
#include "vgrid/profile.hpp"

namespace vgrid {

enum class SolveStatus { optimal, max_iter, infeasible };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::optimal: return "optimal";
    case SolveStatus::max_iter: return "max-iter";
    case SolveStatus::infeasible: return "infeasible";
  }
  return "?";
}

struct SolveReport {
  double objective = 0.0;  // sum of squared voltage deviations
  int iterations = 0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  SolveStatus status = SolveStatus::optimal;
};

inline void to_json(nlohmann::json& j, const SolveReport& r) {
  j = nlohmann::json{{"objective", r.objective},
                     {"iterations", r.iterations},
                     {"primal_residual", r.primal_residual},
                     {"dual_residual", r.dual_residual},
                     {"status", to_string(r.status)}};
}

/// Box-constrained quadratic program min 0.5 q'Hq + g'q + constant over
/// lo <= q <= hi. Decision variables are the reactive setpoints of the
/// inverters with nonzero capability; var_bus maps each coordinate back to
/// its bus.
struct QpProblem {
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  Eigen::VectorXd lo, hi;
  double constant = 0.0;
  std::vector<int> var_bus;

  int dim() const { return static_cast<int>(g.size()); }

  double objective(const Eigen::VectorXd& q) const {
    if (dim() == 0) return constant;
    return 0.5 * q.dot(H * q) + g.dot(q) + constant;
  }
};

namespace detail {

/// Fixed part of the net injections for one slot given the capacitor
/// commitment: p = p_g - p_c everywhere, q = y*q_a at capacitor buses and
/// -q_c elsewhere. The inverters' q_r rides on top of q at their buses.
inline void fixed_injections(const FeederModel& model,
                             const SlotInjections& slot, const Action& y_hat,
                             Eigen::VectorXd& p_fixed,
                             Eigen::VectorXd& q_fixed) {
  if (y_hat.size() != model.n_capacitors())
    throw ValidationError("commitment vector length must equal N_a");
  const int n = model.n_buses();
  if (slot.p_c.size() != n || slot.q_c.size() != n || slot.p_g.size() != n)
    throw ValidationError("slot injection vectors must have length N");
  p_fixed = slot.p_g - slot.p_c;
  q_fixed = -slot.q_c;
  for (int k = 0; k < model.n_capacitors(); ++k) {
    const CapacitorBank& cap = model.capacitors()[k];
    if (y_hat.y[k]) q_fixed[cap.bus - 1] += cap.q_pu;
  }
}

inline double spectral_radius(const Eigen::MatrixXd& H) {
  if (H.rows() == 0) return 0.0;
  if (H.rows() == 1) return H(0, 0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H,
                                                    Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

}  // namespace detail

/// Builds the fast-timescale QP for one slot on the linearized model. All
/// fixed injections are folded into the affine voltage map so q_r is the
/// only decision; the objective is the squared deviation of v from v0.
inline QpProblem assemble_qp(const FeederModel& model, const Sensitivity& sens,
                             const SlotInjections& slot, const Action& y_hat) {
  Eigen::VectorXd p_fixed, q_fixed;
  detail::fixed_injections(model, slot, y_hat, p_fixed, q_fixed);

  // Deviation of v from v0 with all inverters silent.
  const Eigen::VectorXd d = sens.R_mat * p_fixed + sens.X_mat * q_fixed;

  const std::vector<int>& act = model.active_inverter_buses();
  const int m = static_cast<int>(act.size());
  QpProblem qp;
  qp.var_bus = act;
  qp.constant = d.squaredNorm();
  if (m == 0) {
    qp.H.resize(0, 0);
    qp.g.resize(0);
    qp.lo.resize(0);
    qp.hi.resize(0);
    return qp;
  }

  Eigen::MatrixXd Xr(model.n_buses(), m);
  for (int j = 0; j < m; ++j) Xr.col(j) = sens.X_mat.col(act[j] - 1);

  qp.H = 2.0 * Xr.transpose() * Xr;
  qp.g = 2.0 * Xr.transpose() * d;
  qp.lo.resize(m);
  qp.hi.resize(m);
  for (int j = 0; j < m; ++j) {
    const double b = model.inverter_q_max(act[j]);
    qp.lo[j] = -b;
    qp.hi[j] = b;
  }
  return qp;
}

/// Projected gradient with fixed step 1/lambda_max(H). Returns when the
/// unit-step fixed-point residual ||q - clip(q - (Hq+g))||_inf drops below
/// tol; on iteration exhaustion the best iterate is returned with status
/// max-iter. The iterate is clipped to the box at every step, so the
/// returned point is always feasible.
inline std::pair<Eigen::VectorXd, SolveReport> solve_box_qp(
    const QpProblem& qp, double tol = 1e-8, int max_iter = 100000) {
  SolveReport rep;
  const int m = qp.dim();
  if (m == 0) {
    rep.objective = qp.constant;
    return {Eigen::VectorXd(), rep};
  }
  auto clip = [&](Eigen::VectorXd v) {
    return v.cwiseMax(qp.lo).cwiseMin(qp.hi);
  };

  const double L = detail::spectral_radius(qp.H);
  Eigen::VectorXd q = clip(Eigen::VectorXd::Zero(m));
  Eigen::VectorXd grad(m);
  for (int iter = 0; iter < max_iter; ++iter) {
    grad = qp.H * q + qp.g;
    const double res = (q - clip(q - grad)).cwiseAbs().maxCoeff();
    if (res <= tol) {
      rep.iterations = iter;
      rep.primal_residual = res;
      rep.objective = qp.objective(q);
      rep.status = SolveStatus::optimal;
      return {q, rep};
    }
    if (L <= 0.0) break;  // H numerically zero; gradient is constant
    q = clip(q - grad / L);
  }
  grad = qp.H * q + qp.g;
  rep.iterations = max_iter;
  rep.primal_residual = (q - clip(q - grad)).cwiseAbs().maxCoeff();
  rep.objective = qp.objective(q);
  rep.status = SolveStatus::max_iter;
  return {q, rep};
}

/// Result of the joint single-timescale relaxation: capacitor bits rounded
/// from the box relaxation, inverter setpoints re-solved with the rounded
/// commitment fixed. rounding_gap is the objective excess over the exact
/// enumeration optimum (NaN when enumeration was not affordable).
struct RealtimeResult {
  Action y;
  Eigen::VectorXd q_r;
  SolveReport report;
  double rounding_gap = std::numeric_limits<double>::quiet_NaN();
};

/// Relax-and-round joint optimization over inverters and capacitors on the
/// linear model: y in {0,1} is relaxed to [0,1], the box QP over (q_r, y)
/// is solved, y is rounded at the 0.5 threshold (ties round up), and q_r is
/// re-solved with y fixed.
inline RealtimeResult solve_realtime_relaxed(const FeederModel& model,
                                             const Sensitivity& sens,
                                             const SlotInjections& slot,
                                             double tol = 1e-8,
                                             int max_iter = 100000,
                                             int enumeration_limit = 12) {
  const int n = model.n_buses();
  const int n_caps = model.n_capacitors();
  const std::vector<int>& act = model.active_inverter_buses();
  const int m = static_cast<int>(act.size());

  // Fixed part ignores the capacitors entirely; their columns join the
  // decision block scaled by the bank ratings.
  Eigen::VectorXd p_fixed = slot.p_g - slot.p_c;
  Eigen::VectorXd q_fixed = -slot.q_c;
  const Eigen::VectorXd d = sens.R_mat * p_fixed + sens.X_mat * q_fixed;

  Eigen::MatrixXd Xi(n, m + n_caps);
  for (int j = 0; j < m; ++j) Xi.col(j) = sens.X_mat.col(act[j] - 1);
  for (int k = 0; k < n_caps; ++k)
    Xi.col(m + k) =
        sens.X_mat.col(model.capacitors()[k].bus - 1) * model.capacitors()[k].q_pu;

  QpProblem joint;
  joint.H = 2.0 * Xi.transpose() * Xi;
  joint.g = 2.0 * Xi.transpose() * d;
  joint.constant = d.squaredNorm();
  joint.lo.resize(m + n_caps);
  joint.hi.resize(m + n_caps);
  for (int j = 0; j < m; ++j) {
    const double b = model.inverter_q_max(act[j]);
    joint.lo[j] = -b;
    joint.hi[j] = b;
  }
  for (int k = 0; k < n_caps; ++k) {
    joint.lo[m + k] = 0.0;
    joint.hi[m + k] = 1.0;
  }
  joint.var_bus = act;

  auto [w, relaxed_rep] = solve_box_qp(joint, tol, max_iter);

  RealtimeResult res;
  res.y.y.resize(n_caps);
  for (int k = 0; k < n_caps; ++k) res.y.y[k] = w[m + k] >= 0.5 ? 1 : 0;

  auto qp = assemble_qp(model, sens, slot, res.y);
  auto [q_r, rep] = solve_box_qp(qp, tol, max_iter);
  res.q_r = q_r;
  res.report = rep;
  if (relaxed_rep.status == SolveStatus::max_iter)
    res.report.status = SolveStatus::max_iter;

  if (n_caps <= enumeration_limit) {
    double best = std::numeric_limits<double>::infinity();
    for (int idx = 0; idx < action_space_size(n_caps); ++idx) {
      auto cand = assemble_qp(model, sens, slot, Action::from_index(idx, n_caps));
      best = std::min(best, solve_box_qp(cand, tol, max_iter).second.objective);
    }
    res.rounding_gap = rep.objective - best;
  }
  return res;
}

}  // namespace vgrid
