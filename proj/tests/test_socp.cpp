#include "vgrid/socp.hpp"

#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace vgrid;

namespace {

SlotInjections zero_slot(int n) {
  SlotInjections s;
  s.p_c = Eigen::VectorXd::Zero(n);
  s.q_c = Eigen::VectorXd::Zero(n);
  s.p_g = Eigen::VectorXd::Zero(n);
  return s;
}

/// 10-bus feeder at normal (load-dominated) operating conditions: a trunk
/// with two laterals, one capacitor, two genuine inverters.
struct TenBusCase {
  FeederModel model;
  SlotInjections slot;
  Action y;
};

TenBusCase ten_bus_case() {
  FeederSpec spec;
  spec.base_mva = 1.0;
  spec.base_kv = 12.0;
  spec.v0 = 1.0;
  spec.buses = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  spec.lines = {{0, 1, 0.004, 0.008}, {1, 2, 0.005, 0.009},
                {2, 3, 0.003, 0.006}, {3, 4, 0.004, 0.007},
                {2, 5, 0.006, 0.010}, {5, 6, 0.004, 0.008},
                {3, 7, 0.005, 0.008}, {7, 8, 0.003, 0.007},
                {8, 9, 0.004, 0.006}, {4, 10, 0.005, 0.009}};
  spec.capacitors = {{6, 0.12}};
  spec.inverters = {{4, 0.2, 0.216}, {9, 0.15, 0.162}};
  TenBusCase c{FeederModel(spec), zero_slot(10), {}};
  for (int b = 1; b <= 10; ++b) {
    if (c.model.is_capacitor_bus(b)) continue;
    c.slot.p_c[b - 1] = 0.03 + 0.002 * b;
    c.slot.q_c[b - 1] = 0.75 * c.slot.p_c[b - 1];
  }
  c.slot.p_g[4 - 1] = 0.05;
  c.slot.p_g[9 - 1] = 0.04;
  c.y.y = {1};
  return c;
}

}  // namespace

TEST(ConeProgram, AssemblyShapes) {
  TenBusCase c = ten_bus_case();
  const ConeProgram cp = assemble_cone_program(c.model, c.slot, c.y);
  const int n = 10, m = 2;
  EXPECT_EQ(cp.dim, 8 * n + m);
  EXPECT_EQ(cp.n_rows, 7 * n);
  EXPECT_EQ(cp.consensus_dim(), m + 4 * n);
  // Equality block keeps full row rank after the capacitor substitution.
  const Eigen::MatrixXd dense(cp.A);
  Eigen::FullPivLU<Eigen::MatrixXd> lu(dense);
  EXPECT_EQ(lu.rank(), cp.n_rows);
}

TEST(ConeProgram, ExactSweepSolutionSatisfiesEqualities) {
  TenBusCase c = ten_bus_case();
  const Eigen::VectorXd p = c.slot.p_g - c.slot.p_c;
  Eigen::VectorXd q = -c.slot.q_c;
  q[6 - 1] += 0.12;  // committed capacitor
  const FlowState st = solve_branch_flow_exact(c.model, p, q, 1e-13, 5000);

  const ConeProgram cp = assemble_cone_program(c.model, c.slot, c.y);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(cp.dim);
  for (int i = 1; i <= 10; ++i) {
    x[cp.idx_v(i)] = st.v[i];
    x[cp.idx_P(i)] = st.P[i];
    x[cp.idx_Q(i)] = st.Q[i];
    x[cp.idx_ell(i)] = st.ell[i];
    const double vp = st.v[c.model.parent(i)];
    x[cp.idx_t(i, 0)] = vp + st.ell[i];
    x[cp.idx_t(i, 1)] = 2.0 * st.P[i];
    x[cp.idx_t(i, 2)] = 2.0 * st.Q[i];
    x[cp.idx_t(i, 3)] = st.ell[i] - vp;
  }
  // The sweep state has zero inverter output, which is feasible (bounds
  // straddle zero), so only the q_r columns stay zero.
  EXPECT_LT((cp.A * x - cp.b).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(SolveSocp, QuietGridStaysFlat) {
  FeederSpec spec = testutil::chain_spec(3, 0.01, 0.02);
  spec.capacitors = {{3, 0.1}};
  spec.inverters = {{1, 0.1, 0.108}};
  const FeederModel m(spec);
  const SocpResult res =
      solve_socp(m, zero_slot(3), Action::all_off(1), 1e-9);
  EXPECT_EQ(res.report.status, SolveStatus::optimal);
  EXPECT_LT(res.report.objective, 1e-12);
  for (int i = 1; i <= 3; ++i) EXPECT_NEAR(res.state.v[i], 1.0, 1e-6);
  // The bowl is fourth-order flat in q_r at a quiet grid; only a loose
  // bound on the setpoints is determined by the solve tolerance.
  EXPECT_LT(res.q_r.cwiseAbs().maxCoeff(), 1e-3);
}

TEST(SolveSocp, TwoBusTracksQpObjective) {
  const FeederModel m(testutil::two_bus_spec(0.01, 0.02, 0.05));
  const Sensitivity sens = build_sensitivity(m);
  SlotInjections slot = zero_slot(1);
  slot.p_c[0] = 0.1;
  slot.q_c[0] = 0.05;
  const QpProblem qp = assemble_qp(m, sens, slot, Action::all_off(0));
  const double qp_obj = solve_box_qp(qp, 1e-12).second.objective;

  const SocpResult res = solve_socp(m, slot, Action::all_off(0), 1e-9);
  ASSERT_EQ(res.report.status, SolveStatus::optimal);
  // Losses are second order at this loading.
  EXPECT_NEAR(res.report.objective, qp_obj, 1e-4);
  EXPECT_NEAR(res.q_r[0], 0.05, 1e-4);  // both clip at the bound
}

TEST(SolveSocp, RelaxationLowerBoundsExactEvaluationOfQpSetpoints) {
  for (const bool ten : {false, true}) {
    FeederModel model = ten ? ten_bus_case().model
                            : FeederModel(testutil::two_bus_spec(0.01, 0.02,
                                                                 0.05));
    SlotInjections slot = ten ? ten_bus_case().slot : zero_slot(1);
    Action y = ten ? ten_bus_case().y : Action::all_off(0);
    if (!ten) {
      slot.p_c[0] = 0.1;
      slot.q_c[0] = 0.05;
    }
    const Sensitivity sens = build_sensitivity(model);
    const QpProblem qp = assemble_qp(model, sens, slot, y);
    const auto [q_r, qp_rep] = solve_box_qp(qp, 1e-12);

    // Push the QP setpoints through the exact physics.
    Eigen::VectorXd p = slot.p_g - slot.p_c;
    Eigen::VectorXd q = -slot.q_c;
    for (int k = 0; k < model.n_capacitors(); ++k)
      if (y.y[k])
        q[model.capacitors()[k].bus - 1] += model.capacitors()[k].q_pu;
    const auto& act = model.active_inverter_buses();
    for (size_t j = 0; j < act.size(); ++j) q[act[j] - 1] += q_r[j];
    const FlowState exact = solve_branch_flow_exact(model, p, q, 1e-13, 5000);
    const double exact_obj = exact.deviation_cost(model.v0());

    const SocpResult res = solve_socp(model, slot, y, 1e-9);
    ASSERT_EQ(res.report.status, SolveStatus::optimal);
    EXPECT_LE(res.report.objective, exact_obj + 1e-7)
        << (ten ? "10-bus" : "2-bus");
  }
}

TEST(SolveSocp, ExactnessCertificateAtNormalLoading) {
  // Two-bus case.
  const FeederModel two(testutil::two_bus_spec(0.01, 0.02, 0.05));
  SlotInjections slot2 = zero_slot(1);
  slot2.p_c[0] = 0.1;
  slot2.q_c[0] = 0.05;
  const SocpResult r2 = solve_socp(two, slot2, Action::all_off(0), 1e-9);
  const ConeGapReport c2 = certify_soc_exactness(two, r2.state, 1e-5);
  EXPECT_TRUE(c2.exact) << "max gap " << c2.max_gap << " min " << c2.min_gap;

  // Ten-bus case with the capacitor on.
  TenBusCase tc = ten_bus_case();
  const SocpResult r10 = solve_socp(tc.model, tc.slot, tc.y, 1e-9);
  ASSERT_EQ(r10.report.status, SolveStatus::optimal);
  const ConeGapReport c10 = certify_soc_exactness(tc.model, r10.state, 1e-5);
  EXPECT_TRUE(c10.exact) << "max gap " << c10.max_gap << " min "
                         << c10.min_gap;
}

TEST(SolveSocp, SetpointsRespectBoundsEvenWhenStoppedEarly) {
  TenBusCase tc = ten_bus_case();
  const SocpResult res = solve_socp(tc.model, tc.slot, tc.y, 1e-12, 4);
  EXPECT_EQ(res.report.status, SolveStatus::max_iter);
  const auto& act = tc.model.active_inverter_buses();
  for (size_t j = 0; j < act.size(); ++j)
    EXPECT_LE(std::abs(res.q_r[static_cast<Eigen::Index>(j)]),
              tc.model.inverter_q_max(act[j]) + 1e-12);
}

TEST(SolveSocp, DeterministicAcrossRepeatedSolves) {
  TenBusCase tc = ten_bus_case();
  const SocpResult a = solve_socp(tc.model, tc.slot, tc.y, 1e-8);
  const SocpResult b = solve_socp(tc.model, tc.slot, tc.y, 1e-8);
  EXPECT_EQ(a.report.iterations, b.report.iterations);
  EXPECT_EQ(memcmp(a.state.v.data(), b.state.v.data(),
                   sizeof(double) * a.state.v.size()),
            0);
  EXPECT_EQ(memcmp(a.q_r.data(), b.q_r.data(), sizeof(double) * a.q_r.size()),
            0);
}

TEST(ProjectSoc4, ClosedFormCases) {
  // Interior point unchanged.
  double a[4] = {2.0, 1.0, 0.5, 0.5};
  detail::project_soc4(a);
  EXPECT_DOUBLE_EQ(a[0], 2.0);
  EXPECT_DOUBLE_EQ(a[1], 1.0);
  // Polar-cone point maps to the origin.
  double b[4] = {-2.0, 1.0, 0.0, 0.0};
  detail::project_soc4(b);
  EXPECT_DOUBLE_EQ(b[0], 0.0);
  EXPECT_DOUBLE_EQ(b[3], 0.0);
  // Boundary projection keeps membership and idempotence.
  double c[4] = {0.5, 3.0, -4.0, 0.0};
  detail::project_soc4(c);
  const double nw = std::sqrt(c[1] * c[1] + c[2] * c[2] + c[3] * c[3]);
  EXPECT_NEAR(nw, c[0], 1e-12);
  double c2[4] = {c[0], c[1], c[2], c[3]};
  detail::project_soc4(c2);
  EXPECT_NEAR(c2[0], c[0], 1e-12);
  EXPECT_NEAR(c2[1], c[1], 1e-12);
}
