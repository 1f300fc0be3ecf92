//! Fixtures shared by the kernel benchmarks.

use nmfg_core::continuation::rung_problem;
use nmfg_core::{
    build_scenario, newton_solve, CostKind, CostModel, JacobianMode, MfgProblem, NewtonSettings,
    Rung, ScenarioName, SolverState,
};

/// A problem together with its converged state.
pub struct Fixture {
    pub label: String,
    pub problem: MfgProblem,
    pub state: SolverState,
    pub mode: JacobianMode,
}

/// Solves `kind` on `scenario` at the given grid from a zero guess.
pub fn solved(
    kind: CostKind,
    scenario: ScenarioName,
    nx: usize,
    nt: usize,
    mode: JacobianMode,
) -> Fixture {
    let sc = build_scenario(scenario, 1).expect("preset scenario");
    let model = CostModel::new(kind, sc.classes.clone()).expect("matching classes");
    let problem = rung_problem(&Rung { nx, nt, nu: 0.0 }, &model, &sc).expect("valid rung");
    let settings = NewtonSettings {
        jacobian_mode: mode,
        ..Default::default()
    };
    let (state, rep) = newton_solve(SolverState::zeros(problem.layout()), &problem, &settings)
        .expect("solve runs");
    assert!(
        rep.converged,
        "{kind:?} {scenario:?} {nx}x{nt} did not converge"
    );
    Fixture {
        label: format!("{kind:?}/{scenario:?} {nx}x{nt}").to_lowercase(),
        problem,
        state,
        mode,
    }
}

/// The standard set: one-class LWR and a two-class ring.
pub fn standard() -> Vec<Fixture> {
    vec![
        solved(
            CostKind::Lwr1,
            ScenarioName::OneClass,
            60,
            240,
            JacobianMode::Decoupled,
        ),
        solved(CostKind::Gs, ScenarioName::Tc, 30, 60, JacobianMode::OneWay),
    ]
}
