use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{pair_force, RelationGraph, Trajectory, STATE_DIM};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrateOptions {
    /// Verlet sub-steps per recorded step.
    pub substeps: usize,
    pub softening: f64,
    /// Any coordinate beyond this magnitude counts as divergence.
    pub bound: f64,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self {
            substeps: 1,
            softening: 1e-2,
            bound: 1e4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Integration {
    /// Recorded states after each step; `labels` is left empty.
    pub trajectory: Trajectory,
    /// Number of force evaluations that hit the softening clamp.
    pub softened: usize,
}

fn accelerations(graph: &RelationGraph, state: &[f64], softening: f64, acc: &mut [f64]) -> usize {
    let n = graph.n_nodes();
    acc.iter_mut().for_each(|a| *a = 0.0);
    let mut softened = 0;
    for i in 0..n {
        let pi = [state[i * STATE_DIM], state[i * STATE_DIM + 1]];
        for j in i + 1..n {
            let pj = [state[j * STATE_DIM], state[j * STATE_DIM + 1]];
            let f = pair_force(graph.get(i, j), pi, pj, softening);
            softened += usize::from(f.softened);
            acc[2 * i] += f.force[0];
            acc[2 * i + 1] += f.force[1];
            acc[2 * j] -= f.force[0];
            acc[2 * j + 1] -= f.force[1];
        }
    }
    softened
}

/// Velocity-Verlet integration of unit-mass particles.
///
/// `initial` is `[n_nodes × 4]`. The returned trajectory holds the `steps`
/// states reached after each interval `dt` (the initial state itself is not
/// recorded).
pub fn integrate(
    graph: &RelationGraph,
    initial: &[f64],
    dt: f64,
    steps: usize,
    opts: &IntegrateOptions,
) -> Result<Integration> {
    let n = graph.n_nodes();
    if initial.len() != n * STATE_DIM {
        return Err(Error::shape("integrate", &[n, STATE_DIM], &[initial.len()]));
    }
    if !(dt > 0.0) || opts.substeps == 0 {
        return Err(Error::config(format!(
            "dt must be > 0 and substeps >= 1 (dt {dt}, substeps {})",
            opts.substeps
        )));
    }
    if initial.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial state".into()));
    }
    let h = dt / opts.substeps as f64;
    let mut state = initial.to_vec();
    let mut acc = vec![0.0; 2 * n];
    let mut softened = accelerations(graph, &state, opts.softening, &mut acc);
    let mut states = Vec::with_capacity(steps * n * STATE_DIM);
    for step in 0..steps {
        for _ in 0..opts.substeps {
            for i in 0..n {
                let s = &mut state[i * STATE_DIM..(i + 1) * STATE_DIM];
                s[2] += 0.5 * h * acc[2 * i];
                s[3] += 0.5 * h * acc[2 * i + 1];
                s[0] += h * s[2];
                s[1] += h * s[3];
            }
            softened += accelerations(graph, &state, opts.softening, &mut acc);
            for i in 0..n {
                let s = &mut state[i * STATE_DIM..(i + 1) * STATE_DIM];
                s[2] += 0.5 * h * acc[2 * i];
                s[3] += 0.5 * h * acc[2 * i + 1];
            }
        }
        if state.iter().any(|v| !v.is_finite() || v.abs() > opts.bound) {
            return Err(Error::SimulationDiverged { step });
        }
        states.extend_from_slice(&state);
    }
    Ok(Integration {
        trajectory: Trajectory {
            n_nodes: n,
            steps,
            dt,
            states,
            labels: Vec::new(),
            graph: Some(graph.clone()),
        },
        softened,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::RelationSpec;

    #[test]
    fn free_motion_is_straight() {
        let g = RelationGraph::uniform(3, RelationSpec::none()).unwrap();
        let mut init = vec![0.0; 12];
        init[2] = 1.0; // node 0 moves along x at unit speed
        init[4] = 5.0;
        let out = integrate(&g, &init, 0.1, 10, &IntegrateOptions::default()).unwrap();
        let last = out.trajectory.node(9, 0);
        assert!((last[0] - 1.0).abs() < 1e-12, "x = {}", last[0]);
        assert_eq!(out.trajectory.node(9, 1)[0], 5.0);
    }

    #[test]
    fn rejects_bad_input() {
        let g = RelationGraph::uniform(2, RelationSpec::none()).unwrap();
        let opts = IntegrateOptions::default();
        assert!(integrate(&g, &[0.0; 8], 0.0, 3, &opts).is_err());
        assert!(integrate(&g, &[0.0; 7], 0.1, 3, &opts).is_err());
        let mut bad = [0.0; 8];
        bad[3] = f64::NAN;
        assert!(integrate(&g, &bad, 0.1, 3, &opts).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let g = RelationGraph::uniform(2, RelationSpec::none()).unwrap();
        let mut init = [0.0; 8];
        init[2] = 10.0;
        let opts = IntegrateOptions {
            bound: 45.0,
            ..Default::default()
        };
        // x = 10, 20, 30, 40, 50: the fifth recorded step leaves the bound.
        assert!(matches!(
            integrate(&g, &init, 1.0, 10, &opts),
            Err(Error::SimulationDiverged { step: 4 })
        ));
    }
}
