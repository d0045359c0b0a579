//! Discrete-time state-space assembly for transient network flow.
//!
//! Each pipeline contributes one continuity and one momentum equation,
//! discretized with an implicit box scheme over a single spatial element
//! (time derivatives averaged over both pipe ends, space derivatives averaged
//! over both time levels, undifferentiated terms averaged over all four
//! corners). Boundary conditions contribute one row per node: sources pin
//! their density, sinks balance incident pipe-end flows against the drawn
//! load. Stacked, they read
//!
//! ```text
//!     A x_{t+1} = B x_t + U_{t+1}
//! ```
//!
//! with state `x = [densities by node; per pipeline: from-end flow, to-end
//! flow]`. The one-step transition is `x_{t+1} = F x_t + u_{t+1}` with
//! `F = A^-1 B` and `u = A^-1 U`, both computed through a pivoted LU of the
//! row-equilibrated `A` (the transition is invariant under row scaling).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::CoreError;
use crate::network::GasNetwork;

/// Which end of a pipeline a flow state belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PipeEnd {
    From,
    To,
}

/// Layout of the state vector: `n_nodes` densities (by node id), then two
/// flow slots per pipeline (by pipeline position, from-end before to-end).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateIndex {
    n_nodes: usize,
    n_pipes: usize,
}

impl StateIndex {
    pub fn new(net: &GasNetwork) -> Self {
        StateIndex { n_nodes: net.n_nodes(), n_pipes: net.n_pipelines() }
    }

    /// Total state dimension `n_nodes + 2 * n_pipelines`.
    pub fn dim(&self) -> usize {
        self.n_nodes + 2 * self.n_pipes
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_pipes(&self) -> usize {
        self.n_pipes
    }

    /// Slot of a node's density state, by zero-based node position.
    pub fn density(&self, node_idx: usize) -> usize {
        debug_assert!(node_idx < self.n_nodes);
        node_idx
    }

    /// Slot of a pipe-end flow state, by zero-based pipeline position.
    pub fn flow(&self, pipe_idx: usize, end: PipeEnd) -> usize {
        debug_assert!(pipe_idx < self.n_pipes);
        self.n_nodes
            + 2 * pipe_idx
            + match end {
                PipeEnd::From => 0,
                PipeEnd::To => 1,
            }
    }
}

/// Assembled one-step transition model at a fixed time step.
///
/// `a` and `b` are the raw (unequilibrated) assembly matrices, kept for
/// residual checks; `f` and `input_transform` are derived from the
/// equilibrated factorization. `input_transform` equals `A^-1`, so a raw
/// boundary vector `U` maps to the additive input `u = input_transform * U`.
#[derive(Debug, Clone)]
pub struct TransientModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    f: DMatrix<f64>,
    input_transform: DMatrix<f64>,
    dt_s: f64,
    index: StateIndex,
    u_bar: Vec<f64>,
    /// Row of the boundary block assigned to each node (by node position).
    boundary_row: Vec<usize>,
    /// Raw boundary vector with the fixed source densities filled in.
    source_input: DVector<f64>,
    /// 1-norm condition estimate of the raw assembly matrix.
    cond_l1: f64,
}

impl TransientModel {
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }

    pub fn input_transform(&self) -> &DMatrix<f64> {
        &self.input_transform
    }

    pub fn dt_s(&self) -> f64 {
        self.dt_s
    }

    pub fn index(&self) -> &StateIndex {
        &self.index
    }

    /// Frozen per-pipeline mean speeds used in the friction terms (m/s).
    pub fn u_bar(&self) -> &[f64] {
        &self.u_bar
    }

    /// 1-norm condition estimate of the raw assembly matrix `A`.
    pub fn condition_l1(&self) -> f64 {
        self.cond_l1
    }

    pub fn dim(&self) -> usize {
        self.index.dim()
    }

    /// Boundary row assigned to a node (zero-based node position).
    pub fn boundary_row_of(&self, node_idx: usize) -> usize {
        self.boundary_row[node_idx]
    }

    /// Raw boundary vector `U` for one step: fixed source densities plus the
    /// given nodal loads (kg/s, indexed by node position; non-sink entries
    /// are ignored).
    pub fn raw_input(&self, net: &GasNetwork, loads: &[f64]) -> Result<DVector<f64>, CoreError> {
        if loads.len() != self.index.n_nodes() {
            return Err(CoreError::Validation(format!(
                "load slice has {} entries, network has {} nodes",
                loads.len(),
                self.index.n_nodes()
            )));
        }
        let mut u = self.source_input.clone();
        for node in net.sinks() {
            let idx = net.node_index(node.id);
            u[self.boundary_row[idx]] = loads[idx];
        }
        Ok(u)
    }

    /// Additive input `u_{t+1} = A^-1 U_{t+1}` for the given nodal loads.
    pub fn input(&self, net: &GasNetwork, loads: &[f64]) -> Result<DVector<f64>, CoreError> {
        Ok(&self.input_transform * self.raw_input(net, loads)?)
    }

    /// One transition step `x_{t+1} = F x_t + u_{t+1}`.
    pub fn step(&self, x: &DVector<f64>, u_next: &DVector<f64>) -> DVector<f64> {
        &self.f * x + u_next
    }
}

/// Box-scheme coefficients of one pipeline at a given time step and frozen
/// mean speed. Exposed to tests through the assembled rows.
struct PipeCoeffs {
    /// `dt / (a L)`, flow coefficient of the continuity row.
    k: f64,
    /// `a dt c^2 / L`, density coefficient of the momentum row.
    alpha: f64,
    /// `f |u_bar| dt / (4 d)`, friction addition to the momentum flow terms.
    gamma: f64,
}

fn pipe_coeffs(net: &GasNetwork, pipe_idx: usize, dt: f64, u_bar: f64) -> PipeCoeffs {
    let p = &net.pipelines()[pipe_idx];
    let area = p.area_m2();
    let length = p.length_m();
    let c2 = net.sound_speed() * net.sound_speed();
    PipeCoeffs {
        k: dt / (area * length),
        alpha: area * dt * c2 / length,
        gamma: net.friction_factor() * u_bar.abs() * dt / (4.0 * p.diameter_m),
    }
}

/// Write one pipeline's continuity and momentum rows into `a` and `b`.
///
/// Continuity (row `2i`):
/// `(rho_to + rho_from) + k (m_to - m_from)` at `t+1` equals
/// `(rho_to + rho_from) - k (m_to - m_from)` at `t`.
///
/// Momentum (row `2i+1`):
/// `(1+gamma)(m_to + m_from) + alpha (rho_to - rho_from)` at `t+1` equals
/// `(1-gamma)(m_to + m_from) - alpha (rho_to - rho_from)` at `t`.
fn fill_pipe_rows(
    a: &mut DMatrix<f64>,
    b: &mut DMatrix<f64>,
    net: &GasNetwork,
    index: &StateIndex,
    pipe_idx: usize,
    dt: f64,
    u_bar: f64,
) {
    let p = &net.pipelines()[pipe_idx];
    let co = pipe_coeffs(net, pipe_idx, dt, u_bar);
    let rho_from = index.density(net.node_index(p.from));
    let rho_to = index.density(net.node_index(p.to));
    let m_from = index.flow(pipe_idx, PipeEnd::From);
    let m_to = index.flow(pipe_idx, PipeEnd::To);

    let rc = 2 * pipe_idx; // continuity row
    a[(rc, rho_to)] = 1.0;
    a[(rc, rho_from)] = 1.0;
    a[(rc, m_to)] = co.k;
    a[(rc, m_from)] = -co.k;
    b[(rc, rho_to)] = 1.0;
    b[(rc, rho_from)] = 1.0;
    b[(rc, m_to)] = -co.k;
    b[(rc, m_from)] = co.k;

    let rm = 2 * pipe_idx + 1; // momentum row
    a[(rm, m_to)] = 1.0 + co.gamma;
    a[(rm, m_from)] = 1.0 + co.gamma;
    a[(rm, rho_to)] = co.alpha;
    a[(rm, rho_from)] = -co.alpha;
    b[(rm, m_to)] = 1.0 - co.gamma;
    b[(rm, m_from)] = 1.0 - co.gamma;
    b[(rm, rho_to)] = -co.alpha;
    b[(rm, rho_from)] = co.alpha;
}

/// Write the boundary rows: sources pin density, sinks balance flows.
///
/// A sink row reads `sum(to-end inflows) - sum(from-end outflows) = load`,
/// all at `t+1`; boundary rows have no time-`t` terms, so `b` stays zero
/// there. Returns the per-node boundary row map and the fixed source part of
/// the raw input vector.
fn fill_boundary_rows(
    a: &mut DMatrix<f64>,
    net: &GasNetwork,
    index: &StateIndex,
) -> (Vec<usize>, DVector<f64>) {
    let n_pipes = net.n_pipelines();
    let mut boundary_row = vec![0usize; net.n_nodes()];
    let mut source_input = DVector::zeros(index.dim());

    for (node_idx, node) in net.nodes().iter().enumerate() {
        let row = 2 * n_pipes + node_idx;
        boundary_row[node_idx] = row;
        if node.is_source() {
            a[(row, index.density(node_idx))] = 1.0;
            source_input[row] = net.source_density(node.id).expect("source has density");
        } else {
            for (pipe_idx, p) in net.pipelines().iter().enumerate() {
                if p.to == node.id {
                    a[(row, index.flow(pipe_idx, PipeEnd::To))] += 1.0;
                }
                if p.from == node.id {
                    a[(row, index.flow(pipe_idx, PipeEnd::From))] -= 1.0;
                }
            }
        }
    }
    (boundary_row, source_input)
}

/// Max absolute column sum (matrix 1-norm).
fn norm_l1(m: &DMatrix<f64>) -> f64 {
    let mut best = 0.0f64;
    for j in 0..m.ncols() {
        let s: f64 = m.column(j).iter().map(|v| v.abs()).sum();
        best = best.max(s);
    }
    best
}

/// Assemble the one-step transition model for a network at time step `dt_s`
/// with frozen per-pipeline mean speeds `u_bar` (m/s, one per pipeline).
pub fn assemble(net: &GasNetwork, dt_s: f64, u_bar: &[f64]) -> Result<TransientModel, CoreError> {
    assemble_scaled(net, dt_s, u_bar, None)
}

/// Assembly with an optional extra per-row scaling applied to `[A|B]` before
/// factoring. The transition is mathematically invariant to it; the hook
/// exists so tests can verify that invariance.
pub(crate) fn assemble_scaled(
    net: &GasNetwork,
    dt_s: f64,
    u_bar: &[f64],
    extra_row_scale: Option<&[f64]>,
) -> Result<TransientModel, CoreError> {
    if !(dt_s > 0.0) || !dt_s.is_finite() {
        return Err(CoreError::Validation(format!("time step must be positive and finite, got {dt_s}")));
    }
    if u_bar.len() != net.n_pipelines() {
        return Err(CoreError::Validation(format!(
            "u_bar has {} entries, network has {} pipelines",
            u_bar.len(),
            net.n_pipelines()
        )));
    }
    if let Some(bad) = u_bar.iter().find(|v| !v.is_finite()) {
        return Err(CoreError::Validation(format!("u_bar entries must be finite, got {bad}")));
    }

    let index = StateIndex::new(net);
    let dim = index.dim();
    let mut a = DMatrix::zeros(dim, dim);
    let mut b = DMatrix::zeros(dim, dim);

    for pipe_idx in 0..net.n_pipelines() {
        fill_pipe_rows(&mut a, &mut b, net, &index, pipe_idx, dt_s, u_bar[pipe_idx]);
    }
    let (boundary_row, source_input) = fill_boundary_rows(&mut a, net, &index);

    // Row-equilibrate a working copy of [A | B | I]: rows span several orders
    // of magnitude (alpha ~ a c^2 dt / L), and the transition is invariant
    // under row scaling.
    let mut a_eq = a.clone();
    let mut b_eq = b.clone();
    let mut scale_mat = DMatrix::<f64>::zeros(dim, dim);
    for r in 0..dim {
        let max = a_eq.row(r).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if max == 0.0 {
            return Err(CoreError::Numerical(format!("assembly row {r} is identically zero")));
        }
        let mut s = 1.0 / max;
        if let Some(extra) = extra_row_scale {
            s *= extra[r];
        }
        for c in 0..dim {
            a_eq[(r, c)] *= s;
            b_eq[(r, c)] *= s;
        }
        scale_mat[(r, r)] = s;
    }

    let lu = a_eq.lu();
    let f = lu
        .solve(&b_eq)
        .ok_or_else(|| CoreError::Numerical("assembly matrix is singular".into()))?;
    // (S A)^-1 S == A^-1 for the raw matrices.
    let input_transform = lu
        .solve(&scale_mat)
        .ok_or_else(|| CoreError::Numerical("assembly matrix is singular".into()))?;

    let mut f = f;
    let mut input_transform = input_transform;

    // Source-density rows of A^-1 are exact unit vectors (the boundary row
    // pins the state outright), so snap the numerically-solved rows to that
    // exact form; simulated source densities then hold bit-for-bit.
    for node in net.sources() {
        let slot = index.density(net.node_index(node.id));
        let row = boundary_row[net.node_index(node.id)];
        for c in 0..dim {
            f[(slot, c)] = 0.0;
            input_transform[(slot, c)] = 0.0;
        }
        input_transform[(slot, row)] = 1.0;
    }

    let cond_l1 = norm_l1(&a) * norm_l1(&input_transform);

    Ok(TransientModel {
        a,
        b,
        f,
        input_transform,
        dt_s,
        index,
        u_bar: u_bar.to_vec(),
        boundary_row,
        source_input,
        cond_l1,
    })
}

/// Steady network state plus the per-pipeline mean speeds it implies.
#[derive(Debug, Clone)]
pub struct SteadyState {
    /// Full state vector in model layout (densities, then flow pairs).
    pub x: DVector<f64>,
    /// Mean speed per pipeline, `|m| / (a rho_mean)` (m/s).
    pub u_bar: Vec<f64>,
}

const STEADY_MAX_ITERS: usize = 50;
const STEADY_REL_TOL: f64 = 1e-8;
/// Speeds below this (m/s) are treated as no-flow when judging convergence;
/// a dead branch otherwise never settles relative to solver roundoff.
const STEADY_SPEED_FLOOR: f64 = 1e-3;
/// Under-relaxation weight on the fresh speed estimate. With two pressure-set
/// nodes the split flow between them obeys a near-hyperbolic update whose
/// fixed point is neutrally stable; the plain iteration 2-cycles without
/// damping.
const STEADY_RELAX: f64 = 0.6;

/// Solve the steady flow problem for fixed nodal loads (kg/s by node
/// position; non-sink entries ignored).
///
/// Time-derivative terms vanish, leaving per pipeline a uniform-flow row and
/// a pressure-drop row `c^2 (rho_to - rho_from) / L + f u_bar m_mean / (2 d a) = 0`,
/// plus the same boundary rows as the transient assembly. The friction
/// speeds are resolved by fixed-point iteration starting from 1 m/s.
pub fn steady_state(net: &GasNetwork, loads: &[f64]) -> Result<SteadyState, CoreError> {
    if loads.len() != net.n_nodes() {
        return Err(CoreError::Validation(format!(
            "load slice has {} entries, network has {} nodes",
            loads.len(),
            net.n_nodes()
        )));
    }
    if let Some(bad) = loads.iter().find(|v| !v.is_finite()) {
        return Err(CoreError::Validation(format!("loads must be finite, got {bad}")));
    }

    let index = StateIndex::new(net);
    let dim = index.dim();
    let n_pipes = net.n_pipelines();
    let c2 = net.sound_speed() * net.sound_speed();

    let mut u_bar = vec![1.0f64; n_pipes];

    for iter in 0..STEADY_MAX_ITERS {
        let mut m = DMatrix::<f64>::zeros(dim, dim);
        let mut rhs = DVector::<f64>::zeros(dim);

        for (pipe_idx, p) in net.pipelines().iter().enumerate() {
            let rho_from = index.density(net.node_index(p.from));
            let rho_to = index.density(net.node_index(p.to));
            let m_from = index.flow(pipe_idx, PipeEnd::From);
            let m_to = index.flow(pipe_idx, PipeEnd::To);

            // uniform flow along the pipe
            let ru = 2 * pipe_idx;
            m[(ru, m_to)] = 1.0;
            m[(ru, m_from)] = -1.0;

            // pressure drop balances friction: multiply by L for scale,
            // friction acts on the mean of the two end flows
            let rp = 2 * pipe_idx + 1;
            let fric = net.friction_factor() * u_bar[pipe_idx] * p.length_m()
                / (4.0 * p.diameter_m * p.area_m2());
            m[(rp, rho_to)] = c2;
            m[(rp, rho_from)] = -c2;
            m[(rp, m_to)] = fric;
            m[(rp, m_from)] = fric;
        }

        for (node_idx, node) in net.nodes().iter().enumerate() {
            let row = 2 * n_pipes + node_idx;
            if node.is_source() {
                m[(row, index.density(node_idx))] = 1.0;
                rhs[row] = net.source_density(node.id).expect("source has density");
            } else {
                for (pipe_idx, p) in net.pipelines().iter().enumerate() {
                    if p.to == node.id {
                        m[(row, index.flow(pipe_idx, PipeEnd::To))] += 1.0;
                    }
                    if p.from == node.id {
                        m[(row, index.flow(pipe_idx, PipeEnd::From))] -= 1.0;
                    }
                }
                rhs[row] = loads[node_idx];
            }
        }

        // row-equilibrate before factoring, as in the transient assembly
        for r in 0..dim {
            let max = m.row(r).iter().fold(0.0f64, |mx, v| mx.max(v.abs()));
            if max == 0.0 {
                return Err(CoreError::Numerical(format!("steady system row {r} is identically zero")));
            }
            let s = 1.0 / max;
            for c in 0..dim {
                m[(r, c)] *= s;
            }
            rhs[r] *= s;
        }

        let lu = m.lu();
        let x = lu
            .solve(&rhs)
            .ok_or_else(|| CoreError::Numerical("steady system is singular".into()))?;

        let mut delta = 0.0f64;
        let mut next = vec![0.0f64; n_pipes];
        let mut raw = vec![0.0f64; n_pipes];
        for (pipe_idx, p) in net.pipelines().iter().enumerate() {
            let rho_mean = (x[index.density(net.node_index(p.from))]
                + x[index.density(net.node_index(p.to))])
                / 2.0;
            if !(rho_mean > 0.0) {
                return Err(CoreError::Numerical(format!(
                    "nonpositive density on pipeline ({}, {}): the loads are infeasible",
                    p.from, p.to
                )));
            }
            let m_mean = (x[index.flow(pipe_idx, PipeEnd::From)]
                + x[index.flow(pipe_idx, PipeEnd::To)])
                / 2.0;
            let u = m_mean.abs() / (p.area_m2() * rho_mean);
            delta = delta.max((u - u_bar[pipe_idx]).abs() / u.max(STEADY_SPEED_FLOOR));
            raw[pipe_idx] = u;
            next[pipe_idx] = (1.0 - STEADY_RELAX) * u_bar[pipe_idx] + STEADY_RELAX * u;
        }

        if delta < STEADY_REL_TOL {
            // converged; densities at every node must be physical
            for node_idx in 0..net.n_nodes() {
                if !(x[index.density(node_idx)] > 0.0) {
                    return Err(CoreError::Numerical(format!(
                        "nonpositive density at node {}: the loads are infeasible",
                        node_idx + 1
                    )));
                }
            }
            // The boundary rows pin source densities; clear the solver's
            // last-ulp wobble so the steady state carries the set values
            // bit-for-bit, matching the snapped transition rows.
            let mut x = x;
            for node in net.nodes().iter().filter(|n| n.is_source()) {
                x[index.density(net.node_index(node.id))] =
                    net.source_density(node.id).expect("source has density");
            }
            // return the speeds the final state itself implies
            return Ok(SteadyState { x, u_bar: raw });
        }
        u_bar = next;
        let _ = iter;
    }

    Err(CoreError::NonConvergence(format!(
        "steady flow iteration did not reach {STEADY_REL_TOL} relative change in {STEADY_MAX_ITERS} iterations"
    )))
}
