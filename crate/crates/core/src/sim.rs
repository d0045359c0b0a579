//! Ground-truth trajectory simulation and synthetic SCADA measurement
//! generation: Gaussian sensor noise, virtual (zero-junction-flow)
//! measurements, gross bad-data replacements, and constant bias windows.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use crate::error::CoreError;
use crate::model::{steady_state, PipeEnd, StateIndex, TransientModel};
use crate::network::{GasNetwork, NodeId};

/// What a measurement channel senses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelKind {
    /// Nodal pressure, carried internally in density units (kg/m^3);
    /// conversion to bar happens only at file boundaries.
    Pressure,
    /// Net nodal flow (kg/s): the load at a demand node, zero at a junction,
    /// the supplied flow at a source.
    Flow,
}

/// Static description of one measurement channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelMeta {
    pub node: NodeId,
    pub kind: ChannelKind,
    /// Noise sigma in internal units.
    pub sigma: f64,
    /// True for the flow channel of a zero-load junction: the "measurement"
    /// is an exact physical constraint carried with a tiny sigma.
    pub is_virtual: bool,
}

/// Piecewise-linear load curve in seconds -> kg/s, held constant beyond its
/// first and last breakpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadProfile {
    points: Vec<(f64, f64)>,
}

impl LoadProfile {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, CoreError> {
        if points.is_empty() {
            return Err(CoreError::Validation("load profile needs at least one point".into()));
        }
        for w in points.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(CoreError::Validation(format!(
                    "load profile times must strictly increase ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        if let Some((t, v)) = points.iter().find(|(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err(CoreError::Validation(format!(
                "load profile entries must be finite, got ({t}, {v})"
            )));
        }
        Ok(LoadProfile { points })
    }

    pub fn constant(value: f64) -> Result<Self, CoreError> {
        LoadProfile::new(alloc::vec![(0.0, value)])
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Identically-zero profile (marks a junction node).
    pub fn is_zero(&self) -> bool {
        self.points.iter().all(|(_, v)| *v == 0.0)
    }

    /// Linear interpolation, clamped outside the breakpoint range.
    pub fn value_at(&self, t_s: f64) -> f64 {
        let pts = &self.points;
        if t_s <= pts[0].0 {
            return pts[0].1;
        }
        if t_s >= pts[pts.len() - 1].0 {
            return pts[pts.len() - 1].1;
        }
        let k = pts.partition_point(|(t, _)| *t <= t_s);
        let (t0, v0) = pts[k - 1];
        let (t1, v1) = pts[k];
        v0 + (v1 - v0) * (t_s - t0) / (t1 - t0)
    }
}

/// Sensor noise levels. Pressure sigma is given in bar, flow sigma as a
/// fraction of each node's time-averaged flow magnitude, and virtual
/// (junction) channels carry `virtual_sigma` outright.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub pressure_sigma_bar: f64,
    pub flow_sigma_rel: f64,
    pub virtual_sigma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { pressure_sigma_bar: 0.01, flow_sigma_rel: 0.02, virtual_sigma: 0.001 }
    }
}

impl NoiseConfig {
    fn validate(&self) -> Result<(), CoreError> {
        for (name, v) in [
            ("pressure_sigma_bar", self.pressure_sigma_bar),
            ("flow_sigma_rel", self.flow_sigma_rel),
            ("virtual_sigma", self.virtual_sigma),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(CoreError::Validation(format!(
                    "noise {name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Gross corruption: the named channel's measurement at one grid instant is
/// replaced outright. `value` is in file units (bar for pressure channels,
/// kg/s for flow channels).
#[derive(Debug, Clone, PartialEq)]
pub struct BadDataEvent {
    pub kind: ChannelKind,
    pub node: NodeId,
    pub t_hours: f64,
    pub value: f64,
}

/// Which nodes a bias event touches.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeSet {
    All,
    Nodes(Vec<NodeId>),
}

/// Constant sensor drift: every selected channel of `kind` gains `offset`
/// (file units) over the closed interval of grid instants.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasEvent {
    pub kind: ChannelKind,
    pub nodes: NodeSet,
    pub t_start_hours: f64,
    pub t_end_hours: f64,
    pub offset: f64,
}

/// Everything that defines one simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub dt_s: f64,
    pub horizon_s: f64,
    pub seed: u64,
    /// One profile per demand node (zero profile allowed; sources carry none).
    pub loads: BTreeMap<NodeId, LoadProfile>,
    pub noise: NoiseConfig,
    pub bad_data: Vec<BadDataEvent>,
    pub bias: Vec<BiasEvent>,
}

const GRID_ALIGN_TOL: f64 = 1e-6;

impl Scenario {
    /// Number of propagation steps (horizon / dt, validated integral).
    pub fn steps(&self) -> usize {
        libm::round(self.horizon_s / self.dt_s) as usize
    }

    /// Grid step of a time instant given in hours; errors if it falls off
    /// the grid or outside `1..=steps`.
    pub fn grid_step(&self, t_hours: f64) -> Result<usize, CoreError> {
        let s = t_hours * 3600.0 / self.dt_s;
        let r = libm::round(s);
        if !s.is_finite() || (s - r).abs() > GRID_ALIGN_TOL {
            return Err(CoreError::Validation(format!(
                "event time {t_hours} h does not align to the {} s grid",
                self.dt_s
            )));
        }
        let steps = self.steps();
        if r < 1.0 || r > steps as f64 {
            return Err(CoreError::Validation(format!(
                "event time {t_hours} h is outside the measured horizon (steps 1..={steps})"
            )));
        }
        Ok(r as usize)
    }

    pub fn validate(&self, net: &GasNetwork) -> Result<(), CoreError> {
        if !(self.dt_s > 0.0) || !self.dt_s.is_finite() {
            return Err(CoreError::Validation(format!(
                "time step must be positive and finite, got {}",
                self.dt_s
            )));
        }
        if !(self.horizon_s > 0.0) || !self.horizon_s.is_finite() {
            return Err(CoreError::Validation(format!(
                "horizon must be positive and finite, got {}",
                self.horizon_s
            )));
        }
        let ratio = self.horizon_s / self.dt_s;
        if (ratio - libm::round(ratio)).abs() > GRID_ALIGN_TOL || libm::round(ratio) < 1.0 {
            return Err(CoreError::Validation(format!(
                "horizon {} s is not a positive whole number of {} s steps",
                self.horizon_s, self.dt_s
            )));
        }
        self.noise.validate()?;

        for node in net.nodes() {
            if node.is_source() {
                if self.loads.contains_key(&node.id) {
                    return Err(CoreError::Validation(format!(
                        "node {} is a source and cannot carry a load profile",
                        node.id
                    )));
                }
            } else if !self.loads.contains_key(&node.id) {
                return Err(CoreError::Validation(format!(
                    "demand node {} has no load profile (a zero profile is fine)",
                    node.id
                )));
            }
        }
        for id in self.loads.keys() {
            if !net.has_node(*id) {
                return Err(CoreError::Validation(format!("load profile names unknown node {id}")));
            }
        }

        for ev in &self.bad_data {
            if !net.has_node(ev.node) {
                return Err(CoreError::Validation(format!(
                    "bad-data event names unknown node {}",
                    ev.node
                )));
            }
            if !ev.value.is_finite() {
                return Err(CoreError::Validation(format!(
                    "bad-data value must be finite, got {}",
                    ev.value
                )));
            }
            self.grid_step(ev.t_hours)?;
        }

        let horizon_h = self.horizon_s / 3600.0;
        for ev in &self.bias {
            if let NodeSet::Nodes(ids) = &ev.nodes {
                for id in ids {
                    if !net.has_node(*id) {
                        return Err(CoreError::Validation(format!(
                            "bias event names unknown node {id}"
                        )));
                    }
                }
            }
            if !ev.offset.is_finite() {
                return Err(CoreError::Validation(format!(
                    "bias offset must be finite, got {}",
                    ev.offset
                )));
            }
            if ev.t_start_hours > ev.t_end_hours {
                return Err(CoreError::Validation(format!(
                    "bias window runs backwards ({} h .. {} h)",
                    ev.t_start_hours, ev.t_end_hours
                )));
            }
            if ev.t_start_hours < 0.0 || ev.t_end_hours > horizon_h + GRID_ALIGN_TOL {
                return Err(CoreError::Validation(format!(
                    "bias window ({} h .. {} h) leaves the horizon (0 .. {horizon_h} h)",
                    ev.t_start_hours, ev.t_end_hours
                )));
            }
            for t in [ev.t_start_hours, ev.t_end_hours] {
                let s = t * 3600.0 / self.dt_s;
                if (s - libm::round(s)).abs() > GRID_ALIGN_TOL {
                    return Err(CoreError::Validation(format!(
                        "bias window end {t} h does not align to the {} s grid",
                        self.dt_s
                    )));
                }
            }
        }
        Ok(())
    }

    /// Nodal loads (kg/s by node position) at an absolute time; sources get 0.
    pub fn loads_at(&self, net: &GasNetwork, t_s: f64) -> Vec<f64> {
        let mut v = alloc::vec![0.0f64; net.n_nodes()];
        for (id, profile) in &self.loads {
            v[net.node_index(*id)] = profile.value_at(t_s);
        }
        v
    }
}

/// Noise-free state history `x_0 ..= x_T`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dt_s: f64,
    pub x: Vec<DVector<f64>>,
}

/// Propagate the ground truth: `x_0` from the steady solve at the scenario's
/// initial loads, then `x_{t+1} = F x_t + u_{t+1}` with inputs built from the
/// load profiles. The truth run carries no process noise.
pub fn simulate(
    model: &TransientModel,
    net: &GasNetwork,
    scenario: &Scenario,
) -> Result<Trajectory, CoreError> {
    scenario.validate(net)?;
    if (model.dt_s() - scenario.dt_s).abs() > 1e-9 {
        return Err(CoreError::Validation(format!(
            "model was assembled at dt = {} s but the scenario uses {} s",
            model.dt_s(),
            scenario.dt_s
        )));
    }
    let steps = scenario.steps();
    let mut xs = Vec::with_capacity(steps + 1);
    xs.push(steady_state(net, &scenario.loads_at(net, 0.0))?.x);
    for t in 1..=steps {
        let loads = scenario.loads_at(net, t as f64 * scenario.dt_s);
        let u = model.input(net, &loads)?;
        let next = model.step(&xs[t - 1], &u);
        xs.push(next);
    }
    Ok(Trajectory { dt_s: scenario.dt_s, x: xs })
}

/// Measurement matrix H (2 n_N x dim): every node carries a pressure channel
/// (identity on the density slots) and a nodal-flow channel. Flow rows follow
/// the sink balance (to-end flows in, from-end flows out), so a demand node's
/// channel reads its load and a junction's reads exactly zero; source rows are
/// flipped so the channel reads the flow supplied into the network.
pub fn measurement_matrix(net: &GasNetwork, index: &StateIndex) -> DMatrix<f64> {
    let n = net.n_nodes();
    let mut h = DMatrix::zeros(2 * n, index.dim());
    for i in 0..n {
        h[(i, index.density(i))] = 1.0;
    }
    for (node_idx, node) in net.nodes().iter().enumerate() {
        let row = n + node_idx;
        let orient = if node.is_source() { -1.0 } else { 1.0 };
        for (pipe_idx, p) in net.pipelines().iter().enumerate() {
            if p.to == node.id {
                h[(row, index.flow(pipe_idx, PipeEnd::To))] += orient;
            }
            if p.from == node.id {
                h[(row, index.flow(pipe_idx, PipeEnd::From))] -= orient;
            }
        }
    }
    h
}

/// Column of a node's channel in the measurement vector.
pub fn channel_index(net: &GasNetwork, kind: ChannelKind, node: NodeId) -> usize {
    let idx = net.node_index(node);
    match kind {
        ChannelKind::Pressure => idx,
        ChannelKind::Flow => net.n_nodes() + idx,
    }
}

/// How one measurement entry was corrupted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Corruption {
    /// Measurement replaced outright (internal units).
    Replaced { value: f64 },
    /// Constant offset added (internal units).
    Offset { delta: f64 },
}

/// One applied corruption: measurement step (1-based), channel column, what.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AppliedCorruption {
    pub step: usize,
    pub channel: usize,
    pub what: Corruption,
}

/// Synthetic measurement record for steps `1..=T`, with the noise-free
/// channel values retained for evaluation.
#[derive(Debug, Clone)]
pub struct MeasurementSeries {
    pub dt_s: f64,
    pub channels: Vec<ChannelMeta>,
    /// Measured vectors, internal units, index `t-1` holds step `t`.
    pub z: Vec<DVector<f64>>,
    /// Noise-free `H x_t` on the same grid.
    pub truth: Vec<DVector<f64>>,
    /// Every corruption actually applied, in application order (bias first,
    /// then replacements).
    pub corruption: Vec<AppliedCorruption>,
    /// Nodal loads at t = 0 (by node position), kept so an estimator can
    /// reproduce the initializing steady state.
    pub initial_loads: Vec<f64>,
}

/// Per-channel metadata with noise sigmas resolved against the truth series:
/// pressure sigma converts bar to density units; a flow channel's sigma is
/// `flow_sigma_rel` times its time-averaged truth magnitude, floored at
/// `virtual_sigma`; zero-load junction channels carry `virtual_sigma`.
///
/// Public so a caller that reloads persisted truth/measurement series can
/// rebuild the same metadata the synthesizer attached originally.
pub fn resolve_channels(
    net: &GasNetwork,
    scenario: &Scenario,
    truth: &[DVector<f64>],
) -> Vec<ChannelMeta> {
    let n = net.n_nodes();
    let sigma_p = scenario.noise.pressure_sigma_bar * crate::network::PA_PER_BAR
        / (net.sound_speed() * net.sound_speed());
    let mut channels = Vec::with_capacity(2 * n);
    for node in net.nodes() {
        channels.push(ChannelMeta {
            node: node.id,
            kind: ChannelKind::Pressure,
            sigma: sigma_p,
            is_virtual: false,
        });
    }
    for (node_idx, node) in net.nodes().iter().enumerate() {
        let is_virtual = !node.is_source()
            && scenario.loads.get(&node.id).map(|p| p.is_zero()).unwrap_or(false);
        let mean_mag = if truth.is_empty() {
            0.0
        } else {
            truth.iter().map(|z| z[n + node_idx].abs()).sum::<f64>() / truth.len() as f64
        };
        let sigma = if is_virtual {
            scenario.noise.virtual_sigma
        } else {
            (scenario.noise.flow_sigma_rel * mean_mag).max(scenario.noise.virtual_sigma)
        };
        channels.push(ChannelMeta { node: node.id, kind: ChannelKind::Flow, sigma, is_virtual });
    }
    channels
}

/// Corrupt a trajectory into the measured series: Gaussian noise per channel
/// (seeded, reproducible), then bias offsets, then bad-data replacements.
pub fn synthesize_measurements(
    traj: &Trajectory,
    h: &DMatrix<f64>,
    net: &GasNetwork,
    scenario: &Scenario,
) -> Result<MeasurementSeries, CoreError> {
    scenario.validate(net)?;
    let steps = scenario.steps();
    if traj.x.len() != steps + 1 {
        return Err(CoreError::Validation(format!(
            "trajectory holds {} states but the scenario runs {} steps",
            traj.x.len(),
            steps
        )));
    }
    let n = net.n_nodes();
    if h.nrows() != 2 * n {
        return Err(CoreError::Validation(format!(
            "measurement matrix has {} rows, expected {}",
            h.nrows(),
            2 * n
        )));
    }

    let truth: Vec<DVector<f64>> = (1..=steps).map(|t| h * &traj.x[t]).collect();
    let channels = resolve_channels(net, scenario, &truth);

    // Seeded noise pass. The sample stream is consumed in a fixed order
    // (steps outer, channels inner) regardless of configuration, so the same
    // seed always yields the same draws.
    let mut rng = ChaCha12Rng::seed_from_u64(scenario.seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal is well-formed");
    let mut z: Vec<DVector<f64>> = Vec::with_capacity(steps);
    for t in 0..steps {
        let mut zt = truth[t].clone();
        for (c, meta) in channels.iter().enumerate() {
            let draw: f64 = unit.sample(&mut rng);
            zt[c] += meta.sigma * draw;
        }
        z.push(zt);
    }

    let mut corruption = Vec::new();
    let c2 = net.sound_speed() * net.sound_speed();
    let to_internal = |kind: ChannelKind, v: f64| match kind {
        ChannelKind::Pressure => v * crate::network::PA_PER_BAR / c2,
        ChannelKind::Flow => v,
    };

    for ev in &scenario.bias {
        let delta = to_internal(ev.kind, ev.offset);
        let start = libm::round(ev.t_start_hours * 3600.0 / scenario.dt_s) as i64;
        let end = libm::round(ev.t_end_hours * 3600.0 / scenario.dt_s) as i64;
        let node_ids: Vec<NodeId> = match &ev.nodes {
            NodeSet::All => net.nodes().iter().map(|n| n.id).collect(),
            NodeSet::Nodes(ids) => ids.clone(),
        };
        for step in start.max(1)..=end.min(steps as i64) {
            let step = step as usize;
            for id in &node_ids {
                let c = channel_index(net, ev.kind, *id);
                z[step - 1][c] += delta;
                corruption.push(AppliedCorruption {
                    step,
                    channel: c,
                    what: Corruption::Offset { delta },
                });
            }
        }
    }

    for ev in &scenario.bad_data {
        let step = scenario.grid_step(ev.t_hours)?;
        let c = channel_index(net, ev.kind, ev.node);
        let value = to_internal(ev.kind, ev.value);
        z[step - 1][c] = value;
        corruption.push(AppliedCorruption { step, channel: c, what: Corruption::Replaced { value } });
    }

    Ok(MeasurementSeries {
        dt_s: scenario.dt_s,
        channels,
        z,
        truth,
        corruption,
        initial_loads: scenario.loads_at(net, 0.0),
    })
}
