//! State estimation: a classical Kalman filter and a robust variant that
//! rescales measurement noise from a sliding window of innovations.
//!
//! Both variants share one prediction/update routine; the robust filter only
//! differs in the effective measurement covariance it hands to the update, so
//! forcing its scaling factors to one reproduces the classical filter exactly.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::CoreError;
use crate::model::{steady_state, TransientModel};
use crate::network::GasNetwork;
use crate::sim::{measurement_matrix, ChannelMeta, MeasurementSeries};

/// Default process-noise standard deviation for density states (kg/m^3).
///
/// Small enough that pressure tracking stays tight, large enough that the
/// innovation sequence on pressure channels stays serially uncorrelated
/// instead of being over-smoothed.
pub const DEFAULT_DENSITY_SIGMA_Q: f64 = 5.0e-4;

/// Default process-noise standard deviation for flow states (kg/s).
///
/// This level balances two competing pressures. Larger values drown out the
/// near-noiseless zero-withdrawal signal at junctions, whose tiny variance
/// the filter should trust almost completely. Smaller values over-inflate
/// the predicted innovation variance on pressure channels at low-volume
/// nodes, where flow uncertainty amplifies into density uncertainty within
/// a single step and the predicted spread stops matching the innovations
/// actually observed.
pub const DEFAULT_FLOW_SIGMA_Q: f64 = 2.5e-3;

/// Default sliding-window length for the robust variant.
pub const DEFAULT_WINDOW: usize = 10;

/// Default lower clamp for the robust noise-scaling factors.
pub const DEFAULT_MU_FLOOR: f64 = 1.0;

/// Which filter to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Classical Kalman filter with the configured measurement covariance.
    Classic,
    /// Innovation-scaled filter: measurement variances are inflated per
    /// channel whenever the observed innovation spread exceeds what the
    /// filter predicts.
    Robust,
}

/// Filter configuration.
///
/// `q` is a full process-noise covariance so callers may express correlated
/// disturbances, though the defaults are diagonal. `r` and `p0` are the
/// diagonals of the measurement and initial state covariances.
#[derive(Debug, Clone)]
pub struct EstimatorConfig {
    pub variant: Variant,
    /// Process-noise covariance, `dim x dim`.
    pub q: DMatrix<f64>,
    /// Measurement-noise variances, one per channel.
    pub r: DVector<f64>,
    /// Initial state variances, one per state.
    pub p0: DVector<f64>,
    /// Sliding-window length for the robust variant (>= 1).
    pub m_w: usize,
    /// Lower clamp for the noise-scaling factors (>= 1).
    pub mu_floor: f64,
}

impl EstimatorConfig {
    /// Builds the default configuration for a model, a measurement channel
    /// layout, and an initial state estimate.
    ///
    /// * `q`: diagonal, [`DEFAULT_DENSITY_SIGMA_Q`]^2 on density states and
    ///   [`DEFAULT_FLOW_SIGMA_Q`]^2 on flow states;
    /// * `r`: the square of each channel's noise level;
    /// * `p0`: `max(0.01 * |x0_i|, 1e-4)^2`, i.e. one percent of the initial
    ///   state with a floor so that exactly-zero states stay adjustable.
    pub fn defaults(
        model: &TransientModel,
        channels: &[ChannelMeta],
        x0: &DVector<f64>,
        variant: Variant,
    ) -> Self {
        let index = model.index();
        let dim = index.dim();
        let mut q = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            let sigma = if i < index.n_nodes() {
                DEFAULT_DENSITY_SIGMA_Q
            } else {
                DEFAULT_FLOW_SIGMA_Q
            };
            q[(i, i)] = sigma * sigma;
        }
        let r = DVector::from_iterator(
            channels.len(),
            channels.iter().map(|c| c.sigma * c.sigma),
        );
        let p0 = x0.map(|v| {
            let s = (0.01 * v.abs()).max(1.0e-4);
            s * s
        });
        EstimatorConfig {
            variant,
            q,
            r,
            p0,
            m_w: DEFAULT_WINDOW,
            mu_floor: DEFAULT_MU_FLOOR,
        }
    }

    fn validate(&self, dim: usize, n_channels: usize) -> Result<(), CoreError> {
        if self.q.nrows() != dim || self.q.ncols() != dim {
            return Err(CoreError::Validation(format!(
                "process-noise covariance is {}x{}, expected {dim}x{dim}",
                self.q.nrows(),
                self.q.ncols()
            )));
        }
        if self.r.len() != n_channels {
            return Err(CoreError::Validation(format!(
                "measurement-noise diagonal has {} entries, expected {n_channels}",
                self.r.len()
            )));
        }
        if self.p0.len() != dim {
            return Err(CoreError::Validation(format!(
                "initial-covariance diagonal has {} entries, expected {dim}",
                self.p0.len()
            )));
        }
        for i in 0..dim {
            if !(self.q[(i, i)] > 0.0) {
                return Err(CoreError::Validation(format!(
                    "process-noise variance for state {i} must be positive"
                )));
            }
        }
        if self.r.iter().any(|v| !(*v > 0.0)) {
            return Err(CoreError::Validation(String::from(
                "all measurement-noise variances must be positive",
            )));
        }
        if self.p0.iter().any(|v| !(*v > 0.0)) {
            return Err(CoreError::Validation(String::from(
                "all initial state variances must be positive",
            )));
        }
        if self.m_w == 0 {
            return Err(CoreError::Validation(String::from(
                "innovation window length must be at least 1",
            )));
        }
        if !(self.mu_floor >= 1.0) {
            return Err(CoreError::Validation(String::from(
                "noise-scale floor must be at least 1",
            )));
        }
        Ok(())
    }
}

/// Output of a filter run over a measurement series.
#[derive(Debug, Clone)]
pub struct EstimationResult {
    pub variant: Variant,
    /// Posterior state estimates, one per step `t = 1..=T`.
    pub xhat: Vec<DVector<f64>>,
    /// Posterior covariance diagonals, aligned with `xhat`.
    pub p_diag: Vec<DVector<f64>>,
    /// Innovations `z_t - H x_(t|t-1)`, aligned with `xhat`.
    pub innovations: Vec<DVector<f64>>,
    /// Predicted measurements `H x_(t|t)`, aligned with `xhat`.
    pub zhat: Vec<DVector<f64>>,
    /// Diagonals of the innovation covariance `H P H^T + diag(r_eff)` used at
    /// each update; normalizing the innovations by their square roots should
    /// yield roughly unit-variance sequences on a healthy run.
    pub s_diag: Vec<DVector<f64>>,
    /// Per-channel noise-scaling factors, present for the robust variant.
    pub mu: Option<Vec<DVector<f64>>>,
}

/// One prediction step: `x <- F x + u`, `P <- F P F^T + Q`.
///
/// The covariance is symmetrized after the congruence to keep round-off from
/// accumulating into an asymmetric matrix.
pub fn predict(
    xhat: &DVector<f64>,
    p: &DMatrix<f64>,
    f: &DMatrix<f64>,
    u: &DVector<f64>,
    q: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let xpred = f * xhat + u;
    let fp = f * p;
    let mut ppred = &fp * f.transpose() + q;
    symmetrize(&mut ppred);
    (xpred, ppred)
}

/// One measurement update with a diagonal effective measurement covariance.
///
/// Solves through a Cholesky factorization of the innovation covariance
/// `S = H P H^T + diag(r_eff)` instead of forming an inverse. Returns the
/// posterior state, posterior covariance, and the innovation.
pub fn kf_update(
    xpred: &DVector<f64>,
    ppred: &DMatrix<f64>,
    z: &DVector<f64>,
    h: &DMatrix<f64>,
    r_eff: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>, DVector<f64>), CoreError> {
    let hp = h * ppred;
    let mut s = &hp * h.transpose();
    for i in 0..r_eff.len() {
        s[(i, i)] += r_eff[i];
    }
    let chol = Cholesky::new(s).ok_or_else(|| {
        CoreError::Numerical(String::from(
            "innovation covariance is not positive definite",
        ))
    })?;
    // K = P H^T S^-1 = (S^-1 H P)^T, so one triangular solve covers the gain.
    let gain = chol.solve(&hp).transpose();
    let innovation = z - h * xpred;
    let xnew = xpred + &gain * &innovation;
    let mut pnew = ppred - &gain * &hp;
    symmetrize(&mut pnew);
    Ok((xnew, pnew, innovation))
}

/// Diagonal of the innovation covariance `H P H^T + diag(r_eff)`.
pub fn innovation_variances(
    h: &DMatrix<f64>,
    ppred: &DMatrix<f64>,
    r_eff: &DVector<f64>,
) -> DVector<f64> {
    let hp = h * ppred;
    DVector::from_fn(r_eff.len(), |i, _| hp.row(i).dot(&h.row(i)) + r_eff[i])
}

/// Sample second moment of a window of innovations: `(1/m) sum e e^T`.
pub fn innovation_covariance_estimate(window: &[DVector<f64>]) -> DMatrix<f64> {
    assert!(!window.is_empty(), "innovation window must not be empty");
    let n = window[0].len();
    let mut c = DMatrix::zeros(n, n);
    for e in window {
        c += e * e.transpose();
    }
    c /= window.len() as f64;
    c
}

/// Per-channel noise-scaling factors from an innovation covariance estimate.
///
/// Each factor is the ratio of the excess innovation variance (observed minus
/// what the predicted state covariance explains) to the nominal measurement
/// variance, clamped from below so the effective noise never shrinks under
/// its configured level.
pub fn compute_scalar(
    c_e: &DMatrix<f64>,
    h: &DMatrix<f64>,
    ppred: &DMatrix<f64>,
    r: &DVector<f64>,
    mu_floor: f64,
) -> DVector<f64> {
    let hp = h * ppred;
    let n = r.len();
    DVector::from_fn(n, |i, _| {
        let hpht_ii = hp.row(i).dot(&h.row(i));
        let mu = (c_e[(i, i)] - hpht_ii) / r[i];
        mu.max(mu_floor)
    })
}

/// Initial state estimate for a measurement series: the steady state under
/// the loads recorded at its start.
pub fn initial_state(
    net: &GasNetwork,
    series: &MeasurementSeries,
) -> Result<DVector<f64>, CoreError> {
    Ok(steady_state(net, &series.initial_loads)?.x)
}

enum ScalarSource {
    Nominal,
    Window,
    ForcedOnes,
}

/// Runs the configured filter over a measurement series.
///
/// The initial estimate is the steady state under the series' starting loads;
/// the per-step input is rebuilt from the true withdrawals the series carries,
/// so the filter sees the same boundary conditions the plant did.
pub fn run_filter(
    model: &TransientModel,
    net: &GasNetwork,
    series: &MeasurementSeries,
    cfg: &EstimatorConfig,
) -> Result<EstimationResult, CoreError> {
    let source = match cfg.variant {
        Variant::Classic => ScalarSource::Nominal,
        Variant::Robust => ScalarSource::Window,
    };
    run_filter_inner(model, net, series, cfg, source)
}

/// Diagnostic twin of [`run_filter`] that runs the robust code path with
/// every noise-scaling factor pinned to one.
///
/// Because scaling by one is exact in floating point, the returned trace is
/// bit-for-bit identical to the classical filter's; this exists to verify
/// that the two variants share their arithmetic.
pub fn run_filter_forced_identity(
    model: &TransientModel,
    net: &GasNetwork,
    series: &MeasurementSeries,
    cfg: &EstimatorConfig,
) -> Result<EstimationResult, CoreError> {
    run_filter_inner(model, net, series, cfg, ScalarSource::ForcedOnes)
}

fn run_filter_inner(
    model: &TransientModel,
    net: &GasNetwork,
    series: &MeasurementSeries,
    cfg: &EstimatorConfig,
    source: ScalarSource,
) -> Result<EstimationResult, CoreError> {
    let index = model.index();
    let dim = index.dim();
    let n_nodes = index.n_nodes();
    let n_channels = 2 * n_nodes;
    if series.channels.len() != n_channels {
        return Err(CoreError::Validation(format!(
            "series has {} channels, expected {n_channels}",
            series.channels.len()
        )));
    }
    if (series.dt_s - model.dt_s()).abs() > 1.0e-9 * model.dt_s() {
        return Err(CoreError::Validation(format!(
            "series step {} s does not match the model step {} s",
            series.dt_s,
            model.dt_s()
        )));
    }
    cfg.validate(dim, n_channels)?;

    let h = measurement_matrix(net, index);
    let steps = series.z.len();
    let mut xhat = initial_state(net, series)?;
    let mut p = DMatrix::from_diagonal(&cfg.p0);
    let mut window: VecDeque<DVector<f64>> = VecDeque::with_capacity(cfg.m_w);
    let mut loads = alloc::vec![0.0f64; n_nodes];

    let mut out = EstimationResult {
        variant: cfg.variant,
        xhat: Vec::with_capacity(steps),
        p_diag: Vec::with_capacity(steps),
        innovations: Vec::with_capacity(steps),
        zhat: Vec::with_capacity(steps),
        s_diag: Vec::with_capacity(steps),
        mu: match source {
            ScalarSource::Nominal => None,
            _ => Some(Vec::with_capacity(steps)),
        },
    };

    for t in 0..steps {
        // Boundary input over [t, t+1) from the true withdrawals at t+1. A
        // demand node's flow channel reads exactly its scheduled draw, so the
        // series' noise-free trace carries the inputs the plant ran under.
        for (i, node) in net.nodes().iter().enumerate() {
            loads[i] = if node.is_source() {
                0.0
            } else {
                series.truth[t][n_nodes + i]
            };
        }
        let u = model.input(net, &loads)?;
        let (xpred, ppred) = predict(&xhat, &p, model.f(), &u, &cfg.q);

        let innovation = &series.z[t] - &h * &xpred;
        let r_eff = match source {
            ScalarSource::Nominal => cfg.r.clone(),
            ScalarSource::Window => {
                if window.len() == cfg.m_w {
                    window.pop_front();
                }
                window.push_back(innovation.clone());
                let samples: Vec<DVector<f64>> = window.iter().cloned().collect();
                let c_e = innovation_covariance_estimate(&samples);
                let mu = compute_scalar(&c_e, &h, &ppred, &cfg.r, cfg.mu_floor);
                let scaled = mu.component_mul(&cfg.r);
                out.mu.as_mut().expect("mu trace").push(mu);
                scaled
            }
            ScalarSource::ForcedOnes => {
                let mu = DVector::from_element(n_channels, 1.0);
                let scaled = mu.component_mul(&cfg.r);
                out.mu.as_mut().expect("mu trace").push(mu);
                scaled
            }
        };

        let s_diag = innovation_variances(&h, &ppred, &r_eff);
        let (xnew, pnew, innovation) = kf_update(&xpred, &ppred, &series.z[t], &h, &r_eff)?;
        xhat = xnew;
        p = pnew;
        let p_diag = p.diagonal();
        if p_diag.iter().any(|v| !(*v > 0.0)) {
            return Err(CoreError::Numerical(format!(
                "state covariance lost positive definiteness at step {}",
                t + 1
            )));
        }
        out.zhat.push(&h * &xhat);
        out.xhat.push(xhat.clone());
        out.p_diag.push(p_diag);
        out.innovations.push(innovation);
        out.s_diag.push(s_diag);
    }
    Ok(out)
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{assemble, SteadyState};
    use crate::network::{GasNetwork, Node, Pipeline};
    use crate::sim::{
        simulate, synthesize_measurements, BadDataEvent, ChannelKind, LoadProfile, NoiseConfig,
        Scenario,
    };
    use alloc::collections::BTreeMap;
    use alloc::vec;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use rand_distr::{Distribution, Normal};

    fn two_node_net() -> GasNetwork {
        GasNetwork::new(
            vec![Node::source(1, 27.8), Node::sink(2)],
            vec![Pipeline::new(1, 2, 10.0, 0.4)],
            340.0,
            0.015,
        )
        .unwrap()
    }

    fn model_at(net: &GasNetwork, loads: &[f64]) -> (TransientModel, SteadyState) {
        let steady = steady_state(net, loads).unwrap();
        let model = assemble(net, 900.0, &steady.u_bar).unwrap();
        (model, steady)
    }

    fn two_node_scenario(seed: u64) -> Scenario {
        let mut loads = BTreeMap::new();
        loads.insert(2, LoadProfile::constant(5.0).unwrap());
        Scenario {
            dt_s: 900.0,
            horizon_s: 86_400.0,
            seed,
            loads,
            noise: NoiseConfig::default(),
            bad_data: vec![],
            bias: vec![],
        }
    }

    fn run_two_node(
        seed: u64,
        variant: Variant,
    ) -> (TransientModel, GasNetwork, MeasurementSeries, EstimationResult) {
        let net = two_node_net();
        let (model, _) = model_at(&net, &[0.0, 5.0]);
        let sc = two_node_scenario(seed);
        let traj = simulate(&model, &net, &sc).unwrap();
        let h = measurement_matrix(&net, model.index());
        let series = synthesize_measurements(&traj, &h, &net, &sc).unwrap();
        let x0 = initial_state(&net, &series).unwrap();
        let cfg = EstimatorConfig::defaults(&model, &series.channels, &x0, variant);
        let result = run_filter(&model, &net, &series, &cfg).unwrap();
        (model, net, series, result)
    }

    #[test]
    fn scalar_update_matches_closed_form() {
        // One state, one channel, P = R = 1, prior 0, measurement 2:
        // S = 2, K = 1/2, posterior mean 1, posterior variance 1/2.
        let xpred = DVector::from_element(1, 0.0);
        let ppred = DMatrix::from_element(1, 1, 1.0);
        let h = DMatrix::from_element(1, 1, 1.0);
        let z = DVector::from_element(1, 2.0);
        let r = DVector::from_element(1, 1.0);
        let (x, p, e) = kf_update(&xpred, &ppred, &z, &h, &r).unwrap();
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1.0e-12);
        assert_abs_diff_eq!(p[(0, 0)], 0.5, epsilon = 1.0e-12);
        assert_abs_diff_eq!(e[0], 2.0, epsilon = 1.0e-12);
    }

    #[test]
    fn zero_innovation_leaves_state_untouched() {
        let net = two_node_net();
        let (model, steady) = model_at(&net, &[0.0, 5.0]);
        let h = measurement_matrix(&net, model.index());
        let dim = model.dim();
        let ppred = DMatrix::from_diagonal(&DVector::from_element(dim, 1.0e-3));
        let z = &h * &steady.x;
        let r = DVector::from_element(h.nrows(), 1.0e-4);
        let (x, _, e) = kf_update(&steady.x, &ppred, &z, &h, &r).unwrap();
        assert_eq!(e, DVector::zeros(h.nrows()));
        assert_eq!(x, steady.x);
    }

    #[test]
    fn huge_noise_on_a_channel_disables_its_gain_column() {
        let net = two_node_net();
        let (model, steady) = model_at(&net, &[0.0, 5.0]);
        let h = measurement_matrix(&net, model.index());
        let dim = model.dim();
        let ppred = DMatrix::from_diagonal(&DVector::from_element(dim, 1.0e-2));
        // Perturb only channel 0 and declare that channel nearly useless.
        let mut z = &h * &steady.x;
        z[0] += 50.0;
        let mut r = DVector::from_element(h.nrows(), 1.0e-4);
        r[0] = 1.0e30;
        let (x, _, _) = kf_update(&steady.x, &ppred, &z, &h, &r).unwrap();
        let shift = (&x - &steady.x).amax();
        assert!(
            shift < 1.0e-12 * steady.x.amax(),
            "a channel with enormous variance still moved the state by {shift:e}"
        );
    }

    #[test]
    fn stiffer_noise_attenuates_the_update_monotonically() {
        let net = two_node_net();
        let (model, steady) = model_at(&net, &[0.0, 5.0]);
        let h = measurement_matrix(&net, model.index());
        let dim = model.dim();
        let ppred = DMatrix::from_diagonal(&DVector::from_element(dim, 1.0e-2));
        let channel = 2; // node-1 flow channel
        let mut z = &h * &steady.x;
        z[channel] += 1.0;
        let base = DVector::from_element(h.nrows(), 1.0e-3);
        let mut last = f64::INFINITY;
        for scale in [1.0, 4.0, 64.0, 4096.0] {
            let mut r = base.clone();
            r[channel] *= scale;
            let (x, _, _) = kf_update(&steady.x, &ppred, &z, &h, &r).unwrap();
            let moved = (&x - &steady.x).norm();
            assert!(
                moved < last,
                "inflating channel variance by {scale} did not shrink the update"
            );
            last = moved;
        }
    }

    #[test]
    fn joseph_form_agrees_with_simple_covariance_update() {
        // The numerically redundant Joseph form (I-KH)P(I-KH)^T + K R K^T must
        // agree with the P - K H P shortcut the update uses.
        let net = two_node_net();
        let (model, steady) = model_at(&net, &[0.0, 5.0]);
        let h = measurement_matrix(&net, model.index());
        let dim = model.dim();
        let mut pdiag = DVector::from_element(dim, 0.0);
        for i in 0..dim {
            pdiag[i] = 1.0e-3 * (1.0 + (i as f64) * 0.37);
        }
        let ppred = DMatrix::from_diagonal(&pdiag);
        let mut z = &h * &steady.x;
        z[1] += 0.3;
        z[3] -= 0.2;
        let r = DVector::from_fn(h.nrows(), |i, _| 1.0e-4 * (1.0 + i as f64));
        let (_, p_simple, _) = kf_update(&steady.x, &ppred, &z, &h, &r).unwrap();

        let hp = &h * &ppred;
        let mut s = &hp * h.transpose();
        for i in 0..r.len() {
            s[(i, i)] += r[i];
        }
        let chol = Cholesky::new(s).unwrap();
        let gain = chol.solve(&hp).transpose();
        let ikh = DMatrix::identity(dim, dim) - &gain * &h;
        let p_joseph =
            &ikh * &ppred * ikh.transpose() + &gain * DMatrix::from_diagonal(&r) * gain.transpose();
        let diff = (&p_joseph - &p_simple).amax();
        assert!(
            diff <= 1.0e-8 * p_joseph.amax(),
            "covariance forms disagree by {diff:e}"
        );
    }

    #[test]
    fn innovation_covariance_handles_degenerate_windows() {
        let e = DVector::from_vec(vec![1.0, -2.0]);
        let single = innovation_covariance_estimate(core::slice::from_ref(&e));
        assert_eq!(single[(0, 0)], 1.0);
        assert_eq!(single[(1, 1)], 4.0);
        assert_eq!(single[(0, 1)], -2.0);
        assert_eq!(single[(1, 0)], -2.0);

        let repeated = vec![e.clone(), e.clone(), e];
        let c = innovation_covariance_estimate(&repeated);
        assert_abs_diff_eq!(c[(0, 1)], -2.0, epsilon = 1.0e-15);
    }

    #[test]
    fn innovation_covariance_converges_on_sampled_noise() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let unit = Normal::new(0.0, 1.0).unwrap();
        let sig = [0.5, 2.0];
        let mut window = Vec::with_capacity(10_000);
        for _ in 0..10_000 {
            window.push(DVector::from_vec(vec![
                sig[0] * unit.sample(&mut rng),
                sig[1] * unit.sample(&mut rng),
            ]));
        }
        let c = innovation_covariance_estimate(&window);
        let truth = DMatrix::from_diagonal(&DVector::from_vec(vec![0.25, 4.0]));
        let err = (&c - &truth).norm() / truth.norm();
        assert!(err < 0.05, "sample covariance off by {err:.3} relative");
    }

    #[test]
    fn noise_scale_recovers_known_inflation() {
        // With C_e = H P H^T + k R the excess-variance ratio is exactly k,
        // so the clamped factors must come out as max(1, k).
        let h = DMatrix::identity(2, 2);
        let ppred = DMatrix::from_diagonal(&DVector::from_vec(vec![0.3, 0.7]));
        let r = DVector::from_vec(vec![0.2, 5.0]);
        for k in [0.5, 1.0, 100.0] {
            let mut c_e = &h * &ppred * h.transpose();
            for i in 0..2 {
                c_e[(i, i)] += k * r[i];
            }
            let mu = compute_scalar(&c_e, &h, &ppred, &r, 1.0);
            for i in 0..2 {
                assert_abs_diff_eq!(mu[i], k.max(1.0), epsilon = 1.0e-10);
            }
        }
    }

    #[test]
    fn prediction_tracks_fixed_points_and_grows_covariance() {
        let net = two_node_net();
        let (model, steady) = model_at(&net, &[0.0, 5.0]);
        let dim = model.dim();
        let u = model.input(&net, &[0.0, 5.0]).unwrap();
        let q = DMatrix::from_diagonal(&DVector::from_element(dim, 1.0e-6));
        let p = DMatrix::from_diagonal(&DVector::from_element(dim, 1.0e-3));
        let (xpred, ppred) = predict(&steady.x, &p, model.f(), &u, &q);
        let drift = (&xpred - &steady.x).amax();
        assert!(drift <= 1.0e-8 * steady.x.amax());
        for i in 0..dim {
            assert!(ppred[(i, i)] >= 1.0e-6, "process noise was not added");
            for j in 0..dim {
                assert_eq!(ppred[(i, j)], ppred[(j, i)], "prediction left P asymmetric");
            }
        }
        // The state half of the prediction is exactly one transition step.
        assert_eq!(xpred, model.step(&steady.x, &u));
    }

    #[test]
    fn identity_transition_grows_covariance_linearly() {
        let f = DMatrix::identity(3, 3);
        let q = DMatrix::from_diagonal(&DVector::from_element(3, 0.125));
        let u = DVector::zeros(3);
        let mut x = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let mut p = DMatrix::from_diagonal(&DVector::from_element(3, 1.0));
        for step in 1..=8 {
            let (xn, pn) = predict(&x, &p, &f, &u, &q);
            x = xn;
            p = pn;
            for i in 0..3 {
                assert_eq!(p[(i, i)], 1.0 + 0.125 * step as f64);
            }
        }
        assert_eq!(x, DVector::from_vec(vec![1.0, -2.0, 0.5]));
    }

    #[test]
    fn filter_on_noiseless_data_reproduces_truth() {
        let net = two_node_net();
        let (model, _) = model_at(&net, &[0.0, 5.0]);
        let mut sc = two_node_scenario(3);
        sc.noise.pressure_sigma_bar = 1.0e-8;
        sc.noise.flow_sigma_rel = 1.0e-8;
        sc.noise.virtual_sigma = 1.0e-8;
        sc.loads.insert(
            2,
            LoadProfile::new(vec![
                (0.0, 5.0),
                (28_800.0, 5.0),
                (32_400.0, 5.5),
                (86_400.0, 5.5),
            ])
            .unwrap(),
        );
        let traj = simulate(&model, &net, &sc).unwrap();
        let h = measurement_matrix(&net, model.index());
        let series = synthesize_measurements(&traj, &h, &net, &sc).unwrap();
        let x0 = initial_state(&net, &series).unwrap();
        let cfg = EstimatorConfig::defaults(&model, &series.channels, &x0, Variant::Classic);
        let result = run_filter(&model, &net, &series, &cfg).unwrap();
        for (t, xhat) in result.xhat.iter().enumerate() {
            let err = (xhat - &traj.x[t + 1]).amax();
            assert!(
                err <= 1.0e-6 * traj.x[t + 1].amax(),
                "noiseless estimate off by {err:e} at step {}",
                t + 1
            );
        }
    }

    #[test]
    fn classic_filter_beats_raw_measurements_on_pressure() {
        let (model, net, series, result) = run_two_node(11, Variant::Classic);
        let slot = model.index().density(net.node_index(2));
        let channel = 1usize; // node-2 pressure channel
        let mut num = 0.0;
        let mut den = 0.0;
        for (t, zhat) in result.zhat.iter().enumerate() {
            let truth = series.truth[t][channel];
            num += (zhat[channel] - truth).powi(2);
            den += (series.z[t][channel] - truth).powi(2);
        }
        let eps = (num / den).sqrt();
        assert!(
            eps < 1.0,
            "filtered pressure was worse than the raw channel: {eps:.3}"
        );
        // And the state estimate itself stays close to the simulated density.
        let t_last = result.xhat.len() - 1;
        let err = (result.xhat[t_last][slot] - series.truth[t_last][channel]).abs();
        assert!(err < 0.05, "terminal density estimate off by {err}");
    }

    #[test]
    fn covariance_diagonal_stays_positive_and_scales_settle() {
        let (_, _, _, result) = run_two_node(19, Variant::Robust);
        for (t, pd) in result.p_diag.iter().enumerate() {
            assert!(
                pd.iter().all(|v| *v > 0.0),
                "nonpositive covariance diagonal at step {}",
                t + 1
            );
        }
        let mu = result.mu.as_ref().unwrap();
        for m in mu {
            assert!(m.iter().all(|v| *v >= 1.0), "scale fell under its floor");
        }
        // On clean data the factors should hug the floor most of the time.
        let total: usize = mu.iter().map(|m| m.len()).sum();
        let quiet = mu
            .iter()
            .flat_map(|m| m.iter())
            .filter(|v| **v < 3.0)
            .count();
        assert!(
            quiet as f64 >= 0.9 * total as f64,
            "noise scales were restless on clean data: {quiet}/{total}"
        );
    }

    #[test]
    fn corrupted_sample_spikes_its_noise_scale() {
        let net = two_node_net();
        let (model, _) = model_at(&net, &[0.0, 5.0]);
        let mut sc = two_node_scenario(23);
        sc.bad_data.push(BadDataEvent {
            kind: ChannelKind::Pressure,
            node: 2,
            t_hours: 12.0,
            value: 40.0,
        });
        let traj = simulate(&model, &net, &sc).unwrap();
        let h = measurement_matrix(&net, model.index());
        let series = synthesize_measurements(&traj, &h, &net, &sc).unwrap();
        let x0 = initial_state(&net, &series).unwrap();
        let cfg = EstimatorConfig::defaults(&model, &series.channels, &x0, Variant::Robust);
        let result = run_filter(&model, &net, &series, &cfg).unwrap();
        let mu = result.mu.as_ref().unwrap();
        let channel = 1usize;
        let step = sc.grid_step(12.0).unwrap();
        let mut values: Vec<f64> = mu.iter().map(|m| m[channel]).collect();
        let at_event = values[step - 1];
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = values[values.len() / 2];
        assert!(
            at_event > 10.0 * median,
            "corrupted sample raised the scale to only {at_event:.1} (median {median:.2})"
        );
    }

    #[test]
    fn forced_unit_scales_reproduce_the_classic_trace_bitwise() {
        let net = two_node_net();
        let (model, _) = model_at(&net, &[0.0, 5.0]);
        let sc = two_node_scenario(29);
        let traj = simulate(&model, &net, &sc).unwrap();
        let h = measurement_matrix(&net, model.index());
        let series = synthesize_measurements(&traj, &h, &net, &sc).unwrap();
        let x0 = initial_state(&net, &series).unwrap();
        let classic_cfg =
            EstimatorConfig::defaults(&model, &series.channels, &x0, Variant::Classic);
        let mut robust_cfg = classic_cfg.clone();
        robust_cfg.variant = Variant::Robust;
        let classic = run_filter(&model, &net, &series, &classic_cfg).unwrap();
        let forced = run_filter_forced_identity(&model, &net, &series, &robust_cfg).unwrap();
        assert_eq!(classic.xhat.len(), forced.xhat.len());
        for t in 0..classic.xhat.len() {
            assert_eq!(classic.xhat[t], forced.xhat[t], "state diverged at step {t}");
            assert_eq!(classic.p_diag[t], forced.p_diag[t]);
            assert_eq!(classic.innovations[t], forced.innovations[t]);
            assert_eq!(classic.zhat[t], forced.zhat[t]);
            assert_eq!(classic.s_diag[t], forced.s_diag[t]);
        }
        assert!(forced.mu.is_some() && classic.mu.is_none());
    }

    #[test]
    fn config_validation_rejects_malformed_setups() {
        let net = two_node_net();
        let (model, _) = model_at(&net, &[0.0, 5.0]);
        let sc = two_node_scenario(31);
        let traj = simulate(&model, &net, &sc).unwrap();
        let h = measurement_matrix(&net, model.index());
        let series = synthesize_measurements(&traj, &h, &net, &sc).unwrap();
        let x0 = initial_state(&net, &series).unwrap();
        let good = EstimatorConfig::defaults(&model, &series.channels, &x0, Variant::Robust);

        let mut bad = good.clone();
        bad.m_w = 0;
        assert!(run_filter(&model, &net, &series, &bad).is_err());

        let mut bad = good.clone();
        bad.mu_floor = 0.5;
        assert!(run_filter(&model, &net, &series, &bad).is_err());

        let mut bad = good.clone();
        bad.r[0] = 0.0;
        assert!(run_filter(&model, &net, &series, &bad).is_err());

        let mut bad = good;
        bad.q = DMatrix::zeros(3, 3);
        assert!(run_filter(&model, &net, &series, &bad).is_err());
    }

    #[test]
    fn innovations_on_clean_data_are_roughly_white() {
        let (_, _, _, result) = run_two_node(37, Variant::Classic);
        let steps = result.innovations.len();
        let n = result.innovations[0].len();
        for c in 0..n {
            // Sample variance of the normalized innovation e / sqrt(S_ii)
            // should sit near one when the covariance bookkeeping matches
            // the data it sees.
            let normalized: Vec<f64> = result
                .innovations
                .iter()
                .zip(&result.s_diag)
                .map(|(e, s)| e[c] / s[c].sqrt())
                .collect();
            let var = normalized.iter().map(|v| v * v).sum::<f64>() / steps as f64;
            assert!(
                (0.7..=1.3).contains(&var),
                "channel {c} normalized innovation variance is {var:.2}"
            );

            // And the raw sequence should show little serial correlation.
            let series: Vec<f64> = result.innovations.iter().map(|e| e[c]).collect();
            let mean = series.iter().sum::<f64>() / steps as f64;
            let var: f64 = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
            let lag1: f64 = series
                .windows(2)
                .map(|w| (w[0] - mean) * (w[1] - mean))
                .sum::<f64>();
            let rho = lag1 / var;
            assert!(
                rho.abs() < 0.45,
                "channel {c} innovations look serially correlated: rho = {rho:.2}"
            );
        }
    }
}
