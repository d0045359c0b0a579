//! The four commands behind the binary: simulate, estimate, evaluate, demo.
//!
//! Each command reads its inputs (files, or the bundled study when no paths
//! are given), writes CSV artifacts into the output directory, and returns
//! the list of artifacts written so the caller can print them. Everything is
//! deterministic for a fixed manifest: rerunning a command overwrites the
//! same files with the same bytes.

use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

use anyhow::{anyhow, bail, Context, Result};
use gaspipe_core::estim::{run_filter, EstimatorConfig, Variant};
use gaspipe_core::metrics::{
    filter_coefficients, max_abs_error_at_steps, mean_abs_error_at_steps, ChannelReport,
};
use gaspipe_core::model::{assemble, steady_state, TransientModel};
use gaspipe_core::network::{GasNetwork, PA_PER_BAR};
use gaspipe_core::sim::{
    channel_index, measurement_matrix, resolve_channels, simulate, synthesize_measurements,
    ChannelKind, MeasurementSeries, NodeSet, Scenario,
};
use nalgebra::DVector;

use crate::{bundled, formats, tables};

pub const TRUTH_FILE: &str = "truth.csv";
pub const MEASUREMENTS_FILE: &str = "measurements.csv";
pub const SCENARIO_ECHO_FILE: &str = "scenario_echo.scn";
pub const ESTIMATE_KF_FILE: &str = "estimate_kf.csv";
pub const ESTIMATE_RKF_FILE: &str = "estimate_rkf.csv";
pub const MU_TRACE_FILE: &str = "mu_trace.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const SUMMARY_FILE: &str = "summary.txt";

/// Which estimator variants a command touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariantSel {
    Kf,
    Rkf,
    Both,
}

impl VariantSel {
    pub fn wants_kf(self) -> bool {
        matches!(self, VariantSel::Kf | VariantSel::Both)
    }

    pub fn wants_rkf(self) -> bool {
        matches!(self, VariantSel::Rkf | VariantSel::Both)
    }
}

/// Resolved invocation: where inputs come from, where artifacts go, and the
/// estimator knobs. `network`/`scenario` of `None` select the bundled
/// 30-node study.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub network: Option<PathBuf>,
    pub scenario: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub variant: VariantSel,
    pub seed: Option<u64>,
    pub m_w: Option<usize>,
    pub mu_floor: Option<f64>,
}

impl RunManifest {
    pub fn load_network(&self) -> Result<GasNetwork> {
        match &self.network {
            None => Ok(bundled::network()),
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                formats::parse_network(&text)
                    .with_context(|| format!("in network file {}", path.display()))
            }
        }
    }

    /// The scenario named by the manifest, with the seed override applied.
    /// When no path is given and the output directory holds a scenario echo
    /// from an earlier `simulate`, the echo wins: it is the resolved record
    /// of whatever produced the files sitting next to it.
    pub fn load_scenario(&self) -> Result<Scenario> {
        let echo = self.out_dir.join(SCENARIO_ECHO_FILE);
        let (text, origin) = match &self.scenario {
            Some(path) => (
                fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?,
                path.display().to_string(),
            ),
            None if echo.is_file() => (
                fs::read_to_string(&echo)
                    .with_context(|| format!("reading {}", echo.display()))?,
                echo.display().to_string(),
            ),
            None => {
                let mut sc = bundled::normal_scenario();
                if let Some(seed) = self.seed {
                    sc.seed = seed;
                }
                return Ok(sc);
            }
        };
        let mut sc = formats::parse_scenario(&text)
            .with_context(|| format!("in scenario file {origin}"))?;
        if let Some(seed) = self.seed {
            sc.seed = seed;
        }
        Ok(sc)
    }
}

/// Steady initialization, model assembly, truth propagation, measurement
/// synthesis — the full forward pipeline for one scenario.
fn run_pipeline(
    net: &GasNetwork,
    scenario: &Scenario,
) -> Result<(TransientModel, MeasurementSeries)> {
    scenario.validate(net)?;
    let loads0 = scenario.loads_at(net, 0.0);
    let steady = steady_state(net, &loads0)?;
    let model = assemble(net, scenario.dt_s, &steady.u_bar)?;
    let h = measurement_matrix(net, model.index());
    let traj = simulate(&model, net, scenario)?;
    let series = synthesize_measurements(&traj, &h, net, scenario)?;
    Ok((model, series))
}

fn write_simulation_artifacts(
    out: &Path,
    net: &GasNetwork,
    scenario: &Scenario,
    series: &MeasurementSeries,
    notes: &mut Vec<String>,
) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let truth = out.join(TRUTH_FILE);
    tables::write_series(&truth, net, series.dt_s, &series.truth, "true")?;
    notes.push(format!("wrote {}", truth.display()));
    let meas = out.join(MEASUREMENTS_FILE);
    tables::write_series(&meas, net, series.dt_s, &series.z, "meas")?;
    notes.push(format!("wrote {}", meas.display()));
    let echo = out.join(SCENARIO_ECHO_FILE);
    fs::write(&echo, formats::serialize_scenario(scenario))
        .with_context(|| format!("writing {}", echo.display()))?;
    notes.push(format!("wrote {}", echo.display()));
    Ok(())
}

pub fn cmd_simulate(man: &RunManifest) -> Result<Vec<String>> {
    let net = man.load_network()?;
    let scenario = man.load_scenario()?;
    let (_, series) = run_pipeline(&net, &scenario)?;
    let mut notes = Vec::new();
    write_simulation_artifacts(&man.out_dir, &net, &scenario, &series, &mut notes)?;
    Ok(notes)
}

/// Rebuild a `MeasurementSeries` from the persisted truth/measurement pair.
fn reload_series(
    out: &Path,
    net: &GasNetwork,
    scenario: &Scenario,
) -> Result<MeasurementSeries> {
    let (dt_truth, truth) = tables::read_series(&out.join(TRUTH_FILE), net, "true")?;
    let (dt_z, z) = tables::read_series(&out.join(MEASUREMENTS_FILE), net, "meas")?;
    if truth.len() != z.len() || (dt_truth - dt_z).abs() > 1e-9 * dt_truth {
        bail!(
            "truth ({} rows, {} s grid) and measurements ({} rows, {} s grid) do not describe \
             the same run",
            truth.len(),
            dt_truth,
            z.len(),
            dt_z
        );
    }
    if (dt_truth - scenario.dt_s).abs() > 1e-9 * scenario.dt_s
        || truth.len() != scenario.steps()
    {
        bail!(
            "measurement files hold {} rows on a {} s grid but the scenario runs {} steps of \
             {} s",
            truth.len(),
            dt_truth,
            scenario.steps(),
            scenario.dt_s
        );
    }
    let channels = resolve_channels(net, scenario, &truth);
    Ok(MeasurementSeries {
        dt_s: scenario.dt_s,
        channels,
        z,
        truth,
        corruption: vec![],
        initial_loads: scenario.loads_at(net, 0.0),
    })
}

/// Measurement series for `estimate`: reuse the persisted files when both are
/// present, otherwise run the forward pipeline and persist it first.
fn obtain_series(
    out: &Path,
    net: &GasNetwork,
    scenario: &Scenario,
    notes: &mut Vec<String>,
) -> Result<MeasurementSeries> {
    let have_files = out.join(TRUTH_FILE).is_file() && out.join(MEASUREMENTS_FILE).is_file();
    if have_files {
        reload_series(out, net, scenario)
    } else {
        let (_, series) = run_pipeline(net, scenario)?;
        write_simulation_artifacts(out, net, scenario, &series, notes)?;
        Ok(series)
    }
}

pub fn cmd_estimate(man: &RunManifest) -> Result<Vec<String>> {
    let net = man.load_network()?;
    let scenario = man.load_scenario()?;
    let mut notes = Vec::new();
    let series = obtain_series(&man.out_dir, &net, &scenario, &mut notes)?;

    let steady = steady_state(&net, &series.initial_loads)?;
    let model = assemble(&net, series.dt_s, &steady.u_bar)?;
    let mut cfg = EstimatorConfig::defaults(&model, &series.channels, &steady.x, Variant::Classic);
    if let Some(m_w) = man.m_w {
        cfg.m_w = m_w;
    }
    if let Some(floor) = man.mu_floor {
        cfg.mu_floor = floor;
    }

    if man.variant.wants_kf() {
        let result = run_filter(&model, &net, &series, &cfg)?;
        let path = man.out_dir.join(ESTIMATE_KF_FILE);
        tables::write_series(&path, &net, series.dt_s, &result.zhat, "kf")?;
        notes.push(format!("wrote {}", path.display()));
    }
    if man.variant.wants_rkf() {
        let mut rkf_cfg = cfg.clone();
        rkf_cfg.variant = Variant::Robust;
        let result = run_filter(&model, &net, &series, &rkf_cfg)?;
        let path = man.out_dir.join(ESTIMATE_RKF_FILE);
        tables::write_series(&path, &net, series.dt_s, &result.zhat, "rkf")?;
        notes.push(format!("wrote {}", path.display()));
        let mu = result.mu.as_ref().expect("robust run records its noise scales");
        let mu_path = man.out_dir.join(MU_TRACE_FILE);
        tables::write_mu(&mu_path, &net, series.dt_s, mu)?;
        notes.push(format!("wrote {}", mu_path.display()));
    }
    Ok(notes)
}

/// Key numbers `demo` folds into its cross-condition verdict lines.
#[derive(Debug, Default, Clone)]
pub struct KeyFigures {
    /// Fraction of scored non-virtual channels where the robust coefficient
    /// is no worse than the classic one.
    pub frac_rkf_no_worse: Option<f64>,
    /// Worst robust/classic ratio of event-instant errors over bad-data
    /// event groups (smaller is better).
    pub bad_data_worst_ratio: Option<f64>,
    /// Smallest classic/robust factor of bias-window mean errors over bias
    /// groups (larger is better).
    pub bias_min_factor: Option<f64>,
}

struct Evaluation {
    notes: Vec<String>,
    summary: String,
    figures: KeyFigures,
}

/// Unit conversion for human-readable error lines: internal density errors
/// become bar, flows stay kg/s.
fn to_file_units(net: &GasNetwork, kind: ChannelKind, v: f64) -> f64 {
    match kind {
        ChannelKind::Pressure => v * net.sound_speed() * net.sound_speed() / PA_PER_BAR,
        ChannelKind::Flow => v,
    }
}

fn kind_noun(kind: ChannelKind) -> &'static str {
    match kind {
        ChannelKind::Pressure => "pressure",
        ChannelKind::Flow => "flow",
    }
}

fn kind_unit(kind: ChannelKind) -> &'static str {
    match kind {
        ChannelKind::Pressure => "bar",
        ChannelKind::Flow => "kg/s",
    }
}

fn eps_line(tag: &str, reports: &[ChannelReport]) -> String {
    let mut max_nonvirtual: f64 = 0.0;
    let mut all_below_one = true;
    let mut any = false;
    let mut vmin = f64::INFINITY;
    let mut vmax = f64::NEG_INFINITY;
    for r in reports {
        if let Some(e) = r.epsilon {
            if r.is_virtual {
                vmin = vmin.min(e);
                vmax = vmax.max(e);
            } else {
                any = true;
                max_nonvirtual = max_nonvirtual.max(e);
                all_below_one &= e < 1.0;
            }
        }
    }
    let virtuals = if vmin.is_finite() {
        format!("; virtual epsilon in [{vmin:.4}, {vmax:.4}]")
    } else {
        String::new()
    };
    if any {
        format!(
            "{tag}: max non-virtual epsilon {max_nonvirtual:.4} (all < 1: {}){virtuals}",
            if all_below_one { "yes" } else { "NO" }
        )
    } else {
        format!("{tag}: no scored channels{virtuals}")
    }
}

/// Steps covered by a bias window on the measurement grid `1..=steps`.
fn bias_window_steps(scenario: &Scenario, t_start_hours: f64, t_end_hours: f64) -> Vec<usize> {
    let to_step = |h: f64| (h * 3600.0 / scenario.dt_s).round() as i64;
    let lo = to_step(t_start_hours).max(1);
    let hi = to_step(t_end_hours).min(scenario.steps() as i64);
    (lo..=hi).map(|s| s as usize).collect()
}

fn evaluate_series(
    out: &Path,
    net: &GasNetwork,
    scenario: &Scenario,
    variant: VariantSel,
) -> Result<Evaluation> {
    let series = reload_series(out, net, scenario)?;
    let mut notes = Vec::new();
    let mut figures = KeyFigures::default();

    let load_estimate = |file: &str, suffix: &str| -> Result<Vec<DVector<f64>>> {
        let path = out.join(file);
        if !path.is_file() {
            bail!(
                "missing {}; run `gaspipe-dse estimate` into this directory first",
                path.display()
            );
        }
        let (dt, zhat) = tables::read_series(&path, net, suffix)?;
        if (dt - series.dt_s).abs() > 1e-9 * series.dt_s || zhat.len() != series.truth.len() {
            bail!(
                "{} does not share the measurement grid ({} rows of {} s)",
                path.display(),
                series.truth.len(),
                series.dt_s
            );
        }
        Ok(zhat)
    };

    let kf = if variant.wants_kf() {
        Some(load_estimate(ESTIMATE_KF_FILE, "kf")?)
    } else {
        None
    };
    let rkf = if variant.wants_rkf() {
        Some(load_estimate(ESTIMATE_RKF_FILE, "rkf")?)
    } else {
        None
    };

    let rep_kf = kf
        .as_ref()
        .map(|zhat| filter_coefficients(net, &series, zhat))
        .transpose()?;
    let rep_rkf = rkf
        .as_ref()
        .map(|zhat| filter_coefficients(net, &series, zhat))
        .transpose()?;

    let report_path = out.join(REPORT_FILE);
    tables::write_report(&report_path, net, rep_kf.as_deref(), rep_rkf.as_deref())?;
    notes.push(format!("wrote {}", report_path.display()));

    // Summary text.
    let mut s = String::new();
    let some_rep = rep_kf.as_ref().or(rep_rkf.as_ref()).expect("at least one variant runs");
    let n_virtual = some_rep.iter().filter(|r| r.is_virtual).count();
    let n_scored =
        some_rep.iter().filter(|r| !r.is_virtual && r.epsilon.is_some()).count();
    s.push_str(&format!(
        "channels: {} total, {} scored non-virtual, {} virtual, {} not scored\n",
        some_rep.len(),
        n_scored,
        n_virtual,
        some_rep.len() - n_scored - n_virtual
    ));
    if let Some(rep) = &rep_kf {
        s.push_str(&eps_line("kf ", rep));
        s.push('\n');
    }
    if let Some(rep) = &rep_rkf {
        s.push_str(&eps_line("rkf", rep));
        s.push('\n');
    }
    if let (Some(a), Some(b)) = (&rep_kf, &rep_rkf) {
        let mut scored = 0usize;
        let mut no_worse = 0usize;
        for (ra, rb) in a.iter().zip(b) {
            if ra.is_virtual {
                continue;
            }
            if let (Some(ea), Some(eb)) = (ra.epsilon, rb.epsilon) {
                scored += 1;
                if eb <= ea {
                    no_worse += 1;
                }
            }
        }
        let frac = no_worse as f64 / scored as f64;
        figures.frac_rkf_no_worse = Some(frac);
        s.push_str(&format!(
            "rkf no worse than kf on {no_worse}/{scored} scored channels ({:.1}%)\n",
            100.0 * frac
        ));
    }

    // Event-window errors for the corruption studies.
    let mut groups: Vec<(ChannelKind, u32, Vec<usize>)> = Vec::new();
    for ev in &scenario.bad_data {
        let step = scenario.grid_step(ev.t_hours)?;
        match groups.iter_mut().find(|(k, n, _)| *k == ev.kind && *n == ev.node) {
            Some((_, _, steps)) => steps.push(step),
            None => groups.push((ev.kind, ev.node, vec![step])),
        }
    }
    for (kind, node, steps) in &groups {
        let ch = channel_index(net, *kind, *node);
        let err = |zhat: &Option<Vec<DVector<f64>>>| -> Result<Option<f64>> {
            zhat.as_ref()
                .map(|z| max_abs_error_at_steps(&series, z, ch, steps))
                .transpose()
                .map_err(Into::into)
        };
        let e_kf = err(&kf)?.map(|e| to_file_units(net, *kind, e));
        let e_rkf = err(&rkf)?.map(|e| to_file_units(net, *kind, e));
        let mut line = format!(
            "bad data, node {node} {}: max |error| at event instants",
            kind_noun(*kind)
        );
        if let Some(e) = e_kf {
            line.push_str(&format!(" kf {e:.4} {}", kind_unit(*kind)));
        }
        if let Some(e) = e_rkf {
            line.push_str(&format!(" rkf {e:.4} {}", kind_unit(*kind)));
        }
        if let (Some(a), Some(b)) = (e_kf, e_rkf) {
            let ratio = b / a;
            line.push_str(&format!(" (ratio {ratio:.4})"));
            let worst = figures.bad_data_worst_ratio.get_or_insert(ratio);
            *worst = worst.max(ratio);
        }
        s.push_str(&line);
        s.push('\n');
    }

    for ev in &scenario.bias {
        let steps = bias_window_steps(scenario, ev.t_start_hours, ev.t_end_hours);
        if steps.is_empty() {
            continue;
        }
        // Average the window error over the affected, honestly-scored
        // channels of the event's kind.
        let mut channels = Vec::new();
        for (c, meta) in series.channels.iter().enumerate() {
            if meta.kind != ev.kind || meta.is_virtual {
                continue;
            }
            if meta.kind == ChannelKind::Pressure && net.is_source(meta.node) {
                continue;
            }
            let selected = match &ev.nodes {
                NodeSet::All => true,
                NodeSet::Nodes(ids) => ids.contains(&meta.node),
            };
            if selected {
                channels.push(c);
            }
        }
        if channels.is_empty() {
            continue;
        }
        let mean_err = |zhat: &Option<Vec<DVector<f64>>>| -> Result<Option<f64>> {
            match zhat {
                None => Ok(None),
                Some(z) => {
                    let mut acc = 0.0;
                    for &c in &channels {
                        acc += mean_abs_error_at_steps(&series, z, c, &steps)?;
                    }
                    Ok(Some(to_file_units(net, ev.kind, acc / channels.len() as f64)))
                }
            }
        };
        let e_kf = mean_err(&kf)?;
        let e_rkf = mean_err(&rkf)?;
        let mut line = format!(
            "bias, {} channels {}h-{}h: window mean |error|",
            kind_noun(ev.kind),
            ev.t_start_hours,
            ev.t_end_hours
        );
        if let Some(e) = e_kf {
            line.push_str(&format!(" kf {e:.4} {}", kind_unit(ev.kind)));
        }
        if let Some(e) = e_rkf {
            line.push_str(&format!(" rkf {e:.4} {}", kind_unit(ev.kind)));
        }
        if let (Some(a), Some(b)) = (e_kf, e_rkf) {
            let factor = a / b;
            line.push_str(&format!(" (factor {factor:.2})"));
            let worst = figures.bias_min_factor.get_or_insert(factor);
            *worst = worst.min(factor);
        }
        s.push_str(&line);
        s.push('\n');
    }

    Ok(Evaluation { notes, summary: s, figures })
}

pub fn cmd_evaluate(man: &RunManifest) -> Result<Vec<String>> {
    let net = man.load_network()?;
    let scenario = man.load_scenario()?;
    let mut ev = evaluate_series(&man.out_dir, &net, &scenario, man.variant)?;
    let path = man.out_dir.join(SUMMARY_FILE);
    fs::write(&path, &ev.summary).with_context(|| format!("writing {}", path.display()))?;
    ev.notes.push(format!("wrote {}", path.display()));
    Ok(ev.notes)
}

/// Run one demo condition end to end in its own subdirectory.
fn demo_condition(
    name: &str,
    scenario: Scenario,
    man: &RunManifest,
) -> Result<(Vec<String>, String, KeyFigures)> {
    let mut scenario = scenario;
    if let Some(seed) = man.seed {
        scenario.seed = seed;
    }
    let out = man.out_dir.join(name);
    let net = bundled::network();

    let (_, series) = run_pipeline(&net, &scenario)?;
    let mut notes = Vec::new();
    write_simulation_artifacts(&out, &net, &scenario, &series, &mut notes)?;

    let sub = RunManifest {
        network: None,
        scenario: None,
        out_dir: out.clone(),
        variant: VariantSel::Both,
        seed: None,
        m_w: man.m_w,
        mu_floor: man.mu_floor,
    };
    notes.extend(cmd_estimate(&sub)?);

    let mut ev = evaluate_series(&out, &net, &scenario, VariantSel::Both)?;
    let path = out.join(SUMMARY_FILE);
    fs::write(&path, &ev.summary).with_context(|| format!("writing {}", path.display()))?;
    ev.notes.push(format!("wrote {}", path.display()));
    notes.extend(ev.notes);
    Ok((notes, ev.summary, ev.figures))
}

/// The full bundled study: normal, bad-data, and bias conditions run
/// concurrently (each internally sequential), both variants each, plus a
/// cross-condition summary at the root.
pub fn cmd_demo(man: &RunManifest) -> Result<Vec<String>> {
    let conditions = [
        ("normal", bundled::normal_scenario()),
        ("bad_data", bundled::bad_data_scenario()),
        ("bias", bundled::bias_scenario()),
    ];

    let results: Vec<Result<(Vec<String>, String, KeyFigures)>> = thread::scope(|scope| {
        let handles: Vec<_> = conditions
            .iter()
            .map(|(name, sc)| scope.spawn(move || demo_condition(name, sc.clone(), man)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(anyhow!("demo worker panicked"))))
            .collect()
    });

    let mut notes = Vec::new();
    let mut summary = String::new();
    let mut verdicts = String::from("== verdicts ==\n");
    for ((name, _), result) in conditions.iter().zip(results) {
        let (cond_notes, cond_summary, figures) =
            result.with_context(|| format!("demo condition `{name}`"))?;
        notes.extend(cond_notes);
        summary.push_str(&format!("== {name} ==\n{cond_summary}\n"));
        match *name {
            "normal" => {
                if let Some(frac) = figures.frac_rkf_no_worse {
                    verdicts.push_str(&format!(
                        "normal: robust no worse than classic on {:.1}% of scored channels \
                         (majority: {})\n",
                        100.0 * frac,
                        if frac >= 0.5 { "yes" } else { "NO" }
                    ));
                }
            }
            "bad_data" => {
                if let Some(ratio) = figures.bad_data_worst_ratio {
                    verdicts.push_str(&format!(
                        "bad_data: worst event-window error ratio robust/classic {ratio:.4} \
                         (robust better: {})\n",
                        if ratio < 1.0 { "yes" } else { "NO" }
                    ));
                }
            }
            _ => {
                if let Some(factor) = figures.bias_min_factor {
                    verdicts.push_str(&format!(
                        "bias: smallest classic/robust window-error factor {factor:.2} \
                         (robust better: {})\n",
                        if factor > 1.0 { "yes" } else { "NO" }
                    ));
                }
            }
        }
    }
    summary.push_str(&verdicts);

    let path = man.out_dir.join(SUMMARY_FILE);
    fs::write(&path, summary).with_context(|| format!("writing {}", path.display()))?;
    notes.push(format!("wrote {}", path.display()));
    Ok(notes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use gaspipe_core::network::{Node, Pipeline};
    use gaspipe_core::sim::{LoadProfile, NoiseConfig};
    use std::collections::BTreeMap;

    fn two_node_manifest(dir: &Path) -> (RunManifest, GasNetwork) {
        let net = GasNetwork::new(
            vec![Node::source(1, 27.8), Node::sink(2)],
            vec![Pipeline::new(1, 2, 10.0, 0.4)],
            340.0,
            0.015,
        )
        .unwrap();
        let net_path = dir.join("toy.net");
        fs::write(&net_path, formats::serialize_network(&net)).unwrap();

        let mut loads = BTreeMap::new();
        loads.insert(2u32, LoadProfile::constant(5.0).unwrap());
        let sc = Scenario {
            dt_s: 900.0,
            horizon_s: 36_000.0,
            seed: 11,
            loads,
            noise: NoiseConfig::default(),
            bad_data: vec![],
            bias: vec![],
        };
        let sc_path = dir.join("toy.scn");
        fs::write(&sc_path, formats::serialize_scenario(&sc)).unwrap();

        (
            RunManifest {
                network: Some(net_path),
                scenario: Some(sc_path),
                out_dir: dir.join("out"),
                variant: VariantSel::Both,
                seed: None,
                m_w: None,
                mu_floor: None,
            },
            net,
        )
    }

    #[test]
    fn simulate_then_estimate_then_evaluate_leaves_a_complete_directory() {
        let dir = tempfile::tempdir().unwrap();
        let (man, _) = two_node_manifest(dir.path());

        cmd_simulate(&man).unwrap();
        cmd_estimate(&man).unwrap();
        cmd_evaluate(&man).unwrap();

        for file in [
            TRUTH_FILE,
            MEASUREMENTS_FILE,
            SCENARIO_ECHO_FILE,
            ESTIMATE_KF_FILE,
            ESTIMATE_RKF_FILE,
            MU_TRACE_FILE,
            REPORT_FILE,
            SUMMARY_FILE,
        ] {
            assert!(man.out_dir.join(file).is_file(), "missing {file}");
        }

        let summary = fs::read_to_string(man.out_dir.join(SUMMARY_FILE)).unwrap();
        assert!(summary.contains("rkf no worse than kf"), "{summary}");
    }

    #[test]
    fn estimate_alone_produces_the_simulation_files_it_needs() {
        let dir = tempfile::tempdir().unwrap();
        let (man, _) = two_node_manifest(dir.path());
        cmd_estimate(&man).unwrap();
        assert!(man.out_dir.join(TRUTH_FILE).is_file());
        assert!(man.out_dir.join(ESTIMATE_RKF_FILE).is_file());
    }

    #[test]
    fn evaluate_without_inputs_names_the_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let (man, _) = two_node_manifest(dir.path());
        let err = cmd_evaluate(&man).unwrap_err();
        assert!(format!("{err:#}").contains(TRUTH_FILE), "{err:#}");

        cmd_simulate(&man).unwrap();
        let err = cmd_evaluate(&man).unwrap_err();
        assert!(format!("{err:#}").contains(ESTIMATE_KF_FILE), "{err:#}");
    }

    #[test]
    fn reruns_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (man, _) = two_node_manifest(dir.path());
        cmd_simulate(&man).unwrap();
        cmd_estimate(&man).unwrap();
        cmd_evaluate(&man).unwrap();
        let before: Vec<(String, Vec<u8>)> = list_files(&man.out_dir);

        cmd_simulate(&man).unwrap();
        cmd_estimate(&man).unwrap();
        cmd_evaluate(&man).unwrap();
        assert_eq!(before, list_files(&man.out_dir));
    }

    #[test]
    fn kf_only_run_skips_robust_artifacts_and_report_cells() {
        let dir = tempfile::tempdir().unwrap();
        let (mut man, _) = two_node_manifest(dir.path());
        man.variant = VariantSel::Kf;
        cmd_simulate(&man).unwrap();
        cmd_estimate(&man).unwrap();
        cmd_evaluate(&man).unwrap();
        assert!(!man.out_dir.join(ESTIMATE_RKF_FILE).exists());
        assert!(!man.out_dir.join(MU_TRACE_FILE).exists());
        let report = fs::read_to_string(man.out_dir.join(REPORT_FILE)).unwrap();
        let sink_row = report.lines().nth(2).unwrap();
        let cells: Vec<&str> = sink_row.split(',').collect();
        assert!(!cells[1].is_empty() && cells[2].is_empty(), "{report}");
    }

    #[test]
    fn seed_override_changes_measurements_but_not_truth() {
        let dir = tempfile::tempdir().unwrap();
        let (mut man, _) = two_node_manifest(dir.path());
        cmd_simulate(&man).unwrap();
        let truth_a = fs::read(man.out_dir.join(TRUTH_FILE)).unwrap();
        let meas_a = fs::read(man.out_dir.join(MEASUREMENTS_FILE)).unwrap();

        man.seed = Some(99);
        man.out_dir = dir.path().join("out_b");
        cmd_simulate(&man).unwrap();
        assert_eq!(truth_a, fs::read(man.out_dir.join(TRUTH_FILE)).unwrap());
        assert_ne!(meas_a, fs::read(man.out_dir.join(MEASUREMENTS_FILE)).unwrap());

        let echo = fs::read_to_string(man.out_dir.join(SCENARIO_ECHO_FILE)).unwrap();
        let sc = formats::parse_scenario(&echo).unwrap();
        assert_eq!(sc.seed, 99);
    }

    fn list_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
        let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
            })
            .collect();
        files.sort();
        files
    }
}
