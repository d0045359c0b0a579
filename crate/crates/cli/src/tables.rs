//! CSV artifacts. One row per grid step, `t_s` first, then one column per
//! measurement channel named `p_node<N>` (pressure, bar) or `m_node<N>`
//! (nodal flow, kg/s) with a `_true`/`_meas`/`_kf`/`_rkf` suffix naming the
//! series. All files produced for one run share the same `t_s` grid.
//!
//! Values cross this boundary in file units (bar, kg/s) and are printed with
//! the shortest round-trip float formatting, so rewriting the same in-memory
//! run always produces byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use gaspipe_core::metrics::ChannelReport;
use gaspipe_core::network::GasNetwork;
use nalgebra::DVector;

/// Column base names in channel order (pressure block, then flow block).
pub fn channel_names(net: &GasNetwork) -> Vec<String> {
    let mut names: Vec<String> =
        net.nodes().iter().map(|n| format!("p_node{}", n.id)).collect();
    names.extend(net.nodes().iter().map(|n| format!("m_node{}", n.id)));
    names
}

fn grid_tol(dt_s: f64) -> f64 {
    dt_s * 1e-9
}

/// Write one channel-vector series. `rows[t-1]` holds grid step `t` in
/// internal units; pressure channels are converted to bar on the way out.
pub fn write_series(
    path: &Path,
    net: &GasNetwork,
    dt_s: f64,
    rows: &[DVector<f64>],
    suffix: &str,
) -> Result<()> {
    let n = net.n_nodes();
    let mut out = String::from("t_s");
    for name in channel_names(net) {
        let _ = write!(out, ",{name}_{suffix}");
    }
    out.push('\n');
    for (i, row) in rows.iter().enumerate() {
        if row.len() != 2 * n {
            bail!(
                "series row {} carries {} channels, expected {}",
                i + 1,
                row.len(),
                2 * n
            );
        }
        let _ = write!(out, "{}", dt_s * (i + 1) as f64);
        for c in 0..2 * n {
            let v = if c < n { net.density_to_pressure_bar(row[c]) } else { row[c] };
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Read a series written by [`write_series`] back into internal units.
/// Returns the grid step and the per-step vectors; the header must carry
/// exactly this network's channels with the expected suffix.
pub fn read_series(
    path: &Path,
    net: &GasNetwork,
    suffix: &str,
) -> Result<(f64, Vec<DVector<f64>>)> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines().enumerate();

    let (_, header) = lines.next().with_context(|| format!("{}: empty file", path.display()))?;
    let expected: Vec<String> = std::iter::once("t_s".to_string())
        .chain(channel_names(net).into_iter().map(|n| format!("{n}_{suffix}")))
        .collect();
    let got: Vec<&str> = header.split(',').collect();
    if got != expected.iter().map(String::as_str).collect::<Vec<_>>() {
        bail!(
            "{}: header does not match this network's {} channels with suffix `_{suffix}` \
             (found {} columns)",
            path.display(),
            2 * net.n_nodes(),
            got.len()
        );
    }

    let n = net.n_nodes();
    let mut dt_s = None;
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let ln = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 * n + 1 {
            bail!(
                "{}:{ln}: row has {} fields, expected {}",
                path.display(),
                fields.len(),
                2 * n + 1
            );
        }
        let mut values = Vec::with_capacity(2 * n + 1);
        for f in &fields {
            let v: f64 = f
                .parse()
                .map_err(|_| anyhow::anyhow!("{}:{ln}: cannot read `{f}`", path.display()))?;
            values.push(v);
        }
        let dt = match dt_s {
            Some(dt) => dt,
            None => {
                if !(values[0] > 0.0) || !values[0].is_finite() {
                    bail!(
                        "{}:{ln}: first t_s must be one positive step, got {}",
                        path.display(),
                        values[0]
                    );
                }
                dt_s = Some(values[0]);
                values[0]
            }
        };
        let t_expect = dt * (rows.len() + 1) as f64;
        if (values[0] - t_expect).abs() > grid_tol(dt) {
            bail!(
                "{}:{ln}: t_s {} breaks the {} s grid (expected {})",
                path.display(),
                values[0],
                dt,
                t_expect
            );
        }
        let mut row = DVector::zeros(2 * n);
        for c in 0..2 * n {
            let v = values[c + 1];
            row[c] = if c < n { net.pressure_bar_to_density(v) } else { v };
        }
        rows.push(row);
    }
    let dt_s = dt_s.with_context(|| format!("{}: no data rows", path.display()))?;
    Ok((dt_s, rows))
}

/// Write the robust variant's per-step noise-scale diagonal; columns are
/// `mu_p_node<N>` / `mu_m_node<N>` on the same grid as the series files.
pub fn write_mu(path: &Path, net: &GasNetwork, dt_s: f64, mu: &[DVector<f64>]) -> Result<()> {
    let mut out = String::from("t_s");
    for name in channel_names(net) {
        let _ = write!(out, ",mu_{name}");
    }
    out.push('\n');
    for (i, row) in mu.iter().enumerate() {
        let _ = write!(out, "{}", dt_s * (i + 1) as f64);
        for v in row.iter() {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn eps_cell(report: Option<&[ChannelReport]>, channel: usize) -> String {
    match report.and_then(|r| r[channel].epsilon) {
        Some(e) => format!("{e}"),
        None => String::new(),
    }
}

/// Per-node filter-coefficient table: one row per node, pressure and flow
/// coefficients for each variant. Cells are empty where a coefficient is not
/// computed (source pressure channels, noiseless-truth degeneracies, or a
/// variant that was not run).
pub fn write_report(
    path: &Path,
    net: &GasNetwork,
    kf: Option<&[ChannelReport]>,
    rkf: Option<&[ChannelReport]>,
) -> Result<()> {
    let n = net.n_nodes();
    for r in [kf, rkf].into_iter().flatten() {
        if r.len() != 2 * n {
            bail!("report carries {} channels, expected {}", r.len(), 2 * n);
        }
    }
    let mut out = String::from("node,eps_p_kf,eps_p_rkf,eps_m_kf,eps_m_rkf\n");
    for (i, node) in net.nodes().iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            node.id,
            eps_cell(kf, i),
            eps_cell(rkf, i),
            eps_cell(kf, n + i),
            eps_cell(rkf, n + i),
        );
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

#[cfg(test)]
fn channel_kind_of(net: &GasNetwork, channel: usize) -> gaspipe_core::sim::ChannelKind {
    use gaspipe_core::sim::ChannelKind;
    if channel < net.n_nodes() {
        ChannelKind::Pressure
    } else {
        ChannelKind::Flow
    }
}
