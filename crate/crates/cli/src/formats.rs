//! Line-oriented text formats for networks and scenarios.
//!
//! Both formats share the same skeleton: `[section]` headers, whitespace-
//! separated fields, `#` comments (full-line or trailing), blank lines
//! ignored. Parse errors carry 1-based line numbers; callers add the file
//! name.
//!
//! Network file:
//! ```text
//! [params]       # optional; defaults c_m_per_s 340, friction_factor 0.015
//! c_m_per_s 340
//! friction_factor 0.015
//! [nodes]        # id kind pressure_bar?   (kind: source | sink)
//! 1 source 27.8
//! 3 sink
//! [pipelines]    # from to length_km diameter_m
//! 1 3 5 0.6
//! ```
//!
//! Scenario file:
//! ```text
//! [time]         # dt_s horizon_s seed
//! 900 86400 3
//! [loads]        # node t0 v0 t1 v1 ...   (seconds, kg/s; piecewise linear)
//! 9 0 1.4 3600 1.52
//! [noise]        # pressure_sigma_bar flow_sigma_rel virtual_sigma
//! 0.01 0.02 0.001
//! [bad_data]     # kind node t_hours value   (kind: pressure | flow)
//! pressure 30 5 12
//! [bias]         # kind node_set t_start_hours t_end_hours offset
//! pressure all 10 19.75 0.2
//! flow 9,10,11 5 12.5 0.1
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;

use anyhow::{anyhow, bail, Context, Result};
use gaspipe_core::network::{GasNetwork, Node, NodeKind, Pipeline};
use gaspipe_core::sim::{
    BadDataEvent, BiasEvent, ChannelKind, LoadProfile, NodeSet, NoiseConfig, Scenario,
};

const DEFAULT_SOUND_SPEED: f64 = 340.0;
const DEFAULT_FRICTION: f64 = 0.015;

/// Strip comments/whitespace and yield `(line_number, fields)` for every
/// non-empty line.
fn rows(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            None
        } else {
            Some((i + 1, line.split_whitespace().collect()))
        }
    })
}

fn num<T: std::str::FromStr>(ln: usize, field: &str, what: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| anyhow!("line {ln}: cannot read {what} from `{field}`"))
}

pub fn parse_network(text: &str) -> Result<GasNetwork> {
    #[derive(PartialEq)]
    enum Section {
        None,
        Params,
        Nodes,
        Pipelines,
    }
    let mut section = Section::None;
    let mut c = None;
    let mut friction = None;
    let mut nodes = Vec::new();
    let mut pipelines = Vec::new();

    for (ln, fields) in rows(text) {
        match fields[0] {
            "[params]" => section = Section::Params,
            "[nodes]" => section = Section::Nodes,
            "[pipelines]" => section = Section::Pipelines,
            name if name.starts_with('[') => bail!("line {ln}: unknown section {name}"),
            _ => match section {
                Section::None => bail!("line {ln}: data before the first section header"),
                Section::Params => {
                    if fields.len() != 2 {
                        bail!("line {ln}: expected `key value`");
                    }
                    let slot = match fields[0] {
                        "c_m_per_s" => &mut c,
                        "friction_factor" => &mut friction,
                        other => bail!("line {ln}: unknown parameter `{other}`"),
                    };
                    if slot.is_some() {
                        bail!("line {ln}: duplicate parameter `{}`", fields[0]);
                    }
                    *slot = Some(num::<f64>(ln, fields[1], fields[0])?);
                }
                Section::Nodes => {
                    let id = num(ln, fields[0], "node id")?;
                    match (fields.get(1).copied(), fields.len()) {
                        (Some("source"), 3) => {
                            nodes.push(Node::source(id, num(ln, fields[2], "source pressure")?));
                        }
                        (Some("source"), _) => {
                            bail!("line {ln}: a source row is `id source pressure_bar`")
                        }
                        (Some("sink"), 2) => nodes.push(Node::sink(id)),
                        (Some("sink"), _) => bail!("line {ln}: a sink row is `id sink`"),
                        (Some(other), _) => {
                            bail!("line {ln}: node kind must be source or sink, got `{other}`")
                        }
                        (None, _) => bail!("line {ln}: node row needs a kind"),
                    }
                }
                Section::Pipelines => {
                    if fields.len() != 4 {
                        bail!("line {ln}: expected `from to length_km diameter_m`");
                    }
                    pipelines.push(Pipeline::new(
                        num(ln, fields[0], "from node")?,
                        num(ln, fields[1], "to node")?,
                        num(ln, fields[2], "length")?,
                        num(ln, fields[3], "diameter")?,
                    ));
                }
            },
        }
    }

    GasNetwork::new(
        nodes,
        pipelines,
        c.unwrap_or(DEFAULT_SOUND_SPEED),
        friction.unwrap_or(DEFAULT_FRICTION),
    )
    .map_err(Into::into)
}

pub fn serialize_network(net: &GasNetwork) -> String {
    let mut s = String::new();
    s.push_str("# Pipeline network.\n");
    s.push_str("#   [params]     c_m_per_s, friction_factor\n");
    s.push_str("#   [nodes]      id kind pressure_bar?   (kind: source | sink)\n");
    s.push_str("#   [pipelines]  from to length_km diameter_m\n\n");
    let _ = writeln!(s, "[params]\nc_m_per_s {}", net.sound_speed());
    let _ = writeln!(s, "friction_factor {}\n", net.friction_factor());
    s.push_str("[nodes]\n");
    for node in net.nodes() {
        match node.kind {
            NodeKind::Source { pressure_bar } => {
                let _ = writeln!(s, "{} source {pressure_bar}", node.id);
            }
            NodeKind::Sink => {
                let _ = writeln!(s, "{} sink", node.id);
            }
        }
    }
    s.push_str("\n[pipelines]\n");
    for p in net.pipelines() {
        let _ = writeln!(s, "{} {} {} {}", p.from, p.to, p.length_km, p.diameter_m);
    }
    s
}

fn parse_kind(ln: usize, field: &str) -> Result<ChannelKind> {
    match field {
        "pressure" => Ok(ChannelKind::Pressure),
        "flow" => Ok(ChannelKind::Flow),
        other => bail!("line {ln}: channel kind must be pressure or flow, got `{other}`"),
    }
}

fn kind_token(kind: ChannelKind) -> &'static str {
    match kind {
        ChannelKind::Pressure => "pressure",
        ChannelKind::Flow => "flow",
    }
}

pub fn parse_scenario(text: &str) -> Result<Scenario> {
    #[derive(PartialEq)]
    enum Section {
        None,
        Time,
        Loads,
        Noise,
        BadData,
        Bias,
    }
    let mut section = Section::None;
    let mut time = None;
    let mut noise = None;
    let mut loads: BTreeMap<u32, LoadProfile> = BTreeMap::new();
    let mut bad_data = Vec::new();
    let mut bias = Vec::new();

    for (ln, fields) in rows(text) {
        match fields[0] {
            "[time]" => section = Section::Time,
            "[loads]" => section = Section::Loads,
            "[noise]" => section = Section::Noise,
            "[bad_data]" => section = Section::BadData,
            "[bias]" => section = Section::Bias,
            name if name.starts_with('[') => bail!("line {ln}: unknown section {name}"),
            _ => match section {
                Section::None => bail!("line {ln}: data before the first section header"),
                Section::Time => {
                    if time.is_some() {
                        bail!("line {ln}: [time] takes a single row");
                    }
                    if fields.len() != 3 {
                        bail!("line {ln}: expected `dt_s horizon_s seed`");
                    }
                    time = Some((
                        num::<f64>(ln, fields[0], "dt")?,
                        num::<f64>(ln, fields[1], "horizon")?,
                        num::<u64>(ln, fields[2], "seed")?,
                    ));
                }
                Section::Loads => {
                    if fields.len() < 3 || fields.len() % 2 == 0 {
                        bail!("line {ln}: expected `node t0 v0 t1 v1 ...`");
                    }
                    let node: u32 = num(ln, fields[0], "node id")?;
                    let mut points = Vec::with_capacity(fields.len() / 2);
                    for pair in fields[1..].chunks(2) {
                        points.push((
                            num(ln, pair[0], "breakpoint time")?,
                            num(ln, pair[1], "load value")?,
                        ));
                    }
                    let profile = LoadProfile::new(points)
                        .map_err(|e| anyhow!("line {ln}: {e}"))?;
                    if loads.insert(node, profile).is_some() {
                        bail!("line {ln}: node {node} already has a load profile");
                    }
                }
                Section::Noise => {
                    if noise.is_some() {
                        bail!("line {ln}: [noise] takes a single row");
                    }
                    if fields.len() != 3 {
                        bail!("line {ln}: expected `pressure_sigma_bar flow_sigma_rel virtual_sigma`");
                    }
                    noise = Some(NoiseConfig {
                        pressure_sigma_bar: num(ln, fields[0], "pressure sigma")?,
                        flow_sigma_rel: num(ln, fields[1], "flow sigma")?,
                        virtual_sigma: num(ln, fields[2], "virtual sigma")?,
                    });
                }
                Section::BadData => {
                    if fields.len() != 4 {
                        bail!("line {ln}: expected `kind node t_hours value`");
                    }
                    bad_data.push(BadDataEvent {
                        kind: parse_kind(ln, fields[0])?,
                        node: num(ln, fields[1], "node id")?,
                        t_hours: num(ln, fields[2], "event time")?,
                        value: num(ln, fields[3], "event value")?,
                    });
                }
                Section::Bias => {
                    if fields.len() != 5 {
                        bail!("line {ln}: expected `kind node_set t_start t_end offset`");
                    }
                    let nodes = if fields[1] == "all" {
                        NodeSet::All
                    } else {
                        let ids = fields[1]
                            .split(',')
                            .map(|f| num(ln, f, "node id"))
                            .collect::<Result<Vec<u32>>>()?;
                        NodeSet::Nodes(ids)
                    };
                    bias.push(BiasEvent {
                        kind: parse_kind(ln, fields[0])?,
                        nodes,
                        t_start_hours: num(ln, fields[2], "window start")?,
                        t_end_hours: num(ln, fields[3], "window end")?,
                        offset: num(ln, fields[4], "offset")?,
                    });
                }
            },
        }
    }

    let (dt_s, horizon_s, seed) = time.context("scenario has no [time] section")?;
    let noise = noise.context("scenario has no [noise] section")?;
    Ok(Scenario { dt_s, horizon_s, seed, loads, noise, bad_data, bias })
}

pub fn serialize_scenario(sc: &Scenario) -> String {
    let mut s = String::new();
    s.push_str("# Simulation scenario.\n");
    s.push_str("#   [time]      dt_s horizon_s seed\n");
    s.push_str("#   [loads]     node t0 v0 t1 v1 ...   (seconds, kg/s)\n");
    s.push_str("#   [noise]     pressure_sigma_bar flow_sigma_rel virtual_sigma\n");
    s.push_str("#   [bad_data]  kind node t_hours value\n");
    s.push_str("#   [bias]      kind node_set t_start_hours t_end_hours offset\n\n");
    let _ = writeln!(s, "[time]\n{} {} {}\n", sc.dt_s, sc.horizon_s, sc.seed);
    s.push_str("[loads]\n");
    for (node, profile) in &sc.loads {
        let _ = write!(s, "{node}");
        for (t, v) in profile.points() {
            let _ = write!(s, " {t} {v}");
        }
        s.push('\n');
    }
    let _ = writeln!(
        s,
        "\n[noise]\n{} {} {}",
        sc.noise.pressure_sigma_bar, sc.noise.flow_sigma_rel, sc.noise.virtual_sigma
    );
    if !sc.bad_data.is_empty() {
        s.push_str("\n[bad_data]\n");
        for ev in &sc.bad_data {
            let _ = writeln!(
                s,
                "{} {} {} {}",
                kind_token(ev.kind),
                ev.node,
                ev.t_hours,
                ev.value
            );
        }
    }
    if !sc.bias.is_empty() {
        s.push_str("\n[bias]\n");
        for ev in &sc.bias {
            let nodes = match &ev.nodes {
                NodeSet::All => "all".to_string(),
                NodeSet::Nodes(ids) => ids
                    .iter()
                    .map(|id| id.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            };
            let _ = writeln!(
                s,
                "{} {} {} {} {}",
                kind_token(ev.kind),
                nodes,
                ev.t_start_hours,
                ev.t_end_hours,
                ev.offset
            );
        }
    }
    s
}
