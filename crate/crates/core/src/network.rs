//! Radial feeder model: buses, lines, depth relabeling and subtree-edge indexing.
//!
//! The network is a rooted tree with edges directed towards the slack bus.
//! All electrical quantities are stored per-unit on the declared
//! `(s_base_mva, v_base_kv)` base. Squared-current bounds may be given in A²
//! in the input file and are converted at load time.

use std::collections::HashMap;
use std::io::{Read, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Storage parameters of a bus. A bus without a storage record gets the
/// zero-capacity default, which makes the state-of-charge constraints vacuous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Storage {
    pub cap_max: f64,
    pub cap_min: f64,
    pub x_init: f64,
    pub p_inj_max: f64,
    pub p_abs_max: f64,
    pub eff_abs: f64,
    pub eff_inj: f64,
}

impl Default for Storage {
    fn default() -> Self {
        Storage {
            cap_max: 0.0,
            cap_min: 0.0,
            x_init: 0.0,
            p_inj_max: 0.0,
            p_abs_max: 0.0,
            eff_abs: 1.0,
            eff_inj: 1.0,
        }
    }
}

/// Flexible reactive power bounds at a bus.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ReactiveBounds {
    pub q_min: f64,
    pub q_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    /// Label of the bus; equals its position in the bus sequence.
    pub id: usize,
    /// Parent label; `None` only for the slack bus.
    pub parent: Option<usize>,
    /// Squared voltage bounds, p.u.². Ignored for the slack bus (v = 1).
    pub v_min: f64,
    pub v_max: f64,
    /// Fixed transformer tap ratio, 1 when no transformer is present.
    pub tap: f64,
    /// Size parameter (peak load), MVA.
    pub peak: f64,
    pub storage: Storage,
    pub reactive: ReactiveBounds,
    /// Installed solar capacity, MW.
    pub solar_cap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    /// Child bus label (sending end).
    pub from: usize,
    /// Parent bus label; edges are directed towards the root.
    pub to: usize,
    pub r: f64,
    pub x: f64,
    /// Squared-current bound, p.u.².
    pub i_max: Option<f64>,
    /// Apparent-power bound, MVA.
    pub s_max: Option<f64>,
}

impl Line {
    pub fn z(&self) -> Complex64 {
        Complex64::new(self.r, self.x)
    }
}

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("structure error: {0}")]
    Structure(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unknown bus {0}")]
    UnknownBus(usize),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ViolationKind {
    NonRadial,
    Disconnected,
    Passivity,
    VoltageBounds,
    Tap,
    Storage,
    DuplicateId,
    SlackEquipment,
}

#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// File id of the offending bus (the child bus for line violations).
    pub element: i64,
    pub detail: String,
}

/// Structural-assumption report. Empty report means every hypothesis of the
/// zero-gap theory (radial, connected, passive, positive taps) holds.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Unit of the `i_max` column in input files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SquaredCurrentUnit {
    /// Per-unit squared (no conversion).
    #[default]
    Pu2,
    /// Ampere squared; converted on the declared base at load time.
    A2,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StorageRecord {
    cap_max: f64,
    cap_min: f64,
    x_init: f64,
    p_inj_max: f64,
    p_abs_max: f64,
    eff_abs: f64,
    eff_inj: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BusRecord {
    id: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parent: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    i_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    s_max: Option<f64>,
    v_min: f64,
    v_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tap: Option<f64>,
    peak: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    storage: Option<StorageRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reactive: Option<ReactiveBounds>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    solar_cap: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetworkFile {
    s_base_mva: f64,
    v_base_kv: f64,
    #[serde(default)]
    i_max_unit: SquaredCurrentUnit,
    buses: Vec<BusRecord>,
}

/// Input format of [`load_network`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetworkFormat {
    Json,
    Csv,
}

/// Immutable rooted tree of buses and lines.
///
/// Bus labels coincide with positions in the bus sequence. After
/// [`RadialNetwork::relabel_by_depth`] the labels are non-decreasing in depth
/// (H.Lab), which the sweep and the subtree constraints rely on.
#[derive(Debug, Clone)]
pub struct RadialNetwork {
    pub s_base_mva: f64,
    pub v_base_kv: f64,
    buses: Vec<Bus>,
    /// Lines sorted by child label; each non-slack bus has exactly one.
    lines: Vec<Line>,
    /// Label -> original file id, for reporting.
    original_ids: Vec<i64>,
    depth: Vec<usize>,
    children: Vec<Vec<usize>>,
    line_of: Vec<Option<usize>>,
    depth_labeled: bool,
}

impl RadialNetwork {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn bus(&self, label: usize) -> &Bus {
        &self.buses[label]
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn line(&self, idx: usize) -> &Line {
        &self.lines[idx]
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn depth(&self, label: usize) -> usize {
        self.depth[label]
    }

    pub fn children(&self, label: usize) -> &[usize] {
        &self.children[label]
    }

    /// Index of the line going from `label` towards its parent.
    pub fn line_of(&self, label: usize) -> Option<usize> {
        self.line_of[label]
    }

    pub fn original_id(&self, label: usize) -> i64 {
        self.original_ids[label]
    }

    pub fn is_depth_labeled(&self) -> bool {
        self.depth_labeled
    }

    /// Total peak load Σ Sᵢ, MVA.
    pub fn total_peak(&self) -> f64 {
        self.buses.iter().map(|b| b.peak).sum()
    }

    /// Squared tap ratio |tᵢ|² of a bus.
    pub fn tap_sq(&self, label: usize) -> f64 {
        let t = self.buses[label].tap;
        t * t
    }

    /// Buses of the subtree rooted at `bus` (including `bus`).
    pub fn subtree_buses(&self, bus: usize) -> Result<Vec<usize>, NetworkError> {
        if bus >= self.buses.len() {
            return Err(NetworkError::UnknownBus(bus));
        }
        let mut out = Vec::new();
        let mut stack = vec![bus];
        while let Some(b) = stack.pop() {
            out.push(b);
            stack.extend_from_slice(&self.children[b]);
        }
        out.sort_unstable();
        Ok(out)
    }

    /// Line set Eᵢ of the subtree rooted at `bus`: the lines with both
    /// endpoints inside the subtree, so leaves have an empty set. With
    /// `include_outgoing` the line from `bus` to its parent is added as well.
    pub fn subtree_edges(
        &self,
        bus: usize,
        include_outgoing: bool,
    ) -> Result<Vec<usize>, NetworkError> {
        let members = self.subtree_buses(bus)?;
        let inside = |b: usize| members.binary_search(&b).is_ok();
        let mut out: Vec<usize> = (0..self.lines.len())
            .filter(|&l| inside(self.lines[l].from) && inside(self.lines[l].to))
            .collect();
        if include_outgoing {
            if let Some(l) = self.line_of[bus] {
                out.push(l);
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    /// Re-checks the structural hypotheses on an already-built network.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        for l in &self.lines {
            if l.r < 0.0 || l.x < 0.0 {
                report.violations.push(Violation {
                    kind: ViolationKind::Passivity,
                    element: self.original_ids[l.from],
                    detail: format!("line ({},{}) has r={} x={}", l.from, l.to, l.r, l.x),
                });
            }
        }
        for b in &self.buses {
            if b.parent.is_some() && b.v_min > b.v_max {
                report.violations.push(Violation {
                    kind: ViolationKind::VoltageBounds,
                    element: self.original_ids[b.id],
                    detail: format!("v_min={} > v_max={}", b.v_min, b.v_max),
                });
            }
            if b.tap <= 0.0 {
                report.violations.push(Violation {
                    kind: ViolationKind::Tap,
                    element: self.original_ids[b.id],
                    detail: format!("tap={}", b.tap),
                });
            }
        }
        report
    }

    /// Returns an equivalent network whose labels are non-decreasing in depth
    /// (H.Lab). Ties are broken by the previous label order, so the result is
    /// deterministic. The `original_id` mapping is composed accordingly.
    pub fn relabel_by_depth(&self) -> RadialNetwork {
        let n = self.buses.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&b| (self.depth[b], b));
        // order[new] = old
        let mut new_label = vec![0usize; n];
        for (new, &old) in order.iter().enumerate() {
            new_label[old] = new;
        }
        let buses: Vec<Bus> = order
            .iter()
            .enumerate()
            .map(|(new, &old)| {
                let b = &self.buses[old];
                Bus {
                    id: new,
                    parent: b.parent.map(|p| new_label[p]),
                    ..b.clone()
                }
            })
            .collect();
        let mut lines: Vec<Line> = self
            .lines
            .iter()
            .map(|l| Line {
                from: new_label[l.from],
                to: new_label[l.to],
                ..l.clone()
            })
            .collect();
        lines.sort_by_key(|l| l.from);
        let original_ids = order.iter().map(|&old| self.original_ids[old]).collect();
        let mut net = RadialNetwork {
            s_base_mva: self.s_base_mva,
            v_base_kv: self.v_base_kv,
            buses,
            lines,
            original_ids,
            depth: Vec::new(),
            children: Vec::new(),
            line_of: Vec::new(),
            depth_labeled: true,
        };
        net.rebuild_topology();
        net
    }

    fn rebuild_topology(&mut self) {
        let n = self.buses.len();
        let mut children = vec![Vec::new(); n];
        for b in &self.buses {
            if let Some(p) = b.parent {
                children[p].push(b.id);
            }
        }
        for c in &mut children {
            c.sort_unstable();
        }
        let mut depth = vec![0usize; n];
        let root = self.buses.iter().find(|b| b.parent.is_none()).unwrap().id;
        let mut stack = vec![root];
        while let Some(b) = stack.pop() {
            for &c in &children[b] {
                depth[c] = depth[b] + 1;
                stack.push(c);
            }
        }
        let mut line_of = vec![None; n];
        for (idx, l) in self.lines.iter().enumerate() {
            line_of[l.from] = Some(idx);
        }
        // H.Lab: labels non-decreasing in depth, every line points to a
        // smaller label, slack labeled 0.
        self.depth_labeled = root == 0
            && (1..n).all(|b| depth[b - 1] <= depth[b])
            && self.lines.iter().all(|l| l.from > l.to);
        self.children = children;
        self.depth = depth;
        self.line_of = line_of;
    }

    fn to_file(&self) -> NetworkFile {
        let buses = self
            .buses
            .iter()
            .map(|b| {
                let line = b.parent.map(|_| &self.lines[self.line_of[b.id].unwrap()]);
                BusRecord {
                    id: self.original_ids[b.id],
                    parent: b.parent.map(|p| self.original_ids[p]),
                    r: line.map(|l| l.r),
                    x: line.map(|l| l.x),
                    i_max: line.and_then(|l| l.i_max),
                    s_max: line.and_then(|l| l.s_max),
                    v_min: b.v_min,
                    v_max: b.v_max,
                    tap: Some(b.tap),
                    peak: b.peak,
                    // the slack bus must not carry equipment fields
                    storage: b.parent.map(|_| StorageRecord {
                        cap_max: b.storage.cap_max,
                        cap_min: b.storage.cap_min,
                        x_init: b.storage.x_init,
                        p_inj_max: b.storage.p_inj_max,
                        p_abs_max: b.storage.p_abs_max,
                        eff_abs: b.storage.eff_abs,
                        eff_inj: b.storage.eff_inj,
                    }),
                    reactive: b.parent.map(|_| b.reactive),
                    solar_cap: b.parent.map(|_| b.solar_cap),
                }
            })
            .collect();
        NetworkFile {
            s_base_mva: self.s_base_mva,
            v_base_kv: self.v_base_kv,
            i_max_unit: SquaredCurrentUnit::Pu2,
            buses,
        }
    }

    pub fn to_json<W: Write>(&self, w: W) -> Result<(), NetworkError> {
        serde_json::to_writer_pretty(w, &self.to_file())
            .map_err(|e| NetworkError::Parse(e.to_string()))
    }

    pub fn to_csv<W: Write>(&self, w: W) -> Result<(), NetworkError> {
        let file = self.to_file();
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(CSV_COLUMNS)?;
        let mut first = true;
        for b in &file.buses {
            let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
            let s = |f: fn(&StorageRecord) -> f64| opt(b.storage.as_ref().map(f));
            wtr.write_record(&[
                b.id.to_string(),
                b.parent.map(|p| p.to_string()).unwrap_or_default(),
                opt(b.r),
                opt(b.x),
                opt(b.i_max),
                opt(b.s_max),
                fmt_f64(b.v_min),
                fmt_f64(b.v_max),
                fmt_f64(b.tap.unwrap()),
                fmt_f64(b.peak),
                s(|s| s.cap_max),
                s(|s| s.cap_min),
                s(|s| s.x_init),
                s(|s| s.p_inj_max),
                s(|s| s.p_abs_max),
                s(|s| s.eff_abs),
                s(|s| s.eff_inj),
                opt(b.reactive.map(|q| q.q_min)),
                opt(b.reactive.map(|q| q.q_max)),
                opt(b.solar_cap),
                if first { fmt_f64(file.s_base_mva) } else { String::new() },
                if first { fmt_f64(file.v_base_kv) } else { String::new() },
                if first { "pu2".to_string() } else { String::new() },
            ])?;
            first = false;
        }
        wtr.flush()?;
        Ok(())
    }
}

const CSV_COLUMNS: &[&str] = &[
    "id", "parent", "r", "x", "i_max", "s_max", "v_min", "v_max", "tap", "peak", "cap_max",
    "cap_min", "x_init", "p_inj_max", "p_abs_max", "eff_abs", "eff_inj", "q_min", "q_max",
    "solar_cap", "s_base_mva", "v_base_kv", "i_max_unit",
];

/// Round-trip safe decimal formatting (shortest representation that parses
/// back to the same f64, always at least 17 significant digits when needed).
fn fmt_f64(v: f64) -> String {
    let mut s = format!("{}", v);
    if s.parse::<f64>() != Ok(v) {
        s = format!("{:.17e}", v);
    }
    s
}

impl From<csv::Error> for NetworkError {
    fn from(e: csv::Error) -> Self {
        NetworkError::Parse(e.to_string())
    }
}

/// Validates the raw records and reports every violated structural
/// assumption. An empty report means [`load_network`] will succeed.
fn validate_file(file: &NetworkFile) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut seen = HashMap::new();
    for (pos, b) in file.buses.iter().enumerate() {
        if let Some(prev) = seen.insert(b.id, pos) {
            report.violations.push(Violation {
                kind: ViolationKind::DuplicateId,
                element: b.id,
                detail: format!("bus id {} appears at records {} and {}", b.id, prev, pos),
            });
        }
    }
    let roots: Vec<i64> = file
        .buses
        .iter()
        .filter(|b| b.parent.is_none())
        .map(|b| b.id)
        .collect();
    if roots.len() != 1 {
        report.violations.push(Violation {
            kind: ViolationKind::Disconnected,
            element: *roots.first().unwrap_or(&-1),
            detail: format!("expected exactly one slack bus, found {}", roots.len()),
        });
    }
    // Cycle / dangling-parent detection by walking parent chains.
    let index: HashMap<i64, usize> = file.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
    for b in &file.buses {
        let mut cur = b.id;
        let mut steps = 0;
        loop {
            let Some(&i) = index.get(&cur) else {
                report.violations.push(Violation {
                    kind: ViolationKind::Disconnected,
                    element: b.id,
                    detail: format!("parent {} of bus chain from {} does not exist", cur, b.id),
                });
                break;
            };
            match file.buses[i].parent {
                None => break,
                Some(p) => {
                    cur = p;
                    steps += 1;
                    if steps > file.buses.len() {
                        report.violations.push(Violation {
                            kind: ViolationKind::NonRadial,
                            element: b.id,
                            detail: format!("cycle on the parent chain starting at bus {}", b.id),
                        });
                        break;
                    }
                }
            }
        }
    }
    for b in &file.buses {
        if b.parent.is_some() {
            if b.r.unwrap_or(0.0) < 0.0 || b.x.unwrap_or(0.0) < 0.0 {
                report.violations.push(Violation {
                    kind: ViolationKind::Passivity,
                    element: b.id,
                    detail: format!(
                        "line to parent has r={:?} x={:?}",
                        b.r.unwrap_or(0.0),
                        b.x.unwrap_or(0.0)
                    ),
                });
            }
            if b.v_min > b.v_max {
                report.violations.push(Violation {
                    kind: ViolationKind::VoltageBounds,
                    element: b.id,
                    detail: format!("v_min={} > v_max={}", b.v_min, b.v_max),
                });
            }
        } else if b.storage.is_some() || b.solar_cap.unwrap_or(0.0) != 0.0 {
            report.violations.push(Violation {
                kind: ViolationKind::SlackEquipment,
                element: b.id,
                detail: "slack bus carries storage or solar fields".into(),
            });
        }
        if b.tap.unwrap_or(1.0) <= 0.0 {
            report.violations.push(Violation {
                kind: ViolationKind::Tap,
                element: b.id,
                detail: format!("tap={:?}", b.tap),
            });
        }
        if let Some(s) = &b.storage {
            let ok = s.cap_min <= s.x_init
                && s.x_init <= s.cap_max
                && s.p_inj_max >= 0.0
                && s.p_abs_max >= 0.0
                && s.eff_abs > 0.0
                && s.eff_abs <= 1.0
                && s.eff_inj >= 1.0;
            if !ok {
                report.violations.push(Violation {
                    kind: ViolationKind::Storage,
                    element: b.id,
                    detail: "storage record violates capacity/efficiency invariants".into(),
                });
            }
        }
    }
    report
}

fn build(file: NetworkFile) -> Result<RadialNetwork, NetworkError> {
    let report = validate_file(&file);
    if let Some(v) = report.violations.first() {
        return Err(match v.kind {
            ViolationKind::NonRadial | ViolationKind::Disconnected | ViolationKind::DuplicateId => {
                NetworkError::Structure(v.detail.clone())
            }
            _ => NetworkError::Domain(v.detail.clone()),
        });
    }
    let index: HashMap<i64, usize> = file.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
    // Conversion factor from A² to p.u.²: I_base = S_base / V_base in kA.
    let i_base_a = file.s_base_mva / file.v_base_kv * 1000.0;
    let i_conv = match file.i_max_unit {
        SquaredCurrentUnit::Pu2 => 1.0,
        SquaredCurrentUnit::A2 => 1.0 / (i_base_a * i_base_a),
    };
    let mut buses = Vec::with_capacity(file.buses.len());
    let mut lines = Vec::new();
    let mut original_ids = Vec::with_capacity(file.buses.len());
    for (i, b) in file.buses.iter().enumerate() {
        let parent = b.parent.map(|p| index[&p]);
        buses.push(Bus {
            id: i,
            parent,
            v_min: b.v_min,
            v_max: b.v_max,
            tap: b.tap.unwrap_or(1.0),
            peak: b.peak,
            storage: b
                .storage
                .as_ref()
                .map(|s| Storage {
                    cap_max: s.cap_max,
                    cap_min: s.cap_min,
                    x_init: s.x_init,
                    p_inj_max: s.p_inj_max,
                    p_abs_max: s.p_abs_max,
                    eff_abs: s.eff_abs,
                    eff_inj: s.eff_inj,
                })
                .unwrap_or_default(),
            reactive: b.reactive.unwrap_or_default(),
            solar_cap: b.solar_cap.unwrap_or(0.0),
        });
        original_ids.push(b.id);
        if let Some(p) = parent {
            lines.push(Line {
                from: i,
                to: p,
                r: b.r.unwrap_or(0.0),
                x: b.x.unwrap_or(0.0),
                i_max: b.i_max.map(|v| v * i_conv),
                s_max: b.s_max,
            });
        }
    }
    lines.sort_by_key(|l| l.from);
    let mut net = RadialNetwork {
        s_base_mva: file.s_base_mva,
        v_base_kv: file.v_base_kv,
        buses,
        lines,
        original_ids,
        depth: Vec::new(),
        children: Vec::new(),
        line_of: Vec::new(),
        depth_labeled: false,
    };
    net.rebuild_topology();
    Ok(net)
}

/// Parses and validates a network description.
pub fn load_network<R: Read>(mut source: R, format: NetworkFormat) -> Result<RadialNetwork, NetworkError> {
    let file = match format {
        NetworkFormat::Json => {
            serde_json::from_reader(source).map_err(|e| NetworkError::Parse(e.to_string()))?
        }
        NetworkFormat::Csv => {
            let mut text = String::new();
            source.read_to_string(&mut text)?;
            parse_csv(&text)?
        }
    };
    build(file)
}

/// Validates a network description without building it; all violations are
/// reported, not just the first.
pub fn validate_network<R: Read>(
    source: R,
    format: NetworkFormat,
) -> Result<ValidationReport, NetworkError> {
    let mut buf = Vec::new();
    let mut source = source;
    source.read_to_end(&mut buf)?;
    let file = match format {
        NetworkFormat::Json => serde_json::from_slice(&buf)
            .map_err(|e| NetworkError::Parse(e.to_string()))?,
        NetworkFormat::Csv => parse_csv(std::str::from_utf8(&buf).map_err(|e| NetworkError::Parse(e.to_string()))?)?,
    };
    Ok(validate_file(&file))
}

fn parse_csv(text: &str) -> Result<NetworkFile, NetworkError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let mut buses = Vec::new();
    // Base declaration travels on the first row in the optional columns
    // s_base_mva / v_base_kv / i_max_unit; defaults are 1 MVA, 12 kV, p.u.².
    let mut base = (1.0, 12.0, SquaredCurrentUnit::Pu2);
    let mut first = true;
    for rec in rdr.records() {
        let rec = rec?;
        let get = |name: &str| -> Option<&str> {
            col(name).and_then(|i| rec.get(i)).filter(|s| !s.is_empty())
        };
        let f = |name: &str| -> Result<Option<f64>, NetworkError> {
            get(name)
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| NetworkError::Parse(format!("bad number {:?} in column {}", s, name)))
                })
                .transpose()
        };
        let req = |name: &str| -> Result<f64, NetworkError> {
            f(name)?.ok_or_else(|| NetworkError::Parse(format!("missing column {}", name)))
        };
        if first {
            first = false;
            if let Some(v) = f("s_base_mva")? {
                base.0 = v;
            }
            if let Some(v) = f("v_base_kv")? {
                base.1 = v;
            }
            if let Some(u) = get("i_max_unit") {
                base.2 = match u {
                    "pu2" => SquaredCurrentUnit::Pu2,
                    "a2" => SquaredCurrentUnit::A2,
                    other => {
                        return Err(NetworkError::Parse(format!("unknown i_max_unit {:?}", other)))
                    }
                };
            }
        }
        let id = get("id")
            .ok_or_else(|| NetworkError::Parse("missing id".into()))?
            .parse::<i64>()
            .map_err(|_| NetworkError::Parse("bad id".into()))?;
        let parent = get("parent")
            .map(|s| s.parse::<i64>().map_err(|_| NetworkError::Parse("bad parent".into())))
            .transpose()?;
        let storage = if f("cap_max")?.is_some() {
            Some(StorageRecord {
                cap_max: req("cap_max")?,
                cap_min: req("cap_min")?,
                x_init: req("x_init")?,
                p_inj_max: req("p_inj_max")?,
                p_abs_max: req("p_abs_max")?,
                eff_abs: req("eff_abs")?,
                eff_inj: req("eff_inj")?,
            })
        } else {
            None
        };
        let reactive = match (f("q_min")?, f("q_max")?) {
            (None, None) => None,
            (qmin, qmax) => Some(ReactiveBounds {
                q_min: qmin.unwrap_or(0.0),
                q_max: qmax.unwrap_or(0.0),
            }),
        };
        buses.push(BusRecord {
            id,
            parent,
            r: f("r")?,
            x: f("x")?,
            i_max: f("i_max")?,
            s_max: f("s_max")?,
            v_min: req("v_min")?,
            v_max: req("v_max")?,
            tap: f("tap")?,
            peak: req("peak")?,
            storage,
            reactive,
            solar_cap: f("solar_cap")?,
        });
    }
    Ok(NetworkFile {
        s_base_mva: base.0,
        v_base_kv: base.1,
        i_max_unit: base.2,
        buses,
    })
}
