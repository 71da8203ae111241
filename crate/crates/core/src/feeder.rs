//! Radial feeder description and validation.
//!
//! Bus 0 is the substation. All other buses are numbered `1..=N` and map to
//! row `id - 1` of the reduced Bbus matrix. Line impedances are stored in
//! per-unit on the feeder's [`Bases`].

use std::collections::{HashSet, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default apparent-power base, 1 MVA.
pub const DEFAULT_S_BASE_VA: f64 = 1.0e6;
/// Default voltage base, 4.16 kV.
pub const DEFAULT_V_BASE_V: f64 = 4160.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bases {
    pub s_base_va: f64,
    pub v_base_v: f64,
}

impl Default for Bases {
    fn default() -> Self {
        Self {
            s_base_va: DEFAULT_S_BASE_VA,
            v_base_v: DEFAULT_V_BASE_V,
        }
    }
}

impl Bases {
    pub fn z_base_ohm(&self) -> f64 {
        self.v_base_v * self.v_base_v / self.s_base_va
    }

    pub fn ohm_to_pu(&self, ohm: f64) -> f64 {
        ohm / self.z_base_ohm()
    }

    pub fn kw_to_pu(&self, kw: f64) -> f64 {
        kw * 1.0e3 / self.s_base_va
    }

    pub fn pu_to_kw(&self, pu: f64) -> f64 {
        pu * self.s_base_va / 1.0e3
    }

    fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        if !ok(self.s_base_va) || !ok(self.v_base_v) {
            return Err(Error::InvalidBases(format!(
                "s_base_va={} v_base_v={}",
                self.s_base_va, self.v_base_v
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BusSpec {
    pub id: usize,
}

/// One line of the feeder file. Exactly one of `r_ohm`/`r_pu` and one of
/// `x_ohm`/`x_pu` must be present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSpec {
    pub from: usize,
    pub to: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_ohm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_pu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_ohm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_pu: Option<f64>,
}

/// Serialized feeder document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeederSpec {
    pub buses: Vec<BusSpec>,
    pub lines: Vec<LineSpec>,
    #[serde(default = "default_v0")]
    pub v0_pu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bases: Option<Bases>,
}

fn default_v0() -> f64 {
    1.0
}

impl FeederSpec {
    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("feeder spec serializes")
    }
}

/// A line segment in per-unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
}

/// Parent/child structure of a radial feeder rooted at bus 0.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialTree {
    /// `parent[j] = Some((parent bus, line index))`; `None` for the root.
    parent: Vec<Option<(usize, usize)>>,
    children: Vec<Vec<usize>>,
    /// Breadth-first order starting at the root.
    order: Vec<usize>,
}

impl RadialTree {
    pub fn parent(&self, bus: usize) -> Option<usize> {
        self.parent[bus].map(|(p, _)| p)
    }

    /// Index (into [`FeederModel::lines`]) of the line feeding `bus`.
    pub fn parent_line(&self, bus: usize) -> Option<usize> {
        self.parent[bus].map(|(_, l)| l)
    }

    pub fn children(&self, bus: usize) -> &[usize] {
        &self.children[bus]
    }

    /// Root-first breadth-first order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

/// A validated feeder.
#[derive(Debug, Clone, PartialEq)]
pub struct FeederModel {
    n_buses: usize,
    lines: Vec<Line>,
    v0: f64,
    bases: Bases,
    tree: Option<RadialTree>,
}

/// Build a feeder from its description. With `require_radial` set, meshed
/// feeders are rejected with [`Error::NotRadial`].
pub fn build_feeder(spec: &FeederSpec, require_radial: bool) -> Result<FeederModel> {
    let model = FeederModel::from_spec(spec)?;
    if require_radial {
        model.tree()?;
    }
    Ok(model)
}

impl FeederModel {
    pub fn from_spec(spec: &FeederSpec) -> Result<Self> {
        let bases = spec.bases.unwrap_or_default();
        bases.validate()?;

        let mut seen = HashSet::new();
        for b in &spec.buses {
            if !seen.insert(b.id) {
                return Err(Error::DuplicateBus(b.id));
            }
        }
        if !seen.contains(&0) {
            return Err(Error::MissingRoot);
        }
        let n_buses = spec.buses.len();
        if let Some(missing) = (0..n_buses).find(|id| !seen.contains(id)) {
            return Err(Error::BusIdGap(missing));
        }

        let mut lines = Vec::with_capacity(spec.lines.len());
        let mut pairs = HashSet::new();
        for ls in &spec.lines {
            let (from, to) = (ls.from, ls.to);
            for bus in [from, to] {
                if bus >= n_buses {
                    return Err(Error::UnknownBus { from, to, bus });
                }
            }
            if from == to {
                return Err(Error::SelfLoop { from, to });
            }
            if !pairs.insert((from.min(to), from.max(to))) {
                return Err(Error::DuplicateLine { from, to });
            }
            let r = pick_impedance(ls.r_ohm, ls.r_pu, &bases, from, to, "resistance")?;
            let x = pick_impedance(ls.x_ohm, ls.x_pu, &bases, from, to, "reactance")?;
            if !(x.is_finite() && x > 0.0) {
                return Err(Error::NonPositiveReactance { from, to, x });
            }
            if !(r.is_finite() && r >= 0.0) {
                return Err(Error::InvalidResistance { from, to, r });
            }
            lines.push(Line { from, to, r, x });
        }

        if !spec.v0_pu.is_finite() || spec.v0_pu <= 0.0 {
            return Err(Error::config("v0_pu", "must be positive"));
        }

        let tree = check_connected_and_tree(n_buses, &lines)?;
        Ok(Self {
            n_buses,
            lines,
            v0: spec.v0_pu,
            bases,
            tree,
        })
    }

    /// Convenience constructor for a chain `0 - 1 - ... - n` with identical
    /// per-unit segments.
    pub fn chain(n: usize, r: f64, x: f64, v0: f64) -> Result<Self> {
        let spec = FeederSpec {
            buses: (0..=n).map(|id| BusSpec { id }).collect(),
            lines: (1..=n)
                .map(|j| LineSpec {
                    from: j - 1,
                    to: j,
                    r_ohm: None,
                    r_pu: Some(r),
                    x_ohm: None,
                    x_pu: Some(x),
                })
                .collect(),
            v0_pu: v0,
            bases: None,
        };
        Self::from_spec(&spec)
    }

    /// Total number of buses including the substation.
    pub fn n_buses(&self) -> usize {
        self.n_buses
    }

    /// Number of non-root (controllable) buses.
    pub fn n_controllable(&self) -> usize {
        self.n_buses - 1
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn v0(&self) -> f64 {
        self.v0
    }

    pub fn bases(&self) -> Bases {
        self.bases
    }

    pub fn is_radial(&self) -> bool {
        self.tree.is_some()
    }

    pub fn tree(&self) -> Result<&RadialTree> {
        self.tree.as_ref().ok_or(Error::NotRadial)
    }

    pub fn to_spec(&self) -> FeederSpec {
        FeederSpec {
            buses: (0..self.n_buses).map(|id| BusSpec { id }).collect(),
            lines: self
                .lines
                .iter()
                .map(|l| LineSpec {
                    from: l.from,
                    to: l.to,
                    r_ohm: None,
                    r_pu: Some(l.r),
                    x_ohm: None,
                    x_pu: Some(l.x),
                })
                .collect(),
            v0_pu: self.v0,
            bases: Some(self.bases),
        }
    }
}

fn pick_impedance(
    ohm: Option<f64>,
    pu: Option<f64>,
    bases: &Bases,
    from: usize,
    to: usize,
    what: &str,
) -> Result<f64> {
    match (ohm, pu) {
        (Some(v), None) => Ok(bases.ohm_to_pu(v)),
        (None, Some(v)) => Ok(v),
        (None, None) => Err(Error::InvalidLine {
            from,
            to,
            reason: format!("missing {what}"),
        }),
        (Some(_), Some(_)) => Err(Error::InvalidLine {
            from,
            to,
            reason: format!("{what} given both in ohm and per-unit"),
        }),
    }
}

fn check_connected_and_tree(n_buses: usize, lines: &[Line]) -> Result<Option<RadialTree>> {
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_buses];
    for (idx, l) in lines.iter().enumerate() {
        adj[l.from].push((l.to, idx));
        adj[l.to].push((l.from, idx));
    }
    for nbrs in &mut adj {
        nbrs.sort_unstable();
    }

    let mut parent: Vec<Option<(usize, usize)>> = vec![None; n_buses];
    let mut visited = vec![false; n_buses];
    let mut order = Vec::with_capacity(n_buses);
    let mut queue = VecDeque::from([0usize]);
    visited[0] = true;
    while let Some(u) = queue.pop_front() {
        order.push(u);
        for &(nb, idx) in &adj[u] {
            if !visited[nb] {
                visited[nb] = true;
                parent[nb] = Some((u, idx));
                queue.push_back(nb);
            }
        }
    }
    if let Some(bus) = visited.iter().position(|v| !v) {
        return Err(Error::Disconnected(bus));
    }

    // connected with N-1 edges <=> tree
    if lines.len() != n_buses - 1 {
        return Ok(None);
    }
    let mut children = vec![Vec::new(); n_buses];
    for bus in 1..n_buses {
        let (p, _) = parent[bus].expect("connected");
        children[p].push(bus);
    }
    Ok(Some(RadialTree {
        parent,
        children,
        order,
    }))
}
