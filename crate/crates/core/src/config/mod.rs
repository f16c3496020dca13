//! TOML scenario files.
//!
//! ```toml
//! [building]
//! zones = [{ air_capacitance = 20.0, ... }]
//! edges = [{ a = 0, b = 1, resistance = 23.0 }]
//!
//! [ghp]
//! water_heat_capacity = 4.186
//! ...
//!
//! [disturbances]
//! outdoor = { kind = "step", points = [{ at_h = 0.0, value = 2.0 }] }
//! gains = [{ kind = "constant", value = 0.0 }, ...]
//!
//! [controller]
//! scheme = "flow-only"
//! supply = { kind = "constant", value = 40.0 }
//! energy_weight = { kind = "constant", value = 0.0 }
//!
//! [simulation]
//! dt = 0.1
//! horizon_h = 24.0
//! ```
//!
//! Unknown keys are rejected everywhere. Overrides use dotted paths with
//! optional array indices, e.g. `controller.gains.k_u=2` or
//! `building.zones[1].max_flow=0.05`.

use serde::{Deserialize, Serialize};

use crate::control::{CompressorGains, ZoneGains};
use crate::error::{Error, Result};
use crate::model::{BuildingGraph, Edge, GhpParams, ZoneParams};
use crate::sim::{Disturbances, Profile, Scenario, Scheme, SettlingCriteria, Variant};

/// Bundled scenario files, by name.
pub const BUNDLED: [(&str, &str); 4] = [
    ("s5-scenario1.cfg", include_str!("../../scenarios/s5-scenario1.cfg")),
    ("s5-scenario2.cfg", include_str!("../../scenarios/s5-scenario2.cfg")),
    ("s5-scenario1-steady.cfg", include_str!("../../scenarios/s5-scenario1-steady.cfg")),
    ("s5-scenario2-steady.cfg", include_str!("../../scenarios/s5-scenario2-steady.cfg")),
];

pub fn bundled(name: &str) -> Option<&'static str> {
    let name = name.rsplit(['/', '\\']).next().unwrap_or(name);
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub building: BuildingSection,
    pub ghp: GhpParams,
    pub disturbances: DisturbanceSection,
    pub controller: ControllerSection,
    pub simulation: SimulationSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildingSection {
    pub zones: Vec<ZoneParams>,
    #[serde(default)]
    pub edges: Vec<Edge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSection {
    pub outdoor: Profile,
    /// One heat gain profile per zone (kW).
    pub gains: Vec<Profile>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    /// Fixed supply temperature, flow control only.
    FlowOnly,
    /// Flow and supply temperature control.
    Joint,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    pub scheme: SchemeKind,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default = "yes")]
    pub extra_dynamics: bool,
    /// Supply temperature profile; required for `flow-only`, rejected for `joint`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supply: Option<Profile>,
    pub energy_weight: Profile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setpoints: Option<Vec<Profile>>,
    #[serde(default)]
    pub gains: ZoneGains,
    #[serde(default)]
    pub compressor: CompressorGains,
}

fn record_every() -> usize {
    100
}

fn initial_temperature() -> f64 {
    18.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    /// Seconds.
    pub dt: f64,
    pub horizon_h: f64,
    #[serde(default = "record_every")]
    pub record_every: usize,
    #[serde(default = "initial_temperature")]
    pub initial_temperature: f64,
    /// Flow total variation in comparisons ignores the first `burn_in_h` hours.
    #[serde(default)]
    pub burn_in_h: f64,
    #[serde(default)]
    pub settling: SettlingCriteria,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub trace: String,
    pub summary: String,
    pub solution: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { trace: "trace.csv".into(), summary: "summary.json".into(), solution: "solution.json".into() }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses `text`, applies `key=value` overrides and validates the result.
    pub fn load(text: &str, overrides: &[String]) -> Result<Self> {
        let cfg = if overrides.is_empty() {
            Self::parse(text)?
        } else {
            let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
            for o in overrides {
                apply_override(&mut doc, o)?;
            }
            toml::Value::Table(doc).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?
        };
        cfg.scenario()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn graph(&self) -> Result<BuildingGraph> {
        BuildingGraph::new(self.building.zones.clone(), self.building.edges.clone()).map_err(|e| match e {
            Error::InvalidParameter { field, reason } => Error::InvalidParameter { field: format!("building.{field}"), reason },
            Error::Structure(m) => Error::Structure(format!("building: {m}")),
            other => other,
        })
    }

    /// The simulation scenario described by this file.
    pub fn scenario(&self) -> Result<Scenario> {
        let graph = self.graph()?;
        let c = &self.controller;
        let scheme = match (c.scheme, &c.supply) {
            (SchemeKind::FlowOnly, Some(p)) => Scheme::FlowOnly { supply: p.clone() },
            (SchemeKind::FlowOnly, None) => {
                return Err(Error::InvalidParameter {
                    field: "controller.supply".into(),
                    reason: "required by the flow-only scheme".into(),
                })
            }
            (SchemeKind::Joint, None) => Scheme::Joint { compressor: c.compressor },
            (SchemeKind::Joint, Some(_)) => {
                return Err(Error::InvalidParameter {
                    field: "controller.supply".into(),
                    reason: "the joint scheme sets the supply temperature itself".into(),
                })
            }
        };
        let s = &self.simulation;
        if !(s.horizon_h.is_finite() && s.horizon_h > 0.0) {
            return Err(Error::InvalidParameter {
                field: "simulation.horizon_h".into(),
                reason: format!("must be > 0 (got {})", s.horizon_h),
            });
        }
        if !(s.burn_in_h.is_finite() && s.burn_in_h >= 0.0) {
            return Err(Error::InvalidParameter {
                field: "simulation.burn_in_h".into(),
                reason: format!("must be >= 0 (got {})", s.burn_in_h),
            });
        }
        let sc = Scenario {
            graph,
            ghp: self.ghp.clone(),
            disturbances: Disturbances { outdoor: self.disturbances.outdoor.clone(), gains: self.disturbances.gains.clone() },
            scheme,
            gains: c.gains,
            variant: c.variant,
            extra_dynamics: c.extra_dynamics,
            energy_weight: c.energy_weight.clone(),
            setpoints: c.setpoints.clone(),
            initial_temperature: s.initial_temperature,
            initial_state: None,
            horizon: s.horizon_h * 3600.0,
            dt: s.dt,
            record_every: s.record_every,
        };
        sc.validate()?;
        Ok(sc)
    }
}

enum Seg<'a> {
    Key(&'a str),
    Index(usize),
}

fn parse_path(path: &str) -> Result<Vec<Seg<'_>>> {
    let bad = || Error::Config(format!("cannot parse override path `{path}`"));
    let mut out = Vec::new();
    for part in path.split('.') {
        let (key, mut rest) = match part.find('[') {
            Some(i) => (&part[..i], &part[i..]),
            None => (part, ""),
        };
        if key.is_empty() {
            return Err(bad());
        }
        out.push(Seg::Key(key));
        while !rest.is_empty() {
            let close = rest.find(']').ok_or_else(bad)?;
            let idx = rest.get(1..close).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            out.push(Seg::Index(idx));
            rest = &rest[close + 1..];
            if !rest.is_empty() && !rest.starts_with('[') {
                return Err(bad());
            }
        }
    }
    Ok(out)
}

/// Reads an override value as a TOML literal, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies one `dotted.path=value` override to a parsed document.
pub fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not of the form key=value")))?;
    let path = path.trim();
    let segs = parse_path(path)?;
    let missing = || Error::Config(format!("override path `{path}` does not exist"));
    let (last, init) = segs.split_last().ok_or_else(missing)?;
    let mut cur: &mut toml::Value = match &init.first() {
        Some(Seg::Key(k)) => doc.get_mut(*k).ok_or_else(missing)?,
        Some(Seg::Index(_)) => return Err(missing()),
        None => {
            let Seg::Key(k) = last else { return Err(missing()) };
            doc.insert(k.to_string(), parse_value(raw.trim()));
            return Ok(());
        }
    };
    for seg in &init[1..] {
        cur = match seg {
            Seg::Key(k) => cur.as_table_mut().and_then(|t| t.get_mut(*k)),
            Seg::Index(i) => cur.as_array_mut().and_then(|a| a.get_mut(*i)),
        }
        .ok_or_else(missing)?;
    }
    let value = parse_value(raw.trim());
    match last {
        Seg::Key(k) => {
            cur.as_table_mut().ok_or_else(missing)?.insert(k.to_string(), value);
        }
        Seg::Index(i) => *cur.as_array_mut().and_then(|a| a.get_mut(*i)).ok_or_else(missing)? = value,
    }
    Ok(())
}
