//! Run configuration: UTF-8 `key = value` lines, `#` comments, sections by
//! key prefix (`sim.`, `gateway.`, `pipeline.`, `render.`, `clock.`).
//!
//! ```text
//! sim.n = 64
//! sim.partitions = 2
//! gateway.bandwidth = 50e6          # bytes/s or "unlimited"
//! pipeline.name = slice
//! pipeline.stage.0.type = select_fields
//! pipeline.stage.0.keep = energy
//! pipeline.stage.1.type = slice
//! pipeline.stage.1.axis = z
//! pipeline.stage.1.coordinate = 0.5
//! render.recipe = slice_image
//! clock.mode = modeled
//! clock.sim_ms = 15860
//! clock.hybrid.sim_ms = 15835
//! clock.bandwidth = 1e6
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use super::ClockMode;
use crate::gateway::Backend;
use crate::minisim::{SimConfig, SimTopology};
use crate::reduce::{Axis, Bounds, PipelineSpec, SliceMode, Stage};
use crate::transport::{Endpoint, ThrottleConfig};
use crate::viz::{Recipe, RenderConfig, ScalarRange};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("{key}: {reason}")]
    Value { key: String, reason: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReceiverMode {
    InProcess,
    Subprocess,
}

impl FromStr for ReceiverMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "in_process" | "in-process" => Ok(ReceiverMode::InProcess),
            "subprocess" => Ok(ReceiverMode::Subprocess),
            other => Err(format!("unknown receiver mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct ClockOverride {
    sim_ms: Option<f64>,
    reduce_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClockSettings {
    pub modeled: bool,
    pub sim_ms: f64,
    pub reduce_ms: Option<f64>,
    pub bandwidth: f64,
    overrides: HashMap<String, ClockOverride>,
}

impl Default for ClockSettings {
    fn default() -> Self {
        ClockSettings {
            modeled: false,
            sim_ms: 0.0,
            reduce_ms: None,
            bandwidth: 1e9,
            overrides: HashMap::new(),
        }
    }
}

impl ClockSettings {
    pub fn modeled(sim_ms: f64, reduce_ms: Option<f64>, bandwidth: f64) -> Self {
        ClockSettings {
            modeled: true,
            sim_ms,
            reduce_ms,
            bandwidth,
            overrides: HashMap::new(),
        }
    }

    /// Sets per-backend modeled constants.
    pub fn set_override(&mut self, backend: Backend, sim_ms: Option<f64>, reduce_ms: Option<f64>) {
        self.overrides
            .insert(backend.as_str().to_string(), ClockOverride { sim_ms, reduce_ms });
    }

    pub fn for_backend(&self, backend: Backend) -> ClockMode {
        if !self.modeled {
            return ClockMode::Wall;
        }
        let o = self.overrides.get(backend.as_str()).copied().unwrap_or_default();
        ClockMode::Modeled {
            sim_ms: o.sim_ms.unwrap_or(self.sim_ms),
            reduce_ms: o.reduce_ms.or(self.reduce_ms),
            bandwidth: self.bandwidth,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub sim: SimConfig,
    /// Column label in tables, e.g. "slice".
    pub pipeline_name: String,
    pub pipeline: Option<PipelineSpec>,
    /// `None` disables rendering.
    pub render: Option<RenderConfig>,
    pub backend: Option<Backend>,
    /// `None` picks a free local port.
    pub endpoint: Option<Endpoint>,
    pub bandwidth: ThrottleConfig,
    pub receiver: ReceiverMode,
    pub clock: ClockSettings,
    /// Text the config was parsed from, handed to a subprocess receiver.
    pub source: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            sim: SimConfig::default(),
            pipeline_name: "none".into(),
            pipeline: None,
            render: Some(RenderConfig::default()),
            backend: None,
            endpoint: None,
            bandwidth: ThrottleConfig::Unlimited,
            receiver: ReceiverMode::Subprocess,
            clock: ClockSettings::default(),
            source: String::new(),
        }
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| ConfigError::Value {
        key: key.to_string(),
        reason: format!("{v:?}: {e}"),
    })
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.split(',').map(|s| parse_num(key, s.trim())).collect()
}

fn parse_vec3(key: &str, v: &str) -> Result<[f64; 3], ConfigError> {
    let l: Vec<f64> = parse_list(key, v)?;
    l.try_into().map_err(|_| ConfigError::Value {
        key: key.to_string(),
        reason: "expected three comma-separated numbers".into(),
    })
}

fn value_err(key: &str, reason: impl std::fmt::Display) -> ConfigError {
    ConfigError::Value {
        key: key.to_string(),
        reason: reason.to_string(),
    }
}

/// Splits text into ordered key/value pairs. Duplicate keys are an error.
fn tokenize(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::Syntax {
                line: i + 1,
                reason: format!("expected key = value, got {line:?}"),
            });
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(ConfigError::Syntax {
                line: i + 1,
                reason: "empty key".into(),
            });
        }
        if out.iter().any(|(ok, _)| ok == k) {
            return Err(ConfigError::Syntax {
                line: i + 1,
                reason: format!("duplicate key {k:?}"),
            });
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

fn parse_stage(idx: usize, kv: &BTreeMap<String, (String, String)>) -> Result<Stage, ConfigError> {
    let key = |name: &str| format!("pipeline.stage.{idx}.{name}");
    let get = |name: &str| kv.get(name).map(|(_, v)| v.as_str());
    let need = |name: &str| get(name).ok_or_else(|| value_err(&key(name), "required"));
    let allow = |allowed: &[&str]| -> Result<(), ConfigError> {
        for (name, (full, _)) in kv {
            if !allowed.contains(&name.as_str()) {
                return Err(ConfigError::UnknownKey(full.clone()));
            }
        }
        Ok(())
    };
    let kind = need("type")?;
    Ok(match kind {
        "select_fields" => {
            allow(&["type", "keep"])?;
            let keep = need("keep")?
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect();
            Stage::SelectFields { keep }
        }
        "slice" => {
            allow(&["type", "axis", "coordinate", "origin", "normal"])?;
            if let Some(axis) = get("axis") {
                let axis: Axis = axis.parse().map_err(|e| value_err(&key("axis"), e))?;
                let coordinate = parse_num(&key("coordinate"), need("coordinate")?)?;
                Stage::Slice(SliceMode::AxisAligned { axis, coordinate })
            } else {
                Stage::Slice(SliceMode::Plane {
                    origin: parse_vec3(&key("origin"), need("origin")?)?,
                    normal: parse_vec3(&key("normal"), need("normal")?)?,
                })
            }
        }
        "resample" => {
            allow(&["type", "cells", "bounds"])?;
            let cells: Vec<usize> = parse_list(&key("cells"), need("cells")?)?;
            let cells: [usize; 3] = match cells.as_slice() {
                [c] => [*c; 3],
                [a, b, c] => [*a, *b, *c],
                _ => return Err(value_err(&key("cells"), "expected one or three counts")),
            };
            let bounds = match get("bounds") {
                None | Some("auto") => Bounds::Auto,
                Some(b) => {
                    let l: Vec<f64> = parse_list(&key("bounds"), b)?;
                    let l: [f64; 6] = l
                        .try_into()
                        .map_err(|_| value_err(&key("bounds"), "expected auto or six numbers"))?;
                    Bounds::Box {
                        min: [l[0], l[1], l[2]],
                        max: [l[3], l[4], l[5]],
                    }
                }
            };
            Stage::Resample {
                dims: cells.map(|c| c + 1),
                bounds,
            }
        }
        other => return Err(value_err(&key("type"), format!("unknown stage type {other:?}"))),
    })
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        RunConfig::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig {
            source: text.to_string(),
            ..RunConfig::default()
        };
        let mut render = RenderConfig::default();
        let mut render_enabled = true;
        let mut recipe_set = false;
        let mut stages: BTreeMap<usize, BTreeMap<String, (String, String)>> = BTreeMap::new();
        let mut overrides: HashMap<String, ClockOverride> = HashMap::new();

        for (k, v) in tokenize(text)? {
            let v = v.as_str();
            match k.as_str() {
                "sim.n" => cfg.sim.n = parse_num(&k, v)?,
                "sim.steps" => cfg.sim.steps = parse_num(&k, v)?,
                "sim.dt" => cfg.sim.dt = Some(parse_num(&k, v)?),
                "sim.partitions" => cfg.sim.partitions = parse_num(&k, v)?,
                "sim.width" => cfg.sim.width = parse_num(&k, v)?,
                "sim.topology" => {
                    cfg.sim.topology = match v {
                        "uniform" => SimTopology::Uniform,
                        "explicit_hex" | "hex" => SimTopology::ExplicitHex,
                        other => return Err(value_err(&k, format!("unknown topology {other:?}"))),
                    }
                }
                "gateway.backend" => cfg.backend = Some(v.parse().map_err(|e| value_err(&k, e))?),
                "gateway.endpoint" => cfg.endpoint = Some(v.parse().map_err(|e| value_err(&k, e))?),
                "gateway.bandwidth" => {
                    cfg.bandwidth = if v == "unlimited" {
                        ThrottleConfig::Unlimited
                    } else {
                        ThrottleConfig::Rate(parse_num(&k, v)?)
                    };
                    if !cfg.bandwidth.is_valid() {
                        return Err(value_err(&k, "must be positive and finite"));
                    }
                }
                "gateway.receiver" => cfg.receiver = v.parse().map_err(|e| value_err(&k, e))?,
                "pipeline.name" => cfg.pipeline_name = v.to_string(),
                "render.enabled" => render_enabled = parse_num(&k, v)?,
                "render.recipe" => {
                    render.recipe = v.parse().map_err(|e| value_err(&k, e))?;
                    recipe_set = true;
                }
                "render.width" => render.width = parse_num(&k, v)?,
                "render.height" => render.height = parse_num(&k, v)?,
                "render.field" => render.field = v.to_string(),
                "render.view_axis" => render.view_axis = v.parse().map_err(|e| value_err(&k, e))?,
                "render.samples" => render.samples = Some(parse_num(&k, v)?),
                "render.kappa" => render.kappa = parse_num(&k, v)?,
                "render.range" => {
                    render.range = if v == "auto" {
                        ScalarRange::Auto
                    } else {
                        let l: Vec<f64> = parse_list(&k, v)?;
                        match l.as_slice() {
                            [lo, hi] => ScalarRange::Fixed { lo: *lo, hi: *hi },
                            _ => return Err(value_err(&k, "expected auto or lo,hi")),
                        }
                    }
                }
                "clock.mode" => {
                    cfg.clock.modeled = match v {
                        "wall" => false,
                        "modeled" => true,
                        other => return Err(value_err(&k, format!("unknown clock mode {other:?}"))),
                    }
                }
                "clock.sim_ms" => cfg.clock.sim_ms = parse_num(&k, v)?,
                "clock.reduce_ms" => {
                    cfg.clock.reduce_ms = if v == "measured" { None } else { Some(parse_num(&k, v)?) }
                }
                "clock.bandwidth" => cfg.clock.bandwidth = parse_num(&k, v)?,
                _ => {
                    if let Some(rest) = k.strip_prefix("pipeline.stage.") {
                        let (idx, name) = rest
                            .split_once('.')
                            .ok_or_else(|| ConfigError::UnknownKey(k.clone()))?;
                        let idx: usize = parse_num(&k, idx)?;
                        stages
                            .entry(idx)
                            .or_default()
                            .insert(name.to_string(), (k.clone(), v.to_string()));
                    } else if let Some(rest) = k.strip_prefix("clock.") {
                        let (mode, name) = rest
                            .split_once('.')
                            .ok_or_else(|| ConfigError::UnknownKey(k.clone()))?;
                        let backend: Backend = mode.parse().map_err(|_| ConfigError::UnknownKey(k.clone()))?;
                        let o = overrides.entry(backend.as_str().to_string()).or_default();
                        match name {
                            "sim_ms" => o.sim_ms = Some(parse_num(&k, v)?),
                            "reduce_ms" => o.reduce_ms = Some(parse_num(&k, v)?),
                            _ => return Err(ConfigError::UnknownKey(k.clone())),
                        }
                    } else {
                        return Err(ConfigError::UnknownKey(k.clone()));
                    }
                }
            }
        }

        if !stages.is_empty() {
            let expected: Vec<usize> = (0..stages.len()).collect();
            let got: Vec<usize> = stages.keys().copied().collect();
            if got != expected {
                return Err(value_err("pipeline.stage", format!("indices {got:?} must be 0..{}", stages.len())));
            }
            let spec = PipelineSpec::new(
                stages
                    .iter()
                    .map(|(i, kv)| parse_stage(*i, kv))
                    .collect::<Result<_, _>>()?,
            );
            spec.validate().map_err(|e| value_err("pipeline", e))?;
            if !recipe_set && matches!(spec.stages.last(), Some(Stage::Resample { .. })) {
                render.recipe = Recipe::VolumeRender;
            }
            cfg.pipeline = Some(spec);
        }
        cfg.clock.overrides = overrides;
        cfg.sim.validate().map_err(|e| value_err("sim", e))?;
        render.validate().map_err(|e| value_err("render", e))?;
        for b in [Backend::Inline, Backend::Transit, Backend::Hybrid] {
            cfg.clock.for_backend(b).validate().map_err(|e| value_err("clock", e))?;
        }
        cfg.render = render_enabled.then_some(render);
        Ok(cfg)
    }

    /// Identifies the workload (simulation and pipeline) independent of the
    /// backend and clock, so runs of different modes can be compared.
    pub fn workload_fingerprint(&self) -> String {
        let s = &self.sim;
        let mut out = format!(
            "n={} topology={:?} steps={} dt={} partitions={} width={}",
            s.n,
            s.topology,
            s.steps,
            s.dt(),
            s.partitions,
            s.width
        );
        match &self.pipeline {
            Some(p) => {
                let _ = write!(out, " pipeline={:?}", p.stages);
            }
            None => out.push_str(" pipeline=none"),
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SLICE: &str = "
        # slice benchmark
        sim.n = 16
        sim.partitions = 2
        sim.steps = 3
        gateway.bandwidth = 5e7
        gateway.receiver = in_process
        pipeline.name = slice
        pipeline.stage.0.type = select_fields
        pipeline.stage.0.keep = energy
        pipeline.stage.1.type = slice
        pipeline.stage.1.axis = z
        pipeline.stage.1.coordinate = 0.5
        clock.mode = modeled
        clock.sim_ms = 15860
        clock.hybrid.sim_ms = 15835
        clock.bandwidth = 1e6
    ";

    #[test]
    fn parses_slice_run() {
        let c = RunConfig::parse(SLICE).unwrap();
        assert_eq!(c.sim.n, 16);
        assert_eq!(c.receiver, ReceiverMode::InProcess);
        assert_eq!(c.bandwidth, ThrottleConfig::Rate(5e7));
        let p = c.pipeline.as_ref().unwrap();
        assert_eq!(p.stages.len(), 2);
        assert_eq!(c.render.as_ref().unwrap().recipe, Recipe::SliceImage);
        assert_eq!(
            c.clock.for_backend(Backend::Hybrid),
            ClockMode::Modeled {
                sim_ms: 15835.0,
                reduce_ms: None,
                bandwidth: 1e6
            }
        );
        assert_eq!(
            c.clock.for_backend(Backend::Transit),
            ClockMode::Modeled {
                sim_ms: 15860.0,
                reduce_ms: None,
                bandwidth: 1e6
            }
        );
    }

    #[test]
    fn resample_defaults_to_volume_render() {
        let c = RunConfig::parse("pipeline.stage.0.type = resample\npipeline.stage.0.cells = 30").unwrap();
        assert_eq!(
            c.pipeline.unwrap().stages[0],
            Stage::Resample {
                dims: [31; 3],
                bounds: Bounds::Auto
            }
        );
        assert_eq!(c.render.unwrap().recipe, Recipe::VolumeRender);
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "sim.n 4",
            "sim.nn = 4",
            "sim.n = 4\nsim.n = 5",
            "sim.n = four",
            "pipeline.stage.1.type = slice",
            "pipeline.stage.0.type = slice\npipeline.stage.0.axis = z",
            "pipeline.stage.0.type = blur",
            "pipeline.stage.0.type = select_fields\npipeline.stage.0.keep = a\npipeline.stage.0.extra = 1",
            "clock.warp.sim_ms = 1",
            "gateway.bandwidth = 0",
            "render.kappa = -1",
        ] {
            assert!(RunConfig::parse(text).is_err(), "{text:?} accepted");
        }
    }

    #[test]
    fn fingerprint_ignores_mode_and_clock() {
        let a = RunConfig::parse("sim.n = 8\ngateway.backend = transit").unwrap();
        let b = RunConfig::parse("sim.n = 8\ngateway.backend = hybrid\nclock.mode = modeled").unwrap();
        let c = RunConfig::parse("sim.n = 9").unwrap();
        assert_eq!(a.workload_fingerprint(), b.workload_fingerprint());
        assert_ne!(a.workload_fingerprint(), c.workload_fingerprint());
    }
}
