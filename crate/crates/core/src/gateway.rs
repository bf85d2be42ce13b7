//! Three-call coupling surface: [`Gateway::initialize`], [`Gateway::execute`],
//! [`Gateway::finalize`]. The backend is picked by configuration only; the
//! simulation side issues the same calls for every backend.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use thiserror::Error;

use crate::bench::{ClockMode, TimingRecord};
use crate::node::{validate_mesh, DataNode, MeshChannel, MeshError, NodeError};
use crate::reduce::{run_pipeline_with, PipelineSpec, ReduceError, SliceOwnership};
use crate::transport::{open_writer_with, Endpoint, Throttle, ThrottleConfig, TransportError, Writer, WriterOptions};
use crate::viz::{image_file_name, render, write_image, RenderConfig, VizError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    /// Reduce and render on the simulation side; nothing is sent.
    Inline,
    /// Send full channels; the receiver reduces and renders.
    Transit,
    /// Reduce on the simulation side and send only the reduced channels.
    Hybrid,
}

impl Backend {
    pub fn as_str(self) -> &'static str {
        match self {
            Backend::Inline => "inline",
            Backend::Transit => "transit",
            Backend::Hybrid => "hybrid",
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "inline" => Ok(Backend::Inline),
            "transit" => Ok(Backend::Transit),
            "hybrid" => Ok(Backend::Hybrid),
            other => Err(format!("unknown backend {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Partition {
    pub rank: u32,
    pub rank_count: u32,
}

impl Partition {
    pub const SINGLE: Partition = Partition { rank: 0, rank_count: 1 };

    pub fn is_valid(&self) -> bool {
        self.rank_count >= 1 && self.rank < self.rank_count
    }
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub backend: Backend,
    pub pipeline: Option<PipelineSpec>,
    /// Rendering recipe. Required inline; otherwise used by the receiver.
    pub viz: Option<RenderConfig>,
    pub endpoint: Option<Endpoint>,
    pub bandwidth: ThrottleConfig,
    /// Pacing shared with other gateways; overrides `bandwidth` when set.
    pub shared_throttle: Option<Throttle>,
    pub clock: ClockMode,
    /// Directory for inline images.
    pub output_dir: Option<PathBuf>,
    /// Partition announced before the first execute (handshake and
    /// end-of-stream of a gateway that never executes).
    pub partition: Option<Partition>,
}

impl GatewayConfig {
    pub fn new(backend: Backend) -> Self {
        GatewayConfig {
            backend,
            pipeline: None,
            viz: None,
            endpoint: None,
            bandwidth: ThrottleConfig::Unlimited,
            shared_throttle: None,
            clock: ClockMode::Wall,
            output_dir: None,
            partition: None,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: &str| Err(GatewayError::Config(m.to_string()));
        match self.backend {
            Backend::Hybrid if self.pipeline.is_none() => return bad("hybrid backend needs a reduction pipeline"),
            Backend::Inline if self.pipeline.is_none() => return bad("inline backend needs a reduction pipeline"),
            Backend::Inline if self.viz.is_none() => return bad("inline backend needs a render recipe"),
            _ => {}
        }
        match (self.backend, &self.endpoint) {
            (Backend::Inline, Some(_)) => return bad("inline backend takes no endpoint"),
            (Backend::Transit | Backend::Hybrid, None) => return bad("transit and hybrid backends need an endpoint"),
            _ => {}
        }
        if let Some(p) = &self.pipeline {
            p.validate().map_err(|e| GatewayError::Config(e.to_string()))?;
        }
        if let Some(v) = &self.viz {
            v.validate().map_err(|e| GatewayError::Config(e.to_string()))?;
        }
        if !self.bandwidth.is_valid() {
            return bad("bandwidth must be positive and finite");
        }
        self.clock.validate().map_err(GatewayError::Config)?;
        if let Some(p) = self.partition {
            if !p.is_valid() {
                return bad("partition rank must be below rank_count");
            }
        }
        Ok(())
    }
}

/// One simulation step handed to the gateway.
#[derive(Debug, Clone)]
pub struct ExecuteRequest {
    pub timestep: u64,
    pub time: f64,
    /// Mesh subtrees by channel name.
    pub channels: Vec<(String, DataNode)>,
    pub partition: Partition,
}

impl ExecuteRequest {
    pub fn single(timestep: u64, time: f64, name: &str, mesh: DataNode, partition: Partition) -> Self {
        ExecuteRequest {
            timestep,
            time,
            channels: vec![(name.to_string(), mesh)],
            partition,
        }
    }
}

/// Builds the transported tree: `state/{timestep,time}` and `channels/<name>`.
pub fn payload_tree<'a>(
    timestep: u64,
    time: f64,
    channels: impl IntoIterator<Item = (&'a str, DataNode)>,
) -> Result<DataNode, NodeError> {
    let mut root = DataNode::object();
    root.set_path("state/timestep", timestep as i64)?;
    root.set_path("state/time", time)?;
    let mut chans = DataNode::object();
    for (name, node) in channels {
        chans.set_path(name, node)?;
    }
    root.set_path("channels", chans)?;
    Ok(root)
}

/// Step number, time and channels read back from a transported tree.
pub fn parse_payload(root: &DataNode) -> Result<(u64, f64, Vec<(String, DataNode)>), GatewayError> {
    let malformed = |m: &str| GatewayError::InvalidRequest(format!("payload: {m}"));
    let Some(obj) = root.as_object() else {
        return Err(malformed("root is not an object"));
    };
    if obj.is_empty() {
        return Ok((0, 0.0, Vec::new()));
    }
    let step = root
        .get_path("state/timestep")
        .and_then(DataNode::as_i64)
        .ok_or_else(|| malformed("missing state/timestep"))?;
    let time = root
        .get_path("state/time")
        .and_then(DataNode::as_f64)
        .ok_or_else(|| malformed("missing state/time"))?;
    let channels = root
        .get_path("channels")
        .and_then(DataNode::as_object)
        .ok_or_else(|| malformed("missing channels"))?
        .iter()
        .map(|(n, c)| (n.to_string(), c.clone()))
        .collect();
    Ok((step as u64, time, channels))
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid gateway config: {0}")]
    Config(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("timestep {step} does not follow {last}")]
    StepOrder { last: u64, step: u64 },
    #[error("channel {channel:?}: {source}")]
    Mesh {
        channel: String,
        #[source]
        source: MeshError,
    },
    #[error("channel {channel:?}: reduction failed: {source}")]
    Reduce {
        channel: String,
        #[source]
        source: ReduceError,
    },
    #[error("transport: {0}")]
    Transport(#[from] TransportError),
    #[error("render: {0}")]
    Render(#[from] VizError),
    #[error("gateway already finalized")]
    Finalized,
}

/// Totals over a gateway's lifetime.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GatewaySummary {
    pub steps: usize,
    pub reduce_ms: f64,
    pub transfer_ms: f64,
    pub render_ms: f64,
    pub bytes_sent: u64,
}

pub struct Gateway {
    config: GatewayConfig,
    writer: Option<Writer>,
    last_step: Option<u64>,
    partition: Option<Partition>,
    summary: GatewaySummary,
    finalized: bool,
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1000.0
}

impl Gateway {
    pub fn initialize(config: GatewayConfig) -> Result<Gateway, GatewayError> {
        config.validate()?;
        if config.backend == Backend::Transit && config.pipeline.is_some() {
            log::warn!("transit backend ignores the reduction pipeline on the sending side");
        }
        let writer = match (&config.endpoint, config.backend) {
            (Some(ep), Backend::Transit | Backend::Hybrid) => {
                let throttle = config
                    .shared_throttle
                    .clone()
                    .unwrap_or_else(|| Throttle::new(config.bandwidth));
                let p = config.partition.unwrap_or(Partition { rank: 0, rank_count: 0 });
                let options = WriterOptions {
                    rank: p.rank,
                    rank_count: p.rank_count,
                    ..WriterOptions::default()
                };
                Some(open_writer_with(ep, throttle, options)?)
            }
            _ => None,
        };
        Ok(Gateway {
            partition: config.partition,
            config,
            writer,
            last_step: None,
            summary: GatewaySummary::default(),
            finalized: false,
        })
    }

    pub fn backend(&self) -> Backend {
        self.config.backend
    }

    /// Processes one step and returns its timing. `sim_ms` is left at zero
    /// for the caller to fill in.
    pub fn execute(&mut self, req: &ExecuteRequest) -> Result<TimingRecord, GatewayError> {
        if self.finalized {
            return Err(GatewayError::Finalized);
        }
        let part = req.partition;
        if !part.is_valid() {
            return Err(GatewayError::InvalidRequest(format!(
                "rank {} with rank_count {}",
                part.rank, part.rank_count
            )));
        }
        if let Some(known) = self.partition {
            if known != part {
                return Err(GatewayError::InvalidRequest(format!(
                    "partition {}/{} differs from {}/{}",
                    part.rank, part.rank_count, known.rank, known.rank_count
                )));
            }
        }
        if let Some(last) = self.last_step {
            if req.timestep <= last {
                return Err(GatewayError::StepOrder {
                    last,
                    step: req.timestep,
                });
            }
        }
        let mut meshes = Vec::with_capacity(req.channels.len());
        for (name, node) in &req.channels {
            let mesh = validate_mesh(node).map_err(|source| GatewayError::Mesh {
                channel: name.clone(),
                source,
            })?;
            meshes.push((name.as_str(), node, mesh));
        }

        let mut rec = TimingRecord {
            step: req.timestep,
            rank: part.rank,
            ..TimingRecord::default()
        };
        let clock = self.config.clock;
        match self.config.backend {
            Backend::Inline => {
                let reduced = self.reduce(&meshes, part, &mut rec)?;
                let viz = self.config.viz.as_ref().expect("validated");
                let started = Instant::now();
                for (_, mesh) in &reduced {
                    let img = render(viz, std::slice::from_ref(mesh))?;
                    if let Some(dir) = &self.config.output_dir {
                        std::fs::create_dir_all(dir).map_err(VizError::from)?;
                        let name = if part.rank_count > 1 {
                            format!("step{}_rank{}_{}.ppm", req.timestep, part.rank, viz.recipe)
                        } else {
                            image_file_name(req.timestep, viz.recipe)
                        };
                        write_image(&img, &dir.join(name))?;
                    }
                }
                rec.render_ms = ms_since(started);
            }
            Backend::Transit => {
                let channels = meshes.iter().map(|(n, node, _)| (*n, (*node).clone()));
                let tree = payload_tree(req.timestep, req.time, channels)
                    .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
                self.send(&tree, req.timestep, part, &mut rec)?;
            }
            Backend::Hybrid => {
                let reduced = self.reduce(&meshes, part, &mut rec)?;
                let channels = reduced.iter().map(|(n, m)| (n.as_str(), m.to_node()));
                let tree = payload_tree(req.timestep, req.time, channels)
                    .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
                self.send(&tree, req.timestep, part, &mut rec)?;
            }
        }
        rec.transfer_ms = clock.transfer_ms(rec.bytes_sent, rec.transfer_ms);

        self.last_step = Some(req.timestep);
        self.partition = Some(part);
        self.summary.steps += 1;
        self.summary.reduce_ms += rec.reduce_ms;
        self.summary.transfer_ms += rec.transfer_ms;
        self.summary.render_ms += rec.render_ms;
        self.summary.bytes_sent += rec.bytes_sent;
        Ok(rec)
    }

    fn reduce(
        &self,
        meshes: &[(&str, &DataNode, MeshChannel)],
        part: Partition,
        rec: &mut TimingRecord,
    ) -> Result<Vec<(String, MeshChannel)>, GatewayError> {
        let spec = self.config.pipeline.as_ref().expect("validated");
        let started = Instant::now();
        let mut out = Vec::with_capacity(meshes.len());
        for (name, _, mesh) in meshes {
            let r = run_pipeline_with(spec, mesh, SliceOwnership::for_rank(part.rank)).map_err(|source| {
                GatewayError::Reduce {
                    channel: name.to_string(),
                    source,
                }
            })?;
            out.push((name.to_string(), r.channel));
        }
        rec.reduce_ms = self.config.clock.reduce_ms(ms_since(started));
        Ok(out)
    }

    fn send(&mut self, tree: &DataNode, step: u64, part: Partition, rec: &mut TimingRecord) -> Result<(), GatewayError> {
        let writer = self.writer.as_mut().expect("validated");
        let stats = writer.put_step(step, part.rank, part.rank_count, tree)?;
        rec.bytes_sent = stats.bytes;
        rec.transfer_ms = stats.duration.as_secs_f64() * 1000.0;
        Ok(())
    }

    /// Sends end-of-stream and returns lifetime totals. The gateway rejects
    /// every call afterwards.
    pub fn finalize(&mut self) -> Result<GatewaySummary, GatewayError> {
        if self.finalized {
            return Err(GatewayError::Finalized);
        }
        self.finalized = true;
        if let Some(mut w) = self.writer.take() {
            let p = self.partition.unwrap_or(Partition::SINGLE);
            w.end_of_stream(p.rank, p.rank_count)?;
            w.close()?;
        }
        Ok(self.summary)
    }
}
