use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Barrier, Mutex};
use std::thread;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};

use super::config::{ReceiverMode, RunConfig};
use super::report::{read_csv, write_csv, RunReport};
use super::TimingRecord;
use crate::gateway::{parse_payload, Backend, ExecuteRequest, Gateway, GatewayConfig, Partition};
use crate::minisim::generate_step;
use crate::node::{validate_mesh, MeshChannel};
use crate::reduce::{run_pipeline_with, SliceOwnership};
use crate::transport::{replay_loop, AssembledStep, Endpoint, Reader, Throttle};
use crate::viz::{image_file_name, render, write_image};

pub const CHANNEL: &str = "mesh";
pub const TIMINGS_CSV: &str = "timings.csv";
pub const REPORT_JSON: &str = "report.json";
pub const RECEIVER_CSV: &str = "receiver.csv";

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ReceivedStep {
    pub step: u64,
    pub render_ms: f64,
    pub payload_bytes: u64,
}

/// What the receiver does with each assembled step.
#[derive(Debug, Clone)]
pub struct ReceiverSetup {
    pub backend: Backend,
    pub config: RunConfig,
    pub out_dir: PathBuf,
}

fn step_meshes(step: &AssembledStep, setup: &ReceiverSetup) -> Result<Vec<MeshChannel>> {
    let mut meshes = Vec::with_capacity(step.parts.len());
    for part in &step.parts {
        let (_, _, channels) = parse_payload(&part.node)?;
        for (name, node) in channels {
            let mesh = validate_mesh(&node).with_context(|| format!("rank {} channel {name}", part.rank))?;
            let mesh = match (&setup.config.pipeline, setup.backend) {
                // full data arrives in transit mode and is reduced here
                (Some(spec), Backend::Transit) => {
                    run_pipeline_with(spec, &mesh, SliceOwnership::for_rank(part.rank))
                        .with_context(|| format!("rank {} channel {name}", part.rank))?
                        .channel
                }
                _ => mesh,
            };
            meshes.push(mesh);
        }
    }
    Ok(meshes)
}

/// Replays the stream, renders each step and returns per-step receiver
/// timings.
pub fn receive(reader: &mut Reader, setup: &ReceiverSetup) -> Result<Vec<ReceivedStep>> {
    std::fs::create_dir_all(&setup.out_dir)?;
    let mut out = Vec::new();
    replay_loop(reader, |step: AssembledStep| -> Result<()> {
        let meshes = step_meshes(&step, setup).with_context(|| format!("step {}", step.step))?;
        let started = Instant::now();
        if let Some(viz) = &setup.config.render {
            let img = render(viz, &meshes).with_context(|| format!("rendering step {}", step.step))?;
            write_image(&img, &setup.out_dir.join(image_file_name(step.step, viz.recipe)))?;
        }
        out.push(ReceivedStep {
            step: step.step,
            render_ms: started.elapsed().as_secs_f64() * 1000.0,
            payload_bytes: step.payload_bytes(),
        });
        Ok(())
    })
    .map_err(|e| anyhow!("receiver: {e}"))?;
    Ok(out)
}

pub fn write_receiver_csv(path: &Path, steps: &[ReceivedStep]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in steps {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

fn read_receiver_csv(path: &Path) -> Result<Vec<ReceivedStep>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides the config's receiver mode.
    pub receiver: Option<ReceiverMode>,
    /// Executable providing the `receive` subcommand; defaults to the
    /// current executable.
    pub receiver_exe: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub records: Vec<TimingRecord>,
    pub csv_path: PathBuf,
    pub report_path: PathBuf,
}

enum ReceiverHandle {
    Thread(thread::JoinHandle<Result<Vec<ReceivedStep>>>),
    Process { child: Child, out_dir: PathBuf },
}

impl ReceiverHandle {
    fn join(self) -> Result<Vec<ReceivedStep>> {
        match self {
            ReceiverHandle::Thread(h) => h.join().map_err(|_| anyhow!("receiver thread panicked"))?,
            ReceiverHandle::Process { mut child, out_dir } => {
                let status = child.wait()?;
                if !status.success() {
                    bail!("receiver process exited with {status}");
                }
                read_receiver_csv(&out_dir.join(RECEIVER_CSV))
            }
        }
    }

    fn abandon(self) {
        if let ReceiverHandle::Process { mut child, .. } = self {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

fn start_receiver(cfg: &RunConfig, backend: Backend, out_dir: &Path, opts: &RunOptions) -> Result<(Endpoint, ReceiverHandle)> {
    let listen = cfg.endpoint.clone().unwrap_or(Endpoint::Socket("127.0.0.1:0".into()));
    match opts.receiver.unwrap_or(cfg.receiver) {
        ReceiverMode::InProcess => {
            let mut reader = Reader::open(&listen)?;
            let ep = match (&listen, reader.local_addr()) {
                (Endpoint::Socket(_), Some(a)) => Endpoint::Socket(a.to_string()),
                _ => listen,
            };
            let setup = ReceiverSetup {
                backend,
                config: cfg.clone(),
                out_dir: out_dir.to_path_buf(),
            };
            let h = thread::Builder::new()
                .name("hxit-receiver".into())
                .spawn(move || receive(&mut reader, &setup))?;
            Ok((ep, ReceiverHandle::Thread(h)))
        }
        ReceiverMode::Subprocess => {
            let exe = match &opts.receiver_exe {
                Some(p) => p.clone(),
                None => std::env::current_exe()?,
            };
            if cfg.source.trim().is_empty() {
                bail!("a subprocess receiver needs a config parsed from text");
            }
            let conf = out_dir.join("run.conf");
            std::fs::write(&conf, &cfg.source)?;
            let mut child = Command::new(&exe)
                .arg("receive")
                .arg("--config")
                .arg(&conf)
                .arg("--mode")
                .arg(backend.as_str())
                .arg("--out")
                .arg(out_dir)
                .arg("--listen")
                .arg(listen.to_string())
                .stdout(Stdio::piped())
                .spawn()
                .with_context(|| format!("starting receiver {}", exe.display()))?;
            let stdout = child.stdout.take().expect("piped");
            let mut line = String::new();
            BufReader::new(stdout).read_line(&mut line)?;
            let Some(addr) = line.trim().strip_prefix("listening ") else {
                let _ = child.kill();
                bail!("receiver did not report its address (got {line:?})");
            };
            let ep: Endpoint = addr.parse()?;
            Ok((
                ep,
                ReceiverHandle::Process {
                    child,
                    out_dir: out_dir.to_path_buf(),
                },
            ))
        }
    }
}

/// Runs all ranks in lockstep through every step, with a receiver for
/// transit and hybrid modes, and writes the timing CSV and report.
pub fn run_experiment(cfg: &RunConfig, backend: Backend, out_dir: &Path, opts: &RunOptions) -> Result<RunOutcome> {
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let ranks = cfg.sim.partitions;
    let clock = cfg.clock.for_backend(backend);

    let (endpoint, receiver) = if backend == Backend::Inline {
        (None, None)
    } else {
        let (ep, h) = start_receiver(cfg, backend, out_dir, opts)?;
        (Some(ep), Some(h))
    };

    let throttle = Throttle::new(cfg.bandwidth);
    let barrier = Arc::new(Barrier::new(ranks));
    let abort = Arc::new(AtomicBool::new(false));
    let errors: Arc<Mutex<Vec<anyhow::Error>>> = Arc::default();
    let mut handles = Vec::with_capacity(ranks);
    for rank in 0..ranks {
        let partition = Partition {
            rank: rank as u32,
            rank_count: ranks as u32,
        };
        let gw = GatewayConfig {
            backend,
            // transit reduces on the receiver
            pipeline: if backend == Backend::Transit { None } else { cfg.pipeline.clone() },
            viz: cfg.render.clone(),
            endpoint: endpoint.clone(),
            bandwidth: cfg.bandwidth,
            shared_throttle: Some(throttle.clone()),
            clock,
            output_dir: Some(out_dir.to_path_buf()),
            partition: Some(partition),
        };
        let sim = cfg.sim.clone();
        let (barrier, abort, errors) = (barrier.clone(), abort.clone(), errors.clone());
        handles.push(thread::spawn(move || {
            let fail = |e: anyhow::Error| {
                abort.store(true, Ordering::SeqCst);
                errors.lock().unwrap().push(e);
            };
            let mut gateway = match Gateway::initialize(gw).with_context(|| format!("rank {rank}: initialize")) {
                Ok(g) => Some(g),
                Err(e) => {
                    fail(e);
                    None
                }
            };
            let mut records = Vec::with_capacity(sim.steps);
            for step in 0..sim.steps {
                barrier.wait();
                let Some(g) = gateway.as_mut().filter(|_| !abort.load(Ordering::SeqCst)) else {
                    continue;
                };
                let result = (|| -> Result<TimingRecord> {
                    let started = Instant::now();
                    let mesh = generate_step(&sim, rank, sim.time_of(step))?;
                    let node = mesh.to_node();
                    let sim_ms = started.elapsed().as_secs_f64() * 1000.0;
                    let req = ExecuteRequest::single(step as u64, sim.time_of(step), CHANNEL, node, partition);
                    let mut rec = g.execute(&req)?;
                    rec.sim_ms = clock.sim_ms(sim_ms);
                    Ok(rec)
                })();
                match result {
                    Ok(r) => records.push(r),
                    Err(e) => fail(e.context(format!("step {step} rank {rank}"))),
                }
            }
            if let Some(mut g) = gateway {
                if let Err(e) = g.finalize() {
                    fail(anyhow::Error::from(e).context(format!("rank {rank}: finalize")));
                }
            }
            records
        }));
    }
    let mut records: Vec<TimingRecord> = Vec::new();
    for h in handles {
        records.extend(h.join().map_err(|_| anyhow!("rank thread panicked"))?);
    }
    let errors = std::mem::take(&mut *errors.lock().unwrap());
    if let Some(first) = errors.into_iter().next() {
        if let Some(r) = receiver {
            r.abandon();
        }
        return Err(first);
    }
    if let Some(r) = receiver {
        let received = r.join()?;
        for s in &received {
            for rec in records.iter_mut().filter(|r| r.step == s.step) {
                rec.render_ms = s.render_ms;
            }
        }
    }
    records.sort_by_key(|r| (r.step, r.rank));

    let csv_path = out_dir.join(TIMINGS_CSV);
    write_csv(&csv_path, &records)?;
    let report = RunReport::from_records(
        backend.as_str(),
        &cfg.pipeline_name,
        if clock.is_modeled() { "modeled" } else { "wall" },
        &cfg.workload_fingerprint(),
        &records,
    )?;
    let report_path = out_dir.join(REPORT_JSON);
    report.save(&report_path)?;
    log::info!("{}", report.describe());
    Ok(RunOutcome {
        report,
        records,
        csv_path,
        report_path,
    })
}

/// Reloads the CSV of a finished run.
pub fn load_records(out_dir: &Path) -> Result<Vec<TimingRecord>> {
    Ok(read_csv(&out_dir.join(TIMINGS_CSV))?)
}
