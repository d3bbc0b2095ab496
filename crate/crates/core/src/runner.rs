//! Config-driven runs and run-directory comparison.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::accel::{run_accelerated, AcceleratedExit, StateToStateTrajectory};
use crate::config::{MethodSpec, Mode, RunConfig};
use crate::oracle::stats::{chi_square_two_sample, ks_two_sample, mean, std_error, TestResult};
use crate::rng::StreamId;
use crate::splice::run_parsplice;
use crate::{Error, Result};

pub const EVENTS_FILE: &str = "events.csv";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
}

/// In-memory results of one run; nothing touches the disk until [`write_run`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub events_csv: String,
    pub trajectory_csv: String,
    pub summary: Value,
}

struct Row {
    state: u64,
    next_state: u64,
    region: usize,
    time: f64,
    steps: u64,
    wall_steps: u64,
    factor: f64,
    complete: bool,
    exit_point: Vec<f64>,
}

fn csv_text(header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(header).map_err(to_io)?;
    for r in rows {
        w.write_record(&r).map_err(to_io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn events_csv(rows: &[Row], dim: Option<usize>) -> Result<String> {
    let mut header: Vec<String> =
        ["index", "state", "next_state", "region", "time", "steps", "wall_steps", "factor", "complete"]
            .iter()
            .map(|s| s.to_string())
            .collect();
    if let Some(d) = dim {
        header.extend((0..d).map(|i| format!("x{i}")));
    }
    csv_text(
        &header,
        rows.iter().enumerate().map(|(k, r)| {
            let mut v = vec![
                k.to_string(),
                r.state.to_string(),
                r.next_state.to_string(),
                r.region.to_string(),
                r.time.to_string(),
                r.steps.to_string(),
                r.wall_steps.to_string(),
                r.factor.to_string(),
                u8::from(r.complete).to_string(),
            ];
            if dim.is_some() {
                v.extend(r.exit_point.iter().map(f64::to_string));
            }
            v
        }),
    )
}

fn trajectory_csv(traj: Option<&StateToStateTrajectory>) -> Result<String> {
    let header: Vec<String> = ["t_start", "t_end", "state", "steps"].iter().map(|s| s.to_string()).collect();
    let mut t = 0.0;
    let rows: Vec<Vec<String>> = traj
        .map(|tr| {
            tr.residences
                .iter()
                .map(|r| {
                    let start = t;
                    t += r.residence_time;
                    vec![start.to_string(), t.to_string(), r.state.0.to_string(), r.residence_steps.to_string()]
                })
                .collect()
        })
        .unwrap_or_default();
    csv_text(&header, rows.into_iter())
}

fn summarize(cfg: &RunConfig, seed: u64, rows: &[Row], extra: Value) -> Value {
    let done: Vec<&Row> = rows.iter().filter(|r| r.complete).collect();
    let times: Vec<f64> = done.iter().map(|r| r.time).collect();
    let mut regions: BTreeMap<String, u64> = BTreeMap::new();
    for r in &done {
        *regions.entry(r.region.to_string()).or_default() += 1;
    }
    let steps: u64 = rows.iter().map(|r| r.steps).sum();
    let wall: u64 = rows.iter().map(|r| r.wall_steps).sum();
    let mut v = json!({
        "method": cfg.method.name(),
        "mode": cfg.run.mode,
        "seed": seed,
        "beta": cfg.dynamics.beta,
        "dt": cfg.dynamics.dt,
        "n_complete": done.len(),
        "mean_time": if times.is_empty() { Value::Null } else { json!(mean(&times)) },
        "std_error": if times.len() < 2 { Value::Null } else { json!(std_error(&times)) },
        "physical_steps": steps,
        "physical_time": steps as f64 * cfg.dynamics.dt,
        "wall_steps": wall,
        "mean_factor": if rows.is_empty() { Value::Null } else { json!(rows.iter().map(|r| r.factor).sum::<f64>() / rows.len() as f64) },
        "region_counts": regions,
    });
    if let (Value::Object(m), Value::Object(e)) = (&mut v, extra) {
        m.extend(e);
    }
    v
}

fn exit_row(e: &AcceleratedExit) -> Row {
    Row {
        state: e.event.from.0,
        next_state: e.event.to.0,
        region: e.event.region_label,
        time: e.event.exit_time,
        steps: e.residence_steps,
        wall_steps: e.wall_steps,
        factor: e.factor,
        complete: true,
        exit_point: e.event.exit_point.clone(),
    }
}

fn residence_rows(traj: &StateToStateTrajectory, last_open: bool) -> Vec<Row> {
    let n = traj.residences.len();
    traj.residences
        .iter()
        .enumerate()
        .map(|(k, r)| Row {
            state: r.state.0,
            next_state: r.next_state.0,
            region: r.exit_region,
            time: r.residence_time,
            steps: r.residence_steps,
            wall_steps: r.wall_steps,
            factor: r.factor,
            complete: !(last_open && k + 1 == n),
            exit_point: Vec::new(),
        })
        .collect()
}

/// Run a validated config on the current rayon pool.
pub fn execute(cfg: &RunConfig, seed: u64) -> Result<RunArtifacts> {
    let sys = cfg.system()?;
    let start = &cfg.run.start;
    let state = sys.classify(start)?;
    if state.is_outside() {
        return Err(Error::Config(format!("run.start: {start:?} belongs to no state")));
    }
    let stream = StreamId::new(seed, 0);
    let max_steps = cfg.run.max_steps;
    match cfg.run.mode {
        Mode::Events => {
            let method = cfg.method.accel().expect("validated: events mode excludes splice");
            let n = cfg.run.n_events.expect("validated");
            let exits: Vec<AcceleratedExit> = (0..n as u64)
                .into_par_iter()
                .map(|k| method.exit(&sys, state, start, stream.child(k), max_steps))
                .collect::<Result<_>>()?;
            let rows: Vec<Row> = exits.iter().map(exit_row).collect();
            let parallel: u64 = exits.iter().map(|e| e.parallel_steps).sum();
            Ok(RunArtifacts {
                events_csv: events_csv(&rows, Some(start.len()))?,
                trajectory_csv: trajectory_csv(None)?,
                summary: summarize(cfg, seed, &rows, json!({ "parallel_steps": parallel })),
            })
        }
        Mode::Trajectory => {
            let horizon = cfg.run.horizon.expect("validated");
            let (traj, extra, open) = match &cfg.method {
                MethodSpec::Splice(sc) => {
                    let (traj, _, stats) = run_parsplice(&sys, state, sc, horizon, stream, max_steps)?;
                    (traj, json!({ "splice": stats }), true)
                }
                other => {
                    let method = other.accel().expect("non-splice method");
                    (run_accelerated(&sys, &method, start, horizon, stream, max_steps)?, json!({}), false)
                }
            };
            let rows = residence_rows(&traj, open);
            let mut extra = extra;
            extra["clock"] = json!(traj.clock);
            Ok(RunArtifacts {
                events_csv: events_csv(&rows, None)?,
                trajectory_csv: trajectory_csv(Some(&traj))?,
                summary: summarize(cfg, seed, &rows, extra),
            })
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Serialize)]
struct Manifest<'a> {
    config_sha256: String,
    seed: u64,
    workers: usize,
    version: &'a str,
    files: BTreeMap<&'a str, String>,
}

/// Write all artifacts into `out`; each file goes through a temporary name.
pub fn write_run(out: &Path, config_text: &str, seed: u64, workers: usize, art: &RunArtifacts) -> Result<()> {
    fs::create_dir_all(out)?;
    let summary = serde_json::to_string_pretty(&art.summary).map_err(std::io::Error::from)? + "\n";
    let files: [(&str, &str); 4] = [
        (CONFIG_FILE, config_text),
        (EVENTS_FILE, &art.events_csv),
        (TRAJECTORY_FILE, &art.trajectory_csv),
        (SUMMARY_FILE, &summary),
    ];
    let manifest = Manifest {
        config_sha256: sha256_hex(config_text.as_bytes()),
        seed,
        workers,
        version: env!("CARGO_PKG_VERSION"),
        files: files.iter().map(|(n, c)| (*n, sha256_hex(c.as_bytes()))).collect(),
    };
    let manifest = serde_json::to_string_pretty(&manifest).map_err(std::io::Error::from)? + "\n";
    for (name, content) in files.iter().chain(std::iter::once(&(MANIFEST_FILE, manifest.as_str()))) {
        let tmp = out.join(format!(".{name}.tmp"));
        fs::write(&tmp, content)?;
        fs::rename(&tmp, out.join(name))?;
    }
    Ok(())
}

/// Parse, run and write. Returns the output directory.
pub fn run_config_text(config_text: &str, ov: &Overrides) -> Result<PathBuf> {
    let cfg = RunConfig::parse(config_text)?;
    let seed = ov.seed.unwrap_or(cfg.seed);
    let workers = ov.workers.or(cfg.workers).unwrap_or_else(rayon::current_num_threads);
    if workers == 0 {
        return Err(Error::Config("workers: must be positive".into()));
    }
    let out = ov
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| Error::Config("out: no output directory (set `out` or pass --out)".into()))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("workers: {e}")))?;
    let art = pool.install(|| execute(&cfg, seed))?;
    write_run(&out, config_text, seed, workers, &art)?;
    Ok(out)
}

pub fn run_config_file(path: &Path, ov: &Overrides) -> Result<PathBuf> {
    let text = fs::read_to_string(path)?;
    run_config_text(&text, ov)
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub n_a: usize,
    pub n_b: usize,
    pub alpha: f64,
    pub residence_ks: TestResult,
    pub region_chi_square: Option<TestResult>,
    pub region_note: Option<String>,
    pub pass: bool,
}

struct EventTable {
    header: Vec<String>,
    times: Vec<f64>,
    regions: Vec<usize>,
}

fn read_events(dir: &Path) -> Result<EventTable> {
    let path = dir.join(EVENTS_FILE);
    let mut rd = csv::Reader::from_path(&path).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = rd
        .headers()
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("{}: missing column `{name}`", path.display())))
    };
    let (ct, cr, cc) = (col("time")?, col("region")?, col("complete")?);
    let mut times = Vec::new();
    let mut regions = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let bad = |what: &str| Error::Schema(format!("{}: record {}: bad {what}", path.display(), line + 1));
        if field(cc) != "1" {
            continue;
        }
        times.push(field(ct).parse::<f64>().map_err(|_| bad("time"))?);
        regions.push(field(cr).parse::<usize>().map_err(|_| bad("region"))?);
    }
    Ok(EventTable { header, times, regions })
}

/// Two-sample KS on residence times and chi-square homogeneity on exit regions.
pub fn compare_dirs(a: &Path, b: &Path, alpha: f64) -> Result<CompareReport> {
    let ta = read_events(a)?;
    let tb = read_events(b)?;
    if ta.header != tb.header {
        return Err(Error::Schema(format!("event columns differ: {:?} vs {:?}", ta.header, tb.header)));
    }
    let residence_ks = ks_two_sample(&ta.times, &tb.times)?;
    let k = ta.regions.iter().chain(&tb.regions).max().map_or(0, |m| m + 1);
    let count = |r: &[usize]| {
        let mut c = vec![0u64; k];
        r.iter().for_each(|&i| c[i] += 1);
        c
    };
    let (region_chi_square, region_note) = match chi_square_two_sample(&count(&ta.regions), &count(&tb.regions)) {
        Ok(t) => (Some(t), None),
        Err(Error::TestInapplicable(m)) => (None, Some(m)),
        Err(e) => return Err(e),
    };
    let pass = residence_ks.passes(alpha) && region_chi_square.is_none_or(|t| t.passes(alpha));
    Ok(CompareReport {
        n_a: ta.times.len(),
        n_b: tb.times.len(),
        alpha,
        residence_ks,
        region_chi_square,
        region_note,
        pass,
    })
}
