//! Scenario configuration, the preset library, runs and their artifacts.
//!
//! A run directory holds:
//!
//! * `manifest.json`: scenario, status, exit code, event log, verdicts
//! * `trajectory/index.csv` and `trajectory/sample_NNNNN.csv` (agent runs)
//! * `diagnostics.csv`: per-sample diagnostics (agent runs)
//! * `hydro/index.csv`, `hydro/sample_NNNNN.csv`, `hydro_diagnostics.csv`
//!   and `reconstruction_A.csv` (hydro runs)
//!
//! With an empty sample schedule only the manifest is written.

mod config;
mod presets;
mod sampler;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use config::{
    load_scenario, CouplingConfig, DensityProfile, FlockConfig, HydroConfig, HydroFlockConfig, KernelConfig, MassConfig,
    SampleSchedule, SamplerConfig, Scenario, UpscaleConfig, VelocityProfile, DIAGNOSTICS,
};
pub use presets::{preset, preset_library, preset_names, resolve};
pub use sampler::{initial_hydro, initial_state, NormalStream};

use crate::diagnostics::{
    collision_energy, compute_record, energy_law_residual, fit_decay_rate, odi_envelope, DiagnosticsRecord, OdiInitial,
    OdiModel,
};
use crate::dynamics::ModelParams;
use crate::hydro1d::{
    detect_blowup, profile_convergence, read_snapshot_csv, riccati_bound, run_hydro, threshold_verdict,
    write_reconstruction_csv, write_snapshot_csv, Frame, HydroFlock1D, HydroOutcome,
};
use crate::integrate::{integrate_partial, min_pair_distance, Event, EventKind, Run, StepStats, Termination};
use crate::mfstate::MultiFlockState;
use crate::upscale::{integrate_pairwise, predicted_hybrid_error, reduce_to_superagents, separation_report};
use crate::{Error, Result};

/// Command-line overrides applied on top of a scenario file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
    pub rtol: Option<f64>,
    pub atol: Option<f64>,
}

impl Scenario {
    /// Applies overrides and revalidates.
    pub fn with_overrides(mut self, o: &Overrides) -> Result<Self> {
        if let Some(seed) = o.seed {
            self.seed = Some(seed);
            self.flocks.iter_mut().for_each(|f| f.seed = None);
        }
        if let Some(dt) = o.dt {
            self.integrator.dt = dt;
        }
        if let Some(t) = o.t_end {
            self.integrator.t_end = t;
        }
        if let Some(r) = o.rtol {
            self.integrator.rtol = r;
        }
        if let Some(a) = o.atol {
            self.integrator.atol = a;
        }
        let problems = self.validate();
        if problems.is_empty() {
            Ok(self)
        } else {
            Err(Error::Validation(problems))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// A stop hook ended the run early.
    Stopped,
    /// Hydro run ended by finite-time blow-up of `e`.
    Blowup,
    /// Hydro characteristics crossed.
    OrderingLost,
    /// Solver failure: collision, divergence or invalid input.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub version: String,
    pub scenario: Value,
    pub threads: usize,
    pub status: RunStatus,
    pub exit_code: i32,
    pub error: Option<String>,
    pub events: Vec<Event>,
    pub stats: Option<StepStats>,
    pub samples: usize,
    pub verdicts: BTreeMap<String, Value>,
    pub files: Vec<String>,
    pub elapsed_seconds: f64,
}

impl Manifest {
    fn new(s: &Scenario, threads: usize) -> Self {
        Self {
            name: s.name.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            scenario: serde_json::to_value(s).unwrap_or(Value::Null),
            threads,
            status: RunStatus::Completed,
            exit_code: 0,
            error: None,
            events: Vec::new(),
            stats: None,
            samples: 0,
            verdicts: BTreeMap::new(),
            files: Vec::new(),
            elapsed_seconds: 0.0,
        }
    }

    fn fail(&mut self, e: &Error) {
        self.status = RunStatus::Failed;
        self.exit_code = 1;
        self.error = Some(e.to_string());
    }

    fn verdict(&mut self, key: &str, v: impl Serialize) {
        self.verdicts.insert(key.to_string(), serde_json::to_value(v).unwrap_or(Value::Null));
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let f = File::open(dir.join("manifest.json"))?;
        serde_json::from_reader(BufReader::new(f)).map_err(|e| Error::Io(format!("manifest.json: {e}")))
    }
}

/// Worker count: `--threads`, then `MULTIFLOCK_THREADS`, then rayon's default.
pub fn resolve_threads(requested: Option<usize>) -> usize {
    requested
        .or_else(|| std::env::var("MULTIFLOCK_THREADS").ok().and_then(|v| v.trim().parse().ok()))
        .filter(|&n| n > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Runs a validated scenario into `out`, writing the artifacts and the
/// manifest. Solver failures are recorded in the manifest (non-zero
/// `exit_code`); only I/O and configuration problems return `Err`.
pub fn run_scenario(s: &Scenario, out: &Path, threads: Option<usize>) -> Result<Manifest> {
    let threads = resolve_threads(threads);
    pool(threads)?.install(|| run_in(s, out, threads))
}

fn run_in(s: &Scenario, out: &Path, threads: usize) -> Result<Manifest> {
    let problems = s.validate();
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    fs::create_dir_all(out)?;
    let start = Instant::now();
    let mut m = Manifest::new(s, threads);
    let result = if s.is_hydro() { run_hydro_scenario(s, out, &mut m) } else { run_agents(s, out, &mut m) };
    if let Err(e) = result {
        if matches!(e, Error::Io(_)) {
            return Err(e);
        }
        m.fail(&e);
    }
    m.elapsed_seconds = start.elapsed().as_secs_f64();
    if let Some(budget) = s.budget_seconds {
        m.verdict("within_budget", m.elapsed_seconds <= budget);
    }
    m.files.sort();
    let f = File::create(out.join("manifest.json"))?;
    serde_json::to_writer_pretty(BufWriter::new(f), &m).map_err(|e| Error::Io(e.to_string()))?;
    Ok(m)
}

fn write_trajectory(dir: &Path, sub: &str, times: &[f64], mut each: impl FnMut(usize, &mut BufWriter<File>) -> Result<()>) -> Result<Vec<String>> {
    let tdir = dir.join(sub);
    fs::create_dir_all(&tdir)?;
    let mut files = Vec::with_capacity(times.len() + 1);
    let mut index = BufWriter::new(File::create(tdir.join("index.csv"))?);
    writeln!(index, "sample,time")?;
    for (k, t) in times.iter().enumerate() {
        let name = format!("sample_{k:05}.csv");
        writeln!(index, "{k},{t:e}")?;
        let mut w = BufWriter::new(File::create(tdir.join(&name))?);
        each(k, &mut w)?;
        w.flush()?;
        files.push(format!("{sub}/{name}"));
    }
    index.flush()?;
    files.push(format!("{sub}/index.csv"));
    Ok(files)
}

fn read_index(dir: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(dir.join("index.csv"))?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .nth(1)
                .and_then(|t| t.trim().parse().ok())
                .ok_or_else(|| Error::Invalid(format!("index.csv: malformed row '{l}'")))
        })
        .collect()
}

fn total_momentum(state: &MultiFlockState) -> (Vec<f64>, f64) {
    let d = state.dim;
    let mut p = vec![0.0; d];
    let mut scale = 0.0;
    for f in &state.flocks {
        let n = f.len();
        for i in 0..n {
            for (k, pk) in p.iter_mut().enumerate() {
                *pk += f.masses[i] * f.velocities[k * n + i];
                scale += f.masses[i] * f.velocities[k * n + i].abs();
            }
        }
    }
    (p, scale)
}

/// Largest relative drift of the total momentum `Σ m v` along a trajectory.
pub fn momentum_drift(trajectory: &[MultiFlockState]) -> f64 {
    let Some(first) = trajectory.first() else { return 0.0 };
    let (p0, scale) = total_momentum(first);
    let scale = scale.max(f64::MIN_POSITIVE);
    trajectory
        .iter()
        .map(|s| {
            let (p, _) = total_momentum(s);
            p.iter().zip(&p0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale
        })
        .fold(0.0, f64::max)
}

fn termination_status(t: &Termination, m: &mut Manifest) {
    match t {
        Termination::Completed => {}
        Termination::Stopped { reason, .. } => {
            m.status = RunStatus::Stopped;
            m.verdict("stop_reason", reason);
        }
        Termination::Failed(e) => m.fail(e),
    }
}

fn series(records: &[DiagnosticsRecord], f: impl Fn(&DiagnosticsRecord) -> f64) -> Vec<f64> {
    records.iter().map(f).collect()
}

fn agent_verdicts(s: &Scenario, params: &ModelParams, traj: &[MultiFlockState], records: &[DiagnosticsRecord], out: &Path, m: &mut Manifest) -> Result<()> {
    let Some(last) = records.last() else { return Ok(()) };
    m.verdict("momentum_drift", momentum_drift(traj));
    m.verdict("final_global_amplitude", last.global.amplitude);
    m.verdict("final_global_diameter", last.global.diameter);
    m.verdict("final_flock_amplitude", last.flocks.iter().map(|f| f.amplitude).collect::<Vec<_>>());
    let amp = series(records, |r| r.global.amplitude);
    let monotone = amp.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9) + 1e-14);
    m.verdict("global_amplitude_monotone", monotone);
    let times = series(records, |r| r.time);
    let wants = |d: &str| s.diagnostics.iter().any(|x| x == d);
    if wants("rates") {
        let mut rates = BTreeMap::new();
        for a in 0..last.flocks.len() {
            let dev = series(records, |r| r.flocks[a].max_deviation);
            rates.insert(format!("flock_{a}"), fit_or_message(fit_decay_rate(&times, &dev, None)));
        }
        if last.flocks.len() > 1 {
            rates.insert("global".into(), fit_or_message(fit_decay_rate(&times, &amp, None)));
        }
        m.verdict("rates", rates);
    }
    if wants("envelope") {
        let model = OdiModel::from_state(&traj[0], params);
        match odi_envelope(&model, &OdiInitial::from_record(&records[0]), &times) {
            Ok(env) => {
                let mut excess = 0.0f64;
                for (k, r) in records.iter().enumerate() {
                    for (a, f) in r.flocks.iter().enumerate() {
                        excess = excess.max(f.amplitude - env.flock_amplitude[a][k]);
                        excess = excess.max(f.diameter - env.flock_diameter[a][k]);
                    }
                    excess = excess.max(r.global.amplitude - env.amplitude[k]);
                    excess = excess.max(r.global.diameter - env.diameter[k]);
                }
                m.verdict("envelope_max_excess", excess);
                let mut w = BufWriter::new(File::create(out.join("envelope.csv"))?);
                write!(w, "time,amplitude,diameter")?;
                for a in 0..env.flock_amplitude.len() {
                    write!(w, ",amplitude_{a},diameter_{a}")?;
                }
                writeln!(w)?;
                for (k, t) in env.times.iter().enumerate() {
                    write!(w, "{t:e},{:e},{:e}", env.amplitude[k], env.diameter[k])?;
                    for a in 0..env.flock_amplitude.len() {
                        write!(w, ",{:e},{:e}", env.flock_amplitude[a][k], env.flock_diameter[a][k])?;
                    }
                    writeln!(w)?;
                }
                w.flush()?;
                m.files.push("envelope.csv".into());
            }
            Err(e) => m.verdict("envelope_error", e.to_string()),
        }
    }
    if wants("energy_law") {
        match energy_law_residual(traj, params) {
            Ok(res) => m.verdict("energy_law_max_residual", res.iter().map(|r| r.1.abs()).fold(0.0, f64::max)),
            Err(e) => m.verdict("energy_law_error", e.to_string()),
        }
    }
    if wants("collision_energy") {
        let mut min_ratio = vec![f64::INFINITY; traj[0].flocks.len()];
        let initial = min_pair_distance(&traj[0]);
        for st in traj {
            for (a, (d, _)) in min_pair_distance(st).iter().enumerate() {
                if initial[a].0 > 0.0 {
                    min_ratio[a] = min_ratio[a].min(d / initial[a].0);
                }
            }
        }
        m.verdict("min_pair_distance_ratio", min_ratio);
        let energies: Vec<Value> = (0..traj[0].flocks.len())
            .map(|a| match collision_energy(&traj[0], a) {
                Ok(ce) => json!(ce),
                Err(e) => json!(e.to_string()),
            })
            .collect();
        m.verdict("collision_energy", energies);
    }
    Ok(())
}

fn fit_or_message(r: Result<crate::diagnostics::RateEstimate>) -> Value {
    match r {
        Ok(e) => json!(e),
        Err(e) => json!(e.to_string()),
    }
}

fn run_agents(s: &Scenario, out: &Path, m: &mut Manifest) -> Result<()> {
    let params = s.model_params()?;
    let state0 = initial_state(s)?;
    let samples = s.sample_times();
    let wants_sep = s.diagnostics.iter().any(|d| d == "separation");
    let report = if (wants_sep || s.upscale.is_some()) && state0.flocks.len() > 1 {
        let (eta, th) = s.upscale.as_ref().map_or((1.0, crate::upscale::DEFAULT_THRESHOLD), |u| (u.eta, u.threshold));
        let r = separation_report(&state0, &params, eta, th)?;
        fs::write(out.join("separation.json"), r.to_json())?;
        m.files.push("separation.json".into());
        Some(r)
    } else {
        None
    };
    let run: Run = match &s.upscale {
        Some(u) => {
            let hybrid0 = reduce_to_superagents(&state0, &u.reduce, report.as_ref(), u.force)?;
            let predicted = predicted_hybrid_error(&state0, &params, &u.reduce, s.integrator.t_end);
            m.verdict("reduced_flocks", &u.reduce);
            m.verdict("predicted_hybrid_error", predicted);
            let hybrid = integrate_pairwise(&hybrid0, &params, &s.integrator, &samples)?;
            if u.compare_full {
                let full = integrate_pairwise(&state0, &params, &s.integrator, &samples)?;
                let err = hybrid_discrepancy(&hybrid.last, &full.last, &u.reduce);
                m.verdict("hybrid_error", err);
                m.verdict("hybrid_error_ratio", err / predicted.max(f64::MIN_POSITIVE));
            }
            hybrid
        }
        None => integrate_partial(&state0, &params, &s.integrator, &samples)?,
    };
    m.events = run.log.events.clone();
    m.stats = Some(run.stats);
    m.samples = run.trajectory.len();
    termination_status(&run.termination, m);
    if run.trajectory.is_empty() {
        return Ok(());
    }
    let times: Vec<f64> = run.trajectory.iter().map(|st| st.time).collect();
    let files = write_trajectory(out, "trajectory", &times, |k, w| run.trajectory[k].write_csv(w))?;
    m.files.extend(files);
    let records: Vec<DiagnosticsRecord> = run.trajectory.iter().map(|st| compute_record(st, &params)).collect();
    let mut w = BufWriter::new(File::create(out.join("diagnostics.csv"))?);
    crate::diagnostics::write_csv(&records, &mut w)?;
    w.flush()?;
    m.files.push("diagnostics.csv".into());
    agent_verdicts(s, &params, &run.trajectory, &records, out, m)
}

/// Largest velocity difference over the agents of the retained flocks.
fn hybrid_discrepancy(hybrid: &MultiFlockState, full: &MultiFlockState, reduced: &[usize]) -> f64 {
    let d = full.dim;
    let mut worst = 0.0f64;
    for (a, (h, f)) in hybrid.flocks.iter().zip(&full.flocks).enumerate() {
        if reduced.contains(&a) {
            continue;
        }
        let n = f.len();
        for i in 0..n {
            let dv: f64 = (0..d).map(|k| (h.velocities[k * n + i] - f.velocities[k * n + i]).powi(2)).sum();
            worst = worst.max(dv.sqrt());
        }
    }
    worst
}

fn hydro_row(flocks: &[HydroFlock1D]) -> (f64, f64, f64) {
    let mut min_e = f64::INFINITY;
    let mut max_e = f64::NEG_INFINITY;
    let mut sup_du = 0.0f64;
    for f in flocks {
        min_e = f.e.iter().copied().fold(min_e, f64::min);
        max_e = f.e.iter().copied().fold(max_e, f64::max);
        sup_du = f.velocity_gradient().iter().map(|x| x.abs()).fold(sup_du, f64::max);
    }
    (min_e, max_e, sup_du)
}

fn write_hydro_diagnostics(path: &Path, times: &[f64], snaps: &[Vec<HydroFlock1D>]) -> Result<(f64, f64)> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "time,min_e,max_e,sup_du")?;
    let count = snaps.first().map_or(0, |s| s.len());
    for a in 0..count {
        write!(w, ",mass_{a},center_{a},velocity_{a}")?;
    }
    writeln!(w)?;
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for (t, s) in times.iter().zip(snaps) {
        let (min_e, max_e, du) = hydro_row(s);
        lo = lo.min(min_e);
        hi = hi.max(du);
        write!(w, "{t:e},{min_e:e},{max_e:e},{du:e}")?;
        for f in s {
            write!(w, ",{:e},{:e},{:e}", f.mass(), f.center(), f.mean_velocity())?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok((lo, hi))
}

fn run_hydro_scenario(s: &Scenario, out: &Path, m: &mut Manifest) -> Result<()> {
    let params = s.model_params()?;
    let hydro = s.hydro.as_ref().ok_or_else(|| Error::Config("missing [hydro] table".into()))?;
    let flocks = initial_hydro(hydro)?;
    let verdict = threshold_verdict(&flocks, &params);
    m.verdict("threshold", &verdict);
    let run = run_hydro(&flocks, &params, &s.integrator, &s.sample_times(), Frame::Original)?;
    m.events = run.log.events.clone();
    m.stats = Some(run.stats);
    m.samples = run.times.len();
    match &run.outcome {
        HydroOutcome::Completed => {}
        HydroOutcome::Blowup { .. } => m.status = RunStatus::Blowup,
        HydroOutcome::OrderingLost { reason, .. } => {
            m.status = RunStatus::OrderingLost;
            m.verdict("stop_reason", reason);
        }
        HydroOutcome::Failed { message } => {
            m.status = RunStatus::Failed;
            m.exit_code = 1;
            m.error = Some(message.clone());
        }
    }
    m.verdict("outcome", &run.outcome);
    match detect_blowup(&run) {
        Some(b) => {
            m.events.push(Event {
                time: b.crossing_time,
                kind: EventKind::BlowupSuspected,
                payload: format!("min e = {:e}, extrapolated blowup time {:e}", b.crossing_value, b.blowup_time),
            });
            m.verdict("blowup", json!({
                "crossing_time": b.crossing_time,
                "blowup_time": b.blowup_time,
                "riccati_bound": riccati_bound(verdict.min_e, verdict.floor),
            }));
        }
        None => m.verdict("blowup", Value::Null),
    }
    if run.times.is_empty() {
        return Ok(());
    }
    let files = write_trajectory(out, "hydro", &run.times, |k, w| write_snapshot_csv(&run.snapshots[k], w))?;
    m.files.extend(files);
    let (min_e, sup_du) = write_hydro_diagnostics(&out.join("hydro_diagnostics.csv"), &run.times, &run.snapshots)?;
    m.files.push("hydro_diagnostics.csv".into());
    m.verdict("min_e", min_e);
    m.verdict("sup_du", sup_du);
    if s.diagnostics.iter().any(|d| d == "profile") && run.is_global() {
        match profile_convergence(&run) {
            Ok(pc) => {
                for (a, rec) in pc.limit.iter().enumerate() {
                    let name = format!("reconstruction_{a}.csv");
                    let mut w = BufWriter::new(File::create(out.join(&name))?);
                    write_reconstruction_csv(rec, &mut w)?;
                    w.flush()?;
                    m.files.push(name);
                }
                m.verdict("profile", json!({
                    "density_rate": pc.density_rate,
                    "du_rate": pc.du_rate,
                    "ddu_rate": pc.ddu_rate,
                }));
            }
            Err(e) => m.verdict("profile_error", e.to_string()),
        }
    }
    Ok(())
}

/// Summary produced by [`report`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub name: String,
    pub samples: usize,
    pub status: RunStatus,
    pub verdicts: BTreeMap<String, Value>,
}

/// Re-derives diagnostics from the trajectory stored in `run_dir` and writes
/// `report/diagnostics.csv` (agent runs) or `report/hydro_diagnostics.csv`
/// (hydro runs) plus `report/report.json`.
pub fn report(run_dir: &Path) -> Result<Report> {
    let manifest = Manifest::read(run_dir)?;
    let s: Scenario = serde_json::from_value(manifest.scenario.clone()).map_err(|e| Error::Config(format!("manifest scenario: {e}")))?;
    let params = s.model_params()?;
    let rdir = run_dir.join("report");
    fs::create_dir_all(&rdir)?;
    let mut verdicts = BTreeMap::new();
    let samples;
    if let Some(h) = &s.hydro {
        let template = initial_hydro(h)?;
        let hdir = run_dir.join("hydro");
        let times = if hdir.exists() { read_index(&hdir)? } else { Vec::new() };
        let snaps = (0..times.len())
            .map(|k| {
                let f = File::open(hdir.join(format!("sample_{k:05}.csv")))?;
                read_snapshot_csv(&template, BufReader::new(f))
            })
            .collect::<Result<Vec<_>>>()?;
        let (min_e, sup_du) = write_hydro_diagnostics(&rdir.join("hydro_diagnostics.csv"), &times, &snaps)?;
        if !times.is_empty() {
            verdicts.insert("min_e".into(), json!(min_e));
            verdicts.insert("sup_du".into(), json!(sup_du));
        }
        samples = times.len();
    } else {
        let mut template = initial_state(&s)?;
        if let Some(u) = &s.upscale {
            template = reduce_to_superagents(&template, &u.reduce, None, true)?;
        }
        let tdir = run_dir.join("trajectory");
        let times = if tdir.exists() { read_index(&tdir)? } else { Vec::new() };
        let mut traj = Vec::with_capacity(times.len());
        for (k, &t) in times.iter().enumerate() {
            let f = File::open(tdir.join(format!("sample_{k:05}.csv")))?;
            let mut st = MultiFlockState::read_csv(&template, BufReader::new(f))?;
            st.time = t;
            traj.push(st);
        }
        let records: Vec<DiagnosticsRecord> = traj.iter().map(|st| compute_record(st, &params)).collect();
        let mut w = BufWriter::new(File::create(rdir.join("diagnostics.csv"))?);
        crate::diagnostics::write_csv(&records, &mut w)?;
        w.flush()?;
        if let Some(last) = records.last() {
            verdicts.insert("momentum_drift".into(), json!(momentum_drift(&traj)));
            verdicts.insert("final_global_amplitude".into(), json!(last.global.amplitude));
            verdicts.insert("final_global_diameter".into(), json!(last.global.diameter));
            let times: Vec<f64> = records.iter().map(|r| r.time).collect();
            for a in 0..last.flocks.len() {
                let dev: Vec<f64> = records.iter().map(|r| r.flocks[a].max_deviation).collect();
                verdicts.insert(format!("rate_flock_{a}"), fit_or_message(fit_decay_rate(&times, &dev, None)));
            }
        }
        samples = times.len();
    }
    let rep = Report { name: s.name, samples, status: manifest.status, verdicts };
    let f = File::create(rdir.join("report.json"))?;
    serde_json::to_writer_pretty(BufWriter::new(f), &rep).map_err(|e| Error::Io(e.to_string()))?;
    Ok(rep)
}

/// Sets a dotted key (`coupling.epsilon`, `flocks.0.lambda`) in a TOML tree.
/// `literal` is parsed as a TOML value, falling back to a string.
pub fn set_key(tree: &mut toml::Value, key: &str, literal: &str) -> Result<()> {
    let value = toml::from_str::<toml::Table>(&format!("v = {literal}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(literal.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = tree;
    for (depth, part) in parts.iter().enumerate() {
        let last = depth + 1 == parts.len();
        cur = match cur {
            toml::Value::Table(t) => {
                if last {
                    t.insert(part.to_string(), value);
                    return Ok(());
                }
                t.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()))
            }
            toml::Value::Array(arr) => {
                let i: usize = part.parse().map_err(|_| Error::Config(format!("{key}: '{part}' is not an array index")))?;
                let len = arr.len();
                let slot = arr.get_mut(i).ok_or_else(|| Error::Config(format!("{key}: index {i} out of range ({len})")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(Error::Config(format!("{key}: '{part}' does not address a table or array"))),
        };
    }
    Err(Error::Config("empty key".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub value: String,
    pub dir: PathBuf,
    pub status: Option<RunStatus>,
    pub exit_code: i32,
    pub error: Option<String>,
}

fn sweep_dir_name(key: &str, value: &str) -> String {
    format!("{key}={value}").chars().map(|c| if c.is_ascii_alphanumeric() || "._=-".contains(c) { c } else { '_' }).collect()
}

/// Runs one scenario per value of `key`, in parallel, into
/// `out/<key>=<value>/`, and writes `out/sweep.json`.
pub fn sweep(s: &Scenario, key: &str, values: &[String], out: &Path, threads: Option<usize>) -> Result<Vec<SweepEntry>> {
    let base = toml::Value::try_from(s).map_err(|e| Error::Config(e.to_string()))?;
    let variants = values
        .iter()
        .map(|v| {
            let mut tree = base.clone();
            set_key(&mut tree, key, v)?;
            let text = toml::to_string(&tree).map_err(|e| Error::Config(e.to_string()))?;
            Scenario::from_toml(&text)
        })
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(out)?;
    let threads = resolve_threads(threads);
    let entries: Vec<SweepEntry> = pool(threads)?.install(|| {
        variants
            .par_iter()
            .zip(values.par_iter())
            .map(|(sc, v)| {
                let dir = out.join(sweep_dir_name(key, v));
                match run_in(sc, &dir, threads) {
                    Ok(m) => SweepEntry { value: v.clone(), dir, status: Some(m.status), exit_code: m.exit_code, error: m.error },
                    Err(e) => SweepEntry { value: v.clone(), dir, status: None, exit_code: 1, error: Some(e.to_string()) },
                }
            })
            .collect()
    });
    let f = File::create(out.join("sweep.json"))?;
    serde_json::to_writer_pretty(BufWriter::new(f), &entries).map_err(|e| Error::Io(e.to_string()))?;
    Ok(entries)
}
