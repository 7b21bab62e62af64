//! Reproducible experiments over `qnls-core`: argument parsing, JSON
//! configuration, CSV outputs, per-run manifests and the summary report.

// negated comparisons are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use qnls_core::bilinear::{self, BilinearLemma, EstimateParams, JIndex, PairBox, Placement, SweepOptions};
use qnls_core::boundary::{trace_check, ForcingSpec};
use qnls_core::dispersion;
use qnls_core::fractional::TimeSeries;
use qnls_core::ibvp::{
    self, contraction_iterate, manufactured_exact, mass_identity_residual, simulate, ForcingMode, RegularityQuery,
    SolverConfig,
};
use qnls_core::spectral::GridFunction;
use qnls_core::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// Exit statuses of [`run`].
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONTRACT: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("no manifest found in {0}")]
    EmptyDirectory(PathBuf),
    #[error(transparent)]
    Core(#[from] qnls_core::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::InvalidConfig(_) => EXIT_USAGE,
            _ => EXIT_CONTRACT,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "qnls", version, about = "Numerical experiments for the coupled quadratic Schrödinger system")]
pub struct Cli {
    /// JSON file with the experiment parameters.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "qnls-out")]
    pub out: PathBuf,
    /// Worker threads.
    #[arg(long, global = true, env = "QNLS_JOBS")]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: CommandLine,
}

#[derive(Debug, Subcommand)]
pub enum CommandLine {
    Simulate,
    MassTrack,
    VerifyBilinear,
    JSweep,
    TraceCheck,
    DispersionSweep,
    RegionMap,
    Contraction,
    /// Summarise the manifests of a results directory.
    Report { dir: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    MassTrack,
    VerifyBilinear,
    JSweep,
    TraceCheck,
    DispersionSweep,
    RegionMap,
    Contraction,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::MassTrack => "mass-track",
            Command::VerifyBilinear => "verify-bilinear",
            Command::JSweep => "j-sweep",
            Command::TraceCheck => "trace-check",
            Command::DispersionSweep => "dispersion-sweep",
            Command::RegionMap => "region-map",
            Command::Contraction => "contraction",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub command: Command,
    pub params: Value,
    pub seed: u64,
    pub out_dir: PathBuf,
}

/// A declared check of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contract {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl Contract {
    fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Contract {
            name: name.into(),
            value,
            threshold,
            pass: value <= threshold,
        }
    }

    fn below(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Contract {
            name: name.into(),
            value,
            threshold,
            pass: value < threshold,
        }
    }

    fn at_least(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Contract {
            name: name.into(),
            value,
            threshold,
            pass: value >= threshold,
        }
    }

    fn holds(name: impl Into<String>, ok: bool) -> Self {
        Contract {
            name: name.into(),
            value: ok as u8 as f64,
            threshold: 1.0,
            pass: ok,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: Value,
    pub outputs: Vec<String>,
    pub contracts: Vec<Contract>,
    pub status: String,
    pub wall_time_s: f64,
}

/// Result of a completed experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.manifest.status == "pass"
    }
}

struct Artifacts {
    config: Value,
    files: Vec<(String, Vec<u8>)>,
    contracts: Vec<Contract>,
}

fn parse_params<T: DeserializeOwned + Serialize>(params: &Value) -> CliResult<(T, Value)> {
    let p: T = serde_json::from_value(params.clone()).map_err(|e| CliError::InvalidConfig(e.to_string()))?;
    let echo = serde_json::to_value(&p).map_err(|e| CliError::InvalidConfig(e.to_string()))?;
    Ok((p, echo))
}

fn csv_bytes<F: FnOnce(&mut Vec<u8>) -> qnls_core::Result<()>>(f: F) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn write_rows(header: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out.into_bytes()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Pulse {
    pub amp: f64,
    pub x0: f64,
    pub width: f64,
    /// Carrier wavenumber.
    pub k: f64,
    /// Constant phase in radians.
    pub phase: f64,
}

impl Default for Pulse {
    fn default() -> Self {
        Pulse {
            amp: 0.5,
            x0: 10.0,
            width: 1.0,
            k: 0.0,
            phase: 0.0,
        }
    }
}

impl Pulse {
    fn sample(&self, cfg: &SolverConfig) -> CliResult<GridFunction> {
        let p = *self;
        Ok(GridFunction::from_fn(0.0, cfg.dx(), cfg.nx, |x| {
            Complex64::from_polar(p.amp * (-((x - p.x0) / p.width).powi(2)).exp(), p.k * x + p.phase)
        })?)
    }
}

/// Boundary datum `(re + i·im)(t/T)²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Ramp {
    pub re: f64,
    pub im: f64,
}

impl Ramp {
    fn is_zero(&self) -> bool {
        self.re == 0.0 && self.im == 0.0
    }

    fn series(&self, t_end: f64, n: usize) -> CliResult<TimeSeries> {
        let c = Complex64::new(self.re, self.im);
        Ok(TimeSeries::on_interval(t_end, n, |t| c * (t / t_end).powi(2))?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateParams {
    pub solver: SolverConfig,
    pub u0: Pulse,
    pub v0: Pulse,
    pub f: Ramp,
    pub g: Ramp,
    pub drift_tol: f64,
}

impl Default for SimulateParams {
    fn default() -> Self {
        SimulateParams {
            solver: SolverConfig {
                length: 60.0,
                nx: 1024,
                dt: 1e-3,
                t_end: 2.0,
                snapshot_every: 250,
                ..Default::default()
            },
            u0: Pulse {
                amp: 0.8,
                x0: 30.0,
                k: 0.5,
                ..Default::default()
            },
            v0: Pulse {
                amp: 0.6,
                x0: 31.0,
                k: -0.5,
                ..Default::default()
            },
            f: Ramp::default(),
            g: Ramp::default(),
            drift_tol: 1e-6,
        }
    }
}

fn run_simulation(p: &SimulateParams, cfg: &SolverConfig) -> CliResult<ibvp::Simulation> {
    let n = cfg.steps() + 1;
    let (u0, v0) = if cfg.forcing_mode == ForcingMode::Manufactured {
        let w = GridFunction::from_fn(0.0, cfg.dx(), cfg.nx, |x| manufactured_exact(x, 0.0).0)?;
        (w.clone(), w)
    } else {
        (p.u0.sample(cfg)?, p.v0.sample(cfg)?)
    };
    let f = p.f.series(cfg.t_end, n)?;
    let g = p.g.series(cfg.t_end, n)?;
    Ok(simulate(cfg, &u0, &v0, &f, &g)?)
}

fn exp_simulate(params: &Value) -> CliResult<Artifacts> {
    let (p, config): (SimulateParams, _) = parse_params(params)?;
    let cfg = p.solver;
    let sim = run_simulation(&p, &cfg)?;
    let mut contracts = vec![
        Contract::holds("ledger entries finite", sim.ledger.residual.iter().all(|r| r.is_finite())),
        Contract::holds("validity window (no mass near x = L)", !sim.reflection_risk),
    ];
    let manufactured = cfg.forcing_mode == ForcingMode::Manufactured;
    if !manufactured && p.f.is_zero() && p.g.is_zero() {
        let m = &sim.ledger.mass;
        let worst = m.iter().map(|x| (x - m[0]).abs()).fold(0.0, f64::max);
        let rate = if m[0] > 0.0 { worst / m[0] / cfg.t_end } else { 0.0 };
        contracts.push(Contract::at_most("mass drift per unit time", rate, p.drift_tol));
    } else {
        let r = mass_identity_residual(&sim.ledger)?;
        contracts.push(Contract::at_most("mass identity residual", r, 1.0));
    }
    if manufactured {
        let last = sim.last();
        let e: f64 = (0..cfg.nx)
            .map(|i| {
                let (eu, ev) = manufactured_exact(last.u.x(i), last.t);
                (last.u.samples()[i] - eu).norm_sqr() + (last.v.samples()[i] - ev).norm_sqr()
            })
            .sum();
        contracts.push(Contract::at_most("manufactured L2 error", (e * cfg.dx()).sqrt(), 1e-2));
    }
    Ok(Artifacts {
        config,
        files: vec![
            ("simulate.trajectory.csv".into(), csv_bytes(|b| sim.write_csv(b))?),
            ("simulate.ledger.csv".into(), csv_bytes(|b| sim.ledger.write_csv(b))?),
        ],
        contracts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MassTrackParams {
    /// Coarsest level; each further level halves dx and dt.
    pub solver: SolverConfig,
    pub levels: usize,
    pub u0: Pulse,
    pub v0: Pulse,
    pub f: Ramp,
    pub g: Ramp,
    pub min_factor: f64,
}

impl Default for MassTrackParams {
    fn default() -> Self {
        MassTrackParams {
            solver: SolverConfig {
                nx: 257,
                dt: 4e-3,
                t_end: 0.5,
                ..Default::default()
            },
            levels: 3,
            u0: Pulse {
                x0: 6.0,
                ..Default::default()
            },
            v0: Pulse {
                x0: 7.0,
                ..Default::default()
            },
            f: Ramp { re: 1.0, im: 0.0 },
            g: Ramp { re: 0.0, im: -0.5 },
            min_factor: 3.0,
        }
    }
}

fn exp_mass_track(params: &Value) -> CliResult<Artifacts> {
    let (p, config): (MassTrackParams, _) = parse_params(params)?;
    if p.levels < 2 {
        return Err(CliError::InvalidConfig("mass-track needs at least two levels".into()));
    }
    let sim_params = SimulateParams {
        solver: p.solver,
        u0: p.u0,
        v0: p.v0,
        f: p.f,
        g: p.g,
        ..Default::default()
    };
    let mut rows = Vec::new();
    let mut residuals = Vec::new();
    let mut finest = None;
    for level in 0..p.levels {
        let k = 1usize << level;
        let cfg = SolverConfig {
            nx: (p.solver.nx - 1) * k + 1,
            dt: p.solver.dt / k as f64,
            ..p.solver
        };
        let sim = run_simulation(&sim_params, &cfg)?;
        let r = mass_identity_residual(&sim.ledger)?;
        let factor = residuals.last().map(|prev: &f64| prev / r);
        rows.push(vec![
            level.to_string(),
            cfg.nx.to_string(),
            format!("{:.6e}", cfg.dt),
            format!("{r:.6e}"),
            factor.map(|q| format!("{q:.4}")).unwrap_or_default(),
        ]);
        residuals.push(r);
        finest = Some(sim);
    }
    let sim = finest.expect("at least two levels");
    let contracts = residuals
        .windows(2)
        .enumerate()
        .map(|(j, w)| Contract::at_least(format!("residual reduction, level {j} to {}", j + 1), w[0] / w[1], p.min_factor))
        .collect();
    Ok(Artifacts {
        config,
        files: vec![
            (
                "mass-track.csv".into(),
                write_rows(&["level", "Nx", "dt", "residual", "factor"], &rows),
            ),
            ("mass-track.ledger.csv".into(), csv_bytes(|b| sim.ledger.write_csv(b))?),
        ],
        contracts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BilinearParams {
    pub a: f64,
    pub b: f64,
    pub d: f64,
    pub kappa: f64,
    pub s: f64,
    pub pairs: usize,
    /// Coarse `(nx, nt)`; the check doubles both.
    pub grid: (usize, usize),
    pub lemmas: Vec<String>,
    pub placement: String,
    pub max_change: f64,
}

impl Default for BilinearParams {
    fn default() -> Self {
        BilinearParams {
            a: 0.25,
            b: 0.4,
            d: 0.4,
            kappa: 0.0,
            s: 0.0,
            pairs: 100,
            grid: (64, 64),
            lemmas: vec!["L5.1".into(), "L5.2".into()],
            placement: "usage".into(),
            max_change: 0.2,
        }
    }
}

fn exp_verify_bilinear(params: &Value, seed: u64) -> CliResult<Artifacts> {
    let (p, config): (BilinearParams, _) = parse_params(params)?;
    let est = EstimateParams::new(p.a, p.b, p.d, p.kappa, p.s)?;
    let placement = match p.placement.as_str() {
        "usage" => Placement::Usage,
        "stated" => Placement::Stated,
        other => return Err(CliError::InvalidConfig(format!("unknown placement {other:?}"))),
    };
    let lemmas = p
        .lemmas
        .iter()
        .map(|l| BilinearLemma::parse(l).ok_or_else(|| CliError::InvalidConfig(format!("unknown lemma {l:?}"))))
        .collect::<CliResult<Vec<_>>>()?;
    let bx = PairBox::default();
    let (nx, nt) = p.grid;
    let mut rows = Vec::new();
    let mut contracts = Vec::new();
    for which in lemmas {
        let coarse = bilinear::max_random_ratio(seed, p.pairs, (nx, nt), &bx, &est, which, placement)?;
        let fine = bilinear::max_random_ratio(seed, p.pairs, (2 * nx, 2 * nt), &bx, &est, which, placement)?;
        for (g, r) in [((nx, nt), coarse), ((2 * nx, 2 * nt), fine)] {
            rows.push(vec![
                which.name().to_string(),
                g.0.to_string(),
                g.1.to_string(),
                format!("{r:.10e}"),
            ]);
        }
        contracts.push(Contract::below(
            format!("{} max ratio change under grid doubling", which.name()),
            (fine / coarse - 1.0).abs(),
            p.max_change,
        ));
    }
    Ok(Artifacts {
        config,
        files: vec![(
            "verify-bilinear.csv".into(),
            write_rows(&["lemma", "nx", "nt", "max_ratio"], &rows),
        )],
        contracts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JSweepParams {
    pub a: f64,
    pub b: f64,
    pub d: f64,
    pub kappa: f64,
    pub s: f64,
    pub radii: Vec<f64>,
    pub indices: Vec<String>,
    pub nodes: usize,
    pub band_factor: Option<f64>,
    pub max_variation: f64,
}

impl Default for JSweepParams {
    fn default() -> Self {
        JSweepParams {
            a: 0.25,
            b: 0.4,
            d: 0.4,
            kappa: 0.0,
            s: 0.0,
            radii: vec![10.0, 20.0, 40.0],
            indices: ["J1", "J2", "J3", "J4", "J5", "J6"].iter().map(|s| s.to_string()).collect(),
            nodes: SweepOptions::default().nodes,
            band_factor: None,
            max_variation: 0.1,
        }
    }
}

fn exp_j_sweep(params: &Value) -> CliResult<Artifacts> {
    let (p, config): (JSweepParams, _) = parse_params(params)?;
    let est = EstimateParams::new(p.a, p.b, p.d, p.kappa, p.s)?;
    if p.radii.len() < 2 {
        return Err(CliError::InvalidConfig("j-sweep needs at least two radii".into()));
    }
    let opts = SweepOptions {
        nodes: p.nodes,
        band_factor: p.band_factor,
    };
    let mut all = Vec::new();
    let mut contracts = Vec::new();
    for name in &p.indices {
        let index = JIndex::parse(name).ok_or_else(|| CliError::InvalidConfig(format!("unknown index {name:?}")))?;
        let rows = bilinear::j_sup_sweep(index, &est, &p.radii, opts)?;
        let sups: Vec<f64> = rows.iter().map(|r| r.sup).collect();
        if p.band_factor.is_some() {
            let grows = sups.windows(2).all(|w| w[1] > w[0]);
            contracts.push(Contract::holds(format!("{} sup grows with R under truncation", index.name()), grows));
        } else {
            let n = sups.len();
            let (x, y) = (sups[n - 2], sups[n - 1]);
            let var = if x.max(y) > 0.0 { (y - x).abs() / x.max(y) } else { 0.0 };
            contracts.push(Contract::below(
                format!("{} sup variation between the last two radii", index.name()),
                var,
                p.max_variation,
            ));
        }
        all.extend(rows);
    }
    Ok(Artifacts {
        config,
        files: vec![("j-sweep.csv".into(), csv_bytes(|b| bilinear::write_sweep_csv(&all, b))?)],
        contracts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceParams {
    pub a: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Samples of the boundary datum on `[0, t_end]`.
    pub n: usize,
    pub t_end: f64,
}

impl Default for TraceParams {
    fn default() -> Self {
        TraceParams {
            a: vec![0.25, 0.5, 1.0, 2.0],
            lambda: vec![0.0],
            n: 4096,
            t_end: 1.0,
        }
    }
}

fn exp_trace_check(params: &Value) -> CliResult<Artifacts> {
    let (p, config): (TraceParams, _) = parse_params(params)?;
    let t_end = p.t_end;
    let bump = |t: f64| {
        let u = (t - 0.5 * t_end) / (0.4 * t_end);
        if u.abs() >= 1.0 {
            0.0
        } else {
            (1.0 - 1.0 / (1.0 - u * u)).exp()
        }
    };
    let mut rows = Vec::new();
    let mut contracts = Vec::new();
    for &lambda in &p.lambda {
        let mut phases = Vec::new();
        for &a in &p.a {
            let f = TimeSeries::on_interval(t_end, p.n, |t| Complex64::new(bump(t), 0.0))?;
            let rep = trace_check(&ForcingSpec::new(a, lambda, f)?)?;
            let tol = if lambda == 0.0 { 5e-3 } else { 1e-2 };
            contracts.push(Contract::below(format!("trace residual a={a} lambda={lambda}"), rep.residual, tol));
            rows.push(vec![
                format!("{a}"),
                format!("{lambda}"),
                rep.branch.clone(),
                format!("{:.6e}", rep.residual),
                rep.phase_selected.clone(),
                format!("{:.6e}", rep.residual_other_phase),
                format!("{:.6e}", rep.residual_sqrt_a),
            ]);
            phases.push(rep.phase_selected);
        }
        if lambda != 0.0 {
            let same = phases.windows(2).all(|w| w[0] == w[1]);
            contracts.push(Contract::holds(format!("winning phase consistent across a, lambda={lambda}"), same));
        }
    }
    Ok(Artifacts {
        config,
        files: vec![(
            "trace-check.csv".into(),
            write_rows(
                &[
                    "a",
                    "lambda",
                    "branch",
                    "residual",
                    "phase_selected",
                    "residual_other_phase",
                    "residual_sqrt_a",
                ],
                &rows,
            ),
        )],
        contracts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DispersionParams {
    pub a: Vec<f64>,
    pub samples: usize,
}

impl Default for DispersionParams {
    fn default() -> Self {
        DispersionParams {
            a: vec![0.1, 0.25, 0.4, 0.75, 1.0, 2.0, 5.0],
            samples: 100_000,
        }
    }
}

fn exp_dispersion_sweep(params: &Value, seed: u64) -> CliResult<Artifacts> {
    let (p, config): (DispersionParams, _) = parse_params(params)?;
    let rows = p
        .a
        .iter()
        .enumerate()
        .map(|(k, &a)| dispersion::dispersion_sweep(a, p.samples, seed.wrapping_add(k as u64)))
        .collect::<qnls_core::Result<Vec<_>>>()?;
    let contracts = rows
        .iter()
        .map(|r| Contract::at_most(format!("lower bound violations a={}", r.a), r.violations as f64, 0.0))
        .collect();
    Ok(Artifacts {
        config,
        files: vec![(
            "dispersion-sweep.csv".into(),
            csv_bytes(|b| dispersion::write_sweep_csv(&rows, b))?,
        )],
        contracts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionParams {
    pub a: f64,
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for RegionParams {
    fn default() -> Self {
        RegionParams {
            a: 1.0,
            lo: -1.0,
            hi: 1.0,
            step: 0.05,
        }
    }
}

fn exp_region_map(params: &Value) -> CliResult<Artifacts> {
    let (p, config): (RegionParams, _) = parse_params(params)?;
    if !(p.a > 0.0) {
        return Err(CliError::InvalidConfig(format!("a must be positive, got {}", p.a)));
    }
    let mut buf = Vec::new();
    let count = ibvp::write_region_map(&mut buf, p.a, p.lo, p.hi, p.step)?;
    let (origin, _) = ibvp::regularity_region(RegularityQuery {
        kappa: 0.0,
        s: 0.0,
        a: p.a,
    });
    Ok(Artifacts {
        config,
        files: vec![("region-map.csv".into(), buf)],
        contracts: vec![
            Contract::holds("(0, 0) admissible", origin),
            Contract::at_least("admissible lattice points", count as f64, 1.0),
        ],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContractionParams {
    pub solver: SolverConfig,
    pub u0: Pulse,
    pub v0: Pulse,
    pub f: Ramp,
    pub g: Ramp,
    pub lambda1: f64,
    pub lambda2: f64,
    pub iters: usize,
    pub max_ratio: f64,
    pub max_gap: f64,
}

impl Default for ContractionParams {
    fn default() -> Self {
        ContractionParams {
            solver: SolverConfig {
                length: 20.0,
                nx: 257,
                dt: 0.1 / 255.0,
                t_end: 0.1,
                a: 1.0,
                ..Default::default()
            },
            u0: Pulse {
                amp: 0.3,
                x0: 6.0,
                ..Default::default()
            },
            v0: Pulse {
                amp: 0.3,
                x0: 6.5,
                phase: std::f64::consts::FRAC_PI_2,
                ..Default::default()
            },
            f: Ramp { re: 0.3, im: 0.0 },
            g: Ramp { re: 0.0, im: -0.3 },
            lambda1: 0.0,
            lambda2: 0.0,
            iters: 7,
            max_ratio: 0.9,
            max_gap: 0.05,
        }
    }
}

fn exp_contraction(params: &Value) -> CliResult<Artifacts> {
    let (p, config): (ContractionParams, _) = parse_params(params)?;
    if p.iters < 6 {
        return Err(CliError::InvalidConfig("contraction needs at least 6 iterates".into()));
    }
    let cfg = p.solver;
    cfg.validate()?;
    let u0 = p.u0.sample(&cfg)?;
    let v0 = p.v0.sample(&cfg)?;
    let n = cfg.steps() + 1;
    let f = p.f.series(cfg.t_end, n)?;
    let g = p.g.series(cfg.t_end, n)?;
    let res = contraction_iterate(&cfg, &u0, &v0, &f, &g, p.lambda1, p.lambda2, p.iters)?;
    let ratios = res.ratios();
    let mut rows = Vec::new();
    for (k, d) in res.distances.iter().enumerate() {
        let r = if k > 0 { format!("{:.6e}", ratios[k - 1]) } else { String::new() };
        rows.push(vec![(k + 1).to_string(), format!("{d:.10e}"), r]);
    }
    let worst = ratios[1..=4].iter().cloned().fold(0.0, f64::max);
    let sim = simulate(&cfg, &u0, &v0, &f, &g)?;
    let last = sim.last();
    let (xs, uc, vc) = res.half_line_final();
    let spacing_matches = (res.grid.dx - cfg.dx()).abs() <= 1e-12 * cfg.dx();
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..xs.len().min(cfg.nx) {
        let (su, sv) = (last.u.samples()[k], last.v.samples()[k]);
        num += (uc[k] - su).norm_sqr() + (vc[k] - sv).norm_sqr();
        den += su.norm_sqr() + sv.norm_sqr();
    }
    let gap = if den > 0.0 { (num / den).sqrt() } else { num.sqrt() };
    Ok(Artifacts {
        config,
        files: vec![(
            "contraction.csv".into(),
            write_rows(&["k", "distance", "ratio"], &rows),
        )],
        contracts: vec![
            Contract::at_most("max d_{k+1}/d_k for k = 2..5", worst, p.max_ratio),
            Contract::holds("fixed-point and solver grids coincide", spacing_matches),
            Contract::at_most("relative L2 gap to Crank-Nicolson", gap, p.max_gap),
        ],
    })
}

fn load_params(path: Option<&Path>) -> CliResult<Value> {
    match path {
        None => Ok(json!({})),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::InvalidConfig(format!("{}: {e}", p.display())))?;
            let v: Value = serde_json::from_str(&text).map_err(|e| CliError::InvalidConfig(e.to_string()))?;
            if !v.is_object() {
                return Err(CliError::InvalidConfig("config must be a JSON object".into()));
            }
            Ok(v)
        }
    }
}

/// Runs one experiment and writes its outputs and manifest into `out_dir`.
/// Nothing is written when the experiment fails before producing outputs.
pub fn run_experiment(spec: &ExperimentSpec) -> CliResult<RunOutcome> {
    let start = Instant::now();
    let art = match spec.command {
        Command::Simulate => exp_simulate(&spec.params),
        Command::MassTrack => exp_mass_track(&spec.params),
        Command::VerifyBilinear => exp_verify_bilinear(&spec.params, spec.seed),
        Command::JSweep => exp_j_sweep(&spec.params),
        Command::TraceCheck => exp_trace_check(&spec.params),
        Command::DispersionSweep => exp_dispersion_sweep(&spec.params, spec.seed),
        Command::RegionMap => exp_region_map(&spec.params),
        Command::Contraction => exp_contraction(&spec.params),
    }?;
    fs::create_dir_all(&spec.out_dir)?;
    let mut outputs = Vec::new();
    for (name, bytes) in &art.files {
        fs::write(spec.out_dir.join(name), bytes)?;
        outputs.push(name.clone());
    }
    let pass = art.contracts.iter().all(|c| c.pass);
    let manifest = Manifest {
        command: spec.command.name().into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: spec.seed,
        config: art.config,
        outputs,
        contracts: art.contracts,
        status: if pass { "pass" } else { "fail" }.into(),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    let manifest_path = spec.out_dir.join(format!("{}.manifest.json", spec.command.name()));
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::InvalidConfig(e.to_string()))?;
    fs::write(&manifest_path, text + "\n")?;
    Ok(RunOutcome {
        manifest,
        manifest_path,
    })
}

/// Summary `{"experiments": {command: status}, "overall": status}` over the
/// manifests in `dir`, with keys in sorted order.
pub fn emit_report(dir: &Path) -> CliResult<String> {
    let mut statuses = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|_| CliError::EmptyDirectory(dir.to_path_buf()))?;
    for entry in entries {
        let path = entry?.path();
        let is_manifest = path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.ends_with(".manifest.json"));
        if !is_manifest {
            continue;
        }
        let m: Manifest = serde_json::from_str(&fs::read_to_string(&path)?)
            .map_err(|e| CliError::InvalidConfig(format!("{}: {e}", path.display())))?;
        statuses.insert(m.command, m.status);
    }
    if statuses.is_empty() {
        return Err(CliError::EmptyDirectory(dir.to_path_buf()));
    }
    let overall = if statuses.values().all(|s| s == "pass") { "pass" } else { "fail" };
    let report = json!({ "experiments": statuses, "overall": overall });
    Ok(serde_json::to_string_pretty(&report).expect("report serialises") + "\n")
}

fn dispatch(cli: Cli) -> CliResult<i32> {
    let command = match cli.command {
        CommandLine::Report { dir } => {
            let report = emit_report(&dir)?;
            print!("{report}");
            let ok = report.contains("\"overall\": \"pass\"");
            return Ok(if ok { EXIT_OK } else { EXIT_CONTRACT });
        }
        CommandLine::Simulate => Command::Simulate,
        CommandLine::MassTrack => Command::MassTrack,
        CommandLine::VerifyBilinear => Command::VerifyBilinear,
        CommandLine::JSweep => Command::JSweep,
        CommandLine::TraceCheck => Command::TraceCheck,
        CommandLine::DispersionSweep => Command::DispersionSweep,
        CommandLine::RegionMap => Command::RegionMap,
        CommandLine::Contraction => Command::Contraction,
    };
    let spec = ExperimentSpec {
        command,
        params: load_params(cli.config.as_deref())?,
        seed: cli.seed,
        out_dir: cli.out,
    };
    let outcome = run_experiment(&spec)?;
    for c in &outcome.manifest.contracts {
        let tag = if c.pass { "ok" } else { "FAILED" };
        println!("{tag:>6}  {}: {:.4e} (threshold {:.4e})", c.name, c.value, c.threshold);
    }
    println!("manifest: {}", outcome.manifest_path.display());
    Ok(if outcome.passed() { EXIT_OK } else { EXIT_CONTRACT })
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let jobs = cli.jobs;
    if jobs == Some(0) {
        eprintln!("error: --jobs must be at least 1");
        return EXIT_USAGE;
    }
    let pool = match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build(),
        None => rayon::ThreadPoolBuilder::new().build(),
    };
    let pool = match pool {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONTRACT;
        }
    };
    match pool.install(|| dispatch(cli)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
