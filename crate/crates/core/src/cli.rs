//! Declarative run configuration and the batch commands behind the
//! `gramflow` binary.
//!
//! A run is described by one JSON file; every relative path inside it is
//! resolved against the directory that holds the file. All outputs land in
//! a caller-chosen directory and depend only on the configuration and seed.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::control::{min_energy_control, ControlMethod, ControlOptions};
use crate::error::{Error, Result};
use crate::field::{load_snapshots, mean_field, AnalyticField, BoundaryPolicy, Domain, FlowConfig, VectorField};
use crate::gramian::{
    finite_gramian, infinite_controllability_gramian, infinite_observability_gramian, residence_time,
    stability_certificate, support_measure, GramianField, GramianKind, Horizon, InfiniteOptions, InfiniteSolver,
    Quadrature,
};
use crate::partition::{BoxPartition, CellSet, CellSetSpec, ScalarField};
use crate::placement::{
    enumerate_candidates, rank_placements, score_candidates, CandidateSpec, NormDirection, PlacementMode,
    DEFAULT_TIE_TOL,
};
use crate::transfer::{evolve, Evolution, Propagator, Sampling, TransferOperator, UlamSettings};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Build,
    Gramian,
    Place,
    Control,
    Residence,
    Stability,
}

impl Command {
    pub const ALL: [Command; 6] =
        [Command::Build, Command::Gramian, Command::Place, Command::Control, Command::Residence, Command::Stability];

    pub fn name(self) -> &'static str {
        match self {
            Command::Build => "build",
            Command::Gramian => "gramian",
            Command::Place => "place",
            Command::Control => "control",
            Command::Residence => "residence",
            Command::Stability => "stability",
        }
    }
}

/// Where the velocity field comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldSource {
    Analytic {
        analytic: String,
        #[serde(default = "default_grid")]
        grid: [usize; 2],
    },
    Snapshots {
        snapshots: Vec<PathBuf>,
    },
}

fn default_grid() -> [usize; 2] {
    [65, 65]
}

/// A per-cell field given by name (`"zero"`, or `"free"` for the uncontrolled
/// evolution of the initial density), as a scaled set indicator, as the
/// indicator of a set's complement, or as a CSV file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DensitySpec {
    Named(String),
    Set {
        set: String,
        #[serde(default = "one")]
        scale: f64,
    },
    Complement {
        complement: String,
    },
    Csv {
        csv: PathBuf,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InfiniteParams {
    pub tol: Option<f64>,
    pub max_steps: Option<usize>,
    pub solver: Option<InfiniteSolver>,
}

impl InfiniteParams {
    fn options(&self) -> InfiniteOptions {
        let d = InfiniteOptions::default();
        InfiniteOptions {
            tol: self.tol.unwrap_or(d.tol),
            max_steps: self.max_steps.unwrap_or(d.max_steps),
            solver: self.solver.unwrap_or(d.solver),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GramianParams {
    pub kind: GramianKind,
    pub set: String,
    #[serde(default)]
    pub infinite: bool,
    #[serde(default)]
    pub quadrature: Quadrature,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(flatten)]
    pub limits: InfiniteParams,
}

fn default_eps() -> f64 {
    1e-9
}

fn default_tie_tol() -> f64 {
    DEFAULT_TIE_TOL
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaceParams {
    #[serde(default)]
    pub mode: PlacementMode,
    /// Patch width and height in cells; omit to score only `explicit` sets.
    pub patch: Option<[usize; 2]>,
    #[serde(default = "one_usize")]
    pub stride: usize,
    #[serde(default)]
    pub explicit: Vec<String>,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_tie_tol")]
    pub tie_tol: f64,
    #[serde(default)]
    pub norm_direction: NormDirection,
    /// Also write one gramian CSV per candidate.
    #[serde(default)]
    pub export_gramians: bool,
}

fn one_usize() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlParams {
    pub set: String,
    #[serde(default = "zero_density")]
    pub rho0: DensitySpec,
    pub target: DensitySpec,
    #[serde(default)]
    pub method: ControlMethod,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn zero_density() -> DensitySpec {
    DensitySpec::Named("zero".into())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidenceParams {
    pub source: String,
    pub target: String,
    #[serde(flatten)]
    pub limits: InfiniteParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityParams {
    pub neighborhood: String,
    /// Defaults to the indicator of the neighbourhood's complement.
    pub v0: Option<DensitySpec>,
    #[serde(flatten)]
    pub limits: InfiniteParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub field: FieldSource,
    /// Required for analytic fields; defaults to the snapshot extent.
    pub domain: Option<[f64; 4]>,
    #[serde(default)]
    pub boundary: BoundaryPolicy,
    pub partition: [usize; 2],
    pub dt: f64,
    pub steps: Option<usize>,
    pub tau: Option<f64>,
    #[serde(default = "default_samples")]
    pub samples_per_cell: usize,
    pub sampling: Option<Sampling>,
    pub flow: Option<FlowConfig>,
    #[serde(default)]
    pub seed: u64,
    /// Load a prebuilt operator instead of building one.
    pub operator: Option<PathBuf>,
    #[serde(default)]
    pub sets: BTreeMap<String, CellSetSpec>,
    pub gramian: Option<GramianParams>,
    pub place: Option<PlaceParams>,
    pub control: Option<ControlParams>,
    pub residence: Option<ResidenceParams>,
    pub stability: Option<StabilityParams>,
}

fn default_samples() -> usize {
    100
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

impl RunConfig {
    /// Reads a configuration and makes its relative paths absolute.
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(io_err(path))?;
        let mut cfg: RunConfig =
            serde_json::from_reader(BufReader::new(file)).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    pub fn from_json(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| invalid(format!("config: {e}")))?;
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let FieldSource::Snapshots { snapshots } = &mut self.field {
            snapshots.iter_mut().for_each(fix);
        }
        if let Some(p) = &mut self.operator {
            fix(p);
        }
        let fix_density = |d: &mut DensitySpec| {
            if let DensitySpec::Csv { csv } = d {
                fix(csv);
            }
        };
        if let Some(c) = &mut self.control {
            fix_density(&mut c.rho0);
            fix_density(&mut c.target);
        }
        if let Some(DensitySpec::Csv { csv }) = self.stability.as_mut().and_then(|s| s.v0.as_mut()) {
            fix(csv);
        }
    }

    /// `steps`, or `round(tau / dt)`; exactly one must be given.
    pub fn horizon_steps(&self) -> Result<usize> {
        match (self.steps, self.tau) {
            (Some(k), None) => Ok(k),
            (None, Some(tau)) if tau >= 0.0 && tau.is_finite() => Ok((tau / self.dt).round() as usize),
            (None, Some(tau)) => Err(invalid(format!("tau must be nonnegative, got {tau}"))),
            (Some(_), Some(_)) => Err(invalid("give either steps or tau, not both")),
            (None, None) => Err(invalid("this command needs steps or tau")),
        }
    }

    pub fn velocity_field(&self) -> Result<VectorField> {
        match &self.field {
            FieldSource::Analytic { analytic, grid } => {
                let domain = self.domain.ok_or_else(|| invalid("analytic fields need a domain"))?;
                AnalyticField::from_str(analytic)?.sample(Domain::from_rect(domain)?, grid[0], grid[1], self.boundary)
            }
            FieldSource::Snapshots { snapshots } => {
                let fields = load_snapshots(snapshots)?;
                Ok(mean_field(&fields)?.with_boundary(self.boundary))
            }
        }
    }

    fn partition_for(&self, field_domain: Option<Domain>) -> Result<BoxPartition> {
        let domain = match (self.domain, field_domain) {
            (Some(d), _) => Domain::from_rect(d)?,
            (None, Some(d)) => d,
            (None, None) => return Err(invalid("no domain given")),
        };
        BoxPartition::new(domain, self.partition[0], self.partition[1])
    }

    pub fn ulam_settings(&self, seed: u64) -> Result<UlamSettings> {
        let mut s = UlamSettings::new(self.dt)?.samples(self.samples_per_cell).seed(seed);
        if let Some(sampling) = self.sampling {
            s = s.sampling(sampling);
        }
        if let Some(flow) = self.flow {
            s = s.flow(FlowConfig::new(flow.dt_integrate, flow.method)?);
        }
        Ok(s)
    }

    pub fn set(&self, name: &str, partition: &BoxPartition) -> Result<CellSet> {
        self.sets.get(name).ok_or_else(|| invalid(format!("unknown set {name:?}")))?.resolve(partition)
    }

    fn density(&self, spec: &DensitySpec, partition: &BoxPartition) -> Result<ScalarField> {
        match spec {
            DensitySpec::Named(n) if n == "zero" => Ok(ScalarField::zeros(*partition)),
            DensitySpec::Named(n) => Err(invalid(format!("unknown field name {n:?}"))),
            DensitySpec::Set { set, scale } => Ok(self.set(set, partition)?.indicator().scale(*scale)),
            DensitySpec::Complement { complement } => Ok(self.set(complement, partition)?.complement().indicator()),
            DensitySpec::Csv { csv } => {
                let f = File::open(csv).map_err(io_err(csv))?;
                ScalarField::read_csv(BufReader::new(f), *partition)
            }
        }
    }
}

/// Loads or builds the transfer operator described by `cfg`.
pub fn operator_for(cfg: &RunConfig, seed: u64) -> Result<TransferOperator> {
    if let Some(path) = &cfg.operator {
        let f = File::open(path).map_err(io_err(path))?;
        let op = TransferOperator::read(BufReader::new(f))?;
        let expected = cfg.partition_for(Some(*op.partition().domain()))?;
        if op.partition() != &expected {
            return Err(invalid(format!("operator {} was built on a different partition", path.display())));
        }
        return Ok(op);
    }
    let field = cfg.velocity_field()?;
    let partition = cfg.partition_for(Some(*field.domain()))?;
    TransferOperator::build(&field, partition, &cfg.ulam_settings(seed)?)
}

/// Files written by one command, relative to the output directory.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub summary: serde_json::Value,
}

struct Out<'a> {
    dir: &'a Path,
    files: Vec<PathBuf>,
}

impl Out<'_> {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        let f = File::create(&path).map_err(io_err(&path))?;
        self.files.push(PathBuf::from(name));
        Ok(BufWriter::new(f))
    }

    fn write_with(&mut self, name: &str, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
        let path = self.dir.join(name);
        let mut w = self.create(name)?;
        body(&mut w).and_then(|_| w.flush()).map_err(io_err(&path))
    }

    fn json(&mut self, name: &str, value: &serde_json::Value) -> Result<()> {
        self.write_with(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)
        })
    }
}

/// Runs `command` and writes its artifacts into `out_dir`.
pub fn run(command: Command, cfg: &RunConfig, seed: Option<u64>, out_dir: &Path) -> Result<Outcome> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let seed = seed.unwrap_or(cfg.seed);
    let mut out = Out { dir: out_dir, files: Vec::new() };
    let summary = match command {
        Command::Build => cmd_build(cfg, seed, &mut out)?,
        Command::Gramian => cmd_gramian(cfg, seed, &mut out)?,
        Command::Place => cmd_place(cfg, seed, &mut out)?,
        Command::Control => cmd_control(cfg, seed, &mut out)?,
        Command::Residence => cmd_residence(cfg, seed, &mut out)?,
        Command::Stability => cmd_stability(cfg, seed, &mut out)?,
    };
    Ok(Outcome { files: out.files, summary })
}

fn section<'a, T>(s: &'a Option<T>, name: &str) -> Result<&'a T> {
    s.as_ref().ok_or_else(|| invalid(format!("config has no \"{name}\" section")))
}

fn cmd_build(cfg: &RunConfig, seed: u64, out: &mut Out) -> Result<serde_json::Value> {
    let op = operator_for(cfg, seed)?;
    out.write_with("operator.txt", |w| op.write(w))?;
    let leak = op.leak();
    let n = leak.len() as f64;
    let summary = json!({
        "N": op.partition().len(),
        "px": op.partition().dims().0,
        "py": op.partition().dims().1,
        "dt": op.dt(),
        "nnz": op.matrix().nnz(),
        "seed": op.seed(),
        "samples_per_cell": op.samples_per_cell(),
        "leak": {
            "min": leak.iter().copied().fold(f64::INFINITY, f64::min),
            "max": leak.iter().copied().fold(0.0, f64::max),
            "mean": leak.iter().sum::<f64>() / n,
            "leaking_cells": leak.iter().filter(|&&l| l > 0.0).count(),
        },
        "max_row_deviation": op.max_row_deviation(),
    });
    out.json("build.json", &summary)?;
    Ok(summary)
}

fn gramian_sidecar(g: &GramianField, eps: f64) -> serde_json::Value {
    let threshold = eps * g.field.max().max(0.0);
    json!({
        "kind": g.kind,
        "K": match g.horizon { Horizon::Finite(k) => json!(k), Horizon::Infinite => json!("infinite") },
        "dt": g.dt,
        "source_set": g.source_set.indices(),
        "support_measure": support_measure(g, threshold),
        "l2_norm": g.field.l2_norm(),
        "residual": g.residual,
    })
}

fn cmd_gramian(cfg: &RunConfig, seed: u64, out: &mut Out) -> Result<serde_json::Value> {
    let p = section(&cfg.gramian, "gramian")?;
    let op = operator_for(cfg, seed)?;
    let set = cfg.set(&p.set, op.partition())?;
    let g = if p.infinite {
        let opts = p.limits.options();
        match p.kind {
            GramianKind::Controllability => infinite_controllability_gramian(&op, &set, &opts)?,
            GramianKind::Observability => infinite_observability_gramian(&op, &set, &opts)?,
        }
    } else {
        finite_gramian(&op, p.kind, &set, cfg.horizon_steps()?, p.quadrature)?
    };
    out.write_with("gramian.csv", |w| g.field.write_csv(w))?;
    let sidecar = gramian_sidecar(&g, p.eps);
    out.json("gramian.json", &sidecar)?;
    Ok(sidecar)
}

fn cmd_place(cfg: &RunConfig, seed: u64, out: &mut Out) -> Result<serde_json::Value> {
    let p = section(&cfg.place, "place")?;
    let op = operator_for(cfg, seed)?;
    let part = *op.partition();
    let explicit = p.explicit.iter().map(|n| cfg.set(n, &part)).collect::<Result<Vec<_>>>()?;
    let mut cands = match p.patch {
        Some([w, h]) => {
            let spec = CandidateSpec { patch_w: w, patch_h: h, stride: p.stride, explicit_sets: Vec::new() };
            enumerate_candidates(&part, &spec)?
        }
        None => Vec::new(),
    };
    cands.extend(explicit);
    if cands.is_empty() {
        return Err(invalid("no candidates: give a patch size or explicit sets"));
    }
    let steps = cfg.horizon_steps()?;
    let scores = score_candidates(&op, &cands, steps, p.mode, p.eps)?;
    let ranked = rank_placements(&scores, p.tie_tol, p.norm_direction)?;
    let names: BTreeMap<Vec<usize>, &String> =
        p.explicit.iter().filter_map(|n| cfg.set(n, &part).ok().map(|s| (s.indices().to_vec(), n))).collect();
    let report: Vec<serde_json::Value> = ranked
        .iter()
        .map(|s| {
            let mut entry = json!({
                "rank": s.rank,
                "cells": s.candidate.indices(),
                "support": s.support,
                "norm": s.norm,
            });
            if let Some(name) = names.get(s.candidate.indices()) {
                entry["name"] = json!(name);
            }
            entry
        })
        .collect();
    if p.export_gramians {
        let kind = match p.mode {
            PlacementMode::Actuator => GramianKind::Controllability,
            PlacementMode::Sensor => GramianKind::Observability,
        };
        for s in &ranked {
            let g = finite_gramian(&op, kind, &s.candidate, steps, Quadrature::LeftEndpoint)?;
            out.write_with(&format!("candidate_{:04}.csv", s.rank), |w| g.field.write_csv(w))?;
        }
    }
    let report = serde_json::Value::Array(report);
    out.json("placement.json", &report)?;
    Ok(report)
}

fn cmd_control(cfg: &RunConfig, seed: u64, out: &mut Out) -> Result<serde_json::Value> {
    let p = section(&cfg.control, "control")?;
    let op = operator_for(cfg, seed)?;
    let part = *op.partition();
    let steps = cfg.horizon_steps()?;
    let b = cfg.set(&p.set, &part)?;
    let rho0 = match &p.rho0 {
        DensitySpec::Named(n) if n == "free" => return Err(invalid("rho0 cannot be \"free\"")),
        spec => cfg.density(spec, &part)?,
    };
    let target = match &p.target {
        DensitySpec::Named(n) if n == "free" => evolve(&op, &rho0, steps, Evolution::Pf)?,
        spec => cfg.density(spec, &part)?,
    };
    let opts = ControlOptions { method: p.method, eps: p.eps, ..Default::default() };
    let res = min_energy_control(&op, &rho0, &target, &b, steps, &opts)?;
    let header = serde_json::to_value(res.schedule.header()).map_err(|e| invalid(e.to_string()))?;
    out.json("schedule.json", &header)?;
    out.write_with("schedule.csv", |w| res.schedule.write_csv(w))?;
    out.write_with("terminal.csv", |w| res.terminal.write_csv(w))?;
    let report = json!({
        "target_error": res.target_error,
        "energy": res.energy,
        "method": res.method,
    });
    out.json("steering.json", &report)?;
    Ok(report)
}

fn cmd_residence(cfg: &RunConfig, seed: u64, out: &mut Out) -> Result<serde_json::Value> {
    let p = section(&cfg.residence, "residence")?;
    let op = operator_for(cfg, seed)?;
    let part = *op.partition();
    let b = cfg.set(&p.source, &part)?;
    let a = cfg.set(&p.target, &part)?;
    let g = infinite_controllability_gramian(&op, &b, &p.limits.options())?;
    let t = residence_time(&g, &a)?;
    out.write_with("gramian.csv", |w| g.field.write_csv(w))?;
    let report = json!({
        "source": p.source,
        "target": p.target,
        "residence_time": t,
        "residual": g.residual,
    });
    out.json("residence.json", &report)?;
    Ok(report)
}

fn cmd_stability(cfg: &RunConfig, seed: u64, out: &mut Out) -> Result<serde_json::Value> {
    let p = section(&cfg.stability, "stability")?;
    let op = operator_for(cfg, seed)?;
    let part = *op.partition();
    let hood = cfg.set(&p.neighborhood, &part)?;
    let v0 = match &p.v0 {
        Some(spec) => cfg.density(spec, &part)?,
        None => hood.complement().indicator(),
    };
    let rep = stability_certificate(&op, &v0, &hood, &p.limits.options())?;
    out.write_with("stability.csv", |w| rep.solution.write_csv(w))?;
    let report = json!({
        "classification": rep.classification,
        "residual": rep.residual,
        "min_value": rep.min_value,
        "reason": rep.reason,
    });
    out.json("stability.json", &report)?;
    Ok(report)
}
