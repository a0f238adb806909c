//! Ulam discretization of the Perron-Frobenius operator.
//!
//! Row `i` of the transition matrix holds the fraction of cell `i`'s mass that
//! the time-`dt` flow map carries into each cell `j`; whatever leaves the
//! domain is recorded in `leak[i]`. Densities are pushed forward with `Pᵀ`
//! (Perron-Frobenius) and observables pulled back with `P` (Koopman), so the
//! two are exact adjoints under the cell-measure inner product.

use std::io::{BufRead, Write};

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Domain, FlowConfig, Point, VectorField};
use crate::partition::{BoxPartition, ScalarField};
use crate::sparse::SparseMatrix;

/// Where the sample points inside each cell come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Sampling {
    /// Uniform random points from a per-cell ChaCha8 stream.
    MonteCarlo,
    /// Midpoints of a regular `sx × sy` sub-grid.
    Grid { sx: usize, sy: usize },
}

impl Sampling {
    /// Square sub-grid with roughly `n` points.
    pub fn grid(n: usize) -> Self {
        let s = ((n as f64).sqrt().round() as usize).max(1);
        Sampling::Grid { sx: s, sy: s }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Evolution {
    Pf,
    Koopman,
}

/// Parameters of the Ulam construction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UlamSettings {
    pub dt: f64,
    /// Points per cell for Monte Carlo sampling; ignored for grid sampling.
    pub samples_per_cell: usize,
    pub seed: u64,
    pub sampling: Sampling,
    pub flow: FlowConfig,
}

impl UlamSettings {
    /// 100 Monte Carlo samples per cell, seed 0, RK4 at `dt/10`.
    pub fn new(dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        Ok(UlamSettings {
            dt,
            samples_per_cell: 100,
            seed: 0,
            sampling: Sampling::MonteCarlo,
            flow: FlowConfig::for_step(dt)?,
        })
    }

    pub fn samples(mut self, n: usize) -> Self {
        self.samples_per_cell = n;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn sampling(mut self, sampling: Sampling) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn flow(mut self, flow: FlowConfig) -> Self {
        self.flow = flow;
        self
    }

    fn effective_samples(&self) -> usize {
        match self.sampling {
            Sampling::MonteCarlo => self.samples_per_cell,
            Sampling::Grid { sx, sy } => sx * sy,
        }
    }
}

/// Anything that moves cell fields one step forward (densities) and backward
/// (observables) through a transition matrix.
pub trait Propagator: Sync {
    fn partition(&self) -> &BoxPartition;
    fn dt(&self) -> f64;
    /// `[M]ᵢⱼ` is the weight with which cell `i` feeds cell `j`.
    fn matrix(&self) -> &SparseMatrix;
}

/// One Perron-Frobenius step: `ρ'ⱼ = Σᵢ ρᵢ·[M]ᵢⱼ`.
pub fn apply_pf<P: Propagator + ?Sized>(op: &P, rho: &ScalarField) -> Result<ScalarField> {
    rho.check_partition(op.partition())?;
    Ok(ScalarField::from_vec_unchecked(*op.partition(), op.matrix().mul_transpose_vec(rho.values())))
}

/// One Koopman step: `g'ᵢ = Σⱼ [M]ᵢⱼ·gⱼ`.
pub fn apply_koopman<P: Propagator + ?Sized>(op: &P, g: &ScalarField) -> Result<ScalarField> {
    g.check_partition(op.partition())?;
    Ok(ScalarField::from_vec_unchecked(*op.partition(), op.matrix().mul_vec(g.values())))
}

pub fn apply<P: Propagator + ?Sized>(op: &P, x: &ScalarField, mode: Evolution) -> Result<ScalarField> {
    match mode {
        Evolution::Pf => apply_pf(op, x),
        Evolution::Koopman => apply_koopman(op, x),
    }
}

/// Applies `mode` `steps` times.
pub fn evolve<P: Propagator + ?Sized>(op: &P, x: &ScalarField, steps: usize, mode: Evolution) -> Result<ScalarField> {
    x.check_partition(op.partition())?;
    let mut cur = x.clone();
    for _ in 0..steps {
        cur = apply(op, &cur, mode)?;
    }
    Ok(cur)
}

/// Strongly connected classes of the transition graph (`i → j` when
/// `[M]ᵢⱼ > 0`), sinks first.
pub fn strongly_connected_classes(m: &SparseMatrix) -> Vec<Vec<usize>> {
    let n = m.dim();
    let mut g: DiGraph<(), ()> = DiGraph::with_capacity(n, m.nnz());
    for _ in 0..n {
        g.add_node(());
    }
    for (i, j, _) in m.triplets() {
        g.add_edge(NodeIndex::new(i), NodeIndex::new(j), ());
    }
    tarjan_scc(&g)
        .into_iter()
        .map(|scc| {
            let mut c: Vec<usize> = scc.iter().map(|v| v.index()).collect();
            c.sort_unstable();
            c
        })
        .collect()
}

/// Cells on which `Σₖ Mᵏ` cannot converge: members of strongly connected
/// classes whose internal row sums (or column sums) are all at least one.
pub fn persistent_cells<P: Propagator + ?Sized>(op: &P) -> Vec<bool> {
    let m = op.matrix();
    let n = m.dim();
    let mut persistent = vec![false; n];
    let mut local = vec![usize::MAX; n];
    for cells in strongly_connected_classes(m) {
        for (a, &c) in cells.iter().enumerate() {
            local[c] = a;
        }
        let mut row_min = f64::INFINITY;
        let mut col = vec![0.0; cells.len()];
        for &i in &cells {
            let (cs, vs) = m.row(i);
            let mut inside = 0.0;
            for (&j, &v) in cs.iter().zip(vs) {
                if local[j] != usize::MAX {
                    inside += v;
                    col[local[j]] += v;
                }
            }
            row_min = row_min.min(inside);
        }
        let col_min = col.iter().copied().fold(f64::INFINITY, f64::min);
        const ONE: f64 = 1.0 - 1e-12;
        if row_min >= ONE || col_min >= ONE {
            for &c in &cells {
                persistent[c] = true;
            }
        }
        for &c in &cells {
            local[c] = usize::MAX;
        }
    }
    persistent
}

/// Cells reachable from `start` following edges `i → j` with `[M]ᵢⱼ > 0`.
pub fn forward_closure(m: &SparseMatrix, start: &[bool]) -> Vec<bool> {
    let mut seen = start.to_vec();
    let mut stack: Vec<usize> = (0..m.dim()).filter(|&i| start[i]).collect();
    while let Some(i) = stack.pop() {
        for &j in m.row(i).0 {
            if !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen
}

/// Sparse Ulam transition matrix over one time step.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferOperator {
    partition: BoxPartition,
    dt: f64,
    matrix: SparseMatrix,
    leak: Vec<f64>,
    samples_per_cell: usize,
    seed: u64,
    sampling: Sampling,
}

impl Propagator for TransferOperator {
    fn partition(&self) -> &BoxPartition {
        &self.partition
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }
}

impl TransferOperator {
    /// Samples every cell, maps the samples through the flow over `dt`, and
    /// counts where they land.
    pub fn build(field: &VectorField, partition: BoxPartition, settings: &UlamSettings) -> Result<Self> {
        if !(settings.dt > 0.0 && settings.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", settings.dt)));
        }
        let n_samples = settings.effective_samples();
        if n_samples == 0 {
            return Err(Error::InvalidArgument("samples_per_cell must be at least 1".into()));
        }
        let n = partition.len();
        let per_cell: Vec<(Vec<(usize, f64)>, f64)> = (0..n)
            .into_par_iter()
            .map(|cell| {
                let mut hits: Vec<usize> = Vec::with_capacity(n_samples);
                let mut lost = 0usize;
                let mut land =
                    |p: Point| match field.flow_map(p, settings.dt, &settings.flow).and_then(|q| partition.locate(q)) {
                        Some(j) => hits.push(j),
                        None => lost += 1,
                    };
                let r = partition.cell_rect(cell);
                let (w, h) = (r[2] - r[0], r[3] - r[1]);
                match settings.sampling {
                    Sampling::MonteCarlo => {
                        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
                        rng.set_stream(cell as u64);
                        for _ in 0..n_samples {
                            let a: f64 = rng.random();
                            let b: f64 = rng.random();
                            land(Point::new(r[0] + a * w, r[1] + b * h));
                        }
                    }
                    Sampling::Grid { sx, sy } => {
                        for b in 0..sy {
                            for a in 0..sx {
                                land(Point::new(
                                    r[0] + (a as f64 + 0.5) / sx as f64 * w,
                                    r[1] + (b as f64 + 0.5) / sy as f64 * h,
                                ));
                            }
                        }
                    }
                }
                hits.sort_unstable();
                let denom = n_samples as f64;
                let mut row = Vec::new();
                let mut k = 0;
                while k < hits.len() {
                    let j = hits[k];
                    let run = hits[k..].iter().take_while(|&&x| x == j).count();
                    row.push((j, run as f64 / denom));
                    k += run;
                }
                (row, lost as f64 / denom)
            })
            .collect();

        let (rows, leak): (Vec<_>, Vec<_>) = per_cell.into_iter().unzip();
        Ok(TransferOperator {
            partition,
            dt: settings.dt,
            matrix: SparseMatrix::from_rows(n, rows)?,
            leak,
            samples_per_cell: n_samples,
            seed: settings.seed,
            sampling: settings.sampling,
        })
    }

    /// Assembles an operator from explicit rows; `leak[i]` is set to the
    /// missing row mass. Rows must be nonnegative and sum to at most one.
    pub fn from_rows(partition: BoxPartition, dt: f64, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        let matrix = SparseMatrix::from_rows(partition.len(), rows)?;
        let mut leak = Vec::with_capacity(partition.len());
        for i in 0..partition.len() {
            if matrix.row(i).1.iter().any(|&v| v < 0.0) {
                return Err(Error::InvalidArgument(format!("row {i} has a negative entry")));
            }
            let s = matrix.row_sum(i);
            if s > 1.0 + 1e-12 {
                return Err(Error::InvalidArgument(format!("row {i} sums to {s} > 1")));
            }
            leak.push((1.0 - s).max(0.0));
        }
        Ok(TransferOperator {
            partition,
            dt,
            matrix,
            leak,
            samples_per_cell: 0,
            seed: 0,
            sampling: Sampling::Grid { sx: 0, sy: 0 },
        })
    }

    pub fn identity(partition: BoxPartition, dt: f64) -> Result<Self> {
        let rows = (0..partition.len()).map(|i| vec![(i, 1.0)]).collect();
        Self::from_rows(partition, dt, rows)
    }

    pub fn leak(&self) -> &[f64] {
        &self.leak
    }

    pub fn samples_per_cell(&self) -> usize {
        self.samples_per_cell
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn sampling(&self) -> Sampling {
        self.sampling
    }

    /// Largest `|Σⱼ Pᵢⱼ + leakᵢ − 1|` over all rows.
    pub fn max_row_deviation(&self) -> f64 {
        (0..self.partition.len()).map(|i| (self.matrix.row_sum(i) + self.leak[i] - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn column_sums(&self) -> Vec<f64> {
        self.matrix.mul_transpose_vec(&vec![1.0; self.partition.len()])
    }

    /// Explicit `Pᵀ` as a propagator: its Perron-Frobenius step is this
    /// operator's Koopman step and vice versa.
    pub fn transposed(&self) -> TransposedOperator {
        TransposedOperator { partition: self.partition, dt: self.dt, matrix: self.matrix.transpose() }
    }

    /// Text format: one JSON header line, an `i,j,value` line, then one
    /// triplet per nonzero in row-major order. Floats use shortest
    /// round-trip formatting so save/load is bit-exact.
    pub fn write(&self, mut w: impl Write) -> std::io::Result<()> {
        let header = OperatorHeader {
            format: FORMAT_TAG.to_string(),
            n: self.partition.len(),
            px: self.partition.dims().0,
            py: self.partition.dims().1,
            domain: self.partition.domain().as_rect(),
            dt: self.dt,
            seed: self.seed,
            samples_per_cell: self.samples_per_cell,
            sampling: self.sampling,
            leak: self.leak.clone(),
        };
        serde_json::to_writer(&mut w, &header)?;
        writeln!(w)?;
        writeln!(w, "i,j,value")?;
        for (i, j, v) in self.matrix.triplets() {
            writeln!(w, "{i},{j},{v:?}")?;
        }
        Ok(())
    }

    pub fn read(reader: impl BufRead) -> Result<Self> {
        let bad = |m: String| Error::OperatorFormat(m);
        let mut lines = reader.lines();
        let header_line = lines.next().ok_or_else(|| bad("empty file".into()))?.map_err(|e| bad(e.to_string()))?;
        let header: OperatorHeader = serde_json::from_str(&header_line).map_err(|e| bad(format!("header: {e}")))?;
        if header.format != FORMAT_TAG {
            return Err(bad(format!("unknown format tag {:?}", header.format)));
        }
        let domain = Domain::from_rect(header.domain)?;
        let partition = BoxPartition::new(domain, header.px, header.py)?;
        if partition.len() != header.n || header.leak.len() != header.n {
            return Err(bad("header sizes disagree".into()));
        }
        match lines.next() {
            Some(Ok(l)) if l.trim() == "i,j,value" => {}
            _ => return Err(bad("missing triplet header".into())),
        }
        let mut rows = vec![Vec::new(); header.n];
        for (k, line) in lines.enumerate() {
            let line = line.map_err(|e| bad(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let parse_err = || bad(format!("line {}: {line:?}", k + 3));
            let i: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(parse_err)?;
            let j: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(parse_err)?;
            let v: f64 = parts.next().and_then(|s| s.parse().ok()).ok_or_else(parse_err)?;
            if parts.next().is_some() || i >= header.n {
                return Err(parse_err());
            }
            rows[i].push((j, v));
        }
        let matrix = SparseMatrix::from_rows(header.n, rows)?;
        Ok(TransferOperator {
            partition,
            dt: header.dt,
            matrix,
            leak: header.leak,
            samples_per_cell: header.samples_per_cell,
            seed: header.seed,
            sampling: header.sampling,
        })
    }
}

const FORMAT_TAG: &str = "gramflow-operator/1";

#[derive(Serialize, Deserialize)]
struct OperatorHeader {
    format: String,
    #[serde(rename = "N")]
    n: usize,
    px: usize,
    py: usize,
    domain: [f64; 4],
    dt: f64,
    seed: u64,
    samples_per_cell: usize,
    sampling: Sampling,
    leak: Vec<f64>,
}

/// `Pᵀ` stored explicitly.
#[derive(Clone, Debug)]
pub struct TransposedOperator {
    partition: BoxPartition,
    dt: f64,
    matrix: SparseMatrix,
}

impl Propagator for TransposedOperator {
    fn partition(&self) -> &BoxPartition {
        &self.partition
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }
}
