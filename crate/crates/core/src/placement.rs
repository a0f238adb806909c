//! Candidate actuator and sensor regions, scored by gramian support and norm.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FlowConfig, Point, VectorField};
use crate::gramian::{controllability_gramian, observability_gramian, support_measure};
use crate::partition::{BoxPartition, CellSet};
use crate::transfer::Propagator;

/// Rectangular patches scanned over the partition, plus any hand-picked sets.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSpec {
    pub patch_w: usize,
    pub patch_h: usize,
    pub stride: usize,
    pub explicit_sets: Vec<CellSet>,
}

impl CandidateSpec {
    pub fn patches(patch_w: usize, patch_h: usize, stride: usize) -> Self {
        CandidateSpec { patch_w, patch_h, stride, explicit_sets: Vec::new() }
    }

    fn validate(&self, partition: &BoxPartition) -> Result<()> {
        let (px, py) = partition.dims();
        if self.stride == 0 {
            return Err(Error::InvalidArgument("stride must be at least 1".into()));
        }
        if self.patch_w == 0 || self.patch_h == 0 || self.patch_w > px || self.patch_h > py {
            return Err(Error::InvalidArgument(format!(
                "patch {}x{} does not fit a {px}x{py} partition",
                self.patch_w, self.patch_h
            )));
        }
        if self.explicit_sets.iter().any(|s| s.partition() != partition) {
            return Err(Error::PartitionMismatch);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlacementMode {
    #[default]
    Actuator,
    Sensor,
}

/// Which gramian norm wins among candidates with tied support.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormDirection {
    #[default]
    Max,
    Min,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlacementScore {
    pub candidate: CellSet,
    pub support: f64,
    pub norm: f64,
    /// 1-based; 0 until ranked.
    pub rank: usize,
}

pub const DEFAULT_TIE_TOL: f64 = 0.02;

/// All patches in row-major anchor order, followed by the explicit sets.
pub fn enumerate_candidates(partition: &BoxPartition, spec: &CandidateSpec) -> Result<Vec<CellSet>> {
    spec.validate(partition)?;
    let (px, py) = partition.dims();
    let mut out = Vec::new();
    for iy in (0..=py - spec.patch_h).step_by(spec.stride) {
        for ix in (0..=px - spec.patch_w).step_by(spec.stride) {
            let cells = (iy..iy + spec.patch_h)
                .flat_map(|y| (ix..ix + spec.patch_w).map(move |x| partition.index(x, y)))
                .collect();
            out.push(CellSet::new(*partition, cells)?);
        }
    }
    out.extend(spec.explicit_sets.iter().cloned());
    Ok(out)
}

/// Support measure (cells above `eps · max`) and L² norm of the `steps`-step
/// gramian of `cand`.
pub fn score_candidate<P: Propagator + ?Sized>(
    op: &P,
    cand: &CellSet,
    steps: usize,
    mode: PlacementMode,
    eps: f64,
) -> Result<PlacementScore> {
    let g = match mode {
        PlacementMode::Actuator => controllability_gramian(op, cand, steps)?,
        PlacementMode::Sensor => observability_gramian(op, cand, steps)?,
    };
    Ok(PlacementScore {
        candidate: cand.clone(),
        support: support_measure(&g, eps * g.field.max().max(0.0)),
        norm: g.field.l2_norm(),
        rank: 0,
    })
}

/// Scores every candidate concurrently, preserving input order.
pub fn score_candidates<P: Propagator + ?Sized>(
    op: &P,
    cands: &[CellSet],
    steps: usize,
    mode: PlacementMode,
    eps: f64,
) -> Result<Vec<PlacementScore>> {
    cands.par_iter().map(|c| score_candidate(op, c, steps, mode, eps)).collect()
}

fn tiebreak(a: &PlacementScore, b: &PlacementScore) -> Ordering {
    a.candidate.anchor().cmp(&b.candidate.anchor()).then_with(|| a.candidate.indices().cmp(b.candidate.indices()))
}

fn by_norm(a: &PlacementScore, b: &PlacementScore, dir: NormDirection) -> Ordering {
    match dir {
        NormDirection::Max => b.norm.total_cmp(&a.norm),
        NormDirection::Min => a.norm.total_cmp(&b.norm),
    }
}

/// Larger support first. Supports within `tie_tol` (relative) of a group's
/// largest member are tied and ordered by norm; remaining ties go to the
/// lower anchor cell.
pub fn rank_placements(
    scores: &[PlacementScore],
    tie_tol: f64,
    direction: NormDirection,
) -> Result<Vec<PlacementScore>> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("nothing to rank".into()));
    }
    if !(tie_tol >= 0.0) {
        return Err(Error::InvalidArgument(format!("tie tolerance must be nonnegative, got {tie_tol}")));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| {
        b.support.total_cmp(&a.support).then_with(|| by_norm(a, b, direction)).then_with(|| tiebreak(a, b))
    });

    let mut out = Vec::with_capacity(sorted.len());
    let mut start = 0;
    while start < sorted.len() {
        let lead = sorted[start].support;
        let end = start + sorted[start..].iter().take_while(|s| lead - s.support <= tie_tol * lead.abs()).count();
        let mut group = sorted[start..end].to_vec();
        group.sort_by(|a, b| by_norm(a, b, direction).then_with(|| tiebreak(a, b)));
        out.extend(group);
        start = end;
    }
    for (i, s) in out.iter_mut().enumerate() {
        s.rank = i + 1;
    }
    Ok(out)
}

/// Monte Carlo estimate of the cells visited within `tau` by trajectories
/// started uniformly in `b`. Always contains `b`.
pub fn reachable_set_oracle(
    field: &VectorField,
    b: &CellSet,
    tau: f64,
    n_samples: usize,
    cfg: &FlowConfig,
    seed: u64,
) -> Result<CellSet> {
    if b.is_empty() {
        return Err(Error::EmptySet);
    }
    if n_samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    if !(tau >= 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be nonnegative, got {tau}")));
    }
    let part = *b.partition();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts: Vec<Point> = (0..n_samples)
        .map(|_| {
            let cell = b.indices()[rng.random_range(0..b.len())];
            let r = part.cell_rect(cell);
            Point::new(rng.random_range(r[0]..r[2]), rng.random_range(r[1]..r[3]))
        })
        .collect();
    let visited = starts
        .par_iter()
        .fold(
            || vec![false; part.len()],
            |mut seen, &p| {
                field.trace(p, tau, cfg, |q| {
                    if let Some(c) = part.locate(q) {
                        seen[c] = true;
                    }
                });
                seen
            },
        )
        .reduce(
            || vec![false; part.len()],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x |= y);
                a
            },
        );
    let cells = (0..part.len()).filter(|&i| visited[i]).collect();
    CellSet::new(part, cells)?.union(b)
}
