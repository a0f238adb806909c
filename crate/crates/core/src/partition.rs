//! Uniform box partitions of a rectangular domain, cell sets, and
//! piecewise-constant scalar fields over the cells.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Domain, Point};

/// `px × py` congruent boxes covering a [`Domain`]. Cell `(ix, iy)` has
/// index `iy·px + ix`. Cells are half-open `[x_i, x_{i+1})`, except the last
/// column and row which include the domain edge.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxPartition {
    domain: Domain,
    px: usize,
    py: usize,
}

impl BoxPartition {
    pub fn new(domain: Domain, px: usize, py: usize) -> Result<Self> {
        if px == 0 || py == 0 {
            return Err(Error::InvalidPartition(format!("cell counts must be positive, got {px}x{py}")));
        }
        Ok(BoxPartition { domain, px, py })
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.px, self.py)
    }

    pub fn len(&self) -> usize {
        self.px * self.py
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_measure(&self) -> f64 {
        self.domain.area() / (self.px * self.py) as f64
    }

    pub fn cell_size(&self) -> (f64, f64) {
        (self.domain.width() / self.px as f64, self.domain.height() / self.py as f64)
    }

    fn x_edge(&self, k: usize) -> f64 {
        self.domain.xmin + k as f64 * self.domain.width() / self.px as f64
    }

    fn y_edge(&self, k: usize) -> f64 {
        self.domain.ymin + k as f64 * self.domain.height() / self.py as f64
    }

    pub fn coords(&self, cell: usize) -> (usize, usize) {
        (cell % self.px, cell / self.px)
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.px + ix
    }

    /// `[xmin, ymin, xmax, ymax]` of one cell.
    pub fn cell_rect(&self, cell: usize) -> [f64; 4] {
        let (ix, iy) = self.coords(cell);
        [self.x_edge(ix), self.y_edge(iy), self.x_edge(ix + 1), self.y_edge(iy + 1)]
    }

    pub fn cell_center(&self, cell: usize) -> Point {
        let r = self.cell_rect(cell);
        Point::new(0.5 * (r[0] + r[2]), 0.5 * (r[1] + r[3]))
    }

    /// Index of the cell containing `p`, or `None` outside the domain.
    pub fn locate(&self, p: Point) -> Option<usize> {
        if !self.domain.contains(p) {
            return None;
        }
        let ix = axis_slot(p.x, self.px, |k| self.x_edge(k));
        let iy = axis_slot(p.y, self.py, |k| self.y_edge(k));
        Some(self.index(ix, iy))
    }
}

fn axis_slot(x: f64, n: usize, edge: impl Fn(usize) -> f64) -> usize {
    let lo = edge(0);
    let hi = edge(n);
    let mut k = (((x - lo) / (hi - lo)) * n as f64).floor().max(0.0) as usize;
    k = k.min(n - 1);
    // The guess can be off by one when x sits on an edge.
    while k + 1 < n && x >= edge(k + 1) {
        k += 1;
    }
    while k > 0 && x < edge(k) {
        k -= 1;
    }
    k
}

/// A set of cells of one partition, stored as strictly increasing indices.
#[derive(Clone, Debug, PartialEq)]
pub struct CellSet {
    partition: BoxPartition,
    indices: Vec<usize>,
}

impl CellSet {
    /// Sorts and de-duplicates `indices`; errors on out-of-range cells.
    pub fn new(partition: BoxPartition, mut indices: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= partition.len()) {
            return Err(Error::InvalidArgument(format!("cell {bad} out of range for {} cells", partition.len())));
        }
        indices.sort_unstable();
        indices.dedup();
        Ok(CellSet { partition, indices })
    }

    pub fn empty(partition: BoxPartition) -> Self {
        CellSet { partition, indices: Vec::new() }
    }

    pub fn full(partition: BoxPartition) -> Self {
        CellSet { partition, indices: (0..partition.len()).collect() }
    }

    /// All cells whose centers lie in `rect` (closed).
    pub fn from_rect(partition: BoxPartition, rect: &Domain) -> Result<Self> {
        if !partition.domain().intersects(rect) {
            return Err(Error::InvalidArgument(format!("rectangle {:?} misses the domain", rect.as_rect())));
        }
        let indices: Vec<usize> = (0..partition.len()).filter(|&c| rect.contains(partition.cell_center(c))).collect();
        if indices.is_empty() {
            return Err(Error::EmptySet);
        }
        Ok(CellSet { partition, indices })
    }

    fn from_mask(partition: BoxPartition, mask: &[bool]) -> Self {
        let indices = mask.iter().enumerate().filter_map(|(i, &m)| m.then_some(i)).collect();
        CellSet { partition, indices }
    }

    pub fn partition(&self) -> &BoxPartition {
        &self.partition
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, cell: usize) -> bool {
        self.indices.binary_search(&cell).is_ok()
    }

    /// Smallest index in the set.
    pub fn anchor(&self) -> Option<usize> {
        self.indices.first().copied()
    }

    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.partition.len()];
        for &i in &self.indices {
            m[i] = true;
        }
        m
    }

    pub fn measure(&self) -> f64 {
        self.indices.len() as f64 * self.partition.cell_measure()
    }

    pub fn indicator(&self) -> ScalarField {
        let mut values = vec![0.0; self.partition.len()];
        for &i in &self.indices {
            values[i] = 1.0;
        }
        ScalarField { partition: self.partition, values }
    }

    fn check(&self, other: &CellSet) -> Result<()> {
        if self.partition != other.partition {
            return Err(Error::PartitionMismatch);
        }
        Ok(())
    }

    pub fn union(&self, other: &CellSet) -> Result<CellSet> {
        self.check(other)?;
        let mut indices = self.indices.clone();
        indices.extend_from_slice(&other.indices);
        indices.sort_unstable();
        indices.dedup();
        Ok(CellSet { partition: self.partition, indices })
    }

    pub fn intersection(&self, other: &CellSet) -> Result<CellSet> {
        self.check(other)?;
        let indices = self.indices.iter().copied().filter(|&i| other.contains(i)).collect();
        Ok(CellSet { partition: self.partition, indices })
    }

    pub fn difference(&self, other: &CellSet) -> Result<CellSet> {
        self.check(other)?;
        let indices = self.indices.iter().copied().filter(|&i| !other.contains(i)).collect();
        Ok(CellSet { partition: self.partition, indices })
    }

    pub fn symmetric_difference(&self, other: &CellSet) -> Result<CellSet> {
        self.difference(other)?.union(&other.difference(self)?)
    }

    pub fn complement(&self) -> CellSet {
        let m = self.mask();
        let inv: Vec<bool> = m.iter().map(|b| !b).collect();
        Self::from_mask(self.partition, &inv)
    }

    /// Grows the set by `layers` cells in the 8-neighbour (Chebyshev) sense.
    pub fn dilate(&self, layers: usize) -> CellSet {
        let (px, py) = self.partition.dims();
        let mut mask = self.mask();
        for _ in 0..layers {
            let prev = mask.clone();
            for iy in 0..py {
                for ix in 0..px {
                    if prev[iy * px + ix] {
                        continue;
                    }
                    let hit = (iy.saturating_sub(1)..=(iy + 1).min(py - 1))
                        .any(|jy| (ix.saturating_sub(1)..=(ix + 1).min(px - 1)).any(|jx| prev[jy * px + jx]));
                    mask[iy * px + ix] = hit;
                }
            }
        }
        Self::from_mask(self.partition, &mask)
    }

    /// Shrinks the set by `layers` cells; cells outside the domain count as
    /// outside the set.
    pub fn erode(&self, layers: usize) -> CellSet {
        let (px, py) = self.partition.dims();
        let mut mask = self.mask();
        for _ in 0..layers {
            let prev = mask.clone();
            for iy in 0..py {
                for ix in 0..px {
                    if !prev[iy * px + ix] {
                        continue;
                    }
                    let edge = ix == 0 || iy == 0 || ix + 1 == px || iy + 1 == py;
                    let keep = !edge && (iy - 1..=iy + 1).all(|jy| (ix - 1..=ix + 1).all(|jx| prev[jy * px + jx]));
                    mask[iy * px + ix] = keep;
                }
            }
        }
        Self::from_mask(self.partition, &mask)
    }
}

/// JSON form of a cell set: `{"rect": [xmin, ymin, xmax, ymax]}` or
/// `{"cells": [i, ...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CellSetSpec {
    Rect { rect: [f64; 4] },
    Cells { cells: Vec<usize> },
}

impl CellSetSpec {
    pub fn resolve(&self, partition: &BoxPartition) -> Result<CellSet> {
        match self {
            CellSetSpec::Rect { rect } => CellSet::from_rect(*partition, &Domain::from_rect(*rect)?),
            CellSetSpec::Cells { cells } => CellSet::new(*partition, cells.clone()),
        }
    }
}

impl From<&CellSet> for CellSetSpec {
    fn from(set: &CellSet) -> Self {
        CellSetSpec::Cells { cells: set.indices.clone() }
    }
}

/// One finite value per cell.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    partition: BoxPartition,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(partition: BoxPartition, values: Vec<f64>) -> Result<Self> {
        if values.len() != partition.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} cell values, got {}",
                partition.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite value in cell {i}")));
        }
        Ok(ScalarField { partition, values })
    }

    pub(crate) fn from_vec_unchecked(partition: BoxPartition, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), partition.len());
        ScalarField { partition, values }
    }

    pub fn zeros(partition: BoxPartition) -> Self {
        ScalarField { partition, values: vec![0.0; partition.len()] }
    }

    pub fn constant(partition: BoxPartition, c: f64) -> Self {
        ScalarField { partition, values: vec![c; partition.len()] }
    }

    /// Evaluates `f` at every cell center.
    pub fn from_fn(partition: BoxPartition, f: impl Fn(Point) -> f64) -> Result<Self> {
        let values = (0..partition.len()).map(|c| f(partition.cell_center(c))).collect();
        Self::new(partition, values)
    }

    pub fn partition(&self) -> &BoxPartition {
        &self.partition
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn check_partition(&self, partition: &BoxPartition) -> Result<()> {
        if &self.partition != partition {
            return Err(Error::PartitionMismatch);
        }
        Ok(())
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `Σ values[i]·cell_measure` over the cells of `over`.
    pub fn integrate(&self, over: &CellSet) -> Result<f64> {
        self.check_partition(over.partition())?;
        let sum: f64 = over.indices().iter().map(|&i| self.values[i]).sum();
        Ok(sum * self.partition.cell_measure())
    }

    /// `⟨a, b⟩ = Σ aᵢ·bᵢ·cell_measure`.
    pub fn inner(&self, other: &ScalarField) -> Result<f64> {
        self.check_partition(&other.partition)?;
        let sum: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        Ok(sum * self.partition.cell_measure())
    }

    /// `‖a‖_{L²} = sqrt(Σ aᵢ²·cell_measure)`.
    pub fn l2_norm(&self) -> f64 {
        let ss: f64 = self.values.iter().map(|a| a * a).sum();
        (ss * self.partition.cell_measure()).sqrt()
    }

    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.partition.cell_measure()
    }

    /// Cells where the value exceeds `eps`.
    pub fn support(&self, eps: f64) -> CellSet {
        let indices = self.values.iter().enumerate().filter_map(|(i, &v)| (v > eps).then_some(i)).collect();
        CellSet { partition: self.partition, indices }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField { partition: self.partition, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_with(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<ScalarField> {
        self.check_partition(&other.partition)?;
        Ok(ScalarField {
            partition: self.partition,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &ScalarField) -> Result<ScalarField> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ScalarField) -> Result<ScalarField> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &ScalarField) -> Result<ScalarField> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> ScalarField {
        self.map(|v| c * v)
    }

    /// CSV with header `cx,cy,value`, one row per cell center.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "cx,cy,value")?;
        for (i, v) in self.values.iter().enumerate() {
            let c = self.partition.cell_center(i);
            writeln!(w, "{:?},{:?},{:?}", c.x, c.y, v)?;
        }
        Ok(())
    }

    /// Reads the CSV written by [`write_csv`](Self::write_csv); cell centers
    /// must match `partition`.
    pub fn read_csv(reader: impl BufRead, partition: BoxPartition) -> Result<ScalarField> {
        let bad = |msg: String| Error::InvalidArgument(format!("scalar field csv: {msg}"));
        let mut lines = reader.lines();
        let header = lines.next().ok_or_else(|| bad("empty input".into()))?;
        let header = header.map_err(|e| bad(e.to_string()))?;
        if header.trim() != "cx,cy,value" {
            return Err(bad(format!("unexpected header {header:?}")));
        }
        let (hx, hy) = partition.cell_size();
        let mut values = Vec::with_capacity(partition.len());
        for (k, line) in lines.enumerate() {
            let line = line.map_err(|e| bad(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| bad(format!("row {}: {e}", k + 2)))?;
            if cols.len() != 3 || k >= partition.len() {
                return Err(bad(format!("row {}: unexpected shape", k + 2)));
            }
            let c = partition.cell_center(k);
            if (cols[0] - c.x).abs() > 1e-6 * hx || (cols[1] - c.y).abs() > 1e-6 * hy {
                return Err(bad(format!("row {}: center does not match cell {k}", k + 2)));
            }
            values.push(cols[2]);
        }
        ScalarField::new(partition, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit() -> Domain {
        Domain::new(0.0, 0.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn partition_measures() {
        let p = BoxPartition::new(unit(), 1, 1).unwrap();
        assert_eq!((p.len(), p.cell_measure()), (1, 1.0));
        let p = BoxPartition::new(unit(), 10, 10).unwrap();
        assert_eq!(p.len(), 100);
        assert!((p.cell_measure() - 0.01).abs() < 1e-15);
        let room = Domain::new(0.0, 0.0, 1.52, 1.68).unwrap();
        let p = BoxPartition::new(room, 38, 42).unwrap();
        assert!((p.cell_measure() - 0.0016).abs() < 1e-15);
        assert!(BoxPartition::new(unit(), 0, 3).is_err());
    }

    #[test]
    fn locate_conventions() {
        let p = BoxPartition::new(unit(), 10, 10).unwrap();
        assert_eq!(p.locate(Point::new(0.0, 0.0)), Some(0));
        assert_eq!(p.locate(Point::new(0.3, 0.05)), Some(3));
        assert_eq!(p.locate(Point::new(0.05, 0.7)), Some(70));
        assert_eq!(p.locate(Point::new(1.0, 1.0)), Some(99));
        assert_eq!(p.locate(Point::new(1.0 + 1e-12, 0.5)), None);
        assert_eq!(p.locate(Point::new(-0.1, 0.5)), None);
    }

    #[test]
    fn every_interior_edge_goes_to_upper_cell() {
        let d = Domain::new(0.05, 0.0, 1.0, 1.68).unwrap();
        let p = BoxPartition::new(d, 37, 23).unwrap();
        for c in 0..p.len() {
            let r = p.cell_rect(c);
            assert_eq!(p.locate(Point::new(r[0], r[1])), Some(c));
            assert_eq!(p.locate(p.cell_center(c)), Some(c));
        }
    }

    #[test]
    fn rect_snapping() {
        let p = BoxPartition::new(unit(), 10, 10).unwrap();
        assert_eq!(CellSet::from_rect(p, &unit()).unwrap().len(), 100);
        let one = CellSet::from_rect(p, &Domain::new(0.31, 0.41, 0.39, 0.49).unwrap()).unwrap();
        assert_eq!(one.indices(), &[43]);
        let none = CellSet::from_rect(p, &Domain::new(0.36, 0.36, 0.44, 0.44).unwrap());
        assert!(matches!(none, Err(Error::EmptySet)));
        assert_eq!(none.unwrap_err().to_string(), "empty actuation set");
    }

    #[test]
    fn indicator_and_measure() {
        let p = BoxPartition::new(unit(), 2, 1).unwrap();
        assert_eq!(CellSet::empty(p).indicator().values(), &[0.0, 0.0]);
        assert_eq!(CellSet::full(p).indicator().values(), &[1.0, 1.0]);
        assert_eq!(CellSet::new(p, vec![0]).unwrap().indicator().values(), &[1.0, 0.0]);
        assert_eq!(CellSet::empty(p).measure(), 0.0);
        assert_eq!(CellSet::full(p).measure(), 1.0);
        let q = BoxPartition::new(unit(), 10, 10).unwrap();
        let five = CellSet::new(q, vec![1, 2, 3, 4, 5]).unwrap();
        assert!((five.measure() - 0.05).abs() < 1e-15);
    }

    #[test]
    fn integrate_examples() {
        let p = BoxPartition::new(unit(), 10, 10).unwrap();
        let full = CellSet::full(p);
        assert!((ScalarField::constant(p, 1.0).integrate(&full).unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(ScalarField::zeros(p).integrate(&full).unwrap(), 0.0);
        let mut v = vec![0.0; 100];
        v[7] = 3.0;
        let f = ScalarField::new(p, v).unwrap();
        let s = CellSet::new(p, vec![7]).unwrap();
        assert!((f.integrate(&s).unwrap() - 0.03).abs() < 1e-15);
        let other = BoxPartition::new(unit(), 5, 5).unwrap();
        assert!(matches!(f.integrate(&CellSet::full(other)), Err(Error::PartitionMismatch)));
    }

    #[test]
    fn cellset_normalizes_and_validates() {
        let p = BoxPartition::new(unit(), 3, 3).unwrap();
        let s = CellSet::new(p, vec![4, 1, 4, 0]).unwrap();
        assert_eq!(s.indices(), &[0, 1, 4]);
        assert_eq!(s.anchor(), Some(0));
        assert!(CellSet::new(p, vec![9]).is_err());
    }

    #[test]
    fn cellset_spec_json() {
        let p = BoxPartition::new(unit(), 10, 10).unwrap();
        let r: CellSetSpec = serde_json::from_str(r#"{"rect": [0.0, 0.0, 0.2, 0.1]}"#).unwrap();
        assert_eq!(r.resolve(&p).unwrap().indices(), &[0, 1]);
        let c: CellSetSpec = serde_json::from_str(r#"{"cells": [5, 2]}"#).unwrap();
        assert_eq!(c.resolve(&p).unwrap().indices(), &[2, 5]);
    }

    #[test]
    fn dilate_and_erode() {
        let p = BoxPartition::new(unit(), 5, 5).unwrap();
        let center = CellSet::new(p, vec![12]).unwrap();
        assert_eq!(center.dilate(1).len(), 9);
        assert_eq!(center.dilate(2).len(), 25);
        assert_eq!(center.dilate(1).erode(1), center);
        assert!(CellSet::full(p).erode(1).len() == 9);
    }

    #[test]
    fn scalar_csv_round_trip() {
        let p = BoxPartition::new(Domain::new(-1.0, 0.0, 1.0, 0.3).unwrap(), 4, 3).unwrap();
        let f = ScalarField::from_fn(p, |c| c.x * 0.1 + c.y.exp()).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("cx,cy,value\n"));
        let g = ScalarField::read_csv(std::io::Cursor::new(buf), p).unwrap();
        assert_eq!(f, g);
    }

    proptest! {
        #[test]
        fn partition_algebra(px in 1usize..12, py in 1usize..12, w in 0.1f64..5.0, h in 0.1f64..5.0,
                             picks in proptest::collection::vec(any::<u16>(), 0..40)) {
            let d = Domain::new(-0.3, 1.0, -0.3 + w, 1.0 + h).unwrap();
            let p = BoxPartition::new(d, px, py).unwrap();
            let n = p.len();
            let total: f64 = (0..n).map(|c| CellSet::new(p, vec![c]).unwrap().measure()).sum();
            prop_assert!((total - d.area()).abs() <= 1e-12 * d.area());
            for c in 0..n {
                prop_assert_eq!(p.locate(p.cell_center(c)), Some(c));
            }
            let s1 = CellSet::new(p, picks.iter().map(|&k| k as usize % n).collect()).unwrap();
            let s2 = s1.complement();
            let sum = s1.indicator().add(&s2.indicator()).unwrap();
            prop_assert_eq!(sum, CellSet::full(p).indicator());
            prop_assert_eq!(s1.indicator().integrate(&s1).unwrap(), s1.measure());
        }
    }
}
