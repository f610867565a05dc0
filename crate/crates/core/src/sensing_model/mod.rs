//! Relative-measurement maps and the spatial structures they live on.
//!
//! A [`MeasurementMap`] holds the sensor-to-output matrix `B` (one row per
//! sensor, one column per subsystem output). Every row compares a convex
//! combination of one subsystem's outputs with a convex combination of a
//! neighbour's outputs, so `B·1 = 0` and the generalized Laplacian
//! `L = BᵀB` is positive semidefinite with `1` in its kernel.

mod hex;

pub use hex::{
    build_hex_mirror, HexMirror, NullWitness, Segment, SegmentGeometry, SensorGeometry,
    FORWARD_NEIGHBOURS,
};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when checking the unit-gain and sign conditions of a row.
pub const RELATIVE_TOL: f64 = 1e-10;

/// Positions of the subsystems, in units of the minimum subsystem spacing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialStructure {
    dimension: usize,
    positions: Vec<Vec<f64>>,
}

impl SpatialStructure {
    /// Builds a structure, rejecting points closer than one spacing apart.
    pub fn new(dimension: usize, positions: Vec<Vec<f64>>) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidGeometry("dimension must be positive".into()));
        }
        if let Some(bad) = positions.iter().position(|p| p.len() != dimension) {
            return Err(Error::DimensionMismatch(format!(
                "position {bad} has {} coordinates, expected {dimension}",
                positions[bad].len()
            )));
        }
        for i in 0..positions.len() {
            for j in (i + 1)..positions.len() {
                let d = distance(&positions[i], &positions[j]);
                if d < 1.0 - 1e-9 {
                    return Err(Error::InvalidGeometry(format!(
                        "subsystems {i} and {j} are {d:.6} apart (< 1)"
                    )));
                }
            }
        }
        Ok(Self {
            dimension,
            positions,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn position(&self, k: usize) -> &[f64] {
        &self.positions[k]
    }

    pub fn positions(&self) -> &[Vec<f64>] {
        &self.positions
    }

    pub fn distance(&self, j: usize, k: usize) -> f64 {
        distance(&self.positions[j], &self.positions[k])
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Sensor description used to assemble a [`MeasurementMap`].
#[derive(Debug, Clone, PartialEq)]
pub struct SensorSpec {
    pub plus: usize,
    pub plus_weights: Vec<f64>,
    pub minus: usize,
    pub minus_weights: Vec<f64>,
}

/// One sensor of the interconnection graph: it reads `plus − minus`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorEdge {
    pub sensor: usize,
    pub plus: usize,
    pub minus: usize,
}

/// Sensor-to-output matrix `B` with its block structure.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementMap {
    b: DMatrix<f64>,
    block_size: usize,
    edges: Vec<SensorEdge>,
}

impl MeasurementMap {
    /// Wraps a dense matrix. The interconnection edges are read off the
    /// sign pattern of each row; rows that are not two-block relative
    /// measurements get no edge (use [`validate_relative`] to diagnose them).
    pub fn from_matrix(b: DMatrix<f64>, block_size: usize) -> Result<Self> {
        if block_size == 0 || !b.ncols().is_multiple_of(block_size) {
            return Err(Error::DimensionMismatch(format!(
                "{} columns are not a multiple of block size {block_size}",
                b.ncols()
            )));
        }
        let mut map = Self {
            b,
            block_size,
            edges: Vec::new(),
        };
        map.edges = (0..map.n_sensors())
            .filter_map(|row| map.edge_of_row(row))
            .collect();
        Ok(map)
    }

    /// Empty map over `subsystems` blocks of `block_size` outputs.
    pub fn empty(subsystems: usize, block_size: usize) -> Self {
        Self {
            b: DMatrix::zeros(0, subsystems * block_size),
            block_size,
            edges: Vec::new(),
        }
    }

    /// Builds a map from a list of sensors in row order.
    pub fn from_sensors(
        subsystems: usize,
        block_size: usize,
        sensors: &[SensorSpec],
    ) -> Result<Self> {
        let n = block_size;
        let mut b = DMatrix::zeros(sensors.len(), subsystems * n);
        let mut edges = Vec::with_capacity(sensors.len());
        for (row, s) in sensors.iter().enumerate() {
            if s.plus >= subsystems || s.minus >= subsystems || s.plus == s.minus {
                return Err(Error::InvalidArgument(format!(
                    "sensor {row} must join two distinct subsystems below {subsystems}, got {} and {}",
                    s.plus, s.minus
                )));
            }
            if s.plus_weights.len() != n || s.minus_weights.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "sensor {row} weights must have block size {n}"
                )));
            }
            for i in 0..n {
                b[(row, s.plus * n + i)] += s.plus_weights[i];
                b[(row, s.minus * n + i)] -= s.minus_weights[i];
            }
            edges.push(SensorEdge {
                sensor: row,
                plus: s.plus,
                minus: s.minus,
            });
        }
        Ok(Self {
            b,
            block_size,
            edges,
        })
    }

    /// Appends a sensor reading `wᵀ y_plus − vᵀ y_minus`.
    pub fn push_sensor(
        &mut self,
        plus: usize,
        plus_weights: &[f64],
        minus: usize,
        minus_weights: &[f64],
    ) -> Result<usize> {
        let m = self.n_subsystems();
        if plus >= m || minus >= m || plus == minus {
            return Err(Error::InvalidArgument(format!(
                "sensor must join two distinct subsystems below {m}, got {plus} and {minus}"
            )));
        }
        if plus_weights.len() != self.block_size || minus_weights.len() != self.block_size {
            return Err(Error::DimensionMismatch(format!(
                "sensor weights must have block size {}",
                self.block_size
            )));
        }
        let row = self.b.nrows();
        self.b = std::mem::replace(&mut self.b, DMatrix::zeros(0, 0)).insert_row(row, 0.0);
        let n = self.block_size;
        for i in 0..n {
            self.b[(row, plus * n + i)] += plus_weights[i];
            self.b[(row, minus * n + i)] -= minus_weights[i];
        }
        self.edges.push(SensorEdge {
            sensor: row,
            plus,
            minus,
        });
        Ok(row)
    }

    fn edge_of_row(&self, row: usize) -> Option<SensorEdge> {
        let blocks = self.touched_blocks(row);
        if blocks.len() != 2 {
            return None;
        }
        let sums: Vec<f64> = blocks.iter().map(|&k| self.block_sum(row, k)).collect();
        let (plus, minus) = if sums[0] >= sums[1] {
            (blocks[0], blocks[1])
        } else {
            (blocks[1], blocks[0])
        };
        Some(SensorEdge {
            sensor: row,
            plus,
            minus,
        })
    }

    fn touched_blocks(&self, row: usize) -> Vec<usize> {
        let n = self.block_size;
        (0..self.n_subsystems())
            .filter(|&k| (0..n).any(|i| self.b[(row, k * n + i)] != 0.0))
            .collect()
    }

    fn block_sum(&self, row: usize, block: usize) -> f64 {
        let n = self.block_size;
        (0..n).map(|i| self.b[(row, block * n + i)]).sum()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn n_sensors(&self) -> usize {
        self.b.nrows()
    }

    pub fn n_outputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_subsystems(&self) -> usize {
        self.b.ncols() / self.block_size
    }

    pub fn edges(&self) -> &[SensorEdge] {
        &self.edges
    }

    /// Number of nonzero entries of `B`.
    pub fn nnz(&self) -> usize {
        self.b.iter().filter(|v| **v != 0.0).count()
    }
}

fn unit_sensor(plus: usize, minus: usize) -> SensorSpec {
    SensorSpec {
        plus,
        plus_weights: vec![1.0],
        minus,
        minus_weights: vec![1.0],
    }
}

/// Chain of `m` subsystems: sensor `k` reads `y[k+1] − y[k]`, `p(k) = k`.
pub fn build_chain(m: usize) -> Result<(SpatialStructure, MeasurementMap)> {
    if m < 2 {
        return Err(Error::InvalidSize(format!(
            "a chain needs at least 2 subsystems, got {m}"
        )));
    }
    let sensors: Vec<SensorSpec> = (0..m - 1).map(|k| unit_sensor(k + 1, k)).collect();
    let map = MeasurementMap::from_sensors(m, 1, &sensors)?;
    let structure = SpatialStructure::new(1, (0..m).map(|k| vec![k as f64]).collect())?;
    Ok((structure, map))
}

/// Ring of `m` subsystems: sensor `k` reads `y[(k+1) mod m] − y[k]`.
///
/// The subsystems sit on a circle whose chord between neighbours is one
/// spacing, so every sensor has range exactly 1.
pub fn build_ring(m: usize) -> Result<(SpatialStructure, MeasurementMap)> {
    if m < 3 {
        return Err(Error::InvalidSize(format!(
            "a ring needs at least 3 subsystems, got {m}"
        )));
    }
    let sensors: Vec<SensorSpec> = (0..m).map(|k| unit_sensor((k + 1) % m, k)).collect();
    let map = MeasurementMap::from_sensors(m, 1, &sensors)?;
    let radius = 0.5 / (std::f64::consts::PI / m as f64).sin();
    let positions = (0..m)
        .map(|k| {
            let a = 2.0 * std::f64::consts::PI * k as f64 / m as f64;
            vec![radius * a.cos(), radius * a.sin()]
        })
        .collect();
    let structure = SpatialStructure::new(2, positions)?;
    Ok((structure, map))
}

/// Which relative-measurement condition a row breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RelativeCondition {
    /// The row must touch exactly two subsystem blocks.
    TwoBlocks,
    /// Entries inside a touched block must share one sign.
    SameSign,
    /// The positive block must sum to +1 and the negative block to −1.
    UnitGain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowViolation {
    pub row: usize,
    pub condition: RelativeCondition,
    pub magnitude: f64,
}

/// Outcome of [`validate_relative`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeReport {
    pub passed: bool,
    pub rows_checked: usize,
    pub violations: Vec<RowViolation>,
    pub worst_violation: f64,
}

/// Checks every row of `B` against the relative-measurement conditions.
pub fn validate_relative(map: &MeasurementMap) -> RelativeReport {
    let n = map.block_size;
    let mut violations = Vec::new();
    for row in 0..map.n_sensors() {
        let blocks = map.touched_blocks(row);
        if blocks.len() != 2 {
            violations.push(RowViolation {
                row,
                condition: RelativeCondition::TwoBlocks,
                magnitude: (blocks.len() as f64 - 2.0).abs(),
            });
            continue;
        }
        let mut sums = Vec::with_capacity(2);
        for &k in &blocks {
            let (mut pos, mut neg) = (0.0_f64, 0.0_f64);
            for i in 0..n {
                let v = map.b[(row, k * n + i)];
                if v > 0.0 {
                    pos += v;
                } else {
                    neg -= v;
                }
            }
            let mixed = pos.min(neg);
            if mixed > RELATIVE_TOL {
                violations.push(RowViolation {
                    row,
                    condition: RelativeCondition::SameSign,
                    magnitude: mixed,
                });
            }
            sums.push(pos - neg);
        }
        let (hi, lo) = if sums[0] >= sums[1] {
            (sums[0], sums[1])
        } else {
            (sums[1], sums[0])
        };
        let gain_err = (hi - 1.0).abs().max((lo + 1.0).abs());
        if gain_err > RELATIVE_TOL {
            violations.push(RowViolation {
                row,
                condition: RelativeCondition::UnitGain,
                magnitude: gain_err,
            });
        }
    }
    let worst_violation = violations.iter().map(|v| v.magnitude).fold(0.0, f64::max);
    RelativeReport {
        passed: violations.is_empty(),
        rows_checked: map.n_sensors(),
        violations,
        worst_violation,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongEdge {
    pub sensor: usize,
    pub j: usize,
    pub k: usize,
    pub distance: f64,
}

/// Outcome of [`validate_local`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalityReport {
    pub passed: bool,
    pub range: f64,
    pub max_distance: f64,
    pub violations: Vec<LongEdge>,
}

/// Checks that every sensor joins subsystems at most `range` apart.
pub fn validate_local(
    map: &MeasurementMap,
    structure: &SpatialStructure,
    range: f64,
) -> Result<LocalityReport> {
    if range < 1.0 {
        return Err(Error::InvalidArgument(format!(
            "range must be at least 1, got {range}"
        )));
    }
    if structure.len() != map.n_subsystems() {
        return Err(Error::DimensionMismatch(format!(
            "structure has {} subsystems, map has {}",
            structure.len(),
            map.n_subsystems()
        )));
    }
    let mut violations = Vec::new();
    let mut max_distance = 0.0_f64;
    for row in 0..map.n_sensors() {
        let blocks = map.touched_blocks(row);
        for (a, &j) in blocks.iter().enumerate() {
            for &k in &blocks[a + 1..] {
                let d = structure.distance(j, k);
                max_distance = max_distance.max(d);
                if d > range + 1e-12 {
                    violations.push(LongEdge {
                        sensor: row,
                        j,
                        k,
                        distance: d,
                    });
                }
            }
        }
    }
    Ok(LocalityReport {
        passed: violations.is_empty(),
        range,
        max_distance,
        violations,
    })
}

/// Generalized Laplacian `L = BᵀB`.
pub fn laplacian(map: &MeasurementMap) -> DMatrix<f64> {
    map.b.transpose() * &map.b
}

/// `‖B y‖` for a configuration `y`.
pub fn residual_norm(map: &MeasurementMap, y: &DVector<f64>) -> f64 {
    (&map.b * y).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;

    fn sorted_eigs(l: &DMatrix<f64>) -> Vec<f64> {
        let mut e: Vec<f64> = SymmetricEigen::new(l.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        e.sort_by(|a, b| a.partial_cmp(b).unwrap());
        e
    }

    #[test]
    fn chain_of_three_layout() {
        let (s, map) = build_chain(3).unwrap();
        let expected = DMatrix::from_row_slice(2, 3, &[-1.0, 1.0, 0.0, 0.0, -1.0, 1.0]);
        assert_eq!(map.matrix(), &expected);
        assert_eq!(map.block_size(), 1);
        assert_eq!(s.position(2), &[2.0]);
    }

    #[test]
    fn smallest_chain() {
        let (_, map) = build_chain(2).unwrap();
        assert_eq!(map.matrix(), &DMatrix::from_row_slice(1, 2, &[-1.0, 1.0]));
        assert!(matches!(build_chain(1), Err(Error::InvalidSize(_))));
    }

    #[test]
    fn chain_spectrum_small() {
        let (_, map) = build_chain(3).unwrap();
        let e = sorted_eigs(&laplacian(&map));
        for (got, want) in e.iter().zip([0.0, 1.0, 3.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn ring_spectrum_and_nullspace() {
        let (_, map) = build_ring(4).unwrap();
        let e = sorted_eigs(&laplacian(&map));
        for (got, want) in e.iter().zip([0.0, 2.0, 2.0, 4.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        let (_, map) = build_ring(3).unwrap();
        assert_eq!(
            map.matrix() * DVector::from_element(3, 1.0),
            DVector::zeros(3)
        );
        let (_, map) = build_ring(100).unwrap();
        let e = sorted_eigs(&laplacian(&map));
        assert_eq!(e.iter().filter(|v| v.abs() < 1e-9).count(), 1);
        assert!(matches!(build_ring(2), Err(Error::InvalidSize(_))));
    }

    #[test]
    fn laplacian_entries() {
        let (_, map) = build_chain(3).unwrap();
        let l = laplacian(&map);
        let expected =
            DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0]);
        assert_eq!(l, expected);
        let (_, ring) = build_ring(4).unwrap();
        let l = laplacian(&ring);
        assert!(l.diagonal().iter().all(|v| *v == 2.0));
        assert_eq!(&l * DVector::from_element(4, 1.0), DVector::zeros(4));
    }

    #[test]
    fn validate_relative_detects_scaled_row() {
        let (_, map) = build_chain(3).unwrap();
        assert!(validate_relative(&map).passed);
        let mut b = map.matrix().clone();
        b.row_mut(1).scale_mut(1.01);
        let bad = MeasurementMap::from_matrix(b, 1).unwrap();
        let report = validate_relative(&bad);
        assert!(!report.passed);
        assert!((report.worst_violation - 0.01).abs() < 1e-12);
        assert!(report
            .violations
            .iter()
            .all(|v| v.row == 1 && v.condition == RelativeCondition::UnitGain));
    }

    #[test]
    fn validate_relative_detects_structure_errors() {
        let b = DMatrix::from_row_slice(2, 3, &[-1.0, 0.5, 0.5, 0.0, -1.0, 1.0]);
        let report = validate_relative(&MeasurementMap::from_matrix(b, 1).unwrap());
        assert_eq!(report.violations[0].condition, RelativeCondition::TwoBlocks);
        let b = DMatrix::from_row_slice(1, 4, &[1.5, -0.5, -1.0, 0.0]);
        let report = validate_relative(&MeasurementMap::from_matrix(b, 2).unwrap());
        assert!(report
            .violations
            .iter()
            .any(|v| v.condition == RelativeCondition::SameSign));
    }

    #[test]
    fn chain_locality() {
        let (s, mut map) = build_chain(8).unwrap();
        assert!(validate_local(&map, &s, 1.5).unwrap().passed);
        map.push_sensor(4, &[1.0], 0, &[1.0]).unwrap();
        let report = validate_local(&map, &s, 1.5).unwrap();
        assert!(!report.passed);
        assert_eq!(report.violations.len(), 1);
        assert_eq!((report.violations[0].j, report.violations[0].k), (0, 4));
        assert!(validate_local(&map, &s, 0.5).is_err());
    }

    #[test]
    fn ring_is_local_at_unit_range() {
        let (s, map) = build_ring(12).unwrap();
        assert!(validate_relative(&map).passed);
        assert!(validate_local(&map, &s, 1.0).unwrap().passed);
    }

    #[test]
    fn structure_rejects_crowded_points() {
        assert!(SpatialStructure::new(1, vec![vec![0.0], vec![0.5]]).is_err());
        assert!(SpatialStructure::new(2, vec![vec![0.0]]).is_err());
    }

    #[test]
    fn edges_follow_orientation() {
        let (_, map) = build_chain(4).unwrap();
        assert_eq!(
            map.edges()[2],
            SensorEdge {
                sensor: 2,
                plus: 3,
                minus: 2
            }
        );
        let rebuilt = MeasurementMap::from_matrix(map.matrix().clone(), 1).unwrap();
        assert_eq!(rebuilt.edges(), map.edges());
    }
}
