//! Flat hexagonal segmented mirror with edge sensors.
//!
//! Segments are flat-topped hexagons on an axial lattice `(q, r)`; the
//! centre of `(q, r)` sits at `e·(3/2·q, √3·(r + q/2))` for edge length `e`,
//! so neighbouring centres are one pitch `√3·e` apart. Each segment carries
//! three outputs: the heights of the vertices of the equilateral triangle
//! circumscribing the hexagon (bottom-left, bottom-right, top). Any point of
//! the segment is a convex combination of those three heights.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{MeasurementMap, SensorSpec, SpatialStructure};
use crate::error::{Error, Result};

/// Axial offsets of the three "forward" neighbours; the other three are
/// their negatives.
pub const FORWARD_NEIGHBOURS: [[i32; 2]; 3] = [[1, 0], [0, 1], [1, -1]];

const SQRT3: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub axial: [i32; 2],
    pub center: [f64; 2],
    pub vertices: [[f64; 2]; 6],
    pub h_points: [[f64; 2]; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorGeometry {
    pub point: [f64; 2],
    /// Segment whose side of the sensor enters with a `+` sign.
    pub plus: usize,
    pub minus: usize,
    pub plus_weights: [f64; 3],
    pub minus_weights: [f64; 3],
    /// Index of the shared edge the sensor sits on.
    pub edge: usize,
}

/// Physical layout of the mirror (metres).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentGeometry {
    pub edge_length: f64,
    pub sensor_offset: f64,
    pub pitch: f64,
    pub segments: Vec<Segment>,
    pub sensors: Vec<SensorGeometry>,
}

/// Rigid and quadratic configurations that the edge sensors cannot see.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NullWitness {
    Piston,
    TipX,
    TiltY,
    Defocus,
}

impl NullWitness {
    pub const ALL: [NullWitness; 4] = [Self::Piston, Self::TipX, Self::TiltY, Self::Defocus];
}

#[derive(Debug, Clone)]
pub struct HexMirror {
    pub structure: SpatialStructure,
    pub map: MeasurementMap,
    pub geometry: SegmentGeometry,
}

fn hex_distance(q: i32, r: i32) -> i32 {
    (q.abs() + r.abs() + (q + r).abs()) / 2
}

/// Barycentric coordinates of `p` in the triangle `(a, b, c)`.
pub(crate) fn barycentric(p: [f64; 2], tri: &[[f64; 2]; 3]) -> [f64; 3] {
    let [a, b, c] = *tri;
    let det = (b[1] - c[1]) * (a[0] - c[0]) + (c[0] - b[0]) * (a[1] - c[1]);
    let l1 = ((b[1] - c[1]) * (p[0] - c[0]) + (c[0] - b[0]) * (p[1] - c[1])) / det;
    let l2 = ((c[1] - a[1]) * (p[0] - c[0]) + (a[0] - c[0]) * (p[1] - c[1])) / det;
    [l1, l2, 1.0 - l1 - l2]
}

impl SegmentGeometry {
    pub fn n_segments(&self) -> usize {
        self.segments.len()
    }

    /// Index of the segment at axial coordinates `(q, r)`, if present.
    pub fn find(&self, axial: [i32; 2]) -> Option<usize> {
        self.segments.iter().position(|s| s.axial == axial)
    }

    /// Sensors touching segment `k`.
    pub fn sensors_of(&self, k: usize) -> Vec<usize> {
        self.sensors
            .iter()
            .enumerate()
            .filter(|(_, s)| s.plus == k || s.minus == k)
            .map(|(i, _)| i)
            .collect()
    }

    /// Output vector in which every segment follows the height field `f`
    /// evaluated at its own h-points.
    pub fn sample(&self, mut f: impl FnMut(usize, [f64; 2]) -> f64) -> DVector<f64> {
        let mut y = DVector::zeros(3 * self.segments.len());
        for (k, seg) in self.segments.iter().enumerate() {
            for (i, h) in seg.h_points.iter().enumerate() {
                y[3 * k + i] = f(k, *h);
            }
        }
        y
    }

    /// Configuration the sensors cannot detect. The defocus witness puts
    /// every segment tangent to the paraboloid `|x|²` at its centre.
    pub fn witness(&self, kind: NullWitness) -> DVector<f64> {
        match kind {
            NullWitness::Piston => self.sample(|_, _| 1.0),
            NullWitness::TipX => self.sample(|_, h| h[0]),
            NullWitness::TiltY => self.sample(|_, h| h[1]),
            NullWitness::Defocus => self.sample(|k, h| {
                let c = self.segments[k].center;
                let fc = c[0] * c[0] + c[1] * c[1];
                fc + 2.0 * (c[0] * (h[0] - c[0]) + c[1] * (h[1] - c[1]))
            }),
        }
    }
}

/// Builds a mirror of `rings` hexagonal rings (ring 1 is the central
/// segment) with the central `hole_rings` rings removed. Every shared edge
/// carries two sensors at `±sensor_offset·edge_length` from its midpoint.
pub fn build_hex_mirror(
    rings: usize,
    hole_rings: usize,
    edge_length: f64,
    sensor_offset: f64,
) -> Result<HexMirror> {
    if rings < 1 {
        return Err(Error::InvalidGeometry(
            "at least one ring is required".into(),
        ));
    }
    if hole_rings >= rings {
        return Err(Error::InvalidGeometry(format!(
            "hole of {hole_rings} rings leaves nothing of a {rings}-ring mirror"
        )));
    }
    if !(edge_length > 0.0) {
        return Err(Error::InvalidGeometry(format!(
            "edge length must be positive, got {edge_length}"
        )));
    }
    if !(sensor_offset > 0.0 && sensor_offset < 0.5) {
        return Err(Error::InvalidGeometry(format!(
            "sensor offset must lie in (0, 0.5) edge lengths, got {sensor_offset}"
        )));
    }
    let e = edge_length;
    let span = rings as i32 - 1;
    let mut segments = Vec::new();
    for q in -span..=span {
        for r in -span..=span {
            let d = hex_distance(q, r);
            if d > span || d < hole_rings as i32 {
                continue;
            }
            let center = [e * 1.5 * q as f64, e * SQRT3 * (r as f64 + 0.5 * q as f64)];
            let mut vertices = [[0.0; 2]; 6];
            for (i, v) in vertices.iter_mut().enumerate() {
                let a = std::f64::consts::FRAC_PI_3 * i as f64;
                *v = [center[0] + e * a.cos(), center[1] + e * a.sin()];
            }
            let h_points = [
                [center[0] - 1.5 * e, center[1] - 0.5 * SQRT3 * e],
                [center[0] + 1.5 * e, center[1] - 0.5 * SQRT3 * e],
                [center[0], center[1] + SQRT3 * e],
            ];
            segments.push(Segment {
                axial: [q, r],
                center,
                vertices,
                h_points,
            });
        }
    }

    let index_of = |axial: [i32; 2]| segments.iter().position(|s| s.axial == axial);
    let mut sensors = Vec::new();
    let mut edge = 0;
    for (j, seg) in segments.iter().enumerate() {
        for dir in FORWARD_NEIGHBOURS {
            let Some(k) = index_of([seg.axial[0] + dir[0], seg.axial[1] + dir[1]]) else {
                continue;
            };
            let cj = seg.center;
            let ck = segments[k].center;
            let mid = [(cj[0] + ck[0]) / 2.0, (cj[1] + ck[1]) / 2.0];
            let n = [(ck[0] - cj[0]) / (SQRT3 * e), (ck[1] - cj[1]) / (SQRT3 * e)];
            let t = [-n[1], n[0]];
            for sign in [-1.0, 1.0] {
                let s = sign * sensor_offset * e;
                let point = [mid[0] + s * t[0], mid[1] + s * t[1]];
                sensors.push(SensorGeometry {
                    point,
                    plus: j,
                    minus: k,
                    plus_weights: barycentric(point, &seg.h_points),
                    minus_weights: barycentric(point, &segments[k].h_points),
                    edge,
                });
            }
            edge += 1;
        }
    }

    let specs: Vec<SensorSpec> = sensors
        .iter()
        .map(|s| SensorSpec {
            plus: s.plus,
            plus_weights: s.plus_weights.to_vec(),
            minus: s.minus,
            minus_weights: s.minus_weights.to_vec(),
        })
        .collect();
    let map = MeasurementMap::from_sensors(segments.len(), 3, &specs)?;
    let pitch = SQRT3 * e;
    let structure = SpatialStructure::new(
        2,
        segments
            .iter()
            .map(|s| vec![s.center[0] / pitch, s.center[1] / pitch])
            .collect(),
    )?;
    let geometry = SegmentGeometry {
        edge_length: e,
        sensor_offset,
        pitch,
        segments,
        sensors,
    };
    Ok(HexMirror {
        structure,
        map,
        geometry,
    })
}
