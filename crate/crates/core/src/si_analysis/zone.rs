use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SAMPLES: usize = 4096;
/// Loop gain above which the lowest sampled frequency is taken to sit on a
/// pole at the origin when closing the Nyquist curve.
const INDENT_GAIN: f64 = 1e3;

/// Region of the complex plane the spatial loop gain must avoid.
///
/// The base set is the arc `−1/(1 + β·|Φ̄|·i)`, `β ∈ [−1, 1]`, on the circle
/// through `0` and `−1`. The margin zone rotates that arc by up to `±φ_m`
/// about the origin and scales it by `[1/g_m, 1]`. In polar form the arc is
/// `cos t · e^{i(π−t)}` for `t ∈ [−T, T]`, `T = atan|Φ̄|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExclusionZone {
    phi_abs: f64,
    gain_margin: f64,
    phase_margin: f64,
}

/// Serializable summary of a zone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneGeometry {
    pub center: [f64; 2],
    pub radius: f64,
    /// Arc extent on each side of `−1`, measured at the circle centre.
    pub theta: f64,
    /// The same extent seen from the origin.
    pub half_angle_at_origin: f64,
    pub phase_range: [f64; 2],
    pub gain_range: [f64; 2],
    pub arc_endpoints: [[f64; 2]; 2],
    pub crosses_imag_axis: bool,
}

impl ExclusionZone {
    pub fn new(phi_abs: f64, gain_margin: f64, phase_margin: f64) -> Result<Self> {
        if !(phi_abs >= 0.0 && phi_abs.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "|phi_bar| must be finite and non-negative, got {phi_abs}"
            )));
        }
        if !(gain_margin >= 1.0 && gain_margin.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gain margin must be at least 1, got {gain_margin}"
            )));
        }
        if !(0.0..PI).contains(&phase_margin) {
            return Err(Error::InvalidArgument(format!(
                "phase margin must lie in [0, pi), got {phase_margin}"
            )));
        }
        Ok(Self {
            phi_abs,
            gain_margin,
            phase_margin,
        })
    }

    /// The bare arc, no margins.
    pub fn arc(phi_abs: f64) -> Result<Self> {
        Self::new(phi_abs, 1.0, 0.0)
    }

    pub fn phi_abs(&self) -> f64 {
        self.phi_abs
    }

    pub fn gain_margin(&self) -> f64 {
        self.gain_margin
    }

    pub fn phase_margin(&self) -> f64 {
        self.phase_margin
    }

    pub fn center(&self) -> Complex64 {
        Complex64::new(-0.5, 0.0)
    }

    pub fn radius(&self) -> f64 {
        0.5
    }

    /// `2·atan|Φ̄|`.
    pub fn theta(&self) -> f64 {
        2.0 * self.phi_abs.atan()
    }

    /// `atan|Φ̄|`.
    pub fn half_angle_at_origin(&self) -> f64 {
        self.phi_abs.atan()
    }

    pub fn arc_point(&self, beta: f64) -> Complex64 {
        -1.0 / Complex64::new(1.0, beta * self.phi_abs)
    }

    pub fn endpoints(&self) -> [Complex64; 2] {
        [self.arc_point(-1.0), self.arc_point(1.0)]
    }

    /// Argument range covered, around `π`.
    pub fn phase_range(&self) -> [f64; 2] {
        let u = self.half_angle_at_origin() + self.phase_margin;
        [PI - u, PI + u]
    }

    pub fn gain_range(&self) -> [f64; 2] {
        [1.0 / self.gain_margin, 1.0]
    }

    /// The zone reaches the right of the imaginary axis direction once the
    /// arc half-angle plus the phase margin passes `π/2`.
    pub fn crosses_imag_axis(&self) -> bool {
        self.half_angle_at_origin() + self.phase_margin > PI / 2.0
    }

    /// Radii covered along the ray at angle `π + psi`, if any.
    pub fn radial_extent(&self, psi: f64) -> Option<(f64, f64)> {
        let t_max = self.half_angle_at_origin();
        let a = (-t_max).max(-self.phase_margin - psi);
        let b = t_max.min(self.phase_margin - psi);
        if a > b + 1e-15 {
            return None;
        }
        let b = b.max(a);
        let c_min = a.cos().min(b.cos());
        let c_max = 0.0f64.clamp(a, b).cos();
        Some((c_min / self.gain_margin, c_max))
    }

    fn extent_any_branch(&self, psi: f64) -> Vec<(f64, f64)> {
        [psi, psi - 2.0 * PI, psi + 2.0 * PI]
            .iter()
            .filter_map(|p| self.radial_extent(*p))
            .collect()
    }

    pub fn contains(&self, z: Complex64) -> bool {
        let rho = z.norm();
        if rho == 0.0 {
            return false;
        }
        let psi = (-z).arg();
        let tol = 1e-12;
        self.extent_any_branch(psi)
            .iter()
            .any(|(lo, hi)| rho >= lo - tol && rho <= hi + tol)
    }

    fn distance_to_ray(&self, z: Complex64, psi: f64) -> f64 {
        let Some((lo, hi)) = self.radial_extent(psi) else {
            return f64::INFINITY;
        };
        let dir = Complex64::from_polar(1.0, PI + psi);
        let s = (z * dir.conj()).re.clamp(lo, hi);
        (z - dir * s).norm()
    }

    /// Euclidean distance from `z` to the zone, zero inside.
    pub fn distance(&self, z: Complex64) -> f64 {
        if self.contains(z) {
            return 0.0;
        }
        let u = self.half_angle_at_origin() + self.phase_margin;
        if u == 0.0 {
            return self.distance_to_ray(z, 0.0);
        }
        let step = 2.0 * u / SAMPLES as f64;
        let (mut best_psi, mut best) = (0.0, f64::INFINITY);
        for i in 0..=SAMPLES {
            let psi = -u + step * i as f64;
            let d = self.distance_to_ray(z, psi);
            if d < best {
                best = d;
                best_psi = psi;
            }
        }
        let (mut lo, mut hi) = ((best_psi - step).max(-u), (best_psi + step).min(u));
        for _ in 0..60 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if self.distance_to_ray(z, m1) < self.distance_to_ray(z, m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        best.min(self.distance_to_ray(z, 0.5 * (lo + hi)))
    }

    /// Distance to the annular sector that encloses the zone, a cheap lower
    /// bound on [`Self::distance`].
    fn distance_lower_bound(&self, z: Complex64) -> f64 {
        let t = self.half_angle_at_origin();
        let u = t + self.phase_margin;
        let (lo, hi) = (t.cos() / self.gain_margin, 1.0);
        let rho = z.norm();
        let psi = (-z).arg();
        if u >= PI || psi.abs() <= u {
            return (rho - rho.clamp(lo, hi)).abs();
        }
        [-u, u]
            .iter()
            .map(|edge| {
                let dir = Complex64::from_polar(1.0, PI + edge);
                let s = (z * dir.conj()).re.clamp(lo, hi);
                (z - dir * s).norm()
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn geometry(&self) -> ZoneGeometry {
        let [e0, e1] = self.endpoints();
        ZoneGeometry {
            center: [-0.5, 0.0],
            radius: 0.5,
            theta: self.theta(),
            half_angle_at_origin: self.half_angle_at_origin(),
            phase_range: self.phase_range(),
            gain_range: self.gain_range(),
            arc_endpoints: [[e0.re, e0.im], [e1.re, e1.im]],
            crosses_imag_axis: self.crosses_imag_axis(),
        }
    }
}

/// How close a sampled loop gain comes to a zone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clearance {
    pub min_distance: f64,
    /// Index of the closest sample.
    pub closest: usize,
    /// Some sample lies inside the zone, or the closed curve winds around it.
    pub violation: bool,
    /// Winding numbers of the closed curve about the two arc endpoints and
    /// `−1`, counter-clockwise positive.
    pub winding: [i32; 3],
}

/// Distance from the loop gain `L(iω)`, sampled on increasing `ω > 0`, to
/// `zone`, with an encirclement check. The curve is closed by its mirror
/// image for `ω < 0`; if the gain at the first sample exceeds 1e3 the gap
/// is bridged by a clockwise arc through the positive real axis (the image
/// of the indentation around a pole at the origin), otherwise by a chord.
pub fn nyquist_clearance(curve: &[Complex64], zone: &ExclusionZone) -> Result<Clearance> {
    if curve.is_empty() {
        return Err(Error::InvalidArgument("empty Nyquist curve".into()));
    }
    if curve.iter().any(|z| !z.is_finite()) {
        return Err(Error::InvalidArgument(
            "Nyquist curve has non-finite samples".into(),
        ));
    }
    // Exact distances only where the enclosing-sector bound can still win.
    let mut order: Vec<(f64, usize)> = curve
        .iter()
        .map(|z| zone.distance_lower_bound(*z))
        .zip(0..)
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (mut closest, mut min_distance) = (0, f64::INFINITY);
    for (bound, i) in order {
        if bound >= min_distance {
            break;
        }
        let d = zone.distance(curve[i]);
        if d < min_distance {
            (closest, min_distance) = (i, d);
        }
    }
    let inside = min_distance == 0.0;

    let closed = close_curve(curve);
    let [e0, e1] = zone.endpoints();
    let winding = [e0, Complex64::new(-1.0, 0.0), e1].map(|w| winding_number(&closed, w));
    Ok(Clearance {
        min_distance,
        closest,
        violation: inside || winding.iter().any(|w| *w != 0),
        winding,
    })
}

fn close_curve(curve: &[Complex64]) -> Vec<Complex64> {
    let mut out: Vec<Complex64> = curve.iter().rev().map(|z| z.conj()).collect();
    let first = curve[0];
    if first.norm() > INDENT_GAIN {
        let (r0, a0) = first.conj().to_polar();
        let (r1, mut a1) = first.to_polar();
        while a1 > a0 {
            a1 -= 2.0 * PI;
        }
        for i in 1..64 {
            let f = i as f64 / 64.0;
            out.push(Complex64::from_polar(
                r0 + (r1 - r0) * f,
                a0 + (a1 - a0) * f,
            ));
        }
    }
    out.extend_from_slice(curve);
    out
}

fn winding_number(closed: &[Complex64], w: Complex64) -> i32 {
    let mut total = 0.0;
    for i in 0..closed.len() {
        let a = closed[i] - w;
        let b = closed[(i + 1) % closed.len()] - w;
        total += (b / a).arg();
    }
    (total / (2.0 * PI)).round() as i32
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (n - 1) as f64))
            .collect()
    }

    #[test]
    fn degenerate_zone_is_minus_one() {
        let z = ExclusionZone::arc(0.0).unwrap();
        assert!(z.contains(Complex64::new(-1.0, 0.0)));
        assert!(!z.contains(Complex64::new(-0.9, 0.0)));
        assert!(!z.contains(Complex64::new(-1.0, 0.01)));
        assert!((z.distance(Complex64::new(0.0, 0.0)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pure_margin_sector() {
        let z = ExclusionZone::new(0.0, 2.0, PI / 4.0).unwrap();
        assert!(z.contains(Complex64::from_polar(0.5, PI + PI / 4.0)));
        assert!(z.contains(Complex64::from_polar(0.75, PI - 0.3)));
        assert!(!z.contains(Complex64::from_polar(0.49, PI)));
        assert!(!z.contains(Complex64::from_polar(0.75, PI - 0.8)));
        assert!(!z.crosses_imag_axis());
    }

    #[test]
    fn arc_lies_on_the_circle() {
        let z = ExclusionZone::arc(1.591).unwrap();
        for beta in [-1.0, -0.3, 0.0, 0.7, 1.0] {
            let p = z.arc_point(beta);
            assert!(((p - z.center()).norm() - 0.5).abs() < 1e-12);
            assert!(z.contains(p));
            assert!(z.distance(p) == 0.0);
        }
        let [e0, e1] = z.endpoints();
        assert!((e0.arg().abs() - (PI - 1.591f64.atan())).abs() < 1e-12);
        assert!(((e1 - z.center()).arg().abs() - (PI - z.theta())).abs() < 1e-12);
        assert!(!z.contains(Complex64::new(-0.5, 0.0)));
    }

    #[test]
    fn imaginary_axis_crossing() {
        assert!(ExclusionZone::new(1.5914, 2.0, PI / 4.0)
            .unwrap()
            .crosses_imag_axis());
        assert!(!ExclusionZone::new(0.1, 2.0, PI / 4.0)
            .unwrap()
            .crosses_imag_axis());
        let z = ExclusionZone::new(1.5914, 2.0, PI / 4.0).unwrap();
        assert!(z.contains(Complex64::new(0.0, 0.3)));
    }

    #[test]
    fn distance_matches_brute_force() {
        let z = ExclusionZone::new(0.8, 1.5, 0.3).unwrap();
        let mut pts = Vec::new();
        for i in 0..=400 {
            let t = -0.8f64.atan() + 2.0 * 0.8f64.atan() * i as f64 / 400.0;
            for j in 0..=40 {
                let a = -0.3 + 0.6 * j as f64 / 40.0;
                for r in [1.0 / 1.5, 1.0] {
                    pts.push(Complex64::from_polar(r * t.cos(), PI - t + a));
                }
            }
        }
        for q in [
            Complex64::new(0.2, 0.1),
            Complex64::new(-2.0, 0.5),
            Complex64::new(-0.3, -0.8),
        ] {
            let brute = pts
                .iter()
                .map(|p| (p - q).norm())
                .fold(f64::INFINITY, f64::min);
            let d = z.distance(q);
            assert!(d <= brute + 1e-12);
            assert!(brute - d < 5e-3, "{d} vs {brute}");
        }
    }

    #[test]
    fn sector_bound_never_exceeds_distance() {
        for (phi, gm, pm) in [
            (0.0, 1.0, 0.0),
            (1.59, 2.0, 0.785),
            (0.3, 1.5, 0.2),
            (5.0, 3.0, 1.2),
        ] {
            let zone = ExclusionZone::new(phi, gm, pm).unwrap();
            for i in 0..400 {
                let z = Complex64::from_polar(0.05 + 0.01 * i as f64, 0.37 * i as f64);
                assert!(
                    zone.distance_lower_bound(z) <= zone.distance(z) + 1e-12,
                    "{phi} {gm} {pm} {z}"
                );
            }
        }
    }

    #[test]
    fn integrator_clearance_to_minus_one() {
        let k = 3.0;
        let curve: Vec<Complex64> = logspace(-3.0, 5.0, 2000)
            .iter()
            .map(|w| k / Complex64::new(0.0, w * k))
            .collect();
        let c = nyquist_clearance(&curve, &ExclusionZone::arc(0.0).unwrap()).unwrap();
        assert!((c.min_distance - 1.0).abs() < 1e-3);
        assert!(!c.violation);
        assert_eq!(c.winding, [0, 0, 0]);
    }

    #[test]
    fn encirclement_is_flagged() {
        let loop_gain = |k: f64, w: f64| {
            let s = Complex64::new(0.0, w);
            k / (s * (s + 1.0) * (s + 1.0))
        };
        let zone = ExclusionZone::arc(0.0).unwrap();
        let omega = logspace(-4.0, 3.0, 4000);
        let stable: Vec<_> = omega.iter().map(|w| loop_gain(1.0, *w)).collect();
        let unstable: Vec<_> = omega.iter().map(|w| loop_gain(4.0, *w)).collect();
        let c = nyquist_clearance(&stable, &zone).unwrap();
        assert!(!c.violation && c.winding[1] == 0);
        let c = nyquist_clearance(&unstable, &zone).unwrap();
        assert!(c.violation);
        assert_eq!(c.winding[1], -2);
    }

    #[test]
    fn passing_through_the_zone_is_a_violation() {
        let zone = ExclusionZone::new(1.0, 2.0, 0.0).unwrap();
        let curve = vec![
            Complex64::new(-0.2, 0.8),
            Complex64::new(-0.5, 0.0),
            Complex64::new(-0.2, -0.8),
        ];
        let c = nyquist_clearance(&curve, &zone).unwrap();
        assert!(c.violation);
        assert_eq!(c.min_distance, 0.0);
        assert_eq!(c.closest, 1);
    }
}
