//! Zero-order-hold simulation and trace storage.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::disturbance::{DisturbanceModel, WindGenerator, STREAM_NOISE};
use super::ClosedLoop;
use crate::error::{Error, Result};
use crate::sensing_model::SpatialStructure;

const MAGIC: &[u8; 8] = b"RSTRACE1";

/// Growth factor over the input scale that counts as divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// Which output groups to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSet {
    pub y: bool,
    pub u: bool,
    pub z: bool,
}

impl Default for ChannelSet {
    fn default() -> Self {
        Self {
            y: true,
            u: true,
            z: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    /// Sensor noise density; each sample gets std `noise_std/√dt`.
    pub noise_std: f64,
    /// Keep one sample in `record_every`.
    pub record_every: usize,
    pub channels: ChannelSet,
    pub initial_state: Option<Vec<f64>>,
}

impl SimulationConfig {
    pub fn new(dt: f64, horizon: f64, seed: u64) -> Self {
        Self {
            dt,
            horizon,
            seed,
            noise_std: 0.0,
            record_every: 1,
            channels: ChannelSet::default(),
            initial_state: None,
        }
    }

    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// Recorded channels, one column per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTrace {
    pub dt: f64,
    pub record_every: usize,
    pub horizon: f64,
    pub seed: u64,
    /// `y0`, `u3`, `z5`, ... in output order.
    pub channels: Vec<String>,
    pub columns: Vec<Vec<f64>>,
    pub diverged: bool,
    pub divergence_time: Option<f64>,
    pub wind_regularized: bool,
}

impl SimulationTrace {
    pub fn n_records(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    /// Spacing of recorded samples.
    pub fn sample_dt(&self) -> f64 {
        self.dt * self.record_every as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_records())
            .map(|i| i as f64 * self.sample_dt())
            .collect()
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c == name)
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.channel_index(name).map(|i| self.columns[i].as_slice())
    }

    /// Indices of the `y` channels in output order, if all are present.
    pub fn y_channels(&self, n_y: usize) -> Result<Vec<usize>> {
        (0..n_y)
            .map(|i| {
                self.channel_index(&format!("y{i}")).ok_or_else(|| {
                    Error::TraceMismatch(format!("trace does not record channel y{i}"))
                })
            })
            .collect()
    }
}

/// Exact discretization of `(A, B)` over `dt` under a zero-order hold.
pub fn discretize(a: &DMatrix<f64>, b: &DMatrix<f64>, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, m) = (a.nrows(), b.ncols());
    if n == 0 {
        return (DMatrix::zeros(0, 0), DMatrix::zeros(0, m));
    }
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * dt));
    aug.view_mut((0, n), (n, m)).copy_from(&(b * dt));
    let e = aug.exp();
    (
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, m)).into_owned(),
    )
}

/// Runs the loop from `t = 0` for `round(T/dt)` steps. Static offsets,
/// wind and sensor noise come from separate random streams of the seed, so
/// two systems simulated with one seed see the same disturbance.
pub fn simulate(
    system: &ClosedLoop,
    structure: &SpatialStructure,
    disturbance: &DisturbanceModel,
    config: &SimulationConfig,
) -> Result<SimulationTrace> {
    if !(config.dt > 0.0 && config.horizon >= config.dt) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < dt <= T, got dt={} T={}",
            config.dt, config.horizon
        )));
    }
    if config.record_every == 0 {
        return Err(Error::InvalidArgument(
            "record_every must be at least 1".into(),
        ));
    }
    if !(config.noise_std >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise std must be nonnegative, got {}",
            config.noise_std
        )));
    }
    let (ny, nz) = (system.n_y, system.n_z);
    if structure.is_empty() || ny % structure.len() != 0 {
        return Err(Error::DimensionMismatch(format!(
            "{ny} outputs over {} subsystems",
            structure.len()
        )));
    }
    let block_size = ny / structure.len();
    let ss = &system.system;
    let n = ss.n_states();

    let (ad, bd) = discretize(&ss.a, &ss.b, config.dt);
    let bd_d = bd.columns(0, ny).into_owned();
    let bd_n = bd.columns(ny, nz).into_owned();

    let mut rows = Vec::new();
    let mut channels = Vec::new();
    let (oy, ou, oz) = system.output_offsets();
    for (on, prefix, offset, count) in [
        (config.channels.y, "y", oy, ny),
        (config.channels.u, "u", ou, ny),
        (config.channels.z, "z", oz, nz),
    ] {
        if on {
            for i in 0..count {
                rows.push(offset + i);
                channels.push(format!("{prefix}{i}"));
            }
        }
    }
    let c_sel = ss.c.select_rows(&rows);
    let d_sel = ss.d.select_rows(&rows);
    let d_sel_d = d_sel.columns(0, ny).into_owned();
    let d_sel_n = d_sel.columns(ny, nz).into_owned();

    let offsets = disturbance.draw_offsets(ny, config.seed)?;
    let mut wind = match &disturbance.wind {
        Some(model) => Some(WindGenerator::new(
            structure,
            block_size,
            model,
            config.dt,
            config.seed,
        )?),
        None => None,
    };
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed);
    noise_rng.set_stream(STREAM_NOISE);
    let noise_scale = config.noise_std / config.dt.sqrt();

    let mut x = match &config.initial_state {
        Some(v) if v.len() == n => DVector::from_column_slice(v),
        Some(v) => {
            return Err(Error::DimensionMismatch(format!(
                "initial state has {} entries, system {n}",
                v.len()
            )))
        }
        None => DVector::zeros(n),
    };
    let mut x_next = DVector::zeros(n);
    let mut d = DVector::zeros(ny);
    let mut noise = DVector::zeros(nz);
    let mut out = DVector::zeros(rows.len());

    let steps = config.n_steps();
    let n_records = steps.div_ceil(config.record_every);
    let mut columns: Vec<Vec<f64>> = (0..rows.len())
        .map(|_| Vec::with_capacity(n_records))
        .collect();
    let mut scale = x.norm();
    let mut diverged = false;
    let mut divergence_time = None;

    for step in 0..steps {
        d.copy_from(&offsets);
        if let Some(w) = &wind {
            d += w.current();
        }
        if noise_scale > 0.0 {
            for v in noise.iter_mut() {
                *v = noise_scale * noise_rng.sample::<f64, _>(StandardNormal);
            }
        }
        scale = scale.max(d.norm()).max(noise.norm());

        if step % config.record_every == 0 {
            out.gemv(1.0, &c_sel, &x, 0.0);
            out.gemv(1.0, &d_sel_d, &d, 1.0);
            if noise_scale > 0.0 {
                out.gemv(1.0, &d_sel_n, &noise, 1.0);
            }
            for (col, v) in columns.iter_mut().zip(out.iter()) {
                col.push(*v);
            }
        }

        if n > 0 {
            x_next.gemv(1.0, &ad, &x, 0.0);
            x_next.gemv(1.0, &bd_d, &d, 1.0);
            if noise_scale > 0.0 {
                x_next.gemv(1.0, &bd_n, &noise, 1.0);
            }
            std::mem::swap(&mut x, &mut x_next);
            if !diverged {
                let norm = x.norm();
                if !norm.is_finite() || norm > DIVERGENCE_FACTOR * scale.max(f64::MIN_POSITIVE) {
                    diverged = true;
                    divergence_time = Some((step + 1) as f64 * config.dt);
                }
            }
        }
        if let Some(w) = &mut wind {
            w.advance();
        }
    }

    Ok(SimulationTrace {
        dt: config.dt,
        record_every: config.record_every,
        horizon: config.horizon,
        seed: config.seed,
        channels,
        columns,
        diverged,
        divergence_time,
        wind_regularized: wind.as_ref().is_some_and(|w| w.regularized()),
    })
}

/// Long format: `t, channel_id, value`.
pub fn write_trace_csv<W: Write>(trace: &SimulationTrace, w: W) -> Result<()> {
    let times = trace.times();
    let rows = times.iter().enumerate().flat_map(|(i, t)| {
        trace
            .channels
            .iter()
            .zip(&trace.columns)
            .map(move |(name, col)| (*t, name.as_str(), col[i]))
    });
    crate::export::write_csv(w, &["t", "channel_id", "value"], rows)
}

fn put_u64<W: Write>(w: &mut W, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f64<W: Write>(w: &mut W, v: f64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

/// Columnar little-endian layout: magic, `dt`, `record_every`, `T`, seed,
/// flags, divergence time (NaN if none), channel names (length-prefixed
/// UTF-8), record count, then each channel's samples in turn.
pub fn write_trace_binary<W: Write>(trace: &SimulationTrace, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    put_f64(&mut w, trace.dt)?;
    put_u64(&mut w, trace.record_every as u64)?;
    put_f64(&mut w, trace.horizon)?;
    put_u64(&mut w, trace.seed)?;
    let flags = u64::from(trace.diverged) | (u64::from(trace.wind_regularized) << 1);
    put_u64(&mut w, flags)?;
    put_f64(&mut w, trace.divergence_time.unwrap_or(f64::NAN))?;
    put_u64(&mut w, trace.channels.len() as u64)?;
    for name in &trace.channels {
        put_u64(&mut w, name.len() as u64)?;
        w.write_all(name.as_bytes())?;
    }
    put_u64(&mut w, trace.n_records() as u64)?;
    for col in &trace.columns {
        for v in col {
            put_f64(&mut w, *v)?;
        }
    }
    Ok(())
}

fn get_8<R: Read>(r: &mut R) -> Result<[u8; 8]> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn get_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(get_8(r)?))
}

fn get_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_le_bytes(get_8(r)?))
}

fn get_len<R: Read>(r: &mut R, what: &str) -> Result<usize> {
    let v = get_u64(r)?;
    if v > (1 << 40) {
        return Err(Error::TraceMismatch(format!("implausible {what} {v}")));
    }
    Ok(v as usize)
}

pub fn read_trace_binary<R: Read>(mut r: R) -> Result<SimulationTrace> {
    if &get_8(&mut r)? != MAGIC {
        return Err(Error::TraceMismatch("not a RSTRACE1 file".into()));
    }
    let dt = get_f64(&mut r)?;
    let record_every = get_len(&mut r, "decimation")?;
    let horizon = get_f64(&mut r)?;
    let seed = get_u64(&mut r)?;
    let flags = get_u64(&mut r)?;
    let div = get_f64(&mut r)?;
    let n_channels = get_len(&mut r, "channel count")?;
    let mut channels = Vec::with_capacity(n_channels.min(1 << 16));
    for _ in 0..n_channels {
        let len = get_len(&mut r, "name length")?;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf)?;
        channels.push(
            String::from_utf8(buf)
                .map_err(|e| Error::TraceMismatch(format!("channel name: {e}")))?,
        );
    }
    let n_records = get_len(&mut r, "record count")?;
    let mut columns = Vec::with_capacity(n_channels);
    for _ in 0..n_channels {
        let mut col = Vec::with_capacity(n_records.min(1 << 24));
        for _ in 0..n_records {
            col.push(get_f64(&mut r)?);
        }
        columns.push(col);
    }
    Ok(SimulationTrace {
        dt,
        record_every,
        horizon,
        seed,
        channels,
        columns,
        diverged: flags & 1 != 0,
        divergence_time: if div.is_nan() { None } else { Some(div) },
        wind_regularized: flags & 2 != 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::{ModalController, DEFAULT_ROLLOFF};
    use crate::plant_sim::{assemble_closed_loop, PlantModel, StaticOffsets};
    use crate::robustness::worst_case_delta;
    use crate::sensing_model::build_chain;
    use crate::spectral::{decompose, DEFAULT_RANK_TOL};

    fn scalar_setup(
        k0: f64,
    ) -> (
        SpatialStructure,
        ClosedLoop,
        crate::spectral::ModalDecomposition,
    ) {
        let (s, map) = build_chain(2).unwrap();
        let d = decompose(&map, DEFAULT_RANK_TOL).unwrap();
        let c = ModalController::uniform(&d, k0, None).unwrap();
        let cl =
            assemble_closed_loop(&PlantModel::Static { gain: 1.0 }, Some(&c), &map, None).unwrap();
        (s, cl, d)
    }

    #[test]
    fn quiet_system_stays_at_zero() {
        let (s, cl, _) = scalar_setup(3.0);
        let cfg = SimulationConfig::new(1e-3, 1.0, 1);
        let t = simulate(&cl, &s, &DisturbanceModel::none(), &cfg).unwrap();
        assert!(t.columns.iter().all(|c| c.iter().all(|v| *v == 0.0)));
        assert!(!t.diverged);
        assert_eq!(t.n_records(), 1000);
    }

    #[test]
    fn step_response_matches_closed_form() {
        let k0 = 2.0;
        let (s, cl, d) = scalar_setup(k0);
        // the observable mode is (y1 - y0)/√2 with √λ = √2
        let offsets = vec![-0.5, 0.5];
        let dist = DisturbanceModel {
            offsets: StaticOffsets::Fixed { values: offsets },
            wind: None,
        };
        let dt = 0.005 / k0;
        let cfg = SimulationConfig {
            channels: ChannelSet {
                y: true,
                u: false,
                z: false,
            },
            ..SimulationConfig::new(dt, 3.0, 0)
        };
        let t = simulate(&cl, &s, &dist, &cfg).unwrap();
        let q = d.q().column(0);
        let times = t.times();
        let d0 = q[0] * -0.5 + q[1] * 0.5;
        for i in (0..t.n_records()).step_by(37) {
            let modal = q[0] * t.columns[0][i] + q[1] * t.columns[1][i];
            let want = d0 * (-k0 * times[i]).exp();
            assert!(
                (modal - want).abs() <= 1e-3 * d0.abs(),
                "t={} {modal} vs {want}",
                times[i]
            );
        }
        // the unobservable common mode is untouched
        let common = t.columns[0].last().unwrap() + t.columns[1].last().unwrap();
        assert!(common.abs() < 1e-12);
    }

    #[test]
    fn bit_identical_per_seed() {
        let (s, map) = build_chain(6).unwrap();
        let d = decompose(&map, DEFAULT_RANK_TOL).unwrap();
        let c = ModalController::uniform(&d, 5.0, Some(DEFAULT_ROLLOFF)).unwrap();
        let cl =
            assemble_closed_loop(&PlantModel::segment_default(1), Some(&c), &map, None).unwrap();
        let mut cfg = SimulationConfig::new(5e-4, 0.5, 42);
        cfg.noise_std = 1e-3;
        let dist = DisturbanceModel::default();
        let a = simulate(&cl, &s, &dist, &cfg).unwrap();
        let b = simulate(&cl, &s, &dist, &cfg).unwrap();
        assert_eq!(a, b);
        cfg.seed = 43;
        assert_ne!(a, simulate(&cl, &s, &dist, &cfg).unwrap());
    }

    #[test]
    fn worst_case_error_diverges() {
        let (s, map) = build_chain(8).unwrap();
        let d = decompose(&map, DEFAULT_RANK_TOL).unwrap();
        let b = d.n0() - 1;
        let delta = worst_case_delta(&map, &d, b, 1.0).unwrap() * 3.0;
        let c = ModalController::uniform(&d, 2.0, None).unwrap();
        let plant = PlantModel::Static { gain: 1.0 };
        let nominal = assemble_closed_loop(&plant, Some(&c), &map, None).unwrap();
        let bad = assemble_closed_loop(&plant, Some(&c), &map, Some(&delta)).unwrap();
        let unstable = |cl: &ClosedLoop| cl.poles().unwrap()[0].re > 1e-9;
        assert!(!unstable(&nominal));
        assert!(unstable(&bad));
        let mut cfg = SimulationConfig::new(1e-3, 20.0, 3);
        cfg.noise_std = 1e-3;
        let dist = DisturbanceModel::default();
        assert!(!simulate(&nominal, &s, &dist, &cfg).unwrap().diverged);
        let t = simulate(&bad, &s, &dist, &cfg).unwrap();
        assert!(t.diverged);
        assert!(t.divergence_time.is_some());
    }

    #[test]
    fn decimation_and_round_trip() {
        let (s, cl, _) = scalar_setup(1.0);
        let mut cfg = SimulationConfig::new(1e-2, 1.0, 7);
        cfg.record_every = 3;
        cfg.noise_std = 0.1;
        cfg.channels = ChannelSet {
            y: true,
            u: true,
            z: true,
        };
        let t = simulate(&cl, &s, &DisturbanceModel::default(), &cfg).unwrap();
        assert_eq!(t.n_records(), 34);
        assert_eq!(t.channels, vec!["y0", "y1", "u0", "u1", "z0"]);
        let mut buf = Vec::new();
        write_trace_binary(&t, &mut buf).unwrap();
        assert_eq!(&buf[..8], b"RSTRACE1");
        let back = read_trace_binary(buf.as_slice()).unwrap();
        assert_eq!(back, t);
        assert!(read_trace_binary(&b"RSTRACE0xxxxxxxx"[..]).is_err());
        let mut csv = Vec::new();
        write_trace_csv(&t, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("t,channel_id,value\n0.0,y0,"));
        assert_eq!(text.lines().count(), 1 + 34 * 5);
    }

    #[test]
    fn zoh_is_exact_for_a_first_order_lag() {
        let a = DMatrix::from_element(1, 1, -3.0);
        let b = DMatrix::from_element(1, 1, 2.0);
        let (ad, bd) = discretize(&a, &b, 0.1);
        assert!((ad[(0, 0)] - (-0.3f64).exp()).abs() < 1e-14);
        assert!((bd[(0, 0)] - 2.0 / 3.0 * (1.0 - (-0.3f64).exp())).abs() < 1e-14);
    }
}
