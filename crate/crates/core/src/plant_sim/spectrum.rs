//! Welch power spectra, disturbance rejection ratios and RMS figures.

use std::io::Write;

use nalgebra::DVector;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::SimulationTrace;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PsdScaling {
    /// Power folded onto non-negative frequencies; integrates to the variance
    /// over `[0, f_s/2]`.
    OneSided,
    /// Density per unit frequency on `[−f_s/2, f_s/2]`, reported for the
    /// non-negative half.
    TwoSided,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsdParams {
    pub segment_len: usize,
    /// Fraction of a segment shared with the next, in `[0, 1)`.
    pub overlap: f64,
    pub scaling: PsdScaling,
    /// Remove each segment's mean before windowing.
    pub detrend: bool,
}

impl PsdParams {
    pub fn new(segment_len: usize) -> Self {
        Self {
            segment_len,
            overlap: 0.5,
            scaling: PsdScaling::OneSided,
            detrend: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Psd {
    pub freq_hz: Vec<f64>,
    pub power: Vec<f64>,
    pub averages: usize,
}

/// Averaged Hann-windowed periodogram.
pub fn psd(signal: &[f64], dt: f64, params: &PsdParams) -> Result<Psd> {
    let n = params.segment_len;
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "segment length must be at least 2, got {n}"
        )));
    }
    if !(0.0..1.0).contains(&params.overlap) {
        return Err(Error::InvalidArgument(format!(
            "overlap must lie in [0, 1), got {}",
            params.overlap
        )));
    }
    if signal.len() < n {
        return Err(Error::InvalidSize(format!(
            "trace of {} samples is shorter than one segment of {n}",
            signal.len()
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sample spacing must be positive, got {dt}"
        )));
    }
    let step = (((1.0 - params.overlap) * n as f64).round() as usize).max(1);
    let averages = (signal.len() - n) / step + 1;
    let window: Vec<f64> = (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect();
    let norm: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let bins = n / 2 + 1;
    let mut acc = vec![0.0; bins];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for seg in 0..averages {
        let chunk = &signal[seg * step..seg * step + n];
        let mean = if params.detrend {
            chunk.iter().sum::<f64>() / n as f64
        } else {
            0.0
        };
        for ((b, x), w) in buf.iter_mut().zip(chunk).zip(&window) {
            *b = Complex::new((x - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
    }
    let scale = dt / (norm * averages as f64);
    let mut power: Vec<f64> = acc.iter().map(|a| a * scale).collect();
    if params.scaling == PsdScaling::OneSided {
        let last_single = if n.is_multiple_of(2) { bins - 1 } else { bins };
        for p in power.iter_mut().take(last_single).skip(1) {
            *p *= 2.0;
        }
    }
    let df = 1.0 / (n as f64 * dt);
    Ok(Psd {
        freq_hz: (0..bins).map(|k| k as f64 * df).collect(),
        power,
        averages,
    })
}

pub fn write_psd_csv<W: Write>(p: &Psd, w: W) -> Result<()> {
    crate::export::write_csv(w, &["freq_hz", "power"], p.freq_hz.iter().zip(&p.power))
}

/// `Σ_i v_i·y_i(t)`, e.g. a modal coordinate with `v` a column of `Q`.
pub fn modal_signal(trace: &SimulationTrace, v: &DVector<f64>) -> Result<Vec<f64>> {
    let idx = trace.y_channels(v.len())?;
    let mut out = vec![0.0; trace.n_records()];
    for (weight, &c) in v.iter().zip(&idx) {
        if *weight == 0.0 {
            continue;
        }
        for (o, y) in out.iter_mut().zip(&trace.columns[c]) {
            *o += weight * y;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionRatio {
    pub freq_hz: Vec<f64>,
    pub ratio: Vec<f64>,
    /// Frequencies where the open-loop spectrum is too small to divide by.
    pub unreliable: Vec<bool>,
}

/// Ratio of closed- to open-loop spectra of the modal coordinate `v`.
/// Bins whose open-loop power is below `floor·max` are flagged.
pub fn rejection_ratio(
    closed: &SimulationTrace,
    open: &SimulationTrace,
    v: &DVector<f64>,
    params: &PsdParams,
    floor: f64,
) -> Result<RejectionRatio> {
    if closed.seed != open.seed {
        return Err(Error::TraceMismatch(format!(
            "traces use different disturbance seeds ({} and {})",
            closed.seed, open.seed
        )));
    }
    if closed.sample_dt() != open.sample_dt() {
        return Err(Error::TraceMismatch(
            "traces are sampled differently".into(),
        ));
    }
    let pc = psd(&modal_signal(closed, v)?, closed.sample_dt(), params)?;
    let po = psd(&modal_signal(open, v)?, open.sample_dt(), params)?;
    let top = po.power.iter().cloned().fold(0.0, f64::max);
    let unreliable: Vec<bool> = po.power.iter().map(|p| *p <= floor * top).collect();
    let ratio = pc.power.iter().zip(&po.power).map(|(c, o)| c / o).collect();
    Ok(RejectionRatio {
        freq_hz: pc.freq_hz,
        ratio,
        unreliable,
    })
}

/// Channels to aggregate in [`rms_metric`].
#[derive(Debug, Clone, Copy)]
pub enum RmsSelection<'a> {
    Channels(&'a [usize]),
    /// Modal coordinates `Qᵀy` for the given columns of `basis`.
    Modes {
        basis: &'a nalgebra::DMatrix<f64>,
        modes: &'a [usize],
    },
}

/// Root mean square over the selection and the records with
/// `t_start <= t < t_end`.
pub fn rms_metric(
    trace: &SimulationTrace,
    selection: RmsSelection<'_>,
    t_start: f64,
    t_end: f64,
) -> Result<f64> {
    let times = trace.times();
    let lo = times.partition_point(|t| *t < t_start);
    let hi = times.partition_point(|t| *t < t_end);
    if hi <= lo {
        return Ok(0.0);
    }
    let signals: Vec<Vec<f64>> = match selection {
        RmsSelection::Channels(idx) => {
            if let Some(i) = idx.iter().find(|i| **i >= trace.columns.len()) {
                return Err(Error::InvalidArgument(format!("no channel {i}")));
            }
            idx.iter()
                .map(|&i| trace.columns[i][lo..hi].to_vec())
                .collect()
        }
        RmsSelection::Modes { basis, modes } => modes
            .iter()
            .map(|&k| Ok(modal_signal(trace, &basis.column(k).into_owned())?[lo..hi].to_vec()))
            .collect::<Result<_>>()?,
    };
    if signals.is_empty() {
        return Ok(0.0);
    }
    let count = (signals.len() * (hi - lo)) as f64;
    let sum: f64 = signals.iter().flatten().map(|v| v * v).sum();
    Ok((sum / count).sqrt())
}
