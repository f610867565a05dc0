use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::Serialize;

use relsense::controller::{tune_modal, write_tuning_csv, ModalController};
use relsense::export::{write_coo, write_csv, write_json};
use relsense::plant_sim::{
    assemble_closed_loop, modal_signal, psd, rejection_ratio, simulate as run_simulation,
    write_psd_csv, write_trace_binary, write_trace_csv, ChannelSet, PsdParams, SimulationConfig,
    SimulationTrace,
};
use relsense::robustness::{
    closed_loop_poles, phi_b_value, phi_sweep, worst_case_delta, UncertaintySpec,
};
use relsense::si_analysis::{
    circulant_lambda, nyquist_clearance, si_sweep, write_sweep_csv, ExclusionZone, SIStencil,
};
use relsense::spectral::{
    decompose, small_eigen_census, write_spectrum_csv, ModalDecomposition, DEFAULT_RANK_TOL,
};

use crate::config::{self, ControllerKind, ExperimentConfig, StencilKind};
use crate::{CliError, Common, Outcome};

const CENSUS_C: f64 = 0.01;

fn prepare(common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = config::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.simulation.seed = seed;
    }
    fs::create_dir_all(&common.out)?;
    Ok(cfg)
}

/// Creates `dir/name`, hands a buffered writer to `body` and flushes it.
fn emit<F>(dir: &Path, name: &str, body: F) -> Result<(), CliError>
where
    F: FnOnce(&mut BufWriter<File>) -> relsense::Result<()>,
{
    let mut w = BufWriter::new(File::create(dir.join(name))?);
    body(&mut w)?;
    w.flush()?;
    Ok(())
}

fn controller_for(
    cfg: &ExperimentConfig,
    decomp: &ModalDecomposition,
    phi: &[f64],
) -> Result<Option<ModalController>, CliError> {
    let c = &cfg.controller;
    let rolloff = c.rolloff_rad_per_s();
    let ctrl = match c.kind {
        ControllerKind::None => return Ok(None),
        ControllerKind::Uniform => ModalController::uniform(decomp, c.k0_rad_per_s, rolloff)?,
        ControllerKind::Modal => tune_modal(decomp, &c.tuning(cfg.uncertainty.epsilon), phi)?,
    };
    if c.leakage {
        Ok(Some(ctrl))
    } else {
        Ok(Some(ModalController::new(
            decomp,
            ctrl.k_i().to_vec(),
            vec![0.0; decomp.n_modes()],
            rolloff,
        )?))
    }
}

fn worst_phi(
    map: &relsense::sensing_model::MeasurementMap,
    decomp: &ModalDecomposition,
    epsilon: f64,
) -> Result<Vec<f64>, CliError> {
    Ok(phi_sweep(map, decomp, epsilon)?
        .iter()
        .map(|r| r.phi)
        .collect())
}

#[derive(Serialize)]
struct Census {
    c: f64,
    count: usize,
}

#[derive(Serialize)]
struct SpectrumSummary {
    n_subsystems: usize,
    n_outputs: usize,
    n_sensors: usize,
    n0: usize,
    zero_modes: usize,
    lambda_1: f64,
    lambda_n0: f64,
    rank_tol: f64,
    census: Census,
}

pub fn spectrum(common: &Common) -> Result<Outcome, CliError> {
    let cfg = prepare(common)?;
    let layout = cfg.plant()?.layout()?;
    let d = decompose(&layout.map, DEFAULT_RANK_TOL)?;
    emit(&common.out, "spectrum.csv", |w| {
        write_spectrum_csv(&d, 1.0, w)
    })?;
    let census = small_eigen_census(&d, CENSUS_C)?;
    let summary = SpectrumSummary {
        n_subsystems: layout.map.n_subsystems(),
        n_outputs: layout.map.n_outputs(),
        n_sensors: layout.map.n_sensors(),
        n0: d.n0(),
        zero_modes: census.zero_modes,
        lambda_1: d.lambda(0),
        lambda_n0: if d.n0() > 0 {
            d.lambda(d.n0() - 1)
        } else {
            0.0
        },
        rank_tol: d.rank_tol(),
        census: Census {
            c: CENSUS_C,
            count: census.count,
        },
    };
    emit(&common.out, "spectrum_summary.json", |w| {
        write_json(&summary, w)
    })?;
    Ok(Outcome::Ok)
}

#[derive(Serialize)]
struct WorstCaseReport {
    mode: usize,
    epsilon: f64,
    phi_b: f64,
    p0_rad_per_s: f64,
    max_re_nominal: f64,
    max_re_perturbed: f64,
    max_re_random: Option<f64>,
    random_draws: usize,
    destabilized: bool,
    all_below_p0: bool,
}

fn max_re(poles: &[Complex64]) -> f64 {
    poles.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

pub fn worstcase(common: &Common, mode: Option<usize>) -> Result<Outcome, CliError> {
    let cfg = prepare(common)?;
    let plant_cfg = cfg.plant()?;
    let layout = plant_cfg.layout()?;
    let map = &layout.map;
    let d = decompose(map, DEFAULT_RANK_TOL)?;
    let n0 = d.n0();
    let b = mode.unwrap_or(n0);
    if b == 0 || b > n0 {
        return Err(CliError::Config(format!(
            "--mode must lie in 1..={n0}, got {b}"
        )));
    }
    let eps = cfg.uncertainty.epsilon;
    let phi = worst_phi(map, &d, eps)?;
    let ctrl = controller_for(&cfg, &d, &phi)?.ok_or_else(|| {
        CliError::Config(
            "worstcase needs a controller ([controller] kind = modal or uniform)".into(),
        )
    })?;
    let plant = plant_cfg.model(map.block_size())?;

    let delta = worst_case_delta(map, &d, b - 1, eps)?;
    emit(&common.out, "delta.coo", |w| write_coo(&delta, w))?;

    let zero = DMatrix::zeros(map.n_sensors(), map.n_outputs());
    let nominal = closed_loop_poles(&plant, &ctrl, map, &zero)?;
    let perturbed = closed_loop_poles(&plant, &ctrl, map, &delta)?;
    let rows = nominal
        .iter()
        .map(|z| ("nominal", z.re, z.im))
        .chain(perturbed.iter().map(|z| ("perturbed", z.re, z.im)));
    emit(&common.out, "poles.csv", |w| {
        write_csv(w, &["case", "re", "im"], rows)
    })?;

    let draws = cfg.uncertainty.random_draws;
    let max_re_random = if draws > 0 {
        let spec = UncertaintySpec::new(eps, cfg.uncertainty.mode)?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.simulation.seed);
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..draws {
            let sample = spec.sample(map, &mut rng)?;
            worst = worst.max(max_re(&closed_loop_poles(&plant, &ctrl, map, &sample)?));
        }
        Some(worst)
    } else {
        None
    };

    let p0 = relsense::controller::hz_to_rad(cfg.controller.p0_hz);
    let max_pert = max_re(&perturbed);
    let destabilized = max_pert > 0.0 || max_re_random.is_some_and(|r| r > 0.0);
    let report = WorstCaseReport {
        mode: b,
        epsilon: eps,
        phi_b: phi_b_value(map, &d, b - 1, eps)?,
        p0_rad_per_s: p0,
        max_re_nominal: max_re(&nominal),
        max_re_perturbed: max_pert,
        max_re_random,
        random_draws: draws,
        destabilized,
        all_below_p0: max_pert <= -p0 * (1.0 - 1e-6),
    };
    emit(&common.out, "worstcase.json", |w| write_json(&report, w))?;
    Ok(if destabilized {
        Outcome::RobustnessViolation
    } else {
        Outcome::Ok
    })
}

#[derive(Serialize)]
struct ZoneReport {
    xi: Vec<f64>,
    abs_phi_bar: f64,
    gain_margin: f64,
    phase_margin_rad: f64,
    zone: relsense::si_analysis::ZoneGeometry,
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n)
        .map(|i| 10f64.powf(lo.log10() + (hi.log10() - lo.log10()) * i as f64 / (n - 1) as f64))
        .collect()
}

pub fn nyquist(common: &Common) -> Result<Outcome, CliError> {
    let cfg = prepare(common)?;
    let ny = cfg.nyquist()?;
    let stencil = match (ny.stencil, ny.lattice_sizes.as_slice()) {
        (StencilKind::Ring, [m]) => SIStencil::ring(*m)?,
        (StencilKind::Hex, [m1, m2]) => SIStencil::hex(*m1, *m2)?,
        (kind, sizes) => {
            return Err(CliError::Config(format!(
                "{kind:?} stencil cannot use lattice_sizes {sizes:?}"
            )));
        }
    };
    let eps = cfg.uncertainty.epsilon;
    let pm = ny.phase_margin_deg.to_radians();
    let rows = si_sweep(&stencil, eps, ny.gain_margin, pm)?;
    emit(&common.out, "nyquist_sweep.csv", |w| {
        write_sweep_csv(&rows, w)
    })?;

    if let Some(worst) = rows
        .iter()
        .filter(|r| r.abs_phi_bar.is_some())
        .max_by(|a, b| a.abs_phi_bar.unwrap().total_cmp(&b.abs_phi_bar.unwrap()))
    {
        let p = worst.abs_phi_bar.unwrap();
        let zone = ExclusionZone::new(p, ny.gain_margin, pm)?;
        let report = ZoneReport {
            xi: worst.xi.clone(),
            abs_phi_bar: p,
            gain_margin: ny.gain_margin,
            phase_margin_rad: pm,
            zone: zone.geometry(),
        };
        emit(&common.out, "zone.json", |w| write_json(&report, w))?;
    }

    if let Some(k_i) = ny.k_i_rad_per_s {
        let omega = log_grid(
            ny.omega_min_rad_per_s,
            ny.omega_max_rad_per_s,
            ny.omega_samples,
        );
        let p = (ny.rolloff_hz > 0.0).then(|| relsense::controller::hz_to_rad(ny.rolloff_hz));
        let clearance = |r: &relsense::si_analysis::SweepRow| -> relsense::Result<_> {
            let sqrt_lambda = circulant_lambda(&stencil, &r.xi)?.sqrt();
            let zone = ExclusionZone::new(r.abs_phi_bar.unwrap(), ny.gain_margin, pm)?;
            let curve: Vec<Complex64> = omega
                .iter()
                .map(|w| {
                    let s = Complex64::new(0.0, *w);
                    let mut l = k_i * sqrt_lambda / (s + ny.a_i_rad_per_s);
                    if let Some(p) = p {
                        l *= (p / (s + p)).powi(2);
                    }
                    l
                })
                .collect();
            let c = nyquist_clearance(&curve, &zone)?;
            Ok((
                r.xi[0],
                r.xi.get(1).copied(),
                c.min_distance,
                u8::from(c.violation),
            ))
        };
        let out: Vec<_> = rows
            .par_iter()
            .filter(|r| r.abs_phi_bar.is_some())
            .map(clearance)
            .collect::<relsense::Result<_>>()?;
        emit(&common.out, "nyquist_clearance.csv", |w| {
            write_csv(w, &["xi_1", "xi_2", "min_distance", "violation"], out)
        })?;
    }
    Ok(Outcome::Ok)
}

/// Per-mode RMS of `Qᵀy` over records at or after `t_start`.
fn modal_rms(
    trace: &SimulationTrace,
    q: &DMatrix<f64>,
    t_start: f64,
) -> Result<Vec<f64>, CliError> {
    let ny = q.nrows();
    let idx = trace.y_channels(ny)?;
    let times = trace.times();
    let lo = times.partition_point(|t| *t < t_start);
    let count = trace.n_records().saturating_sub(lo);
    if count == 0 {
        return Ok(vec![0.0; q.ncols()]);
    }
    let qt = q.transpose();
    let mut y = DVector::zeros(ny);
    let mut m = DVector::zeros(q.ncols());
    let mut acc = DVector::<f64>::zeros(q.ncols());
    for r in lo..trace.n_records() {
        for (i, &c) in idx.iter().enumerate() {
            y[i] = trace.columns[c][r];
        }
        m.gemv(1.0, &qt, &y, 0.0);
        acc += m.map(|v| v * v);
    }
    Ok(acc.iter().map(|s| (s / count as f64).sqrt()).collect())
}

#[derive(Serialize)]
struct SimulationSummary {
    seed: u64,
    n_records: usize,
    sample_dt_s: f64,
    diverged_open: bool,
    diverged_closed: bool,
    divergence_time_s: Option<f64>,
    wind_regularized: bool,
    psd_mode: usize,
    psd_averages: usize,
    modes_worse_than_open: usize,
    observable_modes: usize,
}

pub fn simulate(common: &Common) -> Result<Outcome, CliError> {
    let cfg = prepare(common)?;
    let plant_cfg = cfg.plant()?;
    let layout = plant_cfg.layout()?;
    let map = &layout.map;
    let d = decompose(map, DEFAULT_RANK_TOL)?;
    let plant = plant_cfg.model(map.block_size())?;
    let phi = if cfg.controller.kind == ControllerKind::Modal {
        worst_phi(map, &d, cfg.uncertainty.epsilon)?
    } else {
        Vec::new()
    };
    let ctrl = controller_for(&cfg, &d, &phi)?;
    let s = &cfg.simulation;
    if s.mode == 0 || s.mode > d.n_modes() {
        return Err(CliError::Config(format!(
            "[simulation] mode must lie in 1..={}",
            d.n_modes()
        )));
    }
    let sim = SimulationConfig {
        noise_std: s.noise_density_per_sqrt_hz,
        record_every: s.record_every,
        channels: ChannelSet {
            y: true,
            u: false,
            z: false,
        },
        ..SimulationConfig::new(s.dt_s, s.horizon_s, s.seed)
    };
    let disturbance = s.disturbance();
    let open_loop = assemble_closed_loop(&plant, None, map, None)?;
    let closed_loop = assemble_closed_loop(&plant, ctrl.as_ref(), map, None)?;
    let (open, closed) = rayon::join(
        || run_simulation(&open_loop, &layout.structure, &disturbance, &sim),
        || run_simulation(&closed_loop, &layout.structure, &disturbance, &sim),
    );
    let (open, closed) = (open?, closed?);

    for (name, trace) in [("open", &open), ("closed", &closed)] {
        emit(&common.out, &format!("trace_{name}.rstrace"), |w| {
            write_trace_binary(trace, w)
        })?;
        if s.csv_traces {
            emit(&common.out, &format!("trace_{name}.csv"), |w| {
                write_trace_csv(trace, w)
            })?;
        }
    }

    let params = PsdParams::new(s.psd_segment);
    let v: DVector<f64> = d.q().column(s.mode - 1).into_owned();
    let po = psd(&modal_signal(&open, &v)?, open.sample_dt(), &params)?;
    let pc = psd(&modal_signal(&closed, &v)?, closed.sample_dt(), &params)?;
    for (name, p) in [("open", &po), ("closed", &pc)] {
        emit(&common.out, &format!("psd_{name}.csv"), |w| {
            write_psd_csv(p, w)
        })?;
    }
    let ratio = rejection_ratio(&closed, &open, &v, &params, 1e-12)?;
    emit(&common.out, "rejection_ratio.csv", |w| {
        write_csv(
            w,
            &["freq_hz", "ratio", "unreliable"],
            ratio
                .freq_hz
                .iter()
                .zip(&ratio.ratio)
                .zip(&ratio.unreliable)
                .map(|((f, r), u)| (f, r, u8::from(*u))),
        )
    })?;

    let rms_open = modal_rms(&open, d.q(), s.rms_start_s)?;
    let rms_closed = modal_rms(&closed, d.q(), s.rms_start_s)?;
    emit(&common.out, "rms.csv", |w| {
        write_csv(
            w,
            &["k", "lambda", "rms_open", "rms_closed"],
            (0..d.n_modes()).map(|k| (k + 1, d.lambda(k), rms_open[k], rms_closed[k])),
        )
    })?;

    let diverged = open.diverged || closed.diverged;
    let summary = SimulationSummary {
        seed: s.seed,
        n_records: closed.n_records(),
        sample_dt_s: closed.sample_dt(),
        diverged_open: open.diverged,
        diverged_closed: closed.diverged,
        divergence_time_s: closed.divergence_time.or(open.divergence_time),
        wind_regularized: closed.wind_regularized,
        psd_mode: s.mode,
        psd_averages: pc.averages,
        modes_worse_than_open: (0..d.n0()).filter(|&k| rms_closed[k] > rms_open[k]).count(),
        observable_modes: d.n0(),
    };
    emit(&common.out, "simulation_summary.json", |w| {
        write_json(&summary, w)
    })?;
    Ok(if diverged {
        Outcome::Diverged
    } else {
        Outcome::Ok
    })
}

#[derive(Serialize)]
struct ControllerReport<'a> {
    kind: &'static str,
    epsilon: f64,
    rolloff_rad_per_s: Option<f64>,
    lambda: Vec<f64>,
    k_i: &'a [f64],
    a_i: &'a [f64],
}

pub fn tune(common: &Common) -> Result<Outcome, CliError> {
    let cfg = prepare(common)?;
    let layout = cfg.plant()?.layout()?;
    let map = &layout.map;
    let d = decompose(map, DEFAULT_RANK_TOL)?;
    let phi = worst_phi(map, &d, cfg.uncertainty.epsilon)?;
    let ctrl = controller_for(&cfg, &d, &phi)?.ok_or_else(|| {
        CliError::Config("tune needs [controller] kind = modal or uniform".into())
    })?;
    let report = ControllerReport {
        kind: match cfg.controller.kind {
            ControllerKind::Modal => "modal",
            ControllerKind::Uniform => "uniform",
            ControllerKind::None => "none",
        },
        epsilon: cfg.uncertainty.epsilon,
        rolloff_rad_per_s: ctrl.rolloff(),
        lambda: d.lambdas(),
        k_i: ctrl.k_i(),
        a_i: ctrl.a_i(),
    };
    emit(&common.out, "controller.json", |w| write_json(&report, w))?;
    emit(&common.out, "tuning.csv", |w| {
        write_tuning_csv(&ctrl, &phi, w)
    })?;
    Ok(Outcome::Ok)
}
