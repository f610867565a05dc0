//! Experiment configuration. Every physical quantity names its unit.

use std::path::Path;

use relsense::controller::{hz_to_rad, TuningConfig};
use relsense::plant_sim::{DisturbanceModel, PlantModel, StaticOffsets, WindModel};
use relsense::robustness::UncertaintyMode;
use relsense::sensing_model::{
    build_chain, build_hex_mirror, build_ring, MeasurementMap, SpatialStructure,
};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plant: Option<PlantSection>,
    #[serde(default)]
    pub uncertainty: UncertaintySection,
    #[serde(default)]
    pub controller: ControllerSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    pub nyquist: Option<NyquistSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureKind {
    Chain,
    Ring,
    HexMirror,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsKind {
    #[default]
    Static,
    Segment,
    Vehicle,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub structure: StructureKind,
    /// Chain and ring size.
    pub subsystems: Option<usize>,
    pub rings: Option<usize>,
    #[serde(default)]
    pub hole_rings: usize,
    #[serde(default = "default_edge")]
    pub edge_length_m: f64,
    #[serde(default = "default_sensor_offset")]
    pub sensor_offset_fraction: f64,
    #[serde(default)]
    pub dynamics: DynamicsKind,
    #[serde(default = "one")]
    pub static_gain: f64,
    #[serde(default = "default_resonance")]
    pub resonance_hz: f64,
    #[serde(default = "default_damping")]
    pub damping_ratio: f64,
    #[serde(default = "one")]
    pub mass_kg: f64,
    #[serde(default = "default_drag")]
    pub drag_n_s_per_m: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncertaintySection {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_mode")]
    pub mode: UncertaintyMode,
    /// Random admissible errors checked alongside the worst case.
    #[serde(default)]
    pub random_draws: usize,
}

impl Default for UncertaintySection {
    fn default() -> Self {
        Self {
            epsilon: default_epsilon(),
            mode: default_mode(),
            random_draws: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    /// Gain split plus worst-case leakage.
    #[default]
    Modal,
    /// `K_0` closed-loop gain on every observable mode.
    Uniform,
    None,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    #[serde(default)]
    pub kind: ControllerKind,
    #[serde(default = "default_k0")]
    pub k0_rad_per_s: f64,
    #[serde(default = "default_k1")]
    pub k1_rad_per_s: f64,
    #[serde(default = "default_p0")]
    pub p0_hz: f64,
    /// Double roll-off pole; 0 removes it.
    #[serde(default = "default_rolloff")]
    pub rolloff_hz: f64,
    /// `false` keeps the gains but drops all integrator leakage.
    #[serde(default = "yes")]
    pub leakage: bool,
}

impl Default for ControllerSection {
    fn default() -> Self {
        Self {
            kind: ControllerKind::default(),
            k0_rad_per_s: default_k0(),
            k1_rad_per_s: default_k1(),
            p0_hz: default_p0(),
            rolloff_hz: default_rolloff(),
            leakage: true,
        }
    }
}

impl ControllerSection {
    pub fn rolloff_rad_per_s(&self) -> Option<f64> {
        (self.rolloff_hz > 0.0).then(|| hz_to_rad(self.rolloff_hz))
    }

    pub fn tuning(&self, epsilon: f64) -> TuningConfig {
        TuningConfig {
            k0: self.k0_rad_per_s,
            k1: self.k1_rad_per_s,
            p0: hz_to_rad(self.p0_hz),
            epsilon,
            rolloff: self.rolloff_rad_per_s(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(default = "default_dt")]
    pub dt_s: f64,
    #[serde(default = "default_horizon")]
    pub horizon_s: f64,
    #[serde(default = "one_u64")]
    pub seed: u64,
    #[serde(default)]
    pub noise_density_per_sqrt_hz: f64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default = "default_segment")]
    pub psd_segment: usize,
    /// 1-based mode whose spectra are reported.
    #[serde(default = "one_usize")]
    pub mode: usize,
    #[serde(default)]
    pub offset_scale_m: f64,
    #[serde(default)]
    pub wind_rms_m: f64,
    #[serde(default = "default_cutoff")]
    pub wind_cutoff_hz: f64,
    #[serde(default = "default_correlation")]
    pub wind_correlation_pitches: f64,
    #[serde(default)]
    pub rms_start_s: f64,
    #[serde(default)]
    pub csv_traces: bool,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            dt_s: default_dt(),
            horizon_s: default_horizon(),
            seed: 1,
            noise_density_per_sqrt_hz: 0.0,
            record_every: default_record_every(),
            psd_segment: default_segment(),
            mode: 1,
            offset_scale_m: 0.0,
            wind_rms_m: 0.0,
            wind_cutoff_hz: default_cutoff(),
            wind_correlation_pitches: default_correlation(),
            rms_start_s: 0.0,
            csv_traces: false,
        }
    }
}

impl SimulationSection {
    pub fn disturbance(&self) -> DisturbanceModel {
        DisturbanceModel {
            offsets: if self.offset_scale_m > 0.0 {
                StaticOffsets::Gaussian {
                    scale: self.offset_scale_m,
                }
            } else {
                StaticOffsets::None
            },
            wind: (self.wind_rms_m > 0.0).then_some(WindModel {
                correlation_length: self.wind_correlation_pitches,
                cutoff_hz: self.wind_cutoff_hz,
                rms: self.wind_rms_m,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StencilKind {
    Ring,
    Hex,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NyquistSection {
    pub stencil: StencilKind,
    pub lattice_sizes: Vec<usize>,
    #[serde(default = "default_gain_margin")]
    pub gain_margin: f64,
    #[serde(default = "default_phase_margin")]
    pub phase_margin_deg: f64,
    /// Scalar loop `K_I·√λ_ξ/(s + A_I)` to check against each zone.
    pub k_i_rad_per_s: Option<f64>,
    #[serde(default)]
    pub a_i_rad_per_s: f64,
    #[serde(default)]
    pub rolloff_hz: f64,
    #[serde(default = "default_omega_min")]
    pub omega_min_rad_per_s: f64,
    #[serde(default = "default_omega_max")]
    pub omega_max_rad_per_s: f64,
    #[serde(default = "default_omega_samples")]
    pub omega_samples: usize,
}

fn one() -> f64 {
    1.0
}
fn one_u64() -> u64 {
    1
}
fn one_usize() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn default_edge() -> f64 {
    0.7
}
fn default_sensor_offset() -> f64 {
    0.25
}
fn default_resonance() -> f64 {
    50.0
}
fn default_damping() -> f64 {
    0.01
}
fn default_drag() -> f64 {
    0.1
}
fn default_epsilon() -> f64 {
    0.01
}
fn default_mode() -> UncertaintyMode {
    UncertaintyMode::IndependentEntries
}
fn default_k0() -> f64 {
    14.4
}
fn default_k1() -> f64 {
    5.7
}
fn default_p0() -> f64 {
    0.1
}
fn default_rolloff() -> f64 {
    20.0
}
fn default_dt() -> f64 {
    1e-3
}
fn default_horizon() -> f64 {
    60.0
}
fn default_record_every() -> usize {
    10
}
fn default_segment() -> usize {
    1024
}
fn default_cutoff() -> f64 {
    0.1
}
fn default_correlation() -> f64 {
    5.0
}
fn default_gain_margin() -> f64 {
    2.0
}
fn default_phase_margin() -> f64 {
    45.0
}
fn default_omega_min() -> f64 {
    1e-3
}
fn default_omega_max() -> f64 {
    1e4
}
fn default_omega_samples() -> usize {
    2000
}

/// 1-based line of a byte offset.
fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

pub fn parse(text: &str) -> Result<ExperimentConfig, CliError> {
    if text.trim().is_empty() {
        return Err(CliError::Config("configuration is empty".into()));
    }
    toml::from_str(text).map_err(|e| {
        let msg = e.message().to_string();
        match e.span() {
            Some(span) => CliError::Config(format!("line {}: {msg}", line_of(text, span.start))),
            None => CliError::Config(msg),
        }
    })
}

pub fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse(&text)
}

/// Sensing layout built from the plant section.
pub struct Layout {
    pub structure: SpatialStructure,
    pub map: MeasurementMap,
}

impl PlantSection {
    pub fn layout(&self) -> Result<Layout, CliError> {
        let need = |v: Option<usize>, key: &str| {
            v.ok_or_else(|| {
                CliError::Config(format!("[plant] {key} is required for this structure"))
            })
        };
        Ok(match self.structure {
            StructureKind::Chain => {
                let (structure, map) = build_chain(need(self.subsystems, "subsystems")?)?;
                Layout { structure, map }
            }
            StructureKind::Ring => {
                let (structure, map) = build_ring(need(self.subsystems, "subsystems")?)?;
                Layout { structure, map }
            }
            StructureKind::HexMirror => {
                let m = build_hex_mirror(
                    need(self.rings, "rings")?,
                    self.hole_rings,
                    self.edge_length_m,
                    self.sensor_offset_fraction,
                )?;
                Layout {
                    structure: m.structure,
                    map: m.map,
                }
            }
        })
    }

    pub fn model(&self, block_size: usize) -> Result<PlantModel, CliError> {
        let model = match self.dynamics {
            DynamicsKind::Static => PlantModel::Static {
                gain: self.static_gain,
            },
            DynamicsKind::Segment => {
                PlantModel::segment(block_size, self.resonance_hz, self.damping_ratio)
            }
            DynamicsKind::Vehicle => PlantModel::Vehicle {
                mass: self.mass_kg,
                drag: self.drag_n_s_per_m,
            },
        };
        model.validate(block_size)?;
        Ok(model)
    }
}

impl ExperimentConfig {
    pub fn plant(&self) -> Result<&PlantSection, CliError> {
        self.plant
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [plant] section".into()))
    }

    pub fn nyquist(&self) -> Result<&NyquistSection, CliError> {
        self.nyquist
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [nyquist] section".into()))
    }
}
