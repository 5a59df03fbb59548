//! Versioned TOML run configuration.
//!
//! Every section pins its field order and defaults, so re-serialising a
//! parsed file gives a canonical text whose SHA-256 is the config digest.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use kmux_core::analysis::{ColumnGeometry, FieldOfView};
use kmux_core::model::{self, DetectionParams, Envelope, MemoryParams, SourceParams, XiTable};
use kmux_core::protocol::{ProtocolConfig, Retrieval};
use kmux_core::sim::{SimConfig, StorageSchedule};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<SourceSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detection: Option<DetectionSection>,
    #[serde(default)]
    pub memory: MemorySection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSection>,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lifetime: Option<LifetimeSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub protocol: Option<ProtocolSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub modes: Option<ModesSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub fov_kappa_x: f64,
    pub fov_kappa_y: f64,
    pub p_mode: f64,
    #[serde(default)]
    pub envelope: EnvelopeSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ensemble_waist: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, rename_all = "lowercase", tag = "kind")]
pub enum EnvelopeSection {
    #[default]
    Uniform,
    Gaussian { width_x: f64, width_y: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionSection {
    pub eta_s: f64,
    pub eta_as: f64,
    pub chi_r0: f64,
    pub dark_rate: f64,
    pub pixel_pitch: f64,
    pub sensor_px_x: u32,
    pub sensor_px_y: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MemorySection {
    pub alpha1: f64,
    pub alpha2: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub omega: f64,
    pub v_thermal: f64,
    /// Constant anti-Stokes noise per mode cell, used without `xi_table`.
    pub xi: f64,
    /// `[storage_time, xi]` knots.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi_table: Option<Vec<[f64; 2]>>,
}

impl Default for MemorySection {
    fn default() -> Self {
        let m = MemoryParams::reference();
        MemorySection {
            alpha1: m.alpha1,
            alpha2: m.alpha2,
            tau1: m.tau1,
            tau2: m.tau2,
            omega: m.omega,
            v_thermal: m.v_thermal,
            xi: 0.0,
            xi_table: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub n_frames: u64,
    #[serde(default = "default_storage")]
    pub storage_times: Vec<f64>,
    pub master_seed: u64,
}

fn default_storage() -> Vec<f64> {
    vec![0.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    /// Side of the analysis regions (mm⁻¹).
    pub roi_kappa: f64,
    /// Stokes-side centre of the conjugate pair and of the map column.
    pub roi_center: [f64; 2],
    pub com_half_width: f64,
    pub com_bin: f64,
    /// Bin width of the joint coincidence maps in pixels.
    pub map_bin_pixels: u32,
    pub map_regions: usize,
    pub roi_sizes: Vec<f64>,
    pub ensemble: bool,
    pub ensemble_regions: usize,
    pub ensemble_columns: usize,
    /// Wollaston-split autocorrelations and the Cauchy–Schwarz parameter.
    pub cauchy_schwarz: bool,
    /// Seed of the splitter decisions.
    pub split_seed: u64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            roi_kappa: 25.2,
            roi_center: [63.0, 0.0],
            com_half_width: 30.0,
            com_bin: 1.0,
            map_bin_pixels: 2,
            map_regions: 12,
            roi_sizes: vec![8.4, 12.6, 16.8, 25.2, 33.6, 42.0, 63.0, 84.0],
            ensemble: false,
            ensemble_regions: ColumnGeometry::REFERENCE_REGIONS,
            ensemble_columns: ColumnGeometry::REFERENCE_COLUMNS,
            cauchy_schwarz: true,
            split_seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LifetimeSection {
    pub p_mode: f64,
    pub eta_as: f64,
    /// Region acceptance; computed from the source widths and `roi_kappa`
    /// when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f_kappa: Option<f64>,
    #[serde(default)]
    pub region_k: f64,
    pub xi: f64,
    #[serde(default = "yes")]
    pub fix_xi: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha1: Option<f64>,
    #[serde(default)]
    pub force_alpha2_zero: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrievalKind {
    Constant,
    Memory,
    Wavevector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    pub n_target: u32,
    pub p_mode: f64,
    pub modes: u32,
    pub eta_s: f64,
    pub eta_as: f64,
    pub retrieval: RetrievalKind,
    pub chi_r: f64,
    pub trial_period: f64,
    pub max_trials: u64,
    #[serde(default)]
    pub switch_loss: f64,
    #[serde(default = "yes")]
    pub undetected_occupy: bool,
    /// Defaults to the mode pitch of `source.sigma_x` or 15.75 mm⁻¹.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cell_pitch: Option<f64>,
    #[serde(default)]
    pub k_w: [f64; 2],
    pub runs: u64,
    pub master_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModesSection {
    pub sigma_x: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_y: Option<f64>,
    pub kappa: f64,
    #[serde(default = "default_grid")]
    pub grid_n: usize,
    #[serde(default)]
    pub convergence_check: bool,
}

fn default_grid() -> usize {
    kmux_core::schmidt::DEFAULT_GRID_N
}

fn schema(msg: impl Into<String>) -> CliError {
    CliError::Schema(msg.into())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| schema(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| schema(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(schema(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    /// SHA-256 of the canonical form, hex encoded.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.canonical().as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn source(&self) -> Result<SourceParams, CliError> {
        let s = self.source.as_ref().ok_or_else(|| schema("missing [source] section"))?;
        let p = SourceParams {
            sigma_x: s.sigma_x,
            sigma_y: s.sigma_y,
            fov_kappa_x: s.fov_kappa_x,
            fov_kappa_y: s.fov_kappa_y,
            p_mode: s.p_mode,
            envelope: match s.envelope {
                EnvelopeSection::Uniform => Envelope::Uniform,
                EnvelopeSection::Gaussian { width_x, width_y } => Envelope::Gaussian { width_x, width_y },
            },
            ensemble_waist: s.ensemble_waist,
        };
        p.validate().map_err(|e| schema(format!("[source] {e}")))?;
        Ok(p)
    }

    pub fn detection(&self) -> Result<DetectionParams, CliError> {
        let d = self.detection.as_ref().ok_or_else(|| schema("missing [detection] section"))?;
        let p = DetectionParams {
            eta_s: d.eta_s,
            eta_as: d.eta_as,
            chi_r0: d.chi_r0,
            dark_rate: d.dark_rate,
            pixel_pitch: d.pixel_pitch,
            sensor_px_x: d.sensor_px_x,
            sensor_px_y: d.sensor_px_y,
        };
        p.validate().map_err(|e| schema(format!("[detection] {e}")))?;
        Ok(p)
    }

    pub fn memory(&self) -> Result<MemoryParams, CliError> {
        let m = &self.memory;
        let xi_table = match &m.xi_table {
            Some(k) => XiTable::from_points(k.iter().map(|&[t, x]| (t, x)).collect()).map_err(|e| schema(format!("[memory] {e}")))?,
            None => {
                model::XiTable::from_points(vec![(0.0, m.xi)]).map_err(|e| schema(format!("[memory] {e}")))?
            }
        };
        let p = MemoryParams {
            alpha1: m.alpha1,
            alpha2: m.alpha2,
            tau1: m.tau1,
            tau2: m.tau2,
            omega: m.omega,
            v_thermal: m.v_thermal,
            xi_table,
        };
        p.validate().map_err(|e| schema(format!("[memory] {e}")))?;
        Ok(p)
    }

    pub fn sim_config(&self) -> Result<SimConfig, CliError> {
        let s = self.simulation.as_ref().ok_or_else(|| schema("missing [simulation] section"))?;
        let storage = match s.storage_times.as_slice() {
            [t] => StorageSchedule::Constant(*t),
            ts => StorageSchedule::Cycle(ts.to_vec()),
        };
        let cfg = SimConfig {
            source: self.source()?,
            detection: self.detection()?,
            memory: self.memory()?,
            n_frames: s.n_frames,
            storage,
            master_seed: s.master_seed,
        };
        cfg.validate().map_err(|e| schema(e.to_string()))?;
        Ok(cfg)
    }

    pub fn fov(&self) -> Result<FieldOfView, CliError> {
        let s = self.source.as_ref().ok_or_else(|| schema("missing [source] section"))?;
        Ok(FieldOfView {
            kappa_x: s.fov_kappa_x,
            kappa_y: s.fov_kappa_y,
        })
    }

    pub fn protocol(&self) -> Result<(ProtocolConfig, u64), CliError> {
        let p = self.protocol.as_ref().ok_or_else(|| schema("missing [protocol] section"))?;
        let retrieval = match p.retrieval {
            RetrievalKind::Constant => Retrieval::Constant(p.chi_r),
            RetrievalKind::Memory => Retrieval::Memory {
                chi_r0: p.chi_r,
                memory: self.memory()?,
            },
            RetrievalKind::Wavevector => Retrieval::WavevectorDecay {
                chi_r0: p.chi_r,
                v_thermal: self.memory.v_thermal,
            },
        };
        let cell_pitch = p
            .cell_pitch
            .unwrap_or_else(|| model::mode_cell_pitch(self.source.as_ref().map_or(4.45, |s| s.sigma_x)));
        let cfg = ProtocolConfig {
            n_target: p.n_target,
            p_mode: p.p_mode,
            modes: p.modes,
            eta_s: p.eta_s,
            eta_as: p.eta_as,
            retrieval,
            trial_period: p.trial_period,
            max_trials: p.max_trials,
            switch_loss: p.switch_loss,
            master_seed: p.master_seed,
            undetected_occupy: p.undetected_occupy,
            cell_pitch,
            k_w: (p.k_w[0], p.k_w[1]),
        };
        cfg.validate().map_err(|e| schema(e.to_string()))?;
        if p.runs == 0 {
            return Err(schema("[protocol] runs must be >= 1"));
        }
        Ok((cfg, p.runs))
    }

    pub fn column_geometry(&self) -> Result<ColumnGeometry, CliError> {
        let d = self.detection.as_ref().ok_or_else(|| schema("missing [detection] section"))?;
        Ok(ColumnGeometry {
            regions: self.analysis.ensemble_regions,
            columns: self.analysis.ensemble_columns,
            kappa: self.analysis.roi_kappa,
            min_spacing: d.pixel_pitch,
        })
    }
}
