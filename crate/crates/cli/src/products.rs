//! All analysis products of one pass over a frame stream.

use std::io::Write;
use std::path::Path;

use kmux_core::analysis::report::{gaussian_fit_lines, write_ensemble_map, write_g2_map, write_histogram, write_roi_curve};
use kmux_core::analysis::{
    cauchy_schwarz_r, conjugate_columns, fit_histogram, Accumulator, Axis, Binning, ColumnEnsemble, CoincidenceHistogram, G2Map, PairCounter,
    RegionPair, RoiModelInputs, RoiSizePoint, Semantics, TileCounter, TilePairing,
};
use kmux_core::sim::{wollaston_split, Arm, Frame, ModeGrid, RunSummary, SimConfig};

use crate::config::RunConfig;
use crate::{write_atomic, CliError};

#[derive(Debug, Clone)]
pub struct Products {
    pub summary: RunSummary,
    pub com: CoincidenceHistogram,
    pub map_x: CoincidenceHistogram,
    pub map_y: CoincidenceHistogram,
    pub g2_map: G2Map,
    pub roi: PairCounter,
    pub sizes: Vec<f64>,
    pub tiles: TileCounter,
    pub auto: Option<(TileCounter, TileCounter, u64)>,
    pub ensemble: Option<ColumnEnsemble>,
}

impl Products {
    pub fn new(cfg: &RunConfig) -> Result<Self, CliError> {
        let a = &cfg.analysis;
        let fov = cfg.fov()?;
        let pitch = cfg.detection.as_ref().map_or(2.1, |d| d.pixel_pitch);
        let invalid = |e: kmux_core::analysis::AnalysisError| CliError::Schema(format!("[analysis] {e}"));
        let com_bins = Binning::centered(a.com_half_width, a.com_bin).map_err(invalid)?;
        let bin = pitch * a.map_bin_pixels.max(1) as f64;
        let joint = |fov: f64| Binning::centered(0.5 * fov, bin).map_err(invalid);
        let (s, r) = conjugate_columns(a.roi_center[0], a.map_regions.max(1), a.roi_kappa, &fov);
        let sizes: Vec<f64> = a.roi_sizes.clone();
        let pairs = sizes.iter().map(|&k| RegionPair::conjugate((a.roi_center[0], a.roi_center[1]), k)).collect();
        let auto = if a.cauchy_schwarz {
            Some((
                TileCounter::new(a.roi_kappa, &fov, TilePairing::Halves(Arm::Stokes)).map_err(invalid)?,
                TileCounter::new(a.roi_kappa, &fov, TilePairing::Halves(Arm::AntiStokes)).map_err(invalid)?,
                a.split_seed,
            ))
        } else {
            None
        };
        let ensemble = if a.ensemble {
            Some(ColumnEnsemble::new(cfg.column_geometry()?, &fov).map_err(invalid)?)
        } else {
            None
        };
        Ok(Products {
            summary: RunSummary::default(),
            com: CoincidenceHistogram::new(Semantics::CenterOfMass, com_bins, com_bins),
            map_x: CoincidenceHistogram::new(Semantics::Joint(Axis::X), joint(fov.kappa_x)?, joint(fov.kappa_x)?),
            map_y: CoincidenceHistogram::new(Semantics::Joint(Axis::Y), joint(fov.kappa_y)?, joint(fov.kappa_y)?),
            g2_map: G2Map::new(s, r, &fov).map_err(invalid)?,
            roi: PairCounter::new(pairs, &fov).map_err(invalid)?,
            sizes,
            tiles: TileCounter::new(a.roi_kappa, &fov, TilePairing::Conjugate).map_err(invalid)?,
            auto,
            ensemble,
        })
    }
}

impl Accumulator for Products {
    fn observe(&mut self, frame: &Frame) {
        self.summary.observe(frame);
        self.com.observe(frame);
        self.map_x.observe(frame);
        self.map_y.observe(frame);
        self.g2_map.observe(frame);
        self.roi.observe(frame);
        self.tiles.observe(frame);
        if let Some((s, a, seed)) = &mut self.auto {
            let (s1, s2) = wollaston_split(frame, Arm::Stokes, *seed);
            s.observe_split(&s1, &s2);
            let (a1, a2) = wollaston_split(frame, Arm::AntiStokes, *seed);
            a.observe_split(&a1, &a2);
        }
        if let Some(e) = &mut self.ensemble {
            e.observe(frame);
        }
    }

    fn merge(&mut self, o: &Self) {
        self.summary.merge(&o.summary);
        self.com.merge(&o.com);
        self.map_x.merge(&o.map_x);
        self.map_y.merge(&o.map_y);
        self.g2_map.merge(&o.g2_map);
        self.roi.merge(&o.roi);
        self.tiles.merge(&o.tiles);
        if let (Some((s, a, _)), Some((os, oa, _))) = (&mut self.auto, &o.auto) {
            s.merge(os);
            a.merge(oa);
        }
        if let (Some(e), Some(oe)) = (&mut self.ensemble, &o.ensemble) {
            e.merge(oe);
        }
    }
}

/// Model overlay inputs when the source is fully described.
fn model_inputs(sim: &SimConfig, t: f64) -> RoiModelInputs {
    let grid = ModeGrid::for_source(&sim.source);
    let peak = kmux_core::model::chi_r_of_t(0.0, &sim.memory);
    let chi = if peak > 0.0 {
        sim.detection.chi_r0 * kmux_core::model::chi_r_of_t(t, &sim.memory) / peak
    } else {
        0.0
    };
    RoiModelInputs {
        sigma_x: sim.source.sigma_x,
        sigma_y: sim.source.sigma_y,
        p_mode: sim.source.p_mode,
        cell_area: grid.cell_x * grid.cell_y,
        eta_s: sim.detection.eta_s,
        eta_as: sim.detection.eta_as,
        chi_r: chi,
        xi_cell: sim.memory.xi(t),
        dark_density: 0.5 * sim.detection.dark_rate / (sim.source.fov_kappa_x * sim.source.fov_kappa_y),
    }
}

fn kv(lines: &mut Vec<String>, key: &str, value: impl std::fmt::Display) {
    lines.push(format!("{key}={value}"));
}

/// Writes every product into `dir` and returns the summary lines.
pub fn write_all(p: &Products, cfg: &RunConfig, sim: Option<&SimConfig>, storage_time: f64, digest: &str, dir: &Path) -> Result<Vec<String>, CliError> {
    if p.summary.frames == 0 {
        return Err(CliError::Data("no data: the frame stream is empty".into()));
    }
    let mut lines = Vec::new();
    kv(&mut lines, "frames", p.summary.frames);
    kv(&mut lines, "mean_s", p.summary.mean_s());
    kv(&mut lines, "mean_s_stderr", p.summary.mean_s_stderr());
    kv(&mut lines, "mean_as", p.summary.mean_as());
    kv(&mut lines, "mean_as_stderr", p.summary.mean_as_stderr());
    kv(&mut lines, "p_s_full_fov", p.summary.p_s());
    kv(&mut lines, "p_as_full_fov", p.summary.p_as());

    let mut com_extra = Vec::new();
    match fit_histogram(&p.com) {
        Ok(fit) => {
            kv(&mut lines, "fit_sigma_x", fit.params[3]);
            kv(&mut lines, "fit_sigma_x_stderr", fit.stderr[3]);
            kv(&mut lines, "fit_sigma_y", fit.params[4]);
            kv(&mut lines, "fit_sigma_y_stderr", fit.stderr[4]);
            com_extra = gaussian_fit_lines(&fit);
        }
        Err(e) => {
            log::warn!("centre-of-mass fit: {e}");
            kv(&mut lines, "fit_error", &e);
            com_extra.push(format!("fit_error={e}"));
        }
    }
    write_atomic(&dir.join("com_histogram.csv"), |w| write_histogram(w, &p.com, digest, &com_extra))?;
    write_atomic(&dir.join("coincidence_x.csv"), |w| write_histogram(w, &p.map_x, digest, &[]))?;
    write_atomic(&dir.join("coincidence_y.csv"), |w| write_histogram(w, &p.map_y, digest, &[]))?;
    let kappa = cfg.analysis.roi_kappa;
    write_atomic(&dir.join("g2_map.csv"), |w| write_g2_map(w, &p.g2_map, digest, &[format!("roi_kappa={kappa}")]))?;

    let points: Vec<RoiSizePoint> = p
        .sizes
        .iter()
        .zip(p.roi.counts())
        .map(|(&kappa, c)| RoiSizePoint {
            kappa,
            counts: *c,
            estimate: c.g2(),
        })
        .collect();
    let overlay: Vec<_> = match sim {
        Some(sim) => {
            let inputs = model_inputs(sim, storage_time);
            p.sizes.iter().map(|&k| inputs.at(k).ok()).collect()
        }
        None => vec![None; p.sizes.len()],
    };
    let c = cfg.analysis.roi_center;
    write_atomic(&dir.join("g2_vs_roi.csv"), |w| {
        write_roi_curve(w, &points, &overlay, digest, &[format!("roi_center={},{}", c[0], c[1]), format!("storage_time={storage_time}")])
    })?;

    let pooled = p.tiles.pooled();
    kv(&mut lines, "tile_kappa", kappa);
    kv(&mut lines, "tiles", p.tiles.tiles());
    kv(&mut lines, "tile_p_s", pooled.p_first());
    let sas = pooled.g2();
    match &sas {
        Ok(g) => {
            kv(&mut lines, "g2_sas", g.g2);
            kv(&mut lines, "g2_sas_stderr", g.stderr);
        }
        Err(e) => kv(&mut lines, "g2_sas_error", e),
    }
    if let Some(spread) = p.tiles.spread() {
        kv(&mut lines, "g2_sas_tile_std", spread.stderr);
    }
    if let Some((s, a, _)) = &p.auto {
        let ss = s.pooled().g2();
        let aa = a.pooled().g2();
        for (name, g) in [("g2_ss", &ss), ("g2_asas", &aa)] {
            match g {
                Ok(g) => {
                    kv(&mut lines, name, g.g2);
                    kv(&mut lines, &format!("{name}_stderr"), g.stderr);
                }
                Err(e) => kv(&mut lines, &format!("{name}_error"), e),
            }
        }
        if let (Ok(sas), Ok(ss), Ok(aa)) = (&sas, &ss, &aa) {
            if let Ok(r) = cauchy_schwarz_r(sas.measurement(), ss.measurement(), aa.measurement()) {
                kv(&mut lines, "cauchy_schwarz_r", r.value);
                kv(&mut lines, "cauchy_schwarz_r_stderr", r.stderr);
            }
        }
    }
    if let Some(e) = &p.ensemble {
        let map = e.summary();
        let (diag, off) = map.diagonal_and_off();
        if let Some(d) = diag {
            kv(&mut lines, "ensemble_diagonal_mean", d.value);
        }
        if let Some(o) = off {
            kv(&mut lines, "ensemble_off_diagonal_mean", o.value);
        }
        write_atomic(&dir.join("ensemble_map.csv"), |w| write_ensemble_map(w, &map, digest, &[format!("roi_kappa={kappa}")]))?;
    }
    write_atomic(&dir.join("analysis_summary.txt"), |w| {
        writeln!(w, "# config_digest={digest}")?;
        for l in &lines {
            writeln!(w, "{l}")?;
        }
        Ok(())
    })?;
    Ok(lines)
}
