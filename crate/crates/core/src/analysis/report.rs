//! Delimited text tables with `#` metadata headers.

use std::io::{self, Write};

use super::gauss::{GaussianFit, PARAM_NAMES as GAUSS_NAMES};
use super::histogram::CoincidenceHistogram;
use super::lifetime::{LifetimeFit, PARAM_NAMES as LIFETIME_NAMES};
use super::maps::{EnsembleMap, G2Map, RoiModelPoint, RoiSizePoint};

fn header<W: Write>(out: &mut W, digest: &str, lines: &[String]) -> io::Result<()> {
    writeln!(out, "# config_digest={digest}")?;
    for l in lines {
        writeln!(out, "# {l}")?;
    }
    Ok(())
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// One row per bin: `u_center,v_center,count`.
pub fn write_histogram<W: Write>(mut out: W, hist: &CoincidenceHistogram, digest: &str, extra: &[String]) -> io::Result<()> {
    header(&mut out, digest, extra)?;
    writeln!(out, "# axes={}", hist.semantics.describe())?;
    writeln!(out, "# x_edges={}", join(&hist.x.edges()))?;
    writeln!(out, "# y_edges={}", join(&hist.y.edges()))?;
    writeln!(out, "# outside={}", hist.outside)?;
    writeln!(out, "# columns=u,v,count")?;
    for iy in 0..hist.y.bins {
        for ix in 0..hist.x.bins {
            writeln!(out, "{},{},{}", hist.x.center(ix), hist.y.center(iy), hist.get(ix, iy))?;
        }
    }
    Ok(())
}

/// Header lines describing a Gaussian fit, for use as `extra`.
pub fn gaussian_fit_lines(fit: &GaussianFit) -> Vec<String> {
    let mut lines: Vec<String> = GAUSS_NAMES
        .iter()
        .enumerate()
        .map(|(i, n)| format!("fit_{n}={} +- {}", fit.params[i], fit.stderr[i]))
        .collect();
    lines.push(format!("fit_chi2={} dof={}", fit.chi2, fit.dof));
    lines
}

/// One row per map cell: `i,j,s_kx,s_ky,as_kx,as_ky,p_s,p_as,p_sas,g2,stderr`.
pub fn write_g2_map<W: Write>(mut out: W, map: &G2Map, digest: &str, extra: &[String]) -> io::Result<()> {
    header(&mut out, digest, extra)?;
    writeln!(out, "# frames={}", map.frames())?;
    writeln!(out, "# columns=i,j,s_kx,s_ky,as_kx,as_ky,p_s,p_as,p_sas,g2,stderr")?;
    for (i, s) in map.regions_s.iter().enumerate() {
        for (j, a) in map.regions_as.iter().enumerate() {
            let c = map.counts(i, j);
            let (g, e) = match c.g2() {
                Ok(g) => (g.g2.to_string(), g.stderr.to_string()),
                Err(_) => ("nan".into(), "nan".into()),
            };
            writeln!(out, "{i},{j},{},{},{},{},{},{},{},{g},{e}", s.cx, s.cy, a.cx, a.cy, c.p_first(), c.p_second(), c.p_both())?;
        }
    }
    Ok(())
}

/// Measured curve with model overlays: `kappa,p_s,g2,stderr,model_g2,model_noiseless,model_ideal,tmsv`.
pub fn write_roi_curve<W: Write>(mut out: W, points: &[RoiSizePoint], model: &[Option<RoiModelPoint>], digest: &str, extra: &[String]) -> io::Result<()> {
    header(&mut out, digest, extra)?;
    writeln!(out, "# columns=kappa,p_s,g2,stderr,model_g2,model_noiseless,model_ideal,tmsv")?;
    for (i, p) in points.iter().enumerate() {
        let (g, e) = match &p.estimate {
            Ok(g) => (g.g2, g.stderr),
            Err(_) => (f64::NAN, f64::NAN),
        };
        let m = model.get(i).copied().flatten();
        let f = |v: Option<f64>| v.map_or("nan".to_string(), |x| x.to_string());
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            p.kappa,
            p.counts.p_first(),
            g,
            e,
            f(m.map(|m| m.g2)),
            f(m.map(|m| m.g2_noiseless)),
            f(m.map(|m| m.g2_ideal)),
            f(m.map(|m| m.g2_tmsv))
        )?;
    }
    Ok(())
}

/// `i,j,mean,std,columns` per cell.
pub fn write_ensemble_map<W: Write>(mut out: W, map: &EnsembleMap, digest: &str, extra: &[String]) -> io::Result<()> {
    header(&mut out, digest, extra)?;
    writeln!(out, "# columns=i,j,mean_g2,std_g2,valid_columns")?;
    for i in 0..map.n {
        for j in 0..map.n {
            writeln!(out, "{i},{j},{},{},{}", map.mean_at(i, j), map.std_at(i, j), map.valid[i * map.n + j])?;
        }
    }
    Ok(())
}

/// Key-value report including the covariance matrix.
pub fn write_lifetime_report<W: Write>(mut out: W, fit: &LifetimeFit, digest: &str) -> io::Result<()> {
    header(&mut out, digest, &[])?;
    for (i, n) in LIFETIME_NAMES.iter().enumerate() {
        writeln!(out, "{n}={}", fit.params[i])?;
        writeln!(out, "{n}_stderr={}", fit.stderr[i])?;
        writeln!(out, "{n}_fixed={}", fit.fixed[i])?;
    }
    if let Some(t) = fit.beat_period() {
        writeln!(out, "beat_period={}", t.value)?;
        writeln!(out, "beat_period_stderr={}", t.stderr)?;
    }
    writeln!(out, "region_k={}", fit.region_k)?;
    writeln!(out, "chi2={}", fit.chi2)?;
    writeln!(out, "dof={}", fit.dof)?;
    writeln!(out, "residual_norm={}", fit.residual_norm)?;
    writeln!(out, "iterations={}", fit.iterations)?;
    writeln!(out, "converged={}", fit.converged)?;
    writeln!(out, "tau2_degenerate={}", fit.tau2_degenerate)?;
    for i in 0..6 {
        let row: Vec<f64> = (0..6).map(|j| fit.covariance[(i, j)]).collect();
        writeln!(out, "covariance_{}={}", LIFETIME_NAMES[i], join(&row))?;
    }
    Ok(())
}
