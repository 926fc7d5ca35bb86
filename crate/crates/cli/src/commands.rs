use std::fs;
use std::io::{self, Write};
use std::path::Path;

use pottsseg::cme::{run_cme, CmeConfig, EstimateReport};
use pottsseg::ml::{sweep, MlConfig};
use pottsseg::observation::GaussianParams;
use pottsseg::prior::{
    alpha_curve, free_energy_curve, lattice_alpha_curve, lattice_free_energy_curve,
    lattice_transition, transition_point, AlphaCurve, AlphaMethod, TransitionKind,
    TransitionReport,
};
use pottsseg::{Boundary, ColorImage, Grid, LabelField, LbpOptions};
use serde::Serialize;
use thiserror::Error;

use crate::ppm::{self, PpmError};
use crate::range::Size;
use crate::{
    BoundaryArg, Common, FreeEnergyArgs, MethodArg, MlSweepArgs, PriorCurveArgs, SegmentArgs,
    TransitionArgs,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Ppm(#[from] PpmError),
    #[error("{path}: {source}")]
    Write { path: String, source: io::Error },
    #[error(transparent)]
    Core(#[from] pottsseg::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(pottsseg::Error::NotConverged(_))
            | CliError::Core(pottsseg::Error::NotPositiveDefinite { .. }) => 3,
            _ => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn write_err(path: Option<&Path>, source: io::Error) -> CliError {
    CliError::Write {
        path: path.map_or("<stdout>".into(), |p| p.display().to_string()),
        source,
    }
}

/// Write `bytes` to `path`, or to stdout when no path is given.
fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => fs::write(p, bytes).map_err(|e| write_err(Some(p), e)),
        None => io::stdout()
            .write_all(bytes)
            .map_err(|e| write_err(None, e)),
    }
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("rows serialize to csv");
    }
    w.into_inner().expect("in-memory writer")
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("reports serialize to json");
    out.push(b'\n');
    out
}

fn lbp_options(common: &Common, tol: Option<f64>) -> Result<LbpOptions> {
    let mut opts = LbpOptions {
        damping: common.damping,
        ..LbpOptions::default()
    };
    if let Some(t) = tol {
        opts.tol = t;
    }
    opts.validate()?;
    Ok(opts)
}

/// Lattice for the analyzer commands: `None` means the infinite square
/// lattice, which only exists with periodic boundaries.
fn analyzer_grid(common: &Common, size: Option<Size>) -> Result<Option<Grid>> {
    let boundary = common.boundary.unwrap_or(BoundaryArg::Periodic);
    match size {
        Some(s) => Ok(Some(Grid::lattice(s.width, s.height, boundary.into())?)),
        None if boundary == BoundaryArg::Free => Err(CliError::Usage(
            "a free boundary needs a finite lattice (--size WxH)".into(),
        )),
        None => Ok(None),
    }
}

fn paint(image: &ColorImage, labels: &LabelField, theta: &GaussianParams) -> ColorImage {
    let pixels = labels
        .as_slice()
        .iter()
        .map(|&a| theta.component(a).mean)
        .collect();
    ColorImage::new(image.width(), image.height(), pixels).expect("one label per pixel")
}

#[derive(Serialize)]
struct ImageConfig<'a, C> {
    command: &'static str,
    input: String,
    width: usize,
    height: usize,
    estimator: &'a C,
}

#[derive(Serialize)]
struct SegmentReport<'a> {
    u_hat: f64,
    alpha_hat: f64,
    theta: &'a GaussianParams,
    iterations: usize,
    converged: bool,
    u0: f64,
    empty_labels: &'a [usize],
    config: ImageConfig<'a, CmeConfig>,
}

pub fn segment(a: SegmentArgs) -> Result<()> {
    let image = ppm::read(&a.input)?;
    let mut config = CmeConfig::new(a.common.labels as usize);
    config.boundary = a.common.boundary.unwrap_or(BoundaryArg::Free).into();
    config.tol = a.tol;
    config.max_outer = a.max_outer;
    config.seed = a.seed;
    config.lbp = lbp_options(&a.common, None)?;
    config.validate()?;

    let est: EstimateReport = run_cme(&image, &config)?;
    let report = SegmentReport {
        u_hat: est.u_hat,
        alpha_hat: est.alpha_hat,
        theta: &est.theta,
        iterations: est.trace.len(),
        converged: est.converged,
        u0: est.u0,
        empty_labels: &est.empty_labels,
        config: ImageConfig {
            command: "segment",
            input: a.input.display().to_string(),
            width: image.width(),
            height: image.height(),
            estimator: &config,
        },
    };
    if let Some(out) = &a.out {
        ppm::write(out, &paint(&image, &est.labels, &est.theta))?;
    }
    if let Some(csv) = &a.common.csv {
        emit(Some(csv), &csv_bytes(&est.trace))?;
    }
    emit(a.common.report.as_deref(), &json_bytes(&report))?;
    if !est.converged {
        eprintln!(
            "warning: no convergence within {} outer iterations",
            config.max_outer
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct AnalyzerConfig<'a> {
    command: &'static str,
    labels: usize,
    boundary: Boundary,
    /// `null` for the infinite square lattice.
    size: Option<[usize; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    method: Option<AlphaMethod>,
    #[serde(skip_serializing_if = "Option::is_none")]
    grid: Option<&'a [f64]>,
    tol: f64,
    lbp: LbpOptions,
}

fn analyzer_config<'a>(
    command: &'static str,
    common: &Common,
    grid: &Option<Grid>,
    tol: f64,
    lbp: LbpOptions,
) -> AnalyzerConfig<'a> {
    AnalyzerConfig {
        command,
        labels: common.labels as usize,
        boundary: common.boundary.unwrap_or(BoundaryArg::Periodic).into(),
        size: grid.as_ref().map(|g| {
            let (w, h) = g.dims();
            [w, h]
        }),
        method: None,
        grid: None,
        tol,
        lbp,
    }
}

#[derive(Serialize)]
struct Rejected {
    u: f64,
    reason: String,
}

#[derive(Serialize)]
struct CurveReport<'a, R> {
    rows: &'a [R],
    #[serde(skip_serializing_if = "Option::is_none")]
    rejected: Option<Vec<Rejected>>,
    config: AnalyzerConfig<'a>,
}

pub fn prior_curve(a: PriorCurveArgs) -> Result<()> {
    let q = a.common.labels as usize;
    let grid = analyzer_grid(&a.common, a.size)?;
    let lbp = lbp_options(&a.common, None)?;
    let us = match &a.u {
        Some(g) => g.0.clone(),
        None => {
            let max = (q - 1) as f64 / q as f64;
            (1..)
                .map(|i| (i as f64 * 0.01 * 1e12).round() / 1e12)
                .take_while(|&u| u <= max + 1e-12)
                .collect()
        }
    };
    if a.tol.is_nan() || a.tol <= 0.0 {
        return Err(CliError::Usage(format!(
            "tolerance must be positive, got {}",
            a.tol
        )));
    }
    let method = match (&grid, a.method) {
        (Some(_), _) | (None, MethodArg::Paper) => AlphaMethod::PaperMultiplicative,
        (None, MethodArg::Bisection) => AlphaMethod::Bisection,
    };
    let curve: AlphaCurve = match &grid {
        None => alpha_curve(q, &us, method, a.tol)?,
        Some(g) => lattice_alpha_curve(g, q, &us, a.tol, a.max_outer, &lbp)?,
    };
    for (u, e) in &curve.rejected {
        eprintln!("skipped u = {u}: {e}");
    }
    let mut config = analyzer_config("prior-curve", &a.common, &grid, a.tol, lbp);
    config.method = Some(method);
    config.grid = Some(&us);
    emit(a.common.csv.as_deref(), &csv_bytes(&curve.rows))?;
    if let Some(path) = &a.common.report {
        let report = CurveReport {
            rows: &curve.rows,
            rejected: Some(
                curve
                    .rejected
                    .iter()
                    .map(|(u, e)| Rejected {
                        u: *u,
                        reason: e.to_string(),
                    })
                    .collect(),
            ),
            config,
        };
        emit(Some(path), &json_bytes(&report))?;
    }
    Ok(())
}

pub fn free_energy(a: FreeEnergyArgs) -> Result<()> {
    let q = a.common.labels as usize;
    let grid = analyzer_grid(&a.common, a.size)?;
    let lbp = lbp_options(&a.common, Some(a.tol))?;
    let ks = &a.k.0;
    if ks.iter().any(|&k| k < 0.0) {
        return Err(CliError::Usage("couplings must be non-negative".into()));
    }
    let rows = match &grid {
        None => free_energy_curve(q, ks)?,
        Some(g) => lattice_free_energy_curve(g, q, ks, &lbp)?,
    };
    emit(a.common.csv.as_deref(), &csv_bytes(&rows))?;
    if let Some(path) = &a.common.report {
        let mut config = analyzer_config("free-energy", &a.common, &grid, a.tol, lbp);
        config.grid = Some(ks);
        let report = CurveReport {
            rows: &rows,
            rejected: None,
            config,
        };
        emit(Some(path), &json_bytes(&report))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct TransitionFile<'a> {
    #[serde(flatten)]
    result: &'a TransitionReport,
    config: AnalyzerConfig<'a>,
}

pub fn transition(a: TransitionArgs) -> Result<()> {
    let q = a.common.labels as usize;
    let grid = analyzer_grid(&a.common, a.size)?;
    let lbp = lbp_options(&a.common, None)?;
    if a.tol.is_nan() || a.tol <= 0.0 {
        return Err(CliError::Usage(format!(
            "tolerance must be positive, got {}",
            a.tol
        )));
    }
    let homogeneous = transition_point(q, (0.0, 6.0), a.tol)?;
    let result = match (&grid, homogeneous.k_c) {
        (None, _) => homogeneous,
        (Some(g), Some(k)) if homogeneous.kind == TransitionKind::FirstOrder => {
            let found = lattice_transition(g, q, ((k - 0.5).max(0.0), k + 0.5), &lbp)?;
            TransitionReport {
                q,
                k_c: found,
                kind: if found.is_some() {
                    TransitionKind::FirstOrder
                } else {
                    TransitionKind::NoneDetected
                },
                onset: None,
            }
        }
        (Some(_), _) => TransitionReport {
            q,
            k_c: None,
            kind: TransitionKind::NoneDetected,
            onset: None,
        },
    };
    emit(None, &json_bytes(&result))?;
    if let Some(path) = &a.common.report {
        let report = TransitionFile {
            result: &result,
            config: analyzer_config("transition", &a.common, &grid, a.tol, lbp),
        };
        emit(Some(path), &json_bytes(&report))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct MlReport<'a> {
    k_hat: f64,
    loglik: f64,
    residual: f64,
    #[serde(rename = "K_C")]
    k_c: Option<f64>,
    kink_detected: bool,
    left_slope: Option<f64>,
    right_slope: Option<f64>,
    slope_noise: Option<f64>,
    theta: &'a GaussianParams,
    config: ImageConfig<'a, MlConfig>,
}

pub fn ml_sweep(a: MlSweepArgs) -> Result<()> {
    let image = ppm::read(&a.input)?;
    let mut config = MlConfig::new(a.common.labels as usize);
    config.boundary = a.common.boundary.unwrap_or(BoundaryArg::Free).into();
    config.grid = a.k.0.clone();
    config.refine_step = a.refine_step;
    config.fit_tol = a.tol;
    config.fit_max_iter = a.max_outer;
    config.seed = a.seed;
    config.lbp = lbp_options(&a.common, None)?;
    config.validate()?;

    let (rows, est) = sweep(&image, &config)?;
    let report = MlReport {
        k_hat: est.k_hat,
        loglik: est.loglik,
        residual: est.residual,
        k_c: est.k_c,
        kink_detected: est.kink_detected,
        left_slope: est.left_slope,
        right_slope: est.right_slope,
        slope_noise: est.slope_noise,
        theta: &est.theta,
        config: ImageConfig {
            command: "ml-sweep",
            input: a.input.display().to_string(),
            width: image.width(),
            height: image.height(),
            estimator: &config,
        },
    };
    if let Some(out) = &a.out {
        ppm::write(out, &paint(&image, &est.labels, &est.theta))?;
    }
    if let Some(csv) = &a.common.csv {
        emit(Some(csv), &csv_bytes(&rows))?;
    }
    emit(a.common.report.as_deref(), &json_bytes(&report))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let numerical = CliError::Core(pottsseg::Error::NotConverged("x".into()));
        assert_eq!(numerical.exit_code(), 3);
        let usage = CliError::Core(pottsseg::Error::InvalidLabelCount(1));
        assert_eq!(usage.exit_code(), 2);
        assert_eq!(CliError::Usage("x".into()).exit_code(), 2);
    }
}
