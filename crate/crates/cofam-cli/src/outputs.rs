//! Fit outputs: the versioned model document, per-term effect tables,
//! Wald table, residual bundle, and the run report.

use std::path::Path;

use cofam::fit::{diagnostics, extract_effect, Effect, FittedModel};

use crate::error::{CliError, Result};
use crate::table::{fmt, write_table};

/// Format version of the model document; bump on layout changes.
pub const MODEL_FORMAT: u32 = 1;

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Structured text serialization of the fitted model.
pub fn write_model_document(path: &Path, fitted: &FittedModel<f64>) -> Result<()> {
    let mut doc = String::new();
    doc.push_str(&format!("cofam-model format {MODEL_FORMAT}\n\n"));
    doc.push_str("[summary]\n");
    doc.push_str(&format!("regions = {}\n", fitted.regions.len()));
    doc.push_str(&format!("times = {}\n", fitted.kept.len()));
    doc.push_str(&format!("observations = {}\n", fitted.n_obs()));
    doc.push_str(&format!("edf = {}\n", fmt(fitted.edf)));
    doc.push_str(&format!("dispersion = {}\n", fmt(fitted.dispersion)));
    doc.push_str(&format!("deviance = {}\n", fmt(fitted.deviance)));
    doc.push_str(&format!(
        "deviance_explained = {}\n",
        fmt(fitted.deviance_explained)
    ));
    doc.push_str("\n[lambda]\n");
    for (slot, choice) in &fitted.lambda {
        let origin = if choice.fixed { "fixed" } else { "selected" };
        let edge = if choice.at_edge { ", at grid edge" } else { "" };
        doc.push_str(&format!("{slot} = {} ({origin}{edge})\n", fmt(choice.value)));
    }
    doc.push_str("\n[coefficients]\n");
    for (term, range) in fitted.terms.iter().zip(&fitted.ranges) {
        for (j, k) in range.clone().enumerate() {
            doc.push_str(&format!("{}[{}] = {}\n", term.id, j, fmt(fitted.theta[k])));
        }
    }
    doc.push_str("\n[log]\n");
    for line in &fitted.log {
        doc.push_str(line);
        doc.push('\n');
    }
    write_text(path, &doc)
}

/// One effect table per term, shaped by the term's effect kind.
pub fn write_effect_tables(out: &Path, fitted: &FittedModel<f64>) -> Result<()> {
    for term in &fitted.terms {
        let effect = extract_effect(fitted, &term.id)?;
        let path = out.join(format!("effects_{}.csv", term.id));
        match effect {
            Effect::Scalar { estimate, se } => write_table(
                &path,
                &["estimate", "se"],
                &[vec![fmt(estimate), fmt(se)]],
            )?,
            Effect::Curve(curve) => {
                let lower = curve.lower();
                let upper = curve.upper();
                let rows: Vec<Vec<String>> = (0..curve.arg.len())
                    .map(|i| {
                        vec![
                            fmt(curve.arg[i]),
                            fmt(curve.estimate[i]),
                            fmt(curve.se[i]),
                            fmt(lower[i]),
                            fmt(upper[i]),
                        ]
                    })
                    .collect();
                write_table(&path, &["arg", "estimate", "se", "lower", "upper"], &rows)?
            }
            Effect::Surface(surface) => {
                let mut rows = Vec::new();
                for a in 0..surface.arg1.len() {
                    for b in 0..surface.arg2.len() {
                        rows.push(vec![
                            fmt(surface.arg1[a]),
                            fmt(surface.arg2[b]),
                            fmt(surface.estimate[(a, b)]),
                            fmt(surface.se[(a, b)]),
                        ]);
                    }
                }
                write_table(&path, &["arg1", "arg2", "estimate", "se"], &rows)?
            }
            Effect::LevelCurves(levels) => {
                let mut rows = Vec::new();
                for (label, curve) in &levels {
                    let lower = curve.lower();
                    let upper = curve.upper();
                    for i in 0..curve.arg.len() {
                        rows.push(vec![
                            label.clone(),
                            fmt(curve.arg[i]),
                            fmt(curve.estimate[i]),
                            fmt(curve.se[i]),
                            fmt(lower[i]),
                            fmt(upper[i]),
                        ]);
                    }
                }
                write_table(
                    &path,
                    &["level", "arg", "estimate", "se", "lower", "upper"],
                    &rows,
                )?
            }
            Effect::Composition(comp) => {
                // long format: ilr coordinates with se, then per-part
                // clr coefficients, simplicial gradient and ratio factors
                let mut rows = Vec::new();
                for j in 0..comp.ilr.coords().len() {
                    rows.push(vec![
                        "ilr".into(),
                        (j + 1).to_string(),
                        fmt(comp.ilr.coords()[j]),
                        fmt(comp.cov[(j, j)].max(0.0).sqrt()),
                    ]);
                }
                let factors = comp.ratio_factors(1.1);
                for j in 0..comp.clr_b.coords().len() {
                    rows.push(vec![
                        "clr_b".into(),
                        (j + 1).to_string(),
                        fmt(comp.clr_b.coords()[j]),
                        String::new(),
                    ]);
                    rows.push(vec![
                        "gradient".into(),
                        (j + 1).to_string(),
                        fmt(comp.gradient.parts()[j]),
                        String::new(),
                    ]);
                    rows.push(vec![
                        "ratio_factor_1.1".into(),
                        (j + 1).to_string(),
                        fmt(factors[j]),
                        String::new(),
                    ]);
                }
                write_table(&path, &["quantity", "index", "value", "se"], &rows)?
            }
            Effect::CompositionCurves(curves) => {
                let mut rows = Vec::new();
                for (j, curve) in curves.iter().enumerate() {
                    let lower = curve.lower();
                    let upper = curve.upper();
                    for i in 0..curve.arg.len() {
                        rows.push(vec![
                            (j + 1).to_string(),
                            fmt(curve.arg[i]),
                            fmt(curve.estimate[i]),
                            fmt(curve.se[i]),
                            fmt(lower[i]),
                            fmt(upper[i]),
                        ]);
                    }
                }
                write_table(
                    &path,
                    &["coordinate", "arg", "estimate", "se", "lower", "upper"],
                    &rows,
                )?
            }
        }
    }
    Ok(())
}

pub fn write_wald_table(path: &Path, fitted: &FittedModel<f64>) -> Result<()> {
    let rows: Vec<Vec<String>> = fitted
        .wald_table()
        .iter()
        .map(|r| {
            vec![
                r.term.clone(),
                r.coef.clone(),
                fmt(r.estimate),
                fmt(r.se),
                fmt(r.statistic),
                fmt(r.p_value),
            ]
        })
        .collect();
    write_table(
        path,
        &["term", "coef", "estimate", "se", "statistic", "p_value"],
        &rows,
    )
}

pub fn write_residuals(out: &Path, fitted: &FittedModel<f64>) -> Result<()> {
    let bundle = diagnostics(fitted);
    let len_t = fitted.kept.len();
    let mut rows = Vec::new();
    for (i, region) in fitted.regions.iter().enumerate() {
        for l in 0..len_t {
            rows.push(vec![
                region.clone(),
                fmt(fitted.grid_t.points()[fitted.kept[l]]),
                fmt(bundle.observed[(i, l)]),
                fmt(bundle.fitted[(i, l)]),
                fmt(bundle.scaled_pearson[i * len_t + l]),
            ]);
        }
    }
    write_table(
        &out.join("residuals.csv"),
        &["region", "t", "observed", "fitted", "scaled_pearson"],
        &rows,
    )?;
    let acf_rows: Vec<Vec<String>> = bundle
        .acf
        .iter()
        .enumerate()
        .map(|(h, a)| vec![(h + 1).to_string(), fmt(*a)])
        .collect();
    write_table(&out.join("acf.csv"), &["lag", "acf"], &acf_rows)
}

/// Human-oriented run report.
pub fn write_report(path: &Path, fitted: &FittedModel<f64>) -> Result<()> {
    let mut report = String::new();
    report.push_str("cofam fit report\n");
    report.push_str(&format!(
        "{} regions x {} times = {} observations\n",
        fitted.regions.len(),
        fitted.kept.len(),
        fitted.n_obs()
    ));
    report.push_str(&format!("effective degrees of freedom: {:.2}\n", fitted.edf));
    report.push_str(&format!("dispersion: {:.4}\n", fitted.dispersion));
    report.push_str(&format!(
        "deviance explained: {:.1}%\n",
        100.0 * fitted.deviance_explained
    ));
    report.push_str("smoothing parameters:\n");
    for (slot, choice) in &fitted.lambda {
        let origin = if choice.fixed { "fixed" } else { "selected" };
        let edge = if choice.at_edge { " (at grid edge)" } else { "" };
        report.push_str(&format!("  {slot} = {:.6e} {origin}{edge}\n", choice.value));
    }
    write_text(path, &report)
}
