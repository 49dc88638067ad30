//! Writes a bundle to disk as JSON and CSV.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use crate::pipeline::{Bundle, Check};

#[derive(Serialize)]
struct Manifest<'a> {
    name: &'a str,
    config_hash: &'a str,
    seed: u64,
    passed: bool,
    files: Vec<String>,
    checks: &'a [Check],
}

struct Writer {
    dir: PathBuf,
    files: Vec<String>,
}

impl Writer {
    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.dir.join(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(name.into());
        Ok(())
    }

    fn csv(&mut self, name: &str, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
        let path = self.dir.join(name);
        let mut out = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
        out.write_record(header)?;
        for row in rows {
            out.write_record(&row)?;
        }
        out.flush().with_context(|| format!("writing {}", path.display()))?;
        self.files.push(name.into());
        Ok(())
    }
}

fn cells(values: &[f64]) -> Vec<String> {
    values.iter().map(|v| v.to_string()).collect()
}

fn header(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// Writes the bundle into `dir` and returns the file names written.
pub fn emit(bundle: &Bundle, dir: &Path, fields_only: bool) -> Result<Vec<String>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut w = Writer { dir: dir.to_path_buf(), files: Vec::new() };
    let dim = bundle.fields.first().map_or(0, |r| r.psi.len());
    let mut field_header = header(&["epsilon", "tau", "t", "u", "x", "mu"]);
    field_header.extend((0..dim).map(|k| format!("psi{k}")));
    field_header.extend((0..dim).map(|k| format!("dpsi{k}_dx")));
    w.csv(
        "fields.csv",
        &field_header,
        bundle.fields.iter().map(|r| {
            let mut row = cells(&[r.epsilon, r.tau, r.t, r.u, r.x, r.mu]);
            row.extend(cells(&r.psi));
            row.extend(cells(&r.dpsi_dx));
            row
        }),
    )?;
    if fields_only {
        return Ok(w.files);
    }
    w.json("config.json", &bundle.config)?;
    w.json("ladder.json", &(&bundle.certificates, &bundle.ladder))?;
    w.csv(
        "min_mu.csv",
        &header(&["epsilon", "tau", "min_mu", "argmin"]),
        bundle.min_mu.iter().map(|r| cells(&[r.epsilon, r.tau, r.min_mu, r.argmin])),
    )?;
    if let Some(fit) = &bundle.fit {
        w.json("fit_report.json", fit)?;
        if let Ok(report) = fit {
            w.csv(
                "shells.csv",
                &header(&["d_lo", "d_hi", "samples", "ratio_u", "ratio_mu", "psi_coeff_relerr"]),
                report.shells.iter().map(|s| {
                    cells(&[s.d_lo, s.d_hi, s.samples as f64, s.ratio_u, s.ratio_mu, s.psi_coeff_relerr])
                }),
            )?;
        }
    }
    if let Some(boundary) = &bundle.boundary {
        match boundary {
            Ok(report) => {
                w.csv(
                    "boundary.csv",
                    &header(&["t", "x", "tau", "u", "class", "slope"]),
                    report.rows.iter().map(|r| {
                        let mut row = cells(&[r.t, r.x, r.tau, r.u]);
                        row.push(r.class.clone());
                        row.push(r.slope.to_string());
                        row
                    }),
                )?;
                let mut summary = report.clone();
                summary.rows.clear();
                w.json("boundary_report.json", &summary)?;
            }
            Err(e) => w.json("boundary_report.json", &serde_json::json!({ "error": e }))?,
        }
    }
    if let Some(perverse) = &bundle.perverse {
        w.json("perverse_report.json", perverse)?;
    }
    let mut files = w.files.clone();
    files.push("manifest.json".into());
    let manifest = Manifest {
        name: &bundle.config.name,
        config_hash: &bundle.config_hash,
        seed: bundle.config.seed,
        passed: bundle.passed(),
        files: files.clone(),
        checks: &bundle.checks,
    };
    w.json("manifest.json", &manifest)?;
    Ok(files)
}
