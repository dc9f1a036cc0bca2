//! Run reports and their emission.
//!
//! A report collects everything one pipeline pass measured: the configuration
//! echo with a fingerprint, the radial profile actually integrated, the
//! per-height cap records, every asserted inequality with its margin and
//! tolerance, the resolution study, and wall-clock timings.  Emission writes
//! the structured report next to plain-text tables: the profile in the same
//! format `data::emit` uses (so a re-ingest reproduces every bit), and
//! two-column series ready for plotting.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::adm::AdmReport;
use crate::conformal::InequalityReport;
use crate::data::SphericalInitialData;
use crate::horizon::HorizonRecord;
use crate::jang::SweepRecord;
use crate::scenario::RunConfig;
use crate::Result;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// FNV-1a over the serialized configuration.  Two runs with the same
/// fingerprint and software version see exactly the same inputs, so their
/// numeric outputs must agree bit for bit.
pub fn config_fingerprint(cfg: &RunConfig) -> String {
    let bytes = serde_json::to_vec(cfg).expect("config serializes");
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in &bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    format!("{h:016x}")
}

/// One asserted inequality, stated so the reader can re-check it: the
/// measured value, the bound it was held against, the signed margin (positive
/// on the passing side), and the tolerance the comparison allowed.
#[derive(Debug, Clone, Serialize)]
pub struct CheckRecord {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub margin: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckRecord {
    /// value >= bound, up to tolerance.
    pub fn at_least(name: &str, value: f64, bound: f64, tolerance: f64) -> CheckRecord {
        CheckRecord {
            name: name.into(),
            value,
            bound,
            margin: value - bound,
            tolerance,
            passed: value >= bound - tolerance,
        }
    }

    /// value <= bound, up to tolerance.
    pub fn at_most(name: &str, value: f64, bound: f64, tolerance: f64) -> CheckRecord {
        CheckRecord {
            name: name.into(),
            value,
            bound,
            margin: bound - value,
            tolerance,
            passed: value <= bound + tolerance,
        }
    }

    /// |value - bound| <= tolerance; the margin is the headroom left.
    pub fn close_to(name: &str, value: f64, bound: f64, tolerance: f64) -> CheckRecord {
        let margin = tolerance - (value - bound).abs();
        CheckRecord { name: name.into(), value, bound, margin, tolerance, passed: margin >= 0.0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Blow-up stage summary carried into the report.
#[derive(Debug, Clone, Serialize)]
pub struct JangSummary {
    pub epsilon: f64,
    pub f_peak: f64,
    pub sensitivity: f64,
    pub sweep: Vec<SweepRecord>,
    pub residual_max: f64,
    pub residual_at: f64,
    /// sup of sqrt(r) |f| over the outer decade.
    pub decay_envelope: f64,
    pub cylinder_length: f64,
}

/// One diagnostic across the resolution ladder, coarse to fine, with the
/// fitted order; `order` is None when the differences sit at rounding level
/// and a fit would be noise.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub name: String,
    pub values: Vec<f64>,
    pub order: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceTable {
    /// Interval counts, coarse to fine, each doubling the last.
    pub resolutions: Vec<usize>,
    pub rows: Vec<ConvergenceRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub version: String,
    pub fingerprint: String,
    pub config: RunConfig,
    pub scenario: String,
    pub energy: AdmReport,
    pub horizon: Option<HorizonRecord>,
    pub jang: Option<JangSummary>,
    pub inequality: Option<InequalityReport>,
    pub convergence: Option<ConvergenceTable>,
    pub checks: Vec<CheckRecord>,
    /// Columns: r a a' a'' rho rho' rho'' kr kr' kt kt'.
    pub profile: Vec<[f64; 11]>,
    /// Columns: r beta f b rbar_direct rbar_identity defect; nodes outside
    /// the marginal sphere.  Absent when the deformation stage did not run.
    pub deformed: Option<Vec<[f64; 7]>>,
    pub timings: Vec<StageTiming>,
}

/// Radial profile of one capped conformal solve, for the u_T plot series.
#[derive(Debug, Clone)]
pub struct CapProfile {
    pub t: f64,
    /// (r, u) rows on the conformal mesh.
    pub rows: Vec<(f64, f64)>,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self).map_err(|e| {
            crate::Error::SolveFailure(format!("report serialization failed: {e}"))
        })?)
    }

    /// Human-readable rendering: the same content as the structured report
    /// minus the bulk tables.
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let p = |s: &mut String, line: String| {
            s.push_str(&line);
            s.push('\n');
        };
        p(&mut s, format!("scenario {} (version {}, config {})", self.scenario, self.version, self.fingerprint));
        p(&mut s, format!(
            "energy {:.12e}  (flux estimate {:.12e}, fit residual {:.3e})",
            self.energy.energy, self.energy.energy_flux, self.energy.fit_residual
        ));
        if let Some(h) = &self.horizon {
            p(&mut s, format!(
                "marginal sphere r = {:.12e}, rho = {:.12e}, area = {:.12e}, slope = {:.6e}",
                h.r_h, h.rho, h.area, h.slope
            ));
        }
        if let Some(j) = &self.jang {
            p(&mut s, format!(
                "blow-up: epsilon {:.3e}, peak height {:.6e}, sensitivity {:.3e}, residual {:.3e} at r = {:.6e}",
                j.epsilon, j.f_peak, j.sensitivity, j.residual_max, j.residual_at
            ));
            p(&mut s, format!(
                "         cylinder length {:.6e}, outer decay envelope {:.6e}",
                j.cylinder_length, j.decay_envelope
            ));
            for rec in &j.sweep {
                p(&mut s, format!(
                    "         sweep eps {:.3e}: peak {:.6e}, cylinder {:.6e}",
                    rec.epsilon, rec.f_peak, rec.cylinder_length
                ));
            }
        }
        if let Some(q) = &self.inequality {
            let eff = match q.t_min_effective {
                Some(t) => format!("effective heights from {t}"),
                None => "no scheduled height clears twice the defect constant".into(),
            };
            p(&mut s, format!(
                "inequality: E = {:.12e}, C = {:.6e}, {eff}",
                q.e_g, q.c_estimate
            ));
            if let (Some(sig), Some(b)) = (q.sigma_steklov, q.steklov_bound) {
                p(&mut s, format!("  harmonic quotient sigma = {sig:.9e}, bound = {b:.9e}"));
            }
            if let Some(c) = q.capacity_background_sigma {
                p(&mut s, format!("  capacity quotient sigma = {c:.9e}"));
            }
            for (eps, sig) in &q.capacity_family {
                p(&mut s, format!("  capacity family eps {eps:.3e}: sigma = {sig:.9e}"));
            }
            for c in &q.caps {
                p(&mut s, format!(
                    "  cap T = {:>6}: r_T = {:.9e}, area = {:.9e}, alpha = {:.6e}, sigma_T = {}, bound = {}",
                    c.t,
                    c.r_t,
                    c.boundary_area,
                    c.alpha,
                    c.sigma_t.map_or("--".into(), |v| format!("{v:.9e}")),
                    c.bound_rhs.map_or("--".into(), |v| format!("{v:.9e}")),
                ));
            }
            p(&mut s, format!(
                "  max bound rhs = {:?}, margin = {:?}, holds = {}",
                q.bound_rhs_max, q.margin, q.holds
            ));
        }
        if let Some(t) = &self.convergence {
            p(&mut s, format!("resolution study over {:?}:", t.resolutions));
            for row in &t.rows {
                let vals: Vec<String> = row.values.iter().map(|v| format!("{v:.9e}")).collect();
                let order = row.order.map_or("fit skipped".into(), |o| format!("{o:.3}"));
                p(&mut s, format!("  {:<34} [{}]  order {}", row.name, vals.join(", "), order));
            }
        }
        p(&mut s, "checks (value / bound / margin / tolerance):".into());
        for c in &self.checks {
            p(&mut s, format!(
                "  [{}] {:<44} {:+.6e} / {:+.6e} / {:+.3e} / {:.1e}",
                if c.passed { "ok" } else { "FAIL" },
                c.name,
                c.value,
                c.bound,
                c.margin,
                c.tolerance
            ));
        }
        for t in &self.timings {
            p(&mut s, format!("timing {:<12} {:.3}s", t.stage, t.seconds));
        }
        s
    }
}

fn write_series(path: &Path, header: &str, rows: &[(f64, f64)]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "# {header}")?;
    for (x, y) in rows {
        writeln!(f, "{x:.16e} {y:.16e}")?;
    }
    Ok(())
}

/// Write the full bundle into `dir`: the structured report (`report.json` or
/// `report.txt`), the radial profile table (`profile.dat`, bit-exact under
/// re-ingest), and the plot series.  Returns the paths written.
pub fn emit_run(
    dir: &Path,
    report: &RunReport,
    data: &SphericalInitialData,
    caps: &[CapProfile],
    text: bool,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let report_path = dir.join(if text { "report.txt" } else { "report.json" });
    if text {
        fs::write(&report_path, report.render_text())?;
    } else {
        fs::write(&report_path, report.to_json()?)?;
    }
    written.push(report_path);
    let profile_path = dir.join("profile.dat");
    data.emit_to_path(&profile_path)?;
    written.push(profile_path);
    if let Some(q) = &report.inequality {
        if !q.caps.is_empty() {
            let sig: Vec<(f64, f64)> = q.caps.iter().map(|c| (c.t, c.sigma_t_uncut)).collect();
            let path = dir.join("sigma_t.dat");
            write_series(&path, "cap height T vs boundary quotient (no discount)", &sig)?;
            written.push(path);
            let area: Vec<(f64, f64)> = q.caps.iter().map(|c| (c.t, c.boundary_area)).collect();
            let path = dir.join("boundary_area.dat");
            write_series(&path, "cap height T vs boundary area", &area)?;
            written.push(path);
        }
        if !q.capacity_family.is_empty() {
            let path = dir.join("capacity_family.dat");
            write_series(&path, "anchor offset eps vs capacity quotient", &q.capacity_family)?;
            written.push(path);
        }
    }
    for (i, cap) in caps.iter().enumerate() {
        let path = dir.join(format!("u_cap_{i}.dat"));
        write_series(&path, &format!("r vs conformal factor u at cap height T = {}", cap.t), &cap.rows)?;
        written.push(path);
    }
    Ok(written)
}
