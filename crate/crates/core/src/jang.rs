//! The blow-up solution of the graph equation and the deformed (graph) metric.
//!
//! For a radial height function the graph equation reduces to a first-order
//! ODE for the normalized slope beta = (f'/a)/sqrt(1 + (f'/a)^2):
//!
//! ```text
//! beta' = a [ kr (1 - beta^2) + 2 kt ] - 2 (rho'/rho) beta.
//! ```
//!
//! The solution that cylinders over the outermost marginal surface has
//! beta -> -1 there (future kind; +1 for the past kind), which is not
//! representable in f64 near the horizon: at cap heights around 40 the offset
//! 1 -/+ beta falls below 1e-16.  The solver therefore integrates
//! z = ln(delta) with delta = 1 + beta (future) or 1 - beta (past), which is
//! exact arbitrarily close to the horizon:
//!
//! ```text
//! delta' = a theta + a kr delta (2 - delta) - 2 (rho'/rho) delta   (future)
//! delta' = a theta - a kr delta (2 - delta) - 2 (rho'/rho) delta   (past)
//! ```
//!
//! with theta the expansion of the requested family; near the horizon the
//! independent variable is s = ln(r - r_h), where the startup asymptotics
//! z ~ 2s hold and steps are cheap.  The path is stored as cubic Hermite
//! interpolants of z and of the height f against xi = ln(r - r_h); every
//! derived quantity (W, the deformed radial factor b = aW, the one-form q,
//! both scalar-curvature routes, the level-set defect) is then evaluated by
//! exact differentiation of the ODE, never by differencing the path.

use std::rc::Rc;

use serde::Serialize;

use crate::curvature::{
    energy_density, expansion, momentum_density_radial, PI4,
};
use crate::data::{FieldsAt, SphericalInitialData};
use crate::horizon::{find_outermost_horizon, HorizonKind, HorizonRecord};
use crate::numerics::{extrapolate_inverse_poly, integrate_adaptive, trapezoid};
use crate::profile::{Field, Profile, SampledField};
use crate::{tol, Error, Result};

/// Startup offsets (as fractions of r_h) for the sensitivity sweep.
const SWEEP_FRACTIONS: [f64; 3] = [1e-4, 1e-5, 1e-6];
/// Largest admissible relative change of the outer solution between
/// consecutive sweep offsets.
pub(crate) const SWEEP_TOLERANCE: f64 = 1e-4;
/// Smallest startup offset (fraction of r_h) the production pass may choose.
const MIN_FRACTION: f64 = 1e-14;
/// Below this fraction of r_h the gap x = r - r_h falls toward the spacing of
/// representable radii around r_h and interpolated near-zero quantities turn
/// into staircases; the expansion (the only small quantity that matters at
/// leading order there) is replaced by its measured two-term Taylor model.
const MODEL_FRACTION: f64 = 1e-4;

/// Two-term Taylor model of the expansion about the marginal surface:
/// theta ~ slope x + curv x^2 / 2, anchored at the located root, so every
/// consumer (the slope ODE, the level-set defect) sees the same expansion
/// arbitrarily deep in the throat, where the interpolated route would be
/// dominated by the root residual and by radius quantization.
#[derive(Debug, Clone, Copy)]
struct ThetaModel {
    x_model: f64,
    slope: f64,
    curv: f64,
}

impl ThetaModel {
    fn measure(
        data: &SphericalInitialData,
        horizon: &HorizonRecord,
        kind: HorizonKind,
    ) -> ThetaModel {
        let r_h = horizon.r_h;
        let x_model = MODEL_FRACTION * r_h;
        let th = |r: f64| expansion(&data.fields_at(r), kind.cone());
        let hc = x_model.min(0.45 * (r_h - data.grid.r0));
        let curv = if hc > 0.0 {
            (th(r_h + hc) - 2.0 * th(r_h) + th(r_h - hc)) / (hc * hc)
        } else {
            0.0
        };
        ThetaModel { x_model, slope: horizon.slope, curv }
    }

    /// Expansion at exact gap x off the marginal surface; interpolated where
    /// the gap is resolvable, modeled where it is not.
    fn theta(&self, f: &FieldsAt, kind: HorizonKind, x: f64) -> f64 {
        if x < self.x_model {
            (self.slope + 0.5 * self.curv * x) * x
        } else {
            expansion(f, kind.cone())
        }
    }
}

#[derive(Debug, Clone)]
pub struct JangConfig {
    pub kind: HorizonKind,
    /// Largest cap height the downstream schedule will request; the startup
    /// offset is deepened until the height range covers it with margin.
    pub t_max: f64,
    /// Run the startup-offset sweep and reject a sensitive solution.
    pub check_sensitivity: bool,
    pub rtol: f64,
}

impl Default for JangConfig {
    fn default() -> JangConfig {
        JangConfig { kind: HorizonKind::Future, t_max: 40.0, check_sensitivity: true, rtol: 1e-11 }
    }
}

/// One startup-offset solve of the sweep, for reporting.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRecord {
    pub epsilon: f64,
    /// Height reached at the inner end of the path.
    pub f_peak: f64,
    /// Proper ḡ-length of the near-horizon throat, from r_h + epsilon to the
    /// fixed phase-switch radius.  Grows without bound as epsilon -> 0: the
    /// deformed metric opens into a cylinder.
    pub cylinder_length: f64,
}

/// Everything the conformal stage needs at one radius of the deformed slice.
#[derive(Debug, Clone, Copy)]
pub struct JangFields {
    pub r: f64,
    pub a: f64,
    pub rho: f64,
    pub rho_p: f64,
    pub delta: f64,
    pub beta: f64,
    pub beta_p: f64,
    pub w: f64,
    pub b: f64,
    pub b_p: f64,
    pub f: f64,
    pub f_p: f64,
    pub f_pp: f64,
    pub q_r: f64,
    pub q_r_p: f64,
    pub div_q: f64,
    /// Scalar curvature of b^2 dr^2 + rho^2 dOmega^2 from (b, b') directly.
    pub rbar_direct: f64,
    /// The same quantity assembled from the deformation identity:
    /// 16 pi (mu - J(w)) + |h - k|^2 terms + 2|q|^2 - 2 div q.
    pub rbar_identity: f64,
    /// Mean-curvature defect H - q(N) of the level sphere; tends to
    /// sqrt(theta'/a) at the horizon instead of zero.
    pub defect: f64,
    pub mu: f64,
    pub j_r: f64,
    /// Momentum density paired with the graph direction, J(w) = J_r beta / a.
    pub j_w: f64,
}

struct Path {
    xi: Vec<f64>,
    f: Vec<f64>,
    z_field: Field,
    f_field: Field,
    f_peak: f64,
    kappa_log: f64,
    cylinder_length: f64,
    r_h: f64,
}

impl Path {
    fn clamp_xi(&self, r: f64) -> f64 {
        let xi = (r - self.r_h).ln();
        xi.clamp(self.xi[0], *self.xi.last().unwrap())
    }

    fn delta_at(&self, r: f64) -> f64 {
        self.z_field.value(self.clamp_xi(r)).exp()
    }

    fn f_at(&self, r: f64) -> f64 {
        self.f_field.value(self.clamp_xi(r))
    }
}

pub struct JangSolution {
    pub kind: HorizonKind,
    pub horizon: HorizonRecord,
    theta: ThetaModel,
    /// Startup offset the production path was integrated from.
    pub epsilon: f64,
    /// Height at the inner end of the path; cap heights must stay below it.
    pub f_peak: f64,
    /// Largest relative change seen in the startup-offset sweep.
    pub sensitivity: f64,
    pub sweep: Vec<SweepRecord>,
    /// Worst graph-equation residual of the re-differenced height samples on
    /// the data mesh, away from the startup layer, and where it occurred.
    pub residual_max: f64,
    pub residual_at: f64,
    /// sup of sqrt(r) |f| over the outer decade of the path.
    pub decay_envelope: f64,
    pub cylinder_length: f64,
    profile: Profile,
    path: Path,
    sign: f64,
    r_max: f64,
}

fn slope_rates(f: &FieldsAt, delta: f64, kind: HorizonKind, theta: f64) -> (f64, f64) {
    let drho = f.rho_p / f.rho;
    let one_m_b2 = delta * (2.0 - delta);
    let (delta_rate, beta) = match kind {
        HorizonKind::Future => {
            (f.a * theta + f.a * f.kr * one_m_b2 - 2.0 * drho * delta, delta - 1.0)
        }
        HorizonKind::Past => {
            (f.a * theta - f.a * f.kr * one_m_b2 - 2.0 * drho * delta, 1.0 - delta)
        }
    };
    let w = 1.0 / one_m_b2.sqrt();
    let f_rate = f.a * beta * w;
    (delta_rate, f_rate)
}

/// Residual of the graph equation evaluated from a height function and its
/// first two radial derivatives; identically -(tr k) for a constant height.
pub fn graph_residual_radial(f: &FieldsAt, fp: f64, fpp: f64) -> f64 {
    let v = fp / f.a;
    let w2 = 1.0 + v * v;
    let w = w2.sqrt();
    let beta = v / w;
    (fpp - f.a_p / f.a * fp) / (f.a * f.a * w2 * w) - f.kr / w2
        + 2.0 * ((f.rho_p / (f.a * f.rho)) * beta - f.kt)
}

fn uniform_ladder(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
}

fn solve_path(
    data: &SphericalInitialData,
    horizon: &HorizonRecord,
    model: &ThetaModel,
    kind: HorizonKind,
    epsilon: f64,
    rtol: f64,
    dense: bool,
) -> Result<Path> {
    let r_h = horizon.r_h;
    let r_max = data.grid.rmax;
    let span = r_max - r_h;
    let x_sw = (0.05 * r_h).min(0.25 * span);
    if epsilon >= 0.5 * x_sw {
        return Err(Error::InvalidInput(format!(
            "startup offset {epsilon:.3e} is not small against the domain"
        )));
    }
    let a_h = data.profile.a.value(r_h);
    let delta0 = 0.5 * a_h * horizon.slope * epsilon * epsilon;
    if !(delta0 > 0.0) {
        return Err(Error::DegenerateDenominator(
            "blow-up startup: expansion slope at the marginal surface".into(),
        ));
    }
    let mut xi = Vec::new();
    let mut z = Vec::new();
    let mut dz = Vec::new();
    let mut fr = Vec::new();
    let mut df = Vec::new();
    // x is the exact gap r - r_h as the integrator knows it; recomputing it
    // from r would quantize it at ulp(r_h) and defeat the model switch.
    let rates = |r: f64, x: f64, delta: f64| {
        let f = data.fields_at(r);
        slope_rates(&f, delta, kind, model.theta(&f, kind, x))
    };
    {
        // Log phase: s = ln(r - r_h) from ln(epsilon) to ln(x_sw).
        let s0 = epsilon.ln();
        let s1 = x_sw.ln();
        let stops = uniform_ladder(s0, s1, 160);
        let rhs = |s: f64, y: &[f64], dy: &mut [f64]| {
            let x = s.exp();
            let delta = y[0].exp();
            let (dr, fp) = rates(r_h + x, x, delta);
            dy[0] = x * dr / delta;
            dy[1] = x * fp;
        };
        integrate_adaptive(
            rhs,
            s0,
            &stops,
            &[delta0.ln(), 0.0],
            rtol,
            1e-12,
            |s: f64, y: &[f64]| {
                let x = s.exp();
                let delta = y[0].exp();
                let (dr, fp) = rates(r_h + x, x, delta);
                xi.push(s);
                z.push(y[0]);
                dz.push(x * dr / delta);
                fr.push(y[1]);
                df.push(x * fp);
            },
        )
        .map_err(|e| diagnose_escape(e, &xi, &z, r_h, x_sw))?;
    }
    {
        // Radial phase: r from r_h + x_sw to r_max, landing on a geometric
        // ladder and (when dense) on every data node outside the switch.
        let r0 = r_h + x_sw;
        let mut stops: Vec<f64> = (1..=320)
            .map(|i| r_h + x_sw * (span / x_sw).powf(i as f64 / 320.0))
            .collect();
        if dense {
            stops.extend(data.grid.nodes().iter().copied().filter(|&r| r > r0 * (1.0 + 1e-13)));
        }
        stops.push(r_max);
        stops.sort_by(|p, q| p.partial_cmp(q).unwrap());
        stops.dedup_by(|p, q| (*p - *q).abs() < 1e-12 * r_max);
        let y0 = [*z.last().unwrap(), *fr.last().unwrap()];
        let rhs = |r: f64, y: &[f64], dy: &mut [f64]| {
            let delta = y[0].exp();
            let (dr, fp) = rates(r, r - r_h, delta);
            dy[0] = dr / delta;
            dy[1] = fp;
        };
        integrate_adaptive(rhs, r0, &stops, &y0, rtol, 1e-12, |r: f64, y: &[f64]| {
            let x = r - r_h;
            let delta = y[0].exp();
            let (dr, fp) = rates(r, x, delta);
            xi.push(x.ln());
            z.push(y[0]);
            dz.push(x * dr / delta);
            fr.push(y[1]);
            df.push(x * fp);
        })
        .map_err(|e| diagnose_escape(e, &xi, &z, r_h, x_sw))?;
    }
    // Drop duplicate landings (phase seam, ladder/node coincidences).
    let mut keep = vec![true; xi.len()];
    for i in 1..xi.len() {
        if xi[i] - xi[i - 1] < 1e-12 {
            keep[i] = false;
        }
    }
    let filt = |v: &[f64]| -> Vec<f64> {
        v.iter().zip(&keep).filter(|(_, &k)| k).map(|(&x, _)| x).collect()
    };
    let (xi, z, dz, mut fr, df) = (filt(&xi), filt(&z), filt(&dz), filt(&fr), filt(&df));
    if let Some(&zmax) = z.iter().max_by(|p, q| p.partial_cmp(q).unwrap()) {
        if zmax >= (2.0f64).ln() - 1e-9 {
            let at = xi[z.iter().position(|&v| v >= (2.0f64).ln() - 1e-9).unwrap()];
            return Err(Error::BlowupEscape { r: r_h + at.exp() });
        }
    }
    // Normalize the height to vanish at the outer boundary.
    let tail = *fr.last().unwrap();
    for v in &mut fr {
        *v -= tail;
    }
    let f_peak = fr[0].abs();
    // Height slope against ln(r - r_h) in the startup region; used to pick a
    // deeper startup offset when a larger cap height is required.
    let k = 12.min(xi.len() - 1);
    let kappa_log = ((fr[0] - fr[k]) / (xi[k] - xi[0])).abs();
    // Throat length up to the phase switch: integrate b dr = (a W x) d xi.
    let n_throat = xi.iter().take_while(|&&s| s <= x_sw.ln() + 1e-9).count();
    let throat: Vec<f64> = (0..n_throat)
        .map(|i| {
            let x = xi[i].exp();
            let delta = z[i].exp();
            let a = data.profile.a.value(r_h + x);
            a * x / (delta * (2.0 - delta)).sqrt()
        })
        .collect();
    let cylinder_length = trapezoid(&xi[..n_throat], &throat);
    let z_field = Field::Sampled(Rc::new(SampledField::with_derivatives(&xi, &z, &dz, None)?));
    let f_field = Field::Sampled(Rc::new(SampledField::with_derivatives(&xi, &fr, &df, None)?));
    Ok(Path { xi, f: fr, z_field, f_field, f_peak, kappa_log, cylinder_length, r_h })
}

/// Map an integrator failure onto the geometric event that caused it when the
/// recorded path shows the slope hitting |beta| = 1.
fn diagnose_escape(e: Error, xi: &[f64], z: &[f64], r_h: f64, x_sw: f64) -> Error {
    if let Some(i) = z.iter().position(|&v| v >= (1.9f64).ln()) {
        return Error::BlowupEscape { r: r_h + xi[i].exp() };
    }
    if let (Some(&last_z), Some(&last_xi)) = (z.last(), xi.last()) {
        // Collapsing back toward the trapped side outside the startup region.
        if last_z < (1e-12f64).ln() && last_xi > (0.8 * x_sw).ln() {
            return Error::BlowupEscape { r: r_h + last_xi.exp() };
        }
    }
    e
}

/// Solve the blow-up problem over the outermost marginal surface of the
/// requested kind.  Runs the startup-offset sensitivity sweep, deepens the
/// offset until the height range covers the requested cap schedule, and
/// re-differences the height on the data mesh as an independent residual
/// check.
pub fn solve(data: &SphericalInitialData, cfg: &JangConfig) -> Result<JangSolution> {
    let horizon = find_outermost_horizon(data, cfg.kind)?;
    if !(horizon.slope > 0.0) {
        return Err(Error::DegenerateDenominator(format!(
            "expansion slope {:.3e} at the marginal surface; the blow-up startup needs it positive",
            horizon.slope
        )));
    }
    let r_h = horizon.r_h;
    let r_max = data.grid.rmax;
    let span = r_max - r_h;
    let sign = match cfg.kind {
        HorizonKind::Future => 1.0,
        HorizonKind::Past => -1.0,
    };
    let model = ThetaModel::measure(data, &horizon, cfg.kind);
    let mut sweep = Vec::new();
    let mut sensitivity = 0.0_f64;
    if cfg.check_sensitivity {
        let mut paths = Vec::new();
        for frac in SWEEP_FRACTIONS {
            let p = solve_path(data, &horizon, &model, cfg.kind, frac * r_h, cfg.rtol, false)?;
            sweep.push(SweepRecord {
                epsilon: frac * r_h,
                f_peak: p.f_peak,
                cylinder_length: p.cylinder_length,
            });
            paths.push(p);
        }
        let probes: Vec<f64> =
            (0..8).map(|i| r_h + span * (0.25 + 0.70 * i as f64 / 7.0)).collect();
        for pair in paths.windows(2) {
            for &r in &probes {
                let (f0, f1) = (pair[0].f_at(r), pair[1].f_at(r));
                let (d0, d1) = (pair[0].delta_at(r), pair[1].delta_at(r));
                let df = (f0 - f1).abs() / f0.abs().max(f1.abs()).max(1e-8);
                let dd = (d0 - d1).abs() / d0.abs().max(d1.abs()).max(1e-8);
                sensitivity = sensitivity.max(df).max(dd);
            }
        }
        if sensitivity > SWEEP_TOLERANCE {
            return Err(Error::SolveFailure(format!(
                "outer solution moves by {sensitivity:.3e} under startup-offset refinement \
                 (allowed {SWEEP_TOLERANCE:.1e}); the blow-up solve is not converged"
            )));
        }
    }
    // Production pass: deepen the offset until the height range covers the
    // cap schedule with 10% headroom, using the logarithmic height slope.
    let mut eps = 1e-6 * r_h;
    let probe = solve_path(data, &horizon, &model, cfg.kind, eps, cfg.rtol, false)?;
    if cfg.t_max > 0.0 && probe.f_peak < 1.05 * cfg.t_max {
        if !(probe.kappa_log > 0.0) {
            return Err(Error::DegenerateDenominator(
                "logarithmic height slope at the horizon".into(),
            ));
        }
        let deeper = eps * (-(1.1 * cfg.t_max - probe.f_peak) / probe.kappa_log).exp();
        eps = deeper.max(MIN_FRACTION * r_h);
    }
    let path = solve_path(data, &horizon, &model, cfg.kind, eps, cfg.rtol, true)?;
    let mut sol = JangSolution {
        kind: cfg.kind,
        horizon,
        theta: model,
        epsilon: eps,
        f_peak: path.f_peak,
        sensitivity,
        sweep,
        residual_max: 0.0,
        residual_at: f64::NAN,
        decay_envelope: 0.0,
        cylinder_length: path.cylinder_length,
        profile: data.profile.clone(),
        path,
        sign,
        r_max,
    };
    sol.decay_envelope = sol.compute_decay_envelope();
    let (res, at) = sol.residual_on_mesh(data)?;
    sol.residual_max = res;
    sol.residual_at = at;
    // The re-differencing error scales like (h/x)^4; only production meshes
    // resolve the startup layer well enough for the pinned tolerance to be a
    // meaningful gate.
    if data.grid.n >= 2048 && res > tol::JANG {
        return Err(Error::SolveFailure(format!(
            "graph-equation residual {res:.3e} at r = {at} exceeds {:.1e}",
            tol::JANG
        )));
    }
    Ok(sol)
}

impl JangSolution {
    pub fn r_h(&self) -> f64 {
        self.horizon.r_h
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    /// Offset of |beta| from 1, always positive and representable.
    pub fn delta_at(&self, r: f64) -> f64 {
        self.path.delta_at(r)
    }

    pub fn beta_at(&self, r: f64) -> f64 {
        self.sign * (self.path.delta_at(r) - 1.0)
    }

    /// Height of the graph, normalized to vanish at the outer boundary.
    pub fn f_at(&self, r: f64) -> f64 {
        self.path.f_at(r)
    }

    /// Radius where the height passes the requested cap level.
    pub fn cap_radius(&self, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::InvalidInput(format!("cap height must be positive, got {t}")));
        }
        if t >= self.f_peak {
            return Err(Error::CapOutOfRange { height: t, available: self.f_peak });
        }
        let level: Vec<f64> = self.path.f.iter().map(|&v| self.sign * v).collect();
        // Outermost crossing: scan inward for the first path point at or
        // above the level.
        let Some(i) = (0..level.len()).rev().find(|&i| level[i] >= t) else {
            return Err(Error::CapOutOfRange { height: t, available: self.f_peak });
        };
        if i + 1 >= level.len() {
            return Err(Error::CapOutOfRange { height: t, available: self.f_peak });
        }
        let (mut lo, mut hi) = (self.path.xi[i], self.path.xi[i + 1]);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.sign * self.path.f_field.value(mid) >= t {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-14 {
                break;
            }
        }
        Ok(self.r_h() + (0.5 * (lo + hi)).exp())
    }

    /// Full derived-geometry chain at one radius.  The slope offset comes
    /// from the stored path; every derivative is evaluated from the ODE and
    /// the data profile, exactly.
    pub fn fields(&self, r: f64) -> JangFields {
        let f = FieldsAt {
            r,
            a: self.profile.a.value(r),
            a_p: self.profile.a.deriv(r),
            rho: self.profile.rho.value(r),
            rho_p: self.profile.rho.deriv(r),
            rho_pp: self.profile.rho.deriv2(r),
            kr: self.profile.kr.value(r),
            kr_p: self.profile.kr.deriv(r),
            kt: self.profile.kt.value(r),
            kt_p: self.profile.kt.deriv(r),
        };
        let delta = self.path.delta_at(r);
        self.chain(&f, delta)
    }

    fn chain(&self, f: &FieldsAt, delta: f64) -> JangFields {
        let one_m_b2 = delta * (2.0 - delta);
        let beta = self.sign * (delta - 1.0);
        let w = 1.0 / one_m_b2.sqrt();
        let drho = f.rho_p / f.rho;
        let beta_p = f.a * (f.kr * one_m_b2 + 2.0 * f.kt) - 2.0 * drho * beta;
        let ddrho = f.rho_pp / f.rho - drho * drho;
        let beta_pp = f.a_p * (f.kr * one_m_b2 + 2.0 * f.kt)
            + f.a * (f.kr_p * one_m_b2 - 2.0 * f.kr * beta * beta_p + 2.0 * f.kt_p)
            - 2.0 * ddrho * beta
            - 2.0 * drho * beta_p;
        let w_p = beta * beta_p * w * w * w;
        let b = f.a * w;
        let b_p = f.a_p * w + f.a * w_p;
        let f_p = f.a * beta * w;
        let f_pp = f.a_p * beta * w + f.a * beta_p * w * w * w;
        let height = self.path.f_at(f.r);
        let q_r = beta * (beta_p * w * w - f.a * f.kr);
        let q_r_p = beta_p * (beta_p * w * w - f.a * f.kr)
            + beta
                * (beta_pp * w * w + 2.0 * beta * beta_p * beta_p * w * w * w * w
                    - f.a_p * f.kr
                    - f.a * f.kr_p);
        let div_q = (2.0 * drho * (q_r / b) + q_r_p / b - q_r * b_p / (b * b)) / b;
        let rbar_direct = (2.0 / (f.rho * f.rho)) * (1.0 - (f.rho_p / b) * (f.rho_p / b))
            - (4.0 / (b * b * f.rho)) * (f.rho_pp - f.rho_p * b_p / b);
        let mu = energy_density(f);
        let j_r = momentum_density_radial(f);
        let j_w = j_r * beta / f.a;
        let hk_r = beta_p / f.a - f.kr * one_m_b2;
        let hk_t = (f.rho_p / (f.a * f.rho)) * beta - f.kt;
        let rbar_identity = 4.0 * PI4 * (mu - j_w)
            + hk_r * hk_r
            + 2.0 * hk_t * hk_t
            + 2.0 * (q_r / b) * (q_r / b)
            - 2.0 * div_q;
        // H - q(N) of the level sphere: w (2 rho'/(a rho) - 2 beta kt), which
        // via 2 rho'/(a rho) = theta -/+ 2 kt and cone + beta = cone delta is
        // w (theta - 2 cone kt delta) -- the form that stays accurate deep in
        // the throat, where theta comes from the Taylor model.
        let theta = self.theta.theta(f, self.kind, f.r - self.path.r_h);
        let defect = w * (theta - 2.0 * self.sign * f.kt * delta);
        JangFields {
            r: f.r,
            a: f.a,
            rho: f.rho,
            rho_p: f.rho_p,
            delta,
            beta,
            beta_p,
            w,
            b,
            b_p,
            f: height,
            f_p,
            f_pp,
            q_r,
            q_r_p,
            div_q,
            rbar_direct,
            rbar_identity,
            defect,
            mu,
            j_r,
            j_w,
        }
    }

    /// ADM-type energy of the deformed metric, from the tail of its mass
    /// function.  The deformation dies off like 1/r^4, so this must agree
    /// with the energy of the input data.
    pub fn deformed_energy(&self, data: &SphericalInitialData) -> Result<f64> {
        let r = data.grid.nodes();
        let idx = data.grid.outer_decade();
        let xs: Vec<f64> = idx.iter().map(|&i| r[i]).collect();
        let ms: Vec<f64> = idx
            .iter()
            .map(|&i| {
                let jf = self.fields(r[i]);
                let rho = data.rho[i];
                let rho_p = data.rho_p[i];
                0.5 * rho * (1.0 - (rho_p / jf.b) * (rho_p / jf.b))
            })
            .collect();
        let (e, _) = extrapolate_inverse_poly(&xs, &ms, 3)?;
        Ok(e)
    }

    fn compute_decay_envelope(&self) -> f64 {
        let cut = self.r_max / 10.0;
        let mut sup = 0.0_f64;
        for (i, &xi) in self.path.xi.iter().enumerate() {
            let r = self.r_h() + xi.exp();
            if r >= cut {
                sup = sup.max(r.sqrt() * self.path.f[i].abs());
            }
        }
        sup
    }

    /// Independent residual check: sample the height on the data mesh outside
    /// the startup layer, re-differentiate by 4th-order finite differences,
    /// and push through the pointwise graph-equation residual.
    pub fn residual_on_mesh(&self, data: &SphericalInitialData) -> Result<(f64, f64)> {
        // The height profile has a square-root cusp at the marginal sphere, so
        // the re-differencing error grows like x^(-7/2) toward it; the window
        // must clear the cusp's curvature scale, not just the startup layer.
        let cut = self.r_h() * 1.05;
        let rs: Vec<f64> =
            data.grid.nodes().iter().copied().filter(|&r| r >= cut).collect();
        if rs.len() < 8 {
            return Err(Error::InvalidInput(
                "fewer than 8 mesh nodes outside the startup layer".into(),
            ));
        }
        let fs: Vec<f64> = rs.iter().map(|&r| self.f_at(r)).collect();
        let sampled = SampledField::new(&rs, &fs, 4)?;
        let mut worst = 0.0_f64;
        let mut at = rs[0];
        for i in 2..rs.len() - 2 {
            let f = data.fields_at(rs[i]);
            let res = graph_residual_radial(&f, sampled.node_d1()[i], sampled.node_d2()[i]);
            if res.abs() > worst {
                worst = res.abs();
                at = rs[i];
            }
        }
        Ok((worst, at))
    }
}

/// Discretization study for the curvature identity: sample the solution
/// chain's *values* (b, beta, and the flux combination rho^2 q_r / b) on a
/// uniform mesh over [lo, hi], re-differentiate them at 2nd order, and
/// assemble the mismatch between the direct and identity curvature routes.
/// The mismatch vanishes with exact derivatives, so what remains measures the
/// difference order.
pub fn identity_residual_study(
    sol: &JangSolution,
    data: &SphericalInitialData,
    lo: f64,
    hi: f64,
    n: usize,
) -> Result<f64> {
    let h = (hi - lo) / n as f64;
    let rs: Vec<f64> = (0..=n).map(|i| lo + h * i as f64).collect();
    let fields: Vec<JangFields> = rs.iter().map(|&r| sol.fields(r)).collect();
    let b: Vec<f64> = fields.iter().map(|jf| jf.b).collect();
    let beta: Vec<f64> = fields.iter().map(|jf| jf.beta).collect();
    let psi: Vec<f64> = fields
        .iter()
        .enumerate()
        .map(|(i, jf)| {
            let rho = data.fields_at(rs[i]).rho;
            rho * rho * jf.q_r / jf.b
        })
        .collect();
    let b_fd = SampledField::new(&rs, &b, 2)?;
    let beta_fd = SampledField::new(&rs, &beta, 2)?;
    let psi_fd = SampledField::new(&rs, &psi, 2)?;
    let mut worst = 0.0_f64;
    for i in 2..rs.len() - 2 {
        let f = data.fields_at(rs[i]);
        let jf = &fields[i];
        let bp = b_fd.node_d1()[i];
        let betap = beta_fd.node_d1()[i];
        let psip = psi_fd.node_d1()[i];
        let direct = (2.0 / (f.rho * f.rho)) * (1.0 - (f.rho_p / jf.b) * (f.rho_p / jf.b))
            - (4.0 / (jf.b * jf.b * f.rho)) * (f.rho_pp - f.rho_p * bp / jf.b);
        let one_m_b2 = jf.delta * (2.0 - jf.delta);
        let hk_r = betap / f.a - f.kr * one_m_b2;
        let hk_t = (f.rho_p / (f.a * f.rho)) * jf.beta - f.kt;
        let div_q = psip / (jf.b * f.rho * f.rho);
        let ident = 4.0 * PI4 * (jf.mu - jf.j_w)
            + hk_r * hk_r
            + 2.0 * hk_t * hk_t
            + 2.0 * (jf.q_r / jf.b) * (jf.q_r / jf.b)
            - 2.0 * div_q;
        worst = worst.max((direct - ident).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SamplingMode;
    use crate::fd_oracle::Chart;
    use crate::grid::Grid;
    use approx::assert_abs_diff_eq;

    fn isotropic(m: f64) -> Profile {
        Profile::riemannian(
            Field::analytic2(
                move |r| {
                    let u = 1.0 + m / (2.0 * r);
                    u * u
                },
                move |r| -(1.0 + m / (2.0 * r)) * m / (r * r),
                move |r| {
                    let u = 1.0 + m / (2.0 * r);
                    (m / (r * r)) * (2.0 * u / r + m / (2.0 * r * r))
                },
            ),
            Field::analytic2(
                move |r| r * (1.0 + m / (2.0 * r)) * (1.0 + m / (2.0 * r)),
                move |r| 1.0 - m * m / (4.0 * r * r),
                move |r| m * m / (2.0 * r * r * r),
            ),
        )
    }

    fn bh_data(m: f64, n: usize) -> SphericalInitialData {
        let g = Grid::new(0.4 * m, 200.0 * m, n, 9.0).unwrap();
        SphericalInitialData::sample("bh", &isotropic(m), &g, SamplingMode::Analytic).unwrap()
    }

    #[test]
    fn time_symmetric_slope_obeys_the_inverse_area_law() {
        // With k = 0 the ODE forces rho^2 beta = const = -rho_h^2.
        let data = bh_data(1.0, 512);
        let sol = solve(&data, &JangConfig { t_max: 10.0, ..Default::default() }).unwrap();
        let rho_h2 = sol.horizon.rho * sol.horizon.rho;
        for &r in &[0.52, 0.7, 1.0, 3.0, 10.0, 60.0] {
            let jf = sol.fields(r);
            let rho2 = data.profile.rho.value(r).powi(2);
            assert_abs_diff_eq!(jf.beta * rho2, -rho_h2, epsilon = 2e-6 * rho_h2);
            assert!(jf.b >= data.profile.a.value(r) - 1e-12, "b >= a violated at {r}");
        }
    }

    #[test]
    fn height_tail_matches_the_analytic_falloff() {
        let data = bh_data(1.0, 512);
        let sol = solve(&data, &JangConfig { t_max: 10.0, ..Default::default() }).unwrap();
        // f ~ 4 m^2 (1/r - 1/r_max) with O(m/r) relative corrections.
        for &r in &[20.0, 40.0, 80.0] {
            let expect = 4.0 * (1.0 / r - 1.0 / 200.0);
            let got = sol.f_at(r);
            assert!(
                (got - expect).abs() < 0.1 * expect,
                "f({r}) = {got}, expected about {expect}"
            );
        }
        assert!(sol.sensitivity < SWEEP_TOLERANCE);
        assert!(sol.decay_envelope.is_finite());
    }

    #[test]
    fn curvature_routes_agree_along_the_solution() {
        let data = bh_data(1.0, 512);
        let sol = solve(&data, &JangConfig { t_max: 10.0, ..Default::default() }).unwrap();
        for &r in &[0.55, 0.8, 1.5, 4.0, 20.0, 100.0] {
            let jf = sol.fields(r);
            let scale = jf.rbar_direct.abs().max(0.25);
            assert!(
                (jf.rbar_direct - jf.rbar_identity).abs() < 1e-7 * scale,
                "curvature routes disagree at r = {r}: {} vs {}",
                jf.rbar_direct,
                jf.rbar_identity
            );
        }
    }

    #[test]
    fn level_set_defect_approaches_the_horizon_limit() {
        // k = 0: defect = W theta_+ -> sqrt(theta'/a) = 1/(2m) at the horizon.
        let m = 1.0;
        let data = bh_data(m, 512);
        let sol = solve(&data, &JangConfig { t_max: 20.0, ..Default::default() }).unwrap();
        let jf = sol.fields(sol.r_h() + 1e-6);
        assert_abs_diff_eq!(jf.defect, 1.0 / (2.0 * m), epsilon = 1e-3);
    }

    #[test]
    fn deformation_preserves_the_total_energy() {
        let data = bh_data(1.0, 512);
        let sol = solve(&data, &JangConfig { t_max: 10.0, ..Default::default() }).unwrap();
        let e = sol.deformed_energy(&data).unwrap();
        assert_abs_diff_eq!(e, 1.0, epsilon = 1e-3);
    }

    #[test]
    fn past_solution_mirrors_future_on_time_symmetric_data() {
        let data = bh_data(1.0, 512);
        let fut = solve(&data, &JangConfig { t_max: 10.0, ..Default::default() }).unwrap();
        let pst = solve(
            &data,
            &JangConfig { kind: HorizonKind::Past, t_max: 10.0, ..Default::default() },
        )
        .unwrap();
        for &r in &[0.6, 1.0, 5.0, 50.0] {
            assert_abs_diff_eq!(fut.f_at(r), -pst.f_at(r), epsilon = 1e-6 * fut.f_at(0.6).abs());
            assert_abs_diff_eq!(fut.beta_at(r), -pst.beta_at(r), epsilon = 1e-8);
        }
    }

    #[test]
    fn cap_radius_reproduces_height_levels() {
        let data = bh_data(1.0, 512);
        let sol = solve(&data, &JangConfig { t_max: 20.0, ..Default::default() }).unwrap();
        for t in [5.0, 10.0, 20.0] {
            let r_t = sol.cap_radius(t).unwrap();
            assert!(r_t > sol.r_h());
            assert_abs_diff_eq!(sol.f_at(r_t), t, epsilon = 1e-8 * t);
        }
        assert!(matches!(
            sol.cap_radius(10.0 * sol.f_peak),
            Err(Error::CapOutOfRange { .. })
        ));
    }

    #[test]
    fn radial_residual_matches_the_3d_oracle() {
        // Generic non-solution height on curved data with k != 0: the radial
        // residual formula must agree with the full 3-D contraction.
        let p = Profile {
            a: Field::analytic2(
                |r| 1.0 + 0.6 / (1.0 + r * r),
                |r| -1.2 * r / ((1.0 + r * r) * (1.0 + r * r)),
                |r| (-1.2 * (1.0 + r * r) + 4.8 * r * r) / (1.0 + r * r).powi(3),
            ),
            rho: Field::analytic2(
                |r| r * (1.0 + 0.2 / (1.0 + r)),
                |r| 1.0 + 0.2 / ((1.0 + r) * (1.0 + r)),
                |r| -0.4 / (1.0 + r).powi(3),
            ),
            kr: Field::analytic(
                |r| 0.15 / (1.0 + 0.5 * r * r),
                |r| -0.15 * r / ((1.0 + 0.5 * r * r) * (1.0 + 0.5 * r * r)),
            ),
            kt: Field::analytic(
                |r| -0.1 / ((1.0 + 0.3 * r * r) * (1.0 + 0.3 * r * r)),
                |r| 0.12 * r / (1.0 + 0.3 * r * r).powi(3),
            ),
        };
        let g = Grid::new(0.8, 12.0, 64, 2.0).unwrap();
        let data = SphericalInitialData::sample("gen", &p, &g, SamplingMode::Analytic).unwrap();
        let chart = Chart::new(&p);
        let height = |r: f64| 0.3 / (1.0 + r) + 0.1 * (0.5 * r).sin();
        let hp = |r: f64| -0.3 / ((1.0 + r) * (1.0 + r)) + 0.05 * (0.5 * r).cos();
        let hpp = |r: f64| 0.6 / (1.0 + r).powi(3) - 0.025 * (0.5 * r).sin();
        for &r in &[1.5, 2.2, 3.7, 5.1] {
            let f = data.fields_at(r);
            let radial = graph_residual_radial(&f, hp(r), hpp(r));
            let oracle = chart.graph_equation_residual(&height, [r, 0.0, 0.0], 8e-3);
            let scale = radial.abs().max(0.05);
            assert!(
                (radial - oracle).abs() < 1e-6 * scale.max(1.0),
                "residual mismatch at r = {r}: {radial} vs {oracle}"
            );
        }
    }

    #[test]
    fn outer_trapped_annulus_escapes_the_graph() {
        // A future horizon at r ~ 2 with a past-trapped annulus around r = 4:
        // the slope is driven to +1 there and the solve must report escape.
        let bump = |r: f64, c: f64, w: f64| -> f64 {
            let t = (r - c) / w;
            if t.abs() >= 1.0 {
                0.0
            } else {
                (1.0 - t * t) * (1.0 - t * t)
            }
        };
        let bump_d = |r: f64, c: f64, w: f64| -> f64 {
            let t = (r - c) / w;
            if t.abs() >= 1.0 {
                0.0
            } else {
                -4.0 * t * (1.0 - t * t) / w
            }
        };
        let p = Profile {
            a: Field::constant(1.0),
            rho: Field::analytic2(|r| r, |_| 1.0, |_| 0.0),
            kr: Field::constant(0.0),
            kt: Field::analytic(
                move |r| -0.65 * bump(r, 2.0, 0.8) + 1.6 * bump(r, 4.0, 0.5),
                move |r| -0.65 * bump_d(r, 2.0, 0.8) + 1.6 * bump_d(r, 4.0, 0.5),
            ),
        };
        let g = Grid::new(1.0, 40.0, 256, 4.0).unwrap();
        let data = SphericalInitialData::sample("esc", &p, &g, SamplingMode::Analytic).unwrap();
        match solve(&data, &JangConfig { t_max: 5.0, ..Default::default() }) {
            Err(Error::BlowupEscape { r, .. }) => {
                assert!(r > 2.0 && r < 4.5, "escape radius {r} outside the trapped annulus")
            }
            Err(e) => panic!("expected a blow-up escape, got {e:?}"),
            Ok(_) => panic!("expected a blow-up escape, got a solution"),
        }
    }

    #[test]
    fn identity_study_residual_shrinks_at_second_order() {
        let data = bh_data(1.0, 256);
        let sol = solve(&data, &JangConfig { t_max: 5.0, ..Default::default() }).unwrap();
        let r1 = identity_residual_study(&sol, &data, 0.7, 30.0, 200).unwrap();
        let r2 = identity_residual_study(&sol, &data, 0.7, 30.0, 400).unwrap();
        let order = (r1 / r2).log2();
        assert!(order > 1.5 && order < 2.5, "observed order {order}");
    }
}
