//! Built-in initial-data families and the run configuration they are built
//! from.  Closed forms only; every derivative handed to the pipeline is
//! analytic, so convergence studies measure the solvers and not the inputs.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::curvature::{energy_density, expansion, momentum_density_radial, LightCone};
use crate::data::{SamplingMode, SphericalInitialData};
use crate::grid::Grid;
use crate::horizon::{find_outermost_horizon, HorizonKind};
use crate::profile::{Field, Profile};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Full pipeline: blow-up deformation, capped flattening, all bounds.
    Jang,
    /// Harmonic-quotient route only; no deformation stage.
    Steklov,
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Mode> {
        match s {
            "jang" => Ok(Mode::Jang),
            "steklov" => Ok(Mode::Steklov),
            other => Err(Error::InvalidInput(format!(
                "unknown mode {other:?}; expected jang or steklov"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub scenario: String,
    pub mass: f64,
    /// Interval count of the radial mesh.
    pub n: usize,
    /// Inner boundary; default depends on the scenario.
    pub r0: Option<f64>,
    pub rmax: Option<f64>,
    pub stretch: f64,
    /// Cap heights for the flattening stage, increasing.
    pub t_schedule: Vec<f64>,
    pub mode: Mode,
    /// Mass added by the cushion of the dec_bump family (absolute).
    pub cushion: Option<f64>,
    pub kappa_r_amp: Option<f64>,
    pub kappa_t_amp: Option<f64>,
    /// Required minimum of mu - |J| on the curvature-bump support.
    pub margin_floor: f64,
    /// Node table for the tabulated scenario.
    pub input: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: "schwarzschild_isotropic".into(),
            mass: 1.0,
            n: 2048,
            r0: None,
            rmax: None,
            stretch: 9.0,
            t_schedule: vec![5.0, 10.0, 20.0, 40.0],
            mode: Mode::Jang,
            cushion: None,
            kappa_r_amp: None,
            kappa_t_amp: None,
            margin_floor: 0.0,
            input: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 16 {
            return Err(Error::InvalidInput(format!(
                "mesh needs at least 16 intervals, got {}",
                self.n
            )));
        }
        if !(self.mass > 0.0) && self.scenario != "flat" && self.scenario != "tabulated" {
            return Err(Error::InvalidInput(format!("mass must be positive, got {}", self.mass)));
        }
        if self.mode == Mode::Jang {
            if self.t_schedule.is_empty() {
                return Err(Error::InvalidInput("cap schedule must not be empty".into()));
            }
            for w in self.t_schedule.windows(2) {
                if !(w[1] > w[0]) {
                    return Err(Error::InvalidInput("cap schedule must be increasing".into()));
                }
            }
            if self.t_schedule[0] <= 0.0 {
                return Err(Error::InvalidInput("cap heights must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Riemannian black-hole slice of mass m in isotropic coordinates:
/// a = (1 + m/2r)^2, rho = r a.  Minimal sphere at r = m/2, quasilocal mass
/// identically m.
pub fn isotropic_profile(m: f64) -> Profile {
    Profile::riemannian(
        Field::analytic2(
            move |r| {
                let u = 1.0 + m / (2.0 * r);
                u * u
            },
            move |r| -(1.0 + m / (2.0 * r)) * m / (r * r),
            move |r| (m / (r * r)) * (2.0 * (1.0 + m / (2.0 * r)) / r + m / (2.0 * r * r)),
        ),
        Field::analytic2(
            move |r| {
                let u = 1.0 + m / (2.0 * r);
                r * u * u
            },
            move |r| 1.0 - m * m / (4.0 * r * r),
            move |r| m * m / (2.0 * r * r * r),
        ),
    )
}

pub fn flat_profile() -> Profile {
    Profile::riemannian(Field::constant(1.0), Field::analytic2(|r| r, |_| 1.0, |_| 0.0))
}

/// C^3 monotone step on [0, 1]: 35 t^4 - 84 t^5 + 70 t^6 - 20 t^7.
fn step(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        ((((-20.0 * t + 70.0) * t - 84.0) * t + 35.0) * t) * t * t * t
    }
}

fn step_d(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        0.0
    } else {
        let one = 1.0 - t;
        140.0 * t * t * t * one * one * one
    }
}

fn step_dd(t: f64) -> f64 {
    if !(0.0..=1.0).contains(&t) {
        0.0
    } else {
        let one = 1.0 - t;
        420.0 * t * t * one * one * (1.0 - 2.0 * t)
    }
}

/// C^3 compact bump on [-1, 1]: (1 - s^2)^4.
fn bump(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        let q = 1.0 - s * s;
        q * q * q * q
    }
}

fn bump_d(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        let q = 1.0 - s * s;
        -8.0 * s * q * q * q
    }
}

/// Cushion window [1.5 m, 8 m] and curvature-bump window [2.5 m, 4 m]
/// (strictly inside the cushion, so the added energy density covers the
/// momentum density everywhere it is nonzero).
const CUSHION_LO: f64 = 1.5;
const CUSHION_HI: f64 = 8.0;
const KAPPA_LO: f64 = 2.5;
const KAPPA_HI: f64 = 4.0;

/// Parameters actually used after the deterministic amplitude search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecBumpParams {
    pub cushion: f64,
    pub kappa_r_amp: f64,
    pub kappa_t_amp: f64,
    pub margin_floor: f64,
    /// min of mu - |J| over the curvature-bump support, after the search.
    pub achieved_margin: f64,
}

/// Black-hole slice with a smooth outgoing mass cushion and compact
/// extrinsic-curvature bumps.  The area-radius profile is kept at the
/// isotropic closed form and the radial metric is chosen so the quasilocal
/// mass is exactly M(r) = m + c step((r - 1.5m)/(6.5m)); the total energy is
/// therefore m + c with no quadrature involved.
pub fn dec_bump_profile(m: f64, cushion: f64, kr_amp: f64, kt_amp: f64) -> Profile {
    let lo = CUSHION_LO * m;
    let span = (CUSHION_HI - CUSHION_LO) * m;
    let mass = move |r: f64| m + cushion * step((r - lo) / span);
    let mass_d = move |r: f64| cushion * step_d((r - lo) / span) / span;
    let rho = move |r: f64| {
        let u = 1.0 + m / (2.0 * r);
        r * u * u
    };
    let rho_p = move |r: f64| 1.0 - m * m / (4.0 * r * r);
    let rho_pp = move |r: f64| m * m / (2.0 * r * r * r);
    // a = rho' / sqrt(1 - 2 M / rho); reduces to the isotropic closed form
    // wherever the cushion is flat, in particular through the minimal sphere.
    let a_val = move |r: f64| {
        if r <= lo {
            let u = 1.0 + m / (2.0 * r);
            u * u
        } else {
            rho_p(r) / (1.0 - 2.0 * mass(r) / rho(r)).sqrt()
        }
    };
    let a_d = move |r: f64| {
        if r <= lo {
            -(1.0 + m / (2.0 * r)) * m / (r * r)
        } else {
            let d = 1.0 - 2.0 * mass(r) / rho(r);
            let dp = 2.0 * (mass(r) * rho_p(r) - mass_d(r) * rho(r)) / (rho(r) * rho(r));
            rho_pp(r) / d.sqrt() - 0.5 * rho_p(r) * dp / (d * d.sqrt())
        }
    };
    let mass_dd = move |r: f64| cushion * step_dd((r - lo) / span) / (span * span);
    let rho_ppp = move |r: f64| -1.5 * m * m / (r * r * r * r);
    let a_dd = move |r: f64| {
        if r <= lo {
            let u = 1.0 + m / (2.0 * r);
            2.0 * u * m / (r * r * r) + 0.5 * m * m / (r * r * r * r)
        } else {
            let (p, pp, ppp) = (rho(r), rho_p(r), rho_pp(r));
            let nn = mass_d(r) * p - mass(r) * pp;
            let nn_d = mass_dd(r) * p - mass(r) * ppp;
            let g = 1.0 - 2.0 * mass(r) / p;
            let gp = -2.0 * nn / (p * p);
            let gpp = -2.0 * nn_d / (p * p) + 4.0 * nn * pp / (p * p * p);
            let s = g.sqrt();
            let sp = gp / (2.0 * s);
            let spp = gpp / (2.0 * s) - gp * gp / (4.0 * s * s * s);
            rho_ppp(r) / s - 2.0 * ppp * sp / (s * s) - pp * spp / (s * s)
                + 2.0 * pp * sp * sp / (s * s * s)
        }
    };
    let mid = 0.5 * (KAPPA_LO + KAPPA_HI) * m;
    let half = 0.5 * (KAPPA_HI - KAPPA_LO) * m;
    Profile {
        a: Field::analytic2(a_val, a_d, a_dd),
        rho: Field::analytic2(rho, rho_p, rho_pp),
        kr: Field::analytic(
            move |r| kr_amp * bump((r - mid) / half),
            move |r| kr_amp * bump_d((r - mid) / half) / half,
        ),
        kt: Field::analytic(
            move |r| kt_amp * bump((r - mid) / half),
            move |r| kt_amp * bump_d((r - mid) / half) / half,
        ),
    }
}

/// Worst value of mu - |J| over nodes in the curvature-bump support.
fn dec_margin(data: &SphericalInitialData, m: f64) -> f64 {
    let mut worst = f64::INFINITY;
    for (i, &r) in data.grid.nodes().iter().enumerate() {
        if r >= KAPPA_LO * m && r <= KAPPA_HI * m {
            let f = data.fields_at_node(i);
            let mu = energy_density(&f);
            let j = momentum_density_radial(&f).abs() / f.a;
            worst = worst.min(mu - j);
        }
    }
    worst
}

fn build_dec_bump(cfg: &RunConfig, grid: &Grid) -> Result<(SphericalInitialData, DecBumpParams)> {
    let m = cfg.mass;
    let cushion = cfg.cushion.unwrap_or(0.05 * m);
    if !(cushion > 0.0) || cushion > 0.25 * m {
        return Err(Error::InvalidInput(format!(
            "cushion must lie in (0, 0.25 m]; got {cushion} for m = {m}"
        )));
    }
    // The radial metric must stay real: 1 - 2M/rho > 0 everywhere.  On the
    // cushion rho >= rho(1.5 m) ~ 2.67 m, so this bounds the cushion away
    // from ~0.33 m; checked pointwise anyway.
    {
        let p = dec_bump_profile(m, cushion, 0.0, 0.0);
        for i in 0..=400 {
            let r = CUSHION_LO * m + (CUSHION_HI - CUSHION_LO) * m * i as f64 / 400.0;
            let rho = p.rho.value(r);
            let d = 1.0 - 2.0 * (m + cushion) / rho;
            if d < 0.02 {
                return Err(Error::InvalidInput(format!(
                    "cushion {cushion} drives the radial metric degenerate near r = {r}"
                )));
            }
        }
    }
    let mut kr_amp = cfg.kappa_r_amp.unwrap_or(3e-4 / m);
    let mut kt_amp = cfg.kappa_t_amp.unwrap_or(-5e-4 / m);
    // Deterministic amplitude search: shrink the curvature bumps until the
    // dominant-energy margin clears the floor and the minimal sphere stays
    // put.  No randomness, so rebuilds are bit-identical.
    for attempt in 0..60 {
        let profile = dec_bump_profile(m, cushion, kr_amp, kt_amp);
        let data = SphericalInitialData::sample("dec_bump", &profile, grid, SamplingMode::Analytic)?
            .with_mass_hint(m + cushion);
        let margin = dec_margin(&data, m);
        let mut ok = margin >= cfg.margin_floor;
        if ok {
            // Outward expansion must stay positive outside the minimal
            // sphere so it remains the outermost marginal surface.
            for (i, &r) in data.grid.nodes().iter().enumerate() {
                if r > 0.5 * m * (1.0 + 1e-8) {
                    let th = expansion(&data.fields_at_node(i), LightCone::Future);
                    let slack = if r < 0.51 * m { -1e-10 } else { 0.0 };
                    if !(th > slack) {
                        ok = false;
                        break;
                    }
                }
            }
        }
        if ok {
            let h = find_outermost_horizon(&data, HorizonKind::Future)?;
            ok = (h.r_h - 0.5 * m).abs() <= 1e-6 * m && h.outermost;
        }
        if ok {
            let params = DecBumpParams {
                cushion,
                kappa_r_amp: kr_amp,
                kappa_t_amp: kt_amp,
                margin_floor: cfg.margin_floor,
                achieved_margin: margin,
            };
            return Ok((data, params));
        }
        let _ = attempt;
        kr_amp *= 0.7;
        kt_amp *= 0.7;
    }
    Err(Error::InvalidInput(
        "no curvature amplitude satisfies the dominant-energy margin for this cushion".into(),
    ))
}

pub struct BuiltScenario {
    pub data: SphericalInitialData,
    /// Known exact total energy, when the family pins it.
    pub expected_energy: Option<f64>,
    pub dec_bump: Option<DecBumpParams>,
}

pub fn build(cfg: &RunConfig) -> Result<BuiltScenario> {
    cfg.validate()?;
    let m = cfg.mass;
    match cfg.scenario.as_str() {
        "schwarzschild_isotropic" => {
            let r0 = cfg.r0.unwrap_or(0.4 * m);
            let rmax = cfg.rmax.unwrap_or(200.0 * m);
            check_extent(r0, rmax)?;
            let grid = Grid::new(r0, rmax, cfg.n, cfg.stretch)?;
            let data = SphericalInitialData::sample(
                "schwarzschild_isotropic",
                &isotropic_profile(m),
                &grid,
                SamplingMode::Analytic,
            )?
            .with_mass_hint(m);
            Ok(BuiltScenario { data, expected_energy: Some(m), dec_bump: None })
        }
        "flat" => {
            let r0 = cfg.r0.unwrap_or(1.0);
            let rmax = cfg.rmax.unwrap_or(300.0);
            check_extent(r0, rmax)?;
            let grid = Grid::new(r0, rmax, cfg.n, cfg.stretch)?;
            let data =
                SphericalInitialData::sample("flat", &flat_profile(), &grid, SamplingMode::Analytic)?;
            Ok(BuiltScenario { data, expected_energy: Some(0.0), dec_bump: None })
        }
        "dec_bump" => {
            let r0 = cfg.r0.unwrap_or(0.4 * m);
            let rmax = cfg.rmax.unwrap_or(200.0 * m);
            check_extent(r0, rmax)?;
            let grid = Grid::new(r0, rmax, cfg.n, cfg.stretch)?;
            let (data, params) = build_dec_bump(cfg, &grid)?;
            let e = m + params.cushion;
            Ok(BuiltScenario { data, expected_energy: Some(e), dec_bump: Some(params) })
        }
        "tabulated" => {
            let path = cfg.input.as_deref().ok_or_else(|| {
                Error::InvalidInput("tabulated scenario needs an input file".into())
            })?;
            let data = SphericalInitialData::ingest_path(std::path::Path::new(path))?;
            if data.grid.len() < 17 {
                return Err(Error::InvalidInput("tabulated mesh too coarse".into()));
            }
            check_extent(data.grid.r0, data.grid.rmax)?;
            Ok(BuiltScenario { data, expected_energy: None, dec_bump: None })
        }
        other => Err(Error::InvalidInput(format!("unknown scenario {other:?}"))),
    }
}

fn check_extent(r0: f64, rmax: f64) -> Result<()> {
    if rmax / r0 < 10.0 {
        return Err(Error::InvalidInput(format!(
            "outer boundary must sit at least a decade beyond the inner one; got [{r0}, {rmax}]"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adm::adm_energy;
    use approx::assert_abs_diff_eq;

    #[test]
    fn black_hole_scenario_reports_its_mass() {
        let cfg = RunConfig { n: 1024, ..Default::default() };
        let built = build(&cfg).unwrap();
        let rep = adm_energy(&built.data).unwrap();
        assert_abs_diff_eq!(rep.energy, 1.0, epsilon = 1e-9);
        assert_eq!(built.expected_energy, Some(1.0));
    }

    #[test]
    fn cushioned_scenario_adds_exactly_the_cushion_mass() {
        let cfg = RunConfig { scenario: "dec_bump".into(), n: 1024, ..Default::default() };
        let built = build(&cfg).unwrap();
        let params = built.dec_bump.unwrap();
        let rep = adm_energy(&built.data).unwrap();
        assert_abs_diff_eq!(rep.energy, 1.0 + params.cushion, epsilon = 1e-8);
        assert!(params.achieved_margin >= 0.0);
        assert!(params.kappa_t_amp != 0.0, "search should keep a nonzero bump");
        let h = find_outermost_horizon(&built.data, HorizonKind::Future).unwrap();
        assert_abs_diff_eq!(h.r_h, 0.5, epsilon = 1e-6);
        // Chain-rule a'' against differenced a' through the cushion.
        let prof = dec_bump_profile(1.0, params.cushion, params.kappa_r_amp, params.kappa_t_amp);
        for &r in &[2.0f64, 3.1, 5.7, 9.0] {
            let fd = (prof.a.deriv(r + 1e-5) - prof.a.deriv(r - 1e-5)) / 2e-5;
            assert_abs_diff_eq!(prof.a.deriv2(r), fd, epsilon = 1e-5);
        }
    }

    #[test]
    fn energy_margin_search_shrinks_oversized_bumps() {
        let cfg = RunConfig {
            scenario: "dec_bump".into(),
            n: 512,
            kappa_t_amp: Some(-0.3),
            kappa_r_amp: Some(0.2),
            ..Default::default()
        };
        let built = build(&cfg).unwrap();
        let params = built.dec_bump.unwrap();
        assert!(params.kappa_t_amp.abs() < 0.3, "amplitude {} not reduced", params.kappa_t_amp);
        assert!(params.achieved_margin >= 0.0);
    }

    #[test]
    fn oversized_cushion_is_rejected() {
        let cfg = RunConfig {
            scenario: "dec_bump".into(),
            n: 256,
            cushion: Some(0.6),
            ..Default::default()
        };
        assert!(matches!(build(&cfg), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn config_validation_rejects_degenerate_meshes() {
        let cfg = RunConfig { n: 8, ..Default::default() };
        assert!(matches!(build(&cfg), Err(Error::InvalidInput(_))));
        let cfg = RunConfig { rmax: Some(1.5), r0: Some(0.4), ..Default::default() };
        assert!(matches!(build(&cfg), Err(Error::InvalidInput(_))));
        let cfg = RunConfig { t_schedule: vec![5.0, 5.0], ..Default::default() };
        assert!(cfg.validate().is_err());
        assert!("steklov".parse::<Mode>().is_ok());
        assert!("other".parse::<Mode>().is_err());
    }

    #[test]
    fn tabulated_scenario_round_trips_generated_data() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("slice.dat");
        let src = build(&RunConfig { n: 256, ..Default::default() }).unwrap();
        src.data.emit_to_path(&path).unwrap();
        let cfg = RunConfig {
            scenario: "tabulated".into(),
            input: Some(path.to_string_lossy().into_owned()),
            ..Default::default()
        };
        let built = build(&cfg).unwrap();
        assert_eq!(built.data.grid.len(), src.data.grid.len());
        for (x, y) in built.data.grid.nodes().iter().zip(src.data.grid.nodes()) {
            assert_eq!(x, y);
        }
        for (x, y) in built.data.a.iter().zip(&src.data.a) {
            assert_eq!(x, y);
        }
    }
}
