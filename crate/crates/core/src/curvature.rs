//! Pointwise geometry of spherical initial data in the gauge
//! g = a^2 dr^2 + rho^2 dOmega^2 with extrinsic curvature eigenvalues
//! (kr, kt, kt): scalar curvature, constraint densities, null expansions,
//! quasi-local mass, and the dominant-energy margin.

use crate::data::{FieldsAt, SphericalInitialData};
use crate::{Error, Result};

pub const PI4: f64 = 4.0 * std::f64::consts::PI;

/// Scalar curvature of the slice metric.
pub fn scalar_curvature(f: &FieldsAt) -> f64 {
    let w = f.rho_p / f.a;
    (2.0 / (f.rho * f.rho)) * (1.0 - w * w)
        - (4.0 / (f.a * f.a * f.rho)) * (f.rho_pp - f.rho_p * f.a_p / f.a)
}

pub fn trace_k(f: &FieldsAt) -> f64 {
    f.kr + 2.0 * f.kt
}

pub fn k_norm_sq(f: &FieldsAt) -> f64 {
    f.kr * f.kr + 2.0 * f.kt * f.kt
}

/// Energy density from the Hamiltonian constraint:
/// 16 pi mu = R + (tr k)^2 - |k|^2.
pub fn energy_density(f: &FieldsAt) -> f64 {
    let tr = trace_k(f);
    (scalar_curvature(f) + tr * tr - k_norm_sq(f)) / (4.0 * PI4)
}

/// Covariant radial component of the momentum density from the momentum
/// constraint: 8 pi J_r = 2 [ (rho'/rho)(kr - kt) - kt' ].
pub fn momentum_density_radial(f: &FieldsAt) -> f64 {
    ((f.rho_p / f.rho) * (f.kr - f.kt) - f.kt_p) / PI4
}

/// Metric norm |J|_g = |J_r| / a.
pub fn momentum_norm(f: &FieldsAt) -> f64 {
    momentum_density_radial(f).abs() / f.a
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LightCone {
    Future,
    Past,
}

/// Null expansion of the centered sphere: theta = 2 rho'/(a rho) +/- 2 kt
/// (+ future / - past convention for the outgoing family).
pub fn expansion(f: &FieldsAt, cone: LightCone) -> f64 {
    let base = 2.0 * f.rho_p / (f.a * f.rho);
    match cone {
        LightCone::Future => base + 2.0 * f.kt,
        LightCone::Past => base - 2.0 * f.kt,
    }
}

/// Radial derivative of the expansion, assembled from the same field data.
pub fn expansion_deriv(f: &FieldsAt, cone: LightCone) -> f64 {
    let d_base = 2.0
        * (f.rho_pp / (f.a * f.rho)
            - f.rho_p * f.a_p / (f.a * f.a * f.rho)
            - f.rho_p * f.rho_p / (f.a * f.rho * f.rho));
    match cone {
        LightCone::Future => d_base + 2.0 * f.kt_p,
        LightCone::Past => d_base - 2.0 * f.kt_p,
    }
}

/// Quasi-local mass of the centered sphere: (rho/2)(1 - (rho'/a)^2).
pub fn quasilocal_mass(f: &FieldsAt) -> f64 {
    let w = f.rho_p / f.a;
    0.5 * f.rho * (1.0 - w * w)
}

/// Constraint densities sampled over a whole data set.
pub struct ConstraintField {
    pub r: Vec<f64>,
    pub mu: Vec<f64>,
    pub j_r: Vec<f64>,
    pub j_norm: Vec<f64>,
    /// mu - |J|; nonnegative iff the dominant energy condition holds here.
    pub dec_margin: Vec<f64>,
}

pub fn constraints(data: &SphericalInitialData) -> ConstraintField {
    let n = data.grid.len();
    let mut out = ConstraintField {
        r: data.grid.nodes().to_vec(),
        mu: Vec::with_capacity(n),
        j_r: Vec::with_capacity(n),
        j_norm: Vec::with_capacity(n),
        dec_margin: Vec::with_capacity(n),
    };
    for i in 0..n {
        let f = data.fields_at_node(i);
        let mu = energy_density(&f);
        let jr = momentum_density_radial(&f);
        let jn = jr.abs() / f.a;
        out.mu.push(mu);
        out.j_r.push(jr);
        out.j_norm.push(jn);
        out.dec_margin.push(mu - jn);
    }
    out
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct DecSummary {
    pub min_margin: f64,
    pub at_r: f64,
    pub max_mu: f64,
    pub holds: bool,
}

/// Check mu >= |J| everywhere, with a rounding allowance scaled to the size
/// of the densities themselves.
pub fn check_dec(data: &SphericalInitialData, rel_tol: f64) -> Result<DecSummary> {
    let c = constraints(data);
    let mut min_margin = f64::INFINITY;
    let mut at_r = c.r[0];
    let mut max_mu = 0.0_f64;
    for i in 0..c.r.len() {
        max_mu = max_mu.max(c.mu[i].abs());
        if c.dec_margin[i] < min_margin {
            min_margin = c.dec_margin[i];
            at_r = c.r[i];
        }
    }
    let allowance = rel_tol * max_mu.max(1.0);
    let holds = min_margin >= -allowance;
    let summary = DecSummary { min_margin, at_r, max_mu, holds };
    if !holds {
        return Err(Error::InvalidInput(format!(
            "dominant energy condition fails: mu - |J| = {min_margin:.3e} at r = {at_r:.6}"
        )));
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{SamplingMode, SphericalInitialData};
    use crate::grid::Grid;
    use crate::profile::{Field, Profile};
    use approx::assert_abs_diff_eq;

    fn flat() -> Profile {
        Profile::riemannian(Field::constant(1.0), Field::analytic2(|r| r, |_| 1.0, |_| 0.0))
    }

    #[test]
    fn flat_space_is_scalar_flat_and_massless() {
        let g = Grid::new(0.5, 10.0, 32, 0.0).unwrap();
        let d = SphericalInitialData::sample("flat", &flat(), &g, SamplingMode::Analytic).unwrap();
        for i in 0..d.grid.len() {
            let f = d.fields_at_node(i);
            assert_abs_diff_eq!(scalar_curvature(&f), 0.0, epsilon = 1e-13);
            assert_abs_diff_eq!(quasilocal_mass(&f), 0.0, epsilon = 1e-13);
            assert_abs_diff_eq!(energy_density(&f), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn round_sphere_patch_has_constant_curvature() {
        // rho = A sin(r/A), a = 1: a metric of constant curvature 6/A^2.
        let a_cap = 2.0_f64;
        let p = Profile::riemannian(
            Field::constant(1.0),
            Field::analytic2(
                move |r| a_cap * (r / a_cap).sin(),
                move |r| (r / a_cap).cos(),
                move |r| -(r / a_cap).sin() / a_cap,
            ),
        );
        let g = Grid::new(0.3, 2.5, 16, 0.0).unwrap();
        let d = SphericalInitialData::sample("cap", &p, &g, SamplingMode::Analytic).unwrap();
        for i in 0..d.grid.len() {
            let f = d.fields_at_node(i);
            assert_abs_diff_eq!(scalar_curvature(&f), 6.0 / (a_cap * a_cap), epsilon = 1e-11);
        }
    }

    #[test]
    fn isotropic_black_hole_slice_is_vacuum_with_exact_mass() {
        let m = 1.3_f64;
        let p = Profile::riemannian(
            Field::analytic2(
                move |r| {
                    let u = 1.0 + m / (2.0 * r);
                    u * u
                },
                move |r| {
                    let u = 1.0 + m / (2.0 * r);
                    -u * m / (r * r)
                },
                move |r| {
                    let u = 1.0 + m / (2.0 * r);
                    (m / (r * r)) * (2.0 * u / r + m / (2.0 * r * r))
                },
            ),
            Field::analytic2(
                move |r| {
                    let u = 1.0 + m / (2.0 * r);
                    r * u * u
                },
                move |r| 1.0 - m * m / (4.0 * r * r),
                move |r| m * m / (2.0 * r * r * r),
            ),
        );
        let g = Grid::new(0.5 * m, 60.0, 64, 6.0).unwrap();
        let d = SphericalInitialData::sample("bh", &p, &g, SamplingMode::Analytic).unwrap();
        for i in 0..d.grid.len() {
            let f = d.fields_at_node(i);
            assert_abs_diff_eq!(scalar_curvature(&f), 0.0, epsilon = 1e-10);
            // Quasi-local mass is exact at every radius for this slice.
            assert_abs_diff_eq!(quasilocal_mass(&f), m, epsilon = 1e-10);
        }
        // Inner boundary is the minimal surface: both expansions vanish.
        let fh = d.fields_at(0.5 * m);
        assert_abs_diff_eq!(expansion(&fh, LightCone::Future), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(expansion(&fh, LightCone::Past), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(expansion_deriv(&fh, LightCone::Future), 1.0 / (m * m), epsilon = 1e-9);
    }

    #[test]
    fn pure_trace_extrinsic_curvature_feeds_only_energy_density() {
        // Flat metric, kr = kt = c: 16 pi mu = (3c)^2 - 3c^2 = 6 c^2, J = 0.
        let c = 0.23_f64;
        let p = Profile {
            a: Field::constant(1.0),
            rho: Field::analytic2(|r| r, |_| 1.0, |_| 0.0),
            kr: Field::constant(c),
            kt: Field::constant(c),
        };
        let g = Grid::new(1.0, 5.0, 16, 0.0).unwrap();
        let d = SphericalInitialData::sample("trace", &p, &g, SamplingMode::Analytic).unwrap();
        let f = d.fields_at(2.0);
        assert_abs_diff_eq!(energy_density(&f), 6.0 * c * c / (16.0 * std::f64::consts::PI), epsilon = 1e-14);
        assert_abs_diff_eq!(momentum_density_radial(&f), 0.0, epsilon = 1e-15);
        assert!(check_dec(&d, 1e-10).unwrap().holds);
    }

    #[test]
    fn anisotropic_k_without_matching_curvature_violates_dec() {
        // Flat metric with kr = 0.3/r, kt = 0: mu vanishes identically
        // (trace^2 and |k|^2 cancel) while J_r does not.
        let p = Profile {
            a: Field::constant(1.0),
            rho: Field::analytic2(|r| r, |_| 1.0, |_| 0.0),
            kr: Field::analytic(|r| 0.3 / r, |r| -0.3 / (r * r)),
            kt: Field::constant(0.0),
        };
        let g = Grid::new(1.0, 5.0, 16, 0.0).unwrap();
        let d = SphericalInitialData::sample("aniso", &p, &g, SamplingMode::Analytic).unwrap();
        assert!(check_dec(&d, 1e-10).is_err());
    }
}
