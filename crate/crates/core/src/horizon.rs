//! Locating marginal surfaces: the outermost zero of one of the null
//! expansions of the centered spheres.  A node scan from the outer boundary
//! inward brackets the outermost sign change; a predicate bisection on the
//! analytic/interpolated profile then pins the root to near rounding level.
//! When the expansion vanishes on a whole interval the bisection converges to
//! its supremum, which is the representative we want: the outermost sphere
//! still touching the marginal set.

use serde::Serialize;

use crate::curvature::{expansion, expansion_deriv, LightCone};
use crate::data::SphericalInitialData;
use crate::{tol, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HorizonKind {
    /// Zero of the outgoing future expansion (marginally outer trapped).
    Future,
    /// Zero of the outgoing past expansion.
    Past,
}

impl HorizonKind {
    pub fn cone(self) -> LightCone {
        match self {
            HorizonKind::Future => LightCone::Future,
            HorizonKind::Past => LightCone::Past,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HorizonRecord {
    /// Coordinate radius of the marginal surface.
    pub r_h: f64,
    /// Areal radius there.
    pub rho: f64,
    pub area: f64,
    pub kind: HorizonKind,
    /// Verified: the requested expansion is positive at every node outside.
    pub outermost: bool,
    pub theta_plus: f64,
    pub theta_minus: f64,
    /// Radial slope of the vanishing expansion at the root; positive for a
    /// stably outermost horizon.  Drives the startup of the blow-up solve.
    pub slope: f64,
}

/// Both null expansions at every node.
pub fn expansions(data: &SphericalInitialData) -> (Vec<f64>, Vec<f64>) {
    let n = data.grid.len();
    let mut tp = Vec::with_capacity(n);
    let mut tm = Vec::with_capacity(n);
    for i in 0..n {
        let f = data.fields_at_node(i);
        tp.push(expansion(&f, LightCone::Future));
        tm.push(expansion(&f, LightCone::Past));
    }
    (tp, tm)
}

/// Outermost zero of the expansion of the requested kind.  Requires the outer
/// boundary to be untrapped for that kind (the expansion positive at r_max);
/// errors with [`Error::NoHorizon`] when no zero exists in the domain.
pub fn find_outermost_horizon(
    data: &SphericalInitialData,
    kind: HorizonKind,
) -> Result<HorizonRecord> {
    let r = data.grid.nodes();
    let cone = kind.cone();
    let theta_of = |x: f64| expansion(&data.fields_at(x), cone);
    let theta: Vec<f64> = (0..r.len()).map(|i| expansion(&data.fields_at_node(i), cone)).collect();
    let n = r.len();
    if !(theta[n - 1] > 0.0) {
        return Err(Error::InvalidInput(format!(
            "outer boundary is trapped for the requested family: theta({}) = {:.3e} <= 0",
            r[n - 1],
            theta[n - 1]
        )));
    }
    // Outermost node at or below zero.
    let Some(i) = (0..n - 1).rev().find(|&i| theta[i] <= 0.0) else {
        return Err(Error::NoHorizon(format!(
            "requested expansion is positive on the whole domain [{}, {}]",
            r[0],
            r[n - 1]
        )));
    };
    // Predicate bisection: keep theta <= 0 on the left end, theta > 0 on the
    // right.  Converges to the supremum of the zero set inside the bracket,
    // which settles degenerate (interval) roots.
    let xtol = tol::ROOT_REL * data.grid.rmax;
    let (mut lo, mut hi) = (r[i], r[i + 1]);
    while hi - lo > xtol {
        let mid = 0.5 * (lo + hi);
        if theta_of(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let r_h = 0.5 * (lo + hi);
    let fh = data.fields_at(r_h);
    let theta_plus = expansion(&fh, LightCone::Future);
    let theta_minus = expansion(&fh, LightCone::Past);
    let slope = expansion_deriv(&fh, cone);
    let outermost = r
        .iter()
        .zip(&theta)
        .all(|(&ri, &ti)| ri <= r_h + xtol || ti > 0.0);
    Ok(HorizonRecord {
        r_h,
        rho: fh.rho,
        area: 4.0 * std::f64::consts::PI * fh.rho * fh.rho,
        kind,
        outermost,
        theta_plus,
        theta_minus,
        slope,
    })
}
