//! Radial field representations.  A field is either analytic (closures for
//! value and derivatives, exact to rounding) or sampled (node values with
//! finite-difference derivatives and cubic Hermite evaluation off the nodes).
//! The sampled form exists for two reasons: re-ingesting emitted data files,
//! and convergence studies where derivative error must scale with the mesh.

use std::rc::Rc;

use crate::{Error, Result};

type Fn1 = Rc<dyn Fn(f64) -> f64>;

#[derive(Clone)]
pub enum Field {
    Analytic {
        f: Fn1,
        d1: Fn1,
        /// Present only where the pipeline needs curvature of the field.
        d2: Option<Fn1>,
    },
    Sampled(Rc<SampledField>),
}

impl Field {
    pub fn analytic<F, G>(f: F, d1: G) -> Field
    where
        F: Fn(f64) -> f64 + 'static,
        G: Fn(f64) -> f64 + 'static,
    {
        Field::Analytic { f: Rc::new(f), d1: Rc::new(d1), d2: None }
    }

    pub fn analytic2<F, G, H>(f: F, d1: G, d2: H) -> Field
    where
        F: Fn(f64) -> f64 + 'static,
        G: Fn(f64) -> f64 + 'static,
        H: Fn(f64) -> f64 + 'static,
    {
        Field::Analytic { f: Rc::new(f), d1: Rc::new(d1), d2: Some(Rc::new(d2)) }
    }

    pub fn constant(c: f64) -> Field {
        Field::analytic2(move |_| c, |_| 0.0, |_| 0.0)
    }

    pub fn value(&self, r: f64) -> f64 {
        match self {
            Field::Analytic { f, .. } => f(r),
            Field::Sampled(s) => s.eval(r, 0),
        }
    }

    pub fn deriv(&self, r: f64) -> f64 {
        match self {
            Field::Analytic { d1, .. } => d1(r),
            Field::Sampled(s) => s.eval(r, 1),
        }
    }

    pub fn deriv2(&self, r: f64) -> f64 {
        match self {
            Field::Analytic { d2, .. } => match d2 {
                Some(d2) => d2(r),
                None => panic!("second derivative requested from a first-order field"),
            },
            Field::Sampled(s) => s.eval(r, 2),
        }
    }
}

/// Node samples with finite-difference derivatives.  Differences are taken in
/// index space (the mesh is the image of a uniform parameter under a smooth
/// map), then chained through the sampled radius map, which keeps the stated
/// order on stretched meshes.
pub struct SampledField {
    x: Vec<f64>,
    y: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
}

/// Differentiate a uniformly spaced sequence (unit spacing) at the given
/// order of accuracy (2 or 4).
fn diff_uniform(y: &[f64], order: usize) -> Vec<f64> {
    let n = y.len();
    let mut d = vec![0.0; n];
    assert!(n >= 6, "sampled field needs >= 6 nodes");
    match order {
        2 => {
            d[0] = (-3.0 * y[0] + 4.0 * y[1] - y[2]) / 2.0;
            d[n - 1] = (3.0 * y[n - 1] - 4.0 * y[n - 2] + y[n - 3]) / 2.0;
            for i in 1..n - 1 {
                d[i] = (y[i + 1] - y[i - 1]) / 2.0;
            }
        }
        4 => {
            d[0] = (-25.0 * y[0] + 48.0 * y[1] - 36.0 * y[2] + 16.0 * y[3] - 3.0 * y[4]) / 12.0;
            d[1] = (-3.0 * y[0] - 10.0 * y[1] + 18.0 * y[2] - 6.0 * y[3] + y[4]) / 12.0;
            d[n - 2] = (3.0 * y[n - 1] + 10.0 * y[n - 2] - 18.0 * y[n - 3] + 6.0 * y[n - 4]
                - y[n - 5])
                / 12.0;
            d[n - 1] = (25.0 * y[n - 1] - 48.0 * y[n - 2] + 36.0 * y[n - 3] - 16.0 * y[n - 4]
                + 3.0 * y[n - 5])
                / 12.0;
            for i in 2..n - 2 {
                d[i] = (-y[i + 2] + 8.0 * y[i + 1] - 8.0 * y[i - 1] + y[i - 2]) / 12.0;
            }
        }
        _ => panic!("supported difference orders are 2 and 4"),
    }
    d
}

impl SampledField {
    /// Build from monotone nodes and values; `order` is the finite-difference
    /// accuracy (2 or 4) for both derivatives.
    pub fn new(x: &[f64], y: &[f64], order: usize) -> Result<SampledField> {
        Self::check_nodes(x, y.len())?;
        let dx_dt = diff_uniform(x, order);
        let dy_dt = diff_uniform(y, order);
        let d1: Vec<f64> = dy_dt.iter().zip(&dx_dt).map(|(dy, dx)| dy / dx).collect();
        // Second derivative: difference the first derivative again; the
        // leading error of d1 is a smooth field, so the order is preserved.
        let dd1_dt = diff_uniform(&d1, order);
        let d2: Vec<f64> = dd1_dt.iter().zip(&dx_dt).map(|(dd, dx)| dd / dx).collect();
        Ok(SampledField { x: x.to_vec(), y: y.to_vec(), d1, d2 })
    }

    /// Build from externally supplied derivative samples (ingested tables
    /// carry analytic derivatives).  A missing second-derivative column is
    /// reconstructed by differencing the supplied first derivative.
    pub fn with_derivatives(
        x: &[f64],
        y: &[f64],
        d1: &[f64],
        d2: Option<&[f64]>,
    ) -> Result<SampledField> {
        Self::check_nodes(x, y.len())?;
        if d1.len() != x.len() {
            return Err(Error::InvalidInput("derivative column length mismatch".into()));
        }
        let d2 = match d2 {
            Some(v) => {
                if v.len() != x.len() {
                    return Err(Error::InvalidInput("second-derivative column length mismatch".into()));
                }
                v.to_vec()
            }
            None => {
                let dx_dt = diff_uniform(x, 4);
                let dd1_dt = diff_uniform(d1, 4);
                dd1_dt.iter().zip(&dx_dt).map(|(dd, dx)| dd / dx).collect()
            }
        };
        Ok(SampledField { x: x.to_vec(), y: y.to_vec(), d1: d1.to_vec(), d2 })
    }

    fn check_nodes(x: &[f64], ny: usize) -> Result<()> {
        if x.len() != ny || x.len() < 6 {
            return Err(Error::InvalidInput("sampled field needs >= 6 matched nodes".into()));
        }
        if x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("sampled field nodes must be strictly increasing".into()));
        }
        Ok(())
    }

    pub fn nodes(&self) -> &[f64] {
        &self.x
    }

    fn interval(&self, r: f64) -> usize {
        let n = self.x.len();
        let k = self.x.partition_point(|&v| v <= r);
        k.clamp(1, n - 1) - 1
    }

    /// Cubic Hermite evaluation of the field (`which` = 0), its slope (1), or
    /// the slope of the Hermite interpolant of the slope (2).
    fn eval(&self, r: f64, which: usize) -> f64 {
        let i = self.interval(r);
        let (x0, x1) = (self.x[i], self.x[i + 1]);
        let h = x1 - x0;
        let t = (r - x0) / h;
        // Node hits reproduce the stored samples bitwise; the expanded
        // polynomial below would round them through h m / h.
        if t == 0.0 || t == 1.0 {
            let j = if t == 0.0 { i } else { i + 1 };
            return match which {
                0 => self.y[j],
                1 => self.d1[j],
                _ => self.d2[j],
            };
        }
        let hermite = |y0: f64, y1: f64, m0: f64, m1: f64, t: f64| -> f64 {
            let t2 = t * t;
            let t3 = t2 * t;
            (2.0 * t3 - 3.0 * t2 + 1.0) * y0
                + (t3 - 2.0 * t2 + t) * h * m0
                + (-2.0 * t3 + 3.0 * t2) * y1
                + (t3 - t2) * h * m1
        };
        match which {
            0 => hermite(self.y[i], self.y[i + 1], self.d1[i], self.d1[i + 1], t),
            1 => hermite(self.d1[i], self.d1[i + 1], self.d2[i], self.d2[i + 1], t),
            2 => {
                // Slope of the d1 interpolant: exact derivative of the cubic.
                let (y0, y1, m0, m1) = (self.d1[i], self.d1[i + 1], self.d2[i], self.d2[i + 1]);
                let t2 = t * t;
                ((6.0 * t2 - 6.0 * t) * y0
                    + (3.0 * t2 - 4.0 * t + 1.0) * h * m0
                    + (-6.0 * t2 + 6.0 * t) * y1
                    + (3.0 * t2 - 2.0 * t) * h * m1)
                    / h
            }
            _ => unreachable!(),
        }
    }

    pub fn node_d1(&self) -> &[f64] {
        &self.d1
    }

    pub fn node_d2(&self) -> &[f64] {
        &self.d2
    }
}

/// The four fields defining spherical initial data in the gauge
/// g = a^2 dr^2 + rho^2 dOmega^2, with extrinsic curvature diagonal in the
/// orthonormal frame: radial eigenvalue kr, tangential eigenvalue kt (doubly
/// degenerate).
#[derive(Clone)]
pub struct Profile {
    pub a: Field,
    pub rho: Field,
    pub kr: Field,
    pub kt: Field,
}

impl Profile {
    /// Time-symmetric data: k = 0.
    pub fn riemannian(a: Field, rho: Field) -> Profile {
        Profile { a, rho, kr: Field::constant(0.0), kt: Field::constant(0.0) }
    }

    /// Rebuild a profile from node samples of the four fields, with
    /// finite-difference derivatives of the given accuracy order.
    pub fn from_samples(
        r: &[f64],
        a: &[f64],
        rho: &[f64],
        kr: &[f64],
        kt: &[f64],
        order: usize,
    ) -> Result<Profile> {
        Ok(Profile {
            a: Field::Sampled(Rc::new(SampledField::new(r, a, order)?)),
            rho: Field::Sampled(Rc::new(SampledField::new(r, rho, order)?)),
            kr: Field::Sampled(Rc::new(SampledField::new(r, kr, order)?)),
            kt: Field::Sampled(Rc::new(SampledField::new(r, kt, order)?)),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use crate::grid::Grid;

    #[test]
    fn sampled_derivatives_track_analytic_on_stretched_mesh() {
        let g = Grid::new(0.5, 20.0, 512, 6.0).unwrap();
        let y: Vec<f64> = g.nodes().iter().map(|&r| (r / 3.0).sin() + r * r / 40.0).collect();
        let s = SampledField::new(g.nodes(), &y, 4).unwrap();
        for &r in &[0.7f64, 1.3, 2.9, 7.7, 15.0] {
            let d1 = (r / 3.0).cos() / 3.0 + r / 20.0;
            let d2 = -(r / 3.0).sin() / 9.0 + 1.0 / 20.0;
            assert_abs_diff_eq!(s.eval(r, 0), (r / 3.0).sin() + r * r / 40.0, epsilon = 1e-8);
            assert_abs_diff_eq!(s.eval(r, 1), d1, epsilon = 1e-6);
            assert_abs_diff_eq!(s.eval(r, 2), d2, epsilon = 1e-4);
        }
    }

    #[test]
    fn second_order_derivatives_halve_error_quadratically() {
        let err_at = |n: usize| -> f64 {
            let g = Grid::new(1.0, 10.0, n, 4.0).unwrap();
            let y: Vec<f64> = g.nodes().iter().map(|&r| r.ln()).collect();
            let s = SampledField::new(g.nodes(), &y, 2).unwrap();
            let mut e = 0.0_f64;
            for (i, &r) in g.nodes().iter().enumerate() {
                e = e.max((s.node_d1()[i] - 1.0 / r).abs());
            }
            e
        };
        let (e1, e2) = (err_at(64), err_at(128));
        let order = (e1 / e2).log2();
        assert!(order > 1.7 && order < 2.3, "observed order {order}");
    }

    #[test]
    fn hermite_interpolation_is_exact_on_cubics() {
        let xs: Vec<f64> = (0..=16).map(|i| i as f64 * 0.25).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| x * x * x - 2.0 * x).collect();
        let s = SampledField::new(&xs, &ys, 4).unwrap();
        for &x in &[0.1, 1.11, 2.77, 3.9] {
            assert_abs_diff_eq!(s.eval(x, 0), x * x * x - 2.0 * x, epsilon = 1e-10);
            assert_abs_diff_eq!(s.eval(x, 1), 3.0 * x * x - 2.0, epsilon = 1e-9);
        }
    }
}
