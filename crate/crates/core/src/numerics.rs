//! Shared numerical kernels: adaptive Runge-Kutta integration, quadrature on
//! nonuniform nodes, tail extrapolation in powers of 1/r, order fits, root
//! bracketing, and a pivoting tridiagonal solver.  Everything here is plain
//! f64 and sequential, so results are bit-reproducible across runs.

use crate::{Error, Result};

// ***** quadrature *****

/// Trapezoid rule on arbitrary monotone nodes.
pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let mut s = 0.0;
    for i in 1..x.len() {
        s += 0.5 * (y[i] + y[i - 1]) * (x[i] - x[i - 1]);
    }
    s
}

/// Running integral with the same rule; out[0] = 0.
pub fn cumulative_trapezoid(x: &[f64], y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for i in 1..x.len() {
        out[i] = out[i - 1] + 0.5 * (y[i] + y[i - 1]) * (x[i] - x[i - 1]);
    }
    out
}

// ***** small dense solves *****

/// Solve an n x n system in place by Gaussian elimination with partial
/// pivoting.  Used only for tiny fitting systems (n <= 4).
pub(crate) fn solve_dense(a: &mut [Vec<f64>], b: &mut [f64]) -> Result<()> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[piv][col].abs() < 1e-300 {
            return Err(Error::SolveFailure("singular fitting matrix".into()));
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let m = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= m * a[col][k];
            }
            b[row] -= m * b[col];
        }
    }
    for col in (0..n).rev() {
        b[col] /= a[col][col];
        for row in 0..col {
            b[row] -= a[row][col] * b[col];
        }
    }
    Ok(())
}

/// Least-squares fit y ~ c0 + c1 z + ... + c_deg z^deg with z = 1/x, returning
/// the limit coefficient c0 and the rms misfit.  This is the workhorse behind
/// every "limit as r -> infinity" quantity: sample the integrand or estimator
/// over the outer decade of the grid and extrapolate the truncation away.
pub fn extrapolate_inverse_poly(x: &[f64], y: &[f64], deg: usize) -> Result<(f64, f64)> {
    let n = x.len();
    if n < deg + 1 {
        return Err(Error::InvalidInput(format!(
            "tail extrapolation needs at least {} samples, got {n}",
            deg + 1
        )));
    }
    let m = deg + 1;
    // Normal equations in the scaled variable z/z_max to keep conditioning sane.
    let zmax = x.iter().map(|&v| 1.0 / v).fold(0.0_f64, f64::max);
    let mut ata = vec![vec![0.0; m]; m];
    let mut atb = vec![0.0; m];
    for (&xi, &yi) in x.iter().zip(y) {
        let z = (1.0 / xi) / zmax;
        let mut pow = vec![1.0; m];
        for p in 1..m {
            pow[p] = pow[p - 1] * z;
        }
        for i in 0..m {
            for j in 0..m {
                ata[i][j] += pow[i] * pow[j];
            }
            atb[i] += pow[i] * yi;
        }
    }
    solve_dense(&mut ata, &mut atb)?;
    let mut rss = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        let z = (1.0 / xi) / zmax;
        let mut fit = 0.0;
        let mut pow = 1.0;
        for c in atb.iter() {
            fit += c * pow;
            pow *= z;
        }
        rss += (fit - yi) * (fit - yi);
    }
    Ok((atb[0], (rss / n as f64).sqrt()))
}

/// Straight-line least squares through (ln x, ln y); returns the slope.
/// Points with y <= 0 are rejected.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() < 2 {
        return Err(Error::InvalidInput("slope fit needs >= 2 points".into()));
    }
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let n = x.len() as f64;
    for (&xi, &yi) in x.iter().zip(y) {
        if yi <= 0.0 || xi <= 0.0 {
            return Err(Error::InvalidInput("loglog slope needs positive data".into()));
        }
        let lx = xi.ln();
        let ly = yi.ln();
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return Err(Error::DegenerateDenominator("loglog slope".into()));
    }
    Ok((n * sxy - sx * sy) / denom)
}

/// Observed convergence order from values at resolutions N, 2N, 4N:
/// p = log2 |(f0 - f1)/(f1 - f2)|.  Constant bias common to all three
/// resolutions cancels.  Returns None when the differences sit at rounding
/// level, i.e. the quantity is exact on these grids and no order is measurable.
pub fn convergence_order(f0: f64, f1: f64, f2: f64, scale: f64) -> Option<f64> {
    let d01 = f0 - f1;
    let d12 = f1 - f2;
    let floor = 1e-12 * scale.abs().max(1e-30);
    if d01.abs() < floor || d12.abs() < floor {
        return None;
    }
    Some((d01 / d12).abs().log2())
}

// ***** root finding *****

/// Bisection on a bracketing interval; f(lo) and f(hi) must have opposite
/// signs (or one endpoint is already within tol of zero).
pub fn bisect<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64, xtol: f64) -> Result<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo * fhi > 0.0 {
        return Err(Error::InvalidInput(format!(
            "bisection bracket [{lo}, {hi}] does not straddle a sign change"
        )));
    }
    while hi - lo > xtol {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break; // spacing exhausted
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if flo * fm < 0.0 {
            hi = mid;
        } else {
            lo = mid;
            flo = fm;
        }
    }
    Ok(0.5 * (lo + hi))
}

// ***** tridiagonal solve *****

/// Solve a tridiagonal system by banded LU with partial pivoting (the pivoting
/// produces one extra superdiagonal of fill-in).  sub[i] couples row i to
/// i-1 (sub[0] unused), sup[i] couples row i to i+1 (sup[n-1] unused).
pub fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    assert!(sub.len() == n && sup.len() == n && rhs.len() == n);
    if n == 0 {
        return Ok(vec![]);
    }
    let mut d = diag.to_vec(); // main
    let mut e = vec![0.0; n];  // first super
    let mut f2 = vec![0.0; n]; // fill-in second super
    let mut b = rhs.to_vec();
    for i in 0..n - 1 {
        e[i] = sup[i];
    }
    for i in 0..n - 1 {
        let c = sub[i + 1];
        if c.abs() > d[i].abs() {
            // Swap row i with row i+1 before eliminating.
            let (ri0, ri1, ri2) = (d[i], e[i], f2[i]);
            d[i] = c;
            e[i] = d[i + 1];
            f2[i] = if i + 2 < n { e[i + 1] } else { 0.0 };
            d[i + 1] = ri1;
            if i + 2 < n {
                e[i + 1] = ri2;
            }
            // Row i+1 now holds the old row i; its leading entry is ri0.
            let m = ri0 / d[i];
            d[i + 1] -= m * e[i];
            if i + 2 < n {
                e[i + 1] -= m * f2[i];
            }
            let bi = b[i];
            b[i] = b[i + 1];
            b[i + 1] = bi - m * b[i];
        } else {
            if d[i].abs() < 1e-300 {
                return Err(Error::SolveFailure(format!("zero pivot at row {i}")));
            }
            let m = c / d[i];
            d[i + 1] -= m * e[i];
            if i + 2 < n {
                e[i + 1] -= m * f2[i];
            }
            b[i + 1] -= m * b[i];
        }
    }
    if d[n - 1].abs() < 1e-300 {
        return Err(Error::SolveFailure("zero pivot in last row".into()));
    }
    let mut x = vec![0.0; n];
    x[n - 1] = b[n - 1] / d[n - 1];
    if n >= 2 {
        x[n - 2] = (b[n - 2] - e[n - 2] * x[n - 1]) / d[n - 2];
    }
    for i in (0..n.saturating_sub(2)).rev() {
        x[i] = (b[i] - e[i] * x[i + 1] - f2[i] * x[i + 2]) / d[i];
    }
    Ok(x)
}

// ***** adaptive Runge-Kutta *****

/// Dormand-Prince 5(4) step on a small state vector.  Returns (y5, err_est).
fn dopri_step<F>(f: &mut F, x: f64, y: &[f64], h: f64) -> (Vec<f64>, f64)
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    const A21: f64 = 1.0 / 5.0;
    const A31: f64 = 3.0 / 40.0;
    const A32: f64 = 9.0 / 40.0;
    const A41: f64 = 44.0 / 45.0;
    const A42: f64 = -56.0 / 15.0;
    const A43: f64 = 32.0 / 9.0;
    const A51: f64 = 19372.0 / 6561.0;
    const A52: f64 = -25360.0 / 2187.0;
    const A53: f64 = 64448.0 / 6561.0;
    const A54: f64 = -212.0 / 729.0;
    const A61: f64 = 9017.0 / 3168.0;
    const A62: f64 = -355.0 / 33.0;
    const A63: f64 = 46732.0 / 5247.0;
    const A64: f64 = 49.0 / 176.0;
    const A65: f64 = -5103.0 / 18656.0;
    const B1: f64 = 35.0 / 384.0;
    const B3: f64 = 500.0 / 1113.0;
    const B4: f64 = 125.0 / 192.0;
    const B5: f64 = -2187.0 / 6784.0;
    const B6: f64 = 11.0 / 84.0;
    // Embedded 4th-order weights.
    const E1: f64 = 5179.0 / 57600.0;
    const E3: f64 = 7571.0 / 16695.0;
    const E4: f64 = 393.0 / 640.0;
    const E5: f64 = -92097.0 / 339200.0;
    const E6: f64 = 187.0 / 2100.0;
    const E7: f64 = 1.0 / 40.0;

    let n = y.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut tmp = vec![0.0; n];

    f(x, y, &mut k1);
    for i in 0..n {
        tmp[i] = y[i] + h * A21 * k1[i];
    }
    f(x + h / 5.0, &tmp, &mut k2);
    for i in 0..n {
        tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
    }
    f(x + 3.0 * h / 10.0, &tmp, &mut k3);
    for i in 0..n {
        tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
    }
    f(x + 4.0 * h / 5.0, &tmp, &mut k4);
    for i in 0..n {
        tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
    }
    f(x + 8.0 * h / 9.0, &tmp, &mut k5);
    for i in 0..n {
        tmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
    }
    f(x + h, &tmp, &mut k6);
    let mut y5 = vec![0.0; n];
    for i in 0..n {
        y5[i] = y[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]);
    }
    f(x + h, &y5, &mut k7);
    let mut err = 0.0_f64;
    for i in 0..n {
        let y4 = y[i] + h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        err = err.max((y5[i] - y4).abs());
    }
    (y5, err)
}

/// Integrate y' = f(x, y) from `x0` to `x1`, landing exactly on every target
/// in `stops` (must be monotone, strictly inside (x0, x1]); `record` is called
/// at x0, at every accepted internal step, and at every stop.  Tolerances are
/// per-component absolute + relative.
pub fn integrate_adaptive<F, R>(
    mut f: F,
    x0: f64,
    stops: &[f64],
    y0: &[f64],
    rtol: f64,
    atol: f64,
    mut record: R,
) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    R: FnMut(f64, &[f64]),
{
    let mut x = x0;
    let mut y = y0.to_vec();
    record(x, &y);
    let mut at_stops = Vec::with_capacity(stops.len());
    let dir = if stops.last().copied().unwrap_or(x0) >= x0 { 1.0 } else { -1.0 };
    let total = (stops.last().copied().unwrap_or(x0) - x0).abs().max(1e-30);
    let mut h = dir * (total * 1e-4).max(1e-14);
    for &target in stops {
        let mut guard = 0usize;
        while (target - x) * dir > 0.0 {
            guard += 1;
            if guard > 2_000_000 {
                return Err(Error::SolveFailure("adaptive integrator exceeded step budget".into()));
            }
            if (x + h - target) * dir > 0.0 {
                h = target - x;
            }
            let (ynew, err) = dopri_step(&mut f, x, &y, h);
            let mut tolv = atol;
            for (yi, yn) in y.iter().zip(&ynew) {
                tolv = tolv.max(rtol * yi.abs().max(yn.abs()));
            }
            if !err.is_finite() {
                // The trial step left the domain of the right-hand side
                // (square root of a negative, overflow); retreat hard and let
                // the underflow guard terminate if the singularity is real.
                h *= 0.1;
                if h.abs() < 1e-16 * x.abs().max(1.0) {
                    return Err(Error::SolveFailure(format!(
                        "step size underflow against a non-finite response at x = {x}"
                    )));
                }
                continue;
            }
            if err <= tolv {
                x += h;
                y = ynew;
                record(x, &y);
                let grow = if err > 0.0 { 0.9 * (tolv / err).powf(0.2) } else { 5.0 };
                h *= grow.clamp(0.2, 5.0);
            } else {
                h *= (0.9 * (tolv / err).powf(0.2)).clamp(0.1, 0.9);
                if h.abs() < 1e-16 * x.abs().max(1.0) {
                    return Err(Error::SolveFailure(format!(
                        "step size underflow at x = {x}"
                    )));
                }
            }
        }
        x = target; // guard against accumulated rounding
        at_stops.push(y.clone());
    }
    Ok(at_stops)
}
