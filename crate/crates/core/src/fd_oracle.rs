//! Independent three-dimensional finite-difference oracles.
//!
//! The radial formulas for curvature, constraint densities, and the graph
//! equation were derived by hand; sign conventions are the dominant risk.  The
//! oracles here rebuild the full 3D metric and extrinsic curvature in a
//! Cartesian chart from *value samples only* and differentiate numerically,
//! sharing no derivation with the radial kernels.

use crate::profile::Profile;

pub type V3 = [f64; 3];
pub type M3 = [[f64; 3]; 3];

fn dot(u: &V3, v: &V3) -> f64 {
    u[0] * v[0] + u[1] * v[1] + u[2] * v[2]
}

fn inv3(m: &M3) -> M3 {
    let c00 = m[1][1] * m[2][2] - m[1][2] * m[2][1];
    let c01 = m[1][2] * m[2][0] - m[1][0] * m[2][2];
    let c02 = m[1][0] * m[2][1] - m[1][1] * m[2][0];
    let det = m[0][0] * c00 + m[0][1] * c01 + m[0][2] * c02;
    let c10 = m[0][2] * m[2][1] - m[0][1] * m[2][2];
    let c11 = m[0][0] * m[2][2] - m[0][2] * m[2][0];
    let c12 = m[0][1] * m[2][0] - m[0][0] * m[2][1];
    let c20 = m[0][1] * m[1][2] - m[0][2] * m[1][1];
    let c21 = m[0][2] * m[1][0] - m[0][0] * m[1][2];
    let c22 = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    [
        [c00 / det, c10 / det, c20 / det],
        [c01 / det, c11 / det, c21 / det],
        [c02 / det, c12 / det, c22 / det],
    ]
}

/// Central difference of a scalar-valued map along Cartesian axis `dir`.
fn diff<F: Fn(V3) -> f64>(f: &F, x: V3, dir: usize, h: f64, order: usize) -> f64 {
    let shift = |s: f64| {
        let mut y = x;
        y[dir] += s;
        f(y)
    };
    match order {
        2 => (shift(h) - shift(-h)) / (2.0 * h),
        4 => (-shift(2.0 * h) + 8.0 * shift(h) - 8.0 * shift(-h) + shift(-2.0 * h)) / (12.0 * h),
        _ => panic!("supported stencil orders are 2 and 4"),
    }
}

pub struct Chart<'a> {
    pub profile: &'a Profile,
}

impl<'a> Chart<'a> {
    pub fn new(profile: &'a Profile) -> Chart<'a> {
        Chart { profile }
    }

    /// g_ij(x) = a^2 n_i n_j + (rho/r)^2 (delta_ij - n_i n_j).
    pub fn metric(&self, x: V3) -> M3 {
        let r = dot(&x, &x).sqrt();
        let n = [x[0] / r, x[1] / r, x[2] / r];
        let a = self.profile.a.value(r);
        let rho = self.profile.rho.value(r);
        let rad = a * a;
        let tan = rho * rho / (r * r);
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let nn = n[i] * n[j];
                let dd = if i == j { 1.0 } else { 0.0 };
                out[i][j] = rad * nn + tan * (dd - nn);
            }
        }
        out
    }

    /// k_ij(x) with radial eigenvalue kr and tangential kt (lowered with g).
    pub fn extrinsic(&self, x: V3) -> M3 {
        let r = dot(&x, &x).sqrt();
        let n = [x[0] / r, x[1] / r, x[2] / r];
        let a = self.profile.a.value(r);
        let rho = self.profile.rho.value(r);
        let kr = self.profile.kr.value(r);
        let kt = self.profile.kt.value(r);
        let rad = kr * a * a;
        let tan = kt * rho * rho / (r * r);
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let nn = n[i] * n[j];
                let dd = if i == j { 1.0 } else { 0.0 };
                out[i][j] = rad * nn + tan * (dd - nn);
            }
        }
        out
    }

    /// Christoffel symbols Gamma^k_ij from numerically differentiated metric.
    pub fn christoffel(&self, x: V3, h: f64, order: usize) -> [M3; 3] {
        let g_comp = |y: V3, i: usize, j: usize| self.metric(y)[i][j];
        let mut dg = [[[0.0; 3]; 3]; 3]; // dg[l][i][j] = d_l g_ij
        for l in 0..3 {
            for i in 0..3 {
                for j in i..3 {
                    let v = diff(&|y| g_comp(y, i, j), x, l, h, order);
                    dg[l][i][j] = v;
                    dg[l][j][i] = v;
                }
            }
        }
        let ginv = inv3(&self.metric(x));
        let mut gam = [[[0.0; 3]; 3]; 3];
        for k in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    let mut s = 0.0;
                    for l in 0..3 {
                        s += ginv[k][l] * (dg[i][l][j] + dg[j][l][i] - dg[l][i][j]);
                    }
                    gam[k][i][j] = 0.5 * s;
                }
            }
        }
        gam
    }

    /// Scalar curvature by differencing the Christoffel symbols.
    pub fn scalar_curvature(&self, x: V3, h: f64, order: usize) -> f64 {
        let gam = self.christoffel(x, h, order);
        let mut dgam = [[[[0.0; 3]; 3]; 3]; 3]; // dgam[l][k][i][j] = d_l Gamma^k_ij
        for l in 0..3 {
            for k in 0..3 {
                for i in 0..3 {
                    for j in 0..3 {
                        dgam[l][k][i][j] =
                            diff(&|y| self.christoffel(y, h, order)[k][i][j], x, l, h, order);
                    }
                }
            }
        }
        let ginv = inv3(&self.metric(x));
        // Ricci_ij = d_k Gamma^k_ij - d_i Gamma^k_kj + Gamma^k_kl Gamma^l_ij
        //            - Gamma^k_il Gamma^l_kj
        let mut ricci = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += dgam[k][k][i][j] - dgam[i][k][k][j];
                    for l in 0..3 {
                        s += gam[k][k][l] * gam[l][i][j] - gam[k][i][l] * gam[l][k][j];
                    }
                }
                ricci[i][j] = s;
            }
        }
        let mut r = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                r += ginv[i][j] * ricci[i][j];
            }
        }
        r
    }

    /// Radial covariant component of div(k - (tr k) g), i.e. 8 pi J_r.
    pub fn momentum_div_radial(&self, x: V3, h: f64, order: usize) -> f64 {
        let t_comp = |y: V3, i: usize, j: usize| {
            let g = self.metric(y);
            let k = self.extrinsic(y);
            let ginv = inv3(&g);
            let mut tr = 0.0;
            for p in 0..3 {
                for q in 0..3 {
                    tr += ginv[p][q] * k[p][q];
                }
            }
            k[i][j] - tr * g[i][j]
        };
        let gam = self.christoffel(x, h, order);
        let g = self.metric(x);
        let ginv = inv3(&g);
        let t0 = {
            let mut t = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    t[i][j] = t_comp(x, i, j);
                }
            }
            t
        };
        let mut dt = [[[0.0; 3]; 3]; 3]; // dt[l][i][j] = d_l T_ij
        for l in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    dt[l][i][j] = diff(&|y| t_comp(y, i, j), x, l, h, order);
                }
            }
        }
        // (div T)_i = g^{jl} ( d_l T_ij - Gamma^m_li T_mj - Gamma^m_lj T_im )
        let mut divt = [0.0; 3];
        for i in 0..3 {
            let mut s = 0.0;
            for j in 0..3 {
                for l in 0..3 {
                    let mut cov = dt[l][i][j];
                    for m in 0..3 {
                        cov -= gam[m][l][i] * t0[m][j] + gam[m][l][j] * t0[i][m];
                    }
                    s += ginv[j][l] * cov;
                }
            }
            divt[i] = s;
        }
        let r = dot(&x, &x).sqrt();
        let n = [x[0] / r, x[1] / r, x[2] / r];
        dot(&divt, &n)
    }

    /// Residual of the graph equation for a radial height function:
    /// (g^ij - f^i f^j / W^2)(Hess_ij f / W - k_ij), everything from values
    /// plus 4th-order finite differences.
    pub fn graph_equation_residual<F: Fn(f64) -> f64>(&self, height: &F, x: V3, h: f64) -> f64 {
        let order = 4;
        let f = |y: V3| height(dot(&y, &y).sqrt());
        let mut df = [0.0; 3];
        for i in 0..3 {
            df[i] = diff(&f, x, i, h, order);
        }
        let mut ddf = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                ddf[i][j] = diff(&|y| diff(&f, y, j, h, order), x, i, h, order);
            }
        }
        let gam = self.christoffel(x, h, order);
        let mut hess = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let mut s = ddf[i][j];
                for k in 0..3 {
                    s -= gam[k][i][j] * df[k];
                }
                hess[i][j] = s;
            }
        }
        let g = self.metric(x);
        let ginv = inv3(&g);
        let k = self.extrinsic(x);
        let mut fup = [0.0; 3];
        for i in 0..3 {
            for j in 0..3 {
                fup[i] += ginv[i][j] * df[j];
            }
        }
        let grad2 = dot(&fup, &df);
        let w2 = 1.0 + grad2;
        let w = w2.sqrt();
        let mut res = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                res += (ginv[i][j] - fup[i] * fup[j] / w2) * (hess[i][j] / w - k[i][j]);
            }
        }
        res
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvature;
    use crate::data::{SamplingMode, SphericalInitialData};
    use crate::grid::Grid;
    use crate::profile::Field;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Random direction on the sphere from a seeded generator.
    fn random_point(rng: &mut ChaCha8Rng, r: f64) -> V3 {
        loop {
            let v = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            let n = dot(&v, &v).sqrt();
            if n > 0.3 && n < 1.0 {
                return [v[0] * r / n, v[1] * r / n, v[2] * r / n];
            }
        }
    }

    fn smooth_test_profile() -> Profile {
        // Generic smooth fields with curvature and nontrivial k everywhere.
        Profile {
            a: Field::analytic2(
                |r| 1.0 + 0.8 / (1.0 + r * r),
                |r| -1.6 * r / ((1.0 + r * r) * (1.0 + r * r)),
                |r| (-1.6 * (1.0 + r * r) + 6.4 * r * r) / (1.0 + r * r).powi(3),
            ),
            rho: Field::analytic2(
                |r| r * (1.0 + 0.3 / (1.0 + r)),
                |r| 1.0 + 0.3 / ((1.0 + r) * (1.0 + r)),
                |r| -0.6 / (1.0 + r).powi(3),
            ),
            kr: Field::analytic(
                |r| 0.2 / (1.0 + 0.5 * r * r),
                |r| -0.2 * r / ((1.0 + 0.5 * r * r) * (1.0 + 0.5 * r * r)),
            ),
            kt: Field::analytic(
                |r| -0.15 / ((1.0 + 0.4 * r * r) * (1.0 + 0.4 * r * r)),
                |r| 0.24 * r / (1.0 + 0.4 * r * r).powi(3),
            ),
        }
    }

    #[test]
    fn radial_scalar_curvature_matches_3d_oracle_and_improves_as_h_squared() {
        let p = smooth_test_profile();
        let grid = Grid::new(0.8, 12.0, 64, 2.0).unwrap();
        let data = SphericalInitialData::sample("smooth", &p, &grid, SamplingMode::Analytic).unwrap();
        let chart = Chart::new(&p);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut worst_h = 0.0_f64;
        let mut worst_h2 = 0.0_f64;
        for _ in 0..20 {
            let r = rng.gen_range(1.2..6.0);
            let x = random_point(&mut rng, r);
            let exact = curvature::scalar_curvature(&data.fields_at(r));
            let scale = exact.abs().max(0.1);
            let e1 = (chart.scalar_curvature(x, 2e-3, 2) - exact).abs() / scale;
            let e2 = (chart.scalar_curvature(x, 1e-3, 2) - exact).abs() / scale;
            worst_h = worst_h.max(e1);
            worst_h2 = worst_h2.max(e2);
        }
        assert!(worst_h < 1e-4, "worst relative mismatch {worst_h:.3e}");
        // Halving the stencil step should cut the error by about 4.
        assert!(
            worst_h2 < worst_h / 2.5,
            "no quadratic improvement: {worst_h:.3e} -> {worst_h2:.3e}"
        );
    }

    #[test]
    fn radial_momentum_density_matches_3d_divergence_oracle() {
        let p = smooth_test_profile();
        let grid = Grid::new(0.8, 12.0, 64, 2.0).unwrap();
        let data = SphericalInitialData::sample("smooth", &p, &grid, SamplingMode::Analytic).unwrap();
        let chart = Chart::new(&p);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst = 0.0_f64;
        for _ in 0..20 {
            let r = rng.gen_range(1.2..6.0);
            let x = random_point(&mut rng, r);
            let jr = curvature::momentum_density_radial(&data.fields_at(r));
            let oracle = chart.momentum_div_radial(x, 4e-3, 2) / (2.0 * curvature::PI4);
            let scale = jr.abs().max(1e-3);
            worst = worst.max((oracle - jr).abs() / scale);
        }
        assert!(worst < 1e-4, "worst relative mismatch {worst:.3e}");
    }

    #[test]
    fn energy_density_matches_hamiltonian_assembled_from_oracle_curvature() {
        let p = smooth_test_profile();
        let grid = Grid::new(0.8, 12.0, 64, 2.0).unwrap();
        let data = SphericalInitialData::sample("smooth", &p, &grid, SamplingMode::Analytic).unwrap();
        let chart = Chart::new(&p);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..10 {
            let r = rng.gen_range(1.2..6.0);
            let x = random_point(&mut rng, r);
            let f = data.fields_at(r);
            let mu = curvature::energy_density(&f);
            let r3d = chart.scalar_curvature(x, 3e-3, 2);
            let tr = curvature::trace_k(&f);
            let mu_oracle = (r3d + tr * tr - curvature::k_norm_sq(&f)) / (4.0 * curvature::PI4);
            let scale = mu.abs().max(1e-3);
            assert!(
                (mu - mu_oracle).abs() / scale < 1e-4,
                "mu mismatch at r = {r}: {mu} vs {mu_oracle}"
            );
        }
    }
}
