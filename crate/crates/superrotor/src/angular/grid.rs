//! Real-space (θ, φ) grid transforms and angular densities.
//!
//! The grid pairs Gauss–Legendre nodes in cosθ with a uniform φ grid, exact
//! for spherical-harmonic products up to the requested degree. It serves as
//! the independent route for matrix elements and kick operators: synthesize a
//! wave packet on the grid, act pointwise, analyze back.

use num_complex::Complex64 as C64;
use std::f64::consts::{PI, TAU};

use super::{BasisIndex, Wavefunction};
use crate::error::{Error, Result};

/// Normalized associated Legendre values P̃_l^m(x) for fixed m ≥ 0 and
/// l = m..=l_max, such that Y_{l,m}(θ, φ) = P̃_l^m(cosθ)·e^{imφ} with the
/// Condon–Shortley phase.
pub fn normalized_legendre(l_max: u32, m: u32, x: f64) -> Vec<f64> {
    assert!(m <= l_max);
    let s = (1.0 - x * x).max(0.0).sqrt();
    let mut out = Vec::with_capacity((l_max - m + 1) as usize);

    // P̃_m^m = (-1)^m sqrt((2m+1)!! / (4 pi (2m)!!)) * s^m
    let mut pmm = (1.0 / (4.0 * PI)).sqrt();
    for k in 1..=m {
        pmm *= -((2.0 * k as f64 + 1.0) / (2.0 * k as f64)).sqrt() * s;
    }
    out.push(pmm);
    if l_max == m {
        return out;
    }
    let mut prev = pmm;
    let mut cur = x * (2.0 * m as f64 + 3.0).sqrt() * pmm;
    out.push(cur);
    for l in (m + 2)..=l_max {
        let lf = l as f64;
        let mf = m as f64;
        let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
        let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0))
            .sqrt();
        let next = a * (x * cur - b * prev);
        prev = cur;
        cur = next;
        out.push(cur);
    }
    out
}

/// Y_{l,m}(θ=π/2, φ=0) for any sign of m: Y_{l,-m} = (-1)^m conj(Y_{l,m}).
pub fn harmonic_at_equator(l: u32, m: i32) -> f64 {
    let ma = m.unsigned_abs();
    if ma > l {
        return 0.0;
    }
    let vals = normalized_legendre(l, ma, 0.0);
    let v = vals[(l - ma) as usize];
    if m < 0 && ma % 2 == 1 {
        -v
    } else {
        v
    }
}

/// Gauss–Legendre nodes and weights on [-1, 1] by Newton iteration.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // evaluate P_n and P'_n by recurrence
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Product quadrature grid over the sphere.
#[derive(Debug, Clone)]
pub struct SphereGrid {
    /// cosθ nodes (Gauss–Legendre).
    pub cos_theta: Vec<f64>,
    /// Gauss–Legendre weights (the sinθ dθ Jacobian is absorbed).
    pub theta_weights: Vec<f64>,
    /// Number of uniform φ points; φ_k = 2πk/n_phi with weight 2π/n_phi.
    pub n_phi: usize,
}

impl SphereGrid {
    /// Grid whose quadrature is exact for products of harmonics up to degree
    /// `degree` (so analysis of states up to N_max needs `degree = N_max`).
    pub fn for_degree(degree: u32) -> Self {
        let n_theta = degree as usize + 1;
        let n_phi = 2 * degree as usize + 1;
        let (cos_theta, theta_weights) = gauss_legendre(n_theta);
        SphereGrid {
            cos_theta,
            theta_weights,
            n_phi,
        }
    }

    pub fn phi(&self, k: usize) -> f64 {
        TAU * k as f64 / self.n_phi as f64
    }

    /// Largest N_max whose analysis is exact on this grid.
    pub fn max_degree(&self) -> u32 {
        let by_theta = self.cos_theta.len() as u32 - 1;
        let by_phi = ((self.n_phi - 1) / 2) as u32;
        by_theta.min(by_phi)
    }

    /// Evaluate ψ on the grid; row-major (θ index, φ index).
    pub fn synthesize(&self, psi: &Wavefunction) -> Vec<C64> {
        let n_max = psi.n_max();
        let basis = psi.basis();
        let n_theta = self.cos_theta.len();
        // per-M radial sums f_M(θ) = Σ_N c_{N,M} P̃_N^|M|(x) (with CS sign for M<0)
        let m_range = (2 * n_max + 1) as usize;
        let mut f = vec![C64::new(0.0, 0.0); m_range * n_theta];
        for (it, &x) in self.cos_theta.iter().enumerate() {
            for ma in 0..=n_max {
                let vals = normalized_legendre(n_max, ma, x);
                for n in ma..=n_max {
                    let p = vals[(n - ma) as usize];
                    let c_pos = psi.coeffs[basis.flat(n, ma as i32)];
                    f[(ma + n_max) as usize * n_theta + it] += c_pos * p;
                    if ma > 0 {
                        let sign = if ma % 2 == 1 { -1.0 } else { 1.0 };
                        let c_neg = psi.coeffs[basis.flat(n, -(ma as i32))];
                        f[(n_max - ma) as usize * n_theta + it] += c_neg * sign * p;
                    }
                }
            }
        }
        let mut out = vec![C64::new(0.0, 0.0); n_theta * self.n_phi];
        for it in 0..n_theta {
            for k in 0..self.n_phi {
                let phi = self.phi(k);
                let mut acc = C64::new(0.0, 0.0);
                for mi in 0..m_range {
                    let m = mi as i32 - n_max as i32;
                    let phase = C64::from_polar(1.0, m as f64 * phi);
                    acc += f[mi * n_theta + it] * phase;
                }
                out[it * self.n_phi + k] = acc;
            }
        }
        out
    }

    /// Quadrature projection of grid values back onto the basis:
    /// c_{N,M} = ∮ conj(Y_{N,M}) ψ dΩ.
    pub fn analyze(&self, values: &[C64], n_max: u32) -> Result<Wavefunction> {
        if n_max > self.max_degree() {
            return Err(Error::Basis(format!(
                "grid supports analysis up to N_max = {}, requested {n_max}",
                self.max_degree()
            )));
        }
        let n_theta = self.cos_theta.len();
        if values.len() != n_theta * self.n_phi {
            return Err(Error::Basis(format!(
                "grid value count {} does not match {} x {}",
                values.len(),
                n_theta,
                self.n_phi
            )));
        }
        // phi integrals g_M(θ) = (2π/K) Σ_k v(θ, φ_k) e^{-iMφ_k}
        let m_range = (2 * n_max + 1) as usize;
        let wphi = TAU / self.n_phi as f64;
        let mut g = vec![C64::new(0.0, 0.0); m_range * n_theta];
        for it in 0..n_theta {
            for k in 0..self.n_phi {
                let v = values[it * self.n_phi + k] * wphi;
                let phi = self.phi(k);
                for mi in 0..m_range {
                    let m = mi as i32 - n_max as i32;
                    g[mi * n_theta + it] += v * C64::from_polar(1.0, -(m as f64) * phi);
                }
            }
        }
        let mut psi = Wavefunction::zero(n_max);
        let basis = BasisIndex::new(n_max);
        for ma in 0..=n_max {
            for (it, &x) in self.cos_theta.iter().enumerate() {
                let w = self.theta_weights[it];
                let vals = normalized_legendre(n_max, ma, x);
                for n in ma..=n_max {
                    let p = vals[(n - ma) as usize] * w;
                    let gi_pos = g[(ma + n_max) as usize * n_theta + it];
                    psi.coeffs[basis.flat(n, ma as i32)] += gi_pos * p;
                    if ma > 0 {
                        let sign = if ma % 2 == 1 { -1.0 } else { 1.0 };
                        let gi_neg = g[(n_max - ma) as usize * n_theta + it];
                        psi.coeffs[basis.flat(n, -(ma as i32))] += gi_neg * sign * p;
                    }
                }
            }
        }
        Ok(psi)
    }
}

/// |ψ(θ=π/2, φ)|² on the given φ grid.
pub fn angular_density(psi: &Wavefunction, phis: &[f64]) -> Result<Vec<f64>> {
    if phis.is_empty() {
        return Err(Error::Observable("empty angle grid".into()));
    }
    let n_max = psi.n_max();
    let basis = psi.basis();
    // A_M = Σ_N c_{N,M} Y_{N,M}(π/2, 0)
    let mut a = vec![C64::new(0.0, 0.0); (2 * n_max + 1) as usize];
    for n in 0..=n_max {
        for m in -(n as i32)..=n as i32 {
            let y = harmonic_at_equator(n, m);
            if y != 0.0 {
                a[(m + n_max as i32) as usize] += psi.coeffs[basis.flat(n, m)] * y;
            }
        }
    }
    Ok(phis
        .iter()
        .map(|&phi| {
            let mut acc = C64::new(0.0, 0.0);
            for (mi, &am) in a.iter().enumerate() {
                let m = mi as i32 - n_max as i32;
                acc += am * C64::from_polar(1.0, m as f64 * phi);
            }
            acc.norm_sqr()
        })
        .collect())
}

/// [`angular_density`] normalized to unit sum over the grid cells.
pub fn angular_density_normalized(psi: &Wavefunction, phis: &[f64]) -> Result<Vec<f64>> {
    let mut d = angular_density(psi, phis)?;
    let total: f64 = d.iter().sum();
    if total > 0.0 {
        for v in &mut d {
            *v /= total;
        }
    }
    Ok(d)
}

/// φ-marginal density ∫|ψ|² sinθ dθ on the given φ grid (the alternative
/// reading of an in-plane angular distribution).
pub fn angular_density_marginal(psi: &Wavefunction, phis: &[f64]) -> Result<Vec<f64>> {
    if phis.is_empty() {
        return Err(Error::Observable("empty angle grid".into()));
    }
    let n_max = psi.n_max();
    let basis = psi.basis();
    let (xs, ws) = gauss_legendre(n_max as usize + 1);
    // T_M(θ) = Σ_N c_{N,M} P̃_N^M(x)
    let n_theta = xs.len();
    let m_range = (2 * n_max + 1) as usize;
    let mut t = vec![C64::new(0.0, 0.0); m_range * n_theta];
    for (it, &x) in xs.iter().enumerate() {
        for ma in 0..=n_max {
            let vals = normalized_legendre(n_max, ma, x);
            for n in ma..=n_max {
                let p = vals[(n - ma) as usize];
                t[(ma + n_max) as usize * n_theta + it] +=
                    psi.coeffs[basis.flat(n, ma as i32)] * p;
                if ma > 0 {
                    let sign = if ma % 2 == 1 { -1.0 } else { 1.0 };
                    t[(n_max - ma) as usize * n_theta + it] +=
                        psi.coeffs[basis.flat(n, -(ma as i32))] * sign * p;
                }
            }
        }
    }
    Ok(phis
        .iter()
        .map(|&phi| {
            let mut acc = 0.0;
            for it in 0..n_theta {
                let mut v = C64::new(0.0, 0.0);
                for mi in 0..m_range {
                    let m = mi as i32 - n_max as i32;
                    v += t[mi * n_theta + it] * C64::from_polar(1.0, m as f64 * phi);
                }
                acc += ws[it] * v.norm_sqr();
            }
            acc
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_state(n_max: u32, seed: u64) -> Wavefunction {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut psi = Wavefunction::zero(n_max);
        for c in &mut psi.coeffs {
            *c = C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
        }
        psi.normalize();
        psi
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (xs, ws) = gauss_legendre(8);
        // exact for degree <= 15
        for p in 0..=15u32 {
            let num: f64 = xs
                .iter()
                .zip(&ws)
                .map(|(&x, &w)| w * x.powi(p as i32))
                .sum();
            let exact = if p % 2 == 1 { 0.0 } else { 2.0 / (p as f64 + 1.0) };
            assert_abs_diff_eq!(num, exact, epsilon = 1e-13);
        }
    }

    #[test]
    fn legendre_normalization() {
        // quadrature of |Y_{3,1}|^2 over the sphere = 1
        let (xs, ws) = gauss_legendre(12);
        let mut acc = 0.0;
        for (&x, &w) in xs.iter().zip(&ws) {
            let v = normalized_legendre(3, 1, x)[2];
            acc += w * v * v;
        }
        acc *= TAU; // phi integral of |e^{i phi}|^2
        assert_relative_eq!(acc, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn grid_round_trip_identity() {
        let n_max = 14;
        let psi = random_state(n_max, 42);
        let grid = SphereGrid::for_degree(n_max);
        let values = grid.synthesize(&psi);
        let back = grid.analyze(&values, n_max).unwrap();
        let err: f64 = psi
            .coeffs
            .iter()
            .zip(&back.coeffs)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-10, "round-trip error {err:.2e}");
    }

    #[test]
    fn grid_rejects_insufficient_order() {
        let grid = SphereGrid::for_degree(6);
        let psi = Wavefunction::eigenstate(6, 0, 0).unwrap();
        let values = grid.synthesize(&psi);
        assert!(grid.analyze(&values, 8).is_err());
    }

    #[test]
    fn cos2_expectation_grid_vs_matrix() {
        use crate::angular::operators::{cos2_matrix, Polarization};
        let n_max = 10;
        let psi = random_state(n_max, 7);
        // grid route: pointwise cos^2(theta) on an oversampled grid
        let grid = SphereGrid::for_degree(n_max + 2);
        let values = grid.synthesize(&psi);
        let n_theta = grid.cos_theta.len();
        let mut acc = 0.0;
        let wphi = TAU / grid.n_phi as f64;
        for it in 0..n_theta {
            let x = grid.cos_theta[it];
            for k in 0..grid.n_phi {
                acc += grid.theta_weights[it] * wphi * x * x
                    * values[it * grid.n_phi + k].norm_sqr();
            }
        }
        let op = cos2_matrix(n_max, Polarization::LabZ);
        let expect = op.expectation(&psi.coeffs).re;
        assert_abs_diff_eq!(acc, expect, epsilon = 1e-10);
    }

    #[test]
    fn density_flat_for_isotropic_state() {
        let psi = Wavefunction::eigenstate(4, 0, 0).unwrap();
        let phis: Vec<f64> = (0..64).map(|k| TAU * k as f64 / 64.0).collect();
        let d = angular_density(&psi, &phis).unwrap();
        for &v in &d {
            assert_relative_eq!(v, 1.0 / (4.0 * PI), epsilon = 1e-12);
        }
        assert!(angular_density(&psi, &[]).is_err());
    }

    #[test]
    fn density_lobes_of_stretched_states() {
        // real combination of |N,N> and |N,-N> has 2N equal lobes in phi
        let n = 3u32;
        let mut psi = Wavefunction::zero(n);
        let r = 0.5_f64.sqrt();
        psi.set(n, n as i32, C64::new(r, 0.0));
        psi.set(n, -(n as i32), C64::new(r, 0.0));
        let k = 720usize;
        let phis: Vec<f64> = (0..k).map(|i| TAU * i as f64 / k as f64).collect();
        let d = angular_density(&psi, &phis).unwrap();
        // |Y_{N,N}|(pi/2) pattern: density ~ (1 + cos(2N phi)), maxima at phi = pi k / N
        let mut maxima = 0;
        for i in 0..k {
            let prev = d[(i + k - 1) % k];
            let next = d[(i + 1) % k];
            if d[i] > prev && d[i] > next && d[i] > 1e-6 {
                maxima += 1;
            }
        }
        assert_eq!(maxima, 2 * n as usize);
        // odd N: density = 2 y^2 sin^2(N phi) with y = |Y_{N,N}|(pi/2)
        let y = harmonic_at_equator(n, n as i32);
        let peak = d.iter().cloned().fold(0.0, f64::max);
        assert_relative_eq!(peak, 2.0 * y * y, epsilon = 1e-9);
        assert_abs_diff_eq!(d[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn marginal_density_integrates_to_one() {
        let psi = random_state(8, 3);
        let k = 256usize;
        let phis: Vec<f64> = (0..k).map(|i| TAU * i as f64 / k as f64).collect();
        let d = angular_density_marginal(&psi, &phis).unwrap();
        let total: f64 = d.iter().sum::<f64>() * TAU / k as f64;
        assert_relative_eq!(total, 1.0, epsilon = 1e-10);
    }
}
