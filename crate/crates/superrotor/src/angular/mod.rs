//! Truncated |N,M⟩ basis and the wave-packet container.
//!
//! Flat indexing: state (N, M) lives at N² + (M + N), so the basis of size
//! (N_max+1)² enumerates shells in increasing N with M ascending inside each
//! shell. Spherical harmonics use the Condon–Shortley phase convention
//! throughout (operators, grids, and oracles alike).

pub mod grid;
pub mod operators;

use num_complex::Complex64 as C64;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::molecule::MoleculeSpec;

/// Index map for the truncated |N,M⟩ basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BasisIndex {
    n_max: u32,
}

impl BasisIndex {
    pub fn new(n_max: u32) -> Self {
        BasisIndex { n_max }
    }

    pub fn n_max(&self) -> u32 {
        self.n_max
    }

    pub fn dim(&self) -> usize {
        let n = self.n_max as usize + 1;
        n * n
    }

    /// Flat index of |N,M⟩.
    pub fn flat(&self, n: u32, m: i32) -> usize {
        debug_assert!(n <= self.n_max && m.unsigned_abs() <= n);
        (n as usize) * (n as usize) + (m + n as i32) as usize
    }

    /// Inverse of [`flat`](Self::flat).
    pub fn unflat(&self, i: usize) -> (u32, i32) {
        let mut n = (i as f64).sqrt() as u32;
        // guard against rounding at perfect squares
        while (n as usize + 1) * (n as usize + 1) <= i {
            n += 1;
        }
        while (n as usize) * (n as usize) > i {
            n -= 1;
        }
        let m = i as i64 - (n as i64) * (n as i64) - n as i64;
        (n, m as i32)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, i32)> {
        let n_max = self.n_max;
        (0..=n_max).flat_map(|n| (-(n as i32)..=n as i32).map(move |m| (n, m)))
    }
}

/// Complex coefficient vector over the truncated |N,M⟩ basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Wavefunction {
    basis: BasisIndex,
    pub coeffs: Vec<C64>,
}

impl Wavefunction {
    pub fn zero(n_max: u32) -> Self {
        let basis = BasisIndex::new(n_max);
        Wavefunction {
            basis,
            coeffs: vec![C64::new(0.0, 0.0); basis.dim()],
        }
    }

    /// Single eigenstate |N,M⟩.
    pub fn eigenstate(n_max: u32, n: u32, m: i32) -> Result<Self> {
        if n > n_max || m.unsigned_abs() > n {
            return Err(Error::Basis(format!(
                "state |{n},{m}> outside basis with N_max = {n_max}"
            )));
        }
        let mut psi = Self::zero(n_max);
        let i = psi.basis.flat(n, m);
        psi.coeffs[i] = C64::new(1.0, 0.0);
        Ok(psi)
    }

    pub fn from_coeffs(n_max: u32, coeffs: Vec<C64>) -> Result<Self> {
        let basis = BasisIndex::new(n_max);
        if coeffs.len() != basis.dim() {
            return Err(Error::Basis(format!(
                "coefficient vector length {} does not match basis size {}",
                coeffs.len(),
                basis.dim()
            )));
        }
        Ok(Wavefunction { basis, coeffs })
    }

    pub fn basis(&self) -> BasisIndex {
        self.basis
    }

    pub fn n_max(&self) -> u32 {
        self.basis.n_max
    }

    pub fn amplitude(&self, n: u32, m: i32) -> C64 {
        self.coeffs[self.basis.flat(n, m)]
    }

    pub fn set(&mut self, n: u32, m: i32, value: C64) {
        let i = self.basis.flat(n, m);
        self.coeffs[i] = value;
    }

    pub fn norm_sq(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn normalize(&mut self) {
        let n = self.norm();
        if n > 0.0 {
            for c in &mut self.coeffs {
                *c /= n;
            }
        }
    }

    /// ⟨self|other⟩.
    pub fn overlap(&self, other: &Wavefunction) -> C64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Σ_M |c_{N,M}|² for each N.
    pub fn population_by_n(&self) -> Vec<f64> {
        let mut pops = vec![0.0; self.basis.n_max as usize + 1];
        for (i, c) in self.coeffs.iter().enumerate() {
            let (n, _) = self.basis.unflat(i);
            pops[n as usize] += c.norm_sqr();
        }
        pops
    }

    /// ΔN = 2 coherence: Σ_M conj(c_{N+2,M+ΔM}) · c_{N,M} for ΔM ∈ {−2, 0, +2}.
    pub fn coherence(&self, n: u32, delta_m: i32) -> Result<C64> {
        if n + 2 > self.basis.n_max {
            return Err(Error::Basis(format!(
                "coherence needs N+2 = {} <= N_max = {}",
                n + 2,
                self.basis.n_max
            )));
        }
        if ![-2, 0, 2].contains(&delta_m) {
            return Err(Error::Basis(format!("coherence ΔM must be 0 or ±2, got {delta_m}")));
        }
        let mut acc = C64::new(0.0, 0.0);
        for m in -(n as i32)..=n as i32 {
            let mp = m + delta_m;
            if mp.unsigned_abs() <= n + 2 {
                acc += self.amplitude(n + 2, mp).conj() * self.amplitude(n, m);
            }
        }
        Ok(acc)
    }

    /// ⟨J_z⟩ in units of ħ.
    pub fn jz_expectation(&self) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let (_, m) = self.basis.unflat(i);
                m as f64 * c.norm_sqr()
            })
            .sum()
    }

    /// ⟨E⟩ in cm⁻¹ for the given rotor constants.
    pub fn energy_expectation(&self, spec: &MoleculeSpec) -> f64 {
        self.population_by_n()
            .iter()
            .enumerate()
            .map(|(n, p)| p * spec.energy(n as u32))
            .sum()
    }

    /// Population in the top two N shells; nonzero values signal reflection
    /// off the truncation boundary.
    pub fn top_shell_population(&self) -> f64 {
        let n_max = self.basis.n_max;
        let pops = self.population_by_n();
        if n_max == 0 {
            return 0.0;
        }
        pops[n_max as usize] + pops[n_max as usize - 1]
    }

    /// Which of the four (N parity, M parity) sectors carry amplitude.
    /// Kicks and centrifuge evolution never mix sectors (ΔN, ΔM ∈ {0, ±2}).
    pub fn occupied_sectors(&self) -> [bool; 4] {
        let mut occ = [false; 4];
        for (i, c) in self.coeffs.iter().enumerate() {
            if c.norm_sqr() > 0.0 {
                let (n, m) = self.basis.unflat(i);
                occ[sector_of(n, m)] = true;
            }
        }
        occ
    }

    /// Text snapshot: header with the basis size, one `N M re im` line per
    /// nonzero coefficient.
    pub fn write_text(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "# wavefunction n_max={}", self.basis.n_max)?;
        for (i, c) in self.coeffs.iter().enumerate() {
            if c.norm_sqr() > 0.0 {
                let (n, m) = self.basis.unflat(i);
                writeln!(w, "{n} {m} {:.16e} {:.16e}", c.re, c.im)?;
            }
        }
        Ok(())
    }

    pub fn read_text(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Basis("empty wavefunction file".into()))??;
        let n_max: u32 = header
            .trim()
            .strip_prefix("# wavefunction n_max=")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Basis(format!("bad wavefunction header '{header}'")))?;
        let mut psi = Wavefunction::zero(n_max);
        for line in lines {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = t.split_whitespace().collect();
            if f.len() != 4 {
                return Err(Error::Basis(format!("bad wavefunction line '{t}'")));
            }
            let n: u32 = f[0]
                .parse()
                .map_err(|_| Error::Basis(format!("bad N in '{t}'")))?;
            let m: i32 = f[1]
                .parse()
                .map_err(|_| Error::Basis(format!("bad M in '{t}'")))?;
            let re: f64 = f[2]
                .parse()
                .map_err(|_| Error::Basis(format!("bad re in '{t}'")))?;
            let im: f64 = f[3]
                .parse()
                .map_err(|_| Error::Basis(format!("bad im in '{t}'")))?;
            if n > n_max || m.unsigned_abs() > n {
                return Err(Error::Basis(format!("state |{n},{m}> outside basis")));
            }
            psi.set(n, m, C64::new(re, im));
        }
        Ok(psi)
    }
}

/// Sector id in 0..4 from the parities of N and M.
pub fn sector_of(n: u32, m: i32) -> usize {
    ((n % 2) * 2 + (m.rem_euclid(2) as u32)) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn flat_index_bijective() {
        let b = BasisIndex::new(23);
        let mut seen = vec![false; b.dim()];
        for (n, m) in b.iter() {
            let i = b.flat(n, m);
            assert!(!seen[i]);
            seen[i] = true;
            assert_eq!(b.unflat(i), (n, m));
        }
        assert!(seen.iter().all(|&s| s));
        assert_eq!(b.dim(), 24 * 24);
    }

    #[test]
    fn populations_and_coherence() {
        let psi = Wavefunction::eigenstate(4, 0, 0).unwrap();
        let pops = psi.population_by_n();
        assert_eq!(pops[0], 1.0);
        assert!(pops[1..].iter().all(|&p| p == 0.0));

        let mut psi = Wavefunction::zero(4);
        let r = 0.5_f64.sqrt();
        psi.set(2, 0, C64::new(r, 0.0));
        psi.set(2, 2, C64::new(r, 0.0));
        let pops = psi.population_by_n();
        assert_abs_diff_eq!(pops[2], 1.0, epsilon = 1e-15);

        // (|0,0> + |2,0>)/sqrt(2): coherence(0, 0) = 1/2
        let mut psi = Wavefunction::zero(4);
        psi.set(0, 0, C64::new(r, 0.0));
        psi.set(2, 0, C64::new(r, 0.0));
        let c = psi.coherence(0, 0).unwrap();
        assert_abs_diff_eq!(c.re, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(c.im, 0.0, epsilon = 1e-15);

        // eigenstate: all coherences vanish
        let psi = Wavefunction::eigenstate(6, 3, 1).unwrap();
        for n in 0..=4 {
            for dm in [-2, 0, 2] {
                assert_eq!(psi.coherence(n, dm).unwrap(), C64::new(0.0, 0.0));
            }
        }
    }

    #[test]
    fn jz_expectation_cases() {
        let psi = Wavefunction::eigenstate(6, 5, 3).unwrap();
        assert_eq!(psi.jz_expectation(), 3.0);

        let mut psi = Wavefunction::zero(4);
        let r = 0.5_f64.sqrt();
        psi.set(3, 2, C64::new(r, 0.0));
        psi.set(3, -2, C64::new(r, 0.0));
        assert_abs_diff_eq!(psi.jz_expectation(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn text_round_trip() {
        let mut psi = Wavefunction::zero(5);
        psi.set(0, 0, C64::new(0.6, 0.0));
        psi.set(3, -2, C64::new(0.0, -0.8));
        let mut buf = Vec::new();
        psi.write_text(&mut buf).unwrap();
        let back = Wavefunction::read_text(buf.as_slice()).unwrap();
        assert_eq!(psi, back);
    }

    #[test]
    fn sectors() {
        let psi = Wavefunction::eigenstate(6, 1, 1).unwrap();
        let occ = psi.occupied_sectors();
        assert_eq!(occ.iter().filter(|&&o| o).count(), 1);
        assert!(occ[sector_of(1, 1)]);
        assert_eq!(sector_of(1, 1), sector_of(3, -1));
        assert_ne!(sector_of(1, 1), sector_of(1, 0));
    }

    #[test]
    fn out_of_basis_rejected() {
        assert!(Wavefunction::eigenstate(4, 5, 0).is_err());
        assert!(Wavefunction::eigenstate(4, 2, 3).is_err());
        let psi = Wavefunction::zero(4);
        assert!(psi.coherence(3, 0).is_err());
        assert!(psi.coherence(1, 1).is_err());
    }
}
