//! Sparse angular operators over the |N,M⟩ basis.
//!
//! `cos2_matrix` builds the (û·r̂)² coupling for a lab-z or in-plane unit
//! polarization û; `jz_matrix` is the diagonal M operator. In-plane operators
//! come from an exact similarity rotation of the lab-z operator: a fixed π/2
//! rotation about y (Wigner-d blocks) followed by per-angle phases from the
//! closed-form rotation about z. The base π/2-rotated operator is cached per
//! basis size, so per-angle construction is cheap.

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use super::BasisIndex;

/// Polarization axis of a cos²-type coupling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Polarization {
    /// Along the lab z axis.
    LabZ,
    /// In the x-y plane at angle `phi` from x.
    InPlane { phi: f64 },
}

/// Allowed ΔN and ΔM of an operator's nonzero pattern.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionRule {
    pub delta_n: Vec<i32>,
    pub delta_m: Vec<i32>,
}

impl SelectionRule {
    pub fn allows(&self, dn: i32, dm: i32) -> bool {
        self.delta_n.contains(&dn) && self.delta_m.contains(&dm)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Values {
    Real(Vec<f64>),
    Complex(Vec<C64>),
}

/// Sparse Hermitian operator in CSR form with a selection-rule stamp.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularOperator {
    basis: BasisIndex,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Values,
    pub stamp: SelectionRule,
}

/// Rows-per-thread threshold above which matvec uses rayon.
const PAR_ROWS: usize = 8192;

impl AngularOperator {
    pub fn basis(&self) -> BasisIndex {
        self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn is_real(&self) -> bool {
        matches!(self.vals, Values::Real(_))
    }

    fn value_at(&self, k: usize) -> C64 {
        match &self.vals {
            Values::Real(v) => C64::new(v[k], 0.0),
            Values::Complex(v) => v[k],
        }
    }

    /// Iterate (row, col, value) over stored entries.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.dim()).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1])
                .map(move |k| (i, self.cols[k] as usize, self.value_at(k)))
        })
    }

    /// Entries of one row as (row, col, value); only for real-valued
    /// operators (lab-z and the φ = 0 in-plane base).
    pub fn row_entries_real(&self, i: usize) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let vals = match &self.vals {
            Values::Real(v) => v,
            Values::Complex(_) => panic!("row_entries_real on a complex-valued operator"),
        };
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (i, self.cols[k] as usize, vals[k]))
    }

    /// Stored element (i, j), or zero.
    pub fn element(&self, i: usize, j: usize) -> C64 {
        for k in self.row_ptr[i]..self.row_ptr[i + 1] {
            if self.cols[k] as usize == j {
                return self.value_at(k);
            }
        }
        C64::new(0.0, 0.0)
    }

    /// y = A·x.
    pub fn apply(&self, x: &[C64], y: &mut [C64]) {
        assert_eq!(x.len(), self.dim());
        assert_eq!(y.len(), self.dim());
        let dim = self.dim();
        match &self.vals {
            Values::Real(v) => {
                if dim >= PAR_ROWS {
                    y.par_iter_mut().enumerate().for_each(|(i, yi)| {
                        let mut acc = C64::new(0.0, 0.0);
                        for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                            acc += v[k] * x[self.cols[k] as usize];
                        }
                        *yi = acc;
                    });
                } else {
                    for (i, yi) in y.iter_mut().enumerate() {
                        let mut acc = C64::new(0.0, 0.0);
                        for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                            acc += v[k] * x[self.cols[k] as usize];
                        }
                        *yi = acc;
                    }
                }
            }
            Values::Complex(v) => {
                if dim >= PAR_ROWS {
                    y.par_iter_mut().enumerate().for_each(|(i, yi)| {
                        let mut acc = C64::new(0.0, 0.0);
                        for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                            acc += v[k] * x[self.cols[k] as usize];
                        }
                        *yi = acc;
                    });
                } else {
                    for (i, yi) in y.iter_mut().enumerate() {
                        let mut acc = C64::new(0.0, 0.0);
                        for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                            acc += v[k] * x[self.cols[k] as usize];
                        }
                        *yi = acc;
                    }
                }
            }
        }
    }

    /// ⟨ψ|A|ψ⟩.
    pub fn expectation(&self, psi: &[C64]) -> C64 {
        let mut y = vec![C64::new(0.0, 0.0); self.dim()];
        self.apply(psi, &mut y);
        psi.iter().zip(&y).map(|(a, b)| a.conj() * b).sum()
    }

    /// Max elementwise |A_ij − conj(A_ji)|.
    pub fn hermiticity_error(&self) -> f64 {
        let mut err: f64 = 0.0;
        for (i, j, v) in self.entries() {
            err = err.max((v - self.element(j, i).conj()).norm());
        }
        err
    }

    /// Drop all entries whose row or column is not kept. The dimension is
    /// unchanged; excluded rows become empty.
    pub fn restrict(&self, keep: &[bool]) -> AngularOperator {
        assert_eq!(keep.len(), self.dim());
        let mut row_ptr = Vec::with_capacity(self.row_ptr.len());
        let mut cols = Vec::new();
        row_ptr.push(0);
        match &self.vals {
            Values::Real(v) => {
                let mut vals = Vec::new();
                for i in 0..self.dim() {
                    if keep[i] {
                        for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                            if keep[self.cols[k] as usize] {
                                cols.push(self.cols[k]);
                                vals.push(v[k]);
                            }
                        }
                    }
                    row_ptr.push(cols.len());
                }
                AngularOperator {
                    basis: self.basis,
                    row_ptr,
                    cols,
                    vals: Values::Real(vals),
                    stamp: self.stamp.clone(),
                }
            }
            Values::Complex(v) => {
                let mut vals = Vec::new();
                for i in 0..self.dim() {
                    if keep[i] {
                        for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                            if keep[self.cols[k] as usize] {
                                cols.push(self.cols[k]);
                                vals.push(v[k]);
                            }
                        }
                    }
                    row_ptr.push(cols.len());
                }
                AngularOperator {
                    basis: self.basis,
                    row_ptr,
                    cols,
                    vals: Values::Complex(vals),
                    stamp: self.stamp.clone(),
                }
            }
        }
    }
}

/// Assemble a CSR matrix from unsorted (row, col, value) triplets.
fn csr_from_triplets(basis: BasisIndex, mut trip: Vec<(usize, usize, f64)>) -> (Vec<usize>, Vec<u32>, Vec<f64>) {
    trip.sort_unstable_by_key(|&(i, j, _)| (i, j));
    let dim = basis.dim();
    let mut row_ptr = vec![0usize; dim + 1];
    let mut cols = Vec::with_capacity(trip.len());
    let mut vals = Vec::with_capacity(trip.len());
    for &(i, j, v) in &trip {
        row_ptr[i + 1] += 1;
        cols.push(j as u32);
        vals.push(v);
    }
    for i in 0..dim {
        row_ptr[i + 1] += row_ptr[i];
    }
    (row_ptr, cols, vals)
}

/// Diagonal matrix element ⟨N,M|cos²θ|N,M⟩ for the lab-z axis.
fn cos2_diag(n: u32, m: i32) -> f64 {
    let nf = n as f64;
    let mf = m as f64;
    1.0 / 3.0 + (2.0 / 3.0) * (nf * (nf + 1.0) - 3.0 * mf * mf)
        / ((2.0 * nf - 1.0) * (2.0 * nf + 3.0))
}

/// Off-diagonal element ⟨N+2,M|cos²θ|N,M⟩ for the lab-z axis.
fn cos2_offdiag(n: u32, m: i32) -> f64 {
    let nf = n as f64;
    let mf = m as f64;
    let num = ((nf + 1.0) * (nf + 1.0) - mf * mf) * ((nf + 2.0) * (nf + 2.0) - mf * mf);
    let den = (2.0 * nf + 1.0) * (2.0 * nf + 3.0) * (2.0 * nf + 3.0) * (2.0 * nf + 5.0);
    (num / den).sqrt()
}

fn cos2_lab_z(n_max: u32) -> AngularOperator {
    let basis = BasisIndex::new(n_max);
    let mut trip = Vec::new();
    for n in 0..=n_max {
        for m in -(n as i32)..=n as i32 {
            let i = basis.flat(n, m);
            trip.push((i, i, cos2_diag(n, m)));
            if n + 2 <= n_max {
                let v = cos2_offdiag(n, m);
                let j = basis.flat(n + 2, m);
                trip.push((i, j, v));
                trip.push((j, i, v));
            }
        }
    }
    let (row_ptr, cols, vals) = csr_from_triplets(basis, trip);
    AngularOperator {
        basis,
        row_ptr,
        cols,
        vals: Values::Real(vals),
        stamp: SelectionRule {
            delta_n: vec![-2, 0, 2],
            delta_m: vec![0],
        },
    }
}

/// Diagonal J_z matrix (entries M, in units of ħ).
pub fn jz_matrix(n_max: u32) -> AngularOperator {
    let basis = BasisIndex::new(n_max);
    let mut trip = Vec::new();
    for n in 0..=n_max {
        for m in -(n as i32)..=n as i32 {
            let i = basis.flat(n, m);
            trip.push((i, i, m as f64));
        }
    }
    let (row_ptr, cols, vals) = csr_from_triplets(basis, trip);
    AngularOperator {
        basis,
        row_ptr,
        cols,
        vals: Values::Real(vals),
        stamp: SelectionRule {
            delta_n: vec![0],
            delta_m: vec![0],
        },
    }
}

/// Wigner d-matrix d^l(π/2), row-major over (m' + l, m + l).
///
/// Seeded at the top row m' = l and filled by the downward three-term
/// recurrence, which is numerically stable at β = π/2 for the l values used
/// here (verified against quadrature and by orthogonality tests).
pub fn wigner_d_half_pi(l: u32) -> Vec<f64> {
    let li = l as i64;
    let size = (2 * l + 1) as usize;
    let mut d = vec![0.0f64; size * size];
    let at = |mp: i64, m: i64| ((mp + li) as usize) * size + (m + li) as usize;

    // top row: d^l_{l,m}(pi/2) = (-1)^(l-m) 2^-l sqrt((2l)! / ((l+m)!(l-m)!)),
    // magnitudes built multiplicatively from m = 0 via logs at the center
    let mut ln_c = 0.0;
    for k in 1..=li {
        ln_c += ((li + k) as f64 / k as f64).ln();
    }
    let center = (-(li as f64) * std::f64::consts::LN_2 + 0.5 * ln_c).exp();
    d[at(li, 0)] = center;
    let mut v = center;
    for m in 0..li {
        // magnitude ratio d_{l,m+1}/d_{l,m} = sqrt((l-m)/(l+m+1))
        v *= (((li - m) as f64) / ((li + m + 1) as f64)).sqrt();
        d[at(li, m + 1)] = v;
    }
    let mut v = center;
    for m in 0..li {
        let mm = -m;
        v *= (((li + mm) as f64) / ((li - mm + 1) as f64)).sqrt();
        d[at(li, mm - 1)] = v;
    }
    for m in -li..=li {
        if (li - m).rem_euclid(2) == 1 {
            d[at(li, m)] = -d[at(li, m)];
        }
    }

    // downward recurrence in m', stable for m' >= 0:
    // d_{m'-1,m} = (2m) / sqrt((l-m'+1)(l+m')) d_{m',m}
    //              - sqrt((l-m')(l+m'+1)) / sqrt((l-m'+1)(l+m')) d_{m'+1,m}
    for mp in (1..=li).rev() {
        let a = (((li - mp + 1) * (li + mp)) as f64).sqrt();
        let b = if mp < li {
            (((li - mp) * (li + mp + 1)) as f64).sqrt()
        } else {
            0.0
        };
        for m in -li..=li {
            let mut t = (2 * m) as f64 / a * d[at(mp, m)];
            if mp < li {
                t -= b / a * d[at(mp + 1, m)];
            }
            d[at(mp - 1, m)] = t;
        }
    }
    // negative rows by the beta = pi/2 symmetry d_{-m',m} = (-1)^(l+m) d_{m',m}
    for mp in 1..=li {
        for m in -li..=li {
            let sign = if (li + m).rem_euclid(2) == 1 { -1.0 } else { 1.0 };
            d[at(-mp, m)] = sign * d[at(mp, m)];
        }
    }
    d
}

/// π/2-rotated cos² operator (polarization along x), computed entrywise on the
/// exact ΔM ∈ {0, ±2} pattern:
/// (U d U^T)_{m'm} = Σ_k d^N_{m'k} · C_{kk'} · d^{N'}_{mk'}.
fn cos2_inplane_base_uncached(n_max: u32) -> AngularOperator {
    let basis = BasisIndex::new(n_max);
    let d_blocks: Vec<Vec<f64>> = (0..=n_max).map(wigner_d_half_pi).collect();
    let mut trip = Vec::new();

    for n in 0..=n_max {
        let ni = n as i64;
        let size = (2 * n + 1) as usize;
        let d_n = &d_blocks[n as usize];
        let at_n = |mp: i64, k: i64| ((mp + ni) as usize) * size + (k + ni) as usize;

        // (N, N) block through the diagonal elements of the lab-z operator
        for mp in -ni..=ni {
            for m in [mp, mp - 2, mp + 2] {
                if m < -ni || m > ni {
                    continue;
                }
                let mut acc = 0.0;
                for k in -ni..=ni {
                    acc += d_n[at_n(mp, k)] * cos2_diag(n, k as i32) * d_n[at_n(m, k)];
                }
                trip.push((basis.flat(n, mp as i32), basis.flat(n, m as i32), acc));
            }
        }

        // (N, N+2) block through the off-diagonal elements
        if n + 2 <= n_max {
            let n2 = n + 2;
            let n2i = n2 as i64;
            let size2 = (2 * n2 + 1) as usize;
            let d_n2 = &d_blocks[n2 as usize];
            let at_n2 = |mp: i64, k: i64| ((mp + n2i) as usize) * size2 + (k + n2i) as usize;
            for mp in -ni..=ni {
                for m in [mp, mp - 2, mp + 2] {
                    if m < -n2i || m > n2i {
                        continue;
                    }
                    let mut acc = 0.0;
                    for k in -ni..=ni {
                        acc += d_n[at_n(mp, k)] * cos2_offdiag(n, k as i32) * d_n2[at_n2(m, k)];
                    }
                    let i = basis.flat(n, mp as i32);
                    let j = basis.flat(n2, m as i32);
                    trip.push((i, j, acc));
                    trip.push((j, i, acc));
                }
            }
        }
    }

    let (row_ptr, cols, vals) = csr_from_triplets(basis, trip);
    AngularOperator {
        basis,
        row_ptr,
        cols,
        vals: Values::Real(vals),
        stamp: SelectionRule {
            delta_n: vec![-2, 0, 2],
            delta_m: vec![-2, 0, 2],
        },
    }
}

fn inplane_cache() -> &'static Mutex<HashMap<u32, Arc<AngularOperator>>> {
    static CACHE: OnceLock<Mutex<HashMap<u32, Arc<AngularOperator>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// The φ = 0 in-plane operator, cached per basis size.
pub fn cos2_inplane_base(n_max: u32) -> Arc<AngularOperator> {
    let mut cache = inplane_cache().lock().unwrap();
    cache
        .entry(n_max)
        .or_insert_with(|| Arc::new(cos2_inplane_base_uncached(n_max)))
        .clone()
}

/// Matrix of (û·r̂)² over the |N,M⟩ basis for unit polarization û.
///
/// Lab-z couples ΔN ∈ {0, ±2} with ΔM = 0; in-plane polarizations couple
/// ΔM ∈ {0, ±2} as well. In-plane angles are reduced mod π (cos² symmetry)
/// before the z-rotation phases are applied.
pub fn cos2_matrix(n_max: u32, pol: Polarization) -> AngularOperator {
    match pol {
        Polarization::LabZ => cos2_lab_z(n_max),
        Polarization::InPlane { phi } => {
            let base = cos2_inplane_base(n_max);
            let phi = phi.rem_euclid(PI);
            if phi == 0.0 {
                return (*base).clone();
            }
            // entry (i, j) picks up exp(-i (M_i - M_j) phi); only ΔM = ±2
            // entries are affected
            let basis = base.basis;
            let real_vals = match &base.vals {
                Values::Real(v) => v,
                Values::Complex(_) => unreachable!("in-plane base is real"),
            };
            let mut vals = Vec::with_capacity(base.nnz());
            let (c2, s2) = ((2.0 * phi).cos(), (2.0 * phi).sin());
            let phase_p = C64::new(c2, -s2); // exp(-2i phi)
            let phase_m = C64::new(c2, s2);
            for i in 0..base.dim() {
                let (_, mi) = basis.unflat(i);
                for (k, &v) in real_vals
                    .iter()
                    .enumerate()
                    .take(base.row_ptr[i + 1])
                    .skip(base.row_ptr[i])
                {
                    let (_, mj) = basis.unflat(base.cols[k] as usize);
                    vals.push(match mi - mj {
                        2 => phase_p * v,
                        -2 => phase_m * v,
                        _ => C64::new(v, 0.0),
                    });
                }
            }
            AngularOperator {
                basis,
                row_ptr: base.row_ptr.clone(),
                cols: base.cols.clone(),
                vals: Values::Complex(vals),
                stamp: base.stamp.clone(),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn cos2_trivial_elements() {
        let op = cos2_matrix(6, Polarization::LabZ);
        let b = op.basis();
        assert_abs_diff_eq!(op.element(b.flat(0, 0), b.flat(0, 0)).re, 1.0 / 3.0, epsilon = 1e-15);
        // <2,0|cos2|0,0> = 2/(3 sqrt 5)
        assert_relative_eq!(
            op.element(b.flat(2, 0), b.flat(0, 0)).re,
            2.0 / (3.0 * 5.0_f64.sqrt()),
            epsilon = 1e-14
        );
        // known diagonal values
        assert_relative_eq!(op.element(b.flat(1, 0), b.flat(1, 0)).re, 0.6, epsilon = 1e-14);
        assert_relative_eq!(op.element(b.flat(1, 1), b.flat(1, 1)).re, 0.2, epsilon = 1e-14);
    }

    #[test]
    fn cos2_trace_tends_to_third() {
        for n_max in [8u32, 24] {
            let op = cos2_matrix(n_max, Polarization::LabZ);
            let trace: f64 = (0..op.dim()).map(|i| op.element(i, i).re).sum();
            let ratio = trace / op.dim() as f64;
            assert_relative_eq!(ratio, 1.0 / 3.0, epsilon = 2.0 / n_max as f64);
        }
        // and exactly tested: the trace of cos2 over a full shell N is (2N+1)/3
        let op = cos2_matrix(12, Polarization::LabZ);
        let b = op.basis();
        for n in [3u32, 7, 12] {
            let tr: f64 = (-(n as i32)..=n as i32)
                .map(|m| op.element(b.flat(n, m), b.flat(n, m)).re)
                .sum();
            assert_relative_eq!(tr, (2.0 * n as f64 + 1.0) / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn hermitian_and_selection_rules() {
        for pol in [
            Polarization::LabZ,
            Polarization::InPlane { phi: 0.0 },
            Polarization::InPlane { phi: 0.7 },
        ] {
            let op = cos2_matrix(10, pol);
            assert!(op.hermiticity_error() < 1e-12, "pol {pol:?}");
            for (i, j, v) in op.entries() {
                let (ni, mi) = op.basis().unflat(i);
                let (nj, mj) = op.basis().unflat(j);
                if v.norm() > 0.0 {
                    assert!(
                        op.stamp.allows(ni as i32 - nj as i32, mi - mj),
                        "entry ({ni},{mi})<-({nj},{mj}) violates stamp for {pol:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn lab_z_commutes_with_jz() {
        // both ops have Delta M = 0, so [cos2, Jz]_{ij} = C_ij (M_j - M_i) = 0 exactly
        let c = cos2_matrix(10, Polarization::LabZ);
        let b = c.basis();
        for (i, j, v) in c.entries() {
            let (_, mi) = b.unflat(i);
            let (_, mj) = b.unflat(j);
            assert_eq!(v * (mj - mi) as f64, C64::new(0.0, 0.0));
        }
    }

    #[test]
    fn jz_diagonal() {
        let jz = jz_matrix(5);
        let b = jz.basis();
        assert_eq!(jz.element(b.flat(5, 3), b.flat(5, 3)), C64::new(3.0, 0.0));
        assert_eq!(jz.nnz(), b.dim());
        let psi = crate::angular::Wavefunction::eigenstate(5, 5, 3).unwrap();
        assert_abs_diff_eq!(jz.expectation(&psi.coeffs).re, 3.0, epsilon = 1e-15);
    }

    #[test]
    fn inplane_phi_periodic_mod_pi() {
        let a = cos2_matrix(6, Polarization::InPlane { phi: 0.4 });
        let b = cos2_matrix(6, Polarization::InPlane { phi: 0.4 + PI });
        let mut max_diff: f64 = 0.0;
        for ((_, _, va), (_, _, vb)) in a.entries().zip(b.entries()) {
            max_diff = max_diff.max((va - vb).norm());
        }
        assert!(max_diff < 1e-12, "max diff {max_diff}");
    }

    #[test]
    fn inplane_plus_orthogonal_plus_z_is_identity() {
        // cos2_x + cos2_y + cos2_z = 1
        let x = cos2_matrix(8, Polarization::InPlane { phi: 0.0 });
        let y = cos2_matrix(8, Polarization::InPlane { phi: PI / 2.0 });
        let z = cos2_matrix(8, Polarization::LabZ);
        for i in 0..z.dim() {
            for j in 0..z.dim() {
                let s = x.element(i, j) + y.element(i, j) + z.element(i, j);
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(s.re, expect, epsilon = 1e-12);
                assert_abs_diff_eq!(s.im, 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn wigner_d_orthogonal_at_high_l() {
        for l in [1u32, 5, 40, 140] {
            let d = wigner_d_half_pi(l);
            let size = (2 * l + 1) as usize;
            // d d^T = 1 (rotation matrices are orthogonal)
            let mut max_err: f64 = 0.0;
            for i in 0..size {
                for j in 0..size {
                    let mut acc = 0.0;
                    for k in 0..size {
                        acc += d[i * size + k] * d[j * size + k];
                    }
                    let expect = if i == j { 1.0 } else { 0.0 };
                    max_err = max_err.max((acc - expect).abs());
                }
            }
            assert!(max_err < 1e-10, "l = {l}: {max_err:.2e}");
        }
    }

    #[test]
    fn wigner_d_small_l_closed_form() {
        // d^1(pi/2) in rows m' = -1, 0, 1 (Condon-Shortley):
        //   [ 1/2   1/sqrt2  1/2 ]
        //   [-1/sqrt2   0    1/sqrt2 ]
        //   [ 1/2  -1/sqrt2  1/2 ]
        let d = wigner_d_half_pi(1);
        let r = 0.5_f64.sqrt();
        let expect = [0.5, r, 0.5, -r, 0.0, r, 0.5, -r, 0.5];
        for (a, b) in d.iter().zip(expect.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn restrict_drops_rows() {
        let op = cos2_matrix(4, Polarization::LabZ);
        let mut keep = vec![false; op.dim()];
        let b = op.basis();
        // keep the even-N, even-M sector
        for (n, m) in b.iter() {
            if n % 2 == 0 && m % 2 == 0 {
                keep[b.flat(n, m)] = true;
            }
        }
        let r = op.restrict(&keep);
        assert!(r.nnz() < op.nnz());
        for (i, j, _) in r.entries() {
            assert!(keep[i] && keep[j]);
        }
        // restricted matvec agrees on vectors supported in the sector
        let psi = crate::angular::Wavefunction::eigenstate(4, 2, 0).unwrap();
        let mut y1 = vec![C64::new(0.0, 0.0); op.dim()];
        let mut y2 = y1.clone();
        op.apply(&psi.coeffs, &mut y1);
        r.apply(&psi.coeffs, &mut y2);
        for (a, b) in y1.iter().zip(&y2) {
            assert_abs_diff_eq!((a - b).norm(), 0.0, epsilon = 1e-15);
        }
    }
}
