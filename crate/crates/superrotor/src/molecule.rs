//! Molecular constants, rotational energies, derived timescales, and thermal
//! initial-state weights.
//!
//! Rotational term values follow E(N) = B·N(N+1) − D·N²(N+1)² with B and D in
//! cm⁻¹. Nuclear-spin statistics enter as parity-dependent weights on N.

use std::collections::BTreeMap;
use std::path::Path;

use crate::constants::{wavenumber_to_thz, C_CM_PER_PS, KB_CM_PER_K};
use crate::error::{Error, Result};

/// Upper bound on D/B accepted as "rigid-ish"; larger ratios indicate a typo
/// or a molecule outside the model's validity.
pub const MAX_EPSILON: f64 = 1e-3;

/// Pairwise spin-rotation branch offsets must stay below this (cm⁻¹).
pub const MAX_FINE_SPLITTING: f64 = 0.1;

/// Relative tail allowed beyond the thermal truncation.
pub const THERMAL_TAIL_LIMIT: f64 = 1e-9;

/// Effective line model for spin-rotation splitting of an S-branch Raman line:
/// three components, each with an additive offset (cm⁻¹) given by a polynomial
/// in N. This is a line-position model, not a spin Hamiltonian.
#[derive(Debug, Clone, PartialEq)]
pub struct FineStructureModel {
    /// Offset polynomials for the S1, S2, S3 components, lowest order first.
    pub branches: [Vec<f64>; 3],
}

impl FineStructureModel {
    pub fn new(branches: [Vec<f64>; 3]) -> Result<Self> {
        let model = FineStructureModel { branches };
        model.check(100)?;
        Ok(model)
    }

    fn check(&self, n_probe: u32) -> Result<()> {
        for n in 0..=n_probe {
            let off = self.offsets(n);
            for i in 0..3 {
                for j in (i + 1)..3 {
                    let split = (off[i] - off[j]).abs();
                    if split >= MAX_FINE_SPLITTING {
                        return Err(Error::Molecule(format!(
                            "fine-structure splitting {split:.4} cm^-1 at N={n} exceeds {MAX_FINE_SPLITTING}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Evaluate the three branch offsets at rotational level N.
    pub fn offsets(&self, n: u32) -> [f64; 3] {
        let x = n as f64;
        let eval = |p: &[f64]| p.iter().rev().fold(0.0, |acc, &c| acc * x + c);
        [
            eval(&self.branches[0]),
            eval(&self.branches[1]),
            eval(&self.branches[2]),
        ]
    }
}

/// Spectroscopic and polarizability constants plus nuclear-spin weights for
/// one linear molecule.
#[derive(Debug, Clone, PartialEq)]
pub struct MoleculeSpec {
    pub name: String,
    /// Rotational constant, cm⁻¹.
    pub b: f64,
    /// Centrifugal distortion constant, cm⁻¹.
    pub d: f64,
    /// Polarizability anisotropy, Å³.
    pub delta_alpha: f64,
    /// Nuclear-spin statistical weight of even N.
    pub spin_weight_even: f64,
    /// Nuclear-spin statistical weight of odd N.
    pub spin_weight_odd: f64,
    pub fine_structure: Option<FineStructureModel>,
}

impl MoleculeSpec {
    pub fn new(
        name: impl Into<String>,
        b: f64,
        d: f64,
        delta_alpha: f64,
        spin_weight_even: f64,
        spin_weight_odd: f64,
    ) -> Result<Self> {
        let spec = MoleculeSpec {
            name: name.into(),
            b,
            d,
            delta_alpha,
            spin_weight_even,
            spin_weight_odd,
            fine_structure: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b > 0.0) {
            return Err(Error::Molecule(format!("{}: B must be > 0", self.name)));
        }
        if self.d < 0.0 {
            return Err(Error::Molecule(format!("{}: D must be >= 0", self.name)));
        }
        if self.epsilon() >= MAX_EPSILON {
            return Err(Error::Molecule(format!(
                "{}: D/B = {:.2e} is not a near-rigid rotor (limit {MAX_EPSILON:.0e})",
                self.name,
                self.epsilon()
            )));
        }
        if self.spin_weight_even < 0.0 || self.spin_weight_odd < 0.0 {
            return Err(Error::Molecule(format!(
                "{}: spin weights must be non-negative",
                self.name
            )));
        }
        if self.spin_weight_even == 0.0 && self.spin_weight_odd == 0.0 {
            return Err(Error::Molecule(format!(
                "{}: at least one spin weight must be positive",
                self.name
            )));
        }
        if let Some(fs) = &self.fine_structure {
            fs.check(100)?;
        }
        Ok(())
    }

    /// Centrifugal-to-rotational constant ratio ε = D/B.
    pub fn epsilon(&self) -> f64 {
        self.d / self.b
    }

    /// Nuclear-spin weight of level N.
    pub fn spin_weight(&self, n: u32) -> f64 {
        if n % 2 == 0 {
            self.spin_weight_even
        } else {
            self.spin_weight_odd
        }
    }

    /// Lowest N with nonzero spin weight.
    pub fn lowest_allowed_n(&self) -> u32 {
        if self.spin_weight_even > 0.0 {
            0
        } else {
            1
        }
    }

    /// Rotational term value E(N) = B·N(N+1) − D·N²(N+1)², cm⁻¹.
    pub fn energy(&self, n: u32) -> f64 {
        let x = (n as f64) * (n as f64 + 1.0);
        self.b * x - self.d * x * x
    }

    /// Raman shift of the N → N+2 transition, cm⁻¹. The rigid part is B(4N+6).
    pub fn raman_shift(&self, n: u32) -> f64 {
        self.energy(n + 2) - self.energy(n)
    }

    /// Full rotational revival time 1/(2Bc), ps.
    pub fn revival_time(&self) -> f64 {
        1.0 / (2.0 * self.b * C_CM_PER_PS)
    }

    /// Dominant coherence-oscillation period with centrifugal distortion,
    /// T = [8Bc·(1 − 6εN(N+1))]⁻¹, ps. Reduces to the quarter revival at N=0.
    pub fn quarter_revival_distorted(&self, n: u32) -> Result<f64> {
        let x = 6.0 * self.epsilon() * (n as f64) * (n as f64 + 1.0);
        if x >= 1.0 {
            return Err(Error::Molecule(format!(
                "{}: distortion factor 6*eps*N(N+1) = {x:.3} >= 1 at N={n}; formula invalid",
                self.name
            )));
        }
        Ok(1.0 / (8.0 * self.b * C_CM_PER_PS * (1.0 - x)))
    }

    /// Classical rotation frequency of level N in THz: half the Raman shift of
    /// the (N−1) → (N+1) coherence.
    pub fn classical_rotation_frequency(&self, n: u32) -> Result<f64> {
        if n == 0 {
            return Err(Error::Molecule(
                "classical rotation frequency undefined at N=0".into(),
            ));
        }
        let shift = self.energy(n + 1) - self.energy(n - 1);
        Ok(wavenumber_to_thz(shift / 2.0))
    }

    /// Boltzmann weights over (N, M) at temperature `t_kelvin`, truncated at
    /// `n_max`. Fails if the truncated tail exceeds 10⁻⁹ of the total.
    pub fn thermal_populations(&self, t_kelvin: f64, n_max: u32) -> Result<ThermalWeights> {
        if t_kelvin < 0.0 {
            return Err(Error::Molecule("temperature must be >= 0".into()));
        }
        if t_kelvin == 0.0 {
            let n0 = self.lowest_allowed_n();
            if n0 > n_max {
                return Err(Error::ThermalTail {
                    given: n_max,
                    required: n0,
                    tail: 1.0,
                });
            }
            let mut by_n = BTreeMap::new();
            by_n.insert(n0, 1.0);
            return Ok(ThermalWeights {
                temperature: 0.0,
                by_n,
            });
        }

        let kt = KB_CM_PER_K * t_kelvin;
        let unnorm = |n: u32| -> f64 {
            self.spin_weight(n) * (2.0 * n as f64 + 1.0) * (-self.energy(n) / kt).exp()
        };
        let total: f64 = (0..=n_max).map(unnorm).sum();

        // Tail estimate: extend the sum until the increment is negligible.
        let mut tail = 0.0;
        let mut n = n_max + 1;
        loop {
            let w = unnorm(n);
            tail += w;
            if w < 1e-18 * total || n > n_max + 1000 {
                break;
            }
            n += 1;
        }
        if tail > THERMAL_TAIL_LIMIT * total {
            // Find the truncation that would satisfy the tail bound.
            let mut required = n_max + 1;
            let mut t = tail;
            while t > THERMAL_TAIL_LIMIT * total && required < n_max + 1000 {
                t -= unnorm(required);
                required += 1;
            }
            return Err(Error::ThermalTail {
                given: n_max,
                required,
                tail: tail / total,
            });
        }

        let mut by_n = BTreeMap::new();
        for n in 0..=n_max {
            let w = unnorm(n) / total;
            if w > 0.0 {
                by_n.insert(n, w);
            }
        }
        Ok(ThermalWeights {
            temperature: t_kelvin,
            by_n,
        })
    }
}

/// Normalized thermal weights. The weight of level N is distributed equally
/// over its 2N+1 M-sublevels.
#[derive(Debug, Clone)]
pub struct ThermalWeights {
    pub temperature: f64,
    by_n: BTreeMap<u32, f64>,
}

impl ThermalWeights {
    /// Total weight of level N (all M combined).
    pub fn weight_n(&self, n: u32) -> f64 {
        self.by_n.get(&n).copied().unwrap_or(0.0)
    }

    /// Weight of a single |N, M⟩ state.
    pub fn weight(&self, n: u32, _m: i32) -> f64 {
        self.weight_n(n) / (2.0 * n as f64 + 1.0)
    }

    /// Iterate over (N, M, weight) for all states with nonzero weight,
    /// in ascending (N, M) order.
    pub fn iter_states(&self) -> impl Iterator<Item = (u32, i32, f64)> + '_ {
        self.by_n.iter().flat_map(|(&n, &w)| {
            let wm = w / (2.0 * n as f64 + 1.0);
            (-(n as i32)..=n as i32).map(move |m| (n, m, wm))
        })
    }

    /// Iterate over (N, weight) pairs.
    pub fn iter_levels(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.by_n.iter().map(|(&n, &w)| (n, w))
    }

    pub fn max_n(&self) -> u32 {
        self.by_n.keys().next_back().copied().unwrap_or(0)
    }

    pub fn total(&self) -> f64 {
        self.by_n.values().sum()
    }

    /// Populations as a dense vector of length n_max+1.
    pub fn dense(&self, n_max: u32) -> Vec<f64> {
        let mut out = vec![0.0; n_max as usize + 1];
        for (&n, &w) in &self.by_n {
            if n <= n_max {
                out[n as usize] = w;
            }
        }
        out
    }
}

/// A set of named molecules loaded from the plain-text database.
#[derive(Debug, Clone, Default)]
pub struct MoleculeDb {
    molecules: Vec<MoleculeSpec>,
}

/// Constants bundled with the crate (literature values; the sources are cited
/// in the database file itself).
pub const BUILTIN_DB: &str = include_str!("../data/molecules.txt");

impl MoleculeDb {
    /// Parse the line-oriented database format:
    ///
    /// ```text
    /// # comment
    /// molecule <name> <B> <D> <delta_alpha> <w_even> <w_odd>
    /// fine <name> <S1|S2|S3> <c0> [c1 c2 ...]
    /// ```
    pub fn parse(text: &str) -> Result<Self> {
        let mut db = MoleculeDb::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let kind = parts.next().unwrap();
            let fields: Vec<&str> = parts.collect();
            let ctx = |msg: String| Error::Database(format!("line {}: {msg}", lineno + 1));
            match kind {
                "molecule" => {
                    if fields.len() != 6 {
                        return Err(ctx(format!(
                            "expected 6 fields after 'molecule', got {}",
                            fields.len()
                        )));
                    }
                    let num = |s: &str| -> Result<f64> {
                        s.parse::<f64>()
                            .map_err(|_| ctx(format!("bad number '{s}'")))
                    };
                    let spec = MoleculeSpec::new(
                        fields[0],
                        num(fields[1])?,
                        num(fields[2])?,
                        num(fields[3])?,
                        num(fields[4])?,
                        num(fields[5])?,
                    )?;
                    if db.molecules.iter().any(|m| m.name == spec.name) {
                        return Err(ctx(format!("duplicate molecule '{}'", spec.name)));
                    }
                    db.molecules.push(spec);
                }
                "fine" => {
                    if fields.len() < 3 {
                        return Err(ctx("expected 'fine <name> <S1|S2|S3> <c0> ...'".into()));
                    }
                    let name = fields[0];
                    let branch = match fields[1] {
                        "S1" => 0usize,
                        "S2" => 1,
                        "S3" => 2,
                        other => return Err(ctx(format!("unknown branch '{other}'"))),
                    };
                    let coeffs: Vec<f64> = fields[2..]
                        .iter()
                        .map(|s| {
                            s.parse::<f64>()
                                .map_err(|_| ctx(format!("bad number '{s}'")))
                        })
                        .collect::<Result<_>>()?;
                    let mol = db
                        .molecules
                        .iter_mut()
                        .find(|m| m.name == name)
                        .ok_or_else(|| ctx(format!("'fine' before 'molecule {name}'")))?;
                    let fs = mol.fine_structure.get_or_insert_with(|| FineStructureModel {
                        branches: [vec![0.0], vec![0.0], vec![0.0]],
                    });
                    fs.branches[branch] = coeffs;
                }
                other => return Err(ctx(format!("unknown record kind '{other}'"))),
            }
        }
        for mol in &db.molecules {
            mol.validate()?;
        }
        Ok(db)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::parse(&text)
    }

    /// The database bundled with the crate.
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_DB).expect("bundled molecule database must parse")
    }

    pub fn get(&self, name: &str) -> Result<&MoleculeSpec> {
        self.molecules
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| {
                Error::Database(format!(
                    "unknown molecule '{name}' (available: {})",
                    self.names().join(", ")
                ))
            })
    }

    pub fn names(&self) -> Vec<&str> {
        self.molecules.iter().map(|m| m.name.as_str()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &MoleculeSpec> {
        self.molecules.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn o2_like() -> MoleculeSpec {
        MoleculeSpec::new("o2-like", 1.4377, 0.0, 1.1, 0.0, 1.0).unwrap()
    }

    #[test]
    fn energy_examples() {
        let m = o2_like();
        assert_eq!(m.energy(0), 0.0);
        assert_relative_eq!(m.energy(2), 8.6262, epsilon = 1e-12);

        // distorted value sits strictly below the rigid one by D*(N(N+1))^2
        let md = MoleculeSpec::new("x", 1.4377, 4.3e-6, 1.1, 0.0, 1.0).unwrap();
        let n = 69u32;
        let x = (n * (n + 1)) as f64;
        assert!(md.energy(n) < m.energy(n));
        assert_relative_eq!(m.energy(n) - md.energy(n), 4.3e-6 * x * x, epsilon = 1e-10);
    }

    #[test]
    fn raman_shift_examples() {
        let m = MoleculeSpec::new("u", 1.0, 0.0, 1.0, 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(m.raman_shift(0), 6.0, epsilon = 1e-12);

        let m = o2_like();
        assert_abs_diff_eq!(m.raman_shift(10), 66.134, epsilon = 5e-4);

        // rigid part is B(4N+6)
        let md = MoleculeSpec::new("x", 1.4377, 4.3e-6, 1.1, 0.0, 1.0).unwrap();
        let rigid = md.b * (4.0 * 7.0 + 6.0);
        assert!(md.raman_shift(7) < rigid);

        // O2 (N=79) and N2 (N=55) transitions land close together; the paper
        // quotes ~0.5 cm^-1 with unstated constants, literature constants put
        // it within ~2 cm^-1.
        let db = MoleculeDb::builtin();
        let o2 = db.get("O2").unwrap();
        let n2 = db.get("N2").unwrap();
        let diff = o2.raman_shift(79) - n2.raman_shift(55);
        assert!(diff.abs() < 2.0, "diff = {diff}");
        assert!(o2.raman_shift(79) > 430.0 && o2.raman_shift(79) < 455.0);
    }

    #[test]
    fn revival_time_examples() {
        let n2 = MoleculeSpec::new("n2", 1.9896, 0.0, 0.7, 2.0, 1.0).unwrap();
        assert_relative_eq!(n2.revival_time(), 8.38, epsilon = 0.01 * 8.38);

        let o2 = o2_like();
        assert_relative_eq!(o2.revival_time(), 11.6, epsilon = 0.01 * 11.6);

        let doubled = MoleculeSpec::new("d", 2.0 * 1.9896, 0.0, 0.7, 2.0, 1.0).unwrap();
        assert_relative_eq!(doubled.revival_time(), n2.revival_time() / 2.0, epsilon = 1e-12);

        // identity: T_rev * 2Bc = 1
        assert_relative_eq!(
            n2.revival_time() * 2.0 * n2.b * C_CM_PER_PS,
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn quarter_revival_examples() {
        let m = o2_like();
        assert_relative_eq!(m.quarter_revival_distorted(0).unwrap(), 2.90, epsilon = 0.01);

        let md = MoleculeSpec::new("x", 1.4377, 3e-6 * 1.4377, 1.1, 0.0, 1.0).unwrap();
        let t0 = md.quarter_revival_distorted(0).unwrap();
        let t69 = md.quarter_revival_distorted(69).unwrap();
        let x = 6.0 * 3e-6 * 69.0 * 70.0;
        assert_relative_eq!(x, 0.08694, epsilon = 1e-5);
        assert_relative_eq!(t69 / t0, 1.0 / (1.0 - x), epsilon = 1e-14);
        // consistent with the paper's "deviate by as much as 10%"
        assert!(t69 / t0 - 1.0 > 0.08 && t69 / t0 - 1.0 < 0.10);

        // rigid: exactly (8Bc)^-1 at any N
        let t50 = m.quarter_revival_distorted(50).unwrap();
        assert_relative_eq!(t50, 1.0 / (8.0 * m.b * C_CM_PER_PS), epsilon = 1e-14);

        // precondition violation
        let bad = MoleculeSpec::new("x", 1.0, 9e-4, 1.0, 1.0, 1.0).unwrap();
        assert!(bad.quarter_revival_distorted(100).is_err());
    }

    #[test]
    fn classical_rotation_examples() {
        let db = MoleculeDb::builtin();
        let o2 = db.get("O2").unwrap();
        let f100 = o2.classical_rotation_frequency(100).unwrap();
        assert!((8.0..9.0).contains(&f100), "f = {f100}");

        let u = MoleculeSpec::new("u", 1.0, 0.0, 1.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(
            u.classical_rotation_frequency(1).unwrap(),
            3.0 * C_CM_PER_PS,
            epsilon = 1e-12
        );
        assert!(u.classical_rotation_frequency(0).is_err());
    }

    #[test]
    fn thermal_examples() {
        let m = o2_like();
        let w = m.thermal_populations(0.0, 10).unwrap();
        assert_eq!(w.weight_n(1), 1.0);
        assert_eq!(w.weight_n(0), 0.0);

        // O2-like: zero weight on all even N at any temperature
        let w = m.thermal_populations(295.0, 60).unwrap();
        for n in (0..=60).step_by(2) {
            assert_eq!(w.weight_n(n), 0.0);
        }
        assert_relative_eq!(w.total(), 1.0, epsilon = 1e-12);

        // N2 2:1 even:odd alternation under the Boltzmann envelope
        let n2 = MoleculeSpec::new("n2", 1.9896, 0.0, 0.7, 2.0, 1.0).unwrap();
        let w = n2.thermal_populations(295.0, 50).unwrap();
        let kt = KB_CM_PER_K * 295.0;
        for n in [2u32, 6, 10] {
            let ratio = w.weight_n(n) / w.weight_n(n + 1);
            let expect = 2.0 * (2.0 * n as f64 + 1.0) / (2.0 * n as f64 + 3.0)
                * ((n2.energy(n + 1) - n2.energy(n)) / kt).exp();
            assert_relative_eq!(ratio, expect, epsilon = 1e-10);
        }

        // tail-truncation failure reports a usable N_max
        let err = n2.thermal_populations(295.0, 12).unwrap_err();
        match err {
            Error::ThermalTail { required, .. } => assert!(required > 12),
            other => panic!("unexpected error {other}"),
        }
        assert!(n2.thermal_populations(295.0, 50).is_ok());
    }

    #[test]
    fn thermal_weights_match_long_sum() {
        // independent long-sum oracle at N_max + 50
        let n2 = MoleculeSpec::new("n2", 1.9896, 5.76e-6, 0.7, 2.0, 1.0).unwrap();
        let n_max = 50u32;
        let w = n2.thermal_populations(295.0, n_max).unwrap();
        let kt = KB_CM_PER_K * 295.0;
        let un = |n: u32| {
            n2.spin_weight(n) * (2.0 * n as f64 + 1.0) * (-n2.energy(n) / kt).exp()
        };
        let total: f64 = (0..=n_max + 50).map(un).sum();
        for n in 0..=n_max {
            assert_abs_diff_eq!(w.weight_n(n), un(n) / total, epsilon = 1e-9);
        }
        assert_relative_eq!(w.total(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn energy_monotonic_in_validity_range() {
        let db = MoleculeDb::builtin();
        for m in db.iter() {
            // dE/dN > 0 as long as B > 2 D x (N(N+1)) d/dN ... checked directly
            let mut prev = m.energy(0);
            for n in 1..=150 {
                let e = m.energy(n);
                if 6.0 * m.epsilon() * (n as f64) * (n as f64 + 1.0) < 0.5 {
                    assert!(e > prev, "{}: E({n}) not increasing", m.name);
                }
                prev = e;
            }
        }
    }

    #[test]
    fn db_parses_and_validates() {
        let db = MoleculeDb::builtin();
        for name in ["N2", "N2-15", "O2", "CO2", "H2"] {
            let m = db.get(name).unwrap();
            m.validate().unwrap();
        }
        let o2 = db.get("O2").unwrap();
        assert!(o2.fine_structure.is_some());
        assert_eq!(o2.spin_weight_even, 0.0);
        // paper: eps(O2) ~ 3e-6
        assert!((2.5e-6..4.0e-6).contains(&o2.epsilon()));

        assert!(db.get("XY").is_err());
    }

    #[test]
    fn db_rejects_bad_input() {
        assert!(MoleculeDb::parse("molecule X -1 0 1 1 1").is_err());
        assert!(MoleculeDb::parse("molecule X 1 0 1 0 0").is_err());
        assert!(MoleculeDb::parse("molecule X 1 2e-3 1 1 1").is_err()); // eps too big
        assert!(MoleculeDb::parse("junk line").is_err());
        assert!(MoleculeDb::parse("fine X S1 0.0").is_err()); // fine before molecule
        let db = MoleculeDb::parse("# only comments\n\n").unwrap();
        assert!(db.names().is_empty());
    }

    #[test]
    fn fine_structure_offsets() {
        let fs = FineStructureModel::new([vec![0.02], vec![0.0], vec![-0.013, -1e-5]]).unwrap();
        let off = fs.offsets(10);
        assert_abs_diff_eq!(off[0], 0.02, epsilon = 1e-15);
        assert_abs_diff_eq!(off[2], -0.013 - 1e-4, epsilon = 1e-15);
        // splitting bound enforced
        assert!(FineStructureModel::new([vec![0.2], vec![0.0], vec![0.0]]).is_err());
    }
}
