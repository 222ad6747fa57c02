//! Run configuration: plain-text (TOML) schema, validation, and translation
//! into field programs and propagation options.
//!
//! Every run is described by one config file; the `superrotor` binary and the
//! bundled example configs use this schema. Unknown keys are rejected.

use serde::Deserialize;
use std::path::{Path, PathBuf};

use crate::angular::operators::Polarization;
use crate::constants::wavenumber_to_angular;
use crate::error::{Error, Result};
use crate::fields::{
    CentrifugeSpec, FieldProgram, PulseSpec, Segment, Theta0, TrainPulses, TrainSpec,
    DEFAULT_INTENSITY_CAP,
};
use crate::molecule::{MoleculeDb, MoleculeSpec};
use crate::observables::linspace;
use crate::propagator::PropagationOptions;

/// Environment variable overriding the molecule database path.
pub const DB_ENV_VAR: &str = "SUPERROTOR_MOLECULE_DB";

fn default_calibration() -> f64 {
    1.0
}

fn default_cap() -> f64 {
    DEFAULT_INTENSITY_CAP
}

fn default_handedness() -> i8 {
    1
}

fn default_carrier() -> f64 {
    375.0
}

fn default_window() -> f64 {
    1.0
}

fn default_time_points() -> usize {
    120
}

fn default_freq_points() -> usize {
    241
}

fn default_phi_points() -> usize {
    180
}

fn default_channel() -> i32 {
    2
}

fn default_n_report() -> u32 {
    8
}

fn default_shots() -> usize {
    200
}

fn default_scan_observable() -> String {
    "populations".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    #[serde(default)]
    pub initial: Option<InitialSection>,
    #[serde(default, rename = "segment")]
    pub segments: Vec<SegmentSection>,
    #[serde(default)]
    pub propagation: Option<PropagationSection>,
    #[serde(default)]
    pub observables: ObservablesSection,
    #[serde(default)]
    pub mixture: Option<MixtureSection>,
    #[serde(default)]
    pub scan: Option<ScanSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub molecule: String,
    pub n_max: u32,
    /// Ensemble temperature, K (0 = single lowest allowed state when
    /// `initial` is thermal).
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub seed: u64,
    /// Field-strength calibration factor (see the kick-strength convention).
    #[serde(default = "default_calibration")]
    pub calibration: f64,
    /// Peak-intensity warning threshold, W/cm².
    #[serde(default = "default_cap")]
    pub intensity_cap: f64,
    /// Molecule database path; falls back to the SUPERROTOR_MOLECULE_DB
    /// environment variable, then to the bundled database.
    #[serde(default)]
    pub molecule_db: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSection {
    /// Boltzmann ensemble at the run temperature (the default).
    Thermal,
    /// Lowest spin-allowed level, stretched M = N.
    Ground,
    Eigenstate {
        n: u32,
        m: i32,
    },
    /// Gaussian packet over stretched states, as released by a centrifuge.
    Packet {
        center: u32,
        sigma: f64,
        #[serde(default)]
        phase_ps: f64,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SegmentSection {
    Kick {
        /// Explicit kick strength P; alternatively give fwhm_fs + intensity.
        strength: Option<f64>,
        fwhm_fs: Option<f64>,
        intensity: Option<f64>,
        #[serde(default)]
        angle_deg: f64,
        /// "plane" (default) or "z".
        axis: Option<String>,
    },
    Train {
        count: u32,
        period_ps: f64,
        #[serde(default)]
        angle_step_deg: f64,
        strength: Option<f64>,
        fwhm_fs: Option<f64>,
        intensity: Option<f64>,
        #[serde(default)]
        angle0_deg: f64,
    },
    Free {
        duration_ps: f64,
    },
    Centrifuge {
        duration_ps: f64,
        beta: f64,
        intensity: f64,
        #[serde(default)]
        ramp_ps: Option<f64>,
        /// Fixed angle in rad, or the string "random".
        #[serde(default)]
        theta0: Option<toml::Value>,
        omega_max: Option<f64>,
        /// Resolve omega_max from the rotational resonance of this N.
        omega_max_resonance_n: Option<u32>,
    },
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PropagationSection {
    pub snapshot_free_ps: Option<f64>,
    pub snapshot_centrifuge_ps: Option<f64>,
    pub store_snapshots: Option<bool>,
    pub richardson: Option<bool>,
    pub richardson_tol: Option<f64>,
    pub steps_per_period: Option<f64>,
    pub truncation_limit: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ObservablesSection {
    /// Write initial/final populations.
    #[serde(default)]
    pub populations: bool,
    /// Write the per-record summary trace (norm, energy, ⟨J_z⟩).
    #[serde(default)]
    pub records: bool,
    #[serde(default)]
    pub raman: Option<RamanSection>,
    #[serde(default)]
    pub angular_density: Option<AngularDensitySection>,
    #[serde(default)]
    pub revival: Option<RevivalSection>,
    #[serde(default)]
    pub composition: Option<CompositionSection>,
    #[serde(default)]
    pub field_spectrogram: Option<FieldSpectrogramSection>,
    #[serde(default)]
    pub orientation: Option<OrientationSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridRange {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl GridRange {
    pub fn to_vec(&self) -> Vec<f64> {
        linspace(self.start, self.stop, self.points)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RamanSection {
    pub probe_fwhm: f64,
    #[serde(default = "default_handedness")]
    pub handedness: i8,
    pub delays: GridRange,
    pub shift_min: f64,
    pub shift_max: f64,
    pub shift_points: usize,
    #[serde(default)]
    pub fine_structure: bool,
    #[serde(default)]
    pub write_amplitude: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AngularDensitySection {
    #[serde(default = "default_phi_points")]
    pub phi_points: usize,
    /// Keep only snapshots at t >= from_ps (e.g. after the release).
    #[serde(default)]
    pub from_ps: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RevivalSection {
    /// Coherence ΔM channel: −2, 0, or +2.
    #[serde(default = "default_channel")]
    pub channel: i32,
    pub expected_period_ps: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositionSection {
    pub probe_fwhm: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpectrogramSection {
    #[serde(default = "default_carrier")]
    pub carrier_thz: f64,
    #[serde(default = "default_window")]
    pub window_ps: f64,
    #[serde(default = "default_time_points")]
    pub time_points: usize,
    #[serde(default = "default_freq_points")]
    pub freq_points: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrientationSection {
    #[serde(default = "default_shots")]
    pub shots: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSection {
    pub components: Vec<MixtureComponentSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponentSection {
    pub molecule: String,
    pub fraction: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    /// train_period | train_angle_step | omega_max | probe_fwhm
    pub parameter: String,
    pub start: f64,
    pub stop: f64,
    pub points: usize,
    /// populations | directionality | composition
    #[serde(default = "default_scan_observable")]
    pub observable: String,
    #[serde(default = "default_n_report")]
    pub n_report: u32,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("{e}")))?;
        cfg.validate_schema()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::parse(&text)
    }

    /// Structural checks beyond serde: value ranges and cross-field rules.
    pub fn validate_schema(&self) -> Result<()> {
        let r = &self.run;
        if r.n_max < 2 {
            return Err(Error::Config("run.n_max must be >= 2".into()));
        }
        if r.temperature < 0.0 {
            return Err(Error::Config("run.temperature must be >= 0".into()));
        }
        if r.calibration <= 0.0 {
            return Err(Error::Config("run.calibration must be > 0".into()));
        }
        for (i, seg) in self.segments.iter().enumerate() {
            match seg {
                SegmentSection::Kick {
                    strength,
                    fwhm_fs,
                    intensity,
                    axis,
                    ..
                } => {
                    let explicit = strength.is_some();
                    let physical = fwhm_fs.is_some() && intensity.is_some();
                    if explicit && physical {
                        return Err(Error::Config(format!(
                            "segment {i}: give either strength or fwhm_fs+intensity, not both"
                        )));
                    }
                    if !explicit && !physical {
                        return Err(Error::Config(format!(
                            "segment {i}: kick needs strength or fwhm_fs+intensity"
                        )));
                    }
                    if let Some(ax) = axis {
                        if ax != "plane" && ax != "z" {
                            return Err(Error::Config(format!(
                                "segment {i}: axis must be \"plane\" or \"z\""
                            )));
                        }
                    }
                }
                SegmentSection::Train {
                    count,
                    strength,
                    fwhm_fs,
                    intensity,
                    ..
                } => {
                    if *count < 1 {
                        return Err(Error::Config(format!("segment {i}: train count >= 1")));
                    }
                    let explicit = strength.is_some();
                    let physical = fwhm_fs.is_some() && intensity.is_some();
                    if explicit == physical {
                        return Err(Error::Config(format!(
                            "segment {i}: train needs strength or fwhm_fs+intensity (not both)"
                        )));
                    }
                }
                SegmentSection::Free { duration_ps } => {
                    if *duration_ps < 0.0 {
                        return Err(Error::Config(format!(
                            "segment {i}: free duration must be >= 0"
                        )));
                    }
                }
                SegmentSection::Centrifuge {
                    theta0,
                    omega_max,
                    omega_max_resonance_n,
                    ..
                } => {
                    if let Some(v) = theta0 {
                        let ok = v.as_float().is_some()
                            || v.as_integer().is_some()
                            || v.as_str() == Some("random");
                        if !ok {
                            return Err(Error::Config(format!(
                                "segment {i}: theta0 must be a number or \"random\""
                            )));
                        }
                    }
                    if omega_max.is_some() && omega_max_resonance_n.is_some() {
                        return Err(Error::Config(format!(
                            "segment {i}: omega_max and omega_max_resonance_n are exclusive"
                        )));
                    }
                }
            }
        }
        if let Some(sc) = &self.scan {
            if !["train_period", "train_angle_step", "omega_max", "probe_fwhm"]
                .contains(&sc.parameter.as_str())
            {
                return Err(Error::Config(format!(
                    "scan.parameter '{}' unknown (train_period | train_angle_step | omega_max | probe_fwhm)",
                    sc.parameter
                )));
            }
            if !["populations", "directionality", "composition"]
                .contains(&sc.observable.as_str())
            {
                return Err(Error::Config(format!(
                    "scan.observable '{}' unknown (populations | directionality | composition)",
                    sc.observable
                )));
            }
            if sc.points == 0 {
                return Err(Error::Config("scan.points must be >= 1".into()));
            }
            if sc.observable == "composition" && self.observables.composition.is_none() {
                return Err(Error::Config(
                    "scan.observable = composition needs [observables.composition]".into(),
                ));
            }
        }
        if let Some(mx) = &self.mixture {
            if mx.components.is_empty() {
                return Err(Error::Config("mixture.components must not be empty".into()));
            }
            let total: f64 = mx.components.iter().map(|c| c.fraction).sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!(
                    "mixture fractions sum to {total}, expected 1"
                )));
            }
            if self.observables.raman.is_none() {
                return Err(Error::Config(
                    "a mixture run needs [observables.raman]".into(),
                ));
            }
            if matches!(self.initial, None | Some(InitialSection::Thermal)) {
                return Err(Error::Config(
                    "mixture runs need a single-state initial (ground, eigenstate, or packet)"
                        .into(),
                ));
            }
        }
        if let Some(rv) = &self.observables.revival {
            if ![-2, 0, 2].contains(&rv.channel) {
                return Err(Error::Config("revival.channel must be -2, 0, or +2".into()));
            }
            if !(rv.expected_period_ps > 0.0) {
                return Err(Error::Config("revival.expected_period_ps must be > 0".into()));
            }
        }
        Ok(())
    }

    /// Load the molecule database with the configured/env/bundled fallback.
    pub fn load_db(&self) -> Result<MoleculeDb> {
        if let Some(path) = &self.run.molecule_db {
            return MoleculeDb::load(path);
        }
        if let Ok(path) = std::env::var(DB_ENV_VAR) {
            return MoleculeDb::load(path);
        }
        Ok(MoleculeDb::builtin())
    }

    /// Translate the segment list into a field program for one molecule.
    pub fn build_program(&self, molecule: &MoleculeSpec) -> Result<FieldProgram> {
        let cal = self.run.calibration;
        let mut segments = Vec::new();
        for seg in &self.segments {
            match seg {
                SegmentSection::Kick {
                    strength,
                    fwhm_fs,
                    intensity,
                    angle_deg,
                    axis,
                } => {
                    let pol = match axis.as_deref() {
                        Some("z") => Polarization::LabZ,
                        _ => Polarization::InPlane {
                            phi: angle_deg.to_radians(),
                        },
                    };
                    let (p, pulse) = match strength {
                        Some(p) => (*p, None),
                        None => {
                            let pulse = PulseSpec {
                                t_center: 0.0,
                                fwhm_fs: fwhm_fs.expect("validated"),
                                intensity: intensity.expect("validated"),
                                angle: angle_deg.to_radians(),
                            };
                            (
                                crate::fields::kick_strength(&pulse, molecule.delta_alpha, cal),
                                Some(pulse),
                            )
                        }
                    };
                    segments.push(Segment::Kick {
                        strength: p,
                        pol,
                        pulse,
                    });
                }
                SegmentSection::Train {
                    count,
                    period_ps,
                    angle_step_deg,
                    strength,
                    fwhm_fs,
                    intensity,
                    angle0_deg,
                } => {
                    if let Some(p) = strength {
                        // explicit per-pulse strength: expand by hand
                        for k in 0..*count {
                            if k > 0 {
                                segments.push(Segment::Free {
                                    duration: *period_ps,
                                });
                            }
                            segments.push(Segment::Kick {
                                strength: *p,
                                pol: Polarization::InPlane {
                                    phi: (angle0_deg + k as f64 * angle_step_deg).to_radians(),
                                },
                                pulse: None,
                            });
                        }
                    } else {
                        let train = TrainSpec {
                            count: *count,
                            period: *period_ps,
                            angle_step: angle_step_deg.to_radians(),
                            pulses: TrainPulses::Template(PulseSpec {
                                t_center: 0.0,
                                fwhm_fs: fwhm_fs.expect("validated"),
                                intensity: intensity.expect("validated"),
                                angle: angle0_deg.to_radians(),
                            }),
                        };
                        let sub = FieldProgram::from_train(&train, molecule, cal)?;
                        segments.extend(sub.segments);
                    }
                }
                SegmentSection::Free { duration_ps } => {
                    segments.push(Segment::Free {
                        duration: *duration_ps,
                    });
                }
                SegmentSection::Centrifuge {
                    duration_ps,
                    beta,
                    intensity,
                    ramp_ps,
                    theta0,
                    omega_max,
                    omega_max_resonance_n,
                } => {
                    let theta0 = match theta0 {
                        None => Theta0::Fixed(0.0),
                        Some(v) => {
                            if let Some(x) = v.as_float() {
                                Theta0::Fixed(x)
                            } else if let Some(x) = v.as_integer() {
                                Theta0::Fixed(x as f64)
                            } else {
                                Theta0::Random
                            }
                        }
                    };
                    let omega_max = match (omega_max, omega_max_resonance_n) {
                        (Some(v), None) => Some(*v),
                        (None, Some(n)) => Some(wavenumber_to_angular(
                            (molecule.energy(n + 1) - molecule.energy(n - 1)) / 2.0,
                        )),
                        (None, None) => None,
                        _ => unreachable!("validated"),
                    };
                    let spec = CentrifugeSpec {
                        duration: *duration_ps,
                        beta: *beta,
                        theta0,
                        intensity: *intensity,
                        ramp: ramp_ps.unwrap_or(5.0),
                        omega_max,
                    };
                    spec.validate()?;
                    segments.push(Segment::Centrifuge(spec));
                }
            }
        }
        Ok(FieldProgram { segments })
    }

    /// Propagation options merged from defaults and the [propagation] section;
    /// requesting angular densities implies stored snapshots.
    pub fn propagation_options(&self) -> PropagationOptions {
        let mut opts = PropagationOptions {
            calibration: self.run.calibration,
            ..PropagationOptions::default()
        };
        if let Some(p) = &self.propagation {
            if let Some(v) = p.snapshot_free_ps {
                opts.snapshot_free = v;
            }
            if let Some(v) = p.snapshot_centrifuge_ps {
                opts.snapshot_centrifuge = v;
            }
            if let Some(v) = p.store_snapshots {
                opts.store_snapshots = v;
            }
            if let Some(v) = p.richardson {
                opts.richardson = v;
            }
            if let Some(v) = p.richardson_tol {
                opts.richardson_tol = v;
            }
            if let Some(v) = p.steps_per_period {
                opts.steps_per_period = v;
            }
            if let Some(v) = p.truncation_limit {
                opts.truncation_limit = v;
            }
        }
        if self.observables.angular_density.is_some() {
            opts.store_snapshots = true;
        }
        opts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[run]
molecule = "N2"
n_max = 24
"#;

    #[test]
    fn minimal_config_parses() {
        let cfg = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.run.molecule, "N2");
        assert_eq!(cfg.run.seed, 0);
        assert_eq!(cfg.run.calibration, 1.0);
        assert!(cfg.segments.is_empty());
        let db = cfg.load_db().unwrap();
        let mol = db.get("N2").unwrap();
        let prog = cfg.build_program(mol).unwrap();
        assert!(prog.segments.is_empty());
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = format!("{MINIMAL}\nnot_a_key = 3\n");
        assert!(RunConfig::parse(&bad).is_err());
        let bad = "[run]\nmolecule = \"N2\"\nn_max = 24\nwrong = 1\n";
        assert!(RunConfig::parse(bad).is_err());
    }

    #[test]
    fn kick_needs_one_strength_source() {
        let bad = format!(
            "{MINIMAL}\n[[segment]]\nkind = \"kick\"\nstrength = 1.0\nfwhm_fs = 100.0\nintensity = 1e12\n"
        );
        assert!(RunConfig::parse(&bad).is_err());
        let bad = format!("{MINIMAL}\n[[segment]]\nkind = \"kick\"\n");
        assert!(RunConfig::parse(&bad).is_err());
        let ok = format!("{MINIMAL}\n[[segment]]\nkind = \"kick\"\nstrength = 1.0\naxis = \"z\"\n");
        let cfg = RunConfig::parse(&ok).unwrap();
        let db = cfg.load_db().unwrap();
        let prog = cfg.build_program(db.get("N2").unwrap()).unwrap();
        assert!(matches!(
            prog.segments[0],
            Segment::Kick {
                pol: Polarization::LabZ,
                ..
            }
        ));
    }

    #[test]
    fn centrifuge_resonance_resolution() {
        let text = format!(
            "{MINIMAL}\n[[segment]]\nkind = \"centrifuge\"\nduration_ps = 50.0\nbeta = 0.6\nintensity = 1e13\nomega_max_resonance_n = 10\ntheta0 = \"random\"\n"
        );
        let cfg = RunConfig::parse(&text).unwrap();
        let db = cfg.load_db().unwrap();
        let mol = db.get("N2").unwrap();
        let prog = cfg.build_program(mol).unwrap();
        match &prog.segments[0] {
            Segment::Centrifuge(c) => {
                let expect =
                    wavenumber_to_angular((mol.energy(11) - mol.energy(9)) / 2.0);
                assert_eq!(c.omega_max, Some(expect));
                assert_eq!(c.theta0, Theta0::Random);
            }
            other => panic!("unexpected segment {other:?}"),
        }
    }

    #[test]
    fn scan_parameter_whitelist() {
        let ok = format!(
            "{MINIMAL}\n[scan]\nparameter = \"train_period\"\nstart = 7.0\nstop = 9.0\npoints = 5\n"
        );
        RunConfig::parse(&ok).unwrap();
        let bad = format!(
            "{MINIMAL}\n[scan]\nparameter = \"zeta\"\nstart = 0.0\nstop = 1.0\npoints = 5\n"
        );
        assert!(RunConfig::parse(&bad).is_err());
    }

    #[test]
    fn mixture_needs_raman_and_fractions() {
        let base = format!(
            "{MINIMAL}\n[initial]\nkind = \"ground\"\n\n[mixture]\ncomponents = [{{ molecule = \"O2\", fraction = 0.5 }}, {{ molecule = \"N2\", fraction = 0.5 }}]\n"
        );
        assert!(RunConfig::parse(&base).is_err()); // no raman section
        let with_raman = format!(
            "{base}\n[observables.raman]\nprobe_fwhm = 1.0\ndelays = {{ start = 0.0, stop = 10.0, points = 11 }}\nshift_min = -100.0\nshift_max = 100.0\nshift_points = 201\n"
        );
        RunConfig::parse(&with_raman).unwrap();
        let bad_fracs = with_raman.replace("fraction = 0.5 }]", "fraction = 0.6 }]");
        assert!(RunConfig::parse(&bad_fracs).is_err());
    }

    #[test]
    fn propagation_overrides_apply() {
        let text = format!(
            "{MINIMAL}\n[propagation]\nrichardson = false\nsteps_per_period = 80.0\n\n[observables.angular_density]\nphi_points = 64\n"
        );
        let cfg = RunConfig::parse(&text).unwrap();
        let opts = cfg.propagation_options();
        assert!(!opts.richardson);
        assert_eq!(opts.steps_per_period, 80.0);
        assert!(opts.store_snapshots); // implied by angular_density
    }
}
