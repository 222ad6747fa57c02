//! Declarative excitation programs: single pulses, (chiral) pulse trains, and
//! the optical centrifuge, plus field-level diagnostics.
//!
//! Kick strengths use the envelope-field convention I = ½ε₀cE² with Gaussian
//! intensity FWHM. The published value P = 3.6 for a 120 fs, 10¹³ W/cm² pulse
//! on Δα = 0.7 Å³ corresponds to a different (unstated) field convention about
//! a factor 2 away; the `calibration` factor passed to the kick builders
//! (default 1) absorbs the difference when exact matching is wanted.

use num_complex::Complex64 as C64;
use std::f64::consts::{PI, TAU};

use crate::angular::operators::Polarization;
use crate::constants::{trap_coupling, GAUSSIAN_FWHM_INTEGRAL};
use crate::error::{Error, Result};
use crate::molecule::MoleculeSpec;

/// Default peak-intensity cap (W/cm²); exceeding it warns about ionization.
pub const DEFAULT_INTENSITY_CAP: f64 = 1e13;

/// A pulse is treated as an instantaneous kick only when its FWHM is below
/// T_rev / IMPULSIVE_FRACTION.
pub const IMPULSIVE_FRACTION: f64 = 100.0;

/// One linearly polarized Gaussian pulse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseSpec {
    /// Center time, ps.
    pub t_center: f64,
    /// Intensity FWHM, fs.
    pub fwhm_fs: f64,
    /// Peak intensity, W/cm².
    pub intensity: f64,
    /// In-plane polarization angle, rad.
    pub angle: f64,
}

impl PulseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.fwhm_fs > 0.0) {
            return Err(Error::Program("pulse FWHM must be > 0".into()));
        }
        if self.intensity < 0.0 {
            return Err(Error::Program("pulse intensity must be >= 0".into()));
        }
        Ok(())
    }

    /// True when the pulse qualifies as an instantaneous kick for a molecule
    /// with revival time `t_rev` (ps).
    pub fn is_impulsive(&self, t_rev: f64) -> bool {
        self.fwhm_fs * 1e-3 < t_rev / IMPULSIVE_FRACTION
    }
}

/// Dimensionless kick strength P = (Δα/4ħ)∫E²(t)dt of a pulse, for a
/// polarizability anisotropy in Å³. Linear in peak intensity and FWHM.
pub fn kick_strength(pulse: &PulseSpec, delta_alpha: f64, calibration: f64) -> f64 {
    // peak coupling (rad/ps) times the Gaussian intensity-envelope integral (ps)
    let peak = trap_coupling(delta_alpha, pulse.intensity);
    peak * pulse.fwhm_fs * 1e-3 * GAUSSIAN_FWHM_INTEGRAL * calibration
}

/// Pulse train: either a template repeated on a regular grid of times and
/// polarization angles, or an explicit pulse list.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainPulses {
    Template(PulseSpec),
    Explicit(Vec<PulseSpec>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSpec {
    pub count: u32,
    /// Pulse-to-pulse period τ, ps.
    pub period: f64,
    /// Per-pulse polarization step δ, rad.
    pub angle_step: f64,
    pub pulses: TrainPulses,
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.count < 1 {
            return Err(Error::Program("train must contain at least one pulse".into()));
        }
        let fwhm = match &self.pulses {
            TrainPulses::Template(p) => {
                p.validate()?;
                p.fwhm_fs
            }
            TrainPulses::Explicit(list) => {
                if list.len() != self.count as usize {
                    return Err(Error::Program(format!(
                        "explicit pulse list has {} entries for count {}",
                        list.len(),
                        self.count
                    )));
                }
                let mut max = 0.0f64;
                for p in list {
                    p.validate()?;
                    max = max.max(p.fwhm_fs);
                }
                max
            }
        };
        if self.count > 1 && self.period <= fwhm * 1e-3 {
            return Err(Error::Program(format!(
                "train period {} ps must exceed the pulse FWHM {} ps",
                self.period,
                fwhm * 1e-3
            )));
        }
        Ok(())
    }
}

/// One resolved kick of a train: time, polarization angle, kick strength.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KickEvent {
    pub t: f64,
    pub angle: f64,
    pub strength: f64,
}

/// Resolve a train into its kick sequence: times t₀+nτ, angles φ₀+nδ,
/// strengths from [`kick_strength`].
pub fn train_kicks(train: &TrainSpec, delta_alpha: f64, calibration: f64) -> Result<Vec<KickEvent>> {
    train.validate()?;
    Ok(match &train.pulses {
        TrainPulses::Template(p) => (0..train.count)
            .map(|n| KickEvent {
                t: p.t_center + n as f64 * train.period,
                angle: p.angle + n as f64 * train.angle_step,
                strength: kick_strength(p, delta_alpha, calibration),
            })
            .collect(),
        TrainPulses::Explicit(list) => list
            .iter()
            .enumerate()
            .map(|(n, p)| KickEvent {
                t: p.t_center + n as f64 * train.period,
                angle: p.angle + n as f64 * train.angle_step,
                strength: kick_strength(p, delta_alpha, calibration),
            })
            .collect(),
    })
}

/// Initial orientation of the centrifuge polarization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Theta0 {
    Fixed(f64),
    /// Uniform over [0, π), drawn per shot from the run's seeded generator.
    Random,
}

/// Optical-centrifuge field: linear polarization rotating with Ω(t) = βt,
/// optionally clamped at a terminal frequency Ω_max (spectral truncation).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CentrifugeSpec {
    /// Total duration T_c, ps.
    pub duration: f64,
    /// Angular acceleration β, rad/ps².
    pub beta: f64,
    pub theta0: Theta0,
    /// Peak intensity, W/cm².
    pub intensity: f64,
    /// Linear turn-on/turn-off ramp length, ps.
    pub ramp: f64,
    /// Terminal rotation frequency, rad/ps.
    pub omega_max: Option<f64>,
}

impl CentrifugeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.beta < 0.0 {
            return Err(Error::Program("centrifuge beta must be >= 0".into()));
        }
        if !(self.duration > 0.0) {
            return Err(Error::Program("centrifuge duration must be > 0".into()));
        }
        if self.intensity < 0.0 {
            return Err(Error::Program("centrifuge intensity must be >= 0".into()));
        }
        if self.ramp < 0.0 || 2.0 * self.ramp > self.duration {
            return Err(Error::Program(
                "centrifuge ramps must be >= 0 and fit inside the duration".into(),
            ));
        }
        if let Some(om) = self.omega_max {
            if om < 0.0 {
                return Err(Error::Program("omega_max must be >= 0".into()));
            }
        }
        Ok(())
    }

    /// Instantaneous rotation frequency Ω(t), rad/ps.
    pub fn omega(&self, t: f64) -> f64 {
        let om = self.beta * t;
        match self.omega_max {
            Some(cap) => om.min(cap),
            None => om,
        }
    }

    /// Accumulated polarization angle relative to Θ₀ (∫Ω dt).
    pub fn angle_from_start(&self, t: f64) -> f64 {
        match self.omega_max {
            Some(cap) if self.beta > 0.0 && t > cap / self.beta => {
                let ts = cap / self.beta;
                0.5 * self.beta * ts * ts + cap * (t - ts)
            }
            _ => 0.5 * self.beta * t * t,
        }
    }

    /// Polarization angle and instantaneous frequency at time t within the
    /// pulse, for a resolved initial orientation.
    pub fn angle(&self, t: f64, theta0: f64) -> Result<(f64, f64)> {
        if !(0.0..=self.duration).contains(&t) {
            return Err(Error::Program(format!(
                "t = {t} ps outside centrifuge segment [0, {}]",
                self.duration
            )));
        }
        Ok((theta0 + self.angle_from_start(t), self.omega(t)))
    }

    /// Intensity envelope in [0, 1]: linear ramps at both ends, flat top.
    pub fn envelope(&self, t: f64) -> f64 {
        if t < 0.0 || t > self.duration {
            return 0.0;
        }
        if self.ramp == 0.0 {
            return 1.0;
        }
        if t < self.ramp {
            t / self.ramp
        } else if t > self.duration - self.ramp {
            (self.duration - t) / self.ramp
        } else {
            1.0
        }
    }

    /// Peak polarizability coupling ¼ΔαE²/ħ (rad/ps) at the envelope top.
    pub fn peak_coupling(&self, delta_alpha: f64, calibration: f64) -> f64 {
        trap_coupling(delta_alpha, self.intensity) * calibration
    }
}

/// One element of an excitation sequence.
#[derive(Debug, Clone, PartialEq)]
pub enum Segment {
    /// Instantaneous kick; `pulse` retains the generating pulse when known.
    Kick {
        strength: f64,
        pol: Polarization,
        pulse: Option<PulseSpec>,
    },
    Free { duration: f64 },
    Centrifuge(CentrifugeSpec),
}

impl Segment {
    pub fn duration(&self) -> f64 {
        match self {
            Segment::Kick { .. } => 0.0,
            Segment::Free { duration } => *duration,
            Segment::Centrifuge(c) => c.duration,
        }
    }
}

/// Severity of a program validation finding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Warning,
    Violation,
}

#[derive(Debug, Clone)]
pub struct Finding {
    pub severity: Severity,
    pub message: String,
}

/// Ordered, non-overlapping excitation sequence.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FieldProgram {
    pub segments: Vec<Segment>,
}

impl FieldProgram {
    pub fn empty() -> Self {
        FieldProgram::default()
    }

    /// A single bare in-plane kick of known strength.
    pub fn single_kick(strength: f64, angle: f64) -> Self {
        FieldProgram {
            segments: vec![Segment::Kick {
                strength,
                pol: Polarization::InPlane { phi: angle },
                pulse: None,
            }],
        }
    }

    /// A single bare kick polarized along the lab z axis.
    pub fn single_kick_z(strength: f64) -> Self {
        FieldProgram {
            segments: vec![Segment::Kick {
                strength,
                pol: Polarization::LabZ,
                pulse: None,
            }],
        }
    }

    /// A single physical pulse.
    pub fn from_pulse(pulse: PulseSpec, molecule: &MoleculeSpec, calibration: f64) -> Result<Self> {
        pulse.validate()?;
        Ok(FieldProgram {
            segments: vec![Segment::Kick {
                strength: kick_strength(&pulse, molecule.delta_alpha, calibration),
                pol: Polarization::InPlane { phi: pulse.angle },
                pulse: Some(pulse),
            }],
        })
    }

    /// Kick sequence from a train: kicks separated by free intervals of the
    /// train period.
    pub fn from_train(train: &TrainSpec, molecule: &MoleculeSpec, calibration: f64) -> Result<Self> {
        let kicks = train_kicks(train, molecule.delta_alpha, calibration)?;
        let mut segments = Vec::new();
        for (i, k) in kicks.iter().enumerate() {
            if i > 0 {
                let dt = k.t - kicks[i - 1].t;
                if dt <= 0.0 {
                    return Err(Error::Program("train kicks must be time-ordered".into()));
                }
                segments.push(Segment::Free { duration: dt });
            }
            let pulse = match &train.pulses {
                TrainPulses::Template(p) => *p,
                TrainPulses::Explicit(list) => list[i],
            };
            segments.push(Segment::Kick {
                strength: k.strength,
                pol: Polarization::InPlane { phi: k.angle },
                pulse: Some(pulse),
            });
        }
        Ok(FieldProgram { segments })
    }

    pub fn from_centrifuge(spec: CentrifugeSpec) -> Result<Self> {
        spec.validate()?;
        Ok(FieldProgram {
            segments: vec![Segment::Centrifuge(spec)],
        })
    }

    /// Append a free-evolution tail.
    pub fn then_free(mut self, duration: f64) -> Self {
        self.segments.push(Segment::Free { duration });
        self
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(Segment::duration).sum()
    }

    pub fn contains_random_theta0(&self) -> bool {
        self.segments.iter().any(|s| {
            matches!(
                s,
                Segment::Centrifuge(CentrifugeSpec {
                    theta0: Theta0::Random,
                    ..
                })
            )
        })
    }

    /// Physics checks against a molecule: intensity caps (warning), impulsive
    /// validity of every kick (violation), basic segment sanity (violation).
    pub fn check(&self, molecule: &MoleculeSpec, intensity_cap: f64) -> Vec<Finding> {
        let mut findings = Vec::new();
        let t_rev = molecule.revival_time();
        for (i, seg) in self.segments.iter().enumerate() {
            match seg {
                Segment::Kick { pulse, .. } => {
                    if let Some(p) = pulse {
                        if p.intensity > intensity_cap {
                            findings.push(Finding {
                                severity: Severity::Warning,
                                message: format!(
                                    "segment {i}: peak intensity {:.3e} W/cm^2 exceeds the cap {intensity_cap:.1e} (ionization risk)",
                                    p.intensity
                                ),
                            });
                        }
                        if !p.is_impulsive(t_rev) {
                            findings.push(Finding {
                                severity: Severity::Violation,
                                message: format!(
                                    "segment {i}: pulse FWHM {} fs is not impulsive for T_rev = {t_rev:.3} ps (limit T_rev/{IMPULSIVE_FRACTION})",
                                    p.fwhm_fs
                                ),
                            });
                        }
                    }
                }
                Segment::Free { duration } => {
                    if *duration < 0.0 {
                        findings.push(Finding {
                            severity: Severity::Violation,
                            message: format!("segment {i}: negative free duration"),
                        });
                    }
                }
                Segment::Centrifuge(c) => {
                    if let Err(e) = c.validate() {
                        findings.push(Finding {
                            severity: Severity::Violation,
                            message: format!("segment {i}: {e}"),
                        });
                    }
                    if c.intensity > intensity_cap {
                        findings.push(Finding {
                            severity: Severity::Warning,
                            message: format!(
                                "segment {i}: centrifuge intensity {:.3e} W/cm^2 exceeds the cap {intensity_cap:.1e}",
                                c.intensity
                            ),
                        });
                    }
                }
            }
        }
        findings
    }
}

/// Time-frequency spectrogram of the centrifuge field.
#[derive(Debug, Clone)]
pub struct FieldSpectrogram {
    /// Window-center times, ps.
    pub times: Vec<f64>,
    /// Absolute frequencies, THz.
    pub freqs: Vec<f64>,
    /// Row-major |STFT|², times × freqs.
    pub intensity: Vec<f64>,
    pub carrier: f64,
}

/// Short-time Fourier spectrogram of the two-arm centrifuge field around a
/// carrier (THz), Gaussian analysis window of FWHM `window` (ps). The two
/// chirped arms appear at carrier ± Ω(t)/2π.
pub fn field_spectrogram(
    cfg: &CentrifugeSpec,
    carrier: f64,
    window: f64,
    n_times: usize,
    n_freqs: usize,
) -> Result<FieldSpectrogram> {
    cfg.validate()?;
    if !(window > 0.0) {
        return Err(Error::Program("spectrogram window must be > 0".into()));
    }
    let om_end = cfg.omega(cfg.duration);
    let f_span = (om_end / TAU) * 1.15 + 1.0 / window;
    // demodulated analytic signal: arms at ±Ω(t)/2π around the carrier
    let sample_dt = 1.0 / (8.0 * f_span);
    let n_samp = (cfg.duration / sample_dt).ceil() as usize + 1;
    let samples: Vec<C64> = (0..n_samp)
        .map(|k| {
            let t = k as f64 * sample_dt;
            let env = cfg.envelope(t);
            let phase = cfg.angle_from_start(t);
            (C64::from_polar(1.0, phase) + C64::from_polar(1.0, -phase)) * (0.5 * env)
        })
        .collect();

    let times: Vec<f64> = (0..n_times)
        .map(|i| cfg.duration * (i as f64 + 0.5) / n_times as f64)
        .collect();
    let freqs: Vec<f64> = (0..n_freqs)
        .map(|i| carrier - f_span + 2.0 * f_span * i as f64 / (n_freqs - 1) as f64)
        .collect();

    let sigma = window / (8.0 * 2.0_f64.ln()).sqrt(); // amplitude-window sigma from FWHM
    let half_support = (4.0 * sigma / sample_dt).ceil() as i64;
    let mut intensity = vec![0.0; n_times * n_freqs];
    for (it, &t0) in times.iter().enumerate() {
        let k0 = (t0 / sample_dt).round() as i64;
        for (jf, &f) in freqs.iter().enumerate() {
            let fd = f - carrier;
            let mut acc = C64::new(0.0, 0.0);
            for k in (k0 - half_support).max(0)..=(k0 + half_support).min(n_samp as i64 - 1) {
                let t = k as f64 * sample_dt;
                let w = (-(t - t0) * (t - t0) / (2.0 * sigma * sigma)).exp();
                acc += samples[k as usize] * w * C64::from_polar(1.0, -TAU * fd * t);
            }
            intensity[it * n_freqs + jf] = (acc * sample_dt).norm_sqr();
        }
    }
    Ok(FieldSpectrogram {
        times,
        freqs,
        intensity,
        carrier,
    })
}

impl FieldSpectrogram {
    /// Least-squares slopes (THz/ps) of the upper and lower traces, from
    /// intensity-weighted frequency centroids above/below the carrier.
    /// Window centers within `skip` ps of the ends are ignored.
    pub fn trace_slopes(&self, skip: f64) -> (f64, f64) {
        let fit = |upper: bool| -> f64 {
            let mut pts = Vec::new();
            let t_end = self.times.last().copied().unwrap_or(0.0) + self.times[0];
            for (it, &t) in self.times.iter().enumerate() {
                if t < skip || t > t_end - skip {
                    continue;
                }
                let mut wsum = 0.0;
                let mut fsum = 0.0;
                for (jf, &f) in self.freqs.iter().enumerate() {
                    let keep = if upper { f >= self.carrier } else { f <= self.carrier };
                    if keep {
                        let w = self.intensity[it * self.freqs.len() + jf];
                        wsum += w;
                        fsum += w * f;
                    }
                }
                if wsum > 0.0 {
                    pts.push((t, fsum / wsum));
                }
            }
            // simple least squares
            let n = pts.len() as f64;
            let sx: f64 = pts.iter().map(|p| p.0).sum();
            let sy: f64 = pts.iter().map(|p| p.1).sum();
            let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
            let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
            (n * sxy - sx * sy) / (n * sxx - sx * sx)
        };
        (fit(true), fit(false))
    }
}

/// Per-shot orientation diagnostics from the two orthogonal field projections.
#[derive(Debug, Clone)]
pub struct OrientationStats {
    /// (|E_x|², |E_y|²) ∝ (cos²Θ, sin²Θ) per shot, normalized to x + y = 1.
    pub points: Vec<(f64, f64)>,
    /// Per-shot angle estimate, folded into the [0, π/2] branch.
    pub estimates: Vec<f64>,
}

/// Fold an angle into the [0, π/2] branch resolved by (cos²Θ, sin²Θ).
pub fn fold_orientation(theta: f64) -> f64 {
    let t = theta.rem_euclid(PI);
    if t > PI / 2.0 {
        PI - t
    } else {
        t
    }
}

/// Correlation of the squared field projections at a fixed probe instant, and
/// the per-shot orientation estimate Θ̂ = atan2(√y, √x) ∈ [0, π/2]. The
/// estimator recovers Θ₀ modulo the quarter-period branch: angles Θ, π−Θ,
/// Θ±π all map to the same point.
pub fn orientation_statistics(theta0_samples: &[f64]) -> Result<OrientationStats> {
    if theta0_samples.is_empty() {
        return Err(Error::Program("orientation statistics need >= 1 sample".into()));
    }
    let points: Vec<(f64, f64)> = theta0_samples
        .iter()
        .map(|&th| {
            let c = th.cos();
            let s = th.sin();
            (c * c, s * s)
        })
        .collect();
    let estimates = points
        .iter()
        .map(|&(x, y)| y.max(0.0).sqrt().atan2(x.max(0.0).sqrt()))
        .collect();
    Ok(OrientationStats { points, estimates })
}
