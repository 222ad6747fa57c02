//! Command implementations behind the thin CLI: simulate, scan, validate.
//!
//! Everything here is deterministic given (config text, seed): ensembles and
//! scans reduce in fixed order and the writers format floats identically, so
//! repeated runs produce byte-identical files.

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use crate::angular::Wavefunction;
use crate::config::{
    InitialSection, RunConfig, ScanSection, SegmentSection,
};
use crate::error::{Error, Result};
use crate::fields::{field_spectrogram, orientation_statistics, Segment, Severity};
use crate::molecule::MoleculeSpec;
use crate::observables::{
    angular_density_map, ensemble_spectrogram, linspace, mixture_spectrogram, packet_center,
    packet_span, raman_spectrogram, revival_analysis, wavepacket_composition, Composition,
    FineStructureOptions, MixtureComponent, ProbeSpec,
};
use crate::output::{config_hash, OutputFormat, OutputWriter};
use crate::propagator::{
    gaussian_stretched_packet, run_ensemble, run_program, DerivedRecord, EnsembleResult,
    KickCache, PropagationOptions, Trajectory,
};

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone)]
pub struct CliOverrides {
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    pub format: OutputFormat,
    pub quiet: bool,
}

impl Default for CliOverrides {
    fn default() -> Self {
        CliOverrides {
            seed: None,
            out_dir: PathBuf::from("out"),
            format: OutputFormat::Csv,
            quiet: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub files: Vec<String>,
}

/// Validation report: schema and physics findings, without running anything.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty() && self.warnings.is_empty()
    }

    pub fn lines(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .violations
            .iter()
            .map(|v| format!("violation: {v}"))
            .collect();
        out.extend(self.warnings.iter().map(|w| format!("warning: {w}")));
        out
    }
}

/// Schema + physics-guard report for a config; report-only, never fails.
pub fn validate(config_text: &str) -> ValidationReport {
    let mut report = ValidationReport::default();
    let cfg = match RunConfig::parse(config_text) {
        Ok(c) => c,
        Err(e) => {
            report.violations.push(format!("schema: {e}"));
            return report;
        }
    };
    let db = match cfg.load_db() {
        Ok(db) => db,
        Err(e) => {
            report.violations.push(format!("database: {e}"));
            return report;
        }
    };
    let molecule = match db.get(&cfg.run.molecule) {
        Ok(m) => m.clone(),
        Err(e) => {
            report.violations.push(format!("molecule: {e}"));
            return report;
        }
    };
    let program = match cfg.build_program(&molecule) {
        Ok(p) => p,
        Err(e) => {
            report.violations.push(format!("program: {e}"));
            return report;
        }
    };
    for f in program.check(&molecule, cfg.run.intensity_cap) {
        match f.severity {
            Severity::Violation => report.violations.push(f.message),
            Severity::Warning => report.warnings.push(f.message),
        }
    }
    // thermal truncation estimate
    if matches!(cfg.initial, None | Some(InitialSection::Thermal)) && cfg.run.temperature > 0.0 {
        if let Err(e) = molecule.thermal_populations(cfg.run.temperature, cfg.run.n_max) {
            report.violations.push(format!("thermal: {e}"));
        }
    }
    // crude basis-reach estimate: thermal top + kick ladder + centrifuge target
    let mut reach = 0u32;
    if let Ok(w) = molecule.thermal_populations(cfg.run.temperature, cfg.run.n_max) {
        reach = w.max_n();
    }
    let mut total_p = 0.0;
    for seg in &program.segments {
        match seg {
            Segment::Kick { strength, .. } => total_p += strength,
            Segment::Centrifuge(c) => {
                let omega_end = c.omega(c.duration);
                let n_res = crate::observables::n_axis_from_shift(
                    &molecule,
                    2.0 * omega_end / crate::constants::wavenumber_to_angular(1.0),
                )
                .ceil() as u32;
                reach = reach.max(n_res);
            }
            Segment::Free { .. } => {}
        }
    }
    reach += 2 * (total_p.ceil() as u32) + 8;
    if reach > cfg.run.n_max {
        report.warnings.push(format!(
            "basis reach estimate N ~ {reach} exceeds n_max = {}; expect the truncation guard",
            cfg.run.n_max
        ));
    }
    report
}

fn parse_and_prepare(
    config_text: &str,
    over: &CliOverrides,
) -> Result<(RunConfig, MoleculeSpec, OutputWriter)> {
    let mut cfg = RunConfig::parse(config_text)?;
    if let Some(seed) = over.seed {
        cfg.run.seed = seed;
    }
    let db = cfg.load_db()?;
    let molecule = db.get(&cfg.run.molecule)?.clone();
    let writer = OutputWriter::new(&over.out_dir, over.format, config_hash(config_text))?;
    Ok((cfg, molecule, writer))
}

fn guard_program(cfg: &RunConfig, molecule: &MoleculeSpec, quiet: bool) -> Result<()> {
    let program = cfg.build_program(molecule)?;
    let findings = program.check(molecule, cfg.run.intensity_cap);
    let mut violations = Vec::new();
    for f in findings {
        match f.severity {
            Severity::Violation => violations.push(f.message),
            Severity::Warning => {
                if !quiet {
                    eprintln!("warning: {}", f.message);
                }
            }
        }
    }
    if !violations.is_empty() {
        return Err(Error::Program(violations.join("; ")));
    }
    Ok(())
}

/// The initial single state described by the config (None = thermal).
fn initial_state(
    cfg: &RunConfig,
    molecule: &MoleculeSpec,
) -> Result<Option<Wavefunction>> {
    let n_max = cfg.run.n_max;
    match &cfg.initial {
        None | Some(InitialSection::Thermal) => Ok(None),
        Some(InitialSection::Ground) => {
            let n0 = molecule.lowest_allowed_n();
            Ok(Some(Wavefunction::eigenstate(n_max, n0, n0 as i32)?))
        }
        Some(InitialSection::Eigenstate { n, m }) => {
            Ok(Some(Wavefunction::eigenstate(n_max, *n, *m)?))
        }
        Some(InitialSection::Packet {
            center,
            sigma,
            phase_ps,
        }) => Ok(Some(gaussian_stretched_packet(
            molecule, n_max, *center, *sigma, *phase_ps,
        )?)),
    }
}

/// Either a single trajectory or a thermal ensemble.
enum RunResult {
    Single(Trajectory),
    Ensemble(EnsembleResult),
}

impl RunResult {
    fn final_populations(&self, n_max: u32) -> Vec<f64> {
        match self {
            RunResult::Single(t) => {
                let mut p = t.final_state.population_by_n();
                p.resize(n_max as usize + 1, 0.0);
                p
            }
            RunResult::Ensemble(e) => e.populations(e.n_records() - 1),
        }
    }

    fn records(&self) -> &[DerivedRecord] {
        match self {
            RunResult::Single(t) => &t.records,
            RunResult::Ensemble(e) => &e.members[0].trajectory.records,
        }
    }
}

fn execute(
    cfg: &RunConfig,
    molecule: &MoleculeSpec,
    opts: &PropagationOptions,
) -> Result<RunResult> {
    let program = cfg.build_program(molecule)?;
    match initial_state(cfg, molecule)? {
        Some(psi0) => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
            let theta0s = crate::propagator::resolve_theta0(&program, &mut rng);
            let cache = KickCache::new();
            let traj = run_program(&psi0, molecule, &program, &theta0s, &cache, opts)?;
            Ok(RunResult::Single(traj))
        }
        None => {
            let weights = molecule.thermal_populations(cfg.run.temperature, cfg.run.n_max)?;
            let ens = run_ensemble(
                molecule,
                &weights,
                &program,
                cfg.run.n_max,
                cfg.run.seed,
                opts,
            )?;
            Ok(RunResult::Ensemble(ens))
        }
    }
}

/// Record-density policy: ensembles default to the Raman delay spacing (or
/// endpoints) to bound memory; explicit [propagation] settings win.
fn effective_opts(cfg: &RunConfig) -> PropagationOptions {
    let mut opts = cfg.propagation_options();
    let user_set = |v: Option<f64>| v.is_some();
    let explicit_free = cfg.propagation.as_ref().is_some_and(|p| user_set(p.snapshot_free_ps));
    let explicit_cf = cfg
        .propagation
        .as_ref()
        .is_some_and(|p| user_set(p.snapshot_centrifuge_ps));
    let thermal = matches!(cfg.initial, None | Some(InitialSection::Thermal));
    if thermal {
        if let Some(raman) = &cfg.observables.raman {
            let g = &raman.delays;
            let spacing = if g.points > 1 {
                (g.stop - g.start) / (g.points as f64 - 1.0)
            } else {
                f64::INFINITY
            };
            if !explicit_free {
                opts.snapshot_free = spacing.max(opts.snapshot_free);
            }
            if !explicit_cf {
                opts.snapshot_centrifuge = spacing.max(opts.snapshot_centrifuge);
            }
        } else if !cfg.observables.records {
            if !explicit_free {
                opts.snapshot_free = f64::INFINITY;
            }
            if !explicit_cf {
                opts.snapshot_centrifuge = f64::INFINITY;
            }
        }
    }
    opts
}

/// Run a config end to end and write all requested observables.
pub fn simulate(config_text: &str, over: &CliOverrides) -> Result<RunOutcome> {
    let (cfg, molecule, mut writer) = parse_and_prepare(config_text, over)?;
    guard_program(&cfg, &molecule, over.quiet)?;
    let opts = effective_opts(&cfg);

    // field-level observables need no propagation
    write_field_observables(&cfg, &molecule, &mut writer)?;

    if let Some(mix) = &cfg.mixture {
        let db = cfg.load_db()?;
        let probe_cfg = cfg.observables.raman.as_ref().expect("validated");
        let mut components = Vec::new();
        for c in &mix.components {
            let spec = db.get(&c.molecule)?.clone();
            let mut sub = cfg.clone();
            sub.run.molecule = c.molecule.clone();
            let result = execute(&sub, &spec, &opts)?;
            let traj = match result {
                RunResult::Single(t) => t,
                RunResult::Ensemble(_) => unreachable!("mixture initial is single-state"),
            };
            components.push(MixtureComponent {
                spec,
                fraction: c.fraction,
                trajectory: traj,
            });
        }
        let probe = ProbeSpec {
            fwhm: probe_cfg.probe_fwhm,
            handedness: probe_cfg.handedness,
            delays: probe_cfg.delays.to_vec(),
        };
        let shifts = linspace(probe_cfg.shift_min, probe_cfg.shift_max, probe_cfg.shift_points);
        let fine = FineStructureOptions {
            enabled: probe_cfg.fine_structure,
            ..Default::default()
        };
        let sg = mixture_spectrogram(&components, &probe, &shifts, &fine)?;
        let meta = json!({
            "observable": "mixture_raman_spectrogram",
            "units": {"delay": "ps", "shift": "cm^-1"},
            "convention": "positive shift co-rotates with probe handedness",
            "handedness": probe_cfg.handedness,
            "probe_fwhm_cm": probe_cfg.probe_fwhm,
            "n_axis": sg.n_axis,
            "render_hint": "log-scale intensity",
            "components": mix.components.iter().map(|c| json!({"molecule": c.molecule, "fraction": c.fraction})).collect::<Vec<_>>(),
        });
        writer.write_matrix(
            "mixture_raman",
            "delay",
            &sg.delays,
            "shift",
            &sg.shifts,
            &sg.intensity,
            meta,
        )?;
        writer.finish(run_summary(&cfg))?;
        return Ok(RunOutcome {
            out_dir: over.out_dir.clone(),
            files: writer.files().to_vec(),
        });
    }

    // plain run (possibly with an empty program: thermal report only)
    let initial_pops: Vec<f64> = match initial_state(&cfg, &molecule)? {
        Some(psi) => {
            let mut p = psi.population_by_n();
            p.resize(cfg.run.n_max as usize + 1, 0.0);
            p
        }
        None => molecule
            .thermal_populations(cfg.run.temperature, cfg.run.n_max)?
            .dense(cfg.run.n_max),
    };

    let ob = &cfg.observables;
    let needs_state = ob.populations
        || ob.records
        || ob.raman.is_some()
        || ob.angular_density.is_some()
        || ob.revival.is_some()
        || ob.composition.is_some();

    if cfg.segments.is_empty() && !ob.populations {
        // nothing to propagate: write the thermal/initial report
        let ns: Vec<f64> = (0..initial_pops.len()).map(|n| n as f64).collect();
        writer.write_table(
            "thermal",
            &[("N", &ns), ("weight", &initial_pops)],
            json!({"observable": "thermal_populations", "temperature_K": cfg.run.temperature}),
        )?;
        writer.finish(run_summary(&cfg))?;
        return Ok(RunOutcome {
            out_dir: over.out_dir.clone(),
            files: writer.files().to_vec(),
        });
    }

    if !needs_state {
        // field-level observables only: no propagation
        writer.finish(run_summary(&cfg))?;
        return Ok(RunOutcome {
            out_dir: over.out_dir.clone(),
            files: writer.files().to_vec(),
        });
    }

    let result = execute(&cfg, &molecule, &opts)?;
    write_state_observables(&cfg, &molecule, &result, &initial_pops, &mut writer)?;
    writer.finish(run_summary(&cfg))?;
    Ok(RunOutcome {
        out_dir: over.out_dir.clone(),
        files: writer.files().to_vec(),
    })
}

fn run_summary(cfg: &RunConfig) -> serde_json::Value {
    json!({
        "molecule": cfg.run.molecule,
        "n_max": cfg.run.n_max,
        "temperature_K": cfg.run.temperature,
        "seed": cfg.run.seed,
        "calibration": cfg.run.calibration,
        "segments": cfg.segments.len(),
    })
}

fn write_field_observables(
    cfg: &RunConfig,
    molecule: &MoleculeSpec,
    writer: &mut OutputWriter,
) -> Result<()> {
    if let Some(fs) = &cfg.observables.field_spectrogram {
        let program = cfg.build_program(molecule)?;
        let centrifuge = program.segments.iter().find_map(|s| match s {
            Segment::Centrifuge(c) => Some(*c),
            _ => None,
        });
        let c = centrifuge.ok_or_else(|| {
            Error::Config("field_spectrogram needs a centrifuge segment".into())
        })?;
        let sp = field_spectrogram(&c, fs.carrier_thz, fs.window_ps, fs.time_points, fs.freq_points)?;
        let (up, dn) = sp.trace_slopes(2.0 * c.ramp.max(fs.window_ps));
        writer.write_matrix(
            "field_spectrogram",
            "time",
            &sp.times,
            "freq",
            &sp.freqs,
            &sp.intensity,
            json!({
                "observable": "field_spectrogram",
                "units": {"time": "ps", "freq": "THz"},
                "carrier_THz": fs.carrier_thz,
                "trace_slopes_THz_per_ps": [up, dn],
                "beta_rad_ps2": c.beta,
            }),
        )?;
    }
    if let Some(os) = &cfg.observables.orientation {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
        let samples: Vec<f64> = (0..os.shots).map(|_| rng.gen::<f64>() * PI).collect();
        let stats = orientation_statistics(&samples)?;
        let ex2: Vec<f64> = stats.points.iter().map(|p| p.0).collect();
        let ey2: Vec<f64> = stats.points.iter().map(|p| p.1).collect();
        writer.write_table(
            "orientation",
            &[
                ("theta0", &samples),
                ("ex2", &ex2),
                ("ey2", &ey2),
                ("estimate", &stats.estimates),
            ],
            json!({
                "observable": "orientation_statistics",
                "units": {"theta0": "rad"},
                "branch": "[0, pi/2]",
            }),
        )?;
    }
    Ok(())
}

fn write_state_observables(
    cfg: &RunConfig,
    molecule: &MoleculeSpec,
    result: &RunResult,
    initial_pops: &[f64],
    writer: &mut OutputWriter,
) -> Result<()> {
    let n_max = cfg.run.n_max;
    let final_pops = result.final_populations(n_max);

    if cfg.observables.populations || cfg.segments.is_empty() {
        let ns: Vec<f64> = (0..=n_max).map(|n| n as f64).collect();
        writer.write_table(
            "populations",
            &[
                ("N", &ns),
                ("initial", initial_pops),
                ("final", &final_pops),
            ],
            json!({"observable": "populations"}),
        )?;
    }

    if cfg.observables.records {
        let (times, norms, energies, jzs) = match result {
            RunResult::Single(t) => collect_records(&t.records),
            RunResult::Ensemble(e) => {
                let times: Vec<f64> = e.record_times();
                let mut norms = vec![0.0; times.len()];
                let mut energies = vec![0.0; times.len()];
                let mut jzs = vec![0.0; times.len()];
                for (k, _) in times.iter().enumerate() {
                    let pops = e.populations(k);
                    norms[k] = pops.iter().sum();
                    energies[k] = pops
                        .iter()
                        .enumerate()
                        .map(|(n, p)| p * molecule.energy(n as u32))
                        .sum();
                    jzs[k] = e.jz(k);
                }
                (times, norms, energies, jzs)
            }
        };
        writer.write_table(
            "records",
            &[
                ("t", &times),
                ("norm", &norms),
                ("energy", &energies),
                ("jz", &jzs),
            ],
            json!({"observable": "records", "units": {"t": "ps", "energy": "cm^-1", "jz": "hbar"}}),
        )?;
    }

    if let Some(raman) = &cfg.observables.raman {
        let probe = ProbeSpec {
            fwhm: raman.probe_fwhm,
            handedness: raman.handedness,
            delays: raman.delays.to_vec(),
        };
        let shifts = linspace(raman.shift_min, raman.shift_max, raman.shift_points);
        let fine = FineStructureOptions {
            enabled: raman.fine_structure,
            ..Default::default()
        };
        let sg = match result {
            RunResult::Single(t) => raman_spectrogram(t, molecule, &probe, &shifts, &fine)?,
            RunResult::Ensemble(e) => {
                ensemble_spectrogram(e, molecule, &probe, &shifts, &fine)?
            }
        };
        let meta = json!({
            "observable": "raman_spectrogram",
            "units": {"delay": "ps", "shift": "cm^-1"},
            "convention": "positive shift co-rotates with probe handedness",
            "handedness": raman.handedness,
            "probe_fwhm_cm": raman.probe_fwhm,
            "fine_structure": raman.fine_structure,
            "n_axis": sg.n_axis,
            "render_hint": "log-scale intensity",
        });
        writer.write_matrix(
            "raman",
            "delay",
            &sg.delays,
            "shift",
            &sg.shifts,
            &sg.intensity,
            meta.clone(),
        )?;
        if raman.write_amplitude {
            writer.write_complex_matrix(
                "raman_amplitude",
                "delay",
                &sg.delays,
                "shift",
                &sg.shifts,
                &sg.amplitude,
                meta,
            )?;
        }
    }

    if let Some(ad) = &cfg.observables.angular_density {
        let traj = match result {
            RunResult::Single(t) => t,
            RunResult::Ensemble(_) => {
                return Err(Error::Config(
                    "angular_density needs a single-state initial".into(),
                ))
            }
        };
        let phis = linspace(0.0, 2.0 * PI, ad.phi_points);
        let mut tail = traj.clone();
        tail.snapshots.retain(|(t, _)| *t >= ad.from_ps);
        let map = angular_density_map(&tail, &phis)?;
        let slope = map.dumbbell_slope().unwrap_or(f64::NAN);
        writer.write_matrix(
            "angular_density",
            "t",
            &map.times,
            "phi",
            &map.phis,
            &map.density,
            json!({
                "observable": "angular_density",
                "units": {"t": "ps", "phi": "rad"},
                "plane": "theta = pi/2 slice",
                "ridge_slope_rad_per_ps": slope,
            }),
        )?;
    }

    if let Some(rv) = &cfg.observables.revival {
        let records = result.records();
        let times: Vec<f64> = records.iter().map(|r| r.t).collect();
        let signal: Vec<C64> = match result {
            RunResult::Single(t) => t
                .records
                .iter()
                .map(|r| r.coherence(rv.channel).iter().sum())
                .collect(),
            RunResult::Ensemble(e) => (0..e.n_records())
                .map(|k| e.coherence(rv.channel, k).iter().sum())
                .collect(),
        };
        let an = revival_analysis(&times, &signal, rv.expected_period_ps)?;
        writer.write_table(
            "revival_trace",
            &[("t", &an.times), ("intensity", &an.trace)],
            json!({"observable": "revival_trace", "units": {"t": "ps"}, "channel": rv.channel}),
        )?;
        writer.write_table(
            "revival_spectrum",
            &[("period", &an.periods), ("power", &an.power)],
            json!({
                "observable": "revival_spectrum",
                "units": {"period": "ps"},
                "peak_period_ps": an.peak_period,
            }),
        )?;
    }

    if let Some(cs) = &cfg.observables.composition {
        let comp: Composition = wavepacket_composition(&final_pops, molecule, cs.probe_fwhm)?;
        let ns: Vec<f64> = (0..=n_max).map(|n| n as f64).collect();
        let (count, lo, hi) = packet_span(&comp.weights, 0.005);
        writer.write_table(
            "composition",
            &[("N", &ns), ("raw", &comp.raw), ("weight", &comp.weights)],
            json!({
                "observable": "wavepacket_composition",
                "probe_fwhm_cm": cs.probe_fwhm,
                "packet_center": packet_center(&comp.raw, 0),
                "span_levels": count,
                "span_range": [lo, hi],
            }),
        )?;
    }

    Ok(())
}

fn collect_records(records: &[DerivedRecord]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    (
        records.iter().map(|r| r.t).collect(),
        records.iter().map(|r| r.norm).collect(),
        records.iter().map(|r| r.energy).collect(),
        records.iter().map(|r| r.jz).collect(),
    )
}

/// Scan overrides from the command line.
#[derive(Debug, Clone, Default)]
pub struct ScanOverrides {
    pub parameter: Option<String>,
    pub start: Option<f64>,
    pub stop: Option<f64>,
    pub points: Option<usize>,
}

fn mutate_parameter(cfg: &mut RunConfig, parameter: &str, value: f64) -> Result<()> {
    match parameter {
        "train_period" => {
            for seg in cfg.segments.iter_mut() {
                if let SegmentSection::Train { period_ps, .. } = seg {
                    *period_ps = value;
                    return Ok(());
                }
            }
            Err(Error::Config("no train segment to scan train_period".into()))
        }
        "train_angle_step" => {
            for seg in cfg.segments.iter_mut() {
                if let SegmentSection::Train { angle_step_deg, .. } = seg {
                    *angle_step_deg = value;
                    return Ok(());
                }
            }
            Err(Error::Config("no train segment to scan train_angle_step".into()))
        }
        "omega_max" => {
            for seg in cfg.segments.iter_mut() {
                if let SegmentSection::Centrifuge {
                    omega_max,
                    omega_max_resonance_n,
                    ..
                } = seg
                {
                    *omega_max = Some(value);
                    *omega_max_resonance_n = None;
                    return Ok(());
                }
            }
            Err(Error::Config("no centrifuge segment to scan omega_max".into()))
        }
        "probe_fwhm" => {
            let mut hit = false;
            if let Some(r) = cfg.observables.raman.as_mut() {
                r.probe_fwhm = value;
                hit = true;
            }
            if let Some(c) = cfg.observables.composition.as_mut() {
                c.probe_fwhm = value;
                hit = true;
            }
            if hit {
                Ok(())
            } else {
                Err(Error::Config(
                    "no raman/composition observable to scan probe_fwhm".into(),
                ))
            }
        }
        other => Err(Error::Config(format!("unknown scan parameter '{other}'"))),
    }
}

/// Scan one parameter over a range, aggregating one observable row per point.
pub fn scan(config_text: &str, over: &CliOverrides, s_over: &ScanOverrides) -> Result<RunOutcome> {
    let (mut cfg, molecule, mut writer) = parse_and_prepare(config_text, over)?;
    // merge CLI overrides into the scan section
    let section = match (&mut cfg.scan, &s_over.parameter) {
        (Some(s), p) => {
            if let Some(p) = p {
                s.parameter = p.clone();
            }
            if let Some(v) = s_over.start {
                s.start = v;
            }
            if let Some(v) = s_over.stop {
                s.stop = v;
            }
            if let Some(v) = s_over.points {
                s.points = v;
            }
            s.clone()
        }
        (None, Some(p)) => {
            let (start, stop, points) = match (s_over.start, s_over.stop, s_over.points) {
                (Some(a), Some(b), Some(n)) => (a, b, n),
                _ => {
                    return Err(Error::Config(
                        "scan needs --start/--stop/--points or a [scan] section".into(),
                    ))
                }
            };
            ScanSection {
                parameter: p.clone(),
                start,
                stop,
                points,
                observable: "populations".into(),
                n_report: 8,
            }
        }
        (None, None) => {
            return Err(Error::Config(
                "scan needs a [scan] section or --param".into(),
            ))
        }
    };
    cfg.scan = Some(section.clone());
    cfg.validate_schema()?;
    guard_program(&cfg, &molecule, over.quiet)?;

    let values = linspace(section.start, section.stop, section.points);
    let n_report = section.n_report.min(cfg.run.n_max);
    let opts = effective_opts(&cfg).endpoints_only();

    let rows: Result<Vec<Vec<f64>>> = values
        .par_iter()
        .map(|&v| {
            let mut point_cfg = cfg.clone();
            mutate_parameter(&mut point_cfg, &section.parameter, v)?;
            let result = execute(&point_cfg, &molecule, &opts)?;
            let row = match section.observable.as_str() {
                "populations" => {
                    let pops = result.final_populations(point_cfg.run.n_max);
                    pops[..=(n_report as usize)].to_vec()
                }
                "directionality" => match &result {
                    RunResult::Ensemble(e) => {
                        let d = e.directionality_by_n(e.n_records() - 1);
                        d[..=(n_report as usize)].to_vec()
                    }
                    RunResult::Single(t) => {
                        let rec = t.records.last().expect("has records");
                        (0..=n_report as usize)
                            .map(|n| {
                                if n == 0 || rec.populations[n] < 1e-14 {
                                    0.0
                                } else {
                                    rec.jz_by_n[n] / (n as f64 * rec.populations[n])
                                }
                            })
                            .collect()
                    }
                },
                "composition" => {
                    let fwhm = point_cfg
                        .observables
                        .composition
                        .as_ref()
                        .expect("validated")
                        .probe_fwhm;
                    let pops = result.final_populations(point_cfg.run.n_max);
                    let comp = wavepacket_composition(&pops, &molecule, fwhm)?;
                    comp.weights[..=(n_report as usize)].to_vec()
                }
                other => return Err(Error::Config(format!("unknown observable '{other}'"))),
            };
            Ok(row)
        })
        .collect();
    let rows = rows?;

    let cols: Vec<f64> = (0..=n_report).map(|n| n as f64).collect();
    let flat: Vec<f64> = rows.concat();
    writer.write_matrix(
        "scan",
        &section.parameter,
        &values,
        "N",
        &cols,
        &flat,
        json!({
            "observable": format!("scan_{}", section.observable),
            "parameter": section.parameter,
            "points": section.points,
        }),
    )?;
    writer.finish(run_summary(&cfg))?;
    Ok(RunOutcome {
        out_dir: over.out_dir.clone(),
        files: writer.files().to_vec(),
    })
}

/// Convenience wrappers over file paths.
pub fn simulate_path(path: impl AsRef<Path>, over: &CliOverrides) -> Result<RunOutcome> {
    let text = std::fs::read_to_string(path.as_ref())?;
    simulate(&text, over)
}

pub fn scan_path(
    path: impl AsRef<Path>,
    over: &CliOverrides,
    s_over: &ScanOverrides,
) -> Result<RunOutcome> {
    let text = std::fs::read_to_string(path.as_ref())?;
    scan(&text, over, s_over)
}

pub fn validate_path(path: impl AsRef<Path>) -> Result<ValidationReport> {
    let text = std::fs::read_to_string(path.as_ref())?;
    Ok(validate(&text))
}
