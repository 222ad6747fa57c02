use std::time::Instant;
use superrotor::angular::Wavefunction;
use superrotor::constants::wavenumber_to_angular;
use superrotor::fields::{CentrifugeSpec, Theta0};
use superrotor::molecule::MoleculeSpec;
use superrotor::observables::packet_center;
use superrotor::propagator::{propagate_centrifuge, PropagationOptions};

fn main() {
    let o2 = MoleculeSpec::new("O2", 1.43768, 4.85e-6, 1.14, 0.0, 1.0).unwrap();
    // resonance for the packet centered at N = 99
    let omega_res = wavenumber_to_angular((o2.energy(100) - o2.energy(98)) / 2.0);
    println!("omega_res(99) = {omega_res:.3} rad/ps");
    let cfg = CentrifugeSpec {
        duration: 100.0,
        beta: 0.628318,
        theta0: Theta0::Fixed(0.0),
        intensity: 1.0e13,
        ramp: 5.0,
        omega_max: Some(omega_res),
    };
    let psi = Wavefunction::eigenstate(140, 1, 1).unwrap();
    let mut opts = PropagationOptions::default();
    opts.richardson = false;
    let t0 = Instant::now();
    let traj = propagate_centrifuge(&psi, &o2, &cfg, 0.0, 0.0, &opts).unwrap();
    let el = t0.elapsed().as_secs_f64();
    let pops = traj.final_state.population_by_n();
    let center = packet_center(&pops, 50);
    let jz = traj.final_state.jz_expectation();
    let argmax = pops
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap()
        .0;
    let trapped: f64 = pops[50..].iter().sum();
    println!(
        "elapsed {el:.1} s | center {center:.2} | argmax {argmax} | jz {jz:.1} | trapped {trapped:.3} | norm-1 {:.2e}",
        traj.final_state.norm() - 1.0
    );

    // half-step comparison (manual Richardson)
    let t0 = Instant::now();
    let mut opts2 = opts.clone();
    opts2.steps_per_period = 100.0;
    let fine = propagate_centrifuge(&psi, &o2, &cfg, 0.0, 0.0, &opts2).unwrap();
    let el2 = t0.elapsed().as_secs_f64();
    let ov = traj.final_state.overlap(&fine.final_state).norm();
    println!("half-step run {el2:.1} s | overlap deficit {:.3e}", 1.0 - ov);
}
