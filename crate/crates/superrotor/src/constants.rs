//! Physical constants and unit conversions.
//!
//! Internal unit system: energies in cm⁻¹, times in ps, angles in rad,
//! intensities in W/cm². Every conversion between these systems goes
//! through this module.

use std::f64::consts::TAU;

/// Speed of light in cm/ps.
pub const C_CM_PER_PS: f64 = 0.029_979_245_8;

/// Speed of light in m/s.
pub const C_M_PER_S: f64 = 2.997_924_58e8;

/// Reduced Planck constant in J·s.
pub const HBAR_JS: f64 = 1.054_571_817e-34;

/// Boltzmann constant in cm⁻¹/K.
pub const KB_CM_PER_K: f64 = 0.695_034_800;

/// ∫exp(−4 ln2 t²/τ²) dt = τ·GAUSSIAN_FWHM_INTEGRAL, for a Gaussian of FWHM τ.
pub const GAUSSIAN_FWHM_INTEGRAL: f64 = 1.064_467_019_431_226; // sqrt(pi / (4 ln 2))

/// Convert an energy in cm⁻¹ to an angular frequency in rad/ps.
pub fn wavenumber_to_angular(e_cm: f64) -> f64 {
    TAU * C_CM_PER_PS * e_cm
}

/// Convert an energy in cm⁻¹ to a cyclic frequency in THz (cycles/ps).
pub fn wavenumber_to_thz(e_cm: f64) -> f64 {
    C_CM_PER_PS * e_cm
}

/// Beat period in ps of two lines separated by `delta_cm` (cm⁻¹).
pub fn beat_period(delta_cm: f64) -> f64 {
    1.0 / (C_CM_PER_PS * delta_cm)
}

/// Polarizability coupling rate ¼·Δα·E²/ħ in rad/ps for a polarizability
/// anisotropy in Å³ and an intensity in W/cm².
///
/// Field convention: E is the envelope amplitude with I = ½ε₀cE², and Δα is
/// a polarizability volume (Δα_SI = 4πε₀·Δα). Both ε₀ factors cancel, leaving
/// ¼·Δα_SI·E²/ħ = 2π·Δα·I/(cħ).
pub fn trap_coupling(delta_alpha_a3: f64, intensity_w_cm2: f64) -> f64 {
    let dalpha_m3 = delta_alpha_a3 * 1e-30;
    let intensity_w_m2 = intensity_w_cm2 * 1e4;
    TAU * dalpha_m3 * intensity_w_m2 / (C_M_PER_S * HBAR_JS) * 1e-12
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn angular_conversion() {
        // 1 cm^-1 -> 2 pi * 0.0299792458 rad/ps
        assert_relative_eq!(wavenumber_to_angular(1.0), 0.188_365_156_73, epsilon = 1e-9);
    }

    #[test]
    fn gaussian_integral_factor() {
        let expect = (std::f64::consts::PI / (4.0 * 2.0_f64.ln())).sqrt();
        assert_relative_eq!(GAUSSIAN_FWHM_INTEGRAL, expect, epsilon = 1e-15);
    }

    #[test]
    fn trap_coupling_scale() {
        // N2-like anisotropy at 1e13 W/cm^2 gives ~14 rad/ps
        let w = trap_coupling(0.7, 1e13);
        assert!((13.0..15.0).contains(&w), "w = {w}");
    }
}
