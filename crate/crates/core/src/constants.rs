//! Physical constants (CODATA 2018) in the unit system used throughout the
//! crate: seconds, hertz, tesla and kelvin internally, energies in meV at
//! the interfaces.

/// Boltzmann constant, meV/K.
pub const K_B_MEV_PER_K: f64 = 8.617_333_262e-2;

/// Planck constant, meV·s.
pub const H_MEV_S: f64 = 4.135_667_696e-12;

/// Bohr magneton over Planck constant, Hz/T (13.996 GHz/T).
pub const MU_B_OVER_H_HZ_PER_T: f64 = 1.399_624_493_61e10;

/// Thermal energy k_B·T in meV.
pub fn thermal_energy_mev(temperature_k: f64) -> f64 {
    K_B_MEV_PER_K * temperature_k
}

/// Convert a frequency splitting in Hz to an energy in meV.
pub fn hz_to_mev(frequency_hz: f64) -> f64 {
    H_MEV_S * frequency_hz
}
