//! BER accounting.

use crate::chanmodel::Modulation;
use crate::error::{Error, Result};
use crate::numerics::Cx;

/// Gray-mapped bit errors between one detected and one true QPSK symbol
/// (each quadrature sign carries one bit).
pub fn qpsk_bit_errors(detected: Cx, truth: Cx) -> u64 {
    let mut errs = 0;
    if (detected.re >= 0.0) != (truth.re >= 0.0) {
        errs += 1;
    }
    if (detected.im >= 0.0) != (truth.im >= 0.0) {
        errs += 1;
    }
    errs
}

pub fn bit_errors(detected: Cx, truth: Cx, modulation: Modulation) -> u64 {
    match modulation {
        Modulation::Qpsk => qpsk_bit_errors(detected, truth),
        Modulation::Bpsk => u64::from((detected.re >= 0.0) != (truth.re >= 0.0)),
    }
}

pub fn bits_per_symbol(modulation: Modulation) -> u64 {
    match modulation {
        Modulation::Qpsk => 2,
        Modulation::Bpsk => 1,
    }
}

/// QPSK bit error rate between two symbol streams:
/// `(ber, bit_errors, symbol_count)`.
pub fn compute_ber(detected: &[Cx], truth: &[Cx]) -> Result<(f64, u64, u64)> {
    if detected.len() != truth.len() {
        return Err(Error::invalid(format!(
            "stream lengths differ: {} vs {}",
            detected.len(),
            truth.len()
        )));
    }
    let errors: u64 = detected
        .iter()
        .zip(truth)
        .map(|(&d, &t)| qpsk_bit_errors(d, t))
        .sum();
    let count = detected.len() as u64;
    let ber = if count == 0 {
        0.0
    } else {
        errors as f64 / (2.0 * count as f64)
    };
    Ok((ber, errors, count))
}

/// Binomial standard error of an estimated bit error rate.
pub fn binomial_se(ber: f64, bits: u64) -> f64 {
    if bits == 0 {
        return f64::NAN;
    }
    (ber.max(0.0) * (1.0 - ber).max(0.0) / bits as f64).sqrt()
}
