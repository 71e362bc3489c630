//! Browser demo bindings: three interactive views over the receiver chain.
//!
//! Build for the web with
//! `cargo build -p barc-demo --target wasm32-unknown-unknown --release`
//! followed by `wasm-bindgen --target web` (see the README); `www/index.html`
//! loads the generated module and plots with a plain canvas.

use wasm_bindgen::prelude::*;

use barc_core::barc::{gen_patterns, BarcParams, BarcState, DecimationScheme};
use barc_core::baselines::{build_true_covariance, mmse_oracle, FullRankState};
use barc_core::chanmodel::{
    clarke_fading, draw_user_ensemble, effective_signature, synthesize_received, Modulation,
    RunRealization,
};
use barc_core::numerics::inner;

const NU: f64 = 2.0;

fn scheme_from(code: u8) -> DecimationScheme {
    match code {
        0 => DecimationScheme::Uniform,
        1 => DecimationScheme::Prestored,
        _ => DecimationScheme::Random,
    }
}

/// Per-symbol squared CM error (dB) of the reduced-rank receiver and the
/// full-rank reference adapting side by side on one scenario. Returned
/// interleaved: `[reduced[0], full[0], reduced[1], full[1], ...]`, smoothed
/// with a short moving average so the curves read cleanly.
#[wasm_bindgen]
pub fn convergence_curves(
    users: u32,
    snr_db: f64,
    rank: u32,
    branches: u32,
    scheme: u8,
    symbols: u32,
    seed: u32,
) -> Vec<f64> {
    let (n, l_p) = (32usize, 9usize);
    let m = n + l_p - 1;
    let k = (users as usize).clamp(1, 16);
    let d = (rank as usize).clamp(1, m);
    let b = (branches as usize).clamp(1, 64);
    let num = (symbols as usize).clamp(50, 4000);
    let sigma2 = 10f64.powf(-snr_db / 10.0);
    let seed = u64::from(seed);

    let Ok(ensemble) = draw_user_ensemble(k, n, l_p, 1.5, seed) else {
        return Vec::new();
    };
    let Ok(run) = RunRealization::generate(&ensemble, num, Modulation::Qpsk, 0.0005, seed + 1)
    else {
        return Vec::new();
    };
    let mut noise = rand_rng(seed + 2);
    let p0 = genie_signature(&ensemble, &run, 0);
    let params = BarcParams {
        nu: NU,
        ..BarcParams::default()
    };
    let Ok(bank) = gen_patterns(scheme_from(scheme), m, d, b, seed + 3) else {
        return Vec::new();
    };
    let Ok(mut reduced) = BarcState::new(bank, 3, &p0, params) else {
        return Vec::new();
    };
    let Ok(mut full) = FullRankState::new(m, &p0, params) else {
        return Vec::new();
    };

    let mut out = Vec::with_capacity(2 * num);
    let mut avg_r = f64::NAN;
    let mut avg_f = f64::NAN;
    for i in 0..num {
        let frame = synthesize_received(&ensemble, &run, i, sigma2, &mut noise);
        let p = genie_signature(&ensemble, &run, i);
        let (er, ef) = match (
            reduced.rls_step(&p, &frame.r, 0.998),
            full.rls_step(&frame.r, &p, 0.998),
        ) {
            (Ok(a), Ok(bstep)) => {
                let norm_err = |z: barc_core::Cx| {
                    let e = z.norm_sqr() / (NU * NU) - 1.0;
                    e * e
                };
                (norm_err(a.z_detect), norm_err(bstep.z_detect))
            }
            _ => break,
        };
        let fold = |avg: f64, x: f64| if avg.is_nan() { x } else { 0.95 * avg + 0.05 * x };
        avg_r = fold(avg_r, er);
        avg_f = fold(avg_f, ef);
        out.push(10.0 * avg_r.max(1e-6).log10());
        out.push(10.0 * avg_f.max(1e-6).log10());
    }
    out
}

/// Magnitude (dB) tracks of the desired user's fading paths.
/// Returns `paths * symbols` values, path-major.
#[wasm_bindgen]
pub fn fading_tracks(normalized_doppler: f64, symbols: u32, paths: u32, seed: u32) -> Vec<f64> {
    let num = (symbols as usize).clamp(10, 20_000);
    let paths = (paths as usize).clamp(1, 6);
    let fd = normalized_doppler.clamp(0.0, 0.2);
    match clarke_fading(fd, num, paths, u64::from(seed)) {
        Ok(f) => f
            .gains
            .iter()
            .flat_map(|track| {
                track
                    .iter()
                    .map(|g| 20.0 * g.norm().max(1e-6).log10())
                    .collect::<Vec<f64>>()
            })
            .collect(),
        Err(_) => Vec::new(),
    }
}

/// Post-convergence constellation of the reduced-rank receiver next to the
/// genie MMSE receiver on the same frames. Returns interleaved
/// `[re, im, ...]`: the first `2*points` values belong to the reduced-rank
/// output (normalized to unit response), the rest to the MMSE output.
#[wasm_bindgen]
pub fn constellations(
    users: u32,
    snr_db: f64,
    rank: u32,
    branches: u32,
    points: u32,
    seed: u32,
) -> Vec<f64> {
    let (n, l_p) = (32usize, 9usize);
    let m = n + l_p - 1;
    let k = (users as usize).clamp(1, 16);
    let d = (rank as usize).clamp(1, m);
    let b = (branches as usize).clamp(1, 64);
    let points = (points as usize).clamp(16, 2000);
    let warmup = 600usize;
    let num = warmup + points;
    let sigma2 = 10f64.powf(-snr_db / 10.0);
    let seed = u64::from(seed);

    let Ok(ensemble) = draw_user_ensemble(k, n, l_p, 1.5, seed) else {
        return Vec::new();
    };
    let Ok(run) = RunRealization::generate(&ensemble, num, Modulation::Qpsk, 0.0, seed + 1) else {
        return Vec::new();
    };
    let mut noise = rand_rng(seed + 2);
    let p = genie_signature(&ensemble, &run, 0);
    let params = BarcParams {
        nu: NU,
        ..BarcParams::default()
    };
    let Ok(bank) = gen_patterns(DecimationScheme::Random, m, d, b, seed + 3) else {
        return Vec::new();
    };
    let Ok(mut reduced) = BarcState::new(bank, 3, &p, params) else {
        return Vec::new();
    };
    let cov = build_true_covariance(&ensemble, &run, 1);
    let p_true = ensemble.users[0].constraint.matrix.matvec(&run.taps(0, 0));
    let Ok(w_mmse) = mmse_oracle(&cov, &p_true, sigma2, 1.0) else {
        return Vec::new();
    };
    let phase = run.taps(0, 0)[0];
    let phase = phase / phase.norm();

    let mut reduced_pts = Vec::with_capacity(2 * points);
    let mut mmse_pts = Vec::with_capacity(2 * points);
    for i in 0..num {
        let frame = synthesize_received(&ensemble, &run, i, sigma2, &mut noise);
        let step = match reduced.rls_step(&p, &frame.r, 0.998) {
            Ok(s) => s,
            Err(_) => break,
        };
        if i >= warmup {
            let zr = step.z_detect * phase.conj() / NU;
            reduced_pts.push(zr.re);
            reduced_pts.push(zr.im);
            let zm = inner(&w_mmse, &frame.r);
            mmse_pts.push(zm.re);
            mmse_pts.push(zm.im);
        }
    }
    reduced_pts.extend(mmse_pts);
    reduced_pts
}

fn genie_signature(
    ensemble: &barc_core::chanmodel::UserEnsemble,
    run: &RunRealization,
    i: usize,
) -> Vec<barc_core::Cx> {
    let h = barc_core::baselines::normalized_channel(&run.taps(0, i as isize));
    effective_signature(&ensemble.users[0].constraint, &h).unwrap()
}

fn rand_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}
