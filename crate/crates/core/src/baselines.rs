//! Reference receivers and supporting estimators: full-rank constrained CM
//! (SG and RLS), the MMSE receiver with genie channel knowledge, subspace
//! blind channel estimation and symbol detection.
//!
//! The full-rank receivers are the reduced-rank chain run in its degenerate
//! configuration (unit interpolator, identity decimation, D = M), so both
//! code paths share one implementation of the update algebra.

use crate::barc::{gen_patterns, BarcParams, BarcState, DecimationScheme, StepOutput};
use crate::chanmodel::{ConstraintMatrix, RunRealization, UserEnsemble};
use crate::error::{Error, Result};
use crate::numerics::{inner, mil_rank1_update, norm, smallest_eigvec_tracked, CMat, Cx};

/// Full-rank constrained CM receiver: an M-tap filter adapted directly on
/// the received vector.
#[derive(Debug, Clone)]
pub struct FullRankState {
    inner: BarcState,
}

impl FullRankState {
    pub fn new(m: usize, p: &[Cx], params: BarcParams) -> Result<Self> {
        let bank = gen_patterns(DecimationScheme::Uniform, m, m, 1, 0)?;
        let inner = BarcState::new(bank, 1, p, params)?;
        Ok(FullRankState { inner })
    }

    pub fn weights(&self) -> &[Cx] {
        &self.inner.w
    }

    /// The receiver's tracked M x M inverse of the weighted covariance,
    /// reused by the blind channel estimator.
    pub fn weighted_cov_inverse(&self) -> &CMat {
        &self.inner.rls_z_inv[0]
    }

    pub fn sg_step(&mut self, r: &[Cx], p: &[Cx], mu: f64) -> Result<StepOutput> {
        self.inner.sg_step(p, r, 0.0, mu)
    }

    pub fn rls_step(&mut self, r: &[Cx], p: &[Cx], alpha: f64) -> Result<StepOutput> {
        self.inner.rls_step(p, r, alpha)
    }
}

/// MMSE receiver from the true (genie) covariance:
/// `w = nu R^{-1} p / (p^H R^{-1} p)` with `R = R_signal + sigma2 I`.
pub fn mmse_oracle(r_signal: &CMat, p: &[Cx], sigma2: f64, nu: f64) -> Result<Vec<Cx>> {
    let q = crate::numerics::regularized_inverse(r_signal, sigma2)?;
    let qp = q.matvec(p);
    let denom = inner(p, &qp);
    if denom.norm() < 1e-280 {
        return Err(Error::SingularMatrix { pivot: denom.norm() });
    }
    Ok(qp.iter().map(|x| x * nu / denom.re).collect())
}

/// Analytic signal-plus-ISI covariance at symbol `i` (noise excluded):
/// for every user, the current effective signature plus the previous
/// symbol's tail and the next symbol's head, each weighted by the squared
/// amplitude.
pub fn build_true_covariance(ensemble: &UserEnsemble, run: &RunRealization, i: usize) -> CMat {
    let n = ensemble.n_chips;
    let m = n + ensemble.l_p - 1;
    let mut cov = CMat::zeros(m, m);
    let i = i as isize;
    for (k, user) in ensemble.users.iter().enumerate() {
        let a2 = user.amplitude * user.amplitude;
        let p_now = user.constraint.matrix.matvec(&run.taps(k, i));
        cov.add_outer(a2, &p_now, &p_now);
        if ensemble.l_p > 1 {
            let p_prev = user.constraint.matrix.matvec(&run.taps(k, i - 1));
            let tail = shift_up(&p_prev, n);
            cov.add_outer(a2, &tail, &tail);
            let p_next = user.constraint.matrix.matvec(&run.taps(k, i + 1));
            let head = shift_down(&p_next, n);
            cov.add_outer(a2, &head, &head);
        }
    }
    cov
}

fn shift_up(x: &[Cx], n: usize) -> Vec<Cx> {
    let m = x.len();
    let mut out = vec![Cx::new(0.0, 0.0); m];
    for i in 0..m {
        if i + n < m {
            out[i] = x[i + n];
        }
    }
    out
}

fn shift_down(x: &[Cx], n: usize) -> Vec<Cx> {
    let m = x.len();
    let mut out = vec![Cx::new(0.0, 0.0); m];
    for (i, item) in out.iter_mut().enumerate() {
        if i >= n {
            *item = x[i - n];
        }
    }
    out
}

/// Unit-norm blind channel estimate with a deterministic phase convention.
#[derive(Debug, Clone)]
pub struct ChannelEstimate {
    pub h_hat: Vec<Cx>,
}

/// Estimate the channel as the smallest eigenvector of `C^H R^{-1} C`.
pub fn blind_channel_estimate(r_inv: &CMat, c: &ConstraintMatrix) -> Result<ChannelEstimate> {
    let l_p = c.matrix.cols;
    let start: Vec<Cx> = (0..l_p)
        .map(|i| Cx::new(1.0 + 0.013 * i as f64, 0.0))
        .collect();
    blind_channel_estimate_from(r_inv, c, &start)
}

/// Warm-started variant for tracking a slowly varying channel.
pub fn blind_channel_estimate_from(
    r_inv: &CMat,
    c: &ConstraintMatrix,
    init: &[Cx],
) -> Result<ChannelEstimate> {
    let rc = r_inv.matmul(&c.matrix);
    let mut quad = c.matrix.hermitian_transpose().matmul(&rc);
    // The recursive inverse is only approximately Hermitian.
    let n = quad.rows;
    for r in 0..n {
        for col in r..n {
            let avg = (quad[(r, col)] + quad[(col, r)].conj()) * 0.5;
            quad[(r, col)] = avg;
            quad[(col, r)] = avg.conj();
        }
    }
    // Channel tracking is statistical; accept residuals far looser than
    // the algebraic eigensolver contract.
    let vec = smallest_eigvec_tracked(&quad, init, 1e-4)?;
    Ok(ChannelEstimate {
        h_hat: rotate_to_reference(vec),
    })
}

/// Unit-norm copy of a channel vector under the estimator's phase
/// convention; this is the ideal output a perfect estimator would produce,
/// used by the genie channel mode.
pub fn normalized_channel(h: &[Cx]) -> Vec<Cx> {
    let scale = norm(h);
    if scale < 1e-300 {
        return h.to_vec();
    }
    rotate_to_reference(h.iter().map(|x| x / scale).collect())
}

/// Rotate so the leading tap is real nonnegative (falls back to the first
/// tap with usable magnitude).
fn rotate_to_reference(mut h: Vec<Cx>) -> Vec<Cx> {
    let lead = if h[0].norm() > 1e-12 {
        h[0]
    } else {
        match h.iter().find(|x| x.norm() > 1e-12) {
            Some(&x) => x,
            None => return h,
        }
    };
    let rot = lead.conj() / lead.norm();
    for x in &mut h {
        *x *= rot;
    }
    h
}

/// Plain-covariance tracker used when the receiver does not maintain an
/// M x M statistic of its own (SG and reduced-rank receivers).
#[derive(Debug, Clone)]
pub struct ChannelTracker {
    pub r_inv: CMat,
    pub alpha: f64,
    last: Option<Vec<Cx>>,
}

impl ChannelTracker {
    pub fn new(m: usize, alpha: f64) -> Self {
        ChannelTracker {
            // R[0] = 0.01 I, so the inverse starts large and the first few
            // frames dominate it quickly.
            r_inv: CMat::scaled_identity(m, 100.0),
            alpha,
            last: None,
        }
    }

    pub fn update(&mut self, r: &[Cx]) -> Result<()> {
        self.r_inv = mil_rank1_update(&self.r_inv, self.alpha, r, r)?;
        Ok(())
    }

    pub fn estimate(&mut self, c: &ConstraintMatrix) -> Result<ChannelEstimate> {
        let est = match &self.last {
            Some(prev) => blind_channel_estimate_from(&self.r_inv, c, prev)?,
            None => blind_channel_estimate(&self.r_inv, c)?,
        };
        self.last = Some(est.h_hat.clone());
        Ok(est)
    }
}

/// QPSK constellation, Gray mapped: the real sign carries one bit and the
/// imaginary sign the other.
pub const QPSK_POINTS: [Cx; 4] = [
    Cx::new(std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2),
    Cx::new(-std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2),
    Cx::new(std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2),
    Cx::new(-std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2),
];

/// Rotate the detector input by the reference phase and slice to the
/// nearest QPSK point.
pub fn detect_qpsk(z: Cx, phase_ref: Cx) -> Result<Cx> {
    let mag = phase_ref.norm();
    if mag < 1e-300 {
        return Err(Error::DegenerateReference);
    }
    let rotated = z * phase_ref.conj() / mag;
    let re = if rotated.re >= 0.0 { 1.0 } else { -1.0 };
    let im = if rotated.im >= 0.0 { 1.0 } else { -1.0 };
    Ok(Cx::new(
        re * std::f64::consts::FRAC_1_SQRT_2,
        im * std::f64::consts::FRAC_1_SQRT_2,
    ))
}

/// BPSK slicer with the same phase-reference convention.
pub fn detect_bpsk(z: Cx, phase_ref: Cx) -> Result<Cx> {
    let mag = phase_ref.norm();
    if mag < 1e-300 {
        return Err(Error::DegenerateReference);
    }
    let rotated = z * phase_ref.conj() / mag;
    Ok(if rotated.re >= 0.0 {
        Cx::new(1.0, 0.0)
    } else {
        Cx::new(-1.0, 0.0)
    })
}

/// Output SINR of a full-length filter against the analytic covariance
/// split: `A1^2 |w^H p|^2 / (w^H (R_in + sigma2 I) w)`.
pub fn output_sinr(w: &[Cx], p: &[Cx], a1: f64, r_interference: &CMat, sigma2: f64) -> f64 {
    let signal = a1 * a1 * inner(w, p).norm_sqr();
    let rw = r_interference.matvec(w);
    let denom = inner(w, &rw).re + sigma2 * crate::numerics::norm_sqr(w);
    signal / denom
}
