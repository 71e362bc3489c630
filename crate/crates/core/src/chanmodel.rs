//! DS-CDMA uplink signal synthesis.
//!
//! Synchronous chip-rate model: K users with random binary spreading codes
//! of length N, frequency-selective channels of at most `L_p` chips and
//! circular-symmetric Gaussian noise. The observation window spans
//! `M = N + L_p - 1` chips, so each frame carries the current symbol plus
//! inter-symbol interference folded in from the previous and next symbols.
//!
//! Channels have three paths with relative powers 0, -3 and -6 dB, path
//! spacings drawn uniformly from {1, 2} chips, and per-path Rayleigh fading
//! generated by a Gaussian-weighted sum of sinusoids with the Clarke
//! spectrum (autocorrelation J0(2 pi fD T tau)).

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{CMat, Cx};

/// Number of sinusoids per fading path.
const NUM_OSCILLATORS: usize = 64;

/// Derive a child seed from a master seed and a stream tag (splitmix64).
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut state = master;
    for &t in tags {
        state = state.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(t);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        state = z ^ (z >> 31);
    }
    state
}

/// Standard normal draw (Box-Muller).
pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Circular-symmetric complex Gaussian with variance `var` (total).
pub fn complex_normal(rng: &mut ChaCha8Rng, var: f64) -> Cx {
    let s = (var / 2.0).sqrt();
    Cx::new(s * normal(rng), s * normal(rng))
}

/// Symbol alphabet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modulation {
    Qpsk,
    Bpsk,
}

impl Modulation {
    pub fn draw(self, rng: &mut ChaCha8Rng) -> Cx {
        match self {
            Modulation::Qpsk => {
                let re = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                let im = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                Cx::new(
                    re * std::f64::consts::FRAC_1_SQRT_2,
                    im * std::f64::consts::FRAC_1_SQRT_2,
                )
            }
            Modulation::Bpsk => {
                if rng.gen::<bool>() {
                    Cx::new(1.0, 0.0)
                } else {
                    Cx::new(-1.0, 0.0)
                }
            }
        }
    }
}

/// Normalized binary spreading code, chips in {+1, -1}/sqrt(N).
#[derive(Debug, Clone)]
pub struct SpreadingCode {
    pub chips: Vec<f64>,
}

impl SpreadingCode {
    pub fn random(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = 1.0 / (n as f64).sqrt();
        let chips = (0..n)
            .map(|_| if rng.gen::<bool>() { scale } else { -scale })
            .collect();
        SpreadingCode { chips }
    }

    pub fn len(&self) -> usize {
        self.chips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chips.is_empty()
    }
}

/// M x L_p matrix whose column j is the code shifted down by j chips.
#[derive(Debug, Clone)]
pub struct ConstraintMatrix {
    pub matrix: CMat,
}

pub fn build_constraint_matrix(code: &SpreadingCode, l_p: usize) -> Result<ConstraintMatrix> {
    if l_p == 0 {
        return Err(Error::invalid("L_p must be >= 1"));
    }
    let n = code.len();
    let m = n + l_p - 1;
    let mut mat = CMat::zeros(m, l_p);
    for j in 0..l_p {
        for (i, &chip) in code.chips.iter().enumerate() {
            mat[(i + j, j)] = Cx::new(chip, 0.0);
        }
    }
    Ok(ConstraintMatrix { matrix: mat })
}

/// Effective signature p = C h.
pub fn effective_signature(c: &ConstraintMatrix, h: &[Cx]) -> Result<Vec<Cx>> {
    if c.matrix.cols != h.len() {
        return Err(Error::invalid(format!(
            "channel length {} does not match constraint matrix columns {}",
            h.len(),
            c.matrix.cols
        )));
    }
    Ok(c.matrix.matvec(h))
}

/// Static multipath layout: delays and per-path mean powers (linear scale,
/// normalized so they sum to one).
#[derive(Debug, Clone)]
pub struct MultipathChannel {
    pub l_p: usize,
    pub path_delays: Vec<usize>,
    pub relative_powers_db: Vec<f64>,
    pub path_powers: Vec<f64>,
}

impl MultipathChannel {
    /// Three paths (fewer when `l_p` cannot hold them) with relative powers
    /// 0/-3/-6 dB and spacings uniform on {1, 2} chips. The first path of
    /// every user sits at delay zero.
    pub fn draw(l_p: usize, rng: &mut ChaCha8Rng) -> Self {
        let num_paths = 3.min(l_p);
        let rel_db: Vec<f64> = [0.0, -3.0, -6.0][..num_paths].to_vec();
        let delays = loop {
            let mut d = vec![0usize];
            for _ in 1..num_paths {
                let gap = 1 + rng.gen_range(0..2usize);
                d.push(d.last().unwrap() + gap);
            }
            if *d.last().unwrap() <= l_p - 1 {
                break d;
            }
        };
        let raw: Vec<f64> = rel_db.iter().map(|db| 10f64.powf(db / 10.0)).collect();
        let total: f64 = raw.iter().sum();
        let powers = raw.iter().map(|p| p / total).collect();
        MultipathChannel {
            l_p,
            path_delays: delays,
            relative_powers_db: rel_db,
            path_powers: powers,
        }
    }

    pub fn num_paths(&self) -> usize {
        self.path_delays.len()
    }

    /// Dense L_p tap vector for the given per-path fading gains.
    pub fn taps(&self, fading: &[Cx]) -> Vec<Cx> {
        let mut h = vec![Cx::new(0.0, 0.0); self.l_p];
        for (p, &delay) in self.path_delays.iter().enumerate() {
            h[delay] = fading[p] * self.path_powers[p].sqrt();
        }
        h
    }
}

/// Per-path complex fading gains over a block of symbols.
#[derive(Debug, Clone)]
pub struct FadingProcess {
    pub normalized_doppler: f64,
    /// `gains[path][symbol]`, unit mean-square per path.
    pub gains: Vec<Vec<Cx>>,
}

/// Clarke-model fading via a Gaussian-weighted sum of sinusoids.
///
/// Each path is an independent process
/// `h[i] = (1/sqrt(2 N_osc)) * sum_n (a_n + j b_n) exp(j (2 pi fD T cos(alpha_n) i + phi_n))`
/// with stratified arrival angles, which gives Rayleigh envelope statistics
/// and the Clarke autocorrelation. Zero Doppler freezes each path at a
/// random complex constant.
pub fn clarke_fading(
    normalized_doppler: f64,
    num_symbols: usize,
    num_paths: usize,
    seed: u64,
) -> Result<FadingProcess> {
    if normalized_doppler < 0.0 {
        return Err(Error::invalid("normalized Doppler must be >= 0"));
    }
    if num_symbols == 0 {
        return Err(Error::invalid("num_symbols must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (2.0 * NUM_OSCILLATORS as f64).sqrt();
    let mut gains = Vec::with_capacity(num_paths);
    for _ in 0..num_paths {
        let mut amp = [Cx::new(0.0, 0.0); NUM_OSCILLATORS];
        let mut freq = [0.0f64; NUM_OSCILLATORS];
        let mut phase = [0.0f64; NUM_OSCILLATORS];
        let angle_offset: f64 = rng.gen();
        for n in 0..NUM_OSCILLATORS {
            amp[n] = Cx::new(normal(&mut rng), normal(&mut rng));
            let alpha = 2.0 * PI * (n as f64 + angle_offset) / NUM_OSCILLATORS as f64;
            freq[n] = 2.0 * PI * normalized_doppler * alpha.cos();
            phase[n] = 2.0 * PI * rng.gen::<f64>();
        }
        let mut track = Vec::with_capacity(num_symbols);
        for i in 0..num_symbols {
            let t = i as f64;
            let mut acc = Cx::new(0.0, 0.0);
            for n in 0..NUM_OSCILLATORS {
                let psi = freq[n] * t + phase[n];
                acc += amp[n] * Cx::new(psi.cos(), psi.sin());
            }
            track.push(acc * scale);
        }
        gains.push(track);
    }
    Ok(FadingProcess {
        normalized_doppler,
        gains,
    })
}

/// One user: code, constraint matrix, channel layout and amplitude.
#[derive(Debug, Clone)]
pub struct User {
    pub code: SpreadingCode,
    pub constraint: ConstraintMatrix,
    pub channel: MultipathChannel,
    pub amplitude: f64,
}

/// K users sharing the chip grid; user 0 is the desired user.
#[derive(Debug, Clone)]
pub struct UserEnsemble {
    pub n_chips: usize,
    pub l_p: usize,
    pub users: Vec<User>,
}

/// Draw codes, channels and log-normal amplitude loading for K users.
///
/// Amplitudes follow `20 log10(A_k) ~ N(0, power_std_db^2)`; the desired
/// user is index 0.
pub fn draw_user_ensemble(
    k: usize,
    n: usize,
    l_p: usize,
    power_std_db: f64,
    seed: u64,
) -> Result<UserEnsemble> {
    if k == 0 || n == 0 || l_p == 0 {
        return Err(Error::invalid("K, N and L_p must all be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut users = Vec::with_capacity(k);
    for _ in 0..k {
        let code = SpreadingCode::random(n, &mut rng);
        let constraint = build_constraint_matrix(&code, l_p)?;
        let channel = MultipathChannel::draw(l_p, &mut rng);
        let amplitude = 10f64.powf(power_std_db * normal(&mut rng) / 20.0);
        users.push(User {
            code,
            constraint,
            channel,
            amplitude,
        });
    }
    Ok(UserEnsemble {
        n_chips: n,
        l_p,
        users,
    })
}

/// Symbol streams and fading tracks for one simulated run.
///
/// Index convention: `symbol(k, i)` and `taps(k, i)` accept
/// `i in -1 ..= num_symbols`, covering the ISI window at both edges.
#[derive(Debug, Clone)]
pub struct RunRealization {
    pub num_symbols: usize,
    pub modulation: Modulation,
    pub normalized_doppler: f64,
    symbols: Vec<Vec<Cx>>,
    fading: Vec<FadingProcess>,
    channels: Vec<MultipathChannel>,
}

impl RunRealization {
    pub fn generate(
        ensemble: &UserEnsemble,
        num_symbols: usize,
        modulation: Modulation,
        normalized_doppler: f64,
        seed: u64,
    ) -> Result<Self> {
        let span = num_symbols + 2;
        let mut symbols = Vec::with_capacity(ensemble.users.len());
        let mut fading = Vec::with_capacity(ensemble.users.len());
        for (k, user) in ensemble.users.iter().enumerate() {
            let mut sym_rng =
                ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0xB0B5, k as u64]));
            symbols.push((0..span).map(|_| modulation.draw(&mut sym_rng)).collect());
            fading.push(clarke_fading(
                normalized_doppler,
                span,
                user.channel.num_paths(),
                derive_seed(seed, &[0xFADE, k as u64]),
            )?);
        }
        Ok(RunRealization {
            num_symbols,
            modulation,
            normalized_doppler,
            symbols,
            fading,
            channels: ensemble.users.iter().map(|u| u.channel.clone()).collect(),
        })
    }

    /// A realization with caller-provided symbol streams (index 0 maps to
    /// symbol -1) and static unit channels on path one only. Used by tests.
    pub fn from_symbols(ensemble: &UserEnsemble, symbols: Vec<Vec<Cx>>, modulation: Modulation) -> Self {
        let span = symbols[0].len();
        let num_symbols = span - 2;
        let fading = ensemble
            .users
            .iter()
            .map(|u| FadingProcess {
                normalized_doppler: 0.0,
                gains: vec![vec![Cx::new(1.0, 0.0); span]; u.channel.num_paths()],
            })
            .collect();
        RunRealization {
            num_symbols,
            modulation,
            normalized_doppler: 0.0,
            symbols,
            fading,
            channels: ensemble.users.iter().map(|u| u.channel.clone()).collect(),
        }
    }

    pub fn symbol(&self, user: usize, i: isize) -> Cx {
        self.symbols[user][(i + 1) as usize]
    }

    /// Dense L_p channel tap vector of `user` at symbol `i`.
    pub fn taps(&self, user: usize, i: isize) -> Vec<Cx> {
        let idx = (i + 1) as usize;
        let gains: Vec<Cx> = self.fading[user]
            .gains
            .iter()
            .map(|track| track[idx])
            .collect();
        self.channels[user].taps(&gains)
    }
}

/// One received window.
#[derive(Debug, Clone)]
pub struct ReceivedFrame {
    pub r: Vec<Cx>,
    /// Desired user's transmitted symbol at this index.
    pub truth: Cx,
    pub noise_var: f64,
}

/// Synthesize the chip-rate window at symbol `i`:
/// current symbols plus ISI tails/heads from the neighbors plus noise.
pub fn synthesize_received(
    ensemble: &UserEnsemble,
    run: &RunRealization,
    i: usize,
    noise_var: f64,
    noise_rng: &mut ChaCha8Rng,
) -> ReceivedFrame {
    let n = ensemble.n_chips;
    let l_p = ensemble.l_p;
    let m = n + l_p - 1;
    let mut r = vec![Cx::new(0.0, 0.0); m];
    let i = i as isize;

    for (k, user) in ensemble.users.iter().enumerate() {
        let a = user.amplitude;
        // Current symbol: full effective signature.
        let h_now = run.taps(k, i);
        add_scaled_signature(&mut r, &user.code, &h_now, a * run.symbol(k, i), 0, m);
        if l_p > 1 {
            // Previous symbol: its convolution tail lands in the first
            // L_p - 1 window positions (shift by -N).
            let h_prev = run.taps(k, i - 1);
            add_shifted_tail(&mut r, &user.code, &h_prev, a * run.symbol(k, i - 1), n, m, true);
            // Next symbol: its head lands in the last L_p - 1 positions.
            let h_next = run.taps(k, i + 1);
            add_shifted_tail(&mut r, &user.code, &h_next, a * run.symbol(k, i + 1), n, m, false);
        }
    }

    for v in &mut r {
        *v += complex_normal(noise_rng, noise_var);
    }

    ReceivedFrame {
        r,
        truth: run.symbol(0, i),
        noise_var,
    }
}

/// r += scale * (code convolved with taps), starting at window offset.
fn add_scaled_signature(
    r: &mut [Cx],
    code: &SpreadingCode,
    taps: &[Cx],
    scale: Cx,
    offset: usize,
    m: usize,
) {
    for (delay, &tap) in taps.iter().enumerate() {
        if tap == Cx::new(0.0, 0.0) {
            continue;
        }
        let coef = scale * tap;
        for (c, &chip) in code.chips.iter().enumerate() {
            let idx = offset + delay + c;
            if idx < m {
                r[idx] += coef * chip;
            }
        }
    }
}

/// Fold the neighbor symbol's chip-level convolution into the window.
/// `prev = true` shifts the signature up by N chips (tail of symbol i-1);
/// otherwise down by N chips (head of symbol i+1).
fn add_shifted_tail(
    r: &mut [Cx],
    code: &SpreadingCode,
    taps: &[Cx],
    scale: Cx,
    n: usize,
    m: usize,
    prev: bool,
) {
    for (delay, &tap) in taps.iter().enumerate() {
        if tap == Cx::new(0.0, 0.0) {
            continue;
        }
        let coef = scale * tap;
        for (c, &chip) in code.chips.iter().enumerate() {
            let pos = delay + c; // position within the signature
            if prev {
                // signature index pos maps to window index pos - N
                if pos >= n && pos - n < m {
                    r[pos - n] += coef * chip;
                }
            } else {
                // signature index pos maps to window index pos + N
                if pos + n < m {
                    r[pos + n] += coef * chip;
                }
            }
        }
    }
}
