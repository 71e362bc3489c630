//! Experiment configuration: JSON-backed, validated field by field.

use serde::{Deserialize, Serialize};

use crate::barc::DecimationScheme;
use crate::chanmodel::Modulation;
use crate::error::{Error, Result};
use crate::numerics::binomial;
use crate::selection::RankRange;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    BerVsRank,
    BerVsInterpRank,
    BerVsSymbols,
    BerVsBranches,
    BerVsSnr,
    BerVsUsers,
    OrderSelection,
    BranchSelection,
}

impl StudyKind {
    pub fn all() -> &'static [StudyKind] {
        &[
            StudyKind::BerVsRank,
            StudyKind::BerVsInterpRank,
            StudyKind::BerVsSymbols,
            StudyKind::BerVsBranches,
            StudyKind::BerVsSnr,
            StudyKind::BerVsUsers,
            StudyKind::OrderSelection,
            StudyKind::BranchSelection,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            StudyKind::BerVsRank => "ber_vs_rank",
            StudyKind::BerVsInterpRank => "ber_vs_interp_rank",
            StudyKind::BerVsSymbols => "ber_vs_symbols",
            StudyKind::BerVsBranches => "ber_vs_branches",
            StudyKind::BerVsSnr => "ber_vs_snr",
            StudyKind::BerVsUsers => "ber_vs_users",
            StudyKind::OrderSelection => "order_selection",
            StudyKind::BranchSelection => "branch_selection",
        }
    }

    pub fn parse(name: &str) -> Result<StudyKind> {
        Self::all()
            .iter()
            .copied()
            .find(|s| s.name() == name)
            .ok_or_else(|| Error::config("study", format!("unknown study `{name}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    BarcSg,
    BarcRls,
    FullrankSg,
    FullrankRls,
    Mmse,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::BarcSg => "barc_sg",
            Algorithm::BarcRls => "barc_rls",
            Algorithm::FullrankSg => "fullrank_sg",
            Algorithm::FullrankRls => "fullrank_rls",
            Algorithm::Mmse => "mmse",
        }
    }

    pub fn is_reduced_rank(&self) -> bool {
        matches!(self, Algorithm::BarcSg | Algorithm::BarcRls)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    Genie,
    Blind,
}

/// Branch-count selector for the `branch_selection` study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchSelector {
    Fixed,
    Snb,
    SnbS,
}

impl BranchSelector {
    pub fn name(&self) -> &'static str {
        match self {
            BranchSelector::Fixed => "fixed",
            BranchSelector::Snb => "snb",
            BranchSelector::SnbS => "snb_s",
        }
    }
}

fn default_n() -> usize {
    32
}
fn default_lp() -> usize {
    9
}
fn default_k() -> usize {
    8
}
fn default_ebn0() -> Vec<f64> {
    vec![12.0]
}
fn default_fd_t() -> f64 {
    0.0005
}
fn default_num_symbols() -> usize {
    1500
}
fn default_num_runs() -> usize {
    50
}
fn default_prefix() -> usize {
    500
}
fn default_algorithm() -> Algorithm {
    Algorithm::BarcRls
}
fn default_scheme() -> DecimationScheme {
    DecimationScheme::Prestored
}
fn default_b() -> usize {
    8
}
fn default_d() -> usize {
    5
}
fn default_i() -> usize {
    3
}
fn default_mu() -> f64 {
    0.002
}
fn default_alpha() -> f64 {
    0.998
}
fn default_nu() -> f64 {
    2.0
}
fn default_small() -> f64 {
    0.01
}
fn default_rho_multiplier() -> f64 {
    1.04
}
fn default_b_max() -> usize {
    16
}
fn default_channel_mode() -> ChannelMode {
    ChannelMode::Genie
}
fn default_modulation() -> Modulation {
    Modulation::Qpsk
}
fn default_power_std() -> f64 {
    1.5
}
fn default_seed() -> u64 {
    20_240_517
}
fn default_rank_range() -> RankRange {
    RankRange {
        d_min: 3,
        d_max: 6,
        i_min: 2,
        i_max: 6,
    }
}
fn default_freeze() -> usize {
    500
}

/// Full description of one Monte Carlo study.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub study: StudyKind,

    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_lp")]
    pub l_p: usize,
    #[serde(default = "default_k")]
    pub k: usize,

    /// Per-bit SNR grid in dB (desired user nominal unit energy).
    /// `ber_vs_snr` sweeps it; other studies use the first entry.
    #[serde(default = "default_ebn0")]
    pub ebn0_db: Vec<f64>,
    /// Alternative: symbol SNR in dB. When set, overrides `ebn0_db`.
    #[serde(default)]
    pub snr_db: Option<Vec<f64>>,

    #[serde(default = "default_fd_t")]
    pub fd_t: f64,
    #[serde(default = "default_num_symbols")]
    pub num_symbols: usize,
    #[serde(default = "default_num_runs")]
    pub num_runs: usize,
    /// Convergence transient excluded from BER counting.
    #[serde(default = "default_prefix")]
    pub training_prefix: usize,

    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    #[serde(default = "default_scheme")]
    pub scheme: DecimationScheme,
    #[serde(default = "default_b")]
    pub b: usize,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_i")]
    pub i_len: usize,

    #[serde(default = "default_mu")]
    pub mu_v: f64,
    #[serde(default = "default_mu")]
    pub mu_w: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(default = "default_small")]
    pub delta_v: f64,
    #[serde(default = "default_small")]
    pub delta_w: f64,
    #[serde(default = "default_small")]
    pub rho_v: f64,
    #[serde(default = "default_small")]
    pub rho_w: f64,

    #[serde(default = "default_rho_multiplier")]
    pub rho_multiplier: f64,
    #[serde(default = "default_b_max")]
    pub b_max: usize,

    #[serde(default = "default_channel_mode")]
    pub channel_mode: ChannelMode,
    #[serde(default = "default_modulation")]
    pub modulation: Modulation,
    #[serde(default = "default_power_std")]
    pub power_std_db: f64,
    #[serde(default = "default_seed")]
    pub master_seed: u64,

    /// Study grids; each study reads its own and ignores the rest.
    #[serde(default)]
    pub rank_grid: Option<Vec<usize>>,
    #[serde(default)]
    pub interp_grid: Option<Vec<usize>>,
    #[serde(default)]
    pub symbol_checkpoints: Option<Vec<usize>>,
    #[serde(default)]
    pub branch_grid: Option<Vec<usize>>,
    #[serde(default)]
    pub users_grid: Option<Vec<usize>>,

    #[serde(default = "default_rank_range")]
    pub rank_range: RankRange,
    /// Symbols after which the model order stays fixed.
    #[serde(default = "default_freeze")]
    pub auto_rank_freeze: usize,

    /// Worker threads (0 = rayon default).
    #[serde(default)]
    pub threads: usize,
    /// Record an averaged output-SINR trajectory (every 10th symbol).
    #[serde(default)]
    pub track_sinr: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{\"study\":\"ber_vs_snr\"}").expect("default config")
    }
}

impl ExperimentConfig {
    pub fn m(&self) -> usize {
        self.n + self.l_p - 1
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| Error::config("<json>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Noise variance for a grid SNR value, against nominal unit desired
    /// energy: `Eb/N0 = 1 / (2 sigma^2)` for QPSK, `Es/N0 = 1 / sigma^2`.
    pub fn sigma2_for(&self, point_db: f64) -> f64 {
        match (&self.snr_db, self.modulation) {
            (Some(_), _) => 10f64.powf(-point_db / 10.0),
            (None, Modulation::Qpsk) => 10f64.powf(-point_db / 10.0) / 2.0,
            (None, Modulation::Bpsk) => 10f64.powf(-point_db / 10.0) / 2.0,
        }
    }

    /// The SNR-axis grid (Eb/N0 unless `snr_db` is set).
    pub fn snr_grid(&self) -> &[f64] {
        match &self.snr_db {
            Some(grid) => grid,
            None => &self.ebn0_db,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, msg: String| Err(Error::config(field, msg));
        if self.n == 0 {
            return fail("n", "must be >= 1".to_string());
        }
        if self.l_p == 0 {
            return fail("l_p", "must be >= 1".to_string());
        }
        if self.k == 0 {
            return fail("k", "must be >= 1".to_string());
        }
        if self.num_runs == 0 {
            return fail("num_runs", "must be >= 1".to_string());
        }
        if self.snr_grid().is_empty() {
            return fail("ebn0_db", "grid must be nonempty".to_string());
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return fail("alpha", format!("must be in (0, 1], got {}", self.alpha));
        }
        if self.mu_v < 0.0 || self.mu_w < 0.0 {
            return fail("mu_v", "step sizes must be nonnegative".to_string());
        }
        if self.fd_t < 0.0 {
            return fail("fd_t", "normalized Doppler must be >= 0".to_string());
        }
        if self.nu <= 0.0 {
            return fail("nu", "constraint constant must be positive".to_string());
        }
        if self.rho_multiplier <= 0.0 {
            return fail("rho_multiplier", "must be positive".to_string());
        }
        let m = self.m();
        let check_rank = |field: &str, d: usize| -> Result<()> {
            if d == 0 || d > m {
                return Err(Error::config(
                    field,
                    format!("rank {d} outside [1, {m}] for N={} L_p={}", self.n, self.l_p),
                ));
            }
            Ok(())
        };
        check_rank("d", self.d)?;
        if self.i_len == 0 || self.i_len > m {
            return fail("i_len", format!("must be in [1, {m}]"));
        }
        if self.algorithm.is_reduced_rank() {
            self.check_bank("b", self.scheme, self.d, self.b)?;
        }
        match self.study {
            StudyKind::BerVsRank => {
                let grid = self
                    .rank_grid
                    .as_ref()
                    .ok_or_else(|| Error::config("rank_grid", "required for ber_vs_rank".to_string()))?;
                if grid.is_empty() {
                    return fail("rank_grid", "must be nonempty".to_string());
                }
                for &d in grid {
                    check_rank("rank_grid", d)?;
                    self.check_bank("rank_grid", self.scheme, d, self.b)?;
                }
            }
            StudyKind::BerVsInterpRank => {
                let grid = self.interp_grid.as_ref().ok_or_else(|| {
                    Error::config("interp_grid", "required for ber_vs_interp_rank".to_string())
                })?;
                if grid.is_empty() || grid.iter().any(|&i| i == 0 || i > m) {
                    return fail("interp_grid", format!("entries must be in [1, {m}]"));
                }
            }
            StudyKind::BerVsSymbols => {
                let grid = self.symbol_checkpoints.as_ref().ok_or_else(|| {
                    Error::config("symbol_checkpoints", "required for ber_vs_symbols".to_string())
                })?;
                if grid.is_empty() || grid.windows(2).any(|w| w[0] >= w[1]) {
                    return fail("symbol_checkpoints", "must be strictly increasing".to_string());
                }
                if *grid.last().unwrap() > self.num_symbols {
                    return fail(
                        "symbol_checkpoints",
                        "checkpoints exceed num_symbols".to_string(),
                    );
                }
            }
            StudyKind::BerVsBranches => {
                let grid = self.branch_grid.as_ref().ok_or_else(|| {
                    Error::config("branch_grid", "required for ber_vs_branches".to_string())
                })?;
                if grid.is_empty() {
                    return fail("branch_grid", "must be nonempty".to_string());
                }
                for &b in grid {
                    self.check_bank("branch_grid", self.scheme, self.d, b)?;
                }
            }
            StudyKind::BerVsUsers => {
                let grid = self.users_grid.as_ref().ok_or_else(|| {
                    Error::config("users_grid", "required for ber_vs_users".to_string())
                })?;
                if grid.is_empty() || grid.iter().any(|&k| k == 0) {
                    return fail("users_grid", "entries must be >= 1".to_string());
                }
            }
            StudyKind::OrderSelection => {
                self.rank_range
                    .validate()
                    .map_err(|e| Error::config("rank_range", e.to_string()))?;
                if self.rank_range.d_max > m {
                    return fail("rank_range", format!("d_max exceeds M = {m}"));
                }
                if !self.algorithm.is_reduced_rank() {
                    return fail(
                        "algorithm",
                        "order_selection requires barc_sg or barc_rls".to_string(),
                    );
                }
                self.check_bank("b", self.scheme, self.rank_range.d_max, self.b)?;
            }
            StudyKind::BranchSelection => {
                if self.b_max == 0 {
                    return fail("b_max", "must be >= 1".to_string());
                }
                if !self.algorithm.is_reduced_rank() {
                    return fail(
                        "algorithm",
                        "branch_selection requires barc_sg or barc_rls".to_string(),
                    );
                }
                self.check_bank("b_max", self.scheme, self.d, self.b_max)?;
            }
            StudyKind::BerVsSnr => {}
        }
        Ok(())
    }

    fn check_bank(
        &self,
        field: &str,
        scheme: DecimationScheme,
        d: usize,
        b: usize,
    ) -> Result<()> {
        let m = self.m();
        match scheme {
            DecimationScheme::Prestored => {
                if b == 0 {
                    return Err(Error::config(field, "branch count must be >= 1".to_string()));
                }
                let l = m / d;
                let max_offset = (d - 1) * l + (b - 1);
                if max_offset >= m {
                    return Err(Error::config(
                        field,
                        format!(
                            "prestored bank with D={d}, B={b} needs offset {max_offset} >= M={m}"
                        ),
                    ));
                }
            }
            DecimationScheme::Random => {
                if b == 0 {
                    return Err(Error::config(field, "branch count must be >= 1".to_string()));
                }
            }
            DecimationScheme::Uniform => {}
            DecimationScheme::Optimal => {
                let count = binomial(m as u64, d as u64);
                if count > crate::barc::OPTIMAL_PATTERN_CAP {
                    return Err(Error::config(
                        field,
                        format!(
                            "optimal bank would hold {count} patterns (cap {})",
                            crate::barc::OPTIMAL_PATTERN_CAP
                        ),
                    ));
                }
            }
        }
        Ok(())
    }
}
