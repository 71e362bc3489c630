//! Deterministic seeded Monte Carlo execution.
//!
//! Every random draw descends from `(master_seed, grid index, run index)`
//! through a fixed mixing function, so runs are reproducible individually
//! and identical whether executed serially or on a worker pool.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::barc::{gen_patterns, BarcParams, BarcState};
use crate::baselines::{
    build_true_covariance, detect_bpsk, detect_qpsk, mmse_oracle, normalized_channel,
    output_sinr, ChannelTracker, FullRankState,
};
use crate::chanmodel::{
    derive_seed, draw_user_ensemble, synthesize_received, Modulation, RunRealization,
};
use crate::error::{Error, Result};
use crate::harness::config::{Algorithm, BranchSelector, ChannelMode, ExperimentConfig, StudyKind};
use crate::harness::metrics::{binomial_se, bit_errors, bits_per_symbol};
use crate::numerics::{inner, Cx};
use crate::selection::{ExtendedState, SnbController};

/// Aggregate for one grid point.
#[derive(Debug, Clone, Serialize)]
pub struct PointResult {
    pub axis: String,
    pub value: f64,
    pub ebn0_db: f64,
    pub sigma2: f64,
    pub k: usize,
    pub d: usize,
    pub i_len: usize,
    pub b: usize,
    pub selector: Option<BranchSelector>,
    pub ber: Option<f64>,
    pub ber_se: f64,
    pub bit_errors: u64,
    pub bits: u64,
    pub b_avg: Option<f64>,
    pub selected_d: Option<f64>,
    pub selected_i: Option<f64>,
    pub degenerate_runs: usize,
    pub wall_ms: f64,
    pub run_seeds: Vec<u64>,
    pub per_run_ber: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sinr_db_trajectory: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub order_trajectory: Option<Vec<(usize, usize)>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResults {
    pub config: ExperimentConfig,
    pub points: Vec<PointResult>,
}

/// Scalars resolved for one grid point.
#[derive(Debug, Clone)]
struct PointSetup {
    axis: &'static str,
    value: f64,
    k: usize,
    d: usize,
    i_len: usize,
    b: usize,
    ebn0_db: f64,
    sigma2: f64,
    selector: Option<BranchSelector>,
}

fn base_setup(cfg: &ExperimentConfig) -> PointSetup {
    let snr = cfg.snr_grid()[0];
    PointSetup {
        axis: "ebn0_db",
        value: snr,
        k: cfg.k,
        d: cfg.d,
        i_len: cfg.i_len,
        b: cfg.b,
        ebn0_db: snr,
        sigma2: cfg.sigma2_for(snr),
        selector: None,
    }
}

fn grid_points(cfg: &ExperimentConfig) -> Vec<PointSetup> {
    let base = base_setup(cfg);
    match cfg.study {
        StudyKind::BerVsSnr => cfg
            .snr_grid()
            .iter()
            .map(|&snr| PointSetup {
                axis: "ebn0_db",
                value: snr,
                ebn0_db: snr,
                sigma2: cfg.sigma2_for(snr),
                ..base.clone()
            })
            .collect(),
        StudyKind::BerVsRank => cfg
            .rank_grid
            .as_ref()
            .unwrap()
            .iter()
            .map(|&d| PointSetup {
                axis: "d",
                value: d as f64,
                d,
                ..base.clone()
            })
            .collect(),
        StudyKind::BerVsInterpRank => cfg
            .interp_grid
            .as_ref()
            .unwrap()
            .iter()
            .map(|&i| PointSetup {
                axis: "i_len",
                value: i as f64,
                i_len: i,
                ..base.clone()
            })
            .collect(),
        StudyKind::BerVsBranches => cfg
            .branch_grid
            .as_ref()
            .unwrap()
            .iter()
            .map(|&b| PointSetup {
                axis: "b",
                value: b as f64,
                b,
                ..base.clone()
            })
            .collect(),
        StudyKind::BerVsUsers => cfg
            .users_grid
            .as_ref()
            .unwrap()
            .iter()
            .map(|&k| PointSetup {
                axis: "k",
                value: k as f64,
                k,
                ..base.clone()
            })
            .collect(),
        StudyKind::BranchSelection => [BranchSelector::Fixed, BranchSelector::Snb, BranchSelector::SnbS]
            .iter()
            .enumerate()
            .map(|(idx, &sel)| PointSetup {
                axis: "selector",
                value: idx as f64,
                b: cfg.b_max,
                selector: Some(sel),
                ..base.clone()
            })
            .collect(),
        // Single-pass studies expose one logical point; ber_vs_symbols rows
        // are expanded from the checkpoint counters afterwards.
        StudyKind::BerVsSymbols | StudyKind::OrderSelection => vec![base],
    }
}

/// Per-run tallies.
#[derive(Debug, Clone, Default)]
struct RunStats {
    bit_errors: u64,
    bits: u64,
    b_avg: Option<f64>,
    final_d: Option<usize>,
    final_i: Option<usize>,
    degenerate: bool,
    checkpoint_counts: Vec<(u64, u64)>,
    sinr: Vec<f64>,
    order_trajectory: Vec<(usize, usize)>,
}

enum Receiver {
    Barc(BarcState),
    Extended(Box<ExtendedState>),
    Full(FullRankState),
    Mmse {
        w: Option<Vec<Cx>>,
    },
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResults> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;

    let setups = grid_points(cfg);
    let mut points = Vec::new();
    for (grid_idx, setup) in setups.iter().enumerate() {
        let start = std::time::Instant::now();
        let stats: Vec<RunStats> = pool.install(|| {
            (0..cfg.num_runs)
                .into_par_iter()
                .map(|run_idx| single_run(cfg, setup, grid_idx as u64, run_idx as u64))
                .collect::<Result<Vec<_>>>()
        })?;
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;
        if cfg.study == StudyKind::BerVsSymbols {
            points.extend(expand_checkpoints(cfg, setup, grid_idx as u64, &stats, wall_ms));
        } else {
            points.push(aggregate(cfg, setup, grid_idx as u64, &stats, wall_ms));
        }
    }
    Ok(ExperimentResults {
        config: cfg.clone(),
        points,
    })
}

fn run_seed(cfg: &ExperimentConfig, grid_idx: u64, run_idx: u64) -> u64 {
    derive_seed(cfg.master_seed, &[grid_idx, run_idx])
}

fn aggregate(
    cfg: &ExperimentConfig,
    setup: &PointSetup,
    grid_idx: u64,
    stats: &[RunStats],
    wall_ms: f64,
) -> PointResult {
    let bit_errors: u64 = stats.iter().map(|s| s.bit_errors).sum();
    let bits: u64 = stats.iter().map(|s| s.bits).sum();
    let ber = if bits > 0 {
        Some(bit_errors as f64 / bits as f64)
    } else {
        None
    };
    let b_avgs: Vec<f64> = stats.iter().filter_map(|s| s.b_avg).collect();
    let ds: Vec<usize> = stats.iter().filter_map(|s| s.final_d).collect();
    let is: Vec<usize> = stats.iter().filter_map(|s| s.final_i).collect();
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let sinr = average_trajectories(stats.iter().map(|s| s.sinr.as_slice()));
    let order_trajectory = stats
        .first()
        .filter(|s| !s.order_trajectory.is_empty())
        .map(|s| s.order_trajectory.clone());
    PointResult {
        axis: setup.axis.to_string(),
        value: setup.value,
        ebn0_db: setup.ebn0_db,
        sigma2: setup.sigma2,
        k: setup.k,
        d: setup.d,
        i_len: setup.i_len,
        b: setup.b,
        selector: setup.selector,
        ber,
        ber_se: ber.map(|p| binomial_se(p, bits)).unwrap_or(f64::NAN),
        bit_errors,
        bits,
        b_avg: if b_avgs.is_empty() { None } else { Some(mean(&b_avgs)) },
        selected_d: if ds.is_empty() {
            None
        } else {
            Some(ds.iter().sum::<usize>() as f64 / ds.len() as f64)
        },
        selected_i: if is.is_empty() {
            None
        } else {
            Some(is.iter().sum::<usize>() as f64 / is.len() as f64)
        },
        degenerate_runs: stats.iter().filter(|s| s.degenerate).count(),
        wall_ms,
        run_seeds: (0..stats.len())
            .map(|r| run_seed(cfg, grid_idx, r as u64))
            .collect(),
        per_run_ber: stats
            .iter()
            .map(|s| {
                if s.bits > 0 {
                    s.bit_errors as f64 / s.bits as f64
                } else {
                    f64::NAN
                }
            })
            .collect(),
        sinr_db_trajectory: sinr,
        order_trajectory,
    }
}

fn average_trajectories<'a>(trajectories: impl Iterator<Item = &'a [f64]>) -> Option<Vec<f64>> {
    let mut acc: Vec<f64> = Vec::new();
    let mut count = 0usize;
    for t in trajectories {
        if t.is_empty() {
            continue;
        }
        if acc.is_empty() {
            acc = t.to_vec();
        } else {
            let len = acc.len().min(t.len());
            acc.truncate(len);
            for (a, &x) in acc.iter_mut().zip(t) {
                *a += x;
            }
        }
        count += 1;
    }
    if count == 0 {
        return None;
    }
    for a in &mut acc {
        *a /= count as f64;
    }
    Some(acc)
}

fn expand_checkpoints(
    cfg: &ExperimentConfig,
    setup: &PointSetup,
    grid_idx: u64,
    stats: &[RunStats],
    wall_ms: f64,
) -> Vec<PointResult> {
    let checkpoints = cfg.symbol_checkpoints.as_ref().unwrap();
    checkpoints
        .iter()
        .enumerate()
        .map(|(ci, &symbols)| {
            let bit_errors: u64 = stats.iter().map(|s| s.checkpoint_counts[ci].0).sum();
            let bits: u64 = stats.iter().map(|s| s.checkpoint_counts[ci].1).sum();
            let ber = if bits > 0 {
                Some(bit_errors as f64 / bits as f64)
            } else {
                None
            };
            PointResult {
                axis: "symbols".to_string(),
                value: symbols as f64,
                ebn0_db: setup.ebn0_db,
                sigma2: setup.sigma2,
                k: setup.k,
                d: setup.d,
                i_len: setup.i_len,
                b: setup.b,
                selector: None,
                ber,
                ber_se: ber.map(|p| binomial_se(p, bits)).unwrap_or(f64::NAN),
                bit_errors,
                bits,
                b_avg: None,
                selected_d: None,
                selected_i: None,
                degenerate_runs: stats.iter().filter(|s| s.degenerate).count(),
                wall_ms,
                run_seeds: (0..stats.len())
                    .map(|r| run_seed(cfg, grid_idx, r as u64))
                    .collect(),
                per_run_ber: Vec::new(),
                sinr_db_trajectory: None,
                order_trajectory: None,
            }
        })
        .collect()
}

/// Branch CM errors rescaled to the unit-response scale
/// (`|z/nu|^2 - 1`), matching the threshold calibration.
fn normalize_costs(errors: Vec<f64>, nu: f64) -> Vec<f64> {
    errors
        .into_iter()
        .map(|e| {
            if e.is_finite() {
                (e + 1.0) / (nu * nu) - 1.0
            } else {
                e
            }
        })
        .collect()
}

/// Convolve the scattered reduced-rank weights with the interpolator to
/// recover the equivalent full-length filter `S_D w`.
fn full_filter(v: &[Cx], offsets: &[usize], w: &[Cx], m: usize) -> Vec<Cx> {
    let mut scattered = vec![Cx::new(0.0, 0.0); m];
    for (j, &off) in offsets.iter().enumerate() {
        scattered[off] = w[j];
    }
    let mut out = vec![Cx::new(0.0, 0.0); m];
    for (row, item) in out.iter_mut().enumerate() {
        for (tap, &vj) in v.iter().enumerate() {
            if row >= tap {
                *item += vj * scattered[row - tap];
            }
        }
    }
    out
}

fn single_run(
    cfg: &ExperimentConfig,
    setup: &PointSetup,
    grid_idx: u64,
    run_idx: u64,
) -> Result<RunStats> {
    let seed = run_seed(cfg, grid_idx, run_idx);
    let ensemble = draw_user_ensemble(
        setup.k,
        cfg.n,
        cfg.l_p,
        cfg.power_std_db,
        derive_seed(seed, &[1]),
    )?;
    let run = RunRealization::generate(
        &ensemble,
        cfg.num_symbols,
        cfg.modulation,
        cfg.fd_t,
        derive_seed(seed, &[2]),
    )?;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[3]));
    let m = cfg.m();
    let params = BarcParams {
        nu: cfg.nu,
        delta_v: cfg.delta_v,
        delta_w: cfg.delta_w,
        rho_v: cfg.rho_v,
        rho_w: cfg.rho_w,
    };

    // Initial signature: genie uses the true symbol-0 channel; blind starts
    // from a single-tap assumption until the tracker has data.
    let desired = &ensemble.users[0];
    let genie_p = |i: usize| -> Vec<Cx> {
        let h = normalized_channel(&run.taps(0, i as isize));
        desired.constraint.matrix.matvec(&h)
    };
    let mut p_hat = match cfg.channel_mode {
        ChannelMode::Genie => genie_p(0),
        ChannelMode::Blind => {
            let mut e1 = vec![Cx::new(0.0, 0.0); cfg.l_p];
            e1[0] = Cx::new(1.0, 0.0);
            desired.constraint.matrix.matvec(&e1)
        }
    };

    let pattern_seed = derive_seed(seed, &[4]);
    let mut receiver = match cfg.algorithm {
        Algorithm::BarcSg | Algorithm::BarcRls => {
            if cfg.study == StudyKind::OrderSelection {
                let bank = gen_patterns(cfg.scheme, m, cfg.rank_range.d_max, setup.b, pattern_seed)?;
                let state = BarcState::new(bank, cfg.rank_range.i_max, &p_hat, params)?;
                Receiver::Extended(Box::new(ExtendedState::new(state, cfg.rank_range)?))
            } else {
                let bank = gen_patterns(cfg.scheme, m, setup.d, setup.b, pattern_seed)?;
                Receiver::Barc(BarcState::new(bank, setup.i_len, &p_hat, params)?)
            }
        }
        Algorithm::FullrankSg | Algorithm::FullrankRls => {
            Receiver::Full(FullRankState::new(m, &p_hat, params)?)
        }
        Algorithm::Mmse => Receiver::Mmse { w: None },
    };

    let mut tracker = ChannelTracker::new(m, cfg.alpha);

    // rho calibration for the branch-count selectors: mean CM cost of the
    // genie MMSE receiver over the training prefix.
    let mut snb: Option<SnbController> = None;
    let mut calib_w: Option<Vec<Cx>> = None;
    let mut mmse_cm_cost = 0.0f64;
    let mut mmse_cm_count = 0u64;

    let mut stats = RunStats::default();
    let checkpoints = if cfg.study == StudyKind::BerVsSymbols {
        cfg.symbol_checkpoints.clone().unwrap_or_default()
    } else {
        Vec::new()
    };
    let mut next_checkpoint = 0usize;
    let track_every = 10usize;

    for i in 0..cfg.num_symbols {
        let frame = synthesize_received(&ensemble, &run, i, setup.sigma2, &mut noise_rng);

        // Signature update.
        match cfg.channel_mode {
            ChannelMode::Genie => {
                if cfg.fd_t > 0.0 || i == 0 {
                    p_hat = genie_p(i);
                }
            }
            ChannelMode::Blind => {
                tracker.update(&frame.r)?;
                let warm_ready = i >= 8;
                if warm_ready {
                    // Every receiver estimates from the plain covariance
                    // tracker. The weighted inverse the constrained RLS
                    // recursion maintains is a poor estimation statistic
                    // before the filter converges (bad estimates feed bad
                    // weights, which feed worse estimates).
                    let est = tracker.estimate(&desired.constraint)?;
                    p_hat = desired.constraint.matrix.matvec(&est.h_hat);
                }
            }
        }

        // MMSE calibration output (only when a selector needs it).
        if setup.selector.map_or(false, |s| s != BranchSelector::Fixed) && i < cfg.training_prefix
        {
            if calib_w.is_none() || cfg.fd_t > 0.0 {
                let cov = build_true_covariance(&ensemble, &run, i);
                let p_true: Vec<Cx> = desired
                    .constraint
                    .matrix
                    .matvec(&run.taps(0, i as isize));
                calib_w = Some(mmse_oracle(&cov, &p_true, setup.sigma2, cfg.nu)?);
            }
            // CM cost on the unit-response scale (z has desired response
            // nu), so the threshold is comparable across nu choices.
            let z = inner(calib_w.as_ref().unwrap(), &frame.r) / cfg.nu;
            let e = z.norm_sqr() - 1.0;
            mmse_cm_cost += e * e;
            mmse_cm_count += 1;
        }
        if let Some(sel) = setup.selector {
            if sel != BranchSelector::Fixed && i == cfg.training_prefix && snb.is_none() {
                let rho = cfg.rho_multiplier * mmse_cm_cost / mmse_cm_count.max(1) as f64;
                snb = Some(SnbController::new(
                    setup.b,
                    rho,
                    cfg.b_max,
                    sel == BranchSelector::SnbS,
                ));
            }
        }

        // One adaptation step; degenerate constraints end the run early and
        // are surfaced in the aggregate.
        let z = match &mut receiver {
            Receiver::Barc(state) => {
                let step = match (&mut snb, cfg.algorithm) {
                    (Some(ctl), Algorithm::BarcRls) => {
                        let costs = normalize_costs(state.rls_branch_costs(&p_hat, &frame.r), cfg.nu);
                        let branch = ctl.step(&costs);
                        state.rls_step_on_branch(&p_hat, &frame.r, branch, cfg.alpha)
                    }
                    (Some(ctl), _) => {
                        let costs = normalize_costs(state.sg_branch_costs(&p_hat, &frame.r), cfg.nu);
                        let branch = ctl.step(&costs);
                        state.sg_step_on_branch(&p_hat, &frame.r, branch, cfg.mu_v, cfg.mu_w)
                    }
                    (None, Algorithm::BarcRls) => state.rls_step(&p_hat, &frame.r, cfg.alpha),
                    (None, _) => state.sg_step(&p_hat, &frame.r, cfg.mu_v, cfg.mu_w),
                };
                match step {
                    Ok(out) => out.z_detect,
                    Err(Error::DegenerateConstraint { .. }) => {
                        stats.degenerate = true;
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
            Receiver::Extended(ext) => {
                let reselect = i < cfg.auto_rank_freeze;
                let step = if cfg.algorithm == Algorithm::BarcRls {
                    ext.rls_step(&p_hat, &frame.r, cfg.alpha, reselect)
                } else {
                    ext.sg_step(&p_hat, &frame.r, cfg.mu_v, cfg.mu_w, cfg.alpha, reselect)
                };
                match step {
                    Ok((z, _)) => {
                        if i % track_every == 0 {
                            stats.order_trajectory.push(ext.selected);
                        }
                        z
                    }
                    Err(Error::DegenerateConstraint { .. }) => {
                        stats.degenerate = true;
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
            Receiver::Full(state) => {
                let step = if cfg.algorithm == Algorithm::FullrankRls {
                    state.rls_step(&frame.r, &p_hat, cfg.alpha)
                } else {
                    state.sg_step(&frame.r, &p_hat, cfg.mu_w)
                };
                match step {
                    Ok(out) => out.z,
                    Err(Error::DegenerateConstraint { .. }) => {
                        stats.degenerate = true;
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
            Receiver::Mmse { w } => {
                if w.is_none() || cfg.fd_t > 0.0 {
                    let cov = build_true_covariance(&ensemble, &run, i);
                    let p_true = desired.constraint.matrix.matvec(&run.taps(0, i as isize));
                    *w = Some(mmse_oracle(&cov, &p_true, setup.sigma2, cfg.nu)?);
                }
                inner(w.as_ref().unwrap(), &frame.r)
            }
        };

        // Detection after the transient.
        if i >= cfg.training_prefix {
            let phase_ref = match cfg.algorithm {
                Algorithm::Mmse => Cx::new(1.0, 0.0),
                _ => run.taps(0, i as isize)[0],
            };
            let detected = match cfg.modulation {
                Modulation::Qpsk => detect_qpsk(z, phase_ref)?,
                Modulation::Bpsk => detect_bpsk(z, phase_ref)?,
            };
            stats.bit_errors += bit_errors(detected, frame.truth, cfg.modulation);
            stats.bits += bits_per_symbol(cfg.modulation);
        }

        // SINR trajectory.
        if cfg.track_sinr && i % track_every == 0 {
            let w_full = match &receiver {
                Receiver::Barc(state) => {
                    let branch = state
                        .bank
                        .usage_counts
                        .iter()
                        .enumerate()
                        .max_by_key(|(_, &c)| c)
                        .map(|(b, _)| b)
                        .unwrap_or(0);
                    Some(full_filter(
                        &state.v,
                        &state.bank.patterns[branch].offsets,
                        &state.w,
                        m,
                    ))
                }
                Receiver::Extended(ext) => Some(full_filter(
                    &ext.state.v,
                    &ext.state.bank.patterns[0].offsets,
                    &ext.state.w,
                    m,
                )),
                Receiver::Full(state) => Some(state.weights().to_vec()),
                Receiver::Mmse { w } => w.clone(),
            };
            if let Some(w_full) = w_full {
                let p_true = desired.constraint.matrix.matvec(&run.taps(0, i as isize));
                let a1 = desired.amplitude;
                let mut r_in = build_true_covariance(&ensemble, &run, i);
                r_in.add_outer(-(a1 * a1), &p_true, &p_true);
                let sinr = output_sinr(&w_full, &p_true, a1, &r_in, setup.sigma2);
                stats.sinr.push(10.0 * sinr.max(1e-12).log10());
            }
        }

        // Checkpoint snapshots.
        while next_checkpoint < checkpoints.len() && i + 1 == checkpoints[next_checkpoint] {
            stats
                .checkpoint_counts
                .push((stats.bit_errors, stats.bits));
            next_checkpoint += 1;
        }
    }

    // A degenerate run still reports the checkpoints it reached.
    while next_checkpoint < checkpoints.len() {
        stats
            .checkpoint_counts
            .push((stats.bit_errors, stats.bits));
        next_checkpoint += 1;
    }

    if let Some(ctl) = &snb {
        if !ctl.history.is_empty() {
            stats.b_avg = Some(ctl.b_avg());
        }
    } else if setup.selector == Some(BranchSelector::Fixed) {
        stats.b_avg = Some(setup.b as f64);
    }
    if let Receiver::Extended(ext) = &receiver {
        stats.final_d = Some(ext.selected.0);
        stats.final_i = Some(ext.selected.1);
    }
    Ok(stats)
}

/// Serial reference implementation of [`run_experiment`]; used to verify
/// that pool execution never changes the aggregates.
pub fn run_experiment_serial(cfg: &ExperimentConfig) -> Result<ExperimentResults> {
    let mut serial = cfg.clone();
    serial.threads = 1;
    run_experiment(&serial)
}
