//! Result emission: CSV table, JSON sidecar and a gnuplot script.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::config::StudyKind;
use crate::harness::runner::{ExperimentResults, PointResult};

/// Column order of the CSV; one row per grid point.
pub const CSV_COLUMNS: &[&str] = &[
    "study",
    "algorithm",
    "scheme",
    "channel_mode",
    "modulation",
    "n",
    "l_p",
    "k",
    "b",
    "d",
    "i_len",
    "num_symbols",
    "num_runs",
    "training_prefix",
    "mu_v",
    "mu_w",
    "alpha",
    "nu",
    "fd_t",
    "power_std_db",
    "master_seed",
    "grid_axis",
    "grid_value",
    "ebn0_db",
    "sigma2",
    "selector",
    "ber",
    "ber_se",
    "bit_errors",
    "bits",
    "b_avg",
    "selected_d",
    "selected_i",
    "degenerate_runs",
    "wall_ms",
];

fn enum_name<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_value(value)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

fn csv_row(results: &ExperimentResults, point: &PointResult) -> String {
    let cfg = &results.config;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_else(|| "NA".into());
    let fields: Vec<String> = vec![
        cfg.study.name().into(),
        cfg.algorithm.name().into(),
        enum_name(&cfg.scheme),
        enum_name(&cfg.channel_mode),
        enum_name(&cfg.modulation),
        cfg.n.to_string(),
        cfg.l_p.to_string(),
        point.k.to_string(),
        point.b.to_string(),
        point.d.to_string(),
        point.i_len.to_string(),
        cfg.num_symbols.to_string(),
        cfg.num_runs.to_string(),
        cfg.training_prefix.to_string(),
        cfg.mu_v.to_string(),
        cfg.mu_w.to_string(),
        cfg.alpha.to_string(),
        cfg.nu.to_string(),
        cfg.fd_t.to_string(),
        cfg.power_std_db.to_string(),
        cfg.master_seed.to_string(),
        point.axis.clone(),
        point.value.to_string(),
        point.ebn0_db.to_string(),
        point.sigma2.to_string(),
        point
            .selector
            .map(|s| s.name().to_string())
            .unwrap_or_default(),
        opt(point.ber),
        point.ber_se.to_string(),
        point.bit_errors.to_string(),
        point.bits.to_string(),
        opt(point.b_avg),
        opt(point.selected_d),
        opt(point.selected_i),
        point.degenerate_runs.to_string(),
        point.wall_ms.to_string(),
    ];
    fields.join(",")
}

pub fn render_csv(results: &ExperimentResults) -> String {
    let mut out = String::new();
    out.push_str(&CSV_COLUMNS.join(","));
    out.push('\n');
    for point in &results.points {
        out.push_str(&csv_row(results, point));
        out.push('\n');
    }
    out
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Gnuplot script plotting BER against the study's grid axis.
pub fn render_plot_script(results: &ExperimentResults, csv_name: &str) -> String {
    let axis_col = CSV_COLUMNS.iter().position(|&c| c == "grid_value").unwrap() + 1;
    let ber_col = CSV_COLUMNS.iter().position(|&c| c == "ber").unwrap() + 1;
    let axis_label = results
        .points
        .first()
        .map(|p| p.axis.clone())
        .unwrap_or_else(|| "grid".into());
    let logx = matches!(results.config.study, StudyKind::BerVsSymbols);
    let mut s = String::new();
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set xlabel '{axis_label}'");
    let _ = writeln!(s, "set ylabel 'BER'");
    let _ = writeln!(s, "set logscale y");
    if logx {
        let _ = writeln!(s, "set logscale x");
    }
    let _ = writeln!(s, "set grid");
    let _ = writeln!(
        s,
        "set title '{} / {}'",
        results.config.study.name(),
        results.config.algorithm.name()
    );
    let _ = writeln!(
        s,
        "plot '{csv_name}' skip 1 using {axis_col}:{ber_col} with linespoints lw 2 title 'BER'"
    );
    let _ = writeln!(s, "pause -1 'press enter to close'");
    s
}

/// Write the CSV, a JSON sidecar with the resolved config and per-run
/// seeds, and optionally a gnuplot script. Returns the paths written.
pub fn emit_results(
    results: &ExperimentResults,
    out_dir: &Path,
    emit_plot: bool,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut written = Vec::new();

    let csv_path = out_dir.join("results.csv");
    std::fs::write(&csv_path, render_csv(results)).map_err(io_err(&csv_path))?;
    written.push(csv_path);

    let sidecar = serde_json::json!({
        "seed_derivation":
            "splitmix64 chain over (master_seed, grid_index, run_index); per-run streams tagged 1=ensemble 2=realization 3=noise 4=patterns",
        "ebn0_definition":
            "nominal desired-user energy of one (unit amplitude); sigma2 = 10^(-ebn0_db/10)/2 for QPSK, or 10^(-snr_db/10) when snr_db is given",
        "results": results,
    });
    let json_path = out_dir.join("sidecar.json");
    let text = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| Error::invalid(format!("sidecar serialization: {e}")))?;
    std::fs::write(&json_path, text).map_err(io_err(&json_path))?;
    written.push(json_path);

    if emit_plot {
        let plot_path = out_dir.join("plot.gp");
        std::fs::write(&plot_path, render_plot_script(results, "results.csv"))
            .map_err(io_err(&plot_path))?;
        written.push(plot_path);
    }
    Ok(written)
}
