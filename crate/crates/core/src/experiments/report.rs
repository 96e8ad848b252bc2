//! CSV outputs of the experiments. Floats carry 17 significant digits so that
//! reruns can be compared byte for byte.

use std::fs;
use std::path::Path;

use super::{AsLimitReport, ExperimentConfig, LimitLawReport, MeanSquareReport, RateReport, VariationReport};
use crate::error::Result;
use crate::output::{fmt_f64, write_csv_file};

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn kv(rows: &mut Vec<Vec<String>>, key: &str, value: String) {
    rows.push(vec![key.to_string(), value]);
}

fn config_rows(cfg: &ExperimentConfig) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    kv(&mut rows, "h", fmt_f64(cfg.h.value()));
    kv(&mut rows, "coefficients", serde_json::to_string(&cfg.coefficients).expect("serializes").replace(',', ";"));
    kv(&mut rows, "x0", fmt_f64(cfg.x0));
    kv(&mut rows, "scheme", cfg.scheme.name().into());
    kv(&mut rows, "statistic", cfg.statistic.name().into());
    kv(&mut rows, "n_paths", cfg.n_paths.to_string());
    kv(&mut rows, "master_seed", cfg.master_seed.to_string());
    kv(&mut rows, "refinement", cfg.refinement.to_string());
    rows
}

fn write_report(dir: &Path, rows: &[Vec<String>]) -> Result<()> {
    write_csv_file(dir.join("report.csv"), &["key", "value"], rows)?;
    Ok(())
}

/// `report.csv`, `samples.csv`, `ratecurve.csv` and a gnuplot script `ratecurve.gp`.
pub fn write_rate_outputs(dir: &Path, cfg: &ExperimentConfig, report: &RateReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut rows = config_rows(cfg);
    kv(&mut rows, "slope", fmt_f64(report.slope));
    kv(&mut rows, "slope_half_width", fmt_f64(report.slope_half_width));
    kv(&mut rows, "rate", fmt_f64(report.rate));
    kv(&mut rows, "theoretical_exponent", fmt_f64(report.theoretical_exponent));
    kv(&mut rows, "paths_used", report.paths_used.to_string());
    kv(&mut rows, "paths_failed", report.paths_failed.to_string());
    for row in &report.rows {
        kv(&mut rows, &format!("median_abs_error_n{}", row.n), fmt_f64(row.median));
    }
    write_report(dir, &rows)?;

    let samples: Vec<Vec<String>> = report
        .samples
        .iter()
        .map(|s| {
            vec![
                s.path_index.to_string(),
                s.n.to_string(),
                fmt_f64(s.raw_error),
                fmt_f64(s.normalized_error),
                opt(s.limit_value),
            ]
        })
        .collect();
    write_csv_file(
        dir.join("samples.csv"),
        &["path_index", "n", "raw_error", "normalized_error", "limit_value"],
        &samples,
    )?;

    let curve: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                fmt_f64((r.n as f64).log2()),
                fmt_f64(r.median.log2()),
                fmt_f64(r.q1.log2()),
                fmt_f64(r.q3.log2()),
            ]
        })
        .collect();
    write_csv_file(
        dir.join("ratecurve.csv"),
        &["log2n", "log2err_median", "log2err_q1", "log2err_q3"],
        &curve,
    )?;
    fs::write(dir.join("ratecurve.gp"), gnuplot_script(report))?;
    Ok(())
}

fn gnuplot_script(report: &RateReport) -> String {
    let intercept = report
        .rows
        .first()
        .map(|r| r.median.log2() - report.slope * (r.n as f64).log2())
        .unwrap_or(0.0);
    format!(
        "set datafile separator ','\n\
         set key top right\n\
         set xlabel 'log2 n'\n\
         set ylabel 'log2 |error|'\n\
         set title '{scheme}: fitted rate {rate:.4} (theory {theory:.4})'\n\
         set terminal pngcairo size 800,600\n\
         set output 'ratecurve.png'\n\
         plot 'ratecurve.csv' skip 1 using 1:2:3:4 with yerrorlines title 'median and quartiles', \\\n\
         \x20    {intercept:.10} + ({slope:.10})*x with lines dashtype 2 title 'least squares'\n",
        scheme = report.scheme.name(),
        rate = report.rate,
        theory = report.theoretical_exponent,
        intercept = intercept,
        slope = report.slope,
    )
}

/// `report.csv` and per-path `samples.csv` of an almost-sure limit check.
pub fn write_as_limit_outputs(dir: &Path, cfg: &ExperimentConfig, report: &AsLimitReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut rows = config_rows(cfg);
    kv(&mut rows, "n", report.n.to_string());
    kv(&mut rows, "median_ratio", fmt_f64(report.median_ratio));
    kv(&mut rows, "median_abs_ratio_deviation", fmt_f64(report.median_abs_ratio_deviation));
    kv(&mut rows, "skipped", report.skipped.to_string());
    kv(&mut rows, "paths_failed", report.paths_failed.to_string());
    kv(&mut rows, "degenerate", report.degenerate.clone().unwrap_or_default());
    write_report(dir, &rows)?;
    let samples: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.path_index.to_string(),
                report.n.to_string(),
                fmt_f64(r.normalized_error),
                fmt_f64(r.limit_value),
                fmt_f64(r.ratio),
            ]
        })
        .collect();
    write_csv_file(
        dir.join("samples.csv"),
        &["path_index", "n", "normalized_error", "limit_value", "ratio"],
        &samples,
    )?;
    Ok(())
}

pub fn write_mean_square_outputs(dir: &Path, cfg: &ExperimentConfig, report: &MeanSquareReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut rows = config_rows(cfg);
    kv(&mut rows, "n", report.n.to_string());
    kv(&mut rows, "lhs", fmt_f64(report.lhs));
    kv(&mut rows, "rhs", fmt_f64(report.rhs));
    kv(&mut rows, "relative_gap", opt(report.relative_gap));
    kv(&mut rows, "paths_used", report.paths_used.to_string());
    kv(&mut rows, "paths_failed", report.paths_failed.to_string());
    for w in &report.warnings {
        kv(&mut rows, "warning", w.replace(',', ";"));
    }
    write_report(dir, &rows)
}

/// `report.csv` and `samples.csv` (`index,a,b`) of a limit-law test.
pub fn write_limit_law_outputs(dir: &Path, cfg: &ExperimentConfig, report: &LimitLawReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut rows = config_rows(cfg);
    kv(&mut rows, "n", report.n.to_string());
    kv(&mut rows, "ks_stat", opt(report.ks_stat));
    kv(&mut rows, "p_value", opt(report.p_value));
    kv(&mut rows, "n_a", report.n_a.to_string());
    kv(&mut rows, "n_b", report.n_b.to_string());
    kv(&mut rows, "sigma_h_mode", report.sigma_h_mode.clone());
    kv(&mut rows, "sigma_h_squared", fmt_f64(report.sigma_h_squared));
    if let Some(k) = &report.one_sample {
        kv(&mut rows, "one_sample_ks_stat", fmt_f64(k.statistic));
        kv(&mut rows, "one_sample_p_value", fmt_f64(k.p_value));
    }
    kv(&mut rows, "degenerate", report.degenerate.to_string());
    kv(&mut rows, "max_abs_a", fmt_f64(report.max_abs_a));
    if let Some(c) = &report.calibration {
        kv(&mut rows, "calibration_empirical_variance", fmt_f64(c.empirical_variance));
        kv(&mut rows, "calibration_standard_error", fmt_f64(c.standard_error));
        kv(&mut rows, "calibration_first_chaos_bias", fmt_f64(c.first_chaos_bias));
    }
    write_report(dir, &rows)?;
    let len = report.sample_a.len().max(report.sample_b.len());
    let samples: Vec<Vec<String>> = (0..len)
        .map(|i| {
            vec![
                i.to_string(),
                opt(report.sample_a.get(i).copied()),
                opt(report.sample_b.get(i).copied()),
            ]
        })
        .collect();
    write_csv_file(dir.join("samples.csv"), &["index", "a", "b"], &samples)?;
    Ok(())
}

pub fn write_variation_outputs(dir: &Path, report: &VariationReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut rows = Vec::new();
    kv(&mut rows, "h", fmt_f64(report.h));
    kv(&mut rows, "n", report.n.to_string());
    kv(&mut rows, "m", report.m.to_string());
    kv(&mut rows, "n_paths", report.n_paths.to_string());
    kv(&mut rows, "normalization_exponent", fmt_f64(report.normalization_exponent));
    kv(&mut rows, "mean", fmt_f64(report.mean));
    kv(&mut rows, "mean_se", fmt_f64(report.mean_se));
    kv(&mut rows, "expected_mean", fmt_f64(report.expected_mean));
    kv(&mut rows, "variance", fmt_f64(report.variance));
    kv(&mut rows, "variance_se", fmt_f64(report.variance_se));
    kv(&mut rows, "expected_variance", opt(report.expected_variance));
    kv(&mut rows, "second_order_mean", fmt_f64(report.second_order_mean));
    kv(&mut rows, "second_order_se", fmt_f64(report.second_order_se));
    kv(&mut rows, "second_order_limit", fmt_f64(report.second_order_limit));
    write_report(dir, &rows)?;
    let samples: Vec<Vec<String>> = report
        .normalized
        .iter()
        .enumerate()
        .map(|(i, v)| vec![i.to_string(), fmt_f64(*v)])
        .collect();
    write_csv_file(dir.join("samples.csv"), &["path_index", "normalized"], &samples)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::CoefficientSpec;
    use crate::experiments::run_rate_experiment;
    use crate::schemes::SchemeKind;

    #[test]
    fn rate_outputs_layout() {
        let cfg = ExperimentConfig::new(
            0.7,
            CoefficientSpec::Linear { gamma: 1.0, beta: 0.5 },
            SchemeKind::Euler,
            vec![32, 64],
            4,
            2,
        )
        .unwrap();
        let report = run_rate_experiment(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_rate_outputs(dir.path(), &cfg, &report).unwrap();
        let curve = fs::read_to_string(dir.path().join("ratecurve.csv")).unwrap();
        let mut lines = curve.lines();
        assert_eq!(lines.next(), Some("log2n,log2err_median,log2err_q1,log2err_q3"));
        assert_eq!(lines.count(), 2);
        let samples = fs::read_to_string(dir.path().join("samples.csv")).unwrap();
        assert_eq!(samples.lines().count(), 9);
        assert!(fs::read_to_string(dir.path().join("ratecurve.gp")).unwrap().contains("ratecurve.csv"));
        assert!(fs::read_to_string(dir.path().join("report.csv")).unwrap().starts_with("key,value\n"));
    }
}
