//! CSV emission: metric rows with run metadata, sample dumps, loss
//! traces, and verification outcomes.
//!
//! CSV is the only machine-readable interchange this crate produces;
//! every writer emits a header row and standard quoting.

use esddpm_core::metrics::MetricReport;
use std::io::Write;
use thiserror::Error;

/// Report emission failures.
#[derive(Debug, Error)]
pub enum ReportError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Identifies the run a metric row came from.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMeta {
    pub dataset: String,
    pub generator: String,
    pub t_prime: usize,
    pub plan_len: usize,
    pub seed: u64,
}

fn fmt_f64(v: f64) -> String {
    // Shortest representation that round-trips, so CSV output is exact.
    format!("{v}")
}

/// Writes metric rows (one per run) with their metadata columns.
pub fn write_metric_rows<W: Write>(
    out: W,
    rows: &[(RunMeta, MetricReport)],
) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "dataset",
        "generator",
        "t_prime",
        "plan_len",
        "seed",
        "energy_distance",
        "mmd_rbf",
        "mmd_bandwidth",
        "sliced_wasserstein",
        "n_projections",
        "knn_precision",
        "knn_recall",
        "permutation_p",
    ])?;
    for (meta, report) in rows {
        w.write_record([
            meta.dataset.clone(),
            meta.generator.clone(),
            meta.t_prime.to_string(),
            meta.plan_len.to_string(),
            meta.seed.to_string(),
            fmt_f64(report.energy_distance),
            fmt_f64(report.mmd_rbf),
            fmt_f64(report.mmd_bandwidth),
            fmt_f64(report.sliced_wasserstein),
            report.n_projections.to_string(),
            fmt_f64(report.knn_precision),
            fmt_f64(report.knn_recall),
            report.permutation_p.map(fmt_f64).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes one sample per row, coordinates as columns `x0..x{d-1}`, with
/// an optional leading class column.
pub fn write_samples<W: Write>(
    out: W,
    samples: &[Vec<f64>],
    classes: Option<&[usize]>,
) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    let dim = samples.first().map_or(0, |s| s.len());
    let mut header = Vec::new();
    if classes.is_some() {
        header.push("class".to_string());
    }
    header.extend((0..dim).map(|i| format!("x{i}")));
    w.write_record(&header)?;
    for (i, sample) in samples.iter().enumerate() {
        let mut record = Vec::with_capacity(header.len());
        if let Some(c) = classes {
            record.push(c[i].to_string());
        }
        record.extend(sample.iter().map(|&v| fmt_f64(v)));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads samples written by `write_samples` (class column ignored).
pub fn read_samples(path: &std::path::Path) -> Result<Vec<Vec<f64>>, ReportError> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let skip = usize::from(headers.iter().next() == Some("class"));
    let mut samples = Vec::new();
    for record in r.records() {
        let record = record?;
        let row: Result<Vec<f64>, _> = record
            .iter()
            .skip(skip)
            .map(|field| field.parse::<f64>())
            .collect();
        match row {
            Ok(values) => samples.push(values),
            Err(e) => {
                return Err(ReportError::Io(std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("bad sample value: {e}"),
                )))
            }
        }
    }
    Ok(samples)
}

/// Writes a loss trace, keeping every `thin`-th iteration (and the last).
pub fn write_loss_trace<W: Write>(out: W, losses: &[f64], thin: usize) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "loss"])?;
    let step = thin.max(1);
    for (i, &loss) in losses.iter().enumerate() {
        if i % step == 0 || i + 1 == losses.len() {
            w.write_record([(i + 1).to_string(), fmt_f64(loss)])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One verification check's outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

/// Writes verification outcomes, one row per check.
pub fn write_check_rows<W: Write>(out: W, checks: &[CheckOutcome]) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["check", "result", "detail"])?;
    for check in checks {
        w.write_record([
            check.name,
            if check.pass { "pass" } else { "fail" },
            &check.detail,
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> MetricReport {
        MetricReport {
            energy_distance: 0.125,
            mmd_rbf: 0.25,
            mmd_bandwidth: 1.5,
            sliced_wasserstein: 0.5,
            n_projections: 64,
            knn_precision: 0.875,
            knn_recall: 0.75,
            permutation_p: Some(0.01),
        }
    }

    #[test]
    fn metric_rows_have_header_and_metadata_columns() {
        let meta = RunMeta {
            dataset: "two_moons".into(),
            generator: "gmm".into(),
            t_prime: 100,
            plan_len: 10,
            seed: 7,
        };
        let mut buf = Vec::new();
        write_metric_rows(&mut buf, &[(meta, report())]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert!(header.starts_with("dataset,generator,t_prime,plan_len,seed,energy_distance"));
        let row = lines.next().unwrap();
        assert!(row.starts_with("two_moons,gmm,100,10,7,0.125,0.25,1.5,0.5,64,0.875,0.75,0.01"));
        assert_eq!(lines.next(), None);
    }

    #[test]
    fn missing_p_value_leaves_an_empty_field() {
        let meta = RunMeta {
            dataset: "d".into(),
            generator: "g".into(),
            t_prime: 0,
            plan_len: 0,
            seed: 0,
        };
        let mut r = report();
        r.permutation_p = None;
        let mut buf = Vec::new();
        write_metric_rows(&mut buf, &[(meta, r)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().nth(1).unwrap().ends_with(','));
    }

    #[test]
    fn samples_round_trip_exactly_through_csv() {
        let samples = vec![
            vec![0.1, -2.5],
            vec![1.0 / 3.0, f64::MIN_POSITIVE],
            vec![-0.0, 12345.678901234567],
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.csv");
        let file = std::fs::File::create(&path).unwrap();
        write_samples(file, &samples, None).unwrap();
        let back = read_samples(&path).unwrap();
        assert_eq!(back, samples);
    }

    #[test]
    fn class_column_is_written_and_skipped_on_read() {
        let samples = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labeled.csv");
        let file = std::fs::File::create(&path).unwrap();
        write_samples(file, &samples, Some(&[1, 0])).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("class,x0,x1"));
        assert_eq!(read_samples(&path).unwrap(), samples);
    }

    #[test]
    fn loss_trace_is_thinned_but_keeps_the_last_row() {
        let losses: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let mut buf = Vec::new();
        write_loss_trace(&mut buf, &losses, 4).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<&str> = text.lines().skip(1).collect();
        assert_eq!(rows, vec!["1,0", "5,4", "9,8", "10,9"]);
    }

    #[test]
    fn check_rows_spell_out_pass_and_fail() {
        let checks = vec![
            CheckOutcome {
                name: "alpha",
                pass: true,
                detail: "ok".into(),
            },
            CheckOutcome {
                name: "beta",
                pass: false,
                detail: "off by 2".into(),
            },
        ];
        let mut buf = Vec::new();
        write_check_rows(&mut buf, &checks).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("alpha,pass,ok"));
        assert!(text.contains("beta,fail,off by 2"));
    }
}
