//! CSV output.
//!
//! `metrics_<sweep>.csv` holds one row per variant and experiment with the
//! columns of [`METRICS_COLUMNS`]; numbers use shortest round-trip
//! formatting and failed rows leave the power columns empty.
//! `summary_<sweep>.csv` holds, per sweep value and over all values, the
//! total power of the proposed deployment against every other variant,
//! summed over replicates where both succeeded, and the reduction
//! `(P_base - P_prop) / P_base` in percent to one decimal.
//! `timings.csv` holds the planning wall time of every row; it is the only
//! file that differs between repeated runs.

use std::fs;
use std::path::{Path, PathBuf};

use super::{HarnessError, MetricsRow, SweepVar, Variant};

pub const METRICS_COLUMNS: [&str; 16] = [
    "experiment",
    "sweep",
    "sweep_value",
    "replicate",
    "variant",
    "users",
    "uavs",
    "height",
    "seq_len",
    "total_power",
    "planned_power",
    "predictor_mse",
    "persistence_mse",
    "outer_iterations",
    "feasible",
    "status",
];

pub const SUMMARY_COLUMNS: [&str; 6] =
    ["sweep", "sweep_value", "baseline", "proposed_power", "baseline_power", "reduction_pct"];

pub fn reduction_percent(baseline: f64, proposed: f64) -> f64 {
    100.0 * (baseline - proposed) / baseline
}

fn sweep_name(s: Option<SweepVar>) -> &'static str {
    s.map_or("single", SweepVar::name)
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

fn record(r: &MetricsRow) -> Vec<String> {
    vec![
        r.experiment.clone(),
        sweep_name(r.sweep).to_string(),
        r.sweep_value.to_string(),
        r.replicate.to_string(),
        r.variant.to_string(),
        r.users.to_string(),
        r.uavs.to_string(),
        r.height.to_string(),
        r.seq_len.to_string(),
        opt(r.total_power),
        opt(r.planned_power),
        r.predictor_mse.to_string(),
        r.persistence_mse.to_string(),
        r.outer_iterations.to_string(),
        r.feasible.to_string(),
        r.status.clone(),
    ]
}

pub fn write_metrics(rows: &[MetricsRow], path: impl AsRef<Path>) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRICS_COLUMNS)?;
    for r in rows {
        w.write_record(record(r))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a metrics CSV back; wall times are not stored and read as zero.
pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>, HarnessError> {
    let mut rd = csv::Reader::from_path(path.as_ref())?;
    let bad = |line: usize, msg: String| HarnessError::Data {
        stage: super::Stage::Data,
        msg: format!("{} line {line}: {msg}", path.as_ref().display()),
    };
    if rd.headers()?.iter().ne(METRICS_COLUMNS) {
        return Err(bad(1, "unexpected header".into()));
    }
    let mut rows = Vec::new();
    for (k, rec) in rd.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let field = |i: usize| rec.get(i).unwrap_or("");
        fn num<T: std::str::FromStr>(s: &str, name: &str) -> Result<T, String> {
            s.parse().map_err(|_| format!("bad {name} `{s}`"))
        }
        let maybe = |i: usize| -> Result<Option<f64>, String> {
            if field(i).is_empty() {
                Ok(None)
            } else {
                num(field(i), METRICS_COLUMNS[i]).map(Some)
            }
        };
        let parse = || -> Result<MetricsRow, String> {
            Ok(MetricsRow {
                experiment: field(0).to_string(),
                sweep: match field(1) {
                    "single" => None,
                    s => Some(s.parse()?),
                },
                sweep_value: num(field(2), "sweep_value")?,
                replicate: num(field(3), "replicate")?,
                variant: field(4).parse::<Variant>()?,
                users: num(field(5), "users")?,
                uavs: num(field(6), "uavs")?,
                height: num(field(7), "height")?,
                seq_len: num(field(8), "seq_len")?,
                total_power: maybe(9)?,
                planned_power: maybe(10)?,
                predictor_mse: num(field(11), "predictor_mse")?,
                persistence_mse: num(field(12), "persistence_mse")?,
                outer_iterations: num(field(13), "outer_iterations")?,
                feasible: num(field(14), "feasible")?,
                status: field(15).to_string(),
                wall_time: 0.0,
            })
        };
        rows.push(parse().map_err(|m| bad(line, m))?);
    }
    Ok(rows)
}

/// Summary lines for one sweep: per value in order of appearance, then
/// `all` over every value.
fn summary(rows: &[&MetricsRow]) -> Vec<[String; 6]> {
    let mut values: Vec<f64> = Vec::new();
    for r in rows {
        if !values.contains(&r.sweep_value) {
            values.push(r.sweep_value);
        }
    }
    let mut baselines: Vec<Variant> = rows.iter().map(|r| r.variant).filter(|&v| v != Variant::Proposed).collect();
    baselines.sort();
    baselines.dedup();
    let name = sweep_name(rows.first().and_then(|r| r.sweep));

    let totals = |value: Option<f64>, base: Variant| {
        let (mut prop, mut other, mut n) = (0.0, 0.0, 0);
        let in_scope = |r: &&&MetricsRow| value.map_or(true, |v| r.sweep_value == v);
        for p in rows.iter().filter(in_scope).filter(|r| r.variant == Variant::Proposed) {
            let matching = rows
                .iter()
                .find(|r| r.variant == base && r.experiment == p.experiment && r.sweep_value == p.sweep_value);
            if let (Some(pp), Some(bp)) = (p.total_power, matching.and_then(|r| r.total_power)) {
                prop += pp;
                other += bp;
                n += 1;
            }
        }
        (n > 0).then_some((prop, other))
    };
    let mut out = Vec::new();
    let scopes = values.iter().map(|&v| (Some(v), v.to_string())).chain([(None, "all".to_string())]);
    for (value, label) in scopes {
        for &base in &baselines {
            if let Some((prop, other)) = totals(value, base) {
                let pct = if other > 0.0 { format!("{:.1}", reduction_percent(other, prop)) } else { String::new() };
                out.push([name.to_string(), label.clone(), base.to_string(), prop.to_string(), other.to_string(), pct]);
            }
        }
    }
    out
}

/// Writes the metrics, summary and timing files of `rows` into `out_dir`
/// and returns their paths.
pub fn report(rows: &[MetricsRow], out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, HarnessError> {
    if rows.is_empty() {
        return Err(HarnessError::EmptyTable);
    }
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut sweeps: Vec<Option<SweepVar>> = Vec::new();
    for r in rows {
        if !sweeps.contains(&r.sweep) {
            sweeps.push(r.sweep);
        }
    }
    let mut written = Vec::new();
    for s in sweeps {
        let name = sweep_name(s);
        let group: Vec<MetricsRow> = rows.iter().filter(|r| r.sweep == s).cloned().collect();
        let path = dir.join(format!("metrics_{name}.csv"));
        write_metrics(&group, &path)?;
        written.push(path);

        let path = dir.join(format!("summary_{name}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(SUMMARY_COLUMNS)?;
        for line in summary(&group.iter().collect::<Vec<_>>()) {
            w.write_record(&line)?;
        }
        w.flush()?;
        written.push(path);
    }
    let path = dir.join("timings.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["experiment", "variant", "wall_time_s"])?;
    for r in rows {
        w.write_record([r.experiment.clone(), r.variant.to_string(), r.wall_time.to_string()])?;
    }
    w.flush()?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(experiment: &str, variant: Variant, value: f64, power: Option<f64>) -> MetricsRow {
        MetricsRow {
            experiment: experiment.into(),
            variant,
            sweep: Some(SweepVar::Height),
            sweep_value: value,
            replicate: 0,
            users: 5,
            uavs: 2,
            height: value,
            seq_len: 4,
            total_power: power,
            planned_power: power.map(|p| p * 0.9),
            predictor_mse: 0.1 + 1e-17,
            persistence_mse: 1.0 / 3.0,
            outer_iterations: 3,
            feasible: power.is_some(),
            status: if power.is_some() { "ok".into() } else { "error: planning (center): bad, \"quoted\"".into() },
            wall_time: 0.25,
        }
    }

    fn table() -> Vec<MetricsRow> {
        vec![
            row("height=40/r0", Variant::Proposed, 40.0, Some(6.0)),
            row("height=40/r0", Variant::Center, 40.0, Some(10.0)),
            row("height=40/r1", Variant::Proposed, 40.0, Some(2.0)),
            row("height=40/r1", Variant::Center, 40.0, None),
            row("height=50/r0", Variant::Proposed, 50.0, Some(7.0)),
            row("height=50/r0", Variant::Center, 50.0, Some(7.0)),
        ]
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let rows = table();
        write_metrics(&rows, &path).unwrap();
        let back = read_metrics(&path).unwrap();
        let expected: Vec<_> = rows.into_iter().map(|r| MetricsRow { wall_time: 0.0, ..r }).collect();
        assert_eq!(back, expected);
    }

    #[test]
    fn summary_reductions() {
        let rows = table();
        let lines = summary(&rows.iter().collect::<Vec<_>>());
        let get = |label: &str| lines.iter().find(|l| l[1] == label).unwrap().clone();
        // replicate 1 is skipped: its centre row failed
        assert_eq!(get("40")[3..], ["6".to_string(), "10".into(), "40.0".into()]);
        assert_eq!(get("50")[5], "0.0");
        assert_eq!(get("all")[3..], ["13".to_string(), "17".into(), "23.5".into()]);
        assert_eq!(reduction_percent(200.0, 150.0), 25.0);
    }

    #[test]
    fn report_writes_files_deterministically() {
        let dir = tempfile::tempdir().unwrap();
        let files = report(&table(), dir.path()).unwrap();
        let names: Vec<_> = files.iter().map(|p| p.file_name().unwrap().to_str().unwrap().to_string()).collect();
        assert_eq!(names, ["metrics_height.csv", "summary_height.csv", "timings.csv"]);
        let first = fs::read(&files[0]).unwrap();
        report(&table(), dir.path()).unwrap();
        assert_eq!(fs::read(&files[0]).unwrap(), first);
        assert!(fs::read_to_string(&files[1]).unwrap().starts_with("sweep,sweep_value,baseline"));
    }

    #[test]
    fn empty_table_is_rejected() {
        assert!(matches!(report(&[], std::env::temp_dir()), Err(HarnessError::EmptyTable)));
    }

    #[test]
    fn unwritable_directory_fails() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain");
        fs::write(&file, "x").unwrap();
        assert!(report(&table(), file.join("sub")).is_err());
    }
}
