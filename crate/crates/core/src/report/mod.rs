//! CSV tables, SVG line charts and cross-run comparison.

pub mod svg;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{MdRecord, MdSource};
use crate::model::Strategy;
use crate::trainer::ExperimentLog;
pub use svg::{line_chart, ChartLayout, Series};

/// One row of `curves.csv`; empty cells are undefined values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub step: usize,
    pub miou_all: Option<f64>,
    pub miou_init: Option<f64>,
    pub miou_incr: Option<f64>,
    pub probe_miou_all: Option<f64>,
    pub probe_miou_init: Option<f64>,
    pub probe_miou_incr: Option<f64>,
    pub trainable_params: Option<usize>,
    pub wall_seconds: Option<f64>,
}

pub fn curve_rows(log: &ExperimentLog) -> Vec<CurveRow> {
    log.steps
        .iter()
        .map(|r| CurveRow {
            step: r.step,
            miou_all: r.observed.miou_all,
            miou_init: r.observed.miou_init,
            miou_incr: r.observed.miou_incr,
            probe_miou_all: r.probe.as_ref().and_then(|p| p.miou_all),
            probe_miou_init: r.probe.as_ref().and_then(|p| p.miou_init),
            probe_miou_incr: r.probe.as_ref().and_then(|p| p.miou_incr),
            trainable_params: r.outcome.as_ref().map(|o| o.trainable_params),
            wall_seconds: r.outcome.as_ref().map(|o| o.wall_seconds),
        })
        .collect()
}

fn to_csv<S: Serialize>(rows: &[S]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::Artifact(format!("csv: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Artifact(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn from_csv<D: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<D>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Artifact(format!("csv: {e}")))
}

pub fn curves_csv(log: &ExperimentLog) -> Result<String> {
    to_csv(&curve_rows(log))
}

pub fn parse_curves_csv(text: &str) -> Result<Vec<CurveRow>> {
    from_csv(text)
}

/// `source,t,k,value`, one line per record.
pub fn md_csv(records: &[MdRecord]) -> Result<String> {
    if records.is_empty() {
        return Ok("source,t,k,value\n".into());
    }
    to_csv(records)
}

pub fn parse_md_csv(text: &str) -> Result<Vec<MdRecord>> {
    from_csv(text)
}

/// Observed (and, if present, probing) mIoU over steps.
pub fn curves_chart(log: &ExperimentLog) -> String {
    let rows = curve_rows(log);
    let pick = |f: fn(&CurveRow) -> Option<f64>| -> Vec<(f64, f64)> {
        rows.iter()
            .filter_map(|r| f(r).map(|v| (r.step as f64, v)))
            .collect()
    };
    let mut series = vec![
        Series::new("miou_all", pick(|r| r.miou_all)),
        Series::new("miou_init", pick(|r| r.miou_init)),
        Series::new("miou_incr", pick(|r| r.miou_incr)),
        Series::new("probe_miou_all", pick(|r| r.probe_miou_all)),
    ];
    series.retain(|s| !s.points.is_empty());
    let steps = rows.len().max(2) as f64;
    line_chart(
        &format!("{}: mIoU per step", log.name),
        "step",
        "mIoU (%)",
        &series,
        (1.0, steps),
        (0.0, 100.0),
    )
}

/// MD against lag `k`, one series per `(source, t)`.
pub fn md_chart(title: &str, records: &[MdRecord]) -> String {
    let mut series: Vec<Series> = Vec::new();
    let mut keys: Vec<(MdSource, usize)> = records.iter().map(|r| (r.source, r.t)).collect();
    keys.sort();
    keys.dedup();
    for (source, t) in keys {
        let pts = records
            .iter()
            .filter(|r| r.source == source && r.t == t)
            .map(|r| (r.k as f64, r.value))
            .collect();
        series.push(Series::new(&format!("{source} t={t}"), pts));
    }
    let kmax = records.iter().map(|r| r.k).max().unwrap_or(1).max(2) as f64;
    let ymax = records.iter().map(|r| r.value).fold(0.0, f64::max);
    let ymax = if ymax > 0.0 { ymax * 1.1 } else { 1.0 };
    line_chart(
        title,
        "k (steps since learned)",
        "moving distance",
        &series,
        (1.0, kmax),
        (0.0, ymax),
    )
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `experiment.json`, `curves.csv`, `curves.svg`, and `md.csv`/`md.svg`
/// when MD was computed.
pub fn write_run_bundle(log: &ExperimentLog, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    log.save_json(dir.join("experiment.json"))?;
    write(&dir.join("curves.csv"), &curves_csv(log)?)?;
    write(&dir.join("curves.svg"), &curves_chart(log))?;
    if !log.md.is_empty() {
        write(&dir.join("md.csv"), &md_csv(&log.md)?)?;
        write(
            &dir.join("md.svg"),
            &md_chart(&format!("{}: moving distance", log.name), &log.md),
        )?;
    }
    Ok(())
}

/// Final numbers of one run in a comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub strategy: Strategy,
    pub seed: u64,
    pub miou_init: Option<f64>,
    pub miou_incr: Option<f64>,
    pub miou_all: Option<f64>,
    pub incremental_seconds: f64,
    pub avg_trainable_params: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub csv: String,
    pub svg: String,
}

/// Tabulates and plots runs that share one class schedule. A joint run is
/// drawn as a flat line at its final mIoU.
pub fn compare(logs: &[ExperimentLog]) -> Result<Comparison> {
    let first = logs
        .first()
        .ok_or_else(|| Error::Comparison("no runs to compare".into()))?;
    for l in &logs[1..] {
        if l.schedule != first.schedule || l.scenario != first.scenario {
            return Err(Error::Comparison(format!(
                "run {:?} ({} {}) and run {:?} ({} {}) use different class schedules",
                first.name, first.setting, first.scenario, l.name, l.setting, l.scenario
            )));
        }
    }
    let rows: Vec<ComparisonRow> = logs
        .iter()
        .map(|l| ComparisonRow {
            name: l.name.clone(),
            strategy: l.strategy,
            seed: l.seed,
            miou_init: l.final_metrics.miou_init,
            miou_incr: l.final_metrics.miou_incr,
            miou_all: l.final_metrics.miou_all,
            incremental_seconds: l.incremental_seconds,
            avg_trainable_params: l.avg_trainable_params,
        })
        .collect();
    let steps = first.schedule.len();
    let series: Vec<Series> = logs
        .iter()
        .map(|l| {
            let pts = if l.strategy == Strategy::Joint {
                let v = l.final_metrics.miou_all.unwrap_or(0.0);
                vec![(1.0, v), (steps as f64, v)]
            } else {
                l.steps
                    .iter()
                    .filter_map(|r| r.observed.miou_all.map(|v| (r.step as f64, v)))
                    .collect()
            };
            Series::new(&l.name, pts)
        })
        .collect();
    let svg = line_chart(
        &format!("{} {}: mIoU over steps", first.setting, first.scenario),
        "step",
        "mIoU (%)",
        &series,
        (1.0, steps.max(2) as f64),
        (0.0, 100.0),
    );
    Ok(Comparison {
        csv: to_csv(&rows)?,
        rows,
        svg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn md_csv_header_and_round_trip() {
        let recs = vec![
            MdRecord {
                source: MdSource::Observed,
                t: 2,
                k: 1,
                value: 0.125,
            },
            MdRecord {
                source: MdSource::Probing,
                t: 3,
                k: 2,
                value: 1e-17,
            },
        ];
        let text = md_csv(&recs).unwrap();
        assert!(
            text.starts_with("source,t,k,value\nobserved,2,1,0.125\n"),
            "{text}"
        );
        assert_eq!(parse_md_csv(&text).unwrap(), recs);
        assert_eq!(md_csv(&[]).unwrap(), "source,t,k,value\n");
    }

    proptest! {
        #[test]
        fn md_csv_values_round_trip(vals in proptest::collection::vec(0.0f64..2.0, 1..20)) {
            let recs: Vec<MdRecord> = vals.iter().enumerate().map(|(i, &v)| MdRecord {
                source: MdSource::Observed, t: 2 + i, k: 1, value: v,
            }).collect();
            prop_assert_eq!(parse_md_csv(&md_csv(&recs).unwrap()).unwrap(), recs);
        }
    }
}
