//! Plot series derived from tuning logs and exploration reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde_json::Value;
use vta::tuner::{read_log_csv, LogRecord};

use crate::{read_bytes, write_bytes, Failure};

/// Best cycles after each trial, one series per (candidate, operator).
pub fn best_cycles_series(log: &[LogRecord]) -> String {
    let mut series: BTreeMap<(usize, usize), Vec<&LogRecord>> = BTreeMap::new();
    for r in log {
        series.entry((r.candidate_id, r.operator_id)).or_default().push(r);
    }
    let mut out = String::from("candidate_id,operator_id,trials,best_cycles\n");
    for ((c, o), mut rows) in series {
        rows.sort_by_key(|r| r.trial);
        let mut best = u64::MAX;
        for (i, r) in rows.iter().enumerate() {
            if r.cycles > 0 {
                best = best.min(r.cycles);
            }
            let shown = if best == u64::MAX { 0 } else { best };
            writeln!(out, "{c},{o},{},{shown}", i + 1).unwrap();
        }
    }
    out
}

/// One row per (round, candidate) of a successive-halving run.
pub fn survivor_table(report: &Value) -> Result<String, String> {
    let rounds = report["rounds"].as_array().ok_or("report has no rounds")?;
    let labels: BTreeMap<u64, &str> = report["candidates"]
        .as_array()
        .ok_or("report has no candidates")?
        .iter()
        .filter_map(|c| Some((c["candidate_id"].as_u64()?, c["label"].as_str()?)))
        .collect();
    let mut out = String::from("round,candidate_id,label,score_us,trials,kept\n");
    for r in rounds {
        let kept: Vec<u64> = r["kept"].as_array().into_iter().flatten().filter_map(Value::as_u64).collect();
        for s in r["scores"].as_array().ok_or("round has no scores")? {
            let id = s["candidate_id"].as_u64().ok_or("score without candidate")?;
            let score = match s["score_us"].as_f64() {
                Some(v) => v.to_string(),
                None => "inf".into(),
            };
            writeln!(
                out,
                "{},{id},{},{score},{},{}",
                r["round"],
                labels.get(&id).copied().unwrap_or(""),
                s["trials"],
                kept.contains(&id) as u8
            )
            .unwrap();
        }
    }
    Ok(out)
}

pub fn cmd_report(log: &Path, explore: Option<&Path>, out_dir: &Path) -> Result<(), Failure> {
    let bytes = read_bytes(log)?;
    let records = read_log_csv(&bytes[..]).map_err(|e| Failure::Input(format!("{}: {e}", log.display())))?;
    write_bytes(&out_dir.join("best_cycles.csv"), best_cycles_series(&records).as_bytes())?;
    if let Some(path) = explore {
        let v: Value = serde_json::from_slice(&read_bytes(path)?)
            .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
        let table = survivor_table(&v).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
        write_bytes(&out_dir.join("sha_rounds.csv"), table.as_bytes())?;
    }
    eprintln!("wrote series for {} log rows", records.len());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(c: usize, o: usize, trial: usize, cycles: u64) -> LogRecord {
        LogRecord {
            round: 0,
            candidate_id: c,
            operator_id: o,
            trial,
            knobs_json: "{}".into(),
            cycles,
            best_cycles: 0,
            wallclock_ms: 0.0,
        }
    }

    #[test]
    fn series_is_running_minimum() {
        let log = [row(0, 0, 1, 50), row(0, 0, 0, 70), row(0, 0, 2, 60), row(1, 0, 0, 9)];
        assert_eq!(
            best_cycles_series(&log),
            "candidate_id,operator_id,trials,best_cycles\n0,0,1,70\n0,0,2,50\n0,0,3,50\n1,0,1,9\n"
        );
    }

    #[test]
    fn survivor_rows() {
        let v = serde_json::json!({
            "candidates": [{"candidate_id": 0, "label": "a"}, {"candidate_id": 1, "label": "b"}],
            "rounds": [{"round": 0, "kept": [1], "scores": [
                {"candidate_id": 1, "score_us": 2.5, "trials": 4},
                {"candidate_id": 0, "score_us": null, "trials": 0}
            ]}]
        });
        assert_eq!(
            survivor_table(&v).unwrap(),
            "round,candidate_id,label,score_us,trials,kept\n0,1,b,2.5,4,1\n0,0,a,inf,0,0\n"
        );
    }
}
