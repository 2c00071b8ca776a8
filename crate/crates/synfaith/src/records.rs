//! Long-format record files: one `(dataset, model, instance_id, explainer,
//! metric, value)` row per metric.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use synfaith_core::stats::{EvaluationRecord, Metric};

use crate::error::{AppError, Result};

pub const HEADER: [&str; 6] = ["dataset", "model", "instance_id", "explainer", "metric", "value"];

/// Shortest decimal that parses back to the identical `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Writes records sorted by key, metrics in canonical order.
pub fn write_records<W: Write>(out: W, records: &[EvaluationRecord]) -> csv::Result<()> {
    let mut sorted: Vec<&EvaluationRecord> = records.iter().collect();
    sorted.sort_by(|a, b| key(a).cmp(&key(b)));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    for r in sorted {
        for metric in Metric::ALL {
            let value = if metric.is_count() {
                (r.get(metric) as usize).to_string()
            } else {
                fmt_f64(r.get(metric))
            };
            w.write_record([&r.dataset, &r.model, &r.instance_id, &r.explainer, metric.name(), &value])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn key(r: &EvaluationRecord) -> (&str, &str, &str, &str) {
    (&r.dataset, &r.model, &r.instance_id, &r.explainer)
}

/// Reads long-format rows back into records. Metrics absent for a record
/// read as NaN (counts as 0); unknown metric names and repeated rows are errors.
pub fn read_records<R: Read>(input: R, path: &Path) -> Result<Vec<EvaluationRecord>> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers().map_err(AppError::csv(path))?.clone();
    if headers.iter().ne(HEADER) {
        return Err(AppError::Validation(format!(
            "{}: header must be {}",
            path.display(),
            HEADER.join(",")
        )));
    }
    type Key = (String, String, String, String);
    let mut records: BTreeMap<Key, (EvaluationRecord, Vec<Metric>)> = BTreeMap::new();
    for (row, result) in reader.records().enumerate() {
        let line = row + 2;
        let rec = result.map_err(AppError::csv(path))?;
        let bad = |msg: String| AppError::Parse { path: path.to_path_buf(), line, column: 0, message: msg };
        let metric = Metric::parse(&rec[4]).ok_or_else(|| bad(format!("unknown metric {:?}", &rec[4])))?;
        let value: f64 = rec[5].trim().parse().map_err(|_| bad(format!("value {:?} is not a number", &rec[5])))?;
        let k = (rec[0].to_string(), rec[1].to_string(), rec[2].to_string(), rec[3].to_string());
        let (record, seen) = records.entry(k).or_insert_with(|| {
            let mut r = EvaluationRecord::empty(&rec[0], &rec[1], &rec[2], &rec[3]);
            for m in Metric::ALL.into_iter().filter(|m| !m.is_count()) {
                r.set(m, f64::NAN);
            }
            (r, Vec::new())
        });
        if seen.contains(&metric) {
            return Err(bad(format!("metric {} repeated for {}/{}", metric.name(), &rec[2], &rec[3])));
        }
        seen.push(metric);
        record.set(metric, value);
    }
    Ok(records.into_values().map(|(r, _)| r).collect())
}

pub fn load_records(path: &Path) -> Result<Vec<EvaluationRecord>> {
    let file = std::fs::File::open(path).map_err(AppError::io(path))?;
    read_records(std::io::BufReader::new(file), path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<EvaluationRecord> {
        let mut a = EvaluationRecord::empty("d,1", "m\"x", "i1", "e");
        a.f_syn = 0.1 + 0.2;
        a.srg_visual = -1.0 / 3.0;
        a.call_count = 61;
        a.fsyn_calls = 58;
        let mut b = EvaluationRecord::empty("d", "m", "i0", "e");
        b.del_textual = 5e-324;
        vec![a, b]
    }

    #[test]
    fn round_trip_is_value_identical() {
        let mut buf = Vec::new();
        write_records(&mut buf, &sample()).unwrap();
        let back = read_records(&buf[..], Path::new("r.csv")).unwrap();
        let mut expected = sample();
        expected.sort_by(|a, b| key(a).cmp(&key(b)));
        assert_eq!(back, expected);
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("\"d,1\",\"m\"\"x\""));
    }

    #[test]
    fn unknown_metric_reports_line() {
        let text = "dataset,model,instance_id,explainer,metric,value\nd,m,i,e,f_syn,0.5\nd,m,i,e,bogus,1\n";
        match read_records(text.as_bytes(), Path::new("r.csv")) {
            Err(AppError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_metrics_read_as_nan() {
        let text = "dataset,model,instance_id,explainer,metric,value\nd,m,i,e,f_syn,0.5\n";
        let r = read_records(text.as_bytes(), Path::new("r.csv")).unwrap();
        assert_eq!(r[0].f_syn, 0.5);
        assert!(r[0].srg_visual.is_nan());
    }
}
