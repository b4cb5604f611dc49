//! CSV tables and plain-text summaries.

use std::fmt::Write as _;
use std::path::Path;

use fgv_core::eval::{BinErrorStats, MetricsReport};
use fgv_core::preprocess::BinHistogram;
use fgv_core::train::EpochRecord;

use crate::pnm::write_file;
use crate::Result;

pub const OUTPUT_NAMES: [&str; 4] = ["centre_x", "centre_y", "width", "height"];

pub fn history_csv(history: &[EpochRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "iterations", "lr", "loss", "accuracy"])?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.iterations.to_string(),
            r.lr.to_string(),
            r.loss.to_string(),
            r.accuracy.to_string(),
        ])?;
    }
    finish(w)
}

/// Parses what [`history_csv`] wrote; used to continue a resumed history.
pub fn parse_history_csv(text: &str) -> Result<Vec<EpochRecord>> {
    let mut out = Vec::new();
    for row in csv::Reader::from_reader(text.as_bytes()).records() {
        let row = row?;
        let f = |i: usize| row.get(i).unwrap_or("");
        let bad = |i: usize| crate::Error::Format(format!("bad history value {:?}", f(i)));
        out.push(EpochRecord {
            epoch: f(0).parse().map_err(|_| bad(0))?,
            iterations: f(1).parse().map_err(|_| bad(1))?,
            lr: f(2).parse().map_err(|_| bad(2))?,
            loss: f(3).parse().map_err(|_| bad(3))?,
            accuracy: f(4).parse().map_err(|_| bad(4))?,
        });
    }
    Ok(out)
}

/// One `bin,count` table per output.
pub fn histogram_csvs(h: &BinHistogram) -> Result<[(String, String); 4]> {
    let mut tables = Vec::with_capacity(4);
    for (name, counts) in OUTPUT_NAMES.iter().zip(h.outputs()) {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["bin", "count"])?;
        for (b, c) in counts.iter().enumerate() {
            w.write_record([b.to_string(), c.to_string()])?;
        }
        tables.push((format!("hist_{name}.csv"), finish(w)?));
    }
    Ok(tables.try_into().expect("four outputs"))
}

pub fn write_histograms(dir: &Path, h: &BinHistogram) -> Result<Vec<std::path::PathBuf>> {
    histogram_csvs(h)?
        .into_iter()
        .map(|(name, text)| {
            let p = dir.join(name);
            write_file(&p, text.as_bytes()).map(|_| p)
        })
        .collect()
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| crate::Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| crate::Error::Format(e.to_string()))
}

/// Human-readable metrics block.
pub fn format_metrics(r: &MetricsReport, stats: Option<&BinErrorStats>) -> String {
    let mut s = format!("samples: {}\n", r.samples);
    if let Some(t) = r.top1 {
        let _ = writeln!(s, "top-1: {t:.3}%");
    }
    if let Some(t) = r.top5 {
        let _ = writeln!(s, "top-5: {t:.3}%");
    }
    if let Some(p) = r.per_output {
        for (name, a) in OUTPUT_NAMES.iter().zip(p) {
            let _ = writeln!(s, "{name} accuracy: {a:.3}%");
        }
    }
    if let Some(m) = r.mean_accuracy {
        let _ = writeln!(s, "mean accuracy: {m:.3}%");
    }
    if let Some(st) = stats {
        for (o, name) in OUTPUT_NAMES.iter().enumerate() {
            let f = st.fractions(o);
            let _ = writeln!(
                s,
                "{name} bin distance: d0 {:.4} d1 {:.4} d2 {:.4} d>=3 {:.4}",
                f[0], f[1], f[2], f[3]
            );
        }
    }
    s
}
