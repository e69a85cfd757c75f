//! Serialised reports: per-session metrics, confusion matrices, ablation and
//! sweep tables, and embedding exports.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::{DatasetSpec, SampleStore};
use crate::encoder::{forward_features, ModelParams};
use crate::error::{Error, Result};
use crate::protocol::{AblationRow, MetricsReport, SweepRow};

/// Shortest round-trip decimal, padded with zeros to at least six
/// significant digits.
pub fn format_number(x: f64) -> String {
    let mut s = x.to_string();
    let significant = s
        .trim_start_matches('-')
        .chars()
        .filter(char::is_ascii_digit)
        .skip_while(|&c| c == '0')
        .count()
        .max(1);
    if significant < 6 {
        if !s.contains('.') {
            s.push('.');
        }
        s.extend(std::iter::repeat_n('0', 6 - significant));
    }
    s
}

/// `session,accuracy` with one row per session.
pub fn metrics_csv(m: &MetricsReport) -> String {
    let mut out = String::from("session,accuracy\n");
    for (s, a) in m.accuracies.iter().enumerate() {
        let _ = writeln!(out, "{s},{}", format_number(*a));
    }
    out
}

/// JSON object with exactly the keys `accuracies`, `average_acc`, `pd` and
/// `delta_fi` (null without a baseline).
pub fn metrics_json(m: &MetricsReport) -> String {
    let accs: Vec<String> = m.accuracies.iter().map(|a| format_number(*a)).collect();
    let delta_fi = m.delta_fi.map_or_else(|| "null".to_string(), format_number);
    format!(
        "{{\n  \"accuracies\": [{}],\n  \"average_acc\": {},\n  \"pd\": {},\n  \"delta_fi\": {}\n}}\n",
        accs.join(", "),
        format_number(m.average_acc),
        format_number(m.pd),
        delta_fi
    )
}

pub fn parse_metrics_json(text: &str) -> Result<MetricsReport> {
    Ok(serde_json::from_str(text)?)
}

/// Counts with rows = true label and columns = predicted label.
pub fn confusion_csv(matrix: &[Vec<u64>]) -> String {
    let mut out = String::from("label");
    for c in 0..matrix.len() {
        let _ = write!(out, ",{c}");
    }
    out.push('\n');
    for (y, row) in matrix.iter().enumerate() {
        out.push_str(&y.to_string());
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let sessions = rows.first().map_or(0, |r| r.metrics.accuracies.len());
    let mut out = String::from("variant");
    for s in 0..sessions {
        let _ = write!(out, ",session_{s}");
    }
    out.push_str(",average_acc,pd,delta_fi\n");
    for r in rows {
        out.push_str(&r.variant.to_string());
        for a in &r.metrics.accuracies {
            let _ = write!(out, ",{}", format_number(*a));
        }
        let dfi = r.metrics.delta_fi.map(format_number).unwrap_or_default();
        let _ = writeln!(out, ",{},{},{dfi}", format_number(r.metrics.average_acc), format_number(r.metrics.pd));
    }
    out
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("delta,seeds,final_mean,final_sd,average_mean\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.delta,
            r.seeds.len(),
            format_number(r.mean_final),
            format_number(r.sd_final),
            format_number(r.mean_average)
        );
    }
    out
}

/// Session that introduces class `y`.
pub fn session_of_class(spec: &DatasetSpec, y: usize) -> usize {
    if y < spec.base_classes {
        0
    } else {
        1 + (y - spec.base_classes) / spec.ways
    }
}

/// Writes `label,session,f0,…` for every store sample, in store order,
/// using the online extractor's features.
pub fn export_embeddings(params: &ModelParams, store: &SampleStore, spec: &DatasetSpec, path: &Path) -> Result<()> {
    if store.input_dim() != params.spec.input_dim {
        return Err(Error::Dataset(format!(
            "store rows have width {}, checkpoint expects {}",
            store.input_dim(),
            params.spec.input_dim
        )));
    }
    let feats = forward_features(params, &store.inputs)?;
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["label".to_string(), "session".to_string()];
    header.extend((0..feats.cols()).map(|j| format!("f{j}")));
    w.write_record(&header)?;
    for i in 0..store.len() {
        let y = store.labels[i];
        let mut rec = vec![y.to_string(), session_of_class(spec, y).to_string()];
        rec.extend(feats.row(i).iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
