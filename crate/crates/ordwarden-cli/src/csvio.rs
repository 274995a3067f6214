//! Versioned CSV schemas shared by the subcommands. Every file starts
//! with a `# ordwarden.<kind>.v1` comment line; readers skip comments.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use num_rational::Ratio;
use ordwarden_core::detect::percent_3dp;
use ordwarden_core::flow::Label;

pub const SCORES_SCHEMA: &str = "# ordwarden.scores.v1";
pub const VERDICTS_SCHEMA: &str = "# ordwarden.verdicts.v1";
pub const METRICS_SCHEMA: &str = "# ordwarden.metrics.v1";

/// One scores row; κ stays exact through the CSV because s_len and c_len
/// travel with it, the kappa column is display only.
#[derive(Debug, Clone)]
pub struct ScoreRow {
    pub flow_id: String,
    pub coding: String,
    pub s_len: u64,
    pub c_len: u64,
}

impl ScoreRow {
    pub fn kappa(&self) -> Ratio<u64> {
        Ratio::new(self.s_len, self.c_len)
    }

    /// Label join key: sliding-window rows carry a `#w<i>` suffix.
    pub fn base_flow_id(&self) -> &str {
        self.flow_id.split("#w").next().unwrap_or(&self.flow_id)
    }
}

pub fn kappa_5dp(k: Ratio<u64>) -> String {
    format!("{:.5}", *k.numer() as f64 / *k.denom() as f64)
}

pub fn write_scores(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{SCORES_SCHEMA}")?;
    writeln!(w, "flow_id,coding,s_len,c_len,kappa")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{}", r.flow_id, r.coding, r.s_len, r.c_len, kappa_5dp(r.kappa()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() < 4 {
            bail!("scores row needs flow_id,coding,s_len,c_len");
        }
        rows.push(ScoreRow {
            flow_id: record[0].to_string(),
            coding: record[1].to_string(),
            s_len: record[2].parse().context("s_len")?,
            c_len: record[3].parse().context("c_len")?,
        });
    }
    Ok(rows)
}

pub fn write_verdicts(path: &Path, rows: &[(ScoreRow, &str)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{VERDICTS_SCHEMA}")?;
    writeln!(w, "flow_id,kappa,verdict")?;
    for (r, verdict) in rows {
        writeln!(w, "{},{},{}", r.flow_id, kappa_5dp(r.kappa()), verdict)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the ground-truth sidecar (`flow_id,label,n,m,seed`).
pub fn read_labels(path: &Path) -> Result<BTreeMap<String, Label>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut map = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        if record.len() < 2 {
            bail!("labels row needs flow_id,label");
        }
        let label: Label = record[1]
            .parse()
            .map_err(|_| anyhow::anyhow!("unknown label {:?}", &record[1]))?;
        map.insert(record[0].to_string(), label);
    }
    Ok(map)
}

pub struct MetricsRow {
    pub threshold: String,
    pub report: ordwarden_core::detect::MetricsReport,
}

/// `threshold,tp,fp,tn,fn,precision,recall,accuracy,f1,fpr`; rates as
/// percentages with three decimals, blank when undefined.
pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let opt = |v: Option<Ratio<u64>>| v.map(percent_3dp).unwrap_or_default();
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{METRICS_SCHEMA}")?;
    writeln!(w, "threshold,tp,fp,tn,fn,precision,recall,accuracy,f1,fpr")?;
    for row in rows {
        let r = &row.report;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            row.threshold,
            r.cm.tp,
            r.cm.fp,
            r.cm.tn,
            r.cm.fn_,
            opt(r.precision),
            opt(r.recall),
            percent_3dp(r.accuracy),
            opt(r.f1),
            opt(r.fpr),
        )?;
    }
    w.flush()?;
    Ok(())
}
