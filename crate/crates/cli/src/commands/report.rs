use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{CliError, Result};
use crate::manifest::Workspace;

const SECTIONS: &[(&str, &str)] = &[
    ("runs/", "Agent runs"),
    ("sae/", "Sparse autoencoders"),
    ("analysis/corr/", "Latent-signal correlations"),
    ("analysis/cka/", "CKA"),
    ("analysis/mds/", "MDS"),
    ("analysis/decode/", "Bottleneck decoding"),
    ("analysis/l0/", "Active latents"),
    ("interventions/", "Interventions"),
    ("behavior/", "Behavior fits"),
];

struct Csv {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_csv(path: &Path) -> Result<Csv> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::Dependency(format!("{}: {e}", path.display())))?;
    let header = reader
        .headers()
        .map_err(|e| CliError::Dependency(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let rows = reader
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<Vec<Vec<String>>, _>>()
        .map_err(|e| CliError::Dependency(format!("{}: {e}", path.display())))?;
    Ok(Csv { header, rows })
}

fn cell(s: &str) -> String {
    match s.parse::<f64>() {
        Ok(v) if !s.contains(['.', 'e', 'E']) || !v.is_finite() => s.to_string(),
        Ok(v) => format!("{v:.4}"),
        Err(_) => s.to_string(),
    }
}

fn markdown(t: &Csv, max_rows: usize) -> String {
    let mut out = format!("| {} |\n|{}\n", t.header.join(" | "), "---|".repeat(t.header.len()));
    for row in t.rows.iter().take(max_rows) {
        let cells: Vec<String> = row.iter().map(|c| cell(c)).collect();
        let _ = writeln!(out, "| {} |", cells.join(" | "));
    }
    if t.rows.len() > max_rows {
        let _ = writeln!(out, "\n({} more rows)", t.rows.len() - max_rows);
    }
    out
}

/// Per signal: best r over blocks and whether it clears both the threshold
/// and that block's null quantile.
fn recovery(t: &Csv, threshold: f64) -> Option<Vec<(String, f64, bool)>> {
    let col = |name: &str| t.header.iter().position(|h| h == name);
    let (s, r, q) = (col("signal")?, col("r")?, col("null_q95")?);
    let mut best: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for row in &t.rows {
        let rv: f64 = row[r].parse().unwrap_or(f64::NAN);
        let qv: f64 = row[q].parse().unwrap_or(f64::NAN);
        let e = best.entry(row[s].clone()).or_insert((f64::NEG_INFINITY, f64::NAN));
        if rv.abs() > e.0 {
            *e = (rv.abs(), qv);
        }
    }
    Some(
        best.into_iter()
            .map(|(name, (r, q))| (name, r, r >= threshold && !(q >= r)))
            .collect(),
    )
}

pub fn run(out: &Path, threshold: f64, max_rows: usize) -> Result<()> {
    let mut ws = Workspace::open(out, "report")?;
    let artifacts: Vec<(String, Vec<String>)> = ws
        .manifest()
        .artifacts
        .iter()
        .filter(|(k, _)| k.as_str() != "report.md")
        .map(|(k, a)| (k.clone(), a.inputs.keys().cloned().collect()))
        .collect();
    if artifacts.is_empty() {
        return Err(CliError::Dependency(format!("{} has no recorded artifacts", out.display())));
    }

    let mut doc = String::from("# tdprobe report\n");
    let mut verdicts = Vec::new();
    for (prefix, title) in SECTIONS {
        let in_section: Vec<&(String, Vec<String>)> = artifacts.iter().filter(|(k, _)| k.starts_with(prefix)).collect();
        if in_section.is_empty() {
            continue;
        }
        let _ = write!(doc, "\n## {title}\n");
        for (key, inputs) in &in_section {
            if key.ends_with(".csv") {
                let table = read_csv(&ws.require(key)?)?;
                let _ = write!(doc, "\n### {key}\n\n{}", markdown(&table, max_rows));
                let planted = inputs.iter().any(|i| i.starts_with("synth/"));
                if *prefix == "analysis/corr/" && planted {
                    if let Some(rows) = recovery(&table, threshold) {
                        verdicts.extend(rows.into_iter().map(|(s, r, ok)| (key.clone(), s, r, ok)));
                    }
                }
            }
        }
        let figures: Vec<&str> = in_section
            .iter()
            .filter(|(k, _)| k.ends_with(".svg"))
            .map(|(k, _)| k.as_str())
            .collect();
        if !figures.is_empty() {
            doc.push_str("\nFigures:\n\n");
            for f in figures {
                let _ = writeln!(doc, "- [{f}]({f})");
            }
        }
    }
    if !verdicts.is_empty() {
        let _ = write!(doc, "\n## Planted recovery (threshold {threshold})\n\n");
        for (key, signal, r, ok) in &verdicts {
            let line = format!("{} {signal}: max |r| {r:.4} in {key}", if *ok { "PASS" } else { "FAIL" });
            println!("{line}");
            let _ = writeln!(doc, "- {line}");
        }
    }
    ws.write("report.md", doc.as_bytes())?;
    ws.save()?;
    println!("wrote {}", out.join("report.md").display());
    Ok(())
}
