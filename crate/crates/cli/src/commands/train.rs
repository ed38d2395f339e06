use std::path::Path;

use tdprobe_core::analysis::plot::{line_plot, Series};
use tdprobe_core::sae::{l0_profile, train, SaeTrainConfig};
use tdprobe_core::store::{ColumnKind, ReportTable};

use crate::config;
use crate::error::{CliError, Result};
use crate::io::{read_actv, write_table};
use crate::manifest::Workspace;

pub fn run(out: &Path, input: &str, config_path: Option<&Path>, name: &str) -> Result<()> {
    let cfg: SaeTrainConfig = match config_path {
        Some(p) => config::load(p)?,
        None => SaeTrainConfig::default(),
    };
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let mut ws = Workspace::open(out, "train-sae")?;
    let acts = read_actv(&mut ws, input)?;
    let trained = train(&acts.values.view(), &cfg)?;

    let rel = format!("sae/{name}.sae");
    trained.model.save(ws.prepare(&rel)?)?;
    ws.record(&rel)?;

    let mut losses = ReportTable::new(
        "losses",
        &[
            ("epoch", ColumnKind::Int),
            ("total", ColumnKind::Real),
            ("recon", ColumnKind::Real),
            ("sparsity", ColumnKind::Real),
        ],
    );
    for (e, l) in trained.epoch_losses.iter().enumerate() {
        losses
            .push_row(vec![(e as i64).into(), l.total.into(), l.recon.into(), l.sparsity.into()])
            .expect("row matches schema");
    }
    write_table(&mut ws, &format!("sae/{name}_losses.csv"), &losses)?;
    let points = trained
        .epoch_losses
        .iter()
        .enumerate()
        .map(|(e, l)| (e as f64, l.total))
        .collect();
    let svg = line_plot(&format!("SAE {name}"), "epoch", "loss", &[Series::new("total", points)]);
    ws.write(&format!("sae/{name}_losses.svg"), svg.as_bytes())?;
    ws.save()?;
    let l0 = l0_profile(&trained.model, &acts.values.view())?;
    println!(
        "trained {name}: d {} m {} final loss {:.6} l0 {l0}",
        trained.model.d(),
        trained.model.m(),
        trained.epoch_losses.last().map_or(f64::NAN, |l| l.total)
    );
    Ok(())
}
