use std::path::Path;

use ndarray::Array1;
use tdprobe_core::synth::generate;

use crate::config::{self, SynthConfig};
use crate::error::{CliError, Result};
use crate::io::{read_actv, write_actv, write_json};
use crate::manifest::Workspace;

pub fn run(out: &Path, config_path: &Path) -> Result<()> {
    let cfg: SynthConfig = config::load(config_path)?;
    cfg.validate()?;
    let mut ws = Workspace::open(out, "gen-synth")?;
    let mut signals: Vec<(String, Array1<f64>)> = Vec::new();
    for src in &cfg.signals {
        let mut values = Vec::new();
        for p in &src.paths {
            let m = read_actv(&mut ws, p)?;
            values.extend(m.values.column(0).iter().copied());
        }
        signals.push((src.name.clone(), Array1::from(values)));
    }
    let n = match (signals.first(), cfg.n_steps) {
        (Some((_, s)), Some(n)) if s.len() != n => {
            return Err(CliError::Config(format!("n_steps {n} differs from signal length {}", s.len())))
        }
        (Some((_, s)), _) => s.len(),
        (None, Some(n)) => n,
        (None, None) => unreachable!("validated"),
    };
    let views: Vec<(&str, _)> = signals.iter().map(|(name, s)| (name.as_str(), s.view())).collect();
    let data = generate(&cfg.spec, &views, n)?;

    let dir = format!("synth/{}", cfg.name);
    let seed = cfg.spec.seed;
    write_actv(&mut ws, &format!("{dir}/activations.actv"), &data.activations.view(), &cfg.name, 0, "planted", seed)?;
    let coeff = format!("{dir}/coefficients.actv");
    write_actv(&mut ws, &coeff, &data.coefficients.view(), &cfg.name, 0, "coefficients", seed)?;
    for (k, (name, _)) in signals.iter().enumerate() {
        let col = data.standardized.column(k).insert_axis(ndarray::Axis(1));
        write_actv(&mut ws, &format!("{dir}/signal_{name}.actv"), &col, &cfg.name, 0, name, seed)?;
    }
    write_json(&mut ws, &format!("{dir}/oracle.json"), &data.oracle_json(&cfg.spec, &coeff))?;
    ws.save()?;
    println!("wrote {n} x {} planted activations to {}/{dir}", cfg.spec.d, out.display());
    Ok(())
}
