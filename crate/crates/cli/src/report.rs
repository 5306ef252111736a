//! Analytics subcommands on a finished run directory, plus SVG
//! regeneration from artifact CSVs.

use crate::artifacts::read_firm_posteriors;
use crate::config::RunConfig;
use crate::runner::{load_configured_panel, run_analytics, CliError, CliResult};
use hetprod_core::model::ModelSpec;
use hetprod_core::plot::{histogram_svg, HistSeries};
use std::path::Path;

fn posteriors_for(
    cfg: &RunConfig,
    run_dir: &Path,
) -> CliResult<(hetprod_core::panel::PanelDataset, ModelSpec, Vec<hetprod_core::posterior::FirmPosterior>)>
{
    let (panel, _) = load_configured_panel(cfg)?;
    let model = ModelSpec::new(cfg.family(), panel.n_periods());
    let posteriors = read_firm_posteriors(&run_dir.join("firm_posteriors.csv"), &model)
        .map_err(|e| CliError::Data(e.to_string()))?;
    if posteriors.len() != panel.n_firms() {
        return Err(CliError::Data(format!(
            "run dir has {} posteriors but the configured input yields {} firms",
            posteriors.len(),
            panel.n_firms()
        )));
    }
    Ok((panel, model, posteriors))
}

pub fn rerun_ttp(cfg: &RunConfig, run_dir: &Path) -> CliResult<()> {
    let (panel, model, posteriors) = posteriors_for(cfg, run_dir)?;
    let mut cfg = cfg.clone();
    cfg.analytics.ttp = true;
    cfg.analytics.markups = false;
    cfg.analytics.anova = false;
    cfg.analytics.dominance = false;
    run_analytics(&cfg, run_dir, &posteriors, &model, &panel)
}

pub fn rerun_markups(cfg: &RunConfig, run_dir: &Path) -> CliResult<()> {
    let (panel, model, posteriors) = posteriors_for(cfg, run_dir)?;
    let mut cfg = cfg.clone();
    cfg.analytics.ttp = false;
    cfg.analytics.markups = true;
    cfg.analytics.anova = false;
    cfg.analytics.dominance = false;
    run_analytics(&cfg, run_dir, &posteriors, &model, &panel)
}

pub fn rerun_anova(cfg: &RunConfig, run_dir: &Path) -> CliResult<()> {
    let (panel, model, posteriors) = posteriors_for(cfg, run_dir)?;
    let mut cfg = cfg.clone();
    cfg.analytics.ttp = false;
    cfg.analytics.markups = false;
    cfg.analytics.anova = true;
    cfg.analytics.dominance = false;
    run_analytics(&cfg, run_dir, &posteriors, &model, &panel)
}

/// Rebuild the SVG histograms from a run directory's CSVs alone.
pub fn regenerate_svgs(run_dir: &Path) -> CliResult<()> {
    let fp_path = run_dir.join("firm_posteriors.csv");
    let mut rdr = csv::Reader::from_path(&fp_path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", fp_path.display())))?;
    let headers = rdr.headers().map_err(|e| CliError::Data(e.to_string()))?.clone();
    let e_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("e_"))
        .map(|(i, h)| (i, h[2..].to_string()))
        .collect();
    if e_cols.is_empty() {
        return Err(CliError::Data("no e_<param> columns in firm_posteriors.csv".into()));
    }
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); e_cols.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Data(e.to_string()))?;
        for (j, (col, _)) in e_cols.iter().enumerate() {
            let v: f64 = rec[*col]
                .parse()
                .map_err(|_| CliError::Data("bad number in firm_posteriors.csv".into()))?;
            columns[j].push(v);
        }
    }
    for ((_, name), values) in e_cols.iter().zip(columns.iter()) {
        let svg = histogram_svg(
            &[HistSeries { label: name, color: "#336699", values }],
            &format!("Posterior means: {name}"),
            name,
        );
        std::fs::write(run_dir.join(format!("hist_{name}.svg")), svg)
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }

    // TTP overlay when ttp.csv exists.
    let ttp_path = run_dir.join("ttp.csv");
    if ttp_path.exists() {
        let mut rdr = csv::Reader::from_path(&ttp_path)
            .map_err(|e| CliError::Data(e.to_string()))?;
        let mut tfp = Vec::new();
        let mut ttp = Vec::new();
        let mut scale = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| CliError::Data(e.to_string()))?;
            ttp.push(rec[2].parse::<f64>().map_err(|_| CliError::Data("bad ttp.csv".into()))?);
            tfp.push(rec[3].parse::<f64>().map_err(|_| CliError::Data("bad ttp.csv".into()))?);
            scale.push(rec[4].parse::<f64>().map_err(|_| CliError::Data("bad ttp.csv".into()))?);
        }
        let svg = histogram_svg(
            &[
                HistSeries { label: "ln TFP", color: "#d4a017", values: &tfp },
                HistSeries { label: "returns to scale", color: "#336699", values: &scale },
                HistSeries { label: "ln TTP", color: "#b03030", values: &ttp },
            ],
            "Productivity distributions",
            "value",
        );
        std::fs::write(run_dir.join("ttp_overlay.svg"), svg)
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    Ok(())
}
