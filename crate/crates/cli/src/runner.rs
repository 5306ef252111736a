//! Pipeline orchestration: load -> grid -> likelihood -> solve ->
//! posterior -> analytics, with atomic artifact output and structured
//! progress logging on stderr.

use crate::artifacts;
use crate::config::RunConfig;
use crate::log::log_event;
use hetprod_core::analytics::{
    anova_decomposition, compute_markups, compute_ttp, dominance_diagnostic, Grouping,
    TtpReference,
};
use hetprod_core::error::Error;
use hetprod_core::grid::TypeTable;
use hetprod_core::likelihood::LikelihoodEvaluator;
use hetprod_core::model::{Family, ModelSpec};
use hetprod_core::panel::{load_panel, PanelDataset};
use hetprod_core::plot::{histogram_svg, HistSeries};
use hetprod_core::posterior::{
    dispersion_from_moments, dispersion_from_posteriors, firm_posteriors, population_moments,
    posterior_mean_moments, FirmPosterior,
};
use hetprod_core::sim::run_bias_mse;
use hetprod_core::solver::{
    extract_support, fixed_point_iterate_with, solve_with_restarts, MixingDistribution,
};
use serde_json::json;
use std::path::{Path, PathBuf};

/// Exit-code classification (0 ok, 2 config, 3 data, 4 non-convergence,
/// 5 internal).
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    NonConvergence(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::NonConvergence(_) => 4,
            CliError::Internal(_) => 5,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Data(m) | CliError::NonConvergence(m)
            | CliError::Internal(m) => m,
        }
    }
}

/// Classify a core error raised while handling input data.
fn data_stage(e: Error) -> CliError {
    match e {
        Error::Invalid(m) => CliError::Config(m),
        Error::NonConvergence { iterations, delta } => CliError::NonConvergence(format!(
            "no convergence after {iterations} iterations (delta {delta:.3e})"
        )),
        other => CliError::Data(other.to_string()),
    }
}

fn internal_stage(e: Error) -> CliError {
    CliError::Internal(e.to_string())
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Load (and optionally trim) the configured input panel; the intensive
/// family additionally applies the per-worker transform.
pub fn load_configured_panel(cfg: &RunConfig) -> CliResult<(PanelDataset, serde_json::Value)> {
    let input = cfg
        .input
        .as_ref()
        .ok_or_else(|| CliError::Config("config has no [input] section".into()))?;
    if !input.path.exists() {
        return Err(CliError::Config(format!(
            "input path {} does not exist",
            input.path.display()
        )));
    }
    let (mut panel, load_report) =
        load_panel(&input.path, &input.columns, input.log_transform).map_err(data_stage)?;
    log_event(json!({
        "event": "load",
        "rows": load_report.rows_read,
        "firms": load_report.firms_kept,
        "dropped_unbalanced": load_report.firms_dropped_unbalanced,
        "periods": panel.n_periods(),
    }));
    let mut trim_json = serde_json::to_value(&load_report).unwrap();
    if let Some(trim) = &input.trim {
        let (trimmed, trim_report) =
            panel.quantile_trim(trim.lower, trim.upper).map_err(data_stage)?;
        log_event(json!({
            "event": "trim",
            "dropped": trim_report.firms_dropped,
            "kept": trimmed.n_firms(),
        }));
        trim_json["trim"] = serde_json::to_value(&trim_report).unwrap();
        panel = trimmed;
    }
    if cfg.family() == Family::IntensiveCd {
        panel = panel.to_per_worker();
    }
    Ok((panel, trim_json))
}

/// Stage directory handling: artifacts are written to `<out>.staging` and
/// the directory is renamed into place only on success.
pub struct StagedDir {
    staging: PathBuf,
    finalpath: PathBuf,
}

impl StagedDir {
    pub fn create(finalpath: &Path) -> CliResult<StagedDir> {
        let name = finalpath
            .file_name()
            .ok_or_else(|| CliError::Config("output_dir must have a name".into()))?;
        let staging = finalpath.with_file_name(format!(".{}.staging", name.to_string_lossy()));
        if staging.exists() {
            std::fs::remove_dir_all(&staging)
                .map_err(|e| CliError::Internal(format!("cannot clear staging dir: {e}")))?;
        }
        std::fs::create_dir_all(&staging)
            .map_err(|e| CliError::Internal(format!("cannot create staging dir: {e}")))?;
        Ok(StagedDir { staging, finalpath: finalpath.to_path_buf() })
    }

    pub fn path(&self) -> &Path {
        &self.staging
    }

    pub fn commit(self) -> CliResult<()> {
        if self.finalpath.exists() {
            std::fs::remove_dir_all(&self.finalpath)
                .map_err(|e| CliError::Internal(format!("cannot replace output dir: {e}")))?;
        }
        std::fs::rename(&self.staging, &self.finalpath)
            .map_err(|e| CliError::Internal(format!("cannot finalize output dir: {e}")))?;
        Ok(())
    }
}

/// The `estimate` subcommand body.
pub fn run_estimate(cfg: &RunConfig) -> CliResult<()> {
    let (panel, load_json) = load_configured_panel(cfg)?;
    let model = ModelSpec::new(cfg.family(), panel.n_periods());
    let grid = cfg.resolve_grid(&model, &panel).map_err(data_stage)?;
    let table = TypeTable::from_grid(&model, &grid).map_err(data_stage)?;
    log_event(json!({"event": "grid", "q": table.q(), "family": model.family.as_str()}));

    let evaluator = LikelihoodEvaluator::new(&model, &panel, &table).map_err(data_stage)?;

    // With a cache path configured, serve densities from disk, building the
    // file on first use (or whenever the model/grid/panel changed).
    let cache_reader: Option<hetprod_core::likelihood::DensityCacheReader> =
        match &cfg.run.cache_path {
            Some(path) => {
                let open = |p: &Path| {
                    hetprod_core::likelihood::DensityCacheReader::open(
                        p,
                        &model,
                        &grid,
                        panel.n_firms(),
                        panel.n_periods(),
                    )
                };
                match open(path) {
                    Ok(r) => {
                        log_event(json!({"event": "cache", "status": "hit"}));
                        Some(r)
                    }
                    Err(_) => {
                        let stripe = (cfg.run.memory_budget_mb << 20)
                            / (table.q().max(1) * 8);
                        hetprod_core::likelihood::write_cache(
                            path,
                            &evaluator,
                            &grid,
                            hetprod_core::likelihood::BlockShape {
                                firms: stripe.clamp(1, panel.n_firms()),
                                types: table.q(),
                            },
                        )
                        .map_err(internal_stage)?;
                        log_event(json!({"event": "cache", "status": "built"}));
                        Some(open(path).map_err(internal_stage)?)
                    }
                }
            }
            None => None,
        };
    let source: &dyn hetprod_core::likelihood::LogDensitySource = match &cache_reader {
        Some(r) => r,
        None => &evaluator,
    };

    let opts = cfg.solver_options();
    let log_every = cfg.run.log_every.max(1);

    let (pi, report, restart_logliks) = if cfg.solver.restarts > 0 {
        let (pi, report, rl) =
            solve_with_restarts(source, &opts, cfg.solver.restarts, cfg.run.seed)
                .map_err(data_stage)?;
        (pi, report, rl)
    } else {
        let (pi, report) = fixed_point_iterate_with(
            source,
            MixingDistribution::uniform(table.q()),
            &opts,
            |iter, loglik, delta| {
                if iter % log_every == 0 {
                    log_event(json!({
                        "event": "iter", "iter": iter, "loglik": loglik, "delta": delta,
                    }));
                }
            },
        )
        .map_err(data_stage)?;
        (pi, report, Vec::new())
    };
    log_event(json!({
        "event": "solved",
        "iterations": report.iterations,
        "converged": report.converged,
        "loglik": pi.loglik,
        "support": report.support_size,
    }));
    if !report.converged {
        return Err(CliError::NonConvergence(format!(
            "solver hit max_iter = {} with delta {:.3e}",
            report.iterations, report.final_delta
        )));
    }

    let threshold = cfg.solver.support_threshold_factor / table.q() as f64;
    let pruned = extract_support(&pi, threshold).map_err(data_stage)?;
    let posteriors =
        firm_posteriors(source, &pruned, &table, &panel.firm_ids).map_err(data_stage)?;
    let mixture = population_moments(&pruned, &table, &model);
    let posterior_means = posterior_mean_moments(&posteriors, &model);

    // Artifacts.
    let staged = StagedDir::create(&cfg.run.output_dir)?;
    let dir = staged.path();
    artifacts::write_json(&dir.join("load_report.json"), &load_json).map_err(internal_stage)?;
    artifacts::write_json(
        &dir.join("grid.json"),
        &artifacts::GridArtifact { family: model.family.as_str(), q: table.q(), grid: &grid },
    )
    .map_err(internal_stage)?;
    let mut report_json = serde_json::to_value(&report).unwrap();
    if !restart_logliks.is_empty() {
        report_json["restart_logliks"] = serde_json::to_value(&restart_logliks).unwrap();
    }
    artifacts::write_json(&dir.join("solver_report.json"), &report_json).map_err(internal_stage)?;
    artifacts::write_pi_star(&dir.join("pi_star.csv"), &pruned, &table).map_err(internal_stage)?;
    artifacts::write_firm_posteriors(&dir.join("firm_posteriors.csv"), &posteriors, &model)
        .map_err(internal_stage)?;
    artifacts::write_json(
        &dir.join("moments.json"),
        &json!({"mixture": mixture, "posterior_means": posterior_means}),
    )
    .map_err(internal_stage)?;
    artifacts::write_dispersion(
        &dir.join("dispersion.csv"),
        &dispersion_from_moments(&mixture),
        &dispersion_from_posteriors(&posteriors, &model).map_err(internal_stage)?,
    )
    .map_err(internal_stage)?;

    write_marginal_svgs(dir, &posteriors, &model).map_err(internal_stage)?;
    run_analytics(cfg, dir, &posteriors, &model, &panel)?;

    staged.commit()?;
    log_event(json!({"event": "done", "output_dir": cfg.run.output_dir.display().to_string()}));
    Ok(())
}

fn write_marginal_svgs(
    dir: &Path,
    posteriors: &[FirmPosterior],
    model: &ModelSpec,
) -> hetprod_core::Result<()> {
    for (j, name) in model.param_names().iter().enumerate() {
        let values: Vec<f64> = posteriors.iter().map(|fp| fp.expected[j]).collect();
        let svg = histogram_svg(
            &[HistSeries { label: name, color: "#336699", values: &values }],
            &format!("Posterior means: {name}"),
            name,
        );
        std::fs::write(dir.join(format!("hist_{name}.svg")), svg)?;
    }
    Ok(())
}

/// TTP / markups / ANOVA / dominance per the config toggles; used by both
/// `estimate` and the standalone analytics subcommands.
pub fn run_analytics(
    cfg: &RunConfig,
    dir: &Path,
    posteriors: &[FirmPosterior],
    model: &ModelSpec,
    panel: &PanelDataset,
) -> CliResult<()> {
    let a = &cfg.analytics;
    if a.ttp {
        let reference = match a.ttp_reference.as_str() {
            "explicit" => TtpReference::Explicit {
                k0: a.ttp_k0.expect("validated"),
                l0: a.ttp_l0.expect("validated"),
            },
            _ => TtpReference::MedianBySector,
        };
        let (records, summary) =
            compute_ttp(posteriors, model, panel, &reference).map_err(data_stage)?;
        artifacts::write_ttp_records(&dir.join("ttp.csv"), &records).map_err(internal_stage)?;
        artifacts::write_json(&dir.join("ttp_summary.json"), &summary).map_err(internal_stage)?;
        let tfp: Vec<f64> = records.iter().map(|r| r.ln_tfp).collect();
        let scale: Vec<f64> = records.iter().map(|r| r.scale).collect();
        let ttp: Vec<f64> = records.iter().map(|r| r.ln_ttp).collect();
        let svg = histogram_svg(
            &[
                HistSeries { label: "ln TFP", color: "#d4a017", values: &tfp },
                HistSeries { label: "returns to scale", color: "#336699", values: &scale },
                HistSeries { label: "ln TTP", color: "#b03030", values: &ttp },
            ],
            "Productivity distributions",
            "value",
        );
        std::fs::write(dir.join("ttp_overlay.svg"), svg)
            .map_err(|e| CliError::Internal(e.to_string()))?;
        log_event(json!({
            "event": "ttp",
            "pooled_ttp_p90_p10": summary.pooled_ttp_p90_p10,
            "sd_ln_ttp": summary.sd_ln_ttp,
            "sd_ln_tfp": summary.sd_ln_tfp,
        }));
    }
    if a.markups {
        let (records, summary) = compute_markups(posteriors, model, panel).map_err(data_stage)?;
        artifacts::write_markup_records(&dir.join("markups.csv"), &records)
            .map_err(internal_stage)?;
        artifacts::write_json(&dir.join("markups_summary.json"), &summary)
            .map_err(internal_stage)?;
        log_event(json!({"event": "markups", "mean": summary.mean, "p90_p10": summary.p90_p10}));
    }
    if a.anova {
        let mut rows = Vec::new();
        if panel.sector.is_some() {
            rows.push((
                "sector",
                anova_decomposition(posteriors, model, panel, Grouping::Sector)
                    .map_err(data_stage)?,
            ));
            rows.push((
                "sector_and_size",
                anova_decomposition(posteriors, model, panel, Grouping::SectorAndSize)
                    .map_err(data_stage)?,
            ));
        } else {
            rows.push((
                "size",
                anova_decomposition(posteriors, model, panel, Grouping::Size)
                    .map_err(data_stage)?,
            ));
        }
        artifacts::write_anova(&dir.join("anova.csv"), &rows).map_err(internal_stage)?;
        log_event(json!({"event": "anova", "groupings": rows.len()}));
    }
    if a.dominance {
        let d = dominance_diagnostic(posteriors, model).map_err(data_stage)?;
        artifacts::write_json(&dir.join("dominance.json"), &d).map_err(internal_stage)?;
        log_event(json!({
            "event": "dominance",
            "violating_share": d.violating_share,
            "corr": d.corr_intercept_scale,
        }));
    }
    Ok(())
}

/// The `simulate` subcommand body.
pub fn run_simulate(cfg: &RunConfig) -> CliResult<hetprod_core::sim::SimulationResult> {
    let dgp = cfg.dgp_spec().map_err(|e| CliError::Config(e.to_string()))?;
    let sim_cfg = cfg.simulate.as_ref().expect("checked by dgp_spec");
    let (_, t_len) = dgp.dims();
    let model = ModelSpec::new(Family::DynamicCd, t_len);

    // Estimation grid: a pilot replication supplies the data-adaptive
    // ranges; dynamics are held at zero as in the DGP.
    let pilot = hetprod_core::sim::generate_replication(&dgp, 0)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let points = sim_cfg
        .grid_points
        .clone()
        .unwrap_or_else(|| vec![13, 21, 21, 1, 1, 9]);
    let grid = hetprod_core::grid::default_grid(&model, &pilot.panel, &points)
        .map_err(data_stage)?;
    log_event(json!({"event": "sim_grid", "q": grid.q()}));

    let opts = cfg.solver_options();
    let result = run_bias_mse(&dgp, &grid, &opts).map_err(data_stage)?;
    log_event(json!({
        "event": "sim_done",
        "replications": result.replications.len(),
        "failed": result.failed,
        "bias_mean": result.bias_mean,
        "bias_sd": result.bias_sd,
    }));

    let staged = StagedDir::create(&cfg.run.output_dir)?;
    let dir = staged.path();
    artifacts::write_json(&dir.join("simulation.json"), &result).map_err(internal_stage)?;
    artifacts::write_simulation_csv(&dir.join("simulation_replications.csv"), &result)
        .map_err(internal_stage)?;
    artifacts::write_bias_table(&dir.join("bias_table.csv"), &result).map_err(internal_stage)?;
    staged.commit()?;
    Ok(result)
}

/// The `ols-baseline` subcommand body.
pub fn run_ols_baseline(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let (panel, _) = load_configured_panel(cfg)?;
    let model = ModelSpec::new(cfg.family(), panel.n_periods());
    let fits = hetprod_core::ols::per_firm_ols(&panel, &model).map_err(data_stage)?;
    let pooled = hetprod_core::ols::pooled_ols(&panel, &model).map_err(data_stage)?;
    let names: Vec<&str> = match model.family {
        Family::IntensiveCd => vec!["a", "b"],
        _ => vec!["alpha0", "alpha1", "alpha2", "beta", "gamma"],
    };
    std::fs::create_dir_all(out.parent().unwrap_or(Path::new(".")))
        .map_err(|e| CliError::Internal(e.to_string()))?;
    artifacts::write_ols_baseline(out, &fits, &pooled, &names).map_err(internal_stage)?;
    let ok = fits.iter().filter(|f| f.rank_ok).count();
    log_event(json!({"event": "ols", "firms": fits.len(), "full_rank": ok}));
    Ok(())
}
