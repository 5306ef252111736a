//! Run configuration: one TOML file per run, every field mirrored by a CLI
//! flag (flags win).

use hetprod_core::error::{Error, Result};
use hetprod_core::grid::{DimSpec, GridSpec};
use hetprod_core::model::{Family, ModelSpec};
use hetprod_core::panel::ColumnMap;
use hetprod_core::sim::{ClampRanges, DgpSpec, InputSource, ParamLaw};
use hetprod_core::solver::SolverOptions;
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<InputConfig>,
    pub model: ModelConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub analytics: AnalyticsConfig,
    #[serde(default)]
    pub run: RunSection,
    pub simulate: Option<SimulateConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub path: PathBuf,
    #[serde(default)]
    pub log_transform: bool,
    pub columns: ColumnMap,
    pub trim: Option<TrimConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrimConfig {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// "cd" | "ces" | "intensive"
    pub family: String,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Per-parameter point counts, model order; family default when absent.
    pub points: Option<Vec<usize>>,
    /// Explicit per-parameter {min, max, points} overriding the
    /// data-adaptive range.
    #[serde(default)]
    pub override_dims: BTreeMap<String, DimOverride>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimOverride {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tol: f64,
    pub loglik_tol: f64,
    pub max_iter: usize,
    /// Support threshold after convergence = factor / Q.
    pub support_threshold_factor: f64,
    /// In-iteration pruning threshold = factor / Q; 0 disables.
    pub prune_factor: f64,
    pub restarts: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-9,
            loglik_tol: 1e-10,
            max_iter: 20_000,
            support_threshold_factor: 1e-10,
            prune_factor: 1e-16,
            restarts: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyticsConfig {
    pub ttp: bool,
    pub markups: bool,
    pub anova: bool,
    pub dominance: bool,
    /// "median_by_sector" | "explicit"
    pub ttp_reference: String,
    pub ttp_k0: Option<f64>,
    pub ttp_l0: Option<f64>,
}

impl Default for AnalyticsConfig {
    fn default() -> Self {
        AnalyticsConfig {
            ttp: false,
            markups: false,
            anova: false,
            dominance: true,
            ttp_reference: "median_by_sector".into(),
            ttp_k0: None,
            ttp_l0: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub output_dir: PathBuf,
    pub threads: usize,
    pub memory_budget_mb: usize,
    pub seed: u64,
    /// Progress cadence in iterations for stderr logging.
    pub log_every: usize,
    /// Optional on-disk density cache, reused across solver runs when the
    /// model/grid/panel still match.
    pub cache_path: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            output_dir: PathBuf::from("hetprod_out"),
            threads: 1,
            memory_budget_mb: 256,
            seed: 20240501,
            log_every: 100,
            cache_path: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub firms: usize,
    pub periods: usize,
    pub replications: usize,
    #[serde(default = "default_within_k")]
    pub within_sd_k: f64,
    #[serde(default = "default_within_l")]
    pub within_sd_l: f64,
    /// Reuse a real panel's inputs instead of synthetic draws.
    pub inputs_from: Option<PathBuf>,
    /// Mean of (alpha, beta, gamma, s, kbar, lbar).
    pub mean: Option<[f64; 6]>,
    pub sd: Option<[f64; 6]>,
    /// Row-major 6x6 correlation matrix.
    pub corr: Option<Vec<Vec<f64>>>,
    /// Grid point counts for the estimation step (alpha1/alpha2 fixed at 0).
    pub grid_points: Option<Vec<usize>>,
}

fn default_within_k() -> f64 {
    0.35
}
fn default_within_l() -> f64 {
    0.25
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::invalid(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::invalid(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        Family::parse(&self.model.family)?;
        if let Some(input) = &self.input {
            if let Some(trim) = &input.trim {
                if !(0.0..=1.0).contains(&trim.lower)
                    || !(0.0..=1.0).contains(&trim.upper)
                    || trim.lower >= trim.upper
                {
                    return Err(Error::invalid("trim band must satisfy 0 <= lower < upper <= 1"));
                }
            }
        }
        if self.run.threads == 0 {
            return Err(Error::invalid("run.threads must be >= 1"));
        }
        if self.run.memory_budget_mb == 0 {
            return Err(Error::invalid("run.memory_budget_mb must be >= 1"));
        }
        if !(self.solver.tol > 0.0) {
            return Err(Error::invalid("solver.tol must be positive"));
        }
        match self.analytics.ttp_reference.as_str() {
            "median_by_sector" => {}
            "explicit" => {
                if self.analytics.ttp_k0.is_none() || self.analytics.ttp_l0.is_none() {
                    return Err(Error::invalid(
                        "explicit TTP reference needs analytics.ttp_k0 and analytics.ttp_l0",
                    ));
                }
            }
            other => {
                return Err(Error::invalid(format!(
                    "unknown ttp_reference {other:?}; expected median_by_sector or explicit"
                )))
            }
        }
        if let Some(sim) = &self.simulate {
            if sim.replications == 0 {
                return Err(Error::invalid("simulate.replications must be >= 1"));
            }
            if sim.periods < 2 {
                return Err(Error::invalid("simulate.periods must be >= 2"));
            }
            if let Some(corr) = &sim.corr {
                if corr.len() != 6 || corr.iter().any(|r| r.len() != 6) {
                    return Err(Error::invalid("simulate.corr must be a 6x6 matrix"));
                }
            }
        }
        Ok(())
    }

    pub fn family(&self) -> Family {
        Family::parse(&self.model.family).expect("validated")
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.solver.tol,
            loglik_tol: self.solver.loglik_tol,
            max_iter: self.solver.max_iter,
            memory_budget_bytes: self.run.memory_budget_mb << 20,
            prune_factor: self.solver.prune_factor,
        }
    }

    /// Resolve the grid: family-default point counts, data-adaptive ranges,
    /// then explicit overrides.
    pub fn resolve_grid(
        &self,
        model: &ModelSpec,
        data: &hetprod_core::panel::PanelDataset,
    ) -> Result<GridSpec> {
        let points = match &self.grid.points {
            Some(p) => p.clone(),
            None => model.family.default_points(),
        };
        let mut grid = hetprod_core::grid::default_grid(model, data, &points)?;
        for (name, o) in &self.grid.override_dims {
            let dim = grid
                .dims
                .iter_mut()
                .find(|d| &d.name == name)
                .ok_or_else(|| Error::invalid(format!("grid override for unknown parameter {name:?}")))?;
            *dim = DimSpec::new(name, o.min, o.max, o.points);
        }
        grid.validate(model)?;
        Ok(grid)
    }

    pub fn dgp_spec(&self) -> Result<DgpSpec> {
        let sim = self
            .simulate
            .as_ref()
            .ok_or_else(|| Error::invalid("config has no [simulate] section"))?;
        let defaults = DgpSpec::calibrated_default(sim.firms, sim.periods, sim.replications, self.run.seed);
        let law = match (&sim.mean, &sim.sd, &sim.corr) {
            (None, None, None) => defaults.law.clone(),
            (Some(mean), Some(sd), Some(corr)) => {
                let mut c = [[0.0; 6]; 6];
                for a in 0..6 {
                    for b in 0..6 {
                        c[a][b] = corr[a][b];
                    }
                }
                ParamLaw::from_sd_corr(*mean, *sd, c)
            }
            _ => {
                return Err(Error::invalid(
                    "simulate.mean, simulate.sd, simulate.corr must be given together",
                ))
            }
        };
        let inputs = match &sim.inputs_from {
            Some(path) => {
                let cols = self
                    .input
                    .as_ref()
                    .map(|i| i.columns.clone())
                    .unwrap_or_else(ColumnMap::canonical);
                let (panel, _) = hetprod_core::panel::load_panel(path, &cols, false)?;
                InputSource::Panel(Box::new(panel))
            }
            None => InputSource::Synthetic {
                firms: sim.firms,
                periods: sim.periods,
                within_sd_k: sim.within_sd_k,
                within_sd_l: sim.within_sd_l,
            },
        };
        Ok(DgpSpec {
            inputs,
            law,
            replications: sim.replications,
            seed: self.run.seed,
            clamp: ClampRanges::default(),
        })
    }
}
