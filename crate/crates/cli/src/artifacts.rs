//! Artifact readers and writers. Every file format here is part of the
//! batch interface: CSVs for tabular outputs, JSON for reports, SVG for
//! figures. Writers are deterministic: same inputs, same bytes.

use hetprod_core::error::{Error, Result};
use hetprod_core::grid::{GridSpec, TypeTable};
use hetprod_core::model::ModelSpec;
use hetprod_core::posterior::FirmPosterior;
use hetprod_core::solver::MixingDistribution;
use std::io::Write;
use std::path::Path;

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::numerical(format!("json serialization: {e}")))?;
    f.write_all(text.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

/// pi_star.csv: one row per supported type with its parameter values.
pub fn write_pi_star(path: &Path, pi: &MixingDistribution, table: &TypeTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["type_index".to_string()];
    header.extend(table.model.param_names().iter().map(|s| s.to_string()));
    header.push("weight".into());
    w.write_record(&header)?;
    for q in pi.support_indices() {
        let params = table.param_vector(q);
        let mut rec = vec![q.to_string()];
        rec.extend(params.0.iter().map(|v| v.to_string()));
        rec.push(pi.weights[q].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// firm_posteriors.csv: expected parameters, posterior SDs, derived
/// intercept and scale, and the most probable type.
pub fn write_firm_posteriors(
    path: &Path,
    posteriors: &[FirmPosterior],
    model: &ModelSpec,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let names = model.param_names();
    let mut header = vec!["firm_id".to_string()];
    header.extend(names.iter().map(|n| format!("e_{n}")));
    header.extend(names.iter().map(|n| format!("sd_{n}")));
    header.push("alpha_bar".into());
    header.push("scale".into());
    header.push("top_type".into());
    w.write_record(&header)?;
    for fp in posteriors {
        let mut rec = vec![fp.firm_id.clone()];
        rec.extend(fp.expected.iter().map(|v| v.to_string()));
        rec.extend(fp.sd.iter().map(|v| v.to_string()));
        rec.push(fp.intercept(model).to_string());
        rec.push(fp.scale(model).to_string());
        rec.push(fp.top_type.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Read firm_posteriors.csv back (for analytics subcommands on a finished
/// run).
pub fn read_firm_posteriors(path: &Path, model: &ModelSpec) -> Result<Vec<FirmPosterior>> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    let headers = r.headers()?.clone();
    let names = model.param_names();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::data(format!("column {name:?} missing in {}", path.display())))
    };
    let id_col = col("firm_id")?;
    let e_cols: Vec<usize> = names
        .iter()
        .map(|n| col(&format!("e_{n}")))
        .collect::<Result<_>>()?;
    let sd_cols: Vec<usize> = names
        .iter()
        .map(|n| col(&format!("sd_{n}")))
        .collect::<Result<_>>()?;
    let top_col = col("top_type")?;
    let parse = |s: &str| -> Result<f64> {
        s.parse::<f64>().map_err(|_| Error::data(format!("bad number {s:?} in posteriors file")))
    };
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        out.push(FirmPosterior {
            firm_id: rec[id_col].to_string(),
            expected: e_cols.iter().map(|&c| parse(&rec[c])).collect::<Result<_>>()?,
            sd: sd_cols.iter().map(|&c| parse(&rec[c])).collect::<Result<_>>()?,
            top_type: rec[top_col]
                .parse()
                .map_err(|_| Error::data("bad top_type in posteriors file"))?,
        });
    }
    if out.is_empty() {
        return Err(Error::data("posteriors file has no rows"));
    }
    Ok(out)
}

pub fn write_dispersion(
    path: &Path,
    mixture: &[hetprod_core::posterior::DispersionRow],
    posterior_means: &[hetprod_core::posterior::DispersionRow],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["basis", "param", "median", "sd", "p90_p10", "infinite_ratio"])?;
    for (basis, rows) in [("mixture", mixture), ("posterior_means", posterior_means)] {
        for r in rows {
            w.write_record([
                basis,
                &r.param,
                &r.median.to_string(),
                &r.sd.to_string(),
                &r.p90_p10.to_string(),
                &r.infinite_ratio.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_ttp_records(path: &Path, records: &[hetprod_core::analytics::TtpRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["firm_id", "sector", "ln_ttp", "ln_tfp", "scale"])?;
    for r in records {
        w.write_record([
            &r.firm_id,
            &r.sector,
            &r.ln_ttp.to_string(),
            &r.ln_tfp.to_string(),
            &r.scale.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_markup_records(
    path: &Path,
    records: &[hetprod_core::analytics::MarkupRecord],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["firm_id", "t", "markup"])?;
    for r in records {
        w.write_record([&r.firm_id, &r.period.to_string(), &r.markup.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_anova(path: &Path, rows_by_grouping: &[(&str, Vec<hetprod_core::analytics::AnovaRow>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["grouping", "param", "explained_share", "df_used", "groups_dropped"])?;
    for (grouping, rows) in rows_by_grouping {
        for r in rows {
            w.write_record([
                *grouping,
                &r.param,
                &r.explained_share.to_string(),
                &r.df_used.to_string(),
                &r.groups_dropped.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_ols_baseline(
    path: &Path,
    fits: &[hetprod_core::ols::FirmOlsEstimate],
    pooled: &hetprod_core::ols::FirmOlsEstimate,
    coef_names: &[&str],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["firm_id".to_string()];
    header.extend(coef_names.iter().map(|n| n.to_string()));
    header.push("residual_sd".into());
    header.push("rank_ok".into());
    w.write_record(&header)?;
    let write_fit = |w: &mut csv::Writer<std::fs::File>,
                     fit: &hetprod_core::ols::FirmOlsEstimate|
     -> Result<()> {
        let mut rec = vec![fit.firm_id.clone()];
        match &fit.coefficients {
            Some(c) => rec.extend(c.iter().map(|v| v.to_string())),
            None => rec.extend(coef_names.iter().map(|_| String::new())),
        }
        rec.push(fit.residual_sd.map(|v| v.to_string()).unwrap_or_default());
        rec.push(fit.rank_ok.to_string());
        w.write_record(&rec)?;
        Ok(())
    };
    for fit in fits {
        write_fit(&mut w, fit)?;
    }
    write_fit(&mut w, pooled)?;
    w.flush()?;
    Ok(())
}

pub fn write_simulation_csv(
    path: &Path,
    result: &hetprod_core::sim::SimulationResult,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "replication",
        "converged",
        "param",
        "est_mean",
        "true_mean",
        "est_sd",
        "true_sd",
    ])?;
    for r in &result.replications {
        for (p, name) in result.params.iter().enumerate() {
            w.write_record([
                &r.replication.to_string(),
                &r.converged.to_string(),
                name,
                &r.est_mean[p].to_string(),
                &r.true_mean[p].to_string(),
                &r.est_sd[p].to_string(),
                &r.true_sd[p].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_bias_table(path: &Path, result: &hetprod_core::sim::SimulationResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["param", "bias_mean", "mse_mean", "bias_sd", "mse_sd"])?;
    for (p, name) in result.params.iter().enumerate() {
        w.write_record([
            name,
            &result.bias_mean[p].to_string(),
            &result.mse_mean[p].to_string(),
            &result.bias_sd[p].to_string(),
            &result.mse_sd[p].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(serde::Serialize)]
pub struct GridArtifact<'a> {
    pub family: &'a str,
    pub q: usize,
    pub grid: &'a GridSpec,
}
