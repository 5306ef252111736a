//! Balanced firm panel ingestion, validation, and transforms.
//!
//! All estimation code consumes the canonical representation built here:
//! firms indexed 0..I, periods t = 1..=T (calendar years remapped by
//! subtracting the first year), and row-major I x T matrices of log output,
//! log capital, and log labor. Firms with any missing cell are dropped, not
//! imputed.

use crate::error::{Error, Result};
use crate::stats::sample_quantile_unsorted;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

/// Balanced panel of log output / capital / labor, plus optional sector
/// codes and labor revenue shares.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    pub firm_ids: Vec<String>,
    /// Periods 1..=T in order.
    pub periods: Vec<i64>,
    /// Row-major I x T.
    pub y: Vec<f64>,
    pub k: Vec<f64>,
    pub l: Vec<f64>,
    pub sector: Option<Vec<String>>,
    /// Row-major I x T; strictly positive where present.
    pub wage_share: Option<Vec<f64>>,
}

/// How source columns map onto panel fields. `wage_share` may be given
/// directly or derived as `wage_bill / revenue`.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ColumnMap {
    pub firm: String,
    pub year: String,
    pub output: String,
    pub capital: String,
    pub labor: String,
    #[serde(default)]
    pub sector: Option<String>,
    #[serde(default)]
    pub wage_share: Option<String>,
    #[serde(default)]
    pub wage_bill: Option<String>,
    #[serde(default)]
    pub revenue: Option<String>,
}

impl ColumnMap {
    /// Canonical serialized panel columns: firm_id, year, y, k, l.
    pub fn canonical() -> ColumnMap {
        ColumnMap {
            firm: "firm_id".into(),
            year: "t".into(),
            output: "y".into(),
            capital: "k".into(),
            labor: "l".into(),
            sector: Some("sector".into()),
            wage_share: Some("wage_share".into()),
            wage_bill: None,
            revenue: None,
        }
    }
}

/// Outcome counters from loading and balancing.
#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct LoadReport {
    pub rows_read: usize,
    pub firms_seen: usize,
    pub firms_dropped_unbalanced: usize,
    pub firms_kept: usize,
}

/// Outcome counters from quantile trimming.
#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct TrimReport {
    pub firms_before: usize,
    pub firms_dropped: usize,
    pub bands: Vec<(String, f64, f64)>,
}

impl PanelDataset {
    pub fn n_firms(&self) -> usize {
        self.firm_ids.len()
    }

    pub fn n_periods(&self) -> usize {
        self.periods.len()
    }

    #[inline]
    pub fn idx(&self, firm: usize, t: usize) -> usize {
        firm * self.n_periods() + t
    }

    /// Rows of firm `i` as (y, k, l) slices.
    pub fn firm_rows(&self, i: usize) -> (&[f64], &[f64], &[f64]) {
        let t = self.n_periods();
        let r = i * t..(i + 1) * t;
        (&self.y[r.clone()], &self.k[r.clone()], &self.l[r])
    }

    /// Check every dataset invariant; used by tests and after each transform.
    pub fn validate(&self) -> Result<()> {
        let i = self.n_firms();
        let t = self.n_periods();
        if i == 0 {
            return Err(Error::data("panel has zero firms"));
        }
        if t < 2 {
            return Err(Error::data("panel needs at least two periods"));
        }
        for (pos, &p) in self.periods.iter().enumerate() {
            if p != pos as i64 + 1 {
                return Err(Error::data("periods must be exactly 1..=T in order"));
            }
        }
        for (name, m) in [("y", &self.y), ("k", &self.k), ("l", &self.l)] {
            if m.len() != i * t {
                return Err(Error::data(format!("{name} matrix is not I x T")));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::data(format!("{name} contains non-finite values")));
            }
        }
        if let Some(sec) = &self.sector {
            if sec.len() != i {
                return Err(Error::data("sector vector length != I"));
            }
        }
        if let Some(ws) = &self.wage_share {
            if ws.len() != i * t {
                return Err(Error::data("wage_share matrix is not I x T"));
            }
            if ws.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::data("wage_share entries must be finite and positive"));
            }
        }
        Ok(())
    }

    /// Per-worker transform for the intensive family: y -> y - l,
    /// k -> k - l. Labor is kept (the intensive model ignores it).
    pub fn to_per_worker(&self) -> PanelDataset {
        let mut out = self.clone();
        for i in 0..self.y.len() {
            out.y[i] = self.y[i] - self.l[i];
            out.k[i] = self.k[i] - self.l[i];
        }
        out
    }

    /// Drop every firm having any y/k/l observation outside the pooled
    /// [lower, upper] quantile band of that variable.
    pub fn quantile_trim(&self, lower: f64, upper: f64) -> Result<(PanelDataset, TrimReport)> {
        if !(0.0..=1.0).contains(&lower) || !(0.0..=1.0).contains(&upper) || lower >= upper {
            return Err(Error::invalid(format!(
                "trim band must satisfy 0 <= lower < upper <= 1, got [{lower}, {upper}]"
            )));
        }
        let mut keep = vec![true; self.n_firms()];
        let mut bands = Vec::new();
        for (name, m) in [("y", &self.y), ("k", &self.k), ("l", &self.l)] {
            let lo = sample_quantile_unsorted(m, lower);
            let hi = sample_quantile_unsorted(m, upper);
            bands.push((name.to_string(), lo, hi));
            for firm in 0..self.n_firms() {
                let t = self.n_periods();
                for pos in firm * t..(firm + 1) * t {
                    if m[pos] < lo || m[pos] > hi {
                        keep[firm] = false;
                        break;
                    }
                }
            }
        }
        let dropped = keep.iter().filter(|&&b| !b).count();
        if dropped == self.n_firms() {
            return Err(Error::data("quantile band excludes all firms"));
        }
        let out = self.select_firms(&keep);
        let report = TrimReport {
            firms_before: self.n_firms(),
            firms_dropped: dropped,
            bands,
        };
        Ok((out, report))
    }

    fn select_firms(&self, keep: &[bool]) -> PanelDataset {
        let t = self.n_periods();
        let mut out = PanelDataset {
            firm_ids: Vec::new(),
            periods: self.periods.clone(),
            y: Vec::new(),
            k: Vec::new(),
            l: Vec::new(),
            sector: self.sector.as_ref().map(|_| Vec::new()),
            wage_share: self.wage_share.as_ref().map(|_| Vec::new()),
        };
        for (i, &k) in keep.iter().enumerate() {
            if !k {
                continue;
            }
            out.firm_ids.push(self.firm_ids[i].clone());
            let r = i * t..(i + 1) * t;
            out.y.extend_from_slice(&self.y[r.clone()]);
            out.k.extend_from_slice(&self.k[r.clone()]);
            out.l.extend_from_slice(&self.l[r.clone()]);
            if let (Some(dst), Some(src)) = (&mut out.sector, &self.sector) {
                dst.push(src[i].clone());
            }
            if let (Some(dst), Some(src)) = (&mut out.wage_share, &self.wage_share) {
                dst.extend_from_slice(&src[r]);
            }
        }
        out
    }

    /// Write the canonical long-format CSV (firm_id, t, y, k, l
    /// [, sector, wage_share]).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["firm_id", "t", "y", "k", "l"];
        if self.sector.is_some() {
            header.push("sector");
        }
        if self.wage_share.is_some() {
            header.push("wage_share");
        }
        wtr.write_record(&header)?;
        let t_len = self.n_periods();
        for i in 0..self.n_firms() {
            for t in 0..t_len {
                let pos = self.idx(i, t);
                let mut rec = vec![
                    self.firm_ids[i].clone(),
                    (t as i64 + 1).to_string(),
                    self.y[pos].to_string(),
                    self.k[pos].to_string(),
                    self.l[pos].to_string(),
                ];
                if let Some(sec) = &self.sector {
                    rec.push(sec[i].clone());
                }
                if let Some(ws) = &self.wage_share {
                    rec.push(ws[pos].to_string());
                }
                wtr.write_record(&rec)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Load a delimiter-separated panel file (comma or tab, sniffed from the
/// header line), balance it, and remap years to t = 1..=T. The window is
/// the set of distinct years present; firms missing any of them are
/// dropped and counted. Gaps between years collapse to consecutive t.
///
/// With `log_transform` set, raw y/k/l values must be strictly positive and
/// are replaced by their natural logs. Wage shares are never transformed.
pub fn load_panel(
    path: &Path,
    map: &ColumnMap,
    log_transform: bool,
) -> Result<(PanelDataset, LoadReport)> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    load_panel_str(&raw, map, log_transform)
}

pub fn load_panel_str(
    content: &str,
    map: &ColumnMap,
    log_transform: bool,
) -> Result<(PanelDataset, LoadReport)> {
    let delimiter = match content.lines().next() {
        Some(line) if line.contains('\t') => b'\t',
        _ => b',',
    };
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(false)
        .from_reader(content.as_bytes());

    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::data(format!("column {name:?} not found in input header")))
    };
    let c_firm = col(&map.firm)?;
    let c_year = col(&map.year)?;
    let c_y = col(&map.output)?;
    let c_k = col(&map.capital)?;
    let c_l = col(&map.labor)?;
    let c_sector = map.sector.as_deref().map(col).transpose()?;
    let c_ws = map.wage_share.as_deref().map(col).transpose()?;
    let c_wb = map.wage_bill.as_deref().map(col).transpose()?;
    let c_rev = map.revenue.as_deref().map(col).transpose()?;
    if c_wb.is_some() != c_rev.is_some() {
        return Err(Error::invalid(
            "wage_bill and revenue columns must be mapped together",
        ));
    }

    struct Obs {
        y: f64,
        k: f64,
        l: f64,
        sector: Option<String>,
        wage_share: Option<f64>,
    }

    let parse_f64 = |field: &str, name: &str, row: usize| -> Result<f64> {
        field
            .trim()
            .parse::<f64>()
            .map_err(|_| Error::data(format!("row {row}: cannot parse {name} value {field:?}")))
    };

    // firm -> year -> observation; BTreeMaps keep ordering deterministic.
    let mut firms: BTreeMap<String, BTreeMap<i64, Obs>> = BTreeMap::new();
    let mut first_seen: Vec<String> = Vec::new();
    let mut years_present: std::collections::BTreeSet<i64> = std::collections::BTreeSet::new();
    let mut rows_read = 0usize;

    for (rownum, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let rownum = rownum + 2; // 1-based, after header
        rows_read += 1;
        let firm = rec[c_firm].trim().to_string();
        let year = rec[c_year]
            .trim()
            .parse::<i64>()
            .map_err(|_| Error::data(format!("row {rownum}: cannot parse year {:?}", &rec[c_year])))?;
        let mut y = parse_f64(&rec[c_y], "output", rownum)?;
        let mut k = parse_f64(&rec[c_k], "capital", rownum)?;
        let mut l = parse_f64(&rec[c_l], "labor", rownum)?;
        if log_transform {
            for (name, v) in [("output", &mut y), ("capital", &mut k), ("labor", &mut l)] {
                if *v <= 0.0 {
                    return Err(Error::data(format!(
                        "row {rownum}: nonpositive {name} value {v} under log transform"
                    )));
                }
                *v = v.ln();
            }
        }
        let sector = c_sector.map(|c| rec[c].trim().to_string());
        let wage_share = match (c_ws, c_wb) {
            (Some(c), _) => Some(parse_f64(&rec[c], "wage_share", rownum)?),
            (None, Some(cb)) => {
                let wb = parse_f64(&rec[cb], "wage_bill", rownum)?;
                let rev = parse_f64(&rec[c_rev.unwrap()], "revenue", rownum)?;
                if rev <= 0.0 {
                    return Err(Error::data(format!("row {rownum}: nonpositive revenue {rev}")));
                }
                Some(wb / rev)
            }
            (None, None) => None,
        };
        if !firms.contains_key(&firm) {
            first_seen.push(firm.clone());
        }
        let entry = firms.entry(firm.clone()).or_default();
        if entry.insert(year, Obs { y, k, l, sector, wage_share }).is_some() {
            return Err(Error::data(format!(
                "duplicate observation for firm {firm:?}, year {year}"
            )));
        }
        years_present.insert(year);
    }

    if firms.is_empty() {
        return Err(Error::data("input file contains no data rows"));
    }
    let years: Vec<i64> = years_present.into_iter().collect();
    let t_len = years.len();
    if t_len < 2 {
        return Err(Error::data("panel needs at least two distinct years"));
    }

    let firms_seen = firms.len();
    let has_ws = c_ws.is_some() || c_wb.is_some();
    let mut out = PanelDataset {
        firm_ids: Vec::new(),
        periods: (1..=t_len as i64).collect(),
        y: Vec::new(),
        k: Vec::new(),
        l: Vec::new(),
        sector: c_sector.map(|_| Vec::new()),
        wage_share: if has_ws { Some(Vec::new()) } else { None },
    };
    let mut dropped = 0usize;
    // Keep the file's first-appearance firm order.
    for firm in &first_seen {
        let obs = &firms[firm];
        if years.iter().any(|yr| !obs.contains_key(yr)) {
            dropped += 1;
            continue;
        }
        out.firm_ids.push(firm.clone());
        for yr in &years {
            let o = &obs[yr];
            out.y.push(o.y);
            out.k.push(o.k);
            out.l.push(o.l);
            if let Some(ws) = &mut out.wage_share {
                ws.push(o.wage_share.ok_or_else(|| {
                    Error::data(format!("missing wage share for firm {firm:?}"))
                })?);
            }
        }
        if let Some(sec) = &mut out.sector {
            let first_year = years[0];
            sec.push(obs[&first_year].sector.clone().unwrap_or_default());
        }
    }
    if out.firm_ids.is_empty() {
        return Err(Error::data("no firm survives balancing"));
    }
    out.validate()?;
    let report = LoadReport {
        rows_read,
        firms_seen,
        firms_dropped_unbalanced: dropped,
        firms_kept: out.n_firms(),
    };
    Ok((out, report))
}

/// Read a panel previously written by [`PanelDataset::write_csv`].
pub fn read_canonical_csv(path: &Path) -> Result<PanelDataset> {
    let (panel, _) = load_panel(path, &canonical_map_for(path)?, false)?;
    Ok(panel)
}

fn canonical_map_for(path: &Path) -> Result<ColumnMap> {
    // Sector / wage_share columns are optional in canonical files; map them
    // only when present in the header.
    let raw = std::fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    let header = raw.lines().next().unwrap_or_default();
    let mut map = ColumnMap::canonical();
    if !header.split(',').any(|h| h == "sector") {
        map.sector = None;
    }
    if !header.split(',').any(|h| h == "wage_share") {
        map.wage_share = None;
    }
    Ok(map)
}
