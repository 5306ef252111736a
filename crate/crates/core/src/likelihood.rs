//! The firm x type conditional log-density matrix F, evaluated in blocks so
//! F never has to be fully dense in memory at full scale.
//!
//! Each cell holds ln f_iq = sum_t [ -ln s - ln(2*pi)/2 - ((y_it - h_it)/s)^2 / 2 ],
//! the exact log of the i.i.d. Gaussian product density. All work stays in
//! natural-log space; exponentiation happens only downstream inside
//! max-shifted posterior computations.
//!
//! For the linear-in-parameters families (dynamic CD, intensive CD) each
//! cell costs O(1) via per-firm centered sufficient statistics. The CES
//! mean is nonlinear in (omega, sigma), so CES cells cost O(T), with the
//! input aggregate cached while (omega, sigma) is unchanged along a row.

use crate::error::{Error, Result};
use crate::grid::{GridSpec, TypeTable};
use crate::model::{ces_aggregate_log, Family, ModelSpec, ParamVector};
use crate::panel::PanelDataset;
use crate::stats::LN_2PI;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

/// Tile dimensions for blocked evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockShape {
    pub firms: usize,
    pub types: usize,
}

/// One tile of the I x Q log-density matrix.
#[derive(Debug, Clone)]
pub struct LogDensityBlock {
    pub firms: Range<usize>,
    pub types: Range<usize>,
    /// Row-major, len = firms.len() * types.len().
    pub values: Vec<f64>,
}

impl LogDensityBlock {
    /// Entries must be finite or -inf; -inf counts as flagged underflow.
    pub fn neg_inf_count(&self) -> usize {
        self.values.iter().filter(|v| **v == f64::NEG_INFINITY).count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.firms.len() * self.types.len() {
            return Err(Error::numerical("block dimensions do not match value count"));
        }
        if self.values.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::numerical("block contains NaN or +inf"));
        }
        Ok(())
    }
}

/// Anything able to serve rows of the log-density matrix. `fill` writes
/// log f for the requested firms (rows) and type indices (columns, in the
/// given order) into `out`, row-major. Implementations must be
/// deterministic and safe to call from multiple threads.
pub trait LogDensitySource: Sync {
    fn n_firms(&self) -> usize;
    fn n_types(&self) -> usize;
    fn fill(&self, firms: Range<usize>, types: &[usize], out: &mut [f64]);
}

/// Dense in-memory matrix source, for tests and small instances.
#[derive(Debug, Clone)]
pub struct DenseLogDensity {
    pub i: usize,
    pub q: usize,
    pub values: Vec<f64>,
}

impl DenseLogDensity {
    pub fn new(i: usize, q: usize, values: Vec<f64>) -> DenseLogDensity {
        assert_eq!(values.len(), i * q);
        DenseLogDensity { i, q, values }
    }
}

impl LogDensitySource for DenseLogDensity {
    fn n_firms(&self) -> usize {
        self.i
    }
    fn n_types(&self) -> usize {
        self.q
    }
    fn fill(&self, firms: Range<usize>, types: &[usize], out: &mut [f64]) {
        let w = types.len();
        for (r, firm) in firms.clone().enumerate() {
            let row = &self.values[firm * self.q..(firm + 1) * self.q];
            for (c, &t) in types.iter().enumerate() {
                out[r * w + c] = row[t];
            }
        }
    }
}

/// Reference implementation: direct O(T) product of per-period Gaussian
/// log densities, summed in period order.
pub fn log_density_firm_type(
    model: &ModelSpec,
    data: &PanelDataset,
    firm: usize,
    params: &ParamVector,
) -> f64 {
    let (y, k, l) = data.firm_rows(firm);
    let s = model.error_sd(params);
    let mut acc = 0.0;
    for t in 0..data.n_periods() {
        let h = model.mean_output(params, k[t], l[t], t as i64 + 1);
        let z = (y[t] - h) / s;
        acc += -s.ln() - 0.5 * LN_2PI - 0.5 * z * z;
    }
    acc
}

// Centered sufficient statistics for the dynamic CD design
// (1, t, t^2, k, l). Only the intercept-free part needs the quadratic
// form; the intercept enters through the mean term.
#[derive(Debug, Clone, Copy)]
struct CdStats {
    my: f64,
    mt: f64,
    mt2: f64,
    mk: f64,
    ml: f64,
    syy: f64,
    syt: f64,
    syt2: f64,
    syk: f64,
    syl: f64,
    stt: f64,
    stt2: f64,
    st2t2: f64,
    stk: f64,
    stl: f64,
    st2k: f64,
    st2l: f64,
    skk: f64,
    skl: f64,
    sll: f64,
}

#[derive(Debug, Clone, Copy)]
struct IntStats {
    my: f64,
    mk: f64,
    syy: f64,
    syk: f64,
    skk: f64,
}

enum FirmStats {
    Cd(Vec<CdStats>),
    Intensive(Vec<IntStats>),
    /// CES keeps no precomputed statistics.
    None,
}

fn centered<const N: usize>(cols: [&[f64]; N]) -> ([f64; N], [[f64; N]; N]) {
    let t_len = cols[0].len() as f64;
    let mut means = [0.0; N];
    for (j, c) in cols.iter().enumerate() {
        means[j] = c.iter().sum::<f64>() / t_len;
    }
    let mut cross = [[0.0; N]; N];
    for t in 0..cols[0].len() {
        let mut d = [0.0; N];
        for j in 0..N {
            d[j] = cols[j][t] - means[j];
        }
        for a in 0..N {
            for b in a..N {
                cross[a][b] += d[a] * d[b];
            }
        }
    }
    (means, cross)
}

/// Blocked evaluator of the log-density matrix for one (model, panel, grid).
pub struct LikelihoodEvaluator<'a> {
    pub model: ModelSpec,
    data: &'a PanelDataset,
    table: &'a TypeTable,
    stats: FirmStats,
    /// Period values 1..=T as f64, shared by every row.
    t_values: Vec<f64>,
}

impl<'a> LikelihoodEvaluator<'a> {
    pub fn new(
        model: &ModelSpec,
        data: &'a PanelDataset,
        table: &'a TypeTable,
    ) -> Result<LikelihoodEvaluator<'a>> {
        data.validate()?;
        if model.t_periods != data.n_periods() {
            return Err(Error::invalid(format!(
                "model T = {} but panel has {} periods",
                model.t_periods,
                data.n_periods()
            )));
        }
        let t_values: Vec<f64> = (1..=data.n_periods() as i64).map(|t| t as f64).collect();
        let stats = match model.family {
            Family::DynamicCd => {
                let mut v = Vec::with_capacity(data.n_firms());
                let t2: Vec<f64> = t_values.iter().map(|t| t * t).collect();
                for i in 0..data.n_firms() {
                    let (y, k, l) = data.firm_rows(i);
                    let (m, c) = centered([y, &t_values, &t2, k, l]);
                    v.push(CdStats {
                        my: m[0],
                        mt: m[1],
                        mt2: m[2],
                        mk: m[3],
                        ml: m[4],
                        syy: c[0][0],
                        syt: c[0][1],
                        syt2: c[0][2],
                        syk: c[0][3],
                        syl: c[0][4],
                        stt: c[1][1],
                        stt2: c[1][2],
                        st2t2: c[2][2],
                        stk: c[1][3],
                        stl: c[1][4],
                        st2k: c[2][3],
                        st2l: c[2][4],
                        skk: c[3][3],
                        skl: c[3][4],
                        sll: c[4][4],
                    });
                }
                FirmStats::Cd(v)
            }
            Family::IntensiveCd => {
                let mut v = Vec::with_capacity(data.n_firms());
                for i in 0..data.n_firms() {
                    let (y, k, _) = data.firm_rows(i);
                    let (m, c) = centered([y, k]);
                    v.push(IntStats {
                        my: m[0],
                        mk: m[1],
                        syy: c[0][0],
                        syk: c[0][1],
                        skk: c[1][1],
                    });
                }
                FirmStats::Intensive(v)
            }
            Family::GeneralizedCes => FirmStats::None,
        };
        Ok(LikelihoodEvaluator { model: *model, data, table, stats, t_values })
    }

    pub fn table(&self) -> &TypeTable {
        self.table
    }

    pub fn data(&self) -> &PanelDataset {
        self.data
    }

    /// Row-major tiling of the I x Q matrix, row blocks outermost. Every
    /// cell is covered exactly once.
    pub fn block_coords(&self, shape: BlockShape) -> Vec<(Range<usize>, Range<usize>)> {
        tile_coords(self.n_firms(), self.n_types(), shape)
    }

    /// Evaluate one tile.
    pub fn compute_block(&self, firms: Range<usize>, types: Range<usize>) -> LogDensityBlock {
        let type_idx: Vec<usize> = types.clone().collect();
        let mut values = vec![0.0; firms.len() * type_idx.len()];
        self.fill(firms.clone(), &type_idx, &mut values);
        LogDensityBlock { firms, types, values }
    }

    /// Stream all tiles under a memory budget for the per-block buffer.
    pub fn compute_blocks(
        &self,
        shape: BlockShape,
        budget_bytes: usize,
    ) -> Result<impl Iterator<Item = LogDensityBlock> + '_> {
        if shape.firms == 0 || shape.types == 0 {
            return Err(Error::invalid("block shape must be positive"));
        }
        let bytes = shape
            .firms
            .checked_mul(shape.types)
            .and_then(|c| c.checked_mul(8))
            .ok_or_else(|| Error::invalid("block shape overflows"))?;
        if bytes > budget_bytes {
            return Err(Error::invalid(format!(
                "block of {bytes} bytes exceeds memory budget of {budget_bytes}"
            )));
        }
        let coords = self.block_coords(shape);
        Ok(coords.into_iter().map(|(f, t)| self.compute_block(f, t)))
    }

    #[inline]
    fn fill_row_cd(&self, stats: &CdStats, tp: &TypeParams, out: &mut [f64]) {
        let t_len = self.t_values.len() as f64;
        let p = self.model.n_params();
        for (c, cell) in out.iter_mut().enumerate() {
            let v = &tp.params[c * p..(c + 1) * p];
            let (a0, b, g, a1, a2) = (v[0], v[1], v[2], v[3], v[4]);
            let m = stats.my - (a0 + a1 * stats.mt + a2 * stats.mt2 + b * stats.mk + g * stats.ml);
            let q = stats.syy
                - 2.0 * (a1 * stats.syt + a2 * stats.syt2 + b * stats.syk + g * stats.syl)
                + a1 * a1 * stats.stt
                + a2 * a2 * stats.st2t2
                + b * b * stats.skk
                + g * g * stats.sll
                + 2.0
                    * (a1 * a2 * stats.stt2
                        + a1 * b * stats.stk
                        + a1 * g * stats.stl
                        + a2 * b * stats.st2k
                        + a2 * g * stats.st2l
                        + b * g * stats.skl);
            let ssr = (q + t_len * m * m).max(0.0);
            *cell = tp.const_term[c] - ssr * tp.inv_2s2[c];
        }
    }

    #[inline]
    fn fill_row_intensive(&self, stats: &IntStats, tp: &TypeParams, out: &mut [f64]) {
        let t_len = self.t_values.len() as f64;
        let p = self.model.n_params();
        for (c, cell) in out.iter_mut().enumerate() {
            let v = &tp.params[c * p..(c + 1) * p];
            let (a, b) = (v[0], v[1]);
            let m = stats.my - a - b * stats.mk;
            let q = stats.syy - 2.0 * b * stats.syk + b * b * stats.skk;
            let ssr = (q + t_len * m * m).max(0.0);
            *cell = tp.const_term[c] - ssr * tp.inv_2s2[c];
        }
    }

    fn fill_row_ces(&self, firm: usize, tp: &TypeParams, out: &mut [f64]) {
        let (y, k, l) = self.data.firm_rows(firm);
        let t_len = self.t_values.len();
        let p = self.model.n_params();
        // Input aggregate cache, reused while (omega, sigma) is unchanged.
        let mut cached: Option<(f64, f64)> = None;
        let mut z = vec![0.0; t_len];
        for (c, cell) in out.iter_mut().enumerate() {
            let v = &tp.params[c * p..(c + 1) * p];
            let (a0, omega, nu, sigma, a1, a2) = (v[0], v[1], v[2], v[3], v[4], v[5]);
            if cached != Some((omega, sigma)) {
                for t in 0..t_len {
                    z[t] = ces_aggregate_log(k[t], l[t], omega, sigma);
                }
                cached = Some((omega, sigma));
            }
            let mut ssr = 0.0;
            for t in 0..t_len {
                let tf = self.t_values[t];
                let r = y[t] - (a0 + a1 * tf + a2 * tf * tf + nu * z[t]);
                ssr += r * r;
            }
            *cell = tp.const_term[c] - ssr * tp.inv_2s2[c];
        }
    }
}

/// Per-type precomputations shared by every row of a fill.
struct TypeParams {
    params: Vec<f64>,
    /// -T ln s - T ln(2 pi)/2 per type.
    const_term: Vec<f64>,
    /// 1 / (2 s^2) per type.
    inv_2s2: Vec<f64>,
}

impl TypeParams {
    fn new(table: &TypeTable, model: &ModelSpec, types: &[usize], t_len: f64) -> TypeParams {
        let p = model.n_params();
        let mut params = vec![0.0; types.len() * p];
        let mut const_term = vec![0.0; types.len()];
        let mut inv_2s2 = vec![0.0; types.len()];
        for (c, &q) in types.iter().enumerate() {
            let dst = &mut params[c * p..(c + 1) * p];
            table.write_params(q, dst);
            let s = dst[p - 1];
            const_term[c] = -t_len * s.ln() - 0.5 * t_len * LN_2PI;
            inv_2s2[c] = 1.0 / (2.0 * s * s);
        }
        TypeParams { params, const_term, inv_2s2 }
    }
}

impl<'a> LogDensitySource for LikelihoodEvaluator<'a> {
    fn n_firms(&self) -> usize {
        self.data.n_firms()
    }

    fn n_types(&self) -> usize {
        self.table.q()
    }

    fn fill(&self, firms: Range<usize>, types: &[usize], out: &mut [f64]) {
        let w = types.len();
        debug_assert_eq!(out.len(), firms.len() * w);
        let tp = TypeParams::new(self.table, &self.model, types, self.t_values.len() as f64);
        let start = firms.start;
        // Rows are disjoint, so parallel evaluation cannot change results.
        out.par_chunks_mut(w).enumerate().for_each(|(r, row)| {
            let firm = start + r;
            match &self.stats {
                FirmStats::Cd(v) => self.fill_row_cd(&v[firm], &tp, row),
                FirmStats::Intensive(v) => self.fill_row_intensive(&v[firm], &tp, row),
                FirmStats::None => self.fill_row_ces(firm, &tp, row),
            }
        });
    }
}

fn tile_coords(i: usize, q: usize, shape: BlockShape) -> Vec<(Range<usize>, Range<usize>)> {
    let mut out = Vec::new();
    let mut f = 0;
    while f < i {
        let fe = (f + shape.firms).min(i);
        let mut t = 0;
        while t < q {
            let te = (t + shape.types).min(q);
            out.push((f..fe, t..te));
            t = te;
        }
        f = fe;
    }
    out
}

// ---------------------------------------------------------------------------
// Optional on-disk block cache: little-endian f64 rows with a header binding
// the cache to the (model, grid, panel shape) that produced it.

const CACHE_MAGIC: &[u8; 8] = b"HPDFCH01";

/// Hash of the model specification (family + T).
pub fn model_hash(model: &ModelSpec) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(model).expect("serialize model"));
    h.finalize().into()
}

/// Hash of the grid specification (dimension names, ranges, counts).
pub fn grid_hash(grid: &GridSpec) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(grid).expect("serialize grid"));
    h.finalize().into()
}

/// Write the full matrix to disk, streamed block by block.
pub fn write_cache(
    path: &Path,
    evaluator: &LikelihoodEvaluator<'_>,
    grid: &GridSpec,
    shape: BlockShape,
) -> Result<()> {
    let i = evaluator.n_firms();
    let q = evaluator.n_types();
    let t = evaluator.data().n_periods();
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(CACHE_MAGIC)?;
    for v in [i as u64, q as u64, t as u64] {
        f.write_all(&v.to_le_bytes())?;
    }
    f.write_all(&model_hash(&evaluator.model))?;
    f.write_all(&grid_hash(grid))?;
    // Stream full firm stripes so rows land contiguously.
    let stripe = shape.firms.max(1);
    let mut start = 0usize;
    while start < i {
        let end = (start + stripe).min(i);
        let types: Vec<usize> = (0..q).collect();
        let mut buf = vec![0.0f64; (end - start) * q];
        evaluator.fill(start..end, &types, &mut buf);
        let bytes: Vec<u8> = buf.iter().flat_map(|v| v.to_le_bytes()).collect();
        f.write_all(&bytes)?;
        start = end;
    }
    f.flush()?;
    Ok(())
}

/// Read-side of the cache; serves rows via positioned reads, so it is safe
/// to use from multiple threads.
pub struct DensityCacheReader {
    file: std::fs::File,
    i: usize,
    q: usize,
    data_offset: u64,
}

impl DensityCacheReader {
    /// Open a cache, checking it was built for the given model, grid, and
    /// panel shape.
    pub fn open(
        path: &Path,
        model: &ModelSpec,
        grid: &GridSpec,
        i: usize,
        t: usize,
    ) -> Result<DensityCacheReader> {
        let mut f = std::fs::File::open(path)?;
        let mut magic = [0u8; 8];
        f.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(Error::data("density cache: bad magic"));
        }
        let mut u = [0u8; 8];
        let mut dims = [0u64; 3];
        for d in dims.iter_mut() {
            f.read_exact(&mut u)?;
            *d = u64::from_le_bytes(u);
        }
        if dims[0] != i as u64 || dims[2] != t as u64 || dims[1] != grid.q() as u64 {
            return Err(Error::data("density cache: dimensions do not match"));
        }
        let mut mh = [0u8; 32];
        f.read_exact(&mut mh)?;
        let mut gh = [0u8; 32];
        f.read_exact(&mut gh)?;
        if mh != model_hash(model) || gh != grid_hash(grid) {
            return Err(Error::data(
                "density cache was built for a different model/grid",
            ));
        }
        let data_offset = (8 + 3 * 8 + 64) as u64;
        let expected_len = data_offset + dims[0] * dims[1] * 8;
        if f.metadata()?.len() != expected_len {
            return Err(Error::data("density cache: truncated file"));
        }
        Ok(DensityCacheReader {
            file: f,
            i: dims[0] as usize,
            q: dims[1] as usize,
            data_offset,
        })
    }
}

impl LogDensitySource for DensityCacheReader {
    fn n_firms(&self) -> usize {
        self.i
    }
    fn n_types(&self) -> usize {
        self.q
    }
    fn fill(&self, firms: Range<usize>, types: &[usize], out: &mut [f64]) {
        use std::os::unix::fs::FileExt;
        let w = types.len();
        if w == 0 {
            return;
        }
        let (lo, hi) = (types[0], *types.last().unwrap() + 1);
        debug_assert!(types.windows(2).all(|p| p[0] < p[1]));
        let span = hi - lo;
        let mut bytes = vec![0u8; span * 8];
        for (r, firm) in firms.clone().enumerate() {
            let off = self.data_offset + ((firm * self.q + lo) * 8) as u64;
            self.file.read_exact_at(&mut bytes, off).expect("cache read");
            for (c, &t) in types.iter().enumerate() {
                let at = (t - lo) * 8;
                let arr: [u8; 8] = bytes[at..at + 8].try_into().unwrap();
                out[r * w + c] = f64::from_le_bytes(arr);
            }
        }
    }
}
