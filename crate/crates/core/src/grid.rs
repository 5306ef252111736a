//! Per-dimension discretization grids and the lexicographic enumeration of
//! all Q parameter configurations ("types").
//!
//! Convention: dimensions follow the model's parameter order and the LAST
//! dimension varies fastest, so type 0 is (min, ..., min) and type Q-1 is
//! (max, ..., max). Types are decoded on demand; the table never
//! materializes all Q rows.

use crate::error::{Error, Result};
use crate::model::{Family, ModelSpec, ParamVector, EPS_SIGMA, S_MIN};
use crate::ols::pooled_residual_intercepts;
use crate::panel::PanelDataset;
use crate::stats::{sample_quantile_unsorted, sd_pop};
use serde::{Deserialize, Serialize};

/// One dimension's range and point count. `points == 1` forces min == max.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimSpec {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl DimSpec {
    pub fn new(name: &str, min: f64, max: f64, points: usize) -> DimSpec {
        DimSpec { name: name.into(), min, max, points }
    }

    /// Equally spaced grid values for this dimension.
    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.min];
        }
        let step = (self.max - self.min) / (self.points - 1) as f64;
        (0..self.points).map(|i| self.min + step * i as f64).collect()
    }
}

/// Full grid: one `DimSpec` per model parameter, in parameter order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dims: Vec<DimSpec>,
}

impl GridSpec {
    /// Total number of types Q (product of point counts).
    pub fn q(&self) -> usize {
        self.dims.iter().fold(1usize, |acc, d| {
            acc.checked_mul(d.points).expect("type count overflow")
        })
    }

    pub fn validate(&self, model: &ModelSpec) -> Result<()> {
        let names = model.param_names();
        if self.dims.len() != names.len() {
            return Err(Error::invalid(format!(
                "grid has {} dimensions, model expects {}",
                self.dims.len(),
                names.len()
            )));
        }
        for (dim, want) in self.dims.iter().zip(names.iter()) {
            if dim.name != *want {
                return Err(Error::invalid(format!(
                    "grid dimension {:?} out of order; expected {:?}",
                    dim.name, want
                )));
            }
            if dim.points == 0 {
                return Err(Error::invalid(format!("{}: points must be >= 1", dim.name)));
            }
            if dim.min > dim.max {
                return Err(Error::invalid(format!("{}: min > max", dim.name)));
            }
            if dim.points == 1 && dim.min != dim.max {
                return Err(Error::invalid(format!(
                    "{}: a single-point dimension needs min == max",
                    dim.name
                )));
            }
            if !dim.min.is_finite() || !dim.max.is_finite() {
                return Err(Error::invalid(format!("{}: non-finite bound", dim.name)));
            }
            match dim.name.as_str() {
                "beta" | "gamma" | "nu" => {
                    if dim.min < 0.0 {
                        return Err(Error::invalid(format!("{} grid must be nonnegative", dim.name)));
                    }
                }
                "omega" => {
                    if dim.min < 0.0 || dim.max > 1.0 {
                        return Err(Error::invalid("omega grid must lie in [0,1]"));
                    }
                }
                "s" => {
                    if dim.min < S_MIN {
                        return Err(Error::invalid(format!("s grid must start at >= {S_MIN}")));
                    }
                }
                "sigma" => {
                    if dim.min <= 0.0 {
                        return Err(Error::invalid("sigma grid must be positive"));
                    }
                    for v in dim.values() {
                        if (v - 1.0).abs() < EPS_SIGMA {
                            return Err(Error::invalid(format!(
                                "sigma grid point {v} falls in the excluded band around 1"
                            )));
                        }
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Data-adaptive default grid. Point counts come from `points` (one count
/// per parameter); ranges adapt to the data where that helps (the
/// intercept) and use fixed admissible windows elsewhere, all overridable
/// by configuration upstream.
pub fn default_grid(model: &ModelSpec, data: &PanelDataset, points: &[usize]) -> Result<GridSpec> {
    let names = model.param_names();
    if points.len() != names.len() {
        return Err(Error::invalid(format!(
            "expected {} point counts, got {}",
            names.len(),
            points.len()
        )));
    }
    if sd_pop(&data.y) == 0.0 {
        return Err(Error::data("degenerate data: zero variance in y"));
    }
    // Intercept range from pooled-OLS residual intercepts, with a fixed
    // fallback when the pooled design is degenerate.
    let intercept_range = match pooled_residual_intercepts(data, model) {
        Ok(alphas) => {
            let lo = sample_quantile_unsorted(&alphas, 0.01) - 2.0;
            let hi = sample_quantile_unsorted(&alphas, 0.99) + 2.0;
            if hi > lo {
                (lo, hi)
            } else {
                (-5.0, 10.0)
            }
        }
        Err(_) => (-5.0, 10.0),
    };

    let mut dims = Vec::with_capacity(names.len());
    for (name, &pts) in names.iter().zip(points.iter()) {
        let (mut lo, mut hi) = match *name {
            "alpha0" | "a" => intercept_range,
            "beta" | "gamma" => (0.0, 1.5),
            "b" => (0.0, 1.5),
            "alpha1" => (-0.1, 0.1),
            "alpha2" => (-0.01, 0.01),
            "s" => (S_MIN, 1.5),
            "omega" => (0.05, 0.95),
            "nu" => (0.0, 2.0),
            "sigma" => (0.2, 6.0),
            other => return Err(Error::invalid(format!("no default range for {other}"))),
        };
        if pts == 1 {
            // Collapse to the neutral value: zero for dynamics, midpoint else.
            let v = match *name {
                "alpha1" | "alpha2" => 0.0,
                _ => 0.5 * (lo + hi),
            };
            lo = v;
            hi = v;
        }
        let mut dim = DimSpec::new(name, lo, hi, pts);
        if *name == "sigma" && pts > 1 {
            // Nudge the upper bound until no grid point lands in the
            // excluded band around 1.
            let mut tries = 0;
            while dim.values().iter().any(|v| (v - 1.0).abs() < EPS_SIGMA) {
                dim.max += 4.0 * EPS_SIGMA * (pts as f64 - 1.0);
                tries += 1;
                if tries > 1000 {
                    return Err(Error::invalid("could not place sigma grid outside the band"));
                }
            }
        }
        dims.push(dim);
    }
    let grid = GridSpec { dims };
    grid.validate(model)?;
    Ok(grid)
}

/// The lexicographic enumeration of all Q types, decoded on demand via
/// mixed-radix arithmetic (last dimension fastest).
#[derive(Debug, Clone)]
pub struct TypeTable {
    pub model: ModelSpec,
    values: Vec<Vec<f64>>,
    radices: Vec<usize>,
    /// Place value of each dimension: strides[j] = product of radices after j.
    strides: Vec<usize>,
    q: usize,
}

impl TypeTable {
    pub fn from_grid(model: &ModelSpec, grid: &GridSpec) -> Result<TypeTable> {
        grid.validate(model)?;
        let values: Vec<Vec<f64>> = grid.dims.iter().map(|d| d.values()).collect();
        let radices: Vec<usize> = grid.dims.iter().map(|d| d.points).collect();
        let mut strides = vec![1usize; radices.len()];
        for j in (0..radices.len().saturating_sub(1)).rev() {
            strides[j] = strides[j + 1]
                .checked_mul(radices[j + 1])
                .ok_or_else(|| Error::invalid("type count overflow"))?;
        }
        let q = grid.q();
        let table = TypeTable { model: *model, values, radices, strides, q };
        // Every enumerated vector must be admissible; check the two corners
        // plus each dimension's bounds, which covers all combinations for
        // the box constraints used here.
        table.model.validate_params(&table.param_vector(0))?;
        table.model.validate_params(&table.param_vector(q - 1))?;
        Ok(table)
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn n_dims(&self) -> usize {
        self.radices.len()
    }

    /// Grid values of dimension `j`.
    pub fn dim_values(&self, j: usize) -> &[f64] {
        &self.values[j]
    }

    /// Decode type index into per-dimension indices (last fastest).
    pub fn decode(&self, q: usize) -> Vec<usize> {
        assert!(q < self.q, "type index {q} out of range (Q = {})", self.q);
        let mut idx = vec![0usize; self.radices.len()];
        let mut rest = q;
        for j in 0..self.radices.len() {
            idx[j] = rest / self.strides[j];
            rest %= self.strides[j];
        }
        idx
    }

    /// Encode per-dimension indices back into the type index.
    pub fn encode(&self, idx: &[usize]) -> usize {
        assert_eq!(idx.len(), self.radices.len());
        idx.iter()
            .zip(self.strides.iter())
            .zip(self.radices.iter())
            .map(|((&i, &s), &r)| {
                assert!(i < r, "dimension index out of range");
                i * s
            })
            .sum()
    }

    /// Parameter values of type `q`, written into `out` without allocating.
    pub fn write_params(&self, q: usize, out: &mut [f64]) {
        debug_assert!(q < self.q);
        debug_assert_eq!(out.len(), self.radices.len());
        let mut rest = q;
        for j in 0..self.radices.len() {
            let i = rest / self.strides[j];
            rest %= self.strides[j];
            out[j] = self.values[j][i];
        }
    }

    /// Parameter vector of type `q`.
    pub fn param_vector(&self, q: usize) -> ParamVector {
        let mut out = vec![0.0; self.radices.len()];
        self.write_params(q, &mut out);
        ParamVector(out)
    }

    /// Checked variant used at API boundaries.
    pub fn enumerate_type(&self, q: usize) -> Result<ParamVector> {
        if q >= self.q {
            return Err(Error::invalid(format!(
                "type index {q} out of range (Q = {})",
                self.q
            )));
        }
        Ok(self.param_vector(q))
    }
}

/// A compact grid description used by `grid describe` output.
#[derive(Debug, Serialize)]
pub struct GridDescription {
    pub family: Family,
    pub q: usize,
    pub dims: Vec<DimSpec>,
}

pub fn describe(model: &ModelSpec, grid: &GridSpec) -> GridDescription {
    GridDescription {
        family: model.family,
        q: grid.q(),
        dims: grid.dims.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Family;

    fn small_panel() -> PanelDataset {
        let t_len = 7;
        let i_firms = 12;
        let mut y = Vec::new();
        let mut k = Vec::new();
        let mut l = Vec::new();
        for i in 0..i_firms {
            for t in 0..t_len {
                let ki = 2.0 + 0.3 * ((i * 7 + t) % 11) as f64 / 11.0 + 0.2 * t as f64;
                let li = 1.0 + 0.2 * ((i * 3 + 2 * t) % 7) as f64 / 7.0 + 0.1 * t as f64;
                k.push(ki);
                l.push(li);
                y.push(0.8 + 0.4 * ki + 0.5 * li + 0.01 * ((i + t) % 5) as f64);
            }
        }
        PanelDataset {
            firm_ids: (0..i_firms).map(|i| format!("f{i}")).collect(),
            periods: (1..=t_len as i64).collect(),
            y,
            k,
            l,
            sector: None,
            wage_share: None,
        }
    }

    #[test]
    fn paper_grid_counts() {
        let panel = small_panel();
        let cd = ModelSpec::new(Family::DynamicCd, 7);
        let g = default_grid(&cd, &panel, &[15, 15, 15, 6, 6, 6]).unwrap();
        assert_eq!(g.q(), 729_000);

        let ces = ModelSpec::new(Family::GeneralizedCes, 7);
        let g = default_grid(&ces, &panel, &[9, 9, 9, 9, 6, 6, 6]).unwrap();
        assert_eq!(g.q(), 1_417_176);

        let g = default_grid(&cd, &panel, &[1, 1, 1, 1, 1, 1]).unwrap();
        assert_eq!(g.q(), 1);
    }

    #[test]
    fn corner_types() {
        let panel = small_panel();
        let cd = ModelSpec::new(Family::DynamicCd, 7);
        let g = default_grid(&cd, &panel, &[3, 3, 3, 3, 3, 3]).unwrap();
        let table = TypeTable::from_grid(&cd, &g).unwrap();
        let first = table.param_vector(0);
        let last = table.param_vector(table.q() - 1);
        for (j, d) in g.dims.iter().enumerate() {
            assert_eq!(first.0[j], d.min);
            assert_eq!(last.0[j], d.max);
        }
    }

    #[test]
    fn hand_enumerated_two_by_three() {
        // 2x3 grid over x in {0,1}, y in {0,0.5,1}; q=4 -> (1, 0.5).
        let model = ModelSpec::new(Family::IntensiveCd, 3);
        let grid = GridSpec {
            dims: vec![
                DimSpec::new("a", 0.0, 1.0, 2),
                DimSpec::new("b", 0.0, 1.0, 3),
                DimSpec::new("s", 0.1, 0.1, 1),
            ],
        };
        let table = TypeTable::from_grid(&model, &grid).unwrap();
        assert_eq!(table.q(), 6);
        let expect = [
            (0.0, 0.0),
            (0.0, 0.5),
            (0.0, 1.0),
            (1.0, 0.0),
            (1.0, 0.5),
            (1.0, 1.0),
        ];
        for (q, (a, b)) in expect.iter().enumerate() {
            let p = table.param_vector(q);
            assert_eq!((p.0[0], p.0[1]), (*a, *b), "type {q}");
        }
        assert_eq!(table.param_vector(4).0[..2], [1.0, 0.5]);
    }

    #[test]
    fn bijectivity_exhaustive_small() {
        let model = ModelSpec::new(Family::DynamicCd, 5);
        let grid = GridSpec {
            dims: vec![
                DimSpec::new("alpha0", -1.0, 1.0, 3),
                DimSpec::new("beta", 0.0, 1.0, 2),
                DimSpec::new("gamma", 0.0, 1.0, 4),
                DimSpec::new("alpha1", 0.0, 0.0, 1),
                DimSpec::new("alpha2", 0.0, 0.0, 1),
                DimSpec::new("s", 0.1, 0.5, 2),
            ],
        };
        let table = TypeTable::from_grid(&model, &grid).unwrap();
        let mut seen = vec![false; table.q()];
        for q in 0..table.q() {
            let idx = table.decode(q);
            let back = table.encode(&idx);
            assert_eq!(back, q);
            assert!(!seen[q]);
            seen[q] = true;
        }
        assert!(seen.iter().all(|&b| b));
    }

    #[test]
    fn equal_spacing() {
        let d = DimSpec::new("beta", 0.0, 1.5, 15);
        let v = d.values();
        let step = v[1] - v[0];
        // Tolerance at the ulp scale of the values themselves.
        let tol = 8.0 * f64::EPSILON * d.max.abs().max(1.0);
        for w in v.windows(2) {
            assert!((w[1] - w[0] - step).abs() <= tol);
        }
        assert_eq!(v[0], 0.0);
        assert_eq!(*v.last().unwrap(), 1.5);
    }

    #[test]
    fn enumerated_types_admissible() {
        let panel = small_panel();
        let ces = ModelSpec::new(Family::GeneralizedCes, 7);
        let g = default_grid(&ces, &panel, &[3, 3, 3, 5, 2, 2, 2]).unwrap();
        let table = TypeTable::from_grid(&ces, &g).unwrap();
        for q in 0..table.q() {
            ces.validate_params(&table.param_vector(q)).unwrap();
        }
    }

    #[test]
    fn sigma_band_respected_by_defaults_and_rejected_in_overrides() {
        let panel = small_panel();
        let ces = ModelSpec::new(Family::GeneralizedCes, 7);
        // 30 points over [0.2, 6] would put a point exactly at 1.0 without
        // the nudge.
        let g = default_grid(&ces, &panel, &[3, 3, 3, 30, 2, 2, 2]).unwrap();
        for v in g.dims[3].values() {
            assert!((v - 1.0).abs() >= EPS_SIGMA);
        }
        // Explicit override landing on 1.0 must be rejected.
        let mut bad = g.clone();
        bad.dims[3] = DimSpec::new("sigma", 0.5, 1.5, 3);
        assert!(bad.validate(&ces).is_err());
    }

    #[test]
    fn zero_variance_y_rejected() {
        let mut panel = small_panel();
        for v in panel.y.iter_mut() {
            *v = 1.0;
        }
        let cd = ModelSpec::new(Family::DynamicCd, 7);
        assert!(default_grid(&cd, &panel, &[3, 3, 3, 1, 1, 2]).is_err());
    }

    #[test]
    fn out_of_range_type_index() {
        let model = ModelSpec::new(Family::IntensiveCd, 3);
        let grid = GridSpec {
            dims: vec![
                DimSpec::new("a", 0.0, 1.0, 2),
                DimSpec::new("b", 0.0, 1.0, 2),
                DimSpec::new("s", 0.1, 0.1, 1),
            ],
        };
        let table = TypeTable::from_grid(&model, &grid).unwrap();
        assert!(table.enumerate_type(4).is_err());
        assert!(table.enumerate_type(3).is_ok());
    }
}
