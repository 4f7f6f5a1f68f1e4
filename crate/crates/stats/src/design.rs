use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};

use crate::error::{Result, StatsError};
use crate::table::DataTable;

/// Model formula: outcome, numeric covariates, dummy-encoded factors (first
/// level dropped as reference), numeric-by-numeric interactions, and optional
/// observation weights. Columns listed in `mean_center` are centered before
/// use, both as main effects and inside interactions.
#[derive(Clone, Debug, Default)]
pub struct DesignSpec {
    pub outcome: String,
    pub covariates: Vec<String>,
    pub factors: Vec<String>,
    pub interactions: Vec<(String, String)>,
    pub mean_center: Vec<String>,
    pub weights: Option<String>,
    pub no_intercept: bool,
}

impl DesignSpec {
    pub fn new(outcome: &str) -> Self {
        DesignSpec {
            outcome: outcome.to_string(),
            ..Default::default()
        }
    }

    pub fn covariate(mut self, name: &str) -> Self {
        self.covariates.push(name.to_string());
        self
    }

    pub fn covariates<'a>(mut self, names: impl IntoIterator<Item = &'a str>) -> Self {
        self.covariates.extend(names.into_iter().map(str::to_string));
        self
    }

    pub fn factor(mut self, name: &str) -> Self {
        self.factors.push(name.to_string());
        self
    }

    pub fn interaction(mut self, a: &str, b: &str) -> Self {
        self.interactions.push((a.to_string(), b.to_string()));
        self
    }

    pub fn center(mut self, name: &str) -> Self {
        self.mean_center.push(name.to_string());
        self
    }
}

/// Materialized design: named columns, X, y, and optional weights.
pub struct Design {
    pub names: Vec<String>,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub weights: Option<Vec<f64>>,
}

pub fn build_design(spec: &DesignSpec, data: &DataTable) -> Result<Design> {
    let n = data.n_rows();
    if n == 0 {
        return Err(StatsError::Invalid("empty table".into()));
    }
    let y = DVector::from_column_slice(data.numeric(&spec.outcome)?);

    // Pull numeric columns through the centering list once.
    let mut centered: IndexMap<String, Vec<f64>> = IndexMap::new();
    let mut fetch = |name: &str| -> Result<Vec<f64>> {
        if let Some(v) = centered.get(name) {
            return Ok(v.clone());
        }
        let raw = data.numeric(name)?;
        let v = if spec.mean_center.iter().any(|c| c == name) {
            let mean = raw.iter().sum::<f64>() / n as f64;
            raw.iter().map(|x| x - mean).collect()
        } else {
            raw.to_vec()
        };
        centered.insert(name.to_string(), v.clone());
        Ok(v)
    };

    let mut names = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    if !spec.no_intercept {
        names.push("(intercept)".to_string());
        cols.push(vec![1.0; n]);
    }
    for c in &spec.covariates {
        names.push(c.clone());
        cols.push(fetch(c)?);
    }
    for f in &spec.factors {
        let factor = data.factor(f)?;
        // One dummy per non-reference level; reference = first level.
        for (li, level) in factor.levels.iter().enumerate().skip(1) {
            names.push(format!("{f}={level}"));
            cols.push(
                factor
                    .codes
                    .iter()
                    .map(|&c| if c as usize == li { 1.0 } else { 0.0 })
                    .collect(),
            );
        }
    }
    for (a, b) in &spec.interactions {
        let va = fetch(a)?;
        let vb = fetch(b)?;
        names.push(format!("{a}:{b}"));
        cols.push(va.iter().zip(&vb).map(|(x, y)| x * y).collect());
    }

    let k = cols.len();
    let mut x = DMatrix::zeros(n, k);
    for (j, col) in cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            x[(i, j)] = v;
        }
    }
    let weights = match &spec.weights {
        Some(w) => {
            let vals = data.numeric(w)?;
            if vals.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                return Err(StatsError::Invalid(format!(
                    "weights column {w:?} must be finite and nonnegative"
                )));
            }
            Some(vals.to_vec())
        }
        None => None,
    };
    Ok(Design { names, x, y, weights })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_table() -> DataTable {
        let mut t = DataTable::new();
        t.push_numeric("y", vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        t.push_numeric("x", vec![2.0, 4.0, 6.0, 8.0]).unwrap();
        let f: Vec<String> = ["u", "v", "u", "w"].iter().map(|s| s.to_string()).collect();
        t.push_factor("g", &f).unwrap();
        t
    }

    #[test]
    fn dummies_drop_reference_level() {
        let spec = DesignSpec::new("y").covariate("x").factor("g");
        let d = build_design(&spec, &toy_table()).unwrap();
        assert_eq!(d.names, vec!["(intercept)", "x", "g=v", "g=w"]);
        assert_eq!(d.x.column(2).as_slice(), &[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(d.x.column(3).as_slice(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn centering_applies_to_interactions_too() {
        let spec = DesignSpec::new("y")
            .covariate("x")
            .interaction("x", "x")
            .center("x");
        let d = build_design(&spec, &toy_table()).unwrap();
        // x centered: [-3, -1, 1, 3]; interaction = square of centered values.
        assert_eq!(d.x.column(1).as_slice(), &[-3.0, -1.0, 1.0, 3.0]);
        assert_eq!(d.x.column(2).as_slice(), &[9.0, 1.0, 1.0, 9.0]);
    }
}
