use indexmap::IndexMap;

use crate::error::{Result, StatsError};

/// Categorical column: levels in order of first appearance, per-row codes.
#[derive(Clone, Debug)]
pub struct Factor {
    pub levels: Vec<String>,
    pub codes: Vec<u32>,
}

#[derive(Clone, Debug)]
pub enum Column {
    Numeric(Vec<f64>),
    Factor(Factor),
}

/// Column-major data frame feeding the regression builders.
#[derive(Clone, Debug, Default)]
pub struct DataTable {
    n: usize,
    columns: IndexMap<String, Column>,
}

impl DataTable {
    pub fn new() -> Self {
        DataTable::default()
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn check_len(&mut self, name: &str, got: usize) -> Result<()> {
        if self.columns.is_empty() {
            self.n = got;
            return Ok(());
        }
        if got != self.n {
            return Err(StatsError::LengthMismatch {
                name: name.to_string(),
                got,
                want: self.n,
            });
        }
        Ok(())
    }

    pub fn push_numeric(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        self.check_len(name, values.len())?;
        self.columns.insert(name.to_string(), Column::Numeric(values));
        Ok(())
    }

    /// Encode strings to a factor; level order = first appearance.
    pub fn push_factor(&mut self, name: &str, values: &[String]) -> Result<()> {
        self.check_len(name, values.len())?;
        let mut levels: Vec<String> = Vec::new();
        let mut lookup: IndexMap<String, u32> = IndexMap::new();
        let mut codes = Vec::with_capacity(values.len());
        for v in values {
            let code = *lookup.entry(v.clone()).or_insert_with(|| {
                levels.push(v.clone());
                (levels.len() - 1) as u32
            });
            codes.push(code);
        }
        self.columns
            .insert(name.to_string(), Column::Factor(Factor { levels, codes }));
        Ok(())
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.columns
            .get(name)
            .ok_or_else(|| StatsError::UnknownColumn(name.to_string()))
    }

    pub fn numeric(&self, name: &str) -> Result<&[f64]> {
        match self.column(name)? {
            Column::Numeric(v) => Ok(v),
            Column::Factor(_) => Err(StatsError::NotNumeric(name.to_string())),
        }
    }

    pub fn factor(&self, name: &str) -> Result<&Factor> {
        match self.column(name)? {
            Column::Factor(f) => Ok(f),
            Column::Numeric(_) => Err(StatsError::NotFactor(name.to_string())),
        }
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(String::as_str)
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.columns.contains_key(name)
    }

    /// Row subset preserving column order and factor level tables.
    pub fn filter_rows(&self, keep: &[bool]) -> DataTable {
        assert_eq!(keep.len(), self.n);
        let n = keep.iter().filter(|&&k| k).count();
        let mut columns = IndexMap::new();
        for (name, col) in &self.columns {
            let new_col = match col {
                Column::Numeric(v) => Column::Numeric(
                    v.iter()
                        .zip(keep)
                        .filter_map(|(x, &k)| k.then_some(*x))
                        .collect(),
                ),
                Column::Factor(f) => Column::Factor(Factor {
                    levels: f.levels.clone(),
                    codes: f
                        .codes
                        .iter()
                        .zip(keep)
                        .filter_map(|(c, &k)| k.then_some(*c))
                        .collect(),
                }),
            };
            columns.insert(name.clone(), new_col);
        }
        DataTable { n, columns }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_levels_in_first_appearance_order() {
        let mut t = DataTable::new();
        let vals: Vec<String> = ["b", "a", "b", "c", "a"].iter().map(|s| s.to_string()).collect();
        t.push_factor("f", &vals).unwrap();
        let f = t.factor("f").unwrap();
        assert_eq!(f.levels, vec!["b", "a", "c"]);
        assert_eq!(f.codes, vec![0, 1, 0, 2, 1]);
    }

    #[test]
    fn length_mismatch_rejected() {
        let mut t = DataTable::new();
        t.push_numeric("x", vec![1.0, 2.0]).unwrap();
        assert!(t.push_numeric("y", vec![1.0]).is_err());
    }

    #[test]
    fn filter_rows_keeps_levels() {
        let mut t = DataTable::new();
        let vals: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        t.push_factor("f", &vals).unwrap();
        t.push_numeric("x", vec![1.0, 2.0, 3.0]).unwrap();
        let s = t.filter_rows(&[true, false, true]);
        assert_eq!(s.n_rows(), 2);
        assert_eq!(s.numeric("x").unwrap(), &[1.0, 3.0]);
        assert_eq!(s.factor("f").unwrap().levels, vec!["a", "b", "c"]);
        assert_eq!(s.factor("f").unwrap().codes, vec![0, 2]);
    }
}
