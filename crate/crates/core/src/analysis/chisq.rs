use serde::{Deserialize, Serialize};

use super::special::chi_square_sf;
use crate::{Error, Result};

/// An r x c table of counts with no all-zero row or column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    cells: Vec<Vec<u64>>,
}

impl ContingencyTable {
    pub fn new(cells: Vec<Vec<u64>>) -> Result<Self> {
        let rows = cells.len();
        let cols = cells.first().map_or(0, Vec::len);
        if rows < 2 || cols < 2 {
            return Err(Error::InvalidArgument(format!(
                "contingency table must be at least 2x2, got {rows}x{cols}"
            )));
        }
        if cells.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument("ragged contingency table".into()));
        }
        if let Some(i) = cells.iter().position(|r| r.iter().all(|&c| c == 0)) {
            return Err(Error::InvalidArgument(format!("row {i} is all zero")));
        }
        if let Some(j) = (0..cols).find(|&j| cells.iter().all(|r| r[j] == 0)) {
            return Err(Error::InvalidArgument(format!("column {j} is all zero")));
        }
        Ok(ContingencyTable { cells })
    }

    /// Parses `"a,b;c,d"`: rows separated by `;`, cells by `,`.
    pub fn parse(text: &str) -> Result<Self> {
        let cells = text
            .split(';')
            .map(|row| {
                row.split(',')
                    .map(|c| {
                        c.trim().parse::<u64>().map_err(|_| {
                            Error::InvalidArgument(format!("bad cell {c:?} in table {text:?}"))
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        ContingencyTable::new(cells)
    }

    pub fn rows(&self) -> usize {
        self.cells.len()
    }

    pub fn cols(&self) -> usize {
        self.cells[0].len()
    }

    pub fn cells(&self) -> &[Vec<u64>] {
        &self.cells
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().flatten().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquare {
    pub stat: f64,
    pub df: u32,
    pub p: f64,
}

/// Pearson's chi-square test of independence, without continuity correction.
pub fn chi_square_independence(table: &ContingencyTable) -> Result<ChiSquare> {
    let n = table.total() as f64;
    let row_sums: Vec<f64> = table
        .cells
        .iter()
        .map(|r| r.iter().sum::<u64>() as f64)
        .collect();
    let col_sums: Vec<f64> = (0..table.cols())
        .map(|j| table.cells.iter().map(|r| r[j]).sum::<u64>() as f64)
        .collect();
    let mut stat = 0.0;
    for (i, row) in table.cells.iter().enumerate() {
        for (j, &observed) in row.iter().enumerate() {
            let expected = row_sums[i] * col_sums[j] / n;
            if expected <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "zero expected count in cell ({i}, {j})"
                )));
            }
            let diff = observed as f64 - expected;
            stat += diff * diff / expected;
        }
    }
    let df = ((table.rows() - 1) * (table.cols() - 1)) as u32;
    Ok(ChiSquare {
        stat,
        df,
        p: chi_square_sf(stat, df as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_without_correction() {
        let t = ContingencyTable::parse("296,380;47,53").unwrap();
        let r = chi_square_independence(&t).unwrap();
        assert_eq!(r.df, 1);
        assert!((r.stat - 0.364_630_212_674_560_4).abs() < 1e-12, "{}", r.stat);
        assert!((r.p - 0.545_945_911_616_255_5).abs() < 1e-10, "{}", r.p);
    }

    #[test]
    fn independent_table() {
        let t = ContingencyTable::new(vec![vec![10, 10], vec![10, 10]]).unwrap();
        let r = chi_square_independence(&t).unwrap();
        assert_eq!(r.stat, 0.0);
        assert_eq!(r.p, 1.0);
    }

    #[test]
    fn malformed_tables() {
        assert!(ContingencyTable::parse("1,2").is_err());
        assert!(ContingencyTable::parse("1,2;3").is_err());
        assert!(ContingencyTable::parse("0,0;3,4").is_err());
        assert!(ContingencyTable::parse("0,1;0,4").is_err());
        assert!(ContingencyTable::parse("1,x;3,4").is_err());
    }
}
