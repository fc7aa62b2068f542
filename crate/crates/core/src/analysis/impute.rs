//! Nearest-neighbor imputation for mixed-type tables.

use crate::error::{QmgmError, Result};
use crate::model::{Dataset, VariableKind};

pub const DEFAULT_NEIGHBORS: usize = 13;

/// Gower distance between a row with gaps and a complete row, averaged over
/// the columns observed in `row`. Numeric columns use `|a - b| / range`,
/// binary columns a 0/1 mismatch.
fn gower(dataset: &Dataset, row: usize, other: usize, ranges: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut used = 0usize;
    for j in 0..dataset.p() {
        if dataset.is_missing(row, j) {
            continue;
        }
        let (a, b) = (dataset.value(row, j), dataset.value(other, j));
        total += match dataset.spec(j).kind {
            VariableKind::Binary => f64::from(u8::from(a != b)),
            _ if ranges[j] > 0.0 => (a - b).abs() / ranges[j],
            _ => 0.0,
        };
        used += 1;
    }
    if used == 0 {
        0.0
    } else {
        total / used as f64
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len();
    if m % 2 == 1 {
        values[m / 2]
    } else {
        (values[m / 2 - 1] + values[m / 2]) / 2.0
    }
}

/// Replaces each masked cell by the median of its column over the `k`
/// nearest complete rows. Distance ties go to the lower row index. A binary
/// column whose neighbors split evenly takes the column's mode over all
/// complete rows (1 when that is tied too).
pub fn knn_impute(dataset: &Dataset, k: usize) -> Result<Dataset> {
    if k == 0 {
        return Err(QmgmError::Config("k must be positive".into()));
    }
    if dataset.missing_count() == 0 {
        return Ok(dataset.clone());
    }
    let complete: Vec<usize> = (0..dataset.n()).filter(|&i| dataset.is_complete_row(i)).collect();
    if complete.len() < k {
        return Err(QmgmError::NotEnoughCompleteRows { needed: k, found: complete.len() });
    }
    let p = dataset.p();
    let ranges: Vec<f64> = (0..p)
        .map(|j| {
            let (lo, hi) = complete.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                let v = dataset.value(i, j);
                (lo.min(v), hi.max(v))
            });
            hi - lo
        })
        .collect();
    let modes: Vec<f64> = (0..p)
        .map(|j| {
            let ones = complete.iter().filter(|&&i| dataset.value(i, j) == 1.0).count();
            if 2 * ones >= complete.len() {
                1.0
            } else {
                0.0
            }
        })
        .collect();

    let mut columns = dataset.columns().to_vec();
    for i in 0..dataset.n() {
        if dataset.is_complete_row(i) {
            continue;
        }
        let mut dist: Vec<(f64, usize)> = complete.iter().map(|&c| (gower(dataset, i, c, &ranges), c)).collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let neighbors: Vec<usize> = dist[..k].iter().map(|&(_, c)| c).collect();
        for (j, column) in columns.iter_mut().enumerate() {
            if !dataset.is_missing(i, j) {
                continue;
            }
            let mut vals: Vec<f64> = neighbors.iter().map(|&c| dataset.value(c, j)).collect();
            column[i] = match dataset.spec(j).kind {
                VariableKind::Binary => {
                    let ones = vals.iter().filter(|&&v| v == 1.0).count();
                    match (2 * ones).cmp(&k) {
                        std::cmp::Ordering::Greater => 1.0,
                        std::cmp::Ordering::Less => 0.0,
                        std::cmp::Ordering::Equal => modes[j],
                    }
                }
                _ => median(&mut vals),
            };
        }
    }
    let mut out = dataset.clone();
    out.replace_values(columns, vec![vec![false; dataset.n()]; p]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::VariableSpec;

    fn specs() -> Vec<VariableSpec> {
        vec![
            VariableSpec::new("x", VariableKind::Continuous),
            VariableSpec::new("b", VariableKind::Binary),
            VariableSpec::new("k", VariableKind::Count),
        ]
    }

    #[test]
    fn complete_data_is_untouched() {
        let d = Dataset::new(specs(), vec![vec![1.0, 2.0], vec![0.0, 1.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(knn_impute(&d, 1).unwrap(), d);
    }

    #[test]
    fn constant_neighbors_give_that_value() {
        let x = vec![0.0, 0.1, 0.2, 0.3, 5.0];
        let b = vec![1.0, 1.0, 1.0, 1.0, 0.0];
        let k = vec![7.0, 7.0, 7.0, 9.0, 0.0];
        let mut mask = vec![vec![false; 5]; 3];
        mask[2][4] = true;
        let d = Dataset::with_missing(specs(), vec![x, b, k], mask).unwrap();
        let out = knn_impute(&d, 3).unwrap();
        assert_eq!(out.value(4, 2), 7.0);
        assert_eq!(out.missing_count(), 0);
        assert_eq!(out.value(0, 0), 0.0);
    }

    #[test]
    fn even_binary_split_uses_global_mode() {
        // rows 0..4 complete; row 4 misses b and is equidistant from rows 0 and 1
        let x = vec![0.0, 0.0, 1.0, 1.0, 0.0];
        let b = vec![1.0, 0.0, 0.0, 0.0, 0.0];
        let k = vec![1.0, 1.0, 2.0, 2.0, 1.0];
        let mut mask = vec![vec![false; 5]; 3];
        mask[1][4] = true;
        let d = Dataset::with_missing(specs(), vec![x, b, k], mask).unwrap();
        assert_eq!(knn_impute(&d, 2).unwrap().value(4, 1), 0.0);
        assert_eq!(knn_impute(&d, 1).unwrap().value(4, 1), 1.0);
    }

    #[test]
    fn needs_enough_complete_rows() {
        let mut mask = vec![vec![false; 3]; 3];
        mask[0][0] = true;
        let d = Dataset::with_missing(specs(), vec![vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 1.0], vec![1.0, 2.0, 3.0]], mask)
            .unwrap();
        assert!(matches!(knn_impute(&d, 3), Err(QmgmError::NotEnoughCompleteRows { needed: 3, found: 2 })));
        assert!(knn_impute(&d, 2).is_ok());
    }
}
