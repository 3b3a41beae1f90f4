//! Row presolve: drops zero and duplicate rows (checking consistency) and
//! scales every kept row to unit infinity norm with a positive leading
//! coefficient.

use std::collections::HashMap;

use super::ConicProgram;

#[derive(Debug, Clone)]
pub(crate) struct Presolved {
    pub rows: Vec<Vec<(usize, f64)>>,
    pub rhs: Vec<f64>,
    /// Original index of each kept row.
    pub kept: Vec<usize>,
    /// Multiplier applied to each kept row; `y_orig[kept[i]] = scale[i] * y[i]`.
    pub scale: Vec<f64>,
    /// An inconsistent zero or duplicate row was found.
    pub inconsistent: Option<String>,
}

const DUPLICATE_TOL: f64 = 1e-12;
const RHS_TOL: f64 = 1e-9;

pub(crate) fn presolve(p: &ConicProgram) -> Presolved {
    let mut out = Presolved {
        rows: Vec::new(),
        rhs: Vec::new(),
        kept: Vec::new(),
        scale: Vec::new(),
        inconsistent: None,
    };
    // Column pattern -> kept rows sharing it.
    let mut by_pattern: HashMap<Vec<usize>, Vec<usize>> = HashMap::new();

    for (idx, c) in p.constraints().iter().enumerate() {
        let norm = c.row.iter().fold(0.0_f64, |m, (_, v)| m.max(v.abs()));
        if norm == 0.0 {
            if c.rhs.abs() > RHS_TOL && out.inconsistent.is_none() {
                out.inconsistent = Some(format!("row {idx} is zero with rhs {}", c.rhs));
            }
            continue;
        }
        let sign = if c.row[0].1 < 0.0 { -1.0 } else { 1.0 };
        let mult = sign / norm;
        let row: Vec<(usize, f64)> = c.row.iter().map(|&(j, v)| (j, v * mult)).collect();
        let rhs = c.rhs * mult;
        let pattern: Vec<usize> = row.iter().map(|&(j, _)| j).collect();

        let bucket = by_pattern.entry(pattern).or_default();
        let duplicate = bucket.iter().copied().find(|&k| {
            out.rows[k]
                .iter()
                .zip(&row)
                .all(|(&(_, a), &(_, b))| (a - b).abs() <= DUPLICATE_TOL)
        });
        if let Some(k) = duplicate {
            if (out.rhs[k] - rhs).abs() > RHS_TOL * (1.0 + rhs.abs()) && out.inconsistent.is_none() {
                out.inconsistent = Some(format!(
                    "row {idx} duplicates row {} with a different right-hand side",
                    out.kept[k]
                ));
            }
            continue;
        }
        bucket.push(out.rows.len());
        out.rows.push(row);
        out.rhs.push(rhs);
        out.kept.push(idx);
        out.scale.push(mult);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::Cone;

    #[test]
    fn drops_zero_and_duplicate_rows() {
        let mut p = ConicProgram::new(vec![Cone::NonNeg(3)]);
        p.add_constraint(&[(0, 2.0), (1, -4.0)], 2.0).unwrap();
        p.add_constraint(&[(0, -1.0), (1, 2.0)], -1.0).unwrap();
        p.add_constraint(&[], 0.0).unwrap();
        p.add_constraint(&[(2, 5.0)], 1.0).unwrap();
        let pre = presolve(&p);
        assert!(pre.inconsistent.is_none());
        assert_eq!(pre.kept, vec![0, 3]);
        assert_eq!(pre.rows[0], vec![(0, 0.5), (1, -1.0)]);
        assert_eq!(pre.rhs[0], 0.5);
        assert_eq!(pre.rows[1], vec![(2, 1.0)]);
    }

    #[test]
    fn flags_inconsistent_rows() {
        let mut p = ConicProgram::new(vec![Cone::NonNeg(2)]);
        p.add_constraint(&[(0, 1.0)], 1.0).unwrap();
        p.add_constraint(&[(0, 2.0)], 3.0).unwrap();
        assert!(presolve(&p).inconsistent.is_some());

        let mut q = ConicProgram::new(vec![Cone::NonNeg(2)]);
        q.add_constraint(&[(0, 0.0)], 1.0).unwrap();
        assert!(presolve(&q).inconsistent.is_some());
    }
}
