//! Penalty schemes for the nuclear-norm objective and their validity checks.

use std::fmt;

use crate::error::{Error, Result};

/// Identifies one component of the decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComponentId {
    Global,
    RowShared(usize),
    ColShared(usize),
    Individual(usize, usize),
}

impl fmt::Display for ComponentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ComponentId::Global => write!(f, "global component"),
            ComponentId::RowShared(i) => write!(f, "row-shared component {i}"),
            ComponentId::ColShared(j) => write!(f, "column-shared component {j}"),
            ComponentId::Individual(i, j) => write!(f, "individual component ({i}, {j})"),
        }
    }
}

/// The 1 + p + q + pq nonnegative penalty factors, one per component.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyScheme {
    pub global: f64,
    pub row: Vec<f64>,
    pub col: Vec<f64>,
    pub individual: Vec<Vec<f64>>,
}

/// One failed strict inequality, naming the component it forces to zero.
#[derive(Debug, Clone)]
pub struct PenaltyViolation {
    pub inequality: String,
    pub forced_zero: ComponentId,
}

impl fmt::Display for PenaltyViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} is forced to zero", self.inequality, self.forced_zero)
    }
}

impl PenaltyScheme {
    pub fn new(
        global: f64,
        row: Vec<f64>,
        col: Vec<f64>,
        individual: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let scheme = Self {
            global,
            row,
            col,
            individual,
        };
        let (p, q) = (scheme.row.len(), scheme.col.len());
        if p == 0 || q == 0 {
            return Err(Error::InvalidArgument(
                "penalty scheme needs at least one row and one column factor".into(),
            ));
        }
        if scheme.individual.len() != p || scheme.individual.iter().any(|r| r.len() != q) {
            return Err(Error::DimensionMismatch(format!(
                "individual penalty grid must be {p}x{q}"
            )));
        }
        let all_nonneg = scheme.global >= 0.0
            && scheme.row.iter().all(|&l| l >= 0.0)
            && scheme.col.iter().all(|&l| l >= 0.0)
            && scheme
                .individual
                .iter()
                .all(|r| r.iter().all(|&l| l >= 0.0));
        if !all_nonneg {
            return Err(Error::InvalidArgument(
                "penalty factors must be nonnegative".into(),
            ));
        }
        Ok(scheme)
    }

    pub fn p(&self) -> usize {
        self.row.len()
    }

    pub fn q(&self) -> usize {
        self.col.len()
    }

    /// Total number of penalty factors, `1 + p + q + pq`.
    pub fn count(&self) -> usize {
        1 + self.p() + self.q() + self.p() * self.q()
    }

    /// The random-matrix default: `lambda = sqrt(rows) + sqrt(cols)` of the
    /// matrix each penalty applies to, using the summed dimensions for the
    /// shared components. For unit-variance noise this upper-bounds the
    /// largest singular value of the corresponding pure-noise concatenation.
    pub fn rmt_default(row_dims: &[usize], col_dims: &[usize]) -> Result<Self> {
        if row_dims.is_empty() || col_dims.is_empty() {
            return Err(Error::InvalidArgument("empty grid dimensions".into()));
        }
        if row_dims.iter().chain(col_dims.iter()).any(|&d| d == 0) {
            return Err(Error::InvalidArgument(
                "block dimensions must be positive".into(),
            ));
        }
        let m0: usize = row_dims.iter().sum();
        let n0: usize = col_dims.iter().sum();
        let lam = |m: usize, n: usize| (m as f64).sqrt() + (n as f64).sqrt();
        Ok(Self {
            global: lam(m0, n0),
            row: row_dims.iter().map(|&m| lam(m, n0)).collect(),
            col: col_dims.iter().map(|&n| lam(m0, n)).collect(),
            individual: row_dims
                .iter()
                .map(|&m| col_dims.iter().map(|&n| lam(m, n)).collect())
                .collect(),
        })
    }

    /// Checks the strict inequalities that are necessary for every component
    /// of the decomposition to be allowed nonzero. Returns one entry per
    /// failed inequality; equality already forces the named component to
    /// zero, so it is reported as a violation.
    pub fn validate(&self) -> Vec<PenaltyViolation> {
        let (p, q) = (self.p(), self.q());
        let mut out = Vec::new();
        for i in 0..p {
            for j in 0..q {
                if self.individual[i][j] >= self.row[i] {
                    out.push(PenaltyViolation {
                        inequality: format!(
                            "individual[{i}][{j}] = {} >= row[{i}] = {}",
                            self.individual[i][j], self.row[i]
                        ),
                        forced_zero: ComponentId::Individual(i, j),
                    });
                }
                if self.individual[i][j] >= self.col[j] {
                    out.push(PenaltyViolation {
                        inequality: format!(
                            "individual[{i}][{j}] = {} >= col[{j}] = {}",
                            self.individual[i][j], self.col[j]
                        ),
                        forced_zero: ComponentId::Individual(i, j),
                    });
                }
            }
            let sum_i: f64 = self.individual[i].iter().sum();
            if self.row[i] >= sum_i {
                out.push(PenaltyViolation {
                    inequality: format!(
                        "row[{i}] = {} >= sum_j individual[{i}][j] = {sum_i}",
                        self.row[i]
                    ),
                    forced_zero: ComponentId::RowShared(i),
                });
            }
            if self.row[i] >= self.global {
                out.push(PenaltyViolation {
                    inequality: format!(
                        "row[{i}] = {} >= global = {}",
                        self.row[i], self.global
                    ),
                    forced_zero: ComponentId::RowShared(i),
                });
            }
        }
        for j in 0..q {
            let sum_j: f64 = (0..p).map(|i| self.individual[i][j]).sum();
            if self.col[j] >= sum_j {
                out.push(PenaltyViolation {
                    inequality: format!(
                        "col[{j}] = {} >= sum_i individual[i][{j}] = {sum_j}",
                        self.col[j]
                    ),
                    forced_zero: ComponentId::ColShared(j),
                });
            }
            if self.col[j] >= self.global {
                out.push(PenaltyViolation {
                    inequality: format!(
                        "col[{j}] = {} >= global = {}",
                        self.col[j], self.global
                    ),
                    forced_zero: ComponentId::ColShared(j),
                });
            }
        }
        let row_sum: f64 = self.row.iter().sum();
        if self.global >= row_sum {
            out.push(PenaltyViolation {
                inequality: format!("global = {} >= sum_i row[i] = {row_sum}", self.global),
                forced_zero: ComponentId::Global,
            });
        }
        let col_sum: f64 = self.col.iter().sum();
        if self.global >= col_sum {
            out.push(PenaltyViolation {
                inequality: format!("global = {} >= sum_j col[j] = {col_sum}", self.global),
                forced_zero: ComponentId::Global,
            });
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn default_factors_match_arithmetic() {
        let scheme = PenaltyScheme::rmt_default(&[100, 100], &[100, 100]).unwrap();
        assert_eq!(scheme.count(), 9);
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(scheme.individual[i][j], 20.0, epsilon = 1e-12);
            }
            assert_abs_diff_eq!(scheme.row[i], 10.0 + 200f64.sqrt(), epsilon = 1e-12);
            assert_abs_diff_eq!(scheme.col[i], 10.0 + 200f64.sqrt(), epsilon = 1e-12);
        }
        assert_abs_diff_eq!(scheme.global, 2.0 * 200f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn default_scheme_is_valid() {
        // 20 < 24.142 < 40 and 24.142 < 28.284 < 48.284
        let scheme = PenaltyScheme::rmt_default(&[100, 100], &[100, 100]).unwrap();
        assert!(scheme.validate().is_empty());
    }

    #[test]
    fn boundary_equality_is_a_violation() {
        let mut scheme = PenaltyScheme::rmt_default(&[100, 100], &[100, 100]).unwrap();
        let max_indiv = scheme.individual[0]
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        scheme.row[0] = max_indiv;
        let violations = scheme.validate();
        assert!(violations
            .iter()
            .any(|v| v.forced_zero == ComponentId::Individual(0, 0)
                || v.forced_zero == ComponentId::Individual(0, 1)));
    }

    #[test]
    fn global_sum_boundary_forces_global_zero() {
        let mut scheme = PenaltyScheme::rmt_default(&[100, 100], &[100, 100]).unwrap();
        scheme.global = scheme.row.iter().sum();
        let violations = scheme.validate();
        assert!(violations
            .iter()
            .any(|v| v.forced_zero == ComponentId::Global));
    }

    #[test]
    fn rejects_negative_factor() {
        assert!(PenaltyScheme::new(1.0, vec![-0.5], vec![1.0], vec![vec![1.0]]).is_err());
    }

    #[test]
    fn default_satisfies_conditions_over_random_dims() {
        // property: the default factors always pass the strict checks
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            10 + (state % 491) as usize
        };
        for _ in 0..200 {
            let p = 2 + (next() % 3);
            let q = 2 + (next() % 3);
            let rows: Vec<usize> = (0..p).map(|_| next()).collect();
            let cols: Vec<usize> = (0..q).map(|_| next()).collect();
            let scheme = PenaltyScheme::rmt_default(&rows, &cols).unwrap();
            assert!(
                scheme.validate().is_empty(),
                "violations for dims {rows:?} x {cols:?}"
            );
        }
    }
}
