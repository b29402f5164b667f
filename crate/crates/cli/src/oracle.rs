//! Closed-form shift of the quadratic minimum checked against gradient descent.

use std::fmt::Write as _;
use std::path::Path;

use growreg::quadratic_lab::{
    oracle_residual, random_psd, two_d_ratios, two_d_ratios_exact, PenaltyIncrement, QuadraticModel,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{CliError, Result};

/// Increments alternated across generated cases.
pub const CASE_DELTAS: [f64; 2] = [0.01, 0.1];
/// Increments tabulated by the approximate-vs-exact comparison.
pub const TABLE_DELTAS: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];
pub const EIG_RANGE: (f64, f64) = (0.1, 5.0);

pub struct OracleRow {
    pub case: usize,
    pub dim: usize,
    pub delta_lambda: f64,
    pub min_eig: f64,
    pub max_eig: f64,
    pub residual: f64,
}

pub struct OracleReport {
    pub rows: Vec<OracleRow>,
    pub tol: f64,
}

impl OracleReport {
    pub fn max_residual(&self) -> f64 {
        self.rows.iter().map(|r| r.residual).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| !(r.residual < self.tol)).count()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("case,dim,delta_lambda,min_eig,max_eig,residual,pass\n");
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{},{:e},{}",
                r.case,
                r.dim,
                r.delta_lambda,
                r.min_eig,
                r.max_eig,
                r.residual,
                r.residual < self.tol
            )
            .unwrap();
        }
        s
    }
}

fn gaussian(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn rows_of(m: &growreg::quadratic_lab::QuadraticModel) -> Vec<Vec<f64>> {
    let h = m.hessian();
    (0..h.nrows()).map(|i| h.row(i).iter().copied().collect()).collect()
}

/// `cases` random models of dimension `dim` with `w* ~ N(0, I)`.
pub fn random_models(dim: usize, cases: usize, seed: u64) -> Result<Vec<QuadraticModel>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cases)
        .map(|_| {
            let h = random_psd(dim, EIG_RANGE.0, EIG_RANGE.1, &mut rng);
            let w = gaussian(dim, &mut rng);
            Ok(QuadraticModel::new(h, w.into(), 0.0)?)
        })
        .collect()
}

/// Reads a whitespace- or comma-separated square matrix. `#` starts a comment.
pub fn read_hessian(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::input(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>().map_err(|_| CliError::input(path, format!("line {}: bad number {t:?}", i + 1))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 {
        return Err(CliError::input(path, "empty matrix"));
    }
    if let Some(bad) = rows.iter().position(|r| r.len() != n) {
        return Err(CliError::input(path, format!("row {} has {} entries, expected {n}", bad + 1, rows[bad].len())));
    }
    Ok(rows)
}

/// Models built from one Hessian with `cases` random `w*`.
pub fn file_models(rows: &[Vec<f64>], cases: usize, seed: u64) -> Result<Vec<QuadraticModel>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cases)
        .map(|_| {
            let w = gaussian(rows.len(), &mut rng);
            Ok(QuadraticModel::from_rows(rows, &w, 0.0)?)
        })
        .collect()
}

/// Case `i` uses `CASE_DELTAS[i % 2]`.
pub fn run_suite(models: &[QuadraticModel], tol: f64) -> Result<OracleReport> {
    let rows = models
        .iter()
        .enumerate()
        .map(|(case, m)| {
            let delta_lambda = CASE_DELTAS[case % CASE_DELTAS.len()];
            let eig = m.eigenvalues();
            Ok(OracleRow {
                case,
                dim: m.dim(),
                delta_lambda,
                min_eig: eig.min(),
                max_eig: eig.max(),
                residual: oracle_residual(m, PenaltyIncrement::new(delta_lambda)?)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OracleReport { rows, tol })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Approximate vs exact shrink ratios of 2-D models, one row per
/// `(case, δλ)`. `gap` is the larger absolute difference of the two ratios.
pub fn exact_vs_approx_csv(models: &[QuadraticModel]) -> Result<String> {
    let mut s = String::from("case,delta_lambda,h11,h12,h22,r1_approx,r1_exact,r2_approx,r2_exact,gap\n");
    for (case, m) in models.iter().enumerate() {
        let h = rows_of(m);
        for dl in TABLE_DELTAS {
            let inc = PenaltyIncrement::new(dl)?;
            let (a1, a2) = two_d_ratios(m, inc)?;
            let (e1, e2) = two_d_ratios_exact(m, inc)?;
            let gap = [e1.map(|e| (e - a1).abs()), e2.map(|e| (e - a2).abs())].into_iter().flatten().fold(None, |acc: Option<f64>, g| Some(acc.map_or(g, |a| a.max(g))));
            writeln!(
                s,
                "{case},{dl},{},{},{},{a1},{},{a2},{},{}",
                h[0][0],
                h[0][1],
                h[1][1],
                opt(e1),
                opt(e2),
                opt(gap)
            )
            .unwrap();
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_on_random_models() {
        let models = random_models(6, 8, 1).unwrap();
        let rep = run_suite(&models, 1e-8).unwrap();
        assert_eq!(rep.failures(), 0, "max residual {}", rep.max_residual());
        assert_eq!(rep.rows[1].delta_lambda, 0.1);
        assert_eq!(rep.to_csv().lines().count(), 9);
    }

    #[test]
    fn hessian_file_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.txt");
        std::fs::write(&p, "# comment\n2, 1\n1 3  # trailing\n\n").unwrap();
        assert_eq!(read_hessian(&p).unwrap(), vec![vec![2.0, 1.0], vec![1.0, 3.0]]);
        std::fs::write(&p, "1 2\n3\n").unwrap();
        assert!(read_hessian(&p).is_err());
        std::fs::write(&p, "1 x\n3 4\n").unwrap();
        assert!(read_hessian(&p).unwrap_err().to_string().contains("line 1"));
    }

    #[test]
    fn exact_table_gap_shrinks_with_delta() {
        let models = random_models(2, 3, 5).unwrap();
        let csv = exact_vs_approx_csv(&models).unwrap();
        let gaps: Vec<f64> = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
        assert_eq!(gaps.len(), 12);
        for case in gaps.chunks(4) {
            assert!(case.windows(2).all(|w| w[1] < w[0]), "{case:?}");
        }
    }
}
