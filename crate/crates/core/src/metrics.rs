//! Agreement between predicted and subjective scores: SROCC, KROCC (tau-b),
//! and PLCC / RMSE after a five-parameter logistic mapping.

use crate::error::{Error, Result};

fn check_pairs(pred: &[f64], subj: &[f64], min: usize) -> Result<()> {
    if pred.len() != subj.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} scores",
            pred.len(),
            subj.len()
        )));
    }
    if pred.len() < min {
        return Err(Error::InvalidArgument(format!(
            "need at least {min} score pairs, got {}",
            pred.len()
        )));
    }
    if pred.iter().chain(subj).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite score".into()));
    }
    Ok(())
}

/// Pearson linear correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pairs(x, y, 2)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks, tied values sharing the average of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && x[idx[j]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Spearman rank-order correlation with average ranks for ties.
pub fn srocc(pred: &[f64], subj: &[f64]) -> Result<f64> {
    check_pairs(pred, subj, 3)?;
    pearson(&average_ranks(pred), &average_ranks(subj))
}

fn tie_pairs(sorted: &[f64]) -> i64 {
    let mut total = 0;
    let mut run = 1i64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Stable merge sort of `v`, returning the number of inversions.
fn sort_count_swaps(v: &mut [f64], buf: &mut [f64]) -> i64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = sort_count_swaps(&mut v[..mid], &mut buf[..mid]);
    swaps += sort_count_swaps(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as i64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Kendall tau-b, computed in `O(n log n)`.
pub fn krocc(pred: &[f64], subj: &[f64]) -> Result<f64> {
    check_pairs(pred, subj, 3)?;
    let n = pred.len() as i64;
    let mut pairs: Vec<(f64, f64)> = pred.iter().copied().zip(subj.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let n0 = n * (n - 1) / 2;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let n1 = tie_pairs(&xs);
    let mut n3 = 0;
    let mut run = 1i64;
    for w in pairs.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            n3 += run * (run - 1) / 2;
            run = 1;
        }
    }
    n3 += run * (run - 1) / 2;

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; ys.len()];
    let swaps = sort_count_swaps(&mut ys, &mut buf);
    let n2 = tie_pairs(&ys);

    let (tx, ty) = (n0 - n1, n0 - n2);
    if tx == 0 || ty == 0 {
        return Err(Error::UndefinedCorrelation("constant ranking"));
    }
    let s = n0 - n1 - n2 + n3 - 2 * swaps;
    Ok(s as f64 / ((tx as f64) * (ty as f64)).sqrt())
}

/// Parameters of `β1·(1/2 − 1/(1 + exp(β2·(ŝ − β3)))) + β4·ŝ + β5`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogisticFit {
    pub beta: [f64; 5],
    pub converged: bool,
    /// Root-mean-square difference between mapped predictions and targets.
    pub residual: f64,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn logistic(beta: &[f64; 5], s: f64) -> f64 {
    let [b1, b2, b3, b4, b5] = *beta;
    b1 * (0.5 - 1.0 / (1.0 + (b2 * (s - b3)).exp())) + b4 * s + b5
}

fn sse(beta: &[f64; 5], pred: &[f64], subj: &[f64]) -> f64 {
    pred.iter()
        .zip(subj)
        .map(|(&p, &y)| (logistic(beta, p) - y).powi(2))
        .sum()
}

/// Gaussian elimination with partial pivoting.
fn solve<const N: usize>(mut a: [[f64; N]; N], mut b: [f64; N]) -> Option<[f64; N]> {
    for col in 0..N {
        let piv = (col..N).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..N {
            let f = a[row][col] / a[col][col];
            for k in col..N {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; N];
    for row in (0..N).rev() {
        let tail: f64 = (row + 1..N).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

const DAMPING_FACTOR: f64 = 10.0;
const MAX_ITERATIONS: usize = 200;
const REL_TOLERANCE: f64 = 1e-10;

impl LogisticFit {
    pub const IDENTITY: [f64; 5] = [0.0, 1.0, 0.0, 1.0, 0.0];

    pub fn apply(&self, s: f64) -> f64 {
        logistic(&self.beta, s)
    }

    pub fn map(&self, pred: &[f64]) -> Vec<f64> {
        pred.iter().map(|&s| self.apply(s)).collect()
    }
}

/// Starting point: `β1 = max(s) − min(s)`, `β2 = 1/std(ŝ)`, `β3 = mean(ŝ)`,
/// `β4 = 1`, `β5 = min(s)`.
pub fn logistic_init(pred: &[f64], subj: &[f64]) -> [f64; 5] {
    let n = pred.len() as f64;
    let mean = pred.iter().sum::<f64>() / n;
    let std = (pred.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let lo = subj.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = subj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let b2 = if std > 0.0 { 1.0 / std } else { 1.0 };
    [hi - lo, b2, mean, 1.0, lo]
}

/// Basis `[h(z), z, 1]` of the mapping on standardized scores, where
/// `h(z) = 1/2 − σ(−θ0·(z − θ1))`, with `∂h/∂θ`.
fn logistic_basis(theta: [f64; 2], z: f64) -> ([f64; 3], [f64; 2]) {
    let u = z - theta[1];
    let l = sigmoid(-theta[0] * u);
    let slope = l * (1.0 - l);
    ([0.5 - l, z, 1.0], [slope * u, -slope * theta[0]])
}

/// Least-squares coefficients of the linear part for fixed `θ`.
struct Projection {
    basis: Vec<[f64; 3]>,
    gram: [[f64; 3]; 3],
    coef: [f64; 3],
    residual: Vec<f64>,
    cost: f64,
}

impl Projection {
    fn new(theta: [f64; 2], z: &[f64], subj: &[f64]) -> Option<Projection> {
        let basis: Vec<[f64; 3]> = z.iter().map(|&v| logistic_basis(theta, v).0).collect();
        let mut gram = [[0.0; 3]; 3];
        let mut rhs = [0.0; 3];
        for (row, &y) in basis.iter().zip(subj) {
            for a in 0..3 {
                rhs[a] += row[a] * y;
                for b in 0..3 {
                    gram[a][b] += row[a] * row[b];
                }
            }
        }
        let ridge = 1e-14 * (gram[0][0] + gram[1][1] + gram[2][2]) / 3.0;
        for (a, row) in gram.iter_mut().enumerate() {
            row[a] += ridge;
        }
        let coef = solve(gram, rhs)?;
        let residual: Vec<f64> = basis
            .iter()
            .zip(subj)
            .map(|(row, &y)| row[0] * coef[0] + row[1] * coef[1] + row[2] * coef[2] - y)
            .collect();
        let cost = residual.iter().map(|r| r * r).sum::<f64>();
        cost.is_finite().then_some(Projection {
            basis,
            gram,
            coef,
            residual,
            cost,
        })
    }

    /// `v − Φ (ΦᵀΦ)⁻¹ Φᵀ v`.
    fn reject(&self, v: &[f64]) -> Option<Vec<f64>> {
        let mut proj = [0.0; 3];
        for (row, &x) in self.basis.iter().zip(v) {
            for a in 0..3 {
                proj[a] += row[a] * x;
            }
        }
        let w = solve(self.gram, proj)?;
        Some(
            self.basis
                .iter()
                .zip(v)
                .map(|(row, &x)| x - (row[0] * w[0] + row[1] * w[1] + row[2] * w[2]))
                .collect(),
        )
    }
}

/// Least-squares fit of the logistic mapping. `β1`, `β4` and `β5` enter
/// linearly and are solved exactly for every `(β2, β3)`; Levenberg–Marquardt
/// iterates on `(β2, β3)` from the starting point of [`logistic_init`].
/// When the iteration fails to settle the identity mapping is returned with
/// `converged = false`.
pub fn logistic_fit(pred: &[f64], subj: &[f64]) -> Result<LogisticFit> {
    check_pairs(pred, subj, 5)?;
    let n = pred.len();
    let init = logistic_init(pred, subj);
    let fallback = || {
        let beta = [0.0, init[1], init[2], 1.0, 0.0];
        LogisticFit {
            beta,
            converged: false,
            residual: (sse(&beta, pred, subj) / n as f64).sqrt(),
        }
    };

    // on standardized scores the initial (β2, β3) is (1, 0)
    let mean = init[2];
    if pred.iter().all(|&p| p == mean) {
        return Ok(fallback());
    }
    let std = 1.0 / init[1];
    let z: Vec<f64> = pred.iter().map(|&p| (p - mean) / std).collect();

    let mut theta = [1.0, 0.0];
    let Some(mut current) = Projection::new(theta, &z, subj) else {
        return Ok(fallback());
    };
    let scale: f64 = subj.iter().map(|y| y * y).sum::<f64>().max(1.0);
    let mut damping = 1e-3;
    let mut converged = false;

    for _ in 0..MAX_ITERATIONS {
        if current.cost <= 1e-28 * scale {
            converged = true;
            break;
        }
        let mut columns = [vec![0.0; n], vec![0.0; n]];
        for (i, &v) in z.iter().enumerate() {
            let (_, d) = logistic_basis(theta, v);
            columns[0][i] = current.coef[0] * d[0];
            columns[1][i] = current.coef[0] * d[1];
        }
        let (Some(j0), Some(j1)) = (current.reject(&columns[0]), current.reject(&columns[1])) else {
            break;
        };
        let jac = [j0, j1];
        let mut jtj = [[0.0; 2]; 2];
        let mut jtr = [0.0; 2];
        for a in 0..2 {
            jtr[a] = jac[a].iter().zip(&current.residual).map(|(j, r)| j * r).sum();
            for b in 0..2 {
                jtj[a][b] = jac[a].iter().zip(&jac[b]).map(|(x, y)| x * y).sum();
            }
        }

        let mut stepped = false;
        while damping < 1e16 {
            let mut lhs = jtj;
            for (a, row) in lhs.iter_mut().enumerate() {
                row[a] += damping * jtj[a][a].max(1e-12);
            }
            let Some(delta) = solve(lhs, jtr.map(|v| -v)) else {
                damping *= DAMPING_FACTOR;
                continue;
            };
            let trial = [theta[0] + delta[0], theta[1] + delta[1]];
            match Projection::new(trial, &z, subj) {
                Some(next) if next.cost < current.cost => {
                    let rel = (current.cost - next.cost) / current.cost;
                    theta = trial;
                    current = next;
                    damping = (damping / DAMPING_FACTOR).max(1e-12);
                    stepped = true;
                    if rel < REL_TOLERANCE {
                        converged = true;
                    }
                    break;
                }
                _ => damping *= DAMPING_FACTOR,
            }
        }
        if !stepped {
            // no damped step reduces the cost: a stationary point
            converged = true;
        }
        if converged {
            break;
        }
    }

    let [c0, c1, c2] = current.coef;
    let mut beta = [
        c0,
        theta[0] / std,
        mean + std * theta[1],
        c1 / std,
        c2 - c1 * mean / std,
    ];
    if beta[1] < 0.0 {
        beta[0] = -beta[0];
        beta[1] = -beta[1];
    }
    if !converged || beta.iter().any(|b| !b.is_finite()) {
        return Ok(fallback());
    }
    Ok(LogisticFit {
        beta,
        converged: true,
        residual: (sse(&beta, pred, subj) / n as f64).sqrt(),
    })
}

/// PLCC and RMSE between the mapped predictions and the subjective scores.
pub fn plcc_rmse(pred: &[f64], subj: &[f64], fit: &LogisticFit) -> Result<(f64, f64)> {
    check_pairs(pred, subj, 2)?;
    let mapped = fit.map(pred);
    let plcc = pearson(&mapped, subj)?;
    let rmse = (mapped
        .iter()
        .zip(subj)
        .map(|(m, y)| (m - y).powi(2))
        .sum::<f64>()
        / pred.len() as f64)
        .sqrt();
    Ok((plcc, rmse))
}
