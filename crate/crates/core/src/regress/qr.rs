//! Householder QR with column pivoting for least squares on tall,
//! column-major design matrices.
//!
//! Pivoting is limited: columns are taken in input order and a column that
//! is dependent on those already kept is moved out, so earlier columns win
//! collinearity ties.

/// A unit-norm column whose residual norm, after projecting out the columns
/// kept before it, falls below this is linearly dependent on them.
pub const RANK_TOL: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct PivotedQr {
    /// Original column index of each kept column, ascending.
    pub kept: Vec<usize>,
    /// Original indices of columns removed as dependent.
    pub dropped: Vec<usize>,
    /// `r[i][j]` for `j >= i`, kept columns only, equilibrated scale.
    r: Vec<Vec<f64>>,
    /// `Qᵀy`, first `rank` entries.
    qty: Vec<f64>,
    /// Column norms used for equilibration, by original index.
    scale: Vec<f64>,
}

impl PivotedQr {
    /// Factorises `cols` (each of length n) and carries `y` along.
    /// Zero columns are dropped outright.
    pub fn new(cols: &[Vec<f64>], y: &[f64]) -> Self {
        let n = y.len();
        let k = cols.len();
        let scale: Vec<f64> = cols.iter().map(|c| norm(c)).collect();
        let mut work: Vec<(usize, Vec<f64>)> = Vec::with_capacity(k);
        let mut dropped = Vec::new();
        for (j, c) in cols.iter().enumerate() {
            if scale[j] > 0.0 && scale[j].is_finite() {
                work.push((j, c.iter().map(|v| v / scale[j]).collect()));
            } else {
                dropped.push(j);
            }
        }
        let mut y = y.to_vec();
        let mut kept = Vec::new();
        let mut kept_pos = Vec::new();
        let m = work.len();
        let mut step = 0;
        for idx in 0..m {
            let nrm = if step < n {
                norm(&work[idx].1[step..])
            } else {
                0.0
            };
            if nrm <= RANK_TOL {
                dropped.push(work[idx].0);
                continue;
            }
            let col = &work[idx].1;
            let alpha = if col[step] >= 0.0 { -nrm } else { nrm };
            let mut v: Vec<f64> = col[step..].to_vec();
            v[0] -= alpha;
            let vnorm2: f64 = v.iter().map(|x| x * x).sum();
            let apply = |x: &mut [f64]| {
                if vnorm2 == 0.0 {
                    return;
                }
                let dot: f64 = v.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
                let f = 2.0 * dot / vnorm2;
                for (xi, vi) in x.iter_mut().zip(&v) {
                    *xi -= f * vi;
                }
            };
            for (_, c) in work.iter_mut().skip(idx) {
                apply(&mut c[step..]);
            }
            apply(&mut y[step..]);
            kept.push(work[idx].0);
            kept_pos.push(idx);
            step += 1;
        }
        let rank = kept.len();
        // Later reflectors only touch rows below their step.
        let r: Vec<Vec<f64>> = (0..rank)
            .map(|i| (i..rank).map(|j| work[kept_pos[j]].1[i]).collect())
            .collect();
        dropped.sort_unstable();
        let qty = y[..rank].to_vec();
        Self {
            kept,
            dropped,
            r,
            qty,
            scale,
        }
    }

    pub fn rank(&self) -> usize {
        self.kept.len()
    }

    fn r_at(&self, i: usize, j: usize) -> f64 {
        self.r[i][j - i]
    }

    /// Coefficients for the kept columns, in pivot order.
    pub fn coefficients(&self) -> Vec<f64> {
        let p = self.rank();
        let mut b = self.qty.clone();
        for i in (0..p).rev() {
            let mut s = b[i];
            for j in i + 1..p {
                s -= self.r_at(i, j) * b[j];
            }
            b[i] = s / self.r_at(i, i);
        }
        b.iter()
            .zip(&self.kept)
            .map(|(v, &j)| v / self.scale[j])
            .collect()
    }

    /// `(XᵀX)⁻¹` over kept columns in pivot order.
    pub fn xtx_inverse(&self) -> Vec<Vec<f64>> {
        let p = self.rank();
        // Rinv upper triangular.
        let mut rinv = vec![vec![0.0; p]; p];
        for j in 0..p {
            rinv[j][j] = 1.0 / self.r_at(j, j);
            for i in (0..j).rev() {
                let mut s = 0.0;
                for l in i + 1..=j {
                    s += self.r_at(i, l) * rinv[l][j];
                }
                rinv[i][j] = -s / self.r_at(i, i);
            }
        }
        let mut out = vec![vec![0.0; p]; p];
        for a in 0..p {
            for b in a..p {
                let mut s = 0.0;
                for l in b..p {
                    s += rinv[a][l] * rinv[b][l];
                }
                let v = s / (self.scale[self.kept[a]] * self.scale[self.kept[b]]);
                out[a][b] = v;
                out[b][a] = v;
            }
        }
        out
    }
}

fn norm(x: &[f64]) -> f64 {
    // Scaled to avoid overflow on large magnitudes.
    let m = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if m == 0.0 || !m.is_finite() {
        return m;
    }
    m * x.iter().map(|v| (v / m) * (v / m)).sum::<f64>().sqrt()
}
