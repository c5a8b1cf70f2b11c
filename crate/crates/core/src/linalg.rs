use crate::error::{Error, Result};

/// Tridiagonal matrix stored by diagonals. `lower[0]` and `upper[n-1]` are unused.
#[derive(Clone, Debug)]
pub struct Tridiagonal {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiagonal {
    pub fn zeros(n: usize) -> Self {
        Self { lower: vec![0.0; n], diag: vec![0.0; n], upper: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn transpose(&self) -> Self {
        let n = self.len();
        let mut t = Self::zeros(n);
        t.diag.copy_from_slice(&self.diag);
        for k in 1..n {
            t.lower[k] = self.upper[k - 1];
            t.upper[k - 1] = self.lower[k];
        }
        t
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|k| {
                let mut v = self.diag[k] * x[k];
                if k > 0 {
                    v += self.lower[k] * x[k - 1];
                }
                if k + 1 < n {
                    v += self.upper[k] * x[k + 1];
                }
                v
            })
            .collect()
    }

    /// Thomas algorithm without pivoting.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.len();
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut piv = self.diag[0];
        if !piv.is_finite() || piv == 0.0 {
            return Err(Error::Numerical(format!("tridiagonal pivot {piv} at row 0")));
        }
        c[0] = self.upper[0] / piv;
        d[0] = rhs[0] / piv;
        for k in 1..n {
            piv = self.diag[k] - self.lower[k] * c[k - 1];
            if !piv.is_finite() || piv == 0.0 {
                return Err(Error::Numerical(format!("tridiagonal pivot {piv} at row {k}")));
            }
            c[k] = if k + 1 < n { self.upper[k] / piv } else { 0.0 };
            d[k] = (rhs[k] - self.lower[k] * d[k - 1]) / piv;
        }
        for k in (0..n - 1).rev() {
            d[k] -= c[k] * d[k + 1];
        }
        Ok(d)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Conjugate gradients for a symmetric positive definite operator.
pub fn conjugate_gradient(apply: impl Fn(&[f64]) -> Vec<f64>, rhs: &[f64], x0: Option<&[f64]>, rel_tol: f64, max_iter: usize) -> Vec<f64> {
    let n = rhs.len();
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    let ax = apply(&x);
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let target = rel_tol * rel_tol * dot(rhs, rhs).max(f64::MIN_POSITIVE);
    for _ in 0..max_iter {
        if rr <= target {
            break;
        }
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            break;
        }
        let alpha = rr / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for k in 0..n {
            p[k] = r[k] + beta * p[k];
        }
    }
    x
}

/// Cholesky factor `L Lᵀ` of a symmetric positive definite band matrix.
#[derive(Clone, Debug)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    /// Row `i` holds `L[i][i-bw..=i]`, left-padded with zeros.
    l: Vec<f64>,
}

impl BandedCholesky {
    /// Factors the matrix whose lower band is given by `entry(i, d) = A[i][i-d]`, `d ≤ bw`.
    pub fn factor(n: usize, bw: usize, entry: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let w = bw + 1;
        let mut l = vec![0.0; n * w];
        for i in 0..n {
            for d in (0..=bw.min(i)).rev() {
                let j = i - d;
                let lo = i.saturating_sub(bw).max(j.saturating_sub(bw));
                let mut s = entry(i, d);
                for k in lo..j {
                    s -= l[i * w + bw - (i - k)] * l[j * w + bw - (j - k)];
                }
                if d == 0 {
                    if !(s > 0.0) {
                        return Err(Error::Numerical(format!("matrix not positive definite at row {i}")));
                    }
                    l[i * w + bw] = s.sqrt();
                } else {
                    l[i * w + bw - d] = s / l[j * w + bw];
                }
            }
        }
        Ok(Self { n, bw, l })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        let mut x = rhs.to_vec();
        for i in 0..n {
            let mut s = x[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.l[i * w + bw - (i - k)] * x[k];
            }
            x[i] = s / self.l[i * w + bw];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n.min(i + bw + 1) {
                s -= self.l[k * w + bw - (k - i)] * x[k];
            }
            x[i] = s / self.l[i * w + bw];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Tridiagonal {
        Tridiagonal {
            lower: vec![0.0, -1.0, 0.5, -0.3],
            diag: vec![4.0, 3.0, 5.0, 2.5],
            upper: vec![1.0, -0.7, 0.2, 0.0],
        }
    }

    #[test]
    fn thomas_solves_system() {
        let a = sample();
        let x = vec![1.0, -2.0, 0.5, 3.0];
        let b = a.mul_vec(&x);
        let got = a.solve(&b).unwrap();
        for (g, e) in got.iter().zip(&x) {
            assert!((g - e).abs() < 1e-14);
        }
    }

    #[test]
    fn transpose_is_adjoint() {
        let a = sample();
        let at = a.transpose();
        let x = [0.3, -1.0, 2.0, 0.7];
        let y = [1.1, 0.4, -0.6, 2.2];
        assert!((dot(&a.mul_vec(&x), &y) - dot(&x, &at.mul_vec(&y))).abs() < 1e-14);
    }

    #[test]
    fn zero_pivot_is_numerical_failure() {
        let mut a = sample();
        a.diag[0] = 0.0;
        assert!(matches!(a.solve(&[1.0; 4]), Err(Error::Numerical(_))));
    }

    #[test]
    fn cg_matches_direct_solve() {
        let a = Tridiagonal { lower: vec![0.0, -1.0, -1.0], diag: vec![2.0, 2.0, 2.0], upper: vec![-1.0, -1.0, 0.0] };
        let b = [1.0, 0.0, 1.0];
        let x = conjugate_gradient(|v| a.mul_vec(v), &b, None, 1e-14, 50);
        let direct = a.solve(&b).unwrap();
        for (g, e) in x.iter().zip(&direct) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn banded_cholesky_matches_dense_product() {
        // pentadiagonal SPD matrix with bandwidth 2
        let n = 7;
        let a = |i: usize, d: usize| match d {
            0 => 6.0 + i as f64,
            1 => -1.0 - 0.1 * i as f64,
            2 => 0.5,
            _ => 0.0,
        };
        let f = BandedCholesky::factor(n, 2, a).unwrap();
        let x: Vec<f64> = (0..n).map(|k| (k as f64 * 0.7).sin()).collect();
        let mut b = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                let d = i.abs_diff(j);
                if d <= 2 {
                    b[i] += a(i.max(j), d) * x[j];
                }
            }
        }
        let y = f.solve(&b);
        for k in 0..n {
            assert!((y[k] - x[k]).abs() < 1e-13);
        }
        assert!(BandedCholesky::factor(2, 1, |_, d| if d == 0 { 1.0 } else { 2.0 }).is_err());
    }
}
