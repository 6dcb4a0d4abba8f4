//! Matrix exponential by scaling and squaring with a degree-13 Padé core.

use crate::error::{Error, Result};
use crate::tensor::{square_extent, Tensor};

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Largest 1-norm for which the unscaled degree-13 approximant is accurate to
/// double precision.
const THETA13: f64 = 5.371920351148152;

fn norm_one(m: &Tensor) -> f64 {
    let n = m.shape()[0];
    (0..n).map(|j| (0..n).map(|i| m.at(i, j).abs()).sum::<f64>()).fold(0.0, f64::max)
}

fn lin_comb(terms: &[(f64, &Tensor)], n: usize) -> Tensor {
    let mut out = Tensor::zeros(&[n, n]);
    for (c, t) in terms {
        for (o, v) in out.data_mut().iter_mut().zip(t.data()) {
            *o += c * v;
        }
    }
    out
}

/// `e^M` for a square matrix with finite entries.
pub fn expm(m: &Tensor) -> Result<Tensor> {
    let n = square_extent(m)?;
    if let Some(idx) = m.first_non_finite() {
        return Err(Error::Numeric(format!("non-finite entry at flat index {idx} in expm input")));
    }
    if n == 0 {
        return Ok(Tensor::zeros(&[0, 0]));
    }
    let norm = norm_one(m);
    let s = if norm > THETA13 { (norm / THETA13).log2().ceil() as i32 } else { 0 };
    let scaled = m.scale(0.5f64.powi(s));

    let b = &PADE13;
    let ident = Tensor::eye(n);
    let a2 = scaled.matmul(&scaled)?;
    let a4 = a2.matmul(&a2)?;
    let a6 = a4.matmul(&a2)?;

    let u_inner = lin_comb(&[(b[13], &a6), (b[11], &a4), (b[9], &a2)], n);
    let u_tail = lin_comb(&[(b[7], &a6), (b[5], &a4), (b[3], &a2), (b[1], &ident)], n);
    let mut u = a6.matmul(&u_inner)?;
    u.add_assign(&u_tail);
    let u = scaled.matmul(&u)?;

    let v_inner = lin_comb(&[(b[12], &a6), (b[10], &a4), (b[8], &a2)], n);
    let v_tail = lin_comb(&[(b[6], &a6), (b[4], &a4), (b[2], &a2), (b[0], &ident)], n);
    let mut v = a6.matmul(&v_inner)?;
    v.add_assign(&v_tail);

    let p = v.zip_map(&u, |v, u| v + u);
    let q = v.zip_map(&u, |v, u| v - u);
    let mut r = solve(&q, &p)?;
    for _ in 0..s {
        r = r.matmul(&r)?;
    }
    if let Some(idx) = r.first_non_finite() {
        return Err(Error::Numeric(format!("expm overflowed at flat index {idx}")));
    }
    Ok(r)
}

/// Truncated Taylor series `sum_{k<=terms} M^k / k!` (no scaling).
pub fn expm_series(m: &Tensor, terms: usize) -> Result<Tensor> {
    let n = square_extent(m)?;
    let mut out = Tensor::eye(n);
    let mut term = Tensor::eye(n);
    for k in 1..=terms {
        term = term.matmul(m)?.scale(1.0 / k as f64);
        out.add_assign(&term);
    }
    Ok(out)
}

/// Gradient of `<G, e^M>` with respect to `M`: the Fréchet derivative of the
/// exponential at `M^T` in direction `G`, read off the upper-right block of a
/// 2n x 2n block-triangular exponential.
pub fn expm_adjoint(m: &Tensor, g: &Tensor) -> Result<Tensor> {
    let n = square_extent(m)?;
    if g.shape() != m.shape() {
        return Err(Error::Shape(format!("adjoint direction {:?} vs {:?}", g.shape(), m.shape())));
    }
    let mt = m.transpose()?;
    let mut big = Tensor::zeros(&[2 * n, 2 * n]);
    for i in 0..n {
        for j in 0..n {
            big.set(i, j, mt.at(i, j));
            big.set(n + i, n + j, mt.at(i, j));
            big.set(i, n + j, g.at(i, j));
        }
    }
    let e = expm(&big)?;
    let mut out = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, e.at(i, n + j));
        }
    }
    Ok(out)
}

/// Solves `Q X = P` by LU with partial pivoting.
fn solve(q: &Tensor, p: &Tensor) -> Result<Tensor> {
    let n = q.shape()[0];
    let cols = p.shape()[1];
    let mut lu = q.data().to_vec();
    let mut rhs = p.data().to_vec();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&a, &b| lu[a * n + col].abs().total_cmp(&lu[b * n + col].abs()))
            .unwrap_or(col);
        if lu[pivot * n + col] == 0.0 {
            return Err(Error::Numeric("singular Padé denominator".into()));
        }
        if pivot != col {
            for j in 0..n {
                lu.swap(col * n + j, pivot * n + j);
            }
            for j in 0..cols {
                rhs.swap(col * cols + j, pivot * cols + j);
            }
        }
        let d = lu[col * n + col];
        for r in col + 1..n {
            let f = lu[r * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                lu[r * n + j] -= f * lu[col * n + j];
            }
            for j in 0..cols {
                rhs[r * cols + j] -= f * rhs[col * cols + j];
            }
        }
    }
    for col in (0..n).rev() {
        let d = lu[col * n + col];
        for j in 0..cols {
            let mut acc = rhs[col * cols + j];
            for k in col + 1..n {
                acc -= lu[col * n + k] * rhs[k * cols + j];
            }
            rhs[col * cols + j] = acc / d;
        }
    }
    Tensor::new(vec![n, cols], rhs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(expm(&Tensor::zeros(&[3, 3])).unwrap(), Tensor::eye(3));
    }

    #[test]
    fn diagonal_case() {
        let m = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let e = expm(&m).unwrap();
        assert!((e.at(0, 0) - 1f64.exp()).abs() < 1e-13);
        assert!((e.at(1, 1) - 2f64.exp()).abs() < 1e-12);
        assert_eq!(e.at(0, 1), 0.0);
        assert_eq!(e.at(1, 0), 0.0);
    }

    #[test]
    fn swap_matrix_trace_is_two_cosh_one() {
        // eigenvalues +1, -1
        let m = Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let tr = expm(&m).unwrap().trace().unwrap();
        assert!((tr - 2.0 * 1f64.cosh()).abs() < 1e-13);
        assert!((tr - 3.0862).abs() < 1e-4);
    }

    #[test]
    fn large_norm_uses_squaring() {
        // e^{[[0,t],[-t,0]]} is a rotation by t
        let t = 20.0;
        let m = Tensor::from_rows(&[vec![0.0, t], vec![-t, 0.0]]).unwrap();
        let e = expm(&m).unwrap();
        assert!((e.at(0, 0) - t.cos()).abs() < 1e-10);
        assert!((e.at(0, 1) - t.sin()).abs() < 1e-10);
    }

    #[test]
    fn non_square_rejected() {
        assert!(matches!(expm(&Tensor::zeros(&[2, 3])), Err(Error::Shape(_))));
    }
}
