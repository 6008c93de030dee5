//! Cubic B-spline bases, second-order difference penalties and sum-to-zero
//! centering for smooth terms.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEGREE: usize = 3;

/// Knot configuration for one cubic smooth. The number of basis functions
/// is `interior.len() + DEGREE + 1`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KnotVector {
    pub interior: Vec<f64>,
    pub boundary: (f64, f64),
}

impl KnotVector {
    pub fn n_basis(&self) -> usize {
        self.interior.len() + DEGREE + 1
    }

    /// Full clamped knot sequence: boundary knots repeated degree+1 times.
    fn full(&self) -> Vec<f64> {
        let (lo, hi) = self.boundary;
        let mut t = vec![lo; DEGREE + 1];
        t.extend_from_slice(&self.interior);
        t.extend(std::iter::repeat(hi).take(DEGREE + 1));
        t
    }
}

/// Square penalty S = DᵀD with D the second-order difference operator on
/// basis coefficients. Symmetric, PSD, null space of dimension 2.
#[derive(Debug, Clone)]
pub struct PenaltyMatrix(pub DMatrix<f64>);

/// Centered design for one smooth: basis columns have zero data-mean, the
/// penalty and the coefficient transform are reparameterized consistently.
#[derive(Debug, Clone)]
pub struct SmoothDesign {
    pub feature: String,
    pub knots: KnotVector,
    /// n x (k-1) centered basis over the construction data.
    pub basis: DMatrix<f64>,
    /// (k-1) x (k-1) reduced penalty.
    pub penalty: DMatrix<f64>,
    /// k x (k-1) map from centered to raw basis coefficients.
    pub transform: DMatrix<f64>,
}

/// Place interior knots at the i/(k-3) quantiles of the distinct values,
/// i = 1..k-4, with boundary knots at min/max. If fewer distinct values
/// than needed are available, k is reduced to the feasible maximum.
pub fn make_knots(values: &[f64], k: usize) -> Result<KnotVector> {
    if k < 4 {
        return Err(Error::Basis(format!("need k >= 4 basis functions, got {k}")));
    }
    let mut distinct: Vec<f64> = values.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    if distinct.len() < 4 {
        return Err(Error::Basis(format!(
            "need at least 4 distinct values, got {}",
            distinct.len()
        )));
    }
    let mut k = k;
    if distinct.len() < k {
        eprintln!(
            "warning: only {} distinct values, reducing basis size from {k}",
            distinct.len()
        );
        k = distinct.len();
    }
    let lo = distinct[0];
    let hi = *distinct.last().unwrap();

    let mut interior = Vec::new();
    let segments = (k - DEGREE) as f64; // k - 3
    for i in 1..=k.saturating_sub(4) {
        interior.push(quantile(&distinct, i as f64 / segments));
    }
    interior.dedup();
    interior.retain(|&t| t > lo && t < hi);

    Ok(KnotVector {
        interior,
        boundary: (lo, hi),
    })
}

/// Linear-interpolation quantile over an ascending slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[i]
    }
}

/// One row of the cubic B-spline basis at point x (clamped to the boundary
/// interval). At most DEGREE + 1 consecutive entries are nonzero.
pub fn basis_row(kv: &KnotVector, x: f64) -> Vec<f64> {
    let (lo, hi) = kv.boundary;
    let x = x.clamp(lo, hi);
    let t = kv.full();
    let k = kv.n_basis();

    // span index: largest i with t[i] <= x < t[i+1], clamped for x == hi
    let mut span = DEGREE;
    while span < k - 1 && x >= t[span + 1] {
        span += 1;
    }

    // Cox-de Boor on the nonzero window (NURBS-book basis function scheme)
    let mut n = [0.0f64; DEGREE + 1];
    let mut left = [0.0f64; DEGREE + 1];
    let mut right = [0.0f64; DEGREE + 1];
    n[0] = 1.0;
    for j in 1..=DEGREE {
        left[j] = x - t[span + 1 - j];
        right[j] = t[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom != 0.0 { n[r] / denom } else { 0.0 };
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }

    let mut row = vec![0.0; k];
    for (j, &v) in n.iter().enumerate() {
        row[span - DEGREE + j] = v;
    }
    row
}

/// n x k matrix of basis values over a point vector.
pub fn eval_basis(kv: &KnotVector, xs: &[f64]) -> DMatrix<f64> {
    let k = kv.n_basis();
    let mut b = DMatrix::zeros(xs.len(), k);
    for (i, &x) in xs.iter().enumerate() {
        for (j, v) in basis_row(kv, x).into_iter().enumerate() {
            b[(i, j)] = v;
        }
    }
    b
}

/// Greville abscissae of the clamped cubic basis: the coefficient of a
/// linear function a + b·x at index j is exactly a + b·greville[j].
pub fn greville(kv: &KnotVector) -> Vec<f64> {
    let t = kv.full();
    (0..kv.n_basis())
        .map(|j| (t[j + 1] + t[j + 2] + t[j + 3]) / 3.0)
        .collect()
}

/// Second-order difference penalty S = DᵀD of size k x k. The rows of D are
/// second divided differences of the coefficients at the Greville abscissae
/// (scaled so that uniformly spaced abscissae give the plain 1, -2, 1
/// stencil), which makes the null space exactly the linear functions of x
/// even when the quantile knots are unevenly spaced.
pub fn penalty_matrix(kv: &KnotVector) -> Result<PenaltyMatrix> {
    let k = kv.n_basis();
    if k < 4 {
        return Err(Error::Basis(format!("penalty needs k >= 4, got {k}")));
    }
    let xi = greville(kv);
    let mean_h = (xi[k - 1] - xi[0]) / (k - 1) as f64;
    if mean_h <= 0.0 {
        return Err(Error::Basis("degenerate Greville abscissae".into()));
    }
    let scale = 2.0 * mean_h * mean_h;
    let mut d = DMatrix::zeros(k - 2, k);
    for i in 0..k - 2 {
        let a = xi[i + 1] - xi[i];
        let b = xi[i + 2] - xi[i + 1];
        if a <= 0.0 || b <= 0.0 {
            return Err(Error::Basis("non-increasing Greville abscissae".into()));
        }
        d[(i, i)] = scale / (a * (a + b));
        d[(i, i + 1)] = -scale / (a * b);
        d[(i, i + 2)] = scale / (b * (a + b));
    }
    Ok(PenaltyMatrix(d.transpose() * d))
}

/// Reparameterize a raw basis onto the subspace orthogonal to the constant
/// function over the construction data (sum-to-zero constraint), dropping
/// one coefficient dimension. The penalty is transformed consistently and
/// the k x (k-1) transform is kept for later basis evaluations.
pub fn center_smooth(
    feature: &str,
    knots: KnotVector,
    basis: DMatrix<f64>,
    penalty: &PenaltyMatrix,
) -> Result<SmoothDesign> {
    let k = basis.ncols();
    if k < 2 {
        return Err(Error::Basis("centering needs at least 2 basis columns".into()));
    }
    // constraint row c = 1ᵀB; null-space basis Z from a Householder step
    let c = DVector::from_iterator(k, basis.column_iter().map(|col| col.sum()));
    let norm = c.norm();
    if norm == 0.0 {
        return Err(Error::Basis("degenerate centering constraint".into()));
    }
    // Householder vector mapping c to ||c|| e1; Z = trailing k-1 columns of H
    let mut v = c.clone();
    v[0] += if c[0] >= 0.0 { norm } else { -norm };
    let vtv = v.dot(&v);
    let mut h = DMatrix::identity(k, k);
    if vtv > 0.0 {
        h -= (&v * v.transpose()) * (2.0 / vtv);
    }
    let z = h.columns(1, k - 1).into_owned();

    let centered = &basis * &z;
    let reduced = z.transpose() * &penalty.0 * &z;
    // symmetrize against rounding
    let reduced = (&reduced + reduced.transpose()) * 0.5;

    Ok(SmoothDesign {
        feature: feature.to_string(),
        knots,
        basis: centered,
        penalty: reduced,
        transform: z,
    })
}

/// Build the centered design for one continuous feature.
pub fn build_smooth(feature: &str, values: &[f64], k: usize) -> Result<SmoothDesign> {
    let knots = make_knots(values, k)?;
    let basis = eval_basis(&knots, values);
    let penalty = penalty_matrix(&knots)?;
    center_smooth(feature, knots, basis, &penalty)
}

impl SmoothDesign {
    /// Centered basis rows for new inputs (out-of-range x clamped).
    pub fn eval(&self, xs: &[f64]) -> DMatrix<f64> {
        eval_basis(&self.knots, xs) * &self.transform
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;

    /// Textbook Cox-de Boor recursion, written independently of the
    /// windowed implementation above.
    fn naive_bspline(t: &[f64], i: usize, p: usize, x: f64, hi: f64) -> f64 {
        if p == 0 {
            let in_span = t[i] <= x && x < t[i + 1];
            // right-closed at the last boundary
            let at_end = x == hi && t[i] < t[i + 1] && t[i + 1] == hi;
            return if in_span || at_end { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        if t[i + p] > t[i] {
            v += (x - t[i]) / (t[i + p] - t[i]) * naive_bspline(t, i, p - 1, x, hi);
        }
        if t[i + p + 1] > t[i + 1] {
            v += (t[i + p + 1] - x) / (t[i + p + 1] - t[i + 1])
                * naive_bspline(t, i + 1, p - 1, x, hi);
        }
        v
    }

    fn uniform_knots() -> KnotVector {
        make_knots(
            &(0..=100).map(|i| i as f64 / 100.0).collect::<Vec<_>>(),
            10,
        )
        .unwrap()
    }

    #[test]
    fn knots_at_quantiles_of_uniform_values() {
        let kv = uniform_knots();
        assert_eq!(kv.interior.len(), 6);
        assert_eq!(kv.n_basis(), 10);
        for (i, &t) in kv.interior.iter().enumerate() {
            let expect = (i + 1) as f64 / 7.0;
            assert_abs_diff_eq!(t, expect, epsilon = 0.02);
        }
        assert_eq!(kv.boundary, (0.0, 1.0));
    }

    #[test]
    fn too_few_distinct_values_fails() {
        assert!(matches!(
            make_knots(&[1.0, 2.0, 3.0, 1.0, 2.0], 10).unwrap_err(),
            Error::Basis(_)
        ));
    }

    #[test]
    fn duplicate_heavy_values_reduce_k() {
        let mut vals = vec![0.0; 50];
        vals.extend([1.0, 2.0, 3.0, 4.0, 5.0]);
        let kv = make_knots(&vals, 12).unwrap();
        assert!(kv.n_basis() <= 6);
        assert!(kv.interior.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn basis_matches_naive_recursion() {
        let kv = uniform_knots();
        let t = kv.full();
        let k = kv.n_basis();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let x: f64 = rng.gen_range(0.0..=1.0);
            let row = basis_row(&kv, x);
            for i in 0..k {
                let expect = naive_bspline(&t, i, DEGREE, x, kv.boundary.1);
                assert_abs_diff_eq!(row[i], expect, epsilon = 1e-10);
            }
        }
        // boundary points too
        for x in [0.0, 1.0] {
            let row = basis_row(&kv, x);
            for i in 0..k {
                let expect = naive_bspline(&t, i, DEGREE, x, kv.boundary.1);
                assert_abs_diff_eq!(row[i], expect, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn basis_local_support() {
        let kv = uniform_knots();
        for x in [0.0, 0.13, 0.5, 0.77, 1.0] {
            let nz = basis_row(&kv, x).iter().filter(|v| **v != 0.0).count();
            assert!(nz <= DEGREE + 1, "x={x} has {nz} nonzeros");
        }
        // boundary knot: a single chain of <= 4 entries
        let row = basis_row(&kv, 0.0);
        assert_abs_diff_eq!(row[0], 1.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn partition_of_unity(x in -0.5f64..1.5) {
            let kv = uniform_knots();
            let sum: f64 = basis_row(&kv, x).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn penalty_rank_and_symmetry() {
        let kv = make_knots(&[0.0, 0.3, 0.7, 1.0], 4).unwrap();
        let s = penalty_matrix(&kv).unwrap().0;
        assert_eq!(s, s.transpose());
        let rank = s.clone().svd(true, true).rank(1e-10);
        assert_eq!(rank, 2);
    }

    #[test]
    fn penalty_quadratic_form_is_sum_of_squared_second_differences() {
        // oracle: scaled second divided differences at the Greville points
        let kv = uniform_knots();
        let k = kv.n_basis();
        let s = penalty_matrix(&kv).unwrap().0;
        let xi = greville(&kv);
        let scale = 2.0 * ((xi[k - 1] - xi[0]) / (k - 1) as f64).powi(2);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let x: Vec<f64> = (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let xv = DVector::from_vec(x.clone());
            let quad = (xv.transpose() * &s * &xv)[(0, 0)];
            let direct: f64 = (0..k - 2)
                .map(|i| {
                    let d1 = (x[i + 1] - x[i]) / (xi[i + 1] - xi[i]);
                    let d2 = (x[i + 2] - x[i + 1]) / (xi[i + 2] - xi[i + 1]);
                    (scale * (d2 - d1) / (xi[i + 2] - xi[i])).powi(2)
                })
                .sum();
            assert_abs_diff_eq!(quad, direct, epsilon = 1e-9);
        }
    }

    #[test]
    fn linear_coefficients_incur_zero_penalty() {
        // coefficients of a + b x are linear in the Greville abscissae and
        // must lie in the penalty null space for arbitrary quantile knots
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let xs: Vec<f64> = (0..300).map(|_| rng.gen_range(-1.0..1.0f64).powi(3)).collect();
        let kv = make_knots(&xs, 10).unwrap();
        let s = penalty_matrix(&kv).unwrap().0;
        let beta = DVector::from_vec(greville(&kv).iter().map(|&g| 0.7 - 1.3 * g).collect());
        let q = (beta.transpose() * &s * &beta)[(0, 0)];
        assert_abs_diff_eq!(q, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn penalty_is_psd() {
        let kv = uniform_knots();
        let k = kv.n_basis();
        let s = penalty_matrix(&kv).unwrap().0;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let x = DVector::from_iterator(k, (0..k).map(|_| rng.gen_range(-1.0..1.0f64)));
            let q = (x.transpose() * &s * &x)[(0, 0)];
            assert!(q >= -1e-9);
        }
    }

    #[test]
    fn centered_columns_have_zero_mean() {
        let xs: Vec<f64> = (0..200).map(|i| (i as f64 / 199.0).powi(2)).collect();
        let sd = build_smooth("x", &xs, 10).unwrap();
        for col in sd.basis.column_iter() {
            let m = col.sum() / col.len() as f64;
            assert_abs_diff_eq!(m, 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn zero_coefficients_give_zero_shape() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
        let sd = build_smooth("x", &xs, 8).unwrap();
        let beta = DVector::zeros(sd.basis.ncols());
        let shape = sd.eval(&xs) * beta;
        assert!(shape.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reduced_penalty_stays_psd() {
        let xs: Vec<f64> = (0..300).map(|i| (i as f64 * 0.7).sin()).collect();
        let sd = build_smooth("x", &xs, 12).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let k = sd.penalty.ncols();
        for _ in 0..200 {
            let x = DVector::from_iterator(k, (0..k).map(|_| rng.gen_range(-1.0..1.0f64)));
            let q = (x.transpose() * &sd.penalty * &x)[(0, 0)];
            assert!(q >= -1e-9);
        }
    }
}
