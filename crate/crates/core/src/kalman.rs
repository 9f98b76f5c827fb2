//! Controllability structure of the pair (A, B): block decomposition,
//! intrinsic scaling matrices and the resolvent of time-dependent drifts.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};

/// Default relative singular-value threshold for rank decisions.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Drift matrix `a` (N x N) and noise embedding `b` (N x d).
#[derive(Debug, Clone, PartialEq)]
pub struct SystemPair {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl SystemPair {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::BadParam(format!(
                "drift matrix must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 || b.ncols() > b.nrows() {
            return Err(Error::BadParam(format!(
                "embedding must be N x d with 1 <= d <= N, got {}x{} for N = {}",
                b.nrows(),
                b.ncols(),
                a.nrows()
            )));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::BadParam("non-finite matrix entry".into()));
        }
        Ok(Self { a, b })
    }

    /// Builds the pair from row-major nested slices.
    pub fn from_rows(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Self> {
        Self::new(matrix_from_rows(a)?, matrix_from_rows(b)?)
    }

    /// The classical Kolmogorov pair: A = [[0,0],[1,0]], B = (1,0)^T.
    pub fn kolmogorov() -> Self {
        Self {
            a: DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]),
            b: DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn noise_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Rank of the controllability matrix [B, AB, ..., A^{N-1}B].
    pub fn kalman_rank(&self, tol: f64) -> usize {
        let n = self.state_dim();
        let d = self.noise_dim();
        let mut k = DMatrix::zeros(n, n * d);
        let mut blk = self.b.clone();
        for j in 0..n {
            k.view_mut((0, j * d), (n, d)).copy_from(&blk);
            blk = &self.a * blk;
        }
        numerical_rank(&k, tol)
    }
}

/// Row-major nested vectors to a matrix.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    if nr == 0 {
        return Err(Error::BadParam("empty matrix".into()));
    }
    let nc = rows[0].len();
    if nc == 0 || rows.iter().any(|r| r.len() != nc) {
        return Err(Error::BadParam("ragged or empty matrix rows".into()));
    }
    Ok(DMatrix::from_row_iterator(nr, nc, rows.iter().flatten().copied()))
}

/// Number of singular values above `tol * sigma_max`.
pub fn numerical_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().fold(0.0f64, |a, &b| a.max(b));
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * smax).count()
}

/// Block structure of a controllable pair in an orthonormal adapted basis.
#[derive(Debug, Clone, Serialize)]
pub struct KalmanDecomposition {
    pub n_blocks: usize,
    pub dims: Vec<usize>,
    /// Orthonormal columns, grouped by block.
    #[serde(serialize_with = "ser_matrix")]
    pub basis: DMatrix<f64>,
    #[serde(serialize_with = "ser_matrices")]
    pub projections: Vec<DMatrix<f64>>,
    /// Column indices of each block in the canonical basis.
    pub index_sets: Vec<Vec<usize>>,
    #[serde(serialize_with = "ser_matrix")]
    pub a_canon: DMatrix<f64>,
    #[serde(serialize_with = "ser_matrix")]
    pub b_canon: DMatrix<f64>,
    /// Condition number of each sub-diagonal block A_{h+1,h}.
    pub subdiag_condition: Vec<f64>,
    /// Cumulative dimension of V_1, V_2, ...
    pub rank_chain: Vec<usize>,
    pub tol: f64,
}

fn ser_matrix<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for i in 0..m.nrows() {
        let row: Vec<f64> = m.row(i).iter().copied().collect();
        seq.serialize_element(&row)?;
    }
    seq.end()
}

fn ser_matrices<S: serde::Serializer>(
    ms: &[DMatrix<f64>],
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<Vec<f64>>> = ms.iter().map(matrix_rows).collect();
    serde::Serialize::serialize(&rows, s)
}

/// Matrix as row-major nested vectors.
pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl KalmanDecomposition {
    pub fn state_dim(&self) -> usize {
        self.basis.nrows()
    }

    /// Block index (0-based) of canonical coordinate `i`.
    pub fn block_of(&self, i: usize) -> usize {
        self.index_sets
            .iter()
            .position(|s| s.contains(&i))
            .expect("coordinate outside decomposition")
    }

    /// Columns of the canonical basis spanning block h (0-based).
    pub fn block_basis(&self, h: usize) -> DMatrix<f64> {
        let start = self.index_sets[h][0];
        self.basis.columns(start, self.dims[h]).into_owned()
    }

    /// Intrinsic exponent 1/(1 + alpha*h) of block h (0-based).
    pub fn block_exponent(&self, h: usize, alpha: f64) -> f64 {
        1.0 / (1.0 + alpha * h as f64)
    }
}

/// Builds the block decomposition by successive SVDs of the new directions
/// `A * U_{h-1}` projected off the span already reached.
pub fn compute_decomposition(sys: &SystemPair, tol: f64) -> Result<KalmanDecomposition> {
    if !(tol > 0.0) {
        return Err(Error::BadParam(format!("rank tolerance must be positive, got {tol}")));
    }
    let n = sys.state_dim();
    let d = sys.noise_dim();
    let rb = numerical_rank(&sys.b, tol);
    if rb < d {
        return Err(Error::RankDeficientB { rank: rb, cols: d });
    }

    let mut blocks: Vec<DMatrix<f64>> = Vec::new();
    let mut reached = DMatrix::<f64>::zeros(n, 0);
    let mut batch = sys.b.clone();
    let mut rank_chain = Vec::new();
    loop {
        let scale = batch.clone().svd(false, false).singular_values.max();
        let proj = if reached.ncols() > 0 {
            &batch - &reached * (reached.transpose() * &batch)
        } else {
            batch.clone()
        };
        let svd = proj.svd(true, false);
        let u = svd.u.expect("left singular vectors requested");
        let new_cols: Vec<usize> = svd
            .singular_values
            .iter()
            .enumerate()
            .filter(|(_, &s)| scale > 0.0 && s > tol * scale)
            .map(|(i, _)| i)
            .collect();
        if new_cols.is_empty() {
            break;
        }
        let mut blk = DMatrix::zeros(n, new_cols.len());
        for (j, &c) in new_cols.iter().enumerate() {
            let mut col = u.column(c).into_owned();
            // Re-orthogonalize against the reached span to suppress drift.
            if reached.ncols() > 0 {
                col -= &reached * (reached.transpose() * &col);
            }
            for k in 0..j {
                let prev = blk.column(k).into_owned();
                col -= &prev * prev.dot(&col);
            }
            col /= col.norm();
            let (imax, _) = col.iter().enumerate().fold((0, 0.0), |acc, (i, v)| {
                if v.abs() > acc.1 + 1e-12 {
                    (i, v.abs())
                } else {
                    acc
                }
            });
            if col[imax] < 0.0 {
                col = -col;
            }
            blk.set_column(j, &col);
        }
        let total = reached.ncols() + blk.ncols();
        let mut next = DMatrix::zeros(n, total);
        next.view_mut((0, 0), (n, reached.ncols())).copy_from(&reached);
        next.view_mut((0, reached.ncols()), (n, blk.ncols())).copy_from(&blk);
        reached = next;
        rank_chain.push(total);
        batch = &sys.a * &blk;
        blocks.push(blk);
        if total == n {
            break;
        }
    }
    if reached.ncols() < n {
        return Err(Error::KalmanFailure { rank: reached.ncols(), dim: n });
    }

    let dims: Vec<usize> = blocks.iter().map(|b| b.ncols()).collect();
    let mut index_sets: Vec<Vec<usize>> = Vec::new();
    let mut projections = Vec::new();
    let mut start = 0;
    for (blk, &dh) in blocks.iter().zip(&dims) {
        index_sets.push((start..start + dh).collect());
        projections.push(blk * blk.transpose());
        start += dh;
    }
    let basis = reached;
    let a_canon = basis.transpose() * &sys.a * &basis;
    let b_canon = basis.transpose() * &sys.b;
    let mut subdiag_condition = Vec::new();
    for h in 0..dims.len().saturating_sub(1) {
        let r0 = index_sets[h + 1][0];
        let c0 = index_sets[h][0];
        let sub = a_canon.view((r0, c0), (dims[h + 1], dims[h])).into_owned();
        let sv = sub.svd(false, false).singular_values;
        let smax = sv.max();
        let smin = sv.iter().take(dims[h + 1]).fold(f64::INFINITY, |a, &b| a.min(b));
        subdiag_condition.push(if smin > 0.0 { smax / smin } else { f64::INFINITY });
    }
    Ok(KalmanDecomposition {
        n_blocks: dims.len(),
        dims,
        basis,
        projections,
        index_sets,
        a_canon,
        b_canon,
        subdiag_condition,
        rank_chain,
        tol,
    })
}

/// Block-diagonal dilation with block h (0-based) scaled by t^h.
pub fn scaling_matrix(dec: &KalmanDecomposition, t: f64) -> DMatrix<f64> {
    let n = dec.state_dim();
    let mut m = DMatrix::zeros(n, n);
    for (h, set) in dec.index_sets.iter().enumerate() {
        let s = if h == 0 { 1.0 } else { t.powi(h as i32) };
        for &i in set {
            m[(i, i)] = s;
        }
    }
    m
}

/// R_t with exp(t A) M_t = M_t R_t in canonical coordinates; R_0 = Identity.
///
/// Computed as the exponential of the rescaled matrix with block (l, h)
/// weighted by t^{1+h-l}, which stays bounded as t -> 0.
pub fn reduced_resolvent(dec: &KalmanDecomposition, t: f64) -> DMatrix<f64> {
    let n = dec.state_dim();
    if t == 0.0 {
        return DMatrix::identity(n, n);
    }
    let mut scaled = DMatrix::zeros(n, n);
    for (l, rows) in dec.index_sets.iter().enumerate() {
        for (h, cols) in dec.index_sets.iter().enumerate() {
            let p = 1 + h as i32 - l as i32;
            if p < 0 {
                // Structurally zero below the sub-diagonal.
                continue;
            }
            let w = t.powi(p);
            for &i in rows {
                for &j in cols {
                    scaled[(i, j)] = w * dec.a_canon[(i, j)];
                }
            }
        }
    }
    scaled.exp()
}

/// Resolvent of d/dt R = A(t) R, R(s) = I, by fixed-step RK4.
pub fn resolvent_ode<F>(a_fn: F, s: f64, t: f64, step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(f64) -> DMatrix<f64>,
{
    let a0 = a_fn(s);
    let n = a0.nrows();
    if s == t {
        return Ok(DMatrix::identity(n, n));
    }
    let len = (t - s).abs();
    if !(step > 0.0) || step > len {
        return Err(Error::StepTooLarge { step, len });
    }
    let steps = (len / step).ceil() as usize;
    let h = (t - s) / steps as f64;
    let mut r = DMatrix::identity(n, n);
    let mut a_lo = a0;
    for k in 0..steps {
        let u = s + k as f64 * h;
        let a_mid = a_fn(u + 0.5 * h);
        let a_hi = a_fn(u + h);
        let k1 = &a_lo * &r;
        let k2 = &a_mid * (&r + &k1 * (0.5 * h));
        let k3 = &a_mid * (&r + &k2 * (0.5 * h));
        let k4 = &a_hi * (&r + &k3 * h);
        r += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        a_lo = a_hi;
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent exponential: Taylor series with scaling and squaring.
    fn expm_oracle(a: &DMatrix<f64>) -> DMatrix<f64> {
        let n = a.nrows();
        let norm = a.iter().map(|v| v.abs()).sum::<f64>();
        let mut sq = 0;
        while norm / 2f64.powi(sq) > 0.25 {
            sq += 1;
        }
        let x = a / 2f64.powi(sq);
        let mut term = DMatrix::identity(n, n);
        let mut sum = DMatrix::identity(n, n);
        for k in 1..30 {
            term = &term * &x / k as f64;
            sum += &term;
        }
        for _ in 0..sq {
            sum = &sum * &sum;
        }
        sum
    }

    fn gram_schmidt(cols: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = Vec::new();
        for c in cols {
            let mut v = c.clone();
            for q in &out {
                let d: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= d * qi;
                }
            }
            let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if nrm > 1e-12 {
                out.push(v.iter().map(|x| x / nrm).collect());
            }
        }
        out
    }

    #[test]
    fn nondegenerate_case_has_one_block() {
        let sys = SystemPair::new(DMatrix::zeros(3, 3), DMatrix::identity(3, 3)).unwrap();
        let dec = compute_decomposition(&sys, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(dec.n_blocks, 1);
        assert!((&dec.projections[0] - DMatrix::identity(3, 3)).norm() < 1e-14);
    }

    #[test]
    fn kolmogorov_pair_structure() {
        let dec = compute_decomposition(&SystemPair::kolmogorov(), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(dec.n_blocks, 2);
        assert_eq!(dec.dims, vec![1, 1]);
        let e1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let e2 = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        assert!((&dec.projections[0] - e1).norm() < 1e-14);
        assert!((&dec.projections[1] - e2).norm() < 1e-14);
        assert!((dec.subdiag_condition[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gram_schmidt_oracle_for_non_nilpotent_drift() {
        let sys = SystemPair::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]], &[vec![1.0], vec![0.0]])
            .unwrap();
        let dec = compute_decomposition(&sys, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(dec.n_blocks, 2);
        let q = gram_schmidt(&[vec![1.0, 0.0], vec![1.0, 1.0]]);
        let q2 = DMatrix::from_column_slice(2, 1, &q[1]);
        let e2 = &q2 * q2.transpose();
        assert!((&dec.projections[1] - e2).norm() < 1e-12);
        let q1 = DMatrix::from_column_slice(2, 1, &q[0]);
        assert!((&dec.projections[0] - &q1 * q1.transpose()).norm() < 1e-12);
    }

    #[test]
    fn uncontrollable_pair_fails() {
        let sys = SystemPair::new(DMatrix::zeros(2, 2), DMatrix::from_column_slice(2, 1, &[1.0, 0.0]))
            .unwrap();
        match compute_decomposition(&sys, DEFAULT_RANK_TOL) {
            Err(Error::KalmanFailure { rank: 1, dim: 2 }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let sys = SystemPair::new(
            DMatrix::zeros(2, 2),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
        )
        .unwrap();
        assert!(matches!(
            compute_decomposition(&sys, DEFAULT_RANK_TOL),
            Err(Error::RankDeficientB { rank: 1, cols: 2 })
        ));
    }

    #[test]
    fn scaling_matrix_examples() {
        let dec = compute_decomposition(&SystemPair::kolmogorov(), DEFAULT_RANK_TOL).unwrap();
        let m = scaling_matrix(&dec, 0.5);
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.5]));
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let b = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let dec3 = compute_decomposition(&SystemPair::new(a, b).unwrap(), 1e-10).unwrap();
        assert_eq!(dec3.n_blocks, 3);
        assert_eq!(scaling_matrix(&dec3, 0.0), DMatrix::from_diagonal_element(3, 3, 0.0) + {
            let mut e = DMatrix::zeros(3, 3);
            e[(0, 0)] = 1.0;
            e
        });
    }

    #[test]
    fn kolmogorov_reduced_resolvent_is_constant() {
        let dec = compute_decomposition(&SystemPair::kolmogorov(), DEFAULT_RANK_TOL).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]);
        for t in [1e-8, 0.01, 0.3, 1.0] {
            assert!((reduced_resolvent(&dec, t) - &want).norm() < 1e-14);
        }
        assert_eq!(reduced_resolvent(&dec, 0.0), DMatrix::identity(2, 2));
    }

    #[test]
    fn reduced_resolvent_identity_on_three_blocks() {
        let a = DMatrix::from_row_slice(3, 3, &[0.3, -0.2, 0.1, 1.0, -0.5, 0.4, 0.0, 2.0, 0.7]);
        let b = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let dec = compute_decomposition(&SystemPair::new(a, b).unwrap(), 1e-10).unwrap();
        assert_eq!(dec.n_blocks, 3);
        for k in 0..50 {
            let t = 10f64.powf(-6.0 + 6.0 * k as f64 / 49.0);
            let m = scaling_matrix(&dec, t);
            let lhs = expm_oracle(&(&dec.a_canon * t)) * &m;
            let rhs = &m * reduced_resolvent(&dec, t);
            assert!((lhs - rhs).norm() < 1e-10, "t={t}");
        }
    }

    #[test]
    fn block_bounds_scale_with_time() {
        let dec = compute_decomposition(&SystemPair::kolmogorov(), DEFAULT_RANK_TOL).unwrap();
        let ts: Vec<f64> = (0..10).map(|k| 10f64.powf(-4.0 + 0.4 * k as f64)).collect();
        let vals: Vec<f64> = ts
            .iter()
            .map(|&t| (&dec.projections[1] * (&dec.a_canon * t).exp() * &dec.projections[0]).norm())
            .collect();
        let slope = (vals[9].ln() - vals[0].ln()) / (ts[9].ln() - ts[0].ln());
        assert!((slope - 1.0).abs() < 1e-9);
    }

    #[test]
    fn resolvent_ode_examples() {
        let a = DMatrix::from_row_slice(2, 2, &[-0.4, 1.0, 0.3, 0.2]);
        let r = resolvent_ode(|_| a.clone(), 0.0, 1.0, 1e-3).unwrap();
        assert!((r - expm_oracle(&a)).norm() < 1e-8);
        let r = resolvent_ode(|u| &a * u, 0.0, 0.8, 1e-3).unwrap();
        assert!((r - expm_oracle(&(&a * 0.32))).norm() < 1e-8);
        assert_eq!(resolvent_ode(|_| a.clone(), 0.5, 0.5, 1.0).unwrap(), DMatrix::identity(2, 2));
        assert!(matches!(
            resolvent_ode(|_| a.clone(), 0.0, 0.1, 0.5),
            Err(Error::StepTooLarge { .. })
        ));
        // Backward in time.
        let r = resolvent_ode(|_| a.clone(), 1.0, 0.0, 1e-3).unwrap();
        assert!((r - expm_oracle(&(-&a))).norm() < 1e-8);
    }

    fn random_orthogonal(seed: u64, n: usize) -> DMatrix<f64> {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let m = DMatrix::from_fn(n, n, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        });
        m.qr().q()
    }

    proptest! {
        #[test]
        fn projections_partition_identity(seed in 0u64..10_000, coupling in 0.2f64..3.0) {
            let a = DMatrix::from_row_slice(3, 3, &[0.1, 0.5, -0.3, coupling, 0.2, 0.1, 0.0, 1.5, -0.4]);
            let b = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
            let q = random_orthogonal(seed, 3);
            let sys = SystemPair::new(&q * a * q.transpose(), &q * b).unwrap();
            let dec = compute_decomposition(&sys, 1e-10).unwrap();
            prop_assert_eq!(dec.n_blocks, 3);
            prop_assert_eq!(dec.dims.clone(), vec![1, 1, 1]);
            let sum = dec.projections.iter().fold(DMatrix::zeros(3, 3), |acc, p| acc + p);
            prop_assert!((sum - DMatrix::identity(3, 3)).norm() < 1e-10);
            for (h, eh) in dec.projections.iter().enumerate() {
                prop_assert!((eh * eh - eh).norm() < 1e-10);
                prop_assert!((eh - eh.transpose()).norm() < 1e-12);
                for (k, ek) in dec.projections.iter().enumerate() {
                    if h != k {
                        prop_assert!((eh * ek).norm() < 1e-10);
                    }
                }
            }
            // Zero blocks strictly below the sub-diagonal.
            prop_assert!(dec.a_canon[(2, 0)].abs() < 1e-10);
            prop_assert!(dec.b_canon[(1, 0)].abs() < 1e-10 && dec.b_canon[(2, 0)].abs() < 1e-10);
        }

        #[test]
        fn block_structure_is_basis_stable(seed in 0u64..10_000) {
            // N = 3, d = 2: blocks of sizes 2 and 1.
            let a = DMatrix::from_row_slice(3, 3, &[0.0, 0.1, 0.0, 0.2, 0.0, 0.0, 1.0, 0.5, 0.3]);
            let b = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
            let q = random_orthogonal(seed, 3);
            let dec0 = compute_decomposition(&SystemPair::new(a.clone(), b.clone()).unwrap(), 1e-10).unwrap();
            let dec = compute_decomposition(&SystemPair::new(&q * a * q.transpose(), &q * b).unwrap(), 1e-10).unwrap();
            prop_assert_eq!(dec0.dims.clone(), vec![2, 1]);
            prop_assert_eq!(dec.dims, dec0.dims);
        }
    }
}
