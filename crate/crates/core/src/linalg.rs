//! Minimal dense linear algebra tuned for the sizes this crate works with:
//! covariance matrices from a few dozen rows (local neighborhoods) up to a
//! few thousand (global fits on desk-scale grids).
//!
//! Everything here is serial and allocation-conscious. The blocked routines
//! exist because the global-GP likelihood gradient needs a Cholesky
//! factorization, a triangular inverse, and a symmetric product per
//! optimizer step, and a naive triple loop leaves a ~10x factor on the
//! table. Parallelism lives at the batch-prediction level, not here, which
//! keeps every entry of every result a pure function of the inputs.

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Block edge for the cache-blocked routines.
const NB: usize = 64;

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        let mut data = Vec::with_capacity(r * c);
        for row in &rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Mat::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Removes the strict upper triangle (sets it to zero). The blocked
    /// factorization leaves garbage there; tests like a clean matrix.
    pub fn zero_upper(&mut self) {
        for i in 0..self.rows {
            for j in i + 1..self.cols {
                self.data[i * self.cols + j] = 0.0;
            }
        }
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }
}

/// Dot product with fixed 8-lane association so results never depend on
/// optimization or call context.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    const W: usize = 8;
    let mut lanes = [0.0f64; W];
    let chunks = a.len() / W;
    for c in 0..chunks {
        let ao = &a[c * W..c * W + W];
        let bo = &b[c * W..c * W + W];
        for l in 0..W {
            lanes[l] += ao[l] * bo[l];
        }
    }
    let mut tail = 0.0;
    for i in chunks * W..a.len() {
        tail += a[i] * b[i];
    }
    let mut acc = tail;
    for l in 0..W {
        acc += lanes[l];
    }
    acc
}

/// c[i] += s * a[i]
#[inline]
fn axpy(c: &mut [f64], a: &[f64], s: f64) {
    debug_assert_eq!(c.len(), a.len());
    for (ci, ai) in c.iter_mut().zip(a) {
        *ci += s * *ai;
    }
}

/// Fixed-width axpy; the compile-time length keeps the accumulator resident
/// in vector registers across the k loop of the block kernels.
#[inline(always)]
fn axpy_nb(c: &mut [f64; NB], a: &[f64; NB], s: f64) {
    for j in 0..NB {
        c[j] += s * a[j];
    }
}

/// Rectangular product accumulation on raw row-major storage:
///
/// `c[i*ldc + j] += sign * sum_k a[i*lda + k] * b[k*ldb + j]`
///
/// for `i < m`, `j < n`, `k < kk`. `b` is the already-transposed operand
/// when a `A * B^T` product is wanted. The i-row of the destination is
/// staged in a stack buffer so the inner loop runs width-`n` fused
/// multiply-adds against it.
fn gemm_acc(
    c: &mut [f64],
    ldc: usize,
    a: &[f64],
    lda: usize,
    b: &[f64],
    ldb: usize,
    m: usize,
    n: usize,
    kk: usize,
    sign: f64,
) {
    debug_assert!(n <= NB);
    if n == NB {
        let mut buf = [0.0f64; NB];
        for i in 0..m {
            let arow = &a[i * lda..i * lda + kk];
            buf.fill(0.0);
            for (k, &aik) in arow.iter().enumerate() {
                let brow: &[f64; NB] = b[k * ldb..k * ldb + NB].try_into().unwrap();
                axpy_nb(&mut buf, brow, aik);
            }
            let crow = &mut c[i * ldc..i * ldc + NB];
            for j in 0..NB {
                crow[j] += sign * buf[j];
            }
        }
        return;
    }
    let mut buf = [0.0f64; NB];
    for i in 0..m {
        let arow = &a[i * lda..i * lda + kk];
        let buf = &mut buf[..n];
        buf.fill(0.0);
        for (k, &aik) in arow.iter().enumerate() {
            let brow = &b[k * ldb..k * ldb + n];
            axpy(buf, brow, aik);
        }
        let crow = &mut c[i * ldc..i * ldc + n];
        for j in 0..n {
            crow[j] += sign * buf[j];
        }
    }
}

/// In-place blocked lower Cholesky. Only the lower triangle of the result
/// is meaningful. Returns the failing pivot index if the matrix is not
/// positive definite.
pub fn cholesky_in_place(m: &mut Mat) -> Result<(), usize> {
    assert_eq!(m.rows, m.cols, "cholesky needs a square matrix");
    let n = m.rows;
    let ld = n;
    if n <= NB {
        return potf2_view(&mut m.data, 0, ld.max(1), n);
    }
    let mut scratch = vec![0.0f64; NB * NB];
    let mut kb = 0;
    while kb < n {
        let k = NB.min(n - kb);
        potf2_view(&mut m.data, kb * ld + kb, ld, k).map_err(|p| kb + p)?;
        // panel solve: row i gets a[i, kb..kb+k] := a[i, ..] L_kk^{-T}
        for i in kb + k..n {
            for c in 0..k {
                let s = {
                    let ri = &m.data[i * ld + kb..i * ld + kb + c];
                    let rc = &m.data[(kb + c) * ld + kb..(kb + c) * ld + kb + c];
                    dot(ri, rc)
                };
                let d = m.data[(kb + c) * ld + kb + c];
                m.data[i * ld + kb + c] = (m.data[i * ld + kb + c] - s) / d;
            }
        }
        // trailing update: A[ib.., jb..] -= P_ib P_jb^T for kb+k <= jb <= ib
        let mut jb = kb + k;
        while jb < n {
            let nj = NB.min(n - jb);
            // transpose panel rows jb..jb+nj, cols kb..kb+k into scratch (k x nj)
            for r in 0..nj {
                for c in 0..k {
                    scratch[c * NB + r] = m.data[(jb + r) * ld + kb + c];
                }
            }
            let mut ib = jb;
            while ib < n {
                let ni = NB.min(n - ib);
                gemm_acc_inplace(&mut m.data, ld, ib, jb, kb, ni, nj, k, &scratch, NB);
                ib += NB;
            }
            jb += NB;
        }
        kb += k;
    }
    Ok(())
}

/// potf2 on a sub-block starting at flat offset `off` with leading
/// dimension `ld`.
fn potf2_view(data: &mut [f64], off: usize, ld: usize, n: usize) -> Result<(), usize> {
    for j in 0..n {
        let rj = off + j * ld;
        let mut d = data[rj + j] - dot(&data[rj..rj + j], &data[rj..rj + j]);
        if !(d > 0.0) || !d.is_finite() {
            return Err(j);
        }
        d = d.sqrt();
        data[rj + j] = d;
        for i in j + 1..n {
            let ri = off + i * ld;
            let s = {
                let (x, y) = (&data[ri..ri + j], &data[rj..rj + j]);
                dot(x, y)
            };
            data[ri + j] = (data[ri + j] - s) / d;
        }
    }
    Ok(())
}

/// `C[ib..ib+ni, jb..jb+nj] -= A[ib..ib+ni, kb..kb+k] * S` where `S` is the
/// `k x nj` transposed panel in `scratch`.
#[allow(clippy::too_many_arguments)]
fn gemm_acc_inplace(
    data: &mut [f64],
    ld: usize,
    ib: usize,
    jb: usize,
    kb: usize,
    ni: usize,
    nj: usize,
    k: usize,
    scratch: &[f64],
    lds: usize,
) {
    if nj == NB {
        let mut buf = [0.0f64; NB];
        for i in 0..ni {
            let arow_off = (ib + i) * ld + kb;
            buf.fill(0.0);
            for c in 0..k {
                let aik = data[arow_off + c];
                let srow: &[f64; NB] = scratch[c * lds..c * lds + NB].try_into().unwrap();
                axpy_nb(&mut buf, srow, aik);
            }
            let crow = &mut data[(ib + i) * ld + jb..(ib + i) * ld + jb + NB];
            for j in 0..NB {
                crow[j] -= buf[j];
            }
        }
        return;
    }
    let mut buf = [0.0f64; NB];
    for i in 0..ni {
        let arow_off = (ib + i) * ld + kb;
        let buf = &mut buf[..nj];
        buf.fill(0.0);
        for c in 0..k {
            let aik = data[arow_off + c];
            let srow = &scratch[c * lds..c * lds + nj];
            axpy(buf, srow, aik);
        }
        let crow = &mut data[(ib + i) * ld + jb..(ib + i) * ld + jb + nj];
        for j in 0..nj {
            crow[j] -= buf[j];
        }
    }
}

/// Log-determinant of the matrix whose Cholesky factor (lower) is `l`.
pub fn logdet_from_chol(l: &Mat) -> f64 {
    let mut s = 0.0;
    for i in 0..l.rows {
        s += l.at(i, i).ln();
    }
    2.0 * s
}

/// Solves `L x = b` in place (forward substitution, `l` lower triangular).
pub fn solve_lower(l: &Mat, b: &mut [f64]) {
    let n = l.rows;
    assert_eq!(b.len(), n);
    for i in 0..n {
        let row = l.row(i);
        let s = dot(&row[..i], &b[..i]);
        b[i] = (b[i] - s) / row[i];
    }
}

/// Solves `L^T x = b` in place (back substitution) using only row accesses.
pub fn solve_lower_t(l: &Mat, b: &mut [f64]) {
    let n = l.rows;
    assert_eq!(b.len(), n);
    for j in (0..n).rev() {
        let row = l.row(j);
        let xj = b[j] / row[j];
        b[j] = xj;
        let (bh, _) = b.split_at_mut(j);
        axpy(bh, &row[..j], -xj);
    }
}

/// Solves `(L L^T) x = b` in place.
pub fn spd_solve(l: &Mat, b: &mut [f64]) {
    solve_lower(l, b);
    solve_lower_t(l, b);
}

/// Inverse of a lower-triangular matrix, blocked column recurrence.
pub fn invert_lower(l: &Mat) -> Mat {
    let n = l.rows;
    let nblocks = n.div_ceil(NB);
    let bstart = |b: usize| b * NB;
    let bsize = |b: usize| NB.min(n - b * NB);
    let mut x = Mat::zeros(n, n);

    // diagonal blocks: direct small triangular inversion
    for b in 0..nblocks {
        let (s0, sz) = (bstart(b), bsize(b));
        // forward-solve L_bb * X_bb = I column by column
        for col in 0..sz {
            let mut v = vec![0.0f64; sz];
            v[col] = 1.0;
            for i in col..sz {
                let mut s = v[i];
                for k in col..i {
                    s -= l.at(s0 + i, s0 + k) * v[k];
                }
                v[i] = s / l.at(s0 + i, s0 + i);
            }
            for i in col..sz {
                x.set(s0 + i, s0 + col, v[i]);
            }
        }
    }

    // off-diagonal blocks, column by column, top to bottom:
    // X[ib][jb] = -X[ib][ib] * sum_{kb in (jb..ib)} L[ib][kb] X[kb][jb]
    let mut s_buf = vec![0.0f64; NB * NB];
    let mut t_buf = vec![0.0f64; NB * NB];
    for jb in 0..nblocks {
        let (j0, nj) = (bstart(jb), bsize(jb));
        for ib in jb + 1..nblocks {
            let (i0, ni) = (bstart(ib), bsize(ib));
            s_buf[..ni * nj].fill(0.0);
            for kb in jb..ib {
                let (k0, nk) = (bstart(kb), bsize(kb));
                // S += L[i0.., k0..] * X[k0.., j0..]
                gemm_acc(
                    &mut s_buf,
                    nj,
                    &l.data[i0 * n + k0..],
                    n,
                    &x.data[k0 * n + j0..],
                    n,
                    ni,
                    nj,
                    nk,
                    1.0,
                );
            }
            // T = X[ib][ib] * S  (X diag block is lower triangular)
            t_buf[..ni * nj].fill(0.0);
            gemm_acc(
                &mut t_buf,
                nj,
                &x.data[i0 * n + i0..],
                n,
                &s_buf,
                nj,
                ni,
                nj,
                ni,
                1.0,
            );
            for r in 0..ni {
                for c in 0..nj {
                    x.data[(i0 + r) * n + j0 + c] = -t_buf[r * nj + c];
                }
            }
        }
    }
    x
}

/// Full symmetric inverse from a Cholesky factor: `Z = L^{-T} L^{-1}`.
pub fn spd_invert_from_chol(l: &Mat) -> Mat {
    let n = l.rows;
    let xinv = invert_lower(l);
    // Z_ij = sum_{k >= max(i,j)} X_ki X_kj: with W = X^T this is W X, and the
    // second operand is read straight out of X in row-major order.
    let w = xinv.transpose();
    let nblocks = n.div_ceil(NB);
    let bstart = |b: usize| b * NB;
    let bsize = |b: usize| NB.min(n - b * NB);
    let mut z = Mat::zeros(n, n);
    let mut acc = vec![0.0f64; NB * NB];
    // X columns j0..j0+nj packed contiguously so the k loop streams
    // sequentially instead of striding by the full row length
    let mut pack = vec![0.0f64; n * NB];
    for jb in 0..nblocks {
        let (j0, nj) = (bstart(jb), bsize(jb));
        let kp0 = bstart(jb);
        for k in kp0..n {
            pack[(k - kp0) * NB..(k - kp0) * NB + nj]
                .copy_from_slice(&xinv.data[k * n + j0..k * n + j0 + nj]);
        }
        for ib in jb..nblocks {
            let (i0, ni) = (bstart(ib), bsize(ib));
            // X_ki = 0 for k < i, so k starts at the ib block
            let k0 = bstart(ib);
            let nk = n - k0;
            acc[..ni * nj].fill(0.0);
            gemm_acc(
                &mut acc,
                nj,
                &w.data[i0 * n + k0..],
                n,
                &pack[(k0 - kp0) * NB..],
                NB,
                ni,
                nj,
                nk,
                1.0,
            );
            for r in 0..ni {
                for c in 0..nj {
                    let v = acc[r * nj + c];
                    z.data[(i0 + r) * n + j0 + c] = v;
                    z.data[(j0 + c) * n + i0 + r] = v;
                }
            }
        }
    }
    z
}

/// Lower-triangular factor stored packed (row i holds i+1 entries). This is
/// the representation behind incremental one-point extensions: growing by a
/// row appends exactly n+1 values and never moves existing ones.
#[derive(Debug, Clone)]
pub struct PackedLower {
    n: usize,
    data: Vec<f64>,
}

impl PackedLower {
    pub fn new() -> Self {
        PackedLower { n: 0, data: Vec::new() }
    }

    pub fn with_capacity(n: usize) -> Self {
        PackedLower {
            n: 0,
            data: Vec::with_capacity(n * (n + 1) / 2),
        }
    }

    /// Packs the lower triangle of a full factor.
    pub fn from_full(l: &Mat) -> Self {
        let n = l.rows();
        let mut data = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            data.extend_from_slice(&l.row(i)[..i + 1]);
        }
        PackedLower { n, data }
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    fn row_start(i: usize) -> usize {
        i * (i + 1) / 2
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[Self::row_start(i)..Self::row_start(i) + i + 1]
    }

    #[inline]
    pub fn diag(&self, i: usize) -> f64 {
        self.data[Self::row_start(i) + i]
    }

    /// Appends a prepared factor row (length n+1, last entry the new
    /// diagonal).
    pub fn push_row(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.n + 1);
        self.data.extend_from_slice(row);
        self.n += 1;
    }

    /// Forward substitution `L x = b` in place.
    pub fn solve_lower(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        for i in 0..self.n {
            let row = self.row(i);
            let s = dot(&row[..i], &b[..i]);
            b[i] = (b[i] - s) / row[i];
        }
    }

    /// Back substitution `L^T x = b` in place, row-access form.
    pub fn solve_lower_t(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        for j in (0..self.n).rev() {
            let row = self.row(j);
            let xj = b[j] / row[j];
            b[j] = xj;
            let (bh, _) = b.split_at_mut(j);
            axpy(bh, &row[..j], -xj);
        }
    }

    /// Solves `(L L^T) x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        self.solve_lower(b);
        self.solve_lower_t(b);
    }
}

impl Default for PackedLower {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, seed: u64) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = Mat::from_fn(n, n, |_, _| rng.gen::<f64>() - 0.5);
        let mut s = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut v = dot(b.row(i), b.row(j));
                if i == j {
                    v += n as f64;
                }
                s.set(i, j, v);
            }
        }
        s
    }

    #[test]
    fn cholesky_roundtrip() {
        for n in [1, 3, 17, 64, 65, 130, 201] {
            let s = random_spd(n, n as u64);
            let mut l = s.clone();
            cholesky_in_place(&mut l).unwrap();
            l.zero_upper();
            // L L^T == S
            for i in 0..n {
                for j in 0..=i {
                    let v = dot(&l.row(i)[..j + 1], &l.row(j)[..j + 1]);
                    assert!(
                        (v - s.at(i, j)).abs() < 1e-9 * (n as f64),
                        "n={n} i={i} j={j}: {v} vs {}",
                        s.at(i, j)
                    );
                }
            }
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut m = Mat::from_rows(vec![vec![1.0, 2.0], vec![2.0, 1.0]]);
        let err = cholesky_in_place(&mut m).unwrap_err();
        assert_eq!(err, 1);
    }

    #[test]
    fn solve_matches_direct() {
        let n = 90;
        let s = random_spd(n, 7);
        let mut l = s.clone();
        cholesky_in_place(&mut l).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let mut x = b.clone();
        spd_solve(&l, &mut x);
        // S x == b
        for i in 0..n {
            let v = dot(s.row(i), &x);
            assert!((v - b[i]).abs() < 1e-8, "{i}: {v} vs {}", b[i]);
        }
    }

    #[test]
    fn inverse_matches_solve() {
        for n in [5, 64, 129, 200] {
            let s = random_spd(n, 100 + n as u64);
            let mut l = s.clone();
            cholesky_in_place(&mut l).unwrap();
            let z = spd_invert_from_chol(&l);
            // S Z == I
            for i in 0..n {
                for j in 0..n {
                    let mut v = 0.0;
                    for k in 0..n {
                        v += s.at(i, k) * z.at(k, j);
                    }
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((v - want).abs() < 1e-7, "n={n} ({i},{j}): {v}");
                }
            }
        }
    }

    #[test]
    fn packed_solves_match_full() {
        let n = 77;
        let s = random_spd(n, 11);
        let mut l = s.clone();
        cholesky_in_place(&mut l).unwrap();
        let packed = PackedLower::from_full(&l);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let mut x1 = b.clone();
        let mut x2 = b.clone();
        spd_solve(&l, &mut x1);
        packed.solve(&mut x2);
        for i in 0..n {
            assert!((x1[i] - x2[i]).abs() < 1e-12);
        }
    }
}
