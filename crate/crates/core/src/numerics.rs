//! Small dense complex linear algebra used by the receiver chain.
//!
//! Everything here operates on `Complex<f64>` vectors and a plain row-major
//! matrix type. Sizes are tiny (a few tens at most), so the implementations
//! favor clarity and determinism over blocking or SIMD: partial-pivoted
//! elimination for inverses, the matrix inversion lemma for rank-1 updates
//! and inverse power iteration for the smallest eigenvector.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Complex sample type used throughout the crate.
pub type Cx = Complex64;

/// Dense complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CMat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Cx>,
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMat {
            rows,
            cols,
            data: vec![Cx::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = CMat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Cx::new(1.0, 0.0);
        }
        m
    }

    /// Identity scaled by a real factor.
    pub fn scaled_identity(n: usize, scale: f64) -> Self {
        let mut m = CMat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Cx::new(scale, 0.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<Cx>]) -> Self {
        let r = rows.len();
        let c = if r > 0 { rows[0].len() } else { 0 };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        CMat { rows: r, cols: c, data }
    }

    /// y = A x.
    pub fn matvec(&self, x: &[Cx]) -> Vec<Cx> {
        assert_eq!(self.cols, x.len(), "matvec dimension mismatch");
        let mut y = vec![Cx::new(0.0, 0.0); self.rows];
        for r in 0..self.rows {
            let mut acc = Cx::new(0.0, 0.0);
            let base = r * self.cols;
            for c in 0..self.cols {
                acc += self.data[base + c] * x[c];
            }
            y[r] = acc;
        }
        y
    }

    /// y = A^H x.
    pub fn matvec_herm(&self, x: &[Cx]) -> Vec<Cx> {
        assert_eq!(self.rows, x.len(), "matvec_herm dimension mismatch");
        let mut y = vec![Cx::new(0.0, 0.0); self.cols];
        for r in 0..self.rows {
            let base = r * self.cols;
            for c in 0..self.cols {
                y[c] += self.data[base + c].conj() * x[r];
            }
        }
        y
    }

    /// C = A B.
    pub fn matmul(&self, other: &CMat) -> CMat {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = CMat::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a == Cx::new(0.0, 0.0) {
                    continue;
                }
                for c in 0..other.cols {
                    out.data[r * other.cols + c] += a * other.data[k * other.cols + c];
                }
            }
        }
        out
    }

    pub fn hermitian_transpose(&self) -> CMat {
        let mut out = CMat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[(c, r)] = self[(r, c)].conj();
            }
        }
        out
    }

    /// A += scale * x y^H (outer-product accumulation).
    pub fn add_outer(&mut self, scale: f64, x: &[Cx], y: &[Cx]) {
        assert_eq!(self.rows, x.len());
        assert_eq!(self.cols, y.len());
        for r in 0..self.rows {
            let base = r * self.cols;
            let xr = x[r] * scale;
            for c in 0..self.cols {
                self.data[base + c] += xr * y[c].conj();
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn frobenius_distance(&self, other: &CMat) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Largest deviation from the Hermitian property, `max |A - A^H|`.
    pub fn hermitian_defect(&self) -> f64 {
        assert_eq!(self.rows, self.cols);
        let mut worst = 0.0f64;
        for r in 0..self.rows {
            for c in 0..self.cols {
                let d = (self[(r, c)] - self[(c, r)].conj()).norm();
                worst = worst.max(d);
            }
        }
        worst
    }
}

impl std::ops::Index<(usize, usize)> for CMat {
    type Output = Cx;
    fn index(&self, (r, c): (usize, usize)) -> &Cx {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMat {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Cx {
        &mut self.data[r * self.cols + c]
    }
}

/// Inner product `a^H b`.
pub fn inner(a: &[Cx], b: &[Cx]) -> Cx {
    assert_eq!(a.len(), b.len(), "inner dimension mismatch");
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Squared Euclidean norm.
pub fn norm_sqr(a: &[Cx]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum()
}

pub fn norm(a: &[Cx]) -> f64 {
    norm_sqr(a).sqrt()
}

/// Euclidean distance between two parameter vectors.
pub fn distance(a: &[Cx], b: &[Cx]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

pub fn all_finite(a: &[Cx]) -> bool {
    a.iter().all(|x| x.re.is_finite() && x.im.is_finite())
}

/// Hankel expansion of a length-M vector into an M x width matrix whose
/// (m, n) entry is `x[m + n]` when in range and zero past the end.
///
/// Multiplying the result by `conj(v)` reproduces the banded convolution
/// `V^H x` where `V` carries shifted copies of the length-`width` filter `v`.
pub fn hankel_expand(x: &[Cx], width: usize) -> Result<CMat> {
    if width == 0 {
        return Err(Error::invalid("hankel width must be >= 1"));
    }
    if x.is_empty() {
        return Err(Error::invalid("hankel input must be non-empty"));
    }
    let m = x.len();
    let mut out = CMat::zeros(m, width);
    for r in 0..m {
        for c in 0..width {
            if r + c < m {
                out[(r, c)] = x[r + c];
            }
        }
    }
    Ok(out)
}

/// Matrix inversion lemma, gain-vector form.
///
/// Given `Ainv = A^{-1}`, returns the inverse of `a*A + g h^H`:
///
/// ```text
/// k          = a^{-1} Ainv g / (1 + a^{-1} h^H Ainv g)
/// (a A + g h^H)^{-1} = a^{-1} Ainv - a^{-1} k h^H Ainv
/// ```
pub fn mil_rank1_update(ainv: &CMat, a: f64, g: &[Cx], h: &[Cx]) -> Result<CMat> {
    let n = ainv.rows;
    assert_eq!(ainv.cols, n, "Ainv must be square");
    assert_eq!(g.len(), n);
    assert_eq!(h.len(), n);
    if !(a > 0.0 && a <= 1.0) {
        return Err(Error::invalid(format!(
            "forgetting factor must be in (0, 1], got {a}"
        )));
    }
    let inv_a = 1.0 / a;
    let ainv_g = ainv.matvec(g);
    // h^H Ainv = (Ainv^H h)^H; row vector stored elementwise conjugated later.
    let ainvh_h = ainv.matvec_herm(h); // Ainv^H h
    let denom = Cx::new(1.0, 0.0) + inner(h, &ainv_g) * inv_a;
    if denom.norm() < 1e-300 {
        return Err(Error::SingularUpdate { denom: denom.norm() });
    }
    let k: Vec<Cx> = ainv_g.iter().map(|v| v * inv_a / denom).collect();

    let mut out = ainv.clone();
    out.scale(inv_a);
    // out -= a^{-1} k (h^H Ainv)
    for r in 0..n {
        let kr = k[r] * inv_a;
        for c in 0..n {
            out[(r, c)] -= kr * ainvh_h[c].conj();
        }
    }
    Ok(out)
}

/// Inverse of `A + delta*I` via partial-pivoted Gauss-Jordan elimination.
pub fn regularized_inverse(a: &CMat, delta: f64) -> Result<CMat> {
    let n = a.rows;
    if n == 0 || a.cols != n {
        return Err(Error::invalid("matrix must be square and non-empty"));
    }
    // Augmented [A + delta I | I], eliminated in place.
    let mut work = a.clone();
    for i in 0..n {
        work[(i, i)] += Cx::new(delta, 0.0);
    }
    let mut inv = CMat::identity(n);
    // Rank deficiency shows up as pivots at the round-off floor relative to
    // the matrix scale.
    let scale = work.data.iter().map(|v| v.norm()).fold(0.0f64, f64::max);
    let pivot_floor = (1e-13 * scale).max(1e-280);

    for col in 0..n {
        // Pivot search over rows col..n.
        let mut pivot_row = col;
        let mut pivot_mag = work[(col, col)].norm();
        for r in col + 1..n {
            let mag = work[(r, col)].norm();
            if mag > pivot_mag {
                pivot_mag = mag;
                pivot_row = r;
            }
        }
        if pivot_mag < pivot_floor {
            return Err(Error::SingularMatrix { pivot: pivot_mag });
        }
        if pivot_row != col {
            for c in 0..n {
                work.data.swap(col * n + c, pivot_row * n + c);
                inv.data.swap(col * n + c, pivot_row * n + c);
            }
        }
        let pivot = work[(col, col)];
        for c in 0..n {
            work[(col, c)] /= pivot;
            inv[(col, c)] /= pivot;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let factor = work[(r, col)];
            if factor == Cx::new(0.0, 0.0) {
                continue;
            }
            for c in 0..n {
                let wv = work[(col, c)];
                let iv = inv[(col, c)];
                work[(r, c)] -= factor * wv;
                inv[(r, c)] -= factor * iv;
            }
        }
    }
    Ok(inv)
}

const EIG_RESIDUAL_TOL: f64 = 1e-11;
/// Squarings of the inverse iteration matrix (2^13 effective power steps).
const EIG_SQUARINGS: usize = 13;
const EIG_POLISH_ITERS: usize = 25;

/// Unit-norm eigenvector of a Hermitian matrix associated with the smallest
/// eigenvalue, computed by inverse power iteration (accelerated by matrix
/// squaring, polished with Rayleigh-quotient shifts so clustered
/// eigenvalues still converge).
///
/// The phase ambiguity is resolved deterministically: the first entry with
/// magnitude above 1e-12 is rotated onto the nonnegative real axis.
pub fn smallest_eigvec(a: &CMat) -> Result<Vec<Cx>> {
    let n = a.rows;
    let start: Vec<Cx> = (0..n)
        .map(|i| Cx::new(1.0 + 0.013 * i as f64, 0.0))
        .collect();
    smallest_eigvec_from(a, &start)
}

/// Same as [`smallest_eigvec`] but warm-started, for tracking a slowly
/// varying matrix.
pub fn smallest_eigvec_from(a: &CMat, init: &[Cx]) -> Result<Vec<Cx>> {
    smallest_eigvec_tracked(a, init, 1e-9)
}

/// Warm-started smallest eigenvector with a caller-chosen acceptance
/// residual (relative to the matrix scale). Statistical consumers such as
/// channel trackers accept looser residuals than the algebraic contract.
pub fn smallest_eigvec_tracked(
    a: &CMat,
    init: &[Cx],
    accept_scale: f64,
) -> Result<Vec<Cx>> {
    let n = a.rows;
    if n == 0 || a.cols != n {
        return Err(Error::invalid("matrix must be square and non-empty"));
    }
    if a.hermitian_defect() > 1e-10 {
        return Err(Error::invalid("matrix is not Hermitian within 1e-10"));
    }
    let trace: f64 = (0..n).map(|i| a[(i, i)].re.abs()).sum();
    let scale = trace.max(1e-300);
    let tol = EIG_RESIDUAL_TOL * scale.max(1.0);

    let mut x: Vec<Cx> = init.to_vec();
    if norm(&x) < 1e-300 {
        return Err(Error::invalid("zero start vector"));
    }
    normalize(&mut x)?;

    // Warm starts near an eigenvector skip straight to the polish stage.
    if residual_of(a, &x) > 1e-2 * scale.max(1.0) {
        // Shift slightly so a singular A still factors; the shift moves
        // every eigenvalue equally and leaves eigenvectors untouched.
        let shift = 1e-10 * scale / n as f64;
        let mut solver = regularized_inverse(a, shift)?;
        // Repeated squaring concentrates the spectrum on the smallest
        // eigenvalue far faster than stepping one application at a time.
        for _ in 0..EIG_SQUARINGS {
            solver = solver.matmul(&solver);
            let peak = solver.data.iter().map(|v| v.norm()).fold(0.0f64, f64::max);
            if !peak.is_finite() || peak < 1e-300 {
                return Err(Error::NonConvergence {
                    residual: f64::INFINITY,
                    iterations: 0,
                });
            }
            solver.scale(1.0 / peak);
        }
        let projected = solver.matvec(&x);
        if norm(&projected).is_finite() && norm(&projected) > 1e-300 {
            x = projected;
        } else {
            // The start vector was (numerically) orthogonal to the target
            // eigenspace; fall back to the deterministic ramp.
            x = solver.matvec(
                &(0..n)
                    .map(|i| Cx::new(1.0 + 0.013 * i as f64, 0.0))
                    .collect::<Vec<_>>(),
            );
        }
        normalize(&mut x)?;
    }

    // Rayleigh-quotient polish: cubic convergence even when the smallest
    // eigenvalues are clustered.
    let mut best = x.clone();
    let mut best_residual = residual_of(a, &x);
    for it in 0..EIG_POLISH_ITERS {
        if best_residual < tol {
            return Ok(fix_phase(best));
        }
        let lambda = inner(&x, &a.matvec(&x)).re;
        let mut shifted = a.clone();
        for i in 0..n {
            shifted[(i, i)] -= Cx::new(lambda, 0.0);
        }
        // Small diagonal load keeps the nearly singular shifted solve (the
        // sign of convergence) from tripping the rank-deficiency floor.
        let step = match regularized_inverse(&shifted, 1e-10 * scale.max(1.0)) {
            Ok(inv) => inv.matvec(&x),
            Err(Error::SingularMatrix { .. }) => break,
            Err(e) => return Err(e),
        };
        x = step;
        if normalize(&mut x).is_err() {
            break;
        }
        let res = residual_of(a, &x);
        if res < best_residual {
            best_residual = res;
            best = x.clone();
        } else if it > 2 && res > best_residual * 0.99 {
            break;
        }
    }
    if best_residual < tol.max(accept_scale * scale.max(1.0)) {
        return Ok(fix_phase(best));
    }
    Err(Error::NonConvergence {
        residual: best_residual,
        iterations: EIG_POLISH_ITERS,
    })
}

fn normalize(x: &mut [Cx]) -> Result<()> {
    let nx = norm(x);
    if !nx.is_finite() || nx < 1e-300 {
        return Err(Error::invalid("vector collapsed to zero"));
    }
    for v in x {
        *v /= nx;
    }
    Ok(())
}

fn residual_of(a: &CMat, x: &[Cx]) -> f64 {
    let ax = a.matvec(x);
    let lambda = inner(x, &ax).re;
    ax.iter()
        .zip(x)
        .map(|(av, xv)| (av - xv * lambda).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// Rotate the first entry with magnitude above 1e-12 onto the nonnegative
/// real axis.
pub fn fix_phase(mut x: Vec<Cx>) -> Vec<Cx> {
    if let Some(first) = x.iter().find(|v| v.norm() > 1e-12).copied() {
        let rot = first.conj() / first.norm();
        for v in &mut x {
            *v *= rot;
        }
    }
    x
}

/// All strictly increasing D-subsets of {0, ..., m-1} in lexicographic order.
pub fn enumerate_combinations(m: usize, d: usize) -> Result<Vec<Vec<usize>>> {
    if d == 0 || m == 0 {
        return Err(Error::invalid("m and d must be >= 1"));
    }
    if d > m {
        return Err(Error::invalid(format!("d = {d} exceeds m = {m}")));
    }
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..d).collect();
    loop {
        out.push(current.clone());
        // Advance to the next combination.
        let mut i = d;
        loop {
            if i == 0 {
                return Ok(out);
            }
            i -= 1;
            if current[i] != i + m - d {
                break;
            }
            if i == 0 {
                return Ok(out);
            }
        }
        current[i] += 1;
        for j in i + 1..d {
            current[j] = current[j - 1] + 1;
        }
    }
}

/// Binomial coefficient, saturating at u64::MAX.
pub fn binomial(m: u64, d: u64) -> u64 {
    if d > m {
        return 0;
    }
    let d = d.min(m - d);
    let mut acc: u64 = 1;
    for i in 0..d {
        acc = match acc.checked_mul(m - i) {
            Some(v) => v / (i + 1),
            None => return u64::MAX,
        };
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Cx {
        Cx::new(re, im)
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<Cx> {
        (0..n)
            .map(|_| c(rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0))
            .collect()
    }

    fn random_pd(rng: &mut ChaCha8Rng, n: usize) -> CMat {
        // B B^H + I is Hermitian positive definite.
        let mut b = CMat::zeros(n, n);
        for r in 0..n {
            for col in 0..n {
                b[(r, col)] = c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
            }
        }
        let mut a = b.matmul(&b.hermitian_transpose());
        for i in 0..n {
            a[(i, i)] += c(1.0, 0.0);
        }
        a
    }

    /// Explicit banded convolution matrix with shifted copies of v,
    /// V[r, c] = v[r - c] when 0 <= r - c < I.
    fn convolution_matrix(v: &[Cx], m: usize) -> CMat {
        let i_len = v.len();
        let mut mat = CMat::zeros(m, m);
        for r in 0..m {
            for col in 0..m {
                if r >= col && r - col < i_len {
                    mat[(r, col)] = v[r - col];
                }
            }
        }
        mat
    }

    #[test]
    fn hankel_matches_template() {
        let x = vec![c(1.0, 0.0), c(2.0, 0.0), c(3.0, 0.0)];
        let h = hankel_expand(&x, 2).unwrap();
        let expect = [
            [c(1.0, 0.0), c(2.0, 0.0)],
            [c(2.0, 0.0), c(3.0, 0.0)],
            [c(3.0, 0.0), c(0.0, 0.0)],
        ];
        for r in 0..3 {
            for col in 0..2 {
                assert_eq!(h[(r, col)], expect[r][col]);
            }
        }
    }

    #[test]
    fn hankel_zero_input() {
        let x = vec![c(0.0, 0.0); 5];
        let h = hankel_expand(&x, 3).unwrap();
        assert!(h.data.iter().all(|v| *v == c(0.0, 0.0)));
        assert_eq!((h.rows, h.cols), (5, 3));
    }

    #[test]
    fn hankel_rejects_zero_width() {
        assert!(hankel_expand(&[c(1.0, 0.0)], 0).is_err());
    }

    #[test]
    fn hankel_times_conj_v_equals_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let x = random_vec(&mut rng, 8);
            let v = random_vec(&mut rng, 3);
            let h = hankel_expand(&x, 3).unwrap();
            let vconj: Vec<Cx> = v.iter().map(|z| z.conj()).collect();
            let lhs = h.matvec(&vconj);
            let big_v = convolution_matrix(&v, 8);
            let rhs = big_v.matvec_herm(&x);
            for (a, b) in lhs.iter().zip(&rhs) {
                assert!((a - b).norm() < 1e-12, "mismatch {a} vs {b}");
            }
        }
    }

    #[test]
    fn mil_zero_update_is_identity() {
        let ainv = CMat::identity(2);
        let zero = vec![c(0.0, 0.0); 2];
        let out = mil_rank1_update(&ainv, 1.0, &zero, &zero).unwrap();
        assert!(out.frobenius_distance(&CMat::identity(2)) < 1e-15);
    }

    #[test]
    fn mil_sherman_morrison_on_identity() {
        let ainv = CMat::identity(3);
        let e1 = vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)];
        let out = mil_rank1_update(&ainv, 1.0, &e1, &e1).unwrap();
        let mut expect = CMat::identity(3);
        expect[(0, 0)] = c(0.5, 0.0);
        assert!(out.frobenius_distance(&expect) < 1e-14);
    }

    #[test]
    fn mil_matches_direct_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = random_pd(&mut rng, 4);
            let ainv = regularized_inverse(&a, 0.0).unwrap();
            let g = random_vec(&mut rng, 4);
            let h = random_vec(&mut rng, 4);
            let alpha = 0.998;
            let fast = mil_rank1_update(&ainv, alpha, &g, &h).unwrap();
            // Direct route: form a*A + g h^H and invert by elimination.
            let mut updated = a.clone();
            updated.scale(alpha);
            updated.add_outer(1.0, &g, &h);
            let direct = regularized_inverse(&updated, 0.0).unwrap();
            assert!(
                fast.frobenius_distance(&direct) < 1e-8,
                "distance {}",
                fast.frobenius_distance(&direct)
            );
        }
    }

    #[test]
    fn mil_composed_tracks_weighted_sum() {
        // Compose 200 rank-1 updates and compare against directly inverting
        // the exponentially weighted sum.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 5;
        let alpha = 0.99;
        let delta = 2.0;
        let mut acc = CMat::scaled_identity(n, delta);
        let mut inv = CMat::scaled_identity(n, 1.0 / delta);
        for _ in 0..200 {
            let x = random_vec(&mut rng, n);
            inv = mil_rank1_update(&inv, alpha, &x, &x).unwrap();
            acc.scale(alpha);
            acc.add_outer(1.0, &x, &x);
        }
        let direct = regularized_inverse(&acc, 0.0).unwrap();
        assert!(
            inv.frobenius_distance(&direct) < 1e-6,
            "drift {}",
            inv.frobenius_distance(&direct)
        );
    }

    #[test]
    fn mil_rejects_vanishing_denominator() {
        // (I + g h^H) with h^H g = -1 is exactly singular.
        let ainv = CMat::identity(2);
        let g = vec![c(1.0, 0.0), c(0.0, 0.0)];
        let h = vec![c(-1.0, 0.0), c(0.0, 0.0)];
        assert!(matches!(
            mil_rank1_update(&ainv, 1.0, &g, &h),
            Err(Error::SingularUpdate { .. })
        ));
    }

    #[test]
    fn inverse_identity_and_regularized_zero() {
        let inv = regularized_inverse(&CMat::identity(3), 0.0).unwrap();
        assert!(inv.frobenius_distance(&CMat::identity(3)) < 1e-14);

        let inv2 = regularized_inverse(&CMat::zeros(2, 2), 0.5).unwrap();
        assert!(inv2.frobenius_distance(&CMat::scaled_identity(2, 2.0)) < 1e-14);
    }

    #[test]
    fn inverse_residual_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_pd(&mut rng, 5);
        let inv = regularized_inverse(&a, 0.0).unwrap();
        let prod = a.matmul(&inv);
        let dev = prod.frobenius_distance(&CMat::identity(5));
        assert!(dev < 1e-10, "residual {dev}");
    }

    #[test]
    fn inverse_rejects_singular() {
        let mut a = CMat::zeros(2, 2);
        a[(0, 0)] = c(1.0, 0.0);
        a[(0, 1)] = c(2.0, 0.0);
        a[(1, 0)] = c(2.0, 0.0);
        a[(1, 1)] = c(4.0, 0.0);
        assert!(matches!(
            regularized_inverse(&a, 0.0),
            Err(Error::SingularMatrix { .. })
        ));
    }

    #[test]
    fn eigvec_diagonal_case() {
        let mut a = CMat::zeros(3, 3);
        a[(0, 0)] = c(3.0, 0.0);
        a[(1, 1)] = c(1.0, 0.0);
        a[(2, 2)] = c(2.0, 0.0);
        let v = smallest_eigvec(&a).unwrap();
        assert!((v[0].norm()) < 1e-8);
        assert!((v[1] - c(1.0, 0.0)).norm() < 1e-8);
        assert!((v[2].norm()) < 1e-8);
    }

    #[test]
    fn eigvec_degenerate_spectrum() {
        let v = smallest_eigvec(&CMat::identity(4)).unwrap();
        assert!((norm(&v) - 1.0).abs() < 1e-12);
        let av = CMat::identity(4).matvec(&v);
        let lambda = inner(&v, &av).re;
        assert!((lambda - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eigvec_beats_random_probes() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = random_pd(&mut rng, 5);
        let v = smallest_eigvec(&a).unwrap();
        let rq = inner(&v, &a.matvec(&v)).re;
        for _ in 0..10_000 {
            let mut probe = random_vec(&mut rng, 5);
            let np = norm(&probe);
            for x in &mut probe {
                *x /= np;
            }
            let pq = inner(&probe, &a.matvec(&probe)).re;
            assert!(rq <= pq + 1e-9, "probe beat eigvec: {pq} < {rq}");
        }
    }

    #[test]
    fn eigvec_contract_norm_residual_phase() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..25 {
            let a = random_pd(&mut rng, 5);
            let v = smallest_eigvec(&a).unwrap();
            assert!((norm(&v) - 1.0).abs() < 1e-12);
            let av = a.matvec(&v);
            let lambda = inner(&v, &av).re;
            let res: f64 = av
                .iter()
                .zip(&v)
                .map(|(x, y)| (x - y * lambda).norm_sqr())
                .sum::<f64>()
                .sqrt();
            assert!(res < 1e-8, "residual {res}");
            let first = v.iter().find(|z| z.norm() > 1e-12).unwrap();
            assert!(first.im.abs() < 1e-10 && first.re >= 0.0);
        }
    }

    #[test]
    fn combinations_small_cases() {
        let combos = enumerate_combinations(3, 2).unwrap();
        assert_eq!(combos, vec![vec![0, 1], vec![0, 2], vec![1, 2]]);
        assert_eq!(enumerate_combinations(5, 2).unwrap().len(), 10);
    }

    #[test]
    fn combinations_rejects_d_above_m() {
        assert!(enumerate_combinations(3, 4).is_err());
    }

    /// Recursive enumeration used as an independent oracle.
    fn combos_recursive(m: usize, d: usize) -> Vec<Vec<usize>> {
        fn go(start: usize, m: usize, d: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if d == 0 {
                out.push(prefix.clone());
                return;
            }
            for i in start..=m - d {
                prefix.push(i);
                go(i + 1, m, d - 1, prefix, out);
                prefix.pop();
            }
        }
        let mut out = Vec::new();
        go(0, m, d, &mut Vec::new(), &mut out);
        out
    }

    #[test]
    fn combinations_match_recursive_oracle() {
        let combos = enumerate_combinations(8, 4).unwrap();
        assert_eq!(combos.len(), 70);
        assert_eq!(combos, combos_recursive(8, 4));
        for combo in &combos {
            assert!(combo.windows(2).all(|w| w[0] < w[1]));
            assert!(combo.iter().all(|&i| i < 8));
        }
    }

    #[test]
    fn binomial_values() {
        assert_eq!(binomial(5, 2), 10);
        assert_eq!(binomial(8, 4), 70);
        assert_eq!(binomial(40, 5), 658_008);
        assert_eq!(binomial(3, 5), 0);
    }
}
