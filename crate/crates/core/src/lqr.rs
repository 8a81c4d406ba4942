//! Linear quadratic regulator reference controller.
//!
//! Solves the continuous algebraic Riccati equation by Newton-Kleinman
//! iteration: starting from a stabilizing gain, each round solves a
//! Lyapunov equation for the cost-to-go and re-derives the gain, converging
//! quadratically. The Lyapunov step is a small dense linear solve, so no
//! eigensolver is needed anywhere; stability checks run through Lyapunov
//! certificates instead.

use thiserror::Error;

pub type Mat<const R: usize, const C: usize> = [[f64; C]; R];

#[derive(Debug, Error)]
pub enum LqrError {
    #[error("invalid system: {0}")]
    InvalidSystem(String),
    #[error("system is not stabilizable with the built-in initial gains; supply one via solve_care_with")]
    NotStabilizable,
    #[error("Riccati iteration failed to converge: residual {residual:.3e} after {iterations} iterations")]
    NoConvergence { residual: f64, iterations: usize },
    #[error("initial gain does not stabilize the system")]
    InitialGainUnstable,
}

pub fn mat_zero<const R: usize, const C: usize>() -> Mat<R, C> {
    [[0.0; C]; R]
}

pub fn identity<const N: usize>() -> Mat<N, N> {
    let mut out = mat_zero();
    for (i, row) in out.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    out
}

pub fn mat_mul<const R: usize, const K: usize, const C: usize>(
    a: &Mat<R, K>,
    b: &Mat<K, C>,
) -> Mat<R, C> {
    let mut out = mat_zero();
    for i in 0..R {
        for k in 0..K {
            let av = a[i][k];
            if av == 0.0 {
                continue;
            }
            for j in 0..C {
                out[i][j] += av * b[k][j];
            }
        }
    }
    out
}

pub fn transpose<const R: usize, const C: usize>(a: &Mat<R, C>) -> Mat<C, R> {
    let mut out = mat_zero();
    for i in 0..R {
        for j in 0..C {
            out[j][i] = a[i][j];
        }
    }
    out
}

pub fn mat_add<const R: usize, const C: usize>(a: &Mat<R, C>, b: &Mat<R, C>) -> Mat<R, C> {
    let mut out = *a;
    for i in 0..R {
        for j in 0..C {
            out[i][j] += b[i][j];
        }
    }
    out
}

pub fn mat_sub<const R: usize, const C: usize>(a: &Mat<R, C>, b: &Mat<R, C>) -> Mat<R, C> {
    let mut out = *a;
    for i in 0..R {
        for j in 0..C {
            out[i][j] -= b[i][j];
        }
    }
    out
}

pub fn mat_scale<const R: usize, const C: usize>(a: &Mat<R, C>, s: f64) -> Mat<R, C> {
    let mut out = *a;
    for row in out.iter_mut() {
        for v in row.iter_mut() {
            *v *= s;
        }
    }
    out
}

pub fn mat_max_abs<const R: usize, const C: usize>(a: &Mat<R, C>) -> f64 {
    a.iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
}

pub fn mat_vec<const R: usize, const C: usize>(a: &Mat<R, C>, x: &[f64; C]) -> [f64; R] {
    let mut out = [0.0; R];
    for i in 0..R {
        for j in 0..C {
            out[i] += a[i][j] * x[j];
        }
    }
    out
}

/// Dense Gaussian elimination with partial pivoting on a flat row-major
/// system. Returns `None` for singular matrices.
fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Option<Vec<f64>> {
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if a[row * n + col].abs() > a[pivot * n + col].abs() {
                pivot = row;
            }
        }
        if a[pivot * n + col].abs() < 1e-300 {
            return None;
        }
        if pivot != col {
            for j in 0..n {
                a.swap(col * n + j, pivot * n + j);
            }
            b.swap(col, pivot);
        }
        let d = a[col * n + col];
        for row in col + 1..n {
            let f = a[row * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                a[row * n + j] -= f * a[col * n + j];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for j in row + 1..n {
            acc -= a[row * n + j] * x[j];
        }
        x[row] = acc / a[row * n + row];
    }
    Some(x)
}

/// Inverse via column-by-column solves.
pub fn invert<const N: usize>(a: &Mat<N, N>) -> Option<Mat<N, N>> {
    let mut out = mat_zero::<N, N>();
    for col in 0..N {
        let mut flat: Vec<f64> = a.iter().flat_map(|r| r.iter().copied()).collect();
        let mut rhs = vec![0.0; N];
        rhs[col] = 1.0;
        let x = solve_dense(&mut flat, &mut rhs, N)?;
        for row in 0..N {
            out[row][col] = x[row];
        }
    }
    Some(out)
}

/// Cholesky factorization; `None` when the matrix is not positive definite.
fn cholesky<const N: usize>(a: &Mat<N, N>) -> Option<Mat<N, N>> {
    let mut l = mat_zero::<N, N>();
    for i in 0..N {
        for j in 0..=i {
            let mut sum = a[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if sum <= 0.0 {
                    return None;
                }
                l[i][j] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    Some(l)
}

fn is_symmetric<const N: usize>(a: &Mat<N, N>, tol: f64) -> bool {
    for i in 0..N {
        for j in 0..i {
            if (a[i][j] - a[j][i]).abs() > tol {
                return false;
            }
        }
    }
    true
}

/// Solves the Lyapunov equation `F^T P + P F = -S` for symmetric `P` by
/// vectorizing into an `N^2 x N^2` linear system.
fn solve_lyapunov<const N: usize>(f: &Mat<N, N>, s: &Mat<N, N>) -> Option<Mat<N, N>> {
    let n2 = N * N;
    let ft = transpose(f);
    // Row-major vec(P): vec(F^T P) = (F^T (x) I) vec(P), vec(P F) = (I (x) F^T) vec(P).
    let mut m = vec![0.0; n2 * n2];
    for i in 0..N {
        for j in 0..N {
            let row = i * N + j;
            for k in 0..N {
                // (F^T (x) I): couples P[k][j] with coefficient F^T[i][k]
                m[row * n2 + (k * N + j)] += ft[i][k];
                // (I (x) F^T): couples P[i][k] with coefficient F[k][j] = F^T[j][k]...
                m[row * n2 + (i * N + k)] += ft[j][k];
            }
        }
    }
    let mut rhs = vec![0.0; n2];
    for i in 0..N {
        for j in 0..N {
            rhs[i * N + j] = -s[i][j];
        }
    }
    let x = solve_dense(&mut m, &mut rhs, n2)?;
    let mut p = mat_zero::<N, N>();
    for i in 0..N {
        for j in 0..N {
            p[i][j] = x[i * N + j];
        }
    }
    // Symmetrize against accumulated round-off.
    for i in 0..N {
        for j in 0..i {
            let avg = 0.5 * (p[i][j] + p[j][i]);
            p[i][j] = avg;
            p[j][i] = avg;
        }
    }
    Some(p)
}

/// Lyapunov stability certificate: `F` is Hurwitz iff `F^T P + P F = -I`
/// has a positive-definite solution.
pub fn is_stable<const N: usize>(f: &Mat<N, N>) -> bool {
    match solve_lyapunov(f, &identity()) {
        Some(p) => cholesky(&p).is_some(),
        None => false,
    }
}

/// Continuous-time system with quadratic costs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSystem<const N: usize, const M: usize> {
    pub a: Mat<N, N>,
    pub b: Mat<N, M>,
    pub q: Mat<N, N>,
    pub r: Mat<M, M>,
}

/// The reaching task's 4-state / 2-control shape.
pub type ReachSystem = LinearSystem<4, 2>;

impl ReachSystem {
    /// Double-integrator plant with control gain `kappa`, position-dominant
    /// state cost, and a light control penalty.
    pub fn point_mass(kappa: f64) -> Self {
        let mut a = mat_zero::<4, 4>();
        a[0][2] = 1.0;
        a[1][3] = 1.0;
        let mut b = mat_zero::<4, 2>();
        b[2][0] = kappa;
        b[3][1] = kappa;
        let mut q = mat_zero::<4, 4>();
        q[0][0] = 1.0;
        q[1][1] = 1.0;
        q[2][2] = 0.1;
        q[3][3] = 0.1;
        let r = [[0.1, 0.0], [0.0, 0.1]];
        LinearSystem { a, b, q, r }
    }
}

impl<const N: usize, const M: usize> LinearSystem<N, M> {
    pub fn validate(&self) -> Result<(), LqrError> {
        if !is_symmetric(&self.q, 1e-12) {
            return Err(LqrError::InvalidSystem("Q is not symmetric".into()));
        }
        if !is_symmetric(&self.r, 1e-12) {
            return Err(LqrError::InvalidSystem("R is not symmetric".into()));
        }
        // Q must be PSD: shift by a hair and demand positive definiteness.
        let mut q_eps = self.q;
        for i in 0..N {
            q_eps[i][i] += 1e-12;
        }
        if cholesky(&q_eps).is_none() {
            return Err(LqrError::InvalidSystem("Q is not positive semidefinite".into()));
        }
        if cholesky(&self.r).is_none() {
            return Err(LqrError::InvalidSystem("R is not positive definite".into()));
        }
        Ok(())
    }

    fn care_residual(&self, p: &Mat<N, N>, r_inv: &Mat<M, M>) -> f64 {
        // A^T P + P A - P B R^-1 B^T P + Q
        let at_p = mat_mul(&transpose(&self.a), p);
        let p_a = mat_mul(p, &self.a);
        let bt_p = mat_mul(&transpose(&self.b), p);
        let p_b = transpose(&bt_p);
        let quad = mat_mul(&mat_mul(&p_b, r_inv), &bt_p);
        let res = mat_add(&mat_sub(&mat_add(&at_p, &p_a), &quad), &self.q);
        mat_max_abs(&res)
    }
}

/// Riccati solution with its certificates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LqrGain<const N: usize, const M: usize> {
    pub k: Mat<M, N>,
    pub p: Mat<N, N>,
    pub residual: f64,
    pub iterations: usize,
}

pub type ReachGain = LqrGain<4, 2>;

const RESIDUAL_TARGET: f64 = 1e-12;
const RESIDUAL_ACCEPT: f64 = 1e-9;
const MAX_ITERATIONS: usize = 100;

/// Solves the CARE from a caller-supplied stabilizing gain.
pub fn solve_care_with<const N: usize, const M: usize>(
    sys: &LinearSystem<N, M>,
    k0: Mat<M, N>,
) -> Result<LqrGain<N, M>, LqrError> {
    sys.validate()?;
    let r_inv = invert(&sys.r).ok_or_else(|| LqrError::InvalidSystem("R is singular".into()))?;
    let closed = |k: &Mat<M, N>| mat_sub(&sys.a, &mat_mul(&sys.b, k));
    if !is_stable(&closed(&k0)) {
        return Err(LqrError::InitialGainUnstable);
    }

    let mut k = k0;
    let mut p = mat_zero::<N, N>();
    let mut residual = f64::INFINITY;
    for iteration in 1..=MAX_ITERATIONS {
        // S = Q + K^T R K
        let ktrk = mat_mul(&mat_mul(&transpose(&k), &sys.r), &k);
        let s = mat_add(&sys.q, &ktrk);
        let f = closed(&k);
        p = solve_lyapunov(&f, &s).ok_or(LqrError::NoConvergence {
            residual,
            iterations: iteration,
        })?;
        k = mat_mul(&mat_mul(&r_inv, &transpose(&sys.b)), &p);
        residual = sys.care_residual(&p, &r_inv);
        if residual <= RESIDUAL_TARGET {
            return finish(sys, k, p, residual, iteration);
        }
    }
    if residual <= RESIDUAL_ACCEPT {
        return finish(sys, k, p, residual, MAX_ITERATIONS);
    }
    Err(LqrError::NoConvergence {
        residual,
        iterations: MAX_ITERATIONS,
    })
}

fn finish<const N: usize, const M: usize>(
    sys: &LinearSystem<N, M>,
    k: Mat<M, N>,
    p: Mat<N, N>,
    residual: f64,
    iterations: usize,
) -> Result<LqrGain<N, M>, LqrError> {
    let closed = mat_sub(&sys.a, &mat_mul(&sys.b, &k));
    if !is_stable(&closed) || cholesky(&nudged(&p)).is_none() {
        return Err(LqrError::NoConvergence {
            residual,
            iterations,
        });
    }
    Ok(LqrGain {
        k,
        p,
        residual,
        iterations,
    })
}

fn nudged<const N: usize>(p: &Mat<N, N>) -> Mat<N, N> {
    let mut out = *p;
    for i in 0..N {
        out[i][i] += 1e-12;
    }
    out
}

/// Solves the CARE, deriving an initial stabilizing gain automatically:
/// the zero gain when the plant is already stable, or a proportional-
/// derivative seed for the decoupled double-integrator structure.
pub fn solve_care<const N: usize, const M: usize>(
    sys: &LinearSystem<N, M>,
) -> Result<LqrGain<N, M>, LqrError> {
    sys.validate()?;
    if is_stable(&sys.a) {
        return solve_care_with(sys, mat_zero());
    }
    if let Some(k0) = double_integrator_seed(sys) {
        return solve_care_with(sys, k0);
    }
    Err(LqrError::NotStabilizable)
}

/// For plants shaped like `d pos = S vel, d vel = B_low u` with invertible
/// lower blocks, `u = -B_low^-1 (pos + vel)` is a stabilizing
/// proportional-derivative loop.
fn double_integrator_seed<const N: usize, const M: usize>(
    sys: &LinearSystem<N, M>,
) -> Option<Mat<M, N>> {
    if N != 2 * M {
        return None;
    }
    // Upper-left and all lower blocks of A must vanish; B must only act on
    // the velocity block.
    for i in 0..N {
        for j in 0..N {
            let in_coupling_block = i < M && j >= M;
            if !in_coupling_block && sys.a[i][j] != 0.0 {
                return None;
            }
        }
    }
    for i in 0..M {
        for j in 0..M {
            if sys.b[i][j] != 0.0 {
                return None;
            }
        }
    }
    let mut s_block = mat_zero::<M, M>();
    let mut b_low = mat_zero::<M, M>();
    for i in 0..M {
        for j in 0..M {
            s_block[i][j] = sys.a[i][M + j];
            b_low[i][j] = sys.b[M + i][j];
        }
    }
    let b_inv = invert(&b_low)?;
    // The certificate below rejects the seed if S spoils stability.
    let mut k0 = mat_zero::<M, N>();
    for i in 0..M {
        for j in 0..M {
            k0[i][j] = b_inv[i][j];
            k0[i][M + j] = b_inv[i][j];
        }
    }
    let closed = mat_sub(&sys.a, &mat_mul(&sys.b, &k0));
    if is_stable(&closed) {
        Some(k0)
    } else {
        None
    }
}

/// Clipped state feedback `u = clip(-K (x - target))`.
pub fn lqr_control(x: &[f64; 4], target: &[f64; 4], k: &Mat<2, 4>, u_max: f64) -> crate::env::Control {
    let err = [
        x[0] - target[0],
        x[1] - target[1],
        x[2] - target[2],
        x[3] - target[3],
    ];
    let raw = mat_vec(k, &err);
    crate::env::Control([(-raw[0]).clamp(-u_max, u_max), (-raw[1]).clamp(-u_max, u_max)])
}
