//! Closed-form DR and SR matrices, a cyclic Jacobi eigensolver and the
//! ground-truth log principal eigenvector.

use crate::error::{Error, Result};
use crate::matrix::{dot, norm2, DenseMatrix};
use crate::mdp::GridWorld;

pub const JACOBI_MAX_SWEEPS: usize = 100;
pub const JACOBI_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrParams {
    pub lambda: f64,
    pub delta: f64,
}

impl Default for DrParams {
    fn default() -> Self {
        DrParams { lambda: 20.0, delta: 1e-3 }
    }
}

impl DrParams {
    pub fn new(lambda: f64, delta: f64) -> Result<DrParams> {
        if !(lambda > 0.0 && lambda.is_finite()) || !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::Invalid(format!("lambda and delta must be positive (got {lambda}, {delta})")));
        }
        Ok(DrParams { lambda, delta })
    }
}

/// Ascending eigenvalues with orthonormal eigenvectors stored as columns.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub vectors: DenseMatrix,
}

impl Spectrum {
    pub fn vector(&self, i: usize) -> Vec<f64> {
        self.vectors.col(i)
    }
}

pub fn symmetrize(p: &DenseMatrix) -> Result<DenseMatrix> {
    if !p.is_square() {
        return Err(Error::Shape(format!("cannot symmetrize {}x{}", p.rows, p.cols)));
    }
    let n = p.rows;
    let mut s = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            s[(i, j)] = 0.5 * (p[(i, j)] + p[(j, i)]);
        }
    }
    Ok(s)
}

/// ‖M·M⁻¹ − I‖_∞
pub fn inverse_residual(m: &DenseMatrix, inv: &DenseMatrix) -> Result<f64> {
    let prod = m.matmul(inv)?;
    Ok(prod.sub(&DenseMatrix::identity(m.rows))?.norm_inf())
}

/// DR-view reward vector with the terminal magnitude taken from `delta`.
pub fn dr_rewards(gw: &GridWorld, delta: f64) -> Vec<f64> {
    (0..gw.n_states)
        .map(|s| if gw.is_goal(s) { -delta } else { gw.dr_reward(s) })
        .collect()
}

pub fn r_diag(r: &[f64], lambda: f64) -> Vec<f64> {
    r.iter().map(|&x| (-x / lambda).exp()).collect()
}

/// (diag(exp(−r/λ)) − P̃)⁻¹
pub fn dr_matrix(r: &[f64], p: &DenseMatrix, params: DrParams) -> Result<DenseMatrix> {
    if r.len() != p.rows {
        return Err(Error::Shape(format!("reward length {} vs {} states", r.len(), p.rows)));
    }
    if let Some(x) = r.iter().find(|&&x| !(x < 0.0)) {
        return Err(Error::Invalid(format!("rewards must be negative, found {x}")));
    }
    let m = DenseMatrix::from_diag(&r_diag(r, params.lambda)).sub(&symmetrize(p)?)?;
    let z = m.invert()?;
    if !z.is_finite() {
        return Err(Error::Singular(0.0));
    }
    Ok(z)
}

/// (I − γ·P̃)⁻¹
pub fn sr_matrix(p: &DenseMatrix, gamma: f64) -> Result<DenseMatrix> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Invalid(format!("SR discount must lie in [0, 1), got {gamma}")));
    }
    let m = DenseMatrix::identity(p.rows).sub(&symmetrize(p)?.scale(gamma))?;
    m.invert()
}

/// Cyclic Jacobi rotations until the off-diagonal Frobenius norm falls below
/// `JACOBI_TOL` relative to max(1, ‖M‖_F).
pub fn symmetric_eig(m: &DenseMatrix) -> Result<Spectrum> {
    if !m.is_square() {
        return Err(Error::Shape(format!("eigensolver needs a square matrix, got {}x{}", m.rows, m.cols)));
    }
    if !m.is_finite() {
        return Err(Error::Invalid("matrix has non-finite entries".into()));
    }
    let scale = m.norm_fro().max(1.0);
    if !m.is_symmetric(1e-12 * scale) {
        return Err(Error::Invalid("matrix is not symmetric".into()));
    }
    let n = m.rows;
    let mut a = symmetrize(m)?;
    let mut v = DenseMatrix::identity(n);
    let off = |a: &DenseMatrix| {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[(i, j)] * a[(i, j)];
                }
            }
        }
        s.sqrt()
    };
    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if off(&a) < JACOBI_TOL * scale {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let (app, aqq) = (a[(p, p)], a[(q, q)]);
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    let kp = c * akp - s * akq;
                    let kq = s * akp + c * akq;
                    a[(k, p)] = kp;
                    a[(p, k)] = kp;
                    a[(k, q)] = kq;
                    a[(q, k)] = kq;
                }
                a[(p, p)] = app - t * apq;
                a[(q, q)] = aqq + t * apq;
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged && off(&a) >= JACOBI_TOL * scale {
        return Err(Error::NoConvergence(JACOBI_MAX_SWEEPS));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = DenseMatrix::zeros(n, n);
    for (new, &old) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, new)] = v[(k, old)];
        }
    }
    Ok(Spectrum { values, vectors })
}

/// Multiplies by the sign of the entry of largest magnitude.
pub fn sign_fix(x: &[f64]) -> Vec<f64> {
    let big = x.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
    let sign = if big < 0.0 { -1.0 } else { 1.0 };
    x.iter().map(|v| v * sign).collect()
}

fn unit(x: &[f64]) -> Vec<f64> {
    let n = norm2(x);
    x.iter().map(|v| v / n).collect()
}

/// I + R − P̃ for the DR view of `gw`.
pub fn dr_operator(gw: &GridWorld, params: DrParams) -> Result<DenseMatrix> {
    let r = dr_rewards(gw, params.delta);
    let n = gw.n_states;
    let mut m = symmetrize(&gw.default_transition_matrix())?.scale(-1.0);
    for (i, rd) in r_diag(&r, params.lambda).into_iter().enumerate() {
        m[(i, i)] += 1.0 + rd;
    }
    debug_assert_eq!(m.rows, n);
    Ok(m)
}

/// Unit-norm positive principal eigenvector of the symmetrized DR, taken as
/// the smallest eigenvector of I + R − P̃.
pub fn principal_eigvec_dr(gw: &GridWorld, params: DrParams) -> Result<Vec<f64>> {
    let spec = symmetric_eig(&dr_operator(gw, params)?)?;
    let e = unit(&sign_fix(&spec.vector(0)));
    if let Some((s, x)) = e.iter().enumerate().find(|(_, &x)| !(x > 0.0)) {
        return Err(Error::Divergence(format!("principal eigenvector entry {s} is {x:e}, expected positive")));
    }
    Ok(e)
}

pub fn log_principal_eigvec_dr(gw: &GridWorld, params: DrParams) -> Result<Vec<f64>> {
    Ok(principal_eigvec_dr(gw, params)?.iter().map(|x| x.ln()).collect())
}

/// Same vector through the explicit inverse Z = (R − P̃)⁻¹. R − P̃ can be
/// indefinite, so the matching pair is the one whose reciprocal 1/z is the
/// smallest eigenvalue of R − P̃, not necessarily the largest z.
pub fn principal_eigvec_dr_via_inverse(gw: &GridWorld, params: DrParams) -> Result<Vec<f64>> {
    let r = dr_rewards(gw, params.delta);
    let z = dr_matrix(&r, &gw.default_transition_matrix(), params)?;
    let spec = symmetric_eig(&symmetrize(&z)?)?;
    let best = (0..spec.values.len())
        .filter(|&i| spec.values[i] != 0.0)
        .min_by(|&i, &j| (1.0 / spec.values[i]).total_cmp(&(1.0 / spec.values[j])))
        .ok_or_else(|| Error::Divergence("inverse has no usable eigenvalue".into()))?;
    Ok(unit(&sign_fix(&spec.vector(best))))
}

/// Log of the smallest eigenvector of the graph Laplacian I − P̃.
pub fn laplacian_log_eigvec(gw: &GridWorld) -> Result<Vec<f64>> {
    let p = symmetrize(&gw.default_transition_matrix())?;
    let l = DenseMatrix::identity(gw.n_states).sub(&p)?;
    let e = unit(&sign_fix(&symmetric_eig(&l)?.vector(0)));
    if e.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::Divergence("Laplacian eigenvector is not positive".into()));
    }
    Ok(e.iter().map(|x| x.ln()).collect())
}

/// Principal eigenvector of the SR built from the episodic transition
/// matrix, unit norm, oriented so the goal entry is at or above the mean.
pub fn sr_principal_eigvec(gw: &GridWorld, gamma: f64) -> Result<Vec<f64>> {
    let sr = sr_matrix(&gw.episodic_transition_matrix(), gamma)?;
    let spec = symmetric_eig(&symmetrize(&sr)?)?;
    let x = unit(&spec.vector(gw.n_states - 1));
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let g = gw.goal_ids[0];
    Ok(if x[g] < mean { x.iter().map(|v| -v).collect() } else { x })
}

#[derive(Debug, Clone)]
pub struct TerminalColumn {
    pub goal: usize,
    /// ‖c − Πc‖ for the unit DR column c and the eigenspace projector Π.
    pub residual: f64,
    /// Cosine similarity between c and Πc.
    pub cosine: f64,
}

#[derive(Debug, Clone)]
pub struct TerminalReport {
    /// Smallest-magnitude eigenvalue of R − P (non-symmetrized).
    pub smallest_eigenvalue: f64,
    /// exp(δ/λ) − 1
    pub expected_eigenvalue: f64,
    /// Numerical rank of the terminal columns.
    pub rank: usize,
    pub columns: Vec<TerminalColumn>,
}

fn orthonormalize(cols: &mut [Vec<f64>]) {
    for i in 0..cols.len() {
        for j in 0..i {
            let d = dot(&cols[i], &cols[j]);
            let (head, tail) = cols.split_at_mut(i);
            for (x, y) in tail[0].iter_mut().zip(&head[j]) {
                *x -= d * y;
            }
        }
        let n = norm2(&cols[i]);
        if n > 0.0 {
            cols[i].iter_mut().for_each(|x| *x /= n);
        }
    }
}

/// Relates the DR columns of the terminal states to the eigenspace of the
/// smallest-magnitude eigenvalues of the non-symmetrized R − P.
pub fn terminal_column_basis_check(gw: &GridWorld, params: DrParams) -> Result<TerminalReport> {
    let r = dr_rewards(gw, params.delta);
    let n = gw.n_states;
    let mut m = gw.default_transition_matrix().scale(-1.0);
    for (i, rd) in r_diag(&r, params.lambda).into_iter().enumerate() {
        m[(i, i)] += rd;
    }
    let z = m.invert()?;
    let goals = &gw.goal_ids;
    let k = goals.len();

    let mut x = unit(&vec![1.0; n]);
    for _ in 0..500 {
        let next = unit(&z.mul_vec(&x)?);
        let change = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        x = next;
        if change < 1e-15 {
            break;
        }
    }
    let smallest_eigenvalue = dot(&x, &m.mul_vec(&x)?);

    let columns: Vec<Vec<f64>> = goals.iter().map(|&g| unit(&z.col(g))).collect();
    let mut basis = columns.clone();
    orthonormalize(&mut basis);
    for _ in 0..200 {
        let mut next: Vec<Vec<f64>> = basis.iter().map(|b| z.mul_vec(b)).collect::<Result<_>>()?;
        orthonormalize(&mut next);
        basis = next;
    }

    let mut gram = DenseMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            gram[(i, j)] = dot(&columns[i], &columns[j]);
        }
    }
    let rank = symmetric_eig(&gram)?.values.iter().filter(|&&v| v > 1e-10).count();

    let columns = goals
        .iter()
        .zip(&columns)
        .map(|(&goal, c)| {
            let mut proj = vec![0.0; n];
            for b in &basis {
                let d = dot(c, b);
                proj.iter_mut().zip(b).for_each(|(p, bi)| *p += d * bi);
            }
            let resid: Vec<f64> = c.iter().zip(&proj).map(|(a, b)| a - b).collect();
            TerminalColumn { goal, residual: norm2(&resid), cosine: dot(c, &proj) / norm2(&proj) }
        })
        .collect();
    Ok(TerminalReport {
        smallest_eigenvalue,
        expected_eigenvalue: (params.delta / params.lambda).exp_m1(),
        rank,
        columns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_small_cases() {
        let s = symmetric_eig(&DenseMatrix::from_diag(&[3.0, 1.0, 2.0])).unwrap();
        assert_eq!(s.values, vec![1.0, 2.0, 3.0]);
        assert_eq!(s.vector(0), vec![0.0, 1.0, 0.0]);
        let s = symmetric_eig(&DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()).unwrap();
        assert!((s.values[0] + 1.0).abs() < 1e-15 && (s.values[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn jacobi_rejects_nonsymmetric() {
        let m = DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        assert!(symmetric_eig(&m).is_err());
    }

    #[test]
    fn symmetrize_small() {
        let p = DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap();
        let s = symmetrize(&p).unwrap();
        assert_eq!(s, DenseMatrix::from_rows(&[vec![0.0, 0.5], vec![0.5, 1.0]]).unwrap());
        assert_eq!(symmetrize(&s).unwrap(), s);
    }

    #[test]
    fn scalar_dr_and_sr() {
        let p = DenseMatrix::identity(1);
        let delta = 1e-3;
        let z = dr_matrix(&[-delta], &p, DrParams { lambda: 1.0, delta }).unwrap();
        assert!((z[(0, 0)] - 1.0 / delta.exp_m1()).abs() < 1e-9 * z[(0, 0)]);
        let sr = sr_matrix(&p, 0.99).unwrap();
        assert!((sr[(0, 0)] - 100.0).abs() < 1e-10);
        let eye = sr_matrix(&DenseMatrix::from_rows(&[vec![0.5, 0.5], vec![0.25, 0.75]]).unwrap(), 0.0).unwrap();
        assert_eq!(eye, DenseMatrix::identity(2));
    }

    #[test]
    fn sign_fix_picks_largest_magnitude() {
        assert_eq!(sign_fix(&[0.1, -0.9, 0.2]), vec![-0.1, 0.9, -0.2]);
        assert_eq!(sign_fix(&[0.1, 0.9]), vec![0.1, 0.9]);
    }
}
