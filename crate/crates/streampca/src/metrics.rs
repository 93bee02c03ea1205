//! Ground-truth diagnostics: how much of a sketch lies outside the target
//! eigenspace, how well-conditioned its overlap with the target is, and the
//! per-sample alignment quantity that drives the step-size analysis.
//!
//! Everything here is computed relative to an [`EigenPartition`] — the split
//! of a known spectrum's eigenbasis into the target block `V` (top `k`), its
//! complement `Z`, and the "well-separated" tail `W` (eigenvectors whose
//! eigenvalues sit below the threshold `λ_k − ρ`). The [`MetricEngine`]
//! evaluates a full record of these quantities at observation times, working
//! in eigenbasis coordinates so each record costs one `d×d · d×k` product at
//! most (and none at all for identity-basis spectra).

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::oja::{ObserveCtx, SketchState};
use crate::spectra::Spectrum;

/// Condition-estimate ceiling for the `(VᵀQ)⁻¹` solves; past this the result
/// is reported as `+∞` instead of an unreliable number.
pub const COND_LIMIT: f64 = 1e12;
/// Relative convergence tolerance of the spectral-norm power iteration.
pub const POWER_TOL: f64 = 1e-10;
/// Orthonormality acceptance for explicit Rayleigh-quotient inputs.
pub const ORTHO_TOL: f64 = 1e-6;
const POWER_MAX_ITERS: usize = 20_000;

/// A spectrum's eigenbasis split for a rank-`k` target: columns `1..k` form
/// `V`, the rest form `Z`, and the last `d−k−m` columns of `Z` form `W`,
/// where `m` is the largest count of complement eigenvalues still above
/// `λ_k − ρ` (those are "too close to the target" to count against a sketch).
#[derive(Debug, Clone)]
pub struct EigenPartition {
    basis: Array2<f64>,
    identity: bool,
    lambda: Vec<f64>,
    k: usize,
    m: usize,
    rho: f64,
}

/// Split `spec`'s eigenbasis for a rank-`k` target with closeness threshold
/// `rho ∈ (0,1)`. Requires `1 ≤ k < d` so the complement is nonempty.
pub fn partition(spec: &Spectrum, k: usize, rho: f64) -> Result<EigenPartition> {
    let d = spec.dim();
    if k == 0 || k >= d {
        return Err(Error::invalid(format!(
            "partition needs 1 ≤ k < d, got k = {k}, d = {d}"
        )));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::invalid(format!(
            "closeness threshold must lie in (0,1), got {rho}"
        )));
    }
    let lambda = spec.eigenvalues().to_vec();
    let thresh = lambda[k - 1] - rho;
    let mut m = 0usize;
    while k + m < d && lambda[k + m] > thresh {
        m += 1;
    }
    Ok(EigenPartition {
        basis: spec.dense_basis(),
        identity: spec.is_identity_basis(),
        lambda,
        k,
        m,
        rho,
    })
}

impl EigenPartition {
    /// Ambient dimension `d`.
    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    /// Target rank `k`.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of complement eigenvalues above `λ_k − ρ` (excluded from `W`).
    pub fn m(&self) -> usize {
        self.m
    }

    /// Width of `W` (possibly zero).
    pub fn w_width(&self) -> usize {
        self.dim() - self.k - self.m
    }

    /// Closeness threshold `ρ`.
    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Eigenvalues, descending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.lambda
    }

    /// The target block `V` (`d×k`).
    pub fn v(&self) -> ArrayView2<'_, f64> {
        self.basis.slice(s![.., ..self.k])
    }

    /// The complement `Z` (`d×(d−k)`).
    pub fn z(&self) -> ArrayView2<'_, f64> {
        self.basis.slice(s![.., self.k..])
    }

    /// The well-separated tail `W` (`d×(d−k−m)`, possibly zero columns).
    pub fn w(&self) -> ArrayView2<'_, f64> {
        self.basis.slice(s![.., self.k + self.m..])
    }
}

/// Squared overlap `‖XᵀQ‖²_F`. Zero-width `X` gives 0.
pub fn frob_corr(q: &ArrayView2<f64>, x: &ArrayView2<f64>) -> Result<f64> {
    if x.nrows() != q.nrows() {
        return Err(Error::DimMismatch(format!(
            "row counts differ: {} vs {}",
            x.nrows(),
            q.nrows()
        )));
    }
    let mut total = 0.0;
    for j in 0..q.ncols() {
        let qj = q.column(j);
        for i in 0..x.ncols() {
            let v = x.column(i).dot(&qj);
            total += v * v;
        }
    }
    Ok(total)
}

/// Squared spectral overlap `‖XᵀQ‖²_2`, via power iteration on the smaller
/// Gram matrix of `XᵀQ` (relative tolerance [`POWER_TOL`]).
pub fn spectral_corr(q: &ArrayView2<f64>, x: &ArrayView2<f64>) -> Result<f64> {
    if x.nrows() != q.nrows() {
        return Err(Error::DimMismatch(format!(
            "row counts differ: {} vs {}",
            x.nrows(),
            q.nrows()
        )));
    }
    let g = x.t().dot(q);
    Ok(largest_gram_eigenvalue(&g.view()))
}

/// Largest eigenvalue of `GᵀG` (equivalently `GGᵀ`), i.e. `‖G‖²_2`.
fn largest_gram_eigenvalue(g: &ArrayView2<f64>) -> f64 {
    let (r, c) = (g.nrows(), g.ncols());
    if r == 0 || c == 0 {
        return 0.0;
    }
    let gram = if c <= r { g.t().dot(g) } else { g.dot(&g.t()) };
    power_iteration_psd(&gram)
}

/// Power iteration for the top eigenvalue of a symmetric PSD matrix. The
/// start vector carries a deterministic tilt so structured inputs don't hide
/// their leading eigenvector in the orthogonal complement of a uniform start.
fn power_iteration_psd(m: &Array2<f64>) -> f64 {
    let n = m.nrows();
    let mut v = Array1::from_iter((0..n).map(|i| 1.0 + 1e-3 * (i as f64 + 1.0)));
    let norm = v.dot(&v).sqrt();
    v /= norm;
    let mut lam = 0.0;
    for iter in 0..POWER_MAX_ITERS {
        let u = m.dot(&v);
        let new_lam = v.dot(&u);
        let un = u.dot(&u).sqrt();
        if un == 0.0 {
            return 0.0;
        }
        v = u / un;
        if iter >= 10 && (new_lam - lam).abs() <= POWER_TOL * new_lam.abs().max(1.0) {
            return new_lam.max(0.0);
        }
        lam = new_lam;
    }
    lam.max(0.0)
}

/// Rayleigh quotients `q_iᵀ Σ q_i` of explicitly orthonormal columns against
/// the spectrum's covariance, computed by eigenbasis expansion. Rejects
/// inputs that are not orthonormal within [`ORTHO_TOL`].
pub fn rayleigh_quotients(q: &ArrayView2<f64>, spec: &Spectrum) -> Result<Vec<f64>> {
    let d = spec.dim();
    if q.nrows() != d {
        return Err(Error::DimMismatch(format!(
            "columns have dim {}, spectrum has dim {d}",
            q.nrows()
        )));
    }
    for i in 0..q.ncols() {
        for j in i..q.ncols() {
            let dot = q.column(i).dot(&q.column(j));
            let want = if i == j { 1.0 } else { 0.0 };
            if (dot - want).abs() > ORTHO_TOL {
                return Err(Error::invalid(format!(
                    "columns are not orthonormal: |q_{i}·q_{j} − {want}| = {}",
                    (dot - want).abs()
                )));
            }
        }
    }
    let coords = if spec.is_identity_basis() {
        q.to_owned()
    } else {
        spec.dense_basis().t().dot(q)
    };
    let lambda = spec.eigenvalues();
    Ok((0..q.ncols())
        .map(|j| {
            coords
                .column(j)
                .iter()
                .zip(lambda)
                .map(|(c, l)| l * c * c)
                .sum()
        })
        .collect())
}

/// LU factorization with partial pivoting plus the diagonal-ratio condition
/// estimate used to flag near-singular systems.
struct Lu {
    lu: Array2<f64>,
    piv: Vec<usize>,
    cond_est: f64,
}

fn lu_factor(a: &ArrayView2<f64>) -> Option<Lu> {
    let n = a.nrows();
    let mut lu = a.to_owned();
    let mut piv = vec![0usize; n];
    for col in 0..n {
        let mut p = col;
        let mut best = lu[(col, col)].abs();
        for r in col + 1..n {
            let v = lu[(r, col)].abs();
            if v > best {
                best = v;
                p = r;
            }
        }
        if best == 0.0 || !best.is_finite() {
            return None;
        }
        piv[col] = p;
        if p != col {
            for c in 0..n {
                let tmp = lu[(col, c)];
                lu[(col, c)] = lu[(p, c)];
                lu[(p, c)] = tmp;
            }
        }
        let pivval = lu[(col, col)];
        for r in col + 1..n {
            let f = lu[(r, col)] / pivval;
            lu[(r, col)] = f;
            for c in col + 1..n {
                lu[(r, c)] -= f * lu[(col, c)];
            }
        }
    }
    let mut dmax: f64 = 0.0;
    let mut dmin = f64::INFINITY;
    for i in 0..n {
        let v = lu[(i, i)].abs();
        dmax = dmax.max(v);
        dmin = dmin.min(v);
    }
    let cond_est = if dmin == 0.0 { f64::INFINITY } else { dmax / dmin };
    Some(Lu { lu, piv, cond_est })
}

impl Lu {
    fn solve_in_place(&self, b: &mut Array1<f64>) {
        let n = b.len();
        for col in 0..n {
            let p = self.piv[col];
            if p != col {
                b.swap(col, p);
            }
        }
        for r in 1..n {
            let mut acc = b[r];
            for c in 0..r {
                acc -= self.lu[(r, c)] * b[c];
            }
            b[r] = acc;
        }
        for r in (0..n).rev() {
            let mut acc = b[r];
            for c in r + 1..n {
                acc -= self.lu[(r, c)] * b[c];
            }
            b[r] = acc / self.lu[(r, r)];
        }
    }
}

/// `M = B·A⁻¹` via LU with partial pivoting on `Aᵀ`. `None` when `A` is
/// singular or the condition estimate exceeds [`COND_LIMIT`].
fn right_solve(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    debug_assert_eq!(a.ncols(), n);
    debug_assert_eq!(b.ncols(), n);
    let at = a.t().to_owned();
    let lu = lu_factor(&at.view())?;
    if !lu.cond_est.is_finite() || lu.cond_est > COND_LIMIT {
        return None;
    }
    let mut m = Array2::zeros((b.nrows(), n));
    let mut rhs = Array1::zeros(n);
    for r in 0..b.nrows() {
        rhs.assign(&b.row(r));
        lu.solve_in_place(&mut rhs);
        m.row_mut(r).assign(&rhs);
    }
    Some(m)
}

fn frob_norm(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Conditioned overlap ratio `‖XᵀQ_t·(VᵀQ_t)⁻¹‖_F`; `+∞` when `VᵀQ_t` is
/// singular or its condition estimate exceeds [`COND_LIMIT`].
pub fn analysis_ratio(q_t: &ArrayView2<f64>, x: &ArrayView2<f64>, v: &ArrayView2<f64>) -> Result<f64> {
    let d = q_t.nrows();
    if x.nrows() != d || v.nrows() != d {
        return Err(Error::DimMismatch(format!(
            "row counts differ: q {d}, x {}, v {}",
            x.nrows(),
            v.nrows()
        )));
    }
    if v.ncols() != q_t.ncols() {
        return Err(Error::DimMismatch(format!(
            "overlap must be square: v has {} columns, q has {}",
            v.ncols(),
            q_t.ncols()
        )));
    }
    let a = v.t().dot(q_t);
    let b = x.t().dot(q_t);
    Ok(match right_solve(&a.view(), &b.view()) {
        Some(m) => frob_norm(&m),
        None => f64::INFINITY,
    })
}

/// Per-sample alignment `‖xᵀQ·(VᵀQ)⁻¹‖_2`; `+∞` on a singular or
/// ill-conditioned overlap.
pub fn sample_alignment(
    x: &ndarray::ArrayView1<f64>,
    q: &ArrayView2<f64>,
    v: &ArrayView2<f64>,
) -> Result<f64> {
    let d = q.nrows();
    if x.len() != d || v.nrows() != d {
        return Err(Error::DimMismatch(format!(
            "row counts differ: q {d}, x {}, v {}",
            x.len(),
            v.nrows()
        )));
    }
    if v.ncols() != q.ncols() {
        return Err(Error::DimMismatch(format!(
            "overlap must be square: v has {} columns, q has {}",
            v.ncols(),
            q.ncols()
        )));
    }
    let a = v.t().dot(q);
    let r = q.t().dot(x).insert_axis(Axis(0));
    Ok(match right_solve(&a.view(), &r.view()) {
        Some(m) => frob_norm(&m),
        None => f64::INFINITY,
    })
}

/// Initialization quality: `xi_z = ‖ZᵀQ₀(VᵀQ₀)⁻¹‖²_F` and, per eigenvector,
/// `per_vec[j] = ‖ν_jᵀ Z ZᵀQ₀(VᵀQ₀)⁻¹‖_2` for all `j` (exactly 0 for
/// `j ≤ k`, since those eigenvectors are orthogonal to `Z`).
#[derive(Debug, Clone)]
pub struct InitDiagnostics {
    pub xi_z: f64,
    pub per_vec: Vec<f64>,
}

/// Compute [`InitDiagnostics`] for an initial sketch against a partition.
/// A singular `VᵀQ₀` yields `+∞` sentinels.
pub fn init_diagnostics(q0: &ArrayView2<f64>, part: &EigenPartition) -> Result<InitDiagnostics> {
    let d = part.dim();
    let k = part.k;
    if q0.nrows() != d || q0.ncols() != k {
        return Err(Error::DimMismatch(format!(
            "initial sketch must be {d}×{k}, got {}×{}",
            q0.nrows(),
            q0.ncols()
        )));
    }
    let a = part.v().t().dot(q0);
    let b = part.z().t().dot(q0);
    match right_solve(&a.view(), &b.view()) {
        Some(g) => {
            let xi_z = g.iter().map(|v| v * v).sum();
            let mut per_vec = vec![0.0; d];
            for r in 0..d - k {
                per_vec[k + r] = g.row(r).dot(&g.row(r)).sqrt();
            }
            Ok(InitDiagnostics { xi_z, per_vec })
        }
        None => {
            let mut per_vec = vec![0.0; d];
            for entry in per_vec.iter_mut().skip(k) {
                *entry = f64::INFINITY;
            }
            Ok(InitDiagnostics {
                xi_z: f64::INFINITY,
                per_vec,
            })
        }
    }
}

/// One observation row: residual masses, spectral residual, per-column
/// Rayleigh quotients (`NaN` marks a zero column), and the conditioned
/// diagnostics. `a_t` is `NaN` at `t = 0`, where no driving sample exists.
#[derive(Debug, Clone)]
pub struct MetricRecord {
    pub t: u64,
    pub frob_w: f64,
    pub frob_z: f64,
    pub spec_w: f64,
    pub rayleigh: Vec<f64>,
    pub rayleigh_min_slack: f64,
    pub a_t: f64,
    pub s_t: f64,
    pub s_prime_t: f64,
}

/// Evaluates [`MetricRecord`]s for sketch states against a fixed partition.
///
/// Partially-filled states (from the staged runner) are measured on their
/// active column prefix: the residual masses `frob_*`/`spec_w` are unchanged
/// by zero columns, the `i`-th active column's Rayleigh slack compares
/// against `λ_i`, and the conditioned diagnostics use the top-`k_a` split
/// of the eigenbasis, where `k_a` is the number of active columns.
#[derive(Debug, Clone)]
pub struct MetricEngine {
    part: EigenPartition,
}

impl MetricEngine {
    pub fn new(part: EigenPartition) -> Self {
        MetricEngine { part }
    }

    pub fn partition(&self) -> &EigenPartition {
        &self.part
    }

    fn coords(&self, q: &Array2<f64>) -> Array2<f64> {
        if self.part.identity {
            q.clone()
        } else {
            self.part.basis.t().dot(q)
        }
    }

    /// Evaluate one observation. Panics on a state whose shape disagrees with
    /// the partition (a wiring error, not a data error).
    pub fn record(&self, ctx: &ObserveCtx<'_>) -> MetricRecord {
        let st = ctx.state;
        let d = self.part.dim();
        let k = self.part.k;
        let m = self.part.m;
        assert_eq!(st.q().nrows(), d, "state dimension disagrees with partition");
        assert_eq!(st.q().ncols(), k, "state rank disagrees with partition");

        let coords = self.coords(st.q());
        let frob_z: f64 = coords.slice(s![k.., ..]).iter().map(|v| v * v).sum();
        let frob_w: f64 = coords.slice(s![k + m.., ..]).iter().map(|v| v * v).sum();
        let spec_w = largest_gram_eigenvalue(&coords.slice(s![k + m.., ..]));

        let lambda = &self.part.lambda;
        let mut rayleigh = vec![f64::NAN; k];
        let mut min_slack = f64::NAN;
        let mut active_idx = Vec::with_capacity(k);
        for j in 0..k {
            if !st.active()[j] {
                continue;
            }
            let val: f64 = coords
                .column(j)
                .iter()
                .zip(lambda)
                .map(|(c, l)| l * c * c)
                .sum();
            rayleigh[j] = val;
            let slack = val - lambda[active_idx.len()];
            if min_slack.is_nan() || slack < min_slack {
                min_slack = slack;
            }
            active_idx.push(j);
        }

        let (s_t, s_prime_t) = if active_idx.is_empty() {
            (f64::INFINITY, f64::INFINITY)
        } else {
            let ca = coords.select(Axis(1), &active_idx);
            let k_a = active_idx.len();
            let a = ca.slice(s![..k_a, ..]);
            let s_t = match right_solve(&a, &ca.slice(s![k_a.., ..])) {
                Some(sol) => frob_norm(&sol),
                None => f64::INFINITY,
            };
            let s_prime_t = match right_solve(&a, &ca.slice(s![k + m.., ..])) {
                Some(sol) => frob_norm(&sol),
                None => f64::INFINITY,
            };
            (s_t, s_prime_t)
        };

        let a_t = match (ctx.prev, ctx.x) {
            (Some(prev), Some(x)) => self.alignment_of(prev, x),
            _ => f64::NAN,
        };

        debug_assert!(frob_w <= frob_z + 1e-9);
        debug_assert!(frob_z <= k as f64 + 1e-9);
        debug_assert!(spec_w <= frob_w + 1e-9);

        MetricRecord {
            t: st.t(),
            frob_w,
            frob_z,
            spec_w,
            rayleigh,
            rayleigh_min_slack: min_slack,
            a_t,
            s_t,
            s_prime_t,
        }
    }

    /// `‖xᵀQ_a(V_aᵀQ_a)⁻¹‖_2` on the state's active prefix; `NaN` with no
    /// active columns, `+∞` on a singular overlap.
    fn alignment_of(&self, prev: &SketchState, x: &Array1<f64>) -> f64 {
        let active_idx: Vec<usize> = (0..prev.q().ncols())
            .filter(|&j| prev.active()[j])
            .collect();
        if active_idx.is_empty() {
            return f64::NAN;
        }
        let k_a = active_idx.len();
        let coords = self.coords(prev.q());
        let ca = coords.select(Axis(1), &active_idx);
        let a = ca.slice(s![..k_a, ..]);
        let qa = prev.q().select(Axis(1), &active_idx);
        let r = qa.t().dot(x).insert_axis(Axis(0));
        match right_solve(&a, &r.view()) {
            Some(sol) => frob_norm(&sol),
            None => f64::INFINITY,
        }
    }
}
