//! Ground-truth covariance spectra and seeded sample streams with exactly
//! known second moments.
//!
//! A [`Spectrum`] is an explicit eigendecomposition (nonincreasing eigenvalues
//! summing to at most 1, orthonormal basis). A [`SampleSource`] draws unit-or-
//! shorter vectors whose population covariance is available in closed form via
//! [`SampleSource::true_sigma`], which is what makes sharp moment tests and
//! exact error metrics possible:
//!
//! * the discrete eigenvector sampler emits eigenvector `i` with probability
//!   `λ_i` (zero vector with the leftover mass), so `E[xxᵀ]` equals the
//!   spectrum *exactly* rather than up to estimator bias;
//! * the hard-instance source hides a bit vector `z` inside `k` two-dimensional
//!   blocks, emitting one of two nearly indistinguishable unit vectors per
//!   block with a bias `ε` calibrated against the stream length;
//! * the padding wrapper concatenates independent scaled copies to trade an
//!   eigengap for eigenvalue multiplicity at fixed trace.

use ndarray::{Array1, Array2, ArrayViewMut1};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::oja;
use crate::rng;

/// Slack on the unit trace budget: pure accumulation roundoff at `d ≤ 1024`.
pub const TRACE_SLACK: f64 = 1e-12;
/// Entrywise orthonormality tolerance for stored bases.
pub const BASIS_ORTHO_TOL: f64 = 1e-10;
/// Norm slack allowed on emitted samples (they are exactly unit or zero up to
/// roundoff in the scaled concatenation path).
pub const SAMPLE_NORM_SLACK: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Spectrum
// ---------------------------------------------------------------------------

/// An explicit covariance eigendecomposition: `Σ = Σ_i λ_i ν_i ν_iᵀ` with
/// `λ_1 ≥ … ≥ λ_d ≥ 0` and `Σ_i λ_i ≤ 1`.
///
/// The basis is optional; `None` means the identity (eigenvectors are the
/// standard coordinates). Stored eigenvectors follow a deterministic sign
/// convention: the first nonzero coordinate of each column is positive.
#[derive(Debug, Clone)]
pub struct Spectrum {
    eigenvalues: Vec<f64>,
    basis: Option<Array2<f64>>,
}

impl Spectrum {
    /// Validate and build a spectrum. Rejects unsorted/negative/non-finite
    /// eigenvalue lists, trace above `1 + TRACE_SLACK`, and non-orthonormal
    /// bases. An explicit basis is sign-normalized in place.
    pub fn new(eigenvalues: Vec<f64>, basis: Option<Array2<f64>>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::invalid("spectrum needs at least one eigenvalue"));
        }
        for (i, &l) in eigenvalues.iter().enumerate() {
            if !l.is_finite() || l < 0.0 {
                return Err(Error::invalid(format!(
                    "eigenvalue λ_{} = {l} must be finite and ≥ 0",
                    i + 1
                )));
            }
        }
        for i in 1..eigenvalues.len() {
            if eigenvalues[i] > eigenvalues[i - 1] {
                return Err(Error::invalid(format!(
                    "eigenvalues must be nonincreasing: λ_{} = {} > λ_{} = {}",
                    i + 1,
                    eigenvalues[i],
                    i,
                    eigenvalues[i - 1]
                )));
            }
        }
        let trace: f64 = eigenvalues.iter().sum();
        if trace > 1.0 + TRACE_SLACK {
            return Err(Error::TraceBudget(format!(
                "eigenvalue sum {trace} > 1 for λ = {eigenvalues:?}"
            )));
        }
        let basis = match basis {
            None => None,
            Some(mut b) => {
                let d = eigenvalues.len();
                if b.nrows() != d || b.ncols() != d {
                    return Err(Error::DimMismatch(format!(
                        "basis is {}×{}, want {d}×{d}",
                        b.nrows(),
                        b.ncols()
                    )));
                }
                let gram = b.t().dot(&b);
                for i in 0..d {
                    for j in 0..d {
                        let want = if i == j { 1.0 } else { 0.0 };
                        if (gram[(i, j)] - want).abs() > BASIS_ORTHO_TOL {
                            return Err(Error::invalid(format!(
                                "basis not orthonormal: |(BᵀB)_{{{i},{j}}} − {want}| = {} > {BASIS_ORTHO_TOL}",
                                (gram[(i, j)] - want).abs()
                            )));
                        }
                    }
                }
                for mut col in b.columns_mut() {
                    oja::positive_leading_sign(&mut col);
                }
                Some(b)
            }
        };
        Ok(Spectrum { eigenvalues, basis })
    }

    /// Ambient dimension `d`.
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Eigenvalues, nonincreasing.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `Σ_i λ_i`.
    pub fn trace(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    /// `λ_a + … + λ_b` for 1-based inclusive indices, clamped to the spectrum.
    pub fn eigenvalue_sum(&self, a: usize, b: usize) -> f64 {
        if a > b || a > self.dim() {
            return 0.0;
        }
        let hi = b.min(self.dim());
        self.eigenvalues[a - 1..hi].iter().sum()
    }

    /// Whether the basis is the implicit identity.
    pub fn is_identity_basis(&self) -> bool {
        self.basis.is_none()
    }

    /// The eigenvector matrix, materializing the identity if implicit.
    pub fn dense_basis(&self) -> Array2<f64> {
        match &self.basis {
            Some(b) => b.clone(),
            None => Array2::eye(self.dim()),
        }
    }

    /// Write eigenvector `j` (0-based) into `out`.
    pub fn eigvec_into(&self, j: usize, out: &mut ArrayViewMut1<f64>) {
        match &self.basis {
            Some(b) => out.assign(&b.column(j)),
            None => {
                out.fill(0.0);
                out[j] = 1.0;
            }
        }
    }

    /// Dense `Σ = B·diag(λ)·Bᵀ` for Frobenius comparisons against empirical
    /// covariances.
    pub fn dense_sigma(&self) -> Array2<f64> {
        let d = self.dim();
        match &self.basis {
            None => Array2::from_diag(&Array1::from(self.eigenvalues.clone())),
            Some(b) => {
                let mut scaled = b.clone();
                for (j, mut col) in scaled.columns_mut().into_iter().enumerate() {
                    col *= self.eigenvalues[j];
                }
                let mut sigma = scaled.dot(&b.t());
                // Symmetrize away the last ulp so downstream symmetry checks are exact.
                for i in 0..d {
                    for j in 0..i {
                        let m = 0.5 * (sigma[(i, j)] + sigma[(j, i)]);
                        sigma[(i, j)] = m;
                        sigma[(j, i)] = m;
                    }
                }
                sigma
            }
        }
    }

    /// Plain-text form: one eigenvalue per line (descending), then an optional
    /// `basis` marker followed by `d` rows of `d` space-separated floats
    /// (row-major). Floats use shortest round-trip formatting.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for l in &self.eigenvalues {
            s.push_str(&format!("{l}\n"));
        }
        if let Some(b) = &self.basis {
            s.push_str("basis\n");
            for i in 0..b.nrows() {
                let row: Vec<String> = (0..b.ncols()).map(|j| format!("{}", b[(i, j)])).collect();
                s.push_str(&row.join(" "));
                s.push('\n');
            }
        }
        s
    }

    /// Inverse of [`Spectrum::to_text`]. Lines starting with `#` are ignored.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut eigenvalues = Vec::new();
        let mut lines = text.lines().filter(|l| !l.trim_start().starts_with('#'));
        let mut basis_rows: Vec<Vec<f64>> = Vec::new();
        let mut in_basis = false;
        for line in &mut lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if line == "basis" {
                in_basis = true;
                continue;
            }
            if !in_basis {
                let v: f64 = line
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad eigenvalue line {line:?}")))?;
                eigenvalues.push(v);
            } else {
                let row: Result<Vec<f64>> = line
                    .split_whitespace()
                    .map(|tok| {
                        tok.parse::<f64>()
                            .map_err(|_| Error::invalid(format!("bad basis entry {tok:?}")))
                    })
                    .collect();
                basis_rows.push(row?);
            }
        }
        let d = eigenvalues.len();
        let basis = if basis_rows.is_empty() {
            None
        } else {
            if basis_rows.len() != d || basis_rows.iter().any(|r| r.len() != d) {
                return Err(Error::DimMismatch(format!(
                    "basis block must be {d}×{d} to match {d} eigenvalues"
                )));
            }
            let mut b = Array2::zeros((d, d));
            for (i, row) in basis_rows.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    b[(i, j)] = v;
                }
            }
            Some(b)
        };
        Spectrum::new(eigenvalues, basis)
    }
}

// ---------------------------------------------------------------------------
// Spectrum recipes
// ---------------------------------------------------------------------------

/// Named ways of building a spectrum.
#[derive(Debug, Clone)]
pub enum SpectrumRecipe {
    /// Top `k` eigenvalues equal to `lambda_top`, the remaining `d−k` equal to
    /// `lambda_top − gap`.
    FlatGap { lambda_top: f64, gap: f64 },
    /// `λ_i = first · ratio^{i−1}`.
    Geometric { first: f64, ratio: f64 },
    /// Top `k` at `lambda_top`; `m` extra eigenvalues spread evenly inside
    /// `(lambda_top − rho, lambda_top)`; the rest at `lambda_tail`
    /// (which must sit at or below `lambda_top − rho`).
    Clustered {
        lambda_top: f64,
        rho: f64,
        m: usize,
        lambda_tail: f64,
    },
    /// Eigenvalues given verbatim.
    Explicit { eigenvalues: Vec<f64> },
}

/// Build a spectrum from a recipe with the implicit identity basis.
/// Rejects any construction whose eigenvalue sum exceeds the unit trace
/// budget, naming the offending sum.
pub fn make_spectrum(recipe: &SpectrumRecipe, d: usize, k: usize) -> Result<Spectrum> {
    if d == 0 || k == 0 || k > d {
        return Err(Error::invalid(format!("need d ≥ k ≥ 1, got d={d}, k={k}")));
    }
    let eigenvalues = match recipe {
        SpectrumRecipe::FlatGap { lambda_top, gap } => {
            if !(*lambda_top > 0.0) || !(*gap >= 0.0) || gap > lambda_top {
                return Err(Error::invalid(format!(
                    "flat-gap needs 0 ≤ gap ≤ λ_top and λ_top > 0, got λ_top={lambda_top}, gap={gap}"
                )));
            }
            let tail = lambda_top - gap;
            let mut l = vec![*lambda_top; k];
            l.extend(std::iter::repeat(tail).take(d - k));
            l
        }
        SpectrumRecipe::Geometric { first, ratio } => {
            if !(*first > 0.0) || !(*ratio > 0.0) || *ratio > 1.0 {
                return Err(Error::invalid(format!(
                    "geometric needs first > 0 and ratio ∈ (0, 1], got first={first}, ratio={ratio}"
                )));
            }
            let mut l = Vec::with_capacity(d);
            let mut v = *first;
            for _ in 0..d {
                l.push(v);
                v *= ratio;
            }
            l
        }
        SpectrumRecipe::Clustered {
            lambda_top,
            rho,
            m,
            lambda_tail,
        } => {
            if !(*lambda_top > 0.0) || !(*rho > 0.0) {
                return Err(Error::invalid(format!(
                    "clustered needs λ_top > 0 and rho > 0, got λ_top={lambda_top}, rho={rho}"
                )));
            }
            if k + m > d {
                return Err(Error::invalid(format!(
                    "clustered needs k + m ≤ d, got k={k}, m={m}, d={d}"
                )));
            }
            if *lambda_tail < 0.0 || *lambda_tail > lambda_top - rho {
                return Err(Error::invalid(format!(
                    "clustered tail must sit outside the cluster band: need 0 ≤ λ_tail ≤ λ_top − rho, got λ_tail={lambda_tail}, λ_top − rho={}",
                    lambda_top - rho
                )));
            }
            let mut l = vec![*lambda_top; k];
            // Evenly spaced strictly inside (λ_top − rho, λ_top): the j-th
            // cluster value is λ_top − rho·j/(m+1).
            for j in 1..=*m {
                l.push(lambda_top - rho * j as f64 / (*m as f64 + 1.0));
            }
            l.extend(std::iter::repeat(*lambda_tail).take(d - k - m));
            l
        }
        SpectrumRecipe::Explicit { eigenvalues } => {
            if eigenvalues.len() != d {
                return Err(Error::DimMismatch(format!(
                    "explicit list has {} entries, want d={d}",
                    eigenvalues.len()
                )));
            }
            eigenvalues.clone()
        }
    };
    Spectrum::new(eigenvalues, None)
}

/// A uniformly random orthonormal basis: orthonormalized standard Gaussian
/// columns, deterministic for a fixed seed.
pub fn haar_basis(d: usize, seed: u64) -> Result<Array2<f64>> {
    if d == 0 {
        return Err(Error::invalid("haar_basis needs d ≥ 1"));
    }
    // A d×d Gaussian matrix is full-rank outside a null set; on the freak draw
    // that collapses a column we re-derive a fresh stream rather than loop on
    // the same bytes.
    for attempt in 0..16u64 {
        let mut gen = rng::rng_from_seed(rng::derive_seed(seed, attempt));
        let mut m = Array2::zeros((d, d));
        for i in 0..d {
            for j in 0..d {
                m[(i, j)] = gen.sample::<f64, _>(rand_distr::StandardNormal);
            }
        }
        let active = oja::qr_orthonormalize(&mut m);
        if active.iter().all(|&a| a) {
            return Ok(m);
        }
    }
    Err(Error::Numerical(
        "haar_basis: 16 consecutive rank-deficient Gaussian draws".into(),
    ))
}

// ---------------------------------------------------------------------------
// 2×2 closed forms for the hard-instance blocks
// ---------------------------------------------------------------------------

/// Closed-form eigenstructure of the two 2×2 block covariances behind the
/// hard-instance stream: the balanced mixture `A = ½aaᵀ + ½bbᵀ` and the
/// ε-biased mixture `B = (½+ε)aaᵀ + (½−ε)bbᵀ` of the unit vectors
/// `a = (β, √(1−β²))`, `b = (β, −√(1−β²))`.
#[derive(Debug, Clone)]
pub struct Lemma2x2 {
    pub beta: f64,
    pub eps: f64,
    pub a_vec: [f64; 2],
    pub b_vec: [f64; 2],
    /// The balanced mixture; diagonal `(β², 1−β²)` with exactly zero off-diagonal.
    pub mat_a: [[f64; 2]; 2],
    /// The biased mixture; off-diagonal `2εβ√(1−β²)`.
    pub mat_b: [[f64; 2]; 2],
    /// Eigenvalues of `A`, descending: `(β², 1−β²)`.
    pub eigvals_a: [f64; 2],
    /// Unit eigenvectors of `A` as columns (identity).
    pub eigvecs_a: [[f64; 2]; 2],
    /// Eigenvalues of `B`, descending; they straddle those of `A` and sum to 1.
    pub eigvals_b: [f64; 2],
    /// Unit eigenvectors of `B` as columns: `(1, s_i)/√(1+s_i²)`.
    pub eigvecs_b: [[f64; 2]; 2],
    /// The slopes `s_1 > 0 > s_2` with `s_1·s_2 = −1`.
    pub s_roots: [f64; 2],
}

/// Compute [`Lemma2x2`]. Requires `β ∈ (√2/2, √3/2)` (so the diagonal gap
/// `2β²−1` lies in `(0, 1/2)`) and `ε ∈ (0, 2β²−1]`.
pub fn lemma_2x2(beta: f64, eps: f64) -> Result<Lemma2x2> {
    let lo = std::f64::consts::SQRT_2 / 2.0;
    let hi = 3.0f64.sqrt() / 2.0;
    if !(beta > lo && beta < hi) {
        return Err(Error::invalid(format!(
            "need β ∈ (√2/2, √3/2) ≈ ({lo:.6}, {hi:.6}), got β = {beta}"
        )));
    }
    let beta_sq = beta * beta;
    let diag_gap = 2.0 * beta_sq - 1.0;
    if !(eps > 0.0 && eps <= diag_gap) {
        return Err(Error::invalid(format!(
            "need ε ∈ (0, 2β²−1] = (0, {diag_gap}], got ε = {eps}"
        )));
    }
    Ok(lemma_2x2_unchecked(beta, eps))
}

/// The closed forms without the domain gate; shared with the hard-instance
/// covariance assembly, which needs the boundary case `β = √3/2` (reached
/// exactly at `δ = λ/2`).
fn lemma_2x2_unchecked(beta: f64, eps: f64) -> Lemma2x2 {
    let beta_sq = beta * beta;
    let diag_gap = 2.0 * beta_sq - 1.0;
    let w = (1.0 - beta_sq).sqrt();
    let a_vec = [beta, w];
    let b_vec = [beta, -w];
    let mix = |pa: f64, pb: f64| -> [[f64; 2]; 2] {
        let mut m = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                m[i][j] = pa * a_vec[i] * a_vec[j] + pb * b_vec[i] * b_vec[j];
            }
        }
        m
    };
    let mat_a = mix(0.5, 0.5);
    let mat_b = mix(0.5 + eps, 0.5 - eps);

    // Eigensystem of B from the characteristic slopes: the off-diagonal is
    // c = 2εβ√(1−β²); the slopes solve s² + ((2β²−1)/c)·s − 1 = 0. The positive
    // root is evaluated as 2/(α+√(α²+4)) to dodge cancellation when ε is tiny.
    let c_off = 2.0 * eps * beta * w;
    let alpha = diag_gap / c_off;
    let disc = (alpha * alpha + 4.0).sqrt();
    let s1 = 2.0 / (alpha + disc);
    let s2 = -(alpha + disc) / 2.0;
    let lam = |s: f64| beta_sq + c_off * s;
    let unit = |s: f64| -> [f64; 2] {
        let n = (1.0 + s * s).sqrt();
        [1.0 / n, s / n]
    };
    let v1 = unit(s1);
    let v2 = unit(s2);

    Lemma2x2 {
        beta,
        eps,
        a_vec,
        b_vec,
        mat_a,
        mat_b,
        eigvals_a: [beta_sq, 1.0 - beta_sq],
        eigvecs_a: [[1.0, 0.0], [0.0, 1.0]],
        eigvals_b: [lam(s1), lam(s2)],
        eigvecs_b: [[v1[0], v2[0]], [v1[1], v2[1]]],
        s_roots: [s1, s2],
    }
}

// ---------------------------------------------------------------------------
// Sample sources
// ---------------------------------------------------------------------------

/// Parameters of the hard-instance stream over `R^{2k}`.
#[derive(Debug, Clone)]
pub struct HardInstance {
    pub k: usize,
    pub lambda: f64,
    pub delta: f64,
    /// Stream length the bias was calibrated against.
    pub t_design: u64,
    /// Hidden bit per block: 0 = balanced mixture, 1 = ε-biased mixture.
    pub z: Vec<bool>,
    pub beta: f64,
    /// Calibrated bias `ε = min(δ/λ, √(C_ε·β²/(2λT)))`.
    pub eps: f64,
    /// Exposed bias-calibration constant `C_ε`.
    pub c_eps: f64,
    /// Exposed floor constant `c` in the admissibility requirement `T ≥ c·λ/δ²`.
    pub c_floor: f64,
}

/// How a [`SampleSource`] generates draws.
#[derive(Debug, Clone)]
enum SourceKind {
    /// Emits eigenvector `i` of `spectrum` with probability `λ_i`, else zero.
    DiscreteEigen { spectrum: Spectrum, cum: Vec<f64> },
    /// The blockwise hard instance.
    Hard(HardInstance),
    /// `copies` independent inner draws concatenated and scaled by `1/√copies`;
    /// copies beyond the first get an independent random sign so the cross-copy
    /// covariance blocks vanish exactly (sign flips are invisible to anything
    /// quadratic in the sample).
    Padded {
        inner: Box<SampleSource>,
        copies: usize,
    },
}

/// A seeded vector stream with `‖x‖₂ ≤ 1` and closed-form `E[xxᵀ]`.
/// Value-like: cloning yields an identical replayable stream.
#[derive(Debug, Clone)]
pub struct SampleSource {
    kind: SourceKind,
    gen: ChaCha8Rng,
    dim: usize,
}

impl SampleSource {
    /// Ambient dimension of emitted samples.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Draw the next sample into `out` (length `dim`).
    pub fn sample_into(&mut self, out: &mut Array1<f64>) {
        debug_assert_eq!(out.len(), self.dim);
        match &mut self.kind {
            SourceKind::DiscreteEigen { spectrum, cum } => {
                let u: f64 = self.gen.random();
                // First index with cumulative mass above u; d on a zero draw.
                let idx = cum.partition_point(|&c| c <= u);
                out.fill(0.0);
                if idx < cum.len() {
                    let mut view = out.view_mut();
                    spectrum.eigvec_into(idx, &mut view);
                }
            }
            SourceKind::Hard(h) => {
                out.fill(0.0);
                let y: f64 = self.gen.random();
                let beta_sq = h.beta * h.beta;
                if y > h.k as f64 * h.lambda / beta_sq {
                    return; // dead round: emit the zero vector
                }
                let i = self.gen.random_range(0..h.k);
                let bias = if h.z[i] { h.eps } else { 0.0 };
                let u: f64 = self.gen.random();
                let second = (1.0 - beta_sq).sqrt();
                out[2 * i] = h.beta;
                out[2 * i + 1] = if u < 0.5 + bias { second } else { -second };
            }
            SourceKind::Padded { inner, copies } => {
                let d_in = inner.dim();
                let scale = 1.0 / (*copies as f64).sqrt();
                let mut buf = Array1::zeros(d_in);
                for c in 0..*copies {
                    inner.sample_into(&mut buf);
                    let sign = if c == 0 {
                        1.0
                    } else if self.gen.random::<f64>() < 0.5 {
                        1.0
                    } else {
                        -1.0
                    };
                    for j in 0..d_in {
                        out[c * d_in + j] = sign * scale * buf[j];
                    }
                }
            }
        }
    }

    /// Draw the next sample as a fresh vector.
    pub fn next_sample(&mut self) -> Array1<f64> {
        let mut out = Array1::zeros(self.dim);
        self.sample_into(&mut out);
        out
    }

    /// The exact eigendecomposition of `E[xxᵀ]`.
    pub fn true_sigma(&self) -> Spectrum {
        match &self.kind {
            SourceKind::DiscreteEigen { spectrum, .. } => spectrum.clone(),
            SourceKind::Hard(h) => hard_instance_sigma(h),
            SourceKind::Padded { inner, copies } => {
                let inner_sigma = inner.true_sigma();
                padded_sigma(&inner_sigma, *copies)
            }
        }
    }

    /// Access the hard-instance parameters if this source is one.
    pub fn hard_params(&self) -> Option<&HardInstance> {
        match &self.kind {
            SourceKind::Hard(h) => Some(h),
            _ => None,
        }
    }
}

/// Stream that realizes a [`Spectrum`] exactly: eigenvector `i` with
/// probability `λ_i`, the zero vector with probability `1 − Σλ`.
pub fn discrete_sampler(spectrum: Spectrum, seed: u64) -> SampleSource {
    let mut cum = Vec::with_capacity(spectrum.dim());
    let mut acc = 0.0;
    for &l in spectrum.eigenvalues() {
        acc += l;
        cum.push(acc);
    }
    let dim = spectrum.dim();
    SampleSource {
        kind: SourceKind::DiscreteEigen { spectrum, cum },
        gen: rng::rng_from_seed(seed),
        dim,
    }
}

/// Default floor constant for the hard instance's admissibility requirement
/// `T ≥ c·λ/δ²` (echoed into experiment metadata).
pub const HARD_INSTANCE_C_FLOOR: f64 = 4.0;
/// Default bias-calibration constant `C_ε` in `ε = min(δ/λ, √(C_ε·β²/(2λT)))`.
pub const HARD_INSTANCE_C_EPS: f64 = 1.0;

/// The hard-instance stream with default constants. See
/// [`lower_bound_source_with`] for the knobs.
pub fn lower_bound_source(
    k: usize,
    lambda: f64,
    delta: f64,
    t: u64,
    z: &[bool],
    seed: u64,
) -> Result<SampleSource> {
    lower_bound_source_with(
        k,
        lambda,
        delta,
        t,
        z,
        seed,
        HARD_INSTANCE_C_EPS,
        HARD_INSTANCE_C_FLOOR,
    )
}

/// The hard-instance stream over `R^{2k}`.
///
/// Per round: with probability `1 − kλ/β²` emit zero; otherwise pick a block
/// `i` uniformly and emit the block-embedded `a` or `b`, balanced when
/// `z_i = 0` and `½±ε`-biased when `z_i = 1`, where `a, b` are the unit
/// vectors from [`lemma_2x2`] with `β = √((1+δ/λ)/2)`.
///
/// The bias is calibrated against the stream length: `ε = min(δ/λ,
/// √(C_ε·β²/(2λT)))`, which keeps the expected number of live rounds per block
/// at the `Θ(1/ε²)` level where the two mixtures are statistically
/// indistinguishable.
#[allow(clippy::too_many_arguments)]
pub fn lower_bound_source_with(
    k: usize,
    lambda: f64,
    delta: f64,
    t: u64,
    z: &[bool],
    seed: u64,
    c_eps: f64,
    c_floor: f64,
) -> Result<SampleSource> {
    if k == 0 {
        return Err(Error::invalid("need k ≥ 1"));
    }
    if z.len() != k {
        return Err(Error::DimMismatch(format!(
            "bit vector has length {}, want k = {k}",
            z.len()
        )));
    }
    if !(delta > 0.0 && delta <= lambda / 2.0) {
        return Err(Error::invalid(format!(
            "need 0 < δ ≤ λ/2, got δ = {delta}, λ/2 = {}",
            lambda / 2.0
        )));
    }
    if !(lambda <= 1.0 / (4.0 * k as f64)) {
        return Err(Error::invalid(format!(
            "need λ ≤ 1/(4k) = {}, got λ = {lambda}",
            1.0 / (4.0 * k as f64)
        )));
    }
    let floor = c_floor * lambda / (delta * delta);
    if (t as f64) < floor {
        return Err(Error::invalid(format!(
            "need T ≥ c·λ/δ² = {c_floor}·{lambda}/{delta}² = {floor}, got T = {t}"
        )));
    }
    let beta_sq = (1.0 + delta / lambda) / 2.0;
    let beta = beta_sq.sqrt();
    let eps = (delta / lambda).min((c_eps * beta_sq / (2.0 * lambda * t as f64)).sqrt());
    Ok(SampleSource {
        kind: SourceKind::Hard(HardInstance {
            k,
            lambda,
            delta,
            t_design: t,
            z: z.to_vec(),
            beta,
            eps,
            c_eps,
            c_floor,
        }),
        gen: rng::rng_from_seed(seed),
        dim: 2 * k,
    })
}

/// Trade the inner source's eigengap for multiplicity: concatenate
/// `1 + m/k` independent scaled copies at fixed trace. `m` must be a multiple
/// of the inner block count `k`; `m = 0` returns the source unchanged.
pub fn gapfree_pad(source: SampleSource, m: usize, k: usize, seed: u64) -> Result<SampleSource> {
    if k == 0 {
        return Err(Error::invalid("need k ≥ 1"));
    }
    if m % k != 0 {
        return Err(Error::invalid(format!(
            "m must be an integral multiple of k, got m = {m}, k = {k}"
        )));
    }
    if m == 0 {
        return Ok(source);
    }
    let copies = 1 + m / k;
    let dim = source.dim() * copies;
    Ok(SampleSource {
        kind: SourceKind::Padded {
            inner: Box::new(source),
            copies,
        },
        gen: rng::rng_from_seed(rng::derive_seed(seed, rng::stream::SOURCE)),
        dim,
    })
}

/// Exact eigendecomposition of the hard instance: a direct sum of `k` 2×2
/// blocks, each `(λ/β²)·A` (balanced) or `(λ/β²)·B` (biased), assembled in
/// descending eigenvalue order with ties broken by block position.
fn hard_instance_sigma(h: &HardInstance) -> Spectrum {
    let beta_sq = h.beta * h.beta;
    let scale = h.lambda / beta_sq;
    let d = 2 * h.k;
    // One (eigenvalue, block, local 2-vector) triple per block eigenpair,
    // generated block-major so the stable sort's tie-break is block order.
    let mut pairs: Vec<(f64, usize, [f64; 2])> = Vec::with_capacity(d);
    let closed = lemma_2x2_unchecked(h.beta, h.eps);
    for (i, &zi) in h.z.iter().enumerate() {
        if zi {
            pairs.push((
                scale * closed.eigvals_b[0],
                i,
                [closed.eigvecs_b[0][0], closed.eigvecs_b[1][0]],
            ));
            pairs.push((
                scale * closed.eigvals_b[1],
                i,
                [closed.eigvecs_b[0][1], closed.eigvecs_b[1][1]],
            ));
        } else {
            // (λ/β²)·β² is λ exactly; write it as such so the rounding of
            // the division cannot leak into the reported top eigenvalue.
            pairs.push((h.lambda, i, [1.0, 0.0]));
            pairs.push((scale * (1.0 - beta_sq), i, [0.0, 1.0]));
        }
    }
    pairs.sort_by(|x, y| y.0.partial_cmp(&x.0).expect("finite eigenvalues"));
    let mut eigenvalues = Vec::with_capacity(d);
    let mut basis = Array2::zeros((d, d));
    for (col, (val, block, v)) in pairs.into_iter().enumerate() {
        eigenvalues.push(val);
        basis[(2 * block, col)] = v[0];
        basis[(2 * block + 1, col)] = v[1];
    }
    Spectrum::new(eigenvalues, Some(basis)).expect("hard-instance sigma is a valid spectrum")
}

/// Exact eigendecomposition of the padded source: each inner eigenpair
/// reappears once per copy, scaled by `1/copies`, embedded block-diagonally.
fn padded_sigma(inner: &Spectrum, copies: usize) -> Spectrum {
    let d_in = inner.dim();
    let d = d_in * copies;
    let inner_basis = inner.dense_basis();
    let mut eigenvalues = Vec::with_capacity(d);
    let mut basis = Array2::zeros((d, d));
    let mut col = 0;
    for j in 0..d_in {
        for c in 0..copies {
            eigenvalues.push(inner.eigenvalues()[j] / copies as f64);
            for r in 0..d_in {
                basis[(c * d_in + r, col)] = inner_basis[(r, j)];
            }
            col += 1;
        }
    }
    Spectrum::new(eigenvalues, Some(basis)).expect("padded sigma is a valid spectrum")
}
