//! Stream generators against independently computed ground truth: closed-form
//! 2×2 mixture spectra, Monte-Carlo second moments, and the exact eigenvalue
//! layout of the hard instance.

use ndarray::{Array1, Array2};
use proptest::prelude::*;
use streampca::oracle;
use streampca::spectra::{
    self, discrete_sampler, gapfree_pad, lemma_2x2, lower_bound_source, make_spectrum, Spectrum,
    SpectrumRecipe,
};

/// Monte-Carlo tolerance = this many standard deviations of the estimator.
const MC_SIGMAS: f64 = 4.5;

fn empirical_covariance(source: &mut spectra::SampleSource, n: usize) -> Array2<f64> {
    let mut acc = oracle::CovAccumulator::new(source.dim());
    let mut x = Array1::zeros(source.dim());
    for _ in 0..n {
        source.sample_into(&mut x);
        acc.push(&x.view()).unwrap();
    }
    acc.finish().unwrap().as_array().clone()
}

fn assert_unit_or_zero(x: &Array1<f64>) {
    let norm = x.dot(x).sqrt();
    assert!(
        norm <= 1e-12 || (norm - 1.0).abs() <= 1e-12,
        "draw norm {norm} is neither 0 nor 1"
    );
}

// ---------------------------------------------------------------------------
// 2×2 mixture closed forms
// ---------------------------------------------------------------------------

#[test]
fn biased_block_closed_forms_at_the_reference_point() {
    // β² = 0.6, ε = 0.1: the discriminant √((2β²−1)² + 4c²) = √0.0784 = 0.28
    // lands on an exact decimal, so the eigenvalues are 0.64 and 0.36.
    let beta = 0.6_f64.sqrt();
    let l = lemma_2x2(beta, 0.1).unwrap();

    let c_off = 2.0 * 0.1 * beta * (1.0 - beta * beta).sqrt();
    assert!((c_off - 0.09797958971132712).abs() < 1e-15);
    assert!((l.mat_b[0][1] - c_off).abs() < 1e-15);
    assert!((l.mat_b[1][0] - c_off).abs() < 1e-15);

    assert!((l.eigvals_b[0] - 0.64).abs() < 1e-12);
    assert!((l.eigvals_b[1] - 0.36).abs() < 1e-12);
    assert!((l.eigvals_b[0] + l.eigvals_b[1] - 1.0).abs() < 1e-15);

    // The biased eigenvalues straddle the balanced ones.
    assert!(l.eigvals_b[0] > l.eigvals_a[0]);
    assert!(l.eigvals_a[0] >= l.eigvals_a[1]);
    assert!(l.eigvals_a[1] > l.eigvals_b[1]);

    // Slopes multiply to −1 (the eigenvectors are orthogonal).
    assert!((l.s_roots[0] * l.s_roots[1] + 1.0).abs() < 1e-12);

    // Each claimed eigenpair actually solves B·v = λ·v.
    for j in 0..2 {
        let v = [l.eigvecs_b[0][j], l.eigvecs_b[1][j]];
        for r in 0..2 {
            let bv = l.mat_b[r][0] * v[0] + l.mat_b[r][1] * v[1];
            assert!(
                (bv - l.eigvals_b[j] * v[r]).abs() < 1e-14,
                "eigenpair {j} residual row {r}"
            );
        }
        let norm = (v[0] * v[0] + v[1] * v[1]).sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }
}

#[test]
fn biased_block_agrees_with_the_dense_eigensolver() {
    let l = lemma_2x2(0.78, 0.15).unwrap();
    let mut b = Array2::zeros((2, 2));
    for r in 0..2 {
        for c in 0..2 {
            b[(r, c)] = l.mat_b[r][c];
        }
    }
    let (vals, vecs) = oracle::eig_sym(&oracle::SymmetricMatrix::new(b).unwrap()).unwrap();
    for j in 0..2 {
        assert!(
            (vals[j] - l.eigvals_b[j]).abs() < 1e-12,
            "eigenvalue {j}: solver {} vs closed form {}",
            vals[j],
            l.eigvals_b[j]
        );
        // Same line: the dot product of the unit eigenvectors is ±1.
        let dot = vecs[(0, j)] * l.eigvecs_b[0][j] + vecs[(1, j)] * l.eigvecs_b[1][j];
        assert!((dot.abs() - 1.0).abs() < 1e-12, "eigenvector {j} off-line");
    }
}

// ---------------------------------------------------------------------------
// Discrete eigenvector stream
// ---------------------------------------------------------------------------

#[test]
fn discrete_stream_matches_its_spectrum_moments() {
    let eigenvalues = vec![0.35, 0.25, 0.2, 0.1, 0.05, 0.03];
    let spec = Spectrum::new(eigenvalues.clone(), None).unwrap();
    let mut src = discrete_sampler(spec, 41);
    let n = 200_000usize;

    let mut zero_draws = 0usize;
    let mut acc = oracle::CovAccumulator::new(6);
    let mut x = Array1::zeros(6);
    for _ in 0..n {
        src.sample_into(&mut x);
        assert_unit_or_zero(&x);
        if x.iter().all(|&v| v == 0.0) {
            zero_draws += 1;
        }
        acc.push(&x.view()).unwrap();
    }
    let cov = acc.finish().unwrap().as_array().clone();

    // With the identity basis every draw is a coordinate vector, so the
    // empirical covariance is exactly diagonal...
    for r in 0..6 {
        for c in 0..6 {
            if r != c {
                assert_eq!(cov[(r, c)], 0.0, "off-diagonal ({r},{c})");
            }
        }
    }
    // ...and each diagonal entry is a Bernoulli(λ_i) frequency.
    for (i, &lam) in eigenvalues.iter().enumerate() {
        let sigma = (lam * (1.0 - lam) / n as f64).sqrt();
        assert!(
            (cov[(i, i)] - lam).abs() <= MC_SIGMAS * sigma,
            "diagonal {i}: {} vs λ = {lam} (σ = {sigma:.2e})",
            cov[(i, i)]
        );
    }
    let p_zero = 1.0 - eigenvalues.iter().sum::<f64>();
    let sigma = (p_zero * (1.0 - p_zero) / n as f64).sqrt();
    let observed = zero_draws as f64 / n as f64;
    assert!(
        (observed - p_zero).abs() <= MC_SIGMAS * sigma,
        "zero-draw rate {observed} vs {p_zero}"
    );
}

#[test]
fn rotated_stream_covariance_matches_the_dense_sigma() {
    let basis = spectra::haar_basis(8, 7).unwrap();
    let eigenvalues = vec![0.3, 0.2, 0.15, 0.1, 0.08, 0.07, 0.05, 0.03];
    let spec = Spectrum::new(eigenvalues, Some(basis)).unwrap();
    let sigma = spec.dense_sigma();
    let mut src = discrete_sampler(spec, 17);

    let n = 150_000usize;
    let mut acc = oracle::CovAccumulator::new(8);
    let mut x = Array1::zeros(8);
    for _ in 0..n {
        src.sample_into(&mut x);
        assert_unit_or_zero(&x);
        acc.push(&x.view()).unwrap();
    }
    let cov = acc.finish().unwrap().as_array().clone();
    let frob: f64 = (&cov - &sigma).iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(frob < 8e-3, "‖Σ̂ − Σ‖_F = {frob}");
}

// ---------------------------------------------------------------------------
// Hard instance
// ---------------------------------------------------------------------------

#[test]
fn hard_stream_zero_rate_and_moments() {
    // k=2, λ=0.1, δ=0.05 → β² = 0.75 and the zero-draw rate is 1 − kλ/β².
    let mut src = lower_bound_source(2, 0.1, 0.05, 4000, &[false, true], 23).unwrap();
    let sigma = src.true_sigma().dense_sigma();

    let n = 200_000usize;
    let mut zero_draws = 0usize;
    let mut acc = oracle::CovAccumulator::new(4);
    let mut x = Array1::zeros(4);
    for _ in 0..n {
        src.sample_into(&mut x);
        assert_unit_or_zero(&x);
        if x.iter().all(|&v| v == 0.0) {
            zero_draws += 1;
        }
        acc.push(&x.view()).unwrap();
    }

    let p_zero = 1.0 - 2.0 * 0.1 / 0.75;
    let sigma_p = (p_zero * (1.0 - p_zero) / n as f64).sqrt();
    let observed = zero_draws as f64 / n as f64;
    assert!(
        (observed - p_zero).abs() <= MC_SIGMAS * sigma_p,
        "zero-draw rate {observed} vs {p_zero}"
    );

    let cov = acc.finish().unwrap().as_array().clone();
    let frob: f64 = (&cov - &sigma).iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(frob < 5e-3, "‖Σ̂ − Σ‖_F = {frob}");
}

#[test]
fn balanced_blocks_have_exact_closed_form_eigenvalues() {
    // All-balanced bits: top two eigenvalues are λ exactly (no rounding),
    // the bottom two are λ(λ−δ)/(λ+δ) = 1/30 for λ=0.1, δ=0.05.
    let src = lower_bound_source(2, 0.1, 0.05, 4000, &[false, false], 0).unwrap();
    let spec = src.true_sigma();
    let vals = spec.eigenvalues();
    assert_eq!(vals.len(), 4);
    assert_eq!(vals[0], 0.1);
    assert_eq!(vals[1], 0.1);
    let low = 0.1 * (0.1 - 0.05) / (0.1 + 0.05);
    assert!((vals[2] - low).abs() < 1e-15, "{} vs {low}", vals[2]);
    assert!((vals[3] - low).abs() < 1e-15);
    assert!(vals[2] <= 0.05, "second block eigenvalue above λ − δ");
}

#[test]
fn biased_blocks_straddle_lambda() {
    let src = lower_bound_source(2, 0.1, 0.05, 4000, &[true, false], 0).unwrap();
    let spec = src.true_sigma();
    let vals = spec.eigenvalues();
    // Biased top sits strictly above λ, the balanced top is λ exactly, and
    // everything below the gap stays at or under λ − δ.
    assert!(vals[0] > 0.1);
    assert_eq!(vals[1], 0.1);
    assert!(vals[2] <= 0.05 && vals[3] <= 0.05);

    // The assembled dense matrix has the closed-form spectrum: cross-check
    // through the dense eigensolver.
    let dense = spec.dense_sigma();
    let (solver_vals, _) = oracle::eig_sym(&oracle::SymmetricMatrix::new(dense).unwrap()).unwrap();
    for (a, b) in solver_vals.iter().zip(vals) {
        assert!((a - b).abs() < 1e-12, "solver {a} vs closed form {b}");
    }
}

// ---------------------------------------------------------------------------
// Gap-for-multiplicity padding
// ---------------------------------------------------------------------------

#[test]
fn padding_trades_gap_for_multiplicity_at_fixed_trace() {
    let inner = lower_bound_source(2, 0.1, 0.05, 4000, &[false, true], 3).unwrap();
    let inner_spec = inner.true_sigma();
    let padded = gapfree_pad(inner, 2, 2, 5).unwrap();
    assert_eq!(padded.dim(), 8);

    let spec = padded.true_sigma();
    assert!((spec.trace() - inner_spec.trace()).abs() < 1e-12);

    // Every inner eigenvalue reappears halved, twice.
    let mut expected: Vec<f64> = inner_spec
        .eigenvalues()
        .iter()
        .flat_map(|&v| [v / 2.0, v / 2.0])
        .collect();
    expected.sort_by(|a, b| b.partial_cmp(a).unwrap());
    for (got, want) in spec.eigenvalues().iter().zip(&expected) {
        assert!((got - want).abs() < 1e-15, "{got} vs {want}");
    }

    // The padded stream's second moment matches its own dense sigma — in
    // particular the cross-copy blocks really vanish.
    let mut src = gapfree_pad(
        lower_bound_source(2, 0.1, 0.05, 4000, &[false, true], 3).unwrap(),
        2,
        2,
        5,
    )
    .unwrap();
    let sigma = src.true_sigma().dense_sigma();
    let n = 150_000usize;
    let mut acc = oracle::CovAccumulator::new(8);
    let mut x = Array1::zeros(8);
    for _ in 0..n {
        src.sample_into(&mut x);
        // Each copy block carries an independent inner draw scaled by
        // 1/√copies, so its norm is 0 or 1/√2 — never anything else.
        for block in 0..2 {
            let norm = x
                .slice(ndarray::s![4 * block..4 * (block + 1)])
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            assert!(
                norm < 1e-9 || (norm - 0.5_f64.sqrt()).abs() < 1e-9,
                "copy-block norm {norm} is neither 0 nor 1/√2"
            );
        }
        acc.push(&x.view()).unwrap();
    }
    let cov = acc.finish().unwrap().as_array().clone();
    let frob: f64 = (&cov - &sigma).iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(frob < 5e-3, "‖Σ̂ − Σ‖_F = {frob}");
}

// ---------------------------------------------------------------------------
// Spectrum recipes
// ---------------------------------------------------------------------------

#[test]
fn clustered_recipe_places_extras_inside_the_band() {
    let spec = make_spectrum(
        &SpectrumRecipe::Clustered {
            lambda_top: 0.1,
            rho: 0.04,
            m: 4,
            lambda_tail: 0.02,
        },
        12,
        3,
    )
    .unwrap();
    let vals = spec.eigenvalues();
    for v in &vals[..3] {
        assert_eq!(*v, 0.1);
    }
    for (j, v) in vals[3..7].iter().enumerate() {
        let want = 0.1 - 0.04 * (j + 1) as f64 / 5.0;
        assert!((v - want).abs() < 1e-15, "cluster value {j}: {v} vs {want}");
        assert!(*v > 0.1 - 0.04 && *v < 0.1, "cluster value {j} left the band");
    }
    for v in &vals[7..] {
        assert_eq!(*v, 0.02);
    }
    for pair in vals.windows(2) {
        assert!(pair[0] >= pair[1], "eigenvalues not descending");
    }
}

// ---------------------------------------------------------------------------
// Property tests
// ---------------------------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn biased_block_spectrum_is_valid_across_the_domain(
        beta in 0.72_f64..0.86,
        eps_frac in 0.05_f64..1.0,
    ) {
        let eps = eps_frac * (2.0 * beta * beta - 1.0);
        let l = lemma_2x2(beta, eps).unwrap();
        prop_assert!((l.eigvals_b[0] + l.eigvals_b[1] - 1.0).abs() < 1e-12);
        prop_assert!(l.eigvals_b[0] > beta * beta);
        prop_assert!(l.eigvals_b[1] < 1.0 - beta * beta);
        for j in 0..2 {
            let v = [l.eigvecs_b[0][j], l.eigvecs_b[1][j]];
            for r in 0..2 {
                let bv = l.mat_b[r][0] * v[0] + l.mat_b[r][1] * v[1];
                prop_assert!((bv - l.eigvals_b[j] * v[r]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hard_stream_draws_are_unit_or_zero(
        k in 1_usize..5,
        lam_frac in 0.2_f64..1.0,
        delta_frac in 0.1_f64..1.0,
        seed in 0_u64..1000,
    ) {
        let lambda = lam_frac / (4.0 * k as f64);
        let delta = delta_frac * lambda / 2.0;
        let t = (4.0 * lambda / (delta * delta)).ceil() as u64 + 1;
        let z: Vec<bool> = (0..k).map(|i| i % 2 == 0).collect();
        let mut src = lower_bound_source(k, lambda, delta, t, &z, seed).unwrap();
        for _ in 0..50 {
            let x = src.next_sample();
            let norm = x.dot(&x).sqrt();
            prop_assert!(norm <= 1e-12 || (norm - 1.0).abs() <= 1e-12);
        }
    }
}
