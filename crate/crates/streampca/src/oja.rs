//! The sketch state machine: rank-1 multiplicative updates with
//! zero-column-preserving orthonormalization, the plain and staged-warm-start
//! runners, and the column-subsampling selector.
//!
//! The update is `Q ← QR((I + η·x·xᵀ)·Q)` applied once per stream element.
//! Orthonormalization is modified Gram-Schmidt with two projection passes
//! ("twice is enough" re-orthogonalization), a relative zero threshold that
//! annihilates collapsed columns instead of erroring, and a deterministic
//! sign convention. Structurally zero columns — collapsed or not yet inserted
//! by the staged runner — are kept *bit-exactly* zero: they are skipped both
//! as update targets and as projection sources.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayViewMut1, Axis, ShapeBuilder};

use crate::error::{Error, Result};
use crate::rng;
use crate::schedules::{OjaPPPlan, Schedule};
use crate::spectra::SampleSource;

/// Relative zero threshold in QR: a column whose post-projection residual
/// norm falls below `QR_REL_ZERO × (pre-projection norm)` is set to exact zero.
pub const QR_REL_ZERO: f64 = 1e-12;
/// Absolute floor of the zero threshold, so exactly-zero inputs stay zero.
pub const QR_ABS_ZERO: f64 = 1e-300;

/// Flip `col` so its first nonzero entry is positive (no-op on zero columns).
pub(crate) fn positive_leading_sign(col: &mut ArrayViewMut1<f64>) {
    for &v in col.iter() {
        if v != 0.0 {
            if v < 0.0 {
                col.mapv_inplace(|x| if x == 0.0 { 0.0 } else { -x });
            }
            return;
        }
    }
}

/// Slice twin of [`positive_leading_sign`]; same `-0.0 → 0.0` behavior.
fn flip_to_positive_leading(col: &mut [f64]) {
    for &v in col.iter() {
        if v != 0.0 {
            if v < 0.0 {
                for c in col.iter_mut() {
                    *c = if *c == 0.0 { 0.0 } else { -*c };
                }
            }
            return;
        }
    }
}

/// Dot product of two equal-length slices through ndarray's unrolled kernel.
#[inline]
fn sdot(a: &[f64], b: &[f64]) -> f64 {
    ArrayView1::from(a).dot(&ArrayView1::from(b))
}

/// `y ← y + a·x` elementwise.
#[inline]
fn saxpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Whether columns are contiguous in memory at stride `d` (so column `j`
/// occupies `buf[j·d .. (j+1)·d]` of the backing slice).
fn column_contiguous(m: &Array2<f64>) -> bool {
    let (d, k) = m.dim();
    let s = m.strides();
    (d <= 1 || s[0] == 1) && (k <= 1 || s[1] == d as isize) && m.as_slice_memory_order().is_some()
}

/// In-place modified Gram-Schmidt, left to right, with two projection passes.
///
/// Columns whose residual norm after projection falls below the zero
/// threshold are set to exact zero and skipped as projection targets for
/// later columns; every surviving column is normalized and sign-fixed to a
/// positive leading entry. Returns the per-column "nonzero" mask.
pub fn qr_orthonormalize(m: &mut Array2<f64>) -> Vec<bool> {
    let (d, k) = m.dim();
    if column_contiguous(m) {
        let buf = m.as_slice_memory_order_mut().expect("checked contiguous");
        return qr_columns(buf, d, k);
    }
    // Unusual layout: run on a column-contiguous copy so every input layout
    // sees bit-identical arithmetic.
    let mut f = Array2::zeros(m.raw_dim().f());
    f.assign(m);
    let active = qr_columns(f.as_slice_memory_order_mut().expect("fresh array"), d, k);
    m.assign(&f);
    active
}

/// The QR kernel on a column-major backing slice.
fn qr_columns(buf: &mut [f64], d: usize, k: usize) -> Vec<bool> {
    let mut active = vec![false; k];
    for j in 0..k {
        let (head, rest) = buf.split_at_mut(j * d);
        let col = &mut rest[..d];
        let pre_norm = sdot(col, col).sqrt();
        for _pass in 0..2 {
            for (i, &live) in active[..j].iter().enumerate() {
                if !live {
                    continue;
                }
                let qi = &head[i * d..(i + 1) * d];
                let proj = sdot(qi, col);
                saxpy(col, -proj, qi);
            }
        }
        let res = sdot(col, col).sqrt();
        let tau = (QR_REL_ZERO * pre_norm).max(QR_ABS_ZERO);
        if res <= tau {
            col.fill(0.0);
        } else {
            let inv = res.recip();
            for c in col.iter_mut() {
                *c *= inv;
            }
            flip_to_positive_leading(col);
            active[j] = true;
        }
    }
    active
}

/// A `d×k` matrix of independent standard normal entries, deterministic per
/// seed (entries drawn row-major).
pub fn init_gaussian(d: usize, k: usize, seed: u64) -> Result<Array2<f64>> {
    if k == 0 || k > d {
        return Err(Error::invalid(format!("need 1 ≤ k ≤ d, got d={d}, k={k}")));
    }
    let mut gen = rng::rng_from_seed(seed);
    let mut m = Array2::zeros((d, k).f());
    for i in 0..d {
        for j in 0..k {
            m[(i, j)] = rand::Rng::sample(&mut gen, rand_distr::StandardNormal);
        }
    }
    Ok(m)
}

/// The evolving sketch: a `d×k` matrix whose nonzero columns are orthonormal,
/// a step counter, and the per-column nonzero mask.
#[derive(Debug, Clone)]
pub struct SketchState {
    q: Array2<f64>,
    t: u64,
    active: Vec<bool>,
}

impl SketchState {
    /// Start from an arbitrary matrix, orthonormalizing it (step counter 0).
    pub fn new(q0: Array2<f64>) -> Result<Self> {
        if q0.nrows() == 0 || q0.ncols() == 0 || q0.ncols() > q0.nrows() {
            return Err(Error::invalid(format!(
                "state must be d×k with 1 ≤ k ≤ d, got {}×{}",
                q0.nrows(),
                q0.ncols()
            )));
        }
        // Keep the storage column-contiguous so the per-step kernels run on
        // slices; inputs in another layout are copied over once here.
        let mut q = q0;
        if !column_contiguous(&q) {
            let mut f = Array2::zeros(q.raw_dim().f());
            f.assign(&q);
            q = f;
        }
        let active = qr_orthonormalize(&mut q);
        Ok(SketchState { q, t: 0, active })
    }

    /// An all-zero (fully inactive) `d×k` state for staged column insertion.
    pub fn zeros(d: usize, k: usize) -> Result<Self> {
        if k == 0 || k > d {
            return Err(Error::invalid(format!("need 1 ≤ k ≤ d, got d={d}, k={k}")));
        }
        Ok(SketchState {
            q: Array2::zeros((d, k).f()),
            t: 0,
            active: vec![false; k],
        })
    }

    /// The sketch matrix.
    pub fn q(&self) -> &Array2<f64> {
        &self.q
    }

    /// Steps consumed so far.
    pub fn t(&self) -> u64 {
        self.t
    }

    /// Per-column nonzero mask.
    pub fn active(&self) -> &[bool] {
        &self.active
    }

    /// Number of nonzero columns.
    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// One multiplicative update `Q ← QR(Q + η·x·(xᵀQ))`; increments the step
    /// counter. Zero columns are untouched. Rejects non-finite inputs and
    /// negative rates.
    pub fn step(&mut self, x: &ArrayView1<f64>, eta: f64) -> Result<()> {
        if x.len() != self.q.nrows() {
            return Err(Error::DimMismatch(format!(
                "sample has dim {}, state is {}×{}",
                x.len(),
                self.q.nrows(),
                self.q.ncols()
            )));
        }
        if !eta.is_finite() || eta < 0.0 {
            return Err(Error::invalid(format!(
                "learning rate must be finite and ≥ 0, got {eta}"
            )));
        }
        let owned;
        let xs: &[f64] = match x.as_slice() {
            Some(s) => s,
            None => {
                owned = x.to_owned();
                owned.as_slice().expect("owned vector is contiguous")
            }
        };
        if xs.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("sample vector has a non-finite entry"));
        }
        let d = self.q.nrows();
        let buf = self
            .q
            .as_slice_memory_order_mut()
            .expect("sketch storage is column-contiguous");
        for (j, &live) in self.active.iter().enumerate() {
            if !live {
                continue;
            }
            let col = &mut buf[j * d..(j + 1) * d];
            let w = sdot(xs, col);
            saxpy(col, eta * w, xs);
        }
        self.active = qr_orthonormalize(&mut self.q);
        self.t += 1;
        Ok(())
    }
}

/// Free-function form of [`SketchState::step`].
pub fn oja_step(state: &mut SketchState, x: &ArrayView1<f64>, eta: f64) -> Result<()> {
    state.step(x, eta)
}

/// What an observation callback sees at a record time `t`: the state after
/// step `t`, plus — when `t ≥ 1` — the state *before* the step and the sample
/// that drove it, which the per-sample alignment diagnostic needs. At `t = 0`
/// both extras are `None`.
pub struct ObserveCtx<'a> {
    pub state: &'a SketchState,
    pub prev: Option<&'a SketchState>,
    pub x: Option<&'a Array1<f64>>,
}

fn validate_record_times(record_times: &[u64], total: u64) -> Result<()> {
    for pair in record_times.windows(2) {
        if pair[1] <= pair[0] {
            return Err(Error::invalid(format!(
                "record times must be strictly increasing, got {} then {}",
                pair[0], pair[1]
            )));
        }
    }
    if let Some(&last) = record_times.last() {
        if last > total {
            return Err(Error::invalid(format!(
                "record time {last} exceeds the stream length {total}"
            )));
        }
    }
    Ok(())
}

/// Run the plain iteration for the schedule's full horizon, starting from
/// `q0` (orthonormalized in place at step 0).
///
/// `observe` fires at each `t` in `record_times` (sorted, ≤ T); an entry `0`
/// observes the orthonormalized initial state. With a zero-length schedule
/// only that initial observation happens. Fixed seeds make the whole
/// trajectory bit-reproducible.
pub fn run_oja(
    source: &mut SampleSource,
    schedule: &Schedule,
    q0: Array2<f64>,
    record_times: &[u64],
    mut observe: impl FnMut(ObserveCtx<'_>),
) -> Result<SketchState> {
    let total = schedule.total_steps();
    validate_record_times(record_times, total)?;
    if q0.nrows() != source.dim() {
        return Err(Error::DimMismatch(format!(
            "initial state has dim {}, stream has dim {}",
            q0.nrows(),
            source.dim()
        )));
    }
    let mut state = SketchState::new(q0)?;
    let mut rec = record_times.iter().peekable();
    if rec.peek() == Some(&&0) {
        observe(ObserveCtx {
            state: &state,
            prev: None,
            x: None,
        });
        rec.next();
    }
    let mut x = Array1::zeros(source.dim());
    let mut prev: Option<SketchState> = None;
    for t in 1..=total {
        source.sample_into(&mut x);
        let eta = schedule.eta_at(t)?;
        let record_here = rec.peek() == Some(&&t);
        if record_here {
            match &mut prev {
                Some(p) => p.clone_from(&state),
                None => prev = Some(state.clone()),
            }
        }
        state.step(&x.view(), eta)?;
        if record_here {
            observe(ObserveCtx {
                state: &state,
                prev: prev.as_ref(),
                x: Some(&x),
            });
            rec.next();
        }
    }
    Ok(state)
}

/// Run the staged warm-start iteration.
///
/// The state is a fixed-width `d×k` matrix whose not-yet-inserted columns are
/// exact zeros. At the start of epoch `i`, `plan.epochs[i].new_columns` fresh
/// Gaussian columns (seeded from `epoch_seeds[i]`) overwrite the next zero
/// slots and the whole state is re-orthonormalized; the epoch then runs
/// `plan.epochs[i].length` updates under the plan's global schedule. The
/// initial observation at `t = 0` sees the state after the first insertion,
/// so a single-epoch plan reproduces [`run_oja`] bit-for-bit; an observation
/// at a later epoch boundary sees the state *before* that epoch's insertion.
pub fn run_ojapp(
    source: &mut SampleSource,
    plan: &OjaPPPlan,
    epoch_seeds: &[u64],
    record_times: &[u64],
    mut observe: impl FnMut(ObserveCtx<'_>),
) -> Result<SketchState> {
    let total = plan.schedule.total_steps();
    validate_record_times(record_times, total)?;
    if epoch_seeds.len() != plan.epochs.len() {
        return Err(Error::invalid(format!(
            "{} epoch seeds for {} epochs",
            epoch_seeds.len(),
            plan.epochs.len()
        )));
    }
    let d = source.dim();
    let k = plan.total_columns();
    if k > d {
        return Err(Error::invalid(format!(
            "plan wants {k} columns in dimension {d}"
        )));
    }
    let mut state = SketchState::zeros(d, k)?;
    let mut filled = 0usize;
    let mut t: u64 = 0;
    let mut rec = record_times.iter().peekable();
    let mut x = Array1::zeros(d);
    let mut prev: Option<SketchState> = None;
    for (i, epoch) in plan.epochs.iter().enumerate() {
        let g = init_gaussian(d, epoch.new_columns, epoch_seeds[i])?;
        state
            .q
            .slice_mut(s![.., filled..filled + epoch.new_columns])
            .assign(&g);
        filled += epoch.new_columns;
        state.active = qr_orthonormalize(&mut state.q);
        if i == 0 && rec.peek() == Some(&&0) {
            observe(ObserveCtx {
                state: &state,
                prev: None,
                x: None,
            });
            rec.next();
        }
        for _ in 0..epoch.length {
            t += 1;
            source.sample_into(&mut x);
            let eta = plan.schedule.eta_at(t)?;
            let record_here = rec.peek() == Some(&&t);
            if record_here {
                match &mut prev {
                    Some(p) => p.clone_from(&state),
                    None => prev = Some(state.clone()),
                }
            }
            state.step(&x.view(), eta)?;
            if record_here {
                observe(ObserveCtx {
                    state: &state,
                    prev: prev.as_ref(),
                    x: Some(&x),
                });
                rec.next();
            }
        }
    }
    Ok(state)
}

/// A uniformly random `k`-subset of the columns of `q`, original order
/// preserved. `k` equal to the column count returns `q` unchanged.
pub fn pick_random_columns(q: &Array2<f64>, k: usize, seed: u64) -> Result<Array2<f64>> {
    let k_full = q.ncols();
    if k == 0 || k > k_full {
        return Err(Error::invalid(format!(
            "need 1 ≤ k ≤ {k_full} columns, got k={k}"
        )));
    }
    if k == k_full {
        return Ok(q.clone());
    }
    let mut gen = rng::rng_from_seed(rng::derive_seed(seed, rng::stream::SUBSET));
    let mut idx = rand::seq::index::sample(&mut gen, k_full, k).into_vec();
    idx.sort_unstable();
    Ok(q.select(Axis(1), &idx))
}

/// Row-major float text with a one-line `rows cols` shape header.
pub fn matrix_to_text(m: &Array2<f64>) -> String {
    let mut out = format!("{} {}\n", m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{}", m[(i, j)])).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

/// Inverse of [`matrix_to_text`]; `#` lines are ignored.
pub fn matrix_from_text(text: &str) -> Result<Array2<f64>> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header = lines.next().ok_or_else(|| Error::invalid("empty matrix text"))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|tok| {
            tok.parse::<usize>()
                .map_err(|_| Error::invalid(format!("bad shape header {header:?}")))
        })
        .collect::<Result<_>>()?;
    if dims.len() != 2 {
        return Err(Error::invalid(format!("bad shape header {header:?}")));
    }
    let (r, c) = (dims[0], dims[1]);
    let mut m = Array2::zeros((r, c));
    for i in 0..r {
        let line = lines
            .next()
            .ok_or_else(|| Error::invalid(format!("matrix text ends after {i} of {r} rows")))?;
        let entries: Vec<&str> = line.split_whitespace().collect();
        if entries.len() != c {
            return Err(Error::invalid(format!(
                "row {i} has {} entries, want {c}",
                entries.len()
            )));
        }
        for (j, tok) in entries.iter().enumerate() {
            m[(i, j)] = tok
                .parse()
                .map_err(|_| Error::invalid(format!("bad matrix entry {tok:?}")))?;
        }
    }
    Ok(m)
}
