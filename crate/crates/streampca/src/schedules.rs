//! Piecewise learning-rate schedules and the staged column-insertion plan.
//!
//! Both schedule families share one shape: a long conservative warmup at
//! `η = C/(rate·T0)`, a plateau at `η = C/(rate·T1)`, and a harmonic decay
//! `η = C/(rate·(t−T0))`. Because `T0 ≥ T1` whenever `k ≥ p²`, the plateau
//! sits *above* the warmup: small steps survive the poorly-aligned early
//! phase, and once the sketch is warm the iteration can afford larger steps
//! before decaying. From the plateau onward the rate never increases.
//!
//! All hidden-constant knobs (`C_T0`, `C_T1`, `C_eta`, the poly-log stand-in
//! `log_factor`) are explicit, default to 1, and are echoed into experiment
//! metadata, so the integer phase lengths in the documentation are exactly
//! reproducible.

use crate::error::{Error, Result};

/// The exposed Θ̃ knobs. `log_factor` is a direct multiplicative stand-in for
/// the hidden poly-log factors (suggested magnitude `ln(d·T/(p·rate))`);
/// leaving it at 1 keeps the documented worked examples exact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleConstants {
    pub c_t0: f64,
    pub c_t1: f64,
    pub c_eta: f64,
    pub log_factor: f64,
}

impl Default for ScheduleConstants {
    fn default() -> Self {
        ScheduleConstants {
            c_t0: 1.0,
            c_t1: 1.0,
            c_eta: 1.0,
            log_factor: 1.0,
        }
    }
}

impl ScheduleConstants {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("c_t0", self.c_t0),
            ("c_t1", self.c_t1),
            ("c_eta", self.c_eta),
            ("log_factor", self.log_factor),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::invalid(format!(
                    "schedule constant {name} must be finite and > 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// A per-segment rate rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateRule {
    Constant { value: f64 },
    /// `scale / (t − t_offset)`.
    Harmonic { scale: f64, t_offset: u64 },
}

impl RateRule {
    /// The rate at step `t` (caller keeps `t` inside the owning segment).
    pub fn eval(&self, t: u64) -> f64 {
        match *self {
            RateRule::Constant { value } => value,
            RateRule::Harmonic { scale, t_offset } => scale / (t - t_offset) as f64,
        }
    }
}

/// One schedule piece, covering the inclusive step range `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: u64,
    pub end: u64,
    pub rule: RateRule,
}

/// A validated piecewise learning-rate schedule on steps `1..=total`.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    segments: Vec<Segment>,
    t0: u64,
    t1: u64,
    total: u64,
    constants: ScheduleConstants,
}

impl Schedule {
    /// Build from explicit segments. The segments must be contiguous starting
    /// at step 1, and every rate they produce must be finite and positive.
    pub fn from_parts(
        segments: Vec<Segment>,
        t0: u64,
        t1: u64,
        constants: ScheduleConstants,
    ) -> Result<Self> {
        constants.validate()?;
        if segments.is_empty() {
            return Err(Error::invalid("schedule needs at least one segment"));
        }
        let mut expected_start = 1u64;
        for seg in &segments {
            if seg.start != expected_start {
                return Err(Error::invalid(format!(
                    "segments must be contiguous from step 1: expected start {expected_start}, got {}",
                    seg.start
                )));
            }
            if seg.end < seg.start {
                return Err(Error::invalid(format!(
                    "segment end {} precedes start {}",
                    seg.end, seg.start
                )));
            }
            match seg.rule {
                RateRule::Constant { value } => {
                    if !value.is_finite() || value <= 0.0 {
                        return Err(Error::invalid(format!(
                            "constant rate must be finite and > 0, got {value}"
                        )));
                    }
                }
                RateRule::Harmonic { scale, t_offset } => {
                    if !scale.is_finite() || scale <= 0.0 {
                        return Err(Error::invalid(format!(
                            "harmonic scale must be finite and > 0, got {scale}"
                        )));
                    }
                    if t_offset >= seg.start {
                        return Err(Error::invalid(format!(
                            "harmonic offset {t_offset} must precede segment start {} for positive rates",
                            seg.start
                        )));
                    }
                }
            }
            expected_start = seg.end + 1;
        }
        let total = segments.last().unwrap().end;
        Ok(Schedule {
            segments,
            t0,
            t1,
            total,
            constants,
        })
    }

    /// Warmup length `T0`.
    pub fn t0(&self) -> u64 {
        self.t0
    }

    /// Plateau length `T1`.
    pub fn t1(&self) -> u64 {
        self.t1
    }

    /// Total stream length `T`.
    pub fn total_steps(&self) -> u64 {
        self.total
    }

    /// The constants this schedule was built with.
    pub fn constants(&self) -> &ScheduleConstants {
        &self.constants
    }

    /// The underlying segments.
    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// The rate at step `t ∈ [1, T]`.
    pub fn eta_at(&self, t: u64) -> Result<f64> {
        if t < 1 || t > self.total {
            return Err(Error::invalid(format!(
                "step {t} outside the schedule range [1, {}]",
                self.total
            )));
        }
        let idx = self.segments.partition_point(|seg| seg.end < t);
        Ok(self.segments[idx].rule.eval(t))
    }

    /// `Σ_{t=a}^{b} η_t` (inclusive), exact per-step accumulation.
    pub fn eta_sum(&self, a: u64, b: u64) -> Result<f64> {
        if a < 1 || b > self.total || a > b {
            return Err(Error::invalid(format!(
                "rate-sum range [{a}, {b}] outside [1, {}]",
                self.total
            )));
        }
        let mut sum = 0.0;
        for seg in &self.segments {
            let lo = seg.start.max(a);
            let hi = seg.end.min(b);
            if lo > hi {
                continue;
            }
            match seg.rule {
                RateRule::Constant { value } => sum += (hi - lo + 1) as f64 * value,
                RateRule::Harmonic { scale, t_offset } => {
                    sum += scale * harmonic_sum(lo - t_offset, hi - t_offset);
                }
            }
        }
        Ok(sum)
    }

    /// True when the rate never increases on `[from, T]` (the documented
    /// behavior from the plateau onward; the warmup→plateau boundary is an
    /// intentional increase).
    pub fn nonincreasing_from(&self, from: u64) -> bool {
        let mut prev = f64::INFINITY;
        for seg in &self.segments {
            let lo = seg.start.max(from);
            if lo > seg.end {
                continue;
            }
            // Within a segment the rule is flat or strictly decreasing, so
            // the endpoints witness monotonicity.
            let first = seg.rule.eval(lo);
            let last = seg.rule.eval(seg.end);
            if first > prev {
                return false;
            }
            prev = last;
        }
        true
    }

    /// Sorted distinct segment boundary steps (each segment's start and end).
    pub fn boundaries(&self) -> Vec<u64> {
        let mut b: Vec<u64> = self
            .segments
            .iter()
            .flat_map(|seg| [seg.start, seg.end])
            .collect();
        b.sort_unstable();
        b.dedup();
        b
    }

    /// The same rate law with the horizon clamped or extended to `new_total`:
    /// segments starting past the new horizon are dropped and the surviving
    /// final segment's end becomes `new_total` (an extended final harmonic
    /// rule simply keeps decaying; an extended constant stays flat).
    /// `new_total = 0` yields an empty schedule usable only for a zero-length
    /// run. The resolved `T0`/`T1` are kept for reporting.
    pub fn with_total(&self, new_total: u64) -> Schedule {
        let mut segments: Vec<Segment> = self
            .segments
            .iter()
            .filter(|seg| seg.start <= new_total)
            .copied()
            .collect();
        if let Some(last) = segments.last_mut() {
            last.end = new_total;
        }
        Schedule {
            segments,
            t0: self.t0,
            t1: self.t1,
            total: new_total,
            constants: self.constants,
        }
    }

    /// Compact one-line description for metadata headers, e.g.
    /// `1-480:const(0.0208…);481-510:const(0.333…);511-540:harm(10/(t-480))`.
    pub fn describe(&self) -> String {
        let parts: Vec<String> = self
            .segments
            .iter()
            .map(|seg| match seg.rule {
                RateRule::Constant { value } => {
                    format!("{}-{}:const({})", seg.start, seg.end, value)
                }
                RateRule::Harmonic { scale, t_offset } => {
                    format!("{}-{}:harm({}/(t-{}))", seg.start, seg.end, scale, t_offset)
                }
            })
            .collect();
        parts.join(";")
    }
}

/// `Σ_{t=a}^{b} 1/t` (inclusive, `1 ≤ a ≤ b`), by direct accumulation.
/// Brackets the integral: the sum lies in `[ln((b+1)/a), ln(b/(a−1))]`.
pub fn harmonic_sum(a: u64, b: u64) -> f64 {
    debug_assert!(a >= 1 && a <= b);
    let mut sum = 0.0;
    for t in a..=b {
        sum += 1.0 / t as f64;
    }
    sum
}

/// Ceiling with a dust snap: values within `1e−9` (relative) of an integer are
/// treated as that integer before rounding up. The Θ̃ phase lengths are scale
/// estimates, and the snap keeps documented integer examples (480, 8000, …)
/// platform-stable instead of hostage to the last bit of a float division.
fn ceil_phase(x: f64, what: &str) -> Result<u64> {
    if !x.is_finite() || x <= 0.0 {
        return Err(Error::invalid(format!(
            "{what} must be finite and > 0, got {x}"
        )));
    }
    if x > 9.0e15 {
        return Err(Error::invalid(format!(
            "{what} = {x} overflows a practical stream length"
        )));
    }
    let r = x.round();
    let snapped = if (x - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r
    } else {
        x.ceil()
    };
    Ok((snapped as u64).max(1))
}

fn check_unit_interval(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() || v <= 0.0 || v > 1.0 {
        return Err(Error::invalid(format!(
            "{name} must lie in (0, 1], got {v}"
        )));
    }
    Ok(())
}

/// The three-phase schedule keyed to an eigenvalue gap:
/// `T0 = ⌈C_T0·kΛ·L/(gap²p²)⌉`, `T1 = ⌈C_T1·Λ·L/gap²⌉`,
/// `T = T0 + T1 + ⌈C_T1·Λ·L/(gap²ε)⌉`, with rates `C_eta/(gap·T0)`,
/// `C_eta/(gap·T1)`, `C_eta/(gap·(t−T0))`.
pub fn gap_dep_schedule(
    k: usize,
    lam: f64,
    gap: f64,
    eps: f64,
    p: f64,
    constants: &ScheduleConstants,
) -> Result<Schedule> {
    gap_dep_schedule_opts(k, lam, gap, eps, p, constants, false)
}

/// [`gap_dep_schedule`] with the option of dropping the plateau phase: the
/// intermediate stage is a proof convenience, and with `collapse_plateau` the
/// harmonic decay starts right after the warmup (same total length).
pub fn gap_dep_schedule_opts(
    k: usize,
    lam: f64,
    gap: f64,
    eps: f64,
    p: f64,
    constants: &ScheduleConstants,
    collapse_plateau: bool,
) -> Result<Schedule> {
    if k == 0 {
        return Err(Error::invalid("need k ≥ 1"));
    }
    if !gap.is_finite() || gap <= 0.0 || gap > 1.0 / k as f64 {
        return Err(Error::invalid(format!(
            "gap must lie in (0, 1/k] = (0, {}], got {gap}",
            1.0 / k as f64
        )));
    }
    check_unit_interval("Λ", lam)?;
    check_unit_interval("ε", eps)?;
    check_unit_interval("p", p)?;
    constants.validate()?;
    let l = constants.log_factor;
    let t0 = ceil_phase(
        constants.c_t0 * k as f64 * lam * l / (gap * gap * p * p),
        "T0",
    )?;
    let t1 = ceil_phase(constants.c_t1 * lam * l / (gap * gap), "T1")?;
    let tail = ceil_phase(constants.c_t1 * lam * l / (gap * gap * eps), "final phase")?;
    let total = t0 + t1 + tail;
    let c = constants.c_eta;
    let warmup = RateRule::Constant {
        value: c / (gap * t0 as f64),
    };
    let decay = RateRule::Harmonic {
        scale: c / gap,
        t_offset: t0,
    };
    let segments = if collapse_plateau {
        vec![
            Segment {
                start: 1,
                end: t0,
                rule: warmup,
            },
            Segment {
                start: t0 + 1,
                end: total,
                rule: decay,
            },
        ]
    } else {
        vec![
            Segment {
                start: 1,
                end: t0,
                rule: warmup,
            },
            Segment {
                start: t0 + 1,
                end: t0 + t1,
                rule: RateRule::Constant {
                    value: c / (gap * t1 as f64),
                },
            },
            Segment {
                start: t0 + t1 + 1,
                end: total,
                rule: decay,
            },
        ]
    };
    Schedule::from_parts(segments, t0, t1, *constants)
}

/// The gap-free variant: same shape with the gap replaced by the band width
/// `ρ` and `T0 = ⌈C_T0·k·min{1, Λ1 + kΛ2/ρ²}·L/(ρ²p²)⌉`,
/// `T1 = ⌈C_T1·(Λ1+Λ2)·L/ρ²⌉`. `Λ2 = 0` reduces `T0` to the gap-keyed form
/// with `Λ = Λ1`.
pub fn gap_free_schedule(
    k: usize,
    lam1: f64,
    lam2: f64,
    rho: f64,
    eps: f64,
    p: f64,
    constants: &ScheduleConstants,
) -> Result<Schedule> {
    let (t0, t1, tail) = gap_free_phases(k, lam1, lam2, rho, eps, p, constants)?;
    let total = t0 + t1 + tail;
    let c = constants.c_eta;
    let segments = vec![
        Segment {
            start: 1,
            end: t0,
            rule: RateRule::Constant {
                value: c / (rho * t0 as f64),
            },
        },
        Segment {
            start: t0 + 1,
            end: t0 + t1,
            rule: RateRule::Constant {
                value: c / (rho * t1 as f64),
            },
        },
        Segment {
            start: t0 + t1 + 1,
            end: total,
            rule: RateRule::Harmonic {
                scale: c / rho,
                t_offset: t0,
            },
        },
    ];
    Schedule::from_parts(segments, t0, t1, *constants)
}

fn gap_free_phases(
    k: usize,
    lam1: f64,
    lam2: f64,
    rho: f64,
    eps: f64,
    p: f64,
    constants: &ScheduleConstants,
) -> Result<(u64, u64, u64)> {
    if k == 0 {
        return Err(Error::invalid("need k ≥ 1"));
    }
    if !rho.is_finite() || rho <= 0.0 || rho > 1.0 / k as f64 {
        return Err(Error::invalid(format!(
            "ρ must lie in (0, 1/k] = (0, {}], got {rho}",
            1.0 / k as f64
        )));
    }
    check_unit_interval("Λ1", lam1)?;
    if !lam2.is_finite() || lam2 < 0.0 || lam2 > 1.0 {
        return Err(Error::invalid(format!(
            "Λ2 must lie in [0, 1], got {lam2}"
        )));
    }
    check_unit_interval("ε", eps)?;
    check_unit_interval("p", p)?;
    constants.validate()?;
    let l = constants.log_factor;
    let crowd = (lam1 + k as f64 * lam2 / (rho * rho)).min(1.0);
    let t0 = ceil_phase(
        constants.c_t0 * k as f64 * crowd * l / (rho * rho * p * p),
        "T0",
    )?;
    let t1 = ceil_phase(constants.c_t1 * (lam1 + lam2) * l / (rho * rho), "T1")?;
    let tail = ceil_phase(
        constants.c_t1 * (lam1 + lam2) * l / (rho * rho * eps),
        "final phase",
    )?;
    Ok((t0, t1, tail))
}

/// One staged-insertion epoch: how long it runs and how many fresh columns
/// are inserted at its start.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Epoch {
    pub length: u64,
    pub new_columns: usize,
}

/// The staged warm-start plan: `s = ⌈log₂(k+1)⌉` epochs with halving column
/// installments, plus the global sawtooth schedule they run under.
#[derive(Debug, Clone, PartialEq)]
pub struct OjaPPPlan {
    pub epochs: Vec<Epoch>,
    pub schedule: Schedule,
}

impl OjaPPPlan {
    /// Number of epochs `s`.
    pub fn stages(&self) -> usize {
        self.epochs.len()
    }

    /// Total columns inserted, `Σ r_i = k`.
    pub fn total_columns(&self) -> usize {
        self.epochs.iter().map(|e| e.new_columns).sum()
    }

    /// The same plan with the stream length overridden. The final epoch
    /// absorbs the change, so the override must leave room for every
    /// insertion phase plus the plateau: `new_total ≥ 11·s·T0 + T1 + 1`.
    pub fn with_total(&self, new_total: u64) -> Result<OjaPPPlan> {
        let s = self.epochs.len() as u64;
        let t0 = self.schedule.t0();
        let t1 = self.schedule.t1();
        let min_total = 11 * s * t0 + t1 + 1;
        if new_total < min_total {
            return Err(Error::invalid(format!(
                "staged plan needs at least {min_total} steps \
                 (insertion phases plus plateau), got {new_total}"
            )));
        }
        let mut epochs = self.epochs.clone();
        let prefix: u64 = epochs[..epochs.len() - 1].iter().map(|e| e.length).sum();
        epochs.last_mut().unwrap().length = new_total - prefix;
        Ok(OjaPPPlan {
            epochs,
            schedule: self.schedule.with_total(new_total),
        })
    }
}

/// The halving column installments `r_i = ⌊k/2^{i−1}⌋ − ⌊k/2^i⌋` for
/// `i = 1..s` with `s = ⌈log₂(k+1)⌉`; they telescope to exactly `k` and every
/// installment is at least 1.
pub fn insertion_columns(k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::invalid("need k ≥ 1"));
    }
    let s = (usize::BITS - k.leading_zeros()) as usize; // ⌈log₂(k+1)⌉
    let mut cols = Vec::with_capacity(s);
    let mut prev = k;
    for i in 1..=s {
        let cur = k >> i;
        cols.push(prev - cur);
        prev = cur;
    }
    Ok(cols)
}

/// Build the staged warm-start plan. Epochs `1..s−1` run for `11·T0` steps
/// each (warmup `C/(ρT0)` for `T0` steps, then harmonic `C/(ρ(t−t_epoch))`
/// measured from the epoch's origin); the last epoch repeats that shape and
/// then finishes with a `T1` plateau at `C/(ρT1)` and the final harmonic
/// decay `C/(ρ(t−11sT0))`. Total `T = 11·s·T0 + T1 + ⌈C_T1·(Λ1+Λ2)·L/(ρ²ε)⌉`.
pub fn ojapp_plan(
    k: usize,
    lam1: f64,
    lam2: f64,
    rho: f64,
    eps: f64,
    p: f64,
    constants: &ScheduleConstants,
) -> Result<OjaPPPlan> {
    ojapp_plan_opts(k, lam1, lam2, rho, eps, p, constants, false)
}

/// [`ojapp_plan`] with the optional simplification of running every epoch's
/// mid-phase at the flat warmup rate instead of the harmonic dip (the epoch
/// rates "can all be set to the same value"); default off.
#[allow(clippy::too_many_arguments)]
pub fn ojapp_plan_opts(
    k: usize,
    lam1: f64,
    lam2: f64,
    rho: f64,
    eps: f64,
    p: f64,
    constants: &ScheduleConstants,
    flat_epoch_rates: bool,
) -> Result<OjaPPPlan> {
    let cols = insertion_columns(k)?;
    let s = cols.len();
    // The staged analysis keys T0 to Λ1 + Λ2/p² (oversampling the band by
    // 1/p²) and T1 to Λ1 + Λ2; reuse the shared validation with those sums.
    if !lam2.is_finite() || lam2 < 0.0 || lam2 > 1.0 {
        return Err(Error::invalid(format!(
            "Λ2 must lie in [0, 1], got {lam2}"
        )));
    }
    check_unit_interval("Λ1", lam1)?;
    check_unit_interval("ε", eps)?;
    check_unit_interval("p", p)?;
    if !rho.is_finite() || rho <= 0.0 || rho > 1.0 / k as f64 {
        return Err(Error::invalid(format!(
            "ρ must lie in (0, 1/k] = (0, {}], got {rho}",
            1.0 / k as f64
        )));
    }
    constants.validate()?;
    let l = constants.log_factor;
    let t0 = ceil_phase(
        constants.c_t0 * (lam1 + lam2 / (p * p)) * l / (rho * rho * p * p),
        "T0",
    )?;
    let t1 = ceil_phase(constants.c_t1 * (lam1 + lam2) * l / (rho * rho), "T1")?;
    let tail = ceil_phase(
        constants.c_t1 * (lam1 + lam2) * l / (rho * rho * eps),
        "final phase",
    )?;
    let total = 11 * s as u64 * t0 + t1 + tail;

    let c = constants.c_eta;
    let mut segments = Vec::with_capacity(2 * s + 2);
    for i in 0..s as u64 {
        let epoch_start = 11 * i * t0; // rates inside reference this origin
        segments.push(Segment {
            start: epoch_start + 1,
            end: epoch_start + t0,
            rule: RateRule::Constant {
                value: c / (rho * t0 as f64),
            },
        });
        let mid = if flat_epoch_rates {
            RateRule::Constant {
                value: c / (rho * t0 as f64),
            }
        } else {
            RateRule::Harmonic {
                scale: c / rho,
                t_offset: epoch_start,
            }
        };
        segments.push(Segment {
            start: epoch_start + t0 + 1,
            end: epoch_start + 11 * t0,
            rule: mid,
        });
    }
    let post = 11 * s as u64 * t0;
    segments.push(Segment {
        start: post + 1,
        end: post + t1,
        rule: RateRule::Constant {
            value: c / (rho * t1 as f64),
        },
    });
    segments.push(Segment {
        start: post + t1 + 1,
        end: total,
        rule: RateRule::Harmonic {
            scale: c / rho,
            t_offset: post,
        },
    });
    let schedule = Schedule::from_parts(segments, t0, t1, *constants)?;

    let mut epochs: Vec<Epoch> = cols
        .iter()
        .map(|&r| Epoch {
            length: 11 * t0,
            new_columns: r,
        })
        .collect();
    // The last epoch absorbs the plateau and decay phases.
    epochs[s - 1].length = total - 11 * (s as u64 - 1) * t0;
    Ok(OjaPPPlan { epochs, schedule })
}
