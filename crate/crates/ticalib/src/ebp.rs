//! Error backpropagation engine.
//!
//! Slicer errors are upsampled to the ADC rate (zeros at odd indices),
//! pushed backward through the transposed receiver-DSP filters,
//!
//! `e_hat_i[n] = sum_j sum_l G[j][i]_{n+l}[l] * e_j[n+l]`,
//!
//! and correlated with the stored filter inputs to form stochastic gradients
//! for the compensation-equalizer taps, the offset estimates, and the
//! mixed-signal gain/phase trims. `e_hat` is half the derivative of the total
//! squared error with respect to the DSP input, so every update here uses
//! `alpha = 2` and folds step-size scaling into `mu`.
//!
//! Sign conventions: taps and gain trims see `+e_hat * w` correlations
//! (larger gain -> larger error -> subtract), while offset estimates enter
//! the signal path through a subtraction, so their descent direction is
//! `+e_hat` (the update *adds* the accumulated backpropagated error).

use crate::compeq::{delay_tap, enforce_constraint, CoefBank, LaneFrame};
use crate::error::{Error, Result};
use crate::rxdsp::MimoResponse;

/// Four error lanes over a contiguous absolute index range; indices outside
/// the range read as zero.
#[derive(Debug, Clone)]
pub struct ErrorSeq {
    pub start: i64,
    pub lanes: [Vec<f64>; 4],
}

impl ErrorSeq {
    pub fn len(&self) -> usize {
        self.lanes[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.lanes[0].is_empty()
    }

    pub fn end(&self) -> i64 {
        self.start + self.len() as i64
    }

    #[inline]
    pub fn at(&self, lane: usize, n: i64) -> f64 {
        let idx = n - self.start;
        if idx >= 0 && (idx as usize) < self.lanes[lane].len() {
            self.lanes[lane][idx as usize]
        } else {
            0.0
        }
    }
}

/// Zero-stuff baud-rate slicer errors to the sample rate (`Ts = T/2`):
/// symbol `k0 + k` lands at sample `2*(k0 + k)`, odd samples are zero.
pub fn upsample_error(e_sym: &[[f64; 4]], k0: u64) -> ErrorSeq {
    let n = 2 * e_sym.len();
    let mut lanes: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n]);
    for (k, e) in e_sym.iter().enumerate() {
        for lane in 0..4 {
            lanes[lane][2 * k] = e[lane];
        }
    }
    ErrorSeq { start: 2 * k0 as i64, lanes }
}

/// Backpropagate errors through the transposed DSP filters.
///
/// The output covers `[e.start - (L - 1), e.end)`: every index whose
/// anticausal window `n .. n + L - 1` touches the error support, with the
/// error treated as zero outside its range.
pub fn backpropagate(e: &ErrorSeq, gamma: &impl MimoResponse) -> ErrorSeq {
    let l_taps = gamma.l_taps();
    let start = e.start - (l_taps as i64 - 1);
    let len = e.len() + l_taps - 1;
    let mut lanes: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; len]);
    for idx in 0..len {
        let n = start + idx as i64;
        for i in 0..4 {
            let mut acc = 0.0;
            for l in 0..l_taps {
                let bank = gamma.bank_at(n + l as i64);
                for j in 0..4 {
                    acc += bank.taps[j][i][l] * e.at(j, n + l as i64);
                }
            }
            lanes[i][idx] = acc;
        }
    }
    ErrorSeq { start, lanes }
}

/// Read-only sample access by absolute index, zero outside the held range.
pub trait LaneSamples {
    fn at(&self, n: i64) -> f64;
}

impl LaneSamples for LaneFrame {
    fn at(&self, n: i64) -> f64 {
        let idx = n - self.start_index as i64;
        if idx >= 0 && (idx as usize) < self.samples.len() {
            self.samples[idx as usize]
        } else {
            0.0
        }
    }
}

/// Instantaneous CE gradient at sample `n = m + k*M` for one lane:
/// `grad[l] = 2 * e_hat_i[n] * w_i[n - l]`.
pub fn ce_gradient(
    e_hat: &ErrorSeq,
    w: &impl LaneSamples,
    m: usize,
    lane: usize,
    k: i64,
    m_period: usize,
    lg: usize,
) -> Vec<f64> {
    let n = m as i64 + k * m_period as i64;
    let e = 2.0 * e_hat.at(lane, n);
    (0..lg).map(|l| e * w.at(n - l as i64)).collect()
}

/// CE tap gradients accumulated over a backpropagated-error range.
#[derive(Debug, Clone)]
pub struct CeGradients {
    pub m: usize,
    pub lg: usize,
    /// indexed like the coefficient bank: `[lane][phase * lg + tap]`
    pub sums: [Vec<f64>; 4],
}

impl CeGradients {
    /// Norm of the accumulated gradient (diagnostics).
    pub fn norm(&self) -> f64 {
        self.sums
            .iter()
            .flat_map(|v| v.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

/// Accumulate `2 * e_hat_i[n] * w_i[n - l]` into the `(lane, n mod M, l)`
/// slots over the entire backpropagated range, then average over `k_sym`
/// (the number of error symbols that produced `e_hat`).
pub fn accumulate_ce_gradients(
    e_hat: &ErrorSeq,
    w: &[&dyn LaneSamples; 4],
    m: usize,
    lg: usize,
    k_sym: usize,
) -> CeGradients {
    let mut sums: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; m * lg]);
    for idx in 0..e_hat.len() {
        let n = e_hat.start + idx as i64;
        let phase = n.rem_euclid(m as i64) as usize;
        for lane in 0..4 {
            let e2 = 2.0 * e_hat.lanes[lane][idx];
            if e2 == 0.0 {
                continue;
            }
            let base = phase * lg;
            for l in 0..lg {
                sums[lane][base + l] += e2 * w[lane].at(n - l as i64);
            }
        }
    }
    let scale = 1.0 / k_sym as f64;
    for lane in sums.iter_mut() {
        for v in lane.iter_mut() {
            *v *= scale;
        }
    }
    CeGradients { m, lg, sums }
}

/// One SGD step on the CE taps, followed by the constraint projection.
pub fn ce_update(bank: &mut CoefBank, grads: &CeGradients, mu: f64) {
    debug_assert!(mu >= 0.0);
    debug_assert_eq!((grads.m, grads.lg), (bank.m, bank.lg));
    for lane in 0..4 {
        for (g, d) in bank.g[lane].iter_mut().zip(grads.sums[lane].iter()) {
            *g -= mu * d;
        }
    }
    enforce_constraint(bank);
}

/// Update the per-phase offset estimates from the backpropagated error.
///
/// The estimate is subtracted from the lane signal before the CE, whose
/// nominal response delays by `l_d`, so the error at sample `n` is attributed
/// to offset phase `(n - l_d) mod M`. The subtraction flips the gradient
/// sign: descent *adds* the accumulated error.
pub fn offset_update(bank: &mut CoefBank, e_hat: &ErrorSeq, mu_o: f64) {
    let align = delay_tap(bank.lg) as i64;
    let m = bank.m;
    let mut sums = [[0.0f64; 64]; 4];
    let mut counts = [[0u32; 64]; 4];
    assert!(m <= 64, "offset accumulator supports M <= 64");
    for idx in 0..e_hat.len() {
        let n = e_hat.start + idx as i64;
        let phase = (n - align).rem_euclid(m as i64) as usize;
        for lane in 0..4 {
            sums[lane][phase] += e_hat.lanes[lane][idx];
            counts[lane][phase] += 1;
        }
    }
    for lane in 0..4 {
        for phase in 0..m {
            if counts[lane][phase] > 0 {
                bank.o_hat[lane][phase] +=
                    mu_o * 2.0 * sums[lane][phase] / counts[lane][phase] as f64;
            }
        }
    }
}

/// Mixed-signal trim state: multiplicative gain per sub-ADC, sampling-phase
/// shift per rank-1 switch (fractions of `Ts`), and offsets subtracted before
/// quantization.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedSignalTrims {
    pub m_total: usize,
    pub m_phase: usize,
    pub gain: [Vec<f64>; 4],
    pub tau_ts: [Vec<f64>; 4],
    pub offset: [Vec<f64>; 4],
}

impl MixedSignalTrims {
    pub fn new(m_total: usize, m_phase: usize) -> Self {
        Self {
            m_total,
            m_phase,
            gain: std::array::from_fn(|_| vec![1.0; m_total]),
            tau_ts: std::array::from_fn(|_| vec![0.0; m_phase]),
            offset: std::array::from_fn(|_| vec![0.0; m_total]),
        }
    }

    pub fn lane_view(&self, lane: usize) -> crate::afe::LaneTrims<'_> {
        crate::afe::LaneTrims {
            gain: &self.gain[lane],
            tau_ts: &self.tau_ts[lane],
            offset: &self.offset[lane],
        }
    }
}

fn per_class_mean<F: FnMut(usize, i64) -> f64>(
    e_hat: &ErrorSeq,
    classes: usize,
    mut term: F,
) -> ([Vec<f64>; 4], [Vec<u32>; 4]) {
    let mut sums: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; classes]);
    let mut counts: [Vec<u32>; 4] = std::array::from_fn(|_| vec![0u32; classes]);
    for idx in 0..e_hat.len() {
        let n = e_hat.start + idx as i64;
        let class = n.rem_euclid(classes as i64) as usize;
        for lane in 0..4 {
            sums[lane][class] += e_hat.lanes[lane][idx] * term(lane, n);
            counts[lane][class] += 1;
        }
    }
    (sums, counts)
}

/// Gain-trim SGD step: `gain[i][g] -= mu * mean(2 * e_hat_i[n] * w_i[n])`
/// over samples with `n mod (M1*M2) = g`. `w` is the ADC output feeding the
/// receiver DSP.
pub fn gain_update(
    trims: &mut MixedSignalTrims,
    e_hat: &ErrorSeq,
    w: &[&dyn LaneSamples; 4],
    mu_gamma: f64,
) {
    let (sums, counts) = per_class_mean(e_hat, trims.m_total, |lane, n| w[lane].at(n));
    for lane in 0..4 {
        for g in 0..trims.m_total {
            if counts[lane][g] > 0 {
                trims.gain[lane][g] -= mu_gamma * 2.0 * sums[lane][g] / counts[lane][g] as f64;
            }
        }
    }
}

/// Sampling-phase trim step with the central-difference slope surrogate:
/// `tau[i][p] -= mu * mean(2 * e_hat_i[n] * (w_i[n+1] - w_i[n-1]))`
/// over samples with `n mod M1 = p`.
pub fn phase_update(
    trims: &mut MixedSignalTrims,
    e_hat: &ErrorSeq,
    w: &[&dyn LaneSamples; 4],
    mu_tau: f64,
) {
    let (sums, counts) =
        per_class_mean(e_hat, trims.m_phase, |lane, n| w[lane].at(n + 1) - w[lane].at(n - 1));
    for lane in 0..4 {
        for p in 0..trims.m_phase {
            if counts[lane][p] > 0 {
                trims.tau_ts[lane][p] -= mu_tau * 2.0 * sums[lane][p] / counts[lane][p] as f64;
            }
        }
    }
}

/// Offset-trim step (mixed-signal variant): the trim is subtracted before the
/// quantizer with no CE in the path, so the alignment shift is zero and the
/// descent direction is `+e_hat`, as in [`offset_update`].
pub fn trim_offset_update(trims: &mut MixedSignalTrims, e_hat: &ErrorSeq, mu_o: f64) {
    let (sums, counts) = per_class_mean(e_hat, trims.m_total, |_, _| 1.0);
    for lane in 0..4 {
        for g in 0..trims.m_total {
            if counts[lane][g] > 0 {
                trims.offset[lane][g] += mu_o * 2.0 * sums[lane][g] / counts[lane][g] as f64;
            }
        }
    }
}

/// Step sizes active from a given update count onward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GearRow {
    pub at: u64,
    pub mu: f64,
    pub mu_o: f64,
    pub mu_gamma: f64,
    pub mu_tau: f64,
}

/// Block-adaptation schedule: block size in samples, block decimation factor,
/// and the gear-shift table (update-count thresholds, ascending).
#[derive(Debug, Clone)]
pub struct AdaptSchedule {
    pub block_samples: usize,
    pub block_decimation: usize,
    pub gears: Vec<GearRow>,
}

impl AdaptSchedule {
    pub fn validate(&self, lg: usize, l_gamma: usize) -> Result<()> {
        if self.block_samples < lg + l_gamma {
            return Err(Error::Config(format!(
                "block of {} samples is shorter than L_g + L_Gamma = {}",
                self.block_samples,
                lg + l_gamma
            )));
        }
        if self.block_decimation == 0 {
            return Err(Error::Config("block decimation must be >= 1".into()));
        }
        if self.gears.is_empty() {
            return Err(Error::Config("gear table must not be empty".into()));
        }
        for w in self.gears.windows(2) {
            if w[1].at <= w[0].at {
                return Err(Error::Config("gear thresholds must ascend".into()));
            }
        }
        for g in &self.gears {
            if g.mu < 0.0 || g.mu_o < 0.0 || g.mu_gamma < 0.0 || g.mu_tau < 0.0 {
                return Err(Error::Config("step sizes must be nonnegative".into()));
            }
        }
        Ok(())
    }
}

/// True when `block_index` is an adaptation block: every `D_B`-th block.
pub fn decimation_gate(block_index: u64, sched: &AdaptSchedule) -> bool {
    block_index % sched.block_decimation as u64 == 0
}

/// Step sizes for the given update count: the last row whose threshold is
/// `<= iteration`.
pub fn gear_shift(iteration: u64, sched: &AdaptSchedule) -> Result<GearRow> {
    let mut row = None;
    for g in &sched.gears {
        if g.at <= iteration {
            row = Some(*g);
        }
    }
    row.ok_or_else(|| Error::Config("gear table empty or first threshold > iteration".into()))
}
