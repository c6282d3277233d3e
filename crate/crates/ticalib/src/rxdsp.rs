//! Receiver DSP model: a real time-varying 4x4 MIMO T/2 fractionally spaced
//! equalizer with a nearest-level slicer, plus its own LMS adaptation. The
//! equalizer output is computed at symbol rate from even sample indices:
//! `u_k[j] = sum_i sum_l G[j][i][l] * x_i[2k - l]`.

use crate::compeq::LaneFrame;
use crate::error::{Error, Result};

/// Real 4x4 MIMO filter bank, `taps[j][i][l]` with output `j`, input `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DspFilterBank {
    pub l_taps: usize,
    pub taps: [[Vec<f64>; 4]; 4],
}

impl DspFilterBank {
    pub fn zeros(l_taps: usize) -> Self {
        Self {
            l_taps,
            taps: std::array::from_fn(|_| std::array::from_fn(|_| vec![0.0; l_taps])),
        }
    }

    /// Diagonal delta: `G[j][i][l] = gain * d_{j,i} d_{l,tap}`.
    pub fn delta(l_taps: usize, tap: usize, gain: f64) -> Self {
        let mut bank = Self::zeros(l_taps);
        for j in 0..4 {
            bank.taps[j][j][tap] = gain;
        }
        bank
    }

    /// Identity: single tap at l = 0.
    pub fn identity() -> Self {
        Self::delta(1, 0, 1.0)
    }
}

/// Time-varying view of the receiver DSP filters: the bank that applies at
/// sample index `n`. A plain [`DspFilterBank`] is the time-invariant case.
pub trait MimoResponse {
    fn l_taps(&self) -> usize;
    fn bank_at(&self, n: i64) -> &DspFilterBank;
}

impl MimoResponse for DspFilterBank {
    fn l_taps(&self) -> usize {
        self.l_taps
    }

    fn bank_at(&self, _n: i64) -> &DspFilterBank {
        self
    }
}

/// Periodically time-varying response, `bank_at(n) = banks[n mod period]`.
#[derive(Debug, Clone)]
pub struct PeriodicMimo {
    pub banks: Vec<DspFilterBank>,
}

impl MimoResponse for PeriodicMimo {
    fn l_taps(&self) -> usize {
        self.banks[0].l_taps
    }

    fn bank_at(&self, n: i64) -> &DspFilterBank {
        let p = self.banks.len() as i64;
        &self.banks[(n.rem_euclid(p)) as usize]
    }
}

/// Downsampled MIMO equalizer output over four aligned lane frames.
///
/// Emits `u_k` for every symbol index `k` such that both `2k` and
/// `2k - (L - 1)` fall inside the frames. Frames must share start and length.
pub fn mimo_ffe(x: &[LaneFrame; 4], gamma: &impl MimoResponse) -> Result<Vec<[f64; 4]>> {
    let start = x[0].start_index;
    let len = x[0].len();
    if x.iter().any(|f| f.start_index != start || f.len() != len) {
        return Err(Error::Contract("lane frames must be aligned".into()));
    }
    let l_taps = gamma.l_taps() as u64;
    if (len as u64) < l_taps {
        return Err(Error::Contract("insufficient history for the filter span".into()));
    }
    // first n with full history
    let n_first = start + l_taps - 1;
    let k_first = n_first.div_ceil(2);
    let k_last = (start + len as u64 - 1) / 2;
    let mut out = Vec::with_capacity((k_last + 1 - k_first) as usize);
    for k in k_first..=k_last {
        let n = 2 * k;
        let bank = gamma.bank_at(n as i64);
        let mut u = [0.0; 4];
        for (j, u_j) in u.iter_mut().enumerate() {
            let mut acc = 0.0;
            for i in 0..4 {
                let taps = &bank.taps[j][i];
                let xi = &x[i].samples;
                let base = (n - start) as usize;
                for (l, &t) in taps.iter().enumerate() {
                    acc += t * xi[base - l];
                }
            }
            *u_j = acc;
        }
        out.push(u);
    }
    Ok(out)
}

/// Nearest level of a sorted alphabet; exact midpoints resolve to the lower
/// level, inputs beyond the extremes clamp to them.
pub fn slicer(u: f64, alphabet: &[f64]) -> f64 {
    debug_assert!(!alphabet.is_empty());
    let mut best = alphabet[0];
    for &a in &alphabet[1..] {
        // strict comparison against the midpoint keeps exact ties on the
        // lower level
        if u > 0.5 * (best + a) {
            best = a;
        } else {
            break;
        }
    }
    best
}

/// Per-lane slicer errors `e = u - a_hat` and the total squared error.
pub fn slicer_error(u: &[f64; 4], a_hat: &[f64; 4]) -> ([f64; 4], f64) {
    let mut e = [0.0; 4];
    let mut total = 0.0;
    for j in 0..4 {
        e[j] = u[j] - a_hat[j];
        total += e[j] * e[j];
    }
    (e, total)
}

/// One stochastic-gradient step on the equalizer taps:
/// `G[j][i][l] -= mu * e[j] * x_i[2k - l]`.
///
/// `x_recent[i][l]` must hold `x_i[2k - l]`.
pub fn ffe_lms_update(bank: &mut DspFilterBank, x_recent: &[&[f64]; 4], e: &[f64; 4], mu: f64) {
    debug_assert!(mu >= 0.0);
    if mu == 0.0 {
        return;
    }
    for j in 0..4 {
        let scale = mu * e[j];
        if scale == 0.0 {
            continue;
        }
        for i in 0..4 {
            let taps = &mut bank.taps[j][i];
            let xi = x_recent[i];
            for (l, t) in taps.iter_mut().enumerate() {
                *t -= scale * xi[l];
            }
        }
    }
}
