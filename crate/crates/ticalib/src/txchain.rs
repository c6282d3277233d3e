//! Transmit side: 16-QAM mapping, pulse shaping through the 2x2 complex MIMO
//! channel, and additive Gaussian noise, producing the four real lane
//! waveforms (H,I), (H,Q), (V,I), (V,Q) on the oversampled grid.

use crate::error::{Error, Result};
use crate::signal::{delay_taps, FirTaps, RateTag, RealSignal, RngStream};
use num_complex::Complex64;

/// Per-dimension 4-PAM levels of unit-average-energy 16-QAM.
///
/// `(1 + 9) / 2 = 5` per dimension, two dimensions, hence the `sqrt(10)`
/// normalization.
pub const QAM16_SCALE: f64 = 0.31622776601683794; // 1/sqrt(10)

pub fn pam4_levels() -> [f64; 4] {
    [-3.0 * QAM16_SCALE, -QAM16_SCALE, QAM16_SCALE, 3.0 * QAM16_SCALE]
}

/// Gray map for one dimension: 00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3
/// (adjacent levels differ in exactly one bit). Returns the scaled level.
#[inline]
pub fn gray_to_level(b0: u8, b1: u8) -> f64 {
    let raw = match (b0, b1) {
        (0, 0) => -3.0,
        (0, 1) => -1.0,
        (1, 1) => 1.0,
        (1, 0) => 3.0,
        _ => panic!("bits must be 0 or 1"),
    };
    raw * QAM16_SCALE
}

/// Inverse of [`gray_to_level`] for a sliced level.
#[inline]
pub fn level_to_gray(level: f64) -> (u8, u8) {
    let raw = (level / QAM16_SCALE).round() as i64;
    match raw {
        -3 => (0, 0),
        -1 => (0, 1),
        1 => (1, 1),
        3 => (1, 0),
        _ => panic!("level {level} is not a 4-PAM point"),
    }
}

/// Dual-polarization symbol stream together with the bits that produced it.
#[derive(Debug, Clone)]
pub struct SymbolStream {
    pub hpol: Vec<Complex64>,
    pub vpol: Vec<Complex64>,
    pub bit_source: Vec<u8>,
}

impl SymbolStream {
    pub fn len(&self) -> usize {
        self.hpol.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hpol.is_empty()
    }

    /// Real lane value of symbol `k`: lanes 0..4 are (H,I), (H,Q), (V,I), (V,Q).
    pub fn lane(&self, lane: usize, k: usize) -> f64 {
        match lane {
            0 => self.hpol[k].re,
            1 => self.hpol[k].im,
            2 => self.vpol[k].re,
            3 => self.vpol[k].im,
            _ => panic!("lane {lane} out of range"),
        }
    }
}

/// Map bits to dual-pol 16-QAM symbols.
///
/// Each symbol consumes 8 bits in the order
/// `[hI0, hI1, hQ0, hQ1, vI0, vI1, vQ0, vQ1]`, each dimension Gray-mapped by
/// [`gray_to_level`].
pub fn map_qam16(bits: &[u8]) -> Result<SymbolStream> {
    if bits.len() % 8 != 0 {
        return Err(Error::Config(format!(
            "bit count {} not divisible by 8",
            bits.len()
        )));
    }
    let n = bits.len() / 8;
    let mut hpol = Vec::with_capacity(n);
    let mut vpol = Vec::with_capacity(n);
    for k in 0..n {
        let b = &bits[8 * k..8 * k + 8];
        hpol.push(Complex64::new(
            gray_to_level(b[0], b[1]),
            gray_to_level(b[2], b[3]),
        ));
        vpol.push(Complex64::new(
            gray_to_level(b[4], b[5]),
            gray_to_level(b[6], b[7]),
        ));
    }
    Ok(SymbolStream { hpol, vpol, bit_source: bits.to_vec() })
}

/// Complex FIR taps with a nominal zero-delay index.
#[derive(Debug, Clone)]
pub struct CxTaps {
    pub taps: Vec<Complex64>,
    pub center: usize,
}

impl CxTaps {
    pub fn delta() -> Self {
        Self { taps: vec![Complex64::new(1.0, 0.0)], center: 0 }
    }

    pub fn zero() -> Self {
        Self { taps: vec![Complex64::new(0.0, 0.0)], center: 0 }
    }

    pub fn from_real(h: &FirTaps) -> Self {
        Self {
            taps: h.taps.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
            center: h.center,
        }
    }

    pub fn energy(&self) -> f64 {
        self.taps.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// 2x2 complex MIMO channel response `h[m][n]`, output polarization `m`,
/// input polarization `n`.
#[derive(Debug, Clone)]
pub struct ChannelResponse {
    pub h: [[CxTaps; 2]; 2],
}

impl ChannelResponse {
    pub fn identity() -> Self {
        Self {
            h: [
                [CxTaps::delta(), CxTaps::zero()],
                [CxTaps::zero(), CxTaps::delta()],
            ],
        }
    }
}

/// Differential-group-delay channel: +/-dgd/2 on two principal axes rotated
/// 45 degrees from the transmit polarizations.
///
/// `osf_t` is the number of grid samples per symbol period.
pub fn dgd_channel(dgd_seconds: f64, symbol_rate: f64, osf_t: usize) -> Result<ChannelResponse> {
    let grid_rate = symbol_rate * osf_t as f64;
    let half = 0.5 * dgd_seconds * grid_rate; // grid samples
    if half.abs() > 2.0 * osf_t as f64 {
        return Err(Error::Config(format!(
            "DGD {dgd_seconds} s exceeds two symbol periods"
        )));
    }
    let fd_len = 33;
    let plus = delay_taps(half, fd_len)?;
    let minus = delay_taps(-half, fd_len)?;
    // R(45) * diag(d+, d-) * R(-45): equal-length tap sets by construction.
    let n = plus.taps.len();
    let mut sum = vec![0.0; n];
    let mut dif = vec![0.0; n];
    for i in 0..n {
        sum[i] = 0.5 * (plus.taps[i] + minus.taps[i]);
        dif[i] = 0.5 * (plus.taps[i] - minus.taps[i]);
    }
    let c = plus.center;
    let sum = FirTaps::new(sum, c)?;
    let dif = FirTaps::new(dif, c)?;
    Ok(ChannelResponse {
        h: [
            [CxTaps::from_real(&sum), CxTaps::from_real(&dif)],
            [CxTaps::from_real(&dif), CxTaps::from_real(&sum)],
        ],
    })
}

/// Convolve the real pulse with each channel entry, yielding the combined
/// symbol-to-lane-waveform taps.
pub fn combine_pulse_channel(pulse: &FirTaps, ch: &ChannelResponse) -> [[CxTaps; 2]; 2] {
    let combine = |e: &CxTaps| -> CxTaps {
        let n = pulse.taps.len() + e.taps.len() - 1;
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        for (i, &p) in pulse.taps.iter().enumerate() {
            for (j, &c) in e.taps.iter().enumerate() {
                out[i + j] += c * p;
            }
        }
        CxTaps { taps: out, center: pulse.center + e.center }
    };
    [
        [combine(&ch.h[0][0]), combine(&ch.h[0][1])],
        [combine(&ch.h[1][0]), combine(&ch.h[1][1])],
    ]
}

/// Pulse-shape the symbol stream through the 2x2 channel.
///
/// Symbol `k` is centered at grid index `k * osf_t`; boundary tails are
/// truncated (callers discard a warm-up prefix). Returns the four real lanes.
pub fn shape_and_mix(
    sym: &SymbolStream,
    ch: &ChannelResponse,
    pulse: &FirTaps,
    osf_t: usize,
) -> Result<[RealSignal; 4]> {
    if osf_t < 2 {
        return Err(Error::Config("osf_t must be >= 2".into()));
    }
    let comb = combine_pulse_channel(pulse, ch);
    let n = sym.len() * osf_t;
    let mut lanes = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for (pol_out, lane_pair) in [(0usize, [0usize, 1]), (1, [2, 3])] {
        for pol_in in 0..2 {
            let taps = &comb[pol_out][pol_in];
            for k in 0..sym.len() {
                let a = if pol_in == 0 { sym.hpol[k] } else { sym.vpol[k] };
                let base = (k * osf_t) as i64 - taps.center as i64;
                for (l, &t) in taps.taps.iter().enumerate() {
                    let idx = base + l as i64;
                    if idx >= 0 && (idx as usize) < n {
                        let v = a * t;
                        lanes[lane_pair[0]][idx as usize] += v.re;
                        lanes[lane_pair[1]][idx as usize] += v.im;
                    }
                }
            }
        }
    }
    let [a, b, c, d] = lanes;
    Ok([
        RealSignal::new(a, RateTag::Oversampled),
        RealSignal::new(b, RateTag::Oversampled),
        RealSignal::new(c, RateTag::Oversampled),
        RealSignal::new(d, RateTag::Oversampled),
    ])
}

/// Add i.i.d. Gaussian noise of standard deviation `sigma` per sample.
pub fn add_awgn(x: &RealSignal, sigma: f64, rng: &mut RngStream) -> RealSignal {
    debug_assert!(sigma >= 0.0);
    if sigma == 0.0 {
        return x.clone();
    }
    let out = x.samples.iter().map(|&v| v + sigma * rng.gaussian()).collect();
    RealSignal::new(out, x.rate)
}
