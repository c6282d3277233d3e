//! Compensation Equalizer (CE): per-lane subtraction of the estimated
//! M-periodic DC offsets followed by an M-periodic time-varying FIR,
//! `x[n] = sum_l g_(n mod M)[l] * w[n - l]`.
//!
//! One coefficient slot can be constrained to a pure delay so the CE cannot
//! drift against the adaptive receiver equalizer downstream; the constraint
//! is re-imposed by projection after every update.

use crate::error::{Error, Result};
use std::io::{BufRead, Write};

/// CE coefficient state: `4 x M x L_g` real taps plus per-lane, per-phase
/// offset estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefBank {
    pub m: usize,
    pub lg: usize,
    /// taps, indexed `[lane][phase * lg + tap]`
    pub g: [Vec<f64>; 4],
    /// offset estimates, indexed `[lane][phase]`
    pub o_hat: [Vec<f64>; 4],
    /// slot frozen to the pass-through delta, if any
    pub constraint: Option<(usize, usize)>,
}

/// Pass-through tap index: `l_d = (L_g + 1) / 2` (0-based, `L_g` odd).
pub fn delay_tap(lg: usize) -> usize {
    (lg + 1) / 2
}

/// Initialize every phase of every lane to the pass-through delta and all
/// offset estimates to zero. The default constrained slot is lane 0, phase 0.
pub fn init_coefbank(m: usize, lg: usize) -> Result<CoefBank> {
    if lg < 3 || lg % 2 == 0 {
        return Err(Error::Config(format!("L_g = {lg} must be odd and >= 3")));
    }
    if m == 0 {
        return Err(Error::Config("M must be positive".into()));
    }
    let ld = delay_tap(lg);
    let mut g: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; m * lg]);
    for lane in g.iter_mut() {
        for phase in 0..m {
            lane[phase * lg + ld] = 1.0;
        }
    }
    Ok(CoefBank {
        m,
        lg,
        g,
        o_hat: std::array::from_fn(|_| vec![0.0; m]),
        constraint: Some((0, 0)),
    })
}

impl CoefBank {
    #[inline]
    pub fn taps(&self, lane: usize, phase: usize) -> &[f64] {
        &self.g[lane][phase * self.lg..(phase + 1) * self.lg]
    }

    #[inline]
    pub fn taps_mut(&mut self, lane: usize, phase: usize) -> &mut [f64] {
        &mut self.g[lane][phase * self.lg..(phase + 1) * self.lg]
    }

    /// True when the constrained slot holds the exact pass-through delta.
    pub fn constraint_holds(&self) -> bool {
        match self.constraint {
            None => true,
            Some((lane, phase)) => {
                let ld = delay_tap(self.lg);
                self.taps(lane, phase)
                    .iter()
                    .enumerate()
                    .all(|(l, &v)| v == if l == ld { 1.0 } else { 0.0 })
            }
        }
    }

    /// Plain-text serialization: `g <lane> <phase> <tap> <value>` and
    /// `o <lane> <phase> <value>` rows, full f64 precision.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("# coefbank v1 M={} Lg={}\n", self.m, self.lg));
        for lane in 0..4 {
            for phase in 0..self.m {
                for (tap, &v) in self.taps(lane, phase).iter().enumerate() {
                    s.push_str(&format!("g {lane} {phase} {tap} {v:.17e}\n"));
                }
            }
        }
        for lane in 0..4 {
            for (phase, &v) in self.o_hat[lane].iter().enumerate() {
                s.push_str(&format!("o {lane} {phase} {v:.17e}\n"));
            }
        }
        s
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn from_text(r: impl BufRead) -> Result<CoefBank> {
        let mut m = 0usize;
        let mut lg = 0usize;
        let mut bank: Option<CoefBank> = None;
        for line in r.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                for part in rest.split_whitespace() {
                    if let Some(v) = part.strip_prefix("M=") {
                        m = v.parse().map_err(|_| Error::Config("bad M".into()))?;
                    } else if let Some(v) = part.strip_prefix("Lg=") {
                        lg = v.parse().map_err(|_| Error::Config("bad Lg".into()))?;
                    }
                }
                bank = Some(init_coefbank(m, lg)?);
                continue;
            }
            let bank = bank
                .as_mut()
                .ok_or_else(|| Error::Config("missing coefbank header".into()))?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            let parse = |s: &str| -> Result<f64> {
                s.parse().map_err(|_| Error::Config(format!("bad value {s}")))
            };
            match fields.as_slice() {
                ["g", lane, phase, tap, value] => {
                    let (lane, phase, tap): (usize, usize, usize) = (
                        lane.parse().map_err(|_| Error::Config("bad lane".into()))?,
                        phase.parse().map_err(|_| Error::Config("bad phase".into()))?,
                        tap.parse().map_err(|_| Error::Config("bad tap".into()))?,
                    );
                    bank.g[lane][phase * lg + tap] = parse(value)?;
                }
                ["o", lane, phase, value] => {
                    let (lane, phase): (usize, usize) = (
                        lane.parse().map_err(|_| Error::Config("bad lane".into()))?,
                        phase.parse().map_err(|_| Error::Config("bad phase".into()))?,
                    );
                    bank.o_hat[lane][phase] = parse(value)?;
                }
                _ => return Err(Error::Config(format!("bad coefbank row: {line}"))),
            }
        }
        bank.ok_or_else(|| Error::Config("empty coefbank file".into()))
    }
}

/// A block of samples for one lane at rate `1/Ts`, with the absolute sample
/// index of its first element for modulo-M phase tracking.
#[derive(Debug, Clone)]
pub struct LaneFrame {
    pub samples: Vec<f64>,
    pub start_index: u64,
}

impl LaneFrame {
    pub fn new(samples: Vec<f64>, start_index: u64) -> Self {
        Self { samples, start_index }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Subtract the estimated M-periodic offsets: `w[n] = y[n] - o_hat[n mod M]`.
pub fn subtract_offset(y: &LaneFrame, bank: &CoefBank, lane: usize) -> LaneFrame {
    let m = bank.m as u64;
    let out = y
        .samples
        .iter()
        .enumerate()
        .map(|(j, &v)| v - bank.o_hat[lane][((y.start_index + j as u64) % m) as usize])
        .collect();
    LaneFrame::new(out, y.start_index)
}

/// Apply the time-varying CE filter. The frame must carry `L_g - 1` history
/// samples at its head; the output starts `L_g - 1` samples into the frame
/// and is `len - (L_g - 1)` long.
pub fn ce_filter(w: &LaneFrame, bank: &CoefBank, lane: usize) -> Result<LaneFrame> {
    let lg = bank.lg;
    if w.samples.len() < lg {
        return Err(Error::Contract(format!(
            "frame of {} samples cannot carry {} history samples",
            w.samples.len(),
            lg - 1
        )));
    }
    let out_start = w.start_index + (lg - 1) as u64;
    let n_out = w.samples.len() - (lg - 1);
    let mut out = Vec::with_capacity(n_out);
    let m = bank.m as u64;
    for j in 0..n_out {
        let n = out_start + j as u64;
        let taps = bank.taps(lane, (n % m) as usize);
        let base = j + lg - 1; // w index of sample n
        let mut acc = 0.0;
        for (l, &g) in taps.iter().enumerate() {
            acc += g * w.samples[base - l];
        }
        out.push(acc);
    }
    Ok(LaneFrame::new(out, out_start))
}

/// Reset the constrained slot to the exact pass-through delta.
pub fn enforce_constraint(bank: &mut CoefBank) {
    if let Some((lane, phase)) = bank.constraint {
        let ld = delay_tap(bank.lg);
        let taps = bank.taps_mut(lane, phase);
        for (l, v) in taps.iter_mut().enumerate() {
            *v = if l == ld { 1.0 } else { 0.0 };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::RngStream;

    #[test]
    fn init_places_delta_at_ld() {
        // L_g = 7: l_d = (7+1)/2 = 4 (0-based)
        let bank = init_coefbank(16, 7).unwrap();
        assert_eq!(delay_tap(7), 4);
        for lane in 0..4 {
            for phase in 0..16 {
                let taps = bank.taps(lane, phase);
                for (l, &v) in taps.iter().enumerate() {
                    assert_eq!(v, if l == 4 { 1.0 } else { 0.0 });
                }
            }
        }
        assert!(bank.o_hat.iter().all(|o| o.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn init_rejects_even_lg() {
        assert!(init_coefbank(8, 6).is_err());
        assert!(init_coefbank(8, 1).is_err());
    }

    #[test]
    fn fresh_bank_is_pure_delay() {
        let bank = init_coefbank(4, 7).unwrap();
        let mut rng = RngStream::new(4);
        let samples: Vec<f64> = (0..64).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let w = LaneFrame::new(samples.clone(), 10);
        let x = ce_filter(&w, &bank, 2).unwrap();
        // output sample n equals w[n - l_d]
        for (j, &v) in x.samples.iter().enumerate() {
            let n = x.start_index + j as u64;
            let w_idx = (n - 4 - w.start_index) as usize;
            assert_eq!(v, samples[w_idx]);
        }
    }

    #[test]
    fn subtract_offset_trivials_and_roundtrip() {
        let mut bank = init_coefbank(4, 3).unwrap();
        let y = LaneFrame::new(vec![1.0, 2.0, 3.0, 4.0, 5.0], 0);
        let w = subtract_offset(&y, &bank, 0);
        assert_eq!(w.samples, y.samples);

        for m in 0..4 {
            bank.o_hat[1][m] = 2.5;
        }
        let c = LaneFrame::new(vec![2.5; 8], 3);
        let w = subtract_offset(&c, &bank, 1);
        assert!(w.samples.iter().all(|&v| v == 0.0));

        // ground-truth roundtrip: subtracting the true offsets recovers the
        // pre-offset signal
        let mut rng = RngStream::new(5);
        let truth: Vec<f64> = (0..32).map(|_| rng.uniform(-0.5, 0.5)).collect();
        let offs = [0.01, -0.02, 0.005, 0.015];
        let noisy: Vec<f64> = truth
            .iter()
            .enumerate()
            .map(|(i, &v)| v + offs[(7 + i) % 4])
            .collect();
        bank.o_hat[2] = offs.to_vec();
        let w = subtract_offset(&LaneFrame::new(noisy, 7), &bank, 2);
        for (a, b) in w.samples.iter().zip(truth.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn ce_filter_hand_example() {
        // M = 2, L_g = 3, g0 = [1,0,0], g1 = [0,0,1], w = [1,2,3,4] with zero
        // history: x[n] picks w[n] on even phases and w[n-2] on odd ones.
        let mut bank = init_coefbank(2, 3).unwrap();
        bank.constraint = None;
        bank.taps_mut(0, 0).copy_from_slice(&[1.0, 0.0, 0.0]);
        bank.taps_mut(0, 1).copy_from_slice(&[0.0, 0.0, 1.0]);
        // L_g - 1 = 2 zero history samples precede the data, so the first
        // output lands on an even (phase 0) absolute index
        let w = LaneFrame::new(vec![0.0, 0.0, 1.0, 2.0, 3.0, 4.0], 0);
        let x = ce_filter(&w, &bank, 0).unwrap();
        assert_eq!(x.start_index, 2);
        // outputs are for n = 2,3,4,5 -> data indices 0..4 with phases 0,1,0,1
        assert_eq!(x.samples, vec![1.0, 0.0, 3.0, 2.0]);
    }

    #[test]
    fn ce_filter_matches_brute_force() {
        let m = 4;
        let lg = 5;
        let mut bank = init_coefbank(m, lg).unwrap();
        bank.constraint = None;
        let mut rng = RngStream::new(6);
        for lane in 0..4 {
            for v in bank.g[lane].iter_mut() {
                *v = rng.uniform(-1.0, 1.0);
            }
        }
        let w: Vec<f64> = (0..64).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let start = 13u64;
        let x = ce_filter(&LaneFrame::new(w.clone(), start), &bank, 3).unwrap();
        for (j, &v) in x.samples.iter().enumerate() {
            let n = x.start_index + j as u64;
            let phase = (n % m as u64) as usize;
            let mut acc = 0.0;
            for l in 0..lg {
                let idx = (n - l as u64 - start) as usize;
                acc += bank.g[3][phase * lg + l] * w[idx];
            }
            assert!((v - acc).abs() < 1e-14);
        }
    }

    #[test]
    fn ce_filter_requires_history() {
        let bank = init_coefbank(4, 7).unwrap();
        let w = LaneFrame::new(vec![1.0; 6], 0);
        assert!(matches!(
            ce_filter(&w, &bank, 0),
            Err(crate::error::Error::Contract(_))
        ));
    }

    #[test]
    fn ce_filter_is_bilinear() {
        let m = 2;
        let lg = 3;
        let mut rng = RngStream::new(8);
        let mk_bank = |rng: &mut RngStream| {
            let mut b = init_coefbank(m, lg).unwrap();
            b.constraint = None;
            for lane in 0..4 {
                for v in b.g[lane].iter_mut() {
                    *v = rng.uniform(-1.0, 1.0);
                }
            }
            b
        };
        let b1 = mk_bank(&mut rng);
        let b2 = mk_bank(&mut rng);
        let mut bsum = b1.clone();
        for lane in 0..4 {
            for (v, w) in bsum.g[lane].iter_mut().zip(b2.g[lane].iter()) {
                *v += w;
            }
        }
        let w1: Vec<f64> = (0..32).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let w2: Vec<f64> = (0..32).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let wsum: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| a + b).collect();

        // linear in w
        let xa = ce_filter(&LaneFrame::new(w1.clone(), 0), &b1, 0).unwrap();
        let xb = ce_filter(&LaneFrame::new(w2.clone(), 0), &b1, 0).unwrap();
        let xs = ce_filter(&LaneFrame::new(wsum, 0), &b1, 0).unwrap();
        for i in 0..xs.samples.len() {
            assert!((xs.samples[i] - xa.samples[i] - xb.samples[i]).abs() < 1e-13);
        }
        // linear in g
        let ya = ce_filter(&LaneFrame::new(w1.clone(), 0), &b1, 1).unwrap();
        let yb = ce_filter(&LaneFrame::new(w1.clone(), 0), &b2, 1).unwrap();
        let ys = ce_filter(&LaneFrame::new(w1, 0), &bsum, 1).unwrap();
        for i in 0..ys.samples.len() {
            assert!((ys.samples[i] - ya.samples[i] - yb.samples[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn polyphase_decomposition_matches_time_multiplexed_filtering() {
        // Filtering a length-kM frame equals per-phase polyphase filtering.
        let m = 3;
        let lg = 5;
        let mut bank = init_coefbank(m, lg).unwrap();
        bank.constraint = None;
        let mut rng = RngStream::new(9);
        for lane in 0..4 {
            for v in bank.g[lane].iter_mut() {
                *v = rng.uniform(-1.0, 1.0);
            }
        }
        let w: Vec<f64> = (0..6 * m + lg - 1).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let x = ce_filter(&LaneFrame::new(w.clone(), 0), &bank, 0).unwrap();
        // per-phase: for each output phase p, gather outputs by direct sum
        for (j, &v) in x.samples.iter().enumerate() {
            let n = x.start_index + j as u64;
            let p = (n % m as u64) as usize;
            let mut acc = 0.0;
            for l in 0..lg {
                acc += bank.g[0][p * lg + l] * w[(n - l as u64) as usize];
            }
            assert!((v - acc).abs() < 1e-14);
        }
    }

    #[test]
    fn constraint_projection_restores_delta() {
        let mut bank = init_coefbank(4, 7).unwrap();
        // already-delta slot: unchanged
        let before = bank.clone();
        enforce_constraint(&mut bank);
        assert_eq!(bank, before);
        // perturbed slot: restored exactly
        bank.taps_mut(0, 0).copy_from_slice(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7]);
        assert!(!bank.constraint_holds());
        enforce_constraint(&mut bank);
        assert!(bank.constraint_holds());
        // other slots untouched
        for phase in 1..4 {
            let taps = bank.taps(0, phase);
            assert_eq!(taps[delay_tap(7)], 1.0);
        }
    }

    #[test]
    fn coefbank_text_roundtrip_is_exact() {
        let mut bank = init_coefbank(4, 5).unwrap();
        let mut rng = RngStream::new(10);
        for lane in 0..4 {
            for v in bank.g[lane].iter_mut() {
                *v = rng.uniform(-1.0, 1.0);
            }
            for v in bank.o_hat[lane].iter_mut() {
                *v = rng.uniform(-0.03, 0.03);
            }
        }
        let text = bank.to_text();
        let back = CoefBank::from_text(text.as_bytes()).unwrap();
        assert_eq!(bank.g, back.g);
        assert_eq!(bank.o_hat, back.o_hat);
    }
}
