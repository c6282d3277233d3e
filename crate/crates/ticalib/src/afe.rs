//! Analog front-end and TI-ADC impairment model.
//!
//! Each of the four lanes runs through a per-interleave chain: bandwidth
//! filtering (single-pole lowpass), sampling at instants offset by the
//! interleave's phase error plus the lane's mean delay (I/Q skew), gain
//! scaling, DC offset, and a uniform mid-rise quantizer. Mixed-signal trims
//! enter the same path: the phase trim shifts the sampling instant, the gain
//! trim multiplies and the offset trim subtracts before quantization, so
//! converged trims cancel the drawn impairments.
//!
//! Sample `n` of a lane maps to interleave `n mod M`. In the two-rank
//! (hierarchical) configuration the sampling-phase error has period `M1`
//! (rank-1 switches) while gain and offset have period `M1*M2` (sub-ADCs).

use crate::error::{Error, Result};
use crate::signal::{FracInterp, OnePole, RateTag, RealSignal, RngStream};

/// ADC geometry: resolution, full-scale, aggregate sample rate `fs = 1/Ts`,
/// and interleave count `M`.
#[derive(Debug, Clone)]
pub struct AdcConfig {
    pub bits: u32,
    pub vfs: f64,
    pub fs: f64,
    pub m: usize,
}

impl AdcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bits < 2 {
            return Err(Error::Config(format!("ADC bits {} < 2", self.bits)));
        }
        if self.vfs <= 0.0 || self.fs <= 0.0 || self.m == 0 {
            return Err(Error::Config("ADC vfs, fs and M must be positive".into()));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        2.0 * self.vfs / (1u64 << self.bits) as f64
    }
}

/// Two-rank track-and-hold structure: `M1` rank-1 switches each feeding `M2`
/// sub-ADCs, plus sampling clock jitter.
#[derive(Debug, Clone)]
pub struct HierarchicalConfig {
    pub m1: usize,
    pub m2: usize,
    pub jitter_rms_s: f64,
    /// Apply an independent jitter draw for the rank-2 hold as well.
    pub jitter_all_ranks: bool,
}

/// Rank indices of sample `n`: `m1 = n mod M1`, `m2 = floor(n / M1) mod M2`.
/// The flattened sub-ADC index `m1 + M1*m2` equals `n mod (M1*M2)`.
pub fn hierarchical_index(n: u64, cfg: &HierarchicalConfig) -> (usize, usize) {
    let m1 = (n % cfg.m1 as u64) as usize;
    let m2 = ((n / cfg.m1 as u64) % cfg.m2 as u64) as usize;
    (m1, m2)
}

/// Per-lane, per-interleave impairment draws.
///
/// `gain`, `offset` and `bandwidth_hz` have `m_total` entries per lane;
/// `phase_t` has `m_phase` entries (the rank-1 period). `lane_delay_t` is the
/// lane's mean delay realizing I/Q skew. Phases and delays are fractions of
/// the symbol period `T`. A bandwidth of `f64::INFINITY` disables the lowpass.
#[derive(Debug, Clone)]
pub struct ImpairmentSet {
    pub m_total: usize,
    pub m_phase: usize,
    pub gain: [Vec<f64>; 4],
    pub phase_t: [Vec<f64>; 4],
    pub offset: [Vec<f64>; 4],
    pub bandwidth_hz: [Vec<f64>; 4],
    pub lane_delay_t: [f64; 4],
}

impl ImpairmentSet {
    /// Mathematical identity: unit gain, no delays, no offsets, no bandwidth
    /// limitation. `apply_afe_lane` with this set reduces to ideal sampling.
    pub fn none(m_total: usize, m_phase: usize) -> Self {
        Self {
            m_total,
            m_phase,
            gain: std::array::from_fn(|_| vec![1.0; m_total]),
            phase_t: std::array::from_fn(|_| vec![0.0; m_phase]),
            offset: std::array::from_fn(|_| vec![0.0; m_total]),
            bandwidth_hz: std::array::from_fn(|_| vec![f64::INFINITY; m_total]),
            lane_delay_t: [0.0; 4],
        }
    }

    /// Nominal front end: no mismatch but the nominal analog bandwidth in
    /// place. This is the reference chain for SNDR and noise calibration.
    pub fn nominal(m_total: usize, m_phase: usize, b0_hz: f64) -> Self {
        let mut s = Self::none(m_total, m_phase);
        if b0_hz.is_finite() && b0_hz > 0.0 {
            for lane in 0..4 {
                s.bandwidth_hz[lane] = vec![b0_hz; m_total];
            }
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        for lane in 0..4 {
            if self.gain[lane].len() != self.m_total
                || self.offset[lane].len() != self.m_total
                || self.bandwidth_hz[lane].len() != self.m_total
                || self.phase_t[lane].len() != self.m_phase
            {
                return Err(Error::Config("impairment set dimensions inconsistent".into()));
            }
            if self.gain[lane].iter().any(|&g| g <= 0.0) {
                return Err(Error::Config("gains must be positive".into()));
            }
            if self.phase_t[lane].iter().any(|&d| d.abs() >= 0.5) {
                return Err(Error::Config("|phase error| must be < 0.5 T".into()));
            }
        }
        Ok(())
    }
}

/// Uniform draw half-ranges, Table-style: each parameter is drawn
/// independently per lane and interleave from `[-range, +range]`.
#[derive(Debug, Clone, Copy)]
pub struct ImpairmentRanges {
    /// Gain error range: `gamma = 1 + U(-gain, gain)`.
    pub gain: f64,
    /// Sampling phase error range, fraction of `T`.
    pub phase_t: f64,
    /// Bandwidth mismatch range, fraction of `nominal_bw_hz`.
    pub bandwidth_frac: f64,
    /// I/Q skew range, fraction of `T`: one draw per polarization.
    pub skew_t: f64,
    /// DC offset range, fraction of full scale.
    pub offset_vfs: f64,
    /// Nominal analog bandwidth `B0`; 0 or infinite disables the lowpass.
    pub nominal_bw_hz: f64,
}

impl ImpairmentRanges {
    pub fn zero(nominal_bw_hz: f64) -> Self {
        Self {
            gain: 0.0,
            phase_t: 0.0,
            bandwidth_frac: 0.0,
            skew_t: 0.0,
            offset_vfs: 0.0,
            nominal_bw_hz,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gain >= 1.0 || self.gain < 0.0 {
            return Err(Error::Config("gain range must lie in [0, 1)".into()));
        }
        if self.phase_t < 0.0 || self.phase_t >= 0.5 {
            return Err(Error::Config("phase range must lie in [0, 0.5) T".into()));
        }
        if self.bandwidth_frac < 0.0 || self.bandwidth_frac >= 1.0 {
            return Err(Error::Config("bandwidth range must lie in [0, 1)".into()));
        }
        if self.skew_t < 0.0 || self.offset_vfs < 0.0 {
            return Err(Error::Config("ranges must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Draw an impairment set. Draw order is fixed (per lane: gains, phases,
/// offsets, bandwidths; then the two skew values), so a given stream state
/// always produces the same set.
///
/// The skew draw `tau_P` for each polarization is split evenly between its
/// two lanes (`+tau/2` on I, `-tau/2` on Q), matching the definition of skew
/// as the difference of lane mean delays.
pub fn draw_impairments(
    ranges: &ImpairmentRanges,
    m_total: usize,
    m_phase: usize,
    vfs: f64,
    rng: &mut RngStream,
) -> Result<ImpairmentSet> {
    ranges.validate()?;
    let mut set = ImpairmentSet::none(m_total, m_phase);
    let b0 = ranges.nominal_bw_hz;
    let has_bw = b0.is_finite() && b0 > 0.0;
    for lane in 0..4 {
        for m in 0..m_total {
            set.gain[lane][m] = 1.0 + rng.uniform(-ranges.gain, ranges.gain);
        }
        for m in 0..m_phase {
            set.phase_t[lane][m] = rng.uniform(-ranges.phase_t, ranges.phase_t);
        }
        for m in 0..m_total {
            set.offset[lane][m] = vfs * rng.uniform(-ranges.offset_vfs, ranges.offset_vfs);
        }
        for m in 0..m_total {
            set.bandwidth_hz[lane][m] = if has_bw {
                b0 * (1.0 + rng.uniform(-ranges.bandwidth_frac, ranges.bandwidth_frac))
            } else {
                f64::INFINITY
            };
        }
    }
    let tau_h = rng.uniform(-ranges.skew_t, ranges.skew_t);
    let tau_v = rng.uniform(-ranges.skew_t, ranges.skew_t);
    set.lane_delay_t = [0.5 * tau_h, -0.5 * tau_h, 0.5 * tau_v, -0.5 * tau_v];
    set.validate()?;
    Ok(set)
}

/// Mid-rise uniform quantizer with silent saturation at `+/-(VFS - step/2)`.
pub fn quantize(x: f64, adc: &AdcConfig) -> f64 {
    let delta = adc.step();
    let half_codes = 1i64 << (adc.bits - 1);
    let code = (x / delta).floor() as i64;
    let code = code.clamp(-half_codes, half_codes - 1);
    delta * (code as f64 + 0.5)
}

/// Perturb sampling instants with independent Gaussian jitter.
pub fn apply_jitter(instants: &[f64], jitter_rms: f64, rng: &mut RngStream) -> Vec<f64> {
    debug_assert!(jitter_rms >= 0.0);
    if jitter_rms == 0.0 {
        return instants.to_vec();
    }
    instants.iter().map(|&t| t + jitter_rms * rng.gaussian()).collect()
}

/// Borrowed per-lane view of mixed-signal trim values.
#[derive(Debug, Clone, Copy)]
pub struct LaneTrims<'a> {
    /// Multiplicative gain trims, one per sub-ADC (`m_total`).
    pub gain: &'a [f64],
    /// Sampling-phase trims in fractions of `Ts`, one per rank-1 switch.
    pub tau_ts: &'a [f64],
    /// Offset trims subtracted before quantization, one per sub-ADC.
    pub offset: &'a [f64],
}

/// Running statistics of an AFE lane.
#[derive(Debug, Clone, Copy, Default)]
pub struct AfeStats {
    pub saturations: u64,
    pub samples: u64,
}

struct GridBuf {
    data: Vec<f64>,
    start_abs: i64,
}

impl GridBuf {
    fn new() -> Self {
        Self { data: Vec::new(), start_abs: 0 }
    }

    fn end_abs(&self) -> i64 {
        self.start_abs + self.data.len() as i64
    }

    fn trim_to(&mut self, keep_from: i64) {
        let cut = (keep_from - self.start_abs).max(0) as usize;
        if cut > 0 && cut <= self.data.len() {
            self.data.drain(..cut);
            self.start_abs += cut as i64;
        }
    }
}

/// Streaming impairment processor for one lane.
///
/// Grid blocks are pushed in order; `emit` then produces output samples at
/// rate `1/Ts`. Callers must keep the pushed grid ahead of the emitted
/// samples by at least [`AfeLane::lookahead_grid`] grid samples, otherwise
/// the interpolation window is zero-padded.
pub struct AfeLane {
    lane: usize,
    imp: ImpairmentSet,
    adc: AdcConfig,
    grid_osf: usize,
    quantize_on: bool,
    interp: FracInterp,
    /// filter per distinct bandwidth, with the filtered grid tail
    groups: Vec<(OnePole, GridBuf)>,
    /// interleave -> group index; usize::MAX means unfiltered (infinite BW)
    group_of: Vec<usize>,
    raw: GridBuf,
    jitter_rms_grid: f64,
    jitter_all_ranks: bool,
    jitter_rng: Option<RngStream>,
    m1: usize,
    m2: usize,
    next_n: u64,
    history_cap_grid: Option<usize>,
    /// per-interleave interpolation taps, rebuilt when the fractional part of
    /// the sampling position changes (NaN marks an empty slot)
    tap_cache: Vec<(f64, Vec<f64>)>,
    scratch: Vec<f64>,
    pub stats: AfeStats,
}

impl AfeLane {
    /// `hier` selects the two-rank structure; `None` means a flat TI-ADC with
    /// `adc.m` interleaves. `jitter_rng` must be provided when jitter is
    /// nonzero.
    pub fn new(
        lane: usize,
        imp: &ImpairmentSet,
        adc: &AdcConfig,
        hier: Option<&HierarchicalConfig>,
        grid_osf: usize,
        quantize_on: bool,
        interp_len: usize,
        jitter_rng: Option<RngStream>,
        history_cap_grid: Option<usize>,
    ) -> Result<Self> {
        adc.validate()?;
        imp.validate()?;
        let (m1, m2, jitter_rms_s, jitter_all_ranks) = match hier {
            Some(h) => {
                if h.m1 * h.m2 != adc.m {
                    return Err(Error::Config(format!(
                        "M1*M2 = {} does not match M = {}",
                        h.m1 * h.m2,
                        adc.m
                    )));
                }
                (h.m1, h.m2, h.jitter_rms_s, h.jitter_all_ranks)
            }
            None => (adc.m, 1, 0.0, false),
        };
        if imp.m_total != adc.m || imp.m_phase != m1 {
            return Err(Error::Config(format!(
                "impairment dims ({}, {}) do not match ADC ({}, {m1})",
                imp.m_total, imp.m_phase, adc.m
            )));
        }
        if jitter_rms_s > 0.0 && jitter_rng.is_none() {
            return Err(Error::Config("jitter requires an RNG stream".into()));
        }
        let grid_rate = adc.fs * grid_osf as f64;
        // Deduplicate identical bandwidth draws into shared filter passes.
        let mut groups: Vec<(OnePole, GridBuf)> = Vec::new();
        let mut keys: Vec<u64> = Vec::new();
        let mut group_of = vec![usize::MAX; adc.m];
        for m in 0..adc.m {
            let bw = imp.bandwidth_hz[lane][m];
            if !bw.is_finite() || bw <= 0.0 {
                continue;
            }
            let f = OnePole::new(bw / grid_rate)?;
            let key = f.coeff_key();
            let gi = match keys.iter().position(|&k| k == key) {
                Some(i) => i,
                None => {
                    keys.push(key);
                    groups.push((f, GridBuf::new()));
                    groups.len() - 1
                }
            };
            group_of[m] = gi;
        }
        Ok(Self {
            lane,
            imp: imp.clone(),
            adc: adc.clone(),
            grid_osf,
            quantize_on,
            interp: FracInterp::new(interp_len)?,
            groups,
            group_of,
            raw: GridBuf::new(),
            jitter_rms_grid: jitter_rms_s * grid_rate,
            jitter_all_ranks,
            jitter_rng,
            m1,
            m2,
            next_n: 0,
            history_cap_grid,
            tap_cache: vec![(f64::NAN, Vec::new()); adc.m],
            scratch: Vec::new(),
            stats: AfeStats::default(),
        })
    }

    /// Grid samples by which the pushed grid must lead the emitted samples.
    pub fn lookahead_grid(&self) -> usize {
        // interpolator half-width plus the largest positive sampling offset
        self.interp.len() / 2 + 4 * self.grid_osf
    }

    pub fn push_grid(&mut self, block: &[f64]) {
        for (f, buf) in self.groups.iter_mut() {
            buf.data.extend(block.iter().map(|&x| f.step(x)));
        }
        self.raw.data.extend_from_slice(block);
        if let Some(cap) = self.history_cap_grid {
            let keep_from = self.raw.end_abs() - cap as i64;
            self.raw.trim_to(keep_from);
            for (_, buf) in self.groups.iter_mut() {
                buf.trim_to(keep_from);
            }
        }
    }

    /// Emit the next `count` output samples at rate `1/Ts`.
    pub fn emit(&mut self, count: usize, trims: Option<LaneTrims<'_>>) -> Vec<f64> {
        let mut out = Vec::with_capacity(count);
        let osf = self.grid_osf as f64;
        let jitter_on = self.jitter_rms_grid > 0.0;
        for _ in 0..count {
            let n = self.next_n;
            let p = (n % self.m1 as u64) as usize;
            let g = (n % self.adc.m as u64) as usize;
            let mut pos = n as f64 * osf
                + 2.0 * (self.imp.phase_t[self.lane][p] + self.imp.lane_delay_t[self.lane]) * osf;
            if let Some(t) = &trims {
                pos += t.tau_ts[p] * osf;
            }
            if jitter_on {
                let rng = self.jitter_rng.as_mut().expect("jitter rng");
                pos += self.jitter_rms_grid * rng.gaussian();
                if self.jitter_all_ranks && self.m2 > 1 {
                    pos += self.jitter_rms_grid * rng.gaussian();
                }
            }
            let rel_floor = pos.floor();
            let frac = pos - rel_floor;
            let i0 = rel_floor as i64;
            let gi = self.group_of[g];
            let v = if frac < 1e-12 || frac > 1.0 - 1e-12 {
                let idx = if frac < 1e-12 { i0 } else { i0 + 1 };
                let buf = if gi == usize::MAX { &self.raw } else { &self.groups[gi].1 };
                let j = idx - buf.start_abs;
                if j >= 0 && (j as usize) < buf.data.len() { buf.data[j as usize] } else { 0.0 }
            } else if jitter_on {
                self.interp.design_into(&mut self.scratch, frac);
                let buf = if gi == usize::MAX { &self.raw } else { &self.groups[gi].1 };
                self.interp.eval_taps(&self.scratch, &buf.data, i0 - buf.start_abs)
            } else {
                let cache = &mut self.tap_cache[g];
                if cache.0 != frac {
                    self.interp.design_into(&mut cache.1, frac);
                    cache.0 = frac;
                }
                let buf = if gi == usize::MAX { &self.raw } else { &self.groups[gi].1 };
                self.interp.eval_taps(&self.tap_cache[g].1, &buf.data, i0 - buf.start_abs)
            };
            let mut v = self.imp.gain[self.lane][g] * v;
            if let Some(t) = &trims {
                v = t.gain[g] * v;
            }
            v += self.imp.offset[self.lane][g];
            if let Some(t) = &trims {
                v -= t.offset[g];
            }
            self.stats.samples += 1;
            if v.abs() >= self.adc.vfs {
                self.stats.saturations += 1;
            }
            out.push(if self.quantize_on { quantize(v, &self.adc) } else { v });
            self.next_n += 1;
        }
        out
    }
}

/// Run one lane's full impairment chain over an oversampled waveform,
/// producing `len/grid_osf` samples at rate `1/Ts` (boundaries zero-padded).
pub fn apply_afe_lane(
    s_lane: &RealSignal,
    imp: &ImpairmentSet,
    lane: usize,
    adc: &AdcConfig,
    grid_osf: usize,
    quantize_on: bool,
) -> Result<RealSignal> {
    let mut proc = AfeLane::new(lane, imp, adc, None, grid_osf, quantize_on, 33, None, None)?;
    proc.push_grid(&s_lane.samples);
    let n = s_lane.samples.len() / grid_osf;
    Ok(RealSignal::new(proc.emit(n, None), RateTag::Ts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn test_adc(m: usize) -> AdcConfig {
        AdcConfig { bits: 8, vfs: 1.0, fs: 192e9, m }
    }

    #[test]
    fn zero_ranges_draw_identity_values() {
        let mut rng = RngStream::new(1);
        let r = ImpairmentRanges::zero(53e9);
        let s = draw_impairments(&r, 8, 8, 1.0, &mut rng).unwrap();
        for lane in 0..4 {
            assert!(s.gain[lane].iter().all(|&g| g == 1.0));
            assert!(s.phase_t[lane].iter().all(|&d| d == 0.0));
            assert!(s.offset[lane].iter().all(|&o| o == 0.0));
            assert!(s.bandwidth_hz[lane].iter().all(|&b| b == 53e9));
        }
        assert_eq!(s.lane_delay_t, [0.0; 4]);
    }

    #[test]
    fn table_ranges_are_honored_with_tight_order_statistics() {
        let mut rng = RngStream::new(2);
        let r = ImpairmentRanges {
            gain: 0.15,
            phase_t: 0.10,
            bandwidth_frac: 0.075,
            skew_t: 0.10,
            offset_vfs: 0.025,
            nominal_bw_hz: 53e9,
        };
        // 500 gain draws: min/max should crowd the interval ends.
        let mut draws = Vec::new();
        for _ in 0..16 {
            let s = draw_impairments(&r, 8, 8, 1.0, &mut rng).unwrap();
            for lane in 0..4 {
                draws.extend(s.gain[lane].iter().map(|g| g - 1.0));
                assert!(s.phase_t[lane].iter().all(|&d| d.abs() <= 0.10));
                assert!(s.offset[lane].iter().all(|&o| o.abs() <= 0.025));
                assert!(s.bandwidth_hz[lane]
                    .iter()
                    .all(|&b| (b / 53e9 - 1.0).abs() <= 0.075));
            }
            assert!(s.lane_delay_t.iter().all(|&t| t.abs() <= 0.05));
        }
        assert!(draws.len() >= 500);
        let min = draws.iter().cloned().fold(f64::MAX, f64::min);
        let max = draws.iter().cloned().fold(f64::MIN, f64::max);
        assert!((-0.15..=-0.13).contains(&min), "min {min}");
        assert!((0.13..=0.15).contains(&max), "max {max}");
    }

    #[test]
    fn quantize_midrise_convention() {
        let adc = test_adc(8);
        assert_eq!(quantize(0.0, &adc), 0.00390625);
        assert_eq!(quantize(2.0, &adc), 0.99609375);
        assert_eq!(quantize(-2.0, &adc), -0.99609375);
    }

    #[test]
    fn quantize_error_variance_is_step_squared_over_twelve() {
        let adc = test_adc(8);
        let mut rng = RngStream::new(11);
        let n = 200_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let x = rng.uniform(-1.0, 1.0);
            let e = quantize(x, &adc) - x;
            acc += e * e;
        }
        let var = acc / n as f64;
        let want = adc.step() * adc.step() / 12.0;
        assert!((var - want).abs() < 0.05 * want, "var {var} want {want}");
    }

    proptest! {
        #[test]
        fn quantizer_is_monotone_and_idempotent(a in -1.5f64..1.5, b in -1.5f64..1.5) {
            let adc = test_adc(8);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(quantize(lo, &adc) <= quantize(hi, &adc));
            let q = quantize(a, &adc);
            prop_assert_eq!(quantize(q, &adc), q);
        }
    }

    #[test]
    fn hierarchical_index_examples() {
        let cfg = HierarchicalConfig { m1: 4, m2: 2, jitter_rms_s: 0.0, jitter_all_ranks: false };
        assert_eq!(hierarchical_index(5, &cfg), (1, 1));
        assert_eq!(hierarchical_index(0, &cfg), (0, 0));
        // one full cycle covers every (m1, m2) pair exactly once
        let mut seen = vec![false; 8];
        for n in 0..8u64 {
            let (m1, m2) = hierarchical_index(n, &cfg);
            let idx = m1 + 4 * m2;
            assert!(!seen[idx]);
            seen[idx] = true;
            assert_eq!(idx as u64, n % 8);
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn jitter_zero_is_identity_and_std_matches() {
        let instants: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let mut rng = RngStream::new(3);
        assert_eq!(apply_jitter(&instants, 0.0, &mut rng), instants);

        let n = 1_000_000;
        let zeros = vec![0.0; n];
        let j = apply_jitter(&zeros, 100e-15, &mut rng);
        let var = j.iter().map(|v| v * v).sum::<f64>() / n as f64;
        let std = var.sqrt();
        assert!((std - 100e-15).abs() < 1e-15, "std {std}");
    }

    /// Band-limited probe on the grid: sum of low-frequency sinusoids.
    fn probe(len: usize, grid_osf: usize) -> Vec<f64> {
        let f1 = 0.11 / (2.0 * grid_osf as f64); // fractions of grid rate
        let f2 = 0.37 / (2.0 * grid_osf as f64);
        (0..len)
            .map(|i| {
                let t = i as f64;
                0.4 * (2.0 * PI * f1 * t).sin() + 0.25 * (2.0 * PI * f2 * t + 0.7).cos()
            })
            .collect()
    }

    #[test]
    fn identity_impairments_reduce_to_ideal_sampling() {
        let osf = 8;
        let grid = probe(4096 * osf / 8, osf);
        let sig = RealSignal::new(grid.clone(), RateTag::Oversampled);
        let imp = ImpairmentSet::none(8, 8);
        let y = apply_afe_lane(&sig, &imp, 0, &test_adc(8), osf, false).unwrap();
        let n = y.samples.len();
        for i in 4..n - 4 {
            let want = grid[i * osf];
            assert!((y.samples[i] - want).abs() < 1e-3, "sample {i}");
        }
    }

    #[test]
    fn pure_gain_doubles_ideal_samples() {
        let osf = 8;
        let grid = probe(2048, osf);
        let sig = RealSignal::new(grid.clone(), RateTag::Oversampled);
        let mut imp = ImpairmentSet::none(4, 4);
        for lane in 0..4 {
            imp.gain[lane] = vec![2.0; 4];
        }
        let y = apply_afe_lane(&sig, &imp, 2, &test_adc(4), osf, false).unwrap();
        for i in 4..y.samples.len() - 4 {
            assert!((y.samples[i] - 2.0 * grid[i * osf]).abs() < 2e-3);
        }
    }

    #[test]
    fn single_interleave_phase_error_shifts_tone() {
        // delta_0 = 0.1 T on a tone at 0.1/T: affected samples must match the
        // closed-form time-shifted tone.
        let osf = 8;
        let m = 4;
        let f_t = 0.1; // cycles per symbol period
        let osf_t = 2 * osf;
        let grid: Vec<f64> = (0..32768)
            .map(|i| (2.0 * PI * f_t * i as f64 / osf_t as f64).sin())
            .collect();
        let sig = RealSignal::new(grid, RateTag::Oversampled);
        let mut imp = ImpairmentSet::none(m, m);
        imp.phase_t[1][0] = 0.1;
        let y = apply_afe_lane(&sig, &imp, 1, &test_adc(m), osf, false).unwrap();
        for n in (8..y.samples.len() - 8).step_by(m) {
            // sample instant shifted by +0.1 T
            let t_sym = n as f64 / 2.0 + 0.1;
            let want = (2.0 * PI * f_t * t_sym).sin();
            assert!(
                (y.samples[n] - want).abs() < 1e-3,
                "n {n}: {} vs {want}",
                y.samples[n]
            );
        }
    }

    #[test]
    fn impairment_pattern_is_m_periodic() {
        let osf = 8;
        let m = 4;
        let grid = vec![0.5; 16384];
        let sig = RealSignal::new(grid, RateTag::Oversampled);
        let mut imp = ImpairmentSet::none(m, m);
        imp.gain[0] = vec![0.9, 1.0, 1.1, 1.2];
        imp.offset[0] = vec![0.01, -0.02, 0.0, 0.005];
        let y = apply_afe_lane(&sig, &imp, 0, &test_adc(m), osf, false).unwrap();
        let n = y.samples.len();
        for i in 8..n - 8 - m {
            assert!((y.samples[i] - y.samples[i + m]).abs() < 1e-12);
        }
        // and the values match gain*0.5 + offset
        for i in 8..12 {
            let want = imp.gain[0][i % m] * 0.5 + imp.offset[0][i % m];
            assert!((y.samples[i] - want).abs() < 1e-9);
        }
    }

    #[test]
    fn hierarchical_periods_differ_for_phase_and_gain() {
        // M1 = 2 phases, M2 = 2 sub-ADCs: gain pattern has period 4 while the
        // sampling phase pattern has period 2.
        let osf = 8;
        let adc = test_adc(4);
        let hier = HierarchicalConfig { m1: 2, m2: 2, jitter_rms_s: 0.0, jitter_all_ranks: false };
        let mut imp = ImpairmentSet::none(4, 2);
        imp.gain[0] = vec![1.0, 1.1, 1.2, 1.3];
        imp.phase_t[0] = vec![0.05, -0.08];
        let f_t = 0.07;
        let grid: Vec<f64> = (0..32768)
            .map(|i| (2.0 * PI * f_t * i as f64 / (2 * osf) as f64).sin())
            .collect();
        let mut lane =
            AfeLane::new(0, &imp, &adc, Some(&hier), osf, false, 33, None, None).unwrap();
        lane.push_grid(&grid);
        let y = lane.emit(grid.len() / osf, None);
        for n in 8..y.len() - 8 {
            let t_sym = n as f64 / 2.0 + imp.phase_t[0][n % 2];
            let want = imp.gain[0][n % 4] * (2.0 * PI * f_t * t_sym).sin();
            assert!((y[n] - want).abs() < 2e-3, "n {n}");
        }
    }

    #[test]
    fn trims_cancel_matching_impairments() {
        let osf = 8;
        let m = 4;
        let adc = test_adc(m);
        let grid = probe(32768, osf);
        let sig = RealSignal::new(grid.clone(), RateTag::Oversampled);
        let mut imp = ImpairmentSet::none(m, m);
        imp.gain[0] = vec![1.2, 0.9, 1.05, 0.85];
        imp.phase_t[0] = vec![0.05, -0.03, 0.08, 0.0];
        imp.offset[0] = vec![0.01, -0.015, 0.02, -0.005];
        let gain_trim: Vec<f64> = imp.gain[0].iter().map(|g| 1.0 / g).collect();
        let tau_trim: Vec<f64> = imp.phase_t[0].iter().map(|d| -2.0 * d).collect();
        // offsets enter after both gains, so the canceling trim is the offset itself
        let off_trim: Vec<f64> = imp.offset[0].clone();
        let mut lane = AfeLane::new(0, &imp, &adc, None, osf, false, 33, None, None).unwrap();
        lane.push_grid(&sig.samples);
        let trims = LaneTrims { gain: &gain_trim, tau_ts: &tau_trim, offset: &off_trim };
        let y = lane.emit(grid.len() / osf, Some(trims));
        for i in 8..y.len() - 8 {
            assert!((y[i] - grid[i * osf]).abs() < 3e-3, "i {i}");
        }
    }

    #[test]
    fn saturation_is_counted_not_fatal() {
        let adc = test_adc(4);
        let imp = ImpairmentSet::none(4, 4);
        let grid = vec![1.5; 1024];
        let mut lane = AfeLane::new(0, &imp, &adc, None, 8, true, 33, None, None).unwrap();
        lane.push_grid(&grid);
        let y = lane.emit(100, None);
        assert!(y.iter().skip(4).all(|&v| v == 0.99609375));
        assert!(lane.stats.saturations > 0);
    }
}
