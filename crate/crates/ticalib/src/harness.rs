//! Config-driven experiment runner: single cases, noise calibration,
//! Monte Carlo batches with BER histograms, and convergence traces.
//!
//! A case streams in adaptation-block units: one block of symbols is shaped
//! onto the oversampled grid (one block ahead, so the sampling interpolators
//! always have lookahead), converted by the impaired AFE/TI-ADC lanes, passed
//! through offset subtraction and the CE (digital mode) or raw (no-cal /
//! mixed-signal), equalized symbol by symbol with the adaptive MIMO FFE, and
//! sliced. After each block the slicer errors are backpropagated and the
//! calibration parameters updated per the schedule.
//!
//! A nominal (mismatch-free, unquantized) conversion of the *same* noisy
//! analog waveform runs alongside as the SNDR reference, so SNDR isolates
//! converter distortion from channel noise.
//!
//! Determinism: every stochastic element draws from a child stream of the
//! case seed (ids: 0 bits, 1..4 per-lane noise, 5 impairments, 6..9 per-lane
//! jitter), and case seeds derive from the master seed via
//! [`crate::signal::derive_seed`]. Identical config and seed produce
//! byte-identical outputs; Monte Carlo cases are order-independent.

use crate::afe::{draw_impairments, AfeLane, ImpairmentRanges, ImpairmentSet};
use crate::compeq::{delay_tap, init_coefbank, CoefBank};
use crate::config::{RunConfig, RunMode};
use crate::ebp::{
    accumulate_ce_gradients, backpropagate, ce_update, decimation_gate, gear_shift,
    offset_update, phase_update, trim_offset_update, upsample_error, LaneSamples,
    MixedSignalTrims,
};
use crate::ebp::gain_update;
use crate::error::{Error, Result};
use crate::metrics::{self, ber, MetricKind, MetricTrace};
use crate::rxdsp::{slicer, DspFilterBank};
use crate::signal::{derive_seed, design_rrc, RngStream};
use crate::txchain::{
    combine_pulse_channel, dgd_channel, level_to_gray, map_qam16, pam4_levels, ChannelResponse,
    CxTaps,
};
use rayon::prelude::*;
use std::io::Write as IoWrite;
use std::path::Path;

// ---------------------------------------------------------------------------
// streaming building blocks
// ---------------------------------------------------------------------------

/// Rolling sample window with absolute indexing; reads outside the held
/// range are zero.
pub struct TailBuffer {
    data: Vec<f64>,
    start_abs: i64,
    cap: usize,
}

impl TailBuffer {
    pub fn new(cap: usize) -> Self {
        Self { data: Vec::with_capacity(cap + 16), start_abs: 0, cap }
    }

    /// Buffer preloaded with `zeros` zero samples at negative indices, so
    /// history windows reaching before index 0 stay in range.
    pub fn with_zero_history(cap: usize, zeros: usize) -> Self {
        Self { data: vec![0.0; zeros], start_abs: -(zeros as i64), cap }
    }

    pub fn push_block(&mut self, block: &[f64]) {
        self.data.extend_from_slice(block);
        if self.data.len() > self.cap {
            let cut = self.data.len() - self.cap;
            self.data.drain(..cut);
            self.start_abs += cut as i64;
        }
    }

    pub fn end(&self) -> i64 {
        self.start_abs + self.data.len() as i64
    }

    #[inline]
    pub fn at(&self, n: i64) -> f64 {
        let idx = n - self.start_abs;
        if idx >= 0 && (idx as usize) < self.data.len() {
            self.data[idx as usize]
        } else {
            0.0
        }
    }

    /// Contiguous window `[from, from + len)`; panics if not fully held.
    pub fn window(&self, from: i64, len: usize) -> &[f64] {
        let idx = (from - self.start_abs) as usize;
        &self.data[idx..idx + len]
    }
}

impl LaneSamples for TailBuffer {
    fn at(&self, n: i64) -> f64 {
        TailBuffer::at(self, n)
    }
}

/// Blockwise pulse shaping through the combined pulse-plus-channel taps.
///
/// Symbols are scattered causally (symbol `k` occupies grid
/// `[k*osf_t, k*osf_t + len)`), so the waveform carries a fixed delay of
/// `center` grid samples; tails crossing the block edge ride in a carry
/// buffer.
struct Shaper {
    taps_re: [[Vec<f64>; 2]; 2],
    taps_im: [[Vec<f64>; 2]; 2],
    im_zero: [[bool; 2]; 2],
    len: usize,
    osf_t: usize,
    carry: [Vec<f64>; 4],
}

impl Shaper {
    fn new(comb: &[[CxTaps; 2]; 2], osf_t: usize) -> Self {
        let len = comb[0][0].taps.len();
        let taps_re = std::array::from_fn(|o| {
            std::array::from_fn(|i| comb[o][i].taps.iter().map(|c| c.re).collect::<Vec<_>>())
        });
        let taps_im: [[Vec<f64>; 2]; 2] = std::array::from_fn(|o| {
            std::array::from_fn(|i| comb[o][i].taps.iter().map(|c| c.im).collect::<Vec<_>>())
        });
        let im_zero = std::array::from_fn(|o: usize| {
            std::array::from_fn(|i: usize| taps_im[o][i].iter().all(|&v| v == 0.0))
        });
        Self {
            taps_re,
            taps_im,
            im_zero,
            len,
            osf_t,
            carry: std::array::from_fn(|_| vec![0.0; len]),
        }
    }

    /// Shape one block of symbols into four real grid lanes of
    /// `symbols * osf_t` samples.
    fn shape_block(
        &mut self,
        h: &[num_complex::Complex64],
        v: &[num_complex::Complex64],
    ) -> [Vec<f64>; 4] {
        let g = h.len() * self.osf_t;
        let mut bufs: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; g + self.len]);
        for (lane, buf) in bufs.iter_mut().enumerate() {
            buf[..self.len].copy_from_slice(&self.carry[lane]);
        }
        for pol_out in 0..2 {
            let (lane_i, lane_q) = (2 * pol_out, 2 * pol_out + 1);
            for pol_in in 0..2 {
                let tre = &self.taps_re[pol_out][pol_in];
                let tim = &self.taps_im[pol_out][pol_in];
                let src = if pol_in == 0 { h } else { v };
                if self.im_zero[pol_out][pol_in] {
                    for (k, a) in src.iter().enumerate() {
                        let base = k * self.osf_t;
                        let (re, im) = (a.re, a.im);
                        let (bi, bq) = {
                            let (lo, hi) = bufs.split_at_mut(lane_q);
                            (&mut lo[lane_i], &mut hi[0])
                        };
                        for (l, &t) in tre.iter().enumerate() {
                            bi[base + l] += re * t;
                            bq[base + l] += im * t;
                        }
                    }
                } else {
                    for (k, a) in src.iter().enumerate() {
                        let base = k * self.osf_t;
                        let (re, im) = (a.re, a.im);
                        let (bi, bq) = {
                            let (lo, hi) = bufs.split_at_mut(lane_q);
                            (&mut lo[lane_i], &mut hi[0])
                        };
                        for l in 0..tre.len() {
                            bi[base + l] += re * tre[l] - im * tim[l];
                            bq[base + l] += re * tim[l] + im * tre[l];
                        }
                    }
                }
            }
        }
        let mut out: [Vec<f64>; 4] = std::array::from_fn(|_| Vec::new());
        for (lane, mut buf) in bufs.into_iter().enumerate() {
            self.carry[lane].copy_from_slice(&buf[g..]);
            buf.truncate(g);
            out[lane] = buf;
        }
        out
    }
}

// ---------------------------------------------------------------------------
// results
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TraceSet {
    pub ber: MetricTrace,
    pub mse: MetricTrace,
    pub sndr: Option<MetricTrace>,
}

#[derive(Debug, Clone)]
pub struct AdaptTraceRow {
    pub iteration: u64,
    pub block: u64,
    pub lane: usize,
    pub phase: usize,
    pub kind: &'static str,
    pub value: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct CaseResult {
    pub case_id: usize,
    pub seed: u64,
    pub mode: RunMode,
    pub ber: f64,
    pub ber_lag: i64,
    pub mse: f64,
    pub sndr_db: Option<f64>,
    pub flagged: bool,
    pub constraint_checks: usize,
    pub constraint_ok: bool,
    pub saturation_rate: f64,
    pub impairments: ImpairmentSet,
    pub bank: Option<CoefBank>,
    pub trims: Option<MixedSignalTrims>,
    pub traces: Option<TraceSet>,
    pub adapt_trace: Vec<AdaptTraceRow>,
}

/// Per-case knobs used by the calibration, Monte Carlo and convergence
/// drivers on top of a shared config.
#[derive(Debug, Clone)]
pub struct CaseSetup {
    pub case_id: usize,
    pub seed: u64,
    pub mode: RunMode,
    pub zero_impairments: bool,
    pub symbols_override: Option<usize>,
    pub sigma_override: Option<f64>,
    pub collect_traces: bool,
}

impl CaseSetup {
    pub fn from_config(cfg: &RunConfig, seed: u64) -> Self {
        Self {
            case_id: 0,
            seed,
            mode: cfg.run.mode,
            zero_impairments: false,
            symbols_override: None,
            sigma_override: None,
            collect_traces: false,
        }
    }
}

/// Run a single case with the config's mode, impairment ranges and noise.
pub fn run_case(cfg: &RunConfig, seed: u64) -> Result<CaseResult> {
    run_case_with(cfg, &CaseSetup::from_config(cfg, seed))
}

/// FFE cursor tap: the largest even index not above the middle, so the
/// initial diagonal delta lands on a whole-symbol delay.
fn ffe_center(l_taps: usize) -> usize {
    let c = (l_taps - 1) / 2;
    c - (c % 2)
}

pub fn run_case_with(cfg: &RunConfig, setup: &CaseSetup) -> Result<CaseResult> {
    cfg.validate()?;
    let osf = cfg.signal.grid_osf;
    let osf_t = 2 * osf;
    let m_total = cfg.m_total();
    let m_phase = cfg.adc.m1;
    let lg = cfg.equalizer.ce_taps;
    let l_gamma = cfg.equalizer.ffe_taps;
    let mode = setup.mode;
    let digital = mode == RunMode::DigitalCe;
    let mixed = mode == RunMode::MixedSignal;
    let block_n = cfg.adaptation.block_samples;
    let k_blk = block_n / 2;
    let symbols_req = setup.symbols_override.unwrap_or(cfg.run.symbols);
    let n_blocks = symbols_req.div_ceil(k_blk).max(2);
    let total_symbols = n_blocks * k_blk;
    let warmup_blocks = cfg.run.warmup_symbols.div_ceil(k_blk).min(n_blocks - 1);
    let warmup_symbols = warmup_blocks * k_blk;
    let measure_symbols = cfg.run.measure_symbols.min(total_symbols - warmup_symbols);
    let sigma = setup.sigma_override.unwrap_or(cfg.channel.noise_sigma);
    let levels = pam4_levels();

    // seeds: documented child-stream ids of the case seed
    let master = RngStream::new(setup.seed);
    let mut bits_rng = master.split(0);
    let mut noise_rng: [RngStream; 4] = std::array::from_fn(|i| master.split(1 + i as u64));
    let mut imp_rng = master.split(5);

    let ranges = if setup.zero_impairments {
        ImpairmentRanges::zero(cfg.impairment_ranges().nominal_bw_hz)
    } else {
        cfg.impairment_ranges()
    };
    let imp = draw_impairments(&ranges, m_total, m_phase, cfg.adc.vfs, &mut imp_rng)?;

    // transmit chain: pulse, channel, loading scale folded into the taps
    let pulse = design_rrc(cfg.signal.rolloff, cfg.signal.pulse_span_symbols, osf_t)?;
    let channel = match cfg.channel.kind.as_str() {
        "identity" => ChannelResponse::identity(),
        _ => dgd_channel(cfg.channel.dgd_ps * 1e-12, cfg.signal.symbol_rate_hz, osf_t)?,
    };
    let mut comb = combine_pulse_channel(&pulse, &channel);
    // pad the combined taps so the nominal delay is a whole symbol count,
    // keeping symbol centers on even lane samples and the data-aided lag
    // integer
    let front_pad = (osf_t - comb[0][0].center % osf_t) % osf_t;
    if front_pad > 0 {
        for row in comb.iter_mut() {
            for entry in row.iter_mut() {
                let mut taps = vec![num_complex::Complex64::new(0.0, 0.0); front_pad];
                taps.extend_from_slice(&entry.taps);
                entry.taps = taps;
                entry.center += front_pad;
            }
        }
    }
    let target_rms = cfg.signal.loading * cfg.adc.vfs / 3.0;
    let lane_var = |pol: usize| -> f64 {
        0.5 * (comb[pol][0].taps.iter().map(|c| c.norm_sqr()).sum::<f64>()
            + comb[pol][1].taps.iter().map(|c| c.norm_sqr()).sum::<f64>())
            / osf_t as f64
    };
    let scale = target_rms / (0.5 * (lane_var(0) + lane_var(1))).sqrt();
    for row in comb.iter_mut() {
        for entry in row.iter_mut() {
            for t in entry.taps.iter_mut() {
                *t *= scale;
            }
        }
    }
    let mut shaper = Shaper::new(&comb, osf_t);
    let shaper_center = comb[0][0].center;

    // converter lanes plus the nominal reference conversion
    let adc = cfg.adc_config();
    let hier = cfg.hierarchical();
    let g_block = k_blk * osf_t;
    let grid_cap = 2 * g_block + 64 * osf;
    let mk_lanes = |imp: &ImpairmentSet,
                    hier: &crate::afe::HierarchicalConfig,
                    quantize: bool,
                    jitter: bool|
     -> Result<[AfeLane; 4]> {
        let mk = |lane: usize| {
            AfeLane::new(
                lane,
                imp,
                &adc,
                Some(hier),
                osf,
                quantize,
                cfg.adc.interp_taps,
                (jitter && cfg.adc.jitter_rms_s > 0.0).then(|| master.split(6 + lane as u64)),
                Some(grid_cap),
            )
        };
        Ok([mk(0)?, mk(1)?, mk(2)?, mk(3)?])
    };
    let mut lanes = mk_lanes(&imp, &hier, cfg.adc.quantize, true)?;
    let nominal = ImpairmentSet::nominal(m_total, m_phase, ranges.nominal_bw_hz);
    let ref_hier = crate::afe::HierarchicalConfig { jitter_rms_s: 0.0, ..hier.clone() };
    let mut ref_lanes = mk_lanes(&nominal, &ref_hier, false, false)?;

    // equalizer state
    let mut bank = init_coefbank(m_total, lg)?;
    bank.constraint = cfg.equalizer.constraint.then_some((0, 0));
    let mut trims = MixedSignalTrims::new(m_total, m_phase);
    let c_ffe = ffe_center(l_gamma);
    let g0 = 0.5f64.sqrt() / target_rms;
    let mut gamma = DspFilterBank::delta(l_gamma, c_ffe, g0);
    let sched = cfg.schedule();

    // pipeline delay in symbols: shaping center + CE delay + FFE cursor
    let l_d_eff = if digital { delay_tap(lg) } else { 0 };
    debug_assert_eq!(shaper_center % osf_t, 0);
    let d_sym = (shaper_center / osf_t) + (l_d_eff + c_ffe) / 2;

    let hist = 2 * (l_gamma + lg) + 32;
    let tail_cap = block_n + hist;
    let mut w_tail: [TailBuffer; 4] =
        std::array::from_fn(|_| TailBuffer::with_zero_history(tail_cap, hist));
    let mut x_tail: [TailBuffer; 4] =
        std::array::from_fn(|_| TailBuffer::with_zero_history(tail_cap, hist));
    let mut ref_tail: [TailBuffer; 4] =
        std::array::from_fn(|_| TailBuffer::with_zero_history(tail_cap, hist));

    let mut truth_bits: Vec<u8> = Vec::with_capacity(total_symbols * 8);
    let mut truth_lanes: [Vec<f64>; 4] =
        std::array::from_fn(|_| Vec::with_capacity(total_symbols));
    let mut dec_bits: Vec<u8> = Vec::with_capacity(total_symbols * 8);
    let mut e_totals: Vec<f64> = Vec::with_capacity(total_symbols);
    let mut e_blk: Vec<[f64; 4]> = Vec::with_capacity(k_blk);

    // traces and accounting
    let mut ber_points: Vec<(u64, f64)> = Vec::new();
    let mut mse_points = MetricTrace::new(MetricKind::Mse);
    let mut sndr_points = MetricTrace::new(MetricKind::Sndr);
    let mut stride_bits = 0usize;
    let mut stride_errs = 0usize;
    let mut next_stride_end = cfg.metrics.ber_stride_symbols as u64;
    let mut update_count = 0u64;
    let mut constraint_checks = 0usize;
    let mut constraint_ok = true;
    let mut warm_floor_acc: Vec<f64> = Vec::new();
    let mut mse_floor = f64::INFINITY;
    let mut bad_windows = 0usize;
    let mut flagged = false;
    let mut adapt_trace: Vec<AdaptTraceRow> = Vec::new();
    let mut final_sndr: Option<f64> = None;

    let shape_into = |bits_rng: &mut RngStream,
                          noise_rng: &mut [RngStream; 4],
                          shaper: &mut Shaper,
                          lanes: &mut [AfeLane; 4],
                          ref_lanes: &mut [AfeLane; 4],
                          truth_bits: &mut Vec<u8>,
                          truth_lanes: &mut [Vec<f64>; 4]|
     -> Result<()> {
        let bits = bits_rng.bits(8 * k_blk);
        let sym = map_qam16(&bits)?;
        truth_bits.extend_from_slice(&bits);
        for lane in 0..4 {
            for k in 0..k_blk {
                truth_lanes[lane].push(sym.lane(lane, k));
            }
        }
        let mut grid = shaper.shape_block(&sym.hpol, &sym.vpol);
        for lane in 0..4 {
            if sigma > 0.0 {
                let rng = &mut noise_rng[lane];
                for v in grid[lane].iter_mut() {
                    *v += sigma * rng.gaussian();
                }
            }
            lanes[lane].push_grid(&grid[lane]);
            ref_lanes[lane].push_grid(&grid[lane]);
        }
        Ok(())
    };

    // first block of lookahead
    shape_into(
        &mut bits_rng,
        &mut noise_rng,
        &mut shaper,
        &mut lanes,
        &mut ref_lanes,
        &mut truth_bits,
        &mut truth_lanes,
    )?;

    let mut x_recent: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; l_gamma]);

    for b in 0..n_blocks {
        if b + 1 < n_blocks {
            shape_into(
                &mut bits_rng,
                &mut noise_rng,
                &mut shaper,
                &mut lanes,
                &mut ref_lanes,
                &mut truth_bits,
                &mut truth_lanes,
            )?;
        } else {
            // flush: enough zeros to cover the interpolation lookahead
            let pad = vec![0.0; lanes[0].lookahead_grid() + osf_t];
            for lane in 0..4 {
                lanes[lane].push_grid(&pad);
                ref_lanes[lane].push_grid(&pad);
            }
        }

        let n0 = (b * block_n) as i64;
        for lane in 0..4 {
            let y_blk = lanes[lane].emit(block_n, mixed.then(|| trims.lane_view(lane)));
            let r_blk = ref_lanes[lane].emit(block_n, None);
            ref_tail[lane].push_block(&r_blk);
            // offset subtraction (digital) happens before the CE
            let w_blk: Vec<f64> = if digital {
                y_blk
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| {
                        v - bank.o_hat[lane][((n0 + j as i64) % m_total as i64) as usize]
                    })
                    .collect()
            } else {
                y_blk
            };
            w_tail[lane].push_block(&w_blk);
            let x_blk: Vec<f64> = if digital {
                (0..block_n)
                    .map(|j| {
                        let n = n0 + j as i64;
                        let taps = bank.taps(lane, (n % m_total as i64) as usize);
                        let mut acc = 0.0;
                        for (l, &gval) in taps.iter().enumerate() {
                            acc += gval * w_tail[lane].at(n - l as i64);
                        }
                        acc
                    })
                    .collect()
            } else {
                w_blk
            };
            x_tail[lane].push_block(&x_blk);
        }

        // symbol-rate processing
        e_blk.clear();
        let k0 = b * k_blk;
        for k in k0..k0 + k_blk {
            let n = 2 * k as i64;
            for lane in 0..4 {
                let win = x_tail[lane].window(n - (l_gamma as i64 - 1), l_gamma);
                for (l, xr) in x_recent[lane].iter_mut().enumerate() {
                    *xr = win[l_gamma - 1 - l];
                }
            }
            let mut u = [0.0f64; 4];
            for (j, u_j) in u.iter_mut().enumerate() {
                let mut acc = 0.0;
                for i in 0..4 {
                    let taps = &gamma.taps[j][i];
                    let xi = &x_recent[i];
                    for (l, &t) in taps.iter().enumerate() {
                        acc += t * xi[l];
                    }
                }
                *u_j = acc;
            }
            let a_hat: [f64; 4] = std::array::from_fn(|j| slicer(u[j], &levels));
            for &a in &a_hat {
                let (b0, b1) = level_to_gray(a);
                dec_bits.push(b0);
                dec_bits.push(b1);
            }
            let kt = k as i64 - d_sym as i64;
            let data_aided = k < warmup_symbols;
            let (e, e_tot) = if kt >= 0 {
                let target: [f64; 4] = if data_aided {
                    std::array::from_fn(|lane| truth_lanes[lane][kt as usize])
                } else {
                    a_hat
                };
                let e: [f64; 4] = std::array::from_fn(|j| u[j] - target[j]);
                (e, e.iter().map(|v| v * v).sum())
            } else {
                ([0.0; 4], 0.0)
            };
            e_totals.push(e_tot);
            e_blk.push(e);
            if kt >= 0 {
                let mu = if data_aided { cfg.equalizer.mu_ffe_da } else { cfg.equalizer.mu_ffe_dd };
                let xr: [&[f64]; 4] = std::array::from_fn(|i| &x_recent[i][..]);
                crate::rxdsp::ffe_lms_update(&mut gamma, &xr, &e, mu);
            }
            // instantaneous BER bookkeeping against the known pipeline lag
            if kt >= 0 {
                let dk = k * 8;
                let tk = kt as usize * 8;
                for j in 0..8 {
                    stride_bits += 1;
                    if dec_bits[dk + j] != truth_bits[tk + j] {
                        stride_errs += 1;
                    }
                }
            }
            if (k as u64 + 1) == next_stride_end {
                if stride_bits > 0 {
                    ber_points.push((k as u64 + 1, stride_errs as f64 / stride_bits as f64));
                }
                stride_bits = 0;
                stride_errs = 0;
                next_stride_end += cfg.metrics.ber_stride_symbols as u64;
            }
        }

        // block MSE, divergence detection
        let blk_mse =
            e_totals[k0..k0 + k_blk].iter().sum::<f64>() / k_blk as f64;
        mse_points.push((k0 + k_blk) as u64, blk_mse);
        if b < warmup_blocks {
            if b + 4 >= warmup_blocks {
                warm_floor_acc.push(blk_mse);
            }
        } else {
            if b == warmup_blocks && !warm_floor_acc.is_empty() {
                mse_floor =
                    warm_floor_acc.iter().sum::<f64>() / warm_floor_acc.len() as f64;
            }
            if blk_mse > cfg.run.divergence_factor * mse_floor {
                bad_windows += 1;
                if bad_windows >= cfg.run.divergence_windows {
                    flagged = true;
                }
            } else {
                bad_windows = 0;
            }
        }

        // SNDR checkpoint over this block
        let want_sndr = setup.collect_traces || b + 1 == n_blocks;
        if want_sndr {
            let w = block_n.min(cfg.metrics.sndr_window_samples);
            let from = n0 + block_n as i64 - w as i64;
            let mut mean_db = 0.0;
            let mut ok = true;
            for lane in 0..4 {
                let obs_tail = if digital { &x_tail[lane] } else { &w_tail[lane] };
                let obs: Vec<f64> = (0..w).map(|j| obs_tail.at(from + j as i64)).collect();
                let refv: Vec<f64> = (0..w)
                    .map(|j| ref_tail[lane].at(from + j as i64 - l_d_eff as i64))
                    .collect();
                match metrics::sndr_per_interleave(&obs, &refv, m_total, 0) {
                    Ok(db) => mean_db += db / 4.0,
                    Err(_) => ok = false,
                }
            }
            if ok {
                final_sndr = Some(mean_db);
                if setup.collect_traces {
                    sndr_points.push((k0 + k_blk) as u64, mean_db);
                }
            }
        }

        // EBP adaptation
        if b >= warmup_blocks && !e_blk.is_empty() {
            let adapt_block = (b - warmup_blocks) as u64;
            if decimation_gate(adapt_block, &sched) {
                let gear = gear_shift(update_count, &sched)?;
                let e_up = upsample_error(&e_blk, k0 as u64);
                let e_hat = backpropagate(&e_up, &gamma);
                if digital {
                    let w_refs: [&dyn LaneSamples; 4] =
                        std::array::from_fn(|i| &w_tail[i] as _);
                    let grads = accumulate_ce_gradients(&e_hat, &w_refs, m_total, lg, k_blk);
                    ce_update(&mut bank, &grads, gear.mu);
                    offset_update(&mut bank, &e_hat, gear.mu_o);
                    constraint_checks += 1;
                    constraint_ok &= bank.constraint_holds();
                    if cfg.run.trace_adaptation {
                        let gn = grads.norm();
                        for lane in 0..4 {
                            for phase in 0..m_total {
                                adapt_trace.push(AdaptTraceRow {
                                    iteration: update_count,
                                    block: b as u64,
                                    lane,
                                    phase,
                                    kind: "g_cursor",
                                    value: bank.taps(lane, phase)[delay_tap(lg)],
                                    grad_norm: gn,
                                });
                                adapt_trace.push(AdaptTraceRow {
                                    iteration: update_count,
                                    block: b as u64,
                                    lane,
                                    phase,
                                    kind: "o_hat",
                                    value: bank.o_hat[lane][phase],
                                    grad_norm: gn,
                                });
                            }
                        }
                    }
                } else if mixed {
                    let w_refs: [&dyn LaneSamples; 4] =
                        std::array::from_fn(|i| &w_tail[i] as _);
                    gain_update(&mut trims, &e_hat, &w_refs, gear.mu_gamma);
                    phase_update(&mut trims, &e_hat, &w_refs, gear.mu_tau);
                    trim_offset_update(&mut trims, &e_hat, gear.mu_o);
                    if cfg.run.trace_adaptation {
                        for lane in 0..4 {
                            for g in 0..m_total {
                                adapt_trace.push(AdaptTraceRow {
                                    iteration: update_count,
                                    block: b as u64,
                                    lane,
                                    phase: g,
                                    kind: "gain_trim",
                                    value: trims.gain[lane][g],
                                    grad_norm: 0.0,
                                });
                            }
                            for p in 0..m_phase {
                                adapt_trace.push(AdaptTraceRow {
                                    iteration: update_count,
                                    block: b as u64,
                                    lane,
                                    phase: p,
                                    kind: "tau_trim",
                                    value: trims.tau_ts[lane][p],
                                    grad_norm: 0.0,
                                });
                            }
                        }
                    }
                }
                update_count += 1;
            }
        }
    }

    // final reported metrics over the measurement window
    let m0 = total_symbols - measure_symbols;
    let ber_res = ber(
        &dec_bits[m0 * 8..],
        &truth_bits[m0 * 8..],
        cfg.metrics.lag_search_bits,
    )?;
    let final_mse =
        e_totals[m0..].iter().sum::<f64>() / measure_symbols.max(1) as f64;
    let saturation_rate = {
        let (sat, tot) = lanes.iter().fold((0u64, 0u64), |(s, t), l| {
            (s + l.stats.saturations, t + l.stats.samples)
        });
        sat as f64 / tot.max(1) as f64
    };

    let traces = setup.collect_traces.then(|| TraceSet {
        ber: metrics::windowed_ber(&ber_points, cfg.metrics.ber_window)
            .unwrap_or_else(|_| MetricTrace::new(MetricKind::Ber)),
        mse: mse_points,
        sndr: Some(sndr_points),
    });

    Ok(CaseResult {
        case_id: setup.case_id,
        seed: setup.seed,
        mode,
        ber: ber_res.ber,
        ber_lag: ber_res.lag,
        mse: final_mse,
        sndr_db: final_sndr,
        flagged,
        constraint_checks,
        constraint_ok,
        saturation_rate,
        impairments: imp,
        bank: digital.then_some(bank),
        trims: mixed.then_some(trims),
        traces,
        adapt_trace,
    })
}

// ---------------------------------------------------------------------------
// drivers
// ---------------------------------------------------------------------------

pub struct CalibrationResult {
    pub sigma: f64,
    pub achieved_ber: f64,
    pub evaluations: usize,
}

/// Bisect the per-grid-sample noise sigma until the mismatch-free chain hits
/// the target BER within 15% relative, at `calibration_symbols` per trial.
pub fn calibrate_noise(cfg: &RunConfig) -> Result<CalibrationResult> {
    let target = cfg.channel.target_ber;
    let tol = 0.15 * target;
    let mut evals = 0usize;
    let mut eval = |sigma: f64| -> Result<f64> {
        evals += 1;
        let setup = CaseSetup {
            case_id: 0,
            seed: cfg.run.seed,
            mode: RunMode::NoCal,
            zero_impairments: true,
            symbols_override: Some(cfg.run.calibration_symbols),
            sigma_override: Some(sigma),
            collect_traces: false,
        };
        Ok(run_case_with(cfg, &setup)?.ber)
    };
    if eval(0.0)? >= target {
        return Err(Error::Calibration(
            "noise-free BER already exceeds the target; channel floor too high".into(),
        ));
    }
    let mut hi = 0.02;
    let mut hi_ber = eval(hi)?;
    let mut grow = 0;
    while hi_ber < target {
        hi *= 2.0;
        hi_ber = eval(hi)?;
        grow += 1;
        if grow > 12 {
            return Err(Error::Calibration("could not bracket the target BER".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let mid_ber = eval(mid)?;
        if (mid_ber - target).abs() <= tol {
            return Ok(CalibrationResult { sigma: mid, achieved_ber: mid_ber, evaluations: evals });
        }
        if mid_ber < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Calibration("bisection did not reach the target tolerance".into()))
}

/// Documented per-case seed derivation for Monte Carlo batches.
pub fn case_seed(master: u64, case: usize) -> u64 {
    derive_seed(master, case as u64)
}

pub struct CasePair {
    pub cal: CaseResult,
    pub nocal: CaseResult,
}

pub struct MonteCarloResult {
    pub pairs: Vec<CasePair>,
}

impl MonteCarloResult {
    pub fn median_ber_cal(&self) -> f64 {
        median(self.pairs.iter().map(|p| p.cal.ber))
    }

    pub fn median_ber_nocal(&self) -> f64 {
        median(self.pairs.iter().map(|p| p.nocal.ber))
    }

    pub fn any_flagged(&self) -> bool {
        self.pairs.iter().any(|p| p.cal.flagged || p.nocal.flagged)
    }
}

pub fn median(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if v.is_empty() {
        return f64::NAN;
    }
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Run `n_cases` independent cases, each once with the configured mode and
/// once without calibration, sharing the case seed (hence the same
/// impairment draw, data and noise).
pub fn run_montecarlo(cfg: &RunConfig, n_cases: usize) -> Result<MonteCarloResult> {
    cfg.validate()?;
    if n_cases == 0 {
        return Err(Error::Config("cases must be >= 1".into()));
    }
    let pairs: Result<Vec<CasePair>> = (0..n_cases)
        .into_par_iter()
        .map(|c| {
            let seed = case_seed(cfg.run.seed, c);
            let mut setup = CaseSetup::from_config(cfg, seed);
            setup.case_id = c;
            let cal = run_case_with(cfg, &setup)?;
            let mut nocal_setup = setup.clone();
            nocal_setup.mode = RunMode::NoCal;
            let nocal = run_case_with(cfg, &nocal_setup)?;
            Ok(CasePair { cal, nocal })
        })
        .collect();
    Ok(MonteCarloResult { pairs: pairs? })
}

pub struct ConvergenceRun {
    pub decimation: usize,
    pub result: CaseResult,
}

/// Convergence traces for each configured block-decimation factor, same seed.
pub fn run_convergence(cfg: &RunConfig) -> Result<Vec<ConvergenceRun>> {
    cfg.validate()?;
    let factors = if cfg.adaptation.convergence_decimations.is_empty() {
        vec![cfg.adaptation.block_decimation]
    } else {
        cfg.adaptation.convergence_decimations.clone()
    };
    factors
        .par_iter()
        .map(|&d| {
            let mut sub = cfg.clone();
            sub.adaptation.block_decimation = d;
            let mut setup = CaseSetup::from_config(&sub, cfg.run.seed);
            setup.collect_traces = true;
            let result = run_case_with(&sub, &setup)?;
            Ok(ConvergenceRun { decimation: d, result })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// CSV / file output
// ---------------------------------------------------------------------------

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(std::io::BufWriter::new(std::fs::File::create(path)?))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6e}")).unwrap_or_default()
}

/// `cases.csv` for a Monte Carlo batch: one row per case, paired columns.
pub fn write_mc_cases_csv(path: &Path, mc: &MonteCarloResult) -> Result<()> {
    let mut f = create(path)?;
    writeln!(
        f,
        "case,seed,ber_cal,ber_nocal,mse_cal,mse_nocal,sndr_cal_db,flagged_cal,flagged_nocal"
    )?;
    for p in &mc.pairs {
        writeln!(
            f,
            "{},{},{:.6e},{:.6e},{:.6e},{:.6e},{},{},{}",
            p.cal.case_id,
            p.cal.seed,
            p.cal.ber,
            p.nocal.ber,
            p.cal.mse,
            p.nocal.mse,
            fmt_opt(p.cal.sndr_db),
            p.cal.flagged as u8,
            p.nocal.flagged as u8
        )?;
    }
    Ok(())
}

/// `cases.csv` for a single run.
pub fn write_case_csv(path: &Path, r: &CaseResult) -> Result<()> {
    let mut f = create(path)?;
    writeln!(f, "case,seed,mode,ber,mse,sndr_db,flagged")?;
    writeln!(
        f,
        "{},{},{},{:.6e},{:.6e},{},{}",
        r.case_id,
        r.seed,
        r.mode.label(),
        r.ber,
        r.mse,
        fmt_opt(r.sndr_db),
        r.flagged as u8
    )?;
    Ok(())
}

/// Log-spaced BER histogram: `bins_per_decade` bins per decade from `floor`
/// up to 1.0; BERs at or below the floor land in the first bin.
pub fn build_histogram(
    mc: &MonteCarloResult,
    floor: f64,
    bins_per_decade: usize,
) -> Vec<(f64, f64, u32, u32)> {
    let decades = (-floor.log10()).ceil() as usize;
    let n_bins = decades * bins_per_decade;
    let edge = |i: usize| -> f64 { floor * 10f64.powf(i as f64 / bins_per_decade as f64) };
    let mut bins: Vec<(f64, f64, u32, u32)> =
        (0..n_bins).map(|i| (edge(i), edge(i + 1), 0, 0)).collect();
    let index = |ber: f64| -> usize {
        if ber <= floor {
            return 0;
        }
        let i = ((ber / floor).log10() * bins_per_decade as f64).floor() as usize;
        i.min(n_bins - 1)
    };
    for p in &mc.pairs {
        bins[index(p.cal.ber)].2 += 1;
        bins[index(p.nocal.ber)].3 += 1;
    }
    bins
}

pub fn write_histogram_csv(path: &Path, bins: &[(f64, f64, u32, u32)]) -> Result<()> {
    let mut f = create(path)?;
    writeln!(f, "bin_lo,bin_hi,count_with_ce,count_no_ce")?;
    for &(lo, hi, with, without) in bins {
        writeln!(f, "{lo:.6e},{hi:.6e},{with},{without}")?;
    }
    Ok(())
}

/// Write the `trace_<kind>[suffix].csv` files for one case.
pub fn write_traces(dir: &Path, suffix: &str, traces: &TraceSet) -> Result<()> {
    let write = |name: &str, t: &MetricTrace| -> Result<()> {
        let mut f = create(&dir.join(format!("trace_{name}{suffix}.csv")))?;
        f.write_all(t.to_csv().as_bytes())?;
        Ok(())
    };
    write("ber", &traces.ber)?;
    write("mse", &traces.mse)?;
    if let Some(s) = &traces.sndr {
        write("sndr", s)?;
    }
    Ok(())
}

pub fn write_adapt_trace_csv(path: &Path, rows: &[AdaptTraceRow]) -> Result<()> {
    let mut f = create(path)?;
    writeln!(f, "iteration,block,lane,phase,kind,value,grad_norm")?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{},{:.9e},{:.6e}",
            r.iteration, r.block, r.lane, r.phase, r.kind, r.value, r.grad_norm
        )?;
    }
    Ok(())
}

/// Mixed-signal trim checkpoint, same row style as the coefficient bank.
pub fn write_trims(path: &Path, trims: &MixedSignalTrims) -> Result<()> {
    let mut f = create(path)?;
    writeln!(f, "# trims v1 M={} M1={}", trims.m_total, trims.m_phase)?;
    for lane in 0..4 {
        for (m, &v) in trims.gain[lane].iter().enumerate() {
            writeln!(f, "gain {lane} {m} {v:.17e}")?;
        }
        for (p, &v) in trims.tau_ts[lane].iter().enumerate() {
            writeln!(f, "tau {lane} {p} {v:.17e}")?;
        }
        for (m, &v) in trims.offset[lane].iter().enumerate() {
            writeln!(f, "offset {lane} {m} {v:.17e}")?;
        }
    }
    Ok(())
}
