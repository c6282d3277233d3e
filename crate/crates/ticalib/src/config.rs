//! Experiment configuration: a flat TOML schema with one table per concern,
//! every key carrying a desk-scale default. `RunConfig::desk()` is the
//! default preset (minutes-level runtimes); `RunConfig::paper()` switches to
//! the full-scale interleave count, case count and block size.

use crate::afe::{AdcConfig, HierarchicalConfig, ImpairmentRanges};
use crate::ebp::{AdaptSchedule, GearRow};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    NoCal,
    DigitalCe,
    MixedSignal,
}

impl RunMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "no-cal" => Ok(RunMode::NoCal),
            "digital-ce" => Ok(RunMode::DigitalCe),
            "mixed-signal" => Ok(RunMode::MixedSignal),
            _ => Err(Error::Config(format!(
                "unknown mode {s:?} (expected no-cal | digital-ce | mixed-signal)"
            ))),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            RunMode::NoCal => "no-cal",
            RunMode::DigitalCe => "digital-ce",
            RunMode::MixedSignal => "mixed-signal",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSection {
    pub mode: RunMode,
    /// symbols per case (rounded up to whole adaptation blocks)
    pub symbols: usize,
    /// data-aided warm-up, in symbols; EBP adaptation starts afterwards
    pub warmup_symbols: usize,
    /// final window used for the reported BER/MSE, in symbols
    pub measure_symbols: usize,
    pub seed: u64,
    pub cases: usize,
    pub out_dir: String,
    /// symbols per evaluation during noise calibration
    pub calibration_symbols: usize,
    pub trace_adaptation: bool,
    /// windowed-MSE blow-up factor over the warm-up floor that counts toward
    /// divergence flagging
    pub divergence_factor: f64,
    /// consecutive bad windows before a case is flagged
    pub divergence_windows: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            mode: RunMode::DigitalCe,
            symbols: 200_000,
            warmup_symbols: 12_288,
            measure_symbols: 50_000,
            seed: 1,
            cases: 50,
            out_dir: "out".into(),
            calibration_symbols: 80_000,
            trace_adaptation: false,
            divergence_factor: 10.0,
            divergence_windows: 5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SignalSection {
    pub symbol_rate_hz: f64,
    /// simulation-grid samples per Ts (the grid stands in for analog time)
    pub grid_osf: usize,
    pub rolloff: f64,
    /// one-sided pulse span in symbols
    pub pulse_span_symbols: usize,
    /// lane RMS is loading * VFS / 3
    pub loading: f64,
}

impl Default for SignalSection {
    fn default() -> Self {
        Self {
            symbol_rate_hz: 96e9,
            grid_osf: 8,
            rolloff: 0.10,
            pulse_span_symbols: 16,
            loading: 0.7,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelSection {
    /// "identity" or "dgd"
    pub kind: String,
    pub dgd_ps: f64,
    /// AWGN standard deviation per grid sample; 0 disables noise
    pub noise_sigma: f64,
    /// target BER for `calibrate-noise`
    pub target_ber: f64,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self { kind: "dgd".into(), dgd_ps: 10.0, noise_sigma: 0.0, target_ber: 1.2e-3 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AdcSection {
    pub bits: u32,
    pub vfs: f64,
    /// rank-1 switch count (sampling-phase period)
    pub m1: usize,
    /// sub-ADCs per switch; total interleaves = m1 * m2
    pub m2: usize,
    /// nominal analog bandwidth B0 in Hz; 0 disables the lowpass
    pub bandwidth_hz: f64,
    pub jitter_rms_s: f64,
    pub jitter_all_ranks: bool,
    pub quantize: bool,
    /// windowed-sinc length for the sampling interpolator
    pub interp_taps: usize,
}

impl Default for AdcSection {
    fn default() -> Self {
        Self {
            bits: 8,
            vfs: 1.0,
            m1: 8,
            m2: 1,
            bandwidth_hz: 53e9,
            jitter_rms_s: 0.0,
            jitter_all_ranks: false,
            quantize: true,
            interp_taps: 33,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ImpairmentSection {
    pub gain: f64,
    pub phase_t: f64,
    pub bandwidth: f64,
    pub skew_t: f64,
    pub offset_vfs: f64,
}

impl Default for ImpairmentSection {
    fn default() -> Self {
        Self { gain: 0.15, phase_t: 0.10, bandwidth: 0.075, skew_t: 0.10, offset_vfs: 0.025 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EqualizerSection {
    /// CE taps per interleave (odd)
    pub ce_taps: usize,
    /// receiver FFE taps at T/2
    pub ffe_taps: usize,
    pub mu_ffe_da: f64,
    pub mu_ffe_dd: f64,
    /// freeze one CE slot (lane 0, phase 0) to a pure delay
    pub constraint: bool,
}

impl Default for EqualizerSection {
    fn default() -> Self {
        Self { ce_taps: 7, ffe_taps: 15, mu_ffe_da: 0.02, mu_ffe_dd: 0.005, constraint: true }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct GearEntry {
    pub at: u64,
    pub mu: f64,
    pub mu_o: f64,
    pub mu_gamma: f64,
    pub mu_tau: f64,
}

impl Default for GearEntry {
    fn default() -> Self {
        Self { at: 0, mu: 0.5, mu_o: 0.25, mu_gamma: 0.2, mu_tau: 0.1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptationSection {
    /// EBP block size N in samples (two samples per symbol)
    pub block_samples: usize,
    /// adapt on one block out of every `block_decimation`
    pub block_decimation: usize,
    /// gear-shift table; thresholds are EBP update counts
    pub gears: Vec<GearEntry>,
    /// decimation factors exercised by `convergence`
    pub convergence_decimations: Vec<usize>,
}

/// Default gear schedule: halve every step size at each of four stages.
fn default_gears() -> Vec<GearEntry> {
    let base = GearEntry::default();
    (0..5)
        .map(|i| {
            let s = 0.5f64.powi(i);
            GearEntry {
                at: [0, 12, 24, 40, 60][i as usize],
                mu: base.mu * s,
                mu_o: base.mu_o * s,
                mu_gamma: base.mu_gamma * s,
                mu_tau: base.mu_tau * s,
            }
        })
        .collect()
}

impl Default for AdaptationSection {
    fn default() -> Self {
        Self {
            block_samples: 4096,
            block_decimation: 1,
            gears: default_gears(),
            convergence_decimations: vec![1, 16],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsSection {
    /// instantaneous-BER evaluation stride, in symbols
    pub ber_stride_symbols: usize,
    /// moving-average window over instantaneous BER points
    pub ber_window: usize,
    /// samples per SNDR checkpoint window
    pub sndr_window_samples: usize,
    /// track SNDR traces (reference conversion runs alongside)
    pub sndr_track: bool,
    /// BER alignment search window, in bits
    pub lag_search_bits: usize,
    /// histogram binning: log-spaced bins per decade above the floor
    pub histogram_bins_per_decade: usize,
    pub histogram_ber_floor: f64,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            ber_stride_symbols: 4096,
            ber_window: 8,
            sndr_window_samples: 8192,
            sndr_track: false,
            lag_search_bits: 256,
            histogram_bins_per_decade: 10,
            histogram_ber_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub run: RunSection,
    pub signal: SignalSection,
    pub channel: ChannelSection,
    pub adc: AdcSection,
    pub impairments: ImpairmentSection,
    pub equalizer: EqualizerSection,
    pub adaptation: AdaptationSection,
    pub metrics: MetricsSection,
}

impl RunConfig {
    /// Desk-scale preset: M = 8, 50 cases, 2e5 symbols per case.
    pub fn desk() -> Self {
        Self::default()
    }

    /// Full-scale preset: Table-style M = 16, 500 cases, N = 8192, BER
    /// evaluated every 1e5 symbols with a window of 40.
    pub fn paper() -> Self {
        let mut cfg = Self::default();
        cfg.adc.m1 = 16;
        cfg.run.cases = 500;
        cfg.run.symbols = 1_000_000;
        cfg.run.measure_symbols = 200_000;
        cfg.adaptation.block_samples = 8192;
        cfg.metrics.ber_stride_symbols = 100_000;
        cfg.metrics.ber_window = 40;
        cfg
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(s).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_file(path: &std::path::Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn m_total(&self) -> usize {
        self.adc.m1 * self.adc.m2
    }

    pub fn adc_config(&self) -> AdcConfig {
        AdcConfig {
            bits: self.adc.bits,
            vfs: self.adc.vfs,
            fs: 2.0 * self.signal.symbol_rate_hz,
            m: self.m_total(),
        }
    }

    pub fn hierarchical(&self) -> HierarchicalConfig {
        HierarchicalConfig {
            m1: self.adc.m1,
            m2: self.adc.m2,
            jitter_rms_s: self.adc.jitter_rms_s,
            jitter_all_ranks: self.adc.jitter_all_ranks,
        }
    }

    pub fn impairment_ranges(&self) -> ImpairmentRanges {
        ImpairmentRanges {
            gain: self.impairments.gain,
            phase_t: self.impairments.phase_t,
            bandwidth_frac: self.impairments.bandwidth,
            skew_t: self.impairments.skew_t,
            offset_vfs: self.impairments.offset_vfs,
            nominal_bw_hz: if self.adc.bandwidth_hz > 0.0 {
                self.adc.bandwidth_hz
            } else {
                f64::INFINITY
            },
        }
    }

    pub fn schedule(&self) -> AdaptSchedule {
        AdaptSchedule {
            block_samples: self.adaptation.block_samples,
            block_decimation: self.adaptation.block_decimation,
            gears: self
                .adaptation
                .gears
                .iter()
                .map(|g| GearRow {
                    at: g.at,
                    mu: g.mu,
                    mu_o: g.mu_o,
                    mu_gamma: g.mu_gamma,
                    mu_tau: g.mu_tau,
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let eq = &self.equalizer;
        if eq.ce_taps < 3 || eq.ce_taps % 2 == 0 {
            return Err(Error::Config("ce_taps must be odd and >= 3".into()));
        }
        if eq.ffe_taps == 0 {
            return Err(Error::Config("ffe_taps must be >= 1".into()));
        }
        if self.adc.m1 == 0 || self.adc.m2 == 0 {
            return Err(Error::Config("m1 and m2 must be >= 1".into()));
        }
        if self.m_total() > 64 {
            return Err(Error::Config("m1 * m2 must be <= 64".into()));
        }
        if self.signal.grid_osf < 4 {
            return Err(Error::Config("grid_osf must be >= 4".into()));
        }
        if !(self.signal.loading > 0.0 && self.signal.loading <= 1.0) {
            return Err(Error::Config("loading must lie in (0, 1]".into()));
        }
        if self.adaptation.block_samples % 2 != 0 {
            return Err(Error::Config("block_samples must be even".into()));
        }
        match self.channel.kind.as_str() {
            "identity" | "dgd" => {}
            other => {
                return Err(Error::Config(format!(
                    "unknown channel kind {other:?} (expected identity | dgd)"
                )))
            }
        }
        if self.run.measure_symbols + self.run.warmup_symbols > self.run.symbols {
            return Err(Error::Config(
                "warmup_symbols + measure_symbols exceeds symbols".into(),
            ));
        }
        if self.metrics.ber_window == 0 || self.metrics.ber_stride_symbols == 0 {
            return Err(Error::Config("BER stride and window must be >= 1".into()));
        }
        self.impairment_ranges().validate()?;
        self.adc_config().validate()?;
        self.schedule().validate(eq.ce_taps, eq.ffe_taps)?;
        // lowpass cutoff must stay below the grid Nyquist
        if self.adc.bandwidth_hz > 0.0 {
            let grid_rate = 2.0 * self.signal.symbol_rate_hz * self.signal.grid_osf as f64;
            let hi = self.adc.bandwidth_hz * (1.0 + self.impairments.bandwidth);
            if hi >= 0.5 * grid_rate {
                return Err(Error::Config(
                    "bandwidth_hz too high for the simulation grid; raise grid_osf".into(),
                ));
            }
        }
        Ok(())
    }
}
