//! Quantitative evaluation: bit-error rate with lag alignment, moving-average
//! traces, slicer MSE, and reference-based SNDR.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    Ber,
    Mse,
    Sndr,
}

impl MetricKind {
    pub fn label(&self) -> &'static str {
        match self {
            MetricKind::Ber => "ber",
            MetricKind::Mse => "mse",
            MetricKind::Sndr => "sndr",
        }
    }
}

/// A series of (index, value) points with strictly increasing indices.
#[derive(Debug, Clone)]
pub struct MetricTrace {
    pub kind: MetricKind,
    pub points: Vec<(u64, f64)>,
}

impl MetricTrace {
    pub fn new(kind: MetricKind) -> Self {
        Self { kind, points: Vec::new() }
    }

    pub fn push(&mut self, index: u64, value: f64) {
        debug_assert!(self.points.last().is_none_or(|&(i, _)| index > i));
        self.points.push((index, value));
    }

    /// CSV serialization with an `index,value,kind` header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,value,kind\n");
        for &(i, v) in &self.points {
            s.push_str(&format!("{i},{v:.6e},{}\n", self.kind.label()));
        }
        s
    }
}

pub struct BerResult {
    pub ber: f64,
    /// lag applied to `decisions` relative to `truth`, in bits
    pub lag: i64,
    pub bits_compared: usize,
}

/// Bit-error rate after alignment-lag search.
///
/// The lag maximizing bit agreement over `[-lag_window, lag_window]` is
/// selected; if no lag reaches agreement > 0.6 the streams are considered
/// unalignable.
pub fn ber(decisions: &[u8], truth: &[u8], lag_window: usize) -> Result<BerResult> {
    if decisions.is_empty() || truth.is_empty() {
        return Err(Error::Alignment("empty bit stream".into()));
    }
    let w = lag_window as i64;
    let mut best: Option<(f64, i64, usize, usize)> = None; // agreement, lag, errors, total
    for lag in -w..=w {
        let mut errors = 0usize;
        let mut total = 0usize;
        for (i, &d) in decisions.iter().enumerate() {
            let j = i as i64 + lag;
            if j >= 0 && (j as usize) < truth.len() {
                total += 1;
                if d != truth[j as usize] {
                    errors += 1;
                }
            }
        }
        if total == 0 {
            continue;
        }
        let agreement = 1.0 - errors as f64 / total as f64;
        if best.is_none_or(|(a, ..)| agreement > a) {
            best = Some((agreement, lag, errors, total));
        }
    }
    match best {
        Some((agreement, lag, errors, total)) if agreement > 0.6 => Ok(BerResult {
            ber: errors as f64 / total as f64,
            lag,
            bits_compared: total,
        }),
        _ => Err(Error::Alignment(format!(
            "no lag within +/-{lag_window} bits reaches agreement > 0.6"
        ))),
    }
}

/// Trailing moving average of an instantaneous series.
pub fn windowed_ber(instantaneous: &[(u64, f64)], window: usize) -> Result<MetricTrace> {
    if window == 0 {
        return Err(Error::Config("window must be >= 1".into()));
    }
    let mut trace = MetricTrace::new(MetricKind::Ber);
    for (i, &(idx, _)) in instantaneous.iter().enumerate() {
        let lo = (i + 1).saturating_sub(window);
        let mean = instantaneous[lo..=i].iter().map(|&(_, v)| v).sum::<f64>()
            / (i + 1 - lo) as f64;
        trace.push(idx, mean);
    }
    Ok(trace)
}

/// SNDR cap when the residual is numerically zero.
pub const SNDR_CAP_DB: f64 = 120.0;

fn sndr_from_aligned(observed: &[f64], reference: &[f64]) -> Result<f64> {
    let r_energy: f64 = reference.iter().map(|v| v * v).sum();
    if r_energy == 0.0 {
        return Err(Error::Undefined("zero reference energy".into()));
    }
    let o_energy: f64 = observed.iter().map(|v| v * v).sum();
    if o_energy == 0.0 {
        return Ok(-SNDR_CAP_DB);
    }
    let cross: f64 = observed.iter().zip(reference).map(|(o, r)| o * r).sum();
    let a = cross / o_energy; // argmin_a ||a*obs - ref||^2
    let residual: f64 = observed
        .iter()
        .zip(reference)
        .map(|(o, r)| {
            let d = a * o - r;
            d * d
        })
        .sum();
    if residual <= r_energy * 1e-12 {
        return Ok(SNDR_CAP_DB);
    }
    Ok(10.0 * (r_energy / residual).log10())
}

fn best_lag(observed: &[f64], reference: &[f64], lag_window: usize) -> i64 {
    let w = lag_window as i64;
    let mut best = (f64::MIN, 0i64);
    for lag in -w..=w {
        let mut cross = 0.0;
        for (i, &o) in observed.iter().enumerate() {
            let j = i as i64 + lag;
            if j >= 0 && (j as usize) < reference.len() {
                cross += o * reference[j as usize];
            }
        }
        if cross > best.0 {
            best = (cross, lag);
        }
    }
    best.1
}

/// Reference-based SNDR in dB after integer-lag and optimal scalar-gain
/// alignment of `observed` to `reference`. Identical inputs cap at +120 dB.
pub fn sndr(observed: &[f64], reference: &[f64], lag_window: usize) -> Result<f64> {
    if observed.len() != reference.len() {
        return Err(Error::Contract("sndr inputs must have equal length".into()));
    }
    let lag = if lag_window == 0 { 0 } else { best_lag(observed, reference, lag_window) };
    let (o, r) = aligned_slices(observed, reference, lag);
    sndr_from_aligned(o, r)
}

fn aligned_slices<'a>(observed: &'a [f64], reference: &'a [f64], lag: i64) -> (&'a [f64], &'a [f64]) {
    // observed[i] pairs with reference[i + lag]
    if lag >= 0 {
        let l = lag as usize;
        let n = observed.len().min(reference.len() - l);
        (&observed[..n], &reference[l..l + n])
    } else {
        let l = (-lag) as usize;
        let n = reference.len().min(observed.len() - l);
        (&observed[l..l + n], &reference[..n])
    }
}

/// Mean per-interleave SNDR: one global lag and scalar gain, then per
/// interleave-class SNDRs averaged in dB.
pub fn sndr_per_interleave(
    observed: &[f64],
    reference: &[f64],
    m: usize,
    lag_window: usize,
) -> Result<f64> {
    if observed.len() != reference.len() {
        return Err(Error::Contract("sndr inputs must have equal length".into()));
    }
    let lag = if lag_window == 0 { 0 } else { best_lag(observed, reference, lag_window) };
    let (o, r) = aligned_slices(observed, reference, lag);
    let o_energy: f64 = o.iter().map(|v| v * v).sum();
    if o_energy == 0.0 {
        return Ok(-SNDR_CAP_DB);
    }
    let cross: f64 = o.iter().zip(r).map(|(a, b)| a * b).sum();
    let a = cross / o_energy;
    let mut mean_db = 0.0;
    for phase in 0..m {
        let mut r_e = 0.0;
        let mut res = 0.0;
        let mut i = phase;
        while i < o.len() {
            let d = a * o[i] - r[i];
            r_e += r[i] * r[i];
            res += d * d;
            i += m;
        }
        if r_e == 0.0 {
            return Err(Error::Undefined("zero reference energy in a class".into()));
        }
        let db = if res <= r_e * 1e-12 {
            SNDR_CAP_DB
        } else {
            10.0 * (r_e / res).log10()
        };
        mean_db += db;
    }
    Ok(mean_db / m as f64)
}

/// Block means of the total squared slicer error.
pub fn mse_trace(e_totals: &[f64], stride: usize) -> Result<MetricTrace> {
    if stride == 0 {
        return Err(Error::Config("stride must be >= 1".into()));
    }
    let mut trace = MetricTrace::new(MetricKind::Mse);
    let mut k = 0;
    while k + stride <= e_totals.len() {
        let mean = e_totals[k..k + stride].iter().sum::<f64>() / stride as f64;
        trace.push((k + stride) as u64, mean);
        k += stride;
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::afe::{quantize, AdcConfig};
    use crate::signal::RngStream;

    #[test]
    fn ber_identical_and_single_flip() {
        let mut rng = RngStream::new(1);
        let bits = rng.bits(1000);
        let r = ber(&bits, &bits, 16).unwrap();
        assert_eq!(r.ber, 0.0);
        assert_eq!(r.lag, 0);

        let mut flipped = bits.clone();
        flipped[500] ^= 1;
        let r = ber(&flipped, &bits, 16).unwrap();
        assert!((r.ber - 0.001).abs() < 1e-12);
    }

    #[test]
    fn ber_finds_lag_and_is_symmetric() {
        let mut rng = RngStream::new(2);
        let bits = rng.bits(4000);
        let shifted: Vec<u8> = bits[7..].to_vec();
        let a = ber(&shifted, &bits, 32).unwrap();
        assert_eq!(a.ber, 0.0);
        assert_eq!(a.lag, 7);
        let b = ber(&bits, &shifted, 32).unwrap();
        assert_eq!(b.ber, 0.0);
        assert_eq!(b.lag, -7);
    }

    #[test]
    fn ber_fails_on_unalignable_noise() {
        let mut rng = RngStream::new(3);
        let a = rng.bits(2000);
        let b = rng.bits(2000);
        assert!(matches!(ber(&a, &b, 16), Err(Error::Alignment(_))));
    }

    #[test]
    fn windowed_ber_trivials() {
        let series: Vec<(u64, f64)> = (0..10).map(|i| (i, i as f64)).collect();
        let w1 = windowed_ber(&series, 1).unwrap();
        assert_eq!(w1.points, series);
        let constant: Vec<(u64, f64)> = (0..10).map(|i| (i, 0.5)).collect();
        let w4 = windowed_ber(&constant, 4).unwrap();
        assert!(w4.points.iter().all(|&(_, v)| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn sndr_cap_and_known_noise() {
        let mut rng = RngStream::new(4);
        let reference: Vec<f64> = (0..100_000).map(|_| rng.gaussian()).collect();
        assert_eq!(sndr(&reference, &reference, 0).unwrap(), SNDR_CAP_DB);

        let observed: Vec<f64> =
            reference.iter().map(|&v| v + 0.1 * rng.gaussian()).collect();
        let db = sndr(&observed, &reference, 0).unwrap();
        assert!((db - 20.0).abs() < 0.1, "sndr {db}");
    }

    #[test]
    fn sndr_is_gain_invariant() {
        let mut rng = RngStream::new(5);
        let reference: Vec<f64> = (0..10_000).map(|_| rng.gaussian()).collect();
        let observed: Vec<f64> =
            reference.iter().map(|&v| v + 0.05 * rng.gaussian()).collect();
        let base = sndr(&observed, &reference, 0).unwrap();
        let scaled: Vec<f64> = observed.iter().map(|&v| 3.7 * v).collect();
        let s = sndr(&scaled, &reference, 0).unwrap();
        assert!((base - s).abs() < 1e-9);
    }

    #[test]
    fn sndr_of_quantizer_matches_formula() {
        // full-scale loaded sinusoid through an 8-bit mid-rise quantizer:
        // 6.02 * 8 + 1.76 ~ 49.9 dB
        let adc = AdcConfig { bits: 8, vfs: 1.0, fs: 1.0, m: 1 };
        let n = 65536;
        let reference: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / n as f64;
                // irrational-ish frequency to exercise all codes
                (2.0 * std::f64::consts::PI * 1234.567 * t).sin()
            })
            .collect();
        let observed: Vec<f64> = reference.iter().map(|&v| quantize(v, &adc)).collect();
        let db = sndr(&observed, &reference, 0).unwrap();
        assert!((db - 49.9).abs() < 1.0, "sndr {db}");
    }

    #[test]
    fn sndr_rejects_zero_reference() {
        let z = vec![0.0; 100];
        let o = vec![1.0; 100];
        assert!(matches!(sndr(&o, &z, 0), Err(Error::Undefined(_))));
    }

    #[test]
    fn mse_trace_blocks() {
        let zeros = vec![0.0; 64];
        let t = mse_trace(&zeros, 16).unwrap();
        assert!(t.points.iter().all(|&(_, v)| v == 0.0));
        let c = vec![0.25; 64];
        let t = mse_trace(&c, 16).unwrap();
        assert_eq!(t.points.len(), 4);
        assert!(t.points.iter().all(|&(_, v)| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn trace_csv_format() {
        let mut t = MetricTrace::new(MetricKind::Mse);
        t.push(10, 0.5);
        let csv = t.to_csv();
        assert!(csv.starts_with("index,value,kind\n"));
        assert!(csv.contains("10,5.000000e-1,mse"));
    }
}
