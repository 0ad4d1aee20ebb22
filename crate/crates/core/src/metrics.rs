//! Quantitative characterization of synthesized signals: spurious-free
//! dynamic range with exclusion masks, the amplitude-linearity metric
//! `L(A) = dV_o/dA`, harmonic powers, and the decay-fit estimators used by
//! coherence and randomized-benchmarking experiments.

use crate::chain::{run_chain, ChainError, ChainInput, ChainSpec};
use crate::dac::{fft_spectrum, AnalogWaveform, Spectrum, Window};
use crate::fit::{levenberg_marquardt, FitError};
use std::f64::consts::TAU;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("exclusion windows must be sorted and non-overlapping")]
    BadMask,
    #[error("carrier at {carrier_hz} Hz is below the spectrum floor")]
    CarrierBelowFloor { carrier_hz: f64 },
    #[error("no bins remain outside the carrier window and mask")]
    NothingOutsideMask,
    #[error("amplitude {0} +- delta leaves the [0, 1] full-scale range")]
    AmplitudeOutOfRange(f64),
    #[error("normalization band [0.10, 0.20] contains no sweep amplitudes")]
    EmptyNormalizationBand,
    #[error("survival data is outside the RB model: fitted p = {0}")]
    InvalidRbFit(f64),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Dac(#[from] crate::dac::DacError),
}

/// Frequency windows excluded from spur searches (suppressed sidebands,
/// carrier leakage, clock lines).
#[derive(Debug, Clone, Default)]
pub struct ExclusionMask {
    windows: Vec<(f64, f64)>,
}

impl ExclusionMask {
    pub fn new(mut windows: Vec<(f64, f64)>) -> Result<Self, MetricsError> {
        windows.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for w in &windows {
            if w.1 <= w.0 {
                return Err(MetricsError::BadMask);
            }
        }
        if windows.windows(2).any(|p| p[1].0 < p[0].1) {
            return Err(MetricsError::BadMask);
        }
        Ok(Self { windows })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn contains(&self, freq_hz: f64) -> bool {
        self.windows
            .iter()
            .any(|&(lo, hi)| (lo..=hi).contains(&freq_hz))
    }

    pub fn windows(&self) -> &[(f64, f64)] {
        &self.windows
    }
}

fn median_magnitude(s: &Spectrum) -> f64 {
    let mut mags: Vec<f64> = s.values.iter().map(|v| v.norm()).collect();
    mags.sort_by(|a, b| a.partial_cmp(b).unwrap());
    mags[mags.len() / 2]
}

/// Number of bins on each side of the carrier peak integrated as carrier
/// power, and likewise for harmonics. Fixed so reported values are
/// bit-reproducible.
pub const CARRIER_HALF_WINDOW: usize = 2;

/// Spurious-free dynamic range in dBc: integrated carrier power (peak bin
/// +- 2 bins) over the strongest single bin outside the carrier window and
/// outside the exclusion mask.
pub fn sfdr(s: &Spectrum, carrier_hz: f64, mask: &ExclusionMask) -> Result<f64, MetricsError> {
    let near = s.bin_nearest(carrier_hz);
    let lo = near.saturating_sub(CARRIER_HALF_WINDOW);
    let hi = (near + CARRIER_HALF_WINDOW).min(s.len() - 1);
    let peak = (lo..=hi)
        .max_by(|&a, &b| s.values[a].norm().partial_cmp(&s.values[b].norm()).unwrap())
        .expect("window is non-empty");
    let floor = median_magnitude(s);
    if s.values[peak].norm() < floor * 10f64.powf(10.0 / 20.0) {
        return Err(MetricsError::CarrierBelowFloor { carrier_hz });
    }
    let c_lo = peak.saturating_sub(CARRIER_HALF_WINDOW);
    let c_hi = (peak + CARRIER_HALF_WINDOW).min(s.len() - 1);
    let carrier_power: f64 = (c_lo..=c_hi).map(|i| s.values[i].norm_sqr()).sum();

    let mut max_spur = 0.0f64;
    let mut any = false;
    for i in 0..s.len() {
        if (c_lo..=c_hi).contains(&i) || mask.contains(s.freqs_hz[i]) {
            continue;
        }
        any = true;
        max_spur = max_spur.max(s.values[i].norm_sqr());
    }
    if !any {
        return Err(MetricsError::NothingOutsideMask);
    }
    Ok(10.0 * (carrier_power / max_spur.max(1e-300)).log10())
}

/// Integrated harmonic power relative to the fundamental. `dbc` is `None`
/// when the harmonic lies beyond the spectrum's frequency range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarmonicPower {
    pub order: u32,
    pub dbc: Option<f64>,
}

/// Power at `k * f0` for k = 2..=n_max, relative to the fundamental at `f0`.
/// Both are integrated over peak bin +- 2 bins.
pub fn harmonic_powers(s: &Spectrum, f0: f64, n_max: u32) -> Result<Vec<HarmonicPower>, MetricsError> {
    let band_power = |freq: f64| -> f64 {
        let near = s.bin_nearest(freq);
        let lo = near.saturating_sub(CARRIER_HALF_WINDOW);
        let hi = (near + CARRIER_HALF_WINDOW).min(s.len() - 1);
        (lo..=hi).map(|i| s.values[i].norm_sqr()).sum()
    };
    let fund = band_power(f0);
    if fund <= 0.0 {
        return Err(MetricsError::CarrierBelowFloor { carrier_hz: f0 });
    }
    let f_max = *s.freqs_hz.last().expect("spectrum is non-empty");
    let mut out = Vec::new();
    for k in 2..=n_max {
        let f = k as f64 * f0;
        if f > f_max {
            out.push(HarmonicPower { order: k, dbc: None });
        } else {
            let p = band_power(f);
            out.push(HarmonicPower {
                order: k,
                dbc: Some(10.0 * (p / fund).max(1e-300).log10()),
            });
        }
    }
    Ok(out)
}

/// Linearly interpolated magnitude of a spectrum at an arbitrary frequency.
fn magnitude_at(s: &Spectrum, freq_hz: f64) -> f64 {
    let i = s.bin_nearest(freq_hz);
    let (a, b) = if s.freqs_hz[i] <= freq_hz && i + 1 < s.len() {
        (i, i + 1)
    } else if i > 0 {
        (i - 1, i)
    } else {
        (0, 1.min(s.len() - 1))
    };
    if a == b {
        return s.values[a].norm();
    }
    let t = (freq_hz - s.freqs_hz[a]) / (s.freqs_hz[b] - s.freqs_hz[a]);
    let t = t.clamp(0.0, 1.0);
    s.values[a].norm() * (1.0 - t) + s.values[b].norm() * t
}

/// Cosine similarity between the spectral lobe around `f_ref` and the lobe
/// around `f_probe` sampled at `dilation`-stretched offsets, on linear
/// magnitudes. Used to check that a harmonic lobe carries the (dilated)
/// envelope spectrum of the fundamental pulse.
pub fn lobe_correlation(
    s: &Spectrum,
    f_ref: f64,
    f_probe: f64,
    dilation: f64,
    halfwidth_hz: f64,
    n_points: usize,
) -> f64 {
    let mut aa = 0.0;
    let mut bb = 0.0;
    let mut ab = 0.0;
    for j in 0..n_points {
        let d = -halfwidth_hz + 2.0 * halfwidth_hz * j as f64 / (n_points - 1) as f64;
        let a = magnitude_at(s, f_ref + d);
        let b = magnitude_at(s, f_probe + dilation * d);
        aa += a * a;
        bb += b * b;
        ab += a * b;
    }
    ab / (aa.sqrt() * bb.sqrt()).max(1e-300)
}

/// Amplitude sweep of the output fundamental and its derivative `L(A)`.
#[derive(Debug, Clone)]
pub struct LinearityCurve {
    pub amplitudes: Vec<f64>,
    /// Output fundamental magnitude at each amplitude.
    pub v_o: Vec<f64>,
    /// Central-difference derivative dV_o/dA at each amplitude.
    pub l_values: Vec<f64>,
    /// Mean of `l_values` over amplitudes in [0.10, 0.20] of full scale.
    pub normalization: f64,
}

impl LinearityCurve {
    pub fn l_norm(&self) -> Vec<f64> {
        self.l_values.iter().map(|l| l / self.normalization).collect()
    }

    /// `amplitude,v_o,l_norm` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(b"amplitude,v_o,l_norm\n")?;
        for ((a, v), l) in self.amplitudes.iter().zip(&self.v_o).zip(self.l_norm()) {
            writeln!(w, "{:.16e},{:.16e},{:.16e}", a, v, l)?;
        }
        Ok(())
    }
}

/// Probe-tone configuration for [`linearity`]. For chains with a mixer the
/// probe is an upper-sideband I/Q pair at `freq_hz` offset from the LO;
/// otherwise it is a real tone at `freq_hz` itself.
#[derive(Debug, Clone, Copy)]
pub struct LinearityProbe {
    pub freq_hz: f64,
    pub rate_hz: f64,
    pub n_samples: usize,
}

impl LinearityProbe {
    fn input(&self, chain: &ChainSpec, amplitude: f64) -> ChainInput {
        let tone = |sin: bool| -> AnalogWaveform {
            let samples = (0..self.n_samples)
                .map(|k| {
                    let ph = TAU * self.freq_hz * k as f64 / self.rate_hz;
                    amplitude * if sin { ph.sin() } else { ph.cos() }
                })
                .collect();
            AnalogWaveform { samples, rate_hz: self.rate_hz, t0_s: 0.0 }
        };
        if chain.has_mixer() {
            ChainInput::Iq { i: tone(false), q: tone(true) }
        } else {
            ChainInput::Real(tone(false))
        }
    }

    fn fundamental_hz(&self, chain: &ChainSpec) -> f64 {
        chain.mixer_lo_hz().unwrap_or(0.0) + self.freq_hz
    }
}

fn fundamental_magnitude(
    chain: &ChainSpec,
    probe: &LinearityProbe,
    amplitude: f64,
    seed: u64,
) -> Result<f64, MetricsError> {
    let out = run_chain(&probe.input(chain, amplitude), chain, seed)?;
    let spec = fft_spectrum(&out, Window::Rect)?;
    let near = spec.bin_nearest(probe.fundamental_hz(chain));
    let lo = near.saturating_sub(1);
    let hi = (near + 1).min(spec.len() - 1);
    Ok((lo..=hi)
        .map(|i| spec.values[i].norm())
        .fold(0.0, f64::max))
}

/// Measure `V_o(A)` and its central-difference derivative
/// `L(A) = (V_o(A + delta) - V_o(A - delta)) / (2 delta)` over an amplitude
/// sweep, normalized against the mean of `L` between 10% and 20% of full
/// scale.
pub fn linearity(
    chain: &ChainSpec,
    probe: &LinearityProbe,
    amplitudes: &[f64],
    delta: f64,
    seed: u64,
) -> Result<LinearityCurve, MetricsError> {
    let mut v_o = Vec::with_capacity(amplitudes.len());
    let mut l_values = Vec::with_capacity(amplitudes.len());
    for &a in amplitudes {
        if a - delta < 0.0 || a + delta > 1.0 {
            return Err(MetricsError::AmplitudeOutOfRange(a));
        }
        v_o.push(fundamental_magnitude(chain, probe, a, seed)?);
        let hi = fundamental_magnitude(chain, probe, a + delta, seed)?;
        let lo = fundamental_magnitude(chain, probe, a - delta, seed)?;
        l_values.push((hi - lo) / (2.0 * delta));
    }
    let band: Vec<f64> = amplitudes
        .iter()
        .zip(&l_values)
        .filter(|(a, _)| (0.10..=0.20).contains(*a))
        .map(|(_, &l)| l)
        .collect();
    if band.is_empty() {
        return Err(MetricsError::EmptyNormalizationBand);
    }
    let normalization = band.iter().sum::<f64>() / band.len() as f64;
    Ok(LinearityCurve {
        amplitudes: amplitudes.to_vec(),
        v_o,
        l_values,
        normalization,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoherenceKind {
    T1,
    T2Ramsey,
    T2Echo,
}

/// Fitted exponential decay `A exp(-x / tau) + B`, optionally multiplied by
/// a cosine for oscillating (Ramsey / phase-swept echo) records.
#[derive(Debug, Clone)]
pub struct CoherenceFit {
    pub kind: CoherenceKind,
    pub tau_s: f64,
    pub amp: f64,
    pub offset: f64,
    pub tau_std: f64,
    pub residual_norm: f64,
    /// Oscillation frequency and phase when a cosine factor was fitted.
    pub freq_hz: Option<f64>,
    pub phase_rad: Option<f64>,
}

impl CoherenceFit {
    pub fn report(&self) -> String {
        let mut s = format!(
            "decay fit ({:?}): tau = {:.6e} s +- {:.2e}, amp = {:.6e}, offset = {:.6e}, rms residual = {:.3e}",
            self.kind, self.tau_s, self.tau_std, self.amp, self.offset, self.residual_norm
        );
        if let (Some(f), Some(p)) = (self.freq_hz, self.phase_rad) {
            s.push_str(&format!(", freq = {f:.6e} Hz, phase = {p:.4} rad"));
        }
        s
    }
}

fn check_decay_input(x: &[f64], y: &[f64]) -> Result<(), MetricsError> {
    if x.len() < 5 || y.len() != x.len() {
        return Err(MetricsError::Fit(FitError::BadInput(
            "need at least 5 (x, y) points".into(),
        )));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let spread = y.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    if spread < 1e-12 * mean.abs().max(1.0) {
        return Err(MetricsError::Fit(FitError::Degenerate(
            "constant data has no finite decay constant".into(),
        )));
    }
    Ok(())
}

/// Least-squares fit of `A exp(-x/tau) + B`.
pub fn fit_exponential_decay(
    x: &[f64],
    y: &[f64],
    kind: CoherenceKind,
) -> Result<CoherenceFit, MetricsError> {
    check_decay_input(x, y)?;
    let b0 = *y.last().expect("non-empty");
    let a0 = y[0] - b0;
    let span = x[x.len() - 1] - x[0];
    let fit = levenberg_marquardt(
        |p, t| p[0] * (-t / p[1]).exp() + p[2],
        x,
        y,
        None,
        &[a0, span / 3.0, b0],
    )?;
    let tau = fit.params[1];
    if !(tau.is_finite() && tau > 0.0) {
        return Err(MetricsError::Fit(FitError::Degenerate(format!(
            "fitted tau = {tau}"
        ))));
    }
    Ok(CoherenceFit {
        kind,
        tau_s: tau,
        amp: fit.params[0],
        offset: fit.params[2],
        tau_std: fit.std_errors[1],
        residual_norm: fit.residual_norm,
        freq_hz: None,
        phase_rad: None,
    })
}

/// Least-squares fit of `A exp(-x/tau) cos(2 pi f x + phi) + B`, seeded with
/// a frequency guess (for phase-swept echo and Ramsey records).
pub fn fit_oscillating_decay(
    x: &[f64],
    y: &[f64],
    freq_guess_hz: f64,
    kind: CoherenceKind,
) -> Result<CoherenceFit, MetricsError> {
    check_decay_input(x, y)?;
    let b0 = y.iter().sum::<f64>() / y.len() as f64;
    let a0 = y.iter().map(|v| (v - b0).abs()).fold(0.0, f64::max);
    let span = x[x.len() - 1] - x[0];
    let fit = levenberg_marquardt(
        |p, t| p[0] * (-t / p[1]).exp() * (TAU * p[3] * t + p[4]).cos() + p[2],
        x,
        y,
        None,
        &[a0, span / 3.0, b0, freq_guess_hz, 0.0],
    )?;
    let tau = fit.params[1];
    if !(tau.is_finite() && tau > 0.0) {
        return Err(MetricsError::Fit(FitError::Degenerate(format!(
            "fitted tau = {tau}"
        ))));
    }
    Ok(CoherenceFit {
        kind,
        tau_s: tau,
        amp: fit.params[0],
        offset: fit.params[2],
        tau_std: fit.std_errors[1],
        residual_norm: fit.residual_norm,
        freq_hz: Some(fit.params[3]),
        phase_rad: Some(fit.params[4]),
    })
}

/// Randomized-benchmarking decay fit `A p^m + B` with error per Clifford
/// `r = (1 - p)(d - 1)/d`.
#[derive(Debug, Clone)]
pub struct RbFit {
    pub p: f64,
    pub amp: f64,
    pub offset: f64,
    pub error_per_clifford: f64,
    pub d: u32,
    pub p_std: f64,
    pub residual_norm: f64,
}

impl RbFit {
    pub fn report(&self) -> String {
        format!(
            "RB fit: p = {:.6} +- {:.6}, A = {:.4}, B = {:.4}, error per Clifford = {:.3e} (d = {}), rms residual = {:.3e}",
            self.p, self.p_std, self.amp, self.offset, self.error_per_clifford, self.d, self.residual_norm
        )
    }
}

/// Variance-weighted fit of survival-vs-length RB data. `sems` are per-point
/// standard errors (weights 1/sem^2); pass `None` for unweighted.
/// The offset is seeded at the long-sequence asymptote mean.
pub fn fit_rb_decay(
    lengths: &[f64],
    survival: &[f64],
    sems: Option<&[f64]>,
    d: u32,
) -> Result<RbFit, MetricsError> {
    if lengths.len() < 4 || survival.len() != lengths.len() {
        return Err(MetricsError::Fit(FitError::BadInput(
            "need at least 4 sequence lengths".into(),
        )));
    }
    let dim = d as f64;
    let mean = survival.iter().sum::<f64>() / survival.len() as f64;
    let spread = survival.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    if spread < 1e-12 {
        // Constant survival: perfect gates, no measurable decay.
        return Ok(RbFit {
            p: 1.0,
            amp: 0.0,
            offset: mean,
            error_per_clifford: 0.0,
            d,
            p_std: 0.0,
            residual_norm: 0.0,
        });
    }

    // Seed B at the asymptote mean (tail of the record), A and p from the
    // first points.
    let tail = survival.len() / 4;
    let b0 = survival[survival.len() - tail.max(1)..].iter().sum::<f64>() / tail.max(1) as f64;
    let a0 = (survival[0] - b0).max(1e-6);
    let mid = survival.len() / 2;
    let p0 = if survival[mid] - b0 > 0.0 && lengths[mid] > lengths[0] {
        (((survival[mid] - b0) / a0).max(1e-6))
            .powf(1.0 / (lengths[mid] - lengths[0]))
            .clamp(0.5, 0.999999)
    } else {
        0.99
    };

    let weights: Option<Vec<f64>> = sems.map(|s| s.iter().map(|e| 1.0 / (e * e).max(1e-30)).collect());
    let fit = levenberg_marquardt(
        |p, m| p[0] * p[1].powf(m) + p[2],
        lengths,
        survival,
        weights.as_deref(),
        &[a0, p0, b0],
    )?;
    let p = fit.params[1];
    if !(0.0..=1.0).contains(&p) {
        return Err(MetricsError::InvalidRbFit(p));
    }
    Ok(RbFit {
        p,
        amp: fit.params[0],
        offset: fit.params[2],
        error_per_clifford: (1.0 - p) * (dim - 1.0) / dim,
        d,
        p_std: fit.std_errors[1],
        residual_norm: fit.residual_norm,
    })
}

/// `amplitude,sfdr_dbc` rows.
pub fn write_sfdr_csv<W: Write>(rows: &[(f64, f64)], mut w: W) -> std::io::Result<()> {
    w.write_all(b"amplitude,sfdr_dbc\n")?;
    for (a, s) in rows {
        writeln!(w, "{:.16e},{:.16e}", a, s)?;
    }
    Ok(())
}
