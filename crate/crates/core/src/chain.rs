//! Room-temperature analog chain models: IQ upconversion with memoryless
//! nonlinearity and quadrature imperfections, soft-compressing amplifiers,
//! finite-stopband filters, attenuators and a seeded noise floor, composed
//! into ordered chains.

use crate::dac::{fft_spectrum, AnalogWaveform, Spectrum, Window};
use crate::opt::{bisect, nelder_mead};
use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;
use std::f64::consts::TAU;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("I and Q waveforms differ in rate or length")]
    IqMismatch,
    #[error("sample rate {rate_hz} Hz is too low for LO at {lo_freq_hz} Hz (need >= 4x)")]
    RateTooLow { rate_hz: f64, lo_freq_hz: f64 },
    #[error("filter cutoff {cutoff_hz} Hz is at or above the waveform Nyquist {nyquist_hz} Hz")]
    CutoffAboveNyquist { cutoff_hz: f64, nyquist_hz: f64 },
    #[error("invalid {what}: {why}")]
    BadModel { what: &'static str, why: String },
    #[error("chain holds more than one mixer stage")]
    MultipleMixers,
    #[error("chain contains a mixer but the input is a single real waveform; provide an I/Q pair")]
    MixerNeedsIq,
    #[error("I/Q input requires a mixer stage in the chain")]
    IqWithoutMixer,
    #[error(transparent)]
    Dac(#[from] crate::dac::DacError),
}

/// IQ mixer with LO leakage, gain imbalance, phase skew and an odd-order
/// memoryless polynomial nonlinearity `a1 v + a3 v^3 + a5 v^5`.
#[derive(Debug, Clone)]
pub struct MixerModel {
    pub lo_freq_hz: f64,
    /// Carrier leakage as an amplitude fraction of full scale.
    pub lo_leak: f64,
    /// I-branch gain error epsilon; the I path carries gain `1 + epsilon`.
    pub gain_imbalance: f64,
    pub phase_skew_rad: f64,
    pub a1: f64,
    pub a3: f64,
    pub a5: f64,
}

impl MixerModel {
    pub fn ideal(lo_freq_hz: f64) -> Self {
        Self {
            lo_freq_hz,
            lo_leak: 0.0,
            gain_imbalance: 0.0,
            phase_skew_rad: 0.0,
            a1: 1.0,
            a3: 0.0,
            a5: 0.0,
        }
    }

    fn validate(&self) -> Result<(), ChainError> {
        if self.a1 <= 0.0 {
            return Err(ChainError::BadModel {
                what: "mixer",
                why: format!("a1 must be positive, got {}", self.a1),
            });
        }
        if self.gain_imbalance.abs() >= 1.0 {
            return Err(ChainError::BadModel {
                what: "mixer",
                why: format!("|gain imbalance| must be < 1, got {}", self.gain_imbalance),
            });
        }
        Ok(())
    }
}

/// Amplifier with soft tanh compression pinned to its 1 dB compression
/// point. `input_p1db = f64::INFINITY` selects an exactly linear device.
#[derive(Debug, Clone, Copy)]
pub struct AmplifierModel {
    pub gain_db: f64,
    /// Input amplitude at which the output is 1 dB below linear.
    pub input_p1db: f64,
}

/// Magnitude-only filter: Butterworth-style monotone rolloff clamped at a
/// finite stopband floor, phase ignored.
#[derive(Debug, Clone, Copy)]
pub enum FilterKind {
    Lowpass { cutoff_hz: f64 },
    Bandpass { f_lo_hz: f64, f_hi_hz: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct FilterModel {
    pub kind: FilterKind,
    pub stopband_atten_db: f64,
    pub order: u32,
}

#[derive(Debug, Clone)]
pub enum Stage {
    Mixer(MixerModel),
    Amplifier(AmplifierModel),
    Filter(FilterModel),
    Attenuator { db: f64 },
    /// Adds seeded noise at a flat per-bin spectral level.
    NoiseFloor { dbfs_per_bin: f64 },
}

/// Ordered list of analog stages forming one control chain.
#[derive(Debug, Clone, Default)]
pub struct ChainSpec {
    pub stages: Vec<Stage>,
}

impl ChainSpec {
    pub fn new(stages: Vec<Stage>) -> Result<Self, ChainError> {
        let spec = Self { stages };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ChainError> {
        let mixers = self
            .stages
            .iter()
            .filter(|s| matches!(s, Stage::Mixer(_)))
            .count();
        if mixers > 1 {
            return Err(ChainError::MultipleMixers);
        }
        for s in &self.stages {
            match s {
                Stage::Mixer(m) => m.validate()?,
                Stage::Amplifier(a) => {
                    if a.input_p1db <= 0.0 {
                        return Err(ChainError::BadModel {
                            what: "amplifier",
                            why: format!("input_p1db must be positive, got {}", a.input_p1db),
                        });
                    }
                }
                Stage::Filter(f) => validate_filter(f)?,
                Stage::Attenuator { .. } | Stage::NoiseFloor { .. } => {}
            }
        }
        Ok(())
    }

    pub fn has_mixer(&self) -> bool {
        self.stages.iter().any(|s| matches!(s, Stage::Mixer(_)))
    }

    /// LO frequency of the mixer stage, if one is present.
    pub fn mixer_lo_hz(&self) -> Option<f64> {
        self.stages.iter().find_map(|s| match s {
            Stage::Mixer(m) => Some(m.lo_freq_hz),
            _ => None,
        })
    }
}

fn validate_filter(f: &FilterModel) -> Result<(), ChainError> {
    if f.order == 0 {
        return Err(ChainError::BadModel {
            what: "filter",
            why: "order must be >= 1".into(),
        });
    }
    if !(0.0..=120.0).contains(&f.stopband_atten_db) {
        return Err(ChainError::BadModel {
            what: "filter",
            why: format!("stopband attenuation {} dB outside [0, 120]", f.stopband_atten_db),
        });
    }
    match f.kind {
        FilterKind::Lowpass { cutoff_hz } => {
            if cutoff_hz <= 0.0 {
                return Err(ChainError::BadModel {
                    what: "filter",
                    why: "cutoff must be positive".into(),
                });
            }
        }
        FilterKind::Bandpass { f_lo_hz, f_hi_hz } => {
            if f_lo_hz <= 0.0 || f_hi_hz <= f_lo_hz {
                return Err(ChainError::BadModel {
                    what: "filter",
                    why: format!("band edges [{f_lo_hz}, {f_hi_hz}] must be increasing and positive"),
                });
            }
        }
    }
    Ok(())
}

/// One chain input: a single real waveform, or a baseband I/Q pair destined
/// for a mixer stage.
#[derive(Debug, Clone)]
pub enum ChainInput {
    Real(AnalogWaveform),
    Iq { i: AnalogWaveform, q: AnalogWaveform },
}

fn carrier_phase(freq_hz: f64, t: f64) -> f64 {
    let cycles = freq_hz * t;
    TAU * (cycles - cycles.floor())
}

fn apply_poly(v: f64, a1: f64, a3: f64, a5: f64) -> f64 {
    let v2 = v * v;
    v * (a1 + v2 * (a3 + v2 * a5))
}

/// Upconvert a baseband I/Q pair:
/// `v = (1 + eps) I cos(w t) - Q sin(w t + skew) + leak cos(w t)`, then the
/// odd polynomial nonlinearity is applied sample by sample.
pub fn upconvert_iq(
    i: &AnalogWaveform,
    q: &AnalogWaveform,
    m: &MixerModel,
) -> Result<AnalogWaveform, ChainError> {
    m.validate()?;
    if i.samples.len() != q.samples.len() || i.rate_hz != q.rate_hz || i.t0_s != q.t0_s {
        return Err(ChainError::IqMismatch);
    }
    if i.rate_hz < 4.0 * m.lo_freq_hz {
        return Err(ChainError::RateTooLow {
            rate_hz: i.rate_hz,
            lo_freq_hz: m.lo_freq_hz,
        });
    }
    let samples = (0..i.samples.len())
        .map(|k| {
            let t = i.t0_s + k as f64 / i.rate_hz;
            let ph = carrier_phase(m.lo_freq_hz, t);
            let v = (1.0 + m.gain_imbalance) * i.samples[k] * ph.cos()
                - q.samples[k] * (ph + m.phase_skew_rad).sin()
                + m.lo_leak * ph.cos();
            apply_poly(v, m.a1, m.a3, m.a5)
        })
        .collect();
    Ok(AnalogWaveform {
        samples,
        rate_hz: i.rate_hz,
        t0_s: i.t0_s,
    })
}

/// Solution of `tanh(r)/r = 10^(-1/20)`: the normalized drive at which the
/// soft limiter sits exactly 1 dB under its linear extrapolation.
fn p1db_knee() -> f64 {
    let target = 10f64.powf(-1.0 / 20.0);
    bisect(|r| r.tanh() / r - target, 1e-6, 3.0, 1e-14, 200)
        .expect("knee equation brackets a root")
}

/// Memoryless soft compression `g * x_sat * tanh(x / x_sat)` with `x_sat`
/// chosen so the output at `input_p1db` is exactly 1 dB below linear.
pub fn apply_amplifier(w: &AnalogWaveform, a: &AmplifierModel) -> AnalogWaveform {
    let gain = 10f64.powf(a.gain_db / 20.0);
    let samples = if a.input_p1db.is_finite() {
        let x_sat = a.input_p1db / p1db_knee();
        w.samples
            .iter()
            .map(|&x| gain * x_sat * (x / x_sat).tanh())
            .collect()
    } else {
        w.samples.iter().map(|&x| gain * x).collect()
    };
    AnalogWaveform {
        samples,
        rate_hz: w.rate_hz,
        t0_s: w.t0_s,
    }
}

fn filter_gain(f_abs: f64, model: &FilterModel) -> f64 {
    let floor = 10f64.powf(-model.stopband_atten_db / 20.0);
    let response = match model.kind {
        FilterKind::Lowpass { cutoff_hz } => {
            let x = (f_abs / cutoff_hz).powi(2 * model.order as i32);
            1.0 / (1.0 + x).sqrt()
        }
        FilterKind::Bandpass { f_lo_hz, f_hi_hz } => {
            if f_abs == 0.0 {
                0.0
            } else {
                let f0_sq = f_lo_hz * f_hi_hz;
                let bw = f_hi_hz - f_lo_hz;
                let x = ((f_abs * f_abs - f0_sq) / (f_abs * bw)).powi(2 * model.order as i32);
                1.0 / (1.0 + x).sqrt()
            }
        }
    };
    response.max(floor)
}

/// Zero-phase magnitude filtering on the waveform's FFT grid.
pub fn apply_filter(w: &AnalogWaveform, f: &FilterModel) -> Result<AnalogWaveform, ChainError> {
    validate_filter(f)?;
    let nyquist = w.rate_hz / 2.0;
    let top = match f.kind {
        FilterKind::Lowpass { cutoff_hz } => cutoff_hz,
        FilterKind::Bandpass { f_hi_hz, .. } => f_hi_hz,
    };
    if top >= nyquist {
        return Err(ChainError::CutoffAboveNyquist {
            cutoff_hz: top,
            nyquist_hz: nyquist,
        });
    }
    let n = w.samples.len();
    let mut buf: Vec<Complex64> = w.samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let freq = if k <= n / 2 {
            k as f64 * w.rate_hz / n as f64
        } else {
            (n - k) as f64 * w.rate_hz / n as f64
        };
        *v *= filter_gain(freq, f);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let samples = buf.iter().map(|v| v.re / n as f64).collect();
    Ok(AnalogWaveform {
        samples,
        rate_hz: w.rate_hz,
        t0_s: w.t0_s,
    })
}

/// Add seeded noise with a flat one-sided spectral amplitude of
/// `dbfs_per_bin` on this waveform's own FFT grid, with uniformly random
/// bin phases.
fn add_noise_floor(w: &AnalogWaveform, dbfs_per_bin: f64, rng: &mut ChaCha8Rng) -> AnalogWaveform {
    let n = w.samples.len();
    let level = 10f64.powf(dbfs_per_bin / 20.0);
    let mut spec = vec![Complex64::new(0.0, 0.0); n];
    let half = n / 2;
    for k in 1..half {
        let phase = rng.gen_range(0.0..TAU);
        let v = Complex64::from_polar(level * n as f64 / 2.0, phase);
        spec[k] = v;
        spec[n - k] = v.conj();
    }
    let mut planner = FftPlanner::new();
    planner.plan_fft_inverse(n).process(&mut spec);
    let samples = w
        .samples
        .iter()
        .zip(&spec)
        .map(|(&x, v)| x + v.re / n as f64)
        .collect();
    AnalogWaveform {
        samples,
        rate_hz: w.rate_hz,
        t0_s: w.t0_s,
    }
}

fn apply_real_stage(
    w: &AnalogWaveform,
    stage: &Stage,
    stage_index: usize,
    seed: u64,
) -> Result<AnalogWaveform, ChainError> {
    match stage {
        Stage::Mixer(_) => unreachable!("mixer handled by run_chain"),
        Stage::Amplifier(a) => Ok(apply_amplifier(w, a)),
        Stage::Filter(f) => apply_filter(w, f),
        Stage::Attenuator { db } => {
            let g = 10f64.powf(-db / 20.0);
            Ok(AnalogWaveform {
                samples: w.samples.iter().map(|&x| g * x).collect(),
                rate_hz: w.rate_hz,
                t0_s: w.t0_s,
            })
        }
        Stage::NoiseFloor { dbfs_per_bin } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stage_index as u64 + 1);
            Ok(add_noise_floor(w, *dbfs_per_bin, &mut rng))
        }
    }
}

/// Apply all stages in order. Stages ahead of a mixer act on both quadratures
/// of an I/Q input; the mixer merges them into the real passband signal. The
/// result is bit-reproducible for a given `(input, chain, seed)`.
pub fn run_chain(
    input: &ChainInput,
    chain: &ChainSpec,
    seed: u64,
) -> Result<AnalogWaveform, ChainError> {
    chain.validate()?;
    let mixer_pos = chain
        .stages
        .iter()
        .position(|s| matches!(s, Stage::Mixer(_)));
    match (input, mixer_pos) {
        (ChainInput::Real(w), None) => {
            let mut out = w.clone();
            for (idx, stage) in chain.stages.iter().enumerate() {
                out = apply_real_stage(&out, stage, idx, seed)?;
            }
            Ok(out)
        }
        (ChainInput::Real(_), Some(_)) => Err(ChainError::MixerNeedsIq),
        (ChainInput::Iq { .. }, None) => Err(ChainError::IqWithoutMixer),
        (ChainInput::Iq { i, q }, Some(pos)) => {
            let mut ii = i.clone();
            let mut qq = q.clone();
            for (idx, stage) in chain.stages.iter().take(pos).enumerate() {
                ii = apply_real_stage(&ii, stage, idx, seed)?;
                qq = apply_real_stage(&qq, stage, idx, seed)?;
            }
            let Stage::Mixer(m) = &chain.stages[pos] else {
                unreachable!()
            };
            let mut out = upconvert_iq(&ii, &qq, m)?;
            for (idx, stage) in chain.stages.iter().enumerate().skip(pos + 1) {
                out = apply_real_stage(&out, stage, idx, seed)?;
            }
            Ok(out)
        }
    }
}

/// Quadrature predistortion found by [`calibrate_mixer`]:
/// `I' = amp_corr (I + tan(phase_corr) Q) + dc_i`,
/// `Q' = Q / cos(phase_corr) + dc_q`.
#[derive(Debug, Clone, Copy)]
pub struct MixerCalibration {
    pub dc_i: f64,
    pub dc_q: f64,
    pub amp_corr: f64,
    pub phase_corr: f64,
    pub achieved_lo_dbc: f64,
    pub achieved_image_dbc: f64,
    /// Both suppressions reached -40 dBc; otherwise the corrections are
    /// best-effort.
    pub meets_target: bool,
}

impl Default for MixerCalibration {
    fn default() -> Self {
        Self {
            dc_i: 0.0,
            dc_q: 0.0,
            amp_corr: 1.0,
            phase_corr: 0.0,
            achieved_lo_dbc: f64::NEG_INFINITY,
            achieved_image_dbc: f64::NEG_INFINITY,
            meets_target: true,
        }
    }
}

/// Apply predistortion corrections to a baseband I/Q pair.
pub fn apply_iq_correction(
    i: &AnalogWaveform,
    q: &AnalogWaveform,
    cal: &MixerCalibration,
) -> (AnalogWaveform, AnalogWaveform) {
    let tan_p = cal.phase_corr.tan();
    let sec_p = 1.0 / cal.phase_corr.cos();
    let ic = AnalogWaveform {
        samples: i
            .samples
            .iter()
            .zip(&q.samples)
            .map(|(&iv, &qv)| cal.amp_corr * (iv + tan_p * qv) + cal.dc_i)
            .collect(),
        rate_hz: i.rate_hz,
        t0_s: i.t0_s,
    };
    let qc = AnalogWaveform {
        samples: q.samples.iter().map(|&qv| sec_p * qv + cal.dc_q).collect(),
        rate_hz: q.rate_hz,
        t0_s: q.t0_s,
    };
    (ic, qc)
}

/// Upconvert with predistortion applied first.
pub fn upconvert_iq_corrected(
    i: &AnalogWaveform,
    q: &AnalogWaveform,
    m: &MixerModel,
    cal: &MixerCalibration,
) -> Result<AnalogWaveform, ChainError> {
    let (ic, qc) = apply_iq_correction(i, q, cal);
    upconvert_iq(&ic, &qc, m)
}

fn sideband_probe(
    m: &MixerModel,
    sideband_hz: f64,
    amplitude: f64,
) -> (AnalogWaveform, AnalogWaveform, f64) {
    // Snap the sideband onto a divisor of the LO so carrier, image and
    // leakage all land on exact FFT bins of an integer-period probe.
    let k = (m.lo_freq_hz / sideband_hz).round().max(2.0);
    let sb = m.lo_freq_hz / k;
    let rate = 8.0 * m.lo_freq_hz;
    let n = (8.0 * k) as usize;
    let mut i = Vec::with_capacity(n);
    let mut q = Vec::with_capacity(n);
    for s in 0..n {
        let ph = TAU * sb * s as f64 / rate;
        i.push(amplitude * ph.cos());
        q.push(amplitude * ph.sin());
    }
    (
        AnalogWaveform { samples: i, rate_hz: rate, t0_s: 0.0 },
        AnalogWaveform { samples: q, rate_hz: rate, t0_s: 0.0 },
        sb,
    )
}

fn leak_and_image_power(
    spec: &Spectrum,
    lo_hz: f64,
    sb_hz: f64,
) -> (f64, f64, f64) {
    let carrier = spec.values[spec.bin_nearest(lo_hz + sb_hz)].norm_sqr();
    let lo = spec.values[spec.bin_nearest(lo_hz)].norm_sqr();
    let image = spec.values[spec.bin_nearest(lo_hz - sb_hz)].norm_sqr();
    (carrier, lo, image)
}

/// Derivative-free minimization of LO leakage plus image power for an
/// upper-sideband probe tone, measured through the full mixer model.
///
/// Always returns the best corrections found; `meets_target` reports whether
/// both spurs reached -40 dBc.
pub fn calibrate_mixer(m: &MixerModel, sideband_hz: f64) -> Result<MixerCalibration, ChainError> {
    m.validate()?;
    if sideband_hz <= 0.0 || sideband_hz >= m.lo_freq_hz {
        return Err(ChainError::BadModel {
            what: "calibration",
            why: format!("sideband {sideband_hz} Hz must lie in (0, LO)"),
        });
    }
    let (i, q, sb) = sideband_probe(m, sideband_hz, 0.5);

    let mut objective = |p: &[f64]| -> f64 {
        let cal = MixerCalibration {
            dc_i: p[0],
            dc_q: p[1],
            amp_corr: p[2],
            phase_corr: p[3],
            ..Default::default()
        };
        let Ok(out) = upconvert_iq_corrected(&i, &q, m, &cal) else {
            return f64::INFINITY;
        };
        let spec = fft_spectrum(&out, Window::Rect).expect("probe is non-empty");
        let (carrier, lo, image) = leak_and_image_power(&spec, m.lo_freq_hz, sb);
        (lo + image) / carrier.max(1e-300)
    };

    let res = nelder_mead(
        &mut objective,
        &[0.0, 0.0, 1.0, 0.0],
        &[0.01, 0.01, 0.02, 0.02],
        1e-28,
        800,
    );
    let cal = MixerCalibration {
        dc_i: res.x[0],
        dc_q: res.x[1],
        amp_corr: res.x[2],
        phase_corr: res.x[3],
        ..Default::default()
    };
    let out = upconvert_iq_corrected(&i, &q, m, &cal)?;
    let spec = fft_spectrum(&out, Window::Rect)?;
    let (carrier, lo, image) = leak_and_image_power(&spec, m.lo_freq_hz, sb);
    let to_dbc = |p: f64| 10.0 * (p / carrier).max(1e-300).log10();
    let achieved_lo_dbc = to_dbc(lo);
    let achieved_image_dbc = to_dbc(image);
    Ok(MixerCalibration {
        achieved_lo_dbc,
        achieved_image_dbc,
        meets_target: achieved_lo_dbc <= -40.0 && achieved_image_dbc <= -40.0,
        ..cal
    })
}
