//! Baseband pulse envelopes: Gaussian with optional derivative quadrature,
//! flat-top Gaussian, and constant, rendered to complex sample streams.

use crate::dac::{DacError, SampleStream};
use num_complex::Complex64;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PulseError {
    #[error("envelope spans {0} samples; at least 2 are required")]
    TooShort(usize),
    #[error("invalid envelope: {0}")]
    BadEnvelope(String),
    #[error("amplitude must lie in [0, 1], got {0}")]
    BadAmplitude(f64),
    #[error("sample {index} reaches magnitude {magnitude:.6} above full scale")]
    FullScaleOverflow { index: usize, magnitude: f64 },
    #[error(transparent)]
    Dac(#[from] DacError),
}

/// Complex baseband envelope shape. All envelopes start and end at exactly
/// zero (truncated Gaussians are baseline-subtracted) so pulse edges carry no
/// step.
#[derive(Debug, Clone, PartialEq)]
pub enum Envelope {
    Gaussian {
        sigma_s: f64,
        length_s: f64,
    },
    /// Gaussian with derivative quadrature `Q(t) = beta * dE/dt` for leakage
    /// suppression. `beta_s` is in seconds; the derivative is analytic.
    DragGaussian {
        sigma_s: f64,
        length_s: f64,
        beta_s: f64,
    },
    /// Gaussian rise over 2 sigma, flat top, Gaussian fall over 2 sigma.
    FlatTopGaussian {
        sigma_s: f64,
        flat_s: f64,
    },
    Constant {
        length_s: f64,
    },
}

impl Envelope {
    pub fn duration_s(&self) -> f64 {
        match *self {
            Envelope::Gaussian { length_s, .. } => length_s,
            Envelope::DragGaussian { length_s, .. } => length_s,
            Envelope::FlatTopGaussian { sigma_s, flat_s } => 4.0 * sigma_s + flat_s,
            Envelope::Constant { length_s } => length_s,
        }
    }

    fn validate(&self) -> Result<(), PulseError> {
        let bad = |msg: &str| Err(PulseError::BadEnvelope(msg.to_string()));
        match *self {
            Envelope::Gaussian { sigma_s, length_s } => {
                if sigma_s <= 0.0 || length_s <= 0.0 {
                    return bad("sigma and length must be positive");
                }
            }
            Envelope::DragGaussian { sigma_s, length_s, beta_s } => {
                if sigma_s <= 0.0 || length_s <= 0.0 {
                    return bad("sigma and length must be positive");
                }
                if !beta_s.is_finite() {
                    return bad("beta must be finite");
                }
            }
            Envelope::FlatTopGaussian { sigma_s, flat_s } => {
                if sigma_s <= 0.0 {
                    return bad("sigma must be positive");
                }
                if flat_s < 0.0 {
                    return bad("flat length must be non-negative");
                }
            }
            Envelope::Constant { length_s } => {
                if length_s <= 0.0 {
                    return bad("length must be positive");
                }
            }
        }
        Ok(())
    }

    /// Continuous-time envelope value at `t` seconds from the pulse start.
    /// Zero outside `[0, duration]`.
    pub fn value(&self, t: f64) -> Complex64 {
        let dur = self.duration_s();
        if t < 0.0 || t > dur {
            return Complex64::new(0.0, 0.0);
        }
        match *self {
            Envelope::Constant { .. } => Complex64::new(1.0, 0.0),
            Envelope::Gaussian { sigma_s, length_s } => {
                Complex64::new(truncated_gaussian(t, length_s / 2.0, sigma_s, length_s / 2.0), 0.0)
            }
            Envelope::DragGaussian { sigma_s, length_s, beta_s } => {
                let tc = length_s / 2.0;
                let e = truncated_gaussian(t, tc, sigma_s, tc);
                let de = truncated_gaussian_derivative(t, tc, sigma_s, tc);
                Complex64::new(e, beta_s * de)
            }
            Envelope::FlatTopGaussian { sigma_s, flat_s } => {
                let rise_end = 2.0 * sigma_s;
                let fall_start = rise_end + flat_s;
                let v = if t < rise_end {
                    truncated_gaussian(t, rise_end, sigma_s, rise_end)
                } else if t <= fall_start {
                    1.0
                } else {
                    truncated_gaussian(t, fall_start, sigma_s, rise_end)
                };
                Complex64::new(v, 0.0)
            }
        }
    }
}

/// Gaussian centered at `tc`, baseline-subtracted at `half_support` from the
/// center and renormalized to unit peak, so it is exactly zero at the
/// truncation points.
fn truncated_gaussian(t: f64, tc: f64, sigma: f64, half_support: f64) -> f64 {
    let g = (-((t - tc) / sigma).powi(2) / 2.0).exp();
    let g0 = (-(half_support / sigma).powi(2) / 2.0).exp();
    (g - g0) / (1.0 - g0)
}

fn truncated_gaussian_derivative(t: f64, tc: f64, sigma: f64, half_support: f64) -> f64 {
    let g = (-((t - tc) / sigma).powi(2) / 2.0).exp();
    let g0 = (-(half_support / sigma).powi(2) / 2.0).exp();
    -(t - tc) / (sigma * sigma) * g / (1.0 - g0)
}

/// Sample the envelope at `t = k / rate_hz`, k = 0 .. round(duration * rate).
pub fn render_envelope(env: &Envelope, rate_hz: f64) -> Result<Vec<Complex64>, PulseError> {
    env.validate()?;
    if rate_hz <= 0.0 {
        return Err(PulseError::BadEnvelope(format!(
            "sample rate must be positive, got {rate_hz}"
        )));
    }
    let n = (env.duration_s() * rate_hz).round() as usize;
    if n < 2 {
        return Err(PulseError::TooShort(n));
    }
    Ok((0..n).map(|k| env.value(k as f64 / rate_hz)).collect())
}

/// A shaped drive pulse: envelope scaled to a fraction of full scale with a
/// phase and a target carrier frequency.
#[derive(Debug, Clone)]
pub struct Pulse {
    pub envelope: Envelope,
    /// Fraction of DAC full scale, in [0, 1].
    pub amplitude: f64,
    pub phase_rad: f64,
    /// Target RF carrier in Hz; carried as metadata for NCO/LO programming.
    pub freq_hz: f64,
    pub channel: String,
}

/// Bind envelope, amplitude and phase into the DAC's complex input stream.
/// The stream's carrier metadata is set from the pulse for downstream NCO
/// programming.
pub fn pulse_to_stream(p: &Pulse, data_rate_hz: f64) -> Result<SampleStream, PulseError> {
    if !(0.0..=1.0).contains(&p.amplitude) {
        return Err(PulseError::BadAmplitude(p.amplitude));
    }
    let env = render_envelope(&p.envelope, data_rate_hz)?;
    let rot = Complex64::from_polar(p.amplitude, p.phase_rad);
    let data: Vec<Complex64> = env.iter().map(|e| rot * e).collect();
    if let Some((index, magnitude)) = data
        .iter()
        .enumerate()
        .map(|(i, x)| (i, x.norm()))
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
    {
        if magnitude > 1.0 + 1e-12 {
            return Err(PulseError::FullScaleOverflow { index, magnitude });
        }
    }
    Ok(SampleStream::new(data, data_rate_hz)?.with_carrier(p.freq_hz))
}

/// Dump rendered envelope samples as `t_s,re,im` CSV rows.
pub fn write_envelope_csv<W: Write>(
    env: &Envelope,
    rate_hz: f64,
    mut w: W,
) -> Result<(), PulseError> {
    let samples = render_envelope(env, rate_hz)?;
    w.write_all(b"t_s,re,im\n")
        .map_err(|e| PulseError::BadEnvelope(e.to_string()))?;
    for (k, s) in samples.iter().enumerate() {
        writeln!(w, "{:.16e},{:.16e},{:.16e}", k as f64 / rate_hz, s.re, s.im)
            .map_err(|e| PulseError::BadEnvelope(e.to_string()))?;
    }
    Ok(())
}
