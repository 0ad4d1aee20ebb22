//! Sampled-data DAC model: reconstruction waveforms, Nyquist-zone imaging,
//! analytic output spectra and their FFT-based numerical counterpart.
//!
//! The DAC is treated as a source that converts complex data words at half
//! its update rate, mixes them with an internal NCO onto the update-rate
//! grid, and holds each converted value according to a reconstruction
//! waveform (NRZ hold, RZ half-hold, or mix-mode half-hold-then-invert).
//! The reconstruction waveform acts as a frequency-dependent attenuation
//! `R(w)` on every Nyquist-zone image of the digital spectrum.

use num_complex::Complex64;
use rustfft::FftPlanner;
use std::f64::consts::{PI, TAU};
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DacError {
    #[error("sample {index} has magnitude {magnitude} above full scale 1.0")]
    FullScaleExceeded { index: usize, magnitude: f64 },
    #[error("frequency must be finite, got {0}")]
    NonFiniteFrequency(f64),
    #[error("DAC rate must be positive, got {0}")]
    NonPositiveRate(f64),
    #[error("oversample factor must be an even integer >= 2, got {0}")]
    BadOversample(usize),
    #[error("stream is empty")]
    EmptyStream,
    #[error("baseband bin at {freq_hz} Hz is outside [0, f_s/2) = [0, {nyquist_hz}) Hz; input would alias")]
    AliasedBaseband { freq_hz: f64, nyquist_hz: f64 },
    #[error("negative frequency {0} has no Nyquist zone")]
    NegativeFrequency(f64),
    #[error("waveform must hold at least 2 samples")]
    TooShort,
    #[error("spectrum frequency grid must be strictly increasing")]
    UnsortedSpectrum,
    #[error("spectrum freqs and values length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

/// Complex digital samples at the DAC's data rate (half its update rate).
///
/// Full scale is 1.0; samples above full scale are rejected at construction
/// rather than silently clipped.
#[derive(Debug, Clone)]
pub struct SampleStream {
    pub data: Vec<Complex64>,
    /// Data rate f_s/2 in Hz (complex words enter at half the update rate).
    pub rate_hz: f64,
    /// DAC update rate f_s in Hz; always `2 * rate_hz`.
    pub dac_rate_hz: f64,
    /// Intended RF carrier for downstream NCO programming, if known.
    pub carrier_hz: Option<f64>,
}

impl SampleStream {
    pub fn new(data: Vec<Complex64>, rate_hz: f64) -> Result<Self, DacError> {
        if rate_hz <= 0.0 {
            return Err(DacError::NonPositiveRate(rate_hz));
        }
        for (index, x) in data.iter().enumerate() {
            let magnitude = x.norm();
            if magnitude > 1.0 + 1e-12 {
                return Err(DacError::FullScaleExceeded { index, magnitude });
            }
        }
        Ok(Self {
            data,
            rate_hz,
            dac_rate_hz: 2.0 * rate_hz,
            carrier_hz: None,
        })
    }

    pub fn with_carrier(mut self, carrier_hz: f64) -> Self {
        self.carrier_hz = Some(carrier_hz);
        self
    }

    pub fn duration_s(&self) -> f64 {
        self.data.len() as f64 / self.rate_hz
    }
}

/// Real-valued converter words on the f_s update grid, after NCO mixing.
#[derive(Debug, Clone)]
pub struct DacStream {
    pub samples: Vec<f64>,
    pub dac_rate_hz: f64,
}

/// Inter-sample output shape of the converter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReconstructionMode {
    /// Zero-order hold over the full update period.
    Nrz,
    /// Hold for half the period, then return to zero.
    Rz,
    /// Hold for half the period, then invert; boosts the 2nd/3rd zones.
    #[default]
    Mix,
}

/// Oversampled real voltage trace, the reconstructed analog output.
#[derive(Debug, Clone)]
pub struct AnalogWaveform {
    pub samples: Vec<f64>,
    pub rate_hz: f64,
    pub t0_s: f64,
}

impl AnalogWaveform {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.rate_hz
    }
}

/// One-sided spectrum on a strictly increasing frequency grid.
///
/// Values follow the peak-amplitude convention: a real waveform
/// `A cos(2 pi f t + phi)` appears as a single entry `A e^{i phi}` at `+f`,
/// so a full-scale sine reads 0 dBFS against `ref_level = 1.0`.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub freqs_hz: Vec<f64>,
    pub values: Vec<Complex64>,
    /// Full-scale reference amplitude for dB conversion.
    pub ref_level: f64,
}

/// Floor used when a bin magnitude is exactly zero, to keep CSV output finite.
pub const DBFS_FLOOR: f64 = -400.0;

impl Spectrum {
    pub fn new(freqs_hz: Vec<f64>, values: Vec<Complex64>, ref_level: f64) -> Result<Self, DacError> {
        if freqs_hz.len() != values.len() {
            return Err(DacError::LengthMismatch(freqs_hz.len(), values.len()));
        }
        if freqs_hz.windows(2).any(|w| w[1] <= w[0]) {
            return Err(DacError::UnsortedSpectrum);
        }
        Ok(Self { freqs_hz, values, ref_level })
    }

    pub fn len(&self) -> usize {
        self.freqs_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs_hz.is_empty()
    }

    /// Index of the grid point closest to `freq_hz`.
    pub fn bin_nearest(&self, freq_hz: f64) -> usize {
        match self
            .freqs_hz
            .binary_search_by(|f| f.partial_cmp(&freq_hz).unwrap())
        {
            Ok(i) => i,
            Err(i) => {
                if i == 0 {
                    0
                } else if i >= self.len() {
                    self.len() - 1
                } else if (self.freqs_hz[i] - freq_hz).abs() < (freq_hz - self.freqs_hz[i - 1]).abs() {
                    i
                } else {
                    i - 1
                }
            }
        }
    }

    pub fn magnitude_dbfs(&self, index: usize) -> f64 {
        let m = self.values[index].norm() / self.ref_level;
        if m > 0.0 {
            (20.0 * m.log10()).max(DBFS_FLOOR)
        } else {
            DBFS_FLOOR
        }
    }

    /// Index of the largest-magnitude bin.
    pub fn peak_bin(&self) -> usize {
        let mut best = 0;
        let mut best_mag = f64::NEG_INFINITY;
        for (i, v) in self.values.iter().enumerate() {
            let m = v.norm();
            if m > best_mag {
                best_mag = m;
                best = i;
            }
        }
        best
    }

    /// Write `freq_hz,magnitude_dbfs,phase_rad` rows at full (17 significant
    /// digit) precision with LF line endings.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(b"freq_hz,magnitude_dbfs,phase_rad\n")?;
        for i in 0..self.len() {
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e}",
                self.freqs_hz[i],
                self.magnitude_dbfs(i),
                self.values[i].arg()
            )?;
        }
        Ok(())
    }
}

/// Nyquist zone of a frequency: zone 1 spans DC..f_s/2, zone 2 f_s/2..f_s,
/// and so on. Even zones carry spectrally inverted images.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NyquistZone {
    pub index: u32,
    pub inverted: bool,
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Frequency response `R(w)` of the chosen reconstruction waveform at
/// `w = 2 pi freq_hz`, including the complex phase factor. Units are seconds
/// (the DC response of the NRZ hold is the update period `T`).
pub fn reconstruction_response(
    mode: ReconstructionMode,
    freq_hz: f64,
    dac_rate_hz: f64,
) -> Result<Complex64, DacError> {
    if !freq_hz.is_finite() {
        return Err(DacError::NonFiniteFrequency(freq_hz));
    }
    if dac_rate_hz <= 0.0 {
        return Err(DacError::NonPositiveRate(dac_rate_hz));
    }
    let t = 1.0 / dac_rate_hz;
    let w = TAU * freq_hz;
    let r = match mode {
        ReconstructionMode::Nrz => {
            t * sinc(w * t / 2.0) * Complex64::from_polar(1.0, -w * t / 2.0)
        }
        ReconstructionMode::Rz => {
            0.5 * t * sinc(w * t / 4.0) * Complex64::from_polar(1.0, -w * t / 4.0)
        }
        ReconstructionMode::Mix => {
            let s = sinc(w * t / 4.0);
            (w * t * t / 4.0) * s * s * Complex64::from_polar(1.0, -(w * t - PI) / 2.0)
        }
    };
    Ok(r)
}

/// Nyquist zone holding `freq_hz`. Frequencies exactly on a boundary
/// `k * f_s/2` belong to the lower zone, making the partition left-closed.
pub fn nyquist_zone(freq_hz: f64, dac_rate_hz: f64) -> Result<NyquistZone, DacError> {
    if dac_rate_hz <= 0.0 {
        return Err(DacError::NonPositiveRate(dac_rate_hz));
    }
    if freq_hz < 0.0 {
        return Err(DacError::NegativeFrequency(freq_hz));
    }
    let q = freq_hz / (dac_rate_hz / 2.0);
    let k = q.floor();
    let index = if q == k && k >= 1.0 {
        k as u32
    } else {
        k as u32 + 1
    };
    Ok(NyquistZone {
        index,
        inverted: index % 2 == 0,
    })
}

fn fft_forward(data: &mut [Complex64]) {
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(data.len()).process(data);
}

fn fft_inverse(data: &mut [Complex64]) {
    let mut planner = FftPlanner::new();
    planner.plan_fft_inverse(data.len()).process(data);
}

/// Model of the DAC datapath in front of the converter core: the complex
/// stream is brought to the update rate by ideal 2x band-limited
/// interpolation, multiplied by the NCO phasor `e^{i(2 pi f_nco t + phase)}`
/// on the f_s grid, and the real part is taken.
///
/// An NCO programmed above f_s/2 simply lands on the folded digital
/// frequency; the desired image is recovered by reconstruction in the
/// matching Nyquist zone.
pub fn nco_upconvert(
    stream: &SampleStream,
    nco_freq_hz: f64,
    phase_rad: f64,
) -> Result<DacStream, DacError> {
    if !nco_freq_hz.is_finite() {
        return Err(DacError::NonFiniteFrequency(nco_freq_hz));
    }
    if stream.data.is_empty() {
        return Err(DacError::EmptyStream);
    }
    let n = stream.data.len();
    let fs = stream.dac_rate_hz;

    // Ideal 2x interpolation in the frequency domain.
    let mut spec: Vec<Complex64> = stream.data.clone();
    fft_forward(&mut spec);
    let mut up = vec![Complex64::new(0.0, 0.0); 2 * n];
    for (k, v) in spec.iter().enumerate() {
        if 2 * k < n {
            up[k] = *v;
        } else if 2 * k == n {
            // Nyquist bin of the source grid: split between +f_n/2 and -f_n/2.
            up[k] = 0.5 * v;
            up[2 * n - k] = 0.5 * v;
        } else {
            up[k + n] = *v;
        }
    }
    fft_inverse(&mut up);
    let scale = 1.0 / n as f64;

    let cycles_per_sample = nco_freq_hz / fs;
    let samples = up
        .iter()
        .enumerate()
        .map(|(m, y)| {
            let cycles = cycles_per_sample * m as f64;
            let ph = TAU * (cycles - cycles.floor()) + phase_rad;
            (y * scale * Complex64::from_polar(1.0, ph)).re
        })
        .collect();
    Ok(DacStream {
        samples,
        dac_rate_hz: fs,
    })
}

/// Time-domain reconstruction: each converter word is held according to the
/// mode over its update period, rendered on an oversampled grid.
///
/// `oversample` must be even so the RZ/MIX mid-period transition lands on a
/// grid point.
pub fn reconstruct(
    stream: &DacStream,
    mode: ReconstructionMode,
    oversample: usize,
) -> Result<AnalogWaveform, DacError> {
    if oversample < 2 || oversample % 2 != 0 {
        return Err(DacError::BadOversample(oversample));
    }
    if stream.samples.is_empty() {
        return Err(DacError::EmptyStream);
    }
    let half = oversample / 2;
    let mut samples = Vec::with_capacity(stream.samples.len() * oversample);
    for &v in &stream.samples {
        match mode {
            ReconstructionMode::Nrz => {
                samples.extend(std::iter::repeat(v).take(oversample));
            }
            ReconstructionMode::Rz => {
                samples.extend(std::iter::repeat(v).take(half));
                samples.extend(std::iter::repeat(0.0).take(half));
            }
            ReconstructionMode::Mix => {
                samples.extend(std::iter::repeat(v).take(half));
                samples.extend(std::iter::repeat(-v).take(half));
            }
        }
    }
    Ok(AnalogWaveform {
        samples,
        rate_hz: stream.dac_rate_hz * oversample as f64,
        t0_s: 0.0,
    })
}

/// Full digital-to-analog path: NCO mixing followed by reconstruction.
pub fn synthesize(
    stream: &SampleStream,
    nco_freq_hz: f64,
    phase_rad: f64,
    mode: ReconstructionMode,
    oversample: usize,
) -> Result<AnalogWaveform, DacError> {
    let dac = nco_upconvert(stream, nco_freq_hz, phase_rad)?;
    reconstruct(&dac, mode, oversample)
}

/// Analytic DAC output spectrum: the first-zone digital spectrum is
/// replicated around every multiple of f_s up to `n_zones * f_s`, with
/// conjugate-symmetric folding below each replica (the even-zone images),
/// and each line is weighted by the reconstruction response.
///
/// `baseband` must be confined to `[0, f_s/2)`; content at or above the
/// half-rate would alias and is rejected.
pub fn output_spectrum(
    baseband: &Spectrum,
    mode: ReconstructionMode,
    dac_rate_hz: f64,
    n_zones: u32,
) -> Result<Spectrum, DacError> {
    if dac_rate_hz <= 0.0 {
        return Err(DacError::NonPositiveRate(dac_rate_hz));
    }
    let nyq = dac_rate_hz / 2.0;
    for &f in &baseband.freqs_hz {
        if !(0.0..nyq).contains(&f) {
            return Err(DacError::AliasedBaseband {
                freq_hz: f,
                nyquist_hz: nyq,
            });
        }
    }
    let t = 1.0 / dac_rate_hz;
    let mut lines: Vec<(f64, Complex64)> = Vec::new();
    for n in 0..=n_zones {
        let center = n as f64 * dac_rate_hz;
        for (&f, &x) in baseband.freqs_hz.iter().zip(&baseband.values) {
            if f == 0.0 {
                // The DC component lands on each replica center; away from
                // DC it pairs with its negative-frequency mirror.
                let weight = if n == 0 { 1.0 } else { 2.0 };
                let r = reconstruction_response(mode, center, dac_rate_hz)?;
                lines.push((center, weight * x * r / t));
            } else {
                let r_up = reconstruction_response(mode, center + f, dac_rate_hz)?;
                lines.push((center + f, x * r_up / t));
                if n >= 1 {
                    let r_dn = reconstruction_response(mode, center - f, dac_rate_hz)?;
                    lines.push((center - f, x.conj() * r_dn / t));
                }
            }
        }
    }
    lines.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let (freqs_hz, values) = lines.into_iter().unzip();
    Ok(Spectrum {
        freqs_hz,
        values,
        ref_level: baseband.ref_level,
    })
}

/// FFT analysis window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Window {
    #[default]
    Rect,
    Hann,
    Blackman,
}

impl Window {
    fn coefficient(self, m: usize, n: usize) -> f64 {
        let x = TAU * m as f64 / n as f64;
        match self {
            Window::Rect => 1.0,
            Window::Hann => 0.5 - 0.5 * x.cos(),
            Window::Blackman => 0.42 - 0.5 * x.cos() + 0.08 * (2.0 * x).cos(),
        }
    }
}

/// One-sided windowed DFT of a real waveform, amplitude-corrected for the
/// window's coherent gain so an on-bin full-scale tone reads 0 dBFS.
pub fn fft_spectrum(waveform: &AnalogWaveform, window: Window) -> Result<Spectrum, DacError> {
    let n = waveform.samples.len();
    if n < 2 {
        return Err(DacError::TooShort);
    }
    let mut acc = 0.0;
    let mut buf: Vec<Complex64> = (0..n)
        .map(|m| {
            let w = window.coefficient(m, n);
            acc += w;
            Complex64::new(waveform.samples[m] * w, 0.0)
        })
        .collect();
    fft_forward(&mut buf);
    let gain = acc; // sum of window coefficients = N * coherent gain
    let half = n / 2;
    let mut freqs_hz = Vec::with_capacity(half + 1);
    let mut values = Vec::with_capacity(half + 1);
    for k in 0..=half {
        let paired = k != 0 && !(n % 2 == 0 && k == half);
        let scale = if paired { 2.0 } else { 1.0 };
        freqs_hz.push(k as f64 * waveform.rate_hz / n as f64);
        values.push(buf[k] * (scale / gain));
    }
    Ok(Spectrum {
        freqs_hz,
        values,
        ref_level: 1.0,
    })
}

/// One-sided spectrum of the digital words themselves (rect window), suitable
/// as the `baseband` input of [`output_spectrum`]. The Nyquist bin at exactly
/// f_s/2 sits on a zone boundary and is excluded from the grid.
pub fn stream_spectrum(stream: &DacStream) -> Result<Spectrum, DacError> {
    let n = stream.samples.len();
    if n < 2 {
        return Err(DacError::TooShort);
    }
    let mut buf: Vec<Complex64> = stream
        .samples
        .iter()
        .map(|&x| Complex64::new(x, 0.0))
        .collect();
    fft_forward(&mut buf);
    let last = if n % 2 == 0 { n / 2 - 1 } else { n / 2 };
    let mut freqs_hz = Vec::with_capacity(last + 1);
    let mut values = Vec::with_capacity(last + 1);
    for k in 0..=last {
        let scale = if k == 0 { 1.0 } else { 2.0 };
        freqs_hz.push(k as f64 * stream.dac_rate_hz / n as f64);
        values.push(buf[k] * (scale / n as f64));
    }
    Ok(Spectrum {
        freqs_hz,
        values,
        ref_level: 1.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const FS: f64 = 5e9;

    #[test]
    fn response_at_dc() {
        let t = 1.0 / FS;
        let nrz = reconstruction_response(ReconstructionMode::Nrz, 0.0, FS).unwrap();
        assert_relative_eq!(nrz.re, t, max_relative = 1e-15);
        assert!(nrz.im.abs() < 1e-30);
        let rz = reconstruction_response(ReconstructionMode::Rz, 0.0, FS).unwrap();
        assert_relative_eq!(rz.re, t / 2.0, max_relative = 1e-15);
        let mix = reconstruction_response(ReconstructionMode::Mix, 0.0, FS).unwrap();
        assert!(mix.norm() < 1e-30);
    }

    #[test]
    fn response_at_zone_boundaries() {
        let t = 1.0 / FS;
        // |R_NRZ(f_s/2)| = 2T/pi, about -3.92 dB below DC.
        let nrz = reconstruction_response(ReconstructionMode::Nrz, FS / 2.0, FS).unwrap();
        assert_relative_eq!(nrz.norm() / t, 2.0 / PI, max_relative = 1e-12);
        let db = 20.0 * (nrz.norm() / t).log10();
        assert_relative_eq!(db, -3.9224, epsilon = 1e-3);
        // Mix mode matches NRZ at f_s/2 and 3 f_s/2 and at f_s equals 2T/pi.
        let mix_half = reconstruction_response(ReconstructionMode::Mix, FS / 2.0, FS).unwrap();
        assert_relative_eq!(mix_half.norm(), nrz.norm(), max_relative = 1e-12);
        let mix_fs = reconstruction_response(ReconstructionMode::Mix, FS, FS).unwrap();
        assert_relative_eq!(mix_fs.norm() / t, 2.0 / PI, max_relative = 1e-12);
        let nrz_3h = reconstruction_response(ReconstructionMode::Nrz, 1.5 * FS, FS).unwrap();
        let mix_3h = reconstruction_response(ReconstructionMode::Mix, 1.5 * FS, FS).unwrap();
        assert_relative_eq!(mix_3h.norm(), nrz_3h.norm(), max_relative = 1e-12);
    }

    #[test]
    fn mix_beats_nrz_strictly_inside_zones_2_and_3() {
        for i in 1..200 {
            let f = FS / 2.0 + (FS * i as f64 / 200.0);
            if f >= 1.5 * FS {
                break;
            }
            let nrz = reconstruction_response(ReconstructionMode::Nrz, f, FS).unwrap();
            let mix = reconstruction_response(ReconstructionMode::Mix, f, FS).unwrap();
            assert!(
                mix.norm() > nrz.norm(),
                "expected |R_mix| > |R_nrz| at {f} Hz"
            );
        }
    }

    #[test]
    fn nulls() {
        for n in 1..=4 {
            let f = n as f64 * FS;
            let nrz = reconstruction_response(ReconstructionMode::Nrz, f, FS).unwrap();
            assert!(nrz.norm() * FS < 1e-12, "NRZ null at {n} f_s");
        }
        let mix = reconstruction_response(ReconstructionMode::Mix, 2.0 * FS, FS).unwrap();
        assert!(mix.norm() * FS < 1e-12, "mix null at 2 f_s");
    }

    #[test]
    fn reconstruct_shapes() {
        let dac = DacStream {
            samples: vec![1.0, 0.0, 0.0],
            dac_rate_hz: FS,
        };
        let rz = reconstruct(&dac, ReconstructionMode::Rz, 4).unwrap();
        assert_eq!(rz.samples[..4], [1.0, 1.0, 0.0, 0.0]);
        let mix = reconstruct(&dac, ReconstructionMode::Mix, 4).unwrap();
        assert_eq!(mix.samples[..4], [1.0, 1.0, -1.0, -1.0]);
        let all_one = DacStream {
            samples: vec![1.0; 8],
            dac_rate_hz: FS,
        };
        let nrz = reconstruct(&all_one, ReconstructionMode::Nrz, 2).unwrap();
        assert!(nrz.samples.iter().all(|&v| v == 1.0));
        assert_eq!(nrz.rate_hz, 2.0 * FS);
        assert!(matches!(
            reconstruct(&dac, ReconstructionMode::Rz, 3),
            Err(DacError::BadOversample(3))
        ));
        assert!(matches!(
            reconstruct(
                &DacStream { samples: vec![], dac_rate_hz: FS },
                ReconstructionMode::Nrz,
                2
            ),
            Err(DacError::EmptyStream)
        ));
    }

    #[test]
    fn nco_constant_baseband_is_sampled_cosine() {
        let n = 256;
        let stream = SampleStream::new(vec![Complex64::new(1.0, 0.0); n], FS / 2.0).unwrap();
        let dac = nco_upconvert(&stream, 1e9, 0.0).unwrap();
        assert_eq!(dac.samples.len(), 2 * n);
        for (m, &v) in dac.samples.iter().enumerate() {
            let expect = (TAU * 1e9 * m as f64 / FS).cos();
            assert_relative_eq!(v, expect, epsilon = 1e-9);
        }
    }

    #[test]
    fn nco_low_sideband_lands_at_difference_frequency() {
        // Baseband tone at -100 MHz on a 6.25 GHz NCO folds to the digital
        // tone at 6.15 GHz - f_s = 1.15 GHz.
        let n = 1000; // 2000 DAC samples: -100 MHz is exactly 80 cycles
        let rate = FS / 2.0;
        let data: Vec<Complex64> = (0..n)
            .map(|k| Complex64::from_polar(1.0, -TAU * 100e6 * k as f64 / rate))
            .collect();
        let stream = SampleStream::new(data, rate).unwrap();
        let dac = nco_upconvert(&stream, 6.25e9, 0.0).unwrap();
        for (m, &v) in dac.samples.iter().enumerate() {
            let expect = (TAU * 6.15e9 * m as f64 / FS).cos();
            assert_relative_eq!(v, expect, epsilon = 1e-6);
        }
    }

    #[test]
    fn zone_classification() {
        let z = nyquist_zone(6.5138e9, FS).unwrap();
        assert_eq!(z, NyquistZone { index: 3, inverted: false });
        let z = nyquist_zone(2.4e9, FS).unwrap();
        assert_eq!(z, NyquistZone { index: 1, inverted: false });
        let z = nyquist_zone(3.95e9, FS).unwrap();
        assert_eq!(z, NyquistZone { index: 2, inverted: true });
        // Boundaries belong to the lower zone.
        assert_eq!(nyquist_zone(2.5e9, FS).unwrap().index, 1);
        assert_eq!(nyquist_zone(5.0e9, FS).unwrap().index, 2);
        assert_eq!(nyquist_zone(0.0, FS).unwrap().index, 1);
        assert!(nyquist_zone(-1.0, FS).is_err());
    }

    #[test]
    fn fft_pure_cosine_single_bin() {
        let n = 512;
        let rate = 1e9;
        let f0 = 16.0 * rate / n as f64;
        let samples = (0..n).map(|m| (TAU * f0 * m as f64 / rate).cos()).collect();
        let spec = fft_spectrum(&AnalogWaveform { samples, rate_hz: rate, t0_s: 0.0 }, Window::Rect)
            .unwrap();
        let peak = spec.bin_nearest(f0);
        assert_relative_eq!(spec.values[peak].norm(), 1.0, max_relative = 1e-12);
        for i in 0..spec.len() {
            if i != peak {
                assert!(spec.values[i].norm() < 1e-12);
            }
        }
        // Window corrections keep the on-bin amplitude exact.
        for win in [Window::Hann, Window::Blackman] {
            let samples: Vec<f64> = (0..n).map(|m| (TAU * f0 * m as f64 / rate).cos()).collect();
            let s = fft_spectrum(&AnalogWaveform { samples, rate_hz: rate, t0_s: 0.0 }, win).unwrap();
            assert_relative_eq!(s.values[peak].norm(), 1.0, max_relative = 1e-9);
        }
    }

    #[test]
    fn fft_zero_waveform_is_zero() {
        let w = AnalogWaveform { samples: vec![0.0; 64], rate_hz: 1e9, t0_s: 0.0 };
        let spec = fft_spectrum(&w, Window::Rect).unwrap();
        assert!(spec.values.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn parseval_rect_window() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = 1024;
        let samples: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let time_energy: f64 = samples.iter().map(|x| x * x).sum();
        let mut buf: Vec<Complex64> = samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        fft_forward(&mut buf);
        let freq_energy: f64 = buf.iter().map(|v| v.norm_sqr()).sum::<f64>() / n as f64;
        assert_relative_eq!(time_energy, freq_energy, max_relative = 1e-9);
    }

    #[test]
    fn dc_only_spectrum_images() {
        let base = Spectrum::new(vec![0.0], vec![Complex64::new(0.5, 0.0)], 1.0).unwrap();
        // NRZ: the hold nulls every replica except the DC line itself.
        let nrz = output_spectrum(&base, ReconstructionMode::Nrz, FS, 2).unwrap();
        assert_relative_eq!(nrz.values[0].norm(), 0.5, max_relative = 1e-12);
        for i in 1..nrz.len() {
            assert!(nrz.values[i].norm() < 1e-12);
        }
        // Mix mode nulls the in-band DC line; the held-then-inverted output is
        // a square wave whose images sit at odd multiples of f_s.
        let mix = output_spectrum(&base, ReconstructionMode::Mix, FS, 2).unwrap();
        assert!(mix.values[0].norm() < 1e-15);
        let at_fs = mix.bin_nearest(FS);
        assert_relative_eq!(mix.values[at_fs].norm(), 0.5 * 4.0 / PI, max_relative = 1e-12);
        let at_2fs = mix.bin_nearest(2.0 * FS);
        assert!(mix.values[at_2fs].norm() < 1e-12);
    }

    #[test]
    fn output_spectrum_rejects_aliased_input() {
        let base = Spectrum::new(vec![2.6e9], vec![Complex64::new(1.0, 0.0)], 1.0).unwrap();
        assert!(matches!(
            output_spectrum(&base, ReconstructionMode::Nrz, FS, 2),
            Err(DacError::AliasedBaseband { .. })
        ));
    }

    #[test]
    fn sample_stream_rejects_overfull_scale() {
        let err = SampleStream::new(vec![Complex64::new(1.5, 0.0)], 2.5e9);
        assert!(matches!(err, Err(DacError::FullScaleExceeded { index: 0, .. })));
    }

    /// Analytic construction against the FFT oracle: random digital streams,
    /// all three modes, every bin above -80 dBFS within 0.1 dB.
    #[test]
    fn analytic_matches_fft_oracle_on_random_streams() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let n_dac = 64;
        let oversample = 64;
        for mode in [
            ReconstructionMode::Nrz,
            ReconstructionMode::Rz,
            ReconstructionMode::Mix,
        ] {
            let dac = DacStream {
                samples: (0..n_dac).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                dac_rate_hz: FS,
            };
            let analytic =
                output_spectrum(&stream_spectrum(&dac).unwrap(), mode, FS, 2).unwrap();
            let wave = reconstruct(&dac, mode, oversample).unwrap();
            let numeric = fft_spectrum(&wave, Window::Rect).unwrap();
            let mut checked = 0;
            for i in 0..analytic.len() {
                let db = analytic.magnitude_dbfs(i);
                if db <= -80.0 {
                    continue;
                }
                let j = numeric.bin_nearest(analytic.freqs_hz[i]);
                assert!(
                    (numeric.freqs_hz[j] - analytic.freqs_hz[i]).abs() < 1e-3,
                    "grids misaligned"
                );
                let diff = (numeric.magnitude_dbfs(j) - db).abs();
                assert!(
                    diff < 0.1,
                    "{mode:?}: {:.3} dB mismatch at {:.3} GHz (analytic {db:.2} dBFS)",
                    diff,
                    analytic.freqs_hz[i] / 1e9
                );
                checked += 1;
            }
            assert!(checked > 20, "oracle comparison exercised too few bins");
        }
    }

    /// A baseband tone produces analog lines only at |n f_s +- f0|.
    #[test]
    fn image_bookkeeping_for_single_tone() {
        let n = 200; // digital tone at bin 42: f0 = 42/200 * 5 GHz = 1.05 GHz
        let f0 = 42.0 * FS / n as f64;
        let dac = DacStream {
            samples: (0..n).map(|m| 0.9 * (TAU * f0 * m as f64 / FS).cos()).collect(),
            dac_rate_hz: FS,
        };
        let wave = reconstruct(&dac, ReconstructionMode::Nrz, 64).unwrap();
        let spec = fft_spectrum(&wave, Window::Rect).unwrap();
        let images: Vec<f64> = vec![f0, FS - f0, FS + f0, 2.0 * FS - f0, 2.0 * FS + f0];
        for i in 0..spec.len() {
            let f = spec.freqs_hz[i];
            if f > 2.0 * FS + f0 + 1.0 {
                break;
            }
            let is_image = images.iter().any(|&g| (f - g).abs() < 1.0);
            if !is_image {
                assert!(
                    spec.magnitude_dbfs(i) < -80.0,
                    "unexpected line at {f} Hz: {} dBFS",
                    spec.magnitude_dbfs(i)
                );
            }
        }
    }

    #[test]
    fn csv_export_format() {
        let s = Spectrum::new(
            vec![1.0e9, 2.0e9],
            vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.5)],
            1.0,
        )
        .unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "freq_hz,magnitude_dbfs,phase_rad");
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row.len(), 3);
        assert!(row[0].parse::<f64>().is_ok());
        assert!(!text.contains('\r'));
    }
}
