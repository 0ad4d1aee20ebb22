//! Software emulation of FPGA waveform-sequencer logic: instruction-driven
//! playback of stored waveforms through phase-coherent NCOs, with marker
//! outputs and counted loops.
//!
//! # Assembly grammar
//!
//! One instruction or directive per line; `#` starts a comment. Directives:
//!
//! ```text
//! rate <hz>              data rate of the output stream (required)
//! ncos <n>               number of NCOs (default 1; named nco0, nco1, ...)
//! wave <name> <csv>      load waveform samples from a CSV file, either
//!                        `re,im` or `t_s,re,im` columns, header optional
//! label <name>           mark the next instruction as a jump target
//! ```
//!
//! Instructions:
//!
//! ```text
//! play <wave> <nco>      emit the waveform mixed with the NCO phasor
//! setfreq <nco> <hz>     program the NCO frequency
//! setphase <nco> <rad>   set the phase accumulator
//! shiftphase <nco> <rad> add to the phase accumulator
//! wait <n>               emit n zero samples
//! marker <ch> <0|1>      set a marker level, effective from the next sample
//! repeat <count> <label> run the span since <label> `count` times in total;
//!                        only backward jumps are allowed
//! halt                   stop (must terminate the program)
//! ```
//!
//! Control instructions cost zero output samples; every NCO phase
//! accumulator advances by `2 pi f / rate` per emitted sample, continuously
//! across instructions and loop iterations.

use crate::dac::SampleStream;
use num_complex::Complex64;
use std::collections::HashMap;
use std::f64::consts::TAU;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
#[error("line {line}: {message}")]
pub struct AssembleError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("program exceeded the {max_samples}-sample runaway guard")]
    Runaway { max_samples: usize },
    #[error("instruction {pc} references waveform {wf} out of range")]
    BadWaveform { pc: usize, wf: usize },
    #[error("instruction {pc} references NCO {nco} out of range")]
    BadNco { pc: usize, nco: usize },
    #[error(transparent)]
    Stream(#[from] crate::dac::DacError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Instruction {
    Play { wf: usize, nco: usize },
    SetFreq { nco: usize, freq_hz: f64 },
    SetPhase { nco: usize, phase_rad: f64 },
    ShiftPhase { nco: usize, delta_rad: f64 },
    Wait { n_samples: usize },
    Marker { ch: usize, level: bool },
    Repeat { count: u32, target: usize },
    Halt,
}

/// NCO state: frequency plus a phase accumulator kept in cycles with
/// compensated summation, so phase stays exact over billion-sample runs.
#[derive(Debug, Clone, Default)]
pub struct NcoState {
    pub freq_hz: f64,
    cycles: f64,
    comp: f64,
}

impl NcoState {
    /// Current accumulator value in radians, wrapped to [0, 2 pi).
    pub fn phase_rad(&self) -> f64 {
        TAU * self.cycles
    }

    pub fn set_phase(&mut self, phase_rad: f64) {
        self.cycles = (phase_rad / TAU).rem_euclid(1.0);
        self.comp = 0.0;
    }

    fn add_cycles(&mut self, dc: f64) {
        // Kahan step; the wrap subtracts an integer, which is exact.
        let y = dc - self.comp;
        let t = self.cycles + y;
        self.comp = (t - self.cycles) - y;
        self.cycles = t;
        let w = self.cycles.floor();
        if w != 0.0 {
            self.cycles -= w;
        }
    }

    pub fn shift_phase(&mut self, delta_rad: f64) {
        self.add_cycles(delta_rad / TAU);
        self.cycles = self.cycles.rem_euclid(1.0);
    }

    /// Advance by one output sample at the given data rate.
    pub fn tick(&mut self, data_rate_hz: f64) {
        self.add_cycles(self.freq_hz / data_rate_hz);
    }
}

#[derive(Debug, Clone)]
pub struct Program {
    pub instructions: Vec<Instruction>,
    pub waveforms: Vec<Vec<Complex64>>,
    pub waveform_names: Vec<String>,
    pub n_ncos: usize,
    pub n_markers: usize,
    pub data_rate_hz: f64,
}

impl Program {
    /// Static validation used by [`assemble`] and available to programs built
    /// in code: reference ranges, backward-only repeats, trailing halt.
    pub fn validate(&self) -> Result<(), String> {
        if self.data_rate_hz <= 0.0 {
            return Err("data rate must be positive".into());
        }
        match self.instructions.last() {
            Some(Instruction::Halt) => {}
            _ => return Err("program must terminate with halt".into()),
        }
        for (pc, inst) in self.instructions.iter().enumerate() {
            match *inst {
                Instruction::Play { wf, nco } => {
                    if wf >= self.waveforms.len() {
                        return Err(format!("instruction {pc}: waveform {wf} undefined"));
                    }
                    if nco >= self.n_ncos {
                        return Err(format!("instruction {pc}: NCO {nco} undefined"));
                    }
                }
                Instruction::SetFreq { nco, .. }
                | Instruction::SetPhase { nco, .. }
                | Instruction::ShiftPhase { nco, .. } => {
                    if nco >= self.n_ncos {
                        return Err(format!("instruction {pc}: NCO {nco} undefined"));
                    }
                }
                Instruction::Marker { ch, .. } => {
                    if ch >= self.n_markers {
                        return Err(format!("instruction {pc}: marker channel {ch} undefined"));
                    }
                }
                Instruction::Repeat { count, target } => {
                    if count == 0 {
                        return Err(format!("instruction {pc}: repeat count must be >= 1"));
                    }
                    if target >= pc {
                        return Err(format!(
                            "instruction {pc}: repeat target {target} is not a backward jump"
                        ));
                    }
                }
                Instruction::Wait { .. } | Instruction::Halt => {}
            }
        }
        Ok(())
    }
}

fn parse_nco(token: &str) -> Option<usize> {
    token.strip_prefix("nco")?.parse().ok()
}

/// Load waveform samples from a CSV file with `re,im` or `t_s,re,im`
/// columns. A non-numeric first row is treated as a header.
pub fn load_waveform_csv(path: &Path) -> Result<Vec<Complex64>, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read waveform file {}: {e}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: Option<Vec<f64>> = cols.iter().map(|c| c.parse().ok()).collect();
        let Some(vals) = parsed else {
            if i == 0 {
                continue; // header row
            }
            return Err(format!("{}:{}: non-numeric row", path.display(), i + 1));
        };
        let (re, im) = match vals.len() {
            2 => (vals[0], vals[1]),
            3 => (vals[1], vals[2]),
            n => {
                return Err(format!(
                    "{}:{}: expected 2 or 3 columns, got {n}",
                    path.display(),
                    i + 1
                ))
            }
        };
        out.push(Complex64::new(re, im));
    }
    if out.is_empty() {
        return Err(format!("{}: no samples", path.display()));
    }
    Ok(out)
}

/// Parse and statically validate a textual program. Waveform file paths are
/// resolved relative to `base_dir`.
pub fn assemble(source: &str, base_dir: &Path) -> Result<Program, AssembleError> {
    let err = |line: usize, message: String| AssembleError { line, message };
    let mut rate: Option<f64> = None;
    let mut n_ncos = 1usize;
    let mut waveforms: Vec<Vec<Complex64>> = Vec::new();
    let mut waveform_names: Vec<String> = Vec::new();
    let mut wave_index: HashMap<String, usize> = HashMap::new();
    let mut labels: HashMap<String, usize> = HashMap::new();
    let mut instructions: Vec<Instruction> = Vec::new();
    let mut n_markers = 0usize;

    for (lineno, raw) in source.lines().enumerate() {
        let line = lineno + 1;
        let text = raw.split('#').next().unwrap_or("").trim();
        if text.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = text.split_whitespace().collect();
        let op = tokens[0].to_ascii_lowercase();
        let arity = |n: usize| -> Result<(), AssembleError> {
            if tokens.len() != n + 1 {
                Err(err(line, format!("{op} expects {n} operand(s)")))
            } else {
                Ok(())
            }
        };
        let num = |tok: &str| -> Result<f64, AssembleError> {
            tok.parse()
                .map_err(|_| err(line, format!("cannot parse number `{tok}`")))
        };
        let nco_operand = |tok: &str| -> Result<usize, AssembleError> {
            let idx = parse_nco(tok)
                .ok_or_else(|| err(line, format!("`{tok}` is not an NCO name (ncoK)")))?;
            if idx >= n_ncos {
                return Err(err(line, format!("NCO `{tok}` out of range (ncos = {n_ncos})")));
            }
            Ok(idx)
        };

        match op.as_str() {
            "rate" => {
                arity(1)?;
                rate = Some(num(tokens[1])?);
            }
            "ncos" => {
                arity(1)?;
                n_ncos = num(tokens[1])? as usize;
                if n_ncos == 0 {
                    return Err(err(line, "at least one NCO is required".into()));
                }
            }
            "wave" => {
                arity(2)?;
                let name = tokens[1].to_string();
                if wave_index.contains_key(&name) {
                    return Err(err(line, format!("waveform `{name}` already defined")));
                }
                let samples = load_waveform_csv(&base_dir.join(tokens[2]))
                    .map_err(|m| err(line, m))?;
                if let Some(bad) = samples.iter().position(|s| s.norm() > 1.0 + 1e-12) {
                    return Err(err(
                        line,
                        format!("waveform `{name}` sample {bad} exceeds full scale"),
                    ));
                }
                wave_index.insert(name.clone(), waveforms.len());
                waveform_names.push(name);
                waveforms.push(samples);
            }
            "label" => {
                arity(1)?;
                let name = tokens[1].to_string();
                if labels.contains_key(&name) {
                    return Err(err(line, format!("label `{name}` already defined")));
                }
                labels.insert(name, instructions.len());
            }
            "play" => {
                arity(2)?;
                let wf = *wave_index
                    .get(tokens[1])
                    .ok_or_else(|| err(line, format!("waveform `{}` undefined", tokens[1])))?;
                let nco = nco_operand(tokens[2])?;
                instructions.push(Instruction::Play { wf, nco });
            }
            "setfreq" => {
                arity(2)?;
                let nco = nco_operand(tokens[1])?;
                instructions.push(Instruction::SetFreq { nco, freq_hz: num(tokens[2])? });
            }
            "setphase" => {
                arity(2)?;
                let nco = nco_operand(tokens[1])?;
                instructions.push(Instruction::SetPhase { nco, phase_rad: num(tokens[2])? });
            }
            "shiftphase" => {
                arity(2)?;
                let nco = nco_operand(tokens[1])?;
                instructions.push(Instruction::ShiftPhase { nco, delta_rad: num(tokens[2])? });
            }
            "wait" => {
                arity(1)?;
                instructions.push(Instruction::Wait { n_samples: num(tokens[1])? as usize });
            }
            "marker" => {
                arity(2)?;
                let ch = num(tokens[1])? as usize;
                let level = match tokens[2] {
                    "0" => false,
                    "1" => true,
                    other => {
                        return Err(err(line, format!("marker level must be 0 or 1, got `{other}`")))
                    }
                };
                n_markers = n_markers.max(ch + 1);
                instructions.push(Instruction::Marker { ch, level });
            }
            "repeat" => {
                arity(2)?;
                let count = num(tokens[1])? as u32;
                if count == 0 {
                    return Err(err(line, "repeat count must be >= 1".into()));
                }
                let target = *labels.get(tokens[2]).ok_or_else(|| {
                    err(
                        line,
                        format!(
                            "label `{}` undefined here; only backward jumps are allowed",
                            tokens[2]
                        ),
                    )
                })?;
                instructions.push(Instruction::Repeat { count, target });
            }
            "halt" => {
                arity(0)?;
                instructions.push(Instruction::Halt);
            }
            other => return Err(err(line, format!("unknown instruction `{other}`"))),
        }
    }

    let data_rate_hz = rate.ok_or_else(|| err(0, "missing `rate` directive".into()))?;
    let program = Program {
        instructions,
        waveforms,
        waveform_names,
        n_ncos,
        n_markers,
        data_rate_hz,
    };
    program.validate().map_err(|m| err(0, m))?;
    Ok(program)
}

/// Execution result: the complex output stream and per-channel,
/// sample-aligned marker timelines.
#[derive(Debug, Clone)]
pub struct ExecOutput {
    pub stream: SampleStream,
    pub markers: Vec<Vec<bool>>,
}

/// Run a validated program to completion, emitting at most `max_samples`.
pub fn execute(p: &Program, max_samples: usize) -> Result<ExecOutput, ExecError> {
    let mut ncos = vec![NcoState::default(); p.n_ncos];
    let mut out: Vec<Complex64> = Vec::new();
    let mut markers: Vec<Vec<bool>> = vec![Vec::new(); p.n_markers];
    let mut levels = vec![false; p.n_markers];
    let mut hits = vec![0u32; p.instructions.len()];
    let mut pc = 0usize;

    macro_rules! emit {
        ($value:expr) => {{
            if out.len() >= max_samples {
                return Err(ExecError::Runaway { max_samples });
            }
            out.push($value);
            for (ch, lvl) in levels.iter().enumerate() {
                markers[ch].push(*lvl);
            }
            for nco in ncos.iter_mut() {
                nco.tick(p.data_rate_hz);
            }
        }};
    }

    while pc < p.instructions.len() {
        match p.instructions[pc] {
            Instruction::Play { wf, nco } => {
                let wave = p.waveforms.get(wf).ok_or(ExecError::BadWaveform { pc, wf })?;
                if nco >= ncos.len() {
                    return Err(ExecError::BadNco { pc, nco });
                }
                for k in 0..wave.len() {
                    let phasor = Complex64::from_polar(1.0, ncos[nco].phase_rad());
                    emit!(wave[k] * phasor);
                }
            }
            Instruction::Wait { n_samples } => {
                for _ in 0..n_samples {
                    emit!(Complex64::new(0.0, 0.0));
                }
            }
            Instruction::SetFreq { nco, freq_hz } => ncos[nco].freq_hz = freq_hz,
            Instruction::SetPhase { nco, phase_rad } => ncos[nco].set_phase(phase_rad),
            Instruction::ShiftPhase { nco, delta_rad } => ncos[nco].shift_phase(delta_rad),
            Instruction::Marker { ch, level } => levels[ch] = level,
            Instruction::Repeat { count, target } => {
                hits[pc] += 1;
                if hits[pc] < count {
                    pc = target;
                    continue;
                }
                hits[pc] = 0;
            }
            Instruction::Halt => break,
        }
        pc += 1;
    }

    let stream = SampleStream::new(out, p.data_rate_hz)?;
    Ok(ExecOutput { stream, markers })
}

/// Export marker timelines as `sample_index,channel,level` rows, one row per
/// level change (plus the initial level of each channel at sample 0).
pub fn write_marker_csv<W: Write>(markers: &[Vec<bool>], mut w: W) -> std::io::Result<()> {
    w.write_all(b"sample_index,channel,level\n")?;
    for (ch, timeline) in markers.iter().enumerate() {
        let mut last = None;
        for (i, &level) in timeline.iter().enumerate() {
            if last != Some(level) {
                writeln!(w, "{i},{ch},{}", level as u8)?;
                last = Some(level);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::path::PathBuf;

    fn tone_wave(n: usize) -> Vec<Complex64> {
        (0..n).map(|_| Complex64::new(1.0, 0.0)).collect()
    }

    fn base_program() -> Program {
        Program {
            instructions: vec![Instruction::Play { wf: 0, nco: 0 }, Instruction::Halt],
            waveforms: vec![tone_wave(16)],
            waveform_names: vec!["w0".into()],
            n_ncos: 1,
            n_markers: 0,
            data_rate_hz: 2.5e9,
        }
    }

    #[test]
    fn play_at_zero_frequency_is_verbatim() {
        let p = base_program();
        let out = execute(&p, 1 << 20).unwrap();
        assert_eq!(out.stream.data.len(), 16);
        for x in &out.stream.data {
            assert_relative_eq!(x.re, 1.0, max_relative = 1e-15);
            assert!(x.im.abs() < 1e-15);
        }
    }

    #[test]
    fn shift_phase_pi_negates_output() {
        let mut p = base_program();
        p.instructions.insert(
            0,
            Instruction::ShiftPhase { nco: 0, delta_rad: std::f64::consts::PI },
        );
        let out = execute(&p, 1 << 20).unwrap();
        for x in &out.stream.data {
            assert_relative_eq!(x.re, -1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn repeat_preserves_phase_continuity() {
        // Three repetitions of a played tone: the NCO phase at sample n must
        // equal 2 pi f n / rate throughout, with no reset at loop edges.
        let rate = 2.5e9;
        let freq = 9.7e6;
        let p = Program {
            instructions: vec![
                Instruction::SetFreq { nco: 0, freq_hz: freq },
                Instruction::Play { wf: 0, nco: 0 },
                Instruction::Repeat { count: 3, target: 1 },
                Instruction::Halt,
            ],
            waveforms: vec![tone_wave(1000)],
            waveform_names: vec!["w0".into()],
            n_ncos: 1,
            n_markers: 0,
            data_rate_hz: rate,
        };
        p.validate().unwrap();
        let out = execute(&p, 1 << 20).unwrap();
        assert_eq!(out.stream.data.len(), 3000);
        for (n, x) in out.stream.data.iter().enumerate() {
            let cycles = freq * n as f64 / rate;
            let expect = Complex64::from_polar(1.0, TAU * (cycles - cycles.floor()));
            assert!((x - expect).norm() < 1e-9, "phase discontinuity at sample {n}");
        }
    }

    #[test]
    fn wait_advances_nco_time() {
        let rate = 2.5e9;
        let freq = 1e8; // 25 samples per cycle
        let p = Program {
            instructions: vec![
                Instruction::SetFreq { nco: 0, freq_hz: freq },
                Instruction::Wait { n_samples: 10 },
                Instruction::Play { wf: 0, nco: 0 },
                Instruction::Halt,
            ],
            waveforms: vec![tone_wave(4)],
            waveform_names: vec!["w0".into()],
            n_ncos: 1,
            n_markers: 0,
            data_rate_hz: rate,
        };
        let out = execute(&p, 1 << 20).unwrap();
        let first_play = out.stream.data[10];
        let expect = Complex64::from_polar(1.0, TAU * freq * 10.0 / rate);
        assert!((first_play - expect).norm() < 1e-12);
    }

    #[test]
    fn two_programs_stay_phase_coherent() {
        let make = |wait: usize| Program {
            instructions: vec![
                Instruction::SetFreq { nco: 0, freq_hz: 3.1e7 },
                Instruction::Wait { n_samples: wait },
                Instruction::Play { wf: 0, nco: 0 },
                Instruction::Halt,
            ],
            waveforms: vec![tone_wave(512)],
            waveform_names: vec!["w0".into()],
            n_ncos: 1,
            n_markers: 0,
            data_rate_hz: 2.5e9,
        };
        let a = execute(&make(0), 1 << 20).unwrap();
        let b = execute(&make(0), 1 << 20).unwrap();
        // Identical programs executed from reset: bit-identical outputs.
        assert_eq!(a.stream.data, b.stream.data);
        // Same frequency, different audible content: constant relative phase.
        let c = execute(&make(3), 1 << 20).unwrap();
        for n in 3..512 {
            let pa = a.stream.data[n];
            let pc = c.stream.data[n];
            let rel = (pa * pc.conj()).arg();
            assert!(rel.abs() < 1e-9, "relative phase drifted at sample {n}");
        }
    }

    #[test]
    fn marker_toggles_on_first_play_sample() {
        let p = Program {
            instructions: vec![
                Instruction::Wait { n_samples: 5 },
                Instruction::Marker { ch: 0, level: true },
                Instruction::Play { wf: 0, nco: 0 },
                Instruction::Marker { ch: 0, level: false },
                Instruction::Wait { n_samples: 3 },
                Instruction::Halt,
            ],
            waveforms: vec![tone_wave(4)],
            waveform_names: vec!["w0".into()],
            n_ncos: 1,
            n_markers: 1,
            data_rate_hz: 2.5e9,
        };
        let out = execute(&p, 1 << 20).unwrap();
        let m = &out.markers[0];
        assert_eq!(m.len(), 12);
        assert!(!m[4]);
        assert!(m[5], "marker must rise exactly on the first Play sample");
        assert!(m[8]);
        assert!(!m[9]);
    }

    #[test]
    fn total_samples_equals_instruction_costs() {
        let p = Program {
            instructions: vec![
                Instruction::Wait { n_samples: 7 },
                Instruction::Play { wf: 0, nco: 0 },
                Instruction::Repeat { count: 4, target: 1 },
                Instruction::Wait { n_samples: 2 },
                Instruction::Halt,
            ],
            waveforms: vec![tone_wave(16)],
            waveform_names: vec!["w0".into()],
            n_ncos: 1,
            n_markers: 0,
            data_rate_hz: 2.5e9,
        };
        let out = execute(&p, 1 << 20).unwrap();
        assert_eq!(out.stream.data.len(), 7 + 4 * 16 + 2);
    }

    #[test]
    fn runaway_guard() {
        let p = base_program();
        assert!(matches!(execute(&p, 8), Err(ExecError::Runaway { max_samples: 8 })));
    }

    #[test]
    fn assemble_minimal_program() {
        let dir = std::env::temp_dir().join("nyqsim_seq_test");
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("w0.csv"), "re,im\n0.5,0.0\n0.25,0.1\n").unwrap();
        let src = "\
rate 2.5e9
wave w0 w0.csv
play w0 nco0
halt
";
        let p = assemble(src, &dir).unwrap();
        assert_eq!(p.instructions.len(), 2);
        assert_eq!(p.waveforms[0].len(), 2);
        assert_relative_eq!(p.waveforms[0][1].re, 0.25);
    }

    #[test]
    fn assemble_rejects_undefined_waveform_with_line_number() {
        let src = "rate 2.5e9\nplay w9 nco0\nhalt\n";
        let e = assemble(src, &PathBuf::from(".")).unwrap_err();
        assert_eq!(e.line, 2);
        assert!(e.message.contains("w9"));
    }

    #[test]
    fn assemble_rejects_forward_repeat() {
        let dir = std::env::temp_dir().join("nyqsim_seq_test_fwd");
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("w.csv"), "1.0,0.0\n").unwrap();
        let src = "\
rate 2.5e9
wave w w.csv
repeat 3 later
label later
play w nco0
halt
";
        let e = assemble(src, &dir).unwrap_err();
        assert_eq!(e.line, 3);
        assert!(e.message.contains("backward"));
    }

    #[test]
    fn assemble_requires_halt() {
        let src = "rate 2.5e9\nwait 4\n";
        let e = assemble(src, &PathBuf::from(".")).unwrap_err();
        assert!(e.message.contains("halt"));
    }

    #[test]
    fn marker_csv_lists_transitions() {
        let markers = vec![vec![false, false, true, true, false]];
        let mut buf = Vec::new();
        write_marker_csv(&markers, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines, vec!["sample_index,channel,level", "0,0,0", "2,0,1", "4,0,0"]);
    }
}
