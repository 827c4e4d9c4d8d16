//! External process adapters: the bridge to real encoders and quality
//! meters. A template string with `{input}` `{output}` `{rf}` `{reference}`
//! `{log}` placeholders describes the command; invocation substitutes the
//! bindings, spawns the process, enforces a wall-clock timeout, and applies
//! a parse rule to stdout when a numeric result is expected.

use cqpass_core::controller::{Codec, CodecError, EncodeJob};
use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

/// How a numeric value is extracted from an adapter's stdout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseRule {
    /// The last whitespace-separated token that parses as a float wins.
    /// Fits meters that end with a bare score line.
    LastFloat,
    /// The first float token after the last occurrence of the prefix, e.g.
    /// `FloatAfter("VMAF score:")` on `... VMAF score: 91.234` → 91.234.
    FloatAfter(String),
}

/// One external command: template, timeout, and output parsing.
#[derive(Debug, Clone)]
pub struct AdapterSpec {
    pub command_template: String,
    pub timeout_secs: u64,
    pub parse_rule: ParseRule,
}

pub const PLACEHOLDERS: [&str; 5] = ["{input}", "{output}", "{rf}", "{reference}", "{log}"];

impl AdapterSpec {
    /// Validates the template: non-empty, positive timeout, and no stray
    /// `{...}` tokens beyond the documented placeholders.
    pub fn new(
        command_template: &str,
        timeout_secs: u64,
        parse_rule: ParseRule,
    ) -> Result<Self, AdapterError> {
        if command_template.split_whitespace().next().is_none() {
            return Err(AdapterError::BadTemplate("template is empty".into()));
        }
        if timeout_secs == 0 {
            return Err(AdapterError::BadTemplate("timeout must be > 0 seconds".into()));
        }
        for token in command_template.split_whitespace() {
            if token.starts_with('{')
                && token.ends_with('}')
                && !PLACEHOLDERS.contains(&token)
            {
                return Err(AdapterError::BadTemplate(format!(
                    "unknown placeholder `{token}` (expected one of {})",
                    PLACEHOLDERS.join(" ")
                )));
            }
        }
        Ok(AdapterSpec {
            command_template: command_template.to_string(),
            timeout_secs,
            parse_rule,
        })
    }
}

/// Placeholder values for one invocation. Unused placeholders may stay
/// `None` as long as the template does not mention them.
#[derive(Debug, Default, Clone)]
pub struct Bindings {
    pub input: Option<String>,
    pub output: Option<String>,
    pub rf: Option<f64>,
    pub reference: Option<String>,
    pub log: Option<String>,
}

impl Bindings {
    fn get(&self, placeholder: &str) -> Option<String> {
        match placeholder {
            "{input}" => self.input.clone(),
            "{output}" => self.output.clone(),
            "{rf}" => self.rf.map(|v| format!("{v:.4}")),
            "{reference}" => self.reference.clone(),
            "{log}" => self.log.clone(),
            _ => None,
        }
    }
}

/// Why an adapter invocation failed. Every variant that had process output
/// carries its tail so failures are debuggable from the error alone.
#[derive(Debug)]
pub enum AdapterError {
    BadTemplate(String),
    /// A placeholder in the template has no binding.
    UnboundPlaceholder { placeholder: String },
    Spawn { command: String, source: std::io::Error },
    NonZeroExit { command: String, status: String, tail: String },
    Timeout { command: String, seconds: u64 },
    ParseFailure { command: String, rule: String, tail: String },
    /// The adapter exited 0 but its declared output file is absent.
    MissingOutput { command: String, path: PathBuf },
}

impl fmt::Display for AdapterError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AdapterError::BadTemplate(msg) => write!(f, "bad adapter template: {msg}"),
            AdapterError::UnboundPlaceholder { placeholder } => {
                write!(f, "placeholder {placeholder} has no binding")
            }
            AdapterError::Spawn { command, source } => {
                write!(f, "cannot spawn `{command}`: {source}")
            }
            AdapterError::NonZeroExit { command, status, tail } => {
                write!(f, "`{command}` failed ({status}); output tail: {tail}")
            }
            AdapterError::Timeout { command, seconds } => {
                write!(f, "`{command}` exceeded the {seconds}s timeout and was killed")
            }
            AdapterError::ParseFailure { command, rule, tail } => {
                write!(f, "`{command}` output has no value for rule {rule}; output tail: {tail}")
            }
            AdapterError::MissingOutput { command, path } => {
                write!(f, "`{command}` exited 0 but produced no output at {}", path.display())
            }
        }
    }
}

impl std::error::Error for AdapterError {}

/// Everything captured from a finished adapter process.
#[derive(Debug)]
pub struct AdapterOutput {
    pub stdout: String,
    pub stderr: String,
}

impl AdapterOutput {
    /// Last ~20 lines of both streams, for error messages.
    fn tail(&self) -> String {
        let take_tail = |s: &str| {
            let lines: Vec<&str> = s.lines().collect();
            let from = lines.len().saturating_sub(20);
            lines[from..].join("\n")
        };
        let mut t = take_tail(&self.stdout);
        let e = take_tail(&self.stderr);
        if !e.is_empty() {
            if !t.is_empty() {
                t.push('\n');
            }
            t.push_str(&e);
        }
        if t.is_empty() {
            "<no output>".to_string()
        } else {
            t
        }
    }
}

fn substitute(template: &str, bindings: &Bindings) -> Result<Vec<String>, AdapterError> {
    template
        .split_whitespace()
        .map(|token| {
            if PLACEHOLDERS.contains(&token) {
                bindings.get(token).ok_or_else(|| AdapterError::UnboundPlaceholder {
                    placeholder: token.to_string(),
                })
            } else {
                Ok(token.to_string())
            }
        })
        .collect()
}

/// Drains one child pipe on its own thread so a chatty adapter can never
/// dead-lock against the timeout poll loop.
fn drain_on_thread(
    pipe: Option<impl Read + Send + 'static>,
) -> std::thread::JoinHandle<String> {
    std::thread::spawn(move || {
        let mut buf = String::new();
        if let Some(mut pipe) = pipe {
            let _ = pipe.read_to_string(&mut buf);
        }
        buf
    })
}

fn wait_with_timeout(child: &mut Child, timeout: Duration) -> std::io::Result<Option<String>> {
    let started = Instant::now();
    loop {
        if let Some(status) = child.try_wait()? {
            return Ok(Some(if status.success() {
                String::new()
            } else {
                status.to_string()
            }));
        }
        if started.elapsed() >= timeout {
            child.kill()?;
            child.wait()?;
            return Ok(None);
        }
        std::thread::sleep(Duration::from_millis(20));
    }
}

/// Runs the adapter once. On success the captured output is returned for
/// parsing; all failure modes are structured [`AdapterError`]s.
pub fn invoke_adapter(
    spec: &AdapterSpec,
    bindings: &Bindings,
) -> Result<AdapterOutput, AdapterError> {
    let argv = substitute(&spec.command_template, bindings)?;
    let command_line = argv.join(" ");
    let mut child = Command::new(&argv[0])
        .args(&argv[1..])
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|source| AdapterError::Spawn { command: command_line.clone(), source })?;

    let stdout_thread = drain_on_thread(child.stdout.take());
    let stderr_thread = drain_on_thread(child.stderr.take());
    let verdict = wait_with_timeout(&mut child, Duration::from_secs(spec.timeout_secs))
        .map_err(|source| AdapterError::Spawn { command: command_line.clone(), source })?;

    // On timeout the child is already killed, but a grandchild it spawned
    // may still hold the pipes open; dropping the reader threads instead of
    // joining them keeps the timeout prompt.
    let Some(status) = verdict else {
        return Err(AdapterError::Timeout { command: command_line, seconds: spec.timeout_secs });
    };
    let output = AdapterOutput {
        stdout: stdout_thread.join().unwrap_or_default(),
        stderr: stderr_thread.join().unwrap_or_default(),
    };
    if status.is_empty() {
        Ok(output)
    } else {
        Err(AdapterError::NonZeroExit { command: command_line, status, tail: output.tail() })
    }
}

fn float_tokens(text: &str) -> impl Iterator<Item = f64> + '_ {
    text.split(|c: char| c.is_whitespace() || c == ',' || c == ';' || c == '=' || c == ':')
        .filter_map(|token| token.parse::<f64>().ok())
}

/// Applies the spec's parse rule to captured output.
pub fn parse_value(
    spec: &AdapterSpec,
    command: &str,
    output: &AdapterOutput,
) -> Result<f64, AdapterError> {
    let found = match &spec.parse_rule {
        ParseRule::LastFloat => float_tokens(&output.stdout).last(),
        ParseRule::FloatAfter(prefix) => output
            .stdout
            .rfind(prefix.as_str())
            .and_then(|at| float_tokens(&output.stdout[at + prefix.len()..]).next()),
    };
    found.ok_or_else(|| AdapterError::ParseFailure {
        command: command.to_string(),
        rule: format!("{:?}", spec.parse_rule),
        tail: output.tail(),
    })
}

/// Convenience: invoke + parse in one step (for quality meters).
pub fn invoke_and_parse(spec: &AdapterSpec, bindings: &Bindings) -> Result<f64, AdapterError> {
    let argv = substitute(&spec.command_template, bindings)?;
    let command_line = argv.join(" ");
    let output = invoke_adapter(spec, bindings)?;
    parse_value(spec, &command_line, &output)
}

/// A [`Codec`] whose encode and measure are external processes. The encode
/// adapter must leave a stream at `{output}`; the quality adapter prints a
/// score parsed by its rule. Segment jobs carry their source path as the
/// job label, which binds `{input}` (encode) and `{reference}` (measure).
pub struct ProcessCodec {
    encoder: AdapterSpec,
    quality: AdapterSpec,
    work_dir: PathBuf,
}

impl ProcessCodec {
    pub fn new(encoder: AdapterSpec, quality: AdapterSpec, work_dir: &Path) -> Self {
        ProcessCodec { encoder, quality, work_dir: work_dir.to_path_buf() }
    }

    fn stream_path(&self, job: &EncodeJob, pass_index: u8) -> PathBuf {
        self.work_dir.join(format!("seg{:016x}_p{pass_index}.bin", job.id))
    }
}

impl Codec for ProcessCodec {
    fn encode(&self, job: &EncodeJob, rf: f64, pass_index: u8) -> Result<String, CodecError> {
        let output = self.stream_path(job, pass_index);
        let bindings = Bindings {
            input: Some(job.label.clone()),
            output: Some(output.display().to_string()),
            rf: Some(rf),
            reference: Some(job.label.clone()),
            log: Some(format!("{}.log", output.display())),
        };
        let argv = substitute(&self.encoder.command_template, &bindings)
            .map_err(|e| CodecError::new(e.to_string()))?;
        invoke_adapter(&self.encoder, &bindings).map_err(|e| CodecError::new(e.to_string()))?;
        if !output.is_file() {
            return Err(CodecError::new(
                AdapterError::MissingOutput { command: argv.join(" "), path: output }.to_string(),
            ));
        }
        Ok(output.display().to_string())
    }

    fn measure(&self, job: &EncodeJob, stream_ref: &str) -> Result<f64, CodecError> {
        let bindings = Bindings {
            input: Some(stream_ref.to_string()),
            output: None,
            rf: None,
            reference: Some(job.label.clone()),
            log: None,
        };
        invoke_and_parse(&self.quality, &bindings).map_err(|e| CodecError::new(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(template: &str) -> AdapterSpec {
        AdapterSpec::new(template, 5, ParseRule::LastFloat).unwrap()
    }

    #[test]
    fn template_validation_catches_typos_and_empty() {
        assert!(AdapterSpec::new("", 5, ParseRule::LastFloat).is_err());
        assert!(AdapterSpec::new("enc {in_put}", 5, ParseRule::LastFloat).is_err());
        assert!(AdapterSpec::new("enc {input}", 0, ParseRule::LastFloat).is_err());
        assert!(AdapterSpec::new("enc {input} -o {output} --rf {rf}", 5, ParseRule::LastFloat)
            .is_ok());
    }

    #[test]
    fn substitution_fills_all_placeholders() {
        let b = Bindings {
            input: Some("a.y4m".into()),
            output: Some("a.bin".into()),
            rf: Some(23.5),
            reference: None,
            log: None,
        };
        let argv = substitute("enc {input} -o {output} --rf {rf}", &b).unwrap();
        assert_eq!(argv, vec!["enc", "a.y4m", "-o", "a.bin", "--rf", "23.5000"]);
    }

    #[test]
    fn missing_binding_is_reported_by_name() {
        let b = Bindings::default();
        let err = substitute("enc {reference}", &b).unwrap_err();
        assert!(err.to_string().contains("{reference}"));
    }

    #[test]
    fn parse_last_float_takes_the_final_number() {
        let out = AdapterOutput {
            stdout: "frames 240 of 240\nelapsed 1.5s\n91.234\n".into(),
            stderr: String::new(),
        };
        let v = parse_value(&spec("meter {input}"), "meter", &out).unwrap();
        assert_eq!(v, 91.234);
    }

    #[test]
    fn parse_float_after_prefix() {
        let s = AdapterSpec::new(
            "meter {input}",
            5,
            ParseRule::FloatAfter("VMAF score:".into()),
        )
        .unwrap();
        let out = AdapterOutput {
            stdout: "pooling: mean\nVMAF score: 91.234 (harmonic 90.1)\n".into(),
            stderr: String::new(),
        };
        assert_eq!(parse_value(&s, "meter", &out).unwrap(), 91.234);
        // The rule reads after the LAST occurrence.
        let out2 = AdapterOutput {
            stdout: "VMAF score: 11.0\nVMAF score: 91.5\n".into(),
            stderr: String::new(),
        };
        assert_eq!(parse_value(&s, "meter", &out2).unwrap(), 91.5);
    }

    #[test]
    fn parse_failure_carries_output_tail() {
        let out = AdapterOutput { stdout: "no numbers here".into(), stderr: "boom".into() };
        let err = parse_value(&spec("meter {input}"), "meter", &out).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("no numbers here") && msg.contains("boom"));
    }

    // ---- real process tests ------------------------------------------------

    fn script(dir: &Path, name: &str, body: &str) -> String {
        use std::os::unix::fs::PermissionsExt;
        let path = dir.join(name);
        std::fs::write(&path, format!("#!/bin/sh\n{body}\n")).unwrap();
        std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o755)).unwrap();
        path.display().to_string()
    }

    #[test]
    fn invokes_a_real_process_and_parses_its_output() {
        let dir = tempfile::tempdir().unwrap();
        let meter = script(dir.path(), "meter.sh", "echo frames 240\necho score 91.25");
        let spec = AdapterSpec::new(&format!("{meter} {{input}}"), 5, ParseRule::LastFloat).unwrap();
        let bindings = Bindings { input: Some("in.y4m".into()), ..Bindings::default() };
        assert_eq!(invoke_and_parse(&spec, &bindings).unwrap(), 91.25);
    }

    #[test]
    fn timeout_kills_the_process_and_names_the_command() {
        let dir = tempfile::tempdir().unwrap();
        let slow = script(dir.path(), "slow.sh", "sleep 30");
        let spec = AdapterSpec::new(&slow, 1, ParseRule::LastFloat).unwrap();
        let started = std::time::Instant::now();
        let err = invoke_adapter(&spec, &Bindings::default()).unwrap_err();
        assert!(started.elapsed() < Duration::from_secs(10), "kill was not prompt");
        let msg = err.to_string();
        assert!(msg.contains(&slow) && msg.contains("timeout"), "unexpected message: {msg}");
    }

    #[test]
    fn nonzero_exit_reports_status_and_stderr_tail() {
        let dir = tempfile::tempdir().unwrap();
        let bad = script(dir.path(), "bad.sh", "echo cannot open input >&2\nexit 3");
        let spec = AdapterSpec::new(&bad, 5, ParseRule::LastFloat).unwrap();
        let err = invoke_adapter(&spec, &Bindings::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("cannot open input"), "tail missing from: {msg}");
    }

    #[test]
    fn process_codec_round_trips_rf_through_encode_and_measure() {
        let dir = tempfile::tempdir().unwrap();
        // The encoder bakes the RF into the stream; the meter reads it back
        // as the "quality", which proves both placeholder bindings.
        let enc = script(dir.path(), "enc.sh", "printf 'encoded %s\\n' \"$2\" > \"$3\"");
        let meter = script(dir.path(), "meter.sh", "cat \"$1\"");
        let codec = ProcessCodec::new(
            AdapterSpec::new(&format!("{enc} {{input}} {{rf}} {{output}}"), 5, ParseRule::LastFloat)
                .unwrap(),
            AdapterSpec::new(&format!("{meter} {{input}}"), 5, ParseRule::LastFloat).unwrap(),
            dir.path(),
        );
        let job = EncodeJob::new(7, "in.y4m");
        let stream = codec.encode(&job, 23.5, 1).unwrap();
        assert!(Path::new(&stream).is_file());
        assert_eq!(codec.measure(&job, &stream).unwrap(), 23.5);
        // Passes get distinct stream files.
        let stream2 = codec.encode(&job, 23.5, 2).unwrap();
        assert_ne!(stream, stream2);
    }

    #[test]
    fn encoder_without_output_file_is_a_missing_output_error() {
        let dir = tempfile::tempdir().unwrap();
        let enc = script(dir.path(), "enc.sh", "exit 0");
        let codec = ProcessCodec::new(
            AdapterSpec::new(&format!("{enc} {{input}} {{rf}} {{output}}"), 5, ParseRule::LastFloat)
                .unwrap(),
            AdapterSpec::new("true", 5, ParseRule::LastFloat).unwrap(),
            dir.path(),
        );
        let err = codec.encode(&EncodeJob::new(1, "in.y4m"), 20.0, 1).unwrap_err();
        assert!(err.to_string().contains("produced no output"), "got: {err}");
    }
}
