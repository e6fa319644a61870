use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::time::Duration;

use wait_timeout::ChildExt;

use super::{DeviceRunner, ProfilerError};
use crate::graph::{io, CompactNet};

/// Runs a shell command per measurement. `{graph}` in the template is replaced by the path of
/// a temporary `.net.json` holding the subgraph. If the template also contains `{trials}`, the
/// command runs once and must print one latency (ms) per line for every trial; otherwise it
/// runs once per trial and must print exactly one latency.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalCommandRunner {
    pub template: String,
    pub timeout: Duration,
}

impl ExternalCommandRunner {
    pub fn new(template: impl Into<String>, timeout: Duration) -> Self {
        ExternalCommandRunner { template: template.into(), timeout }
    }

    fn invoke(&self, cmd: &str) -> Result<String, ProfilerError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(cmd)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| ProfilerError::Device(format!("cannot start `{cmd}`: {e}")))?;
        let mut stdout = child.stdout.take().expect("piped stdout");
        let mut stderr = child.stderr.take().expect("piped stderr");
        let out_reader = std::thread::spawn(move || {
            let mut s = String::new();
            stdout.read_to_string(&mut s).map(|_| s)
        });
        let err_reader = std::thread::spawn(move || {
            let mut s = String::new();
            let _ = stderr.read_to_string(&mut s);
            s
        });
        let status = match child.wait_timeout(self.timeout).map_err(|e| ProfilerError::Device(e.to_string()))? {
            Some(s) => s,
            None => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(ProfilerError::Device(format!("`{cmd}` timed out after {:?}", self.timeout)));
            }
        };
        let out = out_reader.join().expect("reader thread").map_err(|e| ProfilerError::Device(e.to_string()))?;
        let err = err_reader.join().expect("reader thread");
        if !status.success() {
            return Err(ProfilerError::Device(format!("`{cmd}` exited with {status}: {}", err.trim())));
        }
        Ok(out)
    }
}

fn parse_latencies(text: &str) -> Result<Vec<f64>, ProfilerError> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| l.parse::<f64>().map_err(|_| ProfilerError::Device(format!("cannot parse latency {l:?}"))))
        .collect()
}

impl DeviceRunner for ExternalCommandRunner {
    fn name(&self) -> String {
        format!("cmd:{}", self.template)
    }

    fn run(&mut self, subgraph: &CompactNet, trials: usize) -> Result<Vec<f64>, ProfilerError> {
        let mut file = tempfile::Builder::new()
            .suffix(".net.json")
            .tempfile()
            .map_err(|e| ProfilerError::Device(e.to_string()))?;
        file.write_all(io::serialize_compact(subgraph)?.as_bytes())
            .map_err(|e| ProfilerError::Device(e.to_string()))?;
        let path = file.path().display().to_string();
        let cmd = self.template.replace("{graph}", &path);
        let samples = if cmd.contains("{trials}") {
            parse_latencies(&self.invoke(&cmd.replace("{trials}", &trials.to_string()))?)?
        } else {
            let mut v = Vec::with_capacity(trials);
            for _ in 0..trials {
                let s = parse_latencies(&self.invoke(&cmd)?)?;
                if s.len() != 1 {
                    return Err(ProfilerError::SampleCount { expected: 1, got: s.len() });
                }
                v.extend(s);
            }
            v
        };
        if samples.len() != trials {
            return Err(ProfilerError::SampleCount { expected: trials, got: samples.len() });
        }
        Ok(samples)
    }
}
