//! Device selection: `sim`, `sim:<config.json>` or `cmd:<template>`.

use std::fs;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use hwnas::profiler::{DeviceRunner, ExternalCommandRunner, SimulatedVpu};

/// Simulator config path used when no `--device` is given.
pub const DEVICE_ENV: &str = "HWNAS_DEVICE_CONFIG";

pub enum DeviceSpec {
    Sim(SimulatedVpu),
    Command(String),
}

impl DeviceSpec {
    pub fn parse(arg: Option<&str>) -> Result<Self> {
        let owned;
        let spec = match arg {
            Some(s) => s,
            None => match std::env::var(DEVICE_ENV) {
                Ok(path) if !path.is_empty() => {
                    owned = format!("sim:{path}");
                    &owned
                }
                _ => "sim",
            },
        };
        if spec == "sim" {
            return Ok(DeviceSpec::Sim(SimulatedVpu::default()));
        }
        if let Some(path) = spec.strip_prefix("sim:") {
            let text = fs::read_to_string(path).with_context(|| format!("reading device config {path}"))?;
            let sim: SimulatedVpu =
                serde_json::from_str(&text).with_context(|| format!("parsing device config {path}"))?;
            sim.validate()?;
            return Ok(DeviceSpec::Sim(sim));
        }
        if let Some(template) = spec.strip_prefix("cmd:") {
            if !template.contains("{graph}") {
                bail!("command template must contain {{graph}}: {template}");
            }
            return Ok(DeviceSpec::Command(template.to_string()));
        }
        bail!("unknown device `{spec}`; expected sim, sim:<config.json> or cmd:<template>")
    }

    pub fn runner(&self, timeout_s: f64) -> Result<Box<dyn DeviceRunner>> {
        Ok(match self {
            DeviceSpec::Sim(sim) => Box::new(sim.clone()),
            DeviceSpec::Command(t) => {
                if !(timeout_s.is_finite() && timeout_s > 0.0) {
                    bail!("timeout must be positive");
                }
                Box::new(ExternalCommandRunner::new(t.clone(), Duration::from_secs_f64(timeout_s)))
            }
        })
    }

    pub fn simulator(&self) -> Result<&SimulatedVpu> {
        match self {
            DeviceSpec::Sim(sim) => Ok(sim),
            DeviceSpec::Command(_) => bail!("this command needs a simulator device (sim or sim:<config.json>)"),
        }
    }
}
