//! Devices selectable from the command line.

use std::path::Path;
use std::time::{Duration, Instant};

use hawk_core::codegen::CodegenOptions;
use hawk_core::kernel::KernelPlan;
use hawk_core::optimizer::{Device, SimDevice};
use hawk_core::result::ResultTable;
use hawk_core::runtime::{
    execute_kernel_plan, DeviceKind, DeviceModel, ExecutionMetrics, InputData, RuntimeError,
};

use crate::pool::{default_workers, HostPool};

/// Default wall-clock pruning threshold in seconds.
pub const DEFAULT_HOST_PRUNE: f64 = 1.0;

/// Real execution on the host worker pool; the metric is wall-clock seconds.
pub struct HostDevice {
    pub model: DeviceModel,
    pub workers: usize,
}

impl HostDevice {
    pub fn new(workers: usize) -> Self {
        HostDevice {
            model: DeviceModel::host(workers as u32),
            workers,
        }
    }
}

impl Device for HostDevice {
    fn name(&self) -> &str {
        &self.model.name
    }

    fn codegen_options(&self) -> CodegenOptions {
        self.model.codegen_options()
    }

    fn run(
        &mut self,
        plan: &KernelPlan,
        input: &InputData,
        limit: Option<f64>,
    ) -> Result<(ResultTable, ExecutionMetrics, f64), RuntimeError> {
        let start = Instant::now();
        let mut pool = HostPool::new(self.workers);
        pool.deadline = limit
            .filter(|l| l.is_finite() && *l >= 0.0)
            .map(|l| start + Duration::from_secs_f64(l));
        let (r, mut m) = execute_kernel_plan(plan, input, &mut pool)?;
        let wall = start.elapsed().as_secs_f64();
        m.cost = wall;
        Ok((r, m, wall))
    }
}

pub enum AnyDevice {
    Sim(SimDevice),
    Host(HostDevice),
}

impl AnyDevice {
    /// `cpu-sim`, `gpu-sim`, `host`, or a device config file.
    pub fn resolve(spec: &str) -> anyhow::Result<Self> {
        if spec == "host" {
            return Ok(AnyDevice::Host(HostDevice::new(default_workers())));
        }
        let model = match DeviceModel::preset(spec) {
            Some(m) => m,
            None => {
                let path = Path::new(spec);
                if !path.exists() {
                    anyhow::bail!("unknown device `{spec}` (expected cpu-sim, gpu-sim, host or a config file)");
                }
                let text = std::fs::read_to_string(path)?;
                DeviceModel::from_kv(&text).map_err(|e| anyhow::anyhow!("{spec}: {e}"))?
            }
        };
        Ok(match model.kind {
            DeviceKind::Simulated => AnyDevice::Sim(SimDevice { model }),
            DeviceKind::HostParallel => {
                let workers = std::env::var("HAWK_WORKERS")
                    .ok()
                    .and_then(|v| v.parse().ok())
                    .unwrap_or(model.compute_units as usize)
                    .max(1);
                AnyDevice::Host(HostDevice { model, workers })
            }
        })
    }

    pub fn is_simulated(&self) -> bool {
        matches!(self, AnyDevice::Sim(_))
    }

    pub fn as_dyn(&mut self) -> &mut dyn Device {
        match self {
            AnyDevice::Sim(d) => d,
            AnyDevice::Host(d) => d,
        }
    }

    /// Pruning threshold used when none is given: one second on the host,
    /// none on simulated devices.
    pub fn default_prune(&self) -> Option<f64> {
        match self {
            AnyDevice::Sim(_) => None,
            AnyDevice::Host(_) => Some(DEFAULT_HOST_PRUNE),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolves_presets_and_files() {
        assert!(AnyDevice::resolve("cpu-sim").unwrap().is_simulated());
        assert!(!AnyDevice::resolve("host").unwrap().is_simulated());
        assert!(AnyDevice::resolve("tpu").is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("dev.cfg");
        std::fs::write(&p, "preset = gpu-sim\nwarp_size = 8\n").unwrap();
        match AnyDevice::resolve(p.to_str().unwrap()).unwrap() {
            AnyDevice::Sim(d) => assert_eq!(d.model.warp_size, 8),
            _ => panic!(),
        }
    }
}
