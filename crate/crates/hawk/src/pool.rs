//! Host worker pool executing kernels on OS threads.

use std::time::Instant;

use hawk_core::kernel::Kernel;
use hawk_core::runtime::{run_thread, Dims, LaunchReport, Launcher, Memory, NoTrace, RuntimeError};

/// Worker count from `HAWK_WORKERS`, else the available parallelism.
pub fn default_workers() -> usize {
    std::env::var("HAWK_WORKERS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

/// Splits `groups` into `workers` contiguous ranges.
pub fn partition(groups: u64, workers: usize) -> Vec<(u64, u64)> {
    let w = (workers as u64).clamp(1, groups.max(1));
    let base = groups / w;
    let extra = groups % w;
    let mut out = Vec::with_capacity(w as usize);
    let mut start = 0;
    for i in 0..w {
        let n = base + u64::from(i < extra);
        out.push((start, start + n));
        start += n;
    }
    out
}

/// Runs each launch on `workers` threads; each worker owns a contiguous
/// range of thread groups. Launch cost is wall-clock seconds.
pub struct HostPool {
    pub workers: usize,
    /// Launches still running at this instant stop with `Pruned`.
    pub deadline: Option<Instant>,
}

impl HostPool {
    pub fn new(workers: usize) -> Self {
        HostPool {
            workers: workers.max(1),
            deadline: None,
        }
    }
}

fn run_groups(
    kernel: &Kernel,
    dims: Dims,
    mem: &Memory<'_>,
    scalars: &[i64],
    (g0, g1): (u64, u64),
    deadline: Option<Instant>,
) -> Result<(), RuntimeError> {
    let group = dims.group.max(1);
    let end = dims.limit.min(dims.global);
    let mut vars = Vec::new();
    for g in g0..g1 {
        if deadline.is_some_and(|d| Instant::now() >= d) {
            return Err(RuntimeError::Pruned);
        }
        let first = g * group;
        for tid in first..(first + group).min(end) {
            run_thread(kernel, tid, dims, mem, scalars, &mut vars, &mut NoTrace)?;
        }
    }
    Ok(())
}

impl Launcher for HostPool {
    fn launch(
        &mut self,
        kernel: &Kernel,
        dims: Dims,
        mem: &Memory<'_>,
        scalars: &[i64],
    ) -> Result<LaunchReport, RuntimeError> {
        let start = Instant::now();
        if self.deadline.is_some_and(|d| start >= d) {
            return Err(RuntimeError::Pruned);
        }
        let group = dims.group.max(1);
        let active = dims.limit.min(dims.global).div_ceil(group);
        let parts = partition(active, self.workers);
        let deadline = self.deadline;
        let result = if parts.len() <= 1 {
            run_groups(
                kernel,
                dims,
                mem,
                scalars,
                parts.first().copied().unwrap_or((0, 0)),
                deadline,
            )
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = parts
                    .iter()
                    .map(|&range| {
                        s.spawn(move || run_groups(kernel, dims, mem, scalars, range, deadline))
                    })
                    .collect();
                // join everything before reporting the first error
                let results: Vec<_> = handles
                    .into_iter()
                    .map(|h| {
                        h.join()
                            .unwrap_or(Err(RuntimeError::DivergentPlan("worker panicked".into())))
                    })
                    .collect();
                results
                    .into_iter()
                    .collect::<Result<Vec<()>, _>>()
                    .map(|_| ())
            })
        };
        result?;
        Ok(LaunchReport {
            cost: start.elapsed().as_secs_f64(),
            transactions: Default::default(),
        })
    }

    fn host_cost(&self, _elements: usize) -> f64 {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partitions_are_contiguous_and_cover() {
        for groups in [0u64, 1, 5, 16, 17, 1000] {
            for w in [1usize, 2, 3, 8, 64] {
                let p = partition(groups, w);
                assert!(p.len() <= w.max(1));
                assert_eq!(p.first().map(|r| r.0), Some(0));
                assert_eq!(p.last().map(|r| r.1), Some(groups));
                for pair in p.windows(2) {
                    assert_eq!(pair[0].1, pair[1].0);
                }
                let sizes: Vec<u64> = p.iter().map(|r| r.1 - r.0).collect();
                let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
                assert!(hi - lo <= 1);
            }
        }
    }
}
