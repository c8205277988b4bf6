//! Cumulative CPU and memory counters read from a procfs tree.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Overrides the procfs mount point (default `/proc`).
pub const PROC_ROOT_ENV: &str = "EDGEPROF_PROC_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub(crate) struct CpuTimes {
    pub busy: u64,
    pub total: u64,
}

#[derive(Debug, Clone)]
pub(crate) struct ProcFs {
    root: PathBuf,
}

impl ProcFs {
    pub fn from_env() -> Self {
        let root = std::env::var_os(PROC_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("/proc"));
        Self { root }
    }

    #[cfg(test)]
    pub fn at(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    fn read(&self, rel: impl AsRef<Path>) -> Result<String> {
        let path = self.root.join(rel);
        fs::read_to_string(&path)
            .map_err(|e| Error::PlatformCapability(format!("{}: {e}", path.display())))
    }

    /// Aggregate jiffies over all CPUs from the `cpu ` line of `stat`.
    pub fn system_cpu(&self) -> Result<CpuTimes> {
        let stat = self.read("stat")?;
        let line = stat
            .lines()
            .find(|l| l.starts_with("cpu "))
            .ok_or_else(|| Error::PlatformCapability("no aggregate cpu line in stat".into()))?;
        let fields: Vec<u64> = line
            .split_whitespace()
            .skip(1)
            .map(|f| f.parse::<u64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::PlatformCapability(format!("malformed cpu line: {e}")))?;
        if fields.len() < 4 {
            return Err(Error::PlatformCapability("short cpu line in stat".into()));
        }
        // user nice system idle iowait irq softirq steal [guest guest_nice]
        // guest time is already folded into user/nice.
        let total: u64 = fields.iter().take(8).sum();
        let idle = fields[3] + fields.get(4).copied().unwrap_or(0);
        Ok(CpuTimes {
            busy: total - idle,
            total,
        })
    }

    pub fn cpu_count(&self) -> Result<usize> {
        let stat = self.read("stat")?;
        let n = stat
            .lines()
            .filter(|l| {
                l.strip_prefix("cpu")
                    .and_then(|r| r.chars().next())
                    .is_some_and(|c| c.is_ascii_digit())
            })
            .count();
        Ok(n.max(1))
    }

    /// Used memory (`MemTotal - MemAvailable`) in MB.
    pub fn system_ram_mb(&self) -> Result<f64> {
        let meminfo = self.read("meminfo")?;
        let field = |name: &str| -> Option<f64> {
            meminfo
                .lines()
                .find(|l| l.starts_with(name))?
                .split_whitespace()
                .nth(1)?
                .parse()
                .ok()
        };
        let total = field("MemTotal:")
            .ok_or_else(|| Error::PlatformCapability("MemTotal missing from meminfo".into()))?;
        let avail = field("MemAvailable:")
            .or_else(|| field("MemFree:"))
            .ok_or_else(|| Error::PlatformCapability("MemAvailable missing from meminfo".into()))?;
        Ok((total - avail).max(0.0) / 1024.0)
    }

    pub fn process_exists(&self, pid: u32) -> bool {
        self.root.join(pid.to_string()).join("stat").exists()
    }

    /// Jiffies and resident memory summed over `pid` and all its descendants.
    ///
    /// Includes reaped-children time (`cutime`/`cstime`) so short-lived
    /// subprocesses stay accounted after they exit.
    pub fn process_tree(&self, pid: u32) -> Result<(u64, f64)> {
        let entries = fs::read_dir(&self.root)
            .map_err(|e| Error::PlatformCapability(format!("{}: {e}", self.root.display())))?;
        let mut children: HashMap<u32, Vec<u32>> = HashMap::new();
        let mut ticks: HashMap<u32, u64> = HashMap::new();
        for entry in entries.flatten() {
            let Some(p) = entry
                .file_name()
                .to_str()
                .and_then(|s| s.parse::<u32>().ok())
            else {
                continue;
            };
            // processes may vanish between listing and reading
            let Ok(stat) = fs::read_to_string(entry.path().join("stat")) else {
                continue;
            };
            if let Some((ppid, t)) = parse_pid_stat(&stat) {
                children.entry(ppid).or_default().push(p);
                ticks.insert(p, t);
            }
        }
        if !ticks.contains_key(&pid) {
            return Err(Error::NotFound(format!("process {pid}")));
        }
        let mut total_ticks = 0;
        let mut rss_kb = 0.0;
        let mut stack = vec![pid];
        while let Some(p) = stack.pop() {
            total_ticks += ticks.get(&p).copied().unwrap_or(0);
            rss_kb += self.rss_kb(p).unwrap_or(0.0);
            if let Some(kids) = children.get(&p) {
                stack.extend(kids.iter().copied().filter(|&k| k != p));
            }
        }
        Ok((total_ticks, rss_kb / 1024.0))
    }

    fn rss_kb(&self, pid: u32) -> Option<f64> {
        let status = fs::read_to_string(self.root.join(pid.to_string()).join("status")).ok()?;
        status
            .lines()
            .find(|l| l.starts_with("VmRSS:"))?
            .split_whitespace()
            .nth(1)?
            .parse()
            .ok()
    }
}

/// `(ppid, utime + stime + cutime + cstime)` from a `/proc/<pid>/stat` line.
fn parse_pid_stat(stat: &str) -> Option<(u32, u64)> {
    // comm may contain spaces and parentheses; fields resume after the last ')'
    let rest = &stat[stat.rfind(')')? + 1..];
    let f: Vec<&str> = rest.split_whitespace().collect();
    let ppid = f.get(1)?.parse().ok()?;
    let sum = (11..=14)
        .map(|i| f.get(i).and_then(|v| v.parse::<u64>().ok()))
        .sum::<Option<u64>>()?;
    Some((ppid, sum))
}
