use std::collections::HashSet;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::clock::now_ns;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    pub ts_ns: u64,
    /// Percent of one core; may exceed 100 on multi-core use.
    pub cpu_percent: f64,
    pub rss_bytes: u64,
    pub scope: String,
}

/// CPU consumed by the calling thread.
pub fn current_thread_cpu_ns() -> u64 {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    // SAFETY: `ts` is a valid, writable timespec.
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_THREAD_CPUTIME_ID, &mut ts) };
    if rc != 0 {
        return 0;
    }
    ts.tv_sec as u64 * 1_000_000_000 + ts.tv_nsec as u64
}

fn current_tid() -> i32 {
    // SAFETY: gettid has no preconditions.
    unsafe { libc::gettid() }
}

fn clock_ticks() -> u64 {
    // SAFETY: sysconf has no preconditions.
    let t = unsafe { libc::sysconf(libc::_SC_CLK_TCK) };
    if t > 0 {
        t as u64
    } else {
        100
    }
}

fn page_size() -> u64 {
    // SAFETY: sysconf has no preconditions.
    let p = unsafe { libc::sysconf(libc::_SC_PAGESIZE) };
    if p > 0 {
        p as u64
    } else {
        4096
    }
}

/// utime + stime from a `stat` line, in nanoseconds.
fn stat_cpu_ns(stat: &str) -> Option<u64> {
    // The command name may contain spaces; fields resume after the last ')'.
    let rest = &stat[stat.rfind(')')? + 1..];
    let fields: Vec<&str> = rest.split_whitespace().collect();
    let utime: u64 = fields.get(11)?.parse().ok()?;
    let stime: u64 = fields.get(12)?.parse().ok()?;
    Some((utime + stime) * 1_000_000_000 / clock_ticks())
}

/// CPU time of thread `tid` of this process.
pub fn thread_cpu_ns(tid: i32) -> Option<u64> {
    if let Ok(s) = std::fs::read_to_string(format!("/proc/self/task/{tid}/schedstat")) {
        if let Some(ns) = s.split_whitespace().next().and_then(|v| v.parse().ok()) {
            return Some(ns);
        }
    }
    stat_cpu_ns(&std::fs::read_to_string(format!("/proc/self/task/{tid}/stat")).ok()?)
}

/// Cumulative CPU time of process `pid`; `None` once it has exited.
pub fn process_cpu_ns(pid: u32) -> Option<u64> {
    stat_cpu_ns(&std::fs::read_to_string(format!("/proc/{pid}/stat")).ok()?)
}

pub fn process_rss_bytes(pid: u32) -> Option<u64> {
    let statm = std::fs::read_to_string(format!("/proc/{pid}/statm")).ok()?;
    let pages: u64 = statm.split_whitespace().nth(1)?.parse().ok()?;
    Some(pages * page_size())
}

/// A set of threads whose CPU time is accounted together, including threads
/// that have already exited.
#[derive(Debug, Default)]
pub struct ThreadGroup {
    inner: Mutex<GroupInner>,
}

#[derive(Debug, Default)]
struct GroupInner {
    live: HashSet<i32>,
    retired_ns: u64,
}

/// Membership of the current thread; leaving the scope retires it.
pub struct ThreadGuard<'a> {
    group: &'a ThreadGroup,
    tid: i32,
}

impl ThreadGroup {
    pub fn enter(&self) -> ThreadGuard<'_> {
        let tid = current_tid();
        self.inner.lock().unwrap().live.insert(tid);
        ThreadGuard { group: self, tid }
    }

    pub fn cpu_ns(&self) -> u64 {
        let inner = self.inner.lock().unwrap();
        inner.retired_ns + inner.live.iter().filter_map(|&t| thread_cpu_ns(t)).sum::<u64>()
    }

    pub fn live_threads(&self) -> usize {
        self.inner.lock().unwrap().live.len()
    }
}

impl Drop for ThreadGuard<'_> {
    fn drop(&mut self) {
        let spent = current_thread_cpu_ns();
        let mut inner = self.group.inner.lock().unwrap();
        inner.live.remove(&self.tid);
        inner.retired_ns += spent;
    }
}

/// What a sampler observes.
#[derive(Clone)]
pub enum Scope {
    /// A whole process, by pid.
    Process(u32),
    /// A group of threads inside this process; memory is the process RSS.
    Threads(Arc<ThreadGroup>),
}

impl Scope {
    fn label(&self) -> String {
        match self {
            Scope::Process(pid) => format!("pid:{pid}"),
            Scope::Threads(_) => format!("threads:{}", std::process::id()),
        }
    }

    fn read(&self) -> Option<(u64, u64)> {
        match self {
            Scope::Process(pid) => Some((process_cpu_ns(*pid)?, process_rss_bytes(*pid)?)),
            Scope::Threads(g) => Some((g.cpu_ns(), process_rss_bytes(std::process::id())?)),
        }
    }
}

/// Background sampler; [`ResourceSampler::stop`] returns the collected
/// stream.
pub struct ResourceSampler {
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<Vec<MetricSample>>>,
}

/// Emits one sample per `interval_ms`, computing CPU percent from the change
/// in cumulative CPU time over the wall interval. The stream ends when the
/// scope disappears or the sampler is stopped.
pub fn sample_resources(scope: Scope, interval_ms: u64) -> ResourceSampler {
    let stop = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&stop);
    let interval = Duration::from_millis(interval_ms.max(1));
    let handle = std::thread::Builder::new()
        .name("edgecpd-sampler".into())
        .spawn(move || {
            let label = scope.label();
            let mut out = Vec::new();
            let Some((mut last_cpu, _)) = scope.read() else { return out };
            let mut last_ts = now_ns();
            while !flag.load(Ordering::SeqCst) {
                std::thread::sleep(interval);
                let Some((cpu, rss)) = scope.read() else { break };
                let ts = now_ns();
                let wall = (ts - last_ts).max(1) as f64;
                out.push(MetricSample {
                    ts_ns: ts,
                    cpu_percent: 100.0 * cpu.saturating_sub(last_cpu) as f64 / wall,
                    rss_bytes: rss,
                    scope: label.clone(),
                });
                last_cpu = cpu;
                last_ts = ts;
            }
            out
        })
        .expect("spawn sampler thread");
    ResourceSampler { stop, handle: Some(handle) }
}

impl ResourceSampler {
    pub fn stop(mut self) -> Vec<MetricSample> {
        self.stop.store(true, Ordering::SeqCst);
        self.handle.take().and_then(|h| h.join().ok()).unwrap_or_default()
    }
}

impl Drop for ResourceSampler {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
    }
}

pub fn core_count() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stat_parsing_handles_spaces_in_name() {
        let line = "42 (a b) R 1 2 3 4 5 6 7 8 9 10 300 200 0 0";
        assert_eq!(stat_cpu_ns(line), Some(500 * 1_000_000_000 / clock_ticks()));
    }

    #[test]
    fn own_process_is_observable() {
        let pid = std::process::id();
        assert!(process_cpu_ns(pid).is_some());
        assert!(process_rss_bytes(pid).unwrap() > 0);
        assert!(thread_cpu_ns(current_tid()).is_some());
    }

    #[test]
    fn retired_threads_keep_their_time() {
        let group = Arc::new(ThreadGroup::default());
        let g = Arc::clone(&group);
        std::thread::spawn(move || {
            let _guard = g.enter();
            let mut x = 0u64;
            let start = std::time::Instant::now();
            while start.elapsed() < Duration::from_millis(30) {
                x = x.wrapping_mul(31).wrapping_add(7);
            }
            std::hint::black_box(x);
        })
        .join()
        .unwrap();
        assert_eq!(group.live_threads(), 0);
        assert!(group.cpu_ns() > 1_000_000);
    }

    #[test]
    fn missing_process_ends_stream() {
        let s = sample_resources(Scope::Process(u32::MAX - 1), 5);
        std::thread::sleep(Duration::from_millis(20));
        assert!(s.stop().is_empty());
    }
}
