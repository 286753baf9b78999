//! Multi-threaded stress harness with crash and abort injection.

use std::sync::atomic::Ordering::{Relaxed, SeqCst};
use std::sync::atomic::{AtomicBool, AtomicU32, AtomicU64};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rme_core::model::{LineId, Status};
use rme_core::Pid;
use serde::{Deserialize, Serialize};

use crate::fault::CrashPlan;
use crate::lock::{Lock, LockError, Outcome, Session, SessionError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StressParams {
    pub threads: usize,
    /// Attempts (calls to try) per thread.
    pub passages: u64,
    /// Probability that an attempt's passage crashes somewhere.
    pub crash_rate: f64,
    /// Probability that the abort signal is raised for an attempt.
    pub abort_rate: f64,
    pub seed: u64,
    /// No attempt finishing anywhere for this long counts as a deadlock.
    #[serde(with = "secs")]
    pub stall_timeout: Duration,
}

impl StressParams {
    pub fn new(threads: usize, passages: u64, seed: u64) -> Self {
        StressParams {
            threads,
            passages,
            crash_rate: 0.01,
            abort_rate: 0.01,
            seed,
            stall_timeout: Duration::from_secs(10),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StressReport {
    pub params: Option<StressParams>,
    pub attempts: u64,
    /// IN_CS returns from try and recover.
    pub cs_entries: u64,
    /// Final value of the counter incremented with a plain load and store
    /// inside the critical section.
    pub counter: u64,
    pub crashes: u64,
    pub recoveries: u64,
    /// Attempts whose try returned IN_REM.
    pub aborted: u64,
    /// Entries that found another live process in the critical section.
    pub mutex_violations: u64,
    /// Entries that found a crashed owner still out of the critical section.
    pub csr_violations: u64,
    /// Recoveries after a crash in the critical section that did not return
    /// IN_CS.
    pub lost_cs: u64,
    pub stalled: bool,
    #[serde(with = "secs")]
    pub elapsed: Duration,
}

impl StressReport {
    pub fn is_clean(&self) -> bool {
        self.counter == self.cs_entries
            && self.mutex_violations == 0
            && self.csr_violations == 0
            && self.lost_cs == 0
            && !self.stalled
    }
}

mod secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_secs_f64(f64::deserialize(d)?))
    }
}

/// Shared instrumentation outside the lock.
struct Stage {
    /// Pid in the critical section according to the harness, 0 if none.
    owner: AtomicU32,
    /// Per pid: crashed inside the critical section and not yet back.
    crashed_in_cs: Vec<AtomicBool>,
    counter: AtomicU64,
    progress: AtomicU64,
    stalled: AtomicBool,
    mutex_violations: AtomicU64,
    csr_violations: AtomicU64,
}

#[derive(Default)]
struct Tally {
    attempts: u64,
    cs_entries: u64,
    crashes: u64,
    recoveries: u64,
    aborted: u64,
    lost_cs: u64,
}

/// Crash points a try + exit passage passes through, roughly; armed crashes
/// pick a point uniformly below this.
fn passage_points(n: usize) -> u64 {
    let levels = rme_core::registry::TreeShape::new(n).levels() as u64;
    2 * (8 * levels + 3) + 20
}

fn mix(seed: u64, i: u64) -> u64 {
    let mut z = seed ^ (i.wrapping_add(1)).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

struct Worker<'a> {
    stage: &'a Stage,
    session: Session<'a>,
    rng: ChaCha8Rng,
    params: &'a StressParams,
    tally: Tally,
    points: u64,
    /// Crash inside the critical section on the next entry.
    cs_crash: bool,
}

impl Worker<'_> {
    fn pid(&self) -> u32 {
        self.session.pid().get()
    }

    fn crashed(&mut self, e: SessionError) {
        match e {
            SessionError::Crashed(point) => {
                self.tally.crashes += 1;
                if point.line == LineId::Cs {
                    // exit crashed before its first line: still the owner
                    self.stage.owner.store(self.pid(), SeqCst);
                    self.stage.crashed_in_cs[self.session.pid().index()].store(true, SeqCst);
                }
            }
            e => panic!("harness misuse: {e}"),
        }
    }

    /// Run the critical section and exit.
    fn critical(&mut self, reentry: bool) {
        let me = self.pid();
        let prev = self.stage.owner.swap(me, SeqCst);
        if prev != 0 && !(reentry && prev == me) {
            if self.stage.crashed_in_cs[prev as usize - 1].load(SeqCst) {
                self.stage.csr_violations.fetch_add(1, SeqCst);
            } else {
                self.stage.mutex_violations.fetch_add(1, SeqCst);
            }
        }
        self.stage.crashed_in_cs[me as usize - 1].store(false, SeqCst);
        self.tally.cs_entries += 1;
        let c = self.stage.counter.load(Relaxed);
        std::hint::spin_loop();
        self.stage.counter.store(c + 1, Relaxed);
        if std::mem::take(&mut self.cs_crash) {
            self.stage.crashed_in_cs[me as usize - 1].store(true, SeqCst);
            self.session.crash().unwrap_err();
            self.tally.crashes += 1;
            return;
        }
        self.stage.owner.store(0, SeqCst);
        if let Err(e) = self.session.exit() {
            self.crashed(e);
        }
    }

    fn recover(&mut self) {
        let was_cs = self.session.status() == Status::RecCs;
        self.arm();
        self.tally.recoveries += 1;
        match self.session.recover() {
            Ok(Outcome::InCs) => {
                self.disarm();
                self.critical(was_cs);
            }
            Ok(Outcome::InRem) => {
                self.disarm();
                if was_cs {
                    self.tally.lost_cs += 1;
                }
            }
            Err(e) => self.crashed(e),
        }
    }

    fn arm(&mut self) {
        if self.rng.gen_bool(self.params.crash_rate) {
            // one crash in five lands inside the critical section
            if self.rng.gen_bool(0.2) {
                self.cs_crash = true;
            } else {
                let k = self.rng.gen_range(0..self.points);
                self.session.set_crash_plan(CrashPlan::After(k));
            }
        }
    }

    fn disarm(&mut self) {
        self.cs_crash = false;
        self.session.set_crash_plan(CrashPlan::Never);
    }

    fn run(mut self) -> Tally {
        let me = self.session.pid();
        while self.tally.attempts < self.params.passages && !self.stage.stalled.load(Relaxed) {
            if self.session.status() != Status::Good {
                self.recover();
                continue;
            }
            self.tally.attempts += 1;
            let abort = self.rng.gen_bool(self.params.abort_rate);
            if abort {
                self.session.lock().set_abort(me, true).unwrap();
            }
            self.arm();
            let r = self.session.try_lock();
            if abort {
                self.session.lock().set_abort(me, false).unwrap();
            }
            match r {
                Ok(Outcome::InCs) => self.critical(false),
                Ok(Outcome::InRem) => self.tally.aborted += 1,
                Err(e) => self.crashed(e),
            }
            if !self.session.in_cs() && self.session.status() == Status::Good {
                self.disarm();
            }
            self.stage.progress.fetch_add(1, Relaxed);
        }
        while self.session.status() != Status::Good && !self.stage.stalled.load(Relaxed) {
            self.disarm();
            self.recover();
        }
        self.tally
    }
}

/// Run `threads` workers on one lock, each making `passages` attempts.
pub fn run(params: &StressParams) -> Result<StressReport, LockError> {
    let n = params.threads;
    let lock = Lock::new(n)?;
    let stage = Stage {
        owner: AtomicU32::new(0),
        crashed_in_cs: (0..n).map(|_| AtomicBool::new(false)).collect(),
        counter: AtomicU64::new(0),
        progress: AtomicU64::new(0),
        stalled: AtomicBool::new(false),
        mutex_violations: AtomicU64::new(0),
        csr_violations: AtomicU64::new(0),
    };
    let start = Instant::now();
    let finished = AtomicU64::new(0);
    let tallies: Vec<Tally> = std::thread::scope(|s| {
        let handles: Vec<_> = Pid::all(n)
            .map(|p| {
                let session = lock.session(p)?;
                let worker = Worker {
                    stage: &stage,
                    session,
                    rng: ChaCha8Rng::seed_from_u64(mix(params.seed, p.index() as u64)),
                    params,
                    tally: Tally::default(),
                    points: passage_points(n),
                    cs_crash: false,
                };
                let finished = &finished;
                Ok(s.spawn(move || {
                    let t = worker.run();
                    finished.fetch_add(1, SeqCst);
                    t
                }))
            })
            .collect::<Result<_, LockError>>()?;
        let mut last = (0, Instant::now());
        while finished.load(SeqCst) < n as u64 {
            std::thread::sleep(Duration::from_millis(20));
            let now = stage.progress.load(Relaxed);
            if now != last.0 {
                last = (now, Instant::now());
            } else if last.1.elapsed() > params.stall_timeout && !stage.stalled.load(SeqCst) {
                // release every waiter so the run can end and report
                stage.stalled.store(true, SeqCst);
                for p in Pid::all(n) {
                    lock.set_abort(p, true).unwrap();
                }
            }
        }
        Ok::<_, LockError>(handles.into_iter().map(|h| h.join().expect("worker panicked")).collect())
    })?;
    let mut r = StressReport { params: Some(params.clone()), ..Default::default() };
    for t in tallies {
        r.attempts += t.attempts;
        r.cs_entries += t.cs_entries;
        r.crashes += t.crashes;
        r.recoveries += t.recoveries;
        r.aborted += t.aborted;
        r.lost_cs += t.lost_cs;
    }
    r.counter = stage.counter.load(SeqCst);
    r.mutex_violations = stage.mutex_violations.load(SeqCst);
    r.csr_violations = stage.csr_violations.load(SeqCst);
    r.stalled = stage.stalled.load(SeqCst);
    r.elapsed = start.elapsed();
    Ok(r)
}
