//! Crash points, crash plans and the step recorder.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rme_core::model::{ActionKind, LineId, Method, Outcome, SharedOp, StepEffect};
use rme_core::Pid;

/// A place a session can crash: just before `line` runs, or inside the
/// registry write at `line` after `sub` of its node operations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CrashPoint {
    pub line: LineId,
    pub sub: u32,
}

impl CrashPoint {
    pub fn before(line: LineId) -> Self {
        CrashPoint { line, sub: 0 }
    }
}

impl fmt::Display for CrashPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.sub == 0 {
            write!(f, "{}", self.line)
        } else {
            write!(f, "{}+{}", self.line, self.sub)
        }
    }
}

/// Which crash points a probabilistic rule applies to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PointMatch {
    Any,
    /// The line itself and every operation inside it.
    Line(LineId),
}

impl PointMatch {
    fn matches(self, p: CrashPoint) -> bool {
        match self {
            PointMatch::Any => true,
            PointMatch::Line(l) => l == p.line,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("bad crash rule `{0}` (expected LINE:PROB or *:PROB, e.g. T5::P3:0.1)")]
pub struct ParsePlanError(String);

/// Decides, at every crash point a session passes, whether it crashes there.
#[derive(Clone, Debug, Default)]
pub enum CrashPlan {
    #[default]
    Never,
    /// Crash at the first matching point, once.
    At(CrashPoint),
    /// Crash at the point `k` points from now (0 = the next one), once.
    After(u64),
    /// Crash independently at each matching point with the rule's
    /// probability; the first matching rule wins.
    Random { rules: Vec<(PointMatch, f64)>, rng: Box<ChaCha8Rng> },
}

/// Environment variable read by [`CrashPlan::from_env`].
pub const CRASH_POINTS_VAR: &str = "RME_CRASH_POINTS";

impl CrashPlan {
    pub fn random(rules: Vec<(PointMatch, f64)>, seed: u64) -> Self {
        CrashPlan::Random { rules, rng: Box::new(ChaCha8Rng::seed_from_u64(seed)) }
    }

    /// Parse `LINE:PROB` rules separated by commas, `*` for any line:
    /// `"T4:0.05,A2::P6:0.5,*:0.001"`.
    pub fn parse(spec: &str, seed: u64) -> Result<Self, ParsePlanError> {
        let mut rules = Vec::new();
        for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let bad = || ParsePlanError(item.to_owned());
            let (line, prob) = item.rsplit_once(':').ok_or_else(bad)?;
            let prob: f64 = prob.parse().map_err(|_| bad())?;
            if !(0.0..=1.0).contains(&prob) {
                return Err(bad());
            }
            let m = if line == "*" { PointMatch::Any } else { PointMatch::Line(LineId::from_str(line).map_err(|_| bad())?) };
            rules.push((m, prob));
        }
        Ok(CrashPlan::random(rules, seed))
    }

    /// The plan in [`CRASH_POINTS_VAR`], or [`CrashPlan::Never`] if unset.
    pub fn from_env(seed: u64) -> Result<Self, ParsePlanError> {
        match std::env::var(CRASH_POINTS_VAR) {
            Ok(spec) => Self::parse(&spec, seed),
            Err(_) => Ok(CrashPlan::Never),
        }
    }

    pub(crate) fn fires(&mut self, p: CrashPoint) -> bool {
        match self {
            CrashPlan::Never => false,
            CrashPlan::At(at) => {
                let hit = *at == p;
                if hit {
                    *self = CrashPlan::Never;
                }
                hit
            }
            CrashPlan::After(k) => {
                if *k == 0 {
                    *self = CrashPlan::Never;
                    true
                } else {
                    *k -= 1;
                    false
                }
            }
            CrashPlan::Random { rules, rng } => match rules.iter().find(|(m, _)| m.matches(p)) {
                Some(&(_, prob)) => prob > 0.0 && rng.gen_bool(prob),
                None => false,
            },
        }
    }
}

/// Builds the per-step effect stream of a session, in the same shape the
/// model produces.
#[derive(Debug, Default)]
pub(crate) struct Recorder {
    open: Option<StepEffect>,
    done: Vec<StepEffect>,
}

impl Recorder {
    fn effect(actor: Pid, kind: ActionKind, line: LineId, invoke: Option<Method>) -> StepEffect {
        StepEffect {
            actor,
            kind,
            invoke,
            line,
            next: line,
            ops: Vec::new(),
            env_ops: Vec::new(),
            composite: false,
            outcome: None,
        }
    }

    pub(crate) fn invoke(&mut self, p: Pid, m: Method) {
        self.close(LineId::Rem);
        self.open = Some(Self::effect(p, ActionKind::Normal, LineId::Rem, Some(m)));
    }

    /// A new step starts at `line`; the open one ends there.
    pub(crate) fn begin(&mut self, p: Pid, line: LineId) {
        self.close(line);
        self.open = Some(Self::effect(p, ActionKind::Normal, line, None));
    }

    pub(crate) fn close(&mut self, next: LineId) {
        if let Some(mut fx) = self.open.take() {
            fx.next = next;
            self.done.push(fx);
        }
    }

    pub(crate) fn crash(&mut self, p: Pid, at: LineId) {
        self.close(at);
        let mut fx = Self::effect(p, ActionKind::Crash, at, None);
        fx.next = LineId::Rem;
        self.done.push(fx);
    }

    pub(crate) fn op(&mut self, op: SharedOp) {
        if let Some(fx) = self.open.as_mut() {
            fx.ops.push(op);
        }
    }

    pub(crate) fn composite(&mut self) {
        if let Some(fx) = self.open.as_mut() {
            fx.composite = true;
        }
    }

    pub(crate) fn outcome(&mut self, o: Outcome) {
        if let Some(fx) = self.open.as_mut() {
            fx.outcome = Some(o);
        }
    }

    pub(crate) fn take(&mut self) -> Vec<StepEffect> {
        std::mem::take(&mut self.done)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_rules() {
        let plan = CrashPlan::parse("T4:0.5, A2::P6:1, *:0", 1).unwrap();
        let CrashPlan::Random { rules, .. } = plan else { panic!() };
        assert_eq!(rules.len(), 3);
        assert_eq!(rules[1].0, PointMatch::Line("A2::P6".parse().unwrap()));
        assert!(CrashPlan::parse("T9:0.1", 1).is_err());
        assert!(CrashPlan::parse("T1:2", 1).is_err());
        assert!(CrashPlan::parse("T1", 1).is_err());
    }

    #[test]
    fn one_shot_plans() {
        let mut p = CrashPlan::After(2);
        let pts: Vec<bool> = (0..4).map(|_| p.fires(CrashPoint::before(LineId::T1))).collect();
        assert_eq!(pts, [false, false, true, false]);
        let at = CrashPoint { line: LineId::T4, sub: 3 };
        let mut p = CrashPlan::At(at);
        assert!(!p.fires(CrashPoint::before(LineId::T4)));
        assert!(p.fires(at));
        assert!(!p.fires(at));
        let mut p = CrashPlan::parse("T1:1", 0).unwrap();
        assert!(p.fires(CrashPoint::before(LineId::T1)));
        assert!(!p.fires(CrashPoint::before(LineId::T2)));
    }
}
