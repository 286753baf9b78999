use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// The line that called `promote`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Caller {
    T5,
    E5,
    A2,
}

/// A line inside `promote`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PLine {
    P1,
    P2,
    P3,
    P4,
    P5,
    P6,
}

/// A program-counter value.
///
/// Lines inside `promote` always carry the calling line, written
/// `T5::P3` and so on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LineId {
    Rem,
    T1,
    T2,
    T3,
    T4,
    T5,
    T6,
    T7,
    T8,
    Cs,
    E1,
    E2,
    E3,
    E4,
    E5,
    E6,
    Rec1,
    Rec2,
    A1,
    A2,
    A3,
    A4,
    A5,
    P(Caller, PLine),
}

/// The section a process is in, used for crash status and abort
/// eligibility.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Section {
    Remainder,
    Try,
    Critical,
    Exit,
    Recover,
}

impl LineId {
    pub fn promote(&self) -> Option<(Caller, PLine)> {
        match *self {
            LineId::P(c, l) => Some((c, l)),
            _ => None,
        }
    }

    pub fn is_pline(&self, line: PLine) -> bool {
        matches!(self.promote(), Some((_, l)) if l == line)
    }

    pub fn in_promote_from(&self, caller: Caller) -> bool {
        matches!(self.promote(), Some((c, _)) if c == caller)
    }

    /// `[T5, T7]` with the promote call at T5 expanded.
    pub fn in_t5_t7(&self) -> bool {
        matches!(self, LineId::T5 | LineId::T6 | LineId::T7) || self.in_promote_from(Caller::T5)
    }

    /// Lines in the abort procedure, including its promote call.
    pub fn in_abort(&self) -> bool {
        matches!(self, LineId::A1 | LineId::A2 | LineId::A3 | LineId::A4 | LineId::A5)
            || self.in_promote_from(Caller::A2)
    }
}

const PLINES: [PLine; 6] = [PLine::P1, PLine::P2, PLine::P3, PLine::P4, PLine::P5, PLine::P6];

impl PLine {
    pub fn number(self) -> u8 {
        PLINES.iter().position(|&l| l == self).unwrap() as u8 + 1
    }

    pub fn from_number(n: u8) -> Option<PLine> {
        PLINES.get((n as usize).checked_sub(1)?).copied()
    }
}

const SIMPLE: [(LineId, &str); 23] = [
    (LineId::Rem, "REM"),
    (LineId::T1, "T1"),
    (LineId::T2, "T2"),
    (LineId::T3, "T3"),
    (LineId::T4, "T4"),
    (LineId::T5, "T5"),
    (LineId::T6, "T6"),
    (LineId::T7, "T7"),
    (LineId::T8, "T8"),
    (LineId::Cs, "CS"),
    (LineId::E1, "E1"),
    (LineId::E2, "E2"),
    (LineId::E3, "E3"),
    (LineId::E4, "E4"),
    (LineId::E5, "E5"),
    (LineId::E6, "E6"),
    (LineId::Rec1, "REC1"),
    (LineId::Rec2, "REC2"),
    (LineId::A1, "A1"),
    (LineId::A2, "A2"),
    (LineId::A3, "A3"),
    (LineId::A4, "A4"),
    (LineId::A5, "A5"),
];

impl fmt::Display for Caller {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Caller::T5 => "T5",
            Caller::E5 => "E5",
            Caller::A2 => "A2",
        })
    }
}

impl fmt::Display for LineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LineId::P(caller, line) => write!(f, "{caller}::P{}", line.number()),
            other => {
                let name = SIMPLE.iter().find(|(l, _)| l == other).map(|(_, s)| *s).unwrap();
                f.write_str(name)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown line label `{0}`")]
pub struct ParseLineError(String);

impl FromStr for LineId {
    type Err = ParseLineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some((caller, line)) = s.split_once("::") {
            let caller = match caller {
                "T5" => Caller::T5,
                "E5" => Caller::E5,
                "A2" => Caller::A2,
                _ => return Err(ParseLineError(s.to_owned())),
            };
            let line = line
                .strip_prefix('P')
                .and_then(|d| d.parse::<u8>().ok())
                .and_then(PLine::from_number)
                .ok_or_else(|| ParseLineError(s.to_owned()))?;
            return Ok(LineId::P(caller, line));
        }
        SIMPLE
            .iter()
            .find(|(_, name)| *name == s)
            .map(|(l, _)| *l)
            .ok_or_else(|| ParseLineError(s.to_owned()))
    }
}

impl Serialize for LineId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LineId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_round_trip() {
        let mut all: Vec<LineId> = SIMPLE.iter().map(|(l, _)| *l).collect();
        for c in [Caller::T5, Caller::E5, Caller::A2] {
            for l in PLINES {
                all.push(LineId::P(c, l));
            }
        }
        for line in all {
            assert_eq!(line.to_string().parse::<LineId>().unwrap(), line);
        }
        assert_eq!(LineId::P(Caller::A2, PLine::P3).to_string(), "A2::P3");
        assert!("T9".parse::<LineId>().is_err());
        assert!("X1::P1".parse::<LineId>().is_err());
    }

    #[test]
    fn range_helpers_expand_promote() {
        assert!(LineId::P(Caller::T5, PLine::P6).in_t5_t7());
        assert!(!LineId::P(Caller::E5, PLine::P1).in_t5_t7());
        assert!(LineId::P(Caller::A2, PLine::P1).in_abort());
    }
}
