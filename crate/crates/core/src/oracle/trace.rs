//! Plain-text operation traces, one op per line:
//!
//! ```text
//! A        allocate
//! F 3      free the fourth-oldest live element
//! R        retire empty bins
//! ```

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Op {
    Alloc,
    /// Free the k-th oldest live element (0 = oldest).
    Free(usize),
    Retire,
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::Alloc => f.write_str("A"),
            Op::Free(k) => write!(f, "F {k}"),
            Op::Retire => f.write_str("R"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: cannot parse {text:?}")]
pub struct ParseTraceError {
    pub line: usize,
    pub text: String,
}

impl FromStr for Op {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        let mut parts = s.split_whitespace();
        let op = match (parts.next(), parts.next()) {
            (Some("A"), None) => Op::Alloc,
            (Some("R"), None) => Op::Retire,
            (Some("F"), Some(k)) => Op::Free(k.parse().map_err(|_| ())?),
            _ => return Err(()),
        };
        if parts.next().is_some() {
            return Err(());
        }
        Ok(op)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace(pub Vec<Op>);

impl Trace {
    pub fn ops(&self) -> &[Op] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for Trace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for op in &self.0 {
            writeln!(f, "{op}")?;
        }
        Ok(())
    }
}

impl FromStr for Trace {
    type Err = ParseTraceError;

    /// Blank lines and lines starting with `#` are skipped.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
            .map(|(n, l)| {
                l.trim().parse().map_err(|_| ParseTraceError {
                    line: n + 1,
                    text: l.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Trace)
    }
}
