//! Context-free grammar of stacking tasks.
//!
//! ```text
//! G -> 1b S | 2b W | 1l W
//! W -> S | L
//! S -> 1b S | 1b | 1r
//! L -> 1l W | 2b W | 1l | 2b | 2r
//! ```
//!
//! Terminals are two characters wide, so task names tokenize greedily.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Terminal {
    /// `1b`: one cube.
    OneBlock,
    /// `2b`: two cubes side by side.
    TwoBlocks,
    /// `1l`: one brick spanning two cells.
    Brick,
    /// `1r`: short roof.
    ShortRoof,
    /// `2r`: long roof spanning two cells.
    LongRoof,
}

impl Terminal {
    pub const ALL: [Terminal; 5] = [
        Terminal::OneBlock,
        Terminal::TwoBlocks,
        Terminal::Brick,
        Terminal::ShortRoof,
        Terminal::LongRoof,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Terminal::OneBlock => "1b",
            Terminal::TwoBlocks => "2b",
            Terminal::Brick => "1l",
            Terminal::ShortRoof => "1r",
            Terminal::LongRoof => "2r",
        }
    }

    pub fn from_token(tok: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.token() == tok)
    }

    pub fn is_roof(self) -> bool {
        matches!(self, Terminal::ShortRoof | Terminal::LongRoof)
    }

    /// Two cells wide.
    pub fn is_long(self) -> bool {
        matches!(
            self,
            Terminal::TwoBlocks | Terminal::Brick | Terminal::LongRoof
        )
    }
}

impl fmt::Display for Terminal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum NonTerminal {
    Ground,
    Wild,
    Short,
    Long,
}

/// A goal structure, bottom layer first.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct StackTask {
    name: String,
    layers: Vec<Terminal>,
}

impl StackTask {
    pub fn from_layers(layers: Vec<Terminal>) -> Result<Self> {
        let name: String = layers.iter().map(|t| t.token()).collect();
        if !derivation_valid(&layers) {
            return Err(Error::NotDerivable(name));
        }
        Ok(Self { name, layers })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layers(&self) -> &[Terminal] {
        &self.layers
    }

    pub fn height(&self) -> usize {
        self.layers.len()
    }
}

impl fmt::Display for StackTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

impl TryFrom<String> for StackTask {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        parse_task(&s)
    }
}

impl From<StackTask> for String {
    fn from(t: StackTask) -> String {
        t.name
    }
}

impl std::str::FromStr for StackTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_task(s)
    }
}

/// Splits a name into two-character terminals.
pub fn tokenize(name: &str) -> Result<Vec<Terminal>> {
    if !name.is_ascii() || name.len() % 2 != 0 {
        return Err(Error::UnknownToken(name.to_string()));
    }
    (0..name.len())
        .step_by(2)
        .map(|i| {
            let tok = &name[i..i + 2];
            Terminal::from_token(tok).ok_or_else(|| Error::UnknownToken(tok.to_string()))
        })
        .collect()
}

pub fn parse_task(name: &str) -> Result<StackTask> {
    let layers = tokenize(name)?;
    if !derivation_valid(&layers) {
        return Err(Error::NotDerivable(name.to_string()));
    }
    Ok(StackTask {
        name: name.to_string(),
        layers,
    })
}

/// Recognizer: true iff `layers` is derivable from the start symbol.
pub fn derivation_valid(layers: &[Terminal]) -> bool {
    derives(NonTerminal::Ground, layers)
}

fn derives(nt: NonTerminal, s: &[Terminal]) -> bool {
    use NonTerminal::*;
    use Terminal::*;
    let Some((&first, rest)) = s.split_first() else {
        return false;
    };
    match nt {
        Ground => match first {
            OneBlock => derives(Short, rest),
            TwoBlocks | Brick => derives(Wild, rest),
            _ => false,
        },
        Wild => derives(Short, s) || derives(Long, s),
        Short => match first {
            OneBlock => rest.is_empty() || derives(Short, rest),
            ShortRoof => rest.is_empty(),
            _ => false,
        },
        Long => match first {
            Brick | TwoBlocks => rest.is_empty() || derives(Wild, rest),
            LongRoof => rest.is_empty(),
            _ => false,
        },
    }
}

/// Generator: every terminal string derivable in at most `budget` layers.
fn generate(nt: NonTerminal, budget: usize) -> Vec<Vec<Terminal>> {
    use NonTerminal::*;
    use Terminal::*;
    if budget == 0 {
        return Vec::new();
    }
    let prefixed = |t: Terminal, next: NonTerminal| -> Vec<Vec<Terminal>> {
        generate(next, budget - 1)
            .into_iter()
            .map(|mut tail| {
                tail.insert(0, t);
                tail
            })
            .collect()
    };
    match nt {
        Ground => {
            let mut out = prefixed(OneBlock, Short);
            out.extend(prefixed(TwoBlocks, Wild));
            out.extend(prefixed(Brick, Wild));
            out
        }
        Wild => {
            let mut out = generate(Short, budget);
            out.extend(generate(Long, budget));
            out
        }
        Short => {
            let mut out = prefixed(OneBlock, Short);
            out.push(vec![OneBlock]);
            out.push(vec![ShortRoof]);
            out
        }
        Long => {
            let mut out = prefixed(Brick, Wild);
            out.extend(prefixed(TwoBlocks, Wild));
            out.extend([vec![Brick], vec![TwoBlocks], vec![LongRoof]]);
            out
        }
    }
}

/// All distinct tasks of at most `max_height` layers, optionally only those
/// topped by a roof, sorted by name.
pub fn enumerate_tasks(max_height: usize, roof_required: bool) -> Result<Vec<StackTask>> {
    if max_height == 0 {
        return Err(Error::InvalidArgument(
            "max_height must be at least 1".into(),
        ));
    }
    let mut tasks: Vec<StackTask> = generate(NonTerminal::Ground, max_height)
        .into_iter()
        .filter(|l| !roof_required || l.last().is_some_and(|t| t.is_roof()))
        .map(|layers| StackTask {
            name: layers.iter().map(|t| t.token()).collect(),
            layers,
        })
        .collect();
    tasks.sort_by(|a, b| a.name.cmp(&b.name));
    tasks.dedup();
    Ok(tasks)
}
