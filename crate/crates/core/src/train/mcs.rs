use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::Condition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McsMode {
    Fixed,
    /// Each batch slot draws its condition uniformly.
    Random,
}

/// Number of DT, STFE and STNE sequences per minibatch, written `d/f/n`
/// or `random`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct MinibatchConditionSplit {
    pub dt_count: usize,
    pub stfe_count: usize,
    pub stne_count: usize,
    pub mode: McsMode,
}

impl MinibatchConditionSplit {
    pub fn fixed(dt: usize, stfe: usize, stne: usize) -> Self {
        Self { dt_count: dt, stfe_count: stfe, stne_count: stne, mode: McsMode::Fixed }
    }

    pub fn random() -> Self {
        Self { dt_count: 0, stfe_count: 0, stne_count: 0, mode: McsMode::Random }
    }

    pub fn count(&self, c: Condition) -> usize {
        match c {
            Condition::Dt => self.dt_count,
            Condition::Stfe => self.stfe_count,
            Condition::Stne => self.stne_count,
        }
    }

    pub fn validate(&self, batch_size: usize) -> Result<()> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.mode == McsMode::Fixed {
            let sum = self.dt_count + self.stfe_count + self.stne_count;
            if sum != batch_size {
                return Err(Error::Config(format!("split {self} has {sum} sequences, batch size is {batch_size}")));
            }
        }
        Ok(())
    }

    /// Conditions of the batch slots in DT, STFE, STNE order.
    pub fn draw(&self, rng: &mut impl Rng, batch_size: usize) -> Vec<Condition> {
        match self.mode {
            McsMode::Fixed => Condition::ALL
                .iter()
                .flat_map(|&c| std::iter::repeat(c).take(self.count(c)))
                .collect(),
            McsMode::Random => {
                let mut v: Vec<Condition> = (0..batch_size).map(|_| Condition::ALL[rng.gen_range(0..3)]).collect();
                v.sort_by_key(|c| Condition::ALL.iter().position(|a| a == c));
                v
            }
        }
    }

    /// Conditions that can occur in a batch.
    pub fn conditions(&self) -> Vec<Condition> {
        match self.mode {
            McsMode::Fixed => Condition::ALL.into_iter().filter(|&c| self.count(c) > 0).collect(),
            McsMode::Random => Condition::ALL.to_vec(),
        }
    }
}

impl fmt::Display for MinibatchConditionSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.mode {
            McsMode::Fixed => write!(f, "{}/{}/{}", self.dt_count, self.stfe_count, self.stne_count),
            McsMode::Random => f.write_str("random"),
        }
    }
}

impl FromStr for MinibatchConditionSplit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("random") || t.eq_ignore_ascii_case("rand") {
            return Ok(Self::random());
        }
        let parts: Vec<_> = t.trim_matches(|c| c == '(' || c == ')').split('/').collect();
        let bad = || Error::Config(format!("minibatch split `{s}` is neither `d/f/n` nor `random`"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let n: Vec<usize> = parts.iter().map(|p| p.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?;
        Ok(Self::fixed(n[0], n[1], n[2]))
    }
}

impl TryFrom<String> for MinibatchConditionSplit {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<MinibatchConditionSplit> for String {
    fn from(m: MinibatchConditionSplit) -> String {
        m.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display() {
        let m: MinibatchConditionSplit = "13/2/1".parse().unwrap();
        assert_eq!(m, MinibatchConditionSplit::fixed(13, 2, 1));
        assert_eq!(m.to_string(), "13/2/1");
        assert_eq!("(16/0/0)".parse::<MinibatchConditionSplit>().unwrap().dt_count, 16);
        assert_eq!("random".parse::<MinibatchConditionSplit>().unwrap().mode, McsMode::Random);
        for bad in ["16/0", "a/b/c", "", "1/2/3/4"] {
            assert!(bad.parse::<MinibatchConditionSplit>().is_err(), "{bad}");
        }
    }

    #[test]
    fn fixed_split_must_fill_batch() {
        assert!(MinibatchConditionSplit::fixed(15, 1, 0).validate(16).is_ok());
        assert!(MinibatchConditionSplit::fixed(15, 0, 0).validate(16).is_err());
        assert!(MinibatchConditionSplit::random().validate(16).is_ok());
    }

    #[test]
    fn serde_as_string() {
        let m = MinibatchConditionSplit::fixed(8, 8, 0);
        let j = serde_json::to_string(&m).unwrap();
        assert_eq!(j, "\"8/8/0\"");
        assert_eq!(serde_json::from_str::<MinibatchConditionSplit>(&j).unwrap(), m);
    }
}
