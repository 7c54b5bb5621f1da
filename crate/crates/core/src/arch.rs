//! Exit-head architecture options.
//!
//! Each early exit is described by four independent options: channel
//! reduction before the head, number of extra trainable blocks, whether the
//! dilation rate doubles per block, and the segmentation head type. The
//! product of the option sets gives 64 distinct architectures per exit point.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Output segmentation head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Head {
    Fcn,
    Dlb,
}

/// One exit head's option tuple.
///
/// `crm` indexes the channel reduction factor (`/1, /2, /4, /8`), `num_blocks`
/// is the number of extra blocks appended after the reduction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ExitArch {
    pub crm: u8,
    pub num_blocks: u8,
    pub rdi: bool,
    pub head: Head,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid exit architecture code {0:?}; expected c<0-3>b<0-3>r<0|1>h<0|1>")]
pub struct ParseArchError(pub String);

impl ExitArch {
    pub const COUNT: usize = 64;

    pub fn new(crm: u8, num_blocks: u8, rdi: bool, head: Head) -> Option<Self> {
        (crm < 4 && num_blocks < 4).then_some(Self {
            crm,
            num_blocks,
            rdi,
            head,
        })
    }

    /// Dense index in `0..64`.
    pub fn index(self) -> usize {
        (self.crm as usize) << 4
            | (self.num_blocks as usize) << 2
            | (self.rdi as usize) << 1
            | (self.head == Head::Dlb) as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        if index >= Self::COUNT {
            return None;
        }
        Some(Self {
            crm: (index >> 4) as u8,
            num_blocks: ((index >> 2) & 3) as u8,
            rdi: (index >> 1) & 1 == 1,
            head: if index & 1 == 1 { Head::Dlb } else { Head::Fcn },
        })
    }

    /// Every architecture in index order.
    pub fn all() -> impl Iterator<Item = ExitArch> {
        (0..Self::COUNT).filter_map(Self::from_index)
    }

    /// Channel reduction divisor (1, 2, 4 or 8).
    pub fn channel_divisor(self) -> u32 {
        1 << self.crm
    }
}

impl fmt::Display for ExitArch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "c{}b{}r{}h{}",
            self.crm,
            self.num_blocks,
            self.rdi as u8,
            (self.head == Head::Dlb) as u8
        )
    }
}

impl FromStr for ExitArch {
    type Err = ParseArchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseArchError(s.to_string());
        let b = s.as_bytes();
        if b.len() != 8 || b[0] != b'c' || b[2] != b'b' || b[4] != b'r' || b[6] != b'h' {
            return Err(err());
        }
        let digit = |c: u8| c.checked_sub(b'0').filter(|d| *d <= 9).ok_or_else(err);
        let (crm, blocks, rdi, head) = (digit(b[1])?, digit(b[3])?, digit(b[5])?, digit(b[7])?);
        if rdi > 1 || head > 1 {
            return Err(err());
        }
        let head = if head == 1 { Head::Dlb } else { Head::Fcn };
        ExitArch::new(crm, blocks, rdi == 1, head).ok_or_else(err)
    }
}

impl Serialize for ExitArch {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ExitArch {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
