use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::vocab::TokenKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Semseg,
    Res,
    Rec,
    Caption,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Semseg, Task::Res, Task::Rec, Task::Caption];

    /// Token kind every non-special target token of this task must have.
    pub fn output_kind(self) -> TokenKind {
        match self {
            Task::Semseg | Task::Res => TokenKind::Visual,
            Task::Rec => TokenKind::Positional,
            Task::Caption => TokenKind::Text,
        }
    }

    pub fn is_dense(self) -> bool {
        matches!(self, Task::Semseg | Task::Res)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Semseg => "semseg",
            Task::Res => "res",
            Task::Rec => "rec",
            Task::Caption => "caption",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown task {s:?} (expected semseg, res, rec or caption)")))
    }
}
