use std::fmt;

use serde::{Deserialize, Serialize};

/// Number of observed vehicle slots.
pub const MAX_VEHICLES: usize = 4;
/// Size of the action space.
pub const NUM_ACTIONS: usize = 2 + MAX_VEHICLES;

/// High-level decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    /// Pass every crossing before the other vehicles.
    TakeWay,
    /// Stay behind every crossing while vehicles occupy it.
    GiveWay,
    /// Cross behind the vehicle in the given observation slot.
    Follow(usize),
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [
        Action::TakeWay,
        Action::GiveWay,
        Action::Follow(0),
        Action::Follow(1),
        Action::Follow(2),
        Action::Follow(3),
    ];

    pub fn index(self) -> usize {
        match self {
            Action::TakeWay => 0,
            Action::GiveWay => 1,
            Action::Follow(j) => 2 + j,
        }
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::TakeWay => f.write_str("take_way"),
            Action::GiveWay => f.write_str("give_way"),
            Action::Follow(j) => write!(f, "follow_{j}"),
        }
    }
}
