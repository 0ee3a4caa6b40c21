//! Step-level episode traces.

use std::fs::File;
use std::path::Path;

use super::control::ControlStep;
use crate::action::{Action, NUM_ACTIONS};
use crate::dqn::QValues;
use crate::error::Result;
use crate::sim::{Intention, World};

/// Writes one CSV row per simulation step. Rows of a decision interval are
/// held back until the interval's reward is known; the reward goes on the
/// interval's first row.
pub struct TraceWriter {
    writer: csv::Writer<File>,
    pending: Vec<Vec<String>>,
    reward_col: usize,
}

fn intention_name(i: Intention) -> &'static str {
    match i {
        Intention::TakeWay => "take_way",
        Intention::GiveWay => "give_way",
        Intention::Cautious => "cautious",
    }
}

impl TraceWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self { writer: csv::Writer::from_path(path)?, pending: Vec::new(), reward_col: 0 })
    }

    pub fn begin(&mut self, world: &World) -> Result<()> {
        let mut header: Vec<String> =
            ["step", "time", "ego_p", "ego_v", "ego_a", "jerk", "action"].iter().map(|s| s.to_string()).collect();
        header.extend(Action::ALL.iter().map(|a| format!("q_{a}")));
        self.reward_col = header.len();
        header.extend(
            ["reward", "feasible", "p_comf", "plan_p_end", "plan_v_end"].iter().map(|s| s.to_string()),
        );
        for i in 0..world.traffic().len() {
            for field in ["path", "intention", "active", "p", "v", "a"] {
                header.push(format!("veh{i}_{field}"));
            }
        }
        self.writer.write_record(&header)?;
        Ok(())
    }

    pub fn row(
        &mut self,
        world: &World,
        jerk: f64,
        action: Action,
        q: Option<&QValues>,
        step: &ControlStep,
    ) -> Result<()> {
        let ego = world.ego();
        let mut row = vec![
            world.step_count().to_string(),
            world.elapsed().to_string(),
            ego.p.to_string(),
            ego.v.to_string(),
            ego.a.to_string(),
            jerk.to_string(),
            action.to_string(),
        ];
        for i in 0..NUM_ACTIONS {
            row.push(q.map_or_else(String::new, |q| q[i].to_string()));
        }
        row.push(String::new());
        row.push((!step.p_crash).to_string());
        row.push(step.p_comf.map_or_else(String::new, |c| c.to_string()));
        let end = step.plan.as_ref().and_then(|p| p.states.last());
        row.push(end.map_or_else(String::new, |s| s.p.to_string()));
        row.push(end.map_or_else(String::new, |s| s.v.to_string()));
        for t in world.traffic() {
            row.push(t.path.to_string());
            row.push(intention_name(t.intention).to_string());
            row.push(t.active.to_string());
            row.push(t.state.p.to_string());
            row.push(t.state.v.to_string());
            row.push(t.state.a.to_string());
        }
        self.pending.push(row);
        Ok(())
    }

    pub fn set_reward(&mut self, reward: f64) -> Result<()> {
        if let Some(first) = self.pending.first_mut() {
            first[self.reward_col] = reward.to_string();
        }
        for row in self.pending.drain(..) {
            self.writer.write_record(&row)?;
        }
        Ok(())
    }

    pub fn finish(&mut self) -> Result<()> {
        for row in self.pending.drain(..) {
            self.writer.write_record(&row)?;
        }
        self.writer.flush()?;
        Ok(())
    }
}
