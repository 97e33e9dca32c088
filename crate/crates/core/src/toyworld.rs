//! Two catch-the-falling-object grid games that share an observation and
//! action space but pay rewards on different scales.
//!
//! A paddle sits on the bottom row of an `n x n` grid. One object at a time
//! falls from the top row, one row per step. When it reaches the bottom row
//! the episode pays `+reward_scale` if the paddle is under it and
//! `-reward_scale` otherwise, and a new object appears at the top. An episode
//! ends after `max_steps` steps or after `lives` misses.
//!
//! Task A draws the object as `+1` and the paddle as `+0.5`. Task B draws them
//! as `-1` and `-0.5` and swaps the meaning of the two move actions, so the
//! same geometric situation calls for opposite actions in the two tasks.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::splitmix;

pub const ACTION_LEFT: usize = 0;
pub const ACTION_STAY: usize = 1;
pub const ACTION_RIGHT: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskId {
    A,
    B,
}

impl TaskId {
    pub const ALL: [TaskId; 2] = [TaskId::A, TaskId::B];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::A => "A",
            TaskId::B => "B",
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(TaskId::A),
            "B" | "b" => Ok(TaskId::B),
            _ => Err(Error::invalid(format!("unknown task {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub id: TaskId,
    pub grid_size: usize,
    pub action_count: usize,
    pub reward_scale: f64,
    pub max_steps: usize,
    pub frame_stack: usize,
    pub lives: usize,
}

impl TaskSpec {
    pub fn new(id: TaskId) -> Self {
        Self {
            id,
            grid_size: 8,
            action_count: 3,
            reward_scale: match id {
                TaskId::A => 1.0,
                TaskId::B => 9.0,
            },
            max_steps: 56,
            frame_stack: 2,
            lives: 3,
        }
    }

    pub fn with_frame_stack(mut self, frames: usize) -> Self {
        self.frame_stack = frames;
        self
    }

    pub fn frame_len(&self) -> usize {
        self.grid_size * self.grid_size
    }

    pub fn observation_len(&self) -> usize {
        self.frame_len() * self.frame_stack
    }

    fn object_value(&self) -> f64 {
        match self.id {
            TaskId::A => 1.0,
            TaskId::B => -1.0,
        }
    }

    fn paddle_value(&self) -> f64 {
        0.5 * self.object_value()
    }

    /// Column change caused by `action`.
    pub fn action_delta(&self, action: usize) -> isize {
        let d = match action {
            ACTION_LEFT => -1,
            ACTION_RIGHT => 1,
            _ => 0,
        };
        match self.id {
            TaskId::A => d,
            TaskId::B => -d,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.grid_size < 2 || self.frame_stack == 0 || self.action_count != 3 || self.lives == 0
        {
            return Err(Error::invalid(format!("unsupported task spec {self:?}")));
        }
        Ok(())
    }
}

/// Positions shown in one frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Snapshot {
    pub paddle: usize,
    /// `(row, column)` of the falling object.
    pub object: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EnvState {
    /// Oldest first; always `frame_stack` long.
    history: Vec<Snapshot>,
    pub step: usize,
    pub misses: usize,
    pub catches: usize,
    pub seed: u64,
    rng: u64,
    pub terminal: bool,
}

impl EnvState {
    pub fn current(&self) -> Snapshot {
        *self.history.last().expect("history is never empty")
    }

    pub fn history(&self) -> &[Snapshot] {
        &self.history
    }

    fn next_column(&mut self, n: usize) -> usize {
        self.rng = splitmix(self.rng);
        (self.rng % n as u64) as usize
    }
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub state: EnvState,
    pub observation: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
}

pub fn observe(task: &TaskSpec, state: &EnvState) -> Vec<f64> {
    let n = task.grid_size;
    let mut obs = vec![0.0; task.observation_len()];
    for (f, snap) in state.history.iter().enumerate() {
        let frame = &mut obs[f * n * n..(f + 1) * n * n];
        frame[(n - 1) * n + snap.paddle] = task.paddle_value();
        let (r, c) = snap.object;
        frame[r * n + c] = task.object_value();
    }
    obs
}

pub fn reset(task: &TaskSpec, seed: u64) -> Result<(EnvState, Vec<f64>)> {
    task.validate()?;
    let n = task.grid_size;
    let mut state = EnvState {
        history: Vec::new(),
        step: 0,
        misses: 0,
        catches: 0,
        seed,
        rng: splitmix(seed ^ 0xC0FF_EE00_D15E_A5E5),
        terminal: false,
    };
    let paddle = state.next_column(n);
    let column = state.next_column(n);
    let snap = Snapshot {
        paddle,
        object: (0, column),
    };
    state.history = vec![snap; task.frame_stack];
    let obs = observe(task, &state);
    Ok((state, obs))
}

pub fn step(task: &TaskSpec, state: &EnvState, action: usize) -> Result<StepOutcome> {
    if state.terminal {
        return Err(Error::invalid("step on a terminal state"));
    }
    if action >= task.action_count {
        return Err(Error::invalid(format!(
            "action {action} out of range for {} actions",
            task.action_count
        )));
    }
    let n = task.grid_size;
    let mut next = state.clone();
    let cur = state.current();
    let paddle =
        (cur.paddle as isize + task.action_delta(action)).clamp(0, n as isize - 1) as usize;
    let (row, col) = cur.object;
    let mut reward = 0.0;
    let object = if row + 1 >= n - 1 {
        if col == paddle {
            reward = task.reward_scale;
            next.catches += 1;
        } else {
            reward = -task.reward_scale;
            next.misses += 1;
        }
        (0, next.next_column(n))
    } else {
        (row + 1, col)
    };
    next.history.remove(0);
    next.history.push(Snapshot { paddle, object });
    next.step += 1;
    next.terminal = next.step >= task.max_steps || next.misses >= task.lives;
    let observation = observe(task, &next);
    Ok(StepOutcome {
        terminal: next.terminal,
        state: next,
        observation,
        reward,
    })
}

/// Moves the paddle toward the falling object.
pub fn optimal_action(task: &TaskSpec, snap: Snapshot) -> usize {
    let target = snap.object.1;
    let want: isize = match target.cmp(&snap.paddle) {
        std::cmp::Ordering::Less => -1,
        std::cmp::Ordering::Greater => 1,
        std::cmp::Ordering::Equal => 0,
    };
    (0..task.action_count)
        .find(|&a| task.action_delta(a) == want)
        .unwrap_or(ACTION_STAY)
}

/// Recovers the latest snapshot from an observation, if it shows one.
pub fn decode_latest(task: &TaskSpec, obs: &[f64]) -> Option<Snapshot> {
    let n = task.grid_size;
    if obs.len() != task.observation_len() {
        return None;
    }
    let frame = &obs[obs.len() - n * n..];
    let paddle = (0..n).find(|&c| frame[(n - 1) * n + c] == task.paddle_value())?;
    let idx = frame[..(n - 1) * n]
        .iter()
        .position(|&v| v == task.object_value())?;
    Some(Snapshot {
        paddle,
        object: (idx / n, idx % n),
    })
}

/// Plays one episode with `policy`, returning the total reward.
pub fn rollout<R: Rng + ?Sized>(
    task: &TaskSpec,
    seed: u64,
    rng: &mut R,
    mut policy: impl FnMut(&EnvState, &[f64], &mut R) -> usize,
) -> Result<f64> {
    let (mut state, mut obs) = reset(task, seed)?;
    let mut total = 0.0;
    while !state.terminal {
        let a = policy(&state, &obs, rng);
        let out = step(task, &state, a)?;
        total += out.reward;
        state = out.state;
        obs = out.observation;
    }
    Ok(total)
}

pub fn render(task: &TaskSpec, state: &EnvState) -> String {
    let n = task.grid_size;
    let snap = state.current();
    let mut out = String::with_capacity((n + 1) * n + 32);
    for r in 0..n {
        for c in 0..n {
            out.push(if snap.object == (r, c) {
                'o'
            } else if r == n - 1 && c == snap.paddle {
                '='
            } else {
                '.'
            });
        }
        out.push('\n');
    }
    out.push_str(&format!(
        "task {} step {} catches {} misses {}\n",
        task.id, state.step, state.catches, state.misses
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn reset_is_deterministic() {
        let t = TaskSpec::new(TaskId::A);
        assert_eq!(reset(&t, 0).unwrap(), reset(&t, 0).unwrap());
    }

    #[test]
    fn observation_shape() {
        for id in TaskId::ALL {
            let t = TaskSpec::new(id);
            assert_eq!(reset(&t, 3).unwrap().1.len(), 128);
            assert_eq!(
                reset(&t.clone().with_frame_stack(4), 3).unwrap().1.len(),
                256
            );
        }
    }

    #[test]
    fn seeds_zero_and_one_place_objects_differently() {
        // Enumerated mapping for the first few seeds: initial object column.
        let t = TaskSpec::new(TaskId::A);
        let cols: Vec<usize> = (0..4)
            .map(|s| reset(&t, s).unwrap().0.current().object.1)
            .collect();
        assert_ne!(cols[0], cols[1], "{cols:?}");
    }

    fn drive_to_resolution(t: &TaskSpec, mut state: EnvState, catch: bool) -> StepOutcome {
        loop {
            let snap = state.current();
            let a = if catch {
                optimal_action(t, snap)
            } else {
                // Move away from the object.
                let toward = optimal_action(t, snap);
                if toward == ACTION_STAY {
                    if snap.paddle == 0 {
                        (0..3).find(|&a| t.action_delta(a) == 1).unwrap()
                    } else {
                        (0..3).find(|&a| t.action_delta(a) == -1).unwrap()
                    }
                } else {
                    2 - toward
                }
            };
            let out = step(t, &state, a).unwrap();
            if out.reward != 0.0 {
                return out;
            }
            state = out.state;
        }
    }

    #[test]
    fn catch_rewards_match_scale() {
        for (id, want) in [(TaskId::A, 1.0), (TaskId::B, 9.0)] {
            let t = TaskSpec::new(id);
            let (s, _) = reset(&t, 5).unwrap();
            assert_eq!(drive_to_resolution(&t, s.clone(), true).reward, want);
            assert_eq!(drive_to_resolution(&t, s, false).reward, -want);
        }
    }

    #[test]
    fn terminal_state_rejects_step() {
        let t = TaskSpec::new(TaskId::A);
        let (mut s, _) = reset(&t, 1).unwrap();
        while !s.terminal {
            s = step(&t, &s, ACTION_STAY).unwrap().state;
        }
        assert!(s.misses == t.lives || s.step == t.max_steps);
        assert!(step(&t, &s, ACTION_STAY).is_err());
        let (s, _) = reset(&t, 1).unwrap();
        assert!(step(&t, &s, 3).is_err());
    }

    #[test]
    fn controls_are_mirrored_in_task_b() {
        let a = TaskSpec::new(TaskId::A);
        let b = TaskSpec::new(TaskId::B);
        assert_eq!(a.action_delta(ACTION_LEFT), -1);
        assert_eq!(b.action_delta(ACTION_LEFT), 1);
    }

    #[test]
    fn optimal_policy_catches_everything() {
        for id in TaskId::ALL {
            let t = TaskSpec::new(id);
            let mut rng = seeded(0);
            for seed in 0..50 {
                let r = rollout(&t, seed, &mut rng, |s, _, _| {
                    optimal_action(&t, s.current())
                })
                .unwrap();
                assert_eq!(r, 8.0 * t.reward_scale);
            }
        }
    }

    #[test]
    fn decode_recovers_snapshot() {
        for id in TaskId::ALL {
            let t = TaskSpec::new(id);
            let (mut s, mut obs) = reset(&t, 11).unwrap();
            for a in [0, 2, 2, 1, 0, 0, 2, 1, 1] {
                assert_eq!(decode_latest(&t, &obs), Some(s.current()));
                let out = step(&t, &s, a).unwrap();
                s = out.state;
                obs = out.observation;
            }
        }
    }

    #[test]
    fn render_shows_grid() {
        let t = TaskSpec::new(TaskId::A);
        let (s, _) = reset(&t, 0).unwrap();
        let text = render(&t, &s);
        assert_eq!(text.lines().count(), 9);
        assert_eq!(text.matches('o').count(), 1);
        assert_eq!(text.matches('=').count(), 1);
    }
}
