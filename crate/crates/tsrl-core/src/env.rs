//! The Catch environment and the frame history fed to the networks.
//!
//! Catch is a 32x32 binary-pixel episodic task: a 2x2 ball falls from the
//! top row with a random horizontal velocity, bouncing off the side walls,
//! and a 6-pixel paddle on the bottom row moves left/stay/right trying to be
//! under it. An episode always lasts 15 steps; the only nonzero reward
//! arrives on the final step: +1 on a catch, -1 on a miss.
//!
//! A single frame never shows the ball's velocity, so two states that render
//! identically can evolve differently; agents need frame history to act
//! optimally.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, usage_err, Result};
use crate::tensor::Tensor;

pub const HEIGHT: usize = 32;
pub const WIDTH: usize = 32;
pub const BALL_SIZE: usize = 2;
pub const PADDLE_WIDTH: usize = 6;
pub const PADDLE_START: i32 = 13;
pub const BALL_FALL_SPEED: usize = 2;
/// Steps per episode: the ball reaches the bottom after ceil(30 / 2) moves.
pub const EPISODE_STEPS: u32 = 15;

const MAX_BALL_COL: i32 = (WIDTH - BALL_SIZE) as i32;
const MAX_PADDLE: i32 = (WIDTH - PADDLE_WIDTH) as i32;

/// Frame produced by an environment step.
#[derive(Debug)]
pub struct StepResult {
    pub frame: Tensor<f32>,
    pub reward: f32,
    pub done: bool,
}

/// A fixed-action-space, pixel-observation episodic environment.
pub trait Environment {
    /// Start a new episode. `Some(seed)` reseeds the episode stream for
    /// reproducibility; `None` continues it.
    fn reset(&mut self, seed: Option<u64>) -> Tensor<f32>;
    fn step(&mut self, action: usize) -> Result<StepResult>;
    fn action_count(&self) -> usize;
    fn frame_shape(&self) -> (usize, usize);
}

/// Catch dynamics knobs; geometry is fixed.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CatchConfig {
    /// Ball horizontal velocities drawn uniformly at reset.
    pub horizontal_speeds: Vec<i32>,
    /// Paddle columns moved per action.
    pub paddle_speed: i32,
}

impl Default for CatchConfig {
    fn default() -> Self {
        CatchConfig { horizontal_speeds: vec![-2, -1, 1, 2], paddle_speed: 2 }
    }
}

impl CatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizontal_speeds.is_empty() {
            return config_err("catch: horizontal_speeds must not be empty".to_string());
        }
        if self.horizontal_speeds.iter().any(|&v| v == 0) {
            return config_err("catch: horizontal speeds must be nonzero".to_string());
        }
        if self.paddle_speed < 1 {
            return config_err(format!("catch: paddle_speed must be at least 1, got {}", self.paddle_speed));
        }
        Ok(())
    }
}

/// See the module docs for the rules.
pub struct CatchEnv {
    config: CatchConfig,
    rng: ChaCha8Rng,
    ball_row: usize,
    ball_col: i32,
    vx: i32,
    paddle: i32,
    steps: u32,
    done: bool,
    started: bool,
}

impl CatchEnv {
    pub fn new(config: CatchConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(CatchEnv {
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
            ball_row: 0,
            ball_col: 0,
            vx: 1,
            paddle: PADDLE_START,
            steps: 0,
            done: true,
            started: false,
        })
    }

    /// Start an episode from an exact state; used by tests that need a known
    /// trajectory.
    pub fn from_state(ball_col: i32, vx: i32, paddle: i32) -> Result<Self> {
        if !(0..=MAX_BALL_COL).contains(&ball_col) {
            return config_err(format!("catch: ball column {} outside 0..={}", ball_col, MAX_BALL_COL));
        }
        if vx == 0 {
            return config_err("catch: ball horizontal velocity must be nonzero".to_string());
        }
        if !(0..=MAX_PADDLE).contains(&paddle) {
            return config_err(format!("catch: paddle {} outside 0..={}", paddle, MAX_PADDLE));
        }
        let mut env = CatchEnv::new(CatchConfig::default(), 0)?;
        env.ball_col = ball_col;
        env.vx = vx;
        env.paddle = paddle;
        env.done = false;
        env.started = true;
        Ok(env)
    }

    pub fn render(&self) -> Tensor<f32> {
        let mut frame = Tensor::zeros(&[HEIGHT, WIDTH]);
        let data = frame.data_mut();
        for dr in 0..BALL_SIZE {
            let r = self.ball_row + dr;
            for dc in 0..BALL_SIZE {
                data[r * WIDTH + self.ball_col as usize + dc] = 1.0;
            }
        }
        for dc in 0..PADDLE_WIDTH {
            data[(HEIGHT - 1) * WIDTH + self.paddle as usize + dc] = 1.0;
        }
        frame
    }
}

impl Environment for CatchEnv {
    fn reset(&mut self, seed: Option<u64>) -> Tensor<f32> {
        if let Some(s) = seed {
            self.rng = ChaCha8Rng::seed_from_u64(s);
        }
        self.ball_row = 0;
        self.ball_col = self.rng.gen_range(0..=MAX_BALL_COL);
        let pick = self.rng.gen_range(0..self.config.horizontal_speeds.len());
        self.vx = self.config.horizontal_speeds[pick];
        self.paddle = PADDLE_START;
        self.steps = 0;
        self.done = false;
        self.started = true;
        self.render()
    }

    fn step(&mut self, action: usize) -> Result<StepResult> {
        if !self.started {
            return usage_err("catch: reset the environment before stepping".to_string());
        }
        if self.done {
            return usage_err("catch: the episode is over, reset to continue".to_string());
        }
        if action >= 3 {
            return usage_err(format!("catch: action must be 0 (left), 1 (stay), or 2 (right), got {}", action));
        }

        let delta = (action as i32 - 1) * self.config.paddle_speed;
        self.paddle = (self.paddle + delta).clamp(0, MAX_PADDLE);

        self.ball_row += BALL_FALL_SPEED;
        self.ball_col += self.vx;
        if self.ball_col < 0 {
            self.ball_col = 0;
            self.vx = -self.vx;
        } else if self.ball_col > MAX_BALL_COL {
            self.ball_col = MAX_BALL_COL;
            self.vx = -self.vx;
        }
        self.steps += 1;

        self.done = self.ball_row >= HEIGHT - BALL_SIZE;
        let reward = if self.done {
            let ball_right = self.ball_col + BALL_SIZE as i32 - 1;
            let paddle_right = self.paddle + PADDLE_WIDTH as i32 - 1;
            if ball_right >= self.paddle && self.ball_col <= paddle_right {
                1.0
            } else {
                -1.0
            }
        } else {
            0.0
        };
        Ok(StepResult { frame: self.render(), reward, done: self.done })
    }

    fn action_count(&self) -> usize {
        3
    }

    fn frame_shape(&self) -> (usize, usize) {
        (HEIGHT, WIDTH)
    }
}

/// Sliding window over the last `capacity` frames, oldest first.
pub struct FrameHistory {
    frames: VecDeque<Tensor<f32>>,
    capacity: usize,
}

impl FrameHistory {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return config_err("frame history capacity must be at least 1".to_string());
        }
        Ok(FrameHistory { frames: VecDeque::with_capacity(capacity + 1), capacity })
    }

    pub fn reset(&mut self) {
        self.frames.clear();
    }

    pub fn push(&mut self, frame: Tensor<f32>) {
        self.frames.push_back(frame);
        if self.frames.len() > self.capacity {
            self.frames.pop_front();
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// The history as a (T,H,W) tensor; when fewer than `T` frames have been
    /// seen, the oldest is repeated to fill the front of the window.
    pub fn window(&self) -> Result<Tensor<f32>> {
        let newest = self
            .frames
            .back()
            .ok_or_else(|| crate::error::Error::Usage("frame history window requested before any frame".to_string()))?;
        let (h, w) = (newest.shape()[0], newest.shape()[1]);
        let mut out = Tensor::zeros(&[self.capacity, h, w]);
        let plane = h * w;
        let missing = self.capacity - self.frames.len();
        let dst = out.data_mut();
        for slot in 0..self.capacity {
            let src = &self.frames[slot.saturating_sub(missing)];
            dst[slot * plane..(slot + 1) * plane].copy_from_slice(src.data());
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ones(frame: &Tensor<f32>) -> usize {
        frame.data().iter().filter(|&&v| v == 1.0).count()
    }

    fn at(frame: &Tensor<f32>, r: usize, c: usize) -> f32 {
        frame.at(&[r, c])
    }

    fn run_episode(env: &mut CatchEnv, actions: &[usize]) -> (Vec<Tensor<f32>>, f32) {
        let mut frames = Vec::new();
        let mut terminal_reward = f32::NAN;
        for (i, &a) in actions.iter().enumerate() {
            let step = env.step(a).unwrap();
            if i + 1 < actions.len() {
                assert_eq!(step.reward, 0.0, "reward must be zero before the terminal step");
                assert!(!step.done);
            } else {
                assert!(step.done, "episode must end exactly at step {}", EPISODE_STEPS);
                terminal_reward = step.reward;
            }
            frames.push(step.frame);
        }
        (frames, terminal_reward)
    }

    /// Hand-traced episode: ball starts at column 5 moving left, reflects off
    /// the left wall at step 3, and lands on columns 24..=25 at step 15; the
    /// paddle walks to 23 and catches it.
    #[test]
    fn hand_traced_catch_episode() {
        let mut env = CatchEnv::from_state(5, -2, 13).unwrap();
        let actions = [0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2, 2, 2, 2, 2];
        let (frames, reward) = run_episode(&mut env, &actions);
        assert_eq!(reward, 1.0);

        // Step 3: ball clamped to column 0 (velocity now +2), row 6; paddle
        // at 7 after three left moves.
        let f3 = &frames[2];
        for (r, c) in [(6, 0), (6, 1), (7, 0), (7, 1)] {
            assert_eq!(at(f3, r, c), 1.0, "ball pixel ({}, {})", r, c);
        }
        for c in 7..13 {
            assert_eq!(at(f3, 31, c), 1.0, "paddle pixel at column {}", c);
        }
        assert_eq!(ones(f3), 10);

        // Step 4: the reflected ball moved right to column 2.
        let f4 = &frames[3];
        assert_eq!(at(f4, 8, 2), 1.0);
        assert_eq!(at(f4, 8, 3), 1.0);

        // Terminal: ball rows 30..=31, columns 24..=25; paddle 23..=28. The
        // two bottom ball pixels land on the paddle, so 8 distinct pixels.
        let f15 = &frames[14];
        for (r, c) in [(30, 24), (30, 25), (31, 24), (31, 25)] {
            assert_eq!(at(f15, r, c), 1.0);
        }
        for c in 23..29 {
            assert_eq!(at(f15, 31, c), 1.0);
        }
        assert_eq!(ones(f15), 8);
    }

    /// Hand-traced miss: ball starts at column 5 moving right, reflects off
    /// the right wall at step 13 (clamping 31 to 30), and lands on columns
    /// 26..=27 while the paddle sits pinned at the left wall.
    #[test]
    fn hand_traced_miss_episode() {
        let mut env = CatchEnv::from_state(5, 2, 13).unwrap();
        let actions = [0; 15];
        let (frames, reward) = run_episode(&mut env, &actions);
        assert_eq!(reward, -1.0);

        let f13 = &frames[12];
        assert_eq!(at(f13, 26, 30), 1.0, "ball clamps to column 30 at the right wall");
        assert_eq!(at(f13, 26, 31), 1.0);

        let f14 = &frames[13];
        assert_eq!(at(f14, 28, 28), 1.0, "ball moves left after the reflection");

        let f15 = &frames[14];
        for (r, c) in [(30, 26), (30, 27), (31, 26), (31, 27)] {
            assert_eq!(at(f15, r, c), 1.0);
        }
        for c in 0..6 {
            assert_eq!(at(f15, 31, c), 1.0, "paddle pinned at the left wall");
        }
        assert_eq!(ones(f15), 10, "ball and paddle do not overlap on a miss");
    }

    #[test]
    fn reset_draws_every_velocity_uniformly() {
        let mut env = CatchEnv::new(CatchConfig::default(), 17).unwrap();
        let mut counts = std::collections::HashMap::new();
        let mut cols = std::collections::HashSet::new();
        let draws = 8000;
        for _ in 0..draws {
            env.reset(None);
            *counts.entry(env.vx).or_insert(0usize) += 1;
            cols.insert(env.ball_col);
        }
        assert_eq!(counts.len(), 4);
        for (&vx, &n) in &counts {
            let freq = n as f64 / draws as f64;
            assert!((freq - 0.25).abs() < 0.02, "vx {}: frequency {}", vx, freq);
        }
        assert_eq!(cols.len(), 31, "every start column 0..=30 must occur");
    }

    #[test]
    fn reset_with_seed_is_reproducible() {
        let mut a = CatchEnv::new(CatchConfig::default(), 0).unwrap();
        let mut b = CatchEnv::new(CatchConfig::default(), 99).unwrap();
        let fa = a.reset(Some(1234));
        let fb = b.reset(Some(1234));
        assert_eq!(fa.data(), fb.data());
        for _ in 0..15 {
            let sa = a.step(2).unwrap();
            let sb = b.step(2).unwrap();
            assert_eq!(sa.frame.data(), sb.frame.data());
            assert_eq!(sa.reward, sb.reward);
        }
    }

    #[test]
    fn identical_frames_can_hide_different_futures() {
        let mut left = CatchEnv::from_state(10, -1, 13).unwrap();
        let mut right = CatchEnv::from_state(10, 1, 13).unwrap();
        assert_eq!(left.render().data(), right.render().data(), "velocity is invisible in a single frame");
        let a = left.step(1).unwrap();
        let b = right.step(1).unwrap();
        assert_ne!(a.frame.data(), b.frame.data(), "the futures diverge");
    }

    #[test]
    fn rejects_usage_errors() {
        let mut env = CatchEnv::new(CatchConfig::default(), 3).unwrap();
        let err = env.step(1).unwrap_err();
        assert!(err.to_string().contains("reset"), "message was: {}", err);

        env.reset(Some(7));
        assert!(env.step(5).is_err());
        for _ in 0..15 {
            env.step(1).unwrap();
        }
        let err = env.step(1).unwrap_err();
        assert!(err.to_string().contains("over"), "message was: {}", err);
    }

    #[test]
    fn rejects_bad_configs_and_states() {
        assert!(CatchConfig { horizontal_speeds: vec![], ..Default::default() }.validate().is_err());
        assert!(CatchConfig { horizontal_speeds: vec![1, 0], ..Default::default() }.validate().is_err());
        assert!(CatchConfig { paddle_speed: 0, ..Default::default() }.validate().is_err());
        assert!(CatchEnv::from_state(31, 1, 13).is_err());
        assert!(CatchEnv::from_state(5, 0, 13).is_err());
        assert!(CatchEnv::from_state(5, 1, 27).is_err());
    }

    #[test]
    fn window_repeats_oldest_frame_until_full() {
        let mut history = FrameHistory::new(4).unwrap();
        assert!(history.window().is_err(), "empty history has no window");

        let f = |v: f32| Tensor::from_vec(&[1, 2], vec![v, v]).unwrap();
        history.push(f(1.0));
        let w = history.window().unwrap();
        assert_eq!(w.shape(), [4, 1, 2]);
        assert_eq!(w.data(), &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);

        history.push(f(2.0));
        assert_eq!(history.window().unwrap().data(), &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 2.0, 2.0]);

        history.push(f(3.0));
        history.push(f(4.0));
        assert_eq!(history.window().unwrap().data(), &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0]);

        history.push(f(5.0));
        assert_eq!(
            history.window().unwrap().data(),
            &[2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 5.0, 5.0],
            "the oldest frame falls out of the window"
        );
        assert_eq!(history.len(), 4);

        history.reset();
        assert!(history.is_empty());
        assert!(FrameHistory::new(0).is_err());
    }

    proptest! {
        #[test]
        fn episodes_last_fifteen_steps_with_legal_frames(
            seed in 0u64..5000,
            actions in proptest::collection::vec(0usize..3, 15),
        ) {
            let mut env = CatchEnv::new(CatchConfig::default(), seed).unwrap();
            env.reset(None);
            for (i, &a) in actions.iter().enumerate() {
                let step = env.step(a).unwrap();
                prop_assert!(env.paddle >= 0 && env.paddle <= MAX_PADDLE);
                prop_assert!(env.ball_col >= 0 && env.ball_col <= MAX_BALL_COL);
                if i < 14 {
                    prop_assert!(!step.done);
                    prop_assert_eq!(step.reward, 0.0);
                    prop_assert_eq!(ones(&step.frame), 10);
                } else {
                    prop_assert!(step.done);
                    prop_assert!(step.reward == 1.0 || step.reward == -1.0);
                    let n = ones(&step.frame);
                    prop_assert!((8..=10).contains(&n), "terminal frame had {} pixels", n);
                }
            }
        }
    }
}
