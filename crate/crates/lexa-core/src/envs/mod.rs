//! Toy pixel environments.
//!
//! Both environments live in the unit square. The agent (and in `PushBlock`
//! the block) is an axis-aligned square two pixels wide. Actions are 2-D
//! velocities in `[-1, 1]`, scaled to [`MAX_STEP`] per internal tick and
//! applied [`ACTION_REPEAT`] times per agent step. There is no reward: the
//! environments expose state, images and goal predicates only.

mod goals;
mod oracle;
mod render;

pub use goals::{benchmark_goals, GoalDef, GoalEntities, GoalSpec, DEFAULT_TOLERANCE};
pub use oracle::{oracle_steps, ORACLE_PITCH};
pub use render::{render, IMAGE_SHAPE, PIXELS};

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_STEP: f64 = 0.06;
pub const ACTION_REPEAT: usize = 2;
pub const ACTION_DIM: usize = 2;
pub const EPISODE_STEPS: usize = 100;
/// Half the side length of the agent and block squares (one pixel).
pub const HALF_SIZE: f64 = 1.0 / 16.0;
/// Per-axis range of the block's reset position.
const BLOCK_START: (f64, f64) = (0.42, 0.58);

const TOUCH: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    PointRooms,
    PushBlock,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::PointRooms => "point_rooms",
            EnvKind::PushBlock => "push_block",
        }
    }

    pub fn has_block(self) -> bool {
        matches!(self, EnvKind::PushBlock)
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "point_rooms" => Ok(EnvKind::PointRooms),
            "push_block" => Ok(EnvKind::PushBlock),
            other => Err(Error::Config {
                field: "env",
                reason: alloc::format!("unknown environment `{other}`"),
            }),
        }
    }
}

/// Positions of the agent and, in `PushBlock`, the block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub agent: [f64; 2],
    pub block: Option<[f64; 2]>,
}

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub const fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn around(center: [f64; 2]) -> Self {
        Self::new(
            center[0] - HALF_SIZE,
            center[1] - HALF_SIZE,
            center[0] + HALF_SIZE,
            center[1] + HALF_SIZE,
        )
    }

    fn lo(&self, axis: usize) -> f64 {
        if axis == 0 {
            self.x0
        } else {
            self.y0
        }
    }

    fn hi(&self, axis: usize) -> f64 {
        if axis == 0 {
            self.x1
        } else {
            self.y1
        }
    }

    /// Open overlap along one axis; touching edges do not count.
    fn overlaps_on(&self, other: &Rect, axis: usize) -> bool {
        self.lo(axis) < other.hi(axis) - TOUCH && self.hi(axis) > other.lo(axis) + TOUCH
    }

    pub fn overlaps(&self, other: &Rect) -> bool {
        self.overlaps_on(other, 0) && self.overlaps_on(other, 1)
    }
}

const fn px(n: f64) -> f64 {
    n / 16.0
}

/// Four rooms separated by a cross of two-pixel walls. Each wall arm has a
/// three-pixel doorway next to the centre, so the doorways form a ring.
const ROOM_WALLS: [Rect; 5] = [
    Rect::new(px(7.0), px(0.0), px(9.0), px(4.0)),
    Rect::new(px(7.0), px(12.0), px(9.0), px(16.0)),
    Rect::new(px(0.0), px(7.0), px(4.0), px(9.0)),
    Rect::new(px(12.0), px(7.0), px(16.0), px(9.0)),
    Rect::new(px(7.0), px(7.0), px(9.0), px(9.0)),
];

/// Environment dynamics and rendering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Env {
    kind: EnvKind,
}

impl Env {
    pub fn new(kind: EnvKind) -> Self {
        Self { kind }
    }

    pub fn kind(&self) -> EnvKind {
        self.kind
    }

    pub fn walls(&self) -> &'static [Rect] {
        match self.kind {
            EnvKind::PointRooms => &ROOM_WALLS,
            EnvKind::PushBlock => &[],
        }
    }

    /// Whether `state` respects every geometric invariant.
    pub fn is_valid(&self, state: &EnvState) -> bool {
        let inside = |p: [f64; 2]| {
            p.iter()
                .all(|&c| (HALF_SIZE - TOUCH..=1.0 - HALF_SIZE + TOUCH).contains(&c))
        };
        let clear = |r: Rect| self.walls().iter().all(|w| !r.overlaps(w));
        if !inside(state.agent) || !clear(Rect::around(state.agent)) {
            return false;
        }
        match (self.kind.has_block(), state.block) {
            (false, None) => true,
            (true, Some(b)) => {
                inside(b) && clear(Rect::around(b)) && !Rect::around(b).overlaps(&Rect::around(state.agent))
            }
            _ => false,
        }
    }

    /// Seeded random collision-free start state and its image. The block
    /// starts near the centre, farther than the default tolerance from
    /// every benchmark block target.
    pub fn reset(&self, seed: u64) -> (EnvState, Vec<f32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |lo: f64, hi: f64| [rng.random_range(lo..hi), rng.random_range(lo..hi)];
        let state = loop {
            let agent = uniform(HALF_SIZE, 1.0 - HALF_SIZE);
            let block = self.kind.has_block().then(|| uniform(BLOCK_START.0, BLOCK_START.1));
            let candidate = EnvState { agent, block };
            if self.is_valid(&candidate) {
                break candidate;
            }
        };
        (state, render(self.kind, &state))
    }

    /// One agent step: the clipped action is applied [`ACTION_REPEAT`] times.
    pub fn step(&self, state: &EnvState, action: [f32; 2]) -> (EnvState, Vec<f32>) {
        let next = self.advance(state, action);
        (next, render(self.kind, &next))
    }

    /// [`Env::step`] without rendering.
    pub fn advance(&self, state: &EnvState, action: [f32; 2]) -> EnvState {
        let delta = action.map(|a| {
            let a = if a.is_nan() { 0.0 } else { a.clamp(-1.0, 1.0) };
            f64::from(a) * MAX_STEP
        });
        let mut s = *state;
        for _ in 0..ACTION_REPEAT {
            for axis in 0..2 {
                if delta[axis] != 0.0 {
                    self.move_axis(&mut s, axis, delta[axis]);
                }
            }
        }
        s
    }

    fn move_axis(&self, s: &mut EnvState, axis: usize, delta: f64) {
        let walls = self.walls();
        let target = s.agent[axis] + delta;
        let mut agent = clamp_axis(walls, s.agent, axis, target);
        if let Some(block) = s.block {
            let moved = {
                let mut p = s.agent;
                p[axis] = agent;
                Rect::around(p)
            };
            let b = Rect::around(block);
            let other = 1 - axis;
            let ahead = if delta > 0.0 {
                block[axis] >= s.agent[axis]
            } else {
                block[axis] <= s.agent[axis]
            };
            if ahead && moved.overlaps(&b) && moved.overlaps_on(&b, other) {
                let side = 2.0 * HALF_SIZE * delta.signum();
                let wanted = agent + side;
                let placed = clamp_axis(walls, block, axis, wanted);
                let mut nb = block;
                nb[axis] = placed;
                s.block = Some(nb);
                agent = placed - side;
            }
        }
        s.agent[axis] = agent;
    }

    /// Room index `0..4` of a point (quadrant, x-major), used for coverage.
    pub fn room_of(p: [f64; 2]) -> usize {
        usize::from(p[0] >= 0.5) + 2 * usize::from(p[1] >= 0.5)
    }
}

/// Moves a square centred at `pos` along `axis` toward `target`, stopping at
/// the arena boundary or the first wall it would enter.
fn clamp_axis(walls: &[Rect], pos: [f64; 2], axis: usize, target: f64) -> f64 {
    let mut t = target.clamp(HALF_SIZE, 1.0 - HALF_SIZE);
    let current = Rect::around(pos);
    let other = 1 - axis;
    let from = pos[axis];
    for w in walls {
        if !current.overlaps_on(w, other) {
            continue;
        }
        if t > from && w.lo(axis) >= from + HALF_SIZE - TOUCH {
            t = t.min(w.lo(axis) - HALF_SIZE);
        } else if t < from && w.hi(axis) <= from - HALF_SIZE + TOUCH {
            t = t.max(w.hi(axis) + HALF_SIZE);
        }
    }
    t
}

/// Uniform random actions for prefill and baselines.
pub fn random_action<R: Rng + ?Sized>(rng: &mut R) -> [f32; 2] {
    [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reset_is_deterministic_and_valid() {
        for kind in [EnvKind::PointRooms, EnvKind::PushBlock] {
            let env = Env::new(kind);
            assert_eq!(env.reset(7), env.reset(7));
            for seed in 0..1000 {
                let (s, img) = env.reset(seed);
                assert!(env.is_valid(&s), "{kind} seed {seed}: {s:?}");
                assert_eq!(img.len(), PIXELS);
            }
        }
    }

    #[test]
    fn resets_cover_every_room() {
        let env = Env::new(EnvKind::PointRooms);
        let mut counts = [0usize; 4];
        for seed in 0..1000 {
            counts[Env::room_of(env.reset(seed).0.agent)] += 1;
        }
        assert!(counts.iter().all(|&c| c >= 150), "{counts:?}");
    }

    #[test]
    fn zero_action_keeps_state() {
        for kind in [EnvKind::PointRooms, EnvKind::PushBlock] {
            let env = Env::new(kind);
            let (s, _) = env.reset(3);
            assert_eq!(env.advance(&s, [0.0, 0.0]), s);
        }
    }

    #[test]
    fn walking_right_stops_at_the_wall() {
        let env = Env::new(EnvKind::PointRooms);
        let mut s = EnvState {
            agent: [3.5 / 16.0, 3.5 / 16.0],
            block: None,
        };
        for _ in 0..20 {
            s = env.advance(&s, [1.0, 0.0]);
        }
        assert!((s.agent[0] - (7.0 / 16.0 - HALF_SIZE)).abs() < 1e-12, "{s:?}");
        assert!(env.is_valid(&s));
    }

    #[test]
    fn doorway_lets_the_agent_through() {
        let env = Env::new(EnvKind::PointRooms);
        let mut s = EnvState {
            agent: [0.2, 5.5 / 16.0],
            block: None,
        };
        for _ in 0..20 {
            s = env.advance(&s, [1.0, 0.0]);
        }
        assert!(s.agent[0] > 0.9, "{s:?}");
    }

    #[test]
    fn actions_are_clipped() {
        let env = Env::new(EnvKind::PushBlock);
        let s = EnvState {
            agent: [0.1, 0.1],
            block: Some([0.7, 0.7]),
        };
        assert_eq!(env.advance(&s, [5.0, 0.0]), env.advance(&s, [1.0, 0.0]));
        let moved = env.advance(&s, [1.0, 0.0]);
        assert!((moved.agent[0] - 0.22).abs() < 1e-12);
    }

    #[test]
    fn pushing_moves_the_block() {
        let env = Env::new(EnvKind::PushBlock);
        let mut s = EnvState {
            agent: [0.2, 0.5],
            block: Some([0.5, 0.5]),
        };
        for _ in 0..5 {
            s = env.advance(&s, [1.0, 0.0]);
        }
        let b = s.block.unwrap();
        assert!(b[0] > 0.5, "{s:?}");
        assert_eq!(b[1], 0.5);
        assert!(env.is_valid(&s));
    }

    #[test]
    fn block_stops_at_the_boundary() {
        let env = Env::new(EnvKind::PushBlock);
        let mut s = EnvState {
            agent: [0.5, 0.5],
            block: Some([0.7, 0.5]),
        };
        for _ in 0..30 {
            s = env.advance(&s, [1.0, 0.0]);
        }
        assert!((s.block.unwrap()[0] - (1.0 - HALF_SIZE)).abs() < 1e-12);
        assert!(env.is_valid(&s));
    }

    #[test]
    fn block_is_untouched_without_contact() {
        let env = Env::new(EnvKind::PushBlock);
        let mut s = EnvState {
            agent: [0.2, 0.2],
            block: Some([0.6, 0.6]),
        };
        for _ in 0..5 {
            s = env.advance(&s, [0.0, -1.0]);
        }
        assert_eq!(s.block, Some([0.6, 0.6]));
    }

    #[test]
    fn env_names_round_trip() {
        for kind in [EnvKind::PointRooms, EnvKind::PushBlock] {
            assert_eq!(kind.name().parse::<EnvKind>().unwrap(), kind);
        }
        assert!("mujoco".parse::<EnvKind>().is_err());
    }
}
