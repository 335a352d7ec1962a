//! Deterministic, seeded generators for the four experimental paradigms and
//! the TSP instance generator, plus the exact ground-truth steppers the
//! evaluation oracles use.
//!
//! Every generator is a pure function of (config, seed): re-invocation is
//! bit-identical. Ground-truth positions ride along for evaluation only and
//! are never fed to models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt;

pub type EnvResult<T> = Result<T, EnvError>;

#[derive(Debug, Clone, PartialEq)]
pub enum EnvError {
    DegenerateConfig { reason: String },
    BadCount { what: &'static str, got: usize, min: usize },
    BadAction { id: u8 },
}

impl fmt::Display for EnvError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvError::DegenerateConfig { reason } => write!(f, "degenerate config: {reason}"),
            EnvError::BadCount { what, got, min } => {
                write!(f, "{what} must be at least {min}, got {got}")
            }
            EnvError::BadAction { id } => write!(f, "invalid action id {id} (expected 0..=3)"),
        }
    }
}

impl std::error::Error for EnvError {}

// ── Ball worlds ─────────────────────────────────────────────────────────

/// Square RGB bouncing-ball environment parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallWorldConfig {
    /// Frame side length in pixels.
    pub frame_size: usize,
    /// Ball radius in pixels.
    pub ball_radius: f64,
    /// Displacement per discrete action, pixels.
    pub action_step: f64,
    /// Fixed velocity for passive mode, pixels/frame.
    pub velocity: (f64, f64),
}

impl Default for BallWorldConfig {
    fn default() -> Self {
        BallWorldConfig {
            frame_size: 32,
            ball_radius: 3.0,
            action_step: 2.0,
            // incommensurate bounce periods so the orbit precesses and
            // covers the position space instead of closing after ~100
            // frames
            velocity: (1.37, 0.93),
        }
    }
}

impl BallWorldConfig {
    pub fn validate(&self) -> EnvResult<()> {
        if self.frame_size < 8 {
            return Err(EnvError::DegenerateConfig {
                reason: format!("frame size {} too small", self.frame_size),
            });
        }
        if !(self.ball_radius > 0.0) || self.ball_radius >= self.frame_size as f64 / 4.0 {
            return Err(EnvError::DegenerateConfig {
                reason: format!(
                    "ball radius {} must be in (0, frame/4 = {})",
                    self.ball_radius,
                    self.frame_size as f64 / 4.0
                ),
            });
        }
        if self.action_step < 1.0 {
            return Err(EnvError::DegenerateConfig {
                reason: format!("action step {} below 1 pixel", self.action_step),
            });
        }
        Ok(())
    }

    /// Ball centers live in [lo, hi] per axis so the rendered disk stays
    /// inside the frame.
    pub fn bounds(&self) -> (f64, f64) {
        (self.ball_radius, self.frame_size as f64 - 1.0 - self.ball_radius)
    }
}

/// RGB frame, channel-major, values in [0, 1]. Stored f32; training promotes
/// to f64 at batch assembly.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
}

impl Frame {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Frame { channels, height, width, pixels: vec![0.0; channels * height * width] }
    }

    /// Intensity-weighted center of mass over all channels: (x, y).
    pub fn center_of_mass(&self) -> Option<(f64, f64)> {
        let mut total = 0.0;
        let (mut sx, mut sy) = (0.0, 0.0);
        for c in 0..self.channels {
            for y in 0..self.height {
                for x in 0..self.width {
                    let v = self.pixels[(c * self.height + y) * self.width + x] as f64;
                    total += v;
                    sx += v * x as f64;
                    sy += v * y as f64;
                }
            }
        }
        if total == 0.0 {
            None
        } else {
            Some((sx / total, sy / total))
        }
    }

    /// Center of mass of one channel only.
    pub fn channel_center_of_mass(&self, c: usize) -> Option<(f64, f64)> {
        let mut total = 0.0;
        let (mut sx, mut sy) = (0.0, 0.0);
        for y in 0..self.height {
            for x in 0..self.width {
                let v = self.pixels[(c * self.height + y) * self.width + x] as f64;
                total += v;
                sx += v * x as f64;
                sy += v * y as f64;
            }
        }
        if total == 0.0 {
            None
        } else {
            Some((sx / total, sy / total))
        }
    }
}

/// Discrete agent action. `Up` decreases the row coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn from_id(id: u8) -> EnvResult<Action> {
        match id {
            0 => Ok(Action::Up),
            1 => Ok(Action::Down),
            2 => Ok(Action::Left),
            3 => Ok(Action::Right),
            _ => Err(EnvError::BadAction { id }),
        }
    }

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn inverse(self) -> Action {
        match self {
            Action::Up => Action::Down,
            Action::Down => Action::Up,
            Action::Left => Action::Right,
            Action::Right => Action::Left,
        }
    }
}

/// Deterministic single-step transition for the action paradigm: shift by
/// the step size along the action axis, clamped at the walls. Also the
/// evaluation oracle.
pub fn env_step(pos: (f64, f64), action: Action, config: &BallWorldConfig) -> (f64, f64) {
    let (lo, hi) = config.bounds();
    let step = config.action_step;
    let (mut x, mut y) = pos;
    match action {
        Action::Up => y -= step,
        Action::Down => y += step,
        Action::Left => x -= step,
        Action::Right => x += step,
    }
    (x.clamp(lo, hi), y.clamp(lo, hi))
}

/// One passive-dynamics step with elastic wall reflection; preserves speed.
pub fn bounce_step(pos: (f64, f64), vel: &mut (f64, f64), config: &BallWorldConfig) -> (f64, f64) {
    let (lo, hi) = config.bounds();
    let reflect = |p: f64, v: &mut f64| -> f64 {
        let mut p = p + *v;
        loop {
            if p > hi {
                p = 2.0 * hi - p;
                *v = -*v;
            } else if p < lo {
                p = 2.0 * lo - p;
                *v = -*v;
            } else {
                break;
            }
        }
        p
    };
    (reflect(pos.0, &mut vel.0), reflect(pos.1, &mut vel.1))
}

/// RGB color as channel weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallColor(pub f32, pub f32, pub f32);

pub const WHITE: BallColor = BallColor(1.0, 1.0, 1.0);
pub const RED: BallColor = BallColor(1.0, 0.0, 0.0);
pub const BLUE: BallColor = BallColor(0.0, 0.0, 1.0);

/// Draw a soft-edged disk; overlapping balls combine by channel max.
pub fn render_ball(frame: &mut Frame, center: (f64, f64), radius: f64, color: BallColor) {
    let (cx, cy) = center;
    let weights = [color.0, color.1, color.2];
    let x0 = (cx - radius - 1.0).floor().max(0.0) as usize;
    let x1 = ((cx + radius + 1.0).ceil() as usize).min(frame.width - 1);
    let y0 = (cy - radius - 1.0).floor().max(0.0) as usize;
    let y1 = ((cy + radius + 1.0).ceil() as usize).min(frame.height - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            let cov = (radius + 0.5 - d).clamp(0.0, 1.0) as f32;
            if cov > 0.0 {
                for (c, w) in weights.iter().enumerate() {
                    let idx = (c * frame.height + y) * frame.width + x;
                    frame.pixels[idx] = frame.pixels[idx].max(cov * w);
                }
            }
        }
    }
}

fn render_frame(config: &BallWorldConfig, balls: &[((f64, f64), BallColor)]) -> Frame {
    let s = config.frame_size;
    let mut frame = Frame::zeros(3, s, s);
    for (pos, color) in balls {
        render_ball(&mut frame, *pos, config.ball_radius, *color);
    }
    frame
}

/// Derive an independent child RNG stream.
fn child_seed(seed: u64, lane: u64) -> u64 {
    // splitmix64 over (seed, lane)
    let mut z = seed ^ lane.wrapping_mul(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn random_position(rng: &mut ChaCha8Rng, config: &BallWorldConfig) -> (f64, f64) {
    let (lo, hi) = config.bounds();
    (rng.random_range(lo..hi), rng.random_range(lo..hi))
}

/// Paradigm A: one ball, fixed momentum, elastic bounces.
pub struct PassiveVideo {
    pub frames: Vec<Frame>,
    pub positions: Vec<(f64, f64)>,
}

pub fn gen_passive_video(config: &BallWorldConfig, n_frames: usize, seed: u64) -> EnvResult<PassiveVideo> {
    config.validate()?;
    if n_frames < 1 {
        return Err(EnvError::BadCount { what: "frame count", got: n_frames, min: 1 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(seed, 0));
    let mut pos = random_position(&mut rng, config);
    let mut vel = config.velocity;
    let mut frames = Vec::with_capacity(n_frames);
    let mut positions = Vec::with_capacity(n_frames);
    for _ in 0..n_frames {
        frames.push(render_frame(config, &[(pos, WHITE)]));
        positions.push(pos);
        pos = bounce_step(pos, &mut vel, config);
    }
    Ok(PassiveVideo { frames, positions })
}

/// Paradigm B: random-walk episode. `frames.len() == n_steps + 1`,
/// `actions[i]` moves `frames[i]` to `frames[i+1]`.
pub struct ActionEpisode {
    pub frames: Vec<Frame>,
    pub actions: Vec<Action>,
    pub positions: Vec<(f64, f64)>,
}

pub fn gen_action_episode(config: &BallWorldConfig, n_steps: usize, seed: u64) -> EnvResult<ActionEpisode> {
    config.validate()?;
    if n_steps < 1 {
        return Err(EnvError::BadCount { what: "step count", got: n_steps, min: 1 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(seed, 0));
    let mut pos = random_position(&mut rng, config);
    let mut frames = Vec::with_capacity(n_steps + 1);
    let mut positions = Vec::with_capacity(n_steps + 1);
    let mut actions = Vec::with_capacity(n_steps);
    frames.push(render_frame(config, &[(pos, WHITE)]));
    positions.push(pos);
    for _ in 0..n_steps {
        let action = Action::ALL[rng.random_range(0..4)];
        pos = env_step(pos, action, config);
        actions.push(action);
        frames.push(render_frame(config, &[(pos, WHITE)]));
        positions.push(pos);
    }
    Ok(ActionEpisode { frames, actions, positions })
}

/// Paradigm C: two independently bouncing balls (red, blue). Per-ball
/// trajectories come from disjoint child RNG streams, so generating a ball
/// separately under its child seed reproduces its path exactly.
pub struct TwoBallVideo {
    pub frames: Vec<Frame>,
    /// positions[f] = [red, blue]
    pub positions: Vec<[(f64, f64); 2]>,
}

/// Per-ball trajectory for paradigm C: seeded start plus a seeded heading
/// with the config's speed.
pub fn two_ball_trajectory(
    config: &BallWorldConfig,
    n_frames: usize,
    seed: u64,
    ball: u64,
) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(seed, 1 + ball));
    let mut pos = random_position(&mut rng, config);
    let speed = (config.velocity.0.powi(2) + config.velocity.1.powi(2)).sqrt();
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    let mut vel = (speed * theta.cos(), speed * theta.sin());
    let mut out = Vec::with_capacity(n_frames);
    for _ in 0..n_frames {
        out.push(pos);
        pos = bounce_step(pos, &mut vel, config);
    }
    out
}

pub fn gen_two_ball_video(config: &BallWorldConfig, n_frames: usize, seed: u64) -> EnvResult<TwoBallVideo> {
    config.validate()?;
    if n_frames < 1 {
        return Err(EnvError::BadCount { what: "frame count", got: n_frames, min: 1 });
    }
    let red = two_ball_trajectory(config, n_frames, seed, 0);
    let blue = two_ball_trajectory(config, n_frames, seed, 1);
    let mut frames = Vec::with_capacity(n_frames);
    let mut positions = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        frames.push(render_frame(config, &[(red[i], RED), (blue[i], BLUE)]));
        positions.push([red[i], blue[i]]);
    }
    Ok(TwoBallVideo { frames, positions })
}

// ── Grammar corpus (paradigm D) ─────────────────────────────────────────

pub const GRAMMAR_VOCAB: usize = 40;
pub const GRAMMAR_EMBED_DIM: usize = 32;
pub const WORDS_PER_CATEGORY: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WordCategory {
    Noun = 0,
    Verb = 1,
    Adjective = 2,
    Object = 3,
}

impl WordCategory {
    pub const CYCLE: [WordCategory; 4] = [
        WordCategory::Noun,
        WordCategory::Verb,
        WordCategory::Adjective,
        WordCategory::Object,
    ];

    /// The grammar is a rigid cycle: Noun -> Verb -> Adjective -> Object -> Noun.
    pub fn successor(self) -> WordCategory {
        WordCategory::CYCLE[(self as usize + 1) % 4]
    }
}

/// 40 unique unit-norm 32-d embeddings, 10 per category, plus a token
/// sequence following the category cycle with uniform in-category choice.
#[derive(Debug, Clone, PartialEq)]
pub struct GrammarCorpus {
    /// Row-major [40 x 32].
    pub embeddings: Vec<f64>,
    pub categories: Vec<WordCategory>,
    pub sequence: Vec<u32>,
}

impl GrammarCorpus {
    pub fn embedding(&self, word: usize) -> &[f64] {
        &self.embeddings[word * GRAMMAR_EMBED_DIM..(word + 1) * GRAMMAR_EMBED_DIM]
    }

    pub fn category_of(&self, word: usize) -> WordCategory {
        self.categories[word]
    }
}

/// Standard normal via Box-Muller on the seeded stream.
fn normal_pair(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    let r = (-2.0 * u1.ln()).sqrt();
    let t = std::f64::consts::TAU * u2;
    (r * t.cos(), r * t.sin())
}

pub fn gen_grammar_corpus(seed: u64, sequence_length: usize) -> EnvResult<GrammarCorpus> {
    if sequence_length < 4 {
        return Err(EnvError::BadCount { what: "sequence length", got: sequence_length, min: 4 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(seed, 7));
    let mut embeddings = Vec::with_capacity(GRAMMAR_VOCAB * GRAMMAR_EMBED_DIM);
    for _ in 0..GRAMMAR_VOCAB {
        let mut row = [0.0f64; GRAMMAR_EMBED_DIM];
        for pair in row.chunks_mut(2) {
            let (a, b) = normal_pair(&mut rng);
            pair[0] = a;
            if pair.len() > 1 {
                pair[1] = b;
            }
        }
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        embeddings.extend(row.iter().map(|v| v / norm));
    }
    let categories: Vec<WordCategory> = (0..GRAMMAR_VOCAB)
        .map(|w| WordCategory::CYCLE[w / WORDS_PER_CATEGORY])
        .collect();
    let sequence: Vec<u32> = (0..sequence_length)
        .map(|t| {
            let cat = t % 4;
            (cat * WORDS_PER_CATEGORY + rng.random_range(0..WORDS_PER_CATEGORY)) as u32
        })
        .collect();
    Ok(GrammarCorpus { embeddings, categories, sequence })
}

// ── TSP instances ───────────────────────────────────────────────────────

/// City coordinates in the unit square.
#[derive(Debug, Clone, PartialEq)]
pub struct TspInstance {
    pub cities: Vec<(f64, f64)>,
}

impl TspInstance {
    pub fn len(&self) -> usize {
        self.cities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cities.is_empty()
    }

    /// The four unit-square corners; optimal tour length 4.0.
    pub fn unit_square_corners() -> TspInstance {
        TspInstance { cities: vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)] }
    }

    /// `n` cities evenly spaced on a circle of given radius centered in the
    /// unit square; optimal tour is the polygon perimeter.
    pub fn circle(n: usize, radius: f64) -> TspInstance {
        let cities = (0..n)
            .map(|i| {
                let t = std::f64::consts::TAU * i as f64 / n as f64;
                (0.5 + radius * t.cos(), 0.5 + radius * t.sin())
            })
            .collect();
        TspInstance { cities }
    }
}

pub fn gen_tsp_instance(c: usize, seed: u64) -> EnvResult<TspInstance> {
    if c < 3 {
        return Err(EnvError::BadCount { what: "city count", got: c, min: 3 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(seed, 13));
    let mut cities: Vec<(f64, f64)> = Vec::with_capacity(c);
    while cities.len() < c {
        let p = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        if !cities.contains(&p) {
            cities.push(p);
        }
    }
    Ok(TspInstance { cities })
}
