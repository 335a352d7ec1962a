//! Dataset container: a binary file holding one generated paradigm run
//! (frames or grammar corpus) plus its provenance header, and the
//! transition views the trainer consumes.
//!
//! Layout, little-endian:
//!   magic        8 bytes "GNWMDATA"
//!   version      u32 (currently 1)
//!   paradigm     u8  (0=A passive, 1=B action, 2=C two-ball, 3=D grammar)
//!   seed         u64
//!   config echo  u32 length + UTF-8 (the resolved generator config text)
//!   payload      per paradigm, see `write_to`
//!
//! Frames are stored f32 (values live in [0,1]); ground-truth positions and
//! embeddings are stored f64.

use crate::envs::{Action, Frame, GrammarCorpus, WordCategory, GRAMMAR_EMBED_DIM, GRAMMAR_VOCAB};
use std::fmt;
use std::io::{self, Read, Write};
use std::path::Path;

pub type DatasetResult<T> = Result<T, DatasetError>;

#[derive(Debug)]
pub enum DatasetError {
    BadFormat { reason: String },
    Io(io::Error),
}

impl fmt::Display for DatasetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetError::BadFormat { reason } => write!(f, "bad dataset file: {reason}"),
            DatasetError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for DatasetError {}

impl From<io::Error> for DatasetError {
    fn from(e: io::Error) -> Self {
        DatasetError::Io(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Paradigm {
    PassiveBall,
    ActionBall,
    TwoBall,
    Grammar,
}

impl Paradigm {
    pub fn tag(self) -> u8 {
        match self {
            Paradigm::PassiveBall => 0,
            Paradigm::ActionBall => 1,
            Paradigm::TwoBall => 2,
            Paradigm::Grammar => 3,
        }
    }

    pub fn from_tag(tag: u8) -> DatasetResult<Self> {
        Ok(match tag {
            0 => Paradigm::PassiveBall,
            1 => Paradigm::ActionBall,
            2 => Paradigm::TwoBall,
            3 => Paradigm::Grammar,
            _ => return Err(DatasetError::BadFormat { reason: format!("paradigm tag {tag}") }),
        })
    }

    /// CLI letter: A, B, C, or D.
    pub fn letter(self) -> char {
        match self {
            Paradigm::PassiveBall => 'A',
            Paradigm::ActionBall => 'B',
            Paradigm::TwoBall => 'C',
            Paradigm::Grammar => 'D',
        }
    }

    pub fn from_letter(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Some(Paradigm::PassiveBall),
            "B" => Some(Paradigm::ActionBall),
            "C" => Some(Paradigm::TwoBall),
            "D" => Some(Paradigm::Grammar),
            _ => None,
        }
    }

    pub fn action_conditioned(self) -> bool {
        matches!(self, Paradigm::ActionBall)
    }

    /// Number of independent latent grids (encoder output channels).
    pub fn grids(self) -> usize {
        if self == Paradigm::TwoBall {
            2
        } else {
            1
        }
    }
}

/// Frame sequence payload for paradigms A, B, C.
#[derive(Debug, Clone)]
pub struct VideoData {
    pub frames: Vec<Frame>,
    /// `actions[i]` moves frame i to frame i+1 (paradigm B only).
    pub actions: Option<Vec<Action>>,
    /// Ground-truth ball centers (x, y) per frame, one entry per ball.
    pub positions: Vec<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone)]
pub enum Payload {
    Video(VideoData),
    Grammar(GrammarCorpus),
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub paradigm: Paradigm,
    pub seed: u64,
    pub config_echo: String,
    pub payload: Payload,
}

/// One frame-to-frame training pair.
pub struct Transition<'a> {
    pub frame_t: &'a Frame,
    pub action: Option<Action>,
    pub frame_next: &'a Frame,
    pub pos_t: &'a [(f64, f64)],
    pub pos_next: &'a [(f64, f64)],
}

/// One token-to-token training pair (paradigm D).
pub struct EmbedTransition<'a> {
    pub embed_t: &'a [f64],
    pub embed_next: &'a [f64],
    pub word_t: usize,
    pub word_next: usize,
}

impl Dataset {
    /// Consecutive-pair transition count.
    pub fn transition_count(&self) -> usize {
        match &self.payload {
            Payload::Video(v) => v.frames.len().saturating_sub(1),
            Payload::Grammar(g) => g.sequence.len().saturating_sub(1),
        }
    }

    pub fn video(&self) -> Option<&VideoData> {
        match &self.payload {
            Payload::Video(v) => Some(v),
            Payload::Grammar(_) => None,
        }
    }

    pub fn grammar(&self) -> Option<&GrammarCorpus> {
        match &self.payload {
            Payload::Grammar(g) => Some(g),
            Payload::Video(_) => None,
        }
    }

    pub fn video_transition(&self, i: usize) -> Option<Transition<'_>> {
        let v = self.video()?;
        if i + 1 >= v.frames.len() {
            return None;
        }
        Some(Transition {
            frame_t: &v.frames[i],
            action: v.actions.as_ref().map(|a| a[i]),
            frame_next: &v.frames[i + 1],
            pos_t: &v.positions[i],
            pos_next: &v.positions[i + 1],
        })
    }

    pub fn embed_transition(&self, i: usize) -> Option<EmbedTransition<'_>> {
        let g = self.grammar()?;
        if i + 1 >= g.sequence.len() {
            return None;
        }
        let (wa, wb) = (g.sequence[i] as usize, g.sequence[i + 1] as usize);
        Some(EmbedTransition {
            embed_t: g.embedding(wa),
            embed_next: g.embedding(wb),
            word_t: wa,
            word_next: wb,
        })
    }

    pub fn frame_geometry(&self) -> Option<(usize, usize, usize)> {
        self.video().and_then(|v| v.frames.first()).map(|f| (f.channels, f.height, f.width))
    }

    // ── Serialization ───────────────────────────────────────────────────

    pub fn write_to<W: Write>(&self, w: &mut W) -> DatasetResult<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&[self.paradigm.tag()])?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&(self.config_echo.len() as u32).to_le_bytes())?;
        w.write_all(self.config_echo.as_bytes())?;
        match &self.payload {
            Payload::Video(v) => {
                let (c, h, wd) = self
                    .frame_geometry()
                    .ok_or_else(|| DatasetError::BadFormat { reason: "empty video".into() })?;
                w.write_all(&(v.frames.len() as u32).to_le_bytes())?;
                for dim in [c, h, wd] {
                    w.write_all(&(dim as u32).to_le_bytes())?;
                }
                for f in &v.frames {
                    for px in &f.pixels {
                        w.write_all(&px.to_le_bytes())?;
                    }
                }
                match &v.actions {
                    Some(acts) => {
                        w.write_all(&[1u8])?;
                        w.write_all(&(acts.len() as u32).to_le_bytes())?;
                        for a in acts {
                            w.write_all(&[a.id()])?;
                        }
                    }
                    None => w.write_all(&[0u8])?,
                }
                let balls = v.positions.first().map(|p| p.len()).unwrap_or(0);
                w.write_all(&(balls as u32).to_le_bytes())?;
                for per_frame in &v.positions {
                    for (x, y) in per_frame {
                        w.write_all(&x.to_le_bytes())?;
                        w.write_all(&y.to_le_bytes())?;
                    }
                }
            }
            Payload::Grammar(g) => {
                w.write_all(&(GRAMMAR_VOCAB as u32).to_le_bytes())?;
                w.write_all(&(GRAMMAR_EMBED_DIM as u32).to_le_bytes())?;
                for v in &g.embeddings {
                    w.write_all(&v.to_le_bytes())?;
                }
                for c in &g.categories {
                    w.write_all(&[*c as u8])?;
                }
                w.write_all(&(g.sequence.len() as u32).to_le_bytes())?;
                for t in &g.sequence {
                    w.write_all(&t.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> DatasetResult<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, &buf)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> DatasetResult<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(DatasetError::BadFormat { reason: "bad magic".into() });
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(DatasetError::BadFormat { reason: format!("unsupported version {version}") });
        }
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let paradigm = Paradigm::from_tag(tag[0])?;
        let seed = read_u64(r)?;
        let echo_len = read_u32(r)? as usize;
        let mut echo = vec![0u8; echo_len];
        r.read_exact(&mut echo)?;
        let config_echo = String::from_utf8(echo)
            .map_err(|_| DatasetError::BadFormat { reason: "non-UTF8 config echo".into() })?;

        let payload = if paradigm == Paradigm::Grammar {
            let vocab = read_u32(r)? as usize;
            let edim = read_u32(r)? as usize;
            if vocab != GRAMMAR_VOCAB || edim != GRAMMAR_EMBED_DIM {
                return Err(DatasetError::BadFormat {
                    reason: format!("grammar dims {vocab}x{edim}"),
                });
            }
            let mut embeddings = Vec::with_capacity(vocab * edim);
            for _ in 0..vocab * edim {
                embeddings.push(read_f64(r)?);
            }
            let mut categories = Vec::with_capacity(vocab);
            for _ in 0..vocab {
                let mut b = [0u8; 1];
                r.read_exact(&mut b)?;
                categories.push(match b[0] {
                    0 => WordCategory::Noun,
                    1 => WordCategory::Verb,
                    2 => WordCategory::Adjective,
                    3 => WordCategory::Object,
                    x => {
                        return Err(DatasetError::BadFormat { reason: format!("category {x}") })
                    }
                });
            }
            let seq_len = read_u32(r)? as usize;
            let mut sequence = Vec::with_capacity(seq_len);
            for _ in 0..seq_len {
                sequence.push(read_u32(r)?);
            }
            Payload::Grammar(GrammarCorpus { embeddings, categories, sequence })
        } else {
            let n_frames = read_u32(r)? as usize;
            let c = read_u32(r)? as usize;
            let h = read_u32(r)? as usize;
            let wd = read_u32(r)? as usize;
            let mut frames = Vec::with_capacity(n_frames);
            for _ in 0..n_frames {
                let mut pixels = Vec::with_capacity(c * h * wd);
                for _ in 0..c * h * wd {
                    pixels.push(read_f32(r)?);
                }
                frames.push(Frame { channels: c, height: h, width: wd, pixels });
            }
            let mut has_actions = [0u8; 1];
            r.read_exact(&mut has_actions)?;
            let actions = if has_actions[0] == 1 {
                let n = read_u32(r)? as usize;
                let mut acts = Vec::with_capacity(n);
                for _ in 0..n {
                    let mut b = [0u8; 1];
                    r.read_exact(&mut b)?;
                    acts.push(
                        Action::from_id(b[0])
                            .map_err(|e| DatasetError::BadFormat { reason: e.to_string() })?,
                    );
                }
                Some(acts)
            } else {
                None
            };
            let balls = read_u32(r)? as usize;
            let mut positions = Vec::with_capacity(n_frames);
            for _ in 0..n_frames {
                let mut per = Vec::with_capacity(balls);
                for _ in 0..balls {
                    per.push((read_f64(r)?, read_f64(r)?));
                }
                positions.push(per);
            }
            Payload::Video(VideoData { frames, actions, positions })
        };
        Ok(Dataset { paradigm, seed, config_echo, payload })
    }

    pub fn load(path: &Path) -> DatasetResult<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}

const MAGIC: &[u8; 8] = b"GNWMDATA";
const VERSION: u32 = 1;

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f32<R: Read>(r: &mut R) -> io::Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Grayscale PGM (P5, maxval 255) of a frame, luminance = channel mean.
pub fn write_pgm(frame: &Frame, path: &Path) -> DatasetResult<()> {
    let mut buf = Vec::new();
    write!(buf, "P5\n{} {}\n255\n", frame.width, frame.height)?;
    for y in 0..frame.height {
        for x in 0..frame.width {
            let mut v = 0.0f32;
            for c in 0..frame.channels {
                v += frame.pixels[(c * frame.height + y) * frame.width + x];
            }
            v /= frame.channels as f32;
            buf.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}
