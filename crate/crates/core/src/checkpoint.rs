//! Binary checkpoints of a trained agent.
//!
//! Layout (little endian):
//!
//! ```text
//! magic "UUVHCKPT" | version u32 | header_len u32 | header (JSON)
//! | n_online u64 | online f64 × n | n_target u64 | target f64 × n
//! | sha256 of everything above (32 bytes)
//! ```
//!
//! The JSON header carries the layer sizes, hyperparameters, action and
//! observation settings, the training-step counter and the random-stream
//! positions. Adam moments are not stored, so resumed training restarts the
//! optimiser.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dqn::network::{Adam, Mlp};
use crate::dqn::{ActionSpec, Agent, DqnHyperparams, ObsContext};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"UUVHCKPT";
pub const VERSION: u32 = 1;

/// Position of one ChaCha stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// u128 word position, as a decimal string.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Format(format!("bad rng word position {:?}", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    sizes: Vec<usize>,
    hyper: DqnHyperparams,
    spec: ActionSpec,
    obs: ObsContext,
    train_steps: u64,
    episodes: usize,
    rngs: Vec<(String, RngState)>,
}

/// Everything restored from a checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub agent: Agent,
    pub episodes: usize,
    pub rngs: Vec<(String, RngState)>,
}

fn put_params(out: &mut Vec<u8>, p: &[f64]) {
    out.extend_from_slice(&(p.len() as u64).to_le_bytes());
    for v in p {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(agent: &Agent, episodes: usize, rngs: &[(String, RngState)]) -> Result<Vec<u8>> {
    let header = Header {
        sizes: agent.online.sizes(),
        hyper: agent.hyper.clone(),
        spec: agent.spec,
        obs: agent.obs,
        train_steps: agent.train_steps,
        episodes,
        rngs: rngs.to_vec(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    put_params(&mut out, &agent.online.params());
    put_params(&mut out, &agent.target.params());
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn params(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("parameter count overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 32 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Format("checkpoint checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: MAGIC.len() };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let len = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(len)?).map_err(|e| Error::Format(e.to_string()))?;
    let online_p = r.params()?;
    let target_p = r.params()?;
    if r.pos != body.len() {
        return Err(Error::Format("trailing bytes in checkpoint".into()));
    }
    // Shapes come from the header; weights are overwritten below.
    let mut seed_rng = ChaCha8Rng::seed_from_u64(0);
    let mut online = Mlp::new(&header.sizes, &mut seed_rng)?;
    online.set_params(&online_p)?;
    let mut target = online.clone();
    target.set_params(&target_p)?;
    let mut agent = Agent::from_network(header.hyper.clone(), header.spec, header.obs, online)?;
    agent.target = target;
    agent.adam = Adam::new(agent.online.num_params(), header.hyper.learning_rate);
    agent.train_steps = header.train_steps;
    Ok(Checkpoint {
        agent,
        episodes: header.episodes,
        rngs: header.rngs,
    })
}

pub fn save(path: &Path, agent: &Agent, episodes: usize, rngs: &[(String, RngState)]) -> Result<()> {
    std::fs::write(path, encode(agent, episodes, rngs)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    decode(&std::fs::read(path)?)
}
