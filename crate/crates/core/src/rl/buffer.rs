use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::worldsim::DualObservation;

/// One environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: DualObservation,
    pub action: Vec<f32>,
    pub reward: f32,
    pub next_obs: DualObservation,
    /// True termination (success), not a time-limit cut.
    pub done: bool,
}

/// Compact stored form. Views are quantized to 8 bits; the next
/// observation's dynamic view is dropped because no loss reads it.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredTransition {
    pub static_view: Vec<u8>,
    pub dynamic_view: Vec<u8>,
    pub phi_d: f32,
    pub state: Vec<f32>,
    pub action: Vec<f32>,
    pub reward: f32,
    pub next_static_view: Vec<u8>,
    pub next_state: Vec<f32>,
    pub done: bool,
}

impl StoredTransition {
    pub fn image(&self, bytes: &[u8], size: usize) -> Image {
        Image::from_u8(size, size, bytes).expect("stored view matches buffer size")
    }
}

const BUFFER_MAGIC: &[u8; 8] = b"VXBUF001";

#[derive(Serialize, Deserialize)]
struct BufferHeader {
    capacity: usize,
    image_size: usize,
    next: usize,
    added: u64,
    len: usize,
    state_dim: usize,
    action_dim: usize,
}

struct Cursor<'a>(&'a [u8]);

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.0.len() < n {
            return Err(Error::Checkpoint("corrupt replay buffer: truncated".into()));
        }
        let (a, b) = self.0.split_at(n);
        self.0 = b;
        Ok(a)
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

/// Fixed-capacity FIFO replay storage.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    image_size: usize,
    items: Vec<StoredTransition>,
    next: usize,
    added: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, image_size: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Precondition("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            image_size,
            items: Vec::new(),
            next: 0,
            added: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    /// Total transitions ever added.
    pub fn total_added(&self) -> u64 {
        self.added
    }

    pub fn add(&mut self, t: &Transition) -> Result<()> {
        let s = self.image_size;
        for img in [&t.obs.static_view, &t.obs.dynamic_view, &t.next_obs.static_view] {
            if img.dims() != (s, s) {
                return Err(Error::shape((s, s), img.dims()));
            }
        }
        if !t.reward.is_finite() || t.action.iter().any(|a| !(-1.0..=1.0).contains(a)) {
            return Err(Error::Precondition("transition reward or action out of contract".into()));
        }
        let stored = StoredTransition {
            static_view: t.obs.static_view.to_u8(),
            dynamic_view: t.obs.dynamic_view.to_u8(),
            phi_d: t.obs.phi_d as f32,
            state: t.obs.robot_state.clone(),
            action: t.action.clone(),
            reward: t.reward,
            next_static_view: t.next_obs.static_view.to_u8(),
            next_state: t.next_obs.robot_state.clone(),
            done: t.done,
        };
        if self.items.len() < self.capacity {
            self.items.push(stored);
        } else {
            self.items[self.next] = stored;
        }
        self.next = (self.next + 1) % self.capacity;
        self.added += 1;
        Ok(())
    }

    /// Item `i` in insertion order, oldest first.
    pub fn get(&self, i: usize) -> Option<&StoredTransition> {
        if i >= self.items.len() {
            return None;
        }
        let start = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items.get((start + i) % self.items.len())
    }

    /// Uniform indices with replacement over the whole buffer.
    pub fn sample_indices(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
        self.sample_recent_indices(n, self.items.len(), rng)
    }

    /// Uniform indices with replacement over the `window` most recent items.
    pub fn sample_recent_indices(&self, n: usize, window: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
        if self.items.len() < n || self.items.is_empty() {
            return Err(Error::Underfull {
                size: self.items.len(),
                requested: n,
            });
        }
        let w = window.clamp(1, self.items.len());
        let offset = self.items.len() - w;
        Ok((0..n).map(|_| offset + rng.random_range(0..w)).collect())
    }

    /// Binary form: magic, a little-endian `u64` header length, a JSON
    /// header, then every item's fields in storage order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let first = self.items.first();
        let header = BufferHeader {
            capacity: self.capacity,
            image_size: self.image_size,
            next: self.next,
            added: self.added,
            len: self.items.len(),
            state_dim: first.map_or(0, |t| t.state.len()),
            action_dim: first.map_or(0, |t| t.action.len()),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + header.len() + self.items.len() * 3 * self.image_size.pow(2) * 3);
        out.extend_from_slice(BUFFER_MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let floats = |out: &mut Vec<u8>, v: &[f32]| v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        for t in &self.items {
            out.extend_from_slice(&t.static_view);
            out.extend_from_slice(&t.dynamic_view);
            floats(&mut out, &[t.phi_d]);
            floats(&mut out, &t.state);
            floats(&mut out, &t.action);
            floats(&mut out, &[t.reward]);
            out.extend_from_slice(&t.next_static_view);
            floats(&mut out, &t.next_state);
            out.push(t.done as u8);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |what: &str| Error::Checkpoint(format!("corrupt replay buffer: {what}"));
        if bytes.len() < 16 || &bytes[..8] != BUFFER_MAGIC {
            return Err(bad("bad magic"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body_start = 16usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("header"))?;
        let h: BufferHeader = serde_json::from_slice(&bytes[16..body_start]).map_err(|_| bad("header"))?;
        if h.capacity == 0 || h.len > h.capacity || h.next >= h.capacity {
            return Err(bad("inconsistent sizes"));
        }
        let mut r = Cursor(&bytes[body_start..]);
        let view = h.image_size * h.image_size * 3;
        let mut items = Vec::with_capacity(h.len);
        for _ in 0..h.len {
            let static_view = r.take(view)?.to_vec();
            let dynamic_view = r.take(view)?.to_vec();
            let phi_d = r.floats(1)?[0];
            let state = r.floats(h.state_dim)?;
            let action = r.floats(h.action_dim)?;
            let reward = r.floats(1)?[0];
            let next_static_view = r.take(view)?.to_vec();
            let next_state = r.floats(h.state_dim)?;
            let done = r.take(1)?[0] != 0;
            items.push(StoredTransition {
                static_view,
                dynamic_view,
                phi_d,
                state,
                action,
                reward,
                next_static_view,
                next_state,
                done,
            });
        }
        if !r.0.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self {
            capacity: h.capacity,
            image_size: h.image_size,
            items,
            next: h.next,
            added: h.added,
        })
    }

    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<&StoredTransition>> {
        Ok(self
            .sample_indices(n, rng)?
            .into_iter()
            .map(|i| self.get(i).expect("index in range"))
            .collect())
    }
}
