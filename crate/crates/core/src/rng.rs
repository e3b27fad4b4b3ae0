//! Named, seeded random streams.
//!
//! Every source of randomness in a run is a [`StreamRng`] derived from the
//! master seed and a string label. Streams with different labels are
//! statistically independent, so consuming one (say, evaluation noise) never
//! shifts another (say, the AGKD gate). Each stream exposes its cipher
//! position so checkpoints can freeze and resume it exactly.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KdError, Result};
use crate::mat::Mat;

/// Canonical stream labels used by the training engine.
pub const STREAM_NOISE: &str = "noise";
pub const STREAM_GATE: &str = "gate";
pub const STREAM_AUGMENT: &str = "augment";
pub const STREAM_BATCH: &str = "batch";
pub const STREAM_EVAL: &str = "eval";
pub const STREAM_GRID: &str = "grid";
pub const STREAM_SUBSET: &str = "subset";
pub const STREAM_INIT_G: &str = "init:g";
pub const STREAM_INIT_D: &str = "init:d";

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Expands (master_seed, label) into a 32-byte cipher seed.
pub fn derive_seed(master_seed: u64, label: &str) -> [u8; 32] {
    let mut state = master_seed ^ fnv1a64(label.as_bytes());
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    seed
}

/// One labeled random stream backed by a counter-mode cipher.
///
/// The full state is (seed, word_pos); both are cheap to capture and restore,
/// which is what makes checkpoint resume bit-exact.
#[derive(Debug, Clone)]
pub struct StreamRng {
    label: String,
    seed: [u8; 32],
    rng: ChaCha8Rng,
}

impl StreamRng {
    pub fn new(master_seed: u64, label: &str) -> StreamRng {
        let seed = derive_seed(master_seed, label);
        StreamRng {
            label: label.to_string(),
            seed,
            rng: ChaCha8Rng::from_seed(seed),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn seed(&self) -> [u8; 32] {
        self.seed
    }

    pub fn word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn set_word_pos(&mut self, pos: u128) {
        self.rng.set_word_pos(pos);
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.gen()
    }

    /// Uniform draw in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below: empty range");
        self.rng.gen_range(0..n)
    }

    /// Uniform integer in [lo, hi] inclusive.
    pub fn range_inclusive(&mut self, lo: i64, hi: i64) -> i64 {
        assert!(lo <= hi, "range_inclusive: lo > hi");
        self.rng.gen_range(lo..=hi)
    }

    /// Standard normal draw via the Box-Muller transform.
    ///
    /// Each call consumes exactly two uniforms and discards the second
    /// transform output, so the stream position alone determines the state
    /// (no hidden cached value to lose across a checkpoint).
    pub fn normal(&mut self) -> f64 {
        let (a, _) = self.normal_pair();
        a
    }

    fn normal_pair(&mut self) -> (f64, f64) {
        let u1 = self.uniform().max(f64::MIN_POSITIVE);
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        (r * theta.cos(), r * theta.sin())
    }

    /// Fills a vector with standard normal draws, using both Box-Muller
    /// outputs per pair for thrift.
    pub fn fill_normal(&mut self, n: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(n + 1);
        while out.len() < n {
            let (a, b) = self.normal_pair();
            out.push(a);
            out.push(b);
        }
        out.truncate(n);
        out
    }

    pub fn normal_mat(&mut self, rows: usize, cols: usize) -> Mat {
        Mat::from_vec(rows, cols, self.fill_normal(rows * cols))
            .expect("normal_mat: fill length matches by construction")
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// Serializable snapshot of one stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamState {
    pub label: String,
    /// 64 hex chars covering the 32-byte cipher seed.
    pub seed_hex: String,
    /// Decimal cipher word position (u128 exceeds JSON number range).
    pub word_pos: String,
}

/// Lazily created collection of named streams sharing one master seed.
#[derive(Debug)]
pub struct StreamHub {
    master_seed: u64,
    streams: BTreeMap<String, StreamRng>,
}

impl StreamHub {
    pub fn new(master_seed: u64) -> StreamHub {
        StreamHub {
            master_seed,
            streams: BTreeMap::new(),
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// Returns the stream for `label`, creating it at position 0 on first use.
    pub fn stream(&mut self, label: &str) -> &mut StreamRng {
        let master = self.master_seed;
        self.streams
            .entry(label.to_string())
            .or_insert_with(|| StreamRng::new(master, label))
    }

    /// Captures every stream touched so far.
    pub fn snapshot(&self) -> Vec<StreamState> {
        self.streams
            .values()
            .map(|s| StreamState {
                label: s.label.clone(),
                seed_hex: hex_encode(&s.seed),
                word_pos: s.word_pos().to_string(),
            })
            .collect()
    }

    /// Rebuilds a hub from a snapshot, restoring each stream position.
    pub fn restore(master_seed: u64, states: &[StreamState]) -> Result<StreamHub> {
        let mut hub = StreamHub::new(master_seed);
        for st in states {
            let expected = derive_seed(master_seed, &st.label);
            if hex_encode(&expected) != st.seed_hex {
                return Err(KdError::invalid(format!(
                    "stream '{}': stored seed does not match master seed {}",
                    st.label, master_seed
                )));
            }
            let pos: u128 = st.word_pos.parse().map_err(|_| {
                KdError::invalid(format!(
                    "stream '{}': bad word_pos '{}'",
                    st.label, st.word_pos
                ))
            })?;
            let mut s = StreamRng::new(master_seed, &st.label);
            s.set_word_pos(pos);
            hub.streams.insert(st.label.clone(), s);
        }
        Ok(hub)
    }
}

pub fn hex_encode(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{:02x}", b));
    }
    s
}
