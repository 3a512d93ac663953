//! Counter-based random streams.
//!
//! Every random number in the crate is a pure function of
//! `(seed, replica, node, channel, epoch)`. A tree node always sees the same
//! draw no matter which traversal visits it or which thread runs the
//! replica, and a single generation can be resampled by bumping its epoch.
//!
//! The block function is Philox4x32-10 (Salmon et al., SC'11).

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

#[inline(always)]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = u64::from(a) * u64::from(b);
    ((p >> 32) as u32, p as u32)
}

/// Ten-round Philox4x32 block function.
#[inline]
pub fn philox4x32_10(mut ctr: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let (mut k0, mut k1) = (key[0], key[1]);
    for round in 0..10 {
        if round > 0 {
            k0 = k0.wrapping_add(PHILOX_W0);
            k1 = k1.wrapping_add(PHILOX_W1);
        }
        let (hi0, lo0) = mulhilo(PHILOX_M0, ctr[0]);
        let (hi1, lo1) = mulhilo(PHILOX_M1, ctr[2]);
        ctr = [hi1 ^ ctr[1] ^ k0, lo1, hi0 ^ ctr[3] ^ k1, lo0];
    }
    ctr
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Maps 64 random bits onto `[0, 1)` with 53 bits of resolution.
#[inline]
pub fn unit_f64(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Independent draw channels for a node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u32)]
pub enum Channel {
    /// Log-radius `ω`.
    Radius = 1,
    /// Phase `θ`.
    Phase = 2,
    /// Free-form draws that are not attached to a tree node.
    Aux = 3,
}

/// A random stream identified by `(seed, replica)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Stream {
    seed: u64,
    replica: u64,
    key: [u32; 2],
}

impl Stream {
    pub fn new(seed: u64, replica: u64) -> Self {
        let k = splitmix64(seed ^ splitmix64(replica.wrapping_add(0x5851_F42D_4C95_7F2D)));
        Self {
            seed,
            replica,
            key: [k as u32, (k >> 32) as u32],
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn replica(&self) -> u64 {
        self.replica
    }

    /// Another replica of the same experiment.
    pub fn with_replica(&self, replica: u64) -> Self {
        Self::new(self.seed, replica)
    }

    /// 128 random bits for `(index, channel, epoch)`.
    #[inline]
    pub fn block(&self, index: u64, channel: Channel, epoch: u32) -> [u64; 2] {
        let out = philox4x32_10(
            [index as u32, (index >> 32) as u32, channel as u32, epoch],
            self.key,
        );
        [
            u64::from(out[0]) | (u64::from(out[1]) << 32),
            u64::from(out[2]) | (u64::from(out[3]) << 32),
        ]
    }

    /// Two uniforms on `[0, 1)` for `(index, channel, epoch)`.
    #[inline]
    pub fn uniforms(&self, index: u64, channel: Channel, epoch: u32) -> [f64; 2] {
        let [a, b] = self.block(index, channel, epoch);
        [unit_f64(a), unit_f64(b)]
    }

    /// Sequential view of this stream, starting at index 0.
    pub fn cursor(&self) -> StreamCursor {
        StreamCursor {
            stream: *self,
            next: 0,
        }
    }
}

/// Walks a [`Stream`] sequentially; each step consumes one index.
#[derive(Clone, Debug)]
pub struct StreamCursor {
    stream: Stream,
    next: u64,
}

impl StreamCursor {
    pub fn stream(&self) -> &Stream {
        &self.stream
    }

    /// Advances and returns the index the next draw will use.
    pub fn advance(&mut self) -> u64 {
        let i = self.next;
        self.next += 1;
        i
    }

    pub fn position(&self) -> u64 {
        self.next
    }
}

/// Standard normal from two uniforms (Box–Muller, cosine branch).
#[inline]
pub fn box_muller(u: [f64; 2]) -> f64 {
    let r = (-2.0 * (1.0 - u[0]).ln()).sqrt();
    r * (std::f64::consts::TAU * u[1]).cos()
}
