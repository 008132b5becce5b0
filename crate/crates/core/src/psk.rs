//! Pre-shared key pool with append-only allocation.
//!
//! Every bit of the pool serves at most one purpose. The AES key is the one
//! exception: it is allocated once and handed out again on later requests.
//!
//! Persisted layout (all integers big-endian):
//! `"HOQSPSK1"`, pool length in bits (u64), pool bytes, cursor (u64),
//! current cycle (u64), allocation count (u64), then per allocation
//! purpose (u8), offset (u64), length (u64), cycle (u64).

use std::fs;
use std::io;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::{self, random_bits, Bits};
use crate::mac::{self, MacError, MacTag, MAC_KEY_BITS};

pub const AES_KEY_BITS: usize = 256;
const MAGIC: &[u8; 8] = b"HOQSPSK1";

#[derive(Debug, Error)]
pub enum PskError {
    #[error("PSK pool exhausted: requested {requested} bits, {remaining} left")]
    PoolExhausted { requested: usize, remaining: usize },
    #[error("the AES key has already been allocated")]
    DoubleAesAllocation,
    #[error("AES key is {AES_KEY_BITS} bits, requested {0}")]
    AesKeyLength(usize),
    #[error(transparent)]
    Mac(#[from] MacError),
    #[error("ledger file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    IsPad,
    MacKey,
    AesKey,
}

impl Purpose {
    fn code(self) -> u8 {
        match self {
            Purpose::IsPad => 1,
            Purpose::MacKey => 2,
            Purpose::AesKey => 3,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            1 => Some(Purpose::IsPad),
            2 => Some(Purpose::MacKey),
            3 => Some(Purpose::AesKey),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    pub purpose: Purpose,
    pub offset: u64,
    pub len: u64,
    pub cycle: u64,
}

impl Allocation {
    pub fn end(&self) -> u64 {
        self.offset + self.len
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PskLedger {
    pool: Bits,
    cursor: usize,
    cycle: u64,
    allocations: Vec<Allocation>,
}

/// A slice of the pool together with where it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeySlice {
    pub bits: Bits,
    pub offset: u64,
}

impl PskLedger {
    pub fn new(pool: Bits) -> Self {
        PskLedger { pool, cursor: 0, cycle: 0, allocations: Vec::new() }
    }

    /// Seeded pool, so two simulated parties can start from equal copies.
    pub fn from_seed(nbits: usize, seed: u64) -> Self {
        Self::new(random_bits(&mut ChaCha20Rng::seed_from_u64(seed), nbits))
    }

    pub fn set_cycle(&mut self, cycle: u64) {
        self.cycle = cycle;
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn pool_bits(&self) -> usize {
        self.pool.len()
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn remaining(&self) -> usize {
        self.pool.len() - self.cursor
    }

    pub fn allocations(&self) -> &[Allocation] {
        &self.allocations
    }

    /// Bits handed out during `cycle`.
    pub fn consumed_in_cycle(&self, cycle: u64) -> u64 {
        self.allocations.iter().filter(|a| a.cycle == cycle).map(|a| a.len).sum()
    }

    pub fn allocate(&mut self, purpose: Purpose, nbits: usize) -> Result<KeySlice, PskError> {
        if purpose == Purpose::AesKey {
            if self.allocations.iter().any(|a| a.purpose == Purpose::AesKey) {
                return Err(PskError::DoubleAesAllocation);
            }
            if nbits != AES_KEY_BITS {
                return Err(PskError::AesKeyLength(nbits));
            }
        }
        if nbits > self.remaining() {
            return Err(PskError::PoolExhausted { requested: nbits, remaining: self.remaining() });
        }
        let offset = self.cursor;
        let slice = self.pool[offset..offset + nbits].to_bitvec();
        self.cursor += nbits;
        self.allocations.push(Allocation { purpose, offset: offset as u64, len: nbits as u64, cycle: self.cycle });
        Ok(KeySlice { bits: slice, offset: offset as u64 })
    }

    /// The fixed AES key, allocated on first use.
    pub fn aes_key(&mut self) -> Result<[u8; 32], PskError> {
        let slice = match self.allocations.iter().find(|a| a.purpose == Purpose::AesKey) {
            Some(a) => self.pool[a.offset as usize..a.end() as usize].to_bitvec(),
            None => self.allocate(Purpose::AesKey, AES_KEY_BITS)?.bits,
        };
        Ok(bits::to_bytes(&slice).try_into().expect("256 bits"))
    }

    pub fn mac_key(&mut self) -> Result<KeySlice, PskError> {
        self.allocate(Purpose::MacKey, MAC_KEY_BITS)
    }

    /// Tags `message` with a fresh key from the pool.
    pub fn mac(&mut self, message: &[u8]) -> Result<MacTag, PskError> {
        let key = self.mac_key()?;
        let mut tag = mac::wc_mac(&key.bits, message)?;
        tag.key_offset = Some(key.offset);
        Ok(tag)
    }

    /// Verifies `tag` with the next fresh key; the key is spent either way.
    pub fn verify(&mut self, message: &[u8], tag: &MacTag) -> Result<bool, PskError> {
        let key = self.mac_key()?;
        Ok(mac::wc_verify(&key.bits, message, tag))
    }

    /// True when no two allocations overlap.
    pub fn is_disjoint(&self) -> bool {
        let mut spans: Vec<_> = self.allocations.iter().map(|a| (a.offset, a.end())).collect();
        spans.sort_unstable();
        spans.windows(2).all(|w| w[0].1 <= w[1].0)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(48 + self.pool.len() / 8 + 25 * self.allocations.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.pool.len() as u64).to_be_bytes());
        out.extend_from_slice(&bits::to_bytes(&self.pool));
        out.extend_from_slice(&(self.cursor as u64).to_be_bytes());
        out.extend_from_slice(&self.cycle.to_be_bytes());
        out.extend_from_slice(&(self.allocations.len() as u64).to_be_bytes());
        for a in &self.allocations {
            out.push(a.purpose.code());
            out.extend_from_slice(&a.offset.to_be_bytes());
            out.extend_from_slice(&a.len.to_be_bytes());
            out.extend_from_slice(&a.cycle.to_be_bytes());
        }
        out
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self, PskError> {
        let mut r = Reader { data, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(PskError::Format("bad magic".into()));
        }
        let nbits = r.u64()? as usize;
        let mut pool = bits::from_bytes(r.take(nbits.div_ceil(8))?);
        pool.truncate(nbits);
        let cursor = r.u64()? as usize;
        let cycle = r.u64()?;
        let count = r.u64()? as usize;
        let mut allocations = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let purpose = Purpose::from_code(r.take(1)?[0]).ok_or_else(|| PskError::Format("unknown purpose".into()))?;
            allocations.push(Allocation { purpose, offset: r.u64()?, len: r.u64()?, cycle: r.u64()? });
        }
        if r.pos != data.len() {
            return Err(PskError::Format("trailing bytes".into()));
        }
        if cursor > nbits || allocations.iter().any(|a| a.end() > cursor as u64) {
            return Err(PskError::Format("allocation beyond cursor".into()));
        }
        Ok(PskLedger { pool, cursor, cycle, allocations })
    }

    pub fn save(&self, path: &Path) -> Result<(), PskError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PskError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PskError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        let end = end.ok_or_else(|| PskError::Format("truncated".into()))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, PskError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }
}
