//! One full cycle between two parties: instruction-sequence share, QKD
//! sessions, KEM exchange and cascade encryption of a message.
//!
//! Every frame except ABORT is followed by a MAC frame tagging the encoded
//! frame. Each tag consumes a fresh ledger key on both sides, so the two
//! ledgers stay in lockstep as long as frames arrive in order.
//!
//! Per session the frames are, with A = Alice and B = Bob:
//! A SAMPLE_IDX (position mask and A's sample bits), B SAMPLE_IDX (B's sample
//! bits), A SYNDROME, B VERIFY (decoded), A VERIFY (hash seed and hash),
//! B VERIFY (hashes agree), A PA_SEED.

pub mod channel;
pub mod frame;

use std::io;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::{self, random_bits, Bits};
use crate::bounds::{SecurityParams, QBER_THRESHOLD};
use crate::hybrid::{self, he_decrypt, he_encrypt_traced, CipherEnvelope, HeError, KeyBundle, SID_LIMIT};
use crate::instruction::{self, unrank, IsError};
use crate::mac::MacTag;
use crate::optimizer::{optimize, GridPreset, OptimizationResult, OptimizerConfig, OptimizerError, PeType};
use crate::pqc::{self, KemParamSet};
use crate::psk::{PskError, PskLedger, Purpose};
use crate::qkd::{self, toeplitz, ParityCheckMatrix, QkdError, SessionStatus};

pub use channel::{Channel, Direction, MemoryChannel, RecordingChannel, TamperingChannel, TcpChannel, Transcript};
pub use frame::{Frame, FrameType};

/// Authenticated frames per QKD session, charged as the tag count `q`.
pub const SESSION_TAG_COUNT: u32 = 7;
pub const PROTOCOL_VERSION: u8 = 1;
pub const DEFAULT_PSK_BITS: usize = 1 << 20;
/// 63 bytes, padding to one 512-bit block run, which fits the per-session key at the usual QBER.
pub const DEFAULT_MESSAGE: &[u8] = b"Cycle note: one-time pad, AES-CTR and Ascon, in a secret order.";
/// 102 bytes (816 bits), the size used for the size-model comparison.
pub const SAMPLE_MESSAGE: &[u8] =
    b"Hybrid cycle sample: one-time pad, AES counter mode and Ascon, layered by the secret instruction order";

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("frame error: {0}")]
    Frame(String),
    #[error("channel closed")]
    ChannelClosed,
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Psk(#[from] PskError),
    #[error(transparent)]
    Qkd(#[from] QkdError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Sequence(#[from] IsError),
    #[error("party thread panicked")]
    Panic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleStatus {
    Completed,
    AbortQber,
    AbortEcDetectable,
    AbortVerify,
    AbortInfeasible,
    AbortMac,
    AbortKem,
    AbortHe,
    AbortInsufficientKey,
    AbortProtocol,
}

impl CycleStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CycleStatus::Completed => "completed",
            CycleStatus::AbortQber => "abort_qber",
            CycleStatus::AbortEcDetectable => "abort_ec_detectable",
            CycleStatus::AbortVerify => "abort_verify",
            CycleStatus::AbortInfeasible => "abort_infeasible",
            CycleStatus::AbortMac => "abort_mac",
            CycleStatus::AbortKem => "abort_kem",
            CycleStatus::AbortHe => "abort_he",
            CycleStatus::AbortInsufficientKey => "abort_insufficient_key",
            CycleStatus::AbortProtocol => "abort_protocol",
        }
    }

    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(c: u8) -> Self {
        use CycleStatus::*;
        [
            Completed,
            AbortQber,
            AbortEcDetectable,
            AbortVerify,
            AbortInfeasible,
            AbortMac,
            AbortKem,
            AbortHe,
            AbortInsufficientKey,
            AbortProtocol,
        ]
        .get(c as usize)
        .copied()
        .unwrap_or(AbortProtocol)
    }

    pub fn is_completed(self) -> bool {
        self == CycleStatus::Completed
    }
}

impl std::fmt::Display for CycleStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl From<SessionStatus> for CycleStatus {
    fn from(s: SessionStatus) -> Self {
        match s {
            SessionStatus::Completed => CycleStatus::Completed,
            SessionStatus::AbortQber => CycleStatus::AbortQber,
            SessionStatus::AbortEcDetectable => CycleStatus::AbortEcDetectable,
            SessionStatus::AbortVerify => CycleStatus::AbortVerify,
            SessionStatus::AbortInfeasible => CycleStatus::AbortInfeasible,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleConfig {
    pub n_obs: u32,
    pub s: u32,
    pub raw_bits: u64,
    /// Simulated channel QBER.
    pub qber: f64,
    pub pe_type: PeType,
    pub grid: GridPreset,
    pub kem: KemParamSet,
    pub message: Vec<u8>,
    pub seed: u64,
    pub psk_seed: u64,
    pub psk_bits: usize,
    pub max_bp_iters: usize,
    pub max_nobs: u32,
}

impl Default for CycleConfig {
    fn default() -> Self {
        CycleConfig {
            n_obs: 4,
            s: 6,
            raw_bits: 20_000,
            qber: 0.0644,
            pe_type: PeType::CpExact,
            grid: GridPreset::Full,
            kem: KemParamSet::MlKem512,
            message: DEFAULT_MESSAGE.to_vec(),
            seed: 1,
            psk_seed: 2,
            psk_bits: DEFAULT_PSK_BITS,
            max_bp_iters: qkd::DEFAULT_BP_ITERS,
            max_nobs: instruction::DEFAULT_MAX_NOBS,
        }
    }
}

impl CycleConfig {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.n_obs > self.max_nobs {
            return Err(ProtocolError::Config(format!("n_obs {} above the configured maximum {}", self.n_obs, self.max_nobs)));
        }
        if self.n_obs == 0 {
            return Err(ProtocolError::Config("n_obs = 0 gives an empty cascade".into()));
        }
        instruction::check_capacity(self.n_obs)?;
        if !(0.0..=0.5).contains(&self.qber) {
            return Err(ProtocolError::Config(format!("qber {} outside [0, 0.5]", self.qber)));
        }
        if self.raw_bits < 16 || self.raw_bits % 4 != 0 {
            return Err(ProtocolError::Config("N must be a positive multiple of 4".into()));
        }
        if self.max_bp_iters == 0 {
            return Err(ProtocolError::Config("max_bp_iters must be positive".into()));
        }
        Ok(())
    }

    pub fn gamma(&self) -> u32 {
        instruction::gamma(self.n_obs)
    }

    /// The shipped code for `N = 20000`, otherwise a seeded regular code of rate 1/2.
    pub fn parity_check(&self) -> Result<Arc<ParityCheckMatrix>, ProtocolError> {
        let remaining = (self.raw_bits - self.raw_bits / 2) as usize;
        if remaining == 10_000 {
            return Ok(Arc::new(ParityCheckMatrix::default_code().clone()));
        }
        Ok(Arc::new(ParityCheckMatrix::generate_regular(remaining / 2, remaining, 3, qkd::ldpc::DEFAULT_CODE_SEED)?))
    }

    /// Session parameters before `delta` is set from the sample.
    pub fn session_params(&self, code: &ParityCheckMatrix) -> SecurityParams {
        let mut p = SecurityParams::new(self.s, self.raw_bits, 0.0);
        p.tag_count = SESSION_TAG_COUNT;
        p.syndrome_bits = code.num_rows() as u64;
        p
    }

    pub fn optimizer_config(&self, params: SecurityParams) -> OptimizerConfig {
        OptimizerConfig::new(params, self.pe_type, self.grid)
    }
}

fn mix(seed: u64, cycle: u64, label: u64) -> u64 {
    let mut z = seed ^ cycle.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ label.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const LABEL_ALICE: u64 = 1;
const LABEL_BOB: u64 = 2;
const LABEL_SESSION: u64 = 1000;

/// Associated data for the Ascon layers.
pub fn associated_data(cycle_id: u64) -> Vec<u8> {
    let mut ad = b"HOQS+".to_vec();
    ad.push(PROTOCOL_VERSION);
    ad.extend_from_slice(&cycle_id.to_be_bytes());
    ad
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub index: u32,
    pub status: SessionStatus,
    pub alpha: f64,
    pub l: Option<u64>,
    pub result: Option<OptimizationResult>,
    pub duration: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartyReport {
    pub status: CycleStatus,
    pub sessions: Vec<SessionRecord>,
    /// Session keys; empty unless the cycle completed.
    pub keys: Vec<Bits>,
    pub sequence: Option<String>,
    /// Bob's recovered plaintext.
    pub message: Option<Vec<u8>>,
    pub final_ct_bytes: Option<usize>,
    pub envelope_bytes: Option<usize>,
    pub he_steps: usize,
    pub qkd_time: Duration,
    pub pqc_time: Duration,
    pub he_time: Duration,
    pub psk_bits_consumed: u64,
}

impl PartyReport {
    fn new() -> Self {
        PartyReport {
            status: CycleStatus::AbortProtocol,
            sessions: Vec::new(),
            keys: Vec::new(),
            sequence: None,
            message: None,
            final_ct_bytes: None,
            envelope_bytes: None,
            he_steps: 0,
            qkd_time: Duration::ZERO,
            pqc_time: Duration::ZERO,
            he_time: Duration::ZERO,
            psk_bits_consumed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleReport {
    pub cycle_id: u64,
    pub n_obs: u32,
    pub status: CycleStatus,
    pub alice_status: CycleStatus,
    pub bob_status: CycleStatus,
    pub sessions: Vec<SessionRecord>,
    pub qkd_bits_extracted: u64,
    pub keys_match: bool,
    pub message_recovered: bool,
    pub sequence: Option<String>,
    pub he_steps: usize,
    pub final_ct_bytes: Option<usize>,
    pub envelope_bytes: Option<usize>,
    pub qkd_time: Duration,
    pub pqc_time: Duration,
    pub he_time: Duration,
    pub total_time: Duration,
    pub psk_bits_consumed: u64,
    pub alice: PartyReport,
    pub bob: PartyReport,
}

enum Stop {
    Status(CycleStatus),
    Fatal(ProtocolError),
}

impl From<ProtocolError> for Stop {
    fn from(e: ProtocolError) -> Self {
        Stop::Fatal(e)
    }
}

impl From<PskError> for Stop {
    fn from(e: PskError) -> Self {
        Stop::Fatal(e.into())
    }
}

impl From<QkdError> for Stop {
    fn from(e: QkdError) -> Self {
        Stop::Fatal(e.into())
    }
}

impl From<OptimizerError> for Stop {
    fn from(e: OptimizerError) -> Self {
        Stop::Fatal(e.into())
    }
}

impl From<IsError> for Stop {
    fn from(e: IsError) -> Self {
        Stop::Fatal(e.into())
    }
}

/// Authenticated frame exchange over a channel.
struct Link<'a, C: Channel> {
    chan: &'a mut C,
    ledger: &'a mut PskLedger,
}

impl<C: Channel> Link<'_, C> {
    fn send(&mut self, ty: FrameType, payload: Vec<u8>) -> Result<(), Stop> {
        let frame = Frame::new(ty, payload);
        let tag = self.ledger.mac(&frame.encode())?;
        self.chan.send_frame(&frame)?;
        self.chan.send_frame(&Frame::new(FrameType::Mac, tag.to_bytes().to_vec()))?;
        Ok(())
    }

    fn recv(&mut self, expected: FrameType) -> Result<Vec<u8>, Stop> {
        let frame = self.chan.recv_frame()?;
        if frame.ty == FrameType::Abort {
            let code = frame.payload.first().copied().unwrap_or(u8::MAX);
            return Err(Stop::Status(CycleStatus::from_code(code)));
        }
        let mac = self.chan.recv_frame()?;
        if mac.ty != FrameType::Mac || mac.payload.len() != 8 {
            return Err(self.abort(CycleStatus::AbortProtocol));
        }
        let tag = MacTag::from_bytes(mac.payload.as_slice().try_into().unwrap());
        if !self.ledger.verify(&frame.encode(), &tag)? {
            return Err(self.abort(CycleStatus::AbortMac));
        }
        if frame.ty != expected {
            return Err(self.abort(CycleStatus::AbortProtocol));
        }
        Ok(frame.payload)
    }

    /// Tells the peer to stop; the send is best effort since the peer may already be gone.
    fn abort(&mut self, status: CycleStatus) -> Stop {
        let _ = self.chan.send_frame(&Frame::new(FrameType::Abort, vec![status.code()]));
        Stop::Status(status)
    }
}

fn exact_bits(bytes: &[u8], len: usize) -> Option<Bits> {
    if bytes.len() != len.div_ceil(8) {
        return None;
    }
    let mut b = bits::from_bytes(bytes);
    b.truncate(len);
    Some(b)
}

struct Party<'a, C: Channel> {
    cfg: &'a CycleConfig,
    code: &'a ParityCheckMatrix,
    link: Link<'a, C>,
    rng: ChaCha20Rng,
    cycle_id: u64,
    report: PartyReport,
    keys: Vec<Bits>,
}

impl<'a, C: Channel> Party<'a, C> {
    fn new(cfg: &'a CycleConfig, code: &'a ParityCheckMatrix, chan: &'a mut C, ledger: &'a mut PskLedger, cycle_id: u64, label: u64) -> Self {
        Party {
            cfg,
            code,
            link: Link { chan, ledger },
            rng: ChaCha20Rng::seed_from_u64(mix(cfg.seed, cycle_id, label)),
            cycle_id,
            report: PartyReport::new(),
            keys: Vec::new(),
        }
    }

    fn raw_keys(&self, session: u32) -> Result<qkd::RawKeyPair, Stop> {
        let seed = mix(self.cfg.seed, self.cycle_id, LABEL_SESSION + u64::from(session));
        Ok(qkd::simulate_raw_keys(self.cfg.raw_bits as usize, self.cfg.qber, seed)?)
    }

    fn optimize_at(&self, alpha: f64) -> Result<OptimizationResult, Stop> {
        let params = self.cfg.session_params(self.code).with_delta(alpha);
        Ok(optimize(&self.cfg.optimizer_config(params))?)
    }

    fn record(&mut self, index: u32, status: SessionStatus, alpha: f64, result: Option<OptimizationResult>, start: Instant) {
        self.report.sessions.push(SessionRecord {
            index,
            status,
            alpha,
            l: result.as_ref().and_then(|r| r.l_max),
            result,
            duration: start.elapsed(),
        });
    }

    fn finish(mut self, outcome: Result<(), Stop>) -> Result<PartyReport, ProtocolError> {
        self.report.psk_bits_consumed = self.link.ledger.consumed_in_cycle(self.cycle_id);
        match outcome {
            Ok(()) => {
                self.report.status = CycleStatus::Completed;
                self.report.keys = std::mem::take(&mut self.keys);
            }
            Err(Stop::Status(s)) => {
                self.report.status = s;
                self.report.message = None;
            }
            Err(Stop::Fatal(e)) => return Err(e),
        }
        Ok(self.report)
    }

    // ---- Alice ----

    fn alice(&mut self) -> Result<(), Stop> {
        let n_obs = self.cfg.n_obs;
        let aes_key = self.link.ledger.aes_key()?;
        let index = self.rng.gen_range(0..(1u128 << n_obs));
        let pad = self.link.ledger.allocate(Purpose::IsPad, n_obs as usize)?;
        let pi = instruction::encrypt_is(index, n_obs, &pad.bits)?;
        let mut payload = vec![n_obs as u8];
        payload.extend(bits::to_bytes(&pi));
        self.link.send(FrameType::IsCt, payload)?;
        let is = unrank(index, n_obs)?;
        self.report.sequence = Some(is.to_string());

        let qkd_start = Instant::now();
        for k in 0..self.cfg.gamma() {
            let key = self.alice_session(k)?;
            self.keys.push(key);
        }
        self.report.qkd_time = qkd_start.elapsed();

        let pqc_start = Instant::now();
        let kp = pqc::kem_keygen(self.cfg.kem, &mut self.rng);
        self.link.send(FrameType::KemPk, kp.encapsulation_key.clone())?;
        let reply = self.link.recv(FrameType::KemCt)?;
        if reply.len() < 32 {
            return Err(self.link.abort(CycleStatus::AbortProtocol));
        }
        let (ct, confirm) = reply.split_at(reply.len() - 32);
        let secret = match pqc::kem_decapsulate(&kp, ct) {
            Ok(s) => s,
            Err(_) => return Err(self.link.abort(CycleStatus::AbortKem)),
        };
        if pqc::check_confirmation(&secret, &kp.encapsulation_key, ct, confirm).is_err() {
            return Err(self.link.abort(CycleStatus::AbortKem));
        }
        let split = pqc::split_shared_secret(&secret).expect("32-byte secret");
        self.report.pqc_time = pqc_start.elapsed();

        let he_start = Instant::now();
        let sid = u128::from(self.cycle_id);
        if sid >= SID_LIMIT {
            return Err(Stop::Fatal(ProtocolError::Config("cycle id exceeds the session-id range".into())));
        }
        let v: [u8; 16] = self.rng.gen();
        let bundle = KeyBundle { qkd_keys: self.keys.clone(), aes_key, split };
        let (env, trace) = match he_encrypt_traced(&is, &self.cfg.message, &bundle, sid, v, &associated_data(self.cycle_id)) {
            Ok(x) => x,
            Err(HeError::InsufficientKey { .. }) => return Err(self.link.abort(CycleStatus::AbortInsufficientKey)),
            Err(_) => return Err(self.link.abort(CycleStatus::AbortHe)),
        };
        self.report.he_time = he_start.elapsed();
        self.report.he_steps = trace.steps.len();
        self.report.final_ct_bytes = Some(env.final_ct.len());
        let wire = env.encode();
        self.report.envelope_bytes = Some(wire.len());
        self.link.send(FrameType::HeEnv, wire)?;
        Ok(())
    }

    fn alice_session(&mut self, k: u32) -> Result<Bits, Stop> {
        let start = Instant::now();
        let pair = self.raw_keys(k)?;
        let alice = pair.alice_bits;
        let n_total = alice.len();
        let n = (self.cfg.raw_bits / 2) as usize;
        let split = qkd::draw_sample(n_total, n, &mut self.rng)?;
        let mut mask = Bits::repeat(false, n_total);
        for &i in &split.sample {
            mask.set(i, true);
        }
        let own_sample = bits::select(&alice, &split.sample);
        let mut payload = bits::to_bytes(&mask);
        payload.extend(bits::to_bytes(&own_sample));
        self.link.send(FrameType::SampleIdx, payload)?;

        let reply = self.link.recv(FrameType::SampleIdx).map_err(|e| self.note_abort(k, e, f64::NAN, start))?;
        let Some(peer_sample) = exact_bits(&reply, n) else {
            return Err(self.link.abort(CycleStatus::AbortProtocol));
        };
        let alpha = qkd::estimate_qber(&own_sample, &peer_sample);
        if alpha > QBER_THRESHOLD {
            self.record(k, SessionStatus::AbortQber, alpha, None, start);
            return Err(self.link.abort(CycleStatus::AbortQber));
        }
        let result = self.optimize_at(alpha)?;
        let Some(l) = result.l_max else {
            self.record(k, SessionStatus::AbortInfeasible, alpha, Some(result), start);
            return Err(self.link.abort(CycleStatus::AbortInfeasible));
        };

        let x = bits::select(&alice, &split.remainder);
        let syndrome = self.code.syndrome(&x)?;
        self.link.send(FrameType::Syndrome, bits::to_bytes(&syndrome))?;
        if let Err(e) = self.link.recv(FrameType::Verify) {
            return Err(self.note_session_stop(k, e, alpha, Some(result), start));
        }

        let t = self.cfg.session_params(self.code).verify_bits as usize;
        let verify_seed = random_bits(&mut self.rng, toeplitz::seed_len(x.len(), t));
        let hash = qkd::toeplitz_hash(&x, t, &verify_seed)?;
        let mut payload = bits::to_bytes(&verify_seed);
        payload.extend(bits::to_bytes(&hash));
        self.link.send(FrameType::Verify, payload)?;
        if let Err(e) = self.link.recv(FrameType::Verify) {
            return Err(self.note_session_stop(k, e, alpha, Some(result), start));
        }

        let pa_seed = random_bits(&mut self.rng, toeplitz::seed_len(x.len(), l as usize));
        self.link.send(FrameType::PaSeed, bits::to_bytes(&pa_seed))?;
        let key = qkd::privacy_amplify(&x, l as usize, &pa_seed)?;
        self.record(k, SessionStatus::Completed, alpha, Some(result), start);
        Ok(key)
    }

    fn note_abort(&mut self, k: u32, stop: Stop, alpha: f64, start: Instant) -> Stop {
        self.note_session_stop(k, stop, alpha, None, start)
    }

    fn note_session_stop(&mut self, k: u32, stop: Stop, alpha: f64, result: Option<OptimizationResult>, start: Instant) -> Stop {
        if let Stop::Status(s) = &stop {
            let session = match s {
                CycleStatus::AbortQber => Some(SessionStatus::AbortQber),
                CycleStatus::AbortEcDetectable => Some(SessionStatus::AbortEcDetectable),
                CycleStatus::AbortVerify => Some(SessionStatus::AbortVerify),
                CycleStatus::AbortInfeasible => Some(SessionStatus::AbortInfeasible),
                _ => None,
            };
            if let Some(status) = session {
                self.record(k, status, alpha, result, start);
            }
        }
        stop
    }

    // ---- Bob ----

    fn bob(&mut self) -> Result<(), Stop> {
        let n_obs = self.cfg.n_obs;
        let aes_key = self.link.ledger.aes_key()?;
        let pad = self.link.ledger.allocate(Purpose::IsPad, n_obs as usize)?;
        let payload = self.link.recv(FrameType::IsCt)?;
        if payload.first() != Some(&(n_obs as u8)) {
            return Err(self.link.abort(CycleStatus::AbortProtocol));
        }
        let Some(pi) = exact_bits(&payload[1..], n_obs as usize) else {
            return Err(self.link.abort(CycleStatus::AbortProtocol));
        };
        let index = instruction::decrypt_is(&pi, &pad.bits)?;
        let is = unrank(index, n_obs)?;
        self.report.sequence = Some(is.to_string());

        let qkd_start = Instant::now();
        for k in 0..self.cfg.gamma() {
            let key = self.bob_session(k)?;
            self.keys.push(key);
        }
        self.report.qkd_time = qkd_start.elapsed();

        let pqc_start = Instant::now();
        let ek = self.link.recv(FrameType::KemPk)?;
        let (ct, secret) = match pqc::kem_encapsulate(self.cfg.kem, &ek, &mut self.rng) {
            Ok(x) => x,
            Err(_) => return Err(self.link.abort(CycleStatus::AbortKem)),
        };
        let confirm = pqc::confirmation(&secret, &ek, &ct);
        let mut reply = ct;
        reply.extend_from_slice(&confirm);
        self.link.send(FrameType::KemCt, reply)?;
        let split = pqc::split_shared_secret(&secret).expect("32-byte secret");
        self.report.pqc_time = pqc_start.elapsed();

        let wire = self.link.recv(FrameType::HeEnv)?;
        let he_start = Instant::now();
        let env = match CipherEnvelope::decode(&wire) {
            Ok(e) => e,
            Err(_) => return Err(self.link.abort(CycleStatus::AbortHe)),
        };
        let bundle = KeyBundle { qkd_keys: self.keys.clone(), aes_key, split };
        let message = match he_decrypt(&env, &is, &bundle) {
            Ok(m) => m,
            Err(_) => return Err(self.link.abort(CycleStatus::AbortHe)),
        };
        self.report.he_time = he_start.elapsed();
        self.report.he_steps = is.steps.len();
        self.report.final_ct_bytes = Some(env.final_ct.len());
        self.report.envelope_bytes = Some(wire.len());
        self.report.message = Some(message);
        Ok(())
    }

    fn bob_session(&mut self, k: u32) -> Result<Bits, Stop> {
        let start = Instant::now();
        let pair = self.raw_keys(k)?;
        let bob = pair.bob_bits;
        let n_total = bob.len();
        let n = (self.cfg.raw_bits / 2) as usize;

        let payload = self.link.recv(FrameType::SampleIdx)?;
        let mask_bytes = n_total.div_ceil(8);
        if payload.len() < mask_bytes {
            return Err(self.link.abort(CycleStatus::AbortProtocol));
        }
        let mask = exact_bits(&payload[..mask_bytes], n_total).expect("length checked");
        let sample: Vec<usize> = mask.iter_ones().collect();
        let remainder: Vec<usize> = mask.iter_zeros().collect();
        let Some(peer_sample) = exact_bits(&payload[mask_bytes..], n) else {
            return Err(self.link.abort(CycleStatus::AbortProtocol));
        };
        if sample.len() != n {
            return Err(self.link.abort(CycleStatus::AbortProtocol));
        }
        let own_sample = bits::select(&bob, &sample);
        let alpha = qkd::estimate_qber(&peer_sample, &own_sample);
        if alpha > QBER_THRESHOLD {
            self.record(k, SessionStatus::AbortQber, alpha, None, start);
            return Err(self.link.abort(CycleStatus::AbortQber));
        }
        self.link.send(FrameType::SampleIdx, bits::to_bytes(&own_sample))?;

        let result = self.optimize_at(alpha)?;
        let syndrome_payload = match self.link.recv(FrameType::Syndrome) {
            Ok(p) => p,
            Err(e) => return Err(self.note_session_stop(k, e, alpha, Some(result), start)),
        };
        let Some(l) = result.l_max else {
            return Err(self.link.abort(CycleStatus::AbortProtocol));
        };
        let Some(syndrome) = exact_bits(&syndrome_payload, self.code.num_rows()) else {
            return Err(self.link.abort(CycleStatus::AbortProtocol));
        };
        let y = bits::select(&bob, &remainder);
        let corrected = match self.code.decode(&y, &syndrome, self.cfg.max_bp_iters, alpha) {
            Ok(c) => c,
            Err(QkdError::DetectableFailure) => {
                self.record(k, SessionStatus::AbortEcDetectable, alpha, Some(result), start);
                return Err(self.link.abort(CycleStatus::AbortEcDetectable));
            }
            Err(e) => return Err(e.into()),
        };
        self.link.send(FrameType::Verify, vec![1])?;

        let t = self.cfg.session_params(self.code).verify_bits as usize;
        let seed_bits = toeplitz::seed_len(corrected.len(), t);
        let payload = self.link.recv(FrameType::Verify)?;
        let seed_bytes = seed_bits.div_ceil(8);
        if payload.len() < seed_bytes {
            return Err(self.link.abort(CycleStatus::AbortProtocol));
        }
        let (Some(seed), Some(hash)) = (exact_bits(&payload[..seed_bytes], seed_bits), exact_bits(&payload[seed_bytes..], t)) else {
            return Err(self.link.abort(CycleStatus::AbortProtocol));
        };
        if qkd::toeplitz_hash(&corrected, t, &seed)? != hash {
            self.record(k, SessionStatus::AbortVerify, alpha, Some(result), start);
            return Err(self.link.abort(CycleStatus::AbortVerify));
        }
        self.link.send(FrameType::Verify, vec![1])?;

        let pa_bits = toeplitz::seed_len(corrected.len(), l as usize);
        let payload = self.link.recv(FrameType::PaSeed)?;
        let Some(pa_seed) = exact_bits(&payload, pa_bits) else {
            return Err(self.link.abort(CycleStatus::AbortProtocol));
        };
        let key = qkd::privacy_amplify(&corrected, l as usize, &pa_seed)?;
        self.record(k, SessionStatus::Completed, alpha, Some(result), start);
        Ok(key)
    }
}

pub fn run_alice<C: Channel>(cfg: &CycleConfig, code: &ParityCheckMatrix, chan: &mut C, ledger: &mut PskLedger, cycle_id: u64) -> Result<PartyReport, ProtocolError> {
    ledger.set_cycle(cycle_id);
    let mut party = Party::new(cfg, code, chan, ledger, cycle_id, LABEL_ALICE);
    let outcome = party.alice();
    party.finish(outcome)
}

pub fn run_bob<C: Channel>(cfg: &CycleConfig, code: &ParityCheckMatrix, chan: &mut C, ledger: &mut PskLedger, cycle_id: u64) -> Result<PartyReport, ProtocolError> {
    ledger.set_cycle(cycle_id);
    let mut party = Party::new(cfg, code, chan, ledger, cycle_id, LABEL_BOB);
    let outcome = party.bob();
    party.finish(outcome)
}

/// Runs both parties on separate threads over the given channel ends.
pub fn run_cycle<A: Channel, B: Channel>(
    cfg: &CycleConfig,
    code: &ParityCheckMatrix,
    cycle_id: u64,
    alice_chan: &mut A,
    bob_chan: &mut B,
    alice_ledger: &mut PskLedger,
    bob_ledger: &mut PskLedger,
) -> Result<CycleReport, ProtocolError> {
    cfg.validate()?;
    let start = Instant::now();
    let (alice, bob) = std::thread::scope(|s| {
        let bob = s.spawn(|| run_bob(cfg, code, bob_chan, bob_ledger, cycle_id));
        let alice = run_alice(cfg, code, alice_chan, alice_ledger, cycle_id);
        (alice, bob.join())
    });
    let total_time = start.elapsed();
    let alice = alice?;
    let bob = bob.map_err(|_| ProtocolError::Panic)??;

    let status = if alice.status.is_completed() { bob.status } else { alice.status };
    let completed = status.is_completed();
    let keys_match = completed && alice.keys == bob.keys;
    let message_recovered = completed && bob.message.as_deref() == Some(cfg.message.as_slice());
    Ok(CycleReport {
        cycle_id,
        n_obs: cfg.n_obs,
        status,
        alice_status: alice.status,
        bob_status: bob.status,
        sessions: merge_sessions(&alice.sessions, &bob.sessions),
        qkd_bits_extracted: if completed { alice.keys.iter().map(|k| k.len() as u64).sum() } else { 0 },
        keys_match,
        message_recovered,
        sequence: alice.sequence.clone(),
        he_steps: alice.he_steps,
        final_ct_bytes: alice.final_ct_bytes,
        envelope_bytes: alice.envelope_bytes,
        qkd_time: alice.qkd_time,
        pqc_time: alice.pqc_time,
        he_time: alice.he_time + bob.he_time,
        total_time,
        psk_bits_consumed: alice.psk_bits_consumed,
        alice,
        bob,
    })
}

/// Alice's records, with the estimate filled in from Bob where only he saw the sample.
fn merge_sessions(alice: &[SessionRecord], bob: &[SessionRecord]) -> Vec<SessionRecord> {
    alice
        .iter()
        .map(|a| {
            let mut rec = a.clone();
            if rec.alpha.is_nan() {
                if let Some(b) = bob.iter().find(|b| b.index == a.index) {
                    rec.alpha = b.alpha;
                }
            }
            rec
        })
        .collect()
}

/// Flat CSV form of a cycle report. Per-session values are joined with `;`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleCsvRow {
    pub cycle_id: u64,
    pub n_obs: u32,
    pub status: CycleStatus,
    pub sessions: usize,
    pub alphas: String,
    pub lengths: String,
    pub qkd_bits: u64,
    pub keys_match: bool,
    pub message_recovered: bool,
    pub sequence: String,
    pub he_steps: usize,
    pub final_ct_bytes: Option<usize>,
    pub envelope_bytes: Option<usize>,
    pub qkd_s: f64,
    pub pqc_s: f64,
    pub he_s: f64,
    pub total_s: f64,
    pub psk_bits: u64,
}

impl From<&CycleReport> for CycleCsvRow {
    fn from(r: &CycleReport) -> Self {
        let join = |f: &dyn Fn(&SessionRecord) -> String| r.sessions.iter().map(f).collect::<Vec<_>>().join(";");
        CycleCsvRow {
            cycle_id: r.cycle_id,
            n_obs: r.n_obs,
            status: r.status,
            sessions: r.sessions.len(),
            alphas: join(&|s| format!("{:.6}", s.alpha)),
            lengths: join(&|s| s.l.map_or_else(String::new, |l| l.to_string())),
            qkd_bits: r.qkd_bits_extracted,
            keys_match: r.keys_match,
            message_recovered: r.message_recovered,
            sequence: r.sequence.clone().unwrap_or_default(),
            he_steps: r.he_steps,
            final_ct_bytes: r.final_ct_bytes,
            envelope_bytes: r.envelope_bytes,
            qkd_s: r.qkd_time.as_secs_f64(),
            pqc_s: r.pqc_time.as_secs_f64(),
            he_s: r.he_time.as_secs_f64(),
            total_s: r.total_time.as_secs_f64(),
            psk_bits: r.psk_bits_consumed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transport {
    #[default]
    Memory,
    Tcp,
}

impl std::str::FromStr for Transport {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "memory" | "mem" => Ok(Transport::Memory),
            "tcp" => Ok(Transport::Tcp),
            other => Err(format!("unknown transport `{other}` (memory, tcp)")),
        }
    }
}

/// Mirrored ledgers for both parties.
pub fn ledgers(cfg: &CycleConfig) -> (PskLedger, PskLedger) {
    (PskLedger::from_seed(cfg.psk_bits, cfg.psk_seed), PskLedger::from_seed(cfg.psk_bits, cfg.psk_seed))
}

/// One cycle over a fresh channel pair of the chosen transport.
pub fn run_cycle_with(
    cfg: &CycleConfig,
    code: &ParityCheckMatrix,
    cycle_id: u64,
    transport: Transport,
    alice_ledger: &mut PskLedger,
    bob_ledger: &mut PskLedger,
) -> Result<CycleReport, ProtocolError> {
    match transport {
        Transport::Memory => {
            let (mut a, mut b) = MemoryChannel::pair();
            run_cycle(cfg, code, cycle_id, &mut a, &mut b, alice_ledger, bob_ledger)
        }
        Transport::Tcp => {
            let (mut a, mut b) = TcpChannel::loopback_pair()?;
            run_cycle(cfg, code, cycle_id, &mut a, &mut b, alice_ledger, bob_ledger)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchReport {
    pub cycles: Vec<CycleReport>,
    pub total_bits: u64,
    pub total_time: Duration,
    /// Extracted QKD bits over total processing time, bits per second.
    pub key_rate: f64,
    pub completed: usize,
}

impl BatchReport {
    pub fn from_cycles(cycles: Vec<CycleReport>) -> Self {
        let total_bits = cycles.iter().map(|c| c.qkd_bits_extracted).sum();
        let total_time: Duration = cycles.iter().map(|c| c.total_time).sum();
        let key_rate = if total_time.is_zero() { 0.0 } else { total_bits as f64 / total_time.as_secs_f64() };
        let completed = cycles.iter().filter(|c| c.status.is_completed()).count();
        BatchReport { cycles, total_bits, total_time, key_rate, completed }
    }
}

/// Runs `cycles` consecutive cycles with cycle ids `1..=cycles` on persistent ledgers.
pub fn run_batch(cfg: &CycleConfig, cycles: u32, transport: Transport) -> Result<BatchReport, ProtocolError> {
    if cycles == 0 {
        return Err(ProtocolError::Config("cycles must be at least 1".into()));
    }
    cfg.validate()?;
    let code = cfg.parity_check()?;
    let (mut la, mut lb) = ledgers(cfg);
    let mut reports = Vec::with_capacity(cycles as usize);
    for c in 1..=u64::from(cycles) {
        reports.push(run_cycle_with(cfg, &code, c, transport, &mut la, &mut lb)?);
    }
    Ok(BatchReport::from_cycles(reports))
}

/// Cascade steps executed per cycle.
pub fn he_step_count(n_obs: u32) -> usize {
    3 * instruction::gamma(n_obs) as usize
}

/// Size of the cascade body plus tags for a message of `msg_len` bytes.
pub fn expected_final_ct_bytes(msg_len: usize, n_obs: u32) -> usize {
    hybrid::padded_len(msg_len) + hybrid::TAG_BYTES * instruction::gamma(n_obs) as usize
}
