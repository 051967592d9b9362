//! Descriptor-id derivation and placement on the HSDir fingerprint ring.
//!
//! Every hidden service publishes two descriptors (replicas) per time period.
//! Each descriptor-id is a point on the 160-bit ring of relay fingerprints and
//! is stored on the three relays at or after that point.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha1::{Digest, Sha1};
use thiserror::Error;

pub const SECONDS_PER_DAY: u64 = 86_400;
/// Relays that store one descriptor.
pub const SPREAD: usize = 3;
pub const REPLICAS: [u8; 2] = [0, 1];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RingError {
    #[error("consensus has {0} relays, placement needs at least 3")]
    ConsensusTooSmall(usize),
    #[error("invalid fingerprint {0:?}: expected 40 hex characters")]
    BadFingerprint(String),
    #[error("duplicate fingerprint {0} in consensus")]
    DuplicateFingerprint(Fingerprint),
    #[error("invalid onion address {0:?}")]
    BadOnionAddress(String),
    #[error("time {time} is outside the honion lifetime [{from}, {until})")]
    OutsideLifetime { time: u64, from: u64, until: u64 },
}

/// A 160-bit ring position; relay identities and descriptor-ids share this space.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Fingerprint(pub [u8; 20]);

impl Fingerprint {
    pub const MIN: Fingerprint = Fingerprint([0; 20]);
    pub const MAX: Fingerprint = Fingerprint([0xff; 20]);

    pub fn from_bytes(bytes: [u8; 20]) -> Self {
        Fingerprint(bytes)
    }

    /// Fingerprint whose top 8 bytes are `hi` and the rest zero.
    pub fn from_high_u64(hi: u64) -> Self {
        let mut out = [0u8; 20];
        out[..8].copy_from_slice(&hi.to_be_bytes());
        Fingerprint(out)
    }

    pub fn as_bytes(&self) -> &[u8; 20] {
        &self.0
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fingerprint({self})")
    }
}

impl FromStr for Fingerprint {
    type Err = RingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 20];
        if s.len() != 40 {
            return Err(RingError::BadFingerprint(s.to_string()));
        }
        hex::decode_to_slice(s, &mut out).map_err(|_| RingError::BadFingerprint(s.to_string()))?;
        Ok(Fingerprint(out))
    }
}

impl Serialize for Fingerprint {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Fingerprint {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// 80-bit hidden-service identifier (truncated SHA-1 of the service key).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct ServiceId(pub [u8; 10]);

impl ServiceId {
    /// Identifier as it would be derived from a service public key.
    pub fn from_public_key(key: &[u8]) -> Self {
        let digest = Sha1::digest(key);
        let mut out = [0u8; 10];
        out.copy_from_slice(&digest[..10]);
        ServiceId(out)
    }

    /// The 16-character base-32 `.onion` label (without the suffix).
    pub fn onion_address(&self) -> String {
        data_encoding::BASE32_NOPAD.encode(&self.0).to_ascii_lowercase()
    }

    pub fn from_onion_address(addr: &str) -> Result<Self, RingError> {
        let label = addr.strip_suffix(".onion").unwrap_or(addr);
        let bad = || RingError::BadOnionAddress(addr.to_string());
        if label.len() != 16 {
            return Err(bad());
        }
        let bytes = data_encoding::BASE32_NOPAD
            .decode(label.to_ascii_uppercase().as_bytes())
            .map_err(|_| bad())?;
        let mut out = [0u8; 10];
        out.copy_from_slice(&bytes);
        Ok(ServiceId(out))
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Daily,
    Weekly,
    Monthly,
}

impl Schedule {
    pub const ALL: [Schedule; 3] = [Schedule::Daily, Schedule::Weekly, Schedule::Monthly];

    /// Days between batches, which is also the lifetime of one batch.
    pub fn period_days(self) -> u32 {
        match self {
            Schedule::Daily => 1,
            Schedule::Weekly => 7,
            Schedule::Monthly => 30,
        }
    }

    pub fn lifetime_secs(self) -> u64 {
        u64::from(self.period_days()) * SECONDS_PER_DAY
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Schedule::Daily => "daily",
            Schedule::Weekly => "weekly",
            Schedule::Monthly => "monthly",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HsDirRelay {
    pub fingerprint: Fingerprint,
    pub label: String,
    #[serde(default)]
    pub tags: Vec<String>,
}

impl HsDirRelay {
    pub fn new(fingerprint: Fingerprint, label: impl Into<String>) -> Self {
        HsDirRelay {
            fingerprint,
            label: label.into(),
            tags: Vec::new(),
        }
    }

    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.iter().any(|t| t.eq_ignore_ascii_case(tag))
    }
}

/// HSDir relays known on one simulated day, sorted by fingerprint.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawConsensus")]
pub struct ConsensusSnapshot {
    pub epoch: u32,
    relays: Vec<HsDirRelay>,
}

#[derive(Deserialize)]
struct RawConsensus {
    epoch: u32,
    relays: Vec<HsDirRelay>,
}

impl TryFrom<RawConsensus> for ConsensusSnapshot {
    type Error = RingError;

    fn try_from(raw: RawConsensus) -> Result<Self, Self::Error> {
        ConsensusSnapshot::new(raw.epoch, raw.relays)
    }
}

impl ConsensusSnapshot {
    /// Sorts `relays` by fingerprint and rejects duplicates.
    pub fn new(epoch: u32, mut relays: Vec<HsDirRelay>) -> Result<Self, RingError> {
        relays.sort_by_key(|a| a.fingerprint);
        if let Some(w) = relays.windows(2).find(|w| w[0].fingerprint == w[1].fingerprint) {
            return Err(RingError::DuplicateFingerprint(w[0].fingerprint));
        }
        Ok(ConsensusSnapshot { epoch, relays })
    }

    pub fn relays(&self) -> &[HsDirRelay] {
        &self.relays
    }

    pub fn len(&self) -> usize {
        self.relays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relays.is_empty()
    }

    pub fn by_label(&self, label: &str) -> Option<&HsDirRelay> {
        self.relays.iter().find(|r| r.label == label)
    }

    /// Index of the first relay at or after `position`, wrapping to 0.
    pub fn successor_index(&self, position: &Fingerprint) -> usize {
        let k = self.relays.partition_point(|r| r.fingerprint < *position);
        if k == self.relays.len() {
            0
        } else {
            k
        }
    }

    pub(crate) fn into_relays(self) -> Vec<HsDirRelay> {
        self.relays
    }
}

/// A decoy hidden service.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawHonion", into = "RawHonion")]
pub struct HonionSpec {
    pub identifier: ServiceId,
    pub permanent_id_byte: u8,
    pub descriptor_cookie: Option<[u8; 16]>,
    pub schedule: Schedule,
    pub created_at: u64,
    pub lifetime: u64,
}

impl HonionSpec {
    /// Honion with the lifetime of its schedule, no cookie, and the
    /// permanent-id byte taken from the identifier.
    pub fn new(identifier: ServiceId, schedule: Schedule, created_at: u64) -> Self {
        HonionSpec {
            identifier,
            permanent_id_byte: identifier.0[0],
            descriptor_cookie: None,
            schedule,
            created_at,
            lifetime: schedule.lifetime_secs(),
        }
    }

    pub fn onion_address(&self) -> String {
        self.identifier.onion_address()
    }

    pub fn expires_at(&self) -> u64 {
        self.created_at + self.lifetime
    }

    pub fn is_alive(&self, t: u64) -> bool {
        t >= self.created_at && t < self.expires_at()
    }
}

#[derive(Serialize, Deserialize)]
struct RawHonion {
    onion_address: String,
    identifier: String,
    permanent_id_byte: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    descriptor_cookie: Option<String>,
    schedule: Schedule,
    created_at: u64,
    lifetime: u64,
}

impl From<HonionSpec> for RawHonion {
    fn from(h: HonionSpec) -> Self {
        RawHonion {
            onion_address: h.onion_address(),
            identifier: hex::encode(h.identifier.0),
            permanent_id_byte: h.permanent_id_byte,
            descriptor_cookie: h.descriptor_cookie.map(hex::encode),
            schedule: h.schedule,
            created_at: h.created_at,
            lifetime: h.lifetime,
        }
    }
}

impl TryFrom<RawHonion> for HonionSpec {
    type Error = String;

    fn try_from(raw: RawHonion) -> Result<Self, Self::Error> {
        let mut id = [0u8; 10];
        hex::decode_to_slice(&raw.identifier, &mut id).map_err(|e| format!("identifier: {e}"))?;
        let identifier = ServiceId(id);
        if identifier.onion_address() != raw.onion_address {
            return Err(format!(
                "onion_address {} does not encode identifier {}",
                raw.onion_address, raw.identifier
            ));
        }
        let descriptor_cookie = match raw.descriptor_cookie {
            Some(c) => {
                let mut out = [0u8; 16];
                hex::decode_to_slice(&c, &mut out).map_err(|e| format!("descriptor_cookie: {e}"))?;
                Some(out)
            }
            None => None,
        };
        Ok(HonionSpec {
            identifier,
            permanent_id_byte: raw.permanent_id_byte,
            descriptor_cookie,
            schedule: raw.schedule,
            created_at: raw.created_at,
            lifetime: raw.lifetime,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DescriptorId {
    pub value: Fingerprint,
    pub replica: u8,
    pub time_period: u32,
}

/// Which relays stored a honion's descriptors during one epoch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacementRecord {
    pub onion_address: String,
    pub epoch: u32,
    /// Union of both replica windows, sorted by fingerprint.
    pub hsdirs: Vec<HsDirRelay>,
    pub valid_from: u64,
    pub valid_until: u64,
}

impl PlacementRecord {
    pub fn covers_time(&self, t: u64) -> bool {
        t >= self.valid_from && t < self.valid_until
    }
}

fn period_offset(permanent_id_byte: u8) -> u64 {
    u64::from(permanent_id_byte) * SECONDS_PER_DAY / 256
}

pub fn compute_time_period(current_time: u64, permanent_id_byte: u8) -> u32 {
    ((current_time + period_offset(permanent_id_byte)) / SECONDS_PER_DAY) as u32
}

/// `[start, end)` of a time period in seconds since the origin.
pub fn time_period_bounds(time_period: u32, permanent_id_byte: u8) -> (u64, u64) {
    let start = (u64::from(time_period) * SECONDS_PER_DAY).saturating_sub(period_offset(permanent_id_byte));
    let end = (u64::from(time_period) + 1) * SECONDS_PER_DAY - period_offset(permanent_id_byte);
    (start, end)
}

/// SHA-1(identifier || SHA-1(time_period_be32 || cookie || replica)).
pub fn compute_descriptor_id(
    identifier: &ServiceId,
    time_period: u32,
    descriptor_cookie: Option<&[u8; 16]>,
    replica: u8,
) -> DescriptorId {
    debug_assert!(replica <= 1, "replica must be 0 or 1");
    let mut secret = Sha1::new();
    secret.update(time_period.to_be_bytes());
    if let Some(cookie) = descriptor_cookie {
        secret.update(cookie);
    }
    secret.update([replica]);
    let secret_id_part = secret.finalize();

    let mut outer = Sha1::new();
    outer.update(identifier.0);
    outer.update(secret_id_part);
    DescriptorId {
        value: Fingerprint(outer.finalize().into()),
        replica,
        time_period,
    }
}

/// The three consecutive relays starting at the first fingerprint >= the
/// descriptor-id, wrapping around the ring.
pub fn place_descriptor<'c>(
    d: &DescriptorId,
    c: &'c ConsensusSnapshot,
) -> Result<[&'c HsDirRelay; SPREAD], RingError> {
    let n = c.len();
    if n < SPREAD {
        return Err(RingError::ConsensusTooSmall(n));
    }
    let k = c.successor_index(&d.value);
    let relays = c.relays();
    Ok([&relays[k], &relays[(k + 1) % n], &relays[(k + 2) % n]])
}

/// Deduplicated union of both replica windows for one time period.
pub fn hsdirs_for_period(
    h: &HonionSpec,
    c: &ConsensusSnapshot,
    time_period: u32,
) -> Result<Vec<HsDirRelay>, RingError> {
    let mut out: Vec<HsDirRelay> = Vec::with_capacity(SPREAD * REPLICAS.len());
    for replica in REPLICAS {
        let d = compute_descriptor_id(&h.identifier, time_period, h.descriptor_cookie.as_ref(), replica);
        for relay in place_descriptor(&d, c)? {
            if !out.iter().any(|r| r.fingerprint == relay.fingerprint) {
                out.push(relay.clone());
            }
        }
    }
    out.sort_by_key(|a| a.fingerprint);
    Ok(out)
}

pub fn responsible_hsdirs(h: &HonionSpec, c: &ConsensusSnapshot, t: u64) -> Result<PlacementRecord, RingError> {
    if !h.is_alive(t) {
        return Err(RingError::OutsideLifetime {
            time: t,
            from: h.created_at,
            until: h.expires_at(),
        });
    }
    let tp = compute_time_period(t, h.permanent_id_byte);
    let hsdirs = hsdirs_for_period(h, c, tp)?;
    let (start, end) = time_period_bounds(tp, h.permanent_id_byte);
    Ok(PlacementRecord {
        onion_address: h.onion_address(),
        epoch: tp,
        hsdirs,
        valid_from: start.max(h.created_at),
        valid_until: end.min(h.expires_at()),
    })
}
