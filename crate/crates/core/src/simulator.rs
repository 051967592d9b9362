//! Day-by-day simulation of a honion deployment.
//!
//! Each simulated day the consensus is (optionally) churned, honion batches
//! are created and retired according to their schedules, every live honion is
//! placed on the ring, hosting relays learn the addresses they store, and each
//! snooping relay decides which learned addresses to visit.
//!
//! Randomness comes from ChaCha8 streams. The world stream (consensus, honion
//! identifiers, churn) and one stream per snooper are each seeded from
//! SHA-1(seed || tag), so a snooper's draws do not depend on the others.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha1::{Digest, Sha1};
use thiserror::Error;

use crate::planner::measure_coverage;
use crate::records::{write_json, write_jsonl, JsonlError, VisitRecord};
use crate::ring::{
    compute_time_period, hsdirs_for_period, ConsensusSnapshot, Fingerprint, HonionSpec, HsDirRelay,
    PlacementRecord, RingError, Schedule, ServiceId, SECONDS_PER_DAY,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Ring(#[from] RingError),
    #[error(transparent)]
    Io(#[from] JsonlError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FingerprintLayout {
    /// Independent uniformly random fingerprints.
    #[default]
    Random,
    /// Evenly spaced around the ring with a random rotation.
    Even,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SnooperKind {
    PersistentImmediate,
    PersistentDelayed {
        delay_days: u32,
    },
    RandomizedDeterministicDelay {
        delay_days: u32,
        visit_probability: f64,
    },
    Probabilistic {
        /// `(delay_days, probability)`; the residual mass means "never visit".
        delay_distribution: Vec<(u32, f64)>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnooperModel {
    #[serde(flatten)]
    pub kind: SnooperKind,
    /// Keep probing a honion every day after the first visit.
    #[serde(default)]
    pub repeat_daily: bool,
    /// Requests issued on each visit, in order.
    #[serde(default = "default_paths")]
    pub request_paths: Vec<String>,
    /// Reserved for time-varying behaviour; not interpreted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation_day: Option<u32>,
}

fn default_paths() -> Vec<String> {
    vec!["/".to_string()]
}

impl SnooperModel {
    pub fn new(kind: SnooperKind) -> Self {
        SnooperModel {
            kind,
            repeat_daily: false,
            request_paths: default_paths(),
            activation_day: None,
        }
    }

    pub fn immediate() -> Self {
        Self::new(SnooperKind::PersistentImmediate)
    }

    pub fn delayed(delay_days: u32) -> Self {
        Self::new(SnooperKind::PersistentDelayed { delay_days })
    }

    fn validate(&self) -> Result<(), String> {
        if self.request_paths.is_empty() {
            return Err("request_paths must not be empty".into());
        }
        let prob_ok = |p: f64| (0.0..=1.0).contains(&p);
        match &self.kind {
            SnooperKind::RandomizedDeterministicDelay { visit_probability, .. } if !prob_ok(*visit_probability) => {
                Err(format!("visit_probability {visit_probability} outside [0, 1]"))
            }
            SnooperKind::Probabilistic { delay_distribution } => {
                if delay_distribution.iter().any(|&(_, p)| !prob_ok(p)) {
                    return Err("delay_distribution probabilities must lie in [0, 1]".into());
                }
                let total: f64 = delay_distribution.iter().map(|&(_, p)| p).sum();
                if total > 1.0 + 1e-9 {
                    return Err(format!("delay_distribution sums to {total} > 1"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// A honion address a snooper has learned.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LearnedHonion {
    /// Index into the simulation's honion list.
    pub honion: usize,
    pub learned_day: u32,
    pub visited: bool,
}

/// Which learned honions the snooper probes today. Expiry is the caller's
/// concern; this only applies the behavioural rule.
pub fn snooper_decide(model: &SnooperModel, learned: &[LearnedHonion], today: u32, rng: &mut impl Rng) -> Vec<usize> {
    let mut out = Vec::new();
    for entry in learned {
        if entry.learned_day > today {
            continue;
        }
        if entry.visited {
            if model.repeat_daily {
                out.push(entry.honion);
            }
            continue;
        }
        let age = today - entry.learned_day;
        let visit = match &model.kind {
            SnooperKind::PersistentImmediate => age == 0,
            SnooperKind::PersistentDelayed { delay_days } => age == *delay_days,
            SnooperKind::RandomizedDeterministicDelay {
                delay_days,
                visit_probability,
            } => age == *delay_days && rng.gen_bool(*visit_probability),
            SnooperKind::Probabilistic { delay_distribution } => {
                // P(visit at age | not visited earlier) gives marginal p(age)
                let here: f64 = delay_distribution.iter().filter(|&&(d, _)| d == age).map(|&(_, p)| p).sum();
                if here <= 0.0 {
                    false
                } else {
                    let before: f64 = delay_distribution.iter().filter(|&&(d, _)| d < age).map(|&(_, p)| p).sum();
                    let remaining = 1.0 - before;
                    remaining > 0.0 && rng.gen_bool((here / remaining).clamp(0.0, 1.0))
                }
            }
        };
        if visit {
            out.push(entry.honion);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleCounts {
    #[serde(default)]
    pub daily: u32,
    #[serde(default)]
    pub weekly: u32,
    #[serde(default)]
    pub monthly: u32,
}

impl ScheduleCounts {
    pub fn get(&self, s: Schedule) -> u32 {
        match s {
            Schedule::Daily => self.daily,
            Schedule::Weekly => self.weekly,
            Schedule::Monthly => self.monthly,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub seed: u64,
    pub n_hsdirs: usize,
    pub n_days: u32,
    pub schedules: ScheduleCounts,
    #[serde(default)]
    pub snoopers: BTreeMap<String, SnooperModel>,
    #[serde(default)]
    pub relay_churn: Option<f64>,
    #[serde(default)]
    pub fingerprint_layout: FingerprintLayout,
    /// Metadata tags (e.g. `exit`, `cloud`, country codes) per initial relay label.
    #[serde(default)]
    pub relay_tags: BTreeMap<String, Vec<String>>,
}

impl SimulationConfig {
    pub fn new(seed: u64, n_hsdirs: usize, n_days: u32, schedules: ScheduleCounts) -> Self {
        SimulationConfig {
            seed,
            n_hsdirs,
            n_days,
            schedules,
            snoopers: BTreeMap::new(),
            relay_churn: None,
            fingerprint_layout: FingerprintLayout::Random,
            relay_tags: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let err = |m: String| Err(SimError::Config(m));
        if self.n_hsdirs < 3 {
            return err(format!("n_hsdirs must be at least 3, got {}", self.n_hsdirs));
        }
        if self.n_days == 0 {
            return err("n_days must be positive".into());
        }
        if let Some(f) = self.relay_churn {
            if !(0.0..1.0).contains(&f) {
                return err(format!("relay_churn {f} outside [0, 1)"));
            }
        }
        for label in self.snoopers.keys().chain(self.relay_tags.keys()) {
            if initial_label_index(label).is_none_or(|i| i >= self.n_hsdirs) {
                return err(format!("unknown relay label {label:?}"));
            }
        }
        for (label, model) in &self.snoopers {
            model.validate().map_err(|m| SimError::Config(format!("snooper {label}: {m}")))?;
        }
        Ok(())
    }
}

pub fn relay_label(index: usize) -> String {
    format!("hsdir-{index:05}")
}

fn initial_label_index(label: &str) -> Option<usize> {
    label.strip_prefix("hsdir-")?.parse().ok()
}

/// Derives an independent generator seed from the run seed and a stream tag.
pub fn substream_seed(seed: u64, tag: &str) -> u64 {
    let mut h = Sha1::new();
    h.update(seed.to_be_bytes());
    h.update(tag.as_bytes());
    let digest = h.finalize();
    u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn random_fingerprint(rng: &mut impl Rng) -> Fingerprint {
    Fingerprint(rng.gen())
}

/// `n` relays labelled `hsdir-{first_label + i}`.
pub fn generate_consensus(
    rng: &mut impl Rng,
    epoch: u32,
    n: usize,
    layout: FingerprintLayout,
    first_label: usize,
) -> ConsensusSnapshot {
    let phase: u64 = rng.gen();
    let relays = (0..n)
        .map(|i| {
            let fingerprint = match layout {
                FingerprintLayout::Random => random_fingerprint(rng),
                FingerprintLayout::Even => {
                    let step = ((i as u128) << 64) / n as u128;
                    let mut f = Fingerprint::from_high_u64(phase.wrapping_add(step as u64));
                    rng.fill(&mut f.0[8..]);
                    f
                }
            };
            HsDirRelay::new(fingerprint, relay_label(first_label + i))
        })
        .collect();
    ConsensusSnapshot::new(epoch, relays).expect("random 160-bit fingerprints do not collide")
}

/// Replaces `floor(fraction * N)` uniformly chosen relays with fresh ones.
/// Returns the new snapshot and the labels that left.
pub fn apply_churn(
    c: &ConsensusSnapshot,
    fraction: f64,
    rng: &mut impl Rng,
    next_label: &mut usize,
) -> (ConsensusSnapshot, Vec<String>) {
    let n = c.len();
    let count = ((fraction * n as f64).floor() as usize).min(n);
    if count == 0 {
        return (c.clone(), Vec::new());
    }
    let mut relays = c.relays().to_vec();
    let mut picked = index::sample(rng, n, count).into_vec();
    picked.sort_unstable();
    let mut gone = Vec::with_capacity(count);
    for i in picked {
        let label = relay_label(*next_label);
        *next_label += 1;
        let old = std::mem::replace(&mut relays[i], HsDirRelay::new(random_fingerprint(rng), label));
        gone.push(old.label);
    }
    let snapshot = ConsensusSnapshot::new(c.epoch, relays).expect("random 160-bit fingerprints do not collide");
    (snapshot, gone)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthVisit {
    pub snooper: String,
    pub onion_address: String,
    pub day: u32,
}

/// Everything the detectors must not see.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub snoopers: BTreeMap<String, SnooperModel>,
    /// Snoopers that left the consensus through churn, with the day they left.
    pub retired: BTreeMap<String, u32>,
    pub visits: Vec<TruthVisit>,
}

impl GroundTruth {
    /// Snoopers with at least one visit.
    pub fn active_snoopers(&self) -> HashSet<&str> {
        self.visits.iter().map(|v| v.snooper.as_str()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DayCoverage {
    pub day: u32,
    /// Coverage by the honions created this day.
    pub new_batch: Option<f64>,
    /// Coverage by every honion alive this day.
    pub alive: f64,
    /// Fraction of today's relays that have hosted any honion so far.
    pub cumulative: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationOutput {
    pub consensus: Vec<ConsensusSnapshot>,
    pub honions: Vec<HonionSpec>,
    pub placements: Vec<PlacementRecord>,
    pub visits: Vec<VisitRecord>,
    pub ground_truth: GroundTruth,
    pub coverage: Vec<DayCoverage>,
}

struct Snooper {
    label: String,
    model: SnooperModel,
    rng: ChaCha8Rng,
    learned: Vec<LearnedHonion>,
    known: HashSet<usize>,
}

pub fn run_simulation(cfg: &SimulationConfig) -> Result<SimulationOutput, SimError> {
    cfg.validate()?;
    let mut world = ChaCha8Rng::seed_from_u64(substream_seed(cfg.seed, "world"));
    let mut consensus = generate_consensus(&mut world, 0, cfg.n_hsdirs, cfg.fingerprint_layout, 0);
    let mut next_label = cfg.n_hsdirs;
    if !cfg.relay_tags.is_empty() {
        let mut relays = consensus.into_relays();
        for r in &mut relays {
            if let Some(tags) = cfg.relay_tags.get(&r.label) {
                r.tags = tags.clone();
            }
        }
        consensus = ConsensusSnapshot::new(0, relays)?;
    }

    let mut snoopers: BTreeMap<String, Snooper> = cfg
        .snoopers
        .iter()
        .map(|(label, model)| {
            let s = Snooper {
                label: label.clone(),
                model: model.clone(),
                rng: ChaCha8Rng::seed_from_u64(substream_seed(cfg.seed, &format!("snooper:{label}"))),
                learned: Vec::new(),
                known: HashSet::new(),
            };
            (label.clone(), s)
        })
        .collect();

    let mut out = SimulationOutput {
        consensus: Vec::with_capacity(cfg.n_days as usize),
        honions: Vec::new(),
        placements: Vec::new(),
        visits: Vec::new(),
        ground_truth: GroundTruth {
            snoopers: cfg.snoopers.clone(),
            ..GroundTruth::default()
        },
        coverage: Vec::new(),
    };
    let mut ever_hosted: HashSet<Fingerprint> = HashSet::new();

    for day in 0..cfg.n_days {
        let day_start = u64::from(day) * SECONDS_PER_DAY;
        if day > 0 {
            if let Some(fraction) = cfg.relay_churn {
                let (next, gone) = apply_churn(&consensus, fraction, &mut world, &mut next_label);
                consensus = next;
                for label in gone {
                    if snoopers.remove(&label).is_some() {
                        out.ground_truth.retired.insert(label, day);
                    }
                }
            }
            consensus.epoch = day;
        }

        let first_new = out.honions.len();
        for schedule in Schedule::ALL {
            if day % schedule.period_days() == 0 {
                for _ in 0..cfg.schedules.get(schedule) {
                    out.honions.push(HonionSpec::new(ServiceId(world.gen()), schedule, day_start));
                }
            }
        }

        let mut today: Vec<PlacementRecord> = Vec::new();
        let mut new_batch: Vec<PlacementRecord> = Vec::new();
        for (idx, h) in out.honions.iter().enumerate() {
            if !h.is_alive(day_start) {
                continue;
            }
            let tp = compute_time_period(day_start.max(h.created_at), h.permanent_id_byte);
            let hsdirs = hsdirs_for_period(h, &consensus, tp)?;
            for relay in &hsdirs {
                ever_hosted.insert(relay.fingerprint);
                if let Some(s) = snoopers.get_mut(&relay.label) {
                    if s.known.insert(idx) {
                        s.learned.push(LearnedHonion {
                            honion: idx,
                            learned_day: day,
                            visited: false,
                        });
                    }
                }
            }
            let record = PlacementRecord {
                onion_address: h.onion_address(),
                epoch: day,
                hsdirs,
                valid_from: day_start.max(h.created_at),
                valid_until: (day_start + SECONDS_PER_DAY).min(h.expires_at()),
            };
            if idx >= first_new {
                new_batch.push(record.clone());
            }
            today.push(record);
        }

        let cumulative = consensus.relays().iter().filter(|r| ever_hosted.contains(&r.fingerprint)).count() as f64
            / consensus.len() as f64;
        out.coverage.push(DayCoverage {
            day,
            new_batch: (!new_batch.is_empty()).then(|| measure_coverage(&new_batch, &consensus)),
            alive: measure_coverage(&today, &consensus),
            cumulative,
        });
        out.placements.extend(today);

        for s in snoopers.values_mut() {
            let chosen = snooper_decide(&s.model, &s.learned, day, &mut s.rng);
            let chosen: HashSet<usize> = chosen.into_iter().filter(|&i| out.honions[i].is_alive(day_start)).collect();
            for entry in &mut s.learned {
                if !chosen.contains(&entry.honion) {
                    continue;
                }
                entry.visited = true;
                let h = &out.honions[entry.honion];
                let address = h.onion_address();
                let start = day_start + s.rng.gen_range(0..SECONDS_PER_DAY);
                for (t, path) in (start..).zip(&s.model.request_paths) {
                    // requests of one visit stay inside the day and the lifetime
                    let ts = t.min(day_start + SECONDS_PER_DAY - 1).min(h.expires_at() - 1);
                    let mut v = VisitRecord::new(address.clone(), ts, path.clone());
                    v.requester_tag = s.label.clone();
                    out.visits.push(v);
                }
                out.ground_truth.visits.push(TruthVisit {
                    snooper: s.label.clone(),
                    onion_address: address,
                    day,
                });
            }
        }
        out.consensus.push(consensus.clone());
    }

    out.visits.sort_by(|a, b| {
        (a.timestamp, &a.onion_address, &a.requester_tag).cmp(&(b.timestamp, &b.onion_address, &b.requester_tag))
    });
    out.ground_truth
        .visits
        .sort_by(|a, b| (a.day, &a.snooper, &a.onion_address).cmp(&(b.day, &b.snooper, &b.onion_address)));
    Ok(out)
}

#[derive(Serialize)]
struct TagLine<'a> {
    requester_tag: &'a str,
}

pub const CONSENSUS_FILE: &str = "consensus.jsonl";
pub const HONIONS_FILE: &str = "honions.jsonl";
pub const PLACEMENTS_FILE: &str = "placements.jsonl";
pub const VISITS_FILE: &str = "visits.jsonl";
pub const VISIT_TAGS_FILE: &str = "visit_tags.jsonl";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const COVERAGE_FILE: &str = "coverage.json";

impl SimulationOutput {
    /// The visit log as a detector sees it: requester tags removed.
    pub fn public_visits(&self) -> Vec<VisitRecord> {
        self.visits
            .iter()
            .map(|v| VisitRecord {
                requester_tag: String::new(),
                ..v.clone()
            })
            .collect()
    }

    pub fn write_to_dir(&self, dir: &Path) -> Result<(), SimError> {
        std::fs::create_dir_all(dir).map_err(|source| JsonlError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        write_jsonl(&dir.join(CONSENSUS_FILE), &self.consensus)?;
        write_jsonl(&dir.join(HONIONS_FILE), &self.honions)?;
        write_jsonl(&dir.join(PLACEMENTS_FILE), &self.placements)?;
        write_jsonl(&dir.join(VISITS_FILE), &self.public_visits())?;
        let tags: Vec<TagLine> = self
            .visits
            .iter()
            .map(|v| TagLine {
                requester_tag: &v.requester_tag,
            })
            .collect();
        write_jsonl(&dir.join(VISIT_TAGS_FILE), &tags)?;
        write_json(&dir.join(GROUND_TRUTH_FILE), &self.ground_truth)?;
        write_json(&dir.join(COVERAGE_FILE), &self.coverage)?;
        Ok(())
    }
}
