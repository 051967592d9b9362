//! Post-detection analytics: daily deduplication, request classification,
//! per-snooper latency profiles and tabular export.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use percent_encoding::percent_decode_str;
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;
use thiserror::Error;

use crate::detector::{DetectionResult, Method, Suspect};
use crate::graph::AttributionGraph;
use crate::records::VisitRecord;
use crate::ring::{HonionSpec, HsDirRelay, PlacementRecord, Schedule, SECONDS_PER_DAY};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Earliest visit per `(onion_address, day)`, in input order.
pub fn dedup_daily(visits: &[VisitRecord]) -> Vec<VisitRecord> {
    let mut earliest: HashMap<(&str, u32), usize> = HashMap::new();
    for (i, v) in visits.iter().enumerate() {
        earliest
            .entry((v.onion_address.as_str(), v.day()))
            .and_modify(|best| {
                if v.timestamp < visits[*best].timestamp {
                    *best = i;
                }
            })
            .or_insert(i);
    }
    let keep: HashSet<usize> = earliest.into_values().collect();
    visits
        .iter()
        .enumerate()
        .filter(|(i, _)| keep.contains(i))
        .map(|(_, v)| v.clone())
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    AutomatedRoot,
    ManualBrowser,
    Crawler,
    AttackProbe,
    StatusProbe,
    Other,
}

impl ProbeKind {
    pub const ALL: [ProbeKind; 6] = [
        ProbeKind::AutomatedRoot,
        ProbeKind::ManualBrowser,
        ProbeKind::Crawler,
        ProbeKind::AttackProbe,
        ProbeKind::StatusProbe,
        ProbeKind::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProbeKind::AutomatedRoot => "automated_root",
            ProbeKind::ManualBrowser => "manual_browser",
            ProbeKind::Crawler => "crawler",
            ProbeKind::AttackProbe => "attack_probe",
            ProbeKind::StatusProbe => "status_probe",
            ProbeKind::Other => "other",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisitClassification {
    /// Index into the classified visit list.
    pub visit: usize,
    pub probe_kind: ProbeKind,
    pub matched_signature: Option<String>,
}

const ATTACK_SIGNATURES: &[&str] = &[
    "information_schema.tables",
    "admin/views/ajax/autocomplete/user/",
    "boot.ini",
    "/etc/passwd",
    "rails/info/properties",
    "<script",
];
const CRAWLER_SIGNATURES: &[&str] = &["robots.txt", "sitemap"];
const STATUS_SIGNATURES: &[&str] = &["server-status"];

fn php_easter_egg() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\?=php[^&=]*-[^&=]*-[^&=]*-[^&=]*-").expect("valid regex"))
}

fn decoded_lower(path: &str) -> String {
    percent_decode_str(path).decode_utf8_lossy().to_lowercase()
}

fn signature_match(path: &str) -> Option<(ProbeKind, String)> {
    let p = decoded_lower(path);
    let find = |sigs: &[&str]| sigs.iter().find(|s| p.contains(*s)).map(|s| s.to_string());
    if let Some(s) = find(ATTACK_SIGNATURES) {
        return Some((ProbeKind::AttackProbe, s));
    }
    if php_easter_egg().is_match(&p) {
        return Some((ProbeKind::AttackProbe, "?=PHP easter egg".into()));
    }
    if let Some(s) = find(STATUS_SIGNATURES) {
        return Some((ProbeKind::StatusProbe, s));
    }
    find(CRAWLER_SIGNATURES).map(|s| (ProbeKind::Crawler, s))
}

/// Assigns exactly one probe kind to every visit. Signatures are matched
/// case-insensitively against the percent-decoded path and query.
pub fn classify_requests(visits: &[VisitRecord]) -> Vec<VisitClassification> {
    // (onion, day) pairs that saw a non-favicon page request
    let page_days: HashSet<(&str, u32)> = visits
        .iter()
        .filter(|v| !v.is_favicon && !v.request_path.is_empty())
        .map(|v| (v.onion_address.as_str(), v.day()))
        .collect();
    visits
        .iter()
        .enumerate()
        .map(|(visit, v)| {
            let (probe_kind, matched_signature) = if let Some((kind, sig)) = signature_match(&v.request_path) {
                (kind, Some(sig))
            } else if v.is_favicon {
                if page_days.contains(&(v.onion_address.as_str(), v.day())) {
                    (ProbeKind::ManualBrowser, Some("favicon.ico".into()))
                } else {
                    (ProbeKind::Other, Some("favicon.ico".into()))
                }
            } else if v.request_path == "/" {
                (ProbeKind::AutomatedRoot, None)
            } else {
                (ProbeKind::Other, None)
            };
            VisitClassification {
                visit,
                probe_kind,
                matched_signature,
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SnooperCategory {
    Immediate,
    Delayed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnooperProfile {
    pub relay: HsDirRelay,
    pub first_visit_day: u32,
    pub last_visit_day: u32,
    /// Sorted; one sample per explained honion and visit day.
    pub latency_days: Vec<u32>,
    pub median_latency: f64,
    pub category: SnooperCategory,
    pub schedules_hit: BTreeSet<Schedule>,
    /// Deduplicated visits per day among the honions this relay explains.
    pub daily_visits: BTreeMap<u32, usize>,
}

pub fn median(sorted: &[u32]) -> Option<f64> {
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(f64::from(sorted[n / 2])),
        _ => Some((f64::from(sorted[n / 2 - 1]) + f64::from(sorted[n / 2])) / 2.0),
    }
}

/// Immediate iff the median latency is at most one day.
pub fn categorize(median_latency: f64) -> SnooperCategory {
    if median_latency <= 1.0 {
        SnooperCategory::Immediate
    } else {
        SnooperCategory::Delayed
    }
}

/// Latency profile of every member of the explaining set that has visits.
///
/// A relay contributes one latency sample per honion it hosted: the day of
/// the first visit on or after the day it first hosted the honion, minus that
/// day. Honions hosted by no other member of the explaining set are used when
/// there are any, since their visits cannot come from another suspect.
/// `honions` supplies schedules; addresses missing from it are ignored for
/// `schedules_hit`.
pub fn profile_snoopers(
    g: &AttributionGraph,
    r: &DetectionResult,
    placements: &[PlacementRecord],
    visits: &[VisitRecord],
    honions: &[HonionSpec],
) -> Vec<SnooperProfile> {
    let schedule_of: HashMap<String, Schedule> = honions.iter().map(|h| (h.onion_address(), h.schedule)).collect();
    let suspects: HashSet<_> = r.explaining_set.iter().map(|x| x.fingerprint).collect();
    // earliest hosting day per (suspect, onion)
    let mut first_hosted: HashMap<(_, &str), u32> = HashMap::new();
    for p in placements {
        let day = (p.valid_from / SECONDS_PER_DAY) as u32;
        for x in p.hsdirs.iter().filter(|x| suspects.contains(&x.fingerprint)) {
            first_hosted
                .entry((x.fingerprint, p.onion_address.as_str()))
                .and_modify(|d| *d = (*d).min(day))
                .or_insert(day);
        }
    }
    let mut hosts_of: HashMap<&str, usize> = HashMap::new();
    for (_, onion) in first_hosted.keys() {
        *hosts_of.entry(onion).or_default() += 1;
    }
    let mut visit_days: HashMap<&str, BTreeSet<u32>> = HashMap::new();
    for v in visits {
        visit_days.entry(v.onion_address.as_str()).or_default().insert(v.day());
    }

    let mut profiles = Vec::new();
    for relay in &r.explaining_set {
        if g.hsdir_index(&relay.fingerprint).is_none() {
            continue;
        }
        let hosted: Vec<(&str, u32)> = first_hosted
            .iter()
            .filter(|((fp, _), _)| *fp == relay.fingerprint)
            .map(|((_, onion), &day)| (*onion, day))
            .collect();
        let visited: Vec<(&str, u32)> = hosted
            .into_iter()
            .filter(|(onion, day)| visit_days.get(onion).is_some_and(|d| d.range(day..).next().is_some()))
            .collect();
        let exclusive: Vec<(&str, u32)> = visited.iter().copied().filter(|(o, _)| hosts_of[o] == 1).collect();
        let mut chosen = if exclusive.is_empty() { visited } else { exclusive };
        chosen.sort_unstable();

        let mut latency_days = Vec::new();
        let mut daily_visits: BTreeMap<u32, usize> = BTreeMap::new();
        let mut schedules_hit = BTreeSet::new();
        for (onion, hosted_day) in chosen {
            let days = &visit_days[onion];
            let first = *days.range(hosted_day..).next().expect("filtered above");
            latency_days.push(first - hosted_day);
            for &d in days.range(hosted_day..) {
                *daily_visits.entry(d).or_default() += 1;
            }
            if let Some(s) = schedule_of.get(onion) {
                schedules_hit.insert(*s);
            }
        }
        latency_days.sort_unstable();
        let Some(median_latency) = median(&latency_days) else { continue };
        profiles.push(SnooperProfile {
            relay: relay.clone(),
            first_visit_day: *daily_visits.keys().next().expect("samples exist"),
            last_visit_day: *daily_visits.keys().last().expect("samples exist"),
            latency_days,
            median_latency,
            category: categorize(median_latency),
            schedules_hit,
            daily_visits,
        });
    }
    profiles
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainingRow {
    pub rank: usize,
    pub label: String,
    pub fingerprint: String,
    pub explained_instances: usize,
    pub explained_visits: usize,
    pub high_confidence: bool,
    pub category: String,
    pub median_latency: String,
    pub first_visit_day: String,
    pub last_visit_day: String,
    pub schedules_hit: String,
    pub tags: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelayTypeRow {
    pub relay_type: String,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DailyVisitRow {
    pub day: u32,
    pub daily: usize,
    pub weekly: usize,
    pub monthly: usize,
    pub unknown: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivityRow {
    pub label: String,
    pub day: u32,
    pub visits: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RequestKindRow {
    pub probe_kind: String,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRow {
    pub method: String,
    pub size: usize,
    pub lower_bound: usize,
    pub proven_optimal: bool,
    pub fallback_components: usize,
}

/// All report tables, in their export column order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportTables {
    pub explaining_set: Vec<ExplainingRow>,
    pub relay_types: Vec<RelayTypeRow>,
    pub daily_visits: Vec<DailyVisitRow>,
    pub snooper_activity: Vec<ActivityRow>,
    pub request_kinds: Vec<RequestKindRow>,
    pub detection: Vec<DetectionRow>,
}

const EXPLAINING_HEADER: &[&str] = &[
    "rank",
    "label",
    "fingerprint",
    "explained_instances",
    "explained_visits",
    "high_confidence",
    "category",
    "median_latency",
    "first_visit_day",
    "last_visit_day",
    "schedules_hit",
    "tags",
];
const RELAY_TYPE_HEADER: &[&str] = &["relay_type", "count"];
const DAILY_HEADER: &[&str] = &["day", "daily", "weekly", "monthly", "unknown"];
const ACTIVITY_HEADER: &[&str] = &["label", "day", "visits"];
const KIND_HEADER: &[&str] = &["probe_kind", "count"];
const DETECTION_HEADER: &[&str] = &["method", "size", "lower_bound", "proven_optimal", "fallback_components"];

/// Cloud/exit breakdown of the suspects' metadata tags.
pub fn relay_type_breakdown<'a>(relays: impl IntoIterator<Item = &'a HsDirRelay>) -> Vec<RelayTypeRow> {
    let mut counts = [0usize; 4];
    for r in relays {
        let slot = match (r.has_tag("cloud"), r.has_tag("exit")) {
            (true, false) => 0,
            (false, true) => 1,
            (true, true) => 2,
            (false, false) => 3,
        };
        counts[slot] += 1;
    }
    ["cloud", "exit", "both", "neither"]
        .iter()
        .zip(counts)
        .map(|(t, count)| RelayTypeRow {
            relay_type: t.to_string(),
            count,
        })
        .collect()
}

pub fn build_tables(
    suspects: &[Suspect],
    results: &[DetectionResult],
    profiles: &[SnooperProfile],
    classifications: &[VisitClassification],
    visits: &[VisitRecord],
    honions: &[HonionSpec],
) -> ReportTables {
    let profile_of: HashMap<_, _> = profiles.iter().map(|p| (p.relay.fingerprint, p)).collect();
    let join = |items: Vec<&str>| items.join(";");
    let explaining_set = suspects
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let p = profile_of.get(&s.relay.fingerprint);
            ExplainingRow {
                rank: i + 1,
                label: s.relay.label.clone(),
                fingerprint: s.relay.fingerprint.to_string(),
                explained_instances: s.explained_instances,
                explained_visits: s.explained_visits,
                high_confidence: s.high_confidence,
                category: p
                    .map(|p| match p.category {
                        SnooperCategory::Immediate => "immediate",
                        SnooperCategory::Delayed => "delayed",
                    })
                    .unwrap_or_default()
                    .to_string(),
                median_latency: p.map(|p| format!("{:.1}", p.median_latency)).unwrap_or_default(),
                first_visit_day: p.map(|p| p.first_visit_day.to_string()).unwrap_or_default(),
                last_visit_day: p.map(|p| p.last_visit_day.to_string()).unwrap_or_default(),
                schedules_hit: p
                    .map(|p| join(p.schedules_hit.iter().map(|s| s.as_str()).collect()))
                    .unwrap_or_default(),
                tags: join(s.relay.tags.iter().map(String::as_str).collect()),
            }
        })
        .collect();

    let schedule_of: HashMap<String, Schedule> = honions.iter().map(|h| (h.onion_address(), h.schedule)).collect();
    let mut per_day: BTreeMap<u32, [usize; 4]> = BTreeMap::new();
    for v in dedup_daily(visits) {
        let slot = match schedule_of.get(&v.onion_address) {
            Some(Schedule::Daily) => 0,
            Some(Schedule::Weekly) => 1,
            Some(Schedule::Monthly) => 2,
            None => 3,
        };
        per_day.entry(v.day()).or_default()[slot] += 1;
    }
    let daily_visits = per_day
        .into_iter()
        .map(|(day, c)| DailyVisitRow {
            day,
            daily: c[0],
            weekly: c[1],
            monthly: c[2],
            unknown: c[3],
        })
        .collect();

    let snooper_activity = profiles
        .iter()
        .flat_map(|p| {
            p.daily_visits.iter().map(move |(&day, &visits)| ActivityRow {
                label: p.relay.label.clone(),
                day,
                visits,
            })
        })
        .collect();

    let mut kinds: BTreeMap<ProbeKind, usize> = ProbeKind::ALL.iter().map(|&k| (k, 0)).collect();
    for c in classifications {
        *kinds.entry(c.probe_kind).or_default() += 1;
    }
    let request_kinds = if classifications.is_empty() {
        Vec::new()
    } else {
        kinds
            .into_iter()
            .map(|(k, count)| RequestKindRow {
                probe_kind: k.as_str().to_string(),
                count,
            })
            .collect()
    };

    let detection = results
        .iter()
        .map(|r| DetectionRow {
            method: match r.method {
                Method::Greedy => "greedy",
                Method::Exact => "exact",
            }
            .to_string(),
            size: r.size(),
            lower_bound: r.lower_bound,
            proven_optimal: r.proven_optimal,
            fallback_components: r.fallback_components,
        })
        .collect();

    ReportTables {
        explaining_set,
        relay_types: if suspects.is_empty() {
            Vec::new()
        } else {
            relay_type_breakdown(suspects.iter().map(|s| &s.relay))
        },
        daily_visits,
        snooper_activity,
        request_kinds,
        detection,
    }
}

fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<(), ReportError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub const CSV_FILES: [&str; 6] = [
    "explaining_set.csv",
    "relay_types.csv",
    "daily_visits.csv",
    "snooper_activity.csv",
    "request_kinds.csv",
    "detection.csv",
];
pub const JSON_FILE: &str = "summary.json";

/// Writes the tables into `dir`: one CSV per table, or a single JSON document.
/// Returns the written paths.
pub fn emit_report(tables: &ReportTables, format: ReportFormat, dir: &Path) -> Result<Vec<std::path::PathBuf>, ReportError> {
    std::fs::create_dir_all(dir).map_err(|source| ReportError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    match format {
        ReportFormat::Json => {
            let path = dir.join(JSON_FILE);
            let mut body = serde_json::to_string_pretty(tables)?;
            body.push('\n');
            std::fs::write(&path, body).map_err(|source| ReportError::Io {
                path: path.display().to_string(),
                source,
            })?;
            Ok(vec![path])
        }
        ReportFormat::Csv => {
            let paths: Vec<_> = CSV_FILES.iter().map(|f| dir.join(f)).collect();
            write_csv(&paths[0], EXPLAINING_HEADER, &tables.explaining_set)?;
            write_csv(&paths[1], RELAY_TYPE_HEADER, &tables.relay_types)?;
            write_csv(&paths[2], DAILY_HEADER, &tables.daily_visits)?;
            write_csv(&paths[3], ACTIVITY_HEADER, &tables.snooper_activity)?;
            write_csv(&paths[4], KIND_HEADER, &tables.request_kinds)?;
            write_csv(&paths[5], DETECTION_HEADER, &tables.detection)?;
            Ok(paths)
        }
    }
}
