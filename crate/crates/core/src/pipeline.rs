//! File-level glue shared by the CLI and the C bindings: a run directory holds
//! `placements.jsonl`, `visits.jsonl` and optionally `honions.jsonl`; graph,
//! detection and report stages add their own files next to them.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::detector::{
    exact_min_cover_with, greedy_min_cover, rank_suspects, DetectionResult, DetectorConfig, Method, Suspect,
};
use crate::graph::{build_graph, AttributionGraph, GraphFile};
use crate::records::{read_json, read_jsonl, write_json, VisitRecord};
use crate::report::{build_tables, classify_requests, emit_report, profile_snoopers, ReportFormat};
use crate::ring::{HonionSpec, PlacementRecord};
use crate::simulator::{HONIONS_FILE, PLACEMENTS_FILE, VISITS_FILE};
use crate::{Error, Result};

pub const GRAPH_FILE: &str = "graph.json";
pub const EDGES_FILE: &str = "edges.tsv";
pub const DETECTION_FILE: &str = "detection.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MethodChoice {
    Greedy,
    Exact,
    Both,
}

impl std::str::FromStr for MethodChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(MethodChoice::Greedy),
            "exact" => Ok(MethodChoice::Exact),
            "both" => Ok(MethodChoice::Both),
            other => Err(Error::Input(format!("unknown method {other:?}"))),
        }
    }
}

/// Output of the detect stage. `suspects` ranks the exact result when it was
/// computed, otherwise the greedy one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub results: Vec<DetectionResult>,
    pub suspects: Vec<Suspect>,
}

impl DetectionReport {
    pub fn preferred(&self) -> Option<&DetectionResult> {
        self.results
            .iter()
            .find(|r| r.method == Method::Exact)
            .or_else(|| self.results.first())
    }
}

pub struct RunData {
    pub placements: Vec<PlacementRecord>,
    pub visits: Vec<VisitRecord>,
    pub honions: Vec<HonionSpec>,
}

pub fn load_run(dir: &Path) -> Result<RunData> {
    let honions_path = dir.join(HONIONS_FILE);
    Ok(RunData {
        placements: read_jsonl(&dir.join(PLACEMENTS_FILE))?,
        visits: read_jsonl(&dir.join(VISITS_FILE))?,
        honions: if honions_path.exists() {
            read_jsonl(&honions_path)?
        } else {
            Vec::new()
        },
    })
}

pub fn load_graph(path: &Path) -> Result<AttributionGraph> {
    let file: GraphFile = read_json(path)?;
    Ok(AttributionGraph::from_file(file)?)
}

/// Builds the attribution graph for a run directory and writes `graph.json`
/// and `edges.tsv` into `out`.
pub fn build_graph_files(run_dir: &Path, out: &Path) -> Result<AttributionGraph> {
    let run = load_run(run_dir)?;
    let g = build_graph(&run.placements, &run.visits)?;
    std::fs::create_dir_all(out).map_err(|e| Error::Input(format!("{}: {e}", out.display())))?;
    write_json(&out.join(GRAPH_FILE), &g.to_file())?;
    let edges = out.join(EDGES_FILE);
    std::fs::write(&edges, g.edge_list_text()).map_err(|e| Error::Input(format!("{}: {e}", edges.display())))?;
    Ok(g)
}

/// Runs the requested solvers. With `timings` off, `runtime_secs` stays empty
/// so that repeated runs produce identical output.
pub fn detect(g: &AttributionGraph, choice: MethodChoice, cfg: &DetectorConfig, timings: bool) -> Result<DetectionReport> {
    let mut results = Vec::new();
    if matches!(choice, MethodChoice::Greedy | MethodChoice::Both) {
        let t = Instant::now();
        let mut r = greedy_min_cover(g)?;
        r.runtime_secs = timings.then(|| t.elapsed().as_secs_f64());
        results.push(r);
    }
    if matches!(choice, MethodChoice::Exact | MethodChoice::Both) {
        let t = Instant::now();
        let mut r = exact_min_cover_with(g, cfg)?;
        r.runtime_secs = timings.then(|| t.elapsed().as_secs_f64());
        results.push(r);
    }
    let mut report = DetectionReport {
        results,
        suspects: Vec::new(),
    };
    if let Some(r) = report.preferred() {
        report.suspects = rank_suspects(g, r);
    }
    Ok(report)
}

/// Produces the report tables for a run directory. Uses `graph.json` and
/// `detection.json` from `run_dir` when present and computes them otherwise.
pub fn report_run(run_dir: &Path, format: ReportFormat, out: &Path) -> Result<Vec<PathBuf>> {
    let run = load_run(run_dir)?;
    let graph_path = run_dir.join(GRAPH_FILE);
    let g = if graph_path.exists() {
        load_graph(&graph_path)?
    } else {
        build_graph(&run.placements, &run.visits)?
    };
    let detection_path = run_dir.join(DETECTION_FILE);
    let detection: DetectionReport = if detection_path.exists() {
        read_json(&detection_path)?
    } else {
        detect(&g, MethodChoice::Exact, &DetectorConfig::default(), false)?
    };
    let profiles = match detection.preferred() {
        Some(r) => profile_snoopers(&g, r, &run.placements, &run.visits, &run.honions),
        None => Vec::new(),
    };
    let classifications = classify_requests(&run.visits);
    let tables = build_tables(
        &detection.suspects,
        &detection.results,
        &profiles,
        &classifications,
        &run.visits,
        &run.honions,
    );
    Ok(emit_report(&tables, format, out)?)
}
