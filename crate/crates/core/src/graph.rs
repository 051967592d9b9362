//! Bipartite attribution graph between visited honion instances and the HSDirs
//! that could have leaked them.
//!
//! A honion is split into one instance per run of epochs with an unchanged
//! placement. An instance is adjacent to every relay that hosted the honion in
//! any epoch up to and including the instance's epochs; relays that only
//! host it later cannot explain the visit.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::records::VisitRecord;
use crate::ring::{Fingerprint, HsDirRelay, PlacementRecord};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("visit {index} to {onion_address} at {timestamp} matches no placement")]
    OrphanVisit {
        index: usize,
        onion_address: String,
        timestamp: u64,
    },
    #[error("edge references missing vertex ({instance}, {hsdir})")]
    BadEdge { instance: usize, hsdir: usize },
    #[error("duplicate hsdir fingerprint {0}")]
    DuplicateHsdir(Fingerprint),
    #[error("honion instance {0} has no candidate hsdir")]
    Uncoverable(usize),
    #[error("unvisited_hosted has {0} entries, expected one per hsdir")]
    BadAnnotation(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HonionInstance {
    /// Stable identifier, preserved across component splits.
    pub id: usize,
    pub onion_address: String,
    pub first_epoch: u32,
    pub last_epoch: u32,
    /// Indices into the visit list the graph was built from.
    pub visit_ids: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttributionGraph {
    hsdirs: Vec<HsDirRelay>,
    instances: Vec<HonionInstance>,
    /// Per instance, sorted indices into `hsdirs`.
    adjacency: Vec<Vec<usize>>,
    /// Per hsdir, honions it hosted that saw no visit it could explain.
    /// Empty when unknown.
    unvisited_hosted: Vec<usize>,
}

impl AttributionGraph {
    /// Assembles a graph from explicit parts. Relays are re-sorted by
    /// fingerprint and edges remapped accordingly.
    pub fn from_parts(
        hsdirs: Vec<HsDirRelay>,
        instances: Vec<HonionInstance>,
        edges: &[(usize, usize)],
    ) -> Result<Self, GraphError> {
        let mut order: Vec<usize> = (0..hsdirs.len()).collect();
        order.sort_by(|&a, &b| hsdirs[a].fingerprint.cmp(&hsdirs[b].fingerprint));
        let mut remap = vec![0; hsdirs.len()];
        for (new, &old) in order.iter().enumerate() {
            remap[old] = new;
        }
        let sorted: Vec<HsDirRelay> = order.iter().map(|&i| hsdirs[i].clone()).collect();
        if let Some(w) = sorted.windows(2).find(|w| w[0].fingerprint == w[1].fingerprint) {
            return Err(GraphError::DuplicateHsdir(w[0].fingerprint));
        }
        let mut adjacency = vec![Vec::new(); instances.len()];
        for &(i, h) in edges {
            if i >= instances.len() || h >= sorted.len() {
                return Err(GraphError::BadEdge { instance: i, hsdir: h });
            }
            adjacency[i].push(remap[h]);
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
            adj.dedup();
        }
        Ok(AttributionGraph {
            hsdirs: sorted,
            instances,
            adjacency,
            unvisited_hosted: Vec::new(),
        })
    }

    pub fn hsdirs(&self) -> &[HsDirRelay] {
        &self.hsdirs
    }

    pub fn instances(&self) -> &[HonionInstance] {
        &self.instances
    }

    /// Sorted hsdir indices adjacent to instance `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum()
    }

    /// `(instance index, hsdir index)` pairs in instance order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, adj)| adj.iter().map(move |&h| (i, h)))
    }

    /// For every hsdir, the sorted instance indices it can explain.
    pub fn hsdir_neighbors(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.hsdirs.len()];
        for (i, h) in self.edges() {
            out[h].push(i);
        }
        out
    }

    /// Honions hsdir `h` hosted without any visit it could explain, when the
    /// graph was built from placements.
    pub fn unvisited_hosted(&self, h: usize) -> Option<usize> {
        self.unvisited_hosted.get(h).copied()
    }

    pub fn hsdir_index(&self, fingerprint: &Fingerprint) -> Option<usize> {
        self.hsdirs.binary_search_by(|r| r.fingerprint.cmp(fingerprint)).ok()
    }

    /// Every instance must have at least one candidate.
    pub fn validate(&self) -> Result<(), GraphError> {
        match self.adjacency.iter().position(Vec::is_empty) {
            Some(i) => Err(GraphError::Uncoverable(self.instances[i].id)),
            None => Ok(()),
        }
    }

    pub fn to_file(&self) -> GraphFile {
        GraphFile {
            hsdirs: self.hsdirs.clone(),
            instances: self.instances.clone(),
            edges: self.edges().collect(),
            unvisited_hosted: self.unvisited_hosted.clone(),
        }
    }

    pub fn from_file(file: GraphFile) -> Result<Self, GraphError> {
        let counts = file.unvisited_hosted;
        if !counts.is_empty() && counts.len() != file.hsdirs.len() {
            return Err(GraphError::BadAnnotation(counts.len()));
        }
        let by_fp: Vec<(Fingerprint, usize)> = file.hsdirs.iter().map(|r| r.fingerprint).zip(counts).collect();
        let mut g = Self::from_parts(file.hsdirs, file.instances, &file.edges)?;
        if !by_fp.is_empty() {
            g.unvisited_hosted = vec![0; g.hsdirs.len()];
            for (fp, n) in by_fp {
                let h = g.hsdir_index(&fp).expect("hsdir kept");
                g.unvisited_hosted[h] = n;
            }
        }
        Ok(g)
    }

    /// One `instance_id<TAB>relay_label` line per edge.
    pub fn edge_list_text(&self) -> String {
        let mut out = String::new();
        for (i, h) in self.edges() {
            let _ = writeln!(out, "{}\t{}", self.instances[i].id, self.hsdirs[h].label);
        }
        out
    }

    /// Induced subgraph; `hsdir_idx` must be increasing. Edges to relays
    /// outside `hsdir_idx` are dropped.
    pub(crate) fn subgraph(&self, instance_idx: &[usize], hsdir_idx: &[usize]) -> AttributionGraph {
        let pos: HashMap<usize, usize> = hsdir_idx.iter().enumerate().map(|(new, &old)| (old, new)).collect();
        AttributionGraph {
            hsdirs: hsdir_idx.iter().map(|&h| self.hsdirs[h].clone()).collect(),
            instances: instance_idx.iter().map(|&i| self.instances[i].clone()).collect(),
            adjacency: instance_idx
                .iter()
                .map(|&i| self.adjacency[i].iter().filter_map(|h| pos.get(h).copied()).collect())
                .collect(),
            unvisited_hosted: if self.unvisited_hosted.is_empty() {
                Vec::new()
            } else {
                hsdir_idx.iter().map(|&h| self.unvisited_hosted[h]).collect()
            },
        }
    }
}

/// JSON export of a graph: vertex lists plus `[instance, hsdir]` index pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub hsdirs: Vec<HsDirRelay>,
    pub instances: Vec<HonionInstance>,
    pub edges: Vec<(usize, usize)>,
    /// Parallel to `hsdirs`; may be absent.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unvisited_hosted: Vec<usize>,
}

struct PlacementRun<'a> {
    first_epoch: u32,
    last_epoch: u32,
    hosts: &'a [HsDirRelay],
}

/// Groups visits into per-placement instances and links each instance to all
/// relays that hosted its honion up to that point.
pub fn build_graph(placements: &[PlacementRecord], visits: &[VisitRecord]) -> Result<AttributionGraph, GraphError> {
    let mut by_onion: HashMap<&str, Vec<&PlacementRecord>> = HashMap::new();
    for p in placements {
        by_onion.entry(p.onion_address.as_str()).or_default().push(p);
    }
    for records in by_onion.values_mut() {
        records.sort_by_key(|p| (p.epoch, p.valid_from));
    }

    // instance key: (onion, run index) -> visit ids
    let mut groups: BTreeMap<(&str, usize), Vec<usize>> = BTreeMap::new();
    let mut runs_by_onion: HashMap<&str, Vec<PlacementRun>> = HashMap::new();
    for (index, v) in visits.iter().enumerate() {
        let orphan = || GraphError::OrphanVisit {
            index,
            onion_address: v.onion_address.clone(),
            timestamp: v.timestamp,
        };
        let records = by_onion.get(v.onion_address.as_str()).ok_or_else(orphan)?;
        // latest placement that had started by the visit time
        let matched = records.partition_point(|p| p.valid_from <= v.timestamp);
        if matched == 0 {
            return Err(orphan());
        }
        let epoch = records[matched - 1].epoch;
        let runs = runs_by_onion
            .entry(v.onion_address.as_str())
            .or_insert_with(|| placement_runs(records));
        let run = runs
            .iter()
            .position(|r| r.first_epoch <= epoch && epoch <= r.last_epoch)
            .expect("every record belongs to a run");
        groups.entry((v.onion_address.as_str(), run)).or_default().push(index);
    }

    let mut relays: BTreeMap<Fingerprint, HsDirRelay> = BTreeMap::new();
    let mut instances = Vec::with_capacity(groups.len());
    let mut candidate_sets: Vec<BTreeSet<Fingerprint>> = Vec::with_capacity(groups.len());
    for ((onion, run_idx), visit_ids) in groups {
        let runs = &runs_by_onion[onion];
        let run = &runs[run_idx];
        let mut candidates = BTreeSet::new();
        for earlier in &runs[..=run_idx] {
            for host in earlier.hosts {
                candidates.insert(host.fingerprint);
                relays.entry(host.fingerprint).or_insert_with(|| host.clone());
            }
        }
        instances.push(HonionInstance {
            id: instances.len(),
            onion_address: onion.to_string(),
            first_epoch: run.first_epoch,
            last_epoch: run.last_epoch,
            visit_ids,
        });
        candidate_sets.push(candidates);
    }

    let hsdirs: Vec<HsDirRelay> = relays.into_values().collect();
    let index: HashMap<Fingerprint, usize> = hsdirs.iter().enumerate().map(|(i, r)| (r.fingerprint, i)).collect();
    let adjacency: Vec<Vec<usize>> = candidate_sets
        .into_iter()
        .map(|set| set.iter().map(|f| index[f]).collect())
        .collect();

    let mut hosted: Vec<BTreeSet<&str>> = vec![BTreeSet::new(); hsdirs.len()];
    for p in placements {
        for host in &p.hsdirs {
            if let Some(&h) = index.get(&host.fingerprint) {
                hosted[h].insert(p.onion_address.as_str());
            }
        }
    }
    let mut explained: Vec<BTreeSet<&str>> = vec![BTreeSet::new(); hsdirs.len()];
    for (inst, adj) in instances.iter().zip(&adjacency) {
        for &h in adj {
            explained[h].insert(inst.onion_address.as_str());
        }
    }
    let unvisited_hosted = hosted.iter().zip(&explained).map(|(a, b)| a.len() - b.len()).collect();
    Ok(AttributionGraph {
        hsdirs,
        instances,
        adjacency,
        unvisited_hosted,
    })
}

/// Merges consecutive epochs whose host sets are identical.
fn placement_runs<'a>(records: &[&'a PlacementRecord]) -> Vec<PlacementRun<'a>> {
    let mut runs: Vec<PlacementRun<'a>> = Vec::new();
    for p in records {
        if let Some(last) = runs.last_mut() {
            let same_hosts = last.hosts.len() == p.hsdirs.len()
                && last.hosts.iter().zip(&p.hsdirs).all(|(a, b)| a.fingerprint == b.fingerprint);
            if same_hosts && p.epoch <= last.last_epoch + 1 {
                last.last_epoch = p.epoch;
                continue;
            }
        }
        runs.push(PlacementRun {
            first_epoch: p.epoch,
            last_epoch: p.epoch,
            hosts: &p.hsdirs,
        });
    }
    runs
}

/// Splits `g` into maximal connected subgraphs, dropping components with no
/// honion instance. Components are ordered by their first instance.
pub fn connected_components(g: &AttributionGraph) -> Vec<AttributionGraph> {
    let n_inst = g.instances.len();
    let mut parent: Vec<usize> = (0..n_inst + g.hsdirs.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (i, h) in g.edges() {
        let a = find(&mut parent, i);
        let b = find(&mut parent, n_inst + h);
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut members: BTreeMap<usize, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for i in 0..n_inst {
        let root = find(&mut parent, i);
        members.entry(root).or_default().0.push(i);
    }
    for h in 0..g.hsdirs.len() {
        let root = find(&mut parent, n_inst + h);
        if let Some(entry) = members.get_mut(&root) {
            entry.1.push(h);
        }
    }
    members
        .values()
        .map(|(inst, hsd)| g.subgraph(inst, hsd))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn relay(v: u8) -> HsDirRelay {
        let mut f = [0u8; 20];
        f[19] = v;
        HsDirRelay::new(Fingerprint(f), format!("r{v}"))
    }

    fn placement(onion: &str, epoch: u32, hosts: &[u8]) -> PlacementRecord {
        PlacementRecord {
            onion_address: onion.into(),
            epoch,
            hsdirs: hosts.iter().map(|&v| relay(v)).collect(),
            valid_from: u64::from(epoch) * 100,
            valid_until: u64::from(epoch + 1) * 100,
        }
    }

    fn labels(g: &AttributionGraph, i: usize) -> Vec<String> {
        g.neighbors(i).iter().map(|&h| g.hsdirs()[h].label.clone()).collect()
    }

    #[test]
    fn unvisited_hosted_counts() {
        let ps = [placement("a", 0, &[1, 2]), placement("b", 0, &[2, 3])];
        let g = build_graph(&ps, &[VisitRecord::new("a", 50, "/")]).unwrap();
        let labels: Vec<_> = g.hsdirs().iter().map(|r| r.label.as_str()).collect();
        assert_eq!(labels, ["r1", "r2"]);
        assert_eq!((g.unvisited_hosted(0), g.unvisited_hosted(1)), (Some(0), Some(1)));
        let back = AttributionGraph::from_file(g.to_file()).unwrap();
        assert_eq!(back, g);
        let mut bad = g.to_file();
        bad.unvisited_hosted.push(4);
        assert_eq!(AttributionGraph::from_file(bad), Err(GraphError::BadAnnotation(3)));
    }

    #[test]
    fn single_epoch_single_visit() {
        let g = build_graph(&[placement("a", 0, &[1, 2, 3, 4, 5, 6])], &[VisitRecord::new("a", 50, "/")]).unwrap();
        assert_eq!(g.instances().len(), 1);
        assert_eq!(g.edge_count(), 6);
        g.validate().unwrap();
    }

    #[test]
    fn later_hosts_cannot_explain_earlier_visits() {
        let ps = [placement("a", 1, &[1, 2]), placement("a", 2, &[3, 4]), placement("a", 3, &[5, 6])];
        let g = build_graph(&ps, &[VisitRecord::new("a", 250, "/")]).unwrap();
        assert_eq!(labels(&g, 0), ["r1", "r2", "r3", "r4"]);
        assert!(g.hsdir_index(&relay(5).fingerprint).is_none());
    }

    #[test]
    fn visits_in_different_epochs_clone_the_vertex() {
        let ps = [placement("a", 0, &[1, 2]), placement("a", 1, &[2, 3])];
        let visits = [
            VisitRecord::new("a", 10, "/"),
            VisitRecord::new("a", 150, "/"),
            VisitRecord::new("a", 20, "/robots.txt"),
        ];
        let g = build_graph(&ps, &visits).unwrap();
        assert_eq!(g.instances().len(), 2);
        assert_eq!(labels(&g, 0), ["r1", "r2"]);
        assert_eq!(labels(&g, 1), ["r1", "r2", "r3"]);
        assert_eq!(g.instances()[0].visit_ids, vec![0, 2]);
        assert_eq!(g.instances()[1].visit_ids, vec![1]);
    }

    #[test]
    fn identical_consecutive_placements_merge() {
        let ps = [placement("a", 0, &[1, 2]), placement("a", 1, &[1, 2]), placement("a", 2, &[3])];
        let visits = [VisitRecord::new("a", 10, "/"), VisitRecord::new("a", 150, "/")];
        let g = build_graph(&ps, &visits).unwrap();
        assert_eq!(g.instances().len(), 1);
        assert_eq!((g.instances()[0].first_epoch, g.instances()[0].last_epoch), (0, 1));
    }

    #[test]
    fn orphan_visits_are_errors() {
        let ps = [placement("a", 1, &[1])];
        let err = build_graph(&ps, &[VisitRecord::new("b", 150, "/")]).unwrap_err();
        assert!(matches!(err, GraphError::OrphanVisit { index: 0, .. }));
        let err = build_graph(&ps, &[VisitRecord::new("a", 50, "/")]).unwrap_err();
        assert!(matches!(err, GraphError::OrphanVisit { .. }));
    }

    #[test]
    fn build_is_deterministic_and_sound() {
        let ps = [
            placement("b", 0, &[9, 3]),
            placement("a", 0, &[1, 2]),
            placement("a", 1, &[4, 2]),
            placement("b", 1, &[7]),
        ];
        let visits = [
            VisitRecord::new("b", 120, "/"),
            VisitRecord::new("a", 5, "/"),
            VisitRecord::new("a", 105, "/"),
        ];
        let g = build_graph(&ps, &visits).unwrap();
        assert_eq!(g, build_graph(&ps, &visits).unwrap());
        for (i, inst) in g.instances().iter().enumerate() {
            let earliest = inst.visit_ids.iter().map(|&v| visits[v].timestamp).min().unwrap();
            for &h in g.neighbors(i) {
                let f = g.hsdirs()[h].fingerprint;
                assert!(ps.iter().any(|p| p.onion_address == inst.onion_address
                    && p.valid_from <= earliest
                    && p.hsdirs.iter().any(|r| r.fingerprint == f)));
            }
        }
    }

    #[test]
    fn components_split_and_drop_bare_hsdirs() {
        let hsdirs: Vec<HsDirRelay> = (1..=5).map(relay).collect();
        let inst = |id| HonionInstance {
            id,
            onion_address: format!("h{id}"),
            first_epoch: 0,
            last_epoch: 0,
            visit_ids: vec![],
        };
        // star around r1 (instances 0,1) and star around r3 (instance 2); r5 isolated
        let g = AttributionGraph::from_parts(hsdirs.clone(), vec![inst(0), inst(1), inst(2)], &[(0, 0), (1, 0), (1, 1), (2, 2), (2, 3)])
            .unwrap();
        let comps = connected_components(&g);
        assert_eq!(comps.len(), 2);
        assert_eq!(comps[0].instances().len(), 2);
        assert_eq!(comps[0].hsdirs().len(), 2);
        assert_eq!(comps[1].instances()[0].id, 2);
        let total: usize = comps.iter().map(|c| c.edge_count()).sum();
        assert_eq!(total, g.edge_count());

        let bare = AttributionGraph::from_parts(hsdirs, vec![], &[]).unwrap();
        assert!(connected_components(&bare).is_empty());
    }

    #[test]
    fn from_parts_validates() {
        let err = AttributionGraph::from_parts(vec![relay(1)], vec![], &[(0, 0)]).unwrap_err();
        assert_eq!(err, GraphError::BadEdge { instance: 0, hsdir: 0 });
        let err = AttributionGraph::from_parts(vec![relay(1), relay(1)], vec![], &[]).unwrap_err();
        assert!(matches!(err, GraphError::DuplicateHsdir(_)));
    }

    #[test]
    fn file_and_edge_list_exports() {
        let ps = [placement("a", 0, &[2, 1])];
        let g = build_graph(&ps, &[VisitRecord::new("a", 1, "/")]).unwrap();
        assert_eq!(g.edge_list_text(), "0\tr1\n0\tr2\n");
        let json = serde_json::to_string(&g.to_file()).unwrap();
        let back = AttributionGraph::from_file(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, g);
    }
}
