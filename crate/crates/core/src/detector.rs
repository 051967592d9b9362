//! Minimal explaining sets of HSDirs.
//!
//! Any set of relays that touches every visited honion instance explains the
//! visits; its minimum size is a lower bound on the number of snooping HSDirs.
//! This is set cover, so we provide the greedy `ln|HO| + 1` heuristic and an
//! exact branch-and-bound over relay inclusion variables.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::time::Instant;

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{connected_components, AttributionGraph};
use crate::ring::{Fingerprint, HsDirRelay};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DetectError {
    #[error("honion instance {0} has no candidate hsdir")]
    UncoverableVertex(usize),
    #[error("component with {hsdirs} hsdirs exceeds the exact-search cap of {cap}")]
    ComponentTooLarge { hsdirs: usize, cap: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Greedy,
    Exact,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DetectorConfig {
    /// Largest component (in hsdirs) searched exhaustively.
    pub component_cap: usize,
    /// Use the greedy cover for components above the cap instead of failing.
    pub allow_fallback: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            component_cap: 40,
            allow_fallback: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub method: Method,
    /// Sorted by fingerprint.
    pub explaining_set: Vec<HsDirRelay>,
    /// Certified lower bound on the minimum cover size. Equals the set size
    /// whenever `proven_optimal` holds.
    pub lower_bound: usize,
    pub proven_optimal: bool,
    /// Components above the cap that were answered greedily.
    pub fallback_components: usize,
    /// Instances adjacent to each member of the explaining set.
    pub per_relay_explained: BTreeMap<Fingerprint, usize>,
    pub runtime_secs: Option<f64>,
}

impl DetectionResult {
    pub fn size(&self) -> usize {
        self.explaining_set.len()
    }

    /// True when every instance has a neighbour in the explaining set.
    pub fn covers(&self, g: &AttributionGraph) -> bool {
        let chosen: Vec<bool> = g
            .hsdirs()
            .iter()
            .map(|r| self.explaining_set.iter().any(|c| c.fingerprint == r.fingerprint))
            .collect();
        (0..g.instances().len()).all(|i| g.neighbors(i).iter().any(|&h| chosen[h]))
    }
}

/// Per-graph index structures shared by both solvers.
struct CoverInstance {
    /// hsdir -> instances it covers
    covers: Vec<FixedBitSet>,
    /// instance -> candidate hsdirs
    candidates: Vec<Vec<usize>>,
    n_instances: usize,
}

impl CoverInstance {
    fn new(g: &AttributionGraph) -> Result<Self, DetectError> {
        let n_instances = g.instances().len();
        if let Some(i) = (0..n_instances).find(|&i| g.neighbors(i).is_empty()) {
            return Err(DetectError::UncoverableVertex(g.instances()[i].id));
        }
        let mut covers = vec![FixedBitSet::with_capacity(n_instances); g.hsdirs().len()];
        for (i, h) in g.edges() {
            covers[h].insert(i);
        }
        Ok(CoverInstance {
            covers,
            candidates: (0..n_instances).map(|i| g.neighbors(i).to_vec()).collect(),
            n_instances,
        })
    }

    fn all_instances(&self) -> FixedBitSet {
        let mut all = FixedBitSet::with_capacity(self.n_instances);
        all.insert_range(..);
        all
    }

    /// Highest-degree-first cover; ties go to the lower index, which is the
    /// lower fingerprint because hsdirs are kept sorted.
    fn greedy(&self) -> Vec<usize> {
        let mut remaining: Vec<usize> = self.covers.iter().map(|c| c.count_ones(..)).collect();
        let mut heap: BinaryHeap<(usize, Reverse<usize>)> = remaining
            .iter()
            .enumerate()
            .filter(|&(_, &d)| d > 0)
            .map(|(h, &d)| (d, Reverse(h)))
            .collect();
        let mut covered = FixedBitSet::with_capacity(self.n_instances);
        let mut picked = Vec::new();
        while let Some((degree, Reverse(h))) = heap.pop() {
            if degree != remaining[h] {
                // stale entry; degrees only decrease
                if remaining[h] > 0 {
                    heap.push((remaining[h], Reverse(h)));
                }
                continue;
            }
            picked.push(h);
            for i in self.covers[h].ones() {
                if covered.put(i) {
                    continue;
                }
                for &other in &self.candidates[i] {
                    remaining[other] -= 1;
                }
            }
        }
        picked.sort_unstable();
        picked
    }

    /// Size of a set of uncovered instances with pairwise disjoint allowed
    /// neighbourhoods; each needs its own relay.
    fn packing_bound(&self, uncovered: &FixedBitSet, allowed: &[bool]) -> usize {
        let mut order: Vec<(usize, usize)> = uncovered
            .ones()
            .map(|i| (self.candidates[i].iter().filter(|&&h| allowed[h]).count(), i))
            .collect();
        order.sort_unstable();
        let mut used = vec![false; allowed.len()];
        let mut count = 0;
        for (_, i) in order {
            let nbrs = self.candidates[i].iter().filter(|&&h| allowed[h]);
            if nbrs.clone().any(|&h| used[h]) {
                continue;
            }
            for &h in nbrs {
                used[h] = true;
            }
            count += 1;
        }
        count
    }
}

struct Search<'a> {
    inst: &'a CoverInstance,
    best: Vec<usize>,
    chosen: Vec<usize>,
    allowed: Vec<bool>,
}

impl Search<'_> {
    fn run(&mut self, uncovered: FixedBitSet) {
        let remaining = uncovered.count_ones(..);
        if remaining == 0 {
            if self.chosen.len() < self.best.len() {
                self.best = self.chosen.clone();
                self.best.sort_unstable();
            }
            return;
        }
        if self.chosen.len() + 1 >= self.best.len() {
            return;
        }

        let mut forced = None;
        for i in uncovered.ones() {
            let mut options = self.inst.candidates[i].iter().filter(|&&h| self.allowed[h]);
            match (options.next(), options.next()) {
                (None, _) => return,
                (Some(&h), None) => {
                    forced = Some(h);
                    break;
                }
                _ => {}
            }
        }

        let mut branch = None;
        let mut max_gain = 0;
        for (h, cover) in self.inst.covers.iter().enumerate() {
            if !self.allowed[h] {
                continue;
            }
            let gain = cover.intersection_count(&uncovered);
            if gain > max_gain {
                max_gain = gain;
                branch = Some(h);
            }
        }
        let Some(top) = branch else { return };

        let by_degree = remaining.div_ceil(max_gain);
        let bound = by_degree.max(self.inst.packing_bound(&uncovered, &self.allowed));
        if self.chosen.len() + bound >= self.best.len() {
            return;
        }

        let h = forced.unwrap_or(top);
        let mut rest = uncovered.clone();
        rest.difference_with(&self.inst.covers[h]);
        self.chosen.push(h);
        self.allowed[h] = false;
        self.run(rest);
        self.chosen.pop();
        if forced.is_none() {
            // exclusion branch: h stays disallowed while exploring it
            self.run(uncovered);
        }
        self.allowed[h] = true;
    }
}

/// Exact-preserving reductions, applied until none fires: an instance with a
/// single candidate forces that relay; an instance whose candidates include
/// all of another instance's is dropped; a relay covering a subset of another
/// relay's instances is dropped (equal sets keep the lower index). Returns the
/// forced relays and the remaining kernel.
fn reduce(g: &AttributionGraph) -> (Vec<usize>, AttributionGraph) {
    let n_h = g.hsdirs().len();
    let n_i = g.instances().len();
    let mut inst_alive = vec![true; n_i];
    let mut relay_alive = vec![true; n_h];
    let mut forced = Vec::new();
    let mut nbrs: Vec<FixedBitSet> = (0..n_i)
        .map(|i| {
            let mut b = FixedBitSet::with_capacity(n_h);
            b.extend(g.neighbors(i).iter().copied());
            b
        })
        .collect();
    let by_hsdir = g.hsdir_neighbors();
    loop {
        let mut changed = false;

        for i in 0..n_i {
            if inst_alive[i] && nbrs[i].count_ones(..) == 1 {
                let h = nbrs[i].ones().next().expect("one candidate");
                forced.push(h);
                relay_alive[h] = false;
                for &j in &by_hsdir[h] {
                    inst_alive[j] = false;
                }
                for b in nbrs.iter_mut() {
                    b.set(h, false);
                }
                changed = true;
            }
        }

        let mut order: Vec<usize> = (0..n_i).filter(|&i| inst_alive[i]).collect();
        order.sort_by_key(|&i| (nbrs[i].count_ones(..), i));
        for (k, &i) in order.iter().enumerate() {
            if !inst_alive[i] {
                continue;
            }
            for &j in &order[k + 1..] {
                if inst_alive[j] && nbrs[i].is_subset(&nbrs[j]) {
                    inst_alive[j] = false;
                    changed = true;
                }
            }
        }

        let covers: Vec<FixedBitSet> = (0..n_h)
            .map(|h| {
                let mut b = FixedBitSet::with_capacity(n_i);
                if relay_alive[h] {
                    b.extend(by_hsdir[h].iter().copied().filter(|&i| inst_alive[i]));
                }
                b
            })
            .collect();
        for r in 0..n_h {
            if !relay_alive[r] {
                continue;
            }
            let dominated = covers[r].is_clear()
                || (0..n_h).any(|s| {
                    s != r
                        && relay_alive[s]
                        && covers[r].is_subset(&covers[s])
                        && (s < r || !covers[s].is_subset(&covers[r]))
                });
            if dominated {
                relay_alive[r] = false;
                for i in &by_hsdir[r] {
                    nbrs[*i].set(r, false);
                }
                changed = true;
            }
        }

        if !changed {
            break;
        }
    }
    let inst: Vec<usize> = (0..n_i).filter(|&i| inst_alive[i]).collect();
    let relays: Vec<usize> = (0..n_h).filter(|&h| relay_alive[h]).collect();
    forced.sort_unstable();
    (forced, g.subgraph(&inst, &relays))
}

/// Among covers of the same size, prefers relays that left fewer of their
/// hosted honions unvisited. A member is replaced by an outside relay when
/// that relay also covers every instance only the member covered and has a
/// strictly lower count. No-op when the graph carries no counts.
fn prefer_consistent_members(g: &AttributionGraph, chosen: &mut [usize]) {
    if g.unvisited_hosted(0).is_none() {
        return;
    }
    let score = |h: usize| g.unvisited_hosted(h).unwrap_or(0);
    let by_hsdir = g.hsdir_neighbors();
    let mut times_covered = vec![0usize; g.instances().len()];
    for &h in chosen.iter() {
        for &i in &by_hsdir[h] {
            times_covered[i] += 1;
        }
    }
    loop {
        let mut improved = false;
        for k in 0..chosen.len() {
            let member = chosen[k];
            let private: Vec<usize> = by_hsdir[member].iter().copied().filter(|&i| times_covered[i] == 1).collect();
            let Some((&first, rest)) = private.split_first() else { continue };
            let best = g
                .neighbors(first)
                .iter()
                .copied()
                .filter(|h| !chosen.contains(h) && rest.iter().all(|&i| g.neighbors(i).binary_search(h).is_ok()))
                .min_by_key(|&h| (score(h), h));
            if let Some(h) = best.filter(|&h| score(h) < score(member)) {
                for &i in &by_hsdir[member] {
                    times_covered[i] -= 1;
                }
                for &i in &by_hsdir[h] {
                    times_covered[i] += 1;
                }
                chosen[k] = h;
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
}

fn explained_counts(g: &AttributionGraph, set: &[usize]) -> BTreeMap<Fingerprint, usize> {
    let by_hsdir = g.hsdir_neighbors();
    set.iter().map(|&h| (g.hsdirs()[h].fingerprint, by_hsdir[h].len())).collect()
}

fn finish(
    g: &AttributionGraph,
    method: Method,
    mut set: Vec<HsDirRelay>,
    lower_bound: usize,
    fallback_components: usize,
    started: Instant,
) -> DetectionResult {
    set.sort_by_key(|a| a.fingerprint);
    let idx: Vec<usize> = set
        .iter()
        .map(|r| g.hsdir_index(&r.fingerprint).expect("member of the graph"))
        .collect();
    DetectionResult {
        method,
        proven_optimal: lower_bound == set.len(),
        explaining_set: set,
        lower_bound,
        fallback_components,
        per_relay_explained: explained_counts(g, &idx),
        runtime_secs: Some(started.elapsed().as_secs_f64()),
    }
}

/// Algorithm: repeatedly take the relay adjacent to the most uncovered
/// instances until every instance is covered.
pub fn greedy_min_cover(g: &AttributionGraph) -> Result<DetectionResult, DetectError> {
    let started = Instant::now();
    let inst = CoverInstance::new(g)?;
    let picked = inst.greedy();
    let bound = inst.packing_bound(&inst.all_instances(), &vec![true; g.hsdirs().len()]);
    let set = picked.iter().map(|&h| g.hsdirs()[h].clone()).collect();
    Ok(finish(g, Method::Greedy, set, bound, 0, started))
}

pub fn exact_min_cover(g: &AttributionGraph) -> Result<DetectionResult, DetectError> {
    exact_min_cover_with(g, &DetectorConfig::default())
}

/// Reduces the graph, then solves each connected component of the kernel
/// separately and unions the answers with the forced relays. The component
/// cap applies to kernel components. Ties between covers of equal size are
/// broken towards relays that ignored fewer of the honions they hosted.
pub fn exact_min_cover_with(g: &AttributionGraph, cfg: &DetectorConfig) -> Result<DetectionResult, DetectError> {
    let started = Instant::now();
    CoverInstance::new(g)?;
    let mut set = Vec::new();
    let mut lower_bound = 0;
    let mut fallbacks = 0;
    let (forced, kernel) = reduce(g);
    lower_bound += forced.len();
    set.extend(forced.iter().map(|&h| g.hsdirs()[h].clone()));
    for comp in connected_components(&kernel) {
        let inst = CoverInstance::new(&comp)?;
        let incumbent = inst.greedy();
        let allowed = vec![true; comp.hsdirs().len()];
        let bound = inst.packing_bound(&inst.all_instances(), &allowed);
        let chosen = if bound == incumbent.len() {
            incumbent
        } else if comp.hsdirs().len() <= cfg.component_cap {
            let mut search = Search {
                inst: &inst,
                best: incumbent,
                chosen: Vec::new(),
                allowed,
            };
            search.run(inst.all_instances());
            search.best
        } else if cfg.allow_fallback {
            log::warn!(
                "component with {} hsdirs exceeds cap {}; using greedy cover of size {} (lower bound {})",
                comp.hsdirs().len(),
                cfg.component_cap,
                incumbent.len(),
                bound
            );
            fallbacks += 1;
            lower_bound += bound;
            set.extend(incumbent.iter().map(|&h| comp.hsdirs()[h].clone()));
            continue;
        } else {
            return Err(DetectError::ComponentTooLarge {
                hsdirs: comp.hsdirs().len(),
                cap: cfg.component_cap,
            });
        };
        lower_bound += chosen.len();
        set.extend(chosen.iter().map(|&h| comp.hsdirs()[h].clone()));
    }
    let mut idx: Vec<usize> = set
        .iter()
        .map(|r| g.hsdir_index(&r.fingerprint).expect("member of the graph"))
        .collect();
    prefer_consistent_members(g, &mut idx);
    let set = idx.iter().map(|&h| g.hsdirs()[h].clone()).collect();
    Ok(finish(g, Method::Exact, set, lower_bound, fallbacks, started))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Suspect {
    pub relay: HsDirRelay,
    pub explained_instances: usize,
    pub explained_visits: usize,
    pub high_confidence: bool,
}

/// Members of the explaining set, most explanatory first.
pub fn rank_suspects(g: &AttributionGraph, r: &DetectionResult) -> Vec<Suspect> {
    let by_hsdir = g.hsdir_neighbors();
    let mut out: Vec<Suspect> = r
        .explaining_set
        .iter()
        .map(|relay| {
            let explained = g.hsdir_index(&relay.fingerprint).map(|h| &by_hsdir[h][..]).unwrap_or(&[]);
            let visits = explained.iter().map(|&i| g.instances()[i].visit_ids.len()).sum();
            Suspect {
                relay: relay.clone(),
                explained_instances: explained.len(),
                explained_visits: visits,
                high_confidence: explained.len() >= 2,
            }
        })
        .collect();
    out.sort_by(|a, b| {
        b.explained_instances
            .cmp(&a.explained_instances)
            .then(b.explained_visits.cmp(&a.explained_visits))
            .then(a.relay.fingerprint.cmp(&b.relay.fingerprint))
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::HonionInstance;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn relay(v: u8) -> HsDirRelay {
        let mut f = [0u8; 20];
        f[19] = v;
        HsDirRelay::new(Fingerprint(f), format!("r{v}"))
    }

    fn instance(id: usize, visits: usize) -> HonionInstance {
        HonionInstance {
            id,
            onion_address: format!("h{id}"),
            first_epoch: 0,
            last_epoch: 0,
            visit_ids: (0..visits).collect(),
        }
    }

    /// `sets[h]` lists the instances relay `h` is adjacent to.
    fn graph(n_instances: usize, sets: &[&[usize]]) -> AttributionGraph {
        let hsdirs = (0..sets.len()).map(|h| relay(h as u8)).collect();
        let instances = (0..n_instances).map(|i| instance(i, 1)).collect();
        let edges: Vec<(usize, usize)> =
            sets.iter().enumerate().flat_map(|(h, s)| s.iter().map(move |&i| (i, h))).collect();
        AttributionGraph::from_parts(hsdirs, instances, &edges).unwrap()
    }

    fn labels(r: &DetectionResult) -> Vec<&str> {
        r.explaining_set.iter().map(|x| x.label.as_str()).collect()
    }

    /// Minimum cover size by trying every subset in order of size.
    fn brute_force(g: &AttributionGraph) -> usize {
        let n = g.hsdirs().len();
        let masks: Vec<u32> = (0..g.instances().len())
            .map(|i| g.neighbors(i).iter().fold(0u32, |m, &h| m | (1 << h)))
            .collect();
        (0u32..1 << n)
            .filter(|&s| masks.iter().all(|&m| m & s != 0))
            .map(|s| s.count_ones() as usize)
            .min()
            .expect("full set covers a valid graph")
    }

    fn random_graph(rng: &mut ChaCha8Rng, max_h: usize, max_i: usize) -> AttributionGraph {
        let n_h = rng.gen_range(1..=max_h);
        let n_i = rng.gen_range(0..=max_i);
        let hsdirs = (0..n_h).map(|h| relay(h as u8)).collect();
        let instances = (0..n_i).map(|i| instance(i, rng.gen_range(1..4))).collect();
        let mut edges = Vec::new();
        for i in 0..n_i {
            let deg = rng.gen_range(1..=n_h.min(6));
            for _ in 0..deg {
                edges.push((i, rng.gen_range(0..n_h)));
            }
        }
        AttributionGraph::from_parts(hsdirs, instances, &edges).unwrap()
    }

    #[test]
    fn star_has_single_center() {
        // r0 adjacent to all 5 instances, r1..r10 each to one
        let sets: Vec<Vec<usize>> = std::iter::once((0..5).collect())
            .chain((0..10).map(|k| vec![k % 5]))
            .collect();
        let refs: Vec<&[usize]> = sets.iter().map(Vec::as_slice).collect();
        let g = graph(5, &refs);
        for r in [greedy_min_cover(&g).unwrap(), exact_min_cover(&g).unwrap()] {
            assert_eq!(labels(&r), ["r0"]);
            assert_eq!(r.lower_bound, 1);
            assert!(r.proven_optimal);
            assert!(r.covers(&g));
        }
    }

    #[test]
    fn empty_graph_has_empty_cover() {
        let g = graph(0, &[&[], &[]]);
        assert!(greedy_min_cover(&g).unwrap().explaining_set.is_empty());
        let r = exact_min_cover(&g).unwrap();
        assert!(r.explaining_set.is_empty());
        assert_eq!(r.lower_bound, 0);
    }

    // Instances 0..6; A={0,1,2}, B={3,4,5}, C={1,2,4,5}, plus four singletons.
    fn greedy_trap() -> AttributionGraph {
        graph(6, &[&[0, 1, 2], &[3, 4, 5], &[1, 2, 4, 5], &[0], &[3], &[1], &[5]])
    }

    #[test]
    fn greedy_can_be_suboptimal() {
        let g = greedy_trap();
        assert_eq!(brute_force(&g), 2);
        let greedy = greedy_min_cover(&g).unwrap();
        assert_eq!(greedy.size(), 3);
        assert!(!greedy.proven_optimal);
        assert!(greedy.lower_bound <= 2);
        let exact = exact_min_cover(&g).unwrap();
        assert_eq!(labels(&exact), ["r0", "r1"]);
        assert!(exact.proven_optimal);
        assert!(exact.covers(&g));
    }

    #[test]
    fn greedy_ties_prefer_lowest_fingerprint() {
        let g = graph(2, &[&[0], &[0, 1], &[0, 1]]);
        assert_eq!(labels(&greedy_min_cover(&g).unwrap()), ["r1"]);
        assert_eq!(labels(&exact_min_cover(&g).unwrap()), ["r1"]);
    }

    #[test]
    fn ties_prefer_relays_that_visited_what_they_hosted() {
        let g = graph(2, &[&[0, 1], &[0, 1]]);
        assert_eq!(labels(&exact_min_cover(&g).unwrap()), ["r0"]);
        let mut file = g.to_file();
        file.unvisited_hosted = vec![5, 0];
        let g = AttributionGraph::from_file(file).unwrap();
        let r = exact_min_cover(&g).unwrap();
        assert_eq!(labels(&r), ["r1"]);
        assert!(r.proven_optimal);
        assert_eq!(labels(&greedy_min_cover(&g).unwrap()), ["r0"]);
    }

    #[test]
    fn uncoverable_vertex_is_an_error() {
        let g = graph(2, &[&[0]]);
        assert_eq!(greedy_min_cover(&g), Err(DetectError::UncoverableVertex(1)));
        assert_eq!(exact_min_cover(&g), Err(DetectError::UncoverableVertex(1)));
    }

    fn seven_cycle() -> AttributionGraph {
        graph(7, &[&[0, 1], &[1, 2], &[2, 3], &[3, 4], &[4, 5], &[5, 6], &[6, 0]])
    }

    #[test]
    fn reductions_solve_dominated_graphs_under_any_cap() {
        let cfg = DetectorConfig {
            component_cap: 1,
            allow_fallback: false,
        };
        let r = exact_min_cover_with(&greedy_trap(), &cfg).unwrap();
        assert_eq!(labels(&r), ["r0", "r1"]);
        assert!(r.proven_optimal);
        assert_eq!(r.fallback_components, 0);
    }

    #[test]
    fn cap_falls_back_or_fails() {
        // odd cycle: nothing reduces and the packing bound (3) is below 4
        let g = seven_cycle();
        assert_eq!(brute_force(&g), 4);
        assert_eq!(exact_min_cover(&g).unwrap().size(), 4);
        let cfg = DetectorConfig {
            component_cap: 3,
            allow_fallback: true,
        };
        let r = exact_min_cover_with(&g, &cfg).unwrap();
        assert!(r.covers(&g));
        assert_eq!(r.fallback_components, 1);
        assert!(!r.proven_optimal);
        assert_eq!(r.lower_bound, 3);
        let strict = DetectorConfig {
            allow_fallback: false,
            ..cfg
        };
        assert_eq!(
            exact_min_cover_with(&g, &strict),
            Err(DetectError::ComponentTooLarge { hsdirs: 7, cap: 3 })
        );
    }

    #[test]
    fn rank_orders_and_flags() {
        let mut g = graph(6, &[&[0, 1, 2, 3, 4], &[5], &[0]]);
        let r = exact_min_cover(&g).unwrap();
        let ranked = rank_suspects(&g, &r);
        assert_eq!(ranked.len(), 2);
        assert_eq!((ranked[0].relay.label.as_str(), ranked[0].explained_instances), ("r0", 5));
        assert!(ranked[0].high_confidence);
        assert_eq!((ranked[1].relay.label.as_str(), ranked[1].explained_instances), ("r1", 1));
        assert!(!ranked[1].high_confidence);

        g = graph(7, &[&[0, 1, 2, 3, 4, 5, 6]]);
        let r = greedy_min_cover(&g).unwrap();
        let ranked = rank_suspects(&g, &r);
        assert_eq!(ranked.len(), 1);
        assert_eq!(ranked[0].explained_visits, 7);
        assert!(ranked[0].high_confidence);
    }

    #[test]
    fn rank_ties_use_visits_then_fingerprint() {
        let hsdirs = vec![relay(1), relay(2), relay(3)];
        let instances = vec![instance(0, 1), instance(1, 5), instance(2, 1)];
        let g = AttributionGraph::from_parts(hsdirs, instances, &[(0, 0), (1, 1), (2, 2)]).unwrap();
        let r = exact_min_cover(&g).unwrap();
        let order: Vec<_> = rank_suspects(&g, &r).into_iter().map(|s| s.relay.label).collect();
        assert_eq!(order, ["r2", "r1", "r3"]);
    }

    #[test]
    fn exact_matches_brute_force_on_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..300 {
            let g = random_graph(&mut rng, 12, 20);
            let exact = exact_min_cover(&g).unwrap();
            assert_eq!(exact.size(), brute_force(&g));
            assert!(exact.covers(&g));
            assert!(exact.proven_optimal);
            let greedy = greedy_min_cover(&g).unwrap();
            assert!(greedy.covers(&g));
            assert!(greedy.size() >= exact.size());
            assert!(greedy.lower_bound <= exact.size());
        }
    }

    #[test]
    fn component_additivity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let g = random_graph(&mut rng, 12, 12);
            let whole = brute_force(&g);
            let parts: usize = connected_components(&g).iter().map(brute_force).sum();
            assert_eq!(whole, parts);
            assert_eq!(exact_min_cover(&g).unwrap().size(), whole);
        }
    }

    proptest! {
        #[test]
        fn approximation_ordering(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_graph(&mut rng, 15, 25);
            let exact = exact_min_cover(&g).unwrap().size();
            let greedy = greedy_min_cover(&g).unwrap().size();
            let n = g.instances().len().max(1) as f64;
            prop_assert!(exact <= greedy);
            prop_assert!(greedy as f64 <= (n.ln() + 1.0) * exact as f64 + 1e-9);
        }

        #[test]
        fn solvers_are_deterministic(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_graph(&mut rng, 15, 25);
            let strip = |mut r: DetectionResult| { r.runtime_secs = None; r };
            prop_assert_eq!(strip(exact_min_cover(&g).unwrap()), strip(exact_min_cover(&g).unwrap()));
            prop_assert_eq!(strip(greedy_min_cover(&g).unwrap()), strip(greedy_min_cover(&g).unwrap()));
        }
    }
}
