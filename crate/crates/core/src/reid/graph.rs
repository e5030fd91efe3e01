use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::radar_sim::RadarId;
use crate::tdscan::LocalId;

/// `(radar_id, local_id)` of one per-radar track.
pub type NodeKey = (RadarId, LocalId);

/// Global identity, printed as `P<n>`. Ids are allocated in increasing order
/// and never reused, so a smaller number is an older identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GlobalId(pub u32);

impl fmt::Display for GlobalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}", self.0)
    }
}

impl Serialize for GlobalId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for GlobalId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.strip_prefix('P')
            .and_then(|n| n.parse().ok())
            .map(GlobalId)
            .ok_or_else(|| serde::de::Error::custom(format!("bad global id {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PersistenceParams {
    /// Edges and nodes not refreshed for this long are dropped; dormant nodes
    /// younger than this can be reactivated.
    pub temporal_window_s: f64,
    /// Largest distance between a dormant node and a new detection it absorbs.
    pub proximity_m: f64,
}

impl Default for PersistenceParams {
    fn default() -> Self {
        Self {
            temporal_window_s: 3.0,
            proximity_m: 1.0,
        }
    }
}

impl PersistenceParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.temporal_window_s > 0.0 && self.proximity_m > 0.0) {
            return Err(Error::Config(
                "reid persistence window and proximity must be > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Node {
    first_seen: f64,
    last_seen: f64,
    position: Vec2,
    gid: Option<GlobalId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EdgeKind {
    /// Accepted cross-radar match.
    Match,
    /// A new track that took over a dormant track's identity.
    Persistence,
}

/// Undirected graph of per-radar tracks whose components are identities.
///
/// Match edges stay one-to-one per radar pair: a new match between `a` on
/// radar `m` and `b` on radar `n` replaces any edge linking `a` to another
/// track of `n` or `b` to another track of `m`. Edges and nodes expire when
/// not refreshed within the temporal window.
///
/// Identities are assigned component by component, ordered by the earliest
/// `first_seen` of their members and then by smallest node key. Each
/// component takes the oldest id carried by its members that no earlier
/// component has taken, or a fresh one.
#[derive(Debug, Clone)]
pub struct IdentityGraph {
    params: PersistenceParams,
    nodes: BTreeMap<NodeKey, Node>,
    edges: BTreeMap<(NodeKey, NodeKey), (EdgeKind, f64)>,
    next_gid: u32,
    now: f64,
}

fn edge_key(a: NodeKey, b: NodeKey) -> (NodeKey, NodeKey) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl IdentityGraph {
    pub fn new(params: PersistenceParams) -> Self {
        Self {
            params,
            nodes: BTreeMap::new(),
            edges: BTreeMap::new(),
            next_gid: 1,
            now: f64::NEG_INFINITY,
        }
    }

    pub fn params(&self) -> &PersistenceParams {
        &self.params
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn contains(&self, key: NodeKey) -> bool {
        self.nodes.contains_key(&key)
    }

    pub fn global_id(&self, key: NodeKey) -> Option<GlobalId> {
        self.nodes.get(&key).and_then(|n| n.gid)
    }

    pub fn has_edge(&self, a: NodeKey, b: NodeKey) -> bool {
        self.edges.contains_key(&edge_key(a, b))
    }

    /// Records that track `key` was seen at global `position` at time `t`.
    pub fn observe(&mut self, key: NodeKey, position: Vec2, t: f64) -> Result<()> {
        if t < self.now {
            return Err(Error::Data(format!("observation at {t} s after time {} s", self.now)));
        }
        self.now = t;
        let node = self.nodes.entry(key).or_insert(Node {
            first_seen: t,
            last_seen: t,
            position,
            gid: None,
        });
        node.last_seen = t;
        node.position = position;
        Ok(())
    }

    /// Whether `key` was first seen at the current time.
    pub fn is_new(&self, key: NodeKey) -> bool {
        self.nodes.get(&key).is_some_and(|n| n.first_seen == self.now && n.gid.is_none())
    }

    /// Attaches a newly seen track to the identity of the nearest dormant
    /// track (not seen at the current time, seen within the temporal window
    /// and within `proximity_m`). Ties go to the older identity.
    pub fn reactivate(&mut self, key: NodeKey, position: Vec2, t: f64) -> Option<GlobalId> {
        let window = self.params.temporal_window_s;
        let mut best: Option<(f64, GlobalId, NodeKey)> = None;
        for (&k, n) in &self.nodes {
            let Some(gid) = n.gid else { continue };
            if k == key || n.last_seen >= t || t - n.last_seen > window {
                continue;
            }
            let d = n.position.distance(position);
            if d > self.params.proximity_m {
                continue;
            }
            let better = match best {
                None => true,
                Some((bd, bg, _)) => d < bd || (d == bd && gid < bg),
            };
            if better {
                best = Some((d, gid, k));
            }
        }
        let (_, gid, dormant) = best?;
        let node = self.nodes.get_mut(&key)?;
        node.gid = Some(gid);
        self.edges.insert(edge_key(key, dormant), (EdgeKind::Persistence, t));
        Some(gid)
    }

    /// Adds the accepted matches of one time step, drops stale edges and
    /// nodes, and reassigns identities.
    pub fn update_graph(&mut self, matches: &[(NodeKey, NodeKey)], t: f64) -> Result<()> {
        let mut used: BTreeSet<(NodeKey, RadarId)> = BTreeSet::new();
        for &(a, b) in matches {
            if a.0 == b.0 {
                return Err(Error::Data(format!("match between two tracks of radar {}", a.0)));
            }
            for k in [a, b] {
                if !self.nodes.contains_key(&k) {
                    return Err(Error::Data(format!("match references unknown track ({}, {})", k.0, k.1)));
                }
            }
            if !used.insert((a, b.0)) || !used.insert((b, a.0)) {
                return Err(Error::Data(format!(
                    "track ({}, {}) or ({}, {}) matched twice for one radar pair",
                    a.0, a.1, b.0, b.1
                )));
            }
        }
        for &(a, b) in matches {
            self.edges.retain(|&(x, y), (kind, _)| {
                if *kind != EdgeKind::Match {
                    return true;
                }
                let conflicts = |p: NodeKey, q: NodeKey| {
                    (p == a && q.0 == b.0 && q != b) || (p == b && q.0 == a.0 && q != a)
                };
                !(conflicts(x, y) || conflicts(y, x))
            });
            self.edges.insert(edge_key(a, b), (EdgeKind::Match, t));
        }
        self.now = self.now.max(t);
        self.expire(t);
        self.assign_ids();
        Ok(())
    }

    fn expire(&mut self, t: f64) {
        let window = self.params.temporal_window_s;
        self.nodes.retain(|_, n| t - n.last_seen <= window);
        let nodes = &self.nodes;
        self.edges
            .retain(|(a, b), (_, ts)| t - *ts <= window && nodes.contains_key(a) && nodes.contains_key(b));
    }

    /// Connected components, each sorted by node key, in assignment order.
    fn components(&self) -> Vec<Vec<NodeKey>> {
        let keys: Vec<NodeKey> = self.nodes.keys().copied().collect();
        let index: BTreeMap<NodeKey, usize> = keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
        let mut parent: Vec<usize> = (0..keys.len()).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for (a, b) in self.edges.keys() {
            let (ra, rb) = (find(&mut parent, index[a]), find(&mut parent, index[b]));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
        let mut groups: BTreeMap<usize, Vec<NodeKey>> = BTreeMap::new();
        for (i, k) in keys.iter().enumerate() {
            let root = find(&mut parent, i);
            groups.entry(root).or_default().push(*k);
        }
        let mut comps: Vec<Vec<NodeKey>> = groups.into_values().collect();
        let first_seen = |c: &Vec<NodeKey>| {
            c.iter()
                .map(|k| self.nodes[k].first_seen)
                .fold(f64::INFINITY, f64::min)
        };
        comps.sort_by(|a, b| first_seen(a).total_cmp(&first_seen(b)).then_with(|| a[0].cmp(&b[0])));
        comps
    }

    fn assign_ids(&mut self) {
        let mut taken = BTreeSet::new();
        for comp in self.components() {
            let gid = comp
                .iter()
                .filter_map(|k| self.nodes[k].gid)
                .filter(|g| !taken.contains(g))
                .min()
                .unwrap_or_else(|| {
                    let g = GlobalId(self.next_gid);
                    self.next_gid += 1;
                    g
                });
            taken.insert(gid);
            for k in &comp {
                self.nodes.get_mut(k).expect("component member").gid = Some(gid);
            }
        }
    }

    /// `(global id, members)` for every live identity, by id.
    pub fn identities(&self) -> Vec<(GlobalId, Vec<NodeKey>)> {
        let mut by_id: BTreeMap<GlobalId, Vec<NodeKey>> = BTreeMap::new();
        for (k, n) in &self.nodes {
            if let Some(g) = n.gid {
                by_id.entry(g).or_default().push(*k);
            }
        }
        by_id.into_iter().collect()
    }
}
