//! Wired backbone, access points and their MAGs.
//!
//! The default graph is a tree rooted at the backbone node that hosts the
//! LMA:
//!
//! ```text
//! CN ── B0/LMA ─┬─ B1 ─┬─ B3 ── Wi-Fi 1
//!               │      └─ LTE
//!               └─ B2 ─┬─ B4 ── Wi-Fi 2
//!                      └─ Wi-Fi 3
//! ```

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::ids::PoaId;
use crate::mihf::Technology;

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Cn,
    Backbone,
    /// Access point with its MAG.
    Access(PoaId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub name: String,
    pub kind: NodeKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub a: NodeId,
    pub b: NodeId,
    pub latency: f64,
    pub capacity_bps: f64,
}

impl Link {
    pub fn transfer_time(&self, bytes: u32) -> f64 {
        self.latency + bytes as f64 * 8.0 / self.capacity_bps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessPoint {
    pub poa: PoaId,
    pub technology: Technology,
    pub position: (f64, f64),
    pub node: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub link_latency: f64,
    pub link_capacity_bps: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self { link_latency: 0.002, link_capacity_bps: 100e6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub nodes: Vec<Node>,
    pub links: Vec<Link>,
    pub lma: NodeId,
    pub cn: NodeId,
    pub lte: AccessPoint,
    pub wifi: Vec<AccessPoint>,
    pub map_extent: (f64, f64),
}

/// POA of the LTE access point.
pub const LTE_POA: PoaId = PoaId(0);

impl Topology {
    /// Builds the default graph for the given access point positions.
    /// Wi-Fi POAs are numbered from 1 in the order given.
    pub fn standard(backbone: BackboneConfig, lte_position: (f64, f64), wifi_positions: &[(f64, f64)], map_extent: (f64, f64)) -> Self {
        let mut nodes = vec![Node { name: "CN".into(), kind: NodeKind::Cn }];
        for i in 0..5 {
            nodes.push(Node { name: format!("B{i}"), kind: NodeKind::Backbone });
        }
        let b = |i: usize| 1 + i;
        let mut links = Vec::new();
        let mut wire = |a: NodeId, c: NodeId| {
            links.push(Link { a, b: c, latency: backbone.link_latency, capacity_bps: backbone.link_capacity_bps })
        };
        wire(0, b(0));
        wire(b(0), b(1));
        wire(b(0), b(2));
        wire(b(1), b(3));
        wire(b(2), b(4));
        let lte_node = nodes.len();
        nodes.push(Node { name: "LTE".into(), kind: NodeKind::Access(LTE_POA) });
        wire(b(1), lte_node);
        // Wi-Fi APs hang off B3, B4, B2, then round-robin.
        let parents = [b(3), b(4), b(2)];
        let mut wifi = Vec::new();
        for (i, pos) in wifi_positions.iter().enumerate() {
            let poa = PoaId(i as u32 + 1);
            let node = nodes.len();
            nodes.push(Node { name: format!("WIFI{}", i + 1), kind: NodeKind::Access(poa) });
            wire(parents[i % parents.len()], node);
            wifi.push(AccessPoint { poa, technology: Technology::Wave80211p, position: *pos, node });
        }
        let lte = AccessPoint { poa: LTE_POA, technology: Technology::Lte, position: lte_position, node: lte_node };
        Self { nodes, links, lma: b(0), cn: 0, lte, wifi, map_extent }
    }

    pub fn access_points(&self) -> impl Iterator<Item = &AccessPoint> {
        std::iter::once(&self.lte).chain(self.wifi.iter())
    }

    pub fn access_point(&self, poa: PoaId) -> Option<&AccessPoint> {
        self.access_points().find(|a| a.poa == poa)
    }

    fn neighbours(&self, n: NodeId) -> impl Iterator<Item = (usize, NodeId)> + '_ {
        self.links.iter().enumerate().filter_map(move |(i, l)| {
            if l.a == n {
                Some((i, l.b))
            } else if l.b == n {
                Some((i, l.a))
            } else {
                None
            }
        })
    }

    /// Links on the shortest path from `from` to `to`, in order.
    pub fn path(&self, from: NodeId, to: NodeId) -> Option<Vec<usize>> {
        let mut prev: BTreeMap<NodeId, (NodeId, usize)> = BTreeMap::new();
        let mut queue = VecDeque::from([from]);
        let mut seen = vec![false; self.nodes.len()];
        seen[from] = true;
        while let Some(n) = queue.pop_front() {
            if n == to {
                let mut out = Vec::new();
                let mut cur = to;
                while cur != from {
                    let (p, l) = prev[&cur];
                    out.push(l);
                    cur = p;
                }
                out.reverse();
                return Some(out);
            }
            for (l, m) in self.neighbours(n) {
                if !seen[m] {
                    seen[m] = true;
                    prev.insert(m, (n, l));
                    queue.push_back(m);
                }
            }
        }
        None
    }

    /// Sum of latency plus serialisation time over a path.
    pub fn path_delay(&self, path: &[usize], bytes: u32) -> f64 {
        path.iter().map(|l| self.links[*l].transfer_time(bytes)).sum()
    }

    /// Number of distinct simple paths between two nodes, capped at 2.
    fn simple_paths(&self, from: NodeId, to: NodeId) -> usize {
        fn walk(t: &Topology, at: NodeId, to: NodeId, seen: &mut Vec<bool>, count: &mut usize) {
            if *count >= 2 {
                return;
            }
            if at == to {
                *count += 1;
                return;
            }
            seen[at] = true;
            let next: Vec<NodeId> = t.neighbours(at).map(|(_, m)| m).collect();
            for m in next {
                if !seen[m] {
                    walk(t, m, to, seen, count);
                }
            }
            seen[at] = false;
        }
        let mut count = 0;
        walk(self, from, to, &mut vec![false; self.nodes.len()], &mut count);
        count
    }

    /// Every MAG has exactly one backbone path to the LMA and the CN is
    /// reachable from the LMA.
    pub fn check_invariants(&self) -> Result<(), String> {
        for ap in self.access_points() {
            let n = self.simple_paths(ap.node, self.lma);
            if n != 1 {
                return Err(format!("{} has {n} paths to the LMA", ap.poa));
            }
        }
        if self.path(self.lma, self.cn).is_none() {
            return Err("CN unreachable from LMA".into());
        }
        Ok(())
    }
}
