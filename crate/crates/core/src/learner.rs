//! UCT search over attribute-order prefixes.
//!
//! A tree node stands for an ordered prefix of join attributes. Each episode
//! walks from the root: at fully expanded nodes it takes the child with the
//! highest upper confidence bound; otherwise it picks an unexpanded
//! successor at random and adds it as a node (at most one new node per
//! episode). Below the tree, the rest of the order is completed uniformly at
//! random among connected attributes.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::query::{AttrId, AttributeOrder, Query};

pub const DEFAULT_EXPLORATION: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct UctNode {
    pub prefix: Vec<AttrId>,
    pub children: BTreeMap<AttrId, usize>,
    pub visits: u64,
    pub mean_reward: f64,
    /// Episode (1-based) in which the node was added; 0 for the root.
    pub created_in: u64,
}

impl UctNode {
    fn new(prefix: Vec<AttrId>, created_in: u64) -> Self {
        Self {
            prefix,
            children: BTreeMap::new(),
            visits: 0,
            mean_reward: 0.0,
            created_in,
        }
    }
}

/// An order picked for one episode together with the tree nodes it passed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub order: AttributeOrder,
    path: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderStat {
    pub episodes: u64,
    pub mean_reward: f64,
}

pub struct Learner {
    query: Query,
    exploration: f64,
    seed: u64,
    rng: ChaCha8Rng,
    nodes: Vec<UctNode>,
    episode: u64,
    orders: HashMap<AttributeOrder, (u64, f64)>,
}

impl Learner {
    pub fn new(query: &Query, exploration: f64, seed: u64) -> Self {
        Self {
            query: query.clone(),
            exploration,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            nodes: vec![UctNode::new(Vec::new(), 0)],
            episode: 0,
            orders: HashMap::new(),
        }
    }

    /// Drops all statistics; only the root remains.
    pub fn reset(&mut self) {
        *self = Self::new(&self.query, self.exploration, self.seed);
    }

    pub fn nodes(&self) -> &[UctNode] {
        &self.nodes
    }

    pub fn root(&self) -> &UctNode {
        &self.nodes[0]
    }

    pub fn episodes(&self) -> u64 {
        self.episode
    }

    pub fn node(&self, prefix: &[AttrId]) -> Option<&UctNode> {
        let mut id = 0;
        for a in prefix {
            id = *self.nodes[id].children.get(a)?;
        }
        Some(&self.nodes[id])
    }

    /// Picks the order for the next episode.
    pub fn select(&mut self) -> Selection {
        self.walk(None)
    }

    /// Applies the tree-growth rule along a given order, as if the policy had
    /// chosen it.
    pub fn select_forced(&mut self, order: &AttributeOrder) -> Selection {
        self.walk(Some(order.as_slice()))
    }

    fn walk(&mut self, forced: Option<&[AttrId]>) -> Selection {
        self.episode += 1;
        let n = self.query.num_attributes();
        let mut prefix = Vec::with_capacity(n);
        let mut path = vec![0];
        let mut node = Some(0);
        let mut expanded = false;

        while prefix.len() < n {
            let cands: Vec<AttrId> = self
                .query
                .connected_candidates(&prefix)
                .into_iter()
                .collect();
            let choice = match forced {
                Some(order) => {
                    let a = order[prefix.len()];
                    assert!(
                        cands.contains(&a),
                        "forced attribute {a} is not a candidate"
                    );
                    a
                }
                None => self.choose(node, &cands),
            };
            prefix.push(choice);

            if let Some(id) = node {
                if let Some(&child) = self.nodes[id].children.get(&choice) {
                    path.push(child);
                    node = Some(child);
                } else if !expanded {
                    let child = self.nodes.len();
                    self.nodes.push(UctNode::new(prefix.clone(), self.episode));
                    self.nodes[id].children.insert(choice, child);
                    path.push(child);
                    expanded = true;
                    node = None;
                } else {
                    node = None;
                }
            }
        }

        Selection {
            order: AttributeOrder::new(prefix).expect("walk builds a permutation"),
            path,
        }
    }

    fn choose(&mut self, node: Option<usize>, cands: &[AttrId]) -> AttrId {
        let Some(id) = node else {
            return *cands.choose(&mut self.rng).expect("candidates");
        };
        let children = &self.nodes[id].children;
        let missing: Vec<AttrId> = cands
            .iter()
            .copied()
            .filter(|a| !children.contains_key(a))
            .collect();
        if !missing.is_empty() {
            return *missing.choose(&mut self.rng).expect("non-empty");
        }

        let parent_visits = self.nodes[id].visits as f64;
        let scores: Vec<(AttrId, f64)> = cands
            .iter()
            .map(|&a| {
                let child = &self.nodes[children[&a]];
                let score = if child.visits == 0 {
                    f64::INFINITY
                } else {
                    child.mean_reward
                        + self.exploration * (parent_visits.ln() / child.visits as f64).sqrt()
                };
                (a, score)
            })
            .collect();
        let best = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        let ties: Vec<AttrId> = scores.iter().filter(|s| s.1 == best).map(|s| s.0).collect();
        *ties.choose(&mut self.rng).expect("at least one child")
    }

    /// Propagates one episode's reward through the nodes on its path.
    pub fn update(&mut self, selection: &Selection, reward: f64) {
        for &id in &selection.path {
            let node = &mut self.nodes[id];
            node.visits += 1;
            node.mean_reward += (reward - node.mean_reward) / node.visits as f64;
        }
        let entry = self
            .orders
            .entry(selection.order.clone())
            .or_insert((0, 0.0));
        entry.0 += 1;
        entry.1 += reward;
    }

    /// Episode count and mean reward of every order executed so far, most
    /// used first.
    pub fn order_statistics(&self) -> Vec<(AttributeOrder, OrderStat)> {
        let mut stats: Vec<_> = self
            .orders
            .iter()
            .map(|(o, &(n, sum))| {
                (
                    o.clone(),
                    OrderStat {
                        episodes: n,
                        mean_reward: sum / n as f64,
                    },
                )
            })
            .collect();
        stats.sort_by(|a, b| b.1.episodes.cmp(&a.1.episodes).then_with(|| a.0.cmp(&b.0)));
        stats
    }

    /// Tab-separated `order, episodes, mean_reward` lines.
    pub fn export_statistics(&self) -> String {
        let mut out = String::new();
        for (order, stat) in self.order_statistics() {
            let _ = writeln!(
                out,
                "{}\t{}\t{}",
                order.display(&self.query),
                stat.episodes,
                stat.mean_reward
            );
        }
        out
    }
}

/// Reward of one join call: processed volume over total query volume.
pub fn compute_reward(processed: &[crate::cube::Cube], total_volume: &num_bigint::BigUint) -> f64 {
    let v: num_bigint::BigUint = processed.iter().map(crate::cube::Cube::volume).sum();
    crate::cube::volume_ratio(&v, total_volume)
}
