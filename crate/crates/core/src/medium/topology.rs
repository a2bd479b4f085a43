use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::{AddressAllocator, MediumError, NodeAddress, Position};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutingMode {
    /// Follow parent links through the lowest common ancestor.
    #[default]
    Tree,
    /// Minimum-hop path over every in-range link.
    MeshShortestPath,
}

/// Node placement plus the cluster tree rooted at the coordinator.
#[derive(Debug, Clone)]
pub struct Topology {
    nodes: BTreeMap<NodeAddress, Position>,
    parent: BTreeMap<NodeAddress, NodeAddress>,
    routing_mode: RoutingMode,
    max_range: f64,
    allocator: AddressAllocator,
    down_links: BTreeSet<(NodeAddress, NodeAddress)>,
    down_nodes: BTreeSet<NodeAddress>,
}

fn link_key(a: NodeAddress, b: NodeAddress) -> (NodeAddress, NodeAddress) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Topology {
    pub fn new(coordinator: Position, max_range: f64, routing_mode: RoutingMode) -> Self {
        let mut nodes = BTreeMap::new();
        nodes.insert(NodeAddress::COORDINATOR, coordinator);
        Self {
            nodes,
            parent: BTreeMap::new(),
            routing_mode,
            max_range,
            allocator: AddressAllocator::new(),
            down_links: BTreeSet::new(),
            down_nodes: BTreeSet::new(),
        }
    }

    pub fn routing_mode(&self) -> RoutingMode {
        self.routing_mode
    }

    pub fn set_routing_mode(&mut self, mode: RoutingMode) {
        self.routing_mode = mode;
    }

    pub fn max_range(&self) -> f64 {
        self.max_range
    }

    pub fn position(&self, addr: NodeAddress) -> Option<Position> {
        self.nodes.get(&addr).copied()
    }

    pub fn parent(&self, addr: NodeAddress) -> Option<NodeAddress> {
        self.parent.get(&addr).copied()
    }

    pub fn addresses(&self) -> impl Iterator<Item = NodeAddress> + '_ {
        self.nodes.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn distance(&self, a: NodeAddress, b: NodeAddress) -> Option<f64> {
        Some(self.nodes.get(&a)?.distance(self.nodes.get(&b)?))
    }

    /// Adds a node whose parent is the nearest joined node in range
    /// (lowest address on ties).
    pub fn join(&mut self, position: Position) -> Result<NodeAddress, MediumError> {
        let parent = self
            .nodes
            .iter()
            .filter(|(a, _)| !self.down_nodes.contains(a))
            .map(|(&a, p)| (a, p.distance(&position)))
            .filter(|&(_, d)| d <= self.max_range)
            .min_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)))
            .map(|(a, _)| a)
            .ok_or(MediumError::OutOfRange)?;
        let addr = self.allocator.allocate()?;
        self.nodes.insert(addr, position);
        self.parent.insert(addr, parent);
        Ok(addr)
    }

    pub fn fail_link(&mut self, a: NodeAddress, b: NodeAddress) {
        self.down_links.insert(link_key(a, b));
    }

    pub fn restore_link(&mut self, a: NodeAddress, b: NodeAddress) {
        self.down_links.remove(&link_key(a, b));
    }

    /// Marks a node as unable to relay or receive (e.g. battery exhausted).
    pub fn fail_node(&mut self, addr: NodeAddress) {
        self.down_nodes.insert(addr);
    }

    pub fn is_node_up(&self, addr: NodeAddress) -> bool {
        self.nodes.contains_key(&addr) && !self.down_nodes.contains(&addr)
    }

    fn link_up(&self, a: NodeAddress, b: NodeAddress) -> bool {
        !self.down_links.contains(&link_key(a, b)) && self.is_node_up(a) && self.is_node_up(b)
    }

    /// Every other node within radio range, ascending by address.
    pub fn neighbors(&self, addr: NodeAddress) -> Vec<NodeAddress> {
        let Some(p) = self.nodes.get(&addr) else { return Vec::new() };
        self.nodes
            .iter()
            .filter(|&(&b, q)| b != addr && p.distance(q) <= self.max_range)
            .map(|(&b, _)| b)
            .collect()
    }

    fn ancestors(&self, mut addr: NodeAddress) -> Vec<NodeAddress> {
        let mut chain = vec![addr];
        while let Some(&p) = self.parent.get(&addr) {
            chain.push(p);
            addr = p;
        }
        chain
    }

    pub fn route(&self, src: NodeAddress, dst: NodeAddress) -> Result<Vec<NodeAddress>, MediumError> {
        for a in [src, dst] {
            if !self.nodes.contains_key(&a) {
                return Err(MediumError::UnknownNode(a));
            }
        }
        if src == dst {
            return Ok(vec![src]);
        }
        match self.routing_mode {
            RoutingMode::Tree => self.tree_route(src, dst),
            RoutingMode::MeshShortestPath => self.mesh_route(src, dst),
        }
    }

    fn tree_route(&self, src: NodeAddress, dst: NodeAddress) -> Result<Vec<NodeAddress>, MediumError> {
        let up = self.ancestors(src);
        let down = self.ancestors(dst);
        let lca_idx = up.iter().position(|a| down.contains(a)).ok_or(MediumError::NoRoute { src, dst })?;
        let lca = up[lca_idx];
        let mut path: Vec<NodeAddress> = up[..=lca_idx].to_vec();
        let down_idx = down.iter().position(|&a| a == lca).expect("lca is on both chains");
        path.extend(down[..down_idx].iter().rev());
        if path.windows(2).all(|w| self.link_up(w[0], w[1])) {
            Ok(path)
        } else {
            Err(MediumError::NoRoute { src, dst })
        }
    }

    fn mesh_route(&self, src: NodeAddress, dst: NodeAddress) -> Result<Vec<NodeAddress>, MediumError> {
        let mut prev: BTreeMap<NodeAddress, NodeAddress> = BTreeMap::new();
        let mut queue = VecDeque::from([src]);
        let mut seen = BTreeSet::from([src]);
        while let Some(cur) = queue.pop_front() {
            if cur == dst {
                let mut path = vec![dst];
                let mut at = dst;
                while let Some(&p) = prev.get(&at) {
                    path.push(p);
                    at = p;
                }
                path.reverse();
                return Ok(path);
            }
            for next in self.neighbors(cur) {
                if self.link_up(cur, next) && seen.insert(next) {
                    prev.insert(next, cur);
                    queue.push_back(next);
                }
            }
        }
        Err(MediumError::NoRoute { src, dst })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pos(x: f64, y: f64) -> Position {
        Position::new(x, y).unwrap()
    }

    fn line(mode: RoutingMode) -> Topology {
        let mut t = Topology::new(pos(0.0, 0.0), 60.0, mode);
        for i in 1..=4 {
            t.join(pos(50.0 * i as f64, 0.0)).unwrap();
        }
        t
    }

    #[test]
    fn join_picks_only_candidate() {
        let mut t = Topology::new(pos(0.0, 0.0), 100.0, RoutingMode::Tree);
        let a = t.join(pos(10.0, 0.0)).unwrap();
        assert_eq!(t.parent(a), Some(NodeAddress(0)));
    }

    #[test]
    fn join_out_of_range() {
        let mut t = Topology::new(pos(0.0, 0.0), 100.0, RoutingMode::Tree);
        assert!(matches!(t.join(pos(150.0, 0.0)), Err(MediumError::OutOfRange)));
    }

    #[test]
    fn join_prefers_nearest() {
        let mut t = Topology::new(pos(0.0, 0.0), 100.0, RoutingMode::Tree);
        let router = t.join(pos(80.0, 0.0)).unwrap();
        let leaf = t.join(pos(90.0, 0.0)).unwrap();
        assert_eq!(t.parent(leaf), Some(router));
    }

    #[test]
    fn line_routes_both_modes() {
        for mode in [RoutingMode::Tree, RoutingMode::MeshShortestPath] {
            let t = line(mode);
            let path = t.route(NodeAddress(4), NodeAddress(0)).unwrap();
            assert_eq!(path, [4, 3, 2, 1, 0].map(NodeAddress));
            assert_eq!(t.route(NodeAddress(2), NodeAddress(2)).unwrap(), [NodeAddress(2)]);
        }
    }

    #[test]
    fn tree_routes_through_common_ancestor() {
        let mut t = Topology::new(pos(0.0, 0.0), 60.0, RoutingMode::Tree);
        let a = t.join(pos(50.0, 0.0)).unwrap();
        let b = t.join(pos(-50.0, 0.0)).unwrap();
        let a2 = t.join(pos(100.0, 0.0)).unwrap();
        assert_eq!(t.route(a2, b).unwrap(), vec![a2, a, NodeAddress(0), b]);
    }

    #[test]
    fn failed_tree_link_means_no_route() {
        let mut t = line(RoutingMode::Tree);
        t.fail_link(NodeAddress(2), NodeAddress(1));
        assert!(matches!(t.route(NodeAddress(4), NodeAddress(0)), Err(MediumError::NoRoute { .. })));
        t.restore_link(NodeAddress(1), NodeAddress(2));
        assert!(t.route(NodeAddress(4), NodeAddress(0)).is_ok());
    }

    #[test]
    fn mesh_detours_around_failure() {
        let mut t = Topology::new(pos(0.0, 0.0), 60.0, RoutingMode::MeshShortestPath);
        let a = t.join(pos(50.0, 0.0)).unwrap();
        let b = t.join(pos(25.0, 40.0)).unwrap();
        t.fail_link(a, NodeAddress(0));
        assert_eq!(t.route(a, NodeAddress(0)).unwrap(), vec![a, b, NodeAddress(0)]);
        t.fail_node(b);
        assert!(t.route(a, NodeAddress(0)).is_err());
    }
}
