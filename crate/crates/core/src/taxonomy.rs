//! Seed taxonomies: loading, validation, sub-taxonomy blocks and query splits.
//!
//! Node ids on disk are arbitrary non-negative integers. On load they are
//! re-indexed densely in file order, so that row `i` of every matrix in the
//! crate corresponds to `NodeId(i)`. The original ids are kept for reporting.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::IteratorRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dag;
use crate::error::{Error, Result};

/// Name given to the root inserted above multiple original roots.
pub const PSEUDO_ROOT_NAME: &str = "__root__";

/// Dense node index within one [`Taxonomy`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// An is-a DAG with edges pointing from hypernym (parent) to hyponym (child).
#[derive(Debug, Clone, PartialEq)]
pub struct Taxonomy {
    names: Vec<String>,
    external: Vec<u64>,
    index: HashMap<u64, NodeId>,
    parents: Vec<Vec<NodeId>>,
    children: Vec<Vec<NodeId>>,
    pseudo_root: Option<NodeId>,
}

impl Taxonomy {
    /// Builds a validated taxonomy from `(external id, name)` pairs and
    /// `(parent, child)` edges given in external ids.
    pub fn new(nodes: Vec<(u64, String)>, edges: &[(u64, u64)]) -> Result<Self> {
        let mut index = HashMap::with_capacity(nodes.len());
        let mut names = Vec::with_capacity(nodes.len());
        let mut external = Vec::with_capacity(nodes.len());
        for (ext, name) in nodes {
            if index.insert(ext, NodeId(names.len())).is_some() {
                return Err(Error::InvalidTaxonomy(format!("duplicate node id {ext}")));
            }
            names.push(name);
            external.push(ext);
        }
        let n = names.len();
        let mut parents = vec![Vec::new(); n];
        let mut children = vec![Vec::new(); n];
        let mut seen = BTreeSet::new();
        for &(p, c) in edges {
            let pi = *index.get(&p).ok_or(Error::DanglingEdge {
                parent: p,
                child: c,
                missing: p,
            })?;
            let ci = *index.get(&c).ok_or(Error::DanglingEdge {
                parent: p,
                child: c,
                missing: c,
            })?;
            if pi == ci {
                return Err(Error::InvalidTaxonomy(format!("self-loop on node {p}")));
            }
            if !seen.insert((pi, ci)) {
                return Err(Error::InvalidTaxonomy(format!("duplicate edge ({p}, {c})")));
            }
            parents[ci.0].push(pi);
            children[pi.0].push(ci);
        }
        for list in parents.iter_mut().chain(children.iter_mut()) {
            list.sort_unstable();
        }
        let t = Taxonomy {
            names,
            external,
            index,
            parents,
            children,
            pseudo_root: None,
        };
        validate_dag(&t)?;
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.len()).map(NodeId)
    }

    pub fn name(&self, id: NodeId) -> &str {
        &self.names[id.0]
    }

    pub fn external_id(&self, id: NodeId) -> u64 {
        self.external[id.0]
    }

    pub fn lookup(&self, external: u64) -> Option<NodeId> {
        self.index.get(&external).copied()
    }

    pub fn parents(&self, id: NodeId) -> &[NodeId] {
        &self.parents[id.0]
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.children[id.0]
    }

    /// All `(parent, child)` edges, sorted.
    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        let mut out: Vec<_> = self
            .children
            .iter()
            .enumerate()
            .flat_map(|(p, cs)| cs.iter().map(move |&c| (NodeId(p), c)))
            .collect();
        out.sort_unstable();
        out
    }

    pub fn edge_count(&self) -> usize {
        self.children.iter().map(Vec::len).sum()
    }

    pub fn roots(&self) -> Vec<NodeId> {
        self.node_ids()
            .filter(|&v| self.parents[v.0].is_empty())
            .collect()
    }

    pub fn leaves(&self) -> Vec<NodeId> {
        self.node_ids()
            .filter(|&v| self.children[v.0].is_empty())
            .collect()
    }

    /// The inserted pseudo-root, if any. It carries no features.
    pub fn pseudo_root(&self) -> Option<NodeId> {
        self.pseudo_root
    }

    /// Nodes that carry an embedding vector (everything except the pseudo-root).
    pub fn feature_nodes(&self) -> Vec<NodeId> {
        self.node_ids()
            .filter(|&v| Some(v) != self.pseudo_root)
            .collect()
    }

    /// Number of nodes on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        let order = validate_dag(self).expect("taxonomy is acyclic by construction");
        let mut level = vec![1usize; self.len()];
        for v in order {
            for &c in &self.children[v.0] {
                level[c.0] = level[c.0].max(level[v.0] + 1);
            }
        }
        level.into_iter().max().unwrap_or(0)
    }

    /// Inserts a pseudo-root above all roots when more than one root exists.
    pub fn with_pseudo_root(mut self) -> Self {
        let roots = self.roots();
        if self.pseudo_root.is_some() {
            return self;
        }
        if roots.len() <= 1 {
            // a previously saved pseudo-root
            if let [r] = roots[..] {
                if self.names[r.0] == PSEUDO_ROOT_NAME {
                    self.pseudo_root = Some(r);
                }
            }
            return self;
        }
        let ext = self.external.iter().max().map_or(0, |m| m + 1);
        let id = NodeId(self.len());
        self.names.push(PSEUDO_ROOT_NAME.to_string());
        self.external.push(ext);
        self.index.insert(ext, id);
        self.parents.push(Vec::new());
        self.children.push(roots.clone());
        for r in roots {
            self.parents[r.0].push(id);
        }
        self.pseudo_root = Some(id);
        self
    }

    /// Ancestors of `id` (excluding itself).
    pub fn ancestors(&self, id: NodeId) -> BTreeSet<NodeId> {
        bfs(id, |v| &self.parents[v.0])
    }

    /// Descendants of `id` (excluding itself).
    pub fn descendants(&self, id: NodeId) -> BTreeSet<NodeId> {
        bfs(id, |v| &self.children[v.0])
    }

    /// Appends a node with the given parents, leaving every existing node
    /// and edge untouched.
    pub fn add_leaf(&self, external: u64, name: &str, parents: &[NodeId]) -> Result<Self> {
        if self.index.contains_key(&external) {
            return Err(Error::InvalidTaxonomy(format!(
                "node id {external} already exists"
            )));
        }
        let mut t = self.clone();
        let id = NodeId(t.len());
        t.names.push(name.to_string());
        t.external.push(external);
        t.index.insert(external, id);
        let mut ps: Vec<NodeId> = parents.to_vec();
        ps.sort_unstable();
        ps.dedup();
        for &p in &ps {
            if p.0 >= self.len() {
                return Err(Error::InvalidTaxonomy(format!("unknown parent {p}")));
            }
            t.children[p.0].push(id);
        }
        t.parents.push(ps);
        t.children.push(Vec::new());
        validate_dag(&t)?;
        Ok(t)
    }

    /// Writes the nodes and edges TSV files.
    pub fn save(&self, nodes_path: &Path, edges_path: &Path) -> Result<()> {
        let mut nodes = String::new();
        for v in self.node_ids() {
            nodes.push_str(&format!("{}\t{}\n", self.external_id(v), self.name(v)));
        }
        fs::write(nodes_path, nodes).map_err(|e| Error::io(nodes_path, e))?;
        let mut f = fs::File::create(edges_path).map_err(|e| Error::io(edges_path, e))?;
        for (p, c) in self.edges() {
            writeln!(f, "{}\t{}", self.external_id(p), self.external_id(c))
                .map_err(|e| Error::io(edges_path, e))?;
        }
        Ok(())
    }
}

fn bfs<'a, F>(start: NodeId, next: F) -> BTreeSet<NodeId>
where
    F: Fn(NodeId) -> &'a [NodeId],
{
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::from([start]);
    while let Some(v) = queue.pop_front() {
        for &u in next(v) {
            if seen.insert(u) {
                queue.push_back(u);
            }
        }
    }
    seen
}

/// Reads the nodes/edges TSV pair. A pseudo-root is inserted when the
/// edges leave more than one root.
pub fn load_taxonomy(nodes_path: &Path, edges_path: &Path) -> Result<Taxonomy> {
    let text = fs::read_to_string(nodes_path).map_err(|e| Error::io(nodes_path, e))?;
    let mut nodes = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, name) = line.split_once('\t').ok_or_else(|| Error::Parse {
            path: nodes_path.to_path_buf(),
            line: lineno + 1,
            msg: "expected `<node_id>\\t<surface_name>`".into(),
        })?;
        let id = parse_id(id, nodes_path, lineno)?;
        nodes.push((id, name.to_string()));
    }

    let text = fs::read_to_string(edges_path).map_err(|e| Error::io(edges_path, e))?;
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (Some(p), Some(c), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(Error::Parse {
                path: edges_path.to_path_buf(),
                line: lineno + 1,
                msg: "expected `<parent_id>\\t<child_id>`".into(),
            });
        };
        edges.push((parse_id(p, edges_path, lineno)?, parse_id(c, edges_path, lineno)?));
    }
    Ok(Taxonomy::new(nodes, &edges)?.with_pseudo_root())
}

fn parse_id(s: &str, path: &Path, lineno: usize) -> Result<u64> {
    s.trim().parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line: lineno + 1,
        msg: format!("invalid node id {s:?}"),
    })
}

/// Returns a topological order in which every parent precedes its children.
pub fn validate_dag(t: &Taxonomy) -> Result<Vec<NodeId>> {
    let adj: Vec<Vec<usize>> = t
        .children
        .iter()
        .map(|cs| cs.iter().map(|c| c.0).collect())
        .collect();
    dag::topological_order(&adj)
        .map(|order| order.into_iter().map(NodeId).collect())
        .map_err(|cycle| Error::Cycle(cycle.into_iter().map(|v| t.external[v]).collect()))
}

/// A block of nodes lying on source-to-destination paths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubTaxonomy {
    /// Sorted member ids.
    pub members: Vec<NodeId>,
    pub source: NodeId,
    pub destinations: Vec<NodeId>,
    /// Set when a single destination's path closure exceeded the size cap and
    /// only the nodes nearest to the destination were kept.
    pub truncated: bool,
}

impl SubTaxonomy {
    /// Edges of `t` induced on the members.
    pub fn edges(&self, t: &Taxonomy) -> Vec<(NodeId, NodeId)> {
        let set: BTreeSet<NodeId> = self.members.iter().copied().collect();
        t.edges()
            .into_iter()
            .filter(|(p, c)| set.contains(p) && set.contains(c))
            .collect()
    }
}

/// Splits `t` into blocks, one group of destinations (leaves) per block,
/// each block holding every node on a path from its source root to one of
/// its destinations. Leaves are grouped greedily in DFS order while the
/// union stays within `max_size`.
pub fn split_subtaxonomies(t: &Taxonomy, max_size: usize) -> Result<Vec<SubTaxonomy>> {
    if max_size < 2 {
        return Err(Error::Config(format!("max_size must be >= 2, got {max_size}")));
    }
    let mut out = Vec::new();
    for source in t.roots() {
        let mut reach = t.descendants(source);
        reach.insert(source);
        let leaves = dfs_leaves(t, source);

        let mut members: BTreeSet<NodeId> = BTreeSet::new();
        let mut dests: Vec<NodeId> = Vec::new();
        for leaf in leaves {
            let mut closure: BTreeSet<NodeId> =
                t.ancestors(leaf).intersection(&reach).copied().collect();
            closure.insert(leaf);
            if closure.len() > max_size {
                flush(&mut out, source, &mut members, &mut dests);
                out.push(truncate_closure(t, leaf, &closure, max_size));
                continue;
            }
            if members.union(&closure).count() > max_size {
                flush(&mut out, source, &mut members, &mut dests);
            }
            members.extend(closure);
            dests.push(leaf);
        }
        flush(&mut out, source, &mut members, &mut dests);
    }
    Ok(out)
}

fn flush(
    out: &mut Vec<SubTaxonomy>,
    source: NodeId,
    members: &mut BTreeSet<NodeId>,
    dests: &mut Vec<NodeId>,
) {
    if dests.is_empty() {
        return;
    }
    out.push(SubTaxonomy {
        members: std::mem::take(members).into_iter().collect(),
        source,
        destinations: std::mem::take(dests),
        truncated: false,
    });
}

fn dfs_leaves(t: &Taxonomy, source: NodeId) -> Vec<NodeId> {
    let mut seen = BTreeSet::new();
    let mut stack = vec![source];
    let mut leaves = Vec::new();
    while let Some(v) = stack.pop() {
        if !seen.insert(v) {
            continue;
        }
        let cs = t.children(v);
        if cs.is_empty() {
            leaves.push(v);
        }
        stack.extend(cs.iter().rev().copied());
    }
    leaves
}

/// Keeps the `max_size` closure nodes nearest to `leaf` by upward BFS.
fn truncate_closure(
    t: &Taxonomy,
    leaf: NodeId,
    closure: &BTreeSet<NodeId>,
    max_size: usize,
) -> SubTaxonomy {
    let mut kept = vec![leaf];
    let mut seen = BTreeSet::from([leaf]);
    let mut queue = VecDeque::from([leaf]);
    while let Some(v) = queue.pop_front() {
        for &p in t.parents(v) {
            if kept.len() == max_size {
                break;
            }
            if closure.contains(&p) && seen.insert(p) {
                kept.push(p);
                queue.push_back(p);
            }
        }
    }
    let source = *kept.last().unwrap();
    kept.sort_unstable();
    SubTaxonomy {
        members: kept,
        source,
        destinations: vec![leaf],
        truncated: true,
    }
}

/// Seed/query partition of a taxonomy, in external ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub seed: Vec<u64>,
    pub query: Vec<u64>,
    pub rng_seed: u64,
}

impl DatasetSplit {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Draws `query_count` query nodes uniformly among nodes that are neither
/// roots nor direct children of a pseudo-root.
pub fn make_split(t: &Taxonomy, query_count: usize, rng_seed: u64) -> Result<DatasetSplit> {
    let eligible: Vec<NodeId> = t
        .node_ids()
        .filter(|&v| {
            let ps = t.parents(v);
            !ps.is_empty() && !(t.pseudo_root.is_some() && ps == [t.pseudo_root.unwrap()])
        })
        .collect();
    if query_count >= t.len() || query_count > eligible.len() {
        return Err(Error::QueryCountTooLarge {
            requested: query_count,
            available: eligible.len().min(t.len().saturating_sub(1)),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut picked: Vec<NodeId> = eligible.into_iter().choose_multiple(&mut rng, query_count);
    picked.sort_unstable();
    let is_query: BTreeSet<NodeId> = picked.iter().copied().collect();
    let seed = t
        .node_ids()
        .filter(|v| !is_query.contains(v))
        .map(|v| t.external_id(v))
        .collect();
    let query = picked.iter().map(|&v| t.external_id(v)).collect();
    Ok(DatasetSplit {
        seed,
        query,
        rng_seed,
    })
}

/// Nearest kept ancestors of `v`, walking up through removed nodes.
fn kept_parents(t: &Taxonomy, v: NodeId, removed: &BTreeSet<NodeId>) -> BTreeSet<NodeId> {
    let mut out = BTreeSet::new();
    let mut seen = BTreeSet::new();
    let mut stack: Vec<NodeId> = t.parents(v).to_vec();
    while let Some(p) = stack.pop() {
        if !seen.insert(p) {
            continue;
        }
        if removed.contains(&p) {
            stack.extend_from_slice(t.parents(p));
        } else {
            out.insert(p);
        }
    }
    out
}

fn removed_set(t: &Taxonomy, split: &DatasetSplit) -> Result<BTreeSet<NodeId>> {
    split
        .query
        .iter()
        .map(|&q| {
            t.lookup(q)
                .ok_or_else(|| Error::InvalidTaxonomy(format!("query {q} not in taxonomy")))
        })
        .collect()
}

/// The seed taxonomy: query nodes removed, their children reattached to
/// the removed nodes' nearest surviving ancestors.
pub fn seed_taxonomy(t: &Taxonomy, split: &DatasetSplit) -> Result<Taxonomy> {
    let removed = removed_set(t, split)?;
    let nodes: Vec<(u64, String)> = t
        .node_ids()
        .filter(|v| !removed.contains(v))
        .map(|v| (t.external_id(v), t.name(v).to_string()))
        .collect();
    let mut edges = Vec::new();
    for v in t.node_ids().filter(|v| !removed.contains(v)) {
        for p in kept_parents(t, v, &removed) {
            edges.push((t.external_id(p), t.external_id(v)));
        }
    }
    let mut seed = Taxonomy::new(nodes, &edges)?;
    seed.pseudo_root = t.pseudo_root.and_then(|p| seed.lookup(t.external_id(p)));
    Ok(seed)
}

/// Ground-truth anchors of every query in the seed taxonomy (external ids).
pub fn query_anchors(t: &Taxonomy, split: &DatasetSplit) -> Result<BTreeMap<u64, Vec<u64>>> {
    let removed = removed_set(t, split)?;
    Ok(removed
        .iter()
        .map(|&q| {
            let anchors = kept_parents(t, q, &removed)
                .into_iter()
                .map(|p| t.external_id(p))
                .collect();
            (t.external_id(q), anchors)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tax(n: u64, edges: &[(u64, u64)]) -> Taxonomy {
        let nodes = (0..n).map(|i| (i, format!("n{i}"))).collect();
        Taxonomy::new(nodes, edges).unwrap()
    }

    #[test]
    fn minimal_dag() {
        let t = Taxonomy::new(vec![(0, "root".into()), (1, "a".into())], &[(0, 1)]).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.edge_count(), 1);
        assert_eq!(t.roots(), vec![NodeId(0)]);
    }

    #[test]
    fn reindexes_in_file_order() {
        // v1 -> v2 -> v4 -> v3
        let nodes = vec![
            (1, "v1".into()),
            (2, "v2".into()),
            (3, "v3".into()),
            (4, "v4".into()),
        ];
        let t = Taxonomy::new(nodes, &[(1, 2), (2, 4), (4, 3)]).unwrap();
        assert_eq!(t.lookup(4), Some(NodeId(3)));
        assert_eq!(t.depth(), 4);
        assert_eq!(t.parents(NodeId(2)), &[NodeId(3)]);
    }

    #[test]
    fn two_cycle_rejected() {
        let nodes = vec![(0, "a".into()), (1, "b".into())];
        match Taxonomy::new(nodes, &[(0, 1), (1, 0)]) {
            Err(Error::Cycle(c)) => assert_eq!(c.len(), 2),
            other => panic!("expected cycle, got {other:?}"),
        }
    }

    #[test]
    fn dangling_and_duplicates() {
        let nodes = vec![(0, "a".into()), (1, "b".into())];
        assert!(matches!(
            Taxonomy::new(nodes.clone(), &[(0, 7)]),
            Err(Error::DanglingEdge { missing: 7, .. })
        ));
        assert!(Taxonomy::new(nodes.clone(), &[(0, 1), (0, 1)]).is_err());
        assert!(Taxonomy::new(nodes, &[(1, 1)]).is_err());
    }

    #[test]
    fn topological_orders() {
        assert_eq!(
            validate_dag(&tax(3, &[(0, 1), (1, 2)])).unwrap(),
            vec![NodeId(0), NodeId(1), NodeId(2)]
        );
        assert!(validate_dag(&tax(0, &[])).unwrap().is_empty());
    }

    #[test]
    fn diamond_order_is_a_valid_linear_extension() {
        let edges = [(0, 1), (0, 2), (1, 3), (2, 3)];
        let t = tax(4, &edges);
        let order = validate_dag(&t).unwrap();
        // brute force: enumerate all permutations and keep the valid ones
        let mut valid = Vec::new();
        let mut perm = vec![0usize, 1, 2, 3];
        permutations(&mut perm, 0, &mut |p| {
            let pos = |v: usize| p.iter().position(|&x| x == v).unwrap();
            if edges.iter().all(|&(a, b)| pos(a as usize) < pos(b as usize)) {
                valid.push(p.to_vec());
            }
        });
        assert_eq!(valid.len(), 2);
        assert!(valid.iter().all(|p| p[0] == 0 && p[3] == 3));
        let got: Vec<usize> = order.iter().map(|v| v.0).collect();
        assert!(valid.contains(&got));
    }

    fn permutations(v: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
        if k == v.len() {
            f(v);
            return;
        }
        for i in k..v.len() {
            v.swap(k, i);
            permutations(v, k + 1, f);
            v.swap(k, i);
        }
    }

    #[test]
    fn pseudo_root_inserted_for_forest() {
        let t = tax(4, &[(0, 1), (2, 3)]).with_pseudo_root();
        let pr = t.pseudo_root().unwrap();
        assert_eq!(t.name(pr), PSEUDO_ROOT_NAME);
        assert_eq!(t.roots(), vec![pr]);
        assert_eq!(t.children(pr), &[NodeId(0), NodeId(2)]);
        assert_eq!(t.feature_nodes().len(), 4);
        // single root: unchanged
        assert!(tax(2, &[(0, 1)]).with_pseudo_root().pseudo_root().is_none());
    }

    #[test]
    fn chain_is_one_block() {
        let t = tax(3, &[(0, 1), (1, 2)]);
        let subs = split_subtaxonomies(&t, 10).unwrap();
        assert_eq!(subs.len(), 1);
        assert_eq!(subs[0].members, vec![NodeId(0), NodeId(1), NodeId(2)]);
    }

    #[test]
    fn two_leaves_share_the_root() {
        let t = tax(3, &[(0, 1), (0, 2)]);
        let subs = split_subtaxonomies(&t, 2).unwrap();
        // oracle: enumerate root->leaf paths directly
        let paths = [vec![NodeId(0), NodeId(1)], vec![NodeId(0), NodeId(2)]];
        assert_eq!(subs.len(), 2);
        for (s, p) in subs.iter().zip(paths.iter()) {
            assert_eq!(&s.members, p);
            assert_eq!(s.source, NodeId(0));
        }
        // grouped when the cap allows it
        assert_eq!(split_subtaxonomies(&t, 10).unwrap().len(), 1);
    }

    #[test]
    fn oversized_closure_is_truncated() {
        let t = tax(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]);
        let subs = split_subtaxonomies(&t, 3).unwrap();
        assert_eq!(subs.len(), 1);
        assert!(subs[0].truncated);
        assert_eq!(subs[0].members, vec![NodeId(3), NodeId(4), NodeId(5)]);
        assert_eq!(subs[0].source, NodeId(3));
    }

    #[test]
    fn singleton_taxonomy() {
        let t = tax(1, &[]);
        let subs = split_subtaxonomies(&t, 2).unwrap();
        assert_eq!(subs.len(), 1);
        assert_eq!(subs[0].members, vec![NodeId(0)]);
        assert!(split_subtaxonomies(&t, 1).is_err());
    }

    #[test]
    fn split_is_deterministic_and_bounded() {
        let edges: Vec<(u64, u64)> = (0..9).map(|i| (i, i + 1)).collect();
        let t = tax(10, &edges);
        let a = make_split(&t, 1, 42).unwrap();
        let b = make_split(&t, 1, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.query.len(), 1);
        assert_ne!(a.query[0], 0);
        assert!(matches!(
            make_split(&t, 10, 1),
            Err(Error::QueryCountTooLarge { .. })
        ));
    }

    #[test]
    fn removal_reattaches_grandchildren() {
        // 0 -> 1 -> 2 -> 3, remove 1 and 2
        let t = tax(4, &[(0, 1), (1, 2), (2, 3)]);
        let split = DatasetSplit {
            seed: vec![0, 3],
            query: vec![1, 2],
            rng_seed: 0,
        };
        let seed = seed_taxonomy(&t, &split).unwrap();
        assert_eq!(seed.len(), 2);
        assert_eq!(seed.edges(), vec![(NodeId(0), NodeId(1))]);
        assert_eq!(seed.external_id(NodeId(1)), 3);
        let anchors = query_anchors(&t, &split).unwrap();
        assert_eq!(anchors[&1], vec![0]);
        assert_eq!(anchors[&2], vec![0]);
    }

    #[test]
    fn add_leaf_keeps_existing_edges() {
        let t = tax(3, &[(0, 1), (1, 2)]);
        let t2 = t.add_leaf(99, "q", &[NodeId(1), NodeId(2)]).unwrap();
        assert_eq!(t2.len(), 4);
        let before = t.edges();
        let after = t2.edges();
        assert!(before.iter().all(|e| after.contains(e)));
        assert_eq!(after.len(), before.len() + 2);
        assert!(t.add_leaf(1, "dup", &[]).is_err());
    }
}
