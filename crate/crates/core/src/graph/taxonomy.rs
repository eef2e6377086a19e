use std::collections::HashMap;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TaxonomyNode {
    /// Identifier as written in `taxonomy.tsv`.
    pub external_id: i64,
    pub parent: Option<usize>,
    pub name: String,
    pub depth: usize,
    pub children: Vec<usize>,
}

impl TaxonomyNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Rooted category tree. Nodes are addressed by dense index `0..len()`,
/// assigned in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct Taxonomy {
    nodes: Vec<TaxonomyNode>,
    root: usize,
    by_external: HashMap<i64, usize>,
}

impl Taxonomy {
    /// Builds a tree from `(id, parent_id, name)` rows; the root has parent `-1`.
    pub fn from_rows(rows: &[(i64, i64, String)]) -> Result<Self> {
        let mut by_external = HashMap::new();
        for (k, (id, _, _)) in rows.iter().enumerate() {
            if by_external.insert(*id, k).is_some() {
                return Err(Error::Contract(format!("duplicate taxonomy node {id}")));
            }
        }
        let mut nodes: Vec<TaxonomyNode> = rows
            .iter()
            .map(|(id, _, name)| TaxonomyNode {
                external_id: *id,
                parent: None,
                name: name.clone(),
                depth: 0,
                children: Vec::new(),
            })
            .collect();
        let mut root = None;
        for (k, (id, parent, _)) in rows.iter().enumerate() {
            if *parent == -1 {
                if root.replace(k).is_some() {
                    return Err(Error::Contract("taxonomy has more than one root".into()));
                }
            } else {
                let p = *by_external
                    .get(parent)
                    .ok_or_else(|| Error::Contract(format!("node {id} has unknown parent {parent}")))?;
                nodes[k].parent = Some(p);
                nodes[p].children.push(k);
            }
        }
        let root = root.ok_or_else(|| Error::Contract("taxonomy has no root".into()))?;
        // depths by BFS from the root; anything unreached sits on a cycle
        let mut seen = vec![false; nodes.len()];
        let mut queue = std::collections::VecDeque::from([root]);
        seen[root] = true;
        while let Some(u) = queue.pop_front() {
            for c in nodes[u].children.clone() {
                nodes[c].depth = nodes[u].depth + 1;
                seen[c] = true;
                queue.push_back(c);
            }
        }
        if let Some(k) = seen.iter().position(|s| !s) {
            return Err(Error::Contract(format!(
                "taxonomy node {} is not reachable from the root",
                nodes[k].external_id
            )));
        }
        Ok(Self {
            nodes,
            root,
            by_external,
        })
    }

    /// Balanced tree of the given depth and branching; node ids follow BFS order.
    pub fn balanced(depth: usize, branching: usize) -> Self {
        let mut rows = vec![(0i64, -1i64, "root".to_string())];
        let mut frontier = vec![(0i64, String::new())];
        let mut next = 1i64;
        for _ in 0..depth {
            let mut nf = Vec::new();
            for (pid, pname) in &frontier {
                for b in 0..branching {
                    let name = if pname.is_empty() {
                        format!("c{b}")
                    } else {
                        format!("{pname}.{b}")
                    };
                    rows.push((next, *pid, name.clone()));
                    nf.push((next, name));
                    next += 1;
                }
            }
            frontier = nf;
        }
        Self::from_rows(&rows).expect("balanced taxonomy")
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn node(&self, k: usize) -> &TaxonomyNode {
        &self.nodes[k]
    }

    pub fn nodes(&self) -> &[TaxonomyNode] {
        &self.nodes
    }

    pub fn dense(&self, external: i64) -> Result<usize> {
        self.by_external
            .get(&external)
            .copied()
            .ok_or(Error::UnknownCategory(external))
    }

    pub fn leaves(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&k| self.nodes[k].is_leaf()).collect()
    }

    pub fn max_depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Nodes from the root down to `k`, inclusive; length `depth(k) + 1`.
    pub fn path(&self, k: usize) -> Result<Vec<usize>> {
        if k >= self.nodes.len() {
            return Err(Error::UnknownCategory(k as i64));
        }
        let mut path = vec![k];
        let mut cur = k;
        while let Some(p) = self.nodes[cur].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        Ok(path)
    }

    pub fn lca(&self, a: usize, b: usize) -> usize {
        let (mut a, mut b) = (a, b);
        while self.nodes[a].depth > self.nodes[b].depth {
            a = self.nodes[a].parent.expect("non-root has parent");
        }
        while self.nodes[b].depth > self.nodes[a].depth {
            b = self.nodes[b].parent.expect("non-root has parent");
        }
        while a != b {
            a = self.nodes[a].parent.expect("non-root has parent");
            b = self.nodes[b].parent.expect("non-root has parent");
        }
        a
    }

    /// Edge count of the tree path between two nodes.
    pub fn path_distance(&self, a: usize, b: usize) -> usize {
        let l = self.lca(a, b);
        self.nodes[a].depth + self.nodes[b].depth - 2 * self.nodes[l].depth
    }
}
