//! Cycle detection and deterministic topological ordering over stage indices.

use std::collections::BTreeSet;

/// Finds a back-edge `(from, to)` if the graph has a cycle.
///
/// Roots and successors are visited in index (declaration) order.
pub(crate) fn find_back_edge(succ: &[Vec<usize>]) -> Option<(usize, usize)> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    let n = succ.len();
    let mut mark = vec![Mark::New; n];
    for root in 0..n {
        if mark[root] != Mark::New {
            continue;
        }
        // iterative DFS: (node, next child position)
        let mut stack = vec![(root, 0usize)];
        mark[root] = Mark::Active;
        while let Some(&mut (node, ref mut pos)) = stack.last_mut() {
            if let Some(&child) = succ[node].get(*pos) {
                *pos += 1;
                match mark[child] {
                    Mark::Active => return Some((node, child)),
                    Mark::New => {
                        mark[child] = Mark::Active;
                        stack.push((child, 0));
                    }
                    Mark::Done => {}
                }
            } else {
                mark[node] = Mark::Done;
                stack.pop();
            }
        }
    }
    None
}

/// Kahn's algorithm, always releasing the lexicographically smallest ready name.
pub(crate) fn topo_order(names: &[&str], succ: &[Vec<usize>]) -> Vec<usize> {
    let n = names.len();
    let mut indegree = vec![0usize; n];
    for s in succ {
        for &v in s {
            indegree[v] += 1;
        }
    }
    let mut ready: BTreeSet<(&str, usize)> = (0..n)
        .filter(|&i| indegree[i] == 0)
        .map(|i| (names[i], i))
        .collect();
    let mut out = Vec::with_capacity(n);
    while let Some((_, u)) = ready.pop_first() {
        out.push(u);
        for &v in &succ[u] {
            indegree[v] -= 1;
            if indegree[v] == 0 {
                ready.insert((names[v], v));
            }
        }
    }
    out
}
