//! Index-based DAG helpers shared by the taxonomy and the learner.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

/// Kahn's algorithm over a children adjacency list. Among ready vertices the
/// smallest index is emitted first, so the order is deterministic.
///
/// On failure returns one directed cycle as a vertex sequence.
pub(crate) fn topological_order(children: &[Vec<usize>]) -> Result<Vec<usize>, Vec<usize>> {
    let n = children.len();
    let mut indeg = vec![0usize; n];
    for cs in children {
        for &c in cs {
            indeg[c] += 1;
        }
    }
    let mut ready: BinaryHeap<Reverse<usize>> = (0..n)
        .filter(|&v| indeg[v] == 0)
        .map(Reverse)
        .collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(v)) = ready.pop() {
        order.push(v);
        for &c in &children[v] {
            indeg[c] -= 1;
            if indeg[c] == 0 {
                ready.push(Reverse(c));
            }
        }
    }
    if order.len() == n {
        Ok(order)
    } else {
        let remaining: Vec<bool> = indeg.iter().map(|&d| d > 0).collect();
        Err(find_cycle(children, &remaining))
    }
}

/// Finds a cycle among vertices flagged in `within`. Every flagged vertex
/// left over by Kahn's algorithm has a flagged predecessor, hence walking
/// backwards would also work; a forward DFS is simpler to reason about.
pub(crate) fn find_cycle(children: &[Vec<usize>], within: &[bool]) -> Vec<usize> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Open,
        Done,
    }
    let n = children.len();
    let mut mark = vec![Mark::New; n];
    for start in 0..n {
        if !within[start] || mark[start] != Mark::New {
            continue;
        }
        // iterative DFS with explicit (vertex, next child index) stack
        let mut stack: Vec<(usize, usize)> = vec![(start, 0)];
        mark[start] = Mark::Open;
        while let Some(&mut (v, ref mut next)) = stack.last_mut() {
            if *next < children[v].len() {
                let c = children[v][*next];
                *next += 1;
                if !within[c] {
                    continue;
                }
                match mark[c] {
                    Mark::New => {
                        mark[c] = Mark::Open;
                        stack.push((c, 0));
                    }
                    Mark::Open => {
                        let pos = stack.iter().position(|&(u, _)| u == c).unwrap();
                        return stack[pos..].iter().map(|&(u, _)| u).collect();
                    }
                    Mark::Done => {}
                }
            } else {
                mark[v] = Mark::Done;
                stack.pop();
            }
        }
    }
    Vec::new()
}
