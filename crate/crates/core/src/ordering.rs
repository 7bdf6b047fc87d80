//! Fill-reducing minimum degree ordering on an explicit elimination graph.

use std::collections::BTreeSet;

/// Minimum degree elimination order of the graph with adjacency `adj`.
///
/// Degrees are exact (the elimination graph is updated explicitly), ties go
/// to the smallest node index. Returns the nodes in elimination order.
pub fn minimum_degree(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut graph: Vec<BTreeSet<usize>> = adj
        .iter()
        .enumerate()
        .map(|(i, nb)| nb.iter().copied().filter(|&j| j != i && j < n).collect())
        .collect();
    // Symmetrise in case the caller passed a one-sided list.
    for i in 0..n {
        let nb: Vec<usize> = graph[i].iter().copied().collect();
        for j in nb {
            graph[j].insert(i);
        }
    }
    let mut queue: BTreeSet<(usize, usize)> = (0..n).map(|i| (graph[i].len(), i)).collect();
    let mut order = Vec::with_capacity(n);
    while let Some((_, v)) = queue.pop_first() {
        order.push(v);
        let nb: Vec<usize> = std::mem::take(&mut graph[v]).into_iter().collect();
        for &a in &nb {
            queue.remove(&(graph[a].len(), a));
            graph[a].remove(&v);
        }
        for (k, &a) in nb.iter().enumerate() {
            for &b in &nb[k + 1..] {
                graph[a].insert(b);
                graph[b].insert(a);
            }
        }
        for &a in &nb {
            queue.insert((graph[a].len(), a));
        }
    }
    order
}
