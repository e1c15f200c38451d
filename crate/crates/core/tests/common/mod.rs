//! Helpers shared by the integration tests.

#![allow(dead_code)]

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use eikonal::engine::{Domain, Reach};

/// Textbook Dijkstra over an explicit edge list, ordered by total-order keys.
pub fn oracle(n: usize, edges: &[(usize, usize, f64)], sources: &[usize]) -> Vec<f64> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b, w) in edges {
        adj[a].push((b, w));
        adj[b].push((a, w));
    }
    let mut dist = vec![f64::INFINITY; n];
    let mut heap = BinaryHeap::new();
    for &s in sources {
        dist[s] = 0.0;
        heap.push(Reverse((0u64, s)));
    }
    while let Some(Reverse((key, p))) = heap.pop() {
        if f64::from_bits(key) > dist[p] {
            continue;
        }
        for &(q, w) in &adj[p] {
            let d = dist[p] + w;
            if d < dist[q] {
                dist[q] = d;
                // Non-negative floats order like their bit patterns.
                heap.push(Reverse((d.to_bits(), q)));
            }
        }
    }
    dist
}

pub fn edges_of<D: Domain>(d: &D) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    let mut nbrs = Vec::new();
    for p in 0..d.num_points() {
        nbrs.clear();
        d.neighbors(p, Reach::Near, &mut nbrs);
        out.extend(nbrs.iter().filter(|&&q| q > p).map(|&q| (p, q, d.edge_length(p, q))));
    }
    out
}
