//! Indexing and graph structure of the step digraph on a finite torus.
//!
//! Sites are the points of ∏ Z/(p_i), enumerated in row-major order with
//! the last coordinate fastest. Each step z ∈ R induces the edge
//! x → x ⊕ z (torus addition).

use crate::env::StepSet;

#[derive(Clone, Debug)]
pub struct Torus {
    pub periods: Vec<i64>,
    pub size: usize,
}

impl Torus {
    pub fn new(periods: &[i64]) -> Torus {
        let size = periods.iter().product::<i64>() as usize;
        Torus {
            periods: periods.to_vec(),
            size,
        }
    }

    pub fn index(&self, x: &[i64]) -> usize {
        let mut idx: i64 = 0;
        for (xi, pi) in x.iter().zip(&self.periods) {
            idx = idx * pi + xi.rem_euclid(*pi);
        }
        idx as usize
    }

    pub fn coords(&self, mut idx: usize) -> Vec<i64> {
        let d = self.periods.len();
        let mut out = vec![0i64; d];
        for i in (0..d).rev() {
            let p = self.periods[i] as usize;
            out[i] = (idx % p) as i64;
            idx /= p;
        }
        out
    }

    /// Index of x ⊕ z given the index of x.
    pub fn step_index(&self, idx: usize, z: &[i64]) -> usize {
        let mut coords = self.coords(idx);
        for (c, dz) in coords.iter_mut().zip(z) {
            *c += dz;
        }
        self.index(&coords)
    }

    /// neighbors[s][k] = index of site s shifted by step k.
    pub fn neighbor_table(&self, steps: &StepSet) -> Vec<Vec<usize>> {
        (0..self.size)
            .map(|s| steps.steps().iter().map(|z| self.step_index(s, z)).collect())
            .collect()
    }
}

/// Strong connectivity of the step digraph: every site reaches every other
/// along directed edges.
pub fn strongly_connected(neighbors: &[Vec<usize>]) -> bool {
    let n = neighbors.len();
    if n == 0 {
        return false;
    }
    let mut rev: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (u, outs) in neighbors.iter().enumerate() {
        for &v in outs {
            rev[v].push(u);
        }
    }
    let reaches_all = |adj: &dyn Fn(usize) -> Vec<usize>| -> bool {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for v in adj(u) {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == n
    };
    reaches_all(&|u| neighbors[u].clone()) && reaches_all(&|u| rev[u].clone())
}

/// Period of a strongly connected digraph: gcd of all cycle lengths,
/// computed as the gcd of level inconsistencies along a BFS tree.
pub fn digraph_period(neighbors: &[Vec<usize>]) -> usize {
    let n = neighbors.len();
    let mut level = vec![usize::MAX; n];
    let mut queue = std::collections::VecDeque::new();
    level[0] = 0;
    queue.push_back(0usize);
    let mut g: i64 = 0;
    while let Some(u) = queue.pop_front() {
        for &v in &neighbors[u] {
            if level[v] == usize::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            } else {
                let diff = level[u] as i64 + 1 - level[v] as i64;
                g = gcd(g, diff.abs());
            }
        }
    }
    if g == 0 {
        1
    } else {
        g as usize
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}
