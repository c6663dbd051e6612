//! Disjoint-set forest with union by rank and path halving, tracking component
//! size and the largest internal edge weight used to build each component.

use alloc::vec::Vec;

#[derive(Debug, Clone)]
pub struct DisjointSet {
    parent: Vec<u32>,
    rank: Vec<u8>,
    size: Vec<u32>,
    internal: Vec<f64>,
    components: usize,
}

impl DisjointSet {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u32).collect(),
            rank: alloc::vec![0; n],
            size: alloc::vec![1; n],
            internal: alloc::vec![0.0; n],
            components: n,
        }
    }

    #[inline]
    pub fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    /// Size of the component rooted at `root`.
    #[inline]
    pub fn size(&self, root: u32) -> u32 {
        self.size[root as usize]
    }

    /// Largest edge weight inside the component rooted at `root`.
    #[inline]
    pub fn internal(&self, root: u32) -> f64 {
        self.internal[root as usize]
    }

    pub fn components(&self) -> usize {
        self.components
    }

    /// Joins two distinct roots, recording `weight` as an internal edge. Returns the new root.
    pub fn union(&mut self, a: u32, b: u32, weight: f64) -> u32 {
        debug_assert_ne!(a, b);
        let (root, child) = if self.rank[a as usize] < self.rank[b as usize] { (b, a) } else { (a, b) };
        if self.rank[root as usize] == self.rank[child as usize] {
            self.rank[root as usize] += 1;
        }
        self.parent[child as usize] = root;
        self.size[root as usize] += self.size[child as usize];
        let merged = self.internal[a as usize].max(self.internal[b as usize]).max(weight);
        self.internal[root as usize] = merged;
        self.components -= 1;
        root
    }
}
