//! Hierarchical navigable small world graph over slot numbers.
//!
//! The graph only knows slots and the flat vector buffer; payloads and
//! tombstones live in the owning index. Similarity is the dot product, so
//! "closer" means "larger score" throughout.

use std::cell::RefCell;
use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{dot, HnswParams};

#[derive(Debug, Clone, Copy, PartialEq)]
struct Scored {
    score: f64,
    slot: u32,
}

impl Eq for Scored {}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            // Among equal scores the smaller slot ranks higher.
            .then_with(|| other.slot.cmp(&self.slot))
    }
}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Generation-stamped visited set, reused per thread.
struct Visited {
    generation: u32,
    marks: Vec<u32>,
}

impl Visited {
    fn reset(&mut self, n: usize) {
        if self.marks.len() < n {
            self.marks.resize(n, 0);
        }
        self.generation = self.generation.wrapping_add(1);
        if self.generation == 0 {
            self.marks.iter_mut().for_each(|m| *m = 0);
            self.generation = 1;
        }
    }

    /// Marks `slot`; returns false if it was already marked.
    #[inline]
    fn insert(&mut self, slot: u32) -> bool {
        let m = &mut self.marks[slot as usize];
        if *m == self.generation {
            false
        } else {
            *m = self.generation;
            true
        }
    }
}

thread_local! {
    static VISITED: RefCell<Visited> = const { RefCell::new(Visited { generation: 0, marks: Vec::new() }) };
}

#[derive(Debug, Clone)]
pub(super) struct Graph {
    m: usize,
    m0: usize,
    ef_construction: usize,
    level_mult: f64,
    rng: ChaCha8Rng,
    /// `links[slot][level]` lists neighbor slots.
    links: Vec<Vec<Vec<u32>>>,
    entry: Option<u32>,
    max_level: usize,
}

#[inline]
fn row(vectors: &[f32], dim: usize, slot: u32) -> &[f32] {
    let start = slot as usize * dim;
    &vectors[start..start + dim]
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

impl Graph {
    pub(super) fn new(params: &HnswParams) -> Self {
        Self {
            m: params.m,
            m0: params.m * 2,
            ef_construction: params.ef_construction,
            level_mult: 1.0 / (params.m as f64).ln(),
            rng: ChaCha8Rng::seed_from_u64(params.rng_seed),
            links: Vec::new(),
            entry: None,
            max_level: 0,
        }
    }

    fn random_level(&mut self) -> usize {
        // u in (0, 1]
        let u: f64 = 1.0 - self.rng.random::<f64>();
        (-u.ln() * self.level_mult).floor() as usize
    }

    fn cap(&self, level: usize) -> usize {
        if level == 0 {
            self.m0
        } else {
            self.m
        }
    }

    /// Beam search on one layer. Returns up to `ef` results, best first.
    fn search_layer(
        &self,
        query: &[f64],
        entries: &[Scored],
        ef: usize,
        level: usize,
        dim: usize,
        vectors: &[f32],
        visited: &mut Visited,
    ) -> Vec<Scored> {
        visited.reset(self.links.len());
        let mut candidates: BinaryHeap<Scored> = BinaryHeap::with_capacity(ef * 2);
        let mut results: BinaryHeap<Reverse<Scored>> = BinaryHeap::with_capacity(ef + 1);
        for &e in entries {
            if visited.insert(e.slot) {
                candidates.push(e);
                results.push(Reverse(e));
                if results.len() > ef {
                    results.pop();
                }
            }
        }
        while let Some(current) = candidates.pop() {
            let worst = results.peek().map(|r| r.0.score).unwrap_or(f64::NEG_INFINITY);
            if current.score < worst && results.len() >= ef {
                break;
            }
            for &n in &self.links[current.slot as usize][level] {
                if !visited.insert(n) {
                    continue;
                }
                let s = Scored {
                    score: dot(query, row(vectors, dim, n)),
                    slot: n,
                };
                let worst = results.peek().map(|r| r.0.score).unwrap_or(f64::NEG_INFINITY);
                if results.len() < ef || s.score > worst {
                    candidates.push(s);
                    results.push(Reverse(s));
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }
        let mut out: Vec<Scored> = results.into_iter().map(|r| r.0).collect();
        out.sort_by(|a, b| b.cmp(a));
        out
    }

    /// Diversity heuristic: keep a candidate only if it is closer to the base
    /// than to every neighbor already kept, then top up with the rejects.
    /// `candidates` must be sorted best first.
    fn select_neighbors(&self, candidates: &[Scored], m: usize, dim: usize, vectors: &[f32]) -> Vec<u32> {
        let mut kept: Vec<(u32, Vec<f64>)> = Vec::with_capacity(m);
        let mut rejected = Vec::new();
        for c in candidates {
            if kept.len() >= m {
                break;
            }
            let cv = row(vectors, dim, c.slot);
            let diverse = kept.iter().all(|(_, kv)| dot(kv, cv) < c.score);
            if diverse {
                kept.push((c.slot, widen(cv)));
            } else {
                rejected.push(c.slot);
            }
        }
        let mut out: Vec<u32> = kept.into_iter().map(|(s, _)| s).collect();
        for r in rejected {
            if out.len() >= m {
                break;
            }
            out.push(r);
        }
        out
    }

    /// Links a freshly appended slot into the graph.
    pub(super) fn insert(&mut self, slot: u32, dim: usize, vectors: &[f32]) {
        debug_assert_eq!(slot as usize, self.links.len());
        let level = self.random_level();
        self.links.push(vec![Vec::new(); level + 1]);

        let Some(entry) = self.entry else {
            self.entry = Some(slot);
            self.max_level = level;
            return;
        };

        let query = widen(row(vectors, dim, slot));
        VISITED.with(|cell| {
            let visited = &mut *cell.borrow_mut();
            let mut eps = vec![Scored {
                score: dot(&query, row(vectors, dim, entry)),
                slot: entry,
            }];
            for lc in (level + 1..=self.max_level).rev() {
                eps = self.search_layer(&query, &eps, 1, lc, dim, vectors, visited);
            }
            for lc in (0..=level.min(self.max_level)).rev() {
                let found = self.search_layer(&query, &eps, self.ef_construction, lc, dim, vectors, visited);
                let neighbors = self.select_neighbors(&found, self.m, dim, vectors);
                for &n in &neighbors {
                    self.connect(n, slot, lc, dim, vectors);
                }
                self.links[slot as usize][lc] = neighbors;
                eps = found;
            }
        });

        if level > self.max_level {
            self.max_level = level;
            self.entry = Some(slot);
        }
    }

    /// Adds `new` to `node`'s neighbor list on `level`, re-pruning when full.
    fn connect(&mut self, node: u32, new: u32, level: usize, dim: usize, vectors: &[f32]) {
        let cap = self.cap(level);
        let list = &mut self.links[node as usize][level];
        if list.len() < cap {
            list.push(new);
            return;
        }
        let base = widen(row(vectors, dim, node));
        let mut cands: Vec<Scored> = list
            .iter()
            .chain(std::iter::once(&new))
            .map(|&s| Scored {
                score: dot(&base, row(vectors, dim, s)),
                slot: s,
            })
            .collect();
        cands.sort_by(|a, b| b.cmp(a));
        let pruned = self.select_neighbors(&cands, cap, dim, vectors);
        self.links[node as usize][level] = pruned;
    }

    /// Greedy descent through the upper layers, then a beam of width `ef` on
    /// layer 0. Returns `(score, slot)` pairs, best first.
    pub(super) fn search(&self, query: &[f64], ef: usize, dim: usize, vectors: &[f32]) -> Vec<(f64, u32)> {
        let Some(entry) = self.entry else {
            return Vec::new();
        };
        VISITED.with(|cell| {
            let visited = &mut *cell.borrow_mut();
            let mut eps = vec![Scored {
                score: dot(query, row(vectors, dim, entry)),
                slot: entry,
            }];
            for lc in (1..=self.max_level).rev() {
                eps = self.search_layer(query, &eps, 1, lc, dim, vectors, visited);
            }
            self.search_layer(query, &eps, ef, 0, dim, vectors, visited)
                .into_iter()
                .map(|s| (s.score, s.slot))
                .collect()
        })
    }
}
