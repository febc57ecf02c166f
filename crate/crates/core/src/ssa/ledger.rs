//! Sizes of mutation-derived resistant clones.
//!
//! A Fenwick tree over integer clone sizes gives `O(log m)` point updates
//! and size-weighted sampling over `m` founded clones. Extinct clones keep
//! their slot with weight zero so clone ids stay stable.

use serde::Serialize;

pub type CloneId = usize;

#[derive(Debug, Clone, Default, Serialize)]
pub struct CloneLedger {
    #[serde(skip)]
    tree: Vec<u64>,
    sizes: Vec<u64>,
    total: u64,
    alive: usize,
}

impl CloneLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Founds a clone of size one and returns its id.
    pub fn add_clone(&mut self) -> CloneId {
        self.push(1)
    }

    fn push(&mut self, size: u64) -> CloneId {
        let id = self.sizes.len();
        let pos = id + 1;
        // node `pos` covers (pos - lowbit(pos), pos]
        let lower = pos - lowbit(pos);
        let covered = self.prefix(pos - 1) - self.prefix(lower);
        self.tree.push(covered + size);
        self.sizes.push(size);
        self.total += size;
        if size > 0 {
            self.alive += 1;
        }
        id
    }

    /// Adds `+1` or `-1` to clone `id`.
    ///
    /// # Panics
    ///
    /// Panics if the clone does not exist or would drop below zero; either is
    /// a bookkeeping bug in the caller.
    pub fn update(&mut self, id: CloneId, delta: i64) {
        let size = self.sizes[id];
        let new_size = size
            .checked_add_signed(delta)
            .unwrap_or_else(|| panic!("clone {id} of size {size} cannot change by {delta}"));
        self.sizes[id] = new_size;
        self.total = self.total.wrapping_add_signed(delta);
        match (size, new_size) {
            (0, s) if s > 0 => self.alive += 1,
            (s, 0) if s > 0 => self.alive -= 1,
            _ => {}
        }
        let mut pos = id + 1;
        while pos <= self.tree.len() {
            self.tree[pos - 1] = self.tree[pos - 1].wrapping_add_signed(delta);
            pos += lowbit(pos);
        }
    }

    /// Sum of the first `count` clone sizes.
    pub fn prefix(&self, count: usize) -> u64 {
        let mut pos = count;
        let mut sum = 0;
        while pos > 0 {
            sum += self.tree[pos - 1];
            pos -= lowbit(pos);
        }
        sum
    }

    /// Clone owning cell number `target` when cells are laid out clone by
    /// clone, i.e. the minimal `j` with `prefix(j + 1) > target`.
    ///
    /// # Panics
    ///
    /// Panics if `target >= total_cells()`.
    pub fn locate(&self, target: u64) -> CloneId {
        assert!(
            target < self.total,
            "target {target} outside ledger of {} cells",
            self.total
        );
        let len = self.tree.len();
        let mut pos = 0;
        let mut rem = target;
        let mut step = if len == 0 { 0 } else { 1 << len.ilog2() };
        while step > 0 {
            let next = pos + step;
            if next <= len && self.tree[next - 1] <= rem {
                pos = next;
                rem -= self.tree[next - 1];
            }
            step >>= 1;
        }
        pos
    }

    /// Size-weighted clone draw from a uniform `u` in `[0, 1)`: the minimal
    /// `j` with `prefix(j + 1) > u * total`.
    pub fn sample(&self, u: f64) -> CloneId {
        let scaled = (u * self.total as f64) as u64;
        self.locate(scaled.min(self.total - 1))
    }

    pub fn size(&self, id: CloneId) -> u64 {
        self.sizes[id]
    }

    pub fn sizes(&self) -> &[u64] {
        &self.sizes
    }

    pub fn total_cells(&self) -> u64 {
        self.total
    }

    /// Clones with at least one living cell.
    pub fn surviving_clones(&self) -> usize {
        self.alive
    }

    pub fn founded_clones(&self) -> usize {
        self.sizes.len()
    }

    pub fn largest_clone(&self) -> u64 {
        self.sizes.iter().copied().max().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }
}

#[inline]
fn lowbit(i: usize) -> usize {
    i & i.wrapping_neg()
}
