use serde::{Deserialize, Serialize};

/// Default length, in sampler iterations, of one swap-statistics window.
pub const DEFAULT_SWAP_WINDOW: u64 = 10_000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounter {
    pub proposed: u64,
    pub accepted: u64,
}

impl PairCounter {
    /// `None` when nothing was proposed.
    pub fn rate(&self) -> Option<f64> {
        (self.proposed > 0).then(|| self.accepted as f64 / self.proposed as f64)
    }
}

/// Cumulative and windowed swap counters for each adjacent pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapStats {
    cumulative: Vec<PairCounter>,
    current: Vec<PairCounter>,
    last_window: Option<Vec<PairCounter>>,
    window_len: u64,
    window_pos: u64,
}

impl SwapStats {
    pub fn new(n_pairs: usize, window_len: u64) -> Self {
        SwapStats {
            cumulative: vec![PairCounter::default(); n_pairs],
            current: vec![PairCounter::default(); n_pairs],
            last_window: None,
            window_len: window_len.max(1),
            window_pos: 0,
        }
    }

    pub fn n_pairs(&self) -> usize {
        self.cumulative.len()
    }

    pub fn record(&mut self, pair: usize, accepted: bool) {
        for c in [&mut self.cumulative[pair], &mut self.current[pair]] {
            c.proposed += 1;
            c.accepted += accepted as u64;
        }
    }

    /// Closes one sampler iteration; rotates the window when it is full.
    pub fn end_iteration(&mut self) {
        self.window_pos += 1;
        if self.window_pos >= self.window_len {
            let n = self.current.len();
            self.last_window = Some(std::mem::replace(
                &mut self.current,
                vec![PairCounter::default(); n],
            ));
            self.window_pos = 0;
        }
    }

    pub fn cumulative(&self) -> &[PairCounter] {
        &self.cumulative
    }

    /// The most recent completed window, or the partial one before any window has closed.
    pub fn window(&self) -> &[PairCounter] {
        self.last_window.as_deref().unwrap_or(&self.current)
    }

    pub fn window_len(&self) -> u64 {
        self.window_len
    }
}
