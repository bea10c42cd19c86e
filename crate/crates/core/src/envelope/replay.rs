/// Number of sequence numbers tracked below the highest accepted one.
pub const WINDOW: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplayDecision {
    Accept,
    Reject,
}

/// IPsec-style sliding anti-replay window. Bit `k` of the bitmap records
/// whether `highest_seq - k` has been accepted. Sequence number 0 is never
/// valid: a fresh window treats it as already seen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplayWindow {
    highest_seq: u64,
    seen_bitmap: u64,
}

impl Default for ReplayWindow {
    fn default() -> Self {
        Self { highest_seq: 0, seen_bitmap: 1 }
    }
}

impl ReplayWindow {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn highest_seq(&self) -> u64 {
        self.highest_seq
    }

    /// Whether `seq` would be accepted, without recording it.
    pub fn would_accept(&self, seq: u64) -> bool {
        if seq > self.highest_seq {
            return true;
        }
        let age = self.highest_seq - seq;
        age < WINDOW && self.seen_bitmap & (1 << age) == 0
    }

    pub fn check(&mut self, seq: u64) -> ReplayDecision {
        if !self.would_accept(seq) {
            return ReplayDecision::Reject;
        }
        if seq > self.highest_seq {
            let shift = seq - self.highest_seq;
            self.seen_bitmap = if shift >= WINDOW { 0 } else { self.seen_bitmap << shift };
            self.seen_bitmap |= 1;
            self.highest_seq = seq;
        } else {
            self.seen_bitmap |= 1 << (self.highest_seq - seq);
        }
        ReplayDecision::Accept
    }
}

pub fn replay_check(window: &mut ReplayWindow, seq: u64) -> ReplayDecision {
    window.check(seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ReplayDecision::*;

    fn run(seqs: &[u64]) -> Vec<ReplayDecision> {
        let mut w = ReplayWindow::new();
        seqs.iter().map(|&s| w.check(s)).collect()
    }

    #[test]
    fn fresh_window_accepts_ascending() {
        assert_eq!(run(&[1, 2, 3]), vec![Accept, Accept, Accept]);
    }

    #[test]
    fn window_slides_past_old_sequences() {
        assert_eq!(run(&[5, 3, 5, 70, 5]), vec![Accept, Accept, Reject, Accept, Reject]);
    }

    #[test]
    fn zero_is_never_accepted() {
        assert_eq!(run(&[0]), vec![Reject]);
        assert_eq!(run(&[1, 0]), vec![Accept, Reject]);
    }

    #[test]
    fn edge_of_window() {
        // highest 100: 37 is 63 behind (inside), 36 is 64 behind (outside).
        assert_eq!(run(&[100, 37, 36]), vec![Accept, Accept, Reject]);
    }

    #[test]
    fn large_jump_clears_bitmap() {
        assert_eq!(run(&[1, u64::MAX, u64::MAX - 1, 1]), vec![Accept, Accept, Accept, Reject]);
    }
}
