//! Prioritized replay over fixed-length trajectory windows.
//!
//! Episodes are split into subsequences of at most `max_subsequence`
//! steps, evicted oldest-first once `capacity` subsequences are held.
//! Each position carries a priority; sampling draws positions with
//! probability proportional to priority^alpha and reports importance
//! weights (1 / (N * P))^beta normalized by the largest weight in the
//! batch. Fresh priorities computed during target building are written
//! back by stable reference; references to evicted subsequences are
//! counted and dropped.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::targets::{TargetConfig, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayConfig {
    pub capacity: usize,
    pub max_subsequence: usize,
    pub alpha: f64,
    pub beta: f64,
    pub priority_floor: f64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            capacity: 2000,
            max_subsequence: 50,
            alpha: 1.0,
            beta: 1.0,
            priority_floor: 1e-6,
        }
    }
}

impl ReplayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity < 1 || self.max_subsequence < 1 {
            return Err(Error::Config("capacity and max_subsequence must be >= 1".into()));
        }
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::Config("alpha and beta must be >= 0".into()));
        }
        if self.priority_floor <= 0.0 {
            return Err(Error::Config("priority_floor must be positive".into()));
        }
        Ok(())
    }
}

/// Stable handle to one stored position, valid until its subsequence
/// is evicted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PositionRef {
    pub subsequence: u64,
    pub offset: usize,
}

#[derive(Debug, Clone)]
struct Subsequence {
    id: u64,
    traj: Arc<Trajectory>,
    start: usize,
    priorities: Vec<f64>,
}

/// One sampled batch entry: the trajectory, the absolute position in
/// it, the importance weight, and the reference for priority updates.
#[derive(Debug, Clone)]
pub struct SampledPosition {
    pub reference: PositionRef,
    pub traj: Arc<Trajectory>,
    pub t: usize,
    pub weight: f64,
}

pub struct ReplayBuffer {
    config: ReplayConfig,
    subs: VecDeque<Subsequence>,
    next_id: u64,
    positions: usize,
    dropped_updates: u64,
}

impl ReplayBuffer {
    pub fn new(config: ReplayConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, subs: VecDeque::new(), next_id: 0, positions: 0, dropped_updates: 0 })
    }

    pub fn num_positions(&self) -> usize {
        self.positions
    }

    pub fn num_subsequences(&self) -> usize {
        self.subs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions == 0
    }

    pub fn dropped_updates(&self) -> u64 {
        self.dropped_updates
    }

    /// Splits an episode into subsequences and stores them with initial
    /// priorities. Positions with stored search statistics start at the
    /// gap between the search value and an n-step return bootstrapped
    /// from stored values (no network involved); positions without
    /// statistics start at priority 1.
    pub fn append(&mut self, traj: Arc<Trajectory>, targets: &TargetConfig) {
        let len = traj.len();
        let mut start = 0;
        while start < len {
            let end = (start + self.config.max_subsequence).min(len);
            let priorities: Vec<f64> = (start..end)
                .map(|t| {
                    self.initial_priority(&traj, t, targets).max(self.config.priority_floor)
                })
                .collect();
            let sub = Subsequence {
                id: self.next_id,
                traj: Arc::clone(&traj),
                start,
                priorities,
            };
            self.next_id += 1;
            self.positions += sub.priorities.len();
            self.subs.push_back(sub);
            if self.subs.len() > self.config.capacity {
                let evicted = self.subs.pop_front().expect("non-empty");
                self.positions -= evicted.priorities.len();
            }
            start = end;
        }
    }

    fn initial_priority(&self, traj: &Trajectory, t: usize, targets: &TargetConfig) -> f64 {
        let stats = match &traj.stats[t] {
            Some(s) => s,
            None => return 1.0,
        };
        let bootstrap_at = t + targets.td_steps;
        let horizon = bootstrap_at.min(traj.len());
        let mut z = 0.0;
        let mut coeff = 1.0;
        for i in t..horizon {
            z += coeff * traj.rewards[i];
            coeff *= targets.discount;
        }
        if bootstrap_at < traj.len() {
            if let Some(boot) = &traj.stats[bootstrap_at] {
                z += coeff * boot.value;
            }
        }
        (stats.value - z).abs()
    }

    /// Draws `batch` positions by priority. Weights are normalized so
    /// the largest weight in the batch is exactly 1.
    pub fn sample(&self, batch: usize, rng: &mut ChaCha8Rng) -> Result<Vec<SampledPosition>> {
        if self.is_empty() {
            return Err(Error::Usage("cannot sample from an empty replay buffer".into()));
        }
        let mut cumulative = Vec::with_capacity(self.positions);
        let mut owners = Vec::with_capacity(self.subs.len());
        let mut total = 0.0;
        for (sub_index, sub) in self.subs.iter().enumerate() {
            owners.push((cumulative.len(), sub_index));
            for &p in &sub.priorities {
                total += p.powf(self.config.alpha);
                cumulative.push(total);
            }
        }
        if total <= 0.0 {
            return Err(Error::Usage("replay priorities sum to zero".into()));
        }

        let n = self.positions as f64;
        let mut picks = Vec::with_capacity(batch);
        let mut raw_weights = Vec::with_capacity(batch);
        for _ in 0..batch {
            let u = rng.random::<f64>() * total;
            let flat = cumulative.partition_point(|&c| c <= u).min(self.positions - 1);
            let owner = owners
                .partition_point(|&(base, _)| base <= flat)
                .checked_sub(1)
                .expect("flat index has an owner");
            let (base, sub_index) = owners[owner];
            let sub = &self.subs[sub_index];
            let offset = flat - base;
            let mass = sub.priorities[offset].powf(self.config.alpha);
            let probability = mass / total;
            raw_weights.push((1.0 / (n * probability)).powf(self.config.beta));
            picks.push((sub.id, Arc::clone(&sub.traj), sub.start + offset, offset));
        }
        let max_weight = raw_weights.iter().fold(0.0f64, |m, &w| m.max(w));
        Ok(picks
            .into_iter()
            .zip(raw_weights)
            .map(|((id, traj, t, offset), w)| SampledPosition {
                reference: PositionRef { subsequence: id, offset },
                traj,
                t,
                weight: w / max_weight,
            })
            .collect())
    }

    /// Writes back recomputed priorities. References to evicted
    /// subsequences are dropped and counted.
    pub fn update_priorities(&mut self, updates: &[(PositionRef, f64)]) {
        for &(reference, priority) in updates {
            let index = self
                .subs
                .binary_search_by(|sub| sub.id.cmp(&reference.subsequence));
            match index {
                Ok(i) => {
                    let sub = &mut self.subs[i];
                    if reference.offset < sub.priorities.len() {
                        sub.priorities[reference.offset] =
                            priority.max(self.config.priority_floor);
                    } else {
                        self.dropped_updates += 1;
                    }
                }
                Err(_) => self.dropped_updates += 1,
            }
        }
    }

    /// Uniformly random trajectory reference, used where a whole
    /// episode is needed rather than a position.
    pub fn any_trajectory(&self, rng: &mut ChaCha8Rng) -> Option<Arc<Trajectory>> {
        if self.subs.is_empty() {
            return None;
        }
        let i = rng.random_range(0..self.subs.len());
        Some(Arc::clone(&self.subs[i].traj))
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Action;
    use crate::targets::{StoredStats, TargetConfig, TrajectorySource, ValueTargetMode};
    use rand_chacha::rand_core::SeedableRng;

    fn stored_episode(len: usize, id: u64, values: Option<Vec<f64>>) -> Arc<Trajectory> {
        let observations = (0..len).map(|i| vec![i as f64]).collect();
        let actions = (0..len).map(|_| Action::Discrete(0)).collect();
        let rewards = vec![0.0; len];
        let mut traj = Trajectory::from_episode(
            id,
            observations,
            actions,
            rewards,
            true,
            TrajectorySource::SelfPlay,
        )
        .unwrap();
        if let Some(values) = values {
            for (t, v) in values.into_iter().enumerate() {
                traj.stats[t] = Some(StoredStats { dist: vec![1.0], actions: None, value: v });
            }
        }
        Arc::new(traj)
    }

    fn targets() -> TargetConfig {
        TargetConfig {
            fraction: 0.0,
            value_target: ValueTargetMode::TdN,
            unroll_steps: 2,
            td_steps: 2,
            discount: 0.9,
            obs_stack: 1,
            inject_action: false,
        }
    }

    fn small_config(capacity: usize, max_subsequence: usize) -> ReplayConfig {
        ReplayConfig { capacity, max_subsequence, ..ReplayConfig::default() }
    }

    #[test]
    fn episodes_split_into_bounded_subsequences() {
        let mut buffer = ReplayBuffer::new(small_config(10, 3)).unwrap();
        buffer.append(stored_episode(7, 1, None), &targets());
        assert_eq!(buffer.num_subsequences(), 3);
        assert_eq!(buffer.num_positions(), 7);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut seen = vec![false; 7];
        for _ in 0..200 {
            for s in buffer.sample(8, &mut rng).unwrap() {
                assert!(s.t < 7);
                assert_eq!(s.traj.id, 1);
                seen[s.t] = true;
            }
        }
        assert!(seen.iter().all(|&s| s), "all positions reachable: {seen:?}");
    }

    #[test]
    fn eviction_is_first_in_first_out() {
        let mut buffer = ReplayBuffer::new(small_config(2, 5)).unwrap();
        for id in 0..3u64 {
            buffer.append(stored_episode(4, id, None), &targets());
        }
        assert_eq!(buffer.num_subsequences(), 2);
        assert_eq!(buffer.num_positions(), 8);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            for s in buffer.sample(4, &mut rng).unwrap() {
                assert_ne!(s.traj.id, 0, "evicted episode was sampled");
            }
        }
    }

    #[test]
    fn sampling_frequencies_match_priorities() {
        let mut buffer = ReplayBuffer::new(small_config(4, 4)).unwrap();
        buffer.append(stored_episode(4, 9, Some(vec![1.0, 2.0, 3.0, 4.0])), &targets());
        // Zero rewards and td_steps 2: the n-step return bootstraps on
        // the stored value two steps ahead, so priorities become
        // |v_t - 0.81 * v_{t+2}| with no bootstrap past the end.
        let expected_raw = [
            (1.0f64 - 0.81 * 3.0).abs(),
            (2.0f64 - 0.81 * 4.0).abs(),
            3.0,
            4.0,
        ];
        let total: f64 = expected_raw.iter().sum();
        let expected: Vec<f64> = expected_raw.iter().map(|p| p / total).collect();

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0usize; 4];
        let draws = 100_000;
        for _ in 0..draws / 10 {
            for s in buffer.sample(10, &mut rng).unwrap() {
                counts[s.t] += 1;
            }
        }
        let tv: f64 = counts
            .iter()
            .zip(&expected)
            .map(|(&c, &p)| (c as f64 / draws as f64 - p).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv <= 0.02, "total variation {tv} over {expected:?}");
    }

    #[test]
    fn importance_weights_are_inverse_to_priorities() {
        let mut buffer = ReplayBuffer::new(small_config(4, 4)).unwrap();
        buffer.append(stored_episode(2, 5, None), &targets());
        let refs: Vec<(PositionRef, f64)> = {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let batch = buffer.sample(16, &mut rng).unwrap();
            let mut seen = std::collections::HashMap::new();
            for s in batch {
                seen.insert(s.t, s.reference);
            }
            vec![(seen[&0], 1.0), (seen[&1], 3.0)]
        };
        buffer.update_priorities(&refs);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let batch = buffer.sample(64, &mut rng).unwrap();
        let w0 = batch.iter().find(|s| s.t == 0).unwrap().weight;
        let w1 = batch.iter().find(|s| s.t == 1).unwrap().weight;
        assert!((w0 - 1.0).abs() < 1e-12, "lowest-priority weight normalizes to 1");
        assert!((w0 / w1 - 3.0).abs() < 1e-9, "weights scale inversely: {w0} vs {w1}");

        let mut uniform = ReplayBuffer::new(small_config(4, 4)).unwrap();
        uniform.append(stored_episode(3, 6, None), &targets());
        let batch = uniform.sample(12, &mut rng).unwrap();
        for s in batch {
            assert!((s.weight - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn updates_to_evicted_subsequences_are_counted_and_dropped() {
        let mut buffer = ReplayBuffer::new(small_config(1, 5)).unwrap();
        buffer.append(stored_episode(3, 0, None), &targets());
        let reference = {
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            buffer.sample(1, &mut rng).unwrap()[0].reference
        };
        buffer.append(stored_episode(3, 1, None), &targets());
        buffer.update_priorities(&[(reference, 9.0)]);
        assert_eq!(buffer.dropped_updates(), 1);
    }

    #[test]
    fn empty_buffer_rejects_sampling() {
        let buffer = ReplayBuffer::new(ReplayConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        assert!(buffer.sample(1, &mut rng).is_err());
        assert!(buffer.is_empty());
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let mut buffer = ReplayBuffer::new(small_config(8, 4)).unwrap();
        for id in 0..4u64 {
            buffer.append(stored_episode(4, id, Some(vec![0.1, 0.5, 0.9, 1.3])), &targets());
        }
        let draw = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            buffer
                .sample(16, &mut rng)
                .unwrap()
                .into_iter()
                .map(|s| (s.traj.id, s.t, s.weight.to_bits()))
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(11), draw(11));
        assert_ne!(draw(11), draw(12));
    }

    #[test]
    fn shared_buffer_survives_concurrent_use() {
        use std::sync::Mutex;
        let buffer = Arc::new(Mutex::new(ReplayBuffer::new(small_config(64, 5)).unwrap()));
        let mut handles = Vec::new();
        for thread in 0..2u64 {
            let buffer = Arc::clone(&buffer);
            handles.push(std::thread::spawn(move || {
                let mut rng = ChaCha8Rng::seed_from_u64(thread);
                for i in 0..20 {
                    let traj = stored_episode(5, thread * 100 + i, None);
                    let mut guard = buffer.lock().unwrap();
                    guard.append(traj, &targets());
                    if !guard.is_empty() {
                        let batch = guard.sample(4, &mut rng).unwrap();
                        let updates: Vec<(PositionRef, f64)> =
                            batch.iter().map(|s| (s.reference, 0.5)).collect();
                        guard.update_priorities(&updates);
                    }
                }
            }));
        }
        for handle in handles {
            handle.join().unwrap();
        }
        let guard = buffer.lock().unwrap();
        assert_eq!(guard.num_subsequences(), 40);
        assert_eq!(guard.num_positions(), 200);
    }
}
