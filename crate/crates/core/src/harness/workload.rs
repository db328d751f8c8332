//! Closed-loop client workload: key choice, read/write mix and think time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Zipf};

use crate::harness::config::{KeyDistribution, WorkloadSpec};
use crate::types::{Key, Micros};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Read,
    Update,
}

#[derive(Clone, Debug)]
enum KeyChooser {
    Uniform(u64),
    PowerLaw(Zipf<f64>),
}

/// Per-client operation generator with its own RNG stream.
#[derive(Clone, Debug)]
pub struct ClientWorkload {
    rng: ChaCha8Rng,
    keys: KeyChooser,
    read_percent: u32,
    think: Option<Exp<f64>>,
}

impl ClientWorkload {
    pub fn new(spec: &WorkloadSpec, seed: u64, session: usize) -> Self {
        let stream = seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(session as u64 + 1);
        let keys = match spec.key_distribution {
            KeyDistribution::Uniform => KeyChooser::Uniform(spec.key_count),
            KeyDistribution::PowerLaw => KeyChooser::PowerLaw(
                Zipf::new(spec.key_count as f64, spec.power_law_alpha).expect("validated zipf"),
            ),
        };
        let think = (spec.think_time_us > 0)
            .then(|| Exp::new(1.0 / spec.think_time_us as f64).expect("positive rate"));
        ClientWorkload {
            rng: ChaCha8Rng::seed_from_u64(stream),
            keys,
            read_percent: spec.read_percent().unwrap_or(100),
            think,
        }
    }

    pub fn next_key(&mut self) -> Key {
        match &self.keys {
            KeyChooser::Uniform(n) => Key(self.rng.random_range(0..*n)),
            KeyChooser::PowerLaw(z) => Key(z.sample(&mut self.rng) as u64 - 1),
        }
    }

    pub fn next_kind(&mut self) -> OpKind {
        if self.rng.random_range(0..100) < self.read_percent {
            OpKind::Read
        } else {
            OpKind::Update
        }
    }

    pub fn think_time(&mut self) -> Micros {
        match &self.think {
            Some(exp) => exp.sample(&mut self.rng).round() as Micros,
            None => 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mix_and_keys_follow_the_spec() {
        let spec = WorkloadSpec {
            key_count: 50,
            read_write: "75:25".into(),
            ..WorkloadSpec::default()
        };
        let mut w = ClientWorkload::new(&spec, 3, 0);
        let n = 20_000;
        let mut reads = 0;
        for _ in 0..n {
            if w.next_kind() == OpKind::Read {
                reads += 1;
            }
            assert!(w.next_key().0 < 50);
        }
        let frac = reads as f64 / n as f64;
        assert!((frac - 0.75).abs() < 0.02, "{frac}");
    }

    #[test]
    fn power_law_favours_low_ranks() {
        let spec = WorkloadSpec {
            key_count: 1_000,
            key_distribution: KeyDistribution::PowerLaw,
            ..WorkloadSpec::default()
        };
        let mut w = ClientWorkload::new(&spec, 3, 0);
        let mut counts = vec![0u32; 1_000];
        for _ in 0..50_000 {
            let k = w.next_key().0 as usize;
            counts[k] += 1;
        }
        assert!(counts[0] > 5 * counts[50]);
        assert!(counts[999] < counts[0]);
    }

    #[test]
    fn sessions_get_independent_streams() {
        let spec = WorkloadSpec::default();
        let mut a = ClientWorkload::new(&spec, 9, 0);
        let mut b = ClientWorkload::new(&spec, 9, 1);
        let mut a2 = ClientWorkload::new(&spec, 9, 0);
        let ka: Vec<Key> = (0..20).map(|_| a.next_key()).collect();
        let kb: Vec<Key> = (0..20).map(|_| b.next_key()).collect();
        let ka2: Vec<Key> = (0..20).map(|_| a2.next_key()).collect();
        assert_ne!(ka, kb);
        assert_eq!(ka, ka2);
    }

    #[test]
    fn think_time_mean_is_close_to_spec() {
        let spec = WorkloadSpec::default();
        let mut w = ClientWorkload::new(&spec, 1, 0);
        let mean = (0..20_000).map(|_| w.think_time()).sum::<u64>() as f64 / 20_000.0;
        assert!((mean / spec.think_time_us as f64 - 1.0).abs() < 0.05, "{mean}");
    }
}
