//! Planted-cluster synthetic interaction logs.
//!
//! Every intent owns a disjoint pool of items and a fixed route through that
//! pool. A user picks one intent. With probability `overlap` the user follows
//! the route from its start, so such users share most of their history while
//! their next items differ with their lengths. Otherwise the user draws
//! distinct pool items in random order. Any position except the last three
//! is replaced by an out-of-pool item with probability `noise`, so every
//! held-out target comes from the pool.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::InteractionCorpus;
use crate::error::{RclError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub users: usize,
    pub items: usize,
    pub intents: usize,
    /// Probability of an out-of-pool item at each non-target position.
    pub noise: f64,
    /// Share of users that follow their intent's route.
    pub overlap: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            users: 2000,
            items: 500,
            intents: 20,
            noise: 0.1,
            overlap: 0.5,
            min_len: 5,
            max_len: 20,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn pool_size(&self) -> usize {
        self.items / self.intents.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(RclError::InvalidConfig(m.to_string()));
        if self.users == 0 || self.intents == 0 {
            return bad("users and intents must be positive");
        }
        if self.pool_size() < 2 {
            return bad("each intent needs at least two items");
        }
        if self.min_len < 4 || self.min_len > self.max_len {
            return bad("need 4 <= min_len <= max_len");
        }
        if self.max_len > self.pool_size() {
            return bad("max_len cannot exceed the pool size");
        }
        if !(0.0..1.0).contains(&self.noise) || !(0.0..=1.0).contains(&self.overlap) {
            return bad("noise must lie in [0, 1) and overlap in [0, 1]");
        }
        if self.noise > 0.0 && self.intents < 2 {
            return bad("noise needs items outside the pool");
        }
        Ok(())
    }
}

/// One generated user: intent, whether it followed the route, and item ids
/// in `1..=items` in chronological order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthUser {
    pub intent: usize,
    pub on_route: bool,
    pub history: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthData {
    pub config: SynthConfig,
    /// Item ids owned by each intent, in route order.
    pub routes: Vec<Vec<u32>>,
    pub users: Vec<SynthUser>,
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let p = cfg.pool_size();
    let mut ids: Vec<u32> = (1..=cfg.items as u32).collect();
    ids.shuffle(&mut rng);
    let routes: Vec<Vec<u32>> = (0..cfg.intents).map(|g| ids[g * p..(g + 1) * p].to_vec()).collect();
    let mut owner = vec![usize::MAX; cfg.items + 1];
    for (g, r) in routes.iter().enumerate() {
        for &i in r {
            owner[i as usize] = g;
        }
    }
    let mut users = Vec::with_capacity(cfg.users);
    for _ in 0..cfg.users {
        let intent = rng.gen_range(0..cfg.intents);
        let n = rng.gen_range(cfg.min_len..=cfg.max_len);
        let on_route = rng.gen::<f64>() < cfg.overlap;
        let route = &routes[intent];
        let mut history: Vec<u32> = if on_route {
            route[..n].to_vec()
        } else {
            route.choose_multiple(&mut rng, n).copied().collect()
        };
        for item in history[..n - 3].iter_mut() {
            if rng.gen::<f64>() < cfg.noise {
                *item = loop {
                    let cand = rng.gen_range(1..=cfg.items as u32);
                    if owner[cand as usize] != intent {
                        break cand;
                    }
                };
            }
        }
        users.push(SynthUser {
            intent,
            on_route,
            history,
        });
    }
    Ok(SynthData {
        config: *cfg,
        routes,
        users,
    })
}

impl SynthData {
    /// Events with one-second spacing per user and names `u<k>` / `i<id>`.
    pub fn to_corpus(&self) -> InteractionCorpus {
        InteractionCorpus::from_triples(self.users.iter().enumerate().flat_map(|(u, user)| {
            user.history
                .iter()
                .enumerate()
                .map(move |(t, &i)| (format!("u{u}"), format!("i{i}"), t as i64))
        }))
    }

    /// `user<TAB>item<TAB>timestamp` rows.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (u, user) in self.users.iter().enumerate() {
            for (t, i) in user.history.iter().enumerate() {
                writeln!(w, "u{u}\ti{i}\t{t}")?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(overlap: f64, noise: f64) -> SynthConfig {
        SynthConfig {
            users: 200,
            items: 100,
            intents: 5,
            noise,
            overlap,
            min_len: 5,
            max_len: 12,
            seed: 3,
        }
    }

    #[test]
    fn histories_respect_pools() {
        let d = generate(&small(0.5, 0.2)).unwrap();
        assert_eq!(d.users.len(), 200);
        for u in &d.users {
            assert!((5..=12).contains(&u.history.len()));
            let route = &d.routes[u.intent];
            for &i in &u.history[u.history.len() - 3..] {
                assert!(route.contains(&i));
            }
            if u.on_route {
                for (t, &i) in u.history.iter().enumerate().skip(u.history.len() - 3) {
                    assert_eq!(i, route[t]);
                }
            }
        }
    }

    #[test]
    fn noise_free_iid_users_have_distinct_pool_items() {
        let d = generate(&small(0.0, 0.0)).unwrap();
        for u in &d.users {
            assert!(!u.on_route);
            let mut h = u.history.clone();
            h.sort_unstable();
            h.dedup();
            assert_eq!(h.len(), u.history.len());
            assert!(u.history.iter().all(|i| d.routes[u.intent].contains(i)));
        }
    }

    #[test]
    fn same_seed_same_data() {
        assert_eq!(generate(&small(0.3, 0.1)).unwrap(), generate(&small(0.3, 0.1)).unwrap());
        assert_ne!(
            generate(&small(0.3, 0.1)).unwrap(),
            generate(&SynthConfig { seed: 4, ..small(0.3, 0.1) }).unwrap()
        );
    }

    #[test]
    fn corpus_counts() {
        let d = generate(&small(0.5, 0.1)).unwrap();
        let c = d.to_corpus();
        assert_eq!(c.user_count(), 200);
        assert_eq!(c.events.len(), d.users.iter().map(|u| u.history.len()).sum::<usize>());
        assert!(generate(&SynthConfig { max_len: 30, ..small(0.5, 0.1) }).is_err());
    }
}
