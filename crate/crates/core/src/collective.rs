//! Ring reduce-scatter and all-gather executed on real vectors across
//! in-process virtual workers, and the S-SGD update built on them.
//!
//! Workers advance in lock step: every round, each worker first posts one
//! message to its right neighbour's inbox, then every worker drains its inbox.
//! A chunk is always accumulated in ring-arrival order, so every replica ends
//! up with bit-identical values.

use std::collections::VecDeque;
use std::ops::Range;

use crate::error::{Error, Result};

/// Element range of chunk `k` when `len` elements are split over `p` chunks:
/// the first `len % p` chunks get one extra element.
pub fn chunk_range(len: usize, p: usize, k: usize) -> Range<usize> {
    let base = len / p;
    let extra = len % p;
    let start = k * base + k.min(extra);
    let size = base + usize::from(k < extra);
    start..start + size
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub index: usize,
    /// First element covered by this chunk.
    pub offset: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Message {
    chunk: usize,
    offset: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct WorkerState {
    pub rank: usize,
    pub vector: Vec<f64>,
    inbox: VecDeque<Message>,
}

impl WorkerState {
    fn new(rank: usize, vector: Vec<f64>) -> Self {
        Self {
            rank,
            vector,
            inbox: VecDeque::new(),
        }
    }
}

/// Per-round bookkeeping: elements each worker sent in that round.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Traffic {
    pub rounds: usize,
    pub sent_per_round: Vec<Vec<usize>>,
}

impl Traffic {
    fn record(&mut self, sent: Vec<usize>) {
        self.rounds += 1;
        self.sent_per_round.push(sent);
    }
}

#[derive(Debug, Clone)]
pub struct ReduceScatterOutput {
    /// `chunks[p]` is the fully reduced chunk held by worker `p`, which is
    /// chunk `(p + 1) % P`.
    pub chunks: Vec<Chunk>,
    pub len: usize,
    pub traffic: Traffic,
}

#[derive(Debug, Clone)]
pub struct AllGatherOutput {
    pub vectors: Vec<Vec<f64>>,
    pub traffic: Traffic,
}

fn check_same_len(vectors: &[Vec<f64>]) -> Result<usize> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::InvalidArgument("need at least one worker".into()))?
        .len();
    if let Some((p, v)) = vectors.iter().enumerate().find(|(_, v)| v.len() != first) {
        return Err(Error::LengthMismatch(format!(
            "worker {p} holds {} elements, worker 0 holds {first}",
            v.len()
        )));
    }
    Ok(first)
}

/// Ring reduce-scatter over `P = vectors.len()` workers in `P - 1` rounds.
///
/// In round `r` worker `p` sends its running copy of chunk `(p - r) mod P` to
/// worker `p + 1`, which adds its own contribution.
pub fn ring_reduce_scatter(vectors: &[Vec<f64>]) -> Result<ReduceScatterOutput> {
    let len = check_same_len(vectors)?;
    let p = vectors.len();
    let mut workers: Vec<_> = vectors
        .iter()
        .enumerate()
        .map(|(rank, v)| WorkerState::new(rank, v.clone()))
        .collect();
    let mut traffic = Traffic::default();

    for r in 0..p.saturating_sub(1) {
        let mut sent = vec![0; p];
        for src in 0..p {
            let chunk = (src + p - r % p) % p;
            let range = chunk_range(len, p, chunk);
            let data = workers[src].vector[range.clone()].to_vec();
            sent[src] = data.len();
            workers[(src + 1) % p].inbox.push_back(Message {
                chunk,
                offset: range.start,
                data,
            });
        }
        for w in &mut workers {
            while let Some(msg) = w.inbox.pop_front() {
                let own = &mut w.vector[msg.offset..msg.offset + msg.data.len()];
                for (dst, incoming) in own.iter_mut().zip(&msg.data) {
                    *dst += incoming;
                }
                debug_assert_eq!(chunk_range(len, p, msg.chunk).start, msg.offset);
            }
        }
        traffic.record(sent);
    }

    let chunks = workers
        .iter()
        .map(|w| {
            let index = (w.rank + 1) % p;
            let range = chunk_range(len, p, index);
            Chunk {
                index,
                offset: range.start,
                data: w.vector[range].to_vec(),
            }
        })
        .collect();
    Ok(ReduceScatterOutput {
        chunks,
        len,
        traffic,
    })
}

/// Ring all-gather: `chunks[p]` starts on worker `p`; in each of `P - 1`
/// rounds every worker forwards the chunk it received last (its own in the
/// first round) to its right neighbour.
pub fn ring_all_gather(chunks: &[Chunk]) -> Result<AllGatherOutput> {
    let p = chunks.len();
    if p == 0 {
        return Err(Error::InvalidArgument("need at least one worker".into()));
    }
    let mut order: Vec<&Chunk> = chunks.iter().collect();
    order.sort_by_key(|c| c.offset);
    let mut next = 0;
    for c in &order {
        if c.offset != next {
            return Err(Error::Coverage(format!(
                "chunk {} starts at element {} but coverage reached {next}",
                c.index, c.offset
            )));
        }
        next += c.data.len();
    }
    let len = next;

    let mut workers: Vec<_> = (0..p)
        .map(|rank| {
            let mut v = vec![0.0; len];
            let c = &chunks[rank];
            v[c.offset..c.offset + c.data.len()].copy_from_slice(&c.data);
            WorkerState::new(rank, v)
        })
        .collect();
    // The chunk each worker forwards next.
    let mut forward: Vec<usize> = (0..p).collect();
    let mut traffic = Traffic::default();

    for _ in 0..p - 1 {
        let mut sent = vec![0; p];
        for src in 0..p {
            let c = &chunks[forward[src]];
            let data = workers[src].vector[c.offset..c.offset + c.data.len()].to_vec();
            sent[src] = data.len();
            workers[(src + 1) % p].inbox.push_back(Message {
                chunk: forward[src],
                offset: c.offset,
                data,
            });
        }
        for w in &mut workers {
            while let Some(msg) = w.inbox.pop_front() {
                w.vector[msg.offset..msg.offset + msg.data.len()].copy_from_slice(&msg.data);
                forward[w.rank] = msg.chunk;
            }
        }
        traffic.record(sent);
    }

    Ok(AllGatherOutput {
        vectors: workers.into_iter().map(|w| w.vector).collect(),
        traffic,
    })
}

/// Sum over workers via reduce-scatter then all-gather.
pub fn ring_all_reduce(vectors: &[Vec<f64>]) -> Result<AllGatherOutput> {
    let rs = ring_reduce_scatter(vectors)?;
    let mut ag = ring_all_gather(&rs.chunks)?;
    let mut traffic = rs.traffic;
    traffic.rounds += ag.traffic.rounds;
    traffic
        .sent_per_round
        .append(&mut ag.traffic.sent_per_round);
    ag.traffic = traffic;
    Ok(ag)
}

/// Element-wise mean over workers; the 1/P scaling happens after the gather.
pub fn all_reduce_average(vectors: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let p = vectors.len() as f64;
    let mut out = ring_all_reduce(vectors)?.vectors;
    for v in &mut out {
        for x in v.iter_mut() {
            *x /= p;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    pub weights: Vec<f64>,
    pub learning_rate: f64,
}

/// One synchronous SGD step: `w <- w - lr * mean(gradients)` on every replica.
pub fn sgd_step(states: &[SgdState], local_gradients: &[Vec<f64>]) -> Result<Vec<SgdState>> {
    let first = states
        .first()
        .ok_or_else(|| Error::InvalidArgument("need at least one worker".into()))?;
    if states.len() != local_gradients.len() {
        return Err(Error::LengthMismatch(format!(
            "{} replicas but {} gradient vectors",
            states.len(),
            local_gradients.len()
        )));
    }
    for (p, s) in states.iter().enumerate() {
        if s.weights != first.weights || s.learning_rate != first.learning_rate {
            return Err(Error::ReplicaDivergence(format!(
                "worker {p} does not match worker 0"
            )));
        }
        if !(s.learning_rate.is_finite() && s.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be > 0, got {}",
                s.learning_rate
            )));
        }
    }
    let len = check_same_len(local_gradients)?;
    if len != first.weights.len() {
        return Err(Error::LengthMismatch(format!(
            "gradients hold {len} elements, weights hold {}",
            first.weights.len()
        )));
    }
    let mean = all_reduce_average(local_gradients)?;
    Ok(states
        .iter()
        .zip(mean)
        .map(|(s, g)| SgdState {
            weights: s
                .weights
                .iter()
                .zip(&g)
                .map(|(w, g)| w - s.learning_rate * g)
                .collect(),
            learning_rate: s.learning_rate,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vectors(p: usize, len: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..p)
            .map(|_| (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    }

    fn brute_sum(vectors: &[Vec<f64>]) -> Vec<f64> {
        let mut out = vec![0.0; vectors[0].len()];
        for v in vectors {
            for (o, x) in out.iter_mut().zip(v) {
                *o += x;
            }
        }
        out
    }

    fn scale(vectors: &[Vec<f64>], i: usize) -> f64 {
        vectors
            .iter()
            .map(|v| v[i].abs())
            .sum::<f64>()
            .max(f64::MIN_POSITIVE)
    }

    #[test]
    fn chunking_covers_exactly() {
        for len in 0..30 {
            for p in 1..9 {
                let mut next = 0;
                for k in 0..p {
                    let r = chunk_range(len, p, k);
                    assert_eq!(r.start, next);
                    assert!(r.len() == len / p || r.len() == len.div_ceil(p));
                    next = r.end;
                }
                assert_eq!(next, len);
            }
        }
    }

    #[test]
    fn single_worker_is_identity() {
        let v = vec![vec![1.5, -2.0, 3.0]];
        let rs = ring_reduce_scatter(&v).unwrap();
        assert_eq!(rs.traffic.rounds, 0);
        assert_eq!(rs.chunks[0].data, v[0]);
        let ag = ring_all_gather(&rs.chunks).unwrap();
        assert_eq!(ag.traffic.rounds, 0);
        assert_eq!(ag.vectors, v);
    }

    #[test]
    fn identical_inputs_scale_by_p() {
        let v: Vec<f64> = (0..8).map(|i| i as f64 * 0.5 - 1.0).collect();
        let rs = ring_reduce_scatter(&vec![v.clone(); 4]).unwrap();
        assert_eq!(rs.traffic.rounds, 3);
        for (p, c) in rs.chunks.iter().enumerate() {
            assert_eq!(c.index, (p + 1) % 4);
            let expect: Vec<f64> = v[c.offset..c.offset + 2].iter().map(|x| 4.0 * x).collect();
            assert_eq!(c.data, expect);
        }
    }

    #[test]
    fn reduce_scatter_matches_brute_force() {
        let v = random_vectors(4, 8, 11);
        let sum = brute_sum(&v);
        let rs = ring_reduce_scatter(&v).unwrap();
        for c in &rs.chunks {
            for (j, x) in c.data.iter().enumerate() {
                let i = c.offset + j;
                assert!((x - sum[i]).abs() <= 1e-12 * scale(&v, i));
            }
        }
    }

    #[test]
    fn all_gather_of_known_partition() {
        let u: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let chunks: Vec<_> = (0..4)
            .map(|k| {
                let r = chunk_range(10, 4, k);
                Chunk {
                    index: k,
                    offset: r.start,
                    data: u[r].to_vec(),
                }
            })
            .collect();
        let out = ring_all_gather(&chunks).unwrap();
        assert_eq!(out.traffic.rounds, 3);
        assert!(out.vectors.iter().all(|v| *v == u));
    }

    #[test]
    fn all_gather_rejects_gaps_and_overlaps() {
        let gap = vec![
            Chunk {
                index: 0,
                offset: 0,
                data: vec![1.0],
            },
            Chunk {
                index: 1,
                offset: 2,
                data: vec![1.0],
            },
        ];
        assert!(matches!(ring_all_gather(&gap), Err(Error::Coverage(_))));
        let overlap = vec![
            Chunk {
                index: 0,
                offset: 0,
                data: vec![1.0, 2.0],
            },
            Chunk {
                index: 1,
                offset: 1,
                data: vec![1.0],
            },
        ];
        assert!(matches!(ring_all_gather(&overlap), Err(Error::Coverage(_))));
    }

    #[test]
    fn length_mismatch_rejected() {
        let v = vec![vec![1.0, 2.0], vec![1.0]];
        assert!(matches!(
            ring_reduce_scatter(&v),
            Err(Error::LengthMismatch(_))
        ));
    }

    #[test]
    fn average_examples() {
        let v = vec![0.25, -3.0, 7.5];
        let out = all_reduce_average(&vec![v.clone(); 5]).unwrap();
        assert!(out.iter().all(|o| *o == v));
        let out = all_reduce_average(&[vec![1.0, 3.0], vec![3.0, 1.0]]).unwrap();
        assert_eq!(out, vec![vec![2.0, 2.0]; 2]);
    }

    #[test]
    fn average_matches_brute_force_mean() {
        let v = random_vectors(8, 1000, 3);
        let sum = brute_sum(&v);
        let out = all_reduce_average(&v).unwrap();
        for w in &out {
            assert_eq!(w, &out[0]);
        }
        for (i, x) in out[0].iter().enumerate() {
            assert!((x - sum[i] / 8.0).abs() <= 1e-12 * scale(&v, i) / 8.0);
        }
    }

    #[test]
    fn sgd_step_examples() {
        let state = SgdState {
            weights: vec![1.0, -2.0, 0.5],
            learning_rate: 0.1,
        };
        let zeros = vec![vec![0.0; 3]; 3];
        let next = sgd_step(&vec![state.clone(); 3], &zeros).unwrap();
        assert!(next.iter().all(|s| s.weights == state.weights));

        // P = 1 is plain mini-batch SGD.
        let g = vec![vec![0.5, 1.0, -1.0]];
        let next = sgd_step(std::slice::from_ref(&state), &g).unwrap();
        assert_eq!(next[0].weights, vec![1.0 - 0.05, -2.0 - 0.1, 0.5 + 0.1]);
    }

    #[test]
    fn sgd_step_matches_reference_update() {
        let p = 4;
        let grads = random_vectors(p, 37, 99);
        let w0: Vec<f64> = random_vectors(1, 37, 5).remove(0);
        let states = vec![
            SgdState {
                weights: w0.clone(),
                learning_rate: 0.1
            };
            p
        ];
        let next = sgd_step(&states, &grads).unwrap();
        let sum = brute_sum(&grads);
        for s in &next {
            assert_eq!(s.weights, next[0].weights);
        }
        for (i, w) in next[0].weights.iter().enumerate() {
            let reference = w0[i] - 0.1 * (sum[i] / p as f64);
            assert!((w - reference).abs() <= 1e-12 * (w0[i].abs() + 0.1 * scale(&grads, i)));
        }
    }

    #[test]
    fn sgd_step_detects_divergence() {
        let a = SgdState {
            weights: vec![1.0],
            learning_rate: 0.1,
        };
        let b = SgdState {
            weights: vec![1.0 + 1e-15],
            learning_rate: 0.1,
        };
        let err = sgd_step(&[a, b], &[vec![0.0], vec![0.0]]).unwrap_err();
        assert!(matches!(err, Error::ReplicaDivergence(_)));
        assert!(err.to_string().contains("replica divergence"));
    }

    proptest! {
        #[test]
        fn per_round_traffic_is_one_chunk(p in 1usize..12, len in 0usize..200, seed in any::<u64>()) {
            let v = random_vectors(p, len, seed);
            let out = ring_all_reduce(&v).unwrap();
            prop_assert_eq!(out.traffic.rounds, 2 * (p - 1));
            for round in &out.traffic.sent_per_round {
                for &n in round {
                    prop_assert!(n == len / p || n == len.div_ceil(p));
                }
            }
            for w in &out.vectors {
                prop_assert_eq!(w, &out.vectors[0]);
            }
        }
    }
}
