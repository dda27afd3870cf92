use std::cmp::Ordering;

use super::beam::expand;
use super::fsm::{ConstraintFsm, StateId};
use super::{rank, DecodeConfig, Decoded, Scorer, TokenId, BOS, EOS};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
struct Hyp {
    tokens: Vec<TokenId>,
    logprob: f64,
    state: StateId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CbsOutput {
    /// Finished captions, most constraints first, then by log-probability.
    pub finished: Vec<Decoded>,
    /// The first entry satisfies at least `min_satisfied` constraints.
    pub met: bool,
}

impl CbsOutput {
    pub fn best(&self) -> &Decoded {
        &self.finished[0]
    }
}

/// Live prefixes of one automaton state, as seen by test observers.
type Bucket = Vec<(Vec<TokenId>, StateId)>;

fn by_score(a: &Hyp, b: &Hyp) -> Ordering {
    rank(a.logprob, &a.tokens, b.logprob, &b.tokens)
}

/// Beam search with one beam of width `beam_size` per automaton state.
/// The result prefers the largest number of satisfied constraints, then
/// log-probability. `met` is false when that number is below the
/// automaton's `min_satisfied`.
pub fn constrained_beam_search<S: Scorer + ?Sized>(
    scorer: &S,
    tags: &[String],
    fsm: &ConstraintFsm,
    cfg: &DecodeConfig,
) -> Result<CbsOutput> {
    search(scorer, tags, fsm, cfg, &mut |_| {})
}

fn search<S: Scorer + ?Sized>(
    scorer: &S,
    tags: &[String],
    fsm: &ConstraintFsm,
    cfg: &DecodeConfig,
    observe: &mut dyn FnMut(&[Bucket]),
) -> Result<CbsOutput> {
    cfg.validate()?;
    let beam = cfg.beam_size;
    let n = fsm.num_states();
    let mut live: Vec<Vec<Hyp>> = vec![Vec::new(); n];
    live[ConstraintFsm::INITIAL].push(Hyp {
        tokens: vec![BOS],
        logprob: 0.0,
        state: ConstraintFsm::INITIAL,
    });
    let mut pools: Vec<Vec<Hyp>> = vec![Vec::new(); n];

    while live.iter().any(|b| !b.is_empty()) {
        let mut buckets: Vec<Vec<Hyp>> = vec![Vec::new(); n];
        for h in live.iter().flatten() {
            for (t, lp) in expand(scorer, tags, &h.tokens, h.logprob, cfg.max_len)? {
                let state = if t == EOS { h.state } else { fsm.next(h.state, t) };
                let mut tokens = h.tokens.clone();
                tokens.push(t);
                buckets[state].push(Hyp {
                    tokens,
                    logprob: lp,
                    state,
                });
            }
        }
        for (state, mut bucket) in buckets.into_iter().enumerate() {
            bucket.sort_by(by_score);
            let mut next = Vec::with_capacity(beam);
            for c in bucket {
                if next.len() == beam {
                    break;
                }
                if *c.tokens.last().expect("non-empty") == EOS {
                    let pool = &mut pools[state];
                    pool.push(c);
                    pool.sort_by(by_score);
                    pool.truncate(beam);
                } else {
                    next.push(c);
                }
            }
            live[state] = next;
        }
        let snapshot: Vec<Vec<(Vec<TokenId>, StateId)>> = live
            .iter()
            .map(|b| b.iter().map(|h| (h.tokens.clone(), h.state)).collect())
            .collect();
        observe(&snapshot);
    }

    let mut finished: Vec<Decoded> = pools
        .into_iter()
        .flatten()
        .map(|h| Decoded {
            ids: h.tokens[1..h.tokens.len() - 1].to_vec(),
            logprob: h.logprob,
            satisfied: fsm.satisfied_count(h.state),
        })
        .collect();
    if finished.is_empty() {
        return Err(Error::Decode("no hypothesis finished".into()));
    }
    finished.sort_by(|a, b| {
        b.satisfied
            .cmp(&a.satisfied)
            .then_with(|| rank(a.logprob, &a.ids, b.logprob, &b.ids))
    });
    let met = finished[0].satisfied >= fsm.min_satisfied();
    Ok(CbsOutput { finished, met })
}

#[cfg(test)]
mod tests {
    use super::super::fsm::build_fsm;
    use super::super::testing::{enumerate, random_scorer};
    use super::super::{beam_search, Vocabulary};
    use super::*;

    fn cfg(beam: usize, max_len: usize) -> DecodeConfig {
        DecodeConfig {
            beam_size: beam,
            max_len,
            ..Default::default()
        }
    }

    fn label(vocab: &Vocabulary, w: &str) -> Vec<Vec<String>> {
        assert!(vocab.id(w).is_some());
        vec![vec![w.to_owned()]]
    }

    #[test]
    fn empty_constraints_equal_plain_beam_search() {
        for seed in 0..50 {
            let s = random_scorer(&["a", "b", "c"], 4, seed);
            let fsm = build_fsm(&[], 0, &s.vocab, true).unwrap();
            for beam in [1, 2, 3, 5] {
                let plain = beam_search(&s, &[], &cfg(beam, 4)).unwrap();
                let cbs = constrained_beam_search(&s, &[], &fsm, &cfg(beam, 4)).unwrap();
                assert_eq!(cbs.finished, plain, "seed {seed} beam {beam}");
                assert!(cbs.met);
            }
        }
    }

    #[test]
    fn single_constraint_appears() {
        for seed in 0..30 {
            let s = random_scorer(&["a", "b", "zebra"], 4, seed);
            let fsm = build_fsm(&label(&s.vocab, "zebra"), 1, &s.vocab, false).unwrap();
            let out = constrained_beam_search(&s, &[], &fsm, &cfg(3, 4)).unwrap();
            assert!(out.met);
            assert!(out.best().ids.contains(&s.vocab.id("zebra").unwrap()));
        }
    }

    #[test]
    fn exhaustive_oracle_with_full_beam() {
        // <bos> <eos> <unk> a b: 3 word tokens, at most 27 live prefixes per step
        for seed in 0..30 {
            let s = random_scorer(&["a", "b"], 3, seed);
            let b = s.vocab.id("b").unwrap();
            let fsm = build_fsm(&label(&s.vocab, "b"), 1, &s.vocab, false).unwrap();
            let best = enumerate(&s, 3)
                .into_iter()
                .filter(|(ids, _)| ids.contains(&b))
                .min_by(|x, y| rank(x.1, &x.0, y.1, &y.0))
                .unwrap();
            let out = constrained_beam_search(&s, &[], &fsm, &cfg(27, 3)).unwrap();
            assert_eq!(out.best().ids, best.0, "seed {seed}");
            assert!((out.best().logprob - best.1).abs() < 1e-9);
            // constraining never beats the unconstrained optimum
            let plain = &beam_search(&s, &[], &cfg(27, 3)).unwrap()[0];
            assert!(out.best().logprob <= plain.logprob + 1e-12);
        }
    }

    #[test]
    fn replay_and_beam_count_invariants() {
        let s = random_scorer(&["a", "b", "c"], 4, 11);
        let labels = vec![vec!["a".to_owned()], vec!["b".to_owned(), "c".to_owned()]];
        let fsm = build_fsm(&labels, 2, &s.vocab, false).unwrap();
        let beam = 3;
        let mut steps = 0;
        search(&s, &[], &fsm, &cfg(beam, 4), &mut |live| {
            steps += 1;
            let total: usize = live.iter().map(Vec::len).sum();
            assert!(total <= fsm.num_states() * beam);
            for (state, bucket) in live.iter().enumerate() {
                for (tokens, st) in bucket {
                    assert_eq!(*st, state);
                    assert_eq!(fsm.run(&tokens[1..]), state, "{tokens:?}");
                }
            }
        })
        .unwrap();
        assert!(steps > 0);
    }

    #[test]
    fn unreachable_minimum_falls_back() {
        // "zebra" is impossible under this scorer
        let mut s = random_scorer(&["a", "zebra"], 3, 5);
        let z = s.vocab.id("zebra").unwrap() as usize;
        for row in s.rows.values_mut().chain(std::iter::once(&mut s.fallback)) {
            row[z] = f64::NEG_INFINITY;
            let zsum = super::super::logsumexp(row);
            row.iter_mut().for_each(|x| *x -= zsum);
        }
        let fsm = build_fsm(&label(&s.vocab, "zebra"), 1, &s.vocab, false).unwrap();
        let out = constrained_beam_search(&s, &[], &fsm, &cfg(3, 3)).unwrap();
        assert!(!out.met);
        assert_eq!(out.best().satisfied, 0);
    }
}
