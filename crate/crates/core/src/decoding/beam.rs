use super::{checked_logprobs, rank, DecodeConfig, Decoded, Scorer, TokenId, BOS, EOS};
use crate::error::Result;

#[derive(Debug, Clone)]
struct Hyp {
    /// Starts with `<bos>`.
    tokens: Vec<TokenId>,
    logprob: f64,
}

/// Scored one-token extensions of `live`, best first. At `max_len` words
/// only `<eos>` is allowed; `<bos>` and impossible tokens never are.
pub(super) fn expand<S: Scorer + ?Sized>(
    scorer: &S,
    tags: &[String],
    prefix: &[TokenId],
    logprob: f64,
    max_len: usize,
) -> Result<Vec<(TokenId, f64)>> {
    let lp = checked_logprobs(scorer, prefix, tags)?;
    let words = prefix.len() - 1;
    let out = lp
        .iter()
        .enumerate()
        .map(|(t, &l)| (t as TokenId, l))
        .filter(|&(t, l)| t != BOS && l > f64::NEG_INFINITY && (words < max_len || t == EOS))
        .map(|(t, l)| (t, logprob + l))
        .collect();
    Ok(out)
}

fn insert_finished(pool: &mut Vec<Hyp>, hyp: Hyp, beam: usize) {
    pool.push(hyp);
    pool.sort_by(|a, b| rank(a.logprob, &a.tokens, b.logprob, &b.tokens));
    pool.truncate(beam);
}

fn to_decoded(h: Hyp) -> Decoded {
    let ids = h.tokens[1..h.tokens.len() - 1].to_vec();
    Decoded {
        ids,
        logprob: h.logprob,
        satisfied: 0,
    }
}

/// Length-capped beam search from `<bos>`. Returns up to `beam_size`
/// finished captions, best first; equal scores are ordered by token ids.
pub fn beam_search<S: Scorer + ?Sized>(
    scorer: &S,
    tags: &[String],
    cfg: &DecodeConfig,
) -> Result<Vec<Decoded>> {
    cfg.validate()?;
    let beam = cfg.beam_size;
    let mut live = vec![Hyp {
        tokens: vec![BOS],
        logprob: 0.0,
    }];
    let mut pool: Vec<Hyp> = Vec::new();

    while !live.is_empty() {
        let mut candidates: Vec<Hyp> = Vec::new();
        for h in &live {
            for (t, lp) in expand(scorer, tags, &h.tokens, h.logprob, cfg.max_len)? {
                let mut tokens = h.tokens.clone();
                tokens.push(t);
                candidates.push(Hyp {
                    tokens,
                    logprob: lp,
                });
            }
        }
        candidates.sort_by(|a, b| rank(a.logprob, &a.tokens, b.logprob, &b.tokens));

        let mut next = Vec::with_capacity(beam);
        for c in candidates {
            if next.len() == beam {
                break;
            }
            if *c.tokens.last().expect("non-empty") == EOS {
                insert_finished(&mut pool, c, beam);
            } else {
                next.push(c);
            }
        }
        live = next;

        // Scores only decrease, so a full pool strictly ahead of every live
        // hypothesis is final.
        let best_live = live.first().map_or(f64::NEG_INFINITY, |h| h.logprob);
        if pool.len() == beam && pool.last().expect("full").logprob > best_live {
            break;
        }
    }
    Ok(pool.into_iter().map(to_decoded).collect())
}

/// Repeatedly takes the most likely next token (lowest id on ties).
pub fn greedy<S: Scorer + ?Sized>(
    scorer: &S,
    tags: &[String],
    cfg: &DecodeConfig,
) -> Result<Decoded> {
    cfg.validate()?;
    let mut tokens = vec![BOS];
    let mut logprob = 0.0;
    loop {
        let (t, lp) = expand(scorer, tags, &tokens, logprob, cfg.max_len)?
            .into_iter()
            .min_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)))
            .ok_or_else(|| crate::Error::Decode("no token has non-zero probability".into()))?;
        tokens.push(t);
        logprob = lp;
        if t == EOS {
            return Ok(to_decoded(Hyp { tokens, logprob }));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::testing::{enumerate, normalize, random_scorer, TableScorer};
    use super::super::Vocabulary;
    use super::*;
    use std::collections::BTreeMap;

    fn cfg(beam: usize, max_len: usize) -> DecodeConfig {
        DecodeConfig {
            beam_size: beam,
            max_len,
            ..Default::default()
        }
    }

    #[test]
    fn beam_one_is_greedy() {
        for seed in 0..50 {
            let s = random_scorer(&["a", "b", "c"], 4, seed);
            let b = beam_search(&s, &[], &cfg(1, 4)).unwrap();
            assert_eq!(b[0], greedy(&s, &[], &cfg(1, 4)).unwrap(), "seed {seed}");
        }
    }

    #[test]
    fn fixed_table_matches_exhaustive_search() {
        // <bos>, <eos>, <unk>, a
        let vocab = Vocabulary::from_words(["a"]);
        let a = vocab.id("a").unwrap();
        let rows = BTreeMap::from([
            (vec![BOS], normalize(&[0.0, 0.1, 0.2, 0.7])),
            (vec![BOS, a], normalize(&[0.0, 0.6, 0.1, 0.3])),
            (vec![BOS, 2], normalize(&[0.0, 0.5, 0.25, 0.25])),
        ]);
        let s = TableScorer {
            vocab,
            rows,
            fallback: normalize(&[0.0, 0.5, 0.25, 0.25]),
        };
        let best = enumerate(&s, 3)
            .into_iter()
            .min_by(|x, y| rank(x.1, &x.0, y.1, &y.0))
            .unwrap();
        let got = &beam_search(&s, &[], &cfg(2, 3)).unwrap()[0];
        assert_eq!(got.ids, [a]);
        assert_eq!(best.0, [a]);
        assert!((got.logprob - best.1).abs() < 1e-12);
    }

    #[test]
    fn full_width_beam_matches_exhaustive_search() {
        for seed in 0..50 {
            let s = random_scorer(&["a"], 3, seed);
            let best = enumerate(&s, 3)
                .into_iter()
                .min_by(|x, y| rank(x.1, &x.0, y.1, &y.0))
                .unwrap();
            // 2 word tokens, so at most 8 live prefixes
            let wide = &beam_search(&s, &[], &cfg(8, 3)).unwrap()[0];
            assert_eq!(wide.ids, best.0);
            assert!((wide.logprob - best.1).abs() < 1e-9);
            let narrow = &beam_search(&s, &[], &cfg(2, 3)).unwrap()[0];
            assert!(narrow.logprob <= wide.logprob + 1e-12);
        }
    }

    #[test]
    fn deterministic() {
        let s = random_scorer(&["a", "b", "c"], 4, 7);
        assert_eq!(
            beam_search(&s, &[], &cfg(3, 4)).unwrap(),
            beam_search(&s, &[], &cfg(3, 4)).unwrap()
        );
    }

    #[test]
    fn results_sorted_and_capped() {
        let s = random_scorer(&["a", "b", "c"], 4, 3);
        let out = beam_search(&s, &[], &cfg(3, 4)).unwrap();
        assert!(out.len() <= 3);
        assert!(out.windows(2).all(|w| w[0].logprob >= w[1].logprob));
        assert!(out.iter().all(|d| d.ids.len() <= 4));
    }

    #[test]
    fn bad_scorer_is_error() {
        let vocab = Vocabulary::from_words(["a"]);
        let s = TableScorer {
            vocab,
            rows: BTreeMap::new(),
            fallback: vec![-1.0; 4],
        };
        assert!(beam_search(&s, &[], &cfg(2, 3)).is_err());
    }
}
