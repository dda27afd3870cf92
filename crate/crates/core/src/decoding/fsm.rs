use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::OnceLock;

use super::{TokenId, Vocabulary, UNK};
use crate::error::{Error, Result};
use crate::rewrite::RewriteLexicons;

pub type StateId = usize;

/// Largest supported number of constraints (bit mask width).
const MAX_CONSTRAINTS: usize = 16;

/// Stands for any token that occurs in no constraint.
const OTHER: TokenId = TokenId::MAX;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Constraint {
    pub words: Vec<String>,
    /// Accepted token sequences; any one of them satisfies the constraint.
    pub alternatives: Vec<Vec<TokenId>>,
    /// Some word is outside the vocabulary and was mapped to `<unk>`.
    pub oov: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FsmState {
    /// Bit `i` set once constraint `i` has been produced.
    pub satisfied: u32,
    /// `(constraint, alternative, tokens matched)` of a partial match.
    pub progress: Option<(usize, usize, usize)>,
}

/// Deterministic automaton over the vocabulary tracking which constraints a
/// token sequence has produced.
#[derive(Debug, Clone)]
pub struct ConstraintFsm {
    constraints: Vec<Constraint>,
    states: Vec<FsmState>,
    edges: Vec<BTreeMap<TokenId, StateId>>,
    /// Target for tokens that occur in no constraint.
    fallback: Vec<StateId>,
    min_satisfied: usize,
}

fn plural_lexicon() -> &'static RewriteLexicons {
    static LEX: OnceLock<RewriteLexicons> = OnceLock::new();
    LEX.get_or_init(RewriteLexicons::default)
}

fn advance(constraints: &[Constraint], satisfied: u32, c: usize, a: usize, k: usize) -> FsmState {
    if k == constraints[c].alternatives[a].len() {
        FsmState {
            satisfied: satisfied | (1 << c),
            progress: None,
        }
    } else {
        FsmState {
            satisfied,
            progress: Some((c, a, k)),
        }
    }
}

/// First unsatisfied alternative whose first `k` tokens equal `prefix` and
/// whose next token is `tok`.
fn find_continuation(
    constraints: &[Constraint],
    satisfied: u32,
    prefix: &[TokenId],
    tok: TokenId,
) -> Option<FsmState> {
    let k = prefix.len();
    for (c, con) in constraints.iter().enumerate() {
        if satisfied & (1 << c) != 0 {
            continue;
        }
        for (a, alt) in con.alternatives.iter().enumerate() {
            if alt.len() > k && alt[..k] == *prefix && alt[k] == tok {
                return Some(advance(constraints, satisfied, c, a, k + 1));
            }
        }
    }
    None
}

fn step(constraints: &[Constraint], state: FsmState, tok: TokenId) -> FsmState {
    let satisfied = state.satisfied;
    if let Some((c, a, k)) = state.progress {
        let alt = &constraints[c].alternatives[a];
        if alt[k] == tok {
            return advance(constraints, satisfied, c, a, k + 1);
        }
        if let Some(next) = find_continuation(constraints, satisfied, &alt[..k], tok) {
            return next;
        }
    }
    find_continuation(constraints, satisfied, &[], tok).unwrap_or(FsmState {
        satisfied,
        progress: None,
    })
}

/// Builds the automaton for `labels` (each a word sequence). Words outside
/// `vocab` become `<unk>` and the constraint is flagged. With
/// `expand_plurals`, the plural of a label's last word is accepted too when
/// it is in the vocabulary.
pub fn build_fsm(
    labels: &[Vec<String>],
    min_satisfied: usize,
    vocab: &Vocabulary,
    expand_plurals: bool,
) -> Result<ConstraintFsm> {
    if labels.len() > MAX_CONSTRAINTS {
        return Err(Error::Config(format!(
            "{} constraints given, at most {MAX_CONSTRAINTS} supported",
            labels.len()
        )));
    }
    if min_satisfied > labels.len() {
        return Err(Error::Config(format!(
            "min_satisfied {min_satisfied} exceeds the {} constraints",
            labels.len()
        )));
    }
    let mut constraints = Vec::with_capacity(labels.len());
    for words in labels {
        let Some((last, head)) = words.split_last() else {
            return Err(Error::Config("empty constraint".into()));
        };
        let ids = vocab.encode(words);
        let oov = ids.contains(&UNK);
        let mut alternatives = vec![ids];
        if expand_plurals {
            let plural = plural_lexicon().pluralize(last);
            if plural != *last {
                if let Some(p) = vocab.id(&plural) {
                    let mut alt = vocab.encode(head);
                    alt.push(p);
                    if !alt.contains(&UNK) {
                        alternatives.push(alt);
                    }
                }
            }
        }
        constraints.push(Constraint {
            words: words.clone(),
            alternatives,
            oov,
        });
    }

    let mut symbols: Vec<TokenId> = constraints
        .iter()
        .flat_map(|c| c.alternatives.iter().flatten().copied())
        .collect();
    symbols.sort_unstable();
    symbols.dedup();

    let initial = FsmState {
        satisfied: 0,
        progress: None,
    };
    let mut states = vec![initial];
    let mut ids: HashMap<FsmState, StateId> = HashMap::from([(initial, 0)]);
    let mut edges = Vec::new();
    let mut fallback = Vec::new();
    let mut queue = VecDeque::from([0]);
    let mut intern = |s: FsmState, states: &mut Vec<FsmState>, queue: &mut VecDeque<StateId>| {
        *ids.entry(s).or_insert_with(|| {
            states.push(s);
            queue.push_back(states.len() - 1);
            states.len() - 1
        })
    };
    while let Some(id) = queue.pop_front() {
        let state = states[id];
        let mut out = BTreeMap::new();
        for &tok in &symbols {
            let next = intern(step(&constraints, state, tok), &mut states, &mut queue);
            out.insert(tok, next);
        }
        let other = intern(step(&constraints, state, OTHER), &mut states, &mut queue);
        // BFS pops states in id order, so these vectors stay aligned.
        debug_assert_eq!(edges.len(), id);
        edges.push(out);
        fallback.push(other);
    }

    Ok(ConstraintFsm {
        constraints,
        states,
        edges,
        fallback,
        min_satisfied,
    })
}

impl ConstraintFsm {
    pub const INITIAL: StateId = 0;

    pub fn next(&self, state: StateId, tok: TokenId) -> StateId {
        self.edges[state].get(&tok).copied().unwrap_or(self.fallback[state])
    }

    /// State reached from the initial state after `tokens`.
    pub fn run(&self, tokens: &[TokenId]) -> StateId {
        tokens.iter().fold(Self::INITIAL, |s, &t| self.next(s, t))
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn state(&self, id: StateId) -> FsmState {
        self.states[id]
    }

    pub fn satisfied_count(&self, id: StateId) -> usize {
        self.states[id].satisfied.count_ones() as usize
    }

    pub fn is_accepting(&self, id: StateId) -> bool {
        self.satisfied_count(id) >= self.min_satisfied
    }

    pub fn min_satisfied(&self) -> usize {
        self.min_satisfied
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn has_oov(&self) -> bool {
        self.constraints.iter().any(|c| c.oov)
    }
}
