use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::lm::{padded, Alphabet, Symbol, SymbolString};

/// Continuation counts of one history.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ContextCounts {
    /// C(h)
    pub total: u64,
    /// (outcome index, C(h, y)), sorted by outcome; only observed outcomes.
    pub next: Vec<(u32, u64)>,
}

impl ContextCounts {
    fn add(&mut self, outcome: u32, by: u64) {
        self.total += by;
        match self.next.binary_search_by_key(&outcome, |&(o, _)| o) {
            Ok(i) => self.next[i].1 += by,
            Err(i) => self.next.insert(i, (outcome, by)),
        }
    }

    pub fn count(&self, outcome: usize) -> u64 {
        self.next
            .binary_search_by_key(&(outcome as u32), |&(o, _)| o)
            .map_or(0, |i| self.next[i].1)
    }

    /// N_T(h, •)
    pub fn types(&self) -> u64 {
        self.next.len() as u64
    }
}

/// Counts of every order-k event, k = 1..=n̂, over BOS-padded strings with a
/// terminal EOS event each. Only observed histories are stored.
#[derive(Clone, Debug, PartialEq)]
pub struct CountTable {
    alphabet: Alphabet,
    n_hat: usize,
    /// `orders[k − 1]` maps length-(k−1) histories to their continuations.
    orders: Vec<HashMap<Box<[Symbol]>, ContextCounts>>,
}

const SHARD_SIZE: usize = 4096;

impl CountTable {
    pub fn new(alphabet: Alphabet, n_hat: usize) -> Result<Self> {
        if n_hat == 0 {
            return Err(Error::Input("n̂ must be at least 1".into()));
        }
        Ok(Self { alphabet, n_hat, orders: vec![HashMap::new(); n_hat] })
    }

    /// Counts a corpus, sharding by string and merging.
    pub fn count(alphabet: Alphabet, corpus: &Corpus, n_hat: usize) -> Result<Self> {
        Self::count_strings(alphabet, &corpus.strings, n_hat)
    }

    pub fn count_strings(alphabet: Alphabet, strings: &[SymbolString], n_hat: usize) -> Result<Self> {
        let empty = Self::new(alphabet, n_hat)?;
        strings.iter().try_for_each(|s| s.check(alphabet))?;
        let shards: Vec<Self> = strings
            .par_chunks(SHARD_SIZE)
            .map(|chunk| {
                let mut t = empty.clone();
                for s in chunk {
                    t.add_string(s);
                }
                t
            })
            .collect();
        Ok(shards.into_iter().fold(empty, |mut acc, t| {
            acc.merge(t);
            acc
        }))
    }

    pub fn add_string(&mut self, y: &SymbolString) {
        let width = self.n_hat - 1;
        let buf = padded(self.alphabet, y, self.n_hat);
        for t in 0..=y.len() {
            let window = &buf[t..t + width];
            let outcome = if t < y.len() { y.symbols()[t] } else { self.alphabet.eos_outcome() as Symbol };
            for k in 1..=self.n_hat {
                let h = &window[width - (k - 1)..];
                let map = &mut self.orders[k - 1];
                match map.get_mut(h) {
                    Some(c) => c.add(outcome, 1),
                    None => {
                        let mut c = ContextCounts::default();
                        c.add(outcome, 1);
                        map.insert(h.into(), c);
                    }
                }
            }
        }
    }

    /// Associative, commutative merge of two tables of equal shape.
    pub fn merge(&mut self, other: Self) {
        assert_eq!(self.n_hat, other.n_hat, "merging count tables of different orders");
        for (mine, theirs) in self.orders.iter_mut().zip(other.orders) {
            for (h, c) in theirs {
                let slot = mine.entry(h).or_default();
                for (o, n) in c.next {
                    slot.add(o, n);
                }
            }
        }
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    pub fn n_hat(&self) -> usize {
        self.n_hat
    }

    /// Counts for a history of any length `< n̂`.
    pub fn context(&self, history: &[Symbol]) -> Option<&ContextCounts> {
        self.orders.get(history.len())?.get(history)
    }

    /// C(h)
    pub fn history_total(&self, history: &[Symbol]) -> u64 {
        self.context(history).map_or(0, |c| c.total)
    }

    /// C(h, y)
    pub fn event_count(&self, history: &[Symbol], outcome: usize) -> u64 {
        self.context(history).map_or(0, |c| c.count(outcome))
    }

    /// N_T(h, •)
    pub fn types_after(&self, history: &[Symbol]) -> u64 {
        self.context(history).map_or(0, ContextCounts::types)
    }

    /// N_T(•, y) at order k: the number of length-(k−1) histories followed by y.
    pub fn types_before(&self, k: usize, outcome: usize) -> u64 {
        self.orders[k - 1].values().filter(|c| c.count(outcome) > 0).count() as u64
    }

    /// N_T(•, •) at order k.
    pub fn total_types(&self, k: usize) -> u64 {
        self.orders[k - 1].values().map(ContextCounts::types).sum()
    }

    pub fn num_histories(&self, k: usize) -> usize {
        self.orders[k - 1].len()
    }

    /// Sorted `k<TAB>h-ids<TAB>y-id<TAB>count` lines; EOS is written as its id |Σ|+1.
    pub fn to_lines(&self) -> String {
        let mut rows: Vec<(usize, Vec<Symbol>, Symbol, u64)> = Vec::new();
        for (i, map) in self.orders.iter().enumerate() {
            for (h, c) in map {
                for &(o, n) in &c.next {
                    rows.push((i + 1, h.to_vec(), self.alphabet.outcome_symbol(o as usize), n));
                }
            }
        }
        rows.sort();
        let mut out = String::new();
        for (k, h, y, n) in rows {
            let h: Vec<String> = h.iter().map(ToString::to_string).collect();
            let _ = writeln!(out, "{k}\t{}\t{y}\t{n}", h.join(" "));
        }
        out
    }

    /// Inverse of [`CountTable::to_lines`].
    pub fn from_lines(alphabet: Alphabet, n_hat: usize, text: &str) -> Result<Self> {
        let mut table = Self::new(alphabet, n_hat)?;
        for line in text.lines().filter(|l| !l.is_empty()) {
            let bad = || Error::Format(format!("bad count line `{line}`"));
            let fields: Vec<&str> = line.split('\t').collect();
            let [k, h, y, n] = fields[..] else { return Err(bad()) };
            let k: usize = k.parse().map_err(|_| bad())?;
            let h: Vec<Symbol> = h.split_whitespace().map(str::parse).collect::<Result<_, _>>().map_err(|_| bad())?;
            let y: Symbol = y.parse().map_err(|_| bad())?;
            let n: u64 = n.parse().map_err(|_| bad())?;
            let outcome = alphabet.outcome_index(y).ok_or_else(bad)?;
            if k == 0 || k > n_hat || h.len() + 1 != k || h.iter().any(|&s| s as usize >= alphabet.num_history_symbols()) {
                return Err(bad());
            }
            table.orders[k - 1].entry(h.into_boxed_slice()).or_default().add(outcome as u32, n);
        }
        Ok(table)
    }
}
