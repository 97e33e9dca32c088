use rand::Rng;

use crate::autodiff::Tensor;
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::rng::{seeded, SeededRng};

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: usize,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub terminal: bool,
}

/// Bounded ring of transitions with its own sampling generator.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    next: usize,
    rng: SeededRng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("replay capacity must be positive"));
        }
        Ok(Self {
            items: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            next: 0,
            rng: seeded(seed),
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Adds a transition, overwriting the oldest once full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn items(&self) -> &[Transition] {
        &self.items
    }

    fn ensure_nonempty(&self) -> Result<()> {
        if self.items.is_empty() {
            return Err(Error::invalid("sampling from an empty replay buffer"));
        }
        Ok(())
    }

    /// Indices drawn uniformly with replacement.
    pub fn sample_indices(&mut self, n: usize) -> Result<Vec<usize>> {
        self.ensure_nonempty()?;
        let len = self.items.len();
        Ok((0..n).map(|_| self.rng.gen_range(0..len)).collect())
    }

    pub fn sample(&mut self, n: usize) -> Result<Vec<&Transition>> {
        let idx = self.sample_indices(n)?;
        Ok(idx.into_iter().map(|i| &self.items[i]).collect())
    }

    /// `n` sampled states as a `[n, dim]` matrix.
    pub fn sample_states(&mut self, n: usize) -> Result<Tensor> {
        let idx = self.sample_indices(n)?;
        self.gather_states(idx)
    }

    /// Like [`ReplayBuffer::sample_states`] but drawing from `rng`, leaving
    /// the buffer untouched.
    pub fn sample_states_with<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Tensor> {
        self.ensure_nonempty()?;
        let len = self.items.len();
        let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..len)).collect();
        self.gather_states(idx)
    }

    fn gather_states(&self, idx: Vec<usize>) -> Result<Tensor> {
        let n = idx.len();
        let dim = self.items[0].s.len();
        let mut data = Vec::with_capacity(n * dim);
        for i in idx {
            data.extend_from_slice(&self.items[i].s);
        }
        Tensor::matrix(n, dim, data)
    }
}

impl ReplayBuffer {
    /// Stores the transitions oldest first; the sampling state is not kept.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        self.ensure_nonempty()?;
        let n = self.items.len();
        let dim = self.items[0].s.len();
        let start = if n < self.capacity { 0 } else { self.next };
        let ordered = self.items[start..].iter().chain(&self.items[..start]);
        let (mut s, mut a, mut r, mut s2, mut t) = (
            Vec::with_capacity(n * dim),
            Vec::with_capacity(n),
            Vec::with_capacity(n),
            Vec::with_capacity(n * dim),
            Vec::with_capacity(n),
        );
        for x in ordered {
            s.extend_from_slice(&x.s);
            a.push(x.a as f64);
            r.push(x.r);
            s2.extend_from_slice(&x.s_next);
            t.push(if x.terminal { 1.0 } else { 0.0 });
        }
        let mut c = Checkpoint::new("replay");
        c.set_meta("capacity", self.capacity);
        c.push_tensor("s", Tensor::matrix(n, dim, s)?);
        c.push_tensor("a", Tensor::vector(a));
        c.push_tensor("r", Tensor::vector(r));
        c.push_tensor("s_next", Tensor::matrix(n, dim, s2)?);
        c.push_tensor("terminal", Tensor::vector(t));
        Ok(c)
    }

    pub fn from_checkpoint(c: &Checkpoint, seed: u64) -> Result<Self> {
        if c.kind != "replay" {
            return Err(Error::Checkpoint(format!(
                "expected replay, found {}",
                c.kind
            )));
        }
        let (s, a, r, s2, t) = (
            c.tensor("s")?,
            c.tensor("a")?,
            c.tensor("r")?,
            c.tensor("s_next")?,
            c.tensor("terminal")?,
        );
        let n = a.len();
        if s.rank() != 2 || s.shape() != s2.shape() || s.rows() != n || r.len() != n || t.len() != n
        {
            return Err(Error::Checkpoint("inconsistent replay tensors".into()));
        }
        let mut out = Self::new(c.require_meta::<usize>("capacity")?.max(n), seed)?;
        for i in 0..n {
            let action = a.data()[i];
            if !(action >= 0.0 && action.fract() == 0.0) {
                return Err(Error::Checkpoint(format!("bad action {action}")));
            }
            out.push(Transition {
                s: s.row(i).to_vec(),
                a: action as usize,
                r: r.data()[i],
                s_next: s2.row(i).to_vec(),
                terminal: t.data()[i] != 0.0,
            });
        }
        Ok(out)
    }
}
