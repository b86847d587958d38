use std::fmt;

use serde::{Deserialize, Serialize};

/// Head `head` of layer `layer`, both 0-based.
///
/// Under parameter sharing the head index alone identifies a head; such heads
/// are written with `layer = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HeadId {
    pub layer: usize,
    pub head: usize,
}

impl HeadId {
    pub fn new(layer: usize, head: usize) -> Self {
        Self { layer, head }
    }
}

impl fmt::Display for HeadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.layer, self.head)
    }
}

impl std::str::FromStr for HeadId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (l, h) = s.split_once(':').ok_or_else(|| format!("bad head id {s:?}"))?;
        Ok(HeadId {
            layer: l.trim().parse().map_err(|_| format!("bad layer in {s:?}"))?,
            head: h.trim().parse().map_err(|_| format!("bad head in {s:?}"))?,
        })
    }
}

/// Gate value and mask bit for every (layer, head).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadGates {
    n_layers: usize,
    n_heads: usize,
    values: Vec<f32>,
    live: Vec<bool>,
}

impl HeadGates {
    pub fn ones(n_layers: usize, n_heads: usize) -> Self {
        Self {
            n_layers,
            n_heads,
            values: vec![1.0; n_layers * n_heads],
            live: vec![true; n_layers * n_heads],
        }
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    pub fn index(&self, id: HeadId) -> usize {
        assert!(id.layer < self.n_layers && id.head < self.n_heads, "head {id} out of range");
        id.layer * self.n_heads + id.head
    }

    pub fn value(&self, id: HeadId) -> f32 {
        self.values[self.index(id)]
    }

    pub fn set_value(&mut self, id: HeadId, value: f32) {
        let i = self.index(id);
        self.values[i] = value;
    }

    pub fn is_live(&self, id: HeadId) -> bool {
        self.live[self.index(id)]
    }

    pub fn mask(&mut self, id: HeadId) {
        let i = self.index(id);
        self.live[i] = false;
    }

    pub fn unmask(&mut self, id: HeadId) {
        let i = self.index(id);
        self.live[i] = true;
    }

    pub fn unmask_all(&mut self) {
        self.live.iter_mut().for_each(|l| *l = true);
    }

    pub fn reset(&mut self) {
        self.unmask_all();
        self.values.iter_mut().for_each(|v| *v = 1.0);
    }

    /// Gate value seen by the forward pass: 0 for masked heads.
    pub fn effective(&self, id: HeadId) -> f32 {
        let i = self.index(id);
        if self.live[i] {
            self.values[i]
        } else {
            0.0
        }
    }

    pub fn effective_values(&self) -> Vec<f32> {
        self.values
            .iter()
            .zip(&self.live)
            .map(|(&v, &l)| if l { v } else { 0.0 })
            .collect()
    }

    pub fn live_heads(&self) -> Vec<HeadId> {
        self.all_heads().into_iter().filter(|h| self.is_live(*h)).collect()
    }

    pub fn all_heads(&self) -> Vec<HeadId> {
        (0..self.n_layers)
            .flat_map(|l| (0..self.n_heads).map(move |h| HeadId::new(l, h)))
            .collect()
    }

    pub fn live_count(&self) -> usize {
        self.live.iter().filter(|&&l| l).count()
    }

    pub fn mask_bits(&self) -> &[bool] {
        &self.live
    }

    pub fn raw_values(&self) -> &[f32] {
        &self.values
    }

    /// Rebuilds gates from stored state; `None` if lengths disagree.
    pub fn from_parts(n_layers: usize, n_heads: usize, values: Vec<f32>, live: Vec<bool>) -> Option<Self> {
        let n = n_layers * n_heads;
        (values.len() == n && live.len() == n).then_some(Self {
            n_layers,
            n_heads,
            values,
            live,
        })
    }
}
