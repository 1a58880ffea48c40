//! Fixed-capacity replay memory filled by reservoir sampling.
//!
//! Every stream sample offered to the buffer has the same probability
//! `capacity / seen` of being held, regardless of when it arrived. Items keep
//! the logits recorded when they were inserted; those targets are never
//! refreshed.

use std::io::Write;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng::Rng;
use crate::scalar::Scalar;

/// A stored `(input, label, logits)` triple.
#[derive(Debug, Clone, PartialEq)]
pub struct BufferItem<T> {
    pub x: Vec<T>,
    pub y: usize,
    pub z: Vec<T>,
}

/// A minibatch drawn from the buffer.
#[derive(Debug, Clone)]
pub struct ReplayBatch<T> {
    pub x: Matrix<T>,
    pub y: Vec<usize>,
    pub z: Matrix<T>,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    input_dim: usize,
    num_classes: usize,
    items: Vec<BufferItem<T>>,
    seen: u64,
    rng: Rng,
}

pub const BUFFER_DUMP_MAGIC: [u8; 8] = *b"SERBUF\x00\x01";

impl<T: Scalar> ReplayBuffer<T> {
    pub fn new(capacity: usize, input_dim: usize, num_classes: usize, rng: Rng) -> Self {
        Self {
            capacity,
            input_dim,
            num_classes,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            seen: 0,
            rng,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Total number of stream samples offered so far.
    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn items(&self) -> &[BufferItem<T>] {
        &self.items
    }

    /// Offers one stream sample (Vitter's Algorithm R).
    pub fn reservoir_update(&mut self, x: &[T], y: usize, z: &[T]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::dim("reservoir_update(x)", (1, x.len()), (1, self.input_dim)));
        }
        if z.len() != self.num_classes {
            return Err(Error::dim("reservoir_update(z)", (1, z.len()), (1, self.num_classes)));
        }
        if self.items.len() < self.capacity {
            self.items.push(BufferItem {
                x: x.to_vec(),
                y,
                z: z.to_vec(),
            });
        } else if self.capacity > 0 {
            let slot = self.rng.random_range(0..=self.seen);
            if slot < self.capacity as u64 {
                let item = &mut self.items[slot as usize];
                item.x.copy_from_slice(x);
                item.y = y;
                item.z.copy_from_slice(z);
            }
        }
        self.seen += 1;
        Ok(())
    }

    /// Draws `batch_size` items uniformly with replacement.
    pub fn sample_batch(&mut self, batch_size: usize) -> Result<ReplayBatch<T>> {
        if self.items.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let picks: Vec<usize> = (0..batch_size)
            .map(|_| self.rng.random_range(0..self.items.len()))
            .collect();
        let mut x = Vec::with_capacity(batch_size * self.input_dim);
        let mut z = Vec::with_capacity(batch_size * self.num_classes);
        let mut y = Vec::with_capacity(batch_size);
        for &i in &picks {
            let item = &self.items[i];
            x.extend_from_slice(&item.x);
            z.extend_from_slice(&item.z);
            y.push(item.y);
        }
        Ok(ReplayBatch {
            x: Matrix::new(batch_size, self.input_dim, x)?,
            y,
            z: Matrix::new(batch_size, self.num_classes, z)?,
        })
    }

    /// Writes the buffer contents.
    ///
    /// ```text
    /// magic        8 bytes  b"SERBUF\x00\x01"
    /// capacity     u32 BE
    /// input_dim    u32 BE
    /// num_classes  u32 BE
    /// seen         u64 BE
    /// count        u32 BE
    /// items        count x { label u32 BE, x f64 LE x input_dim, z f64 LE x num_classes }
    /// ```
    pub fn write_dump<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(&BUFFER_DUMP_MAGIC)?;
        for v in [self.capacity, self.input_dim, self.num_classes] {
            out.write_all(&(v as u32).to_be_bytes())?;
        }
        out.write_all(&self.seen.to_be_bytes())?;
        out.write_all(&(self.items.len() as u32).to_be_bytes())?;
        for item in &self.items {
            out.write_all(&(item.y as u32).to_be_bytes())?;
            for v in item.x.iter().chain(&item.z) {
                let v = v.to_f64().ok_or(Error::NonFinite("buffer dump value"))?;
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }
}
