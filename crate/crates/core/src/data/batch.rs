use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::PatchSource;

/// Permutation of `0..len` for one epoch; a pure function of
/// `(seed, epoch)`.
pub fn epoch_order(len: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng);
    order
}

/// Shuffled full batches of one epoch. The trailing partial batch is
/// dropped.
pub struct Batches<'a, S: ?Sized> {
    source: &'a S,
    order: Vec<usize>,
    batch_size: usize,
    next: usize,
}

impl<'a, S: PatchSource + ?Sized> Batches<'a, S> {
    /// Patch indices of each batch, in yield order.
    pub fn index_batches(&self) -> impl Iterator<Item = &[usize]> {
        self.order.chunks_exact(self.batch_size)
    }

    pub fn num_batches(&self) -> usize {
        self.order.len() / self.batch_size
    }

    /// Skip ahead so the next batch yielded is batch `index`.
    pub fn seek(&mut self, index: usize) {
        self.next = index.min(self.num_batches());
    }
}

impl<S: PatchSource + ?Sized> Iterator for Batches<'_, S> {
    type Item = Result<(Tensor<f32>, Tensor<f32>)>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.num_batches() {
            return None;
        }
        let start = self.next * self.batch_size;
        self.next += 1;
        Some(assemble(self.source, &self.order[start..start + self.batch_size]))
    }
}

/// Stack the given patches into `(hazy, clear)` batch tensors.
pub fn assemble<S: PatchSource + ?Sized>(source: &S, indices: &[usize]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let (hazy, clear): (Vec<_>, Vec<_>) = indices
        .iter()
        .map(|&i| source.patch(i))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    Ok((Tensor::stack(&hazy)?, Tensor::stack(&clear)?))
}

pub fn make_batches<S: PatchSource + ?Sized>(
    source: &S,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Batches<'_, S>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch_size must be at least 1"));
    }
    Ok(Batches {
        source,
        order: epoch_order(source.len(), seed, epoch),
        batch_size,
        next: 0,
    })
}
