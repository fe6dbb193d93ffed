//! Category-specific memory bank: per category it keeps the (at most) k
//! sketch embeddings most similar to that category's current mean image
//! embedding, and exposes their mean as the category prototype.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{DsnError, Result};
use crate::numkit::{cosine, Matrix};
use crate::Scalar;

/// One stored sketch embedding plus the monotone counter assigned when it
/// was first offered to the bank. Counters break similarity ties: older wins.
#[derive(Clone, Debug, PartialEq)]
pub struct BankEntry<T> {
    pub vector: Vec<T>,
    pub counter: u64,
}

/// Stored entries never receive gradients; the bank holds detached copies.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBank<T> {
    capacity: usize,
    dim: usize,
    slots: BTreeMap<u32, Vec<BankEntry<T>>>,
    counter: u64,
}

impl<T: Scalar> MemoryBank<T> {
    pub fn new(capacity: usize, dim: usize) -> Self {
        assert!(capacity >= 1, "bank capacity must be >= 1");
        Self {
            capacity,
            dim,
            slots: BTreeMap::new(),
            counter: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self, category: u32) -> &[BankEntry<T>] {
        self.slots.get(&category).map_or(&[], Vec::as_slice)
    }

    pub fn categories(&self) -> impl Iterator<Item = u32> + '_ {
        self.slots.keys().copied()
    }

    /// Offer one sketch embedding. If the batch carries no image of the same
    /// category the update is skipped entirely (the reference mean is
    /// undefined); otherwise the candidate set is the current slot content
    /// plus the new sketch, and the k candidates most similar to the mean
    /// same-label image embedding are retained. Ties keep the older entry.
    pub fn update(
        &mut self,
        f_ske: &[T],
        y_ske: u32,
        f_img_batch: &Matrix<T>,
        y_img_batch: &[u32],
    ) -> Result<()> {
        if f_ske.len() != self.dim {
            return Err(DsnError::DimMismatch {
                context: "memory bank sketch vector",
                expected: self.dim,
                got: f_ske.len(),
            });
        }
        if f_img_batch.cols() != self.dim {
            return Err(DsnError::DimMismatch {
                context: "memory bank image batch",
                expected: self.dim,
                got: f_img_batch.cols(),
            });
        }
        if f_img_batch.rows() != y_img_batch.len() {
            return Err(DsnError::CountMismatch(format!(
                "{} image labels for {} rows",
                y_img_batch.len(),
                f_img_batch.rows()
            )));
        }

        let matching: Vec<usize> = (0..f_img_batch.rows())
            .filter(|&i| y_img_batch[i] == y_ske)
            .collect();
        if matching.is_empty() {
            return Ok(());
        }

        // Mean of the same-label image embeddings.
        let m = T::from_f64_c(matching.len() as f64);
        let mut ref_img = vec![T::zero(); self.dim];
        for &i in &matching {
            for (acc, &v) in ref_img.iter_mut().zip(f_img_batch.row(i)) {
                *acc += v;
            }
        }
        for v in &mut ref_img {
            *v = *v / m;
        }

        let new_counter = self.counter;
        self.counter += 1;

        let slot = self.slots.entry(y_ske).or_default();
        let mut candidates: Vec<(T, BankEntry<T>)> = Vec::with_capacity(slot.len() + 1);
        for entry in slot.drain(..) {
            let sim = cosine(&ref_img, &entry.vector)?;
            candidates.push((sim, entry));
        }
        candidates.push((
            cosine(&ref_img, f_ske)?,
            BankEntry {
                vector: f_ske.to_vec(),
                counter: new_counter,
            },
        ));

        // Descending similarity; equal similarity keeps the older entry first.
        candidates.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap()
                .then(a.1.counter.cmp(&b.1.counter))
        });
        candidates.truncate(self.capacity);
        *slot = candidates.into_iter().map(|(_, e)| e).collect();
        Ok(())
    }

    /// Fold of [`MemoryBank::update`] in batch index order; earlier updates
    /// change the candidate pool for later ones.
    pub fn update_batch(
        &mut self,
        f_ske_batch: &Matrix<T>,
        y_ske_batch: &[u32],
        f_img_batch: &Matrix<T>,
        y_img_batch: &[u32],
    ) -> Result<()> {
        if f_ske_batch.rows() != y_ske_batch.len() {
            return Err(DsnError::CountMismatch(format!(
                "{} sketch labels for {} rows",
                y_ske_batch.len(),
                f_ske_batch.rows()
            )));
        }
        for i in 0..f_ske_batch.rows() {
            self.update(f_ske_batch.row(i), y_ske_batch[i], f_img_batch, y_img_batch)?;
        }
        Ok(())
    }

    /// Arithmetic mean of the stored vectors, `None` while the category is empty.
    pub fn prototype(&self, category: u32) -> Option<Vec<T>> {
        let entries = self.slots.get(&category)?;
        if entries.is_empty() {
            return None;
        }
        let k = T::from_f64_c(entries.len() as f64);
        let mut proto = vec![T::zero(); self.dim];
        for e in entries {
            for (p, &v) in proto.iter_mut().zip(&e.vector) {
                *p += v;
            }
        }
        for p in &mut proto {
            *p = *p / k;
        }
        Some(proto)
    }

    /// Prototypes for every nonempty category.
    pub fn prototypes(&self) -> BTreeMap<u32, Vec<T>> {
        self.slots
            .keys()
            .filter_map(|&c| self.prototype(c).map(|p| (c, p)))
            .collect()
    }

    /// Diagnostic snapshot: category id, slot index, insertion counter,
    /// vector values.
    pub fn export_csv(&self) -> String {
        let mut out = String::from("category,slot,counter");
        for j in 0..self.dim {
            let _ = write!(out, ",v{j}");
        }
        out.push('\n');
        for (&cat, entries) in &self.slots {
            for (slot, e) in entries.iter().enumerate() {
                let _ = write!(out, "{cat},{slot},{}", e.counter);
                for v in &e.vector {
                    let _ = write!(out, ",{v}");
                }
                out.push('\n');
            }
        }
        out
    }
}
