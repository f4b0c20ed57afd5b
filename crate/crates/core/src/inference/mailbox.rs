use std::sync::Mutex;

use super::InferenceError;

/// Last-writer-wins latent command slot shared between the control loop and writers.
#[derive(Debug)]
pub struct LatentMailbox {
    slot: Mutex<(Vec<f64>, u64)>,
}

impl LatentMailbox {
    pub fn new(initial: Vec<f64>) -> Self {
        Self {
            slot: Mutex::new((initial, 0)),
        }
    }

    pub fn dim(&self) -> usize {
        self.lock().0.len()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, (Vec<f64>, u64)> {
        // A panicked writer cannot leave the vector half-written: every write is a
        // single assignment, so the poisoned value is still consistent.
        self.slot.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn check(value: f64) -> Result<(), InferenceError> {
        if value.is_finite() {
            Ok(())
        } else {
            Err(InferenceError::LatentValue(value))
        }
    }

    /// Replaces the whole command; returns the new version.
    pub fn set_all(&self, values: &[f64]) -> Result<u64, InferenceError> {
        let mut slot = self.lock();
        if values.len() != slot.0.len() {
            return Err(InferenceError::LatentLength {
                expected: slot.0.len(),
                found: values.len(),
            });
        }
        values.iter().try_for_each(|&v| Self::check(v))?;
        slot.0 = values.to_vec();
        slot.1 += 1;
        Ok(slot.1)
    }

    /// Writes one coordinate; returns the new version.
    pub fn set_dim(&self, dim: usize, value: f64) -> Result<u64, InferenceError> {
        let mut slot = self.lock();
        if dim >= slot.0.len() {
            return Err(InferenceError::LatentDim {
                dim,
                size: slot.0.len(),
            });
        }
        Self::check(value)?;
        slot.0[dim] = value;
        slot.1 += 1;
        Ok(slot.1)
    }

    /// Current command and its version.
    pub fn read(&self) -> (Vec<f64>, u64) {
        self.lock().clone()
    }
}
