use rand::Rng;

/// Inverted-dropout mask over the `d` recurrent units: each entry is
/// `1/keep` with probability `keep`, otherwise 0.
///
/// The mask multiplies the candidate `tanh(i)` before it enters the memory
/// update, so dropped units simply retain their previous memory.
pub fn recurrent_dropout_mask<R: Rng>(rng: &mut R, keep: f64, d: usize) -> Vec<f64> {
    assert!(keep > 0.0 && keep <= 1.0, "keep probability must be in (0, 1]");
    if keep >= 1.0 {
        return vec![1.0; d];
    }
    let scale = 1.0 / keep;
    (0..d)
        .map(|_| if rng.random_bool(keep) { scale } else { 0.0 })
        .collect()
}

/// Masks for a whole batch, one row per sequence.
pub fn batch_dropout_masks<R: Rng>(rng: &mut R, keep: f64, d: usize, batch: usize) -> Vec<Vec<f64>> {
    (0..batch)
        .map(|_| recurrent_dropout_mask(rng, keep, d))
        .collect()
}
