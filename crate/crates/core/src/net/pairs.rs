//! Training pairs cut from annotated sequences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::Sequence;
use crate::net::loss::LabelMap;
use crate::net::model::{NetConfig, TrainPair};
use crate::tracker::extract_patch;

/// Draws `count` pairs of frames at most `max_gap` apart from `seqs`.
///
/// The exemplar is the context patch around the box in the earlier frame. The
/// search patch has twice its side, is centred on the same point of the later
/// frame, and the positive disc sits wherever the object moved to.
pub fn pairs_from_sequences(
    seqs: &[Sequence],
    net: &NetConfig,
    count: usize,
    max_gap: usize,
    seed: u64,
) -> Result<Vec<TrainPair>> {
    if seqs.is_empty() {
        return Err(Error::EmptyInput("training sequences"));
    }
    if count == 0 || max_gap == 0 {
        return Err(Error::EmptyInput("pair count and frame gap"));
    }
    net.validate()?;
    let e = net.exemplar_image_side();
    let u0 = net.zero_displacement() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let seq = &seqs[rng.random_range(0..seqs.len())];
            let a = rng.random_range(0..seq.len() - 1);
            let b = (a + rng.random_range(1..=max_gap)).min(seq.len() - 1);
            let (ra, rb) = (seq.rects[a], seq.rects[b]);
            let context = ra.context_side();
            let center = ra.center();
            let exemplar = extract_patch(&seq.frames[a], center, context, e);
            let search = extract_patch(&seq.frames[b], center, 2.0 * context, 2 * e);
            let to_features = e as f64 / context / net.stride as f64;
            let (bx, by) = rb.center();
            let labels = LabelMap::disc(
                net.search_feature_side(),
                (u0 + (by - center.1) * to_features, u0 + (bx - center.0) * to_features),
                net.label_radius(),
            )?;
            TrainPair::new(exemplar, search, labels)
        })
        .collect()
}
