use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::questions::Question;
use crate::error::{Error, Result};

pub const TRAIN_RATIO: f64 = 0.9;

/// Train/test split grouped by image.
///
/// Images are shuffled with `seed` and assigned to train until the cut that
/// lands closest to `⌊ratio·N⌋` questions. Every image's questions end up on
/// one side. With two or more images both sides are non-empty. Each side
/// keeps the input order.
pub fn split_instructions(questions: &[Question], ratio: f64, seed: u64) -> Result<(Vec<Question>, Vec<Question>)> {
    if questions.is_empty() {
        return Err(Error::Data("cannot split an empty question list".into()));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    let mut sizes: BTreeMap<&str, usize> = BTreeMap::new();
    for q in questions {
        *sizes.entry(q.image_id.as_str()).or_default() += 1;
    }
    let mut images: Vec<&str> = sizes.keys().copied().collect();
    images.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let target = (ratio * questions.len() as f64).floor() as usize;
    let mut cut = images.len();
    if images.len() > 1 {
        let mut best = usize::MAX;
        let mut total = 0;
        for (j, img) in images[..images.len() - 1].iter().enumerate() {
            total += sizes[img];
            let gap = total.abs_diff(target);
            if gap < best {
                best = gap;
                cut = j + 1;
            }
        }
    }
    let train_images: BTreeSet<&str> = images[..cut].iter().copied().collect();
    let (train, test) = questions
        .iter()
        .cloned()
        .partition(|q| train_images.contains(q.image_id.as_str()));
    Ok((train, test))
}
