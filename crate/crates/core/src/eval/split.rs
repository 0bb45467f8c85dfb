use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::sub_seed;
use crate::signal::Class;

/// Train/validation/test membership as indices into the source dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per-class proportional split with a seeded shuffle inside each class.
/// Train and validation sizes are rounded; the test split takes the rest.
/// A split with a positive fraction must receive at least one sample of
/// every class.
pub fn stratified_split(labels: &[Class], fractions: (f64, f64, f64), seed: u64) -> Result<Split> {
    let (ft, fv, fs) = fractions;
    let frac = [ft, fv, fs];
    if frac.iter().any(|f| !(0.0..=1.0).contains(f)) || ((ft + fv + fs) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split fractions {fractions:?} must be in [0,1] and sum to 1"
        )));
    }
    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for class in Class::ALL {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        let n = members.len();
        let n_train = (n as f64 * ft).round() as usize;
        let n_val = ((n as f64 * fv).round() as usize).min(n - n_train);
        let n_test = n - n_train - n_val;
        for (f, count, name) in [(ft, n_train, "train"), (fv, n_val, "val"), (fs, n_test, "test")] {
            if f > 0.0 && count == 0 {
                return Err(Error::InvalidArgument(format!(
                    "class {class} with {n} samples leaves the {name} split empty"
                )));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, "split", class.index() as u64));
        members.shuffle(&mut rng);
        split.train.extend_from_slice(&members[..n_train]);
        split.val.extend_from_slice(&members[n_train..n_train + n_val]);
        split.test.extend_from_slice(&members[n_train + n_val..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}
