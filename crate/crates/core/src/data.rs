//! Datasets: IDX decoding, semi-supervised splits and synthetic tabular data.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::Supervision;
use crate::oracle::{self, TabularModel};
use crate::tensor::Tensor;

pub const IDX_IMAGES: u32 = 0x0000_0803;
pub const IDX_LABELS: u32 = 0x0000_0801;

/// Decoded IDX array of unsigned bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub magic: u32,
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    let word = |at: usize| -> Result<u32> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or(Error::Length {
                expected: at + 4,
                found: bytes.len(),
            })
    };
    let magic = word(0)?;
    let rank = match magic {
        IDX_IMAGES => 3,
        IDX_LABELS => 1,
        other => return Err(Error::Format(alloc::format!("bad IDX magic 0x{other:08x}"))),
    };
    let dims: Vec<usize> = (0..rank)
        .map(|k| word(4 + 4 * k).map(|d| d as usize))
        .collect::<Result<_>>()?;
    let header = 4 + 4 * rank;
    let expected = header + dims.iter().product::<usize>();
    if bytes.len() < expected {
        return Err(Error::Length {
            expected,
            found: bytes.len(),
        });
    }
    Ok(IdxArray {
        magic,
        dims,
        data: bytes[header..expected].to_vec(),
    })
}

pub fn encode_idx(a: &IdxArray) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * a.dims.len() + a.data.len());
    out.extend_from_slice(&a.magic.to_be_bytes());
    for &d in &a.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&a.data);
    out
}

/// Feature rows in `[0, 1]` with optional class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Tensor,
    pub labels: Option<Vec<usize>>,
    pub classes: usize,
    /// Image height and width, when the features are images.
    pub image: Option<(usize, usize)>,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Option<Vec<usize>>, classes: usize) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(crate::error::dim_err("Dataset", features.shape(), &[0, 0]));
        }
        if let Some(bad) = features.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(alloc::format!("feature value {bad} outside [0, 1]")));
        }
        if let Some(l) = &labels {
            if l.len() != features.rows() {
                return Err(Error::Length {
                    expected: features.rows(),
                    found: l.len(),
                });
            }
            if let Some(&bad) = l.iter().find(|&&c| c >= classes) {
                return Err(Error::Domain(alloc::format!("label {bad} outside {classes} classes")));
            }
        }
        Ok(Dataset {
            features,
            labels,
            classes,
            image: None,
        })
    }

    /// An empty dataset with `width` features.
    pub fn empty(width: usize, classes: usize) -> Self {
        Dataset {
            features: Tensor::zeros([0, width]),
            labels: Some(Vec::new()),
            classes,
            image: None,
        }
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
            classes: self.classes,
            image: self.image,
        }
    }

    pub fn without_labels(mut self) -> Dataset {
        self.labels = None;
        self
    }

    /// Splits into the first `n` rows and the rest.
    pub fn split_at(&self, n: usize) -> (Dataset, Dataset) {
        let n = n.min(self.len());
        let head: Vec<usize> = (0..n).collect();
        let tail: Vec<usize> = (n..self.len()).collect();
        (self.subset(&head), self.subset(&tail))
    }

    /// One-hot labels, `[len, classes]`.
    pub fn one_hot_labels(&self) -> Result<Tensor> {
        let l = self
            .labels
            .as_ref()
            .ok_or_else(|| Error::Contract("dataset has no labels".into()))?;
        Tensor::one_hot(l, self.classes)
    }
}

/// Builds a dataset from an image array and a label array; pixels are divided by 255.
pub fn dataset_from_idx(images: &IdxArray, labels: &IdxArray) -> Result<Dataset> {
    if images.magic != IDX_IMAGES || labels.magic != IDX_LABELS {
        return Err(Error::Format("expected an image array and a label array".into()));
    }
    let (n, h, w) = (images.dims[0], images.dims[1], images.dims[2]);
    if labels.dims[0] != n {
        return Err(Error::Length {
            expected: n,
            found: labels.dims[0],
        });
    }
    let pixels = images.data.iter().map(|&b| f64::from(b) / 255.0).collect();
    let features = Tensor::new([n, h * w], pixels)?;
    let labels: Vec<usize> = labels.data.iter().map(|&b| b as usize).collect();
    let classes = labels.iter().max().map_or(0, |&m| m + 1).max(10);
    let mut ds = Dataset::new(features, Some(labels), classes)?;
    ds.image = Some((h, w));
    Ok(ds)
}

/// Re-encodes image features and labels as IDX arrays (pixels rounded back to bytes).
pub fn dataset_to_idx(ds: &Dataset) -> Result<(IdxArray, IdxArray)> {
    let (h, w) = ds
        .image
        .ok_or_else(|| Error::Contract("dataset has no image shape".into()))?;
    let images = IdxArray {
        magic: IDX_IMAGES,
        dims: vec![ds.len(), h, w],
        data: ds
            .features
            .data()
            .iter()
            .map(|&v| crate::math::round(v * 255.0) as u8)
            .collect(),
    };
    let labels = IdxArray {
        magic: IDX_LABELS,
        dims: vec![ds.len()],
        data: ds
            .labels
            .as_ref()
            .ok_or_else(|| Error::Contract("dataset has no labels".into()))?
            .iter()
            .map(|&l| l as u8)
            .collect(),
    };
    Ok((images, labels))
}

/// Labelled subset of size `M` and the unlabelled remainder.
#[derive(Clone, Debug, PartialEq)]
pub struct SemiSplit {
    pub supervised: Dataset,
    pub unsupervised: Dataset,
    pub supervised_indices: Vec<usize>,
    pub unsupervised_indices: Vec<usize>,
    pub seed: u64,
    /// Whether the supervised subset has `M / classes` points per class.
    pub balanced: bool,
}

/// Draws `m` labelled points, `m / classes` per class when `m` divides
/// evenly and every class has enough points, otherwise the first `m` of a
/// seeded shuffle. All remaining points form the unlabelled set.
pub fn split_semi_supervised(ds: &Dataset, m: usize, seed: u64) -> Result<SemiSplit> {
    let labels = ds
        .labels
        .as_ref()
        .ok_or_else(|| Error::Contract("splitting needs labels".into()))?;
    if m > ds.len() {
        return Err(Error::Capacity(alloc::format!(
            "{m} labelled points requested from {}",
            ds.len()
        )));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let k = ds.classes.max(1);
    let mut counts = vec![0usize; k];
    for &l in labels {
        counts[l] += 1;
    }
    let per_class = m / k;
    let balanced = m.is_multiple_of(k) && counts.iter().all(|&c| c >= per_class);
    let mut chosen = vec![false; ds.len()];
    let mut supervised_indices = Vec::with_capacity(m);
    if balanced {
        let mut taken = vec![0usize; k];
        for &i in &order {
            if taken[labels[i]] < per_class {
                taken[labels[i]] += 1;
                chosen[i] = true;
                supervised_indices.push(i);
            }
        }
    } else {
        log::info!("{m} labels cannot be split evenly over {k} classes; sampling proportionally");
        for &i in &order[..m] {
            chosen[i] = true;
            supervised_indices.push(i);
        }
    }
    let unsupervised_indices: Vec<usize> = order.iter().copied().filter(|&i| !chosen[i]).collect();
    Ok(SemiSplit {
        supervised: ds.subset(&supervised_indices),
        unsupervised: ds.subset(&unsupervised_indices).without_labels(),
        supervised_indices,
        unsupervised_indices,
        seed,
        balanced,
    })
}

/// `n` ancestral samples from a tabular model's generative tables. Features
/// are the one-hot encodings of the observed variables, concatenated;
/// labels are the values of the first partial variable.
pub fn synth_tabular_dataset(model: &TabularModel, n: usize, seed: u64) -> Result<Dataset> {
    let vars = model.vars();
    let observed: Vec<usize> = (0..vars.len())
        .filter(|&i| vars[i].supervision == Supervision::Observed)
        .collect();
    let label = (0..vars.len()).find(|&i| vars[i].supervision == Supervision::Partial);
    let width: usize = observed.iter().map(|&i| vars[i].domain).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = vec![0.0; n * width];
    let mut labels = Vec::with_capacity(n);
    for r in 0..n {
        let a = oracle::sample_generative(model, &mut rng);
        let mut offset = 0;
        for &i in &observed {
            features[r * width + offset + a[i]] = 1.0;
            offset += vars[i].domain;
        }
        if let Some(l) = label {
            labels.push(a[l]);
        }
    }
    let classes = label.map_or(0, |l| vars[l].domain);
    Dataset::new(Tensor::new([n, width], features)?, label.map(|_| labels), classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Vec<u8> {
        let mut b = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3];
        b.extend_from_slice(&[0, 17, 255, 128, 3, 9, 250, 1, 0, 0, 77, 200]);
        b
    }

    #[test]
    fn fixture_round_trips() {
        let bytes = fixture();
        let a = parse_idx(&bytes).unwrap();
        assert_eq!(a.dims, vec![2, 2, 3]);
        assert_eq!(encode_idx(&a), bytes);
        let labels = IdxArray {
            magic: IDX_LABELS,
            dims: vec![2],
            data: vec![7, 1],
        };
        let ds = dataset_from_idx(&a, &labels).unwrap();
        let (img, lab) = dataset_to_idx(&ds).unwrap();
        assert_eq!(encode_idx(&img), bytes);
        assert_eq!(lab, labels);
    }

    #[test]
    fn bad_magic_and_truncation() {
        let mut b = fixture();
        b[2] = 0;
        b[3] = 0;
        match parse_idx(&b) {
            Err(Error::Format(msg)) => assert!(msg.contains("0x00000000")),
            other => panic!("{other:?}"),
        }
        let b = fixture();
        assert!(matches!(
            parse_idx(&b[..20]),
            Err(Error::Length {
                expected: 28,
                found: 20
            })
        ));
        assert!(matches!(parse_idx(&b[..6]), Err(Error::Length { .. })));
    }

    fn labelled(n: usize) -> Dataset {
        let labels: Vec<usize> = (0..n).map(|i| (i * 7) % 10).collect();
        Dataset::new(Tensor::zeros([n, 3]), Some(labels), 10).unwrap()
    }

    #[test]
    fn balanced_split() {
        let ds = labelled(500);
        let s = split_semi_supervised(&ds, 100, 3).unwrap();
        assert!(s.balanced);
        let mut per = [0; 10];
        for &l in s.supervised.labels.as_ref().unwrap() {
            per[l] += 1;
        }
        assert_eq!(per, [10; 10]);
        assert_eq!(s.unsupervised.len(), 400);
        assert!(s.unsupervised.labels.is_none());
        let mut all: Vec<usize> = s
            .supervised_indices
            .iter()
            .chain(&s.unsupervised_indices)
            .copied()
            .collect();
        all.sort();
        assert_eq!(all, (0..500).collect::<Vec<_>>());
        assert_eq!(split_semi_supervised(&ds, 100, 3).unwrap(), s);
    }

    #[test]
    fn split_edge_cases() {
        let ds = labelled(50);
        assert!(split_semi_supervised(&ds, 50, 0).unwrap().unsupervised.is_empty());
        assert!(!split_semi_supervised(&ds, 13, 0).unwrap().balanced);
        assert!(matches!(split_semi_supervised(&ds, 51, 0), Err(Error::Capacity(_))));
    }
}
