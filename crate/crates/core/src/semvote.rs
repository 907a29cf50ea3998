//! Fusion of a per-pixel class raster with class-agnostic binary masks.
//!
//! Every mask takes the majority class of the labelled pixels it covers; the
//! result is reported per mask and as one union raster per class.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Mask, Raster};

pub type ClassId = u16;

/// Class id reserved for pixels the semantic branch left unlabelled.
pub const UNLABELED: ClassId = 0;

/// Per-pixel class ids with an optional id → name table.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelImage {
    pub data: Raster<ClassId>,
    pub class_names: BTreeMap<ClassId, String>,
}

impl LabelImage {
    /// Wraps a raster without a name table.
    pub fn new(data: Raster<ClassId>) -> Self {
        LabelImage {
            data,
            class_names: BTreeMap::new(),
        }
    }

    /// Wraps a raster with a name table; every id in the raster must be named
    /// or be [`UNLABELED`].
    pub fn with_names(
        data: Raster<ClassId>,
        class_names: BTreeMap<ClassId, String>,
    ) -> Result<Self> {
        if let Some(id) = data
            .data()
            .iter()
            .find(|&&id| id != UNLABELED && !class_names.contains_key(&id))
        {
            return Err(Error::input(format!(
                "class id {id} missing from the name table"
            )));
        }
        Ok(LabelImage { data, class_names })
    }

    pub fn width(&self) -> usize {
        self.data.width()
    }

    pub fn height(&self) -> usize {
        self.data.height()
    }

    pub fn name(&self, id: ClassId) -> Option<&str> {
        self.class_names.get(&id).map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSource {
    /// Class-agnostic masks from a segmentation model; may overlap.
    MaskBranch,
    /// Masks decoded from an instance-id raster; disjoint.
    Instance,
}

/// Ordered binary masks sharing one image size.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    masks: Vec<Mask>,
    pub source: MaskSource,
}

impl MaskSet {
    pub fn new(masks: Vec<Mask>, source: MaskSource) -> Result<Self> {
        if let Some(first) = masks.first() {
            if let Some(i) = masks.iter().position(|m| !m.same_dims(first)) {
                return Err(Error::input(format!(
                    "mask {i} is {}x{}, mask 0 is {}x{}",
                    masks[i].width(),
                    masks[i].height(),
                    first.width(),
                    first.height()
                )));
            }
        }
        if let Some(i) = masks.iter().position(Mask::is_empty) {
            return Err(Error::input(format!("mask {i} has no set pixels")));
        }
        Ok(MaskSet { masks, source })
    }

    pub fn empty(source: MaskSource) -> Self {
        MaskSet {
            masks: Vec::new(),
            source,
        }
    }

    /// One mask per distinct non-zero id of an instance raster, ordered by id.
    pub fn from_instance_raster(instances: &Raster<u16>) -> (Self, Vec<u16>) {
        let mut by_id: BTreeMap<u16, Mask> = BTreeMap::new();
        let (w, h) = instances.dims();
        for (i, &id) in instances.data().iter().enumerate() {
            if id == 0 {
                continue;
            }
            by_id
                .entry(id)
                .or_insert_with(|| Mask::filled(w, h, false))
                .data_mut()[i] = true;
        }
        let ids = by_id.keys().copied().collect();
        (
            MaskSet {
                masks: by_id.into_values().collect(),
                source: MaskSource::Instance,
            },
            ids,
        )
    }

    pub fn masks(&self) -> &[Mask] {
        &self.masks
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn dims(&self) -> Option<(usize, usize)> {
        self.masks.first().map(Mask::dims)
    }
}

/// Voting outcome for one input mask.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMask {
    /// Position of the mask in the input [`MaskSet`].
    pub mask_index: usize,
    pub class_id: ClassId,
    pub mask: Mask,
    /// Share of the mask's labelled pixels that voted for `class_id`.
    pub vote_fraction: f64,
}

/// Union of all masks that voted for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMask {
    pub class_id: ClassId,
    pub mask: Mask,
    /// Winning votes over labelled pixels, pooled across member masks.
    pub vote_fraction: f64,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SemanticMaskSet {
    pub instances: Vec<InstanceMask>,
    /// Ascending by class id. Masks that only covered unlabelled pixels
    /// get no union entry.
    pub classes: Vec<ClassMask>,
}

impl SemanticMaskSet {
    /// Writes each instance's class into a copy of `labels`. Pixels outside
    /// every mask keep their original value.
    pub fn paint(&self, labels: &LabelImage) -> LabelImage {
        let mut out = labels.clone();
        for inst in &self.instances {
            for (dst, &on) in out.data.data_mut().iter_mut().zip(inst.mask.data()) {
                if on {
                    *dst = inst.class_id;
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    winner: ClassId,
    votes: usize,
    labelled: usize,
}

fn tally(labels: &LabelImage, mask: &Mask) -> Tally {
    let mut hist: BTreeMap<ClassId, usize> = BTreeMap::new();
    let mut labelled = 0;
    for (&id, &on) in labels.data.data().iter().zip(mask.data()) {
        if on && id != UNLABELED {
            *hist.entry(id).or_default() += 1;
            labelled += 1;
        }
    }
    // ascending iteration + strict comparison: lowest id wins ties
    let mut best = Tally {
        winner: UNLABELED,
        votes: 0,
        labelled,
    };
    for (id, n) in hist {
        if n > best.votes {
            best.winner = id;
            best.votes = n;
        }
    }
    best
}

/// Majority class among the labelled pixels under `mask`, with its vote share.
///
/// Unlabelled pixels do not vote. A mask covering only unlabelled pixels
/// yields `(UNLABELED, 0.0)`.
pub fn majority_label(labels: &LabelImage, mask: &Mask) -> Result<(ClassId, f64)> {
    if !mask.same_dims(&labels.data) {
        return Err(Error::input("mask and label raster differ in size"));
    }
    if mask.is_empty() {
        return Err(Error::input("majority vote over an empty mask"));
    }
    let t = tally(labels, mask);
    if t.labelled == 0 {
        return Ok((UNLABELED, 0.0));
    }
    Ok((t.winner, t.votes as f64 / t.labelled as f64))
}

/// Assigns every mask its majority class and builds the per-class unions.
///
/// Masks are voted as given; run [`overlap_resolve`] first when they may overlap.
pub fn combine(labels: &LabelImage, masks: &MaskSet) -> Result<SemanticMaskSet> {
    if let Some(dims) = masks.dims() {
        if dims != labels.data.dims() {
            return Err(Error::input(format!(
                "masks are {}x{}, labels are {}x{}",
                dims.0,
                dims.1,
                labels.width(),
                labels.height()
            )));
        }
    }
    let tallies: Vec<Tally> = masks.masks().iter().map(|m| tally(labels, m)).collect();

    let instances: Vec<InstanceMask> = masks
        .masks()
        .iter()
        .zip(&tallies)
        .enumerate()
        .map(|(i, (m, t))| InstanceMask {
            mask_index: i,
            class_id: t.winner,
            mask: m.clone(),
            vote_fraction: if t.labelled == 0 {
                0.0
            } else {
                t.votes as f64 / t.labelled as f64
            },
        })
        .collect();

    let mut unions: BTreeMap<ClassId, (Mask, usize, usize, Vec<usize>)> = BTreeMap::new();
    for (inst, t) in instances.iter().zip(&tallies) {
        if inst.class_id == UNLABELED {
            continue;
        }
        let entry = unions.entry(inst.class_id).or_insert_with(|| {
            (
                Mask::filled(labels.width(), labels.height(), false),
                0,
                0,
                Vec::new(),
            )
        });
        for (dst, &on) in entry.0.data_mut().iter_mut().zip(inst.mask.data()) {
            *dst |= on;
        }
        entry.1 += t.votes;
        entry.2 += t.labelled;
        entry.3.push(inst.mask_index);
    }
    let classes = unions
        .into_iter()
        .map(|(class_id, (mask, votes, labelled, members))| ClassMask {
            class_id,
            mask,
            vote_fraction: votes as f64 / labelled as f64,
            members,
        })
        .collect();

    Ok(SemanticMaskSet { instances, classes })
}

/// Makes masks pairwise disjoint: a pixel claimed by several masks stays with
/// the smallest one (lowest index on equal area). Masks left without pixels
/// are dropped; the survivors keep their relative order.
pub fn overlap_resolve(masks: &MaskSet) -> MaskSet {
    let Some((w, h)) = masks.dims() else {
        return masks.clone();
    };
    let mut owner: Vec<Option<usize>> = vec![None; w * h];
    let areas: Vec<usize> = masks.masks().iter().map(Mask::count).collect();
    for (i, m) in masks.masks().iter().enumerate() {
        for (px, &on) in m.data().iter().enumerate() {
            if !on {
                continue;
            }
            owner[px] = match owner[px] {
                Some(j) if (areas[j], j) <= (areas[i], i) => Some(j),
                _ => Some(i),
            };
        }
    }
    let resolved = (0..masks.len())
        .map(|i| {
            Mask::from_vec(w, h, owner.iter().map(|&o| o == Some(i)).collect())
                .expect("dimensions preserved")
        })
        .filter(|m| !m.is_empty())
        .collect();
    MaskSet {
        masks: resolved,
        source: masks.source,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labels(w: usize, h: usize, vals: &[ClassId]) -> LabelImage {
        LabelImage::new(Raster::from_vec(w, h, vals.to_vec()).unwrap())
    }

    fn mask(w: usize, h: usize, on: &[usize]) -> Mask {
        let mut m = Mask::filled(w, h, false);
        for &i in on {
            m.data_mut()[i] = true;
        }
        m
    }

    fn rect(w: usize, h: usize, u0: usize, v0: usize, u1: usize, v1: usize) -> Mask {
        Raster::from_fn(w, h, |u, v| u >= u0 && u < u1 && v >= v0 && v < v1)
    }

    #[test]
    fn majority_two_thirds() {
        let l = labels(3, 1, &[1, 1, 2]);
        assert_eq!(
            majority_label(&l, &mask(3, 1, &[0, 1, 2])).unwrap(),
            (1, 2.0 / 3.0)
        );
    }

    #[test]
    fn majority_unanimous() {
        let l = labels(2, 2, &[7, 7, 7, 7]);
        assert_eq!(
            majority_label(&l, &mask(2, 2, &[0, 1, 3])).unwrap(),
            (7, 1.0)
        );
    }

    #[test]
    fn majority_tie_goes_to_lowest_id() {
        let l = labels(4, 1, &[5, 3, 5, 3]);
        assert_eq!(
            majority_label(&l, &mask(4, 1, &[0, 1, 2, 3])).unwrap(),
            (3, 0.5)
        );
    }

    #[test]
    fn majority_skips_unlabelled() {
        let l = labels(4, 1, &[0, 0, 0, 4]);
        assert_eq!(
            majority_label(&l, &mask(4, 1, &[0, 1, 2, 3])).unwrap(),
            (4, 1.0)
        );
        assert_eq!(
            majority_label(&l, &mask(4, 1, &[0, 1])).unwrap(),
            (UNLABELED, 0.0)
        );
    }

    #[test]
    fn majority_errors() {
        let l = labels(2, 1, &[1, 1]);
        assert!(majority_label(&l, &Mask::filled(2, 1, false)).is_err());
        assert!(majority_label(&l, &Mask::filled(1, 1, true)).is_err());
    }

    #[test]
    fn voting_fixture_flips_minority() {
        // 4x4 raster, the mask covers the top three rows: nine 1s and three 2s.
        #[rustfmt::skip]
        let l = labels(4, 4, &[
            1, 1, 2, 1,
            1, 2, 1, 1,
            1, 1, 2, 1,
            3, 3, 3, 3,
        ]);
        let m = MaskSet::new(vec![rect(4, 4, 0, 0, 4, 3)], MaskSource::MaskBranch).unwrap();
        let out = combine(&l, &m).unwrap();
        assert_eq!(out.instances[0].class_id, 1);
        assert_eq!(out.instances[0].vote_fraction, 0.75);
        let painted = out.paint(&l);
        assert!(painted.data.data()[..12].iter().all(|&c| c == 1));
        assert!(painted.data.data()[12..].iter().all(|&c| c == 3));
    }

    #[test]
    fn same_class_masks_union() {
        let l = labels(4, 1, &[1, 1, 1, 1]);
        let m = MaskSet::new(
            vec![mask(4, 1, &[0]), mask(4, 1, &[2, 3])],
            MaskSource::MaskBranch,
        )
        .unwrap();
        let out = combine(&l, &m).unwrap();
        assert_eq!(out.instances.len(), 2);
        assert_eq!(out.classes.len(), 1);
        assert_eq!(out.classes[0].mask, mask(4, 1, &[0, 2, 3]));
        assert_eq!(out.classes[0].members, vec![0, 1]);
    }

    #[test]
    fn empty_maskset_gives_empty_output() {
        let l = labels(2, 1, &[1, 2]);
        let out = combine(&l, &MaskSet::empty(MaskSource::MaskBranch)).unwrap();
        assert_eq!(out, SemanticMaskSet::default());
    }

    #[test]
    fn maskset_validation() {
        assert!(MaskSet::new(vec![Mask::filled(2, 2, false)], MaskSource::MaskBranch).is_err());
        assert!(MaskSet::new(
            vec![Mask::filled(2, 2, true), Mask::filled(3, 2, true)],
            MaskSource::MaskBranch
        )
        .is_err());
    }

    #[test]
    fn label_names_checked() {
        let r = Raster::from_vec(2, 1, vec![0, 3]).unwrap();
        assert!(LabelImage::with_names(r.clone(), BTreeMap::new()).is_err());
        let names = BTreeMap::from([(3, "chair".to_string())]);
        assert_eq!(
            LabelImage::with_names(r, names).unwrap().name(3),
            Some("chair")
        );
    }

    #[test]
    fn instance_raster_decoding() {
        let r = Raster::from_vec(3, 2, vec![0u16, 9, 9, 4, 0, 4]).unwrap();
        let (set, ids) = MaskSet::from_instance_raster(&r);
        assert_eq!(ids, vec![4, 9]);
        assert_eq!(set.masks()[0], mask(3, 2, &[3, 5]));
        assert_eq!(set.masks()[1], mask(3, 2, &[1, 2]));
    }

    #[test]
    fn disjoint_masks_unchanged() {
        let m = MaskSet::new(
            vec![mask(4, 1, &[0, 1]), mask(4, 1, &[3])],
            MaskSource::MaskBranch,
        )
        .unwrap();
        assert_eq!(overlap_resolve(&m), m);
    }

    #[test]
    fn nested_mask_keeps_its_pixels() {
        let big = rect(6, 6, 0, 0, 6, 6);
        let small = rect(6, 6, 2, 2, 4, 4);
        let m = MaskSet::new(vec![big.clone(), small.clone()], MaskSource::MaskBranch).unwrap();
        let r = overlap_resolve(&m);
        assert_eq!(r.masks()[1], small);
        assert_eq!(r.masks()[0].count(), 36 - 4);
        assert!(!*r.masks()[0].get(2, 2));
    }

    fn random_masks(rng: &mut ChaCha8Rng, w: usize, h: usize, n: usize) -> MaskSet {
        let masks = (0..n)
            .map(|_| {
                let u0 = rng.random_range(0..w - 1);
                let v0 = rng.random_range(0..h - 1);
                let u1 = rng.random_range(u0 + 1..=w);
                let v1 = rng.random_range(v0 + 1..=h);
                rect(w, h, u0, v0, u1, v1)
            })
            .collect();
        MaskSet::new(masks, MaskSource::MaskBranch).unwrap()
    }

    #[test]
    fn overlap_resolve_is_disjoint_on_random_rectangles() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let m = random_masks(&mut rng, 24, 24, 6);
            let r = overlap_resolve(&m);
            let mut cover = vec![0u8; 24 * 24];
            for mk in r.masks() {
                for (c, &on) in cover.iter_mut().zip(mk.data()) {
                    *c += on as u8;
                }
            }
            assert!(cover.iter().all(|&c| c <= 1));
            // nothing is lost
            let before = (0..24 * 24)
                .filter(|&i| m.masks().iter().any(|mk| mk.data()[i]))
                .count();
            assert_eq!(cover.iter().filter(|&&c| c == 1).count(), before);
        }
    }

    #[test]
    fn pass_through_when_labels_constant_under_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let m = overlap_resolve(&random_masks(&mut rng, 16, 16, 5));
            let mut l = labels(16, 16, &vec![0; 256]);
            for px in l.data.data_mut() {
                *px = rng.random_range(0..4);
            }
            for mk in m.masks() {
                let c = rng.random_range(1..6);
                for (dst, &on) in l.data.data_mut().iter_mut().zip(mk.data()) {
                    if on {
                        *dst = c;
                    }
                }
            }
            let out = combine(&l, &m).unwrap();
            assert_eq!(out.paint(&l), l);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        const W: usize = 12;
        const H: usize = 10;

        fn arb_labels() -> impl Strategy<Value = LabelImage> {
            prop::collection::vec(0..5u16, W * H).prop_map(|v| labels(W, H, &v))
        }

        fn arb_masks() -> impl Strategy<Value = MaskSet> {
            prop::collection::vec((0..W, 0..H, 1..W, 1..H), 1..6).prop_map(|rects| {
                let masks = rects
                    .into_iter()
                    .map(|(u, v, w, h)| rect(W, H, u, v, (u + w).min(W), (v + h).min(H)))
                    .filter(|m| !m.is_empty())
                    .collect();
                overlap_resolve(&MaskSet::new(masks, MaskSource::MaskBranch).unwrap())
            })
        }

        proptest! {
            #[test]
            fn combine_is_idempotent(l in arb_labels(), m in arb_masks()) {
                let once = combine(&l, &m).unwrap().paint(&l);
                let twice = combine(&once, &m).unwrap().paint(&once);
                prop_assert_eq!(once, twice);
            }

            #[test]
            fn no_invented_classes(l in arb_labels(), m in arb_masks()) {
                for inst in combine(&l, &m).unwrap().instances {
                    if inst.class_id == UNLABELED {
                        continue;
                    }
                    let seen = l.data.data().iter().zip(inst.mask.data())
                        .any(|(&c, &on)| on && c == inst.class_id);
                    prop_assert!(seen);
                    prop_assert!(inst.vote_fraction > 0.0 && inst.vote_fraction <= 1.0);
                }
            }

            #[test]
            fn resolved_masks_are_disjoint(m in arb_masks()) {
                let mut hits = vec![0; W * H];
                for mk in m.masks() {
                    for (h, &on) in hits.iter_mut().zip(mk.data()) {
                        *h += usize::from(on);
                    }
                }
                prop_assert!(hits.iter().all(|&h| h <= 1));
            }
        }
    }
}
