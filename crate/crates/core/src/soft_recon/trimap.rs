use crate::error::{Result, RnaError};
use crate::media_io::BinaryMask;
use crate::morph::{dilate_disk, erode_disk};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrimapLabel {
    Background,
    Unknown,
    Foreground,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trimap {
    pub width: usize,
    pub height: usize,
    labels: Vec<TrimapLabel>,
}

/// Morphology radius used at 768x432, scaled by the short side.
pub const REFERENCE_RADIUS_PX: f64 = 10.0;

/// Default erosion/dilation radius for a `width x height` video, at least 1 px.
pub fn default_radius(width: usize, height: usize) -> usize {
    ((REFERENCE_RADIUS_PX * width.min(height) as f64 / 432.0).round() as usize).max(1)
}

impl Trimap {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> TrimapLabel {
        self.labels[y * self.width + x]
    }

    pub fn labels(&self) -> &[TrimapLabel] {
        &self.labels
    }

    pub fn count(&self, label: TrimapLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn mask_of(&self, label: TrimapLabel) -> BinaryMask {
        BinaryMask::from_fn(self.width, self.height, |x, y| self.get(x, y) == label)
    }
}

/// Foreground is the eroded mask, background lies outside the dilated mask,
/// and the band in between is unknown.
pub fn make_trimap(mask: &BinaryMask, erode_px: usize, dilate_px: usize) -> Result<Trimap> {
    if erode_px == 0 || dilate_px == 0 {
        return Err(RnaError::contract("trimap radii must be positive"));
    }
    let limit = mask.width.max(mask.height);
    if erode_px > limit || dilate_px > limit {
        return Err(RnaError::contract(format!(
            "trimap radii {erode_px}/{dilate_px} exceed the {}x{} image",
            mask.width, mask.height
        )));
    }
    let fg = erode_disk(mask, erode_px as f64);
    let grown = dilate_disk(mask, dilate_px as f64);
    let labels = fg
        .as_slice()
        .iter()
        .zip(grown.as_slice())
        .map(|(&f, &g)| {
            if f {
                TrimapLabel::Foreground
            } else if g {
                TrimapLabel::Unknown
            } else {
                TrimapLabel::Background
            }
        })
        .collect();
    Ok(Trimap {
        width: mask.width,
        height: mask.height,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn radius_scales_with_short_side() {
        assert_eq!(default_radius(768, 432), 10);
        assert_eq!(default_radius(96, 96), 2);
        assert_eq!(default_radius(20, 10), 1);
        assert_eq!(default_radius(1920, 1080), 25);
    }

    #[test]
    fn full_and_empty_masks() {
        let t = make_trimap(&BinaryMask::filled(30, 20, true), 3, 3).unwrap();
        assert_eq!(t.count(TrimapLabel::Foreground), 600);
        let t = make_trimap(&BinaryMask::new(30, 20), 3, 3).unwrap();
        assert_eq!(t.count(TrimapLabel::Background), 600);
    }

    #[test]
    fn disk_gives_annulus() {
        let (w, c, r) = (160usize, 80.0, 50.0);
        let disk = BinaryMask::from_fn(w, w, |x, y| ((x as f64 - c).powi(2) + (y as f64 - c).powi(2)).sqrt() <= r);
        let t = make_trimap(&disk, 10, 10).unwrap();
        // area of the annulus between radii 40 and 60, i.e. width 20
        let expected = std::f64::consts::PI * (60.0f64.powi(2) - 40.0f64.powi(2));
        let got = t.count(TrimapLabel::Unknown) as f64;
        assert!((got - expected).abs() / expected < 0.03, "{got} vs {expected}");
        // radial probe along a row
        let row: Vec<_> = (0..w).map(|x| t.get(x, 80)).collect();
        assert_eq!(row[80 + 35], TrimapLabel::Foreground);
        assert_eq!(row[80 + 45], TrimapLabel::Unknown);
        assert_eq!(row[80 + 55], TrimapLabel::Unknown);
        assert_eq!(row[80 + 65], TrimapLabel::Background);
    }

    #[test]
    fn radii_are_checked() {
        let m = BinaryMask::new(8, 6);
        assert!(matches!(make_trimap(&m, 0, 2), Err(RnaError::Contract(_))));
        assert!(matches!(make_trimap(&m, 2, 9), Err(RnaError::Contract(_))));
    }

    proptest! {
        #[test]
        fn labels_partition_and_nest(
            bits in proptest::collection::vec(any::<bool>(), 14 * 12),
            e in 1usize..4,
            d in 1usize..4,
        ) {
            let m = BinaryMask::from_vec(14, 12, bits).unwrap();
            let t = make_trimap(&m, e, d).unwrap();
            let fg = t.mask_of(TrimapLabel::Foreground);
            let bg = t.mask_of(TrimapLabel::Background);
            let un = t.mask_of(TrimapLabel::Unknown);
            prop_assert_eq!(fg.count() + bg.count() + un.count(), 14 * 12);
            let grown = dilate_disk(&m, d as f64);
            let shrunk = erode_disk(&m, e as f64);
            for i in 0..14 * 12 {
                prop_assert!(!fg.as_slice()[i] || grown.as_slice()[i]);
                prop_assert!(!bg.as_slice()[i] || !shrunk.as_slice()[i]);
            }
        }
    }
}
