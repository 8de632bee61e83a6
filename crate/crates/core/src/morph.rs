//! Binary morphology on [`BinaryMask`] rasters.

use image::{GrayImage, Luma};
use imageproc::distance_transform::{euclidean_squared_distance_transform, Norm};
use imageproc::morphology;

use crate::media_io::BinaryMask;

fn to_gray(mask: &BinaryMask) -> GrayImage {
    GrayImage::from_fn(mask.width as u32, mask.height as u32, |x, y| {
        Luma([if mask.get(x as usize, y as usize) { 255 } else { 0 }])
    })
}

fn from_gray(img: &GrayImage) -> BinaryMask {
    BinaryMask::from_fn(img.width() as usize, img.height() as usize, |x, y| {
        img.get_pixel(x as u32, y as u32)[0] > 0
    })
}

/// Closing with a `(2k+1) x (2k+1)` square, i.e. `k` passes of a 3x3 closing.
/// Pixels beyond the border never erode the result.
pub fn close_square(mask: &BinaryMask, k: u8) -> BinaryMask {
    if k == 0 || mask.count() == 0 {
        return mask.clone();
    }
    from_gray(&morphology::close(&to_gray(mask), Norm::LInf, k))
}

/// Dilation with a `(2k+1) x (2k+1)` square.
pub fn dilate_square(mask: &BinaryMask, k: u8) -> BinaryMask {
    if k == 0 || mask.count() == 0 {
        return mask.clone();
    }
    from_gray(&morphology::dilate(&to_gray(mask), Norm::LInf, k))
}

/// Squared Euclidean distance from every pixel to the nearest set pixel;
/// infinite everywhere when nothing is set.
fn squared_distance_to(mask: &BinaryMask) -> Vec<f64> {
    if mask.count() == 0 {
        return vec![f64::INFINITY; mask.width * mask.height];
    }
    euclidean_squared_distance_transform(&to_gray(mask)).into_raw()
}

/// Dilation by a Euclidean disk of the given radius.
pub fn dilate_disk(mask: &BinaryMask, radius: f64) -> BinaryMask {
    let d = squared_distance_to(mask);
    let r2 = radius * radius;
    BinaryMask::from_fn(mask.width, mask.height, |x, y| d[y * mask.width + x] <= r2)
}

/// Erosion by a Euclidean disk. Only pixels inside the raster can erode, so
/// sets touching the border keep their border pixels.
pub fn erode_disk(mask: &BinaryMask, radius: f64) -> BinaryMask {
    dilate_disk(&mask.invert(), radius).invert()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square(w: usize, h: usize, x0: usize, y0: usize, s: usize) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| x >= x0 && x < x0 + s && y >= y0 && y < y0 + s)
    }

    #[test]
    fn closing_seals_small_gaps() {
        let mut m = BinaryMask::new(20, 20);
        for x in (2..18).step_by(4) {
            for y in (2..18).step_by(4) {
                m.set(x, y, true);
            }
        }
        let c = close_square(&m, 2);
        for x in 2..=14 {
            for y in 2..=14 {
                assert!(c.get(x, y), "({x},{y})");
            }
        }
        // the border does not erode what dilation reached
        assert!(c.get(0, 0));
        assert!(!c.get(17, 17));
    }

    #[test]
    fn square_dilation_adds_a_ring() {
        let mut m = BinaryMask::new(9, 9);
        m.set(4, 4, true);
        assert_eq!(dilate_square(&m, 1).count(), 9);
        m.set(0, 0, true);
        assert_eq!(dilate_square(&m, 1).count(), 13);
    }

    #[test]
    fn disk_operations_on_a_square() {
        let m = square(40, 40, 10, 10, 20);
        let e = erode_disk(&m, 3.0);
        assert_eq!(e, square(40, 40, 13, 13, 14));
        let d = dilate_disk(&m, 2.0);
        assert!(d.get(8, 15) && !d.get(7, 15));
        // corner rounding: (8,8) is sqrt(8) from (10,10)
        assert!(!d.get(8, 8) && d.get(9, 9));
    }

    #[test]
    fn empty_and_full_masks() {
        let empty = BinaryMask::new(7, 5);
        let full = BinaryMask::filled(7, 5, true);
        assert_eq!(dilate_disk(&empty, 3.0), empty);
        assert_eq!(erode_disk(&empty, 3.0), empty);
        assert_eq!(erode_disk(&full, 3.0), full);
        assert_eq!(close_square(&empty, 2), empty);
    }

    fn brute_dilate(m: &BinaryMask, r: f64) -> BinaryMask {
        BinaryMask::from_fn(m.width, m.height, |x, y| {
            m.iter_set().any(|(a, b)| {
                let (dx, dy) = (a as f64 - x as f64, b as f64 - y as f64);
                dx * dx + dy * dy <= r * r
            })
        })
    }

    proptest! {
        #[test]
        fn disk_dilation_matches_brute_force(
            bits in proptest::collection::vec(prop::bool::weighted(0.08), 18 * 14),
            r in 0.5f64..5.0,
        ) {
            let m = BinaryMask::from_vec(18, 14, bits).unwrap();
            prop_assert_eq!(dilate_disk(&m, r), brute_dilate(&m, r));
        }

        #[test]
        fn erosion_inside_dilation_outside(
            bits in proptest::collection::vec(any::<bool>(), 16 * 16),
            r in 0.5f64..4.0,
        ) {
            let m = BinaryMask::from_vec(16, 16, bits).unwrap();
            let e = erode_disk(&m, r);
            let d = dilate_disk(&m, r);
            for ((&a, &b), &c) in e.as_slice().iter().zip(m.as_slice()).zip(d.as_slice()) {
                prop_assert!(!a || b);
                prop_assert!(!b || c);
            }
        }
    }
}
