use std::collections::VecDeque;

use super::BinaryMask;

/// Number of true pixels.
pub fn mask_area(mask: &BinaryMask) -> usize {
    mask.as_slice().iter().filter(|v| **v).count()
}

/// Binary dilation by a `(2r+1)×(2r+1)` square (Chebyshev disc of radius `r`).
pub fn dilate(mask: &BinaryMask, radius: usize) -> BinaryMask {
    square_filter(mask, radius, true)
}

/// Binary erosion by a `(2r+1)×(2r+1)` square; pixels beyond the border count as false.
pub fn erode(mask: &BinaryMask, radius: usize) -> BinaryMask {
    square_filter(mask, radius, false)
}

// Separable: a square max/min filter is a row pass followed by a column pass.
fn square_filter(mask: &BinaryMask, radius: usize, grow: bool) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let (h, w) = (mask.height(), mask.width());
    let src = mask.as_slice();
    let reduce = |hit: bool, all_in: bool| if grow { hit } else { all_in };

    let mut rows = vec![false; h * w];
    for r in 0..h {
        let line = &src[r * w..(r + 1) * w];
        let prefix = prefix_counts(line);
        for c in 0..w {
            let lo = c.saturating_sub(radius);
            let hi = (c + radius + 1).min(w);
            let ones = prefix[hi] - prefix[lo];
            let inside = c >= radius && c + radius < w;
            rows[r * w + c] = reduce(ones > 0, inside && ones == hi - lo);
        }
    }
    let mut out = vec![false; h * w];
    let mut column = vec![false; h];
    for c in 0..w {
        for r in 0..h {
            column[r] = rows[r * w + c];
        }
        let prefix = prefix_counts(&column);
        for r in 0..h {
            let lo = r.saturating_sub(radius);
            let hi = (r + radius + 1).min(h);
            let ones = prefix[hi] - prefix[lo];
            let inside = r >= radius && r + radius < h;
            out[r * w + c] = reduce(ones > 0, inside && ones == hi - lo);
        }
    }
    BinaryMask::new(h, w, out).expect("shape preserved")
}

fn prefix_counts(line: &[bool]) -> Vec<usize> {
    let mut prefix = Vec::with_capacity(line.len() + 1);
    prefix.push(0);
    let mut acc = 0;
    for v in line {
        acc += *v as usize;
        prefix.push(acc);
    }
    prefix
}

/// Labels 4-connected components; returns (labels, component sizes). Label 0 is background.
pub(crate) fn label_components(mask: &BinaryMask) -> (Vec<u32>, Vec<usize>) {
    let (h, w) = (mask.height(), mask.width());
    let src = mask.as_slice();
    let mut labels = vec![0u32; h * w];
    let mut sizes = vec![0usize];
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if !src[start] || labels[start] != 0 {
            continue;
        }
        let label = sizes.len() as u32;
        let mut size = 0;
        labels[start] = label;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            size += 1;
            let (r, c) = (p / w, p % w);
            let mut visit = |q: usize| {
                if src[q] && labels[q] == 0 {
                    labels[q] = label;
                    queue.push_back(q);
                }
            };
            if r > 0 {
                visit(p - w);
            }
            if r + 1 < h {
                visit(p + w);
            }
            if c > 0 {
                visit(p - 1);
            }
            if c + 1 < w {
                visit(p + 1);
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// Number of 4-connected foreground components.
pub fn count_components(mask: &BinaryMask) -> usize {
    label_components(mask).1.len() - 1
}

/// Keeps only the largest 4-connected component (earliest in raster order on ties).
pub fn largest_component(mask: &BinaryMask) -> BinaryMask {
    let (labels, sizes) = label_components(mask);
    let Some((best, _)) = sizes.iter().enumerate().skip(1).fold(
        None,
        |acc: Option<(usize, usize)>, (i, s)| match acc {
            Some((_, bs)) if bs >= *s => acc,
            _ => Some((i, *s)),
        },
    ) else {
        return mask.clone();
    };
    let data = labels.iter().map(|l| *l as usize == best).collect();
    BinaryMask::new(mask.height(), mask.width(), data).expect("shape preserved")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive_dilate(mask: &BinaryMask, r: usize) -> BinaryMask {
        let (h, w) = (mask.height() as isize, mask.width() as isize);
        let r = r as isize;
        BinaryMask::from_fn(h as usize, w as usize, |row, col| {
            let (row, col) = (row as isize, col as isize);
            (-r..=r).any(|dr| {
                (-r..=r).any(|dc| {
                    let (y, x) = (row + dr, col + dc);
                    y >= 0 && y < h && x >= 0 && x < w && mask.get(y as usize, x as usize)
                })
            })
        })
    }

    #[test]
    fn area_examples() {
        assert_eq!(mask_area(&BinaryMask::empty(5, 7)), 0);
        assert_eq!(mask_area(&BinaryMask::full(5, 7)), 35);
        let checker = BinaryMask::from_fn(4, 4, |r, c| (r + c) % 2 == 0);
        assert_eq!(mask_area(&checker), 8);
    }

    #[test]
    fn largest_component_picks_bigger_blob() {
        let mask = BinaryMask::from_fn(10, 10, |r, c| (r < 2 && c < 2) || (r > 4 && c > 4));
        let kept = largest_component(&mask);
        assert_eq!(mask_area(&kept), 25);
        assert!(!kept.get(0, 0));
        assert_eq!(count_components(&mask), 2);
        assert_eq!(count_components(&kept), 1);
    }

    proptest! {
        #[test]
        fn dilation_matches_naive(bits in proptest::collection::vec(any::<bool>(), 12 * 9), r in 0usize..4) {
            let mask = BinaryMask::new(12, 9, bits).unwrap();
            prop_assert_eq!(dilate(&mask, r), naive_dilate(&mask, r));
        }

        #[test]
        fn erosion_is_dual_of_dilation_inside(bits in proptest::collection::vec(any::<bool>(), 10 * 10), r in 1usize..3) {
            let mask = BinaryMask::new(10, 10, bits).unwrap();
            let eroded = erode(&mask, r);
            // erosion never grows and is contained in the mask
            for (e, m) in eroded.as_slice().iter().zip(mask.as_slice()) {
                prop_assert!(!*e || *m);
            }
        }

        #[test]
        fn union_area_monotone(a in proptest::collection::vec(any::<bool>(), 64), b in proptest::collection::vec(any::<bool>(), 64)) {
            let a = BinaryMask::new(8, 8, a).unwrap();
            let b = BinaryMask::new(8, 8, b).unwrap();
            let u = mask_area(&a.union(&b).unwrap());
            prop_assert!(u >= mask_area(&a).max(mask_area(&b)));
        }
    }
}
