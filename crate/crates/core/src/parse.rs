//! Turns raw model text into a target and its effective voting rect.
//!
//! Exactly four numbers form a box, exactly two form a point that is expanded
//! into an `alpha × alpha` square, and anything else is unparseable with an
//! empty rect. Scientific notation is not part of the number grammar.

use std::sync::LazyLock;

use regex::Regex;

use crate::types::{canonicalize_box, ImageSize, PixelRect, PredictedTarget};

static NUMBER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[-+]?\d+(?:\.\d+)?").expect("number pattern"));

/// Signed decimal literals in left-to-right order.
pub fn extract_numbers(text: &str) -> Vec<f64> {
    NUMBER
        .find_iter(text)
        .filter_map(|m| m.as_str().parse::<f64>().ok())
        .collect()
}

/// Square of side `alpha` centered on the point, rasterized and clamped.
///
/// Near the image border the clamped rect can be smaller than `alpha × alpha`.
pub fn expand_point(x: f64, y: f64, alpha: f64, size: ImageSize) -> PixelRect {
    let half = alpha / 2.0;
    PixelRect::rasterize(x - half, y - half, x + half, y + half, size)
}

/// Rect that a parsed target votes with. Unparseable targets get the empty rect.
pub fn target_rect(target: &PredictedTarget, alpha: f64, size: ImageSize) -> PixelRect {
    match *target {
        PredictedTarget::Point { x, y } => expand_point(x, y, alpha, size),
        PredictedTarget::Box { x1, y1, x2, y2 } => PixelRect::rasterize(x1, y1, x2, y2, size),
        PredictedTarget::Unparseable => PixelRect::EMPTY,
    }
}

/// Parses one model output. Total: every string maps to exactly one rect.
pub fn parse_prediction(text: &str, alpha: f64, size: ImageSize) -> (PredictedTarget, PixelRect) {
    let numbers = extract_numbers(text);
    let target = match numbers.as_slice() {
        &[x1, y1, x2, y2] => canonicalize_box([x1, y1, x2, y2]),
        &[x, y] if x.is_finite() && y.is_finite() => PredictedTarget::Point { x, y },
        _ => PredictedTarget::Unparseable,
    };
    let rect = target_rect(&target, alpha, size);
    (target, rect)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn size() -> ImageSize {
        ImageSize::new(1000, 800).unwrap()
    }

    // Scalar reference: floor for non-negative values matches truncation,
    // negative values clamp to zero regardless.
    fn reference_expand(x: f64, y: f64, alpha: f64, w: u32, h: u32) -> [u32; 4] {
        let f = |v: f64, hi: u32| {
            let t = if v < 0.0 { 0.0 } else { v.floor() };
            t.min(hi as f64) as u32
        };
        [
            f(x - alpha / 2.0, w),
            f(y - alpha / 2.0, h),
            f(x + alpha / 2.0, w),
            f(y + alpha / 2.0, h),
        ]
    }

    #[test]
    fn numbers_in_order() {
        assert_eq!(extract_numbers("[10, 20, 30, 40]"), vec![10.0, 20.0, 30.0, 40.0]);
        assert_eq!(extract_numbers("click (15.5, 20.5) now"), vec![15.5, 20.5]);
        assert!(extract_numbers("no coords here").is_empty());
        assert_eq!(extract_numbers("(-3, +4.25)"), vec![-3.0, 4.25]);
    }

    #[test]
    fn point_expands_by_alpha() {
        let (t, r) = parse_prediction("[100, 60]", 50.0, size());
        assert_eq!(t, PredictedTarget::Point { x: 100.0, y: 60.0 });
        assert_eq!(r, PixelRect::new(75, 35, 125, 85));
    }

    #[test]
    fn four_numbers_form_a_box() {
        let (t, r) = parse_prediction("[10,20,30,40]", 50.0, size());
        assert!(matches!(t, PredictedTarget::Box { .. }));
        assert_eq!(r, PixelRect::new(10, 20, 30, 40));
    }

    #[test]
    fn garbage_is_unparseable() {
        let (t, r) = parse_prediction("sorry", 50.0, size());
        assert_eq!(t, PredictedTarget::Unparseable);
        assert_eq!(r, PixelRect::EMPTY);
        // more than four numbers falls into the "otherwise" branch
        let (t, _) = parse_prediction("[1,2,3,4,5]", 50.0, size());
        assert_eq!(t, PredictedTarget::Unparseable);
        let (t, _) = parse_prediction("[7]", 50.0, size());
        assert_eq!(t, PredictedTarget::Unparseable);
    }

    #[test]
    fn reversed_box_is_canonicalized() {
        let (_, r) = parse_prediction("[30, 40, 10, 20]", 50.0, size());
        assert_eq!(r, PixelRect::new(10, 20, 30, 40));
    }

    #[test]
    fn expand_point_border_cases() {
        assert_eq!(expand_point(100.0, 60.0, 50.0, size()), PixelRect::new(75, 35, 125, 85));
        assert_eq!(expand_point(10.0, 10.0, 50.0, size()), PixelRect::new(0, 0, 35, 35));
        let r = expand_point(999.9, 799.9, 50.0, size());
        assert_eq!(r, PixelRect::new(974, 774, 1000, 800));
        assert_eq!([r.x1, r.y1, r.x2, r.y2], reference_expand(999.9, 799.9, 50.0, 1000, 800));
    }

    #[test]
    fn huge_literal_is_clamped_not_panicking() {
        let big = "9".repeat(400);
        let (t, r) = parse_prediction(&format!("[{big}, 5]"), 50.0, size());
        assert_eq!(t, PredictedTarget::Unparseable);
        assert_eq!(r, PixelRect::EMPTY);
    }

    proptest! {
        #[test]
        fn parse_is_total_and_clamped(text in ".{0,40}", alpha in 0.5f64..200.0) {
            let (_, r) = parse_prediction(&text, alpha, size());
            prop_assert!(r.fits(size()));
            prop_assert_eq!(parse_prediction(&text, alpha, size()), parse_prediction(&text, alpha, size()));
        }

        #[test]
        fn expand_matches_reference(x in -100.0f64..1100.0, y in -100.0f64..900.0, alpha in 0.5f64..300.0) {
            let r = expand_point(x, y, alpha, size());
            prop_assert_eq!([r.x1, r.y1, r.x2, r.y2], reference_expand(x, y, alpha, 1000, 800));
        }

        #[test]
        fn box_format_roundtrip(x1 in 0u32..=1000, x2 in 0u32..=1000, y1 in 0u32..=800, y2 in 0u32..=800) {
            let b = PixelRect::new(x1.min(x2), y1.min(y2), x1.max(x2), y1.max(y2));
            let (_, r) = parse_prediction(&b.to_string(), 50.0, size());
            prop_assert_eq!(r, b);
        }
    }
}
