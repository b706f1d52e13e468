//! Turning scribbles into filled masks.

use std::collections::VecDeque;

use super::Mask;

/// Half-width of a rasterized stroke: pixel centers closer than this to the polyline are inked.
const STROKE_RADIUS: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub enum ScribbleInput {
    /// Polylines in pixel coordinates (`[x, y]`, pixel `(i, j)` spans `[i, i+1) × [j, j+1)`).
    Strokes(Vec<Vec<[f64; 2]>>),
    Bitmap(Mask),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilledScribble {
    pub mask: Mask,
    /// Set when nothing was enclosed; `mask` is then the dilated stroke.
    pub open_curve: bool,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FillError {
    #[error("no strokes given")]
    Empty,
    #[error("bitmap is {got:?}, expected {expected:?}")]
    SizeMismatch { got: (usize, usize), expected: (usize, usize) },
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 { ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let d = [ap[0] - t * ab[0], ap[1] - t * ab[1]];
    (d[0] * d[0] + d[1] * d[1]).sqrt()
}

/// Inks every pixel whose center lies within [`STROKE_RADIUS`] of a stroke segment.
pub fn rasterize_strokes(strokes: &[Vec<[f64; 2]>], width: usize, height: usize) -> Mask {
    let mut mask = Mask::new(width, height);
    for stroke in strokes {
        let segments: Vec<([f64; 2], [f64; 2])> = match stroke.len() {
            0 => continue,
            1 => vec![(stroke[0], stroke[0])],
            _ => stroke.windows(2).map(|w| (w[0], w[1])).collect(),
        };
        for (a, b) in segments {
            let lo_x = (a[0].min(b[0]) - STROKE_RADIUS - 1.0).floor().max(0.0) as usize;
            let hi_x = ((a[0].max(b[0]) + STROKE_RADIUS + 1.0).ceil().max(0.0) as usize).min(width);
            let lo_y = (a[1].min(b[1]) - STROKE_RADIUS - 1.0).floor().max(0.0) as usize;
            let hi_y = ((a[1].max(b[1]) + STROKE_RADIUS + 1.0).ceil().max(0.0) as usize).min(height);
            for y in lo_y..hi_y {
                for x in lo_x..hi_x {
                    let c = [x as f64 + 0.5, y as f64 + 0.5];
                    if segment_distance(c, a, b) < STROKE_RADIUS {
                        mask.set(x, y, true);
                    }
                }
            }
        }
    }
    mask
}

/// Pixels not reachable from the border through uninked pixels (4-connectivity), plus the ink.
pub fn fill_enclosed(ink: &Mask) -> Mask {
    let (w, h) = (ink.width(), ink.height());
    let mut outside = vec![false; w * h];
    let mut queue = VecDeque::new();
    let push = |x: usize, y: usize, outside: &mut Vec<bool>, queue: &mut VecDeque<(usize, usize)>| {
        let i = y * w + x;
        if !ink.get(x, y) && !outside[i] {
            outside[i] = true;
            queue.push_back((x, y));
        }
    };
    for x in 0..w {
        push(x, 0, &mut outside, &mut queue);
        push(x, h - 1, &mut outside, &mut queue);
    }
    for y in 0..h {
        push(0, y, &mut outside, &mut queue);
        push(w - 1, y, &mut outside, &mut queue);
    }
    while let Some((x, y)) = queue.pop_front() {
        if x > 0 {
            push(x - 1, y, &mut outside, &mut queue);
        }
        if x + 1 < w {
            push(x + 1, y, &mut outside, &mut queue);
        }
        if y > 0 {
            push(x, y - 1, &mut outside, &mut queue);
        }
        if y + 1 < h {
            push(x, y + 1, &mut outside, &mut queue);
        }
    }
    let mut out = Mask::new(w, h);
    for i in 0..w * h {
        out.as_mut_slice()[i] = !outside[i];
    }
    out
}

/// Whether some inked pixel has all 8 neighbors inked, i.e. the ink is a region rather than a line.
fn has_interior(m: &Mask) -> bool {
    let (w, h) = (m.width(), m.height());
    (1..h.saturating_sub(1)).any(|y| {
        (1..w.saturating_sub(1)).any(|x| (0..3).all(|dy| (0..3).all(|dx| m.get(x + dx - 1, y + dy - 1))))
    })
}

/// Fills a scribble into a region mask. Closed curves are filled by flood fill
/// from the border; bitmaps that already form a region come back unchanged;
/// anything else is reported as an open curve and returned as the stroke itself.
pub fn fill_scribble(input: &ScribbleInput, width: usize, height: usize) -> Result<FilledScribble, FillError> {
    let ink = match input {
        ScribbleInput::Strokes(strokes) => {
            if strokes.iter().all(|s| s.is_empty()) {
                return Err(FillError::Empty);
            }
            rasterize_strokes(strokes, width, height)
        }
        ScribbleInput::Bitmap(m) => {
            if (m.width(), m.height()) != (width, height) {
                return Err(FillError::SizeMismatch { got: (m.width(), m.height()), expected: (width, height) });
            }
            if m.count() == 0 {
                return Err(FillError::Empty);
            }
            m.clone()
        }
    };
    let filled = fill_enclosed(&ink);
    if filled.count() > ink.count() {
        return Ok(FilledScribble { mask: filled, open_curve: false });
    }
    if matches!(input, ScribbleInput::Bitmap(_)) && has_interior(&ink) {
        return Ok(FilledScribble { mask: ink, open_curve: false });
    }
    Ok(FilledScribble { mask: ink, open_curve: true })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle(cx: f64, cy: f64, r: f64, n: usize) -> Vec<[f64; 2]> {
        (0..=n)
            .map(|k| {
                let a = k as f64 / n as f64 * std::f64::consts::TAU;
                [cx + r * a.cos(), cy + r * a.sin()]
            })
            .collect()
    }

    #[test]
    fn closed_circle_fills_a_disc() {
        let r = 50.0;
        let f = fill_scribble(&ScribbleInput::Strokes(vec![circle(64.0, 64.0, r, 256)]), 128, 128).unwrap();
        assert!(!f.open_curve);
        let area = f.mask.count() as f64;
        let expected = std::f64::consts::PI * r * r;
        assert!((area - expected).abs() / expected < 0.05, "{area} vs {expected}");
        assert!(f.mask.get(64, 64));
        assert!(!f.mask.get(2, 2));
    }

    #[test]
    fn filled_rectangle_bitmap_is_identity() {
        let mut m = Mask::new(20, 10);
        for y in 2..7 {
            for x in 3..15 {
                m.set(x, y, true);
            }
        }
        let f = fill_scribble(&ScribbleInput::Bitmap(m.clone()), 20, 10).unwrap();
        assert!(!f.open_curve);
        assert_eq!(f.mask, m);
    }

    #[test]
    fn straight_stroke_is_open() {
        let f = fill_scribble(&ScribbleInput::Strokes(vec![vec![[5.0, 5.0], [40.0, 20.0]]]), 48, 32).unwrap();
        assert!(f.open_curve);
        assert!(f.mask.count() > 0);
        assert_eq!(f.mask, rasterize_strokes(&[vec![[5.0, 5.0], [40.0, 20.0]]], 48, 32));
    }

    #[test]
    fn no_strokes_is_an_error() {
        assert_eq!(fill_scribble(&ScribbleInput::Strokes(vec![]), 8, 8), Err(FillError::Empty));
    }

    #[test]
    fn hollow_bitmap_ring_is_filled() {
        let ring = rasterize_strokes(&[circle(16.0, 16.0, 8.0, 64)], 32, 32);
        let f = fill_scribble(&ScribbleInput::Bitmap(ring), 32, 32).unwrap();
        assert!(!f.open_curve);
        assert!(f.mask.get(16, 16));
    }
}
