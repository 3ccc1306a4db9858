//! Exhaustive block-matching optical flow.

/// Displacements `(dx, dy)` within `radius`, in tie-break order: smallest
/// `|dx| + |dy|`, then smallest `dy`, then smallest `dx`.
fn candidates(radius: usize) -> Vec<(i64, i64)> {
    let r = radius as i64;
    let mut c: Vec<(i64, i64)> = (-r..=r).flat_map(|dy| (-r..=r).map(move |dx| (dx, dy))).collect();
    c.sort_by_key(|&(dx, dy)| (dx.abs() + dy.abs(), dy, dx));
    c
}

/// Flow from `prev` to `next`, both `[channels, size, size]`. Each
/// `block × block` tile of `prev` is matched against `next` (zero outside
/// the frame) by sum of absolute differences over all channels; the
/// winning displacement is written to every pixel of the tile. Output is
/// `[2, size, size]` with channel 0 = dx (columns), channel 1 = dy (rows).
pub fn optical_flow(prev: &[f64], next: &[f64], channels: usize, size: usize, block: usize, radius: usize) -> Vec<f64> {
    assert_eq!(prev.len(), channels * size * size, "prev frame shape");
    assert_eq!(next.len(), prev.len(), "frames must have the same shape");
    assert!(block > 0 && size % block == 0, "block must divide the frame size");
    let plane = size * size;
    let at = |frame: &[f64], ch: usize, y: i64, x: i64| -> f64 {
        if y < 0 || x < 0 || y >= size as i64 || x >= size as i64 {
            0.0
        } else {
            frame[ch * plane + y as usize * size + x as usize]
        }
    };
    let moves = candidates(radius);
    let mut flow = vec![0.0; 2 * plane];
    for by in (0..size).step_by(block) {
        for bx in (0..size).step_by(block) {
            let mut best = (0i64, 0i64);
            let mut best_sad = f64::INFINITY;
            for &(dx, dy) in &moves {
                let mut sad = 0.0;
                for ch in 0..channels {
                    for y in by..by + block {
                        for x in bx..bx + block {
                            let a = prev[ch * plane + y * size + x];
                            sad += (a - at(next, ch, y as i64 + dy, x as i64 + dx)).abs();
                        }
                    }
                }
                if sad < best_sad {
                    best_sad = sad;
                    best = (dx, dy);
                }
            }
            for y in by..by + block {
                for x in bx..bx + block {
                    flow[y * size + x] = best.0 as f64;
                    flow[plane + y * size + x] = best.1 as f64;
                }
            }
        }
    }
    flow
}

/// Mean over the colour channels of each frame: `[T, 3, s, s]` → `[T, s, s]`.
pub fn grayscale(frames: &[f64], size: usize) -> Vec<f64> {
    let plane = size * size;
    frames
        .chunks(3 * plane)
        .flat_map(|f| (0..plane).map(move |i| (f[i] + f[plane + i] + f[2 * plane + i]) / 3.0))
        .collect()
}

/// Flow video `[T, 2, s, s]` from RGB frames `[T, 3, s, s]`: frame `t ≥ 1`
/// holds the flow from `t − 1` to `t`; frame 0 repeats frame 1. A single
/// frame yields zero flow.
pub fn flow_sequence(frames: &[f64], size: usize, block: usize, radius: usize) -> Vec<f64> {
    let plane = size * size;
    let gray = grayscale(frames, size);
    let t = gray.len() / plane;
    let mut out = vec![0.0; t * 2 * plane];
    for k in 1..t {
        let f = optical_flow(&gray[(k - 1) * plane..k * plane], &gray[k * plane..(k + 1) * plane], 1, size, block, radius);
        out[k * 2 * plane..(k + 1) * 2 * plane].copy_from_slice(&f);
    }
    if t > 1 {
        out.copy_within(2 * plane..4 * plane, 0);
    }
    out
}
