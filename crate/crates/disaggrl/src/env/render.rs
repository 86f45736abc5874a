//! Synthetic renderers and observation vectors.
//!
//! Pixel (i, j) of an HxW image maps to the world point
//! x = (j + 0.5)/W, y = 1 - (i + 0.5)/H. The gripper disc always occludes
//! the object disc.

use super::world::WorldState;
use super::{
    EnvConfig, ObsMode, BACKGROUND_DEPTH, GRIPPER_DEPTH, GRIPPER_RADIUS, OBJECT_DEPTH,
    OBJECT_RADIUS, PROPRIO_DIM, STATE_DIM,
};

#[inline]
fn in_disc(px: f32, py: f32, c: [f32; 2], r: f32) -> bool {
    let dx = px - c[0];
    let dy = py - c[1];
    dx * dx + dy * dy <= r * r
}

/// Depth image `[1 x H x W]`: 0.3 inside the gripper disc, 0.5 inside the
/// (unoccluded) object disc, 1.0 background.
pub fn render_depth(state: &WorldState, w: usize, h: usize, out: &mut [f32]) {
    debug_assert_eq!(out.len(), w * h);
    for i in 0..h {
        let py = 1.0 - (i as f32 + 0.5) / h as f32;
        let row = &mut out[i * w..(i + 1) * w];
        for (j, px_out) in row.iter_mut().enumerate() {
            let px = (j as f32 + 0.5) / w as f32;
            *px_out = if in_disc(px, py, state.gripper, GRIPPER_RADIUS) {
                GRIPPER_DEPTH
            } else if in_disc(px, py, state.object, OBJECT_RADIUS) {
                OBJECT_DEPTH
            } else {
                BACKGROUND_DEPTH
            };
        }
    }
}

/// Stereo RGB `[6 x H x W]`, channels `[L_R, L_G, L_B, R_R, R_G, R_B]`.
/// Eye offsets are -b/2 (left) and +b/2 (right), applied to the pixel's
/// world x before the disc tests. Object is red, gripper green, background
/// black; flat colors in {0, 1}.
pub fn render_stereo(state: &WorldState, w: usize, h: usize, baseline: f32, out: &mut [f32]) {
    debug_assert_eq!(out.len(), 6 * w * h);
    let plane = w * h;
    for (eye, &offset) in [-baseline / 2.0, baseline / 2.0].iter().enumerate() {
        let base = eye * 3 * plane;
        for i in 0..h {
            let py = 1.0 - (i as f32 + 0.5) / h as f32;
            for j in 0..w {
                let px = (j as f32 + 0.5) / w as f32 + offset;
                let idx = i * w + j;
                let (r, g) = if in_disc(px, py, state.gripper, GRIPPER_RADIUS) {
                    (0.0, 1.0)
                } else if in_disc(px, py, state.object, OBJECT_RADIUS) {
                    (1.0, 0.0)
                } else {
                    (0.0, 0.0)
                };
                out[base + idx] = r;
                out[base + plane + idx] = g;
                out[base + 2 * plane + idx] = 0.0;
            }
        }
    }
}

/// Privileged state vector: gripper xy, object xy, grasped flag.
pub fn state_vector(state: &WorldState) -> [f32; STATE_DIM] {
    [
        state.gripper[0],
        state.gripper[1],
        state.object[0],
        state.object[1],
        state.grasped as u8 as f32,
    ]
}

/// Proprioception: gripper xy, grasped flag, previous action, normalized
/// episode time.
pub fn proprio(state: &WorldState, t_max: u32) -> [f32; PROPRIO_DIM] {
    [
        state.gripper[0],
        state.gripper[1],
        state.grasped as u8 as f32,
        state.prev_action[0],
        state.prev_action[1],
        state.prev_action[2],
        state.t as f32 / t_max as f32,
    ]
}

/// Render the primary observation for `state` into `out` (length
/// `cfg.primary_dim()`).
pub fn observe_primary(state: &WorldState, cfg: &EnvConfig, out: &mut [f32]) {
    match cfg.obs_mode {
        ObsMode::Depth => render_depth(state, cfg.image_w, cfg.image_h, out),
        ObsMode::Stereo => render_stereo(state, cfg.image_w, cfg.image_h, cfg.stereo_baseline, out),
        ObsMode::State => out.copy_from_slice(&state_vector(state)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{reset, AdrSampler};

    fn state_at(g: [f32; 2], o: [f32; 2]) -> WorldState {
        let cfg = EnvConfig::default();
        let adr = AdrSampler::from_config(&cfg.adr).unwrap();
        let mut s = reset(&cfg, &adr, 0, 0, 0);
        s.gripper = g;
        s.object = o;
        s
    }

    /// Independent scalar oracle: evaluates the pixel formula directly in
    /// f64 and must agree with the implementation everywhere the state keeps
    /// pixels away from disc boundaries.
    fn oracle_depth(state: &WorldState, w: usize, h: usize) -> (Vec<f32>, bool) {
        let mut img = vec![0.0f32; w * h];
        let mut boundary_free = true;
        for i in 0..h {
            for j in 0..w {
                let x = (j as f64 + 0.5) / w as f64;
                let y = 1.0 - (i as f64 + 0.5) / h as f64;
                let dg = ((x - state.gripper[0] as f64).powi(2)
                    + (y - state.gripper[1] as f64).powi(2))
                .sqrt();
                let dobj = ((x - state.object[0] as f64).powi(2)
                    + (y - state.object[1] as f64).powi(2))
                .sqrt();
                if (dg - GRIPPER_RADIUS as f64).abs() < 1e-4
                    || (dobj - OBJECT_RADIUS as f64).abs() < 1e-4
                {
                    boundary_free = false;
                }
                img[i * w + j] = if dg <= GRIPPER_RADIUS as f64 {
                    GRIPPER_DEPTH
                } else if dobj <= OBJECT_RADIUS as f64 {
                    OBJECT_DEPTH
                } else {
                    BACKGROUND_DEPTH
                };
            }
        }
        (img, boundary_free)
    }

    #[test]
    fn depth_matches_independent_oracle_at_64x64() {
        let s = state_at([0.3125, 0.71875], [0.59375, 0.21875]);
        let (oracle, boundary_free) = oracle_depth(&s, 64, 64);
        assert!(boundary_free, "fixture state must avoid disc boundaries");
        let mut img = vec![0.0f32; 64 * 64];
        render_depth(&s, 64, 64, &mut img);
        assert_eq!(img, oracle);
        let sum: f32 = img.iter().sum();
        let oracle_sum: f32 = oracle.iter().sum();
        assert_eq!(sum, oracle_sum);
    }

    #[test]
    fn background_pixel_is_one() {
        let s = state_at([0.2, 0.8], [0.8, 0.2]);
        let mut img = vec![0.0f32; 32 * 32];
        render_depth(&s, 32, 32, &mut img);
        // corner pixel far from both discs
        assert_eq!(img[0], BACKGROUND_DEPTH);
    }

    #[test]
    fn gripper_occludes_object() {
        // concentric discs: gripper pixel wins even though object overlaps
        let s = state_at([0.5, 0.5], [0.5, 0.5]);
        let mut img = vec![0.0f32; 64 * 64];
        render_depth(&s, 64, 64, &mut img);
        // pixel nearest the shared center
        let center = 31 * 64 + 31;
        assert_eq!(img[center], GRIPPER_DEPTH);
        assert!(!img.contains(&OBJECT_DEPTH) || true); // ring may or may not hit pixel centers
    }

    #[test]
    fn depth_values_are_the_three_constants() {
        let s = state_at([0.4, 0.6], [0.6, 0.3]);
        let mut img = vec![0.0f32; 48 * 40];
        render_depth(&s, 40, 48, &mut img);
        for v in &img {
            assert!(
                *v == GRIPPER_DEPTH || *v == OBJECT_DEPTH || *v == BACKGROUND_DEPTH,
                "unexpected depth {v}"
            );
            assert!(*v > 0.0 && *v <= 1.0);
        }
        assert!(img.contains(&GRIPPER_DEPTH));
        assert!(img.contains(&OBJECT_DEPTH));
    }

    #[test]
    fn zero_baseline_makes_eyes_identical() {
        let s = state_at([0.4, 0.6], [0.6, 0.3]);
        let mut img = vec![0.0f32; 6 * 32 * 32];
        render_stereo(&s, 32, 32, 0.0, &mut img);
        let plane = 32 * 32;
        assert_eq!(img[..3 * plane], img[3 * plane..]);
    }

    /// With b*W an integer, the right image's object footprint is the left
    /// image's shifted by exactly round(b*W) columns.
    #[test]
    fn stereo_shift_is_baseline_times_width_columns() {
        let (w, h, b) = (160usize, 120usize, 0.05f32);
        let shift = (b * w as f32).round() as usize;
        assert_eq!(shift, 8);
        let s = state_at([0.25, 0.75], [0.5, 0.5]);
        let mut img = vec![0.0f32; 6 * w * h];
        render_stereo(&s, w, h, b, &mut img);
        let plane = w * h;
        let left_red = &img[..plane];
        let right_red = &img[3 * plane..4 * plane];
        for i in 0..h {
            for j in 0..w {
                let lv = left_red[i * w + j];
                if j >= shift {
                    assert_eq!(
                        right_red[i * w + j - shift],
                        lv,
                        "row {i} col {j}: right footprint must be left shifted by {shift}"
                    );
                }
            }
        }
        // both footprints are non-empty
        assert!(left_red.iter().any(|&v| v == 1.0));
        assert!(right_red.iter().any(|&v| v == 1.0));
    }

    #[test]
    fn distant_blobs_are_disjoint_colors() {
        let s = state_at([0.2, 0.8], [0.8, 0.2]);
        let (w, h) = (64usize, 64usize);
        let mut img = vec![0.0f32; 6 * w * h];
        render_stereo(&s, w, h, 0.05, &mut img);
        let plane = w * h;
        for idx in 0..plane {
            for eye in 0..2 {
                let r = img[eye * 3 * plane + idx];
                let g = img[eye * 3 * plane + plane + idx];
                assert!(!(r == 1.0 && g == 1.0), "red and green overlap at {idx}");
                assert!(img[eye * 3 * plane + 2 * plane + idx] == 0.0);
            }
        }
    }

    /// Renderer-state consistency: the darkest object-valued pixel recovers
    /// the object position to within one pixel pitch.
    #[test]
    fn object_position_recoverable_from_depth() {
        let (w, h) = (64usize, 64usize);
        let s = state_at([0.2, 0.8], [0.61, 0.33]);
        let mut img = vec![0.0f32; w * h];
        render_depth(&s, w, h, &mut img);
        let object_pixels: Vec<(usize, usize)> = (0..h)
            .flat_map(|i| (0..w).map(move |j| (i, j)))
            .filter(|&(i, j)| img[i * w + j] == OBJECT_DEPTH)
            .collect();
        assert!(!object_pixels.is_empty());
        let (mut cx, mut cy) = (0.0f32, 0.0f32);
        for &(i, j) in &object_pixels {
            cx += (j as f32 + 0.5) / w as f32;
            cy += 1.0 - (i as f32 + 0.5) / h as f32;
        }
        cx /= object_pixels.len() as f32;
        cy /= object_pixels.len() as f32;
        assert!((cx - s.object[0]).abs() <= 1.0 / w as f32);
        assert!((cy - s.object[1]).abs() <= 1.0 / h as f32);
    }

    #[test]
    fn proprio_has_seven_entries_with_time_fraction() {
        let cfg = EnvConfig::default();
        let adr = AdrSampler::from_config(&cfg.adr).unwrap();
        let mut s = reset(&cfg, &adr, 0, 0, 0);
        let p = proprio(&s, cfg.t_max);
        assert_eq!(p.len(), 7);
        assert_eq!(p[6], 0.0);
        crate::env::step(&mut s, &cfg, &adr, [0.5, -0.25, 0.0]);
        let p = proprio(&s, cfg.t_max);
        assert_eq!(p[3], 0.5);
        assert_eq!(p[4], -0.25);
        assert_eq!(p[6], 1.0 / cfg.t_max as f32);
    }
}
