//! Fixed-cadence view capture with an SSIM novelty gate.

use crate::error::{Error, Result};
use crate::geom::UnitQuaternion;
use crate::world::{in_view, render_in, visible_in, FovParams, Pose, Raster, Scene, Sighting};

/// Side length of the uniform SSIM window.
pub const SSIM_WINDOW: usize = 8;
/// Novelty threshold on SSIM scaled to `[0, 100]`.
pub const DEFAULT_SSIM_THRESHOLD: f64 = 60.0;

const DYNAMIC_RANGE: f64 = 255.0;
const C1: f64 = (0.01 * DYNAMIC_RANGE) * (0.01 * DYNAMIC_RANGE);
const C2: f64 = (0.03 * DYNAMIC_RANGE) * (0.03 * DYNAMIC_RANGE);

struct Integral {
    w: usize,
    data: Vec<u64>,
}

impl Integral {
    fn build(width: usize, height: usize, f: impl Fn(usize) -> u64) -> Self {
        let w = width + 1;
        let mut data = vec![0u64; w * (height + 1)];
        for y in 0..height {
            let mut row = 0u64;
            for x in 0..width {
                row += f(y * width + x);
                data[(y + 1) * w + x + 1] = data[y * w + x + 1] + row;
            }
        }
        Self { w, data }
    }

    fn window(&self, x: usize, y: usize, n: usize) -> u64 {
        let w = self.w;
        self.data[(y + n) * w + x + n] + self.data[y * w + x] - self.data[y * w + x + n] - self.data[(y + n) * w + x]
    }
}

/// Mean SSIM over all 8×8 windows at stride 1, with uniform weights and
/// stabilizers for an 8-bit range.
pub fn ssim(a: &Raster, b: &Raster) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Contract(format!(
            "ssim on {}x{} vs {}x{} rasters",
            a.width, a.height, b.width, b.height
        )));
    }
    let (w, h) = (a.width, a.height);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Contract(format!("raster {w}x{h} smaller than the ssim window")));
    }
    let (da, db) = (&a.data, &b.data);
    let sa = Integral::build(w, h, |i| u64::from(da[i]));
    let sb = Integral::build(w, h, |i| u64::from(db[i]));
    let saa = Integral::build(w, h, |i| u64::from(da[i]) * u64::from(da[i]));
    let sbb = Integral::build(w, h, |i| u64::from(db[i]) * u64::from(db[i]));
    let sab = Integral::build(w, h, |i| u64::from(da[i]) * u64::from(db[i]));

    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for y in 0..=h - SSIM_WINDOW {
        for x in 0..=w - SSIM_WINDOW {
            let ma = sa.window(x, y, SSIM_WINDOW) as f64 / n;
            let mb = sb.window(x, y, SSIM_WINDOW) as f64 / n;
            let va = saa.window(x, y, SSIM_WINDOW) as f64 / n - ma * ma;
            let vb = sbb.window(x, y, SSIM_WINDOW) as f64 / n - mb * mb;
            let cov = sab.window(x, y, SSIM_WINDOW) as f64 / n - ma * mb;
            let num = (2.0 * ma * mb + C1) * (2.0 * cov + C2);
            let den = (ma * ma + mb * mb + C1) * (va + vb + C2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, Default)]
pub struct NoveltyState {
    pub last_novel: Option<Raster>,
    pub paused: bool,
    pub resume_time: Option<f64>,
}

/// Returns whether `current` is novel relative to the last novel frame, storing
/// it as the new reference when it is. `threshold` is on the `[0, 100]` scale.
pub fn novelty_gate(state: &mut NoveltyState, current: &Raster, threshold: f64) -> Result<bool> {
    let novel = match &state.last_novel {
        None => true,
        Some(prev) => ssim(prev, current)? * 100.0 < threshold,
    };
    if novel {
        state.last_novel = Some(current.clone());
    }
    Ok(novel)
}

/// One captured view.
#[derive(Debug, Clone)]
pub struct Observation {
    pub t: f64,
    pub raster: Raster,
    pub entities: Vec<Sighting>,
    pub head: UnitQuaternion,
    pub body: Pose,
    pub goal_in_view: bool,
}

/// Renders the view and enumerates visible entities for a given head pose.
pub fn observe(scene: &Scene, fov: &FovParams, body: &Pose, head: &UnitQuaternion, t: f64) -> Observation {
    let snaps = scene.snapshot_at(t);
    let eye = fov.eye(body.position);
    Observation {
        t,
        raster: render_in(&snaps, eye, head, fov),
        entities: visible_in(&snaps, eye, head, fov),
        head: *head,
        body: *body,
        goal_in_view: in_view(eye, head, fov, scene.goal.position),
    }
}

/// Perception module: gated capture that can be paused while the head turns.
#[derive(Debug, Clone)]
pub struct Pem {
    pub state: NoveltyState,
    pub threshold: f64,
}

/// Slack for comparing clock ticks against resume times.
const CLOCK_EPS: f64 = 1e-6;

impl Pem {
    pub fn new(threshold: f64) -> Self {
        Self { state: NoveltyState::default(), threshold }
    }

    /// Pauses capture until [`Pem::resume_at`] sets a resume time and the clock reaches it.
    pub fn pause(&mut self) {
        self.state.paused = true;
        self.state.resume_time = None;
    }

    pub fn resume_at(&mut self, t: f64) {
        if self.state.paused {
            self.state.resume_time = Some(t);
        }
    }

    /// Clears an elapsed pause and reports whether capture is still suspended.
    pub fn is_paused(&mut self, clock: f64) -> bool {
        if self.state.paused && self.state.resume_time.is_some_and(|r| clock + CLOCK_EPS >= r) {
            self.state.paused = false;
            self.state.resume_time = None;
        }
        self.state.paused
    }

    /// Emits an observation only when not paused and the view is novel.
    pub fn capture(
        &mut self,
        clock: f64,
        scene: &Scene,
        fov: &FovParams,
        body: &Pose,
        head: &UnitQuaternion,
    ) -> Result<Option<Observation>> {
        if self.is_paused(clock) {
            return Ok(None);
        }
        let obs = observe(scene, fov, body, head, clock);
        if novelty_gate(&mut self.state, &obs.raster, self.threshold)? {
            Ok(Some(obs))
        } else {
            Ok(None)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec3;
    use crate::world::{Condition, Entity, Goal};
    use proptest::prelude::*;

    /// Direct per-window evaluation, independent of the integral-image path.
    pub(crate) fn naive_ssim(a: &Raster, b: &Raster) -> f64 {
        let n = SSIM_WINDOW;
        let mut total = 0.0;
        let mut count = 0;
        for y in 0..=a.height - n {
            for x in 0..=a.width - n {
                let mut xs = Vec::new();
                let mut ys = Vec::new();
                for dy in 0..n {
                    for dx in 0..n {
                        xs.push(a.get(x + dx, y + dy) as f64);
                        ys.push(b.get(x + dx, y + dy) as f64);
                    }
                }
                let m = (n * n) as f64;
                let mx = xs.iter().sum::<f64>() / m;
                let my = ys.iter().sum::<f64>() / m;
                let vx = xs.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / m;
                let vy = ys.iter().map(|v| (v - my).powi(2)).sum::<f64>() / m;
                let cxy = xs.iter().zip(&ys).map(|(p, q)| (p - mx) * (q - my)).sum::<f64>() / m;
                total += ((2.0 * mx * my + C1) * (2.0 * cxy + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2));
                count += 1;
            }
        }
        total / count as f64
    }

    fn checker(w: usize, h: usize) -> Raster {
        Raster::from_fn(w, h, |x, y| if (x + y) % 2 == 0 { 0 } else { 255 })
    }

    #[test]
    fn ssim_identity_cases() {
        let a = checker(16, 16);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let z = Raster::zeros(16, 16);
        assert_eq!(ssim(&z, &z).unwrap(), 1.0);
    }

    #[test]
    fn ssim_inverted_checkerboard_is_dissimilar() {
        let a = checker(16, 16);
        let inv = Raster::from_fn(16, 16, |x, y| 255 - a.get(x, y));
        let s = ssim(&a, &inv).unwrap();
        assert!(s < 0.6);
        assert!((s - naive_ssim(&a, &inv)).abs() < 1e-9);
    }

    #[test]
    fn ssim_rejects_mismatched_dims() {
        assert!(ssim(&Raster::zeros(16, 16), &Raster::zeros(16, 17)).is_err());
    }

    #[test]
    fn gate_first_identical_and_mutation() {
        let mut st = NoveltyState::default();
        let a = checker(16, 16);
        assert!(novelty_gate(&mut st, &a, 60.0).unwrap());
        assert!(!novelty_gate(&mut st, &a, 60.0).unwrap());
        assert_eq!(st.last_novel.as_ref(), Some(&a));
    }

    #[test]
    fn pause_and_resume() {
        let mut pem = Pem::new(60.0);
        pem.pause();
        assert!(pem.is_paused(100.0));
        // a 1.6 s hold starting at t0 = 3.0 resumes at 3.8
        pem.resume_at(3.0 + 0.8);
        assert!(pem.is_paused(3.6));
        assert!(!pem.is_paused(3.8));
    }

    #[test]
    fn static_scene_emits_once() {
        let mut scene = Scene::new("s", Condition::Mdc, Goal { text: "g".into(), position: Vec3::new(9.0, 0.0, 0.0) });
        scene.entities.push(Entity::new("a", "bench", Vec3::new(6.0, 1.0, 0.5), Vec3::new(1.0, 0.5, 0.5)));
        let fov = FovParams::default();
        let pose = Pose { t: 0.0, position: Vec3::ZERO, heading: UnitQuaternion::IDENTITY, velocity: Vec3::ZERO };
        let mut pem = Pem::new(60.0);
        let mut emitted = 0;
        for k in 0..20 {
            let t = k as f64 * 0.2;
            if pem.capture(t, &scene, &fov, &pose, &UnitQuaternion::IDENTITY).unwrap().is_some() {
                emitted += 1;
            }
        }
        assert_eq!(emitted, 1);
    }

    fn arb_raster() -> impl Strategy<Value = Raster> {
        prop::collection::vec(any::<u8>(), 16 * 16).prop_map(|data| Raster { width: 16, height: 16, data })
    }

    proptest! {
        #[test]
        fn ssim_symmetric_and_matches_naive(a in arb_raster(), b in arb_raster()) {
            let s = ssim(&a, &b).unwrap();
            prop_assert!((s - ssim(&b, &a).unwrap()).abs() < 1e-9);
            prop_assert!((s - naive_ssim(&a, &b)).abs() < 1e-9);
            prop_assert!((-1.0..=1.0 + 1e-12).contains(&s));
        }

        #[test]
        fn non_novel_frames_leave_reference(a in arb_raster(), b in arb_raster()) {
            let mut st = NoveltyState::default();
            novelty_gate(&mut st, &a, 60.0).unwrap();
            let novel = novelty_gate(&mut st, &b, 60.0).unwrap();
            if !novel {
                prop_assert_eq!(st.last_novel.as_ref(), Some(&a));
            }
        }
    }
}
