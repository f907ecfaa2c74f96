//! Orientation arithmetic: distances, interpolation and rate-limited turning.

use headturn::geom::{angular_distance, slerp, step_toward, AngularRate, UnitQuaternion, Vec3};

fn main() -> anyhow::Result<()> {
    let ahead = UnitQuaternion::from_yaw_degrees(0.0);
    let left = UnitQuaternion::from_yaw_degrees(90.0);
    let up = UnitQuaternion::from_axis_angle(Vec3::new(0.0, 1.0, 0.0), -0.3)?;

    println!("ahead -> left   {:7.3} deg", angular_distance(&ahead, &left).to_degrees());
    println!("ahead -> -ahead {:7.3} deg (double cover)", angular_distance(&ahead, &ahead.neg()).to_degrees());
    println!("left  -> up     {:7.3} deg", angular_distance(&left, &up).to_degrees());

    for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let q = slerp(&ahead, &left, t);
        println!("slerp t={t:.2}  yaw {:6.2} deg", q.yaw().to_degrees());
    }

    // a head turning at 36 deg/s, sampled every 0.2 s
    let rate = AngularRate::from_degrees_per_sec(36.0)?;
    let mut q = ahead;
    let mut ticks = 0;
    while angular_distance(&q, &left) > 0.0 {
        q = step_toward(&q, &left, rate, 0.2);
        ticks += 1;
    }
    println!("90 deg turn reached after {ticks} ticks ({:.1} s)", ticks as f64 * 0.2);
    Ok(())
}
