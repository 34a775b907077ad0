use ems_core::planner::*;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn random_path(rng: &mut ChaCha8Rng) -> PathProfile {
    let n = rng.gen_range(20..200);
    let ds = rng.gen_range(0.5..3.0);
    let mut pts = Vec::with_capacity(n);
    let mut kappa: f64 = 0.0;
    for i in 0..n {
        if rng.gen_bool(0.15) {
            kappa = rng.gen_range(-1.0..1.0);
        } else if rng.gen_bool(0.3) {
            kappa = 0.0;
        }
        pts.push((i as f64 * ds, kappa));
    }
    PathProfile::new(pts).unwrap()
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(999);
    let mut fail = 0;
    let total = 1000;
    for trial in 0..total {
        let path = random_path(&mut rng);
        let v_max = rng.gen_range(3.0..15.0);
        let lim = PlannerLimits {
            v_max,
            a_lat_max: rng.gen_range(1.0..3.0),
            a_lon_max: rng.gen_range(0.8..2.5),
            d_lon_max: rng.gen_range(1.0..3.5),
            j_lon_max: rng.gen_range(1.0..4.0),
            v_start: rng.gen_range(0.0..v_max),
            v_end: rng.gen_range(0.0..v_max),
        };
        match plan_speed(&path, &lim) {
            Ok(p) => {
                assert!(satisfies_constraints(&p.v, &path, &lim), "trial {trial}: checker disagrees");
            }
            Err(PlannerError::NoConvergence { residual, .. }) => {
                fail += 1;
                println!("trial {trial}: NO CONVERGENCE residual={residual:.2e} n={} vmax={v_max:.1}", path.len());
            }
            Err(e) => println!("trial {trial}: error {e}"),
        }
    }
    println!("{fail}/{total} failures");
}
