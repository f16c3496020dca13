mod common;

use ghp_core::sim::{run_closed_loop, ClosedLoop, Profile, Scenario};
use proptest::prelude::*;

use common::{explicit_zeta_gap, scenario};

fn short(name: &str, outdoor: f64, gains: [f64; 4], minutes: f64) -> Scenario {
    let mut sc = scenario(name, &[]);
    sc.disturbances.outdoor = Profile::steps(&[(0.0, outdoor), (minutes / 120.0, outdoor + 3.0)]);
    sc.disturbances.gains = gains.iter().map(|&q| Profile::constant(q)).collect();
    sc.horizon = minutes * 60.0;
    sc.record_every = 10;
    sc
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn explicit_zeta_form_agrees(outdoor in -5.0f64..10.0, gains in prop::array::uniform4(0.0f64..0.3)) {
        let sc = short("s5-scenario1-steady.cfg", outdoor, gains, 3.0);
        let gap = explicit_zeta_gap(&sc, 1800);
        prop_assert!(gap < 1e-9, "per-step gap {gap:e}");
    }

    #[test]
    fn runs_are_reproducible_and_keep_duals_nonnegative(
        outdoor in -12.0f64..10.0,
        gains in prop::array::uniform4(0.0f64..0.3),
        joint in any::<bool>(),
    ) {
        let name = if joint { "s5-scenario2-steady.cfg" } else { "s5-scenario1-steady.cfg" };
        let sc = short(name, outdoor, gains, 5.0);
        let a = run_closed_loop(&sc).unwrap();
        let b = run_closed_loop(&sc).unwrap();
        prop_assert!(a.abort.is_none());
        prop_assert_eq!(&a, &b);

        let cl = ClosedLoop::new(&sc).unwrap();
        let duals = cl.layout().duals();
        for r in &a.rows {
            for &d in &duals {
                prop_assert!(r.state[d] >= 0.0);
            }
            for (q, z) in r.flows.iter().zip(sc.graph.zones()) {
                prop_assert!((0.0..=z.max_flow).contains(q));
            }
        }
        let energy: Vec<f64> = a.rows.iter().map(|r| r.energy_kwh).collect();
        prop_assert!(energy.windows(2).all(|w| w[1] >= w[0]));
    }
}

#[test]
fn starting_at_the_optimum_stays_there() {
    for name in ["s5-scenario1-steady.cfg", "s5-scenario2-steady.cfg"] {
        let sc = scenario(name, &[]);
        let cl = ClosedLoop::new(&sc).unwrap();
        let tr = run_closed_loop(&sc).unwrap();
        let x = tr.final_state().unwrap().to_vec();
        let mut again = sc.clone();
        again.initial_state = Some(x.clone());
        again.horizon = 600.0;
        let tr2 = run_closed_loop(&again).unwrap();
        let drift = tr2.final_state().unwrap().iter().zip(&x).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(drift < 1e-6, "{name}: drift {drift:e}");
        assert!(cl.plant_residual(&x, 0).unwrap() < 1e-6);
    }
}
