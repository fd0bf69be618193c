use std::f64::consts::PI;

use proptest::prelude::*;

use comerge_core::dynamics::{ControlInput, VehicleParams, VehicleState};
use comerge_core::planning::Trajectory;
use comerge_core::reflection::{
    detect_failures, obb_iou, reflection_loss, FailureCase, FailureContext, NeighborState, OrientedBox, Thresholds,
};
use comerge_core::scenario::{AgentId, SampledCenterline};

fn boxes() -> impl Strategy<Value = OrientedBox> {
    (prop::array::uniform2(-5.0f64..5.0), -PI..PI, 0.5f64..6.0, 0.5f64..3.0)
        .prop_map(|(c, h, l, w)| OrientedBox::new(c, h, l, w))
}

fn moved(b: &OrientedBox, angle: f64, shift: [f64; 2]) -> OrientedBox {
    let (s, c) = angle.sin_cos();
    let center = [
        c * b.center[0] - s * b.center[1] + shift[0],
        s * b.center[0] + c * b.center[1] + shift[1],
    ];
    OrientedBox::new(center, b.heading + angle, b.length, b.width)
}

proptest! {
    #[test]
    fn iou_symmetric_and_rigid(a in boxes(), b in boxes(), angle in -PI..PI, shift in prop::array::uniform2(-50.0f64..50.0)) {
        let ab = obb_iou(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - obb_iou(&b, &a).unwrap()).abs() <= 1e-12);
        let moved_iou = obb_iou(&moved(&a, angle, shift), &moved(&b, angle, shift)).unwrap();
        prop_assert!((ab - moved_iou).abs() <= 1e-9);
    }

    #[test]
    fn iou_with_itself_is_one(a in boxes()) {
        prop_assert_eq!(obb_iou(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn loss_grows_with_error(
        lm in 0.0f64..5.0,
        target in prop::collection::vec(prop::array::uniform2(-20.0f64..20.0), 1..31),
        offset in 0.0f64..3.0,
        extra in 0.01f64..3.0,
        alpha in 0.01f64..5.0,
    ) {
        let shifted = |d: f64| target.iter().map(|p| [p[0] + d, p[1]]).collect::<Vec<_>>();
        let near = reflection_loss(lm, &shifted(offset), &target, alpha).unwrap();
        let far = reflection_loss(lm, &shifted(offset + extra), &target, alpha).unwrap();
        prop_assert!(near >= 0.0);
        prop_assert!(far > near);
    }
}

/// A straight plan on the lane with a neighbour placed somewhere ahead.
fn scene(lateral: f64, gap: f64, speed: f64) -> (Trajectory, Vec<NeighborState>, SampledCenterline) {
    let traj = Trajectory {
        dt: 0.1,
        points: (0..31).map(|k| [k as f64, lateral * k as f64 / 30.0]).collect(),
    };
    let neighbours = vec![NeighborState {
        id: AgentId(1),
        state: VehicleState::new(gap, 0.0, PI, 0.0),
        control: ControlInput::new(speed, 0.0),
    }];
    let centerline = SampledCenterline((0..50).map(|i| [i as f64 * 31.0 / 49.0, 0.0]).collect());
    (traj, neighbours, centerline)
}

fn run(
    thr: &Thresholds,
    traj: &Trajectory,
    neighbours: &[NeighborState],
    centerline: &SampledCenterline,
    es: f64,
    cs: f64,
) -> Vec<FailureCase> {
    let params = VehicleParams::default();
    let ctx = FailureContext {
        tick: 0,
        agent: AgentId(0),
        trajectory: traj,
        ego_heading: 0.0,
        neighbors: neighbours,
        centerline,
        es,
        cs,
        params: &params,
    };
    detect_failures(&ctx, thr).unwrap()
}

proptest! {
    // Lenient thresholds never add failures: higher eps_col and eps_p, lower
    // eps_e and eps_c (a case fires when the score falls below eps_e / eps_c).
    #[test]
    fn lenient_thresholds_only_remove_cases(
        lateral in -3.0f64..3.0, gap in 5.0f64..60.0, speed in 0.0f64..10.0,
        es in 0.0f64..1.0, cs in 0.0f64..1.0,
        base in (0.01f64..0.9, 0.1f64..3.0, 0.05f64..1.0, 0.05f64..1.0),
        loosen in (0.0f64..0.09, 0.0f64..2.0, 0.0f64..0.05, 0.0f64..0.05),
    ) {
        let strict = Thresholds { eps_col: base.0, eps_p: base.1, eps_e: base.2, eps_c: base.3, alpha_weight: 1.0 };
        let lenient = Thresholds {
            eps_col: (base.0 + loosen.0).min(0.99),
            eps_p: base.1 + loosen.1,
            eps_e: base.2 - loosen.2,
            eps_c: base.3 - loosen.3,
            alpha_weight: 1.0,
        };
        let (traj, neighbours, centerline) = scene(lateral, gap, speed);
        let kinds = |thr: &Thresholds| run(thr, &traj, &neighbours, &centerline, es, cs)
            .into_iter().map(|f| f.kind).collect::<Vec<_>>();
        let strict_kinds = kinds(&strict);
        for k in kinds(&lenient) {
            prop_assert!(strict_kinds.contains(&k), "{k:?} appeared under lenient thresholds");
        }
    }
}
