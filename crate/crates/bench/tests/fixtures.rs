use bimanual::control::ControllerKind;
use bimanual_bench::{fresh_agent, mid_approach, warm_trainer};

#[test]
fn fixtures_are_usable() {
    let t = warm_trainer(ControllerKind::JointPosition, 2);
    assert_eq!(t.buffer.len(), 400);
    let (env, a) = mid_approach(ControllerKind::CartesianImpedance);
    assert_eq!(env.step_count(), 3);
    assert_eq!(a.len(), env.config().action_dim());
    assert_eq!(fresh_agent(ControllerKind::VariableCartesianImpedance).action_dim, 12);
}
