use churnstore_cli::fuzz::{run_one, FuzzConfig};
use churnstore_sim::scenario::DelayModel;

fn main() {
    let mut cfg = FuzzConfig::new(77);
    cfg.runs = 14;
    cfg.churn_events = 0;
    cfg.nodes = (5, 7);
    cfg.ops = 60;
    cfg.delay_models = vec![DelayModel::Uniform];
    cfg.params.beta = churnstore_protocol::params::rat_from_decimal("0.12").unwrap();
    let spec = cfg.spec_for(13);
    let report = run_one(&spec, 13).unwrap();
    println!("pass={} failing={:?}", report.pass(), report.failing_properties());
    for v in report.verdicts.iter().filter(|v| !v.violations.is_empty()) {
        for viol in v.violations.iter().take(4) {
            println!("[{}] lines {:?}: {}", v.property, viol.witness_lines, viol.explanation);
        }
    }
}
