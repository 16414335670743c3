use sbl::config::RunConfig;
use sbl::corpus::sample_pair;
use sbl::corruptor::{collect_corruption_stats, make_example_traced};
use sbl::experiment::SyntheticSetup;
use sbl::rng::stream;

fn setup() -> (RunConfig, SyntheticSetup) {
    let mut cfg = RunConfig::default();
    cfg.synthetic.documents = 100;
    let s = SyntheticSetup::new(&cfg).unwrap();
    (cfg, s)
}

#[test]
fn monte_carlo_rates_match_configuration() {
    let (cfg, s) = setup();
    let c = &cfg.train.corruption;
    let stats = collect_corruption_stats(&s.store, c, s.vocab.len(), 10_000, 0).unwrap();
    for check in stats.checks(c) {
        assert!(check.ok(), "{check}");
    }
}

#[test]
fn targets_restore_the_packed_sequence() {
    let (cfg, s) = setup();
    let c = &cfg.train.corruption;
    let mut shuffled = 0;
    for i in 0..10_000 {
        let rng = &mut stream(5, i);
        let pair = sample_pair(&s.store, c.max_len - 3, rng).unwrap();
        let (ex, trace) = make_example_traced(&pair, c, s.vocab.len(), true, rng).unwrap();
        ex.check_invariants().unwrap();
        assert_eq!(ex.restored(), trace.packed, "example {i}");
        shuffled += ex.shuffle_targets.len();
    }
    assert!(shuffled > 0);
}
