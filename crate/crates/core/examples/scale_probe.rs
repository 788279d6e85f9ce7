use std::sync::atomic::Ordering::Relaxed;
use std::time::Instant;
use disassoc::params::Params;
use disassoc::pipeline::anonymize;
use disassoc::refine::{
    PROF_BSC_NS, PROF_EVAL_N, PROF_PASSES, PROF_P_BAG, PROF_P_ELIGIBLE, PROF_P_ROUNDS,
    PROF_P_SETUP, PROF_P_SUPPORTS, PROF_SORT_NS, PROF_SPEC_NS,
};
use disassoc::synth::generate;

fn main() {
    let p = Params::new(5, 2, 30).unwrap();
    let mut times = Vec::new();
    for n in [100_000usize, 200_000] {
        let base = (
            PROF_PASSES.load(Relaxed),
            PROF_EVAL_N.load(Relaxed),
            PROF_BSC_NS.load(Relaxed),
            PROF_SORT_NS.load(Relaxed),
            PROF_SPEC_NS.load(Relaxed),
        );
        let d = generate(n, 5_000, 10.0, 1).unwrap();
        let t = Instant::now();
        let (da, merges) = anonymize(&d, &p).unwrap();
        let dt = t.elapsed();
        println!(
            "n={n} total={dt:?} nodes={} merges={} passes={} evals={} bsc_cpu={:.2}s sort={:.2}s spec_wall={:.2}s",
            da.forest.len(),
            merges.len(),
            PROF_PASSES.load(Relaxed) - base.0,
            PROF_EVAL_N.load(Relaxed) - base.1,
            (PROF_BSC_NS.load(Relaxed) - base.2) as f64 / 1e9,
            (PROF_SORT_NS.load(Relaxed) - base.3) as f64 / 1e9,
            (PROF_SPEC_NS.load(Relaxed) - base.4) as f64 / 1e9,
        );
        println!(
            "  setup={:.2}s supports={:.2}s eligible={:.2}s rounds={:.2}s bag={:.2}s",
            PROF_P_SETUP.load(Relaxed) as f64 / 1e9,
            PROF_P_SUPPORTS.load(Relaxed) as f64 / 1e9,
            PROF_P_ELIGIBLE.load(Relaxed) as f64 / 1e9,
            (PROF_P_ROUNDS.load(Relaxed) - PROF_P_BAG.load(Relaxed)) as f64 / 1e9,
            PROF_P_BAG.load(Relaxed) as f64 / 1e9,
        );
        times.push(dt.as_secs_f64());
    }
    println!("ratio={:.2}", times[1] / times[0]);
}
