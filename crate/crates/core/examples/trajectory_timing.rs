use std::time::Instant;

use qe_mipt::channels::ChannelTag;
use qe_mipt::circuit::{run_trajectory, ChannelSpec, CircuitSpec, Geometry};
use qe_mipt::observables::Observable;

fn main() {
    for (l, all_steps) in [(12, true), (8, false), (12, false), (16, false)] {
        let mut spec = CircuitSpec::new(Geometry::Square(l), 0.2)
            .with_channel(ChannelSpec::symmetric(ChannelTag::Dephasing, 0.1))
            .with_seed(7);
        if !all_steps {
            spec = spec.record_last(1);
        }
        let obs = [Observable::I3, Observable::CeeHalf];
        let t0 = Instant::now();
        let n = 3;
        for i in 0..n {
            run_trajectory(&spec, &obs, i).unwrap();
        }
        println!("L={l} all_steps={all_steps}: {:.3} s/trajectory", t0.elapsed().as_secs_f64() / n as f64);
    }
}
