//! One pass/fail line per acceptance criterion. Pass criterion ids as
//! arguments to run a subset.

use nngp_sym_suite::{run, zero_pe_note};

fn main() {
    let args: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let ids: Vec<u32> = if args.is_empty() { (1..=12).collect() } else { args };
    let mut failed = Vec::new();
    for id in ids {
        let o = run(id);
        println!(
            "criterion {:>2} {:<6} {:<32} {:>8.1}s  {}",
            o.id,
            if o.pass { "PASS" } else { "FAIL" },
            o.title,
            o.elapsed.as_secs_f64(),
            o.detail
        );
        if id == 3 {
            match zero_pe_note() {
                Ok(s) => println!("   note: {s}"),
                Err(e) => println!("   note: zero-encoding comparison failed: {e}"),
            }
        }
        if !o.pass {
            failed.push(o.id);
        }
    }
    if failed.is_empty() {
        println!("all criteria passed");
    } else {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
