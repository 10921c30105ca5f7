use hypercurv::lipschitz::*;

fn main() {
    let cfg = VerifierConfig {
        samples: 500,
        ..VerifierConfig::default()
    };
    match verify_all(&cfg) {
        Ok(reports) => {
            for r in &reports {
                println!(
                    "{:28} max_ratio={:.6} violations={} const={:.4}",
                    r.name, r.max_ratio, r.violations, r.value
                );
            }
        }
        Err(e) => println!("ERROR: {e}"),
    }
}
