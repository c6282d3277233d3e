#[test]
fn dbg_noiseless() {
    use ticalib::config::*;
    use ticalib::harness::*;
    let mut cfg = RunConfig::desk();
    cfg.run.symbols = 24_576;
    cfg.run.warmup_symbols = 8_192;
    cfg.run.measure_symbols = 8_192;
    cfg.adaptation.block_samples = 2048;
    cfg.channel.noise_sigma = 0.0;
    let mut setup = CaseSetup::from_config(&cfg, 7);
    setup.mode = RunMode::NoCal;
    setup.zero_impairments = true;
    let r = run_case_with(&cfg, &setup).unwrap();
    println!("ber={} lag={} mse={} sndr={:?} flagged={}", r.ber, r.ber_lag, r.mse, r.sndr_db, r.flagged);
}
