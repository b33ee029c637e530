use bfvae::harness::{RunConfig, DEVICE_ENV, OUT_DIR_ENV};

// Environment variables are process-wide, so every check lives in one test.
#[test]
fn environment_overrides() {
    let cfg = RunConfig { out_dir: Some("from_config".into()), ..Default::default() };
    std::env::remove_var(OUT_DIR_ENV);
    std::env::remove_var(DEVICE_ENV);
    assert_eq!(cfg.clone().with_env_overrides().out_dir, Some("from_config".into()));
    assert!(RunConfig::check_device().is_ok());

    std::env::set_var(OUT_DIR_ENV, "/tmp/from_env");
    let over = cfg.clone().with_env_overrides();
    assert_eq!(over.out_dir, Some("/tmp/from_env".into()));
    assert_eq!(over.hash(), cfg.hash());

    std::env::set_var(DEVICE_ENV, "cpu");
    assert!(RunConfig::check_device().is_ok());
    std::env::set_var(DEVICE_ENV, "cuda:0");
    assert!(RunConfig::check_device().is_err());
    std::env::remove_var(DEVICE_ENV);
    std::env::remove_var(OUT_DIR_ENV);
}
