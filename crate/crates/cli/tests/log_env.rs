// Separate binary: the environment variable is process-wide.

use qfield_cli::{run, EXIT_CONFIG, EXIT_PASS};

#[test]
fn log_level_is_validated() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    std::fs::write(
        &cfg,
        "[gauge]\nfamily = \"power_law\"\nnu = 0.5\n[field]\nd = 1\n[run]\nmaster_seed = 1\n",
    )
    .unwrap();
    let args = |out: &str| {
        vec![
            "qfield".to_owned(),
            "entropy-integral".to_owned(),
            "--config".to_owned(),
            cfg.display().to_string(),
            "--out".to_owned(),
            tmp.path().join(out).display().to_string(),
        ]
    };
    std::env::set_var("QFIELD_LOG", "verbose");
    assert_eq!(run(args("a")), EXIT_CONFIG);
    std::env::set_var("QFIELD_LOG", "debug");
    assert_eq!(run(args("b")), EXIT_PASS);
}
