// Own test binary: the proc-root override is process-global.

use edgeprof_core::sampler::{start_sampling, SamplerConfig, Scope, PROC_ROOT_ENV};
use edgeprof_core::Error;

#[test]
fn unreadable_counters_are_a_capability_error() {
    let empty = tempfile::tempdir().unwrap();
    std::env::set_var(PROC_ROOT_ENV, empty.path());
    for scope in [Scope::System, Scope::ProcessTree { pid: 1 }] {
        let err = start_sampling(SamplerConfig {
            scope,
            ..SamplerConfig::default()
        })
        .unwrap_err();
        assert!(matches!(err, Error::PlatformCapability(_)), "{err}");
    }
    std::env::remove_var(PROC_ROOT_ENV);
}
