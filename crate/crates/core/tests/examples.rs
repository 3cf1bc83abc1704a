macro_rules! example {
    ($module:ident, $file:literal) => {
        mod $module {
            include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/", $file));
        }

        #[test]
        fn $module() {
            $module::run_example().expect(concat!($file, " should run"));
        }
    };
}

example!(load_norms, "load_norms.rs");
example!(render_prompts, "render_prompts.rs");
example!(mock_experiment, "mock_experiment.rs");
example!(record_replay, "record_replay.rs");
example!(sentence_context, "sentence_context.rs");
example!(spearman_stats, "spearman_stats.rs");
example!(fit_analysis, "fit_analysis.rs");
example!(parameter_sweep, "parameter_sweep.rs");
