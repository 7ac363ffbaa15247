use std::fs;
use std::path::PathBuf;

use genlra_core::attacks::AttackSpec;
use genlra_core::data::load_csv_group;
use genlra_core::harness::{
    run_experiment, AttackEntry, ExperimentConfig, GeneratorEntry, PopulationSource,
};
use genlra_core::toygen::{sample_population, GeneratorSpec};

fn bundled(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::from_json(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn bundled_configs_parse() {
    let smoke = bundled("smoke.json");
    assert_eq!((smoke.generators.len(), smoke.attacks.len(), smoke.seeds.len()), (1, 2, 1));
    assert_eq!(smoke.n_sizes, vec![100]);
    let bench = bundled("benchmark.json");
    assert_eq!((bench.generators.len(), bench.attacks.len(), bench.seeds.len()), (3, 7, 10));
    assert_eq!(bench.n_sizes, vec![250]);
}

#[test]
fn config_round_trips_through_json() {
    let cfg = bundled("benchmark.json");
    let back = ExperimentConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.hash(), cfg.hash());
    let mut other = cfg.clone();
    other.seeds.push(99);
    assert_ne!(other.hash(), cfg.hash());
}

#[test]
fn csv_population_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let PopulationSource::Spec(pop) = bundled("benchmark.json").population else { unreachable!() };
    let csv = dir.path().join("people.csv");
    sample_population(&pop, 120, 11).unwrap().save_csv(&csv).unwrap();

    // the written file reloads with the same shape
    let loaded = load_csv_group(&[&csv]).unwrap();
    assert_eq!(loaded[0].len(), 120);
    assert_eq!(loaded[0].schema().len(), 7);

    let cfg = ExperimentConfig {
        population: PopulationSource::Csv(csv),
        generators: vec![
            GeneratorEntry { name: None, spec: GeneratorSpec::ParametricFit },
            GeneratorEntry {
                name: Some("copycat".into()),
                spec: GeneratorSpec::Memorizer { noise_fraction: 0.0, resample_probability: 0.0 },
            },
        ],
        attacks: vec![
            AttackEntry::new(AttackSpec::Dcr),
            AttackEntry::new(AttackSpec::Domias),
        ],
        n_sizes: vec![40],
        seeds: vec![0, 1],
        fpr_levels: vec![0.1],
        encoder_fit: Default::default(),
        output_dir: None,
        parallel: true,
    };
    let run = run_experiment(&cfg, &dir.path().join("out"), false).unwrap();
    assert_eq!(run.cells.len(), 8);
    assert_eq!(run.completed(), 8);
    assert!(run.summary.cells.iter().all(|c| c.dataset == "people/n=40"));
    // exact copies put every training row at distance zero
    let copy = run
        .summary
        .groups
        .iter()
        .find(|g| g.generator == "copycat" && g.attack == "dcr")
        .unwrap();
    assert!(copy.auc.mean > 0.75, "{}", copy.auc.mean);
}

#[test]
fn oracle_requires_population_spec_for_csv_sources() {
    let mut cfg = bundled("smoke.json");
    cfg.population = PopulationSource::Csv("unused.csv".into());
    cfg.generators = vec![GeneratorEntry {
        name: None,
        spec: GeneratorSpec::PopulationOracle { population: None },
    }];
    assert!(cfg.validate().is_err());
}
