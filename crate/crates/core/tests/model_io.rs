use std::io::Write;

use plcopula::conditional::{fit_composite, CompositeConfig, MarginalSpec};
use plcopula::data::build_order;
use plcopula::dpm::{DpmSpec, GibbsConfig};
use plcopula::model_io::{read_model, write_model, StoredModel};
use plcopula::pl::{GaussianPrior, MhConfig};
use plcopula::polya_tree::{BaseDistribution, PolyaTreeSpec};
use plcopula::simgen::{gen_census_like, gen_mixture3};

fn specs() -> Vec<MarginalSpec> {
    vec![
        MarginalSpec::Ecdf,
        MarginalSpec::Bootstrap,
        MarginalSpec::PolyaTree(PolyaTreeSpec::new(BaseDistribution::Laplace { loc: 9.0, scale: 5.0 })),
        MarginalSpec::Dpm {
            spec: DpmSpec {
                mu1: 9.0,
                ..DpmSpec::default()
            },
            gibbs: GibbsConfig {
                n_iter: 60,
                burn_in: 20,
                thin: 10,
                ..GibbsConfig::default()
            },
        },
    ]
}

#[test]
fn every_marginal_survives_a_disk_round_trip() {
    let data = gen_mixture3(150, 0.25, 1).unwrap();
    let order = build_order(data.y(), 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for (i, spec) in specs().into_iter().enumerate() {
        let config = CompositeConfig {
            mh: (i == 1).then_some(MhConfig {
                n_samples: 50,
                burn_in: 10,
                thin: 1,
                seed: 3,
            }),
            ..CompositeConfig::default()
        };
        let model = fit_composite(&data, &order, &spec, &GaussianPrior::isotropic(1, 0.0, 1.0), &config).unwrap();
        let stored = StoredModel {
            model,
            feature_names: data.feature_names().to_vec(),
            schema: None,
        };
        let path = dir.path().join(format!("model{i}.txt"));
        std::fs::File::create(&path).unwrap().write_all(write_model(&stored).as_bytes()).unwrap();
        let back = read_model(&std::fs::read_to_string(&path).unwrap()).unwrap();

        assert_eq!(back.feature_names, stored.feature_names);
        assert_eq!(back.model.pl(), stored.model.pl());
        assert_eq!(back.model.fx(), stored.model.fx());
        for y in [-2.0, 3.3, 9.0, 15.1] {
            assert_eq!(back.model.marginal().cdf(y), stored.model.marginal().cdf(y));
            assert_eq!(back.model.conditional_cdf(&[7.0], y).unwrap(), stored.model.conditional_cdf(&[7.0], y).unwrap());
        }
        // The text form is a fixed point.
        assert_eq!(write_model(&back), write_model(&stored));
    }
}

#[test]
fn schema_is_carried_along() {
    let sim = gen_census_like(300, 2, 3).unwrap();
    let data = &sim.dataset;
    let order = build_order(data.y(), 0).unwrap();
    let model = fit_composite(
        data,
        &order,
        &MarginalSpec::Ecdf,
        &GaussianPrior::isotropic(data.p(), 0.0, 1.0),
        &CompositeConfig::default(),
    )
    .unwrap();
    let stored = StoredModel {
        model,
        feature_names: data.feature_names().to_vec(),
        schema: Some(sim.schema.clone()),
    };
    let back = read_model(&write_model(&stored)).unwrap();
    assert_eq!(back, stored);
}

#[test]
fn damaged_files_are_rejected() {
    let data = gen_mixture3(50, 0.25, 2).unwrap();
    let order = build_order(data.y(), 0).unwrap();
    let model = fit_composite(&data, &order, &MarginalSpec::Ecdf, &GaussianPrior::isotropic(1, 0.0, 1.0), &CompositeConfig::default()).unwrap();
    let text = write_model(&StoredModel {
        model,
        feature_names: vec!["x".into()],
        schema: None,
    });
    assert!(read_model("").is_err());
    assert!(read_model(&text.replacen("plcopula-model 1", "plcopula-model 9", 1)).is_err());
    assert!(read_model(&text[..text.len() / 2]).is_err());
    assert!(read_model(&text.replace("[end]", "")).is_err());
}
