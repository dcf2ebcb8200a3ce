//! Training, checkpointing and imputation end to end on small synthetic data.

mod common;

use chargefill::evaluation::{predict_windows, Imputer};
use chargefill::model::checkpoint;
use chargefill::pipeline::{checkpoint_meta, from_checkpoint_meta, prepare_run, train_run, PreparedRun};
use chargefill::prompting::PromptTemplate;
use chargefill::config::Config;

fn quick_config(epochs: usize) -> Config {
    let mut cfg = common::small_config();
    cfg.train.max_epochs = epochs;
    cfg.train.patience = epochs;
    cfg
}

fn prepared(cfg: &Config, series: &[chargefill::ingest::DailyDemandSeries]) -> PreparedRun {
    let contexts = common::contexts(series);
    let provider = cfg.embed.provider(cfg.seed).unwrap();
    prepare_run(cfg, series, &contexts, provider.as_ref(), None, &PromptTemplate::default()).unwrap()
}

#[test]
fn training_is_reproducible() {
    let cfg = quick_config(3);
    let series = common::weekly_series(2, 120, 1.0, 3);
    let a = train_run(&cfg, &prepared(&cfg, &series)).unwrap();
    let b = train_run(&cfg, &prepared(&cfg, &series)).unwrap();
    assert_eq!(a.model.params.flatten(), b.model.params.flatten());
    let elbo = |o: &chargefill::training::TrainOutcome| o.log.iter().map(|l| (l.train_elbo, l.val_elbo)).collect::<Vec<_>>();
    assert_eq!(elbo(&a), elbo(&b));

    let mut other = cfg.clone();
    other.seed += 1;
    let c = train_run(&other, &prepared(&other, &series)).unwrap();
    assert_ne!(a.model.params.flatten(), c.model.params.flatten());
}

#[test]
fn kl_weight_restrains_the_posterior() {
    let series = common::weekly_series(2, 200, 1.0, 4);
    let mut free = quick_config(6);
    free.train.theta = 0.0;
    let mut weighted = free.clone();
    weighted.train.theta = 1.0;
    let kl_free = train_run(&free, &prepared(&free, &series)).unwrap().log.last().unwrap().train_kl;
    let kl_weighted = train_run(&weighted, &prepared(&weighted, &series)).unwrap().log.last().unwrap().train_kl;
    assert!(kl_free > kl_weighted, "KL without weight {kl_free} vs with {kl_weighted}");
}

#[test]
fn checkpoint_restores_predictions() {
    let cfg = quick_config(2);
    let series = common::weekly_series(3, 90, 1.0, 5);
    let run = prepared(&cfg, &series);
    let out = train_run(&cfg, &run).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    checkpoint::save(&out.model, &checkpoint_meta(&cfg, &run.stations), &path).unwrap();
    let (model, meta) = checkpoint::load(&path).unwrap();
    let (cfg_back, stations) = from_checkpoint_meta(&meta).unwrap();
    assert_eq!(cfg_back, cfg);
    assert_eq!(stations, run.stations);
    assert_eq!(
        predict_windows(&model, &run.test).unwrap(),
        predict_windows(&out.model, &run.test).unwrap()
    );
}

#[test]
fn imputation_fills_every_gap_and_keeps_observations() {
    let cfg = quick_config(3);
    let full = common::weekly_series(2, 150, 1.0, 6);
    let masks = common::blocky_masks(2, 150, 0.05, 0.5, 7);
    let gappy = common::apply_gaps(&full, &masks);
    let contexts = common::contexts(&gappy);
    let provider = cfg.embed.provider(cfg.seed).unwrap();
    let template = PromptTemplate::default();
    let run = prepare_run(&cfg, &gappy, &contexts, provider.as_ref(), None, &template).unwrap();
    let out = train_run(&cfg, &run).unwrap();
    let imputer = Imputer {
        model: &out.model,
        stations: &run.stations,
        corpus: &run.corpus,
        provider: provider.as_ref(),
        contexts: &contexts,
        template: &template,
        rag: cfg.rag,
    };
    for s in &gappy {
        let r = imputer.impute(s).unwrap();
        assert_eq!(r.days.len(), s.len());
        assert_eq!(r.imputed_count(), s.missing.iter().filter(|&&m| m).count());
        assert!(r.unreachable.is_empty());
        for (i, d) in r.days.iter().enumerate() {
            assert_eq!(d.date, s.date(i));
            assert_eq!(d.was_imputed, s.missing[i]);
            if s.missing[i] {
                assert!(d.value.unwrap() >= 0.0);
                assert!(d.variance.unwrap() > 0.0);
            } else {
                assert_eq!(d.value, Some(s.demand[i]));
            }
        }
        assert_eq!(imputer.impute(s).unwrap(), r);
    }
}
