"""Full model vs. plain backbone: TEXT/IMAGE split scores and retrieval."""
# %%
from pv2tea.data import DatasetConfig, build_vocabulary, generate_dataset
from pv2tea.experiments import evaluate_split, retrieval_on
from pv2tea.training import TrainConfig, train

config = DatasetConfig(n_samples=2000, seed=0)
train_set, test = generate_dataset(config)
vocab = build_vocabulary(config)
dims = dict(n_categories=config.n_categories, n_values=config.n_values, T_max=config.T_max)

# %%
for name, flags in [("full", {}), ("backbone", {"s1": False, "s2": False, "s3": False})]:
    cfg = TrainConfig(epochs=8, **flags)
    state = train(train_set, vocab, cfg, **dims).state
    report = evaluate_split(state, test, vocab, config.value_type, use_pruning=cfg.s2)
    text, image = report.splits["TEXT"].macro, report.splits["IMAGE"].macro
    print(f"{name:9s} F1 all {report.macro['F1']:.3f}  TEXT {text['F1']:.3f}  IMAGE {image['F1']:.3f}"
          f"  GAP {report.gap['F1']:+.3f}")
    r = retrieval_on(state, test[:200])
    print(f"{'':9s} T@1 {r['T@1']:.3f}  I@1 {r['I@1']:.3f}  (chance 0.005)")
