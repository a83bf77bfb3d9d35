"""Run the full search on the logistic-regression landscape and see whether
the discovered schedule beats any single constant learning rate."""

from autolrs.controller import SearchConfig
from autolrs.simtrainer import LogisticBlobs, SimModel, run_in_process, sgd_step

BUDGET = 20000

config = SearchConfig(budget_steps=BUDGET)
landscape = LogisticBlobs()

result = run_in_process(config, SimModel(landscape, seed=config.seed))
meta = result.record.metadata

print("stage  tau   source      chosen lr   forecast")
for stage in meta["stages"]:
    print(
        f"{stage['stage_index']:>5}  {stage['tau']:<5} "
        f"{stage['loss_source']:<11} {stage['chosen_lr']:<11.5g} "
        f"{stage['forecast']:.5g}"
    )
print(f"\nexploration steps {meta['exploration_steps']}, "
      f"applied steps {meta['applied_steps']}, "
      f"stopped: {meta['stopped_reason']}")

schedule_loss = result.trainer.model.validation_loss(None)
print(f"\nfinal validation loss with the searched schedule: {schedule_loss:.5f}")

for lr in (config.lr_min, 0.05, config.lr_max):
    model = SimModel(landscape, seed=config.seed)
    for _ in range(BUDGET):
        sgd_step(model, lr)
    print(f"constant lr={lr:<6g} -> {model.validation_loss(None):.5f}")
