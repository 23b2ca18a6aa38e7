"""Small end-to-end run on synthetic EEG: train, predict, score, locate the change point.

Trains on four recordings so it finishes in about a minute.
The full seeded experiment lives in focalpredict.pipeline.run_synthetic_experiment.

    python3 demos/synthetic_walkthrough.py
"""

from focalpredict.pipeline import (
    SyntheticSetup, build_report, desk_config, evaluate_tensor, kl_change_point,
    synthetic_tensors, train_model,
)

setup = SyntheticSetup(n_train=4, n_test=2)
config = desk_config()

train = synthetic_tensors(setup, "train", config)
params, history = train_model(train, config)
print(f"trained {history.best_pass} passes, validation loss {history.best_val_loss:.3f}")

results = []
for tensor in synthetic_tensors(setup, "test", config):
    r = evaluate_tensor(params, tensor, config)
    results.append(r)
    cp = kl_change_point(params, tensor, config)
    lead = f"{r.score.prediction_time:.0f} s before onset" if r.score.predicted else "missed"
    print(f"{tensor.recording_id}: {lead}, {len(r.score.false_alarm_times)} false alarms, "
          f"KL change point {cp.detection_time} s "
          f"(transition at {setup.onset_time - setup.transition_lead:.0f} s)")

print(build_report(results, config).to_json())
