import matplotlib.pyplot as plt

from terraincl.experiment import RunConfig, run

cfg = RunConfig(scenario='easy2hard', seed=1, phase_length=20, num_train_agents=64, agents_per_terrain_val=16,
                out_dir='runs_example')
cfg.env.backend = 'surrogate'
cfg.policy.hidden_sizes = (64, 64)

artifacts = run(cfg)
matrix = artifacts.matrix
print(artifacts.run_dir)
for metric, value in artifacts.report.summary().items():
    print(f'mean {metric}: {value:.3f}')

fig, ax = plt.subplots(figsize=(10, 5))
bounds = [0, *matrix.change_points, matrix.num_iterations]
for phase, (start, end) in enumerate(zip(bounds[:-1], bounds[1:])):
    if phase % 2:
        ax.axvspan(start, end, color='0.92', zorder=0)

for name in matrix.names:
    ax.plot(matrix.column(name), label=name)

ax.set_xlabel('iteration')
ax.set_ylabel('validation reward (moving average)')
ax.set_title(cfg.scenario)
ax.legend(loc='lower right', fontsize='small', ncol=2)
plt.show()
