import os
from pathlib import Path
from typing import Dict

from lumino.stream_cert.harness import ExperimentConfig


def acceptance_config(output_dir: Path, seed: int = 0) -> ExperimentConfig:
    """Desk-scale end-to-end run: 3 classes, D=4, t=300, augmented MLP1, sigma=1, w=2"""
    return ExperimentConfig(
        tag='acceptance',
        seed=seed,
        output_dir=str(output_dir),
        num_classes=3,
        num_features=4,
        length=300,
        w=2,
        smoothing='gaussian',
        sigma=1.0,
        eps_grid=(0.0, 0.25, 0.5, 1.0),
        mc_reps=200,
        architecture='mlp1',
        augment=True,
        attack_mode='both',
        workers=int(os.getenv('SC_WORKERS') or 1),
    )


def read_outputs(output_dir: Path) -> Dict[str, bytes]:
    """Bytes of every results CSV in a directory, keyed by file name"""
    return {path.name: path.read_bytes() for path in sorted(Path(output_dir).glob('results_*.csv'))}
