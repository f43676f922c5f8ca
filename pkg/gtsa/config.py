# Copyright 2026, the gtsa authors, All Rights Reserved
from pathlib import Path

_THIS_DIR = Path(__file__).parent


class GTSAConfig:
    CASES_PATH = _THIS_DIR / 'cases'
    CASE_ALIASES = {
        '39bus': 'ieee39.yaml',
        '9bus': 'ieee9.yaml',
        '2bus': 'two_bus.yaml',
        'smib': 'smib.yaml',
    }

    NOMINAL_FREQUENCY = 60.0

    POWER_FLOW_TOLERANCE = 1e-8
    POWER_FLOW_MAX_ITER = 20

    TDS_STEP = 0.005
    TDS_HORIZON = 10.0
    # Separations beyond this (degrees) are reported as this value.
    SEPARATION_SATURATION = 1e4

    LOAD_FACTOR_RANGE = (0.8, 1.2)
    CLEAR_TIME_RANGE = (1.0 / 60.0, 1.0 / 6.0)
    SCENARIO_RETRIES = 20

    HIDDEN_WIDTH = 64
    GIN_LAYERS = 4
    LEARNING_RATE = 1e-3
    BATCH_SIZE = 32
    EPOCHS = 100
    FOLDS = 10
    VALIDATION_SHARE = 0.1
    # Kaiming-uniform bound is INIT_GAIN * sqrt(6 / fan_in)
    INIT_GAIN = 1.0

    JACOBI_MAX_SWEEPS = 100

    WORKERS = 1
