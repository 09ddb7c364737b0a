"""Configuration constants for the safe-discharge toolkit."""

TOOL_NAME = 'safedischarge'
TOOL_VERSION = '0.3.0'

DEFAULT_CONFIG_PATH = 'configs/default.yaml'
DEFAULT_OUTPUT_DIR = 'results'

# Logging settings
LOG_FILE = 'safedischarge.log'
LOG_LEVEL = 'INFO'
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

# Plant integration
PLANT_STEP = 0.1            # s, fixed RK4 inner step
PREDICT_MAX_STEP = 1.0      # s, RK4 sub-step used by the estimator's predict
SOC_SLACK = 0.01            # estimate may leave [0, 1] by this much

# State scaling [SoC, V1, Ts, Tc] for all set computations
STATE_SCALE = (1.0, 0.1, 10.0, 10.0)

# Discharge scheme constants
CC_CURRENT = 40.0           # A
CV_CUTOFF_VOLTAGE = 3.45    # V
CV_KP = 50.0
CV_KI = 10.0
CT_KP = 60.0
CT_KI = 0.0061
U_MAX = 40.0                # A
T_MAX = 40.0                # degC
SOE_STOP = 1e-3

# Dynamic programming
DP_WEIGHTS = (1e5, 1e-5, 10.0, 1e-5)
DP_HORIZON = 4 * 3600.0     # s

# Robust MPC
MPC_HORIZON = 10
MPC_OUTPUT_WEIGHT = (1e4, 1e4)
MPC_INPUT_WEIGHT = 1.0
MPC_RATE_LIMIT = 1.0        # A per step
MPC_MAX_CAP_FALLBACKS = 10  # consecutive capped QPs before the controller faults
LQR_STATE_WEIGHT = (1e6, 1.0, 1.0, 100.0)
LQR_INPUT_WEIGHT = 1.0

# Invariant sets
RPI_EPSILON = 1e-3
RPI_MAX_STEPS = 200
RPI_CLOSURE_ROUNDS = 25
RPI_VERIFY_TOL = 1e-8
DISTURBANCE_INFLATION = 0.10
DISTURBANCE_FLOOR = 1e-6

# QP solver
QP_EPS_ABS = 1e-6
QP_EPS_REL = 1e-6
QP_MAX_ITER = 20000

# Benchmark
BENCHMARK_WORKERS = 5
SIM_TIMEOUT = 8 * 3600.0    # s

# Default cell (40 Ah, single RC pair, two-node thermal)
CELL_CAPACITY = 40.0        # Ah
CELL_R0 = 0.005             # Ohm
CELL_R1 = 0.0025            # Ohm
CELL_C1 = 10000.0           # F
CELL_R_U = 1.5              # K/W, surface to ambient
CELL_R_C = 2.0              # K/W, core to surface
CELL_C_S = 120.0            # J/K
CELL_C_C = 80.0             # J/K
T_AMBIENT = 20.0            # degC
OCV_CURVE = (
    (0.0, 3.00), (0.1, 3.45), (0.2, 3.55), (0.3, 3.62), (0.4, 3.67), (0.5, 3.72),
    (0.6, 3.79), (0.7, 3.87), (0.8, 3.95), (0.9, 4.06), (1.0, 4.20),
)

# Nominal-energy calibration
EN_CUTOFF_C_RATE = 1.0 / 20.0
EN_CALIBRATION_DT = 1.0     # s
