# config.py: Configuration for the IC / DBM engine and its measurement harness

# ------------------------------------------------------------------
# 🧱 Object model
WORD_SIZE                   = 8     # Bytes per slot word (the "8" scale of the indexed load)
HEADER_WORDS                = 2     # Words ahead of the inline slots: header, hidden-class id
UNDEFINED_WORD              = 0xFFFF_FFFF_FFFF_FFFF   # Value of a read that finds nothing

# ------------------------------------------------------------------
# 🔍 Instruction analysis
WINDOW_MAX                  = 8     # Instructions scanned from an IC label
MAX_INSN_LENGTH             = 15    # Architectural limit for one x86_64 instruction
DEFAULT_PAGE_SIZE           = 4096  # Used by PageGuard when the host page size is unknown

# ------------------------------------------------------------------
# 🧪 Benchmark protocol
DEFAULT_REPS                = 50    # Runs per level and scenario
ALPHA                       = 0.05  # Welch significance threshold
CALIBRATION_TARGET_S        = 2.0   # Long mode: each rep runs at least this long
SHORT_TARGET_S              = 0.05  # Short mode: overhead run target
CALIBRATION_MAX_PASSES      = 1_000_000
WARMUP_FRACTION             = 0.01  # Share of wall time that counts as warmup on the timeline
RESIDUAL_FRACTION           = 0.99  # Events after this share of wall time count as residual

# ------------------------------------------------------------------
# ⚙️ Level selection
DBM_LEVEL_ENV               = "IC_DBM_LEVEL"         # Exactly one character: 0, 1, 2 or b
DBM_LEVELS                  = ("0", "1", "2", "b")

# ------------------------------------------------------------------
# 🧬 Native scenarios
SCENARIO_OBJECTS            = 4096  # Objects walked per pass
KSHAPE_COUNT                = 4     # Shapes rotated by the k-shape scenario
KSHAPE_BLOCK                = 16    # Consecutive objects sharing one shape in k-shape
RESIDUAL_TAIL               = 5     # Late objects with fresh shapes in the residual scenario
REGION_CODE_PAGES           = 4
REGION_DATA_PAGES           = 1

# ------------------------------------------------------------------
# 📂 Data paths
RUNS_DIR                    = "runs"      # bench writes one JSON file per (scenario, level)
REPORT_DIR                  = "reports"   # report writes one CSV per research question
CORPUS_DIR                  = "corpus"    # shipped fixture corpus
REPORT_SCHEMA               = "ic-dbm-report v1"
