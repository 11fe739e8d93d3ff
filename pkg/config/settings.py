import os
from dotenv import load_dotenv
load_dotenv()

class Settings:
    DEFAULT_MODULUS = int(os.getenv("MODCSP_DEFAULT_MODULUS", 2))
    SEED = int(os.getenv("MODCSP_SEED", 42))
    N_JOBS = int(os.getenv("MODCSP_N_JOBS", 1))

    LOG_DIR = os.getenv("MODCSP_LOG_DIR", "")

    # 枚举保护阈值
    AUTOS_GUARD = int(os.getenv("MODCSP_AUTOS_GUARD", 10 ** 7))
    MOBIUS_MAX_BASE = int(os.getenv("MODCSP_MOBIUS_MAX_BASE", 8))
    POLY_MAX_SOLUTIONS = int(os.getenv("MODCSP_POLY_MAX_SOLUTIONS", 200000))
    M_AUTOS_GUARD = int(os.getenv("MODCSP_M_AUTOS_GUARD", 10 ** 6))
    SYM_CAP = int(os.getenv("MODCSP_SYM_CAP", 8))
    KILL_CHECK_MAX_TUPLES = int(os.getenv("MODCSP_KILL_CHECK_MAX_TUPLES", 512))

settings = Settings()
