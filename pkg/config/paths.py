import os

BASE_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
DATA_DIR = os.path.join(BASE_DIR, "data")

# 案例表与测试夹具
CASE_TABLES_PATH = os.path.join(DATA_DIR, "case_tables.json")
FIXTURES_DIR = os.path.join(DATA_DIR, "fixtures")

# 输出目录（证书、报告、日志）
OUTPUTS_DIR = os.path.join(BASE_DIR, "outputs")
CERTIFICATES_DIR = os.path.join(OUTPUTS_DIR, "certificates")
REPORTS_DIR = os.path.join(OUTPUTS_DIR, "reports")
LOGS_DIR = os.path.join(BASE_DIR, "logs")


def get_fixture_path(name: str) -> str:
    """
    获取夹具文件路径

    Args:
        name (str): 夹具名称，可省略 .json 后缀

    Returns:
        str: 夹具文件路径
    """
    if not name.endswith(".json"):
        name = f"{name}.json"
    return os.path.join(FIXTURES_DIR, name)


def get_report_path(name: str) -> str:
    """
    获取报告文件路径，必要时创建目录

    Args:
        name (str): 报告名称

    Returns:
        str: 报告文件路径
    """
    os.makedirs(REPORTS_DIR, exist_ok=True)
    return os.path.join(REPORTS_DIR, f"{name}.json")


def get_certificate_path(name: str) -> str:
    os.makedirs(CERTIFICATES_DIR, exist_ok=True)
    return os.path.join(CERTIFICATES_DIR, f"{name}.json")
