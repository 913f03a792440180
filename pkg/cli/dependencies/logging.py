from engine.utils.logger_util import get_logger, LogSetup

logger = get_logger("cli_logger", log_path=LogSetup().log_dir() / "cli.log", console=True)
