from engine.utils.logger_util import get_logger, LogSetup

logger = get_logger("engine_logger", log_path=LogSetup().log_dir() / "engine.log", console=False)
