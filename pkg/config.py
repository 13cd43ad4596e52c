import os
from dotenv import load_dotenv

# Ensure environment variables are loaded from the .env file
load_dotenv()


class Config:
    """Process-level configuration"""

    # ------------------------------------------------------------------------
    ## LOGGING
    # ------------------------------------------------------------------------
    LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO').upper()

    # ------------------------------------------------------------------------
    ## RUN CONFIGURATION DEFAULTS
    # ------------------------------------------------------------------------
    # JSON run-config file used when --config is not given
    DEFAULT_CONFIG_PATH = os.getenv('REPLYSENT_CONFIG')
    DEFAULT_OUT_DIR = os.getenv('REPLYSENT_OUT_DIR', 'outputs')

    # ------------------------------------------------------------------------
    ## PREDICTION
    # ------------------------------------------------------------------------
    PREDICT_BATCH_SIZE = int(os.getenv('PREDICT_BATCH_SIZE', 64))
