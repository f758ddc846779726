import logging

from dotenv import load_dotenv

from app.config import LOG_LEVEL

# Load environment variables
load_dotenv()

# Configure logging
logging.basicConfig(
    level=LOG_LEVEL,
    format='ts=%(asctime)s level=%(levelname)s logger=%(name)s %(message)s'
)

# Register command routes
from app.routes.cli import cli  # noqa: E402

if __name__ == '__main__':
    cli(obj={})
