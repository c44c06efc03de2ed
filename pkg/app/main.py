import setproctitle

from app.cli import cli
from app.core.config import settings


def main():
    # Set process name
    setproctitle.setproctitle(settings.PROJECT_NAME)
    cli()


if __name__ == "__main__":
    main()
